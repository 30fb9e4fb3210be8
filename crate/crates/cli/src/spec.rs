//! Building a [`RunSpec`] from an optional config file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use helpgrid_core::agents::{default_predictor_accuracies, AgentKind};
use helpgrid_core::clarify::{LoopConfig, Regime};
use helpgrid_core::codec::ParseMode;
use helpgrid_core::corpus::{ShapeKind, Split};
use helpgrid_core::eval::{CorpusSpec, RunSpec};
use helpgrid_core::help::{Bank, HelpKind};
use helpgrid_core::metrics::MistakeRule;
use helpgrid_core::regions::SchemeKind;
use serde::de::DeserializeOwned;

/// Parses a snake_case serde enum, accepting `-` for `_`.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

pub fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    s.parse::<usize>()
        .ok()
        .and_then(SchemeKind::from_count)
        .ok_or_else(|| format!("unsupported region count {s:?}; use 4, 8 or 12"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegimeName {
    NoHelp,
    OracleHelp,
    SelfHelp,
    Clarify,
}

fn parse_regime(s: &str) -> Result<RegimeName, String> {
    match s.replace('_', "-").as_str() {
        "no-help" | "none" => Ok(RegimeName::NoHelp),
        "oracle-help" | "oracle" => Ok(RegimeName::OracleHelp),
        "self-help" | "self" => Ok(RegimeName::SelfHelp),
        "clarify" => Ok(RegimeName::Clarify),
        _ => Err(format!("unknown regime {s:?}; use no-help, oracle-help, self-help or clarify")),
    }
}

/// Run options shared by `eval`, `ablate-regions` and `calibrate-threshold`.
/// Flags override values from `--config`.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// TOML or JSON file with RunSpec fields.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Episode store (directory or episodes.jsonl).
    #[arg(long, conflicts_with = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Generate this many synthetic episodes instead of reading a corpus.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed for the synthetic corpus (defaults to --seed).
    #[arg(long, requires = "synthetic")]
    pub synthetic_seed: Option<u64>,
    /// Shape families for the synthetic corpus (comma separated).
    #[arg(long, value_delimiter = ',', requires = "synthetic")]
    pub shapes: Vec<ShapeKind>,
    /// Restrict to one split: train, valid or test.
    #[arg(long)]
    pub split: Option<Split>,
    /// Builder agent: oracle, noisy, help-aware-noisy or scripted.
    #[arg(long, value_parser = parse_enum::<AgentKind>)]
    pub agent: Option<AgentKind>,
    #[arg(long)]
    pub agent_seed: Option<u64>,
    /// External builder process speaking line-delimited JSON (program and args).
    #[arg(long, num_args = 1.., allow_hyphen_values = true, value_terminator = ";")]
    pub builder_command: Option<Vec<String>>,
    /// no-help, oracle-help, self-help or clarify.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<RegimeName>,
    /// Help kind for oracle-help and self-help; with clarify, the kinds tried.
    #[arg(long, value_delimiter = ',')]
    pub help_kind: Vec<HelpKind>,
    /// Self-help prediction accuracy (defaults per kind).
    #[arg(long)]
    pub accuracy: Option<f64>,
    /// Clarification threshold; `inf` never asks.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Region count: 4, 8 or 12.
    #[arg(long, value_parser = parse_scheme)]
    pub regions: Option<SchemeKind>,
    /// Template bank: train or test.
    #[arg(long, value_parser = parse_enum::<Bank>)]
    pub bank: Option<Bank>,
    /// JSON template file replacing the built-in templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// strict or lenient.
    #[arg(long, value_parser = parse_enum::<ParseMode>)]
    pub parse_mode: Option<ParseMode>,
    /// improvement or all-fixed.
    #[arg(long, value_parser = parse_enum::<MistakeRule>)]
    pub mistake_rule: Option<MistakeRule>,
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
}

/// Reads a RunSpec from TOML (`.toml`) or JSON (anything else).
pub fn read_spec(path: &Path) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let spec = if is_toml {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(spec)
}

fn single_kind(args: &RunArgs, current: Option<HelpKind>) -> Result<HelpKind> {
    match (args.help_kind.as_slice(), current) {
        ([kind], _) => Ok(*kind),
        ([], Some(kind)) => Ok(kind),
        ([], None) => bail!("this regime needs --help-kind"),
        _ => bail!("this regime takes exactly one --help-kind"),
    }
}

impl RunArgs {
    pub fn to_spec(&self) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => read_spec(path)?,
            None => RunSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(path) = &self.corpus {
            spec.corpus = CorpusSpec::Path { path: path.clone() };
        }
        if let Some(episodes) = self.synthetic {
            spec.corpus = CorpusSpec::Synthetic {
                seed: self.synthetic_seed.unwrap_or(spec.seed),
                episodes,
                shapes: self.shapes.clone(),
            };
        }
        if let Some(split) = self.split {
            spec.split = Some(split);
        }
        if let Some(kind) = self.agent {
            spec.agent.kind = kind;
        }
        if let Some(seed) = self.agent_seed {
            spec.agent.seed = seed;
        }
        if let Some(cmd) = &self.builder_command {
            spec.builder_command = Some(cmd.clone());
        }
        self.apply_regime(&mut spec)?;
        if let Some(kind) = self.regions {
            spec.scheme.kind = kind;
        }
        if let Some(bank) = self.bank {
            spec.bank = bank;
        }
        if let Some(path) = &self.templates {
            spec.templates = Some(path.clone());
        }
        if let Some(mode) = self.parse_mode {
            spec.parse_mode = mode;
        }
        if let Some(rule) = self.mistake_rule {
            spec.mistake_rule = rule;
        }
        if let Some(dir) = &self.output_dir {
            spec.output_dir = Some(dir.clone());
        }
        if let Some(label) = &self.label {
            spec.label = Some(label.clone());
        }
        Ok(spec)
    }

    fn apply_regime(&self, spec: &mut RunSpec) -> Result<()> {
        let current_kind = match &spec.regime {
            Regime::OracleHelp { kind } | Regime::SelfHelp { kind, .. } => Some(*kind),
            _ => None,
        };
        let name = match (self.regime, &spec.regime) {
            (Some(name), _) => name,
            (None, Regime::NoHelp) => RegimeName::NoHelp,
            (None, Regime::OracleHelp { .. }) => RegimeName::OracleHelp,
            (None, Regime::SelfHelp { .. }) => RegimeName::SelfHelp,
            (None, Regime::Clarify { .. }) => RegimeName::Clarify,
        };
        spec.regime = match name {
            RegimeName::NoHelp => {
                if !self.help_kind.is_empty() || self.accuracy.is_some() || self.threshold.is_some() {
                    bail!("--help-kind, --accuracy and --threshold need a help regime");
                }
                Regime::NoHelp
            }
            RegimeName::OracleHelp => Regime::OracleHelp {
                kind: single_kind(self, current_kind)?,
            },
            RegimeName::SelfHelp => {
                let kind = single_kind(self, current_kind)?;
                let accuracy = match (self.accuracy, &spec.regime) {
                    (Some(a), _) => a,
                    (None, Regime::SelfHelp { kind: k, accuracy }) if *k == kind => *accuracy,
                    _ => default_predictor_accuracies()[&kind],
                };
                Regime::SelfHelp { kind, accuracy }
            }
            RegimeName::Clarify => {
                let (mut config, answers) = match &spec.regime {
                    Regime::Clarify { config, answers } => (config.clone(), *answers),
                    _ => (LoopConfig::default(), Default::default()),
                };
                if let Some(t) = self.threshold {
                    config.threshold = t;
                }
                if !self.help_kind.is_empty() {
                    config.help_kinds = self.help_kind.clone();
                }
                Regime::Clarify { config, answers }
            }
        };
        if !matches!(name, RegimeName::SelfHelp) && self.accuracy.is_some() {
            bail!("--accuracy only applies to the self-help regime");
        }
        if !matches!(name, RegimeName::Clarify) && self.threshold.is_some() {
            bail!("--threshold only applies to the clarify regime");
        }
        Ok(())
    }
}
