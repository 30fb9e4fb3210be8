//! Batch evaluation: run a regime over a corpus, aggregate, write reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentKind, AgentProfile, Builder, ProcessBuilder};
use crate::clarify::{run_episode, EpisodeOptions, EpisodeRecord, LoopConfig, LoopError, Regime};
use crate::codec::ParseMode;
use crate::corpus::{generate_synthetic, read_corpus, CorpusError, Episode, ShapeKind, Split};
use crate::help::{Bank, HelpContext, HelpError, HelpKind, TemplateBank};
use crate::metrics::{aggregate, report_csv, report_table, EpisodeScore, MetricsError, MistakeRule, ReportRow, Stat};
use crate::regions::{RegionScheme, SchemeKind};
use crate::world::GridBounds;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Help(#[from] HelpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid run spec: {0}")]
    Spec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where episodes come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSpec {
    /// An episode store (`episodes.jsonl`, or the directory holding it).
    Path { path: PathBuf },
    Synthetic {
        seed: u64,
        episodes: usize,
        #[serde(default)]
        shapes: Vec<ShapeKind>,
    },
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::Synthetic {
            seed: 0,
            episodes: 500,
            shapes: Vec::new(),
        }
    }
}

/// One evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub corpus: CorpusSpec,
    /// Only evaluate this split; `None` evaluates every episode.
    pub split: Option<Split>,
    pub agent: AgentProfile,
    /// Run an external builder process instead of the simulated agent.
    pub builder_command: Option<Vec<String>>,
    pub regime: Regime,
    pub scheme: RegionScheme,
    /// Template language used for help; the held-out test bank by default.
    pub bank: Bank,
    /// Replace the built-in templates with a JSON template file.
    pub templates: Option<PathBuf>,
    pub seed: u64,
    pub parse_mode: ParseMode,
    pub mistake_rule: MistakeRule,
    pub output_dir: Option<PathBuf>,
    /// Report label; defaults to the regime's name.
    pub label: Option<String>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            split: None,
            agent: AgentProfile::new(AgentKind::HelpAwareNoisy, Default::default(), 0),
            builder_command: None,
            regime: Regime::NoHelp,
            scheme: RegionScheme::default(),
            bank: Bank::Test,
            templates: None,
            seed: 0,
            parse_mode: ParseMode::Lenient,
            mistake_rule: MistakeRule::Improvement,
            output_dir: None,
            label: None,
        }
    }
}

impl RunSpec {
    pub fn load_episodes(&self) -> Result<Vec<Episode>, EvalError> {
        let episodes = match &self.corpus {
            CorpusSpec::Path { path } => read_corpus(path)?.0,
            CorpusSpec::Synthetic { seed, episodes, shapes } => {
                if *episodes == 0 {
                    return Err(EvalError::Spec("synthetic corpus needs at least one episode".into()));
                }
                generate_synthetic(*seed, *episodes, shapes, GridBounds::default())
            }
        };
        let episodes: Vec<Episode> = match self.split {
            Some(split) => episodes.into_iter().filter(|e| e.split == split).collect(),
            None => episodes,
        };
        if episodes.is_empty() {
            return Err(EvalError::Spec("no episodes to evaluate".into()));
        }
        Ok(episodes)
    }

    pub fn help_context(&self) -> Result<HelpContext, EvalError> {
        let templates = match &self.templates {
            Some(path) => TemplateBank::from_json(&fs::read_to_string(path).map_err(io_err(path))?)?,
            None => TemplateBank::builtin(),
        };
        Ok(HelpContext {
            scheme: self.scheme,
            bounds: GridBounds::default(),
            templates: Arc::new(templates),
            bank: self.bank,
        })
    }

    pub fn builder(&self) -> Result<Box<dyn Builder>, EvalError> {
        match &self.builder_command {
            Some(cmd) => {
                let (program, args) = cmd
                    .split_first()
                    .ok_or_else(|| EvalError::Spec("builder_command is empty".into()))?;
                Ok(Box::new(ProcessBuilder::spawn(program, args)?))
            }
            None => Ok(Box::new(self.agent.build(self.scheme)?)),
        }
    }

    pub fn options(&self) -> EpisodeOptions {
        EpisodeOptions {
            seed: self.seed,
            parse_mode: self.parse_mode,
            mistake_rule: self.mistake_rule,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.regime.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub row: ReportRow,
    pub records: Vec<EpisodeRecord>,
}

impl RunOutput {
    pub fn scores(&self) -> Vec<EpisodeScore> {
        self.records.iter().map(|r| r.score).collect()
    }
}

/// Runs every episode under the spec's regime and aggregates. Episodes run
/// in parallel; results keep corpus order.
pub fn evaluate(spec: &RunSpec, episodes: &[Episode], builder: &dyn Builder) -> Result<RunOutput, EvalError> {
    let ctx = spec.help_context()?;
    let options = spec.options();
    let records: Vec<EpisodeRecord> = episodes
        .par_iter()
        .map(|e| run_episode(builder, &ctx, e, &spec.regime, &options))
        .collect::<Result<_, _>>()?;
    let scores: Vec<EpisodeScore> = records.iter().map(|r| r.score).collect();
    Ok(RunOutput {
        row: aggregate(&spec.label(), &scores)?,
        records,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

pub fn traces_jsonl(records: &[EpisodeRecord]) -> String {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.write_all(b"\n").expect("in-memory write");
    }
    String::from_utf8(out).expect("utf-8")
}

/// Evaluates the spec and, when `output_dir` is set, writes `report.csv`,
/// `report.txt` and `traces.jsonl` there.
pub fn run_eval(spec: &RunSpec) -> Result<RunOutput, EvalError> {
    let episodes = spec.load_episodes()?;
    let builder = spec.builder()?;
    let output = evaluate(spec, &episodes, builder.as_ref())?;
    if let Some(dir) = &spec.output_dir {
        let rows = std::slice::from_ref(&output.row);
        write_file(dir, "report.csv", &report_csv(rows))?;
        write_file(dir, "report.txt", &report_table(rows))?;
        write_file(dir, "traces.jsonl", &traces_jsonl(&output.records))?;
    }
    Ok(output)
}

/// Reruns a restrictive-help spec once per region scheme; one row per scheme.
/// Writes `ablation.csv` and `ablation.txt` when `output_dir` is set.
pub fn run_ablation_regions(spec: &RunSpec, schemes: &[SchemeKind]) -> Result<Vec<ReportRow>, EvalError> {
    let restrictive = match &spec.regime {
        Regime::OracleHelp { kind } | Regime::SelfHelp { kind, .. } => *kind == HelpKind::Restrictive,
        _ => false,
    };
    if !restrictive {
        return Err(EvalError::Spec("region ablation needs a restrictive-help regime".into()));
    }
    let episodes = spec.load_episodes()?;
    let mut rows = Vec::with_capacity(schemes.len());
    for &kind in schemes {
        let run = RunSpec {
            scheme: RegionScheme {
                kind,
                ..spec.scheme
            },
            label: Some(format!("{} regions", kind.region_count())),
            ..spec.clone()
        };
        let builder = run.builder()?;
        rows.push(evaluate(&run, &episodes, builder.as_ref())?.row);
    }
    if let Some(dir) = &spec.output_dir {
        write_file(dir, "ablation.csv", &report_csv(&rows))?;
        write_file(dir, "ablation.txt", &report_table(&rows))?;
    }
    Ok(rows)
}

/// Threshold sweep used when none is given: −1 forces a question, +∞ never asks.
pub fn default_sweep() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, f64::INFINITY]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub threshold: f64,
    /// Fraction of episodes where the evaluated agent was asked a question.
    pub question_rate: f64,
    /// The same fraction for an oracle builder, which drives the choice.
    pub oracle_question_rate: f64,
    pub reward: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub chosen: f64,
    pub curve: Vec<CalibrationPoint>,
}

/// Largest oracle question rate a calibrated threshold may produce.
pub const MAX_ORACLE_QUESTION_RATE: f64 = 0.5;

fn question_rate(records: &[EpisodeRecord]) -> f64 {
    let asked = records
        .iter()
        .filter(|r| r.loop_trace.as_ref().is_some_and(|t| t.asked()))
        .count();
    asked as f64 / records.len() as f64
}

/// Sweeps the clarification threshold. The chosen value is the smallest one
/// at which an oracle builder is asked in at most half of the episodes.
/// Writes `calibration.csv` when `output_dir` is set.
pub fn calibrate_threshold(spec: &RunSpec, sweep: &[f64]) -> Result<Calibration, EvalError> {
    let Regime::Clarify { config, answers } = &spec.regime else {
        return Err(EvalError::Spec("threshold calibration needs the clarify regime".into()));
    };
    if sweep.is_empty() {
        return Err(EvalError::Spec("empty threshold sweep".into()));
    }
    let mut sweep = sweep.to_vec();
    sweep.sort_by(f64::total_cmp);
    let episodes = spec.load_episodes()?;
    let builder = spec.builder()?;
    let oracle = AgentProfile::oracle().build(spec.scheme)?;
    let mut curve = Vec::with_capacity(sweep.len());
    for &threshold in &sweep {
        let run = RunSpec {
            regime: Regime::Clarify {
                config: LoopConfig {
                    threshold,
                    ..config.clone()
                },
                answers: *answers,
            },
            ..spec.clone()
        };
        let agent = evaluate(&run, &episodes, builder.as_ref())?;
        let reference = evaluate(&run, &episodes, &oracle)?;
        curve.push(CalibrationPoint {
            threshold,
            question_rate: question_rate(&agent.records),
            oracle_question_rate: question_rate(&reference.records),
            reward: agent.row.reward,
        });
    }
    let chosen = curve
        .iter()
        .find(|p| p.oracle_question_rate <= MAX_ORACLE_QUESTION_RATE)
        .map(|p| p.threshold)
        .unwrap_or(f64::INFINITY);
    let calibration = Calibration { chosen, curve };
    if let Some(dir) = &spec.output_dir {
        write_file(dir, "calibration.csv", &calibration_csv(&calibration))?;
    }
    Ok(calibration)
}

pub fn calibration_csv(calibration: &Calibration) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "question_rate", "oracle_question_rate", "reward_mean", "reward_std", "chosen"])
        .expect("in-memory write");
    for p in &calibration.curve {
        w.write_record([
            p.threshold.to_string(),
            format!("{:.4}", p.question_rate),
            format!("{:.4}", p.oracle_question_rate),
            format!("{:.4}", p.reward.mean),
            format!("{:.4}", p.reward.std),
            (p.threshold == calibration.chosen).to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
