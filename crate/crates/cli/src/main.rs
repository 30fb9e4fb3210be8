//! `helpgrid`: batch evaluation, ablations, corpus tools and the session server.

mod spec;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use helpgrid_core::agents::{AgentKind, AgentProfile, NoiseProfile};
use helpgrid_core::codec::ParseMode;
use helpgrid_core::corpus::{
    generate_synthetic, import_iglu, index_by_id, read_corpus, split, write_corpus, CorpusSourceKind, ImportOptions,
    ShapeKind, Split,
};
use helpgrid_core::eval::{
    calibrate_threshold, calibration_csv, default_sweep, run_ablation_regions, run_eval,
};
use helpgrid_core::help::HelpContext;
use helpgrid_core::metrics::{report_table, MistakeRule};
use helpgrid_core::regions::{RegionScheme, SchemeKind};
use helpgrid_core::GridBounds;
use helpgrid_service::{ServiceConfig, SessionManager};

use crate::spec::{parse_enum, parse_scheme, RunArgs};

#[derive(Parser, Debug)]
#[command(name = "helpgrid", version, about = "Help-feedback and clarification harness for a block-building task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one regime; prints the report row and writes report.csv, report.txt, traces.jsonl.
    Eval(RunArgs),
    /// Rerun a restrictive-help spec once per region scheme.
    AblateRegions {
        #[command(flatten)]
        run: RunArgs,
        /// Region counts to compare.
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme, default_value = "4,8,12")]
        schemes: Vec<SchemeKind>,
    },
    /// Sweep the clarification threshold and pick one.
    CalibrateThreshold {
        #[command(flatten)]
        run: RunArgs,
        /// Thresholds to try (comma separated; `inf` allowed).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sweep: Vec<f64>,
    },
    /// Convert an upstream dataset into an episode store.
    Import {
        #[arg(long, value_enum)]
        source_format: SourceFormat,
        /// Source file or directory of JSON files.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for episodes.jsonl and manifest.json.
        #[arg(long, short)]
        output: PathBuf,
        /// Shift 0-based source x/z indices so the grid is centred on the origin.
        #[arg(long)]
        recenter: bool,
        /// Split for records that name none.
        #[arg(long, default_value = "train")]
        default_split: Split,
    },
    /// Write a procedurally generated episode store.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// Shape families (comma separated); all by default.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<ShapeKind>,
        /// Train, valid and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run the interactive session HTTP API.
    Serve {
        #[arg(long, env = "HELPGRID_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Episode store addressable by `corpus_id`.
        #[arg(long, env = "HELPGRID_CORPUS")]
        corpus: Option<PathBuf>,
        /// Directory of web UI files served at `/`.
        #[arg(long, env = "HELPGRID_STATIC_DIR")]
        static_dir: Option<PathBuf>,
        /// Finished sessions are appended to `sessions.jsonl` here.
        #[arg(long, env = "HELPGRID_TRACE_DIR")]
        trace_dir: Option<PathBuf>,
        /// Seconds of inactivity before a session expires.
        #[arg(long, default_value_t = 1800)]
        idle_timeout: u64,
        /// Default builder agent for new sessions.
        #[arg(long, value_parser = parse_enum::<AgentKind>, default_value = "help_aware_noisy")]
        agent: AgentKind,
        #[arg(long, value_parser = parse_scheme, default_value = "8")]
        regions: SchemeKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_enum::<ParseMode>, default_value = "lenient")]
        parse_mode: ParseMode,
        #[arg(long, value_parser = parse_enum::<MistakeRule>, default_value = "improvement")]
        mistake_rule: MistakeRule,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceFormat {
    IgluMultiturn,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(args) => {
            let spec = args.to_spec()?;
            let out = run_eval(&spec)?;
            print!("{}", report_table(std::slice::from_ref(&out.row)));
        }
        Command::AblateRegions { run, schemes } => {
            let spec = run.to_spec()?;
            let rows = run_ablation_regions(&spec, &schemes)?;
            print!("{}", report_table(&rows));
        }
        Command::CalibrateThreshold { run, sweep } => {
            let spec = run.to_spec()?;
            let sweep = if sweep.is_empty() { default_sweep() } else { sweep };
            let calibration = calibrate_threshold(&spec, &sweep)?;
            print!("{}", calibration_csv(&calibration));
            println!("chosen threshold: {}", calibration.chosen);
        }
        Command::Import {
            source_format: SourceFormat::IgluMultiturn,
            input,
            output,
            recenter,
            default_split,
        } => {
            let options = ImportOptions {
                recenter,
                default_split,
                ..Default::default()
            };
            let report = import_iglu(&input, &options)?;
            let manifest = write_corpus(&output, &report.episodes, CorpusSourceKind::Imported, None)?;
            println!(
                "imported {} episodes (train {}, valid {}, test {}); skipped {}",
                report.episodes.len(),
                manifest.counts.train,
                manifest.counts.valid,
                manifest.counts.test,
                report.skipped.len()
            );
        }
        Command::GenSynthetic {
            seed,
            episodes,
            shapes,
            fractions,
            output,
        } => {
            if episodes == 0 {
                bail!("--episodes must be positive");
            }
            let generated = generate_synthetic(seed, episodes, &shapes, GridBounds::default());
            let fractions: [f64; 3] = fractions.try_into().map_err(|_| anyhow::anyhow!("--fractions takes three values"))?;
            let mut all = split(generated, fractions, seed)?.into_vec();
            all.sort_by(|a, b| a.id.cmp(&b.id));
            let manifest = write_corpus(&output, &all, CorpusSourceKind::Synthetic, Some(seed))?;
            println!(
                "wrote {} episodes (train {}, valid {}, test {}) to {}",
                all.len(),
                manifest.counts.train,
                manifest.counts.valid,
                manifest.counts.test,
                output.display()
            );
        }
        Command::Serve {
            bind,
            corpus,
            static_dir,
            trace_dir,
            idle_timeout,
            agent,
            regions,
            seed,
            parse_mode,
            mistake_rule,
        } => {
            let corpus = match &corpus {
                Some(path) => {
                    let (episodes, _) = read_corpus(path).with_context(|| format!("loading {}", path.display()))?;
                    log::info!("loaded {} episodes from {}", episodes.len(), path.display());
                    index_by_id(&episodes)
                }
                None => BTreeMap::new(),
            };
            let config = ServiceConfig {
                corpus: Arc::new(corpus),
                help: HelpContext {
                    scheme: RegionScheme::new(regions),
                    ..Default::default()
                },
                default_agent: AgentProfile::new(agent, NoiseProfile::default(), seed),
                parse_mode,
                mistake_rule,
                idle_timeout: Duration::from_secs(idle_timeout),
                trace_dir,
                seed,
                ..Default::default()
            };
            let manager = Arc::new(SessionManager::new(config));
            tokio::runtime::Runtime::new()?.block_on(helpgrid_service::serve(bind, manager, static_dir))?;
        }
    }
    Ok(())
}
