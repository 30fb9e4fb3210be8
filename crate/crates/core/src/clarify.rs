//! Confusion detection and clarification questions, plus the per-episode
//! runner that ties builders, help and metrics together.
//!
//! The loop predicts once without help, then once per help kind with
//! self-generated help. The kind whose help changes the prediction the most —
//! if that change beats the threshold — becomes a clarification question.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Builder, SelfHelpPredictor};
use crate::codec::{parse_detailed, parse_utterance, ParseMode};
use crate::corpus::Episode;
use crate::help::{HelpContext, HelpError, HelpKind, HelpMessage, Unrecognized};
use crate::metrics::{help_followed, EpisodeScore, MetricsError, MistakeRule};
use crate::rng::derive_seed;
use crate::world::GridDiff;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("no self-help predictor configured for {0}")]
    PredictorMissing(HelpKind),
    #[error("the answer is {got} help but the question asked for {expected} help")]
    KindMismatch { expected: HelpKind, got: HelpKind },
    #[error(transparent)]
    Unrecognized(#[from] Unrecognized),
    #[error("no clarification question is pending")]
    NoQuestion,
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Help(#[from] HelpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How two predictions are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeScore {
    /// Signed change in the number of blocks placed.
    #[default]
    BlocksDelta,
    /// Number of blocks in exactly one of the two predictions.
    SymmetricDiff,
}

pub fn change_score(o0: &GridDiff, oi: &GridDiff, mode: ChangeScore) -> f64 {
    match mode {
        ChangeScore::BlocksDelta => oi.added().len() as f64 - o0.added().len() as f64,
        ChangeScore::SymmetricDiff => o0.added().symmetric_difference(oi.added()).count() as f64,
    }
}

/// Question asked when help of `kind` is the one the builder is unsure about.
pub fn clarification_question(kind: HelpKind) -> &'static str {
    match kind {
        HelpKind::Restrictive => "What quadrant should the block be placed in?",
        HelpKind::Length => "How many blocks should I place?",
        HelpKind::Corrective => "Which direction should I move the blocks?",
        HelpKind::Mistake => "How many of my blocks are wrong?",
    }
}

/// Thresholds serialize as numbers, with `"inf"` standing in for +∞.
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(n) => Ok(n),
            Repr::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
                other => other
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("bad threshold {t:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// A question is asked only when the largest change strictly exceeds this.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub change_score: ChangeScore,
    /// Kinds tried, in order; ties go to the earlier kind.
    pub help_kinds: Vec<HelpKind>,
    pub predictor_accuracies: BTreeMap<HelpKind, f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            change_score: ChangeScore::BlocksDelta,
            help_kinds: HelpKind::ALL.to_vec(),
            predictor_accuracies: crate::agents::default_predictor_accuracies(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.help_kinds.is_empty() {
            return Err(LoopError::InvalidConfig("help_kinds is empty".into()));
        }
        if self.threshold.is_nan() || self.threshold == f64::NEG_INFINITY {
            return Err(LoopError::InvalidConfig(format!("threshold {} is not usable", self.threshold)));
        }
        Ok(())
    }

    /// One predictor per configured kind, all drawing from `seed`.
    pub fn predictors(&self, seed: u64) -> Result<BTreeMap<HelpKind, SelfHelpPredictor>, LoopError> {
        self.help_kinds
            .iter()
            .map(|&kind| {
                let accuracy = *self.predictor_accuracies.get(&kind).ok_or(LoopError::PredictorMissing(kind))?;
                Ok((kind, SelfHelpPredictor::new(kind, accuracy, seed)?))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelpTrial {
    pub kind: HelpKind,
    pub help: HelpMessage,
    pub prediction: GridDiff,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopTrace {
    pub episode_id: String,
    /// Prediction without help.
    pub o0: GridDiff,
    pub trials: Vec<HelpTrial>,
    /// Kind that triggered the question, if any.
    pub chosen: Option<HelpKind>,
    pub question: Option<String>,
    pub answer: Option<HelpMessage>,
    pub o_final: GridDiff,
}

impl LoopTrace {
    pub fn asked(&self) -> bool {
        self.question.is_some()
    }

    pub fn awaiting_answer(&self) -> bool {
        self.question.is_some() && self.answer.is_none()
    }
}

/// Runs the builder and parses its utterance against the episode bounds.
/// Strict parsing turns malformed output into an empty prediction.
pub fn predict_diff(
    builder: &dyn Builder,
    episode: &Episode,
    help: Option<&HelpMessage>,
    mode: ParseMode,
) -> Result<GridDiff, AgentError> {
    let text = builder.predict(episode, help)?;
    Ok(match mode {
        ParseMode::Lenient => {
            let parsed = parse_detailed(&text, episode.bounds());
            if !parsed.skipped.is_empty() {
                log::debug!("{}: skipped {} malformed sentence(s)", episode.id, parsed.skipped.len());
            }
            parsed.diff
        }
        ParseMode::Strict => parse_utterance(&text, episode.bounds(), mode).unwrap_or_else(|e| {
            log::debug!("{}: builder output rejected: {e}", episode.id);
            GridDiff::default()
        }),
    })
}

/// Predicts without help, tries self-generated help of every configured kind
/// and decides whether to ask a clarification question. When a question is
/// asked, `o_final` stays at the unhelped prediction until it is answered.
pub fn run_confusion_loop(
    builder: &dyn Builder,
    predictors: &BTreeMap<HelpKind, SelfHelpPredictor>,
    ctx: &HelpContext,
    episode: &Episode,
    cfg: &LoopConfig,
    mode: ParseMode,
) -> Result<LoopTrace, LoopError> {
    cfg.validate()?;
    let o0 = predict_diff(builder, episode, None, mode)?;
    let mut trials = Vec::with_capacity(cfg.help_kinds.len());
    for &kind in &cfg.help_kinds {
        let predictor = predictors.get(&kind).ok_or(LoopError::PredictorMissing(kind))?;
        let help = predictor.predict(ctx, episode, Some(&o0))?;
        let prediction = predict_diff(builder, episode, Some(&help), mode)?;
        let delta = change_score(&o0, &prediction, cfg.change_score);
        trials.push(HelpTrial {
            kind,
            help,
            prediction,
            delta,
        });
    }
    let mut best: Option<&HelpTrial> = None;
    for trial in &trials {
        if best.is_none_or(|b| trial.delta > b.delta) {
            best = Some(trial);
        }
    }
    let chosen = best.filter(|b| b.delta > cfg.threshold).map(|b| b.kind);
    Ok(LoopTrace {
        episode_id: episode.id.clone(),
        o_final: o0.clone(),
        o0,
        chosen,
        question: chosen.map(|k| clarification_question(k).to_string()),
        answer: None,
        trials,
    })
}

/// An answer to a clarification question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Message(HelpMessage),
    Text(String),
}

/// Applies the answer: the builder predicts once more with it, and the trace
/// records the answer and the final prediction. On error the trace is untouched.
pub fn answer_clarification(
    trace: &mut LoopTrace,
    answer: Answer,
    builder: &dyn Builder,
    ctx: &HelpContext,
    episode: &Episode,
    mode: ParseMode,
) -> Result<GridDiff, LoopError> {
    let expected = trace.chosen.ok_or(LoopError::NoQuestion)?;
    let help = match answer {
        Answer::Message(m) => m,
        Answer::Text(text) => ctx.normalize(&text)?,
    };
    if help.kind() != expected {
        return Err(LoopError::KindMismatch {
            expected,
            got: help.kind(),
        });
    }
    let prediction = predict_diff(builder, episode, Some(&help), mode)?;
    trace.answer = Some(help);
    trace.o_final = prediction.clone();
    Ok(prediction)
}

/// Where batch clarification answers come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    /// Oracle help of the asked kind, computed against the unhelped prediction.
    #[default]
    Oracle,
}

/// How help is supplied during an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    NoHelp,
    OracleHelp {
        kind: HelpKind,
    },
    SelfHelp {
        kind: HelpKind,
        accuracy: f64,
    },
    Clarify {
        #[serde(default)]
        config: LoopConfig,
        #[serde(default)]
        answers: AnswerSource,
    },
}

impl Regime {
    pub fn label(&self) -> String {
        match self {
            Regime::NoHelp => "No Help".into(),
            Regime::OracleHelp { kind } => format!("Oracle {} Help", capitalize(kind.as_str())),
            Regime::SelfHelp { kind, .. } => format!("Self {} Help", capitalize(kind.as_str())),
            Regime::Clarify { .. } => "Clarification".into(),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

/// Per-run knobs shared by every episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeOptions {
    pub seed: u64,
    pub parse_mode: ParseMode,
    pub mistake_rule: MistakeRule,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            parse_mode: ParseMode::Lenient,
            mistake_rule: MistakeRule::Improvement,
        }
    }
}

/// Everything recorded about one evaluated episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub regime: String,
    pub help: Option<HelpMessage>,
    pub prediction: GridDiff,
    pub score: EpisodeScore,
    #[serde(rename = "loop", skip_serializing_if = "Option::is_none")]
    pub loop_trace: Option<LoopTrace>,
}

/// Help context adjusted to the episode's own bounds.
pub fn episode_context(ctx: &HelpContext, episode: &Episode) -> HelpContext {
    HelpContext {
        bounds: episode.bounds(),
        ..ctx.clone()
    }
}

/// Predicts, helps and scores one episode under `regime`.
pub fn run_episode(
    builder: &dyn Builder,
    ctx: &HelpContext,
    episode: &Episode,
    regime: &Regime,
    options: &EpisodeOptions,
) -> Result<EpisodeRecord, LoopError> {
    let ctx = episode_context(ctx, episode);
    let mode = options.parse_mode;
    let help_seed = |label: &str| derive_seed(options.seed, &format!("{label}:{}", episode.id));
    let followed = |pred: &GridDiff, prior: &GridDiff, help: &HelpMessage| {
        help_followed(
            pred,
            Some(prior),
            help,
            &episode.gold,
            &ctx.scheme,
            ctx.bounds,
            options.mistake_rule,
        )
    };

    let o0 = predict_diff(builder, episode, None, mode)?;
    let (help, prediction, followed, loop_trace) = match regime {
        Regime::NoHelp => (None, o0, None, None),
        Regime::OracleHelp { kind } => match ctx.oracle(*kind, &episode.gold, Some(&o0), help_seed("oracle-help")) {
            Ok(help) => {
                let pred = predict_diff(builder, episode, Some(&help), mode)?;
                let f = followed(&pred, &o0, &help)?;
                (Some(help), pred, Some(f), None)
            }
            // No oracle help exists (e.g. nothing to build); the builder goes unhelped.
            Err(_) => (None, o0, None, None),
        },
        Regime::SelfHelp { kind, accuracy } => {
            let predictor = SelfHelpPredictor::new(*kind, *accuracy, derive_seed(options.seed, "self-help"))?;
            let help = predictor.predict(&ctx, episode, Some(&o0))?;
            let pred = predict_diff(builder, episode, Some(&help), mode)?;
            let f = followed(&pred, &o0, &help)?;
            (Some(help), pred, Some(f), None)
        }
        Regime::Clarify { config, answers } => {
            let predictors = config.predictors(derive_seed(options.seed, "self-help"))?;
            let mut trace = run_confusion_loop(builder, &predictors, &ctx, episode, config, mode)?;
            let answer = match (trace.chosen, answers) {
                (Some(kind), AnswerSource::Oracle) => {
                    ctx.oracle(kind, &episode.gold, Some(&trace.o0), help_seed("answer")).ok()
                }
                (None, _) => None,
            };
            match answer {
                Some(help) => {
                    let pred = answer_clarification(&mut trace, Answer::Message(help.clone()), builder, &ctx, episode, mode)?;
                    let f = followed(&pred, &trace.o0, &help)?;
                    (Some(help), pred, Some(f), Some(trace))
                }
                None => (None, trace.o_final.clone(), None, Some(trace)),
            }
        }
    };
    Ok(EpisodeRecord {
        episode_id: episode.id.clone(),
        regime: regime.label(),
        score: EpisodeScore::score(&prediction, &episode.gold, ctx.bounds, followed),
        help,
        prediction,
        loop_trace,
    })
}
