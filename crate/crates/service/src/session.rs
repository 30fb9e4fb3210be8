//! Interactive sessions: one episode played turn by turn with a human
//! Architect who can give help or answer a clarification question.
//!
//! Phases move `awaiting_step → (awaiting_help | awaiting_clarification_answer)
//! → done`; a session idle for longer than the configured timeout becomes
//! `expired` and refuses further work.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, TryLockError};
use std::time::{Duration, Instant};

use helpgrid_core::agents::{AgentKind, AgentProfile, Builder, NoiseProfile};
use helpgrid_core::clarify::{
    answer_clarification, episode_context, run_confusion_loop, Answer, LoopConfig, LoopError, LoopTrace,
};
use helpgrid_core::codec::ParseMode;
use helpgrid_core::corpus::{generate_synthetic, Episode};
use helpgrid_core::help::{HelpContext, HelpKind, HelpMessage};
use helpgrid_core::metrics::{help_followed, EpisodeScore, MistakeRule};
use helpgrid_core::{GridBounds, GridDiff, GridState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingStep,
    AwaitingHelp,
    AwaitingClarificationAnswer,
    Done,
    Expired,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no session {0:?}")]
    NotFound(String),
    #[error("unknown episode: {0}")]
    UnknownEpisode(String),
    #[error("session is in phase {actual:?}; this request needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("session is busy with another request")]
    Busy,
    #[error("session expired after being idle")]
    Expired,
    #[error("could not understand the help: {reason}")]
    Unrecognized { text: String, reason: String },
    #[error("the question asked for {expected} help, but the answer is {got} help")]
    KindMismatch { expected: HelpKind, got: HelpKind },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<LoopError> for SessionError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::KindMismatch { expected, got } => SessionError::KindMismatch { expected, got },
            LoopError::Unrecognized(u) => SessionError::Unrecognized {
                text: u.text,
                reason: u.reason,
            },
            other => SessionError::Internal(other.to_string()),
        }
    }
}

/// Which episode a session plays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpisodeSelector {
    Corpus { corpus_id: String },
    Synthetic {
        synthetic_seed: u64,
        #[serde(default)]
        index: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub episode: Option<EpisodeSelector>,
    /// Builder profile; the server default when absent.
    pub agent: Option<AgentProfile>,
    /// Enables the clarification loop with this configuration.
    pub clarify: Option<LoopConfig>,
}

/// Help from the Architect, or an explicit decision to give none.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HelpRequest {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub skip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub text: String,
}

/// A builder prediction as both utterance and blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub utterance: String,
    pub blocks: GridDiff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub phase: Phase,
    pub episode_id: String,
    pub dialogue: String,
    pub bounds: GridBounds,
    pub grid_before: GridState,
    /// Region names of the active scheme, in index order.
    pub regions: Vec<String>,
    pub clarify_enabled: bool,
    pub prediction: Option<Prediction>,
    pub question: Option<String>,
    pub help: Option<HelpMessage>,
    #[serde(rename = "final")]
    pub final_prediction: Option<Prediction>,
    pub score: Option<EpisodeScore>,
}

/// Everything recorded for a session, written to the trace log when it finishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub session_id: String,
    pub episode_id: String,
    pub phase: Phase,
    pub baseline: Option<Prediction>,
    #[serde(rename = "loop")]
    pub loop_trace: Option<LoopTrace>,
    pub help: Option<HelpMessage>,
    #[serde(rename = "final")]
    pub final_prediction: Option<Prediction>,
    pub score: Option<EpisodeScore>,
}

struct Session {
    id: String,
    episode: Episode,
    builder: Box<dyn Builder>,
    clarify: Option<LoopConfig>,
    phase: Phase,
    last_active: Instant,
    baseline: Option<Prediction>,
    loop_trace: Option<LoopTrace>,
    help: Option<HelpMessage>,
    final_prediction: Option<Prediction>,
    score: Option<EpisodeScore>,
}

pub type Clock = Arc<dyn Fn() -> Instant + Send + Sync>;

#[derive(Clone)]
pub struct ServiceConfig {
    /// Episodes addressable by `corpus_id`.
    pub corpus: Arc<BTreeMap<String, Episode>>,
    pub help: HelpContext,
    pub default_agent: AgentProfile,
    pub parse_mode: ParseMode,
    pub mistake_rule: MistakeRule,
    pub idle_timeout: Duration,
    /// Finished sessions are appended to `sessions.jsonl` here.
    pub trace_dir: Option<PathBuf>,
    /// Seed for self-generated help in the clarification loop.
    pub seed: u64,
    pub clock: Clock,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            corpus: Arc::new(BTreeMap::new()),
            help: HelpContext::default(),
            default_agent: AgentProfile::new(AgentKind::HelpAwareNoisy, NoiseProfile::default(), 0),
            parse_mode: ParseMode::Lenient,
            mistake_rule: MistakeRule::Improvement,
            idle_timeout: Duration::from_secs(30 * 60),
            trace_dir: None,
            seed: 0,
            clock: Arc::new(Instant::now),
        }
    }
}

pub struct SessionManager {
    config: ServiceConfig,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn resolve(&self, selector: Option<&EpisodeSelector>) -> Result<Episode, SessionError> {
        match selector {
            None => Err(SessionError::BadRequest("missing \"episode\" selector".into())),
            Some(EpisodeSelector::Corpus { corpus_id }) => self
                .config
                .corpus
                .get(corpus_id)
                .cloned()
                .ok_or_else(|| SessionError::UnknownEpisode(corpus_id.clone())),
            Some(EpisodeSelector::Synthetic { synthetic_seed, index }) => {
                if *index > 10_000 {
                    return Err(SessionError::UnknownEpisode(format!("synthetic index {index} is too large")));
                }
                Ok(generate_synthetic(*synthetic_seed, index + 1, &[], GridBounds::default())
                    .pop()
                    .expect("generator returns n episodes"))
            }
        }
    }

    pub fn create(&self, request: CreateRequest) -> Result<SessionView, SessionError> {
        let episode = self.resolve(request.episode.as_ref())?;
        let profile = request.agent.unwrap_or_else(|| self.config.default_agent.clone());
        let builder = profile
            .build(self.config.help.scheme)
            .map_err(|e| SessionError::BadRequest(e.to_string()))?;
        if let Some(cfg) = &request.clarify {
            cfg.validate().map_err(|e| SessionError::BadRequest(e.to_string()))?;
        }
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session {
            id: id.clone(),
            episode,
            builder: Box::new(builder),
            clarify: request.clarify,
            phase: Phase::AwaitingStep,
            last_active: (self.config.clock)(),
            baseline: None,
            loop_trace: None,
            help: None,
            final_prediction: None,
            score: None,
        };
        let view = self.view(&session);
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    /// Runs `f` on the session with exclusive access; a concurrent request gets `Busy`.
    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, SessionError> {
        let handle = self
            .sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
        let mut session = match handle.try_lock() {
            Ok(s) => s,
            Err(TryLockError::WouldBlock) => return Err(SessionError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let now = (self.config.clock)();
        if session.phase != Phase::Done && now.duration_since(session.last_active) > self.config.idle_timeout {
            session.phase = Phase::Expired;
        }
        session.last_active = now;
        f(&mut session)
    }

    fn expect_phase(session: &Session, expected: Phase) -> Result<(), SessionError> {
        match session.phase {
            Phase::Expired => Err(SessionError::Expired),
            actual if actual != expected => Err(SessionError::WrongPhase { expected, actual }),
            _ => Ok(()),
        }
    }

    pub fn get(&self, id: &str) -> Result<SessionView, SessionError> {
        self.with_session(id, |s| Ok(self.view(s)))
    }

    pub fn trace(&self, id: &str) -> Result<SessionTrace, SessionError> {
        self.with_session(id, |s| Ok(Self::trace_of(s)))
    }

    fn context(&self, session: &Session) -> HelpContext {
        episode_context(&self.config.help, &session.episode)
    }

    fn predict(&self, session: &Session, help: Option<&HelpMessage>) -> Result<Prediction, SessionError> {
        let utterance = session
            .builder
            .predict(&session.episode, help)
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        let blocks = helpgrid_core::codec::parse_detailed(&utterance, session.episode.bounds()).diff;
        Ok(Prediction { utterance, blocks })
    }

    pub fn step(&self, id: &str) -> Result<SessionView, SessionError> {
        self.with_session(id, |s| {
            Self::expect_phase(s, Phase::AwaitingStep)?;
            let baseline = self.predict(s, None)?;
            if let Some(cfg) = s.clarify.clone() {
                let ctx = self.context(s);
                let predictors = cfg.predictors(helpgrid_core::rng::derive_seed(self.config.seed, "self-help"))?;
                let trace = run_confusion_loop(s.builder.as_ref(), &predictors, &ctx, &s.episode, &cfg, self.config.parse_mode)?;
                s.phase = if trace.asked() {
                    Phase::AwaitingClarificationAnswer
                } else {
                    Phase::AwaitingHelp
                };
                s.loop_trace = Some(trace);
            } else {
                s.phase = Phase::AwaitingHelp;
            }
            s.baseline = Some(baseline);
            Ok(self.view(s))
        })
    }

    pub fn provide_help(&self, id: &str, request: HelpRequest) -> Result<SessionView, SessionError> {
        self.with_session(id, |s| {
            Self::expect_phase(s, Phase::AwaitingHelp)?;
            let baseline = s.baseline.clone().expect("baseline exists after step");
            if request.skip {
                self.finish(s, None, baseline)?;
                return Ok(self.view(s));
            }
            let text = request
                .text
                .ok_or_else(|| SessionError::BadRequest("send \"text\" or \"skip\": true".into()))?;
            let help = self.context(s).normalize(&text).map_err(|u| SessionError::Unrecognized {
                text: u.text,
                reason: u.reason,
            })?;
            let revised = self.predict(s, Some(&help))?;
            self.finish(s, Some(help), revised)?;
            Ok(self.view(s))
        })
    }

    pub fn answer(&self, id: &str, request: AnswerRequest) -> Result<SessionView, SessionError> {
        self.with_session(id, |s| {
            Self::expect_phase(s, Phase::AwaitingClarificationAnswer)?;
            let ctx = self.context(s);
            let mut trace = s.loop_trace.clone().expect("question implies a trace");
            answer_clarification(
                &mut trace,
                Answer::Text(request.text),
                s.builder.as_ref(),
                &ctx,
                &s.episode,
                self.config.parse_mode,
            )?;
            let help = trace.answer.clone();
            s.loop_trace = Some(trace);
            let revised = self.predict(s, help.as_ref())?;
            self.finish(s, help, revised)?;
            Ok(self.view(s))
        })
    }

    fn finish(&self, s: &mut Session, help: Option<HelpMessage>, prediction: Prediction) -> Result<(), SessionError> {
        let ctx = self.context(s);
        let followed = match &help {
            Some(h) => Some(
                help_followed(
                    &prediction.blocks,
                    s.baseline.as_ref().map(|b| &b.blocks),
                    h,
                    &s.episode.gold,
                    &ctx.scheme,
                    ctx.bounds,
                    self.config.mistake_rule,
                )
                .map_err(|e| SessionError::Internal(e.to_string()))?,
            ),
            None => None,
        };
        s.score = Some(EpisodeScore::score(&prediction.blocks, &s.episode.gold, ctx.bounds, followed));
        s.help = help;
        s.final_prediction = Some(prediction);
        s.phase = Phase::Done;
        if let Some(dir) = &self.config.trace_dir {
            let line = serde_json::to_string(&Self::trace_of(s)).map_err(|e| SessionError::Internal(e.to_string()))?;
            let write = std::fs::create_dir_all(dir).and_then(|_| {
                let mut f = OpenOptions::new().create(true).append(true).open(dir.join("sessions.jsonl"))?;
                writeln!(f, "{line}")
            });
            if let Err(e) = write {
                log::error!("could not write session trace to {}: {e}", dir.display());
            }
        }
        Ok(())
    }

    fn trace_of(s: &Session) -> SessionTrace {
        SessionTrace {
            session_id: s.id.clone(),
            episode_id: s.episode.id.clone(),
            phase: s.phase,
            baseline: s.baseline.clone(),
            loop_trace: s.loop_trace.clone(),
            help: s.help.clone(),
            final_prediction: s.final_prediction.clone(),
            score: s.score,
        }
    }

    fn view(&self, s: &Session) -> SessionView {
        SessionView {
            id: s.id.clone(),
            phase: s.phase,
            episode_id: s.episode.id.clone(),
            dialogue: s.episode.dialogue.clone(),
            bounds: s.episode.bounds(),
            grid_before: s.episode.grid_before.clone(),
            regions: self.config.help.scheme.names().iter().map(|n| n.to_string()).collect(),
            clarify_enabled: s.clarify.is_some(),
            prediction: s.baseline.clone(),
            question: s.loop_trace.as_ref().and_then(|t| t.question.clone()),
            help: s.help.clone(),
            final_prediction: s.final_prediction.clone(),
            score: s.score,
        }
    }
}
