//! Builders and self-help predictors.
//!
//! A [`Builder`] turns an episode (plus optional help) into a block utterance.
//! The simulated builders here stand in for a trained language model: they
//! start from the gold diff and corrupt it, and the help-aware variant uses
//! help to undo part of that corruption. Per-episode randomness is derived
//! from `(profile seed, episode id)`, so predictions never depend on
//! evaluation order, and the same base corruption is shared by every help
//! rerun of an episode.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_diff, encode_grid};
use crate::corpus::Episode;
use crate::help::{normalize_help, BlockCount, Direction, HelpContext, HelpKind, HelpMessage, HelpPayload};
use crate::regions::{RegionId, RegionScheme};
use crate::rng::{derive_seed, seeded};
use crate::world::{Coordinate, GridDiff};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent profile: {0}")]
    InvalidProfile(String),
    #[error("{kind} self-help needs the builder's initial prediction")]
    MissingPrediction { kind: HelpKind },
    #[error("external builder: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a language-model builder sees: dialogue, the grid as text and, when
/// given, one help sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuilderInput {
    pub dialogue: String,
    pub grid_text: String,
    pub help: Option<String>,
}

impl BuilderInput {
    pub fn from_episode(episode: &Episode) -> Self {
        Self {
            dialogue: episode.dialogue.clone(),
            grid_text: encode_grid(&episode.grid_before),
            help: None,
        }
    }

    /// Sets the help sentence, replacing any earlier one.
    pub fn with_help(mut self, utterance: impl Into<String>) -> Self {
        self.help = Some(utterance.into());
        self
    }

    /// `INSTRUCTION: <dialogue>, HELP: <help>`; the help part is omitted when absent.
    pub fn compose(&self) -> String {
        match &self.help {
            Some(help) => format!("INSTRUCTION: {}, HELP: {}", self.dialogue, help),
            None => format!("INSTRUCTION: {}", self.dialogue),
        }
    }
}

/// Anything that can act as the Builder.
pub trait Builder: Send + Sync {
    /// Returns the builder's block utterance for `episode`.
    fn predict(&self, episode: &Episode, help: Option<&HelpMessage>) -> Result<String, AgentError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Emits the gold diff.
    Oracle,
    /// Corrupts gold and ignores help.
    Noisy,
    /// Corrupts gold, then uses help to repair the corruption.
    HelpAwareNoisy,
    /// Replays fixed utterances.
    Scripted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    /// Per-block probability of being displaced.
    pub p_off: f64,
    /// Per-block probability of being left out.
    pub p_drop: f64,
    /// Per-block probability of an extra stray block nearby.
    pub p_extra: f64,
    /// Maximum displacement per axis, in cells.
    pub radius: u32,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            p_off: 0.5,
            p_drop: 0.2,
            p_extra: 0.2,
            radius: 2,
        }
    }
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, p) in [("p_off", self.p_off), ("p_drop", self.p_drop), ("p_extra", self.p_extra)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AgentError::InvalidProfile(format!("{name} = {p} is not a probability")));
            }
        }
        if self.radius < 1 {
            return Err(AgentError::InvalidProfile("radius must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub kind: AgentKind,
    #[serde(default)]
    pub noise: NoiseProfile,
    #[serde(default)]
    pub seed: u64,
    /// Scripted agents only: utterance per help kind, with `"none"` for the no-help call.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub script: BTreeMap<String, String>,
}

impl AgentProfile {
    pub fn new(kind: AgentKind, noise: NoiseProfile, seed: u64) -> Self {
        Self {
            kind,
            noise,
            seed,
            script: BTreeMap::new(),
        }
    }

    pub fn oracle() -> Self {
        Self::new(AgentKind::Oracle, NoiseProfile::default(), 0)
    }

    pub fn scripted(script: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            script: script.into_iter().collect(),
            ..Self::new(AgentKind::Scripted, NoiseProfile::default(), 0)
        }
    }

    /// Instantiates the simulated builder for this profile.
    pub fn build(&self, scheme: RegionScheme) -> Result<SimulatedBuilder, AgentError> {
        self.noise.validate()?;
        Ok(SimulatedBuilder {
            profile: self.clone(),
            scheme,
        })
    }
}

/// Builder backed by an [`AgentProfile`].
#[derive(Clone, Debug)]
pub struct SimulatedBuilder {
    profile: AgentProfile,
    scheme: RegionScheme,
}

impl SimulatedBuilder {
    pub fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    /// The prediction as a diff, before serialization.
    pub fn predict_diff(&self, episode: &Episode, help: Option<&HelpMessage>) -> GridDiff {
        match self.profile.kind {
            AgentKind::Oracle => GridDiff::additions(episode.gold.added().iter().copied()),
            AgentKind::Scripted => unreachable!("scripted builders reply with text"),
            AgentKind::Noisy => {
                let mut work = Workspace::new(episode, &self.profile);
                work.corrupt();
                work.finish()
            }
            AgentKind::HelpAwareNoisy => {
                let mut work = Workspace::new(episode, &self.profile);
                work.corrupt();
                // Help arrives as language; act on what it normalizes to.
                if let Some(payload) = help.and_then(|h| normalize_help(&h.utterance, &self.scheme).ok()) {
                    work.apply_help(&payload.payload, &self.scheme);
                }
                work.finish()
            }
        }
    }
}

impl Builder for SimulatedBuilder {
    fn predict(&self, episode: &Episode, help: Option<&HelpMessage>) -> Result<String, AgentError> {
        if self.profile.kind == AgentKind::Scripted {
            let key = help.map(|h| h.kind().as_str()).unwrap_or("none");
            return Ok(self
                .profile
                .script
                .get(key)
                .or_else(|| self.profile.script.get("none"))
                .cloned()
                .unwrap_or_default());
        }
        let diff = self.predict_diff(episode, help);
        Ok(encode_diff(&diff).expect("simulated predictions only add blocks"))
    }
}

/// Convenience wrapper: build the profile's builder and predict once.
pub fn builder_predict(
    profile: &AgentProfile,
    scheme: RegionScheme,
    episode: &Episode,
    help: Option<&HelpMessage>,
) -> Result<String, AgentError> {
    profile.build(scheme)?.predict(episode, help)
}

#[derive(Clone, Copy, Debug)]
struct Placement {
    cell: Coordinate,
    /// Gold block this placement was derived from.
    anchor: Coordinate,
    /// Displaced or spurious: the builder's uncertain blocks.
    corrupted: bool,
}

/// Mutable prediction state for one simulated call.
struct Workspace<'a> {
    episode: &'a Episode,
    noise: NoiseProfile,
    seed: u64,
    placements: Vec<Placement>,
}

impl Placement {
    fn exact(cell: Coordinate) -> Self {
        Self {
            cell,
            anchor: cell,
            corrupted: false,
        }
    }
}

impl<'a> Workspace<'a> {
    fn new(episode: &'a Episode, profile: &AgentProfile) -> Self {
        Self {
            episode,
            noise: profile.noise,
            seed: derive_seed(profile.seed, &episode.id),
            placements: Vec::new(),
        }
    }

    fn rng(&self, label: &str) -> ChaCha8Rng {
        seeded(self.seed, label)
    }

    fn is_free(&self, c: Coordinate) -> bool {
        self.episode.bounds().contains(c) && !self.episode.grid_before.is_occupied(c)
    }

    fn cells(&self) -> BTreeSet<Coordinate> {
        self.placements.iter().map(|p| p.cell).collect()
    }

    fn random_offset(&self, rng: &mut impl Rng) -> (i32, i32, i32) {
        let r = self.noise.radius as i32;
        loop {
            let d = (rng.gen_range(-r..=r), rng.gen_range(-r..=r), rng.gen_range(-r..=r));
            if d != (0, 0, 0) {
                return d;
            }
        }
    }

    fn corrupt(&mut self) {
        let mut rng = self.rng("corrupt");
        let gold: Vec<Coordinate> = self.episode.gold.added().iter().copied().collect();
        for &g in &gold {
            if rng.gen_bool(self.noise.p_drop) {
                continue;
            }
            let mut cell = g;
            if rng.gen_bool(self.noise.p_off) {
                for _ in 0..16 {
                    let (dx, dy, dz) = self.random_offset(&mut rng);
                    let c = g.offset(dx, dy, dz);
                    if self.is_free(c) {
                        cell = c;
                        break;
                    }
                }
            }
            self.placements.push(Placement {
                cell,
                anchor: g,
                corrupted: cell != g,
            });
        }
        for &g in &gold {
            if !rng.gen_bool(self.noise.p_extra) {
                continue;
            }
            for _ in 0..16 {
                let (dx, dy, dz) = self.random_offset(&mut rng);
                let c = g.offset(dx, dy, dz);
                if self.is_free(c) && !self.placements.iter().any(|p| p.cell == c) {
                    self.placements.push(Placement {
                        cell: c,
                        anchor: g,
                        corrupted: true,
                    });
                    break;
                }
            }
        }
    }

    fn apply_help(&mut self, payload: &HelpPayload, scheme: &RegionScheme) {
        match payload {
            HelpPayload::Restrictive { region } => self.restrict(region, scheme),
            HelpPayload::Length { count, .. } => self.clamp_count(*count),
            HelpPayload::Corrective { direction, .. } => self.nudge(*direction),
            HelpPayload::Mistake { count } => self.fix_mistakes(*count),
        }
    }

    fn nearest_gold_distance(&self, c: Coordinate) -> i64 {
        self.episode
            .gold
            .added()
            .iter()
            .map(|g| g.squared_distance(c))
            .min()
            .unwrap_or(0)
    }

    /// Redraws every uncertain block from the noise process, keeping only
    /// draws inside `region`; a draw that lands back on an already placed
    /// block merges with it. Whatever still sits outside the region is then
    /// moved as one rigid piece by the smallest shift that fits, or, failing
    /// that, block by block to the nearest free cell of the region.
    fn restrict(&mut self, region: &RegionId, scheme: &RegionScheme) {
        let bounds = self.episode.bounds();
        let mut rng = self.rng("help:restrictive");
        let inside = |c: Coordinate| scheme.contains(region, c, bounds);
        let (certain, uncertain): (Vec<Placement>, Vec<Placement>) =
            self.placements.iter().copied().partition(|p| !p.corrupted);
        let mut placed = certain;
        for p in uncertain {
            let mut outcome = Some(p);
            for _ in 0..64 {
                let candidate = if rng.gen_bool(self.noise.p_off) {
                    let (dx, dy, dz) = self.random_offset(&mut rng);
                    p.anchor.offset(dx, dy, dz)
                } else {
                    p.anchor
                };
                if !inside(candidate) || !self.is_free(candidate) {
                    continue;
                }
                if placed.iter().any(|k| k.cell == candidate) {
                    if candidate == p.anchor {
                        outcome = None;
                        break;
                    }
                    continue;
                }
                outcome = Some(Placement {
                    cell: candidate,
                    anchor: p.anchor,
                    corrupted: candidate != p.anchor,
                });
                break;
            }
            placed.extend(outcome);
        }
        self.placements = placed;
        if self.placements.iter().all(|p| inside(p.cell)) {
            return;
        }
        if let Some(t) = self.smallest_fitting_shift(&inside) {
            for p in &mut self.placements {
                p.cell = p.cell.offset(t.0, t.1, t.2);
            }
            return;
        }
        let (mut kept, outside): (Vec<Placement>, Vec<Placement>) =
            self.placements.iter().copied().partition(|p| inside(p.cell));
        for p in outside {
            let target = bounds
                .cells()
                .filter(|&c| inside(c) && self.is_free(c) && !kept.iter().any(|k| k.cell == c))
                .min_by_key(|&c| (c.squared_distance(p.cell), c));
            if let Some(cell) = target {
                kept.push(Placement {
                    cell,
                    corrupted: true,
                    ..p
                });
            }
        }
        self.placements = kept;
    }

    /// Shortest shift (ties broken by coordinate order) that puts every
    /// placement on a free cell satisfying `inside`.
    fn smallest_fitting_shift(&self, inside: &impl Fn(Coordinate) -> bool) -> Option<(i32, i32, i32)> {
        let b = self.episode.bounds();
        let reach = [b.x().1 - b.x().0, b.y().1 - b.y().0, b.z().1 - b.z().0];
        let mut shifts: Vec<(i64, (i32, i32, i32))> = Vec::new();
        for dx in -reach[0]..=reach[0] {
            for dy in -reach[1]..=reach[1] {
                for dz in -reach[2]..=reach[2] {
                    let norm = i64::from(dx * dx + dy * dy + dz * dz);
                    shifts.push((norm, (dx, dy, dz)));
                }
            }
        }
        shifts.sort_unstable();
        shifts.into_iter().map(|(_, t)| t).find(|&(dx, dy, dz)| {
            self.placements.iter().all(|p| {
                let c = p.cell.offset(dx, dy, dz);
                inside(c) && self.is_free(c)
            })
        })
    }

    /// Keeps the placements closest to gold when there are too many; pads
    /// with unplaced gold blocks, then with free neighbours, when too few.
    fn clamp_count(&mut self, count: BlockCount) {
        self.dedup();
        let current = self.placements.len();
        let target = match count {
            BlockCount::Exactly(k) => k,
            BlockCount::MoreThanFive => current.max(6),
        };
        if current > target {
            let mut ranked = std::mem::take(&mut self.placements);
            ranked.sort_by_key(|p| (self.nearest_gold_distance(p.cell), p.cell));
            ranked.truncate(target);
            self.placements = ranked;
            return;
        }
        let mut cells = self.cells();
        let unplaced: Vec<Coordinate> = self
            .episode
            .gold
            .added()
            .iter()
            .copied()
            .filter(|g| !cells.contains(g))
            .collect();
        for g in unplaced {
            if self.placements.len() >= target {
                break;
            }
            cells.insert(g);
            self.placements.push(Placement::exact(g));
        }
        while self.placements.len() < target {
            let seed_cells: Vec<Coordinate> = if cells.is_empty() {
                let b = self.episode.bounds();
                vec![b.clamp(Coordinate::new(0, b.y().0, 0))]
            } else {
                cells.iter().copied().collect()
            };
            let next = seed_cells
                .iter()
                .flat_map(|c| std::iter::once(*c).chain(c.neighbours()))
                .find(|&n| self.is_free(n) && !cells.contains(&n));
            match next {
                Some(n) => {
                    cells.insert(n);
                    self.placements.push(Placement::exact(n));
                }
                None => break,
            }
        }
    }

    /// Moves each off-target block one cell in `direction` when that brings
    /// it closer to the target.
    fn nudge(&mut self, direction: Direction) {
        let (dx, dy) = direction.step();
        let gold = self.episode.gold.added();
        let mut cells = self.cells();
        for i in 0..self.placements.len() {
            let p = self.placements[i];
            if gold.contains(&p.cell) {
                continue;
            }
            let moved = p.cell.offset(dx, dy, 0);
            if self.is_free(moved)
                && !cells.contains(&moved)
                && self.nearest_gold_distance(moved) < self.nearest_gold_distance(p.cell)
            {
                cells.remove(&p.cell);
                cells.insert(moved);
                self.placements[i].cell = moved;
            }
        }
    }

    /// Replaces the stated number of wrong blocks, farthest from the target
    /// first, with gold blocks that are still missing.
    fn fix_mistakes(&mut self, count: BlockCount) {
        self.dedup();
        let gold = self.episode.gold.added();
        let mut wrong: Vec<usize> = (0..self.placements.len())
            .filter(|&i| !gold.contains(&self.placements[i].cell))
            .collect();
        wrong.sort_by_key(|&i| {
            let c = self.placements[i].cell;
            (std::cmp::Reverse(self.nearest_gold_distance(c)), c)
        });
        let n = match count {
            BlockCount::Exactly(k) => k,
            BlockCount::MoreThanFive => wrong.len(),
        };
        let mut cells = self.cells();
        let mut remove = BTreeSet::new();
        for &i in wrong.iter().take(n) {
            let bad = self.placements[i].cell;
            let replacement = gold
                .iter()
                .copied()
                .filter(|g| !cells.contains(g))
                .min_by_key(|g| (g.squared_distance(bad), *g));
            cells.remove(&bad);
            match replacement {
                Some(g) => {
                    cells.insert(g);
                    self.placements[i] = Placement::exact(g);
                }
                None => {
                    remove.insert(i);
                }
            }
        }
        let mut i = 0;
        self.placements.retain(|_| {
            let keep = !remove.contains(&i);
            i += 1;
            keep
        });
    }

    fn dedup(&mut self) {
        let mut seen = BTreeSet::new();
        self.placements.retain(|p| seen.insert(p.cell));
    }

    fn finish(self) -> GridDiff {
        GridDiff::additions(self.placements.into_iter().map(|p| p.cell))
    }
}

/// Builder that runs as a child process speaking line-delimited JSON:
/// one `{"id","dialogue","grid","help","input"}` object per request, one
/// `{"utterance": ...}` object per reply.
pub struct ProcessBuilder {
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

#[derive(Serialize)]
struct ProcessRequest<'a> {
    id: &'a str,
    dialogue: &'a str,
    grid: &'a str,
    help: Option<&'a str>,
    input: &'a str,
}

#[derive(Deserialize)]
struct ProcessReply {
    utterance: String,
}

impl ProcessBuilder {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, AgentError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| AgentError::Protocol("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| AgentError::Protocol("no stdout".into()))?;
        Ok(Self {
            io: Mutex::new((child, stdin, BufReader::new(stdout))),
        })
    }
}

impl Builder for ProcessBuilder {
    fn predict(&self, episode: &Episode, help: Option<&HelpMessage>) -> Result<String, AgentError> {
        let mut input = BuilderInput::from_episode(episode);
        if let Some(h) = help {
            input = input.with_help(h.utterance.clone());
        }
        let request = ProcessRequest {
            id: &episode.id,
            dialogue: &input.dialogue,
            grid: &input.grid_text,
            help: input.help.as_deref(),
            input: &input.compose(),
        };
        let mut guard = self.io.lock().map_err(|_| AgentError::Protocol("builder lock poisoned".into()))?;
        let (_, stdin, stdout) = &mut *guard;
        let line = serde_json::to_string(&request).map_err(|e| AgentError::Protocol(e.to_string()))?;
        writeln!(stdin, "{line}")?;
        stdin.flush()?;
        let mut reply = String::new();
        if stdout.read_line(&mut reply)? == 0 {
            return Err(AgentError::Protocol("builder process closed its output".into()));
        }
        let reply: ProcessReply =
            serde_json::from_str(&reply).map_err(|e| AgentError::Protocol(format!("bad reply {reply:?}: {e}")))?;
        Ok(reply.utterance)
    }
}

impl Drop for ProcessBuilder {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.io.lock() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

/// Held-out accuracies of the reference self-help classifiers, per kind.
pub fn default_predictor_accuracies() -> BTreeMap<HelpKind, f64> {
    BTreeMap::from([
        (HelpKind::Restrictive, 0.6235),
        (HelpKind::Corrective, 0.2988),
        (HelpKind::Length, 0.4022),
        (HelpKind::Mistake, 0.7040),
    ])
}

/// A simulated help classifier: right with probability `accuracy`, otherwise
/// a uniform draw over the wrong classes of its label space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfHelpPredictor {
    pub kind: HelpKind,
    pub accuracy: f64,
    pub seed: u64,
}

impl SelfHelpPredictor {
    pub fn new(kind: HelpKind, accuracy: f64, seed: u64) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(AgentError::InvalidProfile(format!("accuracy {accuracy} outside [0, 1]")));
        }
        Ok(Self { kind, accuracy, seed })
    }

    /// Number of classes the predictor chooses between.
    pub fn class_count(&self, scheme: &RegionScheme) -> usize {
        match self.kind {
            HelpKind::Restrictive => scheme.region_count(),
            HelpKind::Length | HelpKind::Mistake => BlockCount::CLASSES,
            HelpKind::Corrective => Direction::ALL.len(),
        }
    }

    fn payload_for_class(&self, class: usize, scheme: &RegionScheme) -> HelpPayload {
        match self.kind {
            HelpKind::Restrictive => HelpPayload::Restrictive {
                region: scheme.region(class).expect("class within region count"),
            },
            HelpKind::Length => {
                let count = BlockCount::from_class(class);
                HelpPayload::Length {
                    count,
                    together: count.lower_bound() <= 1,
                }
            }
            HelpKind::Corrective => HelpPayload::Corrective {
                direction: Direction::ALL[class],
                perfect: false,
            },
            HelpKind::Mistake => HelpPayload::Mistake {
                count: BlockCount::from_class(class),
            },
        }
    }

    /// Self-generated help for `episode`. Corrective and mistake predictors
    /// need the builder's initial prediction.
    pub fn predict(
        &self,
        ctx: &HelpContext,
        episode: &Episode,
        prediction: Option<&GridDiff>,
    ) -> Result<HelpMessage, AgentError> {
        if self.kind.needs_prediction() && prediction.is_none() {
            return Err(AgentError::MissingPrediction { kind: self.kind });
        }
        let label = format!("self-help:{}:{}", self.kind, episode.id);
        let seed = derive_seed(self.seed, &label);
        let mut rng = seeded(seed, "draw");
        let oracle = ctx.oracle(self.kind, &episode.gold, prediction, seed).ok();
        let classes = self.class_count(&ctx.scheme);
        let correct = rng.gen_bool(self.accuracy);
        if let (true, Some(oracle)) = (correct, &oracle) {
            return Ok(oracle.clone());
        }
        let choices: Vec<usize> = match &oracle {
            Some(o) => (0..classes).filter(|&c| c != o.payload.class()).collect(),
            None => (0..classes).collect(),
        };
        let class = *choices.choose(&mut rng).expect("label space has at least two classes");
        ctx.message(self.payload_for_class(class, &ctx.scheme), seed)
            .map_err(|e| AgentError::InvalidProfile(e.to_string()))
    }
}

/// Free-function form of [`SelfHelpPredictor::predict`].
pub fn predict_self_help(
    predictor: &SelfHelpPredictor,
    ctx: &HelpContext,
    episode: &Episode,
    prediction: Option<&GridDiff>,
) -> Result<HelpMessage, AgentError> {
    predictor.predict(ctx, episode, prediction)
}
