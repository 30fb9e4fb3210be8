//! Episodes and where they come from: the IGLU multi-turn importer, a seeded
//! synthetic generator, split bookkeeping, and the on-disk store
//! (`episodes.jsonl` + `manifest.json`).
//!
//! # Assumed IGLU source layout
//!
//! The importer reads JSON files holding either a top-level array of sessions
//! or an object with a `"sessions"` array. Each session is
//!
//! ```json
//! {"id": "game-17", "split": "train", "steps": [
//!   {"context": ["Architect: ...", "Builder: ..."],
//!    "instruction": "place a red block on top",
//!    "before": [[x, y, z], ...],
//!    "after":  [[x, y, z, color], ...]}
//! ]}
//! ```
//!
//! `split` may be omitted, in which case it is inferred from the file name
//! (`train`, `val`/`valid`/`dev`, `test`). Block entries may carry a trailing
//! color, which is ignored. Anything else is a schema error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::regions::{RegionScheme, Ring};
use crate::rng::seeded;
use crate::world::{Coordinate, GridBounds, GridDiff, GridState, WorldError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: record {index}: {message}")]
    SchemaError {
        path: PathBuf,
        index: usize,
        message: String,
    },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("invalid episode {id}: {reason}")]
    InvalidEpisode { id: String, reason: String },
    #[error("manifest does not match the episode store: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn from_file_name(name: &str) -> Option<Split> {
        let lower = name.to_ascii_lowercase();
        if lower.contains("train") {
            Some(Split::Train)
        } else if lower.contains("val") || lower.contains("dev") {
            Some(Split::Valid)
        } else if lower.contains("test") {
            Some(Split::Test)
        } else {
            None
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One instruction step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    /// Prior context followed by the latest Architect instruction.
    pub dialogue: String,
    pub grid_before: GridState,
    pub gold: GridDiff,
    pub split: Split,
}

impl Episode {
    pub fn bounds(&self) -> GridBounds {
        self.grid_before.bounds()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidEpisode {
            id: self.id.clone(),
            reason,
        };
        if self.dialogue.trim().is_empty() {
            return Err(invalid("dialogue is empty".into()));
        }
        self.grid_before
            .apply(&self.gold)
            .map_err(|e| invalid(format!("gold does not apply: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSourceKind {
    Imported,
    Synthetic,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(episodes: &[Episode]) -> Self {
        let mut counts = SplitCounts::default();
        for e in episodes {
            match e.split {
                Split::Train => counts.train += 1,
                Split::Valid => counts.valid += 1,
                Split::Test => counts.test += 1,
            }
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub counts: SplitCounts,
    pub source: CorpusSourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `episodes.jsonl` and `manifest.json` into `dir`.
pub fn write_corpus(
    dir: &Path,
    episodes: &[Episode],
    source: CorpusSourceKind,
    seed: Option<u64>,
) -> Result<CorpusManifest, CorpusError> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(EPISODES_FILE))?);
    for e in episodes {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let manifest = CorpusManifest {
        counts: SplitCounts::of(episodes),
        source,
        seed,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads and validates a corpus directory (or a bare `.jsonl` file).
pub fn read_corpus(path: &Path) -> Result<(Vec<Episode>, Option<CorpusManifest>), CorpusError> {
    let (episodes_path, manifest_path) = if path.is_dir() {
        (path.join(EPISODES_FILE), Some(path.join(MANIFEST_FILE)))
    } else {
        (path.to_path_buf(), None)
    };
    if !episodes_path.exists() {
        return Err(CorpusError::FileNotFound(episodes_path));
    }
    let reader = BufReader::new(fs::File::open(&episodes_path)?);
    let mut episodes = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: Episode = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaError {
            path: episodes_path.clone(),
            index,
            message: e.to_string(),
        })?;
        episode.validate()?;
        episodes.push(episode);
    }
    let manifest = match manifest_path.filter(|p| p.exists()) {
        Some(p) => {
            let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(p)?)?;
            let actual = SplitCounts::of(&episodes);
            if manifest.counts != actual {
                return Err(CorpusError::ManifestMismatch(format!(
                    "manifest says {:?}, store has {:?}",
                    manifest.counts, actual
                )));
            }
            Some(manifest)
        }
        None => None,
    };
    Ok((episodes, manifest))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ImportOptions {
    pub bounds: GridBounds,
    /// Source coordinates are 0-based grid indices; shift x and z so the
    /// grid is centred on the origin.
    pub recenter: bool,
    /// Split for records without one whose file name gives no hint.
    pub default_split: Split,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            bounds: GridBounds::default(),
            recenter: false,
            default_split: Split::Train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub file: PathBuf,
    pub session: usize,
    pub step: Option<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ImportReport {
    pub episodes: Vec<Episode>,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SourceFile {
    Sessions(Vec<Value>),
    Wrapped { sessions: Vec<Value> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSession {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    split: Option<String>,
    steps: Vec<Value>,
}

#[derive(Deserialize)]
struct SourceStep {
    #[serde(default)]
    context: Vec<String>,
    instruction: String,
    before: Vec<Vec<Value>>,
    after: Vec<Vec<Value>>,
}

/// Imports one IGLU JSON file, or every `*.json` file of a directory in name order.
pub fn import_iglu(path: &Path, options: &ImportOptions) -> Result<ImportReport, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut report = ImportReport::default();
    for file in files {
        import_file(&file, options, &mut report)?;
    }
    Ok(report)
}

fn import_file(path: &Path, options: &ImportOptions, report: &mut ImportReport) -> Result<(), CorpusError> {
    let text = fs::read_to_string(path)?;
    let sessions = match serde_json::from_str::<SourceFile>(&text) {
        Ok(SourceFile::Sessions(s)) | Ok(SourceFile::Wrapped { sessions: s }) => s,
        Err(e) => {
            return Err(CorpusError::SchemaError {
                path: path.to_path_buf(),
                index: 0,
                message: format!("expected an array of sessions or {{\"sessions\": [...]}}: {e}"),
            })
        }
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("iglu").to_string();
    let file_split = Split::from_file_name(&stem);
    for (si, raw) in sessions.into_iter().enumerate() {
        let session: SourceSession = serde_json::from_value(raw).map_err(|e| CorpusError::SchemaError {
            path: path.to_path_buf(),
            index: si,
            message: e.to_string(),
        })?;
        let split = match session.split.as_deref().map(Split::from_str) {
            Some(Ok(s)) => s,
            Some(Err(e)) => {
                skip(report, path, si, None, e);
                continue;
            }
            None => file_split.unwrap_or(options.default_split),
        };
        let session_id = session.id.unwrap_or_else(|| si.to_string());
        for (ti, raw_step) in session.steps.into_iter().enumerate() {
            let step: SourceStep = match serde_json::from_value(raw_step) {
                Ok(s) => s,
                Err(e) => {
                    skip(report, path, si, Some(ti), format!("malformed step: {e}"));
                    continue;
                }
            };
            match build_episode(&stem, &session_id, ti, step, split, options) {
                Ok(e) => report.episodes.push(e),
                Err(reason) => skip(report, path, si, Some(ti), reason),
            }
        }
    }
    Ok(())
}

fn skip(report: &mut ImportReport, path: &Path, session: usize, step: Option<usize>, reason: String) {
    log::warn!("skipping {}: session {session} step {step:?}: {reason}", path.display());
    report.skipped.push(SkippedRecord {
        file: path.to_path_buf(),
        session,
        step,
        reason,
    });
}

fn build_episode(
    stem: &str,
    session: &str,
    step_index: usize,
    step: SourceStep,
    split: Split,
    options: &ImportOptions,
) -> Result<Episode, String> {
    let blocks = |raw: &[Vec<Value>]| -> Result<Vec<Coordinate>, String> {
        let mut out = Vec::with_capacity(raw.len());
        for b in raw {
            if b.len() < 3 || b.len() > 4 {
                return Err(format!("block entry {b:?} must be [x, y, z] or [x, y, z, color]"));
            }
            let mut xyz = [0i32; 3];
            for (slot, v) in xyz.iter_mut().zip(b) {
                *slot = v
                    .as_i64()
                    .and_then(|n| i32::try_from(n).ok())
                    .ok_or_else(|| format!("non-integer coordinate in {b:?}"))?;
            }
            let shift = if options.recenter { 5 } else { 0 };
            out.push(Coordinate::new(xyz[0] - shift, xyz[1], xyz[2] - shift));
        }
        Ok(out)
    };
    let grid = |cells: Vec<Coordinate>| {
        // Colored sources can repeat a cell; occupancy is what matters.
        let unique: std::collections::BTreeSet<Coordinate> = cells.into_iter().collect();
        GridState::new(options.bounds, unique).map_err(|e: WorldError| e.to_string())
    };
    let before = grid(blocks(&step.before)?)?;
    let after = grid(blocks(&step.after)?)?;
    let gold = before.diff_to(&after).map_err(|e| e.to_string())?;
    let mut dialogue: Vec<&str> = step.context.iter().map(String::as_str).collect();
    if step.instruction.trim().is_empty() {
        return Err("empty instruction".into());
    }
    dialogue.push(step.instruction.trim());
    let episode = Episode {
        id: format!("{stem}:{session}:{step_index}"),
        dialogue: dialogue.join("\n"),
        grid_before: before,
        gold,
        split,
    };
    episode.validate().map_err(|e| e.to_string())?;
    Ok(episode)
}

/// Shape families for synthetic episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Single,
    Row,
    Tower,
    LShape,
    Square,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Single,
        ShapeKind::Row,
        ShapeKind::Tower,
        ShapeKind::LShape,
        ShapeKind::Square,
    ];
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single" => Ok(ShapeKind::Single),
            "row" => Ok(ShapeKind::Row),
            "tower" | "column" => Ok(ShapeKind::Tower),
            "l_shape" | "l" => Ok(ShapeKind::LShape),
            "square" => Ok(ShapeKind::Square),
            other => Err(format!("unknown shape {other:?}")),
        }
    }
}

const NUMBER_WORDS: [&str; 7] = ["zero", "one", "two", "three", "four", "five", "six"];

/// Relative cells and an instruction fragment for one randomly sized shape.
fn sample_shape(kind: ShapeKind, rng: &mut impl Rng) -> (Vec<(i32, i32, i32)>, String) {
    match kind {
        ShapeKind::Single => (vec![(0, 0, 0)], "place a single block".into()),
        ShapeKind::Row => {
            let n = rng.gen_range(2..=4);
            let along_x = rng.gen_bool(0.5);
            let cells = (0..n).map(|i| if along_x { (i, 0, 0) } else { (0, 0, i) }).collect();
            let way = if along_x { "from left to right" } else { "from front to back" };
            (cells, format!("make a row of {} blocks {way}", NUMBER_WORDS[n as usize]))
        }
        ShapeKind::Tower => {
            let n = rng.gen_range(2..=4);
            (
                (0..n).map(|i| (0, i, 0)).collect(),
                format!("build a column {} tall", NUMBER_WORDS[n as usize]),
            )
        }
        ShapeKind::LShape => {
            let arm = rng.gen_range(2..=3);
            let leg = rng.gen_range(1..=2);
            let along_x = rng.gen_bool(0.5);
            let mut cells: Vec<_> = (0..arm).map(|i| if along_x { (i, 0, 0) } else { (0, 0, i) }).collect();
            cells.extend((1..=leg).map(|j| (0, j, 0)));
            let n = cells.len();
            (cells, format!("build an L shape out of {} blocks", NUMBER_WORDS[n]))
        }
        ShapeKind::Square => (
            vec![(0, 0, 0), (1, 0, 0), (0, 0, 1), (1, 0, 1)],
            "lay a flat two by two square".into(),
        ),
    }
}

fn location_phrase(c: Coordinate, bounds: GridBounds) -> String {
    let scheme = RegionScheme::default();
    let region = scheme.region_of(c, bounds).expect("anchor in bounds");
    let center = scheme.region_for(Ring::Center, region.index % 4);
    if region == center {
        "near the middle".to_string()
    } else {
        format!("out toward the far {}", center.name)
    }
}

/// Places a sampled shape at a random anchor where it fits in bounds and
/// avoids `occupied`. Gives up after a fixed number of tries.
fn place_shape(
    kind: ShapeKind,
    bounds: GridBounds,
    occupied: &GridState,
    rng: &mut impl Rng,
) -> Option<(Vec<Coordinate>, String)> {
    for _ in 0..64 {
        let (rel, text) = sample_shape(kind, rng);
        let anchor = Coordinate::new(
            rng.gen_range(bounds.x().0..=bounds.x().1),
            rng.gen_range(bounds.y().0..=bounds.y().1),
            rng.gen_range(bounds.z().0..=bounds.z().1),
        );
        let cells: Vec<Coordinate> = rel.iter().map(|&(dx, dy, dz)| anchor.offset(dx, dy, dz)).collect();
        if cells.iter().all(|&c| bounds.contains(c) && !occupied.is_occupied(c)) {
            return Some((cells, format!("{text} {}", location_phrase(anchor, bounds))));
        }
    }
    None
}

/// Procedural episodes from parametric shapes, fully determined by `seed`.
/// About half of them start from a grid that already holds an earlier shape,
/// whose instruction becomes prior dialogue context.
pub fn generate_synthetic(seed: u64, n: usize, catalog: &[ShapeKind], bounds: GridBounds) -> Vec<Episode> {
    let catalog = if catalog.is_empty() { &ShapeKind::ALL[..] } else { catalog };
    let mut rng = seeded(seed, "synthetic");
    let mut episodes = Vec::with_capacity(n);
    while episodes.len() < n {
        let index = episodes.len();
        let mut before = GridState::empty(bounds);
        let mut dialogue = Vec::new();
        if rng.gen_bool(0.5) {
            let kind = *catalog.choose(&mut rng).expect("non-empty catalog");
            if let Some((cells, text)) = place_shape(kind, bounds, &before, &mut rng) {
                before = GridState::new(bounds, cells).expect("placed in bounds");
                dialogue.push(format!("Architect: {text}"));
                dialogue.push("Builder: done.".to_string());
            }
        }
        let kind = *catalog.choose(&mut rng).expect("non-empty catalog");
        let Some((cells, text)) = place_shape(kind, bounds, &before, &mut rng) else {
            continue;
        };
        dialogue.push(format!("Architect: {text}"));
        episodes.push(Episode {
            id: format!("syn-{seed}-{index:05}"),
            dialogue: dialogue.join("\n"),
            grid_before: before,
            gold: GridDiff::additions(cells),
            split: Split::Train,
        });
    }
    episodes
}

/// Episodes grouped by split.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Episode>,
    pub valid: Vec<Episode>,
    pub test: Vec<Episode>,
}

/// Seeded shuffle, then partition by `fractions` (train, valid, test).
/// Each episode's `split` field is rewritten to match its bucket.
pub fn split(episodes: Vec<Episode>, fractions: [f64; 3], seed: u64) -> Result<Splits, CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(fractions));
    }
    let mut episodes = episodes;
    episodes.shuffle(&mut seeded(seed, "split"));
    let n = episodes.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut test = episodes.split_off(n_train + n_valid);
    let mut valid = episodes.split_off(n_train);
    let mut train = episodes;
    for (bucket, s) in [(&mut train, Split::Train), (&mut valid, Split::Valid), (&mut test, Split::Test)] {
        for e in bucket.iter_mut() {
            e.split = s;
        }
    }
    Ok(Splits { train, valid, test })
}

impl Splits {
    pub fn into_vec(self) -> Vec<Episode> {
        let mut all = self.train;
        all.extend(self.valid);
        all.extend(self.test);
        all
    }
}

/// Lookup table from episode id.
pub fn index_by_id(episodes: &[Episode]) -> BTreeMap<String, Episode> {
    episodes.iter().map(|e| (e.id.clone(), e.clone())).collect()
}
