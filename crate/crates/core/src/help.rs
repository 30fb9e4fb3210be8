//! The four help types: oracles that compute help from gold data, slot-filled
//! rendering from train/test template banks, and a rule-based normalizer that
//! maps free-form help text back to a canonical payload.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regions::{RegionError, RegionId, RegionScheme, Ring};
use crate::rng::seeded;
use crate::world::{Coordinate, GridBounds, GridDiff};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HelpError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("corrective help needs a non-empty prediction")]
    EmptyPrediction,
    #[error("help needs a gold diff with at least one added block")]
    EmptyGold,
    #[error("no {bank} templates for {kind} help")]
    EmptyBank { kind: HelpKind, bank: Bank },
    #[error("invalid template bank: {0}")]
    InvalidBank(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HelpKind {
    Restrictive,
    Length,
    Corrective,
    Mistake,
}

impl HelpKind {
    pub const ALL: [HelpKind; 4] = [
        HelpKind::Restrictive,
        HelpKind::Length,
        HelpKind::Corrective,
        HelpKind::Mistake,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HelpKind::Restrictive => "restrictive",
            HelpKind::Length => "length",
            HelpKind::Corrective => "corrective",
            HelpKind::Mistake => "mistake",
        }
    }

    /// Whether this help is computed from an initial prediction.
    pub fn needs_prediction(self) -> bool {
        matches!(self, HelpKind::Corrective | HelpKind::Mistake)
    }

    /// The placeholder its templates must contain.
    pub fn slot(self) -> &'static str {
        match self {
            HelpKind::Restrictive => "{region}",
            HelpKind::Length | HelpKind::Mistake => "{count}",
            HelpKind::Corrective => "{direction}",
        }
    }
}

impl fmt::Display for HelpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HelpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "restrictive" | "region" => Ok(HelpKind::Restrictive),
            "length" | "length-based" => Ok(HelpKind::Length),
            "corrective" | "direction" => Ok(HelpKind::Corrective),
            "mistake" | "mistake-based" => Ok(HelpKind::Mistake),
            other => Err(format!("unknown help kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    /// Unit step as `(dx, dy)`.
    pub fn step(self) -> (i32, i32) {
        match self {
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// A block count as help can state it: exact, or the open-ended "more than 5" class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockCount {
    Exactly(usize),
    MoreThanFive,
}

impl BlockCount {
    /// Number of classes in the count label space: 0..=5 and "more than 5".
    pub const CLASSES: usize = 7;

    pub fn class(self) -> usize {
        match self {
            BlockCount::Exactly(n) => n.min(6),
            BlockCount::MoreThanFive => 6,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class >= 6 {
            BlockCount::MoreThanFive
        } else {
            BlockCount::Exactly(class)
        }
    }

    pub fn matches(self, n: usize) -> bool {
        match self {
            BlockCount::Exactly(k) => k == n,
            BlockCount::MoreThanFive => n > 5,
        }
    }

    /// Smallest count consistent with this value.
    pub fn lower_bound(self) -> usize {
        match self {
            BlockCount::Exactly(n) => n,
            BlockCount::MoreThanFive => 6,
        }
    }

    pub fn phrase(self) -> String {
        match self {
            BlockCount::Exactly(1) => "1 block".to_string(),
            BlockCount::Exactly(n) => format!("{n} blocks"),
            BlockCount::MoreThanFive => "more than 5 blocks".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HelpPayload {
    Restrictive {
        region: RegionId,
    },
    Length {
        count: BlockCount,
        /// All blocks form one face-connected group.
        together: bool,
    },
    Corrective {
        direction: Direction,
        /// The prediction is already within half a cell of the target on both axes.
        #[serde(default)]
        perfect: bool,
    },
    Mistake {
        count: BlockCount,
    },
}

impl HelpPayload {
    pub fn kind(&self) -> HelpKind {
        match self {
            HelpPayload::Restrictive { .. } => HelpKind::Restrictive,
            HelpPayload::Length { .. } => HelpKind::Length,
            HelpPayload::Corrective { .. } => HelpKind::Corrective,
            HelpPayload::Mistake { .. } => HelpKind::Mistake,
        }
    }

    /// Class index within the kind's label space (region index, count class or direction).
    pub fn class(&self) -> usize {
        match self {
            HelpPayload::Restrictive { region } => region.index,
            HelpPayload::Length { count, .. } | HelpPayload::Mistake { count } => count.class(),
            HelpPayload::Corrective { direction, .. } => {
                Direction::ALL.iter().position(|d| d == direction).unwrap_or(0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bank {
    Train,
    Test,
}

impl Default for Bank {
    fn default() -> Self {
        Bank::Test
    }
}

impl fmt::Display for Bank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bank::Train => "train",
            Bank::Test => "test",
        })
    }
}

/// A canonical help value and the sentence that carries it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelpMessage {
    pub payload: HelpPayload,
    pub utterance: String,
    /// Template bank the utterance came from; `None` for free-form text.
    pub bank: Option<Bank>,
}

impl HelpMessage {
    pub fn kind(&self) -> HelpKind {
        self.payload.kind()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTemplates {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Slot templates per help kind, split into train and test language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<HelpKind, KindTemplates>", into = "BTreeMap<HelpKind, KindTemplates>")]
pub struct TemplateBank {
    kinds: BTreeMap<HelpKind, KindTemplates>,
}

impl TryFrom<BTreeMap<HelpKind, KindTemplates>> for TemplateBank {
    type Error = HelpError;

    fn try_from(kinds: BTreeMap<HelpKind, KindTemplates>) -> Result<Self, Self::Error> {
        let bank = TemplateBank { kinds };
        bank.validate()?;
        Ok(bank)
    }
}

impl From<TemplateBank> for BTreeMap<HelpKind, KindTemplates> {
    fn from(b: TemplateBank) -> Self {
        b.kinds
    }
}

const TOGETHER_CLAUSE: &str = "Place them together.";

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl TemplateBank {
    pub fn builtin() -> Self {
        let mut kinds = BTreeMap::new();
        kinds.insert(
            HelpKind::Restrictive,
            KindTemplates {
                train: strings(&[
                    "Place the block in the {region} region.",
                    "Put the blocks in the {region} region.",
                    "The blocks belong in the {region} area.",
                    "Build in the {region} region.",
                ]),
                test: strings(&[
                    "Try the {region} region.",
                    "Your blocks should go in the {region} part of the grid.",
                    "Focus on the {region} section.",
                    "Everything goes in the {region} zone.",
                ]),
            },
        );
        kinds.insert(
            HelpKind::Length,
            KindTemplates {
                train: strings(&[
                    "You should place {count}.",
                    "Place exactly {count}.",
                    "This step needs {count}.",
                    "Use {count} for this instruction.",
                ]),
                test: strings(&[
                    "The answer has {count}.",
                    "Try building with {count}.",
                    "I am looking for {count} here.",
                    "Put down {count} in total.",
                ]),
            },
        );
        kinds.insert(
            HelpKind::Corrective,
            KindTemplates {
                train: strings(&[
                    "Place the block more to the {direction}.",
                    "Look {direction}.",
                    "Move it {direction}.",
                    "Shift your blocks {direction}.",
                ]),
                test: strings(&[
                    "Go a bit further {direction}.",
                    "Nudge everything {direction}.",
                    "Try more {direction}.",
                    "Adjust {direction}.",
                ]),
            },
        );
        kinds.insert(
            HelpKind::Mistake,
            KindTemplates {
                train: strings(&[
                    "You placed {count} incorrectly.",
                    "You got {count} wrong.",
                    "There are {count} in the wrong spot.",
                    "Mistakes: {count}.",
                ]),
                test: strings(&[
                    "Wrong placements: {count}.",
                    "I count {count} placed incorrectly.",
                    "Check again, {count} are misplaced.",
                    "Your mistakes add up to {count}.",
                ]),
            },
        );
        TemplateBank { kinds }
    }

    /// Loads a bank from JSON of the form `{"restrictive": {"train": [...], "test": [...]}, ...}`.
    pub fn from_json(text: &str) -> Result<Self, HelpError> {
        serde_json::from_str(text).map_err(|e| HelpError::InvalidBank(e.to_string()))
    }

    /// Checks slot usage and that train and test language never overlap.
    pub fn validate(&self) -> Result<(), HelpError> {
        for (kind, t) in &self.kinds {
            let train: BTreeSet<&String> = t.train.iter().collect();
            if let Some(dup) = t.test.iter().find(|s| train.contains(s)) {
                return Err(HelpError::InvalidBank(format!(
                    "{kind} template {dup:?} is in both train and test"
                )));
            }
            for template in t.train.iter().chain(&t.test) {
                if template.matches(kind.slot()).count() != 1 {
                    return Err(HelpError::InvalidBank(format!(
                        "{kind} template {template:?} must contain {} exactly once",
                        kind.slot()
                    )));
                }
                if template.matches('{').count() != 1 {
                    return Err(HelpError::InvalidBank(format!(
                        "{kind} template {template:?} has unknown slots"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn templates(&self, kind: HelpKind, bank: Bank) -> &[String] {
        self.kinds
            .get(&kind)
            .map(|t| match bank {
                Bank::Train => t.train.as_slice(),
                Bank::Test => t.test.as_slice(),
            })
            .unwrap_or(&[])
    }

    /// Fills a seeded, uniformly chosen template with the payload.
    pub fn render(&self, payload: &HelpPayload, bank: Bank, seed: u64) -> Result<String, HelpError> {
        let kind = payload.kind();
        let mut rng = seeded(seed, &format!("template:{kind}:{bank}"));
        let template = self
            .templates(kind, bank)
            .choose(&mut rng)
            .ok_or(HelpError::EmptyBank { kind, bank })?;
        Ok(match payload {
            HelpPayload::Restrictive { region } => template.replace("{region}", &region.name),
            HelpPayload::Length { count, together } => {
                let text = template.replace("{count}", &count.phrase());
                if *together && count.lower_bound() >= 2 {
                    format!("{text} {TOGETHER_CLAUSE}")
                } else {
                    text
                }
            }
            HelpPayload::Corrective { direction, .. } => template.replace("{direction}", direction.word()),
            HelpPayload::Mistake { count } => template.replace("{count}", &count.phrase()),
        })
    }
}

impl Default for TemplateBank {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Everything needed to compute and phrase help for one grid setup.
#[derive(Clone, Debug)]
pub struct HelpContext {
    pub scheme: RegionScheme,
    pub bounds: GridBounds,
    pub templates: Arc<TemplateBank>,
    pub bank: Bank,
}

impl Default for HelpContext {
    fn default() -> Self {
        Self {
            scheme: RegionScheme::default(),
            bounds: GridBounds::default(),
            templates: Arc::new(TemplateBank::builtin()),
            bank: Bank::Test,
        }
    }
}

impl HelpContext {
    pub fn message(&self, payload: HelpPayload, seed: u64) -> Result<HelpMessage, HelpError> {
        let utterance = self.templates.render(&payload, self.bank, seed)?;
        Ok(HelpMessage {
            payload,
            utterance,
            bank: Some(self.bank),
        })
    }

    pub fn restrictive_oracle(&self, gold: &GridDiff, seed: u64) -> Result<HelpMessage, HelpError> {
        self.message(restrictive_payload(gold, &self.scheme, self.bounds, seed)?, seed)
    }

    pub fn length_oracle(&self, gold: &GridDiff, seed: u64) -> Result<HelpMessage, HelpError> {
        self.message(length_payload(gold), seed)
    }

    pub fn corrective_oracle(
        &self,
        prediction: &GridDiff,
        gold: &GridDiff,
        seed: u64,
    ) -> Result<HelpMessage, HelpError> {
        self.message(corrective_payload(prediction, gold)?, seed)
    }

    pub fn mistake_oracle(
        &self,
        prediction: &GridDiff,
        gold: &GridDiff,
        seed: u64,
    ) -> Result<HelpMessage, HelpError> {
        self.message(mistake_payload(prediction, gold), seed)
    }

    /// Oracle help of any kind; `prediction` is required for corrective and mistake help.
    pub fn oracle(
        &self,
        kind: HelpKind,
        gold: &GridDiff,
        prediction: Option<&GridDiff>,
        seed: u64,
    ) -> Result<HelpMessage, HelpError> {
        let empty = GridDiff::default();
        let pred = prediction.unwrap_or(&empty);
        match kind {
            HelpKind::Restrictive => self.restrictive_oracle(gold, seed),
            HelpKind::Length => self.length_oracle(gold, seed),
            HelpKind::Corrective => self.corrective_oracle(pred, gold, seed),
            HelpKind::Mistake => self.mistake_oracle(pred, gold, seed),
        }
    }

    pub fn normalize(&self, text: &str) -> Result<HelpMessage, Unrecognized> {
        normalize_help(text, &self.scheme)
    }
}

pub fn restrictive_payload(
    gold: &GridDiff,
    scheme: &RegionScheme,
    bounds: GridBounds,
    seed: u64,
) -> Result<HelpPayload, HelpError> {
    let region = scheme.pick_region_for_diff(gold, bounds, seed).map_err(|e| match e {
        RegionError::EmptyDiff => HelpError::EmptyGold,
        other => HelpError::Region(other),
    })?;
    Ok(HelpPayload::Restrictive { region })
}

pub fn length_payload(gold: &GridDiff) -> HelpPayload {
    HelpPayload::Length {
        count: BlockCount::Exactly(gold.added().len()),
        together: is_connected(gold.added()),
    }
}

/// Direction along x (left/right) or y (up/down) with the largest centroid
/// displacement from prediction to gold. Horizontal wins ties. When both
/// components are under half a cell the answer is `up` with `perfect` set.
pub fn corrective_payload(prediction: &GridDiff, gold: &GridDiff) -> Result<HelpPayload, HelpError> {
    let p = prediction.centroid().ok_or(HelpError::EmptyPrediction)?;
    let g = gold.centroid().ok_or(HelpError::EmptyGold)?;
    let dx = g[0] - p[0];
    let dy = g[1] - p[1];
    if dx.abs() < 0.5 && dy.abs() < 0.5 {
        return Ok(HelpPayload::Corrective {
            direction: Direction::Up,
            perfect: true,
        });
    }
    let direction = if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dy > 0.0 {
        Direction::Up
    } else {
        Direction::Down
    };
    Ok(HelpPayload::Corrective {
        direction,
        perfect: false,
    })
}

pub fn mistake_payload(prediction: &GridDiff, gold: &GridDiff) -> HelpPayload {
    HelpPayload::Mistake {
        count: BlockCount::Exactly(prediction.added().difference(gold.added()).count()),
    }
}

/// Face-adjacency connectivity; empty and singleton sets are connected.
pub fn is_connected(blocks: &BTreeSet<Coordinate>) -> bool {
    let Some(&start) = blocks.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in c.neighbours() {
            if blocks.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == blocks.len()
}

/// Free-form help that could not be mapped to a single canonical payload.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[error("unrecognized help {text:?}: {reason}")]
pub struct Unrecognized {
    pub text: String,
    pub reason: String,
}

const PLACING_VERBS: &[&str] = &["put", "set", "lay", "place", "placed"];

/// Maps free-form help text to canonical help using keyword and number rules.
///
/// Returns [`Unrecognized`] instead of guessing when the text matches no help
/// type or more than one.
pub fn normalize_help(text: &str, scheme: &RegionScheme) -> Result<HelpMessage, Unrecognized> {
    let fail = |reason: &str| Unrecognized {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    let tokens: Vec<String> = text
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(fail("empty help"));
    }
    let tokens: Vec<&str> = tokens.iter().map(String::as_str).collect();

    let count = extract_count(&tokens).map_err(|r| fail(&r))?;
    let has = |words: &[&str]| tokens.iter().any(|t| words.contains(t));
    let mistake_cue = has(MISTAKE_WORDS);
    let region = extract_region(&tokens, scheme).map_err(|r| fail(&r))?;
    let consumed_horizontal = region.is_some();
    // "put down" / "set down" is about placing, not a direction.
    let directions: BTreeSet<Direction> = tokens
        .iter()
        .enumerate()
        .filter(|&(i, t)| !(*t == "down" && i > 0 && PLACING_VERBS.contains(&tokens[i - 1])))
        .filter_map(|(_, t)| direction_word(t))
        .filter(|d| !(consumed_horizontal && matches!(d, Direction::Left | Direction::Right)))
        .collect();

    let payload = if mistake_cue {
        let count = count.ok_or_else(|| fail("mistake help without a count"))?;
        HelpPayload::Mistake { count }
    } else if let Some(region) = region {
        if count.is_some() || !directions.is_empty() {
            return Err(fail("mixes a region with other help"));
        }
        HelpPayload::Restrictive { region }
    } else if let Some(count) = count {
        if !directions.is_empty() {
            return Err(fail("mixes a count with a direction"));
        }
        if !has(COUNT_NOUNS) {
            return Err(fail("number without anything to count"));
        }
        let together = count.lower_bound() <= 1 || has(TOGETHER_WORDS);
        HelpPayload::Length { count, together }
    } else if directions.len() == 1 {
        HelpPayload::Corrective {
            direction: *directions.iter().next().expect("one direction"),
            perfect: false,
        }
    } else if directions.len() > 1 {
        return Err(fail("more than one direction"));
    } else {
        return Err(fail("no help concept found"));
    };
    Ok(HelpMessage {
        payload,
        utterance: text.to_string(),
        bank: None,
    })
}

const MISTAKE_WORDS: &[&str] = &[
    "wrong",
    "incorrect",
    "incorrectly",
    "mistake",
    "mistakes",
    "misplaced",
    "error",
    "errors",
];
const COUNT_NOUNS: &[&str] = &["block", "blocks", "cube", "cubes", "piece", "pieces", "tall", "long"];
const TOGETHER_WORDS: &[&str] = &["together", "connected", "touching", "adjacent", "tower", "stack"];
const UPPER_WORDS: &[&str] = &["upper", "top"];
const LOWER_WORDS: &[&str] = &["lower", "bottom"];
const UPPER_EXTREME: &[&str] = &["upmost", "uppermost", "topmost", "highest"];
const LOWER_EXTREME: &[&str] = &["lowermost", "bottommost", "lowest"];
const OUTER_WORDS: &[&str] = &["outer", "outside", "far", "edge", "corner", "border"];
const INNER_WORDS: &[&str] = &["inner", "innermost", "core"];
const CENTER_WORDS: &[&str] = &["center", "centre", "middle", "central"];

fn number_word(t: &str) -> Option<usize> {
    if t.bytes().all(|b| b.is_ascii_digit()) {
        return t.parse().ok();
    }
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    WORDS.iter().position(|w| *w == t).or(match t {
        "single" | "once" => Some(1),
        "none" | "no" => Some(0),
        _ => None,
    })
}

/// Finds at most one count in the text.
fn extract_count(tokens: &[&str]) -> Result<Option<BlockCount>, String> {
    let mut found: BTreeSet<(usize, bool)> = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        if (t == "more" || t == "over") && i + 1 < tokens.len() {
            let (skip, next) = if tokens[i + 1] == "than" { (2, tokens.get(i + 2)) } else { (1, tokens.get(i + 1)) };
            if let Some(n) = next.and_then(|n| number_word(n)) {
                if n >= 5 {
                    found.insert((6, true));
                    i += skip + 1;
                    continue;
                }
                return Err(format!("open-ended count above {n} is not a help class"));
            }
        }
        if t == "least" && i > 0 && tokens[i - 1] == "at" {
            if let Some(n) = tokens.get(i + 1).and_then(|n| number_word(n)) {
                if n == 6 {
                    found.insert((6, true));
                    i += 2;
                    continue;
                }
            }
        }
        if let Some(n) = number_word(t) {
            // "no" only counts as zero when it quantifies something countable.
            let quantifies = !matches!(t, "no")
                || tokens
                    .get(i + 1)
                    .is_some_and(|n| COUNT_NOUNS.contains(n) || MISTAKE_WORDS.contains(n));
            if quantifies {
                if tokens.get(i + 1..i + 3) == Some(&["or", "more"]) && n == 6 {
                    found.insert((6, true));
                    i += 3;
                    continue;
                }
                found.insert((n, false));
            }
        }
        i += 1;
    }
    match found.len() {
        0 => Ok(None),
        1 => {
            let (n, open) = found.into_iter().next().expect("one element");
            Ok(Some(if open { BlockCount::MoreThanFive } else { BlockCount::Exactly(n) }))
        }
        _ => Err("more than one number".to_string()),
    }
}

fn direction_word(t: &str) -> Option<Direction> {
    match t {
        "left" | "leftward" | "leftwards" => Some(Direction::Left),
        "right" | "rightward" | "rightwards" => Some(Direction::Right),
        "up" | "upward" | "upwards" => Some(Direction::Up),
        "down" | "downward" | "downwards" => Some(Direction::Down),
        _ => None,
    }
}

fn extract_region(tokens: &[&str], scheme: &RegionScheme) -> Result<Option<RegionId>, String> {
    let mut upper = 0;
    let mut lower = 0;
    let mut extreme = false;
    let mut previous_vertical: Option<bool> = None;
    let mut repeated = false;
    for t in tokens {
        let vertical = if UPPER_WORDS.contains(t) {
            Some(true)
        } else if LOWER_WORDS.contains(t) {
            Some(false)
        } else if UPPER_EXTREME.contains(t) {
            extreme = true;
            Some(true)
        } else if LOWER_EXTREME.contains(t) {
            extreme = true;
            Some(false)
        } else {
            None
        };
        match vertical {
            Some(is_upper) => {
                if previous_vertical == Some(is_upper) {
                    repeated = true;
                }
                if is_upper {
                    upper += 1;
                } else {
                    lower += 1;
                }
            }
            None => {}
        }
        previous_vertical = vertical;
    }
    if upper == 0 && lower == 0 {
        return Ok(None);
    }
    if upper > 0 && lower > 0 {
        return Err("names both upper and lower".to_string());
    }
    let left = tokens.iter().any(|t| *t == "left");
    let right = tokens.iter().any(|t| *t == "right");
    let quadrant = match (upper > 0, left, right) {
        (_, true, true) => return Err("names both left and right".to_string()),
        (_, false, false) => return Ok(None),
        (true, false, true) => 0,
        (true, true, false) => 1,
        (false, true, false) => 2,
        (false, false, true) => 3,
    };
    let negated = tokens.iter().any(|t| matches!(*t, "not" | "outside" | "away"));
    let center = tokens.iter().any(|t| CENTER_WORDS.contains(t));
    let ring = if extreme || repeated || tokens.iter().any(|t| OUTER_WORDS.contains(t)) || (center && negated) {
        Ring::Outer
    } else if tokens.iter().any(|t| INNER_WORDS.contains(t)) {
        Ring::Inner
    } else {
        Ring::Center
    };
    let ring = match (ring, scheme.kind) {
        (Ring::Inner, crate::regions::SchemeKind::CenterSplit12) => Ring::Inner,
        (Ring::Inner, _) => Ring::Center,
        (r, _) => r,
    };
    Ok(Some(scheme.region_for(ring, quadrant)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::SchemeKind;

    fn c(x: i32, y: i32, z: i32) -> Coordinate {
        Coordinate::new(x, y, z)
    }

    fn single_template(kind: HelpKind, template: &str) -> TemplateBank {
        let mut kinds = BTreeMap::new();
        kinds.insert(
            kind,
            KindTemplates {
                train: vec![template.to_string()],
                test: vec![],
            },
        );
        TemplateBank::try_from(kinds).unwrap()
    }

    fn ctx_with(bank: TemplateBank, which: Bank) -> HelpContext {
        HelpContext {
            templates: Arc::new(bank),
            bank: which,
            ..HelpContext::default()
        }
    }

    #[test]
    fn restrictive_upper_left_center() {
        let ctx = ctx_with(
            single_template(HelpKind::Restrictive, "Place the block in the {region} region."),
            Bank::Train,
        );
        let gold = GridDiff::additions([c(-1, 5, 0)]);
        let msg = ctx.restrictive_oracle(&gold, 11).unwrap();
        assert_eq!(msg.utterance, "Place the block in the upper left region.");
        assert_eq!(msg.kind(), HelpKind::Restrictive);
    }

    #[test]
    fn restrictive_two_regions_both_observable() {
        let ctx = HelpContext::default();
        let gold = GridDiff::additions([c(-1, 5, 0), c(4, 0, 0)]);
        let names: BTreeSet<String> = (0..32)
            .map(|s| match ctx.restrictive_oracle(&gold, s).unwrap().payload {
                HelpPayload::Restrictive { region } => region.name,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(names.len(), 2);
        assert_eq!(ctx.restrictive_oracle(&GridDiff::default(), 0), Err(HelpError::EmptyGold));
    }

    #[test]
    fn length_examples() {
        let ctx = ctx_with(single_template(HelpKind::Length, "You should place {count}."), Bank::Train);
        let three = GridDiff::additions([c(0, 0, 0), c(3, 0, 0), c(-3, 0, 0)]);
        assert_eq!(ctx.length_oracle(&three, 0).unwrap().utterance, "You should place 3 blocks.");
        assert_eq!(
            length_payload(&GridDiff::default()),
            HelpPayload::Length {
                count: BlockCount::Exactly(0),
                together: true
            }
        );
        let tower = GridDiff::additions([c(0, 0, 0), c(0, 1, 0), c(0, 2, 0)]);
        assert_eq!(
            length_payload(&tower),
            HelpPayload::Length {
                count: BlockCount::Exactly(3),
                together: true
            }
        );
        assert_eq!(
            ctx.length_oracle(&tower, 0).unwrap().utterance,
            "You should place 3 blocks. Place them together."
        );
    }

    #[test]
    fn corrective_examples() {
        // Centroid x 0 -> 2 on a tie-free layout.
        let pred = GridDiff::additions([c(0, 0, 0)]);
        let gold = GridDiff::additions([c(2, 0, 0)]);
        assert_eq!(
            corrective_payload(&pred, &gold).unwrap(),
            HelpPayload::Corrective {
                direction: Direction::Right,
                perfect: false
            }
        );
        assert_eq!(
            corrective_payload(&gold, &gold).unwrap(),
            HelpPayload::Corrective {
                direction: Direction::Up,
                perfect: true
            }
        );
        let pred = GridDiff::additions([c(2, 2, 0)]);
        let gold = GridDiff::additions([c(0, 3, 0)]);
        assert_eq!(
            corrective_payload(&pred, &gold).unwrap(),
            HelpPayload::Corrective {
                direction: Direction::Left,
                perfect: false
            }
        );
        assert_eq!(corrective_payload(&GridDiff::default(), &gold), Err(HelpError::EmptyPrediction));
        assert_eq!(corrective_payload(&gold, &GridDiff::default()), Err(HelpError::EmptyGold));
    }

    #[test]
    fn mistake_examples() {
        let (a, b, cc, d) = (c(0, 0, 0), c(1, 0, 0), c(2, 0, 0), c(3, 0, 0));
        let count = |p: &[Coordinate], g: &[Coordinate]| {
            mistake_payload(&GridDiff::additions(p.to_vec()), &GridDiff::additions(g.to_vec()))
        };
        assert_eq!(count(&[a, b, cc], &[a, d]), HelpPayload::Mistake { count: BlockCount::Exactly(2) });
        assert_eq!(count(&[a, d], &[a, d]), HelpPayload::Mistake { count: BlockCount::Exactly(0) });
        assert_eq!(count(&[], &[a, d]), HelpPayload::Mistake { count: BlockCount::Exactly(0) });
    }

    #[test]
    fn render_is_seeded_and_uses_bank() {
        let bank = single_template(HelpKind::Mistake, "You placed {count} incorrectly");
        let payload = HelpPayload::Mistake {
            count: BlockCount::Exactly(2),
        };
        assert_eq!(bank.render(&payload, Bank::Train, 0).unwrap(), "You placed 2 blocks incorrectly");
        assert_eq!(
            bank.render(&payload, Bank::Test, 0),
            Err(HelpError::EmptyBank {
                kind: HelpKind::Mistake,
                bank: Bank::Test
            })
        );
        let builtin = TemplateBank::builtin();
        for seed in 0..20 {
            assert_eq!(
                builtin.render(&payload, Bank::Test, seed).unwrap(),
                builtin.render(&payload, Bank::Test, seed).unwrap()
            );
        }
    }

    #[test]
    fn bank_validation() {
        let mut kinds = BTreeMap::new();
        kinds.insert(
            HelpKind::Length,
            KindTemplates {
                train: vec!["Place {count}.".into()],
                test: vec!["Place {count}.".into()],
            },
        );
        assert!(TemplateBank::try_from(kinds).is_err());
        assert!(TemplateBank::from_json(r#"{"corrective":{"train":["Go {region}."],"test":[]}}"#).is_err());
        let ok = TemplateBank::from_json(r#"{"corrective":{"train":["Go {direction}."],"test":["Try {direction}."]}}"#)
            .unwrap();
        assert_eq!(ok.templates(HelpKind::Corrective, Bank::Test), ["Try {direction}."]);
        TemplateBank::builtin().validate().unwrap();
    }

    #[test]
    fn builtin_bank_sizes() {
        let bank = TemplateBank::builtin();
        for kind in HelpKind::ALL {
            assert!(bank.templates(kind, Bank::Train).len() >= 4);
            assert!(bank.templates(kind, Bank::Test).len() >= 4);
        }
    }

    #[test]
    fn normalize_examples() {
        let s = RegionScheme::default();
        let region = normalize_help("put it somewhere in the top left", &s).unwrap();
        assert_eq!(region.payload, HelpPayload::Restrictive { region: s.region_by_name("upper left").unwrap() });
        let length = normalize_help("you need three blocks", &s).unwrap();
        assert_eq!(
            length.payload,
            HelpPayload::Length {
                count: BlockCount::Exactly(3),
                together: false
            }
        );
        assert!(normalize_help("asdf", &s).is_err());
        assert!(normalize_help("", &s).is_err());
    }

    #[test]
    fn normalize_paraphrases() {
        let s = RegionScheme::default();
        let region = |t: &str| match normalize_help(t, &s).unwrap().payload {
            HelpPayload::Restrictive { region } => region.name,
            other => panic!("{t}: {other:?}"),
        };
        assert_eq!(region("upper left not in the center"), "upper upper left");
        assert_eq!(region("upper left in the center"), "upper left");
        assert_eq!(region("the uppermost right corner"), "upper upper right");
        assert_eq!(region("Bottom right, please"), "lower right");
        assert_eq!(region("lower lower left"), "lower lower left");

        let twelve = RegionScheme::new(SchemeKind::CenterSplit12);
        assert!(matches!(
            normalize_help("inner upper left", &twelve).unwrap().payload,
            HelpPayload::Restrictive { region } if region.name == "inner upper left"
        ));

        assert!(matches!(
            normalize_help("Look left", &s).unwrap().payload,
            HelpPayload::Corrective { direction: Direction::Left, .. }
        ));
        assert!(matches!(
            normalize_help("2 blocks are wrong.", &s).unwrap().payload,
            HelpPayload::Mistake { count: BlockCount::Exactly(2) }
        ));
        assert!(matches!(
            normalize_help("no blocks are wrong", &s).unwrap().payload,
            HelpPayload::Mistake { count: BlockCount::Exactly(0) }
        ));
        assert!(matches!(
            normalize_help("build more than five blocks", &s).unwrap().payload,
            HelpPayload::Length { count: BlockCount::MoreThanFive, .. }
        ));
        assert!(matches!(
            normalize_help("a tower of 3 blocks", &s).unwrap().payload,
            HelpPayload::Length { count: BlockCount::Exactly(3), together: true }
        ));
    }

    #[test]
    fn normalize_refuses_ambiguity() {
        let s = RegionScheme::default();
        for text in [
            "move up and left",
            "3 blocks in the upper left",
            "upper and lower left",
            "place 2 or 3 blocks",
            "place more than 2 blocks",
            "the top of the grid",
        ] {
            assert!(normalize_help(text, &s).is_err(), "{text}");
        }
    }

    #[test]
    fn connectivity() {
        assert!(is_connected(&BTreeSet::new()));
        assert!(is_connected(&[c(0, 0, 0), c(0, 1, 0), c(1, 1, 0)].into()));
        assert!(!is_connected(&[c(0, 0, 0), c(1, 1, 0)].into()));
    }
}
