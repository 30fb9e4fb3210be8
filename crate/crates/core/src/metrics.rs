//! Episode metrics: invariant-intersection reward, penalized distance,
//! blocks placed and help-followed, plus aggregation and report output.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::help::{BlockCount, HelpMessage, HelpPayload};
use crate::regions::RegionScheme;
use crate::world::{Coordinate, GridBounds, GridDiff};

/// Distance reported when the builder places nothing.
pub const EMPTY_PREDICTION_DISTANCE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("the gold diff adds no blocks")]
    EmptyGold,
    #[error("corrective help needs the prediction made before the help")]
    MissingPriorPrediction,
    #[error("nothing to aggregate")]
    EmptyInput,
}

/// Which symmetries the reward searches over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardOptions {
    /// Integer shifts along x and z.
    pub translations: bool,
    /// Quarter turns about the vertical axis.
    pub rotations: bool,
}

impl Default for RewardOptions {
    fn default() -> Self {
        Self {
            translations: true,
            rotations: true,
        }
    }
}

/// Quarter turn `k` about the vertical axis through the middle of `bounds`.
/// With an even extent the pivot is a half cell; the result stays integral.
pub fn rotate_quarter(c: Coordinate, k: u8, bounds: GridBounds) -> Coordinate {
    // Work in doubled coordinates so a half-cell pivot stays exact.
    let (cx2, cz2) = (bounds.x().0 + bounds.x().1, bounds.z().0 + bounds.z().1);
    let (mut u, mut w) = (2 * c.x - cx2, 2 * c.z - cz2);
    for _ in 0..k % 4 {
        (u, w) = (-w, u);
    }
    // u + cx2 and w + cz2 are even whenever the pivot parities agree; when they
    // don't, shift by half a cell — translations absorb the offset anyway.
    Coordinate::new((u + cx2).div_euclid(2), c.y, (w + cz2).div_euclid(2))
}

/// Largest overlap between `pred` and `gold` over the allowed x/z shifts and
/// vertical-axis quarter turns. Blocks moved outside `bounds` are dropped.
pub fn iglu_reward(pred: &GridDiff, gold: &GridDiff, bounds: GridBounds) -> f64 {
    iglu_reward_with(pred, gold, bounds, RewardOptions::default()) as f64
}

pub fn iglu_reward_with(pred: &GridDiff, gold: &GridDiff, bounds: GridBounds, options: RewardOptions) -> usize {
    let gold = gold.added();
    if pred.added().is_empty() || gold.is_empty() {
        return 0;
    }
    let turns: &[u8] = if options.rotations { &[0, 1, 2, 3] } else { &[0] };
    let mut best = 0;
    for &k in turns {
        let rotated: Vec<Coordinate> = pred.added().iter().map(|&p| rotate_quarter(p, k, bounds)).collect();
        if options.translations {
            // Every shift that moves p onto g gets one vote; since the moves
            // are injective, a shift's votes are exactly its overlap.
            let mut votes: HashMap<(i32, i32), usize> = HashMap::new();
            for p in &rotated {
                for g in gold.iter().filter(|g| g.y == p.y) {
                    *votes.entry((g.x - p.x, g.z - p.z)).or_default() += 1;
                }
            }
            best = best.max(votes.values().copied().max().unwrap_or(0));
        } else {
            let hits = rotated.iter().filter(|p| bounds.contains(**p) && gold.contains(p)).count();
            best = best.max(hits);
        }
    }
    best
}

/// Mean squared distance from each predicted block to its nearest gold block,
/// scaled by one plus the absolute count mismatch. Nothing placed scores 100.
pub fn penalized_distance(pred: &GridDiff, gold: &GridDiff) -> Result<f64, MetricsError> {
    let gold = gold.added();
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let pred = pred.added();
    if pred.is_empty() {
        return Ok(EMPTY_PREDICTION_DISTANCE);
    }
    let total: i64 = pred
        .iter()
        .map(|p| gold.iter().map(|g| g.squared_distance(*p)).min().expect("gold non-empty"))
        .sum();
    let base = total as f64 / pred.len() as f64;
    Ok(base * (1.0 + pred.len().abs_diff(gold.len()) as f64))
}

/// Distance with the empty-gold cases filled in: nothing expected and nothing
/// placed is 0; anything placed when nothing was expected is 100.
pub fn episode_distance(pred: &GridDiff, gold: &GridDiff) -> f64 {
    match penalized_distance(pred, gold) {
        Ok(d) => d,
        Err(_) if pred.added().is_empty() => 0.0,
        Err(_) => EMPTY_PREDICTION_DISTANCE,
    }
}

pub fn blocks_placed(pred: &GridDiff) -> usize {
    pred.added().len()
}

/// How strictly mistake help must be obeyed to count as followed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeRule {
    /// Fewer wrong blocks than the help reported.
    #[default]
    Improvement,
    /// No wrong blocks at all.
    AllFixed,
}

/// Whether `pred` obeys `help`.
///
/// Corrective help compares against `prior`, the prediction the help was
/// about; mistake help needs `gold` to count wrong blocks.
pub fn help_followed(
    pred: &GridDiff,
    prior: Option<&GridDiff>,
    help: &HelpMessage,
    gold: &GridDiff,
    scheme: &RegionScheme,
    bounds: GridBounds,
    mistake_rule: MistakeRule,
) -> Result<bool, MetricsError> {
    Ok(match &help.payload {
        HelpPayload::Restrictive { region } => pred.added().iter().all(|&b| scheme.contains(region, b, bounds)),
        HelpPayload::Length { count, .. } => count.matches(pred.added().len()),
        HelpPayload::Corrective { direction, perfect } => {
            let prior = prior.ok_or(MetricsError::MissingPriorPrediction)?;
            match (pred.centroid(), prior.centroid()) {
                (Some(after), Some(before)) => {
                    let (dx, dy) = (after[0] - before[0], after[1] - before[1]);
                    if *perfect {
                        dx.abs() < 0.5 && dy.abs() < 0.5
                    } else {
                        let (sx, sy) = direction.step();
                        dx * f64::from(sx) + dy * f64::from(sy) > 0.0
                    }
                }
                _ => false,
            }
        }
        HelpPayload::Mistake { count } => {
            let wrong = pred.added().difference(gold.added()).count();
            match (mistake_rule, count) {
                (MistakeRule::AllFixed, _) | (_, BlockCount::Exactly(0)) => wrong == 0,
                (MistakeRule::Improvement, c) => wrong < c.lower_bound(),
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub reward: f64,
    pub distance: f64,
    pub blocks_placed: usize,
    /// `None` when no help was given.
    pub help_followed: Option<bool>,
}

impl EpisodeScore {
    pub fn score(pred: &GridDiff, gold: &GridDiff, bounds: GridBounds, help_followed: Option<bool>) -> Self {
        Self {
            reward: iglu_reward(pred, gold, bounds),
            distance: episode_distance(pred, gold),
            blocks_placed: blocks_placed(pred),
            help_followed,
        }
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub episodes: usize,
    pub distance: Stat,
    pub reward: Stat,
    pub blocks_placed: Stat,
    /// Followed rate over episodes that received help, in percent (0/100 per episode).
    pub help_followed: Option<Stat>,
}

pub fn aggregate(label: &str, scores: &[EpisodeScore]) -> Result<ReportRow, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let column = |f: fn(&EpisodeScore) -> f64| Stat::of(&scores.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
    let followed: Vec<f64> = scores
        .iter()
        .filter_map(|s| s.help_followed.map(|b| if b { 100.0 } else { 0.0 }))
        .collect();
    Ok(ReportRow {
        label: label.to_string(),
        episodes: scores.len(),
        distance: column(|s| s.distance),
        reward: column(|s| s.reward),
        blocks_placed: column(|s| s.blocks_placed as f64),
        help_followed: Stat::of(&followed),
    })
}

pub const REPORT_COLUMNS: [&str; 4] = ["Distance", "Reward", "# Blocks Placed", "% Help Followed"];

/// CSV with one mean and one std column per metric.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Model".to_string(), "Episodes".to_string()];
    for c in REPORT_COLUMNS {
        header.push(format!("{c} Mean"));
        header.push(format!("{c} Std"));
    }
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut record = vec![row.label.clone(), row.episodes.to_string()];
        for stat in [Some(row.distance), Some(row.reward), Some(row.blocks_placed), row.help_followed] {
            match stat {
                Some(s) => {
                    record.push(format!("{:.4}", s.mean));
                    record.push(format!("{:.4}", s.std));
                }
                None => {
                    record.push(String::new());
                    record.push(String::new());
                }
            }
        }
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Aligned plain-text table; cells read `mean (std)`.
pub fn report_table(rows: &[ReportRow]) -> String {
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("Model")
        .chain(REPORT_COLUMNS)
        .map(str::to_string)
        .collect()];
    for row in rows {
        grid.push(vec![
            row.label.clone(),
            row.distance.to_string(),
            row.reward.to_string(),
            row.blocks_placed.to_string(),
            row.help_followed.map(|s| s.to_string()).unwrap_or_else(|| "n/a".into()),
        ]);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|i| grid.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if n == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::help::{Direction, HelpContext};

    fn c(x: i32, y: i32, z: i32) -> Coordinate {
        Coordinate::new(x, y, z)
    }

    fn d(cells: &[(i32, i32, i32)]) -> GridDiff {
        GridDiff::additions(cells.iter().map(|&(x, y, z)| c(x, y, z)))
    }

    #[test]
    fn reward_examples() {
        let b = GridBounds::default();
        let gold = d(&[(0, 0, 0), (1, 0, 0), (1, 1, 0)]);
        assert_eq!(iglu_reward(&gold, &gold, b), 3.0);
        let shifted = d(&[(2, 0, -1), (3, 0, -1), (3, 1, -1)]);
        assert_eq!(iglu_reward(&shifted, &gold, b), 3.0);
        assert_eq!(iglu_reward(&d(&[(4, 2, -3)]), &d(&[(-1, 2, 5)]), b), 1.0);
        assert_eq!(iglu_reward(&d(&[(4, 2, -3)]), &d(&[(-1, 3, 5)]), b), 0.0);
        assert_eq!(iglu_reward(&GridDiff::default(), &gold, b), 0.0);
        // A row along z matches a row along x only with rotations enabled.
        let along_z = d(&[(0, 0, 0), (0, 0, 1), (0, 0, 2)]);
        let along_x = d(&[(0, 0, 0), (1, 0, 0), (2, 0, 0)]);
        assert_eq!(iglu_reward(&along_z, &along_x, b), 3.0);
        let no_rot = RewardOptions {
            rotations: false,
            ..RewardOptions::default()
        };
        assert_eq!(iglu_reward_with(&along_z, &along_x, b, no_rot), 1);
    }

    #[test]
    fn rotation_is_a_quarter_turn() {
        let b = GridBounds::default();
        assert_eq!(rotate_quarter(c(2, 3, 1), 1, b), c(-1, 3, 2));
        assert_eq!(rotate_quarter(c(2, 3, 1), 4, b), c(2, 3, 1));
        let even = GridBounds::new([0, 3], [0, 3], [0, 3]).unwrap();
        for cell in even.cells() {
            assert!(even.contains(rotate_quarter(cell, 1, even)));
        }
    }

    #[test]
    fn distance_examples() {
        let gold = d(&[(0, 0, 0), (3, 0, 0)]);
        assert_eq!(penalized_distance(&gold, &gold).unwrap(), 0.0);
        assert_eq!(penalized_distance(&GridDiff::default(), &gold).unwrap(), 100.0);
        assert_eq!(penalized_distance(&d(&[(1, 0, 0)]), &gold).unwrap(), 2.0);
        assert_eq!(penalized_distance(&gold, &GridDiff::default()), Err(MetricsError::EmptyGold));
        assert_eq!(episode_distance(&GridDiff::default(), &GridDiff::default()), 0.0);
        assert_eq!(episode_distance(&gold, &GridDiff::default()), 100.0);
    }

    #[test]
    fn followed_examples() {
        let ctx = HelpContext::default();
        let b = ctx.bounds;
        let s = ctx.scheme;
        let gold = d(&[(-1, 5, 0), (-2, 5, 0), (-2, 6, 0)]);
        let rule = MistakeRule::Improvement;
        let upper_left = ctx.restrictive_oracle(&d(&[(-1, 5, 0)]), 0).unwrap();
        assert!(help_followed(&gold, None, &upper_left, &gold, &s, b, rule).unwrap());
        assert!(!help_followed(&d(&[(1, 5, 0)]), None, &upper_left, &gold, &s, b, rule).unwrap());

        let three = ctx.length_oracle(&gold, 0).unwrap();
        assert!(help_followed(&gold, None, &three, &gold, &s, b, rule).unwrap());
        assert!(!help_followed(&d(&[(0, 0, 0), (1, 0, 0)]), None, &three, &gold, &s, b, rule).unwrap());

        let left = ctx
            .message(
                HelpPayload::Corrective {
                    direction: Direction::Left,
                    perfect: false,
                },
                0,
            )
            .unwrap();
        let before = d(&[(1, 0, 0)]);
        let after = d(&[(0, 0, 0)]);
        assert!(help_followed(&after, Some(&before), &left, &gold, &s, b, rule).unwrap());
        assert!(!help_followed(&before, Some(&after), &left, &gold, &s, b, rule).unwrap());
        assert_eq!(
            help_followed(&after, None, &left, &gold, &s, b, rule),
            Err(MetricsError::MissingPriorPrediction)
        );

        let two_wrong = ctx
            .message(
                HelpPayload::Mistake {
                    count: BlockCount::Exactly(2),
                },
                0,
            )
            .unwrap();
        let one_wrong = d(&[(-1, 5, 0), (4, 4, 4)]);
        assert!(help_followed(&one_wrong, None, &two_wrong, &gold, &s, b, rule).unwrap());
        assert!(!help_followed(&one_wrong, None, &two_wrong, &gold, &s, b, MistakeRule::AllFixed).unwrap());
    }

    #[test]
    fn aggregate_examples() {
        let s = |reward: f64| EpisodeScore {
            reward,
            distance: 0.0,
            blocks_placed: 1,
            help_followed: Some(true),
        };
        let one = aggregate("x", &[s(3.0)]).unwrap();
        assert_eq!(one.reward, Stat { mean: 3.0, std: 0.0 });
        let two = aggregate("x", &[s(0.0), s(2.0)]).unwrap();
        assert_eq!(two.reward, Stat { mean: 1.0, std: 1.0 });
        assert_eq!(two.help_followed.unwrap().mean, 100.0);
        assert_eq!(aggregate("x", &[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn report_formats() {
        let row = ReportRow {
            label: "No Help".into(),
            episodes: 2,
            distance: Stat { mean: 12.641, std: 51.754 },
            reward: Stat { mean: 1.0, std: 0.5 },
            blocks_placed: Stat { mean: 3.4, std: 3.53 },
            help_followed: None,
        };
        let table = report_table(std::slice::from_ref(&row));
        assert!(table.starts_with("Model"));
        assert!(table.contains("12.64 (51.75)"));
        assert!(table.contains("n/a"));
        let header = table.lines().next().unwrap();
        let positions: Vec<usize> = REPORT_COLUMNS.iter().map(|c| header.find(c).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let csv = report_csv(&[row]);
        assert!(csv.starts_with("Model,Episodes,Distance Mean,Distance Std,Reward Mean"));
        assert!(csv.contains("No Help,2,12.6410,51.7540"));
    }
}
