//! Coordinate <-> language codec.
//!
//! A block is written as one sentence naming its distance from the origin on
//! each axis: `"<d> <left|right> <d> <up|down> <d> <higher|lower>."`. Zero
//! distances use the positive word, so every sentence has exactly three axis
//! terms. Grammar:
//!
//! ```text
//! utterance := ( sentence ( ws sentence )* )?
//! sentence  := term ws term ws term "."
//! term      := digits ws direction
//! direction := "left" | "right" | "up" | "down" | "higher" | "lower"
//! ```
//!
//! Strict parsing requires the x, y, z term order; lenient parsing accepts
//! any order and skips sentences that do not parse.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Coordinate, GridBounds, GridDiff, GridState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("diffs with removals cannot be encoded as block sentences")]
    UnsupportedRemoval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    /// A token that is neither a distance nor a direction word where one was expected.
    Token { token: String },
    /// Wrong number of tokens for a three-term sentence.
    Arity { tokens: usize },
    /// The same axis named twice in one sentence.
    DuplicateAxis { axis: char },
    /// Strict mode only: terms not in x, y, z order.
    AxisOrder,
    /// Text after the last sentence with no closing period (strict mode only).
    MissingTerminator,
    OutOfBounds { coordinate: Coordinate },
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::Token { token } => write!(f, "unexpected token {token:?}"),
            FailureReason::Arity { tokens } => {
                write!(f, "expected 6 tokens, found {tokens}")
            }
            FailureReason::DuplicateAxis { axis } => write!(f, "axis {axis} named twice"),
            FailureReason::AxisOrder => write!(f, "axes must appear in x, y, z order"),
            FailureReason::MissingTerminator => write!(f, "sentence is missing its period"),
            FailureReason::OutOfBounds { coordinate } => {
                write!(f, "{coordinate} is outside the grid")
            }
        }
    }
}

/// Why a sentence was rejected, and where it starts.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[error("sentence {sentence} (byte {offset}): {reason}")]
pub struct ParseFailure {
    pub sentence: usize,
    pub offset: usize,
    pub reason: FailureReason,
}

/// Result of a lenient parse: the kept blocks plus every skipped sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub diff: GridDiff,
    pub skipped: Vec<ParseFailure>,
}

pub fn encode_coordinate(c: Coordinate) -> String {
    let x = if c.x < 0 { "left" } else { "right" };
    let y = if c.y < 0 { "down" } else { "up" };
    let z = if c.z < 0 { "lower" } else { "higher" };
    format!(
        "{} {x} {} {y} {} {z}.",
        c.x.unsigned_abs(),
        c.y.unsigned_abs(),
        c.z.unsigned_abs()
    )
}

/// One sentence per added block in coordinate order, separated by single spaces.
pub fn encode_diff(diff: &GridDiff) -> Result<String, CodecError> {
    if !diff.is_additions_only() {
        return Err(CodecError::UnsupportedRemoval);
    }
    Ok(encode_blocks(diff.added()))
}

/// Text form of a whole grid, used as the world-state part of a builder's input.
pub fn encode_grid(grid: &GridState) -> String {
    encode_blocks(grid.blocks())
}

fn encode_blocks(blocks: &BTreeSet<Coordinate>) -> String {
    blocks
        .iter()
        .map(|&c| encode_coordinate(c))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses an utterance into an additions-only diff.
///
/// Strict mode fails on the first malformed sentence. Lenient mode never
/// fails; use [`parse_detailed`] to see what it skipped.
pub fn parse_utterance(
    text: &str,
    bounds: GridBounds,
    mode: ParseMode,
) -> Result<GridDiff, ParseFailure> {
    match mode {
        ParseMode::Strict => {
            let mut blocks = BTreeSet::new();
            for (index, offset, sentence, terminated) in split_sentences(text) {
                if !terminated {
                    return Err(ParseFailure {
                        sentence: index,
                        offset,
                        reason: FailureReason::MissingTerminator,
                    });
                }
                let c = parse_sentence(sentence, bounds, mode).map_err(|reason| ParseFailure {
                    sentence: index,
                    offset,
                    reason,
                })?;
                blocks.insert(c);
            }
            Ok(GridDiff::additions(blocks))
        }
        ParseMode::Lenient => Ok(parse_detailed(text, bounds).diff),
    }
}

/// Lenient parse that also reports skipped sentences.
pub fn parse_detailed(text: &str, bounds: GridBounds) -> Parsed {
    let mut blocks = BTreeSet::new();
    let mut skipped = Vec::new();
    for (index, offset, sentence, _) in split_sentences(text) {
        match parse_sentence(sentence, bounds, ParseMode::Lenient) {
            Ok(c) => {
                blocks.insert(c);
            }
            Err(reason) => skipped.push(ParseFailure {
                sentence: index,
                offset,
                reason,
            }),
        }
    }
    Parsed {
        diff: GridDiff::additions(blocks),
        skipped,
    }
}

/// Splits on `.` followed by whitespace or end of input. Yields
/// `(index, byte offset, body, terminated)`; empty bodies are dropped.
fn split_sentences(text: &str) -> Vec<(usize, usize, &str, bool)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    let push = |start: usize, end: usize, terminated: bool, out: &mut Vec<_>| {
        let body = &text[start..end];
        if !body.trim().is_empty() {
            let lead = body.len() - body.trim_start().len();
            out.push((out.len(), start + lead, body.trim(), terminated));
        }
    };
    while i < bytes.len() {
        if bytes[i] == b'.' && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace()) {
            push(start, i, true, &mut out);
            start = i + 1;
        }
        i += 1;
    }
    if start < bytes.len() {
        push(start, bytes.len(), false, &mut out);
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    Z,
}

fn direction(word: &str) -> Option<(Axis, i32)> {
    let lower = word.to_ascii_lowercase();
    Some(match lower.as_str() {
        "left" => (Axis::X, -1),
        "right" => (Axis::X, 1),
        "down" => (Axis::Y, -1),
        "up" => (Axis::Y, 1),
        "lower" => (Axis::Z, -1),
        "higher" => (Axis::Z, 1),
        _ => return None,
    })
}

fn parse_sentence(sentence: &str, bounds: GridBounds, mode: ParseMode) -> Result<Coordinate, FailureReason> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(FailureReason::Arity {
            tokens: tokens.len(),
        });
    }
    let mut values: [Option<i32>; 3] = [None; 3];
    for (slot, pair) in tokens.chunks(2).enumerate() {
        let magnitude = parse_magnitude(pair[0]).ok_or_else(|| FailureReason::Token {
            token: pair[0].to_string(),
        })?;
        let (axis, sign) = direction(pair[1]).ok_or_else(|| FailureReason::Token {
            token: pair[1].to_string(),
        })?;
        let idx = axis as usize;
        if values[idx].is_some() {
            return Err(FailureReason::DuplicateAxis {
                axis: ['x', 'y', 'z'][idx],
            });
        }
        if mode == ParseMode::Strict && idx != slot {
            return Err(FailureReason::AxisOrder);
        }
        values[idx] = Some(sign * magnitude);
    }
    let [Some(x), Some(y), Some(z)] = values else {
        unreachable!("three distinct axes were assigned");
    };
    let c = Coordinate::new(x, y, z);
    if !bounds.contains(c) {
        return Err(FailureReason::OutOfBounds { coordinate: c });
    }
    Ok(c)
}

fn parse_magnitude(token: &str) -> Option<i32> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    token.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: i32, y: i32, z: i32) -> Coordinate {
        Coordinate::new(x, y, z)
    }

    fn bounds() -> GridBounds {
        GridBounds::default()
    }

    #[test]
    fn encode_coordinate_examples() {
        assert_eq!(encode_coordinate(c(-2, 0, 0)), "2 left 0 up 0 higher.");
        assert_eq!(encode_coordinate(c(0, 0, 0)), "0 right 0 up 0 higher.");
        assert_eq!(encode_coordinate(c(-2, 1, 3)), "2 left 1 up 3 higher.");
    }

    #[test]
    fn encode_diff_examples() {
        assert_eq!(encode_diff(&GridDiff::default()).unwrap(), "");
        assert_eq!(
            encode_diff(&GridDiff::additions([c(4, -2, -4), c(-2, 1, 3)])).unwrap(),
            "2 left 1 up 3 higher. 4 right 2 down 4 lower."
        );
        assert_eq!(
            encode_diff(&GridDiff::additions([c(0, 1, 0), c(0, 0, 0)])).unwrap(),
            "0 right 0 up 0 higher. 0 right 1 up 0 higher."
        );
    }

    #[test]
    fn encode_rejects_removals() {
        let d = GridDiff::new([], [c(0, 0, 0)]).unwrap();
        assert_eq!(encode_diff(&d), Err(CodecError::UnsupportedRemoval));
    }

    #[test]
    fn parse_examples() {
        let d = parse_utterance("2 left 1 up 3 higher.", bounds(), ParseMode::Strict).unwrap();
        assert_eq!(d, GridDiff::additions([c(-2, 1, 3)]));
        assert!(parse_utterance("", bounds(), ParseMode::Strict).unwrap().is_empty());
        // The second block sits below the default floor, so parse against a deeper grid.
        let deep = GridBounds::new([-5, 5], [-5, 8], [-5, 5]).unwrap();
        let text = "2 left 1 up 3 higher. banana. 4 right 2 down 4 lower.";
        let d = parse_utterance(text, deep, ParseMode::Lenient).unwrap();
        assert_eq!(d, GridDiff::additions([c(-2, 1, 3), c(4, -2, -4)]));
        let d = parse_utterance(text, bounds(), ParseMode::Lenient).unwrap();
        assert_eq!(d, GridDiff::additions([c(-2, 1, 3)]));
    }

    #[test]
    fn strict_reports_position_and_reason() {
        let err = parse_utterance(
            "2 left 1 up 3 higher. banana. 4 right 2 down 4 lower.",
            bounds(),
            ParseMode::Strict,
        )
        .unwrap_err();
        assert_eq!(err.sentence, 1);
        assert_eq!(err.offset, 22);
        assert_eq!(err.reason, FailureReason::Arity { tokens: 1 });
    }

    #[test]
    fn strict_rejects_bad_order_and_lenient_accepts_it() {
        let text = "1 up 2 left 3 higher.";
        assert_eq!(
            parse_utterance(text, bounds(), ParseMode::Strict).unwrap_err().reason,
            FailureReason::AxisOrder
        );
        assert_eq!(
            parse_utterance(text, bounds(), ParseMode::Lenient).unwrap(),
            GridDiff::additions([c(-2, 1, 3)])
        );
    }

    #[test]
    fn out_of_bounds_and_duplicate_axis() {
        let err = parse_utterance("9 left 0 up 0 higher.", bounds(), ParseMode::Strict).unwrap_err();
        assert_eq!(
            err.reason,
            FailureReason::OutOfBounds {
                coordinate: c(-9, 0, 0)
            }
        );
        let err = parse_utterance("1 left 2 right 0 higher.", bounds(), ParseMode::Strict).unwrap_err();
        assert_eq!(err.reason, FailureReason::DuplicateAxis { axis: 'x' });
    }

    #[test]
    fn duplicates_collapse_and_case_is_ignored() {
        let d = parse_utterance(
            "1 LEFT 0 Up 0 higher. 1 left 0 up 0 higher.",
            bounds(),
            ParseMode::Strict,
        )
        .unwrap();
        assert_eq!(d, GridDiff::additions([c(-1, 0, 0)]));
    }

    #[test]
    fn missing_terminator() {
        let text = "1 left 0 up 0 higher";
        assert_eq!(
            parse_utterance(text, bounds(), ParseMode::Strict).unwrap_err().reason,
            FailureReason::MissingTerminator
        );
        assert_eq!(
            parse_utterance(text, bounds(), ParseMode::Lenient).unwrap(),
            GridDiff::additions([c(-1, 0, 0)])
        );
    }

    #[test]
    fn signs_and_overflow_are_token_errors() {
        for text in ["-1 left 0 up 0 higher.", "99999999999 left 0 up 0 higher.", "one left 0 up 0 higher."] {
            let err = parse_utterance(text, bounds(), ParseMode::Strict).unwrap_err();
            assert!(matches!(err.reason, FailureReason::Token { .. }), "{text}: {err}");
        }
    }

    #[test]
    fn detailed_lists_skips() {
        let p = parse_detailed("banana. 0 right 0 up 0 higher. 1 2 3.", bounds());
        assert_eq!(p.diff, GridDiff::additions([c(0, 0, 0)]));
        assert_eq!(p.skipped.len(), 2);
        assert_eq!(p.skipped[1].sentence, 2);
    }
}
