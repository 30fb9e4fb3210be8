//! Voxel grid state: coordinates, bounded grids and the diffs between them.
//!
//! Everything here is an immutable value. [`GridState::apply`] and
//! [`GridState::diff_to`] return new values and never mutate their inputs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An integer cell position.
///
/// `x` runs left/right, `y` up/down and `z` higher/lower. Ordering is
/// lexicographic over `(x, y, z)`, which is also the canonical encoding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct Coordinate {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Coordinate {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn squared_distance(self, other: Coordinate) -> i64 {
        let dx = i64::from(self.x - other.x);
        let dy = i64::from(self.y - other.y);
        let dz = i64::from(self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }

    /// The six face-adjacent neighbours.
    pub fn neighbours(self) -> [Coordinate; 6] {
        [
            self.offset(1, 0, 0),
            self.offset(-1, 0, 0),
            self.offset(0, 1, 0),
            self.offset(0, -1, 0),
            self.offset(0, 0, 1),
            self.offset(0, 0, -1),
        ]
    }
}

impl From<[i32; 3]> for Coordinate {
    fn from([x, y, z]: [i32; 3]) -> Self {
        Self::new(x, y, z)
    }
}

impl From<Coordinate> for [i32; 3] {
    fn from(c: Coordinate) -> Self {
        [c.x, c.y, c.z]
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("coordinate {0} lies outside the grid bounds")]
    OutOfBounds(Coordinate),
    #[error("cannot add {0}: the cell is already occupied")]
    OccupiedCell(Coordinate),
    #[error("cannot remove {0}: the cell is empty")]
    EmptyCell(Coordinate),
    #[error("grids have different bounds")]
    BoundsMismatch,
    #[error("invalid bounds on the {axis} axis: min {min} must be below max {max}")]
    InvalidBounds { axis: char, min: i32, max: i32 },
    #[error("duplicate block at {0}")]
    DuplicateBlock(Coordinate),
    #[error("{0} is both added and removed")]
    AddRemoveOverlap(Coordinate),
}

/// Inclusive integer extents of a grid on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BoundsRepr", into = "BoundsRepr")]
pub struct GridBounds {
    x_min: i32,
    x_max: i32,
    y_min: i32,
    y_max: i32,
    z_min: i32,
    z_max: i32,
}

#[derive(Serialize, Deserialize)]
struct BoundsRepr {
    x: [i32; 2],
    y: [i32; 2],
    z: [i32; 2],
}

impl TryFrom<BoundsRepr> for GridBounds {
    type Error = WorldError;

    fn try_from(r: BoundsRepr) -> Result<Self, Self::Error> {
        GridBounds::new(r.x, r.y, r.z)
    }
}

impl From<GridBounds> for BoundsRepr {
    fn from(b: GridBounds) -> Self {
        BoundsRepr {
            x: [b.x_min, b.x_max],
            y: [b.y_min, b.y_max],
            z: [b.z_min, b.z_max],
        }
    }
}

impl Default for GridBounds {
    /// The 11 x 9 x 11 build area: x and z in [-5, 5], y in [0, 8].
    fn default() -> Self {
        Self {
            x_min: -5,
            x_max: 5,
            y_min: 0,
            y_max: 8,
            z_min: -5,
            z_max: 5,
        }
    }
}

impl GridBounds {
    pub fn new(x: [i32; 2], y: [i32; 2], z: [i32; 2]) -> Result<Self, WorldError> {
        for (axis, [min, max]) in [('x', x), ('y', y), ('z', z)] {
            if min >= max {
                return Err(WorldError::InvalidBounds { axis, min, max });
            }
        }
        Ok(Self {
            x_min: x[0],
            x_max: x[1],
            y_min: y[0],
            y_max: y[1],
            z_min: z[0],
            z_max: z[1],
        })
    }

    pub fn x(&self) -> (i32, i32) {
        (self.x_min, self.x_max)
    }

    pub fn y(&self) -> (i32, i32) {
        (self.y_min, self.y_max)
    }

    pub fn z(&self) -> (i32, i32) {
        (self.z_min, self.z_max)
    }

    pub fn contains(&self, c: Coordinate) -> bool {
        (self.x_min..=self.x_max).contains(&c.x)
            && (self.y_min..=self.y_max).contains(&c.y)
            && (self.z_min..=self.z_max).contains(&c.z)
    }

    pub fn check(&self, c: Coordinate) -> Result<(), WorldError> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(WorldError::OutOfBounds(c))
        }
    }

    pub fn cell_count(&self) -> usize {
        let w = (self.x_max - self.x_min + 1) as usize;
        let h = (self.y_max - self.y_min + 1) as usize;
        let d = (self.z_max - self.z_min + 1) as usize;
        w * h * d
    }

    /// Every cell, in lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = Coordinate> + '_ {
        (self.x_min..=self.x_max).flat_map(move |x| {
            (self.y_min..=self.y_max)
                .flat_map(move |y| (self.z_min..=self.z_max).map(move |z| Coordinate::new(x, y, z)))
        })
    }

    /// Closest in-bounds cell to `c` (per-axis clamp).
    pub fn clamp(&self, c: Coordinate) -> Coordinate {
        Coordinate::new(
            c.x.clamp(self.x_min, self.x_max),
            c.y.clamp(self.y_min, self.y_max),
            c.z.clamp(self.z_min, self.z_max),
        )
    }
}

/// The set of occupied cells of a bounded grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridState {
    bounds: GridBounds,
    blocks: BTreeSet<Coordinate>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    bounds: GridBounds,
    blocks: Vec<Coordinate>,
}

impl TryFrom<GridRepr> for GridState {
    type Error = WorldError;

    fn try_from(r: GridRepr) -> Result<Self, Self::Error> {
        GridState::new(r.bounds, r.blocks)
    }
}

impl From<GridState> for GridRepr {
    fn from(g: GridState) -> Self {
        GridRepr {
            bounds: g.bounds,
            blocks: g.blocks.into_iter().collect(),
        }
    }
}

impl GridState {
    pub fn empty(bounds: GridBounds) -> Self {
        Self {
            bounds,
            blocks: BTreeSet::new(),
        }
    }

    /// Builds a grid, rejecting out-of-bounds and repeated cells.
    pub fn new(
        bounds: GridBounds,
        blocks: impl IntoIterator<Item = Coordinate>,
    ) -> Result<Self, WorldError> {
        let mut set = BTreeSet::new();
        for c in blocks {
            bounds.check(c)?;
            if !set.insert(c) {
                return Err(WorldError::DuplicateBlock(c));
            }
        }
        Ok(Self {
            bounds,
            blocks: set,
        })
    }

    pub fn bounds(&self) -> GridBounds {
        self.bounds
    }

    pub fn blocks(&self) -> &BTreeSet<Coordinate> {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_occupied(&self, c: Coordinate) -> bool {
        self.blocks.contains(&c)
    }

    /// Applies `diff`, producing `(blocks \ removed) ∪ added`.
    pub fn apply(&self, diff: &GridDiff) -> Result<GridState, WorldError> {
        for &c in diff.added.iter().chain(&diff.removed) {
            self.bounds.check(c)?;
        }
        if let Some(&c) = diff.removed.iter().find(|c| !self.blocks.contains(c)) {
            return Err(WorldError::EmptyCell(c));
        }
        if let Some(&c) = diff.added.iter().find(|c| self.blocks.contains(c)) {
            return Err(WorldError::OccupiedCell(c));
        }
        let mut blocks: BTreeSet<Coordinate> =
            self.blocks.difference(&diff.removed).copied().collect();
        blocks.extend(diff.added.iter().copied());
        Ok(GridState {
            bounds: self.bounds,
            blocks,
        })
    }

    /// The diff that turns `self` into `after`.
    pub fn diff_to(&self, after: &GridState) -> Result<GridDiff, WorldError> {
        if self.bounds != after.bounds {
            return Err(WorldError::BoundsMismatch);
        }
        Ok(GridDiff {
            added: after.blocks.difference(&self.blocks).copied().collect(),
            removed: self.blocks.difference(&after.blocks).copied().collect(),
        })
    }
}

/// Free-function form of [`GridState::apply`].
pub fn apply_diff(grid: &GridState, diff: &GridDiff) -> Result<GridState, WorldError> {
    grid.apply(diff)
}

/// Free-function form of [`GridState::diff_to`].
pub fn diff_between(before: &GridState, after: &GridState) -> Result<GridDiff, WorldError> {
    before.diff_to(after)
}

/// Blocks added and removed by one step. `added` and `removed` never overlap.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DiffRepr")]
pub struct GridDiff {
    added: BTreeSet<Coordinate>,
    #[serde(default)]
    removed: BTreeSet<Coordinate>,
}

#[derive(Deserialize)]
struct DiffRepr {
    added: BTreeSet<Coordinate>,
    #[serde(default)]
    removed: BTreeSet<Coordinate>,
}

impl TryFrom<DiffRepr> for GridDiff {
    type Error = WorldError;

    fn try_from(r: DiffRepr) -> Result<Self, Self::Error> {
        GridDiff::new(r.added, r.removed)
    }
}

impl GridDiff {
    pub fn new(
        added: impl IntoIterator<Item = Coordinate>,
        removed: impl IntoIterator<Item = Coordinate>,
    ) -> Result<Self, WorldError> {
        let added: BTreeSet<_> = added.into_iter().collect();
        let removed: BTreeSet<_> = removed.into_iter().collect();
        if let Some(&c) = added.intersection(&removed).next() {
            return Err(WorldError::AddRemoveOverlap(c));
        }
        Ok(Self { added, removed })
    }

    /// An additions-only diff. Repeated coordinates collapse.
    pub fn additions(added: impl IntoIterator<Item = Coordinate>) -> Self {
        Self {
            added: added.into_iter().collect(),
            removed: BTreeSet::new(),
        }
    }

    pub fn added(&self) -> &BTreeSet<Coordinate> {
        &self.added
    }

    pub fn removed(&self) -> &BTreeSet<Coordinate> {
        &self.removed
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn is_additions_only(&self) -> bool {
        self.removed.is_empty()
    }

    /// Mean position of the added blocks, or `None` when nothing is added.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.added.is_empty() {
            return None;
        }
        let n = self.added.len() as f64;
        let mut sum = [0.0; 3];
        for c in &self.added {
            sum[0] += f64::from(c.x);
            sum[1] += f64::from(c.y);
            sum[2] += f64::from(c.z);
        }
        Some(sum.map(|s| s / n))
    }
}
