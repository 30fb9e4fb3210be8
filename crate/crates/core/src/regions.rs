//! Region partitions used by restrictive help.
//!
//! A coordinate is projected onto a plane (x/y by default), normalized so each
//! axis spans [-1, 1], and assigned to exactly one named region. Cells on a
//! dividing line go to the non-negative side; cells exactly on the center
//! boundary belong to the center.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;
use crate::world::{Coordinate, GridBounds, GridDiff, WorldError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("the diff adds no blocks, so no region can be chosen")]
    EmptyDiff,
    #[error("unknown region name {0:?} for this scheme")]
    UnknownRegion(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Four equal quadrants.
    Quad4,
    /// Center split into 4 quadrants plus 4 outer quadrants.
    CenterSplit8,
    /// Center split into 4 inner and 4 middle quadrants plus 4 outer quadrants.
    CenterSplit12,
}

impl SchemeKind {
    pub fn region_count(self) -> usize {
        match self {
            SchemeKind::Quad4 => 4,
            SchemeKind::CenterSplit8 => 8,
            SchemeKind::CenterSplit12 => 12,
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            4 => Some(SchemeKind::Quad4),
            8 => Some(SchemeKind::CenterSplit8),
            12 => Some(SchemeKind::CenterSplit12),
            _ => None,
        }
    }
}

/// Which two axes the regions are drawn over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneAxes {
    /// Horizontal x, vertical y.
    #[default]
    Xy,
    /// Horizontal x, vertical z (top-down view).
    Xz,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionScheme {
    pub kind: SchemeKind,
    /// Half-width of the center square in normalized units.
    pub center_half_width: f64,
    pub axes: PlaneAxes,
    /// Mirror the horizontal axis so positive x reads as "left".
    pub flip_horizontal: bool,
}

impl Default for RegionScheme {
    fn default() -> Self {
        Self {
            kind: SchemeKind::CenterSplit8,
            center_half_width: 0.5,
            axes: PlaneAxes::Xy,
            flip_horizontal: false,
        }
    }
}

const QUADRANTS: [&str; 4] = ["upper right", "upper left", "lower left", "lower right"];
const OUTER: [&str; 4] = [
    "upper upper right",
    "upper upper left",
    "lower lower left",
    "lower lower right",
];
const INNER: [&str; 4] = [
    "inner upper right",
    "inner upper left",
    "inner lower left",
    "inner lower right",
];

/// A region of a particular scheme.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId {
    pub index: usize,
    pub name: String,
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Which ring of the partition a region sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ring {
    Inner,
    Center,
    Outer,
}

impl RegionScheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn region_count(&self) -> usize {
        self.kind.region_count()
    }

    /// Region names in index order.
    pub fn names(&self) -> Vec<&'static str> {
        match self.kind {
            SchemeKind::Quad4 => QUADRANTS.to_vec(),
            SchemeKind::CenterSplit8 => QUADRANTS.iter().chain(&OUTER).copied().collect(),
            SchemeKind::CenterSplit12 => INNER
                .iter()
                .chain(&QUADRANTS)
                .chain(&OUTER)
                .copied()
                .collect(),
        }
    }

    pub fn regions(&self) -> Vec<RegionId> {
        self.names()
            .into_iter()
            .enumerate()
            .map(|(index, name)| RegionId {
                index,
                name: name.to_string(),
            })
            .collect()
    }

    pub fn region(&self, index: usize) -> Option<RegionId> {
        self.names().get(index).map(|name| RegionId {
            index,
            name: name.to_string(),
        })
    }

    pub fn region_by_name(&self, name: &str) -> Result<RegionId, RegionError> {
        let wanted = name.trim().to_ascii_lowercase();
        self.names()
            .iter()
            .position(|n| *n == wanted)
            .and_then(|i| self.region(i))
            .ok_or(RegionError::UnknownRegion(name.to_string()))
    }

    /// Region index from a ring and a quadrant (0 = upper right, counter-clockwise).
    pub fn region_for(&self, ring: Ring, quadrant: usize) -> RegionId {
        let index = match (self.kind, ring) {
            (SchemeKind::Quad4, _) => quadrant,
            (SchemeKind::CenterSplit8, Ring::Outer) => 4 + quadrant,
            (SchemeKind::CenterSplit8, _) => quadrant,
            (SchemeKind::CenterSplit12, Ring::Inner) => quadrant,
            (SchemeKind::CenterSplit12, Ring::Center) => 4 + quadrant,
            (SchemeKind::CenterSplit12, Ring::Outer) => 8 + quadrant,
        };
        self.region(index).expect("index within scheme")
    }

    /// Normalized plane position of `c`; each axis is centred on its midpoint
    /// and scaled by its half-extent.
    pub fn normalize(&self, c: Coordinate, bounds: GridBounds) -> Result<(f64, f64), RegionError> {
        bounds.check(c)?;
        let scale = |v: i32, (lo, hi): (i32, i32)| {
            let mid = (f64::from(lo) + f64::from(hi)) / 2.0;
            let half = (f64::from(hi) - f64::from(lo)) / 2.0;
            ((f64::from(v) - mid) / half).clamp(-1.0, 1.0)
        };
        let mut u = scale(c.x, bounds.x());
        let v = match self.axes {
            PlaneAxes::Xy => scale(c.y, bounds.y()),
            PlaneAxes::Xz => scale(c.z, bounds.z()),
        };
        if self.flip_horizontal {
            u = -u;
        }
        Ok((u, v))
    }

    /// Region of a normalized point.
    pub fn region_of_point(&self, u: f64, v: f64) -> RegionId {
        let quadrant = match (u >= 0.0, v >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        let h = self.center_half_width;
        let ring = if u.abs() <= h / 2.0 && v.abs() <= h / 2.0 {
            Ring::Inner
        } else if u.abs() <= h && v.abs() <= h {
            Ring::Center
        } else {
            Ring::Outer
        };
        self.region_for(ring, quadrant)
    }

    pub fn region_of(&self, c: Coordinate, bounds: GridBounds) -> Result<RegionId, RegionError> {
        let (u, v) = self.normalize(c, bounds)?;
        Ok(self.region_of_point(u, v))
    }

    pub fn contains(&self, region: &RegionId, c: Coordinate, bounds: GridBounds) -> bool {
        self.region_of(c, bounds)
            .map(|r| r.index == region.index)
            .unwrap_or(false)
    }

    /// Chooses uniformly (seeded) among the regions that hold at least one added block.
    pub fn pick_region_for_diff(
        &self,
        diff: &GridDiff,
        bounds: GridBounds,
        seed: u64,
    ) -> Result<RegionId, RegionError> {
        let covered: BTreeSet<RegionId> = diff
            .added()
            .iter()
            .map(|&c| self.region_of(c, bounds))
            .collect::<Result<_, _>>()?;
        let covered: Vec<RegionId> = covered.into_iter().collect();
        let mut rng = seeded(seed, "region-pick");
        covered.choose(&mut rng).cloned().ok_or(RegionError::EmptyDiff)
    }
}
