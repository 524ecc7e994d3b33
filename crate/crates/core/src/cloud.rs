//! Point cloud containers: raw geometry plus derived per-point features.

use crate::error::{Error, Result};

/// Number of per-point feature channels: xyz(3) + rgb(3) + normal(3) +
/// curvature(1) + normalized xyz(3).
pub const FEATURE_DIM: usize = 13;

/// A raw point cloud: positions in meters, colors in `[0,1]`, optional
/// instance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub labels: Option<Vec<u32>>,
}

impl RawCloud {
    /// Builds a cloud, validating the container invariants.
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("cloud must contain at least one point".into()));
        }
        if colors.len() != positions.len() {
            return Err(Error::Shape(format!(
                "positions ({}) and colors ({}) differ in length",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != positions.len() {
                return Err(Error::Shape(format!(
                    "positions ({}) and labels ({}) differ in length",
                    positions.len(),
                    labels.len()
                )));
            }
        }
        for p in &positions {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument("non-finite position coordinate".into()));
            }
        }
        for c in &colors {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument("color channel outside [0,1]".into()));
            }
        }
        Ok(Self {
            positions,
            colors,
            labels,
        })
    }

    /// Cloud with default mid-gray colors and no labels.
    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![[0.5; 3]; n], None)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Axis-aligned bounding box as (min corner, max corner).
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

/// A raw cloud augmented with PCA normals, curvatures and box-normalized
/// coordinates; the 13-channel per-point representation the network consumes.
#[derive(Debug, Clone)]
pub struct FeatureCloud {
    pub raw: RawCloud,
    pub normals: Vec<[f64; 3]>,
    pub curvatures: Vec<f64>,
    pub normalized_xyz: Vec<[f64; 3]>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.raw.labels.as_deref()
    }

    /// The 13-channel feature row for point `id`.
    pub fn feature_row(&self, id: usize) -> [f64; FEATURE_DIM] {
        let p = self.raw.positions[id];
        let c = self.raw.colors[id];
        let n = self.normals[id];
        let u = self.normalized_xyz[id];
        [
            p[0], p[1], p[2], c[0], c[1], c[2], n[0], n[1], n[2], self.curvatures[id], u[0], u[1],
            u[2],
        ]
    }
}
