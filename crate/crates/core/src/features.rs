//! PCA normal and curvature estimation plus bounding-box coordinate
//! normalization.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::{FeatureCloud, RawCloud};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;

pub const DEFAULT_K_NORMAL: usize = 10;

/// Normal and curvature of a single neighborhood: the eigenvector of the
/// smallest covariance eigenvalue and the surface-variation ratio
/// `lambda_min / (lambda_0 + lambda_1 + lambda_2)`.
fn pca_normal_curvature(neighbors: &[[f64; 3]]) -> ([f64; 3], f64) {
    let n = neighbors.len() as f64;
    let mut mean = Vector3::zeros();
    for p in neighbors {
        mean += Vector3::new(p[0], p[1], p[2]);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = Vector3::new(p[0], p[1], p[2]) - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut min_i = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
            min_i = i;
        }
    }
    let sum: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let curvature = if sum > 0.0 {
        (eig.eigenvalues[min_i].max(0.0) / sum).clamp(0.0, 1.0 / 3.0)
    } else {
        0.0
    };

    let v = eig.eigenvectors.column(min_i);
    let mut normal = [v[0], v[1], v[2]];
    let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
    if len > 0.0 {
        for c in &mut normal {
            *c /= len;
        }
    } else {
        normal = [0.0, 0.0, 1.0];
    }
    canonicalize_sign(&mut normal);
    (normal, curvature)
}

/// PCA normals are sign-ambiguous; fix the sign to nonnegative z, breaking
/// ties toward +x, then +y.
fn canonicalize_sign(normal: &mut [f64; 3]) {
    let flip = if normal[2] != 0.0 {
        normal[2] < 0.0
    } else if normal[0] != 0.0 {
        normal[0] < 0.0
    } else {
        normal[1] < 0.0
    };
    if flip {
        for c in normal.iter_mut() {
            *c = -*c;
        }
    }
}

/// Computes the 13-channel feature set: PCA normals/curvatures over each
/// point's `k_normal` nearest neighbors and xyz normalized by the scene
/// bounding box (or the provided `bounds` as (min corner, extents)).
pub fn compute_features(
    cloud: RawCloud,
    k_normal: usize,
    bounds: Option<([f64; 3], [f64; 3])>,
) -> Result<FeatureCloud> {
    if k_normal < 3 {
        return Err(Error::InvalidArgument(format!(
            "k_normal must be at least 3, got {k_normal}"
        )));
    }
    if cloud.len() < k_normal {
        return Err(Error::InvalidArgument(format!(
            "cloud has {} points but k_normal is {k_normal}",
            cloud.len()
        )));
    }

    let index = SpatialIndex::build(&cloud.positions);
    let results: Vec<([f64; 3], f64)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let ids = index.knn(&cloud.positions[i], k_normal);
            let neighbors: Vec<[f64; 3]> =
                ids.iter().map(|&id| cloud.positions[id as usize]).collect();
            pca_normal_curvature(&neighbors)
        })
        .collect();

    let (min_corner, extents) = match bounds {
        Some(b) => b,
        None => {
            let (lo, hi) = cloud.bounding_box();
            (lo, [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]])
        }
    };
    let normalized_xyz: Vec<[f64; 3]> = cloud
        .positions
        .iter()
        .map(|p| {
            let mut u = [0.5; 3];
            for a in 0..3 {
                if extents[a] > 0.0 {
                    u[a] = (p[a] - min_corner[a]) / extents[a];
                }
            }
            u
        })
        .collect();

    let (normals, curvatures) = results.into_iter().unzip();
    Ok(FeatureCloud {
        raw: cloud,
        normals,
        curvatures,
        normalized_xyz,
    })
}
