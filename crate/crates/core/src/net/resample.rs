//! Resampling point-id sets to the fixed set size the network expects, and
//! folding per-sample mask outputs back onto the original points.

use rand::Rng;

use crate::cloud::{FeatureCloud, FEATURE_DIM};
use crate::nn::Tensor2;

/// Draws exactly `set_size` rows of features for the given point ids.
///
/// When `ids` has at least `set_size` entries a uniform subset is taken
/// without replacement; otherwise ids are drawn with replacement so every
/// original id appears at least once before duplicates fill the rest.
/// Returns the feature matrix and the back-map from row to source point id.
pub fn resample_set(
    ids: &[u32],
    cloud: &FeatureCloud,
    set_size: usize,
    rng: &mut impl Rng,
) -> (Tensor2<f64>, Vec<u32>) {
    assert!(!ids.is_empty(), "cannot resample an empty id set");
    assert!(set_size > 0);
    let mut chosen: Vec<u32> = if ids.len() >= set_size {
        rand::seq::index::sample(rng, ids.len(), set_size)
            .iter()
            .map(|i| ids[i])
            .collect()
    } else {
        let mut v: Vec<u32> = ids.to_vec();
        while v.len() < set_size {
            v.push(ids[rng.gen_range(0..ids.len())]);
        }
        v
    };
    chosen.sort_unstable();

    let mut features = Tensor2::zeros(set_size, FEATURE_DIM);
    for (r, &id) in chosen.iter().enumerate() {
        let row = cloud.feature_row(id as usize);
        features.row_mut(r).copy_from_slice(&row);
    }
    (features, chosen)
}

/// Averages per-row mask probabilities over duplicate source ids.
///
/// Returns `(id, mean probability)` pairs, one per distinct id, ordered by
/// id.
pub fn aggregate_masks(backmap: &[u32], mask: &[f64]) -> Vec<(u32, f64)> {
    assert_eq!(backmap.len(), mask.len());
    let mut out: Vec<(u32, f64)> = Vec::new();
    let mut i = 0;
    // The back-map is sorted, so duplicates are adjacent.
    while i < backmap.len() {
        let id = backmap[i];
        let mut sum = 0.0;
        let mut count = 0usize;
        while i < backmap.len() && backmap[i] == id {
            sum += mask[i];
            count += 1;
            i += 1;
        }
        out.push((id, sum / count as f64));
    }
    out
}
