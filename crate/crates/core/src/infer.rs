//! Iterative segmentation: seeded region growth driven by add/remove masks,
//! with lowest-curvature seeding, three termination criteria plus a safety
//! cap, small-segment merging, and a classic smoothness-based region-growing
//! baseline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::FeatureCloud;
use crate::index::SpatialIndex;
use crate::net::{aggregate_masks, resample_set, RegionNetwork};
use crate::nn::{Scalar, Tensor2};
use crate::sim::DEFAULT_R_GROW;

/// Anything that can score resampled point sets with add/remove masks.
///
/// `inlier_ids`/`neighbor_ids` are the back-maps from resampled rows to
/// cloud point ids; the network ignores them, test oracles use them.
pub trait MaskModel {
    /// Rows per resampled set (S).
    fn set_size(&self) -> usize;

    /// Called once when growth starts from a fresh seed.
    fn begin_region(&mut self, _seed: u32) {}

    /// Returns `(add_mask, remove_mask)`, one entry per resampled row.
    fn predict(
        &mut self,
        inlier_features: &Tensor2<f64>,
        inlier_ids: &[u32],
        neighbor_features: &Tensor2<f64>,
        neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>);
}

impl<T: Scalar> MaskModel for RegionNetwork<T> {
    fn set_size(&self) -> usize {
        self.config.set_size
    }

    fn predict(
        &mut self,
        inlier_features: &Tensor2<f64>,
        _inlier_ids: &[u32],
        neighbor_features: &Tensor2<f64>,
        _neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>) {
        self.predict_f64(inlier_features, neighbor_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TerminationReason {
    /// No unlabeled points within the growth radius of the region.
    NoNeighbors,
    /// The thresholded add mask selected nothing.
    EmptyAddSet,
    /// Region size unchanged for two consecutive iterations.
    Stalled,
    /// Safety cap reached; reported distinctly from the natural criteria.
    MaxIters,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    pub r_grow: f64,
    /// Safety cap on growth iterations per region.
    pub max_iters: usize,
    /// Segments smaller than this dissolve into their nearest neighbors.
    pub min_segment: usize,
    /// When false, points removed from a region are excluded from that
    /// region's later neighbor sets instead of returning to the pool.
    pub readd_removed: bool,
    /// Base seed for the per-region resampling rng streams.
    pub rng_seed: u64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            r_grow: DEFAULT_R_GROW,
            max_iters: 200,
            min_segment: 8,
            readd_removed: true,
            rng_seed: 0,
        }
    }
}

/// Per-region growth trace kept for run reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegionTrace {
    pub seed: u32,
    pub iterations: usize,
    pub reason: Option<TerminationReason>,
    pub size_before_merge: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// One instance label per point, contiguous from 0.
    pub labels: Vec<u32>,
    pub regions: Vec<RegionTrace>,
}

/// The unlabeled id with minimum curvature, ties toward the smaller id.
pub fn select_seed(cloud: &FeatureCloud, labeled: &[bool]) -> u32 {
    assert_eq!(labeled.len(), cloud.len());
    let mut best: Option<(f64, u32)> = None;
    for (id, &done) in labeled.iter().enumerate() {
        if done {
            continue;
        }
        let c = cloud.curvatures[id];
        if best.map_or(true, |(bc, _)| c < bc) {
            best = Some((c, id as u32));
        }
    }
    best.expect("select_seed called with every point labeled").1
}

pub struct GrownRegion {
    pub inlier_ids: Vec<u32>,
    pub reason: TerminationReason,
    pub iterations: usize,
}

/// Grows one region from `seed` until a termination criterion fires.
///
/// Each iteration gathers the unlabeled radius neighborhood of the region,
/// resamples both sets to S, queries the model, averages mask entries over
/// duplicate rows, then adds neighbors with add probability above one half
/// and drops inliers with remove probability above one half (never the
/// seed). Ties at exactly one half are excluded.
pub fn grow_region(
    model: &mut dyn MaskModel,
    cloud: &FeatureCloud,
    index: &SpatialIndex,
    labeled: &[bool],
    seed: u32,
    params: &SegmentParams,
    rng: &mut ChaCha8Rng,
) -> GrownRegion {
    let n = cloud.len();
    assert!(!labeled[seed as usize], "cannot grow from a labeled seed");
    model.begin_region(seed);
    let s = model.set_size();
    let positions = &cloud.raw.positions;

    let mut in_region = vec![false; n];
    in_region[seed as usize] = true;
    let mut banned = vec![false; n];
    let mut size_history = vec![1usize];
    let mut iterations = 0;
    let reason = loop {
        // (a) Neighbor exhaustion.
        let inlier_ids: Vec<u32> = (0..n as u32).filter(|&i| in_region[i as usize]).collect();
        let mut is_neighbor = vec![false; n];
        for &id in &inlier_ids {
            for nb in index.radius(&positions[id as usize], params.r_grow) {
                let j = nb as usize;
                if !labeled[j] && !in_region[j] && !banned[j] {
                    is_neighbor[j] = true;
                }
            }
        }
        let neighbor_ids: Vec<u32> =
            (0..n as u32).filter(|&i| is_neighbor[i as usize]).collect();
        if neighbor_ids.is_empty() {
            break TerminationReason::NoNeighbors;
        }
        if iterations == params.max_iters {
            break TerminationReason::MaxIters;
        }
        iterations += 1;

        let (in_feats, in_map) = resample_set(&inlier_ids, cloud, s, rng);
        let (nb_feats, nb_map) = resample_set(&neighbor_ids, cloud, s, rng);
        let (add_mask, remove_mask) = model.predict(&in_feats, &in_map, &nb_feats, &nb_map);
        assert_eq!(add_mask.len(), s, "add mask must have one entry per row");
        assert_eq!(remove_mask.len(), s, "remove mask must have one entry per row");

        let additions: Vec<u32> = aggregate_masks(&nb_map, &add_mask)
            .into_iter()
            .filter(|&(_, p)| p > 0.5)
            .map(|(id, _)| id)
            .collect();
        // (b) Nothing to add.
        if additions.is_empty() {
            break TerminationReason::EmptyAddSet;
        }
        for (id, p) in aggregate_masks(&in_map, &remove_mask) {
            if p > 0.5 && id != seed {
                in_region[id as usize] = false;
                if !params.readd_removed {
                    banned[id as usize] = true;
                }
            }
        }
        for id in additions {
            in_region[id as usize] = true;
        }

        // (c) Stall: size unchanged for two consecutive iterations.
        let size = in_region.iter().filter(|&&v| v).count();
        size_history.push(size);
        let h = size_history.len();
        if h >= 3 && size_history[h - 1] == size_history[h - 2]
            && size_history[h - 2] == size_history[h - 3]
        {
            break TerminationReason::Stalled;
        }
    };
    GrownRegion {
        inlier_ids: (0..n as u32).filter(|&i| in_region[i as usize]).collect(),
        reason,
        iterations,
    }
}

/// Segments the whole cloud: repeatedly seed at the lowest-curvature
/// unlabeled point, grow a region, assign it the next label, and finish by
/// dissolving segments smaller than `min_segment`.
pub fn segment(
    model: &mut dyn MaskModel,
    cloud: &FeatureCloud,
    params: &SegmentParams,
) -> SegmentationResult {
    let n = cloud.len();
    let index = SpatialIndex::build(&cloud.raw.positions);
    let mut labeled = vec![false; n];
    let mut labels = vec![0u32; n];
    let mut regions = Vec::new();
    let mut next_label = 0u32;
    while labeled.iter().any(|&v| !v) {
        let seed = select_seed(cloud, &labeled);
        let mut rng = ChaCha8Rng::seed_from_u64(
            params.rng_seed.wrapping_add(regions.len() as u64),
        );
        let start = Instant::now();
        let grown = grow_region(model, cloud, &index, &labeled, seed, params, &mut rng);
        for &id in &grown.inlier_ids {
            labeled[id as usize] = true;
            labels[id as usize] = next_label;
        }
        regions.push(RegionTrace {
            seed,
            iterations: grown.iterations,
            reason: Some(grown.reason),
            size_before_merge: grown.inlier_ids.len(),
            seconds: start.elapsed().as_secs_f64(),
        });
        next_label += 1;
    }
    let labels = merge_small_segments(&labels, cloud, params.min_segment);
    SegmentationResult { labels, regions }
}

/// Dissolves segments smaller than `min_size`: each of their points adopts
/// the label of the nearest point in a surviving segment. When nothing
/// survives, the largest segment (ties toward the smaller label) survives
/// by fiat. Labels are recompacted to contiguous ids preserving order.
pub fn merge_small_segments(
    labels: &[u32],
    cloud: &FeatureCloud,
    min_size: usize,
) -> Vec<u32> {
    let n = labels.len();
    assert_eq!(n, cloud.len());
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut sizes = vec![0usize; max_label + 1];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    let mut survives: Vec<bool> = sizes.iter().map(|&s| s >= min_size).collect();
    if !survives.iter().any(|&v| v) {
        let biggest = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(l, _)| l)
            .unwrap();
        survives[biggest] = true;
    }

    let keep_ids: Vec<u32> = (0..n as u32)
        .filter(|&i| survives[labels[i as usize] as usize])
        .collect();
    let keep_positions: Vec<[f64; 3]> = keep_ids
        .iter()
        .map(|&i| cloud.raw.positions[i as usize])
        .collect();
    let keep_index = SpatialIndex::build(&keep_positions);

    let mut out = labels.to_vec();
    for i in 0..n {
        if !survives[labels[i] as usize] {
            let nearest = keep_index.knn(&cloud.raw.positions[i], 1)[0];
            out[i] = labels[keep_ids[nearest as usize] as usize];
        }
    }

    // Recompact to contiguous ids in order of first appearance.
    let mut remap = vec![u32::MAX; max_label + 1];
    let mut next = 0u32;
    for l in out.iter_mut() {
        if remap[*l as usize] == u32::MAX {
            remap[*l as usize] = next;
            next += 1;
        }
        *l = remap[*l as usize];
    }
    out
}

/// Classic smoothness-constrained region growing: BFS from the lowest
/// curvature seed, admitting a neighbor when its normal is within
/// `angle_thresh_deg` of the current point's (orientation ignored) and
/// using it as a further frontier point when its curvature is below
/// `curv_thresh`. Coverage and small-segment handling match `segment`.
pub fn classic_region_grow(
    cloud: &FeatureCloud,
    angle_thresh_deg: f64,
    curv_thresh: f64,
    r_grow: f64,
    min_segment: usize,
) -> SegmentationResult {
    let n = cloud.len();
    let index = SpatialIndex::build(&cloud.raw.positions);
    let cos_thresh = angle_thresh_deg.to_radians().cos();
    let mut labeled = vec![false; n];
    let mut labels = vec![0u32; n];
    let mut regions = Vec::new();
    let mut next_label = 0u32;
    while labeled.iter().any(|&v| !v) {
        let seed = select_seed(cloud, &labeled);
        let start = Instant::now();
        let mut queue = std::collections::VecDeque::from([seed]);
        labeled[seed as usize] = true;
        labels[seed as usize] = next_label;
        let mut size = 1usize;
        let mut iterations = 0usize;
        while let Some(cur) = queue.pop_front() {
            iterations += 1;
            let nc = cloud.normals[cur as usize];
            for nb in index.radius(&cloud.raw.positions[cur as usize], r_grow) {
                let j = nb as usize;
                if labeled[j] {
                    continue;
                }
                let nn = cloud.normals[j];
                let dot = (nc[0] * nn[0] + nc[1] * nn[1] + nc[2] * nn[2]).abs();
                if dot >= cos_thresh {
                    labeled[j] = true;
                    labels[j] = next_label;
                    size += 1;
                    if cloud.curvatures[j] < curv_thresh {
                        queue.push_back(nb);
                    }
                }
            }
        }
        regions.push(RegionTrace {
            seed,
            iterations,
            reason: None,
            size_before_merge: size,
            seconds: start.elapsed().as_secs_f64(),
        });
        next_label += 1;
    }
    let labels = merge_small_segments(&labels, cloud, min_segment);
    SegmentationResult { labels, regions }
}
