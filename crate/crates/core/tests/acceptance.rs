//! Acceptance gate: eight pass/fail criteria covering the attention kernel,
//! analytic gradients, metric oracles, oracle-guided segmentation, the
//! desk-scale end-to-end run, termination and determinism fuzzing, loss
//! sanity, and the spatial index.
//!
//! Each criterion prints a single `criterion N ...: PASS` line (visible with
//! `--nocapture`) and panics with a matching FAIL line otherwise.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regionformer::features::{compute_features, DEFAULT_K_NORMAL};
use regionformer::infer::{classic_region_grow, segment, MaskModel, SegmentParams};
use regionformer::metrics::{adjusted_rand_index, instance_prf_miou, mutual_info_scores};
use regionformer::net::{
    attention_neighbors, neighbor_diffs, NetworkConfig, PointTransformerLayer, RegionNetwork,
    TransformerBlock,
};
use regionformer::nn::{
    bce_dual_loss, grad_check, jitter_params, Adam, AdamConfig, LinearLayer, Mlp, Parameterized,
    Tensor2,
};
use regionformer::sim::{generate_scene, simulate_growth_example, SceneSpec};
use regionformer::train::{load_checkpoint, train, TrainConfig};
use regionformer::{FeatureCloud, RawCloud, SpatialIndex};

/// The stated wall-clock budgets assume four CPU cores; this environment is
/// sized by `available_parallelism`, and single-core runs get the full 4x.
fn core_budget_scale() -> f64 {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    (4.0 / cores as f64).max(1.0)
}

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{name}: {tag} ({detail})");
    assert!(pass, "{name}: FAIL ({detail})");
}

// --- criterion 1: attention oracle ------------------------------------------

/// Naive per-pair evaluation of the attention equation using nothing but
/// explicit loops over the layer's weight matrices.
fn naive_attention(
    layer: &PointTransformerLayer<f64>,
    features: &Tensor2<f64>,
    positions: &[[f64; 3]],
    neighbor_ids: &[u32],
) -> Tensor2<f64> {
    let n = features.rows;
    let k = layer.k_attn.min(n);
    let d = layer.phi.out_dim();

    let linear = |l: &LinearLayer<f64>, x: &[f64]| -> Vec<f64> {
        (0..l.out_dim())
            .map(|o| {
                let mut s = l.bias.get(0, o);
                for (i, xv) in x.iter().enumerate() {
                    s += l.weight.get(o, i) * xv;
                }
                s
            })
            .collect()
    };
    let mlp = |m: &Mlp<f64>, x: &[f64]| -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, l) in m.layers.iter().enumerate() {
            h = linear(l, &h);
            if li + 1 < m.layers.len() {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    };

    let mut out = Tensor2::zeros(n, d);
    for i in 0..n {
        let q = linear(&layer.phi, features.row(i));
        let mut scores = Vec::with_capacity(k);
        let mut value_terms = Vec::with_capacity(k);
        for j in 0..k {
            let jid = neighbor_ids[i * k + j] as usize;
            let diff: Vec<f64> = (0..3).map(|a| positions[i][a] - positions[jid][a]).collect();
            let delta = mlp(&layer.beta, &diff);
            let key = linear(&layer.psi, features.row(jid));
            let score_in: Vec<f64> = (0..d).map(|c| q[c] - key[c] + delta[c]).collect();
            scores.push(mlp(&layer.gamma, &score_in));
            let v = linear(&layer.alpha, features.row(jid));
            value_terms.push((0..d).map(|c| v[c] + delta[c]).collect::<Vec<f64>>());
        }
        for c in 0..d {
            let max = scores.iter().map(|s| s[c]).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s[c] - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..k {
                out.data[i * d + c] += exps[j] / sum * value_terms[j][c];
            }
        }
    }
    out
}

#[test]
fn criterion_1_attention_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=4.min(n));
        let d_in = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let mut layer: PointTransformerLayer<f64> =
            PointTransformerLayer::new(d_in, d, k, &mut rng);
        // Randomize the zero-initialized biases too.
        jitter_params(&mut layer, 0.3, rng.gen());
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let feats = Tensor2::from_vec(
            n,
            d_in,
            (0..n * d_in).map(|_| rng.gen::<f64>() - 0.5).collect(),
        );
        let ids = attention_neighbors(&positions, k);
        let diffs = neighbor_diffs(&positions, &ids, k);
        let fast = layer.forward(&feats, &ids, &diffs);
        let slow = naive_attention(&layer, &feats, &positions, &ids);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "criterion 1 (attention matches naive-loop oracle)",
        worst < 1e-10 && secs < 5.0,
        &format!("max abs diff {worst:.3e} over 100 cases in {secs:.2}s"),
    );
}

// --- criterion 2: gradient checks -------------------------------------------

/// Linear layer + sigmoid + dual BCE against fixed targets.
struct LinearBce {
    layer: LinearLayer<f64>,
    input: Tensor2<f64>,
    truth: Vec<u8>,
}

impl LinearBce {
    fn forward_loss(&mut self) -> f64 {
        let out = self.layer.forward(&self.input);
        let probs: Vec<f64> = out.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        bce_dual_loss(&probs, &self.truth, &probs, &self.truth).loss
    }

    fn backward(&mut self) {
        let out = self.layer.forward(&self.input);
        let probs: Vec<f64> = out.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let r = bce_dual_loss(&probs, &self.truth, &probs, &self.truth);
        let grad: Vec<f64> = probs
            .iter()
            .zip(r.grad_add.iter().zip(&r.grad_remove))
            .map(|(&p, (ga, gr))| (ga + gr) * p * (1.0 - p))
            .collect();
        self.layer
            .backward(&Tensor2::from_vec(out.rows, out.cols, grad));
    }
}

impl Parameterized<f64> for LinearBce {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<f64>, &mut Tensor2<f64>)) {
        self.layer.visit_params(f);
    }
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // Linear + BCE.
    let layer = LinearLayer::new(6, 4, &mut rng);
    let input = Tensor2::from_vec(3, 6, (0..18).map(|_| rng.gen::<f64>() - 0.5).collect());
    let truth: Vec<u8> = (0..12).map(|_| rng.gen_range(0..2) as u8).collect();
    let mut toy = LinearBce { layer, input, truth };
    toy.zero_grads();
    toy.backward();
    let linear_err = grad_check(&mut toy, |m| m.forward_loss(), 1e-5, None, 0).max_rel_err;

    // Transformer block under a squared-output loss.
    let mut block: TransformerBlock<f64> = TransformerBlock::new(5, 4, 3, &mut rng);
    jitter_params(&mut block, 0.01, 42);
    let positions: Vec<[f64; 3]> = (0..6)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    let feats = Tensor2::from_vec(6, 5, (0..30).map(|_| rng.gen::<f64>() - 0.5).collect());
    let ids = attention_neighbors(&positions, 3);
    let block_loss = |b: &mut TransformerBlock<f64>| -> f64 {
        let diffs = neighbor_diffs(&positions, &ids, 3);
        let out = b.forward(&feats, &ids, &diffs);
        out.data.iter().map(|v| v * v).sum::<f64>() * 0.5
    };
    block.zero_grads();
    let diffs = neighbor_diffs(&positions, &ids, 3);
    let out = block.forward(&feats, &ids, &diffs);
    block.backward(&out);
    let block_err = grad_check(&mut block, block_loss, 1e-5, None, 0).max_rel_err;

    // Full dual-branch network at S = 32 with the dual BCE loss.
    let config = NetworkConfig {
        b1_widths: vec![6, 6],
        b2_widths: vec![8, 8],
        b3_widths: vec![8, 6],
        d_attn: Some(4),
        k_attn: 4,
        set_size: 32,
        ..NetworkConfig::default()
    };
    let s = config.set_size;
    let mut net: RegionNetwork<f64> = RegionNetwork::new(config, &mut rng);
    jitter_params(&mut net, 0.01, 42);
    let inlier = Tensor2::from_vec(s, 13, (0..s * 13).map(|_| rng.gen::<f64>()).collect());
    let neighbor = Tensor2::from_vec(s, 13, (0..s * 13).map(|_| rng.gen::<f64>()).collect());
    let add_truth: Vec<u8> = (0..s).map(|_| rng.gen_range(0..2) as u8).collect();
    let rem_truth: Vec<u8> = (0..s).map(|_| rng.gen_range(0..2) as u8).collect();
    let net_loss = |m: &mut RegionNetwork<f64>| -> f64 {
        let (a, r) = m.forward(&inlier, &neighbor);
        bce_dual_loss(&a, &add_truth, &r, &rem_truth).loss
    };
    net.zero_grads();
    let (a, r) = net.forward(&inlier, &neighbor);
    let res = bce_dual_loss(&a, &add_truth, &r, &rem_truth);
    net.backward(&res.grad_add, &res.grad_remove);
    let net_err = grad_check(&mut net, net_loss, 1e-5, Some(400), 7).max_rel_err;

    let secs = start.elapsed().as_secs_f64();
    verdict(
        "criterion 2 (analytic gradients match finite differences)",
        linear_err < 1e-6 && block_err < 1e-4 && net_err < 1e-3 && secs < 120.0,
        &format!(
            "linear/BCE {linear_err:.2e}, block {block_err:.2e}, network {net_err:.2e} in {secs:.1}s"
        ),
    );
}

// --- criterion 3: metric oracles --------------------------------------------

/// ARI by explicit pair counting over all point pairs.
fn oracle_ari(pred: &[u32], truth: &[u32]) -> f64 {
    let n = pred.len();
    let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => n11 += 1.0,
                (false, false) => n00 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
            }
        }
    }
    let total = n11 + n00 + n10 + n01;
    let expected = (n11 + n10) * (n11 + n01) / total;
    let max_index = 0.5 * ((n11 + n10) + (n11 + n01));
    if (max_index - expected).abs() < 1e-12 {
        return if n10 == 0.0 && n01 == 0.0 { 1.0 } else { 0.0 };
    }
    (n11 - expected) / (max_index - expected)
}

/// Per-pair cluster sizes and intersections recomputed from scratch.
fn cluster_sets(labels: &[u32]) -> Vec<Vec<usize>> {
    let mut distinct: Vec<u32> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct
        .iter()
        .map(|&l| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == l)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// NMI and AMI by direct summation with factorial-product hypergeometric
/// probabilities; valid for the small n used here.
fn oracle_nmi_ami(pred: &[u32], truth: &[u32]) -> (f64, f64) {
    let n = pred.len() as f64;
    let p_sets = cluster_sets(pred);
    let t_sets = cluster_sets(truth);
    let inter = |a: &[usize], b: &[usize]| a.iter().filter(|x| b.contains(x)).count() as u64;

    let same_partition = p_sets.len() == t_sets.len()
        && p_sets
            .iter()
            .all(|a| t_sets.iter().filter(|b| inter(a, b) > 0).count() <= 1);
    if same_partition {
        return (1.0, 1.0);
    }
    let ent = |sets: &[Vec<usize>]| -> f64 {
        sets.iter()
            .map(|s| {
                let p = s.len() as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (h_p, h_t) = (ent(&p_sets), ent(&t_sets));
    if h_p == 0.0 || h_t == 0.0 {
        return (0.0, 0.0);
    }
    let mut mi = 0.0;
    for a in &p_sets {
        for b in &t_sets {
            let c = inter(a, b) as f64;
            if c > 0.0 {
                mi += c / n * (n * c / (a.len() as f64 * b.len() as f64)).ln();
            }
        }
    }
    let mean_h = 0.5 * (h_p + h_t);

    let fact = |k: u64| -> f64 { (1..=k).map(|v| v as f64).product() };
    let total = pred.len() as u64;
    let mut emi = 0.0;
    for a in &p_sets {
        for b in &t_sets {
            let (a, b) = (a.len() as u64, b.len() as u64);
            let lo = 1.max((a + b).saturating_sub(total));
            for nij in lo..=a.min(b) {
                let term = nij as f64 / n * (n * nij as f64 / (a as f64 * b as f64)).ln();
                let p = fact(a) * fact(b) * fact(total - a) * fact(total - b)
                    / (fact(total)
                        * fact(nij)
                        * fact(a - nij)
                        * fact(b - nij)
                        * fact(total + nij - a - b));
                emi += term * p;
            }
        }
    }
    let denom = mean_h - emi;
    let ami = if denom.abs() < 1e-15 { 0.0 } else { (mi - emi) / denom };
    (mi / mean_h, ami)
}

/// Greedy IoU matching recomputed from explicit point sets.
fn oracle_prf_miou(pred: &[u32], truth: &[u32], thresh: f64) -> (f64, f64, f64) {
    let p_sets = cluster_sets(pred);
    let t_sets = cluster_sets(truth);
    let iou = |a: &[usize], b: &[usize]| -> f64 {
        let i = a.iter().filter(|x| b.contains(x)).count() as f64;
        i / (a.len() as f64 + b.len() as f64 - i)
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, a) in p_sets.iter().enumerate() {
        for (ti, b) in t_sets.iter().enumerate() {
            let v = iou(a, b);
            if v > 0.0 {
                pairs.push((v, pi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pu = vec![false; p_sets.len()];
    let mut tu = vec![false; t_sets.len()];
    let mut tiou = vec![0.0; t_sets.len()];
    let mut matched = 0usize;
    for (v, pi, ti) in pairs {
        if v < thresh {
            break;
        }
        if !pu[pi] && !tu[ti] {
            pu[pi] = true;
            tu[ti] = true;
            tiou[ti] = v;
            matched += 1;
        }
    }
    (
        matched as f64 / p_sets.len() as f64,
        matched as f64 / t_sets.len() as f64,
        tiou.iter().sum::<f64>() / t_sets.len() as f64,
    )
}

#[test]
fn criterion_3_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(2..=12);
        let kp = rng.gen_range(1..=4);
        let kt = rng.gen_range(1..=4);
        let pred: Vec<u32> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..kt)).collect();

        worst = worst.max((adjusted_rand_index(&pred, &truth) - oracle_ari(&pred, &truth)).abs());
        let (nmi, ami) = mutual_info_scores(&pred, &truth);
        let (nmi_o, ami_o) = oracle_nmi_ami(&pred, &truth);
        worst = worst.max((nmi - nmi_o).abs()).max((ami - ami_o).abs());
        let (p, r, m) = instance_prf_miou(&pred, &truth, 0.5);
        let (po, ro, mo) = oracle_prf_miou(&pred, &truth, 0.5);
        worst = worst.max((p - po).abs()).max((r - ro).abs()).max((m - mo).abs());
    }

    // Degenerate conventions.
    let labels = vec![0u32, 1, 1, 2, 0, 2];
    let relabeled = vec![7u32, 3, 3, 5, 7, 5];
    let flat = vec![0u32; 6];
    let identical_ok = adjusted_rand_index(&labels, &labels) == 1.0
        && adjusted_rand_index(&relabeled, &labels) == 1.0
        && mutual_info_scores(&labels, &labels) == (1.0, 1.0)
        && adjusted_rand_index(&flat, &flat) == 1.0;
    let single_cluster_ok = adjusted_rand_index(&flat, &labels) == 0.0
        && mutual_info_scores(&flat, &labels) == (0.0, 0.0);

    verdict(
        "criterion 3 (metrics match brute-force oracles)",
        worst < 1e-9 && identical_ok && single_cluster_ok,
        &format!("max abs diff {worst:.3e} over 500 cases; degenerate conventions hold"),
    );
}

// --- criterion 4: oracle-model segmentation ---------------------------------

/// Ground-truth masks from instance labels: add same-label neighbors, remove
/// wrong-label inliers.
struct OracleMasks {
    labels: Vec<u32>,
    set_size: usize,
    seed_label: u32,
}

impl MaskModel for OracleMasks {
    fn set_size(&self) -> usize {
        self.set_size
    }

    fn begin_region(&mut self, seed: u32) {
        self.seed_label = self.labels[seed as usize];
    }

    fn predict(
        &mut self,
        _in_feats: &Tensor2<f64>,
        inlier_ids: &[u32],
        _nb_feats: &Tensor2<f64>,
        neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>) {
        let add = neighbor_ids
            .iter()
            .map(|&id| f64::from(self.labels[id as usize] == self.seed_label))
            .collect();
        let remove = inlier_ids
            .iter()
            .map(|&id| f64::from(self.labels[id as usize] != self.seed_label))
            .collect();
        (add, remove)
    }
}

/// Every point's radius neighborhood stays within its own instance, and each
/// instance forms one connected component at radius `r`.
fn instances_isolated_and_connected(cloud: &FeatureCloud, r: f64) -> bool {
    let labels = cloud.labels().unwrap();
    let n = cloud.len();
    let index = SpatialIndex::build(&cloud.raw.positions);
    for i in 0..n {
        for nb in index.radius(&cloud.raw.positions[i], r) {
            if labels[nb as usize] != labels[i] {
                return false;
            }
        }
    }
    let mut component = vec![u32::MAX; n];
    let mut components = 0u32;
    for start in 0..n {
        if component[start] != u32::MAX {
            continue;
        }
        let id = components;
        components += 1;
        let mut stack = vec![start as u32];
        component[start] = id;
        while let Some(cur) = stack.pop() {
            for nb in index.radius(&cloud.raw.positions[cur as usize], r) {
                if component[nb as usize] == u32::MAX {
                    component[nb as usize] = id;
                    stack.push(nb);
                }
            }
        }
    }
    let distinct_labels = {
        let mut d: Vec<u32> = labels.to_vec();
        d.sort_unstable();
        d.dedup();
        d.len() as u32
    };
    components == distinct_labels
}

#[test]
fn criterion_4_oracle_model_segmentation() {
    let spec = SceneSpec {
        object_count: (4, 7),
        floor: false,
        min_gap: 0.25,
        points_per_object: (250, 400),
        ..SceneSpec::default()
    };
    let params = SegmentParams::default();
    let mut scenes_checked = 0;
    let mut seed = 0u64;
    let mut min_segment_size = usize::MAX;
    while scenes_checked < 20 {
        seed += 1;
        assert!(seed < 200, "could not find 20 eligible scenes");
        let raw = match generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(raw) => raw,
            Err(_) => continue,
        };
        let cloud = compute_features(raw, DEFAULT_K_NORMAL, None).unwrap();
        if !instances_isolated_and_connected(&cloud, params.r_grow) {
            continue;
        }
        scenes_checked += 1;

        let truth = cloud.labels().unwrap().to_vec();
        let mut model = OracleMasks {
            labels: truth.clone(),
            set_size: 64,
            seed_label: 0,
        };
        let result = segment(&mut model, &cloud, &params);
        assert_eq!(result.labels.len(), cloud.len(), "every point labeled");
        let ari = adjusted_rand_index(&result.labels, &truth);
        assert_eq!(ari, 1.0, "scene seed {seed}: ARI {ari} != 1");

        let max_label = *result.labels.iter().max().unwrap() as usize;
        let mut sizes = vec![0usize; max_label + 1];
        for &l in &result.labels {
            sizes[l as usize] += 1;
        }
        min_segment_size = min_segment_size.min(*sizes.iter().min().unwrap());
    }
    verdict(
        "criterion 4 (oracle-mask segmentation recovers ground truth)",
        min_segment_size >= params.min_segment,
        &format!("ARI exactly 1.0 on 20 scenes; smallest segment {min_segment_size} points"),
    );
}

// --- criterion 5: end-to-end desk-scale run ---------------------------------

fn desk_scale_network() -> NetworkConfig {
    NetworkConfig {
        b1_widths: vec![64, 64],
        b2_widths: vec![64, 128, 256, 512],
        b3_widths: vec![256, 128, 64],
        d_attn: Some(64),
        k_attn: 16,
        set_size: 128,
        ..NetworkConfig::default()
    }
}

fn scene_for_seed(seed: u64) -> FeatureCloud {
    let raw = generate_scene(&SceneSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("default scene spec is feasible");
    compute_features(raw, DEFAULT_K_NORMAL, None).unwrap()
}

#[test]
fn criterion_5_end_to_end_desk_scale() {
    let start = Instant::now();
    let config = TrainConfig {
        epochs: 30,
        examples_per_epoch: 167,
        batch_size: 4,
        float32: true,
        network: desk_scale_network(),
        ..TrainConfig::default()
    };

    let scenes: Vec<FeatureCloud> = (0..50).map(scene_for_seed).collect();
    let dir = tempfile::tempdir().unwrap();
    let report = train(&config, &scenes, dir.path(), None).unwrap();
    let (mut model, _) = load_checkpoint::<f32>(&report.checkpoint_path, &config.network).unwrap();

    let held_out: Vec<FeatureCloud> = (0..20).map(|i| scene_for_seed(1000 + i)).collect();
    let params = SegmentParams::default();
    let learned: Vec<f64> = held_out
        .iter()
        .map(|cloud| {
            let result = segment(&mut model, cloud, &params);
            adjusted_rand_index(&result.labels, cloud.labels().unwrap())
        })
        .collect();
    let learned_mean = learned.iter().sum::<f64>() / learned.len() as f64;

    // Classic baseline with thresholds tuned by grid search on the same
    // held-out scenes (the strongest version of the comparison).
    let mut baseline_mean = f64::NEG_INFINITY;
    let mut baseline_best = (0.0, 0.0);
    for angle in [20.0, 30.0, 45.0, 60.0] {
        for curv in [0.02, 0.05, 0.1] {
            let mean = held_out
                .iter()
                .map(|cloud| {
                    let result =
                        classic_region_grow(cloud, angle, curv, params.r_grow, params.min_segment);
                    adjusted_rand_index(&result.labels, cloud.labels().unwrap())
                })
                .sum::<f64>()
                / held_out.len() as f64;
            if mean > baseline_mean {
                baseline_mean = mean;
                baseline_best = (angle, curv);
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let budget = 60.0 * 60.0 * core_budget_scale();
    verdict(
        "criterion 5 (desk-scale learned segmentation beats classic baseline)",
        learned_mean >= 0.80 && learned_mean > baseline_mean && secs <= budget,
        &format!(
            "learned mean ARI {learned_mean:.3} vs baseline {baseline_mean:.3} \
             (angle {}, curv {}) in {:.0}s of {budget:.0}s budget",
            baseline_best.0, baseline_best.1, secs
        ),
    );
}

// --- criterion 6: termination and determinism fuzzing ------------------------

struct RandomMasks {
    rng: ChaCha8Rng,
    set_size: usize,
}

impl MaskModel for RandomMasks {
    fn set_size(&self) -> usize {
        self.set_size
    }

    fn predict(
        &mut self,
        _: &Tensor2<f64>,
        inlier_ids: &[u32],
        _: &Tensor2<f64>,
        neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>) {
        (
            neighbor_ids.iter().map(|_| self.rng.gen()).collect(),
            inlier_ids.iter().map(|_| self.rng.gen()).collect(),
        )
    }
}

struct ConstantMasks {
    add: f64,
    remove: f64,
    set_size: usize,
}

impl MaskModel for ConstantMasks {
    fn set_size(&self) -> usize {
        self.set_size
    }

    fn predict(
        &mut self,
        _: &Tensor2<f64>,
        inlier_ids: &[u32],
        _: &Tensor2<f64>,
        neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>) {
        (
            vec![self.add; neighbor_ids.len()],
            vec![self.remove; inlier_ids.len()],
        )
    }
}

/// Adds exactly one neighbor and ejects one non-seed inlier per step, trying
/// to keep the region size constant forever.
struct OscillatingMasks {
    set_size: usize,
    seed: u32,
}

impl MaskModel for OscillatingMasks {
    fn set_size(&self) -> usize {
        self.set_size
    }

    fn begin_region(&mut self, seed: u32) {
        self.seed = seed;
    }

    fn predict(
        &mut self,
        _: &Tensor2<f64>,
        inlier_ids: &[u32],
        _: &Tensor2<f64>,
        neighbor_ids: &[u32],
    ) -> (Vec<f64>, Vec<f64>) {
        let target_add = neighbor_ids.iter().copied().min().unwrap_or(0);
        let target_rm = inlier_ids.iter().copied().filter(|&i| i != self.seed).max();
        let add = neighbor_ids
            .iter()
            .map(|&id| f64::from(id == target_add))
            .collect();
        let remove = inlier_ids
            .iter()
            .map(|&id| f64::from(Some(id) == target_rm))
            .collect();
        (add, remove)
    }
}

/// Random positions with synthetic per-point features; growth ignores the
/// feature values, so honest PCA features are not needed for fuzzing.
fn fuzz_cloud(n: usize, rng: &mut ChaCha8Rng) -> FeatureCloud {
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 1.5])
        .collect();
    FeatureCloud {
        raw: RawCloud::new(positions, vec![[0.5; 3]; n], None).unwrap(),
        normals: (0..n).map(|_| [0.0, 0.0, 1.0]).collect(),
        curvatures: (0..n).map(|_| rng.gen()).collect(),
        normalized_xyz: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
    }
}

#[test]
fn criterion_6_termination_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut max_regions_ratio = 0.0f64;
    let mut max_iterations = 0usize;
    for case in 0..1000u64 {
        let n = rng.gen_range(1..=2000);
        let cloud = fuzz_cloud(n, &mut rng);
        let params = SegmentParams {
            rng_seed: case,
            ..SegmentParams::default()
        };
        let run = |cloud: &FeatureCloud| {
            let mut model: Box<dyn MaskModel> = match case % 4 {
                0 => Box::new(RandomMasks {
                    rng: ChaCha8Rng::seed_from_u64(case),
                    set_size: 32,
                }),
                1 => Box::new(ConstantMasks {
                    add: 1.0,
                    remove: 0.0,
                    set_size: 32,
                }),
                2 => Box::new(ConstantMasks {
                    add: 0.6,
                    remove: 0.6,
                    set_size: 32,
                }),
                _ => Box::new(OscillatingMasks {
                    set_size: 32,
                    seed: 0,
                }),
            };
            segment(model.as_mut(), cloud, &params)
        };
        let result = run(&cloud);
        assert_eq!(result.labels.len(), n);
        assert!(
            result.regions.len() <= n,
            "case {case}: {} regions for {n} points",
            result.regions.len()
        );
        max_regions_ratio = max_regions_ratio.max(result.regions.len() as f64 / n as f64);
        for region in &result.regions {
            assert!(region.iterations <= 200, "case {case}: inner iteration cap");
            max_iterations = max_iterations.max(region.iterations);
        }

        if case % 10 == 0 {
            let again = run(&cloud);
            assert_eq!(result.labels, again.labels, "case {case}: labels must reproduce");
            for (a, b) in result.regions.iter().zip(&again.regions) {
                assert_eq!(
                    (a.seed, a.iterations, a.reason, a.size_before_merge),
                    (b.seed, b.iterations, b.reason, b.size_before_merge),
                    "case {case}: traces must reproduce"
                );
            }
        }
    }
    verdict(
        "criterion 6 (growth terminates and reproduces under fuzzing)",
        true,
        &format!(
            "1000 clouds; worst regions/points {max_regions_ratio:.2}, \
             worst region iterations {max_iterations}"
        ),
    );
}

// --- criterion 7: loss sanity ------------------------------------------------

fn row_truth(map: &[u32], ids: &[u32], truth: &[u8]) -> Vec<u8> {
    map.iter()
        .map(|id| truth[ids.binary_search(id).expect("resampled id missing")])
        .collect()
}

#[test]
fn criterion_7_loss_sanity() {
    // Exact chance-level loss: every prediction 0.5 on both masks. The mask
    // length is a power of two so the mean accumulates without rounding.
    let preds = vec![0.5f64; 2];
    let truth = vec![0u8, 1];
    let chance = bce_dual_loss(&preds, &truth, &preds, &truth).loss;
    let exact = chance == 2.0 * std::f64::consts::LN_2;

    // Single-example overfit.
    let spec = SceneSpec {
        extents: [1.2, 1.2, 0.8],
        object_count: (2, 2),
        points_per_object: (60, 80),
        points_per_surface: 150,
        ..SceneSpec::default()
    };
    let raw = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let scene = compute_features(raw, DEFAULT_K_NORMAL, None).unwrap();
    let index = SpatialIndex::build(&scene.raw.positions);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ex = simulate_growth_example(&scene, &index, 5, 3, 0.2, 0.15, &mut rng);
    assert!(!ex.neighbor_ids.is_empty());

    let config = NetworkConfig {
        b1_widths: vec![8, 8],
        b2_widths: vec![8, 16],
        b3_widths: vec![16, 8],
        d_attn: Some(8),
        k_attn: 8,
        set_size: 32,
        ..NetworkConfig::default()
    };
    let (in_feats, in_map) = regionformer::net::resample_set(&ex.inlier_ids, &scene, 32, &mut rng);
    let (nb_feats, nb_map) = regionformer::net::resample_set(&ex.neighbor_ids, &scene, 32, &mut rng);
    let add_truth = row_truth(&nb_map, &ex.neighbor_ids, &ex.add_truth);
    let rem_truth = row_truth(&in_map, &ex.inlier_ids, &ex.remove_truth);

    let mut model = RegionNetwork::<f64>::new(config, &mut ChaCha8Rng::seed_from_u64(0));
    let mut adam: Adam<f64> = Adam::new(AdamConfig::default());
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..50 {
        model.zero_grads();
        let (a, r) = model.forward(&in_feats, &nb_feats);
        let res = bce_dual_loss(&a, &add_truth, &r, &rem_truth);
        model.backward(&res.grad_add, &res.grad_remove);
        adam.step(&mut model);
        last = res.loss;
        first.get_or_insert(res.loss);
    }
    let first = first.unwrap();

    verdict(
        "criterion 7 (loss behaves: chance level exact, overfit collapses)",
        exact && last < 0.1 * first,
        &format!("all-0.5 loss {chance} (= 2 ln 2: {exact}); overfit {first:.3} -> {last:.4}"),
    );
}

// --- criterion 8: spatial index ----------------------------------------------

#[test]
fn criterion_8_spatial_index_exact_and_fast() {
    use regionformer::index::brute;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let random_cloud = |n: usize, rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0])
            .collect()
    };

    // Exactness across sizes, 1000 queries total at the largest size.
    for &n in &[257usize, 5_000, 50_000] {
        let positions = random_cloud(n, &mut rng);
        let index = SpatialIndex::build(&positions);
        let queries = if n == 50_000 { 1000 } else { 200 };
        for q in 0..queries {
            let query = [
                rng.gen::<f64>() * 2.2 - 0.1,
                rng.gen::<f64>() * 2.2 - 0.1,
                rng.gen::<f64>() * 2.2 - 0.1,
            ];
            if q % 2 == 0 {
                let k = rng.gen_range(1..=10);
                assert_eq!(
                    index.knn(&query, k),
                    brute::knn(&positions, &query, k),
                    "knn mismatch at n={n}"
                );
            } else {
                let r = rng.gen_range(0.01..0.3);
                let mut got = index.radius(&query, r);
                let mut want = brute::radius(&positions, &query, r);
                got.sort_unstable();
                want.sort_unstable();
                assert_eq!(got, want, "radius mismatch at n={n}");
            }
        }
    }

    // Performance gate at N = 50,000: build + 1000 queries vs 1000 scans.
    let positions = random_cloud(50_000, &mut rng);
    let queries: Vec<([f64; 3], usize, f64)> = (0..1000)
        .map(|_| {
            (
                [rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0],
                rng.gen_range(1..=10),
                rng.gen_range(0.01..0.2),
            )
        })
        .collect();

    let t0 = Instant::now();
    let index = SpatialIndex::build(&positions);
    let mut sink = 0usize;
    for (q, k, r) in &queries {
        sink += index.knn(q, *k).len() + index.radius(q, *r).len();
    }
    let indexed = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    for (q, k, r) in &queries {
        sink += brute::knn(&positions, q, *k).len() + brute::radius(&positions, q, *r).len();
    }
    let scanned = t1.elapsed().as_secs_f64();
    assert!(sink > 0);

    let speedup = scanned / indexed;
    verdict(
        "criterion 8 (spatial index exact and at least 10x faster than scan)",
        speedup >= 10.0,
        &format!("exact on all queries; build+1000 queries {indexed:.3}s vs scan {scanned:.3}s ({speedup:.0}x)"),
    );
}
