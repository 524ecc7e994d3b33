//! The dual-branch region-growth network.
//!
//! Each branch (inlier set, neighbor set) runs a per-point encoder B1 and a
//! set encoder B2 built from linear + transformer-block stages. Both B2
//! outputs are average-pooled and concatenated into the bottleneck, which is
//! broadcast back to every point, concatenated with that point's B1
//! features, and decoded by the per-point MLP B3. The neighbor branch ends
//! in the add head, the inlier branch in the remove head; both heads emit
//! sigmoid probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attention_neighbors, neighbor_diffs};
use super::block::TransformerBlock;
use crate::nn::{LinearLayer, Mlp, Parameterized, Scalar, Tensor2};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub b1_widths: Vec<usize>,
    pub b2_widths: Vec<usize>,
    pub b3_widths: Vec<usize>,
    /// Attention path width inside each transformer block; `None` uses the
    /// stage width.
    pub d_attn: Option<usize>,
    pub k_attn: usize,
    /// Points per branch set (S).
    pub set_size: usize,
    /// Share B1 weights between the two branches.
    pub share_b1: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::cloud::FEATURE_DIM,
            b1_widths: vec![128, 128],
            b2_widths: vec![128, 256, 512, 1024],
            b3_widths: vec![512, 256, 128],
            d_attn: None,
            k_attn: 16,
            set_size: 512,
            share_b1: false,
        }
    }
}

impl NetworkConfig {
    /// Architecture fingerprint stored in checkpoints; loading requires an
    /// exact match.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// One encoder stage: linear to the stage width, ReLU, transformer block.
#[derive(Debug, Clone)]
struct EncoderStage<T> {
    lin: LinearLayer<T>,
    block: TransformerBlock<T>,
    /// Post-ReLU activation cached for the backward pass.
    act: Option<Tensor2<T>>,
}

impl<T: Scalar> EncoderStage<T> {
    fn new(in_dim: usize, width: usize, d_attn: usize, k_attn: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin: LinearLayer::new(in_dim, width, rng),
            block: TransformerBlock::new(width, d_attn, k_attn, rng),
            act: None,
        }
    }

    fn forward(&mut self, x: &Tensor2<T>, ids: &[u32], diffs: &Tensor2<T>) -> Tensor2<T> {
        let mut h = self.lin.forward(x);
        for v in h.data.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        self.act = Some(h.clone());
        self.block.forward(&h, ids, diffs)
    }

    fn backward(&mut self, grad: &Tensor2<T>) -> Tensor2<T> {
        let mut g = self.block.backward(grad);
        let act = self.act.as_ref().expect("stage backward before forward");
        for (gv, av) in g.data.iter_mut().zip(&act.data) {
            if *av <= T::zero() {
                *gv = T::zero();
            }
        }
        self.lin.backward(&g)
    }
}

fn visit_stages<T: Scalar>(
    stages: &mut [EncoderStage<T>],
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>),
) {
    for (i, s) in stages.iter_mut().enumerate() {
        s.lin
            .visit_params(&mut |n, p, g| f(&format!("{prefix}.s{i}.lin.{n}"), p, g));
        s.block
            .visit_params(&mut |n, p, g| f(&format!("{prefix}.s{i}.block.{n}"), p, g));
    }
}

/// Per-branch attention graph computed once per forward pass.
struct BranchGraph<T> {
    ids: Vec<u32>,
    diffs: Tensor2<T>,
}

fn branch_graph<T: Scalar>(features: &Tensor2<T>, k_attn: usize) -> BranchGraph<T> {
    let n = features.rows;
    // Attention neighborhoods use the normalized-xyz channels (10..13).
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let row = features.row(i);
            [
                Scalar::to_f64(row[10]),
                Scalar::to_f64(row[11]),
                Scalar::to_f64(row[12]),
            ]
        })
        .collect();
    let ids = attention_neighbors(&positions, k_attn);
    let diffs = neighbor_diffs(&positions, &ids, k_attn);
    BranchGraph { ids, diffs }
}

#[derive(Debug)]
struct BackwardCache<T> {
    probs_add: Vec<T>,
    probs_remove: Vec<T>,
}

#[derive(Debug)]
pub struct RegionNetwork<T> {
    pub config: NetworkConfig,
    b1_inlier: Vec<EncoderStage<T>>,
    /// `None` when B1 is shared between the branches.
    b1_neighbor: Option<Vec<EncoderStage<T>>>,
    b2_inlier: Vec<EncoderStage<T>>,
    b2_neighbor: Vec<EncoderStage<T>>,
    b3_inlier: Mlp<T>,
    b3_neighbor: Mlp<T>,
    head_remove: LinearLayer<T>,
    head_add: LinearLayer<T>,
    cache: Option<BackwardCache<T>>,
}

fn build_stages<T: Scalar>(
    mut in_dim: usize,
    widths: &[usize],
    d_attn: Option<usize>,
    k_attn: usize,
    rng: &mut impl Rng,
) -> Vec<EncoderStage<T>> {
    let mut stages = Vec::with_capacity(widths.len());
    for &w in widths {
        stages.push(EncoderStage::new(in_dim, w, d_attn.unwrap_or(w), k_attn, rng));
        in_dim = w;
    }
    stages
}

impl<T: Scalar> RegionNetwork<T> {
    pub fn new(config: NetworkConfig, rng: &mut impl Rng) -> Self {
        assert!(!config.b1_widths.is_empty() && !config.b2_widths.is_empty());
        let w1 = *config.b1_widths.last().unwrap();
        let w2 = *config.b2_widths.last().unwrap();
        let d_attn = config.d_attn;
        let k = config.k_attn;
        let b1_inlier = build_stages(config.input_dim, &config.b1_widths, d_attn, k, rng);
        let b1_neighbor = if config.share_b1 {
            None
        } else {
            Some(build_stages(config.input_dim, &config.b1_widths, d_attn, k, rng))
        };
        let b2_inlier = build_stages(w1, &config.b2_widths, d_attn, k, rng);
        let b2_neighbor = build_stages(w1, &config.b2_widths, d_attn, k, rng);
        let mut b3_dims = vec![2 * w2 + w1];
        b3_dims.extend_from_slice(&config.b3_widths);
        let b3_inlier = Mlp::new(&b3_dims, true, rng);
        let b3_neighbor = Mlp::new(&b3_dims, true, rng);
        let w3 = *config.b3_widths.last().unwrap();
        let head_remove = LinearLayer::new(w3, 1, rng);
        let head_add = LinearLayer::new(w3, 1, rng);
        Self {
            config,
            b1_inlier,
            b1_neighbor,
            b2_inlier,
            b2_neighbor,
            b3_inlier,
            b3_neighbor,
            head_remove,
            head_add,
            cache: None,
        }
    }

    /// Forward pass over one (inlier set, neighbor set) pair of exactly
    /// `S x input_dim` rows each. Returns `(add_mask, remove_mask)`, both of
    /// length S with entries in (0,1): the add mask scores neighbor-branch
    /// points for joining the region, the remove mask scores inlier-branch
    /// points for ejection.
    pub fn forward(&mut self, inlier: &Tensor2<T>, neighbor: &Tensor2<T>) -> (Vec<T>, Vec<T>) {
        let s = self.config.set_size;
        assert_eq!(
            (inlier.rows, inlier.cols),
            (s, self.config.input_dim),
            "inlier set must be S x input_dim"
        );
        assert_eq!(
            (neighbor.rows, neighbor.cols),
            (s, self.config.input_dim),
            "neighbor set must be S x input_dim"
        );
        let k = self.config.k_attn;
        let graph_in = branch_graph(inlier, k);
        let graph_nb = branch_graph(neighbor, k);

        // B1 per-point encoding (optionally with shared weights, in which
        // case both sets run through the stage stack as one batch with a
        // block-diagonal attention graph).
        let (feat1_in, feat1_nb) = if self.b1_neighbor.is_none() {
            let mut cat = Tensor2::zeros(2 * s, self.config.input_dim);
            cat.data[..s * inlier.cols].copy_from_slice(&inlier.data);
            cat.data[s * inlier.cols..].copy_from_slice(&neighbor.data);
            let keff = k.min(s);
            let mut ids = Vec::with_capacity(2 * s * keff);
            ids.extend_from_slice(&graph_in.ids);
            ids.extend(graph_nb.ids.iter().map(|&id| id + s as u32));
            let mut diffs = Tensor2::zeros(2 * s * keff, 3);
            diffs.data[..graph_in.diffs.data.len()].copy_from_slice(&graph_in.diffs.data);
            diffs.data[graph_in.diffs.data.len()..].copy_from_slice(&graph_nb.diffs.data);
            let mut x = cat;
            for stage in &mut self.b1_inlier {
                x = stage.forward(&x, &ids, &diffs);
            }
            let w1 = x.cols;
            let mut a = Tensor2::zeros(s, w1);
            let mut b = Tensor2::zeros(s, w1);
            a.data.copy_from_slice(&x.data[..s * w1]);
            b.data.copy_from_slice(&x.data[s * w1..]);
            (a, b)
        } else {
            let mut a = inlier.clone();
            for stage in &mut self.b1_inlier {
                a = stage.forward(&a, &graph_in.ids, &graph_in.diffs);
            }
            let mut b = neighbor.clone();
            for stage in self.b1_neighbor.as_mut().unwrap() {
                b = stage.forward(&b, &graph_nb.ids, &graph_nb.diffs);
            }
            (a, b)
        };

        // B2 set encoding.
        let mut feat2_in = feat1_in.clone();
        for stage in &mut self.b2_inlier {
            feat2_in = stage.forward(&feat2_in, &graph_in.ids, &graph_in.diffs);
        }
        let mut feat2_nb = feat1_nb.clone();
        for stage in &mut self.b2_neighbor {
            feat2_nb = stage.forward(&feat2_nb, &graph_nb.ids, &graph_nb.diffs);
        }

        // Average pooling and bottleneck concatenation.
        let w2 = feat2_in.cols;
        let inv_s = T::from_f64(1.0 / s as f64);
        let mut bottleneck = vec![T::zero(); 2 * w2];
        for r in 0..s {
            for (bv, v) in bottleneck[..w2].iter_mut().zip(feat2_in.row(r)) {
                *bv += *v * inv_s;
            }
            for (bv, v) in bottleneck[w2..].iter_mut().zip(feat2_nb.row(r)) {
                *bv += *v * inv_s;
            }
        }

        // Broadcast + concat with B1 features, decode, apply the heads.
        let decode = |b3: &mut Mlp<T>, head: &mut LinearLayer<T>, feat1: &Tensor2<T>| {
            let w1 = feat1.cols;
            let mut dec_in = Tensor2::zeros(s, 2 * w2 + w1);
            for r in 0..s {
                let row = dec_in.row_mut(r);
                row[..2 * w2].copy_from_slice(&bottleneck);
                row[2 * w2..].copy_from_slice(feat1.row(r));
            }
            let h = b3.forward(&dec_in);
            let logits = head.forward(&h);
            logits
                .data
                .iter()
                .map(|&z| T::one() / (T::one() + (-z).exp()))
                .collect::<Vec<T>>()
        };
        let probs_remove = decode(&mut self.b3_inlier, &mut self.head_remove, &feat1_in);
        let probs_add = decode(&mut self.b3_neighbor, &mut self.head_add, &feat1_nb);

        self.cache = Some(BackwardCache {
            probs_add: probs_add.clone(),
            probs_remove: probs_remove.clone(),
        });
        (probs_add, probs_remove)
    }

    /// Backward pass from gradients with respect to the mask probabilities.
    /// Accumulates parameter gradients; input gradients are discarded.
    pub fn backward(&mut self, grad_add: &[T], grad_remove: &[T]) {
        let s = self.config.set_size;
        assert_eq!(grad_add.len(), s);
        assert_eq!(grad_remove.len(), s);
        let cache = self.cache.take().expect("backward called before forward");

        // Chain through the sigmoid: dz = dp * p * (1 - p). The probability
        // is clamped to the same range the loss uses before forming the
        // derivative factor: in f32 the sigmoid saturates to exactly 0 or 1,
        // and an unclamped factor would zero the gradient there permanently.
        // With the shared clamp the composition with the loss gradient
        // recovers the fused logit gradient (p - y) even at saturation.
        let lo = T::from_f64(crate::nn::PROB_CLAMP);
        let hi = T::one() - lo;
        let to_logit_grad = |grads: &[T], probs: &[T]| {
            Tensor2::from_vec(
                s,
                1,
                grads
                    .iter()
                    .zip(probs)
                    .map(|(&g, &p)| {
                        let p = p.max(lo).min(hi);
                        g * p * (T::one() - p)
                    })
                    .collect(),
            )
        };

        let w2 = *self.config.b2_widths.last().unwrap();
        let mut grad_bottleneck = vec![T::zero(); 2 * w2];
        let decode_backward =
            |b3: &mut Mlp<T>, head: &mut LinearLayer<T>, dz: &Tensor2<T>, grad_bottleneck: &mut [T]| {
                let g = head.backward(dz);
                let g = b3.backward(&g);
                let w1 = g.cols - 2 * w2;
                let mut grad_feat1 = Tensor2::zeros(s, w1);
                for r in 0..s {
                    let row = g.row(r);
                    for (bv, v) in grad_bottleneck.iter_mut().zip(&row[..2 * w2]) {
                        *bv += *v;
                    }
                    grad_feat1.row_mut(r).copy_from_slice(&row[2 * w2..]);
                }
                grad_feat1
            };

        let dz_remove = to_logit_grad(grad_remove, &cache.probs_remove);
        let mut grad_feat1_in =
            decode_backward(&mut self.b3_inlier, &mut self.head_remove, &dz_remove, &mut grad_bottleneck);
        let dz_add = to_logit_grad(grad_add, &cache.probs_add);
        let mut grad_feat1_nb =
            decode_backward(&mut self.b3_neighbor, &mut self.head_add, &dz_add, &mut grad_bottleneck);

        // Pooling backward: spread each pooled gradient over the S rows.
        let inv_s = T::from_f64(1.0 / s as f64);
        let spread = |part: &[T]| {
            let mut t = Tensor2::zeros(s, w2);
            for r in 0..s {
                for (tv, v) in t.row_mut(r).iter_mut().zip(part) {
                    *tv = *v * inv_s;
                }
            }
            t
        };
        let mut g2_in = spread(&grad_bottleneck[..w2]);
        for stage in self.b2_inlier.iter_mut().rev() {
            g2_in = stage.backward(&g2_in);
        }
        grad_feat1_in.add_assign(&g2_in);
        let mut g2_nb = spread(&grad_bottleneck[w2..]);
        for stage in self.b2_neighbor.iter_mut().rev() {
            g2_nb = stage.backward(&g2_nb);
        }
        grad_feat1_nb.add_assign(&g2_nb);

        if self.b1_neighbor.is_none() {
            let w1 = grad_feat1_in.cols;
            let mut g = Tensor2::zeros(2 * s, w1);
            g.data[..s * w1].copy_from_slice(&grad_feat1_in.data);
            g.data[s * w1..].copy_from_slice(&grad_feat1_nb.data);
            for stage in self.b1_inlier.iter_mut().rev() {
                g = stage.backward(&g);
            }
        } else {
            let mut g = grad_feat1_in;
            for stage in self.b1_inlier.iter_mut().rev() {
                g = stage.backward(&g);
            }
            let mut g = grad_feat1_nb;
            for stage in self.b1_neighbor.as_mut().unwrap().iter_mut().rev() {
                g = stage.backward(&g);
            }
        }
    }

    /// f64 convenience wrapper used by the inference engine.
    pub fn predict_f64(
        &mut self,
        inlier: &Tensor2<f64>,
        neighbor: &Tensor2<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let conv = |t: &Tensor2<f64>| {
            Tensor2::from_vec(
                t.rows,
                t.cols,
                t.data.iter().map(|&v| T::from_f64(v)).collect(),
            )
        };
        let (add, remove) = self.forward(&conv(inlier), &conv(neighbor));
        (
            add.iter().map(|&v| Scalar::to_f64(v)).collect(),
            remove.iter().map(|&v| Scalar::to_f64(v)).collect(),
        )
    }
}

impl<T: Scalar> Parameterized<T> for RegionNetwork<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>)) {
        visit_stages(&mut self.b1_inlier, "b1_inlier", f);
        if let Some(b1) = &mut self.b1_neighbor {
            visit_stages(b1, "b1_neighbor", f);
        }
        visit_stages(&mut self.b2_inlier, "b2_inlier", f);
        visit_stages(&mut self.b2_neighbor, "b2_neighbor", f);
        self.b3_inlier
            .visit_params(&mut |n, p, g| f(&format!("b3_inlier.{n}"), p, g));
        self.b3_neighbor
            .visit_params(&mut |n, p, g| f(&format!("b3_neighbor.{n}"), p, g));
        self.head_remove
            .visit_params(&mut |n, p, g| f(&format!("head_remove.{n}"), p, g));
        self.head_add
            .visit_params(&mut |n, p, g| f(&format!("head_add.{n}"), p, g));
    }
}
