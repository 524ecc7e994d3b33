//! Local vector self-attention over point neighborhoods.
//!
//! For each point i with neighborhood J(i):
//!
//! ```text
//! y_i = sum_{j in J(i)} rho(gamma(phi(x_i) - psi(x_j) + delta_ij)) (.) (alpha(x_j) + delta_ij)
//! delta_ij = beta(p_i - p_j)
//! ```
//!
//! where `rho` is a softmax over the neighbors of i, applied independently
//! per feature channel, and `(.)` is the elementwise product.

use rand::Rng;

use crate::index::SpatialIndex;
use crate::nn::{LinearLayer, Mlp, Parameterized, Scalar, Tensor2};

#[derive(Debug, Clone)]
struct AttnCache<T> {
    neighbor_ids: Vec<u32>,
    n: usize,
    k: usize,
    /// Post-softmax attention weights, `(n*k) x d`.
    weights: Tensor2<T>,
    /// `alpha(x)` per point, `n x d`.
    values: Tensor2<T>,
    /// `beta(p_i - p_j)` per pair, `(n*k) x d`.
    delta: Tensor2<T>,
}

/// Parameter bundle for one attention layer: the feature maps phi/psi/alpha,
/// the positional MLP beta (3 linear layers, 2 ReLUs) and the score MLP
/// gamma (2 linear layers, 1 ReLU).
#[derive(Debug, Clone)]
pub struct PointTransformerLayer<T> {
    pub phi: LinearLayer<T>,
    pub psi: LinearLayer<T>,
    pub alpha: LinearLayer<T>,
    pub beta: Mlp<T>,
    pub gamma: Mlp<T>,
    pub k_attn: usize,
    cache: Option<AttnCache<T>>,
}

impl<T: Scalar> PointTransformerLayer<T> {
    pub fn new(d_in: usize, d_attn: usize, k_attn: usize, rng: &mut impl Rng) -> Self {
        assert!(k_attn >= 1);
        Self {
            phi: LinearLayer::new(d_in, d_attn, rng),
            psi: LinearLayer::new(d_in, d_attn, rng),
            alpha: LinearLayer::new(d_in, d_attn, rng),
            beta: Mlp::new(&[3, d_attn, d_attn, d_attn], false, rng),
            gamma: Mlp::new(&[d_attn, d_attn, d_attn], false, rng),
            k_attn,
            cache: None,
        }
    }

    pub fn d_attn(&self) -> usize {
        self.phi.out_dim()
    }

    /// The positional encoding `beta(p_i - p_j)` for a single pair.
    pub fn positional_encoding(&mut self, p_i: &[f64; 3], p_j: &[f64; 3]) -> Vec<T> {
        let diff = Tensor2::from_rows_f64(&[vec![
            p_i[0] - p_j[0],
            p_i[1] - p_j[1],
            p_i[2] - p_j[2],
        ]]);
        self.beta.forward(&diff).data
    }

    /// Forward pass. `neighbor_ids` is row-major `n x k` with the point's own
    /// id in position 0; `diffs` holds the matching `p_i - p_j` rows.
    pub fn forward(
        &mut self,
        features: &Tensor2<T>,
        neighbor_ids: &[u32],
        diffs: &Tensor2<T>,
    ) -> Tensor2<T> {
        let n = features.rows;
        let k = self.k_attn.min(n);
        assert_eq!(neighbor_ids.len(), n * k, "neighbor id table size mismatch");
        assert_eq!(diffs.rows, n * k);
        let d = self.d_attn();

        let queries = self.phi.forward(features);
        let keys = self.psi.forward(features);
        let values = self.alpha.forward(features);
        let delta = self.beta.forward(diffs);

        // Score input per pair: phi(x_i) - psi(x_j) + delta_ij.
        let mut score_in = delta.clone();
        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let jid = neighbor_ids[r] as usize;
                assert!(jid < n, "neighbor id {jid} out of range");
                let row = score_in.row_mut(r);
                for c in 0..d {
                    row[c] += queries.get(i, c) - keys.get(jid, c);
                }
            }
        }
        let scores = self.gamma.forward(&score_in);

        // Per-channel softmax over each point's k neighbors.
        let mut weights = scores;
        for i in 0..n {
            for c in 0..d {
                let mut max = T::neg_infinity();
                for j in 0..k {
                    max = max.max(weights.get(i * k + j, c));
                }
                let mut sum = T::zero();
                for j in 0..k {
                    let e = (weights.get(i * k + j, c) - max).exp();
                    weights.set(i * k + j, c, e);
                    sum += e;
                }
                for j in 0..k {
                    let w = weights.get(i * k + j, c) / sum;
                    weights.set(i * k + j, c, w);
                }
            }
        }

        let mut out = Tensor2::zeros(n, d);
        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let jid = neighbor_ids[r] as usize;
                let out_row = out.row_mut(i);
                for c in 0..d {
                    out_row[c] += weights.get(r, c) * (values.get(jid, c) + delta.get(r, c));
                }
            }
        }

        self.cache = Some(AttnCache {
            neighbor_ids: neighbor_ids.to_vec(),
            n,
            k,
            weights,
            values,
            delta,
        });
        out
    }

    /// Backward pass; returns the gradient with respect to `features`.
    /// Gradients through the position diffs are not propagated (positions
    /// are inputs, not parameters).
    pub fn backward(&mut self, grad_out: &Tensor2<T>) -> Tensor2<T> {
        let cache = self.cache.take().expect("backward called before forward");
        let AttnCache {
            neighbor_ids,
            n,
            k,
            weights,
            values,
            delta,
        } = cache;
        let d = self.d_attn();
        assert_eq!((grad_out.rows, grad_out.cols), (n, d));

        let mut grad_values = Tensor2::zeros(n, d);
        let mut grad_delta = Tensor2::zeros(n * k, d);
        let mut grad_weights = Tensor2::zeros(n * k, d);
        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let jid = neighbor_ids[r] as usize;
                for c in 0..d {
                    let gy = grad_out.get(i, c);
                    let w = weights.get(r, c);
                    grad_values.data[jid * d + c] += w * gy;
                    grad_delta.data[r * d + c] += w * gy;
                    grad_weights.data[r * d + c] = gy * (values.get(jid, c) + delta.get(r, c));
                }
            }
        }

        // Softmax backward per (point, channel).
        let mut grad_scores = Tensor2::zeros(n * k, d);
        for i in 0..n {
            for c in 0..d {
                let mut dot = T::zero();
                for j in 0..k {
                    let r = i * k + j;
                    dot += weights.get(r, c) * grad_weights.get(r, c);
                }
                for j in 0..k {
                    let r = i * k + j;
                    let w = weights.get(r, c);
                    grad_scores.data[r * d + c] = w * (grad_weights.get(r, c) - dot);
                }
            }
        }

        let grad_score_in = self.gamma.backward(&grad_scores);

        let mut grad_queries = Tensor2::zeros(n, d);
        let mut grad_keys = Tensor2::zeros(n, d);
        for i in 0..n {
            for j in 0..k {
                let r = i * k + j;
                let jid = neighbor_ids[r] as usize;
                for c in 0..d {
                    let g = grad_score_in.get(r, c);
                    grad_queries.data[i * d + c] += g;
                    grad_keys.data[jid * d + c] -= g;
                    grad_delta.data[r * d + c] += g;
                }
            }
        }

        self.beta.backward(&grad_delta);
        let mut grad_features = self.phi.backward(&grad_queries);
        grad_features.add_assign(&self.psi.backward(&grad_keys));
        grad_features.add_assign(&self.alpha.backward(&grad_values));
        grad_features
    }
}

impl<T: Scalar> Parameterized<T> for PointTransformerLayer<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>)) {
        self.phi.visit_params(&mut |n, p, g| f(&format!("phi.{n}"), p, g));
        self.psi.visit_params(&mut |n, p, g| f(&format!("psi.{n}"), p, g));
        self.alpha
            .visit_params(&mut |n, p, g| f(&format!("alpha.{n}"), p, g));
        self.beta
            .visit_params(&mut |n, p, g| f(&format!("beta.{n}"), p, g));
        self.gamma
            .visit_params(&mut |n, p, g| f(&format!("gamma.{n}"), p, g));
    }
}

/// Builds the row-major `n x k` attention neighborhood table: each point's
/// k nearest neighbors (self included, in position 0) by Euclidean distance,
/// ties toward the smaller id.
pub fn attention_neighbors(positions: &[[f64; 3]], k: usize) -> Vec<u32> {
    let n = positions.len();
    let k = k.min(n);
    let index = SpatialIndex::build(positions);
    let mut table = Vec::with_capacity(n * k);
    for (i, p) in positions.iter().enumerate() {
        let mut ids = index.knn(p, k);
        // The point itself is at distance 0 but duplicates with smaller ids
        // may displace it; force the self id into slot 0.
        match ids.iter().position(|&id| id as usize == i) {
            Some(pos) => ids.swap(0, pos),
            None => {
                ids[k - 1] = i as u32;
                ids.swap(0, k - 1);
            }
        }
        table.extend_from_slice(&ids);
    }
    table
}

/// `p_i - p_j` rows matching an `attention_neighbors` table.
pub fn neighbor_diffs<T: Scalar>(
    positions: &[[f64; 3]],
    neighbor_ids: &[u32],
    k: usize,
) -> Tensor2<T> {
    let n = positions.len();
    let k = k.min(n);
    assert_eq!(neighbor_ids.len(), n * k);
    let mut diffs = Tensor2::zeros(n * k, 3);
    for i in 0..n {
        for j in 0..k {
            let r = i * k + j;
            let pj = positions[neighbor_ids[r] as usize];
            let row = diffs.row_mut(r);
            for a in 0..3 {
                row[a] = T::from_f64(positions[i][a] - pj[a]);
            }
        }
    }
    diffs
}
