//! Central-finite-difference verification of analytic parameter gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linear::Parameterized;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares the analytic gradients currently stored in `model` against
/// `(f(p+h) - f(p-h)) / 2h` of the scalarized loss, entry by entry.
///
/// `loss` must be a deterministic forward-only evaluation. Relative error is
/// measured against `max(1, |analytic|, |fd|)`. When `max_entries` is set, a
/// seeded random subset of parameter entries is checked.
pub fn grad_check<M, F>(
    model: &mut M,
    mut loss: F,
    h: f64,
    max_entries: Option<usize>,
    seed: u64,
) -> GradCheckReport
where
    M: Parameterized<f64>,
    F: FnMut(&mut M) -> f64,
{
    // Snapshot analytic gradients and tensor sizes.
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |_, _, g| analytic.push(g.data.clone()));

    let mut entries: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, g)| (0..g.len()).map(move |i| (t, i)))
        .collect();
    if let Some(cap) = max_entries {
        if entries.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            entries.shuffle(&mut rng);
            entries.truncate(cap);
            entries.sort_unstable();
        }
    }

    let perturb = |model: &mut M, tensor: usize, elem: usize, delta: f64| {
        let mut idx = 0;
        model.visit_params(&mut |_, p, _| {
            if idx == tensor {
                p.data[elem] += delta;
            }
            idx += 1;
        });
    };

    let mut max_rel_err: f64 = 0.0;
    for &(t, i) in &entries {
        perturb(model, t, i, h);
        let plus = loss(model);
        perturb(model, t, i, -2.0 * h);
        let minus = loss(model);
        perturb(model, t, i, h);
        let fd = (plus - minus) / (2.0 * h);
        let a = analytic[t][i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        max_rel_err = max_rel_err.max(rel);
    }
    GradCheckReport {
        max_rel_err,
        checked: entries.len(),
    }
}

/// Adds small uniform noise to every parameter entry.
///
/// Freshly initialized models have exactly-zero biases, which can park ReLU
/// pre-activations exactly on the kink (for example the positional encoding
/// of a point paired with itself). Finite differences straddle the kink
/// there while the analytic pass picks one subgradient, so gradient checks
/// should jitter parameters off the kink first.
pub fn jitter_params<M: Parameterized<f64>>(model: &mut M, scale: f64, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_params(&mut |_, p, _| {
        for v in p.data.iter_mut() {
            *v += (rng.gen::<f64>() * 2.0 - 1.0) * scale;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::linear::LinearLayer;
    use crate::nn::loss::bce_dual_loss;
    use crate::nn::tensor::Tensor2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// LinearLayer + sigmoid + BCE against fixed targets.
    struct Toy {
        layer: LinearLayer<f64>,
        input: Tensor2<f64>,
        truth: Vec<u8>,
    }

    impl Toy {
        fn forward_loss(&mut self) -> f64 {
            let out = self.layer.forward(&self.input);
            let probs: Vec<f64> = out.data.iter().map(|&v| sigmoid(v)).collect();
            bce_dual_loss(&probs, &self.truth, &probs, &self.truth).loss
        }

        fn backward(&mut self) {
            let out = self.layer.forward(&self.input);
            let probs: Vec<f64> = out.data.iter().map(|&v| sigmoid(v)).collect();
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

    impl crate::nn::linear::Parameterized<f64> for Toy {
        fn visit_params(
            &mut self,
            f: &mut dyn FnMut(&str, &mut Tensor2<f64>, &mut Tensor2<f64>),
        ) {
            self.layer.visit_params(f);
        }
    }

    #[test]
    fn linear_bce_gradients_within_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let layer = LinearLayer::new(6, 4, &mut rng);
        let input = Tensor2::from_vec(3, 6, (0..18).map(|_| rng.gen::<f64>() - 0.5).collect());
        let truth: Vec<u8> = (0..12).map(|_| rng.gen_range(0..2) as u8).collect();
        let mut toy = Toy {
            layer,
            input,
            truth,
        };
        toy.zero_grads();
        toy.backward();
        let report = grad_check(&mut toy, |m| m.forward_loss(), 1e-5, None, 0);
        assert!(
            report.max_rel_err < 1e-6,
            "max rel err {}",
            report.max_rel_err
        );
    }
}
