//! Fully connected layer with cached activations for reverse-mode gradients.

use rand::Rng;

use super::scalar::Scalar;
use super::tensor::Tensor2;

/// Visitor over named (parameter, gradient) pairs. Visit order is fixed per
/// model, which Adam state and checkpoints rely on.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, g| g.fill(T::zero()));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.data.len());
        n
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    /// `out x in`.
    pub weight: Tensor2<T>,
    /// `1 x out`.
    pub bias: Tensor2<T>,
    pub grad_weight: Tensor2<T>,
    pub grad_bias: Tensor2<T>,
    cached_input: Option<Tensor2<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    /// Glorot-uniform initialization.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let scale = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Tensor2::from_vec(
            out_dim,
            in_dim,
            (0..out_dim * in_dim)
                .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
                .collect(),
        );
        Self {
            bias: Tensor2::zeros(1, out_dim),
            grad_weight: Tensor2::zeros(out_dim, in_dim),
            grad_bias: Tensor2::zeros(1, out_dim),
            weight,
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    /// `y = x W^T + b`, caching `x` for the backward pass.
    pub fn forward(&mut self, input: &Tensor2<T>) -> Tensor2<T> {
        assert_eq!(
            input.cols,
            self.in_dim(),
            "linear forward: input cols {} != in_dim {}",
            input.cols,
            self.in_dim()
        );
        let mut out = Tensor2::matmul_nt(input, &self.weight);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias.data) {
                *v += *b;
            }
        }
        self.cached_input = Some(input.clone());
        out
    }

    /// Accumulates parameter gradients from `grad_out` and returns the
    /// gradient with respect to the cached input.
    pub fn backward(&mut self, grad_out: &Tensor2<T>) -> Tensor2<T> {
        let input = self
            .cached_input
            .as_ref()
            .expect("backward called before forward");
        assert_eq!(grad_out.cols, self.out_dim());
        assert_eq!(grad_out.rows, input.rows);
        Tensor2::matmul_tn_acc(grad_out, input, &mut self.grad_weight);
        for r in 0..grad_out.rows {
            for (gb, g) in self.grad_bias.data.iter_mut().zip(grad_out.row(r)) {
                *gb += *g;
            }
        }
        Tensor2::matmul(grad_out, &self.weight)
    }
}

impl<T: Scalar> Parameterized<T> for LinearLayer<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>)) {
        f("weight", &mut self.weight, &mut self.grad_weight);
        f("bias", &mut self.bias, &mut self.grad_bias);
    }
}
