//! Point transformer block: linear in, attention, linear out, residual add.

use rand::Rng;

use super::attention::PointTransformerLayer;
use crate::nn::{LinearLayer, Parameterized, Scalar, Tensor2};

#[derive(Debug, Clone)]
pub struct TransformerBlock<T> {
    pub lin_in: LinearLayer<T>,
    pub attention: PointTransformerLayer<T>,
    pub lin_out: LinearLayer<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    /// Input and output width `dim`; the attention path runs at `d_attn`.
    pub fn new(dim: usize, d_attn: usize, k_attn: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin_in: LinearLayer::new(dim, d_attn, rng),
            attention: PointTransformerLayer::new(d_attn, d_attn, k_attn, rng),
            lin_out: LinearLayer::new(d_attn, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.lin_in.in_dim()
    }

    /// `out = input + lin_out(attention(lin_in(input)))`.
    pub fn forward(
        &mut self,
        input: &Tensor2<T>,
        neighbor_ids: &[u32],
        diffs: &Tensor2<T>,
    ) -> Tensor2<T> {
        assert_eq!(input.cols, self.dim(), "transformer block width mismatch");
        let h = self.lin_in.forward(input);
        let a = self.attention.forward(&h, neighbor_ids, diffs);
        let mut out = self.lin_out.forward(&a);
        out.add_assign(input);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor2<T>) -> Tensor2<T> {
        let g = self.lin_out.backward(grad_out);
        let g = self.attention.backward(&g);
        let mut g = self.lin_in.backward(&g);
        g.add_assign(grad_out);
        g
    }
}

impl<T: Scalar> Parameterized<T> for TransformerBlock<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>)) {
        self.lin_in
            .visit_params(&mut |n, p, g| f(&format!("lin_in.{n}"), p, g));
        self.attention
            .visit_params(&mut |n, p, g| f(&format!("attn.{n}"), p, g));
        self.lin_out
            .visit_params(&mut |n, p, g| f(&format!("lin_out.{n}"), p, g));
    }
}
