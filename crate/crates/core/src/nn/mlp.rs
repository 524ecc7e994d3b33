//! Small multi-layer perceptron: linear layers with ReLU between them.

use rand::Rng;

use super::linear::{LinearLayer, Parameterized};
use super::scalar::Scalar;
use super::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<LinearLayer<T>>,
    /// Apply ReLU after the final layer as well (decoder stages do).
    relu_after_last: bool,
    /// Post-ReLU outputs cached per activated layer for the backward pass.
    activations: Vec<Tensor2<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [in, hidden..., out]`; ReLU between consecutive layers.
    pub fn new(dims: &[usize], relu_after_last: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::new(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            relu_after_last,
            activations: Vec::new(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    fn relu_at(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_after_last
    }

    pub fn forward(&mut self, input: &Tensor2<T>) -> Tensor2<T> {
        self.activations.clear();
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.layers[i].forward(&x);
            if self.relu_at(i) {
                for v in x.data.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                self.activations.push(x.clone());
            }
        }
        x
    }

    pub fn backward(&mut self, grad_out: &Tensor2<T>) -> Tensor2<T> {
        let mut g = grad_out.clone();
        let mut act_idx = self.activations.len();
        for i in (0..self.layers.len()).rev() {
            if self.relu_at(i) {
                act_idx -= 1;
                let act = &self.activations[act_idx];
                for (gv, av) in g.data.iter_mut().zip(&act.data) {
                    if *av <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            g = self.layers[i].backward(&g);
        }
        g
    }
}

impl<T: Scalar> Parameterized<T> for Mlp<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>, &mut Tensor2<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&mut |name, p, g| f(&format!("l{i}.{name}"), p, g));
        }
    }
}
