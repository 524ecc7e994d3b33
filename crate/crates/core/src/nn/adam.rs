//! Adam optimizer with bias correction.

use super::linear::Parameterized;
use super::scalar::Scalar;
use super::tensor::Tensor2;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor, aligned
/// with the model's deterministic visit order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Tensor2<T>, Tensor2<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update using the gradients currently stored in the
    /// model. Gradients are left untouched.
    pub fn step(&mut self, model: &mut dyn Parameterized<T>) {
        self.step += 1;
        let lr = T::from_f64(self.config.lr);
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let eps = T::from_f64(self.config.epsilon);
        let bc1 = T::one() - T::from_f64(self.config.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::from_f64(self.config.beta2.powi(self.step as i32));
        let moments = &mut self.moments;
        let mut idx = 0;
        model.visit_params(&mut |_name, p, g| {
            if idx == moments.len() {
                moments.push((
                    Tensor2::zeros(p.rows, p.cols),
                    Tensor2::zeros(p.rows, p.cols),
                ));
            }
            let (m, v) = &mut moments[idx];
            assert_eq!(
                (m.rows, m.cols),
                (p.rows, p.cols),
                "optimizer state does not match parameter shapes"
            );
            idx += 1;
            for ((pv, gv), (mv, vv)) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *mv = b1 * *mv + (T::one() - b1) * *gv;
                *vv = b2 * *vv + (T::one() - b2) * *gv * *gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}
