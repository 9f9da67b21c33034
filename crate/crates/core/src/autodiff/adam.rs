use super::nn::Parameter;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators for Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> Self {
        let first_moment: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: Vec<&mut Parameter>, lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::DimensionMismatch {
                context: "AdamState::step",
                expected: self.first_moment.len(),
                found: params.len(),
            });
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    context: "AdamState::step",
                    left: p.value.shape().to_vec(),
                    right: m.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, m), v) in params
            .into_iter()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let Parameter { value, grad } = p;
            for (((w, g), mi), vi) in value
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Parameter::new(Tensor::from_vec(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let mut st = AdamState::new([&p]);
        st.step(vec![&mut p], 0.1).unwrap();
        assert_eq!(p.value.values(), &[0.5, -0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 at t = 1, so Δ = lr · 1 / (1 + 1e-8).
        let mut p = Parameter::new(Tensor::scalar(0.0));
        p.grad = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        st.step(vec![&mut p], 0.1).unwrap();
        assert!((p.value.item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p.grad.item(), 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [3.0, -2.0, 0.5];
        let mut p = Parameter::new(Tensor::zeros(&[1, 3]));
        let mut st = AdamState::new([&p]);
        let loss = |w: &[f64]| -> f64 { w.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut steps = 0;
        while loss(p.value.values()) >= 1e-6 {
            let g: Vec<f64> = p.value.values().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            p.grad = Tensor::from_vec(vec![1, 3], g).unwrap();
            st.step(vec![&mut p], 0.01).unwrap();
            steps += 1;
            assert!(steps <= 2000, "did not converge");
        }
    }

    #[test]
    fn parameter_count_mismatch() {
        let p = Parameter::new(Tensor::scalar(0.0));
        let mut st = AdamState::new([&p]);
        assert!(st.step(vec![], 0.1).is_err());
    }
}
