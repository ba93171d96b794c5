use super::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    /// Moments sized for `params`, with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update `p ← p − lr·m̂/(√v̂ + ε)` for every parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::invalid(format!("missing gradient for parameter {i}")))?;
            if g.shape() != p.shape() || p.len() != self.first_moment[i].len() {
                return Err(Error::dim(format!("parameter {i} shape does not match its moments")));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].expect("checked above").data();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
