use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{check_dim, Error, Result};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model<P: Parameters>(model: &P) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Self::new(&shapes)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step_model<P: Parameters>(&mut self, model: &mut P, grads: &P, lr: f64) -> Result<()> {
        self.step_slices(model.params_mut(), grads.params(), lr)
    }

    /// One Adam update. Gradients are checked before anything is written, so
    /// a non-finite gradient leaves parameters and state untouched.
    pub fn step_slices(
        &mut self,
        mut params: Vec<&mut [f64]>,
        grads: Vec<&[f64]>,
        lr: f64,
    ) -> Result<()> {
        check_dim("adam tensor count", self.first.len(), params.len())?;
        check_dim("adam gradient count", self.first.len(), grads.len())?;
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            check_dim("adam tensor", self.first[i].len(), p.len())?;
            check_dim("adam gradient", self.first[i].len(), g.len())?;
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in tensor #{i} at element {j}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        state
            .step_slices(vec![&mut p], vec![&[0.0; 3]], 0.1)
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(&[1]);
        let mut p = vec![0.0];
        state.step_slices(vec![&mut p], vec![&[1.0]], 0.1).unwrap();
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut state = AdamState::new(&[2, 2]);
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        let err = state
            .step_slices(
                vec![&mut a, &mut b],
                vec![&[0.0, 0.0], &[0.0, f64::NAN]],
                0.1,
            )
            .unwrap_err();
        assert!(err.to_string().contains("tensor #1"));
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn three_steps_on_quadratic_match_scripted_oracle() {
        // scripted Adam for f(w) = w^2, written out independently
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut state = AdamState::new(&[1]);
        let mut p = vec![1.0];
        for _ in 0..3 {
            let g = [2.0 * p[0]];
            state.step_slices(vec![&mut p], vec![&g], lr).unwrap();
        }
        assert!((p[0] - w).abs() < 1e-12);
    }
}
