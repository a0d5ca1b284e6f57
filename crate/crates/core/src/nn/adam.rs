use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam over a list of flat parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeError(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::ShapeError(format!(
                    "tensor {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::ShapeError(
                "parameter shapes changed between Adam steps".into(),
            ));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let mut theta = [0.0];
        let mut adam = Adam::new(2e-3);
        adam.step(&mut [&mut theta], &[&[0.5]]).unwrap();
        let expected = -2e-3 * 0.5 / (0.5 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18);
        assert!((theta[0] + 0.002).abs() < 1e-10);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut theta = [1.5, -2.0];
        let mut adam = Adam::new(1e-2);
        adam.step(&mut [&mut theta], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(theta, [1.5, -2.0]);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let mut a = [0.3, 0.3];
        let mut b = [0.3];
        let mut adam = Adam::new(1e-2);
        for _ in 0..5 {
            adam.step(&mut [&mut a, &mut b], &[&[0.7, 0.7], &[0.7]]).unwrap();
        }
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0], b[0]);
        assert!(adam.second_moments().iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut a = [0.0, 0.0];
        let mut adam = Adam::new(1e-3);
        assert!(matches!(
            adam.step(&mut [&mut a], &[&[1.0]]),
            Err(Error::ShapeError(_))
        ));
        assert!(adam.step(&mut [&mut a], &[]).is_err());
    }
}
