use ndarray::{Array2, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Glorot/Xavier uniform initialization, bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one pair per registered tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Array2::zeros(s), Array2::zeros(s))).unzip();
        AdamState { step: 0, m, v }
    }
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adam { lr, beta1, beta2, eps })
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn step(&self, state: &mut AdamState, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != state.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                state.m.len(),
                params.len(),
                grads.len()
            )));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.dim() != g.dim() {
                return Err(Error::shape("adam", p.dim(), g.dim()));
            }
            Zip::from(&mut **p)
                .and(&mut state.m[i])
                .and(&mut state.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn xavier_bound() {
        let w = xavier_uniform(16, 16, &mut crate::rng::rng(3));
        let bound = (6.0f64 / 32.0).sqrt();
        assert!((bound - 0.4330).abs() < 1e-4);
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert_eq!(w, xavier_uniform(16, 16, &mut crate::rng::rng(3)));
    }

    #[test]
    fn adam_descends_on_square() {
        let adam = Adam::new(0.1, 0.9, 0.999, 1e-8).unwrap();
        let mut x = array![[1.0]];
        let mut st = AdamState::new([(1, 1)]);
        let g = &x * 2.0;
        adam.step(&mut st, &mut [&mut x], &[g]).unwrap();
        assert!(x[[0, 0]] < 1.0);
        // the first bias-corrected step has magnitude lr
        assert!((x[[0, 0]] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_lr() {
        assert!(matches!(Adam::new(0.0, 0.9, 0.999, 1e-8), Err(Error::Config(_))));
        assert!(Adam::new(-1.0, 0.9, 0.999, 1e-8).is_err());
    }
}
