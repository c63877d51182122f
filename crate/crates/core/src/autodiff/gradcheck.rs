use ndarray::Array2;

use super::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(tensor, row, col, analytic, numeric)` for coordinates above tolerance
    pub failures: Vec<(usize, usize, usize, f64, f64)>,
    pub analytic: Vec<Array2<f64>>,
    pub numeric: Vec<Array2<f64>>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Largest absolute analytic gradient entry per tensor.
    pub fn max_abs_analytic(&self) -> Vec<f64> {
        self.analytic.iter().map(|g| g.iter().fold(0.0f64, |a, b| a.max(b.abs()))).collect()
    }
}

/// Compares reverse-mode gradients of a scalar `f` with central differences.
///
/// Per coordinate the error is `|analytic - numeric| / max(1, |numeric|)`; the
/// check passes when every coordinate is within `tol`. `f` must be
/// deterministic (dropout off, fixed augmentation seeds).
pub fn grad_check<F>(f: F, params: &[Array2<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.get(v).cloned().expect("leaf gradient")).collect::<Vec<_>>()
    };

    let eval = |ps: &[Array2<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut failures = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut coordinates = 0;
    for t in 0..params.len() {
        let mut num = Array2::zeros(params[t].dim());
        for ((r, c), orig) in params[t].indexed_iter() {
            work[t][[r, c]] = orig + h;
            let up = eval(&work)?;
            work[t][[r, c]] = orig - h;
            let down = eval(&work)?;
            work[t][[r, c]] = *orig;
            let n = (up - down) / (2.0 * h);
            num[[r, c]] = n;
            let a = analytic[t][[r, c]];
            let rel = (a - n).abs() / n.abs().max(1.0);
            max_rel = max_rel.max(rel);
            coordinates += 1;
            if rel > tol {
                failures.push((t, r, c, a, n));
            }
        }
        numeric.push(num);
    }

    Ok(GradCheckReport { max_rel_error: max_rel, coordinates, failures, analytic, numeric, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_matches_closed_form() {
        let x = array![[0.3, -1.2, 2.5]];
        let r = grad_check(|_, v| v[0].mul(v[0])?.sum(), std::slice::from_ref(&x), 1e-5, 1e-7).unwrap();
        assert!(r.passed(), "{}", r.max_rel_error);
        assert!(r.max_rel_error <= 1e-7);
        assert_eq!(r.analytic[0], &x * 2.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let r = grad_check(|t, _| Ok(t.scalar(4.2)), &[array![[1.0, 2.0]]], 1e-5, 1e-7).unwrap();
        assert!(r.analytic[0].iter().all(|v| v.abs() <= 1e-10));
        assert!(r.numeric[0].iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn reports_failing_coordinates() {
        // a coarse step biases the central difference of exp well above 1e-12
        let r = grad_check(|_, v| v[0].exp()?.sum(), &[array![[1.0]]], 1e-1, 1e-12).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures[0].0, 0);
    }
}
