//! InfoNCE over two augmented views of the same batch graph.
//!
//! Row `o` of each view is the same item node. The pair `(z¹_o, z²_o)` is the
//! positive; `(z¹_o, z²_q)` for `q ≠ o` are the negatives. Similarity is
//! cosine divided by the temperature `τ`, and the loss is summed over rows.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::gnn::NodeReps;

/// Added to every row norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

pub fn info_nce<'t>(z1: Var<'t>, z2: Var<'t>, tau: f64) -> Result<Var<'t>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if z1.shape() != z2.shape() {
        return Err(Error::shape("info_nce", z1.shape(), z2.shape()));
    }
    let n = z1.shape().0;
    if n == 0 {
        return Err(Error::Contract("info_nce needs at least one row".into()));
    }
    for z in [z1, z2] {
        if z.with_value(|v| v.rows().into_iter().any(|r| r.dot(&r) == 0.0)) {
            log::warn!("info_nce: zero-norm row, cosine uses eps {NORM_EPS}");
        }
    }
    let a = z1.normalize_rows(NORM_EPS)?;
    let b = z2.normalize_rows(NORM_EPS)?;
    let logits = a.matmul_t(b)?.scale(1.0 / tau)?;
    let log_probs = logits.log_softmax_rows()?;
    log_probs.pick((0..n).map(|o| (o, o)).collect())?.sum()?.scale(-1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct SslLosses<'t> {
    pub a: Var<'t>,
    pub b: Var<'t>,
    /// set when the batch had no domain-B items and `b` is the constant 0
    pub empty_b: bool,
    pub empty_a: bool,
}

/// Domain-wise InfoNCE between two encodings of the same batch graph.
pub fn ssl_losses<'t>(v1: &NodeReps<'t>, v2: &NodeReps<'t>, tau: f64) -> Result<SslLosses<'t>> {
    if v1.a != v2.a || v1.b != v2.b {
        return Err(Error::Contract("views disagree on node ordering".into()));
    }
    let tape = v1.output.tape();
    let (empty_a, empty_b) = (v1.a.is_empty(), v1.b.is_empty());
    let a = if empty_a { tape.scalar(0.0) } else { info_nce(v1.e_a()?, v2.e_a()?, tau)? };
    let b = if empty_b { tape.scalar(0.0) } else { info_nce(v1.e_b()?, v2.e_b()?, tau)? };
    Ok(SslLosses { a, b, empty_a, empty_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn single_row_has_no_negatives() {
        let t = Tape::new();
        let z = t.constant(array![[0.3, -1.0, 2.0]]);
        assert_abs_diff_eq!(info_nce(z, z, 0.2).unwrap().item(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn orthonormal_pair_closed_form() {
        let t = Tape::new();
        let z = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let per_row = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        let loss = info_nce(z, z, 1.0).unwrap().item();
        assert_abs_diff_eq!(loss, 2.0 * per_row, epsilon = 1e-10);
        assert_abs_diff_eq!(loss, 0.6265, epsilon = 1e-4);
    }

    #[test]
    fn scale_invariant() {
        let t = Tape::new();
        let z1 = t.constant(array![[1.0, 2.0], [-0.5, 0.3], [0.0, 1.0]]);
        let z2 = t.constant(array![[0.9, 2.2], [-0.1, 0.3], [0.4, 1.0]]);
        let base = info_nce(z1, z2, 0.5).unwrap().item();
        let scaled = info_nce(z1.scale(3.0).unwrap(), z2.scale(3.0).unwrap(), 0.5).unwrap().item();
        assert_abs_diff_eq!(base, scaled, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = Tape::new();
        let z = t.constant(array![[1.0, 0.0]]);
        assert!(info_nce(z, z, 0.0).is_err());
        let w = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(info_nce(z, w, 1.0).is_err());
    }

    #[test]
    fn zero_row_stays_finite() {
        let t = Tape::new();
        let z = t.param(array![[0.0, 0.0], [1.0, 0.0]]);
        let loss = info_nce(z, z, 1.0).unwrap();
        assert!(loss.item().is_finite());
        let g = t.backward(loss).unwrap();
        assert!(g.get(z).unwrap().iter().all(|v| v.is_finite()));
    }
}
