//! Dual-domain prediction heads, cross-entropy and the joint loss.
//!
//! The head for domain `X` scores the full vocabulary of `X` from
//! `[H_X ; H_other]` (width `4d`), target domain first.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::autodiff::Var;
use crate::dataio::Domain;
use crate::error::{Error, Result};
use crate::params::Head;

/// Smallest probability fed to `ln` in [`ce_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Head weights as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars<'t> {
    /// `items × 4d`
    pub w: Var<'t>,
    /// `1 × items`
    pub b: Var<'t>,
}

/// Batched logits: rows of `h_target` and `h_other` (each `n × 2d`) are the
/// two preferences of one sequence.
pub fn logits<'t>(h_target: Var<'t>, h_other: Var<'t>, head: HeadVars<'t>) -> Result<Var<'t>> {
    if h_target.shape() != h_other.shape() {
        return Err(Error::shape("logits", h_target.shape(), h_other.shape()));
    }
    let joint = Var::hconcat(&[h_target, h_other])?;
    joint.matmul_t(head.w)?.add_row(head.b)
}

/// Mean cross-entropy of the rows listed in `targets` (row, item). An empty
/// target list gives the constant 0.
pub fn cross_entropy<'t>(logits: Var<'t>, targets: &[(usize, usize)]) -> Result<Var<'t>> {
    if targets.is_empty() {
        return Ok(logits.tape().scalar(0.0));
    }
    let picked = logits.log_softmax_rows()?.pick(targets.to_vec())?;
    picked.sum()?.scale(-1.0 / targets.len() as f64)
}

fn softmax(z: Array1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = z.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Probability vector over `domain`'s items for one sequence, given its
/// two preferences `H_A` and `H_B` (each of width `2d`).
pub fn predict(h_a: ArrayView1<'_, f64>, h_b: ArrayView1<'_, f64>, head: &Head, domain: Domain) -> Result<Array1<f64>> {
    if h_a.len() != h_b.len() {
        return Err(Error::shape("predict", (1, h_a.len()), (1, h_b.len())));
    }
    let (first, second) = match domain {
        Domain::A => (h_a, h_b),
        Domain::B => (h_b, h_a),
    };
    let mut x = first.to_vec();
    x.extend(second.iter());
    let x = Array1::from(x);
    if head.w.ncols() != x.len() {
        return Err(Error::shape("predict", head.w.dim(), (1, x.len())));
    }
    Ok(softmax(head.w.dot(&x) + head.b.index_axis(Axis(0), 0)))
}

/// Row-wise softmax of a logit matrix.
pub fn probabilities(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(row.to_owned());
        row.assign(&p);
    }
    out
}

/// `−ln p[target]`, with `p[target]` clamped at [`PROB_FLOOR`].
pub fn ce_loss(probs: ArrayView1<'_, f64>, target: usize) -> Result<f64> {
    let p = *probs
        .get(target)
        .ok_or(Error::Index { what: "target item", index: target, len: probs.len() })?;
    if p < PROB_FLOOR {
        log::warn!("ce_loss: target probability {p:e} clamped to {PROB_FLOOR:e}");
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Per-domain losses of one batch. The SSL terms already carry `ssl_reg`.
#[derive(Debug, Clone, Copy)]
pub struct Losses<'t> {
    pub l_a: Var<'t>,
    pub l_b: Var<'t>,
    pub ls_a: Var<'t>,
    pub ls_b: Var<'t>,
    pub joint: Var<'t>,
}

/// `(L_A + β·L_sA) + (L_B + β·L_sB)`.
pub fn joint_loss<'t>(l_a: Var<'t>, l_b: Var<'t>, ls_a: Var<'t>, ls_b: Var<'t>, beta: f64) -> Result<Losses<'t>> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    let a = l_a.add(ls_a.scale(beta)?)?;
    let b = l_b.add(ls_b.scale(beta)?)?;
    Ok(Losses { l_a, l_b, ls_a, ls_b, joint: a.add(b)? })
}
