//! External-attention sequence encoder.
//!
//! The pair score `f(e_i, e_j) = w2ᵀ · LeakyReLU(w1 · (e_i ⊙ e_j) + b)` comes from
//! a small MLP whose weights persist across batches. For a sequence of length
//! `L` every ordered pair (including `i = j`) is scored, each row of the score
//! matrix is normalized into `a_{i,·}`, item `i` attends to `h_i = Σ_j a_ij e_j`,
//! and the sequence representation is the mean of the `h_i`.
//!
//! Nothing here looks across sequences: the batched entry point
//! [`attend_sequences`] evaluates each sequence in its own row segment, so a
//! sequence's output depends only on its own items and the MLP weights.

use std::rc::Rc;

use crate::autodiff::Var;
use crate::config::AttentionMode;
use crate::error::{Error, Result};

pub const SCORE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub struct EaVars<'t> {
    /// `d × d`
    pub w1: Var<'t>,
    /// `d × 1`
    pub w2: Var<'t>,
    /// `1 × d`
    pub b: Var<'t>,
}

/// Scores rows of elementwise products `e_i ⊙ e_j`, giving an `n×1` column.
fn mlp_scores<'t>(products: Var<'t>, ea: EaVars<'t>) -> Result<Var<'t>> {
    products
        .matmul_t(ea.w1)?
        .add_row(ea.b)?
        .leaky_relu(SCORE_SLOPE)?
        .matmul(ea.w2)
}

/// `f(e_i, e_j)` for two `1×d` rows.
pub fn pair_score<'t>(e_i: Var<'t>, e_j: Var<'t>, ea: EaVars<'t>) -> Result<Var<'t>> {
    mlp_scores(e_i.mul(e_j)?, ea)
}

struct PairLayout {
    idx_i: Vec<usize>,
    idx_j: Vec<usize>,
    /// one group of `L` pairs per `(sequence, i)`
    groups: Rc<Vec<usize>>,
    /// group index of every pair, to broadcast group sums back
    group_of_pair: Rc<Vec<usize>>,
}

fn pair_layout(lens: &[usize]) -> PairLayout {
    let n_pairs: usize = lens.iter().map(|l| l * l).sum();
    let mut idx_i = Vec::with_capacity(n_pairs);
    let mut idx_j = Vec::with_capacity(n_pairs);
    let mut groups = Vec::new();
    let mut group_of_pair = Vec::with_capacity(n_pairs);
    let mut start = 0;
    for &len in lens {
        for i in 0..len {
            for j in 0..len {
                idx_i.push(start + i);
                idx_j.push(start + j);
                group_of_pair.push(groups.len());
            }
            groups.push(len);
        }
        start += len;
    }
    PairLayout { idx_i, idx_j, groups: Rc::new(groups), group_of_pair: Rc::new(group_of_pair) }
}

fn check_rows(x: Var<'_>, lens: &[usize]) -> Result<()> {
    let total: usize = lens.iter().sum();
    if total != x.shape().0 {
        return Err(Error::shape("attend_sequences", x.shape(), (total, x.shape().1)));
    }
    Ok(())
}

/// Normalized attention weights for every pair of the packed sequences, as an
/// `n_pairs × 1` column plus the pair layout.
fn pair_weights<'t>(
    x: Var<'t>,
    lens: &[usize],
    ea: EaVars<'t>,
    mode: AttentionMode,
) -> Result<(Var<'t>, Var<'t>, PairLayout)> {
    let layout = pair_layout(lens);
    let xi = x.gather_rows(layout.idx_i.clone())?;
    let xj = x.gather_rows(layout.idx_j.clone())?;
    let scores = mlp_scores(xi.mul(xj)?, ea)?;
    let weights = match mode {
        AttentionMode::Softmax => scores.segment_softmax(Rc::clone(&layout.groups))?,
        AttentionMode::Sqrt => {
            let denom = scores
                .scale(0.5)?
                .exp()?
                .segment_sum(Rc::clone(&layout.groups))?
                .gather_rows(Rc::clone(&layout.group_of_pair))?;
            scores.exp()?.div_by_col(denom)?
        }
    };
    Ok((weights, xj, layout))
}

/// Packed sequences: `x` stacks the item embeddings of every sequence
/// (`Σ lens` rows). Returns one `1×d` row per sequence; an empty sequence
/// yields a zero row.
pub fn attend_sequences<'t>(x: Var<'t>, lens: &[usize], ea: EaVars<'t>, mode: AttentionMode) -> Result<Var<'t>> {
    check_rows(x, lens)?;
    let (weights, xj, layout) = pair_weights(x, lens, ea, mode)?;
    let attended = xj.mul_col(weights)?.segment_sum(Rc::clone(&layout.groups))?;
    mean_by_segment(attended, lens)
}

/// Plain mean of each sequence's item embeddings (the encoder with external
/// attention switched off).
pub fn mean_pool_sequences<'t>(x: Var<'t>, lens: &[usize]) -> Result<Var<'t>> {
    check_rows(x, lens)?;
    mean_by_segment(x, lens)
}

fn mean_by_segment<'t>(x: Var<'t>, lens: &[usize]) -> Result<Var<'t>> {
    let inv = ndarray::Array2::from_shape_fn((lens.len(), 1), |(s, _)| {
        if lens[s] == 0 {
            0.0
        } else {
            1.0 / lens[s] as f64
        }
    });
    let inv = x.tape().constant(inv);
    x.segment_sum(lens.to_vec())?.mul_col(inv)
}

/// Sequence representation `h_S` (`1×d`) for one non-empty sequence (`L×d`).
pub fn attend_sequence<'t>(items: Var<'t>, ea: EaVars<'t>, mode: AttentionMode) -> Result<Var<'t>> {
    let len = items.shape().0;
    if len == 0 {
        return Err(Error::Contract("attend_sequence needs at least one item".into()));
    }
    attend_sequences(items, &[len], ea, mode)
}

/// The `L×L` attention matrix of one sequence.
pub fn attention_matrix<'t>(items: Var<'t>, ea: EaVars<'t>, mode: AttentionMode) -> Result<Var<'t>> {
    let len = items.shape().0;
    if len == 0 {
        return Err(Error::Contract("attention over an empty sequence".into()));
    }
    let (weights, _, _) = pair_weights(items, &[len], ea, mode)?;
    weights.reshape(len, len)
}

/// `[h ; e_u]`, sequence part first.
pub fn build_preference<'t>(h: Var<'t>, e_u: Var<'t>) -> Result<Var<'t>> {
    if h.shape() != e_u.shape() {
        return Err(Error::shape("build_preference", h.shape(), e_u.shape()));
    }
    Var::hconcat(&[h, e_u])
}
