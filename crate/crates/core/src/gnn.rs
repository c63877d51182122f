//! NGCF-style propagation over a CDS graph (or one of its views).
//!
//! Each layer computes `σ((M + I)·e·W1 + ((M·e) ⊙ e)·W2)`. The final node
//! representation is the elementwise mean of the layer outputs `e⁽¹⁾…e⁽ˢ⁾`;
//! the raw layer-0 embeddings are not part of the average.

use std::ops::Range;
use std::rc::Rc;

use crate::autodiff::{SparseOperand, Var};
use crate::config::Activation;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub struct LayerVars<'t> {
    pub w1: Var<'t>,
    pub w2: Var<'t>,
}

pub fn activate<'t>(x: Var<'t>, act: Activation) -> Result<Var<'t>> {
    match act {
        Activation::LeakyRelu(slope) => x.leaky_relu(slope),
        Activation::Sigmoid => x.sigmoid(),
        Activation::Identity => Ok(x),
    }
}

pub fn propagate_layer<'t>(
    e_prev: Var<'t>,
    m: &Rc<SparseOperand>,
    layer: LayerVars<'t>,
    act: Activation,
) -> Result<Var<'t>> {
    let (n, d) = e_prev.shape();
    if m.matrix().shape() != (n, n) {
        return Err(Error::shape("propagate_layer", m.matrix().shape(), (n, d)));
    }
    let me = e_prev.spmm(m)?;
    let self_and_neighbors = me.add(e_prev)?.matmul(layer.w1)?;
    let interaction = me.mul(e_prev)?.matmul(layer.w2)?;
    activate(self_and_neighbors.add(interaction)?, act)
}

/// Node representations of one encoding pass.
#[derive(Debug, Clone)]
pub struct NodeReps<'t> {
    /// per-layer outputs `e⁽¹⁾…e⁽ˢ⁾`
    pub stack: Vec<Var<'t>>,
    /// layer-mean readout
    pub output: Var<'t>,
    pub a: Range<usize>,
    pub users: Range<usize>,
    pub b: Range<usize>,
}

impl<'t> NodeReps<'t> {
    pub fn rows(&self, range: Range<usize>) -> Result<Var<'t>> {
        self.output.gather_rows(range.collect::<Vec<_>>())
    }

    pub fn e_a(&self) -> Result<Var<'t>> {
        self.rows(self.a.clone())
    }

    pub fn e_u(&self) -> Result<Var<'t>> {
        self.rows(self.users.clone())
    }

    pub fn e_b(&self) -> Result<Var<'t>> {
        self.rows(self.b.clone())
    }
}

/// Elementwise mean over the layer outputs.
pub fn readout<'t>(stack: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = stack
        .split_first()
        .ok_or_else(|| Error::Contract("readout of an empty layer stack".into()))?;
    if rest.is_empty() {
        return Ok(*first);
    }
    let mut acc = *first;
    for v in rest {
        acc = acc.add(*v)?;
    }
    acc.scale(1.0 / stack.len() as f64)
}

pub struct EncodeOptions<'r> {
    pub activation: Activation,
    pub dropout: f64,
    /// `Some` in training mode; supplies the dropout masks.
    pub rng: Option<&'r mut Rng>,
}

/// Runs `layers.len()` propagation layers from `e0` and reads out the mean.
/// Dropout (training mode only) is applied to every layer output.
pub fn encode<'t>(
    e0: Var<'t>,
    m: &Rc<SparseOperand>,
    layers: &[LayerVars<'t>],
    ranges: (Range<usize>, Range<usize>, Range<usize>),
    opts: EncodeOptions<'_>,
) -> Result<NodeReps<'t>> {
    if layers.is_empty() {
        return Err(Error::Contract("encode needs at least one layer".into()));
    }
    let EncodeOptions { activation, dropout, mut rng } = opts;
    let mut stack = Vec::with_capacity(layers.len());
    let mut e = e0;
    for &layer in layers {
        e = propagate_layer(e, m, layer, activation)?;
        if let Some(rng) = rng.as_deref_mut() {
            e = e.dropout(dropout, true, rng)?;
        }
        stack.push(e);
    }
    let output = readout(&stack)?;
    let (a, users, b) = ranges;
    Ok(NodeReps { stack, output, a, users, b })
}
