//! One forward pass of the full model over a batch of instances.
//!
//! batch prefixes → CDS graph → propagation → (two augmented views → InfoNCE)
//! → per-domain sequence encoder → preferences → heads → joint loss.

use crate::attention::{self, EaVars};
use crate::autodiff::{grad_check, GradCheckReport, SparseOperand, Tape, Var};
use crate::config::{Augmentation, TrainConfig};
use crate::contrastive::ssl_losses;
use crate::dataio::{Domain, Event, HybridSequence, Instance};
use crate::error::{Error, Result};
use crate::gnn::{encode, EncodeOptions, LayerVars, NodeReps};
use crate::graph::{CdsGraph, Strategy};
use crate::objective::{cross_entropy, joint_loss, logits, HeadVars, Losses};
use crate::params::{Dims, ModelParams};
use crate::rng;

/// Every trainable tensor on a tape, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    pub embeddings: Var<'t>,
    pub layers: Vec<LayerVars<'t>>,
    pub ea_a: EaVars<'t>,
    pub ea_b: EaVars<'t>,
    pub head_a: HeadVars<'t>,
    pub head_b: HeadVars<'t>,
    all: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn register(tape: &'t Tape, params: &ModelParams) -> Self {
        let vars: Vec<Var<'t>> = params.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        Self::from_vars(params.dims.layers, &vars).expect("tensor count follows the layer count")
    }

    /// Rebuilds the structure from a flat list in tensor order.
    pub fn from_vars(layers: usize, vars: &[Var<'t>]) -> Result<Self> {
        let expected = 1 + 2 * layers + 6 + 4;
        if vars.len() != expected {
            return Err(Error::Contract(format!("expected {expected} parameter tensors, got {}", vars.len())));
        }
        let layer_vars = (0..layers).map(|l| LayerVars { w1: vars[1 + 2 * l], w2: vars[2 + 2 * l] }).collect();
        let o = 1 + 2 * layers;
        Ok(ParamVars {
            embeddings: vars[0],
            layers: layer_vars,
            ea_a: EaVars { w1: vars[o], w2: vars[o + 1], b: vars[o + 2] },
            ea_b: EaVars { w1: vars[o + 3], w2: vars[o + 4], b: vars[o + 5] },
            head_a: HeadVars { w: vars[o + 6], b: vars[o + 7] },
            head_b: HeadVars { w: vars[o + 8], b: vars[o + 9] },
            all: vars.to_vec(),
        })
    }

    pub fn all(&self) -> &[Var<'t>] {
        &self.all
    }

    pub fn ea(&self, domain: Domain) -> EaVars<'t> {
        match domain {
            Domain::A => self.ea_a,
            Domain::B => self.ea_b,
        }
    }

    pub fn head(&self, domain: Domain) -> HeadVars<'t> {
        match domain {
            Domain::A => self.head_a,
            Domain::B => self.head_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on, contrastive branch on (when configured); `seed` drives both.
    Train { seed: u64 },
    Eval,
}

pub struct BatchOutput<'t> {
    pub graph: CdsGraph,
    /// one row per instance, over the full A vocabulary
    pub logits_a: Var<'t>,
    pub logits_b: Var<'t>,
    pub losses: Losses<'t>,
}

impl<'t> BatchOutput<'t> {
    pub fn logits(&self, domain: Domain) -> Var<'t> {
        match domain {
            Domain::A => self.logits_a,
            Domain::B => self.logits_b,
        }
    }
}

fn strategy(aug: Augmentation) -> Option<Strategy> {
    match aug {
        Augmentation::ItemDropout => Some(Strategy::ItemDropout),
        Augmentation::SequenceReorder => Some(Strategy::SequenceReorder),
        Augmentation::None => None,
    }
}

fn check_ids(dims: Dims, s: &HybridSequence) -> Result<()> {
    if s.user >= dims.users {
        return Err(Error::Index { what: "users", index: s.user, len: dims.users });
    }
    for e in &s.events {
        let len = dims.items(e.domain);
        if e.item >= len {
            return Err(Error::Index { what: "items", index: e.item, len });
        }
    }
    Ok(())
}

/// Per-domain sequence representations `h` (`n×d`), one row per instance.
fn sequence_reps<'t>(
    reps: &NodeReps<'t>,
    graph: &CdsGraph,
    prefixes: &[HybridSequence],
    domain: Domain,
    ea: EaVars<'t>,
    cfg: &TrainConfig,
) -> Result<Var<'t>> {
    let mut rows = Vec::new();
    let mut lens = Vec::with_capacity(prefixes.len());
    for s in prefixes {
        let items = s.items(domain);
        lens.push(items.len());
        for item in items {
            rows.push(graph.item_node(domain, item).expect("graph built from these prefixes"));
        }
    }
    let x = reps.output.gather_rows(rows)?;
    if cfg.use_ea {
        attention::attend_sequences(x, &lens, ea, cfg.attention)
    } else {
        attention::mean_pool_sequences(x, &lens)
    }
}

/// Runs the model on `batch`. In training mode the CDS graph is built from
/// the instance prefixes, so targets never leak into message passing.
pub fn forward<'t>(
    pv: &ParamVars<'t>,
    dims: Dims,
    cfg: &TrainConfig,
    batch: &[Instance],
    mode: Mode,
) -> Result<BatchOutput<'t>> {
    if batch.is_empty() {
        return Err(Error::Contract("forward on an empty batch".into()));
    }
    let tape = pv.embeddings.tape();
    let prefixes: Vec<HybridSequence> = batch.iter().map(|i| i.prefix.clone()).collect();
    for s in &prefixes {
        check_ids(dims, s)?;
    }
    let graph = CdsGraph::build(&prefixes, cfg.normalization)?;
    let e0 = pv.embeddings.gather_rows(graph.embedding_rows(dims.items_a, dims.users))?;
    let ranges = || (graph.a_range(), graph.user_range(), graph.b_range());
    let m = SparseOperand::new(graph.matrix.clone());

    let mut dropout_rng = match mode {
        Mode::Train { seed } => Some(rng::child(seed, &[rng::STREAM_DROPOUT])),
        Mode::Eval => None,
    };
    let reps = encode(
        e0,
        &m,
        &pv.layers,
        ranges(),
        EncodeOptions { activation: cfg.activation, dropout: cfg.dropout, rng: dropout_rng.as_mut() },
    )?;

    let (mut ls_a, mut ls_b) = (tape.scalar(0.0), tape.scalar(0.0));
    if let (Mode::Train { seed }, Some(strat), true) = (mode, strategy(cfg.augmentation), cfg.ssl_active()) {
        let view_seed = rng::derive(seed, &[rng::STREAM_VIEWS]);
        let (v1, v2) = graph.pair_views(&prefixes, strat, cfg.alpha, view_seed)?;
        let enc = |matrix| {
            let op = SparseOperand::new(matrix);
            encode(e0, &op, &pv.layers, ranges(), EncodeOptions { activation: cfg.activation, dropout: 0.0, rng: None })
        };
        let (r1, r2) = (enc(v1.matrix)?, enc(v2.matrix)?);
        let ssl = ssl_losses(&r1, &r2, cfg.tau)?;
        ls_a = ssl.a.scale(cfg.ssl_reg)?;
        ls_b = ssl.b.scale(cfg.ssl_reg)?;
    }

    let user_rows: Vec<usize> = prefixes.iter().map(|s| graph.node_of_user(s.user).expect("user in graph")).collect();
    let e_u = reps.output.gather_rows(user_rows)?;
    let pref = |domain: Domain| -> Result<Var<'t>> {
        let h = sequence_reps(&reps, &graph, &prefixes, domain, pv.ea(domain), cfg)?;
        attention::build_preference(h, e_u)
    };
    let (h_a, h_b) = (pref(Domain::A)?, pref(Domain::B)?);
    let logits_a = logits(h_a, h_b, pv.head_a)?;
    let logits_b = logits(h_b, h_a, pv.head_b)?;

    let targets = |domain: Domain| -> Vec<(usize, usize)> {
        batch.iter().enumerate().filter_map(|(k, inst)| inst.target(domain).map(|t| (k, t))).collect()
    };
    let l_a = cross_entropy(logits_a, &targets(Domain::A))?;
    let l_b = cross_entropy(logits_b, &targets(Domain::B))?;
    let losses = joint_loss(l_a, l_b, ls_a, ls_b, cfg.beta)?;
    Ok(BatchOutput { graph, logits_a, logits_b, losses })
}

/// Three users over five A items and three B items, every domain with at
/// least two events so each sequence carries both targets.
pub fn toy_batch() -> (Dims, Vec<Instance>) {
    let (a, b) = (Event::a, Event::b);
    let seqs = [
        HybridSequence::new(0, vec![a(0), b(0), a(1), b(1), a(2), a(4)]),
        HybridSequence::new(1, vec![a(3), b(2), a(4), a(0), b(0), b(1)]),
        HybridSequence::new(2, vec![b(1), a(2), a(1), b(2), a(3), b(0)]),
    ];
    let dims = Dims { items_a: 5, users: 3, items_b: 3, dim: 4, layers: 2 };
    (dims, seqs.iter().map(Instance::from_sequence).collect())
}

/// Configuration used for the toy gradient check: `d = 4`, `s = 2`, every
/// loss term active.
pub fn toy_config() -> TrainConfig {
    TrainConfig { dim: 4, layers: 2, alpha: 0.5, beta: 0.3, ssl_reg: 1.0, ..TrainConfig::default() }
}

/// Finite-difference check of the full joint loss on [`toy_batch`].
pub fn toy_grad_check(cfg: &TrainConfig, seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let (mut dims, batch) = toy_batch();
    dims.dim = cfg.dim;
    dims.layers = cfg.layers;
    let params = ModelParams::init(dims, seed);
    let tensors: Vec<_> = params.tensors().into_iter().cloned().collect();
    let mode = Mode::Train { seed: rng::derive(seed, &[rng::STREAM_DROPOUT]) };
    grad_check(
        |_tape, vars| {
            let pv = ParamVars::from_vars(dims.layers, vars)?;
            Ok(forward(&pv, dims, cfg, &batch, mode)?.losses.joint)
        },
        &tensors,
        h,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn toy_gradients_match_finite_differences() {
        let report = toy_grad_check(&toy_config(), 3, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn eval_mode_has_no_ssl_and_is_deterministic() {
        let (dims, batch) = toy_batch();
        let params = ModelParams::init(dims, 1);
        let cfg = toy_config();
        let run = || {
            let tape = Tape::new();
            let pv = ParamVars::register(&tape, &params);
            let out = forward(&pv, dims, &cfg, &batch, Mode::Eval).unwrap();
            (out.losses.ls_a.item(), out.logits_b.value())
        };
        let (ls, z1) = run();
        assert_eq!(ls, 0.0);
        assert_eq!(z1, run().1);
        assert_eq!(z1.dim(), (3, 3));
    }

    #[test]
    fn beta_zero_drops_ssl_from_joint() {
        let (dims, batch) = toy_batch();
        let params = ModelParams::init(dims, 2);
        let cfg = TrainConfig { beta: 0.0, ..toy_config() };
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, &params);
        let out = forward(&pv, dims, &cfg, &batch, Mode::Train { seed: 5 }).unwrap();
        let l = out.losses;
        assert_abs_diff_eq!(l.joint.item(), l.l_a.item() + l.l_b.item(), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let (dims, mut batch) = toy_batch();
        batch[0].prefix.events.push(Event::b(9));
        let params = ModelParams::init(dims, 1);
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, &params);
        assert!(forward(&pv, dims, &toy_config(), &batch, Mode::Eval).is_err());
    }
}
