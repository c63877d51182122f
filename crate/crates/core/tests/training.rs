mod common;

use approx::assert_abs_diff_eq;
use eagcl::autodiff::Tape;
use eagcl::dataio::{split_dataset, synthesize, Domain, HybridSequence, SynthConfig};
use eagcl::model::{forward, toy_batch, toy_config, Mode, ParamVars};
use eagcl::train::{epoch_means, Trainer};
use eagcl::{Checkpoint, ModelParams, TrainConfig};
use ndarray::{s, Array2};

use common::{brute_info_nce, dense_cds, dense_encode};

fn small_split() -> eagcl::dataio::DatasetSplit {
    let synth = SynthConfig { users: 40, items_a: 60, items_b: 30, sequences_per_user: 2, ..SynthConfig::default() };
    split_dataset(&synthesize(&synth).unwrap(), 0.8, 5).unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, dim: 8, seed: 11, ..TrainConfig::default() }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let split = small_split();

    let mut straight = Trainer::for_split(small_config(4), &split).unwrap();
    straight.fit(&split.train, None).unwrap();

    let mut first = Trainer::for_split(small_config(2), &split).unwrap();
    first.fit(&split.train, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.txt");
    first.checkpoint().save(&path).unwrap();

    let mut resumed = Trainer::from_checkpoint(small_config(4), Checkpoint::load(&path).unwrap()).unwrap();
    let summary = resumed.fit(&split.train, None).unwrap();
    assert_eq!(summary.epochs_run, 2);
    assert_eq!(resumed.params, straight.params);
}

#[test]
fn checkpoint_with_another_seed_is_rejected() {
    let split = small_split();
    let t = Trainer::for_split(small_config(1), &split).unwrap();
    let other = TrainConfig { seed: 12, ..small_config(1) };
    assert!(Trainer::from_checkpoint(other, t.checkpoint()).is_err());
}

// With α = 0 both views are M itself, so each contrastive term reduces to
// InfoNCE of the clean (dropout-free) encoding against itself.
#[test]
fn zero_alpha_ssl_equals_self_contrast_of_the_clean_encoding() {
    let (dims, batch) = toy_batch();
    let cfg = TrainConfig { alpha: 0.0, dropout: 0.0, ..toy_config() };
    let params = ModelParams::init(dims, 4);

    let tape = Tape::new();
    let pv = ParamVars::register(&tape, &params);
    let out = forward(&pv, dims, &cfg, &batch, Mode::Train { seed: 9 }).unwrap();

    let prefixes: Vec<HybridSequence> = batch.iter().map(|i| i.prefix.clone()).collect();
    let g = dense_cds(&prefixes);
    let mut e0 = Array2::zeros((g.n(), dims.dim));
    let rows = g.a.iter().copied().chain(g.users.iter().map(|u| dims.items_a + u));
    let rows = rows.chain(g.b.iter().map(|b| dims.items_a + dims.users + b));
    for (r, global) in rows.enumerate() {
        e0.row_mut(r).assign(&params.embeddings.row(global));
    }
    let layers: Vec<_> = params.layers.iter().map(|l| (l.w1.clone(), l.w2.clone())).collect();
    let e = dense_encode(&g.m, &e0, &layers, 0.2);
    let na = g.a.len();
    let za = e.slice(s![..na, ..]).to_owned();
    let zb = e.slice(s![na + g.users.len().., ..]).to_owned();

    assert_abs_diff_eq!(out.losses.ls_a.item(), brute_info_nce(&za, &za, cfg.tau), epsilon = 1e-10);
    assert_abs_diff_eq!(out.losses.ls_b.item(), brute_info_nce(&zb, &zb, cfg.tau), epsilon = 1e-10);
}

// The contrastive terms never touch the attention memory or the heads.
#[test]
fn ssl_weight_leaves_attention_and_head_gradients_unchanged() {
    let (dims, batch) = toy_batch();
    let params = ModelParams::init(dims, 8);
    let grads = |beta: f64| {
        let cfg = TrainConfig { beta, ..toy_config() };
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, &params);
        let out = forward(&pv, dims, &cfg, &batch, Mode::Train { seed: 21 }).unwrap();
        let mut g = tape.backward(out.losses.joint).unwrap();
        let mut picked = Vec::new();
        for d in [Domain::A, Domain::B] {
            let ea = pv.ea(d);
            let head = pv.head(d);
            for v in [ea.w1, ea.w2, ea.b, head.w, head.b] {
                picked.push(g.take(v).unwrap());
            }
        }
        let emb = g.take(pv.embeddings).unwrap();
        (picked, emb)
    };
    let (with_ssl, emb_ssl) = grads(0.3);
    let (without, emb_plain) = grads(0.0);
    for (x, y) in with_ssl.iter().zip(&without) {
        for (a, b) in x.iter().zip(y) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
    let moved = emb_ssl.iter().zip(&emb_plain).any(|(a, b)| (a - b).abs() > 1e-9);
    assert!(moved, "SSL should reach the embeddings");
}

#[test]
fn beta_zero_joint_is_the_sum_of_cross_entropies() {
    let (dims, batch) = toy_batch();
    let params = ModelParams::init(dims, 2);
    let cfg = TrainConfig { beta: 0.0, ..toy_config() };
    let tape = Tape::new();
    let pv = ParamVars::register(&tape, &params);
    let l = forward(&pv, dims, &cfg, &batch, Mode::Train { seed: 1 }).unwrap().losses;
    assert_eq!(l.ls_a.item(), 0.0);
    assert_eq!(l.ls_b.item(), 0.0);
    assert_abs_diff_eq!(l.joint.item(), l.l_a.item() + l.l_b.item(), epsilon = 1e-15);
}

#[test]
fn eval_mode_is_repeatable() {
    let (dims, batch) = toy_batch();
    let params = ModelParams::init(dims, 2);
    let run = || {
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, &params);
        let out = forward(&pv, dims, &toy_config(), &batch, Mode::Eval).unwrap();
        (out.logits_a.value(), out.logits_b.value())
    };
    assert_eq!(run(), run());
}

#[test]
fn joint_loss_descends_on_synthetic_data() {
    let split = small_split();
    let mut t = Trainer::for_split(small_config(15), &split).unwrap();
    let summary = t.fit(&split.train, None).unwrap();
    let means = epoch_means(&summary.trace);
    assert_eq!(means.len(), 15);
    assert!(means.iter().all(|m| m.is_finite()));
    assert!(means[14] < 0.8 * means[0], "epoch means {means:?}");
}

#[test]
fn same_seed_gives_identical_parameters() {
    let split = small_split();
    let run = || {
        let mut t = Trainer::for_split(small_config(2), &split).unwrap();
        t.fit(&split.train, None).unwrap();
        t.params.checksum()
    };
    assert_eq!(run(), run());
}
