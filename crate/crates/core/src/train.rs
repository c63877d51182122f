//! Training loop, ablation grid and timing study.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use crate::autodiff::{Adam, AdamState, Tape};
use crate::config::{Augmentation, TrainConfig};
use crate::dataio::{make_batches, split_dataset, Dataset, DatasetSplit, Domain, HybridSequence, Instance};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fmt_value, Metric, MetricsReport};
use crate::model::{forward, Mode, ParamVars};
use crate::params::{Checkpoint, Dims, ModelParams};
use crate::rng;

/// Loss components of one optimizer step. `ls_a`/`ls_b` include `ssl_reg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_a: f64,
    pub l_b: f64,
    pub ls_a: f64,
    pub ls_b: f64,
    pub joint: f64,
}

pub const TRACE_HEADER: &str = "epoch,batch,L_A,L_B,L_sA,L_sB,joint";

pub fn write_trace(records: &[LossRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{},{},{},{},{}", r.epoch, r.batch, r.l_a, r.l_b, r.ls_a, r.ls_b, r.joint)?;
    }
    Ok(())
}

/// Mean joint loss of each epoch, in epoch order.
pub fn epoch_means(records: &[LossRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in records {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.joint;
        out[r.epoch].1 += 1;
    }
    out.into_iter().filter(|&(_, n)| n > 0).map(|(s, n)| s / n as f64).collect()
}

fn dump_batch(batch: &[Instance]) -> String {
    let mut out = String::new();
    for inst in batch {
        let s = &inst.prefix;
        let events: Vec<String> = s.events.iter().map(|e| format!("{}:{}", e.item, e.domain)).collect();
        let _ = writeln!(
            out,
            "{}\t{}\ttargets A={:?} B={:?}",
            s.user,
            events.join(","),
            inst.target_a,
            inst.target_b
        );
    }
    out
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ModelParams,
    pub adam_state: AdamState,
    adam: Adam,
    /// epochs completed so far
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub trace: Vec<LossRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// validation RC@K after each epoch, when a validation set was given
    pub validation: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, items_a: usize, users: usize, items_b: usize) -> Result<Self> {
        cfg.validate()?;
        let dims = Dims { items_a, users, items_b, dim: cfg.dim, layers: cfg.layers };
        let params = ModelParams::init(dims, cfg.seed);
        let adam_state = AdamState::new(params.shapes());
        let adam = Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?;
        Ok(Trainer { cfg, params, adam_state, adam, epoch: 0 })
    }

    pub fn for_split(cfg: TrainConfig, split: &DatasetSplit) -> Result<Self> {
        Trainer::new(cfg, split.num_items_a, split.num_users, split.num_items_b)
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.params.dims.dim != cfg.dim || ck.params.dims.layers != cfg.layers {
            return Err(Error::Checkpoint("checkpoint dims disagree with the config".into()));
        }
        if ck.seed != cfg.seed {
            return Err(Error::Checkpoint(format!("checkpoint seed {} differs from config seed {}", ck.seed, cfg.seed)));
        }
        let adam = Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?;
        Ok(Trainer { cfg, params: ck.params, adam_state: ck.adam, adam, epoch: ck.epoch })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), adam: self.adam_state.clone(), seed: self.cfg.seed, epoch: self.epoch }
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[Instance], epoch: usize, index: usize) -> Result<LossRecord> {
        let seed = rng::derive(self.cfg.seed, &[epoch as u64, index as u64]);
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, &self.params);
        let diverged = |e: Error| match e {
            Error::NonFinite(detail) => Error::Diverged { epoch, batch: index, detail, dump: dump_batch(batch) },
            other => other,
        };
        let out = forward(&pv, self.params.dims, &self.cfg, batch, Mode::Train { seed }).map_err(diverged)?;
        let l = out.losses;
        let record = LossRecord {
            epoch,
            batch: index,
            l_a: l.l_a.item(),
            l_b: l.l_b.item(),
            ls_a: l.ls_a.item(),
            ls_b: l.ls_b.item(),
            joint: l.joint.item(),
        };
        if !record.joint.is_finite() {
            return Err(diverged(Error::NonFinite(format!("joint loss {}", record.joint))));
        }
        let mut grads = tape.backward(l.joint).map_err(diverged)?;
        let grads: Vec<_> = pv.all().iter().map(|&v| grads.take(v).expect("parameter gradient")).collect();
        self.adam.step(&mut self.adam_state, &mut self.params.tensors_mut(), &grads)?;
        Ok(record)
    }

    /// Shuffles `train` with an epoch-specific seed, cuts it into batches and
    /// takes one step per batch. Sequences without any target are dropped
    /// from their batch; a batch left empty is skipped.
    pub fn train_epoch(&mut self, train: &[HybridSequence]) -> Result<Vec<LossRecord>> {
        let epoch = self.epoch;
        let shuffle = rng::derive(self.cfg.seed, &[rng::STREAM_SHUFFLE, epoch as u64]);
        let batches = make_batches(train, self.cfg.batch_size, shuffle)?;
        let mut records = Vec::with_capacity(batches.len());
        for (index, batch) in batches.iter().enumerate() {
            let instances: Vec<Instance> = batch
                .iter()
                .map(|s| Instance::from_sequence(s))
                .filter(|i| i.target_a.is_some() || i.target_b.is_some())
                .collect();
            if instances.is_empty() {
                continue;
            }
            records.push(self.step(&instances, epoch, index)?);
        }
        self.epoch += 1;
        Ok(records)
    }

    /// Runs until `cfg.epochs` epochs are complete. With a validation set,
    /// stops once RC@K has not improved for `cfg.patience` epochs.
    pub fn fit(&mut self, train: &[HybridSequence], valid: Option<&[HybridSequence]>) -> Result<FitSummary> {
        let mut trace = Vec::new();
        let mut validation = Vec::new();
        let (mut best, mut since_best) = (f64::NEG_INFINITY, 0);
        let start = self.epoch;
        let mut stopped_early = false;
        while self.epoch < self.cfg.epochs {
            trace.extend(self.train_epoch(train)?);
            let Some(valid) = valid else { continue };
            let report = evaluate(&self.params, &self.cfg, valid)?;
            let rc = [Domain::A, Domain::B].iter().filter_map(|&d| report.get(d, Metric::Rc)).sum::<f64>();
            validation.push(rc);
            if rc > best {
                best = rc;
                since_best = 0;
            } else {
                since_best += 1;
                if self.cfg.patience > 0 && since_best >= self.cfg.patience {
                    log::info!("early stop after epoch {}", self.epoch);
                    stopped_early = true;
                    break;
                }
            }
        }
        Ok(FitSummary { trace, epochs_run: self.epoch - start, stopped_early, validation })
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub use_ea: bool,
    pub augmentation: Augmentation,
    /// `false` forces `beta = 0`
    pub ssl: bool,
}

impl Variant {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_ea: self.use_ea,
            augmentation: self.augmentation,
            beta: if self.ssl { base.beta } else { 0.0 },
            ..base.clone()
        }
    }
}

pub const EA_GCL_ID: Variant = Variant { name: "EA-GCL (ID)", use_ea: true, augmentation: Augmentation::ItemDropout, ssl: true };
pub const EA_GCL_SR: Variant =
    Variant { name: "EA-GCL (SR)", use_ea: true, augmentation: Augmentation::SequenceReorder, ssl: true };
pub const GCL_ID_NO_EA: Variant =
    Variant { name: "GCL (ID)-EA", use_ea: false, augmentation: Augmentation::ItemDropout, ssl: true };
pub const GCL_SR_NO_EA: Variant =
    Variant { name: "GCL (SR)-EA", use_ea: false, augmentation: Augmentation::SequenceReorder, ssl: true };
pub const GCL_CL: Variant = Variant { name: "GCL-CL", use_ea: true, augmentation: Augmentation::ItemDropout, ssl: false };
pub const GCL_ALL: Variant = Variant { name: "GCL-ALL", use_ea: false, augmentation: Augmentation::None, ssl: false };

/// The six ablation rows, full model first.
pub fn default_variants() -> Vec<Variant> {
    vec![EA_GCL_ID, EA_GCL_SR, GCL_ID_NO_EA, GCL_SR_NO_EA, GCL_CL, GCL_ALL]
}

pub fn variant_by_name(name: &str) -> Option<Variant> {
    default_variants().into_iter().find(|v| v.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: &'static str,
    pub seed: u64,
    pub report: MetricsReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub k: usize,
    pub variants: Vec<&'static str>,
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl AblationReport {
    pub fn values(&self, variant: &str, domain: Domain, metric: Metric) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.report.get(domain, metric))
            .collect()
    }

    pub fn median(&self, variant: &str, domain: Domain, metric: Metric) -> Option<f64> {
        median(self.values(variant, domain, metric))
    }

    /// Medians over seeds: one row per variant, one column per domain × metric.
    pub fn to_table(&self) -> String {
        let width = self.variants.iter().map(|v| v.len()).max().unwrap_or(7).max(7) + 2;
        let mut out = format!("{:<width$}", "variant");
        for d in [Domain::A, Domain::B] {
            for m in Metric::ALL {
                let _ = write!(out, "{:>12}", format!("{d}:{}", m.label(self.k)));
            }
        }
        out.push('\n');
        for v in &self.variants {
            let _ = write!(out, "{v:<width$}");
            for d in [Domain::A, Domain::B] {
                for m in Metric::ALL {
                    let _ = write!(out, "{:>12}", fmt_value(self.median(v, d, m)));
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "(medians over seeds {:?})", self.seeds);
        out
    }

    /// Long format: one line per variant, seed, domain and metric, plus the
    /// median rows (seed column `median`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,domain,metric,value\n");
        for r in &self.runs {
            for d in [Domain::A, Domain::B] {
                for m in Metric::ALL {
                    let _ = writeln!(out, "{},{},{d},{},{}", r.variant, r.seed, m.label(self.k), fmt_value(r.report.get(d, m)));
                }
            }
        }
        for v in &self.variants {
            for d in [Domain::A, Domain::B] {
                for m in Metric::ALL {
                    let _ = writeln!(out, "{v},median,{d},{},{}", m.label(self.k), fmt_value(self.median(v, d, m)));
                }
            }
        }
        out
    }
}

/// Trains every variant once per seed and evaluates it on that seed's test
/// split. The seed drives the split, initialization, batching and views, and
/// is shared by all variants.
pub fn ablate(data: &Dataset, base: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationReport> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let split = split_dataset(data, base.train_fraction, seed)?;
        for v in variants {
            let cfg = TrainConfig { seed, ..v.apply(base) };
            let mut trainer = Trainer::for_split(cfg, &split)?;
            let summary = trainer.fit(&split.train, None)?;
            let report = evaluate(&trainer.params, &trainer.cfg, &split.test)?;
            log::info!("{} seed {seed}: {}", v.name, report.to_csv().lines().skip(1).collect::<Vec<_>>().join(" | "));
            let final_loss = epoch_means(&summary.trace).last().copied().unwrap_or(f64::NAN);
            runs.push(AblationRun { variant: v.name, seed, report, final_loss });
        }
    }
    Ok(AblationReport { k: base.top_k, variants: variants.iter().map(|v| v.name).collect(), seeds: seeds.to_vec(), runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingPoint {
    pub fraction: f64,
    pub sequences: usize,
    /// per-epoch wall time of each repeat, seconds
    pub seconds: Vec<f64>,
}

impl TimingPoint {
    pub fn median(&self) -> f64 {
        median(self.seconds.clone()).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub points: Vec<TimingPoint>,
    /// `R²` of the least-squares line through (fraction, median seconds);
    /// `None` with fewer than two distinct fractions
    pub r2: Option<f64>,
}

/// `(slope, intercept, R²)` of a least-squares line, or `None` for
/// degenerate input.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

impl TimingReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>9}{:>11}{:>12}{:>12}\n", "fraction", "sequences", "seconds", "std");
        for p in &self.points {
            let m = p.seconds.iter().sum::<f64>() / p.seconds.len() as f64;
            let sd = (p.seconds.iter().map(|s| (s - m).powi(2)).sum::<f64>() / p.seconds.len() as f64).sqrt();
            let _ = writeln!(out, "{:>9.2}{:>11}{:>12.4}{:>12.4}", p.fraction, p.sequences, p.median(), sd);
        }
        let _ = writeln!(out, "R2 {}", self.r2.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}")));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,sequences,seconds\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.fraction, p.sequences, p.median());
        }
        let _ = writeln!(out, "r2,,{}", self.r2.map_or_else(|| "n/a".to_string(), |r| r.to_string()));
        out
    }
}

/// Per-epoch training time on the first `fraction` of the training split, for
/// each fraction. Each point trains a fresh model for one warm-up epoch and
/// then times `repeats` further epochs.
pub fn timing_study(split: &DatasetSplit, cfg: &TrainConfig, fractions: &[f64], repeats: usize) -> Result<TimingReport> {
    if repeats == 0 {
        return Err(Error::Config("timing needs at least one repeat".into()));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("training fraction must lie in (0, 1], got {fraction}")));
        }
        let n = ((split.train.len() as f64 * fraction).round() as usize).max(1);
        let subset = &split.train[..n];
        let mut trainer = Trainer::for_split(cfg.clone(), split)?;
        trainer.train_epoch(subset)?;
        let mut seconds = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            trainer.train_epoch(subset)?;
            seconds.push(t0.elapsed().as_secs_f64());
        }
        points.push(TimingPoint { fraction, sequences: n, seconds });
    }
    let x: Vec<f64> = points.iter().map(|p| p.fraction).collect();
    let y: Vec<f64> = points.iter().map(|p| p.median()).collect();
    let r2 = linear_fit(&x, &y).map(|(_, _, r2)| r2);
    Ok(TimingReport { points, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synthesize, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn small_data() -> Dataset {
        synthesize(&SynthConfig { users: 20, items_a: 30, items_b: 15, sequences_per_user: 2, ..SynthConfig::default() })
            .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 16, dim: 4, ..TrainConfig::default() }
    }

    #[test]
    fn same_seed_same_trace() {
        let data = small_data();
        let split = split_dataset(&data, 0.8, 1).unwrap();
        let run = || {
            let mut t = Trainer::for_split(small_cfg(), &split).unwrap();
            t.fit(&split.train, None).unwrap().trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn every_step_changes_the_parameters() {
        let data = small_data();
        let split = split_dataset(&data, 0.8, 1).unwrap();
        let mut t = Trainer::for_split(small_cfg(), &split).unwrap();
        let before = t.params.checksum();
        let records = t.train_epoch(&split.train).unwrap();
        assert_eq!(records.len(), split.train.len().div_ceil(16));
        assert_eq!(t.adam_state.step as usize, records.len());
        assert_ne!(before, t.params.checksum());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let r = LossRecord { epoch: 0, batch: 1, l_a: 1.0, l_b: 2.0, ls_a: 0.5, ls_b: 0.25, joint: 3.0 };
        let mut buf = Vec::new();
        write_trace(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,batch,L_A,L_B,L_sA,L_sB,joint\n0,1,1,2,0.5,0.25,3\n");
        assert_eq!(epoch_means(&[r, LossRecord { joint: 5.0, ..r }]), vec![4.0]);
    }

    #[test]
    fn variants_follow_the_ablation_grid() {
        let base = TrainConfig::default();
        let names: Vec<_> = default_variants().iter().map(|v| v.name).collect();
        assert_eq!(names, ["EA-GCL (ID)", "EA-GCL (SR)", "GCL (ID)-EA", "GCL (SR)-EA", "GCL-CL", "GCL-ALL"]);
        let cl = GCL_CL.apply(&base);
        assert!(cl.use_ea && cl.beta == 0.0 && !cl.ssl_active());
        let all = GCL_ALL.apply(&base);
        assert!(!all.use_ea && all.augmentation == Augmentation::None);
        assert_eq!(EA_GCL_SR.apply(&base).beta, 0.3);
        assert_eq!(variant_by_name("gcl-all"), Some(GCL_ALL));
    }

    #[test]
    fn linear_fit_cases() {
        let (s, i, r2) = linear_fit(&[0.2, 0.4, 0.6], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(s, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(i, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-12);
        assert_eq!(linear_fit(&[1.0], &[2.0]), None);
        assert_eq!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]), None);
    }

    #[test]
    fn single_fraction_timing_has_no_fit() {
        let data = small_data();
        let split = split_dataset(&data, 0.8, 1).unwrap();
        let report = timing_study(&split, &small_cfg(), &[1.0], 1).unwrap();
        assert_eq!(report.r2, None);
        assert!(report.to_table().contains("R2 n/a"));
    }

    #[test]
    fn small_ablation_has_one_run_per_cell() {
        let data = small_data();
        let cfg = TrainConfig { epochs: 1, ..small_cfg() };
        let report = ablate(&data, &cfg, &[EA_GCL_ID, GCL_ALL], &[1, 2]).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert!(report.to_table().contains("GCL-ALL"));
        assert!(report.median("EA-GCL (ID)", Domain::B, Metric::Ndcg).is_some());
    }
}
