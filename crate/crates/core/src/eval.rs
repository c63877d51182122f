//! Top-K ranking metrics over the full item vocabulary of each domain.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataio::{Domain, HybridSequence, Instance};
use crate::error::{Error, Result};
use crate::model::{forward, Mode, ParamVars};
use crate::objective::probabilities;
use crate::params::ModelParams;

/// 1-based rank of `target` by descending score; ties go to the lower id.
pub fn rank_of_target(scores: ArrayView1<'_, f64>, target: usize) -> Result<usize> {
    let t = *scores.get(target).ok_or(Error::Index { what: "scores", index: target, len: scores.len() })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count();
    Ok(ahead + 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rc: f64,
    pub mrr: f64,
    pub ndcg: f64,
    /// number of evaluated targets
    pub count: usize,
}

/// `(RC, MRR, NDCG)@k` averaged over `ranks`; `None` for an empty list.
pub fn metrics_at_k(ranks: &[usize], k: usize) -> Result<Option<Metrics>> {
    if ranks.contains(&0) {
        return Err(Error::Contract("ranks are 1-based".into()));
    }
    if ranks.is_empty() {
        return Ok(None);
    }
    let (mut rc, mut mrr, mut ndcg) = (0.0, 0.0, 0.0);
    for &r in ranks.iter().filter(|&&r| r <= k) {
        rc += 1.0;
        mrr += 1.0 / r as f64;
        ndcg += 1.0 / ((r + 1) as f64).log2();
    }
    let n = ranks.len() as f64;
    Ok(Some(Metrics { rc: rc / n, mrr: mrr / n, ndcg: ndcg / n, count: ranks.len() }))
}

/// Per-domain metrics at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub a: Option<Metrics>,
    pub b: Option<Metrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rc,
    Mrr,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rc, Metric::Mrr, Metric::Ndcg];

    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            Metric::Rc => m.rc,
            Metric::Mrr => m.mrr,
            Metric::Ndcg => m.ndcg,
        }
    }

    pub fn label(self, k: usize) -> String {
        match self {
            Metric::Rc => format!("RC@{k}"),
            Metric::Mrr => format!("MRR@{k}"),
            Metric::Ndcg => format!("NDCG@{k}"),
        }
    }
}

pub(crate) fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn from_ranks(ranks_a: &[usize], ranks_b: &[usize], k: usize) -> Result<Self> {
        Ok(MetricsReport { k, a: metrics_at_k(ranks_a, k)?, b: metrics_at_k(ranks_b, k)? })
    }

    pub fn domain(&self, domain: Domain) -> Option<&Metrics> {
        match domain {
            Domain::A => self.a.as_ref(),
            Domain::B => self.b.as_ref(),
        }
    }

    pub fn get(&self, domain: Domain, metric: Metric) -> Option<f64> {
        self.domain(domain).map(|m| metric.of(m))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,count");
        for m in Metric::ALL {
            out.push(',');
            out.push_str(&m.label(self.k));
        }
        out.push('\n');
        for d in [Domain::A, Domain::B] {
            let count = self.domain(d).map_or(0, |m| m.count);
            let _ = write!(out, "{d},{count}");
            for m in Metric::ALL {
                let _ = write!(out, ",{}", fmt_value(self.get(d, m)));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table, one row per domain.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}{:>8}", "domain", "count");
        for m in Metric::ALL {
            let _ = write!(out, "{:>10}", m.label(self.k));
        }
        out.push('\n');
        for d in [Domain::A, Domain::B] {
            let count = self.domain(d).map_or(0, |m| m.count);
            let _ = write!(out, "{:<8}{:>8}", d.to_string(), count);
            for m in Metric::ALL {
                let _ = write!(out, "{:>10}", fmt_value(self.get(d, m)));
            }
            out.push('\n');
        }
        out
    }
}

/// Item-frequency scorer fitted on training sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityBaseline {
    pub counts_a: Array1<f64>,
    pub counts_b: Array1<f64>,
}

impl PopularityBaseline {
    pub fn fit(train: &[HybridSequence], items_a: usize, items_b: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("popularity baseline needs training data".into()));
        }
        let mut counts_a = Array1::zeros(items_a);
        let mut counts_b = Array1::zeros(items_b);
        for e in train.iter().flat_map(|s| &s.events) {
            let (counts, len) = match e.domain {
                Domain::A => (&mut counts_a, items_a),
                Domain::B => (&mut counts_b, items_b),
            };
            if e.item >= len {
                return Err(Error::Index { what: "items", index: e.item, len });
            }
            counts[e.item] += 1.0;
        }
        Ok(PopularityBaseline { counts_a, counts_b })
    }

    pub fn scores(&self, domain: Domain) -> ArrayView1<'_, f64> {
        match domain {
            Domain::A => self.counts_a.view(),
            Domain::B => self.counts_b.view(),
        }
    }

    pub fn evaluate(&self, test: &[HybridSequence], k: usize) -> Result<MetricsReport> {
        let mut ranks = [Vec::new(), Vec::new()];
        for inst in test.iter().map(Instance::from_sequence) {
            for (slot, d) in [Domain::A, Domain::B].into_iter().enumerate() {
                if let Some(t) = inst.target(d) {
                    ranks[slot].push(rank_of_target(self.scores(d), t)?);
                }
            }
        }
        MetricsReport::from_ranks(&ranks[0], &ranks[1], k)
    }
}

/// Target ranks of the model on `test`, per domain. Test sequences are
/// encoded in their given order, `cfg.batch_size` at a time, each chunk with
/// its own CDS graph built from the prefixes.
pub fn model_ranks(params: &ModelParams, cfg: &TrainConfig, test: &[HybridSequence]) -> Result<[Vec<usize>; 2]> {
    let instances: Vec<Instance> = test
        .iter()
        .map(Instance::from_sequence)
        .filter(|i| i.target_a.is_some() || i.target_b.is_some())
        .collect();
    let mut ranks = [Vec::new(), Vec::new()];
    for chunk in instances.chunks(cfg.batch_size.max(1)) {
        let tape = Tape::new();
        let pv = ParamVars::register(&tape, params);
        let out = forward(&pv, params.dims, cfg, chunk, Mode::Eval)?;
        for (slot, d) in [Domain::A, Domain::B].into_iter().enumerate() {
            let probs = probabilities(&out.logits(d).value());
            for (row, inst) in chunk.iter().enumerate() {
                if let Some(t) = inst.target(d) {
                    ranks[slot].push(rank_of_target(probs.row(row), t)?);
                }
            }
        }
    }
    Ok(ranks)
}

pub fn evaluate(params: &ModelParams, cfg: &TrainConfig, test: &[HybridSequence]) -> Result<MetricsReport> {
    let [a, b] = model_ranks(params, cfg, test)?;
    MetricsReport::from_ranks(&a, &b, cfg.top_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Event;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn rank_examples() {
        let p = array![0.1, 0.5, 0.4];
        assert_eq!(rank_of_target(p.view(), 2).unwrap(), 2);
        assert_eq!(rank_of_target(p.view(), 1).unwrap(), 1);
        let u = Array1::from_elem(10, 0.1);
        assert_eq!(rank_of_target(u.view(), 3).unwrap(), 4);
        assert!(rank_of_target(u.view(), 10).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics_at_k(&[3], 10).unwrap().unwrap();
        assert_abs_diff_eq!(m.rc, 1.0);
        assert_abs_diff_eq!(m.mrr, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.ndcg, 0.5, epsilon = 1e-12);
        let ones = metrics_at_k(&[1, 1, 1], 10).unwrap().unwrap();
        assert_eq!((ones.rc, ones.mrr, ones.ndcg), (1.0, 1.0, 1.0));
        let miss = metrics_at_k(&[11], 10).unwrap().unwrap();
        assert_eq!((miss.rc, miss.mrr, miss.ndcg), (0.0, 0.0, 0.0));
        assert_eq!(metrics_at_k(&[], 10).unwrap(), None);
        assert!(metrics_at_k(&[0], 10).is_err());
    }

    #[test]
    fn popularity_ranks_the_most_frequent_item_first() {
        let train = vec![
            HybridSequence::new(0, vec![Event::a(7), Event::b(0), Event::a(7)]),
            HybridSequence::new(1, vec![Event::a(7), Event::b(1)]),
        ];
        let pop = PopularityBaseline::fit(&train, 8, 2).unwrap();
        assert_eq!(rank_of_target(pop.scores(Domain::A), 7).unwrap(), 1);
        let test = vec![HybridSequence::new(0, vec![Event::a(1), Event::a(7), Event::b(0)])];
        let report = pop.evaluate(&test, 10).unwrap();
        assert_eq!(report.get(Domain::A, Metric::Rc), Some(1.0));
        assert_eq!(report.b, None);
        assert!(report.to_table().contains("n/a"));
    }

    #[test]
    fn report_layout() {
        let r = MetricsReport::from_ranks(&[1, 3], &[2], 10).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "domain,count,RC@10,MRR@10,NDCG@10");
        assert_eq!(lines[1], "A,2,1.0000,0.6667,0.7500");
        assert!(r.to_table().lines().all(|l| l.len() == r.to_table().lines().next().unwrap().len()));
    }
}
