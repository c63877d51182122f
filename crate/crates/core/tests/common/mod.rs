//! Brute-force reference implementations used by the integration and
//! acceptance tests. Everything here is written with plain loops over dense
//! arrays and shares no code paths with the library beyond its data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use eagcl::dataio::{Domain, Event, HybridSequence};
use ndarray::Array2;
use rand::Rng;

/// Node order of a CDS graph: A items, users, B items, each ascending.
pub struct DenseGraph {
    pub a: Vec<usize>,
    pub users: Vec<usize>,
    pub b: Vec<usize>,
    pub m: Array2<f64>,
}

impl DenseGraph {
    pub fn n(&self) -> usize {
        self.a.len() + self.users.len() + self.b.len()
    }

    pub fn node(&self, domain: Domain, item: usize) -> usize {
        match domain {
            Domain::A => self.a.iter().position(|&x| x == item).unwrap(),
            Domain::B => self.a.len() + self.users.len() + self.b.iter().position(|&x| x == item).unwrap(),
        }
    }

    pub fn user(&self, u: usize) -> usize {
        self.a.len() + self.users.iter().position(|&x| x == u).unwrap()
    }
}

/// Symmetric-normalized CDS adjacency: user–item weight `Σ q/L` over the
/// user's sequences, then `w / sqrt(deg_i deg_u)`.
pub fn dense_cds(batch: &[HybridSequence]) -> DenseGraph {
    let mut a = BTreeSet::new();
    let mut b = BTreeSet::new();
    let mut users = BTreeSet::new();
    for s in batch {
        users.insert(s.user);
        for e in &s.events {
            if e.domain == Domain::A {
                a.insert(e.item);
            } else {
                b.insert(e.item);
            }
        }
    }
    let mut g = DenseGraph {
        a: a.into_iter().collect(),
        users: users.into_iter().collect(),
        b: b.into_iter().collect(),
        m: Array2::zeros((0, 0)),
    };
    let n = g.n();
    let mut w = Array2::<f64>::zeros((n, n));
    for s in batch {
        let u = g.user(s.user);
        for domain in [Domain::A, Domain::B] {
            let items: Vec<usize> = s.events.iter().filter(|e| e.domain == domain).map(|e| e.item).collect();
            let len = items.len() as f64;
            for (q, &item) in items.iter().enumerate() {
                let i = g.node(domain, item);
                let weight = (q + 1) as f64 / len;
                w[[i, u]] += weight;
                w[[u, i]] += weight;
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if w[[i, j]] != 0.0 {
                m[[i, j]] = w[[i, j]] / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    g.m = m;
    g
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn matmul(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let (r, k) = x.dim();
    let c = y.ncols();
    let mut out = Array2::zeros((r, c));
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for t in 0..k {
                s += x[[i, t]] * y[[t, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// `LeakyReLU((M e + e) W1 + ((M e) ⊙ e) W2)`
pub fn dense_layer(m: &Array2<f64>, e: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>, slope: f64) -> Array2<f64> {
    let me = matmul(m, e);
    let sum = &me + e;
    let prod = &me * e;
    let pre = matmul(&sum, w1) + matmul(&prod, w2);
    pre.mapv(|v| leaky(v, slope))
}

/// Mean of layer outputs 1..s.
pub fn dense_encode(m: &Array2<f64>, e0: &Array2<f64>, layers: &[(Array2<f64>, Array2<f64>)], slope: f64) -> Array2<f64> {
    let mut e = e0.clone();
    let mut acc = Array2::zeros(e0.dim());
    for (w1, w2) in layers {
        e = dense_layer(m, &e, w1, w2, slope);
        acc += &e;
    }
    acc / layers.len() as f64
}

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
    dot / (nx * ny)
}

/// `Σ_o −log(exp(C(z1_o, z2_o)/τ) / Σ_q exp(C(z1_o, z2_q)/τ))`
pub fn brute_info_nce(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> f64 {
    let n = z1.nrows();
    let row = |z: &Array2<f64>, i: usize| z.row(i).to_vec();
    let mut total = 0.0;
    for o in 0..n {
        let pos = (cosine(&row(z1, o), &row(z2, o)) / tau).exp();
        let mut denom = 0.0;
        for q in 0..n {
            denom += (cosine(&row(z1, o), &row(z2, q)) / tau).exp();
        }
        total += -(pos / denom).ln();
    }
    total
}

/// `(RC, MRR, NDCG)@k` by direct summation.
pub fn brute_metrics(ranks: &[usize], k: usize) -> (f64, f64, f64) {
    let n = ranks.len() as f64;
    let mut out = (0.0, 0.0, 0.0);
    for &r in ranks {
        if r <= k {
            out.0 += 1.0;
            out.1 += 1.0 / r as f64;
            out.2 += 1.0 / ((r + 1) as f64).log2();
        }
    }
    (out.0 / n, out.1 / n, out.2 / n)
}

/// External attention of one sequence (`L × d`) with softmax rows.
pub fn brute_attention(x: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    let (l, d) = x.dim();
    let mut f = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in 0..l {
            let mut score = 0.0;
            for r in 0..d {
                let mut hidden = b[[0, r]];
                for c in 0..d {
                    hidden += w1[[r, c]] * x[[i, c]] * x[[j, c]];
                }
                score += w2[[r, 0]] * leaky(hidden, 0.2);
            }
            f[i][j] = score;
        }
    }
    let mut h = vec![0.0; d];
    for row in &f {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..l {
            let a = (row[j] - max).exp() / z;
            for c in 0..d {
                h[c] += a * x[[j, c]] / l as f64;
            }
        }
    }
    h
}

/// Random batch with items drawn from small vocabularies.
pub fn random_batch(rng: &mut impl Rng, users: usize, max_len: usize, items_a: usize, items_b: usize) -> Vec<HybridSequence> {
    let n = rng.gen_range(1..=users);
    (0..n)
        .map(|_| {
            let user = rng.gen_range(0..users);
            let len = rng.gen_range(1..=max_len);
            let events = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        Event::a(rng.gen_range(0..items_a))
                    } else {
                        Event::b(rng.gen_range(0..items_b))
                    }
                })
                .collect();
            HybridSequence::new(user, events)
        })
        .collect()
}

/// Multiset of a sequence's domain-A items.
pub fn multiset(items: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &i in items {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}
