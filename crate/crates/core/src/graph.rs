//! Per-batch cross-domain sequential (CDS) graphs and their augmentation views.
//!
//! Nodes are ordered as domain-A items, then users, then domain-B items, each
//! group sorted by global id. The only edges are user–item edges; the
//! item–item blocks are structurally zero. Sequential order is carried by the
//! edge weight: the item at 1-based position `q` of a user's length-`L` domain
//! subsequence contributes `q / L` to that user–item edge. Weights from several
//! sequences of the same user are summed, and the whole adjacency is then
//! degree-normalized.
//!
//! Augmentations only touch the A-side blocks. Every B-item row and column of a
//! view is copied bit for bit from the original matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use rand::seq::index;

use crate::config::Normalization;
use crate::dataio::{Domain, HybridSequence};
use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::CsrMatrix;

/// Raw (unnormalized) user–item edge weights keyed by `(item node, user node)`.
type RawEdges = BTreeMap<(usize, usize), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CdsGraph {
    pub items_a: Vec<usize>,
    pub users: Vec<usize>,
    pub items_b: Vec<usize>,
    pub matrix: CsrMatrix,
    pub normalization: Normalization,
    local_a: HashMap<usize, usize>,
    local_user: HashMap<usize, usize>,
    local_b: HashMap<usize, usize>,
    raw_b: RawEdges,
}

fn positional_weights(items: &[usize]) -> impl Iterator<Item = (usize, f64)> + '_ {
    let len = items.len() as f64;
    items.iter().enumerate().map(move |(q, &item)| (item, (q + 1) as f64 / len))
}

fn index_of(ids: &BTreeSet<usize>) -> (Vec<usize>, HashMap<usize, usize>) {
    let v: Vec<usize> = ids.iter().copied().collect();
    let map = v.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    (v, map)
}

fn degrees(n: usize, edges: &[&RawEdges]) -> Vec<f64> {
    let mut deg = vec![0.0; n];
    for raw in edges {
        for (&(i, u), &w) in raw.iter() {
            deg[i] += w;
            deg[u] += w;
        }
    }
    deg
}

fn normalize(norm: Normalization, w: f64, deg_from: f64, deg_to: f64) -> f64 {
    match norm {
        Normalization::Symmetric => w / (deg_from * deg_to).sqrt(),
        Normalization::Row => w / deg_from,
    }
}

fn push_edges(out: &mut Vec<(usize, usize, f64)>, raw: &RawEdges, deg: &[f64], norm: Normalization) {
    for (&(i, u), &w) in raw {
        out.push((i, u, normalize(norm, w, deg[i], deg[u])));
        out.push((u, i, normalize(norm, w, deg[u], deg[i])));
    }
}

impl CdsGraph {
    pub fn build(batch: &[HybridSequence], normalization: Normalization) -> Result<CdsGraph> {
        if batch.is_empty() {
            return Err(Error::Contract("cannot build a graph from an empty batch".into()));
        }
        let mut ids_a = BTreeSet::new();
        let mut ids_b = BTreeSet::new();
        let mut ids_u = BTreeSet::new();
        for s in batch {
            if s.events.is_empty() {
                return Err(Error::Contract(format!("user {} has an empty sequence", s.user)));
            }
            ids_u.insert(s.user);
            for e in &s.events {
                match e.domain {
                    Domain::A => ids_a.insert(e.item),
                    Domain::B => ids_b.insert(e.item),
                };
            }
        }
        let (items_a, local_a) = index_of(&ids_a);
        let (users, local_user) = index_of(&ids_u);
        let (items_b, local_b) = index_of(&ids_b);

        let mut g = CdsGraph {
            items_a,
            users,
            items_b,
            matrix: CsrMatrix::zeros(0, 0),
            normalization,
            local_a,
            local_user,
            local_b,
            raw_b: RawEdges::new(),
        };
        let orders: Vec<Vec<usize>> = batch.iter().map(|s| s.items(Domain::A)).collect();
        let raw_a = g.raw_edges_a(batch, &orders);
        g.raw_b = g.raw_edges_b(batch);

        let n = g.num_nodes();
        let deg = degrees(n, &[&raw_a, &g.raw_b]);
        let mut triplets = Vec::with_capacity(2 * (raw_a.len() + g.raw_b.len()));
        push_edges(&mut triplets, &raw_a, &deg, normalization);
        push_edges(&mut triplets, &g.raw_b, &deg, normalization);
        g.matrix = CsrMatrix::from_triplets(n, n, &triplets);
        Ok(g)
    }

    fn raw_edges_a(&self, batch: &[HybridSequence], orders: &[Vec<usize>]) -> RawEdges {
        let mut raw = RawEdges::new();
        for (s, order) in batch.iter().zip(orders) {
            let u = self.user_node(s.user);
            for (item, w) in positional_weights(order) {
                *raw.entry((self.local_a[&item], u)).or_insert(0.0) += w;
            }
        }
        raw
    }

    fn raw_edges_b(&self, batch: &[HybridSequence]) -> RawEdges {
        let mut raw = RawEdges::new();
        for s in batch {
            let u = self.user_node(s.user);
            for (item, w) in positional_weights(&s.items(Domain::B)) {
                *raw.entry((self.b_range().start + self.local_b[&item], u)).or_insert(0.0) += w;
            }
        }
        raw
    }

    fn user_node(&self, user: usize) -> usize {
        self.items_a.len() + self.local_user[&user]
    }

    pub fn num_nodes(&self) -> usize {
        self.items_a.len() + self.users.len() + self.items_b.len()
    }

    pub fn a_range(&self) -> Range<usize> {
        0..self.items_a.len()
    }

    pub fn user_range(&self) -> Range<usize> {
        let s = self.items_a.len();
        s..s + self.users.len()
    }

    pub fn b_range(&self) -> Range<usize> {
        let s = self.items_a.len() + self.users.len();
        s..s + self.items_b.len()
    }

    /// Local node index of a global item id in the given domain.
    pub fn item_node(&self, domain: Domain, item: usize) -> Option<usize> {
        match domain {
            Domain::A => self.local_a.get(&item).copied(),
            Domain::B => self.local_b.get(&item).map(|&j| self.b_range().start + j),
        }
    }

    pub fn node_of_user(&self, user: usize) -> Option<usize> {
        self.local_user.get(&user).map(|&u| self.items_a.len() + u)
    }

    /// Rows of the global embedding table (laid out as A items, users, B
    /// items) backing each local node.
    pub fn embedding_rows(&self, total_items_a: usize, total_users: usize) -> Vec<usize> {
        let users = self.users.iter().map(|&u| total_items_a + u);
        let items_b = self.items_b.iter().map(|&j| total_items_a + total_users + j);
        self.items_a.iter().copied().chain(users).chain(items_b).collect()
    }

    pub fn augment(
        &self,
        batch: &[HybridSequence],
        strategy: Strategy,
        alpha: f64,
        seed: u64,
    ) -> Result<AugmentedView> {
        match strategy {
            Strategy::ItemDropout => self.item_dropout(batch, alpha, seed),
            Strategy::SequenceReorder => self.sequence_reorder(batch, alpha, seed),
        }
    }

    /// Zeroes both directions of the user edges of `⌈L·α⌉` randomly chosen
    /// positions of each domain-A subsequence.
    pub fn item_dropout(&self, batch: &[HybridSequence], alpha: f64, seed: u64) -> Result<AugmentedView> {
        check_alpha(alpha)?;
        let mut rng = rng::rng(seed);
        let mut mask = MaskingMatrix::default();
        let mut log = Vec::new();
        for (s_idx, s) in batch.iter().enumerate() {
            let items = s.items(Domain::A);
            let k = perturb_count(items.len(), alpha);
            let u = self.user_node(s.user);
            for pos in index::sample(&mut rng, items.len(), k) {
                let a = *self
                    .local_a
                    .get(&items[pos])
                    .ok_or(Error::Index { what: "batch items", index: items[pos], len: self.items_a.len() })?;
                mask.dropped.insert((a, u));
                log.push(Perturbation { sequence: s_idx, position: pos, item: items[pos], action: Action::Dropped });
            }
        }
        Ok(AugmentedView {
            matrix: mask.apply(&self.matrix, self.a_range()),
            strategy: Strategy::ItemDropout,
            alpha,
            seed,
            log,
            mask: Some(mask),
            reordered: None,
        })
    }

    /// Moves `⌈L·α⌉` randomly chosen domain-A items of each sequence to its end
    /// (in the order they were drawn) and renormalizes the A-side blocks.
    pub fn sequence_reorder(&self, batch: &[HybridSequence], alpha: f64, seed: u64) -> Result<AugmentedView> {
        check_alpha(alpha)?;
        let mut rng = rng::rng(seed);
        let mut log = Vec::new();
        let mut orders = Vec::with_capacity(batch.len());
        for (s_idx, s) in batch.iter().enumerate() {
            let items = s.items(Domain::A);
            let k = perturb_count(items.len(), alpha);
            let moved: Vec<usize> = index::sample(&mut rng, items.len(), k).into_vec();
            let moved_set: BTreeSet<usize> = moved.iter().copied().collect();
            let mut order: Vec<usize> = (0..items.len())
                .filter(|p| !moved_set.contains(p))
                .map(|p| items[p])
                .collect();
            for &pos in &moved {
                order.push(items[pos]);
                log.push(Perturbation { sequence: s_idx, position: pos, item: items[pos], action: Action::Moved });
            }
            orders.push(order);
        }
        if log.is_empty() {
            return Ok(AugmentedView {
                matrix: self.matrix.clone(),
                strategy: Strategy::SequenceReorder,
                alpha,
                seed,
                log,
                mask: None,
                reordered: Some(orders),
            });
        }

        let raw_a = self.raw_edges_a(batch, &orders);
        let deg = degrees(self.num_nodes(), &[&raw_a, &self.raw_b]);
        let mut triplets = Vec::with_capacity(self.matrix.nnz());
        push_edges(&mut triplets, &raw_a, &deg, self.normalization);
        let b = self.b_range();
        // B-side entries are copied verbatim
        triplets.extend(
            self.matrix
                .triplets()
                .into_iter()
                .filter(|&(r, c, _)| b.contains(&r) || b.contains(&c)),
        );
        Ok(AugmentedView {
            matrix: CsrMatrix::from_triplets(self.num_nodes(), self.num_nodes(), &triplets),
            strategy: Strategy::SequenceReorder,
            alpha,
            seed,
            log,
            mask: None,
            reordered: Some(orders),
        })
    }

    /// Two independent draws of the same strategy.
    pub fn pair_views(
        &self,
        batch: &[HybridSequence],
        strategy: Strategy,
        alpha: f64,
        seed: u64,
    ) -> Result<(AugmentedView, AugmentedView)> {
        let v1 = self.augment(batch, strategy, alpha, rng::derive(seed, &[1]))?;
        let v2 = self.augment(batch, strategy, alpha, rng::derive(seed, &[2]))?;
        Ok((v1, v2))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `⌈len·α⌉`, tolerant of products like `10 × 0.3` landing a hair above an integer.
pub fn perturb_count(len: usize, alpha: f64) -> usize {
    let raw = len as f64 * alpha;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    k.min(len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    ItemDropout,
    SequenceReorder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Dropped,
    Moved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbation {
    /// index of the sequence within the batch
    pub sequence: usize,
    /// position within that sequence's domain-A subsequence
    pub position: usize,
    pub item: usize,
    pub action: Action,
}

/// Item-dropout mask over the `T_{A,U}` / `T_{U,A}` blocks: the listed
/// `(item node, user node)` pairs are zeroed in both directions, every other
/// entry passes through.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskingMatrix {
    pub dropped: BTreeSet<(usize, usize)>,
}

impl MaskingMatrix {
    fn keeps(&self, r: usize, c: usize, a: &Range<usize>) -> bool {
        if a.contains(&r) {
            !self.dropped.contains(&(r, c))
        } else if a.contains(&c) {
            !self.dropped.contains(&(c, r))
        } else {
            true
        }
    }

    pub fn apply(&self, m: &CsrMatrix, a_nodes: Range<usize>) -> CsrMatrix {
        let (rows, cols) = m.shape();
        let kept: Vec<_> = m
            .triplets()
            .into_iter()
            .filter(|&(r, c, _)| self.keeps(r, c, &a_nodes))
            .collect();
        CsrMatrix::from_triplets(rows, cols, &kept)
    }

    /// The 0/1 `T_{A,U}` block for `items × users` nodes starting at `user_offset`.
    pub fn block(&self, items: usize, users: usize, user_offset: usize) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((items, users), |(i, u)| {
            if self.dropped.contains(&(i, user_offset + u)) {
                0.0
            } else {
                1.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub matrix: CsrMatrix,
    pub strategy: Strategy,
    pub alpha: f64,
    pub seed: u64,
    pub log: Vec<Perturbation>,
    pub mask: Option<MaskingMatrix>,
    /// the domain-A orders used for sequence reorder, per batch sequence
    pub reordered: Option<Vec<Vec<usize>>>,
}

impl AugmentedView {
    /// Number of perturbed positions logged for each batch sequence.
    pub fn perturbed_per_sequence(&self, batch_len: usize) -> Vec<usize> {
        let mut counts = vec![0; batch_len];
        for p in &self.log {
            counts[p.sequence] += 1;
        }
        counts
    }
}
