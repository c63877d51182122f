//! Hybrid cross-domain interaction sequences: loading, splitting, batching and
//! synthetic generation.

mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub use synth::{synthesize, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn tag(self) -> char {
        match self {
            Domain::A => 'A',
            Domain::B => 'B',
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub item: usize,
    pub domain: Domain,
}

impl Event {
    pub fn a(item: usize) -> Self {
        Event { item, domain: Domain::A }
    }

    pub fn b(item: usize) -> Self {
        Event { item, domain: Domain::B }
    }
}

/// One user's interleaved interaction list. Item ids are dense per domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridSequence {
    pub user: usize,
    pub events: Vec<Event>,
}

impl HybridSequence {
    pub fn new(user: usize, events: Vec<Event>) -> Self {
        HybridSequence { user, events }
    }

    /// Order-preserving projection onto one domain.
    pub fn items(&self, domain: Domain) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.domain == domain)
            .map(|e| e.item)
            .collect()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.events.iter().filter(|e| e.domain == domain).count()
    }
}

/// A prediction instance: the input prefix plus up to one target per domain.
///
/// The last event of a domain is held out as that domain's target when the
/// domain has at least two events; otherwise the domain contributes no target
/// and keeps all of its events in the prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub prefix: HybridSequence,
    pub target_a: Option<usize>,
    pub target_b: Option<usize>,
}

impl Instance {
    pub fn from_sequence(seq: &HybridSequence) -> Self {
        let mut drop = [None, None];
        let mut targets = [None, None];
        for (slot, domain) in [Domain::A, Domain::B].into_iter().enumerate() {
            if seq.count(domain) >= 2 {
                let pos = seq.events.iter().rposition(|e| e.domain == domain).unwrap();
                drop[slot] = Some(pos);
                targets[slot] = Some(seq.events[pos].item);
            }
        }
        let events = seq
            .events
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != drop[0] && Some(*i) != drop[1])
            .map(|(_, e)| *e)
            .collect();
        Instance {
            prefix: HybridSequence::new(seq.user, events),
            target_a: targets[0],
            target_b: targets[1],
        }
    }

    pub fn target(&self, domain: Domain) -> Option<usize> {
        match domain {
            Domain::A => self.target_a,
            Domain::B => self.target_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub sequences: Vec<HybridSequence>,
    pub num_items_a: usize,
    pub num_items_b: usize,
    pub num_users: usize,
}

impl Dataset {
    pub fn num_items(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.num_items_a,
            Domain::B => self.num_items_b,
        }
    }

    pub fn interactions(&self, domain: Domain) -> usize {
        self.sequences.iter().map(|s| s.count(domain)).sum()
    }

    /// Checks dense id ranges and non-empty sequences.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sequences.iter().enumerate() {
            if s.events.is_empty() {
                return Err(Error::Contract(format!("sequence {i} has no events")));
            }
            if s.user >= self.num_users {
                return Err(Error::Index { what: "users", index: s.user, len: self.num_users });
            }
            for e in &s.events {
                let len = self.num_items(e.domain);
                if e.item >= len {
                    return Err(Error::Index { what: "items", index: e.item, len });
                }
            }
        }
        Ok(())
    }
}

/// Original identifiers for each dense index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdMaps {
    pub users: Vec<u64>,
    pub items_a: Vec<u64>,
    pub items_b: Vec<u64>,
}

impl IdMaps {
    pub fn identity(data: &Dataset) -> Self {
        // B ids are offset so the two domains never share an identifier on disk.
        let m = data.num_items_a as u64;
        IdMaps {
            users: (0..data.num_users as u64).collect(),
            items_a: (0..m).collect(),
            items_b: (m..m + data.num_items_b as u64).collect(),
        }
    }

    pub fn write_sidecar(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "kind\tdense\toriginal")?;
        for (kind, ids) in [("user", &self.users), ("A", &self.items_a), ("B", &self.items_b)] {
            for (dense, orig) in ids.iter().enumerate() {
                writeln!(out, "{kind}\t{dense}\t{orig}")?;
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Interner {
    map: HashMap<u64, usize>,
    ids: Vec<u64>,
}

impl Interner {
    fn get(&mut self, id: u64) -> usize {
        *self.map.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.ids.len() - 1
        })
    }
}

/// Parses `user<TAB>item:D,item:D,...` lines, densely re-indexing ids in order
/// of first appearance. Blank lines are skipped.
pub fn parse_dataset(reader: impl BufRead) -> Result<(Dataset, IdMaps)> {
    let mut users = Interner::default();
    let mut items_a = Interner::default();
    let mut items_b = Interner::default();
    let mut seen: HashMap<u64, (Domain, usize)> = HashMap::new();
    let mut sequences = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let (user, rest) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `user<TAB>events`".into()))?;
        let user: u64 = user
            .trim()
            .parse()
            .map_err(|_| err(format!("bad user id `{user}`")))?;
        let mut events = Vec::new();
        for tok in rest.split(',') {
            let tok = tok.trim();
            let (item, dom) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("bad event `{tok}`")))?;
            let item: u64 = item.parse().map_err(|_| err(format!("bad item id `{item}`")))?;
            let domain = match dom {
                "A" => Domain::A,
                "B" => Domain::B,
                _ => return Err(err(format!("unknown domain `{dom}`"))),
            };
            match seen.get(&item) {
                Some(&(d, _)) if d != domain => {
                    return Err(Error::Consistency {
                        item,
                        first: d.tag(),
                        second: domain.tag(),
                        line: line_no,
                    })
                }
                Some(_) => {}
                None => {
                    seen.insert(item, (domain, line_no));
                }
            }
            let dense = match domain {
                Domain::A => items_a.get(item),
                Domain::B => items_b.get(item),
            };
            events.push(Event { item: dense, domain });
        }
        sequences.push(HybridSequence::new(users.get(user), events));
    }

    let data = Dataset {
        sequences,
        num_items_a: items_a.ids.len(),
        num_items_b: items_b.ids.len(),
        num_users: users.ids.len(),
    };
    let maps = IdMaps { users: users.ids, items_a: items_a.ids, items_b: items_b.ids };
    Ok((data, maps))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, IdMaps)> {
    let file = std::fs::File::open(path)?;
    parse_dataset(std::io::BufReader::new(file))
}

/// Writes the dataset in the TSV format read by [`parse_dataset`], mapping
/// dense ids back through `maps`.
pub fn write_dataset(data: &Dataset, maps: &IdMaps, mut out: impl Write) -> Result<()> {
    for s in &data.sequences {
        write!(out, "{}\t", maps.users[s.user])?;
        for (i, e) in s.events.iter().enumerate() {
            let id = match e.domain {
                Domain::A => maps.items_a[e.item],
                Domain::B => maps.items_b[e.item],
            };
            if i > 0 {
                write!(out, ",")?;
            }
            write!(out, "{id}:{}", e.domain)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<HybridSequence>,
    pub test: Vec<HybridSequence>,
    pub num_items_a: usize,
    pub num_items_b: usize,
    pub num_users: usize,
}

impl DatasetSplit {
    pub fn train_dataset(&self) -> Dataset {
        Dataset {
            sequences: self.train.clone(),
            num_items_a: self.num_items_a,
            num_items_b: self.num_items_b,
            num_users: self.num_users,
        }
    }
}

/// Random split by sequence. Test sequences that mention a user or item never
/// seen in training are moved back to the training side, so evaluation never
/// meets a cold id.
pub fn split_dataset(data: &Dataset, train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    if data.sequences.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 sequences, got {}",
            data.sequences.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.sequences.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    let n_train = ((data.sequences.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, data.sequences.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut train: Vec<HybridSequence> =
        train_idx.iter().map(|&i| data.sequences[i].clone()).collect();
    let mut users: BTreeSet<usize> = train.iter().map(|s| s.user).collect();
    let mut items: BTreeSet<(Domain, usize)> = train
        .iter()
        .flat_map(|s| s.events.iter().map(|e| (e.domain, e.item)))
        .collect();

    // Moving a sequence to train can warm up ids for later ones, so iterate
    // to a fixed point.
    let mut pending: Vec<HybridSequence> =
        test_idx.iter().map(|&i| data.sequences[i].clone()).collect();
    loop {
        let (warm, cold): (Vec<_>, Vec<_>) = pending.into_iter().partition(|s| {
            users.contains(&s.user) && s.events.iter().all(|e| items.contains(&(e.domain, e.item)))
        });
        if cold.is_empty() {
            pending = warm;
            break;
        }
        for s in &cold {
            users.insert(s.user);
            items.extend(s.events.iter().map(|e| (e.domain, e.item)));
        }
        train.extend(cold);
        pending = warm;
    }

    Ok(DatasetSplit {
        train,
        test: pending,
        num_items_a: data.num_items_a,
        num_items_b: data.num_items_b,
        num_users: data.num_users,
    })
}

/// Shuffles and chunks sequences; the last batch may be short.
pub fn make_batches(
    data: &[HybridSequence],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<&HybridSequence>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &data[i]).collect())
        .collect())
}
