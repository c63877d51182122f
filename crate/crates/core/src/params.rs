//! Trainable tensors and their text checkpoint format.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::autodiff::{xavier_uniform, AdamState};
use crate::dataio::Domain;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

/// External-attention memory for one domain: `f = w2ᵀ · LeakyReLU(w1 · x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EaWeights {
    /// `d × d`
    pub w1: Array2<f64>,
    /// `d × 1`
    pub w2: Array2<f64>,
    /// `1 × d`
    pub b: Array2<f64>,
}

/// Prediction head over one domain's full vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `items × 4d`
    pub w: Array2<f64>,
    /// `1 × items`
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub items_a: usize,
    pub users: usize,
    pub items_b: usize,
    pub dim: usize,
    pub layers: usize,
}

impl Dims {
    pub fn items(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.items_a,
            Domain::B => self.items_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    /// rows: A items, then users, then B items
    pub embeddings: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub ea_a: EaWeights,
    pub ea_b: EaWeights,
    pub head_a: Head,
    pub head_b: Head,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = rng::child(seed, &[rng::STREAM_INIT]);
        let d = dims.dim;
        let total = dims.items_a + dims.users + dims.items_b;
        let embeddings = xavier_uniform(total, d, &mut rng);
        let layers = (0..dims.layers)
            .map(|_| LayerWeights { w1: xavier_uniform(d, d, &mut rng), w2: xavier_uniform(d, d, &mut rng) })
            .collect();
        let mut ea = || EaWeights {
            w1: xavier_uniform(d, d, &mut rng),
            w2: xavier_uniform(d, 1, &mut rng),
            b: Array2::zeros((1, d)),
        };
        let (ea_a, ea_b) = (ea(), ea());
        let head_a = Head { w: xavier_uniform(dims.items_a, 4 * d, &mut rng), b: Array2::zeros((1, dims.items_a)) };
        let head_b = Head { w: xavier_uniform(dims.items_b, 4 * d, &mut rng), b: Array2::zeros((1, dims.items_b)) };
        ModelParams { dims, embeddings, layers, ea_a, ea_b, head_a, head_b }
    }

    pub fn ea(&self, domain: Domain) -> &EaWeights {
        match domain {
            Domain::A => &self.ea_a,
            Domain::B => &self.ea_b,
        }
    }

    pub fn head(&self, domain: Domain) -> &Head {
        match domain {
            Domain::A => &self.head_a,
            Domain::B => &self.head_b,
        }
    }

    /// Stable tensor names, in the order used by [`tensors`](Self::tensors).
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["embeddings".to_string()];
        for l in 0..self.layers.len() {
            names.push(format!("layer{l}.w1"));
            names.push(format!("layer{l}.w2"));
        }
        for dom in ["a", "b"] {
            names.push(format!("ea_{dom}.w1"));
            names.push(format!("ea_{dom}.w2"));
            names.push(format!("ea_{dom}.b"));
        }
        for dom in ["a", "b"] {
            names.push(format!("head_{dom}.w"));
            names.push(format!("head_{dom}.b"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embeddings];
        for l in &self.layers {
            out.push(&l.w1);
            out.push(&l.w2);
        }
        for ea in [&self.ea_a, &self.ea_b] {
            out.extend([&ea.w1, &ea.w2, &ea.b]);
        }
        for h in [&self.head_a, &self.head_b] {
            out.extend([&h.w, &h.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embeddings];
        for l in &mut self.layers {
            out.push(&mut l.w1);
            out.push(&mut l.w2);
        }
        for ea in [&mut self.ea_a, &mut self.ea_b] {
            out.extend([&mut ea.w1, &mut ea.w2, &mut ea.b]);
        }
        for h in [&mut self.head_a, &mut self.head_b] {
            out.extend([&mut h.w, &mut h.b]);
        }
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.dim()).collect()
    }

    /// Order-sensitive FNV-1a hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.iter() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Everything needed to resume training bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub seed: u64,
    /// epochs completed
    pub epoch: usize,
}

const MAGIC: &str = "eagcl-checkpoint 1";

fn write_tensor(out: &mut impl Write, kind: &str, name: &str, t: &Array2<f64>) -> std::io::Result<()> {
    writeln!(out, "{kind} {name} {} {}", t.nrows(), t.ncols())?;
    for row in t.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

impl Checkpoint {
    /// Plain-text dump: a header (format, seed, epoch, step, dims) followed by
    /// every parameter tensor and both Adam moment sets. Values are written in
    /// shortest round-trip form, so loading restores them exactly.
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let d = self.params.dims;
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "epoch {}", self.epoch)?;
        writeln!(out, "step {}", self.adam.step)?;
        writeln!(out, "dims {} {} {} {} {}", d.items_a, d.users, d.items_b, d.dim, d.layers)?;
        let names = self.params.names();
        for (name, t) in names.iter().zip(self.params.tensors()) {
            write_tensor(&mut out, "tensor", name, t)?;
        }
        for (name, t) in names.iter().zip(&self.adam.m) {
            write_tensor(&mut out, "adam_m", name, t)?;
        }
        for (name, t) in names.iter().zip(&self.adam.v) {
            write_tensor(&mut out, "adam_v", name, t)?;
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| bad("unexpected end of file".into()))?.map_err(Error::from)
        };
        if next()? != MAGIC {
            return Err(bad("missing checkpoint header".into()));
        }
        let mut field = |key: &str| -> Result<Vec<u64>> {
            let line = next()?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("expected `{key}`, got `{line}`")));
            }
            parts.map(|p| p.parse().map_err(|_| bad(format!("bad number in `{line}`")))).collect()
        };
        let seed = field("seed")?[0];
        let epoch = field("epoch")?[0] as usize;
        let step = field("step")?[0];
        let dv = field("dims")?;
        if dv.len() != 5 {
            return Err(bad("dims needs 5 values".into()));
        }
        let dims = Dims {
            items_a: dv[0] as usize,
            users: dv[1] as usize,
            items_b: dv[2] as usize,
            dim: dv[3] as usize,
            layers: dv[4] as usize,
        };
        let mut params = ModelParams::init(dims, 0);
        let names = params.names();
        let shapes = params.shapes();

        let mut read_tensor = |kind: &str, name: &str, shape: (usize, usize)| -> Result<Array2<f64>> {
            let header = next()?;
            let expect = format!("{kind} {name} {} {}", shape.0, shape.1);
            if header != expect {
                return Err(bad(format!("expected `{expect}`, got `{header}`")));
            }
            let mut data = Vec::with_capacity(shape.0 * shape.1);
            for _ in 0..shape.0 {
                let row = next()?;
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad value `{tok}` in {name}")))?);
                }
            }
            Array2::from_shape_vec(shape, data).map_err(|_| bad(format!("wrong element count in {name}")))
        };

        for ((t, name), &shape) in params.tensors_mut().into_iter().zip(&names).zip(&shapes) {
            *t = read_tensor("tensor", name, shape)?;
        }
        let mut adam = AdamState::new(shapes.iter().copied());
        adam.step = step;
        for (i, name) in names.iter().enumerate() {
            adam.m[i] = read_tensor("adam_m", name, shapes[i])?;
        }
        for (i, name) in names.iter().enumerate() {
            adam.v[i] = read_tensor("adam_v", name, shapes[i])?;
        }
        Ok(Checkpoint { params, adam, seed, epoch })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        Checkpoint::read(std::io::BufReader::new(file))
    }
}
