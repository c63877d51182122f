//! Cross-domain sequential recommendation with graph contrastive learning and
//! an external-attention sequence encoder.
//!
//! A batch of hybrid sequences becomes a CDS graph (A items, users, B items)
//! whose user–item edges carry positional weights. Node embeddings are
//! propagated over that graph, two augmented views of the A side feed an
//! InfoNCE loss, each domain subsequence is pooled by external attention, and
//! per-domain heads score the next item over the whole vocabulary.
//!
//! ```
//! use eagcl::dataio::{synthesize, SynthConfig};
//! use eagcl::dataio::split_dataset;
//! use eagcl::train::Trainer;
//! use eagcl::eval::evaluate;
//! use eagcl::config::TrainConfig;
//!
//! let data = synthesize(&SynthConfig { users: 30, items_a: 40, items_b: 20, ..SynthConfig::default() })?;
//! let split = split_dataset(&data, 0.8, 7)?;
//! let cfg = TrainConfig { epochs: 2, batch_size: 32, ..TrainConfig::default() };
//! let mut trainer = Trainer::for_split(cfg, &split)?;
//! trainer.fit(&split.train, None)?;
//! let report = evaluate(&trainer.params, &trainer.cfg, &split.test)?;
//! assert!(report.a.is_some() && report.b.is_some());
//! # Ok::<(), eagcl::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod contrastive;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod model;
pub mod objective;
pub mod params;
pub mod rng;
pub mod sparse;
pub mod train;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use params::{Checkpoint, ModelParams};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/contrastive.md")]
    mod contrastive {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
