//! Two-stage object classification built on successive subspace learning.
//!
//! Stage 1 extracts joint spatial-spectral features with channel-wise Saab
//! cascades over two PCA-decoupled color channels, classifies every spatial
//! location at several receptive fields, smooths the resulting soft labels,
//! and fuses everything with a meta classifier. Stage 2 resolves each test
//! image's top-2 confusion pair with a dedicated one-vs-one model that reuses
//! the stage-1 features.
//!
//! Start with the runnable examples, one per major capability:
//!
//! ```bash
//! cargo run --release --example dataset_and_augmentation  # ingest + 8 variants
//! cargo run --release --example color_pca                 # RGB decorrelation
//! cargo run --release --example saab_cascade              # 4-hop feature tree
//! cargo run --release --example gbdt_basics               # the soft classifier
//! cargo run --release --example label_smoothing           # cross-hop smoothing
//! cargo run --release --example two_stage_desk            # full pipeline, toy data
//! cargo run --release --example model_containers          # persistence format
//! ```
//!
//! The `epixelhop` binary wires the same library into `train-stage1`,
//! `train-pairs`, `evaluate`, `predict`, and `inspect` subcommands over the
//! CIFAR-10 binary distribution.

pub mod cascade;
pub mod cli;
pub mod color;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gbdt;
pub mod graph;
pub mod heatmap;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod saab;
pub mod smoothing;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
