//! Collaborative multi-person motion prediction, self-contained.
//!
//! `relmo` predicts future 3-D poses for every person in a scene at once,
//! modelling how people move *together*: a cross-attention branch captures
//! dependencies between different people (weighted by their distance), a
//! graph-convolution branch captures dependencies between the joints of each
//! single person, and an aggregation module fuses the two streams before a
//! residual decoder emits future frames. Everything runs on a small f64
//! tensor library with tape-based reverse-mode differentiation that ships in
//! this crate — there is no external ML framework underneath, which keeps
//! every gradient checkable against finite differences.
//!
//! The crate is organized so that each capability has a runnable example:
//!
//! ```text
//! cargo run --example generate_data     synthetic scenes, velocity views, .mmp files
//! cargo run --example pcc_analysis      joint-trajectory correlation matrices + CSV export
//! cargo run --example gradient_check    finite-difference verification of every stage
//! cargo run --example train_overfit     optimizer sanity: memorize a tiny dataset
//! cargo run --example checkpoint_eval   save/load checkpoints, VIM + MPJPE reports
//! cargo run --example ablation_study    disable branches and compare convergence
//! cargo run --example predict_export    prediction CSV that round-trips through scoring
//! ```
//!
//! The same functionality is reachable from a thin command line binary
//! (`relmo gen-data | train | eval | predict | pcc | gradcheck`), which is a
//! direct veneer over [`cli`].
//!
//! # Module map
//!
//! - [`tensor`] — shapes, the op tape, backward, gradient checking
//! - [`rng`] — the counter-based deterministic random stream
//! - [`data`] — scenes, velocity views, synthetic generation, dataset files
//! - [`analysis`] — Pearson correlation between joint trajectories
//! - [`model`] — the prediction network and its parameter store
//! - [`train`] — loss, AdamW, the training loop, evaluation
//! - [`metrics`] — VIM and MPJPE at configurable horizons
//! - [`verify`] — named gradient checks over every model stage
//! - [`cli`] — argument parsing and the six subcommands
//!
//! Determinism is a design rule throughout: every stochastic choice (weight
//! init, dropout masks, shuffling, synthetic data) derives from explicit
//! 64-bit seeds, so identical invocations produce bit-identical results.

#![forbid(unsafe_code)]

pub mod analysis;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;
