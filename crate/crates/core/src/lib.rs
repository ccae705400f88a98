//! Joint spatial-frequency user scheduling, hybrid precoding and analog
//! combining for wideband MU-MIMO OFDM, learned with permutation-equivariant
//! 3D graph neural networks on a small reverse-mode autodiff tape.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, the primitive set and the backward tape.
//! - [`channel`]: scenario configuration, clustered-ray channel generator,
//!   binary dataset files.
//! - [`system`]: schedules, hybrid solutions, the exact sum rate, scheduled
//!   channel extraction, model-based features and permutations.
//! - [`scheduler`]: the scheduler GNN (single network or a sequence of
//!   networks) with hard and soft top-k outputs.
//! - [`precoder`]: the attention-augmented precoder GNN and its
//!   constraint-enforcing output heads.
//! - [`baselines`]: strongest/greedy/exhaustive schedulers, ZF precoders,
//!   the closed-form MISO and two-pair power-control references and the
//!   same-parameter-same-decision checker.
//! - [`train`], [`eval`], [`flops`], [`checkpoint`], [`config`]: the
//!   three-phase training pipeline, evaluation and sweeps, the FLOPs
//!   calculator and the file formats behind the `wbgnn` binary.

pub mod baselines;
pub mod channel;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod flops;
pub mod gnn;
pub mod precoder;
pub mod report;
pub mod scheduler;
pub mod system;
pub mod tensor;
pub mod train;

pub use num_complex::Complex64;
