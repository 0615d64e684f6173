//! File formats, synthetic benchmarks, and a multi-chain runner for
//! [`shapemcmc_core`].
//!
//! The core crate is `no_std` and deliberately knows nothing about files,
//! threads, or processes. This companion carries everything an experiment
//! needs around it:
//!
//! * [`pgm`] — binary PGM (P5) image IO, 8- and 16-bit, the interchange
//!   format for inputs, per-pixel marginal histograms, and quantile
//!   overlays.
//! * [`lutcache`] — a disk cache for the 2^21-entry curve-length flip-delta
//!   table, with a checksum and an oracle-backed verifier; building the
//!   table from scratch takes minutes, loading it takes milliseconds.
//! * [`synth`] — synthetic piecewise-constant test images (disk, annulus,
//!   two blobs, a silhouette-like shape) with additive Gaussian noise,
//!   the benchmark family used throughout the test suite.
//! * [`config`] — a flat `key=value` run-configuration file; command-line
//!   flags override file values, unknown keys are rejected.
//! * [`runner`] — the experiment driver: runs chains in parallel with
//!   matched seeds, merges their histograms deterministically, and writes
//!   the artifact set (histogram PGM, quantile overlays, trace CSVs,
//!   convergence CSV, reproducibility manifest).
//! * [`error`] — process-level error type mapping every failure to a
//!   documented exit code.
//!
//! The binary target (`shapemcmc`) exposes the five subcommands `synth`,
//! `sample`, `lut`, `compare`, and `quantile` on top of these modules.

pub mod config;
pub mod error;
pub mod lutcache;
pub mod pgm;
pub mod runner;
pub mod synth;

pub use shapemcmc_core as core;
