//! Exact-acceptance MCMC over binary level-set segmentations.
//!
//! This crate implements a family of Markov chain Monte Carlo samplers for
//! posterior distributions over binary segmentations of a 2D image, where a
//! segmentation is represented implicitly by the sign of a real-valued
//! level-set function `φ` (positive = foreground). The centerpiece is a
//! mask-range sampler that perturbs a random circular block of pixels by a
//! single scalar chosen so that the Hastings ratio is identically one —
//! every proposal is accepted — plus a topology-controlled variant that
//! restricts proposals to an allowable set of topological changes, and
//! single-site Gibbs / filtered-point-sampling baselines.
//!
//! # Modules
//!
//! * [`grid`] — 2D containers ([`grid::Grid`]), images, labelings, level
//!   sets, connected-component labeling with a virtual background frame,
//!   and handle (genus) counting.
//! * [`topology`] — digital topology: topological numbers on the punctured
//!   3×3 neighborhood, extended (globally unique) numbers, classification
//!   of a pixel flip into create/destroy/split/merge/handle events,
//!   constraint policies, and an incrementally maintained
//!   [`topology::TopologyState`].
//! * [`energy`] — target-distribution energies: Gaussian and histogram
//!   data terms, Ising-style neighbor affinity, and a PDE-style curve-length
//!   penalty evaluated through a fast-marching signed distance function,
//!   with an optional precomputed 2^21-entry flip-delta lookup table.
//! * [`sampler`] — the MCMC engines: mask sampling, range tables, the
//!   exact-acceptance step, topology-filtered range tables, Gibbs and BFPS
//!   baselines, and a deterministic chain runner.
//! * [`analysis`] — marginal statistics over chains: per-pixel foreground
//!   histograms, quantile segmentations, energy traces, and convergence
//!   summaries.
//!
//! # Example
//!
//! ```
//! use shapemcmc_core::grid::{ConnectivityPair, Labeling, init_levelset};
//! use shapemcmc_core::energy::{DataTerm, EnergyModel, PriorTerm};
//! use shapemcmc_core::sampler::{ChainOptions, ChainState, SamplerConfig, SamplerKind, run_chain};
//! use shapemcmc_core::grid::Grid;
//!
//! // A tiny image: bright 2×2 block in a dark 4×4 field.
//! let mut image = Grid::new(4, 4, 0.2);
//! for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
//!     image[(x, y)] = 0.8;
//! }
//! let image = shapemcmc_core::grid::Image::new(image).unwrap();
//!
//! let init = Labeling::new(4, 4, false);
//! let model = EnergyModel::new(
//!     DataTerm::gaussian_two_phase(0.8, 0.1, 0.2, 0.1),
//!     PriorTerm::IsingAffinity,
//!     0.5,
//! );
//! let config = SamplerConfig { r_min: 1.0, r_max: 2.0, ..SamplerConfig::default() };
//! let opts = ChainOptions {
//!     sampler: SamplerKind::Gimh,
//!     iterations: 200,
//!     burn_in: 100,
//!     thin: 10,
//!     config,
//!     ..ChainOptions::default()
//! };
//! let state = ChainState::new(init_levelset(&init, 1.0), &model, &image,
//!                             ConnectivityPair::FOUR_EIGHT, 7).unwrap();
//! let summary = run_chain(state, &model, &image, &opts, |_state, _report| {}).unwrap();
//! assert_eq!(summary.iterations, 200);
//! ```
//!
//! # `no_std` support
//!
//! The crate is `no_std`-compatible (it requires `alloc`). Disable default
//! features and enable the `libm` feature to supply float math:
//!
//! ```toml
//! shapemcmc-core = { version = "0.1", default-features = false, features = ["libm"] }
//! ```

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("shapemcmc-core requires either the `std` or the `libm` feature");

pub mod analysis;
pub mod energy;
pub mod grid;
pub mod sampler;
pub mod topology;

mod mathx;

use core::fmt;

/// Errors produced by construction and sampling operations.
///
/// Everything here is a caller-visible contract violation or a degenerate
/// runtime condition; internal invariant violations use
/// [`Error::InternalInvariant`] so embedders can map them to a distinct
/// failure class.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Grid dimensions were zero or mismatched between arguments.
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// An image intensity was outside `[0, 1]` or not finite.
    InvalidIntensity { index: usize, value: f64 },
    /// A level-set height was not finite.
    InvalidHeight { index: usize, value: f64 },
    /// A configuration field violated its documented invariant.
    InvalidConfig(&'static str),
    /// Mask rejection sampling failed to find a valid mask.
    DegenerateState(&'static str),
    /// Normalization of an empty accumulator was requested.
    EmptyAccumulator,
    /// An internal invariant was violated (a bug, or corrupted state).
    InternalInvariant(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::InvalidIntensity { index, value } => {
                write!(f, "intensity at pixel {index} is {value}, outside [0, 1]")
            }
            Error::InvalidHeight { index, value } => {
                write!(f, "level-set height at pixel {index} is not finite: {value}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DegenerateState(msg) => write!(f, "degenerate sampler state: {msg}"),
            Error::EmptyAccumulator => write!(f, "no samples accumulated; cannot normalize"),
            Error::InternalInvariant(msg) => write!(f, "internal invariant violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
