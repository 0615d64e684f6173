//! MCMC engines over level-set segmentations.
//!
//! # The mask-range sampler
//!
//! The main sampler perturbs the level-set function `φ` by a scalar `f`
//! inside a random circular mask `m`: `φ̂ = φ + f·m`. Along the `f` axis the
//! masked heights induce breakpoints at `−φ_i`; between consecutive
//! breakpoints the sign labeling is constant, so with `G` distinct masked
//! heights the axis splits into `G + 1` *ranges*, each holding one reachable
//! labeling (ties in height flip atomically and merge their breakpoints).
//! The support is closed off `β_∞` beyond the extreme breakpoints.
//!
//! The proposal first draws a range `r` with probability proportional to
//! `β_r · π(ℓ_r)` — range width times posterior mass of its labeling — and
//! then `f` uniformly inside the range, with density `1/β_r`. Substituting
//! into the Metropolis–Hastings ratio, the width and the posterior weights
//! cancel against the reverse move (whose range table is the forward table
//! shifted by `−f`), so the ratio is identically one and every proposal is
//! accepted. [`hastings_log_ratio`] rebuilds the reverse table explicitly
//! and exposes the (numerically computed) log ratio as a diagnostic.
//!
//! Range energies are accumulated by two sweeps out of the zero-range
//! (which keeps the current labeling and anchors `E = 0`): each sweep flips
//! one breakpoint group at a time and sums single-pixel energy deltas, so
//! the whole table costs one delta evaluation per masked pixel.
//!
//! A mask is *valid* when its perturbation support contains `f = 0`, i.e.
//! when `min φ ≤ β_∞` and `max φ ≥ −β_∞` over the masked pixels; invalid
//! masks (entirely away from the zero line) are rejected and resampled.
//!
//! # Height confinement
//!
//! Nothing in the move itself bounds the height magnitudes: masks that
//! overlap partially keep stretching the gaps between heights, the gaps are
//! the range widths, and the widths set the scale of the next `f`, so over
//! long runs `max |φ|` grows multiplicatively without limit (and eventually
//! overflows). The proposal support is therefore additionally clipped to
//! the window `[−H − min φ, H − max φ]` (min/max over the masked pixels),
//! which is exactly the set of perturbations that keep every masked height
//! inside the box `(−H, H)`; `H` is [`SamplerConfig::height_cap`]. A chain
//! started inside the box stays inside forever. The window is an absolute
//! interval along the move's line in state space — like the breakpoints, it
//! shifts rigidly with the move — so the forward and reverse tables still
//! agree width for width and the unit Hastings ratio is untouched. On the
//! box the invariant density `e^{−E(sign φ)}` is proper and assigns every
//! sign pattern the same height volume `H^n`, so the labeling marginal is
//! the posterior exactly. The cap also sets the equilibrium height scale,
//! and sign flips slow down roughly in proportion to `H/β_∞` once heights
//! fill the box (flip ranges keep `β_∞`- and gap-sized widths while the
//! zero-range stretches with the box), so the default keeps `H` at a small
//! multiple of `β_∞`: wide enough that the window only binds once heights
//! have drifted well past their initial `±β_∞/2`, narrow enough that a
//! confined chain keeps mixing at the `β_∞` scale indefinitely.
//!
//! # Topology control
//!
//! The topology-controlled variant filters the range table: sweeping out of
//! the zero-range it applies each flip to a *justified* copy of the
//! topology state only when the constraint permits it, parking refused
//! flips on a violated list that is re-examined to a fixpoint after every
//! group (a refused flip often becomes simple once its neighbors have
//! moved). A range is in the allowed set exactly when the violated list is
//! empty after its group; refused ranges get zero proposal weight. The
//! zero-range is always allowed. Because the filtered normalizers of the
//! forward and reverse tables are no longer guaranteed to coincide, unit
//! acceptance makes the constrained chain exact only up to that
//! discrepancy; [`hastings_log_ratio`] measures it.
//!
//! # Baselines
//!
//! [`gibbs_step`] is the standard single-site heat-bath update:
//! a uniformly random pixel flips with probability `1/(1 + exp(ΔE))`.
//! [`bfps_step`] is a big-move baseline in the spirit of filtered point
//! sampling: it scores every pixel, selects a sparse candidate set,
//! modulates signed normal increments by a smoothing kernel, and accepts
//! the resulting global perturbation by Metropolis–Hastings with an
//! explicit forward/backward density ratio.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{EnergyModel, EnergyScratch};
use crate::grid::{ConnectivityPair, Grid, Image, Labeling, LevelSet};
use crate::mathx;
use crate::topology::{TopologyConstraint, TopologyState};
use crate::{Error, Result};

/// Consecutive invalid masks tolerated before sampling gives up.
pub const MASK_REJECTION_LIMIT: usize = 1_000_000;

/// Redraws of `f` tolerated before a range is declared degenerate.
const PERTURBATION_REDRAW_LIMIT: usize = 64;

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

/// Parameters of the mask-range proposal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Smallest mask radius (pixels, ≥ 1).
    pub r_min: f64,
    /// Largest mask radius (pixels, ≥ `r_min`).
    pub r_max: f64,
    /// Width of the two unbounded extreme ranges.
    pub beta_inf: f64,
    /// Half-width `H` of the height box: perturbation supports are clipped
    /// so no masked height can leave `(−H, H)` (see the module docs on
    /// height confinement). Must be at least `beta_inf`. Sign mixing slows
    /// roughly with `H/β_∞` once heights fill the box, so keep the cap a
    /// small multiple of `beta_inf` unless the run is short.
    pub height_cap: f64,
    /// Allowed topological events (used by [`SamplerKind::TcGimh`]).
    pub constraint: TopologyConstraint,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            r_min: 2.0,
            r_max: 8.0,
            beta_inf: 1.0,
            height_cap: 2.0,
            constraint: TopologyConstraint::Unconstrained,
        }
    }
}

impl SamplerConfig {
    /// Checks the documented field invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.r_min.is_finite() || !self.r_max.is_finite() || self.r_min < 1.0
            || self.r_max < self.r_min
        {
            return Err(Error::InvalidConfig("mask radii must satisfy 1 <= r_min <= r_max"));
        }
        if !self.beta_inf.is_finite() || self.beta_inf <= 0.0 {
            return Err(Error::InvalidConfig("beta_inf must be positive and finite"));
        }
        if !self.height_cap.is_finite() || self.height_cap < self.beta_inf {
            return Err(Error::InvalidConfig("height_cap must be finite and >= beta_inf"));
        }
        Ok(())
    }
}

/// Parameters of the filtered-point-sampling baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfpsConfig {
    /// Strength of the energy signal in the normal increments.
    pub alpha_n: f64,
    /// Strength of the energy signal in candidate selection.
    pub alpha_c: f64,
    /// Mean candidate fraction after renormalization.
    pub gamma: f64,
    /// Standard deviation of the normal increments.
    pub sigma: f64,
    /// Smoothing-kernel widths, one drawn uniformly per step.
    pub kernel_sigmas: [f64; 3],
}

impl Default for BfpsConfig {
    fn default() -> Self {
        BfpsConfig {
            alpha_n: 0.5,
            alpha_c: 0.5,
            gamma: 0.01,
            sigma: 0.75,
            kernel_sigmas: [1.5, 3.0, 6.0],
        }
    }
}

impl BfpsConfig {
    /// Checks the documented field invariants.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_n) || !(0.0..=1.0).contains(&self.alpha_c) {
            return Err(Error::InvalidConfig("alpha_n and alpha_c must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1]"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig("sigma must be positive and finite"));
        }
        if self.kernel_sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("kernel widths must be positive and finite"));
        }
        Ok(())
    }
}

/// Which update rule a chain runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplerKind {
    /// Mask-range sampler, unconstrained (ignores `config.constraint`).
    #[default]
    Gimh,
    /// Mask-range sampler filtered by `config.constraint`.
    TcGimh,
    /// Single-site heat-bath updates.
    Gibbs,
    /// Filtered-point-sampling global moves.
    Bfps,
}

/// Options of a full chain run.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOptions {
    pub sampler: SamplerKind,
    /// Total update steps.
    pub iterations: u64,
    /// Steps discarded before recording.
    pub burn_in: u64,
    /// Record every `thin`-th post-burn-in step (≥ 1).
    pub thin: u64,
    pub config: SamplerConfig,
    pub bfps: BfpsConfig,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            sampler: SamplerKind::Gimh,
            iterations: 100_000,
            burn_in: 10_000,
            thin: 10,
            config: SamplerConfig::default(),
            bfps: BfpsConfig::default(),
        }
    }
}

impl ChainOptions {
    /// Checks the documented field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1"));
        }
        self.config.validate()?;
        self.bfps.validate()
    }
}

// ---------------------------------------------------------------------------
// Chain state.
// ---------------------------------------------------------------------------

/// The complete mutable state of one chain: the level-set function, its
/// incrementally maintained topology, the bookkept energy, and the RNG.
#[derive(Clone, Debug)]
pub struct ChainState {
    levelset: LevelSet,
    topo: TopologyState,
    energy: f64,
    iteration: u64,
    rng: ChaCha8Rng,
    scratch: EnergyScratch,
}

impl ChainState {
    /// Builds a chain state, computing the initial energy and topology.
    pub fn new(
        levelset: LevelSet,
        model: &EnergyModel,
        image: &Image,
        pair: ConnectivityPair,
        seed: u64,
    ) -> Result<Self> {
        image.grid().check_same_dims(levelset.heights())?;
        let labeling = levelset.labeling();
        let topo = TopologyState::new(&labeling, pair);
        let energy = model.total_energy(&labeling, image);
        Ok(ChainState {
            levelset,
            topo,
            energy,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch: EnergyScratch::new(),
        })
    }

    /// The level-set function.
    #[inline(always)]
    pub fn levelset(&self) -> &LevelSet {
        &self.levelset
    }

    /// The maintained topology (components, handles, labeling).
    #[inline(always)]
    pub fn topo(&self) -> &TopologyState {
        &self.topo
    }

    /// The current sign labeling.
    #[inline(always)]
    pub fn labeling(&self) -> &Labeling {
        self.topo.labels()
    }

    /// The bookkept energy (updated by exact per-move deltas).
    #[inline(always)]
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Number of update steps applied so far.
    #[inline(always)]
    pub fn iteration(&self) -> u64 {
        self.iteration
    }
}

/// Per-step record passed to the chain observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based step number.
    pub iteration: u64,
    /// Energy after the step.
    pub energy: f64,
    /// Whether the proposal was applied.
    pub accepted: bool,
    /// Whether this step is a retained sample (post burn-in, on the
    /// thinning stride); set by [`run_chain`].
    pub recorded: bool,
    /// Signed index of the chosen range (0 for non-range samplers).
    pub range_index: i64,
    /// Radius of the sampled mask (0 for non-mask samplers).
    pub mask_radius: f64,
    /// Topology classifications performed while filtering the table.
    pub constraint_checks: u64,
}

/// End-of-run summary of a chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSummary {
    /// Steps performed.
    pub iterations: u64,
    /// Steps whose proposal was applied.
    pub accepted: u64,
    /// Steps marked as retained samples.
    pub recorded: u64,
    /// Energy before the first step.
    pub initial_energy: f64,
    /// Energy after the last step.
    pub final_energy: f64,
    /// Lowest energy seen after any step.
    pub best_energy: f64,
}

// ---------------------------------------------------------------------------
// Mask sampling.
// ---------------------------------------------------------------------------

/// A circular pixel mask.
#[derive(Clone, Debug)]
pub struct Mask {
    center: (usize, usize),
    radius: f64,
    pixels: Vec<usize>,
}

impl Mask {
    /// Center pixel.
    #[inline(always)]
    pub fn center(&self) -> (usize, usize) {
        self.center
    }

    /// Radius in pixels.
    #[inline(always)]
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Masked pixel indices, ascending.
    #[inline(always)]
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }
}

/// Draws a valid mask: center uniform over pixels, radius uniform in
/// `[r_min, r_max]`, membership by Euclidean distance. A mask is valid
/// when `min φ ≤ β_∞` and `max φ ≥ −β_∞` over its pixels (the perturbation
/// support then contains `f = 0`); invalid draws are rejected and redrawn,
/// failing with [`Error::DegenerateState`] after [`MASK_REJECTION_LIMIT`]
/// consecutive rejections.
pub fn sample_mask<R: Rng>(
    levelset: &LevelSet,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Mask> {
    let grid = levelset.heights();
    let (w, h) = (grid.width(), grid.height());
    for _ in 0..MASK_REJECTION_LIMIT {
        let cx = rng.random_range(0..w);
        let cy = rng.random_range(0..h);
        let radius = config.r_min + rng.random::<f64>() * (config.r_max - config.r_min);
        let reach = mathx::floor(radius) as i64;
        let r2 = radius * radius;
        let x0 = (cx as i64 - reach).max(0) as usize;
        let x1 = ((cx as i64 + reach) as usize).min(w - 1);
        let y0 = (cy as i64 - reach).max(0) as usize;
        let y1 = ((cy as i64 + reach) as usize).min(h - 1);
        let mut pixels = Vec::new();
        let mut min_h = f64::INFINITY;
        let mut max_h = f64::NEG_INFINITY;
        for y in y0..=y1 {
            let dy = y as f64 - cy as f64;
            for x in x0..=x1 {
                let dx = x as f64 - cx as f64;
                if dx * dx + dy * dy <= r2 {
                    let i = grid.idx(x, y);
                    pixels.push(i);
                    min_h = min_h.min(levelset.height(i));
                    max_h = max_h.max(levelset.height(i));
                }
            }
        }
        if min_h <= config.beta_inf && max_h >= -config.beta_inf {
            return Ok(Mask {
                center: (cx, cy),
                radius,
                pixels,
            });
        }
    }
    Err(Error::DegenerateState(
        "mask sampling exhausted the rejection limit",
    ))
}

// ---------------------------------------------------------------------------
// Range table.
// ---------------------------------------------------------------------------

struct RangeGroup {
    height: f64,
    pixels: Vec<usize>,
}

/// The perturbation ranges of one (state, mask) pair: breakpoint bounds,
/// widths, per-range energies relative to the zero-range, and (under a
/// constraint) the allowed flags.
///
/// Ranges are indexed `0..=G` left to right along the `f` axis; the
/// zero-range index is [`RangeTable::origin`] and signed indices
/// [`RangeTable::signed_index`] are relative to it: positive ranges flip
/// background groups to foreground, negative ranges the reverse.
pub struct RangeTable {
    groups: Vec<RangeGroup>,
    /// `groups.len() + 2` interval bounds, ascending.
    bounds: Vec<f64>,
    /// Energy of each range's labeling minus the current energy.
    energies: Vec<f64>,
    allowed: Vec<bool>,
    origin: usize,
    constraint_checks: u64,
}

impl RangeTable {
    /// Builds the table by two delta sweeps out of the zero-range.
    ///
    /// `topo` must describe `levelset`'s labeling. Under
    /// [`TopologyConstraint::Unconstrained`] every range is allowed and the
    /// topology state is only read for its labeling; otherwise the sweeps
    /// maintain justified copies and fill the allowed flags. `beta_inf` is
    /// the width given to the two unbounded extreme ranges; `height_cap`
    /// clips the support so every masked height stays inside the height box
    /// (see the module docs) — ranges pushed entirely outside the box keep
    /// their slot but get zero width, hence zero proposal weight.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        levelset: &LevelSet,
        mask: &Mask,
        model: &EnergyModel,
        image: &Image,
        topo: &TopologyState,
        constraint: TopologyConstraint,
        beta_inf: f64,
        height_cap: f64,
        scratch: &mut EnergyScratch,
    ) -> Result<RangeTable> {
        debug_assert_eq!(topo.labels().len(), levelset.len());
        if mask.pixels.is_empty() {
            return Err(Error::InternalInvariant("range table over an empty mask"));
        }

        // Group masked pixels by exact height, tallest first, so breakpoints
        // −h ascend with group index. Pixels stay ascending within a group.
        let mut entries: Vec<(f64, usize)> = mask
            .pixels
            .iter()
            .map(|&p| (levelset.height(p), p))
            .collect();
        entries.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut groups: Vec<RangeGroup> = Vec::new();
        for (height, pixel) in entries {
            match groups.last_mut() {
                Some(g) if g.height == height => g.pixels.push(pixel),
                _ => groups.push(RangeGroup {
                    height,
                    pixels: vec![pixel],
                }),
            }
        }
        let count = groups.len();

        let mut bounds = Vec::with_capacity(count + 2);
        bounds.push(0.0); // placeholder for the left extreme
        for g in &groups {
            bounds.push(-g.height);
        }
        bounds[0] = bounds[1] - beta_inf;
        bounds.push(bounds[count] + beta_inf);

        // Height confinement: clamp the support into the window of
        // perturbations that keep every masked height inside the box
        // (±height_cap). A state already outside the box widens the window
        // just enough to keep f = 0 interior, so exotic hand-built states
        // degrade gracefully instead of deadlocking.
        let cap = height_cap
            .max(groups[0].height.abs())
            .max(groups[count - 1].height.abs());
        let window_lo = -cap - groups[count - 1].height;
        let window_hi = cap - groups[0].height;
        for b in bounds.iter_mut() {
            *b = b.clamp(window_lo, window_hi);
        }

        // The zero-range: groups with positive height sit below f = 0.
        let origin = groups.iter().filter(|g| g.height > 0.0).count();
        let intervals = count + 1;
        let mut energies = vec![0.0; intervals];
        let mut allowed = vec![true; intervals];
        let mut checks = 0u64;

        let w = levelset.heights().width();
        let mut sweep = |range: core::ops::Range<usize>, upward: bool| -> Result<()> {
            let mut labeling = topo.labels().clone();
            let mut justified =
                (constraint != TopologyConstraint::Unconstrained).then(|| topo.clone());
            let mut violated: Vec<(usize, usize)> = Vec::new();
            let indices: Vec<usize> = if upward {
                range.collect()
            } else {
                range.rev().collect()
            };
            for g in indices {
                let mut delta = 0.0;
                for &p in &groups[g].pixels {
                    let (x, y) = (p % w, p / w);
                    delta += model.flip_delta(&labeling, image, x, y, scratch);
                    labeling[p] = !labeling[p];
                    if let Some(tc) = justified.as_mut() {
                        let cls = tc.classify_flip(x, y)?;
                        checks += 1;
                        if constraint.permits(&cls) {
                            tc.apply_flip(x, y)?;
                        } else {
                            violated.push((x, y));
                        }
                    }
                }
                let (this, prev) = if upward { (g + 1, g) } else { (g, g + 1) };
                energies[this] = energies[prev] + delta;
                if let Some(tc) = justified.as_mut() {
                    clear_violations(tc, constraint, &mut violated, &mut checks)?;
                    allowed[this] = violated.is_empty();
                }
            }
            Ok(())
        };
        sweep(origin..count, true)?;
        sweep(0..origin, false)?;

        Ok(RangeTable {
            groups,
            bounds,
            energies,
            allowed,
            origin,
            constraint_checks: checks,
        })
    }

    /// Number of ranges (breakpoint groups + 1).
    #[inline(always)]
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    /// Always false: a table holds at least two ranges.
    #[inline(always)]
    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Number of breakpoint groups.
    #[inline(always)]
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Index of the zero-range (the current labeling, energy 0).
    #[inline(always)]
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Signed index of a range relative to the zero-range.
    #[inline(always)]
    pub fn signed_index(&self, range: usize) -> i64 {
        range as i64 - self.origin as i64
    }

    /// Interval bounds along the `f` axis (`len() + 1` ascending values).
    #[inline(always)]
    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// Width `β_r` of a range.
    #[inline(always)]
    pub fn width(&self, range: usize) -> f64 {
        self.bounds[range + 1] - self.bounds[range]
    }

    /// Energy of a range's labeling relative to the current labeling.
    #[inline(always)]
    pub fn energy(&self, range: usize) -> f64 {
        self.energies[range]
    }

    /// Whether a range is in the allowed set.
    #[inline(always)]
    pub fn is_allowed(&self, range: usize) -> bool {
        self.allowed[range]
    }

    /// Topology classifications spent filtering the table.
    #[inline(always)]
    pub fn constraint_checks(&self) -> u64 {
        self.constraint_checks
    }

    /// Log proposal weight of a range: `ln β_r − E_r`.
    #[inline]
    pub fn log_weight(&self, range: usize) -> f64 {
        mathx::ln(self.width(range)) - self.energies[range]
    }

    /// Log normalizer of the allowed set (log-sum-exp of the weights).
    pub fn log_norm(&self) -> f64 {
        let mut max_lw = f64::NEG_INFINITY;
        for r in 0..self.len() {
            if self.allowed[r] {
                max_lw = max_lw.max(self.log_weight(r));
            }
        }
        let mut total = 0.0;
        for r in 0..self.len() {
            if self.allowed[r] {
                total += mathx::exp(self.log_weight(r) - max_lw);
            }
        }
        max_lw + mathx::ln(total)
    }

    /// Draws a range from the allowed set with probability `∝ β_r e^{−E_r}`.
    pub fn sample_range<R: Rng>(&self, rng: &mut R) -> usize {
        let mut max_lw = f64::NEG_INFINITY;
        for r in 0..self.len() {
            if self.allowed[r] {
                max_lw = max_lw.max(self.log_weight(r));
            }
        }
        let mut total = 0.0;
        for r in 0..self.len() {
            if self.allowed[r] {
                total += mathx::exp(self.log_weight(r) - max_lw);
            }
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = self.origin;
        for r in 0..self.len() {
            if self.allowed[r] {
                acc += mathx::exp(self.log_weight(r) - max_lw);
                last = r;
                if u < acc {
                    return r;
                }
            }
        }
        last
    }

    /// Draws `f` uniformly inside a range, redrawing on an exact endpoint
    /// hit or when any masked height would land exactly on zero.
    pub fn sample_perturbation<R: Rng>(
        &self,
        levelset: &LevelSet,
        mask: &Mask,
        range: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let lo = self.bounds[range];
        let hi = self.bounds[range + 1];
        for _ in 0..PERTURBATION_REDRAW_LIMIT {
            let f = lo + rng.random::<f64>() * (hi - lo);
            if f <= lo || f >= hi {
                continue;
            }
            if mask
                .pixels
                .iter()
                .any(|&p| levelset.height(p) + f == 0.0)
            {
                continue;
            }
            return Ok(f);
        }
        Err(Error::DegenerateState(
            "could not draw an interior perturbation",
        ))
    }

    /// Pixels that flip when moving from the zero-range to `range`, in the
    /// order the sweep flips them.
    pub fn flipped_pixels(&self, range: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if range > self.origin {
            for g in self.origin..range {
                out.extend_from_slice(&self.groups[g].pixels);
            }
        } else {
            for g in (range..self.origin).rev() {
                out.extend_from_slice(&self.groups[g].pixels);
            }
        }
        out
    }
}

/// Re-examines refused flips until none become permissible.
fn clear_violations(
    tc: &mut TopologyState,
    constraint: TopologyConstraint,
    violated: &mut Vec<(usize, usize)>,
    checks: &mut u64,
) -> Result<()> {
    loop {
        let mut progress = false;
        let mut i = 0;
        while i < violated.len() {
            let (x, y) = violated[i];
            let cls = tc.classify_flip(x, y)?;
            *checks += 1;
            if constraint.permits(&cls) {
                tc.apply_flip(x, y)?;
                violated.swap_remove(i);
                progress = true;
            } else {
                i += 1;
            }
        }
        if !progress {
            return Ok(());
        }
    }
}

/// Numerical log Metropolis–Hastings ratio of a mask-range move, from the
/// forward table and the reverse table built at the proposed state with the
/// same mask.
///
/// The reverse table is the forward table shifted by `−f`, so range `r` of
/// one aligns with range `r` of the other, the reverse zero-range is the
/// chosen forward range, and the return range is the forward zero-range.
/// In exact arithmetic the ratio is 0 for the unconstrained sampler; under
/// a topology constraint it measures the forward/reverse allowed-set
/// discrepancy. Assumes the two tables share their group structure (no
/// height collisions were created by the shift).
pub fn hastings_log_ratio(forward: &RangeTable, backward: &RangeTable) -> f64 {
    debug_assert_eq!(forward.group_count(), backward.group_count());
    -backward.energy(forward.origin()) + forward.log_norm() - backward.log_norm()
}

// ---------------------------------------------------------------------------
// The mask-range step.
// ---------------------------------------------------------------------------

fn gimh_core(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
    config: &SamplerConfig,
    constraint: TopologyConstraint,
    diagnose: bool,
) -> Result<(StepReport, Option<f64>)> {
    let mask = sample_mask(&state.levelset, config, &mut state.rng)?;
    let forward = RangeTable::build(
        &state.levelset,
        &mask,
        model,
        image,
        &state.topo,
        constraint,
        config.beta_inf,
        config.height_cap,
        &mut state.scratch,
    )?;
    let range = forward.sample_range(&mut state.rng);
    let f = forward.sample_perturbation(&state.levelset, &mask, range, &mut state.rng)?;

    let log_ratio = if diagnose {
        let mut proposed = state.levelset.clone();
        for &p in mask.pixels() {
            proposed.set_height(p, proposed.height(p) + f)?;
        }
        let proposed_topo = TopologyState::new(&proposed.labeling(), state.topo.pair());
        let backward = RangeTable::build(
            &proposed,
            &mask,
            model,
            image,
            &proposed_topo,
            constraint,
            config.beta_inf,
            config.height_cap,
            &mut state.scratch,
        )?;
        Some(hastings_log_ratio(&forward, &backward))
    } else {
        None
    };

    let w = state.levelset.heights().width();
    for p in forward.flipped_pixels(range) {
        state.topo.apply_flip(p % w, p / w)?;
    }
    for &p in mask.pixels() {
        let v = state.levelset.height(p) + f;
        state.levelset.set_height(p, v)?;
    }
    state.energy += forward.energy(range);
    state.iteration += 1;
    debug_assert_eq!(&state.levelset.labeling(), state.topo.labels());

    let report = StepReport {
        iteration: state.iteration,
        energy: state.energy,
        accepted: true,
        recorded: false,
        range_index: forward.signed_index(range),
        mask_radius: mask.radius(),
        constraint_checks: forward.constraint_checks(),
    };
    Ok((report, log_ratio))
}

/// One mask-range update. Every proposal is accepted; under a constraint
/// the proposal is drawn from the filtered table.
pub fn gimh_step(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
    config: &SamplerConfig,
    constraint: TopologyConstraint,
) -> Result<StepReport> {
    Ok(gimh_core(state, model, image, config, constraint, false)?.0)
}

/// [`gimh_step`] plus the numerical log Hastings ratio of the move it
/// applied (rebuilding the reverse table before applying).
pub fn gimh_step_checked(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
    config: &SamplerConfig,
    constraint: TopologyConstraint,
) -> Result<(StepReport, f64)> {
    let (report, ratio) = gimh_core(state, model, image, config, constraint, true)?;
    Ok((report, ratio.unwrap_or(0.0)))
}

// ---------------------------------------------------------------------------
// Gibbs baseline.
// ---------------------------------------------------------------------------

/// One heat-bath update of a uniformly random pixel: flip with probability
/// `1/(1 + e^{ΔE})`. A flipped pixel's height snaps to `±1/2`.
pub fn gibbs_step(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
) -> Result<StepReport> {
    let n = state.levelset.len();
    let w = state.levelset.heights().width();
    let i = state.rng.random_range(0..n);
    let (x, y) = (i % w, i / w);
    let delta = model.flip_delta(state.topo.labels(), image, x, y, &mut state.scratch);
    let p_flip = 1.0 / (1.0 + mathx::exp(delta));
    let accepted = state.rng.random::<f64>() < p_flip;
    if accepted {
        state.topo.apply_flip(x, y)?;
        let height = if state.topo.labels()[i] { 0.5 } else { -0.5 };
        state.levelset.set_height(i, height)?;
        state.energy += delta;
    }
    state.iteration += 1;
    Ok(StepReport {
        iteration: state.iteration,
        energy: state.energy,
        accepted,
        recorded: false,
        range_index: 0,
        mask_radius: 0.0,
        constraint_checks: 0,
    })
}

// ---------------------------------------------------------------------------
// BFPS baseline.
// ---------------------------------------------------------------------------

/// A standard normal variate by the Marsaglia polar method.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * mathx::sqrt(-2.0 * mathx::ln(s) / s);
        }
    }
}

/// Per-pixel candidate probabilities: `∝ α_c e^{−Δ_i} + (1 − α_c)`,
/// scaled so the mean is `gamma` (bisection on the scale, probabilities
/// clamped to `[0, 1]`).
fn candidate_probabilities(deltas: &[f64], alpha_c: f64, gamma: f64) -> Vec<f64> {
    let n = deltas.len() as f64;
    let weights: Vec<f64> = deltas
        .iter()
        .map(|&d| alpha_c * mathx::exp((-d).clamp(-50.0, 50.0)) + (1.0 - alpha_c))
        .collect();
    let mean_at = |s: f64| -> f64 {
        weights.iter().map(|&w| (s * w).min(1.0)).sum::<f64>() / n
    };
    let mut hi = 1.0;
    while mean_at(hi) < gamma && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    weights.iter().map(|&w| (s * w).clamp(0.0, 1.0)).collect()
}

/// Peak-normalized truncated Gaussian kernel taps, `h(0) = 1`.
fn kernel_taps(sigma: f64) -> (Vec<f64>, i64) {
    let reach = mathx::ceil(3.0 * sigma) as i64;
    let taps = (-reach..=reach)
        .map(|d| mathx::exp(-(d * d) as f64 / (2.0 * sigma * sigma)))
        .collect();
    (taps, reach)
}

/// Separable 2D convolution with zero padding outside the image.
fn convolve_separable(field: &Grid<f64>, taps: &[f64], reach: i64) -> Grid<f64> {
    let (w, h) = (field.width(), field.height());
    let mut rows = Grid::new(w, h, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                let sx = x as i64 + t as i64 - reach;
                if sx >= 0 && (sx as usize) < w {
                    acc += tap * field[(sx as usize, y)];
                }
            }
            rows[(x, y)] = acc;
        }
    }
    let mut out = Grid::new(w, h, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                let sy = y as i64 + t as i64 - reach;
                if sy >= 0 && (sy as usize) < h {
                    acc += tap * rows[(x, sy as usize)];
                }
            }
            out[(x, y)] = acc;
        }
    }
    out
}

struct BfpsProposal {
    heights: Grid<f64>,
    labeling: Labeling,
    delta_e: f64,
    log_fbr: f64,
}

fn bfps_propose(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
    config: &BfpsConfig,
) -> Result<BfpsProposal> {
    let n = state.levelset.len();
    let (w, h) = (
        state.levelset.heights().width(),
        state.levelset.heights().height(),
    );

    // Score every pixel against the current labeling.
    let mut deltas = vec![0.0f64; n];
    for i in 0..n {
        deltas[i] = model.flip_delta(state.topo.labels(), image, i % w, i / w, &mut state.scratch);
    }
    let signed_score = |i: usize, d: &[f64], fg: bool| if fg { d[i] } else { -d[i] };
    let probs = candidate_probabilities(&deltas, config.alpha_c, config.gamma);

    // Candidates and signed normal increments.
    let mut cand = vec![false; n];
    let mut noise = vec![0.0f64; n];
    for i in 0..n {
        cand[i] = state.rng.random::<f64>() < probs[i];
        let v = signed_score(i, &deltas, state.topo.labels()[i]);
        noise[i] = config.alpha_n * v + config.sigma * standard_normal(&mut state.rng);
    }

    // Smooth the masked increments into a perturbation field.
    let sigma_h = config.kernel_sigmas[state.rng.random_range(0..config.kernel_sigmas.len())];
    let (taps, reach) = kernel_taps(sigma_h);
    let mut impulses = Grid::new(w, h, 0.0f64);
    for i in 0..n {
        if cand[i] {
            impulses[i] = noise[i];
        }
    }
    let field = convolve_separable(&impulses, &taps, reach);

    // Proposed heights and labeling.
    let mut heights = state.levelset.heights().clone();
    let mut labeling = Grid::new(w, h, false);
    for i in 0..n {
        let mut v = heights[i] + field[i];
        if v == 0.0 {
            v = LevelSet::ZERO_NUDGE;
        }
        heights[i] = v;
        labeling[i] = v > 0.0;
    }
    let delta_e =
        model.total_energy(&labeling, image) - model.total_energy(state.topo.labels(), image);

    // Reverse-move densities: the return proposal keeps the candidate set
    // and negates the increments, scored against the proposed state.
    let mut rev_deltas = vec![0.0f64; n];
    for i in 0..n {
        rev_deltas[i] = model.flip_delta(&labeling, image, i % w, i / w, &mut state.scratch);
    }
    let rev_probs = candidate_probabilities(&rev_deltas, config.alpha_c, config.gamma);
    let mut log_fbr = 0.0;
    let two_var = 2.0 * config.sigma * config.sigma;
    for i in 0..n {
        if cand[i] {
            log_fbr += mathx::ln(rev_probs[i]) - mathx::ln(probs[i]);
        } else {
            log_fbr += mathx::ln(1.0 - rev_probs[i]) - mathx::ln(1.0 - probs[i]);
        }
        let mu_fwd = config.alpha_n * signed_score(i, &deltas, state.topo.labels()[i]);
        let mu_rev = config.alpha_n * signed_score(i, &rev_deltas, labeling[i]);
        let fwd_dev = noise[i] - mu_fwd;
        let rev_dev = -noise[i] - mu_rev;
        log_fbr += (fwd_dev * fwd_dev - rev_dev * rev_dev) / two_var;
    }

    Ok(BfpsProposal {
        heights,
        labeling,
        delta_e,
        log_fbr,
    })
}

/// One filtered-point-sampling update: a smoothed sparse global
/// perturbation, accepted by Metropolis–Hastings. A rejected step leaves
/// the state bit-identical.
pub fn bfps_step(
    state: &mut ChainState,
    model: &EnergyModel,
    image: &Image,
    config: &BfpsConfig,
) -> Result<StepReport> {
    let proposal = bfps_propose(state, model, image, config)?;
    let log_accept = -proposal.delta_e + proposal.log_fbr;
    let accepted = mathx::ln(state.rng.random::<f64>()) < log_accept;
    if accepted {
        let w = state.levelset.heights().width();
        for i in 0..state.levelset.len() {
            if state.topo.labels()[i] != proposal.labeling[i] {
                state.topo.apply_flip(i % w, i / w)?;
            }
        }
        for i in 0..state.levelset.len() {
            state.levelset.set_height(i, proposal.heights[i])?;
        }
        state.energy += proposal.delta_e;
        debug_assert_eq!(&state.levelset.labeling(), state.topo.labels());
    }
    state.iteration += 1;
    Ok(StepReport {
        iteration: state.iteration,
        energy: state.energy,
        accepted,
        recorded: false,
        range_index: 0,
        mask_radius: 0.0,
        constraint_checks: 0,
    })
}

// ---------------------------------------------------------------------------
// Chain runner.
// ---------------------------------------------------------------------------

/// Runs one chain to completion, invoking `observer` after every step.
///
/// The observer receives every step's report; `report.recorded` flags the
/// retained samples (past `burn_in`, every `thin`-th step). The state's
/// RNG drives everything, so equal seeds and options reproduce a chain
/// exactly.
pub fn run_chain<F>(
    mut state: ChainState,
    model: &EnergyModel,
    image: &Image,
    opts: &ChainOptions,
    mut observer: F,
) -> Result<ChainSummary>
where
    F: FnMut(&ChainState, &StepReport),
{
    opts.validate()?;
    image.grid().check_same_dims(state.levelset.heights())?;
    let initial_energy = state.energy;
    let mut best_energy = initial_energy;
    let mut accepted = 0u64;
    let mut recorded = 0u64;
    let first_iteration = state.iteration;
    for _ in 0..opts.iterations {
        let mut report = match opts.sampler {
            SamplerKind::Gimh => gimh_step(
                &mut state,
                model,
                image,
                &opts.config,
                TopologyConstraint::Unconstrained,
            )?,
            SamplerKind::TcGimh => gimh_step(
                &mut state,
                model,
                image,
                &opts.config,
                opts.config.constraint,
            )?,
            SamplerKind::Gibbs => gibbs_step(&mut state, model, image)?,
            SamplerKind::Bfps => bfps_step(&mut state, model, image, &opts.bfps)?,
        };
        if report.accepted {
            accepted += 1;
        }
        best_energy = best_energy.min(report.energy);
        let t = report.iteration - first_iteration;
        report.recorded = t > opts.burn_in && (t - opts.burn_in) % opts.thin == 0;
        if report.recorded {
            recorded += 1;
        }
        observer(&state, &report);
    }
    Ok(ChainSummary {
        iterations: opts.iterations,
        accepted,
        recorded,
        initial_energy,
        final_energy: state.energy,
        best_energy,
    })
}
