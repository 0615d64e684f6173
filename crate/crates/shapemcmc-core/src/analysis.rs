//! Marginal statistics and convergence summaries over segmentation chains.
//!
//! The samplers emit a stream of labelings; the types here reduce such
//! streams to per-pixel foreground marginals, quantile segmentations (the
//! marginal thresholded at a confidence level, so higher levels give
//! nested, more conservative foreground estimates), stacked quantile
//! overlays, and iterations-to-threshold convergence statistics for
//! comparing samplers on matched problems.

use alloc::vec::Vec;

use crate::grid::{Grid, Labeling};
use crate::{Error, Result};

/// Per-pixel foreground sample counts, mergeable across chains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistogramAccumulator {
    counts: Grid<u64>,
    total: u64,
}

impl HistogramAccumulator {
    /// An empty accumulator for a `width × height` grid.
    pub fn new(width: usize, height: usize) -> HistogramAccumulator {
        HistogramAccumulator {
            counts: Grid::new(width, height, 0),
            total: 0,
        }
    }

    /// Adds one labeling sample.
    pub fn accumulate(&mut self, labeling: &Labeling) -> Result<()> {
        self.counts.check_same_dims(labeling)?;
        for i in 0..labeling.len() {
            self.counts[i] += u64::from(labeling[i]);
        }
        self.total += 1;
        Ok(())
    }

    /// Adds another accumulator's samples (for multi-chain pooling).
    pub fn merge(&mut self, other: &HistogramAccumulator) -> Result<()> {
        self.counts.check_same_dims(&other.counts)?;
        for i in 0..self.counts.len() {
            self.counts[i] += other.counts[i];
        }
        self.total += other.total;
        Ok(())
    }

    /// Raw per-pixel foreground counts.
    #[inline(always)]
    pub fn counts(&self) -> &Grid<u64> {
        &self.counts
    }

    /// Number of accumulated samples.
    #[inline(always)]
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Per-pixel marginal foreground probabilities `count / total`.
    ///
    /// Errors with [`Error::EmptyAccumulator`] before any sample arrives.
    pub fn marginals(&self) -> Result<Grid<f64>> {
        if self.total == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let mut out = Grid::new(self.counts.width(), self.counts.height(), 0.0);
        for i in 0..out.len() {
            out[i] = self.counts[i] as f64 / self.total as f64;
        }
        Ok(out)
    }
}

/// The marginal segmentation at confidence `threshold`: pixels whose
/// foreground fraction is at least the threshold.
///
/// For thresholds `t₁ ≤ t₂` the segmentations nest,
/// `seg(t₂) ⊆ seg(t₁)`, since each pixel's fraction is fixed.
pub fn quantile_segmentation(acc: &HistogramAccumulator, threshold: f64) -> Result<Labeling> {
    if acc.total() == 0 {
        return Err(Error::EmptyAccumulator);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig("quantile threshold must lie in [0, 1]"));
    }
    let counts = acc.counts();
    let mut out = Grid::new(counts.width(), counts.height(), false);
    for i in 0..out.len() {
        out[i] = counts[i] as f64 / acc.total() as f64 >= threshold;
    }
    Ok(out)
}

/// Stacks quantile segmentations into one field: each pixel's value is the
/// fraction of the given thresholds it passes, so the overlay renders the
/// nested quantile contours in a single image.
pub fn quantile_overlay(acc: &HistogramAccumulator, thresholds: &[f64]) -> Result<Grid<f64>> {
    if acc.total() == 0 {
        return Err(Error::EmptyAccumulator);
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("quantile overlay needs at least one threshold"));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidConfig("quantile threshold must lie in [0, 1]"));
    }
    let counts = acc.counts();
    let mut out = Grid::new(counts.width(), counts.height(), 0.0);
    for i in 0..out.len() {
        let fraction = counts[i] as f64 / acc.total() as f64;
        let passed = thresholds.iter().filter(|&&t| fraction >= t).count();
        out[i] = passed as f64 / thresholds.len() as f64;
    }
    Ok(out)
}

/// One chain's energy history: the energy before the first step and after
/// every step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub initial_energy: f64,
    /// `energies[i]` is the energy after step `i + 1`.
    pub energies: Vec<f64>,
}

/// One chain's time-to-threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainConvergence {
    /// First 1-based iteration at or below the threshold; the chain length
    /// when censored.
    pub iterations_to_threshold: u64,
    /// True when the chain never reached the threshold.
    pub censored: bool,
}

/// Convergence summary across matched chains.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStats {
    /// The energy level chains must reach.
    pub threshold: f64,
    /// Per-chain results, in input order.
    pub per_chain: Vec<ChainConvergence>,
    /// Median (lower-middle order statistic) of the per-chain iteration
    /// counts, censored values included at their caps.
    pub median_iterations: u64,
    /// Number of censored chains.
    pub censored_chains: usize,
}

/// Computes iterations-to-threshold statistics over a set of chains.
///
/// The threshold interpolates between the lowest energy any chain reached
/// and the median initial energy: `best + fraction · (median_init − best)`,
/// so `fraction = 0.01` asks each chain to close 99% of the gap. Chains
/// that never reach it count as censored at their own length.
pub fn convergence_stats(traces: &[ChainTrace], fraction: f64) -> Result<ConvergenceStats> {
    if traces.is_empty() {
        return Err(Error::InvalidConfig("convergence statistics need at least one chain"));
    }
    if traces.iter().any(|t| t.energies.is_empty()) {
        return Err(Error::InvalidConfig("every chain trace needs at least one step"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig("convergence fraction must lie in [0, 1]"));
    }

    let mut initials: Vec<f64> = traces.iter().map(|t| t.initial_energy).collect();
    initials.sort_unstable_by(f64::total_cmp);
    let median_initial = initials[(initials.len() - 1) / 2];
    let best = traces
        .iter()
        .flat_map(|t| t.energies.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let threshold = best + fraction * (median_initial - best);

    let per_chain: Vec<ChainConvergence> = traces
        .iter()
        .map(|t| {
            match t.energies.iter().position(|&e| e <= threshold) {
                Some(i) => ChainConvergence {
                    iterations_to_threshold: i as u64 + 1,
                    censored: false,
                },
                None => ChainConvergence {
                    iterations_to_threshold: t.energies.len() as u64,
                    censored: true,
                },
            }
        })
        .collect();

    let mut iters: Vec<u64> = per_chain.iter().map(|c| c.iterations_to_threshold).collect();
    iters.sort_unstable();
    let median_iterations = iters[(iters.len() - 1) / 2];
    let censored_chains = per_chain.iter().filter(|c| c.censored).count();

    Ok(ConvergenceStats {
        threshold,
        per_chain,
        median_iterations,
        censored_chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labeling_from_rows(rows: &[&str]) -> Labeling {
        let h = rows.len();
        let w = rows[0].len();
        let mut out = Grid::new(w, h, false);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                out[(x, y)] = ch == '#';
            }
        }
        out
    }

    #[test]
    fn accumulator_counts_and_marginals() {
        let mut acc = HistogramAccumulator::new(2, 2);
        assert_eq!(acc.marginals(), Err(Error::EmptyAccumulator));
        acc.accumulate(&labeling_from_rows(&["#.", ".."])).unwrap();
        acc.accumulate(&labeling_from_rows(&["##", ".."])).unwrap();
        acc.accumulate(&labeling_from_rows(&["#.", ".#"])).unwrap();
        assert_eq!(acc.total(), 3);
        assert_eq!(acc.counts().as_slice(), &[3, 1, 0, 1]);
        let m = acc.marginals().unwrap();
        assert_eq!(m.as_slice(), &[1.0, 1.0 / 3.0, 0.0, 1.0 / 3.0]);

        let wrong = labeling_from_rows(&["#.."]);
        assert!(acc.accumulate(&wrong).is_err());
    }

    #[test]
    fn merge_pools_counts() {
        let sample = labeling_from_rows(&["#.", ".#"]);
        let mut a = HistogramAccumulator::new(2, 2);
        let mut b = HistogramAccumulator::new(2, 2);
        a.accumulate(&sample).unwrap();
        b.accumulate(&sample).unwrap();
        b.accumulate(&labeling_from_rows(&["..", "##"])).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 3);
        assert_eq!(a.counts().as_slice(), &[2, 0, 1, 3]);

        let mut wrong = HistogramAccumulator::new(3, 1);
        assert!(wrong.merge(&a).is_err());
    }

    #[test]
    fn quantile_segmentation_thresholds_fractions() {
        let mut acc = HistogramAccumulator::new(2, 1);
        acc.accumulate(&labeling_from_rows(&["#."])).unwrap();
        acc.accumulate(&labeling_from_rows(&["#."])).unwrap();
        acc.accumulate(&labeling_from_rows(&["##"])).unwrap();
        acc.accumulate(&labeling_from_rows(&[".."])).unwrap();
        // Fractions: 3/4 and 1/4.
        let seg = quantile_segmentation(&acc, 0.5).unwrap();
        assert_eq!(seg.as_slice(), &[true, false]);
        let all = quantile_segmentation(&acc, 0.0).unwrap();
        assert_eq!(all.as_slice(), &[true, true]);
        let strict = quantile_segmentation(&acc, 1.0).unwrap();
        assert_eq!(strict.as_slice(), &[false, false]);
        assert!(quantile_segmentation(&acc, 1.5).is_err());
    }

    #[test]
    fn quantile_segmentations_nest() {
        // Random-ish fractions; nesting must hold for every threshold pair.
        let mut acc = HistogramAccumulator::new(4, 3);
        let samples = [
            ["####", "##..", "...."],
            ["##..", "##..", ".#.."],
            ["#.#.", "....", ".##."],
            ["####", "#...", "..#."],
            ["#...", "##..", ".##."],
        ];
        for s in &samples {
            acc.accumulate(&labeling_from_rows(s)).unwrap();
        }
        let thresholds = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];
        for (a, ta) in thresholds.iter().enumerate() {
            for tb in &thresholds[a..] {
                let loose = quantile_segmentation(&acc, *ta).unwrap();
                let tight = quantile_segmentation(&acc, *tb).unwrap();
                for i in 0..loose.len() {
                    assert!(!tight[i] || loose[i], "nesting violated at {i}");
                }
            }
        }
    }

    #[test]
    fn overlay_averages_the_indicator_stack() {
        let mut acc = HistogramAccumulator::new(3, 1);
        acc.accumulate(&labeling_from_rows(&["#.#"])).unwrap();
        acc.accumulate(&labeling_from_rows(&["##."])).unwrap();
        acc.accumulate(&labeling_from_rows(&["#.."])).unwrap();
        let thresholds = [0.25, 0.5, 0.9];
        let overlay = quantile_overlay(&acc, &thresholds).unwrap();
        for i in 0..overlay.len() {
            let mut expect = 0.0;
            for t in &thresholds {
                if quantile_segmentation(&acc, *t).unwrap()[i] {
                    expect += 1.0 / thresholds.len() as f64;
                }
            }
            assert_eq!(overlay[i], expect);
        }
        assert!(quantile_overlay(&acc, &[]).is_err());
    }

    #[test]
    fn convergence_stats_threshold_and_censoring() {
        // Three chains from initial energy 100, best reached 0:
        // threshold = 0 + 0.1 · (100 − 0) = 10.
        let fast = ChainTrace {
            initial_energy: 100.0,
            energies: vec![50.0, 9.0, 5.0, 0.0],
        };
        let slow = ChainTrace {
            initial_energy: 100.0,
            energies: vec![80.0, 60.0, 40.0, 10.0],
        };
        let stuck = ChainTrace {
            initial_energy: 100.0,
            energies: vec![90.0, 85.0, 84.0, 83.0],
        };
        let stats = convergence_stats(&[fast, slow, stuck], 0.1).unwrap();
        assert_eq!(stats.threshold, 10.0);
        assert_eq!(
            stats.per_chain,
            vec![
                ChainConvergence { iterations_to_threshold: 2, censored: false },
                ChainConvergence { iterations_to_threshold: 4, censored: false },
                ChainConvergence { iterations_to_threshold: 4, censored: true },
            ]
        );
        assert_eq!(stats.median_iterations, 4);
        assert_eq!(stats.censored_chains, 1);
    }

    #[test]
    fn convergence_stats_median_uses_lower_middle() {
        let mk = |energies: Vec<f64>| ChainTrace {
            initial_energy: 10.0,
            energies,
        };
        // Threshold = 0 + 0.5·(10 − 0) = 5; hits at iterations 1, 2, 3, 4.
        let stats = convergence_stats(
            &[
                mk(vec![4.0, 0.0]),
                mk(vec![6.0, 4.0, 0.0]),
                mk(vec![6.0, 6.0, 4.0, 0.0]),
                mk(vec![6.0, 6.0, 6.0, 4.0, 0.0]),
            ],
            0.5,
        )
        .unwrap();
        let iters: Vec<u64> = stats
            .per_chain
            .iter()
            .map(|c| c.iterations_to_threshold)
            .collect();
        assert_eq!(iters, vec![1, 2, 3, 4]);
        // Even count: the lower of the two middle values.
        assert_eq!(stats.median_iterations, 2);
        assert!(convergence_stats(&[], 0.5).is_err());
    }
}
