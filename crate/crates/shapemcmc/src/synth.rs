//! Synthetic benchmark images: piecewise-constant shapes plus Gaussian
//! noise.
//!
//! All test imagery is generated, not loaded: a binary ground-truth shape
//! is rasterized, foreground pixels get intensity 0.75 and background 0.25,
//! and i.i.d. Gaussian noise of a chosen standard deviation is added and
//! clamped back to `[0, 1]`.
//!
//! With the level separation of 0.5, noise `σ = 0.5` puts the per-pixel
//! Bayes error at `Φ(−0.5) ≈ 0.31` (the clamp tightens this slightly) —
//! the "low SNR" regime the convergence benchmark runs in, hard enough
//! that single-site samplers visibly struggle.
//!
//! Shapes are defined in continuous coordinates scaled to the grid and
//! rasterized by pixel-center membership, so the same shape name produces
//! consistent geometry at any resolution. The annulus is the topology
//! benchmark: its ground truth has exactly one foreground component with
//! exactly one handle.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapemcmc_core::grid::{Grid, Image, Labeling};
use shapemcmc_core::sampler::standard_normal;

use crate::error::{CliError, CliResult};

/// Foreground intensity of the noiseless image.
pub const FG_LEVEL: f64 = 0.75;
/// Background intensity of the noiseless image.
pub const BG_LEVEL: f64 = 0.25;

/// The synthetic shape families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// One filled disk: simply connected, the convergence benchmark.
    Disk,
    /// A ring: one component, one handle — the topology benchmark.
    Annulus,
    /// Two disjoint disks: two components, no handles.
    TwoBlobs,
    /// Head-torso-legs blob: one component with concavities and a thin
    /// gap between the legs, a stand-in for silhouette photographs.
    PersonSilhouetteLike,
}

impl Shape {
    /// All shapes, for help texts and exhaustive tests.
    pub const ALL: [Shape; 4] = [
        Shape::Disk,
        Shape::Annulus,
        Shape::TwoBlobs,
        Shape::PersonSilhouetteLike,
    ];

    /// The CLI/config-file name.
    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Annulus => "annulus",
            Shape::TwoBlobs => "two_blobs",
            Shape::PersonSilhouetteLike => "person_silhouette_like",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Shape> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown shape '{s}'; expected one of: disk, annulus, two_blobs, \
                     person_silhouette_like"
                ))
            })
    }
}

/// Squared distance from a pixel center to a point in continuous
/// coordinates.
fn dist2(x: usize, y: usize, cx: f64, cy: f64) -> f64 {
    let dx = x as f64 + 0.5 - cx;
    let dy = y as f64 + 0.5 - cy;
    dx * dx + dy * dy
}

/// Rasterizes a shape's ground-truth labeling on a `width × height` grid.
pub fn ground_truth(shape: Shape, width: usize, height: usize) -> Labeling {
    let w = width as f64;
    let h = height as f64;
    let m = w.min(h);
    let mut out = Labeling::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let fg = match shape {
                Shape::Disk => dist2(x, y, 0.5 * w, 0.5 * h) <= (0.30 * m).powi(2),
                Shape::Annulus => {
                    let d2 = dist2(x, y, 0.5 * w, 0.5 * h);
                    d2 <= (0.38 * m).powi(2) && d2 > (0.19 * m).powi(2)
                }
                Shape::TwoBlobs => {
                    dist2(x, y, 0.30 * w, 0.35 * h) <= (0.18 * m).powi(2)
                        || dist2(x, y, 0.70 * w, 0.65 * h) <= (0.18 * m).powi(2)
                }
                Shape::PersonSilhouetteLike => {
                    // Head.
                    let head = dist2(x, y, 0.5 * w, 0.22 * h) <= (0.10 * m).powi(2);
                    // Torso: axis-aligned ellipse.
                    let tx = (x as f64 + 0.5 - 0.5 * w) / (0.16 * w);
                    let ty = (y as f64 + 0.5 - 0.45 * h) / (0.18 * h);
                    let torso = tx * tx + ty * ty <= 1.0;
                    // Legs: two vertical bars below the torso.
                    let px = (x as f64 + 0.5) / w;
                    let py = (y as f64 + 0.5) / h;
                    let leg = (0.40..0.47).contains(&px) || (0.53..0.60).contains(&px);
                    let legs = leg && (0.55..0.88).contains(&py);
                    head || torso || legs
                }
            };
            out[(x, y)] = fg;
        }
    }
    out
}

/// Renders a labeling as a noisy two-level image: foreground 0.75,
/// background 0.25, plus `σ·N(0,1)` per pixel, clamped to `[0, 1]`.
/// Deterministic in `seed`.
pub fn synth_image(truth: &Labeling, sigma: f64, seed: u64) -> CliResult<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!(
            "noise sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = Grid::new(truth.width(), truth.height(), 0.0);
    for i in 0..truth.len() {
        let level = if truth.as_slice()[i] { FG_LEVEL } else { BG_LEVEL };
        let value = level + sigma * standard_normal(&mut rng);
        grid.as_mut_slice()[i] = value.clamp(0.0, 1.0);
    }
    Image::new(grid).map_err(CliError::from_core)
}

/// Maximum radius, as a fraction of the short grid side, of the random
/// initialization circles.
const INIT_RADIUS_FRACTION: f64 = 0.3;

/// A disk labeling clipped to the grid.
fn disk_labeling(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> Labeling {
    let mut out = Labeling::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            out[(x, y)] = dist2(x, y, cx, cy) <= radius * radius;
        }
    }
    out
}

/// "Random Init": a random circle placed anywhere in the image. The center
/// pixel always belongs to the disk, so the labeling is never empty.
pub fn random_circle_anywhere<R: Rng>(width: usize, height: usize, rng: &mut R) -> Labeling {
    let cx = rng.random_range(0..width) as f64 + 0.5;
    let cy = rng.random_range(0..height) as f64 + 0.5;
    let max_r = (INIT_RADIUS_FRACTION * width.min(height) as f64).max(1.0);
    let radius = 1.0 + rng.random::<f64>() * (max_r - 1.0).max(0.0);
    disk_labeling(width, height, cx, cy, radius)
}

/// "FG Init": a random circle inside the supplied ground-truth foreground.
///
/// Centers are drawn among ground-truth foreground pixels and the radius
/// uniformly up to [`INIT_RADIUS_FRACTION`] of the short side; a draw is
/// accepted when the whole disk lies inside the foreground. If no draw
/// fits (thin shapes), the circle degenerates to the radius-1 disk around
/// a foreground pixel, intersected with the foreground — never empty.
pub fn random_circle_inside<R: Rng>(truth: &Labeling, rng: &mut R) -> CliResult<Labeling> {
    let fg: Vec<usize> = (0..truth.len()).filter(|&i| truth.as_slice()[i]).collect();
    if fg.is_empty() {
        return Err(CliError::Degenerate(
            "ground truth has no foreground pixels to initialize inside".to_string(),
        ));
    }
    let (width, height) = (truth.width(), truth.height());
    let max_r = (INIT_RADIUS_FRACTION * width.min(height) as f64).max(1.0);
    for _ in 0..200 {
        let center = fg[rng.random_range(0..fg.len())];
        let (cx, cy) = truth.xy(center);
        let radius = 1.0 + rng.random::<f64>() * (max_r - 1.0).max(0.0);
        let disk = disk_labeling(width, height, cx as f64 + 0.5, cy as f64 + 0.5, radius);
        let inside = (0..disk.len()).all(|i| !disk.as_slice()[i] || truth.as_slice()[i]);
        if inside {
            return Ok(disk);
        }
    }
    let center = fg[rng.random_range(0..fg.len())];
    let (cx, cy) = truth.xy(center);
    let mut disk = disk_labeling(width, height, cx as f64 + 0.5, cy as f64 + 0.5, 1.0);
    for i in 0..disk.len() {
        let keep = disk.as_slice()[i] && truth.as_slice()[i];
        disk.as_mut_slice()[i] = keep;
    }
    Ok(disk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use shapemcmc_core::grid::{count_handles, label_components, ConnectivityPair};

    #[test]
    fn noiseless_disk_has_exactly_two_intensities() {
        let truth = ground_truth(Shape::Disk, 32, 32);
        let image = synth_image(&truth, 0.0, 5).unwrap();
        let mut values: Vec<f64> = image.grid().as_slice().to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        assert_eq!(values, vec![BG_LEVEL, FG_LEVEL]);
    }

    #[test]
    fn annulus_truth_has_one_component_and_one_handle() {
        for size in [16, 24, 64] {
            let truth = ground_truth(Shape::Annulus, size, size);
            let labels = label_components(&truth, ConnectivityPair::FOUR_EIGHT);
            let handles = count_handles(&truth, ConnectivityPair::FOUR_EIGHT);
            assert_eq!(labels.fg_count, 1, "size {size}");
            assert_eq!(handles.total, 1, "size {size}");
        }
    }

    #[test]
    fn two_blobs_truth_has_two_components_and_no_handles() {
        let truth = ground_truth(Shape::TwoBlobs, 48, 48);
        let labels = label_components(&truth, ConnectivityPair::FOUR_EIGHT);
        let handles = count_handles(&truth, ConnectivityPair::FOUR_EIGHT);
        assert_eq!(labels.fg_count, 2);
        assert_eq!(handles.total, 0);
    }

    #[test]
    fn silhouette_truth_is_nonempty_and_off_border() {
        let truth = ground_truth(Shape::PersonSilhouetteLike, 64, 64);
        assert!(truth.foreground_count() > 0);
        for y in 0..64 {
            for x in 0..64 {
                if truth.on_border(x, y) {
                    assert!(!truth[(x, y)], "foreground touches border at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn noise_is_seed_deterministic_and_clamped() {
        let truth = ground_truth(Shape::Disk, 16, 16);
        let a = synth_image(&truth, 2.0, 9).unwrap();
        let b = synth_image(&truth, 2.0, 9).unwrap();
        let c = synth_image(&truth, 2.0, 10).unwrap();
        assert_eq!(a.grid(), b.grid());
        assert_ne!(a.grid(), c.grid());
        for &v in a.grid().as_slice() {
            assert!((0.0..=1.0).contains(&v));
        }
        // σ = 2 against a level gap of 0.5 drives many samples into the
        // clamp; both rails must actually occur.
        assert!(a.grid().as_slice().iter().any(|&v| v == 0.0));
        assert!(a.grid().as_slice().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn shape_names_round_trip() {
        for shape in Shape::ALL {
            assert_eq!(shape.name().parse::<Shape>().unwrap(), shape);
        }
        assert!("blob".parse::<Shape>().is_err());
    }

    #[test]
    fn fg_init_stays_inside_the_truth() {
        let truth = ground_truth(Shape::Annulus, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let init = random_circle_inside(&truth, &mut rng).unwrap();
            assert!(init.foreground_count() > 0);
            for i in 0..init.len() {
                assert!(!init.as_slice()[i] || truth.as_slice()[i]);
            }
        }
    }

    #[test]
    fn random_init_is_nonempty_anywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let init = random_circle_anywhere(20, 12, &mut rng);
            assert!(init.foreground_count() > 0);
        }
    }
}
