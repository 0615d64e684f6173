//! 2D containers and the segmentation state they carry.
//!
//! A segmentation lives on a rectangular pixel grid in row-major order
//! (`index = y * width + x`). Three views of the same grid matter here:
//!
//! * [`Image`] — observed intensities in `[0, 1]`;
//! * [`Labeling`] — a binary foreground/background partition (`true` =
//!   foreground);
//! * [`LevelSet`] — real-valued heights `φ` whose sign encodes the
//!   labeling (`φ > 0` = foreground). Heights are kept away from exactly
//!   zero so the sign is always well defined.
//!
//! Connectivity follows the standard digital-topology convention: the
//! foreground and background must use *complementary* adjacencies — (4, 8)
//! or (8, 4) — so that Jordan-curve reasoning holds on the discrete grid
//! (Kong & Rosenfeld, CVGIP 1989). Connected components are labeled with a
//! *virtual background frame*: every background pixel on the image border
//! is considered adjacent to an unbounded outside region, so all
//! border-touching background merges into a single outside component, and
//! the remaining interior background components are exactly the holes
//! (handles) of the foreground.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A rectangular row-major grid of values.
///
/// Indexing is available both by linear index (`grid[i]`) and by coordinate
/// pair (`grid[(x, y)]`). Out-of-range indexing panics, as with slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    /// Creates a `width × height` grid filled with `value`.
    ///
    /// # Panics
    ///
    /// Panics if either dimension is zero.
    pub fn new(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing row-major buffer.
    ///
    /// Errors with [`Error::DimensionMismatch`] if `data.len()` is not
    /// `width * height` or either dimension is zero.
    pub fn from_raw(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    /// Grid width in pixels.
    #[inline(always)]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Grid height in pixels.
    #[inline(always)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Total number of pixels.
    #[inline(always)]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the grid holds no pixels (never, by construction).
    #[inline(always)]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear index of `(x, y)`.
    #[inline(always)]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Coordinates of linear index `i`.
    #[inline(always)]
    pub fn xy(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// True when the signed coordinates fall inside the grid.
    #[inline(always)]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Whether `(x, y)` lies on the image border.
    #[inline(always)]
    pub fn on_border(&self, x: usize, y: usize) -> bool {
        x == 0 || y == 0 || x == self.width - 1 || y == self.height - 1
    }

    /// Read-only view of the row-major buffer.
    #[inline(always)]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Mutable view of the row-major buffer.
    #[inline(always)]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Checks that another grid has the same dimensions.
    pub fn check_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        Ok(())
    }
}

impl<T> core::ops::Index<usize> for Grid<T> {
    type Output = T;
    #[inline(always)]
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> core::ops::IndexMut<usize> for Grid<T> {
    #[inline(always)]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

impl<T> core::ops::Index<(usize, usize)> for Grid<T> {
    type Output = T;
    #[inline(always)]
    fn index(&self, (x, y): (usize, usize)) -> &T {
        &self.data[y * self.width + x]
    }
}

impl<T> core::ops::IndexMut<(usize, usize)> for Grid<T> {
    #[inline(always)]
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        &mut self.data[y * self.width + x]
    }
}

/// A binary segmentation: `true` = foreground, `false` = background.
pub type Labeling = Grid<bool>;

impl Grid<bool> {
    /// Number of foreground pixels.
    pub fn foreground_count(&self) -> usize {
        self.as_slice().iter().filter(|&&b| b).count()
    }
}

/// An observed image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: Grid<f64>,
}

impl Image {
    /// Validates intensities: every value must be finite and in `[0, 1]`.
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        for (i, &v) in grid.as_slice().iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidIntensity { index: i, value: v });
            }
        }
        Ok(Image { grid })
    }

    /// The underlying intensity grid.
    #[inline(always)]
    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    /// Intensity at linear index `i`.
    #[inline(always)]
    pub fn intensity(&self, i: usize) -> f64 {
        self.grid[i]
    }
}

impl core::ops::Deref for Image {
    type Target = Grid<f64>;
    fn deref(&self) -> &Grid<f64> {
        &self.grid
    }
}

/// Pixel adjacency: 4-connected (edge neighbors) or 8-connected (edge and
/// corner neighbors).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Adjacency {
    Four,
    Eight,
}

/// Neighbor offsets for the 4-adjacency.
pub const OFFSETS_4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Neighbor offsets for the 8-adjacency.
pub const OFFSETS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl Adjacency {
    /// The neighbor offsets for this adjacency.
    #[inline(always)]
    pub fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Adjacency::Four => &OFFSETS_4,
            Adjacency::Eight => &OFFSETS_8,
        }
    }
}

/// Complementary adjacencies for foreground and background.
///
/// Only (4, 8) and (8, 4) are constructible; same-adjacency pairs break
/// digital Jordan-curve duality and are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConnectivityPair {
    fg: Adjacency,
    bg: Adjacency,
}

impl ConnectivityPair {
    /// 4-connected foreground, 8-connected background (the default).
    pub const FOUR_EIGHT: ConnectivityPair = ConnectivityPair {
        fg: Adjacency::Four,
        bg: Adjacency::Eight,
    };

    /// 8-connected foreground, 4-connected background.
    pub const EIGHT_FOUR: ConnectivityPair = ConnectivityPair {
        fg: Adjacency::Eight,
        bg: Adjacency::Four,
    };

    /// Builds a pair, rejecting non-complementary combinations.
    pub fn new(fg: Adjacency, bg: Adjacency) -> Result<Self> {
        if fg == bg {
            return Err(Error::InvalidConfig(
                "foreground and background adjacencies must be complementary",
            ));
        }
        Ok(ConnectivityPair { fg, bg })
    }

    /// Foreground adjacency.
    #[inline(always)]
    pub fn fg(self) -> Adjacency {
        self.fg
    }

    /// Background adjacency.
    #[inline(always)]
    pub fn bg(self) -> Adjacency {
        self.bg
    }

    /// Adjacency of the given phase (`true` = foreground).
    #[inline(always)]
    pub fn phase(self, foreground: bool) -> Adjacency {
        if foreground {
            self.fg
        } else {
            self.bg
        }
    }
}

impl Default for ConnectivityPair {
    fn default() -> Self {
        ConnectivityPair::FOUR_EIGHT
    }
}

/// Connected-component labels for both phases of a segmentation.
///
/// Labels are 1-based and dense per phase; `0` marks "pixel not in this
/// phase". Foreground labels are assigned in row-major order of each
/// component's first pixel. For the background, the component merged with
/// the virtual outside frame (if any background pixel touches the image
/// border) is always label 1 and is recorded in `border_bg_label`;
/// remaining interior background components follow in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabels {
    /// Per-pixel foreground component label (`0` for background pixels).
    pub fg_labels: Grid<u32>,
    /// Per-pixel background component label (`0` for foreground pixels).
    pub bg_labels: Grid<u32>,
    /// Number of foreground components.
    pub fg_count: usize,
    /// Number of background components (counting the frame component iff it
    /// contains at least one pixel).
    pub bg_count: usize,
    /// Label of the background component connected to the virtual frame.
    pub border_bg_label: Option<u32>,
}

/// Labels connected components of both phases.
///
/// Background components are computed with the virtual outside frame: all
/// border-touching background pixels belong to one component. Foreground
/// never connects through the frame.
pub fn label_components(labeling: &Labeling, pair: ConnectivityPair) -> ComponentLabels {
    let (w, h) = (labeling.width(), labeling.height());
    let mut fg_labels = Grid::new(w, h, 0u32);
    let mut bg_labels = Grid::new(w, h, 0u32);
    let mut queue: VecDeque<usize> = VecDeque::new();

    // Background first: one multi-source flood from every border background
    // pixel (they are all connected through the virtual frame), then a
    // row-major scan for interior components.
    let mut bg_count = 0u32;
    let mut border_bg_label = None;
    for y in 0..h {
        for x in 0..w {
            if labeling.on_border(x, y) && !labeling[(x, y)] && bg_labels[(x, y)] == 0 {
                if border_bg_label.is_none() {
                    bg_count = 1;
                    border_bg_label = Some(1);
                }
                bg_labels[(x, y)] = 1;
                queue.push_back(labeling.idx(x, y));
            }
        }
    }
    flood(labeling, false, pair.bg(), &mut bg_labels, &mut queue, 1);
    for i in 0..labeling.len() {
        if !labeling[i] && bg_labels[i] == 0 {
            bg_count += 1;
            bg_labels[i] = bg_count;
            queue.push_back(i);
            flood(labeling, false, pair.bg(), &mut bg_labels, &mut queue, bg_count);
        }
    }

    let mut fg_count = 0u32;
    for i in 0..labeling.len() {
        if labeling[i] && fg_labels[i] == 0 {
            fg_count += 1;
            fg_labels[i] = fg_count;
            queue.push_back(i);
            flood(labeling, true, pair.fg(), &mut fg_labels, &mut queue, fg_count);
        }
    }

    ComponentLabels {
        fg_labels,
        bg_labels,
        fg_count: fg_count as usize,
        bg_count: bg_count as usize,
        border_bg_label,
    }
}

/// Breadth-first flood of one phase from the queued seeds.
fn flood(
    labeling: &Labeling,
    phase: bool,
    adj: Adjacency,
    labels: &mut Grid<u32>,
    queue: &mut VecDeque<usize>,
    label: u32,
) {
    let (w, h) = (labeling.width(), labeling.height());
    while let Some(i) = queue.pop_front() {
        let (x, y) = labeling.xy(i);
        for &(dx, dy) in adj.offsets() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if !labeling.in_bounds(nx, ny) {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let ni = ny * w + nx;
            let _ = h;
            if labeling[ni] == phase && labels[ni] == 0 {
                labels[ni] = label;
                queue.push_back(ni);
            }
        }
    }
}

/// Handle (genus) counts for a segmentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandleCount {
    /// Total number of handles over the whole grid.
    pub total: usize,
    /// Handles per foreground component, indexed by `fg label - 1`.
    pub per_component: Vec<usize>,
}

/// Counts handles: interior background components, attributed to the
/// foreground component that encloses them.
///
/// A handle of the foreground is a background component that does not touch
/// the virtual outside frame. It is attributed to the component of the
/// pixel immediately left of the hole's first pixel in row-major order;
/// with complementary adjacencies that pixel always belongs to the
/// innermost enclosing foreground component.
pub fn count_handles(labeling: &Labeling, pair: ConnectivityPair) -> HandleCount {
    let labels = label_components(labeling, pair);
    count_handles_from(labeling, &labels)
}

/// [`count_handles`] on precomputed component labels.
pub fn count_handles_from(labeling: &Labeling, labels: &ComponentLabels) -> HandleCount {
    let mut per_component = vec![0usize; labels.fg_count];
    let mut seen = vec![false; labels.bg_count + 1];
    let mut total = 0;
    for i in 0..labeling.len() {
        let bl = labels.bg_labels[i];
        if bl == 0 || seen[bl as usize] || Some(bl) == labels.border_bg_label {
            continue;
        }
        seen[bl as usize] = true;
        total += 1;
        // First (row-major) pixel of an interior hole cannot sit at x = 0,
        // since that would put it on the border and in the frame component.
        let (x, y) = labeling.xy(i);
        debug_assert!(x > 0, "interior hole pixel on the border");
        let owner = labels.fg_labels[(x - 1, y)];
        debug_assert!(owner > 0, "pixel left of a hole's first pixel must be foreground");
        per_component[(owner - 1) as usize] += 1;
    }
    HandleCount {
        total,
        per_component,
    }
}

/// A level-set function: per-pixel heights whose sign is the segmentation.
///
/// Invariant: every height is finite and nonzero, so `φ > 0` (foreground)
/// versus `φ < 0` (background) is always decidable. Any operation that
/// would produce an exact zero stores `+ZERO_NUDGE` instead.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSet {
    heights: Grid<f64>,
}

impl LevelSet {
    /// Replacement value for heights that would land exactly on zero.
    pub const ZERO_NUDGE: f64 = 1e-12;

    /// Wraps a height field, nudging exact zeros to `+ZERO_NUDGE`.
    ///
    /// Errors with [`Error::InvalidHeight`] on non-finite values.
    pub fn from_heights(mut heights: Grid<f64>) -> Result<Self> {
        for (i, v) in heights.as_mut_slice().iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidHeight {
                    index: i,
                    value: *v,
                });
            }
            if *v == 0.0 {
                *v = Self::ZERO_NUDGE;
            }
        }
        Ok(LevelSet { heights })
    }

    /// The height field.
    #[inline(always)]
    pub fn heights(&self) -> &Grid<f64> {
        &self.heights
    }

    /// Height at linear index `i`.
    #[inline(always)]
    pub fn height(&self, i: usize) -> f64 {
        self.heights[i]
    }

    /// Number of pixels.
    #[inline(always)]
    pub fn len(&self) -> usize {
        self.heights.len()
    }

    /// True when the grid holds no pixels (never, by construction).
    #[inline(always)]
    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Sets the height at `i`, nudging an exact zero to `+ZERO_NUDGE`.
    ///
    /// Errors with [`Error::InvalidHeight`] on non-finite values.
    pub fn set_height(&mut self, i: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidHeight { index: i, value });
        }
        self.heights[i] = if value == 0.0 { LevelSet::ZERO_NUDGE } else { value };
        Ok(())
    }

    /// Whether pixel `i` is foreground (`φ > 0`).
    #[inline(always)]
    pub fn is_foreground(&self, i: usize) -> bool {
        self.heights[i] > 0.0
    }

    /// Extracts the sign labeling.
    pub fn labeling(&self) -> Labeling {
        let mut out = Grid::new(self.heights.width(), self.heights.height(), false);
        for i in 0..self.heights.len() {
            out[i] = self.heights[i] > 0.0;
        }
        out
    }
}

/// Builds a level set from a labeling with heights `±c/2`.
///
/// `c` is the characteristic height scale of the sampler; foreground pixels
/// get `+c/2`, background pixels `-c/2`.
///
/// # Panics
///
/// Panics unless `c > 0` and finite.
pub fn init_levelset(labeling: &Labeling, c: f64) -> LevelSet {
    assert!(c > 0.0 && c.is_finite(), "height scale must be positive");
    let mut heights = Grid::new(labeling.width(), labeling.height(), 0.0f64);
    for i in 0..labeling.len() {
        heights[i] = if labeling[i] { c / 2.0 } else { -c / 2.0 };
    }
    LevelSet { heights }
}
