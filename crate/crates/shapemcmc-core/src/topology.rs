//! Digital topology of pixel flips.
//!
//! The samplers need to know, for any single pixel flip, how the topology
//! of the segmentation changes: does the flip create, destroy, split, or
//! merge a region, or open or close a handle? Locally this is governed by
//! the *topological numbers* of the punctured 3×3 neighborhood (Bertrand &
//! Malandain, Pattern Recognition Letters 1994): `T_n` counts the
//! foreground components in the geodesic neighborhood, `T_n̄` the
//! background components, under complementary adjacencies. A pixel is
//! *simple* (flip changes nothing) iff `T_n = T_n̄ = 1`.
//!
//! Local numbers cannot distinguish a region merge from a handle creation:
//! both look like two foreground arms meeting at the flipped pixel. The
//! *extended* numbers `T_n⁺`, `T_n̄⁺` resolve this by counting how many
//! globally distinct components those arms belong to — two arms of one
//! component closing a loop create a handle, arms of two components merge
//! them. The full classification table, with `X` meaning "any value"
//! (first matching row applies, so simultaneous merge-and-handle events
//! classify as handle creation / region split):
//!
//! | `T_n` | `T_n⁺` | `T_n̄` | `T_n̄⁺` | flip to foreground   | flip to background  |
//! |-------|--------|--------|---------|----------------------|---------------------|
//! | 0     | 0      | 1      | 1       | create region / create handle | destroy region / destroy handle |
//! | 1     | 1      | 0      | 0       | destroy handle / destroy region | create handle / create region |
//! | 1     | 1      | 1      | 1       | none / none          | none / none         |
//! | ≥2    | < `T_n`| X      | X       | create handle / split region | —           |
//! | ≥2    | ≥2     | X      | X       | merge regions / destroy handle | —          |
//! | X     | X      | ≥2     | < `T_n̄` | —                   | split region / create handle |
//! | X     | X      | ≥2     | ≥2      | —                    | destroy handle / merge regions |
//!
//! Each row's two change labels describe the foreground and background
//! phases respectively; by duality a foreground handle is a background
//! component and vice versa. Any other tuple is impossible on a 2D grid
//! with complementary adjacencies and is reported as an internal error.
//!
//! [`TopologyState`] maintains global component identity incrementally
//! across flips with a union-find forest: merges are unions, and splits
//! re-flood the smaller resulting fragments with fresh ids (cost
//! proportional to the smaller side). A virtual frame node keeps all
//! border-touching background in one component so that interior background
//! components are exactly the foreground's handles.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{
    count_handles_from, label_components, Adjacency, ConnectivityPair, Grid, HandleCount, Labeling,
    OFFSETS_8,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Topological numbers on the punctured 3×3 neighborhood.
//
// Neighbor cells are numbered by their offset (dx, dy) from the center:
//
//     0 1 2        (-1,-1) (0,-1) (1,-1)
//     3 . 4   =    (-1, 0)   .    (1, 0)
//     5 6 7        (-1, 1) (0, 1) (1, 1)
// ---------------------------------------------------------------------------

/// 4-adjacent cell pairs within the punctured neighborhood.
const EDGE_PAIRS_4: [(u8, u8); 8] = [
    (0, 1),
    (1, 2),
    (0, 3),
    (2, 4),
    (3, 5),
    (4, 7),
    (5, 6),
    (6, 7),
];

/// 8-adjacent cell pairs: the 4-adjacent ones plus the diagonal contacts.
const EDGE_PAIRS_8: [(u8, u8); 12] = [
    (0, 1),
    (1, 2),
    (0, 3),
    (2, 4),
    (3, 5),
    (4, 7),
    (5, 6),
    (6, 7),
    (1, 3),
    (1, 4),
    (3, 6),
    (4, 6),
];

/// Restricts a neighborhood mask to the geodesic neighborhood of order 2.
///
/// For the 4-adjacency a corner cell is reachable from the center only
/// through an adjacent edge cell of the same phase; unattached corners are
/// dropped. The 8-adjacency reaches every cell directly.
const fn geodesic_filter(mask: u8, four: bool) -> u8 {
    if !four {
        return mask;
    }
    let mut out = mask & 0b0101_1010; // edge cells 1, 3, 4, 6
    if mask & 0b0000_0001 != 0 && mask & 0b0000_1010 != 0 {
        out |= 0b0000_0001; // corner 0 via cell 1 or 3
    }
    if mask & 0b0000_0100 != 0 && mask & 0b0001_0010 != 0 {
        out |= 0b0000_0100; // corner 2 via cell 1 or 4
    }
    if mask & 0b0010_0000 != 0 && mask & 0b0100_1000 != 0 {
        out |= 0b0010_0000; // corner 5 via cell 3 or 6
    }
    if mask & 0b1000_0000 != 0 && mask & 0b0101_0000 != 0 {
        out |= 0b1000_0000; // corner 7 via cell 4 or 6
    }
    out
}

/// Labels the geodesic-neighborhood cells of `mask` with local component
/// ids (min cell index per component); absent cells get 255.
const fn local_component_ids(mask: u8, four: bool) -> [u8; 8] {
    let m = geodesic_filter(mask, four);
    let mut lab = [255u8; 8];
    let mut i = 0;
    while i < 8 {
        if m >> i & 1 == 1 {
            lab[i] = i as u8;
        }
        i += 1;
    }
    // Min-label propagation over the adjacency edges to a fixpoint.
    loop {
        let mut changed = false;
        let pairs: &[(u8, u8)] = if four { &EDGE_PAIRS_4 } else { &EDGE_PAIRS_8 };
        let mut e = 0;
        while e < pairs.len() {
            let a = pairs[e].0 as usize;
            let b = pairs[e].1 as usize;
            if lab[a] != 255 && lab[b] != 255 {
                let min = if lab[a] < lab[b] { lab[a] } else { lab[b] };
                if lab[a] != min {
                    lab[a] = min;
                    changed = true;
                }
                if lab[b] != min {
                    lab[b] = min;
                    changed = true;
                }
            }
            e += 1;
        }
        if !changed {
            return lab;
        }
    }
}

const fn component_count(mask: u8, four: bool) -> u8 {
    let lab = local_component_ids(mask, four);
    let mut n = 0;
    let mut i = 0;
    while i < 8 {
        if lab[i] != 255 && lab[i] == i as u8 {
            n += 1;
        }
        i += 1;
    }
    n
}

const fn build_table(four: bool) -> [u8; 256] {
    let mut t = [0u8; 256];
    let mut m = 0usize;
    while m < 256 {
        t[m] = component_count(m as u8, four);
        m += 1;
    }
    t
}

/// `T_4` per neighborhood mask (geodesic 4-components).
static TABLE_4: [u8; 256] = build_table(true);

/// `T_8` per neighborhood mask (8-components).
static TABLE_8: [u8; 256] = build_table(false);

/// Topological number of one phase given its neighborhood mask.
///
/// Bit `i` of `mask` is set when neighbor cell `i` (see module docs for the
/// numbering) belongs to the phase. For [`Adjacency::Four`] the count is
/// taken over the geodesic neighborhood of order 2.
#[inline(always)]
pub fn phase_number(mask: u8, adj: Adjacency) -> u8 {
    match adj {
        Adjacency::Four => TABLE_4[mask as usize],
        Adjacency::Eight => TABLE_8[mask as usize],
    }
}

/// Neighborhood bitmask of one phase around `(x, y)`.
///
/// Cells outside the image count as background (the virtual frame), so
/// they set bits when `phase` is background (`false`).
pub fn neighborhood_mask(labeling: &Labeling, x: usize, y: usize, phase: bool) -> u8 {
    let mut mask = 0u8;
    for (bit, &(dx, dy)) in OFFSETS_8.iter().enumerate() {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        let in_phase = if labeling.in_bounds(nx, ny) {
            labeling[(nx as usize, ny as usize)] == phase
        } else {
            !phase
        };
        if in_phase {
            mask |= 1 << bit;
        }
    }
    mask
}

/// The local topological numbers `(T_n, T_n̄)` at `(x, y)`.
///
/// `T_n` is the foreground number under `pair.fg()`, `T_n̄` the background
/// number under `pair.bg()`. The center pixel's own label does not enter.
pub fn local_numbers(labeling: &Labeling, x: usize, y: usize, pair: ConnectivityPair) -> (u8, u8) {
    let fg_mask = neighborhood_mask(labeling, x, y, true);
    let bg_mask = neighborhood_mask(labeling, x, y, false);
    (
        phase_number(fg_mask, pair.fg()),
        phase_number(bg_mask, pair.bg()),
    )
}

// ---------------------------------------------------------------------------
// Flip classification.
// ---------------------------------------------------------------------------

/// Direction of a pixel flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipDirection {
    /// Background pixel becomes foreground.
    ToForeground,
    /// Foreground pixel becomes background.
    ToBackground,
}

/// Topological event a flip causes in one phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseChange {
    NoChange,
    CreateRegion,
    DestroyRegion,
    SplitRegion,
    MergeRegions,
    CreateHandle,
    DestroyHandle,
}

/// The pair of per-phase events caused by one flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopologyChange {
    /// Event in the foreground phase.
    pub fg: PhaseChange,
    /// Event in the background phase.
    pub bg: PhaseChange,
}

impl TopologyChange {
    pub const NONE: TopologyChange = TopologyChange {
        fg: PhaseChange::NoChange,
        bg: PhaseChange::NoChange,
    };
}

/// Full classification of a candidate flip, including the exact deltas it
/// would apply to foreground component and handle counts.
///
/// The deltas are exact even for mixed events that the change labels
/// collapse (for example two arms of distinct components meeting where a
/// third arm of one of them also closes a loop: the label says create
/// handle / split region, while `fg_component_delta` also reflects the
/// merge).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlipClassification {
    pub direction: FlipDirection,
    pub change: TopologyChange,
    /// Exact change to the number of foreground components.
    pub fg_component_delta: i32,
    /// Exact change to the number of foreground handles.
    pub fg_handle_delta: i32,
    /// The tuple `(T_n, T_n⁺, T_n̄, T_n̄⁺)` the classification matched.
    pub numbers: (u8, u8, u8, u8),
}

/// Matches the classification table (first matching row applies).
fn classify_from_numbers(
    direction: FlipDirection,
    k: u8,
    j: u8,
    kb: u8,
    jb: u8,
) -> Result<TopologyChange> {
    use PhaseChange::*;
    let change = match direction {
        FlipDirection::ToForeground => match (k, j, kb, jb) {
            (0, 0, 1, 1) => (CreateRegion, CreateHandle),
            (1, 1, 0, 0) => (DestroyHandle, DestroyRegion),
            (1, 1, 1, 1) => (NoChange, NoChange),
            (k, j, _, _) if k >= 2 && j < k => (CreateHandle, SplitRegion),
            (k, j, _, _) if k >= 2 && j >= 2 => (MergeRegions, DestroyHandle),
            _ => {
                return Err(Error::InternalInvariant(
                    "topological number tuple impossible on a 2D grid",
                ))
            }
        },
        FlipDirection::ToBackground => match (k, j, kb, jb) {
            (0, 0, 1, 1) => (DestroyRegion, DestroyHandle),
            (1, 1, 0, 0) => (CreateHandle, CreateRegion),
            (1, 1, 1, 1) => (NoChange, NoChange),
            (_, _, kb, jb) if kb >= 2 && jb < kb => (SplitRegion, CreateHandle),
            (_, _, kb, jb) if kb >= 2 && jb >= 2 => (DestroyHandle, MergeRegions),
            _ => {
                return Err(Error::InternalInvariant(
                    "topological number tuple impossible on a 2D grid",
                ))
            }
        },
    };
    Ok(TopologyChange {
        fg: change.0,
        bg: change.1,
    })
}

/// Exact foreground component / handle deltas from the number tuple.
fn deltas_from_numbers(direction: FlipDirection, k: u8, j: u8, kb: u8, jb: u8) -> (i32, i32) {
    match direction {
        FlipDirection::ToForeground => {
            // The pixel joins (and merges) j foreground components; each
            // newly closed loop (arm beyond the first global connection)
            // pinches one background piece off into a hole, except when the
            // pixel was itself a one-pixel hole.
            let dc = 1 - j as i32;
            let dh = (k as i32 - j as i32) - if kb == 0 { 1 } else { 0 };
            (dc, dh)
        }
        FlipDirection::ToBackground => {
            // Background arms beyond the first global connection cut the
            // foreground into that many extra pieces; the pixel's own
            // departure removes a component when it was isolated. Merging
            // j̄ background regions (the frame counts as one) removes
            // j̄ - 1 holes; with no background contact at all it creates one.
            let dc = (kb as i32 - jb as i32) - if k == 0 { 1 } else { 0 };
            let dh = if kb == 0 { 1 } else { 1 - jb as i32 };
            (dc, dh)
        }
    }
}

// ---------------------------------------------------------------------------
// Topology constraints.
// ---------------------------------------------------------------------------

/// Which topological events a constrained sampler may apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TopologyConstraint {
    /// All flips allowed.
    #[default]
    Unconstrained,
    /// Only simple points: no topological change at all.
    TopologyPreserving,
    /// Handle counts fixed; regions may split and merge.
    GenusPreserving,
    /// Component counts fixed; handles may open and close.
    ComponentPreserving,
}

/// Whether a classified change is in the constraint's allowed set.
///
/// The decision is keyed on the foreground event (the background event is
/// its dual). Note this is the pure table lookup; for mixed events use
/// [`TopologyConstraint::permits`], which also checks the exact deltas.
pub fn is_allowed(change: TopologyChange, constraint: TopologyConstraint) -> bool {
    use PhaseChange::*;
    match constraint {
        TopologyConstraint::Unconstrained => true,
        TopologyConstraint::TopologyPreserving => {
            change.fg == NoChange && change.bg == NoChange
        }
        TopologyConstraint::GenusPreserving => {
            matches!(change.fg, NoChange | SplitRegion | MergeRegions)
        }
        TopologyConstraint::ComponentPreserving => {
            matches!(change.fg, NoChange | CreateHandle | DestroyHandle)
        }
    }
}

impl TopologyConstraint {
    /// Whether a fully classified flip may be applied.
    ///
    /// This is [`is_allowed`] plus exact-delta guards: a genus-preserving
    /// chain also requires the handle delta to be zero, a
    /// component-preserving chain the component delta, so mixed
    /// merge-and-handle events cannot slip through under their primary
    /// label.
    pub fn permits(self, cls: &FlipClassification) -> bool {
        if !is_allowed(cls.change, self) {
            return false;
        }
        match self {
            TopologyConstraint::Unconstrained | TopologyConstraint::TopologyPreserving => true,
            TopologyConstraint::GenusPreserving => cls.fg_handle_delta == 0,
            TopologyConstraint::ComponentPreserving => cls.fg_component_delta == 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Incremental global topology state.
// ---------------------------------------------------------------------------

/// Incrementally maintained component structure of a segmentation.
///
/// Owns a copy of the labeling plus a union-find forest over component
/// nodes. Pixel flips are applied through [`TopologyState::apply_flip`],
/// which classifies the flip, merges components by union, and re-floods
/// the smaller fragments on splits. Border background unions with a
/// permanent frame node, so `handle_total` (the number of interior
/// background components) is maintained exactly.
#[derive(Clone, Debug)]
pub struct TopologyState {
    pair: ConnectivityPair,
    labels: Labeling,
    /// Union-find node of each pixel.
    node_of: Grid<u32>,
    parent: Vec<u32>,
    /// Node-count size for union by size.
    node_size: Vec<u32>,
    /// Pixels carried by each root (valid at roots only).
    pixel_count: Vec<u32>,
    frame_node: u32,
    fg_components: usize,
    bg_components: usize,
    handle_total: usize,
    // Epoch-stamped claim map for split re-flooding (no per-call zeroing).
    claim_epoch: Vec<u32>,
    claim_group: Vec<u8>,
    epoch: u32,
}

impl TopologyState {
    /// Builds the state from a labeling by full component labeling.
    pub fn new(labeling: &Labeling, pair: ConnectivityPair) -> Self {
        let cl = label_components(labeling, pair);
        let n = labeling.len();
        // Node 0 is the frame; background components keep their label-based
        // node except the border component, which shares the frame node.
        let bg_node = |l: u32| -> u32 {
            if Some(l) == cl.border_bg_label {
                0
            } else {
                l
            }
        };
        let node_count = 1 + cl.bg_count + cl.fg_count;
        let mut node_of = Grid::new(labeling.width(), labeling.height(), 0u32);
        let mut pixel_count = vec![0u32; node_count];
        for i in 0..n {
            let node = if labeling[i] {
                cl.bg_count as u32 + cl.fg_labels[i]
            } else {
                bg_node(cl.bg_labels[i])
            };
            node_of[i] = node;
            pixel_count[node as usize] += 1;
        }
        let handle_total = cl.bg_count - usize::from(cl.border_bg_label.is_some());
        TopologyState {
            pair,
            labels: labeling.clone(),
            node_of,
            parent: (0..node_count as u32).collect(),
            node_size: vec![1; node_count],
            pixel_count,
            frame_node: 0,
            fg_components: cl.fg_count,
            bg_components: cl.bg_count,
            handle_total,
            claim_epoch: vec![0; n],
            claim_group: vec![0; n],
            epoch: 0,
        }
    }

    /// The connectivity pair in force.
    #[inline(always)]
    pub fn pair(&self) -> ConnectivityPair {
        self.pair
    }

    /// The maintained labeling.
    #[inline(always)]
    pub fn labels(&self) -> &Labeling {
        &self.labels
    }

    /// Number of foreground components.
    #[inline(always)]
    pub fn fg_components(&self) -> usize {
        self.fg_components
    }

    /// Number of background components (the outside counts iff it contains
    /// at least one pixel).
    #[inline(always)]
    pub fn bg_components(&self) -> usize {
        self.bg_components
    }

    /// Total number of foreground handles (interior background components).
    #[inline(always)]
    pub fn handle_total(&self) -> usize {
        self.handle_total
    }

    /// Root node without path compression (read-only queries).
    fn find(&self, mut n: u32) -> u32 {
        while self.parent[n as usize] != n {
            n = self.parent[n as usize];
        }
        n
    }

    /// Root node with path compression.
    fn find_mut(&mut self, n: u32) -> u32 {
        let mut root = n;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = n;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Unions two roots, returning the surviving root. Pixel counts add.
    fn union_roots(&mut self, a: u32, b: u32) -> u32 {
        debug_assert_ne!(a, b);
        let (big, small) = if self.node_size[a as usize] >= self.node_size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.node_size[big as usize] += self.node_size[small as usize];
        self.pixel_count[big as usize] += self.pixel_count[small as usize];
        big
    }

    /// Allocates a fresh node with the given pixel count.
    fn fresh_node(&mut self, pixels: u32) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.node_size.push(1);
        self.pixel_count.push(pixels);
        id
    }

    /// Global component id of the pixel (a union-find root).
    pub fn component_id(&self, i: usize) -> u32 {
        self.find(self.node_of[i])
    }

    /// The frame component's root.
    pub fn frame_root(&self) -> u32 {
        self.find(self.frame_node)
    }

    /// Extended topological number at `(x, y)`.
    ///
    /// For [`FlipDirection::ToForeground`] this is `T_n⁺`: the number of
    /// globally distinct foreground components among the strictly
    /// `pair.fg()`-adjacent foreground neighbors. For
    /// [`FlipDirection::ToBackground`] it is `T_n̄⁺` over background
    /// neighbors, where out-of-image cells contribute the frame component.
    pub fn extended_number(&self, x: usize, y: usize, direction: FlipDirection) -> u8 {
        let mut roots = [u32::MAX; 8];
        let mut n = 0usize;
        let phase = direction == FlipDirection::ToForeground;
        let adj = self.pair.phase(phase);
        for &(dx, dy) in adj.offsets() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            let root = if self.labels.in_bounds(nx, ny) {
                let i = self.labels.idx(nx as usize, ny as usize);
                if self.labels[i] != phase {
                    continue;
                }
                self.find(self.node_of[i])
            } else if phase {
                continue; // outside is background
            } else {
                self.find(self.frame_node)
            };
            if !roots[..n].contains(&root) {
                roots[n] = root;
                n += 1;
            }
        }
        n as u8
    }

    /// The full number tuple `(T_n, T_n⁺, T_n̄, T_n̄⁺)` at `(x, y)`.
    pub fn number_tuple(&self, x: usize, y: usize) -> (u8, u8, u8, u8) {
        let (k, kb) = local_numbers(&self.labels, x, y, self.pair);
        let j = self.extended_number(x, y, FlipDirection::ToForeground);
        let jb = self.extended_number(x, y, FlipDirection::ToBackground);
        (k, j, kb, jb)
    }

    /// Classifies the flip of `(x, y)` (direction inferred from its current
    /// label) without applying it.
    pub fn classify_flip(&self, x: usize, y: usize) -> Result<FlipClassification> {
        let direction = if self.labels[(x, y)] {
            FlipDirection::ToBackground
        } else {
            FlipDirection::ToForeground
        };
        let (k, j, kb, jb) = self.number_tuple(x, y);
        let change = classify_from_numbers(direction, k, j, kb, jb)?;
        let (dc, dh) = deltas_from_numbers(direction, k, j, kb, jb);
        Ok(FlipClassification {
            direction,
            change,
            fg_component_delta: dc,
            fg_handle_delta: dh,
            numbers: (k, j, kb, jb),
        })
    }

    /// Applies the flip of `(x, y)`, updating labels, the component forest,
    /// and all counts. Returns the classification of the applied flip.
    pub fn apply_flip(&mut self, x: usize, y: usize) -> Result<FlipClassification> {
        let cls = self.classify_flip(x, y)?;
        let i = self.labels.idx(x, y);
        let (k, j, kb, jb) = cls.numbers;
        match cls.direction {
            FlipDirection::ToForeground => {
                // Leave the background component.
                let old_root = self.find_mut(self.node_of[i]);
                self.pixel_count[old_root as usize] -= 1;
                if self.pixel_count[old_root as usize] == 0 {
                    self.bg_components -= 1;
                    if old_root != self.find_mut(self.frame_node) {
                        self.handle_total -= 1;
                    }
                }
                self.labels[i] = true;
                // Join/merge the adjacent foreground components.
                let mut roots = [u32::MAX; 8];
                let mut n = 0usize;
                for &(dx, dy) in self.pair.fg().offsets() {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !self.labels.in_bounds(nx, ny) {
                        continue;
                    }
                    let ni = self.labels.idx(nx as usize, ny as usize);
                    if ni != i && self.labels[ni] {
                        let r = self.find_mut(self.node_of[ni]);
                        if !roots[..n].contains(&r) {
                            roots[n] = r;
                            n += 1;
                        }
                    }
                }
                debug_assert_eq!(n as u8, j);
                if n == 0 {
                    let node = self.fresh_node(1);
                    self.node_of[i] = node;
                    self.fg_components += 1;
                } else {
                    let mut root = roots[0];
                    for &r in &roots[1..n] {
                        root = self.union_roots(root, r);
                    }
                    self.node_of[i] = root;
                    self.pixel_count[root as usize] += 1;
                    self.fg_components -= n - 1;
                }
                // Newly enclosed background fragments.
                let expected = k as usize - j as usize;
                if expected > 0 {
                    self.split_phase(x, y, false, expected)?;
                }
            }
            FlipDirection::ToBackground => {
                // Leave the foreground component.
                let old_root = self.find_mut(self.node_of[i]);
                self.pixel_count[old_root as usize] -= 1;
                if self.pixel_count[old_root as usize] == 0 {
                    self.fg_components -= 1;
                }
                self.labels[i] = false;
                // Join/merge the adjacent background components (the frame
                // acts as a component whenever the pixel borders outside).
                let mut roots = [u32::MAX; 8];
                let mut n = 0usize;
                let frame_root = self.find_mut(self.frame_node);
                for &(dx, dy) in self.pair.bg().offsets() {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    let r = if self.labels.in_bounds(nx, ny) {
                        let ni = self.labels.idx(nx as usize, ny as usize);
                        if ni == i || self.labels[ni] {
                            continue;
                        }
                        self.find_mut(self.node_of[ni])
                    } else {
                        frame_root
                    };
                    if !roots[..n].contains(&r) {
                        roots[n] = r;
                        n += 1;
                    }
                }
                debug_assert_eq!(n as u8, jb);
                if n == 0 {
                    let node = self.fresh_node(1);
                    self.node_of[i] = node;
                    self.bg_components += 1;
                    self.handle_total += 1;
                } else {
                    let pixel_bearing = roots[..n]
                        .iter()
                        .filter(|&&r| self.pixel_count[r as usize] > 0)
                        .count();
                    let interior = roots[..n].iter().filter(|&&r| r != frame_root).count();
                    let has_frame = interior < n;
                    let mut root = roots[0];
                    for &r in &roots[1..n] {
                        root = self.union_roots(root, r);
                    }
                    self.node_of[i] = root;
                    self.pixel_count[root as usize] += 1;
                    self.bg_components += 1;
                    self.bg_components -= pixel_bearing;
                    self.handle_total -= interior;
                    if !has_frame {
                        self.handle_total += 1;
                    }
                }
                // Newly severed foreground fragments.
                let expected = kb as usize - jb as usize;
                if expected > 0 {
                    self.split_phase(x, y, true, expected)?;
                }
            }
        }
        self.maybe_compact();
        Ok(cls)
    }

    /// Re-floods the fragments a flip at `(x, y)` cut off from the `phase`
    /// component that just lost the pixel. `expected` fragments become new
    /// components with fresh nodes; the remainder keeps the old node.
    ///
    /// The neighbor arms are expanded breadth-first in rotation, so total
    /// work is proportional to the sizes of the smaller fragments. An arm
    /// that reaches the image border is part of the frame-connected
    /// remainder (background phase only) and stops expanding; arms that
    /// meet each other merge.
    fn split_phase(&mut self, x: usize, y: usize, phase: bool, expected: usize) -> Result<()> {
        let w = self.labels.width();
        let adj = self.pair.phase(phase);
        let center = self.labels.idx(x, y);

        // Group the arms by local geodesic component. The center has already
        // flipped away from `phase`, and the mask covers neighbors only.
        let mask = neighborhood_mask(&self.labels, x, y, phase);
        let comp_ids = local_component_ids(mask, adj == Adjacency::Four);
        // Map local component id -> dense group index.
        let mut group_of_cell = [usize::MAX; 8];
        let mut group_count = 0usize;
        let mut id_to_group = [usize::MAX; 8];
        for cell in 0..8 {
            let id = comp_ids[cell];
            if id == 255 {
                continue;
            }
            if id_to_group[id as usize] == usize::MAX {
                id_to_group[id as usize] = group_count;
                group_count += 1;
            }
            group_of_cell[cell] = id_to_group[id as usize];
        }
        debug_assert!(group_count > expected);

        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            // Extremely rare wraparound: invalidate all stale stamps.
            self.claim_epoch.iter_mut().for_each(|e| *e = u32::MAX);
            self.epoch = 1;
        }
        let epoch = self.epoch;

        // Per-group state: frontier queue, member pixels, status.
        let mut queues: Vec<Vec<usize>> = vec![Vec::new(); group_count];
        let mut cursors = vec![0usize; group_count];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); group_count];
        // Group DSU: merged groups share a leader.
        let mut leader: Vec<usize> = (0..group_count).collect();
        // A finished group either met the frame (keeps old labels) or
        // exhausted in isolation (becomes a fresh component).
        let mut frame_bound = vec![false; group_count];
        let mut exhausted = vec![false; group_count];

        fn lead(leader: &mut [usize], mut g: usize) -> usize {
            while leader[g] != g {
                leader[g] = leader[leader[g]];
                g = leader[g];
            }
            g
        }

        for (bit, &(dx, dy)) in OFFSETS_8.iter().enumerate() {
            let g = group_of_cell[bit];
            if g == usize::MAX {
                continue;
            }
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if !self.labels.in_bounds(nx, ny) {
                // Out-of-image arm cell: this arm is frame-connected.
                debug_assert!(!phase);
                frame_bound[g] = true;
                continue;
            }
            let ni = self.labels.idx(nx as usize, ny as usize);
            debug_assert!(self.labels[ni] == phase);
            if self.claim_epoch[ni] != epoch {
                self.claim_epoch[ni] = epoch;
                self.claim_group[ni] = g as u8;
                queues[g].push(ni);
                members[g].push(ni);
                if !phase {
                    let (px, py) = self.labels.xy(ni);
                    if self.labels.on_border(px, py) {
                        frame_bound[g] = true;
                    }
                }
            }
        }
        // Seeds of distinct groups are distinct pixels, but a merged claim
        // cannot happen at seeding time; group merges only occur during
        // expansion below.

        let mut found = 0usize;
        let mut active = group_count;
        while found < expected {
            let mut progressed = false;
            for g0 in 0..group_count {
                if found >= expected {
                    break;
                }
                let g = lead(&mut leader, g0);
                if g != g0 || frame_bound[g] || exhausted[g] {
                    continue;
                }
                // Expand one pixel from this group's frontier.
                if cursors[g] >= queues[g].len() {
                    // Isolated fragment: relabel with a fresh node.
                    exhausted[g] = true;
                    active -= 1;
                    found += 1;
                    let size = members[g].len() as u32;
                    debug_assert!(size > 0);
                    let old_root = self.find_mut(self.node_of[members[g][0]]);
                    let node = self.fresh_node(size);
                    for &m in &members[g] {
                        self.node_of[m] = node;
                    }
                    self.pixel_count[old_root as usize] -= size;
                    if phase {
                        self.fg_components += 1;
                        debug_assert!(self.pixel_count[old_root as usize] > 0);
                    } else {
                        self.bg_components += 1;
                        self.handle_total += 1;
                        // The old component may have just lost its last
                        // pixel: a pocket severed from the (now pixel-less)
                        // frame component.
                        if self.pixel_count[old_root as usize] == 0 {
                            self.bg_components -= 1;
                            if old_root != self.find_mut(self.frame_node) {
                                self.handle_total -= 1;
                            }
                        }
                    }
                    progressed = true;
                    continue;
                }
                let cur = queues[g][cursors[g]];
                cursors[g] += 1;
                progressed = true;
                let (cx, cy) = self.labels.xy(cur);
                for &(dx, dy) in adj.offsets() {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if !self.labels.in_bounds(nx, ny) {
                        continue;
                    }
                    let ni = (ny as usize) * w + nx as usize;
                    if ni == center || self.labels[ni] != phase {
                        continue;
                    }
                    if self.claim_epoch[ni] == epoch {
                        let other = lead(&mut leader, self.claim_group[ni] as usize);
                        if other != g {
                            // Two arms reconnect: merge their groups.
                            leader[other] = g;
                            active -= 1;
                            let (q, m) = {
                                let (qo, mo) = (core::mem::take(&mut queues[other]),
                                                core::mem::take(&mut members[other]));
                                (qo, mo)
                            };
                            // Keep only the unexpanded tail of the queue.
                            queues[g].extend_from_slice(&q[cursors[other]..]);
                            members[g].extend_from_slice(&m);
                            if frame_bound[other] {
                                frame_bound[g] = true;
                            }
                        }
                        continue;
                    }
                    self.claim_epoch[ni] = epoch;
                    self.claim_group[ni] = g as u8;
                    queues[g].push(ni);
                    members[g].push(ni);
                    if !phase {
                        let (px, py) = self.labels.xy(ni);
                        if self.labels.on_border(px, py) {
                            frame_bound[g] = true;
                        }
                    }
                }
            }
            if !progressed {
                let _ = active;
                return Err(Error::InternalInvariant(
                    "component split found fewer fragments than the topological numbers promise",
                ));
            }
        }
        Ok(())
    }

    /// Rebuilds the forest from scratch when dead nodes accumulate.
    fn maybe_compact(&mut self) {
        if self.parent.len() > 4 * self.labels.len() + 64 {
            let fresh = TopologyState::new(&self.labels, self.pair);
            debug_assert_eq!(fresh.fg_components, self.fg_components);
            debug_assert_eq!(fresh.bg_components, self.bg_components);
            debug_assert_eq!(fresh.handle_total, self.handle_total);
            *self = fresh;
        }
    }

    /// Handles per foreground component, ordered like
    /// [`label_components`]'s labels (row-major first pixel).
    pub fn handle_report(&self) -> HandleCount {
        let cl = label_components(&self.labels, self.pair);
        let hc = count_handles_from(&self.labels, &cl);
        debug_assert_eq!(hc.total, self.handle_total);
        hc
    }

    /// Verifies all incremental state against a from-scratch labeling.
    ///
    /// Checks component counts, handle totals, the partition itself
    /// (same root ⇔ same component) and frame membership. Intended for
    /// audits; cost is a full relabeling.
    pub fn verify_consistent(&self) -> Result<()> {
        let cl = label_components(&self.labels, self.pair);
        if cl.fg_count != self.fg_components
            || cl.bg_count != self.bg_components
            || cl.bg_count - usize::from(cl.border_bg_label.is_some()) != self.handle_total
        {
            return Err(Error::InternalInvariant(
                "incremental component counts disagree with relabeling",
            ));
        }
        // Root ↔ label bijection per phase.
        let mut fg_root_of_label = vec![u32::MAX; cl.fg_count + 1];
        let mut bg_root_of_label = vec![u32::MAX; cl.bg_count + 1];
        let frame_root = self.find(self.frame_node);
        for i in 0..self.labels.len() {
            let root = self.find(self.node_of[i]);
            let (label, slot) = if self.labels[i] {
                (cl.fg_labels[i], &mut fg_root_of_label[..])
            } else {
                (cl.bg_labels[i], &mut bg_root_of_label[..])
            };
            let entry = &mut slot[label as usize];
            if *entry == u32::MAX {
                *entry = root;
            } else if *entry != root {
                return Err(Error::InternalInvariant(
                    "pixels of one component carry different roots",
                ));
            }
            if !self.labels[i] {
                let is_border_comp = Some(label) == cl.border_bg_label;
                if (root == frame_root) != is_border_comp {
                    return Err(Error::InternalInvariant(
                        "frame membership disagrees with relabeling",
                    ));
                }
            }
        }
        // Distinct labels must map to distinct roots.
        for slot in [&fg_root_of_label, &bg_root_of_label] {
            let mut seen: Vec<u32> = slot.iter().copied().filter(|&r| r != u32::MAX).collect();
            seen.sort_unstable();
            let len_before = seen.len();
            seen.dedup();
            if seen.len() != len_before {
                return Err(Error::InternalInvariant(
                    "two components share one union-find root",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    /// Independent oracle for the topological number: materialize the
    /// punctured neighborhood as coordinates, apply the geodesic
    /// restriction literally, and count components by BFS.
    fn oracle_phase_number(mask: u8, adj: Adjacency) -> u8 {
        let cells: Vec<(i64, i64)> = OFFSETS_8
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask >> bit & 1 == 1)
            .map(|(_, &(dx, dy))| (dx, dy))
            .collect();
        let geodesic: Vec<(i64, i64)> = match adj {
            Adjacency::Eight => cells.clone(),
            Adjacency::Four => {
                // Keep 4-neighbors of the center, plus cells 4-adjacent to a
                // kept 4-neighbor (geodesic neighborhood of order 2).
                let edge: Vec<(i64, i64)> = cells
                    .iter()
                    .copied()
                    .filter(|&(dx, dy)| dx.abs() + dy.abs() == 1)
                    .collect();
                cells
                    .iter()
                    .copied()
                    .filter(|&(dx, dy)| {
                        dx.abs() + dy.abs() == 1
                            || edge
                                .iter()
                                .any(|&(ex, ey)| (ex - dx).abs() + (ey - dy).abs() == 1)
                    })
                    .collect()
            }
        };
        let adjacent = |a: (i64, i64), b: (i64, i64)| -> bool {
            let (dx, dy) = ((a.0 - b.0).abs(), (a.1 - b.1).abs());
            match adj {
                Adjacency::Four => dx + dy == 1,
                Adjacency::Eight => dx.max(dy) == 1 && (dx, dy) != (0, 0),
            }
        };
        let mut remaining: BTreeSet<(i64, i64)> = geodesic.into_iter().collect();
        let mut comps = 0;
        while let Some(&seed) = remaining.iter().next() {
            comps += 1;
            let mut stack = vec![seed];
            remaining.remove(&seed);
            while let Some(c) = stack.pop() {
                let next: Vec<(i64, i64)> = remaining
                    .iter()
                    .copied()
                    .filter(|&o| adjacent(c, o))
                    .collect();
                for o in next {
                    remaining.remove(&o);
                    stack.push(o);
                }
            }
        }
        comps
    }

    #[test]
    fn phase_number_matches_oracle_for_all_masks() {
        for mask in 0u16..256 {
            let mask = mask as u8;
            for adj in [Adjacency::Four, Adjacency::Eight] {
                assert_eq!(
                    phase_number(mask, adj),
                    oracle_phase_number(mask, adj),
                    "mask {mask:#010b} under {adj:?}"
                );
            }
        }
    }

    // With complementary adjacencies the only possible local number pairs
    // are (0, 1), (1, 0) and (k, k): a phase with no arms leaves the other
    // phase filling the whole neighborhood, and any k arms of one phase cut
    // the neighborhood into exactly k arms of the other.
    #[test]
    fn number_pairs_follow_duality() {
        for mask in 0u16..256 {
            let fg_mask = mask as u8;
            let bg_mask = !fg_mask;
            for (fa, ba) in [
                (Adjacency::Four, Adjacency::Eight),
                (Adjacency::Eight, Adjacency::Four),
            ] {
                let k = phase_number(fg_mask, fa);
                let kb = phase_number(bg_mask, ba);
                let ok = (k == 0 && kb == 1) || (k == 1 && kb == 0) || k == kb;
                assert!(ok, "mask {fg_mask:#010b}: T_n={k}, T_n̄={kb} under ({fa:?},{ba:?})");
            }
        }
    }

    // A lone 4-neighbor gives (1, 1); two opposite 4-neighbors give (2, 2);
    // a corner-only contact joins an adjacent edge cell under 8-adjacency
    // but not under the geodesic 4-neighborhood.
    #[test]
    fn canonical_neighborhoods() {
        let north = 1u8 << 1;
        let south = 1u8 << 6;
        let east = 1u8 << 4;

        assert_eq!(phase_number(north, Adjacency::Four), 1);
        assert_eq!(phase_number(!north, Adjacency::Eight), 1);

        assert_eq!(phase_number(north | south, Adjacency::Four), 2);
        assert_eq!(phase_number(!(north | south), Adjacency::Eight), 2);

        // North + east arms: separate under geodesic 4 (the NE corner is
        // absent), one component under 8.
        assert_eq!(phase_number(north | east, Adjacency::Four), 2);
        assert_eq!(phase_number(north | east, Adjacency::Eight), 1);

        // An unattached corner is not geodesically reachable: T_4 = 0.
        let ne_corner = 1u8 << 2;
        assert_eq!(phase_number(ne_corner, Adjacency::Four), 0);
        assert_eq!(phase_number(ne_corner, Adjacency::Eight), 1);
    }

    #[test]
    fn neighborhood_mask_treats_outside_as_background() {
        let lab = labeling_from_rows(&["##", "##"]);
        // Top-left pixel: in-grid neighbors (cells 4, 6, 7) are foreground,
        // everything outside is background.
        let fg = neighborhood_mask(&lab, 0, 0, true);
        assert_eq!(fg, 0b1101_0000);
        let bg = neighborhood_mask(&lab, 0, 0, false);
        assert_eq!(bg, 0b0010_1111);
        assert_eq!(local_numbers(&lab, 0, 0, ConnectivityPair::FOUR_EIGHT), (1, 1));
    }

    #[test]
    fn is_allowed_matches_constraint_tables() {
        use PhaseChange::*;
        let none = TopologyChange::NONE;
        let merge = TopologyChange { fg: MergeRegions, bg: DestroyHandle };
        let create_handle = TopologyChange { fg: CreateHandle, bg: SplitRegion };
        let create_region = TopologyChange { fg: CreateRegion, bg: CreateHandle };

        assert!(is_allowed(none, TopologyConstraint::TopologyPreserving));
        assert!(!is_allowed(merge, TopologyConstraint::TopologyPreserving));

        assert!(is_allowed(merge, TopologyConstraint::GenusPreserving));
        assert!(!is_allowed(create_handle, TopologyConstraint::GenusPreserving));
        assert!(!is_allowed(create_region, TopologyConstraint::GenusPreserving));

        assert!(is_allowed(create_handle, TopologyConstraint::ComponentPreserving));
        assert!(!is_allowed(merge, TopologyConstraint::ComponentPreserving));

        assert!(is_allowed(create_region, TopologyConstraint::Unconstrained));
    }

    fn state_from_rows(rows: &[&str], pair: ConnectivityPair) -> TopologyState {
        TopologyState::new(&labeling_from_rows(rows), pair)
    }

    #[test]
    fn classify_create_and_destroy_region() {
        let st = state_from_rows(&["...", "...", "..."], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 1).unwrap();
        assert_eq!(cls.direction, FlipDirection::ToForeground);
        assert_eq!(cls.change.fg, PhaseChange::CreateRegion);
        assert_eq!(cls.change.bg, PhaseChange::CreateHandle);
        assert_eq!(cls.fg_component_delta, 1);
        assert_eq!(cls.fg_handle_delta, 0);

        let st = state_from_rows(&["...", ".#.", "..."], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 1).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::DestroyRegion);
        assert_eq!(cls.fg_component_delta, -1);
    }

    #[test]
    fn classify_handle_events() {
        // Filling the center of a ring destroys the handle.
        let st = state_from_rows(&["###", "#.#", "###"], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 1).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::DestroyHandle);
        assert_eq!(cls.change.bg, PhaseChange::DestroyRegion);
        assert_eq!(cls.fg_handle_delta, -1);
        assert_eq!(cls.fg_component_delta, 0);

        // Hollowing the center of a solid block creates one.
        let st = state_from_rows(&["###", "###", "###"], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 1).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::CreateHandle);
        assert_eq!(cls.change.bg, PhaseChange::CreateRegion);
        assert_eq!(cls.fg_handle_delta, 1);
    }

    #[test]
    fn classify_merge_versus_loop_closure() {
        // Two separate vertical bars: the gap pixel sees two arms of two
        // distinct components → merge.
        let st = state_from_rows(&[".#.#.", ".#.#.", ".#.#."], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(2, 1).unwrap();
        // Both background arms touch the border, hence one frame component.
        assert_eq!(cls.numbers, (2, 2, 2, 1));
        assert_eq!(cls.change.fg, PhaseChange::MergeRegions);
        assert_eq!(cls.change.bg, PhaseChange::DestroyHandle);
        assert_eq!(cls.fg_component_delta, -1);
        assert_eq!(cls.fg_handle_delta, 0);

        // A C-shape about to close: the same two local arms belong to one
        // global component → handle creation, background splits.
        let st = state_from_rows(&["###", "#..", "###"], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(2, 1).unwrap();
        assert_eq!(cls.numbers, (2, 1, 2, 1));
        assert_eq!(cls.change.fg, PhaseChange::CreateHandle);
        assert_eq!(cls.change.bg, PhaseChange::SplitRegion);
        assert_eq!(cls.fg_component_delta, 0);
        assert_eq!(cls.fg_handle_delta, 1);
    }

    #[test]
    fn classify_split_versus_loop_opening() {
        // A bridge between two halves of one component whose halves are
        // also joined elsewhere: removing the bridge opens the loop.
        let st = state_from_rows(&["###", "#.#", "###"], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 0).unwrap();
        assert_eq!(cls.direction, FlipDirection::ToBackground);
        assert_eq!(cls.numbers, (2, 1, 2, 2));
        assert_eq!(cls.change.fg, PhaseChange::DestroyHandle);
        assert_eq!(cls.change.bg, PhaseChange::MergeRegions);
        assert_eq!(cls.fg_handle_delta, -1);
        assert_eq!(cls.fg_component_delta, 0);

        // A plain bridge: removing it splits the component.
        let st = state_from_rows(&["#.#", "###", "#.#"], ConnectivityPair::FOUR_EIGHT);
        let cls = st.classify_flip(1, 1).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::SplitRegion);
        assert_eq!(cls.change.bg, PhaseChange::CreateHandle);
        assert!(cls.fg_component_delta > 0);
    }

    // A mixed event: the flip simultaneously merges two components and
    // closes a loop of one of them. First-match classification labels it
    // create-handle/split-region, but the exact deltas expose the merge, so
    // neither a genus-preserving nor a component-preserving chain may
    // apply it.
    #[test]
    fn mixed_merge_and_handle_is_blocked_by_delta_guards() {
        let st = state_from_rows(
            &[
                ".......",
                ".#####.",
                ".#...#.",
                ".##.##.",
                "...#...",
                "...#...",
                ".......",
            ],
            ConnectivityPair::FOUR_EIGHT,
        );
        // Pixel (3, 3): north arms from the C-shape (one component, two
        // local arms) and a south arm from the separate stem.
        let cls = st.classify_flip(3, 3).unwrap();
        assert_eq!(cls.numbers.0, 3);
        assert_eq!(cls.numbers.1, 2);
        assert_eq!(cls.change.fg, PhaseChange::CreateHandle);
        assert_eq!(cls.fg_component_delta, -1);
        assert_eq!(cls.fg_handle_delta, 1);
        assert!(!TopologyConstraint::GenusPreserving.permits(&cls));
        assert!(!TopologyConstraint::ComponentPreserving.permits(&cls));
        assert!(!TopologyConstraint::TopologyPreserving.permits(&cls));
        assert!(TopologyConstraint::Unconstrained.permits(&cls));
    }

    #[test]
    fn extended_number_counts_global_components() {
        // Ring missing one pixel: at the gap both arms are one component.
        let st = state_from_rows(&["###", "#.#", "##."], ConnectivityPair::FOUR_EIGHT);
        assert_eq!(st.extended_number(2, 2, FlipDirection::ToForeground), 1);
        // Outside cells count as the frame for the background side.
        assert_eq!(st.extended_number(2, 2, FlipDirection::ToBackground), 1);
    }

    #[test]
    fn apply_flip_tracks_counts_on_canonical_sequence() {
        let mut st = state_from_rows(
            &["....", "....", "....", "...."],
            ConnectivityPair::FOUR_EIGHT,
        );
        assert_eq!((st.fg_components(), st.handle_total()), (0, 0));
        st.apply_flip(1, 1).unwrap();
        st.apply_flip(2, 2).unwrap(); // diagonal: separate under fg-4
        assert_eq!(st.fg_components(), 2);
        st.apply_flip(1, 2).unwrap(); // merge
        assert_eq!(st.fg_components(), 1);
        st.verify_consistent().unwrap();
        st.apply_flip(1, 2).unwrap(); // undo the merge: split
        assert_eq!(st.fg_components(), 2);
        st.verify_consistent().unwrap();
    }

    #[test]
    fn apply_flip_handles_ring_closure_and_opening() {
        let mut st = state_from_rows(
            &[".....", ".###.", ".#.#.", ".##..", "....."],
            ConnectivityPair::FOUR_EIGHT,
        );
        assert_eq!(st.fg_components(), 1);
        assert_eq!(st.handle_total(), 0);
        let cls = st.apply_flip(3, 3).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::CreateHandle);
        assert_eq!(st.handle_total(), 1);
        st.verify_consistent().unwrap();
        let report = st.handle_report();
        assert_eq!(report.total, 1);
        assert_eq!(report.per_component, vec![1]);
        let cls = st.apply_flip(3, 3).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::DestroyHandle);
        assert_eq!(st.handle_total(), 0);
        st.verify_consistent().unwrap();
    }

    // The dissolving-frame case: a background pocket whose last border
    // contact is flipped to foreground becomes a hole (splits off the
    // frame), and the flip classifies as a loop closure.
    #[test]
    fn pocket_separating_from_frame_becomes_handle() {
        let mut st = state_from_rows(
            &["##.##", "#...#", "#####"],
            ConnectivityPair::FOUR_EIGHT,
        );
        assert_eq!(st.handle_total(), 0);
        let cls = st.apply_flip(2, 0).unwrap();
        assert_eq!(cls.change.fg, PhaseChange::CreateHandle);
        assert_eq!(st.handle_total(), 1);
        assert_eq!(st.bg_components(), 1);
        st.verify_consistent().unwrap();
    }

    #[test]
    fn random_flip_sequences_stay_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x70b0_1065);
        for pair in [ConnectivityPair::FOUR_EIGHT, ConnectivityPair::EIGHT_FOUR] {
            for trial in 0..20 {
                let (w, h) = (9, 7);
                let mut lab = Grid::new(w, h, false);
                let density = 0.25 + 0.5 * (trial as f64 / 20.0);
                for i in 0..lab.len() {
                    lab[i] = rng.random::<f64>() < density;
                }
                let mut st = TopologyState::new(&lab, pair);
                for step in 0..300 {
                    let x = rng.random_range(0..w);
                    let y = rng.random_range(0..h);
                    let before = st.classify_flip(x, y).unwrap();
                    let applied = st.apply_flip(x, y).unwrap();
                    assert_eq!(before, applied);
                    if step % 10 == 0 {
                        st.verify_consistent().unwrap_or_else(|e| {
                            panic!("inconsistent after step {step} ({pair:?}): {e}")
                        });
                    }
                }
                st.verify_consistent().unwrap();
            }
        }
    }

    #[test]
    fn deltas_predict_count_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xde17_a5);
        for pair in [ConnectivityPair::FOUR_EIGHT, ConnectivityPair::EIGHT_FOUR] {
            let (w, h) = (8, 8);
            let mut lab = Grid::new(w, h, false);
            for i in 0..lab.len() {
                lab[i] = rng.random::<f64>() < 0.5;
            }
            let mut st = TopologyState::new(&lab, pair);
            for _ in 0..500 {
                let x = rng.random_range(0..w);
                let y = rng.random_range(0..h);
                let comps_before = st.fg_components() as i32;
                let handles_before = st.handle_total() as i32;
                let cls = st.apply_flip(x, y).unwrap();
                assert_eq!(
                    st.fg_components() as i32 - comps_before,
                    cls.fg_component_delta,
                    "component delta at ({x},{y}), numbers {:?}",
                    cls.numbers
                );
                assert_eq!(
                    st.handle_total() as i32 - handles_before,
                    cls.fg_handle_delta,
                    "handle delta at ({x},{y}), numbers {:?}",
                    cls.numbers
                );
            }
        }
    }

    #[test]
    fn compaction_preserves_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (w, h) = (6, 6);
        let mut lab = Grid::new(w, h, false);
        for i in 0..lab.len() {
            lab[i] = rng.random::<f64>() < 0.5;
        }
        let mut st = TopologyState::new(&lab, ConnectivityPair::FOUR_EIGHT);
        // Enough churn to trigger several compactions (> 4·36 fresh nodes).
        for _ in 0..3000 {
            let x = rng.random_range(0..w);
            let y = rng.random_range(0..h);
            st.apply_flip(x, y).unwrap();
        }
        st.verify_consistent().unwrap();
    }
}
