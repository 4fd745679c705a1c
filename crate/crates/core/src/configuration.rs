//! Finite point configurations on a periodic window.
//!
//! A [`Configuration`] stores points densely (slot-indexed, swap-remove on
//! deletion) and keeps a uniform cell list whose cell side is at least the
//! largest query radius, so a fixed-radius query scans at most `3^d` cells.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// A position in `[0, L)^d`; the second coordinate is unused when `d = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position(pub [f64; 2]);

impl Position {
    pub const fn origin() -> Self {
        Position([0.0, 0.0])
    }

    pub const fn new1(x: f64) -> Self {
        Position([x, 0.0])
    }

    pub const fn new2(x: f64, y: f64) -> Self {
        Position([x, y])
    }
}

/// Periodic cubic window `[0, L)^d`, `d ∈ {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusWindow {
    side: f64,
    dimension: usize,
}

impl TorusWindow {
    pub fn new(side: f64, dimension: usize) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() {
            return arg(format!("window side {side} must be finite and > 0"));
        }
        if !(1..=2).contains(&dimension) {
            return arg(format!("window dimension {dimension} not in {{1, 2}}"));
        }
        Ok(TorusWindow { side, dimension })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dimension as i32)
    }

    /// Largest possible minimum-image distance, `L √d / 2`.
    pub fn max_distance(&self) -> f64 {
        0.5 * self.side * (self.dimension as f64).sqrt()
    }

    fn wrap_coord(&self, c: f64) -> f64 {
        let w = c.rem_euclid(self.side);
        // rem_euclid can round up to exactly L for tiny negative inputs
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    /// Maps an arbitrary point onto the torus.
    pub fn wrap(&self, p: Position) -> Position {
        let mut out = Position::origin();
        for i in 0..self.dimension {
            out.0[i] = self.wrap_coord(p.0[i]);
        }
        out
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0..self.dimension).all(|i| p.0[i] >= 0.0 && p.0[i] < self.side)
            && (self.dimension == 2 || p.0[1] == 0.0)
    }

    /// Minimum-image displacement `y - x`.
    pub fn displacement(&self, x: &Position, y: &Position) -> [f64; 2] {
        let mut d = [0.0; 2];
        for i in 0..self.dimension {
            let mut v = y.0[i] - x.0[i];
            v -= self.side * (v / self.side).round();
            d[i] = v;
        }
        d
    }

    /// Euclidean distance under the minimum-image convention.
    #[inline]
    pub fn distance(&self, x: &Position, y: &Position) -> f64 {
        let d = self.displacement(x, y);
        (d[0] * d[0] + d[1] * d[1]).sqrt()
    }

    /// Uniform position on the torus.
    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        let mut p = Position::origin();
        for i in 0..self.dimension {
            p.0[i] = self.wrap_coord(rng.random::<f64>() * self.side);
        }
        p
    }

    /// The whole window as a box.
    pub fn full_box(&self) -> AxisBox {
        let mut hi = [0.0; 2];
        hi[..self.dimension].fill(self.side);
        AxisBox {
            lo: [0.0; 2],
            hi,
            dimension: self.dimension,
        }
    }
}

/// Axis-aligned half-open box `Π [lo_i, hi_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub dimension: usize,
}

impl AxisBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let d = lo.len();
        if d != hi.len() || !(1..=2).contains(&d) {
            return arg("box corners must both have 1 or 2 coordinates");
        }
        let mut b = AxisBox {
            lo: [0.0; 2],
            hi: [0.0; 2],
            dimension: d,
        };
        for i in 0..d {
            if !(hi[i] > lo[i]) {
                return arg(format!("box axis {i}: hi {} must exceed lo {}", hi[i], lo[i]));
            }
            b.lo[i] = lo[i];
            b.hi[i] = hi[i];
        }
        Ok(b)
    }

    /// Cube `[lo, lo + side)^d`.
    pub fn cube(lo: f64, side: f64, dimension: usize) -> Result<Self> {
        let lo = vec![lo; dimension];
        let hi: Vec<f64> = lo.iter().map(|l| l + side).collect();
        Self::new(&lo, &hi)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dimension).map(|i| self.hi[i] - self.lo[i]).product()
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0..self.dimension).all(|i| p.0[i] >= self.lo[i] && p.0[i] < self.hi[i])
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// True when the box lies inside `[0, L)^d` of the window.
    pub fn within(&self, w: &TorusWindow) -> bool {
        self.dimension == w.dimension() && (0..self.dimension).all(|i| self.lo[i] >= 0.0 && self.hi[i] <= w.side())
    }
}

/// Identifier of a point; never reused within a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointId(pub u64);

/// Point set on a torus with a cell-list index.
#[derive(Debug, Clone)]
pub struct Configuration {
    window: TorusWindow,
    cells_per_axis: usize,
    cell_side: f64,
    cells: Vec<Vec<usize>>,
    ids: Vec<PointId>,
    positions: Vec<Position>,
    cell_of: Vec<usize>,
    slot_of: HashMap<PointId, usize>,
    generation: u64,
}

impl Configuration {
    /// Empty configuration whose cells are at least `min_cell_side` wide.
    /// A non-positive or non-finite side gives a single cell per axis.
    pub fn new(window: TorusWindow, min_cell_side: f64) -> Self {
        let l = window.side();
        let n = if min_cell_side > 0.0 && min_cell_side.is_finite() {
            ((l / min_cell_side).floor() as usize).clamp(1, 1024)
        } else {
            1
        };
        let total = n.pow(window.dimension() as u32);
        Configuration {
            window,
            cells_per_axis: n,
            cell_side: l / n as f64,
            cells: vec![Vec::new(); total],
            ids: Vec::new(),
            positions: Vec::new(),
            cell_of: Vec::new(),
            slot_of: HashMap::new(),
            generation: 0,
        }
    }

    pub fn from_points(window: TorusWindow, min_cell_side: f64, points: impl IntoIterator<Item = Position>) -> Self {
        let mut cfg = Self::new(window, min_cell_side);
        for p in points {
            cfg.insert(p);
        }
        cfg
    }

    pub fn window(&self) -> &TorusWindow {
        &self.window
    }

    /// Actual cell side (`L / cells_per_axis`).
    pub fn cell_side(&self) -> f64 {
        self.cell_side
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of ids handed out so far.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Positions in slot order.
    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Ids in slot order.
    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn slot(&self, id: PointId) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn position(&self, id: PointId) -> Option<Position> {
        self.slot(id).map(|s| self.positions[s])
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointId, Position)> + '_ {
        self.ids.iter().copied().zip(self.positions.iter().copied())
    }

    fn cell_coord(&self, c: f64) -> usize {
        ((c / self.cell_side) as usize).min(self.cells_per_axis - 1)
    }

    fn cell_index(&self, p: &Position) -> usize {
        let n = self.cells_per_axis;
        match self.window.dimension() {
            1 => self.cell_coord(p.0[0]),
            _ => self.cell_coord(p.0[0]) * n + self.cell_coord(p.0[1]),
        }
    }

    /// Inserts a point (wrapped onto the torus) and returns its new id.
    /// The point occupies slot `len() - 1`.
    pub fn insert(&mut self, p: Position) -> PointId {
        let p = self.window.wrap(p);
        let id = PointId(self.generation);
        self.generation += 1;
        let slot = self.positions.len();
        let cell = self.cell_index(&p);
        self.cells[cell].push(slot);
        self.ids.push(id);
        self.positions.push(p);
        self.cell_of.push(cell);
        self.slot_of.insert(id, slot);
        id
    }

    /// Removes the point in `slot`. The point formerly in the last slot moves
    /// into `slot` (same contract as `Vec::swap_remove`).
    pub fn remove_slot(&mut self, slot: usize) -> (PointId, Position) {
        let last = self.positions.len() - 1;
        let cell = self.cell_of[slot];
        let members = &mut self.cells[cell];
        let at = members.iter().position(|&s| s == slot).expect("cell index out of sync");
        members.swap_remove(at);
        if slot != last {
            let moved_cell = self.cell_of[last];
            let entry = self.cells[moved_cell]
                .iter_mut()
                .find(|s| **s == last)
                .expect("cell index out of sync");
            *entry = slot;
            self.slot_of.insert(self.ids[last], slot);
        }
        let id = self.ids.swap_remove(slot);
        let pos = self.positions.swap_remove(slot);
        self.cell_of.swap_remove(slot);
        self.slot_of.remove(&id);
        (id, pos)
    }

    pub fn remove(&mut self, id: PointId) -> Option<Position> {
        let slot = self.slot(id)?;
        Some(self.remove_slot(slot).1)
    }

    fn neighbor_cells(&self, p: &Position) -> ([usize; 9], usize) {
        let n = self.cells_per_axis as isize;
        let mut out = [usize::MAX; 9];
        let mut len = 0;
        let mut push = |c: usize| {
            if !out[..len].contains(&c) {
                out[len] = c;
                len += 1;
            }
        };
        let cx = self.cell_coord(p.0[0]) as isize;
        match self.window.dimension() {
            1 => {
                for dx in -1..=1 {
                    push((cx + dx).rem_euclid(n) as usize);
                }
            }
            _ => {
                let cy = self.cell_coord(p.0[1]) as isize;
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        push(((cx + dx).rem_euclid(n) * n + (cy + dy).rem_euclid(n)) as usize);
                    }
                }
            }
        }
        (out, len)
    }

    /// Calls `f(slot, distance)` for every point within torus distance `radius`
    /// of `x`, skipping `skip_slot`. Requires `radius <= cell_side()`.
    #[inline]
    pub fn for_each_within(&self, x: &Position, radius: f64, skip_slot: Option<usize>, mut f: impl FnMut(usize, f64)) {
        debug_assert!(radius <= self.cell_side);
        let (cells, len) = self.neighbor_cells(x);
        for &c in &cells[..len] {
            for &slot in &self.cells[c] {
                if Some(slot) == skip_slot {
                    continue;
                }
                let d = self.window.distance(x, &self.positions[slot]);
                if d <= radius {
                    f(slot, d);
                }
            }
        }
    }

    /// Points within torus distance `radius` of `x`, excluding `exclude`.
    pub fn neighbors_within(&self, x: &Position, radius: f64, exclude: Option<PointId>) -> Result<Vec<(PointId, f64)>> {
        if !(radius >= 0.0) {
            return arg(format!("query radius {radius} must be >= 0"));
        }
        if radius > self.cell_side {
            return arg(format!("query radius {radius} exceeds cell side {}", self.cell_side));
        }
        let skip = exclude.and_then(|id| self.slot(id));
        let mut out = Vec::new();
        self.for_each_within(x, radius, skip, |slot, d| out.push((self.ids[slot], d)));
        Ok(out)
    }

    /// `N_Λ(γ) = |γ ∩ Λ|`.
    pub fn count_in_box(&self, b: &AxisBox) -> usize {
        self.positions.iter().filter(|p| b.contains(p)).count()
    }

    /// Cell membership rebuilt from positions, each cell sorted.
    pub fn rebuilt_index(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.cells.len()];
        for (slot, p) in self.positions.iter().enumerate() {
            cells[self.cell_index(p)].push(slot);
        }
        cells
    }

    /// True when the incrementally maintained cell index equals a fresh rebuild.
    pub fn index_consistent(&self) -> bool {
        let fresh = self.rebuilt_index();
        self.cells.iter().zip(&fresh).all(|(a, b)| {
            let mut a = a.clone();
            a.sort_unstable();
            a == *b
        }) && self.slot_of.len() == self.ids.len()
            && self.ids.iter().enumerate().all(|(s, id)| self.slot_of[id] == s)
    }
}
