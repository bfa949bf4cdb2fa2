//! Dyadic grids on the unit cube and bit-packed cell sets.
//!
//! A grid at level `k` in dimension `d` splits `[0,1]^d` into `2^{kd}`
//! half-open cells `[x, x+r)^d` with mesh `r = 2^{-k}`. Cells are addressed by
//! a linear index with axis 0 fastest, so a run of consecutive indices along
//! axis 0 is a contiguous bit range in a [`Mask`].

use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::exact::{self, Exact};

/// Largest supported `k * d`; keeps every cell index and fixed-point weight
/// file addressable with 32-bit offsets.
pub const MAX_CELL_BITS: u32 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    dim: u8,
    level: u8,
}

impl GridSpec {
    pub fn new(dim: u8, level: u8) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if u32::from(dim) * u32::from(level) > MAX_CELL_BITS {
            return Err(Error::InvalidGrid(format!(
                "2^({level}*{dim}) cells exceed the addressable range 2^{MAX_CELL_BITS}"
            )));
        }
        Ok(GridSpec { dim, level })
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn cells_per_axis(&self) -> usize {
        1usize << self.level
    }

    pub fn cell_count(&self) -> usize {
        1usize << (self.level as usize * self.dim as usize)
    }

    /// Mesh `r = 2^{-k}`.
    pub fn mesh(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn cell_volume(&self) -> f64 {
        (-((self.level as usize * self.dim as usize) as f64)).exp2()
    }

    /// Volume of `cells` cells as an exact rational.
    pub fn cells_volume(&self, cells: i128) -> Exact {
        exact::ratio(cells, self.cell_count() as i128)
    }

    /// The same dimension at another level.
    pub fn at_level(&self, level: u8) -> Result<GridSpec> {
        GridSpec::new(self.dim, level)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = self.level as usize;
        let mask = self.cells_per_axis() - 1;
        let mut out = [0usize; 3];
        for (axis, c) in out.iter_mut().enumerate().take(self.dim()) {
            *c = (index >> (axis * k)) & mask;
        }
        out
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let k = self.level as usize;
        let mut idx = 0;
        for (axis, &c) in coords.iter().enumerate().take(self.dim()) {
            idx |= c << (axis * k);
        }
        idx
    }

    /// Lower corner (lattice anchor) of a cell.
    pub fn cell_anchor(&self, index: usize) -> [f64; 3] {
        let r = self.mesh();
        let c = self.coords(index);
        [c[0] as f64 * r, c[1] as f64 * r, c[2] as f64 * r]
    }

    pub fn cell_center(&self, index: usize) -> [f64; 3] {
        let r = self.mesh();
        let c = self.coords(index);
        let mut out = [0.0; 3];
        for axis in 0..self.dim() {
            out[axis] = (c[axis] as f64 + 0.5) * r;
        }
        out
    }

    /// Index of the cell whose half-open box contains `x` (clamped to the cube).
    pub fn locate(&self, x: &[f64]) -> usize {
        let n = self.cells_per_axis();
        let mut coords = [0usize; 3];
        for axis in 0..self.dim() {
            let v = (x[axis] * n as f64).floor();
            coords[axis] = if v < 0.0 { 0 } else { (v as usize).min(n - 1) };
        }
        self.index(coords)
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d={} k={}", self.dim, self.level)
    }
}

/// Bit-packed indicator of a union of grid cells.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    grid: GridSpec,
    words: Vec<u64>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("grid", &self.grid)
            .field("set_cells", &self.count_ones())
            .finish()
    }
}

fn word_count(cells: usize) -> usize {
    cells.div_ceil(64)
}

impl Mask {
    pub fn empty(grid: GridSpec) -> Self {
        Mask {
            grid,
            words: vec![0; word_count(grid.cell_count())],
        }
    }

    pub fn full(grid: GridSpec) -> Self {
        let mut m = Mask {
            grid,
            words: vec![!0; word_count(grid.cell_count())],
        };
        m.clear_tail();
        m
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Mask::empty(grid);
        for i in 0..grid.cell_count() {
            if f(i) {
                m.words[i >> 6] |= 1 << (i & 63);
            }
        }
        m
    }

    pub(crate) fn from_words(grid: GridSpec, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), word_count(grid.cell_count()));
        let mut m = Mask { grid, words };
        m.clear_tail();
        m
    }

    fn clear_tail(&mut self) {
        let cells = self.grid.cell_count();
        let rem = cells & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.words[index >> 6] >> (index & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        let bit = 1u64 << (index & 63);
        if value {
            self.words[index >> 6] |= bit;
        } else {
            self.words[index >> 6] &= !bit;
        }
    }

    /// Sets every cell with linear index in `lo..hi`.
    pub fn set_range(&mut self, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        let (wl, wh) = (lo >> 6, (hi - 1) >> 6);
        let lo_mask = !0u64 << (lo & 63);
        let hi_mask = !0u64 >> (63 - ((hi - 1) & 63));
        if wl == wh {
            self.words[wl] |= lo_mask & hi_mask;
            return;
        }
        self.words[wl] |= lo_mask;
        for w in &mut self.words[wl + 1..wh] {
            *w = !0;
        }
        self.words[wh] |= hi_mask;
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn volume(&self) -> f64 {
        self.count_ones() as f64 * self.grid.cell_volume()
    }

    pub fn volume_exact(&self) -> Exact {
        self.grid.cells_volume(self.count_ones() as i128)
    }

    fn zip_count(&self, other: &Mask, op: impl Fn(u64, u64) -> u64) -> Result<u64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| u64::from(op(a, b).count_ones()))
            .sum())
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<u64> {
        self.zip_count(other, |a, b| a & b)
    }

    pub fn symm_diff_count(&self, other: &Mask) -> Result<u64> {
        self.zip_count(other, |a, b| a ^ b)
    }

    /// `self ⊆ other`.
    pub fn is_subset(&self, other: &Mask) -> Result<bool> {
        Ok(self.zip_count(other, |a, b| a & !b)? == 0)
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        let mut out = self.clone();
        out.union_with(other)?;
        Ok(out)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.grid.ensure_same(&other.grid)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect();
        Ok(Mask::from_words(self.grid, words))
    }

    pub fn complement(&self) -> Mask {
        Mask::from_words(self.grid, self.words.iter().map(|w| !w).collect())
    }

    /// Grid approximation at a coarser level `k`: the level-`k` cell `[x, x+r)^d`
    /// is kept iff its anchor `x` lies in the set, i.e. iff the base cell
    /// containing `x` is set. Half-open cells resolve ties at lattice points.
    pub fn grid_approximation(&self, level: u8) -> Result<Mask> {
        let base = self.grid.level();
        if level > base {
            return Err(Error::LevelTooFine {
                requested: level,
                base,
            });
        }
        if level == base {
            return Ok(self.clone());
        }
        let coarse = self.grid.at_level(level)?;
        let shift = (base - level) as usize;
        let fine_k = base as usize;
        let ck = level as usize;
        let cmask = coarse.cells_per_axis() - 1;
        Ok(Mask::from_fn(coarse, |ci| {
            let mut fi = 0usize;
            for axis in 0..coarse.dim() {
                let c = (ci >> (axis * ck)) & cmask;
                fi |= (c << shift) << (axis * fine_k);
            }
            self.get(fi)
        }))
    }

    /// Exact refinement to a finer dyadic level: every set cell becomes a full
    /// block of `2^{(K-k)d}` cells.
    pub fn refine(&self, level: u8) -> Result<Mask> {
        let coarse_k = self.grid.level();
        if level < coarse_k {
            return Err(Error::InvalidArgument(format!(
                "cannot refine level {coarse_k} to coarser level {level}"
            )));
        }
        if level == coarse_k {
            return Ok(self.clone());
        }
        let fine = self.grid.at_level(level)?;
        let mut out = Mask::empty(fine);
        for ci in self.iter_ones() {
            for_each_block_row(&self.grid, &fine, ci, |lo, hi| out.set_range(lo, hi));
        }
        Ok(out)
    }

    /// Cells that have at least one face-neighbour inside the cube with the
    /// opposite indicator.
    pub fn boundary_cells(&self) -> Mask {
        let g = self.grid;
        let n = g.cells_per_axis();
        let k = g.level() as usize;
        Mask::from_fn(g, |i| {
            let v = self.get(i);
            let c = g.coords(i);
            for axis in 0..g.dim() {
                let stride = 1usize << (axis * k);
                if c[axis] > 0 && self.get(i - stride) != v {
                    return true;
                }
                if c[axis] + 1 < n && self.get(i + stride) != v {
                    return true;
                }
            }
            false
        })
    }

    /// Sets every cell whose centre lies in the closed ball `B(center, radius)`.
    pub fn paint_ball(&mut self, center: &[f64], radius: f64) {
        if !(radius > 0.0) {
            return;
        }
        let g = self.grid;
        let d = g.dim();
        let n = g.cells_per_axis();
        let scale = n as f64;
        let r2 = radius * radius;
        // cell index range whose centres lie within [c - w, c + w] on one axis
        let span = |c: f64, w: f64| -> Option<(usize, usize)> {
            let lo = ((c - w) * scale - 0.5).ceil();
            let hi = ((c + w) * scale - 0.5).floor();
            let lo = lo.max(0.0);
            let hi = hi.min(n as f64 - 1.0);
            if lo > hi {
                None
            } else {
                Some((lo as usize, hi as usize))
            }
        };
        let center_of = |i: usize| (i as f64 + 0.5) / scale;
        let k = g.level() as usize;
        let paint_row = |row_base: usize, rem2: f64, this: &mut Mask| {
            if rem2 < 0.0 {
                return;
            }
            if let Some((a, b)) = span(center[0], rem2.sqrt()) {
                this.set_range(row_base + a, row_base + b + 1);
            }
        };
        match d {
            1 => paint_row(0, r2, self),
            2 => {
                if let Some((a1, b1)) = span(center[1], radius) {
                    for i1 in a1..=b1 {
                        let dy = center_of(i1) - center[1];
                        paint_row(i1 << k, r2 - dy * dy, self);
                    }
                }
            }
            _ => {
                if let Some((a2, b2)) = span(center[2], radius) {
                    for i2 in a2..=b2 {
                        let dz = center_of(i2) - center[2];
                        let rz = r2 - dz * dz;
                        if rz < 0.0 {
                            continue;
                        }
                        if let Some((a1, b1)) = span(center[1], rz.sqrt()) {
                            for i1 in a1..=b1 {
                                let dy = center_of(i1) - center[1];
                                paint_row((i2 << (2 * k)) | (i1 << k), rz - dy * dy, self);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cell-centre rasterization of the closed ball `B(center, radius)` clipped to
/// the cube.
pub fn rasterize_ball(center: &[f64], radius: f64, grid: GridSpec) -> Mask {
    let mut m = Mask::empty(grid);
    m.paint_ball(center, radius);
    m
}

/// Calls `f(lo, hi)` for each contiguous axis-0 run of fine cells covered by
/// the coarse cell `ci`.
pub(crate) fn for_each_block_row(
    coarse: &GridSpec,
    fine: &GridSpec,
    ci: usize,
    mut f: impl FnMut(usize, usize),
) {
    let shift = (fine.level() - coarse.level()) as usize;
    let s = 1usize << shift;
    let fk = fine.level() as usize;
    let c = coarse.coords(ci);
    let base = [c[0] << shift, c[1] << shift, c[2] << shift];
    match coarse.dim() {
        1 => f(base[0], base[0] + s),
        2 => {
            for j1 in 0..s {
                let row = ((base[1] + j1) << fk) | base[0];
                f(row, row + s);
            }
        }
        _ => {
            for j2 in 0..s {
                for j1 in 0..s {
                    let row = ((base[2] + j2) << (2 * fk)) | ((base[1] + j1) << fk) | base[0];
                    f(row, row + s);
                }
            }
        }
    }
}

/// Per-cell weights in `[0,1]`, stored as a bit mask of unit-weight cells plus
/// a sparse list of cells with a fractional weight strictly inside `(0,1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMask {
    full: Mask,
    partial: Vec<(usize, Exact)>,
}

impl WeightedMask {
    pub fn from_mask(mask: Mask) -> Self {
        WeightedMask {
            full: mask,
            partial: Vec::new(),
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_mask(Mask::empty(grid))
    }

    /// Builds a weighted mask from unit cells and fractional cells. Fractional
    /// entries equal to 0 are dropped and entries equal to 1 move to the unit
    /// set.
    pub fn from_parts(mut full: Mask, partial: Vec<(usize, Exact)>) -> Result<Self> {
        let mut kept: Vec<(usize, Exact)> = Vec::with_capacity(partial.len());
        for (idx, w) in partial {
            if idx >= full.grid().cell_count() {
                return Err(Error::InvalidArgument(format!("cell index {idx} out of range")));
            }
            if w.is_negative() || w > Exact::one() {
                return Err(Error::InvalidArgument(format!("weight {w} outside [0,1]")));
            }
            if full.get(idx) {
                return Err(Error::InvalidArgument(format!(
                    "cell {idx} has both unit and fractional weight"
                )));
            }
            if w.is_zero() {
                continue;
            }
            if w.is_one() {
                full.set(idx, true);
                continue;
            }
            kept.push((idx, w));
        }
        kept.sort_by_key(|(i, _)| *i);
        if kept.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::InvalidArgument("duplicate fractional cell".into()));
        }
        Ok(WeightedMask {
            full,
            partial: kept,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.full.grid()
    }

    /// Cells of weight exactly one.
    pub fn unit_cells(&self) -> &Mask {
        &self.full
    }

    /// Cells of weight strictly between zero and one, sorted by index.
    pub fn fractional_cells(&self) -> &[(usize, Exact)] {
        &self.partial
    }

    pub fn weight(&self, index: usize) -> Exact {
        if self.full.get(index) {
            return Exact::one();
        }
        self.partial
            .binary_search_by_key(&index, |(i, _)| *i)
            .map(|p| self.partial[p].1)
            .unwrap_or_else(|_| Exact::zero())
    }

    /// Cells with positive weight.
    pub fn support(&self) -> Mask {
        let mut m = self.full.clone();
        for (i, _) in &self.partial {
            m.set(*i, true);
        }
        m
    }

    pub fn volume_exact(&self) -> Exact {
        let units = Exact::from_integer(self.full.count_ones() as i128);
        let frac = self.partial.iter().fold(Exact::zero(), |acc, (_, w)| acc + w);
        (units + frac) / Exact::from_integer(self.grid().cell_count() as i128)
    }

    pub fn volume(&self) -> f64 {
        exact::to_f64(&self.volume_exact())
    }

    /// Replicates every weight over the `2^{(K-k)d}` cells it covers at level `K`.
    pub fn refine(&self, level: u8) -> Result<WeightedMask> {
        let full = self.full.refine(level)?;
        if self.partial.is_empty() {
            return Ok(Self::from_mask(full));
        }
        let fine = full.grid();
        let mut partial = Vec::new();
        for (ci, w) in &self.partial {
            for_each_block_row(&self.grid(), &fine, *ci, |lo, hi| {
                partial.extend((lo..hi).map(|i| (i, *w)));
            });
        }
        partial.sort_by_key(|(i, _)| *i);
        Ok(WeightedMask { full, partial })
    }
}

/// Anything with per-cell weights on a grid: indicator masks and weighted masks.
pub trait CellSet {
    fn grid(&self) -> GridSpec;
    fn unit_cells(&self) -> &Mask;
    fn fractional_cells(&self) -> &[(usize, Exact)];

    fn weight_at(&self, index: usize) -> Exact {
        if self.unit_cells().get(index) {
            return Exact::one();
        }
        let p = self.fractional_cells();
        p.binary_search_by_key(&index, |(i, _)| *i)
            .map(|j| p[j].1)
            .unwrap_or_else(|_| Exact::zero())
    }
}

impl CellSet for Mask {
    fn grid(&self) -> GridSpec {
        self.grid
    }
    fn unit_cells(&self) -> &Mask {
        self
    }
    fn fractional_cells(&self) -> &[(usize, Exact)] {
        &[]
    }
}

impl CellSet for WeightedMask {
    fn grid(&self) -> GridSpec {
        self.full.grid()
    }
    fn unit_cells(&self) -> &Mask {
        &self.full
    }
    fn fractional_cells(&self) -> &[(usize, Exact)] {
        &self.partial
    }
}

pub fn volume<A: CellSet + ?Sized>(a: &A) -> f64 {
    exact::to_f64(&volume_exact(a))
}

pub fn volume_exact<A: CellSet + ?Sized>(a: &A) -> Exact {
    let g = a.grid();
    let frac = a.fractional_cells().iter().fold(Exact::zero(), |acc, (_, w)| acc + w);
    (Exact::from_integer(a.unit_cells().count_ones() as i128) + frac)
        / Exact::from_integer(g.cell_count() as i128)
}

/// `Σ |w_A - w_B| r^d`, which is `λ(A △ B)` on indicator weights.
pub fn symm_diff_volume_exact<A, B>(a: &A, b: &B) -> Result<Exact>
where
    A: CellSet + ?Sized,
    B: CellSet + ?Sized,
{
    let g = a.grid();
    g.ensure_same(&b.grid())?;
    let ua = a.unit_cells();
    let ub = b.unit_cells();
    let mut cells = Exact::from_integer(ua.symm_diff_count(ub)? as i128);
    // correct the cells where either side carries a fractional weight
    let (pa, pb) = (a.fractional_cells(), b.fractional_cells());
    let (mut i, mut j) = (0, 0);
    while i < pa.len() || j < pb.len() {
        let idx = match (pa.get(i), pb.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        let wa = if pa.get(i).is_some_and(|x| x.0 == idx) {
            i += 1;
            pa[i - 1].1
        } else if ua.get(idx) {
            Exact::one()
        } else {
            Exact::zero()
        };
        let wb = if pb.get(j).is_some_and(|y| y.0 == idx) {
            j += 1;
            pb[j - 1].1
        } else if ub.get(idx) {
            Exact::one()
        } else {
            Exact::zero()
        };
        if ua.get(idx) != ub.get(idx) {
            cells -= Exact::one();
        }
        cells += (wa - wb).abs();
    }
    Ok(cells / Exact::from_integer(g.cell_count() as i128))
}

pub fn symm_diff_volume<A, B>(a: &A, b: &B) -> Result<f64>
where
    A: CellSet + ?Sized,
    B: CellSet + ?Sized,
{
    Ok(exact::to_f64(&symm_diff_volume_exact(a, b)?))
}
