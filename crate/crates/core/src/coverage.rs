//! Coverage fields, survival curves and plug-in level sets.
//!
//! Cell values are always integers over a common denominator: replicate hit
//! counts over `n` for empirical fields, and quantized probabilities over
//! `2^b` for oracle fields. Every threshold comparison is therefore exact.

use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::boolean::BooleanConfig;
use crate::error::{Error, Result};
use crate::exact::{self, Exact};
use crate::grid::{GridSpec, Mask};

/// Default quantization of oracle coverage values: `2^-20`.
pub const DEFAULT_RESOLUTION_BITS: u32 = 20;

/// A grid of integer cell values in `[0, denominator]`, read as fractions.
pub trait ValueField {
    fn grid(&self) -> GridSpec;
    fn denominator(&self) -> u32;
    fn values(&self) -> &[u32];

    fn value_at(&self, index: usize) -> f64 {
        f64::from(self.values()[index]) / f64::from(self.denominator())
    }
}

/// Plain integer-valued field; produced by anchor subsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelField {
    grid: GridSpec,
    denominator: u32,
    values: Vec<u32>,
}

impl LevelField {
    pub fn new(grid: GridSpec, denominator: u32, values: Vec<u32>) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::InvalidArgument("zero denominator".into()));
        }
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > denominator) {
            return Err(Error::InvalidArgument(format!(
                "value {v} exceeds denominator {denominator}"
            )));
        }
        Ok(LevelField {
            grid,
            denominator,
            values,
        })
    }
}

impl ValueField for LevelField {
    fn grid(&self) -> GridSpec {
        self.grid
    }
    fn denominator(&self) -> u32 {
        self.denominator
    }
    fn values(&self) -> &[u32] {
        &self.values
    }
}

/// Samples a field at the anchors of a coarser level: the level-`k` cell with
/// lower corner `x` takes the value of the base cell containing `x`.
pub fn subsample_anchors<F: ValueField + ?Sized>(source: &F, level: u8) -> Result<LevelField> {
    let base = source.grid();
    if level > base.level() {
        return Err(Error::LevelTooFine {
            requested: level,
            base: base.level(),
        });
    }
    let coarse = base.at_level(level)?;
    let shift = (base.level() - level) as usize;
    let values = source.values();
    let sampled = (0..coarse.cell_count())
        .map(|ci| {
            let c = coarse.coords(ci);
            values[base.index([c[0] << shift, c[1] << shift, c[2] << shift])]
        })
        .collect();
    Ok(LevelField {
        grid: coarse,
        denominator: source.denominator(),
        values: sampled,
    })
}

/// Per-cell hit counts of `n` replicate masks: `p_n = counts / n`.
#[derive(Clone, PartialEq)]
pub struct CoverageField {
    grid: GridSpec,
    n: u32,
    counts: Vec<u32>,
}

impl fmt::Debug for CoverageField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoverageField")
            .field("grid", &self.grid)
            .field("n", &self.n)
            .field("total", &self.total_hits())
            .finish()
    }
}

impl CoverageField {
    pub fn from_counts(grid: GridSpec, n: u32, counts: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("coverage field with zero replicates"));
        }
        let f = LevelField::new(grid, n, counts)?;
        Ok(CoverageField {
            grid,
            n,
            counts: f.values,
        })
    }

    pub fn replicates(&self) -> u32 {
        self.n
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total_hits(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// `∫ p_n dλ`, which equals the mean replicate volume `Λ_n`.
    pub fn integral_exact(&self) -> Exact {
        exact::ratio(
            self.total_hits() as i128,
            i128::from(self.n) * self.grid.cell_count() as i128,
        )
    }

    pub fn mean_volume_exact(&self) -> Exact {
        self.integral_exact()
    }

    pub fn mean_volume(&self) -> f64 {
        exact::to_f64(&self.integral_exact())
    }

    pub fn coverage_at(&self, index: usize) -> f64 {
        f64::from(self.counts[index]) / f64::from(self.n)
    }
}

impl ValueField for CoverageField {
    fn grid(&self) -> GridSpec {
        self.grid
    }
    fn denominator(&self) -> u32 {
        self.n
    }
    fn values(&self) -> &[u32] {
        &self.counts
    }
}

/// Bit-sliced per-cell counter: plane `p` holds bit `p` of every cell's count,
/// so adding a mask costs a short carry chain per 64-cell word.
#[derive(Clone, Debug)]
pub struct CoverageAccumulator {
    grid: GridSpec,
    n: u32,
    planes: Vec<Vec<u64>>,
}

impl CoverageAccumulator {
    pub fn new(grid: GridSpec) -> Self {
        CoverageAccumulator {
            grid,
            n: 0,
            planes: Vec::new(),
        }
    }

    pub fn replicates(&self) -> u32 {
        self.n
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn add(&mut self, mask: &Mask) -> Result<()> {
        self.grid.ensure_same(&mask.grid())?;
        let words = mask.words();
        for (wi, &w) in words.iter().enumerate() {
            let mut carry = w;
            let mut p = 0;
            while carry != 0 {
                if p == self.planes.len() {
                    self.planes.push(vec![0; words.len()]);
                }
                let t = self.planes[p][wi];
                self.planes[p][wi] = t ^ carry;
                carry &= t;
                p += 1;
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Adds another accumulator's counts (ripple-carry over planes).
    pub fn merge(&mut self, other: &CoverageAccumulator) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        let words = self.grid.cell_count().div_ceil(64);
        let depth = self.planes.len().max(other.planes.len()) + 1;
        while self.planes.len() < depth {
            self.planes.push(vec![0; words]);
        }
        for wi in 0..words {
            let mut carry = 0u64;
            for p in 0..depth {
                let a = self.planes[p][wi];
                let b = other.planes.get(p).map_or(0, |pl| pl[wi]);
                self.planes[p][wi] = a ^ b ^ carry;
                carry = (a & b) | (carry & (a ^ b));
            }
            debug_assert_eq!(carry, 0);
        }
        while self.planes.last().is_some_and(|pl| pl.iter().all(|&w| w == 0)) {
            self.planes.pop();
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finish(self) -> Result<CoverageField> {
        if self.n == 0 {
            return Err(Error::EmptyInput("no masks accumulated"));
        }
        let cells = self.grid.cell_count();
        let mut counts = vec![0u32; cells];
        for (p, plane) in self.planes.iter().enumerate() {
            for (wi, &w) in plane.iter().enumerate() {
                let mut bits = w;
                while bits != 0 {
                    let j = bits.trailing_zeros() as usize;
                    counts[wi * 64 + j] += 1 << p;
                    bits &= bits - 1;
                }
            }
        }
        Ok(CoverageField {
            grid: self.grid,
            n: self.n,
            counts,
        })
    }
}

const ACCUMULATE_CHUNK: usize = 32;

/// Empirical coverage of replicate masks on a common grid.
pub fn accumulate(masks: &[Mask]) -> Result<CoverageField> {
    let first = masks.first().ok_or(Error::EmptyInput("no masks"))?;
    let grid = first.grid();
    if let Some(bad) = masks.iter().find(|m| m.grid() != grid) {
        return Err(Error::GridMismatch {
            left: grid.to_string(),
            right: bad.grid().to_string(),
        });
    }
    let partials: Vec<CoverageAccumulator> = masks
        .par_chunks(ACCUMULATE_CHUNK)
        .map(|chunk| {
            let mut acc = CoverageAccumulator::new(grid);
            for m in chunk {
                acc.add(m).expect("grids checked above");
            }
            acc
        })
        .collect();
    let mut total = CoverageAccumulator::new(grid);
    for p in &partials {
        total.merge(p)?;
    }
    total.finish()
}

/// `Λ_n = (1/n) Σ λ(X_i)` as an exact rational.
pub fn empirical_mean_volume(masks: &[Mask]) -> Result<Exact> {
    let first = masks.first().ok_or(Error::EmptyInput("no masks"))?;
    let grid = first.grid();
    let mut cells: i128 = 0;
    for m in masks {
        grid.ensure_same(&m.grid())?;
        cells += m.count_ones() as i128;
    }
    Ok(exact::ratio(cells, masks.len() as i128 * grid.cell_count() as i128))
}

/// Right-continuous non-increasing step function `F(α) = λ{p > α}` on `[0,1]`.
///
/// Stored as breakpoints `(α_i, F_i)` with `α_0 = 0`: `F(α) = F_i` on
/// `[α_i, α_{i+1})`, and the last value holds through `α = 1`. For `α < 0`
/// the curve returns the total support volume.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalCurve {
    steps: Vec<(Exact, Exact)>,
    total: Exact,
}

impl SurvivalCurve {
    pub fn from_steps(steps: Vec<(Exact, Exact)>, total: Exact) -> Result<Self> {
        let first = steps.first().ok_or(Error::EmptyInput("survival curve without steps"))?;
        if !first.0.is_zero() {
            return Err(Error::InvalidArgument("first breakpoint must be at alpha = 0".into()));
        }
        if first.1 > total {
            return Err(Error::InvalidArgument("F(0) exceeds total volume".into()));
        }
        for w in steps.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 > w[0].1 {
                return Err(Error::InvalidArgument(
                    "breakpoints must increase in alpha with non-increasing values".into(),
                ));
            }
        }
        if steps.last().is_some_and(|s| s.0 > Exact::one()) {
            return Err(Error::InvalidArgument("breakpoint beyond alpha = 1".into()));
        }
        Ok(SurvivalCurve { steps, total })
    }

    pub fn steps(&self) -> &[(Exact, Exact)] {
        &self.steps
    }

    pub fn total(&self) -> Exact {
        self.total
    }

    pub fn eval_exact(&self, alpha: &Exact) -> Exact {
        if *alpha < Exact::zero() {
            return self.total;
        }
        let pos = self.steps.partition_point(|(a, _)| a <= alpha);
        self.steps[pos - 1].1
    }

    /// `F(α)` with breakpoints compared as `f64`, so `eval(0.7)` sees a
    /// breakpoint at `7/10`.
    pub fn eval(&self, alpha: f64) -> f64 {
        if alpha < 0.0 {
            return exact::to_f64(&self.total);
        }
        let pos = self.steps.partition_point(|(a, _)| exact::to_f64(a) <= alpha);
        exact::to_f64(&self.steps[pos - 1].1)
    }

    /// `F(α⁻)`.
    pub fn left_limit(&self, alpha: &Exact) -> Exact {
        if *alpha <= Exact::zero() {
            return self.total;
        }
        let pos = self.steps.partition_point(|(a, _)| a < alpha);
        self.steps[pos - 1].1
    }

    /// `F(α⁻) - F(α) = λ{p = α}`.
    pub fn jump_at(&self, alpha: &Exact) -> Exact {
        self.left_limit(alpha) - self.eval_exact(alpha)
    }

    /// Largest interval of constancy of `F` inside `(0,1)` whose interior
    /// contains `alpha`, as `(left, right)`; `None` when `alpha` is a breakpoint.
    pub fn plateau_around(&self, alpha: &Exact) -> Option<(Exact, Exact)> {
        if self.steps.iter().any(|(a, _)| a == alpha) {
            return None;
        }
        let pos = self.steps.partition_point(|(a, _)| a <= alpha);
        let left = self.steps[pos - 1].0;
        let right = self.steps.get(pos).map_or(Exact::one(), |s| s.0);
        Some((left, right))
    }
}

/// Exact survival curve of a field: one breakpoint per occupied value.
pub fn survival_curve<F: ValueField + ?Sized>(source: &F) -> SurvivalCurve {
    let denom = source.denominator() as usize;
    let mut hist = vec![0u64; denom + 1];
    for &v in source.values() {
        hist[v as usize] += 1;
    }
    let cells = source.grid().cell_count() as i128;
    let d = denom as i128;
    let mut above: i128 = cells - hist[0] as i128;
    let mut steps = vec![(Exact::zero(), exact::ratio(above, cells))];
    for (v, &h) in hist.iter().enumerate().skip(1) {
        if h == 0 {
            continue;
        }
        above -= h as i128;
        steps.push((exact::ratio(v as i128, d), exact::ratio(above, cells)));
    }
    SurvivalCurve {
        steps,
        total: Exact::one(),
    }
}

/// Smallest integer cell value included in `{value > α}` (strict) or
/// `{value ≥ α}` (non-strict), for values over `denom`.
pub(crate) fn min_included_value(alpha: &Exact, denom: u32, strict: bool) -> i128 {
    let scaled = alpha * Exact::from_integer(i128::from(denom));
    if strict {
        exact::floor_i128(&scaled) + 1
    } else {
        exact::ceil_i128(&scaled)
    }
}

pub fn level_set_exact<F: ValueField + ?Sized>(source: &F, alpha: &Exact, strict: bool) -> Mask {
    let min = min_included_value(alpha, source.denominator(), strict);
    let grid = source.grid();
    if min <= 0 {
        return Mask::full(grid);
    }
    if min > i128::from(source.denominator()) {
        return Mask::empty(grid);
    }
    let min = min as u32;
    let values = source.values();
    Mask::from_fn(grid, |i| values[i] >= min)
}

/// `{p > α}` (strict) or `{p ≥ α}` on the field's own grid.
/// Like [`level_set_exact`] with cell values compared as `f64`.
pub fn level_set<F: ValueField + ?Sized>(source: &F, alpha: f64, strict: bool) -> Mask {
    let d = f64::from(source.denominator());
    let values = source.values();
    Mask::from_fn(source.grid(), |i| {
        let v = f64::from(values[i]) / d;
        if strict {
            v > alpha
        } else {
            v >= alpha
        }
    })
}

/// Grid approximation at level `k` of the base-level set `{p > α}` (or `≥`).
pub fn level_set_grid<F: ValueField + ?Sized>(
    source: &F,
    alpha: f64,
    level: u8,
    strict: bool,
) -> Result<Mask> {
    level_set(source, alpha, strict).grid_approximation(level)
}

/// Quantized samples of an analytic coverage function at cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleField {
    field: LevelField,
    resolution_bits: u32,
    provenance: String,
}

impl OracleField {
    pub fn from_probabilities(
        grid: GridSpec,
        resolution_bits: u32,
        provenance: impl Into<String>,
        probabilities: &[f64],
    ) -> Result<Self> {
        if !(1..=30).contains(&resolution_bits) {
            return Err(Error::InvalidArgument(format!(
                "resolution of {resolution_bits} bits outside 1..=30"
            )));
        }
        if probabilities.len() != grid.cell_count() {
            return Err(Error::InvalidArgument("one probability per cell required".into()));
        }
        let denom = 1u32 << resolution_bits;
        let scale = f64::from(denom);
        let values = probabilities
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * scale).round() as u32)
            .collect();
        Ok(OracleField {
            field: LevelField {
                grid,
                denominator: denom,
                values,
            },
            resolution_bits,
            provenance: provenance.into(),
        })
    }

    pub fn from_fn(
        grid: GridSpec,
        resolution_bits: u32,
        provenance: impl Into<String>,
        p: impl Fn(&[f64]) -> f64 + Sync,
    ) -> Result<Self> {
        let d = grid.dim();
        let probs: Vec<f64> = (0..grid.cell_count())
            .into_par_iter()
            .map(|i| p(&grid.cell_center(i)[..d]))
            .collect();
        Self::from_probabilities(grid, resolution_bits, provenance, &probs)
    }

    pub fn resolution_bits(&self) -> u32 {
        self.resolution_bits
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Robbins integral `∫ p dλ` of the quantized field.
    pub fn integral_exact(&self) -> Exact {
        let total: i128 = self.field.values.iter().map(|&v| i128::from(v)).sum();
        exact::ratio(
            total,
            i128::from(self.field.denominator) * self.field.grid.cell_count() as i128,
        )
    }

    pub fn integral(&self) -> f64 {
        exact::to_f64(&self.integral_exact())
    }
}

impl ValueField for OracleField {
    fn grid(&self) -> GridSpec {
        self.field.grid
    }
    fn denominator(&self) -> u32 {
        self.field.denominator
    }
    fn values(&self) -> &[u32] {
        &self.field.values
    }
}

/// A coverage function `x ↦ p(x)` with a tag naming where it comes from.
#[derive(Clone)]
pub enum CoverageOracle {
    Constant(f64),
    /// Indicator of a rasterized set: `p = 1` on the cells of the mask.
    Indicator(Mask),
    Boolean(Box<BooleanConfig>),
    Custom {
        tag: String,
        p: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for CoverageOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.provenance())
    }
}

impl CoverageOracle {
    pub fn custom(tag: impl Into<String>, p: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CoverageOracle::Custom {
            tag: tag.into(),
            p: Arc::new(p),
        }
    }

    pub fn provenance(&self) -> String {
        match self {
            CoverageOracle::Constant(c) => format!("constant({c})"),
            CoverageOracle::Indicator(m) => format!("indicator({}, volume {})", m.grid(), m.volume()),
            CoverageOracle::Boolean(cfg) => cfg.describe(),
            CoverageOracle::Custom { tag, .. } => tag.clone(),
        }
    }

    /// Pointwise evaluation. Boolean models use direct quadrature for `φ`,
    /// which is accurate but slow; use [`CoverageOracle::sample`] for grids.
    pub fn coverage_at(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            CoverageOracle::Constant(c) => *c,
            CoverageOracle::Indicator(m) => {
                if m.get(m.grid().locate(x)) {
                    1.0
                } else {
                    0.0
                }
            }
            CoverageOracle::Boolean(cfg) => crate::boolean::analytic_coverage(x, cfg)?,
            CoverageOracle::Custom { p, .. } => p(x),
        })
    }

    /// Quantized field of cell-centre values on `grid`.
    pub fn sample(&self, grid: GridSpec, resolution_bits: u32) -> Result<OracleField> {
        let tag = self.provenance();
        match self {
            CoverageOracle::Constant(c) => {
                let c = *c;
                OracleField::from_fn(grid, resolution_bits, tag, move |_| c)
            }
            CoverageOracle::Indicator(m) => {
                if m.grid().dim() != grid.dim() {
                    return Err(Error::GridMismatch {
                        left: m.grid().to_string(),
                        right: grid.to_string(),
                    });
                }
                OracleField::from_fn(grid, resolution_bits, tag, |x| {
                    if m.get(m.grid().locate(x)) {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            CoverageOracle::Boolean(cfg) => {
                let probs = crate::boolean::coverage_field(cfg, grid)?;
                OracleField::from_probabilities(grid, resolution_bits, tag, &probs.values)
            }
            CoverageOracle::Custom { p, .. } => {
                OracleField::from_fn(grid, resolution_bits, tag, |x| p(x))
            }
        }
    }
}
