//! Threshold extraction and volume-matched mean sets.
//!
//! Every estimator here is the same rank-and-fill rule: take all cells with
//! value strictly above the threshold, then fill the tie class at the
//! threshold in ascending cell index until the target volume is reached, with
//! at most one fractional cell. The sandwich `{p > α*} ⊂ K ⊂ {p ≥ α*}` and the
//! exact volume hold by construction.

use num_traits::{One, Zero};

use crate::coverage::{self, CoverageField, CoverageOracle, SurvivalCurve, ValueField};
use crate::error::{Error, Result};
use crate::exact::{self, Exact};
use crate::grid::{GridSpec, Mask, WeightedMask};

/// Jump volume `λ{p = α*}` above which a threshold is reported as sitting on a
/// plateau of `p` (a jump of `F`), i.e. the mean set is not unique.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdReport {
    pub alpha_star: Exact,
    pub beta_star: Exact,
    /// `false` when `{α : F(α) ≥ target}` is empty; `beta_star` is then 0.
    pub beta_defined: bool,
    pub target_volume: Exact,
    /// `λ{p = α*} = F(α*⁻) - F(α*)`.
    pub jump_volume: Exact,
    pub plateau_flag: bool,
}

impl ThresholdReport {
    pub fn from_curve(curve: &SurvivalCurve, target: &Exact, plateau_tol: f64) -> Self {
        let alpha_star = alpha_star(curve, target);
        let (beta_star, beta_defined) = beta_star(curve, target);
        let jump_volume = curve.jump_at(&alpha_star);
        ThresholdReport {
            alpha_star,
            beta_star,
            beta_defined,
            target_volume: *target,
            plateau_flag: exact::to_f64(&jump_volume) > plateau_tol,
            jump_volume,
        }
    }

    pub fn alpha(&self) -> f64 {
        exact::to_f64(&self.alpha_star)
    }

    pub fn beta(&self) -> f64 {
        exact::to_f64(&self.beta_star)
    }

    /// `α* = β*`: the regime where the threshold is asymptotically pinned down.
    pub fn is_regular(&self) -> bool {
        self.alpha_star == self.beta_star
    }
}

/// `inf{α ∈ [0,1] : F(α) ≤ target}`, exact on the step representation.
pub fn alpha_star(curve: &SurvivalCurve, target: &Exact) -> Exact {
    curve
        .steps()
        .iter()
        .find(|(_, f)| f <= target)
        .map_or(Exact::one(), |(a, _)| *a)
}

/// `sup{α ∈ [0,1] : F(α) ≥ target}` and whether the set is non-empty.
pub fn beta_star(curve: &SurvivalCurve, target: &Exact) -> (Exact, bool) {
    let steps = curve.steps();
    let Some(last) = steps.iter().rposition(|(_, f)| f >= target) else {
        return (Exact::zero(), false);
    };
    let sup = steps.get(last + 1).map_or(Exact::one(), |s| s.0);
    (sup, true)
}

/// Rank-and-fill selection on a field: unit weight on `{v > α*}`, then tie
/// cells `{v = α*}` in ascending index, one fractional cell, exact volume.
pub fn rank_fill<F: ValueField + ?Sized>(
    field: &F,
    target: &Exact,
    plateau_tol: f64,
) -> Result<(WeightedMask, ThresholdReport)> {
    if *target < Exact::zero() || *target > Exact::one() {
        return Err(Error::InvalidArgument(format!("target volume {target} outside [0,1]")));
    }
    let curve = coverage::survival_curve(field);
    let report = ThresholdReport::from_curve(&curve, target, plateau_tol);
    let grid = field.grid();
    let scaled = report.alpha_star * Exact::from_integer(i128::from(field.denominator()));
    debug_assert!(scaled.is_integer());
    let tie_value = scaled.to_integer() as u32;
    let values = field.values();

    let mut full = Mask::from_fn(grid, |i| values[i] > tie_value);
    let target_cells = target * Exact::from_integer(grid.cell_count() as i128);
    let remaining = target_cells - Exact::from_integer(full.count_ones() as i128);
    assert!(remaining >= Exact::zero(), "strict level set exceeds target volume");
    let whole = exact::floor_i128(&remaining);
    let frac = remaining - Exact::from_integer(whole);

    let mut partial = Vec::new();
    let mut taken: i128 = 0;
    for (i, _) in values.iter().enumerate().filter(|(_, &v)| v == tie_value) {
        if taken < whole {
            full.set(i, true);
            taken += 1;
        } else {
            if !frac.is_zero() {
                partial.push((i, frac));
            }
            break;
        }
    }
    let filled = Exact::from_integer(taken) + partial.first().map_or(Exact::zero(), |p| p.1);
    assert!(
        filled == remaining,
        "tie class {{p = α*}} too small for the target volume"
    );
    Ok((WeightedMask::from_parts(full, partial)?, report))
}

/// Kovyazin's mean `K_n` on the base grid with target volume `Λ_n`.
pub fn kovyazin_mean(field: &CoverageField, target: &Exact) -> Result<WeightedMask> {
    Ok(rank_fill(field, target, DEFAULT_PLATEAU_TOL)?.0)
}

/// `α*_{n,r} = inf{α : λ({p_n > α}^r) ≤ target}` at mesh level `k`.
pub fn alpha_star_nr(field: &CoverageField, level: u8, target: &Exact) -> Result<Exact> {
    let coarse = coverage::subsample_anchors(field, level)?;
    Ok(alpha_star(&coverage::survival_curve(&coarse), target))
}

/// The grid estimator `K_{n,r}` at level `k`, with its threshold report.
pub fn k_nr_with_report(
    field: &CoverageField,
    level: u8,
    target: &Exact,
    plateau_tol: f64,
) -> Result<(WeightedMask, ThresholdReport)> {
    let coarse = coverage::subsample_anchors(field, level)?;
    rank_fill(&coarse, target, plateau_tol)
}

pub fn k_nr(field: &CoverageField, level: u8, target: &Exact) -> Result<WeightedMask> {
    Ok(k_nr_with_report(field, level, target, DEFAULT_PLATEAU_TOL)?.0)
}

/// Reference Vorob'ev expectation of an oracle on `grid`, filled to
/// `mean_volume`.
pub fn vorobev_from_oracle(
    oracle: &CoverageOracle,
    mean_volume: f64,
    grid: GridSpec,
) -> Result<(WeightedMask, ThresholdReport)> {
    let field = oracle.sample(grid, coverage::DEFAULT_RESOLUTION_BITS)?;
    rank_fill(&field, &exact::from_f64(mean_volume.clamp(0.0, 1.0)), DEFAULT_PLATEAU_TOL)
}
