//! Monte Carlo experiments against Boolean-model oracles.
//!
//! A plan pairs sample sizes `n` with mesh levels `k`. Every `(n, trial)` unit
//! simulates its `n` replicates once from its own substreams and evaluates all
//! levels on the same coverage field. Units run in parallel; rows come back in
//! canonical `(n, k, trial)` order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::boolean::{self, BooleanConfig, ModelKind, RadiusLaw};
use crate::coverage::{
    self, level_set, survival_curve, CoverageField, OracleField, SurvivalCurve, DEFAULT_RESOLUTION_BITS,
};
use crate::error::{Error, Result};
use crate::exact::{self, Exact};
use crate::grid::{symm_diff_volume, WeightedMask};
use crate::vorobev::{self, ThresholdReport, DEFAULT_PLATEAU_TOL};

pub const DEFAULT_EPS_GRID: [f64; 6] = [0.02, 0.05, 0.1, 0.15, 0.2, 0.3];
/// Bracket tolerance around `[α*, β*]`.
pub const BRACKET_TOL: f64 = 0.05;
/// Required fraction of trials inside the bracket.
pub const BRACKET_FRACTION: f64 = 0.95;
/// Required improvement of the median consistency error along a schedule.
pub const CONSISTENCY_FACTOR: f64 = 0.5;
/// Monte Carlo slack on the rate bound, in standard errors.
pub const RATE_SE_SLACK: f64 = 2.0;

const TAG_CONSISTENCY: u8 = 1;
const TAG_RATE: u8 = 2;
const TAG_BRACKET: u8 = 3;
const TAG_FCURVE: u8 = 4;

/// `%.9g`-style formatting.
pub fn fmt9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mant), sign, exp.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Consistency,
    RateCheck,
    Bracket,
    Fcurve,
    Boxdim,
}

/// How the `n` and `k` schedules combine into points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// Every `n` with every `k`.
    Cross,
    /// `n_i` with `k_i`; the schedules must have equal length.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub model: BooleanConfig,
    pub n_schedule: Vec<usize>,
    pub levels: Vec<u8>,
    pub pairing: Pairing,
    pub trials: usize,
    pub kappa: f64,
    pub eps_grid: Vec<f64>,
    pub alpha: f64,
    pub resolution_bits: u32,
}

impl ExperimentPlan {
    /// Defaults: n in {25, 50, 100, 200, 400}, k in {4, ..., 7} capped at the
    /// base level, 20 trials, κ = 1, α = 0.3.
    pub fn new(kind: ExperimentKind, model: BooleanConfig) -> Self {
        let levels = (4..=7).filter(|&k| k <= model.base_level).collect();
        ExperimentPlan {
            kind,
            model,
            n_schedule: vec![25, 50, 100, 200, 400],
            levels,
            pairing: Pairing::Cross,
            trials: 20,
            kappa: 1.0,
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            alpha: 0.3,
            resolution_bits: DEFAULT_RESOLUTION_BITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_schedule.is_empty() || self.levels.is_empty() {
            return Err(Error::InvalidArgument("n and k schedules must be non-empty".into()));
        }
        if self.n_schedule.contains(&0) {
            return Err(Error::InvalidArgument("sample sizes must be positive".into()));
        }
        if let Some(&k) = self.levels.iter().find(|&&k| k > self.model.base_level) {
            return Err(Error::LevelTooFine {
                requested: k,
                base: self.model.base_level,
            });
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("at least one trial is required".into()));
        }
        let d = f64::from(self.model.dim);
        if !(self.kappa > 0.0 && self.kappa <= d) {
            return Err(Error::InvalidArgument(format!("kappa {} outside (0, {d}]", self.kappa)));
        }
        if self.pairing == Pairing::Diagonal && self.n_schedule.len() != self.levels.len() {
            return Err(Error::InvalidArgument(
                "diagonal pairing needs schedules of equal length".into(),
            ));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidArgument("eps grid must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// `(n, k)` points in canonical order.
    pub fn points(&self) -> Vec<(usize, u8)> {
        match self.pairing {
            Pairing::Cross => self
                .n_schedule
                .iter()
                .flat_map(|&n| self.levels.iter().map(move |&k| (n, k)))
                .collect(),
            Pairing::Diagonal => self.n_schedule.iter().copied().zip(self.levels.iter().copied()).collect(),
        }
    }

    /// Units `(n, levels, unit id)`; one coverage field per unit.
    fn units(&self) -> Vec<(usize, Vec<u8>, u64)> {
        let groups: Vec<(usize, Vec<u8>)> = match self.pairing {
            Pairing::Cross => self.n_schedule.iter().map(|&n| (n, self.levels.clone())).collect(),
            Pairing::Diagonal => self.points().into_iter().map(|(n, k)| (n, vec![k])).collect(),
        };
        let trials = self.trials as u64;
        groups
            .into_iter()
            .enumerate()
            .flat_map(|(g, (n, ks))| (0..trials).map(move |t| (n, ks.clone(), g as u64 * trials + t)))
            .collect()
    }

    pub fn metadata(&self) -> Vec<(String, String)> {
        let join = |v: Vec<String>| v.join(" ");
        vec![
            ("experiment".into(), format!("{:?}", self.kind)),
            ("model".into(), self.model.describe()),
            ("seed".into(), self.model.seed.to_string()),
            ("n_schedule".into(), join(self.n_schedule.iter().map(|n| n.to_string()).collect())),
            ("levels".into(), join(self.levels.iter().map(|k| k.to_string()).collect())),
            ("pairing".into(), format!("{:?}", self.pairing)),
            ("trials".into(), self.trials.to_string()),
            ("kappa".into(), fmt9(self.kappa)),
            ("eps_grid".into(), join(self.eps_grid.iter().map(|&e| fmt9(e)).collect())),
            ("alpha".into(), fmt9(self.alpha)),
            ("oracle_resolution_bits".into(), self.resolution_bits.to_string()),
            ("plateau_tolerance".into(), fmt9(DEFAULT_PLATEAU_TOL)),
            ("quadrature_tolerance".into(), fmt9(boolean::FIELD_CHECK_TOL)),
            ("bracket_tolerance".into(), fmt9(BRACKET_TOL)),
            ("bracket_fraction".into(), fmt9(BRACKET_FRACTION)),
            ("consistency_factor".into(), fmt9(CONSISTENCY_FACTOR)),
            ("rate_se_slack".into(), fmt9(RATE_SE_SLACK)),
        ]
    }
}

/// Quantized oracle for a plan's model at its base level.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub field: OracleField,
    pub curve: SurvivalCurve,
    /// `E λ(X)` as the Robbins integral of the quantized field.
    pub mean_volume: Exact,
    pub vorobev: WeightedMask,
    pub report: ThresholdReport,
    pub quadrature_level: Option<u8>,
    pub probe_deviation: f64,
    /// `min_x e^{-φ(x)}` over the sampled cells.
    pub min_survival: f64,
}

impl Oracle {
    pub fn new(model: &BooleanConfig, resolution_bits: u32) -> Result<Self> {
        let grid = model.grid()?;
        let samples = boolean::coverage_field(model, grid)?;
        let field = OracleField::from_probabilities(grid, resolution_bits, model.describe(), &samples.values)?;
        let curve = survival_curve(&field);
        let mean_volume = field.integral_exact();
        let (vorobev, report) = vorobev::rank_fill(&field, &mean_volume, DEFAULT_PLATEAU_TOL)?;
        Ok(Oracle {
            curve,
            mean_volume,
            vorobev,
            report,
            quadrature_level: samples.quadrature_level,
            probe_deviation: samples.probe_deviation,
            min_survival: boolean::min_survival(&samples),
            field,
        })
    }

    fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("oracle_mean_volume".into(), fmt9(exact::to_f64(&self.mean_volume))),
            ("oracle_alpha_star".into(), fmt9(self.report.alpha())),
            ("oracle_beta_star".into(), fmt9(self.report.beta())),
            ("oracle_plateau_flag".into(), self.report.plateau_flag.to_string()),
            (
                "quadrature_level".into(),
                self.quadrature_level.map_or("none".into(), |q| q.to_string()),
            ),
            ("quadrature_probe_deviation".into(), fmt9(self.probe_deviation)),
        ]
    }
}

/// A CSV table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Lines appended after the rows, each prefixed with `# `.
    pub footer: Vec<String>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        for f in &self.footer {
            let _ = writeln!(s, "# {f}");
        }
        s
    }
}

/// Result of a harness run: a table plus `key = value` metadata.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub file_name: &'static str,
    pub table: Table,
    pub metadata: Vec<(String, String)>,
    /// Whether every bound or acceptance check in the run held.
    pub passed: bool,
}

impl RunOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(self.file_name), self.table.to_csv())?;
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(meta, "{k} = {v}");
        }
        fs::write(dir.join("metadata.txt"), meta)?;
        Ok(())
    }
}

fn simulate_units<T: Send>(
    plan: &ExperimentPlan,
    tag: u8,
    eval: impl Fn(usize, &[u8], u64, &CoverageField) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let units = plan.units();
    let per_unit: Vec<Vec<T>> = units
        .par_iter()
        .map(|(n, ks, unit)| {
            let field = boolean::simulate_field(&plan.model, tag, *unit, *n)?;
            eval(*n, ks, *unit % plan.trials as u64, &field)
        })
        .collect::<Result<_>>()?;
    Ok(per_unit.into_iter().flatten().collect())
}

fn sort_rows<T>(rows: &mut [T], key: impl Fn(&T) -> (usize, u8, u64)) {
    rows.sort_by_key(key);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub level: u8,
    pub trial: u64,
    pub delta_knr: f64,
    pub delta_kn: f64,
    pub delta_knr_kn: f64,
    pub alpha_star_nr: f64,
    pub lambda_n: f64,
}

fn check_consistency_model(model: &BooleanConfig) -> Result<()> {
    if model.kind == ModelKind::Stationary {
        return Err(Error::Hypothesis(
            "λ{p=α*}=0 fails for this model: the coverage function is constant".into(),
        ));
    }
    if matches!(model.radius, RadiusLaw::Dirac(_)) && model.intensity.envelope() > 0.0 {
        return Err(Error::Hypothesis(
            "radius law has no density, so level sets of p need not be negligible".into(),
        ));
    }
    Ok(())
}

/// δ between the estimators and the oracle Vorob'ev expectation.
pub fn consistency_rows(plan: &ExperimentPlan, oracle: &Oracle) -> Result<Vec<ConsistencyRow>> {
    plan.validate()?;
    check_consistency_model(&plan.model)?;
    let base = plan.model.base_level;
    let mut rows = simulate_units(plan, TAG_CONSISTENCY, |n, ks, trial, field| {
        let lambda = field.mean_volume_exact();
        let kn = vorobev::kovyazin_mean(field, &lambda)?;
        let delta_kn = symm_diff_volume(&kn, &oracle.vorobev)?;
        ks.iter()
            .map(|&k| {
                let (knr, report) = vorobev::k_nr_with_report(field, k, &lambda, DEFAULT_PLATEAU_TOL)?;
                let knr = knr.refine(base)?;
                Ok(ConsistencyRow {
                    n,
                    level: k,
                    trial,
                    delta_knr: symm_diff_volume(&knr, &oracle.vorobev)?,
                    delta_kn,
                    delta_knr_kn: symm_diff_volume(&knr, &kn)?,
                    alpha_star_nr: report.alpha(),
                    lambda_n: exact::to_f64(&lambda),
                })
            })
            .collect()
    })?;
    sort_rows(&mut rows, |r| (r.n, r.level, r.trial));
    Ok(rows)
}

fn mesh(level: u8) -> f64 {
    0.5f64.powi(i32::from(level))
}

/// Median of `delta_knr` per `(n, k)` point in canonical order, with the
/// Monte Carlo standard error of the mean as a spread gauge.
pub fn consistency_medians(plan: &ExperimentPlan, rows: &[ConsistencyRow]) -> Vec<((usize, u8), f64, f64)> {
    plan.points()
        .into_iter()
        .map(|(n, k)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.level == k)
                .map(|r| r.delta_knr)
                .collect();
            ((n, k), median(&v), mean_se(&v).1)
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn run_consistency(plan: &ExperimentPlan) -> Result<RunOutput> {
    check_consistency_model(&plan.model)?;
    plan.validate()?;
    let oracle = Oracle::new(&plan.model, plan.resolution_bits)?;
    let rows = consistency_rows(plan, &oracle)?;
    let medians = consistency_medians(plan, &rows);
    let mut footer = Vec::new();
    for ((n, k), med, se) in &medians {
        footer.push(format!("median n={n} k={k} delta_knr={} se={}", fmt9(*med), fmt9(*se)));
    }
    // the trend is only meaningful when n grows and r shrinks together
    let mut passed = true;
    if plan.pairing == Pairing::Diagonal && medians.len() >= 2 {
        let first = medians[0].1;
        let last = medians[medians.len() - 1].1;
        let improved = last < CONSISTENCY_FACTOR * first;
        let monotone = medians.windows(2).all(|w| w[1].1 <= w[0].1 + w[1].2.max(w[0].2));
        passed = improved && monotone;
        footer.push(format!("trend improved={improved} monotone={monotone}"));
    }
    let table = Table {
        header: vec![
            "n",
            "r",
            "trial",
            "delta_knr",
            "delta_kn",
            "alpha_star_nr",
            "lambda_n",
            "delta_knr_kn",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    fmt9(mesh(r.level)),
                    r.trial.to_string(),
                    fmt9(r.delta_knr),
                    fmt9(r.delta_kn),
                    fmt9(r.alpha_star_nr),
                    fmt9(r.lambda_n),
                    fmt9(r.delta_knr_kn),
                ]
            })
            .collect(),
        footer,
    };
    let mut metadata = plan.metadata();
    metadata.extend(oracle.metadata());
    Ok(RunOutput {
        file_name: "consistency.csv",
        table,
        metadata,
        passed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub level: u8,
    pub alpha: f64,
    pub mc_mean_delta: f64,
    pub mc_se: f64,
    pub best_bound: f64,
    pub eps_star: f64,
    pub bound_satisfied: bool,
    pub plateau_warning: bool,
}

/// `r^κ + 2 e^{-2nε²} + F(α-ε) - F(α+ε)` minimized over the ε grid, as
/// `(bound, ε*)`.
pub fn rate_bound(curve: &SurvivalCurve, n: usize, r: f64, kappa: f64, alpha: f64, eps_grid: &[f64]) -> (f64, f64) {
    eps_grid
        .iter()
        .map(|&eps| {
            let b = r.powf(kappa)
                + 2.0 * (-2.0 * n as f64 * eps * eps).exp()
                + curve.eval(alpha - eps)
                - curve.eval(alpha + eps);
            (b, eps)
        })
        .fold((f64::INFINITY, f64::NAN), |best, c| if c.0 < best.0 { c } else { best })
}

pub fn rate_rows(plan: &ExperimentPlan, oracle: &Oracle) -> Result<Vec<RateRow>> {
    plan.validate()?;
    let base = plan.model.base_level;
    let alpha = plan.alpha;
    let q_alpha = level_set(&oracle.field, alpha, true);
    let jump = oracle.curve.jump_at(&exact::from_f64(alpha));
    let plateau_warning = exact::to_f64(&jump) > DEFAULT_PLATEAU_TOL;
    let mut samples: Vec<(usize, u8, u64, f64)> = simulate_units(plan, TAG_RATE, |n, ks, trial, field| {
        ks.iter()
            .map(|&k| {
                let q = coverage::level_set_grid(field, alpha, k, true)?.refine(base)?;
                Ok((n, k, trial, q.symm_diff_count(&q_alpha)? as f64 * q_alpha.grid().cell_volume()))
            })
            .collect()
    })?;
    sort_rows(&mut samples, |s| (s.0, s.1, s.2));
    Ok(plan
        .points()
        .into_iter()
        .map(|(n, k)| {
            let v: Vec<f64> = samples
                .iter()
                .filter(|s| s.0 == n && s.1 == k)
                .map(|s| s.3)
                .collect();
            let (m, se) = mean_se(&v);
            let (best_bound, eps_star) = rate_bound(&oracle.curve, n, mesh(k), plan.kappa, alpha, &plan.eps_grid);
            RateRow {
                n,
                level: k,
                alpha,
                mc_mean_delta: m,
                mc_se: se,
                best_bound,
                eps_star,
                bound_satisfied: m <= best_bound + RATE_SE_SLACK * se,
                plateau_warning,
            }
        })
        .collect())
}

pub fn run_rate_check(plan: &ExperimentPlan) -> Result<RunOutput> {
    plan.validate()?;
    let oracle = Oracle::new(&plan.model, plan.resolution_bits)?;
    let rows = rate_rows(plan, &oracle)?;
    let passed = rows.iter().all(|r| r.bound_satisfied);
    let table = Table {
        header: vec![
            "n",
            "r",
            "alpha",
            "mc_mean_delta",
            "best_bound",
            "eps_star",
            "bound_satisfied",
            "mc_se",
            "plateau_warning",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    fmt9(mesh(r.level)),
                    fmt9(r.alpha),
                    fmt9(r.mc_mean_delta),
                    fmt9(r.best_bound),
                    fmt9(r.eps_star),
                    r.bound_satisfied.to_string(),
                    fmt9(r.mc_se),
                    r.plateau_warning.to_string(),
                ]
            })
            .collect(),
        footer: vec![format!("all_bounds_satisfied={passed}")],
    };
    let mut metadata = plan.metadata();
    metadata.extend(oracle.metadata());
    Ok(RunOutput {
        file_name: "rate.csv",
        table,
        metadata,
        passed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketRow {
    pub n: usize,
    pub level: u8,
    pub trial: u64,
    pub alpha_star_nr: f64,
    pub alpha_star: f64,
    pub beta_star: f64,
    pub inside: bool,
}

pub fn bracket_rows(plan: &ExperimentPlan, oracle: &Oracle) -> Result<Vec<BracketRow>> {
    plan.validate()?;
    let (a, b) = (oracle.report.alpha(), oracle.report.beta());
    let mut rows = simulate_units(plan, TAG_BRACKET, |n, ks, trial, field| {
        let lambda = field.mean_volume_exact();
        ks.iter()
            .map(|&k| {
                let v = exact::to_f64(&vorobev::alpha_star_nr(field, k, &lambda)?);
                Ok(BracketRow {
                    n,
                    level: k,
                    trial,
                    alpha_star_nr: v,
                    alpha_star: a,
                    beta_star: b,
                    inside: v >= a - BRACKET_TOL && v <= b + BRACKET_TOL,
                })
            })
            .collect()
    })?;
    sort_rows(&mut rows, |r| (r.n, r.level, r.trial));
    Ok(rows)
}

pub fn bracket_fraction(rows: &[BracketRow]) -> f64 {
    rows.iter().filter(|r| r.inside).count() as f64 / rows.len().max(1) as f64
}

pub fn run_bracket(plan: &ExperimentPlan) -> Result<RunOutput> {
    plan.validate()?;
    let oracle = Oracle::new(&plan.model, plan.resolution_bits)?;
    let rows = bracket_rows(plan, &oracle)?;
    let fraction = bracket_fraction(&rows);
    let passed = fraction >= BRACKET_FRACTION;
    let table = Table {
        header: vec!["n", "r", "trial", "alpha_star_nr", "alpha_star", "beta_star", "inside"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    fmt9(mesh(r.level)),
                    r.trial.to_string(),
                    fmt9(r.alpha_star_nr),
                    fmt9(r.alpha_star),
                    fmt9(r.beta_star),
                    r.inside.to_string(),
                ]
            })
            .collect(),
        footer: vec![format!("fraction_inside={} tolerance={}", fmt9(fraction), fmt9(BRACKET_TOL))],
    };
    let mut metadata = plan.metadata();
    metadata.extend(oracle.metadata());
    Ok(RunOutput {
        file_name: "bracket.csv",
        table,
        metadata,
        passed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcurveRow {
    pub alpha: f64,
    pub f_emp: f64,
    pub f_oracle: Option<f64>,
}

/// Uniform α grid `0, 1/steps, ..., 1`.
pub fn alpha_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

pub fn fcurve_rows(empirical: &SurvivalCurve, oracle: Option<&SurvivalCurve>, alphas: &[f64]) -> Vec<FcurveRow> {
    alphas
        .iter()
        .map(|&alpha| FcurveRow {
            alpha,
            f_emp: empirical.eval(alpha),
            f_oracle: oracle.map(|c| c.eval(alpha)),
        })
        .collect()
}

/// Empirical field of `n` replicates for single-unit runs such as `fcurve`.
pub fn empirical_field(model: &BooleanConfig, n: usize) -> Result<CoverageField> {
    boolean::simulate_field(model, TAG_FCURVE, 0, n)
}

pub fn run_fcurve(plan: &ExperimentPlan, steps: usize) -> Result<RunOutput> {
    plan.validate()?;
    let n = plan.n_schedule[0];
    let field = empirical_field(&plan.model, n)?;
    let oracle = Oracle::new(&plan.model, plan.resolution_bits)?;
    let rows = fcurve_rows(&survival_curve(&field), Some(&oracle.curve), &alpha_grid(steps));
    let table = fcurve_table(&rows);
    let mut metadata = plan.metadata();
    metadata.push(("fcurve_n".into(), n.to_string()));
    metadata.extend(oracle.metadata());
    Ok(RunOutput {
        file_name: "fcurve.csv",
        table,
        metadata,
        passed: true,
    })
}

pub fn fcurve_table(rows: &[FcurveRow]) -> Table {
    let with_oracle = rows.iter().any(|r| r.f_oracle.is_some());
    let mut header = vec!["alpha", "F_emp"];
    if with_oracle {
        header.push("F_oracle");
    }
    Table {
        header,
        rows: rows
            .iter()
            .map(|r| {
                let mut v = vec![fmt9(r.alpha), fmt9(r.f_emp)];
                if with_oracle {
                    v.push(r.f_oracle.map_or("nan".into(), fmt9));
                }
                v
            })
            .collect(),
        footer: Vec::new(),
    }
}

/// Thresholds of an empirical field at base level and at mesh level `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimates {
    pub n: u32,
    pub level: u8,
    pub lambda_n: Exact,
    pub kn: WeightedMask,
    pub knr: WeightedMask,
    pub base_report: ThresholdReport,
    pub level_report: ThresholdReport,
}

pub fn estimate(field: &CoverageField, level: u8) -> Result<Estimates> {
    use crate::coverage::ValueField;
    let lambda_n = field.mean_volume_exact();
    let (kn, base_report) = vorobev::rank_fill(field, &lambda_n, DEFAULT_PLATEAU_TOL)?;
    let (knr, level_report) = vorobev::k_nr_with_report(field, level, &lambda_n, DEFAULT_PLATEAU_TOL)?;
    debug_assert_eq!(knr.grid(), field.grid().at_level(level)?);
    Ok(Estimates {
        n: field.replicates(),
        level,
        lambda_n,
        kn,
        knr,
        base_report,
        level_report,
    })
}

impl Estimates {
    pub fn thresholds_table(&self) -> Table {
        Table {
            header: vec![
                "n",
                "r",
                "lambda_n",
                "alpha_star_nr",
                "alpha_star",
                "beta_star",
                "plateau_flag",
            ],
            rows: vec![vec![
                self.n.to_string(),
                fmt9(mesh(self.level)),
                fmt9(exact::to_f64(&self.lambda_n)),
                fmt9(self.level_report.alpha()),
                fmt9(self.base_report.alpha()),
                fmt9(self.base_report.beta()),
                self.level_report.plateau_flag.to_string(),
            ]],
            footer: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boolean::{Atom, IntensityModel};
    use crate::grid::{rasterize_ball, GridSpec};

    #[test]
    fn fmt9_matches_printf() {
        let cases = [
            (0.015625, "0.015625"),
            (0.5, "0.5"),
            (1.0, "1"),
            (2.0 * (-2.0f64).exp(), "0.270670566"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-5, "1e-05"),
            (-2.5e-7, "-2.5e-07"),
            (0.0001, "0.0001"),
            (0.0, "0"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt9(x), s, "{x}");
        }
        assert_eq!(fmt9(f64::NAN), "nan");
    }

    #[test]
    fn bound_terms() {
        let flat = SurvivalCurve::from_steps(vec![(Exact::from_integer(0), Exact::from_integer(0))], Exact::from_integer(0))
            .unwrap();
        let (b, e) = rate_bound(&flat, 100, 0.015625, 1.0, 0.3, &[0.1]);
        assert!((b - (0.015625 + 2.0 * (-2.0f64).exp())).abs() < 1e-15);
        assert!((2.0 * (-2.0f64).exp() - 0.27067).abs() < 1e-5);
        assert_eq!(e, 0.1);
        assert_eq!(mesh(6).powf(1.0), 0.015625);
    }

    #[test]
    fn plan_validation() {
        let mut p = ExperimentPlan::new(ExperimentKind::Consistency, BooleanConfig::default_nonstationary());
        assert!(p.validate().is_ok());
        p.kappa = 3.0;
        assert!(p.validate().is_err());
        p.kappa = 1.0;
        p.trials = 0;
        assert!(p.validate().is_err());
        p.trials = 1;
        p.levels = vec![11];
        assert!(p.validate().is_err());
        p.levels = vec![4, 5];
        p.n_schedule = vec![10, 20, 30];
        p.pairing = Pairing::Diagonal;
        assert!(p.validate().is_err());
        p.pairing = Pairing::Cross;
        assert_eq!(p.points().len(), 6);
    }

    #[test]
    fn stationary_rejected_for_consistency() {
        let mut m = BooleanConfig::stationary(50.0, RadiusLaw::Dirac(0.1));
        m.base_level = 6;
        let p = ExperimentPlan::new(ExperimentKind::Consistency, m);
        let err = run_consistency(&p).unwrap_err();
        assert!(err.to_string().contains("λ{p=α*}=0 fails"), "{err}");
    }

    fn degenerate_atom(level: u8) -> BooleanConfig {
        BooleanConfig {
            kind: ModelKind::Atoms,
            base_level: level,
            intensity: IntensityModel::Constant(0.0),
            atom_radius: 0.25,
            atoms: vec![Atom { center: [0.5, 0.5, 0.0], q: 1.0 }],
            ..BooleanConfig::default_nonstationary()
        }
    }

    #[test]
    fn degenerate_atom_consistency() {
        let model = degenerate_atom(8);
        let mut plan = ExperimentPlan::new(ExperimentKind::Consistency, model.clone());
        plan.n_schedule = vec![3, 5];
        plan.levels = vec![3, 4, 5, 6];
        plan.trials = 3;
        let oracle = Oracle::new(&model, DEFAULT_RESOLUTION_BITS).unwrap();
        let ball = rasterize_ball(&[0.5, 0.5], 0.25, model.grid().unwrap());
        assert_eq!(oracle.vorobev, WeightedMask::from_mask(ball.clone()));
        let rows = consistency_rows(&plan, &oracle).unwrap();
        assert_eq!(rows.len(), 2 * 4 * 3);
        for r in &rows {
            let mesh_r = mesh(r.level);
            let approx = ball.grid_approximation(r.level).unwrap().refine(8).unwrap();
            let grid_err = symm_diff_volume(&approx, &ball).unwrap();
            assert!(r.delta_knr <= 2.0 * grid_err + 1e-12);
            assert!(r.delta_knr <= 8.0 * mesh_r);
            assert_eq!(r.delta_kn, 0.0);
            let same: Vec<f64> = rows
                .iter()
                .filter(|s| s.level == r.level)
                .map(|s| s.delta_knr)
                .collect();
            assert!(same.iter().all(|&v| v == r.delta_knr));
        }
    }

    #[test]
    fn degenerate_bracket() {
        let model = degenerate_atom(7);
        let mut plan = ExperimentPlan::new(ExperimentKind::Bracket, model.clone());
        plan.n_schedule = vec![2, 4];
        plan.levels = vec![4, 6];
        plan.trials = 2;
        let oracle = Oracle::new(&model, DEFAULT_RESOLUTION_BITS).unwrap();
        assert_eq!(oracle.report.alpha(), 0.0);
        assert_eq!(oracle.report.beta(), 1.0);
        let rows = bracket_rows(&plan, &oracle).unwrap();
        assert!(rows.iter().all(|r| r.inside));
        assert_eq!(bracket_fraction(&rows), 1.0);
    }

    #[test]
    fn single_point_plan() {
        let mut model = BooleanConfig::default_nonstationary();
        model.base_level = 6;
        let mut plan = ExperimentPlan::new(ExperimentKind::Consistency, model);
        plan.n_schedule = vec![10];
        plan.levels = vec![4];
        plan.trials = 1;
        let out = run_consistency(&plan).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert!(out.passed);
        let csv = out.table.to_csv();
        assert!(csv.starts_with("n,r,trial,delta_knr,delta_kn,alpha_star_nr,lambda_n"));
        // reproducible from (config, seed)
        assert_eq!(run_consistency(&plan).unwrap().table, out.table);
    }

    #[test]
    fn fcurve_examples() {
        let empty = BooleanConfig {
            intensity: IntensityModel::Constant(0.0),
            base_level: 5,
            ..BooleanConfig::default_nonstationary()
        };
        let f = empirical_field(&empty, 4).unwrap();
        let rows = fcurve_rows(&survival_curve(&f), None, &alpha_grid(10));
        assert!(rows.iter().all(|r| r.f_emp == 0.0));
        assert_eq!(fcurve_table(&rows).header, vec!["alpha", "F_emp"]);

        let mut one = BooleanConfig::default_nonstationary();
        one.base_level = 6;
        let f = empirical_field(&one, 1).unwrap();
        let v = f.mean_volume();
        let rows = fcurve_rows(&survival_curve(&f), None, &alpha_grid(20));
        for r in &rows {
            let want = if r.alpha < 1.0 { v } else { 0.0 };
            assert_eq!(r.f_emp, want);
        }
    }

    #[test]
    fn estimates_on_strips() {
        let grid = GridSpec::new(2, 6).unwrap();
        let a = crate::grid::Mask::from_fn(grid, |i| grid.cell_anchor(i)[0] < 0.5);
        let b = crate::grid::Mask::from_fn(grid, |i| (0.25..0.75).contains(&grid.cell_anchor(i)[0]));
        let f = coverage::accumulate(&[a, b]).unwrap();
        let e = estimate(&f, 5).unwrap();
        let t = e.thresholds_table();
        assert_eq!(t.rows[0][..4], ["2", "0.03125", "0.5", "0.5"]);
        assert_eq!(e.kn.volume_exact(), exact::ratio(1, 2));
        assert_eq!(e.knr.volume_exact(), exact::ratio(1, 2));
    }
}
