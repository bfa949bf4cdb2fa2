//! Analytic coverage functions.
//!
//! Pointwise `φ(x)` is a midpoint sum over the cells of a level-`Q` grid
//! (default `Q = K + 2`) restricted to the box `x ± r_max`; the
//! checked variant compares against level `Q - 1` and fails when the two
//! differ by more than [`FIELD_CHECK_TOL`].
//!
//! Whole fields are computed by FFT convolution of the sampled intensity with
//! the sampled tail kernel `P(R > |·|)`, then spot-checked against the
//! pointwise quadrature.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{unit_ball_volume, BooleanConfig, IntensityModel, ModelKind};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Absolute tolerance on `φ` for both the level-halving check and the field
/// probe check.
pub const FIELD_CHECK_TOL: f64 = 1e-3;

/// Lowest quadrature level used by [`coverage_field`] in d = 1, 2, 3.
pub const MIN_FIELD_QUADRATURE_LEVEL: [u8; 3] = [12, 8, 7];

const MAX_FFT_POINTS: usize = 1 << 25;

/// `c_{m,d} = 1 - exp(-m ω_d E[R^d])`.
pub fn analytic_coverage_stationary(cfg: &BooleanConfig) -> Result<f64> {
    let m = match (cfg.kind, cfg.intensity) {
        (ModelKind::Stationary, IntensityModel::Constant(m)) => m,
        _ => {
            return Err(Error::Model(format!(
                "constant coverage requires a stationary model, got {}",
                cfg.kind
            )))
        }
    };
    let d = cfg.dim as usize;
    Ok(1.0 - (-m * unit_ball_volume(d) * cfg.radius.moment(d as i32)).exp())
}

fn base_is_zero(cfg: &BooleanConfig) -> bool {
    cfg.intensity.envelope() == 0.0
}

/// Midpoint quadrature of `φ(x)` on the level-`q` grid.
pub fn phi_at_level(x: &[f64], cfg: &BooleanConfig, q: u8) -> f64 {
    if base_is_zero(cfg) {
        return 0.0;
    }
    let d = cfg.dim as usize;
    let n = 1usize << q;
    let h = 1.0 / n as f64;
    let rmax = cfg.radius.max_radius();
    let mut lo = [0usize; 3];
    let mut hi = [1usize; 3];
    for a in 0..d {
        lo[a] = (((x[a] - rmax) * n as f64).floor().max(0.0)) as usize;
        hi[a] = (((x[a] + rmax) * n as f64).ceil().min(n as f64)) as usize;
        if lo[a] >= hi[a] {
            return 0.0;
        }
    }
    let mut sum = 0.0;
    let mut y = [0.0f64; 3];
    for i2 in lo[2]..hi[2] {
        if d > 2 {
            y[2] = (i2 as f64 + 0.5) * h;
        }
        for i1 in lo[1]..hi[1] {
            if d > 1 {
                y[1] = (i1 as f64 + 0.5) * h;
            }
            for i0 in lo[0]..hi[0] {
                y[0] = (i0 as f64 + 0.5) * h;
                let r2: f64 = (0..d).map(|a| (x[a] - y[a]).powi(2)).sum();
                let t = cfg.radius.tail(r2.sqrt());
                if t > 0.0 {
                    sum += t * cfg.intensity.eval(&y[..d]);
                }
            }
        }
    }
    sum * h.powi(d as i32)
}

/// `φ(x)` at the default level `K + 2`.
pub fn phi(x: &[f64], cfg: &BooleanConfig) -> f64 {
    phi_at_level(x, cfg, cfg.base_level + 2)
}

/// `φ(x)` at level `K + 2`, rejected if it moves by more than
/// [`FIELD_CHECK_TOL`] from level `K + 1`.
pub fn phi_checked(x: &[f64], cfg: &BooleanConfig) -> Result<f64> {
    let q = cfg.base_level + 2;
    let fine = phi_at_level(x, cfg, q);
    let coarse = phi_at_level(x, cfg, q - 1);
    let deviation = (fine - coarse).abs();
    if deviation > FIELD_CHECK_TOL {
        return Err(Error::Quadrature {
            deviation,
            tolerance: FIELD_CHECK_TOL,
        });
    }
    Ok(fine)
}

fn atom_survival(x: &[f64], cfg: &BooleanConfig) -> f64 {
    if cfg.kind != ModelKind::Atoms {
        return 1.0;
    }
    let d = cfg.dim as usize;
    let r2 = cfg.atom_radius * cfg.atom_radius;
    cfg.atoms
        .iter()
        .filter(|a| (0..d).map(|j| (x[j] - a.center[j]).powi(2)).sum::<f64>() <= r2)
        .map(|a| 1.0 - a.q)
        .product()
}

/// `p(x) = P(x ∈ X)`.
pub fn analytic_coverage(x: &[f64], cfg: &BooleanConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.kind == ModelKind::Stationary {
        return analytic_coverage_stationary(cfg);
    }
    let phi = phi_checked(x, cfg)?;
    Ok(1.0 - (-phi).exp() * atom_survival(x, cfg))
}

/// Coverage and `φ` at every cell centre of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageSamples {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub phi: Vec<f64>,
    /// Level of the convolution grid, `None` when `φ` vanishes or is not
    /// needed.
    pub quadrature_level: Option<u8>,
    /// Largest probe deviation from pointwise quadrature.
    pub probe_deviation: f64,
}

fn fast_size(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// In-place FFT of a `p^d` array along every axis.
fn fft_nd(data: &mut [Complex<f64>], p: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(p)
    } else {
        planner.plan_fft_forward(p)
    };
    fft.process(data);
    let mut line = vec![Complex::new(0.0, 0.0); p];
    for axis in 1..d {
        let stride = p.pow(axis as u32);
        let outer = data.len() / (stride * p);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * p + inner;
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[base + t * stride];
                }
                fft.process(&mut line);
                for (t, v) in line.iter().enumerate() {
                    data[base + t * stride] = *v;
                }
            }
        }
    }
}

/// `φ` at the cell centres of `grid` by convolution on the level-`q` grid.
fn phi_field_fft(cfg: &BooleanConfig, grid: GridSpec, q: u8) -> Option<Vec<f64>> {
    let d = grid.dim();
    let nf = 1usize << q;
    let h = 1.0 / nf as f64;
    let shift = (q - grid.level()) as usize;
    // centres of target cells sit on fine nodes when shift > 0
    let offset = if shift > 0 { 0.5 } else { 0.0 };
    let reach = (cfg.radius.max_radius() / h).ceil() as usize + 1;
    let p = fast_size(nf + reach + 3);
    let total = p.checked_pow(d as u32)?;
    if total > MAX_FFT_POINTS {
        return None;
    }
    let stride = |a: usize| p.pow(a as u32);

    let mut m = vec![Complex::new(0.0, 0.0); total];
    let mut y = [0.0f64; 3];
    let ext = |a: usize| if a < d { nf } else { 1 };
    for j2 in 0..ext(2) {
        y[2] = (j2 as f64 + 0.5) * h;
        for j1 in 0..ext(1) {
            y[1] = (j1 as f64 + 0.5) * h;
            for j0 in 0..nf {
                y[0] = (j0 as f64 + 0.5) * h;
                m[j0 + j1 * stride(1) + j2 * stride(2)].re = cfg.intensity.eval(&y[..d]);
            }
        }
    }

    let vol = h.powi(d as i32);
    let mut kern = vec![Complex::new(0.0, 0.0); total];
    let span = reach as isize + 1;
    let lk = |a: usize| if a < d { -span..=span } else { 0..=0 };
    for l2 in lk(2) {
        for l1 in lk(1) {
            for l0 in lk(0) {
                let ls = [l0, l1, l2];
                let r2: f64 = (0..d).map(|a| ((ls[a] as f64 - offset) * h).powi(2)).sum();
                let t = cfg.radius.tail(r2.sqrt());
                if t > 0.0 {
                    let idx: usize = (0..d)
                        .map(|a| (ls[a].rem_euclid(p as isize) as usize) * stride(a))
                        .sum();
                    kern[idx].re = t * vol;
                }
            }
        }
    }

    fft_nd(&mut m, p, d, false);
    fft_nd(&mut kern, p, d, false);
    for (a, b) in m.iter_mut().zip(&kern) {
        *a *= *b;
    }
    fft_nd(&mut m, p, d, true);
    let norm = 1.0 / total as f64;

    let half = if shift > 0 { 1usize << (shift - 1) } else { 0 };
    Some(
        (0..grid.cell_count())
            .map(|i| {
                let c = grid.coords(i);
                let idx: usize = (0..d).map(|a| ((c[a] << shift) + half) * stride(a)).sum();
                (m[idx].re * norm).max(0.0)
            })
            .collect(),
    )
}

fn probe_cells(grid: &GridSpec) -> Vec<usize> {
    let n = grid.cells_per_axis();
    let d = grid.dim();
    let picks = [n / 2, n / 5, n - 1 - n / 7, 0, n - 1];
    (0..picks.len())
        .map(|k| {
            let mut c = [0usize; 3];
            for (a, v) in c.iter_mut().enumerate().take(d) {
                *v = picks[(k + a) % picks.len()];
            }
            grid.index(c)
        })
        .collect()
}

/// Coverage function sampled at the cell centres of `grid`.
pub fn coverage_field(cfg: &BooleanConfig, grid: GridSpec) -> Result<CoverageSamples> {
    cfg.validate()?;
    if grid.dim() != cfg.dim as usize {
        return Err(Error::InvalidArgument(format!(
            "grid dimension {} does not match model dimension {}",
            grid.dim(),
            cfg.dim
        )));
    }
    let d = grid.dim();
    if cfg.kind == ModelKind::Stationary {
        let c = analytic_coverage_stationary(cfg)?;
        let phi = -(1.0 - c).ln();
        return Ok(CoverageSamples {
            grid,
            values: vec![c; grid.cell_count()],
            phi: vec![phi; grid.cell_count()],
            quadrature_level: None,
            probe_deviation: 0.0,
        });
    }

    let (phi, quadrature_level, probe_deviation) = if base_is_zero(cfg) {
        (vec![0.0; grid.cell_count()], None, 0.0)
    } else {
        let pointwise_level = cfg.base_level.max(grid.level()) + 2;
        let probes: Vec<(usize, f64)> = probe_cells(&grid)
            .into_iter()
            .map(|i| (i, phi_at_level(&grid.cell_center(i)[..d], cfg, pointwise_level)))
            .collect();
        let mut q = grid.level().max(MIN_FIELD_QUADRATURE_LEVEL[d - 1]);
        loop {
            let field = phi_field_fft(cfg, grid, q).ok_or_else(|| {
                Error::Model(format!("quadrature grid at level {q} exceeds the memory budget"))
            })?;
            let dev = probes
                .iter()
                .map(|&(i, v)| (field[i] - v).abs())
                .fold(0.0, f64::max);
            if dev <= FIELD_CHECK_TOL {
                break (field, Some(q), dev);
            }
            if q >= pointwise_level {
                return Err(Error::Quadrature {
                    deviation: dev,
                    tolerance: FIELD_CHECK_TOL,
                });
            }
            q += 1;
        }
    };

    let values = (0..grid.cell_count())
        .map(|i| 1.0 - (-phi[i]).exp() * atom_survival(&grid.cell_center(i)[..d], cfg))
        .collect();
    Ok(CoverageSamples {
        grid,
        values,
        phi,
        quadrature_level,
        probe_deviation,
    })
}

/// Lower bound `min_x e^{-φ(x)}` over the cube, from the sampled field.
pub fn min_survival(samples: &CoverageSamples) -> f64 {
    samples
        .phi
        .iter()
        .map(|&v| (-v).exp())
        .fold(1.0, f64::min)
}
