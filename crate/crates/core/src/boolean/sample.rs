//! Simulation of Boolean-model replicates.
//!
//! Draw order per replicate, all from the replicate's own substream:
//! germ count, then for each germ its position followed by its radius, then
//! one Bernoulli draw per atom.
//!
//! Poisson counts use inversion for means below 10 and Hörmann's PTRS
//! transformed rejection otherwise. Uniform variates are `rand`'s standard
//! `[0,1)` doubles.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::{BooleanConfig, IntensityModel, ModelKind, RadiusLaw, Window};
use crate::coverage::{CoverageAccumulator, CoverageField};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::rng;

const INVERSION_LIMIT: f64 = 10.0;

/// Poisson variate with the given mean.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut s = p;
        while u > s && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            s += p;
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + invalpha.ln() - (a / (us * us) + b).ln() <= -mean + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, w: &Window) -> [f64; 3] {
    let mut x = [0.0; 3];
    for a in 0..w.dim {
        x[a] = w.lo[a] + (w.hi[a] - w.lo[a]) * rng.random::<f64>();
    }
    x
}

fn germ_position<R: Rng + ?Sized>(
    rng: &mut R,
    intensity: &IntensityModel,
    w: &Window,
    bump_weight: f64,
) -> [f64; 3] {
    match *intensity {
        IntensityModel::Constant(_) => uniform_point(rng, w),
        IntensityModel::SeparableBump { .. } => {
            // mixture of the flat part and the product-of-sines part
            if rng.random::<f64>() >= bump_weight {
                uniform_point(rng, w)
            } else {
                let mut x = [0.0; 3];
                for v in x.iter_mut().take(w.dim) {
                    let u: f64 = rng.random();
                    *v = (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos() / PI;
                }
                x
            }
        }
        IntensityModel::GaussianBump { .. } => {
            let env = intensity.envelope();
            loop {
                let x = uniform_point(rng, w);
                if rng.random::<f64>() * env <= intensity.eval(&x[..w.dim]) {
                    return x;
                }
            }
        }
    }
}

fn radius<R: Rng + ?Sized>(rng: &mut R, law: &RadiusLaw) -> f64 {
    match *law {
        RadiusLaw::Dirac(r) => r,
        RadiusLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
    }
}

struct Sampler {
    window: Window,
    mass: f64,
    bump_weight: f64,
}

impl Sampler {
    fn new(cfg: &BooleanConfig) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.germ_window();
        let mass = cfg.intensity.total_mass(&window)?;
        if !mass.is_finite() {
            return Err(Error::Model("infinite total intensity".into()));
        }
        let bump_weight = match cfg.intensity {
            IntensityModel::SeparableBump { m1, .. } if mass > 0.0 => {
                m1 * (2.0 / PI).powi(window.dim as i32) / mass
            }
            _ => 0.0,
        };
        Ok(Sampler {
            window,
            mass,
            bump_weight,
        })
    }

    fn germs(&self, cfg: &BooleanConfig, rng: &mut ChaCha8Rng) -> Vec<([f64; 3], f64)> {
        let count = sample_poisson(rng, self.mass);
        (0..count)
            .map(|_| {
                let x = germ_position(rng, &cfg.intensity, &self.window, self.bump_weight);
                (x, radius(rng, &cfg.radius))
            })
            .collect()
    }

    fn mask(&self, cfg: &BooleanConfig, stream: u64) -> Result<Mask> {
        let grid = cfg.grid()?;
        let d = grid.dim();
        let mut rng = rng::substream(cfg.seed, stream);
        let mut mask = Mask::empty(grid);
        for (x, r) in self.germs(cfg, &mut rng) {
            mask.paint_ball(&x[..d], r);
        }
        if cfg.kind == ModelKind::Atoms {
            for atom in &cfg.atoms {
                if rng.random::<f64>() < atom.q {
                    mask.paint_ball(&atom.center[..d], cfg.atom_radius);
                }
            }
        }
        Ok(mask)
    }
}

/// Germs `(position, radius)` of replicate `stream`, before clipping.
pub fn sample_germs(cfg: &BooleanConfig, stream: u64) -> Result<Vec<([f64; 3], f64)>> {
    let s = Sampler::new(cfg)?;
    let mut rng = rng::substream(cfg.seed, stream);
    Ok(s.germs(cfg, &mut rng))
}

/// One replicate `X = Ξ ∩ [0,1]^d` on the base grid, determined by
/// `(cfg.seed, stream)`.
pub fn simulate(cfg: &BooleanConfig, stream: u64) -> Result<Mask> {
    Sampler::new(cfg)?.mask(cfg, stream)
}

/// Replicates for the given streams, in order.
pub fn simulate_many(cfg: &BooleanConfig, streams: &[u64]) -> Result<Vec<Mask>> {
    let s = Sampler::new(cfg)?;
    streams.par_iter().map(|&id| s.mask(cfg, id)).collect()
}

/// Coverage counts of replicates `replicate_id(tag, unit, 0..n)` without
/// keeping the masks.
pub fn simulate_field(cfg: &BooleanConfig, tag: u8, unit: u64, n: usize) -> Result<CoverageField> {
    let s = Sampler::new(cfg)?;
    let grid = cfg.grid()?;
    let acc = (0..n as u64)
        .into_par_iter()
        .try_fold(
            || CoverageAccumulator::new(grid),
            |mut acc, i| -> Result<CoverageAccumulator> {
                acc.add(&s.mask(cfg, rng::replicate_id(tag, unit, i))?)?;
                Ok(acc)
            },
        )
        .try_reduce(
            || CoverageAccumulator::new(grid),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )?;
    acc.finish()
}
