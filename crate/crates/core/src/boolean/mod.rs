//! Boolean germ-grain models with analytic coverage functions.
//!
//! Three families are supported, each with an oracle for `p(x) = P(x ∈ X)`:
//!
//! - **Stationary**: constant intensity `m`, ball grains. Germs are drawn in
//!   the dilated window `[-r_max, 1 + r_max]^d` so the coverage is exactly the
//!   constant `c = 1 - exp(-m ω_d E[R^d])` on the cube.
//! - **NonStationary**: intensity `m(x)` on the cube, germs restricted to
//!   `[0,1]^d`, `p(x) = 1 - exp(-φ(x))` with
//!   `φ(x) = ∫_{[0,1]^d} P(R > |x - y|) m(y) dy`.
//! - **Atoms**: a NonStationary base plus deterministic balls `B(y_i, r_0)`
//!   switched on independently with probability `q_i`, giving
//!   `p(x) = 1 - exp(-φ(x)) Π_{i: x ∈ B(y_i, r_0)} (1 - q_i)`.

mod oracle;
mod sample;

pub use oracle::{
    analytic_coverage, analytic_coverage_stationary, coverage_field, phi, phi_at_level,
    phi_checked, min_survival, CoverageSamples, FIELD_CHECK_TOL, MIN_FIELD_QUADRATURE_LEVEL,
};
pub use sample::{sample_germs, sample_poisson, simulate, simulate_field, simulate_many};

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusLaw {
    Dirac(f64),
    Uniform { a: f64, b: f64 },
}

impl RadiusLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RadiusLaw::Dirac(r) if r > 0.0 && r.is_finite() => Ok(()),
            RadiusLaw::Uniform { a, b } if a > 0.0 && b > a && b.is_finite() => Ok(()),
            other => Err(Error::Model(format!("invalid radius law {other:?}"))),
        }
    }

    /// `E[R^p]`.
    pub fn moment(&self, p: i32) -> f64 {
        match *self {
            RadiusLaw::Dirac(r) => r.powi(p),
            RadiusLaw::Uniform { a, b } => {
                (b.powi(p + 1) - a.powi(p + 1)) / (f64::from(p + 1) * (b - a))
            }
        }
    }

    /// `P(R > t)`.
    pub fn tail(&self, t: f64) -> f64 {
        match *self {
            RadiusLaw::Dirac(r) => {
                if t < r {
                    1.0
                } else {
                    0.0
                }
            }
            RadiusLaw::Uniform { a, b } => {
                if t < a {
                    1.0
                } else if t >= b {
                    0.0
                } else {
                    (b - t) / (b - a)
                }
            }
        }
    }

    /// Essential supremum of `R`.
    pub fn max_radius(&self) -> f64 {
        match *self {
            RadiusLaw::Dirac(r) => r,
            RadiusLaw::Uniform { b, .. } => b,
        }
    }

    /// Whether the law has a continuous density, as the thin-level-set
    /// argument for non-stationary models requires. Dirac laws do not.
    pub fn has_continuous_density(&self) -> bool {
        matches!(self, RadiusLaw::Uniform { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntensityModel {
    Constant(f64),
    /// `m0 + m1 Π_j sin(π x_j)`, defined on the unit cube.
    SeparableBump { m0: f64, m1: f64 },
    /// `m0 + amplitude · exp(-|x - center|² / (2 width²))`.
    GaussianBump {
        m0: f64,
        amplitude: f64,
        center: [f64; 3],
        width: f64,
    },
}

impl IntensityModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            IntensityModel::Constant(m) => m >= 0.0 && m.is_finite(),
            IntensityModel::SeparableBump { m0, m1 } => m0 >= 0.0 && m1 >= 0.0 && (m0 + m1).is_finite(),
            IntensityModel::GaussianBump {
                m0,
                amplitude,
                width,
                ..
            } => m0 >= 0.0 && amplitude >= 0.0 && width > 0.0 && (m0 + amplitude).is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Model(format!("invalid intensity {self:?}")))
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            IntensityModel::Constant(m) => m,
            IntensityModel::SeparableBump { m0, m1 } => {
                m0 + m1 * x.iter().map(|&v| (PI * v).sin()).product::<f64>()
            }
            IntensityModel::GaussianBump {
                m0,
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(v, c)| (v - c).powi(2)).sum();
                m0 + amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Upper bound of `m` on any window.
    pub fn envelope(&self) -> f64 {
        match *self {
            IntensityModel::Constant(m) => m,
            IntensityModel::SeparableBump { m0, m1 } => m0 + m1,
            IntensityModel::GaussianBump { m0, amplitude, .. } => m0 + amplitude,
        }
    }

    /// `∫_window m dλ`.
    pub fn total_mass(&self, window: &Window) -> Result<f64> {
        let d = window.dim;
        match *self {
            IntensityModel::Constant(m) => Ok(m * window.volume()),
            IntensityModel::SeparableBump { m0, m1 } => {
                if !window.is_unit_cube() {
                    return Err(Error::Model(
                        "separable bump intensity is only defined on the unit cube".into(),
                    ));
                }
                Ok(m0 + m1 * (2.0 / PI).powi(d as i32))
            }
            IntensityModel::GaussianBump {
                m0,
                amplitude,
                center,
                width,
            } => {
                let s = width * std::f64::consts::SQRT_2;
                let mut prod = 1.0;
                for axis in 0..d {
                    let (lo, hi) = (window.lo[axis], window.hi[axis]);
                    let c = center[axis];
                    prod *= width
                        * (2.0 * PI).sqrt()
                        * 0.5
                        * (statrs::function::erf::erf((hi - c) / s)
                            - statrs::function::erf::erf((lo - c) / s));
                }
                Ok(m0 * window.volume() + amplitude * prod)
            }
        }
    }
}

/// Axis-aligned germ window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Window {
    pub fn unit_cube(dim: usize) -> Self {
        Window {
            dim,
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    pub fn dilated_cube(dim: usize, by: f64) -> Self {
        Window {
            dim,
            lo: [-by; 3],
            hi: [1.0 + by; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn is_unit_cube(&self) -> bool {
        (0..self.dim).all(|a| self.lo[a] == 0.0 && self.hi[a] == 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Stationary,
    NonStationary,
    Atoms,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Stationary => "stationary",
            ModelKind::NonStationary => "nonstationary",
            ModelKind::Atoms => "atoms",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub center: [f64; 3],
    /// `P(U_i = 1)`.
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BooleanConfig {
    pub kind: ModelKind,
    pub dim: u8,
    pub base_level: u8,
    pub intensity: IntensityModel,
    pub radius: RadiusLaw,
    pub atoms: Vec<Atom>,
    pub atom_radius: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl BooleanConfig {
    /// Default base level: 10 in d = 2, 7 in d = 3, 14 in d = 1.
    pub fn default_level(dim: u8) -> u8 {
        match dim {
            1 => 14,
            2 => 10,
            _ => 7,
        }
    }

    /// Separable-bump model `m(x) = 5 + 20 sin(πx) sin(πy)` with radii
    /// uniform on `[0.05, 0.15]`, d = 2, K = 10.
    pub fn default_nonstationary() -> Self {
        BooleanConfig {
            kind: ModelKind::NonStationary,
            dim: 2,
            base_level: 10,
            intensity: IntensityModel::SeparableBump { m0: 5.0, m1: 20.0 },
            radius: RadiusLaw::Uniform { a: 0.05, b: 0.15 },
            atoms: Vec::new(),
            atom_radius: 0.0,
            seed: 0,
            replicates: 100,
        }
    }

    pub fn stationary(m: f64, radius: RadiusLaw) -> Self {
        BooleanConfig {
            kind: ModelKind::Stationary,
            intensity: IntensityModel::Constant(m),
            radius,
            ..Self::default_nonstationary()
        }
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.dim, self.base_level)?;
        self.intensity.validate()?;
        self.radius.validate()?;
        if self.kind == ModelKind::Stationary && !matches!(self.intensity, IntensityModel::Constant(_)) {
            return Err(Error::Model("stationary model requires constant intensity".into()));
        }
        if self.kind == ModelKind::Atoms {
            if !(self.atom_radius > 0.0) {
                return Err(Error::Model("atoms need a positive radius r0".into()));
            }
            for a in &self.atoms {
                if !(0.0..=1.0).contains(&a.q) {
                    return Err(Error::Model(format!("atom probability {} outside [0,1]", a.q)));
                }
                if a.center[..self.dim as usize].iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::Model(format!("atom centre {:?} outside the cube", a.center)));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.base_level)
    }

    /// Germ window: the dilated cube for stationary models, the unit cube
    /// otherwise.
    pub fn germ_window(&self) -> Window {
        let d = self.dim as usize;
        match self.kind {
            ModelKind::Stationary => Window::dilated_cube(d, self.radius.max_radius()),
            _ => Window::unit_cube(d),
        }
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "{} d={} K={} intensity={:?} radius={:?}",
            self.kind, self.dim, self.base_level, self.intensity, self.radius
        );
        if self.kind == ModelKind::Atoms {
            s.push_str(&format!(" atoms={} r0={}", self.atoms.len(), self.atom_radius));
        }
        s
    }
}

/// Volume of the unit ball `ω_d`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unsupported dimension {dim}"),
    }
}
