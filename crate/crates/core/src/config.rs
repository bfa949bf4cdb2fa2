//! Model configuration files.
//!
//! ```text
//! # comments start with '#'
//! [model]
//! kind = atoms                 # stationary | nonstationary | atoms
//! intensity.kind = separable   # constant | separable | gaussian
//! intensity.m0 = 5
//! intensity.m1 = 20
//! radius.kind = uniform        # dirac | uniform
//! radius.a = 0.05
//! radius.b = 0.15
//! atoms.count = 2
//! atoms.centers = 0.3 0.3; 0.7 0.6
//! atoms.q = 0.7                # one value, or one per atom
//! atoms.r0 = 0.1
//! [grid]
//! d = 2
//! K = 10
//! [run]
//! seed = 7
//! n = 100
//! ```
//!
//! A key containing a dot is taken as written; a bare key is prefixed with
//! its section name. `model.kind` is required; every other key falls back to
//! the default non-stationary model. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::boolean::{Atom, BooleanConfig, IntensityModel, ModelKind, RadiusLaw};
use crate::error::{Error, Result};

const KNOWN_KEYS: &[&str] = &[
    "model.kind",
    "intensity.kind",
    "intensity.m0",
    "intensity.m1",
    "intensity.amplitude",
    "intensity.center",
    "intensity.width",
    "radius.kind",
    "radius.r0",
    "radius.a",
    "radius.b",
    "atoms.count",
    "atoms.centers",
    "atoms.q",
    "atoms.r0",
    "grid.d",
    "grid.K",
    "run.seed",
    "run.n",
];

/// Parsed `key = value` pairs under canonical names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section: Option<String> = None;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::config(line, format!("unterminated section header on line {}", lineno + 1))
                })?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("expected `key = value` on line {}", lineno + 1))
            })?;
            let key = key.trim();
            let canonical = if key.contains('.') {
                key.to_string()
            } else {
                match &section {
                    Some(s) => format!("{s}.{key}"),
                    None => return Err(Error::config(key, "key outside any section")),
                }
            };
            if !KNOWN_KEYS.contains(&canonical.as_str()) {
                return Err(Error::config(canonical, "unknown key"));
            }
            if entries.insert(canonical.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(canonical, "duplicate key"));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}` as a number")))
            })
            .transpose()
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::config(key, format!("cannot parse `{t}` as a number")))
                    })
                    .collect()
            })
            .transpose()
    }
}

pub fn parse_config(text: &str) -> Result<BooleanConfig> {
    BooleanConfig::from_map(&ConfigMap::parse(text)?)
}

pub fn read_config(path: &Path) -> Result<BooleanConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

impl BooleanConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let base = BooleanConfig::default_nonstationary();
        let kind = match map.get("model.kind") {
            None => return Err(Error::config("model.kind", "missing required key")),
            Some("stationary") => ModelKind::Stationary,
            Some("nonstationary") => ModelKind::NonStationary,
            Some("atoms") => ModelKind::Atoms,
            Some(other) => return Err(Error::config("model.kind", format!("unknown model `{other}`"))),
        };
        let dim: u8 = map.number("grid.d")?.unwrap_or(base.dim);
        if !(1..=3).contains(&dim) {
            return Err(Error::config("grid.d", format!("dimension {dim} outside 1..=3")));
        }
        let base_level = map.number("grid.K")?.unwrap_or(BooleanConfig::default_level(dim));

        let m0 = map.number("intensity.m0")?;
        let intensity = match map.get("intensity.kind") {
            Some("constant") => IntensityModel::Constant(m0.unwrap_or(0.0)),
            Some("separable") => IntensityModel::SeparableBump {
                m0: m0.unwrap_or(5.0),
                m1: map.number("intensity.m1")?.unwrap_or(20.0),
            },
            Some("gaussian") => {
                let mut center = [0.0; 3];
                center[..dim as usize].fill(0.5);
                if let Some(c) = map.floats("intensity.center")? {
                    if c.len() != dim as usize {
                        return Err(Error::config("intensity.center", format!("expected {dim} coordinates")));
                    }
                    center[..c.len()].copy_from_slice(&c);
                }
                IntensityModel::GaussianBump {
                    m0: m0.unwrap_or(0.0),
                    amplitude: map
                        .number("intensity.amplitude")?
                        .ok_or_else(|| Error::config("intensity.amplitude", "missing for gaussian intensity"))?,
                    center,
                    width: map
                        .number("intensity.width")?
                        .ok_or_else(|| Error::config("intensity.width", "missing for gaussian intensity"))?,
                }
            }
            Some(other) => {
                return Err(Error::config("intensity.kind", format!("unknown intensity `{other}`")))
            }
            None => match m0 {
                Some(m) if kind == ModelKind::Stationary => IntensityModel::Constant(m),
                _ => base.intensity,
            },
        };

        let radius = match map.get("radius.kind") {
            Some("dirac") => RadiusLaw::Dirac(
                map.number("radius.r0")?
                    .ok_or_else(|| Error::config("radius.r0", "missing for dirac radius"))?,
            ),
            Some("uniform") | None => {
                let (a, b) = match base.radius {
                    RadiusLaw::Uniform { a, b } => (a, b),
                    RadiusLaw::Dirac(r) => (r, r),
                };
                RadiusLaw::Uniform {
                    a: map.number("radius.a")?.unwrap_or(a),
                    b: map.number("radius.b")?.unwrap_or(b),
                }
            }
            Some(other) => return Err(Error::config("radius.kind", format!("unknown radius law `{other}`"))),
        };

        let (atoms, atom_radius) = parse_atoms(map, dim)?;
        if kind != ModelKind::Atoms && !atoms.is_empty() {
            return Err(Error::config("atoms.centers", "atoms are only allowed with model.kind = atoms"));
        }
        let cfg = BooleanConfig {
            kind,
            dim,
            base_level,
            intensity,
            radius,
            atoms,
            atom_radius,
            seed: map.number("run.seed")?.unwrap_or(base.seed),
            replicates: map.number("run.n")?.unwrap_or(base.replicates),
        };
        cfg.validate().map_err(|e| Error::config("model", e.to_string()))?;
        Ok(cfg)
    }

    /// Config text that parses back to `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::from("[model]\n");
        let _ = writeln!(s, "kind = {}", self.kind);
        match self.intensity {
            IntensityModel::Constant(m) => {
                let _ = writeln!(s, "intensity.kind = constant\nintensity.m0 = {m:?}");
            }
            IntensityModel::SeparableBump { m0, m1 } => {
                let _ = writeln!(s, "intensity.kind = separable\nintensity.m0 = {m0:?}\nintensity.m1 = {m1:?}");
            }
            IntensityModel::GaussianBump {
                m0,
                amplitude,
                center,
                width,
            } => {
                let c: Vec<String> = center[..self.dim as usize].iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(
                    s,
                    "intensity.kind = gaussian\nintensity.m0 = {m0:?}\nintensity.amplitude = {amplitude:?}\nintensity.center = {}\nintensity.width = {width:?}",
                    c.join(" ")
                );
            }
        }
        match self.radius {
            RadiusLaw::Dirac(r) => {
                let _ = writeln!(s, "radius.kind = dirac\nradius.r0 = {r:?}");
            }
            RadiusLaw::Uniform { a, b } => {
                let _ = writeln!(s, "radius.kind = uniform\nradius.a = {a:?}\nradius.b = {b:?}");
            }
        }
        if self.kind == ModelKind::Atoms {
            let centers: Vec<String> = self
                .atoms
                .iter()
                .map(|a| {
                    a.center[..self.dim as usize]
                        .iter()
                        .map(|v| format!("{v:?}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let qs: Vec<String> = self.atoms.iter().map(|a| format!("{:?}", a.q)).collect();
            let _ = writeln!(
                s,
                "atoms.count = {}\natoms.centers = {}\natoms.q = {}\natoms.r0 = {:?}",
                self.atoms.len(),
                centers.join("; "),
                qs.join(" "),
                self.atom_radius
            );
        }
        let _ = writeln!(s, "[grid]\nd = {}\nK = {}", self.dim, self.base_level);
        let _ = writeln!(s, "[run]\nseed = {}\nn = {}", self.seed, self.replicates);
        s
    }
}

fn parse_atoms(map: &ConfigMap, dim: u8) -> Result<(Vec<Atom>, f64)> {
    let centers: Vec<[f64; 3]> = match map.get("atoms.centers") {
        None => Vec::new(),
        Some(text) => text
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: Vec<f64> = t
                    .split_whitespace()
                    .map(|x| {
                        x.parse()
                            .map_err(|_| Error::config("atoms.centers", format!("cannot parse `{x}`")))
                    })
                    .collect::<Result<_>>()?;
                if v.len() != dim as usize {
                    return Err(Error::config(
                        "atoms.centers",
                        format!("centre `{t}` does not have {dim} coordinates"),
                    ));
                }
                let mut c = [0.0; 3];
                c[..v.len()].copy_from_slice(&v);
                Ok(c)
            })
            .collect::<Result<_>>()?,
    };
    if let Some(count) = map.number::<usize>("atoms.count")? {
        if count != centers.len() {
            return Err(Error::config(
                "atoms.count",
                format!("{count} atoms declared, {} centres given", centers.len()),
            ));
        }
    }
    let qs = map.floats("atoms.q")?.unwrap_or_default();
    let q_of = |i: usize| -> Result<f64> {
        match qs.len() {
            0 => Err(Error::config("atoms.q", "missing probability for atoms")),
            1 => Ok(qs[0]),
            n if n == centers.len() => Ok(qs[i]),
            n => Err(Error::config("atoms.q", format!("{n} probabilities for {} atoms", centers.len()))),
        }
    };
    let atoms = centers
        .iter()
        .enumerate()
        .map(|(i, &center)| Ok(Atom { center, q: q_of(i)? }))
        .collect::<Result<Vec<_>>>()?;
    let r0 = map.number("atoms.r0")?.unwrap_or(0.0);
    Ok((atoms, r0))
}
