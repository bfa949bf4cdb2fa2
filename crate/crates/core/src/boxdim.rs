//! Box counting on rasterized boundaries.
//!
//! `N_r` is the number of level-`k` cells containing at least one set cell of
//! a base-level boundary mask. The upper box dimension is approximated by the
//! least-squares slope of `log2 N_r` against `k`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{symm_diff_volume, GridSpec, Mask};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCountRow {
    pub level: u8,
    pub mesh: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxCountReport {
    pub rows: Vec<BoxCountRow>,
    pub slope_estimate: Option<f64>,
    pub rss: Option<f64>,
    pub fit_range: Option<(u8, u8)>,
}

/// Set cells of `mask` with a face-neighbour inside the cube that is not set.
pub fn outline(mask: &Mask) -> Mask {
    let b = mask.boundary_cells();
    b.intersection(mask).expect("same grid")
}

/// `N_r` at each requested level, in the given order.
pub fn box_counts(boundary: &Mask, levels: &[u8]) -> Result<Vec<BoxCountRow>> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("box counting needs at least one level"));
    }
    let g = boundary.grid();
    let base = g.level();
    let ones: Vec<usize> = boundary.iter_ones().collect();
    levels
        .iter()
        .map(|&k| {
            if k > base {
                return Err(Error::LevelTooFine {
                    requested: k,
                    base,
                });
            }
            let coarse = g.at_level(k)?;
            let shift = (base - k) as usize;
            let mut hit = Mask::empty(coarse);
            for &i in &ones {
                let c = g.coords(i);
                hit.set(coarse.index([c[0] >> shift, c[1] >> shift, c[2] >> shift]), true);
            }
            Ok(BoxCountRow {
                level: k,
                mesh: coarse.mesh(),
                count: hit.count_ones(),
            })
        })
        .collect()
}

/// Ordinary least-squares slope of `log2 N_r` on `k` with its residual sum of
/// squares. Rows with `N_r = 0` are skipped.
pub fn estimate_box_dim(rows: &[BoxCountRow]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.count >= 1)
        .map(|r| (f64::from(r.level), (r.count as f64).log2()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientScales {
            needed: 3,
            got: pts.len(),
        });
    }
    let (slope, intercept) = ols(&pts);
    let rss = pts
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok((slope, rss))
}

pub(crate) fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Default fit levels for a base level `K`: `3..=K-2`, dropping the two
/// coarsest levels `1, 2` and the finest `K - 1` (level 0 is a single cell).
pub fn default_fit_levels(base: u8) -> Vec<u8> {
    (3..base.saturating_sub(1)).collect()
}

/// Counts over `levels` with a slope fitted on `fit` (a subset of `levels`).
pub fn box_count_report(boundary: &Mask, levels: &[u8], fit: &[u8]) -> Result<BoxCountReport> {
    let rows = box_counts(boundary, levels)?;
    let fit_rows: Vec<BoxCountRow> = rows.iter().copied().filter(|r| fit.contains(&r.level)).collect();
    let (slope_estimate, rss) = match estimate_box_dim(&fit_rows) {
        Ok((s, r)) => (Some(s), Some(r)),
        Err(Error::InsufficientScales { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    let fit_range = fit_rows
        .iter()
        .map(|r| r.level)
        .min()
        .zip(fit_rows.iter().map(|r| r.level).max());
    Ok(BoxCountReport {
        rows,
        slope_estimate,
        rss,
        fit_range,
    })
}

impl BoxCountReport {
    /// `k,r,N_r,log2_N_r` rows followed by a `# slope=... rss=...` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,r,N_r,log2_N_r\n");
        for r in &self.rows {
            let log = if r.count > 0 {
                crate::harness::fmt9((r.count as f64).log2())
            } else {
                "-inf".to_string()
            };
            let _ = writeln!(s, "{},{},{},{}", r.level, crate::harness::fmt9(r.mesh), r.count, log);
        }
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), crate::harness::fmt9);
        let (lo, hi) = self.fit_range.unwrap_or((0, 0));
        let _ = writeln!(
            s,
            "# slope={} rss={} fit={}..{}",
            fmt(self.slope_estimate),
            fmt(self.rss),
            lo,
            hi
        );
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Row {
    pub level: u8,
    pub mesh: f64,
    pub delta: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `δ(B^r, B)` against `r^{d - dim - eps}` at each level, with `dim` the box
/// dimension estimate of the outline of `b` over the default fit range.
pub fn check_prop1(b: &Mask, levels: &[u8], eps: f64) -> Result<(f64, Vec<Prop1Row>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let g = b.grid();
    let d = g.dim() as f64;
    let line = outline(b);
    let fit = default_fit_levels(g.level());
    let dim = if line.is_empty() {
        0.0
    } else {
        estimate_box_dim(&box_counts(&line, &fit)?)?.0
    };
    let exponent = d - dim - eps;
    if !(exponent > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "exponent d - dim - eps = {exponent} is not positive"
        )));
    }
    let rows = levels
        .iter()
        .map(|&k| {
            let delta = discretization_error(b, k)?;
            let mesh = g.at_level(k)?.mesh();
            let bound = mesh.powf(exponent);
            Ok(Prop1Row {
                level: k,
                mesh,
                delta,
                bound,
                holds: delta <= bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dim, rows))
}

/// `δ(B^r, B)` for `B` given at the base level.
pub fn discretization_error(b: &Mask, level: u8) -> Result<f64> {
    let base = b.grid().level();
    let approx = b.grid_approximation(level)?.refine(base)?;
    symm_diff_volume(&approx, b)
}

/// Cell-centre rasterization of the closed ball on a fresh base grid; a
/// convenience for examples.
pub fn disk(dim: u8, level: u8, center: &[f64], radius: f64) -> Result<Mask> {
    Ok(crate::grid::rasterize_ball(center, radius, GridSpec::new(dim, level)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(level: u8) -> Mask {
        let g = GridSpec::new(2, level).unwrap();
        Mask::from_fn(g, |i| {
            let x = g.cell_anchor(i);
            (0.25..0.75).contains(&x[0]) && (0.25..0.75).contains(&x[1])
        })
    }

    #[test]
    fn single_cell_and_row() {
        let g = GridSpec::new(2, 8).unwrap();
        let mut m = Mask::empty(g);
        m.set(g.index([77, 150, 0]), true);
        let levels: Vec<u8> = (0..=8).collect();
        assert!(box_counts(&m, &levels).unwrap().iter().all(|r| r.count == 1));
        let mut row = Mask::empty(g);
        row.set_range(g.index([0, 40, 0]), g.index([0, 41, 0]));
        for r in box_counts(&row, &levels).unwrap() {
            assert_eq!(r.count, 1 << r.level);
        }
        assert!(box_counts(&Mask::empty(g), &[3, 4]).unwrap().iter().all(|r| r.count == 0));
        assert!(box_counts(&m, &[9]).is_err());
        assert!(box_counts(&m, &[]).is_err());
    }

    #[test]
    fn square_outline_counts() {
        let b = outline(&square(10));
        for r in box_counts(&b, &[4, 5, 6, 7, 8, 9]).unwrap() {
            let expect = 4.0 * (0.5 * f64::from(1u32 << r.level)) + 4.0;
            assert!((r.count as f64 - expect).abs() <= 8.0, "k={} N={}", r.level, r.count);
        }
    }

    #[test]
    fn slopes() {
        let rows = |f: &dyn Fn(u8) -> u64| -> Vec<BoxCountRow> {
            (3..9)
                .map(|k| BoxCountRow {
                    level: k,
                    mesh: 0.5f64.powi(k as i32),
                    count: f(k),
                })
                .collect()
        };
        let (s, rss) = estimate_box_dim(&rows(&|_| 5)).unwrap();
        assert!(s.abs() < 1e-12 && rss < 1e-20);
        let (s, rss) = estimate_box_dim(&rows(&|k| 1 << k)).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && rss < 1e-20);
        let two = &rows(&|k| 1 << k)[..2];
        assert!(matches!(
            estimate_box_dim(two),
            Err(Error::InsufficientScales { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn disk_slope_near_one() {
        let b = disk(2, 10, &[0.5, 0.5], 0.3).unwrap();
        let fit: Vec<u8> = (3..=8).collect();
        let (s, _) = estimate_box_dim(&box_counts(&outline(&b), &fit).unwrap()).unwrap();
        assert!((0.9..=1.1).contains(&s), "{s}");
        let (s2, _) = estimate_box_dim(&box_counts(&b.boundary_cells(), &fit).unwrap()).unwrap();
        assert!((0.9..=1.1).contains(&s2), "{s2}");
    }

    #[test]
    fn prop1_examples() {
        let sq = square(10);
        let (_, rows) = check_prop1(&sq, &[2, 3, 4, 5], 0.5).unwrap();
        assert!(rows.iter().all(|r| r.delta == 0.0 && r.holds));
        let b = disk(2, 10, &[0.5, 0.5], 0.3).unwrap();
        let (dim, rows) = check_prop1(&b, &(4..=9).collect::<Vec<_>>(), 0.5).unwrap();
        assert!((0.9..=1.1).contains(&dim));
        for r in &rows {
            assert!(r.holds, "{r:?}");
            assert!((r.bound - r.mesh.powf(0.5 - (dim - 1.0))).abs() < 1e-12);
        }
        let empty = Mask::empty(GridSpec::new(2, 8).unwrap());
        let (_, rows) = check_prop1(&empty, &[2, 4, 6], 0.5).unwrap();
        assert!(rows.iter().all(|r| r.delta == 0.0));
        assert!(check_prop1(&b, &[4], 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let rep = box_count_report(&outline(&square(8)), &[2, 3, 4, 5, 6], &[3, 4, 5]).unwrap();
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,r,N_r,log2_N_r"));
        assert_eq!(lines.next(), Some("2,0.25,4,2"));
        assert!(csv.lines().last().unwrap().starts_with("# slope="));
        assert_eq!(rep.fit_range, Some((3, 5)));
        assert_eq!(default_fit_levels(10), vec![3, 4, 5, 6, 7, 8]);
    }

    fn random_mask(bits: Vec<bool>) -> Mask {
        let g = GridSpec::new(2, 5).unwrap();
        Mask::from_fn(g, |i| bits[i])
    }

    proptest! {
        #[test]
        fn counts_monotone_and_bounded(bits in proptest::collection::vec(any::<bool>(), 1024)) {
            let m = random_mask(bits);
            let rows = box_counts(&m, &[0, 1, 2, 3, 4, 5]).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].count >= w[0].count);
                prop_assert!(w[1].count <= 4 * w[0].count);
            }
        }

        #[test]
        fn union_subadditive(
            a in proptest::collection::vec(any::<bool>(), 1024),
            b in proptest::collection::vec(any::<bool>(), 1024),
        ) {
            let (a, b) = (random_mask(a).boundary_cells(), random_mask(b).boundary_cells());
            let u = a.union(&b).unwrap();
            let levels = [1, 2, 3, 4, 5];
            let (na, nb, nu) = (
                box_counts(&a, &levels).unwrap(),
                box_counts(&b, &levels).unwrap(),
                box_counts(&u, &levels).unwrap(),
            );
            for i in 0..levels.len() {
                prop_assert!(nu[i].count <= na[i].count + nb[i].count);
            }
        }
    }
}
