//! L2 solution errors and convergence-order fits.
//!
//! Errors are integrated over the triangulated region: per triangle, the
//! nodal error is interpolated linearly and its square integrated with
//! the 3-point mid-edge rule, which is exact for quadratics and hence for
//! the integrand. The same constrained Delaunay triangulation used for
//! interpolation transfers serves here for quadrature, whichever transfer
//! method produced the solution.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::Point;
use crate::spectral::FractionalOrder;
use crate::transfer::Triangulation;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("order fit needs at least 3 levels, got {got}")]
    TooFewLevels { got: usize },
    #[error("triangulation does not cover the cloud ({tri_points} vertices for {cloud_points} points)")]
    MissingTriangulation {
        tri_points: usize,
        cloud_points: usize,
    },
    #[error("value vector length {got} does not match the {expected} cloud points")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("level N_v = {n_v} has a nonpositive error; order fit undefined")]
    NonpositiveError { n_v: usize },
    #[error("bad convergence CSV line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::TooFewLevels { .. } => "TooFewLevels",
            MetricsError::MissingTriangulation { .. } => "MissingTriangulation",
            MetricsError::DimensionMismatch { .. } => "DimensionMismatch",
            MetricsError::NonpositiveError { .. } => "NonpositiveError",
            MetricsError::CsvParse { .. } => "ParseError",
            MetricsError::Io(_) => "IoError",
        }
    }
}

/// Exact solution of the constant-source problem on the unit disk:
/// (1/(2^{2s} Γ(1+s)^2)) (1 − |p|^2)^s inside, zero outside.
pub fn exact_disk_solution(s: FractionalOrder, p: Point) -> f64 {
    let r2 = p.x * p.x + p.y * p.y;
    if r2 >= 1.0 {
        return 0.0;
    }
    let sv = s.value();
    let gamma = libm::tgamma(1.0 + sv);
    (1.0 - r2).powf(sv) / (4.0f64.powf(sv) * gamma * gamma)
}

/// L2 norm of the nodal error over the triangulated region. `numeric`
/// holds values at every cloud point (boundary entries included);
/// `exact` is evaluated at the cloud points only.
pub fn l2_error(
    cloud: &PointCloud,
    tri: &Triangulation,
    numeric: &[f64],
    mut exact: impl FnMut(Point) -> f64,
) -> Result<f64, MetricsError> {
    if tri.vertices().len() != cloud.n_total() || tri.n_triangles() == 0 {
        return Err(MetricsError::MissingTriangulation {
            tri_points: tri.vertices().len(),
            cloud_points: cloud.n_total(),
        });
    }
    if numeric.len() != cloud.n_total() {
        return Err(MetricsError::DimensionMismatch {
            expected: cloud.n_total(),
            got: numeric.len(),
        });
    }
    let error: Vec<f64> = cloud
        .points()
        .iter()
        .zip(numeric)
        .map(|(&p, &u)| u - exact(p))
        .collect();
    let mut acc = 0.0;
    for (ti, t) in tri.triangles().iter().enumerate() {
        let [a, b, c] = tri.triangle_points(ti);
        let (ea, eb, ec) = (
            error[t[0] as usize],
            error[t[1] as usize],
            error[t[2] as usize],
        );
        let area = 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs();
        // linear interpolant at the three edge midpoints
        let m = [(ea + eb) / 2.0, (eb + ec) / 2.0, (ec + ea) / 2.0];
        acc += area / 3.0 * (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
    }
    Ok(acc.sqrt())
}

/// Error of a coarse solution against a finer reference: the reference is
/// interpolated linearly on its own triangulation to the coarse cloud
/// points, and the difference is measured with [`l2_error`] on the coarse
/// triangulation. Coarse points the reference triangulation does not
/// cover (the coarse boundary ring, outside the finer inscribed region)
/// take the reference value 0, the exterior value of the problem.
pub fn reference_error(
    coarse_cloud: &PointCloud,
    coarse_tri: &Triangulation,
    coarse_solution: &[f64],
    ref_tri: &Triangulation,
    ref_solution: &[f64],
) -> Result<f64, MetricsError> {
    if ref_solution.len() != ref_tri.vertices().len() {
        return Err(MetricsError::DimensionMismatch {
            expected: ref_tri.vertices().len(),
            got: ref_solution.len(),
        });
    }
    let mut hint = 0usize;
    l2_error(coarse_cloud, coarse_tri, coarse_solution, |p| {
        ref_tri
            .linear_interp_weights(p, &mut hint)
            .iter()
            .map(|&(idx, w)| w * ref_solution[idx as usize])
            .sum()
    })
}

/// One row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceLevel {
    pub n_v: usize,
    pub h_bar: f64,
    pub l2_error: f64,
}

/// Least-squares slope of log(error) against log(h_bar).
pub fn fit_order(levels: &[ConvergenceLevel]) -> Result<f64, MetricsError> {
    if levels.len() < 3 {
        return Err(MetricsError::TooFewLevels { got: levels.len() });
    }
    let mut xs = Vec::with_capacity(levels.len());
    let mut ys = Vec::with_capacity(levels.len());
    for lv in levels {
        if lv.l2_error <= 0.0 || lv.h_bar <= 0.0 {
            return Err(MetricsError::NonpositiveError { n_v: lv.n_v });
        }
        xs.push(lv.h_bar.ln());
        ys.push(lv.l2_error.ln());
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - x_mean) * (y - y_mean);
        den += (x - x_mean) * (x - x_mean);
    }
    Ok(num / den)
}

/// A finished convergence study for one (s, method, cloud family)
/// combination, with the fitted order baked in.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub s: f64,
    pub method: String,
    pub levels: Vec<ConvergenceLevel>,
    pub fitted_order_in_hbar: f64,
}

impl ConvergenceReport {
    /// Sorts the levels by N_v and fits the order.
    pub fn new(
        s: f64,
        method: impl Into<String>,
        mut levels: Vec<ConvergenceLevel>,
    ) -> Result<Self, MetricsError> {
        levels.sort_by_key(|lv| lv.n_v);
        let fitted_order_in_hbar = fit_order(&levels)?;
        Ok(ConvergenceReport {
            s,
            method: method.into(),
            levels,
            fitted_order_in_hbar,
        })
    }

    /// Writes the study as CSV: a fixed header, one row per level, and a
    /// trailing comment with the fitted order. Byte-deterministic.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "N_v,h_bar,l2_error")?;
        for lv in &self.levels {
            writeln!(w, "{},{:.16e},{:.16e}", lv.n_v, lv.h_bar, lv.l2_error)?;
        }
        writeln!(w, "# fitted_order={:.16e}", self.fitted_order_in_hbar)?;
        Ok(())
    }
}

/// Reads a convergence CSV back: the levels plus the fitted order from
/// the trailing comment, if present.
pub fn read_levels_csv(path: &Path) -> Result<(Vec<ConvergenceLevel>, Option<f64>), MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut levels = Vec::new();
    let mut fitted = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("fitted_order=") {
                fitted = v.trim().parse::<f64>().ok();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(MetricsError::CsvParse {
                line: i + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse = |f: &str, what: &str| -> Result<f64, MetricsError> {
            f.trim().parse::<f64>().map_err(|e| MetricsError::CsvParse {
                line: i + 1,
                msg: format!("bad {what}: {e}"),
            })
        };
        levels.push(ConvergenceLevel {
            n_v: parse(fields[0], "N_v")? as usize,
            h_bar: parse(fields[1], "h_bar")?,
            l2_error: parse(fields[2], "l2_error")?,
        });
    }
    Ok((levels, fitted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{cloud_rings, SplitMix64};
    use crate::geometry::DomainSpec;
    use crate::solver::{solve, FractionalProblem};
    use crate::transfer::{build_cdt, TransferMethod};

    fn order(s: f64) -> FractionalOrder {
        FractionalOrder::new(s).unwrap()
    }

    fn unit_square_cloud() -> (PointCloud, DomainSpec, Triangulation) {
        let corners = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let domain = DomainSpec::polygon_with_holes(corners.clone(), vec![]).unwrap();
        let cloud = PointCloud::new(vec![], corners).unwrap();
        let tri = build_cdt(&cloud, &domain).unwrap();
        assert_eq!(tri.n_triangles(), 2);
        (cloud, domain, tri)
    }

    #[test]
    fn disk_solution_center_values() {
        let origin = Point::new(0.0, 0.0);
        assert!((exact_disk_solution(order(0.5), origin) - 2.0 / std::f64::consts::PI).abs() < 1e-14);
        assert!((exact_disk_solution(order(0.25), origin) - 0.8606822266341457).abs() < 1e-14);
        assert!((exact_disk_solution(order(0.75), origin) - 0.41856690686388826).abs() < 1e-14);
        assert!(
            (exact_disk_solution(order(0.5), Point::new(0.5, 0.0)) - 0.551328895421792).abs()
                < 1e-14
        );
    }

    #[test]
    fn disk_solution_vanishes_from_the_boundary_out() {
        for s in [0.1, 0.5, 0.9] {
            assert_eq!(exact_disk_solution(order(s), Point::new(1.0, 0.0)), 0.0);
            assert_eq!(exact_disk_solution(order(s), Point::new(0.0, -2.0)), 0.0);
            assert_eq!(
                exact_disk_solution(order(s), Point::new(0.8, 0.6000000001)),
                0.0
            );
        }
    }

    #[test]
    fn disk_solution_decreases_radially() {
        let s = order(0.3);
        let mut prev = exact_disk_solution(s, Point::new(0.0, 0.0));
        for k in 1..=10 {
            let v = exact_disk_solution(s, Point::new(0.1 * k as f64, 0.0));
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn affine_fields_integrate_to_zero_error() {
        let (cloud, _, tri) = unit_square_cloud();
        let exact = |p: Point| 0.7 * p.x - 1.3 * p.y + 0.25;
        let numeric: Vec<f64> = cloud.points().iter().map(|&p| exact(p)).collect();
        let err = l2_error(&cloud, &tri, &numeric, exact).unwrap();
        assert!(err <= 1e-14, "affine field mismeasured: {err}");
    }

    #[test]
    fn constant_offset_integrates_to_c_times_sqrt_area() {
        let (cloud, _, tri) = unit_square_cloud();
        let c = 0.37;
        let numeric = vec![c; cloud.n_total()];
        let err = l2_error(&cloud, &tri, &numeric, |_| 0.0).unwrap();
        let expect = c * tri.covered_area().sqrt();
        assert!((err - expect).abs() < 1e-13, "{err} vs {expect}");

        // same on a disk cloud, where the covered area is the inscribed
        // polygon's, not the disk's
        let cloud = cloud_rings(6).unwrap();
        let tri = build_cdt(&cloud, &DomainSpec::unit_disk()).unwrap();
        let numeric = vec![c; cloud.n_total()];
        let err = l2_error(&cloud, &tri, &numeric, |_| 0.0).unwrap();
        let expect = c * tri.covered_area().sqrt();
        assert!((err - expect).abs() < 1e-13, "{err} vs {expect}");
    }

    #[test]
    fn linear_error_field_on_unit_square() {
        let (cloud, _, tri) = unit_square_cloud();
        let numeric: Vec<f64> = cloud.points().iter().map(|p| p.x).collect();
        let err = l2_error(&cloud, &tri, &numeric, |_| 0.0).unwrap();
        // integral of x^2 over the unit square is 1/3
        assert!((err - 1.0 / 3.0f64.sqrt()).abs() < 1e-14, "{err}");
    }

    #[test]
    fn l2_error_rejects_foreign_triangulations() {
        let (cloud, _, tri) = unit_square_cloud();
        let other = cloud_rings(4).unwrap();
        let numeric = vec![0.0; other.n_total()];
        let err = l2_error(&other, &tri, &numeric, |_| 0.0).unwrap_err();
        assert_eq!(err.kind(), "MissingTriangulation");
        let err = l2_error(&cloud, &tri, &[0.0; 2], |_| 0.0).unwrap_err();
        assert_eq!(err.kind(), "DimensionMismatch");
    }

    #[test]
    fn l2_error_is_a_norm_on_nodal_vectors() {
        let cloud = cloud_rings(7).unwrap();
        let tri = build_cdt(&cloud, &DomainSpec::unit_disk()).unwrap();
        let mut rng = SplitMix64::new(3);
        let e1: Vec<f64> = (0..cloud.n_total()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let e2: Vec<f64> = (0..cloud.n_total()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let norm = |e: &[f64]| l2_error(&cloud, &tri, e, |_| 0.0).unwrap();
        let n1 = norm(&e1);
        let n2 = norm(&e2);
        assert!(n1 > 0.0);
        // absolute homogeneity
        let scaled: Vec<f64> = e1.iter().map(|v| -2.5 * v).collect();
        assert!((norm(&scaled) - 2.5 * n1).abs() <= 1e-12 * n1);
        // triangle inequality
        let sum: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a + b).collect();
        assert!(norm(&sum) <= n1 + n2 + 1e-12);
    }

    #[test]
    fn reference_error_self_is_zero_and_zero_ref_is_norm() {
        let cloud = cloud_rings(6).unwrap();
        let tri = build_cdt(&cloud, &DomainSpec::unit_disk()).unwrap();
        let mut rng = SplitMix64::new(9);
        let mut u: Vec<f64> = (0..cloud.n_total()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for i in cloud.n_interior()..cloud.n_total() {
            u[i] = 0.0;
        }
        let self_err = reference_error(&cloud, &tri, &u, &tri, &u).unwrap();
        assert!(self_err <= 1e-13, "self reference error {self_err}");
        let zeros = vec![0.0; cloud.n_total()];
        let against_zero = reference_error(&cloud, &tri, &u, &tri, &zeros).unwrap();
        let norm = l2_error(&cloud, &tri, &u, |_| 0.0).unwrap();
        assert!((against_zero - norm).abs() <= 1e-13);
    }

    #[test]
    fn reference_order_matches_exact_order_on_disk() {
        let domain = DomainSpec::unit_disk();
        let s = order(0.5);
        // reference 4x finer in rings than the finest level, so roughly
        // 16x in point count; anything closer contaminates the fit
        let ref_cloud = cloud_rings(80).unwrap();
        let ref_tri = build_cdt(&ref_cloud, &domain).unwrap();
        let problem = FractionalProblem::new(domain.clone(), s, |_| 1.0).with_cg_tolerance(1e-12);
        let ref_report = solve(&problem, &ref_cloud, TransferMethod::Delaunay).unwrap();
        let ref_values = ref_report.nodal_values(&ref_cloud);

        let mut exact_levels = Vec::new();
        let mut ref_levels = Vec::new();
        for j in [10, 14, 20] {
            let cloud = cloud_rings(j).unwrap();
            let tri = build_cdt(&cloud, &domain).unwrap();
            let report = solve(&problem, &cloud, TransferMethod::Delaunay).unwrap();
            let values = report.nodal_values(&cloud);
            let e_exact =
                l2_error(&cloud, &tri, &values, |p| exact_disk_solution(s, p)).unwrap();
            let e_ref = reference_error(&cloud, &tri, &values, &ref_tri, &ref_values).unwrap();
            let ratio = e_ref / e_exact;
            assert!(
                (0.5..2.0).contains(&ratio),
                "measures disagree at J = {j}: exact {e_exact:.3e}, reference {e_ref:.3e}"
            );
            exact_levels.push(ConvergenceLevel {
                n_v: cloud.n_total(),
                h_bar: cloud.h_bar(),
                l2_error: e_exact,
            });
            ref_levels.push(ConvergenceLevel {
                n_v: cloud.n_total(),
                h_bar: cloud.h_bar(),
                l2_error: e_ref,
            });
        }
        // Coarse three-level ladders are preasymptotic; the two measures
        // only agree to a couple of tenths there.
        let order_exact = fit_order(&exact_levels).unwrap();
        let order_ref = fit_order(&ref_levels).unwrap();
        assert!(
            (order_exact - order_ref).abs() < 0.2,
            "orders diverge: exact {order_exact}, reference {order_ref}"
        );
    }

    #[test]
    fn fit_recovers_exact_power_laws() {
        let mk = |p: f64| -> Vec<ConvergenceLevel> {
            [100usize, 400, 1600, 6400]
                .iter()
                .map(|&n| {
                    let h = 1.0 / (n as f64).sqrt();
                    ConvergenceLevel {
                        n_v: n,
                        h_bar: h,
                        l2_error: 3.7 * h.powf(p),
                    }
                })
                .collect()
        };
        assert!((fit_order(&mk(1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((fit_order(&mk(2.0)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_survives_multiplicative_noise() {
        let mut rng = SplitMix64::new(17);
        let levels: Vec<ConvergenceLevel> = [100usize, 400, 1600, 6400, 25600]
            .iter()
            .map(|&n| {
                let h = 1.0 / (n as f64).sqrt();
                ConvergenceLevel {
                    n_v: n,
                    h_bar: h,
                    l2_error: 2.0 * h.powf(0.75) * (1.0 + 0.01 * rng.uniform(-1.0, 1.0)),
                }
            })
            .collect();
        let fitted = fit_order(&levels).unwrap();
        assert!((fitted - 0.75).abs() < 0.05, "fitted {fitted}");
    }

    #[test]
    fn fit_is_scale_invariant_and_needs_three_levels() {
        let levels: Vec<ConvergenceLevel> = [100usize, 400, 1600]
            .iter()
            .map(|&n| {
                let h = 1.0 / (n as f64).sqrt();
                ConvergenceLevel {
                    n_v: n,
                    h_bar: h,
                    l2_error: h.powf(1.3),
                }
            })
            .collect();
        let base = fit_order(&levels).unwrap();
        let scaled: Vec<ConvergenceLevel> = levels
            .iter()
            .map(|lv| ConvergenceLevel {
                l2_error: 123.0 * lv.l2_error,
                ..*lv
            })
            .collect();
        assert!((fit_order(&scaled).unwrap() - base).abs() < 1e-12);
        let err = fit_order(&levels[..2]).unwrap_err();
        assert_eq!(err.kind(), "TooFewLevels");
        let mut bad = levels.clone();
        bad[1].l2_error = 0.0;
        assert_eq!(fit_order(&bad).unwrap_err().kind(), "NonpositiveError");
    }

    #[test]
    fn csv_round_trip_and_layout() {
        let levels = vec![
            ConvergenceLevel {
                n_v: 147,
                h_bar: 0.08,
                l2_error: 0.011,
            },
            ConvergenceLevel {
                n_v: 617,
                h_bar: 0.04,
                l2_error: 0.0052,
            },
            ConvergenceLevel {
                n_v: 2490,
                h_bar: 0.02,
                l2_error: 0.0026,
            },
        ];
        let report = ConvergenceReport::new(0.5, "delaunay", levels.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("N_v,h_bar,l2_error"));
        assert!(text.lines().last().unwrap().starts_with("# fitted_order="));
        let (back, fitted) = read_levels_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&levels) {
            assert_eq!(a.n_v, b.n_v);
            assert!((a.l2_error - b.l2_error).abs() < 1e-18);
        }
        assert!((fitted.unwrap() - report.fitted_order_in_hbar).abs() < 1e-15);

        // byte determinism on rewrite
        let path2 = dir.path().join("conv2.csv");
        report.write_csv(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
