//! Moving least squares rows: per grid point, a weighted linear fit over
//! the nearest cloud points, returned as the coefficients that map cloud
//! values to the fitted value at the grid point.

use crate::cloud::NeighborIndex;
use crate::geometry::Point;

use super::TransferError;

/// Condition-number ceiling on the 3x3 normal matrix before the
/// neighborhood is declared degenerate and grown.
pub const MLS_COND_LIMIT: f64 = 1e12;
/// Snap radius (relative to h_bar) inside which a grid point adopts a
/// coincident cloud point's value directly; the inverse-distance weight
/// is singular there.
pub const COINCIDENCE_TOL_REL: f64 = 1e-12;
/// Each degenerate retry adds this many neighbors, at most three times.
const GROW_STEP: usize = 2;
const GROW_TRIES: usize = 3;

/// Weighted-linear-fit row for `grid_point`: pairs `(cloud index, weight)`
/// such that the fitted value is the weighted sum of cloud values.
/// `n` is the neighbor count before any degeneracy growth.
pub fn mls_weights(
    index: &NeighborIndex,
    h_bar: f64,
    grid_point: Point,
    n: usize,
) -> Result<Vec<(u32, f64)>, TransferError> {
    assert!(n >= 3, "a linear fit needs at least 3 neighbors");
    for grow in 0..=GROW_TRIES {
        let k = (n + GROW_STEP * grow).min(index.len());
        let ids = index.query(grid_point, k).map_err(TransferError::Cloud)?;
        if ids.is_empty() {
            return Err(TransferError::DegenerateNeighborhood {
                x: grid_point.x,
                y: grid_point.y,
            });
        }
        let nearest = index.point(ids[0]).dist(grid_point);
        if nearest < COINCIDENCE_TOL_REL * h_bar {
            return Ok(vec![(ids[0] as u32, 1.0)]);
        }
        if let Some(row) = try_fit(index, grid_point, &ids) {
            return Ok(row);
        }
        if k == index.len() {
            break; // no more neighbors to grow into
        }
    }
    Err(TransferError::DegenerateNeighborhood {
        x: grid_point.x,
        y: grid_point.y,
    })
}

/// One weighted least-squares fit; None when the normal matrix is too
/// ill-conditioned to trust.
fn try_fit(index: &NeighborIndex, grid_point: Point, ids: &[usize]) -> Option<Vec<(u32, f64)>> {
    // Center on the grid point and scale by the neighborhood radius so
    // conditioning reflects geometry, not units. The fitted value at the
    // center (the intercept) is invariant under this scaling.
    let mut radius = 0.0f64;
    for &j in ids {
        radius = radius.max(index.point(j).dist(grid_point));
    }
    let inv_r = 1.0 / radius;

    let mut m = [[0.0f64; 3]; 3];
    let mut w = Vec::with_capacity(ids.len());
    let mut dx = Vec::with_capacity(ids.len());
    let mut dy = Vec::with_capacity(ids.len());
    for &j in ids {
        let p = index.point(j);
        let d = p.dist(grid_point);
        let wj = 1.0 / d;
        let x = (p.x - grid_point.x) * inv_r;
        let y = (p.y - grid_point.y) * inv_r;
        m[0][0] += wj;
        m[0][1] += wj * x;
        m[0][2] += wj * y;
        m[1][1] += wj * x * x;
        m[1][2] += wj * x * y;
        m[2][2] += wj * y * y;
        w.push(wj);
        dx.push(x);
        dy.push(y);
    }
    m[1][0] = m[0][1];
    m[2][0] = m[0][2];
    m[2][1] = m[1][2];

    let inv = invert3(&m)?;
    if cond1(&m, &inv) > MLS_COND_LIMIT {
        return None;
    }
    // Fitted value at the center is e0' M^{-1} b with b_j-contribution
    // w_j (1, x_j, y_j), so the weight on cloud value j is
    // w_j (y0 + y1 x_j + y2 y_j) with y = M^{-1} e0.
    let y0 = inv[0][0];
    let y1 = inv[1][0];
    let y2 = inv[2][0];
    let row = ids
        .iter()
        .enumerate()
        .map(|(j, &id)| (id as u32, w[j] * (y0 + y1 * dx[j] + y2 * dy[j])))
        .collect();
    Some(row)
}

/// Inverse of a 3x3 matrix by adjugate; None when singular or non-finite.
fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let c10 = m[0][2] * m[2][1] - m[0][1] * m[2][2];
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    let c12 = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    let c20 = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    let c21 = m[0][2] * m[1][0] - m[0][0] * m[1][2];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [c00 / det, c10 / det, c20 / det],
        [c01 / det, c11 / det, c21 / det],
        [c02 / det, c12 / det, c22 / det],
    ];
    for row in &inv {
        for v in row {
            if !v.is_finite() {
                return None;
            }
        }
    }
    Some(inv)
}

/// 1-norm condition estimate from an explicit inverse.
fn cond1(m: &[[f64; 3]; 3], inv: &[[f64; 3]; 3]) -> f64 {
    norm1(m) * norm1(inv)
}

fn norm1(m: &[[f64; 3]; 3]) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| m[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::SplitMix64;

    fn fit(points: &[Point], q: Point, n: usize) -> Vec<(u32, f64)> {
        let idx = NeighborIndex::build(points);
        mls_weights(&idx, 1.0 / (points.len() as f64).sqrt(), q, n).unwrap()
    }

    #[test]
    fn coincident_point_snaps_to_unit_row() {
        let pts = vec![
            Point::new(0.3, 0.4),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(-1.0, 0.0),
            Point::new(0.0, -1.0),
        ];
        let row = fit(&pts, Point::new(0.3, 0.4), 5);
        assert_eq!(row, vec![(0, 1.0)]);
    }

    #[test]
    fn constant_and_linear_fields_reproduce() {
        let mut rng = SplitMix64::new(11);
        let pts: Vec<Point> = (0..40)
            .map(|_| Point::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        let u = |p: Point| 2.0 * p.x + 3.0 * p.y - 1.0;
        for case in 0..20 {
            let q = Point::new(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
            let row = fit(&pts, q, 5);
            assert!(row.len() <= 5);
            let ones: f64 = row.iter().map(|&(_, w)| w).sum();
            assert!((ones - 1.0).abs() < 1e-12, "case {case}: sum {ones}");
            let fitted: f64 = row
                .iter()
                .map(|&(j, w)| w * u(pts[j as usize]))
                .sum();
            assert!(
                (fitted - u(q)).abs() < 1e-10,
                "case {case}: {fitted} vs {}",
                u(q)
            );
        }
    }

    #[test]
    fn collinear_neighbors_grow_until_degenerate() {
        // All points on one line: growth finds nothing better and the
        // fit is reported degenerate.
        let pts: Vec<Point> = (0..12)
            .map(|i| Point::new(i as f64 * 0.1, 2.0 * (i as f64 * 0.1)))
            .collect();
        let idx = NeighborIndex::build(&pts);
        match mls_weights(&idx, 0.3, Point::new(0.31, 0.57), 5) {
            Err(TransferError::DegenerateNeighborhood { .. }) => {}
            other => panic!("expected DegenerateNeighborhood, got {other:?}"),
        }
    }

    #[test]
    fn collinear_near_neighbors_rescued_by_growth() {
        // First five neighbors are collinear; the next two are not.
        let mut pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64 * 0.01, 0.0)).collect();
        pts.push(Point::new(0.02, 0.3));
        pts.push(Point::new(0.02, -0.3));
        let idx = NeighborIndex::build(&pts);
        let row = mls_weights(&idx, 0.4, Point::new(0.021, 0.001), 5).unwrap();
        assert!(row.len() > 5, "growth should widen the stencil");
        let sum: f64 = row.iter().map(|&(_, w)| w).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closest_point_carries_largest_weight_magnitude_source() {
        // Inverse-distance weighting concentrates influence on the
        // nearest sample for a symmetric neighborhood.
        let pts = vec![
            Point::new(0.01, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(-1.0, 0.0),
            Point::new(0.0, -1.0),
        ];
        let row = fit(&pts, Point::new(0.0, 0.0), 5);
        let w0 = row.iter().find(|&&(j, _)| j == 0).unwrap().1;
        for &(j, w) in &row {
            if j != 0 {
                assert!(w0.abs() > w.abs(), "nearest should dominate");
            }
        }
    }
}
