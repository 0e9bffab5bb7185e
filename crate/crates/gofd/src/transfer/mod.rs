//! Cloud-to-grid transfer matrices.
//!
//! A transfer matrix maps nodal values on the point cloud to values at
//! the uniform grid nodes. Rows exist only for grid nodes strictly
//! inside the domain; every nonzero row reproduces constants and affine
//! functions. Two constructions: a moving least squares fit over nearest
//! neighbors, and piecewise linear interpolation on a constrained
//! Delaunay triangulation of the cloud.

mod cdt;
mod mls;
pub mod predicates;

pub use cdt::{triangulate, Triangulation, CIRCUMCIRCLE_TOL_REL, MIN_AREA_REL};
pub use mls::{mls_weights, COINCIDENCE_TOL_REL, MLS_COND_LIMIT};

use thiserror::Error;

use crate::cloud::{CloudError, NeighborIndex, PointCloud};
use crate::geometry::{DomainSpec, Point};
use crate::operator::{GridVector, UniformGrid};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("no usable linear fit near ({x}, {y}): neighbors stay collinear")]
    DegenerateNeighborhood { x: f64, y: f64 },
    #[error("boundary segment ({a}, {b}) blocked (offending point {point})")]
    ConstraintUnsatisfiable { a: usize, b: usize, point: usize },
    #[error("all points are collinear; no triangulation exists")]
    DegenerateInput,
    #[error("triangulation invariant broken: {0}")]
    InvalidTriangulation(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TransferError {
    pub fn kind(&self) -> &'static str {
        match self {
            TransferError::DegenerateNeighborhood { .. } => "DegenerateNeighborhood",
            TransferError::ConstraintUnsatisfiable { .. } => "ConstraintUnsatisfiable",
            TransferError::DegenerateInput => "DegenerateInput",
            TransferError::InvalidTriangulation(_) => "InvalidTriangulation",
            TransferError::Cloud(e) => e.kind(),
            TransferError::Io(_) => "IoError",
        }
    }
}

/// Which row construction a transfer matrix was assembled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMethod {
    /// Weighted linear fit over the `n` nearest cloud points.
    Mls { n: usize },
    /// Barycentric interpolation on the constrained Delaunay
    /// triangulation.
    Delaunay,
}

impl std::fmt::Display for TransferMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferMethod::Mls { .. } => write!(f, "mls"),
            TransferMethod::Delaunay => write!(f, "delaunay"),
        }
    }
}

/// Sparse cloud-to-grid matrix in compressed-row form, one row per grid
/// node (row-major node ordering), one column per cloud point.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    grid: UniformGrid,
    n_cols: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    column_sums: Vec<f64>,
    method: TransferMethod,
    uncovered_interior_nodes: usize,
    zero_sum_interior_columns: usize,
}

impl TransferMatrix {
    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn method(&self) -> TransferMethod {
        self.method
    }

    pub fn row(&self, k: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[k] as usize;
        let hi = self.row_ptr[k + 1] as usize;
        (&self.cols[lo..hi], &self.weights[lo..hi])
    }

    /// Column sums over all cloud points (interior first).
    pub fn column_sums(&self) -> &[f64] {
        &self.column_sums
    }

    /// Grid nodes strictly inside the domain whose row came back empty
    /// (possible in sliver gaps between a curved boundary and its
    /// triangulated approximation).
    pub fn uncovered_interior_nodes(&self) -> usize {
        self.uncovered_interior_nodes
    }

    /// Interior cloud points no grid node draws from; a nonzero count
    /// means the overlay grid is too coarse for this cloud.
    pub fn zero_sum_interior_columns(&self) -> usize {
        self.zero_sum_interior_columns
    }

    /// Grid image of a cloud vector: out = I x.
    pub fn apply(&self, x: &[f64]) -> GridVector {
        assert_eq!(x.len(), self.n_cols);
        let mut out = GridVector::zeros(self.grid);
        let vals = out.as_mut_slice();
        for k in 0..self.n_rows() {
            let (cols, w) = self.row(k);
            let mut acc = 0.0;
            for (c, wv) in cols.iter().zip(w) {
                acc += wv * x[*c as usize];
            }
            vals[k] = acc;
        }
        out
    }

    /// Cloud image of a grid vector: out = I' g.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.n_rows());
        let mut out = vec![0.0; self.n_cols];
        for k in 0..self.n_rows() {
            let gv = g[k];
            if gv == 0.0 {
                continue;
            }
            let (cols, w) = self.row(k);
            for (c, wv) in cols.iter().zip(w) {
                out[*c as usize] += wv * gv;
            }
        }
        out
    }
}

/// Assembles the transfer matrix for every grid node strictly inside the
/// domain, by MLS fitting or by interpolation on a freshly built
/// constrained Delaunay triangulation.
pub fn build_transfer(
    cloud: &PointCloud,
    grid: UniformGrid,
    method: TransferMethod,
    domain: &DomainSpec,
) -> Result<TransferMatrix, TransferError> {
    match method {
        TransferMethod::Mls { n } => {
            let index = NeighborIndex::build(cloud.points());
            assemble(cloud, grid, method, domain, |p, _hint| {
                mls_weights(&index, cloud.h_bar(), p, n)
            })
        }
        TransferMethod::Delaunay => {
            let tri = build_cdt(cloud, domain)?;
            Ok(transfer_from_triangulation(&tri, cloud, grid, domain))
        }
    }
}

/// Constrained Delaunay triangulation of the cloud: boundary points are
/// chained into ring segments by the domain and forced in as edges;
/// exterior triangles are removed by centroid membership.
pub fn build_cdt(cloud: &PointCloud, domain: &DomainSpec) -> Result<Triangulation, TransferError> {
    let segments: Vec<(u32, u32)> = domain
        .boundary_segments(cloud.boundary())
        .into_iter()
        .map(|(i, j)| {
            (
                (i + cloud.n_interior()) as u32,
                (j + cloud.n_interior()) as u32,
            )
        })
        .collect();
    triangulate(cloud.points(), cloud.h_bar(), &segments, domain)
}

/// Interpolation transfer rows from an existing triangulation; grid nodes
/// no triangle covers keep the zero row.
pub fn transfer_from_triangulation(
    tri: &Triangulation,
    cloud: &PointCloud,
    grid: UniformGrid,
    domain: &DomainSpec,
) -> TransferMatrix {
    let mut hint = 0usize;
    assemble::<_, TransferError>(cloud, grid, TransferMethod::Delaunay, domain, |p, _| {
        Ok(tri.linear_interp_weights(p, &mut hint))
    })
    .expect("interpolation rows cannot fail")
}

fn assemble<F, E>(
    cloud: &PointCloud,
    grid: UniformGrid,
    method: TransferMethod,
    domain: &DomainSpec,
    mut row_fn: F,
) -> Result<TransferMatrix, E>
where
    F: FnMut(Point, usize) -> Result<Vec<(u32, f64)>, E>,
{
    let n_rows = grid.node_count();
    let n_cols = cloud.n_total();
    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    row_ptr.push(0u32);
    let mut cols: Vec<u32> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut column_sums = vec![0.0f64; n_cols];
    let mut uncovered = 0usize;
    for k in 0..n_rows {
        let (nj, nk) = grid.node(k);
        let p = grid.coord(nj, nk);
        if domain.contains(p) {
            let row = row_fn(p, k)?;
            if row.is_empty() {
                uncovered += 1;
            }
            for &(c, w) in &row {
                cols.push(c);
                weights.push(w);
                column_sums[c as usize] += w;
            }
        }
        row_ptr.push(cols.len() as u32);
    }
    let zero_sum_interior_columns = column_sums[..cloud.n_interior()]
        .iter()
        .filter(|&&s| s == 0.0)
        .count();
    Ok(TransferMatrix {
        grid,
        n_cols,
        row_ptr,
        cols,
        weights,
        column_sums,
        method,
        uncovered_interior_nodes: uncovered,
        zero_sum_interior_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::cloud_rings;

    fn setup(j: usize) -> (PointCloud, DomainSpec, UniformGrid) {
        let cloud = cloud_rings(j).unwrap();
        let domain = DomainSpec::unit_disk();
        let grid = crate::solver::size_grid(&cloud, domain.fd_box()).unwrap();
        (cloud, domain, grid)
    }

    fn check_reproduction(t: &TransferMatrix, cloud: &PointCloud, domain: &DomainSpec) {
        let ones = vec![1.0; cloud.n_total()];
        let affine: Vec<f64> = cloud
            .points()
            .iter()
            .map(|p| 0.7 * p.x - 1.3 * p.y + 0.25)
            .collect();
        let g1 = t.apply(&ones);
        let g2 = t.apply(&affine);
        let mut nonzero_rows = 0;
        for k in 0..t.n_rows() {
            let (cols, _) = t.row(k);
            if cols.is_empty() {
                continue;
            }
            nonzero_rows += 1;
            let (nj, nk) = t.grid().node(k);
            let p = t.grid().coord(nj, nk);
            assert!(domain.contains(p), "nonzero row outside the domain");
            assert!(
                (g1.as_slice()[k] - 1.0).abs() < 1e-12,
                "constant reproduction failed at node {k}"
            );
            let want = 0.7 * p.x - 1.3 * p.y + 0.25;
            assert!(
                (g2.as_slice()[k] - want).abs() < 1e-10,
                "affine reproduction failed at node {k}: {} vs {want}",
                g2.as_slice()[k]
            );
        }
        assert!(nonzero_rows > 0);
    }

    #[test]
    fn mls_transfer_reproduces_constants_and_affines() {
        let (cloud, domain, grid) = setup(8);
        let t = build_transfer(&cloud, grid, TransferMethod::Mls { n: 5 }, &domain).unwrap();
        check_reproduction(&t, &cloud, &domain);
        for k in 0..t.n_rows() {
            assert!(t.row(k).0.len() <= 5 + 6, "row {k} exceeds grown stencil");
        }
    }

    #[test]
    fn delaunay_transfer_reproduces_and_stays_in_unit_range() {
        let (cloud, domain, grid) = setup(8);
        let t = build_transfer(&cloud, grid, TransferMethod::Delaunay, &domain).unwrap();
        check_reproduction(&t, &cloud, &domain);
        for k in 0..t.n_rows() {
            let (cols, w) = t.row(k);
            assert!(cols.len() <= 3);
            for &wv in w {
                assert!((-1e-12..=1.0 + 1e-12).contains(&wv), "weight {wv} at {k}");
            }
        }
    }

    #[test]
    fn column_sums_match_dense_accumulation() {
        let (cloud, domain, grid) = setup(6);
        let t = build_transfer(&cloud, grid, TransferMethod::Mls { n: 5 }, &domain).unwrap();
        let mut dense = vec![0.0; cloud.n_total()];
        for k in 0..t.n_rows() {
            let (cols, w) = t.row(k);
            for (c, wv) in cols.iter().zip(w) {
                dense[*c as usize] += wv;
            }
        }
        for (a, b) in dense.iter().zip(t.column_sums()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn transfer_is_deterministic() {
        let (cloud, domain, grid) = setup(7);
        for method in [TransferMethod::Mls { n: 5 }, TransferMethod::Delaunay] {
            let a = build_transfer(&cloud, grid, method, &domain).unwrap();
            let b = build_transfer(&cloud, grid, method, &domain).unwrap();
            assert_eq!(a.row_ptr, b.row_ptr);
            assert_eq!(a.cols, b.cols);
            assert_eq!(a.weights, b.weights);
        }
    }

    #[test]
    fn fine_grid_leaves_no_zero_sum_interior_columns() {
        let (cloud, domain, _) = setup(8);
        // The sized grid spacing satisfies the heuristic full-rank bound.
        let grid = crate::solver::size_grid(&cloud, domain.fd_box()).unwrap();
        let t = build_transfer(&cloud, grid, TransferMethod::Delaunay, &domain).unwrap();
        assert_eq!(t.zero_sum_interior_columns(), 0);
        let tm = build_transfer(&cloud, grid, TransferMethod::Mls { n: 5 }, &domain).unwrap();
        assert_eq!(tm.zero_sum_interior_columns(), 0);
    }

    #[test]
    fn apply_and_transpose_are_adjoint() {
        let (cloud, domain, grid) = setup(6);
        let t = build_transfer(&cloud, grid, TransferMethod::Delaunay, &domain).unwrap();
        let mut rng = crate::cloud::SplitMix64::new(5);
        let x: Vec<f64> = (0..t.n_cols()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g: Vec<f64> = (0..t.n_rows()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ix = t.apply(&x);
        let itg = t.apply_transpose(&g);
        let lhs: f64 = ix.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&itg).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0),
            "adjoint mismatch: {lhs} vs {rhs}"
        );
    }
}
