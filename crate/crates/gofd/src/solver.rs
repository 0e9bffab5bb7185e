//! System assembly and conjugate-gradient solve.
//!
//! The pipeline sizes a uniform grid from the cloud (spacing at most half
//! the minimum pairwise distance), builds the grid operator and the
//! cloud-to-grid transfer, restricts the transfer to interior columns
//! (boundary values are pinned to zero by the volume constraint), and
//! solves the symmetric positive semidefinite system
//!
//! ```text
//!     (I^T A I) u = h^{2s} D f
//! ```
//!
//! where `D` holds the interior column sums of the transfer. The system
//! matrix is never materialized: each CG iteration scatters the cloud
//! coefficients onto the grid, applies the stencil convolution by FFT, and
//! gathers back.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::{DomainSpec, Point};
use crate::operator::{FdOperator, GridVector, OperatorError, UniformGrid};
use crate::spectral::{FractionalOrder, SpectralError};
use crate::transfer::{build_transfer, TransferError, TransferMatrix, TransferMethod};

/// Default relative-residual tolerance for the CG iteration.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Default cap on overlay-grid nodes, (2N+1)^2 <= this.
pub const GRID_NODE_CAP: usize = 1 << 26;

/// CG iteration cap as a multiple of the unknown count.
pub const CG_ITERATION_FACTOR: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(
        "grid sizing wants N = {n_fd} ({nodes} nodes), above the cap of {cap}; \
         the cloud's minimum distance is too small for its extent"
    )]
    GridTooLarge { n_fd: usize, nodes: u128, cap: usize },
    #[error("transfer column sums are not strictly positive at interior cloud indices {indices:?}")]
    SingularD { indices: Vec<usize> },
    #[error(
        "CG stalled: relative residual {relative_residual:.3e} after {iterations} iterations \
         (tolerance {tolerance:.3e})"
    )]
    CgStalled {
        iterations: usize,
        relative_residual: f64,
        tolerance: f64,
    },
    #[error("vector length {got} does not match the {expected} interior unknowns")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SolverError {
    pub fn kind(&self) -> &'static str {
        match self {
            SolverError::GridTooLarge { .. } => "GridTooLarge",
            SolverError::SingularD { .. } => "SingularD",
            SolverError::CgStalled { .. } => "CgStalled",
            SolverError::DimensionMismatch { .. } => "DimensionMismatch",
            SolverError::Spectral(e) => e.kind(),
            SolverError::Operator(e) => e.kind(),
            SolverError::Transfer(e) => e.kind(),
            SolverError::Json(_) => "SerializeError",
            SolverError::Io(_) => "IoError",
        }
    }
}

/// Sizes the overlay grid for a cloud: the spacing must not exceed half
/// the minimum pairwise distance, so with box half-width `r_fd` the node
/// count per semiaxis is N = floor(r_fd / h) + 1 where h = min_dist / 2.
///
/// The ratio is nudged by one part in 1e12 before flooring so that exact
/// divisions (which f64 may round just below an integer) stay exact.
pub fn size_grid(cloud: &PointCloud, r_fd: f64) -> Result<UniformGrid, SolverError> {
    size_grid_with_cap(cloud, r_fd, GRID_NODE_CAP)
}

/// [`size_grid`] with an explicit node cap.
pub fn size_grid_with_cap(
    cloud: &PointCloud,
    r_fd: f64,
    cap: usize,
) -> Result<UniformGrid, SolverError> {
    let h_fd = cloud.min_pairwise_distance() / 2.0;
    let ratio = r_fd / h_fd;
    let n_fd = (ratio * (1.0 + 1e-12)).floor() as usize + 1;
    let side = 2 * n_fd as u128 + 1;
    let nodes = side * side;
    if nodes > cap as u128 {
        return Err(SolverError::GridTooLarge { n_fd, nodes, cap });
    }
    Ok(UniformGrid::new(r_fd, n_fd))
}

/// Outcome of the grid-versus-cloud resolution check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solvability {
    /// Grid spacing is at most a_h / (3 sqrt 2): the transfer has full
    /// column rank and the system is provably nonsingular.
    Sufficient,
    /// Grid spacing is at most the supplied length scale; full rank is
    /// expected but not guaranteed.
    Heuristic,
    /// No guarantee either way.
    Unverified,
}

impl std::fmt::Display for Solvability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solvability::Sufficient => "sufficient",
            Solvability::Heuristic => "heuristic",
            Solvability::Unverified => "unverified",
        })
    }
}

/// Classifies the grid spacing against the minimum triangle height `a_h`
/// when one is available. Without a triangulation the cloud's minimum
/// pairwise distance serves as a proxy upper bound for a_h, which can
/// certify at most the heuristic band. Diagnostic only: never blocks a
/// solve.
pub fn check_solvability(
    cloud: &PointCloud,
    grid: &UniformGrid,
    a_h: Option<f64>,
) -> Solvability {
    let h = grid.spacing();
    match a_h {
        Some(a) => {
            if h <= a / (3.0 * std::f64::consts::SQRT_2) {
                Solvability::Sufficient
            } else if h <= a {
                Solvability::Heuristic
            } else {
                Solvability::Unverified
            }
        }
        None => {
            if h <= cloud.min_pairwise_distance() {
                Solvability::Heuristic
            } else {
                Solvability::Unverified
            }
        }
    }
}

/// A homogeneous Dirichlet problem for the fractional Laplacian: the
/// domain, the order, and the source term.
pub struct FractionalProblem {
    domain: DomainSpec,
    s: FractionalOrder,
    f: Box<dyn Fn(Point) -> f64 + Send + Sync>,
    cg_tol: f64,
    node_cap: usize,
}

impl FractionalProblem {
    pub fn new(
        domain: DomainSpec,
        s: FractionalOrder,
        f: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FractionalProblem {
            domain,
            s,
            f: Box::new(f),
            cg_tol: DEFAULT_CG_TOL,
            node_cap: GRID_NODE_CAP,
        }
    }

    /// Overrides the CG relative-residual tolerance.
    pub fn with_cg_tolerance(mut self, tol: f64) -> Self {
        self.cg_tol = tol;
        self
    }

    /// Overrides the grid node cap.
    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn order(&self) -> FractionalOrder {
        self.s
    }

    pub fn source(&self, p: Point) -> f64 {
        (self.f)(p)
    }

    pub fn cg_tolerance(&self) -> f64 {
        self.cg_tol
    }
}

/// The assembled system: grid operator, transfer, and the interior
/// column-sum diagonal. Applies `I^T A I` matrix-free.
pub struct GofdSystem {
    op: FdOperator,
    transfer: TransferMatrix,
    n_interior: usize,
    d: Vec<f64>,
}

impl GofdSystem {
    /// Builds the system on the grid sized from the cloud.
    pub fn build(
        domain: &DomainSpec,
        s: FractionalOrder,
        cloud: &PointCloud,
        method: TransferMethod,
    ) -> Result<Self, SolverError> {
        let grid = size_grid(cloud, domain.fd_box())?;
        Self::with_grid(domain, s, cloud, method, grid)
    }

    /// Builds the system on an explicit grid (for experiments with
    /// resolutions other than the sized default).
    pub fn with_grid(
        domain: &DomainSpec,
        s: FractionalOrder,
        cloud: &PointCloud,
        method: TransferMethod,
        grid: UniformGrid,
    ) -> Result<Self, SolverError> {
        let op = FdOperator::build(grid, s)?;
        let transfer = build_transfer(cloud, grid, method, domain)?;
        Self::from_parts(op, transfer, cloud.n_interior())
    }

    /// Wraps a prebuilt operator and transfer (the operator may carry a
    /// cached stencil). Checks the diagonal's strict positivity.
    pub fn from_parts(
        op: FdOperator,
        transfer: TransferMatrix,
        n_interior: usize,
    ) -> Result<Self, SolverError> {
        let d: Vec<f64> = transfer.column_sums()[..n_interior].to_vec();
        let offenders: Vec<usize> = d
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= 0.0)
            .map(|(i, _)| i)
            .collect();
        if !offenders.is_empty() {
            return Err(SolverError::SingularD {
                indices: offenders,
            });
        }
        Ok(GofdSystem {
            op,
            transfer,
            n_interior,
            d,
        })
    }

    pub fn grid(&self) -> UniformGrid {
        self.op.grid()
    }

    pub fn operator(&self) -> &FdOperator {
        &self.op
    }

    pub fn transfer(&self) -> &TransferMatrix {
        &self.transfer
    }

    /// Interior column sums of the transfer, all strictly positive.
    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    /// Pads interior coefficients with zeros for the boundary columns.
    fn padded(&self, v: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.transfer.n_cols()];
        full[..v.len()].copy_from_slice(v);
        full
    }

    /// Applies `I^T A I` to interior coefficients: scatter to the grid,
    /// stencil convolution by FFT, gather back. Never forms a dense
    /// system matrix.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        if v.len() != self.n_interior {
            return Err(SolverError::DimensionMismatch {
                expected: self.n_interior,
                got: v.len(),
            });
        }
        let scattered: GridVector = self.transfer.apply(&self.padded(v));
        let convolved = self.op.apply(&scattered)?;
        let mut gathered = self.transfer.apply_transpose(convolved.as_slice());
        gathered.truncate(self.n_interior);
        Ok(gathered)
    }
}

/// Solve outcome. `solution` holds the interior cloud values in cloud
/// order; boundary values are identically zero and are not stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_relative_residual: f64,
    #[serde(rename = "h_FD")]
    pub h_fd: f64,
    #[serde(rename = "N_FD")]
    pub n_fd: usize,
    /// Seconds spent in assembly plus CG.
    pub wall_time: f64,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Values at every cloud point: interior solution, then zeros for the
    /// boundary points.
    pub fn nodal_values(&self, cloud: &PointCloud) -> Vec<f64> {
        let mut out = self.solution.clone();
        out.resize(cloud.n_total(), 0.0);
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SolverError> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    /// Writes "x y u" per cloud point: interior points first, then the
    /// boundary points with u = 0.
    pub fn dump_solution(&self, cloud: &PointCloud, path: &Path) -> Result<(), SolverError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (p, u) in cloud.points().iter().zip(self.nodal_values(cloud)) {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, u)?;
        }
        Ok(())
    }
}

/// Solves the problem on the cloud with the requested transfer method.
///
/// The right-hand side folds the diagonal in: b = h^{2s} D f at the
/// interior points. CG starts from zero and stops at relative residual
/// `problem.cg_tolerance()` or errs after 10 N_vi iterations.
pub fn solve(
    problem: &FractionalProblem,
    cloud: &PointCloud,
    method: TransferMethod,
) -> Result<SolveReport, SolverError> {
    solve_impl(problem, cloud, method, false)
}

/// Solves the scaled formulation instead: the diagonal and the grid
/// spacing power are applied explicitly, giving the symmetrized system
/// D^{-1/2} (I^T A I) D^{-1/2} y = h^{2s} D^{1/2} f with u = D^{-1/2} y.
/// Agrees with [`solve`] up to iteration roundoff; kept as a consistency
/// check and for conditioning experiments.
pub fn solve_scaled(
    problem: &FractionalProblem,
    cloud: &PointCloud,
    method: TransferMethod,
) -> Result<SolveReport, SolverError> {
    solve_impl(problem, cloud, method, true)
}

fn solve_impl(
    problem: &FractionalProblem,
    cloud: &PointCloud,
    method: TransferMethod,
    scaled: bool,
) -> Result<SolveReport, SolverError> {
    let start = Instant::now();
    let grid = size_grid_with_cap(cloud, problem.domain().fd_box(), problem.node_cap)?;
    let sys = GofdSystem::with_grid(problem.domain(), problem.order(), cloud, method, grid)?;

    let mut warnings = Vec::new();
    if check_solvability(cloud, &grid, None) == Solvability::Unverified {
        warnings.push("grid spacing exceeds the cloud minimum distance".to_string());
    }
    let uncovered = sys.transfer().uncovered_interior_nodes();
    if uncovered > 0 {
        warnings.push(format!(
            "{uncovered} grid nodes inside the domain have empty transfer rows"
        ));
    }

    let n_vi = cloud.n_interior();
    let h = grid.spacing();
    let power = h.powf(2.0 * problem.order().value());
    let f_vals: Vec<f64> = cloud.interior().iter().map(|&p| problem.source(p)).collect();

    let max_iter = CG_ITERATION_FACTOR * n_vi;
    let outcome = if scaled {
        let d_sqrt: Vec<f64> = sys.diagonal().iter().map(|&v| v.sqrt()).collect();
        let b: Vec<f64> = (0..n_vi).map(|i| power * d_sqrt[i] * f_vals[i]).collect();
        let apply = |y: &[f64]| -> Result<Vec<f64>, SolverError> {
            let v: Vec<f64> = y.iter().zip(&d_sqrt).map(|(&yi, &di)| yi / di).collect();
            let mut out = sys.apply(&v)?;
            for (o, &di) in out.iter_mut().zip(&d_sqrt) {
                *o /= di;
            }
            Ok(out)
        };
        let mut outcome = conjugate_gradient(apply, &b, problem.cg_tolerance(), max_iter, |_| {})?;
        for (x, &di) in outcome.solution.iter_mut().zip(&d_sqrt) {
            *x /= di;
        }
        outcome
    } else {
        let b: Vec<f64> = (0..n_vi)
            .map(|i| power * sys.diagonal()[i] * f_vals[i])
            .collect();
        conjugate_gradient(
            |v| sys.apply(v),
            &b,
            problem.cg_tolerance(),
            max_iter,
            |_| {},
        )?
    };

    Ok(SolveReport {
        solution: outcome.solution,
        iterations: outcome.iterations,
        final_relative_residual: outcome.relative_residual,
        h_fd: h,
        n_fd: grid.n(),
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    })
}

struct CgOutcome {
    solution: Vec<f64>,
    iterations: usize,
    relative_residual: f64,
}

/// Plain CG from the zero vector. `on_residual` sees every residual
/// vector including the initial one (used by diagnostics and tests).
fn conjugate_gradient<E>(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mut on_residual: impl FnMut(&[f64]),
) -> Result<CgOutcome, E>
where
    E: From<SolverError>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    on_residual(&r);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut rr = dot(&r, &r);
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // loss of positivity, typically roundoff at the bottom of
            // the residual curve
            return Err(SolverError::CgStalled {
                iterations: it,
                relative_residual: rr.sqrt() / b_norm,
                tolerance: tol,
            }
            .into());
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        on_residual(&r);
        let rr_next = dot(&r, &r);
        let rel = rr_next.sqrt() / b_norm;
        if rel <= tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(SolverError::CgStalled {
        iterations: max_iter,
        relative_residual: rr.sqrt() / b_norm,
        tolerance: tol,
    }
    .into())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
