//! Grid-overlay finite difference (GoFD) solver for the integral fractional
//! Laplacian with homogeneous Dirichlet volume constraints on bounded 2D
//! domains.
//!
//! The method never meshes the domain for the operator itself. Instead it
//! overlays a uniform grid on a box containing the domain, realizes the
//! fractional Laplacian there as a convolution with Fourier-coefficient
//! stencil weights (applied matrix-free via FFT), and couples the grid to an
//! arbitrary point cloud through a sparse interpolation transfer. Two
//! transfer constructions are provided: moving least squares and piecewise
//! linear interpolation on a constrained Delaunay triangulation.
//!
//! Modules follow the pipeline:
//!
//! * [`spectral`]: stencil weights from the discrete symbol.
//! * [`operator`]: the uniform-grid operator and its FFT apply.
//! * [`geometry`]: domain descriptions, membership, boundary sampling.
//! * [`cloud`]: point-cloud generators, neighbor queries, perturbation.
//! * [`transfer`]: grid-from-cloud interpolation matrices (MLS / CDT).
//! * [`solver`]: the assembled linear system and its CG solve.
//! * [`metrics`]: exact solutions, L2 errors, convergence-order fits.
//! * [`experiment`]: config-driven convergence studies behind the CLI.

pub mod cloud;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod operator;
pub mod solver;
pub mod spectral;
pub mod transfer;

pub use cloud::{NeighborIndex, PointCloud};
pub use geometry::{DomainSpec, Point};
pub use operator::{FdOperator, GridVector, UniformGrid};
pub use solver::{FractionalProblem, SolveReport, Solvability};
pub use spectral::{FractionalOrder, StencilTable};
pub use transfer::{TransferMatrix, TransferMethod, Triangulation};

/// Umbrella error for the full solve pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Operator(#[from] operator::OperatorError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Cloud(#[from] cloud::CloudError),
    #[error(transparent)]
    Transfer(#[from] transfer::TransferError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable kind tag, stable across formatting changes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Spectral(e) => e.kind(),
            Error::Operator(e) => e.kind(),
            Error::Geometry(e) => e.kind(),
            Error::Cloud(e) => e.kind(),
            Error::Transfer(e) => e.kind(),
            Error::Solver(e) => e.kind(),
            Error::Metrics(e) => e.kind(),
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}
