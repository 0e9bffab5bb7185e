//! The fractional Laplacian on a uniform overlay grid.
//!
//! Grid nodes (j h, k h) for j, k in [-N, N] carry a dimensionless
//! operator: convolution with the stencil table of half-extent 2N. The
//! apply never forms a matrix; it runs a zero-padded cyclic convolution of
//! length 4N+2 per axis, which reproduces the finite convolution exactly
//! on the output window. The physical scaling 1/h^{2s} is applied by the
//! solver, not here.

use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::geometry::Point;
use crate::spectral::{self, FractionalOrder, SpectralError, StencilTable};

/// Largest N for which the dense-matrix oracle paths are allowed.
pub const DENSE_ORACLE_CAP: usize = 32;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("grid mismatch: operator has (R = {expected_r}, N = {expected_n}), vector has (R = {got_r}, N = {got_n})")]
    GridMismatch {
        expected_r: f64,
        expected_n: usize,
        got_r: f64,
        got_n: usize,
    },
    #[error("N = {n} too large for the dense oracle (cap {cap})")]
    TooLargeForOracle { n: usize, cap: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl OperatorError {
    pub fn kind(&self) -> &'static str {
        match self {
            OperatorError::GridMismatch { .. } => "GridMismatch",
            OperatorError::TooLargeForOracle { .. } => "TooLargeForOracle",
            OperatorError::Spectral(e) => e.kind(),
        }
    }
}

/// Uniform grid on [-R, R]^2 with nodes (j h, k h), j, k in [-N, N],
/// h = R / N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    half_width: f64,
    n: usize,
    spacing: f64,
}

impl UniformGrid {
    pub fn new(half_width: f64, n: usize) -> Self {
        assert!(half_width > 0.0 && n > 0, "grid needs R > 0 and N > 0");
        UniformGrid {
            half_width,
            n,
            spacing: half_width / n as f64,
        }
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// N: nodes run j, k = -N..=N.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Nodes per axis, 2N+1.
    #[inline]
    pub fn side(&self) -> usize {
        2 * self.n + 1
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Row-major index of node (j, k), j outer.
    #[inline]
    pub fn index(&self, j: i64, k: i64) -> usize {
        let n = self.n as i64;
        debug_assert!(j.abs() <= n && k.abs() <= n);
        ((j + n) as usize) * self.side() + (k + n) as usize
    }

    #[inline]
    pub fn coord(&self, j: i64, k: i64) -> Point {
        Point::new(j as f64 * self.spacing, k as f64 * self.spacing)
    }

    /// Inverse of [`UniformGrid::index`].
    #[inline]
    pub fn node(&self, index: usize) -> (i64, i64) {
        let side = self.side();
        let n = self.n as i64;
        ((index / side) as i64 - n, (index % side) as i64 - n)
    }
}

/// Values on every node of a [`UniformGrid`], row-major j-then-k.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl GridVector {
    pub fn zeros(grid: UniformGrid) -> Self {
        GridVector {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn from_fn(grid: UniformGrid, mut f: impl FnMut(i64, i64) -> f64) -> Self {
        let n = grid.n as i64;
        let mut values = Vec::with_capacity(grid.node_count());
        for j in -n..=n {
            for k in -n..=n {
                values.push(f(j, k));
            }
        }
        GridVector { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    #[inline]
    pub fn get(&self, j: i64, k: i64) -> f64 {
        self.values[self.grid.index(j, k)]
    }

    #[inline]
    pub fn set(&mut self, j: i64, k: i64, v: f64) {
        let i = self.grid.index(j, k);
        self.values[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

struct Workspace {
    buf: Vec<Complex<f64>>,
    col: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

/// Matrix-free grid operator: convolution with the stencil weights.
pub struct FdOperator {
    grid: UniformGrid,
    stencil: StencilTable,
    kernel_hat: Vec<Complex<f64>>,
    padded: usize,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    workspace: Mutex<Workspace>,
}

impl FdOperator {
    /// Builds the operator for `grid`, computing a stencil of half-extent
    /// 2N at the default quadrature resolution.
    pub fn build(grid: UniformGrid, s: FractionalOrder) -> Result<Self, OperatorError> {
        let half_extent = 2 * grid.n();
        let table = spectral::compute_stencil(s, half_extent, spectral::default_resolution(half_extent))?;
        Ok(Self::from_table(grid, table))
    }

    /// Wraps a precomputed stencil table (e.g. loaded from cache). The
    /// table must cover at least half-extent 2N.
    pub fn from_table(grid: UniformGrid, table: StencilTable) -> Self {
        assert!(
            table.half_extent >= 2 * grid.n(),
            "stencil half-extent {} below required {}",
            table.half_extent,
            2 * grid.n()
        );
        let n = grid.n();
        let padded = 4 * n + 2;
        let mut planner = FftPlanner::<f64>::new();
        let fft_fwd = planner.plan_fft_forward(padded);
        let fft_inv = planner.plan_fft_inverse(padded);

        // Embed T into the padded torus: slot r maps to offset r for
        // r <= 2N and r - L for r >= 2N+2; the unused slot 2N+1 stays 0.
        let mut kernel = vec![Complex::new(0.0, 0.0); padded * padded];
        let offset_of = |r: usize| -> Option<i64> {
            if r <= 2 * n {
                Some(r as i64)
            } else if r >= 2 * n + 2 {
                Some(r as i64 - padded as i64)
            } else {
                None
            }
        };
        for r in 0..padded {
            let Some(p) = offset_of(r) else { continue };
            for c in 0..padded {
                let Some(q) = offset_of(c) else { continue };
                kernel[r * padded + c] = Complex::new(table.get(p, q), 0.0);
            }
        }
        let scratch_len = fft_fwd
            .get_inplace_scratch_len()
            .max(fft_inv.get_inplace_scratch_len());
        let mut scratch = vec![Complex::default(); scratch_len];
        let mut col = vec![Complex::default(); padded];
        fft2(&mut kernel, padded, &fft_fwd, &mut col, &mut scratch);

        let workspace = Mutex::new(Workspace {
            buf: vec![Complex::default(); padded * padded],
            col,
            scratch,
        });
        FdOperator {
            grid,
            stencil: table,
            kernel_hat: kernel,
            padded,
            fft_fwd,
            fft_inv,
            workspace,
        }
    }

    #[inline]
    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn stencil(&self) -> &StencilTable {
        &self.stencil
    }

    pub fn order(&self) -> FractionalOrder {
        self.stencil.s
    }

    fn check_grid(&self, v: &GridVector) -> Result<(), OperatorError> {
        if v.grid != self.grid {
            return Err(OperatorError::GridMismatch {
                expected_r: self.grid.half_width,
                expected_n: self.grid.n,
                got_r: v.grid.half_width,
                got_n: v.grid.n,
            });
        }
        Ok(())
    }

    /// v -> T * v via the padded FFT convolution. Exact (up to roundoff)
    /// on the whole node window.
    pub fn apply(&self, v: &GridVector) -> Result<GridVector, OperatorError> {
        self.check_grid(v)?;
        let side = self.grid.side();
        let l = self.padded;
        let mut ws = self.workspace.lock().unwrap();
        let Workspace { buf, col, scratch } = &mut *ws;

        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for r in 0..side {
            for c in 0..side {
                buf[r * l + c] = Complex::new(v.values[r * side + c], 0.0);
            }
        }
        fft2(buf, l, &self.fft_fwd, col, scratch);
        for (z, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *z *= k;
        }
        fft2(buf, l, &self.fft_inv, col, scratch);

        let scale = 1.0 / (l * l) as f64;
        let mut out = GridVector::zeros(self.grid);
        for r in 0..side {
            for c in 0..side {
                out.values[r * side + c] = buf[r * l + c].re * scale;
            }
        }
        Ok(out)
    }

    /// Literal quadruple-sum reference apply; O(N^4), capped at
    /// [`DENSE_ORACLE_CAP`].
    pub fn apply_dense_oracle(&self, v: &GridVector) -> Result<GridVector, OperatorError> {
        self.check_grid(v)?;
        let n = self.grid.n;
        if n > DENSE_ORACLE_CAP {
            return Err(OperatorError::TooLargeForOracle {
                n,
                cap: DENSE_ORACLE_CAP,
            });
        }
        let ni = n as i64;
        let mut out = GridVector::zeros(self.grid);
        for j in -ni..=ni {
            for k in -ni..=ni {
                let mut acc = 0.0;
                for m in -ni..=ni {
                    for nn in -ni..=ni {
                        acc += self.stencil.get(j - m, k - nn) * v.get(m, nn);
                    }
                }
                out.set(j, k, acc);
            }
        }
        Ok(out)
    }

    /// Densified operator matrix, row-major over node indices. Same cap
    /// as the oracle apply; meant for small-grid spectral checks.
    pub fn to_dense(&self) -> Result<Vec<f64>, OperatorError> {
        let n = self.grid.n;
        if n > DENSE_ORACLE_CAP {
            return Err(OperatorError::TooLargeForOracle {
                n,
                cap: DENSE_ORACLE_CAP,
            });
        }
        let count = self.grid.node_count();
        let ni = n as i64;
        let mut mat = vec![0.0; count * count];
        for j in -ni..=ni {
            for k in -ni..=ni {
                let row = self.grid.index(j, k);
                for m in -ni..=ni {
                    for nn in -ni..=ni {
                        mat[row * count + self.grid.index(m, nn)] = self.stencil.get(j - m, k - nn);
                    }
                }
            }
        }
        Ok(mat)
    }
}

/// In-place 2D FFT on a row-major l x l buffer: rows first, then columns
/// through a gather buffer.
fn fft2(
    buf: &mut [Complex<f64>],
    l: usize,
    fft: &Arc<dyn Fft<f64>>,
    col: &mut Vec<Complex<f64>>,
    scratch: &mut Vec<Complex<f64>>,
) {
    debug_assert_eq!(buf.len(), l * l);
    for row in buf.chunks_exact_mut(l) {
        fft.process_with_scratch(row, scratch);
    }
    col.resize(l, Complex::default());
    for c in 0..l {
        for r in 0..l {
            col[r] = buf[r * l + c];
        }
        fft.process_with_scratch(col, scratch);
        for r in 0..l {
            buf[r * l + c] = col[r];
        }
    }
}
