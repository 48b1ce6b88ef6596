//! Quantum states, the Cholesky `tau` parameterization, and state metrics.
//!
//! A density matrix `rho` of `d` qubits is written as `rho = T^dag T / Tr(T^dag T)`
//! with `T` lower triangular. Flattening `T` gives a real vector of length
//! `4^d` (a [`TauVector`]), and every nonzero vector maps back to a physical
//! state. The flat layout is:
//!
//! 1. the `2^d` real diagonal entries `T[i][i]`, in row order;
//! 2. for every strictly-lower entry `T[r][c]` (`r > c`) in row-major order,
//!    the pair `(Re, Im)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance on Hermiticity, trace and positivity for [`DensityMatrix::new`].
pub const DENSITY_TOLERANCE: f64 = 1e-10;

/// Default blend weight with the maximally mixed state before factoring.
pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Hilbert-space dimension `2^d`.
pub fn hilbert_dim(qubits: usize) -> usize {
    1 << qubits
}

/// Inverts `len = base^d`; `None` when `len` is not a positive power of `base`.
pub(crate) fn qubits_from_len(len: usize, base: usize) -> Option<usize> {
    let mut d = 0;
    let mut n = 1;
    while n < len {
        n *= base;
        d += 1;
    }
    (n == len && d >= 1).then_some(d)
}

fn check_qubits(d: usize) -> Result<()> {
    if d < 1 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(())
}

/// A normalized state vector of `d` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    qubits: usize,
    amplitudes: CVector,
}

impl PureState {
    /// Normalizes `amplitudes`; the length must be `2^d` for some `d >= 1`.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let qubits = qubits_from_len(amplitudes.len(), 2).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "state length {} is not a power of two >= 2",
                amplitudes.len()
            ))
        })?;
        let v = CVector::from_vec(amplitudes);
        let norm = v.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidArgument(
                "state vector has zero or non-finite norm".into(),
            ));
        }
        Ok(Self {
            qubits,
            amplitudes: v.unscale(norm),
        })
    }

    /// Computational basis state `|index>`.
    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        check_qubits(qubits)?;
        let n = hilbert_dim(qubits);
        if index >= n {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {qubits} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); n];
        amps[index] = Complex64::new(1.0, 0.0);
        Self::new(amps)
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    /// The projector `|psi><psi|`.
    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::from_hermitian_unchecked(self.qubits, m)
    }
}

/// Samples a Haar-random pure state by normalizing `2^d` independent standard
/// complex Gaussians.
pub fn haar_random_pure<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> Result<PureState> {
    check_qubits(qubits)?;
    let amps = (0..hilbert_dim(qubits))
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
        .collect();
    PureState::new(amps)
}

/// A Hermitian, unit-trace, positive semidefinite matrix of dimension `2^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    qubits: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates `matrix` against the density-matrix invariants.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument(
                "density matrix must be square".into(),
            ));
        }
        let qubits = qubits_from_len(matrix.nrows(), 2).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "matrix dimension {} is not a power of two >= 2",
                matrix.nrows()
            ))
        })?;
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..n {
                let a = matrix[(i, j)];
                if !(a.re.is_finite() && a.im.is_finite()) {
                    return Err(Error::NonFinite("density matrix entry".into()));
                }
                if (a - matrix[(j, i)].conj()).norm() > DENSITY_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > DENSITY_TOLERANCE || trace.im.abs() > DENSITY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "trace is {trace}, expected 1"
            )));
        }
        let rho = Self::from_hermitian_unchecked(qubits, matrix);
        let min = rho.min_eigenvalue();
        if min < -DENSITY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "matrix is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(rho)
    }

    /// Symmetrizes `matrix` and skips validation. Callers guarantee the
    /// trace and positivity invariants by construction.
    pub(crate) fn from_hermitian_unchecked(qubits: usize, matrix: CMatrix) -> Self {
        let matrix = (&matrix + matrix.adjoint()).scale(0.5);
        Self { qubits, matrix }
    }

    /// `I / 2^d`.
    pub fn maximally_mixed(qubits: usize) -> Result<Self> {
        check_qubits(qubits)?;
        let n = hilbert_dim(qubits);
        let m = CMatrix::identity(n, n).scale(1.0 / n as f64);
        Ok(Self { qubits, matrix: m })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Real vector of length `4^d` parameterizing a density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TauVector {
    qubits: usize,
    values: Vec<f64>,
}

impl TauVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let qubits = qubits_from_len(values.len(), 4).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "tau length {} is not a power of four >= 4",
                values.len()
            ))
        })?;
        Ok(Self { qubits, values })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Rebuilds the lower-triangular factor `T` from the flat layout.
    pub fn to_factor(&self) -> CMatrix {
        factor_from_slice(&self.values, hilbert_dim(self.qubits))
    }
}

/// Rebuilds lower-triangular `T` (n x n) from a flat tau slice of length n^2.
pub(crate) fn factor_from_slice(values: &[f64], n: usize) -> CMatrix {
    debug_assert_eq!(values.len(), n * n);
    let mut t = CMatrix::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = Complex64::new(values[i], 0.0);
    }
    let mut k = n;
    for r in 1..n {
        for c in 0..r {
            t[(r, c)] = Complex64::new(values[k], values[k + 1]);
            k += 2;
        }
    }
    t
}

/// Flat index of `(Re T[r][c], Im T[r][c])` for `r > c`.
pub(crate) fn off_diagonal_slot(n: usize, r: usize, c: usize) -> usize {
    debug_assert!(r > c && r < n);
    n + 2 * (r * (r - 1) / 2 + c)
}

/// Factors `(1 - epsilon) rho + epsilon I / 2^d` as `T^dag T` and flattens `T`.
///
/// The result is canonical: unit norm with a nonnegative diagonal.
pub fn tau_from_density(rho: &DensityMatrix, epsilon: f64) -> Result<TauVector> {
    if !(0.0..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 1e-3]"
        )));
    }
    let n = rho.dim();
    let blended =
        rho.matrix().scale(1.0 - epsilon) + CMatrix::identity(n, n).scale(epsilon / n as f64);

    // Reverse Cholesky: rows of T are fixed from the last one upwards, since
    // (T^dag T)[i][j] only involves rows k >= max(i, j).
    let mut t = CMatrix::zeros(n, n);
    for i in (0..n).rev() {
        let mut pivot = blended[(i, i)].re;
        for k in i + 1..n {
            pivot -= t[(k, i)].norm_sqr();
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::Decomposition {
                pivot: i,
                value: pivot,
            });
        }
        let diag = pivot.sqrt();
        t[(i, i)] = Complex64::new(diag, 0.0);
        for j in 0..i {
            let mut acc = blended[(i, j)];
            for k in i + 1..n {
                acc -= t[(k, i)].conj() * t[(k, j)];
            }
            t[(i, j)] = acc / diag;
        }
    }

    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i] = t[(i, i)].re;
    }
    for r in 1..n {
        for c in 0..r {
            let k = off_diagonal_slot(n, r, c);
            values[k] = t[(r, c)].re;
            values[k + 1] = t[(r, c)].im;
        }
    }
    TauVector::new(values)
}

/// `T^dag T / Tr(T^dag T)`. Total on every nonzero tau.
pub fn density_from_tau(tau: &TauVector) -> Result<DensityMatrix> {
    let trace = tau.norm_squared();
    if trace == 0.0 {
        return Err(Error::DegenerateParameter);
    }
    if !trace.is_finite() {
        return Err(Error::NonFinite("tau vector".into()));
    }
    let t = tau.to_factor();
    let m = (t.adjoint() * &t).unscale(trace);
    Ok(DensityMatrix::from_hermitian_unchecked(tau.qubits(), m))
}

/// Eigenvalues below this fraction of the largest are treated as zero when
/// taking square roots; they are below what the eigensolver can resolve.
const EIGEN_CUTOFF: f64 = 16.0 * f64::EPSILON;

/// Square root of a Hermitian PSD matrix via eigendecomposition, with tiny
/// and negative eigenvalues clamped to zero.
pub fn sqrt_psd(m: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = EIGEN_CUTOFF * max;
    let roots = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    scaled * v.adjoint()
}

/// Squared Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`, clamped to `[0, 1]`.
///
/// The trace norm is taken as the sum of singular values of
/// `sqrt(rho) sqrt(sigma)`, which avoids squaring small eigenvalues of the
/// inner product.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            actual: sigma.dim(),
        });
    }
    let product = sqrt_psd(rho.matrix()) * sqrt_psd(sigma.matrix());
    let trace_norm: f64 = product.singular_values().iter().sum();
    Ok((trace_norm * trace_norm).clamp(0.0, 1.0))
}

/// `Tr(rho^2)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().iter().map(|a| a.norm_sqr()).sum()
}
