//! Complex linear-algebra and RNG helpers shared across the crate.
//!
//! Everything here is deterministic: reductions run in index order, the
//! log-sum-exp sums its terms in sorted order, and random streams are
//! derived from explicit (seed, stream) pairs. Results therefore do not
//! depend on thread count.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// SplitMix64 step; used to derive independent sub-seeds from a master seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for a named purpose (dataset generation, fit, sweep, ...).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0xa076_1d64_78bd_642f)))
}

/// A ChaCha stream keyed by (seed, stream). Distinct streams are independent,
/// which lets callers split one master seed across samples, trials or blocks.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from the standard circularly-symmetric complex Gaussian N_C(0, 1).
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Vector with i.i.d. N_C(0, variance) entries.
pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVector {
    let scale = variance.sqrt();
    CVector::from_iterator(len, (0..len).map(|_| standard_complex(rng) * scale))
}

/// Column-major matrix with i.i.d. N_C(0, variance) entries.
pub fn complex_gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    nrows: usize,
    ncols: usize,
    variance: f64,
) -> CMatrix {
    let scale = variance.sqrt();
    CMatrix::from_iterator(nrows, ncols, (0..nrows * ncols).map(|_| standard_complex(rng) * scale))
}

/// log(sum(exp(values))) with max-shift stabilization.
///
/// The shifted terms are summed in ascending sorted order, so the result is
/// invariant under permutation of `values` (bit-exact), not just up to
/// rounding. Returns -inf for an empty slice or all-(-inf) input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut terms: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    terms.sort_unstable_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Replace `a` with its Hermitian part (a + a^H) / 2 and zero the imaginary
/// parts of the diagonal.
pub fn hermitianize(a: &mut CMatrix) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
}

/// a + s * I
pub fn add_scaled_identity(a: &CMatrix, s: f64) -> CMatrix {
    let mut out = a.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += C64::new(s, 0.0);
    }
    out
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

/// Cholesky factorization of a Hermitian positive-definite matrix, wrapped so
/// call sites get solves, the log-determinant and the half quadratic form
/// without ever forming an explicit inverse.
pub struct HermitianFactor {
    chol: Cholesky<C64, Dyn>,
}

impl HermitianFactor {
    /// Factor `a`, which must be Hermitian positive definite. `context` names
    /// the matrix in the error (e.g. the mixture component it belongs to).
    pub fn new(a: &CMatrix, context: &str) -> Result<Self> {
        let fail = || {
            Error::Numerical(format!(
                "Cholesky factorization failed (matrix not positive definite): {context}"
            ))
        };
        let chol = a.clone().cholesky().ok_or_else(fail)?;
        // nalgebra's complex Cholesky happily takes complex square roots of
        // negative pivots; a PD input must yield a real positive diagonal
        let l = chol.l_dirty();
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if !d.re.is_finite() || d.re <= 0.0 || d.im.abs() > 1e-8 * d.re {
                return Err(fail());
            }
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// log det(A) = 2 * sum(log L_ii); the diagonal of L is real positive.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0
    }

    pub fn solve_vec(&self, b: &CVector) -> CVector {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &CMatrix) -> CMatrix {
        self.chol.solve(b)
    }

    /// x^H A^{-1} x via one triangular solve.
    pub fn quad_form(&self, x: &CVector) -> f64 {
        let mut w = x.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w.norm_squared()
    }

    /// Solve L W = B for the lower-triangular factor L; columns of the result
    /// have squared norms equal to the quadratic forms of the columns of B.
    pub fn half_solve_mat(&self, b: &mut CMatrix) {
        self.chol.l_dirty().solve_lower_triangular_mut(b);
    }
}

/// Full Hermitian eigendecomposition with eigenvalues sorted descending.
/// Input is symmetrized first; eigenvalues of PSD inputs are clamped at zero.
pub fn sorted_hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let mut sym = a.clone();
    hermitianize(&mut sym);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Orthonormalize the columns of `a` in place via thin QR.
pub fn orthonormalize(a: &CMatrix) -> CMatrix {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix the sign convention so the result is deterministic
    for j in 0..q.ncols() {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            let col = q.column(j) * phase;
            q.set_column(j, &col);
        }
    }
    q
}
