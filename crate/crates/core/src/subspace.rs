//! Blind maximum-likelihood subspace estimation: receive sample covariance,
//! dominant eigenbasis and orthogonal projector.
//!
//! Blind ML reduces to maximizing tr(P C_hat) over rank-J orthogonal
//! projectors P, solved by the J dominant eigenvectors of the receive sample
//! covariance. Eigenvectors are not unique (any rotation inside an invariant
//! subspace is equally valid), so all contracts downstream are stated on the
//! projector V V^H rather than on V itself.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_distance, hermitian_deviation, hermitianize, orthonormalize, sorted_hermitian_eigen,
    stream_rng, C64, CMatrix,
};

/// An orthonormal basis of the estimated channel subspace together with the
/// eigenvalues it was extracted from (sorted descending).
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: CMatrix,
    eigenvalues: Vec<f64>,
}

impl SubspaceBasis {
    pub fn new(basis: CMatrix, eigenvalues: Vec<f64>) -> Result<Self> {
        let j = basis.ncols();
        if eigenvalues.len() != j {
            return Err(Error::DimensionMismatch(
                "eigenvalue count must match basis column count".into(),
            ));
        }
        let gram = basis.adjoint() * &basis;
        let dev = frobenius_distance(&gram, &CMatrix::identity(j, j));
        if dev > 1e-10 * (j as f64).sqrt().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (deviation {dev:.3e})"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "eigenvalues must be nonnegative and sorted descending".into(),
            ));
        }
        Ok(Self { basis, eigenvalues })
    }

    pub fn antenna_count(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The orthogonal projector P = V V^H onto the subspace.
    pub fn projector(&self) -> CMatrix {
        let mut p = &self.basis * self.basis.adjoint();
        hermitianize(&mut p);
        p
    }

    /// The basis columns as a dataset, so a basis can be dumped through the
    /// CVD1 container for debugging.
    pub fn to_dataset(&self) -> crate::scenarios::ChannelDataset {
        let samples: Vec<_> = self.basis.column_iter().map(|c| c.clone_owned()).collect();
        crate::scenarios::ChannelDataset::new(self.antenna_count(), samples, 1.0)
            .expect("basis columns share the antenna count")
    }
}

/// Receive sample covariance (1/N) Y Y^H, symmetrized after accumulation.
pub fn sample_covariance(observations: &CMatrix) -> Result<CMatrix> {
    let n = observations.ncols();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample covariance needs at least one snapshot".into(),
        ));
    }
    let m = observations.nrows();
    let mut cov = CMatrix::zeros(m, m);
    cov.gemm(
        C64::new(1.0 / n as f64, 0.0),
        observations,
        &observations.adjoint(),
        C64::new(0.0, 0.0),
    );
    hermitianize(&mut cov);
    Ok(cov)
}

fn check_hermitian(covariance: &CMatrix) -> Result<()> {
    if covariance.nrows() != covariance.ncols() {
        return Err(Error::InvalidArgument("covariance must be square".into()));
    }
    let scale = covariance.norm().max(1.0);
    if hermitian_deviation(covariance) > 1e-8 * scale {
        return Err(Error::InvalidArgument(
            "matrix is not Hermitian within tolerance".into(),
        ));
    }
    Ok(())
}

/// Basis of the J-dominant invariant subspace via a full Hermitian
/// eigendecomposition (reference path).
pub fn dominant_eigenbasis(covariance: &CMatrix, j: usize) -> Result<SubspaceBasis> {
    check_hermitian(covariance)?;
    let m = covariance.nrows();
    if j == 0 || j > m {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension {j} must satisfy 1 <= J <= {m}"
        )));
    }
    let (values, vectors) = sorted_hermitian_eigen(covariance);
    let basis = vectors.columns(0, j).clone_owned();
    let eigenvalues: Vec<f64> = values[..j].iter().map(|&v| v.max(0.0)).collect();
    SubspaceBasis::new(basis, eigenvalues)
}

/// Blocked subspace iteration with a final Rayleigh-Ritz rotation: the
/// O(J M^2)-per-sweep fast path. Agrees with the full decomposition on the
/// projector whenever the spectral gap at J is nonzero.
pub fn dominant_eigenbasis_iterative(
    covariance: &CMatrix,
    j: usize,
    tolerance: f64,
    max_iterations: usize,
) -> Result<SubspaceBasis> {
    check_hermitian(covariance)?;
    let m = covariance.nrows();
    if j == 0 || j > m {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension {j} must satisfy 1 <= J <= {m}"
        )));
    }
    let mut sym = covariance.clone();
    hermitianize(&mut sym);

    // deterministic start block; the seed value is arbitrary
    let mut rng = stream_rng(0x5b5_ace, 0);
    let start = crate::linalg::complex_gaussian_matrix(&mut rng, m, j, 1.0);
    let mut q = orthonormalize(&start);
    let mut projector = &q * q.adjoint();
    for _ in 0..max_iterations {
        let z = &sym * &q;
        q = orthonormalize(&z);
        let next = &q * q.adjoint();
        let delta = frobenius_distance(&next, &projector);
        projector = next;
        if delta < tolerance {
            break;
        }
    }

    // Rayleigh-Ritz: rotate the block onto eigenvector directions and sort
    let small = q.adjoint() * &sym * &q;
    let (ritz_values, ritz_vectors) = sorted_hermitian_eigen(&small);
    let basis = &q * ritz_vectors;
    let eigenvalues: Vec<f64> = ritz_values.iter().map(|&v| v.max(0.0)).collect();
    SubspaceBasis::new(orthonormalize(&basis), eigenvalues)
}

/// Orthogonal projector of a basis (free-function form of
/// [`SubspaceBasis::projector`]).
pub fn projector(basis: &SubspaceBasis) -> CMatrix {
    basis.projector()
}

/// Sample covariance over the data observations (optionally including the
/// pilot observations), then the J-dominant eigenbasis.
pub fn estimate_subspace(
    pilot_obs: &CMatrix,
    data_obs: &CMatrix,
    j: usize,
    include_pilots: bool,
) -> Result<SubspaceBasis> {
    if data_obs.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "subspace estimation needs at least one data snapshot".into(),
        ));
    }
    if include_pilots && pilot_obs.nrows() != data_obs.nrows() {
        return Err(Error::DimensionMismatch(
            "pilot and data observations must share the antenna count".into(),
        ));
    }
    let cov = if include_pilots {
        let mut all = CMatrix::zeros(data_obs.nrows(), pilot_obs.ncols() + data_obs.ncols());
        all.columns_mut(0, pilot_obs.ncols()).copy_from(pilot_obs);
        all.columns_mut(pilot_obs.ncols(), data_obs.ncols()).copy_from(data_obs);
        sample_covariance(&all)?
    } else {
        sample_covariance(data_obs)?
    };
    dominant_eigenbasis(&cov, j)
}

/// Parallel map helper used by sweeps: estimate one subspace per block.
pub fn estimate_subspaces_parallel(
    blocks: &[(CMatrix, CMatrix)],
    j: usize,
    include_pilots: bool,
) -> Result<Vec<SubspaceBasis>> {
    blocks
        .par_iter()
        .map(|(pilots, data)| estimate_subspace(pilots, data, j, include_pilots))
        .collect()
}
