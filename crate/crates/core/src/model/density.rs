use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{Dataset, LatentAtoms, MixtureParams};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, row_log_sum_exp};
use crate::Scalar;

const ROW_BLOCK: usize = 256;

/// Precomputed per-atom quantities for a fixed `(psi, atoms)` pair.
///
/// Column `k * M + j` of the evaluated term matrix holds
/// `log pi_k + log w_j + log phi_D(x | Theta_k beta_j, sigma2_k I)`.
pub struct DensityTerms<T: Scalar> {
    /// `D x (K*M)` atom means.
    means: DMatrix<T>,
    /// Per column: log weight + Gaussian normalizer - |mu|^2 / (2 sigma2).
    offset: DVector<T>,
    /// Per column: 1 / sigma2.
    inv_var: DVector<T>,
    dim: usize,
    m: usize,
}

impl<T: Scalar> DensityTerms<T> {
    pub fn new(psi: &MixtureParams<T>, atoms: &LatentAtoms<T>) -> Result<Self> {
        if atoms.d() != psi.d() {
            return Err(Error::Shape(format!(
                "atoms have d={} but parameters have d={}",
                atoms.d(),
                psi.d()
            )));
        }
        let (k, m, dim) = (psi.k(), atoms.m(), psi.dim());
        let mut means = DMatrix::zeros(dim, k * m);
        let mut offset = DVector::zeros(k * m);
        let mut inv_var = DVector::zeros(k * m);
        let half = T::of(0.5);
        for kk in 0..k {
            let block = &psi.theta[kk] * atoms.betas.transpose();
            let s2 = psi.sigma2[kk];
            let log_pi = psi.pi[kk].ln();
            let norm = -(T::of_usize(dim) * half) * (T::two_pi() * s2).ln();
            for j in 0..m {
                let col = kk * m + j;
                means.set_column(col, &block.column(j));
                offset[col] = log_pi + atoms.weights[j].ln() + norm
                    - block.column(j).norm_squared() * half / s2;
                inv_var[col] = T::one() / s2;
            }
        }
        Ok(Self { means, offset, inv_var, dim, m })
    }

    pub fn n_atoms(&self) -> usize {
        self.m
    }

    pub fn n_cols(&self) -> usize {
        self.offset.len()
    }

    /// Term matrix for the rows of `x` (`n x K*M`).
    pub fn eval(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "data has {} columns but the model has D={}",
                x.ncols(),
                self.dim
            )));
        }
        let mut out = x * &self.means;
        let half = T::of(0.5);
        let xsq: Vec<T> = x.row_iter().map(|r| r.norm_squared() * half).collect();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (iv, off) = (self.inv_var[c], self.offset[c]);
            for (v, &xs) in col.iter_mut().zip(&xsq) {
                *v = off - (xs - *v) * iv;
            }
        }
        Ok(out)
    }

    /// Log-density of every row of `x`, evaluated block-wise.
    pub fn logpdf_rows(&self, x: &DMatrix<T>) -> Result<Vec<T>> {
        if x.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "data has {} columns but the model has D={}",
                x.ncols(),
                self.dim
            )));
        }
        let n = x.nrows();
        let blocks: Vec<(usize, usize)> = (0..n)
            .step_by(ROW_BLOCK)
            .map(|s| (s, (s + ROW_BLOCK).min(n)))
            .collect();
        let parts: Vec<Result<Vec<T>>> = blocks
            .par_iter()
            .map(|&(s, e)| {
                let xb = x.rows(s, e - s).into_owned();
                Ok(row_log_sum_exp(&self.eval(&xb)?))
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Log-density of `x` under the atom approximation
/// `sum_k pi_k sum_j w_j phi_D(x | Theta_k beta_j, sigma2_k I)`.
pub fn logpdf_point<T: Scalar>(
    x: &DVector<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<T> {
    if x.len() != psi.dim() {
        return Err(Error::Shape(format!("point has length {} but D={}", x.len(), psi.dim())));
    }
    let terms = DensityTerms::new(psi, atoms)?;
    let row = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    Ok(terms.logpdf_rows(&row)?[0])
}

/// Log-density of every row.
pub fn logpdf_rows<T: Scalar>(
    x: &DMatrix<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<Vec<T>> {
    DensityTerms::new(psi, atoms)?.logpdf_rows(x)
}

/// Sum of per-row log-densities, reduced pairwise so the value does not
/// depend on thread scheduling. An empty dataset gives zero.
pub fn loglik<T: Scalar>(
    data: &Dataset<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<T> {
    if data.dim() != psi.dim() && data.n() > 0 {
        return Err(Error::Shape(format!(
            "data has {} columns but the model has D={}",
            data.dim(),
            psi.dim()
        )));
    }
    if data.n() == 0 {
        return Ok(T::zero());
    }
    Ok(pairwise_sum(&logpdf_rows(&data.x, psi, atoms)?))
}

/// Full `n x (K*M)` matrix of log joint terms; see [`DensityTerms`].
pub fn component_log_terms<T: Scalar>(
    x: &DMatrix<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<DMatrix<T>> {
    DensityTerms::new(psi, atoms)?.eval(x)
}
