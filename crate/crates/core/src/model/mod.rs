//! Parameter records, datasets, latent atoms and the model density.

mod density;
mod io;

pub use density::{component_log_terms, logpdf_point, logpdf_rows, loglik, DensityTerms};
pub use io::{
    format_number, params_from_json, params_to_json, read_dataset_csv, read_latents_csv,
    write_dataset_csv, write_latents_csv, ParamsJson,
};

use nalgebra::{DMatrix, DVector};

use crate::dirichlet;
use crate::linalg::pairwise_sum;
use crate::error::{Error, Result};
use crate::Scalar;

/// Tolerance for "sums to one" checks, widened for single precision.
pub(crate) fn simplex_tol<T: Scalar>(strict: f64) -> T {
    T::of(strict).max(T::eps() * T::of(64.0))
}

/// Full parameter record of a K-component mixture whose component `k` has
/// end-members given by the columns of the `D x d` matrix `theta[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T: Scalar> {
    pub theta: Vec<DMatrix<T>>,
    pub pi: DVector<T>,
    pub sigma2: DVector<T>,
    /// Dirichlet concentration of the within-component weights.
    pub alpha: DVector<T>,
}

impl<T: Scalar> MixtureParams<T> {
    pub fn new(
        theta: Vec<DMatrix<T>>,
        pi: DVector<T>,
        sigma2: DVector<T>,
        alpha: DVector<T>,
    ) -> Result<Self> {
        let p = Self { theta, pi, sigma2, alpha };
        p.validate()?;
        Ok(p)
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.theta.len()
    }

    /// End-members per component.
    pub fn d(&self) -> usize {
        self.theta.first().map_or(0, |t| t.ncols())
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.theta.first().map_or(0, |t| t.nrows())
    }

    /// Checks shapes and the invariants on `pi`, `sigma2`, `alpha` and `theta`.
    pub fn validate(&self) -> Result<()> {
        self.validate_noise(false)
    }

    /// As [`validate`](Self::validate), optionally admitting `sigma2 = 0`
    /// (noiseless sampling).
    pub(crate) fn validate_noise(&self, allow_zero: bool) -> Result<()> {
        let (k, d, dim) = (self.k(), self.d(), self.dim());
        if k == 0 || d == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "K, d and D must be positive (got K={k}, d={d}, D={dim})"
            )));
        }
        if self.theta.iter().any(|t| t.shape() != (dim, d)) {
            return Err(Error::Shape("every theta block must be D x d".into()));
        }
        if self.pi.len() != k || self.sigma2.len() != k {
            return Err(Error::Shape(format!("pi and sigma2 must have length K={k}")));
        }
        if self.alpha.len() != d {
            return Err(Error::Shape(format!("alpha must have length d={d}")));
        }
        if self.pi.iter().any(|&p| p < T::zero() || !p.is_finite()) {
            return Err(Error::InvalidParameter("pi entries must be nonnegative".into()));
        }
        if (pairwise_sum(self.pi.as_slice()) - T::one()).abs() > simplex_tol::<T>(1e-12) {
            return Err(Error::InvalidParameter("pi must sum to 1".into()));
        }
        let bad_noise = |s: T| s < T::zero() || (s == T::zero() && !allow_zero) || !s.is_finite();
        if self.sigma2.iter().any(|&s| bad_noise(s)) {
            return Err(Error::InvalidParameter("sigma2 entries must be positive".into()));
        }
        if self.alpha.iter().any(|&a| a <= T::zero() || !a.is_finite()) {
            return Err(Error::InvalidParameter("alpha entries must be positive".into()));
        }
        if self.theta.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("theta entries must be finite".into()));
        }
        Ok(())
    }

    /// Reorders components: component `k` of the result is component
    /// `perm[k]` of `self`.
    pub fn permute_components(&self, perm: &[usize]) -> Self {
        Self {
            theta: perm.iter().map(|&p| self.theta[p].clone()).collect(),
            pi: DVector::from_iterator(perm.len(), perm.iter().map(|&p| self.pi[p])),
            sigma2: DVector::from_iterator(perm.len(), perm.iter().map(|&p| self.sigma2[p])),
            alpha: self.alpha.clone(),
        }
    }

    /// Reorders the columns of component `k`: column `j` becomes column `perm[j]`
    /// of the original.
    pub fn permute_vertices(&mut self, k: usize, perm: &[usize]) {
        let old = self.theta[k].clone();
        for (j, &p) in perm.iter().enumerate() {
            self.theta[k].set_column(j, &old.column(p));
        }
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MixtureParams<U> {
        let c = |v: T| U::of(v.f64());
        MixtureParams {
            theta: self.theta.iter().map(|t| t.map(c)).collect(),
            pi: self.pi.map(c),
            sigma2: self.sigma2.map(c),
            alpha: self.alpha.map(c),
        }
    }

    /// All end-members stacked as rows (`K*d x D`), component-major.
    pub fn vertex_rows(&self) -> DMatrix<T> {
        let (k, d, dim) = (self.k(), self.d(), self.dim());
        let mut out = DMatrix::zeros(k * d, dim);
        for (kk, t) in self.theta.iter().enumerate() {
            for j in 0..d {
                out.set_row(kk * d + j, &t.column(j).transpose());
            }
        }
        out
    }
}

/// Observations (rows of `x`) with optional ground-truth latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub x: DMatrix<T>,
    pub z: Option<Vec<usize>>,
    pub beta: Option<DMatrix<T>>,
    pub seed: Option<u64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: DMatrix<T>) -> Self {
        Self { x, z: None, beta: None, seed: None }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Checks latent traces: labels below `k`, beta rows on the simplex.
    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(z) = &self.z {
            if z.len() != self.n() {
                return Err(Error::Shape("z must have one label per row".into()));
            }
            if let Some(bad) = z.iter().find(|&&l| l >= k) {
                return Err(Error::InvalidParameter(format!("label {bad} out of range for K={k}")));
            }
        }
        if let Some(b) = &self.beta {
            if b.nrows() != self.n() {
                return Err(Error::Shape("beta must have one row per observation".into()));
            }
            for row in b.row_iter() {
                if row.iter().any(|&v| v < T::zero())
                    || (row.sum() - T::one()).abs() > simplex_tol::<T>(1e-10)
                {
                    return Err(Error::InvalidParameter("beta rows must lie on the simplex".into()));
                }
            }
        }
        Ok(())
    }

    /// Dataset restricted to the given rows (latents included).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            z: self.z.as_ref().map(|z| rows.iter().map(|&r| z[r]).collect()),
            beta: self.beta.as_ref().map(|b| b.select_rows(rows)),
            seed: self.seed,
        }
    }
}

/// Fixed points on the simplex with probability weights, used to replace the
/// integral over the within-component weights by a finite sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentAtoms<T: Scalar> {
    /// `M x d`, one simplex point per row.
    pub betas: DMatrix<T>,
    pub weights: DVector<T>,
}

impl<T: Scalar> LatentAtoms<T> {
    pub fn new(betas: DMatrix<T>, weights: DVector<T>) -> Result<Self> {
        if betas.nrows() == 0 || betas.nrows() != weights.len() {
            return Err(Error::Shape("need one weight per atom and at least one atom".into()));
        }
        for row in betas.row_iter() {
            if row.iter().any(|&v| v < T::zero())
                || (row.sum() - T::one()).abs() > simplex_tol::<T>(1e-10)
            {
                return Err(Error::InvalidParameter("atoms must lie on the simplex".into()));
            }
        }
        if weights.iter().any(|&w| w < T::zero())
            || (pairwise_sum(weights.as_slice()) - T::one()).abs() > simplex_tol::<T>(1e-12)
        {
            return Err(Error::InvalidParameter("atom weights must sum to 1".into()));
        }
        Ok(Self { betas, weights })
    }

    /// Equal weights `1/M`.
    pub fn uniform(betas: DMatrix<T>) -> Result<Self> {
        let m = betas.nrows();
        Self::new(betas, DVector::from_element(m, T::one() / T::of_usize(m)))
    }

    /// `m` i.i.d. draws from `Dir(alpha)` with equal weights: a plain Monte
    /// Carlo approximation of the within-component law.
    pub fn sample(alpha: &DVector<T>, m: usize, seed: u64) -> Result<Self> {
        Self::uniform(dirichlet::sample(alpha, m, seed)?)
    }

    /// `m` draws from the flat Dirichlet with equal weights.
    pub fn sample_flat(d: usize, m: usize, seed: u64) -> Result<Self> {
        Self::sample(&DVector::from_element(d, T::one()), m, seed)
    }

    /// `m` draws from the flat Dirichlet weighted by the `Dir(alpha)` density
    /// (self-normalized).
    pub fn sample_flat_weighted(alpha: &DVector<T>, m: usize, seed: u64) -> Result<Self> {
        let betas: DMatrix<T> = dirichlet::sample(&DVector::from_element(alpha.len(), T::one()), m, seed)?;
        let logw: Vec<T> = betas
            .row_iter()
            .map(|r| dirichlet::log_density(alpha, &r.transpose()))
            .collect();
        let lse = crate::linalg::log_sum_exp(&logw);
        let weights = DVector::from_iterator(m, logw.iter().map(|&l| (l - lse).exp()));
        let s = pairwise_sum(weights.as_slice());
        Self::new(betas, weights / s)
    }

    /// Deterministic midpoint quadrature for `d <= 2`: the single point for
    /// `d = 1`, and `m` midpoints `t_i` (atom `(1 - t_i, t_i)`) weighted by the
    /// `Dir(alpha)` density for `d = 2`.
    pub fn quadrature(alpha: &DVector<T>, m: usize) -> Result<Self> {
        match alpha.len() {
            1 => Self::new(DMatrix::from_element(1, 1, T::one()), DVector::from_element(1, T::one())),
            2 => {
                if m == 0 {
                    return Err(Error::InvalidParameter("quadrature needs m >= 1".into()));
                }
                let (a1, a2) = (alpha[0].f64(), alpha[1].f64());
                let mut betas = DMatrix::zeros(m, 2);
                let mut logw = Vec::with_capacity(m);
                for i in 0..m {
                    let t = (i as f64 + 0.5) / m as f64;
                    betas[(i, 0)] = T::of(1.0 - t);
                    betas[(i, 1)] = T::of(t);
                    logw.push((a1 - 1.0) * (1.0 - t).ln() + (a2 - 1.0) * t.ln());
                }
                let lse = crate::linalg::log_sum_exp(&logw);
                let w: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
                let s: f64 = pairwise_sum(&w);
                let weights = DVector::from_iterator(m, w.iter().map(|&v| T::of(v / s)));
                Self::new(betas, weights)
            }
            d => Err(Error::Unsupported(format!("quadrature atoms need d <= 2, got d={d}"))),
        }
    }

    pub fn m(&self) -> usize {
        self.betas.nrows()
    }

    pub fn d(&self) -> usize {
        self.betas.ncols()
    }

    /// Same atoms with rows reordered by `perm`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        Self {
            betas: self.betas.select_rows(perm),
            weights: DVector::from_iterator(perm.len(), perm.iter().map(|&p| self.weights[p])),
        }
    }
}
