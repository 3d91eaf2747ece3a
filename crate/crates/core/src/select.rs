//! BIC selection of the number of components `K` and vertices `d`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{fit_em, AtomScheme, EmConfig};
use crate::model::loglik;
use crate::{rng, Dataset, Error, LatentAtoms, MixtureParams, Result, Scalar};

/// `K D d + 2K - 1`: end-members, variances and free mixing weights.
pub fn free_params(k: usize, d: usize, dim: usize) -> usize {
    k * dim * d + 2 * k - 1
}

/// `-2 loglik + p log n`, the likelihood estimated with `m_loglik` draws
/// from `Dir(psi.alpha)`.
pub fn bic<T: Scalar>(data: &Dataset<T>, psi: &MixtureParams<T>, m_loglik: usize, seed: u64) -> Result<f64> {
    let atoms = LatentAtoms::sample(&psi.alpha, m_loglik, rng::derive(seed, "bic/atoms"))?;
    let ll = loglik(data, psi, &atoms)?.f64();
    Ok(bic_from_loglik(ll, psi.k(), psi.d(), psi.dim(), data.n()))
}

pub fn bic_from_loglik(ll: f64, k: usize, d: usize, dim: usize, n: usize) -> f64 {
    -2.0 * ll + free_params(k, d, dim) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone)]
pub struct SelectConfig {
    pub em: EmConfig,
    /// Symmetric `Dir(alpha)` concentration used for every cell; `None` fits
    /// with flat atoms and `alpha = 1`.
    pub alpha: Option<f64>,
    pub m_loglik: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { em: EmConfig::default(), alpha: None, m_loglik: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridCell {
    pub k: usize,
    pub d: usize,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SelectResult {
    /// Row-major over `(K, d)` in the order given.
    pub cells: Vec<GridCell>,
    pub best: (usize, usize),
}

/// Minimum BIC over the finite cells. Ties go to the smaller `K`, then the
/// smaller `d`.
pub fn argmin(cells: &[GridCell]) -> Option<(usize, usize)> {
    cells
        .iter()
        .filter_map(|c| c.bic.filter(|b| b.is_finite()).map(|b| (b, c.k, c.d)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, k, d)| (k, d))
}

fn fit_cell<T: Scalar>(data: &Dataset<T>, k: usize, d: usize, cfg: &SelectConfig, seed: u64) -> GridCell {
    let mut em = cfg.em.clone();
    if let Some(a) = cfg.alpha {
        em.alpha = Some(DVector::from_element(d, a));
        em.atoms = AtomScheme::Prior;
    }
    let out = fit_em(data, k, d, &em, rng::derive(seed, &format!("select/{k}/{d}"))).and_then(|fit| {
        // one atom set per d, shared by every K
        let b = bic(data, &fit.psi_hat, cfg.m_loglik, rng::derive(seed, &format!("select/d{d}")))?;
        Ok((fit, b))
    });
    match out {
        Ok((fit, b)) => GridCell {
            k,
            d,
            bic: Some(b),
            loglik: Some((free_params(k, d, data.dim()) as f64 * (data.n() as f64).ln() - b) / 2.0),
            converged: fit.converged,
            error: None,
        },
        Err(e) => GridCell { k, d, bic: None, loglik: None, converged: false, error: Some(e.to_string()) },
    }
}

/// Fits every `(K, d)` cell with EM and scores it by BIC. Failed cells are
/// kept with their error and excluded from the minimum.
pub fn select<T: Scalar>(
    data: &Dataset<T>,
    k_range: &[usize],
    d_range: &[usize],
    cfg: &SelectConfig,
    seed: u64,
) -> Result<SelectResult> {
    if k_range.is_empty() || d_range.is_empty() {
        return Err(Error::InvalidParameter("empty K or d range".into()));
    }
    let grid: Vec<(usize, usize)> = k_range.iter().flat_map(|&k| d_range.iter().map(move |&d| (k, d))).collect();
    let cells: Vec<GridCell> = grid.par_iter().map(|&(k, d)| fit_cell(data, k, d, cfg, seed)).collect();
    let best = argmin(&cells).ok_or_else(|| Error::Degenerate("no grid cell could be fitted".into()))?;
    Ok(SelectResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn parameter_counts() {
        assert_eq!(free_params(3, 4, 12), 149);
        assert_eq!(free_params(1, 1, 1), 2);
        assert!(free_params(2, 3, 5) > free_params(1, 3, 5));
        assert!(free_params(2, 4, 5) > free_params(2, 3, 5));
        assert!(free_params(2, 3, 6) > free_params(2, 3, 5));
    }

    #[test]
    fn duplicated_data_doubles_likelihood_term() {
        let x = DMatrix::from_row_slice(4, 1, &[0.1, -0.3, 0.5, 0.2]);
        let psi = MixtureParams::new(vec![DMatrix::from_row_slice(1, 1, &[0.1])], dvector![1.0], dvector![0.2], dvector![1.0]).unwrap();
        let one = bic(&Dataset::new(x.clone()), &psi, 10, 1).unwrap();
        let two = bic(&Dataset::new(DMatrix::from_fn(8, 1, |i, _| x[(i % 4, 0)])), &psi, 10, 1).unwrap();
        let p = free_params(1, 1, 1) as f64;
        let ll = |n: usize| -> f64 { loglik(&Dataset::new(DMatrix::from_fn(n, 1, |i, _| x[(i % 4, 0)])), &psi, &LatentAtoms::sample(&psi.alpha, 10, 0).unwrap()).unwrap() };
        let (ll1, ll2) = (ll(4), ll(8));
        assert!((ll2 - 2.0 * ll1).abs() < 1e-10);
        let (pen1, pen2) = (one + 2.0 * ll1, two + 2.0 * ll2);
        assert!((pen2 - pen1 - p * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gaussian_bic_closed_form() {
        // K = d = 1 is a spherical Gaussian; every atom is the same point
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 1.0, 0.5, -1.0, 0.2, 0.3, 0.3, 0.7, -0.4]);
        let mu = x.row_mean();
        let s2 = 0.4;
        let psi = MixtureParams::new(vec![DMatrix::from_column_slice(2, 1, mu.as_slice())], dvector![1.0], dvector![s2], dvector![1.0]).unwrap();
        let rss: f64 = x.row_iter().map(|r| (r - &mu).norm_squared()).sum();
        let ll = -5.0 * (2.0 * std::f64::consts::PI * s2).ln() - rss / (2.0 * s2);
        let want = -2.0 * ll + 3.0 * 5f64.ln();
        assert!((bic(&Dataset::new(x), &psi, 50, 3).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ties_prefer_smaller_models() {
        let cell = |k, d, b: f64| GridCell { k, d, bic: Some(b), loglik: None, converged: true, error: None };
        let cells = vec![cell(2, 3, 1.0), cell(1, 4, 1.0), cell(1, 3, 1.0), cell(3, 1, 2.0)];
        assert_eq!(argmin(&cells), Some((1, 3)));
        let failed = GridCell { k: 1, d: 1, bic: None, loglik: None, converged: false, error: Some("x".into()) };
        assert_eq!(argmin(&[failed.clone(), cell(4, 4, 9.0)]), Some((4, 4)));
        assert_eq!(argmin(&[failed]), None);
    }

    #[test]
    fn single_cell_grid_and_stability() {
        let psi = crate::simulate::make_setting::<f64>(&crate::simulate::SettingId::One, 0).unwrap();
        let data = crate::simulate::simulate(&psi, 150, 1).unwrap();
        let cfg = SelectConfig { em: EmConfig { m: 30, restarts: 2, max_iter: 50, ..Default::default() }, alpha: Some(1.0), m_loglik: 200 };
        let a = select(&data, &[3], &[2], &cfg, 4).unwrap();
        assert_eq!(a.best, (3, 2));
        assert!(a.cells[0].bic.unwrap().is_finite());
        let grid = select(&data, &[1, 2], &[2, 3], &cfg, 4).unwrap();
        assert_eq!(grid, select(&data, &[1, 2], &[2, 3], &cfg, 4).unwrap());
        assert_eq!(grid.cells.len(), 4);
    }
}
