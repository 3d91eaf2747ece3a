use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::pairwise_sum;
use crate::model::DensityTerms;
use crate::simulate::simulate;
use crate::{rng, Error, LatentAtoms, MixtureParams, Result, Scalar};

pub const TV_BETA_NODES: usize = 10_000;

/// `(eps^2 + C eps) / (2 sigma_min2)` with `C = D + (diam_t^2 + D diam_s) / 2`.
pub fn kl_upper_bound(eps: f64, dim: usize, diam_t: f64, diam_s: f64, sigma_min2: f64) -> Result<f64> {
    if !(sigma_min2 > 0.0) {
        return Err(Error::InvalidParameter("sigma_min2 must be positive".into()));
    }
    if eps < 0.0 || diam_t < 0.0 || diam_s < 0.0 {
        return Err(Error::InvalidParameter("eps and diameters must be nonnegative".into()));
    }
    let c = dim as f64 + (diam_t * diam_t + dim as f64 * diam_s) / 2.0;
    Ok((eps * eps + c * eps) / (2.0 * sigma_min2))
}

/// Constants of the KL bound read off a pair of parameters: the vertex
/// diameter, the spread of the noise variances and the smallest variance.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct KlConstants {
    pub diam_t: f64,
    pub diam_s: f64,
    pub sigma_min2: f64,
}

pub fn infer_kl_constants<T: Scalar>(a: &MixtureParams<T>, b: &MixtureParams<T>) -> KlConstants {
    let va = a.vertex_rows();
    let vb = b.vertex_rows();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for m in [&va, &vb] {
        for r in m.row_iter() {
            rows.push(r.transpose().map(|v| v.f64()));
        }
    }
    let mut diam_t: f64 = 0.0;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            diam_t = diam_t.max((&rows[i] - &rows[j]).norm());
        }
    }
    let s: Vec<f64> = a.sigma2.iter().chain(b.sigma2.iter()).map(|v| v.f64()).collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    KlConstants { diam_t, diam_s: hi - lo, sigma_min2: lo }
}

/// Atoms for evaluating a density at high accuracy: the product-free
/// quadrature rule when `d <= 2`, otherwise seeded `Dir(alpha)` draws.
fn reference_atoms(alpha: &DVector<f64>, m: usize, seed: u64) -> Result<LatentAtoms<f64>> {
    if alpha.len() <= 2 {
        LatentAtoms::quadrature(alpha, m)
    } else {
        LatentAtoms::sample(alpha, m, seed)
    }
}

/// Monte Carlo estimate of `KL(p_a || p_b)` from `n` draws of `p_a`, with its
/// standard error. Densities use 2000 latent atoms per component.
pub fn estimate_kl_mc<T: Scalar>(
    a: &MixtureParams<T>,
    b: &MixtureParams<T>,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (a, b) = (a.cast::<f64>(), b.cast::<f64>());
    let atoms_a = reference_atoms(&a.alpha, 2000, rng::derive(seed, "kl/atoms-a"))?;
    let atoms_b = reference_atoms(&b.alpha, 2000, rng::derive(seed, "kl/atoms-b"))?;
    estimate_kl_mc_with(&a, &b, &atoms_a, &atoms_b, n, seed)
}

/// As [`estimate_kl_mc`] with caller-supplied atoms for each density.
pub fn estimate_kl_mc_with(
    a: &MixtureParams<f64>,
    b: &MixtureParams<f64>,
    atoms_a: &LatentAtoms<f64>,
    atoms_b: &LatentAtoms<f64>,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape("KL needs a common ambient dimension".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let x = simulate(a, n, seed)?.x;
    let la = DensityTerms::new(a, atoms_a)?.logpdf_rows(&x)?;
    let lb = DensityTerms::new(b, atoms_b)?.logpdf_rows(&x)?;
    let diff: Vec<f64> = la.iter().zip(&lb).map(|(p, q)| p - q).collect();
    let mean = pairwise_sum(&diff) / n as f64;
    let sq: Vec<f64> = diff.iter().map(|v| (v - mean).powi(2)).collect();
    let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
    Ok((mean, (var / n as f64).sqrt()))
}

/// Total variation `(1/2) int |p_a - p_b|` by the trapezoid rule on a grid of
/// `grid_n` nodes per axis over `bbox` (one `(lo, hi)` per coordinate).
/// Densities use `beta_nodes` quadrature atoms ([`TV_BETA_NODES`] is a safe
/// default); requires `D <= 2`, `d <= 2`.
pub fn estimate_tv_quadrature<T: Scalar>(
    a: &MixtureParams<T>,
    b: &MixtureParams<T>,
    bbox: &[(f64, f64)],
    grid_n: usize,
    beta_nodes: usize,
) -> Result<f64> {
    let dim = a.dim();
    if dim > 2 || b.dim() != dim {
        return Err(Error::Unsupported("total variation quadrature needs D <= 2".into()));
    }
    if bbox.len() != dim {
        return Err(Error::Shape(format!("bbox needs {dim} intervals")));
    }
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid_n must be at least 2".into()));
    }
    let (a, b) = (a.cast::<f64>(), b.cast::<f64>());
    let ta = DensityTerms::new(&a, &LatentAtoms::quadrature(&a.alpha, beta_nodes)?)?;
    let tb = DensityTerms::new(&b, &LatentAtoms::quadrature(&b.alpha, beta_nodes)?)?;
    let axes: Vec<(Vec<f64>, Vec<f64>)> = bbox
        .iter()
        .map(|&(lo, hi)| {
            let h = (hi - lo) / (grid_n - 1) as f64;
            let nodes = (0..grid_n).map(|i| lo + h * i as f64).collect();
            let w = (0..grid_n)
                .map(|i| if i == 0 || i + 1 == grid_n { h / 2.0 } else { h })
                .collect();
            (nodes, w)
        })
        .collect();
    let total = if dim == 1 { grid_n } else { grid_n * grid_n };
    let mut x = DMatrix::zeros(total, dim);
    let mut w = vec![0.0; total];
    for idx in 0..total {
        let mut wt = 1.0;
        let mut rem = idx;
        for (c, (nodes, ws)) in axes.iter().enumerate() {
            let i = rem % grid_n;
            rem /= grid_n;
            x[(idx, c)] = nodes[i];
            wt *= ws[i];
        }
        w[idx] = wt;
    }
    let la = ta.logpdf_rows(&x)?;
    let lb = tb.logpdf_rows(&x)?;
    let terms: Vec<f64> = (0..total).map(|i| w[i] * (la[i].exp() - lb[i].exp()).abs()).collect();
    Ok(0.5 * pairwise_sum(&terms))
}
