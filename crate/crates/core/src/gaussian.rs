//! Moment-matching estimators that stand in a Gaussian with the Dirichlet's
//! first two moments for the within-component law.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::em::{initial_labels, FitResult};
use crate::kmeans::kmeans;
use crate::linalg::{log_sum_exp, pairwise_sum, polar, sym_eigen_desc, weighted_mean_cov, GaussianChol};
use crate::metrics::assignment;
use crate::rng;
use crate::{Dataset, Error, MixtureParams, Result, Scalar};

/// First two moments of `Dir(alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMoments<T: Scalar> {
    /// `alpha / sum(alpha)`.
    pub mean: DVector<T>,
    /// `(diag(mean) - mean mean^T) / (sum(alpha) + 1)`; rank `d - 1`.
    pub cov: DMatrix<T>,
    /// `cov + mean mean^T`.
    pub second_moment: DMatrix<T>,
}

pub fn dirichlet_moments<T: Scalar>(alpha: &DVector<T>) -> Result<DirichletMoments<T>> {
    if alpha.is_empty() || alpha.iter().any(|&a| a <= T::zero() || !a.is_finite()) {
        return Err(Error::InvalidParameter("alpha entries must be positive".into()));
    }
    let abar = alpha.sum();
    let mean = alpha / abar;
    let outer = &mean * mean.transpose();
    let cov = (DMatrix::from_diagonal(&mean) - &outer) / (abar + T::one());
    let second_moment = &cov + outer;
    Ok(DirichletMoments { mean, cov, second_moment })
}

/// `[A0 | mu0]^{-1}` split into its first `d - 1` rows `g_top` and last row
/// `g_last`, where `A0` is the rank-`(d-1)` square-root factor of the
/// Dirichlet covariance.
struct Unmixer<T: Scalar> {
    g_top: DMatrix<T>,
    g_last: DVector<T>,
}

impl<T: Scalar> Unmixer<T> {
    fn new(m: &DirichletMoments<T>) -> Result<Self> {
        let d = m.mean.len();
        let (vals, vecs) = sym_eigen_desc(&m.cov);
        let mut basis = DMatrix::zeros(d, d);
        for j in 0..d - 1 {
            let s = vals[j].max(T::zero()).sqrt();
            basis.set_column(j, &(vecs.column(j) * s));
        }
        basis.set_column(d - 1, &m.mean);
        let inv = basis
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("Dirichlet moment basis is singular".into()))?;
        Ok(Self {
            g_top: inv.rows(0, d - 1).into_owned(),
            g_last: inv.row(d - 1).transpose(),
        })
    }

    /// `Theta = A R G_top + mean g_last^T`.
    fn theta(&self, a: &DMatrix<T>, r: &DMatrix<T>, mean: &DVector<T>) -> DMatrix<T> {
        a * r * &self.g_top + mean * self.g_last.transpose()
    }
}

/// Noise level and factor of a covariance: `sigma2` is the mean of the
/// trailing `D - d + 1` eigenvalues and `A` scales the top `d - 1`
/// eigenvectors by `sqrt(lambda - sigma2)`. A non-positive gap is an error
/// when `strict`, otherwise that factor column is zero.
fn spectral_split<T: Scalar>(cov: &DMatrix<T>, d: usize, floor: f64, strict: bool) -> Result<(T, DMatrix<T>)> {
    let dim = cov.nrows();
    if d > dim {
        return Err(Error::InvalidParameter(format!("need d <= D, got d={d}, D={dim}")));
    }
    let (vals, vecs) = sym_eigen_desc(cov);
    let tail: Vec<T> = (d - 1..dim).map(|i| vals[i]).collect();
    let s2 = (pairwise_sum(&tail) / T::of_usize(tail.len())).max(T::of(floor));
    let mut a = DMatrix::zeros(dim, d - 1);
    for j in 0..d - 1 {
        let gap = vals[j] - s2;
        if gap <= T::zero() && !strict {
            continue;
        }
        if gap <= T::zero() {
            return Err(Error::Degenerate(format!(
                "covariance has rank below d - 1 = {}",
                d - 1
            )));
        }
        a.set_column(j, &(vecs.column(j) * gap.sqrt()));
    }
    Ok((s2, a))
}

/// Majorize-minimize for `min_R ||A R G + c - W||_F` over orthogonal `R`,
/// starting at `r0`; never returns a worse point than the start.
fn rotate_towards<T: Scalar>(
    a: &DMatrix<T>,
    un: &Unmixer<T>,
    mean: &DVector<T>,
    target: &DMatrix<T>,
    r0: DMatrix<T>,
) -> DMatrix<T> {
    let cost = |r: &DMatrix<T>| (un.theta(a, r, mean) - target).norm_squared();
    let c = target - mean * un.g_last.transpose();
    let ata = a.transpose() * a;
    let ggt = &un.g_top * un.g_top.transpose();
    let lip = ata.symmetric_eigenvalues().max() * ggt.symmetric_eigenvalues().max();
    let mut r = r0;
    let mut best = (cost(&r), r.clone());
    for _ in 0..200 {
        let lin = a.transpose() * (&c - a * &r * &un.g_top) * un.g_top.transpose();
        let next = polar(lin + &r * lip);
        let val = cost(&next);
        let step = (&next - &r).norm();
        r = next;
        if val < best.0 {
            best = (val, r.clone());
        }
        if step < T::of(1e-12) {
            break;
        }
    }
    best.1
}

/// Aligns the free rotation of a moment-matched polytope with k-means
/// centers of `x` (rows): alternately matches centers to vertices by
/// assignment and re-fits the rotation, until the matching settles.
fn align_rotation<T: Scalar>(
    x: &DMatrix<T>,
    a: &DMatrix<T>,
    un: &Unmixer<T>,
    mean: &DVector<T>,
    cfg: &GaussConfig,
    seed: u64,
) -> Result<DMatrix<T>> {
    let (dim, q) = (a.nrows(), a.ncols());
    let d = q + 1;
    let mut r = DMatrix::identity(q, q);
    if q == 0 || x.nrows() < d {
        return Ok(un.theta(a, &r, mean));
    }
    let centers = kmeans(x, d, cfg.kmeans_restarts, cfg.kmeans_iters, seed)?.centers.transpose();
    let mut prev: Option<Vec<usize>> = None;
    for _ in 0..20 {
        let theta = un.theta(a, &r, mean);
        let cost = DMatrix::from_fn(d, d, |j, c| (theta.column(j) - centers.column(c)).norm_squared().f64());
        let (_, perm) = assignment::solve(&cost);
        if prev.as_ref() == Some(&perm) {
            break;
        }
        let mut target = DMatrix::zeros(dim, d);
        for j in 0..d {
            target.set_column(j, &centers.column(perm[j]));
        }
        r = rotate_towards(a, un, mean, &target, r);
        prev = Some(perm);
    }
    Ok(un.theta(a, &r, mean))
}

#[derive(Debug, Clone)]
pub struct GaussConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub sigma2_floor: f64,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    /// k-flats sweeps refining the initial grouping.
    pub flat_iters: usize,
}

impl Default for GaussConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 500,
            tol: 1e-6,
            sigma2_floor: 1e-8,
            kmeans_restarts: 20,
            kmeans_iters: 100,
            flat_iters: 30,
        }
    }
}

/// Seed of the rotation k-means for component `k`; component 0 uses the fit
/// seed's stream so a one-component mixture reproduces the single fit.
fn rotation_seed(seed: u64, k: usize) -> u64 {
    rng::restart_seed(rng::derive(seed, "gauss/rotate"), k)
}

/// Single-polytope moment estimator. Returns `(Theta, sigma2)`.
pub fn fit_single_gaussian_approx<T: Scalar>(
    data: &Dataset<T>,
    d: usize,
    alpha: &DVector<T>,
    cfg: &GaussConfig,
    seed: u64,
) -> Result<(DMatrix<T>, T)> {
    if alpha.len() != d {
        return Err(Error::Shape(format!("alpha must have length d={d}")));
    }
    if data.n() <= d {
        return Err(Error::InsufficientData { needed: d + 1, got: data.n() });
    }
    let w = vec![T::one(); data.n()];
    let (mean, cov) = weighted_mean_cov(&data.x, &w);
    let moments = dirichlet_moments(alpha)?;
    let un = Unmixer::new(&moments)?;
    let (s2, a) = spectral_split(&cov, d, cfg.sigma2_floor, true)?;
    let theta = align_rotation(&data.x, &a, &un, &mean, cfg, rotation_seed(seed, 0))?;
    Ok((theta, s2))
}

struct Component<T: Scalar> {
    mean: DVector<T>,
    a: DMatrix<T>,
    sigma2: T,
}

fn component_gaussian<T: Scalar>(c: &Component<T>) -> Option<GaussianChol<T>> {
    let mut cov = &c.a * c.a.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += c.sigma2;
    }
    GaussianChol::new(c.mean.clone(), cov)
}

/// Log-responsibilities and log-likelihood under full-covariance components.
fn gauss_e_step<T: Scalar>(
    x: &DMatrix<T>,
    comps: &[Component<T>],
    pi: &[T],
) -> Result<(DMatrix<T>, T)> {
    let n = x.nrows();
    let k = comps.len();
    let cols: Vec<Vec<T>> = comps
        .par_iter()
        .zip(pi.par_iter())
        .map(|(c, &p)| {
            let g = component_gaussian(c)
                .ok_or_else(|| Error::Degenerate("component covariance not positive definite".into()))?;
            Ok(g.logpdf_rows(x).into_iter().map(|v| v + p.ln()).collect())
        })
        .collect::<Result<_>>()?;
    let mut resp = DMatrix::zeros(n, k);
    let mut lls = Vec::with_capacity(n);
    let mut buf = vec![T::zero(); k];
    for i in 0..n {
        for kk in 0..k {
            buf[kk] = cols[kk][i];
        }
        let l = log_sum_exp(&buf);
        lls.push(l);
        for kk in 0..k {
            resp[(i, kk)] = (buf[kk] - l).exp();
        }
    }
    Ok((resp, pairwise_sum(&lls)))
}

struct GaussRun<T: Scalar> {
    comps: Vec<Component<T>>,
    pi: Vec<T>,
    resp: DMatrix<T>,
    trace: Vec<f64>,
    converged: bool,
    dying: Vec<bool>,
}

fn gauss_m_step<T: Scalar>(
    x: &DMatrix<T>,
    resp: &DMatrix<T>,
    d: usize,
    prev: &mut [Component<T>],
    pi: &mut [T],
    dying: &mut [bool],
    floor: f64,
) -> Result<()> {
    let mut mass = vec![T::zero(); prev.len()];
    for (kk, comp) in prev.iter_mut().enumerate() {
        let w: Vec<T> = resp.column(kk).iter().copied().collect();
        mass[kk] = pairwise_sum(&w);
        if mass[kk].f64() < crate::em::DYING_MASS {
            dying[kk] = true;
            continue;
        }
        let (mean, cov) = weighted_mean_cov(x, &w);
        let (s2, a) = spectral_split(&cov, d, floor, false)?;
        *comp = Component { mean, a, sigma2: s2 };
    }
    let tot = pairwise_sum(&mass);
    for kk in 0..pi.len() {
        pi[kk] = mass[kk] / tot;
    }
    Ok(())
}

fn run_gauss<T: Scalar>(
    x: &DMatrix<T>,
    init_resp: DMatrix<T>,
    d: usize,
    cfg: &GaussConfig,
) -> Result<GaussRun<T>> {
    let k = init_resp.ncols();
    let dim = x.ncols();
    let mut comps: Vec<Component<T>> = (0..k)
        .map(|_| Component { mean: DVector::zeros(dim), a: DMatrix::zeros(dim, d - 1), sigma2: T::one() })
        .collect();
    let mut pi = vec![T::one() / T::of_usize(k); k];
    let mut dying = vec![false; k];
    gauss_m_step(x, &init_resp, d, &mut comps, &mut pi, &mut dying, cfg.sigma2_floor)?;
    let (mut resp, ll) = gauss_e_step(x, &comps, &pi)?;
    let mut trace = vec![ll.f64()];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        gauss_m_step(x, &resp, d, &mut comps, &mut pi, &mut dying, cfg.sigma2_floor)?;
        let (r, ll) = gauss_e_step(x, &comps, &pi)?;
        resp = r;
        let (prev, cur) = (*trace.last().unwrap(), ll.f64());
        trace.push(cur);
        if (cur - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(GaussRun { comps, pi, resp, trace, converged, dying })
}

/// EM over Gaussian stand-ins `N(Theta_k mu0, Theta_k Sigma0 Theta_k^T + sigma2_k I)`.
/// The M-step re-runs the moment estimator on responsibility-weighted
/// moments; vertex rotations are fixed once, after convergence, from the
/// hard-assigned points of each component.
pub fn fit_mixture_gaussian_em<T: Scalar>(
    data: &Dataset<T>,
    k: usize,
    d: usize,
    alpha: &DVector<T>,
    cfg: &GaussConfig,
    seed: u64,
) -> Result<FitResult<T>> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter("K and d must be positive".into()));
    }
    if alpha.len() != d {
        return Err(Error::Shape(format!("alpha must have length d={d}")));
    }
    if data.n() < k * d {
        return Err(Error::InsufficientData { needed: k * d, got: data.n() });
    }
    let start = Instant::now();
    let x = &data.x;
    let n = x.nrows();
    let moments = dirichlet_moments(alpha)?;
    let un = Unmixer::new(&moments)?;
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Result<GaussRun<T>>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let labels = if k == 1 {
                vec![0; n]
            } else {
                initial_labels(x, k, (d - 1).min(x.ncols()), cfg.flat_iters, rng::restart_seed(seed, r))?
            };
            let resp = DMatrix::from_fn(n, k, |i, kk| if labels[i] == kk { T::one() } else { T::zero() });
            run_gauss(x, resp, d, cfg)
        })
        .collect();
    let mut best: Option<GaussRun<T>> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.trace.last() > b.trace.last()) {
            best = Some(run);
        }
    }
    let run = best.expect("restarts >= 1");
    let labels: Vec<usize> = (0..n).map(|i| run.resp.row(i).transpose().argmax().0).collect();
    let mut theta = Vec::with_capacity(k);
    for (kk, c) in run.comps.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == kk).collect();
        let pts = x.select_rows(&rows);
        theta.push(align_rotation(&pts, &c.a, &un, &c.mean, cfg, rotation_seed(seed, kk))?);
    }
    let psi_hat = MixtureParams {
        theta,
        pi: DVector::from_vec(run.pi.clone()),
        sigma2: DVector::from_iterator(k, run.comps.iter().map(|c| c.sigma2)),
        alpha: alpha.clone(),
    };
    let loglik = *run.trace.last().unwrap();
    Ok(FitResult {
        psi_hat,
        iterations: run.trace.len() - 1,
        objective_trace: run.trace,
        elbo_trace: Vec::new(),
        converged: run.converged,
        restarts_used: restarts,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
        loglik,
        dying: run.dying,
        under_identified: false,
    })
}
