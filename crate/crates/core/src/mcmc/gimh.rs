//! Grouped independent Metropolis-Hastings.
//!
//! The likelihood is replaced by its Monte Carlo estimate
//! `prod_i sum_k pi_k (1/M) sum_m phi(x_i | Theta_k beta_im, sigma2_k I)`
//! with fresh `beta_im ~ Dir(alpha)` per proposal. The estimate is
//! unbiased, and keeping the value attached to the current state makes the
//! chain exact for the true posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_schedule, is_retained, normal, PriorSpec};
use crate::dirichlet::{self, DirichletSampler};
use crate::em::init_from_groups;
use crate::linalg::{iso_gauss_logpdf, log_sum_exp, pairwise_sum};
use crate::metrics::align_to;
use crate::rng::{self, Rng};
use crate::{Dataset, Error, MixtureParams, Result, Scalar};

/// Random-walk scales. Zero freezes the block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub theta: f64,
    pub sigma2: f64,
    pub pi: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self { theta: 0.02, sigma2: 0.01, pi: 0.02 }
    }
}

#[derive(Debug, Clone)]
pub struct GimhState {
    pub xi: MixtureParams<f64>,
    /// `log L~(xi | X, betas)`, always finite.
    pub log_lik_tilde: f64,
    /// Retained latent draws, `(n*M) x d`; rows `i*M..(i+1)*M` serve row `i`.
    pub betas: DMatrix<f64>,
    pub step_sizes: StepSizes,
    pub accept_count: usize,
    pub step_count: usize,
}

/// Monte Carlo log-likelihood with per-observation atoms.
pub fn log_lik_tilde(x: &DMatrix<f64>, psi: &MixtureParams<f64>, betas: &DMatrix<f64>, m: usize) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 0.0;
    }
    let (k, dim) = (psi.k(), psi.dim());
    let log_m = (m as f64).ln();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let b = betas.rows(i * m, m);
            let xi = x.row(i);
            let mut terms = Vec::with_capacity(k * m);
            for kk in 0..k {
                let means = &b * psi.theta[kk].transpose();
                let lp = psi.pi[kk].ln() - log_m;
                for j in 0..m {
                    let sq = (means.row(j) - xi).norm_squared();
                    terms.push(lp + iso_gauss_logpdf(sq, dim, psi.sigma2[kk]));
                }
            }
            log_sum_exp(&terms)
        })
        .collect();
    pairwise_sum(&rows)
}

/// Log prior density of the blocks that move: end-members, variances and
/// mixing weights. `alpha` is held fixed.
pub fn log_prior(psi: &MixtureParams<f64>, prior: &PriorSpec) -> f64 {
    let s0 = prior.sigma0_sq;
    let mut out = 0.0;
    for t in &psi.theta {
        out += t.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI * s0).ln() - v * v / (2.0 * s0)).sum::<f64>();
    }
    for &s in psi.sigma2.iter() {
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        out += prior.lambda0.ln() - prior.lambda0 * s;
    }
    if psi.k() > 1 {
        out += dirichlet::log_density(&DVector::from_element(psi.k(), prior.pi0), &psi.pi);
    }
    out
}

fn draw_betas(alpha: &DVector<f64>, rows: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
    Ok(DirichletSampler::new(alpha)?.draw_rows(rng, rows))
}

/// One proposal-and-accept step. Boundary violations of `pi` are rejected
/// before any latent draws are made.
pub fn gimh_step(
    state: &mut GimhState,
    x: &DMatrix<f64>,
    m: usize,
    prior: &PriorSpec,
    rng: &mut Rng,
) -> Result<bool> {
    state.step_count += 1;
    let s = state.step_sizes;
    let cur = &state.xi;
    let k = cur.k();
    let mut prop = cur.clone();
    if s.theta > 0.0 {
        for t in prop.theta.iter_mut() {
            for v in t.iter_mut() {
                *v += s.theta * normal(rng);
            }
        }
    }
    if s.sigma2 > 0.0 {
        for v in prop.sigma2.iter_mut() {
            // reflection at zero keeps the walk symmetric
            *v = (*v + s.sigma2 * normal(rng)).abs();
        }
    }
    if s.pi > 0.0 && k > 1 {
        let step = DVector::from_fn(k, |_, _| s.pi * normal(rng));
        let mean = step.sum() / k as f64;
        prop.pi += step.add_scalar(-mean);
        if prop.pi.iter().any(|&p| p <= 0.0) {
            return Ok(false);
        }
    }
    if prop.sigma2.iter().any(|&v| v <= 0.0) {
        return Ok(false);
    }
    let betas = draw_betas(&prop.alpha, x.nrows() * m, rng)?;
    let ll = log_lik_tilde(x, &prop, &betas, m);
    let log_r = log_prior(&prop, prior) + ll - log_prior(cur, prior) - state.log_lik_tilde;
    let u: f64 = rng.random();
    if ll.is_finite() && u.ln() < log_r {
        state.xi = prop;
        state.log_lik_tilde = ll;
        state.betas = betas;
        state.accept_count += 1;
        return Ok(true);
    }
    Ok(false)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GimhConfig {
    /// Latent draws per observation for each likelihood estimate.
    pub m: usize,
    pub steps: StepSizes,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(skip)]
    pub init: Option<MixtureParams<f64>>,
}

impl Default for GimhConfig {
    fn default() -> Self {
        Self { m: 20, steps: StepSizes::default(), n_iter: 20_000, burn_in: 15_000, thin: 100, init: None }
    }
}

#[derive(Debug, Clone)]
pub struct GimhChain {
    /// Retained draws in chain order, as sampled (not relabelled).
    pub samples: Vec<MixtureParams<f64>>,
    pub log_lik: Vec<f64>,
    pub acceptance_rate: f64,
    /// Mean of the retained draws after aligning each to the running mean.
    pub posterior_mean: MixtureParams<f64>,
    pub seed: u64,
}

fn prior_draw(k: usize, d: usize, dim: usize, alpha: &DVector<f64>, prior: &PriorSpec, rng: &mut Rng) -> MixtureParams<f64> {
    let sd = prior.sigma0_sq.sqrt();
    let theta = (0..k)
        .map(|_| DMatrix::from_fn(dim, d, |_, _| sd * normal(rng)))
        .collect();
    MixtureParams {
        theta,
        pi: DVector::from_element(k, 1.0 / k as f64),
        sigma2: DVector::from_element(k, 1.0 / prior.lambda0),
        alpha: alpha.clone(),
    }
}

/// Averages draws after aligning each to the running mean.
pub(crate) fn aligned_mean(samples: &[MixtureParams<f64>]) -> Result<MixtureParams<f64>> {
    let first = samples.first().ok_or_else(|| Error::Degenerate("no retained samples".into()))?;
    let mut mean = first.clone();
    for (c, s) in samples.iter().enumerate().skip(1) {
        let a = align_to(&mean, s)?;
        let w = 1.0 / (c + 1) as f64;
        for (mt, at) in mean.theta.iter_mut().zip(&a.theta) {
            *mt += (at - &*mt) * w;
        }
        mean.pi += (&a.pi - &mean.pi) * w;
        mean.sigma2 += (&a.sigma2 - &mean.sigma2) * w;
    }
    Ok(mean)
}

/// Runs one chain. The start is `cfg.init`, else a k-flats initialisation,
/// else (no data) a prior draw.
pub fn run_gimh<T: Scalar>(
    data: &Dataset<T>,
    k: usize,
    d: usize,
    alpha: &DVector<f64>,
    prior: &PriorSpec,
    cfg: &GimhConfig,
    seed: u64,
) -> Result<GimhChain> {
    prior.validate()?;
    check_schedule(cfg.n_iter, cfg.burn_in)?;
    if k == 0 || d == 0 || alpha.len() != d || cfg.m == 0 {
        return Err(Error::InvalidParameter("need K, d, M >= 1 and alpha of length d".into()));
    }
    let x: DMatrix<f64> = data.x.map(|v| v.f64());
    let dim = x.ncols();
    let mut rng = rng::seeded(rng::derive(seed, "gimh"));
    let xi = match &cfg.init {
        Some(p) => p.clone(),
        None if x.nrows() > k * d => init_from_groups(&x, k, d, 1.0, 10, alpha, rng::derive(seed, "gimh/init"))?,
        None => prior_draw(k, d, dim, alpha, prior, &mut rng),
    };
    xi.validate()?;
    let betas = draw_betas(alpha, x.nrows() * cfg.m, &mut rng)?;
    let ll = log_lik_tilde(&x, &xi, &betas, cfg.m);
    if !ll.is_finite() {
        return Err(Error::Degenerate("initial likelihood estimate is not finite".into()));
    }
    let mut state = GimhState { xi, log_lik_tilde: ll, betas, step_sizes: cfg.steps, accept_count: 0, step_count: 0 };
    let mut samples = Vec::new();
    let mut log_lik = Vec::new();
    for t in 1..=cfg.n_iter {
        gimh_step(&mut state, &x, cfg.m, prior, &mut rng)?;
        if is_retained(t, cfg.burn_in, cfg.thin) {
            samples.push(state.xi.clone());
            log_lik.push(state.log_lik_tilde);
        }
    }
    let posterior_mean = aligned_mean(&samples)?;
    Ok(GimhChain {
        samples,
        log_lik,
        acceptance_rate: state.accept_count as f64 / state.step_count as f64,
        posterior_mean,
        seed,
    })
}

/// Independent chains in parallel; chain `c` uses `restart_seed(seed, c)`.
pub fn run_gimh_chains<T: Scalar>(
    data: &Dataset<T>,
    k: usize,
    d: usize,
    alpha: &DVector<f64>,
    prior: &PriorSpec,
    cfg: &GimhConfig,
    chains: usize,
    seed: u64,
) -> Result<Vec<GimhChain>> {
    (0..chains)
        .into_par_iter()
        .map(|c| run_gimh(data, k, d, alpha, prior, cfg, rng::restart_seed(seed, c)))
        .collect()
}
