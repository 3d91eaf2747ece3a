//! Bayesian samplers: a pseudo-marginal Metropolis-Hastings chain for the
//! full mixture and an augmented Gibbs sampler for a single polytope.

mod gibbs;
mod gimh;

pub use gibbs::{dirichlet_proposal_log_ratio, gibbs_augmented_k1, GibbsBlocks, GibbsChain, GibbsConfig, GibbsInit};
pub use gimh::{
    gimh_step, log_lik_tilde, log_prior, run_gimh, run_gimh_chains, GimhChain, GimhConfig, GimhState, StepSizes,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters. `pi0` is the symmetric Dirichlet concentration on the
/// mixing weights; end-member entries are `N(0, sigma0_sq)`; GIMH puts an
/// `Exp(lambda0)` prior on each `sigma2_k`; Gibbs uses
/// `InvGamma(a0 / 2, b0 / 2)` on `sigma2` and `Exp(alpha_rate)` on each
/// `alpha_j`; `b` scales the Dirichlet proposal for the latent weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub pi0: f64,
    pub sigma0_sq: f64,
    pub lambda0: f64,
    pub a0: f64,
    pub b0: f64,
    pub b: f64,
    pub alpha_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { pi0: 1.0, sigma0_sq: 10.0, lambda0: 1.0, a0: 2.0, b0: 2.0, b: 50.0, alpha_rate: 1.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pi0, self.sigma0_sq, self.lambda0, self.a0, self.b0, self.b, self.alpha_rate];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("prior hyperparameters must be positive and finite".into()))
        }
    }
}

pub(crate) fn normal(rng: &mut crate::rng::Rng) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}

/// Indices of the retained draws: after `burn_in`, every `thin`-th.
pub(crate) fn is_retained(iter: usize, burn_in: usize, thin: usize) -> bool {
    iter > burn_in && (iter - burn_in) % thin.max(1) == 0
}

pub(crate) fn check_schedule(n_iter: usize, burn_in: usize) -> Result<()> {
    if n_iter <= burn_in {
        return Err(Error::InvalidParameter(format!("need n_iter > burn_in, got {n_iter} <= {burn_in}")));
    }
    Ok(())
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len());
    let len = xs.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}
