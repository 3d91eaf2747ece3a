//! Gibbs sampler for a single polytope with the latent weights kept in the
//! state. `sigma2` and `Theta` have closed-form conditionals; each `beta_i`
//! and `alpha` move by Metropolis-Hastings.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{check_schedule, is_retained, normal, PriorSpec};
use crate::dirichlet::{self, DirichletSampler};
use crate::em::init_from_groups;
use crate::rng::{self, Rng};
use super::gimh::aligned_mean;
use crate::metrics::metric_d;
use crate::{Dataset, Error, MixtureParams, Result, Scalar};

/// Which blocks are updated; frozen blocks keep their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsBlocks {
    pub sigma2: bool,
    pub theta: bool,
    pub beta: bool,
    pub alpha: bool,
}

impl Default for GibbsBlocks {
    fn default() -> Self {
        Self { sigma2: true, theta: true, beta: true, alpha: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GibbsInit {
    pub theta: Option<DMatrix<f64>>,
    pub sigma2: Option<f64>,
    pub alpha: Option<DVector<f64>>,
    /// `n x d`, rows on the open simplex.
    pub beta: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Random-walk scale for `alpha`.
    pub alpha_step: f64,
    pub blocks: GibbsBlocks,
    pub init: GibbsInit,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            burn_in: 15_000,
            thin: 100,
            alpha_step: 0.05,
            blocks: GibbsBlocks::default(),
            init: GibbsInit::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsChain {
    pub theta: Vec<DMatrix<f64>>,
    pub sigma2: Vec<f64>,
    pub alpha: Vec<DVector<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    pub beta_acceptance: f64,
    pub alpha_acceptance: f64,
    pub seed: u64,
}

impl GibbsChain {
    /// Retained draws as single-component parameter records.
    pub fn to_params(&self) -> Result<Vec<MixtureParams<f64>>> {
        (0..self.theta.len())
            .map(|i| {
                MixtureParams::new(
                    vec![self.theta[i].clone()],
                    DVector::from_element(1, 1.0),
                    DVector::from_element(1, self.sigma2[i]),
                    self.alpha[i].clone(),
                )
            })
            .collect()
    }

    /// Mean of the retained draws with vertices aligned to the running mean.
    pub fn posterior_mean(&self) -> Result<MixtureParams<f64>> {
        let draws = self.to_params()?;
        let mut mean = aligned_mean(&draws)?;
        // alpha is per vertex here, so it follows the vertex matching
        let mut alpha = DVector::zeros(mean.d());
        for p in &draws {
            let perm = &metric_d(&mean, p)?.vertex_perms[0];
            alpha += DVector::from_fn(p.d(), |j, _| p.alpha[perm[j]]);
        }
        mean.alpha = alpha / draws.len() as f64;
        Ok(mean)
    }
}

/// `log q(beta | beta_new) - log q(beta_new | beta)` for the proposal
/// `q(. | b) = Dir(scale * b)`.
pub fn dirichlet_proposal_log_ratio(beta: &DVector<f64>, beta_new: &DVector<f64>, scale: f64) -> f64 {
    dirichlet::log_density(&(beta_new * scale), beta) - dirichlet::log_density(&(beta * scale), beta_new)
}

fn inv_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive shape and rate");
    1.0 / g.sample(rng)
}

struct State {
    theta: DMatrix<f64>,
    sigma2: f64,
    alpha: DVector<f64>,
    beta: DMatrix<f64>,
}

fn update_sigma2(x: &DMatrix<f64>, s: &mut State, prior: &PriorSpec, rng: &mut Rng) {
    let (n, dim) = x.shape();
    // nD scalar residuals enter the shape
    let rss = (x - &s.beta * s.theta.transpose()).norm_squared();
    let a_n = prior.a0 + (n * dim) as f64;
    let b_n = prior.b0 + rss;
    s.sigma2 = inv_gamma(a_n / 2.0, b_n / 2.0, rng);
}

fn update_theta(x: &DMatrix<f64>, s: &mut State, prior: &PriorSpec, rng: &mut Rng) -> Result<()> {
    let d = s.beta.ncols();
    let prec = DMatrix::identity(d, d) / prior.sigma0_sq + s.beta.transpose() * &s.beta / s.sigma2;
    let cov = prec
        .cholesky()
        .ok_or_else(|| Error::Degenerate("posterior precision of Theta is not positive definite".into()))?
        .inverse();
    let mean = x.transpose() * &s.beta * &cov / s.sigma2;
    let lower = cov
        .cholesky()
        .ok_or_else(|| Error::Degenerate("posterior covariance of Theta is not positive definite".into()))?
        .l();
    let z = DMatrix::from_fn(x.ncols(), d, |_, _| normal(rng));
    s.theta = mean + z * lower.transpose();
    Ok(())
}

fn beta_log_target(alpha: &DVector<f64>, b: &DVector<f64>, x: &DVector<f64>, theta: &DMatrix<f64>, sigma2: f64) -> f64 {
    dirichlet::log_density(alpha, b) - (x - theta * b).norm_squared() / (2.0 * sigma2)
}

fn update_beta(x: &DMatrix<f64>, s: &mut State, prior: &PriorSpec, rng: &mut Rng) -> Result<usize> {
    let d = s.beta.ncols();
    if d == 1 {
        return Ok(x.nrows());
    }
    let mut accepted = 0;
    let mut buf = vec![0.0; d];
    for i in 0..x.nrows() {
        let cur = s.beta.row(i).transpose();
        let sampler = DirichletSampler::new(&(&cur * prior.b))?;
        sampler.draw_into(rng, &mut buf);
        if buf.iter().any(|&v| v <= 0.0) {
            continue;
        }
        let prop = DVector::from_column_slice(&buf);
        let xi = x.row(i).transpose();
        let log_r = beta_log_target(&s.alpha, &prop, &xi, &s.theta, s.sigma2)
            - beta_log_target(&s.alpha, &cur, &xi, &s.theta, s.sigma2)
            + dirichlet_proposal_log_ratio(&cur, &prop, prior.b);
        let u: f64 = rng.random();
        if u.ln() < log_r {
            s.beta.set_row(i, &prop.transpose());
            accepted += 1;
        }
    }
    Ok(accepted)
}

fn alpha_log_target(alpha: &DVector<f64>, beta: &DMatrix<f64>, rate: f64) -> f64 {
    let mut out = -rate * alpha.sum();
    if alpha.len() > 1 {
        for r in beta.row_iter() {
            out += dirichlet::log_density(alpha, &r.transpose());
        }
    }
    out
}

fn update_alpha(s: &mut State, step: f64, prior: &PriorSpec, rng: &mut Rng) -> bool {
    let prop = s.alpha.map(|a| a + step * normal(rng));
    if prop.iter().any(|&a| a <= 0.0) {
        return false;
    }
    let log_r = alpha_log_target(&prop, &s.beta, prior.alpha_rate) - alpha_log_target(&s.alpha, &s.beta, prior.alpha_rate);
    let u: f64 = rng.random();
    if u.ln() < log_r {
        s.alpha = prop;
        return true;
    }
    false
}

fn initial_state(x: &DMatrix<f64>, d: usize, prior: &PriorSpec, init: &GibbsInit, seed: u64, rng: &mut Rng) -> Result<State> {
    let (n, dim) = x.shape();
    let alpha = init.alpha.clone().unwrap_or_else(|| DVector::from_element(d, 1.0));
    let fitted = if (init.theta.is_none() || init.sigma2.is_none()) && n > d {
        Some(init_from_groups(x, 1, d, 1.0, 10, &alpha, rng::derive(seed, "gibbs/init"))?)
    } else {
        None
    };
    let theta = match (&init.theta, &fitted) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => f.theta[0].clone(),
        (None, None) => {
            let sd = prior.sigma0_sq.sqrt();
            DMatrix::from_fn(dim, d, |_, _| sd * normal(rng))
        }
    };
    let sigma2 = init.sigma2.or(fitted.map(|f| f.sigma2[0])).unwrap_or(prior.b0 / prior.a0);
    let beta = init.beta.clone().unwrap_or_else(|| DMatrix::from_element(n, d, 1.0 / d as f64));
    if theta.shape() != (dim, d) || beta.shape() != (n, d) || alpha.len() != d {
        return Err(Error::Shape("initial values do not match (n, D, d)".into()));
    }
    Ok(State { theta, sigma2, alpha, beta })
}

/// Augmented Gibbs sampler for `K = 1`.
pub fn gibbs_augmented_k1<T: Scalar>(
    data: &Dataset<T>,
    d: usize,
    prior: &PriorSpec,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<GibbsChain> {
    prior.validate()?;
    check_schedule(cfg.n_iter, cfg.burn_in)?;
    if d == 0 {
        return Err(Error::InvalidParameter("d must be positive".into()));
    }
    let x: DMatrix<f64> = data.x.map(|v| v.f64());
    let mut rng = rng::seeded(rng::derive(seed, "gibbs"));
    let mut s = initial_state(&x, d, prior, &cfg.init, seed, &mut rng)?;
    let mut out = GibbsChain {
        theta: Vec::new(),
        sigma2: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        beta_acceptance: 0.0,
        alpha_acceptance: 0.0,
        seed,
    };
    let (mut beta_acc, mut alpha_acc) = (0usize, 0usize);
    for t in 1..=cfg.n_iter {
        if cfg.blocks.sigma2 {
            update_sigma2(&x, &mut s, prior, &mut rng);
        }
        if cfg.blocks.theta {
            update_theta(&x, &mut s, prior, &mut rng)?;
        }
        if cfg.blocks.beta {
            beta_acc += update_beta(&x, &mut s, prior, &mut rng)?;
        }
        if cfg.blocks.alpha && update_alpha(&mut s, cfg.alpha_step, prior, &mut rng) {
            alpha_acc += 1;
        }
        if is_retained(t, cfg.burn_in, cfg.thin) {
            out.theta.push(s.theta.clone());
            out.sigma2.push(s.sigma2);
            out.alpha.push(s.alpha.clone());
            out.beta.push(s.beta.clone());
        }
    }
    let steps = cfg.n_iter as f64;
    out.beta_acceptance = if x.nrows() == 0 { 0.0 } else { beta_acc as f64 / (steps * x.nrows() as f64) };
    out.alpha_acceptance = alpha_acc as f64 / steps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::batch_means_se;
    use super::*;
    use nalgebra::dvector;
    use statrs::function::gamma::ln_gamma;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn within(v: &[f64], target: f64) -> bool {
        (mean(v) - target).abs() < 3.0 * batch_means_se(v, 50)
    }

    fn all_iters(n_iter: usize) -> GibbsConfig {
        GibbsConfig { n_iter, burn_in: 0, thin: 1, ..Default::default() }
    }

    #[test]
    fn proposal_ratio_matches_direct_densities() {
        fn dir_logpdf(a: &[f64], x: &[f64]) -> f64 {
            let s: f64 = a.iter().sum();
            ln_gamma(s) + a.iter().zip(x).map(|(a, x)| (a - 1.0) * x.ln() - ln_gamma(*a)).sum::<f64>()
        }
        let b = 50.0;
        let cur = [0.2, 0.5, 0.3];
        let new = [0.25, 0.4, 0.35];
        let fwd: Vec<f64> = cur.iter().map(|v| v * b).collect();
        let bwd: Vec<f64> = new.iter().map(|v| v * b).collect();
        let want = dir_logpdf(&bwd, &cur) - dir_logpdf(&fwd, &new);
        let got = dirichlet_proposal_log_ratio(&DVector::from_row_slice(&cur), &DVector::from_row_slice(&new), b);
        assert!((got - want).abs() < 1e-12);
        assert_eq!(dirichlet_proposal_log_ratio(&DVector::from_row_slice(&cur), &DVector::from_row_slice(&cur), b), 0.0);
    }

    #[test]
    fn empty_data_targets_prior() {
        let prior = PriorSpec { a0: 6.0, b0: 4.0, ..Default::default() };
        let data = Dataset::new(DMatrix::<f64>::zeros(0, 2));
        let cfg = GibbsConfig { alpha_step: 0.8, ..all_iters(50_000) };
        let ch = gibbs_augmented_k1(&data, 2, &prior, &cfg, 3).unwrap();
        // InvGamma(3, 2) has mean 1; theta entries N(0, 10); alpha_j Exp(1)
        assert!(within(&ch.sigma2, 1.0));
        let th: Vec<f64> = ch.theta.iter().map(|t| t[(1, 0)]).collect();
        assert!(within(&th, 0.0));
        let var = mean(&th.iter().map(|v| v * v).collect::<Vec<_>>());
        assert!((var / 10.0 - 1.0).abs() < 0.1);
        let al: Vec<f64> = ch.alpha.iter().map(|a| a[1]).collect();
        assert!(within(&al, 1.0));
        assert!(ch.sigma2.iter().all(|&s| s > 0.0));
    }

    fn location_data() -> DMatrix<f64> {
        DMatrix::from_row_slice(6, 1, &[1.2, 0.4, 0.9, 1.7, 0.3, 1.1])
    }

    #[test]
    fn location_model_matches_quadrature_posterior() {
        // d = 1, D = 1: semi-conjugate Normal / InvGamma, oracle by 2-D quadrature
        let x = location_data();
        let prior = PriorSpec { a0: 4.0, b0: 2.0, sigma0_sq: 4.0, ..Default::default() };
        let ch = gibbs_augmented_k1(&Dataset::new(x.clone()), 1, &prior, &all_iters(60_000), 7).unwrap();
        let (mut z, mut mt, mut ms) = (0.0, 0.0, 0.0);
        for a in 0..800 {
            let th = -2.0 + 6.0 * (a as f64 + 0.5) / 800.0;
            for b in 0..800 {
                let s2 = 0.005 + 4.0 * (b as f64 + 0.5) / 800.0;
                let rss: f64 = x.iter().map(|v| (v - th).powi(2)).sum();
                let lp = -th * th / (2.0 * prior.sigma0_sq)
                    - (prior.a0 / 2.0 + 1.0) * s2.ln()
                    - prior.b0 / (2.0 * s2)
                    - 3.0 * s2.ln()
                    - rss / (2.0 * s2);
                let w = lp.exp();
                z += w;
                mt += w * th;
                ms += w * s2;
            }
        }
        let th: Vec<f64> = ch.theta.iter().map(|t| t[(0, 0)]).collect();
        assert!(within(&th, mt / z), "{} vs {}", mean(&th), mt / z);
        assert!(within(&ch.sigma2, ms / z), "{} vs {}", mean(&ch.sigma2), ms / z);
    }

    #[test]
    fn regression_blocks_with_known_beta() {
        let mut rng = rng::seeded(11);
        let n = 40;
        let beta: DMatrix<f64> = DirichletSampler::new(&dvector![1.0, 1.0, 1.0]).unwrap().draw_rows(&mut rng, n);
        let theta = DMatrix::from_row_slice(2, 3, &[0.0, 2.0, -1.0, 1.0, 0.0, 3.0]);
        let noise = DMatrix::from_fn(n, 2, |_, _| 0.3 * normal(&mut rng));
        let x = &beta * theta.transpose() + noise;
        let prior = PriorSpec::default();
        let fixed = |blocks: GibbsBlocks, sigma2: Option<f64>, theta: Option<DMatrix<f64>>| GibbsConfig {
            blocks,
            init: GibbsInit { theta, sigma2, alpha: None, beta: Some(beta.clone()) },
            ..all_iters(20_000)
        };
        let data = Dataset::new(x.clone());

        // Theta | beta, sigma2: Gaussian regression posterior
        let s2 = 0.09;
        let only_theta = GibbsBlocks { sigma2: false, theta: true, beta: false, alpha: false };
        let ch = gibbs_augmented_k1(&data, 3, &prior, &fixed(only_theta, Some(s2), None), 1).unwrap();
        let cov = (DMatrix::<f64>::identity(3, 3) / prior.sigma0_sq + beta.transpose() * &beta / s2).try_inverse().unwrap();
        let want = x.transpose() * &beta * &cov / s2;
        for (r, c) in [(0, 0), (1, 2), (0, 1)] {
            let v: Vec<f64> = ch.theta.iter().map(|t| t[(r, c)]).collect();
            assert!(within(&v, want[(r, c)]), "{r},{c}");
        }

        // sigma2 | beta, Theta: inverse gamma with mean b_n / (a_n - 2)
        let only_s2 = GibbsBlocks { sigma2: true, theta: false, beta: false, alpha: false };
        let ch = gibbs_augmented_k1(&data, 3, &prior, &fixed(only_s2, None, Some(theta.clone())), 2).unwrap();
        let b_n = prior.b0 + (&x - &beta * theta.transpose()).norm_squared();
        let a_n = prior.a0 + (2 * n) as f64;
        assert!(within(&ch.sigma2, b_n / (a_n - 2.0)));
    }

    #[test]
    fn recovers_simplex_and_keeps_invariants() {
        let psi = crate::simulate::make_setting::<f64>(&crate::simulate::SettingId::SingleSimplex { asym: false }, 2).unwrap();
        let data = crate::simulate::simulate(&psi, 300, 5).unwrap();
        let cfg = GibbsConfig { n_iter: 1_500, burn_in: 1_000, thin: 10, ..Default::default() };
        let ch = gibbs_augmented_k1(&data, 3, &PriorSpec::default(), &cfg, 9).unwrap();
        assert_eq!(ch.theta.len(), 50);
        assert!(ch.beta_acceptance > 0.0 && ch.beta_acceptance < 1.0);
        for b in &ch.beta {
            assert!(b.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9 && r.iter().all(|&v| v > 0.0)));
        }
        let last = ch.theta.last().unwrap();
        // vertices are weakly determined at this n and noise level; the chain
        // must still move far inside the k-flats start (error about 15)
        let err = crate::metrics::d_m(&psi.theta[0], last).unwrap().0;
        assert!(err < 5.0, "{err}");
        assert!((mean(&ch.sigma2) / 0.16 - 1.0).abs() < 0.2);
    }
}
