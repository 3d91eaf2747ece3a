//! Sampling from the hierarchical model and the canonical experiment settings.

mod settings;

pub use crate::dirichlet::sample as sample_dirichlet;
pub use settings::{make_setting, make_setting_with, SettingId, SettingOptions};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

use crate::dirichlet::DirichletSampler;
use crate::rng;
use crate::{Dataset, MixtureParams, Result, Scalar};

/// Draws `n` observations `X_i = Theta_{z_i} beta_i + sigma_{z_i} eps_i` with
/// `z_i ~ Cat(pi)`, `beta_i ~ Dir(alpha)`, `eps_i ~ N(0, I)`, recording `z` and
/// `beta`.
pub fn simulate<T: Scalar>(psi: &MixtureParams<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    psi.validate_noise(true)?;
    let (dim, d) = (psi.dim(), psi.d());
    let mut rng = rng::seeded(seed);
    let pi: Vec<f64> = psi.pi.iter().map(|p| p.f64()).collect();
    let cat = WeightedIndex::new(&pi)
        .map_err(|e| crate::Error::InvalidParameter(format!("pi: {e}")))?;
    let dir = DirichletSampler::new(&psi.alpha)?;
    let theta: Vec<DMatrix<f64>> = psi.theta.iter().map(|t| t.map(|v| v.f64())).collect();
    let sigma: Vec<f64> = psi.sigma2.iter().map(|s| s.f64().sqrt()).collect();

    let mut x = DMatrix::zeros(n, dim);
    let mut beta = DMatrix::zeros(n, d);
    let mut z = Vec::with_capacity(n);
    let mut b = vec![0.0; d];
    for i in 0..n {
        let k = cat.sample(&mut rng);
        dir.draw_into(&mut rng, &mut b);
        let th = &theta[k];
        for r in 0..dim {
            let mut v = 0.0;
            for j in 0..d {
                v += th[(r, j)] * b[j];
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, r)] = T::of(v + sigma[k] * e);
        }
        for j in 0..d {
            beta[(i, j)] = T::of(b[j]);
        }
        z.push(k);
    }
    Ok(Dataset { x, z: Some(z), beta: Some(beta), seed: Some(seed) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DVector};

    fn setting1() -> MixtureParams<f64> {
        make_setting(&SettingId::One, 0).unwrap()
    }

    #[test]
    fn dirichlet_means() {
        let n = 10_000;
        for alpha in [dvector![1.0, 1.0], dvector![2.0, 2.0, 2.0], dvector![0.2, 0.6, 1.0]] {
            let b = sample_dirichlet(&alpha, n, 11).unwrap();
            let a0 = alpha.sum();
            for j in 0..alpha.len() {
                let m = alpha[j] / a0;
                let var = m * (1.0 - m) / (a0 + 1.0);
                let se = (var / n as f64).sqrt();
                let mean = b.column(j).mean();
                assert!((mean - m).abs() < 3.0 * se, "alpha {alpha:?} coord {j}: {mean} vs {m}");
            }
        }
        assert!(sample_dirichlet(&dvector![1.0, 0.0], 3, 0).is_err());
    }

    #[test]
    fn noiseless_single_vertex() {
        let th = DMatrix::from_column_slice(2, 1, &[1.5, -2.0]);
        let th2 = DMatrix::from_column_slice(2, 1, &[0.0, 3.0]);
        let psi = MixtureParams {
            theta: vec![th.clone(), th2.clone()],
            pi: dvector![0.5, 0.5],
            sigma2: dvector![0.0, 0.0],
            alpha: dvector![1.0],
        };
        assert!(psi.validate().is_err());
        let data = simulate(&psi, 50, 3).unwrap();
        let z = data.z.as_ref().unwrap();
        for i in 0..50 {
            let t = if z[i] == 0 { &th } else { &th2 };
            assert_eq!(data.x.row(i).transpose(), t.column(0).into_owned());
        }
    }

    #[test]
    fn degenerate_pi_and_empty() {
        let mut psi = setting1();
        psi.pi = dvector![1.0, 0.0, 0.0];
        let data = simulate(&psi, 200, 1).unwrap();
        assert!(data.z.unwrap().iter().all(|&k| k == 0));
        assert_eq!(simulate(&psi, 0, 1).unwrap().n(), 0);
    }

    #[test]
    fn setting1_frequencies() {
        let n = 10_000;
        let data = simulate(&setting1(), n, 5).unwrap();
        let z = data.z.unwrap();
        for (k, p) in [0.3, 0.3, 0.4].into_iter().enumerate() {
            let f = z.iter().filter(|&&c| c == k).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 3.0 * se, "component {k}: {f}");
        }
    }

    #[test]
    fn conditional_mean_and_trace() {
        let psi = make_setting::<f64>(&SettingId::SingleSimplex { asym: true }, 2).unwrap();
        let n = 10_000;
        let data = simulate(&psi, n, 9).unwrap();
        let th = &psi.theta[0];
        let a0 = psi.alpha.sum();
        let m: DVector<f64> = &psi.alpha / a0;
        let want = th * &m;
        // Cov(beta) = (diag(m) - m m^T) / (a0 + 1)
        let cov_b = (DMatrix::from_diagonal(&m) - &m * m.transpose()) / (a0 + 1.0);
        let cov_x = th * &cov_b * th.transpose();
        let dim = psi.dim();
        let mean = data.x.row_sum().transpose() / n as f64;
        for r in 0..dim {
            let se = (cov_x[(r, r)] + psi.sigma2[0]).sqrt() / (n as f64).sqrt();
            assert!((mean[r] - want[r]).abs() < 3.5 * se, "coord {r}");
        }
        let mut tr = 0.0;
        for row in data.x.row_iter() {
            tr += (row.transpose() - &mean).norm_squared();
        }
        tr /= n as f64;
        let want_tr = cov_x.trace() + dim as f64 * psi.sigma2[0];
        assert!((tr / want_tr - 1.0).abs() < 0.05);
    }

    #[test]
    fn reproducible_bits() {
        let a = simulate(&setting1(), 100, 42).unwrap();
        let b = simulate(&setting1(), 100, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&setting1(), 100, 43).unwrap();
        assert_ne!(a.x, c.x);
    }
}
