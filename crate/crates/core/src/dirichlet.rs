//! Dirichlet sampling and log-density.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::Scalar;

fn check_alpha<T: Scalar>(alpha: &DVector<T>) -> Result<()> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > T::zero()) || !a.is_finite()) {
        return Err(Error::InvalidParameter(
            "Dirichlet concentration must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Gamma samplers for each coordinate. `rand_distr` switches to the
/// `Gamma(a + 1) * U^(1/a)` boost for shapes below one.
pub(crate) struct DirichletSampler {
    gammas: Vec<Gamma<f64>>,
}

impl DirichletSampler {
    pub fn new<T: Scalar>(alpha: &DVector<T>) -> Result<Self> {
        check_alpha(alpha)?;
        let gammas = alpha
            .iter()
            .map(|a| Gamma::new(a.f64(), 1.0).map_err(|e| Error::InvalidParameter(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { gammas })
    }

    /// Writes one draw into `out` (length d).
    pub fn draw_into(&self, rng: &mut Rng, out: &mut [f64]) {
        loop {
            let mut total = 0.0;
            for (o, g) in out.iter_mut().zip(&self.gammas) {
                *o = g.sample(rng);
                total += *o;
            }
            if total > 0.0 && total.is_finite() {
                for o in out.iter_mut() {
                    *o /= total;
                }
                return;
            }
            // every coordinate underflowed; only possible for tiny shapes
            if self.gammas.len() == 1 {
                out[0] = 1.0;
                return;
            }
        }
    }

    pub fn draw_rows<T: Scalar>(&self, rng: &mut Rng, n: usize) -> DMatrix<T> {
        let d = self.gammas.len();
        let mut buf = vec![0.0; d];
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            self.draw_into(rng, &mut buf);
            for j in 0..d {
                out[(i, j)] = T::of(buf[j]);
            }
        }
        out
    }
}

/// `n` independent `Dir(alpha)` draws as the rows of an `n x d` matrix,
/// obtained by normalizing independent `Gamma(alpha_j, 1)` variates.
pub fn sample<T: Scalar>(alpha: &DVector<T>, n: usize, seed: u64) -> Result<DMatrix<T>> {
    let sampler = DirichletSampler::new(alpha)?;
    let mut rng = rng::seeded(seed);
    Ok(sampler.draw_rows(&mut rng, n))
}

/// Log-density of `Dir(alpha)` at `beta` with respect to Lebesgue measure on
/// the first `d - 1` coordinates. Returns `-inf` off the open simplex
/// boundary when a coordinate is zero and its concentration exceeds one.
pub fn log_density<T: Scalar>(alpha: &DVector<T>, beta: &DVector<T>) -> T {
    let mut total_alpha = 0.0;
    let mut out = 0.0;
    for (a, b) in alpha.iter().zip(beta.iter()) {
        let (a, b) = (a.f64(), b.f64());
        total_alpha += a;
        out -= ln_gamma(a);
        if a != 1.0 {
            out += (a - 1.0) * b.ln();
        }
    }
    out += ln_gamma(total_alpha);
    T::of(if out.is_nan() { f64::NEG_INFINITY } else { out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn rows_on_simplex_and_reproducible() {
        let alpha = dvector![0.2, 0.6, 1.0];
        let a: DMatrix<f64> = sample(&alpha, 500, 3).unwrap();
        let b: DMatrix<f64> = sample(&alpha, 500, 3).unwrap();
        assert_eq!(a, b);
        for r in a.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(sample::<f64>(&dvector![1.0, 0.0], 3, 0).is_err());
        assert!(sample::<f64>(&dvector![1.0, -2.0], 3, 0).is_err());
    }

    #[test]
    fn flat_density_is_log_factorial() {
        // Dir(1,1,1) is uniform with density (d-1)! = 2
        let v: f64 = log_density(&dvector![1.0, 1.0, 1.0], &dvector![0.2, 0.3, 0.5]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_density_matches_closed_form() {
        // Dir(2,3) at (0.4,0.6) is Beta(2,3) at 0.4: 12 * 0.4 * 0.6^2
        let v: f64 = log_density(&dvector![2.0, 3.0], &dvector![0.4, 0.6]);
        assert!((v - (12.0f64 * 0.4 * 0.36).ln()).abs() < 1e-12);
    }
}
