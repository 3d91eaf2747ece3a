//! Method-of-moments estimator for a single polytope: whitened third-order
//! moment eigendecomposition under a Dirichlet law with known total
//! concentration.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::gaussian::dirichlet_moments;
use crate::linalg::sym_eigen_desc;
use crate::metrics::d_m;
use crate::{rng, Dataset, Error, Result, Scalar};

/// Number of random directions combined by the median.
pub const N_DIRECTIONS: usize = 5;

/// Raw moments of `X`: the mean, `E[X X^T]` and the action
/// `v -> E[X X^T <X, v>]` of the third moment.
pub trait MomentSource<T: Scalar> {
    fn mean(&self) -> DVector<T>;
    fn second(&self) -> DMatrix<T>;
    fn triple_action(&self, v: &DVector<T>) -> DMatrix<T>;
}

/// Sample moments of a data matrix.
pub struct EmpiricalMoments<'a, T: Scalar> {
    x: &'a DMatrix<T>,
    mean: DVector<T>,
    second: DMatrix<T>,
}

impl<'a, T: Scalar> EmpiricalMoments<'a, T> {
    pub fn new(x: &'a DMatrix<T>) -> Result<Self> {
        let n = x.nrows();
        if n < 3 {
            return Err(Error::InsufficientData { needed: 3, got: n });
        }
        let nt = T::of_usize(n);
        let mean = x.row_sum().transpose() / nt;
        let second = x.transpose() * x / nt;
        Ok(Self { x, mean, second })
    }
}

impl<T: Scalar> MomentSource<T> for EmpiricalMoments<'_, T> {
    fn mean(&self) -> DVector<T> {
        self.mean.clone()
    }

    fn second(&self) -> DMatrix<T> {
        self.second.clone()
    }

    /// `(1/n) sum_i x_i x_i^T <x_i, v>`.
    fn triple_action(&self, v: &DVector<T>) -> DMatrix<T> {
        let proj = self.x * v;
        let mut scaled = self.x.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= proj[i];
        }
        scaled.transpose() * self.x / T::of_usize(self.x.nrows())
    }
}

/// Exact moments of `X = Theta beta + sigma eps` with `beta ~ Dir(alpha)`.
pub struct PopulationMoments<T: Scalar> {
    theta: DMatrix<T>,
    alpha: DVector<T>,
    sigma2: T,
}

impl<T: Scalar> PopulationMoments<T> {
    pub fn new(theta: DMatrix<T>, alpha: DVector<T>, sigma2: T) -> Result<Self> {
        if theta.ncols() != alpha.len() {
            return Err(Error::Shape("theta needs one column per alpha entry".into()));
        }
        dirichlet_moments(&alpha)?;
        Ok(Self { theta, alpha, sigma2 })
    }
}

impl<T: Scalar> MomentSource<T> for PopulationMoments<T> {
    fn mean(&self) -> DVector<T> {
        &self.theta * &self.alpha / self.alpha.sum()
    }

    fn second(&self) -> DMatrix<T> {
        let m = dirichlet_moments(&self.alpha).expect("validated alpha");
        let mut s = &self.theta * m.second_moment * self.theta.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] += self.sigma2;
        }
        s
    }

    fn triple_action(&self, v: &DVector<T>) -> DMatrix<T> {
        // E[beta beta^T <beta, u>] from the Dirichlet third moments
        let a = &self.alpha;
        let abar = a.sum();
        let u = self.theta.transpose() * v;
        let au = a.dot(&u);
        let w = a.component_mul(&u);
        let two = T::of(2.0);
        let n = a * a.transpose() * au
            + DMatrix::from_diagonal(a) * au
            + &w * a.transpose()
            + a * w.transpose()
            + DMatrix::from_diagonal(&w) * two;
        let denom = abar * (abar + T::one()) * (abar + two);
        let signal = &self.theta * n * self.theta.transpose() / denom;
        let mu = self.mean();
        let mut noise = v * mu.transpose() + &mu * v.transpose();
        let mv = mu.dot(v);
        for i in 0..noise.nrows() {
            noise[(i, i)] += mv;
        }
        signal + noise * self.sigma2
    }
}

/// Mean of the `D - d` smallest eigenvalues of `E[X X^T]`.
pub fn estimate_sigma2_spectral<T: Scalar>(second: &DMatrix<T>, d: usize) -> Result<T> {
    let dim = second.nrows();
    if d >= dim {
        return Err(Error::InvalidParameter(format!("need d < D, got d={d}, D={dim}")));
    }
    let (vals, _) = sym_eigen_desc(second);
    let tail = vals.rows(d, dim - d);
    Ok(tail.sum() / T::of_usize(dim - d))
}

/// Corrected moments whose structure is diagonal in the end-members.
pub struct PairsTriples<'a, T: Scalar, M: MomentSource<T>> {
    pub pairs: DMatrix<T>,
    src: &'a M,
    mu: DVector<T>,
    s: DMatrix<T>,
    sigma2: T,
    abar: T,
}

impl<T: Scalar, M: MomentSource<T>> PairsTriples<'_, T, M> {
    /// `E[X X^T <X, v>]` minus the noise and mean corrections.
    pub fn triples(&self, v: &DVector<T>) -> DMatrix<T> {
        let (mu, s, a) = (&self.mu, &self.s, self.abar);
        let two = T::of(2.0);
        let mv = mu.dot(v);
        let mut noise = v * mu.transpose() + mu * v.transpose();
        for i in 0..noise.nrows() {
            noise[(i, i)] += mv;
        }
        let sv = s * v;
        let cross = s * mv + &sv * mu.transpose() + mu * sv.transpose();
        self.src.triple_action(v) - noise * self.sigma2 - cross * (a / (a + two))
            + mu * mu.transpose() * (two * a * a / ((a + T::one()) * (a + two)) * mv)
    }
}

pub fn build_pairs_triples<T: Scalar, M: MomentSource<T>>(
    src: &M,
    sigma2: T,
    abar: T,
) -> Result<PairsTriples<'_, T, M>> {
    if !(abar > T::zero()) {
        return Err(Error::InvalidParameter("abar must be positive".into()));
    }
    let mu = src.mean();
    let mut s = src.second();
    for i in 0..s.nrows() {
        s[(i, i)] -= sigma2;
    }
    let pairs = &s - &mu * mu.transpose() * (abar / (abar + T::one()));
    Ok(PairsTriples { pairs, src, mu, s, sigma2, abar })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFit<T: Scalar> {
    /// `D x d`.
    pub theta: DMatrix<T>,
    pub alpha: DVector<T>,
    pub sigma2: T,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralConfig {
    /// `Pairs` counts as rank deficient when its `d`-th eigenvalue is at most
    /// this fraction of the largest.
    pub rank_tol: f64,
    pub directions: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { rank_tol: 1e-8, directions: N_DIRECTIONS }
    }
}

/// Recovery from one whitened direction `eta`.
fn recover_once<T: Scalar, M: MomentSource<T>>(
    pt: &PairsTriples<'_, T, M>,
    u_half: &DMatrix<T>,
    whiten: &DMatrix<T>,
    eta: &DVector<T>,
) -> (DMatrix<T>, DVector<T>) {
    let d = whiten.ncols();
    let abar = pt.abar;
    let two = T::of(2.0);
    let t = whiten.transpose() * pt.triples(&(whiten * eta)) * whiten;
    let t = (&t + t.transpose()) * T::of(0.5);
    let (lam, vecs) = sym_eigen_desc(&t);
    let mut theta = DMatrix::zeros(u_half.nrows(), d);
    let mut alpha = DVector::zeros(d);
    for j in 0..d {
        let m = vecs.column(j);
        // sqrt(alpha_j / (abar (abar + 1))), sign-fixed to be positive
        let root = (two / (abar + two)) * m.dot(eta) / lam[j];
        let col = u_half * m / root;
        theta.set_column(j, &col);
        alpha[j] = root * root * abar * (abar + T::one());
    }
    (theta, alpha)
}

fn median<T: Scalar>(v: &mut [T]) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::of(0.5)
    }
}

/// Spectral fit from any moment source. `abar` is the known total
/// concentration; the recovered `alpha` is rescaled to sum to it.
pub fn fit_spectral_moments<T: Scalar, M: MomentSource<T>>(
    src: &M,
    d: usize,
    abar: T,
    cfg: &SpectralConfig,
    seed: u64,
) -> Result<SpectralFit<T>> {
    let second = src.second();
    let dim = second.nrows();
    if d == 0 || d > dim {
        return Err(Error::InvalidParameter(format!("need 1 <= d <= D, got d={d}, D={dim}")));
    }
    let sigma2 = if d < dim { estimate_sigma2_spectral(&second, d)?.max(T::zero()) } else { T::zero() };
    let pt = build_pairs_triples(src, sigma2, abar)?;
    let sym = (&pt.pairs + pt.pairs.transpose()) * T::of(0.5);
    let (s, u) = sym_eigen_desc(&sym);
    let top = s[0];
    let rank_cut = T::of(cfg.rank_tol) * top.abs();
    if !(s[d - 1] > rank_cut) {
        return Err(Error::RankDeficient { expected: d, found: (0..d).filter(|&i| s[i] > rank_cut).count() });
    }
    let u = u.columns(0, d).into_owned();
    let mut whiten = u.clone();
    let mut u_half = u;
    for j in 0..d {
        let sj = s[j].sqrt();
        whiten.column_mut(j).unscale_mut(sj);
        u_half.column_mut(j).scale_mut(sj);
    }
    let mut rng = rng::seeded(rng::derive(seed, "spectral/eta"));
    let mut fits = Vec::with_capacity(cfg.directions.max(1));
    for _ in 0..cfg.directions.max(1) {
        let mut eta = DVector::from_fn(d, |_, _| T::of(StandardNormal.sample(&mut rng)));
        let norm = eta.norm();
        eta /= norm;
        fits.push(recover_once(&pt, &u_half, &whiten, &eta));
    }
    // bring every draw into the column order of the first, then take medians
    let reference = fits[0].0.clone();
    let mut aligned = Vec::with_capacity(fits.len());
    for (th, al) in fits {
        let (_, perm) = d_m(&reference, &th)?;
        let th2 = DMatrix::from_fn(dim, d, |r, j| th[(r, perm[j])]);
        let al2 = DVector::from_fn(d, |j, _| al[perm[j]]);
        aligned.push((th2, al2));
    }
    let theta = DMatrix::from_fn(dim, d, |r, j| {
        let mut v: Vec<T> = aligned.iter().map(|(t, _)| t[(r, j)]).collect();
        median(&mut v)
    });
    let raw = DVector::from_fn(d, |j, _| {
        let mut v: Vec<T> = aligned.iter().map(|(_, a)| a[j]).collect();
        median(&mut v)
    });
    let total = raw.sum();
    let alpha = if total > T::zero() { raw * (abar / total) } else { raw };
    Ok(SpectralFit { theta, alpha, sigma2 })
}

/// Spectral fit from data. Needs linearly independent end-members.
pub fn fit_spectral<T: Scalar>(data: &Dataset<T>, d: usize, abar: T, seed: u64) -> Result<SpectralFit<T>> {
    let src = EmpiricalMoments::new(&data.x)?;
    fit_spectral_moments(&src, d, abar, &SpectralConfig::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{make_setting, simulate, SettingId};
    use nalgebra::dvector;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn explicit_triple(x: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut out = DMatrix::zeros(x.ncols(), x.ncols());
        for i in 0..n {
            let r = x.row(i).transpose();
            out += &r * r.transpose() * r.dot(v);
        }
        out / n as f64
    }

    #[test]
    fn empirical_triple_action() {
        let x = DMatrix::from_fn(5, 3, |_, j| [1.0, -2.0, 0.5][j]);
        let m = EmpiricalMoments::new(&x).unwrap();
        let v = dvector![0.3, 0.1, -1.0];
        let xr = x.row(0).transpose();
        assert!((m.triple_action(&v) - &xr * xr.transpose() * xr.dot(&v)).norm() < 1e-12);
        assert_eq!(m.triple_action(&DVector::zeros(3)), DMatrix::zeros(3, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 4, |_, _| rng.random::<f64>());
        let m = EmpiricalMoments::new(&x).unwrap();
        let (a, b) = (dvector![1.0, 0.0, 2.0, -1.0], dvector![0.5, 0.5, 0.0, 3.0]);
        let ta = m.triple_action(&a);
        assert!((&ta - ta.transpose()).norm() < 1e-12);
        assert!((m.triple_action(&(&a * 2.0 + &b)) - (&ta * 2.0 + m.triple_action(&b))).norm() < 1e-12);
        assert!((ta - explicit_triple(&x, &a)).norm() < 1e-12);
    }

    #[test]
    fn population_triple_matches_sampled_law() {
        // the population third moment agrees with a large sample
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let alpha = dvector![0.5, 1.5];
        let pop = PopulationMoments::new(theta.clone(), alpha.clone(), 0.04).unwrap();
        let psi = crate::MixtureParams::new(vec![theta], dvector![1.0], dvector![0.04], alpha).unwrap();
        let data = simulate(&psi, 400_000, 3).unwrap();
        let emp = EmpiricalMoments::new(&data.x).unwrap();
        let v = dvector![0.7, -0.4];
        assert!((pop.triple_action(&v) - emp.triple_action(&v)).amax() < 5e-3);
        assert!((pop.second() - emp.second()).amax() < 5e-3);
    }

    #[test]
    fn sigma2_from_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>());
        let pop = PopulationMoments::new(theta.clone(), dvector![0.8, 0.8, 0.8], 0.16).unwrap();
        assert!((estimate_sigma2_spectral(&pop.second(), 3).unwrap() - 0.16).abs() < 1e-12);
        let quiet = PopulationMoments::new(theta, dvector![0.8, 0.8, 0.8], 0.0).unwrap();
        assert!(estimate_sigma2_spectral(&quiet.second(), 3).unwrap().abs() < 1e-12);
        assert!(estimate_sigma2_spectral(&DMatrix::<f64>::identity(3, 3), 3).is_err());
    }

    #[test]
    fn pairs_and_triples_are_diagonal() {
        let theta = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let pop = PopulationMoments::new(theta, dvector![1.0, 1.0], 0.0).unwrap();
        let pt = build_pairs_triples(&pop, 0.0, 2.0).unwrap();
        let want = DMatrix::from_diagonal(&dvector![1.0, 1.0, 0.0]) / 6.0;
        assert!((&pt.pairs - want).norm() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let alpha = dvector![0.2, 0.6, 1.0];
        let abar = 1.8;
        let pop = PopulationMoments::new(theta.clone(), alpha.clone(), 0.3).unwrap();
        let pt = build_pairs_triples(&pop, 0.3, abar).unwrap();
        let v = DVector::from_fn(5, |_, _| rng.random::<f64>());
        let c = 2.0 / (abar * (abar + 1.0) * (abar + 2.0));
        let want = &theta * DMatrix::from_diagonal(&(theta.transpose() * &v)) * DMatrix::from_diagonal(&alpha) * theta.transpose() * c;
        assert!((pt.triples(&v) - want).amax() < 1e-10);
        let pairs = &theta * DMatrix::from_diagonal(&alpha) * theta.transpose() / (abar * (abar + 1.0));
        assert!((&pt.pairs - pairs).amax() < 1e-12);
    }

    fn matched_alpha(truth: &DMatrix<f64>, fit: &SpectralFit<f64>) -> DVector<f64> {
        let (_, perm) = d_m(truth, &fit.theta).unwrap();
        DVector::from_fn(truth.ncols(), |j, _| fit.alpha[perm[j]])
    }

    #[test]
    fn exact_on_population_moments() {
        for asym in [false, true] {
            let psi = make_setting::<f64>(&SettingId::SingleSimplex { asym }, 4).unwrap();
            let theta = psi.theta[0].clone();
            let pop = PopulationMoments::new(theta.clone(), psi.alpha.clone(), psi.sigma2[0]).unwrap();
            let fit = fit_spectral_moments(&pop, 3, psi.alpha.sum(), &SpectralConfig::default(), 1).unwrap();
            assert!(d_m(&theta, &fit.theta).unwrap().0 < 1e-6);
            assert!((matched_alpha(&theta, &fit) - &psi.alpha).norm() < 1e-6);
            assert!((fit.sigma2 - psi.sigma2[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn whitened_pairs_is_identity() {
        let psi = make_setting::<f64>(&SettingId::SingleSimplex { asym: true }, 8).unwrap();
        let pop = PopulationMoments::new(psi.theta[0].clone(), psi.alpha.clone(), psi.sigma2[0]).unwrap();
        let pt = build_pairs_triples(&pop, psi.sigma2[0], psi.alpha.sum()).unwrap();
        assert!((&pt.pairs - pt.pairs.transpose()).amax() < 1e-12);
        let (s, u) = sym_eigen_desc(&pt.pairs);
        assert!(s.iter().all(|&v| v > -1e-12));
        let w = DMatrix::from_fn(20, 3, |r, j| u[(r, j)] / s[j].sqrt());
        assert!((w.transpose() * &pt.pairs * w - DMatrix::identity(3, 3)).norm() < 1e-8);
        let fit = fit_spectral_moments(&pop, 3, psi.alpha.sum(), &SpectralConfig::default(), 9).unwrap();
        let tilde = &fit.alpha / psi.alpha.sum();
        assert!(tilde.iter().all(|&a| a > 0.0) && (tilde.sum() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rotation_equivariance() {
        let psi = make_setting::<f64>(&SettingId::SingleSimplex { asym: false }, 5).unwrap();
        let theta = psi.theta[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = DMatrix::from_fn(20, 20, |_, _| rng.random::<f64>() - 0.5).qr().q();
        let pop = PopulationMoments::new(&q * &theta, psi.alpha.clone(), psi.sigma2[0]).unwrap();
        let fit = fit_spectral_moments(&pop, 3, psi.alpha.sum(), &SpectralConfig::default(), 2).unwrap();
        assert!(d_m(&theta, &(q.transpose() * fit.theta)).unwrap().0 < 1e-6);
    }

    #[test]
    fn planar_polytope_is_rank_deficient() {
        let psi = make_setting::<f64>(&SettingId::SinglePolytope { asym: false }, 1).unwrap();
        let pop = PopulationMoments::new(psi.theta[0].clone(), psi.alpha.clone(), psi.sigma2[0]).unwrap();
        let out = fit_spectral_moments(&pop, 4, psi.alpha.sum(), &SpectralConfig::default(), 1);
        assert!(matches!(out, Err(Error::RankDeficient { expected: 4, .. })));
    }

    #[test]
    fn sampled_sigma2_close() {
        let psi = make_setting::<f64>(&SettingId::SingleSimplex { asym: false }, 6).unwrap();
        let data = simulate(&psi, 10_000, 1).unwrap();
        let fit = fit_spectral(&data, 3, psi.alpha.sum(), 3).unwrap();
        assert!((fit.sigma2 / 0.16 - 1.0).abs() < 0.1);
    }
}
