//! EM for the atom-discretized model: a `K*M`-component Gaussian mixture whose
//! component `(k, j)` has mean `Theta_k beta_j`, variance `sigma2_k I` and
//! weight `pi_k nu_j`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::kmeans::{fit_flat, flat_sq_dist, kflats, kflats_objective, kmeans, local_flat_labels};
use crate::linalg::{pairwise_sum, softmax_rows};
use crate::model::DensityTerms;
use crate::rng::{self, Rng};
use crate::{Dataset, Error, LatentAtoms, MixtureParams, Result, Scalar};

const ROW_BLOCK: usize = 256;
/// Components whose total responsibility falls below this are frozen.
pub const DYING_MASS: f64 = 1e-12;

/// How the fixed simplex atoms are drawn and weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtomScheme {
    /// Flat-Dirichlet draws with equal weights.
    Uniform,
    /// Flat-Dirichlet draws weighted by the `Dir(alpha)` density.
    DensityWeighted,
    /// `Dir(alpha)` draws with equal weights.
    Prior,
}

impl std::str::FromStr for AtomScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "density-weighted" => Ok(Self::DensityWeighted),
            "prior" => Ok(Self::Prior),
            _ => Err(Error::InvalidParameter(format!("unknown atom scheme '{s}'"))),
        }
    }
}

/// Builds `m` atoms for a fit. Weighted schemes need `alpha`.
pub fn make_atoms<T: Scalar>(
    scheme: AtomScheme,
    d: usize,
    alpha: Option<&DVector<T>>,
    m: usize,
    seed: u64,
) -> Result<LatentAtoms<T>> {
    let need = || {
        alpha.ok_or_else(|| Error::InvalidParameter("this atom scheme needs alpha".into()))
    };
    match scheme {
        AtomScheme::Uniform => LatentAtoms::sample_flat(d, m, seed),
        AtomScheme::DensityWeighted => LatentAtoms::sample_flat_weighted(need()?, m, seed),
        AtomScheme::Prior => LatentAtoms::sample(need()?, m, seed),
    }
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    /// Atoms per component.
    pub m: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
    pub sigma2_floor: f64,
    /// Gram ridge, relative to `trace(Gram) / d`.
    pub ridge: f64,
    pub atoms: AtomScheme,
    /// Known Dirichlet concentration, if any; copied into the estimate.
    pub alpha: Option<DVector<f64>>,
    /// Initial vertices sit at `center + spread * (member - center)`.
    pub init_spread: f64,
    /// k-flats sweeps refining the initial grouping.
    pub flat_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            m: 200,
            restarts: 10,
            max_iter: 500,
            tol: 1e-6,
            sigma2_floor: 1e-8,
            ridge: 1e-8,
            atoms: AtomScheme::Uniform,
            alpha: None,
            init_spread: 1.0,
            flat_iters: 30,
        }
    }
}

/// Outcome of an iterative fit.
#[derive(Debug, Clone)]
pub struct FitResult<T: Scalar> {
    pub psi_hat: MixtureParams<T>,
    /// Objective after each iteration (nondecreasing for EM).
    pub objective_trace: Vec<f64>,
    /// Plug-in evidence value after each M-step.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    pub seed: u64,
    /// Seconds.
    pub wall_time: f64,
    /// Final objective of the chosen restart.
    pub loglik: f64,
    /// Components frozen for lack of responsibility.
    pub dying: Vec<bool>,
    /// Some Gram matrix was singular and the ridge decided the solution.
    pub under_identified: bool,
}

/// Responsibilities (`n x K*M`, column `k*M + j`) and the log-likelihood.
pub fn e_step_ll<T: Scalar>(
    x: &DMatrix<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<(DMatrix<T>, T)> {
    let terms = DensityTerms::new(psi, atoms)?;
    let n = x.nrows();
    let blocks: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let parts: Vec<Result<(DMatrix<T>, Vec<T>)>> = blocks
        .par_iter()
        .map(|&s| {
            let len = ROW_BLOCK.min(n - s);
            let mut t = terms.eval(&x.rows(s, len).into_owned())?;
            let lls = softmax_rows(&mut t);
            Ok((t, lls))
        })
        .collect();
    let mut w = DMatrix::zeros(n, terms.n_cols());
    let mut lls = Vec::with_capacity(n);
    for (&s, p) in blocks.iter().zip(parts) {
        let (t, l) = p?;
        w.rows_mut(s, t.nrows()).copy_from(&t);
        lls.extend(l);
    }
    Ok((w, pairwise_sum(&lls)))
}

/// Responsibilities `w_{i,(k,j)} ∝ pi_k nu_j phi(x_i | Theta_k beta_j, sigma2_k I)`.
pub fn e_step<T: Scalar>(
    data: &Dataset<T>,
    psi: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
) -> Result<DMatrix<T>> {
    Ok(e_step_ll(&data.x, psi, atoms)?.0)
}

#[derive(Debug, Clone, Copy)]
pub struct Floors {
    pub sigma2: f64,
    pub ridge: f64,
}

impl Default for Floors {
    fn default() -> Self {
        Self { sigma2: 1e-8, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct MStep<T: Scalar> {
    pub psi: MixtureParams<T>,
    pub dying: Vec<bool>,
    pub under_identified: bool,
}

/// Closed-form maximizer of the expected complete log-likelihood. Components
/// with less than [`DYING_MASS`] responsibility keep `prev`'s vertices and
/// variance.
pub fn m_step<T: Scalar>(
    x: &DMatrix<T>,
    w: &DMatrix<T>,
    atoms: &LatentAtoms<T>,
    floors: &Floors,
    prev: &MixtureParams<T>,
) -> Result<MStep<T>> {
    let (n, dim) = x.shape();
    let (m, d, k) = (atoms.m(), atoms.d(), prev.k());
    if w.shape() != (n, k * m) {
        return Err(Error::Shape(format!("weights must be {n} x {}", k * m)));
    }
    let b = &atoms.betas;
    let xsq = DVector::from_iterator(n, x.row_iter().map(|r| r.norm_squared()));
    let mut psi = prev.clone();
    let mut dying = vec![false; k];
    let mut under = false;
    let mut mass = vec![T::zero(); k];
    for kk in 0..k {
        let wk = w.columns(kk * m, m);
        let r: Vec<T> = wk.column_iter().map(|c| pairwise_sum(c.as_slice())).collect();
        let tot = pairwise_sum(&r);
        mass[kk] = tot;
        if tot.f64() < DYING_MASS {
            dying[kk] = true;
            continue;
        }
        let xw = x.transpose() * wk; // D x M
        let s = &xw * b; // D x d
        let mut g = DMatrix::zeros(d, d);
        for j in 0..m {
            let bj = b.row(j);
            g += bj.transpose() * bj * r[j];
        }
        let scale = g.trace() / T::of_usize(d);
        let lam = T::of(floors.ridge) * if scale > T::zero() { scale } else { T::one() };
        let min_eig = g.clone().symmetric_eigenvalues().min();
        if min_eig <= lam {
            under = true;
        }
        for i in 0..d {
            g[(i, i)] += lam;
        }
        let theta = match g.clone().cholesky() {
            Some(ch) => ch.solve(&s.transpose()).transpose(),
            None => {
                let inv = g.pseudo_inverse(T::eps()).map_err(|e| Error::Degenerate(e.into()))?;
                s * inv
            }
        };
        let means = &theta * b.transpose(); // D x M
        let t1 = (xsq.transpose() * wk).sum();
        let t2 = xw.component_mul(&means).sum();
        let t3 = (0..m).fold(T::zero(), |acc, j| acc + means.column(j).norm_squared() * r[j]);
        let resid = t1 - T::of(2.0) * t2 + t3;
        let s2 = resid / (T::of_usize(dim) * tot);
        psi.theta[kk] = theta;
        psi.sigma2[kk] = s2.max(T::of(floors.sigma2));
    }
    let total = pairwise_sum(&mass);
    for kk in 0..k {
        psi.pi[kk] = mass[kk] / total;
    }
    Ok(MStep { psi, dying, under_identified: under })
}

/// Plug-in evidence value after an M-step:
/// `sum_k w_k log w_k - sum_k w_k log n - (D/2) sum_k w_k log(2 pi sigma2_k) - n D / 2`
/// where `w_k` is the total responsibility of component `k`.
pub fn elbo<T: Scalar>(w: &DMatrix<T>, sigma2: &DVector<T>, n: usize, dim: usize) -> f64 {
    let k = sigma2.len();
    let m = if k == 0 { 0 } else { w.ncols() / k };
    let mut acc = Vec::with_capacity(k);
    for kk in 0..k {
        let wk: f64 = pairwise_sum(&w.columns(kk * m, m).iter().map(|v| v.f64()).collect::<Vec<_>>());
        let s2 = sigma2[kk].f64();
        let xlogx = if wk > 0.0 { wk * wk.ln() } else { 0.0 };
        acc.push(xlogx - wk * (n as f64).ln() - 0.5 * dim as f64 * wk * (std::f64::consts::TAU * s2).ln());
    }
    pairwise_sum(&acc) - 0.5 * (n * dim) as f64
}

fn centered<T: Scalar>(x: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = x.nrows().max(1);
    let mean = x.row_sum().transpose() / T::of_usize(n);
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= mean.transpose();
    }
    (mean, c)
}

/// Candidate groupings tried per initialisation; one in four starts from
/// k-means++, the rest from local flats.
pub const INIT_CANDIDATES: usize = 16;

/// Best of [`INIT_CANDIDATES`] groupings, each refined by `flat_iters`
/// k-flats sweeps with `q`-dimensional flats and scored by
/// [`kflats_objective`].
pub(crate) fn initial_labels<T: Scalar>(
    x: &DMatrix<T>,
    k: usize,
    q: usize,
    flat_iters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for c in 0..INIT_CANDIDATES {
        let cs = rng::restart_seed(rng::derive(seed, "init/candidates"), c);
        let mut labels = if c % 4 == 0 { kmeans(x, k, 1, 20, cs)?.labels } else { local_flat_labels(x, k, q, cs) };
        kflats(x, &mut labels, k, q, flat_iters);
        let obj = kflats_objective(x, &labels, k, q);
        if best.as_ref().map_or(true, |b| obj < b.0) {
            best = Some((obj, labels));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

/// k-means++ grouping refined by `flat_iters` sweeps of k-flats; each
/// group seeds one component with vertices at well-spread members (farthest
/// point traversal from a random member) pulled toward the group mean.
pub(crate) fn init_from_groups<T: Scalar>(
    x: &DMatrix<T>,
    k: usize,
    d: usize,
    spread: f64,
    flat_iters: usize,
    alpha: &DVector<T>,
    seed: u64,
) -> Result<MixtureParams<T>> {
    use rand::Rng as _;
    let (n, dim) = x.shape();
    let q = (d - 1).min(dim);
    let labels = initial_labels(x, k, q, flat_iters, seed)?;
    let mut rng: Rng = rng::seeded(rng::derive(seed, "init/vertices"));
    let total_var = {
        let (_, c) = centered(x);
        c.norm_squared() / T::of_usize(n * dim)
    };
    let mut theta = Vec::with_capacity(k);
    let mut pi = DVector::zeros(k);
    let mut sigma2 = DVector::zeros(k);
    for g in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == g).collect();
        let (center, basis) = fit_flat(x, &members, q);
        let mut t = DMatrix::zeros(dim, d);
        if members.is_empty() {
            let p = x.row(rng.random_range(0..n)).transpose();
            for j in 0..d {
                t.set_column(j, &p);
            }
        } else {
            let mut picked = vec![members[rng.random_range(0..members.len())]];
            let mut near: Vec<T> = members
                .iter()
                .map(|&i| (x.row(i) - x.row(picked[0])).norm_squared())
                .collect();
            while picked.len() < d {
                let (arg, _) = near
                    .iter()
                    .enumerate()
                    .fold((0, T::zero() - T::one()), |b, (a, &v)| if v > b.1 { (a, v) } else { b });
                let p = members[arg];
                picked.push(p);
                for (v, &i) in near.iter_mut().zip(&members) {
                    *v = v.min((x.row(i) - x.row(p)).norm_squared());
                }
            }
            for (j, &p) in picked.iter().enumerate() {
                let col = &center + (x.row(p).transpose() - &center) * T::of(spread);
                t.set_column(j, &col);
            }
        }
        theta.push(t);
        pi[g] = T::of_usize(members.len().max(1));
        let off = dim.saturating_sub(basis.ncols()).max(1);
        let var = if members.len() > q + 1 {
            members
                .iter()
                .map(|&i| flat_sq_dist(&x.row(i).transpose(), &center, &basis))
                .fold(T::zero(), |a, b| a + b)
                / T::of_usize(members.len() * off)
        } else {
            total_var
        };
        let floor = total_var * T::of(1e-6);
        sigma2[g] = if var > floor { var } else if floor > T::zero() { floor } else { T::one() };
    }
    let s = pi.sum();
    pi /= s;
    Ok(MixtureParams { theta, pi, sigma2, alpha: alpha.clone() })
}

struct Run<T: Scalar> {
    psi: MixtureParams<T>,
    trace: Vec<f64>,
    elbo_trace: Vec<f64>,
    converged: bool,
    dying: Vec<bool>,
    under: bool,
}

/// Runs EM from `psi0` on centered data until the relative objective change
/// drops below `tol` or `max_iter` M-steps have been taken.
fn run_em<T: Scalar>(
    x: &DMatrix<T>,
    psi0: MixtureParams<T>,
    atoms: &LatentAtoms<T>,
    cfg: &EmConfig,
) -> Result<Run<T>> {
    let floors = Floors { sigma2: cfg.sigma2_floor, ridge: cfg.ridge };
    let (n, dim) = x.shape();
    let (mut w, ll) = e_step_ll(x, &psi0, atoms)?;
    let mut psi = psi0;
    let mut trace = vec![ll.f64()];
    let mut elbo_trace = Vec::new();
    let mut converged = false;
    let mut dying = vec![false; psi.k()];
    let mut under = false;
    for _ in 0..cfg.max_iter {
        let step = m_step(x, &w, atoms, &floors, &psi)?;
        elbo_trace.push(elbo(&w, &step.psi.sigma2, n, dim));
        psi = step.psi;
        for (a, b) in dying.iter_mut().zip(&step.dying) {
            *a |= *b;
        }
        under |= step.under_identified;
        let (w2, ll) = e_step_ll(x, &psi, atoms)?;
        w = w2;
        let (prev, cur) = (*trace.last().unwrap(), ll.f64());
        trace.push(cur);
        if (cur - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(Run { psi, trace, elbo_trace, converged, dying, under })
}

fn check_fit_inputs<T: Scalar>(data: &Dataset<T>, k: usize, d: usize) -> Result<()> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter("K and d must be positive".into()));
    }
    if data.n() < k {
        return Err(Error::InsufficientData { needed: k, got: data.n() });
    }
    Ok(())
}

/// Multi-start EM. Restart `r` uses [`rng::restart_seed`]`(seed, r)`; atoms
/// are drawn once from the fit seed and shared by all restarts. The restart
/// with the highest final objective wins (ties go to the lower index).
pub fn fit_em<T: Scalar>(
    data: &Dataset<T>,
    k: usize,
    d: usize,
    cfg: &EmConfig,
    seed: u64,
) -> Result<FitResult<T>> {
    check_fit_inputs(data, k, d)?;
    let start = Instant::now();
    let alpha: Option<DVector<T>> = cfg.alpha.as_ref().map(|a| a.map(T::of));
    if let Some(a) = &alpha {
        if a.len() != d {
            return Err(Error::Shape(format!("alpha must have length d={d}")));
        }
    }
    let atoms = make_atoms(cfg.atoms, d, alpha.as_ref(), cfg.m, rng::derive(seed, "em/atoms"))?;
    let alpha = alpha.unwrap_or_else(|| DVector::from_element(d, T::one()));
    let (mean, xc) = centered(&data.x);
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Result<Run<T>>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let psi0 = init_from_groups(&xc, k, d, cfg.init_spread, cfg.flat_iters, &alpha, rng::restart_seed(seed, r))?;
            run_em(&xc, psi0, &atoms, cfg)
        })
        .collect();
    let mut best: Option<Run<T>> = None;
    for run in runs {
        let run = run?;
        let better = match &best {
            None => true,
            Some(b) => run.trace.last() > b.trace.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let mut run = best.expect("restarts >= 1");
    for t in run.psi.theta.iter_mut() {
        for mut c in t.column_iter_mut() {
            c += &mean;
        }
    }
    let loglik = *run.trace.last().unwrap();
    Ok(FitResult {
        psi_hat: run.psi,
        iterations: run.trace.len() - 1,
        objective_trace: run.trace,
        elbo_trace: run.elbo_trace,
        converged: run.converged,
        restarts_used: restarts,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
        loglik,
        dying: run.dying,
        under_identified: run.under,
    })
}

/// Single EM run from a caller-supplied start (uncentered coordinates).
pub fn fit_em_from<T: Scalar>(
    data: &Dataset<T>,
    psi0: &MixtureParams<T>,
    atoms: &LatentAtoms<T>,
    cfg: &EmConfig,
) -> Result<FitResult<T>> {
    psi0.validate()?;
    check_fit_inputs(data, psi0.k(), psi0.d())?;
    let start = Instant::now();
    let run = run_em(&data.x, psi0.clone(), atoms, cfg)?;
    let loglik = *run.trace.last().unwrap();
    Ok(FitResult {
        psi_hat: run.psi,
        iterations: run.trace.len() - 1,
        objective_trace: run.trace,
        elbo_trace: run.elbo_trace,
        converged: run.converged,
        restarts_used: 1,
        seed: 0,
        wall_time: start.elapsed().as_secs_f64(),
        loglik,
        dying: run.dying,
        under_identified: run.under,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{make_setting, simulate, SettingId};
    use nalgebra::dvector;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, k: usize, d: usize, dim: usize) -> (DMatrix<f64>, MixtureParams<f64>, LatentAtoms<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>() * 3.0);
        let theta = (0..k).map(|_| DMatrix::from_fn(dim, d, |_, _| rng.random::<f64>() * 3.0)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.2).collect();
        let s: f64 = raw.iter().sum();
        let psi = MixtureParams::new(
            theta,
            DVector::from_iterator(k, raw.iter().map(|v| v / s)),
            DVector::from_fn(k, |_, _| 0.2 + rng.random::<f64>()),
            DVector::from_element(d, 1.0),
        )
        .unwrap();
        let atoms = LatentAtoms::sample_flat_weighted(&dvector_of(d, 0.7), 7, seed).unwrap();
        (x, psi, atoms)
    }

    fn dvector_of(d: usize, v: f64) -> DVector<f64> {
        DVector::from_element(d, v)
    }

    #[test]
    fn e_step_matches_direct_formula() {
        let (x, psi, atoms) = random_instance(1, 12, 2, 3, 4);
        let (w, ll) = e_step_ll(&x, &psi, &atoms).unwrap();
        let m = atoms.m();
        let mut ll_direct = 0.0;
        for i in 0..x.nrows() {
            let mut raw = vec![0.0; 2 * m];
            for k in 0..2 {
                for j in 0..m {
                    let mu = &psi.theta[k] * atoms.betas.row(j).transpose();
                    let sq = (x.row(i).transpose() - mu).norm_squared();
                    let s2 = psi.sigma2[k];
                    raw[k * m + j] = psi.pi[k] * atoms.weights[j]
                        * (2.0 * std::f64::consts::PI * s2).powf(-2.0)
                        * (-sq / (2.0 * s2)).exp();
                }
            }
            let tot: f64 = raw.iter().sum();
            ll_direct += tot.ln();
            for c in 0..2 * m {
                assert!((w[(i, c)] - raw[c] / tot).abs() < 1e-10);
            }
        }
        assert!((ll - ll_direct).abs() < 1e-9);
    }

    #[test]
    fn e_step_trivial_cases() {
        let x = DMatrix::<f64>::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, -1.0, 0.5]);
        let one = MixtureParams::new(vec![DMatrix::zeros(2, 1)], dvector![1.0], dvector![1.0], dvector![1.0]).unwrap();
        let atoms = LatentAtoms::uniform(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(e_step(&Dataset::new(x.clone()), &one, &atoms).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let (_, mut twin, atoms) = random_instance(2, 1, 2, 2, 2);
        twin.theta[1] = twin.theta[0].clone();
        twin.sigma2[1] = twin.sigma2[0];
        twin.pi = dvector![0.5, 0.5];
        let w = e_step(&Dataset::new(x), &twin, &atoms).unwrap();
        let m = atoms.m();
        for i in 0..3 {
            for j in 0..m {
                assert!((w[(i, j)] - w[(i, m + j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn m_step_hand_solution() {
        // K=1, M=2, d=2, all weights 1: Theta solves Theta G = S by hand
        let x = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -1.0]);
        let atoms = LatentAtoms::uniform(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7])).unwrap();
        let w = DMatrix::from_element(2, 2, 0.5);
        let prev = MixtureParams::new(vec![DMatrix::zeros(2, 2)], dvector![1.0], dvector![1.0], dvector![1.0, 1.0]).unwrap();
        let floors = Floors { sigma2: 1e-8, ridge: 0.0 };
        let out = m_step(&x, &w, &atoms, &floors, &prev).unwrap();
        // S = sum_i sum_j w x_i b_j^T = 0.5 * (x1 + x2)(b1 + b2)^T
        let xs = dvector![4.0, 1.0];
        let bs = dvector![1.1, 0.9];
        let s = &xs * bs.transpose() * 0.5;
        let b1 = dvector![0.8, 0.2];
        let b2 = dvector![0.3, 0.7];
        let g = (&b1 * b1.transpose() + &b2 * b2.transpose()) * 1.0;
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let ginv = DMatrix::from_row_slice(2, 2, &[g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]]) / det;
        let want = s * ginv;
        assert!((&out.psi.theta[0] - &want).norm() < 1e-12);
        let mut resid = 0.0;
        for i in 0..2 {
            for b in [&b1, &b2] {
                resid += 0.5 * (x.row(i).transpose() - &want * b).norm_squared();
            }
        }
        assert!((out.psi.sigma2[0] - resid / 4.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_single_atom_and_floor() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 0.0, 3.0, 2.0]);
        let atoms = LatentAtoms::uniform(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let w = DMatrix::from_element(3, 1, 1.0);
        let prev = MixtureParams::new(vec![DMatrix::zeros(2, 2)], dvector![1.0], dvector![1.0], dvector![1.0, 1.0]).unwrap();
        let out = m_step(&x, &w, &atoms, &Floors::default(), &prev).unwrap();
        assert!(out.under_identified);
        assert!((out.psi.theta[0].column(0) - dvector![2.0, 1.0]).norm() < 1e-6);
        // noiseless data sitting on the atom mean
        let x0 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 2.0, 1.0]);
        let out = m_step(&x0, &DMatrix::from_element(2, 1, 1.0), &atoms, &Floors::default(), &prev).unwrap();
        assert_eq!(out.psi.sigma2[0], 1e-8);
    }

    #[test]
    fn dying_component_is_held() {
        let (x, psi, atoms) = random_instance(3, 10, 2, 2, 2);
        let m = atoms.m();
        let mut w = DMatrix::zeros(10, 2 * m);
        for i in 0..10 {
            w[(i, i % m)] = 1.0;
        }
        let out = m_step(&x, &w, &atoms, &Floors::default(), &psi).unwrap();
        assert_eq!(out.dying, vec![false, true]);
        assert_eq!(out.psi.theta[1], psi.theta[1]);
        assert_eq!(out.psi.pi[0], 1.0);
        assert!(out.psi.validate().is_err() || out.psi.pi[1] == 0.0);
    }

    #[test]
    fn elbo_values() {
        let w = DMatrix::from_element(1, 1, 1.0);
        let s2 = dvector![1.0 / (2.0 * std::f64::consts::PI)];
        assert!((elbo(&w, &s2, 1, 3) + 1.5).abs() < 1e-12);
        let (x, psi, atoms) = random_instance(4, 20, 2, 2, 3);
        let (w, _) = e_step_ll(&x, &psi, &atoms).unwrap();
        let c = 1.7;
        let base = elbo(&w, &psi.sigma2, 20, 3);
        let scaled = elbo(&w, &(psi.sigma2.clone() * c), 20, 3);
        assert!((scaled - base + 0.5 * 20.0 * 3.0 * c.ln()).abs() < 1e-9);
        // direct plug-in of the expected complete log-likelihood at the M-step optimum
        let out = m_step(&x, &w, &atoms, &Floors { sigma2: 0.0, ridge: 0.0 }, &psi).unwrap();
        let p = &out.psi;
        let m = atoms.m();
        let mut q = 0.0;
        for i in 0..20 {
            for k in 0..2 {
                for j in 0..m {
                    let mu = &p.theta[k] * atoms.betas.row(j).transpose();
                    let sq = (x.row(i).transpose() - mu).norm_squared();
                    q += w[(i, k * m + j)]
                        * (p.pi[k].ln() - 1.5 * (2.0 * std::f64::consts::PI * p.sigma2[k]).ln()
                            - sq / (2.0 * p.sigma2[k]));
                }
            }
        }
        assert!((elbo(&w, &p.sigma2, 20, 3) - q).abs() < 1e-8);
    }

    #[test]
    fn objective_nondecreasing() {
        let psi = make_setting::<f64>(&SettingId::One, 0).unwrap();
        let data = simulate(&psi, 300, 2).unwrap();
        let cfg = EmConfig { m: 50, restarts: 2, ..Default::default() };
        let fit = fit_em(&data, 3, 2, &cfg, 5).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert!((fit.psi_hat.pi.sum() - 1.0).abs() < 1e-12);
        assert!(fit.psi_hat.sigma2.iter().all(|&s| s >= 1e-8));
        assert_eq!(fit.restarts_used, 2);
    }

    #[test]
    fn single_gaussian_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(200, 3, |_, j| rng.random::<f64>() * (j + 1) as f64);
        let fit = fit_em(&Dataset::new(x.clone()), 1, 1, &EmConfig { m: 5, ..Default::default() }, 1).unwrap();
        let mean = x.row_sum().transpose() / 200.0;
        assert!((fit.psi_hat.theta[0].column(0) - &mean).norm() < 1e-6);
        let var: f64 = x.row_iter().map(|r| (r.transpose() - &mean).norm_squared()).sum::<f64>() / 600.0;
        assert!((fit.psi_hat.sigma2[0] - var).abs() < 1e-6);
    }

    #[test]
    fn deterministic_and_rejects_small_n() {
        let psi = make_setting::<f64>(&SettingId::One, 0).unwrap();
        let data = simulate(&psi, 120, 3).unwrap();
        let cfg = EmConfig { m: 20, restarts: 2, max_iter: 50, ..Default::default() };
        let a = fit_em(&data, 3, 2, &cfg, 9).unwrap();
        let b = fit_em(&data, 3, 2, &cfg, 9).unwrap();
        assert_eq!(a.psi_hat, b.psi_hat);
        assert_eq!(a.objective_trace, b.objective_trace);
        let tiny = data.select_rows(&[0, 1]);
        assert!(matches!(fit_em(&tiny, 3, 2, &cfg, 9), Err(Error::InsufficientData { .. })));
    }
}
