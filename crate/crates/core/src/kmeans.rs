//! Lloyd's k-means with k-means++ seeding, used for initialization and for
//! the vertex-alignment step of the moment estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::linalg::sym_eigen_desc;
use crate::rng;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct KMeans<T: Scalar> {
    /// `k x D` cluster centers.
    pub centers: DMatrix<T>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub inertia: T,
}

fn sq_dist<T: Scalar>(x: &DMatrix<T>, i: usize, c: &DMatrix<T>, j: usize) -> T {
    let mut s = T::zero();
    for col in 0..x.ncols() {
        let d = x[(i, col)] - c[(j, col)];
        s += d * d;
    }
    s
}

fn plus_plus<T: Scalar>(x: &DMatrix<T>, k: usize, rng: &mut rng::Rng) -> DMatrix<T> {
    let n = x.nrows();
    let mut centers = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centers.set_row(0, &x.row(first));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0).f64()).collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if u < b {
                    idx = i;
                    break;
                }
                u -= b;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &x.row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(x, i, &centers, c).f64());
        }
    }
    centers
}

fn lloyd<T: Scalar>(x: &DMatrix<T>, mut centers: DMatrix<T>, max_iter: usize) -> KMeans<T> {
    let (n, k) = (x.nrows(), centers.nrows());
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![T::zero(); n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (mut bj, mut bd) = (0, sq_dist(x, i, &centers, 0));
            for j in 1..k {
                let d = sq_dist(x, i, &centers, j);
                if d < bd {
                    bj = j;
                    bd = d;
                }
            }
            changed |= labels[i] != bj;
            labels[i] = bj;
            dist[i] = bd;
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(k, x.ncols());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += x.row(i);
            counts[labels[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers.set_row(j, &(sums.row(j) / T::of_usize(counts[j])));
            } else {
                // an empty cluster takes over the worst-served point
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
                    .unwrap_or(0);
                centers.set_row(j, &x.row(far));
                dist[far] = T::zero();
            }
        }
    }
    let inertia = dist.iter().fold(T::zero(), |s, &d| s + d);
    KMeans { centers, labels, inertia }
}

/// Best of `restarts` runs by inertia (ties go to the earliest run).
pub fn kmeans<T: Scalar>(
    x: &DMatrix<T>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeans<T>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if x.nrows() < k {
        return Err(Error::InsufficientData { needed: k, got: x.nrows() });
    }
    let mut best: Option<KMeans<T>> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::seeded(rng::restart_seed(seed, r));
        let run = lloyd(x, plus_plus(x, k, &mut rng), max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean and leading `q` principal directions (columns) of the given rows.
pub fn fit_flat<T: Scalar>(x: &DMatrix<T>, rows: &[usize], q: usize) -> (DVector<T>, DMatrix<T>) {
    let dim = x.ncols();
    if rows.is_empty() {
        return (DVector::zeros(dim), DMatrix::zeros(dim, 0));
    }
    let mut c = x.select_rows(rows);
    let mean = c.row_sum().transpose() / T::of_usize(rows.len());
    for mut r in c.row_iter_mut() {
        r -= mean.transpose();
    }
    let q = q.min(rows.len().saturating_sub(1)).min(dim);
    if q == 0 {
        return (mean, DMatrix::zeros(dim, 0));
    }
    let cov = c.transpose() * &c;
    let (_, vecs) = sym_eigen_desc(&cov);
    (mean, vecs.columns(0, q).into_owned())
}

/// Squared distance from `y` to the flat `mean + span(basis)`.
pub fn flat_sq_dist<T: Scalar>(y: &DVector<T>, mean: &DVector<T>, basis: &DMatrix<T>) -> T {
    let v = y - mean;
    let coef = basis.transpose() * &v;
    (v.norm_squared() - coef.norm_squared()).max(T::zero())
}

/// k-flats: alternately fits a `q`-dimensional affine flat to each group and
/// moves every point to its nearest flat. Starts from `labels`; stops when
/// nothing moves or after `iters` sweeps.
pub fn kflats<T: Scalar>(x: &DMatrix<T>, labels: &mut [usize], k: usize, q: usize, iters: usize) {
    let n = x.nrows();
    for _ in 0..iters {
        let flats: Vec<_> = (0..k)
            .map(|g| {
                let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == g).collect();
                (rows.is_empty(), fit_flat(x, &rows, q))
            })
            .collect();
        let mut changed = false;
        for i in 0..n {
            let y = x.row(i).transpose();
            let mut best = (labels[i], T::max_value().unwrap_or(T::of(f64::MAX)));
            for (g, (empty, (m, b))) in flats.iter().enumerate() {
                if *empty {
                    continue;
                }
                let dist = flat_sq_dist(&y, m, b);
                if dist < best.1 {
                    best = (g, dist);
                }
            }
            changed |= best.0 != labels[i];
            labels[i] = best.0;
        }
        if !changed {
            break;
        }
    }
}

/// Grouping by `k` flats, each fitted to the neighbourhood of a random row
/// (its `n / 2k` nearest rows, at least `2q + 2`). Neighbourhoods rarely
/// straddle two groups, which makes this a good seed for intersecting flats
/// where centroid-based seeding mixes the groups.
pub fn local_flat_labels<T: Scalar>(x: &DMatrix<T>, k: usize, q: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut rng = rng::seeded(seed);
    let size = (n / (2 * k)).max(2 * q + 2).min(n);
    let flats: Vec<_> = (0..k)
        .map(|_| {
            let c = rng.random_range(0..n);
            let mut near: Vec<(T, usize)> = (0..n).map(|i| ((x.row(i) - x.row(c)).norm_squared(), i)).collect();
            near.select_nth_unstable_by(size - 1, |a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let rows: Vec<usize> = near[..size].iter().map(|p| p.1).collect();
            fit_flat(x, &rows, q)
        })
        .collect();
    (0..n)
        .map(|i| {
            let y = x.row(i).transpose();
            let mut best = (0, flat_sq_dist(&y, &flats[0].0, &flats[0].1));
            for (g, (m, b)) in flats.iter().enumerate().skip(1) {
                let dist = flat_sq_dist(&y, m, b);
                if dist < best.1 {
                    best = (g, dist);
                }
            }
            best.0
        })
        .collect()
}

/// Negative profile log-likelihood of a grouping under isotropic Gaussian
/// scatter about each group's flat, ignoring the in-flat spread:
/// `sum_g n_g ((D - q) / 2 ln s_g - ln(n_g / n))` with `s_g` the mean
/// squared off-flat residual per coordinate. Unlike the raw residual it
/// does not favour absorbing the points of a noisy group.
pub fn kflats_objective<T: Scalar>(x: &DMatrix<T>, labels: &[usize], k: usize, q: usize) -> f64 {
    let (n, dim) = x.shape();
    let off = dim.saturating_sub(q).max(1) as f64;
    let mut total = 0.0;
    for g in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == g).collect();
        if rows.is_empty() {
            continue;
        }
        let (m, b) = fit_flat(x, &rows, q);
        let rss: f64 = rows.iter().map(|&i| flat_sq_dist(&x.row(i).transpose(), &m, &b).f64()).sum();
        let ng = rows.len() as f64;
        let s = (rss / (ng * off)).max(1e-300);
        total += ng * (0.5 * off * s.ln() - (ng / n as f64).ln());
    }
    total
}
