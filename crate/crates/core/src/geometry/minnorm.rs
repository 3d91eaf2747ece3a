//! Minimum-norm point of a convex hull (Wolfe's active-set method).

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

const MAX_ITER: usize = 500;

/// Affine minimizer of `|| sum_i mu_i q_i ||` subject to `sum_i mu_i = 1`
/// over the columns of `q`. Uses a pseudo-inverse so affinely dependent
/// columns do not break the solve.
fn affine_minimizer<T: Scalar>(q: &DMatrix<T>) -> DVector<T> {
    let s = q.ncols();
    if s == 1 {
        return DVector::from_element(1, T::one());
    }
    let q0 = q.column(0).into_owned();
    let mut b = DMatrix::zeros(q.nrows(), s - 1);
    for i in 1..s {
        b.set_column(i - 1, &(q.column(i) - &q0));
    }
    let svd = b.svd(true, true);
    let smax = svd.singular_values.max();
    let cut = smax * T::of(1e-12);
    let rhs = -q0;
    let coef = svd
        .solve(&rhs, cut)
        .unwrap_or_else(|_| DVector::zeros(s - 1));
    let mut mu = DVector::zeros(s);
    mu[0] = T::one() - coef.sum();
    for i in 1..s {
        mu[i] = coef[i - 1];
    }
    mu
}

/// Point of `conv(columns of points)` closest to `target`.
///
/// Returns the distance and the convex weights (one per column).
pub fn project_onto_hull<T: Scalar>(points: &DMatrix<T>, target: &DVector<T>) -> (T, DVector<T>) {
    let m = points.ncols();
    assert!(m > 0, "hull needs at least one point");
    let mut q = points.clone();
    for mut c in q.column_iter_mut() {
        c -= target;
    }
    let norms: Vec<T> = q.column_iter().map(|c| c.norm_squared()).collect();
    let scale = norms.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if scale == T::zero() {
        let mut lam = DVector::zeros(m);
        lam[0] = T::one();
        return (T::zero(), lam);
    }
    let first = (0..m)
        .min_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let mut active = vec![first];
    let mut lam = vec![T::one()];
    let mut x = q.column(first).into_owned();
    let gap_tol = scale * T::eps() * T::of(4.0);
    let tiny = T::eps() * T::of(16.0);

    for _ in 0..MAX_ITER {
        let xx = x.norm_squared();
        if xx <= T::zero() {
            break;
        }
        let (j, best) = (0..m)
            .map(|i| (i, x.dot(&q.column(i))))
            .fold((0, T::max_value().unwrap()), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if xx - best <= gap_tol || active.contains(&j) {
            break;
        }
        active.push(j);
        lam.push(T::zero());

        loop {
            let qs = q.select_columns(&active);
            let mu = affine_minimizer(&qs);
            if mu.iter().all(|&v| v > tiny) {
                lam = mu.iter().copied().collect();
                x = &qs * &mu;
                break;
            }
            let mut theta = T::one();
            for (i, &mi) in mu.iter().enumerate() {
                if mi <= tiny {
                    let denom = lam[i] - mi;
                    if denom > T::zero() {
                        theta = theta.min(lam[i] / denom);
                    }
                }
            }
            for (i, l) in lam.iter_mut().enumerate() {
                *l = (T::one() - theta) * *l + theta * mu[i];
            }
            // drop at least the most negative coordinate
            let worst = (0..lam.len())
                .min_by(|&a, &b| lam[a].partial_cmp(&lam[b]).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap();
            let mut keep_active = Vec::with_capacity(active.len());
            let mut keep_lam = Vec::with_capacity(active.len());
            for i in 0..active.len() {
                if i != worst && lam[i] > tiny {
                    keep_active.push(active[i]);
                    keep_lam.push(lam[i]);
                }
            }
            if keep_active.is_empty() {
                keep_active.push(active[(worst + 1) % active.len()]);
                keep_lam.push(T::one());
            }
            let total: T = keep_lam.iter().copied().fold(T::zero(), |a, b| a + b);
            for l in keep_lam.iter_mut() {
                *l /= total;
            }
            active = keep_active;
            lam = keep_lam;
            let qs = q.select_columns(&active);
            x = &qs * DVector::from_vec(lam.clone());
            if active.len() == 1 {
                break;
            }
        }
    }

    let mut weights = DVector::zeros(m);
    for (i, &a) in active.iter().enumerate() {
        weights[a] += lam[i];
    }
    (x.norm(), weights)
}
