//! Small dense linear-algebra and reduction helpers.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// `log(sum(exp(v)))` with a running maximum. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let mut max = T::of(f64::NEG_INFINITY);
    for &x in v {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut acc = T::zero();
    for &x in v {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

/// Below this a shifted log term contributes exactly zero in double
/// precision, so its `exp` is skipped.
const EXP_UNDERFLOW: f64 = -745.2;

#[inline]
fn shifted_exp<T: Scalar>(v: T, m: T, cut: T) -> T {
    let z = v - m;
    if z < cut {
        T::zero()
    } else {
        z.exp()
    }
}

fn row_max<T: Scalar>(t: &DMatrix<T>) -> Vec<T> {
    let mut max = vec![T::of(f64::NEG_INFINITY); t.nrows()];
    for col in t.column_iter() {
        for (m, &v) in max.iter_mut().zip(col.iter()) {
            if v > *m {
                *m = v;
            }
        }
    }
    max
}

/// [`log_sum_exp`] of every row, walking the matrix in storage order.
pub fn row_log_sum_exp<T: Scalar>(t: &DMatrix<T>) -> Vec<T> {
    let max = row_max(t);
    let cut = T::of(EXP_UNDERFLOW);
    let mut acc = vec![T::zero(); t.nrows()];
    for col in t.column_iter() {
        for ((a, &m), &v) in acc.iter_mut().zip(&max).zip(col.iter()) {
            *a += shifted_exp(v, m, cut);
        }
    }
    max.iter().zip(&acc).map(|(&m, &a)| if m.is_finite() { m + a.ln() } else { m }).collect()
}

/// Replaces each row by its softmax and returns the row log-normalizers.
pub fn softmax_rows<T: Scalar>(t: &mut DMatrix<T>) -> Vec<T> {
    let max = row_max(t);
    let cut = T::of(EXP_UNDERFLOW);
    let mut acc = vec![T::zero(); t.nrows()];
    for mut col in t.column_iter_mut() {
        for ((a, &m), v) in acc.iter_mut().zip(&max).zip(col.iter_mut()) {
            *v = shifted_exp(*v, m, cut);
            *a += *v;
        }
    }
    let inv: Vec<T> = acc.iter().map(|&a| T::one() / a).collect();
    for mut col in t.column_iter_mut() {
        for (v, &r) in col.iter_mut().zip(&inv) {
            *v *= r;
        }
    }
    max.iter().zip(&acc).map(|(&m, &a)| if m.is_finite() { m + a.ln() } else { m }).collect()
}

/// Pairwise (tree) summation. The result depends only on the order of `v`,
/// never on how the values were produced.
pub fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        let mut s = T::zero();
        for &x in v {
            s += x;
        }
        s
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Ties keep the solver's original ordering (lowest index first).
pub fn sym_eigen_desc<T: Scalar>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let sym = (m + m.transpose()) * T::of(0.5);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Isotropic Gaussian log-density from a squared distance.
#[inline]
pub fn iso_gauss_logpdf<T: Scalar>(sq_dist: T, dim: usize, sigma2: T) -> T {
    -(T::of_usize(dim) * T::of(0.5)) * (T::two_pi() * sigma2).ln() - sq_dist / (sigma2 + sigma2)
}

/// Full-covariance Gaussian evaluated through a Cholesky factor.
pub struct GaussianChol<T: Scalar> {
    mean: DVector<T>,
    lower: DMatrix<T>,
    log_norm: T,
}

impl<T: Scalar> GaussianChol<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Option<Self> {
        let dim = mean.len();
        let lower = cov.cholesky()?.unpack();
        let l = &lower;
        let mut log_det = T::zero();
        for i in 0..dim {
            log_det += l[(i, i)].ln();
        }
        log_det += log_det;
        let log_norm = -(T::of_usize(dim) * T::two_pi().ln() + log_det) * T::of(0.5);
        Some(Self { mean, lower, log_norm })
    }

    /// Log-densities of every row of `x`.
    pub fn logpdf_rows(&self, x: &DMatrix<T>) -> Vec<T> {
        let mut centered = x.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let z = self
            .lower
            .solve_lower_triangular(&centered)
            .expect("cholesky factor has a nonzero diagonal");
        z.column_iter()
            .map(|c| self.log_norm - c.norm_squared() * T::of(0.5))
            .collect()
    }
}

/// Orthogonal factor `U V^T` of the polar decomposition of a square matrix.
pub fn polar<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    u * v_t
}

/// Closest orthogonal matrix `O` minimizing `||a O - b||_F`.
pub fn orthogonal_procrustes<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    polar(a.transpose() * b)
}

/// Sample mean (as a column vector) and the `1/n` covariance of the rows of `x`,
/// each row weighted by `w` (weights need not be normalized).
pub fn weighted_mean_cov<T: Scalar>(x: &DMatrix<T>, w: &[T]) -> (DVector<T>, DMatrix<T>) {
    let dim = x.ncols();
    let total = pairwise_sum(w);
    let mut mean = DVector::zeros(dim);
    for (i, row) in x.row_iter().enumerate() {
        mean += row.transpose() * w[i];
    }
    mean /= total;
    let mut centered = x.clone();
    for (i, mut row) in centered.row_iter_mut().enumerate() {
        row -= mean.transpose();
        row *= w[i].sqrt();
    }
    let cov = centered.transpose() * centered / total;
    (mean, cov)
}
