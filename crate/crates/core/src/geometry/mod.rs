//! Convex-polytope predicates behind identifiability: affine dimension,
//! extreme points, distinct affine hulls and (total) exposure.
//!
//! Point clouds are passed as `m x D` matrices (one point per row);
//! polytopes as `D x d` matrices (one vertex per column), matching
//! [`MixtureParams::theta`](crate::MixtureParams).

mod minnorm;

pub use minnorm::project_onto_hull;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::{MixtureParams, Scalar};

/// Relative singular-value cutoff used for affine ranks.
pub const RANK_TOL: f64 = 1e-8;
/// Default distance tolerance, relative to the diameter of the point set.
pub const DIST_TOL: f64 = 1e-7;

fn centered_rows<T: Scalar>(points: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let m = points.nrows();
    let mean = points.row_sum().transpose() / T::of_usize(m);
    let mut c = points.clone();
    for mut r in c.row_iter_mut() {
        r -= mean.transpose();
    }
    (mean, c)
}

/// Dimension of the affine hull of the rows of `points`: the number of
/// singular values of the centered matrix above `tol` times the largest
/// (or above `tol` when all are zero).
pub fn affine_dimension<T: Scalar>(points: &DMatrix<T>, tol: T) -> usize {
    if points.nrows() <= 1 {
        return 0;
    }
    let (_, c) = centered_rows(points);
    let sv = c.singular_values();
    let smax = sv.max();
    let cut = if smax > T::zero() { tol * smax } else { tol };
    sv.iter().filter(|&&s| s > cut).count()
}

/// Orthonormal basis (columns) of the direction space of the affine hull,
/// plus a base point.
fn affine_basis<T: Scalar>(points: &DMatrix<T>, tol: T) -> (DVector<T>, DMatrix<T>) {
    let (mean, c) = centered_rows(points);
    let dim = points.ncols();
    if points.nrows() <= 1 {
        return (mean, DMatrix::zeros(dim, 0));
    }
    let svd = c.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cut = if smax > T::zero() { tol * smax } else { tol };
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    (mean, u.select_columns(&keep))
}

/// Distance from `y` to the affine hull described by `(base, basis)`.
fn affine_residual<T: Scalar>(y: &DVector<T>, base: &DVector<T>, basis: &DMatrix<T>) -> T {
    let v = y - base;
    let proj = basis * (basis.transpose() * &v);
    (v - proj).norm()
}

/// Largest pairwise distance between rows.
pub fn diameter<T: Scalar>(points: &DMatrix<T>) -> T {
    let m = points.nrows();
    let mut best = T::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            best = best.max((points.row(i) - points.row(j)).norm());
        }
    }
    best
}

/// `DIST_TOL` times the diameter of `points` (or `DIST_TOL` for a single point).
pub fn default_tol<T: Scalar>(points: &DMatrix<T>) -> T {
    let diam = diameter(points);
    T::of(DIST_TOL) * if diam > T::zero() { diam } else { T::one() }
}

/// Distance from `y` to the convex hull of the rows of `points`.
pub fn hull_distance<T: Scalar>(points: &DMatrix<T>, y: &DVector<T>) -> T {
    project_onto_hull(&points.transpose(), y).0
}

/// True iff row `idx` is not within `tol` of the convex hull of the other
/// rows. Duplicated points are never extreme.
pub fn is_extreme_point<T: Scalar>(idx: usize, points: &DMatrix<T>, tol: T) -> bool {
    let m = points.nrows();
    if m < 2 {
        return m == 1;
    }
    let others: Vec<usize> = (0..m).filter(|&i| i != idx).collect();
    let rest = points.select_rows(&others);
    let p = points.row(idx).transpose();
    hull_distance(&rest, &p) > tol
}

/// A collection of component polytopes with a relative tolerance.
#[derive(Debug, Clone)]
pub struct PolytopeSet<T: Scalar> {
    /// `D x d` vertex matrices, one per component.
    pub polys: Vec<DMatrix<T>>,
    /// Distance tolerance as a fraction of the pooled diameter.
    pub tol: T,
}

impl<T: Scalar> PolytopeSet<T> {
    pub fn new(polys: Vec<DMatrix<T>>) -> Self {
        Self { polys, tol: T::of(DIST_TOL) }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn from_params(p: &MixtureParams<T>) -> Self {
        Self::new(p.theta.clone())
    }

    /// All vertices as rows, component-major.
    pub fn pooled(&self) -> DMatrix<T> {
        let total: usize = self.polys.iter().map(|p| p.ncols()).sum();
        let dim = self.polys.first().map_or(0, |p| p.nrows());
        let mut out = DMatrix::zeros(total, dim);
        let mut r = 0;
        for p in &self.polys {
            for c in p.column_iter() {
                out.set_row(r, &c.transpose());
                r += 1;
            }
        }
        out
    }

    /// Absolute distance threshold.
    pub fn distance_tol(&self) -> T {
        let diam = diameter(&self.pooled());
        self.tol * if diam > T::zero() { diam } else { T::one() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HullPair {
    pub a: usize,
    pub b: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Largest distance from a vertex of either polytope to the other's
    /// affine hull.
    pub residual: f64,
    pub coincide: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionAReport {
    pub holds: bool,
    pub pairs: Vec<HullPair>,
    /// First pair with coinciding affine hulls, if any.
    pub offending: Option<(usize, usize)>,
}

/// Checks that every pair of component polytopes spans a distinct affine hull.
pub fn check_assumption_a<T: Scalar>(ps: &PolytopeSet<T>) -> AssumptionAReport {
    let tol = ps.distance_tol();
    let rank_tol = T::of(RANK_TOL);
    let rows: Vec<DMatrix<T>> = ps.polys.iter().map(|p| p.transpose()).collect();
    let bases: Vec<_> = rows.iter().map(|r| affine_basis(r, rank_tol)).collect();
    let mut pairs = Vec::new();
    let mut offending = None;
    for a in 0..rows.len() {
        for b in (a + 1)..rows.len() {
            let (dim_a, dim_b) = (bases[a].1.ncols(), bases[b].1.ncols());
            let mut residual = T::zero();
            for r in rows[a].row_iter() {
                residual = residual.max(affine_residual(&r.transpose(), &bases[b].0, &bases[b].1));
            }
            for r in rows[b].row_iter() {
                residual = residual.max(affine_residual(&r.transpose(), &bases[a].0, &bases[a].1));
            }
            let coincide = dim_a == dim_b && residual <= tol;
            if coincide && offending.is_none() {
                offending = Some((a, b));
            }
            pairs.push(HullPair { a, b, dim_a, dim_b, residual: residual.f64(), coincide });
        }
    }
    AssumptionAReport { holds: offending.is_none(), pairs, offending }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum ExposureViolation {
    /// Not an extreme point of the pooled hull.
    NotExtreme { component: usize, vertex: usize },
    /// Lies in the polytope of another component.
    Shared { component: usize, vertex: usize, other: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExposureReport {
    pub totally_exposed: bool,
    /// Per component: whether all its vertices are exposed.
    pub exposed_components: Vec<bool>,
    pub violations: Vec<ExposureViolation>,
}

/// Exposure of every vertex: extreme in the pooled vertex cloud and outside
/// every other component's polytope.
pub fn check_total_exposure<T: Scalar>(ps: &PolytopeSet<T>) -> ExposureReport {
    let tol = ps.distance_tol();
    let pooled = ps.pooled();
    let mut violations = Vec::new();
    let mut exposed_components = vec![true; ps.polys.len()];
    let mut row = 0;
    for (k, poly) in ps.polys.iter().enumerate() {
        for j in 0..poly.ncols() {
            let v = poly.column(j).into_owned();
            if !is_extreme_point(row, &pooled, tol) {
                violations.push(ExposureViolation::NotExtreme { component: k, vertex: j });
                exposed_components[k] = false;
            }
            for (other, op) in ps.polys.iter().enumerate() {
                if other != k && project_onto_hull(op, &v).0 <= tol {
                    violations.push(ExposureViolation::Shared { component: k, vertex: j, other });
                    exposed_components[k] = false;
                }
            }
            row += 1;
        }
    }
    ExposureReport { totally_exposed: violations.is_empty(), exposed_components, violations }
}
