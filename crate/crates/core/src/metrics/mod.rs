//! Parameter-space distances and density-level divergences.

pub mod assignment;
mod divergence;

pub use divergence::{
    estimate_kl_mc, estimate_kl_mc_with, estimate_tv_quadrature, infer_kl_constants,
    kl_upper_bound, KlConstants, TV_BETA_NODES,
};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::{Error, MixtureParams, Result, Scalar};

/// Minimum over column permutations `tau` of `sum_j |a_j - b_tau(j)|`.
/// Returns the value and `tau` (column `j` of `a` pairs with column `tau[j]` of `b`).
pub fn d_m<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<(T, Vec<usize>)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "d_M needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.ncols();
    let cost = DMatrix::from_fn(d, d, |i, j| (a.column(i) - b.column(j)).norm().f64());
    let (_, perm) = assignment::solve(&cost);
    // recompute in T so f32 callers see their own rounding
    let val = (0..d).fold(T::zero(), |s, j| s + (a.column(j) - b.column(perm[j])).norm());
    Ok((val, perm))
}

/// Per-component terms of the matched parameter distance.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComponentGap {
    pub d_m: f64,
    pub pi_gap: f64,
    pub sigma2_gap: f64,
}

/// Result of [`metric_d`]. Component `k` of the first argument is matched to
/// component `component_perm[k]` of the second, whose vertices are matched by
/// `vertex_perms[k]`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub distance: f64,
    pub component_perm: Vec<usize>,
    pub vertex_perms: Vec<Vec<usize>>,
    pub per_component: Vec<ComponentGap>,
}

fn same_shape<T: Scalar>(a: &MixtureParams<T>, b: &MixtureParams<T>) -> Result<()> {
    let sa = (a.k(), a.d(), a.dim());
    let sb = (b.k(), b.d(), b.dim());
    if sa != sb {
        return Err(Error::Shape(format!("(K, d, D) differ: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Permutation-invariant parameter distance: the optimal matching of
/// components under the cost `d_M + |pi gap| + |sigma2 gap|`.
pub fn metric_d<T: Scalar>(a: &MixtureParams<T>, b: &MixtureParams<T>) -> Result<EvalReport> {
    same_shape(a, b)?;
    let k = a.k();
    let mut inner = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (dm, perm) = d_m(&a.theta[i], &b.theta[j])?;
            let gap = ComponentGap {
                d_m: dm.f64(),
                pi_gap: (a.pi[i] - b.pi[j]).abs().f64(),
                sigma2_gap: (a.sigma2[i] - b.sigma2[j]).abs().f64(),
            };
            inner.push((gap, perm));
        }
    }
    let cost = DMatrix::from_fn(k, k, |i, j| {
        let g = &inner[i * k + j].0;
        g.d_m + g.pi_gap + g.sigma2_gap
    });
    let (_, component_perm) = assignment::solve(&cost);
    let mut per_component = Vec::with_capacity(k);
    let mut vertex_perms = Vec::with_capacity(k);
    let mut distance = 0.0;
    for (i, &j) in component_perm.iter().enumerate() {
        let (g, p) = &inner[i * k + j];
        distance += g.d_m + g.pi_gap + g.sigma2_gap;
        per_component.push(g.clone());
        vertex_perms.push(p.clone());
    }
    Ok(EvalReport { distance, component_perm, vertex_perms, per_component })
}

/// Relabels `est` so that it is aligned with `reference`: component `k` and
/// its vertices line up with those of `reference` under [`metric_d`].
pub fn align_to<T: Scalar>(reference: &MixtureParams<T>, est: &MixtureParams<T>) -> Result<MixtureParams<T>> {
    let rep = metric_d(reference, est)?;
    let mut out = est.permute_components(&rep.component_perm);
    for (k, vp) in rep.vertex_perms.iter().enumerate() {
        out.permute_vertices(k, vp);
    }
    Ok(out)
}
