use nalgebra::{DMatrix, DVector};
use polymix::em::{fit_em, EmConfig};
use polymix::gaussian::dirichlet_moments;
use polymix::geometry::{affine_dimension, check_total_exposure, is_extreme_point, PolytopeSet};
use polymix::linalg::softmax_rows;
use polymix::mcmc::dirichlet_proposal_log_ratio;
use polymix::metrics::metric_d;
use polymix::model::{logpdf_rows, params_from_json, params_to_json, read_dataset_csv, write_dataset_csv, ParamsJson};
use polymix::simulate::{sample_dirichlet, simulate};
use polymix::{LatentAtoms, Params};
use proptest::prelude::*;

/// `(K, d, D)` and a flat pool of values to fill a parameter record from.
fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3, 1usize..=3, 1usize..=3)
}

fn params_of(k: usize, d: usize, dim: usize) -> impl Strategy<Value = Params> {
    (
        prop::collection::vec(-3.0f64..3.0, k * d * dim),
        prop::collection::vec(0.1f64..1.0, k),
        prop::collection::vec(0.01f64..2.0, k),
        prop::collection::vec(0.3f64..3.0, d),
    )
        .prop_map(move |(t, w, s, a)| {
            let theta = t.chunks(d * dim).map(|c| DMatrix::from_column_slice(dim, d, c)).collect();
            let tot: f64 = w.iter().sum();
            let pi = DVector::from_iterator(k, w.iter().map(|v| v / tot));
            Params::new(theta, pi, DVector::from_vec(s), DVector::from_vec(a)).unwrap()
        })
}

fn params() -> impl Strategy<Value = Params> {
    shape().prop_flat_map(|(k, d, dim)| params_of(k, d, dim))
}

fn triple() -> impl Strategy<Value = (Params, Params, Params)> {
    shape().prop_flat_map(|(k, d, dim)| (params_of(k, d, dim), params_of(k, d, dim), params_of(k, d, dim)))
}

fn perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn relabelled() -> impl Strategy<Value = (Params, Params)> {
    params().prop_flat_map(|p| {
        let (k, d) = (p.k(), p.d());
        (Just(p), perm(k), prop::collection::vec(perm(d), k)).prop_map(|(p, cp, vps)| {
            let mut q = p.permute_components(&cp);
            for (i, vp) in vps.iter().enumerate() {
                q.permute_vertices(i, vp);
            }
            (p, q)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_a_pseudometric((a, b, c) in triple()) {
        let ab = metric_d(&a, &b).unwrap();
        prop_assert!(ab.distance >= 0.0);
        prop_assert!((ab.distance - metric_d(&b, &a).unwrap().distance).abs() < 1e-9);
        let ac = metric_d(&a, &c).unwrap().distance;
        let bc = metric_d(&b, &c).unwrap().distance;
        prop_assert!(ac <= ab.distance + bc + 1e-9);
        let parts: f64 = ab.per_component.iter().map(|g| g.d_m + g.pi_gap + g.sigma2_gap).sum();
        prop_assert!((parts - ab.distance).abs() < 1e-10);
    }

    #[test]
    fn metric_beats_identity_matching((a, b, _c) in triple()) {
        let identity: f64 = (0..a.k())
            .map(|k| {
                (0..a.d()).map(|j| (a.theta[k].column(j) - b.theta[k].column(j)).norm()).sum::<f64>()
                    + (a.pi[k] - b.pi[k]).abs()
                    + (a.sigma2[k] - b.sigma2[k]).abs()
            })
            .sum();
        prop_assert!(metric_d(&a, &b).unwrap().distance <= identity + 1e-12);
    }

    #[test]
    fn relabelling_is_free((p, q) in relabelled()) {
        prop_assert!(metric_d(&p, &q).unwrap().distance < 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact(p in params()) {
        let text = serde_json::to_string(&params_to_json(&p)).unwrap();
        let back: ParamsJson = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(params_from_json::<f64>(&back).unwrap(), p);
    }

    #[test]
    fn dirichlet_rows_on_simplex(alpha in prop::collection::vec(0.05f64..5.0, 1..6), seed in any::<u64>()) {
        let rows: DMatrix<f64> = sample_dirichlet(&DVector::from_vec(alpha), 50, seed).unwrap();
        for r in rows.row_iter() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-10);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dirichlet_moment_structure(alpha in prop::collection::vec(0.1f64..5.0, 1..6)) {
        let m = dirichlet_moments(&DVector::from_vec(alpha)).unwrap();
        prop_assert!((m.mean.sum() - 1.0).abs() < 1e-12);
        prop_assert!((&m.cov - m.cov.transpose()).amax() < 1e-15);
        prop_assert!(m.cov.row_iter().all(|r| r.sum().abs() < 1e-12));
        prop_assert!(m.cov.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-12));
        prop_assert!((&m.second_moment - (&m.cov + &m.mean * m.mean.transpose())).amax() < 1e-15);
    }

    #[test]
    fn flat_weighted_atoms_are_normalized(alpha in prop::collection::vec(0.2f64..4.0, 1..5), seed in any::<u64>()) {
        let atoms: LatentAtoms<f64> = LatentAtoms::sample_flat_weighted(&DVector::from_vec(alpha), 40, seed).unwrap();
        prop_assert!((atoms.weights.sum() - 1.0).abs() < 1e-12);
        prop_assert!(atoms.betas.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn logpdf_ignores_labels(p in params(), seed in any::<u64>(), x in prop::collection::vec(-4.0f64..4.0, 12)) {
        // vertex relabelling changes the law of Theta beta unless alpha is
        // symmetric, so only components are permuted
        let q = p.permute_components(&(0..p.k()).rev().collect::<Vec<_>>());
        let atoms = LatentAtoms::sample(&p.alpha, 30, seed).unwrap();
        let xs = DMatrix::from_fn(4, p.dim(), |r, c| x[(r * 3 + c) % 12]);
        let a = logpdf_rows(&xs, &p, &atoms).unwrap();
        let b = logpdf_rows(&xs, &q, &atoms).unwrap();
        let rev: Vec<usize> = (0..30).rev().collect();
        let c = logpdf_rows(&xs, &p, &atoms.permute(&rev)).unwrap();
        for i in 0..4 {
            prop_assert!((a[i] - b[i]).abs() < 1e-10);
            prop_assert!((a[i] - c[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn logpdf_finite_far_away(p in params(), far in 1e2f64..1e4) {
        let mut p = p;
        p.sigma2.fill(1e-12);
        let atoms = LatentAtoms::sample(&p.alpha, 10, 1).unwrap();
        let xs = DMatrix::from_element(2, p.dim(), far);
        prop_assert!(logpdf_rows(&xs, &p, &atoms).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_is_row_stochastic(v in prop::collection::vec(-800.0f64..800.0, 12)) {
        let mut t = DMatrix::from_row_slice(3, 4, &v);
        let lse = softmax_rows(&mut t);
        prop_assert!(lse.iter().all(|l| l.is_finite()));
        for r in t.row_iter() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn proposal_ratio_is_antisymmetric(a in prop::collection::vec(0.05f64..1.0, 3), b in prop::collection::vec(0.05f64..1.0, 3), s in 5.0f64..200.0) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let (a, b) = (&a / a.sum(), &b / b.sum());
        let fwd = dirichlet_proposal_log_ratio(&a, &b, s);
        let bwd = dirichlet_proposal_log_ratio(&b, &a, s);
        prop_assert!((fwd + bwd).abs() < 1e-8 * (1.0 + fwd.abs()));
    }

    #[test]
    fn simulation_is_reproducible(p in params(), seed in any::<u64>()) {
        let a = simulate(&p, 20, seed).unwrap();
        prop_assert_eq!(&a, &simulate(&p, 20, seed).unwrap());
        let z = a.z.as_ref().unwrap();
        prop_assert!(z.iter().all(|&k| k < p.k()));
        prop_assert!(a.beta.as_ref().unwrap().row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn dataset_csv_round_trip(p in params(), seed in any::<u64>()) {
        let data = simulate(&p, 15, seed).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv::<f64, _>(buf.as_slice()).unwrap();
        prop_assert_eq!(back.x, data.x);
    }
}

fn rotation(angles: &[f64], dim: usize) -> DMatrix<f64> {
    // product of Givens rotations over successive coordinate pairs
    let mut q = DMatrix::identity(dim, dim);
    for (i, &t) in angles.iter().enumerate().take(dim.saturating_sub(1)) {
        let mut g = DMatrix::identity(dim, dim);
        g[(i, i)] = t.cos();
        g[(i + 1, i + 1)] = t.cos();
        g[(i, i + 1)] = -t.sin();
        g[(i + 1, i)] = t.sin();
        q = g * q;
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extremeness_survives_rigid_motion(
        pts in prop::collection::vec(-2.0f64..2.0, 18),
        angles in prop::collection::vec(0.0f64..6.3, 2),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let x = DMatrix::from_row_slice(6, 3, &pts);
        let q = rotation(&angles, 3);
        let mut y = &x * q.transpose();
        for mut r in y.row_iter_mut() {
            for c in 0..3 {
                r[c] += shift[c];
            }
        }
        for i in 0..6 {
            prop_assert_eq!(is_extreme_point(i, &x, 1e-9), is_extreme_point(i, &y, 1e-9));
        }
    }

    #[test]
    fn affine_dimension_monotone(pts in prop::collection::vec(-2.0f64..2.0, 4..24), extra in prop::collection::vec(-2.0f64..2.0, 4)) {
        let m = pts.len() / 4;
        let x = DMatrix::from_row_slice(m, 4, &pts[..m * 4]);
        let dx = affine_dimension(&x, 1e-8);
        prop_assert!(dx <= (m - 1).min(4));
        let mut bigger = x.clone().insert_row(m, 0.0);
        bigger.row_mut(m).copy_from_slice(&extra);
        prop_assert!(affine_dimension(&bigger, 1e-8) >= dx);
    }

    #[test]
    fn exposure_implies_extremeness(p in params()) {
        let set = PolytopeSet::from_params(&p);
        if check_total_exposure(&set).totally_exposed {
            let pooled = set.pooled();
            let tol = set.distance_tol();
            for i in 0..pooled.nrows() {
                prop_assert!(is_extreme_point(i, &pooled, tol));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn em_outputs_are_valid(p in params(), seed in any::<u64>()) {
        let data = simulate(&p, 60, seed).unwrap();
        let cfg = EmConfig { m: 10, restarts: 1, max_iter: 30, ..Default::default() };
        let fit = fit_em(&data, p.k(), p.d(), &cfg, seed).unwrap();
        prop_assert!((fit.psi_hat.pi.sum() - 1.0).abs() < 1e-12);
        prop_assert!(fit.psi_hat.sigma2.iter().all(|&s| s >= cfg.sigma2_floor));
        prop_assert!(fit.psi_hat.theta.iter().all(|t| t.iter().all(|v| v.is_finite())));
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8);
        }
    }
}
