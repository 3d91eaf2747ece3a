use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dirichlet::DirichletSampler;
use crate::rng::{self, Rng};
use crate::{Error, MixtureParams, Result, Scalar};

/// Canonical ground-truth configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingId {
    /// Three pairwise-intersecting segments in R^3.
    One,
    /// Three random 4-vertex simplices in R^12, two overlapping, one apart.
    Two,
    /// Ten random 25-vertex simplices in R^200.
    Three,
    /// One random triangle in R^20.
    SingleSimplex { asym: bool },
    /// One planar quadrilateral in R^20.
    SinglePolytope { asym: bool },
}

impl FromStr for SettingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "1" => Self::One,
            "2" => Self::Two,
            "3" => Self::Three,
            "single-simplex" => Self::SingleSimplex { asym: false },
            "single-simplex-asym" => Self::SingleSimplex { asym: true },
            "single-polytope" => Self::SinglePolytope { asym: false },
            "single-polytope-asym" => Self::SinglePolytope { asym: true },
            other => return Err(Error::InvalidParameter(format!("unknown setting '{other}'"))),
        })
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::SingleSimplex { asym: false } => "single-simplex",
            Self::SingleSimplex { asym: true } => "single-simplex-asym",
            Self::SinglePolytope { asym: false } => "single-polytope",
            Self::SinglePolytope { asym: true } => "single-polytope-asym",
        };
        f.write_str(s)
    }
}

/// Knobs for the seed-derived parts of the random settings.
#[derive(Debug, Clone, Copy)]
pub struct SettingOptions {
    /// Symmetric Dirichlet concentration used to draw `pi`.
    pub pi_concentration: f64,
}

impl Default for SettingOptions {
    fn default() -> Self {
        Self { pi_concentration: 50.0 }
    }
}

pub fn make_setting<T: Scalar>(id: &SettingId, seed: u64) -> Result<MixtureParams<T>> {
    make_setting_with(id, seed, &SettingOptions::default())
}

pub fn make_setting_with<T: Scalar>(
    id: &SettingId,
    seed: u64,
    opts: &SettingOptions,
) -> Result<MixtureParams<T>> {
    let mut rng = rng::seeded(rng::derive(seed, &format!("setting/{id}")));
    let p = match id {
        SettingId::One => setting_one(),
        SettingId::Two => setting_two(&mut rng, opts)?,
        SettingId::Three => setting_three(&mut rng, opts)?,
        SettingId::SingleSimplex { asym } => {
            let alpha = if *asym { vec![0.2, 0.6, 1.0] } else { vec![0.8; 3] };
            single(gauss(&mut rng, 20, 3), 0.16, alpha)
        }
        SettingId::SinglePolytope { asym } => {
            let alpha = if *asym { vec![0.3, 0.4, 1.0, 0.6] } else { vec![0.5; 4] };
            single(quadrilateral(&mut rng, 20), 0.16, alpha)
        }
    };
    let p = MixtureParams::new(p.theta, p.pi, p.sigma2, p.alpha)?;
    Ok(p.cast())
}

fn single(theta: DMatrix<f64>, sigma2: f64, alpha: Vec<f64>) -> MixtureParams<f64> {
    MixtureParams {
        theta: vec![theta],
        pi: DVector::from_element(1, 1.0),
        sigma2: DVector::from_element(1, sigma2),
        alpha: DVector::from_vec(alpha),
    }
}

fn setting_one() -> MixtureParams<f64> {
    let seg = |a: [f64; 3], b: [f64; 3]| {
        DMatrix::from_column_slice(3, 2, &[a[0], a[1], a[2], b[0], b[1], b[2]])
    };
    MixtureParams {
        theta: vec![
            seg([0.0, 0.0, 0.0], [2.0, 0.0, 0.0]),
            seg([1.0, -1.0, -0.5], [1.0, 1.0, 0.5]),
            seg([0.0, -0.5, -0.25], [1.5, 1.0, 0.5]),
        ],
        pi: DVector::from_vec(vec![0.3, 0.3, 0.4]),
        sigma2: DVector::from_vec(vec![0.12f64.powi(2), 0.2f64.powi(2), 0.07f64.powi(2)]),
        alpha: DVector::from_element(2, 1.0),
    }
}

fn gauss(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn draw_pi(rng: &mut Rng, k: usize, conc: f64) -> Result<DVector<f64>> {
    let s = DirichletSampler::new(&DVector::from_element(k, conc))?;
    let mut buf = vec![0.0; k];
    s.draw_into(rng, &mut buf);
    Ok(DVector::from_vec(buf))
}

fn shift_columns(m: &mut DMatrix<f64>, by: &DVector<f64>) {
    for mut c in m.column_iter_mut() {
        c += by;
    }
}

fn setting_two(rng: &mut Rng, opts: &SettingOptions) -> Result<MixtureParams<f64>> {
    let (dim, d) = (12, 4);
    let t1 = gauss(rng, dim, d);
    let mut t2 = gauss(rng, dim, d);
    let mut t3 = gauss(rng, dim, d);
    // component 2 shares its centroid with component 1, so the two intersect
    let c1 = t1.column_mean();
    let c2 = t2.column_mean();
    shift_columns(&mut t2, &(c1.clone() - c2));
    // component 3 is pushed well away from the other two
    let mut dir: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    dir /= dir.norm();
    let c3 = t3.column_mean();
    shift_columns(&mut t3, &(c1 + dir * 8.0 - c3));
    let pi = draw_pi(rng, 3, opts.pi_concentration)?;
    let sigma2 = DVector::from_iterator(
        3,
        [0.1, 0.2, 0.6].iter().map(|b| (b * (1.0 + 0.1 * rng.random::<f64>())).powi(2)),
    );
    Ok(MixtureParams {
        theta: vec![t1, t2, t3],
        pi,
        sigma2,
        alpha: DVector::from_element(d, 0.75),
    })
}

fn setting_three(rng: &mut Rng, opts: &SettingOptions) -> Result<MixtureParams<f64>> {
    let (k, dim, d) = (10, 200, 25);
    let theta = (0..k).map(|_| gauss(rng, dim, d)).collect();
    let pi = draw_pi(rng, k, opts.pi_concentration)?;
    let sigma2 = DVector::from_fn(k, |_, _| (0.1 + 0.5 * rng.random::<f64>()).powi(2));
    Ok(MixtureParams { theta, pi, sigma2, alpha: DVector::from_element(d, 0.75) })
}

/// Convex quadrilateral in a random 2-plane of `R^dim`, all four corners exposed.
fn quadrilateral(rng: &mut Rng, dim: usize) -> DMatrix<f64> {
    let frame = gauss(rng, dim, 2).qr().q();
    let offset: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let corners = DMatrix::from_column_slice(2, 4, &[-2.0, -1.5, 2.0, -2.0, 2.5, 1.5, -1.5, 2.0]);
    let mut out = frame * corners;
    shift_columns(&mut out, &offset);
    out
}
