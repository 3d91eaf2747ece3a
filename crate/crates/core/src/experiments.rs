//! Repeated simulate, fit and evaluate runs over a grid of sample sizes,
//! with log-log rate fits and CSV / SVG output.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{fit_em, AtomScheme, EmConfig};
use crate::gaussian::{fit_mixture_gaussian_em, GaussConfig};
use crate::mcmc::{run_gimh, GimhConfig, PriorSpec};
use crate::metrics::metric_d;
use crate::simulate::{make_setting, simulate, SettingId};
use crate::spectral::fit_spectral;
use crate::{rng, Error, MixtureParams, Result};

/// Estimator under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    /// Atom-approximation EM with `m` atoms.
    Em { m: usize },
    Gauss,
    Spectral,
    Gimh,
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown algorithm '{s}'"));
        match s.split_once(':') {
            Some(("em", m)) => Ok(Algo::Em { m: m.parse().map_err(|_| bad())? }),
            None if s == "em" => Ok(Algo::Em { m: 200 }),
            None if s == "gauss" => Ok(Algo::Gauss),
            None if s == "spectral" => Ok(Algo::Spectral),
            None if s == "gimh" => Ok(Algo::Gimh),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algo::Em { m } => write!(f, "em:{m}"),
            Algo::Gauss => f.write_str("gauss"),
            Algo::Spectral => f.write_str("spectral"),
            Algo::Gimh => f.write_str("gimh"),
        }
    }
}

/// Per-algorithm settings. EM and GIMH get the true `alpha`; EM draws its
/// atoms from `Dir(alpha)`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub em: EmConfig,
    pub gauss: GaussConfig,
    pub gimh: GimhConfig,
    pub prior: PriorSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            em: EmConfig { atoms: AtomScheme::Prior, ..Default::default() },
            gauss: GaussConfig::default(),
            gimh: GimhConfig::default(),
            prior: PriorSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub algo: String,
    pub n: usize,
    pub rep: usize,
    /// `metric_d` to the truth; `None` when the fit failed.
    pub d_value: Option<f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

fn fit_one(
    algo: Algo,
    data: &crate::Dataset<f64>,
    truth: &MixtureParams<f64>,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<MixtureParams<f64>> {
    let (k, d) = (truth.k(), truth.d());
    match algo {
        Algo::Em { m } => {
            let em = EmConfig { m, alpha: Some(truth.alpha.clone()), ..cfg.em.clone() };
            Ok(fit_em(data, k, d, &em, seed)?.psi_hat)
        }
        Algo::Gauss => Ok(fit_mixture_gaussian_em(data, k, d, &truth.alpha, &cfg.gauss, seed)?.psi_hat),
        Algo::Spectral => {
            if k != 1 {
                return Err(Error::Unsupported("the spectral estimator handles K = 1 only".into()));
            }
            let f = fit_spectral(data, d, truth.alpha.sum(), seed)?;
            MixtureParams::new(vec![f.theta], DVector::from_element(1, 1.0), DVector::from_element(1, f.sigma2.max(1e-12)), f.alpha)
        }
        Algo::Gimh => Ok(run_gimh(data, k, d, &truth.alpha, &cfg.prior, &cfg.gimh, seed)?.posterior_mean),
    }
}

/// Every `(n, rep)` draws its data from `replicate_seed(seed, n, rep,
/// "data")` and fits algorithm `a` with `replicate_seed(seed, n, rep, a)`;
/// the truth is `make_setting(setting, seed)`. Rows come back ordered by
/// `n`, then `rep`, then algorithm.
pub fn run_sweep(
    setting: &SettingId,
    algos: &[Algo],
    n_list: &[usize],
    reps: usize,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if algos.is_empty() || n_list.is_empty() || reps == 0 {
        return Err(Error::InvalidParameter("sweep needs algorithms, sample sizes and reps".into()));
    }
    let truth = make_setting::<f64>(setting, seed)?;
    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let blocks: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let data = simulate(&truth, n, rng::replicate_seed(seed, n, rep, "data"));
            algos
                .iter()
                .map(|&algo| {
                    let name = algo.to_string();
                    let start = Instant::now();
                    let out = data.as_ref().map_err(|e| Error::Degenerate(e.to_string())).and_then(|data| {
                        let est = fit_one(algo, data, &truth, cfg, rng::replicate_seed(seed, n, rep, &name))?;
                        metric_d(&truth, &est)
                    });
                    let wall_time = start.elapsed().as_secs_f64();
                    match out {
                        Ok(r) => SweepRow { algo: name, n, rep, d_value: Some(r.distance), wall_time, error: None },
                        Err(e) => SweepRow { algo: name, n, rep, d_value: None, wall_time, error: Some(e.to_string()) },
                    }
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Error statistics of one algorithm at one sample size.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RateSummary {
    pub algo: String,
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Standard error of the mean.
    pub se: f64,
}

/// One summary per `(algo, n)` over successful rows, sorted by algorithm
/// then `n`.
pub fn summarize(rows: &[SweepRow]) -> Vec<RateSummary> {
    let mut keys: Vec<(String, usize)> = rows.iter().map(|r| (r.algo.clone(), r.n)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter_map(|(algo, n)| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.algo == algo && r.n == n).filter_map(|r| r.d_value).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            let c = v.len();
            let mean = v.iter().sum::<f64>() / c as f64;
            let median = if c % 2 == 1 { v[c / 2] } else { 0.5 * (v[c / 2 - 1] + v[c / 2]) };
            let se = if c > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ((c - 1) * c) as f64).sqrt()
            } else {
                f64::NAN
            };
            Some(RateSummary { algo, n, count: c, mean, median, se })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Least-squares line through `(log n, log mean error)`.
pub fn rate_slope(rows: &[SweepRow], algo: &str) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = summarize(rows)
        .into_iter()
        .filter(|s| s.algo == algo)
        .map(|s| ((s.n as f64).ln(), s.mean.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: pts.len() });
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::Degenerate("mean error must be positive to take logs".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("all sample sizes are equal".into()));
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (m - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr })
}

/// Columns `algo,n,rep,d_value,wall_time,error`; failed fits leave
/// `d_value` empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["algo", "n", "rep", "d_value", "wall_time", "error"])?;
    for r in rows {
        out.write_record([
            r.algo.clone(),
            r.n.to_string(),
            r.rep.to_string(),
            r.d_value.map(crate::model::format_number).unwrap_or_default(),
            crate::model::format_number(r.wall_time),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &[RateSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["algo", "n", "count", "mean", "median", "se"])?;
    for s in summary {
        let f = crate::model::format_number;
        out.write_record([s.algo.clone(), s.n.to_string(), s.count.to_string(), f(s.mean), f(s.median), f(s.se)])?;
    }
    out.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained log-log plot: one dot per successful row and a polyline
/// through the per-`n` means of each algorithm.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, pad) = (640.0, 440.0, 60.0);
    let pts: Vec<(&str, f64, f64)> = rows
        .iter()
        .filter_map(|r| r.d_value.filter(|v| *v > 0.0).map(|v| (r.algo.as_str(), (r.n as f64).log10(), v.log10())))
        .collect();
    let mut svg = String::new();
    let _ = write!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    if pts.is_empty() {
        svg.push_str("</svg>");
        return svg;
    }
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo)) }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.1));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.2));
    let sx = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = write!(
        svg,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{t}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad,
        t = pad
    );
    let _ = write!(svg, r#"<text x="{}" y="{}" text-anchor="middle">log10 n</text>"#, w / 2.0, h - 15.0);
    let _ = write!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">log10 error</text>"#, h / 2.0, h / 2.0);
    for (i, v) in [x0, x1].iter().enumerate() {
        let _ = write!(svg, r#"<text x="{:.1}" y="{}" text-anchor="{}">{v:.2}</text>"#, sx(*v), h - pad + 16.0, ["start", "end"][i]);
    }
    for v in [y0, y1] {
        let _ = write!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, pad - 4.0, sy(v));
    }
    let summary = summarize(rows);
    let mut algos: Vec<&str> = pts.iter().map(|p| p.0).collect();
    algos.sort_unstable();
    algos.dedup();
    for (i, a) in algos.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for p in pts.iter().filter(|p| p.0 == *a) {
            let _ = write!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.5"/>"#, sx(p.1), sy(p.2));
        }
        let line: Vec<String> = summary
            .iter()
            .filter(|s| s.algo == *a && s.mean > 0.0)
            .map(|s| format!("{:.1},{:.1}", sx((s.n as f64).log10()), sy(s.mean.log10())))
            .collect();
        let _ = write!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let _ = write!(svg, r#"<text x="{}" y="{}" fill="{color}">{a}</text>"#, w - pad - 80.0, pad + 16.0 * i as f64);
    }
    svg.push_str("</svg>");
    svg
}
