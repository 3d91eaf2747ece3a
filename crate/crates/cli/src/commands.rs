use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use polymix::em::{fit_em, AtomScheme, EmConfig, FitResult};
use polymix::experiments::{run_sweep, summarize, sweep_svg, write_summary_csv, write_sweep_csv, SweepConfig};
use polymix::gaussian::{fit_mixture_gaussian_em, GaussConfig};
use polymix::geometry::{check_assumption_a, check_total_exposure, PolytopeSet};
use polymix::mcmc::{gibbs_augmented_k1, run_gimh, GibbsConfig, GimhConfig, PriorSpec, StepSizes};
use polymix::metrics::metric_d;
use polymix::model::{params_to_json, write_dataset_csv, write_latents_csv};
use polymix::select::{select as run_select, SelectConfig};
use polymix::simulate::{make_setting_with, simulate as draw, SettingId, SettingOptions};
use polymix::spectral::fit_spectral;
use polymix::{rng, Params};
use serde::Serialize;
use serde_json::json;

use crate::io::{create, read_data, read_params, to_json_string, write_json, Provenance};
use crate::{EvalArgs, FitAlgo, FitArgs, GeomArgs, SelectArgs, SimulateArgs, SweepArgs};

pub fn simulate(a: SimulateArgs, inv: &[String]) -> Result<()> {
    let id: SettingId = a.setting.parse()?;
    let psi = make_setting_with::<f64>(&id, a.seed, &SettingOptions { pi_concentration: a.pi_concentration })?;
    let data = draw(&psi, a.n, rng::derive(a.seed, "simulate/data"))?;
    let mut w = create(&a.out)?;
    write_dataset_csv(&data, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.latents {
        let mut w = create(p)?;
        write_latents_csv(&data, &mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.params {
        let prov = Provenance::new(Some(a.seed), inv);
        write_json(p, &prov, json!({ "setting": id.to_string(), "params": params_to_json(&psi) }))?;
    }
    Ok(())
}

fn alpha_vec(alpha: &Option<Vec<f64>>, d: usize) -> Result<Option<DVector<f64>>> {
    match alpha.as_deref() {
        None => Ok(None),
        Some([v]) => Ok(Some(DVector::from_element(d, *v))),
        Some(v) if v.len() == d => Ok(Some(DVector::from_column_slice(v))),
        Some(v) => bail!("--alpha has {} values but d = {d}", v.len()),
    }
}

fn read_prior(path: &Option<String>) -> Result<PriorSpec> {
    let prior = match path {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("cannot open {p}"))?;
            serde_json::from_reader(std::io::BufReader::new(f)).with_context(|| format!("parsing {p}"))?
        }
        None => PriorSpec::default(),
    };
    prior.validate()?;
    Ok(prior)
}

#[derive(Serialize)]
struct IterDiagnostics {
    iterations: usize,
    converged: bool,
    loglik: f64,
    restarts_used: usize,
    wall_time: f64,
    dying: Vec<bool>,
    under_identified: bool,
    objective_trace: Vec<f64>,
    elbo_trace: Vec<f64>,
}

fn iter_diag(f: &FitResult<f64>) -> serde_json::Value {
    serde_json::to_value(IterDiagnostics {
        iterations: f.iterations,
        converged: f.converged,
        loglik: f.loglik,
        restarts_used: f.restarts_used,
        wall_time: f.wall_time,
        dying: f.dying.clone(),
        under_identified: f.under_identified,
        objective_trace: f.objective_trace.clone(),
        elbo_trace: f.elbo_trace.clone(),
    })
    .expect("plain data serializes")
}

fn write_chain<S: Serialize>(path: &str, rows: impl Iterator<Item = S>) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit(a: FitArgs, inv: &[String]) -> Result<()> {
    let data = read_data(&a.data)?;
    let (k, d) = (a.k, a.d);
    let alpha = alpha_vec(&a.alpha, d)?;
    let ones = || DVector::from_element(d, 1.0);
    let (psi, diag): (Params, serde_json::Value) = match a.algo {
        FitAlgo::Em => {
            let atoms = a.atoms.unwrap_or(if alpha.is_some() { AtomScheme::Prior } else { AtomScheme::Uniform });
            let cfg = EmConfig {
                m: a.m.unwrap_or(200),
                restarts: a.restarts,
                max_iter: a.max_iter,
                tol: a.tol,
                atoms,
                alpha: alpha.clone(),
                ..Default::default()
            };
            let f = fit_em(&data, k, d, &cfg, a.seed)?;
            let diag = iter_diag(&f);
            (f.psi_hat, diag)
        }
        FitAlgo::Gauss => {
            let cfg = GaussConfig { restarts: a.restarts, max_iter: a.max_iter, tol: a.tol, ..Default::default() };
            let f = fit_mixture_gaussian_em(&data, k, d, &alpha.unwrap_or_else(ones), &cfg, a.seed)?;
            let diag = iter_diag(&f);
            (f.psi_hat, diag)
        }
        FitAlgo::Spectral => {
            if k != 1 {
                bail!("the spectral estimator fits a single polytope; use --K 1");
            }
            let abar = a
                .abar
                .or_else(|| alpha.as_ref().map(|v| v.sum()))
                .ok_or_else(|| anyhow!("the spectral estimator needs --abar or --alpha"))?;
            let f = fit_spectral(&data, d, abar, a.seed)?;
            let sigma2 = f.sigma2.max(1e-12);
            let psi = Params::new(vec![f.theta], DVector::from_element(1, 1.0), DVector::from_element(1, sigma2), f.alpha)?;
            (psi, json!({ "abar": abar, "sigma2_raw": f.sigma2 }))
        }
        FitAlgo::Gimh => {
            let cfg = GimhConfig {
                m: a.m.unwrap_or(20),
                steps: StepSizes { theta: a.step_theta, sigma2: a.step_sigma2, pi: a.step_pi },
                n_iter: a.iters,
                burn_in: a.burnin,
                thin: a.thin,
                init: None,
            };
            let chain = run_gimh(&data, k, d, &alpha.unwrap_or_else(ones), &read_prior(&a.prior)?, &cfg, a.seed)?;
            if let Some(p) = &a.chain {
                write_chain(p, chain.samples.iter().map(params_to_json))?;
            }
            let diag = json!({ "acceptance_rate": chain.acceptance_rate, "samples": chain.samples.len(), "log_lik": chain.log_lik });
            (chain.posterior_mean, diag)
        }
        FitAlgo::Gibbs => {
            if k != 1 {
                bail!("the Gibbs sampler fits a single polytope; use --K 1");
            }
            let mut cfg = GibbsConfig { n_iter: a.iters, burn_in: a.burnin, thin: a.thin, ..Default::default() };
            cfg.init.alpha = alpha;
            let chain = gibbs_augmented_k1(&data, d, &read_prior(&a.prior)?, &cfg, a.seed)?;
            let draws = chain.to_params()?;
            if let Some(p) = &a.chain {
                write_chain(p, draws.iter().map(params_to_json))?;
            }
            let diag = json!({
                "beta_acceptance": chain.beta_acceptance,
                "alpha_acceptance": chain.alpha_acceptance,
                "samples": draws.len(),
            });
            (chain.posterior_mean()?, diag)
        }
    };
    let algo = format!("{:?}", a.algo).to_lowercase();
    let prov = Provenance::new(Some(a.seed), inv);
    write_json(&a.out, &prov, json!({ "algo": algo, "params": params_to_json(&psi), "diagnostics": diag }))
}

pub fn eval(a: EvalArgs, inv: &[String]) -> Result<()> {
    let truth = read_params(&a.truth)?;
    let est = read_params(&a.est)?;
    let report = metric_d(&truth, &est)?;
    let prov = Provenance::new(None, inv);
    let text = to_json_string(&prov, &report)?;
    println!("{text}");
    if let Some(p) = &a.out {
        write_json(p, &prov, &report)?;
    }
    Ok(())
}

pub fn select(a: SelectArgs, _inv: &[String]) -> Result<()> {
    let data = read_data(&a.data)?;
    let cfg = SelectConfig {
        em: EmConfig { m: a.m, restarts: a.restarts, max_iter: a.max_iter, ..Default::default() },
        alpha: a.alpha,
        m_loglik: a.m_loglik,
    };
    let mut out = csv_writer(&a.out)?;
    let multi = a.reps > 1;
    let mut header = vec!["K", "d", "bic", "loglik", "converged"];
    if multi {
        header.insert(0, "rep");
    }
    out.write_record(&header)?;
    for rep in 0..a.reps {
        let res = run_select(&data, &a.k.0, &a.d.0, &cfg, rng::restart_seed(a.seed, rep))?;
        for c in &res.cells {
            let num = |v: Option<f64>| v.map(polymix::model::format_number).unwrap_or_default();
            let mut rec = vec![c.k.to_string(), c.d.to_string(), num(c.bic), num(c.loglik), c.converged.to_string()];
            if multi {
                rec.insert(0, rep.to_string());
            }
            out.write_record(&rec)?;
        }
        println!("{{\"rep\": {rep}, \"best_K\": {}, \"best_d\": {}}}", res.best.0, res.best.1);
    }
    out.flush()?;
    Ok(())
}

fn csv_writer(path: &str) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn sweep(a: SweepArgs, _inv: &[String]) -> Result<()> {
    let id: SettingId = a.setting.parse()?;
    let mut cfg = SweepConfig::default();
    cfg.em.restarts = a.restarts;
    cfg.em.max_iter = a.max_iter;
    cfg.gauss.max_iter = a.max_iter;
    cfg.gimh.n_iter = a.iters;
    cfg.gimh.burn_in = a.burnin;
    cfg.gimh.thin = a.thin;
    let rows = run_sweep(&id, &a.algos, &a.n, a.reps, &cfg, a.seed)?;
    let mut w = create(&a.out)?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.summary {
        let mut w = create(p)?;
        write_summary_csv(&summarize(&rows), &mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.svg {
        std::fs::write(p, sweep_svg(&rows)).with_context(|| format!("cannot write {p}"))?;
    }
    for algo in &a.algos {
        let name = algo.to_string();
        match polymix::experiments::rate_slope(&rows, &name) {
            Ok(s) => println!("{{\"algo\": \"{name}\", \"slope\": {}, \"stderr\": {}}}", s.slope, s.stderr),
            Err(e) => eprintln!("{name}: no slope ({e})"),
        }
    }
    Ok(())
}

pub fn geom_check(a: GeomArgs, inv: &[String]) -> Result<()> {
    let psi = read_params(&a.params)?;
    let mut set = PolytopeSet::from_params(&psi);
    if let Some(t) = a.tol {
        set = set.with_tol(t);
    }
    let payload = json!({
        "assumption_a": check_assumption_a(&set),
        "exposure": check_total_exposure(&set),
    });
    let prov = Provenance::new(None, inv);
    println!("{}", to_json_string(&prov, &payload)?);
    if let Some(p) = &a.out {
        write_json(p, &prov, &payload)?;
    }
    Ok(())
}

