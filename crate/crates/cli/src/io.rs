//! File helpers and the provenance header carried by every JSON output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use anyhow::{Context, Result};
use polymix::model::{params_from_json, read_dataset_csv, ParamsJson};
use polymix::{Data, Params};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub invocation: Vec<String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>, invocation: &[String]) -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION"), seed, invocation: invocation.to_vec() }
    }
}

/// A JSON document: provenance fields followed by the payload's own fields.
#[derive(Serialize)]
pub struct Stamped<'a, P: Serialize> {
    #[serde(flatten)]
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub payload: P,
}

pub fn create(path: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {path}"))?))
}

pub fn write_json<P: Serialize>(path: &str, prov: &Provenance, payload: P) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &Stamped { provenance: prov, payload })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn to_json_string<P: Serialize>(prov: &Provenance, payload: P) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Stamped { provenance: prov, payload })?)
}

pub fn read_data(path: &str) -> Result<Data> {
    let f = File::open(path).with_context(|| format!("cannot open {path}"))?;
    read_dataset_csv(BufReader::new(f)).with_context(|| format!("reading {path}"))
}

/// Accepts a bare parameter record or any document with a `params` field.
pub fn read_params(path: &str) -> Result<Params> {
    let f = File::open(path).with_context(|| format!("cannot open {path}"))?;
    let v: Value = serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {path}"))?;
    let inner = match v.get("params") {
        Some(p) => p.clone(),
        None => v,
    };
    let pj: ParamsJson = serde_json::from_value(inner).with_context(|| format!("{path} holds no parameter record"))?;
    params_from_json(&pj).with_context(|| format!("invalid parameters in {path}"))
}
