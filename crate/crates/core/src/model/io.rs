//! JSON parameter records and CSV datasets.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, MixtureParams};
use crate::error::{Error, Result};
use crate::Scalar;

/// Wire form of [`MixtureParams`]; `theta` is indexed `[k][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn params_to_json<T: Scalar>(p: &MixtureParams<T>) -> ParamsJson {
    ParamsJson {
        k: p.k(),
        d: p.d(),
        dim: p.dim(),
        theta: p
            .theta
            .iter()
            .map(|t| t.row_iter().map(|r| r.iter().map(|v| v.f64()).collect()).collect())
            .collect(),
        pi: p.pi.iter().map(|v| v.f64()).collect(),
        sigma2: p.sigma2.iter().map(|v| v.f64()).collect(),
        alpha: p.alpha.iter().map(|v| v.f64()).collect(),
    }
}

pub fn params_from_json<T: Scalar>(j: &ParamsJson) -> Result<MixtureParams<T>> {
    if j.theta.len() != j.k {
        return Err(Error::Shape(format!("theta has {} blocks, K={}", j.theta.len(), j.k)));
    }
    let mut theta = Vec::with_capacity(j.k);
    for (k, block) in j.theta.iter().enumerate() {
        if block.len() != j.dim || block.iter().any(|r| r.len() != j.d) {
            return Err(Error::Shape(format!("theta[{k}] must be {} x {}", j.dim, j.d)));
        }
        theta.push(DMatrix::from_fn(j.dim, j.d, |r, c| T::of(block[r][c])));
    }
    let vec = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().map(|&x| T::of(x)));
    MixtureParams::new(theta, vec(&j.pi), vec(&j.sigma2), vec(&j.alpha))
}

/// Decimal text with 17 significant digits, '.' radix, no separators.
/// Exponent notation is used only outside `[1e-5, 1e17)`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let mut exp = x.abs().log10().floor() as i32;
    if 10f64.powi(exp) > x.abs() {
        exp -= 1;
    }
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.16e}")
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let t = cell.trim();
    t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
        row,
        col,
        msg: format!("expected a finite number, found {t:?}"),
    })
}

fn read_numeric<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| parse_cell(c, i + 1, j + 1))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    row: i + 1,
                    col: row.len().min(w) + 1,
                    msg: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads an `n x D` matrix from headerless CSV.
pub fn read_dataset_csv<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let rows = read_numeric(reader)?;
    let n = rows.len();
    let dim = rows.first().map_or(0, |r| r.len());
    let x = DMatrix::from_fn(n, dim, |i, j| T::of(rows[i][j]));
    Ok(Dataset::new(x))
}

pub fn write_dataset_csv<T: Scalar, W: Write>(data: &Dataset<T>, mut w: W) -> Result<()> {
    for row in data.x.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format_number(v.f64())).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Latent sidecar: one row per observation, `z` (0-based) then the `d`
/// simplex coordinates.
pub fn write_latents_csv<T: Scalar, W: Write>(data: &Dataset<T>, mut w: W) -> Result<()> {
    let (z, beta) = match (&data.z, &data.beta) {
        (Some(z), Some(b)) => (z, b),
        _ => return Err(Error::InvalidParameter("dataset carries no latents".into())),
    };
    for (i, row) in beta.row_iter().enumerate() {
        let mut line = vec![z[i].to_string()];
        line.extend(row.iter().map(|v| format_number(v.f64())));
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Attaches a latent sidecar to `data`.
pub fn read_latents_csv<T: Scalar, R: Read>(data: &mut Dataset<T>, reader: R) -> Result<()> {
    let rows = read_numeric(reader)?;
    if rows.len() != data.n() {
        return Err(Error::Shape(format!(
            "latent file has {} rows, dataset has {}",
            rows.len(),
            data.n()
        )));
    }
    let d = rows.first().map_or(1, |r| r.len()) - 1;
    let mut z = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r[0] < 0.0 || r[0].fract() != 0.0 {
            return Err(Error::Parse { row: i + 1, col: 1, msg: "label must be a nonnegative integer".into() });
        }
        z.push(r[0] as usize);
    }
    data.beta = Some(DMatrix::from_fn(rows.len(), d, |i, j| T::of(rows[i][j + 1])));
    data.z = Some(z);
    Ok(())
}
