//! On-disk layout of a [`PosteriorStore`].
//!
//! ```text
//! <dir>/meta.json          config, dims, acceptance statistics, adaptation trace
//! <dir>/<block>.csv        sample_index,flat_index,value
//! ```
//!
//! Blocks are `alpha_T, B_T, alpha_star_R, B_R, gamma_sigma, Omega, U,
//! sigma2_alpha, sigma2_beta`. Matrices are flattened row-major; shapes come
//! from `dims` in the manifest. Values use Rust's shortest round-trip float
//! formatting, so a read/write cycle reproduces the files byte for byte.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{flatten_row_major, Dims, Parameters};
use crate::sampler::{AcceptanceStats, PosteriorStore, SamplerConfig};

pub const BLOCKS: [&str; 9] = [
    "alpha_T",
    "B_T",
    "alpha_star_R",
    "B_R",
    "gamma_sigma",
    "Omega",
    "U",
    "sigma2_alpha",
    "sigma2_beta",
];

#[derive(Serialize, Deserialize)]
struct Manifest {
    n_states: usize,
    dims: Dims,
    config: SamplerConfig,
    acceptance: AcceptanceStats,
    rw_trace: Vec<f64>,
}

fn block_values(state: &Parameters, block: &str) -> Vec<f64> {
    match block {
        "alpha_T" => state.alpha_t.as_slice().to_vec(),
        "B_T" => flatten_row_major(&state.b_t),
        "alpha_star_R" => state.alpha_star_r.as_slice().to_vec(),
        "B_R" => flatten_row_major(&state.b_r),
        "gamma_sigma" => state.gamma_sigma.as_slice().to_vec(),
        "Omega" => flatten_row_major(&state.omega),
        "U" => flatten_row_major(&state.u),
        "sigma2_alpha" => vec![state.sigma2_alpha],
        "sigma2_beta" => state.sigma2_beta.as_slice().to_vec(),
        _ => unreachable!("unknown block {block}"),
    }
}

fn block_shape(dims: &Dims, block: &str) -> (usize, usize) {
    match block {
        "alpha_T" => (dims.s, 1),
        "B_T" => (dims.s, dims.p),
        "alpha_star_R" => (dims.n_alpha, 1),
        "B_R" => (dims.p, dims.n_beta),
        "gamma_sigma" => (dims.n_sigma, 1),
        "Omega" => (dims.d(), dims.d()),
        "U" => (dims.n, dims.d()),
        "sigma2_alpha" => (1, 1),
        "sigma2_beta" => (dims.p, 1),
        _ => unreachable!("unknown block {block}"),
    }
}

pub fn write_store(store: &PosteriorStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        n_states: store.states.len(),
        dims: store.dims,
        config: store.config.clone(),
        acceptance: store.acceptance.clone(),
        rw_trace: store.rw_trace.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("meta.json"), json + "\n")?;
    for block in BLOCKS {
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("{block}.csv")))?);
        writeln!(out, "sample_index,flat_index,value")?;
        for (m, state) in store.states.iter().enumerate() {
            for (i, v) in block_values(state, block).iter().enumerate() {
                writeln!(out, "{m},{i},{v:?}")?;
            }
        }
        out.flush()?;
    }
    Ok(())
}

fn read_block(path: &Path, n_states: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut out = vec![Vec::with_capacity(len); n_states];
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "sample_index,flat_index,value" {
                return Err(Error::Parse(format!("{}: bad header", path.display())));
            }
            continue;
        }
        let bad = || Error::Parse(format!("{}:{}: malformed row", path.display(), lineno + 1));
        let mut parts = line.split(',');
        let m: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let i: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let v: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if m >= n_states || i != out[m].len() || i >= len {
            return Err(bad());
        }
        out[m].push(v);
    }
    if out.iter().any(|v| v.len() != len) {
        return Err(Error::Parse(format!("{}: incomplete block", path.display())));
    }
    Ok(out)
}

pub fn read_store(dir: &Path) -> Result<PosteriorStore> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let dims = manifest.dims;
    let mut states = vec![Parameters::zeros(&dims); manifest.n_states];
    for block in BLOCKS {
        let (r, c) = block_shape(&dims, block);
        let values = read_block(&dir.join(format!("{block}.csv")), manifest.n_states, r * c)?;
        for (state, v) in states.iter_mut().zip(values) {
            match block {
                "alpha_T" => state.alpha_t = DVector::from_vec(v),
                "B_T" => state.b_t = DMatrix::from_row_slice(r, c, &v),
                "alpha_star_R" => state.alpha_star_r = DVector::from_vec(v),
                "B_R" => state.b_r = DMatrix::from_row_slice(r, c, &v),
                "gamma_sigma" => state.gamma_sigma = DVector::from_vec(v),
                "Omega" => state.omega = DMatrix::from_row_slice(r, c, &v),
                "U" => state.u = DMatrix::from_row_slice(r, c, &v),
                "sigma2_alpha" => state.sigma2_alpha = v[0],
                "sigma2_beta" => state.sigma2_beta = DVector::from_vec(v),
                _ => unreachable!(),
            }
        }
    }
    Ok(PosteriorStore {
        config: manifest.config,
        dims,
        states,
        acceptance: manifest.acceptance,
        rw_trace: manifest.rw_trace,
    })
}

/// Write [`Parameters`] in the flat `name,index,value` format.
pub fn write_parameters<W: Write>(mut out: W, params: &Parameters) -> Result<()> {
    writeln!(out, "name,index,value")?;
    for (name, i, v) in params.to_named_values() {
        writeln!(out, "{name},{i},{v:?}")?;
    }
    Ok(())
}

pub fn read_parameters<R: BufRead>(input: R) -> Result<Parameters> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("parameters line {}: malformed row", lineno + 1));
        let mut parts = line.split(',');
        let name = parts.next().ok_or_else(bad)?.to_string();
        let i: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let v: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        rows.push((name, i, v));
    }
    Parameters::from_named_values(&rows)
}
