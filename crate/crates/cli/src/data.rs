//! Raw and canonical CSV files, and the transform manifest.
//!
//! Raw inputs:
//! * traits `site_id,species,<trait>...` (positive values);
//! * spectra `site_id,species,w450,...` (positive reflectance);
//! * environment `site_id,<covariate>...,x,y`;
//! * cover `site_id,x,y,cover_percent`.
//!
//! A prepared dataset directory holds `traits.csv`, `spectra.csv` and
//! `covariates.csv` on the model scale, keyed by `site_id,species`, plus
//! `manifest.json`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use jointspec::basis::WavelengthGrid;
use jointspec::model::CovariateTransform;
use jointspec::Dataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const ABUNDANCE: &str = "abundance";

/// Everything needed to put new raw inputs on the fitted model's scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family: String,
    pub trait_names: Vec<String>,
    pub covariates: Vec<String>,
    pub wavelengths: Vec<f64>,
    pub log_traits: bool,
    pub log_reflectance: bool,
    pub covariate_transform: CovariateTransform,
    pub n_observations: usize,
    /// Raw rows dropped during preparation, as `file:row: reason`.
    pub rejected: Vec<String>,
}

impl Manifest {
    pub fn grid(&self) -> Result<WavelengthGrid> {
        Ok(WavelengthGrid::new(self.wavelengths.clone())?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Header {
        file: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// A parsed CSV: header plus `(line number, fields)` rows.
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(&file, e))?;
        let header: Vec<String> = reader.headers().map_err(|e| csv_error(&file, e))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&file, e))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Self { file, header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| CliError::Header {
            file: self.file.clone(),
            msg: format!("missing column `{name}`"),
        })
    }

    fn expect_prefix(&self, names: &[&str]) -> Result<()> {
        if self.header.len() < names.len() || self.header[..names.len()] != *names {
            return Err(CliError::Header {
                file: self.file.clone(),
                msg: format!("header must start with `{}`", names.join(",")),
            });
        }
        Ok(())
    }

    pub fn schema(&self, row: u64, msg: impl Into<String>) -> CliError {
        CliError::Schema {
            file: self.file.clone(),
            row,
            msg: msg.into(),
        }
    }

    pub fn number(&self, row: u64, fields: &[String], col: usize) -> Result<f64> {
        let text = &fields[col];
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.schema(row, format!("column `{}`: `{text}` is not a finite number", self.header[col])))
    }
}

fn csv_error(file: &str, e: csv::Error) -> CliError {
    let row = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(file, source),
        kind => CliError::Schema {
            file: file.to_string(),
            row,
            msg: format!("{kind:?}"),
        },
    }
}

/// Observation key: one species at one site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key {
    pub site_id: String,
    pub species: String,
}

impl Key {
    pub fn id(&self) -> String {
        format!("{}:{}", self.site_id, self.species)
    }
}

/// Per-key response values, duplicates averaged, in first-seen order.
pub struct Block {
    pub names: Vec<String>,
    pub keys: Vec<Key>,
    pub values: Vec<Vec<f64>>,
    pub rejected: Vec<String>,
}

impl Block {
    pub fn index(&self) -> HashMap<&Key, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect()
    }
}

/// Read a `site_id,species,...` response file. With `log`, values must be
/// positive; offending rows are dropped and listed in `rejected`.
pub fn read_block(path: &Path, log: bool) -> Result<Block> {
    let table = Table::read(path)?;
    table.expect_prefix(&["site_id", "species"])?;
    let names: Vec<String> = table.header[2..].to_vec();
    if names.is_empty() {
        return Err(CliError::Header {
            file: table.file.clone(),
            msg: "no value columns".into(),
        });
    }
    let mut order: Vec<Key> = Vec::new();
    let mut sums: HashMap<Key, (Vec<f64>, usize)> = HashMap::new();
    let mut rejected = Vec::new();
    for (line, fields) in &table.rows {
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(table.schema(*line, "empty site_id or species"));
        }
        let values = (2..fields.len()).map(|c| table.number(*line, fields, c)).collect::<Result<Vec<f64>>>()?;
        if log {
            if let Some(c) = values.iter().position(|v| *v <= 0.0) {
                let reason = format!("{}:{line}: nonpositive `{}` cannot be log-transformed", table.file, names[c]);
                log::warn!("rejecting row: {reason}");
                rejected.push(reason);
                continue;
            }
        }
        let key = Key {
            site_id: fields[0].clone(),
            species: fields[1].clone(),
        };
        let entry = sums.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (vec![0.0; values.len()], 0)
        });
        for (s, v) in entry.0.iter_mut().zip(&values) {
            *s += v;
        }
        entry.1 += 1;
    }
    let values = order
        .iter()
        .map(|k| {
            let (sum, count) = &sums[k];
            sum.iter()
                .map(|s| {
                    let mean = s / *count as f64;
                    if log {
                        mean.ln()
                    } else {
                        mean
                    }
                })
                .collect()
        })
        .collect();
    Ok(Block {
        names,
        keys: order,
        values,
        rejected,
    })
}

/// Wavelengths encoded in `w<nm>` spectrum headers.
pub fn wavelengths(file: &str, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            n.strip_prefix('w').and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| CliError::Header {
                file: file.to_string(),
                msg: format!("spectrum column `{n}` is not of the form w<wavelength>"),
            })
        })
        .collect()
}

pub fn wavelength_header(w: f64) -> String {
    format!("w{w}")
}

/// Raw per-site environment rows, with x and y.
pub struct Environment {
    pub columns: Vec<String>,
    pub sites: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Environment {
    pub fn read(path: &Path) -> Result<Self> {
        let table = Table::read(path)?;
        table.expect_prefix(&["site_id"])?;
        let (cx, cy) = (table.column("x")?, table.column("y")?);
        let mut env = Self {
            columns: table.header[1..].to_vec(),
            sites: Vec::new(),
            values: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        let mut seen = HashMap::new();
        for (line, fields) in &table.rows {
            if seen.insert(fields[0].clone(), *line).is_some() {
                return Err(table.schema(*line, format!("duplicate site_id `{}`", fields[0])));
            }
            let values = (1..fields.len()).map(|c| table.number(*line, fields, c)).collect::<Result<Vec<f64>>>()?;
            env.x.push(values[cx - 1]);
            env.y.push(values[cy - 1]);
            env.sites.push(fields[0].clone());
            env.values.push(values);
        }
        Ok(env)
    }

    pub fn add_column(&mut self, name: &str, by_site: &HashMap<String, f64>) {
        self.columns.push(name.to_string());
        for (site, row) in self.sites.iter().zip(&mut self.values) {
            row.push(by_site[site]);
        }
    }

    /// Row index per site and the column indices of `names`.
    pub fn select(&self, file: &Path, names: &[String]) -> Result<(HashMap<String, usize>, Vec<usize>)> {
        let cols = names
            .iter()
            .map(|n| {
                self.columns.iter().position(|c| c == n).ok_or_else(|| CliError::Header {
                    file: file.display().to_string(),
                    msg: format!("missing covariate column `{n}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self.sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok((rows, cols))
    }
}

pub fn read_cover(path: &Path) -> Result<Vec<jointspec::geo::CoverRecord>> {
    let table = Table::read(path)?;
    table.expect_prefix(&["site_id", "x", "y", "cover_percent"])?;
    table
        .rows
        .iter()
        .map(|(line, f)| {
            let cover = table.number(*line, f, 3)?;
            if cover < 0.0 {
                return Err(table.schema(*line, "cover_percent is negative"));
            }
            Ok(jointspec::geo::CoverRecord {
                site_id: f[0].clone(),
                x: table.number(*line, f, 1)?,
                y: table.number(*line, f, 2)?,
                cover_percent: cover,
            })
        })
        .collect()
}

fn write_matrix(path: &Path, names: &[String], keys: &[Key], m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::from("site_id,species");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, k) in keys.iter().enumerate() {
        out.push_str(&k.site_id);
        out.push(',');
        out.push_str(&k.species);
        for v in m.row(i).iter() {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Key>, DMatrix<f64>)> {
    let table = Table::read(path)?;
    table.expect_prefix(&["site_id", "species"])?;
    let names = table.header[2..].to_vec();
    let mut keys = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len() * names.len());
    for (line, f) in &table.rows {
        keys.push(Key {
            site_id: f[0].clone(),
            species: f[1].clone(),
        });
        for c in 2..f.len() {
            values.push(table.number(*line, f, c)?);
        }
    }
    Ok((names.clone(), keys, DMatrix::from_row_slice(table.rows.len(), names.len(), &values)))
}

pub fn write_dataset(dir: &Path, data: &Dataset, keys: &[Key], manifest: &Manifest) -> Result<()> {
    let wl: Vec<String> = data.grid.values().iter().map(|w| wavelength_header(*w)).collect();
    write_matrix(&dir.join("traits.csv"), &manifest.trait_names, keys, &data.t)?;
    write_matrix(&dir.join("spectra.csv"), &wl, keys, &data.r)?;
    write_matrix(&dir.join("covariates.csv"), &manifest.covariates, keys, &data.e)?;
    manifest.write(dir)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest = Manifest::read(dir)?;
    let (trait_names, keys, t) = read_matrix(&dir.join("traits.csv"))?;
    let (wl, rkeys, r) = read_matrix(&dir.join("spectra.csv"))?;
    let (covs, ekeys, e) = read_matrix(&dir.join("covariates.csv"))?;
    let file = dir.display().to_string();
    if keys != rkeys || keys != ekeys {
        return Err(CliError::Header {
            file,
            msg: "traits, spectra and covariates rows are not aligned".into(),
        });
    }
    if trait_names != manifest.trait_names || covs != manifest.covariates {
        return Err(CliError::Header {
            file,
            msg: "column names disagree with the manifest".into(),
        });
    }
    if wavelengths(&file, &wl)? != manifest.wavelengths {
        return Err(CliError::Header {
            file,
            msg: "spectrum wavelengths disagree with the manifest".into(),
        });
    }
    let ids = keys.iter().map(Key::id).collect();
    Ok((Dataset::new(e, t, r, manifest.grid()?, ids)?, manifest))
}
