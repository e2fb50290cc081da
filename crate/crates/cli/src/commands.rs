use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use jointspec::basis::BasisSpecs;
use jointspec::evaluate::compare_models;
use jointspec::geo::{abundance_pipeline, TargetSite};
use jointspec::model::{simulate_with_latent, standardize_covariates, CovariateTransform, Dims};
use jointspec::predict::{predict_site, summarize_posterior, IntervalTable, Observed, PartialSite};
use jointspec::synthetic::synthetic_truth;
use jointspec::{run_chain, store, BasisSet, Dataset, PosteriorStore, SamplerConfig};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{self, Block, Environment, Key, Manifest, ABUNDANCE};
use crate::error::{CliError, Result};

pub const RUN_RECORD: &str = "run.json";
pub const TRUTH: &str = "truth.csv";

/// Written next to a posterior store so later commands can rebuild the bases
/// and the preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub family: String,
    pub basis: BasisSpecs,
    pub dataset: Manifest,
    pub sampler: SamplerConfig,
}

impl RunRecord {
    pub fn bases(&self) -> Result<BasisSet> {
        Ok(BasisSet::from_specs(&self.dataset.grid()?, &self.basis)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn prepare(config: &RunConfig) -> Result<String> {
    let traits_path = config.existing("traits", &config.traits)?;
    let spectra_path = config.existing("spectra", &config.spectra)?;
    let env_path = config.existing("env", &config.env)?;
    let out = config.output_dir()?;

    let traits = data::read_block(&traits_path, true)?;
    let spectra = data::read_block(&spectra_path, true)?;
    let wavelengths = data::wavelengths(&spectra_path.display().to_string(), &spectra.names)?;
    let mut env = Environment::read(&env_path)?;
    if let Some(cover) = &config.cover {
        let cover_path = config.existing("cover", &Some(cover.clone()))?;
        add_abundance(&mut env, &cover_path)?;
    }
    let covariates = config.covariates.clone().unwrap_or_else(|| {
        env.columns.iter().filter(|c| !matches!(c.as_str(), "x" | "y")).cloned().collect()
    });
    let (env_rows, env_cols) = env.select(&env_path, &covariates)?;

    let mut rejected: Vec<String> = traits.rejected.iter().chain(&spectra.rejected).cloned().collect();
    let spectra_index = spectra.index();
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for (i, key) in traits.keys.iter().enumerate() {
        let Some(&j) = spectra_index.get(key) else {
            rejected.push(format!("{}: no spectrum", key.id()));
            continue;
        };
        let Some(&e) = env_rows.get(&key.site_id) else {
            rejected.push(format!("{}: site missing from environment file", key.id()));
            continue;
        };
        keys.push(key.clone());
        rows.push((i, j, e));
    }
    let trait_keys: HashSet<&Key> = traits.keys.iter().collect();
    for key in spectra.keys.iter().filter(|k| !trait_keys.contains(k)) {
        rejected.push(format!("{}: no traits", key.id()));
    }
    for r in &rejected {
        log::warn!("dropped {r}");
    }
    let n = rows.len();
    let t = DMatrix::from_fn(n, traits.names.len(), |r, k| traits.values[rows[r].0][k]);
    let refl = DMatrix::from_fn(n, wavelengths.len(), |r, k| spectra.values[rows[r].1][k]);
    let raw_e = DMatrix::from_fn(n, covariates.len(), |r, k| env.values[rows[r].2][env_cols[k]]);
    let (e, transform) = standardize_covariates(&raw_e)?;
    let grid = jointspec::WavelengthGrid::new(wavelengths.clone())?;
    let dataset = Dataset::new(e, t, refl, grid, keys.iter().map(Key::id).collect())?;
    let manifest = Manifest {
        family: config.family.clone(),
        trait_names: traits.names.clone(),
        covariates,
        wavelengths,
        log_traits: true,
        log_reflectance: true,
        covariate_transform: transform,
        n_observations: n,
        rejected,
    };
    data::write_dataset(&out, &dataset, &keys, &manifest)?;
    Ok(format!(
        "prepared {n} observations ({} traits, {} wavelengths, {} covariates) into {}; {} rows dropped\n",
        manifest.trait_names.len(),
        manifest.wavelengths.len(),
        manifest.covariates.len(),
        out.display(),
        manifest.rejected.len()
    ))
}

/// Krige summed family cover to every environment site as an `abundance` column.
fn add_abundance(env: &mut Environment, cover_path: &Path) -> Result<()> {
    let records = data::read_cover(cover_path)?;
    let targets: Vec<TargetSite> = env
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| TargetSite {
            site_id: s.clone(),
            x: env.x[i],
            y: env.y[i],
        })
        .collect();
    let result = abundance_pipeline(&records, &targets)?;
    log::info!("abundance variogram: {:?}", result.model);
    let by_site: HashMap<String, f64> = result.estimates.into_iter().collect();
    env.add_column(ABUNDANCE, &by_site);
    Ok(())
}

pub fn simulate(config: &RunConfig) -> Result<String> {
    let out = config.output_dir()?;
    let grid = config.simulation_grid()?;
    let specs = config.basis.specs();
    let bases = BasisSet::from_specs(&grid, &specs)?;
    let seed = config.synthetic.seed;
    let (truth, e) = match &config.truth {
        Some(_) => {
            let path = config.existing("truth", &config.truth)?;
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let truth = store::read_parameters(std::io::BufReader::new(file))?;
            let n = if truth.u.nrows() > 0 { truth.u.nrows() } else { config.synthetic.n };
            let dims = Dims::from_parts(n, truth.b_t.ncols(), truth.s(), &bases);
            let mut check = truth.clone();
            check.u = DMatrix::zeros(n, dims.d());
            check.validate(&dims)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let cols: Vec<DVector<f64>> = (0..n).map(|_| jointspec::linalg::standard_normal_vector(dims.p, &mut rng)).collect();
            (truth, DMatrix::from_fn(n, dims.p, |j, k| cols[j][k]))
        }
        None => synthetic_truth(&config.synthetic, &bases)?,
    };
    let sim = simulate_with_latent(&truth, &e, &bases, &grid, seed.wrapping_add(1))?;
    let mut truth = truth;
    truth.u = sim.u;
    let keys: Vec<Key> = (0..e.nrows())
        .map(|j| Key {
            site_id: format!("sim{j:04}"),
            species: "synthetic".into(),
        })
        .collect();
    let data = Dataset {
        site_ids: keys.iter().map(Key::id).collect(),
        ..sim.data
    };
    let manifest = Manifest {
        family: config.family.clone(),
        trait_names: (1..=truth.s()).map(|k| format!("t{k}")).collect(),
        covariates: (1..=e.ncols()).map(|k| format!("e{k}")).collect(),
        wavelengths: grid.values().to_vec(),
        log_traits: false,
        log_reflectance: false,
        covariate_transform: CovariateTransform::identity(e.ncols()),
        n_observations: e.nrows(),
        rejected: Vec::new(),
    };
    data::write_dataset(&out, &data, &keys, &manifest)?;
    let mut buf = Vec::new();
    store::write_parameters(&mut buf, &truth)?;
    let path = out.join(TRUTH);
    fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
    Ok(format!("simulated {} observations on {} wavelengths into {}\n", data.n(), grid.len(), out.display()))
}

pub fn fit(config: &RunConfig) -> Result<String> {
    let data_dir = config.existing("data", &config.data)?;
    let (data, manifest) = data::load_dataset(&data_dir)?;
    let out = config.output_dir()?;
    let specs = config.basis.specs();
    let bases = BasisSet::from_specs(&data.grid, &specs)?;
    config.sampler.validate()?;
    let posterior = run_chain(&data, &bases, &config.sampler)?;
    store::write_store(&posterior, &out)?;
    let record = RunRecord {
        command: "fit".into(),
        family: manifest.family.clone(),
        basis: specs,
        dataset: manifest,
        sampler: config.sampler.clone(),
    };
    data::write_json(&out.join(RUN_RECORD), &record)?;
    let a = &posterior.acceptance;
    let last = a.last_burnin_window_rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
    Ok(format!(
        "fit {} ({}): {} states retained from {} iterations into {}\n\
         gamma_sigma acceptance: burn-in {:.3}, sampling {:.3}, last burn-in window {last}, final scale {:.4}\n",
        record.family,
        config.sampler.variant,
        posterior.len(),
        config.sampler.n_iterations,
        out.display(),
        a.burnin_rate(),
        a.sampling_rate(),
        a.final_rw_scale
    ))
}

fn load_fit(config: &RunConfig) -> Result<(PosteriorStore, RunRecord, BasisSet, PathBuf)> {
    let dir = config.existing("store", &config.store)?;
    let record: RunRecord = data::read_json(&dir.join(RUN_RECORD))?;
    let posterior = store::read_store(&dir)?;
    let bases = record.bases()?;
    let dims = &posterior.dims;
    let m = &record.dataset;
    if dims.s != m.trait_names.len() || dims.p != m.covariates.len() || dims.w != m.wavelengths.len() {
        return Err(CliError::Config(format!("{}: store dimensions disagree with its run record", dir.display())));
    }
    Ok((posterior, record, bases, dir))
}

fn partial_block(config: &RunConfig, key: &str, path: &Option<PathBuf>, log: bool) -> Result<Option<Block>> {
    path.as_ref()
        .map(|p| {
            let p = config.existing(key, &Some(p.clone()))?;
            data::read_block(&p, log)
        })
        .transpose()
}

pub fn predict(config: &RunConfig) -> Result<String> {
    let (posterior, record, bases, _) = load_fit(config)?;
    let m = &record.dataset;
    let env_path = config.existing("partial_env", &config.partial_env)?;
    let mut env = Environment::read(&env_path)?;
    if m.covariates.iter().any(|c| c == ABUNDANCE) && !env.columns.iter().any(|c| c == ABUNDANCE) {
        let cover = config.existing("cover", &config.cover)?;
        add_abundance(&mut env, &cover)?;
    }
    let (env_rows, env_cols) = env.select(&env_path, &m.covariates)?;
    let traits = partial_block(config, "partial_traits", &config.partial_traits, m.log_traits)?;
    let spectra = partial_block(config, "partial_spectra", &config.partial_spectra, m.log_reflectance)?;
    if traits.is_none() && spectra.is_none() {
        return Err(CliError::Config("predict needs `partial_traits` or `partial_spectra`".into()));
    }
    if let Some(t) = &traits {
        if t.names != m.trait_names {
            return Err(CliError::Config(format!("partial traits columns {:?} differ from the fitted {:?}", t.names, m.trait_names)));
        }
    }
    if let Some(s) = &spectra {
        let file = config.partial_spectra.as_ref().unwrap().display().to_string();
        if data::wavelengths(&file, &s.names)? != m.wavelengths {
            return Err(CliError::Header {
                file,
                msg: "wavelengths differ from the fitted grid".into(),
            });
        }
    }
    let mut keys: Vec<Key> = Vec::new();
    for block in [&traits, &spectra].into_iter().flatten() {
        for k in &block.keys {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let lookup = |block: &Option<Block>, key: &Key| -> Option<DVector<f64>> {
        let b = block.as_ref()?;
        let i = b.keys.iter().position(|k| k == key)?;
        Some(DVector::from_vec(b.values[i].clone()))
    };

    let mut out_csv = String::from("site_id,quantity,index_or_wavelength,mean,q05,q95\n");
    for (i, key) in keys.iter().enumerate() {
        let Some(&row) = env_rows.get(&key.site_id) else {
            return Err(CliError::Config(format!("site {} missing from {}", key.site_id, env_path.display())));
        };
        let raw: Vec<f64> = env_cols.iter().map(|&c| env.values[row][c]).collect();
        let e = m.covariate_transform.apply_row(&raw)?;
        let site = PartialSite::from_blocks(key.id(), e, lookup(&traits, key), lookup(&spectra, key))?;
        let pred = predict_site(&posterior, &site, &bases, config.sampler.seed.wrapping_add(i as u64))?;
        let labels: Vec<(String, String)> = match site.observed {
            Observed::Spectrum(_) => m.trait_names.iter().enumerate().map(|(k, n)| (n.clone(), k.to_string())).collect(),
            Observed::Traits(_) => m.wavelengths.iter().map(|w| ("reflectance".to_string(), w.to_string())).collect(),
        };
        for (k, (quantity, index)) in labels.iter().enumerate() {
            let _ = writeln!(
                out_csv,
                "{},{quantity},{index},{:?},{:?},{:?}",
                site.site_id, pred.mean[k], pred.q05[k], pred.q95[k]
            );
        }
    }
    let out = config.output_dir()?;
    write_text(&out.join("predictions.csv"), &out_csv)?;
    Ok(format!("predicted {} sites into {}\n", keys.len(), out.join("predictions.csv").display()))
}

pub fn cv(config: &RunConfig) -> Result<String> {
    let data_dir = config.existing("data", &config.data)?;
    let (data, manifest) = data::load_dataset(&data_dir)?;
    let out = config.output_dir()?;
    let bases = BasisSet::from_specs(&data.grid, &config.basis.specs())?;
    config.sampler.validate()?;
    let report = compare_models(&data, &bases, &config.sampler, config.folds)?.with_trait_names(&manifest.trait_names);
    write_text(&out.join("report.csv"), &report.to_csv())?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    let mut folds = String::from("fold,model,trait_es,spectrum_es\n");
    for r in [&report.independent, &report.joint] {
        for f in &r.folds {
            let _ = writeln!(folds, "{},{},{:?},{:?}", f.fold, r.variant, f.trait_es, f.spectrum_es);
        }
    }
    write_text(&out.join("folds.csv"), &folds)?;
    data::write_json(&out.join("fold_plan.json"), &report.plan)?;
    Ok(table)
}

fn interval_rows(out: &mut String, table: &IntervalTable, row_label: &dyn Fn(usize) -> String, col_label: &dyn Fn(usize) -> String) {
    for i in 0..table.rows {
        for j in 0..table.cols {
            let v = table.get(i, j);
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{}",
                row_label(i),
                col_label(j),
                v.mean,
                v.q05,
                v.q95,
                v.excludes_zero()
            );
        }
    }
}

pub fn report(config: &RunConfig) -> Result<String> {
    let (posterior, record, bases, _) = load_fit(config)?;
    let summary = summarize_posterior(&posterior, &bases)?;
    let out = config.output_dir()?;
    let m = &record.dataset;
    let traits = |i: usize| m.trait_names[i].clone();
    let covs = |i: usize| m.covariates[i].clone();
    let wl = |i: usize| m.wavelengths[i].to_string();

    let mut corr = String::from("trait,wavelength,mean,q05,q95,significant\n");
    interval_rows(&mut corr, &summary.correlations, &traits, &wl);
    write_text(&out.join("correlations.csv"), &corr)?;
    let mut curves = String::from("covariate,wavelength,mean,q05,q95,significant\n");
    interval_rows(&mut curves, &summary.coefficient_curves, &covs, &wl);
    write_text(&out.join("coefficient_functions.csv"), &curves)?;
    let mut coefs = String::from("trait,covariate,mean,q05,q95,significant\n");
    interval_rows(&mut coefs, &summary.trait_coefficients, &traits, &covs);
    write_text(&out.join("trait_coefficients.csv"), &coefs)?;
    Ok(format!("wrote correlation, coefficient-function and trait-coefficient tables from {} states into {}\n", posterior.len(), out.display()))
}
