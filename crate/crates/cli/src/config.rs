//! Flat `key = value` run configuration.
//!
//! Sampler settings use the field names of [`SamplerConfig`]; prior
//! hyperparameters take a `prior_` prefix and synthetic-data settings a
//! `synthetic_` prefix. Relative paths resolve against the config file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use jointspec::basis::{BasisSpecs, WavelengthGrid};
use jointspec::synthetic::SyntheticSpec;
use jointspec::{ModelVariant, SamplerConfig};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{CliError, Result};

const SAMPLER_KEYS: [&str; 12] = [
    "n_iterations",
    "n_burnin",
    "n_keep",
    "rw_scale",
    "target_accept_low",
    "target_accept_high",
    "adapt_window",
    "seed",
    "jitter",
    "gamma_update",
    "fixed_effects",
    "variant",
];

const PRIOR_KEYS: [&str; 10] = [
    "alpha_t_var",
    "b_t_var",
    "alpha_r_intercept_var",
    "b_r_intercept_var",
    "gamma_intercept_var",
    "gamma_var",
    "shrink_shape",
    "shrink_rate",
    "omega_scale",
    "omega_dof",
];

const SYNTHETIC_KEYS: [&str; 10] = [
    "n",
    "p",
    "s",
    "cross_strength",
    "trait_loading",
    "spectrum_loading",
    "trait_noise",
    "spectrum_re_noise",
    "noise_variance",
    "seed",
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Paths {
    traits: Option<PathBuf>,
    spectra: Option<PathBuf>,
    env: Option<PathBuf>,
    cover: Option<PathBuf>,
    data: Option<PathBuf>,
    store: Option<PathBuf>,
    output: Option<PathBuf>,
    truth: Option<PathBuf>,
    partial_env: Option<PathBuf>,
    partial_traits: Option<PathBuf>,
    partial_spectra: Option<PathBuf>,
    family: Option<String>,
    covariates: Option<Vec<String>>,
    basis: Option<String>,
    grid_start: Option<f64>,
    grid_step: Option<f64>,
    grid_len: Option<usize>,
    folds: Option<usize>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub variant: Option<ModelVariant>,
    pub iterations: Option<usize>,
    pub burnin: Option<usize>,
    pub keep: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisChoice {
    Default,
    Reduced,
}

impl BasisChoice {
    pub fn specs(self) -> BasisSpecs {
        match self {
            BasisChoice::Default => BasisSpecs::default(),
            BasisChoice::Reduced => BasisSpecs::reduced(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub traits: Option<PathBuf>,
    pub spectra: Option<PathBuf>,
    pub env: Option<PathBuf>,
    pub cover: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub partial_env: Option<PathBuf>,
    pub partial_traits: Option<PathBuf>,
    pub partial_spectra: Option<PathBuf>,
    pub family: String,
    pub covariates: Option<Vec<String>>,
    pub basis: BasisChoice,
    pub grid_start: Option<f64>,
    pub grid_step: Option<f64>,
    pub grid_len: Option<usize>,
    pub folds: usize,
    pub sampler: SamplerConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_table(Table::new(), Path::new(".")).expect("empty config is valid")
    }
}

fn invalid(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid value for `{key}`: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::from_table(table, &base)
    }

    pub fn from_table(mut table: Table, base: &Path) -> Result<Self> {
        for (key, value) in &table {
            if matches!(value, Value::Table(_)) {
                return Err(CliError::Config(format!("`{key}`: nested tables are not supported; use flat keys")));
            }
        }
        let mut sampler = Table::new();
        let mut priors = Table::new();
        let mut synthetic = Table::new();
        let keys: Vec<String> = table.keys().cloned().collect();
        for key in keys {
            if SAMPLER_KEYS.contains(&key.as_str()) {
                sampler.insert(key.clone(), table.remove(&key).unwrap());
            } else if let Some(name) = key.strip_prefix("prior_") {
                priors.insert(name.to_string(), table.remove(&key).unwrap());
            } else if let Some(name) = key.strip_prefix("synthetic_") {
                synthetic.insert(name.to_string(), table.remove(&key).unwrap());
            }
        }
        let seed = sampler.get("seed").cloned();
        if let Some(key) = priors.keys().find(|k| !PRIOR_KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key `prior_{key}`")));
        }
        if let Some(key) = synthetic.keys().find(|k| !SYNTHETIC_KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key `synthetic_{key}`")));
        }
        sampler.insert("priors".into(), Value::Table(priors));
        let sampler: SamplerConfig = Value::Table(sampler).try_into().map_err(|e| invalid("sampler settings", e))?;
        if let Some(seed) = seed.filter(|_| !synthetic.contains_key("seed")) {
            synthetic.insert("seed".into(), seed);
        }
        let synthetic: SyntheticSpec = Value::Table(synthetic).try_into().map_err(|e| invalid("synthetic_*", e))?;
        let paths: Paths = Value::Table(table).try_into().map_err(|e| CliError::Config(format!("{e}")))?;

        let basis = match paths.basis.as_deref() {
            None | Some("default") => BasisChoice::Default,
            Some("reduced") => BasisChoice::Reduced,
            Some(other) => return Err(invalid("basis", format!("`{other}` (expected default or reduced)"))),
        };
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let config = Self {
            traits: resolve(paths.traits),
            spectra: resolve(paths.spectra),
            env: resolve(paths.env),
            cover: resolve(paths.cover),
            data: resolve(paths.data),
            store: resolve(paths.store),
            output: resolve(paths.output),
            truth: resolve(paths.truth),
            partial_env: resolve(paths.partial_env),
            partial_traits: resolve(paths.partial_traits),
            partial_spectra: resolve(paths.partial_spectra),
            family: paths.family.unwrap_or_else(|| "unlabelled".into()),
            covariates: paths.covariates,
            basis,
            grid_start: paths.grid_start,
            grid_step: paths.grid_step,
            grid_len: paths.grid_len,
            folds: paths.folds.unwrap_or(10),
            sampler,
            synthetic,
        };
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.sampler.seed = seed;
            self.synthetic.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        if let Some(v) = o.variant {
            self.sampler.variant = v;
        }
        if let Some(n) = o.iterations {
            self.sampler.n_iterations = n;
        }
        if let Some(n) = o.burnin {
            self.sampler.n_burnin = n;
        }
        if let Some(n) = o.keep {
            self.sampler.n_keep = n;
        }
    }

    /// A path that must name an existing file or directory.
    pub fn existing(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let path = value.clone().ok_or_else(|| CliError::Config(format!("`{key}` is required for this command")))?;
        if !path.exists() {
            return Err(CliError::Config(format!("`{key}` = {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Create the output directory and check that it accepts writes.
    pub fn output_dir(&self) -> Result<PathBuf> {
        let dir = self
            .output
            .clone()
            .ok_or_else(|| CliError::Config("`output` is required (config key or --output)".into()))?;
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::io(&dir, e))?;
        fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))?;
        Ok(dir)
    }

    /// Wavelength grid for simulation: explicit keys, else the basis choice's natural grid.
    pub fn simulation_grid(&self) -> Result<WavelengthGrid> {
        let (start, step, len) = match self.basis {
            BasisChoice::Default => (450.0, 1.0, 500),
            BasisChoice::Reduced => (450.0, 10.0, 50),
        };
        Ok(WavelengthGrid::regular(
            self.grid_start.unwrap_or(start),
            self.grid_step.unwrap_or(step),
            self.grid_len.unwrap_or(len),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_table(text.parse().unwrap(), Path::new("/base"))
    }

    #[test]
    fn empty_config_gives_library_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.sampler, SamplerConfig::default());
        assert_eq!(c.synthetic, SyntheticSpec::default());
        assert_eq!(c.basis, BasisChoice::Default);
        assert_eq!(c.folds, 10);
    }

    #[test]
    fn flat_keys_reach_sampler_priors_and_synthetic_spec() {
        let c = parse(
            "n_iterations = 300\nseed = 9\nvariant = \"independent\"\nfixed_effects = \"conditional\"\n\
             prior_omega_scale = 0.01\nsynthetic_n = 40\nbasis = \"reduced\"\ndata = \"prep\"",
        )
        .unwrap();
        assert_eq!(c.sampler.n_iterations, 300);
        assert_eq!(c.sampler.seed, 9);
        assert_eq!(c.sampler.variant, ModelVariant::Independent);
        assert_eq!(c.sampler.fixed_effects, jointspec::FixedEffectsUpdate::Conditional);
        assert_eq!(c.sampler.priors.omega_scale, 0.01);
        assert_eq!(c.sampler.priors.b_t_var, 1e3);
        assert_eq!(c.synthetic.n, 40);
        assert_eq!(c.synthetic.seed, 9);
        assert_eq!(c.basis, BasisChoice::Reduced);
        assert_eq!(c.data, Some(PathBuf::from("/base/prep")));
    }

    #[test]
    fn unknown_and_nested_keys_are_rejected() {
        assert!(parse("n_iteration = 3").is_err());
        assert!(parse("prior_bogus = 1.0").is_err());
        assert!(parse("synthetic_bogus = 1.0").is_err());
        assert!(parse("[sampler]\nn_iterations = 3").is_err());
        assert!(parse("basis = \"fine\"").is_err());
        assert!(parse("n_keep = \"many\"").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = parse("seed = 1\nn_keep = 5").unwrap();
        c.apply(&Overrides {
            seed: Some(4),
            keep: Some(7),
            iterations: Some(100),
            ..Overrides::default()
        });
        assert_eq!((c.sampler.seed, c.synthetic.seed, c.sampler.n_keep, c.sampler.n_iterations), (4, 4, 7, 100));
    }
}
