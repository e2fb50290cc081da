//! The one-wavelength log-variance toy and its grid posterior.

use super::*;
use jointspec::basis::{BasisSet, WavelengthGrid};
use jointspec::model::{Dataset, Dims, Parameters, Priors};
use jointspec::sampler::{self, GammaUpdate};
use nalgebra::{DMatrix, DVector};

/// One wavelength, intercept-only bases, residuals fixed: only γ_σ moves.
pub fn one_wavelength_toy(n: usize, seed: u64) -> (Parameters, Dataset, BasisSet) {
    let bases = BasisSet::intercept_only(1);
    let mut r = rng(seed);
    let resid = normal_vector(n, 0.7, &mut r);
    let data = Dataset::new(
        DMatrix::zeros(n, 1),
        DMatrix::zeros(n, 1),
        DMatrix::from_column_slice(n, 1, resid.as_slice()),
        WavelengthGrid::regular(500.0, 1.0, 1).unwrap(),
        (0..n).map(|i| format!("s{i}")).collect(),
    )
    .unwrap();
    let params = Parameters::zeros(&Dims::new(&data, &bases));
    (params, data, bases)
}

pub struct GridPosterior {
    pub xs: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

pub fn grid_posterior(params: &Parameters, data: &Dataset, bases: &BasisSet) -> GridPosterior {
    let ss = sampler::residual_sums_of_squares(params, data, bases);
    let n = data.n();
    let centre = (ss[0] / n as f64).ln();
    let half = 12.0 * (2.0 / n as f64).sqrt();
    let m = 20_001;
    let step = 2.0 * half / (m - 1) as f64;
    let xs: Vec<f64> = (0..m).map(|i| centre - half + step * i as f64).collect();
    let logd: Vec<f64> = xs
        .iter()
        .map(|&g| sampler::gamma_log_target(&DVector::from_element(1, g), &ss, n, &bases.k_sigma, &Priors::default()))
        .collect();
    let top = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logd.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = dens.iter().sum();
    let mut acc = 0.0;
    let cdf = dens
        .iter()
        .map(|d| {
            acc += d / total;
            acc
        })
        .collect();
    let mean = xs.iter().zip(&dens).map(|(x, d)| x * d).sum::<f64>() / total;
    let var = xs.iter().zip(&dens).map(|(x, d)| (x - mean).powi(2) * d).sum::<f64>() / total;
    GridPosterior { xs, cdf, mean, sd: var.sqrt() }
}

impl GridPosterior {
    pub fn cdf_at(&self, x: f64) -> f64 {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => self.cdf[i],
            Err(0) => 0.0,
            Err(i) if i >= self.xs.len() => 1.0,
            Err(i) => {
                let t = (x - self.xs[i - 1]) / (self.xs[i] - self.xs[i - 1]);
                self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1])
            }
        }
    }
}


/// Burn-in with window adaptation followed by `draws` retained γ values.
/// Returns the draws and the acceptance rate of the last burn-in window.
pub fn run_gamma_chain(params: &mut Parameters, data: &Dataset, bases: &BasisSet, burnin: usize, draws: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut r = rng(seed);
    let priors = Priors::default();
    let mut scale = 0.05;
    let (mut acc, mut prop) = (0, 0);
    let mut last_window = f64::NAN;
    for it in 0..burnin {
        let (a, p) = sampler::update_gamma_sigma(params, data, bases, &priors, scale, GammaUpdate::Block, &mut r);
        acc += a;
        prop += p;
        if (it + 1) % 200 == 0 {
            last_window = acc as f64 / prop as f64;
            scale = sampler::adapt_rw_scale(last_window, scale, 0.2, 0.6);
            acc = 0;
            prop = 0;
        }
    }
    let out = (0..draws)
        .map(|_| {
            sampler::update_gamma_sigma(params, data, bases, &priors, scale, GammaUpdate::Block, &mut r);
            params.gamma_sigma[0]
        })
        .collect();
    (out, last_window)
}
