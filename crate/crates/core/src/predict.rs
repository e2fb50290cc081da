//! Conditional prediction for sites where only one response block was measured,
//! and interval summaries of the posterior.
//!
//! For each posterior state the predictive distribution is Gaussian. Traits
//! given a spectrum: infer `U^R` from the spectrum under its marginal prior
//! `N(0, Ω^R)`, then draw `U^T | U^R`. Spectrum given traits: the trait
//! residual fixes `U^T`, and `U^R | U^T` follows the conditional normal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::linalg::{self, GaussianCanonical, DEFAULT_JITTER};
use crate::model::{self, Parameters};
use crate::sampler::PosteriorStore;

#[derive(Clone, Debug, PartialEq)]
pub enum Observed {
    Traits(DVector<f64>),
    Spectrum(DVector<f64>),
}

/// A site with standardized covariates and exactly one observed response block.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialSite {
    pub site_id: String,
    pub e: DVector<f64>,
    pub observed: Observed,
}

impl PartialSite {
    /// Build from optional blocks; exactly one must be present.
    pub fn from_blocks(site_id: String, e: DVector<f64>, traits: Option<DVector<f64>>, spectrum: Option<DVector<f64>>) -> Result<Self> {
        let observed = match (traits, spectrum) {
            (Some(t), None) => Observed::Traits(t),
            (None, Some(r)) => Observed::Spectrum(r),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(format!("site {site_id}: both traits and spectrum observed")))
            }
            (None, None) => return Err(Error::InvalidInput(format!("site {site_id}: no response observed"))),
        };
        Ok(Self { site_id, e, observed })
    }
}

/// M predictive draws (rows) with pointwise summaries.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    pub draws: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub q05: DVector<f64>,
    pub q95: DVector<f64>,
}

impl PredictionSet {
    pub fn from_draws(draws: DMatrix<f64>) -> Result<Self> {
        if draws.nrows() == 0 {
            return Err(Error::InvalidInput("no predictive draws".into()));
        }
        let dim = draws.ncols();
        let mut mean = DVector::zeros(dim);
        let mut q05 = DVector::zeros(dim);
        let mut q95 = DVector::zeros(dim);
        for k in 0..dim {
            let mut col: Vec<f64> = draws.column(k).iter().copied().collect();
            mean[k] = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            q05[k] = quantile_sorted(&col, 0.05);
            q95[k] = quantile_sorted(&col, 0.95);
        }
        Ok(Self { draws, mean, q05, q95 })
    }

    pub fn draw_vectors(&self) -> Vec<DVector<f64>> {
        self.draws.row_iter().map(|r| r.transpose()).collect()
    }
}

/// Linear-interpolation quantile (the usual "type 7") of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaussian conditional of U^R given an observed spectrum (marginal prior N(0, Ω^R)).
pub fn latent_u_given_spectrum(params: &Parameters, bases: &BasisSet, e: &DVector<f64>, r: &DVector<f64>) -> Result<GaussianCanonical> {
    if r.len() != bases.n_wavelengths() {
        return Err(Error::dim("observed spectrum", bases.n_wavelengths(), r.len()));
    }
    let prec_w = model::wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?.map(|v| 1.0 / v);
    let resid = r - model::fixed_spectrum(params, bases, e);
    let q = bases.n_u();
    let ku_scaled = DMatrix::from_fn(bases.n_wavelengths(), q, |i, l| bases.k_u[(i, l)] * prec_w[i]);
    let rr_inv = linalg::spd_inverse(&params.omega_blocks().rr, DEFAULT_JITTER, "Omega_R")?;
    let precision = bases.k_u.transpose() * &ku_scaled + rr_inv;
    let linear = ku_scaled.transpose() * resid;
    GaussianCanonical::new(precision, linear)
}

pub fn infer_latent_u_from_r<R: Rng + ?Sized>(
    params: &Parameters,
    site: &PartialSite,
    bases: &BasisSet,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let Observed::Spectrum(r) = &site.observed else {
        return Err(Error::InvalidInput(format!("site {}: spectrum not observed", site.site_id)));
    };
    Ok(latent_u_given_spectrum(params, bases, &site.e, r)?
        .factor(DEFAULT_JITTER, "latent U_R precision")?
        .draw(rng))
}

/// Moments of the trait conditional U^T | U^R: (A, S) with mean A·U^R and covariance S.
fn trait_given_latent(params: &Parameters) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let b = params.omega_blocks();
    let rr_inv = linalg::spd_inverse(&b.rr, DEFAULT_JITTER, "Omega_R")?;
    let a = &b.tr * rr_inv;
    let mut cov = &b.tt - &a * b.tr.transpose();
    linalg::symmetrize(&mut cov);
    Ok((a, cov))
}

/// Moments of U^R | U^T: (G, S) with mean G·U^T and covariance S.
fn latent_given_traits(params: &Parameters) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let b = params.omega_blocks();
    let tt_inv = linalg::spd_inverse(&b.tt, DEFAULT_JITTER, "Omega_T")?;
    let g = b.tr.transpose() * tt_inv;
    let mut cov = &b.rr - &g * &b.tr;
    linalg::symmetrize(&mut cov);
    Ok((g, cov))
}

/// Exact predictive mean and covariance of T given R for one posterior state.
pub fn trait_predictive_moments(params: &Parameters, bases: &BasisSet, e: &DVector<f64>, r: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let latent = latent_u_given_spectrum(params, bases, e, r)?.factor(DEFAULT_JITTER, "latent U_R precision")?;
    let (a, s) = trait_given_latent(params)?;
    let mean = model::fixed_traits(params, e) + &a * latent.mean();
    let cov = s + &a * latent.covariance() * a.transpose();
    Ok((mean, cov))
}

/// Exact predictive mean and covariance of R given T for one posterior state.
pub fn spectrum_predictive_moments(params: &Parameters, bases: &BasisSet, e: &DVector<f64>, t: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let u_t = t - model::fixed_traits(params, e);
    let (g, s) = latent_given_traits(params)?;
    let sigma2 = model::wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?;
    let mean = model::fixed_spectrum(params, bases, e) + &bases.k_u * (g * u_t);
    let mut cov = &bases.k_u * s * bases.k_u.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += sigma2[i];
    }
    Ok((mean, cov))
}

fn state_rng(seed: u64, m: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

fn draw_traits_given_r(params: &Parameters, site: &PartialSite, bases: &BasisSet, rng: &mut ChaCha20Rng) -> Result<DVector<f64>> {
    let u_r = infer_latent_u_from_r(params, site, bases, rng)?;
    let (a, s) = trait_given_latent(params)?;
    let chol = linalg::cholesky(&s, DEFAULT_JITTER, "trait conditional covariance")?;
    let u_t = linalg::mvn_draw(&(&a * u_r), &chol, rng);
    Ok(model::fixed_traits(params, &site.e) + u_t)
}

fn draw_r_given_traits(params: &Parameters, site: &PartialSite, t: &DVector<f64>, bases: &BasisSet, rng: &mut ChaCha20Rng) -> Result<DVector<f64>> {
    let u_t = t - model::fixed_traits(params, &site.e);
    let (g, s) = latent_given_traits(params)?;
    let chol = linalg::cholesky(&s, DEFAULT_JITTER, "latent conditional covariance")?;
    let u_r = linalg::mvn_draw(&(g * u_t), &chol, rng);
    let sd = model::wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?.map(f64::sqrt);
    let mut r = model::fixed_spectrum(params, bases, &site.e) + &bases.k_u * u_r;
    for (i, v) in r.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd[i] * z;
    }
    Ok(r)
}

fn collect_draws(rows: Vec<DVector<f64>>) -> Result<PredictionSet> {
    let dim = rows.first().map_or(0, |r| r.len());
    let draws = DMatrix::from_fn(rows.len(), dim, |m, k| rows[m][k]);
    PredictionSet::from_draws(draws)
}

/// One trait draw per posterior state given the site's observed spectrum.
pub fn predict_traits_given_r(store: &PosteriorStore, site: &PartialSite, bases: &BasisSet, seed: u64) -> Result<PredictionSet> {
    if !matches!(site.observed, Observed::Spectrum(_)) {
        return Err(Error::InvalidInput(format!("site {}: spectrum block missing", site.site_id)));
    }
    let rows = store
        .states
        .par_iter()
        .enumerate()
        .map(|(m, params)| draw_traits_given_r(params, site, bases, &mut state_rng(seed, m)))
        .collect::<Result<Vec<_>>>()?;
    collect_draws(rows)
}

/// One spectrum draw per posterior state given the site's observed traits.
pub fn predict_r_given_traits(store: &PosteriorStore, site: &PartialSite, bases: &BasisSet, seed: u64) -> Result<PredictionSet> {
    let Observed::Traits(t) = &site.observed else {
        return Err(Error::InvalidInput(format!("site {}: trait block missing", site.site_id)));
    };
    let rows = store
        .states
        .par_iter()
        .enumerate()
        .map(|(m, params)| draw_r_given_traits(params, site, t, bases, &mut state_rng(seed, m)))
        .collect::<Result<Vec<_>>>()?;
    collect_draws(rows)
}

/// Predict whichever block the site is missing.
pub fn predict_site(store: &PosteriorStore, site: &PartialSite, bases: &BasisSet, seed: u64) -> Result<PredictionSet> {
    match site.observed {
        Observed::Spectrum(_) => predict_traits_given_r(store, site, bases, seed),
        Observed::Traits(_) => predict_r_given_traits(store, site, bases, seed),
    }
}

/// Posterior mean with a central 90% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Interval {
    pub fn from_samples(samples: &mut [f64]) -> Self {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.sort_by(f64::total_cmp);
        Self {
            mean,
            q05: quantile_sorted(samples, 0.05),
            q95: quantile_sorted(samples, 0.95),
        }
    }

    pub fn excludes_zero(&self) -> bool {
        self.q05 > 0.0 || self.q95 < 0.0
    }
}

/// A rows × cols table of intervals.
#[derive(Clone, Debug)]
pub struct IntervalTable {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Interval>,
}

impl IntervalTable {
    fn from_matrices(mats: &[DMatrix<f64>]) -> Self {
        let (rows, cols) = mats[0].shape();
        let mut entries = Vec::with_capacity(rows * cols);
        let mut buf = vec![0.0; mats.len()];
        for i in 0..rows {
            for j in 0..cols {
                for (b, m) in buf.iter_mut().zip(mats) {
                    *b = m[(i, j)];
                }
                entries.push(Interval::from_samples(&mut buf));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.entries[i * self.cols + j]
    }
}

/// Posterior summaries used for figures: β_R(w) curves (p × W), B_T (s × p),
/// and trait–reflectance correlation curves (s × W).
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub coefficient_curves: IntervalTable,
    pub trait_coefficients: IntervalTable,
    pub correlations: IntervalTable,
}

pub fn summarize_posterior(store: &PosteriorStore, bases: &BasisSet) -> Result<PosteriorSummary> {
    if store.is_empty() {
        return Err(Error::InvalidInput("posterior store is empty".into()));
    }
    if store.len() < 20 {
        log::warn!("only {} posterior states; 90% intervals are unreliable", store.len());
    }
    let curves = store
        .states
        .iter()
        .map(|s| model::coefficient_functions(&s.b_r, &bases.k_beta))
        .collect::<Result<Vec<_>>>()?;
    let coefs: Vec<DMatrix<f64>> = store.states.iter().map(|s| s.b_t.clone()).collect();
    let corrs = store
        .states
        .par_iter()
        .map(|s| model::trait_reflectance_correlation(s, bases))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSummary {
        coefficient_curves: IntervalTable::from_matrices(&curves),
        trait_coefficients: IntervalTable::from_matrices(&coefs),
        correlations: IntervalTable::from_matrices(&corrs),
    })
}
