//! Synthetic ground-truth parameters for simulation studies.
//!
//! Ω is built from a shared latent factor `z ~ N(0, I_s)`:
//! `U^T = a·z + e_T`, `U^R = B·z + e_R`, giving
//! `Ω = [[a²I + δ_T I, a·B'], [a·B, BB' + δ_R I]]` times `cross_strength` on
//! the off-diagonal blocks. Strength 0 gives the independent model.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::model::{Dims, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    /// Multiplies the trait/spectrum cross block of Ω; must lie in [0, 1].
    pub cross_strength: f64,
    /// Loading of the traits on the shared factor.
    pub trait_loading: f64,
    /// Scale of the random-effect loadings on the shared factor.
    pub spectrum_loading: f64,
    pub trait_noise: f64,
    pub spectrum_re_noise: f64,
    /// Pure-error variance σ²(w) (constant across wavelengths).
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 150,
            p: 3,
            s: 4,
            cross_strength: 0.9,
            trait_loading: 0.35,
            spectrum_loading: 0.3,
            trait_noise: 0.03,
            spectrum_re_noise: 0.01,
            noise_variance: 0.004,
            seed: 11,
        }
    }
}

/// Truth parameters and N(0, 1) covariates for `spec` on `bases`.
pub fn synthetic_truth(spec: &SyntheticSpec, bases: &BasisSet) -> Result<(Parameters, DMatrix<f64>)> {
    if !(0.0..=1.0).contains(&spec.cross_strength) {
        return Err(Error::InvalidInput("cross_strength must lie in [0, 1]".into()));
    }
    if !(spec.noise_variance > 0.0 && spec.trait_noise > 0.0 && spec.spectrum_re_noise > 0.0) {
        return Err(Error::InvalidInput("noise variances must be positive".into()));
    }
    let dims = Dims::from_parts(spec.n, spec.p, spec.s, bases);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut normal = |sd: f64| -> f64 { Normal::new(0.0, sd).expect("positive sd").sample(&mut rng) };
    let s = spec.s;
    let q = dims.n_u;

    let mut t = Parameters::zeros(&dims);
    t.alpha_t = DVector::from_fn(s, |k, _| [0.5, -1.0, 1.5, 0.2][k % 4]);
    t.b_t = DMatrix::from_fn(s, spec.p, |_, _| normal(0.25));
    t.alpha_star_r = DVector::from_fn(dims.n_alpha, |l, _| if l == 0 { -1.5 } else { 0.0 });
    for l in 1..dims.n_alpha {
        t.alpha_star_r[l] = normal(0.3);
    }
    t.b_r = DMatrix::zeros(spec.p, dims.n_beta);
    for k in 0..spec.p {
        for l in 0..dims.n_beta {
            t.b_r[(k, l)] = normal(if l == 0 { 0.1 } else { 0.08 });
        }
    }
    t.gamma_sigma = DVector::from_fn(dims.n_sigma, |l, _| if l == 0 { spec.noise_variance.ln() } else { 0.0 });
    t.sigma2_alpha = 0.09;
    t.sigma2_beta = DVector::from_element(spec.p, 0.0064);

    let loadings = DMatrix::from_fn(q, s, |_, _| normal(spec.spectrum_loading));
    let a2 = spec.trait_loading * spec.trait_loading;
    let mut omega = DMatrix::zeros(s + q, s + q);
    for k in 0..s {
        omega[(k, k)] = a2 + spec.trait_noise;
    }
    let rr = &loadings * loadings.transpose() + DMatrix::identity(q, q) * spec.spectrum_re_noise;
    omega.view_mut((s, s), (q, q)).copy_from(&rr);
    let cross = loadings.transpose() * (spec.trait_loading * spec.cross_strength);
    omega.view_mut((0, s), (s, q)).copy_from(&cross);
    omega.view_mut((s, 0), (q, s)).copy_from(&cross.transpose());
    t.omega = omega;

    let e = DMatrix::from_fn(spec.n, spec.p, |_, _| StandardNormal.sample(&mut rng));
    t.validate(&dims)?;
    Ok((t, e))
}
