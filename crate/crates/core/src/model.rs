//! The joint trait/reflectance model.
//!
//! For replicate `j` with standardized covariates `E_j` (length p):
//!
//! ```text
//! T_j    = α_T + B_T E_j + U_j^T                                   (s traits)
//! R_j(w) = K_α(w)'α*_R + E_j' B_R K_β(w) + K_U(w)'U_j^R + ψ_j(w)   (W wavelengths)
//! (U_j^T, U_j^R) ~ MVN(0, Ω),   ψ_j(w) ~ N(0, σ²(w)),   log σ²(w) = K_σ(w)'γ_σ
//! ```
//!
//! Traits carry no separate noise term, so `U^T` is always the exact trait
//! residual. All trait/spectrum dependence flows through the cross block of Ω.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, WavelengthGrid};
use crate::error::{Error, Result};
use crate::linalg;

/// Largest admissible |log σ²(w)|.
pub const MAX_LOG_VARIANCE: f64 = 700.0;

/// Aligned complete-case data for one family.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// n × p standardized covariates.
    pub e: DMatrix<f64>,
    /// n × s log traits.
    pub t: DMatrix<f64>,
    /// n × W log reflectance.
    pub r: DMatrix<f64>,
    pub grid: WavelengthGrid,
    pub site_ids: Vec<String>,
}

impl Dataset {
    pub fn new(e: DMatrix<f64>, t: DMatrix<f64>, r: DMatrix<f64>, grid: WavelengthGrid, site_ids: Vec<String>) -> Result<Self> {
        let n = e.nrows();
        if t.nrows() != n || r.nrows() != n || site_ids.len() != n {
            return Err(Error::dim(
                "dataset rows",
                n,
                format!("traits {}, spectra {}, ids {}", t.nrows(), r.nrows(), site_ids.len()),
            ));
        }
        if r.ncols() != grid.len() {
            return Err(Error::dim("dataset wavelengths", grid.len(), r.ncols()));
        }
        if e.iter().chain(t.iter()).chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains missing or non-finite values".into()));
        }
        Ok(Self { e, t, r, grid, site_ids })
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn p(&self) -> usize {
        self.e.ncols()
    }

    pub fn s(&self) -> usize {
        self.t.ncols()
    }

    pub fn n_wavelengths(&self) -> usize {
        self.r.ncols()
    }

    /// Dataset restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            e: self.e.select_rows(rows),
            t: self.t.select_rows(rows),
            r: self.r.select_rows(rows),
            grid: self.grid.clone(),
            site_ids: rows.iter().map(|&i| self.site_ids[i].clone()).collect(),
        }
    }
}

/// Block sizes of a model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub w: usize,
    pub n_alpha: usize,
    pub n_u: usize,
    pub n_beta: usize,
    pub n_sigma: usize,
}

impl Dims {
    pub fn new(data: &Dataset, bases: &BasisSet) -> Self {
        Self::from_parts(data.n(), data.p(), data.s(), bases)
    }

    pub fn from_parts(n: usize, p: usize, s: usize, bases: &BasisSet) -> Self {
        Self {
            n,
            p,
            s,
            w: bases.n_wavelengths(),
            n_alpha: bases.n_alpha(),
            n_u: bases.n_u(),
            n_beta: bases.n_beta(),
            n_sigma: bases.n_sigma(),
        }
    }

    /// Dimension of Ω and of each row of U.
    pub fn d(&self) -> usize {
        self.s + self.n_u
    }
}

/// Joint model or the variant with the trait/spectrum cross block of Ω fixed at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    #[default]
    Joint,
    Independent,
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "independent" => Ok(Self::Independent),
            other => Err(Error::InvalidInput(format!("unknown model variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Joint => "joint",
            Self::Independent => "independent",
        })
    }
}

/// One full parameter state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub alpha_t: DVector<f64>,
    /// s × p.
    pub b_t: DMatrix<f64>,
    pub alpha_star_r: DVector<f64>,
    /// p × N_β.
    pub b_r: DMatrix<f64>,
    pub gamma_sigma: DVector<f64>,
    /// (s + N_U) × (s + N_U), trait block first.
    pub omega: DMatrix<f64>,
    pub sigma2_alpha: f64,
    pub sigma2_beta: DVector<f64>,
    /// n × (s + N_U); the first s columns are the trait residuals.
    pub u: DMatrix<f64>,
}

/// The four blocks of Ω as owned matrices.
pub struct OmegaBlocks {
    pub tt: DMatrix<f64>,
    pub tr: DMatrix<f64>,
    pub rr: DMatrix<f64>,
}

impl Parameters {
    /// All-zero coefficients, Ω = I, unit shrinkage variances.
    pub fn zeros(dims: &Dims) -> Self {
        Self {
            alpha_t: DVector::zeros(dims.s),
            b_t: DMatrix::zeros(dims.s, dims.p),
            alpha_star_r: DVector::zeros(dims.n_alpha),
            b_r: DMatrix::zeros(dims.p, dims.n_beta),
            gamma_sigma: DVector::zeros(dims.n_sigma),
            omega: DMatrix::identity(dims.d(), dims.d()),
            sigma2_alpha: 1.0,
            sigma2_beta: DVector::from_element(dims.p, 1.0),
            u: DMatrix::zeros(dims.n, dims.d()),
        }
    }

    pub fn s(&self) -> usize {
        self.alpha_t.len()
    }

    pub fn n_u(&self) -> usize {
        self.omega.nrows() - self.s()
    }

    pub fn omega_blocks(&self) -> OmegaBlocks {
        let s = self.s();
        let q = self.n_u();
        OmegaBlocks {
            tt: self.omega.view((0, 0), (s, s)).into_owned(),
            tr: self.omega.view((0, s), (s, q)).into_owned(),
            rr: self.omega.view((s, s), (q, q)).into_owned(),
        }
    }

    /// n × N_U block of reflectance random effects.
    pub fn u_r(&self) -> DMatrix<f64> {
        let s = self.s();
        self.u.columns(s, self.u.ncols() - s).into_owned()
    }

    pub fn u_t(&self) -> DMatrix<f64> {
        self.u.columns(0, self.s()).into_owned()
    }

    /// Check shapes against `dims` and the SPD/positivity constraints.
    pub fn validate(&self, dims: &Dims) -> Result<()> {
        let checks: [(&'static str, (usize, usize), (usize, usize)); 9] = [
            ("alpha_T", (self.alpha_t.len(), 1), (dims.s, 1)),
            ("B_T", self.b_t.shape(), (dims.s, dims.p)),
            ("alpha_star_R", (self.alpha_star_r.len(), 1), (dims.n_alpha, 1)),
            ("B_R", self.b_r.shape(), (dims.p, dims.n_beta)),
            ("gamma_sigma", (self.gamma_sigma.len(), 1), (dims.n_sigma, 1)),
            ("Omega", self.omega.shape(), (dims.d(), dims.d())),
            ("sigma2_beta", (self.sigma2_beta.len(), 1), (dims.p, 1)),
            ("U", self.u.shape(), (dims.n, dims.d())),
            ("sigma2_alpha", (1, 1), (1, 1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::dim(name, format!("{want:?}"), format!("{got:?}")));
            }
        }
        if !linalg::is_spd(&self.omega) {
            return Err(Error::NotPositiveDefinite("Omega".into()));
        }
        if !(self.sigma2_alpha > 0.0) || self.sigma2_beta.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("shrinkage variances must be positive".into()));
        }
        Ok(())
    }

    /// Flat `(name, index, value)` rows; matrices are flattened row-major and
    /// preceded by `dim.<name>` rows giving their shape.
    pub fn to_named_values(&self) -> Vec<(String, usize, f64)> {
        let mut rows = Vec::new();
        let push_vec = |name: &str, v: &DVector<f64>, rows: &mut Vec<(String, usize, f64)>| {
            rows.push((format!("dim.{name}"), 0, v.len() as f64));
            rows.extend(v.iter().enumerate().map(|(i, &x)| (name.to_string(), i, x)));
        };
        push_vec("alpha_T", &self.alpha_t, &mut rows);
        push_vec("alpha_star_R", &self.alpha_star_r, &mut rows);
        push_vec("gamma_sigma", &self.gamma_sigma, &mut rows);
        push_vec("sigma2_beta", &self.sigma2_beta, &mut rows);
        rows.push(("sigma2_alpha".into(), 0, self.sigma2_alpha));
        for (name, m) in [("B_T", &self.b_t), ("B_R", &self.b_r), ("Omega", &self.omega), ("U", &self.u)] {
            rows.push((format!("dim.{name}"), 0, m.nrows() as f64));
            rows.push((format!("dim.{name}"), 1, m.ncols() as f64));
            rows.extend(flatten_row_major(m).into_iter().enumerate().map(|(i, x)| (name.to_string(), i, x)));
        }
        rows
    }

    pub fn from_named_values(rows: &[(String, usize, f64)]) -> Result<Self> {
        use std::collections::HashMap;
        let mut values: HashMap<&str, Vec<(usize, f64)>> = HashMap::new();
        for (name, i, v) in rows {
            values.entry(name.as_str()).or_default().push((*i, *v));
        }
        let get = |name: &str| -> Result<Vec<f64>> {
            let dim_key = format!("dim.{name}");
            let dims = values.get(dim_key.as_str()).cloned().unwrap_or_default();
            let mut entries = values.get(name).cloned().unwrap_or_default();
            entries.sort_by_key(|e| e.0);
            let expected: usize = if dims.is_empty() {
                entries.len()
            } else {
                dims.iter().map(|d| d.1 as usize).product()
            };
            if entries.len() != expected || entries.iter().enumerate().any(|(k, e)| e.0 != k) {
                return Err(Error::Parse(format!("block {name}: expected {expected} contiguous entries")));
            }
            Ok(entries.into_iter().map(|e| e.1).collect())
        };
        let shape = |name: &str| -> Result<(usize, usize)> {
            let mut d = values
                .get(format!("dim.{name}").as_str())
                .cloned()
                .ok_or_else(|| Error::Parse(format!("missing shape for {name}")))?;
            d.sort_by_key(|e| e.0);
            match d.as_slice() {
                [(0, r), (1, c)] => Ok((*r as usize, *c as usize)),
                _ => Err(Error::Parse(format!("bad shape rows for {name}"))),
            }
        };
        let matrix = |name: &str| -> Result<DMatrix<f64>> {
            let (r, c) = shape(name)?;
            Ok(DMatrix::from_row_slice(r, c, &get(name)?))
        };
        let sigma2_alpha = get("sigma2_alpha")?;
        if sigma2_alpha.len() != 1 {
            return Err(Error::Parse("sigma2_alpha must be a single value".into()));
        }
        Ok(Self {
            alpha_t: DVector::from_vec(get("alpha_T")?),
            b_t: matrix("B_T")?,
            alpha_star_r: DVector::from_vec(get("alpha_star_R")?),
            b_r: matrix("B_R")?,
            gamma_sigma: DVector::from_vec(get("gamma_sigma")?),
            omega: matrix("Omega")?,
            sigma2_alpha: sigma2_alpha[0],
            sigma2_beta: DVector::from_vec(get("sigma2_beta")?),
            u: matrix("U")?,
        })
    }
}

pub(crate) fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

/// Prior hyperparameters. Defaults are the standard weakly informative choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub alpha_t_var: f64,
    pub b_t_var: f64,
    pub alpha_r_intercept_var: f64,
    pub b_r_intercept_var: f64,
    pub gamma_intercept_var: f64,
    pub gamma_var: f64,
    /// Gamma(shape, rate) prior on 1/σ²_α and each 1/σ²_βk.
    pub shrink_shape: f64,
    pub shrink_rate: f64,
    /// Ω⁻¹ ~ Wishart(dof, (omega_scale · I)⁻¹), so the conjugate update adds
    /// `omega_scale · I` to U'U.
    pub omega_scale: f64,
    /// Defaults to d + 1 where d = s + N_U.
    pub omega_dof: Option<f64>,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            alpha_t_var: 1e3,
            b_t_var: 1e3,
            alpha_r_intercept_var: 1e3,
            b_r_intercept_var: 1e3,
            gamma_intercept_var: 1e4,
            gamma_var: 9.0,
            shrink_shape: 1.0,
            shrink_rate: 1.0,
            omega_scale: 1e-3,
            omega_dof: None,
        }
    }
}

impl Priors {
    pub fn omega_dof_for(&self, dim: usize) -> f64 {
        self.omega_dof.unwrap_or(dim as f64 + 1.0)
    }

    /// Prior variances of γ_σ.
    pub fn gamma_variances(&self, n_sigma: usize) -> DVector<f64> {
        DVector::from_fn(n_sigma, |i, _| if i == 0 { self.gamma_intercept_var } else { self.gamma_var })
    }

    /// Prior variances of α*_R given σ²_α.
    pub fn alpha_r_variances(&self, n_alpha: usize, sigma2_alpha: f64) -> DVector<f64> {
        DVector::from_fn(n_alpha, |i, _| if i == 0 { self.alpha_r_intercept_var } else { sigma2_alpha })
    }

    /// Prior variance of B_R[k, l] given σ²_β.
    pub fn b_r_variance(&self, l: usize, sigma2_beta_k: f64) -> f64 {
        if l == 0 {
            self.b_r_intercept_var
        } else {
            sigma2_beta_k
        }
    }
}

/// σ²(w) = exp(K_σ γ_σ).
pub fn wavelength_variance(gamma_sigma: &DVector<f64>, k_sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    if k_sigma.ncols() != gamma_sigma.len() {
        return Err(Error::dim("wavelength_variance", k_sigma.ncols(), gamma_sigma.len()));
    }
    let eta = k_sigma * gamma_sigma;
    if let Some(bad) = eta.iter().find(|v| !(v.abs() <= MAX_LOG_VARIANCE)) {
        return Err(Error::VarianceOverflow(*bad));
    }
    Ok(eta.map(f64::exp))
}

/// Coefficient curves β_R = B_R K_β' (p × W).
pub fn coefficient_functions(b_r: &DMatrix<f64>, k_beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b_r.ncols() != k_beta.ncols() {
        return Err(Error::dim("coefficient_functions", k_beta.ncols(), b_r.ncols()));
    }
    Ok(b_r * k_beta.transpose())
}

/// Wavelength-varying intercept K_α α*.
pub fn spectral_intercept(params: &Parameters, bases: &BasisSet) -> DVector<f64> {
    &bases.k_alpha * &params.alpha_star_r
}

/// Fixed-effect spectrum for covariates `e`: K_α α* + K_β B_R' e.
pub fn fixed_spectrum(params: &Parameters, bases: &BasisSet, e: &DVector<f64>) -> DVector<f64> {
    spectral_intercept(params, bases) + &bases.k_beta * (params.b_r.transpose() * e)
}

/// Fixed-effect trait mean α_T + B_T e.
pub fn fixed_traits(params: &Parameters, e: &DVector<f64>) -> DVector<f64> {
    &params.alpha_t + &params.b_t * e
}

/// n × s trait residuals T − 1α_T' − E B_T'.
pub fn trait_residuals(params: &Parameters, data: &Dataset) -> DMatrix<f64> {
    let mut r = &data.t - &data.e * params.b_t.transpose();
    for mut row in r.row_iter_mut() {
        row -= params.alpha_t.transpose();
    }
    r
}

/// n × W reflectance residuals after removing intercept, regression and random effects.
pub fn reflectance_residuals(params: &Parameters, data: &Dataset, bases: &BasisSet) -> DMatrix<f64> {
    let intercept = spectral_intercept(params, bases);
    let beta = &params.b_r * bases.k_beta.transpose();
    let mut r = &data.r - &data.e * beta - params.u_r() * bases.k_u.transpose();
    for mut row in r.row_iter_mut() {
        row -= intercept.transpose();
    }
    r
}

/// Covariance of (T_j, R_j) implied by Ω, K_U and σ²(w).
#[derive(Clone, Debug)]
pub struct InducedCovariance {
    pub sigma: DMatrix<f64>,
    pub s: usize,
}

impl InducedCovariance {
    pub fn trait_block(&self) -> DMatrix<f64> {
        self.sigma.view((0, 0), (self.s, self.s)).into_owned()
    }

    pub fn cross_block(&self) -> DMatrix<f64> {
        let w = self.sigma.nrows() - self.s;
        self.sigma.view((0, self.s), (self.s, w)).into_owned()
    }

    pub fn reflectance_block(&self) -> DMatrix<f64> {
        let w = self.sigma.nrows() - self.s;
        self.sigma.view((self.s, self.s), (w, w)).into_owned()
    }
}

pub fn induced_sigma(params: &Parameters, bases: &BasisSet) -> Result<InducedCovariance> {
    if !linalg::is_spd(&params.omega) {
        return Err(Error::NotPositiveDefinite("Omega".into()));
    }
    let s = params.s();
    let w = bases.n_wavelengths();
    if bases.n_u() != params.n_u() {
        return Err(Error::dim("induced_sigma K_U columns", params.n_u(), bases.n_u()));
    }
    let sigma2 = wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?;
    let blocks = params.omega_blocks();
    let cross = &blocks.tr * bases.k_u.transpose();
    let mut refl = &bases.k_u * &blocks.rr * bases.k_u.transpose();
    for i in 0..w {
        refl[(i, i)] += sigma2[i];
    }
    let mut sigma = DMatrix::zeros(s + w, s + w);
    sigma.view_mut((0, 0), (s, s)).copy_from(&blocks.tt);
    sigma.view_mut((0, s), (s, w)).copy_from(&cross);
    sigma.view_mut((s, 0), (w, s)).copy_from(&cross.transpose());
    sigma.view_mut((s, s), (w, w)).copy_from(&refl);
    linalg::symmetrize(&mut sigma);
    Ok(InducedCovariance { sigma, s })
}

/// corr(T_k, R(w)) for every trait k and wavelength w (s × W).
pub fn trait_reflectance_correlation(params: &Parameters, bases: &BasisSet) -> Result<DMatrix<f64>> {
    if !linalg::is_spd(&params.omega) {
        return Err(Error::NotPositiveDefinite("Omega".into()));
    }
    let sigma2 = wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?;
    let blocks = params.omega_blocks();
    let cross = &blocks.tr * bases.k_u.transpose();
    let ku_rr = &bases.k_u * &blocks.rr;
    let s = params.s();
    let w = bases.n_wavelengths();
    let mut out = DMatrix::zeros(s, w);
    for j in 0..w {
        let var_r = ku_rr.row(j).dot(&bases.k_u.row(j)) + sigma2[j];
        for k in 0..s {
            let denom = (blocks.tt[(k, k)] * var_r).sqrt();
            if !(denom > 0.0) {
                return Err(Error::InvalidInput("zero variance in correlation".into()));
            }
            out[(k, j)] = (cross[(k, j)] / denom).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// Forward simulation output, including the latent random effects.
pub struct Simulated {
    pub data: Dataset,
    /// n × (s + N_U) simulated U.
    pub u: DMatrix<f64>,
}

/// Simulate T and R for covariates `e` from `params` (ignoring `params.u`).
pub fn simulate_dataset(params: &Parameters, e: &DMatrix<f64>, bases: &BasisSet, grid: &WavelengthGrid, seed: u64) -> Result<Dataset> {
    Ok(simulate_with_latent(params, e, bases, grid, seed)?.data)
}

pub fn simulate_with_latent(
    params: &Parameters,
    e: &DMatrix<f64>,
    bases: &BasisSet,
    grid: &WavelengthGrid,
    seed: u64,
) -> Result<Simulated> {
    let n = e.nrows();
    let s = params.s();
    let q = params.n_u();
    let w = bases.n_wavelengths();
    if grid.len() != w {
        return Err(Error::dim("simulate grid", w, grid.len()));
    }
    if params.b_t.ncols() != e.ncols() || params.b_r.nrows() != e.ncols() {
        return Err(Error::dim("simulate covariates", params.b_t.ncols(), e.ncols()));
    }
    let chol = linalg::cholesky(&params.omega, 0.0, "Omega")?;
    let sd = wavelength_variance(&params.gamma_sigma, &bases.k_sigma)?.map(f64::sqrt);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let l = chol.l();
    let mut u = DMatrix::zeros(n, s + q);
    let mut psi = DMatrix::zeros(n, w);
    for j in 0..n {
        let z = linalg::standard_normal_vector(s + q, &mut rng);
        u.row_mut(j).copy_from(&(&l * z).transpose());
        for i in 0..w {
            let z: f64 = StandardNormal.sample(&mut rng);
            psi[(j, i)] = sd[i] * z;
        }
    }
    let mut t = e * params.b_t.transpose() + u.columns(0, s);
    for mut row in t.row_iter_mut() {
        row += params.alpha_t.transpose();
    }
    let intercept = spectral_intercept(params, bases);
    let mut r = e * (&params.b_r * bases.k_beta.transpose()) + u.columns(s, q) * bases.k_u.transpose() + psi;
    for mut row in r.row_iter_mut() {
        row += intercept.transpose();
    }
    let site_ids = (0..n).map(|j| format!("sim{j:04}")).collect();
    Ok(Simulated {
        data: Dataset::new(e.clone(), t, r, grid.clone(), site_ids)?,
        u,
    })
}

/// Log joint density of the data and all parameters (joint model).
///
/// Ω and the shrinkage variances enter through their precision-scale priors
/// (Wishart on Ω⁻¹, Gamma on 1/σ²). Returns −∞ for invalid states.
pub fn log_joint_density(params: &Parameters, data: &Dataset, bases: &BasisSet, priors: &Priors) -> f64 {
    log_joint_density_variant(params, data, bases, priors, ModelVariant::Joint)
}

pub fn log_joint_density_variant(
    params: &Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    variant: ModelVariant,
) -> f64 {
    let dims = Dims::new(data, bases);
    if params.validate(&dims).is_err() {
        return f64::NEG_INFINITY;
    }
    let Ok(sigma2) = wavelength_variance(&params.gamma_sigma, &bases.k_sigma) else {
        return f64::NEG_INFINITY;
    };
    let s = dims.s;
    let q = dims.n_u;

    let mut u = params.u.clone();
    if dims.n > 0 {
        u.columns_mut(0, s).copy_from(&trait_residuals(params, data));
    }
    let mut total = 0.0;

    // Random effects: the trait block is the data likelihood for T.
    if dims.n > 0 {
        let Ok(chol) = linalg::cholesky(&params.omega, 0.0, "Omega") else {
            return f64::NEG_INFINITY;
        };
        let z = chol
            .l_dirty()
            .solve_lower_triangular(&u.transpose())
            .expect("positive diagonal");
        let d = dims.d() as f64;
        total += -0.5 * dims.n as f64 * (d * (2.0 * std::f64::consts::PI).ln() + linalg::log_det_from_cholesky(&chol))
            - 0.5 * z.norm_squared();

        let resid = reflectance_residuals(params, data, bases);
        for (i, &v) in sigma2.iter().enumerate() {
            let ss: f64 = resid.column(i).norm_squared();
            total += -0.5 * dims.n as f64 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * ss / v;
        }
    }

    // Coefficient priors.
    total += params.alpha_t.iter().map(|&a| linalg::normal_log_density(a, 0.0, priors.alpha_t_var)).sum::<f64>();
    total += params.b_t.iter().map(|&b| linalg::normal_log_density(b, 0.0, priors.b_t_var)).sum::<f64>();
    let alpha_var = priors.alpha_r_variances(dims.n_alpha, params.sigma2_alpha);
    total += params
        .alpha_star_r
        .iter()
        .zip(alpha_var.iter())
        .map(|(&a, &v)| linalg::normal_log_density(a, 0.0, v))
        .sum::<f64>();
    for k in 0..dims.p {
        for l in 0..dims.n_beta {
            total += linalg::normal_log_density(params.b_r[(k, l)], 0.0, priors.b_r_variance(l, params.sigma2_beta[k]));
        }
    }
    let gamma_var = priors.gamma_variances(dims.n_sigma);
    total += params
        .gamma_sigma
        .iter()
        .zip(gamma_var.iter())
        .map(|(&g, &v)| linalg::normal_log_density(g, 0.0, v))
        .sum::<f64>();

    // Shrinkage precisions.
    total += linalg::gamma_log_density(1.0 / params.sigma2_alpha, priors.shrink_shape, priors.shrink_rate);
    total += params
        .sigma2_beta
        .iter()
        .map(|&v| linalg::gamma_log_density(1.0 / v, priors.shrink_shape, priors.shrink_rate))
        .sum::<f64>();

    // Ω⁻¹ prior.
    let Ok(omega_inv) = linalg::spd_inverse(&params.omega, 0.0, "Omega") else {
        return f64::NEG_INFINITY;
    };
    total += match variant {
        ModelVariant::Joint => {
            let d = dims.d();
            let scale = DMatrix::identity(d, d) / priors.omega_scale;
            linalg::wishart_log_density(&omega_inv, priors.omega_dof_for(d), &scale)
        }
        ModelVariant::Independent => {
            let blocks = params.omega_blocks();
            if blocks.tr.iter().any(|&v| v != 0.0) {
                return f64::NEG_INFINITY;
            }
            let (Ok(tt_inv), Ok(rr_inv)) = (
                linalg::spd_inverse(&blocks.tt, 0.0, "Omega_T"),
                linalg::spd_inverse(&blocks.rr, 0.0, "Omega_R"),
            ) else {
                return f64::NEG_INFINITY;
            };
            linalg::wishart_log_density(&tt_inv, priors.omega_dof_for(s), &(DMatrix::identity(s, s) / priors.omega_scale))
                + linalg::wishart_log_density(&rr_inv, priors.omega_dof_for(q), &(DMatrix::identity(q, q) / priors.omega_scale))
        }
    };
    if total.is_finite() {
        total
    } else {
        f64::NEG_INFINITY
    }
}

/// Column centering and scaling fitted on training covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateTransform {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl CovariateTransform {
    /// Means and sample standard deviations (n − 1 denominator) per column.
    pub fn fit(raw: &DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        if n < 2 {
            return Err(Error::InvalidInput("need at least two rows to standardize".into()));
        }
        let mut means = Vec::with_capacity(raw.ncols());
        let mut scales = Vec::with_capacity(raw.ncols());
        for (k, col) in raw.column_iter().enumerate() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::InvalidInput(format!("covariate column {k} is constant")));
            }
            means.push(mean);
            scales.push(sd);
        }
        Ok(Self { means, scales })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            means: vec![0.0; p],
            scales: vec![1.0; p],
        }
    }

    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.means.len() {
            return Err(Error::dim("covariate transform", self.means.len(), raw.ncols()));
        }
        Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, k| (raw[(i, k)] - self.means[k]) / self.scales[k]))
    }

    pub fn apply_row(&self, raw: &[f64]) -> Result<DVector<f64>> {
        if raw.len() != self.means.len() {
            return Err(Error::dim("covariate transform", self.means.len(), raw.len()));
        }
        Ok(DVector::from_fn(raw.len(), |k, _| (raw[k] - self.means[k]) / self.scales[k]))
    }
}

/// Fit a transform on `raw` and return the standardized matrix with it.
pub fn standardize_covariates(raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, CovariateTransform)> {
    let transform = CovariateTransform::fit(raw)?;
    Ok((transform.apply(raw)?, transform))
}
