//! Blocked Gibbs sampler with a Metropolis step for the log-variance spline.
//!
//! One sweep updates, in order:
//!
//! 1. `(α_T, B_T)`, then refreshes the trait residual block of `U`;
//! 2. `B_R`;
//! 3. `α*_R`;
//! 4. every row of `U^R`;
//! 5. `Ω` (one Wishart for the joint model, two for the independent variant);
//! 6. the shrinkage variances `σ²_α`, `σ²_β`;
//! 7. `γ_σ` by Gaussian random-walk Metropolis.
//!
//! The conditionals are derived directly from the joint density. The trait
//! block conditions on the current `U^R` (the trait residual has conditional
//! mean `-P_TT⁻¹ P_TR U^R_j` and precision `P_TT`, where `P = Ω⁻¹`), and the
//! `U^R` prior is likewise the conditional normal given `U^T`.
//!
//! With [`FixedEffectsUpdate::Collapsed`] (the default) steps 1–3 are a single
//! draw of all fixed effects from their conditional with `U^R` integrated out,
//! followed by the exact `U^R` draw of step 4.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::linalg::{self, GaussianCanonical};
use crate::model::{self, Dataset, Dims, ModelVariant, Parameters, Priors};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaUpdate {
    /// One multivariate random-walk proposal for all of γ_σ.
    #[default]
    Block,
    /// A scalar random-walk proposal per coordinate.
    PerCoordinate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffectsUpdate {
    /// `(α_T, B_T, α*_R, B_R)` in one draw with `U^R` integrated out.
    #[default]
    Collapsed,
    /// Separate draws of `(α_T, B_T)`, `B_R` and `α*_R`, each given `U^R`.
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub n_keep: usize,
    /// Initial random-walk standard deviation for γ_σ.
    pub rw_scale: f64,
    pub target_accept_low: f64,
    pub target_accept_high: f64,
    pub adapt_window: usize,
    pub seed: u64,
    pub jitter: f64,
    pub gamma_update: GammaUpdate,
    pub fixed_effects: FixedEffectsUpdate,
    pub variant: ModelVariant,
    pub priors: Priors,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 200_000,
            n_burnin: 100_000,
            n_keep: 5_000,
            rw_scale: 0.05,
            target_accept_low: 0.2,
            target_accept_high: 0.6,
            adapt_window: 200,
            seed: 1,
            jitter: linalg::DEFAULT_JITTER,
            gamma_update: GammaUpdate::Block,
            fixed_effects: FixedEffectsUpdate::Collapsed,
            variant: ModelVariant::Joint,
            priors: Priors::default(),
        }
    }
}

impl SamplerConfig {
    /// The reduced schedule used for cross-validation and desk-scale runs
    /// (20k iterations, 10k burn-in, 1000 retained).
    pub fn desk() -> Self {
        Self {
            n_iterations: 20_000,
            n_burnin: 10_000,
            n_keep: 1_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iterations {
            return Err(Error::InvalidInput(format!(
                "burn-in ({}) must be shorter than the run ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.n_keep == 0 || self.n_keep > self.n_iterations - self.n_burnin {
            return Err(Error::InvalidInput(format!(
                "n_keep ({}) must be in 1..={}",
                self.n_keep,
                self.n_iterations - self.n_burnin
            )));
        }
        if !(self.rw_scale > 0.0) {
            return Err(Error::InvalidInput("rw_scale must be positive".into()));
        }
        if !(0.0 <= self.target_accept_low && self.target_accept_low < self.target_accept_high && self.target_accept_high <= 1.0) {
            return Err(Error::InvalidInput("acceptance band must satisfy 0 <= low < high <= 1".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidInput("adapt_window must be positive".into()));
        }
        Ok(())
    }

    pub fn thinning_step(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.n_keep
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub burnin_proposals: u64,
    pub burnin_accepted: u64,
    pub sampling_proposals: u64,
    pub sampling_accepted: u64,
    /// Acceptance rate in the last complete adaptation window of burn-in.
    pub last_burnin_window_rate: Option<f64>,
    pub final_rw_scale: f64,
}

impl AcceptanceStats {
    pub fn sampling_rate(&self) -> f64 {
        if self.sampling_proposals == 0 {
            0.0
        } else {
            self.sampling_accepted as f64 / self.sampling_proposals as f64
        }
    }

    pub fn burnin_rate(&self) -> f64 {
        if self.burnin_proposals == 0 {
            0.0
        } else {
            self.burnin_accepted as f64 / self.burnin_proposals as f64
        }
    }
}

/// Retained draws of one chain, in iteration order.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStore {
    pub config: SamplerConfig,
    pub dims: Dims,
    pub states: Vec<Parameters>,
    pub acceptance: AcceptanceStats,
    /// rw_scale after each adaptation window.
    pub rw_trace: Vec<f64>,
}

impl PosteriorStore {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn inv_diag(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| 1.0 / x)
}

/// Ω⁻¹ split into trait/reflectance blocks.
struct PrecisionBlocks {
    tt: DMatrix<f64>,
    tr: DMatrix<f64>,
    rr: DMatrix<f64>,
}

fn precision_blocks(state: &Parameters, jitter: f64) -> Result<PrecisionBlocks> {
    let p = linalg::spd_inverse(&state.omega, jitter, "Omega")?;
    let s = state.s();
    let q = state.n_u();
    Ok(PrecisionBlocks {
        tt: p.view((0, 0), (s, s)).into_owned(),
        tr: p.view((0, s), (s, q)).into_owned(),
        rr: p.view((s, s), (q, q)).into_owned(),
    })
}

/// Design matrix [1, E].
fn trait_design(e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = e.nrows();
    let mut x = DMatrix::from_element(n, e.ncols() + 1, 1.0);
    x.columns_mut(1, e.ncols()).copy_from(e);
    x
}

/// Conditional of the trait coefficients.
///
/// The vector is laid out per trait: `[α_1, B_11..B_1p, α_2, B_21.., …]`.
pub fn trait_conditional(state: &Parameters, data: &Dataset, priors: &Priors, jitter: f64) -> Result<GaussianCanonical> {
    let s = state.s();
    let p = data.p();
    let k = p + 1;
    let x = trait_design(&data.e);
    let pb = precision_blocks(state, jitter)?;
    let xtx = x.transpose() * &x;
    let mut precision = linalg::kron(&pb.tt, &xtx);
    for trait_idx in 0..s {
        for c in 0..k {
            let v = if c == 0 { priors.alpha_t_var } else { priors.b_t_var };
            precision[(trait_idx * k + c, trait_idx * k + c)] += 1.0 / v;
        }
    }
    let target = &data.t * &pb.tt + state.u_r() * pb.tr.transpose();
    let lin = x.transpose() * target;
    let linear = DVector::from_column_slice(lin.as_slice());
    GaussianCanonical::new(precision, linear)
}

/// Unpack a per-trait coefficient vector into (α_T, B_T).
pub fn unpack_trait_coefficients(v: &DVector<f64>, s: usize, p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let k = p + 1;
    let alpha = DVector::from_fn(s, |i, _| v[i * k]);
    let b = DMatrix::from_fn(s, p, |i, c| v[i * k + c + 1]);
    (alpha, b)
}

/// Draw (α_T, B_T) and refresh the U^T block as the exact trait residual.
pub fn update_b_t<R: Rng + ?Sized>(state: &mut Parameters, data: &Dataset, priors: &Priors, jitter: f64, rng: &mut R) -> Result<()> {
    let cond = trait_conditional(state, data, priors, jitter)?.factor(jitter, "trait coefficient precision")?;
    let draw = cond.draw(rng);
    let (alpha, b) = unpack_trait_coefficients(&draw, state.s(), data.p());
    state.alpha_t = alpha;
    state.b_t = b;
    refresh_trait_residuals(state, data);
    Ok(())
}

pub fn refresh_trait_residuals(state: &mut Parameters, data: &Dataset) {
    let s = state.s();
    let resid = model::trait_residuals(state, data);
    state.u.columns_mut(0, s).copy_from(&resid);
}

/// Conditional of vec(B_R) (column-major, index `k + p·l`).
pub fn b_r_conditional(state: &Parameters, data: &Dataset, bases: &BasisSet, priors: &Priors) -> Result<GaussianCanonical> {
    let p = data.p();
    let nb = bases.n_beta();
    let prec_w = inv_diag(&model::wavelength_variance(&state.gamma_sigma, &bases.k_sigma)?);
    let intercept = model::spectral_intercept(state, bases);
    let mut r = &data.r - state.u_r() * bases.k_u.transpose();
    for mut row in r.row_iter_mut() {
        row -= intercept.transpose();
    }
    let kb_scaled = DMatrix::from_fn(bases.n_wavelengths(), nb, |i, l| bases.k_beta[(i, l)] * prec_w[i]);
    let ktk = bases.k_beta.transpose() * &kb_scaled;
    let ete = data.e.transpose() * &data.e;
    let mut precision = linalg::kron(&ktk, &ete);
    for l in 0..nb {
        for k in 0..p {
            precision[(k + p * l, k + p * l)] += 1.0 / priors.b_r_variance(l, state.sigma2_beta[k]);
        }
    }
    let lin = data.e.transpose() * (r * kb_scaled);
    GaussianCanonical::new(precision, DVector::from_column_slice(lin.as_slice()))
}

pub fn update_b_r<R: Rng + ?Sized>(
    state: &mut Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    jitter: f64,
    rng: &mut R,
) -> Result<()> {
    let draw = b_r_conditional(state, data, bases, priors)?
        .factor(jitter, "B_R precision")?
        .draw(rng);
    state.b_r = DMatrix::from_column_slice(data.p(), bases.n_beta(), draw.as_slice());
    Ok(())
}

pub fn alpha_r_conditional(state: &Parameters, data: &Dataset, bases: &BasisSet, priors: &Priors) -> Result<GaussianCanonical> {
    let n = data.n() as f64;
    let na = bases.n_alpha();
    let prec_w = inv_diag(&model::wavelength_variance(&state.gamma_sigma, &bases.k_sigma)?);
    let r = &data.r - &data.e * (&state.b_r * bases.k_beta.transpose()) - state.u_r() * bases.k_u.transpose();
    let ka_scaled = DMatrix::from_fn(bases.n_wavelengths(), na, |i, l| bases.k_alpha[(i, l)] * prec_w[i]);
    let mut precision = (bases.k_alpha.transpose() * &ka_scaled) * n;
    let prior_var = priors.alpha_r_variances(na, state.sigma2_alpha);
    for l in 0..na {
        precision[(l, l)] += 1.0 / prior_var[l];
    }
    let col_sums = DVector::from_fn(r.ncols(), |i, _| r.column(i).sum());
    let linear = ka_scaled.transpose() * col_sums;
    GaussianCanonical::new(precision, linear)
}

pub fn update_alpha_r<R: Rng + ?Sized>(
    state: &mut Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    jitter: f64,
    rng: &mut R,
) -> Result<()> {
    state.alpha_star_r = alpha_r_conditional(state, data, bases, priors)?
        .factor(jitter, "alpha_R precision")?
        .draw(rng);
    Ok(())
}

/// Joint conditional of all fixed effects with `U^R` integrated out.
///
/// Layout: the trait coefficients as in [`trait_conditional`], then `α*_R`,
/// then vec(B_R) as in [`b_r_conditional`]. With `A = Ω^T`,
/// `H = K_U Ω^RT A⁻¹` and `V = K_U (Ω^R − Ω^RT A⁻¹ Ω^TR) K_U' + D_σ`,
/// replicate `j` contributes `T_j ~ N(μ_T, A)` and `R_j | T_j ~ N(μ_R + H(T_j − μ_T), V)`.
pub fn fixed_effects_conditional(
    state: &Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    jitter: f64,
) -> Result<GaussianCanonical> {
    let s = state.s();
    let p = data.p();
    let k = p + 1;
    let w = bases.n_wavelengths();
    let q = bases.n_u();
    let na = bases.n_alpha();
    let nb = bases.n_beta();
    let nt = s * k;
    let dim = nt + na + p * nb;

    let blocks = state.omega_blocks();
    let a_inv = linalg::spd_inverse(&blocks.tt, jitter, "Omega_T")?;
    let pb = precision_blocks(state, jitter)?;
    let d_inv = inv_diag(&model::wavelength_variance(&state.gamma_sigma, &bases.k_sigma)?);
    let h = &bases.k_u * blocks.tr.transpose() * &a_inv;
    // V⁻¹ = D⁻¹ − D⁻¹K_U (P_RR + K_U'D⁻¹K_U)⁻¹ K_U'D⁻¹, since P_RR is the inverse Schur complement.
    let du = DMatrix::from_fn(w, q, |i, l| bases.k_u[(i, l)] * d_inv[i]);
    let inner = &pb.rr + bases.k_u.transpose() * &du;
    let inner_inv = linalg::spd_inverse(&inner, jitter, "collapsed U_R precision")?;
    let mut v_inv = -(&du * inner_inv * du.transpose());
    for i in 0..w {
        v_inv[(i, i)] += d_inv[i];
    }
    linalg::symmetrize(&mut v_inv);

    let x = trait_design(&data.e);
    let xtx = x.transpose() * &x;
    let xte = x.transpose() * &data.e;
    let ete = data.e.transpose() * &data.e;
    let xsum = DMatrix::from_fn(k, 1, |c, _| x.column(c).sum());
    let esum = DMatrix::from_fn(1, p, |_, c| data.e.column(c).sum());
    let vh = &v_inv * &h;
    let vka = &v_inv * &bases.k_alpha;
    let vkb = &v_inv * &bases.k_beta;

    let mut precision = DMatrix::zeros(dim, dim);
    let tt = linalg::kron(&(&a_inv + h.transpose() * &vh), &xtx);
    let ta = linalg::kron(&-(vh.transpose() * &bases.k_alpha), &xsum);
    let tb = linalg::kron(&-(vh.transpose() * &bases.k_beta), &xte);
    let aa = bases.k_alpha.transpose() * &vka * data.n() as f64;
    let ab = linalg::kron(&(bases.k_alpha.transpose() * &vkb), &esum);
    let bb = linalg::kron(&(bases.k_beta.transpose() * &vkb), &ete);
    let (oa, ob) = (nt, nt + na);
    precision.view_mut((0, 0), (nt, nt)).copy_from(&tt);
    precision.view_mut((0, oa), (nt, na)).copy_from(&ta);
    precision.view_mut((oa, 0), (na, nt)).copy_from(&ta.transpose());
    precision.view_mut((0, ob), (nt, p * nb)).copy_from(&tb);
    precision.view_mut((ob, 0), (p * nb, nt)).copy_from(&tb.transpose());
    precision.view_mut((oa, oa), (na, na)).copy_from(&aa);
    precision.view_mut((oa, ob), (na, p * nb)).copy_from(&ab);
    precision.view_mut((ob, oa), (p * nb, na)).copy_from(&ab.transpose());
    precision.view_mut((ob, ob), (p * nb, p * nb)).copy_from(&bb);
    for a in 0..s {
        precision[(a * k, a * k)] += 1.0 / priors.alpha_t_var;
        for c in 1..k {
            precision[(a * k + c, a * k + c)] += 1.0 / priors.b_t_var;
        }
    }
    let alpha_var = priors.alpha_r_variances(na, state.sigma2_alpha);
    for l in 0..na {
        precision[(oa + l, oa + l)] += 1.0 / alpha_var[l];
    }
    for l in 0..nb {
        for c in 0..p {
            precision[(ob + c + p * l, ob + c + p * l)] += 1.0 / priors.b_r_variance(l, state.sigma2_beta[c]);
        }
    }
    linalg::symmetrize(&mut precision);

    // Rows of `rtv` are (R_j − H T_j)' V⁻¹.
    let rtv = (&data.r - &data.t * h.transpose()) * &v_inv;
    let lin_t = x.transpose() * (&data.t * &a_inv - &rtv * &h);
    let rtv_sum = DVector::from_fn(w, |i, _| rtv.column(i).sum());
    let lin_a = bases.k_alpha.transpose() * rtv_sum;
    let lin_b = data.e.transpose() * (&rtv * &bases.k_beta);
    let mut linear = DVector::zeros(dim);
    linear.rows_mut(0, nt).copy_from_slice(lin_t.as_slice());
    linear.rows_mut(oa, na).copy_from(&lin_a);
    linear.rows_mut(ob, p * nb).copy_from_slice(lin_b.as_slice());
    GaussianCanonical::new(precision, linear)
}

/// Split a vector laid out as in [`fixed_effects_conditional`] into `(α_T, B_T, α*_R, B_R)`.
pub fn unpack_fixed_effects(
    v: &DVector<f64>,
    s: usize,
    p: usize,
    n_alpha: usize,
    n_beta: usize,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let nt = s * (p + 1);
    let (alpha_t, b_t) = unpack_trait_coefficients(&v.rows(0, nt).into_owned(), s, p);
    let alpha_r = v.rows(nt, n_alpha).into_owned();
    let b_r = DMatrix::from_column_slice(p, n_beta, v.rows(nt + n_alpha, p * n_beta).as_slice());
    (alpha_t, b_t, alpha_r, b_r)
}

/// Draw all fixed effects with `U^R` integrated out, then refresh the trait residuals.
///
/// The caller must redraw `U^R` before anything else conditions on it.
pub fn update_fixed_effects<R: Rng + ?Sized>(
    state: &mut Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    jitter: f64,
    rng: &mut R,
) -> Result<()> {
    let draw = fixed_effects_conditional(state, data, bases, priors, jitter)?
        .factor(jitter, "fixed effects precision")?
        .draw(rng);
    let (alpha_t, b_t, alpha_r, b_r) = unpack_fixed_effects(&draw, state.s(), data.p(), bases.n_alpha(), bases.n_beta());
    state.alpha_t = alpha_t;
    state.b_t = b_t;
    state.alpha_star_r = alpha_r;
    state.b_r = b_r;
    refresh_trait_residuals(state, data);
    Ok(())
}

/// Shared pieces of the U^R conditionals: common precision and per-row linear terms.
struct URConditionals {
    precision: DMatrix<f64>,
    /// n × N_U; row j is the linear term of row j.
    linear: DMatrix<f64>,
}

fn u_r_conditionals(state: &Parameters, data: &Dataset, bases: &BasisSet, jitter: f64) -> Result<URConditionals> {
    let q = bases.n_u();
    let prec_w = inv_diag(&model::wavelength_variance(&state.gamma_sigma, &bases.k_sigma)?);
    let intercept = model::spectral_intercept(state, bases);
    let mut r = &data.r - &data.e * (&state.b_r * bases.k_beta.transpose());
    for mut row in r.row_iter_mut() {
        row -= intercept.transpose();
    }
    let ku_scaled = DMatrix::from_fn(bases.n_wavelengths(), q, |i, l| bases.k_u[(i, l)] * prec_w[i]);
    let pb = precision_blocks(state, jitter)?;
    let precision = bases.k_u.transpose() * &ku_scaled + &pb.rr;
    let linear = r * ku_scaled - state.u_t() * &pb.tr;
    Ok(URConditionals { precision, linear })
}

/// Conditional of row `j` of U^R.
pub fn u_r_conditional(state: &Parameters, data: &Dataset, bases: &BasisSet, j: usize, jitter: f64) -> Result<GaussianCanonical> {
    if j >= data.n() {
        return Err(Error::InvalidInput(format!("row {j} out of range")));
    }
    let c = u_r_conditionals(state, data, bases, jitter)?;
    GaussianCanonical::new(c.precision, c.linear.row(j).transpose())
}

/// Draw every row of U^R (the rows share one precision matrix).
pub fn update_u_r<R: Rng + ?Sized>(state: &mut Parameters, data: &Dataset, bases: &BasisSet, jitter: f64, rng: &mut R) -> Result<()> {
    let s = state.s();
    let q = bases.n_u();
    let c = u_r_conditionals(state, data, bases, jitter)?;
    let chol = linalg::cholesky(&c.precision, jitter, "U_R precision")?;
    let means = chol.solve(&c.linear.transpose());
    let lt = chol.l_dirty().lower_triangle().transpose();
    for j in 0..data.n() {
        let z = linalg::standard_normal_vector(q, rng);
        let eps = lt.solve_upper_triangular(&z).expect("positive diagonal");
        let row = means.column(j) + eps;
        state.u.view_mut((j, s), (1, q)).copy_from(&row.transpose());
    }
    Ok(())
}

fn wishart_inverse_draw<R: Rng + ?Sized>(
    u: &DMatrix<f64>,
    prior_dof: f64,
    prior_scale: f64,
    jitter: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = u.ncols();
    let mut m = u.transpose() * u;
    for i in 0..d {
        m[(i, i)] += prior_scale;
    }
    let scale = linalg::spd_inverse(&m, jitter, "Wishart scale")?;
    let scale_chol = linalg::cholesky(&scale, jitter, "Wishart scale")?.l();
    let dof = prior_dof + u.nrows() as f64;
    for attempt in 0..3 {
        let precision = linalg::wishart_bartlett(dof, &scale_chol, rng)?;
        match linalg::spd_inverse(&precision, jitter, "Omega draw") {
            Ok(omega) if linalg::is_spd(&omega) => return Ok(omega),
            _ => log::warn!("numerically singular Wishart draw (attempt {})", attempt + 1),
        }
    }
    Err(Error::NotPositiveDefinite("Omega draw".into()))
}

/// Draw Ω from Ω⁻¹ ~ Wishart(ν₀ + n, (cI + U'U)⁻¹); block-diagonal for the independent variant.
pub fn update_omega<R: Rng + ?Sized>(state: &mut Parameters, priors: &Priors, variant: ModelVariant, jitter: f64, rng: &mut R) -> Result<()> {
    let d = state.omega.nrows();
    state.omega = match variant {
        ModelVariant::Joint => wishart_inverse_draw(&state.u, priors.omega_dof_for(d), priors.omega_scale, jitter, rng)?,
        ModelVariant::Independent => {
            let s = state.s();
            let q = state.n_u();
            let tt = wishart_inverse_draw(&state.u_t(), priors.omega_dof_for(s), priors.omega_scale, jitter, rng)?;
            let rr = wishart_inverse_draw(&state.u_r(), priors.omega_dof_for(q), priors.omega_scale, jitter, rng)?;
            let mut omega = DMatrix::zeros(d, d);
            omega.view_mut((0, 0), (s, s)).copy_from(&tt);
            omega.view_mut((s, s), (q, q)).copy_from(&rr);
            omega
        }
    };
    Ok(())
}

/// Gamma(shape, rate) parameters of the precision 1/σ² for a block of non-intercept coefficients.
pub fn shrinkage_posterior(coefficients: impl Iterator<Item = f64>, priors: &Priors) -> (f64, f64) {
    let (count, ss) = coefficients.fold((0usize, 0.0), |(c, s), v| (c + 1, s + v * v));
    (priors.shrink_shape + count as f64 / 2.0, priors.shrink_rate + ss / 2.0)
}

fn draw_precision<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn update_variances<R: Rng + ?Sized>(state: &mut Parameters, priors: &Priors, rng: &mut R) -> Result<()> {
    let (a, b) = shrinkage_posterior(state.alpha_star_r.iter().skip(1).copied(), priors);
    state.sigma2_alpha = 1.0 / draw_precision(a, b, rng)?;
    for k in 0..state.b_r.nrows() {
        let (a, b) = shrinkage_posterior(state.b_r.row(k).iter().skip(1).copied(), priors);
        state.sigma2_beta[k] = 1.0 / draw_precision(a, b, rng)?;
    }
    Ok(())
}

/// Sufficient statistics for γ_σ: per-wavelength residual sums of squares.
pub fn residual_sums_of_squares(state: &Parameters, data: &Dataset, bases: &BasisSet) -> DVector<f64> {
    let resid = model::reflectance_residuals(state, data, bases);
    DVector::from_fn(resid.ncols(), |i, _| resid.column(i).norm_squared())
}

/// Log posterior of γ_σ up to a constant (−∞ on log-variance overflow).
pub fn gamma_log_target(gamma: &DVector<f64>, ss: &DVector<f64>, n: usize, k_sigma: &DMatrix<f64>, priors: &Priors) -> f64 {
    let eta = k_sigma * gamma;
    if eta.iter().any(|v| !(v.abs() <= model::MAX_LOG_VARIANCE)) {
        return f64::NEG_INFINITY;
    }
    let half_n = 0.5 * n as f64;
    let lik: f64 = eta.iter().zip(ss.iter()).map(|(&e, &s)| -half_n * e - 0.5 * s * (-e).exp()).sum();
    let prior_var = priors.gamma_variances(gamma.len());
    let prior: f64 = gamma.iter().zip(prior_var.iter()).map(|(&g, &v)| -0.5 * g * g / v).sum();
    let total = lik + prior;
    if total.is_finite() {
        total
    } else {
        f64::NEG_INFINITY
    }
}

/// Metropolis accept/reject on log target values; non-finite proposals are rejected.
pub fn metropolis_accept<R: Rng + ?Sized>(current: f64, proposed: f64, rng: &mut R) -> bool {
    if !proposed.is_finite() {
        return false;
    }
    let log_ratio = proposed - current;
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// One random-walk Metropolis update of γ_σ; returns (accepted, proposals).
pub fn update_gamma_sigma<R: Rng + ?Sized>(
    state: &mut Parameters,
    data: &Dataset,
    bases: &BasisSet,
    priors: &Priors,
    rw_scale: f64,
    mode: GammaUpdate,
    rng: &mut R,
) -> (u64, u64) {
    let ss = residual_sums_of_squares(state, data, bases);
    let n = data.n();
    let mut current = gamma_log_target(&state.gamma_sigma, &ss, n, &bases.k_sigma, priors);
    match mode {
        GammaUpdate::Block => {
            let step = linalg::standard_normal_vector(state.gamma_sigma.len(), rng) * rw_scale;
            let proposal = &state.gamma_sigma + step;
            let proposed = gamma_log_target(&proposal, &ss, n, &bases.k_sigma, priors);
            if metropolis_accept(current, proposed, rng) {
                state.gamma_sigma = proposal;
                (1, 1)
            } else {
                (0, 1)
            }
        }
        GammaUpdate::PerCoordinate => {
            let mut accepted = 0;
            for i in 0..state.gamma_sigma.len() {
                let mut proposal = state.gamma_sigma.clone();
                let z: f64 = StandardNormal.sample(rng);
                proposal[i] += rw_scale * z;
                let proposed = gamma_log_target(&proposal, &ss, n, &bases.k_sigma, priors);
                if metropolis_accept(current, proposed, rng) {
                    state.gamma_sigma = proposal;
                    current = proposed;
                    accepted += 1;
                }
            }
            (accepted, state.gamma_sigma.len() as u64)
        }
    }
}

/// Multiplicative tuning rule applied once per adaptation window during burn-in.
pub fn adapt_rw_scale(window_accept_rate: f64, rw_scale: f64, low: f64, high: f64) -> f64 {
    if window_accept_rate < low {
        rw_scale * 0.8
    } else if window_accept_rate > high {
        rw_scale * 1.25
    } else {
        rw_scale
    }
}

/// Starting state: least-squares trait coefficients, ridge projections of the
/// per-wavelength regression curves, log residual variances projected onto K_σ,
/// Ω = I and U^R = 0.
pub fn initial_state(data: &Dataset, bases: &BasisSet) -> Result<Parameters> {
    let dims = Dims::new(data, bases);
    let mut state = Parameters::zeros(&dims);
    if dims.n == 0 {
        return Ok(state);
    }
    let x = trait_design(&data.e);
    let theta = linalg::ridge_solve(&x, &data.t, 1e-8)?;
    state.alpha_t = theta.row(0).transpose();
    state.b_t = theta.rows(1, dims.p).transpose();
    refresh_trait_residuals(&mut state, data);

    let curves = linalg::ridge_solve(&x, &data.r, 1e-8)?;
    let intercept_curve = curves.row(0).transpose();
    state.alpha_star_r = linalg::ridge_solve(&bases.k_alpha, &DMatrix::from_column_slice(dims.w, 1, intercept_curve.as_slice()), 1e-3)?
        .column(0)
        .into_owned();
    let coef_curves = curves.rows(1, dims.p).transpose();
    state.b_r = linalg::ridge_solve(&bases.k_beta, &coef_curves, 1e-3)?.transpose();

    let ss = residual_sums_of_squares(&state, data, bases);
    let log_var = ss.map(|v| (v / dims.n as f64).max(1e-12).ln());
    state.gamma_sigma = linalg::ridge_solve(&bases.k_sigma, &DMatrix::from_column_slice(dims.w, 1, log_var.as_slice()), 1e-6)?
        .column(0)
        .into_owned();
    Ok(state)
}

/// One full Gibbs sweep; returns the γ_σ (accepted, proposals) counts.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut Parameters,
    data: &Dataset,
    bases: &BasisSet,
    config: &SamplerConfig,
    rw_scale: f64,
    rng: &mut R,
) -> std::result::Result<(u64, u64), (&'static str, Error)> {
    let priors = &config.priors;
    let jitter = config.jitter;
    match config.fixed_effects {
        FixedEffectsUpdate::Collapsed => {
            update_fixed_effects(state, data, bases, priors, jitter, rng).map_err(|e| ("fixed_effects", e))?;
        }
        FixedEffectsUpdate::Conditional => {
            update_b_t(state, data, priors, jitter, rng).map_err(|e| ("B_T", e))?;
            update_b_r(state, data, bases, priors, jitter, rng).map_err(|e| ("B_R", e))?;
            update_alpha_r(state, data, bases, priors, jitter, rng).map_err(|e| ("alpha_star_R", e))?;
        }
    }
    update_u_r(state, data, bases, jitter, rng).map_err(|e| ("U_R", e))?;
    update_omega(state, priors, config.variant, jitter, rng).map_err(|e| ("Omega", e))?;
    update_variances(state, priors, rng).map_err(|e| ("variances", e))?;
    Ok(update_gamma_sigma(state, data, bases, priors, rw_scale, config.gamma_update, rng))
}

/// Run one chain from [`initial_state`].
pub fn run_chain(data: &Dataset, bases: &BasisSet, config: &SamplerConfig) -> Result<PosteriorStore> {
    let initial = initial_state(data, bases)?;
    run_chain_from(data, bases, config, initial)
}

pub fn run_chain_from(data: &Dataset, bases: &BasisSet, config: &SamplerConfig, initial: Parameters) -> Result<PosteriorStore> {
    config.validate()?;
    bases.validate()?;
    let dims = Dims::new(data, bases);
    if data.n_wavelengths() != dims.w {
        return Err(Error::dim("run_chain wavelengths", dims.w, data.n_wavelengths()));
    }
    initial.validate(&dims)?;
    let mut state = initial;
    if config.variant == ModelVariant::Independent {
        let s = dims.s;
        let q = dims.n_u;
        state.omega.view_mut((0, s), (s, q)).fill(0.0);
        state.omega.view_mut((s, 0), (q, s)).fill(0.0);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut rw_scale = config.rw_scale;
    let mut stats = AcceptanceStats::default();
    let mut rw_trace = Vec::new();
    let (mut window_acc, mut window_prop) = (0u64, 0u64);
    let step = config.thinning_step();
    let mut states = Vec::with_capacity(config.n_keep);

    for it in 0..config.n_iterations {
        let (acc, prop) = sweep(&mut state, data, bases, config, rw_scale, &mut rng).map_err(|(block, e)| Error::Sampler {
            iteration: it,
            block,
            source: Box::new(e),
        })?;
        if it < config.n_burnin {
            stats.burnin_accepted += acc;
            stats.burnin_proposals += prop;
            window_acc += acc;
            window_prop += prop;
            if (it + 1) % config.adapt_window == 0 {
                let rate = window_acc as f64 / window_prop.max(1) as f64;
                stats.last_burnin_window_rate = Some(rate);
                rw_scale = adapt_rw_scale(rate, rw_scale, config.target_accept_low, config.target_accept_high);
                rw_trace.push(rw_scale);
                window_acc = 0;
                window_prop = 0;
            }
        } else {
            stats.sampling_accepted += acc;
            stats.sampling_proposals += prop;
            let post = it - config.n_burnin + 1;
            if post % step == 0 && states.len() < config.n_keep {
                states.push(state.clone());
            }
        }
    }
    stats.final_rw_scale = rw_scale;
    Ok(PosteriorStore {
        config: config.clone(),
        dims,
        states,
        acceptance: stats,
        rw_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn adaptation_shrinks_and_grows_outside_the_band() {
        assert_eq!(adapt_rw_scale(0.1, 1.0, 0.2, 0.6), 0.8);
        assert_eq!(adapt_rw_scale(0.7, 1.0, 0.2, 0.6), 1.25);
        assert_eq!(adapt_rw_scale(0.2, 1.0, 0.2, 0.6), 1.0);
        assert_eq!(adapt_rw_scale(0.6, 1.0, 0.2, 0.6), 1.0);
    }

    #[test]
    fn non_finite_proposals_are_rejected_and_uphill_moves_accepted() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(!metropolis_accept(0.0, f64::NEG_INFINITY, &mut rng));
        assert!(!metropolis_accept(0.0, f64::NAN, &mut rng));
        assert!((0..100).all(|_| metropolis_accept(-5.0, -4.0, &mut rng)));
        assert!((0..100).all(|_| !metropolis_accept(0.0, -800.0, &mut rng)));
    }

    #[test]
    fn default_and_desk_schedules_thin_to_their_keep_counts() {
        assert_eq!(SamplerConfig::default().thinning_step(), 20);
        assert_eq!(SamplerConfig::desk().thinning_step(), 10);
        let bad = SamplerConfig {
            n_keep: 0,
            ..SamplerConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
