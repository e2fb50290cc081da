//! Dense linear-algebra helpers shared by the model, sampler and predictors.
//!
//! Everything here is small and dense (dimensions in the tens), so plain
//! nalgebra Cholesky factorizations are used throughout.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default diagonal jitter added when a factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Number of jittered retries after the plain factorization fails.
const JITTER_ATTEMPTS: usize = 3;

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Cholesky factorization with jitter escalation (x10 per attempt).
pub fn cholesky(a: &DMatrix<f64>, jitter: f64, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim("cholesky", "square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what}: non-finite entries")));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let scale = 1.0 + a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / a.nrows().max(1) as f64;
    let mut eps = jitter * scale;
    for _ in 0..JITTER_ATTEMPTS {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(b) {
            log::debug!("{what}: factorized after adding jitter {eps:e}");
            return Ok(c);
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite(what.to_string()))
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols() && a.iter().all(|v| v.is_finite()) && Cholesky::new(a.clone()).is_some()
}

pub fn spd_inverse(a: &DMatrix<f64>, jitter: f64, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(a, jitter, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Multivariate normal log density evaluated through a Cholesky factor of the covariance.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov_chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x - mean;
    let z = cov_chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .expect("cholesky factor has a positive diagonal");
    let k = x.len() as f64;
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det_from_cholesky(cov_chol) + z.norm_squared())
}

pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Draw from N(mean, cov) using a Cholesky factor of `cov`.
pub fn mvn_draw<R: Rng + ?Sized>(mean: &DVector<f64>, cov_chol: &Cholesky<f64, Dyn>, rng: &mut R) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + cov_chol.l_dirty().lower_triangle() * z
}

/// A Gaussian in canonical (information) form: density ∝ exp(-x'Qx/2 + b'x).
///
/// Every conjugate Gibbs block is built in this form; the mean is `Q⁻¹b`.
#[derive(Clone, Debug)]
pub struct GaussianCanonical {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

/// Canonical Gaussian after factorizing its precision.
pub struct FactoredGaussian {
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
}

impl GaussianCanonical {
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        if precision.nrows() != linear.len() || precision.ncols() != linear.len() {
            return Err(Error::dim(
                "canonical gaussian",
                format!("{0}x{0}", linear.len()),
                format!("{}x{}", precision.nrows(), precision.ncols()),
            ));
        }
        Ok(Self { precision, linear })
    }

    pub fn factor(&self, jitter: f64, what: &str) -> Result<FactoredGaussian> {
        let chol = cholesky(&self.precision, jitter, what)?;
        let mean = chol.solve(&self.linear);
        Ok(FactoredGaussian { chol, mean })
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.factor(DEFAULT_JITTER, "conditional precision")?.mean)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.precision, DEFAULT_JITTER, "conditional precision")
    }
}

impl FactoredGaussian {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = self.chol.inverse();
        symmetrize(&mut c);
        c
    }

    /// mean + L⁻ᵀz, where precision = LLᵀ.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        let lt = self.chol.l_dirty().lower_triangle().transpose();
        let eps = lt
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + eps
    }
}

/// Wishart(ν, S) draw via the Bartlett decomposition; E[X] = νS.
///
/// `scale_chol` is the lower Cholesky factor of S.
pub fn wishart_bartlett<R: Rng + ?Sized>(dof: f64, scale_chol: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = scale_chol.nrows();
    if dof <= (d as f64) - 1.0 {
        return Err(Error::InvalidInput(format!("wishart dof {dof} must exceed dimension - 1 = {}", d as f64 - 1.0)));
    }
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = scale_chol * a;
    let mut x = &la * la.transpose();
    symmetrize(&mut x);
    Ok(x)
}

/// Log density of Wishart(ν, S) at X.
pub fn wishart_log_density(x: &DMatrix<f64>, dof: f64, scale: &DMatrix<f64>) -> f64 {
    let d = x.nrows();
    let (Some(cx), Some(cs)) = (Cholesky::new(x.clone()), Cholesky::new(scale.clone())) else {
        return f64::NEG_INFINITY;
    };
    let df = d as f64;
    let trace = (cs.inverse() * x).trace();
    0.5 * (dof - df - 1.0) * log_det_from_cholesky(&cx)
        - 0.5 * trace
        - 0.5 * dof * df * std::f64::consts::LN_2
        - 0.5 * dof * log_det_from_cholesky(&cs)
        - log_multivariate_gamma(0.5 * dof, d)
}

fn log_multivariate_gamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    let mut s = 0.25 * df * (df - 1.0) * std::f64::consts::PI.ln();
    for j in 0..d {
        s += statrs::function::gamma::ln_gamma(a - 0.5 * j as f64);
    }
    s
}

/// Gamma(shape, rate) log density.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Solve the least-squares problem min ‖Xb − y‖² + ridge‖b‖² for each column of `y`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let mut g = x.transpose() * x;
    for i in 0..g.nrows() {
        g[(i, i)] += ridge;
    }
    let c = cholesky(&g, DEFAULT_JITTER, "ridge normal equations")?;
    Ok(c.solve(&(x.transpose() * y)))
}

/// Kronecker product A ⊗ B.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
