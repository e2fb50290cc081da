#![allow(dead_code)]

pub mod conditionals;
pub mod gamma;

use jointspec::basis::{BasisSet, BasisSpecs, KernelBasisSpec, SplineSpec, WavelengthGrid};
use jointspec::model::{simulate_dataset, Dataset, Dims, Parameters};
use jointspec::synthetic::{synthetic_truth, SyntheticSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// 450..940 nm every 10 nm.
pub fn desk_grid() -> WavelengthGrid {
    WavelengthGrid::regular(450.0, 10.0, 50).unwrap()
}

pub fn desk_bases() -> BasisSet {
    BasisSet::from_specs(&desk_grid(), &BasisSpecs::reduced()).unwrap()
}

pub fn desk_problem(spec: &SyntheticSpec, data_seed: u64) -> (Parameters, Dataset, BasisSet) {
    let bases = desk_bases();
    let (truth, e) = synthetic_truth(spec, &bases).unwrap();
    let data = simulate_dataset(&truth, &e, &bases, &desk_grid(), data_seed).unwrap();
    (truth, data, bases)
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: usize, c: usize, sd: f64, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| { let z: f64 = StandardNormal.sample(rng); sd * z })
}

pub fn normal_vector(n: usize, sd: f64, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| { let z: f64 = StandardNormal.sample(rng); sd * z })
}

/// A well-conditioned random SPD matrix.
pub fn random_spd(d: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let a = normal_matrix(d, d, 1.0, rng);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

/// Small grid with a handful of kernels: (N_α, N_U, N_β, N_σ) = (5, 4, 3, 2) on `w` points.
pub fn toy_bases(w: usize) -> (WavelengthGrid, BasisSet) {
    let grid = WavelengthGrid::regular(500.0, 10.0, w).unwrap();
    let end = 500.0 + 10.0 * (w as f64 - 1.0);
    let span = end - 500.0;
    let specs = BasisSpecs {
        alpha: KernelBasisSpec::with_spacing(500.0, end, span / 3.0),
        u: KernelBasisSpec::with_spacing(500.0, end, span / 2.0),
        beta: KernelBasisSpec::with_spacing(500.0, end, span),
        sigma: SplineSpec {
            interior_knots: vec![],
            ramp_origin: 500.0,
            ramp_scale: span,
            hinge_scale: span,
        },
    };
    let bases = BasisSet::from_specs(&grid, &specs).unwrap();
    (grid, bases)
}

/// Random valid parameters for a toy of the given sizes; `u` is drawn so that
/// its trait block can later be overwritten by exact residuals.
pub fn random_parameters(n: usize, p: usize, s: usize, bases: &BasisSet, rng: &mut ChaCha20Rng) -> Parameters {
    let dims = Dims::from_parts(n, p, s, bases);
    let mut params = Parameters::zeros(&dims);
    params.alpha_t = normal_vector(s, 1.0, rng);
    params.b_t = normal_matrix(s, p, 0.5, rng);
    params.alpha_star_r = normal_vector(dims.n_alpha, 0.5, rng);
    params.b_r = normal_matrix(p, dims.n_beta, 0.3, rng);
    params.gamma_sigma = DVector::from_fn(dims.n_sigma, |i, _| if i == 0 { -1.5 } else { 0.3 * rng.random::<f64>() });
    params.omega = random_spd(dims.d(), rng);
    params.sigma2_alpha = 0.5 + rng.random::<f64>();
    params.sigma2_beta = DVector::from_fn(p, |_, _| 0.5 + rng.random::<f64>());
    params.u = normal_matrix(n, dims.d(), 0.5, rng);
    params
}

pub fn random_dataset(params: &Parameters, grid: &WavelengthGrid, bases: &BasisSet, n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let e = normal_matrix(n, params.b_t.ncols(), 1.0, &mut r);
    simulate_dataset(params, &e, bases, grid, seed + 1).unwrap()
}

/// Gaussian conditioning in covariance form with a general (LU) inverse:
/// for x = (a, b) ~ N(mu, S), returns the mean and covariance of a | b = b_obs.
pub fn condition_gaussian(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    na: usize,
    b_obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let nb = cov.nrows() - na;
    let saa = cov.view((0, 0), (na, na)).into_owned();
    let sab = cov.view((0, na), (na, nb)).into_owned();
    let sbb = cov.view((na, na), (nb, nb)).into_owned();
    let sbb_inv = sbb.clone().lu().try_inverse().expect("invertible");
    let gain = &sab * &sbb_inv;
    let mean = mu.rows(0, na) + &gain * (b_obs - mu.rows(na, nb));
    let cov = saa - &gain * sab.transpose();
    (mean, cov)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central finite-difference Hessian.
pub fn fd_hessian(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let eval = |di: f64, dj: f64| {
                let mut y = x.clone();
                y[i] += di;
                y[j] += dj;
                f(&y)
            };
            let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// One-sample KS distance between `samples` and a CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability P(K > lambda).
pub fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let k = k as f64;
        sum += 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    sum.clamp(0.0, 1.0)
}

/// p-value of a two-sample KS statistic for sample sizes n and m.
pub fn ks_two_sample_p(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    kolmogorov_p((sq + 0.12 + 0.11 / sq) * d)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
