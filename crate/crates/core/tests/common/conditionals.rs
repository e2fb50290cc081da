//! Oracles for the Gibbs conditionals on small toys. Each check returns the
//! measured error so callers can apply their own tolerance.

use super::*;
use jointspec::basis::BasisSet;
use jointspec::linalg::{self, GaussianCanonical};
use jointspec::model::{self, log_joint_density, Dataset, Parameters, Priors};
use jointspec::sampler::{self, unpack_trait_coefficients};
use nalgebra::{DMatrix, DVector};

pub const JITTER: f64 = 1e-10;

pub struct Toy {
    pub bases: BasisSet,
    pub params: Parameters,
    pub data: Dataset,
    pub priors: Priors,
}

/// n = 8, p = 2, s = 2, W = 8, with U^T made consistent with the data.
pub fn toy(seed: u64) -> Toy {
    let (grid, bases) = toy_bases(8);
    let mut r = rng(seed);
    let mut params = random_parameters(8, 2, 2, &bases, &mut r);
    let data = random_dataset(&params, &grid, &bases, 8, seed + 100);
    sampler::refresh_trait_residuals(&mut params, &data);
    Toy {
        bases,
        params,
        data,
        priors: Priors {
            alpha_t_var: 4.0,
            b_t_var: 2.0,
            alpha_r_intercept_var: 3.0,
            b_r_intercept_var: 5.0,
            ..Priors::default()
        },
    }
}

pub fn trait_vector(p: &Parameters) -> DVector<f64> {
    let s = p.s();
    let k = p.b_t.ncols() + 1;
    DVector::from_fn(s * k, |i, _| {
        let (a, c) = (i / k, i % k);
        if c == 0 {
            p.alpha_t[a]
        } else {
            p.b_t[(a, c - 1)]
        }
    })
}

/// (|∇f| at the conditional mean, relative error of −∇²f against the precision).
pub fn density_errors(cond: &GaussianCanonical, f: impl Fn(&DVector<f64>) -> f64) -> (f64, f64) {
    let mean = cond.mean().unwrap();
    let grad = fd_gradient(&f, &mean, 1e-4);
    let hess = fd_hessian(&f, &mean, 1e-2);
    let err = max_abs(&(&hess + &cond.precision)) / max_abs(&cond.precision);
    (grad.amax(), err)
}

pub fn trait_block_errors(t: &Toy) -> (f64, f64) {
    let cond = sampler::trait_conditional(&t.params, &t.data, &t.priors, JITTER).unwrap();
    let (s, p) = (t.params.s(), t.data.p());
    density_errors(&cond, |v| {
        let mut q = t.params.clone();
        let (a, b) = unpack_trait_coefficients(v, s, p);
        q.alpha_t = a;
        q.b_t = b;
        log_joint_density(&q, &t.data, &t.bases, &t.priors)
    })
}

pub fn b_r_block_errors(t: &Toy) -> (f64, f64) {
    let cond = sampler::b_r_conditional(&t.params, &t.data, &t.bases, &t.priors).unwrap();
    let (p, nb) = (t.data.p(), t.bases.n_beta());
    density_errors(&cond, |v| {
        let mut q = t.params.clone();
        q.b_r = DMatrix::from_column_slice(p, nb, v.as_slice());
        log_joint_density(&q, &t.data, &t.bases, &t.priors)
    })
}

pub fn alpha_r_block_errors(t: &Toy) -> (f64, f64) {
    let cond = sampler::alpha_r_conditional(&t.params, &t.data, &t.bases, &t.priors).unwrap();
    density_errors(&cond, |v| {
        let mut q = t.params.clone();
        q.alpha_star_r = v.clone();
        log_joint_density(&q, &t.data, &t.bases, &t.priors)
    })
}

pub fn u_r_row_errors(t: &Toy, j: usize) -> (f64, f64) {
    let s = t.params.s();
    let cond = sampler::u_r_conditional(&t.params, &t.data, &t.bases, j, JITTER).unwrap();
    density_errors(&cond, |v| {
        let mut q = t.params.clone();
        for (l, &x) in v.iter().enumerate() {
            q.u[(j, s + l)] = x;
        }
        log_joint_density(&q, &t.data, &t.bases, &t.priors)
    })
}

/// Max abs error of the U^R row conditional against conditioning the joint
/// Gaussian of (U^R_j, R_j) given U^T_j.
pub fn u_r_conditioning_error(t: &Toy, j: usize) -> f64 {
    let s = t.params.s();
    let q = t.bases.n_u();
    let w = t.bases.n_wavelengths();
    let blocks = t.params.omega_blocks();
    let sigma2 = model::wavelength_variance(&t.params.gamma_sigma, &t.bases.k_sigma).unwrap();
    let u_t = t.params.u.row(j).columns(0, s).transpose();
    let tt_inv = blocks.tt.clone().lu().try_inverse().unwrap();
    let m = blocks.tr.transpose() * &tt_inv * &u_t;
    let c = &blocks.rr - blocks.tr.transpose() * &tt_inv * &blocks.tr;
    let f = model::fixed_spectrum(&t.params, &t.bases, &t.data.e.row(j).transpose());
    let mut cov = DMatrix::zeros(q + w, q + w);
    cov.view_mut((0, 0), (q, q)).copy_from(&c);
    let kc = &t.bases.k_u * &c;
    cov.view_mut((q, 0), (w, q)).copy_from(&kc);
    cov.view_mut((0, q), (q, w)).copy_from(&kc.transpose());
    let mut rr = &kc * t.bases.k_u.transpose();
    for i in 0..w {
        rr[(i, i)] += sigma2[i];
    }
    cov.view_mut((q, q), (w, w)).copy_from(&rr);
    let mut mu = DVector::zeros(q + w);
    mu.rows_mut(0, q).copy_from(&m);
    mu.rows_mut(q, w).copy_from(&(&f + &t.bases.k_u * &m));
    let (want_mean, want_cov) = condition_gaussian(&mu, &cov, q, &t.data.r.row(j).transpose());
    let cond = sampler::u_r_conditional(&t.params, &t.data, &t.bases, j, JITTER).unwrap();
    (cond.mean().unwrap() - &want_mean).amax().max(max_abs(&(cond.covariance().unwrap() - &want_cov)))
}

/// Dense GLS with U^R integrated out: Y_j = (T_j, R_j) ~ N(Z_j θ, Σ).
pub fn brute_force_fixed_effects(t: &Toy) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p, s) = (t.data.n(), t.data.p(), t.data.s());
    let (na, nb, w) = (t.bases.n_alpha(), t.bases.n_beta(), t.bases.n_wavelengths());
    let k = p + 1;
    let nt = s * k;
    let dim = nt + na + p * nb;
    let sigma = model::induced_sigma(&t.params, &t.bases).unwrap().sigma;
    let sigma_inv = sigma.lu().try_inverse().unwrap();
    let mut precision = DMatrix::zeros(dim, dim);
    let mut linear = DVector::zeros(dim);
    for j in 0..n {
        let mut z = DMatrix::zeros(s + w, dim);
        for a in 0..s {
            z[(a, a * k)] = 1.0;
            for c in 0..p {
                z[(a, a * k + c + 1)] = t.data.e[(j, c)];
            }
        }
        for i in 0..w {
            for l in 0..na {
                z[(s + i, nt + l)] = t.bases.k_alpha[(i, l)];
            }
            for l in 0..nb {
                for c in 0..p {
                    z[(s + i, nt + na + c + p * l)] = t.data.e[(j, c)] * t.bases.k_beta[(i, l)];
                }
            }
        }
        let mut y = DVector::zeros(s + w);
        y.rows_mut(0, s).copy_from(&t.data.t.row(j).transpose());
        y.rows_mut(s, w).copy_from(&t.data.r.row(j).transpose());
        precision += z.transpose() * &sigma_inv * &z;
        linear += z.transpose() * &sigma_inv * y;
    }
    let alpha_var = t.priors.alpha_r_variances(na, t.params.sigma2_alpha);
    for a in 0..s {
        precision[(a * k, a * k)] += 1.0 / t.priors.alpha_t_var;
        for c in 1..k {
            precision[(a * k + c, a * k + c)] += 1.0 / t.priors.b_t_var;
        }
    }
    for l in 0..na {
        precision[(nt + l, nt + l)] += 1.0 / alpha_var[l];
    }
    for l in 0..nb {
        for c in 0..p {
            precision[(nt + na + c + p * l, nt + na + c + p * l)] += 1.0 / t.priors.b_r_variance(l, t.params.sigma2_beta[c]);
        }
    }
    (precision, linear)
}

/// (relative Frobenius error of the precision, relative max error of the mean).
pub fn fixed_effects_errors(t: &Toy) -> (f64, f64) {
    let cond = sampler::fixed_effects_conditional(&t.params, &t.data, &t.bases, &t.priors, JITTER).unwrap();
    let (precision, linear) = brute_force_fixed_effects(t);
    let prec_err = rel_frobenius(&cond.precision, &precision);
    let want = precision.lu().solve(&linear).unwrap();
    let mean_err = (cond.mean().unwrap() - &want).amax() / (1.0 + want.amax());
    (prec_err, mean_err)
}

/// Spread of `log_joint_density − log target` over random states of one block;
/// zero when the block conditional is the stated density up to a constant.
fn constant_spread(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / (1.0 + lo.abs())
}

/// The Ω conditional as a Wishart on Ω⁻¹ with the conjugate parameters.
pub fn omega_spread(t: &Toy, seed: u64) -> f64 {
    let d = t.params.omega.nrows();
    let n = t.data.n() as f64;
    let u = &t.params.u;
    let scale_inv = DMatrix::identity(d, d) * t.priors.omega_scale + u.transpose() * u;
    let scale = scale_inv.lu().try_inverse().unwrap();
    let dof = t.priors.omega_dof_for(d) + n;
    let mut r = rng(seed);
    constant_spread((0..8).map(|_| {
        let mut q = t.params.clone();
        q.omega = random_spd(d, &mut r);
        let inv = q.omega.clone().lu().try_inverse().unwrap();
        log_joint_density(&q, &t.data, &t.bases, &t.priors) - linalg::wishart_log_density(&inv, dof, &scale)
    }))
}

/// The shrinkage conditionals as Gamma densities on the precisions.
pub fn shrinkage_spread(t: &Toy, seed: u64) -> f64 {
    let (shape_a, rate_a) = sampler::shrinkage_posterior(t.params.alpha_star_r.iter().skip(1).copied(), &t.priors);
    let row: Vec<f64> = t.params.b_r.row(0).iter().skip(1).copied().collect();
    let (shape_b, rate_b) = sampler::shrinkage_posterior(row.into_iter(), &t.priors);
    let mut r = rng(seed);
    use rand::Rng;
    constant_spread((0..8).map(|_| {
        let mut q = t.params.clone();
        q.sigma2_alpha = r.random_range(0.05..5.0);
        q.sigma2_beta[0] = r.random_range(0.05..5.0);
        log_joint_density(&q, &t.data, &t.bases, &t.priors)
            - linalg::gamma_log_density(1.0 / q.sigma2_alpha, shape_a, rate_a)
            - linalg::gamma_log_density(1.0 / q.sigma2_beta[0], shape_b, rate_b)
    }))
}

/// Grid scan along one coordinate with a parabolic refinement: (mode, curvature).
pub fn grid_mode(f: impl Fn(f64) -> f64, centre: f64, half_width: f64) -> (f64, f64) {
    let n = 2001;
    let step = 2.0 * half_width / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| centre - half_width + step * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = (1..n - 1).max_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap();
    let (y0, y1, y2) = (ys[best - 1], ys[best], ys[best + 1]);
    let curvature = (y0 - 2.0 * y1 + y2) / (step * step);
    let mode = xs[best] - step * (y2 - y0) / (2.0 * (y0 - 2.0 * y1 + y2));
    (mode, -curvature)
}

/// Worst (mode error / sd, relative curvature error) over the trait coordinates.
pub fn trait_grid_errors(t: &Toy) -> (f64, f64) {
    let cond = sampler::trait_conditional(&t.params, &t.data, &t.priors, JITTER).unwrap();
    let mean = cond.mean().unwrap();
    let cov = cond.covariance().unwrap();
    let (s, p) = (t.params.s(), t.data.p());
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..mean.len() {
        let density = |x: f64| {
            let mut v = mean.clone();
            v[i] = x;
            let (a, b) = unpack_trait_coefficients(&v, s, p);
            let mut q = t.params.clone();
            q.alpha_t = a;
            q.b_t = b;
            log_joint_density(&q, &t.data, &t.bases, &t.priors)
        };
        let sd = cov[(i, i)].sqrt();
        let (mode, curvature) = grid_mode(density, mean[i] + 0.3 * sd, 3.0 * sd);
        worst.0 = worst.0.max((mode - mean[i]).abs() / sd.max(1.0));
        worst.1 = worst.1.max((curvature - cond.precision[(i, i)]).abs() / cond.precision[(i, i)]);
    }
    worst
}
