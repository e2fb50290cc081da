mod common;

use common::conditionals::*;
use common::*;
use jointspec::basis::{BasisSet, WavelengthGrid};
use jointspec::model::{Dataset, Dims, Parameters, Priors};
use jointspec::sampler::{self, unpack_fixed_effects};
use nalgebra::{DMatrix, DVector};

fn assert_density((grad, hess): (f64, f64)) {
    assert!(grad < 1e-4, "gradient at the conditional mean: {grad}");
    assert!(hess < 1e-4, "relative Hessian error {hess}");
}

#[test]
fn trait_conditional_is_the_density_restricted_to_the_trait_block() {
    for seed in [1, 2, 3] {
        assert_density(trait_block_errors(&toy(seed)));
    }
}

#[test]
fn b_r_conditional_is_the_density_restricted_to_b_r() {
    for seed in [4, 5] {
        assert_density(b_r_block_errors(&toy(seed)));
    }
}

#[test]
fn alpha_r_conditional_is_the_density_restricted_to_alpha_r() {
    for seed in [6, 7] {
        assert_density(alpha_r_block_errors(&toy(seed)));
    }
}

#[test]
fn u_r_conditional_is_the_density_restricted_to_one_row() {
    let t = toy(8);
    for j in [0, 3, 7] {
        assert_density(u_r_row_errors(&t, j));
    }
}

#[test]
fn u_r_conditional_matches_joint_gaussian_conditioning() {
    let t = toy(9);
    for j in [1, 5] {
        assert!(u_r_conditioning_error(&t, j) < 1e-8);
    }
}

#[test]
fn collapsed_fixed_effects_match_dense_marginal_regression() {
    for seed in [10, 11, 12] {
        let (prec, mean) = fixed_effects_errors(&toy(seed));
        assert!(prec < 1e-9);
        assert!(mean < 1e-6);
    }
}

#[test]
fn omega_and_shrinkage_conditionals_are_the_density_up_to_a_constant() {
    for seed in [20, 21] {
        let t = toy(seed);
        assert!(omega_spread(&t, seed) < 1e-10);
        assert!(shrinkage_spread(&t, seed) < 1e-10);
    }
}

#[test]
fn collapsed_fixed_effects_with_independent_omega() {
    let mut t = toy(13);
    let s = t.params.s();
    let d = t.params.omega.nrows();
    t.params.omega.view_mut((0, s), (s, d - s)).fill(0.0);
    t.params.omega.view_mut((s, 0), (d - s, s)).fill(0.0);
    let cond = sampler::fixed_effects_conditional(&t.params, &t.data, &t.bases, &t.priors, JITTER).unwrap();
    let (precision, _) = brute_force_fixed_effects(&t);
    assert!(rel_frobenius(&cond.precision, &precision) < 1e-9);
    // With no cross block the trait coefficients decouple from the spectrum coefficients.
    let nt = s * (t.data.p() + 1);
    let off = cond.precision.view((0, nt), (nt, cond.precision.ncols() - nt)).into_owned();
    assert!(max_abs(&off) < 1e-12);
}

#[test]
fn unpack_fixed_effects_inverts_the_layout() {
    let t = toy(14);
    let (s, p, na, nb) = (t.params.s(), t.data.p(), t.bases.n_alpha(), t.bases.n_beta());
    let mut v = trait_vector(&t.params).as_slice().to_vec();
    v.extend(t.params.alpha_star_r.iter());
    v.extend(t.params.b_r.as_slice());
    let (a, b, ar, br) = unpack_fixed_effects(&DVector::from_vec(v), s, p, na, nb);
    assert_eq!(a, t.params.alpha_t);
    assert_eq!(b, t.params.b_t);
    assert_eq!(ar, t.params.alpha_star_r);
    assert_eq!(br, t.params.b_r);
}

/// Bases with a single column of ones, on one wavelength.
fn scalar_problem(r_value: f64) -> (Parameters, Dataset, BasisSet) {
    let bases = BasisSet::intercept_only(1);
    let grid = WavelengthGrid::regular(500.0, 1.0, 1).unwrap();
    let e = DMatrix::from_element(1, 1, 1.0);
    let data = Dataset::new(
        e,
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, r_value),
        grid,
        vec!["a".into()],
    )
    .unwrap();
    let dims = Dims::new(&data, &bases);
    let params = Parameters::zeros(&dims);
    (params, data, bases)
}

#[test]
fn b_r_scalar_conjugate_value() {
    // σ² = 1, prior variance 10³, one residual of 2.
    let (params, data, bases) = scalar_problem(2.0);
    let cond = sampler::b_r_conditional(&params, &data, &bases, &Priors::default()).unwrap();
    let mean = cond.mean().unwrap()[0];
    assert!((mean - 2.0 * 1e3 / (1e3 + 1.0)).abs() < 1e-12);
    assert!((mean - 1.998).abs() < 1e-5);
    assert!((cond.covariance().unwrap()[(0, 0)] - 1e3 / 1001.0).abs() < 1e-12);
}

#[test]
fn alpha_r_scalar_conjugate_value() {
    let (params, data, bases) = scalar_problem(3.0);
    let cond = sampler::alpha_r_conditional(&params, &data, &bases, &Priors::default()).unwrap();
    // n = 1, σ² = 1, prior variance 10³ on the intercept column.
    assert!((cond.mean().unwrap()[0] - 3.0 * 1e3 / 1001.0).abs() < 1e-12);
}

fn empty_toy() -> Toy {
    let mut t = toy(15);
    t.data = t.data.subset(&[]);
    t.params.u = DMatrix::zeros(0, t.params.omega.nrows());
    t
}

#[test]
fn conditionals_reduce_to_the_prior_without_data() {
    let t = empty_toy();
    let (p, na, nb) = (t.data.p(), t.bases.n_alpha(), t.bases.n_beta());

    let trait_cond = sampler::trait_conditional(&t.params, &t.data, &t.priors, JITTER).unwrap();
    assert!(trait_cond.mean().unwrap().amax() < 1e-14);
    let cov = trait_cond.covariance().unwrap();
    for i in 0..cov.nrows() {
        let want = if i % (p + 1) == 0 { t.priors.alpha_t_var } else { t.priors.b_t_var };
        assert!((cov[(i, i)] - want).abs() < 1e-10);
    }

    let br = sampler::b_r_conditional(&t.params, &t.data, &t.bases, &t.priors).unwrap();
    let cov = br.covariance().unwrap();
    for l in 0..nb {
        for c in 0..p {
            let i = c + p * l;
            assert!((cov[(i, i)] - t.priors.b_r_variance(l, t.params.sigma2_beta[c])).abs() < 1e-10);
        }
    }
    assert!(br.mean().unwrap().amax() < 1e-14);

    let ar = sampler::alpha_r_conditional(&t.params, &t.data, &t.bases, &t.priors).unwrap();
    let want = t.priors.alpha_r_variances(na, t.params.sigma2_alpha);
    let cov = ar.covariance().unwrap();
    for l in 0..na {
        assert!((cov[(l, l)] - want[l]).abs() < 1e-10);
    }

    let fe = sampler::fixed_effects_conditional(&t.params, &t.data, &t.bases, &t.priors, JITTER).unwrap();
    assert!(fe.mean().unwrap().amax() < 1e-14);
    let d = fe.precision.nrows();
    assert!(max_abs(&(fe.precision.clone() - DMatrix::from_diagonal(&fe.precision.diagonal()))) == 0.0);
    assert_eq!(d, t.params.s() * (p + 1) + na + p * nb);
}

#[test]
fn trait_conditional_flat_prior_is_least_squares() {
    let (grid, bases) = toy_bases(6);
    let mut r = rng(16);
    let mut params = random_parameters(12, 2, 1, &bases, &mut r);
    let d = params.omega.nrows();
    params.omega = DMatrix::identity(d, d);
    let data = random_dataset(&params, &grid, &bases, 12, 17);
    let priors = Priors {
        alpha_t_var: 1e14,
        b_t_var: 1e14,
        ..Priors::default()
    };
    let cond = sampler::trait_conditional(&params, &data, &priors, JITTER).unwrap();
    let mut x = DMatrix::from_element(12, 3, 1.0);
    x.columns_mut(1, 2).copy_from(&data.e);
    let xtx = x.transpose() * &x;
    let ols = xtx.lu().solve(&(x.transpose() * data.t.column(0))).unwrap();
    assert!((cond.mean().unwrap() - ols).amax() < 1e-6);
}

#[test]
fn trait_conditional_matches_a_grid_scan_of_the_density() {
    let (mode, curvature) = trait_grid_errors(&toy(18));
    assert!(mode < 1e-4);
    assert!(curvature < 1e-4);
}
