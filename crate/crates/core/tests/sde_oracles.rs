use approx::assert_relative_eq;
use nalgebra::Matrix4;
use proptest::prelude::*;

use phaseflow::linalg2::{mat_exp, BlockMat2, Sym2};
use phaseflow::sde::{BetaSchedule, ProcessSpec};
use phaseflow::splitting::{split_substep_a, split_substep_a_stoch, split_substep_b, split_substep_b_stoch};
use phaseflow::State;

/// Kernel covariance from the block exponential of `[[F, GGᵀ], [0, −Fᵀ]]`.
fn matrix_fraction_cov(spec: &ProcessSpec, t: f64, init: Sym2) -> Sym2 {
    let f = spec.drift_matrix(0.0);
    let q = spec.ggt(0.0);
    #[rustfmt::skip]
    let h = Matrix4::new(
        f.a, f.b, q.a, q.b,
        f.c, f.dd, q.c, q.dd,
        0.0, 0.0, -f.a, -f.c,
        0.0, 0.0, -f.b, -f.dd,
    ) * t;
    let e = h.exp();
    let phi = BlockMat2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]);
    let gram = BlockMat2::new(e[(0, 2)], e[(0, 3)], e[(1, 2)], e[(1, 3)]) * phi.transpose();
    Sym2::from_mat(phi * init.to_mat() * phi.transpose() + gram)
}

fn psld_spec() -> impl Strategy<Value = ProcessSpec> {
    (0.5..20.0f64, 0.0..2.0f64, 0.5..10.0f64, 0.5..8.0f64).prop_map(|(beta, g, nu, minv)| ProcessSpec {
        beta: BetaSchedule::Constant(beta),
        gamma_fric: g,
        nu,
        mass_inv: minv,
        ..ProcessSpec::psld_default()
    })
}

proptest! {
    #[test]
    fn stationary_covariance_solves_lyapunov(spec in psld_spec()) {
        let res = spec.lyapunov_residual(0.0, spec.stationary_cov());
        prop_assert!(res.max_abs() < 1e-12 * spec.beta_at(0.0).max(1.0) * spec.nu.max(1.0));
    }

    #[test]
    fn kernel_matches_matrix_fraction(spec in psld_spec(), frac in 0.0..1.0f64, v in 0.0..2.0f64, c in -0.3..0.3f64) {
        // The block exponential carries e^{‖F‖t} growth, so keep ‖F‖t moderate.
        let t = frac * (4.0 / spec.drift_matrix(0.0).max_abs()).min(1.0);
        let init = Sym2::new(v + 0.5, c, 0.4);
        let ours = spec.kernel_cov(t, init);
        let oracle = matrix_fraction_cov(&spec, t, init);
        prop_assert!(ours.max_abs_diff(oracle) < 1e-9 * (1.0 + oracle.xx.abs() + oracle.mm.abs()));
    }

    #[test]
    fn kernel_matches_rk4(spec in psld_spec(), t in 0.0..1.0f64) {
        let init = Sym2::diag(0.3, spec.data_momentum_var());
        let rk = spec.kernel_cov_rk4(t, init, 1e-5);
        prop_assert!(spec.kernel_cov(t, init).max_abs_diff(rk) < 1e-8);
    }

    #[test]
    fn split_fields_sum_to_prob_flow(x in -3.0..3.0f64, m in -3.0..3.0f64, sx in -3.0..3.0f64, sm in -3.0..3.0f64, t in 0.01..1.0f64) {
        let spec = ProcessSpec::psld_default();
        let z = State { x: vec![x], m: vec![m] };
        let s = State { x: vec![sx], m: vec![sm] };
        let h = 1e-2;
        let a = split_substep_a(&spec, &z, &s.x, h);
        let b = split_substep_b(&spec, &z, &s.m, h);
        let field = spec.prob_flow_field(&s, &z, t);
        // Substeps move backwards in time, so each is `z − h · (its part of the field)`.
        prop_assert!(((z.x[0] - a.x[0]) / h - field.x[0]).abs() < 1e-10);
        prop_assert!(((z.m[0] - b.m[0]) / h - field.m[0]).abs() < 1e-10);
        prop_assert_eq!(a.m[0], m);
        prop_assert_eq!(b.x[0], x);
    }

    #[test]
    fn stochastic_split_plus_ou_drift_is_reverse_drift(x in -3.0..3.0f64, m in -3.0..3.0f64, sx in -3.0..3.0f64, sm in -3.0..3.0f64) {
        let spec = ProcessSpec::psld_default();
        let z = State { x: vec![x], m: vec![m] };
        let s = State { x: vec![sx], m: vec![sm] };
        let h = 1e-2;
        let beta = spec.beta_at(0.0);
        let a = split_substep_a_stoch(&spec, &z, &s.x, h);
        let b = split_substep_b_stoch(&spec, &z, &s.m, h);
        // OU mean rates in reverse time.
        let ou_x = -0.5 * beta * spec.gamma_fric * x;
        let ou_m = -0.5 * beta * spec.nu * m;
        let drift = spec.reverse_sde_drift(&s, &z, 0.5);
        prop_assert!(((a.x[0] - x) / h + ou_x + drift.x[0]).abs() < 1e-10);
        prop_assert!(((b.m[0] - m) / h + ou_m + drift.m[0]).abs() < 1e-10);
    }
}

#[test]
fn psld_default_coefficients() {
    let spec = ProcessSpec::psld_default();
    let f = spec.drift_matrix(0.0);
    assert_eq!(f, BlockMat2::new(4.0 * -0.01, 4.0 * 4.0, -4.0, 4.0 * -4.01));
    let g = spec.diffusion_matrix(0.0);
    assert_relative_eq!(g.a, 0.08f64.sqrt(), max_relative = 1e-15);
    assert_relative_eq!(g.dd, (0.25f64 * 4.01 * 8.0).sqrt(), max_relative = 1e-15);
    let q = spec.ggt(0.0);
    assert_relative_eq!(q.a, 0.08, max_relative = 1e-14);
    assert_relative_eq!(q.dd, 8.02, max_relative = 1e-14);
    assert_eq!((q.b, q.c), (0.0, 0.0));
}

#[test]
fn vp_drift_is_scalar() {
    let spec = ProcessSpec::vp_constant(8.0);
    assert_eq!(spec.drift_matrix(0.3).a, -4.0);
}

#[test]
fn kernel_at_time_zero() {
    let spec = ProcessSpec::psld_default();
    let init = Sym2::new(0.7, 0.1, 0.3);
    let k = spec.kernel_at(0.0, init).unwrap();
    assert_eq!(k.mean_map, BlockMat2::identity());
    assert!(k.cov.max_abs_diff(init) < 1e-15);
}

#[test]
fn stationary_kernel_stays_put() {
    let spec = ProcessSpec::psld_default();
    let stat = spec.stationary_cov();
    assert_eq!(stat, Sym2::diag(1.0, 0.25));
    for t in [0.0, 0.1, 0.5, 1.0] {
        assert!(spec.kernel_cov(t, stat).max_abs_diff(stat) < 1e-12);
        assert!(matrix_fraction_cov(&spec, t, stat).max_abs_diff(stat) < 1e-10);
    }
}

#[test]
fn vp_noise_variance_closed_form() {
    for spec in [ProcessSpec::vp_constant(8.0), ProcessSpec::vp_linear(0.1, 20.0)] {
        for t in [1e-4, 0.01, 0.3, 1.0] {
            let var = spec.kernel_cov(t, spec.zero_init_cov()).xx;
            let expected = 1.0 - (-spec.beta_integral(t)).exp();
            assert_relative_eq!(var, expected, max_relative = 1e-12);
        }
    }
    let lin = ProcessSpec::vp_linear(0.1, 20.0);
    assert_relative_eq!(lin.beta_integral(1.0), 0.5 * (0.1 + 20.0), max_relative = 1e-14);
}

#[test]
fn vp_reverse_drift_at_stationarity() {
    // Score of N(0, 1) is −x: reverse drift −½βx + βx = ½βx, probability flow vanishes.
    let spec = ProcessSpec::vp_constant(8.0);
    let z = State { x: vec![1.5, -0.5], m: vec![0.0, 0.0] };
    let s = z.scale(-1.0);
    let drift = spec.reverse_sde_drift(&s, &z, 0.4);
    assert_eq!(drift.x, vec![6.0, -2.0]);
    let field = spec.prob_flow_field(&s, &z, 0.4);
    assert!(field.max_abs() < 1e-15);
}

#[test]
fn mean_map_is_drift_exponential() {
    let spec = ProcessSpec::psld_default();
    let e = spec.mean_map(0.37);
    assert!((e - mat_exp(spec.drift_matrix(0.0), 0.37)).max_abs() < 1e-15);
}

#[test]
fn invalid_specs_rejected() {
    let mut spec = ProcessSpec::psld_default();
    spec.mass_inv = 0.0;
    assert!(spec.validate().is_err());
    let mut spec = ProcessSpec::psld_default();
    spec.beta = BetaSchedule::Linear { min: 0.1, max: 20.0 };
    assert!(spec.validate().is_err());
    assert!(ProcessSpec::vp_constant(-1.0).validate().is_err());
}
