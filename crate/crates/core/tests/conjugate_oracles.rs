use std::sync::Arc;

use phaseflow::conjugate::{
    build_table, conjugate_ab_step, conjugate_euler_step, lagrange_basis, stability_from_eigenvalues, stability_predicate, BTChoice,
    CoefficientTable, Mask, TableOptions,
};
use phaseflow::linalg2::{apply_to_state, BlockMat2};
use phaseflow::ode::Tolerance;
use phaseflow::score::{GaussianMixtureScore, MixtureSpec, ScoreModel, ScoreParameterization, ScoreProvider};
use phaseflow::sde::ProcessSpec;
use phaseflow::State;

fn quad_schedule(n: usize, t_end: f64, eps: f64) -> Vec<f64> {
    (0..=n).map(|i| eps + (t_end - eps) * ((n - i) as f64 / n as f64).powi(2)).collect()
}

#[test]
fn vp_zero_b_matches_ddim() {
    let spec = ProcessSpec::vp_constant(8.0);
    let mix = MixtureSpec::from_position_mixture(&spec, &[1.0], &[vec![0.7, -0.2]], &[0.3]).unwrap();
    let model = Arc::new(GaussianMixtureScore::new(mix, spec).unwrap());
    let param = ScoreParameterization::default_for(spec);
    let provider = ScoreProvider::new(model.clone(), param);
    let times = quad_schedule(100, 1.0, 1e-3);
    let opts = TableOptions { tol: Tolerance::uniform(1e-13), ab_order: 0 };
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, opts).unwrap();

    let alpha = |t: f64| (-0.5 * 8.0 * t).exp();
    let sigma = |t: f64| (1.0 - alpha(t).powi(2)).sqrt();
    let mut z = State { x: vec![1.3, -0.4], m: vec![0.0, 0.0] };
    let mut x = z.x.clone();
    let mut worst: f64 = 0.0;
    for j in 0..100 {
        let (t, t1) = (times[j], times[j + 1]);
        let ev = provider.eval(&z, t).unwrap();
        z = conjugate_euler_step(&table, j, &z, &ev.eps);
        let s = model.score(&State { x: x.clone(), m: vec![0.0; 2] }, t).unwrap();
        let ratio = alpha(t1) / alpha(t);
        x = x
            .iter()
            .zip(&s.x)
            .map(|(xi, si)| ratio * xi + (sigma(t1) - ratio * sigma(t)) * (-sigma(t) * si))
            .collect();
        for (a, b) in z.x.iter().zip(&x) {
            worst = worst.max((a - b).abs());
        }
    }
    println!("max diff {worst:e}");
    assert!(worst < 1e-10);
}

fn psld_provider() -> (ScoreParameterization, ScoreProvider) {
    let spec = ProcessSpec::psld_default();
    let mix = MixtureSpec::from_position_mixture(&spec, &[0.4, 0.6], &[vec![1.0], vec![-0.8]], &[0.2, 0.3]).unwrap();
    let model = Arc::new(GaussianMixtureScore::new(mix, spec).unwrap());
    let param = ScoreParameterization::default_for(spec);
    (param, ScoreProvider::new(model, param))
}

fn tight(ab_order: usize) -> TableOptions {
    TableOptions { tol: Tolerance::uniform(1e-12), ab_order }
}

#[test]
fn vp_coefficients_closed_form() {
    // A_t = e^{βt/2} and Φ_t = ∫ β / (2σ√(1 − σ²)) = √(e^{βt} − 1).
    let spec = ProcessSpec::vp_constant(8.0);
    let param = ScoreParameterization::default_for(spec);
    let times = quad_schedule(20, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, tight(0)).unwrap();
    for (j, &t) in times.iter().enumerate() {
        let a = (4.0 * t).exp();
        let phi = (8.0 * t).exp_m1().sqrt();
        assert!((table.a[j].a / a - 1.0).abs() < 1e-12, "A at t = {t}");
        assert!((table.phi[j].a / phi - 1.0).abs() < 1e-9, "Phi at t = {t}: {} vs {phi}", table.phi[j].a);
    }
}

#[test]
fn psld_zero_b_inverts_drift_exponential() {
    let spec = ProcessSpec::psld_default();
    let param = ScoreParameterization::default_for(spec);
    let times = quad_schedule(15, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, tight(0)).unwrap();
    for (j, &t) in times.iter().enumerate() {
        let p = table.a[j] * phaseflow::linalg2::mat_exp(spec.drift_matrix(0.0), t);
        assert!((p - BlockMat2::identity()).max_abs() < 1e-10);
    }
}

#[test]
fn zero_residual_is_pure_linear_flow() {
    let (param, _) = psld_provider();
    let times = quad_schedule(10, 1.0, 1e-3);
    for bt in [BTChoice::Zero, BTChoice::LambdaI(0.3), BTChoice::LambdaOnes(0.3)] {
        let table = build_table(&param, bt, &times, Mask::None, tight(0)).unwrap();
        let z = State { x: vec![0.5], m: vec![-1.0] };
        let next = conjugate_euler_step(&table, 3, &z, &State::zeros(1));
        let h = table.step_size(3);
        let lin = table.a_inv[4] * table.a[3] * (BlockMat2::identity() - bt.matrix(param.spec.kind).scale(h));
        assert!(next.max_abs_diff(&apply_to_state(lin, &z)) < 1e-14);
    }
}

#[test]
fn transformed_step_matches_original_space_step() {
    let (param, provider) = psld_provider();
    let times = quad_schedule(12, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::LambdaOnes(0.2), &times, Mask::None, tight(0)).unwrap();
    let z = State { x: vec![0.2], m: vec![0.4] };
    let eps = provider.eval(&z, times[5]).unwrap().eps;
    let zhat = apply_to_state(table.a[5], &z);
    let via_hat = apply_to_state(table.a_inv[6], &table.transformed_step(5, &zhat, &eps));
    assert!(via_hat.max_abs_diff(&conjugate_euler_step(&table, 5, &z, &eps)) < 1e-12);
}

#[test]
fn ab_order_zero_is_euler() {
    let (param, provider) = psld_provider();
    let times = quad_schedule(8, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, tight(1)).unwrap();
    let z = State { x: vec![0.7], m: vec![0.1] };
    let eps = provider.eval(&z, times[2]).unwrap().eps;
    let ab = conjugate_ab_step(&table, 2, &z, &[eps.clone()], 0).unwrap();
    assert_eq!(ab, conjugate_euler_step(&table, 2, &z, &eps));
    assert!(conjugate_ab_step(&table, 2, &z, &[eps], 1).is_err());
}

#[test]
fn lagrange_basis_is_cardinal() {
    let times = quad_schedule(6, 1.0, 1e-3);
    for r in 0..=2 {
        for k in 0..=r {
            for l in 0..=r {
                let v = lagrange_basis(&times, 4, r, k, times[4 - l]);
                assert!((v - if k == l { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}

/// `∫_{t}^{t1} Φ'(s) (a + b s) ds` by composite Simpson in `s`, with `Φ' = −A Q`.
fn simpson_residual_integral(param: &ScoreParameterization, t: f64, t1: f64, a: &State, b: &State) -> State {
    let spec = param.spec;
    let n = 4000;
    let h = (t1 - t) / n as f64;
    let mut acc = State::zeros(a.dim());
    for i in 0..=n {
        let s = t + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let a_s = phaseflow::linalg2::mat_exp(spec.drift_matrix(0.0), -s);
        let dphi = -(a_s * (spec.ggt(0.0) * param.c_out(s).unwrap()).scale(0.5));
        acc = acc.axpy(w * h / 3.0, &apply_to_state(dphi, &a.axpy(s, b)));
    }
    acc
}

#[test]
fn ab_order_one_is_exact_for_linear_residuals() {
    let (param, _) = psld_provider();
    let times = quad_schedule(10, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::Zero, &times, Mask::None, tight(1)).unwrap();
    let a = State { x: vec![0.3], m: vec![-0.6] };
    let b = State { x: vec![1.1], m: vec![0.4] };
    let eps_at = |s: f64| a.axpy(s, &b);
    let z = State { x: vec![0.5], m: vec![0.2] };
    for j in 1..table.n_steps() {
        let (t, t1) = (times[j], times[j + 1]);
        let history = [eps_at(t), eps_at(times[j - 1])];
        let ours = conjugate_ab_step(&table, j, &z, &history, 1).unwrap();
        let integral = simpson_residual_integral(&param, t, t1, &a, &b);
        let oracle = apply_to_state(table.a_inv[j + 1], &apply_to_state(table.a[j], &z).axpy(1.0, &integral));
        assert!(ours.max_abs_diff(&oracle) < 1e-8, "step {j}: {:e}", ours.max_abs_diff(&oracle));
    }
}

#[test]
fn stability_predicate_examples() {
    use num_complex::Complex64;
    assert!(stability_predicate(Complex64::new(0.0, 0.0), 0.7));
    assert!(!stability_predicate(Complex64::new(-30.0, 0.0), 0.1));
    assert!(stability_predicate(Complex64::new(-30.0 + 20.0, 0.0), 0.1));
    let r = stability_from_eigenvalues(&[Complex64::new(-30.0, 0.0)], 0.1);
    assert!((r.margins[0] - 2.0).abs() < 1e-15);
}

#[test]
fn masked_tables_are_psld_only() {
    let spec = ProcessSpec::vp_constant(8.0);
    let param = ScoreParameterization::default_for(spec);
    let times = quad_schedule(5, 1.0, 1e-3);
    for mask in [Mask::Deterministic, Mask::Stochastic] {
        assert!(build_table(&param, BTChoice::LambdaOnes(0.1), &times, mask, TableOptions::default()).is_err());
    }
}

#[test]
fn masked_tables_leave_momentum_untouched() {
    let (param, _) = psld_provider();
    let times = quad_schedule(10, 1.0, 1e-3);
    for mask in [Mask::Deterministic, Mask::Stochastic] {
        let table = build_table(&param, BTChoice::LambdaOnes(0.0), &times, mask, tight(0)).unwrap();
        for j in 0..=table.n_steps() {
            assert!((table.a[j].c).abs() < 1e-14 && (table.a[j].dd - 1.0).abs() < 1e-12);
            assert!(table.phi[j].c.abs() < 1e-14 && table.phi[j].dd.abs() < 1e-14);
        }
    }
}

#[test]
fn csv_round_trip_preserves_steps() {
    let (param, provider) = psld_provider();
    let times = quad_schedule(10, 1.0, 1e-3);
    let table = build_table(&param, BTChoice::LambdaOnes(0.4), &times, Mask::None, TableOptions::default()).unwrap();
    let back = CoefficientTable::from_csv(&table.to_csv(), table.bt, param.spec.kind, table.mask).unwrap();
    assert_eq!(back.times, table.times);
    assert_eq!(back.a, table.a);
    assert_eq!(back.phi, table.phi);
    let z = State { x: vec![0.1], m: vec![0.2] };
    let eps = provider.eval(&z, times[4]).unwrap().eps;
    assert!(conjugate_euler_step(&back, 4, &z, &eps).max_abs_diff(&conjugate_euler_step(&table, 4, &z, &eps)) < 1e-14);
}

#[test]
fn rejects_non_decreasing_schedule() {
    let (param, _) = psld_provider();
    assert!(build_table(&param, BTChoice::Zero, &[0.5, 0.6, 0.1], Mask::None, TableOptions::default()).is_err());
}
