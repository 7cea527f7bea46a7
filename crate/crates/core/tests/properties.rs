use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use kgfl::control::{
    closed_loop_simulate, control_from_v, pole_place, vdp_model_oracle, ClosedLoopOptions, ETA_MIN,
};
use kgfl::dictionary::{build_stacked_data, hermite, DictSpec, Dictionary, Scheme};
use kgfl::geomverify::{lie_bracket, numeric_jacobian, relative_degree};
use kgfl::solvers::{als_fit, brunovsky, kgfl_cost, single_step_io, FitDataset, PinvOptions};
use kgfl::systems::{
    example_io_system, simulate, sixdim, vanderpol, ControlAffineSystem, Field, Trajectory,
};

fn systems() -> Vec<ControlAffineSystem> {
    vec![
        vanderpol(),
        sixdim([1.1, -0.7, 0.9, 1.3, -1.2, 0.4, 0.8, -0.5, 0.3, 1.5]).unwrap(),
        example_io_system(),
    ]
}

fn vec_in(n: usize, w: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-w..w, n).prop_map(DVector::from_vec)
}

fn random_dataset(seed: u64, n: usize, r: usize, m: usize, k: usize) -> FitDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    let d = (0..n).map(|_| mat(r, m)).collect();
    let dd = (0..n).map(|_| mat(r, m)).collect();
    let th = mat(k, n);
    let gu = mat(k, n);
    FitDataset::new(r, d, dd, th, gu, vec![0.0; n], 0..n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamics_are_affine_in_u(x in vec_in(6, 2.0), u in -10.0f64..10.0) {
        for sys in systems() {
            let x = x.rows(0, sys.n).into_owned();
            let f0 = sys.eval_dynamics(&x, 0.0).unwrap();
            let f1 = sys.eval_dynamics(&x, 1.0).unwrap();
            let fu = sys.eval_dynamics(&x, u).unwrap();
            let lhs = &fu - &f0;
            let rhs = (&f1 - &f0) * u;
            prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + u.abs() * f1.amax()));
        }
    }

    #[test]
    fn hermite_recurrence(x in -3.0f64..3.0, n in 1u32..10) {
        let lhs = hermite(n + 1, x) - x * hermite(n, x) + n as f64 * hermite(n - 1, x);
        let scale = hermite(n + 1, x).abs().max(x.abs() * hermite(n, x).abs()).max(1.0);
        prop_assert!(lhs.abs() <= 1e-9 * scale);
    }

    #[test]
    fn dictionary_order_is_deterministic(dim in 1usize..4, p in 0u32..4, cap in proptest::option::of(0u32..5)) {
        let mut spec = DictSpec::tensor(dim, p);
        spec.max_total_degree = cap;
        let a = Dictionary::new(spec.clone()).unwrap();
        let b = Dictionary::new(spec).unwrap();
        prop_assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn bracket_antisymmetry(seed in 0u64..1000, x in vec_in(3, 1.5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = move |x: &DVector<f64>| DVector::from_fn(3, |i, _| a[3 * i] * x[(i + 1) % 3] * x[i] + a[3 * i + 1] * x[(i + 2) % 3].sin() + a[3 * i + 2]);
        let g = move |x: &DVector<f64>| DVector::from_fn(3, |i, _| b[3 * i] * x[i] * x[i] + b[3 * i + 1] * x[(i + 1) % 3] + b[3 * i + 2]);
        let h = kgfl::geomverify::nested_step(0);
        let fg = lie_bracket(&f, &g, &x, h).unwrap();
        let gf = lie_bracket(&g, &f, &x, h).unwrap();
        prop_assert!((&fg + &gf).amax() <= 1e-6, "{} vs {}", fg, gf);
    }

    #[test]
    fn relative_degree_ignores_positive_scaling(c in 0.1f64..10.0, x in vec_in(2, 0.9)) {
        let sys = vanderpol();
        let h = |y: &DVector<f64>| y[0] + 0.3 * y[0] * y[0];
        let hc = move |y: &DVector<f64>| c * (y[0] + 0.3 * y[0] * y[0]);
        let r = relative_degree(&sys, &h, &x, 3, 1e-6);
        let rc = relative_degree(&sys, &hc, &x, 3, 1e-6);
        prop_assert_eq!(r.ok(), rc.ok());
    }

    #[test]
    fn cost_is_homogeneous(seed in 0u64..500, c in -5.0f64..5.0) {
        let data = random_dataset(seed, 40, 2, 4, 3);
        let pair = brunovsky(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut v = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let (k, g, j) = (v(4), v(3), v(3));
        let base = kgfl_cost(&k, &g, &j, &data, &pair).unwrap();
        let scaled = kgfl_cost(&(&k * c), &(&g * c), &(&j * c), &data, &pair).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-10 * base.max(1.0) * c.abs().max(1.0).powi(2));
    }

    #[test]
    fn single_step_is_a_minimizer(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let (r, n) = (2, 50);
        let (z, zd, th, gu) = (mat(r, n), mat(r, n), mat(3, n), mat(4, n));
        let dir = mat(7, 1);
        let ss = single_step_io(&z, &zd, &th, &gu, r, PinvOptions::default()).unwrap();
        let pair = brunovsky(r).unwrap();
        let target = (pair.b.transpose() * (&zd - &pair.a * &z)).transpose();
        let obj = |g: &DVector<f64>, j: &DVector<f64>| (&target - th.transpose() * g - gu.transpose() * j).norm_squared();
        let best = obj(&ss.g, &ss.j);
        let d = dir.column(0).normalize() * 1e-3;
        let g2 = &ss.g + d.rows(0, 3);
        let j2 = &ss.j + d.rows(3, 4);
        prop_assert!(obj(&g2, &j2) >= best * (1.0 - 1e-12));
    }

    #[test]
    fn pole_placement_matches_spectrum(r in 1usize..=6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poles = Vec::new();
        while poles.len() < r {
            let re = -rng.random_range(0.5..3.0);
            if r - poles.len() >= 2 && rng.random_bool(0.5) {
                let im = rng.random_range(0.2..2.0);
                poles.push(Complex::new(re, im));
                poles.push(Complex::new(re, -im));
            } else {
                poles.push(Complex::new(re, 0.0));
            }
        }
        let gain = pole_place(r, &poles).unwrap();
        let pair = brunovsky(r).unwrap();
        let cl = &pair.a + &pair.b * DMatrix::from_row_slice(1, r, &gain.f);
        // characteristic polynomial of the companion matrix: s^r − Σ F_i s^i
        let coeffs = kgfl::control::monic_coefficients(&poles).unwrap();
        for i in 0..r {
            prop_assert!((-gain.f[i] - coeffs[i]).abs() <= 1e-10 * coeffs[i].abs().max(1.0));
        }
        let eig = cl.complex_eigenvalues();
        for p in &poles {
            let d = eig.iter().map(|e| (e - p).norm()).fold(f64::INFINITY, f64::min);
            // clustered roots are conditioned like ε^{1/multiplicity}
            let cluster = poles.iter().filter(|q| (*q - p).norm() < 0.05).count();
            let tol = if cluster > 1 { 1e-4 } else { 1e-8 };
            prop_assert!(d <= tol * p.norm().max(1.0), "pole {} missed by {}", p, d);
        }
    }

    #[test]
    fn control_inversion_round_trip(x in vec_in(2, 3.0), v in -20.0f64..20.0) {
        let t = vdp_model_oracle().unwrap().realize().unwrap();
        match control_from_v(&t, &x, v, ETA_MIN) {
            Ok(u) => {
                let back = t.zeta(&x).unwrap() + t.eta(&x).unwrap() * u;
                prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0) * (1.0 + u.abs()));
            }
            Err(_) => prop_assert!(t.eta(&x).unwrap().abs() < ETA_MIN),
        }
    }

    #[test]
    fn closed_loop_is_deterministic(x in vec_in(2, 0.8)) {
        let sys = vanderpol();
        let t = vdp_model_oracle().unwrap().realize().unwrap();
        let gain = pole_place(2, &[Complex::new(-1.0, 1.0), Complex::new(-1.0, -1.0)]).unwrap();
        let opts = ClosedLoopOptions { t_end: 2.0, ..Default::default() };
        let a = closed_loop_simulate(&sys, &t, &gain, &x, &opts).unwrap();
        let b = closed_loop_simulate(&sys, &t, &gain, &x, &opts).unwrap();
        prop_assert_eq!(a.traj, b.traj);
        prop_assert_eq!(a.status, b.status);
    }
}

#[test]
fn hermite_orthogonality_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    for m in 0..=4u32 {
        for n in (m + 1)..=4 {
            let prods: Vec<f64> = samples.iter().map(|x| hermite(m, *x) * hermite(n, *x)).collect();
            let k = prods.len() as f64;
            let mean = prods.iter().sum::<f64>() / k;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (k - 1.0);
            let se = (var / k).sqrt();
            assert!(mean.abs() <= 3.0 * se, "<H{m}, H{n}> = {mean} (se {se})");
        }
    }
}

fn sampled_path(tau: f64, n: usize) -> Trajectory {
    let states = DMatrix::from_fn(2, n + 1, |i, j| {
        let t = j as f64 * tau;
        if i == 0 { t.sin() } else { (0.7 * t).cos() }
    });
    Trajectory {
        tau,
        states,
        inputs: vec![0.0; n],
        exact_derivs: None,
        seed: None,
    }
}

#[test]
fn central_stack_error_is_second_order() {
    let dict = Dictionary::new(DictSpec::tensor(2, 2)).unwrap();
    let err = |tau: f64| {
        let n = (2.0 / tau).round() as usize;
        let tr = sampled_path(tau, n);
        let st = build_stacked_data(&dict, &tr, 2, Scheme::Central).unwrap();
        // row 1 is dφ/dt; compare against a fine central difference of the
        // exact path at the same time
        let k = st.d.len() / 2;
        let t = (st.retained.start + k) as f64 * tau;
        let at = |s: f64| dict.eval(&DVector::from_vec(vec![s.sin(), (0.7 * s).cos()])).unwrap();
        let h = 1e-5;
        let exact = (at(t + h) - at(t - h)) / (2.0 * h);
        (st.d[k].row(1).transpose() - exact).amax()
    };
    let (e1, e2) = (err(0.02), err(0.01));
    let ratio = e1 / e2;
    assert!((3.0..5.5).contains(&ratio), "halving ratio {ratio} ({e1} -> {e2})");
}

#[test]
fn exact_derivatives_agree_to_first_order() {
    let sys = vanderpol();
    let x0 = DVector::from_vec(vec![1.0, 0.5]);
    let err = |tau: f64| {
        let n = (1.0 / tau).round() as usize;
        let tr = simulate(&sys, &x0, |i, _| (i as f64 * tau).sin(), tau, n).unwrap();
        let d = tr.exact_derivs.unwrap();
        (0..n)
            .map(|t| ((tr.states.column(t + 1) - tr.states.column(t)) / tau - d.column(t)).amax())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.01), err(0.005));
    assert!(e2 <= 0.6 * e1 && e1 <= 10.0 * 0.01, "{e1} {e2}");
}

#[test]
fn jacobian_error_quarters_when_step_halves() {
    let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0].powi(3) * x[1], x[1].powi(4) - x[0] * x[1] * x[1]]);
    let x: DVector<f64> = DVector::from_vec(vec![0.7, -1.3]);
    let exact = DMatrix::from_row_slice(
        2,
        2,
        &[3.0 * x[0] * x[0] * x[1], x[0].powi(3), -x[1] * x[1], 4.0 * x[1].powi(3) - 2.0 * x[0] * x[1]],
    );
    let err = |h: f64| (numeric_jacobian(&f, &x, h).unwrap() - &exact).amax();
    let ratio = err(1e-2) / err(5e-3);
    assert!((3.5..4.5).contains(&ratio), "{ratio}");
}

#[test]
fn als_trace_is_monotone() {
    let data = random_dataset(3, 80, 2, 4, 3);
    let fit = als_fit(&data, 5, PinvOptions::default()).unwrap();
    assert!(fit.cost_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn model_loop_follows_the_linear_chain() {
    let sys = vanderpol();
    let t = vdp_model_oracle().unwrap().realize().unwrap();
    let gain = pole_place(2, &[Complex::new(-1.0, 1.0), Complex::new(-1.0, -1.0)]).unwrap();
    let x0 = DVector::from_vec(vec![0.5, 0.2]);
    let worst = |tau: f64| {
        let opts = ClosedLoopOptions { tau, t_end: 3.0, ..Default::default() };
        let run = closed_loop_simulate(&sys, &t, &gain, &x0, &opts).unwrap();
        assert!(run.status.is_ok());
        let pair = brunovsky(2).unwrap();
        let acl = &pair.a + &pair.b * DMatrix::from_row_slice(1, 2, &gain.f);
        // the first estimates straddle the open-loop warm-up
        let zs: Vec<&DVector<f64>> = run.z.iter().flatten().skip(4).collect();
        zs.windows(2)
            .map(|w| ((w[1] - w[0]) / tau - &acl * w[0]).amax())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (worst(0.01), worst(0.005));
    assert!(e2 <= 0.6 * e1, "{e1} {e2}");
}

#[test]
fn field_type_is_shareable() {
    let f: Field = Arc::new(|x: &DVector<f64>| x.clone());
    let g = f.clone();
    assert_eq!(g(&DVector::from_vec(vec![1.0])), DVector::from_vec(vec![1.0]));
}
