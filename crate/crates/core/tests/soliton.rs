mod common;

use std::f64::consts::PI;

use common::rng;
use nonhol::soliton::{Engine, Field, FrameFlowState, Grid1D, SolitonError};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random trigonometric polynomial with modes `1..=modes` and amplitudes
/// falling like `1/m`.
fn band_limited(r: &mut ChaCha8Rng, grid: Grid1D, p: usize, modes: usize, amp: f64) -> Field {
    let k0 = 2.0 * PI / grid.length;
    let coeffs: Vec<Vec<(f64, f64)>> = (0..p)
        .map(|_| {
            (1..=modes)
                .map(|m| {
                    let s = amp / m as f64;
                    (r.random_range(-s..s), r.random_range(-s..s))
                })
                .collect()
        })
        .collect();
    Field::from_fn(grid, p, |c, l| {
        coeffs[c]
            .iter()
            .enumerate()
            .map(|(m, (a, b))| {
                let k = k0 * (m + 1) as f64;
                a * (k * l).cos() + b * (k * l).sin()
            })
            .sum()
    })
}

fn engine(n: usize, len: f64, p: usize) -> Engine {
    Engine::new(Grid1D::new(n, len).unwrap(), p).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn grid_validation() {
    assert!(Grid1D::new(8, 1.0).is_err());
    assert!(Grid1D::new(48, 1.0).is_err());
    assert!(Grid1D::new(16, 0.0).is_err());
    assert!(Grid1D::new(16, f64::NAN).is_err());
    assert!(Grid1D::new(16, 1.0).is_ok());
}

#[test]
fn spectral_derivative_examples() {
    let len = 5.0;
    let e = engine(64, len, 1);
    let k = 2.0 * PI / len;
    let g = e.grid();
    let f = Field::new(g, vec![g.sample(|l| (k * l).sin())]).unwrap();
    let d = e.ddx(&f);
    assert!(max_diff(&d.comps[0], &g.sample(|l| k * (k * l).cos())) < 1e-10);
    let dd = e.ddx(&d);
    assert!(max_diff(&dd.comps[0], &g.sample(|l| -k * k * (k * l).sin())) < 1e-9);
    let c = Field::new(g, vec![vec![3.5; 64]]).unwrap();
    assert!(e.ddx(&c).max_abs() < 1e-13);
}

#[test]
fn antiderivative_examples() {
    let len = 7.0;
    let e = engine(64, len, 1);
    let k = 2.0 * PI / len;
    let g = e.grid();
    let f = Field::new(g, vec![g.sample(|l| (k * l).cos())]).unwrap();
    let (a, m) = e.dinv(&f);
    assert!(max_diff(&a.comps[0], &g.sample(|l| (k * l).sin() / k)) < 1e-12);
    assert!(m < 1e-15);

    let (a, m) = e.dinv(&Field::new(g, vec![vec![2.5; 64]]).unwrap());
    assert!(a.max_abs() < 1e-13);
    assert!((m - 2.5).abs() < 1e-13);

    let mut r = rng(1);
    let f = band_limited(&mut r, g, 1, 10, 1.0).add(&Field::new(g, vec![vec![0.7; 64]]).unwrap());
    let (a, m) = e.dinv(&f);
    assert!((m - 0.7).abs() < 1e-12);
    let back = e.ddx(&a);
    let want: Vec<f64> = f.comps[0].iter().map(|x| x - m).collect();
    assert!(max_diff(&back.comps[0], &want) < 1e-10);
    let mean: f64 = a.comps[0].iter().sum::<f64>() / 64.0;
    assert!(mean.abs() < 1e-14);
}

#[test]
fn operators_trivial_cases() {
    let e = engine(64, 2.0 * PI, 2);
    let g = e.grid();
    let mut r = rng(2);
    let w = band_limited(&mut r, g, 2, 5, 1.0);
    let zero = Field::zeros(g, 2);
    assert!(e.op_j(&zero, &w).unwrap().sub(&e.ddx(&w)).max_abs() < 1e-15);
    assert!(e.op_h(&zero, &w).unwrap().sub(&e.ddx(&w)).max_abs() < 1e-15);
    assert_eq!(e.op_j(&w, &zero).unwrap().max_abs(), 0.0);
    let e2 = e.ddx(&e.ddx(&w));
    assert!(e.recursion(&zero, &w).unwrap().sub(&e2).max_abs() < 1e-12);

    let e1 = engine(64, 2.0 * PI, 1);
    let v = band_limited(&mut r, g, 1, 5, 1.0);
    let w = band_limited(&mut r, g, 1, 5, 1.0);
    assert_eq!(e1.op_h(&v, &w).unwrap(), e1.ddx(&w));
}

#[test]
fn operators_reject_mismatched_fields() {
    let e = engine(32, 1.0, 2);
    let other = Field::zeros(Grid1D::new(32, 2.0).unwrap(), 2);
    let ok = Field::zeros(e.grid(), 2);
    assert!(matches!(e.op_j(&ok, &other), Err(SolitonError::Mismatch { .. })));
    assert!(matches!(e.op_h(&Field::zeros(e.grid(), 1), &ok), Err(SolitonError::Mismatch { .. })));
    assert!(matches!(e.flow_rhs(3, 0.0, &ok), Err(SolitonError::UnsupportedLevel(3))));
    assert!(matches!(e.flow_rhs(-1, 0.0, &ok), Err(SolitonError::UnsupportedLevel(-1))));
}

fn skew_residuals(seed: u64, p: usize) -> (f64, f64) {
    let e = engine(128, 10.0, p);
    let mut r = rng(seed);
    let g = e.grid();
    let v = band_limited(&mut r, g, p, 8, 1.0);
    let a = band_limited(&mut r, g, p, 8, 1.0);
    let b = band_limited(&mut r, g, p, 8, 1.0);
    let ja = e.op_j(&v, &a).unwrap();
    let jb = e.op_j(&v, &b).unwrap();
    let ha = e.op_h(&v, &a).unwrap();
    let hb = e.op_h(&v, &b).unwrap();
    (
        (ja.pairing(&b) + a.pairing(&jb)).abs(),
        (ha.pairing(&b) + a.pairing(&hb)).abs(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn j_and_h_are_skew_adjoint(seed in any::<u64>(), p in 1usize..=3) {
        let (j, h) = skew_residuals(seed, p);
        prop_assert!(j < 1e-8, "J residual {j}");
        prop_assert!(h < 1e-8, "H residual {h}");
    }

    #[test]
    fn composition_equals_expansion_with_means(seed in any::<u64>(), p in 1usize..=3) {
        let e = engine(128, 10.0, p);
        let mut r = rng(seed);
        let g = e.grid();
        let v = band_limited(&mut r, g, p, 6, 1.0);
        let w = band_limited(&mut r, g, p, 6, 1.0);
        let comp = e.recursion(&v, &w).unwrap();
        let ex = e.recursion_expanded(&v, &w).unwrap();
        let res = comp.sub(&ex.printed.add(&ex.mean_terms)).max_abs();
        prop_assert!(res < 1e-7, "residual {res}");
    }

    #[test]
    fn mkdv_rhs_scales_with_lambda_to_the_minus_four(seed in any::<u64>(), p in 1usize..=3) {
        let len = 8.0;
        let lambda = 2.0;
        let e = engine(64, len, p);
        let es = engine(64, lambda * len, p);
        let mut r = rng(seed);
        let v = band_limited(&mut r, e.grid(), p, 6, 1.0);
        let vs = Field { grid: es.grid(), comps: v.scale(1.0 / lambda).comps };
        let rhs = e.flow_rhs(1, 0.0, &v).unwrap();
        let rhs_s = es.flow_rhs(1, 0.0, &vs).unwrap();
        let want = rhs.scale(lambda.powi(-4));
        let res = max_diff(&rhs_s.comps.concat(), &want.comps.concat());
        prop_assert!(res < 1e-6, "residual {res}");
    }
}

#[test]
fn hierarchy_first_flow_matches_printed_mkdv() {
    for p in 1..=3 {
        let e = engine(256, 20.0, p);
        let mut r = rng(10 + p as u64);
        for _ in 0..5 {
            let v = band_limited(&mut r, e.grid(), p, 12, 1.5);
            let r1 = e.hierarchy_term(1, &v).unwrap();
            let sp = e.spectral();
            let v1 = sp.ddx(&v);
            let v3 = sp.ddx_n(&v, 3);
            let printed = v3.add(&v1.times(&v.dot(&v)).scale(1.5));
            assert!(r1.sub(&printed).max_abs() / v3.max_abs() < 1e-6);
            // k = 1 flow with R = 0 is the same field
            assert_eq!(e.flow_rhs(1, 0.0, &v).unwrap(), r1);
        }
    }
}

#[test]
fn zero_mean_composition_differs_from_local_gauge_by_means() {
    let p = 2;
    let e = engine(128, 10.0, p);
    let mut r = rng(3);
    let v = band_limited(&mut r, e.grid(), p, 6, 1.0).add(&Field::from_fn(e.grid(), p, |c, _| 0.3 + c as f64));
    let vl = e.ddx(&v);
    let comp = e.recursion(&v, &vl).unwrap();
    let local = e.hierarchy_term(1, &v).unwrap();
    let n = e.grid().n_pts as f64;
    let mu = v.dot(&v).iter().sum::<f64>() / n;
    let m01 = (0..e.grid().n_pts)
        .map(|t| v.comps[0][t] * vl.comps[1][t] - vl.comps[0][t] * v.comps[1][t])
        .sum::<f64>()
        / n;
    // composition = local − ½μ v_l − v⌋⟨v∧v_l⟩
    let mut want = local.axpy(-0.5 * mu, &vl);
    for t in 0..e.grid().n_pts {
        want.comps[1][t] -= v.comps[0][t] * m01;
        want.comps[0][t] += v.comps[1][t] * m01;
    }
    assert!(comp.sub(&want).max_abs() < 1e-9);
    assert!(comp.sub(&local).max_abs() > 1e-2);
}

#[test]
fn second_flow_differs_from_printed_expansion_by_identified_terms() {
    let p = 2;
    let e = engine(256, 20.0, p);
    let mut r = rng(4);
    let v = band_limited(&mut r, e.grid(), p, 8, 1.0);
    let sp = e.spectral();
    let d = |k| sp.ddx_n(&v, k);
    let (v1, v2, v5) = (d(1), d(2), d(5));
    let sq = v.dot(&v);
    let l1 = v1.dot(&v1);
    let sq_f = Field { grid: v.grid, comps: vec![sq.clone()] };
    let sq2 = sp.ddx_n(&sq_f, 2).comps[0].clone();
    let a = sp.ddx(&v2.times(&sq));
    let inner: Vec<f64> = (0..sq.len()).map(|t| sq2[t] + l1[t] + 0.75 * sq[t] * sq[t]).collect();
    let printed = v5.add(&a.scale(2.5)).add(&v1.times(&inner).scale(2.5)).sub(&v.times(&l1).scale(0.5));
    let r2 = e.hierarchy_term(2, &v).unwrap();
    let diff = r2.sub(&printed);
    let identified = v.times(&l1).scale(0.5).sub(&v1.times(&l1).scale(5.0));
    assert!(diff.sub(&identified).max_abs() / v5.max_abs() < 1e-8);
    assert!(identified.max_abs() > 1e-2);
}

#[test]
fn flows_of_zero_vanish() {
    let e = engine(64, 6.0, 3);
    let z = Field::zeros(e.grid(), 3);
    for k in 0..=2 {
        assert_eq!(e.flow_rhs(k, 1.7, &z).unwrap().max_abs(), 0.0);
    }
    let mut st = e.start(z.clone(), 1, 0.5, 1).unwrap();
    e.step(&mut st, 1e-3).unwrap();
    assert_eq!(st.v, z);
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn hamiltonian_examples() {
    let len = 3.0;
    let e = engine(32, len, 1);
    let c = 1.3;
    let v = Field::new(e.grid(), vec![vec![c; 32]]).unwrap();
    assert!((e.hamiltonian(0, &v).unwrap() - 0.5 * c * c * len).abs() < 1e-13);
    assert!((e.hamiltonian(1, &v).unwrap() - c.powi(4) * len / 8.0).abs() < 1e-13);
    assert!(matches!(e.hamiltonian(3, &v), Err(SolitonError::UnsupportedLevel(3))));

    let e = engine(64, 2.0 * PI, 1);
    let v = Field::new(e.grid(), vec![e.grid().sample(f64::sin)]).unwrap();
    let rec = e.hamiltonians(&v).unwrap();
    let n = 20_000;
    let h0 = simpson(|l| 0.5 * l.sin().powi(2), 0.0, 2.0 * PI, n);
    let h1 = simpson(|l| -0.5 * l.cos().powi(2) + l.sin().powi(4) / 8.0, 0.0, 2.0 * PI, n);
    let core = |l: f64| 0.5 * l.sin().powi(2) - 0.75 * l.sin().powi(2) * l.cos().powi(2) + l.sin().powi(6) / 16.0;
    let h2p = simpson(core, 0.0, 2.0 * PI, n);
    let h2s = simpson(|l| core(l) - 0.5 * (l.sin() * l.cos()).powi(2), 0.0, 2.0 * PI, n);
    assert!((rec.h0 - h0).abs() < 1e-8);
    assert!((rec.h1 - h1).abs() < 1e-8);
    assert!((rec.h2_periodic - h2p).abs() < 1e-8);
    assert!((rec.h2_printed - h2p).abs() < 1e-8);
    assert!((rec.h2_squared - h2s).abs() < 1e-8);
}

fn sech_field(grid: Grid1D, b: f64, l0: f64) -> Field {
    let len = grid.length;
    // sum over the nearest periodic images
    Field::from_fn(grid, 1, |_, l| {
        (-2..=2)
            .map(|n| 2.0 * b / (b * (l - l0 - n as f64 * len)).cosh())
            .sum()
    })
}

#[test]
fn sech_ansatz_solves_the_first_flow() {
    // v = 2b·sech(b(l + b²τ − l0)): v_τ = b²v_l must equal v_3l + 1.5v²v_l
    let e = engine(256, 40.0, 1);
    let b = 1.0;
    let v = sech_field(e.grid(), b, 20.0);
    let rhs = e.flow_rhs(1, 0.0, &v).unwrap();
    let want = e.ddx(&v).scale(b * b);
    assert!(rhs.sub(&want).max_abs() < 1e-8, "{}", rhs.sub(&want).max_abs());
}

#[test]
fn level_zero_is_exact_translation() {
    let e = engine(64, 2.0 * PI, 2);
    let mut r = rng(6);
    let v0 = band_limited(&mut r, e.grid(), 2, 4, 1.0);
    let mut st = e.start(v0.clone(), 0, 0.0, 0).unwrap();
    e.integrate(&mut st, 1.0, 1e-3).unwrap();
    let exact = e.spectral().translate(&v0, -1.0);
    assert!(st.v.sub(&exact).max_abs() < 1e-8);
    assert!((st.tau - 1.0).abs() < 1e-12);
}

#[test]
fn sech_profile_survives_a_full_period() {
    let b = 1.0;
    let len = 24.0;
    let e = engine(128, len, 1);
    let v0 = sech_field(e.grid(), b, 12.0);
    let dt = e.stable_dt(1, 0.0, 0.05).unwrap();
    let mut st = e.start(v0.clone(), 1, 0.0, 0).unwrap();
    let period = len / (b * b);
    e.integrate(&mut st, period, dt).unwrap();
    assert!(st.v.sub(&v0).max_abs() < 1e-4, "{}", st.v.sub(&v0).max_abs());
}

#[test]
fn conservation_under_the_first_flow() {
    let e = engine(256, 40.0, 1);
    let v0 = sech_field(e.grid(), 1.0, 20.0);
    let dt = e.stable_dt(1, 0.0, 0.05).unwrap();
    let mut st = e.start(v0, 1, 0.0, 500).unwrap();
    e.integrate(&mut st, 1.0, dt).unwrap();
    let first = st.history[0];
    let last = *st.history.last().unwrap();
    assert!(st.history.windows(2).all(|w| w[1].tau > w[0].tau));
    assert!(((last.h0 - first.h0) / first.h0).abs() < 1e-6);
    assert!(((last.h1 - first.h1) / first.h1).abs() < 1e-6);
    assert!(((last.h2_squared - first.h2_squared) / first.h2_squared).abs() < 1e-6);
}

#[test]
fn divergence_keeps_the_last_finite_state() {
    let e = engine(64, 2.0 * PI, 1);
    let mut r = rng(7);
    let v0 = band_limited(&mut r, e.grid(), 1, 20, 1.0);
    let mut st = e.start(v0, 1, 0.0, 0).unwrap();
    let err = e.integrate(&mut st, 10.0, 0.05).unwrap_err();
    match err {
        SolitonError::Diverged { last, .. } => assert!(last.v.is_finite()),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(e.step(&mut st, 0.0), Err(SolitonError::InvalidDt(_))));
}

#[test]
fn stable_dt_is_tighter_for_the_second_flow() {
    let e = engine(128, 24.0, 1);
    let h = e.grid().spacing();
    let d1 = e.stable_dt(1, 0.0, 0.05).unwrap();
    let d2 = e.stable_dt(2, 0.0, 0.05).unwrap();
    assert!(d1 <= 0.05 * h.powi(3));
    assert!(d2 < 0.05 * h.powi(5));
    assert!(d2 <= 0.9 * 2.0 * 2f64.sqrt() / e.grid().k_max().powi(5));
}

#[test]
fn second_flow_runs_stably() {
    let e = engine(64, 16.0, 2);
    let mut r = rng(8);
    let v0 = band_limited(&mut r, e.grid(), 2, 4, 0.5);
    let dt = e.stable_dt(2, 0.3, 0.05).unwrap();
    let mut st = e.start(v0, 2, 0.3, 200).unwrap();
    e.integrate(&mut st, 200.0 * dt, dt).unwrap();
    let first = st.history[0];
    let last = *st.history.last().unwrap();
    assert!(((last.h0 - first.h0) / first.h0).abs() < 1e-8);
}

fn commutator(e: &Engine, v: &Field, dt: f64) -> f64 {
    let run = |v: &Field, a: i32, b: i32| {
        let mut st = e.start(v.clone(), a, 0.0, 0).unwrap();
        e.step(&mut st, dt).unwrap();
        st.level = b;
        e.step(&mut st, dt).unwrap();
        st.v
    };
    run(v, 0, 1).sub(&run(v, 1, 0)).max_abs()
}

#[test]
fn level_zero_and_one_flows_commute() {
    let e = engine(32, 2.0 * PI, 2);
    let mut r = rng(9);
    let v = band_limited(&mut r, e.grid(), 2, 3, 1.0);
    let dt = 0.5 * e.stable_dt(1, 0.0, 1.0).unwrap();
    let r1 = commutator(&e, &v, dt);
    let r2 = commutator(&e, &v, dt / 2.0);
    assert!(r1 / r2 >= 8.0, "{r1} {r2}");
}

#[test]
fn variational_ladder() {
    let e = engine(128, 20.0, 1);
    let v = sech_field(e.grid(), 0.8, 10.0).add(&Field::from_fn(e.grid(), 1, |_, l| 0.2 * (2.0 * PI * l / 20.0).sin()));
    let r0 = e.variational_check(0, &v).unwrap();
    assert!(r0.varpi_residual < 1e-6);
    assert!(r0.ladder_residual < 1e-6);
    let r1 = e.variational_check(1, &v).unwrap();
    assert!(r1.varpi_residual < 1e-5, "{}", r1.varpi_residual);
    assert!(r1.ladder_residual < 1e-4, "{}", r1.ladder_residual);
    assert_eq!(r1.gauge_term, 0.0);

    let e2 = engine(64, 2.0 * PI, 2);
    let mut r = rng(12);
    let v = band_limited(&mut r, e2.grid(), 2, 3, 0.8);
    let r1 = e2.variational_check(1, &v).unwrap();
    assert!(r1.ladder_residual_gauge_fixed < 1e-4);
    assert!(r1.gauge_term > 1e-3);

    let z = e2.variational_check(1, &Field::zeros(e2.grid(), 2)).unwrap();
    assert_eq!(z.varpi_residual, 0.0);
    assert_eq!(z.ladder_residual, 0.0);
}

#[test]
fn frame_of_zero_field_is_constant() {
    let e = engine(32, 4.0, 2);
    let z = Field::zeros(e.grid(), 2);
    let fr = FrameFlowState::constant(32, 0.6, &[0.8, 0.0]).unwrap();
    let rec = e.reconstruct_frame(&z, 0.6, &[0.8, 0.0]).unwrap();
    assert!(max_diff(&rec.e_par, &fr.e_par) < 1e-15);
    assert!(rec.closure_mismatch < 1e-15);
    let fr0 = FrameFlowState::from_angle(32, 2, 0.0);
    let step = e.sg_flow_step(&z, &fr0, 1.0, 0.1).unwrap();
    assert_eq!(step.v.max_abs(), 0.0);
    assert!(FrameFlowState::constant(32, 1.0, &[0.1, 0.0]).is_err());
}

#[test]
fn frame_reconstruction_conserves_the_unit_constraint() {
    let e = engine(128, 10.0, 3);
    let mut r = rng(13);
    let v = band_limited(&mut r, e.grid(), 3, 6, 2.0);
    let fr = e.reconstruct_frame(&v, 0.0, &[1.0, 0.0, 0.0]).unwrap();
    assert!(fr.constraint_residual < 1e-8 * 10.0);
    assert!(fr.max_constraint_violation() < 1e-12);
}

#[test]
fn scalar_reduction_satisfies_sine_gordon() {
    // v = θ_l, θ(0) = θ0 held fixed: θ_lτ + R sin θ = 0
    let len = 2.0 * PI;
    let e = engine(64, len, 1);
    let g = e.grid();
    let v0 = Field::new(g, vec![g.sample(|l| 1.0 + 0.5 * l.cos())]).unwrap();
    let theta0 = 0.3;
    let r_const = 1.0;
    let dt = 0.01;
    let mut fr = FrameFlowState::from_angle(g.n_pts, 1, theta0);
    let mut states = vec![v0.clone()];
    let mut v = v0;
    let mut worst_drift: f64 = 0.0;
    for _ in 0..100 {
        let s = e.sg_flow_step(&v, &fr, r_const, dt).unwrap();
        worst_drift = worst_drift.max(s.constraint_residual);
        v = s.v;
        fr = s.frame;
        states.push(v.clone());
    }
    assert!(worst_drift < 1e-6);
    let sp = e.spectral();
    let mut worst: f64 = 0.0;
    for i in 1..states.len() - 1 {
        let vi = &states[i];
        let (a, mean) = sp.antideriv(&vi.comps[0]);
        let pts = g.points();
        for t in 0..g.n_pts {
            let theta = theta0 + a[t] - a[0] + mean * pts[t];
            let vt = (states[i + 1].comps[0][t] - states[i - 1].comps[0][t]) / (2.0 * dt);
            worst = worst.max((vt + r_const * theta.sin()).abs());
        }
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn frame_constraint_precondition() {
    let e = engine(16, 1.0, 1);
    let bad = FrameFlowState {
        e_par: vec![1.0; 16],
        e_perp: vec![vec![0.5; 16]],
        constraint_residual: 0.0,
        closure_mismatch: 0.0,
    };
    assert!(matches!(
        e.sg_flow_step(&Field::zeros(e.grid(), 1), &bad, 1.0, 0.1),
        Err(SolitonError::Constraint(_))
    ));
}
