//! The reaction-derived right-hand side against the differential equations
//! written out by hand, term by term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trisim::cases::{builtin_model, CaseStudyId};
use trisim::ModelSpec;

fn close(got: f64, want: f64, scale: f64) -> bool {
    (got - want).abs() <= 1e-12 * want.abs().max(scale)
}

/// Log-uniform positive amount, occasionally exactly zero.
fn amount(rng: &mut ChaCha8Rng, max_exp: f64) -> f64 {
    if rng.random_bool(0.05) {
        0.0
    } else {
        10f64.powf(rng.random_range(-1.0..max_exp))
    }
}

fn check(id: CaseStudyId, written: impl Fn(&ModelSpec, &[f64]) -> Vec<f64>) {
    let m = builtin_model::<&str>(id, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let state: Vec<f64> = (0..m.species().len()).map(|_| amount(&mut rng, 6.0)).collect();
        let got = m.ode_rhs(&state).unwrap();
        let want = written(&m, &state);
        // Terms can cancel, so compare against the size of the largest term.
        let scale = want.iter().chain(&state).fold(1.0f64, |a, v| a.max(v.abs())) * 1e-3;
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(close(*g, *w, scale), "{id} species {i} at {state:?}: {g} vs {w}");
        }
    }
}

fn p(m: &ModelSpec, name: &str) -> f64 {
    m.param(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

#[test]
fn growth_demo() {
    check(CaseStudyId::GrowthDemo, |m, x| {
        let t = x[0];
        let (a, b, alpha, beta) = (p(m, "a"), p(m, "b"), p(m, "alpha"), p(m, "beta"));
        vec![a * t.powf(alpha) * t - b * t.powf(beta) * t]
    });
}

#[test]
fn case1_all_scenarios() {
    for scenario in 1..=4 {
        check(CaseStudyId::Case1 { scenario }, |m, x| {
            let (t, e) = (x[0], x[1]);
            let f = p(m, "a") * (1.0 - p(m, "b") * t);
            let d_t = p(m, "n") * t * e;
            let p_e = p(m, "p") * t * e / (p(m, "g") + t);
            let d_e = p(m, "m") * t * e;
            let a_e = p(m, "d") * e;
            let phi = p(m, "s");
            vec![t * f - d_t, p_e - d_e - a_e + phi]
        });
    }
}

#[test]
fn case2() {
    check(CaseStudyId::Case2, |m, x| {
        let (t, e, il) = (x[0], x[1], x[2]);
        let de = p(m, "c") * t - p(m, "mu2") * e + p(m, "p1") * e * il / (p(m, "g1") + il) + p(m, "s1");
        let dt = p(m, "a") * t * (1.0 - p(m, "b") * t) - p(m, "aa") * e * t / (p(m, "g2") + t);
        let di = p(m, "p2") * e * t / (p(m, "g3") + t) - p(m, "mu3") * il + p(m, "s2");
        vec![dt, de, di]
    });
}

#[test]
fn case3() {
    check(CaseStudyId::Case3, |m, x| {
        let (t, e, i, s) = (x[0], x[1], x[2], x[3]);
        let de = p(m, "c") * t / (1.0 + p(m, "gamma") * s) - p(m, "mu1") * e
            + (p(m, "p1") * e * i / (p(m, "g1") + i)) * (p(m, "p1") - p(m, "q1") * s / (p(m, "q2") + s));
        let dt = p(m, "a") * t * (1.0 - t / p(m, "K")) - p(m, "aa") * e * t / (p(m, "g2") + t)
            + p(m, "p2") * s * t / (p(m, "g3") + s);
        let di = p(m, "p3") * e * t / ((p(m, "g4") + t) * (1.0 + p(m, "alpha") * s)) - p(m, "mu2") * i;
        let theta = p(m, "theta");
        let ds = p(m, "p4") * t * t / (theta * theta + t * t) - p(m, "mu3") * s;
        vec![dt, de, di, ds]
    });
}

#[test]
fn case1_hand_evaluation() {
    let m = builtin_model::<&str>(CaseStudyId::Case1 { scenario: 1 }, &[]).unwrap();
    let d = m.ode_rhs(&[10.0, 5.0]).unwrap();
    assert!((d[0] - -33.9672).abs() < 1e-4, "{d:?}");
    assert!((d[1] - 1.08164).abs() < 1e-4, "{d:?}");
}

#[test]
fn case2_without_tumour() {
    let m = builtin_model::<&str>(CaseStudyId::Case2, &[]).unwrap();
    let d = m.ode_rhs(&[0.0, 40.0, 7.0]).unwrap();
    assert_eq!(d[0], 0.0);
    assert_eq!(d[2], -p(&m, "mu3") * 7.0);
}
