//! Direct and next-reaction sampling drawn from the same law, at sizes that
//! run in seconds.

use rayon::prelude::*;
use trisim::cases::{builtin_model, CaseStudyId};
use trisim::model::load_model;
use trisim::ssa::{simulate, SsaConfig, SsaMethod};
use trisim::stats::ks_two_sample;
use trisim::ModelSpec;

fn finals(m: &ModelSpec, method: SsaMethod, seeds: std::ops::Range<u64>, horizon: f64) -> Vec<Vec<f64>> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let mut cfg = SsaConfig::for_model(m, method, seed);
            cfg.horizon = horizon;
            simulate(m, &cfg).unwrap().trajectory.last_row().unwrap().to_vec()
        })
        .collect()
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

/// Immigration and death from an empty start is Poisson with mean
/// `lambda / mu * (1 - exp(-mu t))` at every time.
#[test]
fn immigration_death_is_poisson_under_both_methods() {
    let m = load_model("species X = 0\nparam lambda = 20\nparam mu = 0.5\nreaction in: -> X @ lambda\nreaction out: X -> @ mu*X\nhorizon 2\nsample 0.5\n").unwrap();
    let lambda_t = 20.0 / 0.5 * (1.0 - (-1.0f64).exp());
    let n = 4000;
    for method in [SsaMethod::Direct, SsaMethod::NextReaction] {
        let xs = column(&finals(&m, method, 1..n + 1, 2.0), 0);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard error of the mean is sqrt(lambda_t / n); of the sample
        // variance about lambda_t * sqrt(2 / n) for a Poisson this large.
        let se_mean = (lambda_t / n as f64).sqrt();
        let se_var = lambda_t * (2.0 / n as f64).sqrt();
        assert!(
            (mean - lambda_t).abs() < 4.0 * se_mean,
            "{method:?}: mean {mean} vs {lambda_t}"
        );
        assert!(
            (var - lambda_t).abs() < 4.0 * se_var,
            "{method:?}: variance {var} vs {lambda_t}"
        );
    }
}

#[test]
fn methods_agree_on_the_two_species_model() {
    let m = builtin_model::<&str>(CaseStudyId::Case1 { scenario: 1 }, &[]).unwrap();
    let direct = finals(&m, SsaMethod::Direct, 1..1001, 5.0);
    let nrm = finals(&m, SsaMethod::NextReaction, 10_001..11_001, 5.0);
    for (i, name) in m.species_names().iter().enumerate() {
        let ks = ks_two_sample(&column(&direct, i), &column(&nrm, i)).unwrap();
        assert!(ks.p_value >= 0.01, "{name}: D = {}, p = {}", ks.d, ks.p_value);
    }
}

#[test]
fn methods_agree_on_the_three_species_model_early_on() {
    let m = builtin_model::<&str>(CaseStudyId::Case2, &[]).unwrap();
    let direct = finals(&m, SsaMethod::Direct, 1..301, 10.0);
    let nrm = finals(&m, SsaMethod::NextReaction, 10_001..10_301, 10.0);
    for (i, name) in m.species_names().iter().enumerate() {
        let ks = ks_two_sample(&column(&direct, i), &column(&nrm, i)).unwrap();
        assert!(ks.p_value >= 0.01, "{name}: D = {}, p = {}", ks.d, ks.p_value);
    }
}
