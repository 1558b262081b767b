//! Large-sample behaviour checked by simulation. Each test is a few seconds
//! with the optimized test profile.

use matchdid::decomposition::plim_bias;
use matchdid::inference::{corrected_variance, naive_cr_variance};
use matchdid::matcher::{match_units, MatchSpec};
use matchdid::simulation::{run_inference, run_staggered, InferenceDgpConfig, StaggeredDgpConfig};
use matchdid::{Panel, PeriodSelector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const REPS: usize = 2000;

fn mc_se(sd: f64, reps: usize) -> f64 {
    sd / (reps as f64).sqrt()
}

#[test]
fn design_one_bias_shrinks_with_n() {
    let small = run_inference(
        &InferenceDgpConfig {
            n: 250,
            ..InferenceDgpConfig::constant_effect()
        },
        REPS,
        101,
    )
    .unwrap();
    let large = run_inference(&InferenceDgpConfig::constant_effect(), REPS, 102).unwrap();
    let (a, b) = (&small.estimators[0], &large.estimators[0]);
    assert!(
        b.bias.abs() <= a.bias.abs() / 2.0 + 2.0 * mc_se(b.mc_sd, REPS),
        "n=250 bias {} vs n=1000 bias {}",
        a.bias,
        b.bias
    );
    // the estimate also concentrates: sd roughly halves from n=250 to n=1000
    assert!(b.mc_sd < 0.6 * a.mc_sd);
}

#[test]
fn design_one_standard_error_ratios() {
    let s = run_inference(&InferenceDgpConfig::constant_effect(), REPS, 103).unwrap();
    let e = &s.estimators[0];
    let corrected = e.mean_corrected_se.unwrap();
    assert!(
        (0.9..=1.1).contains(&(corrected / e.mc_sd)),
        "{corrected} vs {}",
        e.mc_sd
    );
    assert!(e.mean_naive_se / e.mc_sd > 2.0, "{} vs {}", e.mean_naive_se, e.mc_sd);
    assert!(e.mean_naive_se > corrected);
}

/// Mean naive and corrected variances over `reps` draws.
fn mean_variances(config: &InferenceDgpConfig, reps: usize, seed: u64) -> (f64, f64) {
    let lambda = PeriodSelector::all(4);
    let spec = MatchSpec::new(config.cohort(), 1);
    let pairs: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep);
            let panel: Panel = config.draw(&mut rng).unwrap();
            let mr = match_units(&panel, &spec).unwrap();
            let naive = naive_cr_variance(&panel, &mr, &lambda).unwrap();
            let corrected = corrected_variance(&panel, &mr, &lambda, 2).unwrap().corrected;
            (naive, corrected)
        })
        .collect();
    let n = reps as f64;
    (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    )
}

#[test]
fn naive_and_corrected_agree_without_covariate_trends() {
    let null = InferenceDgpConfig {
        untreated_slope: 0.0,
        treated_slope: 0.0,
        ..InferenceDgpConfig::constant_effect()
    };
    let (naive, corrected) = mean_variances(&null, REPS, 104);
    assert!(
        (naive - corrected).abs() / corrected < 0.1,
        "naive {naive} vs corrected {corrected}"
    );
}

#[test]
fn design_one_naive_variance_exceeds_corrected() {
    let (naive, corrected) = mean_variances(&InferenceDgpConfig::constant_effect(), 500, 105);
    assert!(naive > corrected, "naive {naive} vs corrected {corrected}");
}

#[test]
fn pooled_mean_approaches_plim() {
    let lambda = PeriodSelector::all(4);
    let gap = |n: usize, seed: u64| {
        let dgp = StaggeredDgpConfig {
            n,
            ..Default::default()
        };
        let plim = plim_bias(&dgp, &lambda).unwrap().total_plim;
        let s = run_staggered(&dgp, 1000, seed).unwrap();
        let e = &s.estimators[0];
        (e.mean_estimate - plim, mc_se(e.mc_sd, 1000))
    };
    let (g1000, se1000) = gap(1000, 106);
    let (g4000, se4000) = gap(4000, 107);
    assert!(
        g4000.abs() <= g1000.abs() + 2.0 * (se1000 + se4000),
        "gap {g1000} at n=1000, {g4000} at n=4000"
    );
    assert!(g4000.abs() < 3.0 * se4000 + 0.01, "gap {g4000} at n=4000");
}
