use cace_core::estimation::first_stage;
use cace_core::simulation::{
    find_scenario, generate_with_truth, monte_carlo, Method, StudyOptions, LI_GAMMAS,
};
use cace_core::ComplianceStratum;
use statrs::distribution::{ContinuousCDF, Normal};

fn within_se(p_hat: f64, p: f64, n: usize, k: f64) -> bool {
    (p_hat - p).abs() <= k * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn missing_fraction_matches_response_law() {
    let n = 100_000;
    let units = generate_with_truth(&find_scenario("homo_normal").unwrap(), n, 17, 0).unwrap();
    // Each block is N(mean, 1) and nonresponse is 0.15 / 0.10 / 0.20 on y <= 2, (2, 7), y >= 7.
    let nonresponse = |m: f64| {
        let f = Normal::new(m, 1.0).unwrap();
        let low = f.cdf(2.0);
        let high = 1.0 - f.cdf(7.0);
        0.15 * low + 0.10 * (1.0 - low - high) + 0.20 * high
    };
    // Blocks 1c, 0c, a, n have weights xi wc, (1 - xi) wc, wa, wn.
    let expected = (nonresponse(5.0) + nonresponse(4.0)) / 6.0 + (nonresponse(6.0) + nonresponse(3.0)) / 3.0;
    assert!((expected - 0.105).abs() < 0.005, "{expected}");
    let observed = units.iter().filter(|u| !u.record.r()).count() as f64 / n as f64;
    assert!(within_se(observed, expected, n, 3.0), "{observed} vs {expected}");
}

#[test]
fn latent_ignorable_response_rates() {
    let n = 100_000;
    let units = generate_with_truth(&find_scenario("LI1").unwrap(), n, 23, 0).unwrap();
    let gamma = LI_GAMMAS[0];
    let groups: [(ComplianceStratum, Option<bool>, f64); 4] = [
        (ComplianceStratum::Complier, Some(true), gamma[0]),
        (ComplianceStratum::Complier, Some(false), gamma[1]),
        (ComplianceStratum::NeverTaker, None, gamma[2]),
        (ComplianceStratum::AlwaysTaker, None, gamma[3]),
    ];
    for (stratum, d, g) in groups {
        let members: Vec<_> = units
            .iter()
            .filter(|u| u.stratum == stratum && d.is_none_or(|d| u.record.d == d))
            .collect();
        let rate = members.iter().filter(|u| u.record.r()).count() as f64 / members.len() as f64;
        assert!(within_se(rate, g, members.len(), 3.0), "{stratum:?} {d:?}: {rate} vs {g}");
    }
}

#[test]
fn noncompliers_have_one_law_across_arms() {
    let n = 100_000;
    let units = generate_with_truth(&find_scenario("homo_normal").unwrap(), n, 29, 0).unwrap();
    for stratum in [ComplianceStratum::NeverTaker, ComplianceStratum::AlwaysTaker] {
        let arm_mean = |z: bool| {
            let ys: Vec<f64> = units
                .iter()
                .filter(|u| u.stratum == stratum && u.record.z == z)
                .map(|u| u.y_full)
                .collect();
            (ys.iter().sum::<f64>() / ys.len() as f64, ys.len())
        };
        let (m1, n1) = arm_mean(true);
        let (m0, n0) = arm_mean(false);
        let se = (1.0 / n1 as f64 + 1.0 / n0 as f64).sqrt();
        assert!((m1 - m0).abs() < 4.0 * se, "{stratum:?}: {m1} vs {m0}");
    }
}

#[test]
fn first_stage_is_consistent() {
    let units = generate_with_truth(&find_scenario("exponential").unwrap(), 200_000, 31, 0).unwrap();
    let records: Vec<_> = units.iter().map(|u| u.record).collect();
    let alpha = first_stage(&records).unwrap();
    assert!((alpha.xi() - 0.5).abs() < 0.005);
    assert!((alpha.omega_a() - 1.0 / 3.0).abs() < 0.01);
    assert!((alpha.omega_n() - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn studies_do_not_depend_on_thread_count() {
    let options = StudyOptions {
        n: 300,
        reps: 6,
        bootstrap_replicates: 100,
        seed: 44,
    };
    let run = |threads: usize, method: Method| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| monte_carlo(&find_scenario("LI2").unwrap(), method, &options).unwrap())
    };
    for method in [Method::Odn, Method::Li] {
        let one = run(1, method);
        let three = run(3, method);
        assert_eq!(one.replicates, three.replicates);
        assert_eq!(one.bias.map(f64::to_bits), three.bias.map(f64::to_bits));
    }
}
