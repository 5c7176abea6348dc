use cace_core::li::{li_em_fit, EmOptions};
use cace_core::simulation::{find_scenario, generate, Mechanism, StepRho};
use cace_core::{bootstrap, fit_two_step, BootstrapOptions, Error, ObservedRecord, OutcomeFamily};

#[test]
fn two_step_recovers_normal_effect() {
    let records = generate(&find_scenario("homo_normal").unwrap(), 40_000, 101).unwrap();
    let fit = fit_two_step(&records, OutcomeFamily::HomoNormal).unwrap();
    assert!(fit.diagnostics.converged);
    assert!((fit.cace_hat() - 1.0).abs() < 0.12, "{}", fit.cace_hat());
}

#[test]
fn two_step_recovers_exponential_effect() {
    let records = generate(&find_scenario("exponential").unwrap(), 40_000, 103).unwrap();
    let fit = fit_two_step(&records, OutcomeFamily::Exponential).unwrap();
    assert!((fit.cace_hat() - 1.0).abs() < 0.3, "{}", fit.cace_hat());
}

#[test]
fn methods_agree_on_large_complete_samples() {
    let mut scenario = find_scenario("homo_normal").unwrap();
    scenario.mechanism = Mechanism::Odn(StepRho::constant(1.0));
    let records = generate(&scenario, 40_000, 107).unwrap();
    let odn = fit_two_step(&records, OutcomeFamily::HomoNormal).unwrap().cace_hat();
    let li = li_em_fit(&records, None, &EmOptions::default()).unwrap();
    assert!(li.converged);
    assert!((odn - li.cace_hat()).abs() < 0.12, "{odn} vs {}", li.cace_hat());
    assert!((li.cace_hat() - 1.0).abs() < 0.05);
}

#[test]
fn em_recovers_latent_ignorable_truth() {
    let records = generate(&find_scenario("LI3").unwrap(), 40_000, 109).unwrap();
    let fit = li_em_fit(&records, None, &EmOptions::default()).unwrap();
    assert!((fit.cace_hat() - 1.0).abs() < 0.06, "{}", fit.cace_hat());
    for (g, want) in fit.params.gamma.iter().zip([0.7, 0.6, 0.6, 0.8]) {
        assert!((g - want).abs() < 0.03, "{:?}", fit.params.gamma);
    }
}

#[test]
fn bootstrap_is_reproducible_across_pools() {
    let records = generate(&find_scenario("gamma").unwrap(), 600, 113).unwrap();
    let options = BootstrapOptions::new(120, 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| bootstrap(&records, OutcomeFamily::Gamma, &options).unwrap())
    };
    let a = run(1).bootstrap.unwrap();
    let b = run(4).bootstrap.unwrap();
    assert_eq!(a.replicates, b.replicates);
    assert_eq!(a.intervals, b.intervals);
}

#[test]
fn perfect_compliance_has_no_information_for_two_step() {
    let records: Vec<ObservedRecord> = (0..200)
        .map(|i| {
            let z = i % 2 == 0;
            ObservedRecord::observed(z, z, if z { 2.0 } else { 1.0 } + (i % 7) as f64 * 0.1)
        })
        .collect();
    match fit_two_step(&records, OutcomeFamily::HomoNormal) {
        Err(Error::NoInformation(_)) => {}
        other => panic!("{other:?}"),
    }
    let li = li_em_fit(&records, None, &EmOptions::default()).unwrap();
    let arm = |z: bool| {
        let ys: Vec<f64> = records.iter().filter(|r| r.z == z).filter_map(|r| r.y).collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    assert!((li.cace_hat() - (arm(true) - arm(false))).abs() < 1e-8);
}

#[test]
fn weak_instrument_is_rejected() {
    let records: Vec<ObservedRecord> = (0..400)
        .map(|i| ObservedRecord::observed(i % 2 == 0, i % 4 < 2, 1.0 + (i % 5) as f64))
        .collect();
    let err = fit_two_step(&records, OutcomeFamily::HomoNormal).unwrap_err();
    assert!(err.is_statistical(), "{err}");
}
