use cace_core::estimation::ObservedCells;
use cace_core::quadrature::integrate;
use cace_core::simulation::{find_scenario, generate};
use cace_core::{conditional_log_likelihood, Block, FirstStageParams, OutcomeFamily, OutcomeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario_for(family: OutcomeFamily) -> &'static str {
    match family {
        OutcomeFamily::HomoNormal => "homo_normal",
        OutcomeFamily::HeteroNormal => "heter",
        OutcomeFamily::Exponential => "exponential",
        OutcomeFamily::Gamma => "gamma",
        OutcomeFamily::LogNormal => "lognormal",
    }
}

/// Central differences of `l2` in the unconstrained coordinates against the analytic
/// gradient, at random points around the simulation truth.
#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for family in OutcomeFamily::ALL {
        let scenario = find_scenario(scenario_for(family)).unwrap();
        let records = generate(&scenario, 300, 5).unwrap();
        let cells = ObservedCells::new(family, &records, None).unwrap();
        let alpha = FirstStageParams::new(0.5, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let truth = match &scenario.outcome {
            cace_core::simulation::OutcomeLaw::Family(p) => p.to_unconstrained(),
            other => panic!("{other:?}"),
        };
        for _ in 0..100 {
            let phi: Vec<f64> = truth.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            let mut grad = vec![0.0; phi.len()];
            cells.log_likelihood_grad(&phi, &alpha, &mut grad).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; phi.len()];
            for i in 0..phi.len() {
                let mut up = phi.clone();
                let mut down = phi.clone();
                up[i] += h;
                down[i] -= h;
                let mut scratch = vec![0.0; phi.len()];
                let fu = cells.log_likelihood_grad(&up, &alpha, &mut scratch).unwrap();
                let fdn = cells.log_likelihood_grad(&down, &alpha, &mut scratch).unwrap();
                fd[i] = (fu - fdn) / (2.0 * h);
            }
            let scale = fd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..phi.len() {
                assert!(
                    (grad[i] - fd[i]).abs() <= 1e-5 * scale,
                    "{family} coordinate {i}: {} vs {}",
                    grad[i],
                    fd[i]
                );
            }
        }
    }
}

#[test]
fn value_agrees_with_public_likelihood() {
    let scenario = find_scenario("gamma").unwrap();
    let records = generate(&scenario, 200, 3).unwrap();
    let alpha = FirstStageParams::new(0.45, 0.3, 0.35).unwrap();
    let params = OutcomeParams::Gamma {
        shape: [5.5, 4.2, 6.1, 2.9],
        rate: 1.1,
    };
    let cells = ObservedCells::new(OutcomeFamily::Gamma, &records, None).unwrap();
    let mut grad = vec![0.0; 5];
    let v = cells.log_likelihood_grad(&params.to_unconstrained(), &alpha, &mut grad).unwrap();
    let w = conditional_log_likelihood(&records, &params, &alpha).unwrap();
    assert!((v - w).abs() <= 1e-10 * w.abs());
}

#[test]
fn densities_integrate_to_one() {
    let laws = [
        OutcomeParams::HeteroNormal {
            mean: [5.0, -4.0, 60.0, 0.3],
            variance: [0.25, 1.0, 30.0, 1e-2],
        },
        OutcomeParams::Exponential {
            rate: [0.2, 0.25, 5.0, 1.0 / 3.0],
        },
        OutcomeParams::Gamma {
            shape: [5.0, 0.7, 1.0, 30.0],
            rate: 1.3,
        },
        OutcomeParams::LogNormal {
            log_mean: [1.5, -1.0, 0.0, 2.0],
            log_variance: 0.6,
        },
    ];
    for params in laws {
        let lower = params.family().support_lower().map_or(f64::NEG_INFINITY, |(lo, _)| lo);
        for b in Block::ALL {
            let law = params.block(b);
            let mass = integrate(
                |y| if params.family().in_support(y) { law.density(y).unwrap() } else { 0.0 },
                lower,
                f64::INFINITY,
                1e-11,
            )
            .unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "{law:?}: {mass}");
        }
    }
}

#[test]
fn hetero_with_equal_variances_matches_homo() {
    let scenario = find_scenario("homo_normal").unwrap();
    let records = generate(&scenario, 400, 8).unwrap();
    let alpha = FirstStageParams::new(0.5, 0.3, 0.35).unwrap();
    let mean = [5.2, 3.9, 6.1, 2.8];
    let homo = OutcomeParams::HomoNormal { mean, variance: 1.3 };
    let hetero = OutcomeParams::HeteroNormal {
        mean,
        variance: [1.3; 4],
    };
    let a = conditional_log_likelihood(&records, &homo, &alpha).unwrap();
    let b = conditional_log_likelihood(&records, &hetero, &alpha).unwrap();
    assert!((a - b).abs() <= 1e-10 * a.abs());
}
