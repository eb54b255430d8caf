//! Derived constants, stepsize bounds, and iteration predictions for all
//! six method presets on one problem.

use fedsim::data::{make_quadratic, QuadraticSpec};
use fedsim::methods::{EstimatorKind, MethodSpec};
use fedsim::theory::{self, DataRegime, PredictedK};

fn main() {
    let problem = make_quadratic(&QuadraticSpec {
        n: 10,
        m: 20,
        d: 30,
        mu: 1e-3,
        seed: 42,
    })
    .unwrap();
    let m = problem.m as f64;
    let presets = [
        (
            "local-sgd (noisy)",
            MethodSpec::local_sgd(EstimatorKind::NoisyGradient { variance: 1.0 }, 10),
        ),
        (
            "local-sgd (sampled)",
            MethodSpec::local_sgd(EstimatorKind::UniformSample, 10),
        ),
        ("local-svrg", MethodSpec::local_svrg(1.0 / m, 10)),
        (
            "star-local-sgd",
            MethodSpec::star_local_sgd(EstimatorKind::NoisyGradient { variance: 1.0 }, 10),
        ),
        (
            "ss-local-sgd",
            MethodSpec::ss_local_sgd(EstimatorKind::NoisyGradient { variance: 1.0 }, 0.1, 0.1, 10),
        ),
        ("star-local-sgd-star", MethodSpec::star_local_sgd_star(10)),
        ("s-local-svrg", MethodSpec::s_local_svrg(0.1, 0.1)),
    ];
    println!(
        "problem: n={}, m={}, d={}, mu={}, L={}, maxLij={:.3}",
        problem.n, problem.m, problem.d, problem.mu, problem.l_smooth, problem.max_lij
    );
    println!(
        "{:<22} {:>12} {:>10} {:>12} {:>12} {:>14}",
        "preset", "gamma_max", "theta", "Phi0", "Psi0", "K(1e-6)"
    );
    let x0 = vec![0.0; problem.d];
    for (name, spec) in presets {
        let kp = theory::key_params(&spec, &problem).unwrap();
        let lp = theory::loop_params(&kp, spec.loop_kind, DataRegime::Heterogeneous, problem.mu)
            .unwrap();
        let gamma = theory::max_stepsize(&kp, &lp, problem.l_smooth);
        let sigma0 = theory::sigma0_sq(&spec, &problem, &x0).unwrap();
        let dist0 = fedsim::vecops::dist_sq(&x0, &problem.optimum.as_ref().unwrap().x);
        let rb = theory::rate_bound(&kp, &lp, gamma, problem.mu, sigma0, dist0);
        let k = match rb.predicted_k(1e-6) {
            PredictedK::Iterations(k) => format!("{k}"),
            PredictedK::Unreachable => "unreachable".to_string(),
        };
        println!(
            "{:<22} {:>12.4e} {:>10.7} {:>12.4e} {:>12.4e} {:>14}",
            name, gamma, rb.theta, rb.phi0, rb.psi0, k
        );
    }
    println!();
    println!("Psi0 = 0 marks the presets that converge to the exact optimum;");
    println!("for the rest, gamma * Psi0 is the residual neighborhood.");
}
