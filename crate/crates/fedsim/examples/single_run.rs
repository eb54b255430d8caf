//! Run one method on a synthetic quadratic and write the trajectory CSV.
//!
//! Usage: cargo run --example single_run [-- preset] (default s-local-svrg)

use fedsim::cli::{build_method_spec, GammaConfig, MethodConfig};
use fedsim::data::{make_quadratic, QuadraticSpec};
use fedsim::engine::{self, RunConfig};
use fedsim::theory::{self, DataRegime};

fn main() {
    let preset = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "s-local-svrg".to_string());
    let problem = make_quadratic(&QuadraticSpec {
        n: 10,
        m: 20,
        d: 30,
        mu: 1e-3,
        seed: 42,
    })
    .unwrap();

    let mc = MethodConfig {
        preset: preset.clone(),
        gamma: GammaConfig::Keyword("theory".into()),
        tau: if preset.contains("svrg") && preset.starts_with("s-") {
            None
        } else {
            Some(10)
        },
        p: if preset == "s-local-svrg" || preset == "ss-local-sgd" {
            Some(0.1)
        } else {
            None
        },
        q: None,
        r: None,
        noise_variance: if preset == "local-sgd"
            || preset == "star-local-sgd"
            || preset == "ss-local-sgd"
        {
            Some(1.0)
        } else {
            None
        },
        estimator: None,
        coupled_updates: None,
    };
    // keep exactly one loop parameter
    let mc = MethodConfig {
        tau: if mc.p.is_some() { None } else { mc.tau },
        ..mc
    };
    let spec = build_method_spec(&mc, &problem).expect("preset");

    let kp = theory::key_params(&spec, &problem).unwrap();
    let lp =
        theory::loop_params(&kp, spec.loop_kind, DataRegime::Heterogeneous, problem.mu).unwrap();
    let gamma = theory::max_stepsize(&kp, &lp, problem.l_smooth);
    println!("preset {preset}: gamma from the stepsize bound = {gamma:.6e}");

    let mut cfg = RunConfig::new(spec, gamma, 50_000, problem.d, 7);
    cfg.eta_weight = (gamma * problem.mu).min(kp.rho / 4.0);
    cfg.record_every = 1_000;
    cfg.record_comms = false;
    let traj = engine::run(&cfg, &problem).expect("run");
    for s in traj.samples.iter().step_by(5) {
        println!(
            "k={:<6} rounds={:<5} f_gap={:.3e}  dist^2={:.3e}  V={:.2e}",
            s.k, s.comm_rounds, s.f_gap_virtual, s.dist_sq, s.v_k
        );
    }
    std::fs::create_dir_all("examples_out").unwrap();
    let path = format!("examples_out/single_run_{preset}.csv");
    std::fs::write(&path, traj.to_csv()).unwrap();
    println!(
        "total gradient evaluations: {}, communication rounds: {}",
        traj.total_grad_evals, traj.total_comm_rounds
    );
    println!("wrote {path}");
}
