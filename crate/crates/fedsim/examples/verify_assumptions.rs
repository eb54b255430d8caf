//! Run the empirical assumption checks for one preset: gradient audit,
//! Monte-Carlo unbiasedness, the second-moment and recursion bounds at
//! trajectory states, and the parallel-minibatch reduction.

use fedsim::data::{make_quadratic, QuadraticSpec};
use fedsim::methods::{EstimatorKind, MethodSpec};
use fedsim::theory::{self, DataRegime};
use fedsim::verify;

fn main() {
    let problem = make_quadratic(&QuadraticSpec {
        n: 8,
        m: 8,
        d: 16,
        mu: 0.02,
        seed: 11,
    })
    .unwrap();
    let spec = MethodSpec::local_svrg(0.125, 4);
    let kp = theory::key_params(&spec, &problem).unwrap();
    let lp =
        theory::loop_params(&kp, spec.loop_kind, DataRegime::Heterogeneous, problem.mu).unwrap();
    let gamma = theory::max_stepsize(&kp, &lp, problem.l_smooth);

    let snaps = verify::trajectory_snapshots(&spec, &problem, gamma, 2_000, 20, 5).unwrap();
    let reports = [
        verify::finite_difference_audit(&problem, 20, 1).unwrap(),
        verify::check_unbiasedness(&spec, &problem, snaps.last().unwrap(), 50_000, 2).unwrap(),
        verify::check_second_moment(&spec, &problem, &kp, &snaps, 1_000, 3).unwrap(),
        verify::check_parallel_sgd_reduction(
            &MethodSpec::local_sgd(EstimatorKind::NoisyGradient { variance: 1.0 }, 1),
            &problem,
            0.05,
            1_000,
            4,
        )
        .unwrap(),
    ];
    println!(
        "{:<28} {:>8} {:>13} {:>13} {:>9}",
        "check", "status", "observed", "bound", "samples"
    );
    for r in &reports {
        println!(
            "{:<28} {:>8} {:>13.4e} {:>13.4e} {:>9}",
            r.name,
            if r.skipped {
                "skip"
            } else if r.passed {
                "pass"
            } else {
                "FAIL"
            },
            r.observed,
            r.bound,
            r.samples
        );
    }
    assert!(reports.iter().all(|r| r.passed));
}
