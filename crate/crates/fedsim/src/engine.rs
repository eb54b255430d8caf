//! Trajectory execution: the iterate update rule, the virtual iterate and
//! its discrepancy, the weighted ergodic average, and per-iteration
//! metrics with CSV emission.

use crate::error::{Error, Result};
use crate::methods::{self, MethodSpec, SharedState, WorkerState};
use crate::problems::GlobalProblem;
use crate::vecops;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: MethodSpec,
    pub gamma: f64,
    pub iterations: u64,
    /// Weight decay for the ergodic average (0 = plain running mean).
    pub eta_weight: f64,
    pub x0: Vec<f64>,
    pub master_seed: u64,
    pub record_every: u64,
    /// Also record a sample at every communication event.
    pub record_comms: bool,
    /// Stop early once the recorded virtual-iterate gap falls below this.
    pub target_gap: Option<f64>,
    /// Worker-thread fan-out for direction draws; results are identical
    /// for any thread count.
    pub threads: usize,
}

impl RunConfig {
    pub fn new(spec: MethodSpec, gamma: f64, iterations: u64, d: usize, master_seed: u64) -> Self {
        RunConfig {
            spec,
            gamma,
            iterations,
            eta_weight: 0.0,
            x0: vec![0.0; d],
            master_seed,
            record_every: 1,
            record_comms: true,
            target_gap: None,
            threads: 1,
        }
    }

    fn validate(&self, problem: &GlobalProblem) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eta_weight) {
            return Err(Error::Config("eta must lie in [0, 1)".into()));
        }
        if self.record_every < 1 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        if self.x0.len() != problem.d {
            return Err(Error::Dimension {
                expected: problem.d,
                got: self.x0.len(),
            });
        }
        if problem.optimum.is_none() {
            return Err(Error::MissingOptimum(
                "trajectory metrics need a certified optimum".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub k: u64,
    pub comm_rounds: u64,
    pub grad_evals: u64,
    pub f_gap_virtual: f64,
    pub f_gap_avg: f64,
    pub dist_sq: f64,
    pub v_k: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_x_avg: Vec<f64>,
    pub final_x_virtual: Vec<f64>,
    pub total_grad_evals: u64,
    pub total_comm_rounds: u64,
    /// Number of steps actually executed (may stop early on target_gap).
    pub completed: u64,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str =
        "k,comm_rounds,grad_evals,f_gap_virtual,f_gap_avg,dist_sq,V_k";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 96 + 64);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.k, s.comm_rounds, s.grad_evals, s.f_gap_virtual, s.f_gap_avg, s.dist_sq, s.v_k
            ));
        }
        out
    }

    /// Strict reader for the exact format `to_csv` writes: fixed header,
    /// seven columns, all values finite.
    pub fn parse_csv(text: &str) -> Result<Vec<Sample>> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            msg: "empty csv".into(),
        })?;
        if header != Self::CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header `{header}`"),
            });
        }
        let mut samples = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 2;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 7 columns, got {}", cols.len()),
                });
            }
            let int = |s: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad integer `{s}`"),
                })
            };
            let real = |s: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad real `{s}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("non-finite value `{s}`"),
                    });
                }
                Ok(v)
            };
            samples.push(Sample {
                k: int(cols[0])?,
                comm_rounds: int(cols[1])?,
                grad_evals: int(cols[2])?,
                f_gap_virtual: real(cols[3])?,
                f_gap_avg: real(cols[4])?,
                dist_sq: real(cols[5])?,
                v_k: real(cols[6])?,
            });
        }
        Ok(samples)
    }
}

/// Mean of the worker iterates and their mean squared deviation from it.
pub fn virtual_and_discrepancy(states: &[WorkerState]) -> (Vec<f64>, f64) {
    let mut mean = vec![0.0; states[0].x.len()];
    virtual_iterate_into(states, &mut mean);
    let v = states
        .iter()
        .map(|s| vecops::dist_sq(&s.x, &mean))
        .sum::<f64>()
        / states.len() as f64;
    (mean, v)
}

fn virtual_iterate_into(states: &[WorkerState], out: &mut [f64]) {
    let refs: Vec<&[f64]> = states.iter().map(|s| s.x.as_slice()).collect();
    vecops::pairwise_mean_refs(&refs, out);
}

/// Incrementally maintained weighted ergodic average with weights
/// `w_k = (1 - eta)^{-(k+1)}`, kept in normalized form so arbitrarily long
/// runs never overflow.
#[derive(Debug, Clone)]
pub struct WeightedAverage {
    eta: f64,
    /// W_k / w_k
    w_ratio: f64,
    pub value: Vec<f64>,
}

impl WeightedAverage {
    pub fn new(eta: f64, x0: &[f64]) -> Self {
        WeightedAverage {
            eta,
            w_ratio: 1.0,
            value: x0.to_vec(),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.w_ratio = self.w_ratio * (1.0 - self.eta) + 1.0;
        let rho = 1.0 / self.w_ratio;
        for (v, xi) in self.value.iter_mut().zip(x) {
            *v = (1.0 - rho) * *v + rho * xi;
        }
    }
}

/// Convenience wrapper over the incremental average for a finished list of
/// iterates (index 0 carries weight w_0).
pub fn weighted_average(iterates: &[Vec<f64>], eta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Config("eta must lie in [0, 1)".into()));
    }
    let first = iterates
        .first()
        .ok_or_else(|| Error::Config("no iterates".into()))?;
    let mut avg = WeightedAverage::new(eta, first);
    for x in &iterates[1..] {
        avg.push(x);
    }
    Ok(avg.value)
}

/// Everything the verification suite needs to replay draws at a frozen
/// trajectory point.
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub k: u64,
    pub states: Vec<WorkerState>,
    pub shared: SharedState,
}

pub(crate) struct Simulation<'a> {
    pub problem: &'a GlobalProblem,
    pub spec: MethodSpec,
    pub gamma: f64,
    pub states: Vec<WorkerState>,
    pub shared: SharedState,
    pub grad_evals: u64,
    pub comm_rounds: u64,
    threads: usize,
    scratch: Vec<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(problem: &'a GlobalProblem, cfg: &RunConfig) -> Result<Self> {
        let (states, shared, init_evals) =
            methods::init_states(&cfg.spec, problem, &cfg.x0, cfg.master_seed)?;
        Ok(Simulation {
            problem,
            spec: cfg.spec,
            gamma: cfg.gamma,
            states,
            shared,
            grad_evals: init_evals,
            comm_rounds: 0,
            threads: cfg.threads.max(1),
            scratch: vec![0.0; problem.d],
        })
    }

    /// One iteration of the update rule. Returns whether the iteration
    /// ended in a communication.
    pub fn step(&mut self, k: u64) -> Result<bool> {
        let comm = methods::is_communication(self.spec.loop_kind, k, &mut self.shared.coin);

        // direction draws, fan out when configured
        if self.threads > 1 {
            use rayon::prelude::*;
            let spec = &self.spec;
            let problem = self.problem;
            let shared = &self.shared;
            let evals: Vec<u64> = self
                .states
                .par_iter_mut()
                .enumerate()
                .map(|(i, st)| {
                    methods::sample_direction(spec, problem, i, st, shared).expect("validated spec")
                })
                .collect();
            self.grad_evals += evals.iter().sum::<u64>();
        } else {
            for i in 0..self.states.len() {
                self.grad_evals += methods::sample_direction(
                    &self.spec,
                    self.problem,
                    i,
                    &mut self.states[i],
                    &self.shared,
                )?;
            }
        }

        // refreshes see the pre-step iterates and virtual iterate
        let mut virtual_x = std::mem::take(&mut self.scratch);
        virtual_iterate_into(&self.states, &mut virtual_x);
        self.grad_evals += methods::refresh_state(
            &self.spec,
            self.problem,
            &mut self.states,
            &mut self.shared,
            &virtual_x,
            comm,
        );

        // iterate update, then exact averaging on communication
        let gamma = self.gamma;
        for st in self.states.iter_mut() {
            let g = std::mem::take(&mut st.g_buf);
            vecops::axpy(-gamma, &g, &mut st.x);
            st.g_buf = g;
        }
        if comm {
            self.comm_rounds += 1;
            virtual_iterate_into(&self.states, &mut virtual_x);
            for st in self.states.iter_mut() {
                st.x.copy_from_slice(&virtual_x);
            }
        }
        self.scratch = virtual_x;
        Ok(comm)
    }
}

/// Execute the configured run and collect metrics.
pub fn run(cfg: &RunConfig, problem: &GlobalProblem) -> Result<Trajectory> {
    run_with_snapshots(cfg, problem, 0).map(|(t, _)| t)
}

/// Like `run`, additionally capturing full state snapshots every
/// `snapshot_every` iterations (0 disables).
pub fn run_with_snapshots(
    cfg: &RunConfig,
    problem: &GlobalProblem,
    snapshot_every: u64,
) -> Result<(Trajectory, Vec<StateSnapshot>)> {
    cfg.validate(problem)?;
    let opt = problem.optimum.as_ref().expect("validated");
    let f_star = opt.f;
    let x_star = &opt.x;

    let mut sim = Simulation::new(problem, cfg)?;
    let mut avg = WeightedAverage::new(cfg.eta_weight, &cfg.x0);
    let mut samples = Vec::new();
    let mut snapshots = Vec::new();

    let initial_gap = (problem.full_value(&cfg.x0) - f_star).max(1e-300);
    let blowup = 1e12 * initial_gap;

    let record = |samples: &mut Vec<Sample>,
                  sim: &Simulation,
                  avg: &WeightedAverage,
                  k: u64|
     -> Result<(f64, f64)> {
        let (virtual_x, v_k) = virtual_and_discrepancy(&sim.states);
        if !vecops::all_finite(&virtual_x) {
            return Err(Error::Divergence { k });
        }
        let f_gap_virtual = sim.problem.full_value(&virtual_x) - f_star;
        let f_gap_avg = sim.problem.full_value(&avg.value) - f_star;
        let dist_sq = vecops::dist_sq(&virtual_x, x_star);
        samples.push(Sample {
            k,
            comm_rounds: sim.comm_rounds,
            grad_evals: sim.grad_evals,
            f_gap_virtual,
            f_gap_avg,
            dist_sq,
            v_k,
        });
        Ok((f_gap_virtual, f_gap_avg))
    };

    // row for the initial iterate
    record(&mut samples, &sim, &avg, 0)?;

    let mut completed = 0u64;
    let mut vx = vec![0.0; problem.d];
    for k in 0..cfg.iterations {
        let comm = sim.step(k)?;
        completed = k + 1;
        virtual_iterate_into(&sim.states, &mut vx);
        avg.push(&vx);

        let due = completed % cfg.record_every == 0
            || completed == cfg.iterations
            || (comm && cfg.record_comms);
        if due {
            let (gap_v, _) = record(&mut samples, &sim, &avg, completed)?;
            if !gap_v.is_finite() || gap_v > blowup {
                return Err(Error::Divergence { k: completed });
            }
            if let Some(target) = cfg.target_gap {
                if gap_v <= target {
                    break;
                }
            }
        }
        if snapshot_every > 0 && completed % snapshot_every == 0 {
            snapshots.push(StateSnapshot {
                k: completed,
                states: sim.states.clone(),
                shared: sim.shared.clone(),
            });
        }
    }

    let (final_x_virtual, _) = virtual_and_discrepancy(&sim.states);
    Ok((
        Trajectory {
            samples,
            final_x_avg: avg.value,
            final_x_virtual,
            total_grad_evals: sim.grad_evals,
            total_comm_rounds: sim.comm_rounds,
            completed,
        },
        snapshots,
    ))
}
