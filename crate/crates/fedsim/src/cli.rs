//! Configuration loading and the `run` / `sweep` / `theory` / `verify` /
//! `info` subcommands.
//!
//! Experiments are described by a single JSON document (strict parsing:
//! unknown keys are errors). Runs emit one CSV per seed plus a key=value
//! metadata sidecar that carries every constant needed to re-derive the
//! stepsize bound.

use crate::data::{self, PartitionMode, QuadraticSpec};
use crate::engine::{self, RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::methods::{EstimatorKind, LoopKind, MethodSpec, ShiftKind, ShiftSource};
use crate::problems::GlobalProblem;
use crate::theory::{self, DataRegime, PredictedK, ProblemConstants};
use crate::verify;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub method: MethodConfig,
    pub run: RunBlock,
    #[serde(default)]
    pub theory: TheoryBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        n: usize,
        m: usize,
        d: usize,
        mu: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        identical: bool,
    },
    Logistic {
        dataset: String,
        n: usize,
        #[serde(default = "default_partition")]
        partition: PartitionMode,
        #[serde(default)]
        partition_seed: u64,
        mu: f64,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_partition() -> PartitionMode {
    PartitionMode::Random
}
fn default_true() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_record_every() -> u64 {
    1
}
fn default_one() -> usize {
    1
}
fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GammaConfig {
    Value(f64),
    Keyword(String), // "theory"
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub preset: String,
    pub gamma: GammaConfig,
    #[serde(default)]
    pub tau: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub noise_variance: Option<f64>,
    /// Overrides the preset's default estimator: full | uniform | noisy.
    #[serde(default)]
    pub estimator: Option<String>,
    #[serde(default)]
    pub coupled_updates: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub iterations: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    pub output: String,
    #[serde(default = "default_true")]
    pub record_comms: bool,
    #[serde(default)]
    pub target_gap: Option<f64>,
    #[serde(default = "default_one")]
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TheoryBlock {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// heterogeneous | zeta_heterogeneous
    #[serde(default)]
    pub data_regime: Option<String>,
    /// zeta^2 for the zeta-heterogeneous regime (0 = identical data).
    #[serde(default)]
    pub zeta_sq: Option<f64>,
}

impl Default for TheoryBlock {
    fn default() -> Self {
        TheoryBlock {
            epsilon: default_epsilon(),
            data_regime: None,
            zeta_sq: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub taus: Vec<usize>,
    #[serde(default)]
    pub ps: Vec<f64>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.method.tau, self.method.p) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "method must set exactly one of tau or p, not both".into(),
                ))
            }
            (None, None) => return Err(Error::Config("method must set one of tau or p".into())),
            _ => {}
        }
        if let ProblemConfig::Logistic { dataset, .. } = &self.problem {
            if !Path::new(dataset).exists() {
                return Err(Error::Config(format!("dataset file not found: {dataset}")));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must be nonempty".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<GlobalProblem> {
        match &self.problem {
            ProblemConfig::Quadratic {
                n,
                m,
                d,
                mu,
                seed,
                identical,
            } => {
                let spec = QuadraticSpec {
                    n: *n,
                    m: *m,
                    d: *d,
                    mu: *mu,
                    seed: *seed,
                };
                if *identical {
                    data::make_identical_quadratic(&spec)
                } else {
                    data::make_quadratic(&spec)
                }
            }
            ProblemConfig::Logistic {
                dataset,
                n,
                partition,
                partition_seed,
                mu,
                normalize,
            } => {
                let ds = data::parse_libsvm_file(Path::new(dataset))?;
                let part = data::partition(&ds, *n, *partition, *partition_seed)?;
                data::make_logistic(&ds, &part, *mu, *normalize)
            }
        }
    }

    pub fn build_method(&self, problem: &GlobalProblem) -> Result<MethodSpec> {
        build_method_spec(&self.method, problem)
    }

    pub fn data_regime(&self) -> Result<DataRegime> {
        match self.theory.data_regime.as_deref() {
            None | Some("heterogeneous") | Some("het") => Ok(DataRegime::Heterogeneous),
            Some("zeta_heterogeneous") | Some("zeta") => Ok(DataRegime::ZetaHeterogeneous {
                zeta_sq: self.theory.zeta_sq.unwrap_or(0.0),
            }),
            Some(other) => Err(Error::Config(format!("unknown data regime `{other}`"))),
        }
    }
}

fn loop_kind(mc: &MethodConfig) -> Result<LoopKind> {
    match (mc.tau, mc.p) {
        (Some(tau), None) => Ok(LoopKind::Fixed { tau }),
        (None, Some(p)) => Ok(LoopKind::Bernoulli { p }),
        _ => Err(Error::Config("set exactly one of tau or p".into())),
    }
}

fn base_estimator(mc: &MethodConfig, default_noisy_ok: bool) -> Result<EstimatorKind> {
    if let Some(name) = mc.estimator.as_deref() {
        return match name {
            "full" | "full_gradient" => Ok(EstimatorKind::FullGradient),
            "uniform" | "uniform_sample" => Ok(EstimatorKind::UniformSample),
            "noisy" | "noisy_gradient" => Ok(EstimatorKind::NoisyGradient {
                variance: mc
                    .noise_variance
                    .ok_or_else(|| Error::Config("noisy estimator needs noise_variance".into()))?,
            }),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        };
    }
    if default_noisy_ok {
        if let Some(v) = mc.noise_variance {
            return Ok(EstimatorKind::NoisyGradient { variance: v });
        }
    }
    Ok(EstimatorKind::UniformSample)
}

/// Translate a preset name plus overrides into a full method description.
pub fn build_method_spec(mc: &MethodConfig, problem: &GlobalProblem) -> Result<MethodSpec> {
    let lk = loop_kind(mc)?;
    let p_for_defaults = match lk {
        LoopKind::Bernoulli { p } => Some(p),
        LoopKind::Fixed { .. } => None,
    };
    let mut spec = match mc.preset.as_str() {
        "local-sgd" => MethodSpec {
            estimator: base_estimator(mc, true)?,
            shift: ShiftKind::None,
            loop_kind: lk,
            coupled_updates: false,
        },
        "local-svrg" => MethodSpec {
            estimator: EstimatorKind::Lsvrg {
                q: mc.q.unwrap_or(1.0 / problem.m as f64),
                per_client_anchor: true,
            },
            shift: ShiftKind::None,
            loop_kind: lk,
            coupled_updates: false,
        },
        "star-local-sgd" => MethodSpec {
            estimator: base_estimator(mc, true)?,
            shift: ShiftKind::Star,
            loop_kind: lk,
            coupled_updates: false,
        },
        "ss-local-sgd" => {
            let q = mc.q.or(p_for_defaults).ok_or_else(|| {
                Error::Config("ss-local-sgd needs q (or a Bernoulli p to default from)".into())
            })?;
            let r = mc.r.unwrap_or_else(|| {
                p_for_defaults
                    .map(|p| (1.0 / p).ceil() as usize)
                    .unwrap_or(1)
                    .max(1)
            });
            MethodSpec {
                estimator: base_estimator(mc, true)?,
                shift: ShiftKind::Learned {
                    rho_prime: q,
                    source: ShiftSource::AnchorStochastic { r },
                },
                loop_kind: lk,
                coupled_updates: false,
            }
        }
        "star-local-sgd-star" => MethodSpec {
            estimator: EstimatorKind::StarSvrg,
            shift: ShiftKind::Star,
            loop_kind: lk,
            coupled_updates: false,
        },
        "s-local-svrg" => {
            let q = mc.q.or(p_for_defaults).ok_or_else(|| {
                Error::Config("s-local-svrg needs q (or a Bernoulli p to default from)".into())
            })?;
            MethodSpec {
                estimator: EstimatorKind::GlobalAnchorSvrg { q },
                shift: ShiftKind::Learned {
                    rho_prime: q,
                    source: ShiftSource::AnchorFull,
                },
                loop_kind: lk,
                coupled_updates: true,
            }
        }
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    };
    if let Some(c) = mc.coupled_updates {
        spec.coupled_updates = c;
    }
    spec.validate(problem)?;
    Ok(spec)
}

fn describe_loop(lk: LoopKind) -> (String, String) {
    match lk {
        LoopKind::Fixed { tau } => ("fixed".into(), format!("tau={tau}")),
        LoopKind::Bernoulli { p } => ("bernoulli".into(), format!("p={p}")),
    }
}

fn describe_spec(spec: &MethodSpec) -> Vec<(String, String)> {
    let mut kv = Vec::new();
    let (est, extra) = match spec.estimator {
        EstimatorKind::FullGradient => ("full_gradient".to_string(), None),
        EstimatorKind::UniformSample => ("uniform_sample".to_string(), None),
        EstimatorKind::NoisyGradient { variance } => (
            "noisy_gradient".to_string(),
            Some(("noise_variance".to_string(), format!("{variance:.16e}"))),
        ),
        EstimatorKind::Lsvrg { q, .. } => {
            ("lsvrg".to_string(), Some(("q".to_string(), format!("{q}"))))
        }
        EstimatorKind::StarSvrg => ("star_svrg".to_string(), None),
        EstimatorKind::GlobalAnchorSvrg { q } => (
            "global_anchor_svrg".to_string(),
            Some(("q".to_string(), format!("{q}"))),
        ),
    };
    kv.push(("estimator".to_string(), est));
    if let Some(e) = extra {
        kv.push(e);
    }
    let shift = match spec.shift {
        ShiftKind::None => "none".to_string(),
        ShiftKind::Star => "star".to_string(),
        ShiftKind::Learned { rho_prime, source } => {
            kv.push(("rho_prime".to_string(), format!("{rho_prime}")));
            match source {
                ShiftSource::CurrentStochastic => "learned_current".to_string(),
                ShiftSource::AnchorStochastic { r } => {
                    kv.push(("r".to_string(), format!("{r}")));
                    "learned_anchor_stochastic".to_string()
                }
                ShiftSource::AnchorFull => "learned_anchor_full".to_string(),
            }
        }
    };
    kv.push(("shift".to_string(), shift));
    let (lname, lparam) = describe_loop(spec.loop_kind);
    kv.push(("loop".to_string(), lname));
    let (k, v) = lparam.split_once('=').expect("formatted above");
    kv.push((k.to_string(), v.to_string()));
    kv.push((
        "coupled_updates".to_string(),
        format!("{}", spec.coupled_updates),
    ));
    kv
}

/// The sidecar carries every number needed to re-derive gamma_max through
/// the parameter algebra, bit-for-bit.
pub fn sidecar_text(
    spec: &MethodSpec,
    pc: &ProblemConstants,
    regime: DataRegime,
    gamma: f64,
    eta: f64,
    seed: u64,
    epsilon: f64,
    rb: Option<&theory::RateBound>,
    gamma_max: f64,
) -> String {
    let mut out = String::new();
    for (k, v) in describe_spec(spec) {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = writeln!(out, "seed={seed}");
    let _ = writeln!(out, "gamma={gamma:.16e}");
    let _ = writeln!(out, "eta_weight={eta:.16e}");
    let _ = writeln!(out, "n={}", pc.n);
    let _ = writeln!(out, "m={}", pc.m);
    let _ = writeln!(out, "mu={:.16e}", pc.mu);
    let _ = writeln!(out, "L={:.16e}", pc.l);
    let _ = writeln!(out, "max_lij={:.16e}", pc.max_lij);
    let _ = writeln!(out, "zeta_star_sq={:.16e}", pc.zeta_star_sq);
    let _ = writeln!(out, "sigma_star_sq={:.16e}", pc.sigma_star_sq);
    let regime_s = match regime {
        DataRegime::Heterogeneous => "heterogeneous".to_string(),
        DataRegime::ZetaHeterogeneous { zeta_sq } => format!("zeta_heterogeneous:{zeta_sq:.16e}"),
    };
    let _ = writeln!(out, "data_regime={regime_s}");
    let _ = writeln!(out, "gamma_max={gamma_max:.16e}");
    if let Some(rb) = rb {
        let _ = writeln!(out, "theta={:.16e}", rb.theta);
        let _ = writeln!(out, "phi0={:.16e}", rb.phi0);
        let _ = writeln!(out, "psi0={:.16e}", rb.psi0);
        let _ = writeln!(out, "epsilon={epsilon:.16e}");
        match rb.predicted_k(epsilon) {
            PredictedK::Iterations(k) => {
                let _ = writeln!(out, "predicted_k={k}");
            }
            PredictedK::Unreachable => {
                let _ = writeln!(out, "predicted_k=unreachable");
            }
        }
    }
    out
}

/// Parse a sidecar back into the inputs of the parameter algebra; used by
/// the idempotence check and by tooling.
pub fn parse_sidecar(text: &str) -> Result<(MethodSpec, ProblemConstants, DataRegime)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| Error::Config(format!("sidecar missing `{k}`")))
    };
    let fget = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("sidecar bad number for `{k}`")))
    };
    let uget = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("sidecar bad integer for `{k}`")))
    };
    let estimator = match get("estimator")?.as_str() {
        "full_gradient" => EstimatorKind::FullGradient,
        "uniform_sample" => EstimatorKind::UniformSample,
        "noisy_gradient" => EstimatorKind::NoisyGradient {
            variance: fget("noise_variance")?,
        },
        "lsvrg" => EstimatorKind::Lsvrg {
            q: fget("q")?,
            per_client_anchor: true,
        },
        "star_svrg" => EstimatorKind::StarSvrg,
        "global_anchor_svrg" => EstimatorKind::GlobalAnchorSvrg { q: fget("q")? },
        other => return Err(Error::Config(format!("sidecar estimator `{other}`"))),
    };
    let shift = match get("shift")?.as_str() {
        "none" => ShiftKind::None,
        "star" => ShiftKind::Star,
        "learned_current" => ShiftKind::Learned {
            rho_prime: fget("rho_prime")?,
            source: ShiftSource::CurrentStochastic,
        },
        "learned_anchor_stochastic" => ShiftKind::Learned {
            rho_prime: fget("rho_prime")?,
            source: ShiftSource::AnchorStochastic {
                r: uget("r")? as usize,
            },
        },
        "learned_anchor_full" => ShiftKind::Learned {
            rho_prime: fget("rho_prime")?,
            source: ShiftSource::AnchorFull,
        },
        other => return Err(Error::Config(format!("sidecar shift `{other}`"))),
    };
    let loop_kind = match get("loop")?.as_str() {
        "fixed" => LoopKind::Fixed {
            tau: uget("tau")? as usize,
        },
        "bernoulli" => LoopKind::Bernoulli { p: fget("p")? },
        other => return Err(Error::Config(format!("sidecar loop `{other}`"))),
    };
    let spec = MethodSpec {
        estimator,
        shift,
        loop_kind,
        coupled_updates: get("coupled_updates")?.parse().unwrap_or(false),
    };
    let pc = ProblemConstants {
        n: uget("n")? as usize,
        m: uget("m")? as usize,
        mu: fget("mu")?,
        l: fget("L")?,
        max_lij: fget("max_lij")?,
        zeta_star_sq: fget("zeta_star_sq")?,
        sigma_star_sq: fget("sigma_star_sq")?,
    };
    let regime = match get("data_regime")?.as_str() {
        "heterogeneous" => DataRegime::Heterogeneous,
        s if s.starts_with("zeta_heterogeneous:") => DataRegime::ZetaHeterogeneous {
            zeta_sq: s["zeta_heterogeneous:".len()..]
                .parse()
                .map_err(|_| Error::Config("sidecar bad zeta_sq".into()))?,
        },
        other => return Err(Error::Config(format!("sidecar regime `{other}`"))),
    };
    Ok((spec, pc, regime))
}

/// Re-derive the stepsize bound from sidecar constants alone.
pub fn gamma_max_from_sidecar(text: &str) -> Result<f64> {
    let (spec, pc, regime) = parse_sidecar(text)?;
    let kp = theory::key_params_from_constants(&spec, &pc)?;
    let lp = theory::loop_params(&kp, spec.loop_kind, regime, pc.mu)?;
    Ok(theory::max_stepsize(&kp, &lp, pc.l))
}

struct ResolvedRun {
    problem: GlobalProblem,
    spec: MethodSpec,
    gamma: f64,
    eta: f64,
    regime: DataRegime,
    pc: ProblemConstants,
    gamma_max: f64,
}

fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedRun> {
    let problem = cfg.build_problem()?;
    let spec = cfg.build_method(&problem)?;
    let regime = cfg.data_regime()?;
    let pc = ProblemConstants::of(&problem)?;
    let kp = theory::key_params_from_constants(&spec, &pc)?;
    let lp = theory::loop_params(&kp, spec.loop_kind, regime, pc.mu)?;
    let gamma_max = theory::max_stepsize(&kp, &lp, pc.l);
    let gamma = match &cfg.method.gamma {
        GammaConfig::Value(v) => *v,
        GammaConfig::Keyword(s) if s == "theory" => gamma_max,
        GammaConfig::Keyword(other) => {
            return Err(Error::Config(format!("unknown gamma keyword `{other}`")))
        }
    };
    let eta = (gamma * problem.mu).min(kp.rho / 4.0);
    Ok(ResolvedRun {
        problem,
        spec,
        gamma,
        eta,
        regime,
        pc,
        gamma_max,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn run_one_seed(
    rr: &ResolvedRun,
    cfg: &ExperimentConfig,
    gamma: f64,
    seed: u64,
    out_csv: &Path,
) -> Result<Trajectory> {
    let mut rc = RunConfig::new(rr.spec, gamma, cfg.run.iterations, rr.problem.d, seed);
    rc.eta_weight = rr.eta;
    rc.record_every = cfg.run.record_every;
    rc.record_comms = cfg.run.record_comms;
    rc.target_gap = cfg.run.target_gap;
    rc.threads = cfg.run.threads;
    let traj = engine::run(&rc, &rr.problem)?;
    ensure_parent(out_csv)?;
    std::fs::write(out_csv, traj.to_csv())?;
    let x0 = vec![0.0; rr.problem.d];
    let sigma0 = theory::sigma0_sq(&rr.spec, &rr.problem, &x0)?;
    let dist0 = crate::vecops::dist_sq(
        &x0,
        &rr.problem.optimum.as_ref().expect("run needs optimum").x,
    );
    let kp = theory::key_params_from_constants(&rr.spec, &rr.pc)?;
    let lp = theory::loop_params(&kp, rr.spec.loop_kind, rr.regime, rr.pc.mu)?;
    let rb = theory::rate_bound(&kp, &lp, gamma, rr.pc.mu, sigma0, dist0);
    let meta = sidecar_text(
        &rr.spec,
        &rr.pc,
        rr.regime,
        gamma,
        rr.eta,
        seed,
        cfg.theory.epsilon,
        Some(&rb),
        rr.gamma_max,
    );
    std::fs::write(out_csv.with_extension("meta"), meta)?;
    Ok(traj)
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let rr = resolve(cfg)?;
    for &seed in &cfg.run.seeds {
        let out = PathBuf::from(format!("{}_s{seed}.csv", cfg.run.output));
        let traj = run_one_seed(&rr, cfg, rr.gamma, seed, &out)?;
        let last = traj.samples.last().expect("at least the initial row");
        println!(
            "seed {seed}: k={} comm_rounds={} f_gap_virtual={:.6e} f_gap_avg={:.6e} -> {}",
            last.k,
            last.comm_rounds,
            last.f_gap_virtual,
            last.f_gap_avg,
            out.display()
        );
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep subcommand needs a sweep block".into()))?;
    if !sweep.taus.is_empty() && !sweep.ps.is_empty() {
        return Err(Error::Config("sweep over taus or ps, not both".into()));
    }
    let gammas: Vec<GammaConfig> = if sweep.gammas.is_empty() {
        vec![cfg.method.gamma.clone()]
    } else {
        sweep
            .gammas
            .iter()
            .map(|&g| GammaConfig::Value(g))
            .collect()
    };
    let mut cells: Vec<(GammaConfig, Option<usize>, Option<f64>)> = Vec::new();
    if sweep.taus.is_empty() && sweep.ps.is_empty() {
        for g in &gammas {
            cells.push((g.clone(), cfg.method.tau, cfg.method.p));
        }
    } else {
        for g in &gammas {
            for &t in &sweep.taus {
                cells.push((g.clone(), Some(t), None));
            }
            for &p in &sweep.ps {
                cells.push((g.clone(), None, Some(p)));
            }
        }
    }
    let mut index = String::from("gamma,tau,p,seed,file\n");
    for (g, tau, p) in &cells {
        let mut cell_cfg = cfg.clone();
        cell_cfg.method.gamma = g.clone();
        cell_cfg.method.tau = *tau;
        cell_cfg.method.p = *p;
        cell_cfg.validate()?;
        let rr = resolve(&cell_cfg)?;
        let gtag = match g {
            GammaConfig::Value(v) => format!("{v}"),
            GammaConfig::Keyword(_) => "theory".to_string(),
        };
        let ltag = match (tau, p) {
            (Some(t), _) => format!("t{t}"),
            (_, Some(p)) => format!("p{p}"),
            _ => "l".to_string(),
        };
        for &seed in &cfg.run.seeds {
            let file = format!("{}_g{gtag}_{ltag}_s{seed}.csv", cfg.run.output);
            let out = PathBuf::from(&file);
            run_one_seed(&rr, &cell_cfg, rr.gamma, seed, &out)?;
            let _ = writeln!(
                index,
                "{gtag},{},{},{seed},{file}",
                tau.map(|t| t.to_string()).unwrap_or_default(),
                p.map(|p| p.to_string()).unwrap_or_default()
            );
            println!("wrote {file}");
        }
    }
    let index_path = PathBuf::from(format!("{}_index.csv", cfg.run.output));
    ensure_parent(&index_path)?;
    std::fs::write(&index_path, index)?;
    println!("index: {}", index_path.display());
    Ok(())
}

fn cmd_theory(cfg: &ExperimentConfig) -> Result<()> {
    let rr = resolve(cfg)?;
    let kp = theory::key_params_from_constants(&rr.spec, &rr.pc)?;
    let lp = theory::loop_params(&kp, rr.spec.loop_kind, rr.regime, rr.pc.mu)?;
    let x0 = vec![0.0; rr.problem.d];
    let sigma0 = theory::sigma0_sq(&rr.spec, &rr.problem, &x0)?;
    let dist0 = crate::vecops::dist_sq(
        &x0,
        &rr.problem.optimum.as_ref().expect("theory needs optimum").x,
    );
    let rb = theory::rate_bound(&kp, &lp, rr.gamma, rr.pc.mu, sigma0, dist0);
    println!("derived constants");
    println!("  A   = {:.6e}   A' = {:.6e}", kp.a, kp.a_prime);
    println!("  B   = {:.6e}   B' = {:.6e}", kp.b, kp.b_prime);
    println!("  F   = {:.6e}   F' = {:.6e}", kp.f, kp.f_prime);
    println!("  D1  = {:.6e}   D1' = {:.6e}", kp.d1, kp.d1_prime);
    println!(
        "  C   = {:.6e}   G  = {:.6e}   D2 = {:.6e}",
        kp.c, kp.g, kp.d2
    );
    println!("  rho = {:.6e}", kp.rho);
    println!(
        "  H coeff = {:.6e}  D3 = {:.6e} + {:.6e}/gamma",
        lp.h_coeff, lp.d3_const, lp.d3_over_gamma
    );
    println!("stepsize");
    println!("  gamma_max = {:.12e}", rr.gamma_max);
    println!("  gamma     = {:.12e}", rr.gamma);
    println!("bound at gamma");
    println!("  theta = {:.12}", rb.theta);
    println!("  Phi0  = {:.6e}", rb.phi0);
    println!("  Psi0  = {:.6e}", rb.psi0);
    match rb.predicted_k(cfg.theory.epsilon) {
        PredictedK::Iterations(k) => {
            println!("  K({:.1e}) = {k}", cfg.theory.epsilon)
        }
        PredictedK::Unreachable => println!(
            "  K({:.1e}) = unreachable (gamma Psi0 floor too high)",
            cfg.theory.epsilon
        ),
    }
    // machine-readable block
    print!(
        "{}",
        sidecar_text(
            &rr.spec,
            &rr.pc,
            rr.regime,
            rr.gamma,
            rr.eta,
            0,
            cfg.theory.epsilon,
            Some(&rb),
            rr.gamma_max,
        )
    );
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig) -> Result<bool> {
    let rr = resolve(cfg)?;
    let kp = theory::key_params_from_constants(&rr.spec, &rr.pc)?;
    let gamma = rr.gamma.min(rr.gamma_max);
    let snaps =
        verify::trajectory_snapshots(&rr.spec, &rr.problem, gamma, 2_000, 10, cfg.run.seeds[0])?;
    let mut reports = vec![
        verify::finite_difference_audit(&rr.problem, 20, 3)?,
        verify::check_unbiasedness(
            &rr.spec,
            &rr.problem,
            snaps.last().expect("snapshots"),
            20_000,
            5,
        )?,
        verify::check_second_moment(&rr.spec, &rr.problem, &kp, &snaps, 2_000, 7)?,
    ];
    reports.push(verify::check_parallel_sgd_reduction(
        &rr.spec,
        &rr.problem,
        gamma,
        1_000,
        cfg.run.seeds[0],
    )?);
    let mut all_ok = true;
    println!(
        "{:<28} {:>8} {:>14} {:>14} {:>12}",
        "check", "status", "observed", "bound", "samples"
    );
    for r in &reports {
        let status = if r.skipped {
            "skip"
        } else if r.passed {
            "pass"
        } else {
            "FAIL"
        };
        println!(
            "{:<28} {:>8} {:>14.6e} {:>14.6e} {:>12}",
            r.name, status, r.observed, r.bound, r.samples
        );
        println!(
            "check.{}={} observed={:.16e} bound={:.16e}",
            r.name.replace(' ', "_"),
            status,
            r.observed,
            r.bound
        );
        all_ok &= r.passed;
    }
    Ok(all_ok)
}

fn cmd_info(dataset: &Path, n: Option<usize>, mode: PartitionMode, seed: u64) -> Result<()> {
    let ds = data::parse_libsvm_file(dataset)?;
    let pos = ds.rows.iter().filter(|r| r.label > 0.0).count();
    println!("dataset={}", dataset.display());
    println!("datapoints={}", ds.count());
    println!("d={}", ds.dim);
    println!("positive={pos}");
    println!("negative={}", ds.count() - pos);
    if let Some(n) = n {
        let part = data::partition(&ds, n, mode, seed)?;
        println!("n={n}");
        println!("m={}", part.m);
        println!("dropped={}", ds.count() - n * part.m);
        for (i, shard) in part.shards.iter().enumerate() {
            let pos = shard.iter().filter(|&&r| ds.rows[r].label > 0.0).count();
            println!(
                "shard{i}.positive={pos} shard{i}.negative={}",
                shard.len() - pos
            );
        }
    }
    Ok(())
}

/// Build a config from `theory`/`verify` quick flags like
/// `--preset s-local-svrg --quadratic n=10,m=20,d=30,mu=1e-3`.
fn quick_config(args: &[String]) -> Result<ExperimentConfig> {
    let mut preset = None;
    let mut quadratic = None;
    let mut tau = None;
    let mut p = None;
    let mut q = None;
    let mut r = None;
    let mut noise = None;
    let mut estimator = None;
    let mut gamma = GammaConfig::Keyword("theory".into());
    let mut epsilon = default_epsilon();
    let mut regime = None;
    let mut zeta_sq = None;
    let mut i = 0;
    let take = |args: &[String], i: &mut usize, flag: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--preset" => preset = Some(take(args, &mut i, "--preset")?),
            "--quadratic" => quadratic = Some(take(args, &mut i, "--quadratic")?),
            "--tau" => {
                tau = Some(
                    take(args, &mut i, "--tau")?
                        .parse()
                        .map_err(|_| Error::Config("--tau needs an integer".into()))?,
                )
            }
            "--p" => {
                p = Some(
                    take(args, &mut i, "--p")?
                        .parse()
                        .map_err(|_| Error::Config("--p needs a number".into()))?,
                )
            }
            "--q" => {
                q = Some(
                    take(args, &mut i, "--q")?
                        .parse()
                        .map_err(|_| Error::Config("--q needs a number".into()))?,
                )
            }
            "--r" => {
                r = Some(
                    take(args, &mut i, "--r")?
                        .parse()
                        .map_err(|_| Error::Config("--r needs an integer".into()))?,
                )
            }
            "--noise-variance" => {
                noise = Some(
                    take(args, &mut i, "--noise-variance")?
                        .parse()
                        .map_err(|_| Error::Config("--noise-variance needs a number".into()))?,
                )
            }
            "--estimator" => estimator = Some(take(args, &mut i, "--estimator")?),
            "--gamma" => {
                let v = take(args, &mut i, "--gamma")?;
                gamma =
                    if v == "theory" {
                        GammaConfig::Keyword(v)
                    } else {
                        GammaConfig::Value(v.parse().map_err(|_| {
                            Error::Config("--gamma needs a number or `theory`".into())
                        })?)
                    };
            }
            "--epsilon" => {
                epsilon = take(args, &mut i, "--epsilon")?
                    .parse()
                    .map_err(|_| Error::Config("--epsilon needs a number".into()))?
            }
            "--regime" => regime = Some(take(args, &mut i, "--regime")?),
            "--zeta-sq" => {
                zeta_sq = Some(
                    take(args, &mut i, "--zeta-sq")?
                        .parse()
                        .map_err(|_| Error::Config("--zeta-sq needs a number".into()))?,
                )
            }
            other => return Err(Error::Config(format!("unknown flag `{other}`"))),
        }
        i += 1;
    }
    let preset = preset.ok_or_else(|| Error::Config("--preset is required".into()))?;
    let quad = quadratic
        .ok_or_else(|| Error::Config("--quadratic n=..,m=..,d=..,mu=.. required".into()))?;
    let mut n = None;
    let mut m = None;
    let mut d = None;
    let mut mu = None;
    let mut seed = 0u64;
    for kv in quad.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad --quadratic entry `{kv}`")))?;
        match k {
            "n" => n = Some(v.parse().map_err(|_| Error::Config("bad n".into()))?),
            "m" => m = Some(v.parse().map_err(|_| Error::Config("bad m".into()))?),
            "d" => d = Some(v.parse().map_err(|_| Error::Config("bad d".into()))?),
            "mu" => mu = Some(v.parse().map_err(|_| Error::Config("bad mu".into()))?),
            "seed" => seed = v.parse().map_err(|_| Error::Config("bad seed".into()))?,
            other => return Err(Error::Config(format!("unknown quadratic key `{other}`"))),
        }
    }
    let (tau, p) = match (tau, p) {
        (None, None) => match preset.as_str() {
            "ss-local-sgd" | "s-local-svrg" => (None, Some(0.1)),
            _ => (Some(10), None),
        },
        pair => pair,
    };
    let cfg = ExperimentConfig {
        problem: ProblemConfig::Quadratic {
            n: n.ok_or_else(|| Error::Config("--quadratic needs n".into()))?,
            m: m.ok_or_else(|| Error::Config("--quadratic needs m".into()))?,
            d: d.ok_or_else(|| Error::Config("--quadratic needs d".into()))?,
            mu: mu.ok_or_else(|| Error::Config("--quadratic needs mu".into()))?,
            seed,
            identical: false,
        },
        method: MethodConfig {
            preset,
            gamma,
            tau,
            p,
            q,
            r,
            noise_variance: noise,
            estimator,
            coupled_updates: None,
        },
        run: RunBlock {
            iterations: 1000,
            seeds: vec![0],
            record_every: 1,
            output: "fedsim_out".into(),
            record_comms: true,
            target_gap: None,
            threads: 1,
        },
        theory: TheoryBlock {
            epsilon,
            data_regime: regime,
            zeta_sq,
        },
        sweep: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn config_or_quick(args: &[String]) -> Result<ExperimentConfig> {
    if args.len() >= 2 && args[0] == "--config" {
        load_config(Path::new(&args[1]))
    } else {
        quick_config(args)
    }
}

const USAGE: &str = "usage: fedsim <subcommand> [flags]

subcommands:
  run    --config <file.json>            execute trajectories, write CSV + sidecar
  sweep  --config <file.json>            cross the sweep grid, one CSV per cell
  theory --config <file.json> | --preset <name> --quadratic n=..,m=..,d=..,mu=..
                                          print derived constants and bounds
  verify --config <file.json> | --preset ... --quadratic ...
                                          run the empirical assumption checks
  info   --dataset <file> [--n <N>] [--mode random|label_sorted] [--seed <s>]

exit codes: 0 ok, 1 configuration error, 2 divergence abort, 3 verification failure";

pub fn main(argv: Vec<String>) -> i32 {
    let args: Vec<String> = argv.into_iter().skip(1).collect();
    let Some(sub) = args.first() else {
        eprintln!("{USAGE}");
        return EXIT_CONFIG;
    };
    let rest = &args[1..];
    let outcome: Result<i32> = match sub.as_str() {
        "run" => config_or_quick(rest).and_then(|cfg| cmd_run(&cfg).map(|_| EXIT_OK)),
        "sweep" => config_or_quick(rest).and_then(|cfg| cmd_sweep(&cfg).map(|_| EXIT_OK)),
        "theory" => config_or_quick(rest).and_then(|cfg| cmd_theory(&cfg).map(|_| EXIT_OK)),
        "verify" => config_or_quick(rest)
            .and_then(|cfg| cmd_verify(&cfg).map(|ok| if ok { EXIT_OK } else { EXIT_VERIFY })),
        "info" => {
            let mut dataset = None;
            let mut n = None;
            let mut mode = PartitionMode::Random;
            let mut seed = 0u64;
            let mut i = 0;
            let mut err = None;
            while i < rest.len() {
                match rest[i].as_str() {
                    "--dataset" if i + 1 < rest.len() => {
                        dataset = Some(rest[i + 1].clone());
                        i += 1;
                    }
                    "--n" if i + 1 < rest.len() => {
                        n = rest[i + 1].parse().ok();
                        i += 1;
                    }
                    "--mode" if i + 1 < rest.len() => {
                        mode = match rest[i + 1].as_str() {
                            "random" => PartitionMode::Random,
                            "label_sorted" => PartitionMode::LabelSorted,
                            other => {
                                err = Some(format!("unknown mode `{other}`"));
                                break;
                            }
                        };
                        i += 1;
                    }
                    "--seed" if i + 1 < rest.len() => {
                        seed = rest[i + 1].parse().unwrap_or(0);
                        i += 1;
                    }
                    other => {
                        err = Some(format!("unknown flag `{other}`"));
                        break;
                    }
                }
                i += 1;
            }
            match (err, dataset) {
                (Some(e), _) => Err(Error::Config(e)),
                (None, None) => Err(Error::Config("--dataset is required".into())),
                (None, Some(ds)) => cmd_info(Path::new(&ds), n, mode, seed).map(|_| EXIT_OK),
            }
        }
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(EXIT_OK)
        }
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    };
    match outcome {
        Ok(code) => code,
        Err(Error::Divergence { k }) => {
            eprintln!("error: divergence detected at iteration {k}");
            EXIT_DIVERGENCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_quadratic_config() -> &'static str {
        r#"{
            "problem": {"kind": "quadratic", "n": 3, "m": 2, "d": 5, "mu": 0.1, "seed": 1},
            "method": {"preset": "local-svrg", "gamma": 0.05, "tau": 4},
            "run": {"iterations": 10, "output": "out/test"}
        }"#
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(minimal_quadratic_config()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.run.seeds, vec![0]);
        assert_eq!(cfg.run.record_every, 1);
        assert!(cfg.run.record_comms);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{
            "problem": {"kind": "quadratic", "n": 3, "m": 2, "d": 5, "mu": 0.1, "bogus": 1},
            "method": {"preset": "local-svrg", "gamma": 0.05, "tau": 4},
            "run": {"iterations": 10, "output": "x"}
        }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn both_loop_parameters_are_rejected() {
        let text = r#"{
            "problem": {"kind": "quadratic", "n": 3, "m": 2, "d": 5, "mu": 0.1},
            "method": {"preset": "local-svrg", "gamma": 0.05, "tau": 4, "p": 0.1},
            "run": {"iterations": 10, "output": "x"}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_serde() {
        let cfg: ExperimentConfig = serde_json::from_str(minimal_quadratic_config()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_dataset_path_is_a_config_error() {
        let text = r#"{
            "problem": {"kind": "logistic", "dataset": "/nonexistent/file.svm", "n": 4, "mu": 1e-4},
            "method": {"preset": "local-sgd", "gamma": 0.1, "tau": 4},
            "run": {"iterations": 10, "output": "x"}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/file.svm"));
    }

    #[test]
    fn presets_resolve_to_expected_specs() {
        let p = data::make_quadratic(&QuadraticSpec {
            n: 4,
            m: 8,
            d: 10,
            mu: 1e-2,
            seed: 2,
        })
        .unwrap();
        let mc = MethodConfig {
            preset: "s-local-svrg".into(),
            gamma: GammaConfig::Value(0.01),
            tau: None,
            p: Some(0.1),
            q: Some(0.1),
            r: None,
            noise_variance: None,
            estimator: None,
            coupled_updates: None,
        };
        let spec = build_method_spec(&mc, &p).unwrap();
        assert_eq!(spec.estimator, EstimatorKind::GlobalAnchorSvrg { q: 0.1 });
        assert!(spec.coupled_updates);

        let mc = MethodConfig {
            preset: "local-svrg".into(),
            gamma: GammaConfig::Value(0.01),
            tau: Some(5),
            p: None,
            q: None,
            r: None,
            noise_variance: None,
            estimator: None,
            coupled_updates: None,
        };
        let spec = build_method_spec(&mc, &p).unwrap();
        assert_eq!(
            spec.estimator,
            EstimatorKind::Lsvrg {
                q: 1.0 / 8.0,
                per_client_anchor: true
            }
        );
    }

    #[test]
    fn quick_flags_build_a_valid_theory_config() {
        let args: Vec<String> = [
            "--preset",
            "s-local-svrg",
            "--quadratic",
            "n=10,m=20,d=30,mu=1e-3",
            "--p",
            "0.1",
            "--q",
            "0.1",
            "--epsilon",
            "1e-10",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let cfg = quick_config(&args).unwrap();
        assert_eq!(cfg.method.preset, "s-local-svrg");
        assert_eq!(cfg.method.p, Some(0.1));
        let problem = cfg.build_problem().unwrap();
        let spec = cfg.build_method(&problem).unwrap();
        let pc = ProblemConstants::of(&problem).unwrap();
        let kp = theory::key_params_from_constants(&spec, &pc).unwrap();
        let lp =
            theory::loop_params(&kp, spec.loop_kind, DataRegime::Heterogeneous, pc.mu).unwrap();
        let gamma = theory::max_stepsize(&kp, &lp, pc.l);
        let rb = theory::rate_bound(&kp, &lp, gamma, pc.mu, 0.0, 1.0);
        assert!(rb.theta < 1.0);
        assert_eq!(rb.psi0, 0.0, "exact preset has no residual neighborhood");
        assert!(quick_config(&["--preset".to_string()]).is_err());
        assert!(quick_config(&["--bogus".to_string()]).is_err());
    }

    #[test]
    fn sidecar_round_trip_rederives_gamma_max() {
        let p = data::make_quadratic(&QuadraticSpec {
            n: 5,
            m: 4,
            d: 8,
            mu: 1e-3,
            seed: 7,
        })
        .unwrap();
        let spec = MethodSpec::s_local_svrg(0.2, 0.2);
        let pc = ProblemConstants::of(&p).unwrap();
        let kp = theory::key_params_from_constants(&spec, &pc).unwrap();
        let lp =
            theory::loop_params(&kp, spec.loop_kind, DataRegime::Heterogeneous, pc.mu).unwrap();
        let gamma_max = theory::max_stepsize(&kp, &lp, pc.l);
        let text = sidecar_text(
            &spec,
            &pc,
            DataRegime::Heterogeneous,
            gamma_max,
            0.0,
            0,
            1e-8,
            None,
            gamma_max,
        );
        let re = gamma_max_from_sidecar(&text).unwrap();
        assert_eq!(re, gamma_max, "sidecar must re-derive the bound exactly");
    }

    use crate::data::QuadraticSpec;
}
