//! Local direction construction: estimator minus shift, plus the
//! communication schedulers.
//!
//! Every worker direction is `g_i = a_i - b_i` where `a_i` is an unbiased
//! estimator of the local gradient at the worker's iterate and `b_i` is a
//! shift that sums to zero across workers. Anchored estimators cache the
//! per-component scalars and the full gradient at their anchor point, so a
//! direction draw costs two component evaluations regardless of `m`.

use crate::error::{Error, Result};
use crate::problems::GlobalProblem;
use crate::rng::{StreamKind, StreamRng};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    /// Exact local gradient.
    FullGradient,
    /// One component sampled uniformly from the local finite sum.
    UniformSample,
    /// Exact local gradient plus isotropic Gaussian noise with
    /// `E|noise|^2 = variance` (realizes the uniformly-bounded-variance
    /// oracle with a known constant).
    NoisyGradient { variance: f64 },
    /// Variance-reduced component difference around a lazily refreshed
    /// anchor; `per_client_anchor` keeps one anchor per worker, otherwise
    /// the shared anchor point is used.
    Lsvrg { q: f64, per_client_anchor: bool },
    /// Component difference anchored at the known optimum.
    StarSvrg,
    /// Component difference around the shared anchor refreshed with
    /// probability `q` to the current virtual iterate.
    GlobalAnchorSvrg { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftSource {
    /// Reuse the estimator draw itself as the delayed gradient.
    CurrentStochastic,
    /// Fresh batch of `r` stochastic gradients at the shared anchor,
    /// resampled only when the anchor moves.
    AnchorStochastic { r: usize },
    /// Exact local gradient at the shared anchor.
    AnchorFull,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftKind {
    None,
    /// Ideal shift: the local gradient at the optimum.
    Star,
    /// Learned shift h_i updated to the configured source with probability
    /// `rho_prime`, applied as h_i minus the mean over workers.
    Learned {
        rho_prime: f64,
        source: ShiftSource,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopKind {
    Fixed { tau: usize },
    Bernoulli { p: f64 },
}

impl LoopKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LoopKind::Fixed { tau } => {
                if tau < 1 {
                    return Err(Error::Config("tau must be >= 1".into()));
                }
            }
            LoopKind::Bernoulli { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Config("p must lie in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub estimator: EstimatorKind,
    pub shift: ShiftKind,
    pub loop_kind: LoopKind,
    /// When set, anchor and shift refreshes fire exactly at communication
    /// events instead of flipping their own coins.
    pub coupled_updates: bool,
}

impl MethodSpec {
    pub fn local_sgd(estimator: EstimatorKind, tau: usize) -> Self {
        MethodSpec {
            estimator,
            shift: ShiftKind::None,
            loop_kind: LoopKind::Fixed { tau },
            coupled_updates: false,
        }
    }

    pub fn local_svrg(q: f64, tau: usize) -> Self {
        MethodSpec {
            estimator: EstimatorKind::Lsvrg {
                q,
                per_client_anchor: true,
            },
            shift: ShiftKind::None,
            loop_kind: LoopKind::Fixed { tau },
            coupled_updates: false,
        }
    }

    pub fn star_local_sgd(estimator: EstimatorKind, tau: usize) -> Self {
        MethodSpec {
            estimator,
            shift: ShiftKind::Star,
            loop_kind: LoopKind::Fixed { tau },
            coupled_updates: false,
        }
    }

    pub fn ss_local_sgd(estimator: EstimatorKind, p: f64, q: f64, r: usize) -> Self {
        MethodSpec {
            estimator,
            shift: ShiftKind::Learned {
                rho_prime: q,
                source: ShiftSource::AnchorStochastic { r },
            },
            loop_kind: LoopKind::Bernoulli { p },
            coupled_updates: false,
        }
    }

    pub fn star_local_sgd_star(tau: usize) -> Self {
        MethodSpec {
            estimator: EstimatorKind::StarSvrg,
            shift: ShiftKind::Star,
            loop_kind: LoopKind::Fixed { tau },
            coupled_updates: false,
        }
    }

    pub fn s_local_svrg(q: f64, p: f64) -> Self {
        MethodSpec {
            estimator: EstimatorKind::GlobalAnchorSvrg { q },
            shift: ShiftKind::Learned {
                rho_prime: q,
                source: ShiftSource::AnchorFull,
            },
            loop_kind: LoopKind::Bernoulli { p },
            coupled_updates: true,
        }
    }

    pub fn needs_per_client_anchor(&self) -> bool {
        matches!(
            self.estimator,
            EstimatorKind::Lsvrg {
                per_client_anchor: true,
                ..
            }
        )
    }

    pub fn needs_shared_anchor(&self) -> bool {
        matches!(
            self.estimator,
            EstimatorKind::GlobalAnchorSvrg { .. }
                | EstimatorKind::Lsvrg {
                    per_client_anchor: false,
                    ..
                }
        ) || matches!(
            self.shift,
            ShiftKind::Learned {
                source: ShiftSource::AnchorStochastic { .. } | ShiftSource::AnchorFull,
                ..
            }
        )
    }

    pub fn needs_optimum(&self) -> bool {
        matches!(self.estimator, EstimatorKind::StarSvrg) || self.shift == ShiftKind::Star
    }

    pub fn has_learned_shift(&self) -> bool {
        matches!(self.shift, ShiftKind::Learned { .. })
    }

    /// Probability that the shared anchor refreshes on a given iteration
    /// (independent mode).
    fn shared_anchor_prob(&self) -> f64 {
        let est_q = match self.estimator {
            EstimatorKind::GlobalAnchorSvrg { q }
            | EstimatorKind::Lsvrg {
                q,
                per_client_anchor: false,
            } => Some(q),
            _ => None,
        };
        let shift_q = match self.shift {
            ShiftKind::Learned {
                rho_prime,
                source: ShiftSource::AnchorStochastic { .. } | ShiftSource::AnchorFull,
            } => Some(rho_prime),
            _ => None,
        };
        match (est_q, shift_q) {
            (Some(a), Some(_)) => a,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 0.0,
        }
    }

    pub fn validate(&self, problem: &GlobalProblem) -> Result<()> {
        self.loop_kind.validate()?;
        let check_prob = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
            Ok(())
        };
        match self.estimator {
            EstimatorKind::Lsvrg { q, .. } => check_prob("q", q)?,
            EstimatorKind::GlobalAnchorSvrg { q } => {
                check_prob("q", q)?;
                if let LoopKind::Bernoulli { p } = self.loop_kind {
                    if q > p {
                        return Err(Error::Config(
                            "global anchor refresh requires q <= p".into(),
                        ));
                    }
                    if self.coupled_updates && q != p {
                        return Err(Error::Config(
                            "coupled updates synchronize the anchor with communication; set q = p or disable coupling".into(),
                        ));
                    }
                }
            }
            EstimatorKind::NoisyGradient { variance } => {
                if variance < 0.0 {
                    return Err(Error::Config("noise variance must be >= 0".into()));
                }
            }
            _ => {}
        }
        match self.shift {
            ShiftKind::Learned { rho_prime, source } => {
                check_prob("rho_prime", rho_prime)?;
                if let ShiftSource::AnchorStochastic { r } = source {
                    if r < 1 {
                        return Err(Error::Config("shift batch size r must be >= 1".into()));
                    }
                    if matches!(
                        self.estimator,
                        EstimatorKind::Lsvrg { .. }
                            | EstimatorKind::StarSvrg
                            | EstimatorKind::GlobalAnchorSvrg { .. }
                    ) {
                        return Err(Error::Config(
                            "stochastic anchor shifts pair with non-variance-reduced estimators"
                                .into(),
                        ));
                    }
                }
                if self.coupled_updates {
                    if let LoopKind::Bernoulli { p } = self.loop_kind {
                        if rho_prime != p {
                            return Err(Error::Config(
                                "coupled updates tie the shift refresh to communication; set rho_prime = p".into(),
                            ));
                        }
                    }
                }
            }
            ShiftKind::None | ShiftKind::Star => {}
        }
        if self.needs_optimum() && problem.optimum.is_none() {
            return Err(Error::MissingOptimum(
                "star-shifted methods need the exact optimum".into(),
            ));
        }
        Ok(())
    }
}

/// One device's simulation state.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub x: Vec<f64>,
    /// Per-client anchor point (own history), when the estimator keeps one.
    pub anchor: Option<Vec<f64>>,
    /// Component scalar cache at the active anchor point.
    pub anchor_scalars: Vec<f64>,
    /// Full local gradient at the active anchor point.
    pub anchor_grad: Option<Vec<f64>>,
    /// Learned shift memory h_i.
    pub h: Option<Vec<f64>>,
    /// Cached applied shift b_i (h_i minus the worker mean).
    pub b: Option<Vec<f64>>,
    pub rng: StreamRng,
    /// Estimator part a_i of the last drawn direction.
    pub a_buf: Vec<f64>,
    /// Full direction g_i = a_i - b_i of the last draw.
    pub g_buf: Vec<f64>,
}

/// State shared by all workers: the global coin stream, the shared anchor,
/// and immutable optimum-derived caches.
#[derive(Debug, Clone)]
pub struct SharedState {
    pub coin: StreamRng,
    /// Shared anchor point y (virtual iterate snapshot).
    pub y: Option<Vec<f64>>,
    /// Mean of the learned shifts, subtracted from every h_i.
    pub mean_h: Option<Vec<f64>>,
    /// Per-client gradient at the optimum (ideal shifts / star anchors).
    pub star_grads: Option<Vec<Vec<f64>>>,
    /// Per-client component scalars at the optimum.
    pub star_scalars: Option<Vec<Vec<f64>>>,
}

/// Decide whether iteration k ends in a communication. Fixed loops are
/// purely arithmetic; Bernoulli loops consume exactly one shared draw.
pub fn is_communication(loop_kind: LoopKind, k: u64, coin: &mut StreamRng) -> bool {
    match loop_kind {
        LoopKind::Fixed { tau } => (k + 1) % tau as u64 == 0,
        LoopKind::Bernoulli { p } => coin.coin(p),
    }
}

/// Build initial worker and shared state at `x0`, charging initialization
/// gradient work to the returned eval counter.
pub fn init_states(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    x0: &[f64],
    master_seed: u64,
) -> Result<(Vec<WorkerState>, SharedState, u64)> {
    spec.validate(problem)?;
    if x0.len() != problem.d {
        return Err(Error::Dimension {
            expected: problem.d,
            got: x0.len(),
        });
    }
    let n = problem.n;
    let d = problem.d;
    let mut evals = 0u64;

    let (star_grads, star_scalars) = if spec.needs_optimum() {
        let x_star = &problem.optimum.as_ref().expect("validated").x;
        let grads = problem.star_shifts()?;
        let scalars = (0..n)
            .map(|i| {
                let mut s = Vec::new();
                problem.component_scalars_at(i, x_star, &mut s);
                s
            })
            .collect();
        (Some(grads), Some(scalars))
    } else {
        (None, None)
    };

    let mut shared = SharedState {
        coin: StreamRng::new(master_seed, StreamKind::SharedCoin),
        y: spec.needs_shared_anchor().then(|| x0.to_vec()),
        mean_h: None,
        star_grads,
        star_scalars,
    };

    let mut states: Vec<WorkerState> = (0..n)
        .map(|i| WorkerState {
            x: x0.to_vec(),
            anchor: spec.needs_per_client_anchor().then(|| x0.to_vec()),
            anchor_scalars: Vec::new(),
            anchor_grad: None,
            h: None,
            b: None,
            rng: StreamRng::new(master_seed, StreamKind::Worker(i as u32)),
            a_buf: vec![0.0; d],
            g_buf: vec![0.0; d],
        })
        .collect();

    // anchor caches
    match spec.estimator {
        EstimatorKind::Lsvrg {
            per_client_anchor: true,
            ..
        } => {
            for (i, st) in states.iter_mut().enumerate() {
                refresh_anchor_caches(problem, i, x0, st);
                evals += problem.m as u64;
            }
        }
        EstimatorKind::Lsvrg {
            per_client_anchor: false,
            ..
        }
        | EstimatorKind::GlobalAnchorSvrg { .. } => {
            for (i, st) in states.iter_mut().enumerate() {
                refresh_anchor_caches(problem, i, x0, st);
                evals += problem.m as u64;
            }
        }
        EstimatorKind::StarSvrg => {
            for (i, st) in states.iter_mut().enumerate() {
                st.anchor_scalars = shared.star_scalars.as_ref().expect("star cache")[i].clone();
                st.anchor_grad = Some(shared.star_grads.as_ref().expect("star cache")[i].clone());
            }
        }
        _ => {}
    }

    // learned shift memory
    if let ShiftKind::Learned { source, .. } = spec.shift {
        for (i, st) in states.iter_mut().enumerate() {
            let (h, cost) = initial_shift_value(spec, problem, i, x0, st, source);
            st.h = Some(h);
            evals += cost;
        }
        recompute_shift_means(&mut states, &mut shared);
    }

    Ok((states, shared, evals))
}

fn refresh_anchor_caches(problem: &GlobalProblem, i: usize, point: &[f64], st: &mut WorkerState) {
    let mut scalars = std::mem::take(&mut st.anchor_scalars);
    problem.component_scalars_at(i, point, &mut scalars);
    st.anchor_scalars = scalars;
    let mut g = st
        .anchor_grad
        .take()
        .unwrap_or_else(|| vec![0.0; problem.d]);
    problem.local_grad_into(i, point, &mut g);
    st.anchor_grad = Some(g);
}

fn initial_shift_value(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    i: usize,
    point: &[f64],
    st: &mut WorkerState,
    source: ShiftSource,
) -> (Vec<f64>, u64) {
    match source {
        ShiftSource::AnchorFull => {
            // shared with an anchored estimator's cache when present
            if let Some(g) = &st.anchor_grad {
                (g.clone(), 0)
            } else {
                let mut g = vec![0.0; problem.d];
                problem.local_grad_into(i, point, &mut g);
                (g, problem.m as u64)
            }
        }
        ShiftSource::AnchorStochastic { r } => {
            let h = batch_stochastic_grad(spec, problem, i, point, r, &mut st.rng);
            (h, r as u64)
        }
        ShiftSource::CurrentStochastic => (vec![0.0; problem.d], 0),
    }
}

/// Mean of `r` draws of the base stochastic oracle at `point`.
fn batch_stochastic_grad(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    i: usize,
    point: &[f64],
    r: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let d = problem.d;
    let mut h = vec![0.0; d];
    match spec.estimator {
        EstimatorKind::FullGradient => {
            problem.local_grad_into(i, point, &mut h);
        }
        EstimatorKind::NoisyGradient { variance } => {
            problem.local_grad_into(i, point, &mut h);
            // the mean of r isotropic draws is one draw at variance / r
            let sigma = (variance / (r as f64 * d as f64)).sqrt();
            for hk in h.iter_mut() {
                *hk += sigma * rng.standard_normal();
            }
        }
        EstimatorKind::UniformSample => {
            h.copy_from_slice(point);
            vecops::scale(problem.mu, &mut h);
            let w = 1.0 / r as f64;
            for _ in 0..r {
                let j = rng.uniform_index(problem.m);
                let s = problem.component_scalar(i, j, point);
                problem.add_scaled_row(i, j, s * w, &mut h);
            }
        }
        _ => unreachable!("validated: stochastic anchor shifts pair with non-VR estimators"),
    }
    h
}

/// Recompute every cached b_i = h_i - mean(h). The last worker's shift is
/// closed against the running sum so that the shifts cancel exactly, not
/// just to rounding.
fn recompute_shift_means(states: &mut [WorkerState], shared: &mut SharedState) {
    let n = states.len();
    let d = states[0].x.len();
    let hs: Vec<Vec<f64>> = states
        .iter()
        .map(|s| s.h.clone().expect("learned shift state"))
        .collect();
    let mut mean = shared.mean_h.take().unwrap_or_else(|| vec![0.0; d]);
    vecops::pairwise_mean(&hs, &mut mean);
    let mut running = vec![0.0; d];
    for (i, st) in states.iter_mut().enumerate() {
        let mut b = st.b.take().unwrap_or_else(|| vec![0.0; d]);
        if i + 1 < n {
            for k in 0..d {
                b[k] = hs[i][k] - mean[k];
                running[k] += b[k];
            }
        } else {
            for k in 0..d {
                b[k] = -running[k];
            }
        }
        st.b = Some(b);
    }
    shared.mean_h = Some(mean);
}

/// Draw the local direction for worker `i` at iteration state `st`,
/// filling `st.a_buf` (estimator part) and `st.g_buf` (shifted direction).
/// Returns the number of component-gradient evaluations consumed.
pub fn sample_direction(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    i: usize,
    st: &mut WorkerState,
    shared: &SharedState,
) -> Result<u64> {
    let d = problem.d;
    let mu = problem.mu;
    let evals;
    // estimator part into a_buf
    match spec.estimator {
        EstimatorKind::FullGradient => {
            let mut a = std::mem::take(&mut st.a_buf);
            problem.local_grad_into(i, &st.x, &mut a);
            st.a_buf = a;
            evals = problem.m as u64;
        }
        EstimatorKind::NoisyGradient { variance } => {
            let mut a = std::mem::take(&mut st.a_buf);
            problem.local_grad_into(i, &st.x, &mut a);
            let sigma = (variance / d as f64).sqrt();
            for ak in a.iter_mut() {
                *ak += sigma * st.rng.standard_normal();
            }
            st.a_buf = a;
            evals = problem.m as u64;
        }
        EstimatorKind::UniformSample => {
            let j = st.rng.uniform_index(problem.m);
            let s = problem.component_scalar(i, j, &st.x);
            let mut a = std::mem::take(&mut st.a_buf);
            a.copy_from_slice(&st.x);
            vecops::scale(mu, &mut a);
            problem.add_scaled_row(i, j, s, &mut a);
            st.a_buf = a;
            evals = 1;
        }
        EstimatorKind::Lsvrg { .. } | EstimatorKind::GlobalAnchorSvrg { .. } => {
            let anchor_point: &[f64] = match spec.estimator {
                EstimatorKind::Lsvrg {
                    per_client_anchor: true,
                    ..
                } => st
                    .anchor
                    .as_ref()
                    .ok_or_else(|| Error::MissingState("per-client anchor".into()))?,
                _ => shared
                    .y
                    .as_ref()
                    .ok_or_else(|| Error::MissingState("shared anchor".into()))?,
            };
            let j = st.rng.uniform_index(problem.m);
            let s_x = problem.component_scalar(i, j, &st.x);
            let s_w = st.anchor_scalars[j];
            // a = grad_w + mu (x - w) + (s_x - s_w) a_ij
            let mut a = std::mem::take(&mut st.a_buf);
            {
                let grad_w = st
                    .anchor_grad
                    .as_ref()
                    .ok_or_else(|| Error::MissingState("anchor gradient cache".into()))?;
                a.copy_from_slice(grad_w);
            }
            for k in 0..d {
                a[k] += mu * (st.x[k] - anchor_point[k]);
            }
            problem.add_scaled_row(i, j, s_x - s_w, &mut a);
            st.a_buf = a;
            evals = 2;
        }
        EstimatorKind::StarSvrg => {
            let x_star = &problem
                .optimum
                .as_ref()
                .ok_or_else(|| Error::MissingOptimum("star anchor".into()))?
                .x;
            let j = st.rng.uniform_index(problem.m);
            let s_x = problem.component_scalar(i, j, &st.x);
            let s_w = st.anchor_scalars[j];
            let mut a = std::mem::take(&mut st.a_buf);
            {
                let grad_w = st
                    .anchor_grad
                    .as_ref()
                    .ok_or_else(|| Error::MissingState("star gradient cache".into()))?;
                a.copy_from_slice(grad_w);
            }
            for k in 0..d {
                a[k] += mu * (st.x[k] - x_star[k]);
            }
            problem.add_scaled_row(i, j, s_x - s_w, &mut a);
            st.a_buf = a;
            evals = 1;
        }
    }
    // shifted direction into g_buf
    let mut g = std::mem::take(&mut st.g_buf);
    g.copy_from_slice(&st.a_buf);
    match spec.shift {
        ShiftKind::None => {}
        ShiftKind::Star => {
            let b = &shared
                .star_grads
                .as_ref()
                .ok_or_else(|| Error::MissingOptimum("star shift".into()))?[i];
            for k in 0..d {
                g[k] -= b[k];
            }
        }
        ShiftKind::Learned { .. } => {
            let b =
                st.b.as_ref()
                    .ok_or_else(|| Error::MissingState("learned shift".into()))?;
            for k in 0..d {
                g[k] -= b[k];
            }
        }
    }
    st.g_buf = g;
    Ok(evals)
}

/// Run the end-of-iteration refreshes: per-client anchors flip to the
/// current (pre-step) iterate, the shared anchor flips to the current
/// virtual iterate, and learned shifts absorb their configured source.
/// Must run after all directions are drawn and before iterates move.
/// Returns the gradient evaluations consumed.
pub fn refresh_state(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    states: &mut [WorkerState],
    shared: &mut SharedState,
    virtual_x: &[f64],
    comm_event: bool,
) -> u64 {
    let mut evals = 0u64;
    let m = problem.m as u64;

    // per-client anchors
    if let EstimatorKind::Lsvrg {
        q,
        per_client_anchor: true,
    } = spec.estimator
    {
        for (i, st) in states.iter_mut().enumerate() {
            let fire = if spec.coupled_updates {
                comm_event
            } else {
                st.rng.coin(q)
            };
            if fire {
                let x = st.x.clone();
                st.anchor = Some(x.clone());
                refresh_anchor_caches(problem, i, &x, st);
                evals += m;
            }
        }
    }

    // shared anchor and anchor-sourced shifts move together
    let shared_prob = spec.shared_anchor_prob();
    if shared.y.is_some() && shared_prob > 0.0 {
        let fire = if spec.coupled_updates {
            comm_event
        } else {
            shared.coin.coin(shared_prob)
        };
        if fire {
            shared.y = Some(virtual_x.to_vec());
            let estimator_anchored = matches!(
                spec.estimator,
                EstimatorKind::GlobalAnchorSvrg { .. }
                    | EstimatorKind::Lsvrg {
                        per_client_anchor: false,
                        ..
                    }
            );
            let mut any_h_changed = false;
            for (i, st) in states.iter_mut().enumerate() {
                if estimator_anchored {
                    refresh_anchor_caches(problem, i, virtual_x, st);
                    evals += m;
                }
                match spec.shift {
                    ShiftKind::Learned {
                        source: ShiftSource::AnchorFull,
                        ..
                    } => {
                        let h = if let Some(g) = &st.anchor_grad {
                            if estimator_anchored {
                                g.clone()
                            } else {
                                let mut g = vec![0.0; problem.d];
                                problem.local_grad_into(i, virtual_x, &mut g);
                                evals += m;
                                g
                            }
                        } else {
                            let mut g = vec![0.0; problem.d];
                            problem.local_grad_into(i, virtual_x, &mut g);
                            evals += m;
                            g
                        };
                        st.h = Some(h);
                        any_h_changed = true;
                    }
                    ShiftKind::Learned {
                        source: ShiftSource::AnchorStochastic { r },
                        ..
                    } => {
                        let h = batch_stochastic_grad(spec, problem, i, virtual_x, r, &mut st.rng);
                        st.h = Some(h);
                        evals += r as u64;
                        any_h_changed = true;
                    }
                    _ => {}
                }
            }
            if any_h_changed {
                recompute_shift_means(states, shared);
            }
        }
    }

    // shifts learned from the current draw flip per-client coins
    if let ShiftKind::Learned {
        rho_prime,
        source: ShiftSource::CurrentStochastic,
    } = spec.shift
    {
        let mut any = false;
        for st in states.iter_mut() {
            let fire = if spec.coupled_updates {
                comm_event
            } else {
                st.rng.coin(rho_prime)
            };
            if fire {
                st.h = Some(st.a_buf.clone());
                any = true;
            }
        }
        if any {
            recompute_shift_means(states, shared);
        }
    }

    evals
}

/// The shift sequence realized for the governing sigma recursion at the
/// current state: anchored variance-reduced methods track component or
/// gradient residuals at their anchors, everything else contributes zero.
pub fn sigma_sq_realization(
    spec: &MethodSpec,
    problem: &GlobalProblem,
    states: &[WorkerState],
    shared: &SharedState,
) -> f64 {
    let Some(opt) = &problem.optimum else {
        return 0.0;
    };
    let n = problem.n;
    let m = problem.m;
    let d = problem.d;
    let component_residuals = |point: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut buf = vec![0.0; d];
        let mut star = vec![0.0; d];
        for i in 0..n {
            for j in 0..m {
                problem.component_grad_into(i, j, point, &mut buf);
                problem.component_grad_into(i, j, &opt.x, &mut star);
                acc += vecops::dist_sq(&buf, &star);
            }
        }
        acc / (n * m) as f64
    };
    let gradient_residuals = |point: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut buf = vec![0.0; d];
        let mut star = vec![0.0; d];
        for i in 0..n {
            problem.local_grad_into(i, point, &mut buf);
            problem.local_grad_into(i, &opt.x, &mut star);
            acc += vecops::dist_sq(&buf, &star);
        }
        acc / n as f64
    };
    match spec.estimator {
        EstimatorKind::Lsvrg {
            per_client_anchor: true,
            ..
        } => {
            // (4/nm) sum_ij |comp grad at w_i - comp grad at x*|^2
            let mut acc = 0.0;
            let mut buf = vec![0.0; d];
            let mut star = vec![0.0; d];
            for (i, st) in states.iter().enumerate() {
                let w = st.anchor.as_ref().expect("per-client anchor");
                for j in 0..m {
                    problem.component_grad_into(i, j, w, &mut buf);
                    problem.component_grad_into(i, j, &opt.x, &mut star);
                    acc += vecops::dist_sq(&buf, &star);
                }
            }
            4.0 * acc / (n * m) as f64
        }
        EstimatorKind::GlobalAnchorSvrg { .. }
        | EstimatorKind::Lsvrg {
            per_client_anchor: false,
            ..
        } => {
            let y = shared.y.as_ref().expect("shared anchor");
            component_residuals(y) + gradient_residuals(y)
        }
        _ => match spec.shift {
            ShiftKind::Learned {
                source: ShiftSource::AnchorStochastic { .. } | ShiftSource::AnchorFull,
                ..
            } => {
                let y = shared.y.as_ref().expect("shared anchor");
                gradient_residuals(y)
            }
            _ => 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_quadratic, QuadraticSpec};

    fn quad(n: usize, m: usize, d: usize, mu: f64, seed: u64) -> GlobalProblem {
        make_quadratic(&QuadraticSpec { n, m, d, mu, seed }).unwrap()
    }

    #[test]
    fn full_gradient_direction_is_exact() {
        let p = quad(3, 2, 5, 0.1, 1);
        let spec = MethodSpec::local_sgd(EstimatorKind::FullGradient, 2);
        let (mut states, shared, _) = init_states(&spec, &p, &vec![0.3; 5], 7).unwrap();
        for i in 0..p.n {
            let st = &mut states[i];
            sample_direction(&spec, &p, i, st, &shared).unwrap();
            let (_, g) = p.value_and_grad(i, &st.x).unwrap();
            assert_eq!(st.g_buf, g);
        }
    }

    #[test]
    fn lsvrg_with_anchor_at_iterate_collapses_to_full_gradient() {
        let p = quad(2, 4, 6, 0.2, 3);
        let spec = MethodSpec::local_svrg(0.5, 3);
        let x0 = vec![0.25; 6];
        let (mut states, shared, _) = init_states(&spec, &p, &x0, 9).unwrap();
        // anchor equals the iterate right after initialization
        for i in 0..p.n {
            let st = &mut states[i];
            for _ in 0..10 {
                sample_direction(&spec, &p, i, st, &shared).unwrap();
                let (_, g) = p.value_and_grad(i, &st.x).unwrap();
                for k in 0..p.d {
                    assert!((st.g_buf[k] - g[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn star_methods_are_exact_at_the_optimum() {
        let p = quad(3, 1, 4, 0.3, 5);
        let spec = MethodSpec::star_local_sgd_star(4);
        let x_star = p.optimum.as_ref().unwrap().x.clone();
        let (mut states, shared, _) = init_states(&spec, &p, &x_star, 1).unwrap();
        // m = 1: the drawn direction is exactly zero at the optimum
        for i in 0..p.n {
            let st = &mut states[i];
            sample_direction(&spec, &p, i, st, &shared).unwrap();
            for k in 0..p.d {
                assert!(st.g_buf[k].abs() < 1e-10, "g[{k}] = {}", st.g_buf[k]);
            }
        }
    }

    #[test]
    fn learned_shifts_sum_to_zero_exactly() {
        let p = quad(5, 3, 6, 0.1, 11);
        let spec = MethodSpec::ss_local_sgd(
            EstimatorKind::NoisyGradient { variance: 0.5 },
            0.25,
            0.25,
            4,
        );
        let (mut states, mut shared, _) = init_states(&spec, &p, &vec![0.1; 6], 13).unwrap();
        for k in 0..40u64 {
            let comm = is_communication(spec.loop_kind, k, &mut shared.coin);
            for i in 0..p.n {
                let st = &mut states[i];
                sample_direction(&spec, &p, i, st, &shared).unwrap();
            }
            let virtual_x: Vec<f64> = {
                let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
                let mut v = vec![0.0; p.d];
                vecops::pairwise_mean(&xs, &mut v);
                v
            };
            refresh_state(&spec, &p, &mut states, &mut shared, &virtual_x, comm);
            // ascending plain sum must cancel bitwise
            let mut sum = vec![0.0; p.d];
            for st in &states {
                for (s, b) in sum.iter_mut().zip(st.b.as_ref().unwrap()) {
                    *s += b;
                }
            }
            assert!(sum.iter().all(|&s| s == 0.0), "shift sum {sum:?}");
            for i in 0..p.n {
                let st = &mut states[i];
                let g = st.g_buf.clone();
                vecops::axpy(-0.05, &g, &mut st.x);
            }
        }
    }

    #[test]
    fn certain_anchor_refresh_tracks_the_iterate() {
        // with q = 1 the anchor flips to the current iterate every step,
        // so for m = 1 the next draw is the exact local gradient
        let p = quad(2, 1, 4, 0.2, 13);
        let spec = MethodSpec::local_svrg(1.0, 3);
        let (mut states, mut shared, _) = init_states(&spec, &p, &vec![0.9; 4], 3).unwrap();
        for k in 0..8u64 {
            let comm = is_communication(spec.loop_kind, k, &mut shared.coin);
            for i in 0..p.n {
                sample_direction(&spec, &p, i, &mut states[i], &shared).unwrap();
                let (_, g) = p.value_and_grad(i, &states[i].x).unwrap();
                for kk in 0..p.d {
                    assert!((states[i].g_buf[kk] - g[kk]).abs() < 1e-12);
                }
            }
            let (virtual_x, _) = {
                let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
                let mut v = vec![0.0; p.d];
                vecops::pairwise_mean(&xs, &mut v);
                (v, 0.0)
            };
            refresh_state(&spec, &p, &mut states, &mut shared, &virtual_x, comm);
            for st in states.iter_mut() {
                let g = st.g_buf.clone();
                vecops::axpy(-0.1, &g, &mut st.x);
            }
            for st in states.iter() {
                // anchor tracked the pre-step iterate
                let w = st.anchor.as_ref().unwrap();
                let moved = vecops::dist_sq(w, &st.x);
                assert!(moved > 0.0 || k == 0);
            }
        }
    }

    #[test]
    fn fixed_loop_schedule_matches_modular_rule() {
        let mut coin = StreamRng::new(0, StreamKind::SharedCoin);
        let loop3 = LoopKind::Fixed { tau: 3 };
        let fires: Vec<u64> = (0..9)
            .filter(|&k| is_communication(loop3, k, &mut coin))
            .collect();
        assert_eq!(fires, vec![2, 5, 8]);
        let loop1 = LoopKind::Fixed { tau: 1 };
        assert!((0..5).all(|k| is_communication(loop1, k, &mut coin)));
        let always = LoopKind::Bernoulli { p: 1.0 };
        assert!((0..5).all(|k| is_communication(always, k, &mut coin)));
    }

    #[test]
    fn client_order_does_not_change_draws() {
        let p = quad(4, 3, 5, 0.2, 21);
        let spec = MethodSpec::local_svrg(0.3, 2);
        let x0 = vec![0.4; 5];
        let (mut fwd, shared_f, _) = init_states(&spec, &p, &x0, 33).unwrap();
        let (mut rev, shared_r, _) = init_states(&spec, &p, &x0, 33).unwrap();
        for i in 0..p.n {
            sample_direction(&spec, &p, i, &mut fwd[i], &shared_f).unwrap();
        }
        for i in (0..p.n).rev() {
            sample_direction(&spec, &p, i, &mut rev[i], &shared_r).unwrap();
        }
        for i in 0..p.n {
            assert_eq!(fwd[i].g_buf, rev[i].g_buf);
        }
    }

    #[test]
    fn shared_anchor_variant_matches_global_anchor_estimator() {
        // the anchored component-difference estimator draws identically
        // whether it is configured through the shared-anchor flag or the
        // global-anchor kind
        let p = quad(3, 4, 6, 0.1, 19);
        let x0 = vec![0.6; 6];
        let spec_a = MethodSpec {
            estimator: EstimatorKind::Lsvrg {
                q: 0.4,
                per_client_anchor: false,
            },
            shift: ShiftKind::None,
            loop_kind: LoopKind::Fixed { tau: 2 },
            coupled_updates: false,
        };
        let spec_b = MethodSpec {
            estimator: EstimatorKind::GlobalAnchorSvrg { q: 0.4 },
            ..spec_a
        };
        let (mut sa, sha, _) = init_states(&spec_a, &p, &x0, 77).unwrap();
        let (mut sb, shb, _) = init_states(&spec_b, &p, &x0, 77).unwrap();
        for i in 0..p.n {
            sample_direction(&spec_a, &p, i, &mut sa[i], &sha).unwrap();
            sample_direction(&spec_b, &p, i, &mut sb[i], &shb).unwrap();
            assert_eq!(sa[i].g_buf, sb[i].g_buf);
        }
    }

    #[test]
    fn degenerate_probabilities_are_rejected() {
        let p = quad(2, 2, 4, 0.1, 2);
        let bad = MethodSpec::local_svrg(0.0, 2);
        assert!(bad.validate(&p).is_err());
        let bad = MethodSpec {
            loop_kind: LoopKind::Bernoulli { p: 0.0 },
            ..MethodSpec::local_sgd(EstimatorKind::FullGradient, 1)
        };
        assert!(bad.validate(&p).is_err());
        let bad = MethodSpec::s_local_svrg(0.5, 0.2); // q > p
        assert!(bad.validate(&p).is_err());
    }

    #[test]
    fn star_methods_require_an_optimum() {
        let ds = crate::data::synthetic_sparse_binary(24, 8, 3, 4);
        let part = crate::data::partition(&ds, 2, crate::data::PartitionMode::Random, 0).unwrap();
        // mu = 0 leaves the logistic optimum uncertified
        let p = crate::data::make_logistic(&ds, &part, 0.0, true).unwrap();
        assert!(p.optimum.is_none());
        let spec = MethodSpec::star_local_sgd(EstimatorKind::FullGradient, 2);
        assert!(spec.validate(&p).is_err());
    }

    #[test]
    fn coupled_fixed_loop_refreshes_anchors_only_at_communication() {
        let p = quad(2, 3, 4, 0.2, 8);
        let tau = 3;
        let mut spec = MethodSpec::local_svrg(0.9, tau);
        spec.coupled_updates = true;
        let x0 = vec![1.0; 4];
        let (mut states, mut shared, _) = init_states(&spec, &p, &x0, 5).unwrap();
        for k in 0..6u64 {
            let comm = is_communication(spec.loop_kind, k, &mut shared.coin);
            for i in 0..p.n {
                sample_direction(&spec, &p, i, &mut states[i], &shared).unwrap();
            }
            let virtual_x = vec![0.0; 4];
            refresh_state(&spec, &p, &mut states, &mut shared, &virtual_x, comm);
            let changed = states[0].anchor.as_ref().unwrap() != &x0;
            // anchors move only at k = 2, 5, ... (iterates stay at x0 here)
            if (k + 1) % tau as u64 == 0 {
                assert!(comm);
            } else {
                assert!(!changed || comm);
            }
            // keep x fixed so anchor changes are attributable
        }
    }
}
