//! Parameter algebra for the convergence guarantees: per-estimator
//! constants, their aggregation into the governing inequality constants,
//! loop- and data-dependent terms with the exact stepsize restrictions,
//! the main stepsize bound, and iteration-count predictions.
//!
//! Two routes produce the governing constants. The generic route
//! aggregates per-client estimator constants through a composition rule
//! that works for any estimator/shift pairing. The canonical presets
//! carry sharper specialized constants (including the variance/mean
//! split needed in the fully heterogeneous regime) and use those
//! directly.

use crate::error::{Error, Result};
use crate::methods::{EstimatorKind, LoopKind, MethodSpec, ShiftKind, ShiftSource};
use crate::problems::GlobalProblem;
use crate::vecops;
use std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftCase {
    I,
    II,
    III,
}

/// Per-client constants of the estimator recursion, plus the delayed-shift
/// constants when a learned shift is in play.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub c: f64,
    pub d1: f64,
    pub d2: f64,
    pub shift: Option<ShiftParams>,
}

#[derive(Debug, Clone, Copy)]
pub struct ShiftParams {
    pub a_prime: f64,
    pub d3: f64,
    pub rho_prime: f64,
}

/// Separate bounds for the conditional mean and the conditional variance
/// of the local directions; required for the tight heterogeneous-regime
/// loop constants.
#[derive(Debug, Clone, Copy)]
pub struct VarianceSplit {
    pub a_tilde: f64,
    pub a_hat: f64,
    pub b_tilde: f64,
    pub b_hat: f64,
    pub f_tilde: f64,
    pub f_hat: f64,
    pub d1_tilde: f64,
    pub d1_hat: f64,
}

/// Constants of the governing inequalities for a concrete method on a
/// concrete problem.
#[derive(Debug, Clone, Copy)]
pub struct KeyParams {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
    pub c: f64,
    pub f: f64,
    pub f_prime: f64,
    pub g: f64,
    pub d1: f64,
    pub d1_prime: f64,
    pub d2: f64,
    pub rho: f64,
    pub shift_case: ShiftCase,
    pub split: Option<VarianceSplit>,
    /// Set when the split was filled by duplicating the combined bound
    /// rather than by preset-specific constants (sound but loose).
    pub split_is_fallback: bool,
    /// Smoothness constant carried along for downstream formulas.
    pub l: f64,
}

impl KeyParams {
    pub fn split_or_fallback(&self) -> VarianceSplit {
        self.split.unwrap_or(VarianceSplit {
            a_tilde: self.a,
            a_hat: self.a,
            b_tilde: self.b,
            b_hat: self.b,
            f_tilde: self.f,
            f_hat: self.f,
            d1_tilde: self.d1,
            d1_hat: self.d1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataRegime {
    /// No similarity assumption between clients.
    Heterogeneous,
    /// Uniformly bounded gradient dissimilarity zeta^2 (0 = identical).
    ZetaHeterogeneous { zeta_sq: f64 },
}

/// Loop- and data-dependent terms: `H = h_coeff * gamma^2`,
/// `D3 = d3_const + d3_over_gamma / gamma`, plus every additional upper
/// bound the derivation imposes on the stepsize.
#[derive(Debug, Clone)]
pub struct LoopParams {
    pub h_coeff: f64,
    pub d3_const: f64,
    pub d3_over_gamma: f64,
    pub gamma_caps: Vec<f64>,
}

impl LoopParams {
    fn zero() -> Self {
        LoopParams {
            h_coeff: 0.0,
            d3_const: 0.0,
            d3_over_gamma: 0.0,
            gamma_caps: Vec::new(),
        }
    }

    pub fn h_at(&self, gamma: f64) -> f64 {
        self.h_coeff * gamma * gamma
    }

    pub fn d3_at(&self, gamma: f64) -> f64 {
        self.d3_const + self.d3_over_gamma / gamma
    }
}

/// Helper for the recurrent `x / (rho (1 - rho))` terms; with rho = 1 the
/// sigma recursion is degenerate and these contributions vanish.
fn over_rho_one_minus_rho(num: f64, rho: f64) -> f64 {
    if num == 0.0 || rho >= 1.0 {
        0.0
    } else {
        num / (rho * (1.0 - rho))
    }
}

/// Everything the parameter algebra needs to know about a problem. Kept as
/// plain numbers so run metadata can reproduce every derived quantity
/// exactly.
#[derive(Debug, Clone, Copy)]
pub struct ProblemConstants {
    pub n: usize,
    pub m: usize,
    pub mu: f64,
    pub l: f64,
    pub max_lij: f64,
    pub zeta_star_sq: f64,
    pub sigma_star_sq: f64,
}

impl ProblemConstants {
    pub fn of(problem: &GlobalProblem) -> Result<Self> {
        let (zeta_star_sq, sigma_star_sq) = optimum_constants(problem)?;
        Ok(ProblemConstants {
            n: problem.n,
            m: problem.m,
            mu: problem.mu,
            l: problem.l_smooth,
            max_lij: problem.max_lij,
            zeta_star_sq,
            sigma_star_sq,
        })
    }
}

/// Heterogeneity constants at the optimum, needed by most derivations.
pub fn optimum_constants(problem: &GlobalProblem) -> Result<(f64, f64)> {
    let opt = problem
        .optimum
        .as_ref()
        .ok_or_else(|| Error::TheoryUnavailable("constants need a certified optimum".into()))?;
    let n = problem.n;
    let m = problem.m;
    let d = problem.d;
    let mut gi = vec![0.0; d];
    let mut comp = vec![0.0; d];
    let mut zeta_star_sq = 0.0;
    let mut sigma_star_sq = 0.0;
    for i in 0..n {
        problem.local_grad_into(i, &opt.x, &mut gi);
        zeta_star_sq += vecops::norm_sq(&gi);
        for j in 0..m {
            problem.component_grad_into(i, j, &opt.x, &mut comp);
            sigma_star_sq += vecops::dist_sq(&comp, &gi);
        }
    }
    Ok((zeta_star_sq / n as f64, sigma_star_sq / (n * m) as f64))
}

/// Per-client estimator constants for the supported estimator presets.
pub fn estimator_params(spec: &MethodSpec, pc: &ProblemConstants) -> Result<Vec<EstimatorParams>> {
    let l = pc.l;
    let max_lij = pc.max_lij;
    let shift_case = shift_case(spec);
    let base = match spec.estimator {
        EstimatorKind::FullGradient => EstimatorParams {
            a: l,
            b: 0.0,
            rho: 1.0,
            c: 0.0,
            d1: 0.0,
            d2: 0.0,
            shift: None,
        },
        EstimatorKind::NoisyGradient { variance } => EstimatorParams {
            a: l,
            b: 0.0,
            rho: 1.0,
            c: 0.0,
            d1: variance,
            d2: 0.0,
            shift: None,
        },
        EstimatorKind::UniformSample => EstimatorParams {
            a: max_lij, // expected smoothness for uniform single-sample
            b: 0.0,
            rho: 1.0,
            c: 0.0,
            d1: 2.0 * pc.sigma_star_sq,
            d2: 0.0,
            shift: None,
        },
        EstimatorKind::Lsvrg { q, .. } => EstimatorParams {
            a: 2.0 * max_lij,
            b: 2.0,
            rho: q,
            c: max_lij * q,
            d1: 0.0,
            d2: 0.0,
            shift: None,
        },
        EstimatorKind::StarSvrg | EstimatorKind::GlobalAnchorSvrg { .. } => {
            return Err(Error::TheoryUnavailable(format!(
                "no per-client constants for {:?}; the preset constants cover it",
                spec.estimator
            )))
        }
    };
    let shift = match (shift_case, spec.shift) {
        (ShiftCase::III, ShiftKind::Learned { rho_prime, source }) => Some(match source {
            ShiftSource::AnchorFull => ShiftParams {
                a_prime: l,
                d3: 0.0,
                rho_prime,
            },
            ShiftSource::AnchorStochastic { r } => ShiftParams {
                a_prime: l,
                d3: base.d1 / r as f64,
                rho_prime,
            },
            ShiftSource::CurrentStochastic => ShiftParams {
                a_prime: base.a,
                d3: base.d1,
                rho_prime,
            },
        }),
        _ => None,
    };
    Ok(vec![EstimatorParams { shift, ..base }; pc.n])
}

pub fn shift_case(spec: &MethodSpec) -> ShiftCase {
    match spec.shift {
        ShiftKind::None => ShiftCase::I,
        ShiftKind::Star => ShiftCase::II,
        ShiftKind::Learned { .. } => ShiftCase::III,
    }
}

/// Aggregate per-client estimator constants into the governing
/// constants; valid for any estimator/shift pairing.
pub fn derive_key_params(
    per_client: &[EstimatorParams],
    case: ShiftCase,
    zeta_star_sq: f64,
    l: f64,
) -> Result<KeyParams> {
    if per_client.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    let n = per_client.len() as f64;
    let max_a = per_client.iter().map(|p| p.a).fold(f64::MIN, f64::max);
    let sum_d1: f64 = per_client.iter().map(|p| p.d1).sum();
    let max_bc = per_client.iter().map(|p| p.b * p.c).fold(0.0, f64::max);
    let sum_b_d2: f64 = per_client.iter().map(|p| p.b * p.d2).sum();

    let d1 = match case {
        ShiftCase::I => 2.0 / n * sum_d1 + 2.0 * zeta_star_sq,
        ShiftCase::II | ShiftCase::III => 2.0 / n * sum_d1,
    };
    let (rho, c, d2) = match case {
        ShiftCase::I | ShiftCase::II => (
            per_client.iter().map(|p| p.rho).fold(1.0, f64::min),
            4.0 * max_bc,
            2.0 / n * sum_b_d2,
        ),
        ShiftCase::III => {
            let mut rho: f64 = 1.0;
            let mut max_rp_ap: f64 = 0.0;
            let mut d2_sum = 0.0;
            for p in per_client {
                let s = p.shift.ok_or_else(|| {
                    Error::TheoryUnavailable("case III needs shift constants".into())
                })?;
                rho = rho.min(p.rho).min(s.rho_prime);
                max_rp_ap = max_rp_ap.max(s.rho_prime * s.a_prime);
                d2_sum += 2.0 * p.b * p.d2 + s.rho_prime * s.d3;
            }
            (rho, 4.0 * max_bc + 4.0 * max_rp_ap, d2_sum / n)
        }
    };
    let c_val = c;
    Ok(KeyParams {
        a: 4.0 * max_a,
        b: 2.0,
        f: 4.0 * l * max_a,
        d1,
        b_prime: 1.0 / n,
        f_prime: 2.0 * l * max_a / n + 2.0 * l * l,
        d1_prime: sum_d1 / (n * n),
        a_prime: 2.0 * max_a / n + l,
        g: c_val * l / 2.0,
        rho,
        d2,
        c: c_val,
        shift_case: case,
        split: None,
        split_is_fallback: true,
        l,
    })
}

/// Specialized constants for the canonical presets, including the
/// mean/variance split used by the heterogeneous-regime loop bounds.
/// Returns None when the combination has no specialized set.
pub fn preset_key_params(spec: &MethodSpec, pc: &ProblemConstants) -> Option<KeyParams> {
    let l = pc.l;
    let max_lij = pc.max_lij;
    let n = pc.n as f64;
    let case = shift_case(spec);
    let zeta_star_sq = pc.zeta_star_sq;
    let sigma_star_sq = pc.sigma_star_sq;

    let kp = match (spec.estimator, spec.shift) {
        (EstimatorKind::NoisyGradient { variance }, ShiftKind::None) => {
            let s2 = variance;
            KeyParams {
                a: 3.0 * l,
                b: 0.0,
                f: 3.0 * l * l,
                d1: s2 + 3.0 * zeta_star_sq,
                a_prime: 2.0 * l,
                b_prime: 0.0,
                f_prime: 2.0 * l * l,
                d1_prime: s2 / n,
                rho: 1.0,
                c: 0.0,
                g: 0.0,
                d2: 0.0,
                shift_case: case,
                split: Some(VarianceSplit {
                    a_tilde: 3.0 * l,
                    a_hat: 0.0,
                    b_tilde: 0.0,
                    b_hat: 0.0,
                    f_tilde: 3.0 * l * l,
                    f_hat: 0.0,
                    d1_tilde: 3.0 * zeta_star_sq,
                    d1_hat: s2,
                }),
                split_is_fallback: false,
                l,
            }
        }
        (EstimatorKind::UniformSample, ShiftKind::None) => {
            let cal_l = max_lij;
            KeyParams {
                a: 4.0 * cal_l,
                b: 0.0,
                f: 4.0 * cal_l * l,
                d1: 2.0 * sigma_star_sq + 2.0 * zeta_star_sq,
                a_prime: 4.0 * cal_l / n + 2.0 * l,
                b_prime: 0.0,
                f_prime: 4.0 * cal_l * l / n + 2.0 * l * l,
                d1_prime: 2.0 * sigma_star_sq / n,
                rho: 1.0,
                c: 0.0,
                g: 0.0,
                d2: 0.0,
                shift_case: case,
                split: Some(VarianceSplit {
                    a_tilde: 3.0 * l,
                    a_hat: 4.0 * cal_l,
                    b_tilde: 0.0,
                    b_hat: 0.0,
                    f_tilde: 3.0 * l * l,
                    f_hat: 4.0 * cal_l * l,
                    d1_tilde: 3.0 * zeta_star_sq,
                    d1_hat: 2.0 * sigma_star_sq,
                }),
                split_is_fallback: false,
                l,
            }
        }
        (
            EstimatorKind::Lsvrg {
                q,
                per_client_anchor: true,
            },
            ShiftKind::None,
        ) => KeyParams {
            a: 8.0 * max_lij,
            b: 2.0,
            f: 8.0 * l * max_lij,
            d1: 2.0 * zeta_star_sq,
            a_prime: 4.0 * max_lij / n + l,
            b_prime: 1.0 / n,
            f_prime: 4.0 * l * max_lij / n + 2.0 * l * l,
            d1_prime: 0.0,
            rho: q,
            c: 8.0 * q * max_lij,
            g: 4.0 * q * l * max_lij,
            d2: 0.0,
            shift_case: case,
            split: Some(VarianceSplit {
                a_tilde: 3.0 * l,
                a_hat: 4.0 * max_lij,
                b_tilde: 0.0,
                b_hat: 0.5,
                f_tilde: 3.0 * l * l,
                f_hat: 4.0 * l * max_lij,
                d1_tilde: 3.0 * zeta_star_sq,
                d1_hat: 0.0,
            }),
            split_is_fallback: false,
            l,
        },
        (EstimatorKind::NoisyGradient { variance }, ShiftKind::Star) => {
            let s2 = variance;
            KeyParams {
                a: 2.0 * l,
                b: 0.0,
                f: 2.0 * l * l,
                d1: s2,
                a_prime: 2.0 * l,
                b_prime: 0.0,
                f_prime: 2.0 * l * l,
                d1_prime: s2 / n,
                rho: 1.0,
                c: 0.0,
                g: 0.0,
                d2: 0.0,
                shift_case: case,
                split: Some(VarianceSplit {
                    a_tilde: 2.0 * l,
                    a_hat: 0.0,
                    b_tilde: 0.0,
                    b_hat: 0.0,
                    f_tilde: 2.0 * l * l,
                    f_hat: 0.0,
                    d1_tilde: 0.0,
                    d1_hat: s2,
                }),
                split_is_fallback: false,
                l,
            }
        }
        (
            EstimatorKind::NoisyGradient { variance },
            ShiftKind::Learned {
                rho_prime,
                source: ShiftSource::AnchorStochastic { r },
            },
        ) => {
            let s2 = variance;
            let r = r as f64;
            KeyParams {
                a: 4.0 * l,
                b: 2.0,
                f: 4.0 * l * l,
                d1: 2.0 * s2 / r + s2,
                a_prime: 2.0 * l,
                b_prime: 0.0,
                f_prime: 2.0 * l * l,
                d1_prime: s2 / n,
                rho: rho_prime,
                c: l * rho_prime,
                g: 0.0,
                d2: 0.0,
                shift_case: case,
                split: Some(VarianceSplit {
                    a_tilde: 4.0 * l,
                    a_hat: 0.0,
                    b_tilde: 2.0,
                    b_hat: 0.0,
                    f_tilde: 4.0 * l * l,
                    f_hat: 0.0,
                    d1_tilde: 2.0 * s2 / r,
                    d1_hat: s2,
                }),
                split_is_fallback: false,
                l,
            }
        }
        (EstimatorKind::StarSvrg, ShiftKind::Star) => KeyParams {
            a: 2.0 * l + 2.0 * max_lij,
            b: 0.0,
            f: 2.0 * l * l + 2.0 * l * max_lij,
            d1: 0.0,
            a_prime: 2.0 * (max_lij / n + l),
            b_prime: 0.0,
            f_prime: 2.0 * l * (max_lij / n + l),
            d1_prime: 0.0,
            rho: 1.0,
            c: 0.0,
            g: 0.0,
            d2: 0.0,
            shift_case: case,
            split: Some(VarianceSplit {
                a_tilde: 2.0 * l,
                a_hat: 2.0 * max_lij,
                b_tilde: 0.0,
                b_hat: 0.0,
                f_tilde: 2.0 * l * l,
                f_hat: 2.0 * l * max_lij,
                d1_tilde: 0.0,
                d1_hat: 0.0,
            }),
            split_is_fallback: false,
            l,
        },
        (
            EstimatorKind::GlobalAnchorSvrg { q },
            ShiftKind::Learned {
                source: ShiftSource::AnchorFull,
                ..
            },
        ) => KeyParams {
            a: 4.0 * l + 4.0 * max_lij,
            b: 4.0,
            f: 4.0 * l * l + 4.0 * l * max_lij,
            d1: 0.0,
            a_prime: 4.0 * max_lij / n + 2.0 * l,
            b_prime: 2.0 / n,
            f_prime: 2.0 * l * (2.0 * max_lij / n + l),
            d1_prime: 0.0,
            rho: q,
            c: (l + max_lij) * q,
            g: 0.0,
            d2: 0.0,
            shift_case: case,
            split: Some(VarianceSplit {
                a_tilde: 4.0 * l,
                a_hat: 4.0 * max_lij,
                b_tilde: 2.0,
                b_hat: 2.0,
                f_tilde: 4.0 * l * l,
                f_hat: 4.0 * l * max_lij,
                d1_tilde: 0.0,
                d1_hat: 0.0,
            }),
            split_is_fallback: false,
            l,
        },
        _ => return None,
    };
    Some(kp)
}

/// Governing constants for a spec: specialized preset constants when
/// available, the generic aggregation otherwise.
pub fn key_params_from_constants(spec: &MethodSpec, pc: &ProblemConstants) -> Result<KeyParams> {
    if let Some(kp) = preset_key_params(spec, pc) {
        return Ok(kp);
    }
    let per_client = estimator_params(spec, pc)?;
    derive_key_params(&per_client, shift_case(spec), pc.zeta_star_sq, pc.l)
}

pub fn key_params(spec: &MethodSpec, problem: &GlobalProblem) -> Result<KeyParams> {
    key_params_from_constants(spec, &ProblemConstants::of(problem)?)
}

/// Loop- and data-regime terms with the exact derivation constants.
pub fn loop_params(
    kp: &KeyParams,
    loop_kind: LoopKind,
    data: DataRegime,
    mu: f64,
) -> Result<LoopParams> {
    let l = kp.l;
    let rho = kp.rho;
    match loop_kind {
        LoopKind::Fixed { tau: 1 } => return Ok(LoopParams::zero()),
        LoopKind::Bernoulli { p } if p >= 1.0 => return Ok(LoopParams::zero()),
        _ => {}
    }
    if let DataRegime::ZetaHeterogeneous { zeta_sq } = data {
        if zeta_sq > 0.0 && mu <= 0.0 {
            return Err(Error::TheoryUnavailable(
                "the zeta-heterogeneous bounds require mu > 0".into(),
            ));
        }
    }
    let mut caps = Vec::new();
    let lp = match (loop_kind, data) {
        (LoopKind::Fixed { tau }, DataRegime::Heterogeneous) => {
            let s = kp.split_or_fallback();
            let t1 = (tau - 1) as f64;
            let b_mix = s.b_tilde * t1 + s.b_hat;
            if mu > 0.0 {
                caps.push(1.0 / (4.0 * t1 * mu));
            }
            let f_inner =
                s.f_tilde * t1 + s.f_hat + 2.0 * over_rho_one_minus_rho(kp.g * b_mix, rho);
            if f_inner > 0.0 {
                caps.push(1.0 / (2.0 * (E * t1 * f_inner).sqrt()));
            }
            let a_inner =
                s.a_tilde * t1 + s.a_hat + 2.0 * over_rho_one_minus_rho(kp.c * b_mix, rho);
            if a_inner > 0.0 {
                caps.push(1.0 / (4.0 * (2.0 * E * l * t1 * a_inner).sqrt()));
            }
            LoopParams {
                h_coeff: 4.0 * E * t1 * b_mix * (2.0 + rho) / rho,
                d3_const: 2.0 * E * t1 * (s.d1_tilde * t1 + s.d1_hat + 2.0 * kp.d2 * b_mix / rho),
                d3_over_gamma: 0.0,
                gamma_caps: caps,
            }
        }
        (LoopKind::Fixed { tau }, DataRegime::ZetaHeterogeneous { zeta_sq }) => {
            let t1 = (tau - 1) as f64;
            if mu > 0.0 {
                caps.push(1.0 / (4.0 * t1 * mu));
            }
            let f_inner = kp.f + 2.0 * over_rho_one_minus_rho(kp.b * kp.g, rho);
            if f_inner > 0.0 {
                caps.push(1.0 / (2.0 * (t1 * f_inner).sqrt()));
            }
            let a_inner = kp.a + 2.0 * over_rho_one_minus_rho(kp.b * kp.c, rho);
            if a_inner > 0.0 {
                caps.push(1.0 / (4.0 * (2.0 * l * t1 * a_inner).sqrt()));
            }
            LoopParams {
                h_coeff: 4.0 * kp.b * t1 * (2.0 + rho) / rho,
                d3_const: 2.0 * t1 * (kp.d1 + 2.0 * kp.b * kp.d2 / rho),
                d3_over_gamma: if zeta_sq > 0.0 {
                    2.0 * t1 * zeta_sq / mu
                } else {
                    0.0
                },
                gamma_caps: caps,
            }
        }
        (LoopKind::Bernoulli { p }, DataRegime::Heterogeneous) => {
            let s = kp.split_or_fallback();
            let one_m_p = 1.0 - p;
            let b_mix = (p + 2.0) * s.b_tilde + p * s.b_hat;
            if mu > 0.0 {
                caps.push(p / (16.0 * mu));
            }
            let f_inner = one_m_p * ((2.0 + p) * s.f_tilde + p * s.f_hat);
            if f_inner > 0.0 {
                caps.push(p / (2.0 * f_inner.sqrt()));
            }
            if kp.g > 0.0 && b_mix > 0.0 && rho < 1.0 {
                caps.push(
                    p * (3.0 * rho * (1.0 - rho)).sqrt()
                        / (8.0 * (2.0 * kp.g * one_m_p * b_mix).sqrt()),
                );
            }
            let a_inner = (2.0 + p) * s.a_tilde
                + p * s.a_hat
                + 2.0 * over_rho_one_minus_rho(kp.c * b_mix, rho);
            if a_inner > 0.0 {
                caps.push(p * 3.0_f64.sqrt() / (16.0 * (2.0 * l * one_m_p * a_inner).sqrt()));
            }
            LoopParams {
                h_coeff: 64.0 * one_m_p * b_mix * (2.0 + rho) / (3.0 * p * p * rho),
                d3_const: 8.0 * one_m_p / (p * p)
                    * ((p + 2.0) * s.d1_tilde + p * s.d1_hat + 8.0 * kp.d2 * b_mix / (3.0 * rho)),
                d3_over_gamma: 0.0,
                gamma_caps: caps,
            }
        }
        (LoopKind::Bernoulli { p }, DataRegime::ZetaHeterogeneous { zeta_sq }) => {
            let one_m_p = 1.0 - p;
            if mu > 0.0 {
                caps.push(p / (8.0 * mu));
            }
            if kp.f > 0.0 {
                caps.push((p / (2.0 * kp.f * one_m_p)).sqrt());
            }
            if kp.b > 0.0 && kp.g > 0.0 && rho < 1.0 {
                caps.push((p * rho * (1.0 - rho) / (32.0 * kp.b * kp.g * one_m_p)).sqrt());
            }
            let a_inner = kp.a + 2.0 * over_rho_one_minus_rho(kp.b * kp.c, rho);
            if a_inner > 0.0 {
                caps.push((p / (128.0 * l * one_m_p * a_inner)).sqrt());
            }
            LoopParams {
                h_coeff: 16.0 * kp.b * one_m_p * (2.0 + rho) / (p * rho),
                d3_const: 4.0 * one_m_p / p * (kp.d1 + 4.0 * kp.b * kp.d2 / rho),
                d3_over_gamma: if zeta_sq > 0.0 {
                    4.0 * one_m_p / p * zeta_sq / mu
                } else {
                    0.0
                },
                gamma_caps: caps,
            }
        }
    };
    Ok(lp)
}

/// The largest admissible stepsize: the base caps of the convergence
/// bound intersected with every loop-derived cap.
pub fn max_stepsize(kp: &KeyParams, lp: &LoopParams, l: f64) -> f64 {
    let m_coup = 4.0 * kp.b_prime / (3.0 * kp.rho);
    let mut gamma = 1.0 / (2.0 * (kp.a_prime + kp.c * m_coup));
    let denom = kp.f_prime + kp.g * m_coup;
    if denom > 0.0 {
        gamma = gamma.min(l / denom);
    }
    for &cap in &lp.gamma_caps {
        if cap.is_finite() {
            gamma = gamma.min(cap);
        }
    }
    gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictedK {
    Iterations(u64),
    /// The stepsize-proportional neighborhood already exceeds the target.
    Unreachable,
}

/// Everything the main bound says about a concrete run.
#[derive(Debug, Clone)]
pub struct RateBound {
    pub theta: f64,
    pub phi0: f64,
    pub psi0: f64,
    pub gamma: f64,
    pub mu: f64,
    pub phi0_terms: Vec<(&'static str, f64)>,
    pub psi0_terms: Vec<(&'static str, f64)>,
    /// Set when gamma was above the admissible bound; the numbers are then
    /// extrapolations, not guarantees.
    pub gamma_exceeds_bound: bool,
}

impl RateBound {
    /// Smallest K with `theta^K Phi0 + gamma Psi0 <= eps` (mu > 0) or
    /// `Phi0 / K + gamma Psi0 <= eps` (mu = 0).
    pub fn predicted_k(&self, eps: f64) -> PredictedK {
        let floor = self.psi0 * self.gamma;
        if floor >= eps {
            return PredictedK::Unreachable;
        }
        let head = eps - floor;
        if self.phi0 <= head {
            return PredictedK::Iterations(0);
        }
        if self.theta < 1.0 {
            let k = ((self.phi0 / head).ln() / -self.theta.ln()).ceil();
            PredictedK::Iterations(k as u64)
        } else {
            PredictedK::Iterations((self.phi0 / head).ceil() as u64)
        }
    }
}

pub fn rate_bound(
    kp: &KeyParams,
    lp: &LoopParams,
    gamma: f64,
    mu: f64,
    sigma0_sq: f64,
    dist0_sq: f64,
) -> RateBound {
    let gamma_max = max_stepsize(kp, lp, kp.l);
    let theta = 1.0 - (gamma * mu).min(kp.rho / 4.0);
    let h = lp.h_at(gamma);
    let d3 = lp.d3_at(gamma);
    let phi0_terms = vec![
        ("2 dist0^2 / gamma", 2.0 * dist0_sq / gamma),
        (
            "8 B' gamma sigma0^2 / (3 rho)",
            8.0 * kp.b_prime * gamma * sigma0_sq / (3.0 * kp.rho),
        ),
        ("4 L H sigma0^2", 4.0 * kp.l * h * sigma0_sq),
    ];
    let psi0_terms = vec![
        ("2 D1'", 2.0 * kp.d1_prime),
        (
            "8 B' D2 / (3 rho)",
            8.0 * kp.b_prime * kp.d2 / (3.0 * kp.rho),
        ),
        ("4 L gamma D3", 4.0 * kp.l * gamma * d3),
    ];
    RateBound {
        theta,
        phi0: phi0_terms.iter().map(|t| t.1).sum(),
        psi0: psi0_terms.iter().map(|t| t.1).sum(),
        gamma,
        mu,
        phi0_terms,
        psi0_terms,
        gamma_exceeds_bound: gamma > gamma_max * (1.0 + 1e-12),
    }
}

/// The horizon-dependent decreasing-stepsize choice for strongly convex
/// runs: balances the contraction term against the noise floors over K
/// iterations.
pub fn horizon_stepsize(
    kp: &KeyParams,
    lp: &LoopParams,
    mu: f64,
    horizon: u64,
    sigma0_sq: f64,
    dist0_sq: f64,
) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::TheoryUnavailable(
            "the horizon stepsize rule needs mu > 0".into(),
        ));
    }
    let gamma_max = max_stepsize(kp, lp, kp.l);
    let nu = 1.0 / gamma_max;
    let k = horizon as f64;
    let upsilon1 = 2.0 * dist0_sq
        + 8.0 * kp.b_prime * sigma0_sq / (3.0 * nu * nu * kp.rho)
        + 4.0 * kp.l * lp.h_coeff * sigma0_sq / (nu * nu * nu);
    let upsilon2 = 2.0 * kp.d1_prime
        + 4.0 * kp.b_prime * kp.d2 / (3.0 * kp.rho)
        + 2.0 * kp.l * lp.d3_over_gamma;
    let upsilon3 = 4.0 * kp.l * lp.d3_const;
    let r2 = if upsilon2 > 0.0 {
        upsilon1 * mu * mu * k * k / upsilon2
    } else {
        f64::INFINITY
    };
    let r3 = if upsilon3 > 0.0 {
        upsilon1 * mu * mu * mu * k * k * k / upsilon3
    } else {
        f64::INFINITY
    };
    let inner = r2.min(r3).max(2.0);
    if inner.is_infinite() {
        return Ok(gamma_max);
    }
    Ok(gamma_max.min(inner.ln() / (mu * k)))
}

/// The sigma-sequence realization at the starting point, per preset.
pub fn sigma0_sq(spec: &MethodSpec, problem: &GlobalProblem, x0: &[f64]) -> Result<f64> {
    let (states, shared, _) = crate::methods::init_states(spec, problem, x0, 0)?;
    Ok(crate::methods::sigma_sq_realization(
        spec, problem, &states, &shared,
    ))
}
