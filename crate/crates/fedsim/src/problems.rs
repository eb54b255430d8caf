//! Objective abstraction over synthetic quadratics and regularized logistic
//! regression: values, full and component gradients, smoothness and
//! convexity constants, heterogeneity measures, and exact optima.
//!
//! Both objective kinds share one structural fact the simulation leans on:
//! every component gradient is `s * a + mu * x` for a per-component row `a`
//! and a scalar `s` that depends on the point. Estimators cache the scalars
//! at anchor points instead of whole gradients.

use crate::data::QuadraticSpec;
use crate::error::{Error, Result};
use crate::vecops;
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QuadraticClient {
    /// Shift vector z_i.
    pub z: Vec<f64>,
    /// m orthonormal direction rows, flattened m x d.
    pub rows: Vec<f64>,
}

/// CSR-layout sparse rows for one client's logistic shard.
#[derive(Debug, Clone)]
pub struct LogisticClient {
    pub labels: Vec<f64>,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Locals {
    Quadratic {
        clients: Vec<QuadraticClient>,
        weight: f64, // (1 - mu), cached
    },
    Logistic {
        clients: Vec<LogisticClient>,
    },
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalProblem {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// Strong-convexity modulus of every local objective.
    pub mu: f64,
    /// Smoothness of each f_i.
    pub l_smooth: f64,
    /// Worst component smoothness over all (i, j).
    pub max_lij: f64,
    /// Set when the smoothness constant fell back to the maxLij upper bound
    /// because power iteration failed to converge.
    pub l_is_upper_bound: bool,
    pub locals: Locals,
    pub optimum: Option<Optimum>,
}

#[derive(Debug, Clone)]
pub struct HeterogeneityReport {
    /// max over probe points of (1/n) sum_i |grad f_i(x) - grad f(x)|^2
    pub zeta_sq_at: f64,
    /// (1/n) sum_i |grad f_i(x*)|^2, present when the optimum is known
    pub zeta_star_sq: Option<f64>,
    /// averaged single-sample variance at x*, for stochastic oracles
    pub sigma_star_sq: Option<f64>,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

const GRAD_CERT_REL_TOL: f64 = 1e-12;
const AGD_ITER_CAP: usize = 5_000_000;
const POWER_ITER_CAP: usize = 20_000;

impl GlobalProblem {
    pub fn from_quadratic(spec: &QuadraticSpec, clients: Vec<QuadraticClient>) -> Result<Self> {
        let (n, m, d, mu) = (spec.n, spec.m, spec.d, spec.mu);
        // Hessian of f_i is mu*I + (1-mu)*P_i with P_i an orthogonal
        // projector of rank m, so the spectrum is {1, mu} and L = 1 for
        // mu <= 1 (exactly mu when the projector term vanishes).
        let l_smooth = if mu < 1.0 { 1.0 } else { mu };
        let max_lij = mu + (1.0 - mu) * m as f64;
        let mut p = GlobalProblem {
            n,
            m,
            d,
            mu,
            l_smooth,
            max_lij,
            l_is_upper_bound: false,
            locals: Locals::Quadratic {
                clients,
                weight: 1.0 - mu,
            },
            optimum: None,
        };
        if let Ok(opt) = p.exact_optimum() {
            p.optimum = Some(opt);
        }
        Ok(p)
    }

    pub fn from_logistic(clients: Vec<LogisticClient>, d: usize, mu: f64) -> Result<Self> {
        let n = clients.len();
        if n == 0 {
            return Err(Error::Config("no clients".into()));
        }
        let m = clients[0].labels.len();
        if m == 0 || clients.iter().any(|c| c.labels.len() != m) {
            return Err(Error::Config("clients must hold equally many rows".into()));
        }
        let mut p = GlobalProblem {
            n,
            m,
            d,
            mu,
            l_smooth: 0.0,
            max_lij: 0.0,
            l_is_upper_bound: false,
            locals: Locals::Logistic { clients },
            optimum: None,
        };
        p.compute_logistic_constants();
        if mu > 0.0 {
            if let Ok(opt) = p.exact_optimum() {
                p.optimum = Some(opt);
            }
        }
        Ok(p)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_client(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange(format!("client {i} of {}", self.n)));
        }
        Ok(())
    }

    /// Scalar s with component gradient = s * a_ij + mu * x.
    #[inline]
    pub fn component_scalar(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        match &self.locals {
            Locals::Quadratic { clients, weight } => {
                let c = &clients[i];
                let a = &c.rows[j * self.d..(j + 1) * self.d];
                let t: f64 = a
                    .iter()
                    .zip(x.iter().zip(&c.z))
                    .map(|(ai, (xi, zi))| ai * (xi - zi))
                    .sum();
                weight * self.m as f64 * t
            }
            Locals::Logistic { clients } => {
                let c = &clients[i];
                let (lo, hi) = (c.offsets[j], c.offsets[j + 1]);
                let t: f64 = c.indices[lo..hi]
                    .iter()
                    .zip(&c.values[lo..hi])
                    .map(|(&idx, &v)| v * x[idx])
                    .sum();
                let b = c.labels[j];
                b * sigmoid(b * t)
            }
        }
    }

    /// out += coeff * a_ij
    #[inline]
    pub fn add_scaled_row(&self, i: usize, j: usize, coeff: f64, out: &mut [f64]) {
        match &self.locals {
            Locals::Quadratic { clients, .. } => {
                let a = &clients[i].rows[j * self.d..(j + 1) * self.d];
                vecops::axpy(coeff, a, out);
            }
            Locals::Logistic { clients } => {
                let c = &clients[i];
                let (lo, hi) = (c.offsets[j], c.offsets[j + 1]);
                for (&idx, &v) in c.indices[lo..hi].iter().zip(&c.values[lo..hi]) {
                    out[idx] += coeff * v;
                }
            }
        }
    }

    /// All m component scalars of client i at x.
    pub fn component_scalars_at(&self, i: usize, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.m).map(|j| self.component_scalar(i, j, x)));
    }

    pub fn component_grad_into(&self, i: usize, j: usize, x: &[f64], out: &mut [f64]) {
        let s = self.component_scalar(i, j, x);
        out.copy_from_slice(x);
        vecops::scale(self.mu, out);
        self.add_scaled_row(i, j, s, out);
    }

    pub fn component_grad(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_client(i)?;
        self.check_dim(x)?;
        if j >= self.m {
            return Err(Error::IndexOutOfRange(format!(
                "component {j} of {}",
                self.m
            )));
        }
        let mut out = vec![0.0; self.d];
        self.component_grad_into(i, j, x, &mut out);
        Ok(out)
    }

    pub fn local_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        vecops::scale(self.mu, out);
        let inv_m = 1.0 / self.m as f64;
        for j in 0..self.m {
            let s = self.component_scalar(i, j, x);
            self.add_scaled_row(i, j, s * inv_m, out);
        }
    }

    pub fn local_value(&self, i: usize, x: &[f64]) -> f64 {
        let reg = 0.5 * self.mu * vecops::norm_sq(x);
        match &self.locals {
            Locals::Quadratic { clients, weight } => {
                let c = &clients[i];
                let mut acc = 0.0;
                for j in 0..self.m {
                    let a = &c.rows[j * self.d..(j + 1) * self.d];
                    let t: f64 = a
                        .iter()
                        .zip(x.iter().zip(&c.z))
                        .map(|(ai, (xi, zi))| ai * (xi - zi))
                        .sum();
                    acc += t * t;
                }
                reg + 0.5 * weight * acc
            }
            Locals::Logistic { clients } => {
                let c = &clients[i];
                let mut acc = 0.0;
                for j in 0..self.m {
                    let (lo, hi) = (c.offsets[j], c.offsets[j + 1]);
                    let t: f64 = c.indices[lo..hi]
                        .iter()
                        .zip(&c.values[lo..hi])
                        .map(|(&idx, &v)| v * x[idx])
                        .sum();
                    acc += softplus(c.labels[j] * t);
                }
                reg + acc / self.m as f64
            }
        }
    }

    /// (f_i(x), grad f_i(x))
    pub fn value_and_grad(&self, i: usize, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_client(i)?;
        self.check_dim(x)?;
        let mut g = vec![0.0; self.d];
        self.local_grad_into(i, x, &mut g);
        Ok((self.local_value(i, x), g))
    }

    pub fn full_value(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.local_value(i, x)).sum::<f64>() / self.n as f64
    }

    pub fn full_grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        vecops::scale(self.mu, out);
        let w = 1.0 / (self.n * self.m) as f64;
        for i in 0..self.n {
            for j in 0..self.m {
                let s = self.component_scalar(i, j, x);
                self.add_scaled_row(i, j, s * w, out);
            }
        }
    }

    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.full_grad_into(x, &mut out);
        out
    }

    pub fn f_gap(&self, x: &[f64]) -> Option<f64> {
        self.optimum.as_ref().map(|o| self.full_value(x) - o.f)
    }

    /// Solve for the minimizer: quadratics by a dense direct method,
    /// logistic by accelerated full-batch gradient descent certified by the
    /// gradient-norm test.
    pub fn exact_optimum(&self) -> Result<Optimum> {
        let x = match &self.locals {
            Locals::Quadratic { clients, weight } => {
                // (mu I + (1-mu) Pbar) x = (1-mu) (1/n) sum_i P_i z_i
                let d = self.d;
                let mut mat = DMatrix::<f64>::zeros(d, d);
                let mut rhs = DVector::<f64>::zeros(d);
                let inv_n = 1.0 / self.n as f64;
                for c in clients {
                    for j in 0..self.m {
                        let a = &c.rows[j * d..(j + 1) * d];
                        let az = vecops::dot(a, &c.z);
                        for r in 0..d {
                            let w = weight * inv_n * a[r];
                            rhs[r] += w * az;
                            for s in 0..d {
                                mat[(r, s)] += w * a[s];
                            }
                        }
                    }
                }
                for r in 0..d {
                    mat[(r, r)] += self.mu;
                }
                let chol = Cholesky::new(mat).ok_or_else(|| {
                    Error::OptimumNotCertified("quadratic system not positive definite".into())
                })?;
                chol.solve(&rhs).as_slice().to_vec()
            }
            Locals::Logistic { .. } => {
                if self.mu <= 0.0 {
                    return Err(Error::OptimumNotCertified(
                        "logistic optimum requires mu > 0".into(),
                    ));
                }
                self.logistic_optimum_agd()?
            }
        };
        let gnorm = vecops::norm(&self.full_grad(&x));
        let tol_factor = match &self.locals {
            Locals::Quadratic { .. } => 1e-8,
            Locals::Logistic { .. } => GRAD_CERT_REL_TOL,
        };
        let tol = tol_factor * vecops::norm(&x).max(1.0);
        if gnorm > tol {
            return Err(Error::OptimumNotCertified(format!(
                "gradient norm {gnorm:.3e} above tolerance {tol:.3e}"
            )));
        }
        let f = self.full_value(&x);
        Ok(Optimum { x, f })
    }

    /// Accelerated gradient descent with the strongly-convex momentum
    /// schedule; certified by the gradient norm, capped in iterations.
    fn logistic_optimum_agd(&self) -> Result<Vec<f64>> {
        let l = self.l_smooth;
        let kappa = (l / self.mu).sqrt();
        let beta = (kappa - 1.0) / (kappa + 1.0);
        let d = self.d;
        let mut x = vec![0.0; d];
        let mut x_prev = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut g = vec![0.0; d];
        for it in 0..AGD_ITER_CAP {
            self.full_grad_into(&y, &mut g);
            if it % 16 == 0 {
                self.full_grad_into(&x, &mut g);
                let gn = vecops::norm(&g);
                if gn <= GRAD_CERT_REL_TOL * vecops::norm(&x).max(1.0) {
                    return Ok(x);
                }
                self.full_grad_into(&y, &mut g);
            }
            x_prev.copy_from_slice(&x);
            x.copy_from_slice(&y);
            vecops::axpy(-1.0 / l, &g, &mut x);
            for k in 0..d {
                y[k] = x[k] + beta * (x[k] - x_prev[k]);
            }
        }
        Err(Error::OptimumNotCertified(format!(
            "iteration cap {AGD_ITER_CAP} reached"
        )))
    }

    fn compute_logistic_constants(&mut self) {
        let Locals::Logistic { clients } = &self.locals else {
            return;
        };
        let d = self.d;
        let mut max_row_sq = 0.0f64;
        let mut lam_max = 0.0f64;
        let mut converged_all = true;
        for c in clients {
            for j in 0..self.m {
                let (lo, hi) = (c.offsets[j], c.offsets[j + 1]);
                let sq: f64 = c.values[lo..hi].iter().map(|v| v * v).sum();
                max_row_sq = max_row_sq.max(sq);
            }
            // power iteration on (1/m) sum_j a_j a_j'
            let m = self.m as f64;
            let mut v = vec![1.0 / (d as f64).sqrt(); d];
            let mut gv = vec![0.0; d];
            let mut lam = 0.0f64;
            let mut converged = false;
            for _ in 0..POWER_ITER_CAP {
                gv.iter_mut().for_each(|e| *e = 0.0);
                for j in 0..self.m {
                    let (lo, hi) = (c.offsets[j], c.offsets[j + 1]);
                    let t: f64 = c.indices[lo..hi]
                        .iter()
                        .zip(&c.values[lo..hi])
                        .map(|(&idx, &val)| val * v[idx])
                        .sum();
                    for (&idx, &val) in c.indices[lo..hi].iter().zip(&c.values[lo..hi]) {
                        gv[idx] += val * t / m;
                    }
                }
                let new_lam = vecops::dot(&v, &gv);
                let nrm = vecops::norm(&gv);
                if nrm == 0.0 {
                    lam = 0.0;
                    converged = true;
                    break;
                }
                for (vi, gi) in v.iter_mut().zip(&gv) {
                    *vi = gi / nrm;
                }
                if (new_lam - lam).abs() <= 1e-12 * new_lam.abs().max(1.0) {
                    lam = new_lam;
                    converged = true;
                    break;
                }
                lam = new_lam;
            }
            if !converged {
                // cheap valid upper bound for the Gram spectral norm
                lam = max_row_sq;
                converged_all = false;
            }
            lam_max = lam_max.max(lam);
        }
        self.max_lij = max_row_sq / 4.0 + self.mu;
        self.l_smooth = lam_max / 4.0 + self.mu;
        self.l_is_upper_bound = !converged_all;
    }

    /// (L, maxLij, expected smoothness for uniform single-sample oracles)
    pub fn smoothness_constants(&self) -> (f64, f64, f64) {
        (self.l_smooth, self.max_lij, self.max_lij)
    }

    pub fn measure_heterogeneity(&self, probes: &[Vec<f64>]) -> Result<HeterogeneityReport> {
        if probes.is_empty() {
            return Err(Error::Config(
                "heterogeneity probes must be nonempty".into(),
            ));
        }
        let mut zeta_sq_at = 0.0f64;
        let mut gi = vec![0.0; self.d];
        let mut gbar = vec![0.0; self.d];
        for x in probes {
            self.check_dim(x)?;
            self.full_grad_into(x, &mut gbar);
            let mut acc = 0.0;
            for i in 0..self.n {
                self.local_grad_into(i, x, &mut gi);
                acc += vecops::dist_sq(&gi, &gbar);
            }
            zeta_sq_at = zeta_sq_at.max(acc / self.n as f64);
        }
        let (zeta_star_sq, sigma_star_sq) = match &self.optimum {
            Some(opt) => {
                let mut zs = 0.0;
                let mut ss = 0.0;
                let mut comp = vec![0.0; self.d];
                for i in 0..self.n {
                    self.local_grad_into(i, &opt.x, &mut gi);
                    zs += vecops::norm_sq(&gi);
                    for j in 0..self.m {
                        self.component_grad_into(i, j, &opt.x, &mut comp);
                        ss += vecops::dist_sq(&comp, &gi);
                    }
                }
                (
                    Some(zs / self.n as f64),
                    Some(ss / (self.n * self.m) as f64),
                )
            }
            None => (None, None),
        };
        Ok(HeterogeneityReport {
            zeta_sq_at,
            zeta_star_sq,
            sigma_star_sq,
        })
    }

    /// Per-client gradients at the optimum (the ideal shift).
    pub fn star_shifts(&self) -> Result<Vec<Vec<f64>>> {
        let opt = self
            .optimum
            .as_ref()
            .ok_or_else(|| Error::MissingOptimum("star shift".into()))?;
        Ok((0..self.n)
            .map(|i| {
                let mut g = vec![0.0; self.d];
                self.local_grad_into(i, &opt.x, &mut g);
                g
            })
            .collect())
    }
}
