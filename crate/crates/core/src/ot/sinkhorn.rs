//! Entropy-regularised transport by Sinkhorn matrix scaling.
//!
//! Two kernels are provided. The plain scaling iteration works on
//! `K = exp(-C / eps)` and is fast but underflows once `C / eps` gets large.
//! The log-domain iteration keeps dual potentials `f, g` and evaluates
//! `log-sum-exp` reductions, so it is stable for any `eps > 0`. When its
//! sweeps stall on a small problem it switches to Newton steps on the dual,
//! which converge where plain sweeps crawl (plans close to a permutation).

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};

use super::{check_simplex, CostMatrix, TransportPlan};
use crate::{Error, Result};

/// Ratio of `eps / mean(C)` below which [`Stabilization::Auto`] switches to
/// the log-domain kernel.
pub const LOG_DOMAIN_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stabilization {
    /// Log domain when `eps < 0.05 * mean(C)`, or when plain scaling underflows.
    #[default]
    Auto,
    Standard,
    LogDomain,
}

#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    /// Regularisation strength; `None` means `0.1 * mean(C)`.
    pub epsilon: Option<f64>,
    /// Stop once the marginal violation drops below this value.
    pub tol: f64,
    pub max_iter: usize,
    pub stabilization: Stabilization,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            tol: 1e-6,
            max_iter: 1000,
            stabilization: Stabilization::Auto,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
    pub log_domain: bool,
}

impl SinkhornSolution {
    /// `<C, pi> + eps * KL(pi || a b^T)`, the quantity Sinkhorn minimises.
    ///
    /// Its gradient with respect to `C` is the optimal plan itself.
    pub fn regularized_objective(&self, cost: &CostMatrix) -> f64 {
        let pi = self.plan.coupling();
        let a = self.plan.row_marginal();
        let b = self.plan.col_marginal();
        let mut kl = 0.0;
        for ((i, j), &p) in pi.indexed_iter() {
            if p > 0.0 {
                kl += p * (p / (a[i] * b[j])).ln();
            }
        }
        self.plan.cost(cost) + self.epsilon * kl
    }
}

/// Entropic plan with the given regularisation; see [`sinkhorn`] for details.
pub fn solve_sinkhorn(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    let cfg = SinkhornConfig {
        epsilon: Some(epsilon),
        tol,
        max_iter,
        stabilization: Stabilization::Auto,
    };
    Ok(sinkhorn(cost, a, b, &cfg)?.plan)
}

pub fn sinkhorn(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    let (m, n) = cost.shape();
    if a.len() != m || b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "cost shape vs marginals",
            left: m * n,
            right: a.len() * b.len(),
        });
    }
    check_simplex(a.view(), "row marginal")?;
    check_simplex(b.view(), "column marginal")?;
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", cfg.tol)));
    }
    let mean = cost.mean();
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        // an all-zero cost has every coupling optimal; any positive eps will do
        None if mean > 0.0 => 0.1 * mean,
        None => 1.0,
    };
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }

    match cfg.stabilization {
        Stabilization::LogDomain => log_domain(cost, a, b, epsilon, cfg),
        Stabilization::Standard => scaling(cost, a, b, epsilon, cfg),
        Stabilization::Auto => {
            if epsilon < LOG_DOMAIN_THRESHOLD * mean {
                log_domain(cost, a, b, epsilon, cfg)
            } else {
                match scaling(cost, a, b, epsilon, cfg) {
                    Err(Error::SinkhornUnderflow { .. }) => log_domain(cost, a, b, epsilon, cfg),
                    other => other,
                }
            }
        }
    }
}

fn row_violation(pi: &Array2<f64>, a: &Array1<f64>) -> f64 {
    pi.sum_axis(Axis(1))
        .iter()
        .zip(a.iter())
        .fold(0.0f64, |m, (s, t)| m.max((s - t).abs()))
}

fn scaling(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    epsilon: f64,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    let c = cost.entries();
    let kernel = c.mapv(|x| (-x / epsilon).exp());
    let (m, n) = c.dim();
    let mut u = Array1::<f64>::ones(m);
    let mut v = Array1::<f64>::ones(n);
    let underflow = || Error::SinkhornUnderflow { epsilon };

    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    while iterations < cfg.max_iter {
        iterations += 1;
        let kv = kernel.dot(&v);
        for i in 0..m {
            if a[i] == 0.0 {
                u[i] = 0.0;
            } else if kv[i] > 0.0 {
                u[i] = a[i] / kv[i];
            } else {
                return Err(underflow());
            }
        }
        let ktu = kernel.t().dot(&u);
        for j in 0..n {
            if b[j] == 0.0 {
                v[j] = 0.0;
            } else if ktu[j] > 0.0 {
                v[j] = b[j] / ktu[j];
            } else {
                return Err(underflow());
            }
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(underflow());
        }
        // columns are exact after the v-update; only rows can be off
        let kv = kernel.dot(&v);
        violation = (0..m).fold(0.0f64, |acc, i| acc.max((u[i] * kv[i] - a[i]).abs()));
        if violation < cfg.tol {
            break;
        }
    }

    let mut pi = kernel;
    for ((i, j), p) in pi.indexed_iter_mut() {
        *p *= u[i] * v[j];
    }
    let violation = violation.min(row_violation(&pi, a));
    Ok(SinkhornSolution {
        plan: TransportPlan::from_parts(pi, a.clone(), b.clone()),
        epsilon,
        iterations,
        marginal_violation: violation,
        converged: violation < cfg.tol,
        log_domain: false,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_domain(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    epsilon: f64,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    let c = cost.entries();
    let (m, n) = c.dim();
    let log_a = a.mapv(f64::ln);
    let log_b = b.mapv(f64::ln);
    // unscaled dual potentials, carried across the annealing stages
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);

    let mut iterations = 0;
    let mut eps = epsilon.max(cost.mean());
    let violation = loop {
        let last = eps <= epsilon;
        let budget = if last {
            cfg.max_iter.saturating_sub(iterations).max(1)
        } else {
            ANNEAL_STAGE_ITERS
        };
        let stage_tol = if last { cfg.tol } else { cfg.tol.max(1e-4) };
        let newton = last && m + n <= NEWTON_MAX_SIZE && a.iter().chain(b.iter()).all(|&w| w > 0.0);
        let plain = if newton { budget.min(NEWTON_AFTER) } else { budget };
        let mut violation =
            log_domain_stage(c, &log_a, &log_b, eps, &mut f, &mut g, plain, stage_tol, &mut iterations);
        if newton && violation.is_finite() && violation >= stage_tol && iterations < cfg.max_iter {
            let (f0, g0) = (f.clone(), g.clone());
            let polished = newton_polish(c, a, b, eps, &mut f, &mut g, stage_tol, &mut iterations);
            if polished < violation {
                violation = polished;
            } else {
                f = f0;
                g = g0;
            }
            if violation >= stage_tol && iterations < cfg.max_iter {
                let rest = cfg.max_iter - iterations;
                violation =
                    log_domain_stage(c, &log_a, &log_b, eps, &mut f, &mut g, rest, stage_tol, &mut iterations);
            }
        }
        if !violation.is_finite() {
            return Err(Error::SinkhornUnderflow { epsilon });
        }
        if last {
            break violation;
        }
        eps = (eps * ANNEAL_FACTOR).max(epsilon);
    };

    let pi = Array2::from_shape_fn((m, n), |(i, j)| {
        let e = (f[i] + g[j] - c[[i, j]]) / epsilon;
        if e == f64::NEG_INFINITY {
            0.0
        } else {
            e.exp()
        }
    });
    Ok(SinkhornSolution {
        plan: TransportPlan::from_parts(pi, a.clone(), b.clone()),
        epsilon,
        iterations,
        marginal_violation: violation,
        converged: violation < cfg.tol,
        log_domain: true,
    })
}

/// Shrink factor between annealing stages of the log-domain kernel.
const ANNEAL_FACTOR: f64 = 0.5;
const ANNEAL_STAGE_ITERS: usize = 50;

#[allow(clippy::too_many_arguments)]
fn log_domain_stage(
    c: &Array2<f64>,
    log_a: &Array1<f64>,
    log_b: &Array1<f64>,
    eps: f64,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    budget: usize,
    tol: f64,
    iterations: &mut usize,
) -> f64 {
    let (m, n) = c.dim();
    let mut violation = f64::INFINITY;
    for _ in 0..budget {
        *iterations += 1;
        for i in 0..m {
            f[i] = if log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_a[i] - log_sum_exp((0..n).map(|j| (g[j] - c[[i, j]]) / eps)))
            };
        }
        for j in 0..n {
            g[j] = if log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_b[j] - log_sum_exp((0..m).map(|i| (f[i] - c[[i, j]]) / eps)))
            };
        }
        violation = (0..m).fold(0.0f64, |acc, i| {
            let s = log_sum_exp((0..n).map(|j| (f[i] + g[j] - c[[i, j]]) / eps)).exp();
            acc.max((s - log_a[i].exp()).abs())
        });
        if !violation.is_finite() || violation < tol {
            break;
        }
    }
    violation
}

/// Largest `m + n` for which stalled iterations switch to Newton steps.
const NEWTON_MAX_SIZE: usize = 512;
/// Plain sweeps at the target epsilon before Newton steps are tried.
const NEWTON_AFTER: usize = 200;
const NEWTON_MAX_STEPS: usize = 60;

/// Dual objective over `eps`, in potentials scaled by `1 / eps`.
fn scaled_dual(ce: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, fs: &Array1<f64>, gs: &Array1<f64>) -> f64 {
    let mass: f64 = ce
        .indexed_iter()
        .map(|((i, j), &x)| (fs[i] + gs[j] - x).exp())
        .sum();
    fs.dot(a) + gs.dot(b) - mass
}

/// Damped Newton ascent on the entropic dual, for marginals without zeros.
/// The last column potential is held fixed to remove the shift invariance;
/// a ridge is added when the reduced Hessian is numerically singular.
/// Each step is followed by one plain Sinkhorn sweep.
#[allow(clippy::too_many_arguments)]
fn newton_polish(
    c: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    tol: f64,
    iterations: &mut usize,
) -> f64 {
    let (m, n) = c.dim();
    let ce = c / eps;
    let (la, lb) = (a.mapv(f64::ln), b.mapv(f64::ln));
    let mut fs = &*f / eps;
    let mut gs = &*g / eps;
    let size = m + n - 1;
    let mut violation = f64::INFINITY;
    for _ in 0..NEWTON_MAX_STEPS {
        let p = Array2::from_shape_fn((m, n), |(i, j)| (fs[i] + gs[j] - ce[[i, j]]).exp());
        let (rows, cols) = (p.sum_axis(Axis(1)), p.sum_axis(Axis(0)));
        violation = (0..m)
            .map(|i| (rows[i] - a[i]).abs())
            .chain((0..n).map(|j| (cols[j] - b[j]).abs()))
            .fold(0.0f64, f64::max);
        if !violation.is_finite() || violation < tol {
            break;
        }
        *iterations += 1;
        let grad = DVector::from_fn(size, |k, _| if k < m { a[k] - rows[k] } else { b[k - m] - cols[k - m] });
        let hessian = DMatrix::from_fn(size, size, |r, s| match (r < m, s < m) {
            (true, true) => if r == s { rows[r] } else { 0.0 },
            (false, false) => if r == s { cols[r - m] } else { 0.0 },
            (true, false) => p[[r, s - m]],
            (false, true) => p[[s, r - m]],
        });
        let scale = hessian.diagonal().max();
        let mut ridge = 0.0;
        let step = loop {
            let mut h = hessian.clone();
            for k in 0..size {
                h[(k, k)] += ridge;
            }
            if let Some(chol) = h.cholesky() {
                break Some(chol.solve(&grad));
            }
            ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 10.0 };
            if ridge > scale {
                break None;
            }
        };
        let Some(step) = step else { break };
        let df = Array1::from_shape_fn(m, |i| step[i]);
        let dg = Array1::from_shape_fn(n, |j| if j + 1 < n { step[m + j] } else { 0.0 });
        let start = scaled_dual(&ce, a, b, &fs, &gs);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        while t > 1e-10 && !(scaled_dual(&ce, a, b, &(&fs + &(&df * t)), &(&gs + &(&dg * t))) >= start + 1e-4 * t * slope) {
            t *= 0.5;
        }
        if t <= 1e-10 {
            break;
        }
        fs.scaled_add(t, &df);
        gs.scaled_add(t, &dg);
        for i in 0..m {
            fs[i] = la[i] - log_sum_exp((0..n).map(|j| gs[j] - ce[[i, j]]));
        }
        for j in 0..n {
            gs[j] = lb[j] - log_sum_exp((0..m).map(|i| fs[i] - ce[[i, j]]));
        }
        violation = (0..m).fold(0.0f64, |acc, i| {
            acc.max((log_sum_exp((0..n).map(|j| fs[i] + gs[j] - ce[[i, j]])).exp() - a[i]).abs())
        });
    }
    *f = fs * eps;
    *g = gs * eps;
    violation
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::solve_exact_ot;
    use ndarray::array;

    fn cm(x: Array2<f64>) -> CostMatrix {
        CostMatrix::new(x).unwrap()
    }

    #[test]
    fn single_point_is_trivial() {
        for eps in [1e-3, 0.1, 10.0] {
            let plan = solve_sinkhorn(&cm(array![[0.0]]), &array![1.0], &array![1.0], eps, 1e-9, 100)
                .unwrap();
            assert!((plan.coupling()[[0, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_epsilon_approaches_exact_plan() {
        let c = cm(array![[0.0, 4.0], [1.0, 1.0]]);
        let h = array![0.5, 0.5];
        let exact = solve_exact_ot(&c, &h, &h).unwrap();
        let plan = solve_sinkhorn(&c, &h, &h, 0.01, 1e-9, 10_000).unwrap();
        for (x, y) in plan.coupling().iter().zip(exact.coupling().iter()) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn standard_kernel_reports_underflow() {
        let c = cm(array![[0.0, 1e4], [1e4, 0.0]]);
        let h = array![0.5, 0.5];
        let cfg = SinkhornConfig {
            epsilon: Some(1e-3),
            stabilization: Stabilization::Standard,
            ..SinkhornConfig::default()
        };
        // plain scaling still works here since the diagonal is zero; push it off
        let c2 = cm(array![[1e4, 2e4], [2e4, 1e4]]);
        let err = sinkhorn(&c2, &h, &h, &cfg).unwrap_err();
        assert!(matches!(err, Error::SinkhornUnderflow { .. }));
        assert!(err.to_string().contains("log-domain"));
        // auto mode routes to the stabilised kernel
        let auto = SinkhornConfig {
            stabilization: Stabilization::Auto,
            ..cfg
        };
        let sol = sinkhorn(&c2, &h, &h, &auto).unwrap();
        assert!(sol.log_domain);
        assert!(sol.marginal_violation < 1e-6);
        let _ = c;
    }

    #[test]
    fn auto_selects_log_domain_below_threshold() {
        let c = cm(array![[0.0, 1.0], [1.0, 0.0]]);
        let h = array![0.5, 0.5];
        let sol = sinkhorn(&c, &h, &h, &SinkhornConfig::with_epsilon(0.01)).unwrap();
        assert!(sol.log_domain);
        let sol = sinkhorn(&c, &h, &h, &SinkhornConfig::with_epsilon(0.5)).unwrap();
        assert!(!sol.log_domain);
    }

    #[test]
    fn both_kernels_agree() {
        let c = cm(array![[0.2, 1.3, 0.7], [0.9, 0.1, 0.4], [0.5, 0.6, 0.0]]);
        let a = array![0.2, 0.5, 0.3];
        let b = array![0.4, 0.4, 0.2];
        let mk = |s| SinkhornConfig {
            epsilon: Some(0.2),
            tol: 1e-13,
            max_iter: 10_000,
            stabilization: s,
        };
        let p1 = sinkhorn(&c, &a, &b, &mk(Stabilization::Standard)).unwrap();
        let p2 = sinkhorn(&c, &a, &b, &mk(Stabilization::LogDomain)).unwrap();
        for (x, y) in p1.plan.coupling().iter().zip(p2.plan.coupling().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_get_no_mass() {
        let c = cm(array![[0.0, 1.0], [1.0, 0.0]]);
        let a = array![0.0, 1.0];
        let b = array![0.5, 0.5];
        for s in [Stabilization::Standard, Stabilization::LogDomain] {
            let cfg = SinkhornConfig {
                epsilon: Some(0.5),
                stabilization: s,
                ..SinkhornConfig::default()
            };
            let sol = sinkhorn(&c, &a, &b, &cfg).unwrap();
            assert_eq!(sol.plan.coupling().row(0).sum(), 0.0);
            assert!(sol.marginal_violation < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_epsilon() {
        let c = cm(array![[0.0]]);
        assert!(solve_sinkhorn(&c, &array![1.0], &array![1.0], 0.0, 1e-6, 10).is_err());
        assert!(solve_sinkhorn(&c, &array![1.0], &array![1.0], -1.0, 1e-6, 10).is_err());
    }
}
