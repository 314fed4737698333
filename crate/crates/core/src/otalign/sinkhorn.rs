//! Entropic optimal transport by Sinkhorn-Knopp scaling.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornConfig {
    pub gamma: f64,
    /// Stop once the largest marginal violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterate on dual potentials instead of scaling vectors. Needed when
    /// `exp(-C/gamma)` underflows, typically gamma < 0.05 with costs near 6.
    pub log_domain: bool,
    /// Reach `gamma` through a halving schedule from the cost range,
    /// warm-starting each stage from the previous potentials. Implies the
    /// log domain. Needed for small gamma, where the plain iteration
    /// contracts too slowly to converge.
    pub anneal: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            gamma: 0.1,
            tol: 1e-6,
            max_iter: 500,
            log_domain: false,
            anneal: false,
        }
    }
}

impl SinkhornConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        SinkhornConfig {
            gamma,
            ..Self::default()
        }
    }
}

/// Coupling `T = diag(p) K diag(q)` with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl TransportPlan {
    /// `sum_ij T_ij C_ij`.
    pub fn cost(&self, cost: &Array2<f64>) -> f64 {
        (&self.plan * cost).sum()
    }

    /// Fixed coupling, e.g. a ground-truth 0/1 alignment, row-normalized so
    /// that row `i` carries mass `a_i`. Rows without any mark spread their
    /// mass uniformly.
    pub fn from_alignment(alignment: &Array2<f64>, a: &[f64]) -> Result<Self> {
        let (n, m) = alignment.dim();
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: a.len(),
            });
        }
        if alignment.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Precondition(
                "alignment entries must be finite and >= 0".into(),
            ));
        }
        let mut plan = alignment.clone();
        for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v * a[i] / s);
            } else {
                row.fill(a[i] / m as f64);
            }
        }
        let col_marginal = plan.sum_axis(ndarray::Axis(0)).to_vec();
        Ok(TransportPlan {
            plan,
            gamma: 0.0,
            iterations: 0,
            converged: true,
            marginal_violation: 0.0,
            row_marginal: a.to_vec(),
            col_marginal,
        })
    }
}

/// Mass-normalized uniform marginals `a = 1/n`, `b = 1/m`.
pub fn uniform_marginals(n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
}

fn check_inputs(cost: &Array2<f64>, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<()> {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(Error::Empty("cost matrix".into()));
    }
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.len(),
        });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: b.len(),
        });
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::Precondition(format!(
            "gamma must be positive, got {}",
            cfg.gamma
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Precondition(
            "cost matrix has non-finite entries".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Precondition(
            "marginals must be strictly positive".into(),
        ));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::Precondition(format!(
            "marginals carry different mass: {sa} vs {sb}"
        )));
    }
    Ok(())
}

/// Solve `min <T, C> - gamma H(T)` subject to `T 1 = a`, `T^T 1 = b`.
pub fn sinkhorn(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    check_inputs(cost, a, b, cfg)?;
    if cfg.anneal {
        sinkhorn_annealed(cost, a, b, cfg)
    } else if cfg.log_domain {
        sinkhorn_log(cost, a, b, cfg)
    } else {
        sinkhorn_scaling(cost, a, b, cfg)
    }
}

/// [`sinkhorn`] with uniform marginals.
pub fn sinkhorn_uniform(cost: &Array2<f64>, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (a, b) = uniform_marginals(cost.nrows(), cost.ncols());
    sinkhorn(cost, &a, &b, cfg)
}

fn sinkhorn_scaling(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    let gamma = cfg.gamma;
    let kernel: Vec<f64> = cost.iter().map(|c| (-c / gamma).exp()).collect();
    for i in 0..n {
        if kernel[i * m..(i + 1) * m].iter().all(|&k| k == 0.0) {
            return Err(Error::Underflow {
                gamma,
                detail: format!("kernel row {i} is all zero"),
            });
        }
    }
    for j in 0..m {
        if (0..n).all(|i| kernel[i * m + j] == 0.0) {
            return Err(Error::Underflow {
                gamma,
                detail: format!("kernel column {j} is all zero"),
            });
        }
    }

    let mut p = vec![1.0; n];
    let mut q = vec![1.0; m];
    let mut kq = vec![0.0; n];
    let mut ktp = vec![0.0; m];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        for i in 0..n {
            let row = &kernel[i * m..(i + 1) * m];
            kq[i] = row.iter().zip(&q).map(|(k, q)| k * q).sum();
            p[i] = a[i] / kq[i];
        }
        ktp.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let row = &kernel[i * m..(i + 1) * m];
            for j in 0..m {
                ktp[j] += row[j] * p[i];
            }
        }
        for j in 0..m {
            q[j] = b[j] / ktp[j];
        }
        if p.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::Underflow {
                gamma,
                detail: format!("scaling vectors overflowed at iteration {iterations}"),
            });
        }
        // columns match b exactly after the q update; rows drift
        violation = 0.0;
        for i in 0..n {
            let row = &kernel[i * m..(i + 1) * m];
            let s: f64 = row.iter().zip(&q).map(|(k, q)| k * q).sum::<f64>() * p[i];
            violation = f64::max(violation, (s - a[i]).abs());
        }
        if violation < cfg.tol {
            break;
        }
    }
    let plan = Array2::from_shape_fn((n, m), |(i, j)| p[i] * kernel[i * m + j] * q[j]);
    Ok(finish(plan, gamma, iterations, violation, cfg.tol))
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct LogState<'a> {
    cost: &'a Array2<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> LogState<'a> {
    fn new(cost: &'a Array2<f64>, a: &[f64], b: &[f64]) -> Self {
        let (n, m) = cost.dim();
        LogState {
            cost,
            log_a: a.iter().map(|v| v.ln()).collect(),
            log_b: b.iter().map(|v| v.ln()).collect(),
            f: vec![0.0; n],
            g: vec![0.0; m],
        }
    }

    /// One exact update of both potentials at `gamma`.
    fn log_step(&mut self, gamma: f64) {
        let (n, m) = self.cost.dim();
        let cost = self.cost;
        for i in 0..n {
            let g = &self.g;
            let lse = logsumexp((0..m).map(|j| (g[j] - cost[[i, j]]) / gamma));
            self.f[i] = gamma * (self.log_a[i] - lse);
        }
        for j in 0..m {
            let f = &self.f;
            let lse = logsumexp((0..n).map(|i| (f[i] - cost[[i, j]]) / gamma));
            self.g[j] = gamma * (self.log_b[j] - lse);
        }
    }

    /// Sinkhorn at `gamma` until the row violation drops below `tol`;
    /// returns iterations used and the final violation. Scaling runs on the
    /// kernel `exp((f_i + g_j - C_ij) / gamma)`, and the scalings are folded
    /// into the potentials whenever they leave a safe range.
    fn run(&mut self, gamma: f64, tol: f64, max_iter: usize) -> (usize, f64) {
        const ABSORB: f64 = 1e30;
        let (n, m) = self.cost.dim();
        let a: Vec<f64> = self.log_a.iter().map(|v| v.exp()).collect();
        let b: Vec<f64> = self.log_b.iter().map(|v| v.exp()).collect();
        let mut violation = f64::INFINITY;
        let mut iterations = 0;
        while iterations < max_iter {
            self.log_step(gamma);
            iterations += 1;
            let kernel = self.plan(gamma);
            let mut u = vec![1.0; n];
            let mut v = vec![1.0; m];
            let mut ktu = vec![0.0; m];
            loop {
                violation = 0.0;
                for i in 0..n {
                    let s: f64 = kernel
                        .row(i)
                        .iter()
                        .zip(&v)
                        .map(|(k, v)| k * v)
                        .sum::<f64>();
                    violation = f64::max(violation, (s * u[i] - a[i]).abs());
                    u[i] = a[i] / s;
                }
                if violation < tol || iterations >= max_iter {
                    break;
                }
                iterations += 1;
                ktu.iter_mut().for_each(|x| *x = 0.0);
                for i in 0..n {
                    for (x, k) in ktu.iter_mut().zip(kernel.row(i)) {
                        *x += k * u[i];
                    }
                }
                for j in 0..m {
                    v[j] = b[j] / ktu[j];
                }
                let wild = |x: &f64| !(x.is_finite() && *x < ABSORB && *x > 1.0 / ABSORB);
                if u.iter().chain(&v).any(wild) {
                    break;
                }
            }
            // the last u update broke exact column marginals; recheck once
            // the scalings are folded in
            for (f, u) in self.f.iter_mut().zip(&u) {
                *f += gamma * u.ln();
            }
            for (g, v) in self.g.iter_mut().zip(&v) {
                *g += gamma * v.ln();
            }
            if violation < tol {
                let plan = self.plan(gamma);
                violation = marginal_violation(&plan, &a, &b);
                if violation < tol {
                    break;
                }
            }
        }
        (iterations, violation)
    }

    fn plan(&self, gamma: f64) -> Array2<f64> {
        Array2::from_shape_fn(self.cost.dim(), |(i, j)| {
            ((self.f[i] + self.g[j] - self.cost[[i, j]]) / gamma).exp()
        })
    }
}

fn sinkhorn_log(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let mut state = LogState::new(cost, a, b);
    let (iterations, violation) = state.run(cfg.gamma, cfg.tol, cfg.max_iter);
    Ok(finish(
        state.plan(cfg.gamma),
        cfg.gamma,
        iterations,
        violation,
        cfg.tol,
    ))
}

fn sinkhorn_annealed(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let range = cost.iter().fold(f64::NEG_INFINITY, |x, &c| x.max(c))
        - cost.iter().fold(f64::INFINITY, |x, &c| x.min(c));
    let mut schedule = vec![cfg.gamma];
    let mut g = cfg.gamma;
    while g < range {
        g *= 2.0;
        schedule.push(g);
    }
    let mut state = LogState::new(cost, a, b);
    let mut total = 0;
    let mut violation = f64::INFINITY;
    for &gamma in schedule.iter().rev() {
        let (it, v) = state.run(gamma, cfg.tol, cfg.max_iter);
        total += it;
        violation = v;
    }
    Ok(finish(
        state.plan(cfg.gamma),
        cfg.gamma,
        total,
        violation,
        cfg.tol,
    ))
}

fn marginal_violation(plan: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let rows = plan.sum_axis(ndarray::Axis(1));
    let cols = plan.sum_axis(ndarray::Axis(0));
    rows.iter()
        .zip(a)
        .chain(cols.iter().zip(b))
        .map(|(s, t)| (s - t).abs())
        .fold(0.0, f64::max)
}

fn finish(
    plan: Array2<f64>,
    gamma: f64,
    iterations: usize,
    violation: f64,
    tol: f64,
) -> TransportPlan {
    let row_marginal = plan.sum_axis(ndarray::Axis(1)).to_vec();
    let col_marginal = plan.sum_axis(ndarray::Axis(0)).to_vec();
    TransportPlan {
        plan,
        gamma,
        iterations,
        converged: violation < tol,
        marginal_violation: violation,
        row_marginal,
        col_marginal,
    }
}

/// Gradient of the entropic objective `<T,C> - gamma H(T)` at the optimum,
/// which is the plan itself.
pub fn envelope_gradient(plan: &TransportPlan) -> Array2<f64> {
    plan.plan.clone()
}

/// Exact gradient of the transport cost `<T(C), C>` with respect to `C`,
/// differentiating the Sinkhorn fixed point implicitly.
///
/// With `T = exp((f + g - C) / gamma)` and fixed marginals, the adjoint
/// system `A [lambda; mu] = [rowsum(M); colsum(M)]`, `M = C * T / gamma`,
/// `A = [[diag(a), T], [T^T, diag(b)]]` gives
/// `grad = T - M + T * (lambda_i + mu_j)`. `A` has a one-dimensional gauge
/// null space, removed by pinning `mu_m = 0`.
pub fn transport_cost_gradient(cost: &Array2<f64>, plan: &TransportPlan) -> Result<Array2<f64>> {
    let t = &plan.plan;
    let (n, m) = t.dim();
    if cost.dim() != (n, m) {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            actual: cost.len(),
        });
    }
    let gamma = plan.gamma;
    if !(gamma > 0.0) {
        return Err(Error::Precondition(
            "plan was not produced by an entropic solver".into(),
        ));
    }
    let mm = cost * t / gamma;
    let rows = t.sum_axis(ndarray::Axis(1));
    let cols = t.sum_axis(ndarray::Axis(0));
    let size = n + m - 1;
    let mut sys = vec![0.0; size * size];
    let mut rhs = vec![0.0; size];
    for i in 0..n {
        sys[i * size + i] = rows[i];
        for j in 0..m - 1 {
            sys[i * size + n + j] = t[[i, j]];
        }
        rhs[i] = mm.row(i).sum();
    }
    for j in 0..m - 1 {
        let r = n + j;
        for i in 0..n {
            sys[r * size + i] = t[[i, j]];
        }
        sys[r * size + r] = cols[j];
        rhs[r] = mm.column(j).sum();
    }
    let sol = solve_dense(&mut sys, &mut rhs, size)?;
    let lambda = &sol[..n];
    let mu: Vec<f64> = sol[n..]
        .iter()
        .copied()
        .chain(std::iter::once(0.0))
        .collect();
    Ok(Array2::from_shape_fn((n, m), |(i, j)| {
        t[[i, j]] - mm[[i, j]] + t[[i, j]] * (lambda[i] + mu[j])
    }))
}

// Gaussian elimination with partial pivoting; `sys` is row-major size x size.
fn solve_dense(sys: &mut [f64], rhs: &mut [f64], size: usize) -> Result<Vec<f64>> {
    for col in 0..size {
        let pivot = (col..size)
            .max_by(|&r1, &r2| {
                sys[r1 * size + col]
                    .abs()
                    .total_cmp(&sys[r2 * size + col].abs())
            })
            .expect("non-empty");
        if sys[pivot * size + col].abs() < 1e-300 {
            return Err(Error::Precondition(
                "singular adjoint system (degenerate plan)".into(),
            ));
        }
        if pivot != col {
            for k in 0..size {
                sys.swap(col * size + k, pivot * size + k);
            }
            rhs.swap(col, pivot);
        }
        let d = sys[col * size + col];
        for r in col + 1..size {
            let factor = sys[r * size + col] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..size {
                sys[r * size + k] -= factor * sys[col * size + k];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; size];
    for r in (0..size).rev() {
        let mut s = rhs[r];
        for k in r + 1..size {
            s -= sys[r * size + k] * x[k];
        }
        x[r] = s / sys[r * size + r];
    }
    Ok(x)
}
