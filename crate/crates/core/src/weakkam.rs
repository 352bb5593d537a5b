//! Discounted Hamilton-Jacobi solvers: variational Lax-Oleinik value
//! iteration for fiberwise-convex H, a monotone Lax-Friedrichs
//! finite-difference scheme for general H, viscosity verification, the
//! vanishing-discount driver, and the generic varying-contraction iterator.

use crate::models::{HamiltonianModel, ModelError, ModelKind};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeakKamError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("iteration cap {0} exceeded before convergence (last sup-change {1:.3e})")]
    Convergence(usize, f64),
    #[error("FD scheme not monotone: sigma = {sigma} below the Lipschitz bound {bound:.6} for |p| <= {p_bound}")]
    Monotonicity { sigma: f64, bound: f64, p_bound: f64 },
    #[error("FD iteration diverging: sup-change grew for 10 consecutive sweeps (last {0:.3e})")]
    Divergence(f64),
    #[error("Mane critical value guard failed: max_x min_p H = {0:.4} (need |.| <= 0.05)")]
    NormalizationGuard(f64),
}

/// Periodic scalar function on a uniform grid: values u_i at x_i = i*period/n.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub n: usize,
    pub period: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize, period: f64) -> Self {
        assert!(n >= 16, "grid must have n >= 16 cells");
        Self {
            n,
            period,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(period: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 16);
        assert!(values.iter().all(|v| v.is_finite()));
        Self {
            n: values.len(),
            period,
            values,
        }
    }

    pub fn h(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    #[inline]
    pub fn at(&self, i: isize) -> f64 {
        self.values[i.rem_euclid(self.n as isize) as usize]
    }

    pub fn sup_dist(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.n, other.n);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Centered difference derivative at node i.
    pub fn d_central(&self, i: usize) -> f64 {
        let i = i as isize;
        (self.at(i + 1) - self.at(i - 1)) / (2.0 * self.h())
    }

    /// Linear prolongation to a grid twice as fine.
    pub fn prolong(&self) -> GridFunction {
        let mut v = Vec::with_capacity(2 * self.n);
        for i in 0..self.n {
            let a = self.values[i];
            let b = self.values[(i + 1) % self.n];
            v.push(a);
            v.push(0.5 * (a + b));
        }
        GridFunction::from_values(self.period, v)
    }

    /// CSV export `x,u,du_minus,du_plus`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,u,du_minus,du_plus\n");
        for i in 0..self.n {
            let (dm, dp) = one_sided_derivatives(self, i);
            s.push_str(&format!(
                "{},{},{},{}\n",
                crate::util::fmt_f64(self.x(i)),
                crate::util::fmt_f64(self.values[i]),
                crate::util::fmt_f64(dm),
                crate::util::fmt_f64(dp)
            ));
        }
        s
    }
}

/// Solver report; the residual is recomputed from the returned u, never
/// trusted from the iteration loop.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub sup_change: f64,
    /// Sup over differentiability nodes (>= 3 cells from a kink) of
    /// |alpha*u + H(x, D_c u)|.
    pub residual: f64,
    /// Kink representative locations (x values).
    pub kinks: Vec<f64>,
    /// Kink representative node indices.
    pub kink_indices: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Discounted Lax-Oleinik operator
// ---------------------------------------------------------------------------

/// Candidate-cost table of the one-step operator
/// T u(q_j) = min_m [ e^{-a tau} u(q_j - m h/4)
///                    + tau e^{-a tau/2} L(q_j - m h/8, m h/(4 tau)) ],
/// with u off-lattice values by linear interpolation. The candidate set is a
/// fixed u-independent quarter-cell sub-lattice, which makes the operator
/// exactly monotone and an exact e^{-a tau} sup-norm contraction (each
/// candidate cost is affine in u with nonnegative coefficients summing to
/// e^{-a tau}).
pub struct LoOperator {
    pub n: usize,
    pub period: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Candidate index range m in [-w, w].
    pub w: usize,
    pub etau: f64,
    cost: CostTable,
}

enum CostTable {
    /// Pendulum-family shortcut: L(x, v) = v^2/2 + W(x); cost(j, m) =
    /// kinetic[m+w] + potential8[(8j - m) mod 8n], both prescaled by
    /// tau e^{-a tau/2}.
    Separable {
        kinetic: Vec<f64>,
        potential8: Vec<f64>,
    },
    /// Full table lt[k8 * (2w+1) + (m+w)] = tau e^{-a tau/2} L(x_k8, v_m)
    /// for generic fiberwise-convex (tabulated) models.
    Full { lt: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
pub struct LoConfig {
    pub n: usize,
    pub tau: f64,
    pub tol: f64,
    pub v_max: f64,
    pub max_iter: usize,
    pub workers: usize,
}

impl Default for LoConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            tau: 0.05,
            tol: 1e-6,
            v_max: 6.0,
            max_iter: 100_000,
            workers: 1,
        }
    }
}

impl LoOperator {
    pub fn build(
        model: &HamiltonianModel,
        alpha: f64,
        n: usize,
        tau: f64,
        v_max: f64,
    ) -> Result<Self, WeakKamError> {
        if !(tau > 0.0 && tau <= 0.2) {
            return Err(WeakKamError::Config("tau must be in (0, 0.2]".into()));
        }
        if n < 16 {
            return Err(WeakKamError::Config("n >= 16 required".into()));
        }
        let period = model.period();
        if v_max * tau > period / 2.0 {
            return Err(WeakKamError::Config(format!(
                "candidate window v_max*tau = {} exceeds half the period {}",
                v_max * tau,
                period / 2.0
            )));
        }
        if !model.fiberwise_convex() {
            return Err(WeakKamError::Model(ModelError::Unsupported(
                "Lax-Oleinik requires a fiberwise-convex model; use the FD solver",
            )));
        }
        let h = period / n as f64;
        let w = (v_max * tau / (h / 4.0)).floor() as usize;
        let w = w.max(4);
        let etau = (-alpha * tau).exp();
        // Exact one-step discount integral int_{-tau}^0 e^{alpha s} ds: agrees
        // with the midpoint factor tau e^{-alpha tau/2} to O(tau^3) but makes
        // constant solutions (u = c/alpha) exact fixed points.
        let lam = if alpha > 0.0 {
            (1.0 - etau) / alpha
        } else {
            tau
        };
        let cost = match &model.kind {
            ModelKind::Pendulum | ModelKind::AppendixPendulum | ModelKind::FreeWithConstant { .. } => {
                let kinetic: Vec<f64> = (0..=2 * w)
                    .map(|k| {
                        let m = k as isize - w as isize;
                        let v = m as f64 * (h / 4.0) / tau;
                        lam * 0.5 * v * v
                    })
                    .collect();
                let n8 = 8 * n;
                let potential8: Vec<f64> = (0..n8)
                    .map(|k| {
                        let x = k as f64 * h / 8.0;
                        // L(x, 0) = W(x) for quadratic kinetic energy.
                        lam * model.legendre(x, 0.0).unwrap()
                    })
                    .collect();
                CostTable::Separable {
                    kinetic,
                    potential8,
                }
            }
            ModelKind::Tabulated(t) => {
                // Fast discrete Legendre conjugate per midpoint: the argmax
                // p-index is nondecreasing in v, giving O(np + 2w) per x;
                // 3-point parabolic refinement removes the O(dp) grid bias.
                let n8 = 8 * n;
                let nm = 2 * w + 1;
                let mut lt = vec![0.0; n8 * nm];
                let mut g = vec![0.0; t.np];
                let mut col = vec![0.0; t.np];
                for k8 in 0..n8 {
                    let x = k8 as f64 * h / 8.0;
                    for (j, c) in col.iter_mut().enumerate() {
                        let p = t.p0 + j as f64 * t.dp;
                        *c = t.eval_with_partials(x, p).map_err(ModelError::from)?.0;
                    }
                    let mut kp = 0usize;
                    for mi in 0..nm {
                        let m = mi as isize - w as isize;
                        let v = m as f64 * (h / 4.0) / tau;
                        for (j, c) in col.iter().enumerate() {
                            g[j] = (t.p0 + j as f64 * t.dp) * v - *c;
                        }
                        if mi == 0 {
                            kp = g
                                .iter()
                                .enumerate()
                                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                                .unwrap()
                                .0;
                        } else {
                            while kp + 1 < t.np && g[kp + 1] >= g[kp] {
                                kp += 1;
                            }
                        }
                        let mut val = g[kp];
                        if kp > 0 && kp + 1 < t.np {
                            let (gm, g0, gp) = (g[kp - 1], g[kp], g[kp + 1]);
                            let den = 2.0 * g0 - gm - gp;
                            if den > 0.0 {
                                val = g0 + (gp - gm) * (gp - gm) / (8.0 * den);
                            }
                        }
                        lt[k8 * nm + mi] = lam * val;
                    }
                }
                CostTable::Full { lt }
            }
            ModelKind::Perturbed { .. } => unreachable!("rejected by convexity check"),
        };
        Ok(Self {
            n,
            period,
            tau,
            alpha,
            w,
            etau,
            cost,
        })
    }

    /// One operator application: frozen input, fresh output.
    pub fn apply(&self, u: &GridFunction, workers: usize) -> GridFunction {
        assert_eq!(u.n, self.n);
        let n = self.n;
        let n4 = 4 * n;
        let n8 = 8 * n;
        // Quarter-lattice interpolant of u, prescaled by the discount.
        let mut u4 = vec![0.0; n4];
        for j in 0..n {
            let a = u.values[j];
            let b = u.values[(j + 1) % n];
            let base = 4 * j;
            u4[base] = self.etau * a;
            u4[base + 1] = self.etau * (0.75 * a + 0.25 * b);
            u4[base + 2] = self.etau * (0.5 * a + 0.5 * b);
            u4[base + 3] = self.etau * (0.25 * a + 0.75 * b);
        }
        let w = self.w as isize;
        let nm = 2 * self.w + 1;
        let job = |j: usize| -> f64 {
            let mut best = f64::INFINITY;
            match &self.cost {
                CostTable::Separable {
                    kinetic,
                    potential8,
                } => {
                    for mi in 0..nm {
                        let m = mi as isize - w;
                        let i4 = (4 * j as isize - m).rem_euclid(n4 as isize) as usize;
                        let i8 = (8 * j as isize - m).rem_euclid(n8 as isize) as usize;
                        let c = u4[i4] + kinetic[mi] + potential8[i8];
                        if c < best {
                            best = c;
                        }
                    }
                }
                CostTable::Full { lt } => {
                    for mi in 0..nm {
                        let m = mi as isize - w;
                        let i4 = (4 * j as isize - m).rem_euclid(n4 as isize) as usize;
                        let i8 = (8 * j as isize - m).rem_euclid(n8 as isize) as usize;
                        let c = u4[i4] + lt[i8 * nm + mi];
                        if c < best {
                            best = c;
                        }
                    }
                }
            }
            best
        };
        let values = crate::util::parallel_map(n, workers, job);
        GridFunction::from_values(u.period, values)
    }
}

/// One discounted Lax-Oleinik step with default window (v_max = 6).
pub fn lax_oleinik_step(
    model: &HamiltonianModel,
    alpha: f64,
    u: &GridFunction,
    tau: f64,
) -> Result<GridFunction, WeakKamError> {
    let op = LoOperator::build(model, alpha, u.n, tau, 6.0)?;
    Ok(op.apply(u, 1))
}

/// Iterate the Lax-Oleinik operator from u = 0 to its unique fixed point.
pub fn solve_discounted_lo(
    model: &HamiltonianModel,
    alpha: f64,
    cfg: &LoConfig,
) -> Result<(GridFunction, SolveReport), WeakKamError> {
    if cfg.tol <= 0.0 {
        return Err(WeakKamError::Config("tol must be positive".into()));
    }
    let op = LoOperator::build(model, alpha, cfg.n, cfg.tau, cfg.v_max)?;
    let mut u = GridFunction::zeros(cfg.n, model.period());
    let stop = cfg.tol * (1.0 - op.etau);
    let mut change = f64::INFINITY;
    let mut iters = 0;
    while change > stop {
        if iters >= cfg.max_iter {
            return Err(WeakKamError::Convergence(cfg.max_iter, change));
        }
        let next = op.apply(&u, cfg.workers);
        change = next.sup_dist(&u);
        u = next;
        iters += 1;
    }
    let report = make_report(model, alpha, &u, iters, change)?;
    Ok((u, report))
}

// ---------------------------------------------------------------------------
// Lax-Friedrichs finite-difference solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    pub n: usize,
    pub sigma: f64,
    pub tol: f64,
    /// Momentum bound used for the Lipschitz check of sigma.
    pub p_bound: f64,
    pub max_sweeps: usize,
    /// Coarse-to-fine initialization from n = 64 (grids doubling up).
    pub cascadic: bool,
    pub workers: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            sigma: 3.0,
            tol: 1e-6,
            p_bound: 3.0,
            max_sweeps: 2_000_000,
            cascadic: true,
            workers: 1,
        }
    }
}

fn fd_sweeps(
    model: &HamiltonianModel,
    alpha: f64,
    u: &mut GridFunction,
    cfg: &FdConfig,
    budget: usize,
) -> Result<(usize, f64), WeakKamError> {
    let n = u.n;
    let h = u.h();
    let delta = h / (2.0 * cfg.sigma + alpha * h);
    // Converged when the per-sweep change guarantees distance <= tol to the
    // fixed point: change / (alpha * delta) <= tol.
    let stop = cfg.tol * alpha * delta;
    let mut change = f64::INFINITY;
    let mut prev_change = f64::INFINITY;
    let mut growing = 0;
    let mut sweeps = 0;
    let xs: Vec<f64> = (0..n).map(|i| u.x(i)).collect();
    let mut next = vec![0.0; n];
    while change > stop {
        if sweeps >= budget {
            return Err(WeakKamError::Convergence(budget, change));
        }
        {
            let vals = &u.values;
            let job = |i: usize| -> f64 {
                let up = vals[(i + 1) % n];
                let um = vals[(i + n - 1) % n];
                let ui = vals[i];
                let dc = (up - um) / (2.0 * h);
                let visc = cfg.sigma * (up - 2.0 * ui + um) / (2.0 * h);
                let hval = model.eval(xs[i], dc).unwrap_or(f64::NAN);
                ui - delta * (alpha * ui + hval - visc)
            };
            if cfg.workers > 1 {
                next = crate::util::parallel_map(n, cfg.workers, job);
            } else {
                for (i, slot) in next.iter_mut().enumerate() {
                    *slot = job(i);
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(WeakKamError::Divergence(change));
        }
        change = next
            .iter()
            .zip(&u.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut u.values, &mut next);
        sweeps += 1;
        if change > prev_change {
            growing += 1;
            if growing >= 10 {
                return Err(WeakKamError::Divergence(change));
            }
        } else {
            growing = 0;
        }
        prev_change = change;
    }
    Ok((sweeps, change))
}

/// Monotone Lax-Friedrichs pseudo-time iteration
/// u_i <- u_i - Delta [ alpha u_i + H(x_i, (u_{i+1}-u_{i-1})/(2h))
///                      - sigma (u_{i+1}-2u_i+u_{i-1})/(2h) ],
/// Delta = h/(2 sigma + alpha h). Refuses sigma below the Lipschitz bound
/// (the scheme would lose monotonicity).
pub fn solve_discounted_fd(
    model: &HamiltonianModel,
    alpha: f64,
    cfg: &FdConfig,
) -> Result<(GridFunction, SolveReport), WeakKamError> {
    if cfg.tol <= 0.0 || alpha <= 0.0 {
        return Err(WeakKamError::Config("tol and alpha must be positive".into()));
    }
    let bound = model.dp_bound(cfg.p_bound);
    if cfg.sigma < bound * (1.0 - 1e-12) {
        return Err(WeakKamError::Monotonicity {
            sigma: cfg.sigma,
            bound,
            p_bound: cfg.p_bound,
        });
    }
    let period = model.period();
    let mut total_sweeps = 0;
    #[allow(unused_assignments)]
    let mut last_change = 0.0;
    let mut u;
    if cfg.cascadic && cfg.n > 64 && cfg.n % 64 == 0 && (cfg.n / 64).is_power_of_two() {
        let mut level_n = 64;
        u = GridFunction::zeros(level_n, period);
        loop {
            let mut level_cfg = *cfg;
            level_cfg.n = level_n;
            let (s, c) = fd_sweeps(model, alpha, &mut u, &level_cfg, cfg.max_sweeps)?;
            total_sweeps += s;
            last_change = c;
            if level_n == cfg.n {
                break;
            }
            u = u.prolong();
            level_n *= 2;
        }
    } else {
        u = GridFunction::zeros(cfg.n, period);
        let (s, c) = fd_sweeps(model, alpha, &mut u, cfg, cfg.max_sweeps)?;
        total_sweeps = s;
        last_change = c;
    }
    let report = make_report(model, alpha, &u, total_sweeps, last_change)?;
    Ok((u, report))
}

// ---------------------------------------------------------------------------
// One-sided derivatives, kinks, viscosity check
// ---------------------------------------------------------------------------

/// One-sided derivative limits at node i by 3-point stencils with stride-2
/// Richardson extrapolation; at smooth points both equal u'(x_i) to O(h^2).
pub fn one_sided_derivatives(u: &GridFunction, i: usize) -> (f64, f64) {
    let h = u.h();
    let i = i as isize;
    let dl1 = (3.0 * u.at(i) - 4.0 * u.at(i - 1) + u.at(i - 2)) / (2.0 * h);
    let dl2 = (3.0 * u.at(i) - 4.0 * u.at(i - 2) + u.at(i - 4)) / (4.0 * h);
    let dr1 = (-3.0 * u.at(i) + 4.0 * u.at(i + 1) - u.at(i + 2)) / (2.0 * h);
    let dr2 = (-3.0 * u.at(i) + 4.0 * u.at(i + 2) - u.at(i + 4)) / (4.0 * h);
    ((4.0 * dl1 - dl2) / 3.0, (4.0 * dr1 - dr2) / 3.0)
}

/// A detected kink: a cluster of adjacent above-threshold nodes, represented
/// by its largest-jump node, with one-sided derivatives measured just outside
/// the cluster.
#[derive(Debug, Clone, Serialize)]
pub struct Kink {
    pub index: usize,
    pub x: f64,
    pub du_minus: f64,
    pub du_plus: f64,
    /// Cluster extent [first, last] node indices (may wrap).
    pub first: usize,
    pub last: usize,
}

/// Detect kink clusters: nodes where |u'_+ - u'_-| exceeds
/// max(10 sqrt(h), 20 * median jump), merged when within 2 cells.
pub fn detect_kinks(u: &GridFunction) -> Vec<Kink> {
    let n = u.n;
    let h = u.h();
    // One-sided limits measured with a 3-cell guard on each side (left limit
    // at node i-3, right limit at i+3): viscosity solvers smear kinks over a
    // few cells, and stencils touching the smeared core see no jump at all.
    let jumps: Vec<f64> = (0..n)
        .map(|i| {
            let i = i as isize;
            let (dm, _) = one_sided_derivatives(u, (i - 3).rem_euclid(n as isize) as usize);
            let (_, dp) = one_sided_derivatives(u, (i + 3).rem_euclid(n as isize) as usize);
            (dp - dm).abs()
        })
        .collect();
    let mut sorted = jumps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[n / 2];
    let thr = (10.0 * h.sqrt()).max(20.0 * median);
    let flagged: Vec<usize> = (0..n).filter(|&i| jumps[i] > thr).collect();
    if flagged.is_empty() {
        return Vec::new();
    }
    // Cluster flagged nodes with gap <= 2 (periodic).
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for &i in &flagged {
        match clusters.last_mut() {
            Some((_, last)) if i <= *last + 2 => *last = i,
            _ => clusters.push((i, i)),
        }
    }
    // Periodic merge of first and last clusters.
    if clusters.len() > 1 {
        let (f0, _) = clusters[0];
        let (_, l_end) = *clusters.last().unwrap();
        if f0 + n <= l_end + 2 {
            let (first_start, _) = clusters.remove(0);
            let last = clusters.last_mut().unwrap();
            last.1 = first_start + n;
        }
    }
    clusters
        .into_iter()
        .map(|(a, b)| {
            // Midpoint representative: for a (possibly smeared) kink the
            // flagged cluster is symmetric about the true location.
            let rep = ((a + b) / 2) % n;
            // One-sided limits measured just outside the cluster: left limit
            // at the cluster's left edge, right limit at its right edge.
            let (dm, _) = one_sided_derivatives(u, (a + n - 3) % n);
            let (_, dp) = one_sided_derivatives(u, (b + 3) % n);
            Kink {
                index: rep,
                x: u.x(rep),
                du_minus: dm,
                du_plus: dp,
                first: a % n,
                last: b % n,
            }
        })
        .collect()
}

fn make_report(
    model: &HamiltonianModel,
    alpha: f64,
    u: &GridFunction,
    iterations: usize,
    sup_change: f64,
) -> Result<SolveReport, WeakKamError> {
    let kinks = detect_kinks(u);
    let n = u.n;
    let mut excluded = vec![false; n];
    for k in &kinks {
        // Exclude the cluster plus a 3-cell margin: discrete solutions smear
        // the kink over a few cells on each side.
        let (a, b) = (k.first as isize - 3, {
            let b = if k.last >= k.first {
                k.last
            } else {
                k.last + n
            };
            b as isize + 3
        });
        for i in a..=b {
            excluded[i.rem_euclid(n as isize) as usize] = true;
        }
    }
    let mut residual: f64 = 0.0;
    for i in 0..n {
        if excluded[i] {
            continue;
        }
        let g = alpha * u.values[i] + model.eval(u.x(i), u.d_central(i))?;
        residual = residual.max(g.abs());
    }
    Ok(SolveReport {
        iterations,
        sup_change,
        residual,
        kinks: kinks.iter().map(|k| k.x).collect(),
        kink_indices: kinks.iter().map(|k| k.index).collect(),
    })
}

/// Viscosity verification report.
#[derive(Debug, Clone, Serialize)]
pub struct ViscosityReport {
    pub pass: bool,
    pub kinks: Vec<Kink>,
    /// Worst |G| at smooth nodes.
    pub worst_smooth: f64,
    /// Worst signed violation at kinks (positive = violated).
    pub worst_kink_violation: f64,
    /// Witness (x, p, G value) of the worst kink violation, if any.
    pub witness: Option<(f64, f64, f64)>,
}

/// Check the viscosity inequalities of G(x, p, u(x)) against u: at downward
/// kinks (u'_- > u'_+, superdifferential [u'_+, u'_-]) require max G <= tol;
/// at upward kinks require min G >= -tol; at smooth nodes require |G| <= tol.
pub fn check_viscosity<G: Fn(f64, f64, f64) -> f64>(
    u: &GridFunction,
    g: G,
    tol: f64,
) -> ViscosityReport {
    let kinks = detect_kinks(u);
    let n = u.n;
    let mut excluded = vec![false; n];
    for k in &kinks {
        let b = if k.last >= k.first {
            k.last
        } else {
            k.last + n
        };
        for i in (k.first as isize - 3)..=(b as isize + 3) {
            excluded[i.rem_euclid(n as isize) as usize] = true;
        }
    }
    let mut worst_smooth: f64 = 0.0;
    for i in 0..n {
        if excluded[i] {
            continue;
        }
        let v = g(u.x(i), u.d_central(i), u.values[i]).abs();
        worst_smooth = worst_smooth.max(v);
    }
    let mut worst_kink: f64 = f64::NEG_INFINITY;
    let mut witness = None;
    for k in &kinks {
        let (lo, hi) = if k.du_minus > k.du_plus {
            (k.du_plus, k.du_minus)
        } else {
            (k.du_minus, k.du_plus)
        };
        let downward = k.du_minus > k.du_plus;
        let m = 128;
        for s in 0..=m {
            let p = lo + (hi - lo) * s as f64 / m as f64;
            let val = g(k.x, p, u.values[k.index]);
            // Violation magnitude: G > tol at a downward kink, G < -tol at
            // an upward kink.
            let violation = if downward { val } else { -val };
            if violation > worst_kink {
                worst_kink = violation;
                witness = Some((k.x, p, val));
            }
        }
    }
    let kink_viol = if kinks.is_empty() {
        0.0
    } else {
        worst_kink
    };
    ViscosityReport {
        pass: worst_smooth <= tol && kink_viol <= tol,
        kinks,
        worst_smooth,
        worst_kink_violation: kink_viol,
        witness,
    }
}

// ---------------------------------------------------------------------------
// Vanishing-discount driver
// ---------------------------------------------------------------------------

/// Estimate the Mane critical value max_x min_p H on a scan grid.
pub fn critical_value_estimate(model: &HamiltonianModel) -> Result<f64, WeakKamError> {
    let per = model.period();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..512 {
        let x = per * i as f64 / 512.0;
        let mut best = f64::INFINITY;
        for j in 0..=600 {
            let p = -3.0 + j as f64 / 100.0;
            if let Ok(v) = model.eval(x, p) {
                best = best.min(v);
            }
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// Solve u_alpha for a descending alpha list and report consecutive sup-gaps.
/// Requires the model to be Mane-normalized (|max_x min_p H| <= 0.05).
pub fn vanishing_discount_driver(
    model: &HamiltonianModel,
    alphas: &[f64],
    cfg: &LoConfig,
) -> Result<(Vec<(f64, GridFunction)>, Vec<f64>), WeakKamError> {
    if alphas.len() < 3 {
        return Err(WeakKamError::Config("need >= 3 alpha values".into()));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(WeakKamError::Config("alpha list must be descending".into()));
    }
    let c = critical_value_estimate(model)?;
    if c.abs() > 0.05 {
        return Err(WeakKamError::NormalizationGuard(c));
    }
    let mut out = Vec::new();
    for &a in alphas {
        let (u, _) = solve_discounted_lo(model, a, cfg)?;
        out.push((a, u));
    }
    let gaps: Vec<f64> = out.windows(2).map(|w| w[0].1.sup_dist(&w[1].1)).collect();
    Ok((out, gaps))
}

// ---------------------------------------------------------------------------
// Varying-contraction driver
// ---------------------------------------------------------------------------

/// Compose x_{k} = T_k(x_{k-1}) for uniformly contracting maps T_k -> T_inf;
/// returns the final iterate and the per-step distance sequence. Stops when
/// the step distance drops below tol; errors if the cap is hit first.
pub fn iterate_varying_contractions<X, T, D>(
    x0: X,
    t: T,
    d: D,
    tol: f64,
    cap: usize,
) -> Result<(X, Vec<f64>), WeakKamError>
where
    X: Clone,
    T: Fn(usize, &X) -> X,
    D: Fn(&X, &X) -> f64,
{
    let mut x = x0;
    let mut dists = Vec::new();
    for k in 1..=cap {
        let next = t(k, &x);
        let step = d(&next, &x);
        dists.push(step);
        x = next;
        // Require a few consecutive small steps so a slow-moving offset
        // sequence cannot fake convergence with one small step.
        if dists.len() >= 3 && dists.iter().rev().take(3).all(|&s| s < tol) {
            return Ok((x, dists));
        }
    }
    let last = *dists.last().unwrap_or(&f64::INFINITY);
    Err(WeakKamError::Convergence(cap, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize, period: f64, amp: f64) -> GridFunction {
        GridFunction::from_values(
            period,
            (0..n).map(|_| rng.gen_range(-amp..amp)).collect(),
        )
    }

    #[test]
    fn free_hamiltonian_zero_fixed() {
        // H = p^2/2: u = 0 solves the equation; one step keeps u = 0.
        let m = HamiltonianModel::free_with_constant(0.5, 0.0);
        let u = GridFunction::zeros(128, 1.0);
        let u1 = lax_oleinik_step(&m, 0.5, &u, 0.05).unwrap();
        assert!(u1.sup_norm() < 1e-14);
    }

    #[test]
    fn constant_potential_solution_exact() {
        // H = p^2/2 - c: u = c/alpha for both solvers.
        let c = 0.7;
        let alpha = 0.5;
        let m = HamiltonianModel::free_with_constant(alpha, c);
        let cfg = LoConfig {
            n: 128,
            tol: 1e-10,
            ..Default::default()
        };
        let (u, rep) = solve_discounted_lo(&m, alpha, &cfg).unwrap();
        for &v in &u.values {
            assert!((v - c / alpha).abs() < 1e-8, "{v}");
        }
        assert!(rep.kinks.is_empty());
        let fcfg = FdConfig {
            n: 128,
            sigma: 3.0,
            tol: 1e-10,
            ..Default::default()
        };
        let (uf, _) = solve_discounted_fd(&m, alpha, &fcfg).unwrap();
        for &v in &uf.values {
            assert!((v - c / alpha).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn lo_contraction_and_monotonicity() {
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &alpha in &[0.1, 0.5, 1.0] {
            let op = LoOperator::build(&m, alpha, 64, 0.05, 6.0).unwrap();
            for _ in 0..20 {
                let u1 = random_grid(&mut rng, 64, 1.0, 2.0);
                let u2 = random_grid(&mut rng, 64, 1.0, 2.0);
                let t1 = op.apply(&u1, 1);
                let t2 = op.apply(&u2, 1);
                assert!(
                    t1.sup_dist(&t2) <= op.etau * u1.sup_dist(&u2) + 1e-12,
                    "contraction violated"
                );
                // Monotonicity: u1 <= u1 + |u2| pointwise.
                let shift = GridFunction::from_values(
                    1.0,
                    u1.values
                        .iter()
                        .zip(&u2.values)
                        .map(|(a, b)| a + b.abs())
                        .collect(),
                );
                let ts = op.apply(&shift, 1);
                for i in 0..64 {
                    assert!(t1.values[i] <= ts.values[i] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn lo_window_too_large_rejected() {
        let m = HamiltonianModel::appendix_pendulum(0.5);
        assert!(matches!(
            LoOperator::build(&m, 0.5, 64, 0.2, 6.0),
            Err(WeakKamError::Config(_))
        ));
        // Non-convex perturbed model rejected.
        let bumped = crate::models::build_perturbed(
            &m,
            crate::models::BumpSpec {
                center: (0.5, 1.4),
                radius: (0.05, 0.3),
                height: 5.0,
            },
        )
        .unwrap();
        assert!(lax_oleinik_step(&bumped, 0.5, &GridFunction::zeros(64, 1.0), 0.05).is_err());
    }

    #[test]
    fn appendix_solution_structure_coarse() {
        // n = 256 quick solve: single kink at x = 1/2; residual within the
        // first-order consistency budget; u >= 0 with u(0) ~ 0.
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let cfg = LoConfig {
            n: 256,
            tol: 1e-8,
            ..Default::default()
        };
        let (u, rep) = solve_discounted_lo(&m, 0.5, &cfg).unwrap();
        assert_eq!(rep.kinks.len(), 1, "kinks: {:?}", rep.kinks);
        assert!((rep.kinks[0] - 0.5).abs() <= 2.0 / 256.0 + 1e-12);
        let h: f64 = 1.0 / 256.0;
        assert!(rep.residual <= 5.0 * h.sqrt(), "residual {}", rep.residual);
        assert!(u.values.iter().all(|&v| v > -1e-6));
        assert!(u.values[0].abs() < 0.05, "u(0) = {}", u.values[0]);
        // Downward kink: du_minus > du_plus.
        let kinks = detect_kinks(&u);
        assert!(kinks[0].du_minus > kinks[0].du_plus);
    }

    #[test]
    fn fd_matches_lo_coarse() {
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let n = 256;
        let lo_cfg = LoConfig {
            n,
            tol: 1e-8,
            ..Default::default()
        };
        let (ul, _) = solve_discounted_lo(&m, 0.5, &lo_cfg).unwrap();
        let fd_cfg = FdConfig {
            n,
            sigma: 3.0,
            tol: 1e-8,
            ..Default::default()
        };
        let (uf, repf) = solve_discounted_fd(&m, 0.5, &fd_cfg).unwrap();
        let h = 1.0 / n as f64;
        assert!(
            ul.sup_dist(&uf) <= 10.0 * h.sqrt(),
            "cross-validation gap {}",
            ul.sup_dist(&uf)
        );
        assert!(repf.residual <= 5.0 * h.sqrt());
    }

    #[test]
    fn fd_sigma_guard() {
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let cfg = FdConfig {
            n: 128,
            sigma: 1.0,
            p_bound: 3.0,
            ..Default::default()
        };
        assert!(matches!(
            solve_discounted_fd(&m, 0.5, &cfg),
            Err(WeakKamError::Monotonicity { .. })
        ));
    }

    #[test]
    fn fd_monotone_update() {
        // Increasing any single neighbor never decreases the updated u_i.
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let h = 1.0 / n as f64;
        let sigma = 3.0;
        let alpha = 0.5;
        let delta = h / (2.0 * sigma + alpha * h);
        let update = |um: f64, ui: f64, up: f64, x: f64| -> f64 {
            let dc = (up - um) / (2.0 * h);
            let visc = sigma * (up - 2.0 * ui + um) / (2.0 * h);
            ui - delta * (alpha * ui + m.eval(x, dc).unwrap() - visc)
        };
        for _ in 0..200 {
            // Random states with centered slope within the p_bound = 3 used
            // to size sigma: monotonicity only holds in the Lipschitz class
            // the scheme is designed for.
            let um = rng.gen_range(-2.0..2.0);
            let ui = rng.gen_range(-2.0..2.0);
            let dc = rng.gen_range(-3.0..3.0);
            let up = um + 2.0 * h * dc;
            let x = rng.gen_range(0.0..1.0);
            let eps = 1e-6;
            let base = update(um, ui, up, x);
            assert!(update(um + eps, ui, up, x) >= base - 1e-12);
            assert!(update(um, ui, up + eps, x) >= base - 1e-12);
            assert!(update(um, ui + eps, up, x) >= base - 1e-12);
        }
    }

    #[test]
    fn one_sided_derivative_examples() {
        let n = 2048;
        // Smooth: u = sin(2 pi x) at x = 0 -> (2 pi, 2 pi).
        let u = GridFunction::from_values(
            1.0,
            (0..n).map(|i| (TAU * i as f64 / n as f64).sin()).collect(),
        );
        let (dm, dp) = one_sided_derivatives(&u, 0);
        assert!((dm - TAU).abs() < 1e-3 && (dp - TAU).abs() < 1e-3);
        // Exact kink: u = |x - 1/2| -> (-1, +1) at x = 1/2.
        let u = GridFunction::from_values(
            1.0,
            (0..n)
                .map(|i| (i as f64 / n as f64 - 0.5).abs())
                .collect(),
        );
        let (dm, dp) = one_sided_derivatives(&u, n / 2);
        assert!((dm + 1.0).abs() < 1e-6 && (dp - 1.0).abs() < 1e-6);
        let kinks = detect_kinks(&u);
        // Two kinks: the corner at 1/2 and the periodic corner at 0.
        assert_eq!(kinks.len(), 2);
        assert!(kinks.iter().any(|k| k.index == n / 2));
    }

    #[test]
    fn viscosity_check_examples() {
        // u = c/alpha for H = p^2/2 - c: pass with zero violations.
        let c = 0.7;
        let alpha = 0.5;
        let n = 256;
        let u = GridFunction::from_values(1.0, vec![c / alpha; n]);
        let rep = check_viscosity(&u, |_x, p, uv| alpha * uv + 0.5 * p * p - c, 1e-9);
        assert!(rep.pass && rep.kinks.is_empty());
        assert!(rep.worst_smooth < 1e-12);

        // Downward kink of -|x-1/2| + const with G = p^2 - 1: interval
        // [-1, 1] contains p = 0 where G = -1 < 0, max G = 0 -> pass.
        let u = GridFunction::from_values(
            1.0,
            (0..n)
                .map(|i| {
                    let x = i as f64 / n as f64;
                    // Smooth periodic function with a single downward corner
                    // at x = 1/2: distance to 1/2 on the circle, negated.
                    let d = (x - 0.5).abs().min(1.0 - (x - 0.5).abs());
                    -d
                })
                .collect(),
        );
        let rep = check_viscosity(&u, |_x, p, _uv| p * p - 1.0, 1e-6);
        // Kinks at 1/2 (downward) and 0 (upward); downward: max(p^2-1) on
        // [-1,1] = 0 <= tol OK; upward at 0: min = -1 < -tol -> fail.
        assert!(!rep.pass);
        let rep2 = check_viscosity(&u, |_x, p, _uv| p * p - 1.0 - 1e-8, 1e-6);
        // Still the upward kink fails; downward alone passes (check witness
        // is on the upward kink at x = 0).
        assert!(!rep2.pass);
    }

    #[test]
    fn vanishing_driver_guard_and_bounds() {
        // Constant-potential model has critical value -c != 0: refused.
        let m = HamiltonianModel::free_with_constant(0.5, 0.7);
        let cfg = LoConfig {
            n: 64,
            ..Default::default()
        };
        assert!(matches!(
            vanishing_discount_driver(&m, &[0.8, 0.4, 0.2], &cfg),
            Err(WeakKamError::NormalizationGuard(_))
        ));
        // Appendix pendulum qualifies; u_alpha bounded by 2 for alpha >= 0.1.
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let cfg = LoConfig {
            n: 128,
            tol: 1e-7,
            ..Default::default()
        };
        let (sols, gaps) = vanishing_discount_driver(&m, &[0.8, 0.4, 0.2, 0.1], &cfg).unwrap();
        assert_eq!(gaps.len(), 3);
        for (a, u) in &sols {
            assert!(u.sup_norm() <= 2.0 + 1e-6, "alpha={a}: {}", u.sup_norm());
        }
    }

    #[test]
    fn varying_contraction_examples() {
        // T_k(x) = x/2 + (1/k, 0) -> limit (0, 0). Harmonic offsets converge
        // to the limit only at rate O(1/k), so the iterate is tested at a
        // rate-appropriate tolerance.
        let (x, _) = iterate_varying_contractions(
            (5.0f64, -3.0f64),
            |k, x: &(f64, f64)| (x.0 / 2.0 + 1.0 / k as f64, x.1 / 2.0),
            |a, b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
            1e-12,
            10_000_000,
        )
        .unwrap();
        assert!(x.0.abs() < 1e-5 && x.1.abs() < 1e-5, "{x:?}");

        // Constant map sequence: plain Banach iteration.
        let (x, _) = iterate_varying_contractions(
            1.0f64,
            |_k, x: &f64| 0.5 * x + 1.0,
            |a, b| (a - b).abs(),
            1e-12,
            10_000,
        )
        .unwrap();
        assert!((x - 2.0).abs() < 1e-10);

        // T_k(x) = 0.9 x + c_k with c_k -> c = 0.3: limit c/0.1 = 3.
        let (x, _) = iterate_varying_contractions(
            0.0f64,
            |k, x: &f64| 0.9 * x + 0.3 + 0.5 / (k as f64 * k as f64),
            |a, b| (a - b).abs(),
            1e-10,
            1_000_000,
        )
        .unwrap();
        assert!((x - 3.0).abs() < 1e-6, "{x}");
    }

    #[test]
    fn grid_refinement_rate() {
        // ||u_n - u_2n|| shrinks with observed rate >= 0.5 in h.
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let solve = |n: usize| {
            let cfg = LoConfig {
                n,
                tol: 1e-8,
                ..Default::default()
            };
            solve_discounted_lo(&m, 0.5, &cfg).unwrap().0
        };
        let (u128, u256, u512) = (solve(128), solve(256), solve(512));
        let g1 = u128.prolong().sup_dist(&u256);
        let g2 = u256.prolong().sup_dist(&u512);
        // Prolongation adds its own O(h^2) interpolation error; the gap
        // sequence must still shrink at rate >= 0.5 in h.
        assert!(g2 <= g1 / 2.0f64.powf(0.5) * 1.05, "g1={g1:.3e} g2={g2:.3e}");
    }
}
