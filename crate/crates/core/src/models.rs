//! Hamiltonian models on T^1 x R with friction: the standard pendulum, the
//! appendix-normalized pendulum, compactly-supported bump perturbations, and
//! tabulated Hamiltonians with bicubic evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("query ({0}, {1}) outside tabulated domain")]
    Domain(f64, f64),
    #[error("operation unsupported for this model kind: {0}")]
    Unsupported(&'static str),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("tabulated CSV parse error: {0}")]
    Parse(String),
}

/// A point of the annulus T^1 x R. `q` is stored in the canonical fundamental
/// domain [0, period); lifts are carried separately where needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }
}

/// Compactly supported C^2 bump `height * (1 - r^2)^3` with
/// `r^2 = ((x-x0)/rx)^2 + ((p-p0)/rp)^2`, exactly zero outside its support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: (f64, f64),
    pub radius: (f64, f64),
    pub height: f64,
}

impl BumpSpec {
    /// Support box as (x_lo, x_hi, p_lo, p_hi); x-bounds in the lift of center.
    pub fn support_box(&self) -> (f64, f64, f64, f64) {
        (
            self.center.0 - self.radius.0,
            self.center.0 + self.radius.0,
            self.center.1 - self.radius.1,
            self.center.1 + self.radius.1,
        )
    }
}

/// Branch data attached to constructed (Question 3) models: sampled graphs of
/// f+/f- and the velocity profiles v+/v- on a uniform x-lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchData {
    /// Uniform x-samples in [0,1) (n values, x_i = i/n).
    pub n: usize,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// Branch domain ends: f+ defined (as a trajectory) on [0, eps2],
    /// f- on [1-eps2, 1].
    pub eps1: f64,
    pub eps2: f64,
}

/// Tabulated Hamiltonian values on a uniform (x,p) grid, evaluated by bicubic
/// (Catmull-Rom) interpolation: C^1 with analytic partials. Periodic in x with
/// period `nx * dx`; hard domain error outside the p-range.
#[derive(Debug, Clone)]
pub struct TabulatedH {
    pub nx: usize,
    pub np: usize,
    pub x0: f64,
    pub p0: f64,
    pub dx: f64,
    pub dp: f64,
    /// Row-major: values[ix * np + ip].
    pub values: Vec<f64>,
    /// Set only if second differences in p are >= -1e-9 everywhere.
    pub fiberwise_convex: bool,
    pub branches: Option<Box<BranchData>>,
}

impl TabulatedH {
    pub fn new(
        nx: usize,
        np: usize,
        x0: f64,
        p0: f64,
        dx: f64,
        dp: f64,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if values.len() != nx * np {
            return Err(ModelError::Config(format!(
                "table has {} values, expected {}*{}",
                values.len(),
                nx,
                np
            )));
        }
        if !(dx > 0.0 && dp > 0.0) {
            return Err(ModelError::Config("dx, dp must be positive".into()));
        }
        let mut t = Self {
            nx,
            np,
            x0,
            p0,
            dx,
            dp,
            values,
            fiberwise_convex: false,
            branches: None,
        };
        t.fiberwise_convex = t.check_fiberwise_convex();
        Ok(t)
    }

    fn check_fiberwise_convex(&self) -> bool {
        for ix in 0..self.nx {
            for ip in 1..self.np - 1 {
                let a = self.values[ix * self.np + ip - 1];
                let b = self.values[ix * self.np + ip];
                let c = self.values[ix * self.np + ip + 1];
                if a - 2.0 * b + c < -1e-9 {
                    return false;
                }
            }
        }
        true
    }

    pub fn period(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn p_min(&self) -> f64 {
        self.p0
    }

    pub fn p_max(&self) -> f64 {
        self.p0 + (self.np - 1) as f64 * self.dp
    }

    #[inline]
    fn value_at(&self, ix: isize, ip: usize) -> f64 {
        let ix = ix.rem_euclid(self.nx as isize) as usize;
        self.values[ix * self.np + ip]
    }

    /// Catmull-Rom basis at parameter t in [0,1]: value weights for samples
    /// at -1, 0, 1, 2.
    #[inline]
    fn cr_w(t: f64) -> [f64; 4] {
        let t2 = t * t;
        let t3 = t2 * t;
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ]
    }

    /// Derivative of the Catmull-Rom weights with respect to t.
    #[inline]
    fn cr_dw(t: f64) -> [f64; 4] {
        let t2 = t * t;
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ]
    }

    /// (H, dH/dx, dH/dp) by bicubic interpolation.
    pub fn eval_with_partials(&self, x: f64, p: f64) -> Result<(f64, f64, f64), ModelError> {
        if !(x.is_finite() && p.is_finite()) || p < self.p_min() || p > self.p_max() {
            return Err(ModelError::Domain(x, p));
        }
        let sx = (x - self.x0) / self.dx;
        let ix = sx.floor();
        let tx = sx - ix;
        let ix = ix as isize;
        let sp = (p - self.p0) / self.dp;
        let mut ip = sp.floor() as isize;
        // Clamp the p stencil cell into range (the p-samples do not wrap).
        if ip < 0 {
            ip = 0;
        }
        if ip > self.np as isize - 2 {
            ip = self.np as isize - 2;
        }
        let tp = sp - ip as f64;
        let ip = ip as usize;

        let wx = Self::cr_w(tx);
        let dwx = Self::cr_dw(tx);
        let wp = Self::cr_w(tp);
        let dwp = Self::cr_dw(tp);

        // p-stencil indices, clamped at the boundary (quadratic-degenerate
        // edge cells keep C^1 continuity at interior knots).
        let pj = |k: isize| -> usize {
            (ip as isize + k - 1).clamp(0, self.np as isize - 1) as usize
        };
        let mut h = 0.0;
        let mut hx = 0.0;
        let mut hp = 0.0;
        for a in 0..4 {
            let xi = ix + a as isize - 1;
            let mut row = 0.0;
            let mut drow = 0.0;
            for b in 0..4 {
                let v = self.value_at(xi, pj(b as isize));
                row += wp[b] * v;
                drow += dwp[b] * v;
            }
            h += wx[a] * row;
            hx += dwx[a] * row;
            hp += wx[a] * drow;
        }
        Ok((h, hx / self.dx, hp / self.dp))
    }

    /// Serialize to the CSV grid format:
    /// header `nx,np,x0,p0,dx,dp`, then nx lines of np comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("nx,np,x0,p0,dx,dp\n");
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            self.nx,
            self.np,
            crate::util::fmt_f64(self.x0),
            crate::util::fmt_f64(self.p0),
            crate::util::fmt_f64(self.dx),
            crate::util::fmt_f64(self.dp)
        ));
        for ix in 0..self.nx {
            let row: Vec<String> = (0..self.np)
                .map(|ip| crate::util::fmt_f64(self.values[ix * self.np + ip]))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Parse("empty file".into()))?;
        if header.trim() != "nx,np,x0,p0,dx,dp" {
            return Err(ModelError::Parse(format!("bad header: {header}")));
        }
        let meta = lines
            .next()
            .ok_or_else(|| ModelError::Parse("missing metadata line".into()))?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 6 {
            return Err(ModelError::Parse("metadata line needs 6 fields".into()));
        }
        let nx: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| ModelError::Parse(format!("nx: {e}")))?;
        let np: usize = fields[1]
            .trim()
            .parse()
            .map_err(|e| ModelError::Parse(format!("np: {e}")))?;
        let parse_f = |s: &str, name: &str| -> Result<f64, ModelError> {
            s.trim()
                .parse()
                .map_err(|e| ModelError::Parse(format!("{name}: {e}")))
        };
        let x0 = parse_f(fields[2], "x0")?;
        let p0 = parse_f(fields[3], "p0")?;
        let dx = parse_f(fields[4], "dx")?;
        let dp = parse_f(fields[5], "dp")?;
        let mut values = Vec::with_capacity(nx * np);
        for line in lines {
            for tok in line.split(',') {
                values.push(parse_f(tok, "value")?);
            }
        }
        Self::new(nx, np, x0, p0, dx, dp, values)
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// H(theta, p) = p^2/2 - cos(theta); period 2*pi; force f = sin.
    Pendulum,
    /// H(x, p) = p^2/2 + cos(2*pi*x) - 1; period 1; saddle at (0,0),
    /// focus at (1/2, 0); Mane critical value 0.
    AppendixPendulum,
    /// H + c (constant potential shift -c relative to free H = p^2/2 - c).
    FreeWithConstant { c: f64 },
    /// H1 = base + bump.
    Perturbed {
        base: Box<HamiltonianModel>,
        bump: BumpSpec,
    },
    Tabulated(TabulatedH),
}

/// An evaluable Hamiltonian H(q,p) with friction parameter alpha >= 0.
/// Immutable after construction; evaluation is pure.
#[derive(Debug, Clone)]
pub struct HamiltonianModel {
    pub alpha: f64,
    pub kind: ModelKind,
}

impl HamiltonianModel {
    pub fn pendulum(alpha: f64) -> Self {
        Self {
            alpha,
            kind: ModelKind::Pendulum,
        }
    }

    pub fn appendix_pendulum(alpha: f64) -> Self {
        Self {
            alpha,
            kind: ModelKind::AppendixPendulum,
        }
    }

    /// H = p^2/2 - c (free Hamiltonian with constant potential).
    pub fn free_with_constant(alpha: f64, c: f64) -> Self {
        Self {
            alpha,
            kind: ModelKind::FreeWithConstant { c },
        }
    }

    pub fn tabulated(alpha: f64, table: TabulatedH) -> Self {
        Self {
            alpha,
            kind: ModelKind::Tabulated(table),
        }
    }

    /// Base period of the model.
    pub fn period(&self) -> f64 {
        match &self.kind {
            ModelKind::Pendulum => std::f64::consts::TAU,
            ModelKind::AppendixPendulum | ModelKind::FreeWithConstant { .. } => 1.0,
            ModelKind::Perturbed { base, .. } => base.period(),
            ModelKind::Tabulated(t) => t.period(),
        }
    }

    /// Wrap a lift into the canonical fundamental domain [0, period).
    pub fn wrap(&self, q: f64) -> f64 {
        let per = self.period();
        q.rem_euclid(per)
    }

    /// H(q, p).
    pub fn eval(&self, q: f64, p: f64) -> Result<f64, ModelError> {
        match &self.kind {
            ModelKind::Pendulum => Ok(0.5 * p * p - q.cos()),
            ModelKind::AppendixPendulum => {
                Ok(0.5 * p * p + (std::f64::consts::TAU * q).cos() - 1.0)
            }
            ModelKind::FreeWithConstant { c } => Ok(0.5 * p * p - c),
            ModelKind::Perturbed { base, bump } => Ok(base.eval(q, p)? + self.bump_value(bump, q, p)),
            ModelKind::Tabulated(t) => Ok(t.eval_with_partials(q, p)?.0),
        }
    }

    fn bump_value(&self, bump: &BumpSpec, q: f64, p: f64) -> f64 {
        let per = self.period();
        let mut dq = (q - bump.center.0).rem_euclid(per);
        if dq > per / 2.0 {
            dq -= per;
        }
        let u = dq / bump.radius.0;
        let v = (p - bump.center.1) / bump.radius.1;
        let r2 = u * u + v * v;
        if r2 >= 1.0 {
            0.0
        } else {
            let s = 1.0 - r2;
            bump.height * s * s * s
        }
    }

    /// (d rho/dq, d rho/dp) of the bump term.
    fn bump_partials(&self, bump: &BumpSpec, q: f64, p: f64) -> (f64, f64) {
        let per = self.period();
        let mut dq = (q - bump.center.0).rem_euclid(per);
        if dq > per / 2.0 {
            dq -= per;
        }
        let u = dq / bump.radius.0;
        let v = (p - bump.center.1) / bump.radius.1;
        let r2 = u * u + v * v;
        if r2 >= 1.0 {
            (0.0, 0.0)
        } else {
            let s = 1.0 - r2;
            let common = -6.0 * bump.height * s * s;
            (common * u / bump.radius.0, common * v / bump.radius.1)
        }
    }

    /// (dH/dq, dH/dp).
    pub fn partials(&self, q: f64, p: f64) -> Result<(f64, f64), ModelError> {
        match &self.kind {
            ModelKind::Pendulum => Ok((q.sin(), p)),
            ModelKind::AppendixPendulum => {
                let tau = std::f64::consts::TAU;
                Ok((-tau * (tau * q).sin(), p))
            }
            ModelKind::FreeWithConstant { .. } => Ok((0.0, p)),
            ModelKind::Perturbed { base, bump } => {
                let (hq, hp) = base.partials(q, p)?;
                let (rq, rp) = self.bump_partials(bump, q, p);
                Ok((hq + rq, hp + rp))
            }
            ModelKind::Tabulated(t) => {
                let (_, hx, hp) = t.eval_with_partials(q, p)?;
                Ok((hx, hp))
            }
        }
    }

    /// Force f(q) for the pendulum family (H = p^2/2 + V(q), f = V').
    pub fn force(&self, q: f64) -> Result<f64, ModelError> {
        match &self.kind {
            ModelKind::Pendulum => Ok(q.sin()),
            ModelKind::AppendixPendulum => {
                let tau = std::f64::consts::TAU;
                Ok(-tau * (tau * q).sin())
            }
            ModelKind::FreeWithConstant { .. } => Ok(0.0),
            _ => Err(ModelError::Unsupported("force: not a pendulum-family model")),
        }
    }

    /// The conformal (damped) vector field X_{-H,alpha}:
    /// (q_dot, p_dot) = (dH/dp, -dH/dq - alpha p).
    pub fn conformal_vector_field(&self, pt: PhasePoint) -> Result<(f64, f64), ModelError> {
        let (hq, hp) = self.partials(pt.q, pt.p)?;
        Ok((hp, -hq - self.alpha * pt.p))
    }

    /// Whether the Legendre transform is available (fiberwise convex kinds).
    pub fn fiberwise_convex(&self) -> bool {
        match &self.kind {
            ModelKind::Pendulum
            | ModelKind::AppendixPendulum
            | ModelKind::FreeWithConstant { .. } => true,
            ModelKind::Perturbed { .. } => false,
            ModelKind::Tabulated(t) => t.fiberwise_convex,
        }
    }

    /// Lagrangian L(q, v) = sup_p (p v - H(q, p)).
    ///
    /// Closed form for the quadratic-in-p pendulum family; golden-section
    /// search over the table's p-range for convex tabulated kinds.
    pub fn legendre(&self, q: f64, v: f64) -> Result<f64, ModelError> {
        match &self.kind {
            ModelKind::Pendulum => Ok(0.5 * v * v + q.cos()),
            ModelKind::AppendixPendulum => {
                Ok(0.5 * v * v - (std::f64::consts::TAU * q).cos() + 1.0)
            }
            ModelKind::FreeWithConstant { c } => Ok(0.5 * v * v + c),
            ModelKind::Perturbed { .. } => Err(ModelError::Unsupported(
                "legendre: perturbed H1 is not fiberwise convex; use the FD solver",
            )),
            ModelKind::Tabulated(t) => {
                if !t.fiberwise_convex {
                    return Err(ModelError::Unsupported(
                        "legendre: tabulated model is not fiberwise convex",
                    ));
                }
                // Maximize g(p) = p v - H(q, p), concave in p: coarse scan
                // then golden-section refinement.
                let (mut lo, mut hi) = (t.p_min(), t.p_max());
                let g = |p: f64| -> Result<f64, ModelError> {
                    Ok(p * v - t.eval_with_partials(q, p)?.0)
                };
                let m = 32;
                let mut best_i = 0;
                let mut best = f64::NEG_INFINITY;
                for i in 0..=m {
                    let p = lo + (hi - lo) * i as f64 / m as f64;
                    let gi = g(p)?;
                    if gi > best {
                        best = gi;
                        best_i = i;
                    }
                }
                let step = (hi - lo) / m as f64;
                lo = t.p_min().max(lo + (best_i as f64 - 1.0) * step);
                hi = t.p_max().min(t.p_min() + (best_i + 1) as f64 * step);
                let phi = (5f64.sqrt() - 1.0) / 2.0;
                let (mut a, mut b) = (lo, hi);
                let mut c = b - phi * (b - a);
                let mut d = a + phi * (b - a);
                let mut gc = g(c)?;
                let mut gd = g(d)?;
                for _ in 0..80 {
                    if gc > gd {
                        b = d;
                        d = c;
                        gd = gc;
                        c = b - phi * (b - a);
                        gc = g(c)?;
                    } else {
                        a = c;
                        c = d;
                        gc = gd;
                        d = a + phi * (b - a);
                        gd = g(d)?;
                    }
                }
                Ok(gc.max(gd).max(best))
            }
        }
    }

    /// Upper bound for |dH/dp| over the grid x-range and |p| <= pbound,
    /// used by the Lax-Friedrichs solver's viscosity parameter.
    pub fn dp_bound(&self, pbound: f64) -> f64 {
        match &self.kind {
            ModelKind::Pendulum
            | ModelKind::AppendixPendulum
            | ModelKind::FreeWithConstant { .. } => pbound,
            ModelKind::Perturbed { base, bump } => {
                // |dH1/dp| <= |p| + max |d rho/dp|; max of 6 h s^2 |v| / rp
                // over s = 1 - r2 is at |v| = 1/sqrt(7)... bound crudely by
                // 6 h / rp * max_u (1-u^2)^2 u = 6 h / rp * 0.38547.
                base.dp_bound(pbound) + 6.0 * bump.height.abs() * 0.38547 / bump.radius.1
            }
            ModelKind::Tabulated(t) => {
                let mut m: f64 = 0.0;
                for ix in 0..t.nx {
                    for ip in 0..t.np - 1 {
                        let d = (t.values[ix * t.np + ip + 1] - t.values[ix * t.np + ip]).abs()
                            / t.dp;
                        m = m.max(d);
                    }
                }
                // Catmull-Rom can overshoot finite-difference slopes slightly.
                1.25 * m
            }
        }
    }
}

/// Build the bump-perturbed model H1 = H + rho (Appendix Q1).
pub fn build_perturbed(
    base: &HamiltonianModel,
    bump: BumpSpec,
) -> Result<HamiltonianModel, ModelError> {
    if bump.radius.0 <= 0.0 || bump.radius.1 <= 0.0 {
        return Err(ModelError::Config("bump radii must be positive".into()));
    }
    Ok(HamiltonianModel {
        alpha: base.alpha,
        kind: ModelKind::Perturbed {
            base: Box::new(base.clone()),
            bump,
        },
    })
}
