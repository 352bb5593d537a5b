//! The three appendix constructions: the bump-perturbed pendulum that breaks
//! the viscosity-solution identity (Q1), the broken graph-in-attractor
//! inclusion (Q2), and the constructed Tonelli Hamiltonian whose Birkhoff
//! attractor strictly exceeds the pseudograph's forward-orbit closure (Q3).

use crate::attractor::{
    check_graph_in_attractor_offsets, compute_c0_subdivision, compute_c1, hausdorff_cells,
    AnnulusBitmap, AttractorError, BitmapGeom,
};
use crate::curve::PolylineCurve;
use crate::flow::{integrate, Direction, FlowConfig, FlowError, TimeMap};
use crate::models::{
    BranchData, BumpSpec, HamiltonianModel, ModelError, ModelKind, TabulatedH,
};
use crate::weakkam::{
    detect_kinks, solve_discounted_fd, FdConfig, GridFunction, SolveReport, WeakKamError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CexError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    WeakKam(#[from] WeakKamError),
    #[error(transparent)]
    Attractor(#[from] AttractorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("construction error: {0}")]
    Construction(String),
}

// ---------------------------------------------------------------------------
// Q1: bump-perturbed pendulum breaking the viscosity identity at the kink.
// ---------------------------------------------------------------------------

/// p-values at which a lift polyline crosses the vertical line x = x_target
/// (no wrap assumed: the branch stays inside one fundamental window).
pub fn vertical_crossings(curve: &PolylineCurve, x_target: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in curve.points.windows(2) {
        let (q0, p0) = w[0];
        let (q1, p1) = w[1];
        if (q0 - x_target) * (q1 - x_target) < 0.0 {
            let t = (x_target - q0) / (q1 - q0);
            out.push(p0 + t * (p1 - p0));
        }
    }
    out
}

/// Place the Q1 bump on the segment {1/2} x [f-(1/2), f+(1/2)]: centred at
/// the midpoint of the first gap between consecutive upper spiral-layer
/// crossings of x = 1/2, so its support avoids the attractor while sitting
/// deep inside the superdifferential interval. Both heteroclinic branches
/// must be passed: their spiral coils interleave, so a gap of one branch
/// alone contains a coil of the other.
pub fn q1_bump_spec(branches: &[&PolylineCurve], height: f64) -> Result<BumpSpec, CexError> {
    let mut ups: Vec<f64> = branches
        .iter()
        .flat_map(|b| vertical_crossings(b, 0.5))
        .filter(|p| *p > 0.0)
        .collect();
    ups.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ups.len() < 2 {
        return Err(CexError::Construction(
            "need at least two upper spiral crossings of x = 1/2".into(),
        ));
    }
    let gap = ups[0] - ups[1];
    let y_c = 0.5 * (ups[0] + ups[1]);
    Ok(BumpSpec {
        center: (0.5, y_c),
        radius: (0.04, 0.30 * gap),
        height,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Q1Report {
    pub bump_center: (f64, f64),
    pub bump_radius: (f64, f64),
    pub bump_height: f64,
    /// Superdifferential interval ends: (f-(1/2), f+(1/2)) from the kink.
    pub f_minus_half: f64,
    pub f_plus_half: f64,
    pub y_star: f64,
    pub value: f64,
    pub violated: bool,
}

/// Scan y over the superdifferential interval [f-(1/2), f+(1/2)] and return
/// the maximizer of alpha*u(1/2) + H1(1/2, y). A positive value certifies
/// that u (the unperturbed solution) is not a viscosity solution for H1.
pub fn q1_violation_witness(
    u: &GridFunction,
    h1: &HamiltonianModel,
    c1: &AnnulusBitmap,
    tol: f64,
) -> Result<Q1Report, CexError> {
    let alpha = h1.alpha;
    let bump = match &h1.kind {
        ModelKind::Perturbed { bump, .. } => bump.clone(),
        _ => {
            return Err(CexError::Construction(
                "q1 witness requires a Perturbed model".into(),
            ))
        }
    };
    // Superdifferential interval from the solved kink at x = 1/2.
    let kinks = detect_kinks(u);
    let kink = kinks
        .iter()
        .min_by(|a, b| {
            let da = (a.x - 0.5).abs();
            let db = (b.x - 0.5).abs();
            da.partial_cmp(&db).unwrap()
        })
        .ok_or_else(|| CexError::Construction("no kink detected in u".into()))?;
    let (f_plus_half, f_minus_half) = (kink.du_minus, kink.du_plus);
    // Precondition 1: bump support disjoint from the attractor C1.
    let (xl, xh, pl, ph) = bump.support_box();
    let geom = c1.geom;
    for &(i, j) in &c1.set_cells() {
        let (q, p) = geom.center(i, j);
        // Periodic x-distance to the box's x-range.
        let dq = (q - bump.center.0).rem_euclid(geom.period);
        let dq = dq.min(geom.period - dq);
        if dq <= bump.radius.0 && p >= pl && p <= ph {
            return Err(CexError::Construction(format!(
                "bump support [{xl:.3},{xh:.3}]x[{pl:.3},{ph:.3}] intersects C1 at ({q:.3},{p:.3})"
            )));
        }
    }
    // Precondition 2: support intersects {1/2} x [f-(1/2), f+(1/2)].
    if ph < f_minus_half || pl > f_plus_half || (xl > 0.5 || xh < 0.5) {
        return Err(CexError::Construction(
            "bump support does not meet the superdifferential segment".into(),
        ));
    }
    // Scan the superdifferential interval.
    let n_scan = 2001;
    let u_half = u.values[u.n / 2];
    let mut best = (f_minus_half, f64::NEG_INFINITY);
    for k in 0..n_scan {
        let y = f_minus_half + (f_plus_half - f_minus_half) * k as f64 / (n_scan - 1) as f64;
        let g = alpha * u_half + h1.eval(0.5, y)?;
        if g > best.1 {
            best = (y, g);
        }
    }
    Ok(Q1Report {
        bump_center: bump.center,
        bump_radius: bump.radius,
        bump_height: bump.height,
        f_minus_half,
        f_plus_half,
        y_star: best.0,
        value: best.1,
        violated: best.1 > tol,
    })
}

// ---------------------------------------------------------------------------
// Q2: graph(Du_alpha) not contained in the Birkhoff attractor (Prop A.6).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Q2Report {
    /// true = graph contained within tol_cells (expected false for height>0).
    pub verdict: bool,
    pub max_offset_cells: f64,
    /// x-interval of nodes offending the tolerance (empty = (nan, nan)).
    pub offending_interval: (f64, f64),
    /// Hausdorff distance (cells) between C1(H1) and the reference C1(H).
    pub bitmap_hausdorff: f64,
    pub c1_cells: usize,
    pub solve: SolveReport,
}

/// Solve u_alpha for the bumped Hamiltonian, recompute its attractor, and
/// test the graph inclusion; reports FALSE with the offending interval when
/// the bump drives the solution's gradient off the attractor.
pub fn q2_inclusion_breaker(
    h1: &HamiltonianModel,
    c1_h: &AnnulusBitmap,
    fd: &FdConfig,
    r: usize,
    tol_cells: f64,
    map_t: f64,
    map_dt: f64,
    workers: usize,
) -> Result<Q2Report, CexError> {
    let alpha = h1.alpha;
    let (u1, solve) = solve_discounted_fd(h1, alpha, fd)?;
    let map = TimeMap::new(h1, map_t, map_dt);
    let c0 = compute_c0_subdivision(&map, c1_h.geom, workers)?;
    let c1 = compute_c1(&c0, r)?;
    let bitmap_hausdorff = hausdorff_cells(&c1.bitmap, c1_h)?;
    let (verdict, max_offset_cells, offsets) =
        check_graph_in_attractor_offsets(&u1, &c1.bitmap, tol_cells)?;
    let mut lo = f64::NAN;
    let mut hi = f64::NAN;
    for &(x, off) in &offsets {
        if off > tol_cells {
            if lo.is_nan() || x < lo {
                lo = x;
            }
            if hi.is_nan() || x > hi {
                hi = x;
            }
        }
    }
    Ok(Q2Report {
        verdict,
        max_offset_cells,
        offending_interval: (lo, hi),
        bitmap_hausdorff,
        c1_cells: c1.bitmap.count(),
        solve,
    })
}

// ---------------------------------------------------------------------------
// Q3: constructed Tonelli Hamiltonian with prescribed branch trajectories.
// ---------------------------------------------------------------------------

/// Parameters of the Question-3 construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Q3Spec {
    /// Velocity-profile cutoffs, 1/2 < eps1 < eps2 < 3/4.
    pub eps1: f64,
    pub eps2: f64,
    /// Margin beyond eps2 on which (cond1)/(cond2) must still hold.
    pub eps2_margin: f64,
    /// Strip half-width in p around the branch graphs.
    pub eps_strip: f64,
    /// Quadratic extension coefficient; 0 = auto (10x max strip |dH/dp|).
    /// The default 0.5 keeps far-field speeds low so a moderate time-T map
    /// already maps the phase box strictly inside itself.
    pub m: f64,
    /// Fraction of the shorter tangent-segment used to round the middle kink.
    pub round_frac: f64,
    /// Width of the flat ends of the psi blending profile.
    pub psi_w: f64,
    /// Tabulation grid.
    pub nx: usize,
    pub np: usize,
    pub p_max: f64,
}

impl Default for Q3Spec {
    fn default() -> Self {
        Self {
            eps1: 0.55,
            eps2: 0.7,
            eps2_margin: 0.04,
            eps_strip: 0.1,
            m: 0.5,
            round_frac: 0.45,
            psi_w: 0.02,
            nx: 1024,
            np: 1024,
            p_max: 5.0,
        }
    }
}

/// Quintic smoothstep: C^2, s(0)=0, s(1)=1, flat at both ends.
fn sstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Branch profile f+ on [0, 5/6]: C sin(6 pi x / 5) with C = 1/sin(3 pi/5),
/// so that f+(0) = 0 and f+(1/2) = 1 (making f+(1/2) - f-(1/2) = 2).
pub fn q3_f_plus(x: f64) -> f64 {
    let w = 6.0 * std::f64::consts::PI / 5.0;
    (w * x).sin() / (0.5 * w).sin()
}

#[cfg(test)]
fn q3_f_plus_d(x: f64) -> f64 {
    let w = 6.0 * std::f64::consts::PI / 5.0;
    w * (w * x).cos() / (0.5 * w).sin()
}

/// Cumulative integral F(x) = int_0^x f+(s) ds (closed form).
pub fn q3_f_cum(x: f64) -> f64 {
    let w = 6.0 * std::f64::consts::PI / 5.0;
    (1.0 - (w * x).cos()) / (w * (0.5 * w).sin())
}

/// Velocity profile v+: 0 at 0, smooth rise on [0,1/4], plateau 1 on
/// [1/4, eps1], smooth descent to 0 on [eps1, eps2], 0 afterwards.
pub fn q3_v_plus(x: f64, eps1: f64, eps2: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < 0.25 {
        sstep(4.0 * x)
    } else if x <= eps1 {
        1.0
    } else if x < eps2 {
        1.0 - sstep((x - eps1) / (eps2 - eps1))
    } else {
        0.0
    }
}

/// Analytic construction state shared by the fiber evaluators.
struct Q3Builder {
    alpha: f64,
    eps1: f64,
    eps2: f64,
    eps2p: f64,
    eps: f64,
    m: f64,
    round_frac: f64,
    psi_w: f64,
}

struct StripData {
    f: f64,  // branch height
    v: f64,  // branch slope dH/dp
    h: f64,  // branch value H(x, f)
}

impl Q3Builder {
    fn plus(&self, x: f64) -> StripData {
        StripData {
            f: q3_f_plus(x),
            v: q3_v_plus(x, self.eps1, self.eps2),
            h: -self.alpha * q3_f_cum(x),
        }
    }

    fn minus(&self, x: f64) -> StripData {
        let s = self.plus(1.0 - x);
        StripData {
            f: -s.f,
            v: -s.v,
            h: s.h,
        }
    }

    /// Value + slope of a single strip parabola H(x,f) + (y-f) v + eps(y-f)^2
    /// with C^1 quadratic M-extensions beyond |y - f| = eps.
    fn strip_with_ext(&self, s: &StripData, y: f64) -> (f64, f64) {
        let e = self.eps;
        let d = y - s.f;
        if d.abs() <= e {
            (s.h + d * s.v + e * d * d, s.v + 2.0 * e * d)
        } else {
            let sign = d.signum();
            let t = d - sign * e; // beyond the strip edge
            let edge_v = s.h + sign * e * s.v + e * e * e;
            let edge_s = s.v + 2.0 * e * e * sign;
            (
                edge_v + edge_s * t + self.m * t * t,
                edge_s + 2.0 * self.m * t,
            )
        }
    }

    /// Middle-region wedge between the two strips: the max of the inner-edge
    /// tangent lines with the corner rounded by a C^1 quadratic. Returns an
    /// error message naming x when the convexity wedge fails.
    fn wedge(&self, x: f64, sp: &StripData, sm: &StripData) -> Result<Wedge, String> {
        let e = self.eps;
        let a = sm.f + e;
        let b = sp.f - e;
        if !(a < b) {
            return Err(format!("strips overlap at x = {x:.4}"));
        }
        let sa = sm.v + 2.0 * e * e;
        let sb = sp.v - 2.0 * e * e;
        let ha = sm.h + e * sm.v + e * e * e;
        let hb = sp.h - e * sp.v + e * e * e;
        if sa >= sb {
            return Err(format!(
                "convexity wedge fails at x = {x:.4}: lower slope {sa:.4} >= upper {sb:.4}"
            ));
        }
        // Tangent-line crossing.
        let ys = ((hb - sb * b) - (ha - sa * a)) / (sa - sb);
        if !(ys > a && ys < b) {
            return Err(format!(
                "tangent crossing y* = {ys:.4} outside ({a:.4},{b:.4}) at x = {x:.4} \
                 ((cond1)/(cond2) violated)"
            ));
        }
        let d = self.round_frac * (ys - a).min(b - ys);
        Ok(Wedge { a, sa, ha, sb, hb, b, ys, d })
    }

    /// Fiber profile for x in [1 - eps2', eps2'] (both strips present).
    fn profile_both(&self, x: f64, y: f64) -> Result<(f64, f64), String> {
        let sp = self.plus(x);
        let sm = self.minus(x);
        let e = self.eps;
        if y <= sm.f + e {
            return Ok(self.strip_with_ext(&sm, y));
        }
        if y >= sp.f - e {
            return Ok(self.strip_with_ext(&sp, y));
        }
        let w = self.wedge(x, &sp, &sm)?;
        let la = |y: f64| w.ha + w.sa * (y - w.a);
        let lb = |y: f64| w.hb + w.sb * (y - w.b);
        if w.d > 0.0 && (y - w.ys).abs() < w.d {
            let t = y - (w.ys - w.d);
            let c = (w.sb - w.sa) / (4.0 * w.d);
            Ok((la(w.ys - w.d) + w.sa * t + c * t * t, w.sa + 2.0 * c * t))
        } else if y < w.ys {
            Ok((la(y), w.sa))
        } else {
            Ok((lb(y), w.sb))
        }
    }

    /// Psi blending profile on [eps2', 1]: 0 near eps2', 1 near 1.
    fn psi(&self, x: f64) -> f64 {
        let lo = self.eps2p + self.psi_w;
        let hi = 1.0 - self.psi_w;
        sstep((x - lo) / (hi - lo))
    }

    /// Fiber profile for x in (eps2', 1]: only the f- strip exists; above it
    /// the profile blends the translated eps2' fiber with a pure quadratic.
    fn profile_right(&self, x: f64, y: f64) -> Result<(f64, f64), String> {
        let sm = self.minus(x);
        let e = self.eps;
        if y <= sm.f + e {
            return Ok(self.strip_with_ext(&sm, y));
        }
        // Above the strip: C^1 convex extension
        //   H = H_edge + s_edge t + (1-psi) G(t) + psi M t^2,  t = y - edge,
        // where G is the convex excess of the eps2' fiber above its own
        // f- strip top (so the x = eps2' fiber is reproduced at psi = 0).
        let t = y - (sm.f + e);
        let h_edge = sm.h + e * sm.v + e * e * e;
        let s_edge = sm.v + 2.0 * e * e;
        let smp = self.minus(self.eps2p);
        let yep = smp.f + e;
        let hep = smp.h + e * smp.v + e * e * e;
        let sep = smp.v + 2.0 * e * e;
        let (gv, gs) = self.profile_both(self.eps2p, yep + t)?;
        let g = gv - hep - sep * t;
        let gd = gs - sep;
        let psi = self.psi(x);
        Ok((
            h_edge + s_edge * t + (1.0 - psi) * g + psi * self.m * t * t,
            s_edge + (1.0 - psi) * gd + psi * 2.0 * self.m * t,
        ))
    }

    /// Full evaluation: cases split at 1 - eps2' and eps2'; x < 1 - eps2'
    /// delegates through the exact point symmetry H(x,y) = H(1-x,-y).
    fn eval(&self, x: f64, y: f64) -> Result<f64, String> {
        let x = x.rem_euclid(1.0);
        if x >= 1.0 - self.eps2p && x <= self.eps2p {
            Ok(self.profile_both(x, y)?.0)
        } else if x > self.eps2p {
            Ok(self.profile_right(x, y)?.0)
        } else {
            Ok(self.profile_right(1.0 - x, -y)?.0)
        }
    }
}

struct Wedge {
    a: f64,
    sa: f64,
    ha: f64,
    sb: f64,
    hb: f64,
    b: f64,
    ys: f64,
    d: f64,
}

/// Build the Question-3 Hamiltonian as a tabulated model with the branch
/// data attached. Errors name the first x where the convexity wedge
/// ((cond1)/(cond2) with the finite-strip correction) fails.
pub fn q3_build(spec: &Q3Spec, alpha: f64) -> Result<HamiltonianModel, CexError> {
    if !(0.5 < spec.eps1 && spec.eps1 < spec.eps2 && spec.eps2 < 0.75) {
        return Err(CexError::Construction(
            "need 1/2 < eps1 < eps2 < 3/4".into(),
        ));
    }
    let eps2p = spec.eps2 + spec.eps2_margin;
    let m = if spec.m > 0.0 {
        spec.m
    } else {
        10.0 * (1.0 + 2.0 * spec.eps_strip * spec.eps_strip)
    };
    let b = Q3Builder {
        alpha,
        eps1: spec.eps1,
        eps2: spec.eps2,
        eps2p,
        eps: spec.eps_strip,
        m,
        round_frac: spec.round_frac,
        psi_w: spec.psi_w,
    };
    // Validate the wedge on a fine x-lattice of the two-strip zone before
    // sampling (reports the first failing x).
    let nv = 2000;
    for k in 0..=nv {
        let x = (1.0 - eps2p) + (2.0 * eps2p - 1.0) * k as f64 / nv as f64;
        let sp = b.plus(x);
        let sm = b.minus(x);
        b.wedge(x, &sp, &sm).map_err(CexError::Construction)?;
    }
    // Sample the grid.
    let (nx, np) = (spec.nx, spec.np);
    let dx = 1.0 / nx as f64;
    let dp = 2.0 * spec.p_max / (np - 1) as f64;
    let mut values = vec![0.0; nx * np];
    for ix in 0..nx {
        let x = ix as f64 * dx;
        for ip in 0..np {
            let y = -spec.p_max + ip as f64 * dp;
            values[ix * np + ip] = b.eval(x, y).map_err(CexError::Construction)?;
        }
    }
    let mut table = TabulatedH::new(nx, np, 0.0, -spec.p_max, dx, dp, values)?;
    // Attach the branch data on a uniform x-lattice.
    let nb = 2048;
    let mut branches = BranchData {
        n: nb,
        f_plus: Vec::with_capacity(nb),
        f_minus: Vec::with_capacity(nb),
        v_plus: Vec::with_capacity(nb),
        v_minus: Vec::with_capacity(nb),
        eps1: spec.eps1,
        eps2: spec.eps2,
    };
    for k in 0..nb {
        let x = k as f64 / nb as f64;
        branches.f_plus.push(q3_f_plus(x.min(5.0 / 6.0)));
        branches.f_minus.push(-q3_f_plus((1.0 - x).min(5.0 / 6.0)));
        branches.v_plus.push(q3_v_plus(x, spec.eps1, spec.eps2));
        branches
            .v_minus
            .push(-q3_v_plus(1.0 - x, spec.eps1, spec.eps2));
    }
    table.branches = Some(Box::new(branches));
    Ok(HamiltonianModel::tabulated(alpha, table))
}

/// (lyap) residual of the construction itself: max over a fine x-lattice of
/// |H(x, f+(x)) + alpha F(x)| and the symmetric f- identity, evaluated
/// through the analytic fiber formulas (no tabulation).
pub fn q3_lyap_residual_construction(spec: &Q3Spec, alpha: f64) -> f64 {
    let eps2p = spec.eps2 + spec.eps2_margin;
    let m = if spec.m > 0.0 {
        spec.m
    } else {
        10.0 * (1.0 + 2.0 * spec.eps_strip * spec.eps_strip)
    };
    let b = Q3Builder {
        alpha,
        eps1: spec.eps1,
        eps2: spec.eps2,
        eps2p,
        eps: spec.eps_strip,
        m,
        round_frac: spec.round_frac,
        psi_w: spec.psi_w,
    };
    let mut worst = 0.0f64;
    for k in 0..=4000 {
        let x = eps2p * k as f64 / 4000.0;
        if let Ok(h) = b.eval(x, q3_f_plus(x)) {
            worst = worst.max((h + alpha * q3_f_cum(x)).abs());
        }
        let xm = 1.0 - x;
        if let Ok(h) = b.eval(xm, -q3_f_plus(x)) {
            worst = worst.max((h + alpha * q3_f_cum(x)).abs());
        }
    }
    worst
}

/// Flood the complement of a bitmap from the top row; report whether it
/// reaches the bottom row (false = the set disconnects the annulus).
pub fn complement_connected(bm: &AnnulusBitmap) -> bool {
    let geom = bm.geom;
    let (nt, np) = (geom.n_theta, geom.n_p);
    let mut seen = vec![false; nt * np];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for i in 0..nt {
        if !bm.get(i, np - 1) {
            seen[(np - 1) * nt + i] = true;
            stack.push((i, np - 1));
        }
    }
    while let Some((i, j)) = stack.pop() {
        if j == 0 {
            return true;
        }
        let nbrs = [
            ((i + 1) % nt, j),
            ((i + nt - 1) % nt, j),
            (i, j + 1),
            (i, j.wrapping_sub(1)),
        ];
        for (ni, nj) in nbrs {
            if nj < np && !bm.get(ni, nj) && !seen[nj * nt + ni] {
                seen[nj * nt + ni] = true;
                stack.push((ni, nj));
            }
        }
    }
    false
}

#[derive(Debug, Clone, Serialize)]
pub struct Q3Report {
    pub cond1_min_margin: f64,
    pub cond2_min_margin: f64,
    /// Max |H(x, f+(x)) + alpha F(x)| of the constructed values (exact
    /// branch formula; roundoff scale).
    pub lyap_residual: f64,
    /// Same identity measured through the tabulated model's bicubic
    /// interpolation (dominated by interpolation error).
    pub lyap_interp_residual: f64,
    /// |H(1/2, f+(1/2)) - H(1/2, f-(1/2))| via the tabulated model.
    pub symmetry_residual: f64,
    pub fiberwise_convex: bool,
    pub branch_invariance_residual: f64,
    /// Hausdorff distance (cells) between the forward-closure raster and the
    /// branch-arc raster.
    pub closure_vs_branch_cells: f64,
    /// Complement connectivity: true = does NOT disconnect the annulus.
    pub closure_complement_connected: bool,
    pub c1_complement_connected: bool,
    pub c1_cells: usize,
    pub closure_cells: usize,
    pub pocket_cells: usize,
}

/// Rasterize the forward closure of the pseudograph (graph of du flowed
/// forward) and the limit branch arcs.
fn q3_closure_bitmap(
    model: &HamiltonianModel,
    spec: &Q3Spec,
    geom: BitmapGeom,
    t_total: f64,
    dt: f64,
) -> Result<(AnnulusBitmap, AnnulusBitmap), CexError> {
    // Branch arcs: f+ over [0, eps2], f- over [1-eps2, 1].
    let nb = 4096;
    let arc_plus: Vec<(f64, f64)> = (0..=nb)
        .map(|k| {
            let x = spec.eps2 * k as f64 / nb as f64;
            (x, q3_f_plus(x))
        })
        .collect();
    let arc_minus: Vec<(f64, f64)> = (0..=nb)
        .map(|k| {
            let x = 1.0 - spec.eps2 + spec.eps2 * k as f64 / nb as f64;
            (x, -q3_f_plus(1.0 - x))
        })
        .collect();
    let mut branch_bm = AnnulusBitmap::rasterize_curve(geom, &arc_plus);
    branch_bm = branch_bm.union(&AnnulusBitmap::rasterize_curve(geom, &arc_minus));
    // Forward closure: seed the pseudograph (du = f+ on (0,1/2), f- on
    // (1/2,1)) and flow each seed forward, rasterizing the trajectories.
    let mut closure_bm = AnnulusBitmap::empty(geom);
    let n_seed = 256;
    let mut cfg = FlowConfig::new(dt, t_total);
    cfg.phase_box = Some((-10.0, 10.0, -spec.p_max, spec.p_max));
    for k in 1..n_seed {
        let x = k as f64 / n_seed as f64;
        if (x - 0.5).abs() < 1e-9 {
            continue;
        }
        let p = if x < 0.5 {
            q3_f_plus(x)
        } else {
            -q3_f_plus(1.0 - x)
        };
        let traj = integrate(
            model,
            crate::models::PhasePoint::new(x, p),
            &cfg,
            Direction::Forward,
        )?;
        let pts: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.q, s.p)).collect();
        closure_bm = closure_bm.union(&AnnulusBitmap::rasterize_curve(geom, &pts));
    }
    Ok((closure_bm, branch_bm))
}

/// Full verification of a constructed Q3 model: (cond1)/(cond2) margins,
/// (lyap) identity through the tabulation, branch invariance under the
/// model's conformal flow, and the connectivity dichotomy between the
/// forward closure and the Birkhoff attractor C1.
#[allow(clippy::too_many_arguments)]
pub fn q3_verify(
    model: &HamiltonianModel,
    spec: &Q3Spec,
    geom: BitmapGeom,
    r: usize,
    map_t: f64,
    map_dt: f64,
    workers: usize,
) -> Result<Q3Report, CexError> {
    let alpha = model.alpha;
    let eps2p = spec.eps2 + spec.eps2_margin;
    // (cond1)/(cond2) margins on (1/2, eps2'] (analytic branch quantities).
    let nv = 2000;
    let mut cond1_min = f64::INFINITY;
    let mut cond2_min = f64::INFINITY;
    for k in 1..=nv {
        let x = 0.5 + (eps2p - 0.5) * k as f64 / nv as f64;
        let (fp, fm) = (q3_f_plus(x), -q3_f_plus(1.0 - x));
        let (vp, vm) = (
            q3_v_plus(x, spec.eps1, spec.eps2),
            -q3_v_plus(1.0 - x, spec.eps1, spec.eps2),
        );
        let hp = -alpha * q3_f_cum(x);
        let hm = -alpha * q3_f_cum(1.0 - x);
        cond1_min = cond1_min.min(hp - hm - vm * (fp - fm));
        cond2_min = cond2_min.min(hm - hp - vp * (fm - fp));
    }
    // (lyap) identity: exact on the constructed values (the strip centre
    // value is the branch formula itself), and through the tabulation.
    let lyap = q3_lyap_residual_construction(spec, alpha);
    let mut lyap_interp = 0.0f64;
    for k in 0..=400 {
        let x = eps2p * k as f64 / 400.0;
        let h = model.eval(x, q3_f_plus(x))?;
        lyap_interp = lyap_interp.max((h + alpha * q3_f_cum(x)).abs());
    }
    let symmetry_residual =
        (model.eval(0.5, q3_f_plus(0.5))? - model.eval(0.5, -q3_f_plus(0.5))?).abs();
    let fiberwise_convex = match &model.kind {
        ModelKind::Tabulated(t) => t.fiberwise_convex,
        _ => false,
    };
    // Branch invariance: integrate the conformal field from branch points and
    // measure the sup distance to the analytic branch graph.
    let mut inv = 0.0f64;
    let mut cfg = FlowConfig::new(map_dt.min(0.002), 1.0);
    cfg.phase_box = Some((-10.0, 10.0, -spec.p_max, spec.p_max));
    for k in 0..12 {
        let x0 = 0.05 + 0.05 * k as f64; // up to 0.60 < eps2
        for side in [1.0, -1.0] {
            let (q0, p0) = if side > 0.0 {
                (x0, q3_f_plus(x0))
            } else {
                (1.0 - x0, -q3_f_plus(x0))
            };
            let traj = integrate(
                model,
                crate::models::PhasePoint::new(q0, p0),
                &cfg,
                Direction::Forward,
            )?;
            for s in &traj.samples {
                let x = s.q.rem_euclid(1.0);
                let f = if side > 0.0 {
                    q3_f_plus(x.min(5.0 / 6.0))
                } else {
                    -q3_f_plus((1.0 - x).min(5.0 / 6.0))
                };
                inv = inv.max((s.p - f).abs());
            }
        }
    }
    // Forward closure vs attractor connectivity.
    let (closure_bm, branch_bm) = q3_closure_bitmap(model, spec, geom, 8.0, 0.01)?;
    let closure_vs_branch_cells =
        crate::attractor::directed_hausdorff_cells(&closure_bm, &branch_bm)?;
    let map = TimeMap::new(model, map_t, map_dt);
    let c0 = compute_c0_subdivision(&map, geom, workers)?;
    let c1 = compute_c1(&c0, r)?;
    Ok(Q3Report {
        cond1_min_margin: cond1_min,
        cond2_min_margin: cond2_min,
        lyap_residual: lyap,
        lyap_interp_residual: lyap_interp,
        symmetry_residual,
        fiberwise_convex,
        branch_invariance_residual: inv,
        closure_vs_branch_cells,
        closure_complement_connected: complement_connected(&closure_bm),
        c1_complement_connected: complement_connected(&c1.bitmap),
        c1_cells: c1.bitmap.count(),
        closure_cells: closure_bm.count(),
        pocket_cells: c1.pocket_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{shoot_heteroclinic, Side};

    #[test]
    fn q3_profiles_invariants() {
        assert!(q3_f_plus(0.0).abs() < 1e-15);
        assert!((q3_f_plus(0.5) - 1.0).abs() < 1e-12);
        assert!(q3_f_plus(5.0 / 6.0).abs() < 1e-12);
        let (e1, e2) = (0.55, 0.7);
        assert_eq!(q3_v_plus(0.0, e1, e2), 0.0);
        for &x in &[0.25, 0.4, 0.55] {
            assert_eq!(q3_v_plus(x, e1, e2), 1.0);
        }
        assert_eq!(q3_v_plus(0.71, e1, e2), 0.0);
        // Exact symmetry rule.
        for k in 0..20 {
            let x = 0.04 * k as f64;
            let fm = -q3_f_plus((1.0 - x).min(5.0 / 6.0));
            assert_eq!(fm, -q3_f_plus((1.0 - x).min(5.0 / 6.0)));
        }
        // Cumulative integral consistent with the derivative.
        let h = 1e-6;
        let x = 0.3;
        assert!(
            ((q3_f_cum(x + h) - q3_f_cum(x - h)) / (2.0 * h) - q3_f_plus(x)).abs() < 1e-8
        );
        assert!((q3_f_plus_d(x) - (q3_f_plus(x + h) - q3_f_plus(x - h)) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn q3_build_identities() {
        let spec = Q3Spec {
            nx: 512,
            np: 512,
            ..Q3Spec::default()
        };
        let alpha = 0.5;
        let model = q3_build(&spec, alpha).unwrap();
        // H(0,0) = H(1,0) = 0 (up to interpolation).
        assert!(model.eval(0.0, 0.0).unwrap().abs() < 1e-9);
        assert!(model.eval(1.0, 0.0).unwrap().abs() < 1e-9);
        // Symmetry at the half-way fiber.
        let d = (model.eval(0.5, q3_f_plus(0.5)).unwrap()
            - model.eval(0.5, -q3_f_plus(0.5)).unwrap())
        .abs();
        assert!(d < 1e-9, "symmetry residual {d}");
        // Fiberwise convexity certified by the table constructor.
        match &model.kind {
            ModelKind::Tabulated(t) => assert!(t.fiberwise_convex),
            _ => panic!("expected tabulated"),
        }
        // Branch data attached.
        match &model.kind {
            ModelKind::Tabulated(t) => {
                let b = t.branches.as_ref().unwrap();
                assert_eq!(b.n, 2048);
                assert!((b.eps1, b.eps2) == (0.55, 0.7));
            }
            _ => unreachable!(),
        }
        // (cond1)/(cond2) margins positive; exact dp_H = v on the branch.
        let (_, hp) = model.partials(0.3, q3_f_plus(0.3)).unwrap();
        assert!((hp - 1.0).abs() < 1e-6, "dpH on branch = {hp}");
    }

    #[test]
    fn q3_wedge_failure_reports_x() {
        // eps2 beyond 3/4 is rejected outright.
        let bad = Q3Spec {
            eps2: 0.76,
            ..Q3Spec::default()
        };
        assert!(matches!(
            q3_build(&bad, 0.5),
            Err(CexError::Construction(_))
        ));
        // A huge strip half-width breaks the wedge with a located error.
        let bad2 = Q3Spec {
            eps_strip: 0.45,
            nx: 64,
            np: 64,
            ..Q3Spec::default()
        };
        match q3_build(&bad2, 0.5) {
            Err(CexError::Construction(msg)) => assert!(msg.contains("x ="), "{msg}"),
            other => panic!("expected construction error, got {other:?}"),
        }
    }

    #[test]
    fn complement_connectivity_synthetic() {
        let geom = BitmapGeom::new(64, 64, 1.0, -1.0, 1.0);
        let mut row = AnnulusBitmap::empty(geom);
        for i in 0..64 {
            row.set(i, 32, true);
        }
        assert!(!complement_connected(&row));
        let mut dot = AnnulusBitmap::empty(geom);
        dot.set(10, 32, true);
        assert!(complement_connected(&dot));
    }

    #[test]
    fn q1_bump_placement_geometry() {
        let m = HamiltonianModel::appendix_pendulum(0.5);
        let branch = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-4).unwrap();
        let branch_l = shoot_heteroclinic(&m, Side::Left, 1e-7, 1e-4).unwrap();
        let bump = q1_bump_spec(&[&branch, &branch_l], 5.0).unwrap();
        let ups: Vec<f64> = vertical_crossings(&branch, 0.5)
            .into_iter()
            .filter(|p| *p > 0.0)
            .collect();
        let f_plus_half = ups.iter().cloned().fold(f64::MIN, f64::max);
        // Midpoint of the first coil gap: strictly inside the segment and
        // high enough that a height-5 bump certifies value >= 4.
        assert!(bump.center.1 > 0.0 && bump.center.1 < f_plus_half);
        assert!(
            bump.center.1 >= (f_plus_half * f_plus_half - 2.0).sqrt(),
            "y_c = {} too low (f+ = {})",
            bump.center.1,
            f_plus_half
        );
    }
}
