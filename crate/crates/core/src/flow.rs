//! Integration of the damped Hamiltonian vector field, time-t annulus maps,
//! heteroclinic shooting, energy-dissipation audits, and rotation numbers.

use crate::curve::PolylineCurve;
use crate::models::{HamiltonianModel, ModelError, ModelKind, PhasePoint};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trajectory left the phase box at t = {0}")]
    PhaseBoxExit(f64),
    #[error("NaN/Inf encountered during integration at t = {0}")]
    Blowup(f64),
    #[error("shooting failed to enter the stop ball within t_max = {t_max}: closest approach {closest:.3e} at t = {t_at:.3}")]
    ShootingFailed { t_max: f64, closest: f64, t_at: f64 },
    #[error("invalid flow configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4,
    /// Adaptive Cash-Karp with absolute local-error tolerance.
    Rk45 { tol: f64 },
}

#[derive(Debug, Clone, Copy)]
pub enum StopPredicate {
    /// Stop when within `radius` of (q, p) in the lift.
    TargetBall { q: f64, p: f64, radius: f64 },
    /// Stop when H drops below the threshold.
    EnergyBelow(f64),
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub dt: f64,
    pub method: Method,
    pub t_max: f64,
    pub stop: Vec<StopPredicate>,
    /// Optional phase box (q_lo, q_hi, p_lo, p_hi) in the lift; leaving it
    /// aborts the integration with an error carrying the exit time.
    pub phase_box: Option<(f64, f64, f64, f64)>,
}

impl FlowConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            method: Method::Rk4,
            t_max,
            stop: Vec::new(),
            phase_box: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub t: f64,
    /// Unwrapped angle (lift).
    pub q: f64,
    pub p: f64,
    /// Recomputed energy H(q, p) at the sample, never integrated.
    pub e: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub dt: f64,
    pub alpha: f64,
    /// Which stop predicate (index) fired, if any.
    pub stopped_by: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> Sample {
        *self.samples.last().unwrap()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,q,p,E\n");
        for smp in &self.samples {
            s.push_str(&format!(
                "{},{},{},{}\n",
                crate::util::fmt_f64(smp.t),
                crate::util::fmt_f64(smp.q),
                crate::util::fmt_f64(smp.p),
                crate::util::fmt_f64(smp.e)
            ));
        }
        s
    }

    pub fn as_curve(&self) -> PolylineCurve {
        PolylineCurve::new(self.samples.iter().map(|s| (s.q, s.p)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Forward,
    Backward,
}

#[inline]
fn field(
    model: &HamiltonianModel,
    q: f64,
    p: f64,
    sign: f64,
) -> Result<(f64, f64), ModelError> {
    let (qd, pd) = model.conformal_vector_field(PhasePoint::new(q, p))?;
    Ok((sign * qd, sign * pd))
}

/// One fixed RK4 step of the (possibly reversed) conformal field.
#[inline]
pub fn rk4_step(
    model: &HamiltonianModel,
    q: f64,
    p: f64,
    dt: f64,
    sign: f64,
) -> Result<(f64, f64), ModelError> {
    let k1 = field(model, q, p, sign)?;
    let k2 = field(model, q + 0.5 * dt * k1.0, p + 0.5 * dt * k1.1, sign)?;
    let k3 = field(model, q + 0.5 * dt * k2.0, p + 0.5 * dt * k2.1, sign)?;
    let k4 = field(model, q + dt * k3.0, p + dt * k3.1, sign)?;
    Ok((
        q + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        p + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    ))
}

/// Cash-Karp embedded RK45 step attempt: returns (q', p', err_estimate).
fn ck45_step(
    model: &HamiltonianModel,
    q: f64,
    p: f64,
    dt: f64,
    sign: f64,
) -> Result<(f64, f64, f64), ModelError> {
    const A: [[f64; 5]; 5] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
        [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
        [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
        [
            1631.0 / 55296.0,
            175.0 / 512.0,
            575.0 / 13824.0,
            44275.0 / 110592.0,
            253.0 / 4096.0,
        ],
    ];
    const B5: [f64; 6] = [
        37.0 / 378.0,
        0.0,
        250.0 / 621.0,
        125.0 / 594.0,
        0.0,
        512.0 / 1771.0,
    ];
    const B4: [f64; 6] = [
        2825.0 / 27648.0,
        0.0,
        18575.0 / 48384.0,
        13525.0 / 55296.0,
        277.0 / 14336.0,
        1.0 / 4.0,
    ];
    let mut k = [(0.0f64, 0.0f64); 6];
    k[0] = field(model, q, p, sign)?;
    for i in 1..6 {
        let mut dq = 0.0;
        let mut dp = 0.0;
        for j in 0..i {
            dq += A[i - 1][j] * k[j].0;
            dp += A[i - 1][j] * k[j].1;
        }
        k[i] = field(model, q + dt * dq, p + dt * dp, sign)?;
    }
    let mut q5 = q;
    let mut p5 = p;
    let mut q4 = q;
    let mut p4 = p;
    for i in 0..6 {
        q5 += dt * B5[i] * k[i].0;
        p5 += dt * B5[i] * k[i].1;
        q4 += dt * B4[i] * k[i].0;
        p4 += dt * B4[i] * k[i].1;
    }
    let err = ((q5 - q4).powi(2) + (p5 - p4).powi(2)).sqrt();
    Ok((q5, p5, err))
}

/// Integrate the damped field from `start` (lift coordinates) under `config`.
///
/// Samples are recorded at every accepted step; the E field is recomputed
/// from the model at each sample.
pub fn integrate(
    model: &HamiltonianModel,
    start: PhasePoint,
    config: &FlowConfig,
    direction: Direction,
) -> Result<Trajectory, FlowError> {
    if config.dt <= 0.0 || config.t_max <= 0.0 {
        return Err(FlowError::Config("dt and t_max must be positive".into()));
    }
    if !(start.q.is_finite() && start.p.is_finite()) {
        return Err(FlowError::Config("start must be finite".into()));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut q = start.q;
    let mut p = start.p;
    let mut t = 0.0;
    let mut samples = Vec::with_capacity((config.t_max / config.dt).ceil() as usize + 2);
    let mut stopped_by = None;
    samples.push(Sample {
        t,
        q,
        p,
        e: model.eval(q, p)?,
    });
    let check_stop = |q: f64, p: f64, e: f64| -> Option<usize> {
        for (i, s) in config.stop.iter().enumerate() {
            match *s {
                StopPredicate::TargetBall { q: tq, p: tp, radius } => {
                    if ((q - tq).powi(2) + (p - tp).powi(2)).sqrt() <= radius {
                        return Some(i);
                    }
                }
                StopPredicate::EnergyBelow(th) => {
                    if e < th {
                        return Some(i);
                    }
                }
            }
        }
        None
    };
    let mut h = config.dt;
    // Fixed-step path counts steps in integers so accumulated time has no
    // drift and no spurious sub-ulp final step (which would break the
    // uniform-spacing invariant the Simpson audit relies on).
    let mut istep = 0u64;
    while t < config.t_max - 1e-12 {
        let step = match config.method {
            Method::Rk4 => {
                let t_next = ((istep + 1) as f64 * config.dt).min(config.t_max);
                let dt = t_next - t;
                let (nq, np) = rk4_step(model, q, p, dt, sign)?;
                istep += 1;
                (nq, np, dt)
            }
            Method::Rk45 { tol } => {
                // Adapt h until the local error estimate passes.
                loop {
                    let dt = h.min(config.t_max - t).max(1e-12);
                    let (nq, np, err) = ck45_step(model, q, p, dt, sign)?;
                    if err <= tol || dt <= 1e-12 {
                        // Grow cautiously for the next step.
                        let grow = if err > 0.0 {
                            0.9 * (tol / err).powf(0.2)
                        } else {
                            2.0
                        };
                        h = (dt * grow.clamp(0.2, 2.0)).min(config.dt * 100.0);
                        break (nq, np, dt);
                    }
                    h = dt * (0.9 * (tol / err).powf(0.25)).clamp(0.1, 0.9);
                }
            }
        };
        let (nq, np, dt_used) = step;
        t = match config.method {
            Method::Rk4 => (istep as f64 * config.dt).min(config.t_max),
            Method::Rk45 { .. } => t + dt_used,
        };
        q = nq;
        p = np;
        if !(q.is_finite() && p.is_finite()) {
            return Err(FlowError::Blowup(t));
        }
        if let Some((qlo, qhi, plo, phi)) = config.phase_box {
            if q < qlo || q > qhi || p < plo || p > phi {
                return Err(FlowError::PhaseBoxExit(t));
            }
        }
        let e = model.eval(q, p)?;
        samples.push(Sample { t, q, p, e });
        if let Some(i) = check_stop(q, p, e) {
            stopped_by = Some(i);
            break;
        }
    }
    Ok(Trajectory {
        samples,
        dt: config.dt,
        alpha: model.alpha,
        stopped_by,
    })
}

/// Max over prefixes of |E(t) - E(0) + alpha * int_0^t p(s)^2 ds| with
/// cumulative Simpson quadrature of p^2.
pub fn energy_dissipation_audit(traj: &Trajectory) -> f64 {
    let p2: Vec<f64> = traj.samples.iter().map(|s| s.p * s.p).collect();
    let cum = crate::util::cumulative_simpson(&p2, traj.dt);
    let e0 = traj.samples[0].e;
    traj.samples
        .iter()
        .zip(cum.iter())
        .map(|(s, &i)| (s.e - e0 + traj.alpha * i).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Saddle and focus of the pendulum-family model, in the fundamental domain,
/// plus f'(saddle) (negative by convention).
pub fn equilibria(model: &HamiltonianModel) -> Result<(f64, f64, f64), FlowError> {
    match model.kind {
        ModelKind::Pendulum => Ok((std::f64::consts::PI, 0.0, -1.0)),
        // f(x) = -2 pi sin(2 pi x); f'(0) = -4 pi^2 < 0: saddle at 0,
        // focus at 1/2.
        ModelKind::AppendixPendulum => {
            let tau = std::f64::consts::TAU;
            Ok((0.0, 0.5, -tau * tau))
        }
        _ => Err(FlowError::Config(
            "equilibria: pendulum-family model required".into(),
        )),
    }
}

/// Unstable eigenvalue of the saddle Jacobian [[0,1],[-f'(s), -alpha]]:
/// lambda_+ = (-alpha + sqrt(alpha^2 - 4 f'(s))) / 2; eigenvector (1, lambda_+).
pub fn saddle_unstable_eigen(alpha: f64, fprime_saddle: f64) -> (f64, (f64, f64)) {
    let lam = (-alpha + (alpha * alpha - 4.0 * fprime_saddle).sqrt()) / 2.0;
    (lam, (1.0, lam))
}

/// Shoot a heteroclinic branch with a custom flow configuration. The launch
/// point is saddle -/+ half a period (Right: from the left saddle lift moving
/// right with p > 0; Left: mirrored), offset by delta along the unstable
/// eigenvector. Stop predicates are appended to `extra_stops`.
pub fn shoot_heteroclinic_with(
    model: &HamiltonianModel,
    side: Side,
    delta: f64,
    stop_radius: f64,
    dt: f64,
    t_max: f64,
    extra_stops: Vec<StopPredicate>,
    resample_n: usize,
) -> Result<PolylineCurve, FlowError> {
    let (_saddle, focus, fp) = equilibria(model)?;
    let per = model.period();
    // Lift centered at the focus: for the pendulum this is the window
    // [-pi, pi] with saddle lifts at -pi and +pi.
    let focus_lift = focus;
    let saddle_left = focus_lift - per / 2.0;
    let saddle_right = focus_lift + per / 2.0;
    let (lam, v) = saddle_unstable_eigen(model.alpha, fp);
    debug_assert!(lam > 0.0);
    let (start, sgn) = match side {
        Side::Right => ((saddle_left + delta * v.0, delta * v.1), 1.0),
        Side::Left => ((saddle_right - delta * v.0, -delta * v.1), -1.0),
    };
    let mut stops = vec![StopPredicate::TargetBall {
        q: focus_lift,
        p: 0.0,
        radius: stop_radius,
    }];
    if model.alpha == 0.0 {
        // Frictionless separatrix: the branch returns to the far saddle, not
        // the (center) equilibrium; stop there instead.
        stops[0] = StopPredicate::TargetBall {
            q: if sgn > 0.0 { saddle_right } else { saddle_left },
            p: 0.0,
            radius: stop_radius,
        };
    }
    stops.extend(extra_stops);
    let mut cfg = FlowConfig::new(dt, t_max);
    cfg.stop = stops;
    let traj = integrate(model, PhasePoint::new(start.0, start.1), &cfg, Direction::Forward)?;
    if traj.stopped_by.is_none() {
        let (tq, tp) = match cfg.stop[0] {
            StopPredicate::TargetBall { q, p, .. } => (q, p),
            _ => unreachable!(),
        };
        let (mut closest, mut t_at) = (f64::INFINITY, 0.0);
        for s in &traj.samples {
            let d = ((s.q - tq).powi(2) + (s.p - tp).powi(2)).sqrt();
            if d < closest {
                closest = d;
                t_at = s.t;
            }
        }
        return Err(FlowError::ShootingFailed {
            t_max,
            closest,
            t_at,
        });
    }
    Ok(traj.as_curve().resample_uniform(resample_n))
}

/// Shoot with the default configuration: launch offset `delta` (typically
/// 1e-7), dt = 1e-3, t_max = 400, branch resampled to 4096 uniform-arclength
/// points.
pub fn shoot_heteroclinic(
    model: &HamiltonianModel,
    side: Side,
    delta: f64,
    stop_radius: f64,
) -> Result<PolylineCurve, FlowError> {
    shoot_heteroclinic_with(model, side, delta, stop_radius, 1e-3, 400.0, Vec::new(), 4096)
}

/// Evaluable annulus map (with inverse) used by the attractor module.
pub trait AnnulusMap: Sync {
    /// Forward image of a lift point.
    fn apply(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError>;
    /// Backward image of a lift point.
    fn apply_inverse(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError>;
    /// Base period in q.
    fn period(&self) -> f64;
}

/// Time-t map of the conformal flow, realized by fixed-step RK4 (dt chosen so
/// the step count is an integer).
pub struct TimeMap<'a> {
    pub model: &'a HamiltonianModel,
    pub t: f64,
    pub steps: usize,
}

impl<'a> TimeMap<'a> {
    pub fn new(model: &'a HamiltonianModel, t: f64, dt: f64) -> Self {
        let steps = (t / dt).round().max(1.0) as usize;
        Self { model, t, steps }
    }

    fn run(&self, q: f64, p: f64, sign: f64) -> Result<(f64, f64), FlowError> {
        let dt = self.t / self.steps as f64;
        let (mut q, mut p) = (q, p);
        for i in 0..self.steps {
            let (nq, np) = rk4_step(self.model, q, p, dt, sign)?;
            if !(nq.is_finite() && np.is_finite()) {
                return Err(FlowError::Blowup((i + 1) as f64 * dt));
            }
            q = nq;
            p = np;
        }
        Ok((q, p))
    }
}

impl AnnulusMap for TimeMap<'_> {
    fn apply(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
        self.run(q, p, 1.0)
    }

    fn apply_inverse(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
        self.run(q, p, -1.0)
    }

    fn period(&self) -> f64 {
        self.model.period()
    }
}

pub fn time_map<'a>(model: &'a HamiltonianModel, t: f64) -> TimeMap<'a> {
    TimeMap::new(model, t, 0.05)
}

/// Average lift displacement per unit time.
pub fn rotation_number(traj: &Trajectory) -> f64 {
    let first = traj.samples[0];
    let last = traj.last();
    if last.t <= first.t {
        return 0.0;
    }
    (last.q - first.q) / (last.t - first.t)
}

/// Rotation number of a discrete map orbit: average lift displacement per
/// iterate over `n` iterates.
pub fn rotation_number_map(
    map: &dyn AnnulusMap,
    start: (f64, f64),
    n: usize,
) -> Result<f64, FlowError> {
    let (mut q, mut p) = start;
    let q0 = q;
    for _ in 0..n {
        let (nq, np) = map.apply(q, p)?;
        q = nq;
        p = np;
    }
    Ok((q - q0) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fixed_point_trajectory_constant() {
        let m = HamiltonianModel::pendulum(0.5);
        let cfg = FlowConfig::new(1e-3, 5.0);
        let tr = integrate(&m, PhasePoint::new(PI, 0.0), &cfg, Direction::Forward).unwrap();
        for s in &tr.samples {
            assert!((s.q - PI).abs() < 1e-12 && s.p.abs() < 1e-12);
        }
        assert!(energy_dissipation_audit(&tr) < 1e-14);
        assert!(rotation_number(&tr).abs() < 1e-12);
    }

    #[test]
    fn conservative_energy_constant() {
        let m = HamiltonianModel::pendulum(0.0);
        let cfg = FlowConfig::new(1e-3, 6.5);
        let tr = integrate(&m, PhasePoint::new(0.0, 1.0), &cfg, Direction::Forward).unwrap();
        let e0 = tr.samples[0].e;
        for s in &tr.samples {
            assert!((s.e - e0).abs() < 1e-10, "E drift {}", (s.e - e0).abs());
        }
        assert!(energy_dissipation_audit(&tr) < 1e-10);
    }

    #[test]
    fn damped_orbit_reaches_focus() {
        let m = HamiltonianModel::pendulum(0.5);
        let dist_at = |t_max: f64, dt: f64| -> (f64, Sample) {
            let cfg = FlowConfig::new(dt, t_max);
            let tr = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward).unwrap();
            let last = tr.last();
            let dq = (last.q.rem_euclid(2.0 * PI)).min(2.0 * PI - last.q.rem_euclid(2.0 * PI));
            ((dq * dq + last.p * last.p).sqrt(), last)
        };
        // Focus approach decays like e^{-alpha t / 2}: ~8e-6 at T = 50 and
        // below 1e-6 by T = 62 (the focus-spiral rate, not a solver error).
        let (d50, last) = dist_at(50.0, 1e-3);
        assert!(d50 < 1e-5, "terminal distance {d50:.3e}");
        let (d62, _) = dist_at(62.0, 1e-3);
        assert!(d62 < 1e-6, "terminal distance {d62:.3e}");
        // Cross-check against an independent smaller-dt run.
        let (_, l2) = dist_at(50.0, 2.5e-4);
        assert!((last.q - l2.q).abs() < 1e-8 && (last.p - l2.p).abs() < 1e-8);
    }

    #[test]
    fn dissipation_audit_benchmark() {
        let m = HamiltonianModel::pendulum(0.5);
        let cfg = FlowConfig::new(1e-3, 20.0);
        let tr = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward).unwrap();
        assert!(energy_dissipation_audit(&tr) <= 1e-6);
        // RK4/Simpson order: halving dt shrinks the residual by >= 8x
        // (guarded against hitting the noise floor).
        let cfg_half = FlowConfig::new(5e-4, 20.0);
        let tr_half =
            integrate(&m, PhasePoint::new(2.0, 0.0), &cfg_half, Direction::Forward).unwrap();
        let (r1, r2) = (energy_dissipation_audit(&tr), energy_dissipation_audit(&tr_half));
        // Measured ratio is ~8.0; allow 1% slack against rounding noise.
        assert!(r2 <= r1 / 8.0 * 1.01 || r2 < 1e-12, "r1={r1:.3e} r2={r2:.3e}");
    }

    #[test]
    fn energy_strictly_decreases_when_damped() {
        let m = HamiltonianModel::pendulum(0.5);
        let cfg = FlowConfig::new(1e-3, 10.0);
        let tr = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward).unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].e < w[0].e + 1e-12);
        }
    }

    #[test]
    fn separatrix_on_energy_level_one() {
        // alpha = 0: shot branch lies on {E = 1}.
        let m = HamiltonianModel::pendulum(0.0);
        let curve = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-3).unwrap();
        for &(q, p) in &curve.points {
            let e = 0.5 * p * p - q.cos();
            assert!((e - 1.0).abs() <= 1e-6, "E = {e} at ({q}, {p})");
        }
        // Launch near theta = -pi, end near theta = +pi.
        assert!((curve.points[0].0 + PI).abs() < 1e-4);
        assert!((curve.points.last().unwrap().0 - PI).abs() < 2e-3);
    }

    #[test]
    fn damped_heteroclinic_reaches_focus() {
        let m = HamiltonianModel::pendulum(0.5);
        let curve = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-4).unwrap();
        let end = curve.points.last().unwrap();
        assert!((end.0 * end.0 + end.1 * end.1).sqrt() <= 1.1e-4);
        let left = shoot_heteroclinic(&m, Side::Left, 1e-7, 1e-4).unwrap();
        let end = left.points.last().unwrap();
        assert!((end.0 * end.0 + end.1 * end.1).sqrt() <= 1.1e-4);
        // Left branch travels with p < 0 through the lower half.
        assert!(left.points[left.len() / 4].1 < 0.0);
    }

    #[test]
    fn time_map_flow_property_and_inverse() {
        let m = HamiltonianModel::pendulum(0.5);
        let phi_s = time_map(&m, 0.7);
        let phi_t = time_map(&m, 1.3);
        let phi_st = time_map(&m, 2.0);
        let pts = [(0.3, 0.4), (2.0, -1.0), (4.0, 1.5), (5.5, -0.2)];
        for &(q, p) in &pts {
            let (q1, p1) = phi_s.apply(q, p).unwrap();
            let (q2, p2) = phi_t.apply(q1, p1).unwrap();
            let (q3, p3) = phi_st.apply(q, p).unwrap();
            assert!((q2 - q3).abs() < 1e-8 && (p2 - p3).abs() < 1e-8);
            let (qb, pb) = phi_t.apply_inverse(q2, p2).unwrap();
            assert!((qb - q1).abs() < 1e-8 && (pb - p1).abs() < 1e-8);
        }
    }

    #[test]
    fn time_one_map_jacobian_conformal() {
        // det D(phi^1) = e^{-alpha} by finite differences at random points.
        let m = HamiltonianModel::pendulum(0.5);
        let phi = time_map(&m, 1.0);
        let target = (-0.5f64).exp();
        let h = 1e-6;
        let mut x = 0.123f64;
        for _ in 0..100 {
            // Cheap deterministic scatter.
            x = (x * 97.31 + 0.417).rem_euclid(1.0);
            let q = x * 2.0 * PI;
            let p = 2.4 * (x * 7.77).rem_euclid(1.0) - 1.2;
            let a = phi.apply(q + h, p).unwrap();
            let b = phi.apply(q - h, p).unwrap();
            let c = phi.apply(q, p + h).unwrap();
            let d = phi.apply(q, p - h).unwrap();
            let j11 = (a.0 - b.0) / (2.0 * h);
            let j21 = (a.1 - b.1) / (2.0 * h);
            let j12 = (c.0 - d.0) / (2.0 * h);
            let j22 = (c.1 - d.1) / (2.0 * h);
            let det = j11 * j22 - j12 * j21;
            assert!((det - target).abs() < 1e-3, "det {det} vs {target}");
        }
    }

    #[test]
    fn rotation_number_examples() {
        // Rigid rotation test map.
        struct Rigid {
            omega: f64,
        }
        impl AnnulusMap for Rigid {
            fn apply(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
                Ok((q + self.omega, p))
            }
            fn apply_inverse(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
                Ok((q - self.omega, p))
            }
            fn period(&self) -> f64 {
                1.0
            }
        }
        let r = Rigid { omega: 0.37 };
        let rho = rotation_number_map(&r, (0.1, 0.0), 500).unwrap();
        assert!((rho - 0.37).abs() < 1e-12);

        // Attracted pendulum orbit: rotation number decays like 1/T.
        let m = HamiltonianModel::pendulum(0.5);
        let cfg = FlowConfig::new(1e-3, 40.0);
        let tr = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward).unwrap();
        assert!(rotation_number(&tr).abs() < 2.0 * PI / 40.0);
    }

    #[test]
    fn rk45_matches_rk4() {
        let m = HamiltonianModel::pendulum(0.3);
        let mut cfg = FlowConfig::new(1e-3, 10.0);
        let tr4 = integrate(&m, PhasePoint::new(1.0, 0.5), &cfg, Direction::Forward).unwrap();
        cfg.method = Method::Rk45 { tol: 1e-11 };
        let tr5 = integrate(&m, PhasePoint::new(1.0, 0.5), &cfg, Direction::Forward).unwrap();
        let (a, b) = (tr4.last(), tr5.last());
        assert!((a.q - b.q).abs() < 1e-6 && (a.p - b.p).abs() < 1e-6);
    }

    #[test]
    fn phase_box_exit_reported() {
        let m = HamiltonianModel::pendulum(0.5);
        let mut cfg = FlowConfig::new(1e-3, 10.0);
        cfg.phase_box = Some((-10.0, 10.0, -0.4, 0.4));
        let r = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward);
        assert!(matches!(r, Err(FlowError::PhaseBoxExit(_))));
    }
}
