//! Spiral-gap quantification for the damped pendulum: robust polyline
//! intersections, enclosed-area computation by the energy identity and by
//! shoelace, and the min-area lower bound of the four-region lemma.

use crate::curve::PolylineCurve;
use crate::flow::{shoot_heteroclinic_with, FlowError, Side, StopPredicate};
use crate::models::HamiltonianModel;
use robust::{orient2d, Coord};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("no transversal crossing found; closest approach {closest:.3e} at a-param {at_a}")]
    NotFound { closest: f64, at_a: usize },
    #[error("invalid configuration: C = 1 - E(X) = {0:.4} <= 0")]
    InvalidC(f64),
    #[error("polyline self-intersects near segment pair ({0}, {1})")]
    SelfIntersect(usize, usize),
    #[error("need at least 3 crossings for the min-area bound, found {0}")]
    TooFewCrossings(usize),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Location of a polyline crossing: segment indices and in-segment fractions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CrossParams {
    pub ia: usize,
    pub ta: f64,
    pub ib: usize,
    pub tb: f64,
}

#[inline]
fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    orient2d(
        Coord { x: a.0, y: a.1 },
        Coord { x: b.0, y: b.1 },
        Coord { x: c.0, y: c.1 },
    )
}

/// Proper (transversal) segment crossing test with exact orientation
/// predicates; returns in-segment fractions on success.
fn segment_cross(
    a0: (f64, f64),
    a1: (f64, f64),
    b0: (f64, f64),
    b1: (f64, f64),
) -> Option<(f64, f64)> {
    let o1 = orient(a0, a1, b0);
    let o2 = orient(a0, a1, b1);
    let o3 = orient(b0, b1, a0);
    let o4 = orient(b0, b1, a1);
    if (o1 > 0.0) == (o2 > 0.0) || o1 == 0.0 || o2 == 0.0 {
        return None;
    }
    if (o3 > 0.0) == (o4 > 0.0) || o3 == 0.0 || o4 == 0.0 {
        return None;
    }
    // Fractions from the orientation areas (exact up to final rounding).
    let ta = o3 / (o3 - o4);
    let tb = o1 / (o1 - o2);
    Some((ta, tb))
}

fn seg_point(a: (f64, f64), b: (f64, f64), t: f64) -> (f64, f64) {
    (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
}

/// Earliest (in curve_a's parameter) transversal crossing of two polylines.
/// `near` is used only for diagnostics when no crossing exists.
pub fn first_intersection(
    curve_a: &PolylineCurve,
    curve_b: &PolylineCurve,
    near: (f64, f64),
) -> Result<((f64, f64), CrossParams), GapError> {
    let pa = &curve_a.points;
    let pb = &curve_b.points;
    // Bounding boxes of b-segments for a cheap prefilter.
    let bboxes: Vec<(f64, f64, f64, f64)> = pb
        .windows(2)
        .map(|w| {
            (
                w[0].0.min(w[1].0),
                w[0].0.max(w[1].0),
                w[0].1.min(w[1].1),
                w[0].1.max(w[1].1),
            )
        })
        .collect();
    for ia in 0..pa.len() - 1 {
        let (a0, a1) = (pa[ia], pa[ia + 1]);
        let (axlo, axhi) = (a0.0.min(a1.0), a0.0.max(a1.0));
        let (aylo, ayhi) = (a0.1.min(a1.1), a0.1.max(a1.1));
        let mut best: Option<(f64, f64, usize)> = None;
        for (ib, bb) in bboxes.iter().enumerate() {
            if bb.0 > axhi || bb.1 < axlo || bb.2 > ayhi || bb.3 < aylo {
                continue;
            }
            if let Some((ta, tb)) = segment_cross(a0, a1, pb[ib], pb[ib + 1]) {
                match best {
                    Some((bta, _, _)) if bta <= ta => {}
                    _ => best = Some((ta, tb, ib)),
                }
            }
        }
        if let Some((ta, tb, ib)) = best {
            let x = seg_point(a0, a1, ta);
            return Ok((x, CrossParams { ia, ta, ib, tb }));
        }
    }
    // Diagnostics: closest approach of a-vertices to curve_b.
    let (mut closest, mut at_a) = (f64::INFINITY, 0usize);
    for (i, &(q, p)) in pa.iter().enumerate() {
        let d = curve_b.distance_to(q, p);
        if d < closest {
            closest = d;
            at_a = i;
        }
    }
    let _ = near;
    Err(GapError::NotFound { closest, at_a })
}

/// Signed shoelace area (auto-closing last -> first), no validity checks.
pub fn shoelace_signed(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    s / 2.0
}

/// Absolute shoelace area of a closed, non-self-intersecting polyline;
/// errors when a proper self-crossing among non-adjacent segments exists.
pub fn shoelace_area(points: &[(f64, f64)]) -> Result<f64, GapError> {
    let n = points.len();
    let seg = |i: usize| (points[i], points[(i + 1) % n]);
    for i in 0..n {
        for j in i + 2..n {
            // Skip adjacent segments (shared endpoint), incl. the wrap pair.
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a0, a1) = seg(i);
            let (b0, b1) = seg(j);
            if segment_cross(a0, a1, b0, b1).is_some() {
                return Err(GapError::SelfIntersect(i, j));
            }
        }
    }
    Ok(shoelace_signed(points).abs())
}

/// Quadrature of the separatrix area int_{-pi}^{pi} sqrt(2(1+cos t)) dt = 8
/// by composite Simpson with n (even) intervals.
pub fn separatrix_area_quadrature(n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let a = -std::f64::consts::PI;
    let h = std::f64::consts::TAU / n as f64;
    let f = |t: f64| (2.0 * (1.0 + t.cos())).max(0.0).sqrt();
    let mut s = f(a) + f(a + std::f64::consts::TAU);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Pendulum energy E(theta, p) = p^2/2 - cos(theta) (alpha-independent).
pub fn pendulum_energy(theta: f64, p: f64) -> f64 {
    0.5 * p * p - theta.cos()
}

/// Energy-identity area: C * (1/beta - 1/alpha) with C = 1 - E(X).
pub fn enclosed_area_energy(
    alpha: f64,
    beta: f64,
    intersection: (f64, f64),
) -> Result<f64, GapError> {
    let c = 1.0 - pendulum_energy(intersection.0, intersection.1);
    if c <= 0.0 {
        return Err(GapError::InvalidC(c));
    }
    Ok(c * (1.0 / beta - 1.0 / alpha))
}

/// Four-region min-area bound around the crossing t0 of a graph-like curve
/// L1 and a spiral L2 (crossing nearest `t0_ref` with both neighbors).
///
/// With only the two curves given, the adjacent regions are the lenses
/// between consecutive crossings; the four labels pair up as A = B' (lens
/// before t0) and A' = B (lens after t0), which realizes the area identity
/// A + B = A' + B' exactly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MinAreaBound {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
    pub min: f64,
}

pub fn min_area_bound(
    l1: &PolylineCurve,
    l2: &PolylineCurve,
    t0_ref: (f64, f64),
) -> Result<MinAreaBound, GapError> {
    // All proper crossings in L2-parameter order.
    let mut crossings: Vec<((f64, f64), CrossParams)> = Vec::new();
    let p1 = &l1.points;
    let p2 = &l2.points;
    for i2 in 0..p2.len() - 1 {
        for i1 in 0..p1.len() - 1 {
            if let Some((t2, t1)) = segment_cross(p2[i2], p2[i2 + 1], p1[i1], p1[i1 + 1]) {
                let x = seg_point(p2[i2], p2[i2 + 1], t2);
                crossings.push((
                    x,
                    CrossParams {
                        ia: i2,
                        ta: t2,
                        ib: i1,
                        tb: t1,
                    },
                ));
            }
        }
    }
    if crossings.len() < 3 {
        return Err(GapError::TooFewCrossings(crossings.len()));
    }
    // t0: crossing closest to the reference with both neighbors.
    let mut k0 = 1;
    let mut best = f64::INFINITY;
    for (k, (x, _)) in crossings.iter().enumerate() {
        if k == 0 || k == crossings.len() - 1 {
            continue;
        }
        let d = (x.0 - t0_ref.0).powi(2) + (x.1 - t0_ref.1).powi(2);
        if d < best {
            best = d;
            k0 = k;
        }
    }
    let lens = |ka: usize, kb: usize| -> f64 {
        let (xa, ca) = crossings[ka];
        let (xb, cb) = crossings[kb];
        // L2 arc from xa to xb, then L1 arc back from xb to xa.
        let mut poly = vec![xa];
        for i in ca.ia + 1..=cb.ia {
            poly.push(p2[i]);
        }
        poly.push(xb);
        // L1 arc (reversed): interior vertices between the two L1 params.
        let (i_lo, i_hi) = if ca.ib <= cb.ib {
            (ca.ib, cb.ib)
        } else {
            (cb.ib, ca.ib)
        };
        let mut l1_part: Vec<(f64, f64)> = (i_lo + 1..=i_hi).map(|i| p1[i]).collect();
        if ca.ib <= cb.ib {
            l1_part.reverse();
        }
        poly.extend(l1_part);
        shoelace_signed(&poly).abs()
    };
    let before = lens(k0 - 1, k0);
    let after = lens(k0, k0 + 1);
    let min = before.min(after);
    Ok(MinAreaBound {
        a: before,
        a_prime: after,
        b: after,
        b_prime: before,
        min,
    })
}

/// Full spiral-gap pipeline for a pendulum pair alpha > beta.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub alpha: f64,
    pub beta: f64,
    pub intersection: (f64, f64),
    pub c: f64,
    pub area_energy: f64,
    pub area_shoelace: f64,
    pub bound8: f64,
    pub bound4: f64,
}

impl GapReport {
    pub fn csv_header() -> &'static str {
        "alpha,beta,c,area_energy,area_shoelace,bound_8,bound_4"
    }

    pub fn csv_row(&self) -> String {
        [
            self.alpha,
            self.beta,
            self.c,
            self.area_energy,
            self.area_shoelace,
            self.bound8,
            self.bound4,
        ]
        .iter()
        .map(|v| crate::util::fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Shoot gamma_{alpha,R} and gamma_{beta,L}, intersect them near (-pi, 0),
/// and measure the enclosed area two independent ways.
pub fn gamma_gap(alpha: f64, beta: f64) -> Result<GapReport, GapError> {
    assert!(alpha > beta && beta > 0.0);
    let ma = HamiltonianModel::pendulum(alpha);
    let mb = HamiltonianModel::pendulum(beta);
    // gamma_{alpha,R}: full branch into the focus.
    let arc_a = shoot_heteroclinic_with(&ma, Side::Right, 1e-7, 1e-3, 1e-3, 4000.0, vec![], 4096)?;
    // gamma_{beta,L}: truncate once the energy has dropped well below the
    // first-intersection level (E(X) ~ 1 - 8 beta), keeping the early coils
    // densely resampled.
    let e_stop = (1.0 - 40.0 * beta).max(-0.9);
    let arc_b = shoot_heteroclinic_with(
        &mb,
        Side::Left,
        1e-7,
        1e-3,
        1e-3,
        4000.0,
        vec![StopPredicate::EnergyBelow(e_stop)],
        8192,
    )?;
    let (x, params) = first_intersection(&arc_b, &arc_a, (-std::f64::consts::PI, 0.0))?;
    let c = 1.0 - pendulum_energy(x.0, x.1);
    let area_energy = enclosed_area_energy(alpha, beta, x)?;
    // Closed polygon: beta-arc up to X, then the alpha-arc reversed back to
    // its launch at (-pi, 0); shoelace auto-closes to the beta launch (pi, 0)
    // along the annulus seam.
    let mut poly: Vec<(f64, f64)> = arc_b.points[0..=params.ia].to_vec();
    poly.push(x);
    for i in (0..=params.ib).rev() {
        poly.push(arc_a.points[i]);
    }
    let area_shoelace = shoelace_signed(&poly).abs();
    Ok(GapReport {
        alpha,
        beta,
        intersection: x,
        c,
        area_energy,
        area_shoelace,
        bound8: 8.0 * (1.0 - beta / alpha),
        bound4: 4.0 * (1.0 - beta / alpha),
    })
}
