//! Grid approximations of C0 (the maximal invariant set, the intersection of
//! forward images of the annulus) and the Birkhoff attractor C1 (C0 cells
//! adherent to both complementary components), plus inclusion tests for
//! graphs of differentials.

use crate::flow::{AnnulusMap, FlowError};
use crate::weakkam::GridFunction;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttractorError {
    #[error("domain is not absorbing: forward image of boundary sample ({q:.4}, {p:.4}) lands at p = {image_p:.4}, outside the interior")]
    DomainNotAbsorbing { q: f64, p: f64, image_p: f64 },
    #[error("degenerate domain: the complement of C0 does not reach the {0} boundary")]
    Degenerate(&'static str),
    #[error("empty bitmap input to {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid attractor configuration: {0}")]
    Config(String),
}

/// Cell geometry of an occupancy bitmap over T^1 x [p_min, p_max]: periodic
/// in theta, clamped in p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitmapGeom {
    pub n_theta: usize,
    pub n_p: usize,
    pub period: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl BitmapGeom {
    pub fn new(n_theta: usize, n_p: usize, period: f64, p_min: f64, p_max: f64) -> Self {
        assert!(n_theta >= 64 && n_p >= 64, "bitmap dimensions must be >= 64");
        assert!(p_min < p_max);
        Self {
            n_theta,
            n_p,
            period,
            p_min,
            p_max,
        }
    }

    pub fn d_theta(&self) -> f64 {
        self.period / self.n_theta as f64
    }

    pub fn d_p(&self) -> f64 {
        (self.p_max - self.p_min) / self.n_p as f64
    }

    /// Center of cell (i, j).
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.d_theta(),
            self.p_min + (j as f64 + 0.5) * self.d_p(),
        )
    }

    /// Cell containing (q, p); None if p is outside the band.
    pub fn cell_of(&self, q: f64, p: f64) -> Option<(usize, usize)> {
        if !(p.is_finite() && q.is_finite()) || p < self.p_min || p >= self.p_max {
            return None;
        }
        let i = ((q.rem_euclid(self.period)) / self.d_theta()) as usize % self.n_theta;
        let j = ((p - self.p_min) / self.d_p()) as usize;
        Some((i, j.min(self.n_p - 1)))
    }
}

/// Occupancy bitmap; immutable set-algebra operations return fresh bitmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusBitmap {
    pub geom: BitmapGeom,
    bits: Vec<bool>,
}

impl AnnulusBitmap {
    pub fn empty(geom: BitmapGeom) -> Self {
        Self {
            bits: vec![false; geom.n_theta * geom.n_p],
            geom,
        }
    }

    pub fn full(geom: BitmapGeom) -> Self {
        Self {
            bits: vec![true; geom.n_theta * geom.n_p],
            geom,
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.geom.n_theta + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let k = self.idx(i, j);
        self.bits[k] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn set_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.geom.n_p {
            for i in 0..self.geom.n_theta {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn intersect(&self, other: &Self) -> Self {
        assert_eq!(self.geom, other.geom);
        Self {
            geom: self.geom,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.geom, other.geom);
        Self {
            geom: self.geom,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        assert_eq!(self.geom, other.geom);
        Self {
            geom: self.geom,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && !*b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(a, b)| !*a || *b)
    }

    /// Chebyshev dilation by radius r (periodic in theta, clamped in p).
    pub fn dilate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        let (nt, np) = (self.geom.n_theta, self.geom.n_p);
        let r = r as isize;
        let mut out = AnnulusBitmap::empty(self.geom);
        // Horizontal pass then vertical pass (separable for Chebyshev).
        let mut horiz = vec![false; nt * np];
        for j in 0..np {
            for i in 0..nt {
                if self.get(i, j) {
                    for di in -r..=r {
                        let ii = (i as isize + di).rem_euclid(nt as isize) as usize;
                        horiz[j * nt + ii] = true;
                    }
                }
            }
        }
        for j in 0..np {
            for i in 0..nt {
                if horiz[j * nt + i] {
                    for dj in -r..=r {
                        let jj = j as isize + dj;
                        if jj >= 0 && jj < np as isize {
                            out.bits[jj as usize * nt + i] = true;
                        }
                    }
                }
            }
        }
        out
    }

    /// Refine to a grid with doubled resolution in both axes (each set cell
    /// becomes a 2x2 block).
    pub fn refine_double(&self) -> Self {
        let g = self.geom;
        let geom = BitmapGeom::new(2 * g.n_theta, 2 * g.n_p, g.period, g.p_min, g.p_max);
        let mut out = AnnulusBitmap::empty(geom);
        for j in 0..g.n_p {
            for i in 0..g.n_theta {
                if self.get(i, j) {
                    for dj in 0..2 {
                        for di in 0..2 {
                            out.set(2 * i + di, 2 * j + dj, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Rasterize a lift curve into cells, stepping each segment at sub-cell
    /// resolution so thin diagonal filaments have no holes.
    pub fn rasterize_curve(geom: BitmapGeom, points: &[(f64, f64)]) -> Self {
        let mut bm = AnnulusBitmap::empty(geom);
        let step = 0.5 * geom.d_theta().min(geom.d_p());
        for w in points.windows(2) {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            let n = (len / step).ceil().max(1.0) as usize;
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let (q, p) = (ax + t * (bx - ax), ay + t * (by - ay));
                if let Some((i, j)) = geom.cell_of(q, p) {
                    bm.set(i, j, true);
                }
            }
        }
        bm
    }

    /// PBM (P4) serialization: width = n_theta, height = n_p, top row = the
    /// p_max edge.
    pub fn to_pbm(&self) -> Vec<u8> {
        let (w, h) = (self.geom.n_theta, self.geom.n_p);
        let mut out = format!("P4\n{} {}\n", w, h).into_bytes();
        let row_bytes = w.div_ceil(8);
        for row in 0..h {
            let j = h - 1 - row;
            let mut bytes = vec![0u8; row_bytes];
            for i in 0..w {
                if self.get(i, j) {
                    bytes[i / 8] |= 0x80 >> (i % 8);
                }
            }
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_pbm(data: &[u8], period: f64, p_min: f64, p_max: f64) -> Result<Self, AttractorError> {
        let text_end = {
            // Parse "P4\nW H\n" header.
            let mut fields = Vec::new();
            let mut pos = 0;
            while fields.len() < 3 && pos < data.len() {
                while pos < data.len() && (data[pos] as char).is_whitespace() {
                    pos += 1;
                }
                let start = pos;
                while pos < data.len() && !(data[pos] as char).is_whitespace() {
                    pos += 1;
                }
                fields.push(String::from_utf8_lossy(&data[start..pos]).to_string());
            }
            if fields.len() != 3 || fields[0] != "P4" {
                return Err(AttractorError::Config("bad PBM header".into()));
            }
            let w: usize = fields[1]
                .parse()
                .map_err(|_| AttractorError::Config("bad PBM width".into()))?;
            let h: usize = fields[2]
                .parse()
                .map_err(|_| AttractorError::Config("bad PBM height".into()))?;
            (w, h, pos + 1)
        };
        let (w, h, start) = text_end;
        let geom = BitmapGeom::new(w, h, period, p_min, p_max);
        let mut bm = AnnulusBitmap::empty(geom);
        let row_bytes = w.div_ceil(8);
        for row in 0..h {
            let j = h - 1 - row;
            let base = start + row * row_bytes;
            for i in 0..w {
                let byte = *data
                    .get(base + i / 8)
                    .ok_or_else(|| AttractorError::Config("truncated PBM".into()))?;
                if byte & (0x80 >> (i % 8)) != 0 {
                    bm.set(i, j, true);
                }
            }
        }
        Ok(bm)
    }

    /// JSON sidecar describing the grid geometry.
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.geom).unwrap()
    }
}

/// Verify that the forward map sends the domain strictly inside itself, by
/// sampling the top and bottom boundary cell rows.
fn check_absorbing(map: &dyn AnnulusMap, geom: &BitmapGeom) -> Result<(), AttractorError> {
    let samples = 256;
    for s in 0..samples {
        let q = geom.period * s as f64 / samples as f64;
        for &p in &[
            geom.p_min + 0.5 * geom.d_p(),
            geom.p_max - 0.5 * geom.d_p(),
        ] {
            let (_, ip) = map.apply(q, p)?;
            if ip <= geom.p_min || ip >= geom.p_max {
                return Err(AttractorError::DomainNotAbsorbing { q, p, image_p: ip });
            }
        }
    }
    Ok(())
}

/// Backward escape-time C0: a cell center survives if all backward iterates
/// up to n_max stay inside the p-band (theta is periodic). Integration
/// blowups count as escape.
pub fn compute_c0_escape(
    map: &dyn AnnulusMap,
    geom: BitmapGeom,
    n_max: usize,
    workers: usize,
) -> Result<AnnulusBitmap, AttractorError> {
    check_absorbing(map, &geom)?;
    let survive = crate::util::parallel_map(geom.n_theta * geom.n_p, workers, |k| {
        let (i, j) = (k % geom.n_theta, k / geom.n_theta);
        let (mut q, mut p) = geom.center(i, j);
        for _ in 0..n_max {
            match map.apply_inverse(q, p) {
                Ok((nq, np)) => {
                    q = nq;
                    p = np;
                }
                Err(_) => return false,
            }
            if p < geom.p_min || p > geom.p_max || !p.is_finite() {
                return false;
            }
        }
        true
    });
    let mut bm = AnnulusBitmap::empty(geom);
    bm.bits = survive;
    Ok(bm)
}

/// Convex hull (Andrew's monotone chain) of a small point set.
fn convex_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = pts.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(p.len());
    for &pt in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], pt) <= 0.0 {
            lower.pop();
        }
        lower.push(pt);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(p.len());
    for &pt in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], pt) <= 0.0 {
            upper.pop();
        }
        upper.push(pt);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// One subdivision sweep: keep only cells hit by an outer cover of the
/// forward image of the current set. Each cell's image is covered by the
/// rasterized convex hull (in periodically unwrapped coordinates) of the
/// images of a 3x3 lattice of cell points (corners, edge midpoints, center),
/// so strong along-flow stretching cannot open sampling gaps in thin
/// invariant sets, while a thin sheared image still gets a thin cover.
pub(crate) fn subdivision_sweep(
    map: &dyn AnnulusMap,
    b: &AnnulusBitmap,
    workers: usize,
) -> Result<AnnulusBitmap, AttractorError> {
    let geom = b.geom;
    let cells = b.set_cells();
    let d_theta = geom.d_theta();
    let d_p = geom.d_p();
    let hit_lists = crate::util::parallel_map(cells.len(), workers, |k| {
        let (i, j) = cells[k];
        let mut hits: Vec<u32> = Vec::new();
        // Walk the cell boundary, adaptively bisecting each edge until
        // consecutive image points are within one cell of each other, so the
        // hull tracks curved images without a fixed sample budget.
        let corner = |t: f64| {
            // t in [0,4): parametrize the 4 edges counterclockwise.
            let (a, c) = match t as usize {
                0 => (t, 0.0),
                1 => (1.0, t - 1.0),
                2 => (3.0 - t, 1.0),
                _ => (0.0, 4.0 - t),
            };
            (
                (i as f64 + a) * d_theta,
                geom.p_min + (j as f64 + c) * d_p,
            )
        };
        let map_at = |t: f64| {
            let (q, p) = corner(t);
            map.apply(q, p).ok()
        };
        let mut imgs: Vec<(f64, f64)> = Vec::with_capacity(16);
        let mut stack: Vec<(f64, Option<(f64, f64)>, f64, Option<(f64, f64)>, u32)> =
            Vec::with_capacity(16);
        for e in 0..4 {
            let (t0, t1) = (e as f64, e as f64 + 1.0);
            stack.push((t0, map_at(t0), t1, map_at(t1), 0));
        }
        while let Some((t0, im0, t1, im1, depth)) = stack.pop() {
            let close = match (im0, im1) {
                (Some(a), Some(b)) => {
                    let dq = b.0 - a.0 - geom.period * ((b.0 - a.0) / geom.period).round();
                    dq.abs() <= d_theta && (b.1 - a.1).abs() <= d_p
                }
                _ => false,
            };
            if close || depth >= 12 {
                imgs.extend(im0);
                imgs.extend(im1);
            } else {
                let tm = 0.5 * (t0 + t1);
                let imm = map_at(tm);
                stack.push((tm, imm, t1, im1, depth + 1));
                stack.push((t0, im0, tm, imm, depth + 1));
            }
        }
        if imgs.is_empty() {
            return hits;
        }
        // Sequentially unwrap q along the boundary chain (pops above emit the
        // boundary in order): adjacent images are close, so each point is
        // wrapped to the representative nearest its predecessor. The chain as
        // a whole may span several periods for strongly stretched images.
        for k in 1..imgs.len() {
            let prev = imgs[k - 1].0;
            imgs[k].0 -= geom.period * ((imgs[k].0 - prev) / geom.period).round();
        }
        let j_of = |p: f64| (((p - geom.p_min) / d_p).floor() as i64).clamp(0, geom.n_p as i64 - 1);
        let nt = geom.n_theta as i64;
        // Diameter of the image in cells. Small images get a filled convex
        // hull (a tight outer cover). Large images are necessarily thin --
        // the map contracts area, so diameter >> 1 cell forces sub-cell
        // width -- and hull-filling them would spuriously cover everything
        // they wrap around (e.g. a saddle-straddling cell whose image wraps
        // the whole eye of a pendulum); rasterize the boundary chain instead.
        let (mut q_lo, mut q_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut p_lo, mut p_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(q, p) in &imgs {
            q_lo = q_lo.min(q);
            q_hi = q_hi.max(q);
            p_lo = p_lo.min(p);
            p_hi = p_hi.max(p);
        }
        let diam_cells = ((q_hi - q_lo) / d_theta).max((p_hi - p_lo) / d_p);
        if diam_cells > 16.0 {
            for w in imgs.windows(2) {
                let (q0, p0) = w[0];
                let (q1, p1) = w[1];
                let steps =
                    (2.0 * ((q1 - q0).abs() / d_theta + (p1 - p0).abs() / d_p)).ceil() as usize;
                let steps = steps.max(1);
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let q = q0 + t * (q1 - q0);
                    let p = p0 + t * (p1 - p0);
                    let ci = (q / d_theta).floor() as i64;
                    let iw = ci.rem_euclid(nt) as usize;
                    let cj = j_of(p) as usize;
                    hits.push((cj * geom.n_theta + iw) as u32);
                }
            }
            return hits;
        }
        let hull = convex_hull(&imgs);
        // Walk the hull boundary at sub-cell steps, recording per-row the
        // unwrapped column range, then fill each row between its extremes.
        let mut j_min = i64::MAX;
        let mut j_max = i64::MIN;
        for &(_, p) in &hull {
            j_min = j_min.min(j_of(p));
            j_max = j_max.max(j_of(p));
        }
        let rows = (j_max - j_min + 1) as usize;
        let mut row_lo = vec![i64::MAX; rows];
        let mut row_hi = vec![i64::MIN; rows];
        let m = hull.len();
        for e in 0..m {
            let (q0, p0) = hull[e];
            let (q1, p1) = hull[(e + 1) % m];
            let steps = (2.0 * ((q1 - q0).abs() / d_theta + (p1 - p0).abs() / d_p)).ceil() as usize;
            for s in 0..=steps.max(1) {
                let t = s as f64 / steps.max(1) as f64;
                let q = q0 + t * (q1 - q0);
                let p = p0 + t * (p1 - p0);
                let ci = (q / d_theta).floor() as i64;
                let cj = j_of(p);
                let r = (cj - j_min) as usize;
                row_lo[r] = row_lo[r].min(ci);
                row_hi[r] = row_hi[r].max(ci);
            }
            if m == 1 {
                break;
            }
        }
        for (r, (&lo, &hi)) in row_lo.iter().zip(row_hi.iter()).enumerate() {
            if lo > hi {
                continue;
            }
            let cj = (j_min + r as i64) as usize;
            for ci in lo..=hi.min(lo + nt - 1) {
                let iw = ci.rem_euclid(nt) as usize;
                hits.push((cj * geom.n_theta + iw) as u32);
            }
        }
        hits
    });
    let mut hit = AnnulusBitmap::empty(geom);
    for list in hit_lists {
        for k in list {
            hit.bits[k as usize] = true;
        }
    }
    Ok(b.intersect(&hit))
}

#[doc(hidden)]
pub fn subdivision_sweep_public(
    map: &dyn AnnulusMap,
    b: &AnnulusBitmap,
    workers: usize,
) -> Result<AnnulusBitmap, AttractorError> {
    subdivision_sweep(map, b, workers)
}

/// Subdivision C0: start from the full grid at 128 x (n_p/n_theta scaled)
/// resolution, sweep to a fixed point, then refine toward the target
/// resolution, re-sweeping at each level.
pub fn compute_c0_subdivision(
    map: &dyn AnnulusMap,
    geom: BitmapGeom,
    workers: usize,
) -> Result<AnnulusBitmap, AttractorError> {
    check_absorbing(map, &geom)?;
    if !geom.n_theta.is_power_of_two() || !geom.n_p.is_power_of_two() {
        return Err(AttractorError::Config(
            "subdivision requires power-of-two bitmap dimensions".into(),
        ));
    }
    // Coarsest level: 128 in the larger dimension, same aspect.
    let mut shift = 0usize;
    while (geom.n_theta >> (shift + 1)).max(geom.n_p >> (shift + 1)) >= 128 {
        shift += 1;
    }
    let coarse = BitmapGeom::new(
        geom.n_theta >> shift,
        geom.n_p >> shift,
        geom.period,
        geom.p_min,
        geom.p_max,
    );
    let mut b = AnnulusBitmap::full(coarse);
    loop {
        // Sweep to a fixed point at this level (cap 64 sweeps).
        for _ in 0..64 {
            let next = subdivision_sweep(map, &b, workers)?;
            let stable = next == b;
            b = next;
            if stable {
                break;
            }
        }
        if b.geom.n_theta == geom.n_theta {
            break;
        }
        // Refine: double resolution and add a 1-cell safety margin so the
        // finer sweeps can carve from a superset.
        b = b.refine_double().dilate(1);
    }
    Ok(b)
}

/// Result of the C1 "cutting out the hair" step.
#[derive(Debug)]
pub struct C1Result {
    pub bitmap: AnnulusBitmap,
    /// C0 cells kept because they are near neither flood (unresolved
    /// pockets, e.g. the region enclosed by a spiral at coarse resolution).
    pub pocket_cells: usize,
    pub u_plus_cells: usize,
    pub u_minus_cells: usize,
}

/// Flood-fill the complement of C0 from the top (U+) and bottom (U-) edges
/// with 4-connectivity; keep C0 cells within Chebyshev radius r of BOTH
/// floods, or of NEITHER (pocket cells, counted separately).
pub fn compute_c1(c0: &AnnulusBitmap, r: usize) -> Result<C1Result, AttractorError> {
    let geom = c0.geom;
    let (nt, np) = (geom.n_theta, geom.n_p);
    if c0.count() == 0 {
        return Err(AttractorError::Empty("compute_c1"));
    }
    let flood = |from_top: bool| -> AnnulusBitmap {
        let mut seen = AnnulusBitmap::empty(geom);
        let mut queue = std::collections::VecDeque::new();
        let j0 = if from_top { np - 1 } else { 0 };
        for i in 0..nt {
            if !c0.get(i, j0) {
                seen.set(i, j0, true);
                queue.push_back((i, j0));
            }
        }
        while let Some((i, j)) = queue.pop_front() {
            let neighbors = [
                ((i + 1) % nt, j),
                ((i + nt - 1) % nt, j),
                (i, j + 1),
                (i, j.wrapping_sub(1)),
            ];
            for &(ni, nj) in &neighbors {
                if nj < np && !c0.get(ni, nj) && !seen.get(ni, nj) {
                    seen.set(ni, nj, true);
                    queue.push_back((ni, nj));
                }
            }
        }
        seen
    };
    let u_plus = flood(true);
    let u_minus = flood(false);
    if u_plus.count() == 0 {
        return Err(AttractorError::Degenerate("top"));
    }
    if u_minus.count() == 0 {
        return Err(AttractorError::Degenerate("bottom"));
    }
    let near_plus = u_plus.dilate(r);
    let near_minus = u_minus.dilate(r);
    let mut bitmap = AnnulusBitmap::empty(geom);
    let mut pocket_bm = AnnulusBitmap::empty(geom);
    let mut pockets = 0usize;
    for j in 0..np {
        for i in 0..nt {
            if !c0.get(i, j) {
                continue;
            }
            let np_ = near_plus.get(i, j);
            let nm_ = near_minus.get(i, j);
            if np_ && nm_ {
                bitmap.set(i, j, true);
            } else if !np_ && !nm_ {
                bitmap.set(i, j, true);
                pocket_bm.set(i, j, true);
                pockets += 1;
            }
        }
    }
    // Rescue pass: a cell near exactly one flood but adjacent (within r) to a
    // pocket sits in the transition zone where the twin corridor of a double
    // spiral has pinched below cell size; the other flood reaches it inside
    // the cell, so keep it. Genuine hair dangles far from any pocket.
    let near_pocket = pocket_bm.dilate(r);
    for j in 0..np {
        for i in 0..nt {
            if c0.get(i, j) && !bitmap.get(i, j) && near_pocket.get(i, j) {
                bitmap.set(i, j, true);
            }
        }
    }
    Ok(C1Result {
        u_plus_cells: u_plus.count(),
        u_minus_cells: u_minus.count(),
        bitmap,
        pocket_cells: pockets,
    })
}

/// Symmetric Hausdorff distance between two bitmaps in cell units (Euclidean
/// with periodic theta index distance).
pub fn hausdorff_cells(a: &AnnulusBitmap, b: &AnnulusBitmap) -> Result<f64, AttractorError> {
    assert_eq!(a.geom, b.geom);
    let ca = a.set_cells();
    let cb = b.set_cells();
    if ca.is_empty() || cb.is_empty() {
        return Err(AttractorError::Empty("hausdorff"));
    }
    Ok(directed_hausdorff(&ca, &cb, a.geom.n_theta)
        .max(directed_hausdorff(&cb, &ca, a.geom.n_theta)))
}

/// Directed Hausdorff distance (cells) from the set cells of `a` to those
/// of `b` (how far `a` sticks out of `b`).
pub fn directed_hausdorff_cells(
    a: &AnnulusBitmap,
    b: &AnnulusBitmap,
) -> Result<f64, AttractorError> {
    assert_eq!(a.geom, b.geom);
    let ca = a.set_cells();
    let cb = b.set_cells();
    if ca.is_empty() || cb.is_empty() {
        return Err(AttractorError::Empty("directed_hausdorff"));
    }
    Ok(directed_hausdorff(&ca, &cb, a.geom.n_theta))
}

fn directed_hausdorff(a: &[(usize, usize)], b: &[(usize, usize)], nt: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for &(ai, aj) in a {
        let mut best = f64::INFINITY;
        for &(bi, bj) in b {
            let di = (ai as isize - bi as isize).unsigned_abs().min(nt - (ai as isize - bi as isize).unsigned_abs());
            let dj = aj as isize - bj as isize;
            let d2 = (di * di) as f64 + (dj * dj) as f64;
            if d2 < best {
                best = d2;
            }
            if best <= worst * worst {
                break;
            }
        }
        if best.sqrt() > worst {
            worst = best.sqrt();
        }
    }
    worst
}

/// Test whether graph(du) lies within tol_cells of a set cell of C1, at
/// every differentiability node (kink clusters excluded with a 3-cell
/// margin). Returns (verdict, max offset in cells).
pub fn check_graph_in_attractor(
    u: &GridFunction,
    c1: &AnnulusBitmap,
    tol_cells: f64,
) -> Result<(bool, f64), AttractorError> {
    let (ok, max, _) = check_graph_in_attractor_offsets(u, c1, tol_cells)?;
    Ok((ok, max))
}

/// As `check_graph_in_attractor`, additionally returning the per-node
/// (x, offset-in-cells) pairs for the non-excluded nodes.
pub fn check_graph_in_attractor_offsets(
    u: &GridFunction,
    c1: &AnnulusBitmap,
    tol_cells: f64,
) -> Result<(bool, f64, Vec<(f64, f64)>), AttractorError> {
    let geom = c1.geom;
    let cells = c1.set_cells();
    if cells.is_empty() {
        return Err(AttractorError::Empty("check_graph_in_attractor"));
    }
    let kinks = crate::weakkam::detect_kinks(u);
    let n = u.n;
    let mut excluded = vec![false; n];
    for k in &kinks {
        let b = if k.last >= k.first { k.last } else { k.last + n };
        for i in (k.first as isize - 3)..=(b as isize + 3) {
            excluded[i.rem_euclid(n as isize) as usize] = true;
        }
    }
    let mut max_offset: f64 = 0.0;
    let mut offsets: Vec<(f64, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        if excluded[i] {
            continue;
        }
        let q = u.x(i);
        let p = u.d_central(i);
        // Continuous cell coordinates of the graph point.
        let ci = q.rem_euclid(geom.period) / geom.d_theta() - 0.5;
        let cj = (p - geom.p_min) / geom.d_p() - 0.5;
        let mut best = f64::INFINITY;
        for &(bi, bj) in &cells {
            let mut di = (ci - bi as f64).abs();
            di = di.min(geom.n_theta as f64 - di);
            let dj = cj - bj as f64;
            let d2 = di * di + dj * dj;
            if d2 < best {
                best = d2;
            }
        }
        offsets.push((q, best.sqrt()));
        max_offset = max_offset.max(best.sqrt());
    }
    Ok((max_offset <= tol_cells, max_offset, offsets))
}
