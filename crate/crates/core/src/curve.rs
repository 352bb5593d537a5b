//! Ordered point sequences in the lift of T^1 x R: heteroclinic branches,
//! separatrices, attractor branches.

/// Polyline in the universal cover: points are (q_lift, p). Wrapping to the
/// fundamental domain happens only at presentation/rasterization time.
#[derive(Debug, Clone, Default)]
pub struct PolylineCurve {
    pub points: Vec<(f64, f64)>,
}

impl PolylineCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polygonal arclength.
    pub fn arclength(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }

    /// Resample to `n` points at uniform arclength spacing (endpoints kept).
    pub fn resample_uniform(&self, n: usize) -> PolylineCurve {
        assert!(n >= 2 && self.points.len() >= 2);
        let mut cum = Vec::with_capacity(self.points.len());
        cum.push(0.0);
        for w in self.points.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            cum.push(cum.last().unwrap() + (dx * dx + dy * dy).sqrt());
        }
        let total = *cum.last().unwrap();
        let mut out = Vec::with_capacity(n);
        let mut seg = 0usize;
        for i in 0..n {
            let s = total * i as f64 / (n - 1) as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let (s0, s1) = (cum[seg], cum[seg + 1]);
            let t = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (self.points[seg], self.points[seg + 1]);
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
        PolylineCurve::new(out)
    }

    /// CSV export `s,q,p` with s the cumulative arclength.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,q,p\n");
        let mut acc = 0.0;
        for (i, &(q, p)) in self.points.iter().enumerate() {
            if i > 0 {
                let (a, b) = (self.points[i - 1], self.points[i]);
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                acc += (dx * dx + dy * dy).sqrt();
            }
            s.push_str(&format!(
                "{},{},{}\n",
                crate::util::fmt_f64(acc),
                crate::util::fmt_f64(q),
                crate::util::fmt_f64(p)
            ));
        }
        s
    }

    /// Minimum Euclidean distance from a point to the polyline (in the lift).
    pub fn distance_to(&self, q: f64, p: f64) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            let (vx, vy) = (bx - ax, by - ay);
            let len2 = vx * vx + vy * vy;
            let t = if len2 > 0.0 {
                (((q - ax) * vx + (p - ay) * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (dx, dy) = (q - (ax + t * vx), p - (ay + t * vy));
            best = best.min((dx * dx + dy * dy).sqrt());
        }
        best
    }
}
