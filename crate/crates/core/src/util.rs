//! Small shared helpers: deterministic float formatting, quadrature, and a
//! fixed-size worker pool over index ranges.

/// Format a float with 17 significant digits — enough to round-trip f64
/// exactly, so reruns with identical configs produce byte-identical output.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Normalize -0.0 so output bytes don't depend on sign-of-zero noise.
        return "0.0000000000000000e0".to_string();
    }
    format!("{:.16e}", x)
}

/// Cumulative Simpson quadrature of uniformly sampled `f` with spacing `dt`:
/// returns the running integral at every sample (composite Simpson on even
/// prefixes, Simpson 3/8 correction for the final interval of odd prefixes).
pub fn cumulative_simpson(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    // Trapezoid for the first interval; replaced below once a Simpson pair
    // is available.
    out[1] = 0.5 * dt * (f[0] + f[1]);
    for i in 2..n {
        if i % 2 == 0 {
            out[i] = out[i - 2] + dt / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
        } else {
            // Odd prefix end: Simpson up to i-3, then 3/8 rule on the last
            // three intervals when possible, else Simpson + trapezoid.
            if i >= 3 {
                out[i] = out[i - 3]
                    + 3.0 * dt / 8.0 * (f[i - 3] + 3.0 * f[i - 2] + 3.0 * f[i - 1] + f[i]);
            } else {
                out[i] = out[i - 1] + 0.5 * dt * (f[i - 1] + f[i]);
            }
        }
    }
    out
}

/// Run `job(i)` for i in 0..n on `workers` threads, collecting results in
/// index order. `job` must be Sync; results are written into a Vec.
pub fn parallel_map<T, F>(n: usize, workers: usize, job: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 || n < 2 {
        return (0..n).map(job).collect();
    }
    let mut out = vec![T::default(); n];
    let job = &job;
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        for (w, slot) in out.chunks_mut(chunk).enumerate() {
            let start = w * chunk;
            s.spawn(move || {
                for (k, cell) in slot.iter_mut().enumerate() {
                    *cell = job(start + k);
                }
            });
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_roundtrip() {
        for &x in &[
            0.1,
            -3.25,
            std::f64::consts::PI,
            1e-300,
            2.2250738585072014e-308,
            8.0,
        ] {
            let s = fmt_f64(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x, y, "{s}");
        }
        assert_eq!(fmt_f64(0.0), fmt_f64(-0.0));
    }

    #[test]
    fn simpson_cubic_exact() {
        // Simpson integrates cubics exactly.
        let n = 101;
        let dt = 0.01;
        let f: Vec<f64> = (0..n).map(|i| {
            let t = i as f64 * dt;
            t * t * t - 2.0 * t
        }).collect();
        let cum = cumulative_simpson(&f, dt);
        for i in (0..n).step_by(2) {
            let t = i as f64 * dt;
            let exact = t * t * t * t / 4.0 - t * t;
            assert!((cum[i] - exact).abs() < 1e-14, "i={i}");
        }
        // Odd prefixes are high-order too (3/8 rule).
        let t = 99.0 * dt;
        let exact = t * t * t * t / 4.0 - t * t;
        assert!((cum[99] - exact).abs() < 1e-13);
    }

    #[test]
    fn parallel_map_matches_serial() {
        let f = |i: usize| (i * i) as f64;
        let a = parallel_map(1000, 4, f);
        let b: Vec<f64> = (0..1000).map(f).collect();
        assert_eq!(a, b);
    }
}
