//! Small numeric helpers shared across the pipeline: natural cubic splines,
//! phase unwrapping, robust statistics, and seed derivation.

use std::f64::consts::PI;

/// Wrap an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let mut w = x % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Smallest absolute angular distance between two phases.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// Natural cubic spline through `(xs, ys)`, `xs` strictly increasing.
///
/// Natural boundary conditions (zero second derivative at the ends) make the
/// spline a linear operator on `ys` that reproduces affine data exactly; the
/// zero-subcarrier interpolation relies on both properties.
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "spline needs at least 2 points");
        assert!(
            xs.windows(2).all(|w| w[1] > w[0]),
            "spline abscissae must be strictly increasing"
        );
        let n = xs.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Tridiagonal solve for interior second derivatives.
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                sub[i] = h0;
                diag[i] = 2.0 * (h0 + h1);
                sup[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            // Thomas algorithm over rows 1..n-1 (rows 0 and n-1 are fixed zero).
            for i in 2..n - 1 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            second[n - 2] = rhs[n - 2] / diag[n - 2];
            for i in (1..n - 2).rev() {
                second[i] = (rhs[i] - sup[i] * second[i + 1]) / diag[i];
            }
        }
        CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            second,
        }
    }

    /// Evaluate the spline at `x`. Outside the knot range the boundary cubic
    /// is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let mut i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).expect("non-finite abscissa"))
        {
            Ok(j) => j.min(n - 2),
            Err(j) => j.saturating_sub(1).min(n - 2),
        };
        if x < self.xs[0] {
            i = 0;
        }
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h
                / 6.0
    }
}

/// Unwrap a phase sequence sampled at integer positions `ks` (strictly
/// increasing, possibly with gaps). Each sample is shifted by a multiple of
/// 2*pi so it lands within pi of a linear prediction from the previous two
/// unwrapped samples; the prediction bridges the missing k=0 gap without
/// assuming a slope a priori.
pub fn unwrap_phases(ks: &[i32], phases: &[f64]) -> Vec<f64> {
    assert_eq!(ks.len(), phases.len());
    let mut out = Vec::with_capacity(phases.len());
    for (i, (&k, &ph)) in ks.iter().zip(phases).enumerate() {
        if i == 0 {
            out.push(ph);
            continue;
        }
        let predicted = if i == 1 {
            out[0]
        } else {
            let slope = (out[i - 1] - out[i - 2]) / f64::from(ks[i - 1] - ks[i - 2]);
            out[i - 1] + slope * f64::from(k - ks[i - 1])
        };
        let mut v = ph;
        let turns = ((predicted - v) / (2.0 * PI)).round();
        v += turns * 2.0 * PI;
        out.push(v);
    }
    out
}

/// Median of a slice (empty slices are a caller bug).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Quantile with linear interpolation, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

/// Derive a per-trial seed from a base seed and a counter (SplitMix64).
/// Keeps parallel trials decorrelated while staying reproducible.
pub fn derive_seed(base: u64, counter: u64) -> u64 {
    let mut z = base.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
        for x in [-100.0, -7.3, 0.0, 1.0, 55.5] {
            let w = wrap_phase(x);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!(angular_distance(w, x) < 1e-9);
        }
    }

    #[test]
    fn spline_reproduces_affine_data() {
        let xs: Vec<f64> = (-15..=15).filter(|&k| k != 0).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.25 * x - 7.0).collect();
        let s = CubicSpline::new(&xs, &ys);
        for x in [-15.0, -0.5, 0.0, 0.37, 14.9] {
            assert!((s.eval(x) - (3.25 * x - 7.0)).abs() < 1e-9, "at {x}");
        }
    }

    #[test]
    fn spline_interpolates_smooth_data() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0.3 * x).sin()).collect();
        let s = CubicSpline::new(&xs, &ys);
        for i in 0..19 {
            let x = xs[i] + 0.5;
            assert!((s.eval(x) - (0.3 * x).sin()).abs() < 4e-3, "at {x}");
        }
        // knots are reproduced exactly
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_is_linear_in_data() {
        let xs: Vec<f64> = (-5..=5).map(f64::from).collect();
        let y1: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let y2: Vec<f64> = xs.iter().map(|x| (x * 0.7).sin() + 0.2 * x).collect();
        let sum: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 2.0 * a + b).collect();
        let s1 = CubicSpline::new(&xs, &y1);
        let s2 = CubicSpline::new(&xs, &y2);
        let ss = CubicSpline::new(&xs, &sum);
        for x in [-4.3, -0.2, 0.0, 1.7, 4.9] {
            assert!((ss.eval(x) - (2.0 * s1.eval(x) + s2.eval(x))).abs() < 1e-10);
        }
    }

    #[test]
    fn unwrap_recovers_steep_ramp_across_gap() {
        // Slope of 2.3 rad per index step, sampled at k = -15..-1, 1..15.
        let ks: Vec<i32> = (-15..=15).filter(|&k| k != 0).collect();
        let slope = 2.3;
        let truth: Vec<f64> = ks.iter().map(|&k| slope * f64::from(k) + 0.4).collect();
        let wrapped: Vec<f64> = truth.iter().map(|&p| wrap_phase(p)).collect();
        let un = unwrap_phases(&ks, &wrapped);
        // Unwrapped sequence equals truth up to one global 2*pi multiple.
        let off = un[0] - truth[0];
        assert!(
            (off / (2.0 * PI) - (off / (2.0 * PI)).round()).abs() < 1e-9,
            "offset must be a whole number of turns"
        );
        for (u, t) in un.iter().zip(&truth) {
            assert!((u - t - off).abs() < 1e-9);
        }
    }

    #[test]
    fn median_mad_quantile() {
        let v = [1.0, 9.0, 2.0, 4.0, 3.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(mad(&v), 1.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 9.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        let e = [1.0, 2.0];
        assert_eq!(median(&e), 1.5);
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }
}
