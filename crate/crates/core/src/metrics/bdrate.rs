//! Bjøntegaard delta rate, classic cubic-polynomial form.
//!
//! Each curve is fitted with a least-squares cubic `log10(rate) = p(quality)`; the
//! fits are integrated over the shared quality interval and the mean log-rate gap is
//! reported as a percentage.

use crate::scalar::Scalar;

use super::MetricsError;

/// One operating point of a rate-quality curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint<T> {
    pub rate: T,
    pub quality: T,
}

impl<T> RdPoint<T> {
    pub fn new(rate: T, quality: T) -> Self {
        Self { rate, quality }
    }
}

const DEGREE: usize = 3;

/// Average rate difference of `test` relative to `anchor`, in percent. Negative means
/// `test` needs fewer bits for the same quality.
pub fn bd_rate<T: Scalar>(anchor: &[RdPoint<T>], test: &[RdPoint<T>]) -> Result<T, MetricsError> {
    for curve in [anchor, test] {
        if curve.len() < DEGREE + 1 {
            return Err(MetricsError::InsufficientPoints(curve.len()));
        }
        if let Some(p) = curve.iter().find(|p| !(p.rate > T::zero()) || !p.rate.is_finite() || !p.quality.is_finite()) {
            return Err(MetricsError::Domain(format!("invalid curve point ({}, {})", p.rate, p.quality)));
        }
    }
    let (a_lo, a_hi) = quality_range(anchor);
    let (t_lo, t_hi) = quality_range(test);
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if !(hi > lo) {
        return Err(MetricsError::NoOverlap);
    }
    // Fit in a centred, scaled variable; the cubic family is invariant under affine
    // reparametrisation, and this keeps the least-squares system well conditioned.
    let centre = (lo + hi) / T::of(2.0);
    let scale = (hi - lo) / T::of(2.0);
    let a_poly = fit_log_rate(anchor, centre, scale)?;
    let t_poly = fit_log_rate(test, centre, scale)?;
    // Integration bounds are -1 and 1 in the scaled variable.
    let mean_gap = (integrate(&t_poly) - integrate(&a_poly)) / T::of(2.0);
    Ok((T::of(10.0).powf(mean_gap) - T::one()) * T::of(100.0))
}

fn quality_range<T: Scalar>(curve: &[RdPoint<T>]) -> (T, T) {
    curve
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| (lo.min(p.quality), hi.max(p.quality)))
}

fn fit_log_rate<T: Scalar>(curve: &[RdPoint<T>], centre: T, scale: T) -> Result<[T; DEGREE + 1], MetricsError> {
    let rows: Vec<[T; DEGREE + 1]> = curve
        .iter()
        .map(|p| {
            let s = (p.quality - centre) / scale;
            [T::one(), s, s * s, s * s * s]
        })
        .collect();
    let rhs: Vec<T> = curve.iter().map(|p| p.rate.log10()).collect();
    least_squares(rows, rhs).ok_or_else(|| MetricsError::Domain("curve qualities do not determine a cubic".into()))
}

/// ∫_{-1}^{1} p(s) ds
fn integrate<T: Scalar>(p: &[T; DEGREE + 1]) -> T {
    // odd powers vanish over a symmetric interval
    T::of(2.0) * p[0] + T::of(2.0 / 3.0) * p[2]
}

/// Householder QR least squares for a tall system with `K` columns.
fn least_squares<T: Scalar, const K: usize>(mut a: Vec<[T; K]>, mut b: Vec<T>) -> Option<[T; K]> {
    let m = a.len();
    let col_scale: T = a.iter().flat_map(|r| r.iter()).fold(T::zero(), |acc, x| acc.max(x.abs()));
    for k in 0..K {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).fold(T::zero(), |s, x| s + x).sqrt();
        if norm <= col_scale * T::epsilon() * T::of(1e3) {
            return None;
        }
        let alpha = if a[k][k] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| a[i][k]).collect();
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().fold(T::zero(), |s, &x| s + x * x);
        if vnorm2 == T::zero() {
            continue;
        }
        for j in k..K {
            let dot = (k..m).fold(T::zero(), |s, i| s + v[i - k] * a[i][j]);
            let f = T::of(2.0) * dot / vnorm2;
            for i in k..m {
                a[i][j] = a[i][j] - f * v[i - k];
            }
        }
        let dot = (k..m).fold(T::zero(), |s, i| s + v[i - k] * b[i]);
        let f = T::of(2.0) * dot / vnorm2;
        for i in k..m {
            b[i] = b[i] - f * v[i - k];
        }
    }
    let mut x = [T::zero(); K];
    for k in (0..K).rev() {
        let tail = (k + 1..K).fold(T::zero(), |s, j| s + a[k][j] * x[j]);
        x[k] = (b[k] - tail) / a[k][k];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scale: f64) -> Vec<RdPoint<f64>> {
        [(1.0e6, 36.0), (2.0e6, 38.1), (4.0e6, 40.3), (8.0e6, 42.6), (1.6e7, 44.7)]
            .iter()
            .map(|&(r, q)| RdPoint::new(r * scale, q))
            .collect()
    }

    #[test]
    fn identical_curves_give_zero() {
        let a = curve(1.0);
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-10);
    }

    #[test]
    fn uniform_rate_shift_is_recovered() {
        let a = curve(1.0);
        assert!((bd_rate(&a, &curve(1.10)).unwrap() - 10.0).abs() < 1e-6);
        assert!((bd_rate(&a, &curve(0.90)).unwrap() + 10.0).abs() < 1e-6);
    }

    #[test]
    fn cubic_is_fit_exactly() {
        // log10(rate) is an exact cubic in quality, so the fit reproduces it.
        let p = |q: f64| 6.0 + 0.1 * (q - 40.0) + 0.002 * (q - 40.0).powi(2) - 1e-4 * (q - 40.0).powi(3);
        let pts: Vec<_> = (0..6).map(|i| 35.0 + 2.0 * i as f64).map(|q| RdPoint::new(10f64.powf(p(q)), q)).collect();
        let poly = fit_log_rate(&pts, 40.0, 5.0).unwrap();
        assert!((poly[0] - 6.0).abs() < 1e-12);
        assert!((poly[1] - 0.5).abs() < 1e-12);
        assert!((poly[2] - 0.05).abs() < 1e-12);
        assert!((poly[3] + 0.0125).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = curve(1.0);
        assert_eq!(bd_rate(&a[..3], &a), Err(MetricsError::InsufficientPoints(3)));
        let far: Vec<_> = a.iter().map(|p| RdPoint::new(p.rate, p.quality + 100.0)).collect();
        assert_eq!(bd_rate(&a, &far), Err(MetricsError::NoOverlap));
        let mut bad = a.clone();
        bad[0].rate = 0.0;
        assert!(matches!(bd_rate(&a, &bad), Err(MetricsError::Domain(_))));
        let flat: Vec<_> = a.iter().map(|p| RdPoint::new(p.rate, 40.0)).collect();
        assert!(bd_rate(&a, &flat).is_err());
    }
}
