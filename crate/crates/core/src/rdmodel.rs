//! Per-frame power-law rate-distortion model `D(R) = α R^β` with `α > 0`, `β < 0`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum RdModelError {
    #[error("need at least 2 samples with distinct rates, got {0}")]
    InsufficientSamples(usize),
    #[error("fitted exponent {beta} is not negative; distortion does not decrease with rate")]
    NonDecreasingRD { beta: f64 },
    #[error("sample at qp {qp} has rate {rate} and sse {sse}; both must be positive")]
    InvalidSample { qp: i32, rate: f64, sse: f64 },
    #[error("invalid model parameters alpha={alpha}, beta={beta}")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("rate must be positive, got {0}")]
    DomainError(f64),
}

/// One trial measurement of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdSample<T> {
    pub qp: i32,
    pub rate: T,
    pub sse: T,
}

impl<T> RdSample<T> {
    pub fn new(qp: i32, rate: T, sse: T) -> Self {
        Self { qp, rate, sse }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdModelParams<T> {
    alpha: T,
    beta: T,
    r_squared: T,
    sample_count: usize,
}

impl<T: Scalar> RdModelParams<T> {
    /// A model given directly by its parameters (no fit statistics).
    pub fn new(alpha: T, beta: T) -> Result<Self, RdModelError> {
        if !(alpha > T::zero()) || !alpha.is_finite() || !(beta < T::zero()) || !beta.is_finite() {
            return Err(RdModelError::InvalidParams { alpha: alpha.to_f64_lossy(), beta: beta.to_f64_lossy() });
        }
        Ok(Self { alpha, beta, r_squared: T::one(), sample_count: 0 })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Coefficient of determination of the log-log fit.
    pub fn r_squared(&self) -> T {
        self.r_squared
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// `α R^β`.
    pub fn eval(&self, rate: T) -> Result<T, RdModelError> {
        if !(rate > T::zero()) {
            return Err(RdModelError::DomainError(rate.to_f64_lossy()));
        }
        Ok(self.eval_unchecked(rate))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, rate: T) -> T {
        self.alpha * rate.powf(self.beta)
    }

    /// `dD/dR = α β R^(β-1)`.
    #[inline]
    pub(crate) fn derivative_unchecked(&self, rate: T) -> T {
        self.alpha * self.beta * rate.powf(self.beta - T::one())
    }

    /// First-order Taylor expansion around `expansion_point`.
    pub fn linearize(&self, expansion_point: T) -> Result<LinearizedRd<T>, RdModelError> {
        if !(expansion_point > T::zero()) {
            return Err(RdModelError::DomainError(expansion_point.to_f64_lossy()));
        }
        let at = expansion_point.powf(self.beta);
        Ok(LinearizedRd {
            intercept: self.alpha * (T::one() - self.beta) * at,
            slope: self.alpha * self.beta * at / expansion_point,
            expansion_point,
        })
    }

    /// Returns a copy with `alpha` multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self, RdModelError> {
        let base = Self::new(self.alpha * factor, self.beta)?;
        Ok(Self { r_squared: self.r_squared, sample_count: self.sample_count, ..base })
    }
}

/// Tangent line `intercept + slope · R` of a power-law model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedRd<T> {
    pub intercept: T,
    pub slope: T,
    pub expansion_point: T,
}

impl<T: Scalar> LinearizedRd<T> {
    pub fn eval(&self, rate: T) -> T {
        self.intercept + self.slope * rate
    }
}

/// Ordinary least squares of `ln sse` on `ln rate`.
pub fn fit_power_model<T: Scalar>(samples: &[RdSample<T>]) -> Result<RdModelParams<T>, RdModelError> {
    for s in samples {
        if !(s.rate > T::zero()) || !(s.sse > T::zero()) || !s.rate.is_finite() || !s.sse.is_finite() {
            return Err(RdModelError::InvalidSample { qp: s.qp, rate: s.rate.to_f64_lossy(), sse: s.sse.to_f64_lossy() });
        }
    }
    let mut rates: Vec<T> = samples.iter().map(|s| s.rate).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    rates.dedup();
    if rates.len() < 2 {
        return Err(RdModelError::InsufficientSamples(rates.len()));
    }

    let n = T::of_usize(samples.len());
    let xs: Vec<T> = samples.iter().map(|s| s.rate.ln()).collect();
    let ys: Vec<T> = samples.iter().map(|s| s.sse.ln()).collect();
    let x_mean = xs.iter().copied().fold(T::zero(), |a, x| a + x) / n;
    let y_mean = ys.iter().copied().fold(T::zero(), |a, y| a + y) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    let beta = sxy / sxx;
    if !(beta < T::zero()) {
        return Err(RdModelError::NonDecreasingRD { beta: beta.to_f64_lossy() });
    }
    let intercept = y_mean - beta * x_mean;
    let ss_res = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + beta * x);
            r * r
        })
        .fold(T::zero(), |a, r| a + r);
    let r_squared = if syy > T::zero() { (T::one() - ss_res / syy).max(T::zero()).min(T::one()) } else { T::one() };
    Ok(RdModelParams { alpha: intercept.exp(), beta, r_squared, sample_count: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: [(f64, f64); 3] = [(4.46e7, -0.261), (1.96e8, -0.383), (6.93e7, -0.284)];

    fn generate(alpha: f64, beta: f64, rates: &[f64]) -> Vec<RdSample<f64>> {
        rates.iter().enumerate().map(|(i, &r)| RdSample::new(30 + i as i32, r, alpha * r.powf(beta))).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn recovers_table_rows() {
        let rates: [f64; 5] = [1e5, 2e5, 4e5, 8e5, 1.6e6];
        for (alpha, beta) in TABLE1 {
            let m = fit_power_model(&generate(alpha, beta, &rates)).unwrap();
            assert!(rel(m.alpha(), alpha) < 1e-9, "{} vs {alpha}", m.alpha());
            assert!(rel(m.beta(), beta) < 1e-9);
            assert!((m.r_squared() - 1.0).abs() < 1e-9);
            assert_eq!(m.sample_count(), 5);
        }
    }

    #[test]
    fn two_points_interpolate() {
        let m = fit_power_model(&generate(3.0, -0.5, &[4.0, 16.0])).unwrap();
        assert!(rel(m.alpha(), 3.0) < 1e-12);
        assert!(rel(m.beta(), -0.5) < 1e-12);
        assert!((m.r_squared() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_power_model::<f64>(&[]), Err(RdModelError::InsufficientSamples(0)));
        let same = [RdSample::new(1, 10.0, 5.0), RdSample::new(2, 10.0, 4.0)];
        assert_eq!(fit_power_model(&same), Err(RdModelError::InsufficientSamples(1)));
        let rising = generate(2.0, 0.3, &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_power_model(&rising), Err(RdModelError::NonDecreasingRD { .. })));
        let zero = [RdSample::new(1, 10.0, 0.0), RdSample::new(2, 20.0, 4.0)];
        assert!(matches!(fit_power_model(&zero), Err(RdModelError::InvalidSample { qp: 1, .. })));
    }

    #[test]
    fn eval_examples() {
        let m = RdModelParams::new(2.0, -1.0).unwrap();
        assert_eq!(m.eval(2.0).unwrap(), 1.0);
        let a = RdModelParams::new(TABLE1[0].0, TABLE1[0].1).unwrap();
        // 4.46e7 * 1e6^-0.261, evaluated with 40-digit arithmetic
        assert!(rel(a.eval(1e6).unwrap(), 1_211_531.913_902_230_8) < 1e-12);
        assert!(a.eval(2e6).unwrap() < a.eval(1e6).unwrap());
        assert_eq!(m.eval(0.0), Err(RdModelError::DomainError(0.0)));
        assert!(RdModelParams::new(1.0, 0.0).is_err());
        assert!(RdModelParams::new(-1.0, -0.5).is_err());
    }

    #[test]
    fn linearize_examples() {
        let m = RdModelParams::new(1.0, -1.0).unwrap();
        let t = m.linearize(1.0).unwrap();
        assert_eq!((t.intercept, t.slope), (2.0, -1.0));

        let c = RdModelParams::new(TABLE1[2].0, TABLE1[2].1).unwrap();
        let t = c.linearize(5e5).unwrap();
        assert!(rel(t.eval(5e5), c.eval(5e5).unwrap()) < 1e-12);
        assert!(t.slope < 0.0);

        let a = RdModelParams::new(TABLE1[0].0, TABLE1[0].1).unwrap();
        let r0 = 5e5;
        let t = a.linearize(r0).unwrap();
        for r in [0.5 * r0, 2.0 * r0] {
            assert!(t.eval(r) <= a.eval(r).unwrap());
        }
        assert!(a.linearize(-1.0).is_err());
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal};

    use super::*;

    fn generate(alpha: f64, beta: f64, rates: &[f64]) -> Vec<RdSample<f64>> {
        rates.iter().enumerate().map(|(i, &r)| RdSample::new(i as i32, r, alpha * r.powf(beta))).collect()
    }

    proptest! {
        #[test]
        fn fit_inverts_generation(
            log_alpha in -3.0f64..12.0,
            beta in -2.0f64..-0.01,
            base in 1e2f64..1e6,
            n in 3usize..9,
        ) {
            let alpha = 10f64.powf(log_alpha);
            let rates: Vec<f64> = (0..n).map(|i| base * 1.7f64.powi(i as i32)).collect();
            let m = fit_power_model(&generate(alpha, beta, &rates)).unwrap();
            prop_assert!((m.alpha() / alpha - 1.0).abs() < 1e-9);
            prop_assert!((m.beta() / beta - 1.0).abs() < 1e-9);
            prop_assert!((m.r_squared() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn tangent_lies_below(log_alpha in 6.0f64..9.0, beta in -0.9f64..-0.05, r0 in 1e4f64..1e7) {
            let m = RdModelParams::new(10f64.powf(log_alpha), beta).unwrap();
            let t = m.linearize(r0).unwrap();
            for k in -40..=40 {
                let r = r0 * 10f64.powf(f64::from(k) / 10.0);
                let d = m.eval(r).unwrap();
                prop_assert!(t.eval(r) <= d * (1.0 + 1e-12), "r {r}: {} > {d}", t.eval(r));
            }
        }

        #[test]
        fn slope_matches_central_difference(log_alpha in 6.0f64..9.0, beta in -0.9f64..-0.05, r0 in 1e4f64..1e7) {
            let m = RdModelParams::new(10f64.powf(log_alpha), beta).unwrap();
            let h = r0 * 1e-5;
            let fd = (m.eval(r0 + h).unwrap() - m.eval(r0 - h).unwrap()) / (2.0 * h);
            let slope = m.linearize(r0).unwrap().slope;
            prop_assert!((slope / fd - 1.0).abs() < 1e-6);
        }
    }

    /// Five log-spaced rates per Table-1 row with 5% multiplicative noise.
    /// Individual draws can dip below 0.95; the typical fit must not.
    #[test]
    fn noisy_fits_keep_high_r_squared() {
        let noise = LogNormal::new(0.0, 0.05).unwrap();
        let rates: [f64; 5] = [1e5, 2e5, 4e5, 8e5, 1.6e6];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (alpha, beta) in [(4.46e7, -0.261), (1.96e8, -0.383), (6.93e7, -0.284)] {
            let mut r2: Vec<f64> = (0..2000)
                .map(|_| {
                    let samples: Vec<_> = rates
                        .iter()
                        .enumerate()
                        .map(|(i, &r)| RdSample::new(i as i32, r, alpha * r.powf(beta) * noise.sample(&mut rng)))
                        .collect();
                    fit_power_model(&samples).unwrap().r_squared()
                })
                .collect();
            r2.sort_by(f64::total_cmp);
            let median = r2[r2.len() / 2];
            let below = r2.iter().filter(|&&x| x < 0.95).count() as f64 / r2.len() as f64;
            assert!(median >= 0.95, "beta {beta}: median R2 {median}");
            assert!(below < 0.15, "beta {beta}: {below} of fits below 0.95");
        }
    }
}
