//! Statistical primitives used by the verification suites.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Suites fail below this p-value.
pub const P_FAIL: f64 = 1e-3;
/// Suites warn below this p-value.
pub const P_WARN: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("argument outside the domain: {0}")]
    DomainError(String),
    #[error("empty sample")]
    EmptySample,
    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    BadK { k: usize, n: usize },
}

/// Modified Lentz evaluation of the continued fraction for `I_x(a, b)`.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// The regularized incomplete beta function `I_x(a, b)`, the CDF of `Beta(a, b)` at `x`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64, StatsError> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(StatsError::DomainError(format!("a = {a}, b = {b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::DomainError(format!("x = {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// The `Beta(a, b)` CDF as a closure (parameters assumed valid).
pub fn beta_cdf(a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x| regularized_incomplete_beta(a, b, x.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form, fast for small arguments
        let pi2 = std::f64::consts::PI.powi(2);
        let mut cdf = 0.0;
        for k in 1..=100 {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * pi2 / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if k >= 20 && term < 1e-12 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if k >= 20.0 && term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous `cdf`, with the
/// asymptotic p-value (Stephens' small-sample scaling of the statistic).
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsReport, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sqrt_n = nf.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsReport {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
        n,
    })
}

/// `ceil(n^0.6)`.
pub fn default_hill_k(n: usize) -> usize {
    ((n as f64).powf(0.6).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Hill estimate of the tail index from the top `k` order statistics.
pub fn hill_estimator(sample: &[f64], k: usize) -> Result<f64, StatsError> {
    let n = sample.len();
    if k < 1 || k >= n {
        return Err(StatsError::BadK { k, n });
    }
    if let Some(bad) = sample.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(StatsError::DomainError(format!("non-positive value {bad}")));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| b.total_cmp(a));
    let threshold = xs[k].ln();
    let mean_spacing = xs[..k].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
    Ok(1.0 / mean_spacing)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> MeanSe {
        let n = xs.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se, n }
    }

    /// Whether `value` lies within `z` standard errors of the mean.
    pub fn within(&self, value: f64, z: f64) -> bool {
        (self.mean - value).abs() <= z * self.se
    }
}

/// Sample Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = MeanSe::of(xs).mean;
    let my = MeanSe::of(ys).mean;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomplete_beta_closed_forms() {
        for x in [0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x).unwrap() - x).abs() < 1e-14);
            assert!((regularized_incomplete_beta(2.0, 1.0, x).unwrap() - x * x).abs() < 1e-14);
        }
        assert_eq!(regularized_incomplete_beta(0.3, 7.0, 1.0).unwrap(), 1.0);
        assert!((regularized_incomplete_beta(2.0, 1.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(regularized_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(regularized_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn incomplete_beta_matches_reference() {
        for &(a, b) in &[(0.5, 0.5), (1.5, 1.0), (3.0, 7.5), (0.02, 1.3), (40.0, 2.0)] {
            for k in 0..=20 {
                let x = k as f64 / 20.0;
                let ours = regularized_incomplete_beta(a, b, x).unwrap();
                let reference = statrs::function::beta::beta_reg(a, b, x);
                assert!(
                    (ours - reference).abs() < 1e-10,
                    "({a},{b},{x}): {ours} vs {reference}"
                );
                let sym = regularized_incomplete_beta(b, a, 1.0 - x).unwrap();
                assert!((ours + sym - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ks_constructions() {
        let r = ks_test(&[0.5], |x| x).unwrap();
        assert_eq!(r.statistic, 0.5);
        let n = 200;
        let q: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let r = ks_test(&q, |x| x).unwrap();
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-15);
        assert!(r.p_value > 0.999);
        assert_eq!(ks_test(&[], |x| x), Err(StatsError::EmptySample));
    }

    #[test]
    fn kolmogorov_series_branches_meet() {
        let small = |l: f64| {
            let pi2 = std::f64::consts::PI.powi(2);
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / l
                * (1..200)
                    .map(|k| (-((2 * k - 1) as f64).powi(2) * pi2 / (8.0 * l * l)).exp())
                    .sum::<f64>()
        };
        let large = |l: f64| {
            2.0 * (1..200)
                .map(|k| {
                    (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * (k * k) as f64 * l * l).exp()
                })
                .sum::<f64>()
        };
        for l in [0.6, 0.9, 1.18, 1.5] {
            assert!((small(l) - large(l)).abs() < 1e-12);
        }
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn hill_pareto_and_scaling() {
        let n = 10_000;
        let xs: Vec<f64> = (1..=n)
            .map(|i| (1.0 - (i as f64 - 0.5) / n as f64).powf(-0.5))
            .collect();
        let h = hill_estimator(&xs, n / 10).unwrap();
        assert!((h - 2.0).abs() < 0.2, "{h}");
        let scaled: Vec<f64> = xs.iter().map(|x| 37.5 * x).collect();
        assert!((hill_estimator(&scaled, n / 10).unwrap() - h).abs() < 1e-9);
        assert!(matches!(
            hill_estimator(&xs, 0),
            Err(StatsError::BadK { .. })
        ));
        assert!(matches!(
            hill_estimator(&xs, n),
            Err(StatsError::BadK { .. })
        ));
        assert_eq!(default_hill_k(100_000), 1000);
    }

    #[test]
    fn mean_se_basics() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(m.within(2.5, 1.0));
    }
}
