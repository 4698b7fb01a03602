//! Goodness-of-fit helpers used by the diagnostics and the test-suite.

use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma};

pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

/// Gamma law with the given shape and rate.
pub struct GammaCdf(Gamma);

impl GammaCdf {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self(Gamma::new(shape, rate).expect("positive shape and rate"))
    }
}

impl Cdf for GammaCdf {
    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic<C: Cdf + ?Sized>(sample: &[f64], cdf: &C) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf.cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic Kolmogorov tail `P(K > t)`.
pub fn kolmogorov_tail(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// KS p-value with the small-sample correction `sqrt(n) + 0.12 + 0.11/sqrt(n)`.
pub fn ks_test<C: Cdf + ?Sized>(sample: &[f64], cdf: &C) -> f64 {
    let d = ks_statistic(sample, cdf);
    let rn = (sample.len() as f64).sqrt();
    kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d)
}

/// Pearson chi-square p-value of observed counts against expected probabilities.
pub fn chi_square_test(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    assert!(observed.len() >= 2, "need at least two cells");
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat)
}
