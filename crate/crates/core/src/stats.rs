//! Summary statistics used by the Monte Carlo experiments.

use serde::{Deserialize, Serialize};

/// Wilson score interval for `k` successes in `n` trials at normal quantile `zq`.
pub fn wilson(k: usize, n: usize, zq: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = zq * zq;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = zq * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Linear-interpolation quantile of unsorted data (`q` in [0, 1]).
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

pub fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let m = mean(data);
    (data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (data.len() - 1) as f64).sqrt()
}

/// Distribution summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub iqr: f64,
}

impl Summary {
    pub fn of(data: &[f64]) -> Self {
        let q25 = quantile(data, 0.25);
        let q75 = quantile(data, 0.75);
        Self {
            n: data.len(),
            mean: if data.is_empty() { f64::NAN } else { mean(data) },
            std: std_dev(data),
            q25,
            median: median(data),
            q75,
            iqr: q75 - q25,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson(500, 1000, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((hi - lo - 2.0 * 1.96 * (0.25f64 / 1000.0).sqrt()).abs() < 1e-3);
        let (lo, hi) = wilson(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn quantiles() {
        let d = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&d), 2.5);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 4.0);
    }
}
