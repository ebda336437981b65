use serde::{Deserialize, Serialize};

/// Order statistics and moments of a latency sample, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation.
    pub std_dev: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Summary::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Summary { n, min: s[0], max: s[n - 1], median, mean, std_dev: var.sqrt() }
    }
}

/// Two-sided acceptance region for the success fraction of `n` Bernoulli
/// trials with probability `p`: the smallest and largest `k/n` such that
/// each tail outside holds at most `alpha / 2` of the exact binomial mass.
pub fn binomial_interval(n: u64, p: f64, alpha: f64) -> (f64, f64) {
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    let ln_pmf = |k: u64| -> f64 {
        let (n, k) = (n as f64, k as f64);
        ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * p.ln() + (n - k) * (1.0 - p).ln()
    };
    let pmf: Vec<f64> = (0..=n).map(|k| ln_pmf(k).exp()).collect();
    let tail = alpha / 2.0;
    let mut acc = 0.0;
    let mut lo = 0;
    for (k, m) in pmf.iter().enumerate() {
        if acc + m > tail {
            lo = k;
            break;
        }
        acc += m;
    }
    acc = 0.0;
    let mut hi = n as usize;
    for (k, m) in pmf.iter().enumerate().rev() {
        if acc + m > tail {
            hi = k;
            break;
        }
        acc += m;
    }
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

/// Lanczos approximation, g = 7.
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_sample() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.min, s.max, s.median, s.mean), (1.0, 4.0, 2.5, 2.5));
        assert!((s.std_dev - 1.290_994_448_735_805_6).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        for (n, f) in [(1u32, 1.0f64), (5, 24.0), (11, 3_628_800.0)] {
            assert!((ln_gamma(n as f64) - f.ln()).abs() < 1e-10, "{n}");
        }
    }

    #[test]
    fn interval_for_fair_coin() {
        // n = 100, p = 0.5: P(X <= 39) = 0.0176, P(X <= 40) = 0.0284.
        let (lo, hi) = binomial_interval(100, 0.5, 0.05);
        assert_eq!((lo, hi), (0.40, 0.60));
    }

    #[test]
    fn interval_contains_baseline() {
        let (lo, hi) = binomial_interval(6_400, 1.0 / 32.0, 0.05);
        assert!(lo < 1.0 / 32.0 && 1.0 / 32.0 < hi);
        assert!(hi - lo < 0.01);
    }
}
