//! Small statistical toolbox: gamma function, Kolmogorov-Smirnov tests,
//! log-log slope fits and summary helpers used across the experiment harness.

/// Natural log of the gamma function, Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        ln_gamma(x).exp()
    }
}

/// Least-squares slope of log(y) against log(x). Points with non-positive
/// coordinates are rejected.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points to fit a slope");
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            assert!(x > 0.0 && y > 0.0, "log-log fit requires positive data");
            (x.ln(), y.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Sample mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    assert!(n >= 2.0);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    d
}

/// Asymptotic Kolmogorov distribution tail Q(lambda) = P(sup > lambda).
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..101 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Approximate p-value for the two-sample KS statistic.
pub fn ks_two_sample_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    kolmogorov_tail(lambda)
}

/// One-sample KS statistic against a CDF.
pub fn ks_one_sample_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gamma_known_values() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma(1.0) - 1.0).abs() < 1e-13);
        assert!((gamma(5.0) - 24.0).abs() < 1e-10);
        assert!((gamma(1.5) - 0.886_226_925_452_758).abs() < 1e-12);
        // reflection regime, used by the waiting-law calibration
        assert!((gamma(0.3) - 2.991_568_987_687_59).abs() < 1e-10);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = (1..8).map(|k| 2f64.powi(-k)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * x.powf(1.5)).collect();
        assert!((log_log_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ks_same_distribution_has_large_p() {
        let mut rng = StdRng::seed_from_u64(11);
        let a: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let d = ks_two_sample_statistic(&a, &b);
        assert!(ks_two_sample_p_value(d, a.len(), b.len()) > 0.01);
    }

    #[test]
    fn ks_different_distributions_has_small_p() {
        let mut rng = StdRng::seed_from_u64(13);
        let a: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..4000).map(|_| rng.random::<f64>() + 0.2).collect();
        let d = ks_two_sample_statistic(&a, &b);
        assert!(ks_two_sample_p_value(d, a.len(), b.len()) < 1e-6);
    }

    #[test]
    fn one_sample_ks_uniform() {
        let mut rng = StdRng::seed_from_u64(17);
        let s: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let d = ks_one_sample_statistic(&s, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.03);
    }
}
