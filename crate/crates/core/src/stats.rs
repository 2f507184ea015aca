//! Scalar statistics: log-gamma, the chi-square quantile, a local linear
//! kernel smoother and a few sample summaries.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (h.ln() + log_prefix).exp()).max(0.0)
    }
}

/// CDF of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_cdf(df: f64, x: f64) -> f64 {
    gamma_p(0.5 * df, 0.5 * x)
}

/// `x` such that `P(χ²_df ≤ x) = p`.
pub fn chi_square_quantile(df: u32, p: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("chi-square degrees of freedom must be >= 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1), got {p}")));
    }
    let k = df as f64;
    if df == 2 {
        return Ok(-2.0 * (-p).ln_1p());
    }
    // bracket, then safeguarded Newton
    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while chi_square_cdf(k, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let log_norm = -(0.5 * k) * std::f64::consts::LN_2 - ln_gamma(0.5 * k);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi_square_cdf(k, x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = (log_norm + (0.5 * k - 1.0) * x.ln() - 0.5 * x).exp();
        let mut next = x - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Rule-of-thumb kernel bandwidth `1.06 · sd(x) · n^(-1/5)`.
pub fn rule_of_thumb_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    1.06 * sample_sd(x) * n.powf(-0.2)
}

/// Local linear regression of `y` on `x` with a Gaussian kernel, evaluated
/// at each point of `at`.
pub fn local_linear(x: &[f64], y: &[f64], at: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("local linear smoother needs paired, nonempty inputs"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(at
        .iter()
        .map(|&x0| {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&xi, &yi) in x.iter().zip(y) {
                let d = xi - x0;
                let u = d / bandwidth;
                let w = (-0.5 * u * u).exp();
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * yi;
                t1 += w * d * yi;
            }
            let det = s0 * s2 - s1 * s1;
            if det > 1e-12 * s0 * s2 && det.is_finite() {
                (s2 * t0 - s1 * t1) / det
            } else if s0 > 0.0 {
                t0 / s0
            } else {
                // all weight underflowed: nearest observation
                let (_, &yn) =
                    x.iter().zip(y).min_by(|a, b| (a.0 - x0).abs().total_cmp(&(b.0 - x0).abs())).expect("nonempty");
                yn
            }
        })
        .collect())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Variance of the mean of an autocorrelated series by non-overlapping batch
/// means (about √n batches).
pub fn batch_means_variance(x: &[f64]) -> f64 {
    let n = x.len();
    let batches = (n as f64).sqrt().floor().max(2.0) as usize;
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    let sd = sample_sd(&means);
    sd * sd / batches as f64
}

/// Geweke convergence z-score comparing the first 10% and last 50% of a trace.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 20 {
        return f64::NAN;
    }
    let a = &x[..n / 10];
    let b = &x[n / 2..];
    (mean(a) - mean(b)) / (batch_means_variance(a) + batch_means_variance(b)).sqrt()
}
