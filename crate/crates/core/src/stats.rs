//! Descriptive statistics, histogramming, and goodness-of-fit helpers.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("mean of empty slice".into()));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Unbiased sample variance (n - 1 denominator), two-pass for stability.
pub fn variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 samples, got {}",
            xs.len()
        )));
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(ss / (xs.len() - 1) as f64)
}

pub fn std_dev(xs: &[f64]) -> Result<f64> {
    Ok(variance(xs)?.sqrt())
}

pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "correlation needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let ma = mean(a)?;
    let mb = mean(b)?;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Linear-interpolation quantile (the R-7 convention) on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData("quantile of empty slice".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let n = sorted.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone)]
pub struct Histogram {
    /// len = counts.len() + 1; uniform spacing.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Normalized density value for one bin: count / (total * width).
    pub fn density(&self, bin: usize) -> f64 {
        self.counts[bin] as f64 / (self.total() as f64 * self.bin_width())
    }
}

/// Histogram with the Freedman-Diaconis bin width 2 IQR / n^(1/3), clamped
/// to at most 512 bins. Input need not be sorted.
pub fn histogram_freedman_diaconis(samples: &[f64]) -> Result<Histogram> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "histogram needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if !sorted[0].is_finite() || !sorted[sorted.len() - 1].is_finite() {
        return Err(Error::Domain(
            "histogram input contains non-finite values".into(),
        ));
    }
    let iqr = quantile_sorted(&sorted, 0.75)? - quantile_sorted(&sorted, 0.25)?;
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let span = hi - lo;
    if span == 0.0 {
        return Ok(Histogram {
            edges: vec![lo, lo + 1.0],
            counts: vec![samples.len() as u64],
        });
    }
    let width = 2.0 * iqr / (samples.len() as f64).cbrt();
    let bins = if width > 0.0 {
        ((span / width).ceil() as usize).clamp(1, 512)
    } else {
        1
    };
    let width = span / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in &sorted {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov statistic against precomputed model CDF
/// values. `model_cdf` must hold the model CDF evaluated at the sorted
/// sample points, in the same order.
pub fn ks_test_sorted(sorted: &[f64], model_cdf: &[f64]) -> Result<KsOutcome> {
    let n = sorted.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "KS test needs at least 8 samples, got {n}"
        )));
    }
    if model_cdf.len() != n {
        return Err(Error::Domain(format!(
            "KS test needs one CDF value per sample: {} samples, {} CDF values",
            n,
            model_cdf.len()
        )));
    }
    let mut d: f64 = 0.0;
    for (i, &c) in model_cdf.iter().enumerate() {
        if !(0.0..=1.0 + 1e-9).contains(&c) {
            return Err(Error::Domain(format!(
                "model CDF value {c} at index {i} outside [0, 1]"
            )));
        }
        if i > 0 && c < model_cdf[i - 1] - 1e-12 {
            return Err(Error::Domain(
                "model CDF values must be non-decreasing".into(),
            ));
        }
        let above = (i + 1) as f64 / n as f64 - c;
        let below = c - i as f64 / n as f64;
        d = d.max(above).max(below);
    }
    Ok(KsOutcome {
        statistic: d,
        p_value: ks_p_value(d, n),
        n,
    })
}

/// Asymptotic KS p-value with the Stephens small-sample correction
/// lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    kolmogorov_survival(lambda).clamp(0.0, 1.0)
}

/// Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2), with the
/// theta-transformed series on the left flank where the alternating series
/// converges slowly.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let t = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let p = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * ((-t).exp() + (-9.0 * t).exp() + (-25.0 * t).exp());
        return 1.0 - p;
    }
    let mut q = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        q += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    2.0 * q
}
