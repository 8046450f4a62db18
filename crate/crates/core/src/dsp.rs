//! Aggregation of the frequency channels and phase demodulation.
//!
//! Channel returns fade independently, so before summing them each channel
//! is de-rotated by its own slow-time mean phase at every fast-time sample.
//! That aligns the channel phasors on average without touching their
//! relative slow-time dynamics; deep fades in the sum become rare because
//! all channels must fade at once. Phase readout then proceeds on the
//! aggregate exactly as in the single-channel case: slow-time phase,
//! unwrap, difference across a gauge.

use crate::error::{Error, Result};
use crate::fiber::{BackscatterTrace, SPEED_OF_LIGHT_M_PER_S};
use num_complex::Complex64;

/// Cap reported by the sinusoid-fit SNR when the residual is numerically
/// zero (noiseless input); the `saturated` flag marks such estimates.
pub const MAX_SNR: f64 = 1e18;

/// Channel-aggregated complex trace with readout metadata.
#[derive(Debug, Clone)]
pub struct AggregatedTrace {
    samples: Vec<Complex64>,
    num_pulses: usize,
    num_fast: usize,
    /// Channel indices of the source trace that entered the sum.
    pub channels: Vec<usize>,
    /// De-rotation phase applied to each selected channel, per fast sample.
    pub reference_phases: Vec<Vec<f64>>,
    pub fast_time_step_s: f64,
    pub gate_start_m: f64,
    pub refractive_index: f64,
    pub repetition_period_s: f64,
    /// Per-channel, per-quadrature additive noise variance of the source.
    pub channel_noise_variance: f64,
}

impl AggregatedTrace {
    /// Wraps an existing pulse-by-fast matrix, for constructed inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        samples: Vec<Complex64>,
        num_pulses: usize,
        num_fast: usize,
        fast_time_step_s: f64,
        gate_start_m: f64,
        refractive_index: f64,
        repetition_period_s: f64,
        channel_noise_variance: f64,
    ) -> Result<Self> {
        if samples.len() != num_pulses * num_fast || num_pulses == 0 || num_fast == 0 {
            return Err(Error::Domain(format!(
                "sample buffer of {} does not match {} pulses x {} fast samples",
                samples.len(),
                num_pulses,
                num_fast
            )));
        }
        Ok(AggregatedTrace {
            samples,
            num_pulses,
            num_fast,
            channels: vec![0],
            reference_phases: Vec::new(),
            fast_time_step_s,
            gate_start_m,
            refractive_index,
            repetition_period_s,
            channel_noise_variance,
        })
    }

    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }

    pub fn num_fast(&self) -> usize {
        self.num_fast
    }

    #[inline]
    pub fn sample(&self, pulse: usize, fast: usize) -> Complex64 {
        self.samples[pulse * self.num_fast + fast]
    }

    pub fn pulse(&self, pulse: usize) -> &[Complex64] {
        &self.samples[pulse * self.num_fast..(pulse + 1) * self.num_fast]
    }

    /// Additive noise variance per quadrature of the aggregate: channel
    /// count times the per-channel variance (de-rotation preserves it).
    pub fn aggregated_noise_variance(&self) -> f64 {
        self.channels.len() as f64 * self.channel_noise_variance
    }

    pub fn sample_pitch_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_PER_S * self.fast_time_step_s / (2.0 * self.refractive_index)
    }

    pub fn position_m(&self, fast: usize) -> f64 {
        self.gate_start_m + fast as f64 * self.sample_pitch_m()
    }

    pub fn fast_index_of(&self, position_m: f64) -> Option<usize> {
        let idx = ((position_m - self.gate_start_m) / self.sample_pitch_m()).round();
        if idx < 0.0 || idx >= self.num_fast as f64 {
            None
        } else {
            Some(idx as usize)
        }
    }

    /// Slow-time mean of |A| at each fast sample.
    pub fn mean_amplitude_profile(&self) -> Vec<f64> {
        let mut profile = vec![0.0; self.num_fast];
        for k in 0..self.num_pulses {
            for (i, s) in self.pulse(k).iter().enumerate() {
                profile[i] += s.norm();
            }
        }
        for v in &mut profile {
            *v /= self.num_pulses as f64;
        }
        profile
    }
}

/// Co-phased sum of the selected channels: each channel is rotated by the
/// negative argument of its slow-time mean at every fast sample, then the
/// rotated channels are summed per (pulse, fast sample).
pub fn rotated_vector_sum(trace: &BackscatterTrace, channels: &[usize]) -> Result<AggregatedTrace> {
    if channels.is_empty() {
        return Err(Error::Domain("channel subset must not be empty".into()));
    }
    let mut seen = vec![false; trace.num_channels()];
    for &m in channels {
        if m >= trace.num_channels() {
            return Err(Error::Domain(format!(
                "channel {m} out of range for a {}-channel trace",
                trace.num_channels()
            )));
        }
        if seen[m] {
            return Err(Error::Domain(format!("channel {m} selected twice")));
        }
        seen[m] = true;
    }

    let num_pulses = trace.num_pulses();
    let num_fast = trace.num_fast();
    let mut reference_phases = Vec::with_capacity(channels.len());
    let mut samples = vec![Complex64::new(0.0, 0.0); num_pulses * num_fast];
    let mut mean = vec![Complex64::new(0.0, 0.0); num_fast];
    for &m in channels {
        for v in &mut mean {
            *v = Complex64::new(0.0, 0.0);
        }
        for k in 0..num_pulses {
            for (i, s) in trace.channel_pulse(m, k).iter().enumerate() {
                mean[i] += s;
            }
        }
        let phases: Vec<f64> = mean.iter().map(|v| v.arg()).collect();
        for k in 0..num_pulses {
            let row = trace.channel_pulse(m, k);
            for i in 0..num_fast {
                let rot = Complex64::from_polar(1.0, -phases[i]);
                samples[k * num_fast + i] += row[i] * rot;
            }
        }
        reference_phases.push(phases);
    }

    Ok(AggregatedTrace {
        samples,
        num_pulses,
        num_fast,
        channels: channels.to_vec(),
        reference_phases,
        fast_time_step_s: trace.fast_time_step_s,
        gate_start_m: trace.gate_start_m,
        refractive_index: trace.refractive_index,
        repetition_period_s: trace.plan.repetition_period_s,
        channel_noise_variance: trace.noise_variance,
    })
}

/// Maps a phase difference into (-pi, pi].
#[inline]
fn wrap_phase(d: f64) -> f64 {
    use std::f64::consts::PI;
    d - 2.0 * PI * ((d - PI) / (2.0 * PI)).ceil()
}

/// Classic 1-D phase unwrap: successive differences are wrapped into
/// (-pi, pi] and re-accumulated from the first element.
pub fn unwrap_phase(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut prev_in = match series.first() {
        Some(&v) => {
            out.push(v);
            v
        }
        None => return out,
    };
    let mut prev_out = prev_in;
    for &v in &series[1..] {
        let d = wrap_phase(v - prev_in);
        prev_out += d;
        out.push(prev_out);
        prev_in = v;
    }
    out
}

/// Slow-time differential phase between two fast samples: each endpoint's
/// phase series is unwrapped along slow time, then differenced.
pub fn differential_phase(agg: &AggregatedTrace, fast_a: usize, fast_b: usize) -> Result<Vec<f64>> {
    if fast_a >= agg.num_fast() || fast_b >= agg.num_fast() {
        return Err(Error::Domain(format!(
            "fast-time indices ({fast_a}, {fast_b}) out of range 0..{}",
            agg.num_fast()
        )));
    }
    let theta = |fast: usize| -> Vec<f64> {
        (0..agg.num_pulses())
            .map(|k| agg.sample(k, fast).arg())
            .collect()
    };
    let ua = unwrap_phase(&theta(fast_a));
    let ub = unwrap_phase(&theta(fast_b));
    Ok(ub.iter().zip(&ua).map(|(b, a)| b - a).collect())
}

/// Gauge-differenced phase over a grid of adjacent, non-overlapping gauge
/// sections starting at the gate origin.
#[derive(Debug, Clone)]
pub struct DemodulationResult {
    /// Fast-sample index pairs (start, end) of each gauge section.
    pub pairs: Vec<(usize, usize)>,
    /// One slow-time differential phase series per pair.
    pub diff_phase: Vec<Vec<f64>>,
    /// Requested gauge rounded to the sample grid.
    pub gauge_samples: usize,
    pub effective_gauge_m: f64,
    /// Slow-time mean |A| at every fast sample, for fade inspection.
    pub amplitude_profile: Vec<f64>,
}

pub fn demodulate_phase(agg: &AggregatedTrace, gauge_length_m: f64) -> Result<DemodulationResult> {
    let pitch = agg.sample_pitch_m();
    if !(gauge_length_m > 0.0) || !gauge_length_m.is_finite() {
        return Err(Error::Config(format!(
            "gauge length must be positive, got {gauge_length_m}"
        )));
    }
    let gauge_samples = (gauge_length_m / pitch).round() as usize;
    if gauge_samples == 0 {
        return Err(Error::Config(format!(
            "gauge length {gauge_length_m} m rounds below one fast-time sample ({pitch:.3} m)"
        )));
    }
    if gauge_samples >= agg.num_fast() {
        return Err(Error::InsufficientData(format!(
            "gauge of {gauge_samples} samples does not fit in a {}-sample gate",
            agg.num_fast()
        )));
    }
    let mut pairs = Vec::new();
    let mut diff_phase = Vec::new();
    let mut start = 0usize;
    while start + gauge_samples < agg.num_fast() {
        let end = start + gauge_samples;
        pairs.push((start, end));
        diff_phase.push(differential_phase(agg, start, end)?);
        start = end;
    }
    Ok(DemodulationResult {
        pairs,
        diff_phase,
        gauge_samples,
        effective_gauge_m: gauge_samples as f64 * pitch,
        amplitude_profile: agg.mean_amplitude_profile(),
    })
}

/// Ratio of the standard deviation to the mean of an intensity sample.
pub fn speckle_contrast(intensities: &[f64]) -> Result<f64> {
    if intensities.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "speckle contrast needs at least 2 samples, got {}",
            intensities.len()
        )));
    }
    if intensities.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Domain(
            "intensities must be finite and non-negative".into(),
        ));
    }
    let m = crate::stats::mean(intensities)?;
    if m <= 0.0 {
        return Err(Error::Domain("mean intensity must be positive".into()));
    }
    Ok(crate::stats::std_dev(intensities)? / m)
}

#[derive(Debug, Clone, Copy)]
pub struct SnrEstimate {
    pub snr: f64,
    /// Fitted sinusoid power (a^2 + b^2) / 2.
    pub signal_variance: f64,
    /// Residual variance about the fit.
    pub noise_variance: f64,
    /// Set when the residual is numerically zero and `snr` is the cap.
    pub saturated: bool,
}

/// Phase SNR of a slow-time series against a known stimulus frequency:
/// least-squares fit of offset + sine + cosine at that frequency, with
/// signal power from the fitted quadratures and noise power from the
/// residual.
pub fn estimate_snr_phi(
    series: &[f64],
    stimulus_frequency_hz: f64,
    repetition_period_s: f64,
) -> Result<SnrEstimate> {
    let n = series.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "SNR fit needs at least 8 samples, got {n}"
        )));
    }
    if !(stimulus_frequency_hz > 0.0) {
        return Err(Error::Domain(format!(
            "stimulus frequency must be positive, got {stimulus_frequency_hz}"
        )));
    }
    if !(repetition_period_s > 0.0) {
        return Err(Error::Domain(format!(
            "repetition period must be positive, got {repetition_period_s}"
        )));
    }
    let nyquist = 0.5 / repetition_period_s;
    if stimulus_frequency_hz >= nyquist {
        return Err(Error::Domain(format!(
            "stimulus at {stimulus_frequency_hz} Hz is at or above the \
             slow-time Nyquist rate {nyquist} Hz"
        )));
    }
    let periods = n as f64 * repetition_period_s * stimulus_frequency_hz;
    if periods < 2.0 {
        return Err(Error::InsufficientData(format!(
            "series covers {periods:.2} stimulus periods; need at least 2"
        )));
    }

    let omega = 2.0 * std::f64::consts::PI * stimulus_frequency_hz * repetition_period_s;
    // Normal equations for y ~ a sin + b cos + c.
    let (mut ss, mut cc, mut sc, mut s1, mut c1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut ys, mut yc, mut y1) = (0.0, 0.0, 0.0);
    for (k, &y) in series.iter().enumerate() {
        let (s, c) = (omega * k as f64).sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        s1 += s;
        c1 += c;
        ys += y * s;
        yc += y * c;
        y1 += y;
    }
    let nf = n as f64;
    // 3x3 solve by elimination on the symmetric system.
    let mat = [[ss, sc, s1], [sc, cc, c1], [s1, c1, nf]];
    let rhs = [ys, yc, y1];
    let sol = solve3(mat, rhs)
        .ok_or_else(|| Error::Numeric("singular normal equations in the sinusoid fit".into()))?;
    let (a, b) = (sol[0], sol[1]);
    let c0 = sol[2];
    let mut resid = 0.0;
    for (k, &y) in series.iter().enumerate() {
        let (s, c) = (omega * k as f64).sin_cos();
        let e = y - (a * s + b * c + c0);
        resid += e * e;
    }
    let signal_variance = 0.5 * (a * a + b * b);
    let noise_variance = resid / (nf - 3.0);
    if noise_variance <= signal_variance * 1e-18 || noise_variance == 0.0 {
        return Ok(SnrEstimate {
            snr: MAX_SNR,
            signal_variance,
            noise_variance,
            saturated: true,
        });
    }
    Ok(SnrEstimate {
        snr: signal_variance / noise_variance,
        signal_variance,
        noise_variance,
        saturated: false,
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        r.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut v = r[row];
        for k in row + 1..3 {
            v -= m[row][k] * x[k];
        }
        x[row] = v / m[row][row];
    }
    Some(x)
}

/// Frequency of the strongest non-DC bin of the mean-removed series, with
/// its fraction of total non-DC power. Returns None for a constant series.
pub fn dominant_frequency(series: &[f64], repetition_period_s: f64) -> Option<(f64, f64)> {
    let n = series.len();
    if n < 4 || !(repetition_period_s > 0.0) {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let mut total = 0.0;
    let mut best = (0usize, 0.0f64);
    for bin in 1..=n / 2 {
        let w = -2.0 * std::f64::consts::PI * bin as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (k, &v) in y.iter().enumerate() {
            let (s, c) = (w * k as f64).sin_cos();
            re += v * c;
            im += v * s;
        }
        let p = re * re + im * im;
        total += p;
        if p > best.1 {
            best = (bin, p);
        }
    }
    if total <= 0.0 || best.1 == 0.0 {
        return None;
    }
    let freq = best.0 as f64 / (n as f64 * repetition_period_s);
    Some((freq, best.1 / total))
}
