//! Closed-form statistics of coherent-fading suppression by frequency
//! diversity.
//!
//! The underlying model: each of M frequency-shifted probe channels sees an
//! independent Rayleigh-faded return amplitude, the channels are co-phased
//! and summed, and a differential phase is read out between two fiber
//! locations. The quantities here describe the summed amplitude A and the
//! phase signal-to-noise ratio of that readout:
//!
//! * the density of A, approximated by matching the peak of the exact
//!   M-fold Rayleigh convolution (the sum-amplitude squared is then
//!   Gamma-distributed with shape M),
//! * the mean phase SNR over fading realizations at both readout points,
//! * the diversity gain K relative to single-channel operation, and
//! * the coefficient of variation of the phase SNR, the figure for how
//!   deep the residual fades are.
//!
//! All formulas are dimensionless in the channel field variance `sigma2`,
//! the per-channel receiver noise variance `sigma_n2` (per quadrature), and
//! the mean-square phase signal `sigma_phi2`.

use crate::error::{Error, Result};
use crate::quad;
use crate::special::{ln_double_factorial, ln_factorial};
use std::cell::Cell;
use std::io::{self, Write};

/// Largest channel count the analytic routines accept. Beyond this the
/// fixed integration bound no longer dominates the distribution tail.
pub const MAX_CHANNELS: u32 = 100;

fn check_channels(channels: u32) -> Result<()> {
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::Domain(format!(
            "channel count must be in 1..={MAX_CHANNELS}, got {channels}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Model parameters for the SNR statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingParams {
    channels: u32,
    field_variance: f64,
    noise_variance: f64,
    acoustic_variance: f64,
}

impl FadingParams {
    /// `channels` = M, `field_variance` = per-channel Rayleigh parameter
    /// sigma2, `noise_variance` = additive receiver noise per quadrature
    /// per channel, `acoustic_variance` = mean-square differential phase
    /// signal.
    pub fn new(
        channels: u32,
        field_variance: f64,
        noise_variance: f64,
        acoustic_variance: f64,
    ) -> Result<Self> {
        check_channels(channels)?;
        check_positive("field_variance", field_variance)?;
        check_positive("noise_variance", noise_variance)?;
        check_positive("acoustic_variance", acoustic_variance)?;
        Ok(FadingParams {
            channels,
            field_variance,
            noise_variance,
            acoustic_variance,
        })
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn field_variance(&self) -> f64 {
        self.field_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn acoustic_variance(&self) -> f64 {
        self.acoustic_variance
    }

    pub fn with_channels(&self, channels: u32) -> Result<Self> {
        FadingParams::new(
            channels,
            self.field_variance,
            self.noise_variance,
            self.acoustic_variance,
        )
    }
}

/// Peak-matched scale of the sum-amplitude density:
/// b = (sigma2 / M) [(2M-1)!!]^(1/M).
///
/// Reduces to sigma2 for a single channel.
pub fn scale_b(channels: u32, field_variance: f64) -> Result<f64> {
    check_channels(channels)?;
    check_positive("field_variance", field_variance)?;
    let m = channels as f64;
    let ln_dfac = ln_double_factorial(2 * channels as u64 - 1)?;
    Ok(field_variance / m * (ln_dfac / m).exp())
}

/// Integration bound beyond which the sum-amplitude density carries no
/// numerically relevant mass (for channel counts within [`MAX_CHANNELS`]).
pub fn amplitude_upper_bound(channels: u32, field_variance: f64) -> f64 {
    12.0 * (2.0 * channels as f64 * field_variance).sqrt()
}

/// Precomputed log-space evaluator for the sum-amplitude density.
struct SumDensity {
    power: f64,
    inv_two_mb: f64,
    ln_norm: f64,
}

impl SumDensity {
    fn new(channels: u32, field_variance: f64) -> Result<Self> {
        let b = scale_b(channels, field_variance)?;
        let m = channels as f64;
        let two_mb = 2.0 * m * b;
        // 2^(M-1) b^M (M-1)! M^M in log space.
        let ln_norm = (m - 1.0) * std::f64::consts::LN_2
            + m * b.ln()
            + ln_factorial(channels as u64 - 1)
            + m * m.ln();
        Ok(SumDensity {
            power: 2.0 * m - 1.0,
            inv_two_mb: 1.0 / two_mb,
            ln_norm,
        })
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        (self.power * x.ln() - x * x * self.inv_two_mb - self.ln_norm).exp()
    }
}

/// Density of the co-phased sum amplitude A over M channels:
/// f(x) = x^(2M-1) exp(-x^2 / (2Mb)) / (2^(M-1) b^M (M-1)! M^M), x >= 0.
pub fn rayleigh_sum_pdf(x: f64, channels: u32, field_variance: f64) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!(
            "amplitude must be finite and non-negative, got {x}"
        )));
    }
    Ok(SumDensity::new(channels, field_variance)?.eval(x))
}

/// CDF of the sum amplitude by adaptive integration of the density.
pub fn rayleigh_sum_cdf(x: f64, channels: u32, field_variance: f64) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!(
            "amplitude must be finite and non-negative, got {x}"
        )));
    }
    let d = SumDensity::new(channels, field_variance)?;
    let hi = amplitude_upper_bound(channels, field_variance);
    if x >= hi {
        return Ok(1.0);
    }
    let q = quad::integrate(|t| d.eval(t), 0.0, x, 1e-9)?;
    Ok(q.value.clamp(0.0, 1.0))
}

/// CDF evaluated at every point of a non-decreasing grid, integrating each
/// segment once. This is the form the distribution tests use: for n sorted
/// sample points it costs one pass instead of n full integrals.
pub fn rayleigh_sum_cdf_grid(
    sorted: &[f64],
    channels: u32,
    field_variance: f64,
) -> Result<Vec<f64>> {
    let d = SumDensity::new(channels, field_variance)?;
    let hi = amplitude_upper_bound(channels, field_variance);
    let mut out = Vec::with_capacity(sorted.len());
    let mut prev = 0.0_f64;
    let mut acc = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        if x < 0.0 || !x.is_finite() {
            return Err(Error::Domain(format!(
                "amplitude grid value {x} at index {i} is invalid"
            )));
        }
        if x < prev {
            return Err(Error::Domain(format!(
                "amplitude grid must be non-decreasing, violated at index {i}"
            )));
        }
        if x > prev {
            let upper = x.min(hi);
            if upper > prev {
                acc += quad::integrate(|t| d.eval(t), prev, upper, 1e-9)?.value;
            }
            prev = x;
        }
        out.push(acc.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Mean phase SNR over fading, closed form:
/// E[SNR] = 2M [(2M-1)!!]^(1/M) / (1 + 2M) * sigma2 sigma_phi2 / sigma_n2.
pub fn mean_snr_phi_closed(p: &FadingParams) -> Result<f64> {
    let m = p.channels as f64;
    let ln_dfac = ln_double_factorial(2 * p.channels as u64 - 1)?;
    Ok(
        2.0 * m * (ln_dfac / m).exp() / (1.0 + 2.0 * m) * p.field_variance * p.acoustic_variance
            / p.noise_variance,
    )
}

/// First moment of the phase SNR by direct double quadrature over the two
/// independent readout amplitudes. Validation route for the closed form.
pub fn mean_snr_phi_quadrature(p: &FadingParams) -> Result<f64> {
    snr_phi_moment_quadrature(p, 1)
}

/// Second moment of the phase SNR by double quadrature. Together with the
/// first moment this gives the SNR variance and coefficient of variation.
pub fn snr_phi_second_moment_quadrature(p: &FadingParams) -> Result<f64> {
    snr_phi_moment_quadrature(p, 2)
}

/// Coefficient of variation of the phase SNR from the quadrature moments.
pub fn snr_phi_cv_quadrature(p: &FadingParams) -> Result<f64> {
    let m1 = snr_phi_moment_quadrature(p, 1)?;
    let m2 = snr_phi_moment_quadrature(p, 2)?;
    let var = m2 - m1 * m1;
    if var < 0.0 && var > -1e-9 * m2 {
        return Ok(0.0);
    }
    if var < 0.0 {
        return Err(Error::Numeric(format!(
            "negative SNR variance from quadrature moments: {var:.3e}"
        )));
    }
    Ok(var.sqrt() / m1)
}

fn snr_phi_moment_quadrature(p: &FadingParams, moment: u32) -> Result<f64> {
    let d = SumDensity::new(p.channels, p.field_variance)?;
    let hi = amplitude_upper_bound(p.channels, p.field_variance);
    let coeff = p.acoustic_variance / (p.channels as f64 * p.noise_variance);
    // SNR(a1, a2) = sigma_phi2 a1^2 a2^2 / (M sigma_n2 (a1^2 + a2^2)),
    // zero at the origin by continuity.
    let snr = move |a1: f64, a2: f64| -> f64 {
        let q1 = a1 * a1;
        let q2 = a2 * a2;
        let s = q1 + q2;
        if s == 0.0 {
            0.0
        } else {
            coeff * q1 * q2 / s
        }
    };
    // The inner integral runs inside an outer integrand that must return
    // f64, so the first inner failure is parked in a cell and re-raised.
    let inner_err: Cell<Option<Error>> = Cell::new(None);
    let outer = quad::integrate(
        |a1| {
            let w1 = d.eval(a1);
            if w1 == 0.0 {
                return 0.0;
            }
            match quad::integrate(
                |a2| {
                    let g = snr(a1, a2);
                    d.eval(a2) * if moment == 1 { g } else { g * g }
                },
                0.0,
                hi,
                1e-9,
            ) {
                Ok(q) => w1 * q.value,
                Err(e) => {
                    if inner_err.take().is_none() {
                        inner_err.set(Some(e));
                    }
                    0.0
                }
            }
        },
        0.0,
        hi,
        1e-8,
    )?;
    if let Some(e) = inner_err.take() {
        return Err(e);
    }
    Ok(outer.value)
}

/// Diversity gain of M channels over one, in amplitude-SNR terms.
#[derive(Debug, Clone, Copy)]
pub struct GainK {
    /// K = sqrt(3M [(2M-1)!!]^(1/M) / (1 + 2M)); equals 1 at M = 1.
    pub exact: f64,
    /// Stirling companion K ~ sqrt(6 M^2 / ((2M + 1) e)), approaching
    /// 1.05 sqrt(M) for large M.
    pub stirling: f64,
}

pub fn gain_k(channels: u32) -> Result<GainK> {
    check_channels(channels)?;
    let m = channels as f64;
    let ln_dfac = ln_double_factorial(2 * channels as u64 - 1)?;
    let exact = (3.0 * m * (ln_dfac / m).exp() / (1.0 + 2.0 * m)).sqrt();
    let stirling = (6.0 * m * m / ((2.0 * m + 1.0) * std::f64::consts::E)).sqrt();
    Ok(GainK { exact, stirling })
}

/// Coefficient of variation of the phase SNR:
/// C_V = sqrt((2M^2 + 5M + 1) / (4M^3 + 6M^2)).
///
/// Strictly decreasing in M; the single-channel value is sqrt(4/5).
pub fn coefficient_of_variation(channels: u32) -> Result<f64> {
    check_channels(channels)?;
    let m = channels as f64;
    Ok(((2.0 * m * m + 5.0 * m + 1.0) / (4.0 * m * m * m + 6.0 * m * m)).sqrt())
}

/// Gaussian approximation to the demodulated phase-error density at high
/// carrier-to-noise ratio. `variance_ratio` is delta^2 = noise variance
/// over squared carrier amplitude; valid for small values.
pub fn phase_noise_pdf(deviation: f64, variance_ratio: f64) -> Result<f64> {
    check_positive("variance_ratio", variance_ratio)?;
    if !deviation.is_finite() {
        return Err(Error::Domain("phase deviation must be finite".into()));
    }
    let var = variance_ratio;
    Ok((-deviation * deviation / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
}

/// Narrowband phase-error density before the small-angle step:
/// f(d) = cos(d) exp(-sin^2(d) / (2 delta^2)) / sqrt(2 pi delta^2),
/// restricted to |d| < pi/2 where the projection is single-valued.
pub fn phase_noise_pdf_exact(deviation: f64, variance_ratio: f64) -> Result<f64> {
    check_positive("variance_ratio", variance_ratio)?;
    if !(deviation.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "exact phase-error density is defined for |d| < pi/2, got {deviation}"
        )));
    }
    let s = deviation.sin();
    Ok(deviation.cos() * (-s * s / (2.0 * variance_ratio)).exp()
        / (2.0 * std::f64::consts::PI * variance_ratio).sqrt())
}

/// One row of the channel-count sweep table.
#[derive(Debug, Clone, Copy)]
pub struct CurveRow {
    pub channels: u32,
    pub scale_b: f64,
    pub mean_snr_phi_closed: f64,
    pub mean_snr_phi_quadrature: f64,
    pub gain_exact: f64,
    pub gain_stirling: f64,
    pub coefficient_of_variation: f64,
}

/// Analytic reference curves tabulated over 1..=M channels.
#[derive(Debug, Clone)]
pub struct AnalyticCurves {
    pub rows: Vec<CurveRow>,
}

impl AnalyticCurves {
    /// Tabulates every quantity for channel counts 1..=max_channels using
    /// the variances in `params` (its own channel count is ignored).
    ///
    /// The table is self-checking: monotonicity of the gain, mean SNR, and
    /// coefficient of variation, the unit gain at M = 1, and agreement of
    /// the quadrature route with the closed form within 1% are enforced,
    /// and any violation is reported as an invariant error.
    pub fn tabulate(params: &FadingParams, max_channels: u32) -> Result<Self> {
        check_channels(max_channels)?;
        let mut rows = Vec::with_capacity(max_channels as usize);
        for m in 1..=max_channels {
            let p = params.with_channels(m)?;
            let closed = mean_snr_phi_closed(&p)?;
            let quadrature = mean_snr_phi_quadrature(&p)?;
            let gain = gain_k(m)?;
            rows.push(CurveRow {
                channels: m,
                scale_b: scale_b(m, params.field_variance)?,
                mean_snr_phi_closed: closed,
                mean_snr_phi_quadrature: quadrature,
                gain_exact: gain.exact,
                gain_stirling: gain.stirling,
                coefficient_of_variation: coefficient_of_variation(m)?,
            });
        }
        let table = AnalyticCurves { rows };
        table.check_invariants()?;
        Ok(table)
    }

    fn check_invariants(&self) -> Result<()> {
        let rows = &self.rows;
        if (rows[0].gain_exact - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "single-channel gain must be 1, got {}",
                rows[0].gain_exact
            )));
        }
        for w in rows.windows(2) {
            if w[1].gain_exact <= w[0].gain_exact {
                return Err(Error::Invariant(format!(
                    "gain must increase with channel count, broken at M = {}",
                    w[1].channels
                )));
            }
            if w[1].mean_snr_phi_closed <= w[0].mean_snr_phi_closed {
                return Err(Error::Invariant(format!(
                    "mean SNR must increase with channel count, broken at M = {}",
                    w[1].channels
                )));
            }
            if w[1].coefficient_of_variation >= w[0].coefficient_of_variation {
                return Err(Error::Invariant(format!(
                    "coefficient of variation must decrease with channel count, broken at M = {}",
                    w[1].channels
                )));
            }
        }
        for r in rows {
            let rel =
                (r.mean_snr_phi_quadrature - r.mean_snr_phi_closed).abs() / r.mean_snr_phi_closed;
            if rel > 0.01 {
                return Err(Error::Invariant(format!(
                    "quadrature mean SNR departs from the closed form by {:.2}% at M = {}",
                    rel * 100.0,
                    r.channels
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "channels,scale_b,mean_snr_phi_closed,mean_snr_phi_quadrature,\
             gain_exact,gain_stirling,coefficient_of_variation"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.channels,
                r.scale_b,
                r.mean_snr_phi_closed,
                r.mean_snr_phi_quadrature,
                r.gain_exact,
                r.gain_stirling,
                r.coefficient_of_variation
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scale_reduces_to_field_variance_for_one_channel() {
        assert_relative_eq!(scale_b(1, 0.37).unwrap(), 0.37, max_relative = 1e-15);
    }

    #[test]
    fn scale_matches_reference_values() {
        assert_relative_eq!(
            scale_b(2, 1.0).unwrap(),
            0.866_025_403_784_438_65,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            scale_b(3, 2.0).unwrap(),
            1.644_141_382_886_980_1,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            scale_b(15, 0.014076).unwrap(),
            0.010_596_652_706_011_176,
            max_relative = 1e-13
        );
    }

    #[test]
    fn density_matches_reference_values() {
        assert_relative_eq!(
            rayleigh_sum_pdf(1.0, 1, 1.0).unwrap(),
            0.606_530_659_712_633_42,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            rayleigh_sum_pdf(1.0, 2, 1.0).unwrap(),
            0.124_875_928_847_499_6,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            rayleigh_sum_pdf(2.5, 5, 1.3).unwrap(),
            1.537_309_434_077_997_3e-3,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            rayleigh_sum_pdf(0.6, 15, 0.014076).unwrap(),
            7.958_828_257_618_582_1e-11,
            max_relative = 1e-11
        );
    }

    #[test]
    fn density_reduces_to_single_channel_form() {
        // M = 1 must reproduce (x / sigma2) exp(-x^2 / (2 sigma2)) exactly.
        let s2 = 0.73;
        for &x in &[0.05f64, 0.3, 1.1, 2.4] {
            let direct = x / s2 * (-x * x / (2.0 * s2)).exp();
            assert_relative_eq!(
                rayleigh_sum_pdf(x, 1, s2).unwrap(),
                direct,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn density_boundary_and_domain() {
        assert_eq!(rayleigh_sum_pdf(0.0, 3, 1.0).unwrap(), 0.0);
        assert!(rayleigh_sum_pdf(-0.1, 3, 1.0).is_err());
        assert!(rayleigh_sum_pdf(1.0, 0, 1.0).is_err());
        assert!(rayleigh_sum_pdf(1.0, MAX_CHANNELS + 1, 1.0).is_err());
        assert!(rayleigh_sum_pdf(1.0, 3, 0.0).is_err());
        assert!(rayleigh_sum_pdf(1.0, 3, -1.0).is_err());
        assert!(rayleigh_sum_pdf(f64::NAN, 3, 1.0).is_err());
    }

    #[test]
    fn cdf_matches_independent_gamma_route() {
        // Frozen from the regularized incomplete gamma of A^2, a route that
        // shares no code with the quadrature below.
        assert_relative_eq!(
            rayleigh_sum_cdf(1.0, 1, 1.0).unwrap(),
            0.393_469_340_287_366_58,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            rayleigh_sum_cdf(1.2, 3, 0.8).unwrap(),
            6.176_258_691_078_621_2e-3,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            rayleigh_sum_cdf(2.2, 10, 0.2).unwrap(),
            6.739_625_595_740_715_2e-6,
            max_relative = 1e-7
        );
    }

    #[test]
    fn cdf_limits_and_grid_consistency() {
        assert_eq!(rayleigh_sum_cdf(0.0, 4, 1.0).unwrap(), 0.0);
        assert_eq!(rayleigh_sum_cdf(1e6, 4, 1.0).unwrap(), 1.0);
        let grid = [0.2, 0.9, 0.9, 1.7, 3.0];
        let vals = rayleigh_sum_cdf_grid(&grid, 4, 1.0).unwrap();
        for (i, &x) in grid.iter().enumerate() {
            assert_relative_eq!(
                vals[i],
                rayleigh_sum_cdf(x, 4, 1.0).unwrap(),
                epsilon = 1e-9
            );
        }
        assert!(rayleigh_sum_cdf_grid(&[0.5, 0.4], 4, 1.0).is_err());
        assert!(rayleigh_sum_cdf_grid(&[-0.1, 0.4], 4, 1.0).is_err());
    }

    #[test]
    fn mean_snr_closed_matches_reference_values() {
        let unit = |m| FadingParams::new(m, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            mean_snr_phi_closed(&unit(1)).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            mean_snr_phi_closed(&unit(4)).unwrap(),
            2.845_409_664_838_826_2,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            mean_snr_phi_closed(&unit(15)).unwrap(),
            10.927_989_342_887_525,
            max_relative = 1e-13
        );
        let p = FadingParams::new(1, 0.014076, 0.001, 25.0).unwrap();
        assert_relative_eq!(
            mean_snr_phi_closed(&p).unwrap(),
            234.6,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mean_snr_scales_linearly_in_each_variance() {
        let base = FadingParams::new(5, 0.5, 0.02, 4.0).unwrap();
        let v0 = mean_snr_phi_closed(&base).unwrap();
        let double_phi = FadingParams::new(5, 0.5, 0.02, 8.0).unwrap();
        assert_relative_eq!(
            mean_snr_phi_closed(&double_phi).unwrap(),
            2.0 * v0,
            max_relative = 1e-13
        );
        let double_noise = FadingParams::new(5, 0.5, 0.04, 4.0).unwrap();
        assert_relative_eq!(
            mean_snr_phi_closed(&double_noise).unwrap(),
            0.5 * v0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn quadrature_mean_matches_reference_value() {
        // Independently computed double integral for M = 3, sigma2 = 0.5,
        // sigma_n2 = 0.02, sigma_phi2 = 4.
        let p = FadingParams::new(3, 0.5, 0.02, 4.0).unwrap();
        let q = mean_snr_phi_quadrature(&p).unwrap();
        assert_relative_eq!(q, 211.389_606_371_183_15, max_relative = 1e-6);
        let closed = mean_snr_phi_closed(&p).unwrap();
        assert_relative_eq!(q, closed, max_relative = 1e-6);
    }

    #[test]
    fn second_moment_exceeds_squared_mean() {
        let p = FadingParams::new(4, 1.0, 0.1, 1.0).unwrap();
        let m1 = mean_snr_phi_quadrature(&p).unwrap();
        let m2 = snr_phi_second_moment_quadrature(&p).unwrap();
        assert!(m2 > m1 * m1, "variance must be positive: m1={m1} m2={m2}");
    }

    #[test]
    fn quadrature_cv_tracks_closed_form() {
        for m in [1u32, 3, 8] {
            let p = FadingParams::new(m, 0.7, 0.05, 2.0).unwrap();
            let cv_q = snr_phi_cv_quadrature(&p).unwrap();
            let cv_c = coefficient_of_variation(m).unwrap();
            assert_relative_eq!(cv_q, cv_c, max_relative = 1e-4);
        }
    }

    #[test]
    fn gain_matches_reference_values() {
        let g1 = gain_k(1).unwrap();
        assert_relative_eq!(g1.exact, 1.0, max_relative = 1e-14);
        let g4 = gain_k(4).unwrap();
        assert_relative_eq!(g4.exact, 2.065_941_552_236_713, max_relative = 1e-13);
        let g15 = gain_k(15).unwrap();
        assert_relative_eq!(g15.exact, 4.048_701_522_010_641_9, max_relative = 1e-13);
        assert_relative_eq!(g15.stirling, 4.002_568_713_848_513, max_relative = 1e-13);
        // Gain approaches 1.05 sqrt(M) from above for large M.
        assert_relative_eq!(
            g15.exact / 15.0_f64.sqrt(),
            1.045_370_237_900_789_2,
            max_relative = 1e-13
        );
    }

    #[test]
    fn stirling_companion_converges_to_exact() {
        let mut prev_ratio = f64::INFINITY;
        for m in [2u32, 4, 8, 16, 32, 64] {
            let g = gain_k(m).unwrap();
            // exact/stirling = sqrt((2M-1)!!^(1/M) e / (2M)): 1.085 at M=2,
            // shrinking toward 1.
            let ratio = g.exact / g.stirling;
            assert!(ratio > 1.0 && ratio < 1.09, "M={m}: ratio {ratio}");
            assert!(ratio < prev_ratio, "ratio must shrink with M");
            prev_ratio = ratio;
        }
        assert!((prev_ratio - 1.0).abs() < 0.01, "M=64 ratio {prev_ratio}");
    }

    #[test]
    fn cv_matches_reference_values() {
        assert_relative_eq!(
            coefficient_of_variation(1).unwrap(),
            0.894_427_190_999_915_88,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            coefficient_of_variation(2).unwrap(),
            0.582_482_372_510_717_52,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            coefficient_of_variation(5).unwrap(),
            0.341_940_165_706_044_14,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            coefficient_of_variation(15).unwrap(),
            0.188_204_344_851_215_96,
            max_relative = 1e-14
        );
    }

    #[test]
    fn phase_error_density_peak_and_symmetry() {
        assert_relative_eq!(
            phase_noise_pdf(0.0, 0.01).unwrap(),
            3.989_422_804_014_326_8,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            phase_noise_pdf(0.2, 0.01).unwrap(),
            phase_noise_pdf(-0.2, 0.01).unwrap(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            phase_noise_pdf_exact(0.3, 0.04).unwrap(),
            0.639_643_247_703_431_2,
            max_relative = 1e-13
        );
        assert!(phase_noise_pdf_exact(1.6, 0.04).is_err());
        assert!(phase_noise_pdf(0.0, 0.0).is_err());
    }

    #[test]
    fn exact_phase_density_approaches_gaussian_when_noise_is_small() {
        // Total variation distance on |d| < pi/2 shrinks with delta^2.
        let tv = |var: f64| {
            let q = crate::quad::integrate(
                |d| {
                    (phase_noise_pdf_exact(d, var).unwrap() - phase_noise_pdf(d, var).unwrap())
                        .abs()
                },
                -std::f64::consts::FRAC_PI_2 + 1e-9,
                std::f64::consts::FRAC_PI_2 - 1e-9,
                1e-6,
            )
            .unwrap();
            0.5 * q.value
        };
        let coarse = tv(0.1);
        let fine = tv(0.01);
        assert!(
            fine < coarse,
            "TV must shrink with noise: {fine} vs {coarse}"
        );
        assert!(fine < 0.01, "TV at delta^2 = 0.01 is {fine}");
    }

    #[test]
    fn params_validate_inputs() {
        assert!(FadingParams::new(0, 1.0, 1.0, 1.0).is_err());
        assert!(FadingParams::new(3, -1.0, 1.0, 1.0).is_err());
        assert!(FadingParams::new(3, 1.0, 0.0, 1.0).is_err());
        assert!(FadingParams::new(3, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn curve_table_is_monotone_and_self_consistent() {
        let p = FadingParams::new(1, 0.014076, 0.001, 2.0).unwrap();
        let t = AnalyticCurves::tabulate(&p, 15).unwrap();
        assert_eq!(t.rows.len(), 15);
        assert_relative_eq!(t.rows[0].gain_exact, 1.0, max_relative = 1e-14);
        // Spot-check the CSV shape.
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 16);
        assert!(text.starts_with("channels,scale_b,"));
    }
}
