//! Frozen-scatterer fiber model and multi-channel backscatter synthesis.
//!
//! The fiber is a fixed one-dimensional field of discrete scatterers with
//! circular complex Gaussian reflectivities. A probe pulse train interrogates
//! it on several frequency-shifted channels at once; the return on channel m
//! at fast time t is the coherent sum of every scatterer whose round-trip
//! delay falls inside the pulse window [t - pulse_width, t]:
//!
//!   V_m(k, t) = sum_j r_j exp(i [2 pi df_m tau0_j + beta_m dz_j(k)]) + noise
//!
//! where df_m is the channel frequency offset, tau0_j the unperturbed
//! round-trip delay, dz_j(k) the slow-time displacement of scatterer j at
//! pulse k, and beta_m = 4 pi n (f_opt + df_m) / c the round-trip phase rate
//! of displacement. The static carrier phase 2 pi f_opt tau0_j is absorbed
//! into the (rotation-invariant) reflectivity phase.
//!
//! Displacements are orders of magnitude smaller than a fast-time sample, so
//! window membership is computed once from the unperturbed positions and the
//! perturbation enters only through the phase. That makes the sum separable:
//! scatterers before the strained region contribute a static sum, scatterers
//! after it a static sum times one common phasor, and only the scatterers
//! inside the region need per-pulse phases. All three pieces come from
//! prefix sums, reducing the cost per (channel, pulse) from O(N T) to
//! O(R + T) for R scatterers in the strained region.

use crate::error::{Error, Result};
use crate::rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Default probe carrier, a 1550 nm source.
pub const DEFAULT_OPTICAL_FREQUENCY_HZ: f64 = 193.4e12;

/// Minimum expected scatterers per half pulse width for the Gaussian-sum
/// statistics to hold. Configuration validation enforces this; synthesis
/// itself accepts arbitrary fields so that constructed few-scatterer cases
/// remain available for verification.
pub const MIN_SCATTERERS_PER_HALF_PULSE: f64 = 50.0;

/// Frozen random medium: sorted scatterer positions with complex
/// reflectivities, normalized so E|r|^2 = 1.
#[derive(Debug, Clone)]
pub struct ScattererField {
    positions_m: Vec<f64>,
    reflectivity: Vec<Complex64>,
    length_m: f64,
    refractive_index: f64,
    seed: Option<u64>,
}

impl ScattererField {
    /// Draws a field from a homogeneous point process with the given mean
    /// density. The draw order (count, then positions, then reflectivities)
    /// is part of the format: a given seed always produces the same field.
    pub fn generate(
        length_m: f64,
        density_per_m: f64,
        refractive_index: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(length_m > 0.0) || !length_m.is_finite() {
            return Err(Error::Config(format!(
                "fiber length must be positive, got {length_m}"
            )));
        }
        if !(density_per_m > 0.0) || !density_per_m.is_finite() {
            return Err(Error::Config(format!(
                "scatterer density must be positive, got {density_per_m}"
            )));
        }
        check_refractive_index(refractive_index)?;
        let mut rng = rng::stream_from_seed(seed);
        let lambda = density_per_m * length_m;
        let count = Poisson::new(lambda)
            .map_err(|e| Error::Config(format!("invalid scatterer count rate {lambda}: {e}")))?
            .sample(&mut rng) as usize;
        if count == 0 {
            return Err(Error::Config(format!(
                "drew an empty scatterer field (mean count {lambda:.2}); \
                 increase length or density"
            )));
        }
        let mut positions_m: Vec<f64> = (0..count).map(|_| rng.gen::<f64>() * length_m).collect();
        positions_m.sort_by(|a, b| a.total_cmp(b));
        let quad_sigma = (0.5_f64).sqrt();
        let normal = Normal::new(0.0, quad_sigma).expect("valid std");
        let reflectivity = (0..count)
            .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        Ok(ScattererField {
            positions_m,
            reflectivity,
            length_m,
            refractive_index,
            seed: Some(seed),
        })
    }

    /// Builds a field from explicit scatterers, for constructed test cases.
    pub fn from_parts(
        positions_m: Vec<f64>,
        reflectivity: Vec<Complex64>,
        length_m: f64,
        refractive_index: f64,
    ) -> Result<Self> {
        if positions_m.is_empty() {
            return Err(Error::Config("scatterer field must not be empty".into()));
        }
        if positions_m.len() != reflectivity.len() {
            return Err(Error::Config(format!(
                "{} positions but {} reflectivities",
                positions_m.len(),
                reflectivity.len()
            )));
        }
        check_refractive_index(refractive_index)?;
        for w in positions_m.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Config(
                    "scatterer positions must be sorted ascending".into(),
                ));
            }
        }
        if positions_m[0] < 0.0 || positions_m[positions_m.len() - 1] > length_m {
            return Err(Error::Config(format!(
                "scatterer positions must lie in [0, {length_m}]"
            )));
        }
        Ok(ScattererField {
            positions_m,
            reflectivity,
            length_m,
            refractive_index,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.positions_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_m.is_empty()
    }

    pub fn positions_m(&self) -> &[f64] {
        &self.positions_m
    }

    pub fn reflectivity(&self) -> &[Complex64] {
        &self.reflectivity
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    pub fn refractive_index(&self) -> f64 {
        self.refractive_index
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Round-trip group delay to position z and back.
    pub fn round_trip_delay_s(&self, z_m: f64) -> f64 {
        2.0 * self.refractive_index * z_m / SPEED_OF_LIGHT_M_PER_S
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "position_m,reflectivity_re,reflectivity_im")?;
        for (z, r) in self.positions_m.iter().zip(&self.reflectivity) {
            writeln!(w, "{:.9e},{:.9e},{:.9e}", z, r.re, r.im)?;
        }
        Ok(())
    }
}

fn check_refractive_index(n: f64) -> Result<()> {
    if !(1.0..=3.0).contains(&n) {
        return Err(Error::Config(format!(
            "refractive index must lie in [1, 3], got {n}"
        )));
    }
    Ok(())
}

/// Multi-channel probe layout. Channel m is offset from the carrier by
/// base_shift_hz + m * channel_spacing_hz for m in 0..num_channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub optical_frequency_hz: f64,
    pub base_shift_hz: f64,
    pub channel_spacing_hz: f64,
    pub num_channels: u32,
    pub pulse_width_s: f64,
    pub repetition_period_s: f64,
    /// Reserve one extra slot carrying no probe, for noise calibration.
    pub include_noise_slot: bool,
}

impl ChannelPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.optical_frequency_hz > 0.0) {
            return Err(Error::Config(format!(
                "optical frequency must be positive, got {}",
                self.optical_frequency_hz
            )));
        }
        if self.num_channels == 0 {
            return Err(Error::Config("need at least one channel".into()));
        }
        if !(self.pulse_width_s > 0.0) || !self.pulse_width_s.is_finite() {
            return Err(Error::Config(format!(
                "pulse width must be positive, got {}",
                self.pulse_width_s
            )));
        }
        if !(self.repetition_period_s > self.pulse_width_s) {
            return Err(Error::Config(format!(
                "repetition period {} must exceed the pulse width {}",
                self.repetition_period_s, self.pulse_width_s
            )));
        }
        if self.base_shift_hz < 0.0 {
            return Err(Error::Config(format!(
                "base frequency shift must be non-negative, got {}",
                self.base_shift_hz
            )));
        }
        if self.num_channels >= 2 {
            let min_spacing = self.decorrelation_spacing_hz();
            if self.channel_spacing_hz < min_spacing {
                return Err(Error::Config(format!(
                    "channel spacing {:.3e} Hz is below the decorrelation \
                     bandwidth 1/pulse_width = {:.3e} Hz; channels would not \
                     fade independently",
                    self.channel_spacing_hz, min_spacing
                )));
            }
        }
        Ok(())
    }

    /// Frequency spacing at which channel fading decorrelates: the
    /// reciprocal pulse width.
    pub fn decorrelation_spacing_hz(&self) -> f64 {
        1.0 / self.pulse_width_s
    }

    pub fn offset_hz(&self, channel: u32) -> f64 {
        self.base_shift_hz + channel as f64 * self.channel_spacing_hz
    }

    /// Round-trip phase advance per meter of scatterer displacement on the
    /// given channel: beta_m = 4 pi n (f_opt + df_m) / c.
    pub fn displacement_phase_rate(&self, channel: u32, refractive_index: f64) -> f64 {
        4.0 * std::f64::consts::PI
            * refractive_index
            * (self.optical_frequency_hz + self.offset_hz(channel))
            / SPEED_OF_LIGHT_M_PER_S
    }
}

/// Harmonic longitudinal strain applied to one region of the fiber.
/// Positions inside [region_start, region_end] stretch proportionally to
/// their depth into the region; everything past the region translates
/// rigidly by the accumulated elongation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub region_start_m: f64,
    pub region_end_m: f64,
    pub strain_amplitude: f64,
    pub frequency_hz: f64,
}

/// Strain amplitudes at or above this leave the small-signal regime the
/// synthesis is built around.
pub const MAX_STRAIN_AMPLITUDE: f64 = 1e-3;

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec {
            region_start_m: 0.0,
            region_end_m: 0.0,
            strain_amplitude: 0.0,
            frequency_hz: 0.0,
        }
    }

    pub fn validate(&self, fiber_length_m: f64) -> Result<()> {
        if !(0.0..=fiber_length_m).contains(&self.region_start_m)
            || !(0.0..=fiber_length_m).contains(&self.region_end_m)
            || self.region_end_m < self.region_start_m
        {
            return Err(Error::Config(format!(
                "strained region [{}, {}] must be an ordered interval inside \
                 [0, {fiber_length_m}]",
                self.region_start_m, self.region_end_m
            )));
        }
        if !(self.strain_amplitude >= 0.0) || self.strain_amplitude >= MAX_STRAIN_AMPLITUDE {
            return Err(Error::Config(format!(
                "strain amplitude must lie in [0, {MAX_STRAIN_AMPLITUDE}), got {}",
                self.strain_amplitude
            )));
        }
        if !(self.frequency_hz >= 0.0) || !self.frequency_hz.is_finite() {
            return Err(Error::Config(format!(
                "stimulus frequency must be non-negative, got {}",
                self.frequency_hz
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.strain_amplitude > 0.0 && self.region_end_m > self.region_start_m
    }

    pub fn region_length_m(&self) -> f64 {
        self.region_end_m - self.region_start_m
    }

    /// Instantaneous strain at pulse k of the slow-time grid.
    pub fn strain_at(&self, pulse_index: u64, repetition_period_s: f64) -> f64 {
        self.strain_amplitude
            * (2.0
                * std::f64::consts::PI
                * self.frequency_hz
                * pulse_index as f64
                * repetition_period_s)
                .sin()
    }
}

/// Scatterer positions under the perturbation at pulse k.
pub fn displaced_positions(
    field: &ScattererField,
    spec: &PerturbationSpec,
    pulse_index: u64,
    repetition_period_s: f64,
) -> Result<Vec<f64>> {
    spec.validate(field.length_m())?;
    let eps = spec.strain_at(pulse_index, repetition_period_s);
    Ok(field
        .positions_m()
        .iter()
        .map(|&z| z + displacement_of(z, spec, eps))
        .collect())
}

#[inline]
fn displacement_of(z: f64, spec: &PerturbationSpec, eps: f64) -> f64 {
    if z < spec.region_start_m {
        0.0
    } else if z <= spec.region_end_m {
        eps * (z - spec.region_start_m)
    } else {
        eps * spec.region_length_m()
    }
}

/// Fast-time sampling of the return, expressed as a gate of scatterer
/// positions. Sample i corresponds to the round-trip delay of
/// gate_start_m + i * (c * step / 2n): the location of the leading edge of
/// the pulse window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    pub fast_time_step_s: f64,
    pub gate_start_m: f64,
    pub gate_end_m: f64,
}

impl SamplingGrid {
    pub fn full(fiber_length_m: f64, fast_time_step_s: f64) -> Self {
        SamplingGrid {
            fast_time_step_s,
            gate_start_m: 0.0,
            gate_end_m: fiber_length_m,
        }
    }

    pub fn validate(&self, fiber_length_m: f64, pulse_width_s: f64) -> Result<()> {
        if !(self.fast_time_step_s > 0.0) || !self.fast_time_step_s.is_finite() {
            return Err(Error::Config(format!(
                "fast-time step must be positive, got {}",
                self.fast_time_step_s
            )));
        }
        if self.fast_time_step_s > pulse_width_s {
            return Err(Error::Config(format!(
                "fast-time step {} is coarser than the pulse width {}; the \
                 return would be undersampled",
                self.fast_time_step_s, pulse_width_s
            )));
        }
        if !(self.gate_start_m >= 0.0)
            || !(self.gate_end_m > self.gate_start_m)
            || self.gate_end_m > fiber_length_m
        {
            return Err(Error::Config(format!(
                "gate [{}, {}] must be an ordered interval inside [0, {fiber_length_m}]",
                self.gate_start_m, self.gate_end_m
            )));
        }
        Ok(())
    }

    /// Spatial extent of one fast-time sample.
    pub fn sample_pitch_m(&self, refractive_index: f64) -> f64 {
        SPEED_OF_LIGHT_M_PER_S * self.fast_time_step_s / (2.0 * refractive_index)
    }

    pub fn num_samples(&self, refractive_index: f64) -> usize {
        let span = self.gate_end_m - self.gate_start_m;
        (span / self.sample_pitch_m(refractive_index)).floor() as usize + 1
    }
}

/// Complex-baseband return of every channel over a pulse train, plus an
/// optional probe-free noise slot, with the metadata needed to interpret
/// and reproduce it.
#[derive(Debug, Clone)]
pub struct BackscatterTrace {
    /// Channel-major, then pulse, then fast time.
    samples: Vec<Complex64>,
    noise_slot: Option<Vec<Complex64>>,
    num_channels: usize,
    num_pulses: usize,
    num_fast: usize,
    pub plan: ChannelPlan,
    pub perturbation: PerturbationSpec,
    pub fast_time_step_s: f64,
    pub gate_start_m: f64,
    pub noise_variance: f64,
    pub fiber_length_m: f64,
    pub refractive_index: f64,
    pub field_seed: Option<u64>,
    pub noise_seed: u64,
}

impl BackscatterTrace {
    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }

    pub fn num_fast(&self) -> usize {
        self.num_fast
    }

    #[inline]
    pub fn sample(&self, channel: usize, pulse: usize, fast: usize) -> Complex64 {
        self.samples[(channel * self.num_pulses + pulse) * self.num_fast + fast]
    }

    pub fn channel_pulse(&self, channel: usize, pulse: usize) -> &[Complex64] {
        let start = (channel * self.num_pulses + pulse) * self.num_fast;
        &self.samples[start..start + self.num_fast]
    }

    pub fn noise_slot_pulse(&self, pulse: usize) -> Option<&[Complex64]> {
        self.noise_slot
            .as_ref()
            .map(|n| &n[pulse * self.num_fast..(pulse + 1) * self.num_fast])
    }

    pub fn has_noise_slot(&self) -> bool {
        self.noise_slot.is_some()
    }

    /// Fiber position probed by fast-time sample i.
    pub fn position_m(&self, fast: usize) -> f64 {
        self.gate_start_m
            + fast as f64 * SPEED_OF_LIGHT_M_PER_S * self.fast_time_step_s
                / (2.0 * self.refractive_index)
    }

    /// Nearest fast-time sample to a fiber position, if inside the gate.
    pub fn fast_index_of(&self, position_m: f64) -> Option<usize> {
        let pitch = SPEED_OF_LIGHT_M_PER_S * self.fast_time_step_s / (2.0 * self.refractive_index);
        let idx = ((position_m - self.gate_start_m) / pitch).round();
        if idx < 0.0 || idx >= self.num_fast as f64 {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub(crate) fn raw_samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub(crate) fn raw_noise_slot(&self) -> Option<&[Complex64]> {
        self.noise_slot.as_deref()
    }

    pub(crate) fn from_raw(
        samples: Vec<Complex64>,
        noise_slot: Option<Vec<Complex64>>,
        num_channels: usize,
        num_pulses: usize,
        num_fast: usize,
        plan: ChannelPlan,
        perturbation: PerturbationSpec,
        fast_time_step_s: f64,
        gate_start_m: f64,
        noise_variance: f64,
        fiber_length_m: f64,
        refractive_index: f64,
        field_seed: Option<u64>,
        noise_seed: u64,
    ) -> Self {
        debug_assert_eq!(samples.len(), num_channels * num_pulses * num_fast);
        BackscatterTrace {
            samples,
            noise_slot,
            num_channels,
            num_pulses,
            num_fast,
            plan,
            perturbation,
            fast_time_step_s,
            gate_start_m,
            noise_variance,
            fiber_length_m,
            refractive_index,
            field_seed,
            noise_seed,
        }
    }
}

/// Synthesizes the multi-channel return of `field` over `num_pulses`
/// repetitions. Additive noise is circular complex Gaussian with variance
/// `noise_variance` per quadrature, per channel, drawn in a fixed order so
/// the result depends only on the seeds and parameters.
pub fn synthesize_backscatter(
    field: &ScattererField,
    plan: &ChannelPlan,
    perturbation: &PerturbationSpec,
    grid: &SamplingGrid,
    num_pulses: usize,
    noise_variance: f64,
    noise_seed: u64,
) -> Result<BackscatterTrace> {
    plan.validate()?;
    grid.validate(field.length_m(), plan.pulse_width_s)?;
    perturbation.validate(field.length_m())?;
    if num_pulses == 0 {
        return Err(Error::Config("need at least one pulse".into()));
    }
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::Config(format!(
            "noise variance must be non-negative, got {noise_variance}"
        )));
    }
    let n = field.refractive_index();
    let fiber_round_trip = field.round_trip_delay_s(field.length_m());
    if plan.repetition_period_s < fiber_round_trip {
        return Err(Error::Config(format!(
            "repetition period {:.3e} s is shorter than the fiber round trip \
             {:.3e} s; consecutive pulses would overlap",
            plan.repetition_period_s, fiber_round_trip
        )));
    }
    // Static window membership requires displacements far below one sample.
    let max_displacement = perturbation.strain_amplitude * perturbation.region_length_m();
    let pitch = grid.sample_pitch_m(n);
    if max_displacement > 0.05 * pitch {
        return Err(Error::Config(format!(
            "peak displacement {max_displacement:.3e} m is not small against \
             the fast-time sample pitch {pitch:.3e} m"
        )));
    }

    let num_fast = grid.num_samples(n);
    let num_channels = plan.num_channels as usize;
    let num_pulses_u = num_pulses;

    // Unperturbed round-trip delays, sorted because positions are.
    let tau0: Vec<f64> = field
        .positions_m()
        .iter()
        .map(|&z| field.round_trip_delay_s(z))
        .collect();
    let t0 = 2.0 * n * grid.gate_start_m / SPEED_OF_LIGHT_M_PER_S;
    let dt = grid.fast_time_step_s;
    let pulse_width = plan.pulse_width_s;

    // Window [lo, hi) per fast sample by two monotone pointers.
    let mut windows = Vec::with_capacity(num_fast);
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..num_fast {
        let t = t0 + i as f64 * dt;
        while lo < tau0.len() && tau0[lo] < t - pulse_width {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < tau0.len() && tau0[hi] <= t {
            hi += 1;
        }
        windows.push((lo, hi));
    }

    // Scatterer index range [ra, rb) covered by the strained region.
    let positions = field.positions_m();
    let (ra, rb) = if perturbation.is_active() {
        let ra = positions.partition_point(|&z| z < perturbation.region_start_m);
        let rb = positions.partition_point(|&z| z <= perturbation.region_end_m);
        (ra, rb)
    } else {
        (0, 0)
    };
    let active = perturbation.is_active();

    // Strain per pulse, shared across channels.
    let strains: Vec<f64> = (0..num_pulses_u)
        .map(|k| {
            if active {
                perturbation.strain_at(k as u64, plan.repetition_period_s)
            } else {
                0.0
            }
        })
        .collect();

    let mut noise_rng = rng::stream_from_seed(noise_seed);
    let sigma = noise_variance.sqrt();
    let noise_dist = Normal::new(0.0, 1.0).expect("unit normal");
    let draw_noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Complex64 {
        if sigma == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(
                sigma * noise_dist.sample(rng),
                sigma * noise_dist.sample(rng),
            )
        }
    };

    let refl = field.reflectivity();
    let mut samples = vec![Complex64::new(0.0, 0.0); num_channels * num_pulses_u * num_fast];
    // Static per-channel phasor prefix sums over all scatterers.
    let mut prefix = vec![Complex64::new(0.0, 0.0); tau0.len() + 1];
    // Per-pulse prefix over the strained region only.
    let mut region_prefix = vec![Complex64::new(0.0, 0.0); rb - ra + 1];
    let mut region_base = vec![Complex64::new(0.0, 0.0); rb - ra];

    for m in 0..num_channels {
        let df = plan.offset_hz(m as u32);
        let beta = plan.displacement_phase_rate(m as u32, n);
        let mut acc = Complex64::new(0.0, 0.0);
        prefix[0] = acc;
        for (j, (&tau, &r)) in tau0.iter().zip(refl).enumerate() {
            let phase = 2.0 * std::f64::consts::PI * df * tau;
            let base = r * Complex64::from_polar(1.0, phase);
            if j >= ra && j < rb {
                region_base[j - ra] = base;
            }
            acc += base;
            prefix[j + 1] = acc;
        }
        for k in 0..num_pulses_u {
            let eps = strains[k];
            // Rigid translation phasor for everything past the region.
            let tail_phasor = if active {
                Complex64::from_polar(1.0, beta * eps * perturbation.region_length_m())
            } else {
                Complex64::new(1.0, 0.0)
            };
            if active {
                let mut racc = Complex64::new(0.0, 0.0);
                region_prefix[0] = racc;
                for j in ra..rb {
                    let dz = eps * (positions[j] - perturbation.region_start_m);
                    racc += region_base[j - ra] * Complex64::from_polar(1.0, beta * dz);
                    region_prefix[j - ra + 1] = racc;
                }
            }
            let out_base = (m * num_pulses_u + k) * num_fast;
            for (i, &(wlo, whi)) in windows.iter().enumerate() {
                let mut v = Complex64::new(0.0, 0.0);
                if whi > wlo {
                    if !active {
                        v = prefix[whi] - prefix[wlo];
                    } else {
                        // Before-region piece.
                        let b_hi = whi.min(ra);
                        if b_hi > wlo {
                            v += prefix[b_hi] - prefix[wlo];
                        }
                        // In-region piece with per-scatterer phases.
                        let r_lo = wlo.max(ra);
                        let r_hi = whi.min(rb);
                        if r_hi > r_lo {
                            v += region_prefix[r_hi - ra] - region_prefix[r_lo - ra];
                        }
                        // After-region piece, rigidly translated.
                        let a_lo = wlo.max(rb);
                        if whi > a_lo {
                            v += tail_phasor * (prefix[whi] - prefix[a_lo]);
                        }
                    }
                }
                samples[out_base + i] = v + draw_noise(&mut noise_rng);
            }
        }
    }

    let noise_slot = if plan.include_noise_slot {
        let mut slot = Vec::with_capacity(num_pulses_u * num_fast);
        for _ in 0..num_pulses_u * num_fast {
            slot.push(draw_noise(&mut noise_rng));
        }
        Some(slot)
    } else {
        None
    };

    Ok(BackscatterTrace::from_raw(
        samples,
        noise_slot,
        num_channels,
        num_pulses_u,
        num_fast,
        plan.clone(),
        *perturbation,
        dt,
        grid.gate_start_m,
        noise_variance,
        field.length_m(),
        n,
        field.seed(),
        noise_seed,
    ))
}
