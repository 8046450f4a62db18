//! Run configuration: a flat key = value text format.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Keys carry their unit as a suffix (`pulse_width_ns`); values are stored
//! internally in SI units. Unknown and duplicate keys are errors, so typos
//! fail loudly instead of silently running defaults. Missing keys fall back
//! to the documented defaults. [`RunConfig::write_canonical`] emits the
//! same format in a fixed key order, and parsing its output reproduces the
//! configuration exactly; run manifests rely on that round trip.

use crate::error::{Error, Result};
use crate::fiber::{
    ChannelPlan, PerturbationSpec, SamplingGrid, MIN_SCATTERERS_PER_HALF_PULSE,
    SPEED_OF_LIGHT_M_PER_S,
};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fiber_length_m: f64,
    pub scatterer_density_per_m: f64,
    pub refractive_index: f64,
    pub optical_frequency_hz: f64,
    pub num_channels: u32,
    pub base_shift_hz: f64,
    pub channel_spacing_hz: f64,
    pub pulse_width_s: f64,
    pub repetition_period_s: f64,
    pub include_noise_slot: bool,
    pub fast_time_step_s: f64,
    /// Gate bounds; None means the full fiber.
    pub gate_start_m: Option<f64>,
    pub gate_end_m: Option<f64>,
    pub perturbation_start_m: f64,
    pub perturbation_length_m: f64,
    pub strain_amplitude: f64,
    pub stimulus_frequency_hz: f64,
    /// Target intensity SNR in dB; fixes the noise variance relative to
    /// the calibrated mean return power.
    pub snr_intensity_db: f64,
    /// Half-width in dB of a uniform per-realization jitter on the noise
    /// variance.
    pub snr_intensity_jitter_db: f64,
    pub gauge_length_m: f64,
    pub num_pulses: u32,
    pub m_values: Vec<u32>,
    pub realizations: u32,
    pub pilot_realizations: u32,
    pub master_seed: Option<u64>,
}

impl Default for RunConfig {
    /// Desk-scale defaults: a 200 m fiber probed by 15 channels, sized so a
    /// full statistical sweep runs in minutes. Density sits deep in the
    /// dense-scatterer regime the aggregate amplitude law assumes, and the
    /// channel spacing is an integer multiple of the inverse pulse width so
    /// channel fields are exactly uncorrelated.
    fn default() -> Self {
        RunConfig {
            fiber_length_m: 200.0,
            scatterer_density_per_m: 90.0,
            refractive_index: 1.468,
            optical_frequency_hz: 193.4e12,
            num_channels: 15,
            base_shift_hz: 500e6,
            channel_spacing_hz: 30e6,
            pulse_width_s: 100e-9,
            repetition_period_s: 500e-6,
            include_noise_slot: true,
            fast_time_step_s: 2e-9,
            gate_start_m: None,
            gate_end_m: None,
            perturbation_start_m: 120.0,
            perturbation_length_m: 12.7,
            strain_amplitude: 2e-8,
            stimulus_frequency_hz: 100.0,
            snr_intensity_db: 20.0,
            snr_intensity_jitter_db: 0.0,
            gauge_length_m: 40.0,
            num_pulses: 240,
            m_values: vec![1, 2, 5, 10, 15],
            realizations: 500,
            pilot_realizations: 64,
            master_seed: None,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "fiber_length_m",
    "scatterer_density_per_m",
    "refractive_index",
    "optical_frequency_thz",
    "num_channels",
    "base_shift_mhz",
    "channel_spacing_mhz",
    "pulse_width_ns",
    "repetition_period_us",
    "include_noise_slot",
    "fast_time_step_ns",
    "gate_start_m",
    "gate_end_m",
    "perturbation_start_m",
    "perturbation_length_m",
    "strain_amplitude",
    "stimulus_frequency_hz",
    "snr_intensity_db",
    "snr_intensity_jitter_db",
    "gauge_length_m",
    "num_pulses",
    "m_values",
    "realizations",
    "pilot_realizations",
    "master_seed",
];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            let known = KNOWN_KEYS
                .iter()
                .find(|&&k| k == key)
                .copied()
                .ok_or_else(|| unknown_key_error(key, lineno + 1))?;
            if seen.contains(&known) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            seen.push(known);
            apply_key(&mut cfg, known, value, lineno + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Emits the configuration in parseable form with a fixed key order.
    pub fn write_canonical<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "fiber_length_m = {}", self.fiber_length_m)?;
        writeln!(
            w,
            "scatterer_density_per_m = {}",
            self.scatterer_density_per_m
        )?;
        writeln!(w, "refractive_index = {}", self.refractive_index)?;
        writeln!(
            w,
            "optical_frequency_thz = {}",
            self.optical_frequency_hz / 1e12
        )?;
        writeln!(w, "num_channels = {}", self.num_channels)?;
        writeln!(w, "base_shift_mhz = {}", self.base_shift_hz / 1e6)?;
        writeln!(w, "channel_spacing_mhz = {}", self.channel_spacing_hz / 1e6)?;
        writeln!(w, "pulse_width_ns = {}", self.pulse_width_s * 1e9)?;
        writeln!(
            w,
            "repetition_period_us = {}",
            self.repetition_period_s * 1e6
        )?;
        writeln!(w, "include_noise_slot = {}", self.include_noise_slot)?;
        writeln!(w, "fast_time_step_ns = {}", self.fast_time_step_s * 1e9)?;
        if let Some(g) = self.gate_start_m {
            writeln!(w, "gate_start_m = {g}")?;
        }
        if let Some(g) = self.gate_end_m {
            writeln!(w, "gate_end_m = {g}")?;
        }
        writeln!(w, "perturbation_start_m = {}", self.perturbation_start_m)?;
        writeln!(w, "perturbation_length_m = {}", self.perturbation_length_m)?;
        writeln!(w, "strain_amplitude = {}", self.strain_amplitude)?;
        writeln!(w, "stimulus_frequency_hz = {}", self.stimulus_frequency_hz)?;
        writeln!(w, "snr_intensity_db = {}", self.snr_intensity_db)?;
        writeln!(
            w,
            "snr_intensity_jitter_db = {}",
            self.snr_intensity_jitter_db
        )?;
        writeln!(w, "gauge_length_m = {}", self.gauge_length_m)?;
        writeln!(w, "num_pulses = {}", self.num_pulses)?;
        let ms: Vec<String> = self.m_values.iter().map(|m| m.to_string()).collect();
        writeln!(w, "m_values = {}", ms.join(","))?;
        writeln!(w, "realizations = {}", self.realizations)?;
        writeln!(w, "pilot_realizations = {}", self.pilot_realizations)?;
        if let Some(seed) = self.master_seed {
            writeln!(w, "master_seed = {seed}")?;
        }
        Ok(())
    }

    /// Structural and physical consistency of the whole configuration.
    pub fn validate(&self) -> Result<()> {
        self.channel_plan().validate()?;
        self.sampling_grid()
            .validate(self.fiber_length_m, self.pulse_width_s)?;
        self.perturbation().validate(self.fiber_length_m)?;
        if !(self.scatterer_density_per_m > 0.0) {
            return Err(Error::Config(format!(
                "scatterer density must be positive, got {}",
                self.scatterer_density_per_m
            )));
        }
        // Gaussian-sum statistics need enough scatterers per half pulse.
        let half_pulse_m =
            SPEED_OF_LIGHT_M_PER_S * self.pulse_width_s / (2.0 * self.refractive_index) / 2.0;
        let per_half_pulse = self.scatterer_density_per_m * half_pulse_m;
        if per_half_pulse < MIN_SCATTERERS_PER_HALF_PULSE {
            return Err(Error::Config(format!(
                "only {per_half_pulse:.1} scatterers per half pulse width; \
                 need at least {MIN_SCATTERERS_PER_HALF_PULSE} for the \
                 statistics to hold (raise the density or widen the pulse)"
            )));
        }
        let round_trip = 2.0 * self.refractive_index * self.fiber_length_m / SPEED_OF_LIGHT_M_PER_S;
        if self.repetition_period_s < round_trip {
            return Err(Error::Config(format!(
                "repetition period {:.3e} s is shorter than the fiber round \
                 trip {round_trip:.3e} s",
                self.repetition_period_s
            )));
        }
        let nyquist = 0.5 / self.repetition_period_s;
        if self.stimulus_frequency_hz >= nyquist {
            return Err(Error::Config(format!(
                "stimulus frequency {} Hz is at or above the slow-time \
                 Nyquist rate {nyquist} Hz",
                self.stimulus_frequency_hz
            )));
        }
        let grid = self.sampling_grid();
        if !(self.gauge_length_m > 0.0)
            || self.gauge_length_m >= grid.gate_end_m - grid.gate_start_m
        {
            return Err(Error::Config(format!(
                "gauge length {} m must be positive and fit inside the \
                 {:.1} m gate",
                self.gauge_length_m,
                grid.gate_end_m - grid.gate_start_m
            )));
        }
        if self.m_values.is_empty() {
            return Err(Error::Config("m_values must not be empty".into()));
        }
        for w in self.m_values.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("m_values must be strictly increasing".into()));
            }
        }
        if self.m_values[0] == 0 {
            return Err(Error::Config("m_values entries must be at least 1".into()));
        }
        let max_m = *self.m_values.last().unwrap();
        if max_m > self.num_channels {
            return Err(Error::Config(format!(
                "m_values asks for {max_m} channels but num_channels is {}",
                self.num_channels
            )));
        }
        if !(self.snr_intensity_jitter_db >= 0.0) {
            return Err(Error::Config(format!(
                "snr_intensity_jitter_db must be non-negative, got {}",
                self.snr_intensity_jitter_db
            )));
        }
        if self.num_pulses == 0 {
            return Err(Error::Config("num_pulses must be at least 1".into()));
        }
        Ok(())
    }

    pub fn channel_plan(&self) -> ChannelPlan {
        ChannelPlan {
            optical_frequency_hz: self.optical_frequency_hz,
            base_shift_hz: self.base_shift_hz,
            channel_spacing_hz: self.channel_spacing_hz,
            num_channels: self.num_channels,
            pulse_width_s: self.pulse_width_s,
            repetition_period_s: self.repetition_period_s,
            include_noise_slot: self.include_noise_slot,
        }
    }

    pub fn perturbation(&self) -> PerturbationSpec {
        PerturbationSpec {
            region_start_m: self.perturbation_start_m,
            region_end_m: self.perturbation_start_m + self.perturbation_length_m,
            strain_amplitude: self.strain_amplitude,
            frequency_hz: self.stimulus_frequency_hz,
        }
    }

    pub fn sampling_grid(&self) -> SamplingGrid {
        SamplingGrid {
            fast_time_step_s: self.fast_time_step_s,
            gate_start_m: self.gate_start_m.unwrap_or(0.0),
            gate_end_m: self.gate_end_m.unwrap_or(self.fiber_length_m),
        }
    }

    /// Noise variance per quadrature for a calibrated mean return power.
    pub fn noise_variance_for(&self, mean_return_power: f64) -> f64 {
        mean_return_power / 10f64.powf(self.snr_intensity_db / 10.0)
    }
}

fn unknown_key_error(key: &str, lineno: usize) -> Error {
    // A bare key missing its unit suffix is the common typo.
    let suggestion = (!key.is_empty())
        .then(|| KNOWN_KEYS.iter().find(|k| k.starts_with(key)))
        .flatten()
        .map(|k| format!("; did you mean `{k}`?"))
        .unwrap_or_default();
    Error::Config(format!("line {lineno}: unknown key `{key}`{suggestion}"))
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str, lineno: usize) -> Result<()> {
    let bad = |what: &str| {
        Error::Config(format!(
            "line {lineno}: key `{key}` expects {what}, got `{value}`"
        ))
    };
    let f = || value.parse::<f64>().map_err(|_| bad("a number"));
    let u = || value.parse::<u32>().map_err(|_| bad("an unsigned integer"));
    match key {
        "fiber_length_m" => cfg.fiber_length_m = f()?,
        "scatterer_density_per_m" => cfg.scatterer_density_per_m = f()?,
        "refractive_index" => cfg.refractive_index = f()?,
        "optical_frequency_thz" => cfg.optical_frequency_hz = f()? * 1e12,
        "num_channels" => cfg.num_channels = u()?,
        "base_shift_mhz" => cfg.base_shift_hz = f()? * 1e6,
        "channel_spacing_mhz" => cfg.channel_spacing_hz = f()? * 1e6,
        "pulse_width_ns" => cfg.pulse_width_s = f()? / 1e9,
        "repetition_period_us" => cfg.repetition_period_s = f()? / 1e6,
        "include_noise_slot" => {
            cfg.include_noise_slot = value.parse::<bool>().map_err(|_| bad("true or false"))?
        }
        "fast_time_step_ns" => cfg.fast_time_step_s = f()? / 1e9,
        "gate_start_m" => cfg.gate_start_m = Some(f()?),
        "gate_end_m" => cfg.gate_end_m = Some(f()?),
        "perturbation_start_m" => cfg.perturbation_start_m = f()?,
        "perturbation_length_m" => cfg.perturbation_length_m = f()?,
        "strain_amplitude" => cfg.strain_amplitude = f()?,
        "stimulus_frequency_hz" => cfg.stimulus_frequency_hz = f()?,
        "snr_intensity_db" => cfg.snr_intensity_db = f()?,
        "snr_intensity_jitter_db" => cfg.snr_intensity_jitter_db = f()?,
        "gauge_length_m" => cfg.gauge_length_m = f()?,
        "num_pulses" => cfg.num_pulses = u()?,
        "m_values" => cfg.m_values = parse_m_values(value).map_err(|e| bad(&e))?,
        "realizations" => cfg.realizations = u()?,
        "pilot_realizations" => cfg.pilot_realizations = u()?,
        "master_seed" => {
            cfg.master_seed = Some(
                value
                    .parse::<u64>()
                    .map_err(|_| bad("an unsigned integer"))?,
            )
        }
        _ => unreachable!("key filtered against KNOWN_KEYS"),
    }
    Ok(())
}

/// Either an inclusive range `a..b` or a comma list `1,2,5`.
fn parse_m_values(value: &str) -> std::result::Result<Vec<u32>, String> {
    if let Some((a, b)) = value.split_once("..") {
        let lo: u32 = a
            .trim()
            .parse()
            .map_err(|_| "a range like 1..15".to_string())?;
        let hi: u32 = b
            .trim()
            .parse()
            .map_err(|_| "a range like 1..15".to_string())?;
        if lo == 0 || hi < lo {
            return Err("a non-empty range of positive integers".into());
        }
        return Ok((lo..=hi).collect());
    }
    let vals: std::result::Result<Vec<u32>, _> =
        value.split(',').map(|s| s.trim().parse::<u32>()).collect();
    vals.map_err(|_| "a comma list like 1,2,5,10 or a range like 1..15".to_string())
}
