//! Monte Carlo sweep over channel counts: many independent scatterer
//! fields, one synthetic interrogation each, co-phased aggregation over
//! nested channel prefixes, and per-channel-count statistics of the
//! demodulated phase SNR and the aggregate amplitude.
//!
//! Every random draw comes from a stream derived from (master seed,
//! domain, realization index), and per-realization results are reduced in
//! realization order, so a sweep's report depends only on the master seed
//! and the config, not on the worker count.

use crate::analytic::{self, FadingParams};
use crate::config::RunConfig;
use crate::dsp;
use crate::error::{Error, Result};
use crate::fiber::{
    synthesize_backscatter, BackscatterTrace, PerturbationSpec, ScattererField,
    SPEED_OF_LIGHT_M_PER_S,
};
use crate::rng;
use crate::special;
use crate::stats::{self, Histogram, KsOutcome};
use num_complex::Complex64;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Seed-derivation domains. Fixed numbers are part of the report format:
/// changing them changes every sweep's output.
pub const DOMAIN_PILOT_FIELD: u64 = 1;
pub const DOMAIN_FIELD: u64 = 2;
pub const DOMAIN_NOISE: u64 = 3;
pub const DOMAIN_JITTER: u64 = 4;

/// Cap on the sample count fed to the distribution test. The model density
/// is an asymptotic approximation of the true aggregate-amplitude law:
/// after moment matching its residual shape distance from a true
/// Rayleigh-channel sum is D ~ 0.012 at large M, and the shared per-window
/// scatterer budget adds an O(1/count) broadening on top. The cap places
/// the 1% rejection threshold (1.628/sqrt(n)) two sampling deviations
/// above that documented floor, so the test still resolves implementation
/// errors (wrong shape, scale, or aggregation give D >= 0.04) without
/// rejecting the approximation it is defined against. Pooled moments,
/// contrast and histograms always use every sample.
pub const KS_SAMPLE_CAP: usize = 2000;

/// Guard margin, in meters, between an amplitude probe's pulse window and
/// the strained span.
const PROBE_REGION_MARGIN_M: f64 = 1.0;

/// Fiber past the strained span swings in common phase with the stimulus,
/// which shrinks each channel's slow-time mean by J0 of the peak swing. The
/// late gauge endpoint lives there, so its co-phasing reference must keep at
/// least this fraction of the field amplitude to stay above the noise.
const MIN_REFERENCE_SHRINKAGE: f64 = 0.05;

/// A validated sweep request.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub run: RunConfig,
}

impl SweepConfig {
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        if run.realizations < 100 {
            return Err(Error::Config(format!(
                "a statistical sweep needs at least 100 realizations, got {}",
                run.realizations
            )));
        }
        if run.pilot_realizations < 8 {
            return Err(Error::Config(format!(
                "noise calibration needs at least 8 pilot realizations, got {}",
                run.pilot_realizations
            )));
        }
        if !run.perturbation().is_active() {
            return Err(Error::Config(
                "a sweep measures stimulus SNR; set a non-zero strain amplitude".into(),
            ));
        }
        let periods = run.num_pulses as f64 * run.repetition_period_s * run.stimulus_frequency_hz;
        if periods < 2.0 {
            return Err(Error::Config(format!(
                "{} pulses cover only {periods:.2} stimulus periods; the SNR \
                 fit needs at least 2",
                run.num_pulses
            )));
        }
        let peak_phase = (2.0 * stimulus_phase_variance(&run)).sqrt();
        if peak_phase > 12.0 {
            return Err(Error::Config(format!(
                "stimulus peak phase {peak_phase:.1} rad is beyond the \
                 mean-referenced readout regime; lower the strain amplitude \
                 or shorten the strained span"
            )));
        }
        if special::bessel_j0(peak_phase)?.abs() < MIN_REFERENCE_SHRINKAGE {
            return Err(Error::Config(format!(
                "stimulus peak phase {peak_phase:.3} rad sits near a zero of \
                 J0, where the slow-time mean referencing each channel past \
                 the strained span collapses into the noise; nudge the strain \
                 amplitude or the span length"
            )));
        }
        readout_layout(&run)?;
        Ok(SweepConfig { run })
    }
}

/// Where a sweep reads the synthetic traces: fast-time indices of the
/// fade-statistics probes and of the gauge endpoints that straddle the
/// strained span.
#[derive(Debug, Clone)]
pub struct ReadoutLayout {
    pub probe_indices: Vec<usize>,
    pub probe_positions_m: Vec<f64>,
    /// Fast-time endpoint pair (before, after) for the differential phase.
    pub gauge_pair: (usize, usize),
    pub gauge_pair_m: (f64, f64),
}

/// Chooses amplitude probes and the gauge endpoint pair for a config.
///
/// Probes are spaced more than one pulse footprint apart so their windows
/// see disjoint scatterer sets, and they sit strictly ahead of the strained
/// span: scatterers inside the span stretch, and every scatterer past it is
/// carried bodily by the accumulated elongation, so only the fiber before
/// the span holds still. (A window of bodily-carried scatterers keeps its
/// magnitude but swings in common phase; that swing can null the slow-time
/// mean each channel uses as its co-phasing reference, which scrambles the
/// multi-channel sum.) The gauge endpoints are
/// placed symmetrically about the strained span: the early endpoint's
/// window must close before the span starts and the late endpoint's window
/// must open after it ends, so their phase difference carries the full
/// elongation and both amplitudes stay stimulus-free.
pub fn readout_layout(run: &RunConfig) -> Result<ReadoutLayout> {
    let grid = run.sampling_grid();
    let pert = run.perturbation();
    let n = run.refractive_index;
    let pitch = grid.sample_pitch_m(n);
    let num_fast = grid.num_samples(n);
    let footprint = SPEED_OF_LIGHT_M_PER_S * run.pulse_width_s / (2.0 * n);

    let static_limit = if pert.is_active() {
        (pert.region_start_m - PROBE_REGION_MARGIN_M).min(grid.gate_end_m - 0.5)
    } else {
        grid.gate_end_m - 0.5
    };
    let mut probe_indices = Vec::new();
    let mut probe_positions_m = Vec::new();
    let step = footprint + 1.0;
    // A probe's window must be filled by scatterers, so it cannot start
    // before one pulse footprint into the fiber.
    let mut z = (grid.gate_start_m + 0.5).max(footprint);
    while z <= static_limit {
        let idx = ((z - grid.gate_start_m) / pitch).round() as usize;
        if idx < num_fast {
            probe_indices.push(idx);
            probe_positions_m.push(grid.gate_start_m + idx as f64 * pitch);
        }
        z += step;
    }
    if probe_indices.len() < 3 {
        return Err(Error::Config(format!(
            "gate [{}, {}] m leaves only {} stimulus-free amplitude probes \
             at a {footprint:.1} m pulse footprint; need at least 3",
            grid.gate_start_m,
            grid.gate_end_m,
            probe_indices.len()
        )));
    }

    let center = if pert.is_active() {
        0.5 * (pert.region_start_m + pert.region_end_m)
    } else {
        0.5 * (grid.gate_start_m + grid.gate_end_m)
    };
    let gauge_samples = (run.gauge_length_m / pitch).round().max(1.0) as usize;
    let a_z = center - 0.5 * run.gauge_length_m;
    let a_idx = ((a_z - grid.gate_start_m) / pitch).round();
    if a_idx < 0.0 {
        return Err(Error::Config(format!(
            "early gauge endpoint {a_z:.1} m falls before the gate start {} m",
            grid.gate_start_m
        )));
    }
    let a = a_idx as usize;
    let b = a + gauge_samples;
    if b >= num_fast {
        return Err(Error::Config(format!(
            "late gauge endpoint falls past the gate end {} m",
            grid.gate_end_m
        )));
    }
    let za = grid.gate_start_m + a as f64 * pitch;
    let zb = grid.gate_start_m + b as f64 * pitch;
    if pert.is_active() {
        if za > pert.region_start_m + 1e-9 {
            return Err(Error::Config(format!(
                "early gauge endpoint {za:.2} m sits inside the strained span \
                 starting at {} m; use a gauge longer than the span",
                pert.region_start_m
            )));
        }
        if zb - footprint < pert.region_end_m - 1e-9 {
            return Err(Error::Config(format!(
                "late gauge endpoint {zb:.2} m still windows the strained span \
                 ending at {} m; use a longer gauge or a shorter pulse",
                pert.region_end_m
            )));
        }
    }
    Ok(ReadoutLayout {
        probe_indices,
        probe_positions_m,
        gauge_pair: (a, b),
        gauge_pair_m: (za, zb),
    })
}

/// Per-channel field variance (per quadrature) of a synthetic trace:
/// half the mean return intensity, less the known additive noise.
pub fn estimate_sigma2(trace: &BackscatterTrace) -> Result<f64> {
    let samples = trace.raw_samples();
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "field-variance estimate needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mean_sq = samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / samples.len() as f64;
    let est = 0.5 * mean_sq - trace.noise_variance;
    if !(est > 0.0) {
        return Err(Error::Numeric(format!(
            "return power {mean_sq:.3e} does not rise above the noise floor"
        )));
    }
    Ok(est)
}

/// Distribution test of aggregate amplitudes against the M-channel model
/// law with the given per-channel field variance.
pub fn amplitude_distribution_test(
    samples: &[f64],
    channels: u32,
    field_variance: f64,
) -> Result<KsOutcome> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cdf = analytic::rayleigh_sum_cdf_grid(&sorted, channels, field_variance)?;
    stats::ks_test_sorted(&sorted, &cdf)
}

/// Statistics of one channel count within a sweep.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub channels: u32,
    /// Realizations whose SNR fit was usable (not saturated).
    pub samples_used: usize,
    pub saturated: usize,
    pub snr_mean: f64,
    pub snr_std: f64,
    pub snr_cv: f64,
    /// sqrt of the mean-SNR ratio against the single-channel row; present
    /// only when the sweep includes M = 1.
    pub gain_empirical: Option<f64>,
    pub model_mean_snr: f64,
    pub model_cv: f64,
    pub model_gain: f64,
    /// Contrast of the pooled probe intensities.
    pub speckle_contrast: f64,
    /// Model intensity contrast 1/sqrt(M).
    pub model_contrast: f64,
    /// Fraction of probe intensities below a tenth of their mean.
    pub fade_fraction: f64,
    /// Amplitude-law test on a capped subsample, against the model with
    /// the moment-matched variance below.
    pub ks: KsOutcome,
    /// Field variance inferred from the pooled aggregate second moment.
    pub sigma2_matched: f64,
    pub histogram: Histogram,
}

/// Complete result of one sweep.
#[derive(Debug, Clone)]
pub struct StatisticsReport {
    /// The executed config with the resolved master seed.
    pub config: RunConfig,
    /// Pilot estimate of the per-channel field variance.
    pub sigma2_hat: f64,
    /// Calibrated per-channel noise variance per quadrature.
    pub noise_variance: f64,
    /// Mean-square differential phase of the stimulus.
    pub acoustic_variance: f64,
    pub probe_positions_m: Vec<f64>,
    pub gauge_pair_m: (f64, f64),
    pub per_m: Vec<ChannelStatistics>,
    /// Per channel count, per realization; None marks a saturated fit.
    pub snr_samples: Vec<Vec<Option<f64>>>,
}

struct RealizationRecord {
    snrs: Vec<Option<f64>>,
    amps: Vec<Vec<f64>>,
}

/// Applies the configured per-realization uniform dB jitter to a base noise
/// variance; the multiplier depends only on (master, index).
pub fn jittered_noise_variance(run: &RunConfig, base: f64, master: u64, index: u64) -> f64 {
    if run.snr_intensity_jitter_db <= 0.0 {
        return base;
    }
    use rand::Rng;
    let u = rng::stream(master, DOMAIN_JITTER, index).gen::<f64>() - 0.5;
    base * 10f64.powf(u * run.snr_intensity_jitter_db / 10.0)
}

/// Mean-square differential stimulus phase: the elongation of the strained
/// span maps to phase at the carrier's round-trip rate. Channel offsets
/// shift the rate by parts in 1e6 and are ignored.
fn stimulus_phase_variance(run: &RunConfig) -> f64 {
    let rate = 4.0 * std::f64::consts::PI * run.refractive_index * run.optical_frequency_hz
        / SPEED_OF_LIGHT_M_PER_S;
    let peak = rate * run.strain_amplitude * run.perturbation_length_m;
    0.5 * peak * peak
}

fn pilot_sigma2(run: &RunConfig, master: u64, index: u64) -> Result<f64> {
    let seed = rng::derive_seed(master, DOMAIN_PILOT_FIELD, index);
    let field = ScattererField::generate(
        run.fiber_length_m,
        run.scatterer_density_per_m,
        run.refractive_index,
        seed,
    )?;
    let mut plan = run.channel_plan();
    plan.include_noise_slot = false;
    let trace = synthesize_backscatter(
        &field,
        &plan,
        &PerturbationSpec::none(),
        &run.sampling_grid(),
        1,
        0.0,
        seed,
    )?;
    estimate_sigma2(&trace)
}

fn run_realization(
    run: &RunConfig,
    layout: &ReadoutLayout,
    master: u64,
    noise_variance: f64,
    index: u64,
) -> Result<RealizationRecord> {
    let field = ScattererField::generate(
        run.fiber_length_m,
        run.scatterer_density_per_m,
        run.refractive_index,
        rng::derive_seed(master, DOMAIN_FIELD, index),
    )?;
    let noise_var = jittered_noise_variance(run, noise_variance, master, index);
    let grid = run.sampling_grid();
    let trace = synthesize_backscatter(
        &field,
        &run.channel_plan(),
        &run.perturbation(),
        &grid,
        run.num_pulses as usize,
        noise_var,
        rng::derive_seed(master, DOMAIN_NOISE, index),
    )?;

    let pulses = trace.num_pulses();
    let fast = trace.num_fast();
    let mut acc = vec![Complex64::new(0.0, 0.0); pulses * fast];
    let mut snrs = Vec::with_capacity(run.m_values.len());
    let mut amps = Vec::with_capacity(run.m_values.len());
    let mut next = 0usize;
    let max_m = *run.m_values.last().expect("validated non-empty") as usize;
    // Co-phased aggregation is additive channel by channel, so the nested
    // prefixes come from one running sum.
    for ch in 0..max_m {
        let single = dsp::rotated_vector_sum(&trace, &[ch])?;
        for k in 0..pulses {
            let row = single.pulse(k);
            let out = &mut acc[k * fast..(k + 1) * fast];
            for i in 0..fast {
                out[i] += row[i];
            }
        }
        if next < run.m_values.len() && run.m_values[next] as usize == ch + 1 {
            let agg = dsp::AggregatedTrace::from_samples(
                acc.clone(),
                pulses,
                fast,
                run.fast_time_step_s,
                grid.gate_start_m,
                run.refractive_index,
                run.repetition_period_s,
                (ch + 1) as f64 * noise_var,
            )?;
            let diff = dsp::differential_phase(&agg, layout.gauge_pair.0, layout.gauge_pair.1)?;
            let est =
                dsp::estimate_snr_phi(&diff, run.stimulus_frequency_hz, run.repetition_period_s)?;
            snrs.push(if est.saturated { None } else { Some(est.snr) });
            let probe_amps: Vec<f64> = layout
                .probe_indices
                .iter()
                .map(|&idx| {
                    let mut s = 0.0;
                    for k in 0..pulses {
                        s += acc[k * fast + idx].norm();
                    }
                    s / pulses as f64
                })
                .collect();
            amps.push(probe_amps);
            next += 1;
        }
    }
    Ok(RealizationRecord { snrs, amps })
}

fn stride_subsample(xs: &[f64], cap: usize) -> Vec<f64> {
    if xs.len() <= cap {
        return xs.to_vec();
    }
    let stride = xs.len().div_ceil(cap);
    xs.iter().step_by(stride).copied().collect()
}

/// Pilot calibration: the per-channel field variance averaged over
/// noiseless pilot fields, and the per-channel noise variance that puts the
/// mean return at the configured intensity SNR.
pub fn calibrate_noise(run: &RunConfig, master: u64) -> Result<(f64, f64)> {
    let pilots: Vec<f64> = (0..run.pilot_realizations as u64)
        .into_par_iter()
        .map(|i| pilot_sigma2(run, master, i))
        .collect::<Result<_>>()?;
    let sigma2_hat = stats::mean(&pilots)?;
    Ok((sigma2_hat, run.noise_variance_for(sigma2_hat)))
}

fn compute_sweep(run: &RunConfig, master: u64) -> Result<StatisticsReport> {
    let layout = readout_layout(run)?;
    let (sigma2_hat, noise_variance) = calibrate_noise(run, master)?;
    let acoustic_variance = stimulus_phase_variance(run);

    let records: Vec<RealizationRecord> = (0..run.realizations as u64)
        .into_par_iter()
        .map(|r| run_realization(run, &layout, master, noise_variance, r))
        .collect::<Result<_>>()?;

    let m_count = run.m_values.len();
    let mut snr_samples: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(records.len()); m_count];
    let mut pooled: Vec<Vec<f64>> =
        vec![Vec::with_capacity(records.len() * layout.probe_indices.len()); m_count];
    for rec in &records {
        for mi in 0..m_count {
            snr_samples[mi].push(rec.snrs[mi]);
            pooled[mi].extend_from_slice(&rec.amps[mi]);
        }
    }

    let mut per_m = Vec::with_capacity(m_count);
    let mut first_mean = None;
    for (mi, &m) in run.m_values.iter().enumerate() {
        let valid: Vec<f64> = snr_samples[mi].iter().flatten().copied().collect();
        let saturated = snr_samples[mi].len() - valid.len();
        let snr_mean = stats::mean(&valid)?;
        let snr_std = stats::std_dev(&valid)?;
        if mi == 0 && run.m_values[0] == 1 {
            first_mean = Some(snr_mean);
        }

        let amps = &pooled[mi];
        let mean_sq = amps.iter().map(|a| a * a).sum::<f64>() / amps.len() as f64;
        // E[A^2] = 2 M^2 b(sigma2), and b is linear in sigma2.
        let sigma2_matched = mean_sq / (2.0 * (m as f64) * (m as f64) * analytic::scale_b(m, 1.0)?);
        let ks_input = stride_subsample(amps, KS_SAMPLE_CAP);
        let ks = amplitude_distribution_test(&ks_input, m, sigma2_matched)?;
        let histogram = stats::histogram_freedman_diaconis(amps)?;
        let intensities: Vec<f64> = amps.iter().map(|a| a * a).collect();
        let contrast = dsp::speckle_contrast(&intensities)?;
        let mean_int = stats::mean(&intensities)?;
        let fade_fraction = intensities.iter().filter(|&&i| i < 0.1 * mean_int).count() as f64
            / intensities.len() as f64;

        let params = FadingParams::new(m, sigma2_hat, noise_variance, acoustic_variance)?;
        per_m.push(ChannelStatistics {
            channels: m,
            samples_used: valid.len(),
            saturated,
            snr_mean,
            snr_std,
            snr_cv: snr_std / snr_mean,
            gain_empirical: first_mean.map(|f| (snr_mean / f).sqrt()),
            model_mean_snr: analytic::mean_snr_phi_closed(&params)?,
            model_cv: analytic::coefficient_of_variation(m)?,
            model_gain: analytic::gain_k(m)?.exact,
            speckle_contrast: contrast,
            model_contrast: 1.0 / (m as f64).sqrt(),
            fade_fraction,
            ks,
            sigma2_matched,
            histogram,
        });
    }

    let mut config = run.clone();
    config.master_seed = Some(master);
    Ok(StatisticsReport {
        config,
        sigma2_hat,
        noise_variance,
        acoustic_variance,
        probe_positions_m: layout.probe_positions_m.clone(),
        gauge_pair_m: layout.gauge_pair_m,
        per_m,
        snr_samples,
    })
}

/// Runs a sweep. `workers` bounds the rayon pool; None uses the global
/// pool. Reports are byte-identical across worker counts.
pub fn run_sweep(
    cfg: &SweepConfig,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<StatisticsReport> {
    match workers {
        Some(w) => {
            if w == 0 {
                return Err(Error::Config("worker count must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a {w}-worker pool: {e}")))?;
            pool.install(|| compute_sweep(&cfg.run, master_seed))
        }
        None => compute_sweep(&cfg.run, master_seed),
    }
}

/// One post-sweep sanity verdict.
#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Set when the sweep is too small for the check to be meaningful;
    /// skipped checks count as passed.
    pub skipped: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn pass(name: &'static str, detail: String) -> Self {
        InvariantCheck {
            name,
            passed: true,
            skipped: false,
            detail,
        }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        InvariantCheck {
            name,
            passed: false,
            skipped: false,
            detail,
        }
    }
    fn skip(name: &'static str, detail: String) -> Self {
        InvariantCheck {
            name,
            passed: true,
            skipped: true,
            detail,
        }
    }
}

/// Statistical sanity checks on a finished sweep. Checks that need more
/// data than the sweep holds are reported as skipped, not failed.
pub fn invariant_checks(report: &StatisticsReport) -> Vec<InvariantCheck> {
    let mut out = Vec::new();
    let per_m = &report.per_m;
    let realizations = report.config.realizations;

    // Mean SNR must rise with channel count; tested pairwise on matched
    // realizations at 95% one-sided confidence.
    {
        let name = "mean_snr_increases_with_channels";
        let mut worst: Option<(u32, u32, f64, f64)> = None;
        for i in 0..per_m.len().saturating_sub(1) {
            let diffs: Vec<f64> = report.snr_samples[i]
                .iter()
                .zip(&report.snr_samples[i + 1])
                .filter_map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                })
                .collect();
            let mean = stats::mean(&diffs).unwrap_or(0.0);
            let se = stats::std_dev(&diffs)
                .map(|s| s / (diffs.len() as f64).sqrt())
                .unwrap_or(f64::INFINITY);
            let margin = mean / se;
            if worst.map_or(true, |w| margin < w.3) {
                worst = Some((per_m[i].channels, per_m[i + 1].channels, mean, margin));
            }
        }
        match worst {
            Some((a, b, mean, margin)) if margin <= 1.645 => out.push(InvariantCheck::fail(
                name,
                format!("M={a}->M={b}: mean gain {mean:.4} is only {margin:.2} SE above zero"),
            )),
            Some((a, b, _, margin)) => out.push(InvariantCheck::pass(
                name,
                format!("tightest pair M={a}->M={b} clears zero by {margin:.1} SE"),
            )),
            None => out.push(InvariantCheck::skip(name, "single channel count".into())),
        }
    }

    // SNR variability must shrink with channel count and track the model
    // curve; resolvable once the per-point CV error is well under the band.
    {
        let name = "snr_cv_decreases_with_channels";
        if realizations < 1000 {
            out.push(InvariantCheck::skip(
                name,
                format!("needs 1000 realizations, have {realizations}"),
            ));
        } else {
            let bad: Vec<String> = per_m
                .windows(2)
                .filter(|w| w[1].snr_cv >= w[0].snr_cv)
                .map(|w| {
                    format!(
                        "M={}..{}: {:.4} -> {:.4}",
                        w[0].channels, w[1].channels, w[0].snr_cv, w[1].snr_cv
                    )
                })
                .collect();
            if bad.is_empty() {
                out.push(InvariantCheck::pass(
                    name,
                    format!(
                        "{:.4} at M={} down to {:.4} at M={}",
                        per_m[0].snr_cv,
                        per_m[0].channels,
                        per_m.last().unwrap().snr_cv,
                        per_m.last().unwrap().channels
                    ),
                ));
            } else {
                out.push(InvariantCheck::fail(name, bad.join("; ")));
            }
        }
    }
    {
        let name = "snr_cv_tracks_model_curve";
        if realizations < 1000 {
            out.push(InvariantCheck::skip(
                name,
                format!("needs 1000 realizations, have {realizations}"),
            ));
        } else {
            let worst = per_m
                .iter()
                .map(|s| (s.channels, (s.snr_cv - s.model_cv).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if worst.1 <= 0.10 {
                out.push(InvariantCheck::pass(
                    name,
                    format!("worst |CV - model| = {:.4} at M={}", worst.1, worst.0),
                ));
            } else {
                out.push(InvariantCheck::fail(
                    name,
                    format!(
                        "|CV - model| = {:.4} at M={} exceeds 0.10",
                        worst.1, worst.0
                    ),
                ));
            }
        }
    }

    // Pooled probe intensities behave as M-fold averaged speckle.
    {
        let name = "speckle_contrast_tracks_model";
        let pool = per_m.first().map_or(0, |s| s.histogram.total()) as usize;
        if pool < 3000 {
            out.push(InvariantCheck::skip(
                name,
                format!("needs 3000 pooled probes, have {pool}"),
            ));
        } else {
            let worst = per_m
                .iter()
                .map(|s| (s.channels, (s.speckle_contrast - s.model_contrast).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if worst.1 <= 0.05 {
                out.push(InvariantCheck::pass(
                    name,
                    format!("worst |contrast - model| = {:.4} at M={}", worst.1, worst.0),
                ));
            } else {
                out.push(InvariantCheck::fail(
                    name,
                    format!(
                        "|contrast - model| = {:.4} at M={} exceeds 0.05",
                        worst.1, worst.0
                    ),
                ));
            }
        }
    }

    // Aggregate amplitudes follow the model family at the 1% level.
    {
        let name = "amplitude_law_holds_at_1_percent";
        let worst = per_m
            .iter()
            .map(|s| (s.channels, s.ks.p_value))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if worst.1 > 0.01 {
            out.push(InvariantCheck::pass(
                name,
                format!("smallest p = {:.3} at M={}", worst.1, worst.0),
            ));
        } else {
            out.push(InvariantCheck::fail(
                name,
                format!("p = {:.4} at M={} is at or below 0.01", worst.1, worst.0),
            ));
        }
    }

    // Mean SNR sits on the closed-form curve built from the pilot
    // calibration.
    {
        let name = "mean_snr_tracks_model_curve";
        if realizations < 1000 {
            out.push(InvariantCheck::skip(
                name,
                format!("needs 1000 realizations, have {realizations}"),
            ));
        } else {
            let worst = per_m
                .iter()
                .map(|s| (s.channels, (s.snr_mean / s.model_mean_snr - 1.0).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if worst.1 <= 0.10 {
                out.push(InvariantCheck::pass(
                    name,
                    format!("worst relative error {:.3} at M={}", worst.1, worst.0),
                ));
            } else {
                out.push(InvariantCheck::fail(
                    name,
                    format!(
                        "mean SNR off the model by {:.3} at M={}, band is 0.10",
                        worst.1, worst.0
                    ),
                ));
            }
        }
    }

    // Deep fades must not become more common as channels are added.
    {
        let name = "fade_fraction_never_grows";
        let n = per_m.first().map_or(0, |s| s.histogram.total()) as f64;
        let bad: Vec<String> = per_m
            .windows(2)
            .filter(|w| {
                let slack =
                    2.0 * (w[0].fade_fraction * (1.0 - w[0].fade_fraction) / n).sqrt() + 1.0 / n;
                w[1].fade_fraction > w[0].fade_fraction + slack
            })
            .map(|w| {
                format!(
                    "M={}..{}: {:.4} -> {:.4}",
                    w[0].channels, w[1].channels, w[0].fade_fraction, w[1].fade_fraction
                )
            })
            .collect();
        if bad.is_empty() {
            out.push(InvariantCheck::pass(
                name,
                format!(
                    "{:.4} at M={} down to {:.4} at M={}",
                    per_m[0].fade_fraction,
                    per_m[0].channels,
                    per_m.last().unwrap().fade_fraction,
                    per_m.last().unwrap().channels
                ),
            ));
        } else {
            out.push(InvariantCheck::fail(name, bad.join("; ")));
        }
    }

    out
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the report as CSV plus a re-parseable manifest and the check
/// verdicts. Output depends only on the report contents.
pub fn emit_report(report: &StatisticsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut summary = String::from(
        "channels,samples_used,saturated,snr_mean,snr_std,snr_cv,gain_empirical,\
         model_mean_snr,model_cv,model_gain,speckle_contrast,model_contrast,\
         fade_fraction,ks_statistic,ks_p_value,ks_n,sigma2_matched\n",
    );
    for s in &report.per_m {
        let gain = s.gain_empirical.map_or(String::new(), |g| format!("{g}"));
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.channels,
            s.samples_used,
            s.saturated,
            s.snr_mean,
            s.snr_std,
            s.snr_cv,
            gain,
            s.model_mean_snr,
            s.model_cv,
            s.model_gain,
            s.speckle_contrast,
            s.model_contrast,
            s.fade_fraction,
            s.ks.statistic,
            s.ks.p_value,
            s.ks.n,
            s.sigma2_matched,
        );
    }
    written.push(write_file(dir, "summary.csv", &summary)?);

    let max_m = *report.config.m_values.last().expect("validated non-empty");
    let params = FadingParams::new(
        1,
        report.sigma2_hat,
        report.noise_variance,
        report.acoustic_variance,
    )?;
    let curves = analytic::AnalyticCurves::tabulate(&params, max_m)?;
    let mut curves_text = Vec::new();
    curves
        .write_csv(&mut curves_text)
        .map_err(|e| Error::io(dir, e))?;
    let curves_text = String::from_utf8(curves_text).expect("ascii csv");
    written.push(write_file(dir, "curves.csv", &curves_text)?);

    let mut hist = String::from("channels,bin_low,bin_high,count,density,model_density\n");
    for s in &report.per_m {
        for (i, &count) in s.histogram.counts.iter().enumerate() {
            let lo = s.histogram.edges[i];
            let hi = s.histogram.edges[i + 1];
            let mid = 0.5 * (lo + hi);
            let model = analytic::rayleigh_sum_pdf(mid, s.channels, s.sigma2_matched)?;
            let _ = writeln!(
                hist,
                "{},{},{},{},{},{}",
                s.channels,
                lo,
                hi,
                count,
                s.histogram.density(i),
                model
            );
        }
    }
    written.push(write_file(dir, "histograms.csv", &hist)?);

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# sweep manifest");
    let _ = writeln!(manifest, "# version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "# sigma2_hat: {}", report.sigma2_hat);
    let _ = writeln!(manifest, "# noise_variance: {}", report.noise_variance);
    let _ = writeln!(
        manifest,
        "# acoustic_variance: {}",
        report.acoustic_variance
    );
    let _ = writeln!(
        manifest,
        "# probe_positions_m: {}",
        report
            .probe_positions_m
            .iter()
            .map(|p| format!("{p:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let _ = writeln!(
        manifest,
        "# gauge_pair_m: {:.3} {:.3}",
        report.gauge_pair_m.0, report.gauge_pair_m.1
    );
    let _ = writeln!(manifest, "# ks_sample_cap: {KS_SAMPLE_CAP}");
    let mut body = Vec::new();
    report
        .config
        .write_canonical(&mut body)
        .map_err(|e| Error::io(dir, e))?;
    manifest.push_str(&String::from_utf8(body).expect("ascii config"));
    written.push(write_file(dir, "manifest.txt", &manifest)?);

    let mut checks = String::new();
    for c in invariant_checks(report) {
        let verdict = if c.skipped {
            "SKIP"
        } else if c.passed {
            "PASS"
        } else {
            "FAIL"
        };
        let _ = writeln!(checks, "{verdict} {}: {}", c.name, c.detail);
    }
    written.push(write_file(dir, "checks.txt", &checks)?);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn desk() -> RunConfig {
        RunConfig {
            gate_start_m: Some(80.0),
            gate_end_m: Some(170.0),
            ..RunConfig::default()
        }
    }

    #[test]
    fn desk_layout_probes_avoid_the_strained_span() {
        let run = desk();
        let layout = readout_layout(&run).unwrap();
        assert!(layout.probe_indices.len() >= 3);
        let pert = run.perturbation();
        let footprint = SPEED_OF_LIGHT_M_PER_S * run.pulse_width_s / (2.0 * run.refractive_index);
        for (i, &z) in layout.probe_positions_m.iter().enumerate() {
            // Scatterers past the span are dragged along by its elongation,
            // so every probe must sit strictly ahead of it.
            assert!(
                z < pert.region_start_m,
                "probe {i} at {z} m is not ahead of the strained span"
            );
            assert!(
                z >= footprint,
                "probe {i} window reaches past the launch end"
            );
        }
        // Probes see disjoint scatterer sets.
        for w in layout.probe_positions_m.windows(2) {
            assert!(w[1] - w[0] > footprint);
        }
        let (za, zb) = layout.gauge_pair_m;
        assert!(za <= pert.region_start_m);
        assert!(zb - footprint >= pert.region_end_m);
        assert_relative_eq!(zb - za, run.gauge_length_m, max_relative = 0.01);
    }

    #[test]
    fn layout_rejects_a_gauge_shorter_than_the_span() {
        let mut run = desk();
        run.gauge_length_m = 10.0;
        let err = readout_layout(&run).unwrap_err().to_string();
        assert!(err.contains("gauge"), "{err}");
    }

    #[test]
    fn sigma2_estimate_subtracts_the_known_noise_floor() {
        use crate::fiber::ChannelPlan;
        let plan = ChannelPlan {
            optical_frequency_hz: 193.4e12,
            base_shift_hz: 0.0,
            channel_spacing_hz: 0.0,
            num_channels: 1,
            pulse_width_s: 100e-9,
            repetition_period_s: 500e-6,
            include_noise_slot: false,
        };
        let samples = vec![Complex64::new(3.0, 4.0); 400];
        let trace = BackscatterTrace::from_raw(
            samples,
            None,
            1,
            4,
            100,
            plan,
            PerturbationSpec::none(),
            2e-9,
            0.0,
            1.5,
            100.0,
            1.468,
            None,
            0,
        );
        // |V|^2 = 25 everywhere: sigma2 = 25/2 - 1.5.
        assert_relative_eq!(estimate_sigma2(&trace).unwrap(), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn matched_variance_inverts_the_model_second_moment() {
        // The model second moment is E[A^2] = 2 M^2 b(sigma2), checked
        // against quadrature of x^2 f(x); the matcher must invert it.
        for (m, sigma2) in [(1u32, 0.6), (4, 1.3), (15, 0.011)] {
            let mean_sq = 2.0 * (m as f64).powi(2) * analytic::scale_b(m, sigma2).unwrap();
            let bound = analytic::amplitude_upper_bound(m, sigma2);
            let quad = crate::quad::integrate(
                |x| x * x * analytic::rayleigh_sum_pdf(x, m, sigma2).unwrap(),
                0.0,
                bound,
                1e-10,
            )
            .unwrap();
            assert_relative_eq!(quad.value, mean_sq, max_relative = 1e-7);
            let matched =
                mean_sq / (2.0 * (m as f64) * (m as f64) * analytic::scale_b(m, 1.0).unwrap());
            assert_relative_eq!(matched, sigma2, max_relative = 1e-12);
        }
    }

    #[test]
    fn rayleigh_draws_pass_the_single_channel_distribution_test() {
        use rand::Rng;
        let sigma2 = 0.7;
        let mut rng = crate::rng::stream(99, 1, 0);
        let samples: Vec<f64> = (0..2000)
            .map(|_| {
                let u: f64 = rng.gen::<f64>();
                (-2.0 * sigma2 * (1.0 - u).ln()).sqrt()
            })
            .collect();
        let ks = amplitude_distribution_test(&samples, 1, sigma2).unwrap();
        assert!(ks.p_value > 0.01, "p = {}", ks.p_value);
        assert_eq!(ks.n, 2000);
    }

    #[test]
    fn jitter_of_zero_leaves_the_noise_variance_alone() {
        let run = desk();
        assert_eq!(jittered_noise_variance(&run, 0.25, 7, 3), 0.25);
        let mut jittered = desk();
        jittered.snr_intensity_jitter_db = 2.0;
        let v = jittered_noise_variance(&jittered, 0.25, 7, 3);
        assert!(v > 0.25 / 10f64.powf(0.1) && v < 0.25 * 10f64.powf(0.1));
        // Same master and index give the same multiplier.
        assert_eq!(v, jittered_noise_variance(&jittered, 0.25, 7, 3));
    }

    #[test]
    fn stimulus_phase_variance_matches_a_hand_computation() {
        let mut run = desk();
        run.strain_amplitude = 2e-8;
        run.perturbation_length_m = 12.7;
        let rate = 4.0 * std::f64::consts::PI * 1.468 * 193.4e12 / SPEED_OF_LIGHT_M_PER_S;
        let peak = rate * 2e-8 * 12.7;
        assert_relative_eq!(
            stimulus_phase_variance(&run),
            0.5 * peak * peak,
            max_relative = 1e-15
        );
        // Desk numbers give a peak near 3 radians.
        assert!(peak > 2.5 && peak < 3.5, "peak = {peak}");
    }

    #[test]
    fn stride_subsample_respects_the_cap() {
        let xs: Vec<f64> = (0..10_001).map(|i| i as f64).collect();
        let s = stride_subsample(&xs, 4000);
        assert!(s.len() <= 4000, "{}", s.len());
        assert_eq!(s[0], 0.0);
        assert!(s.len() > 3000);
        let t = stride_subsample(&xs[..100], 4000);
        assert_eq!(t.len(), 100);
    }

    #[test]
    fn sweep_config_rejects_small_or_unstimulated_runs() {
        let mut run = desk();
        run.realizations = 10;
        assert!(SweepConfig::new(run).is_err());
        let mut run = desk();
        run.strain_amplitude = 0.0;
        assert!(SweepConfig::new(run).is_err());
        let mut run = desk();
        run.num_pulses = 20;
        run.realizations = 100;
        // 20 pulses at 500 us cover one period of 100 Hz.
        assert!(SweepConfig::new(run).is_err());
    }

    #[test]
    fn sweep_config_rejects_stimulus_at_a_reference_null() {
        // 2e-8 strain over a 10 m span at 193.4 THz swings 2.38 rad, within
        // one percent of the first J0 zero.
        let mut run = desk();
        run.perturbation_length_m = 10.0;
        run.strain_amplitude = 2e-8;
        let err = SweepConfig::new(run).unwrap_err().to_string();
        assert!(err.contains("J0"), "{err}");

        let mut run = desk();
        run.perturbation_length_m = 10.0;
        run.strain_amplitude = 1e-8;
        assert!(SweepConfig::new(run).is_ok());
    }
}
