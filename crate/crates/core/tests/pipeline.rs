//! Demodulation-chain checks: phase differencing, unwrap behavior, noise
//! transfer into phase, sinusoid fitting, and an end-to-end stimulus
//! recovery on a synthetic fiber.

use fadelab_core::dsp::{
    demodulate_phase, differential_phase, dominant_frequency, estimate_snr_phi, rotated_vector_sum,
    speckle_contrast, unwrap_phase, AggregatedTrace, MAX_SNR,
};
use fadelab_core::fiber::{
    synthesize_backscatter, ChannelPlan, PerturbationSpec, SamplingGrid, ScattererField,
};
use fadelab_core::{rng, special, stats};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 20260822;

fn synthetic_aggregate(samples: Vec<Complex64>, pulses: usize, fast: usize) -> AggregatedTrace {
    AggregatedTrace::from_samples(samples, pulses, fast, 4e-9, 0.0, 1.468, 5e-4, 0.01).unwrap()
}

#[test]
fn differential_phase_recovers_an_injected_ramp() {
    let pulses = 64usize;
    let fast = 3usize;
    let mut samples = vec![Complex64::new(0.0, 0.0); pulses * fast];
    for k in 0..pulses {
        let ramp = 0.07 * k as f64;
        samples[k * fast] = Complex64::from_polar(1.0, 0.3);
        samples[k * fast + 1] = Complex64::from_polar(2.0, -1.1);
        samples[k * fast + 2] = Complex64::from_polar(1.5, 0.3 + ramp);
    }
    let agg = synthetic_aggregate(samples, pulses, fast);
    let diff = differential_phase(&agg, 0, 2).unwrap();
    for (k, d) in diff.iter().enumerate() {
        assert!(
            (d - 0.07 * k as f64).abs() < 1e-12,
            "pulse {k}: {d} vs {}",
            0.07 * k as f64
        );
    }
}

proptest::proptest! {
    /// Wrapping a series into (-pi, pi] and unwrapping it again restores
    /// the original up to one shared 2 pi offset, as long as no step
    /// reaches pi.
    #[test]
    fn unwrap_inverts_wrapping_for_subcritical_steps(
        steps in proptest::collection::vec(-3.1f64..3.1, 1..60),
        start in -10.0f64..10.0,
    ) {
        let mut series = vec![start];
        for s in &steps {
            let last = *series.last().unwrap();
            series.push(last + s);
        }
        let wrapped: Vec<f64> = series
            .iter()
            .map(|&p| {
                let mut w = p.rem_euclid(2.0 * std::f64::consts::PI);
                if w > std::f64::consts::PI {
                    w -= 2.0 * std::f64::consts::PI;
                }
                w
            })
            .collect();
        let un = unwrap_phase(&wrapped);
        let offset = un[0] - series[0];
        let turns = offset / (2.0 * std::f64::consts::PI);
        proptest::prop_assert!((turns - turns.round()).abs() < 1e-9);
        for (u, s) in un.iter().zip(&series) {
            proptest::prop_assert!((u - s - offset).abs() < 1e-9);
        }
    }
}

#[test]
fn phase_noise_variance_transfers_as_inverse_point_snr() {
    let amplitude = 20.0;
    let noise_sd = 1.0;
    let pulses = 4000usize;
    let normal = Normal::new(0.0, noise_sd).unwrap();
    let mut r = rng::stream(SEED, 60, 0);
    let samples: Vec<Complex64> = (0..pulses)
        .map(|_| Complex64::new(amplitude + normal.sample(&mut r), normal.sample(&mut r)))
        .collect();
    let phases: Vec<f64> = samples.iter().map(|v| v.arg()).collect();
    let var = stats::variance(&phases).unwrap();
    let expected = noise_sd * noise_sd / (amplitude * amplitude);
    assert!(
        (var / expected - 1.0).abs() < 0.10,
        "phase variance {var} vs sigma^2/A^2 = {expected}"
    );
    assert!(stats::mean(&phases).unwrap().abs() < 4.0 * (expected / pulses as f64).sqrt());
}

#[test]
fn phase_noise_is_gaussian_at_high_point_snr() {
    let amplitude = 50.0;
    let noise_sd = 1.0;
    let pulses = 4000usize;
    let normal = Normal::new(0.0, noise_sd).unwrap();
    let mut r = rng::stream(SEED, 61, 0);
    let mut z: Vec<f64> = (0..pulses)
        .map(|_| {
            Complex64::new(amplitude + normal.sample(&mut r), normal.sample(&mut r)).arg()
                * amplitude
                / noise_sd
        })
        .collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let model: Vec<f64> = z.iter().map(|&x| special::normal_cdf(x)).collect();
    let ks = stats::ks_test_sorted(&z, &model).unwrap();
    assert!(
        ks.p_value > 0.05,
        "normalized phase noise rejected: D = {}, p = {}",
        ks.statistic,
        ks.p_value
    );
}

#[test]
fn snr_fit_recovers_an_injected_sinusoid() {
    let pulses = 600usize;
    let rep = 5e-4;
    let freq = 100.0;
    let (a, b, offset) = (0.8, -0.3, 2.0);
    let noise_sd = 0.05;
    let normal = Normal::new(0.0, noise_sd).unwrap();
    let mut r = rng::stream(SEED, 62, 0);
    let series: Vec<f64> = (0..pulses)
        .map(|k| {
            let w = 2.0 * std::f64::consts::PI * freq * rep * k as f64;
            a * w.sin() + b * w.cos() + offset + normal.sample(&mut r)
        })
        .collect();
    let est = estimate_snr_phi(&series, freq, rep).unwrap();
    assert!(!est.saturated);
    let signal = 0.5 * (a * a + b * b);
    assert!((est.signal_variance / signal - 1.0).abs() < 0.02);
    assert!((est.noise_variance / (noise_sd * noise_sd) - 1.0).abs() < 0.15);
    assert!((est.snr / (est.signal_variance / est.noise_variance) - 1.0).abs() < 1e-12);

    let (fpeak, fraction) = dominant_frequency(&series, rep).unwrap();
    assert!((fpeak - freq).abs() < 1e-9, "dominant bin at {fpeak}");
    assert!(fraction > 0.9);
}

#[test]
fn noiseless_sinusoid_saturates_the_snr() {
    let rep = 5e-4;
    let series: Vec<f64> = (0..400)
        .map(|k| (2.0 * std::f64::consts::PI * 100.0 * rep * k as f64).sin())
        .collect();
    let est = estimate_snr_phi(&series, 100.0, rep).unwrap();
    assert!(est.saturated);
    assert_eq!(est.snr, MAX_SNR);
}

#[test]
fn frozen_noiseless_fiber_has_constant_differential_phase() {
    let field = ScattererField::generate(80.0, 10.0, 1.468, 3).unwrap();
    let plan = ChannelPlan {
        optical_frequency_hz: 193.4e12,
        base_shift_hz: 500e6,
        channel_spacing_hz: 25e6,
        num_channels: 2,
        pulse_width_s: 100e-9,
        repetition_period_s: 500e-6,
        include_noise_slot: false,
    };
    let grid = SamplingGrid {
        fast_time_step_s: 4e-9,
        gate_start_m: 0.0,
        gate_end_m: 80.0,
    };
    let trace = synthesize_backscatter(&field, &plan, &PerturbationSpec::none(), &grid, 16, 0.0, 1)
        .unwrap();
    let agg = rotated_vector_sum(&trace, &[0, 1]).unwrap();
    let diff = differential_phase(&agg, 40, 120).unwrap();
    // Identical pulses make every slow-time sample bit-identical, so the
    // difference series is exactly constant.
    for d in &diff {
        assert_eq!(*d, diff[0]);
    }
}

#[test]
fn demodulation_tiles_the_gate_with_disjoint_gauges() {
    let field = ScattererField::generate(100.0, 10.0, 1.468, 5).unwrap();
    let plan = ChannelPlan {
        optical_frequency_hz: 193.4e12,
        base_shift_hz: 500e6,
        channel_spacing_hz: 25e6,
        num_channels: 1,
        pulse_width_s: 100e-9,
        repetition_period_s: 500e-6,
        include_noise_slot: false,
    };
    let grid = SamplingGrid {
        fast_time_step_s: 4e-9,
        gate_start_m: 0.0,
        gate_end_m: 100.0,
    };
    let trace =
        synthesize_backscatter(&field, &plan, &PerturbationSpec::none(), &grid, 12, 0.01, 8)
            .unwrap();
    let agg = rotated_vector_sum(&trace, &[0]).unwrap();
    let demod = demodulate_phase(&agg, 15.0).unwrap();
    assert!(!demod.pairs.is_empty());
    let mut prev_end = 0usize;
    for (i, &(a, b)) in demod.pairs.iter().enumerate() {
        assert_eq!(b - a, demod.gauge_samples);
        if i > 0 {
            assert!(a >= prev_end, "gauge sections overlap");
        }
        prev_end = b;
        assert_eq!(demod.diff_phase[i].len(), agg.num_pulses());
    }
    assert!((demod.effective_gauge_m - 15.0).abs() < agg.sample_pitch_m());
    assert_eq!(demod.amplitude_profile.len(), agg.num_fast());
    // The profile is the slow-time mean magnitude per fast sample.
    for &i in &[0usize, 17, 102] {
        let direct = (0..agg.num_pulses())
            .map(|k| agg.sample(k, i).norm())
            .sum::<f64>()
            / agg.num_pulses() as f64;
        assert!((demod.amplitude_profile[i] - direct).abs() < 1e-12);
    }
}

/// Full chain on a strained fiber: the differential phase across the span
/// oscillates at the stimulus frequency with amplitude set by the phase
/// rate times the elongation.
#[test]
fn stimulus_round_trips_through_the_full_chain() {
    let n = 1.468;
    let field = ScattererField::generate(60.0, 12.0, n, 21).unwrap();
    let plan = ChannelPlan {
        optical_frequency_hz: 193.4e12,
        base_shift_hz: 500e6,
        channel_spacing_hz: 25e6,
        num_channels: 3,
        pulse_width_s: 100e-9,
        repetition_period_s: 500e-6,
        include_noise_slot: false,
    };
    let pert = PerturbationSpec {
        region_start_m: 25.0,
        region_end_m: 31.0,
        strain_amplitude: 6e-9,
        frequency_hz: 100.0,
    };
    let grid = SamplingGrid {
        fast_time_step_s: 4e-9,
        gate_start_m: 0.0,
        gate_end_m: 60.0,
    };
    let pulses = 240usize;
    let trace = synthesize_backscatter(&field, &plan, &pert, &grid, pulses, 1e-4, 17).unwrap();
    let agg = rotated_vector_sum(&trace, &[0, 1, 2]).unwrap();
    let a = agg.fast_index_of(20.0).unwrap();
    let b = agg.fast_index_of(45.0).unwrap();
    let diff = differential_phase(&agg, a, b).unwrap();
    let est = estimate_snr_phi(&diff, pert.frequency_hz, plan.repetition_period_s).unwrap();
    assert!(est.snr > 1e3, "stimulus should dominate: snr = {}", est.snr);
    let beta = plan.displacement_phase_rate(1, n);
    let predicted_amp = beta * pert.strain_amplitude * pert.region_length_m();
    let fitted_amp = (2.0 * est.signal_variance).sqrt();
    assert!(
        (fitted_amp / predicted_amp - 1.0).abs() < 0.05,
        "fitted stimulus amplitude {fitted_amp} vs predicted {predicted_amp}"
    );
    let (fpeak, fraction) = dominant_frequency(&diff, plan.repetition_period_s).unwrap();
    assert!((fpeak - pert.frequency_hz).abs() < 1e-9);
    assert!(fraction > 0.95);
}

#[test]
fn speckle_contrast_reference_points() {
    assert!(speckle_contrast(&[]).is_err());
    let constant = vec![3.5; 100];
    assert!(speckle_contrast(&constant).unwrap().abs() < 1e-12);
    let mut r = rng::stream(SEED, 63, 0);
    let exp: Vec<f64> = (0..20000).map(|_| -(1.0 - r.gen::<f64>()).ln()).collect();
    let c = speckle_contrast(&exp).unwrap();
    assert!((c - 1.0).abs() < 0.03, "exponential intensity contrast {c}");
}
