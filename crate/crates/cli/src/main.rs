//! Command-line front end: analytic curve tables, single-shot synthetic
//! interrogations, Monte Carlo sweeps, and trace-file inspection.
//!
//! Exit codes: 0 success, 2 bad configuration or usage, 3 I/O failure,
//! 4 numeric/internal failure or a failed statistical check.

use clap::{Parser, Subcommand};
use fadelab_core::analytic::{AnalyticCurves, FadingParams};
use fadelab_core::config::RunConfig;
use fadelab_core::error::{Error, Result};
use fadelab_core::fiber::{synthesize_backscatter, ScattererField};
use fadelab_core::{dsp, harness, rng, trace_io};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Phase SNR at or above which a stimulus counts as detected in the
/// single-shot summary.
const DETECTION_SNR: f64 = 4.0;

#[derive(Parser)]
#[command(
    name = "fadelab",
    about = "Coherent-backscatter fiber sensing simulator with frequency-diversity aggregation",
    version
)]
struct Cli {
    /// Print extra progress detail to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the closed-form fading statistics against channel count.
    Analytic {
        /// Largest channel count to tabulate.
        #[arg(long, default_value_t = 15)]
        m_max: u32,
        /// Per-channel field variance (per quadrature).
        #[arg(long, default_value_t = 1.0)]
        field_variance: f64,
        /// Per-channel additive noise variance (per quadrature).
        #[arg(long, default_value_t = 0.01)]
        noise_variance: f64,
        /// Mean-square differential stimulus phase.
        #[arg(long, default_value_t = 1.0)]
        acoustic_variance: f64,
        /// Directory to also write curves.csv into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize one interrogation and demodulate it.
    Simulate {
        /// Run configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "fadelab-out")]
        out: PathBuf,
        /// Master seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the raw trace container and the scatterer table.
        #[arg(long)]
        write_traces: bool,
    },
    /// Monte Carlo sweep over channel counts with CSV reports.
    Sweep {
        /// Run configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "fadelab-out")]
        out: PathBuf,
        /// Master seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count; defaults to one per CPU.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the header of a trace container.
    Inspect {
        /// Trace file written by `simulate --write-traces`.
        #[arg(long)]
        input: PathBuf,
        /// Also write per-channel mean amplitude profiles as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
}

/// Restore the default SIGPIPE disposition so that piping stdout into a
/// pager or `head` terminates the process quietly instead of panicking on
/// the first write after the reader exits.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 2,
                Error::Io { .. } => 3,
                _ => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analytic {
            m_max,
            field_variance,
            noise_variance,
            acoustic_variance,
            out,
        } => analytic_cmd(
            m_max,
            field_variance,
            noise_variance,
            acoustic_variance,
            out.as_deref(),
        ),
        Command::Simulate {
            config,
            out,
            seed,
            write_traces,
        } => simulate_cmd(config.as_deref(), &out, seed, write_traces, cli.verbose),
        Command::Sweep {
            config,
            out,
            seed,
            workers,
        } => sweep_cmd(config.as_deref(), &out, seed, workers, cli.verbose),
        Command::Inspect { input, csv_out } => inspect_cmd(&input, csv_out.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

/// Seed precedence: command line, then config file, then fresh entropy.
fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.or(cfg.master_seed).unwrap_or_else(rand::random)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn analytic_cmd(
    m_max: u32,
    field_variance: f64,
    noise_variance: f64,
    acoustic_variance: f64,
    out: Option<&Path>,
) -> Result<()> {
    let params = FadingParams::new(1, field_variance, noise_variance, acoustic_variance)?;
    let curves = AnalyticCurves::tabulate(&params, m_max)?;
    let mut text = Vec::new();
    curves
        .write_csv(&mut text)
        .map_err(|e| Error::io("stdout", e))?;
    let text = String::from_utf8(text).expect("ascii csv");
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("curves.csv");
        write_text(&path, &text)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate_cmd(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    write_traces: bool,
    verbose: bool,
) -> Result<()> {
    let run = load_config(config)?;
    let master = resolve_seed(seed, &run);
    println!("master seed: {master}");

    let (sigma2_hat, noise_variance) = harness::calibrate_noise(&run, master)?;
    let noise_var = harness::jittered_noise_variance(&run, noise_variance, master, 0);
    if verbose {
        eprintln!("calibrated field variance {sigma2_hat:.6e}, noise variance {noise_var:.6e}");
    }

    let field = ScattererField::generate(
        run.fiber_length_m,
        run.scatterer_density_per_m,
        run.refractive_index,
        rng::derive_seed(master, harness::DOMAIN_FIELD, 0),
    )?;
    let trace = synthesize_backscatter(
        &field,
        &run.channel_plan(),
        &run.perturbation(),
        &run.sampling_grid(),
        run.num_pulses as usize,
        noise_var,
        rng::derive_seed(master, harness::DOMAIN_NOISE, 0),
    )?;

    let all: Vec<usize> = (0..trace.num_channels()).collect();
    let agg = dsp::rotated_vector_sum(&trace, &all)?;
    let demod = dsp::demodulate_phase(&agg, run.gauge_length_m)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut profile = String::from("position_m,mean_amplitude\n");
    for (i, a) in demod.amplitude_profile.iter().enumerate() {
        let _ = writeln!(profile, "{},{}", agg.position_m(i), a);
    }
    write_text(&out.join("amplitude_profile.csv"), &profile)?;

    let mut pairs = String::from(
        "pair,start_m,end_m,snr,signal_variance,dominant_frequency_hz,power_fraction\n",
    );
    for (pi, (a, b)) in demod.pairs.iter().enumerate() {
        let series = &demod.diff_phase[pi];
        let est =
            dsp::estimate_snr_phi(series, run.stimulus_frequency_hz, run.repetition_period_s)?;
        let (freq, frac) =
            dsp::dominant_frequency(series, run.repetition_period_s).unwrap_or((0.0, 0.0));
        let _ = writeln!(
            pairs,
            "{},{},{},{},{},{},{}",
            pi,
            agg.position_m(*a),
            agg.position_m(*b),
            est.snr,
            est.signal_variance,
            freq,
            frac
        );
    }
    write_text(&out.join("pairs.csv"), &pairs)?;

    // The gauge pair straddling the strained span carries the detection
    // verdict.
    let layout = harness::readout_layout(&run)?;
    let diff = dsp::differential_phase(&agg, layout.gauge_pair.0, layout.gauge_pair.1)?;
    let est = dsp::estimate_snr_phi(&diff, run.stimulus_frequency_hz, run.repetition_period_s)?;
    let dominant = dsp::dominant_frequency(&diff, run.repetition_period_s);

    let mut diff_csv = String::from("pulse,time_s,phase_rad\n");
    for (k, p) in diff.iter().enumerate() {
        let _ = writeln!(
            diff_csv,
            "{},{},{}",
            k,
            k as f64 * run.repetition_period_s,
            p
        );
    }
    write_text(&out.join("diff_phase.csv"), &diff_csv)?;

    let detected = est.snr >= DETECTION_SNR;
    let mut summary = String::new();
    let _ = writeln!(summary, "master_seed: {master}");
    let _ = writeln!(summary, "channels: {}", run.num_channels);
    let _ = writeln!(summary, "sigma2_hat: {sigma2_hat:.6e}");
    let _ = writeln!(summary, "noise_variance: {noise_var:.6e}");
    let _ = writeln!(
        summary,
        "gauge_pair_m: {:.3} {:.3}",
        layout.gauge_pair_m.0, layout.gauge_pair_m.1
    );
    let _ = writeln!(summary, "snr_phi: {:.4}", est.snr);
    match dominant {
        Some((freq, frac)) => {
            let _ = writeln!(summary, "dominant_frequency_hz: {freq:.3}");
            let _ = writeln!(summary, "dominant_power_fraction: {frac:.4}");
        }
        None => {
            let _ = writeln!(summary, "dominant_frequency_hz: none");
        }
    }
    let _ = writeln!(
        summary,
        "stimulus_detected: {}",
        if detected { "yes" } else { "no" }
    );
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");

    if write_traces {
        let trace_path = out.join("trace.bin");
        trace_io::write_trace(&trace, &trace_path)?;
        let mut field_csv = Vec::new();
        field
            .write_csv(&mut field_csv)
            .map_err(|e| Error::io(out, e))?;
        write_text(
            &out.join("field.csv"),
            &String::from_utf8(field_csv).expect("ascii csv"),
        )?;
        if verbose {
            eprintln!("wrote {}", trace_path.display());
        }
    }
    Ok(())
}

fn sweep_cmd(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    verbose: bool,
) -> Result<()> {
    let run = load_config(config)?;
    let master = resolve_seed(seed, &run);
    println!("master seed: {master}");
    let sweep = harness::SweepConfig::new(run)?;
    if verbose {
        eprintln!(
            "sweep: {} realizations over M = {:?}",
            sweep.run.realizations, sweep.run.m_values
        );
    }
    let report = harness::run_sweep(&sweep, master, workers)?;
    let written = harness::emit_report(&report, out)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    let checks = harness::invariant_checks(&report);
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.skipped {
            "SKIP"
        } else if c.passed {
            "PASS"
        } else {
            failed.push(c.name);
            "FAIL"
        };
        println!("{verdict} {}: {}", c.name, c.detail);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "statistical checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn inspect_cmd(input: &Path, csv_out: Option<&Path>) -> Result<()> {
    let summary = trace_io::read_trace_summary(input)?;
    print!("{summary}");
    if let Some(csv_path) = csv_out {
        let trace = trace_io::read_trace(input)?;
        let mut text = Vec::new();
        trace_io::write_channel_amplitude_csv(&trace, &mut text)
            .map_err(|e| Error::io(csv_path, e))?;
        write_text(csv_path, &String::from_utf8(text).expect("ascii csv"))?;
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}
