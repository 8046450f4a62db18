//! Binary container for backscatter traces.
//!
//! Layout, all little endian: an 8-byte magic/version, a fixed header with
//! the dimensions and acquisition parameters, then the sample payload as
//! interleaved re/im f32 pairs in channel-major (channel, pulse, fast)
//! order, followed by the noise-slot payload when present. Samples are
//! stored single precision; a round trip is exact only to f32.

use crate::error::{Error, Result};
use crate::fiber::{BackscatterTrace, ChannelPlan, PerturbationSpec};
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"FDLTRC";
const VERSION: u16 = 1;

/// Guard against absurd dimension fields in corrupt files.
const MAX_TOTAL_SAMPLES: u64 = 1 << 31;

pub fn write_trace(trace: &BackscatterTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let mut flags = 0u16;
    if trace.has_noise_slot() {
        flags |= 1;
    }
    if trace.field_seed.is_some() {
        flags |= 2;
    }
    w.write_all(&flags.to_le_bytes()).map_err(io_err)?;
    for dim in [
        trace.num_channels() as u32,
        trace.num_pulses() as u32,
        trace.num_fast() as u32,
    ] {
        w.write_all(&dim.to_le_bytes()).map_err(io_err)?;
    }
    let p = &trace.plan;
    let q = &trace.perturbation;
    for v in [
        p.optical_frequency_hz,
        p.base_shift_hz,
        p.channel_spacing_hz,
        p.pulse_width_s,
        p.repetition_period_s,
        trace.fast_time_step_s,
        trace.gate_start_m,
        trace.noise_variance,
        trace.fiber_length_m,
        trace.refractive_index,
        q.region_start_m,
        q.region_end_m,
        q.strain_amplitude,
        q.frequency_hz,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&trace.field_seed.unwrap_or(0).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&trace.noise_seed.to_le_bytes())
        .map_err(io_err)?;

    let mut write_payload = |samples: &[Complex64]| -> Result<()> {
        let mut buf = Vec::with_capacity(samples.len().min(1 << 16) * 8);
        for chunk in samples.chunks(1 << 13) {
            buf.clear();
            for s in chunk {
                buf.extend_from_slice(&(s.re as f32).to_le_bytes());
                buf.extend_from_slice(&(s.im as f32).to_le_bytes());
            }
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    };
    write_payload(trace.raw_samples())?;
    if let Some(slot) = trace.raw_noise_slot() {
        write_payload(slot)?;
    }
    Ok(())
}

struct HeaderReader<'a, R: Read> {
    r: &'a mut R,
    path: &'a Path,
}

impl<'a, R: Read> HeaderReader<'a, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "truncated file")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Header fields of a stored trace, without the payload.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub num_channels: u32,
    pub num_pulses: u32,
    pub num_fast: u32,
    pub has_noise_slot: bool,
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

impl std::fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "channels: {} ({} noise slot), pulses: {}, fast samples: {}",
            self.num_channels,
            if self.has_noise_slot { "with" } else { "no" },
            self.num_pulses,
            self.num_fast
        )?;
        writeln!(
            f,
            "probe: base {:.3} MHz + m * {:.3} MHz on {:.4} THz, pulse {:.1} ns, \
             repetition {:.1} us",
            self.plan.base_shift_hz / 1e6,
            self.plan.channel_spacing_hz / 1e6,
            self.plan.optical_frequency_hz / 1e12,
            self.plan.pulse_width_s * 1e9,
            self.plan.repetition_period_s * 1e6
        )?;
        writeln!(
            f,
            "fiber: {:.1} m at n = {:.4}, gate from {:.2} m, step {:.2} ns, \
             noise variance {:.4e}",
            self.fiber_length_m,
            self.refractive_index,
            self.gate_start_m,
            self.fast_time_step_s * 1e9,
            self.noise_variance
        )?;
        if self.perturbation.strain_amplitude > 0.0 {
            writeln!(
                f,
                "stimulus: strain {:.3e} at {:.1} Hz on [{:.2}, {:.2}] m",
                self.perturbation.strain_amplitude,
                self.perturbation.frequency_hz,
                self.perturbation.region_start_m,
                self.perturbation.region_end_m
            )?;
        } else {
            writeln!(f, "stimulus: none")?;
        }
        match self.field_seed {
            Some(s) => writeln!(f, "seeds: field {s}, noise {}", self.noise_seed),
            None => writeln!(f, "seeds: constructed field, noise {}", self.noise_seed),
        }
    }
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<TraceSummary> {
    let mut h = HeaderReader { r, path };
    let magic: [u8; 6] = h.bytes()?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic; not a trace file"));
    }
    let version = h.u16()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let flags = h.u16()?;
    let num_channels = h.u32()?;
    let num_pulses = h.u32()?;
    let num_fast = h.u32()?;
    let total = num_channels as u64 * num_pulses as u64 * num_fast as u64;
    if total == 0 || total > MAX_TOTAL_SAMPLES {
        return Err(Error::format(
            path,
            format!("implausible dimensions {num_channels} x {num_pulses} x {num_fast}"),
        ));
    }
    let optical_frequency_hz = h.f64()?;
    let base_shift_hz = h.f64()?;
    let channel_spacing_hz = h.f64()?;
    let pulse_width_s = h.f64()?;
    let repetition_period_s = h.f64()?;
    let fast_time_step_s = h.f64()?;
    let gate_start_m = h.f64()?;
    let noise_variance = h.f64()?;
    let fiber_length_m = h.f64()?;
    let refractive_index = h.f64()?;
    let region_start_m = h.f64()?;
    let region_end_m = h.f64()?;
    let strain_amplitude = h.f64()?;
    let frequency_hz = h.f64()?;
    let field_seed_raw = h.u64()?;
    let noise_seed = h.u64()?;
    Ok(TraceSummary {
        num_channels,
        num_pulses,
        num_fast,
        has_noise_slot: flags & 1 != 0,
        plan: ChannelPlan {
            optical_frequency_hz,
            base_shift_hz,
            channel_spacing_hz,
            num_channels,
            pulse_width_s,
            repetition_period_s,
            include_noise_slot: flags & 1 != 0,
        },
        perturbation: PerturbationSpec {
            region_start_m,
            region_end_m,
            strain_amplitude,
            frequency_hz,
        },
        fast_time_step_s,
        gate_start_m,
        noise_variance,
        fiber_length_m,
        refractive_index,
        field_seed: if flags & 2 != 0 {
            Some(field_seed_raw)
        } else {
            None
        },
        noise_seed,
    })
}

pub fn read_trace_summary(path: &Path) -> Result<TraceSummary> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header(&mut r, path)
}

pub fn read_trace(path: &Path) -> Result<BackscatterTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, path)?;
    let total =
        header.num_channels as usize * header.num_pulses as usize * header.num_fast as usize;
    let samples = read_payload(&mut r, path, total)?;
    let noise_slot = if header.has_noise_slot {
        Some(read_payload(
            &mut r,
            path,
            header.num_pulses as usize * header.num_fast as usize,
        )?)
    } else {
        None
    };
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => return Err(Error::io(path, e)),
    }
    Ok(BackscatterTrace::from_raw(
        samples,
        noise_slot,
        header.num_channels as usize,
        header.num_pulses as usize,
        header.num_fast as usize,
        header.plan,
        header.perturbation,
        header.fast_time_step_s,
        header.gate_start_m,
        header.noise_variance,
        header.fiber_length_m,
        header.refractive_index,
        header.field_seed,
        header.noise_seed,
    ))
}

fn read_payload<R: Read>(r: &mut R, path: &Path, count: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 8 << 10];
    let mut need = count * 8;
    while need > 0 {
        let take = buf.len().min(need);
        r.read_exact(&mut buf[..take]).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(path, "truncated payload")
            } else {
                Error::io(path, e)
            }
        })?;
        for pair in buf[..take].chunks_exact(8) {
            let re = f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]);
            let im = f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]);
            out.push(Complex64::new(re as f64, im as f64));
        }
        need -= take;
    }
    Ok(out)
}

/// Per-channel slow-time mean amplitude at every gate position, a compact
/// text view of a trace.
pub fn write_channel_amplitude_csv<W: Write>(
    trace: &BackscatterTrace,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "channel,position_m,mean_amplitude")?;
    for m in 0..trace.num_channels() {
        for i in 0..trace.num_fast() {
            let mut acc = 0.0;
            for k in 0..trace.num_pulses() {
                acc += trace.sample(m, k, i).norm();
            }
            writeln!(
                w,
                "{},{:.6},{:.9e}",
                m,
                trace.position_m(i),
                acc / trace.num_pulses() as f64
            )?;
        }
    }
    Ok(())
}
