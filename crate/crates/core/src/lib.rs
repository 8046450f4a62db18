//! Simulation and analysis toolkit for coherent-backscatter fiber sensing
//! with frequency-diversity fading suppression.
//!
//! The crate has three layers. [`analytic`] carries the closed-form
//! statistics of an M-channel co-phased sum over a Rayleigh-faded medium:
//! the aggregate amplitude density, the mean phase SNR, the diversity gain
//! and the coefficient of variation, each with an independent quadrature
//! route for cross-checking. [`fiber`] synthesizes the complex baseband
//! return of a frozen one-dimensional scatterer field probed by a train of
//! frequency-shifted pulses, with a harmonic strain stimulus and additive
//! receiver noise. [`dsp`] recovers differential phase from the synthetic
//! returns (co-phased channel aggregation, unwrapping, gauge differencing)
//! and estimates per-realization phase SNR against a known stimulus.
//!
//! [`harness`] ties the layers into a reproducible Monte Carlo sweep over
//! channel counts and emits CSV reports; [`config`] and [`trace_io`] hold
//! the run-file and trace-container formats shared by the command-line
//! front end.

pub mod analytic;
pub mod config;
pub mod dsp;
pub mod error;
pub mod fiber;
pub mod harness;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stats;
pub mod trace_io;

pub use error::{Error, Result};
