//! Physical-layer simulation of a Gaussian-modulated CV-QKD link with RF
//! heterodyne detection and a locally generated LO synchronized through a
//! pilot tone (generated either electrically or optically).
//!
//! The crate is organized along the signal path:
//!
//! * [`waveform`] — sampled-waveform container and shared DSP primitives
//!   (RRC design, resampling, frequency shifting, quantization, Welch PSD).
//! * [`transmitter`] — Gaussian symbol generation, TX DSP, DAC model, the
//!   nested-MZM IQ modulator transfer function, VOA and power-meter model.
//! * [`channel`] — fiber loss, combined TX/LO laser phase noise (Wiener
//!   process) and carrier frequency offset.
//! * [`receiver`] — balanced heterodyne front end with shot noise, NEP/TIA
//!   electronic noise, detector bandwidth, ADC, and the optical-switch
//!   calibration paths.
//! * [`rxdsp`] — pilot isolation, carrier phase/frequency estimation with
//!   moving-average smoothing, downconversion, matched filtering and symbol
//!   decimation.
//! * [`estimation`] — SNU-referred parameter estimation (transmittance,
//!   excess noise) and the asymptotic reverse-reconciliation secret key
//!   rate (mutual information and Holevo bound).
//! * [`harness`] — run configuration, the multi-copy ensemble runner,
//!   parameter sweeps and CSV/PSD export.

// `!(x > 0.0)`-style guards are deliberate: they reject NaN parameters,
// which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod receiver;
pub mod rxdsp;
pub mod transmitter;
pub mod waveform;

pub use channel::ChannelSpec;
pub use error::{Error, Result};
pub use estimation::EstimationResult;
pub use harness::{RunConfig, SystemParams};
pub use receiver::{CalibrationRecord, DetectorSpec};
pub use transmitter::{IqModulatorSpec, PilotMode, SymbolBlock};
pub use waveform::{ComplexWaveform, RrcFilter, Spectrum};

/// Planck constant times speed of light [J·m].
pub const H_C: f64 = 6.626_070_15e-34 * 299_792_458.0;
/// Elementary charge [C].
pub const Q_E: f64 = 1.602_176_634e-19;

/// Photon energy at the given vacuum wavelength [J].
pub fn photon_energy(wavelength_m: f64) -> f64 {
    H_C / wavelength_m
}

/// dB to linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
