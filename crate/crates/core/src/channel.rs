//! Quantum-channel and laser impairments: fiber attenuation, combined TX+LO
//! laser phase noise as a Wiener process, and TX-LO frequency offset.
//!
//! The full TX-vs-LO beat (frequency offset and phase noise) is applied here
//! as an equivalent rotation of the signal relative to a phase-ideal LO; the
//! receiver never rotates anything itself.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::waveform::ComplexWaveform;

/// Fiber and laser-beat parameters.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSpec {
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    /// Combined TX + LO spectral linewidth (FWHM of the beat line) [Hz].
    pub linewidth_total_hz: f64,
    /// TX-LO carrier frequency offset (delta Omega / 2 pi) [Hz].
    pub freq_offset_hz: f64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.distance_km < 0.0 {
            return Err(Error::parameter("distance must be >= 0"));
        }
        if self.loss_db_per_km < 0.0 {
            return Err(Error::parameter("loss coefficient must be >= 0"));
        }
        if self.linewidth_total_hz < 0.0 {
            return Err(Error::parameter("linewidth must be >= 0"));
        }
        Ok(())
    }
}

/// Power transmittance `10^(-alpha d / 10)`; field amplitudes scale by its
/// square root.
pub fn fiber_transmittance(spec: &ChannelSpec) -> f64 {
    10f64.powf(-spec.loss_db_per_km * spec.distance_km / 10.0)
}

/// Wiener phase trace: `phi[k] = phi[k-1] + w[k]` with `w` i.i.d. Gaussian of
/// variance `2 pi linewidth / fs`, `phi[0] = 0`. The resulting beat line is
/// Lorentzian with FWHM equal to `linewidth_hz`.
pub fn phase_noise_trace(
    linewidth_hz: f64,
    n_samples: usize,
    sample_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if linewidth_hz < 0.0 {
        return Err(Error::parameter("linewidth must be >= 0"));
    }
    if linewidth_hz == 0.0 {
        return Ok(vec![0.0; n_samples]);
    }
    let sigma = (2.0 * PI * linewidth_hz / sample_rate).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::parameter(e.to_string()))?;
    let mut phi = Vec::with_capacity(n_samples);
    let mut acc = 0.0;
    for _ in 0..n_samples {
        phi.push(acc);
        acc += normal.sample(rng);
    }
    Ok(phi)
}

/// Convenience wrapper building the RNG from a bare seed.
pub fn phase_noise_trace_seeded(
    linewidth_hz: f64,
    n_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    phase_noise_trace(linewidth_hz, n_samples, sample_rate, &mut rng)
}

/// Apply fiber loss and the TX-LO beat rotation:
/// `out[k] = in[k] * sqrt(T) * exp(j(2 pi df k / fs + phi[k]))`.
pub fn apply_channel(
    field: &ComplexWaveform,
    spec: &ChannelSpec,
    phase: &[f64],
) -> Result<ComplexWaveform> {
    spec.validate()?;
    if phase.len() != field.len() {
        return Err(Error::parameter(format!(
            "phase trace length {} does not match field length {}",
            phase.len(),
            field.len()
        )));
    }
    let amp = fiber_transmittance(spec).sqrt();
    let omega = 2.0 * PI * spec.freq_offset_hz / field.sample_rate;
    let samples = field
        .samples
        .iter()
        .zip(phase)
        .enumerate()
        .map(|(k, (&s, &phi))| {
            let (sin, cos) = (omega * k as f64 + phi).sin_cos();
            s * amp * Complex64::new(cos, sin)
        })
        .collect();
    Ok(ComplexWaveform {
        samples,
        sample_rate: field.sample_rate,
    })
}
