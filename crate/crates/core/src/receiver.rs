//! RF heterodyne front end: one balanced photodetector behind a symmetric
//! beam splitter, with shot noise from the strong LO, NEP-referred
//! electronic noise, a single-pole detector bandwidth, the ADC, and the
//! optical-switch calibration paths.
//!
//! The LO here is phase-ideal: every beat impairment (frequency offset,
//! laser phase noise) has already been applied to the signal by the channel
//! stage, so the balanced photocurrent is simply the real part of the field
//! scaled by the beat gain.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::waveform::{quantize_uniform_real, ComplexWaveform};
use crate::{photon_energy, Q_E};

/// Detector chain parameters.
#[derive(Debug, Clone, Copy)]
pub struct DetectorSpec {
    /// Photodiode responsivity [A/W].
    pub responsivity: f64,
    /// Noise equivalent power [W/sqrt(Hz)].
    pub nep: f64,
    /// Transimpedance gain [V/A].
    pub tia_gain: f64,
    /// Detector -3 dB bandwidth, modeled as a single pole [Hz].
    pub bandwidth_hz: f64,
    pub adc_bits: u32,
    pub adc_full_scale: f64,
    pub lo_power_w: f64,
    /// Optical efficiency in front of the photodiode, applied as a field
    /// loss sqrt(eta). The photodiode quantum efficiency implied by the
    /// responsivity comes on top of this; see
    /// [`DetectorSpec::total_detection_efficiency`].
    pub efficiency_eta: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.responsivity > 0.0
            && self.nep >= 0.0
            && self.tia_gain > 0.0
            && self.bandwidth_hz > 0.0
            && self.lo_power_w > 0.0)
        {
            return Err(Error::parameter("detector parameters must be positive"));
        }
        if !(self.efficiency_eta > 0.0 && self.efficiency_eta <= 1.0) {
            return Err(Error::parameter("efficiency must be in (0, 1]"));
        }
        if self.adc_bits == 0 {
            return Err(Error::parameter("ADC resolution must be >= 1 bit"));
        }
        if !(self.adc_full_scale > 0.0) {
            return Err(Error::parameter("ADC full scale must be > 0"));
        }
        Ok(())
    }

    /// Quantum efficiency implied by the responsivity at this wavelength:
    /// `R E_ph / q` (0.80 for 1 A/W at 1550 nm).
    pub fn pd_quantum_efficiency(&self, wavelength_m: f64) -> f64 {
        self.responsivity * photon_energy(wavelength_m) / Q_E
    }

    /// Calibrated total detection efficiency: optics loss times the
    /// photodiode quantum efficiency. This is the `eta` used by the
    /// parameter-estimation formulas.
    pub fn total_detection_efficiency(&self, wavelength_m: f64) -> f64 {
        self.efficiency_eta * self.pd_quantum_efficiency(wavelength_m)
    }
}

/// Electronic-noise and shot-noise variances measured through the two
/// optical-switch configurations, plus the resulting shot-noise-unit scale.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationRecord {
    /// Variance with LO and signal both off.
    pub v_electronic: f64,
    /// Variance with LO on, signal off.
    pub v_shot_plus_electronic: f64,
    /// Difference of the two (the vacuum level).
    pub v_shot: f64,
    /// Multiply raw variances by this to express them in SNU.
    pub snu_scale: f64,
}

impl CalibrationRecord {
    /// Electronic noise in shot-noise units.
    pub fn v_en_snu(&self) -> f64 {
        self.v_electronic / self.v_shot
    }
}

/// Balanced heterodyne detection of a sampled field.
///
/// `signal = None` (or `lo_on = false`) realizes the optical-switch
/// calibration paths. With `noises = false` the deterministic beat alone is
/// returned (diagnostic use). Output is the TIA voltage after the detector
/// bandwidth filter; the waveform length is `n_samples` (must match the
/// signal length when a signal is given).
pub fn heterodyne_detect(
    signal: Option<&ComplexWaveform>,
    n_samples: usize,
    sample_rate: f64,
    spec: &DetectorSpec,
    lo_on: bool,
    noises: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.bandwidth_hz >= sample_rate / 2.0 {
        return Err(Error::parameter(
            "detector bandwidth must be below Nyquist at the simulation rate",
        ));
    }
    if let Some(s) = signal {
        if s.len() != n_samples {
            return Err(Error::parameter("signal length must equal n_samples"));
        }
        if s.sample_rate != sample_rate {
            return Err(Error::parameter("signal rate must equal sample_rate"));
        }
    }
    if n_samples == 0 {
        return Err(Error::parameter("n_samples must be > 0"));
    }

    // Strong-LO approximation: shot noise set by the LO power alone.
    let beat_gain = 2.0
        * spec.responsivity
        * (spec.efficiency_eta * spec.lo_power_w).sqrt();
    let sigma_shot = if lo_on && noises {
        (Q_E * spec.responsivity * spec.lo_power_w * sample_rate).sqrt()
    } else {
        0.0
    };
    let sigma_elec = if noises {
        spec.nep * spec.responsivity * (sample_rate / 2.0).sqrt()
    } else {
        0.0
    };
    let shot_dist = Normal::new(0.0, sigma_shot).map_err(|e| Error::parameter(e.to_string()))?;
    let elec_dist = Normal::new(0.0, sigma_elec).map_err(|e| Error::parameter(e.to_string()))?;

    let mut v = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut i = 0.0;
        if lo_on {
            if let Some(s) = signal {
                i += beat_gain * s.samples[k].re;
            }
        }
        if sigma_shot > 0.0 {
            i += shot_dist.sample(rng);
        }
        if sigma_elec > 0.0 {
            i += elec_dist.sample(rng);
        }
        v.push(i * spec.tia_gain);
    }
    detector_lowpass(&mut v, spec.bandwidth_hz, sample_rate);
    Ok(v)
}

/// Single-pole low-pass (bilinear transform with prewarping, so the -3 dB
/// point lands exactly on `bandwidth_hz`), applied in place.
pub fn detector_lowpass(x: &mut [f64], bandwidth_hz: f64, sample_rate: f64) {
    let c = (PI * bandwidth_hz / sample_rate).tan();
    let b = c / (1.0 + c);
    let a = (1.0 - c) / (1.0 + c);
    let mut prev_x = 0.0;
    let mut prev_y = 0.0;
    for v in x.iter_mut() {
        let y = b * (*v + prev_x) + a * prev_y;
        prev_x = *v;
        prev_y = y;
        *v = y;
    }
}

/// White-noise power gain of [`detector_lowpass`]: sum of squared impulse
/// response, `c / (1 + c)` with `c = tan(pi bw / fs)`.
pub fn lowpass_noise_gain(bandwidth_hz: f64, sample_rate: f64) -> f64 {
    let c = (PI * bandwidth_hz / sample_rate).tan();
    c / (1.0 + c)
}

/// Digitize a voltage waveform with the detector's ADC (mid-rise quantizer with
/// saturation, same contract as the DAC).
pub fn adc_digitize(v: &[f64], spec: &DetectorSpec) -> Result<Vec<f64>> {
    quantize_uniform_real(v, spec.adc_bits, spec.adc_full_scale)
}

/// ADC full scale from a representative analog capture: four times its RMS.
pub fn auto_range(capture: &[f64]) -> f64 {
    let rms = (capture.iter().map(|v| v * v).sum::<f64>() / capture.len() as f64).sqrt();
    4.0 * rms
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Run the two optical-switch calibration captures (LO off / LO on, signal
/// off in both), map each through `process` (identity for raw-ADC-domain
/// records; the receiver DSP chain for symbol-domain records), and build the
/// [`CalibrationRecord`] from the output variances.
pub fn run_calibration(
    spec: &DetectorSpec,
    sample_rate: f64,
    n_samples: usize,
    rng_elec: &mut ChaCha8Rng,
    rng_shot: &mut ChaCha8Rng,
    process: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<CalibrationRecord> {
    if n_samples < 1_000_000 {
        return Err(Error::parameter(
            "calibration needs at least 1e6 samples for <1% variance error",
        ));
    }
    run_calibration_unchecked(spec, sample_rate, n_samples, rng_elec, rng_shot, process)
}

/// [`run_calibration`] without the sample-count gate, for callers that
/// control precision through ensemble averaging (per-copy calibration).
pub fn run_calibration_unchecked(
    spec: &DetectorSpec,
    sample_rate: f64,
    n_samples: usize,
    rng_elec: &mut ChaCha8Rng,
    rng_shot: &mut ChaCha8Rng,
    process: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<CalibrationRecord> {
    let elec_raw = heterodyne_detect(None, n_samples, sample_rate, spec, false, true, rng_elec)?;
    let elec = process(&adc_digitize(&elec_raw, spec)?)?;
    drop(elec_raw);
    let shot_raw = heterodyne_detect(None, n_samples, sample_rate, spec, true, true, rng_shot)?;
    let shot = process(&adc_digitize(&shot_raw, spec)?)?;
    drop(shot_raw);

    let v_electronic = variance(&elec);
    let v_shot_plus_electronic = variance(&shot);
    let v_shot = v_shot_plus_electronic - v_electronic;
    if v_shot <= 0.0 {
        return Err(Error::CalibrationFailure(format!(
            "vacuum level not resolved: shot+elec {v_shot_plus_electronic:.3e} <= elec {v_electronic:.3e}; LO power too low"
        )));
    }
    Ok(CalibrationRecord {
        v_electronic,
        v_shot_plus_electronic,
        v_shot,
        snu_scale: 1.0 / v_shot,
    })
}

/// Raw-ADC-domain calibration (identity processing).
pub fn run_calibration_raw(
    spec: &DetectorSpec,
    sample_rate: f64,
    n_samples: usize,
    rng_elec: &mut ChaCha8Rng,
    rng_shot: &mut ChaCha8Rng,
) -> Result<CalibrationRecord> {
    run_calibration(spec, sample_rate, n_samples, rng_elec, rng_shot, &|x| {
        Ok(x.to_vec())
    })
}
