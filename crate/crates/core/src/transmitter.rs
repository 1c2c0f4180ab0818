//! Transmitter: Gaussian symbol generation, TX DSP (pulse shaping,
//! single-sideband upconversion, optional electrical pilot), the DAC model,
//! the nested-MZM IQ modulator transfer function, and the VOA / inline
//! power-meter model that sets the quantum power level.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::waveform::{
    estimate_psd, fir_same, frequency_shift, upsample_zeros, ComplexWaveform, RrcFilter,
};
use crate::{db_to_linear, photon_energy};

/// Paired Gaussian quadrature symbol sequences at the symbol rate.
#[derive(Debug, Clone)]
pub struct SymbolBlock {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub symbol_rate: f64,
}

impl SymbolBlock {
    pub fn new(x: Vec<f64>, p: Vec<f64>, symbol_rate: f64) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::parameter("X and P must have equal length"));
        }
        if x.is_empty() {
            return Err(Error::parameter("symbol block must not be empty"));
        }
        if !(symbol_rate > 0.0) {
            return Err(Error::parameter("symbol rate must be > 0"));
        }
        Ok(Self { x, p, symbol_rate })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// X + jP as complex symbols.
    pub fn to_complex(&self) -> Vec<Complex64> {
        self.x
            .iter()
            .zip(&self.p)
            .map(|(&x, &p)| Complex64::new(x, p))
            .collect()
    }

    /// Concatenate `other` after `self` (equal symbol rates required).
    pub fn concat(&self, other: &SymbolBlock) -> Result<SymbolBlock> {
        if self.symbol_rate != other.symbol_rate {
            return Err(Error::parameter("symbol rate mismatch in concat"));
        }
        let mut x = self.x.clone();
        let mut p = self.p.clone();
        x.extend_from_slice(&other.x);
        p.extend_from_slice(&other.p);
        SymbolBlock::new(x, p, self.symbol_rate)
    }
}

/// Draw i.i.d. zero-mean Gaussian X and P with per-quadrature variance
/// `variance / 2`, so that `Var(X) + Var(P) = variance` before power
/// calibration.
pub fn generate_gaussian_symbols(
    n_sym: usize,
    variance: f64,
    symbol_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SymbolBlock> {
    if n_sym == 0 {
        return Err(Error::parameter("n_sym must be >= 1"));
    }
    if !(variance > 0.0) {
        return Err(Error::parameter("modulation variance must be > 0"));
    }
    let normal =
        Normal::new(0.0, (variance / 2.0).sqrt()).map_err(|e| Error::parameter(e.to_string()))?;
    let x = (0..n_sym).map(|_| normal.sample(rng)).collect();
    let p = (0..n_sym).map(|_| normal.sample(rng)).collect();
    SymbolBlock::new(x, p, symbol_rate)
}

/// Nested Mach-Zehnder IQ modulator parameters.
#[derive(Debug, Clone, Copy)]
pub struct IqModulatorSpec {
    pub v_pi: f64,
    pub extinction_ratio_db: f64,
    /// Bias voltage applied to both child MZMs.
    pub bias_v: f64,
    /// Multiplicative gain imbalance on the Q arm, in dB (0 dB = balanced).
    pub iq_imbalance_db: f64,
}

impl IqModulatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_pi > 0.0) {
            return Err(Error::parameter("V_pi must be > 0"));
        }
        if !(self.extinction_ratio_db > 0.0) {
            return Err(Error::parameter("extinction ratio must be > 0 dB"));
        }
        Ok(())
    }

    /// Interference imperfection `gamma = (sqrt(delta) - 1)/(sqrt(delta) + 1)`
    /// with `delta` the linear extinction ratio. 35 dB gives 0.96506; an
    /// infinite extinction ratio gives exactly 1.
    pub fn gamma(&self) -> f64 {
        if self.extinction_ratio_db.is_infinite() {
            return 1.0;
        }
        let delta = db_to_linear(self.extinction_ratio_db);
        (delta.sqrt() - 1.0) / (delta.sqrt() + 1.0)
    }
}

/// Pilot-tone generation scheme and TX frequency plan.
///
/// Electrical pilot: child MZMs at the null point (bias `V_pi`), pilot added
/// digitally at `f_pilot`. Optical pilot: bias at the quadrature point
/// (`V_pi / 2`), so the residual carrier itself is the pilot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PilotMode {
    Electrical { f_pilot_hz: f64, f_uc_hz: f64 },
    Optical { f_uc_hz: f64 },
}

impl PilotMode {
    pub fn f_uc_hz(&self) -> f64 {
        match *self {
            PilotMode::Electrical { f_uc_hz, .. } => f_uc_hz,
            PilotMode::Optical { f_uc_hz } => f_uc_hz,
        }
    }

    /// Pilot frequency in the TX complex baseband (0 for the optical carrier).
    pub fn f_pilot_tx_hz(&self) -> f64 {
        match *self {
            PilotMode::Electrical { f_pilot_hz, .. } => f_pilot_hz,
            PilotMode::Optical { .. } => 0.0,
        }
    }

    /// Canonical child-MZM bias for this mode.
    pub fn bias_voltage(&self, v_pi: f64) -> f64 {
        match self {
            PilotMode::Electrical { .. } => v_pi,
            PilotMode::Optical { .. } => v_pi / 2.0,
        }
    }

    /// Pilot and quantum bands must not overlap.
    pub fn validate(&self, symbol_rate: f64, roll_off: f64) -> Result<()> {
        let guard = (1.0 + roll_off) * symbol_rate / 2.0;
        let sep = (self.f_pilot_tx_hz() - self.f_uc_hz()).abs();
        if sep <= guard {
            return Err(Error::config(format!(
                "pilot/quantum separation {sep:.3e} Hz must exceed half the shaped bandwidth {guard:.3e} Hz"
            )));
        }
        Ok(())
    }
}

/// Output of [`tx_dsp`].
#[derive(Debug, Clone)]
pub struct TxDrive {
    /// Composite complex drive baseband (quantum signal plus any electrical
    /// pilot), in the same arbitrary units as the input symbols.
    pub baseband: ComplexWaveform,
    /// Mean power of the shaped quantum signal alone.
    pub quantum_power: f64,
}

/// Shape, upconvert and (for the electrical pilot) add the pilot tone.
///
/// The quantum symbols are zero-stuffed to `fs`, RRC-shaped, and upconverted
/// to `f_uc` with a complex exponential (inherently single-sideband at
/// complex baseband). In electrical-pilot mode a tone of power
/// `rho_linear x quantum power` is added at `f_pilot`. `quantum_power_ref`
/// overrides the measured quantum power as the pilot reference, which keeps
/// the pilot amplitude defined for modulation-zeroed calibration captures.
pub fn tx_dsp(
    symbols: &SymbolBlock,
    pilot: &PilotMode,
    rrc: &RrcFilter,
    sample_rate: f64,
    rho_db: f64,
    quantum_power_ref: Option<f64>,
) -> Result<TxDrive> {
    let factor_f = sample_rate / symbols.symbol_rate;
    let factor = factor_f.round() as usize;
    if factor == 0 || (factor_f - factor as f64).abs() > 1e-9 {
        return Err(Error::parameter(format!(
            "fs/R_s = {factor_f} must be a positive integer"
        )));
    }
    pilot.validate(symbols.symbol_rate, rrc.roll_off)?;

    let up = upsample_zeros(&symbols.to_complex(), factor, symbols.symbol_rate)?;
    let shaped = fir_same(&up, rrc.taps())?;
    let quantum = frequency_shift(&shaped, pilot.f_uc_hz())?;
    let quantum_power = quantum.mean_power();

    let baseband = match pilot {
        PilotMode::Optical { .. } => quantum,
        PilotMode::Electrical { f_pilot_hz, .. } => {
            let p_ref = quantum_power_ref.unwrap_or(quantum_power);
            let amp = (db_to_linear(rho_db) * p_ref).sqrt();
            let omega = 2.0 * PI * f_pilot_hz / sample_rate;
            let samples = quantum
                .samples
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    let (sin, cos) = (omega * k as f64).sin_cos();
                    s + Complex64::new(cos, sin) * amp
                })
                .collect();
            ComplexWaveform {
                samples,
                sample_rate,
            }
        }
    };
    Ok(TxDrive {
        baseband,
        quantum_power,
    })
}

/// Drive gain into the modulator's quasi-linear window, plus the DAC
/// full-scale derived from the same composite signal.
#[derive(Debug, Clone, Copy)]
pub struct DriveScaling {
    pub gain: f64,
    /// DAC full scale: `full_scale_sigmas` times the per-quadrature RMS of
    /// the scaled composite drive.
    pub dac_full_scale: f64,
}

/// Compute the drive gain for a composite baseband.
///
/// Electrical pilot: the composite 4-sigma point maps to `depth * V_pi`, so
/// a strong pilot consumes both modulation depth and DAC range. Optical
/// pilot: the quantum drive RMS is set to `2 V_pi / (pi sqrt(rho))`, which
/// makes the optical carrier-to-quantum power ratio equal `rho` at the
/// quadrature bias point.
pub fn drive_scaling(
    drive: &ComplexWaveform,
    pilot: &PilotMode,
    v_pi: f64,
    depth: f64,
    rho_db: f64,
    full_scale_sigmas: f64,
) -> Result<DriveScaling> {
    let sigma = (drive.mean_power() / 2.0).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateInput("all-zero drive waveform".into()));
    }
    let gain = match pilot {
        PilotMode::Electrical { .. } => depth * v_pi / (full_scale_sigmas * sigma),
        PilotMode::Optical { .. } => {
            let rho = db_to_linear(rho_db);
            2.0 * v_pi / (PI * rho.sqrt()) / sigma
        }
    };
    Ok(DriveScaling {
        gain,
        dac_full_scale: full_scale_sigmas * gain * sigma,
    })
}

/// Nested-MZM transfer function with unit CW input:
/// `E_out = (1/2) {(e^{j th1} + g e^{-j th1}) + j q (e^{j th2} + g e^{-j th2})}`
/// with `th_i = pi (V_i - V_bias) / (2 V_pi)` and `q` the Q-arm imbalance.
pub fn iq_modulate(
    v_rf1: &[f64],
    v_rf2: &[f64],
    sample_rate: f64,
    spec: &IqModulatorSpec,
) -> Result<ComplexWaveform> {
    spec.validate()?;
    if v_rf1.len() != v_rf2.len() {
        return Err(Error::parameter("drive waveforms must share length"));
    }
    if v_rf1.is_empty() {
        return Err(Error::parameter("drive waveforms must not be empty"));
    }
    let gamma = spec.gamma();
    let q_gain = 10f64.powf(spec.iq_imbalance_db / 20.0);
    let scale = PI / (2.0 * spec.v_pi);
    let samples = v_rf1
        .iter()
        .zip(v_rf2)
        .map(|(&v1, &v2)| {
            let arm_i = mzm_arm(scale * (v1 - spec.bias_v), gamma);
            let arm_q = mzm_arm(scale * (v2 - spec.bias_v), gamma);
            0.5 * (arm_i + Complex64::new(0.0, 1.0) * q_gain * arm_q)
        })
        .collect();
    ComplexWaveform::new(samples, sample_rate)
}

#[inline]
fn mzm_arm(theta: f64, gamma: f64) -> Complex64 {
    let (sin, cos) = theta.sin_cos();
    // e^{j th} + gamma e^{-j th}
    Complex64::new((1.0 + gamma) * cos, (1.0 - gamma) * sin)
}

/// One row of [`small_signal_check`].
#[derive(Debug, Clone, Copy)]
pub struct BiasSweepPoint {
    pub bias_v: f64,
    pub measured_power: f64,
    pub expected_power: f64,
}

/// Zero-drive bias sweep report.
#[derive(Debug, Clone)]
pub struct SmallSignalReport {
    pub points: Vec<BiasSweepPoint>,
    pub max_abs_error: f64,
}

/// Sweep the bias over `[0, 2 V_pi]` with zero drive and compare the
/// per-quadrature output power against `cos^2(0.5 pi V_bias / V_pi)`.
pub fn small_signal_check(spec: &IqModulatorSpec) -> Result<SmallSignalReport> {
    spec.validate()?;
    if spec.extinction_ratio_db < 30.0 {
        return Err(Error::parameter(
            "small-signal check expects extinction ratio >= 30 dB",
        ));
    }
    let gamma = spec.gamma();
    let mut points = Vec::with_capacity(201);
    let mut max_err = 0.0f64;
    for i in 0..=200 {
        let bias = 2.0 * spec.v_pi * i as f64 / 200.0;
        let theta = -PI * bias / (2.0 * spec.v_pi);
        let measured = (0.5 * mzm_arm(theta, gamma)).norm_sqr();
        let expected = (0.5 * PI * bias / spec.v_pi).cos().powi(2);
        max_err = max_err.max((measured - expected).abs());
        points.push(BiasSweepPoint {
            bias_v: bias,
            measured_power: measured,
            expected_power: expected,
        });
    }
    Ok(SmallSignalReport {
        points,
        max_abs_error: max_err,
    })
}

/// VOA plus inline power meter: scale the field so its mean optical power is
/// `P_POM = <n> (1 + rho) E_ph R_s` and report that power. After this call
/// the field samples are in sqrt-watt units.
pub fn apply_voa_and_meter(
    field: &ComplexWaveform,
    target_mean_photons: f64,
    rho_linear: f64,
    symbol_rate: f64,
    wavelength_m: f64,
) -> Result<(ComplexWaveform, f64)> {
    if !(target_mean_photons > 0.0) {
        return Err(Error::parameter("target mean photon number must be > 0"));
    }
    if rho_linear < 0.0 {
        return Err(Error::parameter("rho must be >= 0"));
    }
    let power_now = field.mean_power();
    if !(power_now > 0.0) {
        return Err(Error::DegenerateInput("zero-power field into VOA".into()));
    }
    let p_pom =
        target_mean_photons * (1.0 + rho_linear) * photon_energy(wavelength_m) * symbol_rate;
    let gain = (p_pom / power_now).sqrt();
    Ok((field.scaled(gain), p_pom))
}

/// Modulation variance from the inline power-meter reading:
/// `V_mod = 2 <n> = 2 P_POM / ((1 + rho) E_ph R_s)`.
pub fn calibrate_vmod(p_pom_w: f64, rho_linear: f64, e_ph_j: f64, symbol_rate: f64) -> f64 {
    2.0 * p_pom_w / ((1.0 + rho_linear) * e_ph_j * symbol_rate)
}

/// Pilot-to-quantum power ratio measured on the optical output spectrum.
///
/// The pilot is integrated over a narrow line window and the quantum signal
/// over its shaped band; the broadband floor (median PSD outside both bands)
/// is subtracted from each, giving a spectrum-analyzer-style reading:
/// discrete spurious lines inside the quantum band count against the ratio,
/// the quasi-white quantization floor does not.
pub fn measure_pilot_to_quantum_ratio(
    field: &ComplexWaveform,
    pilot_freq_hz: f64,
    quantum_center_hz: f64,
    quantum_half_width_hz: f64,
    segment_len: usize,
) -> Result<f64> {
    let spec = estimate_psd(field, segment_len)?;
    let line_half = (5.0 * spec.df).max(2.0e6);
    let pilot_band = (pilot_freq_hz - line_half, pilot_freq_hz + line_half);
    let quantum_band = (
        quantum_center_hz - quantum_half_width_hz,
        quantum_center_hz + quantum_half_width_hz,
    );
    let guard = 4.0 * line_half;
    let floor = spec.median_floor(&[
        (pilot_band.0 - guard, pilot_band.1 + guard),
        (quantum_band.0 - guard, quantum_band.1 + guard),
    ]);
    let pilot_power = (spec.band_power(pilot_band.0, pilot_band.1)
        - floor * (pilot_band.1 - pilot_band.0))
        .max(0.0);
    let quantum_power = (spec.band_power(quantum_band.0, quantum_band.1)
        - floor * (quantum_band.1 - quantum_band.0))
        .max(0.0);
    if quantum_power <= 0.0 {
        return Err(Error::DegenerateInput(
            "no quantum-band power above the spectral floor".into(),
        ));
    }
    Ok(pilot_power / quantum_power)
}

/// Power inside `center ± half_width` above the median floor measured
/// outside the given exclusion bands. Used for spur diagnostics.
pub fn band_power_above_floor(
    field: &ComplexWaveform,
    center_hz: f64,
    half_width_hz: f64,
    exclusions: &[(f64, f64)],
    segment_len: usize,
) -> Result<f64> {
    let spec = estimate_psd(field, segment_len)?;
    let floor = spec.median_floor(exclusions);
    Ok(
        (spec.band_power(center_hz - half_width_hz, center_hz + half_width_hz)
            - floor * 2.0 * half_width_hz)
            .max(0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::design_rrc;
    use rand::SeedableRng;

    const FS: f64 = 2.0e9;
    const RS: f64 = 1.0e8;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn mod_spec(er_db: f64, bias: f64) -> IqModulatorSpec {
        IqModulatorSpec {
            v_pi: 1.0,
            extinction_ratio_db: er_db,
            bias_v: bias,
            iq_imbalance_db: 0.0,
        }
    }

    #[test]
    fn gaussian_symbols_hit_requested_variance() {
        let mut r = rng(11);
        let block = generate_gaussian_symbols(1_000_000, 2.5, RS, &mut r).unwrap();
        let var: f64 =
            block.x.iter().chain(&block.p).map(|v| v * v).sum::<f64>() / block.len() as f64;
        assert!((var - 2.5).abs() < 0.025, "total variance {var}");
    }

    #[test]
    fn gaussian_symbols_deterministic_per_seed() {
        let a = generate_gaussian_symbols(64, 2.5, RS, &mut rng(7)).unwrap();
        let b = generate_gaussian_symbols(64, 2.5, RS, &mut rng(7)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn gaussian_symbols_reject_zero_variance() {
        assert!(generate_gaussian_symbols(10, 0.0, RS, &mut rng(1)).is_err());
    }

    #[test]
    fn gamma_for_35_db_extinction() {
        let spec = mod_spec(35.0, 1.0);
        let delta = 10f64.powf(3.5);
        let expected = (delta.sqrt() - 1.0) / (delta.sqrt() + 1.0);
        assert!((spec.gamma() - expected).abs() < 1e-15);
        assert!((spec.gamma() - 0.9650565).abs() < 1e-6);
    }

    #[test]
    fn null_point_zero_drive_leakage() {
        // Direct evaluation of the transfer function at the null point:
        // |E_out| = (1 - gamma)/sqrt(2), about 0.0247 at 35 dB.
        let spec = mod_spec(35.0, 1.0);
        let out = iq_modulate(&[0.0, 0.0], &[0.0, 0.0], FS, &spec).unwrap();
        let expected = (1.0 - spec.gamma()) / 2f64.sqrt();
        for s in &out.samples {
            assert!((s.norm() - expected).abs() < 1e-12);
        }
        assert!((expected - 0.0247).abs() < 1e-4);
    }

    #[test]
    fn quadrature_point_per_quadrature_power_is_half() {
        let spec = mod_spec(60.0, 0.5);
        let gamma = spec.gamma();
        let arm = mzm_arm(-PI * 0.5 / 2.0, gamma) * 0.5;
        assert!((arm.norm_sqr() - 0.5).abs() < 0.01 * 0.5, "{}", arm.norm_sqr());
    }

    #[test]
    fn full_transmission_with_perfect_extinction() {
        let spec = IqModulatorSpec {
            v_pi: 1.0,
            extinction_ratio_db: f64::INFINITY,
            bias_v: 0.0,
            iq_imbalance_db: 0.0,
        };
        assert_eq!(spec.gamma(), 1.0);
        let arm = mzm_arm(0.0, 1.0) * 0.5;
        assert_eq!(arm.norm_sqr(), 1.0);
    }

    #[test]
    fn output_magnitude_bounded_by_two_arm_sum() {
        // Supremum of |E_out| over all drives is sqrt(1 + gamma^2), within
        // 0.02% of (1 + gamma)/sqrt(2) at delta >= 35 dB.
        let spec = mod_spec(35.0, 0.37);
        let bound = (1.0 + spec.gamma()) / 2f64.sqrt() * 1.0002;
        let mut r = rng(3);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let v1: Vec<f64> = (0..20_000).map(|_| normal.sample(&mut r)).collect();
        let v2: Vec<f64> = (0..20_000).map(|_| normal.sample(&mut r)).collect();
        let out = iq_modulate(&v1, &v2, FS, &spec).unwrap();
        for s in &out.samples {
            assert!(s.norm() <= bound, "|E| = {} > {bound}", s.norm());
        }
    }

    #[test]
    fn modulate_rejects_mismatched_drives() {
        let spec = mod_spec(35.0, 1.0);
        assert!(iq_modulate(&[0.0, 0.0], &[0.0], FS, &spec).is_err());
    }

    #[test]
    fn small_signal_sweep_matches_cos_squared_law() {
        let report = small_signal_check(&mod_spec(60.0, 0.0)).unwrap();
        assert!(report.max_abs_error < 0.01, "max err {}", report.max_abs_error);
        // Spot values: bias 0 -> 1, V_pi/2 -> 1/2, V_pi -> ~0.
        let p0 = report.points.first().unwrap();
        assert!((p0.measured_power - 1.0).abs() < 0.01);
        let mid = &report.points[50];
        assert!((mid.measured_power - 0.5).abs() < 0.01);
        let null = &report.points[100];
        assert!(null.measured_power < 1e-5);
    }

    fn test_block(n: usize, seed: u64) -> SymbolBlock {
        generate_gaussian_symbols(n, 2.5, RS, &mut rng(seed)).unwrap()
    }

    #[test]
    fn op_mode_zero_symbols_give_zero_drive() {
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let zeros = SymbolBlock::new(vec![0.0; 64], vec![0.0; 64], RS).unwrap();
        let pilot = PilotMode::Optical { f_uc_hz: 4.0e8 };
        let drive = tx_dsp(&zeros, &pilot, &rrc, FS, 21.0, None).unwrap();
        assert!(drive.baseband.samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn ep_mode_zero_symbols_give_pure_pilot_tone() {
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let zeros = SymbolBlock::new(vec![0.0; 512], vec![0.0; 512], RS).unwrap();
        let pilot = PilotMode::Electrical {
            f_pilot_hz: 1.0e8,
            f_uc_hz: 5.0e8,
        };
        // rho = 0 dB with unit reference power -> unit-amplitude tone.
        let drive = tx_dsp(&zeros, &pilot, &rrc, FS, 0.0, Some(1.0)).unwrap();
        for s in &drive.baseband.samples {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        let spec = estimate_psd(&drive.baseband, 1 << 9).unwrap();
        let (peak, _) = spec.peak_in_band(0.0, 1e9).unwrap();
        assert!((peak - 1.0e8).abs() <= spec.df);
    }

    #[test]
    fn ep_pilot_to_quantum_ratio_matches_rho() {
        // PSD-integration oracle on the electrical composite at rho = 34 dB.
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let block = test_block(4096, 21);
        let pilot = PilotMode::Electrical {
            f_pilot_hz: 1.0e8,
            f_uc_hz: 5.0e8,
        };
        let drive = tx_dsp(&block, &pilot, &rrc, FS, 34.0, None).unwrap();
        let rho =
            measure_pilot_to_quantum_ratio(&drive.baseband, 1.0e8, 5.0e8, 82.5e6, 1 << 12).unwrap();
        let target = db_to_linear(34.0);
        assert!(
            (rho / target - 1.0).abs() < 0.02,
            "measured rho {rho} vs {target}"
        );
    }

    #[test]
    fn ep_band_overlap_rejected() {
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let block = test_block(64, 2);
        let pilot = PilotMode::Electrical {
            f_pilot_hz: 4.5e8,
            f_uc_hz: 5.0e8,
        };
        assert!(matches!(
            tx_dsp(&block, &pilot, &rrc, FS, 21.0, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn op_drive_scaling_sets_carrier_to_quantum_ratio() {
        // End-to-end optical check: the scaled OP drive through the
        // modulator yields a carrier/quantum ratio equal to rho within 0.2 dB.
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let block = test_block(8192, 5);
        let pilot = PilotMode::Optical { f_uc_hz: 4.0e8 };
        let rho_db = 25.0;
        let drive = tx_dsp(&block, &pilot, &rrc, FS, rho_db, None).unwrap();
        let scaling = drive_scaling(&drive.baseband, &pilot, 1.0, 0.15, rho_db, 4.0).unwrap();
        let scaled = drive.baseband.scaled(scaling.gain);
        let v1: Vec<f64> = scaled.samples.iter().map(|s| s.re).collect();
        let v2: Vec<f64> = scaled.samples.iter().map(|s| s.im).collect();
        let field = iq_modulate(&v1, &v2, FS, &mod_spec(35.0, 0.5)).unwrap();
        let rho_meas = measure_pilot_to_quantum_ratio(&field, 0.0, 4.0e8, 82.5e6, 1 << 12).unwrap();
        let err_db = 10.0 * (rho_meas / db_to_linear(rho_db)).log10();
        assert!(err_db.abs() < 0.2, "rho error {err_db} dB");
    }

    #[test]
    fn ep_drive_scaling_keeps_modulator_quasi_linear() {
        // Optical pilot/quantum ratio survives the modulator within 0.2 dB
        // when the composite 4-sigma point maps to 0.15 V_pi.
        let rrc = design_rrc(0.65, 20, 20).unwrap();
        let block = test_block(8192, 6);
        let pilot = PilotMode::Electrical {
            f_pilot_hz: 1.0e8,
            f_uc_hz: 5.0e8,
        };
        let rho_db = 34.0;
        let drive = tx_dsp(&block, &pilot, &rrc, FS, rho_db, None).unwrap();
        let scaling = drive_scaling(&drive.baseband, &pilot, 1.0, 0.15, rho_db, 4.0).unwrap();
        let scaled = drive.baseband.scaled(scaling.gain);
        let v1: Vec<f64> = scaled.samples.iter().map(|s| s.re).collect();
        let v2: Vec<f64> = scaled.samples.iter().map(|s| s.im).collect();
        let field = iq_modulate(&v1, &v2, FS, &mod_spec(35.0, 1.0)).unwrap();
        let rho_meas =
            measure_pilot_to_quantum_ratio(&field, 1.0e8, 5.0e8, 82.5e6, 1 << 12).unwrap();
        let err_db = 10.0 * (rho_meas / db_to_linear(rho_db)).log10();
        assert!(err_db.abs() < 0.2, "rho error {err_db} dB");
    }

    #[test]
    fn voa_sets_power_meter_reading() {
        // <n> = 1.25, rho = 1 (0 dB), R_s = 100 MHz, 1550 nm:
        // P_POM = 1.25 * 2 * E_ph * 1e8 = 3.204e-11 W.
        let field = ComplexWaveform::from_real(&[1.0, -2.0, 0.5, 3.0], FS).unwrap();
        let (scaled, p_pom) = apply_voa_and_meter(&field, 1.25, 1.0, RS, 1550e-9).unwrap();
        assert!((p_pom - 3.20394493e-11).abs() < 1e-17, "p_pom {p_pom}");
        assert!((scaled.mean_power() - p_pom).abs() < 1e-12 * p_pom);
        // Linearity: doubling <n> doubles P_POM.
        let (_, p2) = apply_voa_and_meter(&field, 2.5, 1.0, RS, 1550e-9).unwrap();
        assert!((p2 - 2.0 * p_pom).abs() < 1e-12 * p2);
    }

    #[test]
    fn voa_rejects_degenerate_inputs() {
        let field = ComplexWaveform::from_real(&[1.0, 2.0], FS).unwrap();
        assert!(apply_voa_and_meter(&field, 0.0, 1.0, RS, 1550e-9).is_err());
        let zero = ComplexWaveform::from_real(&[0.0, 0.0], FS).unwrap();
        assert!(apply_voa_and_meter(&zero, 1.25, 1.0, RS, 1550e-9).is_err());
    }

    #[test]
    fn vmod_calibration_round_trip() {
        let e_ph = photon_energy(1550e-9);
        // P_POM chosen so that <n> = 1.25 at any rho: V_mod = 2.5.
        for rho in [0.0, 1.0, db_to_linear(34.0)] {
            let p_pom = 1.25 * (1.0 + rho) * e_ph * RS;
            let v_mod = calibrate_vmod(p_pom, rho, e_ph, RS);
            assert!((v_mod - 2.5).abs() < 1e-12);
        }
        // rho -> infinity at fixed P_POM drives V_mod to zero.
        let v = calibrate_vmod(3.2e-11, 1e12, e_ph, RS);
        assert!(v < 1e-9);
    }
}
