//! Flat key-value run configuration with SI-suffixed numbers, covering every
//! system parameter plus the run controls, and the derived frequency plan.

use std::path::Path;

use crate::error::{Error, Result};
use crate::transmitter::PilotMode;

/// Pilot generation scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotKind {
    Electrical,
    Optical,
}

/// Fixed system parameters (modulator, detector, rates, filters).
#[derive(Debug, Clone, Copy)]
pub struct SystemParams {
    /// DAC/ADC/simulation sampling rate [Sa/s].
    pub fs: f64,
    /// Quantum symbol rate [Hz].
    pub symbol_rate: f64,
    /// Upconversion frequency in electrical-pilot mode [Hz].
    pub f_uc_ep: f64,
    /// Upconversion frequency in optical-pilot mode [Hz].
    pub f_uc_op: f64,
    pub rrc_span_symbols: usize,
    pub rrc_roll_off: f64,
    pub v_pi: f64,
    pub extinction_db: f64,
    pub iq_imbalance_db: f64,
    /// Composite-drive 4-sigma point as a fraction of V_pi (EP mode).
    pub drive_depth: f64,
    /// DAC full scale in units of the composite per-quadrature RMS.
    pub dac_fullscale_sigmas: f64,
    pub wavelength_m: f64,
    /// Target modulation variance for the power calibration [SNU].
    pub v_mod_target: f64,
    pub responsivity: f64,
    pub nep: f64,
    pub tia_gain: f64,
    pub pd_bandwidth_hz: f64,
    pub adc_bits: u32,
    pub lo_power_w: f64,
    /// Receiver optics efficiency (photodiode quantum efficiency comes on
    /// top, implied by the responsivity).
    pub eta_optics: f64,
    pub fiber_loss_db_per_km: f64,
    /// Reconciliation efficiency.
    pub beta: f64,
    /// Pilot isolation filter double-sided bandwidth [Hz].
    pub pilot_bw_hz: f64,
    /// Timing/frame preamble length [symbols].
    pub preamble_len: usize,
    /// Symbols per optical-switch calibration capture; 0 sizes each copy's
    /// captures automatically from its payload length.
    pub cal_symbols: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            fs: 2.0e9,
            symbol_rate: 1.0e8,
            f_uc_ep: 5.0e8,
            f_uc_op: 4.0e8,
            rrc_span_symbols: 20,
            rrc_roll_off: 0.65,
            v_pi: 1.0,
            extinction_db: 35.0,
            iq_imbalance_db: 0.0,
            drive_depth: 0.15,
            dac_fullscale_sigmas: 4.0,
            wavelength_m: 1550.0e-9,
            v_mod_target: 2.5,
            responsivity: 1.0,
            nep: 7.0e-12,
            tia_gain: 3500.0,
            pd_bandwidth_hz: 8.0e8,
            adc_bits: 12,
            lo_power_w: 10.0e-3,
            eta_optics: 0.7,
            fiber_loss_db_per_km: 0.16,
            beta: 0.95,
            pilot_bw_hz: 40.0e6,
            preamble_len: 4096,
            cal_symbols: 0,
        }
    }
}

/// One simulation run: system parameters plus run controls.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub sys: SystemParams,
    pub pilot: PilotKind,
    /// Pilot-to-quantum power ratio [dB].
    pub rho_db: f64,
    /// DAC resolution per quadrature [bits].
    pub n_dac: u32,
    /// Combined TX + LO linewidth [Hz].
    pub linewidth_hz: f64,
    pub distance_km: f64,
    /// Moving-average window on the pilot quadratures [samples]; 0 disables.
    pub maf_m: usize,
    /// Payload symbols per copy.
    pub n_sym: usize,
    /// Independent channel/receiver realizations of the one TX block.
    pub k_copies: usize,
    /// Worker threads (0 = all available).
    pub n_workers: usize,
    pub master_seed: u64,
    /// When false the receiver skips pilot recovery and demodulates at the
    /// nominal frequency with zero phase.
    pub sync_enabled: bool,
    /// Pilot-to-quantum-band separation [Hz]; moves f_p (EP) or the beat
    /// frequency (OP) while the quantum band stays at `f_uc_ep`.
    pub delta_f_hz: f64,
    /// Extra TX-LO frequency offset on top of the plan [Hz].
    pub freq_offset_extra_hz: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sys: SystemParams::default(),
            pilot: PilotKind::Optical,
            rho_db: 21.0,
            n_dac: 12,
            linewidth_hz: 200.0,
            distance_km: 100.0,
            maf_m: 2000,
            n_sym: 100_000,
            k_copies: 100,
            n_workers: 0,
            master_seed: 1,
            sync_enabled: true,
            delta_f_hz: 4.0e8,
            freq_offset_extra_hz: 0.0,
        }
    }
}

/// Derived TX/RX frequency plan. The quantum band lands at `f_uc_ep` after
/// the beat in both pilot modes, so EP/OP comparisons share the receiver
/// geometry.
#[derive(Debug, Clone, Copy)]
pub struct BandPlan {
    /// TX upconversion frequency of the quantum signal.
    pub f_uc_tx: f64,
    /// TX pilot frequency (0 for the optical carrier).
    pub f_pilot_tx: f64,
    /// TX-LO frequency offset (delta Omega / 2 pi).
    pub delta_omega_hz: f64,
    /// Pilot beat frequency at the receiver.
    pub f_pilot_rx: f64,
    /// Quantum band center at the receiver.
    pub f_quantum_rx: f64,
}

impl RunConfig {
    pub fn band_plan(&self) -> BandPlan {
        let q = self.sys.f_uc_ep;
        match self.pilot {
            PilotKind::Electrical => {
                let delta_omega = self.freq_offset_extra_hz;
                BandPlan {
                    f_uc_tx: q,
                    f_pilot_tx: q - self.delta_f_hz,
                    delta_omega_hz: delta_omega,
                    f_pilot_rx: q - self.delta_f_hz + delta_omega,
                    f_quantum_rx: q + delta_omega,
                }
            }
            PilotKind::Optical => {
                let delta_omega = q - self.delta_f_hz + self.freq_offset_extra_hz;
                BandPlan {
                    f_uc_tx: self.delta_f_hz,
                    f_pilot_tx: 0.0,
                    delta_omega_hz: delta_omega,
                    f_pilot_rx: delta_omega,
                    f_quantum_rx: self.delta_f_hz + delta_omega,
                }
            }
        }
    }

    /// The transmitter-facing pilot mode for this configuration.
    pub fn pilot_mode(&self) -> PilotMode {
        let plan = self.band_plan();
        match self.pilot {
            PilotKind::Electrical => PilotMode::Electrical {
                f_pilot_hz: plan.f_pilot_tx,
                f_uc_hz: plan.f_uc_tx,
            },
            PilotKind::Optical => PilotMode::Optical {
                f_uc_hz: plan.f_uc_tx,
            },
        }
    }

    /// Samples per symbol; errors unless `fs / R_s` is a positive integer.
    pub fn samples_per_symbol(&self) -> Result<usize> {
        let f = self.sys.fs / self.sys.symbol_rate;
        let n = f.round() as usize;
        if n == 0 || (f - n as f64).abs() > 1e-9 {
            return Err(Error::config(format!(
                "fs/symbol_rate = {f} must be a positive integer"
            )));
        }
        Ok(n)
    }

    /// Half-width of the shaped quantum band [Hz].
    pub fn quantum_half_width(&self) -> f64 {
        (1.0 + self.sys.rrc_roll_off) * self.sys.symbol_rate / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sys;
        if !(s.fs > 0.0 && s.symbol_rate > 0.0) {
            return Err(Error::config("rates must be positive"));
        }
        self.samples_per_symbol()?;
        if self.k_copies == 0 {
            return Err(Error::config("k_copies must be >= 1"));
        }
        if self.n_sym < 64 {
            return Err(Error::config("n_sym must be >= 64"));
        }
        if !(self.rho_db.is_finite()) {
            return Err(Error::config("rho_db must be finite"));
        }
        if self.linewidth_hz < 0.0 || self.distance_km < 0.0 {
            return Err(Error::config("linewidth and distance must be >= 0"));
        }
        if self.delta_f_hz <= self.quantum_half_width() {
            return Err(Error::config(format!(
                "delta_f = {:.3e} Hz would overlap the quantum band (half-width {:.3e} Hz)",
                self.delta_f_hz,
                self.quantum_half_width()
            )));
        }
        if s.preamble_len < 64 {
            return Err(Error::config("preamble must be >= 64 symbols"));
        }
        if !(s.beta > 0.0 && s.beta <= 1.0) {
            return Err(Error::config("beta must be in (0, 1]"));
        }
        if !(s.eta_optics > 0.0 && s.eta_optics <= 1.0) {
            return Err(Error::config("eta must be in (0, 1]"));
        }
        if s.adc_bits == 0 || self.n_dac == 0 {
            return Err(Error::config("converter resolutions must be >= 1 bit"));
        }
        // The band plan must stay inside Nyquist.
        let plan = self.band_plan();
        let top = plan.f_quantum_rx + self.quantum_half_width();
        if top >= s.fs / 2.0 {
            return Err(Error::config(format!(
                "quantum band edge {top:.3e} Hz reaches Nyquist ({:.3e} Hz)",
                s.fs / 2.0
            )));
        }
        Ok(())
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "pilot" => {
                self.pilot = match v.to_ascii_lowercase().as_str() {
                    "electrical" | "ep" => PilotKind::Electrical,
                    "optical" | "op" => PilotKind::Optical,
                    other => {
                        return Err(Error::config(format!(
                            "pilot must be electrical|optical, got '{other}'"
                        )))
                    }
                }
            }
            "rho_db" => self.rho_db = parse_number(v)?,
            "n_dac" => self.n_dac = parse_count(v)? as u32,
            "linewidth" => self.linewidth_hz = parse_number(v)?,
            "distance_km" => self.distance_km = parse_number(v)?,
            "maf" => self.maf_m = parse_count(v)?,
            "n_sym" => self.n_sym = parse_count(v)?,
            "k_copies" => self.k_copies = parse_count(v)?,
            "workers" => self.n_workers = parse_count(v)?,
            "seed" => {
                self.master_seed = v
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("seed must be a u64, got '{v}'")))?
            }
            "sync" => self.sync_enabled = parse_bool(v)?,
            "delta_f" => self.delta_f_hz = parse_number(v)?,
            "freq_offset" => self.freq_offset_extra_hz = parse_number(v)?,
            "fs" => self.sys.fs = parse_number(v)?,
            "symbol_rate" => self.sys.symbol_rate = parse_number(v)?,
            "f_uc_ep" => self.sys.f_uc_ep = parse_number(v)?,
            "f_uc_op" => self.sys.f_uc_op = parse_number(v)?,
            "rrc_span" => self.sys.rrc_span_symbols = parse_count(v)?,
            "rrc_rolloff" => self.sys.rrc_roll_off = parse_number(v)?,
            "v_pi" => self.sys.v_pi = parse_number(v)?,
            "extinction_db" => self.sys.extinction_db = parse_number(v)?,
            "iq_imbalance_db" => self.sys.iq_imbalance_db = parse_number(v)?,
            "drive_depth" => self.sys.drive_depth = parse_number(v)?,
            "dac_sigmas" => self.sys.dac_fullscale_sigmas = parse_number(v)?,
            "wavelength" => self.sys.wavelength_m = parse_number(v)?,
            "v_mod" => self.sys.v_mod_target = parse_number(v)?,
            "responsivity" => self.sys.responsivity = parse_number(v)?,
            "nep" => self.sys.nep = parse_number(v)?,
            "tia_gain" => self.sys.tia_gain = parse_number(v)?,
            "pd_bandwidth" => self.sys.pd_bandwidth_hz = parse_number(v)?,
            "adc_bits" => self.sys.adc_bits = parse_count(v)? as u32,
            "lo_power" => self.sys.lo_power_w = parse_number(v)?,
            "eta" => self.sys.eta_optics = parse_number(v)?,
            "fiber_loss" => self.sys.fiber_loss_db_per_km = parse_number(v)?,
            "beta" => self.sys.beta = parse_number(v)?,
            "pilot_bw" => self.sys.pilot_bw_hz = parse_number(v)?,
            "preamble" => self.sys.preamble_len = parse_count(v)?,
            "cal_symbols" => self.sys.cal_symbols = parse_count(v)?,
            other => return Err(Error::config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file (`#` comments allowed) on top
    /// of the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set(key, value).map_err(|e| {
                Error::config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }
}

/// Parse a number with an optional SI suffix (k, M, G, m, u, n, p).
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::config("empty numeric value"));
    }
    let (body, mult) = match s.chars().last().unwrap() {
        'k' => (&s[..s.len() - 1], 1e3),
        'M' => (&s[..s.len() - 1], 1e6),
        'G' => (&s[..s.len() - 1], 1e9),
        'm' => (&s[..s.len() - 1], 1e-3),
        'u' => (&s[..s.len() - 1], 1e-6),
        'n' => (&s[..s.len() - 1], 1e-9),
        'p' => (&s[..s.len() - 1], 1e-12),
        _ => (s, 1.0),
    };
    body.trim()
        .parse::<f64>()
        .map(|v| v * mult)
        .map_err(|_| Error::config(format!("cannot parse number '{s}'")))
}

fn parse_count(s: &str) -> Result<usize> {
    let v = parse_number(s)?;
    if v < 0.0 || v.fract().abs() > 1e-9 && (v - v.round()).abs() > 1e-6 * v.abs() {
        return Err(Error::config(format!("expected a non-negative integer, got '{s}'")));
    }
    Ok(v.round() as usize)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(format!("expected on/off, got '{other}'"))),
    }
}
