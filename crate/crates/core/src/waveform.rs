//! Sampled-waveform container and the shared DSP primitives used by the
//! transmitter, channel, receiver and receiver-DSP stages.
//!
//! All waveforms are uniformly sampled complex baseband signals in double
//! precision; fixed-point effects enter only through [`quantize_uniform`].

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniformly sampled complex baseband signal.
///
/// Arithmetic between two waveforms requires equal sample rate and length;
/// a mismatch is an error, never a silent truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexWaveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexWaveform {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::parameter("sample_rate must be > 0"));
        }
        if samples.is_empty() {
            return Err(Error::parameter("waveform must not be empty"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Lift a real waveform into the complex container (zero imaginary part).
    pub fn from_real(samples: &[f64], sample_rate: f64) -> Result<Self> {
        Self::new(
            samples.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            sample_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|^2 over all samples.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Scale every sample by a real gain.
    pub fn scaled(&self, gain: f64) -> ComplexWaveform {
        ComplexWaveform {
            samples: self.samples.iter().map(|c| c * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    fn check_compatible(&self, other: &ComplexWaveform) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::parameter(format!(
                "waveform length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::parameter(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }

    /// Elementwise sum; errors on rate/length mismatch.
    pub fn add(&self, other: &ComplexWaveform) -> Result<ComplexWaveform> {
        self.check_compatible(other)?;
        Ok(ComplexWaveform {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Root-raised-cosine pulse-shaping filter.
///
/// Taps are normalized to unit energy and symmetric about the center tap, so
/// a matched TX/RX pair has unit gain and near-zero ISI at symbol-spaced
/// offsets.
#[derive(Debug, Clone)]
pub struct RrcFilter {
    pub roll_off: f64,
    pub span_symbols: usize,
    pub samples_per_symbol: usize,
    taps: Vec<f64>,
}

impl RrcFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Design a root-raised-cosine filter with `span_symbols * samples_per_symbol + 1`
/// taps, unit energy, symmetric about the center tap.
pub fn design_rrc(roll_off: f64, span_symbols: usize, samples_per_symbol: usize) -> Result<RrcFilter> {
    if !(roll_off > 0.0 && roll_off <= 1.0) {
        return Err(Error::parameter("RRC roll-off must be in (0, 1]"));
    }
    if span_symbols < 2 {
        return Err(Error::parameter("RRC span must be at least 2 symbols"));
    }
    if samples_per_symbol < 2 {
        return Err(Error::parameter("RRC needs at least 2 samples per symbol"));
    }
    let len = span_symbols * samples_per_symbol + 1;
    let center = (len - 1) as i64 / 2;
    let sps = samples_per_symbol as f64;
    let beta = roll_off;

    let mut taps = Vec::with_capacity(len);
    for i in 0..len {
        // Time in symbol periods, exactly antisymmetric around the center tap.
        let t = (i as i64 - center) as f64 / sps;
        let h = if t.abs() < 1e-12 {
            1.0 + beta * (4.0 / PI - 1.0)
        } else if (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-9 {
            // Removable singularity at |t| = 1/(4 beta).
            let a = (PI / (4.0 * beta)).sin() * (1.0 + 2.0 / PI);
            let b = (PI / (4.0 * beta)).cos() * (1.0 - 2.0 / PI);
            beta / 2f64.sqrt() * (a + b)
        } else {
            let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
            let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
            num / den
        };
        taps.push(h);
    }

    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    for h in &mut taps {
        *h /= norm;
    }

    Ok(RrcFilter {
        roll_off,
        span_symbols,
        samples_per_symbol,
        taps,
    })
}

/// Insert `factor - 1` zeros after every symbol: `out[k*factor] = symbols[k]`.
/// Zero insertion preserves total energy.
pub fn upsample_zeros(
    symbols: &[Complex64],
    factor: usize,
    symbol_rate: f64,
) -> Result<ComplexWaveform> {
    if factor == 0 {
        return Err(Error::parameter("upsampling factor must be >= 1"));
    }
    if symbols.is_empty() {
        return Err(Error::parameter("symbol sequence must not be empty"));
    }
    let mut samples = vec![Complex64::new(0.0, 0.0); symbols.len() * factor];
    for (k, &s) in symbols.iter().enumerate() {
        samples[k * factor] = s;
    }
    ComplexWaveform::new(samples, symbol_rate * factor as f64)
}

/// Multiply by `exp(j 2 pi f k / fs)`; preserves energy to machine precision.
pub fn frequency_shift(w: &ComplexWaveform, f_hz: f64) -> Result<ComplexWaveform> {
    if f_hz.abs() >= w.sample_rate / 2.0 {
        return Err(Error::parameter(format!(
            "shift {f_hz} Hz is at or beyond Nyquist ({} Hz)",
            w.sample_rate / 2.0
        )));
    }
    let omega = 2.0 * PI * f_hz / w.sample_rate;
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let (sin, cos) = (omega * k as f64).sin_cos();
            s * Complex64::new(cos, sin)
        })
        .collect();
    Ok(ComplexWaveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Centered moving average of `window` samples applied independently to each
/// quadrature; partial (shrunken) windows at the block edges; `window == 0`
/// is the identity. Output length is unchanged.
pub fn moving_average(w: &ComplexWaveform, window: usize) -> Result<ComplexWaveform> {
    let n = w.len();
    if window > n {
        return Err(Error::parameter(format!(
            "moving-average window {window} exceeds waveform length {n}"
        )));
    }
    if window <= 1 {
        return Ok(w.clone());
    }
    // Prefix sums; values are O(1) so the cancellation error stays far below
    // the phase-noise scales this touches.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(Complex64::new(0.0, 0.0));
    let mut acc = Complex64::new(0.0, 0.0);
    for &s in &w.samples {
        acc += s;
        prefix.push(acc);
    }
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2; // lo + hi + 1 == window
    let samples = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half_lo);
            let hi = (k + half_hi).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    Ok(ComplexWaveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Mid-rise uniform quantizer on one real value: clip to [-full_scale,
/// +full_scale], then map to the nearest of 2^n_bits equally spaced levels.
#[inline]
pub fn quantize_value(x: f64, n_bits: u32, full_scale: f64) -> f64 {
    let levels = (1u64 << n_bits) as f64;
    let step = 2.0 * full_scale / levels;
    let idx = ((x + full_scale) / step).floor().clamp(0.0, levels - 1.0);
    -full_scale + (idx + 0.5) * step
}

/// Mid-rise quantization of each quadrature independently; deterministic.
pub fn quantize_uniform(
    w: &ComplexWaveform,
    n_bits: u32,
    full_scale: f64,
) -> Result<ComplexWaveform> {
    check_quantizer_params(n_bits, full_scale)?;
    let samples = w
        .samples
        .iter()
        .map(|c| {
            Complex64::new(
                quantize_value(c.re, n_bits, full_scale),
                quantize_value(c.im, n_bits, full_scale),
            )
        })
        .collect();
    Ok(ComplexWaveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Real-waveform variant of [`quantize_uniform`] (used by the ADC model).
pub fn quantize_uniform_real(x: &[f64], n_bits: u32, full_scale: f64) -> Result<Vec<f64>> {
    check_quantizer_params(n_bits, full_scale)?;
    Ok(x.iter()
        .map(|&v| quantize_value(v, n_bits, full_scale))
        .collect())
}

fn check_quantizer_params(n_bits: u32, full_scale: f64) -> Result<()> {
    if n_bits == 0 || n_bits > 32 {
        return Err(Error::parameter("quantizer resolution must be 1..=32 bits"));
    }
    if !(full_scale > 0.0) {
        return Err(Error::parameter("quantizer full scale must be > 0"));
    }
    Ok(())
}

/// Two-sided power spectral density estimate on a centered frequency grid.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Bin center frequencies, ascending from -fs/2.
    pub freqs: Vec<f64>,
    /// Power density per bin [power/Hz].
    pub psd: Vec<f64>,
    /// Bin width [Hz].
    pub df: f64,
}

impl Spectrum {
    /// Integral of the PSD over all bins (equals mean power).
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df
    }

    /// Integral of the PSD over `[f_lo, f_hi]`.
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.df
    }

    /// Frequency of the strongest bin within `[f_lo, f_hi]`.
    pub fn peak_in_band(&self, f_lo: f64, f_hi: f64) -> Option<(f64, f64)> {
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, p)| (*f, *p))
    }

    /// Median PSD level over all bins whose frequency is outside every
    /// exclusion interval. Robust floor estimate in the presence of lines.
    pub fn median_floor(&self, exclusions: &[(f64, f64)]) -> f64 {
        let mut vals: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| !exclusions.iter().any(|(lo, hi)| **f >= *lo && **f <= *hi))
            .map(|(_, p)| *p)
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.sort_by(|a, b| a.total_cmp(b));
        vals[vals.len() / 2]
    }
}

/// Averaged-periodogram (Welch) PSD with a periodic Hann window and 50%
/// overlap. `segment_len` must be a power of two no longer than the signal.
/// The PSD integrates to the mean power (exactly so for constant-modulus
/// signals).
pub fn estimate_psd(w: &ComplexWaveform, segment_len: usize) -> Result<Spectrum> {
    let n = w.len();
    if segment_len == 0 || !segment_len.is_power_of_two() {
        return Err(Error::parameter("PSD segment length must be a power of two"));
    }
    if segment_len > n {
        return Err(Error::parameter(format!(
            "PSD segment length {segment_len} exceeds waveform length {n}"
        )));
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / segment_len as f64).cos()))
        .collect();
    let win_energy: f64 = window.iter().map(|x| x * x).sum();

    let hop = (segment_len / 2).max(1);
    let n_segments = (n - segment_len) / hop + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(segment_len);
    let mut accum = vec![0.0f64; segment_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];

    for s in 0..n_segments {
        let start = s * hop;
        for i in 0..segment_len {
            buf[i] = w.samples[start + i] * window[i];
        }
        fft.process(&mut buf);
        for i in 0..segment_len {
            accum[i] += buf[i].norm_sqr();
        }
    }

    let norm = 1.0 / (n_segments as f64 * w.sample_rate * win_energy);
    let df = w.sample_rate / segment_len as f64;
    // fftshift: negative frequencies first.
    let half = segment_len / 2;
    let mut freqs = Vec::with_capacity(segment_len);
    let mut psd = Vec::with_capacity(segment_len);
    for i in 0..segment_len {
        let bin = (i + half) % segment_len;
        let f = (bin as f64 - if bin >= half { segment_len as f64 } else { 0.0 }) * df;
        freqs.push(f);
        psd.push(accum[bin] * norm);
    }
    Ok(Spectrum { freqs, psd, df })
}

/// Same-length FIR convolution with the group delay compensated by aligning
/// the center tap (taps length must be odd). Edges are zero-padded.
pub fn fir_same(w: &ComplexWaveform, taps: &[f64]) -> Result<ComplexWaveform> {
    if taps.is_empty() || taps.len() % 2 == 0 {
        return Err(Error::parameter("FIR taps must have odd length"));
    }
    let n = w.len();
    let half = taps.len() / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    // Scatter form: cheap when the input is mostly zeros (zero-stuffed
    // upsampler output), still exact for dense inputs.
    for (j, &x) in w.samples.iter().enumerate() {
        if x.re == 0.0 && x.im == 0.0 {
            continue;
        }
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        for i in lo..=hi {
            // out[i] += taps[m] * x[j] with m = j - i + half
            out[i] += x * taps[j + half - i];
        }
    }
    Ok(ComplexWaveform {
        samples: out,
        sample_rate: w.sample_rate,
    })
}

/// Center-aligned FIR evaluated only at `offset + k*step` (decimating
/// matched filter). Returns the decimated outputs.
pub fn fir_decimate(
    w: &ComplexWaveform,
    taps: &[f64],
    offset: i64,
    step: usize,
    count: usize,
) -> Result<Vec<Complex64>> {
    if taps.is_empty() || taps.len() % 2 == 0 {
        return Err(Error::parameter("FIR taps must have odd length"));
    }
    if step == 0 {
        return Err(Error::parameter("decimation step must be >= 1"));
    }
    let n = w.len() as i64;
    let half = (taps.len() / 2) as i64;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let center = offset + (k * step) as i64;
        let mut acc = Complex64::new(0.0, 0.0);
        let lo = (center - half).max(0);
        let hi = (center + half).min(n - 1);
        for i in lo..=hi {
            acc += w.samples[i as usize] * taps[(center + half - i) as usize];
        }
        out.push(acc);
    }
    Ok(out)
}

/// Blackman-windowed-sinc low-pass filter with unit DC gain and ~74 dB
/// stopband rejection.
///
/// `cutoff_hz` is the single-sided cutoff; `transition_hz` sets the length
/// (narrower transition, longer filter). Length is clamped to `[31, 8191]`
/// and forced odd.
pub fn design_lowpass(cutoff_hz: f64, transition_hz: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(cutoff_hz > 0.0) || cutoff_hz >= sample_rate / 2.0 {
        return Err(Error::parameter("low-pass cutoff must be in (0, fs/2)"));
    }
    if !(transition_hz > 0.0) {
        return Err(Error::parameter("transition bandwidth must be > 0"));
    }
    let mut len = (11.0 * sample_rate / transition_hz).ceil() as usize;
    len = len.clamp(31, 8191);
    if len % 2 == 0 {
        len += 1;
    }
    let half = (len / 2) as i64;
    let fc = cutoff_hz / sample_rate;
    let mut taps = Vec::with_capacity(len);
    for i in 0..len {
        let m = i as i64 - half;
        let sinc = if m == 0 {
            2.0 * fc
        } else {
            (2.0 * PI * fc * m as f64).sin() / (PI * m as f64)
        };
        let u = 2.0 * PI * i as f64 / (len - 1) as f64;
        let win = 0.42 - 0.5 * u.cos() + 0.08 * (2.0 * u).cos();
        taps.push(sinc * win);
    }
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    Ok(taps)
}

/// Nearest-multiple-of-2-pi phase unwrapping (in place).
pub fn unwrap_phase(phase: &mut [f64]) {
    for k in 1..phase.len() {
        let mut d = phase[k] - phase[k - 1];
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        phase[k] = phase[k - 1] + d;
    }
}
