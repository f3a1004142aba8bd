//! Signal-quality metrics: Welch PSD, ACPR, EVM, NMSE and PAPR.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::{demodulate, OfdmConfig};
use crate::signal::Waveform;

/// Reported instead of −∞ dB.
pub const DB_FLOOR: f64 = -300.0;

fn db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Two-sided power spectrum centered at DC. `power[k]` is the power in bin
/// `k`, so the bins sum to the mean signal power.
///
/// With an even segment length the grid runs from `−fs/2` to `fs/2 − Δf`,
/// so the Nyquist bin appears once, on the negative side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub resolution_bw: f64,
}

impl PsdEstimate {
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Power in `[lo, hi]` Hz, counting partially covered bins by overlap.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let half = self.resolution_bw / 2.0;
        self.freqs
            .iter()
            .zip(&self.power)
            .map(|(&f, &p)| {
                let overlap = (hi.min(f + half) - lo.max(f - half)).max(0.0);
                p * overlap / self.resolution_bw
            })
            .sum()
    }

    /// `(freq_hz, power_db)` rows, power floored at [`DB_FLOOR`].
    pub fn to_db_rows(&self) -> Vec<(f64, f64)> {
        self.freqs.iter().zip(&self.power).map(|(&f, &p)| (f, db(p))).collect()
    }
}

/// Welch-averaged periodogram. `overlap` is the fraction of a segment shared
/// with the next one, in `[0, 1)`.
pub fn psd_welch(wave: &Waveform, segment_len: usize, overlap: f64, window: Window) -> Result<PsdEstimate> {
    if segment_len == 0 || !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidConfig(format!(
            "bad Welch parameters: segment {segment_len}, overlap {overlap}"
        )));
    }
    if wave.len() < segment_len {
        return Err(Error::InvalidConfig(format!(
            "segment length {segment_len} exceeds waveform length {}",
            wave.len()
        )));
    }
    if !(wave.sample_rate_hz.is_finite() && wave.sample_rate_hz > 0.0) {
        return Err(Error::InvalidConfig("sample rate must be positive".into()));
    }
    let hop = ((segment_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let w = window.coefficients(segment_len);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let mut acc = vec![0.0; segment_len];
    let mut count = 0usize;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    while start + segment_len <= wave.len() {
        for (b, (s, wv)) in buf.iter_mut().zip(wave.samples[start..].iter().zip(&w)) {
            *b = s * wv;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let norm = 1.0 / (count as f64 * segment_len as f64 * w_energy);
    let half = segment_len / 2;
    let df = wave.sample_rate_hz / segment_len as f64;
    let mut freqs = Vec::with_capacity(segment_len);
    let mut power = Vec::with_capacity(segment_len);
    // fftshift: bins N - N/2 .. N, then 0 .. N - N/2
    for k in (segment_len - half..segment_len).chain(0..segment_len - half) {
        let signed = if k >= segment_len - half { k as i64 - segment_len as i64 } else { k as i64 };
        freqs.push(signed as f64 * df);
        power.push(acc[k] * norm);
    }
    Ok(PsdEstimate {
        freqs,
        power,
        resolution_bw: df,
    })
}

/// Welch settings and band plan for the spectral metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
    /// Main-channel bandwidth; `None` uses the OFDM occupied bandwidth.
    pub channel_bw_hz: Option<f64>,
    /// Adjacent-channel center offset; `None` means one channel bandwidth.
    pub adjacent_offset_hz: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            segment_len: 1024,
            overlap: 0.5,
            window: Window::Hann,
            channel_bw_hz: None,
            adjacent_offset_hz: None,
        }
    }
}

/// `(left, right)` adjacent-channel power ratios in dBc from a PSD.
pub fn acpr_from_psd(psd: &PsdEstimate, channel_bw: f64, adjacent_offset: f64) -> Result<(f64, f64)> {
    let fs = psd.resolution_bw * psd.freqs.len() as f64;
    if !(channel_bw > 0.0 && adjacent_offset > 0.0) {
        return Err(Error::InvalidConfig("channel bandwidth and offset must be positive".into()));
    }
    if fs < 2.0 * (adjacent_offset + channel_bw / 2.0) {
        return Err(Error::InvalidConfig(format!(
            "adjacent band edge {} Hz exceeds Nyquist {} Hz",
            adjacent_offset + channel_bw / 2.0,
            fs / 2.0
        )));
    }
    let h = channel_bw / 2.0;
    let main = psd.band_power(-h, h);
    if main <= 0.0 {
        return Err(Error::Empty("no power in the main channel"));
    }
    let left = psd.band_power(-adjacent_offset - h, -adjacent_offset + h);
    let right = psd.band_power(adjacent_offset - h, adjacent_offset + h);
    Ok((db(left / main), db(right / main)))
}

/// ACPR with the default Welch settings (1024-point Hann, 50 % overlap).
pub fn acpr(wave: &Waveform, channel_bw: f64, adjacent_offset: f64) -> Result<(f64, f64)> {
    let d = MetricConfig::default();
    let psd = psd_welch(wave, d.segment_len.min(wave.len()), d.overlap, d.window)?;
    acpr_from_psd(&psd, channel_bw, adjacent_offset)
}

/// Least-squares complex scalar `α` minimizing `Σ|α·m − r|²`.
pub fn ls_scalar(measured: &[Complex64], reference: &[Complex64]) -> Complex64 {
    let num: Complex64 = measured.iter().zip(reference).map(|(m, r)| m.conj() * r).sum();
    let den: f64 = measured.iter().map(|m| m.norm_sqr()).sum();
    if den > 0.0 {
        num / den
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// EVM of already-demodulated symbols after single-scalar equalization.
pub fn evm_symbols(measured: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if measured.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: measured.len(),
            right: reference.len(),
        });
    }
    let ref_power: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    if ref_power == 0.0 {
        return Err(Error::Empty("all-zero reference symbols"));
    }
    let a = ls_scalar(measured, reference);
    let err: f64 = measured.iter().zip(reference).map(|(m, r)| (a * m - r).norm_sqr()).sum();
    Ok(db(err / ref_power))
}

/// Demodulate `measured` and compare with `reference_symbols`
/// (symbol-major, occupied subcarriers only).
pub fn evm(measured: &Waveform, cfg: &OfdmConfig, reference_symbols: &[Complex64]) -> Result<f64> {
    let m = demodulate(measured, cfg)?;
    evm_symbols(&m, reference_symbols)
}

/// EVM over the OFDM symbols lying entirely inside `range` of a full-length
/// waveform. Returns `None` when no whole symbol fits.
pub fn evm_in_range(
    measured: &Waveform,
    cfg: &OfdmConfig,
    reference_symbols: &[Complex64],
    range: std::ops::Range<usize>,
) -> Result<Option<f64>> {
    let sl = cfg.symbol_len();
    let first = range.start.div_ceil(sl);
    let end = (range.end / sl).min(measured.len() / sl);
    if end <= first {
        return Ok(None);
    }
    let occ = cfg.occupied_subcarriers;
    if reference_symbols.len() < end * occ {
        return Err(Error::LengthMismatch {
            left: reference_symbols.len(),
            right: end * occ,
        });
    }
    let part = measured.slice(first * sl..end * sl);
    evm(&part, cfg, &reference_symbols[first * occ..end * occ]).map(Some)
}

/// `10·log10(Σ|y − ref|² / Σ|ref|²)`.
pub fn nmse(y: &Waveform, reference: &Waveform) -> Result<f64> {
    nmse_samples(&y.samples, &reference.samples)
}

pub fn nmse_samples(y: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if y.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: reference.len(),
        });
    }
    let den: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Empty("all-zero NMSE reference"));
    }
    let num: f64 = y.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(db(num / den))
}

/// `10·log10(max|x|² / mean|x|²)`.
pub fn papr(wave: &Waveform) -> Result<f64> {
    let mean = wave.mean_power();
    if wave.is_empty() || mean == 0.0 {
        return Err(Error::Empty("PAPR of an empty or all-zero waveform"));
    }
    let peak = wave.samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
    Ok(10.0 * (peak / mean).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acpr_left_db: f64,
    pub acpr_right_db: f64,
    /// Worse of the two sides.
    pub acpr_db: f64,
    pub evm_db: Option<f64>,
    pub nmse_db: f64,
    pub papr_db: f64,
}

/// Metrics of a PA output against the linear target `reference`.
pub fn metric_report(
    output: &Waveform,
    reference: &Waveform,
    mcfg: &MetricConfig,
    channel_bw: f64,
    evm_db: Option<f64>,
) -> Result<MetricReport> {
    let psd = psd_welch(output, mcfg.segment_len.min(output.len()), mcfg.overlap, mcfg.window)?;
    let bw = mcfg.channel_bw_hz.unwrap_or(channel_bw);
    let (l, r) = acpr_from_psd(&psd, bw, mcfg.adjacent_offset_hz.unwrap_or(bw))?;
    Ok(MetricReport {
        acpr_left_db: l,
        acpr_right_db: r,
        acpr_db: l.max(r),
        evm_db,
        nmse_db: nmse(output, reference)?,
        papr_db: papr(output)?,
    })
}
