//! Closed-loop evaluation: pre-distort the full waveform as a stream, drive
//! the PA, then measure a window of the output against `g·x`.

use num_complex::Complex64;

use crate::dpd::{reset_state, DpdModel, FixedDpdModel};
use crate::error::Result;
use crate::metrics::{acpr_from_psd, evm_in_range, nmse, papr, psd_welch, MetricConfig, MetricReport, PsdEstimate};
use crate::ofdm::OfdmConfig;
use crate::pa::PaModel;
use crate::quant::QuantConfig;
use crate::signal::Waveform;

/// What sits in front of the PA.
#[derive(Debug, Clone, PartialEq)]
pub enum Predistorter {
    /// No pre-distortion.
    Identity,
    Float(DpdModel),
    /// Float weights with fake-quantized forward pass.
    FakeQuant(DpdModel, QuantConfig),
    Fixed(FixedDpdModel),
}

impl Predistorter {
    pub fn apply(&self, x: &Waveform) -> Result<Waveform> {
        match self {
            Predistorter::Identity => Ok(x.clone()),
            Predistorter::Float(m) => m.forward(x, &reset_state()).map(|r| r.0),
            Predistorter::FakeQuant(m, q) => m.forward_fake_quant(x, q, &reset_state()).map(|r| r.0),
            Predistorter::Fixed(m) => m.forward(x, &m.reset_state()).map(|r| r.0),
        }
    }
}

/// OFDM context needed for EVM.
#[derive(Debug, Clone, Copy)]
pub struct OfdmContext<'a> {
    pub config: &'a OfdmConfig,
    pub reference_symbols: &'a [Complex64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// PSD of the PA output over the evaluated window.
    pub psd: PsdEstimate,
    /// Full-length PA output.
    pub pa_output: Waveform,
}

/// Evaluate `pre` followed by `pa` on `x`, measuring the samples in `window`.
///
/// ACPR and PAPR use the PA output in the window, NMSE compares it with
/// `g·x`, and EVM (when OFDM context is given) uses the OFDM symbols lying
/// entirely inside the window.
pub fn evaluate(
    x: &Waveform,
    pa: &PaModel,
    pre: &Predistorter,
    window: std::ops::Range<usize>,
    channel_bw_hz: f64,
    mcfg: &MetricConfig,
    ofdm: Option<OfdmContext>,
) -> Result<Evaluation> {
    let d = pre.apply(x)?;
    let y = d.with_samples(pa.apply_samples(&d.samples));
    let part = y.slice(window.clone());
    let target = x.scaled(pa.small_signal_gain()).slice(window.clone());
    let psd = psd_welch(&part, mcfg.segment_len.min(part.len()), mcfg.overlap, mcfg.window)?;
    let bw = mcfg.channel_bw_hz.unwrap_or(channel_bw_hz);
    let (l, r) = acpr_from_psd(&psd, bw, mcfg.adjacent_offset_hz.unwrap_or(bw))?;
    let evm_db = match ofdm {
        Some(c) => evm_in_range(&y, c.config, c.reference_symbols, window)?,
        None => None,
    };
    Ok(Evaluation {
        report: MetricReport {
            acpr_left_db: l,
            acpr_right_db: r,
            acpr_db: l.max(r),
            evm_db,
            nmse_db: nmse(&part, &target)?,
            papr_db: papr(&part)?,
        },
        psd,
        pa_output: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::ActivationPair;
    use crate::ofdm::generate_ofdm;
    use crate::pa::make_default_pa;

    #[test]
    fn zero_model_is_no_worse_than_zero_output() {
        // an all-zero model outputs zeros, so the PA output is zero too
        let cfg = OfdmConfig::default();
        let s = generate_ofdm(&cfg).unwrap();
        let pa = make_default_pa();
        let n = s.waveform.len();
        let ident = evaluate(
            &s.waveform,
            &pa,
            &Predistorter::Identity,
            0..n,
            cfg.channel_bw_hz,
            &MetricConfig::default(),
            Some(OfdmContext {
                config: &cfg,
                reference_symbols: &s.reference_symbols,
            }),
        )
        .unwrap();
        assert!((-35.0..=-28.0).contains(&ident.report.acpr_db), "{:?}", ident.report);
        assert!(ident.report.evm_db.unwrap() < -20.0);
        let zero = Predistorter::Float(DpdModel::zeros(ActivationPair::hard()));
        assert!(zero.apply(&s.waveform).unwrap().samples.iter().all(|v| v.norm() == 0.0));
    }
}
