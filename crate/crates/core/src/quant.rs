//! Post-training quantization, fake-quantization for QAT and precision
//! sweeps.

use serde::{Deserialize, Serialize};

use crate::dpd::{code, DpdModel, FixedDpdModel};
use crate::error::{Error, Result};
use crate::fxp::{quantize_finite, FxpFormat};

/// Weight and activation formats of a fixed-point model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub weight_fmt: FxpFormat,
    pub activation_fmt: FxpFormat,
}

impl Default for QuantConfig {
    /// W12A12: Q2.10 for both.
    fn default() -> Self {
        Self {
            weight_fmt: FxpFormat::Q2_10,
            activation_fmt: FxpFormat::Q2_10,
        }
    }
}

impl QuantConfig {
    pub fn uniform(fmt: FxpFormat) -> Self {
        Self {
            weight_fmt: fmt,
            activation_fmt: fmt,
        }
    }

    /// The activation format must hold 1.0 (gate blend) and have at least two
    /// fractional bits (hardsigmoid's x/4).
    pub fn validate(&self) -> Result<()> {
        let a = self.activation_fmt;
        if a.total_bits() - a.frac_bits() < 2 {
            return Err(Error::InvalidConfig(format!(
                "activation format {a} cannot represent 1.0"
            )));
        }
        if a.frac_bits() < 2 {
            return Err(Error::InvalidConfig(format!(
                "activation format {a} needs at least 2 fractional bits"
            )));
        }
        Ok(())
    }
}

/// `dequantize(quantize(x, fmt))`. Non-finite input maps through the clamp
/// (NaN to zero), so the caller decides whether to reject it.
pub fn fake_quantize(x: f64, fmt: FxpFormat) -> f64 {
    if x.is_nan() {
        return 0.0;
    }
    quantize_finite(x, fmt).to_f64()
}

/// Straight-through estimator gradient of `fake_quantize`: identity inside
/// the representable range, zero in the saturated region.
pub fn ste_mask(x: f64, fmt: FxpFormat) -> f64 {
    if x >= fmt.min_value() && x <= fmt.max_value() {
        1.0
    } else {
        0.0
    }
}

/// Quantize every weight and bias to `cfg.weight_fmt`. Returns the fixed
/// model and the number of parameters that saturated.
pub fn quantize_model(m: &DpdModel, cfg: &QuantConfig) -> Result<(FixedDpdModel, usize)> {
    cfg.validate()?;
    m.params.validate_dims()?;
    if let Some(v) = m.params.flatten().into_iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            value: v,
            context: "model weight".into(),
        });
    }
    let f = cfg.weight_fmt;
    let saturated = m
        .params
        .flatten()
        .iter()
        .filter(|&&w| w < f.min_value() - f.lsb() / 2.0 || w > f.max_value() + f.lsb() / 2.0)
        .count();
    let params = m.params.map(|w| code(w, f));
    let fixed = FixedDpdModel::new(params, *cfg, m.activations.clone())?;
    Ok((fixed, saturated))
}

/// Total bit widths covered by the precision sweep; each uses
/// `frac_bits = total_bits - 2`.
pub const SWEEP_TOTAL_BITS: [u32; 6] = [6, 8, 10, 12, 14, 16];

/// Q2.x formats of the precision sweep.
pub fn precision_sweep_formats() -> Vec<FxpFormat> {
    SWEEP_TOTAL_BITS
        .iter()
        .map(|&t| FxpFormat::new(t, t - 2).expect("sweep format is valid"))
        .collect()
}
