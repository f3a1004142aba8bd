//! Paired PA input/output records and contiguous train/val/test splits.

use crate::error::{Error, Result};
use crate::pa::PaModel;
use crate::signal::Waveform;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// PA input.
    pub input: Waveform,
    /// PA output.
    pub output: Waveform,
}

impl Dataset {
    pub fn new(input: Waveform, output: Waveform) -> Result<Self> {
        if input.len() != output.len() {
            return Err(Error::LengthMismatch {
                left: input.len(),
                right: output.len(),
            });
        }
        Ok(Self { input, output })
    }

    /// Record `pa` driven by `input`.
    pub fn from_pa(input: Waveform, pa: &PaModel) -> Result<Self> {
        let output = crate::pa::pa_apply(&input, pa)?;
        Self::new(input, output)
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn slice(&self, r: std::ops::Range<usize>) -> Self {
        Self {
            input: self.input.slice(r.clone()),
            output: self.output.slice(r),
        }
    }
}

/// Index ranges of a contiguous three-way split. The first two parts are
/// rounded to the nearest sample; the last takes the remainder.
pub fn split_ranges(len: usize, fractions: (f64, f64, f64)) -> Result<[std::ops::Range<usize>; 3]> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    if len < 3 {
        return Err(Error::InvalidConfig(format!(
            "dataset of {len} samples is too short to split"
        )));
    }
    let n = len as f64;
    let n1 = ((a * n).round() as usize).clamp(1, len - 2);
    let n2 = ((b * n).round() as usize).clamp(1, len - n1 - 1);
    Ok([0..n1, n1..n1 + n2, n1 + n2..len])
}

/// Contiguous, time-ordered train/val/test split.
pub fn split_dataset(d: &Dataset, fractions: (f64, f64, f64)) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_ranges(d.len(), fractions)?;
    Ok((d.slice(a), d.slice(b), d.slice(c)))
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);
