use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One complex baseband sample: `re` is I, `im` is Q.
pub type IqSample = Complex64;

/// A uniformly sampled complex baseband signal.
///
/// `scale` is the peak-normalization factor that was applied to obtain
/// `samples`; the physical signal is `samples / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<IqSample>,
    pub sample_rate_hz: f64,
    pub scale: f64,
}

impl Waveform {
    pub fn new(samples: Vec<IqSample>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
            scale: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same sample rate and scale, new samples.
    pub fn with_samples(&self, samples: Vec<IqSample>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            scale: self.scale,
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        self.with_samples(self.samples[range].to_vec())
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Scale so the peak magnitude is 1; the applied factor is folded into
    /// `scale`.
    pub fn peak_normalized(&self) -> Result<Self> {
        let peak = self.peak();
        if peak == 0.0 || !peak.is_finite() {
            return Err(Error::Empty("cannot peak-normalize a zero or non-finite waveform"));
        }
        let k = 1.0 / peak;
        Ok(Self {
            samples: self.samples.iter().map(|s| s * k).collect(),
            sample_rate_hz: self.sample_rate_hz,
            scale: self.scale * k,
        })
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        self.with_samples(self.samples.iter().map(|s| s * c).collect())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self
            .samples
            .iter()
            .position(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            Some(index) => Err(Error::NonFiniteSample { index }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_records_scale() {
        let w = Waveform::new(vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, -4.0)], 1e6);
        let n = w.peak_normalized().unwrap();
        assert_eq!(n.peak(), 1.0);
        assert_eq!(n.scale, 0.25);
        assert!(Waveform::new(vec![Complex64::new(0.0, 0.0)], 1.0)
            .peak_normalized()
            .is_err());
    }

    #[test]
    fn finite_check_reports_index() {
        let w = Waveform::new(
            vec![Complex64::new(0.0, 0.0), Complex64::new(f64::NAN, 0.0)],
            1.0,
        );
        assert!(matches!(w.check_finite(), Err(Error::NonFiniteSample { index: 1 })));
    }
}
