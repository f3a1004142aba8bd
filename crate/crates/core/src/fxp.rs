//! Two's-complement fixed-point arithmetic.
//!
//! Every narrowing rounds half-to-even and saturates; nothing wraps. Dot
//! products accumulate exact raw products in a wide accumulator and narrow
//! once at the end.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Q-format descriptor: `total_bits` wide, `frac_bits` of them fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxpFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FxpFormat {
    /// 12-bit, 2 integer bits (sign included), 10 fractional bits.
    pub const Q2_10: FxpFormat = FxpFormat {
        total_bits: 12,
        frac_bits: 10,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) {
            return Err(Error::InvalidFormat(format!(
                "total_bits must be in 2..=32, got {total_bits}"
            )));
        }
        if frac_bits >= total_bits {
            return Err(Error::InvalidFormat(format!(
                "frac_bits must be < total_bits ({total_bits}), got {frac_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Value of one LSB.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.raw_min() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.raw_max() as f64 * self.lsb()
    }

    /// Number of distinct codes.
    pub fn code_count(&self) -> u64 {
        1u64 << self.total_bits
    }

    /// Wide accumulator for dot products of this format: product scale,
    /// 32 bits for Q2.10.
    pub fn accumulator(&self) -> AccFormat {
        AccFormat {
            total_bits: (2 * self.total_bits + 8).max(32),
            frac_bits: 2 * self.frac_bits,
        }
    }

    fn saturate(&self, raw: i128) -> i32 {
        raw.clamp(self.raw_min() as i128, self.raw_max() as i128) as i32
    }

    fn check_same(&self, other: &FxpFormat) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::FormatMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

impl Default for FxpFormat {
    fn default() -> Self {
        Self::Q2_10
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q{}.{}",
            self.total_bits - self.frac_bits,
            self.frac_bits
        )
    }
}

/// Accumulator format used by [`dot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
}

/// A fixed-point scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpValue {
    raw: i32,
    fmt: FxpFormat,
}

impl FxpValue {
    /// Build from a raw code. Out-of-range codes saturate.
    pub fn from_raw(raw: i64, fmt: FxpFormat) -> Self {
        Self {
            raw: fmt.saturate(raw as i128),
            fmt,
        }
    }

    pub fn zero(fmt: FxpFormat) -> Self {
        Self { raw: 0, fmt }
    }

    /// Exactly 1.0, or the format maximum if 1.0 is not representable.
    pub fn one(fmt: FxpFormat) -> Self {
        Self::from_raw(1i64 << fmt.frac_bits, fmt)
    }

    pub fn raw(&self) -> i32 {
        self.raw
    }

    pub fn format(&self) -> FxpFormat {
        self.fmt
    }

    pub fn to_f64(&self) -> f64 {
        dequantize(*self)
    }

    pub fn saturating_add(self, rhs: Self) -> Result<Self> {
        self.fmt.check_same(&rhs.fmt)?;
        Ok(Self {
            raw: self.fmt.saturate(self.raw as i128 + rhs.raw as i128),
            fmt: self.fmt,
        })
    }

    pub fn saturating_sub(self, rhs: Self) -> Result<Self> {
        self.fmt.check_same(&rhs.fmt)?;
        Ok(Self {
            raw: self.fmt.saturate(self.raw as i128 - rhs.raw as i128),
            fmt: self.fmt,
        })
    }

    /// Full-width product, rounded back to the shared format.
    pub fn saturating_mul(self, rhs: Self) -> Result<Self> {
        self.fmt.check_same(&rhs.fmt)?;
        let wide = self.raw as i128 * rhs.raw as i128;
        Ok(Self {
            raw: self.fmt.saturate(shr_round_even(wide, self.fmt.frac_bits)),
            fmt: self.fmt,
        })
    }
}

/// Arithmetic right shift with round-half-to-even.
pub fn shr_round_even(value: i128, shift: u32) -> i128 {
    if shift == 0 {
        return value;
    }
    let floor = value >> shift;
    let rem = value - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Round `x` to the nearest code (ties to even) and saturate.
pub fn quantize(x: f64, fmt: FxpFormat) -> Result<FxpValue> {
    if !x.is_finite() {
        return Err(Error::NonFinite {
            value: x,
            context: "quantize".into(),
        });
    }
    Ok(quantize_finite(x, fmt))
}

/// Infallible variant for callers that already guarantee finiteness.
pub(crate) fn quantize_finite(x: f64, fmt: FxpFormat) -> FxpValue {
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    let raw = scaled.clamp(fmt.raw_min() as f64, fmt.raw_max() as f64) as i64;
    FxpValue::from_raw(raw, fmt)
}

pub fn dequantize(v: FxpValue) -> f64 {
    v.raw as f64 * v.fmt.lsb()
}

/// Dot product with a wide accumulator.
///
/// Raw products are aligned to `acc.frac_bits` and summed exactly; the sum is
/// clamped to the accumulator width, then rounded and saturated into the
/// element format once.
pub fn dot(a: &[FxpValue], b: &[FxpValue], acc: AccFormat) -> Result<FxpValue> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let Some(first) = a.first() else {
        return Ok(FxpValue::zero(b.first().map_or(FxpFormat::Q2_10, |v| v.fmt)));
    };
    let fmt = first.fmt;
    for v in a.iter().chain(b) {
        fmt.check_same(&v.fmt)?;
    }
    let prod_frac = 2 * fmt.frac_bits;
    let mut sum: i128 = 0;
    for (x, y) in a.iter().zip(b) {
        let p = x.raw as i128 * y.raw as i128;
        sum += align(p, prod_frac, acc.frac_bits);
    }
    let acc_lim = 1i128 << (acc.total_bits - 1);
    let sum = sum.clamp(-acc_lim, acc_lim - 1);
    Ok(narrow(sum, acc.frac_bits, fmt))
}

fn align(value: i128, from_frac: u32, to_frac: u32) -> i128 {
    if to_frac >= from_frac {
        value << (to_frac - from_frac)
    } else {
        shr_round_even(value, from_frac - to_frac)
    }
}

/// Narrow a wide value at `frac` fractional bits into `fmt`.
pub fn narrow(value: i128, frac: u32, fmt: FxpFormat) -> FxpValue {
    let r = if frac >= fmt.frac_bits {
        shr_round_even(value, frac - fmt.frac_bits)
    } else {
        value << (fmt.frac_bits - frac)
    };
    FxpValue {
        raw: fmt.saturate(r),
        fmt,
    }
}

/// Exact sum of raw products at product scale (2 × frac_bits).
///
/// Hot-path helper for the fixed-point engine; formats are validated by the
/// caller when the model is built.
pub(crate) fn raw_dot(a: &[i32], b: &[i32]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: f64) -> FxpValue {
        quantize(x, FxpFormat::Q2_10).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(q(0.5).raw(), 512);
        assert_eq!(q(-2.0).raw(), -2048);
        assert_eq!(q(3.0).raw(), 2047);
        assert_eq!(q(3.0).to_f64(), 1.9990234375);
        // 1024/3 = 341.33..
        assert_eq!(q(1.0 / 3.0).raw(), 341);
        assert_eq!(q(1.0 / 3.0).to_f64(), 0.3330078125);
    }

    #[test]
    fn quantize_ties_to_even() {
        let lsb = FxpFormat::Q2_10.lsb();
        assert_eq!(q(0.5 * lsb).raw(), 0);
        assert_eq!(q(1.5 * lsb).raw(), 2);
        assert_eq!(q(2.5 * lsb).raw(), 2);
        assert_eq!(q(-0.5 * lsb).raw(), 0);
        assert_eq!(q(-1.5 * lsb).raw(), -2);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        assert!(quantize(f64::NAN, FxpFormat::Q2_10).is_err());
        assert!(quantize(f64::INFINITY, FxpFormat::Q2_10).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let f = FxpFormat::Q2_10;
        assert_eq!(dequantize(FxpValue::from_raw(512, f)), 0.5);
        assert_eq!(dequantize(FxpValue::from_raw(-2048, f)), -2.0);
        assert_eq!(dequantize(FxpValue::from_raw(1, f)), 0.0009765625);
    }

    #[test]
    fn format_range() {
        let f = FxpFormat::Q2_10;
        assert_eq!(f.min_value(), -2.0);
        assert_eq!(f.max_value(), 2.0 - 2f64.powi(-10));
        assert!(FxpFormat::new(1, 0).is_err());
        assert!(FxpFormat::new(33, 2).is_err());
        assert!(FxpFormat::new(8, 8).is_err());
        assert_eq!(FxpFormat::new(12, 10).unwrap(), FxpFormat::Q2_10);
        assert_eq!(FxpFormat::Q2_10.to_string(), "Q2.10");
    }

    #[test]
    fn add_examples() {
        assert_eq!(q(1.0).saturating_add(q(0.5)).unwrap().to_f64(), 1.5);
        assert_eq!(
            q(1.5).saturating_add(q(1.5)).unwrap().to_f64(),
            1.9990234375
        );
        let z = FxpValue::zero(FxpFormat::Q2_10);
        for raw in -2048..2048 {
            let x = FxpValue::from_raw(raw, FxpFormat::Q2_10);
            assert_eq!(x.saturating_add(z).unwrap(), x);
        }
    }

    #[test]
    fn mul_examples() {
        let p = q(0.5).saturating_mul(q(0.5)).unwrap();
        assert_eq!(p.raw(), 256);
        assert_eq!(
            q(1.5).saturating_mul(q(1.5)).unwrap().to_f64(),
            1.9990234375
        );
        // exact product is 2^-20; raw 1 >> 10 rounds to 0
        let lsb = FxpValue::from_raw(1, FxpFormat::Q2_10);
        assert_eq!(lsb.saturating_mul(lsb).unwrap().raw(), 0);
    }

    #[test]
    fn mismatched_formats_error() {
        let other = FxpFormat::new(8, 6).unwrap();
        let a = q(0.5);
        let b = quantize(0.5, other).unwrap();
        assert!(matches!(
            a.saturating_add(b),
            Err(Error::FormatMismatch { .. })
        ));
        assert!(a.saturating_mul(b).is_err());
        let acc = FxpFormat::Q2_10.accumulator();
        assert!(dot(&[a], &[b], acc).is_err());
    }

    #[test]
    fn dot_examples() {
        let acc = FxpFormat::Q2_10.accumulator();
        assert_eq!(acc.total_bits, 32);
        assert_eq!(acc.frac_bits, 20);
        let d = dot(&[q(0.5), q(0.5)], &[q(1.0), q(1.0)], acc).unwrap();
        assert_eq!(d.to_f64(), 1.0);
        assert_eq!(dot(&[], &[], acc).unwrap().raw(), 0);
        // 16 * (0.25 * 0.5) = 2.0, saturates only when narrowed
        let a = vec![q(0.25); 16];
        let b = vec![q(0.5); 16];
        assert_eq!(dot(&a, &b, acc).unwrap().to_f64(), 1.9990234375);
        assert!(matches!(
            dot(&a[..3], &b, acc),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dot_has_no_intermediate_saturation() {
        // 1.5*1 + 1.5*1 - 1.5*1 = 1.5; a saturating running sum would give 0.499..
        let acc = FxpFormat::Q2_10.accumulator();
        let d = dot(&[q(1.5), q(1.5), q(-1.5)], &[q(1.0), q(1.0), q(1.0)], acc).unwrap();
        assert_eq!(d.to_f64(), 1.5);
    }

    #[test]
    fn shr_round_even_cases() {
        assert_eq!(shr_round_even(3, 1), 2); // 1.5 -> 2
        assert_eq!(shr_round_even(5, 1), 2); // 2.5 -> 2
        assert_eq!(shr_round_even(-3, 1), -2); // -1.5 -> -2
        assert_eq!(shr_round_even(-5, 1), -2); // -2.5 -> -2
        assert_eq!(shr_round_even(7, 2), 2); // 1.75 -> 2
        assert_eq!(shr_round_even(-7, 2), -2);
        assert_eq!(shr_round_even(1, 10), 0);
    }

    #[test]
    fn round_trip_all_codes() {
        let f = FxpFormat::Q2_10;
        for raw in f.raw_min()..=f.raw_max() {
            let v = FxpValue::from_raw(raw, f);
            let x = dequantize(v);
            assert_eq!(quantize(x, f).unwrap(), v);
        }
    }
}
