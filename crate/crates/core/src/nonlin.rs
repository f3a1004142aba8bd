//! Activation functions: piecewise-linear hard variants, floating-point
//! references and a nearest-entry lookup-table baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{quantize_finite, shr_round_even, FxpValue};

/// Hardsigmoid: `x/4 + 1/2` clamped to `[0, 1]`.
pub fn hardsigmoid(x: f64) -> f64 {
    if x > 2.0 {
        1.0
    } else if x < -2.0 {
        0.0
    } else {
        x / 4.0 + 0.5
    }
}

/// Hardtanh: identity clamped to `[-1, 1]`.
pub fn hardtanh(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// Fixed-point hardsigmoid: comparator, shift-by-2 with round-half-even,
/// then the exact constant 1/2.
pub fn hardsigmoid_fxp(x: FxpValue) -> FxpValue {
    let fmt = x.format();
    let one = 1i128 << fmt.frac_bits();
    let raw = x.raw() as i128;
    let out = if raw > 2 * one {
        one
    } else if raw < -2 * one {
        0
    } else {
        shr_round_even(raw, 2) + (one >> 1)
    };
    FxpValue::from_raw(out as i64, fmt)
}

/// Fixed-point hardtanh: two comparators.
pub fn hardtanh_fxp(x: FxpValue) -> FxpValue {
    let fmt = x.format();
    let one = 1i64 << fmt.frac_bits();
    FxpValue::from_raw((x.raw() as i64).clamp(-one, one), fmt)
}

/// Which function a lookup table samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutFunction {
    Sigmoid,
    Tanh,
}

impl LutFunction {
    fn eval(self, x: f64) -> f64 {
        match self {
            LutFunction::Sigmoid => sigmoid(x),
            LutFunction::Tanh => tanh(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            LutFunction::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            LutFunction::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Uniform nearest-entry lookup table.
///
/// Entry `k` holds `f(input_min + k * step)` with
/// `step = (input_max - input_min) / entry_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutTable {
    pub function: LutFunction,
    pub input_min: f64,
    pub input_max: f64,
    pub entries: Vec<f64>,
}

impl LutTable {
    pub const DEFAULT_ENTRIES: usize = 256;
    pub const DEFAULT_RANGE: (f64, f64) = (-8.0, 8.0);

    pub fn new(function: LutFunction, entry_count: usize, input_min: f64, input_max: f64) -> Result<Self> {
        let mut t = Self {
            function,
            input_min,
            input_max,
            entries: Vec::new(),
        };
        t.check_header(entry_count)?;
        let step = t.step_for(entry_count);
        t.entries = (0..entry_count)
            .map(|k| function.eval(input_min + k as f64 * step))
            .collect();
        Ok(t)
    }

    /// The baseline table: 256 entries over [-8, 8).
    pub fn baseline(function: LutFunction) -> Self {
        let (lo, hi) = Self::DEFAULT_RANGE;
        Self::new(function, Self::DEFAULT_ENTRIES, lo, hi).expect("default table is well formed")
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    fn step_for(&self, n: usize) -> f64 {
        (self.input_max - self.input_min) / n as f64
    }

    fn check_header(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::MalformedTable(format!("need at least 2 entries, got {n}")));
        }
        if !(self.input_min.is_finite() && self.input_max.is_finite()) || self.input_min >= self.input_max {
            return Err(Error::MalformedTable(format!(
                "bad input range [{}, {}]",
                self.input_min, self.input_max
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_header(self.entries.len())?;
        if self.entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::MalformedTable("non-finite entry".into()));
        }
        if self.entries.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::MalformedTable("entries must be non-decreasing".into()));
        }
        Ok(())
    }

    pub fn index_of(&self, x: f64) -> usize {
        let n = self.entries.len();
        let x = x.clamp(self.input_min, self.input_max);
        let k = ((x - self.input_min) / self.step_for(n)).round();
        (k.max(0.0) as usize).min(n - 1)
    }

    pub fn lookup(&self, x: f64) -> f64 {
        self.entries[self.index_of(x)]
    }

    /// Lookup with a fixed-point input and output; entries are quantized to
    /// the input's format.
    pub fn lookup_fxp(&self, x: FxpValue) -> FxpValue {
        quantize_finite(self.lookup(x.to_f64()), x.format())
    }
}

/// Checked lookup for tables that came from outside the process.
pub fn lut_activate(x: f64, table: &LutTable) -> Result<f64> {
    table.validate()?;
    Ok(table.lookup(x))
}

/// Selector over the supported activation functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    HardSigmoid,
    HardTanh,
    RefSigmoid,
    RefTanh,
    LutSigmoid { table: LutTable },
    LutTanh { table: LutTable },
}

impl Activation {
    pub fn lut_sigmoid() -> Self {
        Activation::LutSigmoid {
            table: LutTable::baseline(LutFunction::Sigmoid),
        }
    }

    pub fn lut_tanh() -> Self {
        Activation::LutTanh {
            table: LutTable::baseline(LutFunction::Tanh),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::HardSigmoid => "hardsigmoid",
            Activation::HardTanh => "hardtanh",
            Activation::RefSigmoid => "sigmoid",
            Activation::RefTanh => "tanh",
            Activation::LutSigmoid { .. } => "lut_sigmoid",
            Activation::LutTanh { .. } => "lut_tanh",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::LutSigmoid { table } | Activation::LutTanh { table } => table.validate(),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::HardSigmoid => hardsigmoid(x),
            Activation::HardTanh => hardtanh(x),
            Activation::RefSigmoid => sigmoid(x),
            Activation::RefTanh => tanh(x),
            Activation::LutSigmoid { table } | Activation::LutTanh { table } => table.lookup(x),
        }
    }

    /// Derivative used for training.
    ///
    /// Hard functions use the open-interval derivative (zero at the
    /// breakpoints). Lookup tables pass the derivative of the function they
    /// sample straight through.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::HardSigmoid => {
                if x > -2.0 && x < 2.0 {
                    0.25
                } else {
                    0.0
                }
            }
            Activation::HardTanh => {
                if x > -1.0 && x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::RefSigmoid => LutFunction::Sigmoid.derivative(x),
            Activation::RefTanh => LutFunction::Tanh.derivative(x),
            Activation::LutSigmoid { table } | Activation::LutTanh { table } => table.function.derivative(x),
        }
    }

    /// Piecewise region of `x`, used to detect breakpoint crossings.
    pub fn region(&self, x: f64) -> i8 {
        let (lo, hi) = match self {
            Activation::HardSigmoid => (-2.0, 2.0),
            Activation::HardTanh => (-1.0, 1.0),
            Activation::LutSigmoid { table } | Activation::LutTanh { table } => {
                return table.index_of(x).min(i8::MAX as usize) as i8;
            }
            _ => return 0,
        };
        if x < lo {
            -1
        } else if x > hi {
            1
        } else {
            0
        }
    }

    /// Bit-exact fixed-point evaluation.
    pub fn eval_fxp(&self, x: FxpValue) -> FxpValue {
        match self {
            Activation::HardSigmoid => hardsigmoid_fxp(x),
            Activation::HardTanh => hardtanh_fxp(x),
            Activation::RefSigmoid => quantize_finite(sigmoid(x.to_f64()), x.format()),
            Activation::RefTanh => quantize_finite(tanh(x.to_f64()), x.format()),
            Activation::LutSigmoid { table } | Activation::LutTanh { table } => table.lookup_fxp(x),
        }
    }
}

/// Activation used for the reset/update gates and for the candidate state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPair {
    pub gate: Activation,
    pub candidate: Activation,
}

impl ActivationPair {
    /// Hardsigmoid gates, hardtanh candidate.
    pub fn hard() -> Self {
        Self {
            gate: Activation::HardSigmoid,
            candidate: Activation::HardTanh,
        }
    }

    pub fn reference() -> Self {
        Self {
            gate: Activation::RefSigmoid,
            candidate: Activation::RefTanh,
        }
    }

    pub fn lut() -> Self {
        Self {
            gate: Activation::lut_sigmoid(),
            candidate: Activation::lut_tanh(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        self.candidate.validate()
    }
}

impl Default for ActivationPair {
    fn default() -> Self {
        Self::hard()
    }
}
