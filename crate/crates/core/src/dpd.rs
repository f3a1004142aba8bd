//! GRU-RNN pre-distorter forward path.
//!
//! Three stages per sample: feature extraction `[I, Q, I²+Q², (I²+Q²)²]`, a
//! single GRU cell, and a linear output layer back to I/Q. The float engine
//! optionally fake-quantizes at every narrowing point so that it reproduces
//! the fixed-point engine bit for bit; the fixed-point engine works on raw
//! integer codes only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{self, narrow, quantize_finite, raw_dot, FxpFormat, FxpValue};
use crate::nonlin::ActivationPair;
use crate::quant::{fake_quantize, QuantConfig};
use crate::signal::{IqSample, Waveform};

pub const INPUT_FEATURES: usize = 4;
pub const HIDDEN_SIZE: usize = 10;
pub const OUTPUT_SIZE: usize = 2;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Weights and biases of the GRU cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights<T> {
    pub w_ir: Matrix<T>,
    pub w_iz: Matrix<T>,
    pub w_in: Matrix<T>,
    pub w_hr: Matrix<T>,
    pub w_hz: Matrix<T>,
    pub w_hn: Matrix<T>,
    pub b_ir: Vec<T>,
    pub b_iz: Vec<T>,
    pub b_in: Vec<T>,
    pub b_hr: Vec<T>,
    pub b_hz: Vec<T>,
    pub b_hn: Vec<T>,
}

/// Output layer mapping the hidden state to I/Q.
#[derive(Debug, Clone, PartialEq)]
pub struct FcWeights<T> {
    pub w_fc: Matrix<T>,
    pub b_fc: Vec<T>,
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub gru: GruWeights<T>,
    pub fc: FcWeights<T>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub const TENSOR_NAMES: [&str; 14] = [
    "w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn", "w_fc",
    "b_fc",
];

impl<T: Copy> Params<T> {
    pub fn filled(input: usize, hidden: usize, output: usize, v: T) -> Self {
        let m = |r, c| Matrix::filled(r, c, v);
        Self {
            gru: GruWeights {
                w_ir: m(hidden, input),
                w_iz: m(hidden, input),
                w_in: m(hidden, input),
                w_hr: m(hidden, hidden),
                w_hz: m(hidden, hidden),
                w_hn: m(hidden, hidden),
                b_ir: vec![v; hidden],
                b_iz: vec![v; hidden],
                b_in: vec![v; hidden],
                b_hr: vec![v; hidden],
                b_hz: vec![v; hidden],
                b_hn: vec![v; hidden],
            },
            fc: FcWeights {
                w_fc: m(output, hidden),
                b_fc: vec![v; output],
            },
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.gru.b_ir.len()
    }

    pub fn input_size(&self) -> usize {
        self.gru.w_ir.cols
    }

    pub fn output_size(&self) -> usize {
        self.fc.b_fc.len()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        fn mat<'a, T>(name: &'static str, m: &'a Matrix<T>) -> TensorRef<'a, T> {
            TensorRef {
                name,
                shape: vec![m.rows, m.cols],
                data: &m.data,
            }
        }
        fn vec<'a, T>(name: &'static str, v: &'a [T]) -> TensorRef<'a, T> {
            TensorRef {
                name,
                shape: vec![v.len()],
                data: v,
            }
        }
        let g = &self.gru;
        vec![
            mat("w_ir", &g.w_ir),
            mat("w_iz", &g.w_iz),
            mat("w_in", &g.w_in),
            mat("w_hr", &g.w_hr),
            mat("w_hz", &g.w_hz),
            mat("w_hn", &g.w_hn),
            vec("b_ir", &g.b_ir),
            vec("b_iz", &g.b_iz),
            vec("b_in", &g.b_in),
            vec("b_hr", &g.b_hr),
            vec("b_hz", &g.b_hz),
            vec("b_hn", &g.b_hn),
            mat("w_fc", &self.fc.w_fc),
            vec("b_fc", &self.fc.b_fc),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 14] {
        let g = &mut self.gru;
        [
            &mut g.w_ir.data,
            &mut g.w_iz.data,
            &mut g.w_in.data,
            &mut g.w_hr.data,
            &mut g.w_hz.data,
            &mut g.w_hn.data,
            &mut g.b_ir,
            &mut g.b_iz,
            &mut g.b_in,
            &mut g.b_hr,
            &mut g.b_hz,
            &mut g.b_hn,
            &mut self.fc.w_fc.data,
            &mut self.fc.b_fc,
        ]
    }

    /// Visit every parameter with its flat index (tensor order of
    /// [`TENSOR_NAMES`]).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut T)) {
        let mut i = 0;
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                f(i, v);
                i += 1;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrite every parameter from a flat slice in tensor order.
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: flat.len(),
            });
        }
        self.for_each_mut(|i, v| *v = flat[i]);
        Ok(())
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Params<U> {
        let g = &self.gru;
        let mut fm = |m: &Matrix<T>| m.map(|&v| f(v));
        let gm = GruWeights {
            w_ir: fm(&g.w_ir),
            w_iz: fm(&g.w_iz),
            w_in: fm(&g.w_in),
            w_hr: fm(&g.w_hr),
            w_hz: fm(&g.w_hz),
            w_hn: fm(&g.w_hn),
            b_ir: Vec::new(),
            b_iz: Vec::new(),
            b_in: Vec::new(),
            b_hr: Vec::new(),
            b_hz: Vec::new(),
            b_hn: Vec::new(),
        };
        let w_fc = fm(&self.fc.w_fc);
        let mut fv = |v: &Vec<T>| v.iter().map(|&x| f(x)).collect::<Vec<U>>();
        Params {
            gru: GruWeights {
                b_ir: fv(&g.b_ir),
                b_iz: fv(&g.b_iz),
                b_in: fv(&g.b_in),
                b_hr: fv(&g.b_hr),
                b_hz: fv(&g.b_hz),
                b_hn: fv(&g.b_hn),
                ..gm
            },
            fc: FcWeights {
                w_fc,
                b_fc: fv(&self.fc.b_fc),
            },
        }
    }

    pub fn validate_dims(&self) -> Result<()> {
        self.gru.validate_dims(self.input_size())?;
        self.fc.validate_dims(self.hidden_size())
    }
}

impl<T> GruWeights<T> {
    pub fn hidden_size(&self) -> usize {
        self.b_ir.len()
    }

    pub fn validate_dims(&self, input: usize) -> Result<()> {
        let h = self.b_ir.len();
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension { what, expected, got })
            }
        };
        for (what, m, cols) in [
            ("w_ir", &self.w_ir, input),
            ("w_iz", &self.w_iz, input),
            ("w_in", &self.w_in, input),
            ("w_hr", &self.w_hr, h),
            ("w_hz", &self.w_hz, h),
            ("w_hn", &self.w_hn, h),
        ] {
            check(what, h, m.rows)?;
            check(what, cols, m.cols)?;
            check(what, h * cols, m.data.len())?;
        }
        for (what, v) in [
            ("b_iz", &self.b_iz),
            ("b_in", &self.b_in),
            ("b_hr", &self.b_hr),
            ("b_hz", &self.b_hz),
            ("b_hn", &self.b_hn),
        ] {
            check(what, h, v.len())?;
        }
        Ok(())
    }
}

impl<T> FcWeights<T> {
    pub fn validate_dims(&self, hidden: usize) -> Result<()> {
        let out = self.b_fc.len();
        if self.w_fc.cols != hidden {
            return Err(Error::Dimension {
                what: "w_fc columns",
                expected: hidden,
                got: self.w_fc.cols,
            });
        }
        if self.w_fc.rows != out || self.w_fc.data.len() != out * hidden {
            return Err(Error::Dimension {
                what: "w_fc rows",
                expected: out,
                got: self.w_fc.rows,
            });
        }
        Ok(())
    }
}

impl Params<f64> {
    pub fn zeros() -> Self {
        Self::filled(INPUT_FEATURES, HIDDEN_SIZE, OUTPUT_SIZE, 0.0)
    }

    /// Uniform draw in `[-bound, bound]` for every parameter.
    pub fn random_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> Self {
        let mut p = Self::zeros();
        p.for_each_mut(|_, v| *v = rng.random_range(-bound..=bound));
        p
    }
}

/// Floating-point pre-distorter model.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdModel {
    pub params: Params<f64>,
    pub activations: ActivationPair,
}

impl DpdModel {
    pub fn new(params: Params<f64>, activations: ActivationPair) -> Result<Self> {
        params.validate_dims()?;
        if params.output_size() != OUTPUT_SIZE || params.input_size() != INPUT_FEATURES {
            return Err(Error::Dimension {
                what: "model input/output",
                expected: INPUT_FEATURES,
                got: params.input_size(),
            });
        }
        activations.validate()?;
        Ok(Self { params, activations })
    }

    pub fn zeros(activations: ActivationPair) -> Self {
        Self {
            params: Params::zeros(),
            activations,
        }
    }

    /// PyTorch-style initialization: uniform in ±1/sqrt(hidden).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, activations: ActivationPair) -> Self {
        let bound = 1.0 / (HIDDEN_SIZE as f64).sqrt();
        Self {
            params: Params::random_uniform(rng, bound),
            activations,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn hidden_size(&self) -> usize {
        self.params.hidden_size()
    }

    /// Stream a waveform through the model.
    pub fn forward(&self, wave: &Waveform, initial: &HiddenState) -> Result<(Waveform, HiddenState)> {
        run_streaming(&self.params, &self.activations, None, wave, initial)
    }

    /// Forward pass with every weight and every narrowed intermediate passed
    /// through `fake_quantize`. This is the value path used by QAT.
    pub fn forward_fake_quant(
        &self,
        wave: &Waveform,
        cfg: &QuantConfig,
        initial: &HiddenState,
    ) -> Result<(Waveform, HiddenState)> {
        cfg.validate()?;
        let eff = self.params.map(|w| fake_quantize(w, cfg.weight_fmt));
        run_streaming(&eff, &self.activations, Some(cfg.activation_fmt), wave, initial)
    }
}

/// Hidden state plus the gate values of the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            r: vec![0.0; hidden],
            z: vec![0.0; hidden],
            n: vec![0.0; hidden],
        }
    }

    pub fn from_h(h: Vec<f64>) -> Self {
        let n = h.len();
        Self {
            h,
            r: vec![0.0; n],
            z: vec![0.0; n],
            n: vec![0.0; n],
        }
    }
}

/// Zero initial state for the default model size.
pub fn reset_state() -> HiddenState {
    HiddenState::zeros(HIDDEN_SIZE)
}

/// `[I, Q, I²+Q², (I²+Q²)²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVec(pub [f64; INPUT_FEATURES]);

pub fn extract_features(s: IqSample) -> FeatureVec {
    FeatureVec(features(s, None))
}

/// Float features; with a format, every product and sum is narrowed the
/// way the fixed-point preprocessor narrows it.
fn features(s: IqSample, q: Option<FxpFormat>) -> [f64; INPUT_FEATURES] {
    let fq = |v: f64| q.map_or(v, |f| fake_quantize(v, f));
    let i = fq(s.re);
    let qv = fq(s.im);
    let p = fq(fq(i * i) + fq(qv * qv));
    [i, qv, p, fq(p * p)]
}

/// Fixed-point preprocessor: two squares, an add and a square.
pub fn extract_features_fxp(s: IqSample, fmt: FxpFormat) -> Result<[FxpValue; INPUT_FEATURES]> {
    let i = fxp::quantize(s.re, fmt)?;
    let q = fxp::quantize(s.im, fmt)?;
    let p = i.saturating_mul(i)?.saturating_add(q.saturating_mul(q)?)?;
    Ok([i, q, p, p.saturating_mul(p)?])
}

/// Every intermediate of a run of GRU steps, flattened `[t * hidden + j]`.
///
/// `acc_*` are exact sums before narrowing, `a_*` the narrowed
/// pre-activations, `*_act` activation outputs before narrowing.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub hidden: usize,
    pub steps: usize,
    pub x: Vec<[f64; INPUT_FEATURES]>,
    pub h_prev: Vec<f64>,
    pub acc_r: Vec<f64>,
    pub a_r: Vec<f64>,
    pub r_act: Vec<f64>,
    pub r: Vec<f64>,
    pub acc_z: Vec<f64>,
    pub a_z: Vec<f64>,
    pub z_act: Vec<f64>,
    pub z: Vec<f64>,
    pub acc_hn: Vec<f64>,
    pub a_hn: Vec<f64>,
    pub acc_n: Vec<f64>,
    pub a_n: Vec<f64>,
    pub n_act: Vec<f64>,
    pub n: Vec<f64>,
    pub acc_h: Vec<f64>,
    pub h: Vec<f64>,
    pub acc_out: Vec<f64>,
    pub out: Vec<f64>,
}

impl Trace {
    pub fn new(hidden: usize, outputs: usize, steps: usize) -> Self {
        let v = || vec![0.0; hidden * steps];
        Self {
            hidden,
            steps,
            x: vec![[0.0; INPUT_FEATURES]; steps],
            h_prev: v(),
            acc_r: v(),
            a_r: v(),
            r_act: v(),
            r: v(),
            acc_z: v(),
            a_z: v(),
            z_act: v(),
            z: v(),
            acc_hn: v(),
            a_hn: v(),
            acc_n: v(),
            a_n: v(),
            n_act: v(),
            n: v(),
            acc_h: v(),
            h: v(),
            acc_out: vec![0.0; outputs * steps],
            out: vec![0.0; outputs * steps],
        }
    }

    /// Resize for a new run, reusing the allocations.
    pub fn reset(&mut self, hidden: usize, outputs: usize, steps: usize) {
        self.hidden = hidden;
        self.steps = steps;
        self.x.clear();
        self.x.resize(steps, [0.0; INPUT_FEATURES]);
        for v in [
            &mut self.h_prev,
            &mut self.acc_r,
            &mut self.a_r,
            &mut self.r_act,
            &mut self.r,
            &mut self.acc_z,
            &mut self.a_z,
            &mut self.z_act,
            &mut self.z,
            &mut self.acc_hn,
            &mut self.a_hn,
            &mut self.acc_n,
            &mut self.a_n,
            &mut self.n_act,
            &mut self.n,
            &mut self.acc_h,
            &mut self.h,
        ] {
            v.clear();
            v.resize(hidden * steps, 0.0);
        }
        for v in [&mut self.acc_out, &mut self.out] {
            v.clear();
            v.resize(outputs * steps, 0.0);
        }
    }

    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn output(&self, t: usize) -> IqSample {
        IqSample::new(self.out[2 * t], self.out[2 * t + 1])
    }

    fn state_at(&self, t: usize) -> HiddenState {
        let s = t * self.hidden..(t + 1) * self.hidden;
        HiddenState {
            h: self.h[s.clone()].to_vec(),
            r: self.r[s.clone()].to_vec(),
            z: self.z[s.clone()].to_vec(),
            n: self.n[s].to_vec(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One GRU step in floating point, recorded at time `t` of `tr`.
fn gru_step_into(
    w: &GruWeights<f64>,
    act: &ActivationPair,
    q: Option<FxpFormat>,
    x: &[f64; INPUT_FEATURES],
    h_prev: &[f64],
    tr: &mut Trace,
    t: usize,
) {
    let hs = tr.hidden;
    let fq = |v: f64| q.map_or(v, |f| fake_quantize(v, f));
    let base = t * hs;
    tr.x[t] = *x;
    tr.h_prev[base..base + hs].copy_from_slice(h_prev);
    for j in 0..hs {
        let k = base + j;
        let acc_r = dot(w.w_ir.row(j), x) + w.b_ir[j] + dot(w.w_hr.row(j), h_prev) + w.b_hr[j];
        let a_r = fq(acc_r);
        let r_act = act.gate.eval(a_r);
        let r = fq(r_act);

        let acc_z = dot(w.w_iz.row(j), x) + w.b_iz[j] + dot(w.w_hz.row(j), h_prev) + w.b_hz[j];
        let a_z = fq(acc_z);
        let z_act = act.gate.eval(a_z);
        let z = fq(z_act);

        let acc_hn = dot(w.w_hn.row(j), h_prev) + w.b_hn[j];
        let a_hn = fq(acc_hn);
        let acc_n = dot(w.w_in.row(j), x) + w.b_in[j] + r * a_hn;
        let a_n = fq(acc_n);
        let n_act = act.candidate.eval(a_n);
        let n = fq(n_act);

        let acc_h = (1.0 - z) * n + z * h_prev[j];
        let h = fq(acc_h);

        tr.acc_r[k] = acc_r;
        tr.a_r[k] = a_r;
        tr.r_act[k] = r_act;
        tr.r[k] = r;
        tr.acc_z[k] = acc_z;
        tr.a_z[k] = a_z;
        tr.z_act[k] = z_act;
        tr.z[k] = z;
        tr.acc_hn[k] = acc_hn;
        tr.a_hn[k] = a_hn;
        tr.acc_n[k] = acc_n;
        tr.a_n[k] = a_n;
        tr.n_act[k] = n_act;
        tr.n[k] = n;
        tr.acc_h[k] = acc_h;
        tr.h[k] = h;
    }
}

fn fc_into(w: &FcWeights<f64>, q: Option<FxpFormat>, tr: &mut Trace, t: usize) {
    let hs = tr.hidden;
    let outs = w.b_fc.len();
    for o in 0..outs {
        let acc = dot(w.w_fc.row(o), &tr.h[t * hs..(t + 1) * hs]) + w.b_fc[o];
        tr.acc_out[t * outs + o] = acc;
        tr.out[t * outs + o] = q.map_or(acc, |f| fake_quantize(acc, f));
    }
}

/// Run a sequence from a zero state and keep every intermediate (for
/// backpropagation). `params` are the effective (already fake-quantized)
/// weights.
pub(crate) fn run_traced_into(
    params: &Params<f64>,
    act: &ActivationPair,
    q: Option<FxpFormat>,
    inputs: &[IqSample],
    tr: &mut Trace,
) {
    let hs = params.hidden_size();
    tr.reset(hs, params.output_size(), inputs.len());
    let mut prev = vec![0.0; hs];
    for (t, &s) in inputs.iter().enumerate() {
        let x = features(s, q);
        if t > 0 {
            prev.copy_from_slice(&tr.h[(t - 1) * hs..t * hs]);
        }
        gru_step_into(&params.gru, act, q, &x, &prev, tr, t);
        fc_into(&params.fc, q, tr, t);
    }
}

fn run_streaming(
    params: &Params<f64>,
    act: &ActivationPair,
    q: Option<FxpFormat>,
    wave: &Waveform,
    initial: &HiddenState,
) -> Result<(Waveform, HiddenState)> {
    if wave.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    wave.check_finite()?;
    let hs = params.hidden_size();
    if initial.h.len() != hs {
        return Err(Error::Dimension {
            what: "initial hidden state",
            expected: hs,
            got: initial.h.len(),
        });
    }
    let mut tr = Trace::new(hs, params.output_size(), 1);
    let mut h_prev = initial.h.clone();
    let mut out = Vec::with_capacity(wave.len());
    for &s in &wave.samples {
        let x = features(s, q);
        gru_step_into(&params.gru, act, q, &x, &h_prev, &mut tr, 0);
        fc_into(&params.fc, q, &mut tr, 0);
        h_prev.copy_from_slice(tr.h_at(0));
        out.push(tr.output(0));
    }
    Ok((wave.with_samples(out), tr.state_at(0)))
}

/// One floating-point GRU step.
pub fn gru_step(
    x: &FeatureVec,
    h_prev: &HiddenState,
    w: &GruWeights<f64>,
    act: &ActivationPair,
) -> Result<HiddenState> {
    w.validate_dims(INPUT_FEATURES)?;
    if h_prev.h.len() != w.hidden_size() {
        return Err(Error::Dimension {
            what: "h_prev",
            expected: w.hidden_size(),
            got: h_prev.h.len(),
        });
    }
    let mut tr = Trace::new(w.hidden_size(), 0, 1);
    gru_step_into(w, act, None, &x.0, &h_prev.h, &mut tr, 0);
    Ok(tr.state_at(0))
}

/// `W_fc · h + b_fc` as an I/Q sample.
pub fn fc_output(h: &HiddenState, w: &FcWeights<f64>) -> Result<IqSample> {
    w.validate_dims(h.h.len())?;
    if w.b_fc.len() != OUTPUT_SIZE {
        return Err(Error::Dimension {
            what: "fc outputs",
            expected: OUTPUT_SIZE,
            got: w.b_fc.len(),
        });
    }
    let i = dot(w.w_fc.row(0), &h.h) + w.b_fc[0];
    let q = dot(w.w_fc.row(1), &h.h) + w.b_fc[1];
    Ok(IqSample::new(i, q))
}

/// Stream a waveform through a float model, threading the hidden state.
pub fn dpd_forward(wave: &Waveform, model: &DpdModel, initial: &HiddenState) -> Result<(Waveform, HiddenState)> {
    model.forward(wave, initial)
}

/// Hidden state of the fixed-point engine, as raw codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedHiddenState {
    pub h: Vec<FxpValue>,
    pub r: Vec<FxpValue>,
    pub z: Vec<FxpValue>,
    pub n: Vec<FxpValue>,
}

impl FixedHiddenState {
    pub fn zeros(hidden: usize, fmt: FxpFormat) -> Self {
        let z = vec![FxpValue::zero(fmt); hidden];
        Self {
            h: z.clone(),
            r: z.clone(),
            z: z.clone(),
            n: z,
        }
    }

    pub fn dequantized(&self) -> HiddenState {
        let d = |v: &Vec<FxpValue>| v.iter().map(|x| x.to_f64()).collect();
        HiddenState {
            h: d(&self.h),
            r: d(&self.r),
            z: d(&self.z),
            n: d(&self.n),
        }
    }
}

/// Fixed-point pre-distorter: weights as raw codes in `weight_fmt`,
/// activations narrowed to `activation_fmt` at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDpdModel {
    pub params: Params<i32>,
    pub quant: QuantConfig,
    pub activations: ActivationPair,
}

impl FixedDpdModel {
    pub fn new(params: Params<i32>, quant: QuantConfig, activations: ActivationPair) -> Result<Self> {
        params.validate_dims()?;
        quant.validate()?;
        activations.validate()?;
        let (lo, hi) = (quant.weight_fmt.raw_min(), quant.weight_fmt.raw_max());
        if params.flatten().iter().any(|&r| (r as i64) < lo || (r as i64) > hi) {
            return Err(Error::InvalidConfig(format!(
                "weight code outside {} range",
                quant.weight_fmt
            )));
        }
        Ok(Self {
            params,
            quant,
            activations,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.params.hidden_size()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Dequantized weights as a float model.
    pub fn to_float(&self) -> DpdModel {
        let lsb = self.quant.weight_fmt.lsb();
        DpdModel {
            params: self.params.map(|r| r as f64 * lsb),
            activations: self.activations.clone(),
        }
    }

    pub fn reset_state(&self) -> FixedHiddenState {
        FixedHiddenState::zeros(self.hidden_size(), self.quant.activation_fmt)
    }

    /// One bit-exact step; returns the new state and the raw output codes.
    pub fn step(&self, x: &[FxpValue; INPUT_FEATURES], prev: &FixedHiddenState) -> (FixedHiddenState, [FxpValue; 2]) {
        let af = self.quant.activation_fmt;
        let fw = self.quant.weight_fmt.frac_bits();
        let fa = af.frac_bits();
        let f_wa = fw + fa;
        let f_aa = 2 * fa;
        let f_n = f_wa.max(f_aa);
        let one = 1i128 << fa;
        let g = &self.params.gru;
        let xr: [i32; INPUT_FEATURES] = [x[0].raw(), x[1].raw(), x[2].raw(), x[3].raw()];
        let hr: Vec<i32> = prev.h.iter().map(|v| v.raw()).collect();
        let hs = self.hidden_size();
        let mut next = FixedHiddenState::zeros(hs, af);
        for j in 0..hs {
            let acc_r = raw_dot(g.w_ir.row(j), &xr)
                + raw_dot(g.w_hr.row(j), &hr)
                + (g.b_ir[j] as i128 + g.b_hr[j] as i128) * one;
            let r = self.activations.gate.eval_fxp(narrow(acc_r, f_wa, af));

            let acc_z = raw_dot(g.w_iz.row(j), &xr)
                + raw_dot(g.w_hz.row(j), &hr)
                + (g.b_iz[j] as i128 + g.b_hz[j] as i128) * one;
            let z = self.activations.gate.eval_fxp(narrow(acc_z, f_wa, af));

            let acc_hn = raw_dot(g.w_hn.row(j), &hr) + g.b_hn[j] as i128 * one;
            let a_hn = narrow(acc_hn, f_wa, af);
            let acc_in = raw_dot(g.w_in.row(j), &xr) + g.b_in[j] as i128 * one;
            let acc_n = (acc_in << (f_n - f_wa)) + ((r.raw() as i128 * a_hn.raw() as i128) << (f_n - f_aa));
            let n = self.activations.candidate.eval_fxp(narrow(acc_n, f_n, af));

            let zr = z.raw() as i128;
            let acc_h = (one - zr) * n.raw() as i128 + zr * hr[j] as i128;
            next.h[j] = narrow(acc_h, f_aa, af);
            next.r[j] = r;
            next.z[j] = z;
            next.n[j] = n;
        }
        let hn: Vec<i32> = next.h.iter().map(|v| v.raw()).collect();
        let fc = &self.params.fc;
        let out = [0, 1].map(|o| narrow(raw_dot(fc.w_fc.row(o), &hn) + fc.b_fc[o] as i128 * one, f_wa, af));
        (next, out)
    }

    /// Stream a waveform through the fixed-point engine. Output samples are
    /// the dequantized output codes.
    pub fn forward(&self, wave: &Waveform, initial: &FixedHiddenState) -> Result<(Waveform, FixedHiddenState)> {
        if wave.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        wave.check_finite()?;
        if initial.h.len() != self.hidden_size() {
            return Err(Error::Dimension {
                what: "initial hidden state",
                expected: self.hidden_size(),
                got: initial.h.len(),
            });
        }
        let af = self.quant.activation_fmt;
        let mut state = initial.clone();
        let mut out = Vec::with_capacity(wave.len());
        for &s in &wave.samples {
            let x = extract_features_fxp(s, af)?;
            let (next, y) = self.step(&x, &state);
            state = next;
            out.push(IqSample::new(y[0].to_f64(), y[1].to_f64()));
        }
        Ok((wave.with_samples(out), state))
    }
}

/// Quantize a float to the given format without the finiteness check.
pub(crate) fn code(x: f64, fmt: FxpFormat) -> i32 {
    quantize_finite(x, fmt).raw()
}
