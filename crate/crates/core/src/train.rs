//! Direct-learning trainer: the pre-distorter is optimized through the
//! known PA model so that `PA(DPD(x))` approaches `g·x`.
//!
//! Gradients are exact backpropagation through time across each frame,
//! through the PA and, in QAT mode, through fake-quantization via the
//! straight-through estimator.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dpd::{reset_state, run_traced_into, DpdModel, Params, Trace};
use crate::error::{Error, Result};
use crate::fxp::FxpFormat;
use crate::pa::PaModel;
use crate::quant::{fake_quantize, ste_mask, QuantConfig};
use crate::signal::{IqSample, Waveform};

/// One gradient entry per model parameter.
pub type GradientSet = Params<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared complex error per sample.
    #[default]
    Mse,
    /// Squared error normalized by the target energy of the frame.
    Nmse,
}

/// How a frame's loss is formed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    pub kind: LossKind,
    /// Fake-quantize weights and activations in the forward pass.
    pub qat: Option<QuantConfig>,
    /// Leading samples of each frame left out of the loss (the GRU and PA
    /// memories start empty there).
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub frame_length: usize,
    pub stride: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub qat: Option<QuantConfig>,
    pub loss: LossKind,
    pub warmup: usize,
    /// Cap on frames drawn per epoch (a fresh random subset each epoch);
    /// `None` uses every frame.
    pub frames_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            frame_length: 50,
            stride: 1,
            initial_lr: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            seed: 0,
            qat: None,
            loss: LossKind::Mse,
            warmup: 0,
            frames_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.frame_length == 0 || self.stride == 0 {
            return bad("batch_size, frame_length and stride must be positive");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must be in (0, 1)");
        }
        if !(self.min_lr >= 0.0) {
            return bad("min_lr must be non-negative");
        }
        if self.warmup >= self.frame_length {
            return bad("warmup must be shorter than frame_length");
        }
        if self.frames_per_epoch == Some(0) {
            return bad("frames_per_epoch must be positive");
        }
        if let Some(q) = &self.qat {
            q.validate()?;
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            kind: self.loss,
            qat: self.qat,
            warmup: self.warmup,
        }
    }
}

/// Borrowed input/target slices of one frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub input: &'a [IqSample],
    pub target: &'a [IqSample],
}

/// Sliding windows over aligned input/target sequences.
#[derive(Debug, Clone)]
pub struct FrameSet {
    input: Vec<IqSample>,
    target: Vec<IqSample>,
    starts: Vec<usize>,
    frame_length: usize,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn frame(&self, i: usize) -> Frame<'_> {
        let s = self.starts[i];
        Frame {
            input: &self.input[s..s + self.frame_length],
            target: &self.target[s..s + self.frame_length],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Frame<'_>> {
        (0..self.len()).map(|i| self.frame(i))
    }
}

/// Windows of `frame_length` samples every `stride` samples.
pub fn frame_dataset(wave_in: &Waveform, wave_target: &Waveform, frame_length: usize, stride: usize) -> Result<FrameSet> {
    if wave_in.len() != wave_target.len() {
        return Err(Error::LengthMismatch {
            left: wave_in.len(),
            right: wave_target.len(),
        });
    }
    if frame_length == 0 || stride == 0 {
        return Err(Error::InvalidConfig("frame_length and stride must be positive".into()));
    }
    if wave_in.len() < frame_length {
        return Err(Error::InvalidConfig(format!(
            "waveform of {} samples is shorter than the frame length {frame_length}",
            wave_in.len()
        )));
    }
    let starts = (0..=wave_in.len() - frame_length).step_by(stride).collect();
    Ok(FrameSet {
        input: wave_in.samples.clone(),
        target: wave_target.samples.clone(),
        starts,
        frame_length,
    })
}

/// The linear target `g·x` with `g` the PA small-signal gain.
pub fn linear_target(x: &Waveform, pa: &PaModel) -> Waveform {
    x.scaled(pa.small_signal_gain())
}

fn loss_weights(kind: LossKind, target: &[IqSample], warmup: usize) -> f64 {
    let counted = &target[warmup.min(target.len())..];
    match kind {
        LossKind::Mse => 1.0 / counted.len().max(1) as f64,
        LossKind::Nmse => {
            let e: f64 = counted.iter().map(|t| t.norm_sqr()).sum();
            if e > 0.0 {
                1.0 / e
            } else {
                1.0 / counted.len().max(1) as f64
            }
        }
    }
}

fn frame_error(pa_out: &[IqSample], frame: &Frame, opts: &LossOptions) -> f64 {
    let w = loss_weights(opts.kind, frame.target, opts.warmup);
    pa_out
        .iter()
        .zip(frame.target)
        .skip(opts.warmup)
        .map(|(y, t)| (y - t).norm_sqr())
        .sum::<f64>()
        * w
}

fn effective_params(model: &DpdModel, qat: Option<&QuantConfig>) -> Params<f64> {
    match qat {
        Some(q) => model.params.map(|w| fake_quantize(w, q.weight_fmt)),
        None => model.params.clone(),
    }
}

/// Reusable buffers for repeated frame evaluations.
#[derive(Debug, Default)]
pub struct Workspace {
    trace: Trace,
}

/// Loss of one frame; the GRU state starts at zero.
pub fn forward_loss(model: &DpdModel, frame: &Frame, pa: &PaModel, loss: LossKind) -> Result<f64> {
    let opts = LossOptions {
        kind: loss,
        ..LossOptions::default()
    };
    forward_loss_with(model, frame, pa, &opts)
}

pub fn forward_loss_with(model: &DpdModel, frame: &Frame, pa: &PaModel, opts: &LossOptions) -> Result<f64> {
    check_frame(frame)?;
    let eff = effective_params(model, opts.qat.as_ref());
    let mut ws = Workspace::default();
    run_traced_into(&eff, &model.activations, opts.qat.map(|q| q.activation_fmt), frame.input, &mut ws.trace);
    let d: Vec<IqSample> = (0..frame.input.len()).map(|t| ws.trace.output(t)).collect();
    Ok(frame_error(&pa.apply_samples(&d), frame, opts))
}

fn check_frame(frame: &Frame) -> Result<()> {
    if frame.input.len() != frame.target.len() {
        return Err(Error::LengthMismatch {
            left: frame.input.len(),
            right: frame.target.len(),
        });
    }
    if frame.input.is_empty() {
        return Err(Error::Empty("frame"));
    }
    Ok(())
}

/// Analytic gradient of the frame loss (float model, no quantization).
pub fn backward(model: &DpdModel, frame: &Frame, pa: &PaModel, loss: LossKind) -> Result<GradientSet> {
    let opts = LossOptions {
        kind: loss,
        ..LossOptions::default()
    };
    let mut grad = Params::filled(model.params.input_size(), model.hidden_size(), model.params.output_size(), 0.0);
    let eff = model.params.clone();
    loss_and_gradient(model, &eff, frame, pa, &opts, &mut Workspace::default(), &mut grad)?;
    Ok(grad)
}

/// Loss of one frame; its gradient is *added* to `grad`.
///
/// `eff` are the effective forward weights (fake-quantized in QAT mode).
pub fn loss_and_gradient(
    model: &DpdModel,
    eff: &Params<f64>,
    frame: &Frame,
    pa: &PaModel,
    opts: &LossOptions,
    ws: &mut Workspace,
    grad: &mut GradientSet,
) -> Result<f64> {
    check_frame(frame)?;
    let q: Option<FxpFormat> = opts.qat.map(|c| c.activation_fmt);
    let tr = &mut ws.trace;
    run_traced_into(eff, &model.activations, q, frame.input, tr);
    let steps = frame.input.len();
    let hs = tr.hidden;
    for t in 0..steps {
        let row = t * hs..(t + 1) * hs;
        if tr.h[row].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntermediate { step: t, what: "hidden state" });
        }
        if !(tr.out[2 * t].is_finite() && tr.out[2 * t + 1].is_finite()) {
            return Err(Error::NonFiniteIntermediate { step: t, what: "output" });
        }
    }

    let d: Vec<IqSample> = (0..steps).map(|t| tr.output(t)).collect();
    let y = pa.apply_samples(&d);
    let w = loss_weights(opts.kind, frame.target, opts.warmup);
    let mut loss = 0.0;
    let mut grad_y = vec![Complex64::new(0.0, 0.0); steps];
    for t in opts.warmup..steps {
        let e = y[t] - frame.target[t];
        loss += e.norm_sqr() * w;
        grad_y[t] = e * (2.0 * w);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteIntermediate { step: steps - 1, what: "loss" });
    }
    let grad_d = pa.backward(&d, &grad_y);

    let mask = |v: f64| q.map_or(1.0, |f| ste_mask(v, f));
    let act = &model.activations;
    let g = &eff.gru;
    let fc = &eff.fc;
    let mut dh_next = vec![0.0; hs];
    let mut dh = vec![0.0; hs];
    let mut d_acc_r = vec![0.0; hs];
    let mut d_acc_z = vec![0.0; hs];
    let mut d_acc_n = vec![0.0; hs];
    let mut d_acc_hn = vec![0.0; hs];
    for t in (0..steps).rev() {
        let base = t * hs;
        let h_t = &tr.h[base..base + hs];
        let h_prev = &tr.h_prev[base..base + hs];
        let x = &tr.x[t];

        let d_out = [
            grad_d[t].re * mask(tr.acc_out[2 * t]),
            grad_d[t].im * mask(tr.acc_out[2 * t + 1]),
        ];
        for (o, &dv) in d_out.iter().enumerate() {
            grad.fc.b_fc[o] += dv;
            let wrow = &mut grad.fc.w_fc.data[o * hs..(o + 1) * hs];
            for k in 0..hs {
                wrow[k] += dv * h_t[k];
            }
        }
        for k in 0..hs {
            dh[k] = dh_next[k] + d_out[0] * fc.w_fc.data[k] + d_out[1] * fc.w_fc.data[hs + k];
        }

        dh_next.fill(0.0);
        for j in 0..hs {
            let k = base + j;
            let d_acc_h = dh[j] * mask(tr.acc_h[k]);
            let z = tr.z[k];
            let n = tr.n[k];
            let dn = d_acc_h * (1.0 - z);
            let dz = d_acc_h * (h_prev[j] - n);
            dh_next[j] += d_acc_h * z;

            let d_a_n = dn * mask(tr.n_act[k]) * act.candidate.derivative(tr.a_n[k]);
            let dan = d_a_n * mask(tr.acc_n[k]);
            d_acc_n[j] = dan;
            let dr = dan * tr.a_hn[k];
            d_acc_hn[j] = dan * tr.r[k] * mask(tr.acc_hn[k]);

            d_acc_z[j] = dz * mask(tr.z_act[k]) * act.gate.derivative(tr.a_z[k]) * mask(tr.acc_z[k]);
            d_acc_r[j] = dr * mask(tr.r_act[k]) * act.gate.derivative(tr.a_r[k]) * mask(tr.acc_r[k]);
        }

        let gg = &mut grad.gru;
        let ni = x.len();
        for j in 0..hs {
            let (dr, dz, dn, dhn) = (d_acc_r[j], d_acc_z[j], d_acc_n[j], d_acc_hn[j]);
            gg.b_ir[j] += dr;
            gg.b_hr[j] += dr;
            gg.b_iz[j] += dz;
            gg.b_hz[j] += dz;
            gg.b_in[j] += dn;
            gg.b_hn[j] += dhn;
            for c in 0..ni {
                gg.w_ir.data[j * ni + c] += dr * x[c];
                gg.w_iz.data[j * ni + c] += dz * x[c];
                gg.w_in.data[j * ni + c] += dn * x[c];
            }
            for c in 0..hs {
                gg.w_hr.data[j * hs + c] += dr * h_prev[c];
                gg.w_hz.data[j * hs + c] += dz * h_prev[c];
                gg.w_hn.data[j * hs + c] += dhn * h_prev[c];
                dh_next[c] += g.w_hr.data[j * hs + c] * dr + g.w_hz.data[j * hs + c] * dz + g.w_hn.data[j * hs + c] * dhn;
            }
        }
    }
    Ok(loss)
}

/// Chain the STE of weight fake-quantization into a gradient.
fn apply_weight_ste(grad: &mut GradientSet, model: &DpdModel, qat: Option<&QuantConfig>) {
    if let Some(q) = qat {
        let flat = model.params.flatten();
        grad.for_each_mut(|i, g| *g *= ste_mask(flat[i], q.weight_fmt));
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params<f64>, grad: &GradientSet, lr: f64) {
        self.t += 1;
        let g = grad.flatten();
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (m, v, b1, b2, eps) = (&mut self.m, &mut self.v, self.beta1, self.beta2, self.eps);
        params.for_each_mut(|i, p| {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        });
    }
}

/// Reduce-on-plateau schedule: after `patience` consecutive epochs without a
/// relative improvement of at least `threshold`, the rate is multiplied by
/// `factor` (not below `min_lr`) and the count restarts.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            min_lr,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record an epoch's validation loss; returns the rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best * (1.0 - self.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned (`None` if no epoch ran).
    pub best_epoch: Option<usize>,
}

/// Closed-loop mean squared error of `PA(DPD(x))` against `g·x`, running
/// the pre-distorter as a stream from a zero state.
pub fn closed_loop_mse(model: &DpdModel, x: &Waveform, pa: &PaModel, qat: Option<&QuantConfig>) -> Result<f64> {
    let (d, _) = match qat {
        Some(q) => model.forward_fake_quant(x, q, &reset_state())?,
        None => model.forward(x, &reset_state())?,
    };
    let y = pa.apply_samples(&d.samples);
    let g = pa.small_signal_gain();
    let e: f64 = y.iter().zip(&x.samples).map(|(y, x)| (y - g * x).norm_sqr()).sum();
    Ok(e / x.len() as f64)
}

/// Train on `train_x` with early model selection on `val_x`.
///
/// Each epoch visits the frames in a seeded random order in minibatches of
/// `batch_size`, averaging frame gradients. The validation loss is
/// [`closed_loop_mse`] over the whole validation span.
pub fn train(
    model: &DpdModel,
    train_x: &Waveform,
    val_x: &Waveform,
    pa: &PaModel,
    cfg: &TrainConfig,
) -> Result<(DpdModel, TrainHistory)> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model.clone(), history));
    }
    let frames = frame_dataset(train_x, &linear_target(train_x, pa), cfg.frame_length, cfg.stride)?;
    if val_x.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let opts = cfg.loss_options();
    let qat = cfg.qat.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model.clone();
    let mut best = (f64::INFINITY, model.clone());
    let mut adam = Adam::new(model.param_count());
    let mut sched = PlateauScheduler::new(cfg.initial_lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut ws = Workspace::default();
    let zero = Params::filled(model.params.input_size(), model.hidden_size(), model.params.output_size(), 0.0);
    let mut grad = zero.clone();

    for epoch in 0..cfg.epochs {
        let lr = sched.lr;
        order.shuffle(&mut rng);
        let take = cfg.frames_per_epoch.map_or(order.len(), |n| n.min(order.len()));
        let mut loss_sum = 0.0;
        for batch in order[..take].chunks(cfg.batch_size) {
            let eff = effective_params(&current, qat);
            grad.clone_from(&zero);
            for &i in batch {
                loss_sum += loss_and_gradient(&current, &eff, &frames.frame(i), pa, &opts, &mut ws, &mut grad)
                    .map_err(|_| Error::Diverged { epoch })?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.for_each_mut(|_, g| *g *= scale);
            apply_weight_ste(&mut grad, &current, qat);
            adam.step(&mut current.params, &grad, lr);
        }
        let train_loss = loss_sum / take as f64;
        let val_loss = closed_loop_mse(&current, val_x, pa, qat)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        if val_loss < best.0 {
            best = (val_loss, current.clone());
            history.best_epoch = Some(epoch);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        sched.step(val_loss);
    }
    Ok((best.1, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::ActivationPair;
    use crate::pa::make_default_pa;
    use rand::Rng;

    fn wave(n: usize, seed: u64, amp: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..n)
                .map(|_| Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)))
                .collect(),
            1.0,
        )
    }

    #[test]
    fn frame_counts() {
        let w = wave(50, 1, 0.5);
        assert_eq!(frame_dataset(&w, &w, 50, 1).unwrap().len(), 1);
        let w = wave(52, 1, 0.5);
        assert_eq!(frame_dataset(&w, &w, 50, 1).unwrap().len(), 3);
        let w = wave(100, 1, 0.5);
        let f = frame_dataset(&w, &w, 50, 10).unwrap();
        assert_eq!(f.len(), 6);
        assert_eq!(f.frame(5).input[0], w.samples[50]);
        assert!(frame_dataset(&wave(49, 1, 0.5), &wave(49, 1, 0.5), 50, 1).is_err());
    }

    #[test]
    fn zero_model_loss_is_target_power() {
        let m = DpdModel::zeros(ActivationPair::hard());
        let x = wave(20, 2, 0.6);
        let pa = make_default_pa();
        let t = linear_target(&x, &pa);
        let f = Frame {
            input: &x.samples,
            target: &t.samples,
        };
        let l = forward_loss(&m, &f, &pa, LossKind::Mse).unwrap();
        let want = t.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / 20.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn zero_model_zero_input_has_zero_gradient() {
        let m = DpdModel::zeros(ActivationPair::reference());
        let x = vec![Complex64::new(0.0, 0.0); 10];
        let f = Frame { input: &x, target: &x };
        let g = backward(&m, &f, &make_default_pa(), LossKind::Mse).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = Params::zeros();
        let mut g = Params::zeros();
        g.gru.b_ir[0] = 0.3;
        g.fc.b_fc[1] = -2.0;
        let mut adam = Adam::new(p.param_count());
        adam.step(&mut p, &g, 1e-3);
        assert!(p.gru.b_ir[0] < 0.0);
        assert!(p.fc.b_fc[1] > 0.0);
        assert_eq!(p.gru.b_iz[0], 0.0);
    }

    #[test]
    fn plateau_reduces_once_per_window() {
        let mut s = PlateauScheduler::new(1e-3, 3, 0.5, 1e-6);
        assert_eq!(s.step(1.0), 1e-3);
        assert_eq!(s.step(1.0), 1e-3);
        assert_eq!(s.step(1.0), 1e-3);
        assert_eq!(s.step(1.0), 5e-4);
        assert_eq!(s.step(1.0), 5e-4);
        assert_eq!(s.step(0.5), 5e-4);
        assert_eq!(s.step(0.5), 5e-4);
        let mut s = PlateauScheduler::new(1e-5, 1, 0.05, 1e-6);
        s.step(1.0);
        assert_eq!(s.step(1.0), 1e-6);
        assert_eq!(s.step(1.0), 1e-6);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DpdModel::random(&mut rng, ActivationPair::hard());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, h) = train(&m, &wave(200, 1, 0.5), &wave(60, 2, 0.5), &make_default_pa(), &cfg).unwrap();
        assert_eq!(out, m);
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn loss_decreases_on_linear_pa() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DpdModel::random(&mut rng, ActivationPair::hard());
        let pa = PaModel::linear(Complex64::new(1.0, 0.0));
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 16,
            frame_length: 20,
            stride: 5,
            initial_lr: 3e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, h) = train(&m, &wave(800, 5, 0.5), &wave(200, 6, 0.5), &pa, &cfg).unwrap();
        let tl: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
        for w in tl.windows(2) {
            assert!(w[1] < w[0], "{tl:?}");
        }
        assert!(h.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = DpdModel::random(&mut rng, ActivationPair::hard());
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            frame_length: 10,
            stride: 3,
            seed: 9,
            qat: Some(QuantConfig::default()),
            ..TrainConfig::default()
        };
        let pa = make_default_pa();
        let a = train(&m, &wave(300, 1, 0.5), &wave(100, 2, 0.5), &pa, &cfg).unwrap();
        let b = train(&m, &wave(300, 1, 0.5), &wave(100, 2, 0.5), &pa, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut m = DpdModel::zeros(ActivationPair::reference());
        m.params.fc.b_fc = vec![1e200, 0.0];
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            frame_length: 10,
            stride: 10,
            ..TrainConfig::default()
        };
        let r = train(&m, &wave(100, 1, 0.5), &wave(50, 2, 0.5), &make_default_pa(), &cfg);
        assert!(matches!(r, Err(Error::Diverged { epoch: 0 })), "{r:?}");
    }

    /// Central differences over every parameter. Returns the worst relative
    /// error among the checked parameters and the number skipped because a
    /// perturbation moved some activation across a breakpoint.
    fn fd_check(m: &DpdModel, x: &[Complex64], t: &[Complex64], pa: &PaModel, opts: &LossOptions) -> (f64, usize) {
        let frame = Frame { input: x, target: t };
        let mut grad = Params::zeros();
        let eff = effective_params(m, opts.qat.as_ref());
        loss_and_gradient(m, &eff, &frame, pa, opts, &mut Workspace::default(), &mut grad).unwrap();
        apply_weight_ste(&mut grad, m, opts.qat.as_ref());
        let analytic = grad.flatten();
        let base = m.params.flatten();
        let eps = 1e-5;
        let regions = |p: &[f64]| {
            let mut mm = m.clone();
            mm.params.assign_flat(p).unwrap();
            let mut ws = Workspace::default();
            run_traced_into(&mm.params, &mm.activations, None, x, &mut ws.trace);
            let tr = &ws.trace;
            let mut v: Vec<i8> = Vec::new();
            for k in 0..tr.a_r.len() {
                v.push(mm.activations.gate.region(tr.a_r[k]));
                v.push(mm.activations.gate.region(tr.a_z[k]));
                v.push(mm.activations.candidate.region(tr.a_n[k]));
            }
            v
        };
        let r0 = regions(&base);
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            let rp = regions(&p);
            let mut mp = m.clone();
            mp.params.assign_flat(&p).unwrap();
            let lp = forward_loss_with(&mp, &frame, pa, opts).unwrap();
            p[i] = base[i] - eps;
            let rm = regions(&p);
            mp.params.assign_flat(&p).unwrap();
            let lm = forward_loss_with(&mp, &frame, pa, opts).unwrap();
            if rp != r0 || rm != r0 {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        (worst, skipped)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pa = make_default_pa();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let m = DpdModel::random(&mut rng, ActivationPair::reference());
            let x = wave(10, 200 + seed, 0.7);
            let t = linear_target(&x, &pa);
            for kind in [LossKind::Mse, LossKind::Nmse] {
                let opts = LossOptions { kind, ..LossOptions::default() };
                let (worst, skipped) = fd_check(&m, &x.samples, &t.samples, &pa, &opts);
                assert_eq!(skipped, 0);
                assert!(worst < 1e-4, "seed {seed}: {worst}");
            }
            let m = DpdModel { activations: ActivationPair::hard(), ..m };
            let opts = LossOptions { warmup: 2, ..LossOptions::default() };
            let (worst, skipped) = fd_check(&m, &x.samples, &t.samples, &pa, &opts);
            assert!(skipped < 100, "{skipped}");
            assert!(worst < 1e-4, "hard seed {seed}: {worst}");
        }
    }
}
