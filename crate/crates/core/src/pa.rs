//! Generalized memory polynomial power-amplifier model.
//!
//! `y[n] = Σ_k Σ_m a[k][m] · x[n−m] · |x[n−m]|^(k−1)` over odd orders
//! `k = 1, 3, …, K` and memory taps `m = 0..=M`, with `x` zero before the
//! start of the signal.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaModel {
    /// `coeffs[i][m]` multiplies the order `2i+1` term at delay `m`.
    pub coeffs: Vec<Vec<Complex64>>,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl PaModel {
    pub fn new(coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        let pa = Self { coeffs };
        pa.validate()?;
        Ok(pa)
    }

    /// `y = g · x`.
    pub fn linear(g: Complex64) -> Self {
        Self { coeffs: vec![vec![g]] }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.coeffs.first() else {
            return Err(Error::InvalidConfig("PA has no coefficients".into()));
        };
        if first.is_empty() || self.coeffs.iter().any(|r| r.len() != first.len()) {
            return Err(Error::InvalidConfig(
                "PA coefficient rows must be non-empty and equally long".into(),
            ));
        }
        if self.coeffs.iter().flatten().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::InvalidConfig("non-finite PA coefficient".into()));
        }
        Ok(())
    }

    /// Highest nonlinearity order K.
    pub fn max_order(&self) -> usize {
        2 * self.coeffs.len() - 1
    }

    /// Memory depth M.
    pub fn memory_depth(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    /// Small-signal gain `a[1][0]`.
    pub fn small_signal_gain(&self) -> Complex64 {
        self.coeffs[0][0]
    }

    /// Output of a memoryless drive: the response to a constant envelope
    /// `x` held for all delays.
    pub fn static_response(&self, x: Complex64) -> Complex64 {
        let p = x.norm_sqr();
        let mut y = c(0.0, 0.0);
        for (i, row) in self.coeffs.iter().enumerate() {
            let basis = x * p.powi(i as i32);
            y += row.iter().sum::<Complex64>() * basis;
        }
        y
    }

    /// Apply the PA to raw samples.
    pub fn apply_samples(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![c(0.0, 0.0); x.len()];
        let mut basis = vec![c(0.0, 0.0); self.coeffs.len()];
        for (t, &u) in x.iter().enumerate() {
            fill_basis(u, &mut basis);
            for (i, row) in self.coeffs.iter().enumerate() {
                for (m, a) in row.iter().enumerate() {
                    if t + m < y.len() {
                        y[t + m] += a * basis[i];
                    }
                }
            }
        }
        y
    }

    /// Gradient of a real loss with respect to the PA input.
    ///
    /// `grad_y[n] = ∂L/∂Re y[n] + j·∂L/∂Im y[n]`; the result uses the same
    /// packing for the input.
    pub fn backward(&self, x: &[Complex64], grad_y: &[Complex64]) -> Vec<Complex64> {
        let mut grad_x = vec![c(0.0, 0.0); x.len()];
        let taps = self.coeffs[0].len();
        let mut d_i = vec![c(0.0, 0.0); taps];
        let mut d_q = vec![c(0.0, 0.0); taps];
        for (t, &u) in x.iter().enumerate() {
            // dy[t+m]/du_i and dy[t+m]/du_q share the tap factors
            let (ui, uq) = (u.re, u.im);
            let p = u.norm_sqr();
            d_i.fill(c(0.0, 0.0));
            d_q.fill(c(0.0, 0.0));
            for (i, row) in self.coeffs.iter().enumerate() {
                let e = i as i32;
                let pe = p.powi(e);
                let dpe = if e == 0 { 0.0 } else { e as f64 * p.powi(e - 1) };
                let dt_i = c(pe, 0.0) + u * (dpe * 2.0 * ui);
                let dt_q = c(0.0, pe) + u * (dpe * 2.0 * uq);
                for (m, a) in row.iter().enumerate() {
                    d_i[m] += a * dt_i;
                    d_q[m] += a * dt_q;
                }
            }
            let mut gi = 0.0;
            let mut gq = 0.0;
            for m in 0..d_i.len() {
                if let Some(g) = grad_y.get(t + m) {
                    gi += (g.conj() * d_i[m]).re;
                    gq += (g.conj() * d_q[m]).re;
                }
            }
            grad_x[t] = c(gi, gq);
        }
        grad_x
    }
}

fn fill_basis(u: Complex64, basis: &mut [Complex64]) {
    let p = u.norm_sqr();
    let mut acc = u;
    for b in basis.iter_mut() {
        *b = acc;
        acc *= p;
    }
}

/// Apply the PA model to a waveform.
pub fn pa_apply(wave: &Waveform, pa: &PaModel) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    Ok(wave.with_samples(pa.apply_samples(&wave.samples)))
}

/// The repository's reference PA: K = 7, M = 3, unit small-signal gain.
///
/// Mostly AM/PM distortion with a few percent of memory, so the AM/AM curve
/// stays monotone and reaches unit output near full-scale drive. Uncorrected
/// ACPR on the default 8.2 dB PAPR OFDM signal is about −32 dBc.
pub fn make_default_pa() -> PaModel {
    PaModel {
        coeffs: vec![
            vec![c(1.0, 0.0), c(0.07, -0.035), c(-0.025, 0.012), c(0.006, -0.003)],
            vec![c(-0.20, 0.40), c(0.08, -0.07), c(-0.025, 0.012), c(0.0, 0.0)],
            vec![c(0.06, -0.13), c(-0.012, 0.012), c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(-0.006, 0.014), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_signal(seed: u64, n: usize) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| c(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)))
            .collect()
    }

    /// Direct evaluation of the GMP sum, independent of `apply_samples`.
    fn oracle(pa: &PaModel, x: &[Complex64]) -> Vec<Complex64> {
        (0..x.len())
            .map(|n| {
                let mut y = c(0.0, 0.0);
                for (i, row) in pa.coeffs.iter().enumerate() {
                    let k = 2 * i + 1;
                    for (m, a) in row.iter().enumerate() {
                        if n >= m {
                            let u = x[n - m];
                            y += a * u * u.norm().powi(k as i32 - 1);
                        }
                    }
                }
                y
            })
            .collect()
    }

    #[test]
    fn linear_pa_is_a_gain() {
        let g = c(0.8, -0.3);
        let x = rand_signal(1, 50);
        let y = PaModel::linear(g).apply_samples(&x);
        for (a, b) in y.iter().zip(&x) {
            assert_eq!(*a, g * b);
        }
    }

    #[test]
    fn memoryless_cubic_example() {
        let pa = PaModel::new(vec![vec![c(1.0, 0.0)], vec![c(-0.1, 0.0)]]).unwrap();
        let y = pa.apply_samples(&[c(0.3, 0.4); 4]);
        for v in y {
            assert!((v.norm() - 0.4875).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_sum() {
        let pa = make_default_pa();
        let x = rand_signal(2, 200);
        for (a, b) in pa.apply_samples(&x).iter().zip(oracle(&pa, &x)) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn default_pa_shape() {
        let pa = make_default_pa();
        assert_eq!(pa.max_order(), 7);
        assert_eq!(pa.memory_depth(), 3);
        assert_eq!(pa, make_default_pa());
        // compression at -20 dBFS below 0.1 dB
        let a = 0.1;
        let g = pa.static_response(c(a, 0.0)).norm() / a;
        let g0 = pa.coeffs[0].iter().sum::<Complex64>().norm();
        assert!(20.0 * (g0 / g).log10() < 0.1);
        // monotone AM/AM up to 1.3
        let mut last = 0.0;
        for k in 1..=1300 {
            let v = pa.static_response(c(k as f64 / 1000.0, 0.0)).norm();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn causality() {
        let pa = make_default_pa();
        let x = rand_signal(3, 40);
        let y0 = pa.apply_samples(&x);
        let mut x1 = x.clone();
        x1[20] += c(0.3, -0.1);
        let y1 = pa.apply_samples(&x1);
        assert_eq!(&y0[..20], &y1[..20]);
        assert_ne!(y0[20], y1[20]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let pa = make_default_pa();
        let x = rand_signal(4, 12);
        let w = rand_signal(5, 12);
        // L = Σ Re(conj(w)·y) has dL/dy = w
        let loss = |x: &[Complex64]| -> f64 {
            pa.apply_samples(x).iter().zip(&w).map(|(y, w)| (w.conj() * y).re).sum()
        };
        let g = pa.backward(&x, &w);
        let eps = 1e-6;
        for t in 0..x.len() {
            for (dir, got) in [(c(1.0, 0.0), g[t].re), (c(0.0, 1.0), g[t].im)] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[t] += dir * eps;
                xm[t] -= dir * eps;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
                assert!((fd - got).abs() < 1e-7, "{t}: {fd} vs {got}");
            }
        }
    }

    #[test]
    fn rejects_bad_models_and_empty_input() {
        assert!(PaModel::new(vec![]).is_err());
        assert!(PaModel::new(vec![vec![c(1.0, 0.0)], vec![]]).is_err());
        assert!(PaModel::new(vec![vec![c(f64::NAN, 0.0)]]).is_err());
        assert!(pa_apply(&Waveform::new(vec![], 1.0), &make_default_pa()).is_err());
    }

    proptest! {
        #[test]
        fn odd_symmetry(seed in any::<u64>()) {
            let pa = make_default_pa();
            let x = rand_signal(seed, 30);
            let neg: Vec<_> = x.iter().map(|v| -v).collect();
            let a = pa.apply_samples(&x);
            let b = pa.apply_samples(&neg);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p + q).norm() < 1e-15);
            }
        }

        #[test]
        fn linear_homogeneity(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let pa = PaModel::linear(c(0.9, 0.2));
            let k = c(re, im);
            let x = rand_signal(seed, 20);
            let kx: Vec<_> = x.iter().map(|v| k * v).collect();
            let a = pa.apply_samples(&kx);
            let b = pa.apply_samples(&x);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - k * q).norm() < 1e-12);
            }
        }
    }
}
