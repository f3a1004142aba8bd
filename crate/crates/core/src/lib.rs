//! Fixed-point GRU digital pre-distortion engine.
//!
//! Bit-accurate Q-format arithmetic, a 502-parameter GRU pre-distorter with
//! float, fake-quantized and fixed-point execution paths, a closed-loop
//! OFDM/GMP power-amplifier simulation, a BPTT trainer, RF metrics and a
//! cycle-level accelerator performance model.

pub mod cli;
pub mod closed_loop;
pub mod dataset;
pub mod dpd;
pub mod error;
pub mod fxp;
pub mod io;
pub mod metrics;
pub mod nonlin;
pub mod ofdm;
pub mod perf;
pub mod pa;
pub mod quant;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
