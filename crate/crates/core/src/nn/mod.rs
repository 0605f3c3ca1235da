//! The encoder-decoder displacement regressor.
//!
//! Encoder: per-point shared layers (linear, batch norm, ReLU) lifting each
//! of the `N` patch points to a feature vector, then a channel-wise max over
//! the points. Decoder: fully connected layers with batch norm and ReLU, and
//! a final linear layer followed by `tanh`, giving a displacement in
//! `(-1, 1)^3`.
//!
//! Tensors are `ndarray` matrices with one row per point (encoder) or per
//! patch (decoder). Gradients are computed by hand-written reverse-mode
//! differentiation of the forward pass.

mod network;
mod ops;
mod params;
mod train;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

pub use network::Cache;
pub use params::{init_params, load_params, save_params, Gradients, Layer, LayerGrads, NetworkParams};
pub use train::{
    lr_schedule, sgd_step, train, train_models, EpochRecord, Precision, TrainConfig, TrainingLog,
    TrainingModel,
};

/// Scalar type the network runs in (`f32` for speed, `f64` for checks).
pub trait Real: NdFloat + FromPrimitive + Sum + Default + Debug + Display + LowerExp {}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable")
}

/// Batch-norm momentum for the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64, 128, 256, 512, 1024],
            decoder_widths: vec![512, 256, 3],
        }
    }
}

impl Architecture {
    pub fn new(encoder_widths: Vec<usize>, decoder_widths: Vec<usize>) -> crate::Result<Self> {
        let arch = Self {
            encoder_widths,
            decoder_widths,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.encoder_widths.is_empty() || self.decoder_widths.is_empty() {
            return Err(crate::Error::invalid("encoder and decoder need at least one layer"));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(crate::Error::invalid("layer widths must be at least 1"));
        }
        if self.decoder_widths.last() != Some(&3) {
            return Err(crate::Error::invalid("the last decoder layer must have width 3"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every encoder layer.
    pub fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(3, &self.encoder_widths)
    }

    pub fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(*self.encoder_widths.last().expect("validated"), &self.decoder_widths)
    }

    pub fn parameter_count(&self) -> usize {
        let enc: usize = self.encoder_shapes().iter().map(|(i, o)| i * o + 3 * o).sum();
        let dec = self.decoder_shapes();
        let last = dec.len() - 1;
        let dec: usize = dec
            .into_iter()
            .enumerate()
            .map(|(k, (i, o))| i * o + if k == last { o } else { 3 * o })
            .sum();
        enc + dec
    }
}

fn chain_shapes(input: usize, widths: &[usize]) -> Vec<(usize, usize)> {
    let mut prev = input;
    widths
        .iter()
        .map(|&w| {
            let s = (prev, w);
            prev = w;
            s
        })
        .collect()
}
