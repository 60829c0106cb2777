//! Convolutional front end: raw samples in, one `d`-wide token per second out.

use super::config::{ConvBlockSpec, TEConfig};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormStats, Mode, ParamId, ParamSet, RngState, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlockParams {
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalEncoderParams {
    pub blocks: Vec<ConvBlockParams>,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
    pub norm_gain: ParamId,
}

/// Forward pass of block `index`: conv → batch-norm → GELU → max-pool → dropout.
#[allow(clippy::too_many_arguments)]
pub fn conv_block_forward(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &ConvBlockParams,
    spec: &ConvBlockSpec,
    stats: &mut BatchNormStats,
    x: Var,
    mode: Mode,
    rng: &mut RngState,
    index: usize,
) -> Result<Var> {
    let n = tape.shape(x)[2];
    if n % spec.pool_stride != 0 {
        return Err(Error::shape(
            "conv block",
            format!(
                "block {index}: length {n} is not divisible by pool stride {}",
                spec.pool_stride
            ),
        ));
    }
    let w = tape.param(params, ids.conv_weight);
    let b = tape.param(params, ids.conv_bias);
    let h = tape.conv1d(x, w, b, spec.padding())?;
    let g = tape.param(params, ids.bn_gamma);
    let beta = tape.param(params, ids.bn_beta);
    let h = tape.batchnorm1d(h, g, beta, stats, mode)?;
    let h = tape.gelu(h)?;
    let h = tape.maxpool1d(h, spec.pool_window, spec.pool_stride)?;
    tape.dropout(h, spec.dropout_p, rng, mode)
}

/// Maps `x[B, T, F_s]` to `Z_TE[B, T, d]`.
#[allow(clippy::too_many_arguments)]
pub fn te_forward(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &TemporalEncoderParams,
    config: &TEConfig,
    stats: &mut [BatchNormStats],
    x: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Var> {
    let xs = x.shape();
    if xs.len() != 3 || xs[1] != config.epoch_seconds || xs[2] != config.sampling_rate {
        return Err(Error::shape(
            "temporal encoder",
            format!(
                "expected [B, {}, {}], got {xs:?}",
                config.epoch_seconds, config.sampling_rate
            ),
        ));
    }
    let batch = xs[0];
    let flat = x.clone().reshape(&[batch, 1, config.samples_per_epoch()])?;
    let mut h = tape.input(flat);
    for (i, ((spec, block), st)) in config
        .blocks
        .iter()
        .zip(&ids.blocks)
        .zip(stats.iter_mut())
        .enumerate()
    {
        h = conv_block_forward(tape, params, block, spec, st, h, mode, rng, i)?;
    }
    debug_assert_eq!(tape.shape(h)[2], config.epoch_seconds);
    let h = tape.swap_last2(h)?;
    let w = tape.param(params, ids.proj_weight);
    let b = tape.param(params, ids.proj_bias);
    let h = tape.linear(h, w, Some(b))?;
    let g = tape.param(params, ids.norm_gain);
    let h = tape.rmsnorm(h, g)?;
    tape.dropout(h, config.head_dropout_p, rng, mode)
}

/// Floats kept per second of signal after encoding, over raw samples per second.
pub fn memory_reduction_ratio(config: &TEConfig) -> f64 {
    config.embed_dim as f64 / config.sampling_rate as f64
}
