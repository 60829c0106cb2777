//! Transformer stack over the per-second tokens plus a classification token.
//!
//! Attention pairs query heads on shared key/value heads (`2j` and `2j+1`
//! both read head `j`) and applies rotary embedding to the first half of
//! every query and key head only.

use super::config::CCEConfig;
use crate::error::{Error, Result};
use crate::numerics::{HeadLayout, Mode, ParamId, ParamSet, RngState, RopeLayout, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    /// `[d, d]`
    pub w_q: ParamId,
    /// `[d, d/2]`
    pub w_k: ParamId,
    /// `[d, d/2]`
    pub w_v: ParamId,
    /// `[d, d]`
    pub w_o: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwiGluParams {
    pub w_gate: ParamId,
    pub w_up: ParamId,
    pub w_down: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub attn_norm: ParamId,
    pub attn: AttentionParams,
    pub ffn_norm: ParamId,
    pub ffn: SwiGluParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardiacEncoderParams {
    pub cls: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

/// Nodes produced by one attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// Concatenated per-head context vectors before the output projection.
    pub heads: Var,
    /// After the output projection; also holds the attention weights.
    pub output: Var,
}

pub fn append_cls(tape: &mut Tape, params: &ParamSet, cls: ParamId, z_te: Var) -> Result<Var> {
    let c = tape.param(params, cls);
    tape.append_cls(z_te, c)
}

pub fn head_layout(config: &CCEConfig) -> HeadLayout {
    HeadLayout {
        query_heads: config.num_query_heads,
        kv_heads: config.kv_heads(),
        head_dim: config.head_dim(),
    }
}

fn half_rope(config: &CCEConfig, groups: usize) -> RopeLayout {
    RopeLayout {
        groups,
        group_width: config.head_dim(),
        rotated: config.head_dim() / 2,
        base: config.rope_base,
    }
}

/// Token positions used for rotation: the classification token sits at 0.
pub fn positions(seq_len: usize) -> Vec<usize> {
    (0..seq_len).collect()
}

pub fn decoupled_attention(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &AttentionParams,
    config: &CCEConfig,
    z: Var,
) -> Result<AttentionOutput> {
    config.validate()?;
    let seq = tape.shape(z)[1];
    decoupled_attention_at(tape, params, ids, config, z, &positions(seq))
}

/// Same as [`decoupled_attention`] with explicit rotary positions.
pub fn decoupled_attention_at(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &AttentionParams,
    config: &CCEConfig,
    z: Var,
    positions: &[usize],
) -> Result<AttentionOutput> {
    let zs = tape.shape(z);
    if zs.len() != 3 || zs[2] != config.embed_dim {
        return Err(Error::shape(
            "attention",
            format!("expected [B, S, {}], got {zs:?}", config.embed_dim),
        ));
    }
    let wq = tape.param(params, ids.w_q);
    let wk = tape.param(params, ids.w_k);
    let wv = tape.param(params, ids.w_v);
    let q = tape.linear(z, wq, None)?;
    let k = tape.linear(z, wk, None)?;
    let v = tape.linear(z, wv, None)?;
    let q = tape.rope(q, half_rope(config, config.num_query_heads), positions)?;
    let k = tape.rope(k, half_rope(config, config.kv_heads()), positions)?;
    let heads = tape.grouped_attention(q, k, v, head_layout(config))?;
    let wo = tape.param(params, ids.w_o);
    let output = tape.linear(heads, wo, None)?;
    Ok(AttentionOutput { heads, output })
}

/// `(swish(x·W_gate) ⊙ x·W_up)·W_down`, hidden width `4d`.
pub fn swiglu_forward(tape: &mut Tape, params: &ParamSet, ids: &SwiGluParams, x: Var) -> Result<Var> {
    let wg = tape.param(params, ids.w_gate);
    let wu = tape.param(params, ids.w_up);
    let wd = tape.param(params, ids.w_down);
    let gate = tape.linear(x, wg, None)?;
    let gate = tape.silu(gate)?;
    let up = tape.linear(x, wu, None)?;
    let h = tape.mul(gate, up)?;
    tape.linear(h, wd, None)
}

/// Pre-norm residual layer:
/// `z += drop(attn(norm(z)))`, then `z += drop(swiglu(norm(z)))`.
pub fn encoder_layer_forward(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &EncoderLayerParams,
    config: &CCEConfig,
    z: Var,
    rng: &mut RngState,
    mode: Mode,
) -> Result<Var> {
    let g = tape.param(params, ids.attn_norm);
    let h = tape.rmsnorm(z, g)?;
    let a = decoupled_attention(tape, params, &ids.attn, config, h)?.output;
    let a = tape.dropout(a, config.dropout_p, rng, mode)?;
    let z = tape.add(z, a)?;
    let g = tape.param(params, ids.ffn_norm);
    let h = tape.rmsnorm(z, g)?;
    let f = swiglu_forward(tape, params, &ids.ffn, h)?;
    let f = tape.dropout(f, config.dropout_p, rng, mode)?;
    tape.add(z, f)
}

pub fn cce_forward(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &CardiacEncoderParams,
    config: &CCEConfig,
    z: Var,
    rng: &mut RngState,
    mode: Mode,
) -> Result<Var> {
    config.validate()?;
    ids.layers.iter().try_fold(z, |z, layer| {
        encoder_layer_forward(tape, params, layer, config, z, rng, mode)
    })
}
