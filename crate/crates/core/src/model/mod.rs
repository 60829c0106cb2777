//! The classifier: temporal encoder → classification token + transformer
//! stack → linear head on the classification token.

mod cardiac;
mod config;
mod temporal;

pub use cardiac::{
    append_cls, cce_forward, decoupled_attention, decoupled_attention_at, encoder_layer_forward,
    head_layout, positions, swiglu_forward, AttentionOutput, AttentionParams,
    CardiacEncoderParams, EncoderLayerParams, SwiGluParams,
};
pub use config::{CCEConfig, ConvBlockSpec, ModelConfig, TEConfig};
pub use temporal::{
    conv_block_forward, memory_reduction_ratio, te_forward, ConvBlockParams,
    TemporalEncoderParams,
};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{BatchNormStats, Mode, ParamId, ParamSet, RngState, Tape, Tensor, Var};

/// Index of the positive (unconscious) class in the logits.
pub const POSITIVE_CLASS: usize = 1;

/// Standard deviation of the classification-token init.
pub const CLS_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Parameters, running statistics and layout of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    te: TemporalEncoderParams,
    cce: CardiacEncoderParams,
    head: HeadParams,
    bn_stats: Vec<BatchNormStats>,
}

struct Init<'a> {
    params: &'a mut ParamSet,
    rng: &'a mut RngState,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        self.params.add(name, Tensor::new(shape, data)?)
    }

    /// He-normal with the given fan-in.
    fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.normal(name, shape, (2.0 / fan_in as f64).sqrt())
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor::full(shape, value))
    }
}

impl Model {
    /// Fresh model. Conv and linear weights are He-normal; attention and
    /// feed-forward output projections start at zero so each new layer is
    /// an identity map; the classification token is `N(0, 0.02²)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = RngState::new(seed);
        let mut init = Init {
            params: &mut params,
            rng: &mut rng,
        };

        let mut blocks = Vec::new();
        for (i, b) in config.te.blocks.iter().enumerate() {
            let fan_in = b.in_channels * b.kernel_width;
            blocks.push(ConvBlockParams {
                conv_weight: init.he(
                    format!("te.block{i}.conv.weight"),
                    &[b.out_channels, b.in_channels, b.kernel_width],
                    fan_in,
                )?,
                conv_bias: init.fill(format!("te.block{i}.conv.bias"), &[b.out_channels], 0.0)?,
                bn_gamma: init.fill(format!("te.block{i}.bn.gamma"), &[b.out_channels], 1.0)?,
                bn_beta: init.fill(format!("te.block{i}.bn.beta"), &[b.out_channels], 0.0)?,
            });
        }
        let d = config.te.embed_dim;
        let c_last = config.te.last_channels();
        let te = TemporalEncoderParams {
            blocks,
            proj_weight: init.he("te.proj.weight".into(), &[c_last, d], c_last)?,
            proj_bias: init.fill("te.proj.bias".into(), &[d], 0.0)?,
            norm_gain: init.fill("te.norm.gain".into(), &[d], 1.0)?,
        };

        let cc = &config.cce;
        let cls = init.normal("cce.cls".into(), &[1, d], CLS_INIT_STD)?;
        let mut layers = Vec::new();
        for l in 0..cc.num_layers {
            let p = format!("cce.layer{l}");
            layers.push(EncoderLayerParams {
                attn_norm: init.fill(format!("{p}.attn_norm.gain"), &[d], 1.0)?,
                attn: AttentionParams {
                    w_q: init.he(format!("{p}.attn.w_q"), &[d, d], d)?,
                    w_k: init.he(format!("{p}.attn.w_k"), &[d, cc.kv_width()], d)?,
                    w_v: init.he(format!("{p}.attn.w_v"), &[d, cc.kv_width()], d)?,
                    w_o: init.fill(format!("{p}.attn.w_o"), &[d, d], 0.0)?,
                },
                ffn_norm: init.fill(format!("{p}.ffn_norm.gain"), &[d], 1.0)?,
                ffn: SwiGluParams {
                    w_gate: init.he(format!("{p}.ffn.w_gate"), &[d, cc.ffn_width()], d)?,
                    w_up: init.he(format!("{p}.ffn.w_up"), &[d, cc.ffn_width()], d)?,
                    w_down: init.fill(format!("{p}.ffn.w_down"), &[cc.ffn_width(), d], 0.0)?,
                },
            });
        }
        let cce = CardiacEncoderParams { cls, layers };
        let head = HeadParams {
            weight: init.he("head.weight".into(), &[d, config.num_classes], d)?,
            bias: init.fill("head.bias".into(), &[config.num_classes], 0.0)?,
        };
        let bn_stats = config
            .te
            .blocks
            .iter()
            .map(|b| BatchNormStats::new(b.out_channels))
            .collect();
        Ok(Model {
            config,
            params,
            te,
            cce,
            head,
            bn_stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn te_params(&self) -> &TemporalEncoderParams {
        &self.te
    }

    pub fn cce_params(&self) -> &CardiacEncoderParams {
        &self.cce
    }

    pub fn head_params(&self) -> &HeadParams {
        &self.head
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.bn_stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BatchNormStats] {
        &mut self.bn_stats
    }

    /// Logits `[B, K]` for `x[B, T, F_s]`. Train mode updates batch-norm
    /// running statistics.
    pub fn forward(&mut self, tape: &mut Tape, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Var> {
        let Model {
            config,
            params,
            te,
            cce,
            head,
            bn_stats,
        } = self;
        forward_with(tape, params, config, te, cce, head, bn_stats, x, mode, rng)
    }

    /// Logits without touching the stored running statistics.
    pub fn forward_frozen(&self, tape: &mut Tape, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Var> {
        let mut stats = self.bn_stats.clone();
        forward_with(
            tape,
            &self.params,
            &self.config,
            &self.te,
            &self.cce,
            &self.head,
            &mut stats,
            x,
            mode,
            rng,
        )
    }

    /// Logits with `params` substituted for the model's own values, e.g.
    /// for finite-difference checks. Running statistics are left alone.
    pub fn forward_with_params(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: &Tensor,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Var> {
        let mut stats = self.bn_stats.clone();
        forward_with(
            tape,
            params,
            &self.config,
            &self.te,
            &self.cce,
            &self.head,
            &mut stats,
            x,
            mode,
            rng,
        )
    }

    /// Eval-mode class probabilities, `B·K` values row-major.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut rng = RngState::new(0);
        let logits = self.forward_frozen(&mut tape, x, Mode::Eval, &mut rng)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Eval-mode probability of the positive class for each batch item.
    pub fn predict_positive(&self, x: &Tensor) -> Result<Vec<f64>> {
        let k = self.config.num_classes;
        Ok(self
            .predict_proba(x)?
            .chunks(k)
            .map(|row| row[POSITIVE_CLASS])
            .collect())
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_with(
    tape: &mut Tape,
    params: &ParamSet,
    config: &ModelConfig,
    te: &TemporalEncoderParams,
    cce: &CardiacEncoderParams,
    head: &HeadParams,
    bn_stats: &mut [BatchNormStats],
    x: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Var> {
    let z_te = te_forward(tape, params, te, &config.te, bn_stats, x, mode, rng)?;
    let z = append_cls(tape, params, cce.cls, z_te)?;
    let z = cce_forward(tape, params, cce, &config.cce, z, rng, mode)?;
    let z_cls = tape.select_token(z, 0)?;
    let w = tape.param(params, head.weight);
    let b = tape.param(params, head.bias);
    tape.linear(z_cls, w, Some(b))
}
