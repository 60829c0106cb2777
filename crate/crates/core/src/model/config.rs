use crate::error::{Error, Result};

/// One conv → batch-norm → GELU → max-pool → dropout stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
}

impl ConvBlockSpec {
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("conv block {index}: {msg}")));
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.kernel_width % 2 == 0 {
            return fail(format!("kernel width {} must be odd", self.kernel_width));
        }
        if self.pool_stride == 0 || self.pool_window == 0 || self.pool_window > self.pool_stride {
            return fail(format!(
                "pool window {} must lie in 1..=stride ({})",
                self.pool_window, self.pool_stride
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Symmetric zero padding that keeps the length unchanged.
    pub fn padding(&self) -> usize {
        (self.kernel_width - 1) / 2
    }
}

/// Temporal encoder geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TEConfig {
    pub sampling_rate: usize,
    pub epoch_seconds: usize,
    pub embed_dim: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub head_dropout_p: f64,
}

impl TEConfig {
    /// Builds a block plan from channel widths and pool strides; every
    /// block uses `pool_window == pool_stride`.
    pub fn from_plan(
        sampling_rate: usize,
        epoch_seconds: usize,
        embed_dim: usize,
        channels: &[usize],
        strides: &[usize],
        kernel_width: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        if channels.len() != strides.len() {
            return Err(Error::Config(format!(
                "{} channel widths but {} pool strides",
                channels.len(),
                strides.len()
            )));
        }
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = 1;
        for (&c_out, &stride) in channels.iter().zip(strides) {
            blocks.push(ConvBlockSpec {
                in_channels: c_in,
                out_channels: c_out,
                kernel_width,
                pool_window: stride,
                pool_stride: stride,
                dropout_p,
            });
            c_in = c_out;
        }
        let cfg = TEConfig {
            sampling_rate,
            epoch_seconds,
            embed_dim,
            blocks,
            head_dropout_p: dropout_p,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Four blocks, strides 5·5·5·4 = 500, channels 16/32/64/64, kernel 7.
    pub fn default_500hz(epoch_seconds: usize, embed_dim: usize) -> Self {
        Self::from_plan(500, epoch_seconds, embed_dim, &[16, 32, 64, 64], &[5, 5, 5, 4], 7, 0.1)
            .expect("default plan is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate == 0 || self.epoch_seconds == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "sampling rate, epoch length and embedding width must be positive".into(),
            ));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("temporal encoder needs at least one conv block".into()));
        }
        let mut c_in = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate(i)?;
            if b.in_channels != c_in {
                return Err(Error::Config(format!(
                    "conv block {i}: expects {} input channels, previous stage yields {c_in}",
                    b.in_channels
                )));
            }
            c_in = b.out_channels;
        }
        let product: usize = self.blocks.iter().map(|b| b.pool_stride).product();
        if product != self.sampling_rate {
            return Err(Error::Config(format!(
                "pool strides multiply to {product}, but one token per second needs {}",
                self.sampling_rate
            )));
        }
        if !(0.0..1.0).contains(&self.head_dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.head_dropout_p)));
        }
        Ok(())
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.sampling_rate * self.epoch_seconds
    }

    pub fn last_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.out_channels)
    }
}

/// Cardiac-cycle encoder geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct CCEConfig {
    pub embed_dim: usize,
    pub num_query_heads: usize,
    pub num_layers: usize,
    pub rope_base: f64,
    pub dropout_p: f64,
}

impl CCEConfig {
    pub fn new(embed_dim: usize, num_query_heads: usize, num_layers: usize) -> Self {
        CCEConfig {
            embed_dim,
            num_query_heads,
            num_layers,
            rope_base: 10_000.0,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.embed_dim, self.num_query_heads);
        if h == 0 || h % 2 != 0 {
            return Err(Error::Config(format!(
                "query heads must be a positive even count, got {h}"
            )));
        }
        if d % h != 0 {
            return Err(Error::Config(format!("embedding width {d} is not divisible by {h} heads")));
        }
        if (d / h) % 4 != 0 {
            return Err(Error::Config(format!(
                "head width {} must be a multiple of 4 (rotary half must hold whole pairs)",
                d / h
            )));
        }
        if !(self.rope_base > 1.0) || !self.rope_base.is_finite() {
            return Err(Error::Config(format!("rope base {} must exceed 1", self.rope_base)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_query_heads
    }

    pub fn kv_heads(&self) -> usize {
        self.num_query_heads / 2
    }

    pub fn kv_width(&self) -> usize {
        self.embed_dim / 2
    }

    pub fn ffn_width(&self) -> usize {
        4 * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub te: TEConfig,
    pub cce: CCEConfig,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(te: TEConfig, cce: CCEConfig) -> Result<Self> {
        let cfg = ModelConfig {
            te,
            cce,
            num_classes: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// d = 128, 8 query heads, 2 layers, the 500 Hz block plan.
    pub fn standard(epoch_seconds: usize) -> Self {
        Self::new(
            TEConfig::default_500hz(epoch_seconds, 128),
            CCEConfig::new(128, 8, 2),
        )
        .expect("standard config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.te.validate()?;
        self.cce.validate()?;
        if self.te.embed_dim != self.cce.embed_dim {
            return Err(Error::Config(format!(
                "temporal encoder width {} differs from transformer width {}",
                self.te.embed_dim, self.cce.embed_dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}
