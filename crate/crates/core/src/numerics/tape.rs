//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value plus whatever it needs
//! for the backward pass. `Tape::backward` walks the nodes in reverse and
//! returns one gradient buffer per node that lies on a path to a parameter.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::param::{ParamId, ParamSet};
use super::rng::RngState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const RMSNORM_EPS: f64 = 1e-6;
/// Floor applied to probabilities before taking logs in the focal loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of training batches folded into the running estimates.
    pub updates: u64,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            updates: 0,
        }
    }

    pub fn is_populated(&self) -> bool {
        self.updates > 0
    }
}

/// Backward rule for [`Tape::custom`]: `(input, output, upstream) -> input grad`.
pub type CustomBackward = Box<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64>>;

enum Op {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    /// Local derivative saved from the forward pass.
    Gelu { x: Var, slope: Vec<f64> },
    Silu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    SwapLast2(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    AppendCls {
        z: Var,
        cls: Var,
    },
    Rope {
        x: Var,
        layout: RopeLayout,
        positions: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: HeadLayout,
        probs: Vec<f64>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SelectToken {
        x: Var,
        index: usize,
    },
    Softmax(Var),
    FocalLoss {
        p: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
        gamma: f64,
    },
    Sum(Var),
    Custom {
        x: Var,
        backward: CustomBackward,
    },
}

/// Which slice of the trailing axis a rotary embedding acts on: the axis is
/// cut into `groups` chunks of `group_width`, and the first `rotated` entries
/// of every chunk are rotated pairwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeLayout {
    pub groups: usize,
    pub group_width: usize,
    pub rotated: usize,
    pub base: f64,
}

/// Query/key-value head arrangement for grouped attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub query_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    /// Key/value head consumed by query head `h`.
    pub fn kv_head_for(&self, h: usize) -> usize {
        h / (self.query_heads / self.kv_heads)
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("output of {op}")))
    }
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[..] += a * x[..]`, written so the compiler vectorizes it.
#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates pairs `(v[2i], v[2i+1])` of `v` by `sign * pos * base^(-2i/len)`.
fn rotate_pairs(v: &mut [f64], pos: usize, base: f64, sign: f64) {
    let width = v.len();
    for i in 0..width / 2 {
        let theta = base.powf(-2.0 * i as f64 / width as f64);
        let (s, c) = (sign * pos as f64 * theta).sin_cos();
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &data)?;
        Ok(self.push(Tensor::from_parts(shape, data), op, needs_grad))
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A constant input that still receives a gradient (useful for checks).
    pub fn tracked_input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id).tensor();
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push(value, Op::Param(id), true)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 3 {
            return Err(Error::shape("conv1d", format!("input must be [B,C,N], got {xs:?}")));
        }
        if ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("kernel must be [C_out,C_in,k], got {ws:?}")));
        }
        let (batch, c_in, n) = (xs[0], xs[1], xs[2]);
        let (c_out, kc_in, k) = (ws[0], ws[1], ws[2]);
        if kc_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input channels: input has {c_in}, kernel expects {kc_in}"),
            ));
        }
        if bs != [c_out] {
            return Err(Error::shape(
                "conv1d",
                format!("bias length: expected [{c_out}], got {bs:?}"),
            ));
        }
        if k > n + 2 * pad {
            return Err(Error::shape(
                "conv1d",
                format!("kernel width {k} exceeds padded length {}", n + 2 * pad),
            ));
        }
        let n_out = n + 2 * pad - k + 1;
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut out = vec![0.0; batch * c_out * n_out];
        for bi in 0..batch {
            for o in 0..c_out {
                let row = &mut out[(bi * c_out + o) * n_out..][..n_out];
                row.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..c_in {
                    let xrow = &xd[(bi * c_in + c) * n..][..n];
                    for j in 0..k {
                        let wv = wd[(o * c_in + c) * k + j];
                        let lo = pad.saturating_sub(j);
                        let hi = n_out.min(n + pad - j);
                        if lo < hi {
                            axpy(&mut row[lo..hi], wv, &xrow[lo + j - pad..hi + j - pad]);
                        }
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push_checked(
            "conv1d",
            vec![batch, c_out, n_out],
            out,
            Op::Conv1d { x, w, b, pad },
            needs,
        )
    }

    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::shape("maxpool1d", format!("input must be [B,C,N], got {xs:?}")));
        }
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument("maxpool1d window and stride must be ≥ 1".into()));
        }
        let (batch, ch, n) = (xs[0], xs[1], xs[2]);
        if window > n {
            return Err(Error::shape("maxpool1d", format!("window {window} exceeds length {n}")));
        }
        let n_out = (n - window) / stride + 1;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(batch * ch * n_out);
        let mut argmax = Vec::with_capacity(batch * ch * n_out);
        for r in 0..batch * ch {
            let row = &xd[r * n..][..n];
            for t in 0..n_out {
                let start = t * stride;
                let mut best = start;
                for i in start + 1..start + window {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * n + best);
            }
        }
        let needs = self.needs(x);
        self.push_checked(
            "maxpool1d",
            vec![batch, ch, n_out],
            out,
            Op::MaxPool { x, argmax },
            needs,
        )
    }

    /// Batch normalization over `(B, N)` per channel. Train mode uses batch
    /// statistics and folds them into `stats`; eval mode reads `stats`.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::shape("batchnorm1d", format!("input must be [B,C,N], got {xs:?}")));
        }
        let (batch, ch, n) = (xs[0], xs[1], xs[2]);
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] || stats.mean.len() != ch {
            return Err(Error::shape(
                "batchnorm1d",
                format!("channel parameters must have length {ch}"),
            ));
        }
        let count = (batch * n) as f64;
        let xd = self.data(x);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for bi in 0..batch {
                        s += xd[(bi * ch + c) * n..][..n].iter().sum::<f64>();
                    }
                    let m = s / count;
                    let mut q = 0.0;
                    for bi in 0..batch {
                        q += xd[(bi * ch + c) * n..][..n]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = q / count;
                }
                (mean, var)
            }
            Mode::Eval => {
                if !stats.is_populated() {
                    return Err(Error::InvalidArgument(
                        "batchnorm1d in eval mode needs populated running statistics".into(),
                    ));
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * n;
                for i in off..off + n {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gd[c] * h + bd[c];
                }
            }
        }
        if mode == Mode::Train {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for c in 0..ch {
                stats.mean[c] =
                    (1.0 - BATCHNORM_MOMENTUM) * stats.mean[c] + BATCHNORM_MOMENTUM * mean[c];
                stats.var[c] = (1.0 - BATCHNORM_MOMENTUM) * stats.var[c]
                    + BATCHNORM_MOMENTUM * var[c] * unbias;
            }
            stats.updates += 1;
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push_checked(
            "batchnorm1d",
            vec![batch, ch, n],
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            needs,
        )
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len());
        let mut slope = Vec::with_capacity(if needs { xd.len() } else { 0 });
        for &v in xd {
            let cdf = std_normal_cdf(v);
            out.push(v * cdf);
            if needs {
                slope.push(cdf + v * std_normal_pdf(v));
            }
        }
        self.push_checked("gelu", shape, out, Op::Gelu { x, slope }, needs)
    }

    /// Swish with unit slope, `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v * sigmoid(v)).collect();
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        self.push_checked("silu", shape, out, Op::Silu(x), needs)
    }

    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngState, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.data(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        self.push_checked("dropout", shape, out, Op::Dropout { x, mask }, needs)
    }

    /// `[B, P, Q] -> [B, Q, P]`.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::shape("swap_last2", format!("expected rank 3, got {xs:?}")));
        }
        let (b, p, q) = (xs[0], xs[1], xs[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for i in 0..p {
                for j in 0..q {
                    out[(bi * q + j) * p + i] = xd[(bi * p + i) * q + j];
                }
            }
        }
        let needs = self.needs(x);
        self.push_checked("swap_last2", vec![b, q, p], out, Op::SwapLast2(x), needs)
    }

    /// Affine map over the trailing axis: `x[..., m] · W[m, n] + b[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(Error::shape("linear", format!("weight must be [m,n], got {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        if xs[xs.len() - 1] != m {
            return Err(Error::shape(
                "linear",
                format!("inner dimension: input has {}, weight expects {m}", xs[xs.len() - 1]),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(Error::shape(
                    "linear",
                    format!("bias length: expected [{n}], got {:?}", self.shape(b)),
                ));
            }
        }
        let rows = xs.iter().product::<usize>() / m;
        let xd = self.data(x);
        let wd = self.data(w);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let orow = &mut out[r * n..][..n];
            if let Some(b) = b {
                orow.copy_from_slice(self.data(b));
            }
            let xrow = &xd[r * m..][..m];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv != 0.0 {
                    axpy(orow, xv, &wd[i * n..][..n]);
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push_checked("linear", shape, out, Op::Linear { x, w, b }, needs)
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` along the trailing axis.
    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] {
            return Err(Error::shape(
                "rmsnorm",
                format!("gain must be [{d}], got {:?}", self.shape(gain)),
            ));
        }
        let xd = self.data(x);
        let gd = self.data(gain);
        let rows = xd.len() / d;
        let mut inv_rms = Vec::with_capacity(rows);
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let xr = &xd[r * d..][..d];
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + RMSNORM_EPS).sqrt();
            inv_rms.push(inv);
            for i in 0..d {
                out[r * d + i] = gd[i] * xr[i] * inv;
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(gain);
        self.push_checked("rmsnorm", shape, out, Op::RmsNorm { x, gain, inv_rms }, needs)
    }

    /// `[B, T, d]` and `[1, d]` -> `[B, T+1, d]` with the token at row 0.
    pub fn append_cls(&mut self, z: Var, cls: Var) -> Result<Var> {
        let zs = self.shape(z);
        if zs.len() != 3 {
            return Err(Error::shape("append_cls", format!("sequence must be [B,T,d], got {zs:?}")));
        }
        let (b, t, d) = (zs[0], zs[1], zs[2]);
        if self.shape(cls) != [1, d] {
            return Err(Error::shape(
                "append_cls",
                format!("token must be [1,{d}], got {:?}", self.shape(cls)),
            ));
        }
        let zd = self.data(z);
        let cd = self.data(cls);
        let mut out = Vec::with_capacity(b * (t + 1) * d);
        for bi in 0..b {
            out.extend_from_slice(cd);
            out.extend_from_slice(&zd[bi * t * d..][..t * d]);
        }
        let needs = self.needs(z) || self.needs(cls);
        self.push_checked("append_cls", vec![b, t + 1, d], out, Op::AppendCls { z, cls }, needs)
    }

    /// Rotary position embedding on `x[B, S, groups·group_width]`; token `s`
    /// is rotated by `positions[s]`.
    pub fn rope(&mut self, x: Var, layout: RopeLayout, positions: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::shape("rope", format!("input must be [B,S,D], got {xs:?}")));
        }
        let (b, s, width) = (xs[0], xs[1], xs[2]);
        if layout.rotated % 2 != 0 {
            return Err(Error::shape(
                "rope",
                format!("rotated width must be even, got {}", layout.rotated),
            ));
        }
        if layout.groups * layout.group_width != width || layout.rotated > layout.group_width {
            return Err(Error::shape(
                "rope",
                format!("layout {layout:?} does not fit trailing width {width}"),
            ));
        }
        if positions.len() != s {
            return Err(Error::shape(
                "rope",
                format!("{} positions for {s} tokens", positions.len()),
            ));
        }
        let mut out = self.data(x).to_vec();
        apply_rope(&mut out, b, s, layout, positions, 1.0);
        let needs = self.needs(x);
        self.push_checked(
            "rope",
            vec![b, s, width],
            out,
            Op::Rope {
                x,
                layout,
                positions: positions.to_vec(),
            },
            needs,
        )
    }

    /// Scaled dot-product attention where query head `h` reads key/value
    /// head `heads.kv_head_for(h)`. Inputs are `[B,S,H·dh]` for queries and
    /// `[B,S,H_kv·dh]` for keys and values.
    pub fn grouped_attention(&mut self, q: Var, k: Var, v: Var, heads: HeadLayout) -> Result<Var> {
        let HeadLayout {
            query_heads,
            kv_heads,
            head_dim,
        } = heads;
        if kv_heads == 0 || query_heads % kv_heads != 0 {
            return Err(Error::Config(format!(
                "{query_heads} query heads cannot share {kv_heads} key/value heads"
            )));
        }
        let qs = self.shape(q).to_vec();
        if qs.len() != 3 || qs[2] != query_heads * head_dim {
            return Err(Error::shape(
                "attention",
                format!("queries must be [B,S,{}], got {qs:?}", query_heads * head_dim),
            ));
        }
        let kv_shape = [qs[0], qs[1], kv_heads * head_dim];
        if self.shape(k) != kv_shape || self.shape(v) != kv_shape {
            return Err(Error::shape(
                "attention",
                format!(
                    "keys/values must be {kv_shape:?}, got {:?} and {:?}",
                    self.shape(k),
                    self.shape(v)
                ),
            ));
        }
        let (b, s) = (qs[0], qs[1]);
        let (qw, kw) = (query_heads * head_dim, kv_heads * head_dim);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; b * query_heads * s * s];
        let mut out = vec![0.0; b * s * qw];
        for bi in 0..b {
            for h in 0..query_heads {
                let g = heads.kv_head_for(h);
                for i in 0..s {
                    let qi = &qd[(bi * s + i) * qw + h * head_dim..][..head_dim];
                    let prow = &mut probs[((bi * query_heads + h) * s + i) * s..][..s];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        let kj = &kd[(bi * s + j) * kw + g * head_dim..][..head_dim];
                        *pj = dot(qi, kj) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[(bi * s + i) * qw + h * head_dim..][..head_dim];
                    for (j, &pj) in prow.iter().enumerate() {
                        axpy(orow, pj, &vd[(bi * s + j) * kw + g * head_dim..][..head_dim]);
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push_checked(
            "attention",
            qs,
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            needs,
        )
    }

    /// Attention probabilities `[B, H, S, S]` saved by a
    /// [`Tape::grouped_attention`] node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let (shape, needs) = (self.shape(a).to_vec(), self.needs(a) || self.needs(b));
        self.push_checked("add", shape, out, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let (shape, needs) = (self.shape(a).to_vec(), self.needs(a) || self.needs(b));
        self.push_checked("mul", shape, out, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        self.push_checked("scale", shape, out, Op::Scale(x, factor), needs)
    }

    /// `[B, S, d] -> [B, d]`, keeping token `index`.
    pub fn select_token(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || index >= xs[1] {
            return Err(Error::shape(
                "select_token",
                format!("cannot take token {index} of {xs:?}"),
            ));
        }
        let (b, s, d) = (xs[0], xs[1], xs[2]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&xd[(bi * s + index) * d..][..d]);
        }
        let needs = self.needs(x);
        self.push_checked("select_token", vec![b, d], out, Op::SelectToken { x, index }, needs)
    }

    /// Softmax along the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        self.push_checked("softmax", shape, out, Op::Softmax(x), needs)
    }

    /// Batch mean of `-Σ_c y_c·w_c·(1-p_c)^γ·ln(max(p_c, floor))`.
    ///
    /// `p` is `[B, K]` of probabilities; `target` holds `B·K` soft labels.
    pub fn focal_loss(&mut self, p: Var, target: &[f64], weights: &[f64], gamma: f64) -> Result<Var> {
        let ps = self.shape(p);
        if ps.len() != 2 {
            return Err(Error::shape("focal_loss", format!("probabilities must be [B,K], got {ps:?}")));
        }
        let (b, k) = (ps[0], ps[1]);
        if target.len() != b * k || weights.len() != k {
            return Err(Error::shape(
                "focal_loss",
                format!(
                    "expected {} targets and {k} weights, got {} and {}",
                    b * k,
                    target.len(),
                    weights.len()
                ),
            ));
        }
        if gamma < 0.0 {
            return Err(Error::InvalidArgument(format!("focal gamma must be ≥ 0, got {gamma}")));
        }
        let pd = self.data(p);
        for (r, row) in pd.chunks(k).enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 || row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "row {r} is not a probability distribution (sums to {total})"
                )));
            }
        }
        let mut loss = 0.0;
        for (i, (&pc, &yc)) in pd.iter().zip(target).enumerate() {
            if yc != 0.0 {
                let c = i % k;
                loss -= yc * weights[c] * (1.0 - pc).max(0.0).powf(gamma) * pc.max(PROB_FLOOR).ln();
            }
        }
        loss /= b as f64;
        let needs = self.needs(p);
        self.push_checked(
            "focal_loss",
            vec![1],
            vec![loss],
            Op::FocalLoss {
                p,
                target: target.to_vec(),
                weights: weights.to_vec(),
                gamma,
            },
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push_checked("sum", vec![1], vec![s], Op::Sum(x), needs)
    }

    /// Elementwise op with a caller-supplied backward rule.
    pub fn custom(
        &mut self,
        x: Var,
        forward: impl Fn(f64) -> f64,
        backward: CustomBackward,
    ) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| forward(v)).collect();
        let (shape, needs) = (self.shape(x).to_vec(), self.needs(x));
        self.push_checked("custom", shape, out, Op::Custom { x, backward }, needs)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        check_finite("loss", lv.data())?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &gy, &mut grads)?;
            }
            grads[idx] = Some(gy);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of tape node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every parameter node into `params`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, params: &mut ParamSet) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                for (a, b) in params.get_mut(*id).grad_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    fn backprop_node(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        if let Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } = &node.op
        {
            self.backprop_attention(*q, *k, *v, *heads, probs, gy, grads);
            return Ok(());
        }
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].needs_grad {
                let n = nodes[v.0].value.len();
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                f(g);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d { x, w, b, pad } => {
                let (xs, ws) = (shp(*x), shp(*w));
                let (batch, c_in, n) = (xs[0], xs[1], xs[2]);
                let (c_out, k) = (ws[0], ws[2]);
                let n_out = node.value.shape()[2];
                let pad = *pad;
                let (xd, wd) = (val(*x), val(*w));
                acc(*b, &mut |gb| {
                    for bi in 0..batch {
                        for o in 0..c_out {
                            gb[o] += gy[(bi * c_out + o) * n_out..][..n_out].iter().sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for bi in 0..batch {
                        for o in 0..c_out {
                            let grow = &gy[(bi * c_out + o) * n_out..][..n_out];
                            for c in 0..c_in {
                                let xrow = &xd[(bi * c_in + c) * n..][..n];
                                for j in 0..k {
                                    let lo = pad.saturating_sub(j);
                                    let hi = n_out.min(n + pad - j);
                                    if lo < hi {
                                        gw[(o * c_in + c) * k + j] +=
                                            dot(&grow[lo..hi], &xrow[lo + j - pad..hi + j - pad]);
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for bi in 0..batch {
                        for o in 0..c_out {
                            let grow = &gy[(bi * c_out + o) * n_out..][..n_out];
                            for c in 0..c_in {
                                let gxrow = &mut gx[(bi * c_in + c) * n..][..n];
                                for j in 0..k {
                                    let lo = pad.saturating_sub(j);
                                    let hi = n_out.min(n + pad - j);
                                    if lo < hi {
                                        axpy(
                                            &mut gxrow[lo + j - pad..hi + j - pad],
                                            wd[(o * c_in + c) * k + j],
                                            &grow[lo..hi],
                                        );
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |gx| {
                for (&src, &g) in argmax.iter().zip(gy) {
                    gx[src] += g;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = shp(*x);
                let (batch, ch, n) = (xs[0], xs[1], xs[2]);
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let off = (bi * ch + c) * n;
                        sum_g[c] += gy[off..off + n].iter().sum::<f64>();
                        sum_gx[c] += dot(&gy[off..off + n], &xhat[off..off + n]);
                    }
                }
                acc(*beta, &mut |gb| {
                    for c in 0..ch {
                        gb[c] += sum_g[c];
                    }
                });
                acc(*gamma, &mut |gg| {
                    for c in 0..ch {
                        gg[c] += sum_gx[c];
                    }
                });
                let gd = val(*gamma);
                let count = (batch * n) as f64;
                acc(*x, &mut |gx| {
                    for bi in 0..batch {
                        for c in 0..ch {
                            let off = (bi * ch + c) * n;
                            let a = gd[c] * inv_std[c];
                            for i in off..off + n {
                                gx[i] += if *train {
                                    a * (gy[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count)
                                } else {
                                    a * gy[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::Gelu { x, slope } => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += gy[i] * slope[i];
                }
            }),
            Op::Silu(x) => {
                let xd = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        let s = sigmoid(xd[i]);
                        gx[i] += gy[i] * s * (1.0 + xd[i] * (1.0 - s));
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += gy[i] * mask[i];
                }
            }),
            Op::SwapLast2(x) => {
                let xs = shp(*x);
                let (b, p, q) = (xs[0], xs[1], xs[2]);
                acc(*x, &mut |gx| {
                    for bi in 0..b {
                        for i in 0..p {
                            for j in 0..q {
                                gx[(bi * p + i) * q + j] += gy[(bi * q + j) * p + i];
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let ws = shp(*w);
                let (m, n) = (ws[0], ws[1]);
                let rows = gy.len() / n;
                let (xd, wd) = (val(*x), val(*w));
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for r in 0..rows {
                            for (a, g) in gb.iter_mut().zip(&gy[r * n..][..n]) {
                                *a += g;
                            }
                        }
                    });
                }
                acc(*w, &mut |gw| {
                    for r in 0..rows {
                        let grow = &gy[r * n..][..n];
                        for i in 0..m {
                            let xv = xd[r * m + i];
                            if xv != 0.0 {
                                axpy(&mut gw[i * n..][..n], xv, grow);
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let grow = &gy[r * n..][..n];
                        for i in 0..m {
                            gx[r * m + i] += dot(&wd[i * n..][..n], grow);
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xd, gd) = (val(*x), val(*gain));
                let d = gd.len();
                acc(*gain, &mut |gg| {
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        for i in 0..d {
                            gg[i] += gy[r * d + i] * xd[r * d + i] * inv;
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, &inv) in inv_rms.iter().enumerate() {
                        let xr = &xd[r * d..][..d];
                        let gr = &gy[r * d..][..d];
                        let s: f64 = (0..d).map(|i| gd[i] * gr[i] * xr[i]).sum();
                        let c = inv * inv * inv * s / d as f64;
                        for i in 0..d {
                            gx[r * d + i] += inv * gd[i] * gr[i] - xr[i] * c;
                        }
                    }
                });
            }
            Op::AppendCls { z, cls } => {
                let zs = shp(*z);
                let (b, t, d) = (zs[0], zs[1], zs[2]);
                acc(*cls, &mut |gc| {
                    for bi in 0..b {
                        for (a, g) in gc.iter_mut().zip(&gy[bi * (t + 1) * d..][..d]) {
                            *a += g;
                        }
                    }
                });
                acc(*z, &mut |gz| {
                    for bi in 0..b {
                        let src = &gy[(bi * (t + 1) + 1) * d..][..t * d];
                        for (a, g) in gz[bi * t * d..][..t * d].iter_mut().zip(src) {
                            *a += g;
                        }
                    }
                });
            }
            Op::Rope {
                x,
                layout,
                positions,
            } => {
                let xs = shp(*x);
                let mut g = gy.to_vec();
                apply_rope(&mut g, xs[0], xs[1], *layout, positions, -1.0);
                acc(*x, &mut |gx| {
                    for (a, b) in gx.iter_mut().zip(&g) {
                        *a += b;
                    }
                });
            }
            Op::Attention { .. } => unreachable!("handled above"),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| {
                        for (x, y) in g.iter_mut().zip(gy) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bd[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * ad[i];
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |g| axpy(g, *f, gy)),
            Op::SelectToken { x, index } => {
                let xs = shp(*x);
                let (b, s, d) = (xs[0], xs[1], xs[2]);
                acc(*x, &mut |gx| {
                    for bi in 0..b {
                        for (a, g) in gx[(bi * s + index) * d..][..d].iter_mut().zip(&gy[bi * d..][..d]) {
                            *a += g;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gyr) in gx.chunks_mut(d).zip(y.chunks(d)).zip(gy.chunks(d)) {
                        let s = dot(yr, gyr);
                        for i in 0..d {
                            gxr[i] += yr[i] * (gyr[i] - s);
                        }
                    }
                });
            }
            Op::FocalLoss {
                p,
                target,
                weights,
                gamma,
            } => {
                let pd = val(*p);
                let k = weights.len();
                let b = pd.len() / k;
                let scale = gy[0] / b as f64;
                acc(*p, &mut |gp| {
                    for i in 0..gp.len() {
                        let yc = target[i];
                        if yc == 0.0 {
                            continue;
                        }
                        let pc = pd[i];
                        let wc = weights[i % k];
                        let q = (1.0 - pc).max(0.0);
                        let (log_p, dlog_p) = if pc > PROB_FLOOR {
                            (pc.ln(), 1.0 / pc)
                        } else {
                            (PROB_FLOOR.ln(), 0.0)
                        };
                        let dfocal = if *gamma == 0.0 {
                            0.0
                        } else {
                            -gamma * q.powf(gamma - 1.0)
                        };
                        let d = dfocal * log_p + q.powf(*gamma) * dlog_p;
                        gp[i] -= scale * yc * wc * d;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::Custom { x, backward } => {
                let gx_local = backward(val(*x), node.value.data(), gy);
                if gx_local.len() != gy.len() {
                    return Err(Error::shape(
                        "custom backward",
                        format!("returned {} values for {} inputs", gx_local.len(), gy.len()),
                    ));
                }
                acc(*x, &mut |g| {
                    for (a, b) in g.iter_mut().zip(&gx_local) {
                        *a += b;
                    }
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: HeadLayout,
        probs: &[f64],
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let HeadLayout {
            query_heads,
            kv_heads,
            head_dim,
        } = heads;
        let qs = self.shape(q);
        let (b, s) = (qs[0], qs[1]);
        let (qw, kw) = (query_heads * head_dim, kv_heads * head_dim);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; s];
        for bi in 0..b {
            for h in 0..query_heads {
                let g = heads.kv_head_for(h);
                for i in 0..s {
                    let prow = &probs[((bi * query_heads + h) * s + i) * s..][..s];
                    let go = &gy[(bi * s + i) * qw + h * head_dim..][..head_dim];
                    for j in 0..s {
                        let voff = (bi * s + j) * kw + g * head_dim;
                        dp[j] = dot(go, &vd[voff..voff + head_dim]);
                        axpy(&mut gv[voff..voff + head_dim], prow[j], go);
                    }
                    let mix = dot(prow, &dp);
                    let qoff = (bi * s + i) * qw + h * head_dim;
                    for j in 0..s {
                        let ds = prow[j] * (dp[j] - mix) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let koff = (bi * s + j) * kw + g * head_dim;
                        axpy(&mut gq[qoff..qoff + head_dim], ds, &kd[koff..koff + head_dim]);
                        axpy(&mut gk[koff..koff + head_dim], ds, &qd[qoff..qoff + head_dim]);
                    }
                }
            }
        }
        for (var, g) in [(q, gq), (k, gk), (v, gv)] {
            if self.needs(var) {
                match grads[var.0].as_mut() {
                    Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => grads[var.0] = Some(g),
                }
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn apply_rope(
    data: &mut [f64],
    batch: usize,
    seq: usize,
    layout: RopeLayout,
    positions: &[usize],
    sign: f64,
) {
    let width = layout.groups * layout.group_width;
    for bi in 0..batch {
        for (si, &pos) in positions.iter().enumerate().take(seq) {
            let tok = &mut data[(bi * seq + si) * width..][..width];
            for g in 0..layout.groups {
                let seg = &mut tok[g * layout.group_width..][..layout.rotated];
                rotate_pairs(seg, pos, layout.base, sign);
            }
        }
    }
}
