//! Value-level entry points for the tape ops, for callers that only need
//! the forward result.

use super::rng::RngState;
use super::tape::{BatchNormStats, Mode, RopeLayout, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn unary(x: &Tensor, f: impl FnOnce(&mut Tape, super::tape::Var) -> Result<super::tape::Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let y = f(&mut tape, v)?;
    Ok(tape.value(y).clone())
}

/// Cross-correlation of `x[B,C_in,N]` with `kernel[C_out,C_in,k]`, zero
/// padded by `padding` on both ends.
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, kv, bv) = (
        tape.input(x.clone()),
        tape.input(kernel.clone()),
        tape.input(bias.clone()),
    );
    let y = tape.conv1d(xv, kv, bv, padding)?;
    Ok(tape.value(y).clone())
}

pub fn maxpool1d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    unary(x, |t, v| t.maxpool1d(v, window, stride))
}

pub fn batchnorm1d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, gv, bv) = (
        tape.input(x.clone()),
        tape.input(gamma.clone()),
        tape.input(beta.clone()),
    );
    let y = tape.batchnorm1d(xv, gv, bv, stats, mode)?;
    Ok(tape.value(y).clone())
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    unary(x, |t, v| t.gelu(v))
}

/// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::new(shape, out)
}

pub fn rmsnorm(x: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, gv) = (tape.input(x.clone()), tape.input(gain.clone()));
    let y = tape.rmsnorm(xv, gv)?;
    Ok(tape.value(y).clone())
}

pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone());
    let bv = b.map(|b| tape.input(b.clone()));
    let y = tape.linear(xv, wv, bv)?;
    Ok(tape.value(y).clone())
}

pub fn dropout(x: &Tensor, p: f64, rng: &mut RngState, mode: Mode) -> Result<Tensor> {
    unary(x, |t, v| t.dropout(v, p, rng, mode))
}

/// Rotary embedding of `x[..., S, d_r]`: token `s` has each pair
/// `(2i, 2i+1)` rotated by `positions[s] · base^(-2i/d_r)`.
pub fn rope_rotate(x: &Tensor, positions: &[usize], base: f64) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::shape("rope", format!("need [..., S, d_r], got {shape:?}")));
    }
    let d_r = shape[shape.len() - 1];
    let s = shape[shape.len() - 2];
    let lead: usize = shape[..shape.len() - 2].iter().product();
    let flat = x.clone().reshape(&[lead, s, d_r])?;
    let layout = RopeLayout {
        groups: 1,
        group_width: d_r,
        rotated: d_r,
        base,
    };
    let out = unary(&flat, |t, v| t.rope(v, layout, positions))?;
    out.reshape(shape)
}
