//! Reverse-mode gradients of every tape op against central differences.

use ecgstate::numerics::{
    grad_check, softmax, BatchNormStats, HeadLayout, Mode, ParamSet, RngState, RopeLayout, Tape,
    Tensor,
};
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
}

/// Weighted sum so that every output element gets a distinct upstream grad.
fn probe_weights(n: usize) -> Tensor {
    Tensor::new(&[n], (0..n).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect()).unwrap()
}

fn weighted_sum(tape: &mut Tape, y: ecgstate::numerics::Var) -> ecgstate::Result<ecgstate::numerics::Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.input(probe_weights(n).reshape(&shape)?);
    let m = tape.mul(y, w)?;
    tape.sum(m)
}

#[test]
fn conv1d_gradients() {
    let mut rng = RngState::new(10);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[2, 3, 9], &mut rng)).unwrap();
    let w = ps.add("w", random(&[4, 3, 3], &mut rng)).unwrap();
    let b = ps.add("b", random(&[4], &mut rng)).unwrap();
    for pad in [0, 1, 2] {
        let r = grad_check(&ps, |t, ps| {
            let (xv, wv, bv) = (t.param(ps, x), t.param(ps, w), t.param(ps, b));
            let y = t.conv1d(xv, wv, bv, pad)?;
            weighted_sum(t, y)
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "pad {pad}: {r:?}");
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let mut rng = RngState::new(11);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[2, 3, 4], &mut rng)).unwrap();
    let g = ps.add("gamma", random(&[3], &mut rng)).unwrap();
    let b = ps.add("beta", random(&[3], &mut rng)).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let mut stats = BatchNormStats::new(3);
        stats.mean = vec![0.1, -0.2, 0.05];
        stats.var = vec![0.8, 1.3, 0.5];
        stats.updates = 1;
        let r = grad_check(&ps, |t, ps| {
            let (xv, gv, bv) = (t.param(ps, x), t.param(ps, g), t.param(ps, b));
            let mut s = stats.clone();
            let y = t.batchnorm1d(xv, gv, bv, &mut s, mode)?;
            weighted_sum(t, y)
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{mode:?}: {r:?}");
    }
}

#[test]
fn smooth_elementwise_gradients() {
    let mut rng = RngState::new(12);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[3, 5], &mut rng)).unwrap();
    let y = ps.add("y", random(&[3, 5], &mut rng)).unwrap();
    let r = grad_check(&ps, |t, ps| {
        let (xv, yv) = (t.param(ps, x), t.param(ps, y));
        let a = t.gelu(xv)?;
        let b = t.silu(yv)?;
        let m = t.mul(a, b)?;
        let s = t.add(m, xv)?;
        let s = t.scale(s, 1.7)?;
        let p = t.softmax(s)?;
        weighted_sum(t, p)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn linear_and_rmsnorm_gradients() {
    let mut rng = RngState::new(13);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[2, 3, 4], &mut rng)).unwrap();
    let w = ps.add("w", random(&[4, 5], &mut rng)).unwrap();
    let b = ps.add("b", random(&[5], &mut rng)).unwrap();
    let g = ps.add("gain", random(&[5], &mut rng)).unwrap();
    let r = grad_check(&ps, |t, ps| {
        let (xv, wv, bv, gv) = (t.param(ps, x), t.param(ps, w), t.param(ps, b), t.param(ps, g));
        let y = t.linear(xv, wv, Some(bv))?;
        let n = t.rmsnorm(y, gv)?;
        weighted_sum(t, n)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn maxpool_dropout_and_reshaping_gradients() {
    let mut rng = RngState::new(14);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[2, 3, 8], &mut rng)).unwrap();
    let cls = ps.add("cls", random(&[1, 3], &mut rng)).unwrap();
    let r = grad_check(&ps, |t, ps| {
        let (xv, cv) = (t.param(ps, x), t.param(ps, cls));
        let p = t.maxpool1d(xv, 2, 2)?;
        let mut drng = RngState::new(5);
        let d = t.dropout(p, 0.3, &mut drng, Mode::Train)?;
        let s = t.swap_last2(d)?;
        let z = t.append_cls(s, cv)?;
        let tok = t.select_token(z, 2)?;
        let first = t.select_token(z, 0)?;
        let both = t.add(tok, first)?;
        weighted_sum(t, both)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn rope_and_attention_gradients() {
    let mut rng = RngState::new(15);
    let heads = HeadLayout {
        query_heads: 4,
        kv_heads: 2,
        head_dim: 4,
    };
    let mut ps = ParamSet::new();
    let q = ps.add("q", random(&[2, 3, 16], &mut rng)).unwrap();
    let k = ps.add("k", random(&[2, 3, 8], &mut rng)).unwrap();
    let v = ps.add("v", random(&[2, 3, 8], &mut rng)).unwrap();
    let qlay = RopeLayout {
        groups: 4,
        group_width: 4,
        rotated: 2,
        base: 10_000.0,
    };
    let klay = RopeLayout { groups: 2, ..qlay };
    let r = grad_check(&ps, |t, ps| {
        let (qv, kv, vv) = (t.param(ps, q), t.param(ps, k), t.param(ps, v));
        let qr = t.rope(qv, qlay, &[0, 1, 2])?;
        let kr = t.rope(kv, klay, &[0, 1, 2])?;
        let o = t.grouped_attention(qr, kr, vv, heads)?;
        weighted_sum(t, o)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn focal_loss_gradients() {
    let mut rng = RngState::new(16);
    let mut ps = ParamSet::new();
    let logits = ps.add("logits", random(&[4, 2], &mut rng)).unwrap();
    let target = [0.7, 0.3, 0.0, 1.0, 1.0, 0.0, 0.5, 0.5];
    for gamma in [0.0, 1.0, 2.25] {
        let r = grad_check(&ps, |t, ps| {
            let l = t.param(ps, logits);
            let p = t.softmax(l)?;
            t.focal_loss(p, &target, &[1.3, 0.7], gamma)
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "gamma {gamma}: {r:?}");
    }
}

#[test]
fn maxpool_routes_upstream_mass() {
    let mut rng = RngState::new(17);
    let mut tape = Tape::new();
    let x = tape.tracked_input(random(&[2, 2, 12], &mut rng));
    let y = tape.maxpool1d(x, 3, 2).unwrap();
    let l = weighted_sum(&mut tape, y).unwrap();
    let g = tape.backward(l).unwrap();
    let routed: f64 = g.wrt(x).unwrap().iter().sum();
    let upstream: f64 = probe_weights(tape.value(y).len()).sum();
    assert!((routed - upstream).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(xs in prop::collection::vec(-700.0f64..700.0, 1..40)) {
        let n = xs.len();
        let y = softmax(&Tensor::new(&[n], xs).unwrap(), 0).unwrap();
        prop_assert!((y.sum() - 1.0).abs() < 1e-9);
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-30.0f64..30.0, 1..20), k in -50.0f64..50.0) {
        let n = xs.len();
        let a = softmax(&Tensor::new(&[n], xs.clone()).unwrap(), 0).unwrap();
        let b = softmax(&Tensor::new(&[n], xs.iter().map(|v| v + k).collect()).unwrap(), 0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_mask_is_zero_one(xs in prop::collection::vec(-5.0f64..5.0, 8..32), window in 1usize..4, stride in 1usize..4) {
        let n = xs.len();
        let mut tape = Tape::new();
        let x = tape.tracked_input(Tensor::new(&[1, 1, n], xs).unwrap());
        let y = tape.maxpool1d(x, window, stride).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        let gx = g.wrt(x).unwrap();
        prop_assert!((gx.iter().sum::<f64>() - tape.value(y).len() as f64).abs() < 1e-12);
        prop_assert!(gx.iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
    }
}
