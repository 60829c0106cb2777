use ecgstate::model::{
    append_cls, cce_forward, conv_block_forward, decoupled_attention, decoupled_attention_at,
    encoder_layer_forward, head_layout, memory_reduction_ratio, swiglu_forward, te_forward,
    CCEConfig, Model, ModelConfig, TEConfig,
};
use ecgstate::numerics::{grad_check, BatchNormStats, Mode, ParamSet, RngState, Tape, Tensor};

fn random(shape: &[usize], rng: &mut RngState, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * scale).collect()).unwrap()
}

fn tiny_config(layers: usize) -> ModelConfig {
    ModelConfig::new(
        TEConfig::from_plan(20, 4, 8, &[4, 6], &[5, 4], 3, 0.1).unwrap(),
        CCEConfig::new(8, 2, layers),
    )
    .unwrap()
}

/// Replaces every parameter with uniform noise so no gradient is trivially zero.
fn scramble(model: &mut Model, seed: u64) {
    let mut rng = RngState::new(seed);
    for p in model.params_mut().iter_mut() {
        let gain_like = p.name().ends_with("gain") || p.name().ends_with("gamma");
        for v in p.value_mut() {
            let u = rng.uniform() * 2.0 - 1.0;
            *v = if gain_like { 1.0 + 0.3 * u } else { 0.5 * u };
        }
    }
}

#[test]
fn te_output_shapes() {
    for (b, t) in [(2, 30), (1, 10), (3, 1)] {
        let cfg = ModelConfig::standard(t);
        let mut model = Model::new(cfg.clone(), 1).unwrap();
        let mut rng = RngState::new(2);
        let x = random(&[b, t, 500], &mut rng, 1.0);
        let ids = model.te_params().clone();
        let params = model.params().clone();
        let mut tape = Tape::new();
        let z = te_forward(
            &mut tape,
            &params,
            &ids,
            &cfg.te,
            model.bn_stats_mut(),
            &x,
            Mode::Train,
            &mut rng,
        )
        .unwrap();
        assert_eq!(tape.shape(z), &[b, t, 128]);
    }
}

#[test]
fn te_memory_ratio_matches_buffers() {
    let cfg = TEConfig::default_500hz(30, 128);
    assert_eq!(memory_reduction_ratio(&cfg), 128.0 / 500.0);
    let model_cfg = ModelConfig::standard(30);
    let model = Model::new(model_cfg, 0).unwrap();
    let mut rng = RngState::new(0);
    let x = random(&[1, 30, 500], &mut rng, 1.0);
    let mut tape = Tape::new();
    let mut stats: Vec<BatchNormStats> = model.bn_stats().to_vec();
    let z = te_forward(
        &mut tape,
        model.params(),
        model.te_params(),
        &cfg,
        &mut stats,
        &x,
        Mode::Train,
        &mut rng,
    )
    .unwrap();
    let ratio = (tape.value(z).len() / 30) as f64 / (x.len() / 30) as f64;
    assert_eq!(ratio, 128.0 / 500.0);
}

#[test]
fn te_rejects_wrong_shape() {
    let model = Model::new(ModelConfig::standard(10), 0).unwrap();
    let x = Tensor::zeros(&[1, 10, 512]);
    let err = model.predict_proba(&x).unwrap_err();
    assert!(err.to_string().contains("expected [B, 10, 500]"), "{err}");
}

#[test]
fn conv_block_shape_and_zero_input() {
    let cfg = TEConfig::default_500hz(30, 128);
    let mut model = Model::new(ModelConfig::standard(30), 0).unwrap();
    let ids = model.te_params().blocks[0];
    let params = model.params().clone();
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[1, 1, 15000]));
    let mut rng = RngState::new(0);
    let y = conv_block_forward(
        &mut tape,
        &params,
        &ids,
        &cfg.blocks[0],
        &mut model.bn_stats_mut()[0],
        x,
        Mode::Train,
        &mut rng,
        0,
    )
    .unwrap();
    assert_eq!(tape.shape(y), &[1, 16, 3000]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let odd = tape.input(Tensor::zeros(&[1, 1, 14999]));
    let err = conv_block_forward(
        &mut tape,
        &params,
        &ids,
        &cfg.blocks[0],
        &mut model.bn_stats_mut()[0],
        odd,
        Mode::Train,
        &mut rng,
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("block 0"), "{err}");
}

#[test]
fn conv_block_gradient() {
    let cfg = tiny_config(1);
    let mut model = Model::new(cfg.clone(), 3).unwrap();
    scramble(&mut model, 4);
    let ids = model.te_params().blocks[0];
    let mut rng = RngState::new(5);
    let x = random(&[2, 1, 20], &mut rng, 1.0);
    let probe = random(&[2, 4, 4], &mut rng, 1.0);
    let r = grad_check(model.params(), |tape, ps| {
        let xv = tape.input(x.clone());
        let mut st = BatchNormStats::new(4);
        let mut drng = RngState::new(6);
        let y = conv_block_forward(tape, ps, &ids, &cfg.te.blocks[0], &mut st, xv, Mode::Train, &mut drng, 0)?;
        let w = tape.input(probe.clone());
        let m = tape.mul(y, w)?;
        tape.sum(m)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

#[test]
fn te_is_deterministic_in_eval_mode() {
    let cfg = tiny_config(1);
    let mut model = Model::new(cfg, 1).unwrap();
    scramble(&mut model, 2);
    let mut rng = RngState::new(3);
    let x = random(&[2, 4, 20], &mut rng, 1.0);
    let mut tape = Tape::new();
    model.forward(&mut tape, &x, Mode::Train, &mut rng).unwrap();
    let a = model.predict_proba(&x).unwrap();
    let b = model.predict_proba(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn te_gradient_tiny() {
    let cfg = tiny_config(1);
    let mut model = Model::new(cfg.clone(), 7).unwrap();
    scramble(&mut model, 8);
    let ids = model.te_params().clone();
    let mut rng = RngState::new(9);
    let x = random(&[2, 4, 20], &mut rng, 1.0);
    let probe = random(&[2, 4, 8], &mut rng, 1.0);
    let r = grad_check(model.params(), |tape, ps| {
        let mut stats: Vec<BatchNormStats> = cfg.te.blocks.iter().map(|b| BatchNormStats::new(b.out_channels)).collect();
        let mut drng = RngState::new(10);
        let z = te_forward(tape, ps, &ids, &cfg.te, &mut stats, &x, Mode::Train, &mut drng)?;
        let w = tape.input(probe.clone());
        let m = tape.mul(z, w)?;
        tape.sum(m)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

#[test]
fn cls_token_is_prepended() {
    let mut ps = ParamSet::new();
    let mut rng = RngState::new(0);
    let cls = ps.add("cls", random(&[1, 128], &mut rng, 1.0)).unwrap();
    for t in [30, 1] {
        let mut tape = Tape::new();
        let z = tape.input(random(&[2, t, 128], &mut rng, 1.0));
        let out = append_cls(&mut tape, &ps, cls, z).unwrap();
        assert_eq!(tape.shape(out), &[2, t + 1, 128]);
        let od = tape.value(out).data();
        let zd = tape.value(z).data();
        for b in 0..2 {
            assert_eq!(&od[b * (t + 1) * 128..][..128], ps.get(cls).value());
            assert_eq!(&od[(b * (t + 1) + 1) * 128..][..t * 128], &zd[b * t * 128..][..t * 128]);
        }
    }
    let mut tape = Tape::new();
    let bad = tape.input(Tensor::zeros(&[1, 3, 64]));
    assert!(append_cls(&mut tape, &ps, cls, bad).is_err());
}

#[test]
fn rope_scores_depend_on_relative_position() {
    let mut rng = RngState::new(21);
    let q = random(&[1, 8], &mut rng, 1.0);
    let k = random(&[1, 8], &mut rng, 1.0);
    let score = |m: usize, n: usize| {
        let a = ecgstate::numerics::rope_rotate(&q, &[m], 10_000.0).unwrap();
        let b = ecgstate::numerics::rope_rotate(&k, &[n], 10_000.0).unwrap();
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
    };
    for (m, n) in [(0, 3), (5, 2), (7, 7)] {
        for delta in [1, 4, 29] {
            assert!((score(m, n) - score(m + delta, n + delta)).abs() < 1e-9);
        }
    }
}

fn attention_setup(d: usize, h: usize, seed: u64) -> (ParamSet, ecgstate::model::AttentionParams, CCEConfig) {
    let cfg = CCEConfig::new(d, h, 1);
    let mut model_cfg = tiny_config(1);
    model_cfg.te.embed_dim = d;
    model_cfg.cce = cfg.clone();
    let mut model = Model::new(model_cfg, seed).unwrap();
    scramble(&mut model, seed + 1);
    let ids = model.cce_params().layers[0].attn;
    (model.params().clone(), ids, cfg)
}

#[test]
fn single_token_attention_copies_values() {
    let (ps, ids, cfg) = attention_setup(8, 2, 30);
    let mut rng = RngState::new(31);
    let z = random(&[1, 1, 8], &mut rng, 1.0);
    let mut tape = Tape::new();
    let zv = tape.input(z.clone());
    let out = decoupled_attention(&mut tape, &ps, &ids, &cfg, zv).unwrap();
    assert_eq!(tape.attention_probs(out.heads).unwrap(), &[1.0, 1.0]);
    // heads: query head h reads value head h/2 → [V_0 | V_0] with one KV head
    let v = ecgstate::numerics::linear(&z, ps.get(ids.w_v).tensor(), None).unwrap();
    let mut replicas = v.data().to_vec();
    replicas.extend_from_slice(v.data());
    let concat = Tensor::new(&[1, 1, 8], replicas).unwrap();
    let expected = ecgstate::numerics::linear(&concat, ps.get(ids.w_o).tensor(), None).unwrap();
    for (a, b) in tape.value(out.output).data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn query_heads_pair_on_kv_heads() {
    let cfg = CCEConfig::new(128, 8, 2);
    let layout = head_layout(&cfg);
    assert_eq!((layout.query_heads, layout.kv_heads, layout.head_dim), (8, 4, 16));
    let map: Vec<usize> = (0..8).map(|h| layout.kv_head_for(h)).collect();
    assert_eq!(map, vec![0, 0, 1, 1, 2, 2, 3, 3]);
}

#[test]
fn attention_rows_are_stochastic() {
    let (ps, ids, cfg) = attention_setup(16, 4, 40);
    let mut rng = RngState::new(41);
    let mut tape = Tape::new();
    let z = tape.input(random(&[2, 7, 16], &mut rng, 2.0));
    let out = decoupled_attention(&mut tape, &ps, &ids, &cfg, z).unwrap();
    let probs = tape.attention_probs(out.heads).unwrap();
    assert_eq!(probs.len(), 2 * 4 * 7 * 7);
    for row in probs.chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn attention_is_invariant_to_common_position_shift() {
    let (ps, ids, cfg) = attention_setup(16, 4, 50);
    let mut rng = RngState::new(51);
    let z = random(&[1, 5, 16], &mut rng, 1.0);
    let run = |offset: usize| {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let pos: Vec<usize> = (0..5).map(|p| p + offset).collect();
        let out = decoupled_attention_at(&mut tape, &ps, &ids, &cfg, zv, &pos).unwrap();
        tape.attention_probs(out.heads).unwrap().to_vec()
    };
    let base = run(0);
    for offset in [1, 13, 200] {
        for (a, b) in base.iter().zip(run(offset)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn content_half_ignores_positions() {
    let (mut ps, ids, cfg) = attention_setup(16, 4, 60);
    let dh = cfg.head_dim();
    // zero the rotated half of every query and key head
    for (id, heads) in [(ids.w_q, 4), (ids.w_k, 2)] {
        let width = heads * dh;
        let w = ps.get_mut(id).value_mut();
        for row in w.chunks_mut(width) {
            for h in 0..heads {
                row[h * dh..h * dh + dh / 2].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let mut rng = RngState::new(61);
    let z = random(&[1, 5, 16], &mut rng, 1.0);
    let run = |pos: &[usize]| {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let out = decoupled_attention_at(&mut tape, &ps, &ids, &cfg, zv, pos).unwrap();
        tape.attention_probs(out.heads).unwrap().to_vec()
    };
    let a = run(&[0, 1, 2, 3, 4]);
    let b = run(&[4, 0, 3, 1, 2]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn perturbing_kv_head_touches_only_its_query_pair() {
    let (ps, ids, cfg) = attention_setup(16, 4, 70);
    let dh = cfg.head_dim();
    let mut rng = RngState::new(71);
    let z = random(&[2, 6, 16], &mut rng, 1.0);
    let heads_out = |ps: &ParamSet| {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let out = decoupled_attention(&mut tape, ps, &ids, &cfg, zv).unwrap();
        tape.value(out.heads).data().to_vec()
    };
    let base = heads_out(&ps);
    for j in 0..cfg.kv_heads() {
        let mut perturbed = ps.clone();
        let kv_width = cfg.kv_width();
        for row in perturbed.get_mut(ids.w_k).value_mut().chunks_mut(kv_width) {
            for v in &mut row[j * dh..(j + 1) * dh] {
                *v += 0.7;
            }
        }
        let out = heads_out(&perturbed);
        for (tok, (a, b)) in base.chunks(16).zip(out.chunks(16)).enumerate() {
            for h in 0..4 {
                let (sa, sb) = (&a[h * dh..(h + 1) * dh], &b[h * dh..(h + 1) * dh]);
                if h / 2 == j {
                    assert_ne!(sa, sb, "kv head {j} should move query head {h} (token {tok})");
                } else {
                    assert_eq!(sa, sb, "kv head {j} leaked into query head {h}");
                }
            }
        }
    }
}

#[test]
fn swiglu_zero_gate_and_shape() {
    let model = Model::new(ModelConfig::standard(30), 80).unwrap();
    let mut ps = model.params().clone();
    let ffn = model.cce_params().layers[0].ffn;
    let mut rng = RngState::new(81);
    // give the down projection weight so that a zero result is informative
    ps.get_mut(ffn.w_down).value_mut().iter_mut().for_each(|v| *v = 0.1);
    let z = random(&[2, 31, 128], &mut rng, 1.0);
    let mut tape = Tape::new();
    let zv = tape.input(z.clone());
    let y = swiglu_forward(&mut tape, &ps, &ffn, zv).unwrap();
    assert_eq!(tape.shape(y), &[2, 31, 128]);
    assert!(tape.value(y).data().iter().any(|&v| v != 0.0));

    ps.get_mut(ffn.w_gate).value_mut().iter_mut().for_each(|v| *v = 0.0);
    let y = swiglu_forward(&mut tape, &ps, &ffn, zv).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn swiglu_gradient() {
    let mut model = Model::new(tiny_config(1), 90).unwrap();
    scramble(&mut model, 91);
    let ffn = model.cce_params().layers[0].ffn;
    let mut rng = RngState::new(92);
    let z = random(&[2, 3, 8], &mut rng, 1.0);
    let probe = random(&[2, 3, 8], &mut rng, 1.0);
    let r = grad_check(model.params(), |tape, ps| {
        let zv = tape.input(z.clone());
        let y = swiglu_forward(tape, ps, &ffn, zv)?;
        let w = tape.input(probe.clone());
        let m = tape.mul(y, w)?;
        tape.sum(m)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

#[test]
fn fresh_layers_are_identity() {
    let cfg = ModelConfig::standard(30);
    let model = Model::new(cfg.clone(), 100).unwrap();
    let mut rng = RngState::new(101);
    let z = random(&[2, 31, 128], &mut rng, 1.0);
    for mode in [Mode::Train, Mode::Eval] {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let layer = model.cce_params().layers[0];
        let y = encoder_layer_forward(&mut tape, model.params(), &layer, &cfg.cce, zv, &mut rng, mode).unwrap();
        assert_eq!(tape.value(y).data(), z.data());
        let y = cce_forward(&mut tape, model.params(), model.cce_params(), &cfg.cce, zv, &mut rng, mode).unwrap();
        assert_eq!(tape.shape(y), &[2, 31, 128]);
        assert_eq!(tape.value(y).data(), z.data());
    }
}

#[test]
fn encoder_layer_gradient() {
    let cfg = tiny_config(1);
    let mut model = Model::new(cfg.clone(), 110).unwrap();
    scramble(&mut model, 111);
    let layer = model.cce_params().layers[0];
    let mut rng = RngState::new(112);
    let z = random(&[1, 4, 8], &mut rng, 1.0);
    let probe = random(&[1, 4, 8], &mut rng, 1.0);
    let r = grad_check(model.params(), |tape, ps| {
        let zv = tape.input(z.clone());
        let mut drng = RngState::new(113);
        let y = encoder_layer_forward(tape, ps, &layer, &cfg.cce, zv, &mut drng, Mode::Train)?;
        let w = tape.input(probe.clone());
        let m = tape.mul(y, w)?;
        tape.sum(m)
    })
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

#[test]
fn cce_depth_variants() {
    let mut rng = RngState::new(120);
    let z = random(&[1, 31, 128], &mut rng, 1.0);
    for layers in [0, 2] {
        let mut cfg = ModelConfig::standard(30);
        cfg.cce.num_layers = layers;
        let mut model = Model::new(cfg.clone(), 121).unwrap();
        scramble(&mut model, 122);
        let run = |rng: &mut RngState| {
            let mut tape = Tape::new();
            let zv = tape.input(z.clone());
            let y = cce_forward(&mut tape, model.params(), model.cce_params(), &cfg.cce, zv, rng, Mode::Eval).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(&mut RngState::new(1));
        let b = run(&mut RngState::new(2));
        assert_eq!(a, b);
        assert_eq!(a.len(), 31 * 128);
        if layers == 0 {
            assert_eq!(a, z.data());
        }
    }
}
