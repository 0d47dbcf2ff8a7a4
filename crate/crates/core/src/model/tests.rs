use super::gradcheck::{check_model_gradients, RELATIVE_ERROR_FLOOR};
use super::*;
use crate::tokenizer::{BOS, EOS};

fn tiny(visual: VisualInput) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_visual: 4,
        n_enc_layers: 3,
        n_dec_layers: 2,
        n_heads: 2,
        ffn_dim: 16,
        temporal_layers: 1,
        temporal_heads: 2,
        temporal_ffn: 8,
        fusion_layer: 2,
        fusion_heads: 1,
        max_src_len: 16,
        max_tgt_len: 10,
        n_frames: 3,
        vocab_size: 20,
        visual_input: visual,
        ..ModelConfig::default()
    }
}

fn wave(shape: &[usize], phase: f64, amp: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| amp * ((i as f64) * 0.7 + phase).sin())
}

fn feats(cfg: &ModelConfig, phase: f64) -> FrameFeatureSequence<f64> {
    FrameFeatureSequence::contiguous(wave(&[cfg.n_frames, cfg.d_visual], phase, 1.0)).unwrap()
}

fn example(cfg: &ModelConfig, src: &[TokenId], tgt: &[TokenId], phase: f64) -> Example<f64> {
    Example {
        source: TokenSequence::new(src.to_vec()),
        features: cfg.uses_visual().then(|| feats(cfg, phase)),
        summary: TokenSequence::new(tgt.to_vec()),
    }
}

/// Fusion evaluated one scalar at a time.
fn fuse_by_hand(a: &Tensor<f64>, vp: &Tensor<f64>, wq: &Tensor<f64>, wk: &Tensor<f64>, wv: &Tensor<f64>, wo: &Tensor<f64>, gain: &[f64], bias: &[f64]) -> Vec<Vec<f64>> {
    let (n, m, d) = (a.rows(), vp.rows(), a.cols());
    let lin = |x: &Tensor<f64>, w: &Tensor<f64>, r: usize, o: usize| -> f64 {
        let mut s = 0.0;
        for j in 0..x.cols() {
            s += w.at(o, j) * x.at(r, j);
        }
        s
    };
    let mut out = Vec::new();
    for i in 0..n {
        let q: Vec<f64> = (0..d).map(|o| lin(a, wq, i, o)).collect();
        let mut scores = Vec::new();
        for j in 0..m {
            let mut s = 0.0;
            for o in 0..d {
                s += q[o] * lin(vp, wk, j, o);
            }
            scores.push(s / (d as f64).sqrt());
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let tot: f64 = e.iter().sum();
        let mut z = vec![0.0; d];
        for j in 0..m {
            for o in 0..d {
                z[o] += e[j] / tot * lin(vp, wv, j, o);
            }
        }
        let cat: Vec<f64> = (0..d).map(|c| a.at(i, c)).chain(z).collect();
        let mut y = vec![0.0; d];
        for o in 0..d {
            for c in 0..2 * d {
                y[o] += wo.at(o, c) * cat[c];
            }
            y[o] += a.at(i, o);
        }
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        out.push((0..d).map(|o| gain[o] * (y[o] - mean) / (var + 1e-5).sqrt() + bias[o]).collect());
    }
    out
}

fn fusion_case(m: usize) {
    let cfg = ModelConfig {
        d_model: 4,
        n_heads: 2,
        n_frames: m,
        ..tiny(VisualInput::Features)
    };
    let mut model = ClipSum::<f64>::new(cfg, 1).unwrap();
    let p = model.params_mut();
    p.assign("fusion.q.weight", wave(&[4, 4], 0.1, 0.5)).unwrap();
    p.assign("fusion.k.weight", wave(&[4, 4], 0.9, 0.5)).unwrap();
    p.assign("fusion.v.weight", wave(&[4, 4], 1.7, 0.5)).unwrap();
    p.assign("fusion.o.weight", wave(&[4, 8], 2.3, 0.4)).unwrap();
    p.assign("fusion.ln.gain", Tensor::new(vec![4], vec![1.0, 0.5, 2.0, -1.0]).unwrap()).unwrap();
    p.assign("fusion.ln.bias", Tensor::new(vec![4], vec![0.1, -0.2, 0.0, 0.3]).unwrap()).unwrap();
    let a = wave(&[2, 4], 0.3, 1.2);
    let vp = wave(&[m, 4], 1.1, 0.8);
    let got = model.fuse(&a, &vp).unwrap();
    let p = model.params();
    let want = fuse_by_hand(
        &a,
        &vp,
        p.get("fusion.q.weight").unwrap(),
        p.get("fusion.k.weight").unwrap(),
        p.get("fusion.v.weight").unwrap(),
        p.get("fusion.o.weight").unwrap(),
        p.get("fusion.ln.gain").unwrap().data(),
        p.get("fusion.ln.bias").unwrap().data(),
    );
    assert_eq!(got.shape(), &[2, 4]);
    for i in 0..2 {
        for j in 0..4 {
            assert!((got.at(i, j) - want[i][j]).abs() < 1e-6, "({i},{j}) {} vs {}", got.at(i, j), want[i][j]);
        }
    }
}

#[test]
fn fusion_matches_scalar_evaluation() {
    fusion_case(3);
}

#[test]
fn fusion_with_one_frame() {
    fusion_case(1);
}

#[test]
fn shapes() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let v = model.encode_visual(&feats(&cfg, 0.0)).unwrap();
    assert_eq!(v.shape(), &[3, 4]);
    let vp = model.project_visual(&v).unwrap();
    assert_eq!(vp.shape(), &[3, 8]);
    let enc = model.encoder_forward(&[BOS, 5, 6, EOS], Some(&vp)).unwrap();
    assert_eq!(enc.shape(), &[4, 8]);
    let src = model.encode_source(&[BOS, 5, 6, EOS], Some(&feats(&cfg, 0.0))).unwrap();
    let logits = model.decoder_forward(&[BOS, 7, 8], &src).unwrap();
    assert_eq!(logits.shape(), &[3, 20]);
}

#[test]
fn shape_errors() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let wrong = FrameFeatureSequence::contiguous(Tensor::zeros(&[4, 4])).unwrap();
    assert!(matches!(model.encode_visual(&wrong), Err(Error::Shape { .. })));
    let long: Vec<TokenId> = vec![5; 17];
    assert!(model.encoder_forward(&long, None).is_err());
    let src = model.encode_source(&[BOS, EOS], Some(&feats(&cfg, 0.0))).unwrap();
    assert!(model.decoder_forward(&[5; 11], &src).is_err());
    assert!(model.encode_source(&[BOS, EOS], None).is_err());
}

#[test]
fn zero_output_projection_decouples_visual_input() {
    let cfg = tiny(VisualInput::Features);
    let mut model = ClipSum::<f64>::new(cfg.clone(), 2).unwrap();
    model.params_mut().assign("fusion.o.weight", Tensor::zeros(&[8, 16])).unwrap();
    let toks = [BOS, 5, 9, 4, EOS];
    let a = model.encode_source(&toks, Some(&feats(&cfg, 0.0))).unwrap();
    let b = model.encode_source(&toks, Some(&feats(&cfg, 2.5))).unwrap();
    assert_eq!(a.hidden, b.hidden);
}

#[test]
fn visual_features_reach_the_encoder() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg.clone(), 2).unwrap();
    let toks = [BOS, 5, 9, 4, EOS];
    let a = model.encode_source(&toks, Some(&feats(&cfg, 0.0))).unwrap();
    let b = model.encode_source(&toks, Some(&feats(&cfg, 2.5))).unwrap();
    assert!(a.hidden.max_abs_diff(&b.hidden) > 1e-9);
}

#[test]
fn fusion_layer_location_matters() {
    let base = ModelConfig {
        n_enc_layers: 6,
        init_std: 0.3,
        ..tiny(VisualInput::Features)
    };
    let donor = ClipSum::<f64>::new(ModelConfig { fusion_layer: 1, ..base.clone() }, 4).unwrap();
    let named: Vec<(String, Tensor<f64>)> = donor.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
    let toks = [BOS, 5, 9, 4, EOS];
    let outs: Vec<Tensor<f64>> = [3, 4, 5, 6]
        .iter()
        .map(|&k| {
            let m = ClipSum::from_named_tensors(ModelConfig { fusion_layer: k, ..base.clone() }, named.clone()).unwrap();
            m.encode_source(&toks, Some(&feats(&base, 0.4))).unwrap().hidden
        })
        .collect();
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            assert!(outs[i].max_abs_diff(&outs[j]) > 1e-6, "layers {i} and {j} agree");
        }
    }
}

#[test]
fn decoder_is_causal() {
    let cfg = ModelConfig {
        init_std: 0.3,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 5).unwrap();
    let src = model.encode_source(&[BOS, 5, 6, 7, EOS], Some(&feats(&cfg, 0.0))).unwrap();
    let a = model.decoder_forward(&[BOS, 8, 9, 10, 11, 12], &src).unwrap();
    let b = model.decoder_forward(&[BOS, 8, 9, 13, 4, 19], &src).unwrap();
    for t in 0..3 {
        assert_eq!(a.row(t), b.row(t), "position {t}");
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn source_padding_does_not_leak() {
    let cfg = ModelConfig {
        init_std: 0.3,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 6).unwrap();
    let f = feats(&cfg, 0.0);
    let short = model.encode_source(&[BOS, 5, 6, 7, EOS], Some(&f)).unwrap();
    let padded = model.encode_source(&[BOS, 5, 6, 7, EOS, PAD, PAD, PAD], Some(&f)).unwrap();
    for r in 0..5 {
        for (x, y) in short.hidden.row(r).iter().zip(padded.hidden.row(r)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
    let l1 = model.decoder_forward(&[BOS, 9, 10], &short).unwrap();
    let l2 = model.decoder_forward(&[BOS, 9, 10], &padded).unwrap();
    assert!(l1.max_abs_diff(&l2) < 1e-5);
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = ModelConfig {
        init_std: 0.5,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 7).unwrap();
    let ex = example(&cfg, &[BOS, 5, 6, EOS, PAD], &[BOS, 8, 9, EOS], 0.2);
    let mut g = model.bind(Tape::inference()).unwrap();
    g.record_attention();
    model.loss_in(&mut g, &[&ex]).unwrap();
    let maps = g.attention_maps();
    // temporal 2 heads, encoder 3x2, fusion 1, decoder 2x(2+2)
    assert_eq!(maps.len(), 2 + 6 + 1 + 8);
    for m in maps {
        for r in 0..m.rows() {
            let s: f64 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(m.row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn adapter_group_is_exactly_the_visual_layers() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg, 0).unwrap();
    let mut adapter: Vec<&str> = model
        .params()
        .iter()
        .filter(|p| p.group == Group::Adapter)
        .map(|p| p.name.as_str())
        .collect();
    adapter.sort_unstable();
    let mut expected = vec![
        "visual.pos",
        "visual.proj.weight",
        "fusion.q.weight",
        "fusion.k.weight",
        "fusion.v.weight",
        "fusion.o.weight",
        "fusion.ln.gain",
        "fusion.ln.bias",
    ];
    let temporal: Vec<String> = ["q", "k", "v", "o"]
        .iter()
        .flat_map(|x| ["weight", "bias"].map(|w| format!("visual.temporal.0.self_attn.{x}.{w}")))
        .chain(["ln1", "ln2"].iter().flat_map(|n| ["gain", "bias"].map(|w| format!("visual.temporal.0.{n}.{w}"))))
        .chain(["fc1", "fc2"].iter().flat_map(|n| ["weight", "bias"].map(|w| format!("visual.temporal.0.ffn.{n}.{w}"))))
        .collect();
    expected.extend(temporal.iter().map(String::as_str));
    expected.sort_unstable();
    assert_eq!(adapter, expected);
    assert!(model
        .params()
        .iter()
        .filter(|p| p.group == Group::Backbone)
        .all(|p| !p.name.starts_with("visual.") && !p.name.starts_with("fusion.")));

    let text_only = ClipSum::<f64>::new(tiny(VisualInput::None), 0).unwrap();
    assert!(text_only.params().iter().all(|p| p.group == Group::Backbone));
}

#[test]
fn initial_loss_is_near_uniform() {
    let cfg = ModelConfig {
        vocab_size: 200,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 8).unwrap();
    let exs: Vec<Example<f64>> = (0..4)
        .map(|i| example(&cfg, &[BOS, 10 + i, 50 + i, 90, EOS], &[BOS, 100 + i, 150, 199 - i, 7, EOS], i as f64))
        .collect();
    let refs: Vec<&Example<f64>> = exs.iter().collect();
    let loss = model.forward_loss(&refs).unwrap();
    let uniform = (200f64).ln();
    assert!((loss - uniform).abs() / uniform < 0.05, "{loss} vs {uniform}");
}

#[test]
fn all_pad_target_is_an_error() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let ex = example(&cfg, &[BOS, 5, EOS], &[BOS, PAD, PAD], 0.0);
    assert!(matches!(model.forward_loss(&[&ex]), Err(Error::Data(m)) if m.contains("non-pad")));
    assert!(model.forward_loss(&[]).is_err());
}

#[test]
fn features_never_receive_gradients() {
    let cfg = tiny(VisualInput::Features);
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let f = feats(&cfg, 0.0);
    let mut g = model.bind(Tape::new()).unwrap();
    let input = g.tape.constant_ref(&f.features).unwrap();
    let v = model.encode_visual_in(&mut g, input).unwrap();
    let vp = model.project_visual_in(&mut g, v).unwrap();
    let enc = model.encoder_in(&mut g, &[BOS, 5, EOS], Some(vp)).unwrap();
    let loss = g.tape.sum(enc).unwrap();
    assert!(!g.tape.requires_grad(input));
    let grads = g.tape.backward(loss).unwrap();
    assert!(grads.get(input).is_none());
}

#[test]
fn temporal_stack_without_layers_adds_positions() {
    let cfg = ModelConfig {
        temporal_layers: 0,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let f = feats(&cfg, 0.0);
    let out = model.encode_visual(&f).unwrap();
    let expect = f.features.add(model.params().get("visual.pos").unwrap()).unwrap();
    assert_eq!(out, expect);
}

#[test]
fn frame_order_matters_only_through_positions() {
    let cfg = ModelConfig {
        init_std: 0.3,
        ..tiny(VisualInput::Features)
    };
    let mut model = ClipSum::<f64>::new(cfg.clone(), 9).unwrap();
    let f = feats(&cfg, 0.0);
    let rows: Vec<Vec<f64>> = [2, 0, 1].iter().map(|&r| f.features.row(r).to_vec()).collect();
    let perm = FrameFeatureSequence::contiguous(Tensor::from_rows(&rows).unwrap()).unwrap();
    let toks = [BOS, 5, 6, EOS];
    let a = model.encode_source(&toks, Some(&f)).unwrap();
    let b = model.encode_source(&toks, Some(&perm)).unwrap();
    assert!(a.hidden.max_abs_diff(&b.hidden) > 1e-6);

    model.params_mut().assign("visual.pos", Tensor::zeros(&[3, 4])).unwrap();
    let a = model.encode_source(&toks, Some(&f)).unwrap();
    let b = model.encode_source(&toks, Some(&perm)).unwrap();
    assert!(a.hidden.max_abs_diff(&b.hidden) < 1e-12);
}

#[test]
fn text_only_model_ignores_features() {
    let cfg = tiny(VisualInput::None);
    let model = ClipSum::<f64>::new(cfg.clone(), 0).unwrap();
    let ex = example(&cfg, &[BOS, 5, EOS], &[BOS, 6, EOS], 0.0);
    assert!(ex.features.is_none());
    assert!(model.forward_loss(&[&ex]).unwrap().is_finite());
    assert!(model.encode_visual(&feats(&tiny(VisualInput::Features), 0.0)).is_err());
}

#[test]
fn seeds_determine_weights() {
    let cfg = tiny(VisualInput::Features);
    let a = ClipSum::<f64>::new(cfg.clone(), 3).unwrap();
    let b = ClipSum::<f64>::new(cfg.clone(), 3).unwrap();
    let c = ClipSum::<f64>::new(cfg, 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        init_std: 0.2,
        ..tiny(VisualInput::Features)
    };
    let model = ClipSum::<f64>::new(cfg.clone(), 10).unwrap();
    let a = example(&cfg, &[BOS, 5, 6, 7, EOS, PAD], &[BOS, 8, 9, EOS], 0.1);
    let b = example(&cfg, &[BOS, 11, 12, EOS], &[BOS, 13, 14, 15, EOS, PAD], 0.7);
    let report = check_model_gradients(&model, &[&a, &b], 2, 1e-5, RELATIVE_ERROR_FLOOR, 0).unwrap();
    assert!(report.covers(Group::Adapter) && report.covers(Group::Backbone));
    assert!(report.max_rel_error() <= 1e-6, "{:?}", report.worst());
}
