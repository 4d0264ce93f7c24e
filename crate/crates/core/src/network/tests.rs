use std::time::Instant;

use srunet_tensor::{Tensor, Var};

use super::*;

fn input(n: usize, size: usize, seed: f64) -> Var<f64> {
    Var::constant(Tensor::from_fn(&[n, 3, size, size], |i| {
        0.5 + 0.45 * ((i as f64 + 1.0) * seed).sin()
    }))
}

fn tiny(size: usize) -> (Srunet, ParamStore<f64>) {
    Srunet::new(NetworkConfig::tiny(size), 7).unwrap()
}

fn spatial(v: &Var<f64>) -> [usize; 2] {
    [v.shape()[2], v.shape()[3]]
}

#[test]
fn tiny_stage_sizes() {
    let (net, store) = tiny(64);
    let ctx = Ctx::eval(&store);
    let x = net.backbone().encode(&ctx, &input(1, 64, 0.3)).unwrap();
    let sizes: Vec<_> = x.iter().map(spatial).collect();
    assert_eq!(sizes, vec![[16, 16], [8, 8], [4, 4], [4, 4]]);
    let chans: Vec<_> = x.iter().map(|v| v.shape()[1]).collect();
    assert_eq!(chans, vec![16, 32, 64, 64]);
}

#[test]
fn full_preset_stage_sizes_and_widths() {
    let cfg = NetworkConfig {
        input_size: (64, 64),
        ..NetworkConfig::default()
    };
    let (net, store) = Srunet::new::<f32>(cfg, 1).unwrap();
    let ctx = Ctx::eval(&store);
    let img = Var::constant(Tensor::<f32>::full(&[1, 3, 64, 64], 0.5));
    let x = net.backbone().encode(&ctx, &img).unwrap();
    let dims: Vec<_> = x.iter().map(|v| v.shape()[1..].to_vec()).collect();
    assert_eq!(
        dims,
        vec![vec![256, 16, 16], vec![512, 8, 8], vec![1024, 4, 4], vec![2048, 4, 4]]
    );
    let out = net.forward(&ctx, &img, &img).unwrap();
    assert_eq!(out.logits.shape(), &[1, 2, 64, 64]);
    assert_eq!(out.representation.shape(), &[1, 256, 16, 16]);
}

#[test]
fn rejects_sizes_not_divisible_by_16() {
    assert!(Srunet::new::<f64>(NetworkConfig::tiny(72), 0).is_err());
    let (net, store) = tiny(64);
    let bad = input(1, 40, 0.1);
    assert!(net.forward(&Ctx::eval(&store), &bad, &bad).is_err());
}

#[test]
fn eval_forward_is_deterministic() {
    let (net, store) = tiny(32);
    let (img, map) = (input(2, 32, 0.3), input(2, 32, 0.7));
    let a = net.forward(&Ctx::eval(&store), &img, &map).unwrap();
    let b = net.forward(&Ctx::eval(&store), &img, &map).unwrap();
    assert_eq!(a.logits.value(), b.logits.value());
    assert_eq!(a.representation.value(), b.representation.value());
}

#[test]
fn map_encoder_shapes_and_linearity() {
    let (net, store) = tiny(64);
    let enc = net.map_encoder().unwrap();
    let ctx = Ctx::train(&store);
    let m = enc.forward(&ctx, &input(1, 512, 0.2)).unwrap();
    assert_eq!(m.shape(), &[1, 64, 32, 32]);

    // Constant map: interior (outside the receptive field of any padding) is constant.
    let flat = Var::constant(Tensor::full(&[1, 3, 256, 256], 0.8));
    let m = enc.forward(&Ctx::eval(&store), &flat).unwrap();
    for c in 0..64 {
        let centre = m.value().at4(0, c, 8, 8);
        for y in 6..10 {
            for x in 6..10 {
                assert!((m.value().at4(0, c, y, x) - centre).abs() < 1e-9);
            }
        }
    }

    // Zero map with zero biases: all-zero features, in both modes.
    let zero = Var::constant(Tensor::zeros(&[2, 3, 64, 64]));
    for train in [false, true] {
        let out = enc.forward(&Ctx::new(&store, train, false), &zero).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn bem_with_zero_mix_weights_passes_stage1_through() {
    let (net, mut store) = tiny(64);
    for c in net.bem().mix().convs() {
        store.get_mut(c.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let img = input(2, 64, 0.4);
    for train in [false, true] {
        let ctx = Ctx::new(&store, train, false);
        let x1 = net.backbone().stage1(&ctx, &img).unwrap();
        let edges = net.edge_map(&ctx, &img).unwrap();
        let fused = net.bem().forward(&ctx, &x1, &edges).unwrap();
        assert_eq!(fused.shape(), x1.shape());
        assert_eq!(fused.shape()[1], 16);
        for (a, b) in fused.value().data().iter().zip(x1.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn bem_rejects_spatial_mismatch() {
    let (net, store) = tiny(64);
    let ctx = Ctx::eval(&store);
    let x1 = Var::constant(Tensor::zeros(&[1, 16, 16, 16]));
    let edges = Var::constant(Tensor::zeros(&[1, 1, 32, 32]));
    assert!(net.bem().forward(&ctx, &x1, &edges).is_err());
}

#[test]
fn uniform_map_feature_gives_uniform_spatial_attention() {
    let (net, store) = tiny(64);
    let ctx = Ctx::eval(&store);
    // Uniform along space, varying over channels.
    let m4 = Var::constant(Tensor::from_fn(&[1, 64, 8, 8], |i| (i / 64) as f64 * 0.01));
    let s = net.fusion().spatial_weights(&ctx, &m4).unwrap();
    assert!(s.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    // 7×7 padding touches the border, so compare the unpadded centre only.
    let centre = s.value().at4(0, 0, 3, 3);
    assert!((s.value().at4(0, 0, 4, 4) - centre).abs() < 1e-12);

    // With a truly uniform map feature, F_1 equals the channel-attended
    // image feature scaled by the single attention value.
    let m4 = Var::constant(Tensor::full(&[1, 64, 1, 1], 0.3));
    let b1 = Var::constant(Tensor::from_fn(&[1, 64, 1, 1], |i| i as f64 * 0.02 - 0.5));
    let s = net.fusion().spatial_weights(&ctx, &m4).unwrap().value().data()[0];
    let f1 = net.fusion().forward(&ctx, &b1, Some(&m4)).unwrap();
    let scaled = Var::constant(b1.value().scale(s));
    let ca = net.fusion().channel_weights(&ctx, &scaled).unwrap();
    let want = scaled.mul(&ca).unwrap();
    for (a, b) in f1.value().data().iter().zip(want.value().data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(f1.shape(), b1.shape());
}

#[test]
fn fusion_rejects_scale_mismatch() {
    let (net, store) = tiny(64);
    let ctx = Ctx::eval(&store);
    let b4 = Var::constant(Tensor::zeros(&[1, 64, 4, 4]));
    let m4 = Var::constant(Tensor::zeros(&[1, 64, 8, 8]));
    assert!(net.fusion().forward(&ctx, &b4, Some(&m4)).is_err());
}

#[test]
fn aspp_output_and_constant_input_branches() {
    let cfg = NetworkConfig {
        aspp_rates: [2, 3, 4],
        ..NetworkConfig::tiny(64)
    };
    let (net, mut store) = Srunet::new::<f64>(cfg, 3).unwrap();
    // Give all dilated branches the same weights; on a constant input their
    // interiors then agree regardless of rate.
    let ids: Vec<_> = net.aspp().dilated().iter().map(|d| d.conv.weight).collect();
    let w0 = store.get(ids[0]).clone();
    for &id in &ids[1..] {
        *store.get_mut(id) = w0.clone();
    }
    let ctx = Ctx::eval(&store);
    let x = Var::constant(Tensor::full(&[1, 64, 12, 12], 0.7));
    let br = net.aspp().branches(&ctx, &x).unwrap();
    for c in 0..32 {
        let v = br[1].value().at4(0, c, 6, 6);
        for b in &br[2..4] {
            assert!((b.value().at4(0, c, 6, 6) - v).abs() < 1e-12);
        }
    }
    let y = net.aspp().forward(&ctx, &x).unwrap();
    assert_eq!(y.shape(), &[1, 256, 12, 12]);
}

#[test]
fn aspp_unit_rates_are_plain_3x3() {
    let cfg = NetworkConfig {
        aspp_rates: [1, 1, 1],
        ..NetworkConfig::tiny(64)
    };
    let (net, mut store) = Srunet::new::<f64>(cfg, 3).unwrap();
    let ids: Vec<_> = net.aspp().dilated().iter().map(|d| d.conv.weight).collect();
    let w0 = store.get(ids[0]).clone();
    for &id in &ids[1..] {
        *store.get_mut(id) = w0.clone();
    }
    let x = input(1, 64, 0.9).narrow_channels(0, 3).unwrap();
    let x = Var::constant(Tensor::from_fn(&[1, 64, 6, 6], |i| x.value().data()[i % x.value().numel()]));
    let br = net.aspp().branches(&Ctx::eval(&store), &x).unwrap();
    assert_eq!(br[1].value(), br[2].value());
    assert_eq!(br[2].value(), br[3].value());
}

#[test]
fn decoder_shapes_and_gradient_reaches_both_encoders() {
    let (net, store) = tiny(64);
    let ctx = Ctx::train(&store);
    let out = net.forward(&ctx, &input(2, 64, 0.3), &input(2, 64, 0.6)).unwrap();
    assert_eq!(out.coarse_logits.shape(), &[2, 2, 16, 16]);
    assert_eq!(out.representation.shape(), &[2, 256, 16, 16]);
    let loss = out.coarse_logits.mul(&out.coarse_logits).unwrap().sum_all();
    let grads = ctx.param_grads(&loss.backward());
    for name in ["backbone.stem.conv.weight", "map_encoder.layer0.conv.weight"] {
        let id = store.id_of(name).unwrap();
        let g = grads[id.index()].as_ref().expect(name);
        assert!(g.max_abs() > 0.0, "{name}");
    }
    // The representation head is not on the classifier path.
    let rep_w = store.id_of("decoder.rep.out.weight").unwrap();
    assert!(grads[rep_w.index()].is_none());
}

#[test]
fn refine_zero_init_is_identity_and_bottleneck_is_quarter() {
    let (net, store) = tiny(512);
    let ctx = Ctx::train(&store);
    let coarse = Var::constant(Tensor::from_fn(&[1, 2, 128, 128], |i| (i as f64 * 0.37).sin()));
    let refined = net.refine().forward(&ctx, &coarse).unwrap();
    assert_eq!(refined.value(), coarse.value());
    let w = store.get(net.refine().out_layer().weight);
    assert!(w.data().iter().all(|&v| v == 0.0));
    // Residual path runs at 128 → 64 → 32 and back.
    let r = net.refine().residual(&ctx, &coarse).unwrap();
    assert_eq!(r.shape(), coarse.shape());
    assert!(net.refine().residual(&ctx, &Var::constant(Tensor::zeros(&[1, 2, 6, 6]))).is_err());
}

#[test]
fn full_resolution_logits_and_probabilities() {
    for size in [64, 128] {
        let (net, store) = tiny(size);
        let out = net.forward(&Ctx::eval(&store), &input(1, size, 0.2), &input(1, size, 0.5)).unwrap();
        assert_eq!(out.logits.shape(), &[1, 2, size, size]);
        assert_eq!(out.edge_map.shape(), &[1, 1, size, size]);
        let p = out.logits.softmax_channels().unwrap();
        let hw = size * size;
        for i in 0..hw {
            let s = p.value().data()[i] + p.value().data()[hw + i];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(out.logits.value().all_finite());
    }
}

#[test]
fn tiny_forward_backward_under_a_second() {
    let (net, store) = Srunet::new::<f32>(NetworkConfig::tiny(64), 1).unwrap();
    let img = Var::constant(Tensor::<f32>::full(&[1, 3, 64, 64], 0.3));
    let t0 = Instant::now();
    let ctx = Ctx::train(&store);
    let out = net.forward(&ctx, &img, &img).unwrap();
    let _ = out.logits.sum_all().backward();
    assert!(t0.elapsed().as_secs_f64() < 1.0, "{:?}", t0.elapsed());
}

#[test]
fn map_content_changes_logits() {
    let (net, store) = tiny(64);
    let img = input(1, 64, 0.3);
    let blank = Var::constant(Tensor::full(&[1, 3, 64, 64], 0.95));
    let roads = Var::constant(Tensor::from_fn(&[1, 3, 64, 64], |i| if (i / 64) % 64 < 32 { 1.0 } else { 0.9 }));
    let ctx = Ctx::eval(&store);
    let a = net.forward(&ctx, &img, &blank).unwrap();
    let b = net.forward(&ctx, &img, &roads).unwrap();
    let diff = a.logits.value().zip_map(b.logits.value(), |x, y| (x - y).abs()).unwrap().max_abs();
    assert!(diff > 0.0);
}

#[test]
fn hed_lite_option_is_trainable() {
    let cfg = NetworkConfig {
        edge_extractor: EdgeExtractor::LearnedHedLite,
        ..NetworkConfig::tiny(32)
    };
    let (net, store) = Srunet::new::<f64>(cfg, 2).unwrap();
    let ctx = Ctx::train(&store);
    let out = net.forward(&ctx, &input(2, 32, 0.3), &input(2, 32, 0.5)).unwrap();
    assert!(out.edge_map.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let grads = ctx.param_grads(&out.logits.sum_all().backward());
    let id = store.id_of("hed.fuse.weight").unwrap();
    assert!(grads[id.index()].is_some());
}

#[test]
fn without_map_has_no_map_parameters() {
    let cfg = NetworkConfig {
        use_map: false,
        ..NetworkConfig::tiny(32)
    };
    let (net, store) = Srunet::new::<f64>(cfg, 2).unwrap();
    assert!(net.map_encoder().is_none());
    assert!(store.entries().iter().all(|e| !e.name.starts_with("map_encoder")));
    let out = net.forward(&Ctx::eval(&store), &input(1, 32, 0.3), &input(1, 32, 0.4)).unwrap();
    assert_eq!(out.logits.shape(), &[1, 2, 32, 32]);
}

#[test]
fn repr_scale_resizes_representation() {
    let cfg = NetworkConfig {
        repr_scale: 0.5,
        ..NetworkConfig::tiny(32)
    };
    let (net, store) = Srunet::new::<f64>(cfg, 2).unwrap();
    let out = net.forward(&Ctx::eval(&store), &input(1, 32, 0.3), &input(1, 32, 0.4)).unwrap();
    assert_eq!(out.representation.shape(), &[1, 256, 16, 16]);
}

#[test]
fn group_norm_config_handles_single_sample() {
    let cfg = NetworkConfig {
        norm: NormKind::Group,
        ..NetworkConfig::tiny(32)
    };
    let (net, store) = Srunet::new::<f64>(cfg, 2).unwrap();
    assert!(store.entries().iter().all(|e| e.kind == ParamKind::Trainable));
    let ctx = Ctx::train(&store);
    let out = net.forward(&ctx, &input(1, 32, 0.3), &input(1, 32, 0.4)).unwrap();
    assert!(out.logits.value().all_finite());
    assert!(ctx.take_bn_updates().is_empty());
}
