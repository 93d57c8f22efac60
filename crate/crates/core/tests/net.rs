use pixelcritic::image::{ErrorMap, Image, LabelMap};
use pixelcritic::net::*;
use pixelcritic::numeric::gradcheck::check_gradients;
use pixelcritic::numeric::{Graph, Tensor};
use pixelcritic::synth::{make_toy_real, ToyWorldConfig};
use pixelcritic::train::{pixel_loss, LossConfig, LossForm};
use pixelcritic::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

/// Closed-form parameter count of the encoder–decoder.
fn expected_count(cfg: &ArchConfig) -> usize {
    let k = cfg.kernel;
    let stage = |cin: usize, w: usize, convs: usize| {
        conv_params(cin, w, k) + (convs - 1) * conv_params(w, w, k)
    };
    let attn = |c: usize| 2 * (c / cfg.attention_reduction) * c + c * c + 1;
    let n = cfg.stages.len();
    let mut total = 0;
    for s in 0..n {
        let cin = if s == 0 {
            cfg.channels
        } else {
            cfg.stages[s - 1].width
        } + cfg.injected_channels(s);
        total += stage(cin, cfg.stages[s].width, cfg.stages[s].convs);
        if cfg.encoder_attention.contains(&s) {
            total += attn(cfg.stages[s].width);
        }
    }
    for s in 0..n - 1 {
        total += stage(
            cfg.stages[s + 1].width + cfg.stages[s].width,
            cfg.stages[s].width,
            cfg.stages[s].convs,
        );
        if cfg.decoder_attention.contains(&s) {
            total += attn(cfg.stages[s].width);
        }
    }
    total + conv_params(cfg.stages[0].width, 1, 1)
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(
        h,
        w,
        3,
        (0..h * w * 3).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

#[test]
fn parameter_count_of_small_two_stage_model() {
    let cfg = ArchConfig::plain(16, 16, 3, &[4, 8], 5);
    let model = build_model(&cfg, 0).unwrap();
    // enc0 704, enc1 2632, dec0 1028, head 5
    assert_eq!(model.parameter_count(), 4369);
    assert_eq!(expected_count(&cfg), 4369);
}

#[test]
fn parameter_count_formula_across_configs() {
    let mut with_attention = ArchConfig::plain(32, 32, 3, &[8, 16, 32], 3);
    with_attention.encoder_attention = vec![1, 2];
    with_attention.decoder_attention = vec![0];
    let mut injected = ArchConfig::plain(16, 16, 1, &[8, 8], 4);
    injected.injection = vec![InjectionSlot {
        stage: 1,
        channels: 3,
    }];
    for cfg in [
        ArchConfig::default(),
        ArchConfig::plain(8, 8, 1, &[2, 3], 1),
        ArchConfig::plain(16, 16, 3, &[4, 6, 8, 10], 2),
        with_attention,
        injected,
    ] {
        let model = build_model(&cfg, 3).unwrap();
        assert_eq!(model.parameter_count(), expected_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn initialization_is_seeded() {
    let cfg = ArchConfig::plain(16, 16, 3, &[8, 16], 3);
    let a = build_model(&cfg, 11).unwrap();
    let b = build_model(&cfg, 11).unwrap();
    let c = build_model(&cfg, 12).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    for p in a.params() {
        if p.name.ends_with(".b") {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
        }
    }
}

#[test]
fn zero_gain_attention_is_invisible() {
    let mut cfg = ArchConfig::plain(16, 16, 3, &[8, 16], 2);
    cfg.encoder_attention = vec![0, 1];
    cfg.decoder_attention = vec![0];
    let model = build_model(&cfg, 5).unwrap();
    let plain = build_model(&cfg.without_attention(), 5).unwrap();
    assert_eq!(model.without_attention().params(), plain.params());
    let img = random_image(16, 16, 1);
    assert_eq!(model.forward(&img).unwrap(), plain.forward(&img).unwrap());
}

fn attention_inputs(c: usize, h: usize, w: usize, gain: f64, seed: u64) -> [Tensor; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: Vec<usize>| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    [
        t(vec![1, c, h, w]),
        t(vec![c / 8, c, 1, 1]),
        t(vec![c / 8, c, 1, 1]),
        t(vec![c, c, 1, 1]),
        Tensor::new(vec![1], vec![gain]).unwrap(),
    ]
}

fn run_attention(inputs: &[Tensor; 5]) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let v: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = self_attention(
        &mut g,
        v[0],
        AttentionVars {
            query: v[1],
            key: v[2],
            value: v[3],
            gain: v[4],
        },
    )
    .unwrap();
    (g.value(out.output).clone(), g.value(out.weights).clone())
}

#[test]
fn attention_with_zero_gain_returns_input_exactly() {
    let inputs = attention_inputs(16, 4, 4, 0.0, 1);
    let (out, _) = run_attention(&inputs);
    assert_eq!(out, inputs[0]);
}

#[test]
fn attention_over_a_single_position() {
    let inputs = attention_inputs(8, 1, 1, 0.3, 2);
    let (out, weights) = run_attention(&inputs);
    assert_eq!(weights.data(), &[1.0]);
    let x = inputs[0].data();
    let value = inputs[3].data();
    for o in 0..8 {
        let h: f64 = (0..8).map(|c| value[o * 8 + c] * x[c]).sum();
        assert!((out.data()[o] - (x[o] + 0.3 * h)).abs() < 1e-14);
    }
}

#[test]
fn attention_matches_nested_loop_oracle() {
    let (c, h, w) = (8, 4, 4);
    let n = h * w;
    let inputs = attention_inputs(c, h, w, 0.7, 3);
    let (out, weights) = run_attention(&inputs);
    let x = inputs[0].data();
    // output channel r of a 1×1 projection at position pos
    let proj = |m: &Tensor, pos: usize, r: usize| -> f64 {
        (0..c)
            .map(|ch| m.data()[r * c + ch] * x[ch * n + pos])
            .sum()
    };
    for j in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                (0..c / 8)
                    .map(|r| proj(&inputs[2], j, r) * proj(&inputs[1], i, r))
                    .sum()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let row: Vec<f64> = e.iter().map(|v| v / z).collect();
        let got_row = &weights.data()[j * n..(j + 1) * n];
        assert!((got_row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            assert!((got_row[i] - row[i]).abs() < 1e-10);
        }
        for o in 0..c {
            let gathered: f64 = (0..n).map(|i| row[i] * proj(&inputs[3], i, o)).sum();
            let want = x[o * n + j] + 0.7 * gathered;
            assert!((out.data()[o * n + j] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_rejects_narrow_features() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![1, 4, 2, 2]));
    let q = g.constant(Tensor::zeros(vec![1, 4, 1, 1]));
    let v = g.constant(Tensor::zeros(vec![4, 4, 1, 1]));
    let s = g.constant(Tensor::zeros(vec![1]));
    let err = self_attention(
        &mut g,
        x,
        AttentionVars {
            query: q,
            key: q,
            value: v,
            gain: s,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));

    let mut cfg = ArchConfig::plain(16, 16, 3, &[4, 8], 2);
    cfg.encoder_attention = vec![0];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.encoder_attention = vec![2];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn invalid_layouts_are_config_errors() {
    for cfg in [
        ArchConfig::plain(18, 16, 3, &[4, 8, 8], 2),
        ArchConfig::plain(16, 16, 3, &[4], 2),
        ArchConfig::plain(16, 16, 3, &[4, 8], 0),
    ] {
        assert!(
            matches!(build_model(&cfg, 0), Err(Error::Config(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn fresh_models_predict_near_one_half() {
    let img = make_toy_real(&ToyWorldConfig::default()).unwrap();
    for seed in 0..20 {
        let model = build_model(&ArchConfig::default(), seed).unwrap();
        let map = model.forward(&img).unwrap();
        assert_eq!(map.dims(), (64, 64));
        assert!(map.data().iter().all(|&p| p > 0.0 && p < 1.0));
        let mean = map.mean();
        assert!((0.3..=0.7).contains(&mean), "seed {seed}: {mean}");
    }
}

#[test]
fn output_shape_follows_input_for_every_layout() {
    let mut attn = ArchConfig::plain(32, 16, 3, &[8, 8, 16], 3);
    attn.encoder_attention = vec![2];
    attn.decoder_attention = vec![1];
    for cfg in [
        ArchConfig::plain(8, 24, 1, &[2, 4], 1),
        ArchConfig::plain(16, 32, 3, &[3, 5, 7, 9], 2),
        attn,
    ] {
        let model = build_model(&cfg, 1).unwrap();
        let img = if cfg.channels == 1 {
            Image::filled(cfg.height, cfg.width, 1, 0.4).unwrap()
        } else {
            random_image(cfg.height, cfg.width, 9)
        };
        let map = model.forward(&img).unwrap();
        assert_eq!(map.dims(), (cfg.height, cfg.width));
        assert_eq!(map, model.forward(&img).unwrap());
    }
}

#[test]
fn wrong_input_size_names_both_shapes() {
    let model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 0).unwrap();
    let msg = model
        .forward(&random_image(8, 16, 0))
        .unwrap_err()
        .to_string();
    assert!(msg.contains("16×16×3") && msg.contains("8×16×3"), "{msg}");
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut cfg = ArchConfig::plain(8, 8, 3, &[8, 8], 3);
    cfg.encoder_attention = vec![1];
    cfg.decoder_attention = vec![0];
    let mut model = build_model(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let img = random_image(8, 8, 2);
    let label = LabelMap::new(8, 8, (0..64).map(|i| u8::from((i * 7) % 3 == 0)).collect()).unwrap();
    let loss = LossConfig {
        form: LossForm::Log,
        ..Default::default()
    };
    let inputs: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let report = check_gradients(&inputs, 1e-6, |g, vars| {
        let out = model.forward_with(g, vars, &img)?;
        let probs = ErrorMap::new(8, 8, g.value(out).data().to_vec())?;
        let pl = pixel_loss(&probs, &label, None, &loss)?;
        let grad = Tensor::new(g.shape(out).to_vec(), pl.grad)?;
        g.external_scalar(out, pl.value, grad)
    })
    .unwrap();
    let worst = report.max_relative_error();
    assert!(worst < 1e-3, "{:?}", report.relative_errors);
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let mut cfg = ArchConfig::plain(16, 16, 3, &[8, 16], 2);
    cfg.encoder_attention = vec![1];
    let model = build_model(&cfg, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pxc");
    model.save(&path).unwrap();
    assert!(Model::sidecar_path(&path).exists());
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    let img = random_image(16, 16, 4);
    assert_eq!(back.forward(&img).unwrap(), model.forward(&img).unwrap());
}

#[test]
fn injection_slots_and_extractors() {
    let img = random_image(16, 16, 6);
    let base = ArchConfig::plain(16, 16, 3, &[4, 8, 8], 2);
    let plain = build_model(&base, 2).unwrap();
    let mut hooked = plain.clone();
    hooked.set_feature_maps(Arc::new(RandomConvFeatures::new(3, 2, 1)));
    assert_eq!(plain.forward(&img).unwrap(), hooked.forward(&img).unwrap());

    for stage in 0..3 {
        let mut cfg = base.clone();
        cfg.injection = vec![InjectionSlot { stage, channels: 3 }];
        let empty = build_model(&cfg, 2).unwrap();
        let mut zeros = empty.clone();
        zeros.set_feature_maps(Arc::new(ZeroFeatures { channels: 3 }));
        let z = zeros.forward(&img).unwrap();
        assert_eq!(z, empty.forward(&img).unwrap());

        let mut random = empty.clone();
        random.set_feature_maps(Arc::new(RandomConvFeatures::new(3, 2, 1)));
        let r = random.forward(&img).unwrap();
        assert_eq!(r.dims(), (16, 16));
        assert_eq!(r, random.forward(&img).unwrap());
        assert_ne!(r, z, "stage {stage}");

        let mut wide = empty.clone();
        wide.set_feature_maps(Arc::new(RandomConvFeatures::new(3, 4, 1)));
        assert!(matches!(wide.forward(&img), Err(Error::Config(_))));
    }
}
