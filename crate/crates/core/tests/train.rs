use pixelcritic::image::{ErrorMap, Image, LabelMap, MaskMap};
use pixelcritic::net::{build_model, ArchConfig};
use pixelcritic::numeric::{ParamKind, Parameter, Tensor};
use pixelcritic::synth::{make_toy_generated, make_toy_real, ToyWorldConfig};
use pixelcritic::synth::{synthesize_collages, CollageParams, LabelledImage, SourceImage};
use pixelcritic::train::*;
use pixelcritic::Error;
use proptest::prelude::*;

fn linear(lambda: f64, gamma: f64, normalize: bool) -> LossConfig {
    LossConfig {
        lambda,
        gamma,
        form: LossForm::Linear,
        normalize_by_area: normalize,
        ..Default::default()
    }
}

#[test]
fn hand_computed_two_by_two_case() {
    let p = ErrorMap::new(2, 2, vec![0.2, 0.4, 0.9, 0.6]).unwrap();
    let t = LabelMap::new(2, 2, vec![1, 1, 0, 0]).unwrap();
    let loss = pixel_loss(&p, &t, None, &linear(5.0, 1.0, true)).unwrap();
    assert!((loss.value - 0.875).abs() < 1e-12);
    assert_eq!(loss.grad, vec![1.25, 1.25, -0.25, -0.25]);
}

#[test]
fn perfect_prediction_costs_nothing() {
    let t = LabelMap::new(2, 3, vec![1, 0, 0, 1, 1, 0]).unwrap();
    let p = ErrorMap::new(2, 3, t.data().iter().map(|&v| 1.0 - v as f64).collect()).unwrap();
    for normalize in [true, false] {
        assert_eq!(
            pixel_loss(&p, &t, None, &linear(5.0, 1.0, normalize))
                .unwrap()
                .value,
            0.0
        );
    }
}

#[test]
fn all_real_constant_prediction_costs_lambda_p() {
    let t = LabelMap::filled(8, 8, 1).unwrap();
    for p in [0.0, 0.1, 0.37, 1.0] {
        let e = ErrorMap::filled(8, 8, p).unwrap();
        let v = pixel_loss(&e, &t, None, &linear(5.0, 1.0, true))
            .unwrap()
            .value;
        assert!((v - 5.0 * p).abs() < 1e-12);
    }
}

#[test]
fn lambda_enters_linearly_when_every_pixel_is_real() {
    let t = LabelMap::filled(4, 4, 1).unwrap();
    let e = ErrorMap::new(4, 4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
    let base = pixel_loss(&e, &t, None, &linear(1.0, 1.0, true))
        .unwrap()
        .value;
    for lambda in [0.5, 2.0, 5.0, 7.25] {
        let v = pixel_loss(&e, &t, None, &linear(lambda, 1.0, true))
            .unwrap()
            .value;
        assert!((v - lambda * base).abs() < 1e-12);
    }
}

#[test]
fn log_form_needs_open_interval() {
    let t = LabelMap::filled(8, 8, 0).unwrap();
    let e = ErrorMap::filled(8, 8, 1.0).unwrap();
    let cfg = LossConfig {
        form: LossForm::Log,
        ..Default::default()
    };
    assert!(matches!(
        pixel_loss(&e, &t, None, &cfg),
        Err(Error::Contract(_))
    ));
    assert!(pixel_loss(&e, &t, None, &linear(5.0, 1.0, true)).is_ok());
}

#[test]
fn mismatched_maps_are_rejected() {
    let t = LabelMap::filled(8, 8, 0).unwrap();
    let e = ErrorMap::filled(8, 9, 0.5).unwrap();
    assert!(matches!(
        pixel_loss(&e, &t, None, &LossConfig::default()),
        Err(Error::Dimension { .. })
    ));
    let e = ErrorMap::filled(8, 8, 0.5).unwrap();
    let w = MaskMap::filled(9, 8, 1.0).unwrap();
    assert!(matches!(
        pixel_loss(&e, &t, Some(&w), &LossConfig::default()),
        Err(Error::Dimension { .. })
    ));
}

fn finite_difference_agrees(form: LossForm, normalize: bool, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 9;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let t = LabelMap::new(3, 3, (0..n).map(|_| rng.random_range(0..2)).collect()).unwrap();
    let w = MaskMap::new(3, 3, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
    let cfg = LossConfig {
        form,
        normalize_by_area: normalize,
        ..Default::default()
    };
    let at = |p: &[f64]| {
        pixel_loss(
            &ErrorMap::new(3, 3, p.to_vec()).unwrap(),
            &t,
            Some(&w),
            &cfg,
        )
        .unwrap()
    };
    let grad = at(&p).grad;
    for k in 0..n {
        let h = 1e-6;
        let (mut up, mut down) = (p.clone(), p.clone());
        up[k] += h;
        down[k] -= h;
        let numeric = (at(&up).value - at(&down).value) / (2.0 * h);
        assert!(
            (numeric - grad[k]).abs() < 1e-6 * (1.0 + grad[k].abs()),
            "{form:?} pixel {k}"
        );
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..5 {
        for form in [LossForm::Linear, LossForm::Log] {
            finite_difference_agrees(form, seed % 2 == 0, seed);
        }
    }
}

fn maps(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>, Vec<f64>)> {
    (
        prop::collection::vec(0.001f64..0.999, n),
        prop::collection::vec(0u8..2, n),
        prop::collection::vec(0.0f64..1.0, n),
    )
}

proptest! {
    #[test]
    fn losses_are_nonnegative((p, t, w) in maps(16), lambda in 0.1f64..10.0, gamma in 0.1f64..10.0) {
        let e = ErrorMap::new(4, 4, p).unwrap();
        let t = LabelMap::new(4, 4, t).unwrap();
        let w = MaskMap::new(4, 4, w).unwrap();
        for form in [LossForm::Linear, LossForm::Log] {
            let cfg = LossConfig { lambda, gamma, form, ..Default::default() };
            prop_assert!(pixel_loss(&e, &t, Some(&w), &cfg).unwrap().value >= 0.0);
        }
    }

    #[test]
    fn swapping_roles_leaves_linear_loss_unchanged((p, t, _w) in maps(16), lambda in 0.1f64..10.0, gamma in 0.1f64..10.0) {
        let a = pixel_loss(
            &ErrorMap::new(4, 4, p.clone()).unwrap(),
            &LabelMap::new(4, 4, t.clone()).unwrap(),
            None,
            &linear(lambda, gamma, true),
        ).unwrap().value;
        let b = pixel_loss(
            &ErrorMap::new(4, 4, p.iter().map(|v| 1.0 - v).collect()).unwrap(),
            &LabelMap::new(4, 4, t.iter().map(|v| 1 - v).collect()).unwrap(),
            None,
            &linear(gamma, lambda, true),
        ).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_change_nothing((p, t, _w) in maps(16), log in any::<bool>(), normalize in any::<bool>()) {
        let e = ErrorMap::new(4, 4, p).unwrap();
        let t = LabelMap::new(4, 4, t).unwrap();
        let ones = MaskMap::filled(4, 4, 1.0).unwrap();
        let form = if log { LossForm::Log } else { LossForm::Linear };
        let cfg = LossConfig { form, normalize_by_area: normalize, ..Default::default() };
        prop_assert_eq!(
            pixel_loss(&e, &t, None, &cfg).unwrap(),
            pixel_loss(&e, &t, Some(&ones), &cfg).unwrap()
        );
    }
}

fn weight(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Parameter {
    Parameter::new(name, ParamKind::Weight, Tensor::new(shape, data).unwrap())
}

#[test]
fn l2_penalty_examples() {
    let mut data = vec![0.0; 12];
    data[1] = 3.0;
    data[10] = -4.0;
    let w = weight("w", vec![3, 4], data);
    assert_eq!(l2_penalty(std::slice::from_ref(&w), 0.0), 0.0);
    assert!((l2_penalty(std::slice::from_ref(&w), 0.03) - 0.75).abs() < 1e-15);

    let bias = Parameter::new("b", ParamKind::Bias, Tensor::full(vec![4], 9.0));
    let gain = Parameter::new("g", ParamKind::Gain, Tensor::full(vec![1], 2.0));
    let all = vec![w.clone(), bias, gain];
    assert!((l2_penalty(&all, 0.03) - 0.75).abs() < 1e-15);
    let grads = l2_gradient(&all, 0.03);
    assert_eq!(grads[0].data()[1], 0.18);
    assert!(grads[1]
        .data()
        .iter()
        .chain(grads[2].data())
        .all(|&g| g == 0.0));
}

proptest! {
    #[test]
    fn doubling_weights_quadruples_penalty(values in prop::collection::vec(-2.0f64..2.0, 1..20), coeff in 0.0f64..1.0) {
        let n = values.len();
        let one = weight("w", vec![n], values.clone());
        let two = weight("w", vec![n], values.iter().map(|v| 2.0 * v).collect());
        let (a, b) = (l2_penalty(&[one], coeff), l2_penalty(&[two], coeff));
        prop_assert!((b - 4.0 * a).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn presets_pin_the_documented_weights() {
    let q = Preset::Quality.apply(LossConfig::default());
    assert_eq!((q.lambda, q.gamma, q.l2_coeff), (5.0, 1.0, 0.03));
    let m = Preset::ModeCollapse.apply(LossConfig {
        form: LossForm::Log,
        ..Default::default()
    });
    assert_eq!(
        (m.lambda, m.gamma, m.l2_coeff, m.form),
        (2.0, 1.0, 0.3, LossForm::Log)
    );
    assert_eq!(LossConfig::default(), q);
    let cfg = TrainConfig {
        preset: Some(Preset::ModeCollapse),
        ..Default::default()
    };
    assert_eq!(cfg.effective_loss(LossConfig::default()).lambda, 2.0);
    assert_eq!(TrainConfig::default().lr, 2e-4);
}

fn toy_collages(n: usize, side: usize, seed: u64) -> Vec<LabelledImage> {
    let src = |real: bool| -> Vec<SourceImage> {
        (0..8u64)
            .map(|s| {
                let cfg = ToyWorldConfig {
                    height: side,
                    width: side,
                    seed: s + if real { 0 } else { 500 },
                    class_id: (s % 2) as u32,
                    corruption: 1.0,
                    ..Default::default()
                };
                let image = if real {
                    make_toy_real(&cfg)
                } else {
                    make_toy_generated(&cfg)
                }
                .unwrap();
                SourceImage {
                    id: format!("{real}{s}"),
                    class: Some(format!("{}", s % 2)),
                    image,
                }
            })
            .collect()
    };
    let params = CollageParams {
        artifact_radius: (2, 4),
        ..Default::default()
    };
    synthesize_collages(&src(true), &src(false), n, &params, seed)
        .unwrap()
        .into_iter()
        .map(Into::into)
        .collect()
}

#[test]
fn one_epoch_smoke_run_writes_outputs() {
    let data = toy_collages(4, 16, 0);
    let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    let history = train(
        &mut model,
        &data,
        &cfg,
        &LossConfig::default(),
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].epoch, 1);
    assert!(history[0].mean_loss.is_finite());
    assert!(dir.path().join("model.pxc").exists());
    let text = std::fs::read_to_string(dir.path().join("history.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = parsed[0].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["epoch", "mean_loss", "wall_seconds"]);
}

#[test]
fn same_seeds_give_identical_runs() {
    let data = toy_collages(6, 16, 1);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 3), 9).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 5,
            checkpoint_every: 1,
            lr: 1e-3,
            ..Default::default()
        };
        let h = train(
            &mut model,
            &data,
            &cfg,
            &LossConfig::default(),
            Some(dir.path()),
        )
        .unwrap();
        let bytes = std::fs::read(dir.path().join("model.pxc")).unwrap();
        assert!(dir.path().join("epoch-0002.pxc").exists());
        (h.iter().map(|r| r.mean_loss).collect::<Vec<_>>(), bytes)
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_halves_over_thirty_epochs() {
    let data = toy_collages(200, 16, 2);
    let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        lr: 2e-3,
        seed: 3,
        ..Default::default()
    };
    let loss = LossConfig {
        form: LossForm::Log,
        normalize_by_area: false,
        ..Default::default()
    };
    let h = train(&mut model, &data, &cfg, &loss, None).unwrap();
    let ratio = h[29].mean_loss / h[0].mean_loss;
    assert!(
        ratio < 0.5,
        "{:?}",
        h.iter().map(|r| r.mean_loss).collect::<Vec<_>>()
    );
}

#[test]
fn nan_parameters_abort_with_position() {
    let data = toy_collages(4, 16, 3);
    let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 0).unwrap();
    model.params_mut()[0].value.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    let err = train(&mut model, &data, &cfg, &LossConfig::default(), None).unwrap_err();
    assert!(
        matches!(err, Error::NanLoss { epoch: 0, batch: 0 }),
        "{err}"
    );
}

#[test]
fn empty_training_set_is_a_data_error() {
    let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 0).unwrap();
    let err = train(
        &mut model,
        &[],
        &TrainConfig::default(),
        &LossConfig::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn detection_report_extremes() {
    let labels = [
        LabelMap::new(2, 2, vec![1, 0, 0, 1]).unwrap(),
        LabelMap::new(2, 2, vec![1, 1, 1, 0]).unwrap(),
    ];
    let refs: Vec<&LabelMap> = labels.iter().collect();
    let exact: Vec<ErrorMap> = labels
        .iter()
        .map(|l| ErrorMap::new(2, 2, l.data().iter().map(|&t| 1.0 - t as f64).collect()).unwrap())
        .collect();
    let r = detection_report(&exact, &refs).unwrap();
    assert_eq!((r.auc, r.precision, r.recall), (1.0, 1.0, 1.0));
    assert_eq!(r.per_image_auc, vec![Some(1.0), Some(1.0)]);

    let flat = vec![ErrorMap::filled(2, 2, 0.5).unwrap(); 2];
    assert_eq!(detection_report(&flat, &refs).unwrap().auc, 0.5);

    let one_class = [LabelMap::filled(2, 2, 1).unwrap()];
    let err = detection_report(&flat[..1], &[&one_class[0]]).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn zeroed_model_is_an_uninformative_detector() {
    let data = toy_collages(3, 16, 4);
    let mut model = build_model(&ArchConfig::plain(16, 16, 3, &[4, 8], 2), 0).unwrap();
    for p in model.params_mut() {
        p.value.scale_in_place(0.0);
    }
    let r = evaluate_detection(&model, &data).unwrap();
    assert_eq!(r.auc, 0.5);
    let _ = Image::filled(8, 8, 3, 0.0).unwrap();
}
