use nalgebra::{DMatrix, DVector};
use pixelcritic::image::{ErrorMap, MaskMap};
use pixelcritic::metrics::*;
use pixelcritic::synth::{make_toy_generated, make_toy_real, ToyWorldConfig};
use pixelcritic::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

fn score(id: &str, class: Option<&str>, value: f64) -> PdScore {
    PdScore::new(id, class.map(String::from), value).unwrap()
}

#[test]
fn pd_examples() {
    assert_eq!(pd_score(&ErrorMap::filled(8, 8, 0.0).unwrap()), 0.0);
    assert_eq!(pd_score(&ErrorMap::filled(8, 8, 1.0).unwrap()), 1.0);
    let half = ErrorMap::new(
        8,
        8,
        (0..64).map(|i| if i < 32 { 0.2 } else { 0.8 }).collect(),
    )
    .unwrap();
    assert!((pd_score(&half) - 0.5).abs() < 1e-15);
    assert!(PdScore::new("x", None, 1.5).is_err());
}

#[test]
fn region_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = ErrorMap::new(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap();
    let all = MaskMap::filled(8, 8, 1.0).unwrap();
    assert!((region_pd(&e, &all).unwrap() - pd_score(&e)).abs() < 1e-15);
    let one = MaskMap::new(
        8,
        8,
        (0..64).map(|i| if i == 19 { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap();
    assert_eq!(region_pd(&e, &one).unwrap(), e.data()[19]);
    let none = MaskMap::filled(8, 8, 0.0).unwrap();
    assert!(matches!(region_pd(&e, &none), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn partition_reconstructs_whole_image_pd(
        values in prop::collection::vec(0.0f64..=1.0, 64),
        split in prop::collection::vec(any::<bool>(), 64),
    ) {
        prop_assume!(split.iter().any(|&b| b) && split.iter().any(|&b| !b));
        let e = ErrorMap::new(8, 8, values).unwrap();
        let a = MaskMap::new(8, 8, split.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let b = MaskMap::new(8, 8, split.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()).unwrap();
        let na = split.iter().filter(|&&b| b).count() as f64;
        let whole = (na * region_pd(&e, &a).unwrap() + (64.0 - na) * region_pd(&e, &b).unwrap()) / 64.0;
        prop_assert!((whole - pd_score(&e)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&pd_score(&e)));
    }
}

#[test]
fn class_offsets() {
    let same: BTreeMap<String, f64> = [("a".to_string(), 0.3), ("b".to_string(), 0.7)].into();
    assert!(class_offset_pd(&same, &same)
        .unwrap()
        .values()
        .all(|&v| v == 0.0));
    let g: BTreeMap<String, f64> = [("a".to_string(), 0.6)].into();
    let r: BTreeMap<String, f64> = [("a".to_string(), 0.2)].into();
    assert!((class_offset_pd(&g, &r).unwrap()["a"] - 0.4).abs() < 1e-15);
    let err = class_offset_pd(&same, &r).unwrap_err().to_string();
    assert!(err.contains("\"b\""), "{err}");

    let scores = [
        score("1", Some("a"), 0.2),
        score("2", Some("a"), 0.4),
        score("3", Some("b"), 1.0),
    ];
    let means = class_means(&scores).unwrap();
    assert!((means["a"] - 0.3).abs() < 1e-15);
    assert_eq!(means["b"], 1.0);
    assert!(class_means(&[score("x", None, 0.1)]).is_err());
}

fn values(s: &Split) -> Vec<f64> {
    s.members.iter().map(|m| m.value).collect()
}

#[test]
fn ranking_examples() {
    let scores = [
        score("a", None, 0.4),
        score("b", None, 0.9),
        score("c", None, 0.1),
        score("d", None, 0.7),
    ];
    let splits = rank_and_split(&scores, 2, false).unwrap();
    assert_eq!(values(&splits[0]), vec![0.9, 0.7]);
    assert_eq!(values(&splits[1]), vec![0.4, 0.1]);
    assert_eq!((splits[0].index, splits[1].index), (1, 2));

    let ties: Vec<PdScore> = ["d", "a", "f", "c", "b", "e"]
        .iter()
        .map(|id| score(id, None, 0.5))
        .collect();
    let splits = rank_and_split(&ties, 3, false).unwrap();
    let ids: Vec<Vec<&str>> = splits
        .iter()
        .map(|s| s.members.iter().map(|m| m.id.as_str()).collect())
        .collect();
    assert_eq!(ids, vec![vec!["a", "b"], vec!["c", "d"], vec!["e", "f"]]);

    let mut strat = Vec::new();
    for (i, v) in [0.9, 0.8, 0.2, 0.1].iter().enumerate() {
        strat.push(score(&format!("x{i}"), Some("x"), *v));
        strat.push(score(&format!("y{i}"), Some("y"), v / 2.0));
    }
    for s in rank_and_split(&strat, 2, true).unwrap() {
        let xs = s
            .members
            .iter()
            .filter(|m| m.class.as_deref() == Some("x"))
            .count();
        assert_eq!((xs, s.members.len()), (2, 4));
    }
}

#[test]
fn indivisible_counts_suggest_valid_sizes() {
    let scores: Vec<PdScore> = (0..10).map(|i| score(&i.to_string(), None, 0.1)).collect();
    let msg = rank_and_split(&scores, 4, false).unwrap_err().to_string();
    assert!(msg.contains("8 or 12"), "{msg}");
    assert!(rank_and_split(&scores, 1, false).is_err());
    let mut classed: Vec<PdScore> = (0..4)
        .map(|i| score(&i.to_string(), Some("a"), 0.1))
        .collect();
    classed.push(score("z", Some("b"), 0.2));
    let msg = rank_and_split(&classed, 2, true).unwrap_err().to_string();
    assert!(msg.contains("class `b`"), "{msg}");
}

proptest! {
    #[test]
    fn splits_partition_and_descend(vals in prop::collection::vec(0.0f64..=1.0, 1..8), k in 2usize..5, per_class in any::<bool>()) {
        let n = vals.len() * k * 2;
        let scores: Vec<PdScore> = (0..n)
            .map(|i| score(&format!("{i:03}"), Some(if i % 2 == 0 { "a" } else { "b" }), vals[i % vals.len()] * ((i * 7 % 5) as f64 / 4.0)))
            .collect();
        let splits = rank_and_split(&scores, k, per_class).unwrap();
        let mut ids: Vec<String> = splits.iter().flat_map(|s| s.members.iter().map(|m| m.id.clone())).collect();
        ids.sort();
        let mut want: Vec<String> = scores.iter().map(|s| s.id.clone()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        for w in splits.windows(2) {
            prop_assert!(w[0].mean_pd() >= w[1].mean_pd() - 1e-15);
            prop_assert_eq!(w[0].members.len(), w[1].members.len());
        }
    }
}

#[test]
fn gaussian_stats_examples() {
    let s = gaussian_stats(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
    assert_eq!(s.cov, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
    assert_eq!(s.count, 2);
    let same = gaussian_stats(&vec![vec![0.3, -1.0, 4.0]; 5]).unwrap();
    assert!(same.cov.iter().all(|&v| v == 0.0));
    assert!(matches!(gaussian_stats(&[vec![1.0]]), Err(Error::Data(_))));
}

#[test]
fn gaussian_stats_recover_a_known_distribution() {
    // x = μ + L z with Σ = L Lᵀ
    let mu = [1.0, -2.0, 0.5];
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 2.0, 0.0, -0.3, 0.4, 0.7]);
    let sigma = &l * l.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 1000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            (DVector::from_column_slice(&mu) + &l * z)
                .as_slice()
                .to_vec()
        })
        .collect();
    let s = gaussian_stats(&draws).unwrap();
    let nf = n as f64;
    for i in 0..3 {
        assert!((s.mean[i] - mu[i]).abs() < 3.0 * (sigma[(i, i)] / nf).sqrt());
        for j in 0..3 {
            let se = ((sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)]) / (nf - 1.0)).sqrt();
            assert!((s.cov[(i, j)] - sigma[(i, j)]).abs() < 3.0 * se, "{i},{j}");
        }
    }
}

fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_vec(mean),
        cov,
        count: 100,
    }
}

fn random_stats(d: usize, rng: &mut ChaCha8Rng) -> GaussianStats {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    stats(
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        &a * a.transpose(),
    )
}

#[test]
fn frechet_of_identical_stats_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [1, 3, 8, 32] {
        let s = random_stats(d, &mut rng);
        assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-6);
    }
}

#[test]
fn frechet_one_dimensional_unit_shift() {
    let a = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
    let b = stats(vec![1.0], DMatrix::from_element(1, 1, 1.0));
    assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn frechet_diagonal_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let d = rng.random_range(1..10);
        let va: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..4.0)).collect();
        let vb: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..4.0)).collect();
        let ma: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let want: f64 = (0..d)
            .map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2))
            .sum();
        let a = stats(ma, DMatrix::from_diagonal(&DVector::from_vec(va)));
        let b = stats(mb, DMatrix::from_diagonal(&DVector::from_vec(vb)));
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-8);
    }
}

proptest! {
    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in 0u64..10_000, d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_stats(d, &mut rng), random_stats(d, &mut rng));
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
    }
}

#[test]
fn frechet_rejects_bad_inputs() {
    let a = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
    let b = stats(vec![0.0], DMatrix::identity(1, 1));
    assert!(matches!(
        frechet_distance(&a, &b),
        Err(Error::Dimension { .. })
    ));
    let neg = stats(
        vec![0.0, 0.0],
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3])),
    );
    assert!(matches!(
        frechet_distance(&a, &neg),
        Err(Error::NonFinite(_))
    ));
    let tiny = stats(
        vec![0.0, 0.0],
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-10])),
    );
    assert!(frechet_distance(&a, &tiny).is_ok());
}

#[test]
fn auc_and_rank_correlation() {
    assert_eq!(
        auc(&[0.1, 0.9, 0.8, 0.2], &[false, true, true, false]).unwrap(),
        1.0
    );
    assert_eq!(auc(&[0.5; 4], &[false, true, true, false]).unwrap(), 0.5);
    assert!(matches!(
        auc(&[0.1, 0.2], &[true, true]),
        Err(Error::Data(_))
    ));
    assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-12);
}

fn toy(seed: u64, corruption: f64) -> pixelcritic::image::Image {
    let cfg = ToyWorldConfig {
        seed,
        class_id: (seed % 4) as u32,
        corruption,
        ..Default::default()
    };
    if corruption == 0.0 {
        make_toy_real(&cfg)
    } else {
        make_toy_generated(&cfg)
    }
    .unwrap()
}

#[test]
fn random_conv_features_are_deterministic() {
    let ex = ConvEncoder::random_default(7);
    assert_eq!(ex.dim(), 64);
    let img = toy(1, 0.0);
    let f = ex.extract(&img).unwrap();
    assert_eq!(f.len(), 64);
    assert_eq!(f, ex.extract(&img).unwrap());
    assert_eq!(f, ConvEncoder::random_default(7).extract(&img).unwrap());
    assert_ne!(f, ConvEncoder::random_default(8).extract(&img).unwrap());
}

#[test]
fn random_conv_separates_heavy_corruption() {
    let ex = ConvEncoder::random_default(0);
    let real: Vec<_> = (0..120).map(|s| toy(s, 0.0)).collect();
    let bad: Vec<_> = (0..60).map(|s| toy(s + 1000, 1.0)).collect();
    let fr = ex.extract_all(&real).unwrap();
    let a = gaussian_stats(&fr[..60]).unwrap();
    let b = gaussian_stats(&fr[60..]).unwrap();
    let c = gaussian_stats(&ex.extract_all(&bad).unwrap()).unwrap();
    let null = frechet_distance(&a, &b).unwrap();
    let signal = frechet_distance(&a, &c).unwrap();
    assert!(signal > 10.0 * null, "{signal} vs {null}");
}

#[test]
fn feature_dump_layout_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pxf");
    let feats = vec![vec![1.0, -2.5], vec![0.0, 3.25], vec![7.0, 8.0]];
    write_features(&path, &feats).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PXF1");
    assert_eq!(&bytes[4..12], &[3, 0, 0, 0, 2, 0, 0, 0]);
    assert_eq!(&bytes[12..20], &1.0f64.to_le_bytes());
    assert_eq!(bytes.len(), 12 + 6 * 8);
    assert_eq!(read_features(&path).unwrap(), feats);
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_features(&path), Err(Error::Format { .. })));
}

#[test]
fn splits_from_the_reference_distribution_match_the_baseline() {
    let ex = ConvEncoder::random_default(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images: BTreeMap<String, _> = (0..200).map(|s| (format!("{s:04}"), toy(s, 0.0))).collect();
    let scores: Vec<PdScore> = images
        .keys()
        .map(|id| score(id, None, rng.random()))
        .collect();
    let reference: Vec<_> = (0..200).map(|s| toy(s + 5000, 0.0)).collect();
    let splits = rank_and_split(&scores, 4, false).unwrap();
    let report = evaluate_split_images(&splits, &images, &reference, &ex, 1).unwrap();
    assert_eq!(report.splits.len(), 4);

    let imgs: Vec<_> = images.values().cloned().collect();
    let features: BTreeMap<String, Vec<f64>> = images
        .keys()
        .cloned()
        .zip(ex.extract_all(&imgs).unwrap())
        .collect();
    let ref_stats = gaussian_stats(&ex.extract_all(&reference).unwrap()).unwrap();
    let baselines: Vec<f64> = (0..60)
        .map(|seed| {
            evaluate_splits(&splits, &features, &ref_stats, seed)
                .unwrap()
                .random_baseline
        })
        .collect();
    let mean = baselines.iter().sum::<f64>() / 60.0;
    let sd = (baselines.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / 59.0).sqrt();
    for s in &report.splits {
        let z = (s.frechet - mean) / sd;
        assert!(
            z.abs() < 3.5,
            "split {} z = {z}\n{}",
            s.index,
            report.table()
        );
    }
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(json["random_baseline"].is_number());
    for key in ["index", "mean_pd", "frechet"] {
        assert!(json["splits"][0].get(key).is_some());
    }
}

#[test]
fn score_table_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_scores(&path, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "id,class,pd\n");
    assert!(read_scores(&path).unwrap().is_empty());
    let scores = vec![
        score("a/b.png", Some("c1"), 0.1 + 0.2),
        score("x.png", None, 1.0 / 3.0),
    ];
    write_scores(&path, &scores).unwrap();
    assert_eq!(read_scores(&path).unwrap(), scores);
}
