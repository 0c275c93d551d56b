//! Classifier training, feature extraction, accuracy metrics and evaluation.

mod common;

use proptest::prelude::*;
use rand::Rng;

use msdiff::classify::{
    confusion, evaluate, extract_features, metrics, score, train_classifier, Classifier, ConfusionMatrix, Features,
};
use msdiff::degrade::{benchmark_case, benchmark_suite};
use msdiff::diffuse::{DiffusionHead, HeadConfig, Latents};
use msdiff::embed::EmbedModel;
use msdiff::hsidata::{extract_patches, synth_cube};
use msdiff::numkit::{AdamWConfig, TrainSettings};

fn cm(n: usize, counts: &[u64]) -> ConfusionMatrix {
    ConfusionMatrix::from_counts(n, counts.to_vec()).unwrap()
}

#[test]
fn worked_confusion_examples() {
    let m = metrics(&cm(2, &[50, 0, 0, 50])).unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));

    let m = metrics(&cm(2, &[25, 25, 25, 25])).unwrap();
    assert_eq!(m.oa, 0.5);
    assert_eq!(m.aa, 0.5);
    assert_eq!(m.kappa, 0.0);

    let m = metrics(&cm(2, &[40, 10, 20, 30])).unwrap();
    assert!((m.oa - 0.7).abs() < 1e-12);
    assert!((m.aa - 0.7).abs() < 1e-12);
    assert!((m.kappa - 0.4).abs() < 1e-12);
}

#[test]
fn metrics_match_sample_level_oracle() {
    let mut r = common::rng(3);
    for _ in 0..100 {
        let n = r.random_range(2..6usize);
        let counts: Vec<u64> = (0..n * n)
            .map(|_| if r.random_bool(0.2) { 0 } else { r.random_range(0..20) })
            .collect();
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let m = metrics(&cm(n, &counts)).unwrap();
        let (oa, aa, kappa) = common::sample_metrics(n, &counts);
        assert!((m.oa - oa).abs() < 1e-12);
        assert!((m.aa - aa).abs() < 1e-12);
        assert!((m.kappa - kappa).abs() < 1e-12);
    }
}

#[test]
fn absent_classes_are_excluded_from_average_accuracy() {
    let m = metrics(&cm(3, &[5, 5, 0, 0, 0, 0, 0, 0, 10])).unwrap();
    assert_eq!(m.recalls, vec![Some(0.5), None, Some(1.0)]);
    assert_eq!(m.aa, 0.75);
    assert!(metrics(&ConfusionMatrix::new(2)).is_err());
}

#[test]
fn confusion_counts_pairs() {
    let c = confusion(&[0, 0, 1, 2, 2], &[0, 1, 1, 2, 0], 3).unwrap();
    assert_eq!(c.get(1, 0), 1);
    assert_eq!(c.get(0, 2), 1);
    assert_eq!(c.total(), 5);
    assert_eq!(c.row_sum(0), 2);
    assert_eq!(c.col_sum(0), 2);
    assert!(confusion(&[0, 1], &[0], 2).is_err());
}

fn two_blobs(n: usize, seed: u64) -> Latents {
    let mut r = common::rng(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = (i % 2) as u16 + 1;
        let centre = if class == 1 { -2.0 } else { 2.0 };
        data.push(centre + r.random_range(-0.5..0.5));
        data.push(r.random_range(-1.0..1.0));
        labels.push(class);
    }
    Latents::new(2, data, labels).unwrap()
}

#[test]
fn separable_toy_reaches_full_accuracy() {
    let feats = two_blobs(64, 1);
    let mut clf = Classifier::init(2, 2, 4).unwrap();
    assert_eq!(clf.hidden, 4);
    let settings = TrainSettings {
        epochs: 500,
        batch_size: 64,
        optimizer: AdamWConfig::default(),
        seed: 2,
    };
    let history = train_classifier(&mut clf, &feats, &settings).unwrap();
    assert_eq!(history.len(), 500);
    assert!(history[499] < history[0]);
    let m = metrics(&score(&clf, &feats).unwrap()).unwrap();
    assert_eq!(m.oa, 1.0);

    let mut again = Classifier::init(2, 2, 4).unwrap();
    assert_eq!(train_classifier(&mut again, &feats, &settings).unwrap(), history);
    assert_eq!(again, clf);
}

#[test]
fn classifier_rejects_bad_input() {
    assert!(Classifier::init(0, 3, 0).is_err());
    assert!(Classifier::init(3, 1, 0).is_err());
    let clf = Classifier::init(3, 2, 0).unwrap();
    assert!(clf.predict(&two_blobs(4, 0)).is_err());
    let bad_label = Latents::new(3, vec![0.0; 3], vec![5]).unwrap();
    assert!(train_classifier(&mut clf.clone(), &bad_label, &TrainSettings::default()).is_err());
}

fn tiny_setup() -> (msdiff::hsidata::HsiCube, msdiff::hsidata::LabelMap, EmbedModel, DiffusionHead) {
    let (cube, labels) = synth_cube(12, 12, 4, 3, 2).unwrap();
    let cfg = common::tiny_embed_config(3);
    let embed = EmbedModel::init(cfg.clone(), 5).unwrap();
    let head = DiffusionHead::init(HeadConfig::new(cfg.embed_dim), 6).unwrap();
    (cube, labels, embed, head)
}

#[test]
fn feature_extractors_agree_with_model_outputs() {
    let (cube, labels, embed, head) = tiny_setup();
    let coords = labels.labeled()[..20].to_vec();
    let patches = extract_patches(&cube, &labels, &coords, 3).unwrap();
    let flat: Vec<f64> = patches.iter().flat_map(|p| p.values.iter().copied()).collect();
    let u = embed.encode(&flat).unwrap();

    let manifold = extract_features(&patches, &embed, None, 0.25).unwrap();
    assert_eq!(manifold.data(), u.as_slice());
    assert_eq!(manifold.labels(), patches.iter().map(|p| p.label).collect::<Vec<_>>().as_slice());

    let refined = extract_features(&patches, &embed, Some(&head), 0.25).unwrap();
    assert_eq!(refined.data(), head.refine(&u, 0.25).unwrap().as_slice());
    assert_eq!(refined, extract_features(&patches, &embed, Some(&head), 0.25).unwrap());

    let spectra = Features::Spectra.extract(&patches).unwrap();
    assert_eq!(spectra.dim(), 4);
    assert_eq!(spectra.row(0), patches[0].center_spectrum());

    let wrong = DiffusionHead::init(HeadConfig::new(5), 0).unwrap();
    assert!(extract_features(&patches, &embed, Some(&wrong), 0.25).is_err());
}

#[test]
fn evaluation_without_a_case_scores_the_clean_cube() {
    let (cube, labels, embed, head) = tiny_setup();
    let coords = labels.labeled();
    let feats = Features::Refined(&embed, &head, 0.25);
    let clf = Classifier::init(8, 3, 1).unwrap();
    let (m, c) = evaluate(&cube, &labels, &coords, feats, &clf, None, 0).unwrap();
    let patches = extract_patches(&cube, &labels, &coords, 3).unwrap();
    let direct = score(&clf, &feats.extract(&patches).unwrap()).unwrap();
    assert_eq!(c, direct);
    assert_eq!(m, metrics(&direct).unwrap());
    assert_eq!(c.total(), coords.len() as u64);
}

#[test]
fn evaluation_accepts_every_benchmark_case() {
    let (cube, labels, embed, head) = tiny_setup();
    let coords = labels.labeled()[..30].to_vec();
    let clf = Classifier::init(8, 3, 1).unwrap();
    let feats = Features::Refined(&embed, &head, 0.25);
    for case in benchmark_suite() {
        let (m, _) = evaluate(&cube, &labels, &coords, feats, &clf, Some(&case), 3).unwrap();
        assert!((0.0..=1.0).contains(&m.oa), "{}", case.label);
        let again = evaluate(&cube, &labels, &coords, feats, &clf, Some(&case), 3).unwrap().0;
        assert_eq!(m, again);
    }
    assert!(benchmark_case("C-3-5").is_err());
    assert!(benchmark_case("clean").is_err());
}

#[test]
fn metrics_line_format() {
    let m = metrics(&cm(2, &[40, 10, 20, 30])).unwrap();
    assert_eq!(m.line("C-7"), "case=C-7 oa=0.7000 aa=0.7000 kappa=0.4000");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_range(counts in prop::collection::vec(0u64..30, 9)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let m = metrics(&cm(3, &counts)).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.oa));
        prop_assert!((0.0..=1.0).contains(&m.aa));
        prop_assert!(m.kappa <= 1.0 + 1e-12);
        prop_assert!(m.kappa.is_finite());
    }

    #[test]
    fn perfect_predictions_score_one(labels in prop::collection::vec(0usize..4, 1..50)) {
        let m = metrics(&confusion(&labels, &labels, 4).unwrap()).unwrap();
        prop_assert_eq!(m.oa, 1.0);
        prop_assert_eq!(m.aa, 1.0);
    }
}
