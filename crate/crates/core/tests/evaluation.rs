use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use styleshift::data_pipeline::{load_dataset, split_train_test, DatasetSpec};
use styleshift::evaluation::{
    compute_metrics, generate_translations, latent_cluster_report, run_all_settings, run_experiment_setting, sample_grid,
    silhouette_score, train_classifier, tsne_embed, ClassifierConfig, Setting, TranslationMode, TsneConfig,
};
use styleshift::trainer::TrainState;

mod common;
use common::tiny_config;

fn brute_force(preds: &[usize], truths: &[usize], k: usize) -> (Vec<Vec<u64>>, f64, f64, f64, f64) {
    let mut cm = vec![vec![0u64; k]; k];
    for i in 0..preds.len() {
        cm[truths[i]][preds[i]] += 1;
    }
    let mut correct = 0;
    for i in 0..preds.len() {
        if preds[i] == truths[i] {
            correct += 1;
        }
    }
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let pred_c = preds.iter().filter(|&&p| p == c).count() as f64;
        let true_c = truths.iter().filter(|&&t| t == c).count() as f64;
        let p = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let r = if true_c > 0.0 { tp / true_c } else { 0.0 };
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    (cm, correct as f64 / preds.len() as f64, ps / k as f64, rs / k as f64, fs / k as f64)
}

#[test]
fn perfect_predictions_score_one() {
    let truths: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let m = compute_metrics(&truths, &truths, 3).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(m.confusion_matrix, vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]]);
}

#[test]
fn predicting_one_class_everywhere() {
    let truths: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let m = compute_metrics(&[0; 30], &truths, 3).unwrap();
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
    assert!((m.precision - 1.0 / 9.0).abs() < 1e-15);
    assert!((m.recall - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.confusion_matrix, vec![vec![10, 0, 0], vec![10, 0, 0], vec![10, 0, 0]]);
    assert!(compute_metrics(&[], &[], 3).is_err());
    assert!(compute_metrics(&[3], &[0], 3).is_err());
}

#[test]
fn metrics_match_brute_force_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..=1000);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let m = compute_metrics(&preds, &truths, k).unwrap();
        let (cm, acc, p, r, f) = brute_force(&preds, &truths, k);
        assert_eq!(m.confusion_matrix, cm);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (acc, p, r, f));
        let rows: Vec<u64> = cm.iter().map(|r| r.iter().sum()).collect();
        let counts: Vec<u64> = (0..k).map(|c| truths.iter().filter(|&&t| t == c).count() as u64).collect();
        assert_eq!(rows, counts);
    }
}

fn blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = Array2::zeros((150, 16));
    let mut labels = Vec::new();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let c = i / 50;
        labels.push(c);
        for (j, v) in row.iter_mut().enumerate() {
            *v = noise.sample(&mut rng) + if j == c { 20.0 } else { 0.0 };
        }
    }
    (x, labels)
}

#[test]
fn tsne_separates_gaussian_blobs() {
    let (x, labels) = blobs(1);
    let y = tsne_embed(x.view(), &TsneConfig::default(), 5).unwrap();
    assert_eq!(y.shape(), &[150, 2]);
    let s = silhouette_score(y.view(), &labels).unwrap();
    assert!(s > 0.5, "embedding silhouette {s}");
    assert_eq!(y, tsne_embed(x.view(), &TsneConfig::default(), 5).unwrap());
}

#[test]
fn tsne_rejects_large_perplexity() {
    let x = Array2::<f64>::zeros((10, 3));
    assert!(tsne_embed(x.view(), &TsneConfig::default(), 0).is_err());
    let cfg = TsneConfig { perplexity: 3.0, iterations: 50, ..Default::default() };
    let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
    assert_eq!(tsne_embed(x.view(), &cfg, 0).unwrap().nrows(), 10);
}

#[test]
fn silhouette_hand_example() {
    // clusters {0, 1} and {4, 6} on a line
    let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 4.0, 6.0]).unwrap();
    let s = silhouette_score(x.view(), &[0, 0, 1, 1]).unwrap();
    let per = [(5.0 - 1.0) / 5.0, (4.0 - 1.0) / 4.0, (3.5 - 2.0) / 3.5, (5.5 - 2.0) / 5.5];
    assert!((s - per.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    assert!(silhouette_score(x.view(), &[0, 0, 0, 0]).is_err());
}

#[test]
fn translation_corpus_counts_and_determinism() {
    let mut c = tiny_config();
    c.dataset.synthetic.num_per_domain = 5;
    let data = load_dataset(&c.dataset).unwrap();
    let nets = TrainState::new(c).unwrap().nets;
    let all: Vec<usize> = (0..15).collect();
    let cross = generate_translations(&nets, &data, &all, TranslationMode::Cross, 3).unwrap();
    let own = generate_translations(&nets, &data, &all, TranslationMode::SelfDomain, 3).unwrap();
    let both = generate_translations(&nets, &data, &all, TranslationMode::Both, 3).unwrap();
    assert_eq!((cross.len(), own.len(), both.len()), (30, 15, 45));
    assert!(own.items.iter().all(|it| it.source == it.target));
    assert!(cross.items.iter().all(|it| it.source != it.target));
    assert!(both.items.iter().all(|it| it.image.iter().all(|v| v.abs() <= 1.0)));
    // a translation does not depend on which other items were requested
    let from_both = both.filter(TranslationMode::Cross);
    for (a, b) in cross.items.iter().zip(&from_both.items) {
        assert_eq!((a.index, a.target), (b.index, b.target));
        assert_eq!(a.image, b.image);
    }
    let again = generate_translations(&nets, &data, &all, TranslationMode::Cross, 3).unwrap();
    assert!(cross.items.iter().zip(&again.items).all(|(a, b)| a.image == b.image));
}

fn desk_data() -> styleshift::data_pipeline::Dataset {
    let spec = DatasetSpec { image_size: 64, crop_size: styleshift::data_pipeline::CropSize::None, ..Default::default() };
    load_dataset(&spec).unwrap()
}

#[test]
fn classifier_separates_real_domains_and_is_deterministic() {
    let data = desk_data();
    let split = split_train_test(&data, 0.2, 0).unwrap();
    let pick = |idx: &[usize]| -> (Vec<Array3<f32>>, Vec<usize>) {
        (idx.iter().map(|&i| data.images[i].clone()).collect(), idx.iter().map(|&i| data.labels[i]).collect())
    };
    let (train_x, train_y) = pick(&split.train);
    let (test_x, test_y) = pick(&split.test);
    let cfg = ClassifierConfig::default();
    let clf = train_classifier(&train_x, &train_y, 3, &cfg, 11).unwrap();
    let stacked = |xs: &[Array3<f32>]| ndarray::stack(ndarray::Axis(0), &xs.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap().into_dyn();
    let preds = clf.predict(&stacked(&test_x)).unwrap();
    let m = compute_metrics(&preds, &test_y, 3).unwrap();
    assert!(m.accuracy >= 0.99, "accuracy {}", m.accuracy);

    let again = train_classifier(&train_x, &train_y, 3, &cfg, 11).unwrap();
    assert_eq!(again.predict(&stacked(&test_x)).unwrap(), preds);

    // relabelling the domains relabels the predictions
    let perm = [2, 0, 1];
    let permuted: Vec<usize> = train_y.iter().map(|&l| perm[l]).collect();
    let clf_p = train_classifier(&train_x, &permuted, 3, &cfg, 11).unwrap();
    let preds_p = clf_p.predict(&stacked(&test_x)).unwrap();
    let mapped: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
    let agree = mapped.iter().zip(&preds_p).filter(|(a, b)| a == b).count();
    assert!(agree as f64 >= 0.95 * preds.len() as f64, "{agree}/{}", preds.len());
}

#[test]
fn classifier_lists_missing_classes() {
    let images = vec![Array3::<f32>::zeros((3, 16, 16)); 8];
    let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
    let err = train_classifier(&images, &labels, 3, &ClassifierConfig::default(), 0).unwrap_err();
    assert!(err.to_string().contains("2 (0 items)"), "{err}");
}

#[test]
fn shared_settings_run_equals_separate_runs() {
    let mut c = tiny_config();
    c.dataset.synthetic.num_per_domain = 12;
    let data = load_dataset(&c.dataset).unwrap();
    let split = split_train_test(&data, 0.25, 0).unwrap();
    let nets = TrainState::new(c).unwrap().nets;
    let cfg = ClassifierConfig { base_width: 4, num_blocks: 2, max_epochs: 3, ..Default::default() };
    let all = run_all_settings(&nets, &data, &split, &cfg, 4).unwrap();
    for s in Setting::ALL {
        assert_eq!(&run_experiment_setting(s, &nets, &data, &split, &cfg, 4).unwrap(), all.get(s), "{s}");
    }
    // the SSC test set contains the SC test set
    assert_eq!(all.ssc.num_items(), all.sc.num_items() * 3 / 2);
}

#[test]
fn sample_grid_layout() {
    let c = tiny_config();
    let data = load_dataset(&c.dataset).unwrap();
    let nets = TrainState::new(c).unwrap().nets;
    let inputs: Vec<Array3<f32>> = data.images[..4].to_vec();
    let g = sample_grid(&nets, &inputs, 1).unwrap();
    assert_eq!(g.shape(), &[3, 4 * 16, 4 * 16]);
    assert_eq!(g.slice(ndarray::s![.., 16..32, 0..16]), inputs[1]);
    assert_eq!(g, sample_grid(&nets, &inputs, 1).unwrap());
    assert!(sample_grid(&nets, &[], 1).is_err());
}

#[test]
fn latent_report_needs_images() {
    let c = tiny_config();
    let data = load_dataset(&c.dataset).unwrap();
    let nets = TrainState::new(c).unwrap().nets;
    assert!(latent_cluster_report(&nets, &data, &[], &TsneConfig::default(), 0, None).is_err());
    let idx: Vec<usize> = (0..data.len()).collect();
    let cfg = TsneConfig { perplexity: 5.0, iterations: 100, ..Default::default() };
    let dir = std::env::temp_dir().join(format!("styleshift-latent-{}", std::process::id()));
    let r = latent_cluster_report(&nets, &data, &idx, &cfg, 0, Some(&dir)).unwrap();
    assert_eq!((r.num_originals, r.num_translations), (24, 48));
    assert!(r.plots.iter().all(|p| p.exists()));
    assert!((-1.0..=1.0).contains(&r.latent_silhouette));
    std::fs::remove_dir_all(&dir).ok();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn tsne_preserves_point_count(n in 12usize..40, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let cfg = TsneConfig { perplexity: 3.0, iterations: 30, ..Default::default() };
        let y = tsne_embed(x.view(), &cfg, seed).unwrap();
        prop_assert_eq!(y.shape(), &[n, 2]);
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
