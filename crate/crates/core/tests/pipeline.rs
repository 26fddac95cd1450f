use droidae::detector::{default_profiles, run_pipeline, split, CalibrationMethod, DetectorModel, LabeledDataset, SyntheticProfiles};
use droidae::features::{default_vocabulary, Label};
use droidae::nn::{build_default_network, train};
use droidae::{evaluate, generate_synthetic_dataset, run_split_sweep, PipelineConfig, RoutingMode};

fn small() -> LabeledDataset {
    generate_synthetic_dataset(200, 200, 11, 0.05).unwrap()
}

#[test]
fn synthetic_bit_frequencies_sit_near_the_profile() {
    let n = 600;
    let noise = 0.05;
    let data = generate_synthetic_dataset(n, n, 3, noise).unwrap();
    let profiles = default_profiles(&default_vocabulary());
    for (label, probs) in [(Label::Malicious, &profiles.malicious), (Label::Benign, &profiles.benign)] {
        let rows = data.vectors(label);
        assert_eq!(rows.len(), n);
        for (j, t) in SyntheticProfiles::template(probs).into_iter().enumerate() {
            let p = if t { 1.0 - noise } else { noise };
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "{label} bit {j}: {freq} vs {p}");
        }
    }
}

#[test]
fn loss_curve_falls_steadily() {
    let data = small();
    let parts = split(&data, 0.8, 5, RoutingMode::default()).unwrap();
    let x = parts.train.vectors(Label::Malicious);
    let out = train(build_default_network(5), &x, &Default::default()).unwrap();
    let curve = &out.loss_curve;
    assert_eq!(curve.len(), 100);
    assert!(curve[99] < out.initial_loss);
    assert!(curve[99] < curve[0]);
    for window in curve.windows(10) {
        let rises: Vec<f64> = window.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[1] - w[0]) / w[0]).collect();
        assert!(rises.len() <= 1, "{window:?}");
        assert!(rises.iter().all(|&r| r <= 0.01), "{window:?}");
    }
}

#[test]
fn single_cell_sweep_equals_pipeline() {
    let data = small();
    let cfg = PipelineConfig::default();
    let sweep = run_split_sweep(&data, &[0.7], &[9], &cfg);
    let cell = run_pipeline(&data, 0.7, 9, &cfg).unwrap();
    assert_eq!(sweep.cells[0].report.as_ref(), Some(&cell.report));
    assert_eq!(sweep.cells[0].threshold, Some(cell.model.threshold));
    assert_eq!(sweep.rows[0].mean, Some(cell.report.metrics()));
    assert_eq!(sweep.rows[0].split, "70%-30%");

    let reloaded = DetectorModel::from_json(&cell.model.to_json()).unwrap();
    let test = split(&data, 0.7, 9, cfg.routing).unwrap().test;
    assert_eq!(evaluate(&reloaded, &test, Label::Malicious).unwrap().confusion, cell.report.confusion);
}

#[test]
fn reruns_are_bitwise_identical() {
    let data = small();
    let cfg = PipelineConfig::default();
    let a = run_pipeline(&data, 0.8, 1, &cfg).unwrap();
    let b = run_pipeline(&data, 0.8, 1, &cfg).unwrap();
    assert_eq!(a.model.to_json(), b.model.to_json());
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_curve), bits(&b.loss_curve));
}

#[test]
fn max_train_error_covers_every_training_record() {
    let data = small();
    let cfg = PipelineConfig {
        calibration: CalibrationMethod::MaxTrainError,
        ..Default::default()
    };
    let cell = run_pipeline(&data, 0.8, 2, &cfg).unwrap();
    let parts = split(&data, 0.8, 2, cfg.routing).unwrap();
    for (v, _) in parts.train.records() {
        assert_eq!(cell.model.classify(v).unwrap().label, Label::Malicious);
    }
}

#[test]
fn test_only_routing_shrinks_the_benign_test_set() {
    let data = small();
    let both = run_pipeline(&data, 0.8, 4, &PipelineConfig::default()).unwrap();
    let only = run_pipeline(
        &data,
        0.8,
        4,
        &PipelineConfig {
            routing: RoutingMode::BenignInTestOnly,
            ..Default::default()
        },
    )
    .unwrap();
    let benign = |r: &droidae::EvalReport| r.confusion.tn + r.confusion.fp;
    assert_eq!(benign(&both.report), 200);
    assert_eq!(benign(&only.report), 40);
    assert_eq!(both.model.threshold, only.model.threshold);
}
