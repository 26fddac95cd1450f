use std::collections::BTreeSet;

use droidae::apk::{open_archive, scan_assets_for_apk, CertificateStatus};
use droidae::detector::{evaluate, split, stratum_train_size, CalibrationMethod, Confusion, DetectorModel, EvalReport, LabeledDataset, Metrics, RoutingMode};
use droidae::dex::{default_catalog, scan_app_dex, scan_dex, ApiCatalog, ApiCategory, ApiMatcher};
use droidae::features::{default_vocabulary, ApkReport, Feature, FeatureSet, FeatureVector, FeatureVocabulary, Fingerprint, Label};
use droidae::manifest::decode_axml;
use droidae::nn::{build_network, Activation, InitScheme, LayerSpec, Network, ParamSlot, TrainConfig};
use droidae_testkit::gradcheck::{central_difference, relative_error, OracleActivation, OracleLayer, Perturb};
use droidae_testkit::{DexBuilder, ZipBuilder};
use proptest::prelude::*;

const ACTIVATIONS: [Activation; 4] = [Activation::Sigmoid, Activation::Relu, Activation::Tanh, Activation::Linear];

fn oracle_layers(net: &Network) -> Vec<OracleLayer<'_>> {
    net.layers
        .iter()
        .map(|l| OracleLayer {
            input_size: l.spec.input_size,
            output_size: l.spec.output_size,
            activation: match l.spec.activation {
                Activation::Sigmoid => OracleActivation::Sigmoid,
                Activation::Relu => OracleActivation::Relu,
                Activation::Tanh => OracleActivation::Tanh,
                Activation::Linear => OracleActivation::Linear,
            },
            weights: &l.weights,
            biases: &l.biases,
        })
        .collect()
}

fn perturb(net: &Network, idx: usize) -> Perturb {
    match net.param_slot(idx).unwrap() {
        ParamSlot::Weight { layer, index } => Perturb::Weight { layer, index },
        ParamSlot::Bias { layer, index } => Perturb::Bias { layer, index },
    }
}

fn max_fd_error(net: &Network, x: &[f64]) -> f64 {
    let grads = net.backward(x).unwrap();
    let layers = oracle_layers(net);
    (0..net.parameter_count())
        .map(|i| relative_error(net.gradient_at(&grads, i), central_difference(&layers, x, perturb(net, i), 1e-5)))
        .fold(0.0, f64::max)
}

/// Smallest |preactivation| feeding a relu; central differences straddle the
/// kink when this is below the perturbation's reach.
fn relu_margin(net: &Network, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut margin = f64::INFINITY;
    for l in &net.layers {
        let z: Vec<f64> = l
            .weights
            .chunks_exact(l.spec.input_size)
            .zip(&l.biases)
            .map(|(row, b)| b + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        if l.spec.activation == Activation::Relu {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        a = z.iter().map(|&v| l.spec.activation.apply(v)).collect();
    }
    margin
}

fn bits_strategy(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_central_differences(
        seed in any::<u64>(),
        hidden in 2usize..8,
        act1 in 0usize..4,
        act2 in 0usize..4,
        bits in bits_strategy(40),
    ) {
        let specs = [
            LayerSpec::new(40, hidden, ACTIVATIONS[act1]),
            LayerSpec::new(hidden, 40, ACTIVATIONS[act2]),
        ];
        let net = build_network(&specs, seed, InitScheme::UniformScaled, false).unwrap();
        let x: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
        prop_assume!(relu_margin(&net, &x) > 1e-4);
        let before = net.clone();
        let worst = max_fd_error(&net, &x);
        prop_assert!(worst < 1e-6, "worst relative error {worst}");
        prop_assert_eq!(net, before);
    }
}

fn random_report(vocab: &FeatureVocabulary, bits: &[bool], extra_perms: &[String]) -> ApkReport {
    let mut r = vocab.synthesize_report("app", bits);
    r.manifest.permissions.extend(extra_perms.iter().cloned());
    r
}

proptest! {
    #[test]
    fn synthesized_reports_round_trip(bits in bits_strategy(40)) {
        let vocab = default_vocabulary();
        let report = vocab.synthesize_report("x", &bits);
        prop_assert_eq!(vocab.vectorize(&report).unwrap().bits, bits);
    }

    #[test]
    fn vectorize_is_pure_and_monotone_in_permissions(
        bits in bits_strategy(40),
        extra in prop::collection::vec("[A-Z_]{3,12}", 0..4),
        added in 0usize..22,
    ) {
        let vocab = default_vocabulary();
        let extra: Vec<String> = extra.into_iter().map(|p| format!("android.permission.{p}")).collect();
        let report = random_report(&vocab, &bits, &extra);
        let v = vocab.vectorize(&report).unwrap();
        prop_assert_eq!(&vocab.vectorize(&report).unwrap(), &v);

        let mut more = report.clone();
        more.manifest.permissions.insert(vocab.features()[added].matcher.clone());
        let w = vocab.vectorize(&more).unwrap();
        for (a, b) in v.bits.iter().zip(&w.bits) {
            prop_assert!(!a || *b);
        }
        prop_assert!(w.bits[added]);
    }

    #[test]
    fn fingerprint_tracks_id_order_and_matcher(which in 0usize..40, swap_with in 0usize..40, change in 0u8..3) {
        let base = default_vocabulary();
        let rebuilt = FeatureVocabulary::new(base.features().to_vec(), base.catalog().clone()).unwrap();
        prop_assert_eq!(rebuilt.fingerprint(), base.fingerprint());

        let mut features = base.features().to_vec();
        let changed = match change {
            0 => { features[which].id.push_str(".v2"); true }
            1 => { features[which].matcher.push('X'); features[which].set != FeatureSet::Fs4 && features[which].set != FeatureSet::Fs5 }
            _ => { features.swap(which, swap_with); which != swap_with }
        };
        if let Ok(v) = FeatureVocabulary::new(features, base.catalog().clone()) {
            prop_assert_eq!(v.fingerprint() != base.fingerprint(), changed);
        }
    }
}

#[test]
fn fingerprint_covers_the_catalog() {
    let base = default_vocabulary();
    let mut cats = base.catalog().categories().to_vec();
    cats[0].matchers.push(ApiMatcher::prefix("Lcom/extra/"));
    let v = FeatureVocabulary::new(base.features().to_vec(), ApiCatalog::new(cats).unwrap()).unwrap();
    assert_ne!(v.fingerprint(), base.fingerprint());
}

#[test]
fn one_feature_per_set_gives_five() {
    let features = vec![
        Feature::new("p", FeatureSet::Fs1, "android.permission.INTERNET"),
        Feature::new("i", FeatureSet::Fs2, "android.intent.action.MAIN"),
        Feature::new("a", FeatureSet::Fs3, "telephony"),
        Feature::new("c", FeatureSet::Fs4, "any-invalid"),
        Feature::new("e", FeatureSet::Fs5, "embedded-apk"),
    ];
    let v = FeatureVocabulary::new(features, default_catalog()).unwrap();
    assert_eq!(droidae::features::union_dimension(&v), 5);
    let mut report = ApkReport::empty("x");
    report.certificate.status = CertificateStatus::Expired;
    assert_eq!(v.vectorize(&report).unwrap().bits, vec![false, false, false, true, false]);
}

fn labeled(n_mal: usize, n_ben: usize, dim: usize, seed: u64) -> LabeledDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..n_mal + n_ben {
        let label = if i < n_mal { Label::Malicious } else { Label::Benign };
        let bits = (0..dim).map(|_| rng.gen_bool(0.5)).collect();
        records.push((
            FeatureVector {
                app_id: format!("r{i}"),
                bits,
                fingerprint: Fingerprint(7),
            },
            label,
        ));
    }
    LabeledDataset::new(Fingerprint(7), records).unwrap()
}

proptest! {
    #[test]
    fn split_partitions_exactly(n_mal in 1usize..40, n_ben in 1usize..40, f in 0.05f64..0.95, seed in any::<u64>(), test_only in any::<bool>()) {
        let data = labeled(n_mal, n_ben, 3, seed);
        let routing = if test_only { RoutingMode::BenignInTestOnly } else { RoutingMode::BenignEvaluatedInBothPartitions };
        let s = split(&data, f, seed, routing).unwrap();
        let n_train = stratum_train_size(n_mal, f, Label::Malicious);
        prop_assert_eq!(s.train.len(), n_train);
        prop_assert_eq!(s.train.count(Label::Benign), 0);
        prop_assert_eq!(s.test.count(Label::Malicious), n_mal - n_train);
        let ben_train = stratum_train_size(n_ben, f, Label::Benign);
        prop_assert_eq!(s.benign_rerouted, ben_train);
        let expected_ben = if test_only { n_ben - ben_train } else { n_ben };
        prop_assert_eq!(s.test.count(Label::Benign), expected_ben);
        let train_ids: BTreeSet<_> = s.train.records().iter().map(|(v, _)| v.app_id.clone()).collect();
        prop_assert!(s.test.records().iter().all(|(v, _)| !train_ids.contains(&v.app_id)));
    }

    #[test]
    fn metric_identities(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let c = Confusion { tp, fp, tn, fn_ };
        let r = EvalReport::from_confusion(c, "x", RoutingMode::default(), Label::Malicious);
        let total = (tp + fp + tn + fn_) as f64;
        prop_assert!((r.accuracy - (tp + tn) as f64 / total).abs() <= 1e-12);
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        prop_assert!((r.precision - p).abs() <= 1e-12);
        prop_assert!((r.recall - rc).abs() <= 1e-12);
        prop_assert!((r.f1 - f1).abs() <= 1e-12);
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn evaluate_agrees_with_naive_count(seed in any::<u64>(), tau in 0.0f64..6.0, benign_positive in any::<bool>()) {
        let data = labeled(12, 9, 5, seed);
        let net = build_network(&[LayerSpec::new(5, 3, Activation::Tanh), LayerSpec::new(3, 5, Activation::Sigmoid)], seed, InitScheme::UniformScaled, false).unwrap();
        let model = DetectorModel::new(net, tau, CalibrationMethod::default(), Fingerprint(7), TrainConfig::default());
        let positive = if benign_positive { Label::Benign } else { Label::Malicious };
        let report = evaluate(&model, &data, positive).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (v, actual) in data.records() {
            let err = model.network.reconstruction_error(&v.to_f64()).unwrap();
            let predicted = if err <= tau { Label::Malicious } else { Label::Benign };
            match (*actual == positive, predicted == positive) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        prop_assert_eq!(report.confusion, Confusion { tp, fp, tn, fn_ });
        prop_assert_eq!(report.metrics(), Metrics::from_confusion(&report.confusion));
    }

    #[test]
    fn raising_threshold_never_unflags(seed in any::<u64>(), tau in 0.0f64..4.0, bump in 0.0f64..4.0) {
        let data = labeled(6, 6, 5, seed);
        let net = build_network(&[LayerSpec::new(5, 2, Activation::Relu), LayerSpec::new(2, 5, Activation::Sigmoid)], seed, InitScheme::UniformScaled, false).unwrap();
        let low = DetectorModel::new(net.clone(), tau, CalibrationMethod::default(), Fingerprint(7), TrainConfig::default());
        let high = DetectorModel::new(net, tau + bump, CalibrationMethod::default(), Fingerprint(7), TrainConfig::default());
        for (v, _) in data.records() {
            if low.classify(v).unwrap().label == Label::Malicious {
                prop_assert_eq!(high.classify(v).unwrap().label, Label::Malicious);
            }
        }
    }
}

fn nested_apk() -> Vec<u8> {
    ZipBuilder::new().deflated("AndroidManifest.xml", b"<manifest/>").finish()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn asset_flag_is_monotone(names in prop::collection::vec("[a-z]{1,8}", 0..5), payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 5)) {
        let build = |with_nested: bool| {
            let mut builder = ZipBuilder::new();
            for (i, n) in names.iter().enumerate() {
                builder = builder.stored(&format!("assets/{i}/{n}.bin"), &payloads[i]);
            }
            if with_nested {
                builder = builder.stored("assets/deep/x/payload.dat", &nested_apk());
            }
            open_archive(builder.finish(), "a").unwrap()
        };
        let before = scan_assets_for_apk(&build(false));
        let after = scan_assets_for_apk(&build(true));
        prop_assert!(after);
        prop_assert!(!before || after);
    }

    #[test]
    fn read_entry_is_deterministic_and_total(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..200), 1..6)) {
        let mut builder = ZipBuilder::new();
        for (i, p) in payloads.iter().enumerate() {
            builder = if i % 2 == 0 { builder.deflated(&format!("f{i}"), p) } else { builder.stored(&format!("f{i}"), p) };
        }
        let archive = open_archive(builder.finish(), "z").unwrap();
        prop_assert_eq!(archive.entries().len(), payloads.len());
        for (i, p) in payloads.iter().enumerate() {
            let name = format!("f{i}");
            prop_assert_eq!(&archive.read_entry(&name).unwrap(), p);
            prop_assert_eq!(archive.read_entry(&name).unwrap(), archive.read_entry(&name).unwrap());
        }
        prop_assert!(archive.read_entry("missing").is_err());
    }

    #[test]
    fn multidex_union_ignores_entry_order(rotate in 0usize..3) {
        let dexes = [
            DexBuilder::new().method("Landroid/telephony/SmsManager;", "sendTextMessage").build(),
            DexBuilder::new().method("Ljavax/crypto/Cipher;", "doFinal").build(),
            DexBuilder::new().method("Ljava/lang/reflect/Method;", "invoke").build(),
        ];
        let names = ["classes.dex", "classes2.dex", "classes3.dex"];
        let build = |r: usize| {
            let mut b = ZipBuilder::new();
            for k in 0..3 {
                let i = (k + r) % 3;
                b = b.deflated(names[i], &dexes[i]);
            }
            open_archive(b.finish(), "m").unwrap()
        };
        let catalog = default_catalog();
        prop_assert_eq!(scan_app_dex(&build(rotate), &catalog).hits, scan_app_dex(&build(0), &catalog).hits);
    }

    #[test]
    fn extra_matchers_never_remove_hits(prefix in "L[a-z]{1,6}/", method in proptest::option::of("[a-z]{1,6}")) {
        let dex = DexBuilder::new()
            .method("Landroid/telephony/TelephonyManager;", "getLine1Number")
            .method("Ljava/net/Socket;", "connect")
            .method("Lcom/app/A;", "run")
            .build();
        let base = default_catalog();
        let before = scan_dex(&dex, &base).unwrap();
        let mut cats: Vec<ApiCategory> = base.categories().to_vec();
        cats[2].matchers.push(ApiMatcher { class_prefix: prefix, method });
        let after = scan_dex(&dex, &ApiCatalog::new(cats).unwrap()).unwrap();
        for (cat, ev) in &before.evidence {
            prop_assert!(ev.is_subset(after.evidence.get(cat).unwrap()));
        }
    }

    #[test]
    fn parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_axml(&bytes);
        let _ = scan_dex(&bytes, &default_catalog());
        if let Ok(a) = open_archive(bytes.clone(), "fuzz") {
            for e in a.entries() {
                let _ = a.read_entry(&e.path);
            }
        }
    }
}
