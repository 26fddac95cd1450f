//! Train on malware only, threshold the reconstruction error, evaluate.

mod pipeline;
mod synth;

pub use pipeline::{run_pipeline, run_split_sweep, split_label, CellOutcome, PipelineConfig, SweepCell, SweepResult, SweepRow};
pub use synth::{default_profiles, generate_synthetic_dataset, generate_with_profiles, SyntheticProfiles};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, Fingerprint, Label, VectorFile, VectorRecord};
use crate::nn::{Network, NnError, TrainConfig};
use crate::run::RunManifest;

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("no {0} records")]
    EmptyClass(Label),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("percentile must lie in [0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("record {0:?} has no benign/malicious label")]
    Unlabeled(String),
    #[error("vocabulary mismatch: model fingerprint {expected}, input fingerprint {found}")]
    VocabularyMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("noise must lie in [0, 0.5), got {0}")]
    InvalidNoise(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model file: {0}")]
    ModelFormat(String),
}

/// Benign/malicious records over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    fingerprint: Fingerprint,
    records: Vec<(FeatureVector, Label)>,
}

impl LabeledDataset {
    pub fn new(fingerprint: Fingerprint, records: Vec<(FeatureVector, Label)>) -> Result<Self, DetectorError> {
        for (v, label) in &records {
            if v.fingerprint != fingerprint {
                return Err(DetectorError::VocabularyMismatch {
                    expected: fingerprint,
                    found: v.fingerprint,
                });
            }
            if *label == Label::Unknown {
                return Err(DetectorError::Unlabeled(v.app_id.clone()));
            }
        }
        Ok(Self { fingerprint, records })
    }

    pub fn from_vector_file(file: VectorFile) -> Result<Self, DetectorError> {
        let records = file.records.into_iter().map(|r| (r.vector, r.label)).collect();
        Self::new(file.fingerprint, records)
    }

    pub fn to_vector_file(&self, comments: Vec<String>) -> VectorFile {
        VectorFile {
            fingerprint: self.fingerprint,
            dimension: self.dimension(),
            comments,
            records: self
                .records
                .iter()
                .map(|(v, l)| VectorRecord {
                    vector: v.clone(),
                    label: *l,
                })
                .collect(),
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn records(&self) -> &[(FeatureVector, Label)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.records.first().map_or(0, |(v, _)| v.bits.len())
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|(_, l)| *l == label).count()
    }

    pub fn vectors(&self, label: Label) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(v, _)| v.to_f64())
            .collect()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            fingerprint: self.fingerprint,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// What happens to benign records that land in the train partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    /// Withheld from training and evaluated together with the test partition.
    #[default]
    BenignEvaluatedInBothPartitions,
    /// Dropped; only the test partition's benign records are evaluated.
    BenignInTestOnly,
}

impl RoutingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::BenignEvaluatedInBothPartitions => "benign-evaluated-in-both-partitions",
            Self::BenignInTestOnly => "benign-in-test-only",
        }
    }
}

impl FromStr for RoutingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign-evaluated-in-both-partitions" => Ok(Self::BenignEvaluatedInBothPartitions),
            "benign-in-test-only" => Ok(Self::BenignInTestOnly),
            other => Err(format!("unknown routing mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Malicious records of the train partition; the autoencoder's input.
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub routing: RoutingMode,
    /// Benign train-partition records moved to `test` (or dropped).
    pub benign_rerouted: usize,
}

/// Train-partition size of one stratum.
pub fn stratum_train_size(n: usize, fraction: f64, label: Label) -> usize {
    match n {
        0 => 0,
        1 => usize::from(label == Label::Malicious),
        _ => ((fraction * n as f64).round() as usize).clamp(1, n - 1),
    }
}

/// Stratified seeded split with benign routing.
pub fn split(data: &LabeledDataset, fraction: f64, seed: u64, routing: RoutingMode) -> Result<Split, DetectorError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DetectorError::InvalidFraction(fraction));
    }
    for label in [Label::Malicious, Label::Benign] {
        if data.count(label) == 0 {
            return Err(DetectorError::EmptyClass(label));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut rerouted = 0;
    for label in [Label::Malicious, Label::Benign] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.records[i].1 == label).collect();
        idx.shuffle(&mut rng);
        let n_train = stratum_train_size(idx.len(), fraction, label);
        let (tr, te) = idx.split_at(n_train);
        test_idx.extend_from_slice(te);
        if label == Label::Malicious {
            train_idx.extend_from_slice(tr);
        } else {
            rerouted = tr.len();
            if routing == RoutingMode::BenignEvaluatedInBothPartitions {
                test_idx.extend_from_slice(tr);
            }
        }
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train: data.subset(&train_idx),
        test: data.subset(&test_idx),
        routing,
        benign_rerouted: rerouted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMethod {
    Percentile(f64),
    MaxTrainError,
}

impl Default for CalibrationMethod {
    fn default() -> Self {
        Self::Percentile(95.0)
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Percentile(p) => write!(f, "percentile({p})"),
            Self::MaxTrainError => f.write_str("max-train-error"),
        }
    }
}

impl FromStr for CalibrationMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "max-train-error" {
            return Ok(Self::MaxTrainError);
        }
        let p = s
            .strip_prefix("percentile(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown calibration method {s:?}"))?
            .parse::<f64>()
            .map_err(|e| format!("bad percentile in {s:?}: {e}"))?;
        if !(0.0..=100.0).contains(&p) {
            return Err(format!("percentile out of range in {s:?}"));
        }
        Ok(Self::Percentile(p))
    }
}

impl Serialize for CalibrationMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalibrationMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Linear-interpolation percentile (the "linear" / type-7 rule).
pub fn percentile(values: &[f64], p: f64) -> Result<f64, DetectorError> {
    if !(0.0..=100.0).contains(&p) {
        return Err(DetectorError::InvalidPercentile(p));
    }
    if values.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

pub fn calibrate_threshold(net: &Network, malicious_train: &[Vec<f64>], method: CalibrationMethod) -> Result<f64, DetectorError> {
    if malicious_train.is_empty() {
        return Err(DetectorError::EmptyClass(Label::Malicious));
    }
    let errors = malicious_train
        .iter()
        .map(|x| net.reconstruction_error(x))
        .collect::<Result<Vec<f64>, _>>()?;
    match method {
        CalibrationMethod::Percentile(p) => percentile(&errors, p),
        CalibrationMethod::MaxTrainError => Ok(errors.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub version: u32,
    pub fingerprint: Fingerprint,
    pub dimension: usize,
    pub threshold: f64,
    pub calibration: CalibrationMethod,
    pub parameter_count: usize,
    pub train_config: TrainConfig,
    pub n_train: usize,
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
    pub network: Network,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub error: f64,
    pub label: Label,
}

impl DetectorModel {
    pub fn new(network: Network, threshold: f64, calibration: CalibrationMethod, fingerprint: Fingerprint, train_config: TrainConfig) -> Self {
        Self {
            version: DETECTOR_FORMAT_VERSION,
            fingerprint,
            dimension: network.input_size(),
            threshold,
            calibration,
            parameter_count: network.parameter_count(),
            train_config,
            n_train: 0,
            final_loss: None,
            run: None,
            network,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let model: Self = serde_json::from_str(text).map_err(|e| DetectorError::ModelFormat(e.to_string()))?;
        model.network.validate().map_err(DetectorError::ModelFormat)?;
        if model.dimension != model.network.input_size() || model.parameter_count != model.network.parameter_count() {
            return Err(DetectorError::ModelFormat(
                "dimension or parameter count disagrees with the network".into(),
            ));
        }
        let mut model = model;
        model.network = Network::from_json(&serde_json::to_string(&model.network).expect("serializes"))
            .map_err(DetectorError::ModelFormat)?;
        Ok(model)
    }

    /// Low error means malicious; ties go to malicious.
    pub fn decide(&self, error: f64) -> Label {
        if error <= self.threshold {
            Label::Malicious
        } else {
            Label::Benign
        }
    }

    pub fn classify(&self, x: &FeatureVector) -> Result<Verdict, DetectorError> {
        if x.fingerprint != self.fingerprint {
            return Err(DetectorError::VocabularyMismatch {
                expected: self.fingerprint,
                found: x.fingerprint,
            });
        }
        let error = self.network.reconstruction_error(&x.to_f64())?;
        Ok(Verdict {
            error,
            label: self.decide(error),
        })
    }
}

pub fn classify(model: &DetectorModel, x: &FeatureVector) -> Result<Verdict, DetectorError> {
    model.classify(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, actual_positive: bool, predicted_positive: bool) {
        match (actual_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Precision, recall and f1 are 0 whenever their denominator is.
    pub fn from_confusion(c: &Confusion) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub routing: RoutingMode,
    pub positive_class: Label,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, split: &str, routing: RoutingMode, positive_class: Label) -> Self {
        let m = Metrics::from_confusion(&confusion);
        Self {
            split: split.to_string(),
            routing,
            positive_class,
            confusion,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

pub fn evaluate(model: &DetectorModel, test: &LabeledDataset, positive_class: Label) -> Result<EvalReport, DetectorError> {
    evaluate_labeled(model, test, positive_class, "unsplit", RoutingMode::default())
}

pub fn evaluate_labeled(
    model: &DetectorModel,
    test: &LabeledDataset,
    positive_class: Label,
    split: &str,
    routing: RoutingMode,
) -> Result<EvalReport, DetectorError> {
    if test.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let mut confusion = Confusion::default();
    for (v, actual) in test.records() {
        let predicted = model.classify(v)?.label;
        confusion.record(*actual == positive_class, predicted == positive_class);
    }
    Ok(EvalReport::from_confusion(confusion, split, routing, positive_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Activation, InitScheme, LayerSpec};

    fn fv(id: &str, bits: &[u8]) -> FeatureVector {
        FeatureVector {
            app_id: id.into(),
            bits: bits.iter().map(|&b| b == 1).collect(),
            fingerprint: Fingerprint(1),
        }
    }

    fn dataset(n_mal: usize, n_ben: usize) -> LabeledDataset {
        let mut records = Vec::new();
        for i in 0..n_mal {
            records.push((fv(&format!("m{i}"), &[1, 1]), Label::Malicious));
        }
        for i in 0..n_ben {
            records.push((fv(&format!("b{i}"), &[0, 0]), Label::Benign));
        }
        LabeledDataset::new(Fingerprint(1), records).unwrap()
    }

    #[test]
    fn split_arithmetic() {
        let data = dataset(600, 600);
        let s = split(&data, 0.8, 1, RoutingMode::default()).unwrap();
        assert_eq!(s.train.count(Label::Malicious), 480);
        assert_eq!(s.train.count(Label::Benign), 0);
        assert_eq!(s.test.count(Label::Malicious), 120);
        assert_eq!(s.test.count(Label::Benign), 600);
        assert_eq!(s.benign_rerouted, 480);
        let only = split(&data, 0.8, 1, RoutingMode::BenignInTestOnly).unwrap();
        assert_eq!(only.test.count(Label::Benign), 120);
    }

    #[test]
    fn split_minimal_and_bounds() {
        let data = dataset(1, 1);
        let s = split(&data, 0.5, 0, RoutingMode::BenignInTestOnly).unwrap();
        assert_eq!(s.train.count(Label::Malicious), 1);
        assert_eq!(s.test.count(Label::Benign), 1);
        assert_eq!(s.test.count(Label::Malicious), 0);
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                split(&data, bad, 0, RoutingMode::default()),
                Err(DetectorError::InvalidFraction(_))
            ));
        }
        assert_eq!(
            split(&dataset(3, 0), 0.5, 0, RoutingMode::default()),
            Err(DetectorError::EmptyClass(Label::Benign))
        );
    }

    #[test]
    fn split_is_seeded() {
        let data = dataset(50, 50);
        let a = split(&data, 0.7, 4, RoutingMode::default()).unwrap();
        let b = split(&data, 0.7, 4, RoutingMode::default()).unwrap();
        let c = split(&data, 0.7, 5, RoutingMode::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn percentile_rules() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 100.0).unwrap(), 5.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[7.0], 95.0).unwrap(), 7.0);
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn calibration_names() {
        for m in [CalibrationMethod::Percentile(95.0), CalibrationMethod::Percentile(99.5), CalibrationMethod::MaxTrainError] {
            assert_eq!(m.to_string().parse::<CalibrationMethod>().unwrap(), m);
        }
        assert_eq!(CalibrationMethod::default().to_string(), "percentile(95)");
        assert!("percentile(120)".parse::<CalibrationMethod>().is_err());
    }

    fn tiny_model(threshold: f64) -> DetectorModel {
        let net = build_network(&[LayerSpec::new(2, 2, Activation::Sigmoid)], 0, InitScheme::UniformScaled, false).unwrap();
        DetectorModel::new(net, threshold, CalibrationMethod::default(), Fingerprint(1), TrainConfig::default())
    }

    #[test]
    fn boundary_is_malicious() {
        let m = tiny_model(1.5);
        assert_eq!(m.decide(1.5), Label::Malicious);
        assert_eq!(m.decide(1.5 + 1e-12), Label::Benign);
        assert_eq!(m.decide(0.0), Label::Malicious);
    }

    #[test]
    fn single_vector_threshold() {
        let m = tiny_model(0.0);
        let x = vec![vec![1.0, 0.0]];
        let own = m.network.reconstruction_error(&x[0]).unwrap();
        for method in [CalibrationMethod::MaxTrainError, CalibrationMethod::Percentile(50.0), CalibrationMethod::Percentile(95.0)] {
            assert_eq!(calibrate_threshold(&m.network, &x, method).unwrap(), own);
        }
    }

    #[test]
    fn metric_formulas() {
        let c = Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 };
        let m = Metrics::from_confusion(&c);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
        let none = Metrics::from_confusion(&Confusion { tp: 0, fp: 0, tn: 3, fn_: 2 });
        assert_eq!(none.f1, 0.0);
        assert_eq!(none.precision, 0.0);
        let perfect = Metrics::from_confusion(&Confusion { tp: 4, fp: 0, tn: 5, fn_: 0 });
        assert_eq!((perfect.accuracy, perfect.f1), (1.0, 1.0));
    }

    #[test]
    fn fingerprint_guard() {
        let m = tiny_model(1.0);
        let mut x = fv("x", &[1, 0]);
        x.fingerprint = Fingerprint(2);
        assert_eq!(
            m.classify(&x),
            Err(DetectorError::VocabularyMismatch {
                expected: Fingerprint(1),
                found: Fingerprint(2)
            })
        );
    }

    #[test]
    fn model_file_round_trip() {
        let m = tiny_model(0.123_456_789_012_345_67);
        let text = m.to_json();
        assert!(text.contains("\"parameter_count\": 6"));
        assert_eq!(DetectorModel::from_json(&text).unwrap(), m);
    }
}
