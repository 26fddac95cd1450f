use serde::{Deserialize, Serialize};

use super::{calibrate_threshold, evaluate_labeled, split, CalibrationMethod, DetectorError, DetectorModel, EvalReport, LabeledDataset, Metrics, RoutingMode};
use crate::features::Label;
use crate::nn::{build_network, default_stack, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub calibration: CalibrationMethod,
    pub routing: RoutingMode,
    pub positive_class: Label,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            calibration: CalibrationMethod::default(),
            routing: RoutingMode::default(),
            positive_class: Label::Malicious,
        }
    }
}

/// "80%-20%" for 0.8.
pub fn split_label(fraction: f64) -> String {
    let train = (fraction * 100.0).round();
    format!("{train}%-{}%", 100.0 - train)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub model: DetectorModel,
    pub report: EvalReport,
    pub loss_curve: Vec<f64>,
}

/// split → train → calibrate → evaluate. `seed` drives the split and the
/// weight initialization; batch shuffling uses `cfg.train.shuffle_seed`.
pub fn run_pipeline(data: &LabeledDataset, fraction: f64, seed: u64, cfg: &PipelineConfig) -> Result<CellOutcome, DetectorError> {
    let parts = split(data, fraction, seed, cfg.routing)?;
    let train_x = parts.train.vectors(Label::Malicious);
    let net = build_network(&default_stack(data.dimension()), seed, cfg.train.init_scheme, false)?;
    let outcome = train(net, &train_x, &cfg.train)?;
    let threshold = calibrate_threshold(&outcome.network, &train_x, cfg.calibration)?;
    let mut model = DetectorModel::new(outcome.network, threshold, cfg.calibration, data.fingerprint(), cfg.train);
    model.n_train = train_x.len();
    model.final_loss = outcome.loss_curve.last().copied();
    let report = evaluate_labeled(&model, &parts.test, cfg.positive_class, &split_label(fraction), cfg.routing)?;
    Ok(CellOutcome {
        model,
        report,
        loss_curve: outcome.loss_curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub fraction: f64,
    pub seed: u64,
    pub split: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    pub threshold: Option<f64>,
    pub loss_curve: Vec<f64>,
}

/// Mean over the seeds whose cell succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub split: String,
    pub succeeded: usize,
    pub failed: usize,
    pub mean: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: PipelineConfig,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, fraction: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.fraction == fraction)
    }

    /// Aligned text table: split, accuracy, f1 (percentages).
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>9} {:>9}\n", "split", "accuracy", "f1");
        for r in &self.rows {
            match &r.mean {
                Some(m) => out.push_str(&format!("{:<10} {:>9.2} {:>9.2}\n", r.split, m.accuracy * 100.0, m.f1 * 100.0)),
                None => out.push_str(&format!("{:<10} {:>9} {:>9}\n", r.split, "failed", "failed")),
            }
        }
        out
    }
}

/// Every fraction × seed cell; a failing cell is recorded, not fatal.
pub fn run_split_sweep(data: &LabeledDataset, fractions: &[f64], seeds: &[u64], cfg: &PipelineConfig) -> SweepResult {
    let mut cells = Vec::with_capacity(fractions.len() * seeds.len());
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut ok: Vec<Metrics> = Vec::new();
        let mut failed = 0;
        for &seed in seeds {
            let cell = match run_pipeline(data, fraction, seed, cfg) {
                Ok(c) => {
                    ok.push(c.report.metrics());
                    SweepCell {
                        fraction,
                        seed,
                        split: split_label(fraction),
                        threshold: Some(c.model.threshold),
                        report: Some(c.report),
                        error: None,
                        loss_curve: c.loss_curve,
                    }
                }
                Err(e) => {
                    failed += 1;
                    let loss_curve = match &e {
                        DetectorError::Nn(crate::nn::NnError::DivergenceDetected { partial_curve, .. }) => partial_curve.clone(),
                        _ => Vec::new(),
                    };
                    SweepCell {
                        fraction,
                        seed,
                        split: split_label(fraction),
                        report: None,
                        error: Some(e.to_string()),
                        threshold: None,
                        loss_curve,
                    }
                }
            };
            cells.push(cell);
        }
        rows.push(SweepRow {
            fraction,
            split: split_label(fraction),
            succeeded: ok.len(),
            failed,
            mean: mean_metrics(&ok),
        });
    }
    SweepResult {
        config: *cfg,
        fractions: fractions.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        rows,
    }
}

fn mean_metrics(ms: &[Metrics]) -> Option<Metrics> {
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
    Some(Metrics {
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
    })
}
