use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use droidae::apk::open_archive;
use droidae::detector::{
    calibrate_threshold, evaluate, run_split_sweep, CalibrationMethod, DetectorError, DetectorModel, EvalReport, LabeledDataset,
    PipelineConfig, RoutingMode, SweepResult,
};
use droidae::detector::{default_profiles, generate_with_profiles};
use droidae::extract::extract_report;
use droidae::features::{default_vocabulary, read_vectors, write_vectors, FeatureVector, FeatureVocabulary, Label, VectorFile, VectorRecord};
use droidae::nn::{build_network, default_stack, train, InitScheme, NnError, TrainConfig};
use droidae::run::RunManifest;
use droidae::time::Timestamp;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::{Cli, CliError, Command, Common, Format};

const VECTOR_MAGIC: &[u8] = b"# droidae-vectors";
const DEFAULT_REFERENCE_UNIX: i64 = 1_514_764_800;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelArg {
    Benign,
    Malicious,
    Unknown,
}

impl From<LabelArg> for Label {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Benign => Label::Benign,
            LabelArg::Malicious => Label::Malicious,
            LabelArg::Unknown => Label::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    UniformScaled,
    NormalScaled,
}

impl From<InitArg> for InitScheme {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::UniformScaled => InitScheme::UniformScaled,
            InitArg::NormalScaled => InitScheme::NormalScaled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingArg {
    BenignEvaluatedInBothPartitions,
    BenignInTestOnly,
}

impl From<RoutingArg> for RoutingMode {
    fn from(r: RoutingArg) -> Self {
        match r {
            RoutingArg::BenignEvaluatedInBothPartitions => RoutingMode::BenignEvaluatedInBothPartitions,
            RoutingArg::BenignInTestOnly => RoutingMode::BenignInTestOnly,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// APK files or directories (searched recursively).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Label written on every record.
    #[arg(long, value_enum, default_value_t = LabelArg::Unknown)]
    pub label: LabelArg,
    /// Unix time certificates are judged at.
    #[arg(long, default_value_t = DEFAULT_REFERENCE_UNIX)]
    pub reference_time: i64,
    /// Per-app diagnostics log; stderr otherwise.
    #[arg(long, value_name = "PATH")]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = InitArg::UniformScaled)]
    pub init: InitArg,
    /// `percentile(P)` or `max-train-error`.
    #[arg(long, default_value = "percentile(95)")]
    pub calibration: CalibrationMethod,
}

impl TrainingFlags {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed: seed,
            init_scheme: self.init.into(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Vector file; only its malicious records are used.
    pub dataset: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Two-column (epoch, mean loss) file.
    #[arg(long, value_name = "PATH")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Vector files, APKs, or directories of either.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REFERENCE_UNIX)]
    pub reference_time: i64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Labeled vector file.
    pub dataset: PathBuf,
    /// Evaluate this model on the whole dataset instead of running the pipeline.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Train fractions of the sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.7,0.6,0.5")]
    pub splits: Vec<f64>,
    /// Seeds per fraction; `--seed` alone otherwise.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value_t = RoutingArg::BenignEvaluatedInBothPartitions)]
    pub routing: RoutingArg,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Loss curves of every cell, one blank-line separated block each.
    #[arg(long, value_name = "PATH")]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub benign: usize,
    #[arg(long, default_value_t = 600)]
    pub malicious: usize,
    /// Per-bit flip probability in [0, 0.5).
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

/// Written by `evaluate --out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub run: RunManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    vocab: Option<&'a Path>,
    seed: u64,
    format: Format,
    #[serde(flatten)]
    args: &'a T,
}

fn manifest<T: Serialize>(command: &str, common: &Common, args: &T) -> RunManifest {
    let echo = Echo {
        vocab: common.vocab.as_deref(),
        seed: common.seed,
        format: common.format,
        args,
    };
    RunManifest::new(command, &echo)
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    match cli.command {
        Command::Extract(a) => cmd_extract(&common, &a),
        Command::Train(a) => cmd_train(&common, &a),
        Command::Classify(a) => cmd_classify(&common, &a),
        Command::Evaluate(a) => cmd_evaluate(&common, &a),
        Command::Synth(a) => cmd_synth(&common, &a),
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn required_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
}

fn load_vocab(common: &Common, run: &mut RunManifest) -> Result<FeatureVocabulary> {
    match &common.vocab {
        None => Ok(default_vocabulary()),
        Some(p) => {
            let bytes = read(p)?;
            run.add_input(&p.display().to_string(), &bytes);
            let text = String::from_utf8(bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            FeatureVocabulary::from_toml(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn load_vectors(path: &Path, run: &mut RunManifest) -> Result<VectorFile> {
    let bytes = read(path)?;
    run.add_input(&path.display().to_string(), &bytes);
    read_vectors(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Files in argument order; directories expand to their files sorted by name.
fn expand_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in WalkDir::new(input).sort_by_file_name().into_iter().flatten() {
                if entry.file_type().is_file() {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    files
}

fn check_fingerprint(common: &Common, run: &mut RunManifest, found: droidae::Fingerprint) -> Result<()> {
    if common.vocab.is_some() {
        let vocab = load_vocab(common, run)?;
        if vocab.fingerprint() != found {
            return Err(CliError::Input(format!(
                "vocabulary mismatch: --vocab fingerprint {}, dataset fingerprint {found}",
                vocab.fingerprint()
            )));
        }
    }
    Ok(())
}

fn cmd_extract(common: &Common, args: &ExtractArgs) -> Result<()> {
    let out = required_out(common)?;
    let mut run = manifest("extract", common, args);
    let vocab = load_vocab(common, &mut run)?;
    let reference = Timestamp::from_unix(args.reference_time);
    let files = expand_inputs(&args.inputs);

    let mut records = Vec::new();
    let mut log = String::new();
    let mut skipped = 0;
    for path in &files {
        let id = path.display().to_string();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                skipped += 1;
                continue;
            }
        };
        let digest_bytes = bytes.clone();
        let archive = match open_archive(bytes, &id) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                skipped += 1;
                continue;
            }
        };
        let report = extract_report(&archive, &vocab, reference);
        let vector = vocab.vectorize(&report).map_err(input_err)?;
        run.add_input(&id, &digest_bytes);
        for d in &report.diagnostics {
            log.push_str(&format!("{id}\t{d}\n"));
        }
        records.push(VectorRecord {
            vector,
            label: args.label.into(),
        });
    }
    if records.is_empty() {
        return Err(CliError::Input("no inputs processed".into()));
    }

    let n = records.len();
    let file = VectorFile {
        fingerprint: vocab.fingerprint(),
        dimension: vocab.dimension(),
        comments: vec![format!("run {}", run.to_line())],
        records,
    };
    let mut buf = Vec::new();
    write_vectors(&mut buf, &file).map_err(input_err)?;
    write(out, &buf)?;
    match &args.diagnostics {
        Some(p) => write(p, log.as_bytes())?,
        None => eprint!("{log}"),
    }
    match common.format {
        Format::Table => println!("extracted {n} of {} inputs ({skipped} skipped) -> {}", files.len(), out.display()),
        Format::JsonLines => println!(
            "{}",
            serde_json::json!({"processed": n, "skipped": skipped, "out": out.display().to_string()})
        ),
    }
    Ok(())
}

fn curve_text(run: &RunManifest, curve: &[f64]) -> String {
    let mut s = format!("# run {}\n# epoch mean_loss\n", run.to_line());
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{} {l}\n", i + 1));
    }
    s
}

fn cmd_train(common: &Common, args: &TrainArgs) -> Result<()> {
    let out = required_out(common)?;
    let mut run = manifest("train", common, args);
    let file = load_vectors(&args.dataset, &mut run)?;
    check_fingerprint(common, &mut run, file.fingerprint)?;
    let train_x: Vec<Vec<f64>> = file
        .records
        .iter()
        .filter(|r| r.label == Label::Malicious)
        .map(|r| r.vector.to_f64())
        .collect();
    if train_x.is_empty() {
        return Err(CliError::Input(format!("{}: no malicious records", args.dataset.display())));
    }

    let cfg = args.training.train_config(common.seed);
    let net = build_network(&default_stack(file.dimension), common.seed, cfg.init_scheme, false).map_err(input_err)?;
    let outcome = match train(net, &train_x, &cfg) {
        Ok(o) => o,
        Err(NnError::DivergenceDetected {
            epoch,
            reason,
            partial_curve,
        }) => {
            if let Some(p) = &args.curve {
                write(p, curve_text(&run, &partial_curve).as_bytes())?;
            }
            return Err(CliError::Divergence(format!("training diverged at epoch {}: {reason}", epoch + 1)));
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let threshold = calibrate_threshold(&outcome.network, &train_x, args.training.calibration).map_err(input_err)?;
    let mut model = DetectorModel::new(outcome.network, threshold, args.training.calibration, file.fingerprint, cfg);
    model.n_train = train_x.len();
    model.final_loss = outcome.loss_curve.last().copied();
    model.run = Some(run.clone());
    write(out, model.to_json().as_bytes())?;
    if let Some(p) = &args.curve {
        write(p, curve_text(&run, &outcome.loss_curve).as_bytes())?;
    }

    let final_loss = model.final_loss.unwrap_or(outcome.initial_loss);
    match common.format {
        Format::Table => {
            println!("parameters  {}", model.parameter_count);
            println!("trained on  {} malicious records", model.n_train);
            println!("final loss  {final_loss}");
            println!("threshold   {threshold} ({})", model.calibration);
        }
        Format::JsonLines => println!(
            "{}",
            serde_json::json!({
                "parameter_count": model.parameter_count,
                "n_train": model.n_train,
                "final_loss": final_loss,
                "threshold": threshold,
                "calibration": model.calibration,
            })
        ),
    }
    Ok(())
}

fn load_model(path: &Path, run: &mut RunManifest) -> Result<DetectorModel> {
    let bytes = read(path)?;
    run.add_input(&path.display().to_string(), &bytes);
    let text = String::from_utf8(bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    DetectorModel::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn mismatch(model: &DetectorModel, found: droidae::Fingerprint, what: &str) -> CliError {
    CliError::Input(format!(
        "vocabulary mismatch for {what}: model fingerprint {}, input fingerprint {found}",
        model.fingerprint
    ))
}

fn cmd_classify(common: &Common, args: &ClassifyArgs) -> Result<()> {
    let mut run = manifest("classify", common, args);
    let model = load_model(&args.model, &mut run)?;
    let reference = Timestamp::from_unix(args.reference_time);
    let mut vocab: Option<FeatureVocabulary> = None;

    let mut vectors: Vec<FeatureVector> = Vec::new();
    for path in expand_inputs(&args.inputs) {
        let id = path.display().to_string();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                continue;
            }
        };
        run.add_input(&id, &bytes);
        if bytes.starts_with(VECTOR_MAGIC) {
            let file = read_vectors(bytes.as_slice()).map_err(|e| CliError::Input(format!("{id}: {e}")))?;
            if file.fingerprint != model.fingerprint {
                return Err(mismatch(&model, file.fingerprint, &id));
            }
            vectors.extend(file.records.into_iter().map(|r| r.vector));
            continue;
        }
        let archive = match open_archive(bytes, &id) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                continue;
            }
        };
        if vocab.is_none() {
            vocab = Some(load_vocab(common, &mut run)?);
        }
        let vocab = vocab.as_ref().expect("loaded above");
        if vocab.fingerprint() != model.fingerprint {
            return Err(mismatch(&model, vocab.fingerprint(), &id));
        }
        let report = extract_report(&archive, vocab, reference);
        vectors.push(vocab.vectorize(&report).map_err(input_err)?);
    }
    if vectors.is_empty() {
        return Err(CliError::Input("no inputs processed".into()));
    }

    let mut verdicts = Vec::with_capacity(vectors.len());
    for v in &vectors {
        let verdict = model.classify(v).map_err(|e| match e {
            DetectorError::VocabularyMismatch { found, .. } => mismatch(&model, found, &v.app_id),
            other => input_err(other),
        })?;
        verdicts.push((v.app_id.as_str(), verdict));
    }

    let mut text = String::new();
    match common.format {
        Format::Table => {
            let width = verdicts.iter().map(|(id, _)| id.len()).max().unwrap_or(0).max("app".len());
            text.push_str(&format!("{:<width$}  {:<24}  verdict\n", "app", "error"));
            for (id, v) in &verdicts {
                text.push_str(&format!("{id:<width$}  {:<24}  {}\n", v.error.to_string(), v.label));
            }
        }
        Format::JsonLines => {
            for (id, v) in &verdicts {
                text.push_str(&serde_json::json!({"app_id": id, "error": v.error, "verdict": v.label}).to_string());
                text.push('\n');
            }
        }
    }
    match &common.out {
        Some(p) => {
            let head = match common.format {
                Format::Table => format!("# run {}\n", run.to_line()),
                Format::JsonLines => format!("{}\n", serde_json::json!({ "run": run })),
            };
            write(p, format!("{head}{text}").as_bytes())
        }
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(input_err(e)),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_evaluate(common: &Common, args: &EvaluateArgs) -> Result<()> {
    let mut run = manifest("evaluate", common, args);
    let file = load_vectors(&args.dataset, &mut run)?;
    check_fingerprint(common, &mut run, file.fingerprint)?;
    let data = LabeledDataset::from_vector_file(file).map_err(|e| CliError::Input(format!("{}: {e}", args.dataset.display())))?;
    for label in [Label::Malicious, Label::Benign] {
        if data.count(label) == 0 {
            return Err(CliError::Input(format!("{}: no {label} records", args.dataset.display())));
        }
    }

    if let Some(model_path) = &args.model {
        let model = load_model(model_path, &mut run)?;
        if model.fingerprint != data.fingerprint() {
            return Err(mismatch(&model, data.fingerprint(), &args.dataset.display().to_string()));
        }
        let report = evaluate(&model, &data, Label::Malicious).map_err(input_err)?;
        match common.format {
            Format::Table => {
                println!("{:<10} {:>9} {:>9}", "split", "accuracy", "f1");
                println!("{:<10} {:>9.2} {:>9.2}", report.split, report.accuracy * 100.0, report.f1 * 100.0);
            }
            Format::JsonLines => println!("{}", serde_json::to_string(&report).expect("serializes")),
        }
        if let Some(out) = &common.out {
            let rf = ReportFile {
                run,
                sweep: None,
                report: Some(report),
            };
            write(out, report_json(&rf).as_bytes())?;
        }
        return Ok(());
    }

    if args.splits.is_empty() {
        return Err(CliError::Usage("--splits needs at least one fraction".into()));
    }
    if let Some(f) = args.splits.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(CliError::Usage(format!("split fraction {f} is not strictly between 0 and 1")));
    }
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![common.seed]);
    let cfg = PipelineConfig {
        train: args.training.train_config(common.seed),
        calibration: args.training.calibration,
        routing: args.routing.into(),
        positive_class: Label::Malicious,
    };
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let sweep = run_split_sweep(&data, &args.splits, &seeds, &cfg);

    match common.format {
        Format::Table => print!("{}", sweep.table()),
        Format::JsonLines => {
            for row in &sweep.rows {
                println!("{}", serde_json::to_string(row).expect("serializes"));
            }
        }
    }
    for cell in sweep.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "warning: split {} seed {} failed: {}",
            cell.split,
            cell.seed,
            cell.error.as_deref().unwrap_or_default()
        );
    }
    if let Some(p) = &args.curves {
        let mut s = format!("# run {}\n", run.to_line());
        for cell in &sweep.cells {
            s.push_str(&format!("\n# split {} seed {}\n# epoch mean_loss\n", cell.split, cell.seed));
            for (i, l) in cell.loss_curve.iter().enumerate() {
                s.push_str(&format!("{} {l}\n", i + 1));
            }
        }
        write(p, s.as_bytes())?;
    }
    let all_failed = sweep.rows.iter().all(|r| r.succeeded == 0);
    let diverged = sweep
        .cells
        .iter()
        .any(|c| c.error.as_deref().is_some_and(|e| e.starts_with("training diverged")));
    if let Some(out) = &common.out {
        let rf = ReportFile {
            run,
            sweep: Some(sweep),
            report: None,
        };
        write(out, report_json(&rf).as_bytes())?;
    }
    if all_failed {
        return Err(if diverged {
            CliError::Divergence("every sweep cell diverged or failed".into())
        } else {
            CliError::Input("every sweep cell failed".into())
        });
    }
    Ok(())
}

fn report_json(rf: &ReportFile) -> String {
    let mut s = serde_json::to_string_pretty(rf).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_synth(common: &Common, args: &SynthArgs) -> Result<()> {
    let out = required_out(common)?;
    let mut run = manifest("synth", common, args);
    let vocab = load_vocab(common, &mut run)?;
    let data = generate_with_profiles(&vocab, &default_profiles(&vocab), args.benign, args.malicious, common.seed, args.noise)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let file = data.to_vector_file(vec![format!("run {}", run.to_line())]);
    let mut buf = Vec::new();
    write_vectors(&mut buf, &file).map_err(input_err)?;
    write(out, &buf)?;
    match common.format {
        Format::Table => println!(
            "wrote {} records ({} benign, {} malicious) -> {}",
            data.len(),
            args.benign,
            args.malicious,
            out.display()
        ),
        Format::JsonLines => println!(
            "{}",
            serde_json::json!({"records": data.len(), "benign": args.benign, "malicious": args.malicious, "out": out.display().to_string()})
        ),
    }
    Ok(())
}
