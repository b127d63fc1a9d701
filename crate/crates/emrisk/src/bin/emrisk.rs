//! Command-line driver: generate synthetic cohorts, train and evaluate risk
//! models, run cross-validation, trace hidden states, check gradients, and
//! export embeddings. Progress goes to stderr; data goes to files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emrisk::config::{digest_json, RunConfig};
use emrisk::data::{gen_synthetic, load_cohort, serialize_cohort, Cohort, ParseOptions, SynthConfig};
use emrisk::diffcore::GradCheckConfig;
use emrisk::eval::{
    cross_validate, fit_full, trace_states, write_history_csv, write_json_report,
    write_metrics_json, write_trace_csv, AnyModel, EvalReport,
};
use emrisk::model::{gradcheck_suite, ArtifactMeta, RiskModel};

#[derive(Parser)]
#[command(
    name = "emrisk",
    version,
    about = "Readmission-risk modeling over longitudinal medical records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file plus override flags shared by `train` and `cv`.
/// Flags beat config keys; config keys beat built-in defaults.
#[derive(Args, Debug)]
struct ConfiguredRun {
    /// Training data (one JSON record per line)
    #[arg(long)]
    data: PathBuf,
    /// Model kind: mdmt, mdmtp, bow-lr, or deepr-mini (overrides config)
    #[arg(long)]
    model: Option<String>,
    /// Run configuration file (flat JSON; omitted keys take defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (overrides config)
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs (overrides config)
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size (overrides config)
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate (overrides config)
    #[arg(long)]
    lr: Option<f64>,
    /// Early-stopping patience in epochs; 0 disables (overrides config)
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort file (plus a .meta.json sidecar)
    GenSynth {
        /// Number of patient records
        #[arg(long)]
        patients: usize,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path (one JSON record per line)
        #[arg(long)]
        out: PathBuf,
        /// Use the large code vocabularies (~240 diseases, ~1100 treatments)
        #[arg(long)]
        paper_scale: bool,
    },
    /// Train a model and save it as a versioned JSON artifact
    Train {
        #[command(flatten)]
        run: ConfiguredRun,
        /// Where to save the trained model
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch history CSV (epoch,train_loss,val_auc)
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Score a saved model on a dataset and write metrics JSON
    Eval {
        /// Evaluation data (one JSON record per line)
        #[arg(long)]
        data: PathBuf,
        /// A model artifact produced by `train`
        #[arg(long)]
        model_file: PathBuf,
        /// Where to write the metrics JSON
        #[arg(long)]
        metrics_out: PathBuf,
    },
    /// Stratified k-fold cross-validation with per-fold and aggregate AUC
    Cv {
        #[command(flatten)]
        run: ConfiguredRun,
        /// Number of folds (overrides config)
        #[arg(long)]
        folds: Option<usize>,
        /// Maximum folds trained in parallel (overrides config)
        #[arg(long)]
        jobs: Option<usize>,
        /// Where to write the metrics JSON
        #[arg(long)]
        metrics_out: PathBuf,
    },
    /// Emit one patient's per-visit hidden states and risks as CSV
    Trace {
        /// A sequence-model artifact produced by `train`
        #[arg(long)]
        model_file: PathBuf,
        /// Data file containing the patient
        #[arg(long)]
        data: PathBuf,
        /// Patient identifier to trace
        #[arg(long)]
        patient: String,
        /// Where to write the trace CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences on tiny models
    Gradcheck {
        /// RNG seed for the probe records and parameters
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export a trained model's code embeddings as CSV
    EmbedExport {
        /// A sequence-model artifact produced by `train`
        #[arg(long)]
        model_file: PathBuf,
        /// Where to write the embedding CSV
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CliError = Box<dyn std::error::Error>;

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenSynth { patients, seed, out, paper_scale } => {
            gen_synth(patients, seed, &out, paper_scale)
        }
        Command::Train { run, out, history_out } => train(&run, &out, history_out.as_deref()),
        Command::Eval { data, model_file, metrics_out } => eval(&data, &model_file, &metrics_out),
        Command::Cv { run, folds, jobs, metrics_out } => cv(&run, folds, jobs, &metrics_out),
        Command::Trace { model_file, data, patient, out } => {
            trace(&model_file, &data, &patient, &out)
        }
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::EmbedExport { model_file, out } => embed_export(&model_file, &out),
    }
}

fn gen_synth(patients: usize, seed: u64, out: &Path, paper_scale: bool) -> Result<(), CliError> {
    let mut cfg = SynthConfig { patients, seed, ..SynthConfig::default() };
    if paper_scale {
        cfg = cfg.paper_scale();
    }
    let cohort = gen_synthetic(&cfg)?;

    let mut writer = BufWriter::new(File::create(out)?);
    serialize_cohort(&cohort, &mut writer)?;
    writer.flush()?;

    // Record lines are plain JSON, so provenance rides in a sidecar file.
    let meta = serde_json::json!({
        "seed": seed,
        "config_digest": digest_json(&cfg),
        "patients": cohort.records.len(),
    });
    let meta_path = sidecar_path(out);
    std::fs::write(&meta_path, format!("{}\n", serde_json::to_string_pretty(&meta)?))?;

    eprintln!(
        "wrote {} records to {} (provenance in {})",
        cohort.records.len(),
        out.display(),
        meta_path.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Merge config file and override flags, validate, and announce the result.
fn effective_config(run: &ConfiguredRun) -> Result<RunConfig, CliError> {
    let mut config = match &run.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(model) = &run.model {
        config.model = model.clone();
    }
    if let Some(seed) = run.seed {
        config.seed = seed;
    }
    if let Some(epochs) = run.epochs {
        config.epochs = epochs;
    }
    if let Some(batch) = run.batch {
        config.batch = batch;
    }
    if let Some(lr) = run.lr {
        config.lr = lr;
    }
    if let Some(patience) = run.patience {
        config.patience = patience;
    }
    config.validate()?;
    eprintln!("effective config (digest {}):", config.digest());
    eprintln!("{}", serde_json::to_string_pretty(&config)?);
    Ok(config)
}

fn read_data(path: &Path, options: &ParseOptions) -> Result<Cohort, CliError> {
    let report = load_cohort(path, options)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let (positives, labeled) = report.cohort.final_label_stats();
    eprintln!(
        "loaded {} records from {} ({positives} of {labeled} labeled finals positive)",
        report.cohort.records.len(),
        path.display(),
    );
    Ok(report.cohort)
}

fn train(run: &ConfiguredRun, out: &Path, history_out: Option<&Path>) -> Result<(), CliError> {
    let config = effective_config(run)?;
    let cohort = read_data(&run.data, &config.parse_options())?;
    let spec = config.model_spec()?;

    let (model, history) = fit_full(&cohort, &spec, config.seed)?;
    let meta = ArtifactMeta { seed: config.seed, config_digest: config.digest() };

    let mut writer = BufWriter::new(File::create(out)?);
    model.save(&mut writer, &meta)?;
    writer.flush()?;
    eprintln!("saved {} model to {}", model.name(), out.display());

    if let Some(path) = history_out {
        let mut writer = BufWriter::new(File::create(path)?);
        write_history_csv(&mut writer, &history, &meta)?;
        writer.flush()?;
        eprintln!("wrote {} history rows to {}", history.len(), path.display());
    }
    Ok(())
}

fn eval(data: &Path, model_file: &Path, metrics_out: &Path) -> Result<(), CliError> {
    let (model, meta) = AnyModel::load(BufReader::new(File::open(model_file)?))?;
    let cohort = read_data(data, &ParseOptions::default())?;
    let records: Vec<_> = cohort.records.iter().collect();
    let summary = model.evaluate(&records)?;
    let report = EvalReport::new(&model, &meta, &summary);

    let mut writer = BufWriter::new(File::create(metrics_out)?);
    write_json_report(&mut writer, &report)?;
    writer.flush()?;
    eprintln!(
        "{}: auc {:.4}, final-visit auc {:.4}, nll {:.4} ({} examples) -> {}",
        report.model,
        report.auc,
        report.auc_final,
        report.nll,
        report.positives + report.negatives,
        metrics_out.display()
    );
    Ok(())
}

fn cv(
    run: &ConfiguredRun,
    folds: Option<usize>,
    jobs: Option<usize>,
    metrics_out: &Path,
) -> Result<(), CliError> {
    let mut config = effective_config(run)?;
    if let Some(folds) = folds {
        config.folds = folds;
    }
    if let Some(jobs) = jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    let cohort = read_data(&run.data, &config.parse_options())?;
    let spec = config.model_spec()?;

    let report = cross_validate(
        &cohort,
        &spec,
        config.folds,
        config.seed,
        config.jobs,
        &config.digest(),
    )?;

    let mut writer = BufWriter::new(File::create(metrics_out)?);
    write_metrics_json(&mut writer, &report)?;
    writer.flush()?;
    eprintln!(
        "{}: {}-fold auc {:.4} ± {:.4} (final-visit {:.4} ± {:.4}) -> {}",
        report.model,
        report.fold_count,
        report.auc_mean,
        report.auc_std,
        report.auc_final_mean,
        report.auc_final_std,
        metrics_out.display()
    );
    Ok(())
}

/// Load a model artifact and insist it is a sequence model.
fn load_risk_model(model_file: &Path, verb: &str) -> Result<(RiskModel, ArtifactMeta), CliError> {
    let (model, meta) = AnyModel::load(BufReader::new(File::open(model_file)?))?;
    match model {
        AnyModel::Risk(m) => Ok((m, meta)),
        other => Err(format!(
            "cannot {verb} a '{}' model; this needs a sequence model (mdmt or mdmtp)",
            other.kind()
        )
        .into()),
    }
}

fn trace(model_file: &Path, data: &Path, patient: &str, out: &Path) -> Result<(), CliError> {
    let (model, meta) = load_risk_model(model_file, "trace")?;
    let cohort = read_data(data, &ParseOptions::default())?;
    let record = cohort
        .records
        .iter()
        .find(|r| r.patient_id == patient)
        .ok_or_else(|| format!("patient '{patient}' not found in {}", data.display()))?;

    let rows = trace_states(&model, record)?;
    let mut writer = BufWriter::new(File::create(out)?);
    write_trace_csv(&mut writer, &rows, &meta)?;
    writer.flush()?;
    eprintln!("wrote {} visit rows for '{patient}' to {}", rows.len(), out.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let cfg = GradCheckConfig { step: 1e-5, tolerance: 1e-4 };
    let cases = gradcheck_suite(seed, &cfg)?;
    let mut failed = 0usize;
    for case in &cases {
        let verdict = if case.report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<28} coordinates={:<5} max_rel_error={:.3e}",
            case.label, case.report.checked, case.report.max_rel_error
        );
        if !case.report.passed() {
            failed += 1;
            if let Some(worst) = &case.report.worst {
                println!(
                    "     worst: {}[{}] analytic={:.9e} numeric={:.9e}",
                    worst.param, worst.index, worst.analytic, worst.numeric
                );
            }
        }
    }
    if failed > 0 {
        return Err(format!("{failed} of {} gradient checks failed", cases.len()).into());
    }
    eprintln!("all {} gradient checks passed", cases.len());
    Ok(())
}

fn embed_export(model_file: &Path, out: &Path) -> Result<(), CliError> {
    let (model, meta) = load_risk_model(model_file, "export embeddings from")?;
    let table = model.embedding();
    let params = model.params();

    let mut writer = BufWriter::new(File::create(out)?);
    writeln!(writer, "# seed={} config_digest={}", meta.seed, meta.config_digest)?;
    let mut header = String::from("namespace,code");
    for i in 0..table.dim() {
        write!(header, ",e_{i}").expect("string write");
    }
    writeln!(writer, "{header}")?;

    let mut rows = 0usize;
    for (namespace, code, index) in model.vocabulary().iter() {
        let values = table.row_values(params, index)?;
        let mut line = format!("{namespace},{code}");
        for v in values {
            write!(line, ",{v:.17e}").expect("string write");
        }
        writeln!(writer, "{line}")?;
        rows += 1;
    }
    writer.flush()?;
    eprintln!("wrote {rows} embedding rows to {}", out.display());
    Ok(())
}
