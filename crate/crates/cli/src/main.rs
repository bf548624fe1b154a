use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use privpred::accounting::{DpSgdConfig, PrivacySpec, ProblemDims};
use privpred::bench::{emit_csv, emit_summary_csv, run_sweep, summarize, SweepConfig};
use privpred::data::{load_csv, load_idx, pca_fit_transform, PcaModel, RawDataset, UnitBallScaler};
use privpred::mechanisms::{train, MechanismKind, MechanismSpec, PrivateAnswer, DEFAULT_ENSEMBLE_SIZE};
use privpred::params_io::write_params;
use privpred::verify::{run_suite, Suite};
use privpred::{Dataset64, Predictor64};

#[derive(Parser)]
#[command(name = "privpred", version, about = "Differentially private linear classifiers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repetitions (sweep trials, or random cases for verify).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a private predictor and save it as JSON.
    Train(TrainArgs),
    /// Answer queries with a saved predictor, spending its budget.
    Predict(PredictArgs),
    /// Run a sweep described by a TOML config and write per-trial CSV.
    Sweep(SweepArgs),
    /// Run the built-in invariant suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Training data as CSV with header f0,...,label.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    csv: Option<PathBuf>,
    /// IDX image file (optionally gzipped).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file (optionally gzipped).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<RawDataset> {
        match (&self.csv, &self.images, &self.labels) {
            (Some(p), _, _) => Ok(load_csv(p)?),
            (None, Some(i), Some(l)) => Ok(load_idx(i, l)?),
            _ => bail!("give --csv or --images with --labels"),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kind)]
    mechanism: MechanismKind,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Inference budget B.
    #[arg(long, default_value_t = 1)]
    budget: u64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    /// Sub-models for subsample-and-aggregate.
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE_SIZE)]
    ensemble: usize,
    /// Reduce inputs to this many principal components first.
    #[arg(long)]
    pca: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    clip: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    epochs: f64,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    /// Also write released parameters in the binary PPRM format.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved predictor from `train`; its budget is updated in place.
    #[arg(long)]
    model: PathBuf,
    /// Query rows as CSV with header f0,...,label (labels are ignored).
    #[arg(long)]
    inputs: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also write per-configuration mean and standard deviation.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run; all when omitted.
    #[arg(long, value_parser = parse_suite)]
    suite: Vec<Suite>,
}

fn parse_kind(s: &str) -> Result<MechanismKind, String> {
    s.parse().map_err(|e: privpred::Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: privpred::Error| e.to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Preprocess {
    Scale(UnitBallScaler),
    Pca(PcaModel),
}

impl Preprocess {
    fn apply(&self, raw: &RawDataset) -> Result<Dataset64> {
        Ok(match self {
            Preprocess::Scale(s) => s.apply(raw)?,
            Preprocess::Pca(p) => p.transform(raw)?,
        })
    }
}

/// What `train` writes and `predict` reads back.
#[derive(Serialize, Deserialize)]
struct SavedModel {
    preprocess: Preprocess,
    predictor: Predictor64,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum QueryOutcome {
    Ok { index: usize, label: usize, answer: PrivateAnswer<f64> },
    Refused { index: usize, message: String },
    Error { index: usize, message: String },
}

fn cmd_train(g: &Global, a: &TrainArgs) -> Result<()> {
    let raw = a.data.load()?;
    let (preprocess, data) = match a.pca {
        Some(d) => {
            let (m, ds) = pca_fit_transform(&raw, d)?;
            (Preprocess::Pca(m), ds)
        }
        None => {
            let (s, ds) = UnitBallScaler::fit_transform(&raw)?;
            (Preprocess::Scale(s), ds)
        }
    };
    let dims = ProblemDims::logistic(data.len(), a.lambda, data.n_classes())?;
    let mut spec = MechanismSpec::new(a.mechanism, PrivacySpec::new(a.epsilon, a.delta, a.budget)?, dims)
        .with_seed(g.seed.unwrap_or(0), 0)
        .with_ensemble_size(a.ensemble);
    if a.mechanism == MechanismKind::Dpsgd {
        let n = data.len();
        let batch = a.batch_size.min(n);
        let steps = ((a.epochs * n as f64 / batch as f64).ceil() as usize).max(1);
        spec = spec.with_dpsgd(DpSgdConfig::new(a.clip, batch, steps, n, a.learning_rate)?);
    }
    let predictor = train(&data, &spec)?;
    info!("calibration: {:?}", predictor.calibration());
    if let Some(p) = &a.params_out {
        let theta = predictor
            .released_params()
            .context("only model-releasing mechanisms have parameters to export")?;
        write_params(theta, p)?;
    }
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("predictor.json"));
    save_model(&out, &SavedModel { preprocess, predictor })?;
    println!("wrote {}", out.display());
    Ok(())
}

fn save_model(path: &Path, m: &SavedModel) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(m)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn cmd_predict(g: &Global, a: &PredictArgs) -> Result<bool> {
    let text = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let saved: SavedModel = serde_json::from_slice(&text).context("parsing saved predictor")?;
    let raw = load_csv(&a.inputs)?;
    let queries = saved.preprocess.apply(&raw)?;
    let mut out: Box<dyn Write> = match &g.out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut refused = false;
    for i in 0..queries.len() {
        let outcome = match saved.predictor.predict(queries.x(i)) {
            Ok(answer) => QueryOutcome::Ok { index: i, label: answer.label(), answer },
            Err(e) if e.is_refusal() => {
                refused = true;
                QueryOutcome::Refused { index: i, message: e.to_string() }
            }
            Err(e) => QueryOutcome::Error { index: i, message: e.to_string() },
        };
        serde_json::to_writer(&mut out, &outcome)?;
        writeln!(out)?;
    }
    out.flush()?;
    // persist the spent budget
    save_model(&a.model, &saved)?;
    Ok(!refused)
}

fn cmd_sweep(g: &Global, a: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::from_path(&a.config)?;
    if let Some(t) = g.trials {
        cfg.trials = t;
    }
    if let Some(s) = g.seed {
        cfg.base_seed = s;
    }
    let records = run_sweep(&cfg)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));
    emit_csv(&records, &out)?;
    println!("wrote {} records to {}", records.len(), out.display());
    if let Some(s) = &a.summary {
        emit_summary_csv(&summarize(&records), s)?;
    }
    Ok(())
}

fn cmd_verify(g: &Global, a: &VerifyArgs) -> Result<bool> {
    let suites = if a.suite.is_empty() { Suite::ALL.to_vec() } else { a.suite.clone() };
    let mut all = Vec::new();
    for s in suites {
        for c in run_suite(s, g.seed.unwrap_or(0), g.trials.unwrap_or(20))? {
            println!("{} {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, c.suite, c.name, c.detail);
            all.push(c);
        }
    }
    if let Some(p) = &g.out {
        fs::write(p, serde_json::to_vec_pretty(&all)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(all.iter().all(|c| c.passed))
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match &cli.cmd {
        Command::Train(a) => cmd_train(&cli.global, a).map(|_| true),
        Command::Predict(a) => cmd_predict(&cli.global, a),
        Command::Sweep(a) => cmd_sweep(&cli.global, a).map(|_| true),
        Command::Verify(a) => cmd_verify(&cli.global, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        // refusals and failed checks
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
