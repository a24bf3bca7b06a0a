use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::Value;

use lfis::experiment::{self, ExperimentConfig, TargetSpec};
use lfis::metrics::{aggregate, combined_se, summaries_csv, summaries_markdown, RunReport, Summary};
use lfis::targets::{LgcpCounts, LgcpSpec, LogisticData};
use lfis::{flow, Error};

const REPORTS: &str = "reports.jsonl";
const RESOLVED: &str = "config.json";

#[derive(Parser)]
#[command(name = "lfis", version, about = "Train flow samplers, run SMC baselines and compare log Z estimates")]
struct Cli {
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed; LFIS_SEED is used when neither is set.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of annealing steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one velocity network per step and write a checkpoint directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Epoch cap per step.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Sample from a trained checkpoint directory.
    Sample {
        /// Directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples per repetition.
        #[arg(long)]
        samples: Option<usize>,
        /// Independent repetitions.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides the checkpoint's seed; LFIS_SEED is used when given.
        #[arg(long)]
        seed: Option<u64>,
        /// Report unweighted estimates.
        #[arg(long)]
        no_weights: bool,
        /// Write the first repetition's samples and weights as CSV.
        #[arg(long)]
        samples_csv: bool,
        /// Output directory; defaults to `samples` inside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the SMC/HMC baseline.
    Smc {
        #[command(flatten)]
        run: RunArgs,
        /// Particle count.
        #[arg(long)]
        particles: Option<usize>,
        /// Independent repetitions.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Tabulate report directories against the SMC run with the most steps.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory holding the gold-standard reports.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Also write the comparison tables to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic inputs.
    #[command(subcommand)]
    GenData(GenData),
}

#[derive(Subcommand)]
enum GenData {
    /// Synthetic Cox process counts.
    Lgcp {
        #[arg(long, default_value_t = 40)]
        grid: usize,
        #[arg(long, env = "LFIS_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic binary classification CSV.
    Logistic {
        #[arg(long, default_value_t = 200)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, env = "LFIS_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Config for an isotropic Gaussian target with known log Z.
    Oracle {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        std: f64,
        #[arg(long, env = "LFIS_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::TrainingDiverged { .. }
        | Error::TransportDiverged { .. }
        | Error::NonFiniteGradient
        | Error::NonFiniteDensity { .. }
        | Error::NonFiniteInput
        | Error::DegenerateWeights
        | Error::Cholesky(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(feature = "parallel")]
fn init_threads(n: usize) -> lfis::Result<()> {
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn init_threads(n: usize) -> lfis::Result<()> {
    if n != 1 {
        log::warn!("built without the parallel feature; ignoring --threads {n}");
    }
    Ok(())
}

fn env_seed() -> lfis::Result<Option<u64>> {
    match std::env::var("LFIS_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Error::Config(format!("LFIS_SEED=`{s}` is not a u64"))),
        Err(_) => Ok(None),
    }
}

/// Reads a config file, filling a missing seed from the flag or LFIS_SEED.
fn load_config(run: &RunArgs) -> lfis::Result<ExperimentConfig> {
    let text = fs::read_to_string(&run.config).map_err(|e| Error::io(&run.config, e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", run.config.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", run.config.display())))?;
    let seed = match run.seed {
        Some(s) => Some(s),
        None if obj.contains_key("seed") => None,
        None => Some(env_seed()?.ok_or_else(|| Error::Config("no seed: set `seed`, pass --seed or LFIS_SEED".into()))?),
    };
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", run.config.display())))?;
    // the training seed follows the experiment seed unless the file sets it
    let train_seed_set = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v.get("train").and_then(|t| t.get("seed")).cloned())
        .is_some();
    if !train_seed_set || run.seed.is_some() {
        cfg.train.seed = cfg.seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> lfis::Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> lfis::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_reports(dir: &Path, reports: &[RunReport]) -> lfis::Result<Summary> {
    let mut lines = String::new();
    for r in reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    write(&dir.join(REPORTS), &lines)?;
    let summary = aggregate(reports)?;
    let rows = std::slice::from_ref(&summary);
    write(&dir.join("summary.csv"), &summaries_csv(rows))?;
    let md = summaries_markdown(rows, None);
    write(&dir.join("summary.md"), &md)?;
    println!("{md}");
    Ok(summary)
}

fn run(command: Command) -> lfis::Result<()> {
    match command {
        Command::Train { run, max_epochs } => {
            let mut cfg = load_config(&run)?;
            if let Some(t) = run.steps {
                cfg.train.steps = t;
            }
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            cfg.validate()?;
            let dir = run.out.clone().unwrap_or_else(|| cfg.output.join(format!("{}-T{}", cfg.target.tag(), cfg.train.steps)));
            cmd_train(&cfg, &dir)
        }
        Command::Sample { checkpoint, samples, reps, seed, no_weights, samples_csv, out } => {
            let (model, manifest) = experiment::load_flow(&checkpoint)?;
            let mut cfg = manifest.config;
            if let Some(s) = seed.or(env_seed()?) {
                cfg.seed = s;
            }
            if let Some(s) = samples {
                cfg.sample.samples = s;
            }
            if let Some(r) = reps {
                cfg.sample.reps = r;
            }
            if no_weights {
                cfg.sample.weighted = false;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| checkpoint.join(if cfg.sample.weighted { "samples" } else { "samples-unweighted" }));
            cmd_sample(&cfg, &model, &dir, samples_csv)
        }
        Command::Smc { run, particles, reps } => {
            let mut cfg = load_config(&run)?;
            let mut smc = cfg.smc_config();
            if let Some(t) = run.steps {
                smc.steps = t;
            }
            if let Some(n) = particles {
                smc.particles = n;
            }
            cfg.smc = Some(smc);
            if let Some(r) = reps {
                cfg.sample.reps = r;
            }
            cfg.validate()?;
            let dir = run.out.clone().unwrap_or_else(|| cfg.output.join(format!("{}-smc-T{}", cfg.target.tag(), smc.steps)));
            cmd_smc(&cfg, &dir)
        }
        Command::Compare { dirs, gold, out } => cmd_compare(&dirs, gold.as_deref(), out.as_deref()),
        Command::GenData(g) => gen_data(g),
    }
}

fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> lfis::Result<()> {
    let path = cfg.build_path()?;
    info!("training {} steps on {} (D = {})", cfg.train.steps, cfg.target.tag(), path.dim());
    let model = flow::train_flow(&path, &cfg.train)?;
    experiment::save_flow(dir, &model, cfg)?;
    write(&dir.join(RESOLVED), &cfg.to_json()?)?;
    let mut log = String::from("step,epochs,loss,criterion,converged,lr,pool_ess,mean\n");
    for (k, (m, mean)) in model.meta.iter().zip(&model.means).enumerate() {
        log.push_str(&format!("{k},{},{},{},{},{},{},{mean}\n", m.epochs, m.loss, m.criterion, m.converged, m.lr, m.pool_ess));
    }
    write(&dir.join("train_log.csv"), &log)?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_sample(cfg: &ExperimentConfig, model: &flow::FlowModel, dir: &Path, samples_csv: bool) -> lfis::Result<()> {
    let path = cfg.build_path()?;
    create_dir(dir)?;
    write(&dir.join(RESOLVED), &cfg.to_json()?)?;
    let mut reports = Vec::with_capacity(cfg.sample.reps);
    for rep in 0..cfg.sample.reps {
        let (report, out) = experiment::flow_report(cfg, &path, model, rep)?;
        info!("rep {rep}: log Z-hat {:.5}, ESS {:.4}", report.log_z_hat, report.ess);
        if rep == 0 && samples_csv {
            write_samples(&dir.join("samples.csv"), &out.x, out.weights.as_slice().expect("contiguous"))?;
        }
        reports.push(report);
    }
    write_reports(dir, &reports)?;
    Ok(())
}

fn write_samples(path: &Path, x: &ndarray::Array2<f64>, w: &[f64]) -> lfis::Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut f = std::io::BufWriter::new(file);
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).chain(["w".to_string()]).collect();
    let mut emit = |line: String| writeln!(f, "{line}").map_err(|e| Error::io(path, e));
    emit(header.join(","))?;
    for (row, wi) in x.rows().into_iter().zip(w) {
        let fields: Vec<String> = row.iter().chain(std::iter::once(wi)).map(f64::to_string).collect();
        emit(fields.join(","))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

fn cmd_smc(cfg: &ExperimentConfig, dir: &Path) -> lfis::Result<()> {
    let path = cfg.build_path()?;
    create_dir(dir)?;
    write(&dir.join(RESOLVED), &cfg.to_json()?)?;
    let mut reports = Vec::with_capacity(cfg.sample.reps);
    for rep in 0..cfg.sample.reps {
        let (report, out) = experiment::smc_report(cfg, &path, rep)?;
        info!(
            "rep {rep}: log Z {:.5}, {} resamples, acceptance {:.3}",
            report.log_z_hat, out.resamples, out.acceptance
        );
        reports.push(report);
    }
    write_reports(dir, &reports)?;
    Ok(())
}

fn read_reports(dir: &Path) -> lfis::Result<Vec<RunReport>> {
    let path = dir.join(REPORTS);
    if dir.is_dir() && !path.exists() {
        return Err(Error::Schema(format!("{} holds no {REPORTS}", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: RunReport = serde_json::from_str(line)
            .map_err(|e| Error::Schema(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        r.validate()?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::Schema(format!("{} holds no reports", path.display())));
    }
    Ok(out)
}

/// Flags each row whose estimate is more than three combined standard errors
/// from the gold row.
fn agreement_flags(rows: &[Summary], gold: &Summary) -> Vec<String> {
    rows.iter()
        .map(|s| {
            if std::ptr::eq(s, gold) {
                return "gold".into();
            }
            let se = combined_se(&s.log_z_hat, &gold.log_z_hat);
            let gap = (s.log_z_hat.mean - gold.log_z_hat.mean).abs();
            if gap <= 3.0 * se {
                "agrees".into()
            } else {
                format!("OFF ({gap:.4} > 3 SE = {:.4})", 3.0 * se)
            }
        })
        .collect()
}

fn cmd_compare(dirs: &[PathBuf], gold: Option<&Path>, out: Option<&Path>) -> lfis::Result<()> {
    let mut rows = Vec::with_capacity(dirs.len());
    for d in dirs {
        rows.push(aggregate(&read_reports(d)?)?);
    }
    let gold_row = match gold {
        Some(g) => {
            let s = aggregate(&read_reports(g)?)?;
            rows.push(s);
            Some(rows.len() - 1)
        }
        None => rows
            .iter()
            .enumerate()
            .filter(|(_, s)| s.method == "smc")
            .max_by_key(|(_, s)| s.steps)
            .map(|(i, _)| i),
    };
    if let Some(mixed) = rows.iter().find(|s| s.target != rows[0].target) {
        return Err(Error::Schema(format!(
            "refusing to compare different targets: `{}` and `{}`",
            rows[0].target, mixed.target
        )));
    }
    let flags = gold_row.map(|g| agreement_flags(&rows, &rows[g]));
    let md = summaries_markdown(&rows, flags.as_deref());
    println!("{md}");
    if let Some(o) = out {
        create_dir(o)?;
        write(&o.join("compare.md"), &md)?;
        write(&o.join("compare.csv"), &summaries_csv(&rows))?;
    }
    Ok(())
}

fn gen_data(g: GenData) -> lfis::Result<()> {
    match g {
        GenData::Lgcp { grid, seed, out } => {
            let spec = LgcpSpec { grid, ..Default::default() };
            LgcpCounts::synthetic(&spec, seed)?.save(&out)?;
        }
        GenData::Logistic { rows, features, seed, out } => {
            let (x, y) = LogisticData::synthetic_raw(rows, features, seed);
            LogisticData::write_csv(&out, &x, &y)?;
        }
        GenData::Oracle { dim, std, seed, out } => {
            let cfg = ExperimentConfig::new(TargetSpec::Gaussian { dim, std }, seed);
            write(&out, &cfg.to_json()?)?;
            let log_z = cfg.build_path()?.exact_log_z().expect("oracle normalizer is known");
            println!("log Z = {log_z}");
        }
    }
    Ok(())
}
