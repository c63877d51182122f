use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eagcl::config::KeyValue;
use eagcl::dataio::{load_dataset, split_dataset, synthesize, write_dataset, Dataset, DatasetSplit, IdMaps, SynthConfig};
use eagcl::eval::{evaluate, PopularityBaseline};
use eagcl::model::{toy_config, toy_grad_check};
use eagcl::train::{ablate, default_variants, timing_study, variant_by_name, write_trace, Trainer};
use eagcl::{Checkpoint, Error, TrainConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "eagcl", version, about = "Cross-domain sequential recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// override a config key after the file is read (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as TSV
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset and write a checkpoint and loss trace
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
        /// hold out this share of the training split for early stopping
        #[arg(long)]
        validation: Option<f64>,
    },
    /// Evaluate the checkpoint of a training run on its test split
    Eval {
        /// directory written by `train`
        #[arg(long)]
        run: PathBuf,
    },
    /// Finite-difference check of the joint loss on the bundled toy batch
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation variant for each seed
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// variant names, comma separated; all six by default
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Per-epoch training time against training-set fraction
    Timing {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

fn load_config<C: KeyValue + Default>(args: &ConfigArgs) -> Result<C> {
    let mut cfg = C::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path).with_context(|| format!("reading config {}", path.display()))?;
    }
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn load_train_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let cfg: TrainConfig = load_config(args)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(dir: &Path, command: &str, seed: u64, extra: &[(&str, String)], config: &str) -> Result<()> {
    let mut text = format!("command = {command}\nversion = {}\nseed = {seed}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(dir.join("manifest.txt"), text)?;
    fs::write(dir.join("config.txt"), config)?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn load_data(path: &Path) -> Result<(Dataset, IdMaps)> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn gen_data(config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg: SynthConfig = load_config(config)?;
    let data = synthesize(&cfg)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(&data, &IdMaps::identity(&data), std::io::BufWriter::new(file))?;
    let manifest = out.with_extension("manifest.txt");
    let text = format!("command = gen-data\nversion = {}\nseed = {}\n{}", env!("CARGO_PKG_VERSION"), cfg.seed, cfg.to_kv_string());
    fs::write(&manifest, text)?;
    println!(
        "wrote {} sequences ({} A / {} B interactions) to {}",
        data.sequences.len(),
        data.interactions(eagcl::dataio::Domain::A),
        data.interactions(eagcl::dataio::Domain::B),
        out.display()
    );
    Ok(())
}

fn train(config: &ConfigArgs, data_path: &Path, out_dir: &Path, resume: Option<&Path>, validation: Option<f64>) -> Result<()> {
    let cfg = load_train_config(config)?;
    let (data, _) = load_data(data_path)?;
    let split = split_dataset(&data, cfg.train_fraction, cfg.seed)?;
    fs::create_dir_all(out_dir)?;
    let (train_set, valid_set) = match validation {
        Some(v) => {
            let inner = split_dataset(&split.train_dataset(), 1.0 - v, cfg.seed ^ 0x5eed)?;
            (inner.train, Some(inner.test))
        }
        None => (split.train.clone(), None),
    };
    let mut trainer = match resume {
        Some(path) => Trainer::from_checkpoint(cfg.clone(), Checkpoint::load(path)?)?,
        None => Trainer::for_split(cfg.clone(), &split)?,
    };
    let summary = match trainer.fit(&train_set, valid_set.as_deref()) {
        Err(Error::Diverged { epoch, batch, detail, dump }) => {
            let path = out_dir.join("diverged_batch.tsv");
            fs::write(&path, dump)?;
            return Err(Error::Diverged { epoch, batch, detail, dump: path.display().to_string() }.into());
        }
        other => other?,
    };
    trainer.checkpoint().save(out_dir.join("checkpoint.txt"))?;
    write_trace(&summary.trace, std::io::BufWriter::new(fs::File::create(out_dir.join("loss_trace.csv"))?))?;
    let mut extra = vec![("data", fs::canonicalize(data_path)?.display().to_string()), ("epochs_run", summary.epochs_run.to_string())];
    if let Some(v) = validation {
        extra.push(("validation", v.to_string()));
    }
    write_manifest(out_dir, "train", cfg.seed, &extra, &cfg.to_kv_string())?;
    println!(
        "trained {} epochs{}; artifacts in {}",
        summary.epochs_run,
        if summary.stopped_early { " (early stop)" } else { "" },
        out_dir.display()
    );
    Ok(())
}

fn run_split(run: &Path) -> Result<(TrainConfig, DatasetSplit)> {
    let manifest = read_manifest(run)?;
    let data = manifest
        .iter()
        .find(|(k, _)| k == "data")
        .map(|(_, v)| PathBuf::from(v))
        .ok_or_else(|| anyhow!("manifest in {} has no data entry", run.display()))?;
    let mut cfg = TrainConfig::default();
    cfg.apply_file(run.join("config.txt"))?;
    let (dataset, _) = load_data(&data)?;
    Ok((cfg.clone(), split_dataset(&dataset, cfg.train_fraction, cfg.seed)?))
}

fn eval(run: &Path) -> Result<()> {
    let (cfg, split) = run_split(run)?;
    let ck = Checkpoint::load(run.join("checkpoint.txt"))?;
    let report = evaluate(&ck.params, &cfg, &split.test)?;
    let baseline = PopularityBaseline::fit(&split.train, split.num_items_a, split.num_items_b)?.evaluate(&split.test, cfg.top_k)?;
    fs::write(run.join("metrics.csv"), report.to_csv())?;
    fs::write(run.join("metrics.txt"), report.to_table())?;
    fs::write(run.join("baseline.csv"), baseline.to_csv())?;
    print!("model\n{}\npopularity\n{}", report.to_table(), baseline.to_table());
    Ok(())
}

#[derive(Debug)]
struct GradCheckFailed(f64);

impl std::fmt::Display for GradCheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed: max relative error {:e}", self.0)
    }
}

impl std::error::Error for GradCheckFailed {}

fn gradcheck(config: &ConfigArgs, step: f64, tol: f64, out: Option<&Path>) -> Result<()> {
    let mut cfg = toy_config();
    if let Some(path) = &config.config {
        cfg.apply_file(path)?;
    }
    for kv in &config.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    let report = toy_grad_check(&cfg, cfg.seed, step, tol)?;
    let mut text = format!(
        "coordinates = {}\nmax_rel_error = {:e}\ntol = {:e}\nfailures = {}\n",
        report.coordinates,
        report.max_rel_error,
        report.tol,
        report.failures.len()
    );
    for (t, r, c, a, n) in &report.failures {
        text.push_str(&format!("tensor {t} [{r},{c}] analytic {a:e} numeric {n:e}\n"));
    }
    if let Some(out) = out {
        fs::write(out, &text)?;
    }
    print!("{text}");
    if !report.passed() {
        return Err(GradCheckFailed(report.max_rel_error).into());
    }
    Ok(())
}

fn ablate_cmd(config: &ConfigArgs, data_path: &Path, out_dir: &Path, seeds: &[u64], names: &[String]) -> Result<()> {
    let cfg = load_train_config(config)?;
    let variants = if names.is_empty() {
        default_variants()
    } else {
        names
            .iter()
            .map(|n| {
                variant_by_name(n.trim()).ok_or_else(|| {
                    let valid: Vec<_> = default_variants().iter().map(|v| v.name).collect();
                    anyhow!(Error::Config(format!("unknown variant `{n}`; valid variants: {}", valid.join(", "))))
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    if seeds.is_empty() {
        bail!(Error::Config("at least one seed is required".into()));
    }
    let (data, _) = load_data(data_path)?;
    fs::create_dir_all(out_dir)?;
    let report = ablate(&data, &cfg, &variants, seeds)?;
    fs::write(out_dir.join("ablation.csv"), report.to_csv())?;
    fs::write(out_dir.join("ablation.txt"), report.to_table())?;
    let seeds_str: Vec<String> = seeds.iter().map(u64::to_string).collect();
    write_manifest(
        out_dir,
        "ablate",
        cfg.seed,
        &[("data", fs::canonicalize(data_path)?.display().to_string()), ("seeds", seeds_str.join(","))],
        &cfg.to_kv_string(),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn timing_cmd(config: &ConfigArgs, data_path: &Path, out_dir: &Path, fractions: &[f64], repeats: usize) -> Result<()> {
    let cfg = load_train_config(config)?;
    let (data, _) = load_data(data_path)?;
    let split = split_dataset(&data, cfg.train_fraction, cfg.seed)?;
    fs::create_dir_all(out_dir)?;
    let report = timing_study(&split, &cfg, fractions, repeats)?;
    fs::write(out_dir.join("timing.csv"), report.to_csv())?;
    fs::write(out_dir.join("timing.txt"), report.to_table())?;
    write_manifest(
        out_dir,
        "timing",
        cfg.seed,
        &[("data", fs::canonicalize(data_path)?.display().to_string()), ("repeats", repeats.to_string())],
        &cfg.to_kv_string(),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<GradCheckFailed>().is_some() {
        return EXIT_NUMERIC;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_USAGE,
        Some(Error::NonFinite(_) | Error::Diverged { .. }) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenData { config, out } => gen_data(config, out),
        Command::Train { config, data, out_dir, resume, validation } => {
            train(config, data, out_dir, resume.as_deref(), *validation)
        }
        Command::Eval { run } => eval(run),
        Command::Gradcheck { config, step, tol, out } => gradcheck(config, *step, *tol, out.as_deref()),
        Command::Ablate { config, data, out_dir, seeds, variants } => ablate_cmd(config, data, out_dir, seeds, variants),
        Command::Timing { config, data, out_dir, fractions, repeats } => {
            timing_cmd(config, data, out_dir, fractions, *repeats)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
