//! `cemreg`: synthesize datasets, train the latent model, register pairs and
//! run benchmarks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use cemreg_core::config::{RunConfig, KEYS};
use cemreg_core::dataio::{
    derive_seed, load_checkpoint, load_cloud, read_dataset, save_checkpoint, write_atomic,
    write_dataset, write_xyz, CloudFormat, Dataset, TrainingMetadata,
};
use cemreg_core::geometry::apply_action;
use cemreg_core::harness::{
    emit_report, emit_sweep, evaluate_method, register_pair, render_sweep, render_table, sweep_cem,
    EvalSettings, Method, ReportFormat,
};
use cemreg_core::latentmodel::{generate_samples, train_with, DynamicModel};
use cemreg_core::{dataio::RegistrationPair, Error, Exec};

const ACTION_SAMPLE_STREAM: u64 = 0x4143_5453;

#[derive(Parser, Debug)]
#[command(
    name = "cemreg",
    version,
    about = "Rigid point-cloud registration by cross-entropy planning",
    after_help = "Any configuration key can be overridden with --<key> <value>, e.g. --cem.iterations 5.\n\
                  Run `cemreg keys` to list every key with its default."
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; 1 runs everything serially, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Shorthand for --data.pairs.
    #[arg(long, global = true)]
    pairs: Option<usize>,

    /// Shorthand for --train.epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of registration pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent dynamic model on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss csv; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_history: Option<PathBuf>,
    },
    /// Register one source cloud onto one target cloud.
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Model checkpoint, required by the latent oracle.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the aligned source cloud (xyz).
        #[arg(long)]
        emit_aligned: Option<PathBuf>,
        /// Write the result as json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a method (or sweep CEM settings) on a dataset split.
    Bench {
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint, required by latent-cem.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report path; the format follows the extension (.jsonl, .csv, otherwise text).
        #[arg(long)]
        out: PathBuf,
    },
    /// List configuration keys with their defaults.
    Keys,
}

/// Caller mistakes: bad flags, keys or missing inputs. Exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<Error>().is_some_and(Error::is_usage)
    })
}

/// Splits `--section.key value` / `--section.key=value` overrides out of argv.
fn extract_overrides(args: Vec<String>) -> anyhow::Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg
            .strip_prefix("--")
            .filter(|f| f.contains('.') && !f.starts_with('.'))
        else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = iter
                    .next()
                    .ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = cli.pairs {
        config.set("data.pairs", &p.to_string())?;
    }
    if let Some(e) = cli.epochs {
        config.set("train.epochs", &e.to_string())?;
    }
    for (key, value) in overrides {
        config
            .set(key, value)
            .map_err(|e| usage(format!("--{key}: {e}")))?;
    }
    config.validate()?;
    Ok(config)
}

fn setup_exec(threads: usize) -> anyhow::Result<Exec> {
    let exec = Exec::from_threads(threads);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting the worker pool")?;
    }
    Ok(exec)
}

fn config_comments(config: &RunConfig) -> Vec<String> {
    config.echo().lines().map(str::to_string).collect()
}

fn cmd_synth(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let synth = config.synth()?;
    let dataset = Dataset::generate(&synth)?;
    write_dataset(out, &dataset, &config.echo())?;
    println!(
        "wrote {} training and {} test pairs ({} points each) to {}",
        dataset.train.len(),
        dataset.test.len(),
        synth.points,
        out.display()
    );
    Ok(())
}

fn cmd_train(
    config: &RunConfig,
    exec: Exec,
    data: &Path,
    out: &Path,
    history: Option<&Path>,
) -> anyhow::Result<()> {
    let dataset = read_dataset(data)?;
    let limit = config.synth()?.train_pairs;
    let pairs: Vec<RegistrationPair> = Dataset::pairs(&dataset.train)
        .into_iter()
        .take(limit)
        .collect();
    if pairs.is_empty() {
        return Err(usage(format!("{} has no training pairs", data.display())));
    }
    let train = config.train(exec)?;
    let samples = generate_samples(
        &pairs,
        config.actions_per_pair()?,
        config.train_sigma()?,
        derive_seed(train.seed, ACTION_SAMPLE_STREAM, 0),
        exec,
    )?;
    let mut model = DynamicModel::new(config.model(pairs[0].source.len())?, train.seed)?;
    eprintln!(
        "training on {} samples from {} pairs, {} parameters",
        samples.len(),
        pairs.len(),
        model.param_count()
    );
    let history_losses = train_with(&mut model, &samples, &train, |epoch, l| {
        eprintln!(
            "epoch {:>4}  rec {:.6}  trans {:.6}  eval {:.6}  total {:.6}",
            epoch + 1,
            l.rec,
            l.trans,
            l.eval,
            l.total()
        );
    })?;
    let metadata = TrainingMetadata {
        seed: train.seed,
        epochs: u32::try_from(train.epochs).context("epoch count")?,
        loss_history: history_losses.clone(),
        config_echo: config.echo(),
    };
    save_checkpoint(out, &model, &metadata)?;
    let history_path = history.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_atomic(&history_path, |w| {
        for line in config.echo().lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "epoch,rec,trans,eval,total")?;
        for (i, l) in history_losses.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                l.rec,
                l.trans,
                l.eval,
                l.total()
            )?;
        }
        Ok(())
    })?;
    match history_losses.last() {
        Some(l) => println!(
            "final losses: rec {:.6} trans {:.6} eval {:.6} total {:.6}",
            l.rec,
            l.trans,
            l.eval,
            l.total()
        ),
        None => println!("no epochs run; wrote the initialized model"),
    }
    println!(
        "checkpoint: {}\nloss history: {}",
        out.display(),
        history_path.display()
    );
    Ok(())
}

fn load_model(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    method: Method,
) -> anyhow::Result<Option<DynamicModel>> {
    match (method, checkpoint) {
        (Method::LatentCem, None) => Err(usage("the latent oracle needs --checkpoint")),
        (Method::LatentCem, Some(path)) => {
            let expected = config.model(1)?.latent_dim;
            Ok(Some(load_checkpoint(path, Some(expected))?.model))
        }
        _ => Ok(None),
    }
}

fn settings(config: &RunConfig, exec: Exec) -> anyhow::Result<EvalSettings> {
    Ok(EvalSettings {
        cem: config.cem()?,
        icp: config.icp()?,
        random_spec: config.synth()?.pair,
        exec,
        timing: config.bench()?.timing,
        config_echo: config.echo(),
    })
}

fn cmd_register(
    config: &RunConfig,
    exec: Exec,
    source: &Path,
    target: &Path,
    checkpoint: Option<&Path>,
    aligned: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let method = config.oracle()?;
    let model = load_model(config, checkpoint, method)?;
    let pair = RegistrationPair {
        source: load_cloud(source, CloudFormat::from_path(source))?,
        target: load_cloud(target, CloudFormat::from_path(target))?,
        ground_truth: None,
    };
    let s = settings(config, exec)?;
    let action = register_pair(method, &pair, model.as_ref(), &s, s.cem.seed, exec)?;
    let a = action.to_array();
    println!(
        "e1 {} e2 {} e3 {} t1 {} t2 {} t3 {}",
        a[0], a[1], a[2], a[3], a[4], a[5]
    );
    if let Some(path) = aligned {
        write_xyz(
            path,
            &apply_action(&pair.source, &action),
            &config_comments(config),
        )?;
    }
    if let Some(path) = out {
        let record = serde_json::json!({
            "source": source.display().to_string(),
            "target": target.display().to_string(),
            "method": method.name(),
            "action": a,
            "config": config.echo(),
        });
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &record)?;
            writeln!(w)
        })?;
    }
    Ok(())
}

fn cmd_bench(
    config: &RunConfig,
    exec: Exec,
    data: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let bench = config.bench()?;
    let dataset = read_dataset(data)?;
    let entries = if bench.test_split {
        &dataset.test
    } else {
        &dataset.train
    };
    let mut pairs = Dataset::pairs(entries);
    if bench.max_pairs > 0 {
        pairs.truncate(bench.max_pairs);
    }
    if pairs.is_empty() {
        bail!(usage(format!(
            "{} has no pairs in the selected split",
            data.display()
        )));
    }
    let model = load_model(config, checkpoint, bench.method)?;
    let s = settings(config, exec)?;
    if bench.sweep_t.is_empty() {
        let report = evaluate_method(bench.method, &pairs, model.as_ref(), &s)?;
        emit_report(&report, out, ReportFormat::from_path(out))?;
        print!("{}", render_table(&report));
    } else {
        let grid = sweep_cem(
            bench.method,
            &pairs,
            model.as_ref(),
            &s,
            &bench.sweep_t,
            &bench.sweep_n,
        )?;
        emit_sweep(&grid, out)?;
        print!("{}", render_sweep(&grid));
    }
    println!("report: {}", out.display());
    Ok(())
}

fn run(args: Vec<String>) -> anyhow::Result<()> {
    let (args, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.to_string().trim_end().to_string())),
    };
    if let Command::Keys = cli.command {
        for (key, default, doc) in KEYS {
            println!("{key:<24} {default:<26} {doc}");
        }
        return Ok(());
    }
    let config = load_config(&cli, &overrides)?;
    let exec = setup_exec(cli.threads)?;
    match &cli.command {
        Command::Synth { out } => cmd_synth(&config, out),
        Command::Train {
            data,
            out,
            loss_history,
        } => cmd_train(&config, exec, data, out, loss_history.as_deref()),
        Command::Register {
            source,
            target,
            checkpoint,
            emit_aligned,
            out,
        } => cmd_register(
            &config,
            exec,
            source,
            target,
            checkpoint.as_deref(),
            emit_aligned.as_deref(),
            out.as_deref(),
        ),
        Command::Bench {
            data,
            checkpoint,
            out,
        } => cmd_bench(&config, exec, data, checkpoint.as_deref(), out),
        Command::Keys => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
