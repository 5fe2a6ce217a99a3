use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use udadil::alignment::ClusterAssignment;
use udadil::benchmark::leave_one_out;
use udadil::config::RunConfig;
use udadil::io::{load_dataset, load_labels, save_dataset, save_labels, DataFormat};
use udadil::metrics::{evaluate, kmeans, EvalInput, KMeansConfig};
use udadil::pipeline::{infer, train, ClusterModel, DomainDataset};
use udadil::synth::{synth_generate, SyntheticSpec};

/// Unsupervised clustering across domain-shifted datasets.
#[derive(Parser)]
#[command(name = "udadil", version)]
struct Cli {
    /// Seed for every random choice; overrides seeds in config and spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the library's parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on two or more source domains.
    Train {
        #[arg(required = true, num_args = 2..)]
        sources: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_clusters: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-round log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        fmt: FormatArg,
    },
    /// Cluster an unseen domain with a trained model.
    Infer {
        target: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Labels file, one integer per line.
        #[arg(long, short)]
        out: PathBuf,
        /// Barycentric coordinates of the target, one weight per line.
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[command(flatten)]
        fmt: FormatArg,
    },
    /// Score label files against datasets carrying ground truth.
    Evaluate {
        /// Predicted labels; the i-th file is scored against the i-th --data.
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        fmt: FormatArg,
    },
    /// K-means labels for one dataset.
    BaselineKmeans {
        data: PathBuf,
        #[arg(long, short)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        fmt: FormatArg,
    },
    /// Write synthetic domains described by a spec file.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = FileKind::Csv)]
        output_format: FileKind,
    },
    /// Leave-one-domain-out comparison of this method against k-means.
    Benchmark {
        /// Synthetic spec file; ignored when --data is given.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Labeled domains to use instead of synthetic ones (at least three).
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_clusters: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        fmt: FormatArg,
    },
}

#[derive(Args)]
struct FormatArg {
    /// Input format; by default `.uddl`/`.bin` files are binary, others CSV.
    #[arg(long, value_enum)]
    format: Option<FileKind>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileKind {
    Csv,
    Binary,
}

impl FileKind {
    fn format(self) -> DataFormat {
        match self {
            FileKind::Csv => DataFormat::Csv,
            FileKind::Binary => DataFormat::Binary,
        }
    }
}

impl FormatArg {
    fn load(&self, path: &Path) -> udadil::Result<DomainDataset> {
        let format = self.format.map_or_else(|| DataFormat::from_path(path), FileKind::format);
        load_dataset(path, format)
    }
}

enum Failure {
    Usage(String),
    Data(udadil::Error),
}

impl From<udadil::Error> for Failure {
    fn from(e: udadil::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn run_config(cli: &Cli, path: Option<&Path>, n_clusters: Option<usize>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = n_clusters {
        cfg.n_clusters = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Train {
            sources,
            config,
            n_clusters,
            out,
            log,
            fmt,
        } => {
            let cfg = run_config(cli, config.as_deref(), *n_clusters)?;
            let data = sources.iter().map(|p| fmt.load(p)).collect::<udadil::Result<Vec<_>>>()?;
            // ground truth stays behind: only features reach training
            let features: Vec<_> = data.into_iter().map(|d| d.data).collect();
            let model = train(&features, &cfg.pipeline_config())?;
            model.save(out)?;
            let mut text = String::from("round,dictionary_loss,max_label_change,empty_clusters_refilled\n");
            for r in model.log() {
                let change = r.label_change.iter().copied().fold(0.0, f64::max);
                let _ = writeln!(text, "{},{},{},{}", r.round, r.dictionary_loss, change, r.empty_clusters_refilled);
            }
            match log {
                Some(p) => std::fs::write(p, text)?,
                None => eprint!("{text}"),
            }
            Ok(())
        }
        Command::Infer {
            target,
            model,
            out,
            alpha,
            fmt,
        } => {
            let model = ClusterModel::load(model)?;
            let target = fmt.load(target)?;
            let seed = cli.seed.unwrap_or(model.config().seed);
            let (labels, weights) = infer(&model, &target.data, seed)?;
            save_labels(out, labels.labels())?;
            let mut text = String::new();
            for w in weights.as_array() {
                let _ = writeln!(text, "{w}");
            }
            match alpha {
                Some(p) => std::fs::write(p, text)?,
                None => eprint!("alpha:\n{text}"),
            }
            Ok(())
        }
        Command::Evaluate { labels, data, out, fmt } => {
            if labels.len() != data.len() {
                return Err(Failure::Usage(format!(
                    "{} --labels files but {} --data files",
                    labels.len(),
                    data.len()
                )));
            }
            let datasets = data.iter().map(|p| fmt.load(p)).collect::<udadil::Result<Vec<_>>>()?;
            let predicted = labels
                .iter()
                .map(|p| load_labels(p).and_then(ClusterAssignment::from_labels))
                .collect::<udadil::Result<Vec<_>>>()?;
            let inputs: Vec<EvalInput> = datasets
                .iter()
                .zip(&predicted)
                .map(|(d, p)| EvalInput {
                    name: d.name(),
                    predicted: p,
                    truth: d.truth_labels.as_deref(),
                })
                .collect();
            let report = evaluate(&inputs)?;
            write_or_print(out.as_deref(), &report.to_csv())
        }
        Command::BaselineKmeans {
            data,
            k,
            restarts,
            out,
            fmt,
        } => {
            let d = fmt.load(data)?;
            let cfg = KMeansConfig {
                n_restarts: *restarts,
                ..KMeansConfig::new(*k, cli.seed.unwrap_or(0))
            };
            let result = kmeans(d.features().view(), &cfg)?;
            save_labels(out, result.assignment.labels())?;
            Ok(())
        }
        Command::Synth {
            spec,
            out_dir,
            output_format,
        } => {
            let spec = synth_spec(cli, spec.as_deref())?;
            std::fs::create_dir_all(out_dir)?;
            let ext = match output_format {
                FileKind::Csv => "csv",
                FileKind::Binary => "uddl",
            };
            for d in synth_generate(&spec)? {
                let path = out_dir.join(format!("{}.{ext}", d.name()));
                save_dataset(&path, &d, output_format.format())?;
            }
            Ok(())
        }
        Command::Benchmark {
            spec,
            data,
            config,
            n_clusters,
            out,
            fmt,
        } => {
            let domains = if data.is_empty() {
                let spec = synth_spec(cli, spec.as_deref())?;
                synth_generate(&spec)?
            } else {
                data.iter().map(|p| fmt.load(p)).collect::<udadil::Result<Vec<_>>>()?
            };
            if domains.len() < 3 {
                return Err(Failure::Usage(format!(
                    "benchmark needs at least three domains, got {}",
                    domains.len()
                )));
            }
            let k = match n_clusters {
                Some(k) => Some(*k),
                None if config.is_some() => None,
                None => domains[0]
                    .truth_labels
                    .as_ref()
                    .map(|t| t.iter().max().map_or(1, |m| m + 1)),
            };
            let cfg = run_config(cli, config.as_deref(), k)?;
            let report = leave_one_out(&domains, &cfg.pipeline_config())?;
            write_or_print(out.as_deref(), &report.to_csv())
        }
    }
}

fn synth_spec(cli: &Cli, path: Option<&Path>) -> Result<SyntheticSpec, Failure> {
    let mut spec = match path {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    Ok(spec)
}
