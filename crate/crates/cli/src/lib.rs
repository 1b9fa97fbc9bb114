//! Pipeline driver behind the `ssmrul` binary.

pub mod config;
mod output;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ssmrul::data::{
    make_windows, parse_cmapss, synth_generate, write_cache, write_cmapss, write_rul_file,
    Normalizer, WindowCache,
};
use ssmrul::train::{
    combine_reports, evaluate, load_dataset, read_checkpoint, train_on, write_checkpoint,
    DataSource, QuantileEvalReport, TrainConfig, TrainError,
};

pub use config::{load_config, RunConfig};
pub use output::{emit_blob_data, emit_intervals, emit_table, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: no such file or directory")]
    MissingInput { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] ssmrul::data::DataError),
}

impl CliError {
    pub(crate) fn from_io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput {
                path: path.to_path_buf(),
            }
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Io { .. } => "io",
            CliError::Train(TrainError::Path { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                "missing_input"
            }
            CliError::Train(TrainError::Config(_)) => "config",
            CliError::Train(_) => "train",
            CliError::Data(_) => "data",
        }
    }

    /// One-line JSON diagnostic.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "ssmrul",
    version,
    about = "Quantile RUL estimation with state space models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML run config; defaults apply to anything it omits.
    #[arg(short = 'c', long = "config")]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `model.backbone=s4d`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window and normalize a C-MAPSS training file into a binary cache.
    Ingest {
        raw: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic fleet in C-MAPSS format plus a config that trains on it.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Train one model and write its checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Train and evaluate once per seed and average.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Summarize report directories into a per-quantile table and plot data.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(short = 'o', long = "output", default_value = ".")]
        output: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Report { .. } => "report",
        }
    }

    /// Directory the manifest goes to, and the manifest file name.
    fn manifest_target(&self) -> (PathBuf, String) {
        match self {
            Command::Ingest { output, .. } => {
                let dir = output.parent().map(Path::to_path_buf).unwrap_or_default();
                let name = output
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (dir, format!("{name}.manifest.json"))
            }
            Command::Synth { output, .. }
            | Command::Train { output, .. }
            | Command::Eval { output, .. }
            | Command::Sweep { output, .. }
            | Command::Report { output, .. } => (output.clone(), "manifest.json".into()),
        }
    }
}

/// Outcome of a successful command: artifacts relative to the manifest
/// directory, and the config that produced them.
struct Produced {
    artifacts: Vec<PathBuf>,
    config: Option<TrainConfig>,
}

/// Runs a parsed command and writes its manifest, on failure as well.
pub fn dispatch(cli: &Cli) -> Result<()> {
    let (dir, manifest_name) = cli.command.manifest_target();
    let result = run(&cli.command);
    let mut manifest = Manifest::new(cli.command.name());
    match &result {
        Ok(p) => {
            manifest.record(&dir, &p.artifacts)?;
            if let Some(c) = &p.config {
                manifest.config_digest = Some(c.digest());
                manifest.seed = Some(c.seed);
            }
        }
        Err(e) => manifest.fail(e),
    }
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|e| CliError::from_io(&dir, e))?;
    }
    manifest.write(&dir.join(manifest_name))?;
    result.map(|_| ())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::from_io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::from_io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::from_io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::from_io(path, e))
}

fn run(cmd: &Command) -> Result<Produced> {
    match cmd {
        Command::Ingest { raw, output, cfg } => {
            let rc = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let cycles = parse_cmapss(open(raw)?)?;
            let normalizer = Normalizer::fit(&cycles)?;
            let l = rc.config.model.window_len;
            let mut windows = Vec::new();
            for c in &cycles {
                windows.extend(make_windows(&normalizer.apply(c)?, l));
            }
            let cache = WindowCache {
                window_len: l,
                normalizer,
                windows,
            };
            let mut w = create(output)?;
            write_cache(&cache, &mut w)?;
            w.flush().map_err(|e| CliError::from_io(output, e))?;
            log::info!(
                "{} windows from {} units",
                cache.windows.len(),
                cycles.len()
            );
            Ok(Produced {
                artifacts: vec![PathBuf::from(output.file_name().unwrap_or_default())],
                config: Some(rc.config),
            })
        }
        Command::Synth { cfg, output } => {
            let rc = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let DataSource::Synth(spec) = &rc.config.data else {
                return Err(CliError::Config(
                    "synth needs data.source = \"synth\"".into(),
                ));
            };
            let data = synth_generate(spec)?;
            let names = ["train_SYNTH.txt", "test_SYNTH.txt", "RUL_SYNTH.txt"];
            let mut w = create(&output.join(names[0]))?;
            write_cmapss(&data.train, &mut w)?;
            w.flush().map_err(|e| CliError::from_io(output, e))?;
            let mut w = create(&output.join(names[1]))?;
            write_cmapss(&data.test, &mut w)?;
            w.flush().map_err(|e| CliError::from_io(output, e))?;
            let mut w = create(&output.join(names[2]))?;
            write_rul_file(&data.test, &mut w)?;
            w.flush().map_err(|e| CliError::from_io(output, e))?;
            let derived = TrainConfig {
                data: DataSource::Cmapss {
                    train: names[0].into(),
                    test: names[1].into(),
                    rul: names[2].into(),
                },
                ..rc.config.clone()
            };
            write_text(&output.join("config.toml"), &config::to_toml(&derived)?)?;
            let mut artifacts: Vec<PathBuf> = names.iter().map(PathBuf::from).collect();
            artifacts.push("config.toml".into());
            Ok(Produced {
                artifacts,
                config: Some(rc.config),
            })
        }
        Command::Train { cfg, output } => {
            let rc = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let data = load_dataset(&rc.resolved_data())?;
            let (ckpt, history) = train_on(&rc.config, &data)?;
            let mut w = create(&output.join("checkpoint.bin"))?;
            write_checkpoint(&ckpt, &mut w)?;
            w.flush().map_err(|e| CliError::from_io(output, e))?;
            write_text(
                &output.join("history.json"),
                &serde_json::to_string_pretty(&history).expect("history serializes"),
            )?;
            Ok(Produced {
                artifacts: vec!["checkpoint.bin".into(), "history.json".into()],
                config: Some(rc.config),
            })
        }
        Command::Eval {
            cfg,
            checkpoint,
            output,
        } => {
            let rc = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let ckpt = read_checkpoint(open(checkpoint)?)?;
            let data = load_dataset(&rc.resolved_data())?;
            let report = evaluate(&ckpt, &data.test, &rc.config.eval)?;
            let artifacts = write_report(output, &report)?;
            Ok(Produced {
                artifacts,
                config: Some(ckpt.config),
            })
        }
        Command::Sweep { cfg, seeds, output } => {
            let rc = load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let data = load_dataset(&rc.resolved_data())?;
            let mut reports = Vec::with_capacity(seeds.len());
            let mut artifacts = Vec::new();
            for &seed in seeds {
                let run = TrainConfig {
                    seed,
                    ..rc.config.clone()
                };
                let seeded = |e: TrainError| TrainError::Seed {
                    seed,
                    source: Box::new(e),
                };
                let (ckpt, _) = train_on(&run, &data).map_err(seeded)?;
                let report = evaluate(&ckpt, &data.test, &run.eval).map_err(seeded)?;
                let sub = PathBuf::from(format!("seed_{seed}"));
                let mut w = create(&output.join(&sub).join("checkpoint.bin"))?;
                write_checkpoint(&ckpt, &mut w)?;
                w.flush().map_err(|e| CliError::from_io(output, e))?;
                artifacts.push(sub.join("checkpoint.bin"));
                artifacts.extend(
                    write_report(&output.join(&sub), &report)?
                        .into_iter()
                        .map(|p| sub.join(p)),
                );
                log::info!("seed {seed}: median RMSE {:.3}", report.median_rmse());
                reports.push(report);
            }
            let combined = combine_reports(&reports)?;
            artifacts.extend(write_report(output, &combined)?);
            Ok(Produced {
                artifacts,
                config: Some(rc.config),
            })
        }
        Command::Report { dirs, output } => {
            let mut labelled = Vec::with_capacity(dirs.len());
            for d in dirs {
                let path = d.join("report.json");
                let text = fs::read_to_string(&path).map_err(|e| CliError::from_io(&path, e))?;
                let report: QuantileEvalReport = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let label = d
                    .canonicalize()
                    .ok()
                    .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                    .unwrap_or_else(|| report.model.clone());
                labelled.push((label, report));
            }
            let table = emit_table(&labelled);
            let reports: Vec<QuantileEvalReport> =
                labelled.iter().map(|(_, r)| r.clone()).collect();
            write_text(&output.join("table.csv"), &table)?;
            write_text(&output.join("blob.csv"), &emit_blob_data(&reports))?;
            let mut artifacts = vec![PathBuf::from("table.csv"), PathBuf::from("blob.csv")];
            for ((label, _), d) in labelled.iter().zip(dirs) {
                let src = d.join("intervals");
                let Ok(entries) = fs::read_dir(&src) else {
                    continue;
                };
                let mut names: Vec<_> = entries
                    .filter_map(|e| e.ok().map(|e| e.file_name()))
                    .collect();
                names.sort();
                for name in names {
                    let rel = PathBuf::from("intervals").join(label).join(&name);
                    let dst = output.join(&rel);
                    if let Some(p) = dst.parent() {
                        fs::create_dir_all(p).map_err(|e| CliError::from_io(p, e))?;
                    }
                    fs::copy(src.join(&name), &dst).map_err(|e| CliError::from_io(&dst, e))?;
                    artifacts.push(rel);
                }
            }
            print!("{}", output::render_table(&labelled));
            Ok(Produced {
                artifacts,
                config: None,
            })
        }
    }
}

/// Writes `report.json` and one interval CSV per test cycle under `dir`.
fn write_report(dir: &Path, report: &QuantileEvalReport) -> Result<Vec<PathBuf>> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(&dir.join("report.json"), &json)?;
    let mut artifacts = vec![PathBuf::from("report.json")];
    for sig in &report.signals {
        let rel = PathBuf::from("intervals").join(format!("unit_{:03}.csv", sig.unit_id));
        write_text(&dir.join(&rel), &emit_intervals(report, sig))?;
        artifacts.push(rel);
    }
    Ok(artifacts)
}
