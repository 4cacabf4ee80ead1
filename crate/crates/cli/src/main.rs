use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backdrop_core::data::{load_cifar10, pgm, CifarSplit, Dataset};
use backdrop_core::gp::{desk_classes, make_gp_dataset, read_gptx, Composition, GpClassSpec};
use backdrop_core::gradcheck::{run_suite, TOLERANCE};
use backdrop_core::train::eval::{evaluate, EvalTask};
use backdrop_core::train::plot::{line_chart, series_from_csv};
use backdrop_core::train::{load_checkpoint, metrics_csv, train, LossKind, MetricsRecord, TrainConfig};
use backdrop_core::Error;
use clap::{Parser, Subcommand};

/// Backdrop gradient-masking experiments.
#[derive(Parser)]
#[command(name = "backdrop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a two-scale GP texture dataset (train.gptx, test.gptx).
    GenData {
        /// Classes as `small:large` correlation lengths, comma separated;
        /// labels follow the order given. Defaults to the 4-class desk grid.
        #[arg(long)]
        classes: Option<String>,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value = "convolve")]
        mode: Composition,
        #[arg(long, default_value_t = 1)]
        n_train: usize,
        #[arg(long, default_value_t = 25)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration value, e.g. `--set mask.p_l=0.94`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a GPTX file, CIFAR-10 directory or PGM
    /// image folder.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "xe")]
        task: Task,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        d: f64,
        /// Batch size for the batch-averaged distance metric.
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write 8-bit PGM previews of a GPTX file as `<out>/<label>/<index>.pgm`.
    ExportPgm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export at most this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Draw one metric of a metrics.csv as an SVG line chart.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "loss")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Task {
    Xe,
    Rank,
    Composite,
}

fn parse_classes(text: &str) -> Result<Vec<GpClassSpec>, Error> {
    text.split(',')
        .enumerate()
        .map(|(i, pair)| {
            let bad = || Error::Config(format!("class `{pair}` is not small:large"));
            let (s, l) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok(GpClassSpec {
                ell_small: s.parse().map_err(|_| bad())?,
                ell_large: l.parse().map_err(|_| bad())?,
                label: i as u16,
            })
        })
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_eval_data(path: &Path) -> Result<Dataset, Error> {
    if path.is_dir() {
        if path.join("test_batch.bin").exists() {
            load_cifar10(path, CifarSplit::Test)
        } else {
            pgm::read_image_folder(path)
        }
    } else {
        Dataset::load_gptx(path)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            classes,
            size,
            mode,
            n_train,
            n_test,
            seed,
            out,
        } => {
            let specs = match classes {
                Some(text) => parse_classes(&text)?,
                None => desk_classes(),
            };
            let (train, test) = make_gp_dataset(&specs, size, size, n_train, n_test, mode, seed, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::Train {
            config,
            overrides,
            out,
        } => {
            let mut cfg = TrainConfig::from_file(&config, &overrides)?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            if cfg.out_dir.is_none() {
                return Err(Error::Config("no output directory: pass --out or set out_dir".into()));
            }
            let run = train(&cfg)?;
            if let Some(last) = run.history.last() {
                for (name, v) in &last.test {
                    println!("test {name} = {v}");
                }
            }
        }
        Command::Eval {
            checkpoint,
            data,
            task,
            tau,
            d,
            batch_size,
            out,
        } => {
            let mut ckpt = load_checkpoint(&checkpoint, None)?;
            let ds = load_eval_data(&data)?;
            let loss = match task {
                Task::Xe => LossKind::Xe,
                Task::Rank => LossKind::Rank,
                Task::Composite => LossKind::Composite,
            };
            let gp_classes = (ds.n_classes == 4 && data.extension().is_some_and(|e| e == "gptx"))
                .then(desk_classes);
            let eval_task = EvalTask {
                loss,
                tau,
                d,
                gp_classes,
                batch_size,
                seed: 0,
            };
            let metrics = evaluate(&mut ckpt.model, &ds, &eval_task)?;
            for (name, v) in &metrics {
                println!("{name} = {v}");
            }
            if let Some(dir) = out {
                create_dir(&dir)?;
                let record = MetricsRecord {
                    epoch: 0,
                    train: Vec::new(),
                    test: metrics,
                    wall_seconds: 0.0,
                };
                write(&dir.join("metrics.csv"), metrics_csv(&[record]))?;
                let resolved = format!(
                    "checkpoint = {:?}\ndata = {:?}\ntask = {:?}\ntau = {tau:?}\nd = {d:?}\nbatch_size = {batch_size}\n",
                    checkpoint.display().to_string(),
                    data.display().to_string(),
                    format!("{loss:?}").to_lowercase(),
                );
                write(&dir.join("config.resolved"), resolved)?;
            }
        }
        Command::Gradcheck { seed } => {
            let results = run_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<12} #{}  max rel err {:.3e}  {status}", r.op, r.instance, r.max_rel_error);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::Training(format!(
                    "{failed} gradient checks exceeded tolerance {TOLERANCE:e}"
                )));
            }
            println!("all {} gradient checks passed", results.len());
        }
        Command::ExportPgm { data, out, limit } => {
            let file = read_gptx(&data)?;
            let (h, w) = (file.height as usize, file.width as usize);
            let mut counters = vec![0usize; file.n_classes as usize];
            for rec in file.records.iter().take(limit.unwrap_or(usize::MAX)) {
                let dir = out.join(rec.label.to_string());
                create_dir(&dir)?;
                let idx = &mut counters[rec.label as usize];
                let px: Vec<f64> = rec.pixels.iter().map(|&v| v as f64).collect();
                write(&dir.join(format!("{idx:04}.pgm")), pgm::encode(&px, h, w, -3.0, 3.0)?)?;
                *idx += 1;
            }
            println!("wrote {} images under {}", counters.iter().sum::<usize>(), out.display());
        }
        Command::Plot { metrics, metric, out } => {
            let text = std::fs::read_to_string(&metrics).map_err(|e| Error::Io {
                path: metrics.clone(),
                source: e,
            })?;
            let series = series_from_csv(&text, &metric)?;
            write(&out, line_chart(&metric, "epoch", &metric, &series)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
