use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use midorf::benchmark::{self, BenchmarkConfig};
use midorf::io::{self, ModelFile, PredictionLevel, PredictionRecord};
use midorf::learning::{TrainConfig, TrainTrace, DEFAULT_ALPHA_GRID};
use midorf::methods::{self, Method};
use midorf::metrics::{self, BagPrediction};
use midorf::synthgen::{self, GeneratorTruth, SynthConfig};
use midorf::{Error, Level, Result};

#[derive(Parser)]
#[command(name = "midorf", version, about = "Weakly-supervised ordinal sequence labelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark datasets.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON generator configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a model.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        train: PathBuf,
        /// Validation data, required for grid selection of alpha.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, conflicts_with = "alpha_grid")]
        alpha: Option<f64>,
        /// Comma-separated regularisation weights. Defaults to decades 1e-3..1e2.
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Number of ordinal levels; inferred from the labels if absent.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Predict bag and frame labels.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PredictionLevel::Both)]
        level: PredictionLevel,
    },
    /// Score a predictions file against labelled data.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Run every method over the synthetic suite and summarise.
    Benchmark {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only run the first N datasets.
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::InvalidInput(_) => 3,
        Error::Numerical(_) | Error::EnumerationTooLarge(_) | Error::UndefinedMetric(_) => 4,
        Error::Io { .. } | Error::Json { .. } => 5,
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("MIDORF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("MIDORF_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { out, seed, config } => generate(&out, seed, config.as_deref()),
        Command::Train {
            method,
            train,
            val,
            out,
            seed,
            alpha,
            alpha_grid,
            max_iterations,
            restarts,
            levels,
        } => {
            let mut config = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(n) = max_iterations {
                config.max_iterations = n;
            }
            if let Some(r) = restarts {
                config.restarts = r;
            }
            if let Some(grid) = alpha_grid {
                config.alpha_grid = grid;
            }
            train_cmd(method, &train, val.as_deref(), &out, alpha, levels, config)
        }
        Command::Predict {
            model,
            data,
            out,
            level,
        } => predict(&model, &data, &out, level),
        Command::Evaluate {
            pred,
            data,
            out,
            levels,
        } => evaluate(&pred, &data, &out, levels),
        Command::Benchmark {
            seed,
            out,
            methods,
            config,
            datasets,
            alpha_grid,
            max_iterations,
        } => {
            let mut synth = load_synth_config(config.as_deref(), seed)?;
            if let Some(n) = datasets {
                synth.num_datasets = synth.num_datasets.min(n);
            }
            let mut train = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(grid) = alpha_grid {
                train.alpha_grid = grid;
            }
            if let Some(n) = max_iterations {
                train.max_iterations = n;
            }
            let config = BenchmarkConfig {
                synth,
                train,
                methods: methods.unwrap_or_else(|| Method::ALL.to_vec()),
            };
            benchmark_cmd(&config, &out)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_synth_config(path: Option<&Path>, seed: u64) -> Result<SynthConfig> {
    let mut config: SynthConfig = match path {
        Some(p) => io::read_json(p)?,
        None => SynthConfig::default(),
    };
    config.seed = seed;
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct ManifestEntry {
    index: usize,
    train: String,
    test: String,
    val: String,
    truth: GeneratorTruth,
}

#[derive(Serialize)]
struct Manifest {
    config: SynthConfig,
    datasets: Vec<ManifestEntry>,
}

fn generate(out: &Path, seed: u64, config: Option<&Path>) -> Result<()> {
    let config = load_synth_config(config, seed)?;
    create_dir(out)?;
    let mut datasets = Vec::with_capacity(config.num_datasets);
    for index in 0..config.num_datasets {
        let ds = synthgen::generate_dataset(&config, index)?;
        let rel = format!("dataset_{index:02}");
        create_dir(&out.join(&rel))?;
        let mut names = Vec::new();
        for (split, data) in [("train", &ds.train), ("test", &ds.test), ("val", &ds.val)] {
            let name = format!("{rel}/{split}.jsonl");
            io::write_dataset(&out.join(&name), data)?;
            names.push(name);
        }
        let [train, test, val]: [String; 3] = names.try_into().expect("three splits");
        datasets.push(ManifestEntry {
            index,
            train,
            test,
            val,
            truth: ds.truth,
        });
    }
    let n = datasets.len();
    io::write_json(&out.join("manifest.json"), &Manifest { config, datasets })?;
    println!("wrote {n} datasets to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSidecar<'a> {
    method: Method,
    alpha: f64,
    trace: &'a TrainTrace,
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".trace.json");
    model.with_file_name(name)
}

fn train_cmd(
    method: Method,
    train: &Path,
    val: Option<&Path>,
    out: &Path,
    alpha: Option<f64>,
    levels: Option<usize>,
    mut config: TrainConfig,
) -> Result<()> {
    let train_set = io::read_dataset(train, levels)?;
    let (alpha, model, trace) = match alpha {
        Some(a) => {
            config.alpha = a;
            config.validate()?;
            let (model, trace) = methods::train(method, &train_set.training_view()?, &config)?;
            (a, model, trace)
        }
        None => {
            let val = val.ok_or_else(|| Error::InvalidInput("--val is required unless --alpha is given".into()))?;
            if config.alpha_grid.is_empty() {
                config.alpha_grid = DEFAULT_ALPHA_GRID.to_vec();
            }
            config.validate()?;
            let val_set = io::read_dataset(val, Some(train_set.num_levels()))?;
            if val_set.feature_dim != train_set.feature_dim {
                return Err(Error::InvalidInput(format!(
                    "validation features have dimension {} but training features {}",
                    val_set.feature_dim, train_set.feature_dim
                )));
            }
            let sel = methods::train_with_selection(method, &train_set, &val_set, &config)?;
            (sel.alpha, sel.model, sel.trace)
        }
    };
    let file = ModelFile::new(&model, train_set.feature_dim, config.seed, alpha, &trace);
    io::save_model(out, &file)?;
    io::write_json(
        &sidecar_path(out),
        &TrainSidecar {
            method,
            alpha,
            trace: &trace,
        },
    )?;
    println!(
        "{} alpha={alpha} iterations={} converged={} objective={:.6}",
        method.display_name(),
        trace.iterations,
        trace.converged,
        trace.final_objective()
    );
    Ok(())
}

fn predict(model_path: &Path, data: &Path, out: &Path, level: PredictionLevel) -> Result<()> {
    let file = io::load_model(model_path)?;
    let model = file.model()?;
    let dataset = io::read_dataset(data, Some(file.scale))?;
    if dataset.feature_dim != file.feature_dim {
        return Err(Error::InvalidInput(format!(
            "data has feature dimension {} but the model expects {}",
            dataset.feature_dim, file.feature_dim
        )));
    }
    let preds = model.predict_dataset(&dataset);
    io::write_jsonl(
        out,
        dataset
            .bags
            .iter()
            .zip(&preds)
            .map(|(b, p)| PredictionRecord::new(&b.id, p, level)),
    )
}

fn evaluate(pred: &Path, data: &Path, out: &Path, levels: Option<usize>) -> Result<()> {
    let dataset = io::read_dataset(data, levels)?;
    let records: Vec<PredictionRecord> = io::read_jsonl(pred)?;
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(records.len());
    for r in &records {
        if by_id.insert(&r.id, r).is_some() {
            return Err(Error::InvalidInput(format!("duplicate prediction for bag '{}'", r.id)));
        }
    }
    let big_l = dataset.num_levels();
    let to_level = |id: &str, v: usize| {
        if v < big_l {
            Ok(Level::from_index(v))
        } else {
            Err(Error::InvalidInput(format!(
                "bag '{id}': predicted label {v} outside 0..{big_l}"
            )))
        }
    };
    let mut preds = Vec::with_capacity(dataset.bags.len());
    for bag in &dataset.bags {
        let r = by_id
            .get(bag.id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for bag '{}'", bag.id)))?;
        let missing = |field: &str| {
            Error::InvalidInput(format!(
                "prediction for bag '{}' has no {field}; predict with --level both",
                bag.id
            ))
        };
        let bag_pred = r.bag_pred.ok_or_else(|| missing("bag_pred"))?;
        let frames = r.frame_preds.as_ref().ok_or_else(|| missing("frame_preds"))?;
        preds.push(BagPrediction {
            bag: to_level(&bag.id, bag_pred)?,
            frames: frames.iter().map(|&f| to_level(&bag.id, f)).collect::<Result<_>>()?,
        });
    }
    let report = metrics::evaluate(&preds, &dataset)?;
    io::write_json(out, &report)?;
    print!("{}", benchmark::render_report(&report));
    Ok(())
}

fn benchmark_cmd(config: &BenchmarkConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    io::write_json(&out.join("config.json"), config)?;
    let results = benchmark::run_benchmark(config, |ds, result| {
        let path = out.join(format!("dataset_{:02}.json", ds.index));
        io::write_json(&path, result)?;
        for run in &result.runs {
            match (&run.report, &run.error) {
                (Some(r), _) => eprintln!(
                    "dataset {:02} {:<8} alpha={:<6} frame ICC {} seq ACC {:.3} ({:.1}s)",
                    ds.index,
                    run.method.display_name(),
                    run.alpha.map_or("-".into(), |a| a.to_string()),
                    r.frame
                        .as_ref()
                        .and_then(|f| f.icc)
                        .map_or("-".into(), |v| format!("{v:.3}")),
                    r.sequence.acc,
                    run.train_secs
                ),
                (None, e) => eprintln!(
                    "dataset {:02} {:<8} FAILED: {}",
                    ds.index,
                    run.method.display_name(),
                    e.as_deref().unwrap_or("unknown")
                ),
            }
        }
        Ok(())
    })?;
    let rows = benchmark::summarize(&results, &config.methods);
    io::write_json(&out.join("summary.json"), &rows)?;
    let table = benchmark::render_summary(&rows);
    let txt = out.join("summary.txt");
    std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    print!("{table}");
    Ok(())
}
