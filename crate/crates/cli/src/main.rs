use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tpsml::bench::{make_synthetic, run_protocol, BenchMethod, Method, MethodKind, ScoreBoard, SplitPlan, SyntheticSpec};
use tpsml::persist::dataset::{read_dataset, read_table, write_dataset};
use tpsml::persist::{train_model, ModelFile, ModelKind, RunConfig, StoredModel};
use tpsml::Error;

mod plot;
mod table;

#[derive(Parser, Debug)]
#[command(name = "tpsml", version, about = "Thin-plate-spline metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `section.key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set tml_svm.c1=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it to a model file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["mmc", "tml-nn", "tml-svm", "ktml-svm"])]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict labels for every row of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-row predicted labels (CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated-split comparison of methods with t-test scoring.
    Bench {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true, value_parser = ["knn", "mmc", "tml-nn", "l-svm", "r-svm", "tml-svm", "ktml-svm"])]
        methods: Vec<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// CSV output of the score table.
        #[arg(long)]
        out_table: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long, default_value = "circles", value_parser = ["circles"])]
        generator: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw how a 2-D model deforms a coordinate grid, as SVG.
    PlotGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_svg: PathBuf,
        /// Grid lines per axis.
        #[arg(long, default_value_t = 11)]
        lines: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_training_failure() {
        3
    } else {
        2
    }
}

fn load_config(args: &ConfigArgs) -> tpsml::Result<RunConfig> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, found {o:?}")))?;
        c.set(k.trim(), v)?;
    }
    Ok(c)
}

fn train(data: &Path, method: &str, out: &Path, seed: Option<u64>, cfg: &ConfigArgs) -> tpsml::Result<()> {
    let mut config = load_config(cfg)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let kind = ModelKind::from_name(method).ok_or_else(|| Error::Config(format!("unknown method {method:?}")))?;
    let dataset = read_dataset(data)?;
    let (model, summary) = train_model(&dataset, kind, &config)?;
    model.save(out)?;
    println!("{}", summary.line());
    Ok(())
}

fn predict(model_path: &Path, data: &Path, out: Option<&Path>) -> tpsml::Result<()> {
    let model = ModelFile::load(model_path)?;
    let table = read_table(data)?;
    let dim = model.input_dim();
    let width = table.width();
    let labelled = match width {
        w if w == dim + 1 => true,
        w if w == dim => false,
        w => {
            return Err(Error::Shape(format!(
                "{} has {w} columns, model expects {dim} features (plus an optional label)",
                data.display()
            )))
        }
    };
    let x = table.features(dim)?;
    let predicted = model.predict_batch(&x)?;
    let names: Vec<&str> = predicted.iter().map(|&c| model.class_names[c].as_str()).collect();
    if let Some(path) = out {
        let mut text = String::from("predicted\n");
        for n in &names {
            text.push_str(n);
            text.push('\n');
        }
        std::fs::write(path, text)?;
    } else {
        for n in &names {
            println!("{n}");
        }
    }
    if labelled {
        let truth = table.label_column();
        let correct = names.iter().zip(&truth).filter(|(p, t)| *p == t).count();
        println!("accuracy={:.4} ({correct}/{})", correct as f64 / names.len() as f64, names.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    data: &[PathBuf],
    methods: &[String],
    runs: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out_table: Option<&Path>,
    cfg: &ConfigArgs,
) -> tpsml::Result<()> {
    let mut config = load_config(cfg)?;
    if let Some(r) = runs {
        config.bench_runs = r;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = threads {
        config.threads = t;
    }
    let grids = config.grids();
    let bench_methods: Vec<BenchMethod> = methods
        .iter()
        .map(|m| {
            let kind = MethodKind::from_name(m).ok_or_else(|| Error::Config(format!("unknown method {m:?}")))?;
            let mut b = BenchMethod::new(kind, grids.clone());
            b.tml_nn = config.tml_nn.clone();
            b.tml_svm = config.tml_svm.clone();
            b.mmc = config.mmc.clone();
            b.kpca_components = config.kpca_components;
            Ok(b)
        })
        .collect::<tpsml::Result<_>>()?;
    let refs: Vec<&dyn Method> = bench_methods.iter().map(|m| m as &dyn Method).collect();
    let mut plan = SplitPlan::new(config.bench_runs, config.seed);
    plan.folds = config.bench_folds;
    let mut boards: Vec<(String, ScoreBoard)> = Vec::new();
    for path in data {
        let dataset = read_dataset(path)?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        log::info!("{name}: {} rows, {} features, {} classes", dataset.len(), dataset.dim(), dataset.num_classes());
        boards.push((name, run_protocol(&dataset, &refs, &plan, config.threads)?));
    }
    print!("{}", table::render_text(&boards));
    let out = out_table.map(Path::to_path_buf).or_else(|| config.out_table.as_ref().map(PathBuf::from));
    if let Some(path) = out {
        std::fs::write(path, table::render_csv(&boards))?;
    }
    Ok(())
}

fn synth(generator: &str, n: usize, noise: f64, seed: u64, out: &Path) -> tpsml::Result<()> {
    let spec = match generator {
        "circles" => SyntheticSpec::circles(n, noise, seed),
        other => return Err(Error::Config(format!("unknown generator {other:?}"))),
    };
    let data = make_synthetic(&spec)?;
    write_dataset(&data, out)?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn plot_grid(model_path: &Path, out: &Path, lines: usize) -> tpsml::Result<()> {
    let model = ModelFile::load(model_path)?;
    if model.input_dim() != 2 {
        return Err(Error::Shape(format!(
            "grid plots need a 2-D model, this one has {} features",
            model.input_dim()
        )));
    }
    if matches!(model.model, StoredModel::KernelTmlSvm(_)) {
        return Err(Error::Shape("kernel models map into KPCA space, not the plane".into()));
    }
    std::fs::write(out, plot::render(&model, lines.max(2))?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            data,
            method,
            out,
            seed,
            cfg,
        } => train(data, method, out, *seed, cfg),
        Command::Predict { model, data, out } => predict(model, data, out.as_deref()),
        Command::Bench {
            data,
            methods,
            runs,
            seed,
            threads,
            out_table,
            cfg,
        } => bench(data, methods, *runs, *seed, *threads, out_table.as_deref(), cfg),
        Command::Synth {
            generator,
            n,
            noise,
            seed,
            out,
        } => synth(generator, *n, *noise, *seed, out),
        Command::PlotGrid { model, out_svg, lines } => plot_grid(model, out_svg, *lines),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
