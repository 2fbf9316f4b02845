//! `anonbench` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonbench::cache::Cache;
use anonbench::dataset::{generate_synthetic, save_dataset, BitDepth, SyntheticSpec};
use anonbench::metrics::{TradeoffCurve, Variant};
use anonbench::pipeline::{parse_grid, Pipeline, RunConfig, VariantSelection};
use anonbench::report::{auc_csv, curve_csv, read_curve_csv, result_csv, tradeoff_svg, write_atomic};
use anonbench::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "anonbench",
    version,
    about = "Privacy/utility evaluation of face-image anonymizations"
)]
struct Cli {
    /// Artifact cache directory.
    #[arg(long, global = true, env = "ANONBENCH_CACHE", default_value = ".anonbench-cache")]
    cache_root: PathBuf,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `anonymization.params.kernel=9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    With,
    Without,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one anonymization; writes result.csv and result.json.
    Run(RunArgs),
    /// Evaluate a grid of anonymizations; writes curve CSVs, auc.csv and tradeoff.svg.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// JSON array of anonymization specs.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Render curve CSV files as an SVG trade-off plot.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        curves: Vec<PathBuf>,
        #[arg(long, default_value = "tradeoff.svg")]
        out: PathBuf,
    },
    /// Inspect or maintain the artifact cache.
    Cache {
        #[arg(value_enum)]
        action: CacheAction,
    },
    /// Write a synthetic dataset as a PNG directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_identities: usize,
        #[arg(long, default_value_t = 6)]
        samples_per_identity: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheAction {
    Stats,
    Clear,
    Verify,
}

/// Failure with its exit code.
enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let pairs = args
        .overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Failure::Config(format!("override {o:?} is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !pairs.is_empty() {
        cfg = cfg.with_overrides(&pairs).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.variant {
        cfg.variant = match v {
            VariantArg::With => VariantSelection::With,
            VariantArg::Without => VariantSelection::Without,
            VariantArg::Both => VariantSelection::Both,
        };
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Runtime(Error::Io {
            path: dir.into(),
            source: e,
        })
    })?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

fn json(v: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| Failure::Runtime(Error::Serialization(e.to_string())))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn pipeline(cli: &Cli) -> Result<Pipeline, Failure> {
    Ok(Pipeline::new(Cache::open(&cli.cache_root)?))
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let p = pipeline(cli)?;
    let result = p.run(&cfg).map_err(Failure::Runtime)?;
    let files = [
        ("result.csv", result_csv(&result)?.into_bytes()),
        ("result.json", json(&result)?),
    ];
    write_outputs(&args.out, &files)?;
    for v in &result.variants {
        println!(
            "{} {}: accuracy {:.4} ({}), privacy {:.4}, utility {:.4}",
            result.param_label, v.variant, v.best.accuracy, v.best.classifier, v.point.privacy, v.point.utility
        );
    }
    eprintln!("stages executed: {}", p.stage_executions());
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &RunArgs, grid_path: &Path) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let text = fs::read_to_string(grid_path).map_err(|e| Failure::Config(format!("{}: {e}", grid_path.display())))?;
    let grid = parse_grid(&text).map_err(|e| Failure::Config(format!("{}: {e}", grid_path.display())))?;
    let p = pipeline(cli)?;
    let sweep = p.sweep(&cfg, &grid).map_err(Failure::Runtime)?;
    let mut files = Vec::new();
    for &v in cfg.variant.variants() {
        let curves: Vec<&TradeoffCurve> = sweep.curves.iter().filter(|c| c.variant == v).collect();
        files.push((format!("curve_{}.csv", v.name()), curve_csv(curves)?.into_bytes()));
    }
    files.push(("auc.csv".into(), auc_csv(&sweep.aucs)?.into_bytes()));
    files.push(("tradeoff.svg".into(), tradeoff_svg(&sweep.curves).into_bytes()));
    files.push(("sweep.json".into(), json(&sweep)?));
    let named: Vec<(&str, Vec<u8>)> = files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
    write_outputs(&args.out, &named)?;
    for a in &sweep.aucs {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}: auc without {} with {} worst-case {}",
            a.method,
            fmt(a.auc_without_deanon),
            fmt(a.auc_with_deanon),
            fmt(a.worst_case)
        );
    }
    eprintln!("stages executed: {}", p.stage_executions());
    Ok(())
}

fn cmd_plot(curves: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let mut points = Vec::new();
    for p in curves {
        let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        points.extend(read_curve_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?);
    }
    let mut grouped: std::collections::BTreeMap<(String, Variant), Vec<_>> = Default::default();
    for p in points {
        grouped.entry((p.method.clone(), p.variant)).or_default().push(p);
    }
    // Chance level is not recoverable from the CSV; the plot does not need it.
    let curves = grouped
        .into_iter()
        .map(|((m, v), pts)| TradeoffCurve::new(m, v, pts, f64::NAN, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| {
            Failure::Runtime(Error::Io {
                path: dir.into(),
                source: e,
            })
        })?;
    }
    write_atomic(out, tradeoff_svg(&curves).as_bytes())?;
    Ok(())
}

fn cmd_cache(cli: &Cli, action: CacheAction) -> Result<(), Failure> {
    let cache = Cache::open(&cli.cache_root).map_err(Failure::Runtime)?;
    match action {
        CacheAction::Stats => {
            let s = cache.stats().map_err(Failure::Runtime)?;
            for (kind, k) in &s.kinds {
                println!("{kind}\t{} artifacts\t{} bytes", k.artifacts, k.bytes);
            }
            println!("total\t{} artifacts", s.total_artifacts());
            println!("quarantined\t{}", s.quarantined);
        }
        CacheAction::Clear => {
            cache.clear().map_err(Failure::Runtime)?;
            println!("cleared {}", cache.root().display());
        }
        CacheAction::Verify => {
            let r = cache.verify().map_err(Failure::Runtime)?;
            for (kind, key) in &r.quarantined {
                println!("quarantined {kind}/{key}");
            }
            println!("checked {} artifacts, quarantined {}", r.checked, r.quarantined.len());
        }
    }
    Ok(())
}

fn cmd_synth(out: &Path, spec: SyntheticSpec) -> Result<(), Failure> {
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let ds = generate_synthetic(&spec).map_err(Failure::Runtime)?;
    save_dataset(&ds, out, BitDepth::Eight).map_err(Failure::Runtime)?;
    println!(
        "wrote {} images to {} (fingerprint {})",
        ds.len(),
        out.display(),
        ds.fingerprint()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("--jobs: {e}")))?;
    }
    match &cli.command {
        Command::Run(args) => cmd_run(cli, args),
        Command::Sweep { run, grid } => cmd_sweep(cli, run, grid),
        Command::Plot { curves, out } => cmd_plot(curves, out),
        Command::Cache { action } => cmd_cache(cli, *action),
        Command::Synth {
            out,
            n_identities,
            samples_per_identity,
            width,
            height,
            sigma,
            seed,
        } => cmd_synth(
            out,
            SyntheticSpec {
                n_identities: *n_identities,
                samples_per_identity: *samples_per_identity,
                width: *width,
                height: *height,
                intra_noise_sigma: *sigma,
                seed: *seed,
            },
        ),
    }
}

fn print_chain(e: &Error) {
    let mut shown = e.to_string();
    eprintln!("error: {shown}");
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        // Wrapping errors already embed their source's message.
        let text = s.to_string();
        if !shown.contains(&text) {
            eprintln!("  caused by: {text}");
        }
        shown = text;
        src = s.source();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            print_chain(&e);
            ExitCode::from(2)
        }
    }
}
