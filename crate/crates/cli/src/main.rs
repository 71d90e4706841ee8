//! `perturbrl` command-line front end.
//!
//! Besides the flags listed in `--help`, any `--section.key VALUE` (or
//! `--section.key=VALUE`) argument overrides that config key, and
//! `--set key=value` does the same for undotted keys.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use perturbrl::harness::config::KNOWN_KEYS;
use perturbrl::harness::persist::{write_ablation, write_curve};
use perturbrl::harness::{self, plot, ConfigMap, Diagnostic, EvalRecord, ExperimentConfig, Manifest, ResultSet};
use perturbrl::Error;

const SEED_ENV: &str = "PERTURBRL_SEED";

#[derive(Parser, Debug)]
#[command(name = "perturbrl", version, about = "Disturbance-injection robustness benchmark for RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every configured agent and seed; writes checkpoints and learning curves.
    Train(RunArgs),
    /// Evaluate saved checkpoints under the config's `eval.*` disturbance.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file, or a directory of `.ckpt` files. Repeatable.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Train, then evaluate across the `sweep.*` level grid.
    Sweep(RunArgs),
    /// Train one agent per `heatmap.train_levels` entry and test on every test level.
    Heatmap(RunArgs),
    /// Run the ablation named by `ablate.kind`.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Print the variant columns and test-condition rows without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Draw SVG charts (each with its CSV) from a results directory.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Defaults to the input directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config file and print the resolved values.
    ValidateConfig {
        /// Config file (same as --config).
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlotKind {
    Curve,
    Sweep,
    Heatmap,
}

/// Failure categories with stable exit codes.
#[derive(Debug)]
enum Failure {
    /// Exit 1: invalid config or a domain/runtime error.
    Invalid(String),
    /// Exit 2: malformed command line.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(m) => Failure::Usage(m),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn diagnostics(diags: &[Diagnostic]) -> Failure {
    let lines: Vec<String> = diags.iter().map(|d| format!("  {d}")).collect();
    Failure::Invalid(format!("invalid config:\n{}", lines.join("\n")))
}

/// Pulls `--a.b VALUE` / `--a.b=VALUE` pairs out of argv before clap sees it.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Failure> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(name) = a.strip_prefix("--").filter(|n| n.split('=').next().unwrap_or("").contains('.')) else {
            rest.push(a);
            continue;
        };
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Usage(format!("--{name} needs a value")))?;
                (name.to_string(), v)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn parse_set(items: &[String]) -> Result<Vec<(String, String)>, Failure> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{s}'")))
        })
        .collect()
}

fn load_map(path: &Path, overrides: &[(String, String)]) -> Result<ConfigMap, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut map = ConfigMap::parse(&text).map_err(|d| diagnostics(&d))?;
    for (k, v) in overrides {
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Failure::Usage(format!("unknown config key --{k}")));
        }
        map.set(k, v)?;
    }
    if map.get("seeds").is_none() {
        if let Ok(s) = env::var(SEED_ENV) {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))?;
            map.set("seeds", &seed.to_string())?;
        }
    }
    Ok(map)
}

fn resolve(run: &RunArgs, dotted: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let mut overrides = parse_set(&run.set)?;
    overrides.extend(dotted.iter().cloned());
    let map = load_map(&run.config, &overrides)?;
    let mut cfg = ExperimentConfig::from_map(&map).map_err(|d| diagnostics(&d))?;
    if let Some(s) = run.seed {
        cfg = cfg.with_seeds(vec![s])?;
    }
    if let Some(w) = run.workers {
        cfg = cfg.with_workers(w).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(o) = &run.output {
        cfg = cfg.with_output(&o.to_string_lossy());
    }
    Ok(cfg)
}

fn write_results(cfg: &ExperimentConfig, command: &str, records: Vec<EvalRecord>) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(&cfg.output);
    let set = ResultSet {
        manifest: Manifest::new(command, &cfg.fingerprint(), cfg.resolved()),
        records,
    };
    harness::persist(&set, &dir)?;
    print_records(&set.records);
    println!("wrote {} rows to {}", set.records.len(), dir.join(harness::persist::RESULTS_FILE).display());
    Ok(dir)
}

fn print_records(records: &[EvalRecord]) {
    println!(
        "{:<20} {:>6} {:>8} {:>10} {:>10} {:>8} {:>10} {:>8} {:>7}",
        "agent", "seed", "site", "kind", "train", "test", "return", "rmse", "status"
    );
    for r in records {
        println!(
            "{:<20} {:>6} {:>8} {:>10} {:>10} {:>8} {:>10.4} {:>8.4} {:>7}",
            r.agent,
            r.seed,
            r.site,
            r.kind,
            r.train_level,
            r.test_level,
            r.mean_return(),
            r.mean_rmse(),
            r.status
        );
    }
}

fn checkpoints(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(Failure::Invalid(format!("no .ckpt files in {}", p.display())));
            }
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn run(cli: Cli, dotted: Vec<(String, String)>) -> Result<(), Failure> {
    let no_dotted = |verb: &str| {
        if dotted.is_empty() {
            Ok(())
        } else {
            Err(Failure::Usage(format!("{verb} does not take config overrides")))
        }
    };
    match cli.command {
        Command::Train(args) => {
            let cfg = resolve(&args, &dotted)?;
            let report = harness::run_train(&cfg)?;
            let dir = write_results(&cfg, "train", report.records)?;
            for (agent, pts) in &report.curves {
                write_curve(&dir.join(format!("curve_{agent}.csv")), pts)?;
            }
            for r in &report.runs {
                match (&r.snapshot, &r.failure) {
                    (Some(s), _) => {
                        harness::save_checkpoint(s, &dir.join("checkpoints").join(harness::checkpoint_name(r.agent, r.seed)))?
                    }
                    (None, f) => eprintln!(
                        "{} seed {} failed: {}",
                        r.agent,
                        r.seed,
                        f.as_deref().unwrap_or("diverged")
                    ),
                }
            }
        }
        Command::Eval { run, checkpoint } => {
            let cfg = resolve(&run, &dotted)?;
            let policies = checkpoints(&checkpoint)?
                .iter()
                .map(|p| harness::load_checkpoint(p))
                .collect::<perturbrl::Result<Vec<_>>>()?;
            let records = harness::run_eval(&cfg, &policies)?;
            write_results(&cfg, "eval", records)?;
        }
        Command::Sweep(args) => {
            let cfg = resolve(&args, &dotted)?;
            let records = harness::run_sweep(&cfg)?;
            write_results(&cfg, "sweep", records)?;
        }
        Command::Heatmap(args) => {
            let cfg = resolve(&args, &dotted)?;
            let records = harness::run_heatmap(&cfg)?;
            write_results(&cfg, "heatmap", records)?;
        }
        Command::Ablate { run, dry_run } => {
            let cfg = resolve(&run, &dotted)?;
            let kind = cfg
                .ablation
                .ok_or_else(|| Failure::Invalid("ablate.kind: required for the ablate command".into()))?;
            if dry_run {
                println!("ablation {kind}");
                for v in harness::ablation_variants(kind, &cfg.agent) {
                    println!("variant {}", v.label);
                }
                for c in harness::ablation_conditions(&cfg.env) {
                    println!("condition {}", c.name);
                }
                return Ok(());
            }
            let report = harness::run_ablate(&cfg)?;
            let dir = write_results(&cfg, "ablate", report.records)?;
            let path = dir.join(format!("ablation_{kind}.csv"));
            write_ablation(&path, &report.table)?;
            println!("{:<18} {:<20} {:>16} {:>16}", "condition", "variant", "rmse", "return");
            for c in &report.table {
                println!(
                    "{:<18} {:<20} {:>7.3} +- {:<6.3} {:>7.3} +- {:<6.3}",
                    c.condition, c.variant, c.mean_rmse, c.std_rmse, c.mean_return, c.std_return
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Plot { input, kind, output } => {
            no_dotted("plot")?;
            let out = output.unwrap_or_else(|| input.clone());
            let files = match kind {
                PlotKind::Curve => plot::plot_curves(&input, &out)?,
                PlotKind::Sweep => plot::plot_sweep(&harness::load(&input)?.records, &out)?,
                PlotKind::Heatmap => plot::plot_heatmap(&harness::load(&input)?.records, &out)?,
            };
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::ValidateConfig { path, config, set } => {
            let path = path
                .or(config)
                .ok_or_else(|| Failure::Usage("validate-config needs a config path".into()))?;
            let mut overrides = parse_set(&set)?;
            overrides.extend(dotted);
            let map = load_map(&path, &overrides)?;
            let cfg = ExperimentConfig::from_map(&map).map_err(|d| diagnostics(&d))?;
            for (k, v) in cfg.resolved() {
                println!("{k} = {v}");
            }
            println!("fingerprint = {}", cfg.fingerprint());
            println!("{}: valid", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = env::args().collect();
    let (rest, dotted) = match split_overrides(argv) {
        Ok(v) => v,
        Err(Failure::Usage(m)) | Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
