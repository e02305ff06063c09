use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use glimit_core::bench::{self, BenchmarkId, RunConfig, SweepAxis};
use glimit_core::{Error, Result};

const PARTIAL_SWEEP_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "glimit", version, about = "Learn G-limits of multiscale elliptic problems with PINNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the multiscale problem and write the sampled dataset.
    Generate(RunArgs),
    /// Compute the reference G-limit and homogenized solution.
    Reference(RunArgs),
    /// Train on the dataset in the run directory; evaluates if a reference exists.
    Train(RunArgs),
    /// Evaluate a trained model against the reference.
    Evaluate(RunArgs),
    /// One full run per value of an axis, aggregated into sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write tidy CSVs of learned and reference fields.
    ExportPlots(RunArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<BenchmarkId>,
    /// Run directory (default: $GLIMIT_OUTPUT_ROOT/<benchmark>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long)]
    n_colloc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lbfgs_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mesh_h: Option<f64>,
    #[arg(long)]
    eval_h: Option<f64>,
    /// Large meshes (2D data mesh h = 1/8000, eps = 2^-7).
    #[arg(long)]
    full_scale: bool,
    /// Worker threads for restarts.
    #[arg(long, env = "GLIMIT_THREADS")]
    threads: Option<usize>,
    /// Extra override `path.to.field=json`, e.g. `train.cycles=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn insert_path(root: &mut Map<String, Value>, key: &str, value: Value) {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            node.insert(p.to_string(), value);
            return;
        }
        let slot = node.entry(p.to_string()).or_insert_with(|| json!({}));
        if !slot.is_object() {
            *slot = json!({});
        }
        node = slot.as_object_mut().expect("object");
    }
}

impl RunArgs {
    fn overlay(&self) -> Result<Value> {
        let mut v = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => json!({}),
        };
        let m = v
            .as_object_mut()
            .ok_or_else(|| Error::Config("configuration must be a JSON object".into()))?;
        let mut put = |k: &str, val: Option<Value>| {
            if let Some(val) = val {
                insert_path(m, k, val);
            }
        };
        put("eps", self.eps.map(Value::from));
        put("noise", self.noise.map(Value::from));
        put("n_data", self.n_data.map(Value::from));
        put("n_colloc", self.n_colloc.map(Value::from));
        put("noise_seed", self.noise_seed.map(Value::from));
        put("mesh_h", self.mesh_h.map(Value::from));
        put("eval_h", self.eval_h.map(Value::from));
        put("train.seed", self.seed.map(Value::from));
        put("train.restarts", self.restarts.map(Value::from));
        put("train.epochs", self.epochs.map(Value::from));
        put("train.lbfgs_iters", self.lbfgs_iters.map(Value::from));
        put("train.lr", self.lr.map(Value::from));
        put("train.batch_size", self.batch_size.map(Value::from));
        put("train.threads", self.threads.map(Value::from));
        if self.full_scale {
            put("full_scale", Some(Value::Bool(true)));
        }
        for s in &self.sets {
            let (k, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {s:?} is not KEY=VALUE")))?;
            let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            insert_path(m, k, val);
        }
        Ok(v)
    }

    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::resolve(self.benchmark, &self.overlay()?)?;
        let dir = match (&self.out, &cfg.output_dir) {
            (Some(d), _) | (None, Some(d)) => d.clone(),
            (None, None) => {
                let root = std::env::var_os("GLIMIT_OUTPUT_ROOT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                root.join(cfg.benchmark.as_str())
            }
        };
        Ok((cfg, dir))
    }
}

fn print_report(r: &glimit_core::metrics::ErrorReport) {
    println!(
        "{}: e_A* = {:.4e}, e_u0 = {:.4e} (config {})",
        r.benchmark, r.e_glimit, r.e_solution, r.config_hash
    );
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate(a) => {
            let (cfg, dir) = a.resolve()?;
            let set = bench::generate(&cfg, &dir)?;
            println!("wrote {} samples to {}", set.len(), dir.join("data.csv").display());
        }
        Command::Reference(a) => {
            let (cfg, dir) = a.resolve()?;
            let r = bench::reference(&cfg, &dir)?;
            println!("reference ({}) written to {}", r.glimit.provenance.as_str(), dir.display());
        }
        Command::Train(a) => {
            let (cfg, dir) = a.resolve()?;
            let (outcome, report) = bench::train_run(&cfg, &dir)?;
            let best = outcome.best_summary();
            println!("best restart {} (seed {}), loss {:.4e}", outcome.best, best.seed, best.final_loss);
            if let Some(r) = report {
                print_report(&r);
            }
        }
        Command::Evaluate(a) => {
            let (cfg, dir) = a.resolve()?;
            print_report(&bench::evaluate(&cfg, &dir)?);
        }
        Command::Sweep { run, axis, values, jobs } => {
            let (cfg, dir) = run.resolve()?;
            let rows = bench::sweep(&cfg, axis, &values, &dir, jobs.max(1))?;
            println!("wrote {}", dir.join("sweep.csv").display());
            if rows.iter().any(|r| r.error.is_some()) {
                return Ok(PARTIAL_SWEEP_FAILURE);
            }
        }
        Command::ExportPlots(a) => {
            let (cfg, dir) = a.resolve()?;
            for p in bench::export_plots(&cfg, &dir)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
