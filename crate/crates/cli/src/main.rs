use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prioheap::config::RunConfig;
use prioheap::experiment::{self, ExperimentError, Outcome};
use prioheap::report;
use prioheap::workload::{generate_trace, write_trace, TraceSpec};

const SEED_ENV: &str = "PRIOHEAP_SEED";

#[derive(Parser)]
#[command(name = "prioheap", version, about = "Managed-heap cache simulator")]
struct Cli {
    /// Print the default run configuration and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trace file.
    GenTrace {
        #[arg(long, default_value_t = TraceSpec::default().unique_keys)]
        keys: u64,
        #[arg(long, default_value_t = TraceSpec::default().min_value)]
        min: u64,
        #[arg(long, default_value_t = TraceSpec::default().max_value)]
        max: u64,
        #[arg(long, default_value_t = TraceSpec::default().size_alpha)]
        alpha_size: f64,
        #[arg(long, default_value_t = TraceSpec::default().request_alpha)]
        alpha_req: f64,
        #[arg(long, default_value_t = TraceSpec::default().length)]
        length: u64,
        /// Defaults to $PRIOHEAP_SEED, then 42.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and append its rows to a CSV report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-collection statistics here.
        #[arg(long)]
        collections: Option<PathBuf>,
    },
    /// Run a config once per parameter value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of max-entries, max-weight, heap-fraction, free-fraction,
        /// fixed-bytes, reserve-bytes.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Io(String),
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(s) = env_seed()? {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn exp_err(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Trace(prioheap::workload::TraceError::Io(io)) => Failure::Usage(io.to_string()),
        other => Failure::Usage(other.to_string()),
    }
}

fn series_path(out: &Path) -> PathBuf {
    out.with_extension("gcseries.csv")
}

fn write_outcome(out: &Path, o: &Outcome) -> Result<(), Failure> {
    report::append_rows(out, &o.rows).map_err(|e| Failure::Io(e.to_string()))?;
    if let Some(series) = &o.gc_series {
        report::write_gc_series(&series_path(out), series).map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<bool, Failure> {
    match cmd {
        Cmd::GenTrace {
            keys,
            min,
            max,
            alpha_size,
            alpha_req,
            length,
            seed,
            out,
        } => {
            let spec = TraceSpec {
                unique_keys: keys,
                min_value: min,
                max_value: max,
                size_alpha: alpha_size,
                request_alpha: alpha_req,
                length,
                seed: match seed {
                    Some(s) => s,
                    None => env_seed()?.unwrap_or(TraceSpec::default().seed),
                },
            };
            let trace = generate_trace(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            write_trace(&out, &trace).map_err(|e| Failure::Io(e.to_string()))?;
            let distinct: std::collections::HashSet<&str> = trace.iter().map(|e| e.key.as_str()).collect();
            let lo = trace.iter().map(|e| e.bytes).min().unwrap_or(0);
            let hi = trace.iter().map(|e| e.bytes).max().unwrap_or(0);
            println!(
                "wrote {} requests over {} keys ({} distinct), {}..{} bytes, to {}",
                trace.len(),
                keys,
                distinct.len(),
                lo,
                hi,
                out.display()
            );
            Ok(false)
        }
        Cmd::Run {
            config,
            out,
            collections,
        } => {
            let cfg = load_config(&config)?;
            let o = experiment::run(&cfg).map_err(exp_err)?;
            write_outcome(&out, &o)?;
            if let Some(p) = collections {
                let text = report::collections_csv(&o.collections).map_err(|e| Failure::Io(e.to_string()))?;
                std::fs::write(&p, text).map_err(|e| Failure::Io(e.to_string()))?;
            }
            for r in &o.rows {
                println!(
                    "{} {} {}: {} hits, {} misses, {} collections{}",
                    r.config_id,
                    r.policy,
                    r.bound,
                    r.hits,
                    r.misses,
                    r.gc_count,
                    if r.crashed { ", crashed" } else { "" }
                );
            }
            Ok(o.crashed())
        }
        Cmd::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            let outs = experiment::sweep(&cfg, &param, &values).map_err(exp_err)?;
            let mut crashed = false;
            for o in &outs {
                report::append_rows(&out, &o.rows).map_err(|e| Failure::Io(e.to_string()))?;
                crashed |= o.crashed();
            }
            println!("{} runs appended to {}", outs.len(), out.display());
            Ok(crashed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        print!("{}", RunConfig::defaults_toml());
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.cmd else {
        eprintln!("prioheap: no command given; try --help");
        return ExitCode::from(2);
    };
    match run(cmd) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(Failure::Usage(m)) => {
            eprintln!("prioheap: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("prioheap: {m}");
            ExitCode::from(1)
        }
    }
}
