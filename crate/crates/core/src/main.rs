use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use perfl::data::{parse_libsvm, split, SplitMode};
use perfl::harness::{certify_lowerbound, gen_quadratic, run_experiment, CertifySpec, ExperimentConfig, KeyValues};

#[derive(Parser)]
#[command(name = "perfl", about = "Personalized federated learning solvers and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the methods of an experiment config and write CSV traces.
    Run { config: PathBuf },
    /// Run methods on the lower-bound instance and check the certificate.
    CertifyLb {
        /// key = value file; `key=value,...` inline is also accepted
        spec: String,
    },
    /// Split a LIBSVM file among clients and print the manifest.
    Split {
        data: PathBuf,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value = "homogeneous")]
        mode: SplitMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a random quadratic instance file.
    GenQuadratic {
        /// key = value file; `key=value,...` inline is also accepted
        spec: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn key_values(spec: &str) -> anyhow::Result<KeyValues> {
    let path = Path::new(spec);
    Ok(if path.is_file() { KeyValues::read(path)? } else { KeyValues::parse_inline(spec)? })
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PERFL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PERFL_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::read(&config)?;
            let report = run_experiment(&cfg)?;
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            let mut out = std::io::stdout().lock();
            report.write_summary(&mut out)?;
            Ok(true)
        }
        Command::CertifyLb { spec } => {
            let spec = CertifySpec::from_key_values(key_values(&spec)?)?;
            let report = certify_lowerbound(&spec)?;
            let inst = &report.instance;
            println!(
                "instance n={} d={} mu={} L={} lambda={} c={} gamma={} bound={} geometric_check={:.2e}",
                inst.n,
                inst.dim(),
                inst.mu,
                inst.smoothness,
                inst.lambda,
                inst.c,
                inst.gamma,
                inst.rate_bound(),
                report.gamma_check
            );
            for w in &inst.warnings {
                println!("warning: {w}");
            }
            for (method, cert) in &report.certificates {
                for r in &cert.rows {
                    let ok = r.bound_ok && r.support_ok;
                    println!(
                        "{method} k={} comm={} ratio={:.6e} bound={:.6e} measured/bound={:.4} support={}/{} {}",
                        r.k,
                        r.comm_rounds,
                        r.dist_ratio,
                        r.bound,
                        if r.bound > 0.0 { r.dist_ratio / r.bound } else { f64::INFINITY },
                        r.support,
                        r.comm_rounds + 1,
                        if ok { "PASS" } else { "FAIL" }
                    );
                }
                println!("{method}: {}", if cert.passed() { "PASS" } else { "FAIL" });
            }
            Ok(report.passed())
        }
        Command::Split { data, clients, mode, seed, output } => {
            let file = fs::File::open(&data).with_context(|| format!("cannot open {}", data.display()))?;
            let ds = parse_libsvm(BufReader::new(file))?;
            let s = split(&ds, clients, mode, seed)?;
            if s.dropped > 0 {
                eprintln!("note: dropped {} remainder rows; each client holds {}", s.dropped, s.m);
            }
            match output {
                Some(p) => s.write_manifest(fs::File::create(p)?)?,
                None => s.write_manifest(std::io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::GenQuadratic { spec, output } => {
            let inst = gen_quadratic(key_values(&spec)?)?;
            match output {
                Some(p) => inst.write(&p)?,
                None => {
                    let mut out = std::io::stdout().lock();
                    writeln!(out, "{}", serde_json::to_string_pretty(&inst)?)?;
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<perfl::Error>(), Some(perfl::Error::Config(_))) {
                return ExitCode::from(2);
            }
            ExitCode::from(1)
        }
    }
}
