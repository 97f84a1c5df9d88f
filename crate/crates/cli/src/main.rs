mod artifacts;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_stackelberg::config::{bundled, ScenarioFile};
use adaptive_stackelberg::oracles::{ddos_grid_stackelberg, GridSpec};
use adaptive_stackelberg::verify::{verify, VerifyOptions};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

/// Adaptive Stackelberg learning on the link-flooding game.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a config path or a bundled name).
    Run {
        config: String,
        /// Overrides sim.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root.
        #[arg(long, env = "STACKELBERG_OUTPUT_ROOT", default_value = "output")]
        out: PathBuf,
    },
    /// Run every config matching a glob, concurrently.
    Sweep {
        pattern: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "STACKELBERG_OUTPUT_ROOT", default_value = "output")]
        out: PathBuf,
    },
    /// Check invariants: "all", one property, or one scenario.
    Verify {
        #[arg(default_value = "all")]
        target: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Reverse the estimator vector field (mutation fixture).
        #[arg(long)]
        flip_sign: bool,
    },
    /// Grid search for the Stackelberg action of each attacker phase.
    Oracle {
        config: String,
        #[arg(long, default_value_t = 201)]
        resolution: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
}

/// Like `println!`, but a closed stdout (e.g. piping into `head`) is not an error.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn load(config: &str) -> Result<(String, ScenarioFile)> {
    let path = Path::new(config);
    if path.exists() {
        let name = path.file_stem().map_or(config.to_string(), |s| s.to_string_lossy().into_owned());
        let file = ScenarioFile::load(path).with_context(|| format!("invalid config {}", path.display()))?;
        return Ok((name, file));
    }
    match bundled(config) {
        Some(text) => Ok((config.to_string(), ScenarioFile::parse(text)?)),
        None => bail!("no config file or bundled scenario named {config:?}"),
    }
}

fn print_outcome(name: &str, out: &artifacts::RunOutcome) {
    let s = &out.summary;
    let f = &s.final_state;
    out!(
        "{name}: {} records, settled at {}, final r = {:?}, J = {}, J_hat = {}, ‖e_obs‖ = {:.3e}",
        s.records,
        s.settling_time.map_or("never".into(), |t| t.to_string()),
        f.r,
        f.j,
        f.j_hat,
        f.e_norm
    );
    for c in &s.checks {
        out!("  {:?} {} (measured {:.4e}, limit {:.4e})", c.verdict, c.name, c.measured, c.limit);
    }
    out!("  wrote {}", out.dir.display());
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let (name, mut file) = load(&config)?;
            if let Some(seed) = seed {
                file = file.with_seed(seed);
            }
            let outcome = artifacts::run_scenario(&name, &file, &out)?;
            print_outcome(&name, &outcome);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { pattern, seed, out } => {
            let mut jobs = Vec::new();
            for entry in glob::glob(&pattern).with_context(|| format!("bad pattern {pattern:?}"))? {
                let path = entry?;
                let (name, mut file) = load(&path.to_string_lossy())?;
                if let Some(seed) = seed {
                    file = file.with_seed(seed);
                }
                jobs.push((name, file));
            }
            if jobs.is_empty() {
                bail!("no configs match {pattern:?}");
            }
            let mut dirs: Vec<String> =
                jobs.iter().map(|(n, f)| f.output.directory.clone().unwrap_or_else(|| n.clone())).collect();
            dirs.sort();
            if let Some(w) = dirs.windows(2).find(|w| w[0] == w[1]) {
                bail!("two configs write to the same directory {:?}", w[0]);
            }
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|(name, file)| {
                        let out = &out;
                        s.spawn(move || artifacts::run_scenario(name, file, out))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
            });
            let mut failed = false;
            for ((name, _), result) in jobs.iter().zip(results) {
                match result {
                    Ok(outcome) => print_outcome(name, &outcome),
                    Err(e) => {
                        eprintln!("{name}: {e:#}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Verify { target, seed, samples, flip_sign } => {
            let report = verify(&target, &VerifyOptions { seed, samples, flip_sign })?;
            let _ = write!(std::io::stdout(), "{report}");
            let failed = report.outcomes.iter().filter(|o| !o.passed()).count();
            out!("{} properties, {failed} failed", report.outcomes.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Oracle { config, resolution, epsilon } => {
            let (name, file) = load(&config)?;
            let scn = file.ddos_scenario()?;
            let grid = GridSpec::new(resolution)?;
            let mut phases = vec![(0.0, scn.clone())];
            for sw in &file.switches {
                phases.push((sw.time, scn.with_weights(sw.weights.clone())?));
            }
            let reports = phases
                .iter()
                .map(|(t, s)| {
                    Ok(json!({ "from": t, "weights": s.weights, "report": ddos_grid_stackelberg(s, grid, epsilon)? }))
                })
                .collect::<Result<Vec<_>>>()?;
            out!("{}", serde_json::to_string_pretty(&json!({ "scenario": name, "phases": reports }))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<adaptive_stackelberg::Error>(),
                    Some(adaptive_stackelberg::Error::InvalidInput(_) | adaptive_stackelberg::Error::UnknownKeys(_))
                )
            });
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}
