use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptive_stackelberg::config::{OutputFormat, ScenarioFile};
use adaptive_stackelberg::ddos::DdosScenario;
use adaptive_stackelberg::game::{predicted_cost, GameDefinition};
use adaptive_stackelberg::sim::checks::{summarize, RunSummary};
use adaptive_stackelberg::sim::log::fmt_f64;
use adaptive_stackelberg::sim::{run, TrajectoryLog};
use anyhow::{Context, Result};
use nalgebra::DVector;
use serde::Serialize;

/// Points per axis of the cost-function panels.
const FUNCTION_GRID: [usize; 2] = [201, 41];

#[derive(Serialize)]
struct SummaryFile<'a> {
    scenario: &'a str,
    seed: u64,
    /// A finite log can only show that the estimator did not switch back on
    /// before the horizon.
    settling_scope: &'static str,
    summary: &'a RunSummary,
    config: &'a ScenarioFile,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Runs one scenario and writes its files under `root`.
pub fn run_scenario(name: &str, file: &ScenarioFile, root: &Path) -> Result<RunOutcome> {
    let game = file.game()?;
    let cfg = file.sim_config()?;
    let log = run(&game, &cfg).map_err(|e| match e {
        adaptive_stackelberg::Error::NonFinite { what, record } => anyhow::anyhow!(
            "non-finite value in {what} at record {record}; last good record {}",
            record.saturating_sub(1)
        ),
        other => other.into(),
    })?;
    let summary = summarize(&log, &game, &cfg.estimator, cfg.pe.as_ref())?;
    let dir = root.join(file.output.directory.as_deref().unwrap_or(name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let every = file.output.every;
    for format in &file.output.formats {
        match format {
            OutputFormat::Trajectory => {
                let path = dir.join("trajectory.csv");
                let mut w = BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?);
                log.write_csv(&mut w, every)?;
                w.flush()?;
            }
            OutputFormat::Summary => {
                let doc = SummaryFile {
                    scenario: name,
                    seed: file.sim.seed,
                    settling_scope: "within horizon",
                    summary: &summary,
                    config: file,
                };
                fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
            }
            OutputFormat::Plots => write_plots(&dir.join("plots"), file, &game, &log, every)?,
        }
    }
    Ok(RunOutcome { dir, summary })
}

fn csv<P: AsRef<Path>>(path: P, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref()).with_context(|| path.as_ref().display().to_string())?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(
            w,
            "{}",
            row.into_iter().map(|v| if v.is_nan() { String::new() } else { fmt_f64(v) }).collect::<Vec<_>>().join(",")
        )?;
    }
    w.flush()?;
    Ok(())
}

fn strs(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// One CSV per figure panel: observation error, router action, router
/// costs, attacker cost, and the actual and predicted cost functions at
/// the end of each phase.
fn write_plots(
    dir: &Path,
    file: &ScenarioFile,
    game: &GameDefinition,
    log: &TrajectoryLog,
    every: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let last = log.last();
    let ks = || (0..log.len()).filter(move |k| k % every == 0 || *k == last);
    csv(
        dir.join("obs_error.csv"),
        &strs(&["t", "e_obs_norm", "lambda_e"]),
        ks().map(|k| vec![log.t[k], log.e_norm[k], log.lambda_e[k]]),
    )?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=log.n_r).map(|i| format!("r_{i}")));
    csv(
        dir.join("actions.csv"),
        &header,
        ks().map(|k| std::iter::once(log.t[k]).chain(log.r(k).iter().copied()).collect()),
    )?;
    csv(dir.join("costs.csv"), &strs(&["t", "J", "J_hat"]), ks().map(|k| vec![log.t[k], log.j[k], log.j_hat[k]]))?;
    csv(dir.join("attacker_cost.csv"), &strs(&["t", "H"]), ks().map(|k| vec![log.t[k], log.h[k].unwrap_or(f64::NAN)]))?;

    let scn = file.ddos_scenario()?;
    let schedule = file.switch_schedule()?;
    for (i, (_, end)) in log.phases().into_iter().enumerate() {
        let phase_game = match i {
            0 => game.clone(),
            _ => {
                let sw = &schedule.switches()[i - 1];
                game.with_follower(sw.follower.clone(), sw.follower_cost.clone(), sw.true_theta.clone())
            }
        };
        let theta = log.theta_at(end - 1);
        write_cost_function(
            &dir.join(format!("cost_function_{}.csv", i + 1)),
            &scn,
            &phase_game,
            &theta,
            log.t[end - 1],
        )?;
    }
    Ok(())
}

/// `J(r, f(r))` and `Ĵ(θ̂, r)` over the leader's simplex, parameterized by
/// its first `L − 1` coordinates.
fn write_cost_function(
    path: &Path,
    scn: &DdosScenario,
    game: &GameDefinition,
    theta: &DVector<f64>,
    t: f64,
) -> Result<()> {
    let free = scn.links - 1;
    let res = if free <= 1 { FUNCTION_GRID[0] } else { FUNCTION_GRID[1] };
    let step = scn.r_total / (res - 1) as f64;
    let mut rows = Vec::new();
    let mut idx = vec![0usize; free];
    loop {
        if idx.iter().sum::<usize>() < res {
            let mut r: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
            r.push((scn.r_total - r.iter().sum::<f64>()).max(0.0));
            let r = DVector::from_vec(r);
            let actual = game.cost.cost(&r, &game.follower.respond(&r));
            let predicted = predicted_cost(game, &r, theta)?;
            let mut row: Vec<f64> = vec![t];
            row.extend(r.iter().take(free));
            row.extend([actual, predicted]);
            rows.push(row);
        }
        let mut pos = 0;
        loop {
            if pos == free {
                let mut header = vec!["T".to_string()];
                header.extend((1..=free).map(|i| format!("r_{i}")));
                header.extend(strs(&["J", "J_hat"]));
                return csv(path, &header, rows.into_iter());
            }
            idx[pos] += 1;
            if idx.iter().sum::<usize>() < res {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
