use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use super::run::{run_experiment, write_outputs, RunResult};
use crate::error::{Error, Result};
use crate::par;
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub strategies: Vec<StrategyKind>,
    pub replay_ratios: Vec<usize>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub strategy: StrategyKind,
    pub replay_ratio: usize,
    /// `None` for strategies that ignore the neighborhood size.
    pub k: Option<usize>,
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub strategy: StrategyKind,
    pub replay_ratio: usize,
    pub k: Option<usize>,
    pub finals: Vec<f64>,
    pub failures: usize,
    pub mean: f64,
    /// Sample standard deviation; NaN with fewer than two runs.
    pub sd: f64,
    /// Highest mean among this strategy's cells.
    pub best_of_grid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub runs: Vec<GridRun>,
    pub cells: Vec<GridCell>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One config per cell and seed. Strategies without a neighborhood run once
/// per ratio and seed rather than once per `k`.
pub fn grid_configs(base: &RunConfig, spec: &GridSpec) -> Result<Vec<(RunConfig, Option<usize>)>> {
    if spec.strategies.is_empty() || spec.replay_ratios.is_empty() || spec.ks.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("grid lists must all be non-empty"));
    }
    let mut out = Vec::new();
    for &kind in &spec.strategies {
        let ks: Vec<Option<usize>> = if kind.uses_neighbor_index() {
            spec.ks.iter().map(|&k| Some(k)).collect()
        } else {
            vec![None]
        };
        for &rr in &spec.replay_ratios {
            for &k in &ks {
                for &seed in &spec.seeds {
                    let mut cfg = base.clone().with_strategy(kind);
                    cfg.td3.replay_ratio = rr;
                    if let Some(k) = k {
                        cfg.strategy.k = k;
                    }
                    cfg.seed = seed;
                    out.push((cfg, k));
                }
            }
        }
    }
    Ok(out)
}

/// Runs every grid cell for every seed (in parallel when enabled). A failing
/// run is recorded in the summary and does not stop the others.
pub fn run_grid(base: &RunConfig, spec: &GridSpec, out_dir: Option<&Path>) -> Result<GridSummary> {
    let configs = grid_configs(base, spec)?;
    let runs: Vec<GridRun> = par::map_tasks(configs.len(), |i| {
        let (cfg, k) = &configs[i];
        let result = run_experiment(cfg).and_then(|r| {
            if let Some(dir) = out_dir {
                write_outputs(cfg, &r, dir)?;
            }
            Ok(r)
        });
        GridRun {
            strategy: cfg.strategy.kind,
            replay_ratio: cfg.td3.replay_ratio,
            k: *k,
            seed: cfg.seed,
            result: result.map_err(|e| e.to_string()),
        }
    });

    let mut cells: Vec<GridCell> = Vec::new();
    for run in &runs {
        let idx = cells
            .iter()
            .position(|c| c.strategy == run.strategy && c.replay_ratio == run.replay_ratio && c.k == run.k);
        let cell = match idx {
            Some(i) => &mut cells[i],
            None => {
                cells.push(GridCell {
                    strategy: run.strategy,
                    replay_ratio: run.replay_ratio,
                    k: run.k,
                    finals: Vec::new(),
                    failures: 0,
                    mean: f64::NAN,
                    sd: f64::NAN,
                    best_of_grid: false,
                });
                cells.last_mut().unwrap()
            }
        };
        match &run.result {
            Ok(r) => cell.finals.push(r.final_score),
            Err(_) => cell.failures += 1,
        }
    }
    for cell in &mut cells {
        (cell.mean, cell.sd) = mean_sd(&cell.finals);
    }
    for &kind in &spec.strategies {
        let best = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.strategy == kind && !c.mean.is_nan())
            .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .map(|(i, _)| i);
        if let Some(i) = best {
            cells[i].best_of_grid = true;
        }
    }

    let summary = GridSummary { runs, cells };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        summary.write_summary_csv(&mut buf)?;
        fs::write(dir.join("summary.csv"), buf)?;
        let mut buf = Vec::new();
        summary.write_runs_csv(&mut buf)?;
        fs::write(dir.join("runs.csv"), buf)?;
    }
    Ok(summary)
}

fn fmt_k(k: Option<usize>) -> String {
    k.map_or_else(|| "-".into(), |k| k.to_string())
}

impl GridSummary {
    pub fn write_summary_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "strategy,replay_ratio,k,n_runs,n_failed,mean_final,sd_final,best_of_grid")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{:.16e},{:.16e},{}",
                c.strategy,
                c.replay_ratio,
                fmt_k(c.k),
                c.finals.len(),
                c.failures,
                c.mean,
                c.sd,
                c.best_of_grid
            )?;
        }
        Ok(())
    }

    pub fn write_runs_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "strategy,replay_ratio,k,seed,final_score,grad_steps,error")?;
        for r in &self.runs {
            let (score, steps, err) = match &r.result {
                Ok(res) => (format!("{:.16e}", res.final_score), res.grad_steps.to_string(), String::new()),
                Err(e) => ("nan".into(), "0".into(), e.replace(',', ";")),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.strategy,
                r.replay_ratio,
                fmt_k(r.k),
                r.seed,
                score,
                steps,
                err
            )?;
        }
        Ok(())
    }
}
