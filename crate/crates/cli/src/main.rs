use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nmer::harness::{self, GridSpec, LearningCurve, RunConfig};
use nmer::manifold::ResidualReport;
use nmer::{RingBuffer, StrategyKind};

#[derive(Parser)]
#[command(name = "nmer", version, about = "Replay-strategy experiments with TD3 on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve.
    Run(RunArgs),
    /// Train every strategy x replay ratio x k x seed cell and summarize.
    Grid(GridArgs),
    /// Fill a buffer with random-action transitions and dump it.
    Collect(CollectArgs),
    /// Measure how far a strategy's synthetic samples fall from the dynamics.
    Residuals(ResidualArgs),
    /// Recompute the smoothed column of a learning-curve CSV.
    Smooth(SmoothArgs),
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("override `{kv}` is not of the form key=value");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    replay_ratio: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3])]
    seed: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_values_t = [StrategyKind::Uniform, StrategyKind::Nmer])]
    strategy: Vec<StrategyKind>,
    /// Comma-separated replay ratios.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 20])]
    replay_ratio: Vec<usize>,
    /// Comma-separated neighborhood sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize])]
    k: Vec<usize>,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50_000)]
    transitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Buffer dump destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResidualArgs {
    #[command(flatten)]
    common: Common,
    /// Buffer dump produced by `collect`.
    #[arg(long)]
    dump: PathBuf,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_values_t = [StrategyKind::Nmer, StrategyKind::NaiveMixup])]
    strategy: Vec<StrategyKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 11)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Collect(a) => collect(a),
        Command::Residuals(a) => residuals(a),
        Command::Smooth(a) => smooth(a),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = a.strategy {
        cfg.strategy.kind = kind;
    }
    if let Some(rr) = a.replay_ratio {
        cfg.td3.replay_ratio = rr;
    }
    if let Some(k) = a.k {
        cfg.strategy.k = k;
    }
    if let Some(out) = a.out {
        cfg.out_dir = Some(out);
    }
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    cfg.validate()?;
    let result = harness::run_experiment(&cfg)?;
    harness::write_outputs(&cfg, &result, &out)?;
    println!(
        "{}: final smoothed return {:.3} after {} env steps, {} gradient steps -> {}",
        result.name,
        result.final_score,
        result.env_steps,
        result.grad_steps,
        out.join(format!("{}.csv", result.name)).display()
    );
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let spec = GridSpec {
        strategies: a.strategy,
        replay_ratios: a.replay_ratio,
        ks: a.k,
        seeds: a.seed,
    };
    let summary = harness::run_grid(&cfg, &spec, Some(&a.out))?;
    let stdout = std::io::stdout();
    summary.write_summary_csv(&mut stdout.lock())?;
    let failed: usize = summary.cells.iter().map(|c| c.failures).sum();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see {}", a.out.join("runs.csv").display());
    }
    Ok(())
}

fn collect(a: CollectArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let env = cfg.env.build()?;
    let data = harness::collect_random(env.as_ref(), a.transitions, a.seed)?;
    let mut buf = RingBuffer::new(env.spec().clone(), a.transitions.max(1))?;
    for t in &data {
        buf.insert(t)?;
    }
    let file = create(&a.out)?;
    buf.write_dump(BufWriter::new(file))?;
    println!("wrote {} {} transitions to {}", data.len(), env.name(), a.out.display());
    Ok(())
}

fn residuals(a: ResidualArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let env = cfg.env.build()?;
    let file = fs::File::open(&a.dump).with_context(|| format!("opening {}", a.dump.display()))?;
    let mut reader = BufReader::new(file);
    let capacity = count_rows(&a.dump)?;
    let buf = RingBuffer::read_dump(&mut reader, env.spec().clone(), capacity.max(1))?;
    let mut out = BufWriter::new(create(&a.out)?);
    ResidualReport::write_csv_header(&mut out)?;
    for kind in a.strategy {
        let mut scfg = cfg.strategy.clone();
        scfg.kind = kind;
        if let Some(k) = a.k {
            scfg.k = k;
        }
        let memory = harness::memory_from_buffer(&buf, scfg)?;
        let report = harness::residual_study(&memory, env.as_ref(), kind.name(), a.samples, 256, a.seed)?;
        report.write_csv_rows(&mut out, a.seed)?;
        println!(
            "{}: n={} mean={:.6e} median={:.6e} p95={:.6e}",
            kind,
            report.len(),
            report.mean,
            report.median,
            report.p95
        );
    }
    out.flush()?;
    Ok(())
}

fn smooth(a: SmoothArgs) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let curve = LearningCurve::read_csv(BufReader::new(file), a.window)?;
    let mut out = BufWriter::new(create(&a.out)?);
    curve.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn count_rows(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}
