use std::fs;
use std::path::Path;

use rand::RngCore;

use super::config::RunConfig;
use super::curve::LearningCurve;
use crate::agent::Td3Agent;
use crate::envs::Env;
use crate::error::Result;
use crate::par::item_rng;
use crate::replay::ReplayMemory;
use crate::strategies::StrategyKind;
use crate::transition::Transition;

// independent random streams derived from the run seed
const STREAM_ENV: u64 = 0;
const STREAM_AGENT: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_EVAL_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub curve: LearningCurve,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub final_score: f64,
    /// Initial state of every training episode, in order.
    pub episode_starts: Vec<Vec<f64>>,
}

/// Start states of the evaluation episodes for `seed`. They are the same at
/// every evaluation point and for every strategy sharing the seed.
pub fn eval_starts(env: &dyn Env, episodes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = item_rng(seed, STREAM_EVAL);
    (0..episodes).map(|_| env.reset(&mut rng)).collect()
}

/// Mean undiscounted return of greedy episodes from [`eval_starts`].
pub fn evaluate(agent: &Td3Agent, env: &dyn Env, episodes: usize, seed: u64) -> Result<f64> {
    let mut noise_rng = item_rng(seed, STREAM_EVAL_NOISE);
    let mut total = 0.0;
    for start in eval_starts(env, episodes, seed) {
        let mut s = start;
        for _ in 0..env.horizon() {
            let a = agent.act_greedy(&s)?;
            let step = env.step(&s, &a, &mut noise_rng)?;
            total += step.reward;
            if step.done {
                break;
            }
            s = step.next_state;
        }
    }
    Ok(total / episodes as f64)
}

/// Trains one agent: act, step, store, then `replay_ratio` gradient updates
/// per env step once warmup is over, with greedy evaluation every
/// `eval_interval` env steps.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let spec = env.spec().clone();
    let mut env_rng = item_rng(cfg.seed, STREAM_ENV);
    let mut replay_rng = item_rng(cfg.seed, STREAM_REPLAY);
    let agent_seed = item_rng(cfg.seed, STREAM_AGENT).next_u64();
    let mut agent = Td3Agent::new(spec.clone(), cfg.td3.clone(), agent_seed)?;
    // a buffer larger than the run never evicts, so this is behavior-neutral
    let capacity = cfg.buffer_capacity.min(cfg.total_env_steps.max(1) as usize);
    let mut memory = ReplayMemory::new(spec, capacity, cfg.strategy.clone())?;

    let mut eval_steps = Vec::new();
    let mut eval_returns = Vec::new();
    let mut episode_starts = Vec::new();
    let mut grad_steps = 0u64;
    let mut episode_id = 0u64;
    let mut step_idx = 0u64;
    let mut s = env.reset(&mut env_rng);
    episode_starts.push(s.clone());

    for t in 0..cfg.total_env_steps {
        let a = agent.act(&s, t)?;
        let step = env.step(&s, &a, &mut env_rng)?;
        // reaching the horizon is a truncation, never a terminal
        memory.insert(&Transition {
            s: s.clone(),
            a,
            r: step.reward,
            s2: step.next_state.clone(),
            done: step.done,
            episode_id,
            step_idx,
        })?;

        if t >= cfg.td3.random_steps {
            for _ in 0..cfg.td3.replay_ratio {
                let batch = memory.sample(cfg.td3.batch_size, grad_steps, &mut replay_rng)?;
                let info = agent.update(&batch)?;
                if cfg.strategy.kind == StrategyKind::Per {
                    memory.update_priorities(&batch.source_slots, &info.td_errors)?;
                }
                grad_steps += 1;
            }
        }

        step_idx += 1;
        if step.done || step_idx >= env.horizon() {
            episode_id += 1;
            step_idx = 0;
            s = env.reset(&mut env_rng);
            episode_starts.push(s.clone());
        } else {
            s = step.next_state;
        }

        if (t + 1) % cfg.eval_interval == 0 {
            eval_steps.push(t + 1);
            eval_returns.push(evaluate(&agent, env.as_ref(), cfg.eval_episodes, cfg.seed)?);
        }
    }

    let curve = LearningCurve::from_raw(eval_steps, eval_returns, cfg.smoothing_window)?;
    Ok(RunResult {
        name: cfg.run_name(),
        final_score: curve.final_score(cfg.smoothing_window),
        curve,
        env_steps: cfg.total_env_steps,
        grad_steps,
        episode_starts,
    })
}

/// Writes `<name>.csv` (learning curve) and `<name>.config` into `dir`.
pub fn write_outputs(cfg: &RunConfig, result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    result.curve.write_csv(&mut csv)?;
    fs::write(dir.join(format!("{}.csv", result.name)), csv)?;
    // the echo leaves out the destination so reruns elsewhere compare equal
    let echo = RunConfig {
        out_dir: None,
        ..cfg.clone()
    };
    fs::write(dir.join(format!("{}.config", result.name)), echo.to_text())?;
    Ok(())
}
