//! Experiment entry points. Each writes a self-contained run directory.

use std::path::Path;

use copo_core::counting::{build_cfn_dataset, cfn_train};
use copo_core::online::{
    coverage_limited_seed, run_copo, run_regret_experiment, sft_policy, CfnLoopConfig, CopoRun, LoopConfig,
    RegretConfig, RegretReport,
};
use copo_core::{
    AscentConfig, BanditEnv, CfnTrainConfig, CoinFlipNet, ConfidenceParams, CopoConfig, FeatureKind, MleConfig,
    PromptId, ResponseId, RngHandle,
};
use rayon::prelude::*;

use crate::config::{Command, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::output::{
    checkpoint_text, create_dir, plot_script, render_csv, write_file, Cell, CHECKPOINT_FILE, CONFIG_FILE,
    COPO_COLUMNS, PLOT_FILE, RESULTS_FILE, SUMMARY_FILE,
};

/// Stream ids derived from the run seed.
const ENV_STREAM: u64 = 1;
const SEED_DATA_STREAM: u64 = 2;
const RUN_STREAM: u64 = 3;

pub const REGRET_COLUMNS: [&str; 5] = [
    "t",
    "dataset_size",
    "instantaneous_regret",
    "cumulative_regret",
    "average_regret",
];

pub const CFN_DEMO_COLUMNS: [&str; 6] = ["x", "y", "visits", "pseudocount", "bonus", "relative_error"];

pub const SUMMARY_COLUMNS: [&str; 5] = [
    "alpha",
    "final_true_value",
    "final_subopt_gap",
    "final_mean_bonus",
    "final_dpo_loss",
];

/// One line per run, printed by the binary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
}

pub fn build_env(cfg: &ExperimentConfig) -> Result<BanditEnv> {
    let d_feat = match cfg.env.kind {
        FeatureKind::Tabular => 0,
        FeatureKind::Linear => cfg.env.d_feat,
    };
    let mut rng = RngHandle::new(cfg.theta_seed()).fork(ENV_STREAM);
    Ok(BanditEnv::random(
        cfg.env.kind,
        cfg.env.n_prompts,
        cfg.env.n_responses,
        d_feat,
        cfg.env.bound,
        &mut rng,
    )?)
}

pub fn loop_config(cfg: &ExperimentConfig) -> LoopConfig {
    LoopConfig {
        copo: CopoConfig {
            beta: cfg.copo.beta,
            alpha: cfg.copo.alpha,
            lambda_bonus: cfg.copo.lambda_bonus,
            bonus_source: cfg.copo.bonus_source,
        },
        ascent: AscentConfig {
            step: cfg.lp.ascent_step,
            max_steps: cfg.lp.ascent_steps,
            ..LoopConfig::default().ascent
        },
        iterations: cfg.lp.iterations,
        noise_temp: cfg.env.noise_temp,
        moving_anchor: cfg.lp.moving_anchor,
        cfn: CfnLoopConfig {
            d_coin: cfg.cfn.d_coin,
            hidden: cfg.cfn.widths.clone(),
            train: train_config(cfg),
            reset: cfg.cfn.reset,
        },
        record_timing: cfg.lp.record_timing,
    }
}

fn train_config(cfg: &ExperimentConfig) -> CfnTrainConfig {
    CfnTrainConfig {
        epochs: cfg.cfn.epochs,
        lr: cfg.cfn.lr,
        batch_size: cfg.cfn.batch_size,
        momentum: cfg.cfn.momentum,
    }
}

pub fn regret_config(cfg: &ExperimentConfig) -> RegretConfig {
    RegretConfig {
        beta: cfg.copo.beta,
        iterations: cfg.lp.regret_iterations,
        confidence: ConfidenceParams {
            c: cfg.copo.c,
            delta: cfg.copo.delta,
            lambda: cfg.copo.lambda_theory,
            bound: cfg.env.bound,
        },
        geometry: cfg.copo.geometry,
        mode: cfg.copo.mode,
        oracle: false,
        pairs_per_iter: cfg.lp.pairs_per_iter,
        moving_anchor: false,
        mle: MleConfig::default(),
        ascent: AscentConfig::default(),
    }
}

/// Runs the COPO loop without touching the file system.
pub fn simulate_copo(cfg: &ExperimentConfig) -> Result<CopoRun> {
    let env = build_env(cfg)?;
    let n_pairs = cfg.lp.iterations * cfg.lp.prompts_per_iter;
    let seed_rng = RngHandle::new(cfg.seed);
    let seed = coverage_limited_seed(&env, n_pairs, cfg.env.coverage, &mut seed_rng.fork(SEED_DATA_STREAM))?;
    let pi_sft = sft_policy(cfg.env.n_responses, &seed.covered, cfg.env.sft_bias)?;
    Ok(run_copo(
        &env,
        &pi_sft,
        &seed.dataset,
        &loop_config(cfg),
        &mut seed_rng.fork(RUN_STREAM),
    )?)
}

pub fn simulate_regret(cfg: &ExperimentConfig) -> Result<RegretReport> {
    let env = build_env(cfg)?;
    Ok(run_regret_experiment(
        &env,
        &regret_config(cfg),
        &mut RngHandle::new(cfg.seed).fork(RUN_STREAM),
    )?)
}

pub fn copo_rows(run: &CopoRun) -> Vec<Vec<Cell>> {
    run.reports
        .iter()
        .map(|r| {
            vec![
                Cell::Int(r.t as u64),
                Cell::Int(r.dataset_size as u64),
                Cell::Real(r.dpo_loss),
                Cell::Real(r.mean_bonus),
                Cell::Real(r.true_value),
                Cell::Real(r.subopt_gap),
                Cell::Real(r.wall_ms),
            ]
        })
        .collect()
}

fn prepare(dir: &Path, cfg: &ExperimentConfig, command: Command) -> Result<()> {
    create_dir(dir)?;
    write_file(dir, CONFIG_FILE, &cfg.to_text(command))?;
    Ok(())
}

fn write_copo_dir(dir: &Path, cfg: &ExperimentConfig, run: &CopoRun) -> Result<()> {
    write_file(dir, RESULTS_FILE, &render_csv(&COPO_COLUMNS, &copo_rows(run)))?;
    write_file(dir, PLOT_FILE, &plot_script(RESULTS_FILE, &format!("COPO, alpha = {}", cfg.copo.alpha)))?;
    if let Some(net) = &run.cfn {
        write_file(dir, CHECKPOINT_FILE, &checkpoint_text(net))?;
    }
    Ok(())
}

fn copo_line(label: &str, run: &CopoRun) -> String {
    match run.reports.last() {
        Some(r) => format!(
            "{label}: T = {}, |D| = {}, final J = {:.6}, gap = {:.6}, mean bonus = {:.6}",
            r.t, r.dataset_size, r.true_value, r.subopt_gap, r.mean_bonus
        ),
        None => format!("{label}: no iterations"),
    }
}

pub fn cmd_run_copo(cfg: &ExperimentConfig) -> Result<Outcome> {
    prepare(&cfg.out, cfg, Command::RunCopo)?;
    let run = simulate_copo(cfg)?;
    write_copo_dir(&cfg.out, cfg, &run)?;
    Ok(Outcome {
        lines: vec![copo_line("run-copo", &run)],
    })
}

pub fn cmd_run_regret(cfg: &ExperimentConfig) -> Result<Outcome> {
    prepare(&cfg.out, cfg, Command::RunRegret)?;
    let report = simulate_regret(cfg)?;
    let rows: Vec<Vec<Cell>> = (0..report.cumulative.len())
        .map(|i| {
            vec![
                Cell::Int(i as u64 + 1),
                Cell::Int(report.dataset_sizes[i] as u64),
                Cell::Real(report.instantaneous[i]),
                Cell::Real(report.cumulative[i]),
                Cell::Real(report.average_at(i + 1)),
            ]
        })
        .collect();
    write_file(&cfg.out, RESULTS_FILE, &render_csv(&REGRET_COLUMNS, &rows))?;
    write_file(&cfg.out, PLOT_FILE, &plot_script(RESULTS_FILE, "regret"))?;
    let t = report.cumulative.len();
    Ok(Outcome {
        lines: vec![format!(
            "run-regret: T = {t}, Regret(T) = {:.6}, slope = {:.4}, iota = {:.4}",
            report.cumulative[t - 1],
            report.slope,
            report.iota
        )],
    })
}

/// Visit count assigned to state `k` of `n`: a log-spaced ladder from 1 to `max`.
pub fn demo_visits(k: usize, n: usize, max: usize) -> usize {
    if n <= 1 {
        return max;
    }
    let frac = k as f64 / (n - 1) as f64;
    ((max as f64).powf(frac)).round().max(1.0) as usize
}

pub fn cmd_cfn_demo(cfg: &ExperimentConfig) -> Result<Outcome> {
    prepare(&cfg.out, cfg, Command::CfnDemo)?;
    let env = build_env(cfg)?;
    let fm = env.feature_map();
    let (nx, ny) = (env.n_prompts(), env.n_responses());
    let n_states = nx * ny;
    let mut prompts = Vec::new();
    let mut responses = Vec::new();
    for k in 0..n_states {
        for _ in 0..demo_visits(k, n_states, cfg.cfn.demo_max_count) {
            prompts.push(PromptId(k / ny));
            responses.push(ResponseId(k % ny));
        }
    }
    let mut rng = RngHandle::new(cfg.seed).fork(RUN_STREAM);
    let data = build_cfn_dataset(&prompts, &responses, fm, cfg.cfn.d_coin, &mut rng)?;
    let mut net = CoinFlipNet::new(fm.dim(), &cfg.cfn.widths, cfg.cfn.d_coin, false, &mut rng)?;
    let trace = cfn_train(&mut net, &data, &train_config(cfg), &mut rng)?;
    let mut rows = Vec::with_capacity(n_states);
    let mut log_err = 0.0;
    for k in 0..n_states {
        let (x, y) = (PromptId(k / ny), ResponseId(k % ny));
        let visits = demo_visits(k, n_states, cfg.cfn.demo_max_count);
        let f = net.forward(fm.phi(x, y))?;
        let pc = copo_core::counting::pseudocount_from_prediction(&f);
        let rel = (pc - visits as f64) / visits as f64;
        log_err += (pc / visits as f64).ln().abs() / n_states as f64;
        rows.push(vec![
            Cell::Int(x.0 as u64),
            Cell::Int(y.0 as u64),
            Cell::Int(visits as u64),
            Cell::Real(pc),
            Cell::Real(copo_core::counting::bonus_from_prediction(&f)),
            Cell::Real(rel),
        ]);
    }
    write_file(&cfg.out, RESULTS_FILE, &render_csv(&CFN_DEMO_COLUMNS, &rows))?;
    write_file(&cfg.out, PLOT_FILE, &cfn_demo_plot())?;
    write_file(&cfg.out, CHECKPOINT_FILE, &checkpoint_text(&net))?;
    Ok(Outcome {
        lines: vec![format!(
            "cfn-demo: {n_states} states, {} examples, loss {:.4} -> {:.4}, mean |log(pseudocount/visits)| = {log_err:.3}",
            data.len(),
            trace.initial_loss,
            trace.final_loss()
        )],
    })
}

fn cfn_demo_plot() -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Pseudocounts of the trained coin-flip network against true visit counts."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "{RESULTS_FILE}")) as f:
    rows = [{{k: float(v) for k, v in r.items()}} for r in csv.DictReader(f)]

visits = [r["visits"] for r in rows]
fig, ax = plt.subplots(figsize=(5, 5))
ax.loglog(visits, [r["pseudocount"] for r in rows], "o", label="CFN pseudocount")
ax.loglog(visits, visits, "k--", label="exact count")
ax.set_xlabel("visits")
ax.set_ylabel("pseudocount")
ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "plot.png")
fig.savefig(out, dpi=120)
print("wrote", out)
"#
    )
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("COPO_LAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::config("COPO_LAB_THREADS", format!("expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Failed(e.to_string()))
}

/// Directory name of one sweep cell.
pub fn alpha_dir_name(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

pub fn cmd_sweep_alpha(cfg: &ExperimentConfig) -> Result<Outcome> {
    prepare(&cfg.out, cfg, Command::SweepAlpha)?;
    let cells: Vec<ExperimentConfig> = cfg
        .lp
        .sweep_alphas
        .iter()
        .map(|&alpha| {
            let mut c = cfg.clone();
            c.copo.alpha = alpha;
            c.out = cfg.out.join(alpha_dir_name(alpha));
            c
        })
        .collect();
    let pool = thread_pool()?;
    let runs: Vec<Result<CopoRun>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                prepare(&c.out, c, Command::RunCopo)?;
                let run = simulate_copo(c)?;
                write_copo_dir(&c.out, c, &run)?;
                Ok(run)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (c, run) in cells.iter().zip(runs) {
        let run = run?;
        let last = run
            .reports
            .last()
            .ok_or_else(|| CliError::Failed("sweep cell produced no iterations".into()))?;
        rows.push(vec![
            Cell::Real(c.copo.alpha),
            Cell::Real(last.true_value),
            Cell::Real(last.subopt_gap),
            Cell::Real(last.mean_bonus),
            Cell::Real(last.dpo_loss),
        ]);
        lines.push(copo_line(&format!("alpha = {}", c.copo.alpha), &run));
    }
    write_file(&cfg.out, SUMMARY_FILE, &render_csv(&SUMMARY_COLUMNS, &rows))?;
    write_file(&cfg.out, PLOT_FILE, &plot_script(SUMMARY_FILE, "alpha sweep"))?;
    Ok(Outcome { lines })
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match command {
        Command::RunCopo => cmd_run_copo(cfg),
        Command::RunRegret => cmd_run_regret(cfg),
        Command::CfnDemo => cmd_cfn_demo(cfg),
        Command::SweepAlpha => cmd_sweep_alpha(cfg),
    }
}
