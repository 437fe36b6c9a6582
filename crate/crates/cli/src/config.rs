//! Flat `key = value` experiment configuration.
//!
//! Keys are grouped by prefix: `env.`, `copo.`, `cfn.` and `loop.`, plus
//! the top-level `seed` and `out`. Blank lines and `#` comments are ignored.
//! Later assignments win, so `--set` and the dedicated flags override the file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use copo_core::{BonusSource, FeatureKind, Geometry, OptimisticMode};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RunCopo,
    RunRegret,
    CfnDemo,
    SweepAlpha,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::RunCopo => "run-copo",
            Self::RunRegret => "run-regret",
            Self::CfnDemo => "cfn-demo",
            Self::SweepAlpha => "sweep-alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSection {
    pub kind: FeatureKind,
    pub n_prompts: usize,
    pub n_responses: usize,
    /// Ignored for tabular features, whose dimension is `|X|·|Y|`.
    pub d_feat: usize,
    pub bound: f64,
    /// Seed for drawing `θ*` and the features; `None` reuses `seed`.
    pub theta_seed: Option<u64>,
    /// Fraction of responses per prompt present in the seed data.
    pub coverage: f64,
    /// Logit bonus of covered responses in the starting policy.
    pub sft_bias: f64,
    pub noise_temp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopoSection {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_bonus: f64,
    pub lambda_theory: f64,
    pub c: f64,
    pub delta: f64,
    pub bonus_source: BonusSource,
    pub mode: OptimisticMode,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnSection {
    pub d_coin: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub reset: bool,
    /// Largest visit count in the `cfn-demo` ladder.
    pub demo_max_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSection {
    pub iterations: usize,
    pub prompts_per_iter: usize,
    pub ascent_step: f64,
    pub ascent_steps: usize,
    pub moving_anchor: bool,
    pub regret_iterations: usize,
    pub pairs_per_iter: usize,
    pub record_timing: bool,
    pub sweep_alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub env: EnvSection,
    pub copo: CopoSection,
    pub cfn: CfnSection,
    pub lp: LoopSection,
}

impl ExperimentConfig {
    /// Defaults of the reference tabular experiment for `command`.
    ///
    /// COPO-style commands use a 4×10 coverage-limited bandit; the regret
    /// experiment uses the small 3×4 instance with `B = 1`. The CFN demo
    /// trains long enough for the pseudocounts to settle.
    pub fn defaults_for(command: Command) -> Self {
        let (n_prompts, n_responses, bound) = match command {
            Command::RunRegret => (3, 4, 1.0),
            _ => (4, 10, 6.0),
        };
        let mut cfg = Self {
            seed: 0,
            out: PathBuf::from(format!("runs/{}", command.name())),
            env: EnvSection {
                kind: FeatureKind::Tabular,
                n_prompts,
                n_responses,
                d_feat: 8,
                bound,
                theta_seed: None,
                coverage: 0.4,
                sft_bias: 2.0,
                noise_temp: 0.0,
            },
            copo: CopoSection {
                alpha: 0.1,
                beta: 0.1,
                lambda_bonus: 0.01,
                lambda_theory: 4.0,
                c: 1.0,
                delta: 0.1,
                bonus_source: BonusSource::ExactCount,
                mode: OptimisticMode::PointwiseBonus,
                geometry: Geometry::Unnormalized,
            },
            cfn: CfnSection {
                d_coin: 20,
                widths: vec![32, 20],
                lr: 1e-4,
                epochs: 1,
                batch_size: 32,
                momentum: 0.9,
                reset: false,
                demo_max_count: 64,
            },
            lp: LoopSection {
                iterations: 3,
                prompts_per_iter: 80,
                ascent_step: 0.5,
                ascent_steps: 200,
                moving_anchor: true,
                regret_iterations: 2000,
                pairs_per_iter: 1,
                record_timing: false,
                sweep_alphas: vec![0.01, 0.1, 0.5],
            },
        };
        if command == Command::CfnDemo {
            cfg.cfn.lr = 0.01;
            cfg.cfn.epochs = 3000;
            cfg.cfn.batch_size = 16;
        }
        cfg
    }

    /// Assigns one key. The error message names the problem but not the origin.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(v)?,
            "out" => {
                if v.is_empty() {
                    return Err("output directory must not be empty".into());
                }
                self.out = PathBuf::from(v)
            }
            "env.kind" => self.env.kind = feature_kind(v)?,
            "env.n_prompts" => self.env.n_prompts = num(v)?,
            "env.n_responses" => self.env.n_responses = num(v)?,
            "env.d_feat" => self.env.d_feat = num(v)?,
            "env.bound" => self.env.bound = num(v)?,
            "env.theta_seed" => self.env.theta_seed = if v == "auto" { None } else { Some(num(v)?) },
            "env.coverage" => self.env.coverage = num(v)?,
            "env.sft_bias" => self.env.sft_bias = num(v)?,
            "env.noise_temp" => self.env.noise_temp = num(v)?,
            "copo.alpha" => self.copo.alpha = num(v)?,
            "copo.beta" => self.copo.beta = num(v)?,
            "copo.lambda_bonus" => self.copo.lambda_bonus = num(v)?,
            "copo.lambda_theory" => self.copo.lambda_theory = num(v)?,
            "copo.c" => self.copo.c = num(v)?,
            "copo.delta" => self.copo.delta = num(v)?,
            "copo.bonus_source" => self.copo.bonus_source = bonus_source(v)?,
            "copo.mode" => self.copo.mode = v.parse()?,
            "copo.geometry" => self.copo.geometry = v.parse()?,
            "cfn.d_coin" => self.cfn.d_coin = num(v)?,
            "cfn.widths" => self.cfn.widths = list(v)?,
            "cfn.lr" => self.cfn.lr = num(v)?,
            "cfn.epochs" => self.cfn.epochs = num(v)?,
            "cfn.batch_size" => self.cfn.batch_size = num(v)?,
            "cfn.momentum" => self.cfn.momentum = num(v)?,
            "cfn.reset" => self.cfn.reset = num(v)?,
            "cfn.demo_max_count" => self.cfn.demo_max_count = num(v)?,
            "loop.iterations" => self.lp.iterations = num(v)?,
            "loop.prompts_per_iter" => self.lp.prompts_per_iter = num(v)?,
            "loop.ascent_step" => self.lp.ascent_step = num(v)?,
            "loop.ascent_steps" => self.lp.ascent_steps = num(v)?,
            "loop.moving_anchor" => self.lp.moving_anchor = num(v)?,
            "loop.regret_iterations" => self.lp.regret_iterations = num(v)?,
            "loop.pairs_per_iter" => self.lp.pairs_per_iter = num(v)?,
            "loop.record_timing" => self.lp.record_timing = num(v)?,
            "loop.sweep_alphas" => self.lp.sweep_alphas = list(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |xs: &[String]| xs.join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("env.kind", feature_kind_name(self.env.kind).into()),
            ("env.n_prompts", self.env.n_prompts.to_string()),
            ("env.n_responses", self.env.n_responses.to_string()),
            ("env.d_feat", self.env.d_feat.to_string()),
            ("env.bound", self.env.bound.to_string()),
            (
                "env.theta_seed",
                self.env.theta_seed.map_or_else(|| "auto".into(), |s| s.to_string()),
            ),
            ("env.coverage", self.env.coverage.to_string()),
            ("env.sft_bias", self.env.sft_bias.to_string()),
            ("env.noise_temp", self.env.noise_temp.to_string()),
            ("copo.alpha", self.copo.alpha.to_string()),
            ("copo.beta", self.copo.beta.to_string()),
            ("copo.lambda_bonus", self.copo.lambda_bonus.to_string()),
            ("copo.lambda_theory", self.copo.lambda_theory.to_string()),
            ("copo.c", self.copo.c.to_string()),
            ("copo.delta", self.copo.delta.to_string()),
            ("copo.bonus_source", bonus_source_name(self.copo.bonus_source).into()),
            ("copo.mode", mode_name(self.copo.mode).into()),
            ("copo.geometry", geometry_name(self.copo.geometry).into()),
            ("cfn.d_coin", self.cfn.d_coin.to_string()),
            (
                "cfn.widths",
                join(&self.cfn.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>()),
            ),
            ("cfn.lr", self.cfn.lr.to_string()),
            ("cfn.epochs", self.cfn.epochs.to_string()),
            ("cfn.batch_size", self.cfn.batch_size.to_string()),
            ("cfn.momentum", self.cfn.momentum.to_string()),
            ("cfn.reset", self.cfn.reset.to_string()),
            ("cfn.demo_max_count", self.cfn.demo_max_count.to_string()),
            ("loop.iterations", self.lp.iterations.to_string()),
            ("loop.prompts_per_iter", self.lp.prompts_per_iter.to_string()),
            ("loop.ascent_step", self.lp.ascent_step.to_string()),
            ("loop.ascent_steps", self.lp.ascent_steps.to_string()),
            ("loop.moving_anchor", self.lp.moving_anchor.to_string()),
            ("loop.regret_iterations", self.lp.regret_iterations.to_string()),
            ("loop.pairs_per_iter", self.lp.pairs_per_iter.to_string()),
            ("loop.record_timing", self.lp.record_timing.to_string()),
            (
                "loop.sweep_alphas",
                join(&self.lp.sweep_alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>()),
            ),
        ]
    }

    /// Applies the lines of a config file. `origin` prefixes diagnostics.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", i + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(&at, format!("expected `key = value`, found `{line}`")))?;
            self.set(key.trim(), value).map_err(|m| CliError::config(&at, m))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Input {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let origin = format!("--set {assignment}");
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(&origin, "expected `key=value`"))?;
        self.set(key.trim(), value).map_err(|m| CliError::config(&origin, m))
    }

    /// Range checks; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(CliError::config(format!("field `{field}`"), msg));
        let floats = [
            ("env.bound", self.env.bound),
            ("env.coverage", self.env.coverage),
            ("env.sft_bias", self.env.sft_bias),
            ("env.noise_temp", self.env.noise_temp),
            ("copo.alpha", self.copo.alpha),
            ("copo.beta", self.copo.beta),
            ("copo.lambda_bonus", self.copo.lambda_bonus),
            ("copo.lambda_theory", self.copo.lambda_theory),
            ("copo.c", self.copo.c),
            ("copo.delta", self.copo.delta),
            ("cfn.lr", self.cfn.lr),
            ("cfn.momentum", self.cfn.momentum),
            ("loop.ascent_step", self.lp.ascent_step),
        ];
        for (field, v) in floats {
            if !v.is_finite() {
                return bad(field, format!("must be finite, got {v}"));
            }
        }
        let positive = [
            ("env.bound", self.env.bound),
            ("copo.beta", self.copo.beta),
            ("copo.lambda_theory", self.copo.lambda_theory),
            ("copo.c", self.copo.c),
            ("cfn.lr", self.cfn.lr),
            ("loop.ascent_step", self.lp.ascent_step),
        ];
        for (field, v) in positive {
            if v <= 0.0 {
                return bad(field, format!("must be > 0, got {v}"));
            }
        }
        let non_negative = [
            ("env.sft_bias", self.env.sft_bias),
            ("env.noise_temp", self.env.noise_temp),
            ("copo.alpha", self.copo.alpha),
            ("copo.lambda_bonus", self.copo.lambda_bonus),
        ];
        for (field, v) in non_negative {
            if v < 0.0 {
                return bad(field, format!("must be >= 0, got {v}"));
            }
        }
        if !(self.copo.delta > 0.0 && self.copo.delta < 1.0) {
            return bad("copo.delta", format!("must lie in (0, 1), got {}", self.copo.delta));
        }
        if !(self.env.coverage > 0.0 && self.env.coverage <= 1.0) {
            return bad("env.coverage", format!("must lie in (0, 1], got {}", self.env.coverage));
        }
        if !(0.0..1.0).contains(&self.cfn.momentum) {
            return bad("cfn.momentum", format!("must lie in [0, 1), got {}", self.cfn.momentum));
        }
        let at_least = [
            ("env.n_prompts", self.env.n_prompts, 1),
            ("env.n_responses", self.env.n_responses, 2),
            ("cfn.d_coin", self.cfn.d_coin, 1),
            ("cfn.epochs", self.cfn.epochs, 1),
            ("cfn.batch_size", self.cfn.batch_size, 1),
            ("cfn.demo_max_count", self.cfn.demo_max_count, 1),
            ("loop.iterations", self.lp.iterations, 1),
            ("loop.prompts_per_iter", self.lp.prompts_per_iter, 1),
            ("loop.regret_iterations", self.lp.regret_iterations, 10),
            ("loop.pairs_per_iter", self.lp.pairs_per_iter, 1),
        ];
        for (field, v, min) in at_least {
            if v < min {
                return bad(field, format!("must be >= {min}, got {v}"));
            }
        }
        if self.env.kind == FeatureKind::Linear && self.env.d_feat == 0 {
            return bad("env.d_feat", "linear features need d_feat >= 1".into());
        }
        if self.cfn.widths.is_empty() || self.cfn.widths.contains(&0) {
            return bad("cfn.widths", "needs at least one width, all >= 1".into());
        }
        if self.lp.sweep_alphas.is_empty() {
            return bad("loop.sweep_alphas", "needs at least one value".into());
        }
        if let Some(a) = self.lp.sweep_alphas.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return bad("loop.sweep_alphas", format!("values must be finite and >= 0, got {a}"));
        }
        Ok(())
    }

    /// Text form that parses back to the same configuration.
    pub fn to_text(&self, command: Command) -> String {
        let mut s = format!("# resolved configuration for `{}`\n", command.name());
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn theta_seed(&self) -> u64 {
        self.env.theta_seed.unwrap_or(self.seed)
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value `{v}`: {e}"))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(s.trim())).collect()
}

fn feature_kind(v: &str) -> std::result::Result<FeatureKind, String> {
    match v {
        "tabular" => Ok(FeatureKind::Tabular),
        "linear" => Ok(FeatureKind::Linear),
        other => Err(format!("unknown feature kind `{other}` (expected tabular or linear)")),
    }
}

fn feature_kind_name(k: FeatureKind) -> &'static str {
    match k {
        FeatureKind::Tabular => "tabular",
        FeatureKind::Linear => "linear",
    }
}

fn bonus_source(v: &str) -> std::result::Result<BonusSource, String> {
    match v {
        "exact_count" => Ok(BonusSource::ExactCount),
        "cfn" => Ok(BonusSource::Cfn),
        "none" => Ok(BonusSource::None),
        other => Err(format!("unknown bonus source `{other}` (expected exact_count, cfn or none)")),
    }
}

fn bonus_source_name(b: BonusSource) -> &'static str {
    match b {
        BonusSource::ExactCount => "exact_count",
        BonusSource::Cfn => "cfn",
        BonusSource::None => "none",
    }
}

fn mode_name(m: OptimisticMode) -> &'static str {
    match m {
        OptimisticMode::ExactNorm => "exact_norm",
        OptimisticMode::PointwiseBonus => "pointwise",
    }
}

fn geometry_name(g: Geometry) -> &'static str {
    match g {
        Geometry::Normalized => "normalized",
        Geometry::Unnormalized => "unnormalized",
    }
}
