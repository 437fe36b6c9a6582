//! KL-regularized policy mathematics over finite response sets.
//!
//! Policies are softmax tables, so every expectation over `y ~ π(·|x)` is an
//! exact finite sum and every gradient is taken with respect to the logits.
//! For a row `x`, `∂ log π(y|x) / ∂ logit_k = 1{k=y} − π(k|x)`.

use nalgebra::DVector;

use crate::error::{check_non_negative, check_positive, CopoError, Result};
use crate::linalg::SpdMetric;
use crate::num::{neg_log_sigmoid, sigmoid};
use crate::reward::RewardEstimate;
use crate::rng::RngHandle;
use crate::types::{log_sum_exp, validate_rho, FeatureMap, Policy, PreferenceDataset, PromptId, ResponseId};

/// Gradient with respect to a logit table (same shape as the policy).
pub type LogitGrad = Vec<Vec<f64>>;

pub fn zero_grad(policy: &Policy) -> LogitGrad {
    vec![vec![0.0; policy.n_responses()]; policy.n_prompts()]
}

pub fn grad_norm(g: &LogitGrad) -> f64 {
    g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_table(table: &[Vec<f64>], policy: &Policy) -> Result<()> {
    if table.len() != policy.n_prompts() {
        return Err(CopoError::DimensionMismatch {
            expected: policy.n_prompts(),
            got: table.len(),
        });
    }
    for row in table {
        if row.len() != policy.n_responses() {
            return Err(CopoError::DimensionMismatch {
                expected: policy.n_responses(),
                got: row.len(),
            });
        }
    }
    Ok(())
}

/// `Σ_x ρ(x) Σ_y π(y|x) [r(x,y) − β log(π(y|x)/π_ref(y|x))]`.
pub fn kl_regularized_value(
    rewards: &[Vec<f64>],
    policy: &Policy,
    pi_ref: &Policy,
    beta: f64,
    rho: &[f64],
) -> Result<f64> {
    check_non_negative("beta", beta)?;
    policy.same_shape(pi_ref)?;
    check_table(rewards, policy)?;
    validate_rho(rho, policy.n_prompts())?;
    let mut total = 0.0;
    for (x, &w) in rho.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let x = PromptId(x);
        let p = policy.probs(x);
        let lp = policy.log_probs(x);
        let lq = pi_ref.log_probs(x);
        let row: f64 = (0..p.len())
            .map(|y| p[y] * (rewards[x.0][y] - beta * (lp[y] - lq[y])))
            .sum();
        total += w * row;
    }
    Ok(total)
}

/// Closed-form maximizer of the KL-regularized objective:
/// `π(y|x) ∝ π_ref(y|x) exp(r(x,y)/β)`.
///
/// Stored as `logits_ref + r/β`, so a zero reward reproduces `π_ref` exactly.
pub fn gibbs_policy(rewards: &[Vec<f64>], pi_ref: &Policy, beta: f64) -> Result<Policy> {
    check_positive("beta", beta)?;
    check_table(rewards, pi_ref)?;
    let logits = pi_ref
        .logits()
        .iter()
        .zip(rewards)
        .map(|(l, r)| l.iter().zip(r).map(|(a, b)| a + b / beta).collect())
        .collect();
    Policy::from_logits(logits)
}

/// `log Z(r, x) = log Σ_y π_ref(y|x) exp(r(x,y)/β)`.
pub fn log_partition(rewards: &[Vec<f64>], pi_ref: &Policy, beta: f64, x: PromptId) -> f64 {
    let lq = pi_ref.log_probs(x);
    let terms: Vec<f64> = lq
        .iter()
        .zip(&rewards[x.0])
        .map(|(l, r)| l + r / beta)
        .collect();
    log_sum_exp(&terms)
}

/// `β (log π(y|x) − log π_ref(y|x))`.
pub fn implicit_reward(policy: &Policy, pi_ref: &Policy, beta: f64, x: PromptId, y: ResponseId) -> f64 {
    beta * (policy.log_probs(x)[y.0] - pi_ref.log_probs(x)[y.0])
}

fn check_dataset(policy: &Policy, dataset: &PreferenceDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(CopoError::EmptyDataset);
    }
    if dataset.n_prompts() != policy.n_prompts() || dataset.n_responses() != policy.n_responses() {
        return Err(CopoError::DimensionMismatch {
            expected: policy.n_prompts() * policy.n_responses(),
            got: dataset.n_prompts() * dataset.n_responses(),
        });
    }
    Ok(())
}

/// Summed DPO loss and its gradient over the policy logits.
///
/// For a pair with margin `m = r̂(x,y_w) − r̂(x,y_l)` the per-pair gradient is
/// `−β σ(−m)` on the chosen logit and `+β σ(−m)` on the rejected one; the
/// softmax normalizer cancels between the two log-probabilities.
pub fn dpo_loss_and_grad(
    policy: &Policy,
    pi_ref: &Policy,
    beta: f64,
    dataset: &PreferenceDataset,
) -> Result<(f64, LogitGrad)> {
    check_positive("beta", beta)?;
    policy.same_shape(pi_ref)?;
    check_dataset(policy, dataset)?;
    let lp = policy.log_prob_table();
    let lq = pi_ref.log_prob_table();
    let mut loss = 0.0;
    let mut grad = zero_grad(policy);
    for pair in dataset.iter() {
        let x = pair.x.0;
        let margin = beta
            * ((lp[x][pair.y_w.0] - lq[x][pair.y_w.0]) - (lp[x][pair.y_l.0] - lq[x][pair.y_l.0]));
        loss += neg_log_sigmoid(margin);
        let w = beta * sigmoid(-margin);
        grad[x][pair.y_w.0] -= w;
        grad[x][pair.y_l.0] += w;
    }
    Ok((loss, grad))
}

/// DPO loss alone.
pub fn dpo_loss(policy: &Policy, pi_ref: &Policy, beta: f64, dataset: &PreferenceDataset) -> Result<f64> {
    dpo_loss_and_grad(policy, pi_ref, beta, dataset).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BonusSource {
    ExactCount,
    Cfn,
    None,
}

/// Hyperparameters of the count-regularized DPO objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopoConfig {
    /// KL coefficient.
    pub beta: f64,
    /// Exploration factor.
    pub alpha: f64,
    /// Additive constant inside `1/√(N + λ)`.
    pub lambda_bonus: f64,
    pub bonus_source: BonusSource,
}

impl Default for CopoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 0.1,
            lambda_bonus: 0.01,
            bonus_source: BonusSource::ExactCount,
        }
    }
}

impl CopoConfig {
    /// α = 0.1.
    pub fn llama_preset() -> Self {
        Self::default()
    }

    /// α = 0.01.
    pub fn zephyr_preset() -> Self {
        Self {
            alpha: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("beta", self.beta)?;
        check_non_negative("alpha", self.alpha)?;
        check_non_negative("lambda_bonus", self.lambda_bonus)
    }
}

/// Per-(x, y) exploration bonus, a materialized `1/√(N(x,y) + λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BonusTable {
    values: Vec<Vec<f64>>,
}

impl BonusTable {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    pub fn constant(n_prompts: usize, n_responses: usize, value: f64) -> Self {
        Self::new(vec![vec![value; n_responses]; n_prompts])
    }

    /// `1/√(N(x,y) + λ)` from any count function. `λ = 0` with a zero count
    /// yields `+∞`, so callers should keep `λ > 0` for unseen pairs.
    pub fn from_counts(
        n_prompts: usize,
        n_responses: usize,
        lambda: f64,
        count: impl Fn(PromptId, ResponseId) -> f64,
    ) -> Self {
        Self::new(
            (0..n_prompts)
                .map(|x| {
                    (0..n_responses)
                        .map(|y| 1.0 / (count(PromptId(x), ResponseId(y)) + lambda).sqrt())
                        .collect()
                })
                .collect(),
        )
    }

    pub fn get(&self, x: PromptId, y: ResponseId) -> f64 {
        self.values[x.0][y.0]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Fraction of dataset pairs carrying each prompt: the `x ~ D_t` weights.
pub fn prompt_weights(dataset: &PreferenceDataset) -> Vec<f64> {
    let mut w = vec![0.0; dataset.n_prompts()];
    for p in dataset.iter() {
        w[p.x.0] += 1.0;
    }
    let n = dataset.len() as f64;
    w.iter_mut().for_each(|v| *v /= n);
    w
}

/// `E_{x~D_t, y~π}[bonus(x,y)]`, exact over the finite response set.
pub fn expected_bonus(policy: &Policy, dataset: &PreferenceDataset, bonus: &BonusTable) -> Result<f64> {
    check_dataset(policy, dataset)?;
    check_table(bonus.rows(), policy)?;
    Ok(prompt_weights(dataset)
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, &w)| {
            let p = policy.probs(PromptId(x));
            w * p.iter().zip(&bonus.values[x]).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum())
}

/// `−L_DPO + α E_{x~D_t, y~π}[bonus(x,y)]`.
pub fn copo_objective(
    policy: &Policy,
    pi_ref: &Policy,
    config: &CopoConfig,
    dataset: &PreferenceDataset,
    bonus: &BonusTable,
) -> Result<f64> {
    config.validate()?;
    let loss = dpo_loss(policy, pi_ref, config.beta, dataset)?;
    if config.alpha == 0.0 {
        return Ok(-loss);
    }
    Ok(-loss + config.alpha * expected_bonus(policy, dataset, bonus)?)
}

/// Exact gradient of [`copo_objective`] with respect to the logits.
///
/// The bonus part for row `x` is `α w_x π(k|x) (b(x,k) − Σ_y π(y|x) b(x,y))`.
pub fn copo_gradient(
    policy: &Policy,
    pi_ref: &Policy,
    config: &CopoConfig,
    dataset: &PreferenceDataset,
    bonus: &BonusTable,
) -> Result<LogitGrad> {
    copo_objective_and_gradient(policy, pi_ref, config, dataset, bonus).map(|(_, g)| g)
}

pub fn copo_objective_and_gradient(
    policy: &Policy,
    pi_ref: &Policy,
    config: &CopoConfig,
    dataset: &PreferenceDataset,
    bonus: &BonusTable,
) -> Result<(f64, LogitGrad)> {
    config.validate()?;
    let (loss, mut grad) = dpo_loss_and_grad(policy, pi_ref, config.beta, dataset)?;
    grad.iter_mut().flatten().for_each(|g| *g = -*g);
    if config.alpha == 0.0 {
        return Ok((-loss, grad));
    }
    check_table(bonus.rows(), policy)?;
    let mut bonus_term = 0.0;
    for (x, w) in prompt_weights(dataset).into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = policy.probs(PromptId(x));
        let b = &bonus.values[x];
        let mean: f64 = p.iter().zip(b).map(|(a, c)| a * c).sum();
        bonus_term += w * mean;
        for k in 0..p.len() {
            grad[x][k] += config.alpha * w * p[k] * (b[k] - mean);
        }
    }
    Ok((-loss + config.alpha * bonus_term, grad))
}

/// Score-function estimate of the bonus gradient with responses drawn from
/// `π_ref` and importance weight `exp(r̂(x,y)/β) = π(y|x)/π_ref(y|x)`.
/// Unbiased for the bonus part of [`copo_gradient`] (before the α factor).
pub fn sampled_bonus_gradient(
    policy: &Policy,
    pi_ref: &Policy,
    beta: f64,
    dataset: &PreferenceDataset,
    bonus: &BonusTable,
    samples_per_pair: usize,
    rng: &mut RngHandle,
) -> Result<LogitGrad> {
    check_positive("beta", beta)?;
    check_dataset(policy, dataset)?;
    let mut grad = zero_grad(policy);
    let total = (dataset.len() * samples_per_pair.max(1)) as f64;
    for pair in dataset.iter() {
        let x = pair.x;
        let p = policy.probs(x);
        let q = pi_ref.probs(x);
        for _ in 0..samples_per_pair.max(1) {
            let y = rng.categorical(&q);
            let weight = (implicit_reward(policy, pi_ref, beta, x, ResponseId(y)) / beta).exp()
                * bonus.get(x, ResponseId(y));
            for k in 0..p.len() {
                let score = if k == y { 1.0 } else { 0.0 } - p[k];
                grad[x.0][k] += weight * score / total;
            }
        }
    }
    Ok(grad)
}

/// Settings for logit-space gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    /// Initial step size.
    pub step: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Step multiplier after an accepted step; `1.0` keeps the step fixed
    /// apart from backtracking.
    pub growth: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_steps: 2000,
            grad_tol: 1e-8,
            growth: 1.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub policy: Policy,
    /// Objective after each accepted step; `trace[0]` is the starting value.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl AscentResult {
    pub fn value(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Monotone gradient ascent with backtracking on the logits. A step is
/// accepted only if the objective does not decrease.
pub fn ascend<F>(init: Policy, cfg: &AscentConfig, mut objective: F) -> AscentResult
where
    F: FnMut(&Policy) -> (f64, LogitGrad),
{
    let mut policy = init;
    let (mut value, mut grad) = objective(&policy);
    let mut trace = vec![value];
    let mut step = cfg.step;
    let mut converged = false;
    for _ in 0..cfg.max_steps {
        if grad_norm(&grad) < cfg.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = policy.clone();
            for (row, g) in cand.logits_mut().iter_mut().zip(&grad) {
                for (l, d) in row.iter_mut().zip(g) {
                    *l += step * d;
                }
            }
            let (v, g) = objective(&cand);
            if v.is_finite() && v >= value {
                policy = cand;
                value = v;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            converged = true;
            break;
        }
        trace.push(value);
        step = (step * cfg.growth).min(1e6);
    }
    if !converged && grad_norm(&grad) < cfg.grad_tol {
        converged = true;
    }
    AscentResult {
        policy,
        trace,
        converged,
    }
}

/// Gradient ascent on the count-regularized DPO objective from `policy`.
pub fn optimize_copo(
    policy: &Policy,
    pi_ref: &Policy,
    config: &CopoConfig,
    dataset: &PreferenceDataset,
    bonus: &BonusTable,
    opt: &AscentConfig,
) -> Result<AscentResult> {
    // validates shapes once up front
    copo_objective_and_gradient(policy, pi_ref, config, dataset, bonus)?;
    Ok(ascend(policy.clone(), opt, |p| {
        copo_objective_and_gradient(p, pi_ref, config, dataset, bonus)
            .expect("shapes validated before ascent")
    }))
}

/// How the optimistic objective is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimisticMode {
    /// Ascent on `J_β(π) + ξ ‖E φ‖_{(Σ+λI)^{-1}}`.
    ExactNorm,
    /// Closed-form Gibbs policy on `θ̂ᵀφ + ξ ‖φ‖_{(Σ+λI)^{-1}}`.
    PointwiseBonus,
}

impl std::str::FromStr for OptimisticMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact_norm" | "exact-norm" => Ok(Self::ExactNorm),
            "pointwise" | "pointwise_bonus" | "pointwise-bonus" => Ok(Self::PointwiseBonus),
            other => Err(format!("unknown optimistic mode `{other}`")),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn optimistic_value_and_grad(
    policy: &Policy,
    rewards: &[Vec<f64>],
    xi: f64,
    metric: &SpdMetric,
    beta: f64,
    pi_ref: &Policy,
    fm: &FeatureMap,
    rho: &[f64],
) -> (f64, LogitGrad) {
    let mu = fm.expected_feature(policy, rho);
    let w = metric.solve(&mu);
    let norm = mu.dot(&w).max(0.0).sqrt();
    let mut value = xi * norm;
    let mut grad = zero_grad(policy);
    for (x, &rx) in rho.iter().enumerate() {
        if rx == 0.0 {
            continue;
        }
        let xid = PromptId(x);
        let p = policy.probs(xid);
        let lp = policy.log_probs(xid);
        let lq = pi_ref.log_probs(xid);
        let base: Vec<f64> = (0..p.len())
            .map(|y| rewards[x][y] - beta * (lp[y] - lq[y]))
            .collect();
        value += rx * p.iter().zip(&base).map(|(a, b)| a * b).sum::<f64>();
        // d‖μ‖/dπ(y|x) = ρ(x) wᵀφ(x,y) / ‖μ‖
        let g: Vec<f64> = (0..p.len())
            .map(|y| {
                let ucb = if norm > 0.0 {
                    xi * w.dot(fm.phi(xid, ResponseId(y))) / norm
                } else {
                    0.0
                };
                base[y] + ucb
            })
            .collect();
        let gbar: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for k in 0..p.len() {
            grad[x][k] = rx * p[k] * (g[k] - gbar);
        }
    }
    (value, grad)
}

/// `Ĵ_β(π) = E[φᵀθ̂] − β E[KL(π‖π_ref)] + ξ ‖E φ‖_{(Σ+λI)^{-1}}`.
pub fn optimistic_value(
    policy: &Policy,
    estimate: &RewardEstimate,
    beta: f64,
    pi_ref: &Policy,
    fm: &FeatureMap,
    rho: &[f64],
) -> Result<f64> {
    check_positive("beta", beta)?;
    let rewards = fm.reward_table(&estimate.theta_hat.theta);
    let base = kl_regularized_value(&rewards, policy, pi_ref, beta, rho)?;
    let metric = estimate.metric()?;
    let mu = fm.expected_feature(policy, rho);
    Ok(base + estimate.xi * metric.inv_norm(&mu))
}

/// `θ̂ᵀφ(x,y) + ξ ‖φ(x,y)‖_{(Σ+λI)^{-1}}`.
pub fn pointwise_optimistic_rewards(estimate: &RewardEstimate, fm: &FeatureMap) -> Result<Vec<Vec<f64>>> {
    let metric = estimate.metric()?;
    let mut rewards = fm.reward_table(&estimate.theta_hat.theta);
    if estimate.xi > 0.0 {
        for (x, row) in rewards.iter_mut().enumerate() {
            for (y, r) in row.iter_mut().enumerate() {
                *r += estimate.xi * metric.inv_norm(fm.phi(PromptId(x), ResponseId(y)));
            }
        }
    }
    Ok(rewards)
}

/// Approximate `argmax_π Ĵ_β(π)`.
///
/// `ExactNorm` runs ascent from three starts (π_ref, the Gibbs policy on θ̂,
/// and the pointwise-bonus Gibbs policy) and keeps the best, since the UCB
/// norm makes the objective non-concave.
pub fn maximize_optimistic(
    estimate: &RewardEstimate,
    beta: f64,
    pi_ref: &Policy,
    fm: &FeatureMap,
    rho: &[f64],
    mode: OptimisticMode,
    opt: &AscentConfig,
) -> Result<Policy> {
    check_positive("beta", beta)?;
    validate_rho(rho, fm.n_prompts())?;
    let rewards = fm.reward_table(&estimate.theta_hat.theta);
    let plain = gibbs_policy(&rewards, pi_ref, beta)?;
    if estimate.xi == 0.0 {
        return Ok(plain);
    }
    let pointwise = gibbs_policy(&pointwise_optimistic_rewards(estimate, fm)?, pi_ref, beta)?;
    match mode {
        OptimisticMode::PointwiseBonus => Ok(pointwise),
        OptimisticMode::ExactNorm => {
            let metric = estimate.metric()?;
            let run = |start: Policy| {
                ascend(start, opt, |p| {
                    optimistic_value_and_grad(p, &rewards, estimate.xi, &metric, beta, pi_ref, fm, rho)
                })
            };
            let best = [pi_ref.clone(), plain, pointwise]
                .into_iter()
                .map(run)
                .fold(None::<AscentResult>, |best, r| match best {
                    Some(b) if b.value() >= r.value() => Some(b),
                    _ => Some(r),
                })
                .expect("three starts");
            Ok(best.policy)
        }
    }
}

/// Both sides of the tabular count identity, plus the norm of the expected
/// feature for comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbEquivalence {
    /// `E_{x~ρ, y~π} ‖φ(x,y)‖_{(Σ+λI)^{-1}}` via linear solves on the Gram matrix.
    pub expected_norm: f64,
    /// `E_{x~ρ, y~π} 1/√(N(x,y) + λ)` from dataset counts.
    pub count_form: f64,
    /// `‖E_{x~ρ, y~π} φ(x,y)‖_{(Σ+λI)^{-1}}`; equals the other two for
    /// deterministic `ρ` and `π`, and is smaller otherwise.
    pub norm_of_expectation: f64,
}

/// Builds `Σ = Σ_i φ(x_i,y_w)φᵀ + φ(x_i,y_l)φᵀ` (unnormalized, single
/// features) and evaluates both sides of the count identity.
pub fn tabular_ucb_equivalence_check(
    policy: &Policy,
    dataset: &PreferenceDataset,
    fm: &FeatureMap,
    lambda: f64,
    rho: &[f64],
) -> Result<UcbEquivalence> {
    if !fm.is_tabular() {
        return Err(CopoError::NotTabular);
    }
    check_positive("lambda", lambda)?;
    validate_rho(rho, fm.n_prompts())?;
    let d = fm.dim();
    let mut gram = nalgebra::DMatrix::zeros(d, d);
    for pair in dataset.iter() {
        for y in [pair.y_w, pair.y_l] {
            let phi = fm.phi(pair.x, y);
            gram.ger(1.0, phi, phi, 1.0);
        }
    }
    let metric = SpdMetric::new(&gram, lambda)?;
    let mut expected_norm = 0.0;
    let mut count_form = 0.0;
    for (x, &rx) in rho.iter().enumerate() {
        let p = policy.probs(PromptId(x));
        for (y, &py) in p.iter().enumerate() {
            let (xi, yi) = (PromptId(x), ResponseId(y));
            expected_norm += rx * py * metric.inv_norm(fm.phi(xi, yi));
            count_form += rx * py / (dataset.count(xi, yi) as f64 + lambda).sqrt();
        }
    }
    let mu: DVector<f64> = fm.expected_feature(policy, rho);
    Ok(UcbEquivalence {
        expected_norm,
        count_form,
        norm_of_expectation: metric.inv_norm(&mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{ConfidenceParams, Geometry};
    use crate::types::{FeatureKind, PreferencePair, RewardParams};
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut RngHandle) -> f64 {
        StandardNormal.sample(rng)
    }

    fn random_policy(nx: usize, ny: usize, scale: f64, rng: &mut RngHandle) -> Policy {
        Policy::from_logits((0..nx).map(|_| (0..ny).map(|_| scale * normal(rng)).collect()).collect()).unwrap()
    }

    fn random_table(nx: usize, ny: usize, rng: &mut RngHandle) -> Vec<Vec<f64>> {
        (0..nx).map(|_| (0..ny).map(|_| normal(rng)).collect()).collect()
    }

    fn random_dataset(nx: usize, ny: usize, n: usize, rng: &mut RngHandle) -> PreferenceDataset {
        let mut d = PreferenceDataset::new(nx, ny);
        while d.len() < n {
            let (a, b) = (rng.below(ny), rng.below(ny));
            if a != b {
                d.push(PreferencePair::new(PromptId(rng.below(nx)), ResponseId(a), ResponseId(b)).unwrap())
                    .unwrap();
            }
        }
        d
    }

    /// Worst relative error of `grad` against central differences of `f`.
    fn fd_error(policy: &Policy, grad: &LogitGrad, f: impl Fn(&Policy) -> f64) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for x in 0..policy.n_prompts() {
            for y in 0..policy.n_responses() {
                let mut up = policy.clone();
                up.logits_mut()[x][y] += h;
                let mut down = policy.clone();
                down.logits_mut()[x][y] -= h;
                let numeric = (f(&up) - f(&down)) / (2.0 * h);
                let scale = grad[x][y].abs().max(numeric.abs()).max(1e-4);
                worst = worst.max((numeric - grad[x][y]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn gibbs_examples() {
        let mut rng = RngHandle::new(1);
        let pi_ref = random_policy(3, 4, 1.0, &mut rng);
        let zero = vec![vec![0.0; 4]; 3];
        assert_eq!(gibbs_policy(&zero, &pi_ref, 0.3).unwrap(), pi_ref);
        let constant = vec![vec![2.5; 4]; 3];
        let shifted = gibbs_policy(&constant, &pi_ref, 0.3).unwrap();
        for x in 0..3 {
            let (a, b) = (shifted.probs(PromptId(x)), pi_ref.probs(PromptId(x)));
            for y in 0..4 {
                assert!((a[y] - b[y]).abs() < 1e-12);
            }
        }
        let sharp = gibbs_policy(&[vec![0.0, 1.0, 0.0]], &Policy::uniform(1, 3), 0.01).unwrap();
        assert!(sharp.probs(PromptId(0))[1] > 0.999);
        let r = random_table(3, 4, &mut rng);
        let g = gibbs_policy(&r, &pi_ref, 0.7).unwrap();
        for x in 0..3 {
            assert!((g.probs(PromptId(x)).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // exact form through the partition function
            let lz = log_partition(&r, &pi_ref, 0.7, PromptId(x));
            let lq = pi_ref.log_probs(PromptId(x));
            for y in 0..4 {
                let want = (lq[y] + r[x][y] / 0.7 - lz).exp();
                assert!((g.probs(PromptId(x))[y] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn implicit_reward_examples() {
        let mut rng = RngHandle::new(2);
        let pi_ref = random_policy(2, 5, 1.0, &mut rng);
        for x in 0..2 {
            for y in 0..5 {
                assert_eq!(implicit_reward(&pi_ref, &pi_ref, 0.5, PromptId(x), ResponseId(y)), 0.0);
            }
        }
        let r = random_table(2, 5, &mut rng);
        let g = gibbs_policy(&r, &pi_ref, 0.5).unwrap();
        for x in 0..2 {
            let xi = PromptId(x);
            for (a, b) in [(0, 1), (2, 4), (3, 0)] {
                let diff = implicit_reward(&g, &pi_ref, 0.5, xi, ResponseId(a))
                    - implicit_reward(&g, &pi_ref, 0.5, xi, ResponseId(b));
                assert!((diff - (r[x][a] - r[x][b])).abs() < 1e-10);
            }
            // per-prompt offset is β log Z
            let offset = implicit_reward(&g, &pi_ref, 0.5, xi, ResponseId(0)) - r[x][0];
            assert!((offset + 0.5 * log_partition(&r, &pi_ref, 0.5, xi)).abs() < 1e-10);
        }
        let pi = random_policy(2, 5, 2.0, &mut rng);
        for x in 0..2 {
            let lse = |l: &[f64]| l.iter().map(|v| v.exp()).sum::<f64>().ln();
            let (lp, lq) = (&pi.logits()[x], &pi_ref.logits()[x]);
            for y in 0..5 {
                let want = 0.5 * ((lp[y] - lse(lp)) - (lq[y] - lse(lq)));
                assert!((implicit_reward(&pi, &pi_ref, 0.5, PromptId(x), ResponseId(y)) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dpo_examples() {
        let mut rng = RngHandle::new(3);
        let pi_ref = random_policy(2, 4, 1.0, &mut rng);
        let data = random_dataset(2, 4, 9, &mut rng);
        let loss = dpo_loss(&pi_ref, &pi_ref, 0.1, &data).unwrap();
        assert!((loss - 9.0 * 2f64.ln()).abs() < 1e-12);

        let one = PreferenceDataset::from_pairs(1, 2, [PreferencePair::new(PromptId(0), ResponseId(0), ResponseId(1)).unwrap()])
            .unwrap();
        let uniform = Policy::uniform(1, 2);
        let sep = Policy::from_logits(vec![vec![250.0, -250.0]]).unwrap();
        // β = 0.1 and a logit gap of 500 give margin 50
        assert!(dpo_loss(&sep, &uniform, 0.1, &one).unwrap() < 1e-20);
        assert_eq!(
            dpo_loss(&uniform, &uniform, 0.1, &PreferenceDataset::new(1, 2)),
            Err(CopoError::EmptyDataset)
        );
    }

    #[test]
    fn dpo_gradient_matches_finite_differences() {
        let mut rng = RngHandle::new(4);
        for _ in 0..10 {
            let pi = random_policy(3, 4, 1.0, &mut rng);
            let pi_ref = random_policy(3, 4, 1.0, &mut rng);
            let data = random_dataset(3, 4, 12, &mut rng);
            let (_, g) = dpo_loss_and_grad(&pi, &pi_ref, 0.3, &data).unwrap();
            let err = fd_error(&pi, &g, |p| dpo_loss(p, &pi_ref, 0.3, &data).unwrap());
            assert!(err < 1e-5, "{err}");
        }
    }

    fn count_bonus(data: &PreferenceDataset, lambda: f64) -> BonusTable {
        BonusTable::from_counts(data.n_prompts(), data.n_responses(), lambda, |x, y| data.count(x, y) as f64)
    }

    #[test]
    fn copo_objective_examples() {
        let mut rng = RngHandle::new(5);
        let pi = random_policy(3, 4, 1.0, &mut rng);
        let pi_ref = random_policy(3, 4, 1.0, &mut rng);
        let data = random_dataset(3, 4, 15, &mut rng);
        let bonus = count_bonus(&data, 0.01);
        let off = CopoConfig {
            alpha: 0.0,
            ..CopoConfig::default()
        };
        assert_eq!(
            copo_objective(&pi, &pi_ref, &off, &data, &bonus).unwrap(),
            -dpo_loss(&pi, &pi_ref, off.beta, &data).unwrap()
        );

        let cfg = CopoConfig {
            alpha: 0.3,
            ..CopoConfig::default()
        };
        let flat = BonusTable::constant(3, 4, 1.0 / (5.0f64 + 0.01).sqrt());
        let v = copo_objective(&pi, &pi_ref, &cfg, &data, &flat).unwrap() + dpo_loss(&pi, &pi_ref, cfg.beta, &data).unwrap();
        assert!((v - 0.3 / 5.01f64.sqrt()).abs() < 1e-14);

        // brute force over the pairs of D_t
        let mut brute = 0.0;
        for pair in data.iter() {
            let p = pi.probs(pair.x);
            for y in 0..4 {
                brute += p[y] * bonus.get(pair.x, ResponseId(y)) / data.len() as f64;
            }
        }
        let v = copo_objective(&pi, &pi_ref, &cfg, &data, &bonus).unwrap() + dpo_loss(&pi, &pi_ref, cfg.beta, &data).unwrap();
        assert!((v - 0.3 * brute).abs() < 1e-12);
    }

    #[test]
    fn copo_gradient_examples() {
        let mut rng = RngHandle::new(6);
        for trial in 0..10 {
            let pi = random_policy(3, 5, 1.0, &mut rng);
            let pi_ref = random_policy(3, 5, 1.0, &mut rng);
            let data = random_dataset(3, 5, 20, &mut rng);
            let bonus = count_bonus(&data, 0.5);
            let cfg = CopoConfig {
                alpha: 0.7,
                ..CopoConfig::default()
            };
            let g = copo_gradient(&pi, &pi_ref, &cfg, &data, &bonus).unwrap();
            let err = fd_error(&pi, &g, |p| copo_objective(p, &pi_ref, &cfg, &data, &bonus).unwrap());
            assert!(err < 1e-5, "trial {trial}: {err}");

            let off = CopoConfig { alpha: 0.0, ..cfg };
            let g0 = copo_gradient(&pi, &pi_ref, &off, &data, &bonus).unwrap();
            let (_, gd) = dpo_loss_and_grad(&pi, &pi_ref, cfg.beta, &data).unwrap();
            for (a, b) in g0.iter().flatten().zip(gd.iter().flatten()) {
                assert_eq!(*a, -*b);
            }

            let flat = BonusTable::constant(3, 5, 0.4);
            let with = copo_gradient(&pi, &pi_ref, &cfg, &data, &flat).unwrap();
            for (a, b) in with.iter().flatten().zip(gd.iter().flatten()) {
                assert!((a + b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sampled_gradient_is_unbiased() {
        let mut rng = RngHandle::new(7);
        let pi = random_policy(2, 3, 0.5, &mut rng);
        let pi_ref = random_policy(2, 3, 0.5, &mut rng);
        let data = random_dataset(2, 3, 6, &mut rng);
        let bonus = count_bonus(&data, 0.5);
        let cfg = CopoConfig {
            alpha: 1.0,
            ..CopoConfig::default()
        };
        let exact = copo_gradient(&pi, &pi_ref, &cfg, &data, &bonus).unwrap();
        let (_, gd) = dpo_loss_and_grad(&pi, &pi_ref, cfg.beta, &data).unwrap();
        let reps = 400;
        let mut runs = Vec::new();
        for _ in 0..reps {
            runs.push(sampled_bonus_gradient(&pi, &pi_ref, cfg.beta, &data, &bonus, 50, &mut rng).unwrap());
        }
        for x in 0..2 {
            for y in 0..3 {
                let vals: Vec<f64> = runs.iter().map(|g| g[x][y]).collect();
                let mean = vals.iter().sum::<f64>() / reps as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
                let se = (var / reps as f64).sqrt();
                let want = exact[x][y] + gd[x][y];
                assert!((mean - want).abs() < 4.0 * se + 1e-12, "({x},{y}): {mean} vs {want} se {se}");
            }
        }
    }

    #[test]
    fn optimize_examples() {
        let mut rng = RngHandle::new(8);
        let pi_ref = Policy::uniform(2, 4);
        let data = random_dataset(2, 4, 10, &mut rng);
        let bonus = count_bonus(&data, 0.01);

        let frozen = optimize_copo(
            &pi_ref,
            &pi_ref,
            &CopoConfig::default(),
            &data,
            &bonus,
            &AscentConfig {
                max_steps: 0,
                ..AscentConfig::default()
            },
        )
        .unwrap();
        assert_eq!(frozen.policy, pi_ref);

        let off = CopoConfig {
            alpha: 0.0,
            ..CopoConfig::default()
        };
        let res = optimize_copo(&pi_ref, &pi_ref, &off, &data, &bonus, &AscentConfig::default()).unwrap();
        assert!(res.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let best = dpo_loss(&res.policy, &pi_ref, off.beta, &data).unwrap();
        for _ in 0..100 {
            let r = random_policy(2, 4, 3.0, &mut rng);
            assert!(best <= dpo_loss(&r, &pi_ref, off.beta, &data).unwrap());
        }

        let greedy = CopoConfig {
            alpha: 1e3,
            ..CopoConfig::default()
        };
        let res = optimize_copo(&pi_ref, &pi_ref, &greedy, &data, &bonus, &AscentConfig::default()).unwrap();
        let w = prompt_weights(&data);
        for x in 0..2 {
            if w[x] == 0.0 {
                continue;
            }
            let counts: Vec<u64> = (0..4).map(|y| data.count(PromptId(x), ResponseId(y))).collect();
            let min = *counts.iter().min().unwrap();
            let p = res.policy.probs(PromptId(x));
            let argmax = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            assert_eq!(counts[argmax], min, "prompt {x}: {p:?} vs {counts:?}");
        }
    }

    #[test]
    fn bonus_pressure_is_monotone_in_alpha() {
        let mut rng = RngHandle::new(9);
        for _ in 0..5 {
            let pi_ref = Policy::uniform(3, 4);
            // both orders of every pair keep the DPO optimum finite
            let mut data = random_dataset(3, 4, 15, &mut rng);
            let reversed: Vec<PreferencePair> = data.iter().map(|p| PreferencePair::new(p.x, p.y_l, p.y_w).unwrap()).collect();
            for p in reversed {
                data.push(p).unwrap();
            }
            let bonus = count_bonus(&data, 0.01);
            let tight = AscentConfig {
                max_steps: 20_000,
                grad_tol: 1e-13,
                ..AscentConfig::default()
            };
            let mut last = f64::NEG_INFINITY;
            for alpha in [0.0, 0.01, 0.1, 0.5] {
                let cfg = CopoConfig {
                    alpha,
                    ..CopoConfig::default()
                };
                let res = optimize_copo(&pi_ref, &pi_ref, &cfg, &data, &bonus, &tight).unwrap();
                let b = expected_bonus(&res.policy, &data, &bonus).unwrap();
                assert!(b >= last - 1e-9, "alpha {alpha}: {b} < {last}");
                last = b;
            }
        }
    }

    #[test]
    fn gibbs_is_optimal() {
        let mut rng = RngHandle::new(10);
        let rho = [0.2, 0.5, 0.3];
        for _ in 0..5 {
            let r = random_table(3, 4, &mut rng);
            let pi_ref = random_policy(3, 4, 1.0, &mut rng);
            let beta = 0.5;
            let g = gibbs_policy(&r, &pi_ref, beta).unwrap();
            let best = kl_regularized_value(&r, &g, &pi_ref, beta, &rho).unwrap();
            for _ in 0..200 {
                let p = random_policy(3, 4, 2.0, &mut rng);
                assert!(kl_regularized_value(&r, &p, &pi_ref, beta, &rho).unwrap() <= best + 1e-12);
            }
            let res = ascend(Policy::uniform(3, 4), &AscentConfig::default(), |p| {
                let v = kl_regularized_value(&r, p, &pi_ref, beta, &rho).unwrap();
                let mut grad = zero_grad(p);
                for x in 0..3 {
                    let xi = PromptId(x);
                    let (pr, lp, lq) = (p.probs(xi), p.log_probs(xi), pi_ref.log_probs(xi));
                    let a: Vec<f64> = (0..4).map(|y| r[x][y] - beta * (lp[y] - lq[y])).collect();
                    let abar: f64 = (0..4).map(|y| pr[y] * a[y]).sum();
                    for k in 0..4 {
                        grad[x][k] = rho[x] * pr[k] * (a[k] - abar);
                    }
                }
                (v, grad)
            });
            assert!((res.value() - best).abs() < 1e-6);
        }
    }

    fn tabular_estimate(theta: Vec<f64>, sigma: DMatrix<f64>, xi: f64, lambda: f64) -> RewardEstimate {
        let bound = 10.0;
        RewardEstimate {
            theta_hat: RewardParams {
                theta: DVector::from_vec(theta),
                bound,
            },
            sigma,
            n: 1,
            xi,
            params: ConfidenceParams {
                lambda,
                bound,
                ..ConfidenceParams::default()
            },
            geometry: Geometry::Unnormalized,
        }
    }

    fn tab(nx: usize, ny: usize) -> FeatureMap {
        FeatureMap::build(FeatureKind::Tabular, nx, ny, 0, &mut RngHandle::new(0)).unwrap()
    }

    #[test]
    fn optimistic_value_examples() {
        let mut rng = RngHandle::new(11);
        let fm = tab(2, 3);
        let theta: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
        let rho = [0.4, 0.6];
        let pi = random_policy(2, 3, 1.0, &mut rng);
        let pi_ref = random_policy(2, 3, 1.0, &mut rng);
        let plain = kl_regularized_value(&fm.reward_table(&DVector::from_vec(theta.clone())), &pi, &pi_ref, 0.2, &rho).unwrap();
        let est0 = tabular_estimate(theta.clone(), DMatrix::zeros(6, 6), 0.0, 1.0);
        assert_eq!(optimistic_value(&pi, &est0, 0.2, &pi_ref, &fm, &rho).unwrap(), plain);
        let est = tabular_estimate(theta.clone(), DMatrix::zeros(6, 6), 0.8, 1.0);
        let mu = fm.expected_feature(&pi, &rho);
        let v = optimistic_value(&pi, &est, 0.2, &pi_ref, &fm, &rho).unwrap();
        assert!((v - plain - 0.8 * mu.norm()).abs() < 1e-14);

        let mut sigma = DMatrix::from_fn(6, 6, |_, _| normal(&mut rng));
        sigma = &sigma * sigma.transpose();
        let est = tabular_estimate(theta, sigma.clone(), 0.8, 0.5);
        let ucb = crate::reward::ucb_expectation_norm(&pi, &fm, &sigma, 0.5, &rho).unwrap();
        let v = optimistic_value(&pi, &est, 0.2, &pi_ref, &fm, &rho).unwrap();
        assert!((v - plain - 0.8 * ucb).abs() < 1e-12);
        assert!(v >= plain);
    }

    #[test]
    fn optimistic_gradient_matches_finite_differences() {
        let mut rng = RngHandle::new(12);
        let fm = FeatureMap::build(FeatureKind::Linear, 2, 4, 3, &mut rng).unwrap();
        let rho = [0.3, 0.7];
        for _ in 0..5 {
            let theta: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
            let mut sigma = DMatrix::from_fn(3, 3, |_, _| normal(&mut rng));
            sigma = &sigma * sigma.transpose();
            let est = tabular_estimate(theta, sigma, 1.3, 0.5);
            let pi = random_policy(2, 4, 1.0, &mut rng);
            let pi_ref = random_policy(2, 4, 1.0, &mut rng);
            let metric = est.metric().unwrap();
            let rewards = fm.reward_table(&est.theta_hat.theta);
            let (v, g) = optimistic_value_and_grad(&pi, &rewards, est.xi, &metric, 0.4, &pi_ref, &fm, &rho);
            assert!((v - optimistic_value(&pi, &est, 0.4, &pi_ref, &fm, &rho).unwrap()).abs() < 1e-12);
            let err = fd_error(&pi, &g, |p| optimistic_value(p, &est, 0.4, &pi_ref, &fm, &rho).unwrap());
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn maximize_optimistic_examples() {
        let mut rng = RngHandle::new(13);
        let fm = tab(2, 3);
        let rho = [0.5, 0.5];
        let pi_ref = random_policy(2, 3, 0.5, &mut rng);
        let theta: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
        let gibbs = gibbs_policy(&fm.reward_table(&DVector::from_vec(theta.clone())), &pi_ref, 0.3).unwrap();
        let est0 = tabular_estimate(theta.clone(), DMatrix::zeros(6, 6), 0.0, 1.0);
        for mode in [OptimisticMode::ExactNorm, OptimisticMode::PointwiseBonus] {
            let p = maximize_optimistic(&est0, 0.3, &pi_ref, &fm, &rho, mode, &AscentConfig::default()).unwrap();
            assert_eq!(p, gibbs);
        }

        // equal counts: the pointwise bonus is a constant
        let equal = tabular_estimate(theta.clone(), DMatrix::identity(6, 6) * 7.0, 2.0, 1.0);
        let p = maximize_optimistic(&equal, 0.3, &pi_ref, &fm, &rho, OptimisticMode::PointwiseBonus, &AscentConfig::default())
            .unwrap();
        for x in 0..2 {
            let (a, b) = (p.probs(PromptId(x)), gibbs.probs(PromptId(x)));
            for y in 0..3 {
                assert!((a[y] - b[y]).abs() < 1e-12);
            }
        }

        let mut sigma = DMatrix::zeros(6, 6);
        for k in 0..6 {
            sigma[(k, k)] = rng.below(5) as f64;
        }
        let est = tabular_estimate(theta, sigma, 0.7, 1.0);
        let best = maximize_optimistic(&est, 0.3, &pi_ref, &fm, &rho, OptimisticMode::ExactNorm, &AscentConfig::default())
            .unwrap();
        let v = optimistic_value(&best, &est, 0.3, &pi_ref, &fm, &rho).unwrap();
        for _ in 0..1000 {
            let p = random_policy(2, 3, 2.0, &mut rng);
            assert!(optimistic_value(&p, &est, 0.3, &pi_ref, &fm, &rho).unwrap() <= v + 1e-9);
        }
        // the pointwise policy's value stays below the exact maximum
        let pw = maximize_optimistic(&est, 0.3, &pi_ref, &fm, &rho, OptimisticMode::PointwiseBonus, &AscentConfig::default())
            .unwrap();
        assert!(optimistic_value(&pw, &est, 0.3, &pi_ref, &fm, &rho).unwrap() <= v + 1e-9);
    }

    #[test]
    fn optimism_dominates_true_value() {
        let mut rng = RngHandle::new(14);
        let fm = FeatureMap::build(FeatureKind::Linear, 3, 4, 4, &mut rng).unwrap();
        let rho = crate::types::uniform_rho(3);
        let pi_ref = Policy::uniform(3, 4);
        for _ in 0..20 {
            let star: DVector<f64> = DVector::from_fn(4, |_, _| normal(&mut rng));
            let hat: DVector<f64> = &star + DVector::from_fn(4, |_, _| 0.3 * normal(&mut rng));
            let mut sigma = DMatrix::from_fn(4, 4, |_, _| normal(&mut rng));
            sigma = &sigma * sigma.transpose();
            let mut est = tabular_estimate(hat.as_slice().to_vec(), sigma, 0.0, 0.5);
            // radius chosen so that θ* is inside the ellipsoid
            est.xi = est.error_norm(&star);
            let truth = fm.reward_table(&star);
            for _ in 0..20 {
                let p = random_policy(3, 4, 1.5, &mut rng);
                let opt = optimistic_value(&p, &est, 0.2, &pi_ref, &fm, &rho).unwrap();
                let tv = kl_regularized_value(&truth, &p, &pi_ref, 0.2, &rho).unwrap();
                assert!(opt >= tv - 1e-12);
            }
        }
    }

    #[test]
    fn count_identity_examples() {
        let fm = tab(1, 2);
        let point = Policy::from_logits(vec![vec![800.0, 0.0]]).unwrap();
        let empty = PreferenceDataset::new(1, 2);
        let r = tabular_ucb_equivalence_check(&point, &empty, &fm, 1.0, &[1.0]).unwrap();
        assert!((r.expected_norm - 1.0).abs() < 1e-12 && (r.count_form - 1.0).abs() < 1e-12);

        let mut data = PreferenceDataset::new(1, 3);
        for _ in 0..3 {
            data.push(PreferencePair::new(PromptId(0), ResponseId(0), ResponseId(1)).unwrap()).unwrap();
        }
        let fm3 = tab(1, 3);
        let point = Policy::from_logits(vec![vec![800.0, 0.0, 0.0]]).unwrap();
        let r = tabular_ucb_equivalence_check(&point, &data, &fm3, 1.0, &[1.0]).unwrap();
        for v in [r.expected_norm, r.count_form, r.norm_of_expectation] {
            assert!((v - 0.5).abs() < 1e-12, "{r:?}");
        }

        let mut rng = RngHandle::new(15);
        let fm = tab(3, 4);
        let data = random_dataset(3, 4, 50, &mut rng);
        let pi = random_policy(3, 4, 1.0, &mut rng);
        let rho = crate::types::uniform_rho(3);
        let r = tabular_ucb_equivalence_check(&pi, &data, &fm, 4.0, &rho).unwrap();
        assert!((r.expected_norm - r.count_form).abs() < 1e-10);
        assert!(r.norm_of_expectation <= r.expected_norm + 1e-12);

        let lin = FeatureMap::build(FeatureKind::Linear, 3, 4, 2, &mut rng).unwrap();
        assert_eq!(
            tabular_ucb_equivalence_check(&pi, &data, &lin, 1.0, &rho),
            Err(CopoError::NotTabular)
        );
    }

    #[test]
    fn config_validation() {
        assert!(CopoConfig::default().validate().is_ok());
        assert_eq!(CopoConfig::zephyr_preset().alpha, 0.01);
        assert_eq!(CopoConfig::llama_preset().alpha, 0.1);
        for bad in [
            CopoConfig { beta: 0.0, ..CopoConfig::default() },
            CopoConfig { alpha: -1.0, ..CopoConfig::default() },
            CopoConfig { lambda_bonus: -0.1, ..CopoConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!("exact_norm".parse::<OptimisticMode>().is_ok());
        assert!("nope".parse::<OptimisticMode>().is_err());
    }
}
