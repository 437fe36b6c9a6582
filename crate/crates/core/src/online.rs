//! Online loops: iterative count-regularized DPO over a partitioned seed
//! dataset, the optimistic regret experiment, and a single-shot
//! suboptimality bound check.

use std::time::Instant;

use crate::counting::{build_cfn_dataset, cfn_bonus_table, cfn_train, CfnDataset, CfnTrainConfig, CoinFlipNet, ExactCounter};
use crate::env::BanditEnv;
use crate::error::{check_positive, CopoError, Result};
use crate::num::ols_slope;
use crate::policy::{
    dpo_loss, expected_bonus, maximize_optimistic, optimize_copo, AscentConfig, BonusSource, BonusTable,
    CopoConfig, OptimisticMode,
};
use crate::reward::{fit_mle, ConfidenceParams, Geometry, MleConfig, RewardEstimate};
use crate::rng::RngHandle;
use crate::types::{Policy, PreferenceDataset, PromptId, ResponseId, RewardParams};

const CFN_STREAM: u64 = 0xC0FF;

/// Fixed comparator: the Gibbs-optimal policy on `θ*` for a given anchor.
#[derive(Debug, Clone)]
pub struct Comparator {
    pub pi_ref: Policy,
    pub beta: f64,
    pub optimal: Policy,
    pub optimal_value: f64,
}

impl Comparator {
    pub fn new(env: &BanditEnv, pi_ref: &Policy, beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        let optimal = env.optimal_policy(pi_ref, beta)?;
        let optimal_value = env.true_value(&optimal, beta, pi_ref)?;
        Ok(Self {
            pi_ref: pi_ref.clone(),
            beta,
            optimal,
            optimal_value,
        })
    }

    pub fn value(&self, env: &BanditEnv, policy: &Policy) -> Result<f64> {
        env.true_value(policy, self.beta, &self.pi_ref)
    }

    /// `J*_β(π*) − J*_β(π)`.
    pub fn suboptimality(&self, env: &BanditEnv, policy: &Policy) -> Result<f64> {
        Ok(self.optimal_value - self.value(env, policy)?)
    }
}

/// Gap between the Gibbs-optimal policy and `policy`, both measured against
/// the same anchor `pi_ref`.
pub fn suboptimality(env: &BanditEnv, policy: &Policy, beta: f64, pi_ref: &Policy) -> Result<f64> {
    Comparator::new(env, pi_ref, beta)?.suboptimality(env, policy)
}

/// Seed data whose responses come from a small covered subset per prompt.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub dataset: PreferenceDataset,
    /// Covered responses of each prompt, ascending.
    pub covered: Vec<Vec<ResponseId>>,
}

/// Draws `n_pairs` Bradley-Terry labelled pairs. Each prompt covers
/// `max(2, round(coverage·|Y|))` random responses and pairs only use those.
pub fn coverage_limited_seed(env: &BanditEnv, n_pairs: usize, coverage: f64, rng: &mut RngHandle) -> Result<SeedData> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(CopoError::InvalidParameter {
            name: "coverage",
            value: coverage,
            reason: "must lie in (0, 1]",
        });
    }
    let ny = env.n_responses();
    let k = ((coverage * ny as f64).round() as usize).clamp(2, ny);
    let covered: Vec<Vec<ResponseId>> = (0..env.n_prompts())
        .map(|_| {
            let mut ids: Vec<usize> = (0..ny).collect();
            for i in 0..k {
                let j = i + rng.below(ny - i);
                ids.swap(i, j);
            }
            let mut chosen: Vec<ResponseId> = ids[..k].iter().map(|&y| ResponseId(y)).collect();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    let mut dataset = PreferenceDataset::new(env.n_prompts(), ny);
    for _ in 0..n_pairs {
        let x = PromptId(rng.categorical(env.rho()));
        let c = &covered[x.0];
        let a = rng.below(k);
        let b = (a + 1 + rng.below(k - 1)) % k;
        dataset.push(env.sample_preference(x, c[a], c[b], rng)?)?;
    }
    Ok(SeedData { dataset, covered })
}

/// Supervised-fine-tuned stand-in: logit `bias` on covered responses, zero
/// elsewhere.
pub fn sft_policy(n_responses: usize, covered: &[Vec<ResponseId>], bias: f64) -> Result<Policy> {
    let logits = covered
        .iter()
        .map(|c| {
            let mut row = vec![0.0; n_responses];
            for y in c {
                row[y.0] = bias;
            }
            row
        })
        .collect();
    Policy::from_logits(logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnLoopConfig {
    pub d_coin: usize,
    pub hidden: Vec<usize>,
    pub train: CfnTrainConfig,
    /// Re-initialize the network every iteration instead of warm-starting.
    pub reset: bool,
}

impl Default for CfnLoopConfig {
    fn default() -> Self {
        Self {
            d_coin: CoinFlipNet::DEFAULT_D_COIN,
            hidden: CoinFlipNet::DEFAULT_HIDDEN.to_vec(),
            train: CfnTrainConfig::default(),
            reset: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub copo: CopoConfig,
    pub ascent: AscentConfig,
    /// Number of iterations `T`; the seed data is split into `T` portions.
    pub iterations: usize,
    /// Gumbel temperature of the oracle ranker.
    pub noise_temp: f64,
    /// Use the latest policy as the next KL anchor.
    pub moving_anchor: bool,
    pub cfn: CfnLoopConfig,
    /// Measure wall-clock time per iteration; otherwise reports carry 0.
    pub record_timing: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            copo: CopoConfig::default(),
            ascent: AscentConfig {
                step: 0.5,
                max_steps: 200,
                grad_tol: 1e-8,
                growth: 1.2,
            },
            iterations: 3,
            noise_temp: 0.0,
            moving_anchor: true,
            cfn: CfnLoopConfig::default(),
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// 1-based iteration index.
    pub t: usize,
    /// Pairs collected so far across all iterations.
    pub dataset_size: usize,
    /// DPO loss of the new policy on this iteration's data and anchor.
    pub dpo_loss: f64,
    /// `E_{x~D_t, y~π_t}[1/√(N(x,y)+λ)]` from exact counts.
    pub mean_bonus: f64,
    /// `J*_β(π_t)` against the initial policy.
    pub true_value: f64,
    pub subopt_gap: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct CopoRun {
    pub reports: Vec<IterationReport>,
    pub policy: Policy,
    /// Trained network when the bonus source is [`BonusSource::Cfn`].
    pub cfn: Option<CoinFlipNet>,
}

/// Iterative preference optimization over `T` contiguous portions of the
/// seed data. Each iteration samples one response per seed pair from the
/// current anchor, keeps the oracle-ranked best and worst of the three
/// candidates, updates the visit counts, and maximizes the count-regularized
/// DPO objective from the current policy. True values are measured against
/// `pi_sft` with the loop's `β`.
pub fn run_copo(
    env: &BanditEnv,
    pi_sft: &Policy,
    seed: &PreferenceDataset,
    cfg: &LoopConfig,
    rng: &mut RngHandle,
) -> Result<CopoRun> {
    cfg.copo.validate()?;
    cfg.cfn.train.validate()?;
    let t_max = cfg.iterations;
    if t_max == 0 || t_max > seed.len() {
        return Err(CopoError::NotEnoughPortions {
            requested: t_max,
            available: seed.len(),
        });
    }
    let fm = env.feature_map();
    let (nx, ny) = (env.n_prompts(), env.n_responses());
    let comparator = Comparator::new(env, pi_sft, cfg.copo.beta)?;
    let portion = seed.len() / t_max;

    let mut cfn_rng = rng.fork(CFN_STREAM);
    let new_net = |r: &mut RngHandle| CoinFlipNet::new(fm.dim(), &cfg.cfn.hidden, cfg.cfn.d_coin, false, r);
    let mut net = match cfg.copo.bonus_source {
        BonusSource::Cfn => Some(new_net(&mut cfn_rng)?),
        _ => None,
    };
    let mut cfn_data = CfnDataset::default();

    let mut counter = ExactCounter::new(nx, ny);
    let mut policy = pi_sft.clone();
    let mut anchor = pi_sft.clone();
    let mut total_pairs = 0;
    let mut reports = Vec::with_capacity(t_max);

    for t in 1..=t_max {
        let start = Instant::now();
        let part = seed.slice((t - 1) * portion..t * portion);
        let mut d_t = PreferenceDataset::new(nx, ny);
        let mut sampled = Vec::with_capacity(part.len());
        for pair in part.iter() {
            let y = anchor.sample(pair.x, rng);
            sampled.push((pair.x, y));
            let (best, worst) = env.rank_candidates(pair.x, &[y, pair.y_w, pair.y_l], cfg.noise_temp, rng)?;
            d_t.push(crate::types::PreferencePair::new(pair.x, best, worst)?)?;
        }
        for p in d_t.iter() {
            counter.record(p.x, p.y_w)?;
            counter.record(p.x, p.y_l)?;
        }
        total_pairs += d_t.len();

        let exact_bonus = counter.bonus_table(cfg.copo.lambda_bonus);
        let (bonus, copo_cfg) = match cfg.copo.bonus_source {
            BonusSource::ExactCount => (exact_bonus.clone(), cfg.copo),
            BonusSource::Cfn => {
                let (prompts, responses): (Vec<PromptId>, Vec<ResponseId>) = sampled.iter().copied().unzip();
                cfn_data.extend(build_cfn_dataset(&prompts, &responses, fm, cfg.cfn.d_coin, &mut cfn_rng)?);
                let net = net.as_mut().expect("network exists for CFN source");
                if cfg.cfn.reset {
                    *net = new_net(&mut cfn_rng)?;
                }
                cfn_train(net, &cfn_data, &cfg.cfn.train, &mut cfn_rng)?;
                (cfn_bonus_table(net, fm, cfg.copo.lambda_bonus)?, cfg.copo)
            }
            BonusSource::None => (
                BonusTable::constant(nx, ny, 0.0),
                CopoConfig {
                    alpha: 0.0,
                    ..cfg.copo
                },
            ),
        };

        let result = optimize_copo(&policy, &anchor, &copo_cfg, &d_t, &bonus, &cfg.ascent)?;
        policy = result.policy;
        let loss = dpo_loss(&policy, &anchor, cfg.copo.beta, &d_t)?;
        if cfg.moving_anchor {
            anchor = policy.clone();
        }
        let true_value = comparator.value(env, &policy)?;
        reports.push(IterationReport {
            t,
            dataset_size: total_pairs,
            dpo_loss: loss,
            mean_bonus: expected_bonus(&policy, &d_t, &exact_bonus)?,
            true_value,
            subopt_gap: comparator.optimal_value - true_value,
            wall_ms: if cfg.record_timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
    }
    Ok(CopoRun {
        reports,
        policy,
        cfn: net,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretConfig {
    pub beta: f64,
    pub iterations: usize,
    pub confidence: ConfidenceParams,
    pub geometry: Geometry,
    pub mode: OptimisticMode,
    /// Debug agent that knows `θ*` and uses no bonus.
    pub oracle: bool,
    /// Preference pairs collected per iteration.
    pub pairs_per_iter: usize,
    /// Use the latest policy as the next KL anchor.
    pub moving_anchor: bool,
    pub mle: MleConfig,
    pub ascent: AscentConfig,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            iterations: 2000,
            confidence: ConfidenceParams::default(),
            geometry: Geometry::Unnormalized,
            mode: OptimisticMode::PointwiseBonus,
            oracle: false,
            pairs_per_iter: 1,
            moving_anchor: false,
            mle: MleConfig::default(),
            ascent: AscentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub dataset_sizes: Vec<usize>,
    /// Least-squares slope of `log Regret(t)` on `log t` over the second half.
    pub slope: f64,
    /// `log(1 + 4T/(dλ))`.
    pub iota: f64,
}

impl RegretReport {
    pub fn average_at(&self, t: usize) -> f64 {
        self.cumulative[t - 1] / t as f64
    }
}

/// Slope of `log cumulative` against `log t` for `t ∈ [⌈T/2⌉, T]`, skipping
/// non-positive entries. `NaN` when fewer than two points remain.
pub fn second_half_slope(cumulative: &[f64]) -> f64 {
    let n = cumulative.len();
    let (xs, ys): (Vec<f64>, Vec<f64>) = (n.div_ceil(2)..=n)
        .filter(|&t| t >= 1 && cumulative[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), cumulative[t - 1].ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    ols_slope(&xs, &ys)
}

/// Two distinct responses from `policy(·|x)`: the second is drawn from the
/// policy conditioned on differing from the first.
fn sample_distinct_pair(policy: &Policy, x: PromptId, rng: &mut RngHandle) -> (ResponseId, ResponseId) {
    let p = policy.probs(x);
    let y1 = rng.categorical(&p);
    let mut rest = p;
    rest[y1] = 0.0;
    if rest.iter().sum::<f64>() <= 0.0 {
        rest.iter_mut().for_each(|v| *v = 1.0);
        rest[y1] = 0.0;
    }
    (ResponseId(y1), ResponseId(rng.categorical(&rest)))
}

/// Online optimistic learning with a fixed comparator anchored at the
/// uniform policy. Each iteration adds BT-labelled pairs drawn from the
/// previous policy, refits the reward MLE, and maximizes the optimistic
/// objective.
pub fn run_regret_experiment(env: &BanditEnv, cfg: &RegretConfig, rng: &mut RngHandle) -> Result<RegretReport> {
    if cfg.iterations < 10 {
        return Err(CopoError::InvalidParameter {
            name: "iterations",
            value: cfg.iterations as f64,
            reason: "must be >= 10",
        });
    }
    if cfg.pairs_per_iter == 0 {
        return Err(CopoError::InvalidParameter {
            name: "pairs_per_iter",
            value: 0.0,
            reason: "must be >= 1",
        });
    }
    cfg.confidence.validate()?;
    let fm = env.feature_map();
    let (nx, ny) = (env.n_prompts(), env.n_responses());
    let pi_ref = Policy::uniform(nx, ny);
    let comparator = Comparator::new(env, &pi_ref, cfg.beta)?;
    let params = ConfidenceParams {
        bound: env.theta_star().bound,
        ..cfg.confidence
    };

    let mut data = PreferenceDataset::new(nx, ny);
    let mut policy = pi_ref.clone();
    let mut anchor = pi_ref.clone();
    let mut theta_prev: Option<nalgebra::DVector<f64>> = None;
    let mut instantaneous = Vec::with_capacity(cfg.iterations);
    let mut cumulative = Vec::with_capacity(cfg.iterations);
    let mut dataset_sizes = Vec::with_capacity(cfg.iterations);
    let mut total = 0.0;

    for _ in 0..cfg.iterations {
        for _ in 0..cfg.pairs_per_iter {
            let x = PromptId(rng.categorical(env.rho()));
            let (y1, y2) = sample_distinct_pair(&policy, x, rng);
            data.push(env.sample_preference(x, y1, y2, rng)?)?;
        }
        policy = if cfg.oracle {
            env.optimal_policy(&anchor, cfg.beta)?
        } else {
            let fit = fit_mle(&data, fm, params.bound, &cfg.mle, theta_prev.as_ref())?;
            theta_prev = Some(fit.params.theta.clone());
            let estimate = RewardEstimate::from_parts(fit.params, &data, fm, params, cfg.geometry)?;
            maximize_optimistic(&estimate, cfg.beta, &anchor, fm, env.rho(), cfg.mode, &cfg.ascent)?
        };
        if cfg.moving_anchor {
            anchor = policy.clone();
        }
        // the comparator is optimal, so negative gaps are rounding noise
        let gap = comparator.suboptimality(env, &policy)?.max(0.0);
        total += gap;
        instantaneous.push(gap);
        cumulative.push(total);
        dataset_sizes.push(data.len());
    }
    let d = fm.dim() as f64;
    Ok(RegretReport {
        slope: second_half_slope(&cumulative),
        iota: (1.0 + 4.0 * cfg.iterations as f64 / (d * params.lambda)).ln(),
        instantaneous,
        cumulative,
        dataset_sizes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckConfig {
    pub beta: f64,
    pub n_pairs: usize,
    pub confidence: ConfidenceParams,
    pub mode: OptimisticMode,
    pub mle: MleConfig,
    pub ascent: AscentConfig,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            n_pairs: 500,
            confidence: ConfidenceParams {
                lambda: 0.1,
                ..ConfidenceParams::default()
            },
            mode: OptimisticMode::ExactNorm,
            mle: MleConfig::default(),
            ascent: AscentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub subopt: f64,
    /// `2ξ ‖E_{x~ρ, y~π̂} φ(x,y)‖_{(Σ_D+λI)^{-1}}`.
    pub rhs: f64,
    /// `‖θ̂ − θ*‖_{Σ_D+λI}`.
    pub error_norm: f64,
    pub xi: f64,
}

impl BoundCheck {
    pub fn event_holds(&self) -> bool {
        self.error_norm <= self.xi
    }

    pub fn bound_holds(&self) -> bool {
        self.subopt <= self.rhs
    }
}

/// One offline round: pairs from the uniform policy, MLE, normalized
/// confidence set, optimistic policy, and both sides of the bound.
pub fn suboptimality_bound_check(env: &BanditEnv, cfg: &BoundCheckConfig, rng: &mut RngHandle) -> Result<BoundCheck> {
    let fm = env.feature_map();
    let (nx, ny) = (env.n_prompts(), env.n_responses());
    let pi_ref = Policy::uniform(nx, ny);
    let comparator = Comparator::new(env, &pi_ref, cfg.beta)?;
    let params = ConfidenceParams {
        bound: env.theta_star().bound,
        ..cfg.confidence
    };
    let mut data = PreferenceDataset::new(nx, ny);
    for _ in 0..cfg.n_pairs {
        let x = PromptId(rng.categorical(env.rho()));
        let (y1, y2) = sample_distinct_pair(&pi_ref, x, rng);
        data.push(env.sample_preference(x, y1, y2, rng)?)?;
    }
    let estimate = RewardEstimate::fit(&data, fm, params, Geometry::Normalized, &cfg.mle, None)?;
    let policy = maximize_optimistic(&estimate, cfg.beta, &pi_ref, fm, env.rho(), cfg.mode, &cfg.ascent)?;
    let mu = fm.expected_feature(&policy, env.rho());
    let metric = estimate.metric()?;
    Ok(BoundCheck {
        subopt: comparator.suboptimality(env, &policy)?,
        rhs: 2.0 * estimate.xi * metric.inv_norm(&mu),
        error_norm: estimate.error_norm(&env.theta_star().theta),
        xi: estimate.xi,
    })
}

/// Helper for callers that want `θ̂ = θ*` and `ξ = 0`.
pub fn oracle_estimate(env: &BanditEnv, data: &PreferenceDataset, params: ConfidenceParams) -> Result<RewardEstimate> {
    let theta = RewardParams {
        theta: env.theta_star().theta.clone(),
        bound: env.theta_star().bound,
    };
    Ok(RewardEstimate::from_parts(theta, data, env.feature_map(), params, Geometry::Normalized)?.with_radius(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{dpo_loss_and_grad, ascend};
    use crate::types::FeatureKind;

    fn env(seed: u64) -> BanditEnv {
        BanditEnv::random(FeatureKind::Tabular, 3, 5, 0, 1.0, &mut RngHandle::new(seed)).unwrap()
    }

    #[test]
    fn comparator_examples() {
        let e = env(1);
        let uniform = Policy::uniform(3, 5);
        let c = Comparator::new(&e, &uniform, 0.1).unwrap();
        assert!(c.suboptimality(&e, &c.optimal).unwrap().abs() < 1e-9);
        assert!(c.suboptimality(&e, &uniform).unwrap() > 0.0);
        let mut rng = RngHandle::new(2);
        for _ in 0..20 {
            let logits = (0..3).map(|_| (0..5).map(|_| rng.open01() * 4.0 - 2.0).collect()).collect();
            let pi = Policy::from_logits(logits).unwrap();
            let direct = e.true_value(&c.optimal, 0.1, &uniform).unwrap() - e.true_value(&pi, 0.1, &uniform).unwrap();
            assert!((suboptimality(&e, &pi, 0.1, &uniform).unwrap() - direct).abs() < 1e-12);
            assert!(direct >= -1e-9);
        }
    }

    #[test]
    fn seed_respects_coverage() {
        let e = env(3);
        let seed = coverage_limited_seed(&e, 60, 0.4, &mut RngHandle::new(4)).unwrap();
        assert_eq!(seed.dataset.len(), 60);
        for c in &seed.covered {
            assert_eq!(c.len(), 2);
        }
        for p in seed.dataset.iter() {
            assert!(seed.covered[p.x.0].contains(&p.y_w));
            assert!(seed.covered[p.x.0].contains(&p.y_l));
        }
    }

    fn small_loop(alpha: f64, source: BonusSource, iterations: usize) -> LoopConfig {
        LoopConfig {
            copo: CopoConfig {
                alpha,
                bonus_source: source,
                ..CopoConfig::default()
            },
            iterations,
            ..LoopConfig::default()
        }
    }

    #[test]
    fn no_bonus_matches_plain_online_dpo() {
        let e = env(5);
        let seed = coverage_limited_seed(&e, 30, 0.4, &mut RngHandle::new(6)).unwrap();
        let sft = sft_policy(5, &seed.covered, 2.0).unwrap();
        let a = run_copo(&e, &sft, &seed.dataset, &small_loop(0.0, BonusSource::None, 3), &mut RngHandle::new(7))
            .unwrap();
        let b = run_copo(&e, &sft, &seed.dataset, &small_loop(0.0, BonusSource::ExactCount, 3), &mut RngHandle::new(7))
            .unwrap();
        assert_eq!(a.reports, b.reports);

        // hand-rolled iterative DPO with the same draws
        let cfg = LoopConfig::default();
        let mut rng = RngHandle::new(7);
        let mut policy = sft.clone();
        for t in 0..3 {
            let part = seed.dataset.slice(t * 10..(t + 1) * 10);
            let mut d = PreferenceDataset::new(3, 5);
            for p in part.iter() {
                let y = policy.sample(p.x, &mut rng);
                let (w, l) = e.rank_candidates(p.x, &[y, p.y_w, p.y_l], 0.0, &mut rng).unwrap();
                d.push(crate::types::PreferencePair::new(p.x, w, l).unwrap()).unwrap();
            }
            let anchor = policy.clone();
            let res = ascend(policy.clone(), &cfg.ascent, |pi| {
                let (l, g) = dpo_loss_and_grad(pi, &anchor, 0.1, &d).unwrap();
                (-l, g.into_iter().map(|r| r.into_iter().map(|v| -v).collect()).collect())
            });
            policy = res.policy;
        }
        assert_eq!(policy, a.policy);
    }

    #[test]
    fn single_iteration_uses_first_portion() {
        let e = env(8);
        let seed = coverage_limited_seed(&e, 12, 0.4, &mut RngHandle::new(9)).unwrap();
        let sft = sft_policy(5, &seed.covered, 2.0).unwrap();
        let run = run_copo(&e, &sft, &seed.dataset, &small_loop(0.1, BonusSource::ExactCount, 1), &mut RngHandle::new(1))
            .unwrap();
        assert_eq!(run.reports.len(), 1);
        assert_eq!(run.reports[0].dataset_size, 12);
        let too_many = small_loop(0.1, BonusSource::ExactCount, 13);
        assert!(matches!(
            run_copo(&e, &sft, &seed.dataset, &too_many, &mut RngHandle::new(1)),
            Err(CopoError::NotEnoughPortions { .. })
        ));
    }

    #[test]
    fn copo_reports_are_deterministic_and_sane() {
        let e = env(10);
        let seed = coverage_limited_seed(&e, 45, 0.4, &mut RngHandle::new(11)).unwrap();
        let sft = sft_policy(5, &seed.covered, 2.0).unwrap();
        for source in [BonusSource::ExactCount, BonusSource::Cfn] {
            let cfg = small_loop(0.1, source, 3);
            let a = run_copo(&e, &sft, &seed.dataset, &cfg, &mut RngHandle::new(12)).unwrap();
            let b = run_copo(&e, &sft, &seed.dataset, &cfg, &mut RngHandle::new(12)).unwrap();
            assert_eq!(a.reports, b.reports);
            assert_eq!(a.cfn.is_some(), source == BonusSource::Cfn);
            for r in &a.reports {
                assert!(r.subopt_gap >= -1e-9);
                assert!(r.mean_bonus > 0.0 && r.dpo_loss.is_finite());
                assert_eq!(r.wall_ms, 0.0);
            }
            assert_eq!(a.reports.iter().map(|r| r.dataset_size).collect::<Vec<_>>(), vec![15, 30, 45]);
        }
    }

    #[test]
    fn oracle_agent_has_no_regret() {
        let e = env(13);
        let cfg = RegretConfig {
            iterations: 50,
            oracle: true,
            ..RegretConfig::default()
        };
        let rep = run_regret_experiment(&e, &cfg, &mut RngHandle::new(14)).unwrap();
        assert!(rep.instantaneous.iter().all(|&r| r <= 1e-8));
    }

    #[test]
    fn oracle_estimate_gives_optimal_policy() {
        let e = env(15);
        let mut data = PreferenceDataset::new(3, 5);
        data.push(crate::types::PreferencePair::new(PromptId(0), ResponseId(0), ResponseId(1)).unwrap())
            .unwrap();
        let est = oracle_estimate(&e, &data, ConfidenceParams::default()).unwrap();
        let uniform = Policy::uniform(3, 5);
        let pi = maximize_optimistic(&est, 0.1, &uniform, e.feature_map(), e.rho(), OptimisticMode::ExactNorm, &AscentConfig::default())
            .unwrap();
        assert!(suboptimality(&e, &pi, 0.1, &uniform).unwrap().abs() < 1e-9);
    }

    #[test]
    fn regret_is_monotone_and_data_grows() {
        let e = BanditEnv::random(FeatureKind::Tabular, 3, 4, 0, 1.0, &mut RngHandle::new(16)).unwrap();
        let cfg = RegretConfig {
            iterations: 60,
            ..RegretConfig::default()
        };
        let rep = run_regret_experiment(&e, &cfg, &mut RngHandle::new(17)).unwrap();
        assert!(rep.cumulative.windows(2).all(|w| w[1] >= w[0]));
        assert!(rep.dataset_sizes.windows(2).all(|w| w[1] > w[0]));
        assert!((rep.iota - (1.0 + 4.0 * 60.0 / 48.0f64).ln()).abs() < 1e-12);
        let again = run_regret_experiment(&e, &cfg, &mut RngHandle::new(17)).unwrap();
        assert_eq!(rep, again);
        assert!(run_regret_experiment(&e, &RegretConfig { iterations: 9, ..cfg }, &mut RngHandle::new(1)).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let cum: Vec<f64> = (1..=100).map(|t| 3.0 * (t as f64).powf(0.5)).collect();
        assert!((second_half_slope(&cum) - 0.5).abs() < 1e-12);
        assert!(second_half_slope(&[0.0; 20]).is_nan());
    }

    #[test]
    fn distinct_pair_sampling() {
        let mut rng = RngHandle::new(18);
        let pi = Policy::from_logits(vec![vec![50.0, 0.0, 0.0]]).unwrap();
        for _ in 0..200 {
            let (a, b) = sample_distinct_pair(&pi, PromptId(0), &mut rng);
            assert_ne!(a, b);
        }
    }
}
