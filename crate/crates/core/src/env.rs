//! Synthetic ground truth: a linear reward `r*(x,y) = ⟨θ*, φ(x,y)⟩`, a
//! prompt distribution, Bradley-Terry labelling and an oracle ranker.

use nalgebra::DVector;
use rand_distr::{Distribution, Gumbel, StandardNormal};

use crate::error::{check_non_negative, CopoError, Result};
use crate::num::sigmoid;
use crate::policy::gibbs_policy;
use crate::rng::RngHandle;
use crate::types::{
    uniform_rho, validate_rho, FeatureKind, FeatureMap, Policy, PreferencePair, PromptId, ResponseId,
    RewardParams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    feature_map: FeatureMap,
    theta_star: RewardParams,
    rho: Vec<f64>,
}

impl BanditEnv {
    pub fn new(feature_map: FeatureMap, theta_star: RewardParams, rho: Vec<f64>) -> Result<Self> {
        if theta_star.dim() != feature_map.dim() {
            return Err(CopoError::DimensionMismatch {
                expected: feature_map.dim(),
                got: theta_star.dim(),
            });
        }
        if !theta_star.is_feasible() {
            return Err(CopoError::InvalidParameter {
                name: "theta_star",
                value: theta_star.theta.norm(),
                reason: "outside the feasible set",
            });
        }
        validate_rho(&rho, feature_map.n_prompts())?;
        Ok(Self {
            feature_map,
            theta_star,
            rho,
        })
    }

    /// Random environment with uniform `ρ` and `‖θ*‖ = bound`. For tabular
    /// features `θ*` is centered within each prompt, since only within-prompt
    /// reward differences are identifiable from comparisons.
    pub fn random(
        kind: FeatureKind,
        n_prompts: usize,
        n_responses: usize,
        d_feat: usize,
        bound: f64,
        rng: &mut RngHandle,
    ) -> Result<Self> {
        crate::types::validate_bound(bound)?;
        let fm = FeatureMap::build(kind, n_prompts, n_responses, d_feat, rng)?;
        let mut raw: DVector<f64> = DVector::from_fn(fm.dim(), |_, _| StandardNormal.sample(rng));
        if kind == FeatureKind::Tabular {
            for x in 0..n_prompts {
                let mut row = raw.rows_mut(x * n_responses, n_responses);
                let mean = row.mean();
                row.add_scalar_mut(-mean);
            }
        }
        let mut theta = RewardParams::project(&raw, bound).theta;
        let norm = theta.norm();
        if norm > 0.0 {
            theta *= bound / norm;
        }
        Self::new(fm, RewardParams { theta, bound }, uniform_rho(n_prompts))
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn theta_star(&self) -> &RewardParams {
        &self.theta_star
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn n_prompts(&self) -> usize {
        self.feature_map.n_prompts()
    }

    pub fn n_responses(&self) -> usize {
        self.feature_map.n_responses()
    }

    pub fn true_reward(&self, x: PromptId, y: ResponseId) -> Result<f64> {
        self.feature_map.check_ids(x, y)?;
        Ok(self.theta_star.theta.dot(self.feature_map.phi(x, y)))
    }

    /// `r*(x, y)` for every pair, indexed `[x][y]`.
    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        self.feature_map.reward_table(&self.theta_star.theta)
    }

    /// `σ(r*(x,y1) − r*(x,y2))`.
    pub fn bt_preference_prob(&self, x: PromptId, y1: ResponseId, y2: ResponseId) -> Result<f64> {
        Ok(sigmoid(self.true_reward(x, y1)? - self.true_reward(x, y2)?))
    }

    pub fn sample_preference(
        &self,
        x: PromptId,
        y1: ResponseId,
        y2: ResponseId,
        rng: &mut RngHandle,
    ) -> Result<PreferencePair> {
        if y1 == y2 {
            return Err(CopoError::IdenticalResponses);
        }
        let p = self.bt_preference_prob(x, y1, y2)?;
        if rng.open01() < p {
            PreferencePair::new(x, y1, y2)
        } else {
            PreferencePair::new(x, y2, y1)
        }
    }

    /// Oracle ranker: returns `(best, worst)` among the distinct candidates.
    /// Scores are `r*` plus, when `noise_temp > 0`, Gumbel(0, noise_temp)
    /// noise drawn in ascending id order. Ties go to the smallest id.
    pub fn rank_candidates(
        &self,
        x: PromptId,
        candidates: &[ResponseId],
        noise_temp: f64,
        rng: &mut RngHandle,
    ) -> Result<(ResponseId, ResponseId)> {
        check_non_negative("noise_temp", noise_temp)?;
        let mut ids = candidates.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(CopoError::TooFewCandidates(ids.len()));
        }
        let gumbel = if noise_temp > 0.0 {
            Some(Gumbel::new(0.0, noise_temp).map_err(|_| CopoError::InvalidParameter {
                name: "noise_temp",
                value: noise_temp,
                reason: "invalid Gumbel scale",
            })?)
        } else {
            None
        };
        let mut scored = Vec::with_capacity(ids.len());
        for &y in &ids {
            let mut s = self.true_reward(x, y)?;
            if let Some(g) = &gumbel {
                s += g.sample(rng);
            }
            scored.push((y, s));
        }
        // ids are ascending, so strict comparisons keep the smallest id on ties
        let mut best = 0;
        for i in 1..scored.len() {
            if scored[i].1 > scored[best].1 {
                best = i;
            }
        }
        let mut worst: Option<usize> = None;
        for i in 0..scored.len() {
            if i == best {
                continue;
            }
            match worst {
                Some(w) if scored[i].1 >= scored[w].1 => {}
                _ => worst = Some(i),
            }
        }
        let worst = worst.expect("at least two candidates");
        Ok((scored[best].0, scored[worst].0))
    }

    /// `Σ_x ρ(x) Σ_y π(y|x) [r*(x,y) − β log(π(y|x)/π_ref(y|x))]`.
    pub fn true_value(&self, policy: &Policy, beta: f64, pi_ref: &Policy) -> Result<f64> {
        check_non_negative("beta", beta)?;
        crate::policy::kl_regularized_value(&self.reward_table(), policy, pi_ref, beta, &self.rho)
    }

    /// The Gibbs maximizer `π_ref · exp(r*/β) / Z`.
    pub fn optimal_policy(&self, pi_ref: &Policy, beta: f64) -> Result<Policy> {
        gibbs_policy(&self.reward_table(), pi_ref, beta)
    }
}
