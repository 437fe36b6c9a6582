//! Domain types shared across the simulator: ids, feature maps, reward
//! parameters, preference datasets and softmax policies.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_positive, CopoError, Result};
use crate::rng::RngHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PromptId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResponseId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// One-hot basis `e_(x,y)` at row-major index `x * |Y| + y`.
    Tabular,
    /// Unit-norm Gaussian directions in `d_feat` dimensions.
    Linear,
}

/// Map from prompt-response pairs to feature vectors of norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    n_prompts: usize,
    n_responses: usize,
    dim: usize,
    vectors: Vec<DVector<f64>>,
}

impl FeatureMap {
    /// Builds a feature map. `dim` is ignored for [`FeatureKind::Tabular`].
    pub fn build(
        kind: FeatureKind,
        n_prompts: usize,
        n_responses: usize,
        dim: usize,
        rng: &mut RngHandle,
    ) -> Result<Self> {
        if n_prompts == 0 {
            return Err(CopoError::InvalidDimension("need at least one prompt".into()));
        }
        if n_responses < 2 {
            return Err(CopoError::InvalidDimension(
                "need at least two responses per prompt".into(),
            ));
        }
        let n_pairs = n_prompts * n_responses;
        let (dim, vectors) = match kind {
            FeatureKind::Tabular => {
                let vectors = (0..n_pairs)
                    .map(|k| {
                        let mut v = DVector::zeros(n_pairs);
                        v[k] = 1.0;
                        v
                    })
                    .collect();
                (n_pairs, vectors)
            }
            FeatureKind::Linear => {
                if dim == 0 {
                    return Err(CopoError::InvalidDimension(
                        "linear features need d_feat >= 1".into(),
                    ));
                }
                let vectors = (0..n_pairs)
                    .map(|_| loop {
                        let v = DVector::from_fn(dim, |_, _| {
                            let z: f64 = StandardNormal.sample(rng);
                            z
                        });
                        let norm = v.norm();
                        if norm > 1e-12 {
                            break v / norm;
                        }
                    })
                    .collect();
                (dim, vectors)
            }
        };
        Ok(Self {
            kind,
            n_prompts,
            n_responses,
            dim,
            vectors,
        })
    }

    /// Wraps caller-supplied vectors (row-major over prompts then responses).
    pub fn from_vectors(
        n_prompts: usize,
        n_responses: usize,
        vectors: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if n_prompts == 0 || n_responses < 2 {
            return Err(CopoError::InvalidDimension(format!(
                "bad cardinalities |X|={n_prompts}, |Y|={n_responses}"
            )));
        }
        if vectors.len() != n_prompts * n_responses {
            return Err(CopoError::DimensionMismatch {
                expected: n_prompts * n_responses,
                got: vectors.len(),
            });
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(CopoError::InvalidDimension("zero-length features".into()));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(CopoError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.norm() > 1.0 + 1e-12 {
                return Err(CopoError::InvalidDimension(
                    "feature vectors must have norm <= 1".into(),
                ));
            }
        }
        Ok(Self {
            kind: FeatureKind::Linear,
            n_prompts,
            n_responses,
            dim,
            vectors,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_tabular(&self) -> bool {
        self.kind == FeatureKind::Tabular
    }

    pub fn pair_index(&self, x: PromptId, y: ResponseId) -> usize {
        x.0 * self.n_responses + y.0
    }

    pub fn check_ids(&self, x: PromptId, y: ResponseId) -> Result<()> {
        check_prompt(x, self.n_prompts)?;
        check_response(y, self.n_responses)
    }

    /// Feature vector of `(x, y)`. Panics on out-of-range ids; use
    /// [`FeatureMap::check_ids`] first when ids are untrusted.
    pub fn phi(&self, x: PromptId, y: ResponseId) -> &DVector<f64> {
        &self.vectors[self.pair_index(x, y)]
    }

    /// `φ(x, y_w) − φ(x, y_l)`.
    pub fn diff(&self, pair: &PreferencePair) -> DVector<f64> {
        self.phi(pair.x, pair.y_w) - self.phi(pair.x, pair.y_l)
    }

    /// Expected feature `Σ_x ρ(x) Σ_y π(y|x) φ(x,y)`.
    pub fn expected_feature(&self, policy: &Policy, rho: &[f64]) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim);
        for (x, &w) in rho.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (y, p) in policy.probs(PromptId(x)).into_iter().enumerate() {
                mu.axpy(w * p, self.phi(PromptId(x), ResponseId(y)), 1.0);
            }
        }
        mu
    }

    /// Reward table `r(x,y) = ⟨θ, φ(x,y)⟩`.
    pub fn reward_table(&self, theta: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.n_prompts)
            .map(|x| {
                (0..self.n_responses)
                    .map(|y| theta.dot(self.phi(PromptId(x), ResponseId(y))))
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn check_prompt(x: PromptId, n: usize) -> Result<()> {
    if x.0 < n {
        Ok(())
    } else {
        Err(CopoError::IdOutOfRange {
            kind: "prompt",
            index: x.0,
            bound: n,
        })
    }
}

pub(crate) fn check_response(y: ResponseId, n: usize) -> Result<()> {
    if y.0 < n {
        Ok(())
    } else {
        Err(CopoError::IdOutOfRange {
            kind: "response",
            index: y.0,
            bound: n,
        })
    }
}

/// Linear reward parameter in `Θ_B = {θ : ⟨1,θ⟩ = 0, ‖θ‖ ≤ B}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    pub theta: DVector<f64>,
    pub bound: f64,
}

const FEASIBILITY_TOL: f64 = 1e-12;

impl RewardParams {
    /// Projects `v` onto `Θ_B`: removes the all-ones component, then shrinks
    /// radially to norm `bound` if needed. Already-feasible inputs are
    /// returned bit-for-bit, so the projection is exactly idempotent.
    pub fn project(v: &DVector<f64>, bound: f64) -> Self {
        assert!(bound > 0.0, "bound must be positive");
        if Self::is_feasible_vec(v, bound) {
            return Self {
                theta: v.clone(),
                bound,
            };
        }
        let mean = v.mean();
        let mut theta = v.map(|t| t - mean);
        let norm = theta.norm();
        if norm > bound {
            theta *= bound / norm;
        }
        Self { theta, bound }
    }

    pub fn zeros(dim: usize, bound: f64) -> Self {
        Self {
            theta: DVector::zeros(dim),
            bound,
        }
    }

    fn is_feasible_vec(v: &DVector<f64>, bound: f64) -> bool {
        let scale = v.amax().max(1.0);
        v.sum().abs() <= FEASIBILITY_TOL * scale * (v.len() as f64)
            && v.norm() <= bound * (1.0 + FEASIBILITY_TOL)
    }

    pub fn is_feasible(&self) -> bool {
        self.theta.sum().abs() <= 1e-9 && self.theta.norm() <= self.bound + 1e-9
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// A labelled comparison: `y_w` was preferred over `y_l` for prompt `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferencePair {
    pub x: PromptId,
    pub y_w: ResponseId,
    pub y_l: ResponseId,
}

impl PreferencePair {
    pub fn new(x: PromptId, y_w: ResponseId, y_l: ResponseId) -> Result<Self> {
        if y_w == y_l {
            return Err(CopoError::IdenticalResponses);
        }
        Ok(Self { x, y_w, y_l })
    }
}

/// Ordered preference pairs with per-(x, y) occurrence counts over both the
/// chosen and the rejected slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    n_prompts: usize,
    n_responses: usize,
    pairs: Vec<PreferencePair>,
    counts: Vec<u64>,
}

impl PreferenceDataset {
    pub fn new(n_prompts: usize, n_responses: usize) -> Self {
        Self {
            n_prompts,
            n_responses,
            pairs: Vec::new(),
            counts: vec![0; n_prompts * n_responses],
        }
    }

    pub fn from_pairs(
        n_prompts: usize,
        n_responses: usize,
        pairs: impl IntoIterator<Item = PreferencePair>,
    ) -> Result<Self> {
        let mut ds = Self::new(n_prompts, n_responses);
        for p in pairs {
            ds.push(p)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, pair: PreferencePair) -> Result<()> {
        check_prompt(pair.x, self.n_prompts)?;
        check_response(pair.y_w, self.n_responses)?;
        check_response(pair.y_l, self.n_responses)?;
        if pair.y_w == pair.y_l {
            return Err(CopoError::IdenticalResponses);
        }
        self.counts[pair.x.0 * self.n_responses + pair.y_w.0] += 1;
        self.counts[pair.x.0 * self.n_responses + pair.y_l.0] += 1;
        self.pairs.push(pair);
        Ok(())
    }

    pub fn extend_from(&mut self, other: &PreferenceDataset) -> Result<()> {
        for p in other.iter() {
            self.push(*p)?;
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PreferencePair> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    pub fn count(&self, x: PromptId, y: ResponseId) -> u64 {
        self.counts[x.0 * self.n_responses + y.0]
    }

    /// Contiguous slice of pairs as a standalone dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self::from_pairs(self.n_prompts, self.n_responses, self.pairs[range].iter().copied())
            .expect("pairs already validated")
    }
}

/// Conditional distribution over responses, one row of logits per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    logits: Vec<Vec<f64>>,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

impl Policy {
    pub fn uniform(n_prompts: usize, n_responses: usize) -> Self {
        Self {
            logits: vec![vec![0.0; n_responses]; n_prompts],
        }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        let n_responses = logits.first().map(Vec::len).unwrap_or(0);
        if logits.is_empty() || n_responses == 0 {
            return Err(CopoError::InvalidDimension("empty logit table".into()));
        }
        for row in &logits {
            if row.len() != n_responses {
                return Err(CopoError::DimensionMismatch {
                    expected: n_responses,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CopoError::InvalidDimension("non-finite logit".into()));
            }
        }
        Ok(Self { logits })
    }

    /// Policy with the given probability rows; entries must be positive.
    pub fn from_probabilities(probs: &[Vec<f64>]) -> Result<Self> {
        for row in probs {
            if let Some(&p) = row.iter().find(|&&p| p.is_nan() || p <= 0.0) {
                return Err(CopoError::InvalidParameter {
                    name: "probability",
                    value: p,
                    reason: "softmax policies need strictly positive mass",
                });
            }
        }
        Self::from_logits(probs.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect())
    }

    pub fn n_prompts(&self) -> usize {
        self.logits.len()
    }

    pub fn n_responses(&self) -> usize {
        self.logits[0].len()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    pub fn log_probs(&self, x: PromptId) -> Vec<f64> {
        let row = &self.logits[x.0];
        let lse = log_sum_exp(row);
        row.iter().map(|v| v - lse).collect()
    }

    pub fn probs(&self, x: PromptId) -> Vec<f64> {
        let row = &self.logits[x.0];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn prob_table(&self) -> Vec<Vec<f64>> {
        (0..self.n_prompts()).map(|x| self.probs(PromptId(x))).collect()
    }

    pub fn log_prob_table(&self) -> Vec<Vec<f64>> {
        (0..self.n_prompts()).map(|x| self.log_probs(PromptId(x))).collect()
    }

    pub fn sample(&self, x: PromptId, rng: &mut RngHandle) -> ResponseId {
        ResponseId(rng.categorical(&self.probs(x)))
    }

    /// `Σ_y π(y|x) log(π(y|x)/π_ref(y|x))`.
    pub fn kl_to(&self, other: &Policy, x: PromptId) -> f64 {
        let p = self.probs(x);
        let lp = self.log_probs(x);
        let lq = other.log_probs(x);
        p.iter()
            .zip(lp.iter().zip(lq.iter()))
            .map(|(p, (a, b))| p * (a - b))
            .sum()
    }

    pub fn same_shape(&self, other: &Policy) -> Result<()> {
        if self.n_prompts() != other.n_prompts() {
            return Err(CopoError::DimensionMismatch {
                expected: self.n_prompts(),
                got: other.n_prompts(),
            });
        }
        if self.n_responses() != other.n_responses() {
            return Err(CopoError::DimensionMismatch {
                expected: self.n_responses(),
                got: other.n_responses(),
            });
        }
        Ok(())
    }
}

/// Uniform prompt distribution.
pub fn uniform_rho(n_prompts: usize) -> Vec<f64> {
    vec![1.0 / n_prompts as f64; n_prompts]
}

pub(crate) fn validate_rho(rho: &[f64], n_prompts: usize) -> Result<()> {
    if rho.len() != n_prompts {
        return Err(CopoError::DimensionMismatch {
            expected: n_prompts,
            got: rho.len(),
        });
    }
    if rho.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(CopoError::InvalidParameter {
            name: "rho",
            value: f64::NAN,
            reason: "entries must be finite and >= 0",
        });
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(CopoError::InvalidParameter {
            name: "rho",
            value: total,
            reason: "must sum to 1",
        });
    }
    Ok(())
}

pub(crate) fn validate_bound(bound: f64) -> Result<()> {
    check_positive("bound", bound)
}
