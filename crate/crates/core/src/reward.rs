//! Linear reward estimation under the Bradley-Terry model.
//!
//! The negative log-likelihood `ℓ(θ) = −Σ log σ(⟨θ, Δ_i⟩)` with
//! `Δ_i = φ(x,y_w) − φ(x,y_l)` is convex; it is minimized over `Θ_B` by
//! projected gradient descent. The confidence ellipsoid uses the metric
//! `Σ + λI`, where `Σ` is either the normalized pair covariance
//! ([`Geometry::Normalized`]) or the raw Gram matrix of pair differences
//! ([`Geometry::Unnormalized`]).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_non_negative, check_positive, CopoError, Result};
use crate::linalg::{quad_norm, SpdMetric};
use crate::num::{neg_log_sigmoid, sigmoid};
use crate::types::{validate_rho, FeatureMap, Policy, PreferenceDataset, PromptId, ResponseId, RewardParams};

/// Lower bound on the logistic curvature over rewards in `[−B, B]`:
/// `γ = 1 / (2 + e^{−B} + e^{B})`.
pub fn gamma_for_bound(bound: f64) -> f64 {
    1.0 / (2.0 + (-bound).exp() + bound.exp())
}

/// Constants of the confidence ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    /// Absolute constant in front of the radius.
    pub c: f64,
    /// Failure probability.
    pub delta: f64,
    /// Ridge added to the data metric.
    pub lambda: f64,
    /// Norm bound `B` on the reward parameter.
    pub bound: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            delta: 0.1,
            lambda: 4.0,
            bound: 1.0,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("c", self.c)?;
        check_non_negative("lambda", self.lambda)?;
        check_positive("bound", self.bound)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CopoError::InvalidParameter {
                name: "delta",
                value: self.delta,
                reason: "must lie in (0, 1)",
            });
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        gamma_for_bound(self.bound)
    }
}

/// `C · √((d + log(1/δ)) / (γ² n) + λ B²)` with `γ` derived from `B`.
pub fn confidence_radius(n: usize, d_feat: usize, params: &ConfidenceParams) -> Result<f64> {
    params.validate()?;
    if n == 0 {
        return Err(CopoError::EmptyDataset);
    }
    if d_feat == 0 {
        return Err(CopoError::InvalidDimension("d_feat must be >= 1".into()));
    }
    let gamma = params.gamma();
    let stat = (d_feat as f64 + (1.0 / params.delta).ln()) / (gamma * gamma * n as f64);
    Ok(params.c * (stat + params.lambda * params.bound * params.bound).sqrt())
}

/// Which data matrix enters the ellipsoid metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// `Σ_D = (1/n) Σ Δ Δᵀ` with radius evaluated at the dataset size.
    Normalized,
    /// `Σ = Σ Δ Δᵀ` with the size-free radius `C √((d + log(1/δ))/γ² + λB²)`,
    /// i.e. the normalized radius at `n = 1`.
    Unnormalized,
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "unnormalized" => Ok(Self::Unnormalized),
            other => Err(format!("unknown geometry `{other}`")),
        }
    }
}

/// Dataset compressed to distinct pair differences with multiplicities.
#[derive(Debug, Clone)]
struct PairDiffs {
    diffs: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl PairDiffs {
    fn new(dataset: &PreferenceDataset, fm: &FeatureMap) -> Result<Self> {
        if dataset.is_empty() {
            return Err(CopoError::EmptyDataset);
        }
        let mut grouped: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for p in dataset.iter() {
            fm.check_ids(p.x, p.y_w)?;
            fm.check_ids(p.x, p.y_l)?;
            *grouped.entry((p.x.0, p.y_w.0, p.y_l.0)).or_default() += 1.0;
        }
        let (diffs, weights) = grouped
            .into_iter()
            .map(|((x, w, l), m)| {
                let x = PromptId(x);
                (fm.phi(x, ResponseId(w)) - fm.phi(x, ResponseId(l)), m)
            })
            .unzip();
        Ok(Self { diffs, weights })
    }

    fn nll_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut loss = 0.0;
        let mut grad = DVector::zeros(theta.len());
        for (d, &m) in self.diffs.iter().zip(&self.weights) {
            let z = theta.dot(d);
            loss += m * neg_log_sigmoid(z);
            grad.axpy(-m * sigmoid(-z), d, 1.0);
        }
        (loss, grad)
    }

    fn nll(&self, theta: &DVector<f64>) -> f64 {
        self.diffs
            .iter()
            .zip(&self.weights)
            .map(|(d, &m)| m * neg_log_sigmoid(theta.dot(d)))
            .sum()
    }
}

/// Negative log-likelihood and its gradient `−Σ σ(−⟨θ,Δ_i⟩) Δ_i`.
pub fn nll_and_grad(
    theta: &DVector<f64>,
    dataset: &PreferenceDataset,
    fm: &FeatureMap,
) -> Result<(f64, DVector<f64>)> {
    if theta.len() != fm.dim() {
        return Err(CopoError::DimensionMismatch {
            expected: fm.dim(),
            got: theta.len(),
        });
    }
    Ok(PairDiffs::new(dataset, fm)?.nll_and_grad(theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub max_iters: usize,
    /// Tolerance on the projected-gradient mapping `‖θ − P(θ − ∇ℓ)‖`.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tolerance: 1e-8,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub params: RewardParams,
    pub loss: f64,
    pub iterations: usize,
    /// `true` if the tolerance was met, `false` if `max_iters` ran out.
    pub converged: bool,
}

/// Projected gradient descent with backtracking on `ℓ` over `Θ_B`, starting
/// from `warm_start` (projected) or zero.
pub fn fit_mle(
    dataset: &PreferenceDataset,
    fm: &FeatureMap,
    bound: f64,
    cfg: &MleConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<MleFit> {
    check_positive("bound", bound)?;
    let data = PairDiffs::new(dataset, fm)?;
    let mut theta = match warm_start {
        Some(w) if w.len() == fm.dim() => RewardParams::project(w, bound).theta,
        Some(w) => {
            return Err(CopoError::DimensionMismatch {
                expected: fm.dim(),
                got: w.len(),
            })
        }
        None => DVector::zeros(fm.dim()),
    };
    let (mut loss, mut grad) = data.nll_and_grad(&theta);
    let mut step = cfg.initial_step / dataset.len() as f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let mapping = &theta - RewardParams::project(&(&theta - &grad), bound).theta;
        if mapping.norm() <= cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut moved = false;
        for _ in 0..60 {
            let cand = RewardParams::project(&(&theta - &grad * step), bound).theta;
            let delta = &cand - &theta;
            let cand_loss = data.nll(&cand);
            // sufficient decrease for the projected step
            if cand_loss <= loss + grad.dot(&delta) + delta.norm_squared() / (2.0 * step) {
                if delta.norm() == 0.0 {
                    break;
                }
                theta = cand;
                let (l, g) = data.nll_and_grad(&theta);
                loss = l;
                grad = g;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            converged = true;
            break;
        }
        step *= 1.5;
    }
    Ok(MleFit {
        params: RewardParams { theta, bound },
        loss,
        iterations,
        converged,
    })
}

/// `(1/n) Σ Δ_i Δ_iᵀ`.
pub fn covariance(dataset: &PreferenceDataset, fm: &FeatureMap) -> Result<DMatrix<f64>> {
    let mut g = gram(dataset, fm)?;
    g /= dataset.len() as f64;
    Ok(g)
}

/// `Σ Δ_i Δ_iᵀ`.
pub fn gram(dataset: &PreferenceDataset, fm: &FeatureMap) -> Result<DMatrix<f64>> {
    let data = PairDiffs::new(dataset, fm)?;
    let d = fm.dim();
    let mut g = DMatrix::zeros(d, d);
    for (v, &m) in data.diffs.iter().zip(&data.weights) {
        g.ger(m, v, v, 1.0);
    }
    Ok(g)
}

/// MLE together with the confidence-ellipsoid geometry around it.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimate {
    pub theta_hat: RewardParams,
    /// Data matrix of the metric (normalized or not, see `geometry`).
    pub sigma: DMatrix<f64>,
    pub n: usize,
    pub xi: f64,
    pub params: ConfidenceParams,
    pub geometry: Geometry,
}

impl RewardEstimate {
    pub fn from_parts(
        theta_hat: RewardParams,
        dataset: &PreferenceDataset,
        fm: &FeatureMap,
        params: ConfidenceParams,
        geometry: Geometry,
    ) -> Result<Self> {
        let (sigma, radius_n) = match geometry {
            Geometry::Normalized => (covariance(dataset, fm)?, dataset.len()),
            Geometry::Unnormalized => (gram(dataset, fm)?, 1),
        };
        let xi = confidence_radius(radius_n, fm.dim(), &params)?;
        Ok(Self {
            theta_hat,
            sigma,
            n: dataset.len(),
            xi,
            params,
            geometry,
        })
    }

    pub fn fit(
        dataset: &PreferenceDataset,
        fm: &FeatureMap,
        params: ConfidenceParams,
        geometry: Geometry,
        mle: &MleConfig,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let fit = fit_mle(dataset, fm, params.bound, mle, warm_start)?;
        Self::from_parts(fit.params, dataset, fm, params, geometry)
    }

    /// Replaces the radius, e.g. `ξ = 0` for a greedy plug-in agent.
    pub fn with_radius(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    /// Recomputes `ξ` from the stored constants.
    pub fn recompute_radius(&self) -> Result<f64> {
        let n = match self.geometry {
            Geometry::Normalized => self.n,
            Geometry::Unnormalized => 1,
        };
        confidence_radius(n, self.theta_hat.dim(), &self.params)
    }

    pub fn metric(&self) -> Result<SpdMetric> {
        check_positive("lambda", self.params.lambda)?;
        SpdMetric::new(&self.sigma, self.params.lambda)
    }

    /// `‖θ̂ − θ‖_{Σ + λI}`.
    pub fn error_norm(&self, theta: &DVector<f64>) -> f64 {
        let d = self.sigma.nrows();
        let a = &self.sigma + DMatrix::identity(d, d) * self.params.lambda;
        quad_norm(&a, &(&self.theta_hat.theta - theta))
    }

    /// Whether `θ` lies in the confidence ellipsoid.
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        self.error_norm(theta) <= self.xi
    }
}

/// `‖Σ_x ρ(x) Σ_y π(y|x) φ(x,y)‖_{(Σ+λI)^{-1}}`.
pub fn ucb_expectation_norm(
    policy: &Policy,
    fm: &FeatureMap,
    sigma: &DMatrix<f64>,
    lambda: f64,
    rho: &[f64],
) -> Result<f64> {
    check_positive("lambda", lambda)?;
    validate_rho(rho, fm.n_prompts())?;
    let metric = SpdMetric::new(sigma, lambda)?;
    Ok(metric.inv_norm(&fm.expected_feature(policy, rho)))
}

/// `‖φ(x,y)‖_{(Σ+λI)^{-1}}`.
pub fn ucb_pointwise(
    x: PromptId,
    y: ResponseId,
    fm: &FeatureMap,
    sigma: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    check_positive("lambda", lambda)?;
    fm.check_ids(x, y)?;
    let metric = SpdMetric::new(sigma, lambda)?;
    Ok(metric.inv_norm(fm.phi(x, y)))
}

/// Both sides of the elliptical-potential sandwich for one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticalPotential {
    /// `log det(Λ_t) − log det(Λ_0)`, from direct factorizations.
    pub log_det_ratio: f64,
    /// `Σ_j v_jᵀ Λ_{j−1}^{-1} v_j`.
    pub potential: f64,
}

impl EllipticalPotential {
    /// `log_det_ratio ≤ potential ≤ 2 · log_det_ratio` up to `tol`.
    pub fn sandwich_holds(&self, tol: f64) -> bool {
        self.log_det_ratio <= self.potential + tol && self.potential <= 2.0 * self.log_det_ratio + tol
    }
}

/// Accumulates `Λ_t = Λ_0 + Σ v_j v_jᵀ` and both sides of the sandwich.
pub fn elliptical_potential(lambda0: &DMatrix<f64>, stream: &[DVector<f64>]) -> Result<EllipticalPotential> {
    let mut lambda_t = lambda0.clone();
    let mut potential = 0.0;
    for v in stream {
        if v.len() != lambda0.nrows() {
            return Err(CopoError::DimensionMismatch {
                expected: lambda0.nrows(),
                got: v.len(),
            });
        }
        let m = SpdMetric::from_matrix(lambda_t.clone())?;
        potential += m.inv_quad(v);
        lambda_t.ger(1.0, v, v, 1.0);
    }
    let start = SpdMetric::from_matrix(lambda0.clone())?.log_det();
    let end = SpdMetric::from_matrix(lambda_t)?.log_det();
    Ok(EllipticalPotential {
        log_det_ratio: end - start,
        potential,
    })
}

/// Paired variant: each update uses `φ_j + ν_j`.
pub fn elliptical_potential_paired(
    lambda0: &DMatrix<f64>,
    stream: &[(DVector<f64>, DVector<f64>)],
) -> Result<EllipticalPotential> {
    let sums: Vec<DVector<f64>> = stream.iter().map(|(a, b)| a + b).collect();
    elliptical_potential(lambda0, &sums)
}
