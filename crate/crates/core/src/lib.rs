//! Count-based online preference optimization on synthetic contextual
//! bandits.
//!
//! The crate simulates prompts `x`, a finite response set `y`, and a linear
//! ground-truth reward `r*(x,y) = ⟨θ*, φ(x,y)⟩`. On top of that it provides
//! Bradley-Terry reward estimation with confidence ellipsoids, KL-regularized
//! policy objectives (DPO and its count-bonus variant), exact and
//! coin-flip-network visit counting, and the online loops that tie them
//! together.

pub mod counting;
pub mod env;
mod error;
pub mod linalg;
pub mod num;
pub mod online;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod types;

pub use counting::{CfnDataset, CfnTrainConfig, CoinFlipNet, ExactCounter};
pub use env::BanditEnv;
pub use error::{CopoError, Result};
pub use policy::{AscentConfig, BonusSource, BonusTable, CopoConfig, OptimisticMode};
pub use reward::{ConfidenceParams, Geometry, MleConfig, RewardEstimate};
pub use rng::RngHandle;
pub use types::{
    uniform_rho, FeatureKind, FeatureMap, Policy, PreferenceDataset, PreferencePair, PromptId, ResponseId,
    RewardParams,
};
