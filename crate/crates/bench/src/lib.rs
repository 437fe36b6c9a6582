//! Shared fixtures for the criterion benchmarks.

use copo_core::{BanditEnv, FeatureKind, Policy, PreferenceDataset, Result, RngHandle};

/// Tabular environment plus `n_pairs` Bradley-Terry labelled pairs drawn from
/// the uniform policy.
pub fn tabular_fixture(
    n_prompts: usize,
    n_responses: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<(BanditEnv, PreferenceDataset)> {
    let mut rng = RngHandle::new(seed);
    let env = BanditEnv::random(FeatureKind::Tabular, n_prompts, n_responses, 0, 1.0, &mut rng)?;
    let uniform = Policy::uniform(n_prompts, n_responses);
    let mut data = PreferenceDataset::new(n_prompts, n_responses);
    while data.len() < n_pairs {
        let x = copo_core::PromptId(rng.below(n_prompts));
        let y1 = uniform.sample(x, &mut rng);
        let y2 = uniform.sample(x, &mut rng);
        if y1 != y2 {
            data.push(env.sample_preference(x, y1, y2, &mut rng)?)?;
        }
    }
    Ok((env, data))
}
