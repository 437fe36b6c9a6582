//! Visit counting: exact tabular counts and the coin-flip network estimator.
//!
//! A coin-flip network regresses fresh Rademacher vectors `c ∈ {−1,+1}^d`
//! drawn for every occurrence of a state. At the MSE optimum the prediction
//! for a state seen `m` times is the mean of its `m` labels, whose squared
//! norm has expectation `d/m`, so `d/‖f(s)‖²` acts as a pseudo-count.

use rand::seq::SliceRandom;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_non_negative, check_positive, CopoError, Result};
use crate::policy::BonusTable;
use crate::rng::RngHandle;
use crate::types::{check_prompt, check_response, FeatureMap, PromptId, ResponseId};

/// Floor on `‖f(s)‖²` inside the pseudo-count.
pub const PSEUDOCOUNT_FLOOR: f64 = 1e-8;

/// Exact `(x, y)` visit counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactCounter {
    n_prompts: usize,
    n_responses: usize,
    table: Vec<u64>,
    total: u64,
}

impl ExactCounter {
    pub fn new(n_prompts: usize, n_responses: usize) -> Self {
        Self {
            n_prompts,
            n_responses,
            table: vec![0; n_prompts * n_responses],
            total: 0,
        }
    }

    pub fn record(&mut self, x: PromptId, y: ResponseId) -> Result<()> {
        check_prompt(x, self.n_prompts)?;
        check_response(y, self.n_responses)?;
        self.table[x.0 * self.n_responses + y.0] += 1;
        self.total += 1;
        Ok(())
    }

    /// Zero for unseen or out-of-range pairs.
    pub fn count(&self, x: PromptId, y: ResponseId) -> u64 {
        if x.0 >= self.n_prompts || y.0 >= self.n_responses {
            return 0;
        }
        self.table[x.0 * self.n_responses + y.0]
    }

    /// Number of `record` calls so far.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `1/√(N(x,y) + λ)` for every pair.
    pub fn bonus_table(&self, lambda: f64) -> BonusTable {
        BonusTable::from_counts(self.n_prompts, self.n_responses, lambda, |x, y| self.count(x, y) as f64)
    }
}

/// Fresh i.i.d. uniform ±1 vector.
pub fn make_coin_label(d_coin: usize, rng: &mut RngHandle) -> Result<DVector<f64>> {
    if d_coin == 0 {
        return Err(CopoError::InvalidDimension("d_coin must be >= 1".into()));
    }
    Ok(DVector::from_fn(d_coin, |_, _| if rng.below(2) == 0 { -1.0 } else { 1.0 }))
}

const LEAK: f64 = 0.01;

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAK * z
    }
}

fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAK
    }
}

/// One affine layer, `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: DMatrix::zeros(fan_out, fan_in),
            bias: DVector::zeros(fan_out),
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// MLP with leaky-ReLU hidden layers and a linear output of width `d_coin`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoinFlipNet {
    layers: Vec<Layer>,
}

impl CoinFlipNet {
    pub const DEFAULT_HIDDEN: [usize; 2] = [32, 20];
    pub const DEFAULT_D_COIN: usize = 20;

    /// He-initialized weights, zero biases. With `zero_output` the last layer
    /// starts at zero, so every prediction is initially zero.
    pub fn new(
        d_state: usize,
        hidden: &[usize],
        d_coin: usize,
        zero_output: bool,
        rng: &mut RngHandle,
    ) -> Result<Self> {
        let mut sizes = vec![d_state];
        sizes.extend_from_slice(hidden);
        sizes.push(d_coin);
        if sizes.contains(&0) {
            return Err(CopoError::InvalidDimension(format!("layer sizes must be positive: {sizes:?}")));
        }
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut layer = Layer::zeros(w[0], w[1]);
                if !(zero_output && i + 1 == n_layers) {
                    let scale = (2.0 / w[0] as f64).sqrt();
                    layer
                        .weights
                        .iter_mut()
                        .for_each(|v| *v = scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CopoError::InvalidDimension("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(CopoError::DimensionMismatch {
                    expected: l.weights.nrows(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && l.weights.ncols() != layers[i - 1].weights.nrows() {
                return Err(CopoError::DimensionMismatch {
                    expected: layers[i - 1].weights.nrows(),
                    got: l.weights.ncols(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn d_state(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn d_coin(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    /// `[d_state, h1, …, d_coin]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.d_state()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// All parameters in layer order; each layer is its weights row-major
    /// followed by its bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`CoinFlipNet::parameters`].
    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(CopoError::DimensionMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = it.next().expect("length checked");
                }
            }
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_state(&self, state: &DVector<f64>) -> Result<()> {
        if state.len() != self.d_state() {
            return Err(CopoError::DimensionMismatch {
                expected: self.d_state(),
                got: state.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, state: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut a = state.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = &l.weights * &a + &l.bias;
            if i < last {
                a = z.map(leaky);
            }
            zs.push(z);
        }
        zs
    }

    pub fn forward(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(state)?;
        Ok(self.pre_activations(state).pop().expect("non-empty"))
    }

    /// Mean over the batch of `‖c − f(s)‖²` and its gradient per layer.
    pub fn loss_grad(&self, batch: &[&CfnExample]) -> Result<(f64, Vec<Layer>)> {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.weights.ncols(), l.weights.nrows()))
            .collect();
        if batch.is_empty() {
            return Ok((0.0, grads));
        }
        let scale = 1.0 / batch.len() as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        for ex in batch {
            self.check_state(&ex.state)?;
            if ex.label.len() != self.d_coin() {
                return Err(CopoError::DimensionMismatch {
                    expected: self.d_coin(),
                    got: ex.label.len(),
                });
            }
            let zs = self.pre_activations(&ex.state);
            let resid = &zs[last] - &ex.label;
            loss += resid.norm_squared() * scale;
            let mut delta = resid * (2.0 * scale);
            for i in (0..=last).rev() {
                let input = if i == 0 { ex.state.clone() } else { zs[i - 1].map(leaky) };
                grads[i].weights.ger(1.0, &delta, &input, 1.0);
                grads[i].bias += &delta;
                if i > 0 {
                    let back = self.layers[i].weights.transpose() * &delta;
                    delta = back.zip_map(&zs[i - 1], |d, z| d * leaky_slope(z));
                }
            }
        }
        Ok((loss, grads))
    }

    /// Mean `‖c − f(s)‖²` over a whole dataset.
    pub fn dataset_loss(&self, data: &CfnDataset) -> Result<f64> {
        let refs: Vec<&CfnExample> = data.examples.iter().collect();
        self.loss_grad_value(&refs)
    }

    fn loss_grad_value(&self, batch: &[&CfnExample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for ex in batch {
            total += (self.forward(&ex.state)? - &ex.label).norm_squared();
        }
        Ok(total / batch.len() as f64)
    }

    /// `d_coin / max(‖f(s)‖², ε)`.
    pub fn pseudocount(&self, state: &DVector<f64>) -> Result<f64> {
        Ok(pseudocount_from_prediction(&self.forward(state)?))
    }

    /// `√(‖f(s)‖² / d_coin)` clamped to `[0, 1]`.
    pub fn bonus(&self, state: &DVector<f64>) -> Result<f64> {
        Ok(bonus_from_prediction(&self.forward(state)?))
    }
}

pub fn pseudocount_from_prediction(f: &DVector<f64>) -> f64 {
    f.len() as f64 / f.norm_squared().max(PSEUDOCOUNT_FLOOR)
}

pub fn bonus_from_prediction(f: &DVector<f64>) -> f64 {
    (f.norm_squared() / f.len() as f64).sqrt().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnExample {
    pub state: DVector<f64>,
    pub label: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CfnDataset {
    pub examples: Vec<CfnExample>,
}

impl CfnDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Appends one occurrence of `state` with a fresh label.
    pub fn push_occurrence(&mut self, state: DVector<f64>, d_coin: usize, rng: &mut RngHandle) -> Result<()> {
        let label = make_coin_label(d_coin, rng)?;
        self.examples.push(CfnExample { state, label });
        Ok(())
    }

    pub fn extend(&mut self, other: CfnDataset) {
        self.examples.extend(other.examples);
    }
}

/// One example per `(prompt, response)` occurrence with state `φ(x, y)`.
pub fn build_cfn_dataset(
    prompts: &[PromptId],
    responses: &[ResponseId],
    fm: &FeatureMap,
    d_coin: usize,
    rng: &mut RngHandle,
) -> Result<CfnDataset> {
    if prompts.len() != responses.len() {
        return Err(CopoError::Misaligned {
            left: prompts.len(),
            right: responses.len(),
        });
    }
    let mut data = CfnDataset::default();
    for (&x, &y) in prompts.iter().zip(responses) {
        fm.check_ids(x, y)?;
        data.push_occurrence(fm.phi(x, y).clone(), d_coin, rng)?;
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for CfnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 1e-4,
            batch_size: 32,
            momentum: 0.9,
        }
    }
}

impl CfnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("cfn.lr", self.lr)?;
        check_non_negative("cfn.momentum", self.momentum)?;
        if self.momentum >= 1.0 {
            return Err(CopoError::InvalidParameter {
                name: "cfn.momentum",
                value: self.momentum,
                reason: "must be < 1",
            });
        }
        if self.batch_size == 0 {
            return Err(CopoError::InvalidParameter {
                name: "cfn.batch_size",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfnTrace {
    /// Training-set loss before the first update.
    pub initial_loss: f64,
    /// Training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl CfnTrace {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Mini-batch SGD with heavy-ball momentum on the MSE loss. The data are
/// reshuffled every epoch; momentum restarts at zero on each call.
pub fn cfn_train(
    net: &mut CoinFlipNet,
    data: &CfnDataset,
    cfg: &CfnTrainConfig,
    rng: &mut RngHandle,
) -> Result<CfnTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CopoError::EmptyDataset);
    }
    let initial_loss = net.dataset_loss(data)?;
    let mut velocity: Vec<Layer> = net
        .layers
        .iter()
        .map(|l| Layer::zeros(l.weights.ncols(), l.weights.nrows()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&CfnExample> = chunk.iter().map(|&i| &data.examples[i]).collect();
            let (_, grads) = net.loss_grad(&batch)?;
            for ((layer, vel), g) in net.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                vel.weights *= cfg.momentum;
                vel.weights += &g.weights;
                vel.bias *= cfg.momentum;
                vel.bias += &g.bias;
                layer.weights -= &vel.weights * cfg.lr;
                layer.bias.axpy(-cfg.lr, &vel.bias, 1.0);
            }
        }
        let loss = net.dataset_loss(data)?;
        if !loss.is_finite() {
            return Err(CopoError::Diverged { epoch, loss });
        }
        epoch_losses.push(loss);
    }
    Ok(CfnTrace {
        initial_loss,
        epoch_losses,
    })
}

/// `1/√(N̂(x,y) + λ)` with `N̂` the network pseudo-count of `φ(x,y)`.
pub fn cfn_bonus_table(net: &CoinFlipNet, fm: &FeatureMap, lambda: f64) -> Result<BonusTable> {
    if net.d_state() != fm.dim() {
        return Err(CopoError::DimensionMismatch {
            expected: fm.dim(),
            got: net.d_state(),
        });
    }
    let mut rows = Vec::with_capacity(fm.n_prompts());
    for x in 0..fm.n_prompts() {
        let mut row = Vec::with_capacity(fm.n_responses());
        for y in 0..fm.n_responses() {
            let pc = net.pseudocount(fm.phi(PromptId(x), ResponseId(y)))?;
            row.push(1.0 / (pc + lambda).sqrt());
        }
        rows.push(row);
    }
    Ok(BonusTable::new(rows))
}

/// The MSE-optimal per-state predictor for `m` occurrences: the mean of `m`
/// fresh labels. Returns `‖f*‖² / d_coin`.
pub fn ideal_inverse_count(m: usize, d_coin: usize, rng: &mut RngHandle) -> Result<f64> {
    if m == 0 {
        return Err(CopoError::InvalidParameter {
            name: "m",
            value: 0.0,
            reason: "must be >= 1",
        });
    }
    let mut sum = DVector::zeros(d_coin);
    for _ in 0..m {
        sum += make_coin_label(d_coin, rng)?;
    }
    Ok((sum / m as f64).norm_squared() / d_coin as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_examples() {
        let mut c = ExactCounter::new(2, 3);
        assert_eq!(c.count(PromptId(1), ResponseId(2)), 0);
        for _ in 0..3 {
            c.record(PromptId(1), ResponseId(2)).unwrap();
        }
        assert_eq!(c.count(PromptId(1), ResponseId(2)), 3);
        assert_eq!(c.total(), 3);
        assert!(c.record(PromptId(2), ResponseId(0)).is_err());
    }

    #[test]
    fn counter_matches_list_scan() {
        let mut rng = RngHandle::new(7);
        let mut c = ExactCounter::new(4, 5);
        let mut log = Vec::new();
        for _ in 0..100 {
            let (x, y) = (PromptId(rng.below(4)), ResponseId(rng.below(5)));
            c.record(x, y).unwrap();
            log.push((x, y));
        }
        for x in 0..4 {
            for y in 0..5 {
                let naive = log.iter().filter(|&&p| p == (PromptId(x), ResponseId(y))).count() as u64;
                assert_eq!(c.count(PromptId(x), ResponseId(y)), naive);
            }
        }
        assert_eq!(c.total(), 100);
    }

    #[test]
    fn coin_labels() {
        let mut rng = RngHandle::new(3);
        let one = make_coin_label(1, &mut rng).unwrap();
        assert!(one[0] == 1.0 || one[0] == -1.0);
        for d in [1, 5, 20] {
            assert_eq!(make_coin_label(d, &mut rng).unwrap().norm_squared(), d as f64);
        }
        assert!(make_coin_label(0, &mut rng).is_err());
        let n = 100_000;
        let mut mean = DVector::zeros(4);
        for _ in 0..n {
            mean += make_coin_label(4, &mut rng).unwrap();
        }
        mean /= n as f64;
        assert!(mean.amax() < 0.02, "{mean}");
    }

    #[test]
    fn zero_output_layer_predicts_bias() {
        let mut rng = RngHandle::new(1);
        let net = CoinFlipNet::new(6, &CoinFlipNet::DEFAULT_HIDDEN, 20, true, &mut rng).unwrap();
        assert_eq!(net.sizes(), vec![6, 32, 20, 20]);
        let s = DVector::from_element(6, 0.3);
        assert_eq!(net.forward(&s).unwrap(), DVector::zeros(20));
        let ex = CfnExample {
            state: s,
            label: make_coin_label(20, &mut rng).unwrap(),
        };
        let (loss, _) = net.loss_grad(&[&ex]).unwrap();
        assert_eq!(loss, 20.0);
        assert!(net.forward(&DVector::zeros(5)).is_err());
    }

    fn fd_check(net: &CoinFlipNet, batch: &[&CfnExample]) -> f64 {
        let (_, grads) = net.loss_grad(batch).unwrap();
        let analytic: Vec<f64> = {
            let tmp = CoinFlipNet::from_layers(grads).unwrap();
            tmp.parameters()
        };
        let base = net.parameters();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_grad_value(batch).unwrap();
            p[i] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_grad_value(batch).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = RngHandle::new(11);
        let net = CoinFlipNet::new(5, &[7, 6], 4, false, &mut rng).unwrap();
        let mut net = net;
        // nonzero biases exercise every parameter
        let p: Vec<f64> = net
            .parameters()
            .iter()
            .map(|v| v + 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        net.set_parameters(&p).unwrap();
        let examples: Vec<CfnExample> = (0..8)
            .map(|_| CfnExample {
                state: DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng)),
                label: make_coin_label(4, &mut rng).unwrap(),
            })
            .collect();
        let refs: Vec<&CfnExample> = examples.iter().collect();
        let err = fd_check(&net, &refs);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = RngHandle::new(2);
        let net = CoinFlipNet::new(3, &[4, 2], 5, false, &mut rng).unwrap();
        let mut other = CoinFlipNet::new(3, &[4, 2], 5, true, &mut rng).unwrap();
        other.set_parameters(&net.parameters()).unwrap();
        assert_eq!(other, net);
        assert!(other.set_parameters(&[1.0]).is_err());
    }

    fn fast_cfg(epochs: usize) -> CfnTrainConfig {
        CfnTrainConfig {
            epochs,
            lr: 0.01,
            batch_size: 4,
            momentum: 0.9,
        }
    }

    #[test]
    fn single_example_is_interpolated() {
        let mut rng = RngHandle::new(5);
        let mut net = CoinFlipNet::new(3, &[8, 8], 6, false, &mut rng).unwrap();
        let data = CfnDataset {
            examples: vec![CfnExample {
                state: DVector::from_vec(vec![1.0, 0.0, 0.5]),
                label: make_coin_label(6, &mut rng).unwrap(),
            }],
        };
        let trace = cfn_train(&mut net, &data, &fast_cfg(2000), &mut rng).unwrap();
        assert!(trace.final_loss() < 1e-10, "{}", trace.final_loss());
        let f = net.forward(&data.examples[0].state).unwrap();
        assert!((pseudocount_from_prediction(&f) - 1.0).abs() < 1e-4);
        assert!((bonus_from_prediction(&f) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn repeated_state_converges_to_label_mean() {
        let mut rng = RngHandle::new(6);
        let mut net = CoinFlipNet::new(3, &[8, 8], 5, false, &mut rng).unwrap();
        let state = DVector::from_vec(vec![0.2, -0.4, 1.0]);
        let mut data = CfnDataset::default();
        for _ in 0..4 {
            data.push_occurrence(state.clone(), 5, &mut rng).unwrap();
        }
        let mean = data.examples.iter().fold(DVector::zeros(5), |acc, e| acc + &e.label) / 4.0;
        cfn_train(&mut net, &data, &fast_cfg(3000), &mut rng).unwrap();
        let f = net.forward(&state).unwrap();
        assert!((f - mean).amax() < 1e-3);
    }

    #[test]
    fn default_lr_trace_is_finite_and_not_worse() {
        let mut rng = RngHandle::new(8);
        let fm = FeatureMap::build(crate::types::FeatureKind::Linear, 3, 4, 6, &mut rng).unwrap();
        let prompts: Vec<PromptId> = (0..60).map(|i| PromptId(i % 3)).collect();
        let responses: Vec<ResponseId> = (0..60).map(|i| ResponseId((i / 3) % 4)).collect();
        let data = build_cfn_dataset(&prompts, &responses, &fm, 20, &mut rng).unwrap();
        let mut net = CoinFlipNet::new(6, &CoinFlipNet::DEFAULT_HIDDEN, 20, false, &mut rng).unwrap();
        let cfg = CfnTrainConfig {
            epochs: 50,
            ..CfnTrainConfig::default()
        };
        let trace = cfn_train(&mut net, &data, &cfg, &mut rng).unwrap();
        assert_eq!(trace.epoch_losses.len(), 50);
        assert!(trace.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(trace.final_loss() <= trace.initial_loss);
    }

    #[test]
    fn pseudocount_floor() {
        let f = DVector::zeros(20);
        assert_eq!(pseudocount_from_prediction(&f), 20.0 / PSEUDOCOUNT_FLOOR);
        assert_eq!(bonus_from_prediction(&f), 0.0);
        let big = DVector::from_element(4, 3.0);
        assert_eq!(bonus_from_prediction(&big), 1.0);
        let half = DVector::from_element(4, 0.5);
        assert!((bonus_from_prediction(&half) - 1.0 / pseudocount_from_prediction(&half).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dataset_construction() {
        let mut rng = RngHandle::new(9);
        let fm = FeatureMap::build(crate::types::FeatureKind::Tabular, 2, 3, 0, &mut rng).unwrap();
        let empty = build_cfn_dataset(&[], &[], &fm, 20, &mut rng).unwrap();
        assert!(empty.is_empty());
        let two = build_cfn_dataset(&[PromptId(1); 2], &[ResponseId(2); 2], &fm, 20, &mut rng).unwrap();
        assert_eq!(two.examples[0].state, two.examples[1].state);
        assert_ne!(two.examples[0].label, two.examples[1].label);
        assert!(two.examples.iter().all(|e| e.label.iter().all(|v| v.abs() == 1.0)));
        assert_eq!(
            build_cfn_dataset(&[PromptId(0)], &[], &fm, 20, &mut rng),
            Err(CopoError::Misaligned { left: 1, right: 0 })
        );
    }

    #[test]
    fn label_mean_second_moment() {
        let mut rng = RngHandle::new(10);
        let d = 20;
        let reps = 200;
        let mut acc = 0.0;
        for _ in 0..reps {
            let mut data = CfnDataset::default();
            for _ in 0..1000 {
                data.push_occurrence(DVector::zeros(1), d, &mut rng).unwrap();
            }
            let mean = data.examples.iter().fold(DVector::zeros(d), |a, e| a + &e.label) / 1000.0;
            acc += mean.norm_squared();
        }
        let got = acc / reps as f64;
        let want = d as f64 / 1000.0;
        assert!((got / want - 1.0).abs() < 0.3, "{got} vs {want}");
    }

    #[test]
    fn ideal_predictor_recovers_counts() {
        let mut rng = RngHandle::new(12);
        for m in [1usize, 4, 25, 100] {
            let inv: Vec<f64> = (0..2000).map(|_| ideal_inverse_count(m, 20, &mut rng).unwrap()).collect();
            let mean_inv = inv.iter().sum::<f64>() / 2000.0;
            assert!((mean_inv * m as f64 - 1.0).abs() < 0.15, "m={m}: {mean_inv}");
            let mean_pc = inv.iter().map(|v| 1.0 / v.max(PSEUDOCOUNT_FLOOR)).sum::<f64>() / 2000.0;
            assert!((mean_pc / m as f64 - 1.0).abs() < 0.15, "m={m}: {mean_pc}");
        }
    }

    #[test]
    fn variance_shrinks_with_d_coin() {
        let mut rng = RngHandle::new(13);
        let var = |d: usize, rng: &mut RngHandle| {
            let v: Vec<f64> = (0..2000).map(|_| ideal_inverse_count(4, d, rng).unwrap()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
        };
        let v5 = var(5, &mut rng);
        let v20 = var(20, &mut rng);
        // Var(‖f*‖²/d) = Var(z²)/d, so the ratio is exactly 1/4 in expectation
        let ratio = v20 / v5;
        assert!((ratio - 0.25).abs() < 0.05, "{v20} vs {v5}");
    }

    /// Trains a default-width CFN on two separated states seen `m1` and `m2`
    /// times and returns their pseudocounts.
    fn two_state_pseudocounts(m1: usize, m2: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngHandle::new(seed);
        let s1 = DVector::from_vec(vec![1.0, 0.0]);
        let s2 = DVector::from_vec(vec![0.0, 1.0]);
        let mut data = CfnDataset::default();
        for _ in 0..m1 {
            data.push_occurrence(s1.clone(), 20, &mut rng).unwrap();
        }
        for _ in 0..m2 {
            data.push_occurrence(s2.clone(), 20, &mut rng).unwrap();
        }
        let mut net = CoinFlipNet::new(2, &CoinFlipNet::DEFAULT_HIDDEN, 20, false, &mut rng).unwrap();
        let cfg = CfnTrainConfig {
            epochs: 300,
            lr: 0.01,
            batch_size: 16,
            momentum: 0.9,
        };
        cfn_train(&mut net, &data, &cfg, &mut rng).unwrap();
        (net.pseudocount(&s1).unwrap(), net.pseudocount(&s2).unwrap())
    }

    #[test]
    fn trained_pseudocounts_follow_counts() {
        let (a, b) = two_state_pseudocounts(1, 100, 11);
        assert!(a < b, "{a} vs {b}");
        let mut ordered = 0;
        for seed in 0..100 {
            let m1 = [1, 2, 4][seed as usize % 3];
            let m2 = [25, 50, 100][seed as usize / 3 % 3];
            let (a, b) = two_state_pseudocounts(m1, m2, 1000 + seed);
            if a < b {
                ordered += 1;
            }
        }
        assert!(ordered >= 95, "{ordered}/100");
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = RngHandle::new(12);
        let mut data = CfnDataset::default();
        for k in 0..8 {
            data.push_occurrence(DVector::from_element(3, k as f64), 4, &mut rng).unwrap();
        }
        let mut net = CoinFlipNet::new(3, &[8], 4, false, &mut rng).unwrap();
        let cfg = CfnTrainConfig {
            epochs: 50,
            lr: 10.0,
            batch_size: 2,
            momentum: 0.9,
        };
        assert!(matches!(cfn_train(&mut net, &data, &cfg, &mut rng), Err(CopoError::Diverged { .. })));
    }
}
