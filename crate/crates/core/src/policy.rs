//! Policy and value networks.
//!
//! The policy maps a 768-dimensional state embedding to a distribution over
//! the four editing actions through an MLP with three 256-wide tanh hidden
//! layers (four weight layers in total). The value network shares the input
//! but has a single hidden layer and a scalar output.

use crate::error::Error;
use crate::numerics::{log_softmax, mlp_forward, softmax, ForwardCache, MlpParams, Vector};
use crate::rng::Rng;
use crate::Result;

/// Number of discrete editing actions.
pub const ACTION_COUNT: usize = 4;

/// Default state embedding dimension.
pub const DEFAULT_STATE_DIM: usize = 768;

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 256;

/// Action distribution network: state → 4 logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: MlpParams,
}

impl PolicyNet {
    pub fn new(params: MlpParams) -> Result<Self> {
        if params.output_dim() != ACTION_COUNT {
            return Err(Error::Shape(format!(
                "policy output dim {} != {ACTION_COUNT}",
                params.output_dim()
            )));
        }
        Ok(PolicyNet { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn state_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Raw logits plus the forward cache needed for backprop.
    pub fn logits(&self, state: &Vector) -> Result<(Vector, ForwardCache)> {
        mlp_forward(&self.params, state)
    }
}

/// State-value network: state → scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    params: MlpParams,
}

impl ValueNet {
    pub fn new(params: MlpParams) -> Result<Self> {
        if params.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "value output dim {} != 1",
                params.output_dim()
            )));
        }
        Ok(ValueNet { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn forward(&self, state: &Vector) -> Result<(f64, ForwardCache)> {
        let (out, cache) = mlp_forward(&self.params, state)?;
        Ok((out.values()[0], cache))
    }
}

/// One selected action with its sampling metadata.
#[derive(Debug, Clone)]
pub struct ActionChoice {
    pub action_id: usize,
    pub log_prob: f64,
    pub probs: Vector,
}

/// Greedy vs. stochastic selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Sample,
    Greedy,
}

/// Deterministically initializes both networks from a seed. Weights are
/// uniform in ±sqrt(6/(fan_in+fan_out)) so initial logits stay small and the
/// starting policy is close to uniform; biases are zero.
pub fn policy_init(seed: u64, state_dim: usize, hidden: usize) -> Result<(PolicyNet, ValueNet)> {
    if state_dim == 0 || hidden == 0 {
        return Err(Error::Shape("state_dim and hidden must be positive".into()));
    }
    let mut rng = Rng::seed(seed).split("policy-init");
    let init = |fan_in: usize, fan_out: usize, rng: &mut Rng| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        rng.uniform(-bound, bound)
    };
    let policy_params = MlpParams::from_dims(
        &[state_dim, hidden, hidden, hidden, ACTION_COUNT],
        |fi, fo| init(fi, fo, &mut rng),
    )?;
    let mut rng_v = Rng::seed(seed).split("value-init");
    let value_params =
        MlpParams::from_dims(&[state_dim, hidden, 1], |fi, fo| init(fi, fo, &mut rng_v))?;
    Ok((PolicyNet::new(policy_params)?, ValueNet::new(value_params)?))
}

/// Index of the maximum, ties broken toward the lowest index.
pub(crate) fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Selects an action from the policy's distribution at `state`.
pub fn select_action(
    policy: &PolicyNet,
    state: &Vector,
    rng: &mut Rng,
    mode: SelectionMode,
) -> Result<ActionChoice> {
    let (logits, _) = policy.logits(state)?;
    let log_probs = log_softmax(&logits)?;
    let probs = softmax(&logits)?;
    let action_id = match mode {
        SelectionMode::Greedy => argmax_tie_lowest(probs.values()),
        SelectionMode::Sample => {
            let r = rng.next_f64();
            let mut cum = 0.0;
            let mut picked = probs.dim() - 1;
            for (i, p) in probs.values().iter().enumerate() {
                cum += p;
                if r < cum {
                    picked = i;
                    break;
                }
            }
            picked
        }
    };
    Ok(ActionChoice {
        action_id,
        log_prob: log_probs.values()[action_id],
        probs,
    })
}

/// Scalar state-value estimate.
pub fn value_estimate(value: &ValueNet, state: &Vector) -> Result<f64> {
    Ok(value.forward(state)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_policy(state_dim: usize) -> PolicyNet {
        let params = MlpParams::from_dims(&[state_dim, 3, ACTION_COUNT], |_, _| 0.0).unwrap();
        PolicyNet::new(params).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let (p1, v1) = policy_init(42, 16, 8).unwrap();
        let (p2, v2) = policy_init(42, 16, 8).unwrap();
        assert_eq!(p1.params(), p2.params());
        assert_eq!(v1.params(), v2.params());
    }

    #[test]
    fn init_differs_across_seeds() {
        let (p1, _) = policy_init(1, 16, 8).unwrap();
        let (p2, _) = policy_init(2, 16, 8).unwrap();
        assert_ne!(p1.params(), p2.params());
    }

    #[test]
    fn paper_dims_give_expected_layer_shapes() {
        let (policy, value) = policy_init(0, DEFAULT_STATE_DIM, DEFAULT_HIDDEN).unwrap();
        let shapes: Vec<(usize, usize)> = policy
            .params()
            .layers()
            .iter()
            .map(|l| (l.weight.rows(), l.weight.cols()))
            .collect();
        assert_eq!(shapes, vec![(256, 768), (256, 256), (256, 256), (4, 256)]);
        let vshapes: Vec<(usize, usize)> = value
            .params()
            .layers()
            .iter()
            .map(|l| (l.weight.rows(), l.weight.cols()))
            .collect();
        assert_eq!(vshapes, vec![(256, 768), (1, 256)]);
    }

    #[test]
    fn greedy_ties_break_toward_action_zero() {
        let policy = zero_policy(5);
        let mut rng = Rng::seed(0);
        let choice =
            select_action(&policy, &Vector::zeros(5), &mut rng, SelectionMode::Greedy).unwrap();
        assert_eq!(choice.action_id, 0);
    }

    #[test]
    fn greedy_is_invariant_under_monotone_logit_transforms() {
        let logits = [0.3, -1.2, 2.7, 2.69];
        let base = argmax_tie_lowest(&logits);
        let scaled: Vec<f64> = logits.iter().map(|l| 3.0 * l + 10.0).collect();
        let exped: Vec<f64> = logits.iter().map(|l| libm::exp(*l)).collect();
        assert_eq!(argmax_tie_lowest(&scaled), base);
        assert_eq!(argmax_tie_lowest(&exped), base);
    }

    #[test]
    fn sampling_from_uniform_hits_each_action_a_quarter_of_the_time() {
        let policy = zero_policy(4);
        let state = Vector::zeros(4);
        let mut rng = Rng::seed(123);
        let mut counts = [0usize; ACTION_COUNT];
        for _ in 0..10_000 {
            let c = select_action(&policy, &state, &mut rng, SelectionMode::Sample).unwrap();
            counts[c.action_id] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn sampling_is_reproducible_bit_for_bit() {
        let (policy, _) = policy_init(9, 12, 6).unwrap();
        let mut rng_a = Rng::seed(77);
        let mut rng_b = Rng::seed(77);
        let state = Vector::new((0..12).map(|i| (i as f64) / 12.0).collect()).unwrap();
        for _ in 0..50 {
            let a = select_action(&policy, &state, &mut rng_a, SelectionMode::Sample).unwrap();
            let b = select_action(&policy, &state, &mut rng_b, SelectionMode::Sample).unwrap();
            assert_eq!(a.action_id, b.action_id);
            assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
        }
    }

    #[test]
    fn log_prob_matches_probs() {
        let (policy, _) = policy_init(3, 10, 5).unwrap();
        let state = Vector::new((0..10).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut rng = Rng::seed(5);
        for _ in 0..20 {
            let c = select_action(&policy, &state, &mut rng, SelectionMode::Sample).unwrap();
            assert!((libm::exp(c.log_prob) - c.probs.values()[c.action_id]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_value_net_estimates_zero() {
        let params = MlpParams::from_dims(&[6, 3, 1], |_, _| 0.0).unwrap();
        let value = ValueNet::new(params).unwrap();
        assert_eq!(value_estimate(&value, &Vector::zeros(6)).unwrap(), 0.0);
    }

    #[test]
    fn value_matches_forward_oracle_and_is_finite() {
        let (_, value) = policy_init(11, 24, 8).unwrap();
        let state = Vector::new((0..24).map(|i| ((i * 7) % 5) as f64 - 2.0).collect()).unwrap();
        let via_estimate = value_estimate(&value, &state).unwrap();
        let (direct, _) = mlp_forward(value.params(), &state).unwrap();
        assert_eq!(via_estimate, direct.values()[0]);
        assert!(via_estimate.is_finite());
    }

    #[test]
    fn select_action_rejects_wrong_state_dim() {
        let (policy, _) = policy_init(1, 8, 4).unwrap();
        let mut rng = Rng::seed(1);
        assert!(
            select_action(&policy, &Vector::zeros(9), &mut rng, SelectionMode::Greedy).is_err()
        );
    }
}
