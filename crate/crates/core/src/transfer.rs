//! Moving a shared CTDE policy onto independent agents in a larger team.

use std::path::Path;

use crate::deeprl::DqnAgent;
use crate::env_multi::{MultiEnvConfig, ObsEncoder};
use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::neuralnet::{DenseLayer, DenseNet};

/// Widens the first layer to `new_input_dim` inputs by appending
/// zero-weight columns. Outputs on zero-padded inputs are unchanged.
pub fn pad_network(net: &DenseNet, new_input_dim: usize) -> Result<DenseNet> {
    let old = net.input_dim();
    if new_input_dim < old {
        return Err(Error::contract(format!(
            "cannot pad a {old}-input network down to {new_input_dim} inputs"
        )));
    }
    if new_input_dim == old {
        return Ok(net.clone());
    }
    let mut layers = net.layers().to_vec();
    let first = &layers[0];
    let mut weights = Vec::with_capacity(first.outputs * new_input_dim);
    for row in first.weights.chunks(old) {
        weights.extend_from_slice(row);
        weights.resize(weights.len() + new_input_dim - old, 0.0);
    }
    layers[0] = DenseLayer {
        weights,
        biases: first.biases.clone(),
        inputs: new_input_dim,
        outputs: first.outputs,
    };
    DenseNet::from_layers(layers)
}

pub fn replicate_policy(net: &DenseNet, n: usize) -> Vec<DenseNet> {
    vec![net.clone(); n]
}

/// Loads a shared policy, pads it when its identity block is smaller than
/// the target team and hands a synced copy to every agent of `target_env`.
pub fn build_transfer(weights_path: &Path, target_env: &MultiEnvConfig) -> Result<Vec<DqnAgent>> {
    let net = DenseNet::load(weights_path)?;
    if net.output_dim() != Action::COUNT {
        return Err(Error::Load {
            path: weights_path.to_path_buf(),
            message: format!("network has {} outputs, expected {}", net.output_dim(), Action::COUNT),
        });
    }
    let want = ObsEncoder::BASE_DIM + target_env.n_agents;
    let net = pad_network(&net, net.input_dim().max(want))?;
    Ok(replicate_policy(&net, target_env.n_agents).into_iter().map(DqnAgent::new).collect())
}

/// Observation width used when transferring `net` into `target_env`: the
/// network's own width when it already reserves enough identity slots.
pub fn transfer_capacity(net_input_dim: usize, target_env: &MultiEnvConfig) -> usize {
    net_input_dim.saturating_sub(ObsEncoder::BASE_DIM).max(target_env.n_agents)
}
