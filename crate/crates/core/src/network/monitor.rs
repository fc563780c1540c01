use super::{CheckpointSchedule, Network};
use crate::error::{Error, Result};
use crate::layers::{InvertibleLayer, LayerState};

/// Relative change `δ_k = ‖x^(k+1) − x^(k)‖ / ‖x^(k)‖` for every layer.
pub fn forward_deltas(net: &Network, x0: &LayerState) -> Result<Vec<f64>> {
    net.check_state(x0)?;
    let mut deltas = Vec::with_capacity(net.len());
    let mut x = x0.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        let next = layer.forward(&x).map_err(|e| e.at_layer(k))?;
        deltas.push(next.rel_distance(&x));
        x = next;
    }
    Ok(deltas)
}

/// Suggests a checkpoint schedule from one forward pass: every layer whose
/// input has stopped moving (`δ_k < threshold`) is checkpointed, since
/// inverting a converged layer is ill-posed, and `budget` further checkpoints
/// are spread uniformly over the whole network.
pub fn convergence_monitor(
    net: &Network,
    x0: &LayerState,
    threshold: f64,
    budget: usize,
) -> Result<CheckpointSchedule> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "convergence threshold must be > 0, got {threshold}"
        )));
    }
    let deltas = forward_deltas(net, x0)?;
    let dense: Vec<usize> = deltas
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < threshold)
        .map(|(k, _)| k)
        .collect();
    let dense = CheckpointSchedule::from_indices(net.len(), dense)?;
    Ok(dense.union(&CheckpointSchedule::uniform(net.len(), budget)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{GradientStepLayer, Layer};
    use crate::linop::{DenseOperator, Signal};
    use std::sync::Arc;

    fn scalar_step(alpha: f64) -> Layer {
        Layer::Gradient(
            GradientStepLayer::new(
                Arc::new(DenseOperator::identity(1)),
                Arc::new(Signal::new(vec![0.0]).unwrap()),
                alpha,
                10,
            )
            .unwrap(),
        )
    }

    #[test]
    fn moving_network_gets_uniform_budget_only() {
        // Each layer halves x, so δ_k = 0.5 throughout.
        let net = Network::new(1, vec![scalar_step(0.5); 20]).unwrap();
        let x0 = net.initial_state(Signal::new(vec![1.0]).unwrap()).unwrap();
        let s = convergence_monitor(&net, &x0, 1e-3, 4).unwrap();
        assert_eq!(s, CheckpointSchedule::uniform(20, 4));
    }

    #[test]
    fn converged_tail_is_checkpointed_densely() {
        // Ten contracting layers followed by ten identity layers.
        let mut layers = vec![scalar_step(0.5); 10];
        layers.extend(vec![scalar_step(0.0); 10]);
        let net = Network::new(1, layers).unwrap();
        let x0 = net.initial_state(Signal::new(vec![1.0]).unwrap()).unwrap();
        let s = convergence_monitor(&net, &x0, 1e-6, 2).unwrap();
        for k in 10..20 {
            assert!(s.contains(k), "missing {k}");
        }
        assert!(s.contains(0));
        assert!(!s.contains(5));
    }

    #[test]
    fn threshold_must_be_positive() {
        let net = Network::new(1, vec![]).unwrap();
        let x0 = net.initial_state(Signal::new(vec![1.0]).unwrap()).unwrap();
        assert!(convergence_monitor(&net, &x0, 0.0, 1).is_err());
    }
}
