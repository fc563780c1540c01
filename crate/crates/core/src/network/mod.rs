//! Unrolled networks and the reverse-mode engines that differentiate them.
//!
//! Three engines compute the same gradients with different storage:
//!
//! * [`backprop_standard`] keeps every activation (`N + 1` signals).
//! * [`backprop_memory_efficient`] keeps only scheduled checkpoints and
//!   recovers every other layer input by inverting the layer that produced
//!   the following activation; a stored checkpoint always replaces the
//!   recalculated value.
//! * [`backprop_checkpoint_only`] keeps every `K`-th input and recomputes the
//!   rest forward from the nearest checkpoint below.

mod engine;
mod monitor;

pub use engine::{
    backprop_checkpoint_only, backprop_memory_efficient, backprop_standard, forward, run_engine,
    run_memory_efficient, Engine, EngineOptions, EngineRun, EngineSpec,
};
pub use monitor::{convergence_monitor, forward_deltas};

use crate::error::{Error, Result};
use crate::layers::{InvertibleLayer, Layer, LayerState, ParamId};
use crate::linop::Signal;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Ordered layers `x^(k+1) = F^(k)(x^(k))`.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    dim: usize,
    uses_acceleration: bool,
}

impl Network {
    pub fn new(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("network dimension must be positive".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if let Some(d) = layer.dim() {
                if d != dim {
                    return Err(Error::dim("network layer input", dim, d).at_layer(k));
                }
            }
        }
        let uses_acceleration = layers.iter().any(Layer::needs_companion);
        Ok(Network {
            layers,
            dim,
            uses_acceleration,
        })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn uses_acceleration(&self) -> bool {
        self.uses_acceleration
    }

    /// Every parameter id bound by at least one layer.
    pub fn param_ids(&self) -> BTreeSet<ParamId> {
        self.layers.iter().flat_map(Layer::bound_params).collect()
    }

    /// Wraps `x0` as the network input, adding the companion (`x^(−1) = x^(0)`)
    /// when the network carries acceleration.
    pub fn initial_state(&self, x0: Signal) -> Result<LayerState> {
        if x0.len() != self.dim {
            return Err(Error::dim("network input", self.dim, x0.len()));
        }
        Ok(if self.uses_acceleration {
            LayerState {
                companion: Some(x0.clone()),
                primary: x0,
            }
        } else {
            LayerState::new(x0)
        })
    }

    pub(crate) fn check_state(&self, x: &LayerState) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dim("network input", self.dim, x.len()));
        }
        if self.uses_acceleration != x.companion.is_some() {
            return Err(Error::State(format!(
                "network {} a companion signal but the input {} one",
                if self.uses_acceleration {
                    "requires"
                } else {
                    "does not use"
                },
                if x.companion.is_some() {
                    "carries"
                } else {
                    "lacks"
                }
            )));
        }
        Ok(())
    }

    /// Plain forward pass without storing anything.
    pub fn evaluate(&self, x0: &LayerState) -> Result<LayerState> {
        self.check_state(x0)?;
        let mut x = x0.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x).map_err(|e| e.at_layer(k))?;
        }
        Ok(x)
    }
}

/// Layer indices whose inputs are kept on the forward pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckpointSchedule {
    n_layers: usize,
    indices: Vec<usize>,
}

impl CheckpointSchedule {
    /// No checkpoints: pure reverse recalculation.
    pub fn empty(n_layers: usize) -> Self {
        CheckpointSchedule {
            n_layers,
            indices: Vec::new(),
        }
    }

    pub fn from_indices(n_layers: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "checkpoint indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= n_layers {
                return Err(Error::Argument(format!(
                    "checkpoint index {last} out of range for {n_layers} layers"
                )));
            }
        }
        Ok(CheckpointSchedule { n_layers, indices })
    }

    /// `count` checkpoints spread evenly, starting at layer 0:
    /// indices `⌊j·N/count⌋` for `j < count`.
    pub fn uniform(n_layers: usize, count: usize) -> Self {
        let count = count.min(n_layers);
        let indices = (0..count).map(|j| j * n_layers / count).collect();
        CheckpointSchedule { n_layers, indices }
    }

    /// Every `spacing`-th layer input: `0, K, 2K, …`.
    pub fn every(n_layers: usize, spacing: usize) -> Result<Self> {
        if spacing == 0 {
            return Err(Error::Argument("checkpoint spacing must be >= 1".into()));
        }
        Ok(CheckpointSchedule {
            n_layers,
            indices: (0..n_layers).step_by(spacing).collect(),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }

    pub fn union(&self, other: &CheckpointSchedule) -> CheckpointSchedule {
        let set: BTreeSet<usize> = self.indices.iter().chain(&other.indices).copied().collect();
        CheckpointSchedule {
            n_layers: self.n_layers.max(other.n_layers),
            indices: set.into_iter().collect(),
        }
    }
}

/// Layer inputs saved on the forward pass, keyed by layer index.
#[derive(Clone, Debug, Default)]
pub struct CheckpointStore {
    entries: BTreeMap<usize, LayerState>,
}

impl CheckpointStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.entries.contains_key(&k)
    }

    pub fn get(&self, k: usize) -> Option<&LayerState> {
        self.entries.get(&k)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub(crate) fn insert(&mut self, k: usize, x: LayerState) {
        self.entries.insert(k, x);
    }

    pub(crate) fn take(&mut self, k: usize) -> Option<LayerState> {
        self.entries.remove(&k)
    }
}

/// Counts signals held by an engine: stored activations and checkpoints.
///
/// The working registers (current iterate, adjoint, one scratch vector) and
/// parameters are not counted, so the constant-memory property shows up as
/// an exact count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryMeter {
    signal_len: usize,
    live_signal_count: usize,
    peak_signal_count: usize,
    forward_recomputations: usize,
}

impl MemoryMeter {
    pub fn new(signal_len: usize) -> Self {
        MemoryMeter {
            signal_len,
            ..Default::default()
        }
    }

    pub(crate) fn store(&mut self, signals: usize) {
        self.live_signal_count += signals;
        self.peak_signal_count = self.peak_signal_count.max(self.live_signal_count);
    }

    pub(crate) fn release(&mut self, signals: usize) {
        self.live_signal_count = self.live_signal_count.saturating_sub(signals);
    }

    pub(crate) fn recomputed(&mut self, steps: usize) {
        self.forward_recomputations += steps;
    }

    pub fn live_signal_count(&self) -> usize {
        self.live_signal_count
    }

    pub fn peak_signal_count(&self) -> usize {
        self.peak_signal_count
    }

    /// `peak_signal_count × signal length × 8`.
    pub fn peak_bytes(&self) -> usize {
        self.peak_signal_count * self.signal_len * std::mem::size_of::<f64>()
    }

    /// Layer evaluations repeated on the backward pass.
    pub fn forward_recomputations(&self) -> usize {
        self.forward_recomputations
    }
}

/// Training loss on the network output.
#[derive(Clone, Debug)]
pub enum LossFn {
    /// `(1/n)‖x − x*‖²`, adjoint `(2/n)(x − x*)`.
    Mse { target: Signal },
}

impl LossFn {
    pub fn mse(target: Signal) -> Self {
        LossFn::Mse { target }
    }

    /// Loss value and `∂L/∂x^(N)`; the companion, if any, gets a zero adjoint.
    pub fn evaluate(&self, x: &LayerState) -> Result<(f64, LayerState)> {
        match self {
            LossFn::Mse { target } => {
                if target.len() != x.len() {
                    return Err(Error::dim("loss target", x.len(), target.len()));
                }
                let n = x.len() as f64;
                let diff = x.primary.sub(target);
                let value = diff.dot(&diff) / n;
                if !value.is_finite() {
                    return Err(Error::Numeric("loss is not finite".into()));
                }
                let mut adj = x.zeros_like();
                adj.primary = diff.scale(2.0 / n);
                Ok((value, adj))
            }
        }
    }
}

/// Per-layer numerical health of a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// Index `k`: residual reported when recovering `x^(k)` by inverting layer
    /// `k`; zero when the input came from storage.
    pub inversion_residuals: Vec<f64>,
    /// Index `k`: `‖F^(k)(x̂^(k)) − x^(k+1)‖/‖x^(k+1)‖` for the recalculated
    /// input; only filled when the engine runs with `verify`.
    pub recalculation_residuals: Vec<Option<f64>>,
    /// `(k, ‖x̂^(k) − x^(k)‖/‖x^(k)‖)` for every checkpoint that was also
    /// recalculated (only with `verify`).
    pub checkpoint_drift: Vec<(usize, f64)>,
    /// The network input as recovered by inversion, before any checkpoint
    /// substitution. `None` for engines that never invert.
    pub recalculated_input: Option<LayerState>,
}

/// Gradients returned by every engine.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    /// `∂L/∂x^(0)`
    pub input_adjoint: LayerState,
    /// Summed over every layer binding the parameter.
    pub param_grads: BTreeMap<ParamId, Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl GradientBundle {
    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.param_grads.get(&id).map(Vec::as_slice)
    }

    pub(crate) fn accumulate(&mut self, grads: Vec<(ParamId, Vec<f64>)>) {
        for (id, g) in grads {
            match self.param_grads.get_mut(&id) {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => {
                    self.param_grads.insert(id, g);
                }
            }
        }
    }

    /// Largest relative deviation between matching parameter gradients,
    /// measured per parameter as `‖g − g_ref‖∞ / ‖g_ref‖∞`.
    pub fn max_rel_deviation(&self, reference: &GradientBundle) -> f64 {
        max_rel_deviation(&self.param_grads, &reference.param_grads)
    }
}

/// `‖got − want‖∞ / ‖want‖∞`, or the absolute deviation when `want` is zero.
/// Mismatched lengths count as infinitely wrong.
pub fn rel_inf_deviation(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let d = if scale > 0.0 { diff / scale } else { diff };
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

/// Largest [`rel_inf_deviation`] over the parameters of `reference`. A
/// parameter missing from `got` counts as infinitely wrong.
pub fn max_rel_deviation(
    got: &BTreeMap<ParamId, Vec<f64>>,
    reference: &BTreeMap<ParamId, Vec<f64>>,
) -> f64 {
    reference
        .iter()
        .map(|(id, want)| {
            got.get(id)
                .map_or(f64::INFINITY, |g| rel_inf_deviation(g, want))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_schedule() {
        let s = CheckpointSchedule::uniform(800, 50);
        assert_eq!(s.len(), 50);
        assert_eq!(s.indices()[0], 0);
        assert_eq!(s.indices()[1], 16);
        assert_eq!(CheckpointSchedule::uniform(5, 10).len(), 5);
        assert!(CheckpointSchedule::uniform(10, 0).is_empty());
        let s = CheckpointSchedule::uniform(100, 7);
        assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn schedule_validation() {
        assert!(CheckpointSchedule::from_indices(3, vec![0, 2]).is_ok());
        assert!(CheckpointSchedule::from_indices(3, vec![2, 0]).is_err());
        assert!(CheckpointSchedule::from_indices(3, vec![0, 3]).is_err());
        assert!(CheckpointSchedule::every(3, 0).is_err());
        assert_eq!(
            CheckpointSchedule::every(20, 5).unwrap().indices(),
            &[0, 5, 10, 15]
        );
    }

    #[test]
    fn meter_tracks_peak() {
        let mut m = MemoryMeter::new(10);
        m.store(3);
        m.release(2);
        m.store(1);
        assert_eq!(m.live_signal_count(), 2);
        assert_eq!(m.peak_signal_count(), 3);
        assert_eq!(m.peak_bytes(), 240);
    }

    #[test]
    fn mse_adjoint() {
        let loss = LossFn::mse(Signal::new(vec![1.0, 0.0]).unwrap());
        let x = LayerState::new(Signal::new(vec![2.0, 2.0]).unwrap());
        let (v, adj) = loss.evaluate(&x).unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(adj.primary.as_slice(), &[1.0, 2.0]);
    }
}
