//! Invertible network layers.
//!
//! Every layer maps a [`LayerState`] to a [`LayerState`] and exposes three
//! operations: `forward`, `inverse` (exact or iterative), and a hand-derived
//! vector-Jacobian product with respect to both its input and whichever of
//! its parameters are bound to a [`ParamId`].
//!
//! Parameters are bound, not owned: two layers carrying the same `ParamId`
//! share a parameter, and their gradient contributions are summed by the
//! engines.

mod accel;
mod gradient;
mod lsq;
mod prox;

pub use accel::AccelerationLayer;
pub use gradient::{GradientBindings, GradientStepLayer};
pub use lsq::{LeastSquaresBindings, LeastSquaresLayer};
pub use prox::{ProxBindings, ProxL1Layer};

use crate::error::{Error, Result};
use crate::linop::Signal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Identifier of a (possibly shared) learnable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub u32);

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// What a parameter means to the layers that bind it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    MeasurementMatrix,
    StepSize,
    Threshold,
    Penalty,
    Momentum,
    /// The measurement `y`. Not learned, but its adjoint is needed when `y`
    /// itself depends on a learned parameter.
    Measurement,
}

/// Network activation: the current iterate, plus the previous iterate when
/// the network contains acceleration layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub primary: Signal,
    pub companion: Option<Signal>,
}

impl LayerState {
    pub fn new(primary: Signal) -> Self {
        LayerState {
            primary,
            companion: None,
        }
    }

    pub fn with_companion(primary: Signal, companion: Signal) -> Result<Self> {
        if primary.len() != companion.len() {
            return Err(Error::dim(
                "layer state companion",
                primary.len(),
                companion.len(),
            ));
        }
        Ok(LayerState {
            primary,
            companion: Some(companion),
        })
    }

    /// Number of signals this state occupies in memory.
    pub fn signal_count(&self) -> usize {
        1 + usize::from(self.companion.is_some())
    }

    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty()
    }

    pub fn dot(&self, other: &LayerState) -> f64 {
        let mut d = self.primary.dot(&other.primary);
        if let (Some(a), Some(b)) = (&self.companion, &other.companion) {
            d += a.dot(b);
        }
        d
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Relative distance over both components.
    pub fn rel_distance(&self, reference: &LayerState) -> f64 {
        let mut diff = self.primary.sub(&reference.primary).norm().powi(2);
        if let (Some(a), Some(b)) = (&self.companion, &reference.companion) {
            diff += a.sub(b).norm().powi(2);
        }
        let scale = reference.norm();
        if scale > 0.0 {
            diff.sqrt() / scale
        } else {
            diff.sqrt()
        }
    }

    pub(crate) fn map_primary(&self, primary: Signal) -> LayerState {
        LayerState {
            primary,
            companion: self.companion.clone(),
        }
    }

    pub(crate) fn zeros_like(&self) -> LayerState {
        LayerState {
            primary: Signal::zeros(self.len()),
            companion: self.companion.as_ref().map(|c| Signal::zeros(c.len())),
        }
    }
}

impl From<Signal> for LayerState {
    fn from(s: Signal) -> Self {
        LayerState::new(s)
    }
}

/// How well an inverse reproduced its input.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InversionReport {
    /// Fixed-point increment `‖x_T − x_{T−1}‖` for gradient layers, CG relative
    /// residual where a solve is involved, zero for closed-form inverses.
    pub residual: f64,
    pub iterations: usize,
}

impl InversionReport {
    pub(crate) fn exact() -> Self {
        InversionReport::default()
    }

    pub(crate) fn merge(self, other: InversionReport) -> Self {
        InversionReport {
            residual: self.residual.max(other.residual),
            iterations: self.iterations + other.iterations,
        }
    }
}

/// Parameter gradients as emitted by one layer, in binding order.
pub type ParamGrads = Vec<(ParamId, Vec<f64>)>;

/// Output of a vector-Jacobian product.
#[derive(Clone, Debug)]
pub struct LayerVjp {
    /// `(∂F/∂x)ᵀ q`
    pub input_adjoint: LayerState,
    /// `(∂F/∂θ)ᵀ q` for every bound parameter, flattened like the parameter.
    pub param_grads: ParamGrads,
}

/// Contract shared by every layer, including user-supplied ones.
pub trait InvertibleLayer: fmt::Debug + Send + Sync {
    fn forward(&self, x: &LayerState) -> Result<LayerState>;

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)>;

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp>;

    /// Whether `inverse` may be relied on. Non-invertible layers need their
    /// input checkpointed for memory-efficient backpropagation.
    fn is_invertible(&self) -> bool;

    /// Required input length, if the layer constrains it.
    fn dim(&self) -> Option<usize> {
        None
    }

    fn bound_params(&self) -> Vec<ParamId> {
        Vec::new()
    }

    fn needs_companion(&self) -> bool {
        false
    }
}

/// A single network layer `F^(k)`.
#[derive(Clone, Debug)]
pub enum Layer {
    Gradient(GradientStepLayer),
    Prox(ProxL1Layer),
    LeastSquares(LeastSquaresLayer),
    Acceleration(AccelerationLayer),
    /// Several primitive layers applied in order and treated as one layer
    /// (e.g. a gradient step followed by a prox step is one PGD iteration).
    Sequence(Vec<Layer>),
    Custom(Arc<dyn InvertibleLayer>),
}

impl Layer {
    /// One proximal-gradient iteration: gradient step then prox.
    pub fn pgd(gradient: GradientStepLayer, prox: ProxL1Layer) -> Layer {
        Layer::Sequence(vec![Layer::Gradient(gradient), Layer::Prox(prox)])
    }

    /// One half-quadratic-splitting iteration: least-squares step then prox.
    pub fn hqs(lsq: LeastSquaresLayer, prox: ProxL1Layer) -> Layer {
        Layer::Sequence(vec![Layer::LeastSquares(lsq), Layer::Prox(prox)])
    }

    /// One accelerated (FISTA-style) iteration.
    pub fn fista(
        gradient: GradientStepLayer,
        prox: ProxL1Layer,
        accel: AccelerationLayer,
    ) -> Layer {
        Layer::Sequence(vec![
            Layer::Gradient(gradient),
            Layer::Prox(prox),
            Layer::Acceleration(accel),
        ])
    }

    fn as_dyn(&self) -> Option<&dyn InvertibleLayer> {
        Some(match self {
            Layer::Gradient(l) => l,
            Layer::Prox(l) => l,
            Layer::LeastSquares(l) => l,
            Layer::Acceleration(l) => l,
            Layer::Custom(l) => l.as_ref(),
            Layer::Sequence(_) => return None,
        })
    }
}

impl InvertibleLayer for Layer {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        match self {
            Layer::Sequence(parts) => {
                let mut state = x.clone();
                for part in parts {
                    state = part.forward(&state)?;
                }
                Ok(state)
            }
            other => other.as_dyn().expect("primitive").forward(x),
        }
    }

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)> {
        match self {
            Layer::Sequence(parts) => {
                let mut state = x.clone();
                let mut report = InversionReport::exact();
                for part in parts.iter().rev() {
                    let (s, r) = part.inverse(&state)?;
                    state = s;
                    report = report.merge(r);
                }
                Ok((state, report))
            }
            other => other.as_dyn().expect("primitive").inverse(x),
        }
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        match self {
            Layer::Sequence(parts) => {
                // Intermediate inputs of the sub-layers are scratch: they live
                // only for the duration of this call.
                let mut inputs = Vec::with_capacity(parts.len());
                let mut state = input.clone();
                for part in &parts[..parts.len().saturating_sub(1)] {
                    let next = part.forward(&state)?;
                    inputs.push(state);
                    state = next;
                }
                inputs.push(state);

                let mut adj = q.clone();
                let mut grads = Vec::new();
                for (part, x) in parts.iter().zip(&inputs).rev() {
                    let v = part.vjp(x, &adj)?;
                    adj = v.input_adjoint;
                    grads.extend(v.param_grads);
                }
                Ok(LayerVjp {
                    input_adjoint: adj,
                    param_grads: grads,
                })
            }
            other => other.as_dyn().expect("primitive").vjp(input, q),
        }
    }

    fn is_invertible(&self) -> bool {
        match self {
            Layer::Sequence(parts) => parts.iter().all(Layer::is_invertible),
            other => other.as_dyn().expect("primitive").is_invertible(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Layer::Sequence(parts) => parts.iter().find_map(Layer::dim),
            other => other.as_dyn().expect("primitive").dim(),
        }
    }

    fn bound_params(&self) -> Vec<ParamId> {
        match self {
            Layer::Sequence(parts) => parts.iter().flat_map(Layer::bound_params).collect(),
            other => other.as_dyn().expect("primitive").bound_params(),
        }
    }

    fn needs_companion(&self) -> bool {
        match self {
            Layer::Sequence(parts) => parts.iter().any(Layer::needs_companion),
            other => other.as_dyn().expect("primitive").needs_companion(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, s: &Signal) -> Result<()> {
    if s.len() != expected {
        Err(Error::dim(context, expected, s.len()))
    } else {
        Ok(())
    }
}
