use super::{InversionReport, InvertibleLayer, LayerState, LayerVjp, ParamGrads, ParamId};
use crate::error::{Error, Result};
use crate::linop::{LeakyThreshold, Signal};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProxBindings {
    /// Regularization weight `λ`.
    pub lambda: Option<ParamId>,
    /// Step size `α` when the threshold is `α·λ`.
    pub scale: Option<ParamId>,
}

/// Elementwise leaky soft-threshold with threshold `scale·λ`.
///
/// In a PGD iteration `scale` is the gradient step size `α`, so the threshold
/// is `αλ`; stand-alone layers use `scale = 1`.
#[derive(Clone, Debug)]
pub struct ProxL1Layer {
    lambda: f64,
    scale: f64,
    shrink: LeakyThreshold,
    bindings: ProxBindings,
}

impl ProxL1Layer {
    pub fn new(threshold: f64, eps_slope: f64) -> Result<Self> {
        ProxL1Layer::scaled(1.0, threshold, eps_slope)
    }

    pub fn scaled(scale: f64, lambda: f64, eps_slope: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Argument(format!(
                "prox scale must be >= 0, got {scale}"
            )));
        }
        Ok(ProxL1Layer {
            lambda,
            scale,
            shrink: LeakyThreshold::new(scale * lambda, eps_slope)?,
            bindings: ProxBindings::default(),
        })
    }

    pub fn with_bindings(mut self, bindings: ProxBindings) -> Self {
        self.bindings = bindings;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.shrink.threshold()
    }

    pub fn eps_slope(&self) -> f64 {
        self.shrink.slope()
    }

    pub fn prox_forward(&self, z: &Signal) -> Signal {
        Signal::from_raw(z.as_slice().iter().map(|&v| self.shrink.apply(v)).collect())
    }

    pub fn prox_inverse(&self, x: &Signal) -> Result<Signal> {
        Signal::from_raw(
            x.as_slice()
                .iter()
                .map(|&u| self.shrink.inverse(u))
                .collect(),
        )
        .check_finite("prox_inverse")
    }

    /// `f′(z) ⊙ q`, plus the threshold gradient `Σ qᵢ ∂fᵢ/∂t` routed to `λ`
    /// (times `scale`) and to `scale` (times `λ`).
    pub fn prox_vjp(&self, z: &Signal, q: &Signal) -> Result<(Signal, ParamGrads)> {
        super::check_len("prox_vjp adjoint", z.len(), q)?;
        let s = &self.shrink;
        let q_prev = z
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(&v, &qi)| s.derivative(v) * qi)
            .collect();
        let mut grads = Vec::new();
        if self.bindings.lambda.is_some() || self.bindings.scale.is_some() {
            let dt: f64 = z
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(&v, &qi)| s.threshold_derivative(v) * qi)
                .sum();
            if let Some(id) = self.bindings.lambda {
                grads.push((id, vec![self.scale * dt]));
            }
            if let Some(id) = self.bindings.scale {
                grads.push((id, vec![self.lambda * dt]));
            }
        }
        Ok((Signal::from_raw(q_prev), grads))
    }
}

impl InvertibleLayer for ProxL1Layer {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        Ok(x.map_primary(self.prox_forward(&x.primary)))
    }

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)> {
        Ok((
            x.map_primary(self.prox_inverse(&x.primary)?),
            InversionReport::exact(),
        ))
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        let (qp, grads) = self.prox_vjp(&input.primary, &q.primary)?;
        Ok(LayerVjp {
            input_adjoint: q.map_primary(qp),
            param_grads: grads,
        })
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn bound_params(&self) -> Vec<ParamId> {
        [self.bindings.lambda, self.bindings.scale]
            .into_iter()
            .flatten()
            .collect()
    }
}
