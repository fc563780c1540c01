use super::{InversionReport, InvertibleLayer, LayerState, LayerVjp, ParamId};
use crate::error::{Error, Result};
use crate::linop::Signal;

/// Momentum step on the state pair `(x_k, x_{k−1})`:
///
/// ```text
/// [x'  ]   [1+β  −β] [x_k    ]
/// [prev] = [1     0] [x_{k−1}]
/// ```
///
/// The mixing matrix has determinant `β`, so the layer inverts exactly for
/// `β ≠ 0`.
#[derive(Clone, Debug)]
pub struct AccelerationLayer {
    beta: f64,
    binding: Option<ParamId>,
}

impl AccelerationLayer {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Argument(format!(
                "momentum must be finite, got {beta}"
            )));
        }
        Ok(AccelerationLayer {
            beta,
            binding: None,
        })
    }

    pub fn with_binding(mut self, id: Option<ParamId>) -> Self {
        self.binding = id;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn split(state: &LayerState) -> Result<(&Signal, &Signal)> {
        match &state.companion {
            Some(c) => Ok((&state.primary, c)),
            None => Err(Error::State(
                "acceleration layer needs the previous iterate as companion".into(),
            )),
        }
    }

    pub fn accel_forward(&self, state: &LayerState) -> Result<LayerState> {
        let (cur, prev) = Self::split(state)?;
        let b = self.beta;
        let out = cur
            .as_slice()
            .iter()
            .zip(prev.as_slice())
            .map(|(c, p)| (1.0 + b) * c - b * p)
            .collect();
        Ok(LayerState {
            primary: Signal::from_raw(out).check_finite("accel_forward")?,
            companion: Some(cur.clone()),
        })
    }

    pub fn accel_inverse(&self, state: &LayerState) -> Result<LayerState> {
        if self.beta == 0.0 {
            return Err(Error::Config(
                "acceleration layer with beta = 0 has a singular mixing matrix".into(),
            ));
        }
        let (out, cur) = Self::split(state)?;
        let b = self.beta;
        let prev = cur
            .as_slice()
            .iter()
            .zip(out.as_slice())
            .map(|(c, o)| ((1.0 + b) * c - o) / b)
            .collect();
        Ok(LayerState {
            primary: cur.clone(),
            companion: Some(Signal::from_raw(prev).check_finite("accel_inverse")?),
        })
    }

    /// Transposed mixing: `q_cur = (1+β)q' + q_prev_out`, `q_prev = −βq'`;
    /// `∂/∂β = ⟨q', x_k − x_{k−1}⟩`.
    pub fn accel_vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        let (cur, prev) = Self::split(input)?;
        let (q_out, q_keep) = Self::split(q)?;
        let b = self.beta;
        let q_cur = q_out
            .as_slice()
            .iter()
            .zip(q_keep.as_slice())
            .map(|(qo, qk)| (1.0 + b) * qo + qk)
            .collect();
        let q_prev = q_out.scale(-b);
        let mut grads = Vec::new();
        if let Some(id) = self.binding {
            grads.push((id, vec![q_out.dot(&cur.sub(prev))]));
        }
        Ok(LayerVjp {
            input_adjoint: LayerState {
                primary: Signal::from_raw(q_cur),
                companion: Some(q_prev),
            },
            param_grads: grads,
        })
    }
}

impl InvertibleLayer for AccelerationLayer {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        self.accel_forward(x)
    }

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)> {
        Ok((self.accel_inverse(x)?, InversionReport::exact()))
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        self.accel_vjp(input, q)
    }

    fn is_invertible(&self) -> bool {
        self.beta != 0.0
    }

    fn bound_params(&self) -> Vec<ParamId> {
        self.binding.into_iter().collect()
    }

    fn needs_companion(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{directional_fd, rel_err};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(cur: &[f64], prev: &[f64]) -> LayerState {
        LayerState::with_companion(
            Signal::new(cur.to_vec()).unwrap(),
            Signal::new(prev.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_examples() {
        let l = AccelerationLayer::new(1.0).unwrap();
        let out = l.accel_forward(&pair(&[2.0], &[1.0])).unwrap();
        assert_eq!(out, pair(&[3.0], &[2.0]));
        assert_eq!(l.accel_inverse(&out).unwrap(), pair(&[2.0], &[1.0]));
    }

    #[test]
    fn zero_momentum_passes_current_and_cannot_invert() {
        let l = AccelerationLayer::new(0.0).unwrap();
        let out = l.accel_forward(&pair(&[2.0, -1.0], &[7.0, 7.0])).unwrap();
        assert_eq!(out.primary.as_slice(), &[2.0, -1.0]);
        assert!(!l.is_invertible());
        assert!(matches!(l.accel_inverse(&out), Err(Error::Config(_))));
    }

    #[test]
    fn missing_companion_is_state_error() {
        let l = AccelerationLayer::new(0.5).unwrap();
        let s = LayerState::new(Signal::new(vec![1.0]).unwrap());
        assert!(matches!(l.accel_forward(&s), Err(Error::State(_))));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let beta: f64 = 0.37;
        let l = AccelerationLayer::new(beta).unwrap();
        let cur: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prev: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = l.accel_forward(&pair(&cur, &prev)).unwrap();
        let m = [[1.0 + beta, -beta], [1.0, 0.0]];
        for i in 0..16 {
            let p = m[0][0] * cur[i] + m[0][1] * prev[i];
            let c = m[1][0] * cur[i] + m[1][1] * prev[i];
            assert!((out.primary.as_slice()[i] - p).abs() <= 1e-14);
            assert!((out.companion.as_ref().unwrap().as_slice()[i] - c).abs() <= 1e-14);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta = 0.6;
        let l = AccelerationLayer::new(beta)
            .unwrap()
            .with_binding(Some(ParamId(4)));
        let mut rv = |n| {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let x = pair(&rv(6), &rv(6));
        let q = pair(&rv(6), &rv(6));
        let u = pair(&rv(6), &rv(6));
        let v = l.accel_vjp(&x, &q).unwrap();
        let fd = directional_fd(|s| l.accel_forward(s).unwrap(), &x, &u, &q, 1e-6);
        assert!(rel_err(fd, v.input_adjoint.dot(&u)) < 1e-6);
        let obj = |b: f64| {
            AccelerationLayer::new(b)
                .unwrap()
                .accel_forward(&x)
                .unwrap()
                .dot(&q)
        };
        let fd_b = (obj(beta + 1e-6) - obj(beta - 1e-6)) / 2e-6;
        assert!(rel_err(fd_b, v.param_grads[0].1[0]) < 1e-6);
    }

    proptest! {
        #[test]
        fn round_trip(cur in proptest::collection::vec(-5.0f64..5.0, 8),
                      prev in proptest::collection::vec(-5.0f64..5.0, 8),
                      beta in 0.05f64..2.0) {
            let l = AccelerationLayer::new(beta).unwrap();
            let s = pair(&cur, &prev);
            let back = l.accel_inverse(&l.accel_forward(&s).unwrap()).unwrap();
            prop_assert!(back.rel_distance(&s) <= 1e-12 * (1.0 + s.norm()));
        }
    }
}
