use super::{
    check_len, InversionReport, InvertibleLayer, LayerState, LayerVjp, ParamGrads, ParamId,
};
use crate::error::{Error, Result};
use crate::linop::{add_outer, spectral_norm_sq, DenseOperator, Signal, POWER_ITERS_DEFAULT};
use std::sync::Arc;

/// Parameters of a gradient layer that receive gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradientBindings {
    pub matrix: Option<ParamId>,
    pub step: Option<ParamId>,
    pub measurement: Option<ParamId>,
}

/// Gradient step on the data term: `z = x − α·Aᵀ(Ax − y)`.
///
/// The inverse solves `x = z + α·Aᵀ(Ax − y)` by fixed-point iteration started
/// at `x = z`, which contracts when `α·σ_max(AᵀA) < 1`.
#[derive(Clone, Debug)]
pub struct GradientStepLayer {
    operator: Arc<DenseOperator>,
    measurement: Arc<Signal>,
    alpha: f64,
    fp_iters: usize,
    /// `α·σ̂_max(AᵀA)` once the invertibility check has run.
    contraction: Option<f64>,
    bindings: GradientBindings,
}

impl GradientStepLayer {
    pub fn new(
        operator: Arc<DenseOperator>,
        measurement: Arc<Signal>,
        alpha: f64,
        fp_iters: usize,
    ) -> Result<Self> {
        check_len("gradient layer measurement", operator.rows(), &measurement)?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!(
                "step size must be >= 0, got {alpha}"
            )));
        }
        if fp_iters == 0 {
            return Err(Error::Argument(
                "fixed-point iterations must be positive".into(),
            ));
        }
        Ok(GradientStepLayer {
            operator,
            measurement,
            alpha,
            fp_iters,
            contraction: None,
            bindings: GradientBindings::default(),
        })
    }

    /// Verifies the contraction condition `α < (1/σ̂_max)(1 − 1e-6)`.
    ///
    /// `sigma_max_sq` lets callers building many layers on one operator pay for
    /// the power iteration once; `None` runs it here with 200 iterations.
    pub fn require_invertible(mut self, sigma_max_sq: Option<f64>) -> Result<Self> {
        let sigma = match sigma_max_sq {
            Some(s) => s,
            None => spectral_norm_sq(&self.operator, POWER_ITERS_DEFAULT, 0)?,
        };
        let contraction = self.alpha * sigma;
        if contraction >= 1.0 - 1e-6 {
            return Err(Error::Config(format!(
                "gradient layer is not invertible: alpha*sigma_max = {contraction:.6} >= 1 \
                 (alpha = {}, sigma_max = {sigma:.6})",
                self.alpha
            )));
        }
        self.contraction = Some(contraction);
        Ok(self)
    }

    pub fn with_bindings(mut self, bindings: GradientBindings) -> Self {
        self.bindings = bindings;
        self
    }

    pub fn with_fp_iters(mut self, fp_iters: usize) -> Self {
        self.fp_iters = fp_iters.max(1);
        self
    }

    pub fn operator(&self) -> &Arc<DenseOperator> {
        &self.operator
    }

    pub fn measurement(&self) -> &Arc<Signal> {
        &self.measurement
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn fp_iters(&self) -> usize {
        self.fp_iters
    }

    pub fn contraction(&self) -> Option<f64> {
        self.contraction
    }

    pub fn bindings(&self) -> GradientBindings {
        self.bindings
    }

    /// `Aᵀ(Ax − y)`
    fn data_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.operator.matvec(x);
        for (ri, yi) in r.iter_mut().zip(self.measurement.as_slice()) {
            *ri -= yi;
        }
        self.operator.matvec_t(&r)
    }

    pub fn grad_forward(&self, x: &Signal) -> Result<Signal> {
        check_len("grad_forward", self.operator.cols(), x)?;
        let g = self.data_gradient(x.as_slice());
        let z: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(xi, gi)| xi - self.alpha * gi)
            .collect();
        Signal::from_raw(z).check_finite("grad_forward")
    }

    /// Fixed-point inverse run for exactly `fp_iters` iterations.
    pub fn grad_inverse(&self, z: &Signal) -> Result<(Signal, InversionReport)> {
        self.grad_inverse_iters(z, self.fp_iters)
    }

    /// Fixed-point inverse with an explicit iteration count.
    ///
    /// Fails if the increment `‖x_{t+1} − x_t‖` grows between iterations
    /// beyond rounding noise, which means the map is not contracting.
    pub fn grad_inverse_iters(
        &self,
        z: &Signal,
        iters: usize,
    ) -> Result<(Signal, InversionReport)> {
        check_len("grad_inverse", self.operator.cols(), z)?;
        if self.alpha == 0.0 {
            return Ok((z.clone(), InversionReport::exact()));
        }
        let zs = z.as_slice();
        let z_norm = z.norm();
        let a = &self.operator;
        let mut x = zs.to_vec();
        let mut next = vec![0.0; x.len()];
        let mut r = vec![0.0; a.rows()];
        let mut g = vec![0.0; x.len()];
        let mut prev_step = f64::INFINITY;
        let mut step = 0.0;
        let mut done = iters;
        for t in 0..iters {
            a.matvec_into(&x, &mut r);
            for (ri, yi) in r.iter_mut().zip(self.measurement.as_slice()) {
                *ri -= yi;
            }
            a.matvec_t_into(&r, &mut g);
            for ((ni, zi), gi) in next.iter_mut().zip(zs).zip(&g) {
                *ni = zi + self.alpha * gi;
            }
            step = crate::linop::norm_diff(&next, &x);
            std::mem::swap(&mut x, &mut next);
            if !step.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient-layer inverse produced non-finite values at iteration {t}"
                )));
            }
            let floor = 64.0 * f64::EPSILON * (z_norm + crate::linop::norm(&x));
            if step > prev_step * (1.0 + 1e-9) && step > floor {
                return Err(Error::Numeric(format!(
                    "gradient-layer inverse diverged at iteration {t}: increment {step:e} > {prev_step:e}"
                )));
            }
            prev_step = step;
            if step == 0.0 {
                // Stationary in floating point: further iterations repeat `x`.
                done = t + 1;
                break;
            }
        }
        let x = Signal::from_raw(x).check_finite("grad_inverse")?;
        Ok((
            x,
            InversionReport {
                residual: step,
                iterations: done,
            },
        ))
    }

    /// Returns `(I − αAᵀA) q` and the gradients of `⟨q, z⟩` for bound parameters:
    ///
    /// * `A`: `−α((Ax − y)qᵀ + (Aq)xᵀ)`
    /// * `α`: `−⟨Aᵀ(Ax − y), q⟩`
    /// * `y`: `α·Aq`
    pub fn grad_vjp(&self, x: &Signal, q: &Signal) -> Result<(Signal, ParamGrads)> {
        let n = self.operator.cols();
        check_len("grad_vjp input", n, x)?;
        check_len("grad_vjp adjoint", n, q)?;
        let a = &self.operator;
        let aq = a.matvec(q.as_slice());
        let ataq = a.matvec_t(&aq);
        let q_prev: Vec<f64> = q
            .as_slice()
            .iter()
            .zip(&ataq)
            .map(|(qi, gi)| qi - self.alpha * gi)
            .collect();

        let mut grads = Vec::new();
        let b = &self.bindings;
        if b.matrix.is_some() || b.step.is_some() {
            let mut r = a.matvec(x.as_slice());
            for (ri, yi) in r.iter_mut().zip(self.measurement.as_slice()) {
                *ri -= yi;
            }
            if let Some(id) = b.matrix {
                let mut g = DenseOperator::outer(a.rows(), n, -self.alpha, &r, q.as_slice());
                add_outer(&mut g, n, -self.alpha, &aq, x.as_slice());
                grads.push((id, g));
            }
            if let Some(id) = b.step {
                // ⟨Aᵀr, q⟩ = ⟨r, Aq⟩
                let d: f64 = r.iter().zip(&aq).map(|(ri, ai)| ri * ai).sum();
                grads.push((id, vec![-d]));
            }
        }
        if let Some(id) = b.measurement {
            grads.push((id, aq.iter().map(|v| self.alpha * v).collect()));
        }
        Ok((Signal::from_raw(q_prev).check_finite("grad_vjp")?, grads))
    }
}

impl InvertibleLayer for GradientStepLayer {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        Ok(x.map_primary(self.grad_forward(&x.primary)?))
    }

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)> {
        let (p, report) = self.grad_inverse(&x.primary)?;
        Ok((x.map_primary(p), report))
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        let (qp, grads) = self.grad_vjp(&input.primary, &q.primary)?;
        Ok(LayerVjp {
            input_adjoint: q.map_primary(qp),
            param_grads: grads,
        })
    }

    fn is_invertible(&self) -> bool {
        self.alpha == 0.0 || self.contraction.is_some_and(|c| c < 1.0)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.operator.cols())
    }

    fn bound_params(&self) -> Vec<ParamId> {
        [
            self.bindings.matrix,
            self.bindings.step,
            self.bindings.measurement,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{directional_fd, rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const A_ID: ParamId = ParamId(0);
    const ALPHA_ID: ParamId = ParamId(1);
    const Y_ID: ParamId = ParamId(5);

    fn scalar_layer(alpha: f64) -> GradientStepLayer {
        GradientStepLayer::new(
            Arc::new(DenseOperator::identity(1)),
            Arc::new(Signal::new(vec![0.0]).unwrap()),
            alpha,
            4,
        )
        .unwrap()
    }

    fn random_layer(seed: u64, frac: f64, iters: usize) -> (GradientStepLayer, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseOperator::new(
            7,
            10,
            (0..70).map(|_| rng.random_range(-0.6..0.6)).collect(),
        )
        .unwrap();
        let y = Signal::new((0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let sigma = spectral_norm_sq(&a, 500, 0).unwrap();
        let layer = GradientStepLayer::new(Arc::new(a), Arc::new(y), frac / sigma, iters)
            .unwrap()
            .require_invertible(Some(sigma))
            .unwrap()
            .with_bindings(GradientBindings {
                matrix: Some(A_ID),
                step: Some(ALPHA_ID),
                measurement: Some(Y_ID),
            });
        (layer, rng)
    }

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Signal {
        Signal::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn scalar_forward() {
        let layer = scalar_layer(0.5);
        let z = layer
            .grad_forward(&Signal::new(vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(z.as_slice(), &[0.5]);
        let still = scalar_layer(0.0);
        let x = Signal::new(vec![0.7]).unwrap();
        assert_eq!(still.grad_forward(&x).unwrap(), x);
    }

    #[test]
    fn scalar_fixed_point_trace() {
        // x ← 0.5 + 0.5x from x = 0.5: 0.75, 0.875, 0.9375, 0.96875
        let layer = scalar_layer(0.5);
        let z = Signal::new(vec![0.5]).unwrap();
        let expected = [0.75, 0.875, 0.9375, 0.96875];
        for (t, want) in expected.iter().enumerate() {
            let (x, _) = layer.grad_inverse_iters(&z, t + 1).unwrap();
            assert_eq!(x.as_slice()[0], *want);
            // error to the true preimage (1.0) halves each iteration
            assert!(((1.0 - x.as_slice()[0]) - 0.5f64.powi(t as i32 + 2)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_step_inverse_is_identity() {
        let layer = scalar_layer(0.0);
        let z = Signal::new(vec![0.3]).unwrap();
        let (x, report) = layer.grad_inverse(&z).unwrap();
        assert_eq!(x, z);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn forward_matches_expanded_form() {
        let (layer, mut rng) = random_layer(1, 0.9, 60);
        let x = random_signal(&mut rng, 10);
        let a = layer.operator();
        let y = layer.measurement();
        let atax = a.adjoint_apply(&a.apply(&x).unwrap()).unwrap();
        let aty = a.adjoint_apply(y).unwrap();
        let expected = x
            .add_scaled(-layer.alpha(), &atax)
            .add_scaled(layer.alpha(), &aty);
        let got = layer.grad_forward(&x).unwrap();
        for (g, e) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((g - e).abs() <= 1e-13);
        }
    }

    #[test]
    fn round_trip_at_geometric_rate() {
        for seed in 0..5 {
            let (layer, mut rng) = random_layer(seed, 0.9, 60);
            let x = random_signal(&mut rng, 10);
            let z = layer.grad_forward(&x).unwrap();
            let (back, _) = layer.grad_inverse(&z).unwrap();
            let init_err = z.sub(&x).norm();
            let bound = 0.9f64.powi(60) * init_err + 1e-14;
            assert!(back.sub(&x).norm() <= bound, "seed {seed}");
        }
    }

    #[test]
    fn increments_contract() {
        let (layer, mut rng) = random_layer(4, 0.8, 1);
        let x = random_signal(&mut rng, 10);
        let z = layer.grad_forward(&x).unwrap();
        let c = layer.contraction().unwrap();
        let mut prev = f64::INFINITY;
        for t in 1..25 {
            let (_, r) = layer.grad_inverse_iters(&z, t).unwrap();
            if prev.is_finite() && prev > 1e-13 {
                assert!(
                    r.residual <= (c + 1e-9) * prev,
                    "t={t}: {} vs {}",
                    r.residual,
                    prev
                );
            }
            prev = r.residual;
        }
    }

    #[test]
    fn lipschitz_violation_rejected() {
        let layer = GradientStepLayer::new(
            Arc::new(DenseOperator::from_rows(&[vec![2.0]]).unwrap()),
            Arc::new(Signal::new(vec![0.0]).unwrap()),
            0.3,
            4,
        )
        .unwrap();
        assert!(matches!(
            layer.require_invertible(None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_detected() {
        // α·σ = 1.5, so the fixed point iteration expands.
        let layer = GradientStepLayer::new(
            Arc::new(DenseOperator::identity(1)),
            Arc::new(Signal::new(vec![0.0]).unwrap()),
            1.5,
            10,
        )
        .unwrap();
        let z = Signal::new(vec![1.0]).unwrap();
        assert!(matches!(layer.grad_inverse(&z), Err(Error::Numeric(_))));
    }

    #[test]
    fn scalar_vjp() {
        let layer = scalar_layer(0.5).with_bindings(GradientBindings {
            step: Some(ALPHA_ID),
            ..Default::default()
        });
        let (qp, grads) = layer
            .grad_vjp(
                &Signal::new(vec![1.0]).unwrap(),
                &Signal::new(vec![1.0]).unwrap(),
            )
            .unwrap();
        assert_eq!(qp.as_slice(), &[0.5]);
        assert_eq!(grads, vec![(ALPHA_ID, vec![-1.0])]);
    }

    #[test]
    fn zero_step_vjp_passes_adjoint_through() {
        let layer = scalar_layer(0.0);
        let q = Signal::new(vec![0.4]).unwrap();
        let (qp, grads) = layer
            .grad_vjp(&Signal::new(vec![2.0]).unwrap(), &q)
            .unwrap();
        assert_eq!(qp, q);
        assert!(grads.is_empty());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let h = 1e-6;
        for seed in 10..13 {
            let (layer, mut rng) = random_layer(seed, 0.7, 30);
            let x = random_signal(&mut rng, 10);
            let q = random_signal(&mut rng, 10);
            let (qp, grads) = layer.grad_vjp(&x, &q).unwrap();

            // input adjoint, along random directions
            for _ in 0..5 {
                let u = random_signal(&mut rng, 10);
                let fd = directional_fd(
                    |s| layer.forward(s).unwrap(),
                    &x.clone().into(),
                    &u.clone().into(),
                    &q.clone().into(),
                    h,
                );
                assert!(rel_err(fd, qp.dot(&u)) < 1e-5);
            }

            let objective = |a: &DenseOperator, alpha: f64, y: &Signal| {
                let l = GradientStepLayer::new(Arc::new(a.clone()), Arc::new(y.clone()), alpha, 1)
                    .unwrap();
                l.grad_forward(&x).unwrap().dot(&q)
            };
            let a0 = layer.operator().as_ref().clone();
            let y0 = layer.measurement().as_ref().clone();
            let by_id = |id| grads.iter().find(|(g, _)| *g == id).unwrap().1.clone();

            let ga = by_id(A_ID);
            for k in 0..70 {
                let mut plus = a0.entries().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (objective(
                    &DenseOperator::new(7, 10, plus).unwrap(),
                    layer.alpha(),
                    &y0,
                ) - objective(
                    &DenseOperator::new(7, 10, minus).unwrap(),
                    layer.alpha(),
                    &y0,
                )) / (2.0 * h);
                assert!((fd - ga[k]).abs() <= 1e-5 * fd.abs().max(ga[k].abs()).max(1e-3));
            }

            let fd = (objective(&a0, layer.alpha() + h, &y0)
                - objective(&a0, layer.alpha() - h, &y0))
                / (2.0 * h);
            assert!(rel_err(fd, by_id(ALPHA_ID)[0]) < 1e-5);

            let gy = by_id(Y_ID);
            for k in 0..7 {
                let mut plus = y0.as_slice().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (objective(&a0, layer.alpha(), &Signal::new(plus).unwrap())
                    - objective(&a0, layer.alpha(), &Signal::new(minus).unwrap()))
                    / (2.0 * h);
                assert!((fd - gy[k]).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let (layer, _) = random_layer(2, 0.5, 4);
        assert!(layer.grad_forward(&Signal::zeros(3)).is_err());
        assert!(GradientStepLayer::new(
            Arc::new(DenseOperator::zeros(2, 2)),
            Arc::new(Signal::zeros(3)),
            0.1,
            1
        )
        .is_err());
    }
}
