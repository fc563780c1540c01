use super::{
    check_len, InversionReport, InvertibleLayer, LayerState, LayerVjp, ParamGrads, ParamId,
};
use crate::error::{Error, Result};
use crate::linop::{add_outer, cg_solve, CgConfig, CgSolution, DenseOperator, Signal};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeastSquaresBindings {
    pub matrix: Option<ParamId>,
    pub penalty: Option<ParamId>,
    pub measurement: Option<ParamId>,
}

/// Regularized least-squares data step: `z = (AᵀA + μI)⁻¹(Aᵀy + μx)`.
///
/// Forward runs CG; the inverse `x = ((AᵀA + μI)z − Aᵀy)/μ` is closed form, so
/// round-trip accuracy is limited by the CG tolerance only.
#[derive(Clone, Debug)]
pub struct LeastSquaresLayer {
    operator: Arc<DenseOperator>,
    measurement: Arc<Signal>,
    mu: f64,
    cg: CgConfig,
    bindings: LeastSquaresBindings,
}

impl LeastSquaresLayer {
    pub fn new(
        operator: Arc<DenseOperator>,
        measurement: Arc<Signal>,
        mu: f64,
        cg: CgConfig,
    ) -> Result<Self> {
        check_len("least-squares measurement", operator.rows(), &measurement)?;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Argument(format!("penalty must be > 0, got {mu}")));
        }
        cg.validate()?;
        Ok(LeastSquaresLayer {
            operator,
            measurement,
            mu,
            cg,
            bindings: LeastSquaresBindings::default(),
        })
    }

    pub fn with_bindings(mut self, bindings: LeastSquaresBindings) -> Self {
        self.bindings = bindings;
        self
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cg_config(&self) -> CgConfig {
        self.cg
    }

    pub fn operator(&self) -> &Arc<DenseOperator> {
        &self.operator
    }

    /// Forward solve with the CG outcome exposed instead of enforced.
    pub fn solve(&self, x: &Signal) -> Result<CgSolution> {
        check_len("lsq_forward", self.operator.cols(), x)?;
        let aty = self.operator.matvec_t(self.measurement.as_slice());
        let rhs: Vec<f64> = aty
            .iter()
            .zip(x.as_slice())
            .map(|(a, xi)| a + self.mu * xi)
            .collect();
        cg_solve(&self.operator, self.mu, &Signal::from_raw(rhs), &self.cg)
    }

    /// Forward solve; CG non-convergence is reported as a numeric error.
    pub fn lsq_forward(&self, x: &Signal) -> Result<Signal> {
        let sol = self.solve(x)?;
        ensure_converged(&sol, "lsq_forward")?;
        Ok(sol.x)
    }

    pub fn lsq_inverse(&self, z: &Signal) -> Result<Signal> {
        check_len("lsq_inverse", self.operator.cols(), z)?;
        let mz = self.operator.normal_apply(self.mu, z.as_slice());
        let aty = self.operator.matvec_t(self.measurement.as_slice());
        let x = mz
            .iter()
            .zip(&aty)
            .map(|(m, a)| (m - a) / self.mu)
            .collect();
        Signal::from_raw(x).check_finite("lsq_inverse")
    }

    /// With `w = (AᵀA + μI)⁻¹ q` and `z` the forward output:
    ///
    /// * input adjoint: `μw`
    /// * `μ`: `⟨w, x − z⟩`
    /// * `y`: `Aw`
    /// * `A`: `(y − Az)wᵀ − (Aw)zᵀ`
    pub fn lsq_vjp(&self, x: &Signal, q: &Signal) -> Result<(Signal, ParamGrads)> {
        let n = self.operator.cols();
        check_len("lsq_vjp input", n, x)?;
        check_len("lsq_vjp adjoint", n, q)?;
        let sol = cg_solve(&self.operator, self.mu, q, &self.cg)?;
        ensure_converged(&sol, "lsq_vjp")?;
        let w = sol.x;
        let q_prev = w.scale(self.mu);

        let b = &self.bindings;
        let mut grads = Vec::new();
        if b.matrix.is_some() || b.penalty.is_some() || b.measurement.is_some() {
            let z = self.lsq_forward(x)?;
            let a = &self.operator;
            let aw = a.matvec(w.as_slice());
            if let Some(id) = b.matrix {
                let az = a.matvec(z.as_slice());
                let resid: Vec<f64> = self
                    .measurement
                    .as_slice()
                    .iter()
                    .zip(&az)
                    .map(|(yi, ai)| yi - ai)
                    .collect();
                let mut g = DenseOperator::outer(a.rows(), n, 1.0, &resid, w.as_slice());
                add_outer(&mut g, n, -1.0, &aw, z.as_slice());
                grads.push((id, g));
            }
            if let Some(id) = b.penalty {
                grads.push((id, vec![w.dot(&x.sub(&z))]));
            }
            if let Some(id) = b.measurement {
                grads.push((id, aw));
            }
        }
        Ok((q_prev, grads))
    }
}

fn ensure_converged(sol: &CgSolution, context: &str) -> Result<()> {
    if sol.converged {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{context}: cg did not converge after {} iterations (relative residual {:e})",
            sol.iterations, sol.rel_residual
        )))
    }
}

impl InvertibleLayer for LeastSquaresLayer {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        Ok(x.map_primary(self.lsq_forward(&x.primary)?))
    }

    fn inverse(&self, x: &LayerState) -> Result<(LayerState, InversionReport)> {
        Ok((
            x.map_primary(self.lsq_inverse(&x.primary)?),
            InversionReport::exact(),
        ))
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        let (qp, grads) = self.lsq_vjp(&input.primary, &q.primary)?;
        Ok(LayerVjp {
            input_adjoint: q.map_primary(qp),
            param_grads: grads,
        })
    }

    fn is_invertible(&self) -> bool {
        true
    }

    fn dim(&self) -> Option<usize> {
        Some(self.operator.cols())
    }

    fn bound_params(&self) -> Vec<ParamId> {
        [
            self.bindings.matrix,
            self.bindings.penalty,
            self.bindings.measurement,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}
