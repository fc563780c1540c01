use crate::error::{Error, Result};
use crate::layers::ParamId;
use crate::layers::{
    AccelerationLayer, GradientBindings, GradientStepLayer, Layer, LeastSquaresBindings,
    LeastSquaresLayer, ParamKind, ProxBindings, ProxL1Layer,
};
use crate::linop::{
    add_outer, spectral_norm_sq, CgConfig, DenseOperator, Signal, POWER_ITERS_DEFAULT,
};
use crate::network::{run_engine, EngineRun, EngineSpec, LossFn, Network};
use crate::params::{ids, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Safety factor applied when a learnable step size is pulled back inside the
/// contraction bound.
pub const LIPSCHITZ_CLAMP: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pgd,
    Fista,
    Hqs,
}

/// Unrolled compressed-sensing reconstruction: recover `x ∈ Rⁿ` from
/// `y = A·x ∈ Rᵐ`, starting at `x⁰ = Aᵀy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub algorithm: Algorithm,
    pub m: usize,
    pub n: usize,
    pub n_layers: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Least-squares penalty, HQS only.
    pub mu: f64,
    /// Constant momentum, FISTA only.
    pub beta: f64,
    pub leaky_slope: f64,
    pub fp_iters: usize,
    pub cg: Option<CgConfig>,
    pub learn_alpha: bool,
    pub learn_lambda: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            algorithm: Algorithm::Pgd,
            m: 7,
            n: 10,
            n_layers: 800,
            alpha: 0.05,
            lambda: 0.06,
            mu: 1.0,
            beta: 0.5,
            leaky_slope: 1e-6,
            fp_iters: 30,
            cg: None,
            learn_alpha: false,
            learn_lambda: false,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 {
            return fail(format!(
                "problem dimensions must be positive, got m={} n={}",
                self.m, self.n
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            ));
        }
        if self.fp_iters == 0 {
            return fail("fp_iters must be positive".into());
        }
        match self.algorithm {
            Algorithm::Hqs if !(self.mu > 0.0 && self.mu.is_finite()) => {
                return fail(format!("mu must be > 0, got {}", self.mu))
            }
            Algorithm::Fista if !(self.beta != 0.0 && self.beta.is_finite()) => {
                return fail(format!(
                    "beta must be finite and nonzero, got {}",
                    self.beta
                ))
            }
            _ => {}
        }
        if let Some(cg) = &self.cg {
            cg.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn cg_config(&self) -> CgConfig {
        self.cg.unwrap_or_else(|| CgConfig::for_dim(self.n))
    }
}

/// Builds networks for one problem configuration from a parameter store.
#[derive(Clone, Debug)]
pub struct CsTemplate {
    cfg: ProblemConfig,
    /// Check the gradient-step contraction bound while building; required
    /// for engines that invert layers.
    require_invertible: bool,
}

/// Loss and parameter gradients for one training sample.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: BTreeMap<ParamId, Vec<f64>>,
    pub run: EngineRun,
}

impl CsTemplate {
    pub fn new(cfg: ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CsTemplate {
            cfg,
            require_invertible: true,
        })
    }

    pub fn with_invertibility_check(mut self, on: bool) -> Self {
        self.require_invertible = on;
        self
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.cfg
    }

    /// Initial parameters: `A` with i.i.d. `N(0, 1/m)` entries, plus the
    /// configured scalars.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let ProblemConfig { m, n, .. } = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / m as f64).sqrt())
            .map_err(|e| Error::Argument(e.to_string()))?;
        let a: Vec<f64> = (0..m * n).map(|_| normal.sample(&mut rng)).collect();
        self.params_from_matrix(a)
    }

    pub fn params_from_matrix(&self, a: Vec<f64>) -> Result<ParamStore> {
        let cfg = &self.cfg;
        if a.len() != cfg.m * cfg.n {
            return Err(Error::dim("measurement matrix", cfg.m * cfg.n, a.len()));
        }
        let mut store = ParamStore::new();
        store.insert(
            ids::MEASUREMENT_MATRIX,
            ParamKind::MeasurementMatrix,
            a,
            true,
        )?;
        store.insert(
            ids::STEP_SIZE,
            ParamKind::StepSize,
            vec![cfg.alpha],
            cfg.learn_alpha,
        )?;
        store.insert(
            ids::THRESHOLD,
            ParamKind::Threshold,
            vec![cfg.lambda],
            cfg.learn_lambda,
        )?;
        match cfg.algorithm {
            Algorithm::Hqs => {
                store.insert(ids::PENALTY, ParamKind::Penalty, vec![cfg.mu], false)?
            }
            Algorithm::Fista => {
                store.insert(ids::MOMENTUM, ParamKind::Momentum, vec![cfg.beta], false)?
            }
            Algorithm::Pgd => {}
        }
        Ok(store)
    }

    pub fn operator(&self, params: &ParamStore) -> Result<DenseOperator> {
        DenseOperator::new(
            self.cfg.m,
            self.cfg.n,
            params.values(ids::MEASUREMENT_MATRIX)?.to_vec(),
        )
    }

    /// `σ̂_max(AᵀA)` for the current measurement matrix.
    pub fn sigma_max_sq(&self, params: &ParamStore) -> Result<f64> {
        spectral_norm_sq(&self.operator(params)?, POWER_ITERS_DEFAULT, 0)
    }

    /// If the step size is learnable and violates the contraction bound for
    /// the current `A`, pulls it back inside. Returns the clamped value.
    pub fn clamp_step_size(&self, params: &mut ParamStore) -> Result<Option<f64>> {
        if !params.is_learnable(ids::STEP_SIZE) || self.cfg.algorithm == Algorithm::Hqs {
            return Ok(None);
        }
        let sigma = self.sigma_max_sq(params)?;
        let alpha = params.scalar(ids::STEP_SIZE)?;
        if alpha * sigma < 1.0 - 1e-6 {
            return Ok(None);
        }
        let clamped = LIPSCHITZ_CLAMP * (1.0 - 1e-6) / sigma;
        log::warn!(
            "step size {alpha:.6} violates the contraction bound (sigma_max = {sigma:.6}); clamped to {clamped:.6}"
        );
        params.set_values(ids::STEP_SIZE, vec![clamped])?;
        Ok(Some(clamped))
    }

    /// Measurements `y = A·x_true`.
    pub fn measure(&self, params: &ParamStore, x_true: &Signal) -> Result<Signal> {
        self.operator(params)?.apply(x_true)
    }

    /// Unrolled network for measurement `y`.
    pub fn build(&self, params: &ParamStore, y: &Signal) -> Result<Network> {
        let cfg = &self.cfg;
        let op = Arc::new(self.operator(params)?);
        let y = Arc::new(y.clone());
        let alpha = params.scalar(ids::STEP_SIZE)?;
        let lambda = params.scalar(ids::THRESHOLD)?;
        let make_gradient = || -> Result<GradientStepLayer> {
            GradientStepLayer::new(op.clone(), y.clone(), alpha, cfg.fp_iters).map(|g| {
                g.with_bindings(GradientBindings {
                    matrix: Some(ids::MEASUREMENT_MATRIX),
                    step: Some(ids::STEP_SIZE),
                    measurement: Some(ids::MEASUREMENT),
                })
            })
        };
        let gradient = match cfg.algorithm {
            Algorithm::Hqs => None,
            _ => {
                let g = make_gradient()?;
                Some(if self.require_invertible {
                    g.require_invertible(Some(spectral_norm_sq(&op, POWER_ITERS_DEFAULT, 0)?))?
                } else {
                    g
                })
            }
        };
        let prox_scale = if cfg.algorithm == Algorithm::Hqs {
            1.0
        } else {
            alpha
        };
        let prox =
            ProxL1Layer::scaled(prox_scale, lambda, cfg.leaky_slope)?.with_bindings(ProxBindings {
                lambda: Some(ids::THRESHOLD),
                scale: (cfg.algorithm != Algorithm::Hqs).then_some(ids::STEP_SIZE),
            });
        let layer = match cfg.algorithm {
            Algorithm::Pgd => Layer::pgd(gradient.expect("gradient layer"), prox),
            Algorithm::Fista => {
                let beta = params.scalar(ids::MOMENTUM)?;
                Layer::fista(
                    gradient.expect("gradient layer"),
                    prox,
                    AccelerationLayer::new(beta)?.with_binding(Some(ids::MOMENTUM)),
                )
            }
            Algorithm::Hqs => {
                let mu = params.scalar(ids::PENALTY)?;
                let lsq = LeastSquaresLayer::new(op.clone(), y.clone(), mu, cfg.cg_config())?
                    .with_bindings(LeastSquaresBindings {
                        matrix: Some(ids::MEASUREMENT_MATRIX),
                        penalty: Some(ids::PENALTY),
                        measurement: Some(ids::MEASUREMENT),
                    });
                Layer::hqs(lsq, prox)
            }
        };
        Network::new(cfg.n, vec![layer; cfg.n_layers])
    }

    /// Network input `x⁰ = Aᵀy`.
    pub fn initial_input(&self, params: &ParamStore, y: &Signal) -> Result<Signal> {
        self.operator(params)?.adjoint_apply(y)
    }

    /// Reconstruction of `x_true` from its measurements.
    pub fn reconstruct(&self, params: &ParamStore, x_true: &Signal) -> Result<Signal> {
        let y = self.measure(params, x_true)?;
        let net = self.build(params, &y)?;
        let x0 = net.initial_state(self.initial_input(params, &y)?)?;
        Ok(net.evaluate(&x0)?.primary)
    }

    /// `(1/n)‖x̂ − x_true‖²` for one sample, forward only.
    pub fn sample_loss(&self, params: &ParamStore, x_true: &Signal) -> Result<f64> {
        let xhat = self.reconstruct(params, x_true)?;
        Ok(xhat.sub(x_true).norm().powi(2) / x_true.len() as f64)
    }

    /// Loss and gradients for one sample through the selected engine.
    ///
    /// Besides the network parameters, `A` enters through the measurements
    /// `y = A·x_true` and the input `x⁰ = Aᵀy`; both paths are chained in here.
    pub fn sample_gradient(
        &self,
        params: &ParamStore,
        x_true: &Signal,
        spec: &EngineSpec,
    ) -> Result<SampleGradient> {
        let op = self.operator(params)?;
        let y = op.apply(x_true)?;
        let net = self.build(params, &y)?;
        let x0 = net.initial_state(op.adjoint_apply(&y)?)?;
        let run = run_engine(&net, &x0, &LossFn::mse(x_true.clone()), spec)?;

        let mut grads = run.bundle.param_grads.clone();
        let adj = &run.bundle.input_adjoint;
        let mut q0 = adj.primary.clone();
        if let Some(c) = &adj.companion {
            q0 = q0.add_scaled(1.0, c);
        }
        let mut g_y = op.apply(&q0)?.into_vec();
        if let Some(direct) = grads.remove(&ids::MEASUREMENT) {
            for (a, b) in g_y.iter_mut().zip(direct) {
                *a += b;
            }
        }
        let (m, n) = op.shape();
        let g_a = grads
            .entry(ids::MEASUREMENT_MATRIX)
            .or_insert_with(|| vec![0.0; m * n]);
        add_outer(g_a, n, 1.0, y.as_slice(), q0.as_slice());
        add_outer(g_a, n, 1.0, &g_y, x_true.as_slice());
        Ok(SampleGradient {
            loss: run.loss,
            grads,
            run,
        })
    }
}
