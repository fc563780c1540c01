use super::config::{ExperimentKind, GradcheckConfig, RunConfig};
use crate::error::Result;
use crate::layers::{ParamId, ParamKind};
use crate::linop::Signal;
use crate::network::{rel_inf_deviation, Engine, EngineSpec};
use crate::params::ParamStore;
use crate::training::{make_dataset_with, CsTemplate, ProblemConfig};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// A scalar objective of a parameter store with engine-computed gradients.
pub trait Differentiable: Sync {
    fn loss(&self, params: &ParamStore) -> Result<f64>;
    fn gradient(
        &self,
        params: &ParamStore,
        spec: &EngineSpec,
    ) -> Result<BTreeMap<ParamId, Vec<f64>>>;
}

/// Reconstruction loss of one compressed-sensing sample.
#[derive(Clone, Debug)]
pub struct CsObjective {
    pub template: CsTemplate,
    pub x_true: Signal,
}

impl Differentiable for CsObjective {
    fn loss(&self, params: &ParamStore) -> Result<f64> {
        self.template.sample_loss(params, &self.x_true)
    }

    fn gradient(
        &self,
        params: &ParamStore,
        spec: &EngineSpec,
    ) -> Result<BTreeMap<ParamId, Vec<f64>>> {
        Ok(self
            .template
            .sample_gradient(params, &self.x_true, spec)?
            .grads)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub id: ParamId,
    pub kind: ParamKind,
    pub len: usize,
    /// `‖g − g_fd‖∞ / ‖g_fd‖∞` for the standard engine.
    pub fd_rel_err: f64,
    /// `‖g_engine − g_standard‖∞ / ‖g_standard‖∞`.
    pub engine_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub n_layers: usize,
    pub engine: Engine,
    pub checkpoints: usize,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub engine_tol: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_error: Option<String>,
    pub offending: Vec<String>,
    pub pass: bool,
}

/// Compares standard-engine gradients against central differences and the
/// chosen engine against standard, for every parameter in `params`.
pub fn gradcheck(
    obj: &dyn Differentiable,
    params: &ParamStore,
    cfg: &GradcheckConfig,
    n_layers: usize,
    engine: Engine,
) -> Result<GradcheckReport> {
    let standard = obj.gradient(params, &EngineSpec::new(Engine::Standard, 0))?;
    let (other, engine_error) =
        match obj.gradient(params, &EngineSpec::new(engine, cfg.checkpoints)) {
            Ok(g) => (Some(g), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let loss = obj.loss(params)?;
    let h = cfg.fd_step;
    let mut checks = Vec::new();
    for (id, p) in params.iter() {
        let fd = (0..p.values.len())
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let mut v = p.values.clone();
                v[i] += h;
                plus.set_values(id, v.clone())?;
                v[i] -= 2.0 * h;
                minus.set_values(id, v)?;
                Ok((obj.loss(&plus)? - obj.loss(&minus)?) / (2.0 * h))
            })
            .collect::<Result<Vec<f64>>>()?;
        let zeros = vec![0.0; p.values.len()];
        let g_std = standard.get(&id).map_or(zeros.as_slice(), Vec::as_slice);
        let fd_rel_err = rel_inf_deviation(g_std, &fd);
        let engine_rel_err = match &other {
            Some(o) => rel_inf_deviation(o.get(&id).map_or(zeros.as_slice(), Vec::as_slice), g_std),
            None => f64::INFINITY,
        };
        checks.push(ParamCheck {
            id,
            kind: p.kind,
            len: p.values.len(),
            fd_rel_err,
            engine_rel_err,
            pass: fd_rel_err <= cfg.fd_tol && engine_rel_err <= cfg.engine_tol,
        });
    }
    let offending: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| {
            format!(
                "{} ({:?}): fd {:.3e}, engine {:.3e}",
                c.id, c.kind, c.fd_rel_err, c.engine_rel_err
            )
        })
        .collect();
    Ok(GradcheckReport {
        n_layers,
        engine,
        checkpoints: cfg.checkpoints,
        fd_step: h,
        fd_tol: cfg.fd_tol,
        engine_tol: cfg.engine_tol,
        loss,
        pass: offending.is_empty() && engine_error.is_none(),
        params: checks,
        engine_error,
        offending,
    })
}

/// Gradient check of the configured problem, truncated to
/// `gradcheck.n_layers` layers, on one synthesized sample.
pub fn run_gradcheck(cfg: &RunConfig, engine: Engine) -> Result<GradcheckReport> {
    cfg.validate(ExperimentKind::Gradcheck)?;
    let seeds = cfg.seeds();
    let template = CsTemplate::new(ProblemConfig {
        n_layers: cfg.gradcheck.n_layers,
        ..cfg.problem.clone()
    })?;
    let params = template.init_params(seeds.matrix)?;
    let d = &cfg.data;
    let x_true = make_dataset_with(cfg.problem.n, 1, d.sparsity, seeds.probe, d.amplitude)?
        .samples
        .remove(0);
    let obj = CsObjective { template, x_true };
    gradcheck(
        &obj,
        &params,
        &cfg.gradcheck,
        cfg.gradcheck.n_layers,
        engine,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layer_network_passes() {
        let cfg = RunConfig {
            gradcheck: GradcheckConfig {
                n_layers: 0,
                ..GradcheckConfig::default()
            },
            ..RunConfig::default()
        };
        let r = run_gradcheck(&cfg, Engine::MemoryEfficient).unwrap();
        assert!(r.pass, "{:?}", r.offending);
        assert!(r.params.iter().all(|c| c.engine_rel_err == 0.0));
    }
}
