//! The gradient checker must accept a correct user layer and reject one with
//! a sign error in its parameter gradient.

use pbnet::experiments::{gradcheck, Differentiable, GradcheckConfig};
use pbnet::layers::{
    InversionReport, InvertibleLayer, Layer, LayerState, LayerVjp, ParamId, ParamKind,
};
use pbnet::linop::Signal;
use pbnet::network::{run_engine, Engine, EngineSpec, LossFn, Network};
use pbnet::params::ParamStore;
use pbnet::{Error, Result};
use std::collections::BTreeMap;
use std::sync::Arc;

const THETA: ParamId = ParamId(1);

/// `x + θ·tanh(x)`, elementwise.
#[derive(Debug)]
struct TanhResidual {
    theta: f64,
    flip_param_grad: bool,
}

impl InvertibleLayer for TanhResidual {
    fn forward(&self, x: &LayerState) -> Result<LayerState> {
        let v = x
            .primary
            .as_slice()
            .iter()
            .map(|v| v + self.theta * v.tanh())
            .collect();
        Ok(LayerState::new(Signal::new(v)?))
    }

    fn inverse(&self, _x: &LayerState) -> Result<(LayerState, InversionReport)> {
        Err(Error::State("not invertible".into()))
    }

    fn vjp(&self, input: &LayerState, q: &LayerState) -> Result<LayerVjp> {
        let x = input.primary.as_slice();
        let q = q.primary.as_slice();
        let adj = x
            .iter()
            .zip(q)
            .map(|(v, qi)| qi * (1.0 + self.theta * (1.0 - v.tanh().powi(2))))
            .collect();
        let mut g: f64 = x.iter().zip(q).map(|(v, qi)| qi * v.tanh()).sum();
        if self.flip_param_grad {
            g = -g;
        }
        Ok(LayerVjp {
            input_adjoint: LayerState::new(Signal::new(adj)?),
            param_grads: vec![(THETA, vec![g])],
        })
    }

    fn is_invertible(&self) -> bool {
        false
    }

    fn bound_params(&self) -> Vec<ParamId> {
        vec![THETA]
    }
}

struct Objective {
    flip: bool,
}

impl Objective {
    fn run(
        &self,
        params: &ParamStore,
        spec: &EngineSpec,
    ) -> Result<(f64, BTreeMap<ParamId, Vec<f64>>)> {
        let layer = Layer::Custom(Arc::new(TanhResidual {
            theta: params.scalar(THETA)?,
            flip_param_grad: self.flip,
        }));
        let net = Network::new(3, vec![layer; 4])?;
        let x0 = net.initial_state(Signal::new(vec![0.3, -0.7, 1.1])?)?;
        let target = Signal::new(vec![1.0, 0.0, -1.0])?;
        let run = run_engine(&net, &x0, &LossFn::mse(target), spec)?;
        Ok((run.loss, run.bundle.param_grads))
    }
}

impl Differentiable for Objective {
    fn loss(&self, params: &ParamStore) -> Result<f64> {
        Ok(self.run(params, &EngineSpec::new(Engine::Standard, 0))?.0)
    }

    fn gradient(
        &self,
        params: &ParamStore,
        spec: &EngineSpec,
    ) -> Result<BTreeMap<ParamId, Vec<f64>>> {
        Ok(self.run(params, spec)?.1)
    }
}

fn params() -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(THETA, ParamKind::StepSize, vec![0.4], true)
        .unwrap();
    p
}

fn config() -> GradcheckConfig {
    GradcheckConfig {
        n_layers: 4,
        checkpoints: 2,
        ..GradcheckConfig::default()
    }
}

#[test]
fn correct_layer_passes() {
    let rep = gradcheck(
        &Objective { flip: false },
        &params(),
        &config(),
        4,
        Engine::CheckpointOnly,
    )
    .unwrap();
    assert!(rep.pass, "{:?}", rep.offending);
    assert!(rep.params[0].fd_rel_err < 1e-8);
    assert_eq!(rep.params[0].engine_rel_err, 0.0);
}

#[test]
fn sign_flipped_gradient_is_reported() {
    let rep = gradcheck(
        &Objective { flip: true },
        &params(),
        &config(),
        4,
        Engine::Standard,
    )
    .unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.offending.len(), 1);
    assert!(rep.params[0].fd_rel_err > 1.0);
}

#[test]
fn memory_efficient_engine_needs_checkpoints_for_non_invertible_layers() {
    let obj = Objective { flip: false };
    let rep = gradcheck(&obj, &params(), &config(), 4, Engine::MemoryEfficient).unwrap();
    assert!(!rep.pass);
    assert!(rep.engine_error.unwrap().contains("not invertible"));

    let err = obj
        .gradient(&params(), &EngineSpec::new(Engine::MemoryEfficient, 2))
        .unwrap_err();
    assert!(err.is_config());

    // One checkpoint per layer: nothing has to be inverted.
    let full = GradcheckConfig {
        checkpoints: 4,
        ..config()
    };
    let rep = gradcheck(&obj, &params(), &full, 4, Engine::MemoryEfficient).unwrap();
    assert!(rep.pass, "{:?} {:?}", rep.offending, rep.engine_error);
    assert_eq!(rep.params[0].engine_rel_err, 0.0);
}
