use super::{
    CheckpointSchedule, CheckpointStore, Diagnostics, GradientBundle, LossFn, MemoryMeter, Network,
};
use crate::error::{Error, Result};
use crate::layers::{InvertibleLayer, LayerState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "memeff")]
    MemoryEfficient,
    #[serde(rename = "checkpoint")]
    CheckpointOnly,
}

impl Engine {
    pub const ALL: [Engine; 3] = [
        Engine::Standard,
        Engine::MemoryEfficient,
        Engine::CheckpointOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Standard => "standard",
            Engine::MemoryEfficient => "memeff",
            Engine::CheckpointOnly => "checkpoint",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Engine::Standard),
            "memeff" | "memory_efficient" => Ok(Engine::MemoryEfficient),
            "checkpoint" | "checkpoint_only" => Ok(Engine::CheckpointOnly),
            other => Err(Error::Config(format!(
                "unknown engine '{other}' (expected standard, memeff or checkpoint)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineOptions {
    /// Recompute `F^(k)(x̂^(k))` after each inversion and recalculate
    /// checkpointed inputs too, filling the drift diagnostics. Costs one extra
    /// forward (and inverse at checkpoints) per layer.
    pub verify: bool,
}

/// Engine choice plus its storage budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineSpec {
    pub engine: Engine,
    /// Memory-efficient: number of uniformly placed checkpoints.
    /// Checkpoint-only: checkpoints every `⌈N / checkpoints⌉` layers.
    pub checkpoints: usize,
    pub options: EngineOptions,
}

impl EngineSpec {
    pub fn new(engine: Engine, checkpoints: usize) -> Self {
        EngineSpec {
            engine,
            checkpoints,
            options: EngineOptions::default(),
        }
    }

    pub fn verified(mut self) -> Self {
        self.options.verify = true;
        self
    }

    pub fn spacing(&self, n_layers: usize) -> usize {
        if self.checkpoints == 0 {
            n_layers.max(1)
        } else {
            n_layers.div_ceil(self.checkpoints).max(1)
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineRun {
    pub loss: f64,
    pub output: LayerState,
    pub bundle: GradientBundle,
    pub meter: MemoryMeter,
}

/// Forward pass storing exactly the scheduled layer inputs.
pub fn forward(
    net: &Network,
    x0: &LayerState,
    schedule: &CheckpointSchedule,
    meter: &mut MemoryMeter,
) -> Result<(LayerState, CheckpointStore)> {
    net.check_state(x0)?;
    let mut store = CheckpointStore::default();
    let mut x = x0.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        if schedule.contains(k) {
            meter.store(x.signal_count());
            store.insert(k, x.clone());
        }
        x = layer.forward(&x).map_err(|e| e.at_layer(k))?;
    }
    Ok((x, store))
}

fn empty_bundle(n_layers: usize, q: LayerState) -> GradientBundle {
    GradientBundle {
        input_adjoint: q,
        param_grads: BTreeMap::new(),
        diagnostics: Diagnostics {
            inversion_residuals: vec![0.0; n_layers],
            recalculation_residuals: vec![None; n_layers],
            checkpoint_drift: Vec::new(),
            recalculated_input: None,
        },
    }
}

/// Backpropagation through all `N + 1` stored activations.
pub fn backprop_standard(net: &Network, x0: &LayerState, loss: &LossFn) -> Result<EngineRun> {
    net.check_state(x0)?;
    let mut meter = MemoryMeter::new(net.dim());
    let mut acts = Vec::with_capacity(net.len() + 1);
    meter.store(x0.signal_count());
    acts.push(x0.clone());
    for (k, layer) in net.layers().iter().enumerate() {
        let next = layer.forward(&acts[k]).map_err(|e| e.at_layer(k))?;
        meter.store(next.signal_count());
        acts.push(next);
    }
    let output = acts.last().expect("x0 is stored").clone();
    let (value, mut q) = loss.evaluate(&output)?;

    let mut bundle = empty_bundle(net.len(), q.clone());
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let v = layer.vjp(&acts[k], &q).map_err(|e| e.at_layer(k))?;
        q = v.input_adjoint;
        bundle.accumulate(v.param_grads);
    }
    bundle.input_adjoint = q;
    Ok(EngineRun {
        loss: value,
        output,
        bundle,
        meter,
    })
}

/// Reverse recalculation: walks `k = N−1 … 0`, recovering each layer input
/// `x^(k)` from `x^(k+1)` with the layer's inverse, unless it is stored in
/// `store`, in which case the stored value is used.
pub fn backprop_memory_efficient(
    net: &Network,
    x_n: LayerState,
    loss_adjoint: LayerState,
    mut store: CheckpointStore,
    meter: &mut MemoryMeter,
    options: &EngineOptions,
) -> Result<GradientBundle> {
    net.check_state(&x_n)?;
    for (k, layer) in net.layers().iter().enumerate() {
        if !store.contains(k) && !layer.is_invertible() {
            return Err(Error::Config(format!(
                "layer {k} is not invertible and its input is not checkpointed"
            )));
        }
    }

    let mut bundle = empty_bundle(net.len(), loss_adjoint.clone());
    let mut x = x_n;
    let mut q = loss_adjoint;
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let input = match store.take(k) {
            Some(saved) => {
                if options.verify && layer.is_invertible() {
                    let (recalc, report) = layer.inverse(&x).map_err(|e| e.at_layer(k))?;
                    bundle.diagnostics.inversion_residuals[k] = report.residual;
                    bundle
                        .diagnostics
                        .checkpoint_drift
                        .push((k, recalc.rel_distance(&saved)));
                    if k == 0 {
                        bundle.diagnostics.recalculated_input = Some(recalc);
                    }
                }
                meter.release(saved.signal_count());
                saved
            }
            None => {
                let (recalc, report) = layer.inverse(&x).map_err(|e| e.at_layer(k))?;
                bundle.diagnostics.inversion_residuals[k] = report.residual;
                if k == 0 {
                    bundle.diagnostics.recalculated_input = Some(recalc.clone());
                }
                recalc
            }
        };
        if options.verify {
            let v = layer.forward(&input).map_err(|e| e.at_layer(k))?;
            bundle.diagnostics.recalculation_residuals[k] = Some(v.rel_distance(&x));
        }
        let v = layer.vjp(&input, &q).map_err(|e| e.at_layer(k))?;
        q = v.input_adjoint;
        bundle.accumulate(v.param_grads);
        x = input;
    }
    bundle.diagnostics.checkpoint_drift.reverse();
    bundle.input_adjoint = q;
    Ok(bundle)
}

/// Forward pass with `schedule`, loss, then [`backprop_memory_efficient`].
pub fn run_memory_efficient(
    net: &Network,
    x0: &LayerState,
    loss: &LossFn,
    schedule: &CheckpointSchedule,
    options: &EngineOptions,
) -> Result<EngineRun> {
    let mut meter = MemoryMeter::new(net.dim());
    let (output, store) = forward(net, x0, schedule, &mut meter)?;
    let (value, q) = loss.evaluate(&output)?;
    let bundle = backprop_memory_efficient(net, output.clone(), q, store, &mut meter, options)?;
    Ok(EngineRun {
        loss: value,
        output,
        bundle,
        meter,
    })
}

/// Classical checkpointing: inputs `0, K, 2K, …` are stored and every other
/// layer input is recomputed forward from the nearest stored one below it.
/// Storage `⌈N/K⌉`, recomputation `N(K−1)/2` layer evaluations.
pub fn backprop_checkpoint_only(
    net: &Network,
    x0: &LayerState,
    loss: &LossFn,
    spacing: usize,
) -> Result<EngineRun> {
    let schedule = CheckpointSchedule::every(net.len(), spacing)?;
    let mut meter = MemoryMeter::new(net.dim());
    let (output, mut store) = forward(net, x0, &schedule, &mut meter)?;
    let (value, mut q) = loss.evaluate(&output)?;

    let mut bundle = empty_bundle(net.len(), q.clone());
    let layers = net.layers();
    for k in (0..net.len()).rev() {
        let base = (k / spacing) * spacing;
        let mut x = store
            .get(base)
            .ok_or_else(|| Error::State(format!("checkpoint {base} missing")))?
            .clone();
        for (j, layer) in layers.iter().enumerate().take(k).skip(base) {
            x = layer.forward(&x).map_err(|e| e.at_layer(j))?;
        }
        meter.recomputed(k - base);
        let v = layers[k].vjp(&x, &q).map_err(|e| e.at_layer(k))?;
        q = v.input_adjoint;
        bundle.accumulate(v.param_grads);
        if k == base {
            if let Some(saved) = store.take(base) {
                meter.release(saved.signal_count());
            }
        }
    }
    bundle.input_adjoint = q;
    Ok(EngineRun {
        loss: value,
        output,
        bundle,
        meter,
    })
}

/// Runs the engine selected by `spec`.
pub fn run_engine(
    net: &Network,
    x0: &LayerState,
    loss: &LossFn,
    spec: &EngineSpec,
) -> Result<EngineRun> {
    match spec.engine {
        Engine::Standard => backprop_standard(net, x0, loss),
        Engine::MemoryEfficient => run_memory_efficient(
            net,
            x0,
            loss,
            &CheckpointSchedule::uniform(net.len(), spec.checkpoints),
            &spec.options,
        ),
        Engine::CheckpointOnly => backprop_checkpoint_only(net, x0, loss, spec.spacing(net.len())),
    }
}
