//! Dataset synthesis, ADAM and the mini-batch training loop.

mod adam;
mod dataset;
mod problem;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{make_dataset, make_dataset_with, AmplitudeLaw, SparseDataset};
pub use problem::{Algorithm, CsTemplate, ProblemConfig, SampleGradient, LIPSCHITZ_CLAMP};

use crate::error::{Error, Result};
use crate::layers::ParamId;
use crate::network::{Engine, EngineSpec};
use crate::params::ParamStore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub engine: Engine,
    pub checkpoints: usize,
    /// Seeds the per-epoch shuffle; run configs derive it from the master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-2,
            adam: AdamConfig::default(),
            engine: Engine::MemoryEfficient,
            checkpoints: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::Config(format!(
                "adam moments must lie in [0, 1) and eps > 0, got beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        Ok(())
    }

    pub fn engine_spec(&self) -> EngineSpec {
        EngineSpec::new(self.engine, self.checkpoints)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial: ParamStore,
    pub params: ParamStore,
    /// Epoch 0 holds the losses of the initial parameters.
    pub history: Vec<EpochRecord>,
    /// Step sizes the Lipschitz clamp had to pull back, as `(step, value)`.
    pub clamps: Vec<(u64, f64)>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> EpochRecord {
        *self.history.last().expect("history holds epoch 0")
    }
}

/// Mean per-sample loss over a dataset, forward passes only.
pub fn mean_loss(template: &CsTemplate, params: &ParamStore, data: &SparseDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let losses = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            template
                .sample_loss(params, x)
                .map_err(|e| sample_err(i, e))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean of the per-sample gradients of `indices`, summed in index order so
/// the result does not depend on thread scheduling.
pub fn batch_gradient(
    template: &CsTemplate,
    params: &ParamStore,
    data: &SparseDataset,
    indices: &[usize],
    spec: &EngineSpec,
) -> Result<(f64, BTreeMap<ParamId, Vec<f64>>)> {
    let per_sample = indices
        .par_iter()
        .map(|&i| {
            template
                .sample_gradient(params, &data.samples[i], spec)
                .map_err(|e| sample_err(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = per_sample.len().max(1) as f64;
    let mut sum: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
    let mut loss = 0.0;
    for s in per_sample {
        loss += s.loss;
        for (id, g) in s.grads {
            match sum.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => {
                    sum.insert(id, g);
                }
            }
        }
    }
    for g in sum.values_mut() {
        g.iter_mut().for_each(|v| *v /= count);
    }
    Ok((loss / count, sum))
}

fn sample_err(sample: usize, e: Error) -> Error {
    Error::Sample {
        sample,
        source: Box::new(e),
    }
}

/// Mini-batch ADAM on the learnable entries of `params`.
pub fn train(
    template: &CsTemplate,
    params: ParamStore,
    train_set: &SparseDataset,
    test_set: &SparseDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let template = template
        .clone()
        .with_invertibility_check(cfg.engine == Engine::MemoryEfficient);
    let spec = cfg.engine_spec();
    let initial = params.clone();
    let mut params = params;
    let mut adam = AdamState::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut clamps = Vec::new();
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_mse: mean_loss(&template, &params, train_set)?,
        test_mse: mean_loss(&template, &params, test_set)?,
    }];
    log::info!(
        "epoch 0: train {:.6e} test {:.6e}",
        history[0].train_mse,
        history[0].test_mse
    );
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = batch_gradient(&template, &params, train_set, batch, &spec)?;
            adam.adam_step(&mut params, &grads, cfg.learning_rate)?;
            if let Some(alpha) = template.clamp_step_size(&mut params)? {
                clamps.push((adam.step_count(), alpha));
            }
        }
        let rec = EpochRecord {
            epoch,
            train_mse: mean_loss(&template, &params, train_set)?,
            test_mse: mean_loss(&template, &params, test_set)?,
        };
        log::info!(
            "epoch {epoch}: train {:.6e} test {:.6e}",
            rec.train_mse,
            rec.test_mse
        );
        history.push(rec);
    }
    Ok(TrainOutcome {
        initial,
        params,
        history,
        clamps,
    })
}
