use super::config::{DerivedSeeds, ExperimentKind, RunConfig};
use crate::error::Result;
use crate::training::{make_dataset_with, train, CsTemplate, TrainOutcome};
use serde_json::json;

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub seeds: DerivedSeeds,
    pub outcome: TrainOutcome,
}

impl TrainReport {
    pub fn initial_test_mse(&self) -> f64 {
        self.outcome.history[0].test_mse
    }

    pub fn final_test_mse(&self) -> f64 {
        self.outcome.final_record().test_mse
    }

    pub fn summary(&self) -> serde_json::Value {
        json!({
            "epochs_run": self.outcome.history.len() - 1,
            "initial_test_mse": self.initial_test_mse(),
            "final_test_mse": self.final_test_mse(),
            "final_train_mse": self.outcome.final_record().train_mse,
            "step_size_clamps": self.outcome.clamps,
        })
    }
}

/// Trains the configured template on freshly synthesized train/test sets.
pub fn run_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate(ExperimentKind::Train)?;
    let seeds = cfg.seeds();
    let template = CsTemplate::new(cfg.problem.clone())?;
    let params = template.init_params(seeds.matrix)?;
    let n = cfg.problem.n;
    let d = &cfg.data;
    let train_set = make_dataset_with(n, d.n_train, d.sparsity, seeds.train_data, d.amplitude)?;
    let test_set = make_dataset_with(n, d.n_test, d.sparsity, seeds.test_data, d.amplitude)?;
    let mut tc = cfg.train.clone();
    tc.seed = seeds.shuffle;
    let outcome = train(&template, params, &train_set, &test_set, &tc)?;
    Ok(TrainReport { seeds, outcome })
}
