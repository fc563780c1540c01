use crate::error::{Error, Result};
use crate::network::Engine;
use crate::training::{AmplitudeLaw, CsTemplate, ProblemConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Train,
    Benchmark,
    Gradcheck,
    Invtest,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Benchmark => "benchmark",
            ExperimentKind::Gradcheck => "gradcheck",
            ExperimentKind::Invtest => "invtest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub sparsity: usize,
    pub amplitude: AmplitudeLaw,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 20,
            n_test: 100,
            sparsity: 1,
            amplitude: AmplitudeLaw::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_layers: Vec<usize>,
    pub engines: Vec<Engine>,
    pub checkpoints: usize,
    pub repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_layers: vec![50, 100, 200, 400, 800],
            engines: vec![Engine::Standard, Engine::MemoryEfficient],
            checkpoints: 10,
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub n_layers: usize,
    /// Checkpoint budget of the engine compared against standard backprop.
    pub checkpoints: usize,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub engine_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_layers: 20,
            checkpoints: 5,
            fd_step: 1e-6,
            fd_tol: 1e-4,
            engine_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvtestConfig {
    pub fp_iters: Vec<usize>,
    /// Target `α·σ_max` for the gradient-layer sweep; `None` keeps the
    /// problem's step size.
    pub contraction: Option<f64>,
    pub cg_tols: Vec<f64>,
    /// Random inputs per row; the worst residual is reported.
    pub trials: usize,
}

impl Default for InvtestConfig {
    fn default() -> Self {
        InvtestConfig {
            fp_iters: vec![2, 4, 8, 16, 32],
            contraction: Some(0.5),
            cg_tols: vec![1e-4, 1e-6, 1e-8, 1e-10, 1e-12],
            trials: 5,
        }
    }
}

/// A complete experiment description. Every section has defaults matching the
/// desk-scale compressed-sensing experiment, so `{}` is a valid config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional guard: if set, the config may only be run by this command.
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub problem: ProblemConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub benchmark: BenchmarkConfig,
    pub gradcheck: GradcheckConfig,
    pub invtest: InvtestConfig,
}

/// Seeds derived from the master seed, recorded in every manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub master: u64,
    pub matrix: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub shuffle: u64,
    pub probe: u64,
}

impl DerivedSeeds {
    pub fn from_master(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        DerivedSeeds {
            master,
            matrix: rng.random(),
            train_data: rng.random(),
            test_data: rng.random(),
            shuffle: rng.random(),
            probe: rng.random(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seeds(&self) -> DerivedSeeds {
        DerivedSeeds::from_master(self.seed)
    }

    /// Checks everything that can be checked without running, including the
    /// contraction bound of the initial network when an engine inverts layers.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(expected) = self.experiment {
            if expected != kind {
                return Err(Error::Config(format!(
                    "config is for '{}' but was run with '{}'",
                    expected.as_str(),
                    kind.as_str()
                )));
            }
        }
        let template = CsTemplate::new(self.problem.clone())?;
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.data.sparsity > self.problem.n {
            return cfg_err(format!(
                "data.sparsity {} exceeds signal length {}",
                self.data.sparsity, self.problem.n
            ));
        }
        match kind {
            ExperimentKind::Train => {
                self.train.validate()?;
                if self.data.n_train == 0 {
                    return cfg_err("data.n_train must be positive".into());
                }
                let uses_inverse = self.train.engine == Engine::MemoryEfficient;
                self.check_initial_network(&template, uses_inverse)?;
            }
            ExperimentKind::Benchmark => {
                let b = &self.benchmark;
                if b.n_layers.is_empty() || b.engines.is_empty() {
                    return cfg_err(
                        "benchmark.n_layers and benchmark.engines must be nonempty".into(),
                    );
                }
                if b.repeats == 0 {
                    return cfg_err("benchmark.repeats must be positive".into());
                }
                let uses_inverse = b.engines.contains(&Engine::MemoryEfficient);
                self.check_initial_network(&template, uses_inverse)?;
            }
            ExperimentKind::Gradcheck => {
                let g = &self.gradcheck;
                if !(g.fd_step > 0.0 && g.fd_tol > 0.0 && g.engine_tol > 0.0) {
                    return cfg_err("gradcheck step and tolerances must be positive".into());
                }
                self.check_initial_network(&template, true)?;
            }
            ExperimentKind::Invtest => {
                let v = &self.invtest;
                if v.fp_iters.is_empty() || v.fp_iters.contains(&0) {
                    return cfg_err("invtest.fp_iters must be nonempty and positive".into());
                }
                if v.cg_tols.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return cfg_err("invtest.cg_tols must lie in (0, 1)".into());
                }
                if let Some(c) = v.contraction {
                    if !(c > 0.0 && c < 1.0) {
                        return cfg_err(format!("invtest.contraction must lie in (0, 1), got {c}"));
                    }
                }
                if v.trials == 0 {
                    return cfg_err("invtest.trials must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn check_initial_network(&self, template: &CsTemplate, uses_inverse: bool) -> Result<()> {
        let params = template.init_params(self.seeds().matrix)?;
        let y = crate::linop::Signal::zeros(self.problem.m);
        template
            .clone()
            .with_invertibility_check(uses_inverse)
            .build(&params, &y)
            .map(|_| ())
    }
}
