use super::config::{ExperimentKind, RunConfig};
use super::{linear_fit, median};
use crate::error::Result;
use crate::network::{
    backprop_standard, max_rel_deviation, run_engine, Engine, EngineRun, EngineSpec, LossFn,
};
use crate::training::{make_dataset_with, CsTemplate, ProblemConfig};
use serde::Serialize;
use std::time::Instant;

/// One line of `benchmark.csv`; fields are empty when the engine failed.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkRow {
    pub n_layers: usize,
    pub engine: Engine,
    pub peak_signal_count: Option<usize>,
    pub peak_bytes: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub grad_rel_err_vs_standard: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Linear fit of wall time against layer count for one engine.
#[derive(Clone, Debug, Serialize)]
pub struct EngineFit {
    pub engine: Engine,
    pub ms_per_layer: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<String>,
    pub time_fits: Vec<EngineFit>,
    /// `wall_time(engine) / wall_time(standard)` at the largest layer count.
    pub time_ratios_at_max: Vec<(Engine, f64)>,
}

impl BenchmarkReport {
    pub fn row(&self, n_layers: usize, engine: Engine) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.n_layers == n_layers && r.engine == engine)
    }
}

/// Memory and time of each engine over the configured layer-count sweep, on
/// one fixed sample. Timing covers the engine call only.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    cfg.validate(ExperimentKind::Benchmark)?;
    let b = &cfg.benchmark;
    let seeds = cfg.seeds();
    let base = CsTemplate::new(cfg.problem.clone())?;
    let params = base.init_params(seeds.matrix)?;
    let d = &cfg.data;
    let x_true = make_dataset_with(cfg.problem.n, 1, d.sparsity, seeds.probe, d.amplitude)?
        .samples
        .remove(0);
    let y = base.measure(&params, &x_true)?;
    let x0_signal = base.initial_input(&params, &y)?;
    let loss = LossFn::mse(x_true);

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n_layers in &b.n_layers {
        let template = CsTemplate::new(ProblemConfig {
            n_layers,
            ..cfg.problem.clone()
        })?
        .with_invertibility_check(b.engines.contains(&Engine::MemoryEfficient));
        let net = template.build(&params, &y)?;
        let x0 = net.initial_state(x0_signal.clone())?;
        let reference = backprop_standard(&net, &x0, &loss)?;
        for &engine in &b.engines {
            let spec = EngineSpec::new(engine, b.checkpoints);
            let mut times = Vec::with_capacity(b.repeats);
            let mut last: Option<EngineRun> = None;
            let mut error = None;
            for _ in 0..b.repeats {
                let start = Instant::now();
                let res = run_engine(&net, &x0, &loss, &spec);
                times.push(start.elapsed().as_secs_f64() * 1e3);
                match res {
                    Ok(run) => last = Some(run),
                    Err(e) => {
                        error = Some(e);
                        break;
                    }
                }
            }
            let row = match (error, last) {
                (None, Some(run)) => BenchmarkRow {
                    n_layers,
                    engine,
                    peak_signal_count: Some(run.meter.peak_signal_count()),
                    peak_bytes: Some(run.meter.peak_bytes()),
                    wall_time_ms: Some(median(&times)),
                    grad_rel_err_vs_standard: Some(max_rel_deviation(
                        &run.bundle.param_grads,
                        &reference.bundle.param_grads,
                    )),
                    final_loss: Some(run.loss),
                },
                (err, _) => {
                    let msg =
                        err.map_or_else(|| "no repetitions ran".to_string(), |e| e.to_string());
                    log::warn!("benchmark N = {n_layers}, {engine}: {msg}");
                    failures.push(format!("N = {n_layers}, {engine}: {msg}"));
                    BenchmarkRow {
                        n_layers,
                        engine,
                        peak_signal_count: None,
                        peak_bytes: None,
                        wall_time_ms: None,
                        grad_rel_err_vs_standard: None,
                        final_loss: None,
                    }
                }
            };
            log::info!(
                "N = {n_layers:>5} {engine:<10} peak {:?} time {:?} ms",
                row.peak_signal_count,
                row.wall_time_ms
            );
            rows.push(row);
        }
    }

    let time_fits = b
        .engines
        .iter()
        .filter_map(|&engine| {
            let (n, t): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.engine == engine)
                .filter_map(|r| r.wall_time_ms.map(|t| (r.n_layers as f64, t)))
                .unzip();
            linear_fit(&n, &t).map(|(slope, _, r2)| EngineFit {
                engine,
                ms_per_layer: slope,
                r_squared: r2,
            })
        })
        .collect();
    let max_n = b.n_layers.iter().copied().max().unwrap_or(0);
    let std_time = rows
        .iter()
        .find(|r| r.n_layers == max_n && r.engine == Engine::Standard)
        .and_then(|r| r.wall_time_ms);
    let time_ratios_at_max = match std_time {
        Some(st) if st > 0.0 => rows
            .iter()
            .filter(|r| r.n_layers == max_n && r.engine != Engine::Standard)
            .filter_map(|r| r.wall_time_ms.map(|t| (r.engine, t / st)))
            .collect(),
        _ => Vec::new(),
    };
    Ok(BenchmarkReport {
        rows,
        failures,
        time_fits,
        time_ratios_at_max,
    })
}
