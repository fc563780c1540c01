use super::config::{ExperimentKind, RunConfig};
use super::linear_fit;
use crate::error::{Error, Result};
use crate::layers::{
    AccelerationLayer, GradientStepLayer, InvertibleLayer, LayerState, LeastSquaresLayer,
    ProxL1Layer,
};
use crate::linop::{spectral_norm_sq, CgConfig, Signal, POWER_ITERS_DEFAULT};
use crate::training::CsTemplate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::sync::Arc;

/// Round-trip bound for the closed-form inverses.
pub const EXACT_INVERSE_TOL: f64 = 1e-9;
/// Least-squares round trips must stay within this multiple of the CG tolerance.
pub const CG_TOL_FACTOR: f64 = 10.0;
/// Gradient-layer residuals below this are rounding noise and excluded from
/// the decay-rate fit.
pub const FIT_NOISE_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Diverged,
    AboveBound,
    NotConverged,
}

/// One line of `invtest.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct InvtestRow {
    pub layer: &'static str,
    /// `fp_iters`, `cg_tol`, `slope` or `beta`.
    pub setting: &'static str,
    pub value: f64,
    /// Worst `‖x̂ − x‖/‖x‖` over the trials.
    pub rel_residual: Option<f64>,
    pub bound: Option<f64>,
    pub status: RowStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvtestReport {
    pub rows: Vec<InvtestRow>,
    /// `α·σ̂_max(AᵀA)` of the tested gradient layer.
    pub expected_rate: f64,
    /// `exp(slope)` of the least-squares line through `ln(residual)` vs `T`.
    pub fitted_rate: Option<f64>,
    pub flagged: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn signal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Result<Signal> {
    Signal::new(gaussian(rng, n).into_iter().map(|v| v * scale).collect())
}

fn worst<F>(trials: usize, mut f: F) -> Result<f64>
where
    F: FnMut() -> Result<f64>,
{
    let mut w = 0.0f64;
    for _ in 0..trials {
        w = w.max(f()?);
    }
    Ok(w)
}

fn round_trip(layer: &dyn InvertibleLayer, x: &LayerState) -> Result<f64> {
    let z = layer.forward(x)?;
    let (back, _) = layer.inverse(&z)?;
    Ok(back.rel_distance(x))
}

/// Fitted geometric rate of `residual(T)`, ignoring values at rounding level.
pub fn fit_decay_rate(iters: &[usize], residuals: &[f64]) -> Option<f64> {
    let (t, r): (Vec<f64>, Vec<f64>) = iters
        .iter()
        .zip(residuals)
        .filter(|(_, r)| **r > FIT_NOISE_FLOOR && r.is_finite())
        .map(|(t, r)| (*t as f64, r.ln()))
        .unzip();
    linear_fit(&t, &r).map(|(slope, _, _)| slope.exp())
}

/// Round-trip residuals of every layer kind on the configured problem size.
pub fn run_invtest(cfg: &RunConfig) -> Result<InvtestReport> {
    cfg.validate(ExperimentKind::Invtest)?;
    let seeds = cfg.seeds();
    let p = &cfg.problem;
    let v = &cfg.invtest;
    let template = CsTemplate::new(p.clone())?;
    let params = template.init_params(seeds.matrix)?;
    let op = Arc::new(template.operator(&params)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.probe);
    let y = Arc::new(signal(&mut rng, p.m, 1.0)?);
    let sigma = spectral_norm_sq(&op, POWER_ITERS_DEFAULT, 0)?;
    let alpha = match v.contraction {
        Some(c) => c / sigma,
        None => p.alpha,
    };
    let expected_rate = alpha * sigma;
    let mut rows = Vec::new();

    let base = GradientStepLayer::new(op.clone(), y.clone(), alpha, 1)?;
    let inputs: Vec<Signal> = (0..v.trials)
        .map(|_| signal(&mut rng, p.n, 1.0))
        .collect::<Result<_>>()?;
    let mut fit_t = Vec::new();
    let mut fit_r = Vec::new();
    for &t in &v.fp_iters {
        let mut res = 0.0f64;
        let mut status = RowStatus::Ok;
        for x in &inputs {
            let z = base.grad_forward(x)?;
            match base.grad_inverse_iters(&z, t) {
                Ok((back, _)) => res = res.max(back.rel_distance(x)),
                Err(Error::Numeric(msg)) => {
                    log::warn!("gradient inverse, T = {t}: {msg}");
                    status = RowStatus::Diverged;
                }
                Err(e) => return Err(e),
            }
        }
        if status == RowStatus::Ok {
            fit_t.push(t);
            fit_r.push(res);
        }
        rows.push(InvtestRow {
            layer: "gradient",
            setting: "fp_iters",
            value: t as f64,
            rel_residual: (status == RowStatus::Ok).then_some(res),
            bound: None,
            status,
        });
    }
    let fitted_rate = fit_decay_rate(&fit_t, &fit_r);

    let prox = ProxL1Layer::scaled(p.alpha, p.lambda, p.leaky_slope)?;
    let t = prox.threshold().max(f64::MIN_POSITIVE);
    let res = worst(v.trials, || {
        // Spread inputs across both the dead zone and the outer branches.
        round_trip(&prox, &LayerState::new(signal(&mut rng, p.n, 3.0 * t)?))
    })?;
    rows.push(bounded(
        "prox",
        "slope",
        p.leaky_slope,
        res,
        EXACT_INVERSE_TOL,
    ));

    let accel = AccelerationLayer::new(p.beta)?;
    let res = worst(v.trials, || {
        let x =
            LayerState::with_companion(signal(&mut rng, p.n, 1.0)?, signal(&mut rng, p.n, 1.0)?)?;
        round_trip(&accel, &x)
    })?;
    rows.push(bounded(
        "acceleration",
        "beta",
        p.beta,
        res,
        EXACT_INVERSE_TOL,
    ));

    for &tol in &v.cg_tols {
        let cg = CgConfig::new(cfg.problem.cg_config().max_iters, tol)?;
        let lsq = LeastSquaresLayer::new(op.clone(), y.clone(), p.mu, cg)?;
        let res = worst(v.trials, || {
            round_trip(&lsq, &LayerState::new(signal(&mut rng, p.n, 1.0)?))
        });
        rows.push(match res {
            Ok(r) => bounded("least_squares", "cg_tol", tol, r, CG_TOL_FACTOR * tol),
            Err(Error::Numeric(msg)) => {
                log::warn!("least-squares layer, tol = {tol:e}: {msg}");
                InvtestRow {
                    layer: "least_squares",
                    setting: "cg_tol",
                    value: tol,
                    rel_residual: None,
                    bound: Some(CG_TOL_FACTOR * tol),
                    status: RowStatus::NotConverged,
                }
            }
            Err(e) => return Err(e),
        });
    }

    let flagged = rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    Ok(InvtestReport {
        rows,
        expected_rate,
        fitted_rate,
        flagged,
    })
}

fn bounded(
    layer: &'static str,
    setting: &'static str,
    value: f64,
    res: f64,
    bound: f64,
) -> InvtestRow {
    InvtestRow {
        layer,
        setting,
        value,
        rel_residual: Some(res),
        bound: Some(bound),
        status: if res <= bound {
            RowStatus::Ok
        } else {
            RowStatus::AboveBound
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::InvtestConfig;
    use crate::linop::DenseOperator;

    fn contraction_of(op: &DenseOperator, alpha: f64) -> f64 {
        alpha * spectral_norm_sq(op, POWER_ITERS_DEFAULT, 0).unwrap()
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t = [2, 4, 8, 16, 32];
        let r: Vec<f64> = t.iter().map(|t| 0.3 * 0.5f64.powi(*t as i32)).collect();
        assert!((fit_decay_rate(&t, &r).unwrap() - 0.5).abs() < 1e-9);
        // Points at rounding level are dropped.
        let mut r2 = r.clone();
        r2[4] = 1e-17;
        assert!((fit_decay_rate(&t, &r2).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn default_sweep_matches_contraction() {
        let cfg = RunConfig::default();
        let rep = run_invtest(&cfg).unwrap();
        assert!((rep.expected_rate - 0.5).abs() < 1e-12);
        let fit = rep.fitted_rate.unwrap();
        assert!((fit - 0.5).abs() <= 0.05, "fitted {fit}");
        assert_eq!(rep.flagged, 0, "{:#?}", rep.rows);
        assert_eq!(rep.rows.len(), 5 + 1 + 1 + 5);
    }

    #[test]
    fn default_problem_few_iterations_suffice() {
        let cfg = RunConfig {
            invtest: InvtestConfig {
                contraction: None,
                fp_iters: vec![4, 8],
                ..InvtestConfig::default()
            },
            ..RunConfig::default()
        };
        let rep = run_invtest(&cfg).unwrap();
        for r in rep.rows.iter().filter(|r| r.layer == "gradient") {
            assert!(r.rel_residual.unwrap() < 1e-3, "{r:?}");
        }
        let template = CsTemplate::new(cfg.problem.clone()).unwrap();
        let p = template.init_params(cfg.seeds().matrix).unwrap();
        let op = template.operator(&p).unwrap();
        assert!((contraction_of(&op, cfg.problem.alpha) - rep.expected_rate).abs() < 1e-12);
    }
}
