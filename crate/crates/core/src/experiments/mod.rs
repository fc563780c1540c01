//! Experiment drivers behind the `pbnet` command line, plus artifact writers.

mod artifacts;
mod benchmark;
mod config;
mod gradcheck;
mod invtest;
mod train;

pub use artifacts::{write_atomic, write_csv, write_json, write_params, Manifest};
pub use benchmark::{run_benchmark, BenchmarkReport, BenchmarkRow, EngineFit};
pub use config::{
    BenchmarkConfig, DataConfig, DerivedSeeds, ExperimentKind, GradcheckConfig, InvtestConfig,
    RunConfig,
};
pub use gradcheck::{
    gradcheck, run_gradcheck, CsObjective, Differentiable, GradcheckReport, ParamCheck,
};
pub use invtest::{run_invtest, InvtestReport, InvtestRow, RowStatus};
pub use train::{run_train, TrainReport};

/// Ordinary least-squares line through `(x, y)`: `(slope, intercept, r²)`.
///
/// `r²` is 1 when `y` is constant and fitted exactly.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some((slope, intercept, r2))
}

/// Median of a nonempty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let (s, i, r2) = linear_fit(&x, &y).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && (i + 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0]).is_none());
    }

    #[test]
    fn fit_r2_matches_hand_value() {
        // y = (0, 2, 1): slope 0.5, intercept 0.5, residuals (−0.5, 1, −0.5).
        let (s, i, r2) = linear_fit(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).unwrap();
        assert!((s - 0.5).abs() < 1e-12 && (i - 0.5).abs() < 1e-12);
        assert!((r2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
