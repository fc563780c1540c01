//! Dense signals and operators: the numerical substrate every layer is built on.
//!
//! Data consistency throughout the crate is `D(x; y) = ½‖Ax − y‖²`, so the
//! gradient is `Aᵀ(Ax − y)` and the gradient-step contraction bound reads
//! `α·σ_max(AᵀA) < 1`.

mod cg;
mod power;
mod threshold;

pub use cg::{cg_solve, CgConfig, CgSolution};
pub use power::{spectral_norm_sq, POWER_ITERS_DEFAULT};
pub use threshold::{
    leaky_soft_threshold, leaky_soft_threshold_inverse, soft_threshold, LeakyThreshold,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense real vector. Length is fixed at construction and every entry is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Signal(Vec<f64>);

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("signal length must be positive".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("signal entry {i} is not finite")));
        }
        Ok(Signal(values))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "signal length must be positive");
        Signal(vec![0.0; len])
    }

    /// Wraps raw values produced by internal arithmetic; callers re-check
    /// finiteness with [`Signal::check_finite`] at public boundaries.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Signal(values)
    }

    pub(crate) fn check_finite(self, context: &str) -> Result<Self> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "{context} produced a non-finite entry at index {i}"
            ))),
            None => Ok(self),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Signal) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `self − other`
    pub fn sub(&self, other: &Signal) -> Signal {
        Signal(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + scale·other`
    pub fn add_scaled(&self, scale: f64, other: &Signal) -> Signal {
        Signal(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    pub fn scale(&self, factor: f64) -> Signal {
        Signal(self.0.iter().map(|v| v * factor).collect())
    }

    /// `‖self − other‖ / ‖other‖`, falling back to the absolute distance when
    /// `other` is zero.
    pub fn rel_distance(&self, other: &Signal) -> f64 {
        let d = norm_diff(&self.0, &other.0);
        let r = other.norm();
        if r > 0.0 {
            d / r
        } else {
            d
        }
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Signal::new(values)
    }
}

impl From<Signal> for Vec<f64> {
    fn from(s: Signal) -> Vec<f64> {
        s.0
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense row-major `m × n` matrix used as a linear forward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    #[serde(default)]
    learnable: bool,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!(
                "operator shape must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::dim("operator entries", rows * cols, entries.len()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("operator entries must be finite".into()));
        }
        Ok(DenseOperator {
            rows,
            cols,
            entries,
            learnable: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Argument("ragged operator rows".into()));
        }
        DenseOperator::new(m, n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        DenseOperator {
            rows: n,
            cols: n,
            entries,
            learnable: false,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseOperator {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
            learnable: false,
        }
    }

    pub fn with_learnable(mut self, learnable: bool) -> Self {
        self.learnable = learnable;
        self
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// `A x`
    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        if x.len() != self.cols {
            return Err(Error::dim("apply", self.cols, x.len()));
        }
        Ok(Signal::from_raw(self.matvec(x.as_slice())))
    }

    /// `Aᵀ u`
    pub fn adjoint_apply(&self, u: &Signal) -> Result<Signal> {
        if u.len() != self.rows {
            return Err(Error::dim("adjoint_apply", self.rows, u.len()));
        }
        Ok(Signal::from_raw(self.matvec_t(u.as_slice())))
    }

    pub(crate) fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.entries.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    pub(crate) fn matvec_t(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.matvec_t_into(u, &mut out);
        out
    }

    pub(crate) fn matvec_t_into(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, &ui) in self.entries.chunks_exact(self.cols).zip(u) {
            if ui != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * ui;
                }
            }
        }
    }

    /// `(AᵀA + μI) x`
    pub(crate) fn normal_apply(&self, mu: f64, x: &[f64]) -> Vec<f64> {
        let ax = self.matvec(x);
        let mut out = self.matvec_t(&ax);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += mu * xi;
        }
        out
    }

    /// Returns `u vᵀ` flattened row-major with the operator's shape, scaled.
    pub(crate) fn outer(rows: usize, cols: usize, scale: f64, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; rows * cols];
        add_outer(&mut g, cols, scale, u, v);
        g
    }
}

/// `g += scale · u vᵀ` for a row-major buffer with `cols` columns.
pub(crate) fn add_outer(g: &mut [f64], cols: usize, scale: f64, u: &[f64], v: &[f64]) {
    for (row, &ui) in g.chunks_exact_mut(cols).zip(u) {
        let s = scale * ui;
        if s != 0.0 {
            for (gij, vj) in row.iter_mut().zip(v) {
                *gij += s * vj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseOperator {
        DenseOperator::new(
            m,
            n,
            (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Signal {
        Signal::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn identity_apply() {
        let a = DenseOperator::identity(2);
        let x = Signal::new(vec![3.0, -1.0]).unwrap();
        assert_eq!(a.apply(&x).unwrap().as_slice(), &[3.0, -1.0]);
        assert_eq!(a.adjoint_apply(&x).unwrap().as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn hand_products() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let ones = Signal::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(a.apply(&ones).unwrap().as_slice(), &[3.0, 1.0]);
        assert_eq!(a.adjoint_apply(&ones).unwrap().as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn matvec_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_op(&mut rng, 7, 10);
        let x = random_signal(&mut rng, 10);
        let got = a.apply(&x).unwrap();
        for i in 0..7 {
            let mut acc = 0.0;
            for j in 0..10 {
                acc += a.get(i, j) * x.as_slice()[j];
            }
            assert!((got.as_slice()[i] - acc).abs() <= 1e-14 * (1.0 + acc.abs()));
        }
    }

    #[test]
    fn adjoint_probe_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_op(&mut rng, 7, 10);
        for _ in 0..100 {
            let x = random_signal(&mut rng, 10);
            let u = random_signal(&mut rng, 7);
            let ax = a.apply(&x).unwrap();
            let atu = a.adjoint_apply(&u).unwrap();
            let lhs = ax.dot(&u);
            let rhs = x.dot(&atu);
            assert!((lhs - rhs).abs() <= 1e-12 * ax.norm() * u.norm());
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = DenseOperator::zeros(3, 4);
        let bad = Signal::zeros(3);
        assert!(matches!(a.apply(&bad), Err(Error::Dimension { .. })));
        let bad = Signal::zeros(4);
        assert!(matches!(
            a.adjoint_apply(&bad),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn signal_rejects_non_finite() {
        assert!(Signal::new(vec![1.0, f64::NAN]).is_err());
        assert!(Signal::new(vec![]).is_err());
        assert!(DenseOperator::new(1, 1, vec![f64::INFINITY]).is_err());
    }
}
