use crate::error::{Error, Result};

/// `sign(v)·max(|v| − t, 0)`, the proximal map of `t‖·‖₁`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Soft threshold with slope `eps` inside the dead zone, which makes it a
/// continuous, strictly increasing bijection of ℝ:
///
/// ```text
/// f(v) = eps·v              |v| ≤ t
///        v − t(1 − eps)     v > t
///        v + t(1 − eps)     v < −t
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakyThreshold {
    t: f64,
    eps: f64,
}

impl LeakyThreshold {
    pub fn new(t: f64, eps: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Argument(format!("threshold must be >= 0, got {t}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Argument(format!(
                "leaky slope must lie in (0, 1), got {eps}"
            )));
        }
        Ok(LeakyThreshold { t, eps })
    }

    pub fn threshold(&self) -> f64 {
        self.t
    }

    pub fn slope(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        let shift = self.t * (1.0 - self.eps);
        if v > self.t {
            v - shift
        } else if v < -self.t {
            v + shift
        } else {
            self.eps * v
        }
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        let knee = self.eps * self.t;
        let shift = self.t * (1.0 - self.eps);
        if u > knee {
            u + shift
        } else if u < -knee {
            u - shift
        } else {
            u / self.eps
        }
    }

    /// `f′(v)`; the knee `|v| = t` takes the outer-branch value 1.
    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        if v.abs() >= self.t {
            1.0
        } else {
            self.eps
        }
    }

    /// `∂f/∂t` at `v`: `−(1 − eps)·sign(v)` on the outer branches, 0 inside.
    #[inline]
    pub fn threshold_derivative(&self, v: f64) -> f64 {
        if v > self.t || (v == self.t && v > 0.0) {
            -(1.0 - self.eps)
        } else if v < -self.t || (v == -self.t && v < 0.0) {
            1.0 - self.eps
        } else {
            0.0
        }
    }
}

pub fn leaky_soft_threshold(v: f64, t: f64, eps: f64) -> Result<f64> {
    Ok(LeakyThreshold::new(t, eps)?.apply(v))
}

pub fn leaky_soft_threshold_inverse(u: f64, t: f64, eps: f64) -> Result<f64> {
    Ok(LeakyThreshold::new(t, eps)?.inverse(u))
}
