use super::{dot, norm, DenseOperator, Signal};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CG_TOL_DEFAULT: f64 = 1e-10;

/// Stopping rule for [`cg_solve`]: relative residual `‖r‖/‖rhs‖ ≤ tol` or `max_iters`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl CgConfig {
    pub fn new(max_iters: usize, tol: f64) -> Result<Self> {
        let cfg = CgConfig { max_iters, tol };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for an `n`-dimensional system: `10·n` iterations, `tol = 1e-10`.
    pub fn for_dim(n: usize) -> Self {
        CgConfig {
            max_iters: 10 * n.max(1),
            tol: CG_TOL_DEFAULT,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Argument("cg max_iters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Argument(format!(
                "cg tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Signal,
    pub iterations: usize,
    /// True relative residual `‖(AᵀA + μI)x − rhs‖ / ‖rhs‖` of the returned iterate.
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solves `(AᵀA + μI) x = rhs` by conjugate gradients, starting from zero.
///
/// Non-convergence is not an error: the last iterate comes back with
/// `converged = false` and its residual. A zero-curvature search direction
/// (singular normal matrix with `μ = 0`) is.
pub fn cg_solve(op: &DenseOperator, mu: f64, rhs: &Signal, cfg: &CgConfig) -> Result<CgSolution> {
    cfg.validate()?;
    if rhs.len() != op.cols() {
        return Err(Error::dim("cg_solve rhs", op.cols(), rhs.len()));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Argument(format!(
            "cg penalty must be >= 0, got {mu}"
        )));
    }

    let n = rhs.len();
    let b = rhs.as_slice();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: Signal::zeros(n),
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut iterations = 0;

    // The recursive residual can drift from the true one; restart from the
    // true residual whenever the recursion claims convergence early.
    loop {
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        while iterations < cfg.max_iters && rr.sqrt() > cfg.tol * b_norm {
            let ap = op.normal_apply(mu, &p);
            let curvature = dot(&p, &ap);
            if curvature <= 0.0 || !curvature.is_finite() {
                return Err(Error::Numeric(format!(
                    "cg breakdown at iteration {iterations}: curvature {curvature:e}"
                )));
            }
            let step = rr / curvature;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rr_next = dot(&r, &r);
            let beta = rr_next / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_next;
            iterations += 1;
        }

        let mx = op.normal_apply(mu, &x);
        r = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
        let true_res = norm(&r) / b_norm;
        let converged = true_res <= cfg.tol;
        if converged || iterations >= cfg.max_iters {
            let x = Signal::from_raw(x).check_finite("cg_solve")?;
            return Ok(CgSolution {
                x,
                iterations,
                rel_residual: true_res,
                converged,
            });
        }
    }
}
