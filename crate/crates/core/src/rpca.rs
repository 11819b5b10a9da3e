//! Stage one: split a weight matrix into low-rank `L` plus sparse `S` by
//! ADMM on `min ‖L‖_* + λ‖S‖₁  s.t.  W = L + S`.
//!
//! Each iteration runs the L-update (singular value thresholding), then the
//! S-update (entrywise soft-thresholding), then the dual ascent step on `Y`,
//! and finally grows the penalty `μ` geometrically up to a fixed cap.

use crate::error::{CapError, Result};
use crate::linalg::{frobenius_norm, spectral_norm, svd, DenseMatrix};

/// Penalty cap relative to the initial penalty.
pub const MU_CAP_FACTOR: f64 = 1e7;
/// Relative threshold below which a singular value of `L` is not counted in
/// its rank.
pub const RANK_REL_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaConfig {
    /// Sparsity weight; `None` selects `1/sqrt(max(m, n))`.
    pub lambda: Option<f64>,
    /// Initial penalty; `None` selects `1.25 / ‖W‖₂`.
    pub mu_init: Option<f64>,
    pub rho: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            mu_init: None,
            // 1.5 lets μ hit its cap while the iterates are still short of
            // the optimum; 1.1 reaches it at a modest cost in iterations.
            rho: 1.1,
            tol: 1e-7,
            max_iters: 500,
        }
    }
}

impl RpcaConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CapError::InvalidConfig(msg.to_string()));
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad("rpca lambda must be positive");
            }
        }
        if let Some(mu) = self.mu_init {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("rpca mu_init must be positive");
            }
        }
        if !(self.rho > 1.0) {
            return bad("rpca rho must exceed 1");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("rpca tol must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("rpca max_iters must be at least 1");
        }
        Ok(())
    }

    /// The sparsity weight this config resolves to for a `rows × cols` input.
    pub fn resolved_lambda(&self, rows: usize, cols: usize) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(rows, cols))
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub l: DenseMatrix,
    pub s: DenseMatrix,
    /// Final dual variable.
    pub y: DenseMatrix,
    pub iterations: usize,
    /// `‖W − L − S‖_F / ‖W‖_F` after each iteration.
    pub residual_history: Vec<f64>,
    pub rank_l: usize,
    /// Fraction of exactly-zero entries of `S`.
    pub sparsity_s: f64,
    /// The λ actually used.
    pub lambda: f64,
}

impl RpcaResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    pub fn nnz_s(&self) -> usize {
        self.s.count_nonzero()
    }
}

/// `1 / sqrt(max(rows, cols))`.
pub fn default_lambda(rows: usize, cols: usize) -> f64 {
    1.0 / (rows.max(cols) as f64).sqrt()
}

/// Singular value shrinkage `max(σ − τ, 0)`.
pub fn svt_shrink(sigma: f64, tau: f64) -> f64 {
    (sigma - tau).max(0.0)
}

/// `sign(x) · max(|x| − τ, 0)`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    let m = x.abs() - tau;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// L-update: singular value thresholding of `W − S + Y/μ` at `1/μ`.
pub fn update_l(w: &DenseMatrix, s: &DenseMatrix, y: &DenseMatrix, mu: f64) -> Result<DenseMatrix> {
    Ok(update_l_with_spectrum(w, s, y, mu)?.0)
}

/// L-update that also returns the shrunk singular values.
fn update_l_with_spectrum(
    w: &DenseMatrix,
    s: &DenseMatrix,
    y: &DenseMatrix,
    mu: f64,
) -> Result<(DenseMatrix, Vec<f64>)> {
    let arg = w.sub(s)?.add_scaled(y, 1.0 / mu)?;
    let f = svd(&arg)?;
    let tau = 1.0 / mu;
    let shrunk: Vec<f64> = f.sigma.iter().map(|&sg| svt_shrink(sg, tau)).collect();
    Ok((f.recompose_with(&shrunk), shrunk))
}

/// S-update: entrywise soft-thresholding of `W − L + Y/μ` at `λ/μ`.
pub fn update_s(
    w: &DenseMatrix,
    l: &DenseMatrix,
    y: &DenseMatrix,
    mu: f64,
    lambda: f64,
) -> Result<DenseMatrix> {
    let tau = lambda / mu;
    Ok(w.sub(l)?.add_scaled(y, 1.0 / mu)?.map(|x| soft_threshold(x, tau)))
}

/// Runs ADMM until the relative feasibility residual drops to `config.tol`.
///
/// The zero matrix decomposes trivially into `L = S = 0` with no iterations.
pub fn decompose(w: &DenseMatrix, config: &RpcaConfig) -> Result<RpcaResult> {
    config.validate()?;
    if !w.is_finite() {
        return Err(CapError::InvalidConfig("rpca input must be finite".into()));
    }
    let (m, n) = w.shape();
    let lambda = config.resolved_lambda(m, n);
    let w_norm = frobenius_norm(w);
    if w_norm == 0.0 {
        return Ok(RpcaResult {
            l: DenseMatrix::zeros(m, n),
            s: DenseMatrix::zeros(m, n),
            y: DenseMatrix::zeros(m, n),
            iterations: 0,
            residual_history: Vec::new(),
            rank_l: 0,
            sparsity_s: 1.0,
            lambda,
        });
    }

    let w_spec = spectral_norm(w);
    let mu_init = config.mu_init.unwrap_or(1.25 / w_spec);
    let mu_max = MU_CAP_FACTOR * mu_init;
    let mut mu = mu_init;
    let mut s = DenseMatrix::zeros(m, n);
    // Dual start W / max(‖W‖₂, ‖W‖_∞/λ) puts Y on the boundary of the dual
    // norm ball, which is what lets the iterates reach the optimum rather
    // than freeze once μ has grown.
    let mut y = w.scale(1.0 / w_spec.max(w.max_abs() / lambda));
    let mut history = Vec::with_capacity(config.max_iters.min(1024));

    for _ in 0..config.max_iters {
        let (l, spectrum) = update_l_with_spectrum(w, &s, &y, mu)?;
        s = update_s(w, &l, &y, mu, lambda)?;
        let gap = w.sub(&l)?.sub(&s)?;
        y = y.add_scaled(&gap, mu)?;
        let residual = frobenius_norm(&gap) / w_norm.max(1e-12);
        history.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= config.tol {
            let top = spectrum.first().copied().unwrap_or(0.0);
            let rank_l = spectrum.iter().filter(|&&x| x > RANK_REL_THRESHOLD * top).count();
            let zeros = s.len() - s.count_nonzero();
            return Ok(RpcaResult {
                sparsity_s: zeros as f64 / s.len() as f64,
                l,
                s,
                y,
                iterations: history.len(),
                residual_history: history,
                rank_l,
                lambda,
            });
        }
        mu = (mu * config.rho).min(mu_max);
    }
    Err(CapError::RpcaNonConvergence {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}
