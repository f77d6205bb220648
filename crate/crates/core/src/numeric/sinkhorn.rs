//! Log-domain Sinkhorn iterations for entropy-regularized optimal transport.
//!
//! The plan is parameterized as
//! `P_ij = mu_i nu_j exp((f_i + g_j - C_ij) / eps)`, so the potentials stay
//! finite even for zero-mass bins and tiny `eps`. At convergence the dual value
//! `<mu, f> + <nu, g>` equals `<P, C> + eps KL(P | mu nu^T)`, whose gradient is
//! `f` with respect to `mu` and `P` with respect to `C`.

use ndarray::{Array1, Array2, ArrayView2};

use super::{log_sum_exp, SimplexVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the largest row-marginal violation is at most this.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.05,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub values: Array2<f64>,
    pub row_marginal: SimplexVector,
    pub col_marginal: SimplexVector,
}

impl TransportPlan {
    /// Largest absolute deviation of the plan's row/column sums from its marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.values.sum_axis(ndarray::Axis(1));
        let cols = self.values.sum_axis(ndarray::Axis(0));
        let r = rows
            .iter()
            .zip(self.row_marginal.as_array())
            .map(|(a, b)| (a - b).abs());
        let c = cols
            .iter()
            .zip(self.col_marginal.as_array())
            .map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Transport cost `<P, C>` of the entropic plan.
    pub distance: f64,
    /// Entropic objective `<P, C> + eps KL(P | mu nu^T)` at the returned duals.
    pub regularized: f64,
    pub plan: TransportPlan,
    /// Row potential, centered to zero mean.
    pub dual_row: Array1<f64>,
    /// Column potential, centered to zero mean.
    pub dual_col: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sinkhorn_distance(
    mu: &SimplexVector,
    nu: &SimplexVector,
    cost: ArrayView2<'_, f64>,
    config: &SinkhornConfig,
) -> Result<SinkhornResult> {
    let (m, n) = cost.dim();
    if mu.len() != m || nu.len() != n {
        return Err(Error::domain(format!(
            "marginals of length {} and {} do not match a {m}x{n} cost",
            mu.len(),
            nu.len()
        )));
    }
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive, got {}", config.epsilon)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("cost matrix has non-finite entries"));
    }
    let eps = config.epsilon;
    let log_mu = mu.as_array().mapv(f64::ln);
    let log_nu = nu.as_array().mapv(f64::ln);

    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let mut row_lse = Array1::<f64>::zeros(m);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        for i in 0..m {
            row_lse[i] = log_sum_exp((0..n).map(|j| log_nu[j] + (g[j] - cost[[i, j]]) / eps));
        }
        if iterations > 0 {
            // Columns are exact after each g-update; only rows can be off.
            let err = row_violation(&log_mu, &f, &row_lse, eps, mu);
            if err <= config.tol {
                converged = true;
                break;
            }
        }
        if iterations == config.max_iter {
            break;
        }
        for i in 0..m {
            f[i] = -eps * row_lse[i];
        }
        for j in 0..n {
            g[j] = -eps * log_sum_exp((0..m).map(|i| log_mu[i] + (f[i] - cost[[i, j]]) / eps));
        }
        iterations += 1;
    }

    let mut plan = Array2::<f64>::zeros((m, n));
    let mut distance = 0.0;
    for i in 0..m {
        for j in 0..n {
            let p = (log_mu[i] + log_nu[j] + (f[i] + g[j] - cost[[i, j]]) / eps).exp();
            plan[[i, j]] = p;
            distance += p * cost[[i, j]];
        }
    }
    let regularized = weighted_sum(mu, &f) + weighted_sum(nu, &g);

    let f_mean = f.mean().unwrap_or(0.0);
    let g_mean = g.mean().unwrap_or(0.0);
    Ok(SinkhornResult {
        distance,
        regularized,
        plan: TransportPlan {
            values: plan,
            row_marginal: mu.clone(),
            col_marginal: nu.clone(),
        },
        dual_row: f.mapv(|x| x - f_mean),
        dual_col: g.mapv(|x| x - g_mean),
        iterations,
        converged,
    })
}

fn row_violation(
    log_mu: &Array1<f64>,
    f: &Array1<f64>,
    row_lse: &Array1<f64>,
    eps: f64,
    mu: &SimplexVector,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..f.len() {
        let row_sum = (log_mu[i] + f[i] / eps + row_lse[i]).exp();
        worst = worst.max((row_sum - mu.as_array()[i]).abs());
    }
    worst
}

/// `sum_i w_i x_i`, skipping zero weights so that zero-mass bins contribute nothing.
fn weighted_sum(w: &SimplexVector, x: &Array1<f64>) -> f64 {
    w.as_array()
        .iter()
        .zip(x)
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(wi, xi)| wi * xi)
        .sum()
}
