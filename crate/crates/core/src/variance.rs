//! Robust sandwich variance estimation for weighted two-phase fits.
//!
//! The total variance splits into a phase-1 component `I^{-1}` (cohort from
//! superpopulation) and a phase-2 component `I^{-1} V I^{-1}` (sample from
//! cohort), where `V` is a residual-based approximation for balanced
//! sampling: per-unit score contributions are regressed on the balancing
//! variables and only the residual variation, scaled by the
//! finite-population constants `c_i`, survives.

use ndarray::{Array1, Array2};

use crate::cox::CoxFit;
use crate::linalg;
use crate::{Error, Result};

/// Variance decomposition for one fit.
#[derive(Debug, Clone)]
pub struct VarianceResult {
    pub total: Array2<f64>,
    /// Phase-1 component `I^{-1}`.
    pub phase1: Array2<f64>,
    /// Phase-2 component `I^{-1} V I^{-1}`.
    pub phase2: Array2<f64>,
    pub se_total: Vec<f64>,
    pub se1: Vec<f64>,
    pub se2: Vec<f64>,
}

impl VarianceResult {
    /// All-zero result for fits whose variance cannot be estimated
    /// (separated or inestimable replications, excluded upstream).
    pub fn zeros(k: usize) -> Self {
        VarianceResult {
            total: Array2::zeros((k, k)),
            phase1: Array2::zeros((k, k)),
            phase2: Array2::zeros((k, k)),
            se_total: vec![0.0; k],
            se1: vec![0.0; k],
            se2: vec![0.0; k],
        }
    }
}

/// Finite-population constant `c_i = n/(n-p) * (1 - pi_i)`.
pub fn c_constant(n: usize, p: usize, pi_i: f64) -> Result<f64> {
    if n <= p {
        return Err(Error::Argument(format!(
            "c constant requires n > p, got n = {}, p = {}",
            n, p
        )));
    }
    if !(0.0..=1.0).contains(&pi_i) {
        return Err(Error::Argument(format!(
            "inclusion probability {} outside [0, 1]",
            pi_i
        )));
    }
    Ok(n as f64 / (n - p) as f64 * (1.0 - pi_i))
}

/// Residual-based phase-2 variance of the weighted score:
/// `V = sum_S c_i e_i e_i' / pi_i^2` with
/// `e_i = y_i - B' x_i` and
/// `B = (sum_S c_l x_l x_l' / pi_l^2)^{-1} sum_S c_l x_l y_l' / pi_l^2`,
/// i.e. the weighted regression of `y/pi` on `x/pi`. Responses exactly
/// linear in the balancing variables therefore contribute nothing.
///
/// `x` rows are the balancing auxiliaries (delta-betas), `y` rows the score
/// contributions of the final fit, `p` the number of balancing columns for
/// the `c_i` constant. Certainty units (`pi = 1`) contribute nothing.
pub fn phase2_component(
    pis: &[f64],
    x: &Array2<f64>,
    y: &Array2<f64>,
    p: usize,
) -> Result<Array2<f64>> {
    let n = pis.len();
    if x.nrows() != n || y.nrows() != n {
        return Err(Error::Argument(format!(
            "{} probabilities vs {} x rows vs {} y rows",
            n,
            x.nrows(),
            y.nrows()
        )));
    }
    let q = x.ncols();
    let k = y.ncols();
    if pis.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument(
            "inclusion probabilities must lie in [0, 1]".into(),
        ));
    }

    // Census: every c_i vanishes.
    if pis.iter().all(|&v| v >= 1.0 - 1e-12) {
        return Ok(Array2::zeros((k, k)));
    }
    let c: Vec<f64> = pis
        .iter()
        .map(|&pi| c_constant(n, p, pi))
        .collect::<Result<_>>()?;

    let mut gram = Array2::<f64>::zeros((q, q));
    let mut cross = Array2::<f64>::zeros((q, k));
    for i in 0..n {
        if c[i] == 0.0 {
            continue;
        }
        let pi = pis[i];
        let w2 = c[i] / (pi * pi);
        for a in 0..q {
            let xa = x[(i, a)];
            for b in 0..q {
                gram[(a, b)] += w2 * xa * x[(i, b)];
            }
            for b in 0..k {
                cross[(a, b)] += w2 * xa * y[(i, b)];
            }
        }
    }
    let b_mat = linalg::solve_multi(&gram, &cross).map_err(|_| {
        Error::RankDeficient("singular regression system in phase-2 variance".into())
    })?;

    let mut v = Array2::<f64>::zeros((k, k));
    for i in 0..n {
        if c[i] == 0.0 {
            continue;
        }
        let pi = pis[i];
        let mut e = Array1::<f64>::zeros(k);
        for b in 0..k {
            let mut fitted = 0.0;
            for a in 0..q {
                fitted += x[(i, a)] * b_mat[(a, b)];
            }
            e[b] = y[(i, b)] - fitted;
        }
        let w = c[i] / (pi * pi);
        for a in 0..k {
            for b in 0..k {
                v[(a, b)] += w * e[a] * e[b];
            }
        }
    }
    // Exact symmetry despite accumulation order.
    for a in 0..k {
        for b in (a + 1)..k {
            let m = 0.5 * (v[(a, b)] + v[(b, a)]);
            v[(a, b)] = m;
            v[(b, a)] = m;
        }
    }
    Ok(v)
}

/// Sandwich of a census fit: no phase-2 sampling, `V = 0`.
pub fn sandwich_census(fit: &CoxFit) -> Result<VarianceResult> {
    let k = fit.beta_hat.len();
    sandwich(fit, &Array2::zeros((k, k)))
}

/// Assembles the sandwich `I^{-1} + I^{-1} V I^{-1}` from a fit and the
/// phase-2 matrix `V`.
pub fn sandwich(fit: &CoxFit, v: &Array2<f64>) -> Result<VarianceResult> {
    let k = fit.beta_hat.len();
    if v.nrows() != k || v.ncols() != k {
        return Err(Error::Argument(format!(
            "V is {}x{}, expected {}x{}",
            v.nrows(),
            v.ncols(),
            k,
            k
        )));
    }
    let inv = linalg::invert(&fit.information)
        .map_err(|_| Error::DegenerateDesign("singular information matrix".into()))?;
    let phase2 = inv.dot(v).dot(&inv);
    let total = &inv + &phase2;
    let diag_sqrt = |m: &Array2<f64>| -> Vec<f64> {
        (0..k).map(|i| m[(i, i)].max(0.0).sqrt()).collect()
    };
    Ok(VarianceResult {
        se_total: diag_sqrt(&total),
        se1: diag_sqrt(&inv),
        se2: diag_sqrt(&phase2),
        total,
        phase1: inv,
        phase2,
    })
}
