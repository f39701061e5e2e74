//! Weighted Cox proportional-hazards fitting by partial likelihood.
//!
//! Ties are handled with the Breslow approximation throughout. Weights are
//! design weights `w_i = xi_i / pi_i`; a census fit uses unit weights. The
//! per-subject influence quantities (score residuals and delta-betas) use
//! the full score-residual form, which is nonzero for censored subjects and
//! satisfies `sum_i w_i U_i(beta_hat) = 0`.

use ndarray::{Array1, Array2};

use crate::linalg;
use crate::{Error, Result};

/// Survival data for one (possibly weighted) fit.
#[derive(Debug, Clone)]
pub struct SurvData {
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: Array2<f64>,
    weights: Vec<f64>,
    /// Subject indices sorted by observed time, descending.
    order: Vec<usize>,
}

impl SurvData {
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: Array2<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if events.len() != n || covariates.nrows() != n || weights.len() != n {
            return Err(Error::Argument(format!(
                "inconsistent lengths: {} times, {} events, {} covariate rows, {} weights",
                n,
                events.len(),
                covariates.nrows(),
                weights.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Numeric("times must be finite and >= 0".into()));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("covariates must be finite".into()));
        }
        // Calibrated weights may come out slightly negative; they stay in
        // the estimating equations as long as the risk sums remain positive
        // at event times (guarded during evaluation).
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("weights must be finite".into()));
        }
        if !events
            .iter()
            .zip(&weights)
            .any(|(&e, &w)| e && w > 0.0)
        {
            return Err(Error::Numeric(
                "no event with positive weight in the data".into(),
            ));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap());
        Ok(SurvData {
            times,
            events,
            covariates,
            weights,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    /// Same data with replaced weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        SurvData::new(
            self.times.clone(),
            self.events.clone(),
            self.covariates.clone(),
            weights,
        )
    }

    fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.covariates.row(i)
    }
}

/// Newton-Raphson options.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Convergence tolerance on the max-norm of the weighted score.
    pub score_tol: f64,
    /// Coefficients beyond this magnitude are treated as diverging.
    pub separation_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 50,
            score_tol: 1e-9,
            separation_bound: SEPARATION_BOUND,
        }
    }
}

/// Default bound on the max-norm of coefficients used to flag separation.
pub const SEPARATION_BOUND: f64 = 15.0;

/// Result of a (weighted) partial-likelihood fit.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta_hat: Array1<f64>,
    pub score_at_solution: Array1<f64>,
    /// Observed information (minus Hessian of the weighted log partial
    /// likelihood) at `beta_hat`.
    pub information: Array2<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separation_flag: bool,
    /// Whether every accepted Newton step strictly increased the log
    /// likelihood (true for a trajectory that was still climbing when the
    /// iteration budget ran out).
    pub monotone_loglik: bool,
}

/// Per-subject influence quantities at the fitted coefficients.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    /// `N x k` score residuals `U_i(beta_hat)`.
    pub score_residuals: Array2<f64>,
    /// `N x k` delta-betas `I^{-1}(beta_hat) U_i(beta_hat)`.
    pub delta_betas: Array2<f64>,
}

impl InfluenceSet {
    pub fn from_fit(data: &SurvData, fit: &CoxFit) -> Result<Self> {
        let residuals = score_residuals(data, fit)?;
        let delta = delta_betas(fit, &residuals)?;
        Ok(InfluenceSet {
            score_residuals: residuals,
            delta_betas: delta,
        })
    }
}

/// Risk-set statistics at one distinct time carrying at least one event.
struct EventTimeStats {
    time: f64,
    /// Total weight of events at this time.
    dw: f64,
    s0: f64,
    zbar: Array1<f64>,
}

struct Evaluation {
    loglik: f64,
    score: Array1<f64>,
    info: Array2<f64>,
    /// Distinct event times in ascending order.
    event_stats: Vec<EventTimeStats>,
}

/// One pass over the risk sets in descending time order, accumulating the
/// weighted log partial likelihood, score, and observed information.
fn evaluate(data: &SurvData, beta: &Array1<f64>) -> Result<Evaluation> {
    let k = data.dim();
    if beta.len() != k {
        return Err(Error::Argument(format!(
            "beta has {} components, expected {}",
            beta.len(),
            k
        )));
    }
    let n = data.len();
    let mut s0 = 0.0;
    let mut s1 = Array1::<f64>::zeros(k);
    let mut s2 = Array2::<f64>::zeros((k, k));
    let mut loglik = 0.0;
    let mut score = Array1::<f64>::zeros(k);
    let mut info = Array2::<f64>::zeros((k, k));
    let mut event_stats: Vec<EventTimeStats> = Vec::new();

    let mut pos = 0;
    while pos < n {
        let t = data.times[data.order[pos]];
        let mut end = pos;
        // Enter every subject tied at `t` into the risk set first (Breslow).
        while end < n && data.times[data.order[end]] == t {
            let idx = data.order[end];
            let w = data.weights[idx];
            if w != 0.0 {
                let eta = data.row(idx).dot(beta);
                let r = w * eta.exp();
                if !r.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite risk score for subject {}",
                        idx
                    )));
                }
                s0 += r;
                for a in 0..k {
                    let za = data.covariates[(idx, a)];
                    s1[a] += r * za;
                    for b in 0..k {
                        s2[(a, b)] += r * za * data.covariates[(idx, b)];
                    }
                }
            }
            end += 1;
        }

        let mut dw = 0.0;
        let mut any_event = false;
        for &idx in &data.order[pos..end] {
            if !data.events[idx] {
                continue;
            }
            any_event = true;
            let w = data.weights[idx];
            if w == 0.0 {
                continue;
            }
            if s0 <= 0.0 {
                return Err(Error::Numeric(format!(
                    "empty weighted risk set at time {}",
                    t
                )));
            }
            let eta = data.row(idx).dot(beta);
            loglik += w * (eta - s0.ln());
            for a in 0..k {
                let zbar_a = s1[a] / s0;
                score[a] += w * (data.covariates[(idx, a)] - zbar_a);
                for b in 0..k {
                    info[(a, b)] += w * (s2[(a, b)] / s0 - zbar_a * s1[b] / s0);
                }
            }
            dw += w;
        }
        if any_event {
            let zbar = if s0 > 0.0 {
                s1.mapv(|v| v / s0)
            } else {
                Array1::zeros(k)
            };
            event_stats.push(EventTimeStats {
                time: t,
                dw,
                s0,
                zbar,
            });
        }
        pos = end;
    }
    event_stats.reverse();
    Ok(Evaluation {
        loglik,
        score,
        info,
        event_stats,
    })
}

/// Breslow-tied weighted log partial likelihood at `beta`.
pub fn log_partial_likelihood(data: &SurvData, beta: &Array1<f64>) -> Result<f64> {
    Ok(evaluate(data, beta)?.loglik)
}

/// Weighted score and observed information at `beta`.
pub fn score_and_information(
    data: &SurvData,
    beta: &Array1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let eval = evaluate(data, beta)?;
    Ok((eval.score, eval.info))
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Newton-Raphson with step-halving from `init` (zeros when absent).
///
/// A converged fit satisfies `||U_w(beta_hat)||_inf < opts.score_tol`. The
/// separation flag is set for fits that were still climbing at the
/// iteration cap or whose coefficients crossed `opts.separation_bound`.
pub fn fit_cox(data: &SurvData, init: Option<&Array1<f64>>, opts: &SolverOptions) -> Result<CoxFit> {
    let k = data.dim();
    let mut beta = match init {
        Some(b) => {
            if b.len() != k {
                return Err(Error::Argument(format!(
                    "init has {} components, expected {}",
                    b.len(),
                    k
                )));
            }
            b.clone()
        }
        None => Array1::zeros(k),
    };

    let mut eval = evaluate(data, &beta)?;
    let mut converged = false;
    let mut stalled = false;
    let mut bound_hit = false;
    let mut strictly_improving = true;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        if max_abs(&eval.score) < opts.score_tol {
            converged = true;
            break;
        }
        let delta = linalg::solve(&eval.info, &eval.score).map_err(|_| {
            Error::DegenerateDesign(format!(
                "singular information matrix at iteration {}",
                iterations
            ))
        })?;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &delta.mapv(|d| step * d);
            match evaluate(data, &cand) {
                Ok(cand_eval) if cand_eval.loglik.is_finite() => {
                    let improved = cand_eval.loglik > eval.loglik;
                    // Near the optimum the likelihood gain falls below float
                    // resolution before the score meets the tolerance; a
                    // step that shrinks the score without losing likelihood
                    // is still progress toward the root.
                    let slack = 1e-10 * (1.0 + eval.loglik.abs());
                    let root_progress = cand_eval.loglik >= eval.loglik - slack
                        && max_abs(&cand_eval.score) < max_abs(&eval.score);
                    if improved || root_progress {
                        accepted = Some((cand, cand_eval, improved));
                        break;
                    }
                    step *= 0.5;
                }
                Ok(_) | Err(Error::Numeric(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((cand, cand_eval, improved)) => {
                beta = cand;
                eval = cand_eval;
                iterations += 1;
                strictly_improving &= improved;
            }
            None => {
                stalled = true;
                break;
            }
        }
        if max_abs(&beta) > opts.separation_bound {
            bound_hit = true;
            break;
        }
    }
    if !converged && !stalled && !bound_hit {
        // Iteration cap: re-check convergence at the final point.
        converged = max_abs(&eval.score) < opts.score_tol;
    }

    let monotone_loglik = !stalled && strictly_improving;
    let separation_flag = bound_hit || (!converged && monotone_loglik);
    Ok(CoxFit {
        beta_hat: beta,
        score_at_solution: eval.score,
        information: eval.info,
        loglik: eval.loglik,
        iterations,
        converged,
        separation_flag,
        monotone_loglik,
    })
}

/// Reads the separation diagnosis off a fit: a likelihood that was still
/// increasing without convergence, or coefficients beyond the bound.
pub fn detect_separation(fit: &CoxFit) -> bool {
    max_abs(&fit.beta_hat) > SEPARATION_BOUND || (!fit.converged && fit.monotone_loglik)
}

/// Per-subject score residuals at the fitted coefficients.
///
/// `U_i = Delta_i (Z_i - Zbar(X_i)) - exp(eta_i) * sum_{t_j <= X_i}
/// (dW_j / S0_j) (Z_i - Zbar(t_j))`, summing over distinct event times.
/// The weighted column sums vanish at `beta_hat`.
pub fn score_residuals(data: &SurvData, fit: &CoxFit) -> Result<Array2<f64>> {
    if !fit.converged {
        return Err(Error::State(
            "score residuals require a converged fit".into(),
        ));
    }
    let eval = evaluate(data, &fit.beta_hat)?;
    let k = data.dim();
    let n = data.len();
    let stats = &eval.event_stats;

    // Ascending prefix sums of the baseline hazard increments and their
    // zbar-weighted counterparts.
    let mut h0 = Vec::with_capacity(stats.len());
    let mut h1: Vec<Array1<f64>> = Vec::with_capacity(stats.len());
    let mut acc0 = 0.0;
    let mut acc1 = Array1::<f64>::zeros(k);
    for st in stats {
        if st.dw > 0.0 {
            let inc = st.dw / st.s0;
            acc0 += inc;
            acc1 = &acc1 + &st.zbar.mapv(|v| inc * v);
        }
        h0.push(acc0);
        h1.push(acc1.clone());
    }

    let times: Vec<f64> = stats.iter().map(|s| s.time).collect();
    let mut residuals = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let xi = data.times[i];
        // Index of the last event time <= X_i.
        let upto = times.partition_point(|&t| t <= xi);
        let eta = data.row(i).dot(&fit.beta_hat);
        let risk = eta.exp();
        for a in 0..k {
            let mut u = 0.0;
            if data.events[i] {
                // X_i is an event time; locate its risk-set average.
                let j = times.partition_point(|&t| t < xi);
                debug_assert!(j < times.len() && times[j] == xi);
                u += data.covariates[(i, a)] - stats[j].zbar[a];
            }
            if upto > 0 {
                let idx = upto - 1;
                u -= risk * (h0[idx] * data.covariates[(i, a)] - h1[idx][a]);
            }
            residuals[(i, a)] = u;
        }
    }
    Ok(residuals)
}

/// Delta-beta influence rows `I^{-1}(beta_hat) U_i(beta_hat)`.
pub fn delta_betas(fit: &CoxFit, residuals: &Array2<f64>) -> Result<Array2<f64>> {
    let inv = linalg::invert(&fit.information)
        .map_err(|_| Error::DegenerateDesign("singular information matrix".into()))?;
    Ok(residuals.dot(&inv))
}
