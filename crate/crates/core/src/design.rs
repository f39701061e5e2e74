//! End-to-end execution of one sampling design on a cohort: auxiliary Cox
//! fit, delta-beta balancing variables, per-stratum sampling, weight
//! assembly, optional calibration, and the final weighted fit with its
//! sandwich variance.

use ndarray::Array2;
use rand::Rng;

use crate::calibrate::{calibrate_weights, CalibrationSpec};
use crate::cohort::Cohort;
use crate::cox::{fit_cox, score_residuals, InfluenceSet, SolverOptions, SurvData};
use crate::cube::{cube_sample, srs_sample, BalancingProblem, SampleSelection};
use crate::variance::{phase2_component, sandwich, VarianceResult};
use crate::{Error, Result};

/// Sampling/estimation strategy for the phase-2 selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    /// Simple random sampling within each sampled stratum.
    Srs,
    /// Balanced sampling via the cube method.
    Bs,
    /// Simple random sampling with post-hoc weight calibration.
    Cal,
    /// Balanced sampling followed by re-calibration.
    Bsc,
}

impl DesignKind {
    pub fn label(&self) -> &'static str {
        match self {
            DesignKind::Srs => "SRS",
            DesignKind::Bs => "BS",
            DesignKind::Cal => "CAL",
            DesignKind::Bsc => "BSc",
        }
    }

    fn balanced(&self) -> bool {
        matches!(self, DesignKind::Bs | DesignKind::Bsc)
    }

    fn calibrated(&self) -> bool {
        matches!(self, DesignKind::Cal | DesignKind::Bsc)
    }
}

/// Whether cases are force-included (case-cohort) or sampled like everyone
/// else (plain subcohort sampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMode {
    SubcohortOnly,
    CaseCohort,
}

impl DesignMode {
    pub fn label(&self) -> &'static str {
        match self {
            DesignMode::SubcohortOnly => "SC",
            DesignMode::CaseCohort => "CCS",
        }
    }
}

/// One stratum of the phase-2 design.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSpec {
    pub label: i64,
    /// Expected number of eligible units carrying this label (controls in
    /// case-cohort mode, everyone in subcohort mode).
    pub n_pop: usize,
    pub n_sample: usize,
    pub certainty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub mode: DesignMode,
    pub strata: Vec<StratumSpec>,
    pub seed: u64,
}

impl DesignSpec {
    /// Single-stratum design over label 0, sized for the given cohort.
    pub fn single_stratum(
        kind: DesignKind,
        mode: DesignMode,
        cohort: &Cohort,
        n_sample: usize,
    ) -> Self {
        let n_pop = match mode {
            DesignMode::SubcohortOnly => cohort.len(),
            DesignMode::CaseCohort => cohort.records().iter().filter(|r| !r.event).count(),
        };
        DesignSpec {
            kind,
            mode,
            strata: vec![StratumSpec {
                label: 0,
                n_pop,
                n_sample,
                certainty: false,
            }],
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.mode.label(), self.kind.label())
    }
}

/// Outcome of one design run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub beta_hat: Vec<f64>,
    pub variance: VarianceResult,
    pub separation_flag: bool,
    pub converged: bool,
    pub design: DesignSpec,
    pub n_phase2: usize,
    /// Calibration produced a non-positive weight somewhere.
    pub calibration_nonpositive: bool,
}

/// Fits the auxiliary Cox model on the cohort-wide covariates `z_star`
/// (unit weights) and returns the `N x m` delta-beta matrix used as
/// balancing and calibration variables.
pub fn auxiliary_delta_betas(cohort: &Cohort) -> Result<Array2<f64>> {
    if cohort.is_empty() {
        return Err(Error::Design("empty cohort".into()));
    }
    let data = SurvData::new(
        cohort.times(),
        cohort.events(),
        cohort.z_star_matrix(),
        vec![1.0; cohort.len()],
    )?;
    let fit = fit_cox(&data, None, &SolverOptions::default())?;
    if !fit.converged || fit.separation_flag {
        return Err(Error::Design(
            "auxiliary Cox fit did not converge (separation or ill-conditioning)".into(),
        ));
    }
    let influence = InfluenceSet::from_fit(&data, &fit)?;
    Ok(influence.delta_betas)
}

/// Units eligible for sampling within a stratum under the given mode.
fn eligible_members(cohort: &Cohort, mode: DesignMode, label: i64) -> Vec<usize> {
    cohort
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.stratum == label
                && match mode {
                    DesignMode::SubcohortOnly => true,
                    DesignMode::CaseCohort => !r.event,
                }
        })
        .map(|(i, _)| i)
        .collect()
}

fn validate_design(cohort: &Cohort, design: &DesignSpec) -> Result<Vec<Vec<usize>>> {
    let mut seen = std::collections::HashSet::new();
    let mut members = Vec::with_capacity(design.strata.len());
    for st in &design.strata {
        if !seen.insert(st.label) {
            return Err(Error::Design(format!("duplicate stratum label {}", st.label)));
        }
        let m = eligible_members(cohort, design.mode, st.label);
        if m.len() != st.n_pop {
            return Err(Error::Design(format!(
                "stratum {} declares {} units but the cohort has {}",
                st.label,
                st.n_pop,
                m.len()
            )));
        }
        if st.certainty {
            if st.n_sample != st.n_pop {
                return Err(Error::Design(format!(
                    "certainty stratum {} must take all {} units",
                    st.label, st.n_pop
                )));
            }
        } else if st.n_sample == 0 || st.n_sample > st.n_pop {
            return Err(Error::Design(format!(
                "stratum {}: cannot sample {} of {}",
                st.label, st.n_sample, st.n_pop
            )));
        }
        members.push(m);
    }
    // Every eligible unit must be covered by exactly one stratum.
    let covered: usize = members.iter().map(|m| m.len()).sum();
    let eligible_total = cohort
        .records()
        .iter()
        .filter(|r| match design.mode {
            DesignMode::SubcohortOnly => true,
            DesignMode::CaseCohort => !r.event,
        })
        .count();
    if covered != eligible_total {
        return Err(Error::Design(format!(
            "design covers {} of {} eligible units",
            covered, eligible_total
        )));
    }
    Ok(members)
}

/// Runs a design end to end, computing the auxiliary delta-betas on the fly.
pub fn run_design(
    cohort: &Cohort,
    design: &DesignSpec,
    rng: &mut impl Rng,
) -> Result<(SampleSelection, Vec<f64>, FitReport)> {
    let aux = auxiliary_delta_betas(cohort)?;
    run_design_with_aux(cohort, design, &aux, rng)
}

/// Runs a design end to end with precomputed auxiliary delta-betas (they do
/// not depend on the draw, so replication harnesses share them).
pub fn run_design_with_aux(
    cohort: &Cohort,
    design: &DesignSpec,
    aux: &Array2<f64>,
    rng: &mut impl Rng,
) -> Result<(SampleSelection, Vec<f64>, FitReport)> {
    let n = cohort.len();
    if aux.nrows() != n {
        return Err(Error::Argument(format!(
            "{} auxiliary rows for {} records",
            aux.nrows(),
            n
        )));
    }
    let members = validate_design(cohort, design)?;
    let n_aux = aux.ncols();

    let mut pi = vec![0.0_f64; n];
    let mut indicators = vec![false; n];
    if design.mode == DesignMode::CaseCohort {
        for (i, rec) in cohort.records().iter().enumerate() {
            if rec.event {
                pi[i] = 1.0;
                indicators[i] = true;
            }
        }
    }

    for (st, m) in design.strata.iter().zip(&members) {
        if st.certainty {
            for &i in m {
                pi[i] = 1.0;
                indicators[i] = true;
            }
            continue;
        }
        let prob = st.n_sample as f64 / st.n_pop as f64;
        for &i in m {
            pi[i] = prob;
        }
        if design.kind.balanced() {
            let mut x = Array2::zeros((m.len(), 1 + n_aux));
            for (row, &i) in m.iter().enumerate() {
                x[(row, 0)] = prob;
                for j in 0..n_aux {
                    x[(row, j + 1)] = aux[(i, j)];
                }
            }
            let problem = BalancingProblem::new(vec![prob; m.len()], x)?;
            let sub = cube_sample(&problem, rng)?;
            for (row, &i) in m.iter().enumerate() {
                indicators[i] = sub.indicators[row];
            }
        } else {
            let sub = srs_sample(m.len(), st.n_sample, rng)?;
            for (row, &i) in m.iter().enumerate() {
                indicators[i] = sub.indicators[row];
            }
        }
    }

    let mut weights: Vec<f64> = (0..n)
        .map(|i| if indicators[i] { 1.0 / pi[i] } else { 0.0 })
        .collect();

    // Calibrate the adjustable units (sampled strata) to the stratum totals
    // of an intercept plus the auxiliary delta-betas. Certainty units keep
    // weight 1.
    let mut calibration_nonpositive = false;
    if design.kind.calibrated() {
        for (st, m) in design.strata.iter().zip(&members) {
            if st.certainty {
                continue;
            }
            let sampled: Vec<usize> = m.iter().cloned().filter(|&i| indicators[i]).collect();
            let q = 1 + n_aux;
            let mut x_cal = Array2::zeros((sampled.len(), q));
            for (row, &i) in sampled.iter().enumerate() {
                x_cal[(row, 0)] = 1.0;
                for j in 0..n_aux {
                    x_cal[(row, j + 1)] = aux[(i, j)];
                }
            }
            let mut targets = vec![0.0; q];
            targets[0] = st.n_pop as f64;
            for &i in m {
                for j in 0..n_aux {
                    targets[j + 1] += aux[(i, j)];
                }
            }
            let spec = CalibrationSpec {
                design_weights: sampled.iter().map(|&i| weights[i]).collect(),
                x_sample: x_cal,
                targets,
            };
            let result = calibrate_weights(&spec)?;
            calibration_nonpositive |= result.has_nonpositive;
            for (row, &i) in sampled.iter().enumerate() {
                weights[i] = result.weights[row];
            }
        }
    }

    let selection = SampleSelection {
        indicators: indicators.clone(),
        pi: pi.clone(),
        weights: (0..n)
            .map(|i| if indicators[i] { 1.0 / pi[i] } else { 0.0 })
            .collect(),
    };

    // Final weighted fit on the phase-2 sample.
    let sel_idx: Vec<usize> = (0..n).filter(|&i| indicators[i]).collect();
    let n_phase2 = sel_idx.len();
    let k = cohort.covariate_dim();

    // Degenerate draws (no usable events, monotone likelihoods, collinear
    // samples, risk sums broken by extreme calibrated weights) come back as
    // separation-flagged reports so replication harnesses can exclude them
    // instead of aborting; genuine caller errors still propagate.
    let inestimable = |n_phase2: usize| FitReport {
        beta_hat: vec![0.0; k],
        variance: VarianceResult::zeros(k),
        separation_flag: true,
        converged: false,
        design: design.clone(),
        n_phase2,
        calibration_nonpositive,
    };
    let any_event = sel_idx.iter().any(|&i| cohort.records()[i].event);
    if !any_event {
        return Ok((selection, weights, inestimable(n_phase2)));
    }

    let z = cohort.z_matrix();
    let mut sub_z = Array2::zeros((n_phase2, k));
    for (row, &i) in sel_idx.iter().enumerate() {
        for j in 0..k {
            sub_z[(row, j)] = z[(i, j)];
        }
    }
    let fit_result = SurvData::new(
        sel_idx.iter().map(|&i| cohort.records()[i].time).collect(),
        sel_idx.iter().map(|&i| cohort.records()[i].event).collect(),
        sub_z,
        sel_idx.iter().map(|&i| weights[i]).collect(),
    )
    .and_then(|data| {
        let fit = fit_cox(&data, None, &SolverOptions::default())?;
        if !fit.converged || fit.separation_flag {
            return Ok((fit, None));
        }
        let residuals = score_residuals(&data, &fit)?;
        Ok((fit, Some(residuals)))
    })
    .and_then(|(fit, residuals)| match residuals {
        None => Ok((fit, VarianceResult::zeros(k), true)),
        Some(residuals) => {
            let mut sub_aux = Array2::zeros((n_phase2, n_aux));
            for (row, &i) in sel_idx.iter().enumerate() {
                for j in 0..n_aux {
                    sub_aux[(row, j)] = aux[(i, j)];
                }
            }
            let pis_sel: Vec<f64> = sel_idx.iter().map(|&i| pi[i]).collect();
            let v = phase2_component(&pis_sel, &sub_aux, &residuals, 1 + n_aux)?;
            let variance = sandwich(&fit, &v)?;
            Ok((fit, variance, false))
        }
    });

    match fit_result {
        Ok((fit, variance, separation_flag)) => Ok((
            selection,
            weights,
            FitReport {
                beta_hat: fit.beta_hat.to_vec(),
                variance,
                separation_flag,
                converged: fit.converged,
                design: design.clone(),
                n_phase2,
                calibration_nonpositive,
            },
        )),
        Err(Error::Numeric(_)) | Err(Error::DegenerateDesign(_)) | Err(Error::RankDeficient(_)) => {
            Ok((selection, weights, inestimable(n_phase2)))
        }
        Err(e) => Err(e),
    }
}

/// Column indices (into `z_star`) and cutoffs for the 16-stratum
/// stratification: event status x stage group x institutional histology x
/// age group.
#[derive(Debug, Clone)]
pub struct NwtsStrataRules {
    pub stage_col: usize,
    pub histology_col: usize,
    pub age_col: usize,
    /// Stages at or above this cutoff form the late-stage group.
    pub stage_cutoff: f64,
    /// Ages below this cutoff form the infant group.
    pub age_cutoff: f64,
}

impl Default for NwtsStrataRules {
    fn default() -> Self {
        NwtsStrataRules {
            stage_col: 0,
            histology_col: 1,
            age_col: 2,
            stage_cutoff: 3.0,
            age_cutoff: 1.0,
        }
    }
}

/// Builds the 16 = 2 x 2 x 2 x 2 stratum labels from failure status, stage
/// group, institutional histology and age group.
pub fn build_nwts_strata(cohort: &Cohort, rules: &NwtsStrataRules) -> Result<Vec<i64>> {
    let needed = rules.stage_col.max(rules.histology_col).max(rules.age_col);
    if needed >= cohort.aux_dim() {
        return Err(Error::Schema(format!(
            "stratification needs auxiliary column {} but the cohort has {}",
            needed,
            cohort.aux_dim()
        )));
    }
    Ok(cohort
        .records()
        .iter()
        .map(|r| {
            let event = i64::from(r.event);
            let late_stage = i64::from(r.z_star[rules.stage_col] >= rules.stage_cutoff);
            let unfavorable = i64::from(r.z_star[rules.histology_col] > 0.5);
            let infant = i64::from(r.z_star[rules.age_col] < rules.age_cutoff);
            8 * event + 4 * late_stage + 2 * unfavorable + infant
        })
        .collect())
}
