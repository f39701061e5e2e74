use cchbal::cohort::{generate_cohort_with_rate, tune_censoring_rate, CovariateKind, SimCohortSpec};
use cchbal::cox::{fit_cox, SolverOptions, SurvData};
use cchbal::design::{auxiliary_delta_betas, run_design_with_aux, DesignKind, DesignMode, DesignSpec};
use cchbal::sim::stream_rng;

fn main() {
    let spec = SimCohortSpec {
        n_cohort: 1000,
        beta_true: vec![2.0_f64.ln(), 0.0],
        rho: 0.8,
        censor_target: 0.9,
        covariate_kind: CovariateKind::Continuous,
        aux_noise_sd: 0.5,
        seed: 7,
    };
    let rate = tune_censoring_rate(&spec).unwrap();
    println!("rate {}", rate);
    for rep in 0..500u64 {
        let mut rng = stream_rng(7, 0, rep);
        let cohort = generate_cohort_with_rate(&spec, rate, &mut rng).unwrap();
        let census = SurvData::new(
            cohort.times(),
            cohort.events(),
            cohort.z_matrix(),
            vec![1.0; cohort.len()],
        )
        .unwrap();
        if let Err(e) = fit_cox(&census, None, &SolverOptions::default()) {
            println!("rep {}: census fit error: {}", rep, e);
            continue;
        }
        let aux = match auxiliary_delta_betas(&cohort) {
            Ok(a) => a,
            Err(e) => {
                println!("rep {}: aux error: {}", rep, e);
                continue;
            }
        };
        for (d, kind) in [DesignKind::Srs, DesignKind::Bs, DesignKind::Cal, DesignKind::Bsc]
            .iter()
            .enumerate()
        {
            let design = DesignSpec::single_stratum(*kind, DesignMode::CaseCohort, &cohort, 100);
            let mut rng = stream_rng(7, 1 + d as u64, rep);
            if let Err(e) = run_design_with_aux(&cohort, &design, &aux, &mut rng) {
                println!("rep {}: design {:?} error: {}", rep, kind, e);
            }
        }
    }
    println!("scan done");
}
