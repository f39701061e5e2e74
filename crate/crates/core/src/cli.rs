//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
//! convergence error. Seeds are mandatory for `simulate` and `sample` so
//! every run is reproducible. A flat `key = value` config file can supply
//! any long flag; explicit flags win.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::cohort::{CovariateKind, SimCohortSpec};
use crate::cox::{fit_cox, score_residuals, SolverOptions, SurvData};
use crate::design::{
    auxiliary_delta_betas, run_design, DesignKind, DesignMode, DesignSpec, StratumSpec,
};
use crate::io::{
    emit_summary_table, parse_cohort_csv, parse_config_file, parse_selection_csv,
    write_raw_estimates, write_selection_csv, OutputFormat,
};
use crate::sim::{run_experiment, DesignRequest, ExperimentConfig, SetupKind};
use crate::variance::{phase2_component, sandwich, sandwich_census, VarianceResult};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "cchbal",
    version,
    about = "Balanced (cube-method) subcohort sampling for case-cohort Cox models"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo sampling experiments on synthetic cohorts
    Simulate(SimulateArgs),
    /// Draw one phase-2 sample from a cohort CSV
    Sample(SampleArgs),
    /// Fit the Cox model: census, or weighted via a selection file
    Fit(FitArgs),
    /// Recalibrate selection weights to cohort benchmarks
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Flat key=value file supplying defaults for any flag below
    #[arg(long)]
    config: Option<PathBuf>,
    /// fixed (one cohort) or random (fresh cohort per replication)
    #[arg(long)]
    setup: Option<String>,
    #[arg(long)]
    cohort_size: Option<usize>,
    #[arg(long)]
    subcohort_size: Option<usize>,
    /// Correlation between the two covariates
    #[arg(long)]
    rho: Option<f64>,
    /// Target censoring proportion in (0,1)
    #[arg(long)]
    censoring: Option<f64>,
    /// continuous or binary
    #[arg(long)]
    covariates: Option<String>,
    /// Comma-separated list among srs,bs,cal,bsc
    #[arg(long)]
    designs: Option<String>,
    /// sc (subcohort only) or ccs (case-cohort)
    #[arg(long)]
    mode: Option<String>,
    /// True log-hazard ratios, comma separated (default log 2, 0)
    #[arg(long)]
    beta: Option<String>,
    /// Noise scale of the cohort-wide auxiliaries relative to the
    /// covariates
    #[arg(long)]
    aux_noise: Option<f64>,
    /// Replications per design (default 500; the full-scale runs use 2000)
    #[arg(long)]
    reps: Option<usize>,
    /// Mandatory stream seed
    #[arg(long)]
    seed: Option<u64>,
    /// tsv or csv
    #[arg(long)]
    format: Option<String>,
    /// Write the summary table here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Dump per-replication estimates (CSV) for external plotting
    #[arg(long)]
    dump_estimates: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort CSV path
    #[arg(long)]
    input: Option<PathBuf>,
    /// srs, bs, cal or bsc
    #[arg(long)]
    design: Option<String>,
    /// sc or ccs
    #[arg(long)]
    mode: Option<String>,
    /// Sample size when the eligible units form a single stratum
    #[arg(long)]
    subcohort_size: Option<usize>,
    /// Per-stratum sizes `label:n,label:n`; unlisted strata are taken with
    /// certainty
    #[arg(long)]
    stratum_sizes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Selection CSV destination (stdout when absent)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Selection CSV from `sample`; absent means a census fit
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Recalibrated selection CSV destination (stdout when absent)
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Config-file fallback for optional flags.
struct Merged {
    file: HashMap<String, String>,
}

impl Merged {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        let file = match path {
            Some(p) => parse_config_file(p)?,
            None => HashMap::new(),
        };
        Ok(Merged { file })
    }

    fn get<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value '{}' for {}", raw, key))),
            None => Ok(None),
        }
    }

    fn require<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<T> {
        self.get(cli, key)?
            .ok_or_else(|| Error::Config(format!("missing required option --{}", key)))
    }
}

fn parse_setup(s: &str) -> Result<SetupKind> {
    match s {
        "fixed" => Ok(SetupKind::Fixed),
        "random" => Ok(SetupKind::Random),
        other => Err(Error::Config(format!("unknown setup '{}'", other))),
    }
}

fn parse_kind(s: &str) -> Result<DesignKind> {
    match s {
        "srs" => Ok(DesignKind::Srs),
        "bs" => Ok(DesignKind::Bs),
        "cal" => Ok(DesignKind::Cal),
        "bsc" => Ok(DesignKind::Bsc),
        other => Err(Error::Config(format!("unknown design '{}'", other))),
    }
}

fn parse_mode(s: &str) -> Result<DesignMode> {
    match s {
        "sc" | "subcohort" => Ok(DesignMode::SubcohortOnly),
        "ccs" | "case-cohort" => Ok(DesignMode::CaseCohort),
        other => Err(Error::Config(format!("unknown mode '{}'", other))),
    }
}

fn parse_covariates(s: &str) -> Result<CovariateKind> {
    match s {
        "continuous" => Ok(CovariateKind::Continuous),
        "binary" => Ok(CovariateKind::Binary),
        other => Err(Error::Config(format!("unknown covariate kind '{}'", other))),
    }
}

fn parse_beta(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid beta component '{}'", v)))
        })
        .collect()
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    use std::io::Write;
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let merged = Merged::load(args.config.as_ref())?;
    let setup = parse_setup(&merged.require(args.setup, "setup")?)?;
    let n_cohort = merged.require(args.cohort_size, "cohort-size")?;
    let subcohort_size = merged.require(args.subcohort_size, "subcohort-size")?;
    let rho = merged.require(args.rho, "rho")?;
    let censor_target = merged.require(args.censoring, "censoring")?;
    let covariate_kind = parse_covariates(&merged.require(args.covariates, "covariates")?)?;
    let designs_raw: String = merged.require(args.designs, "designs")?;
    let mode = parse_mode(
        &merged
            .get(args.mode, "mode")?
            .unwrap_or_else(|| "sc".to_string()),
    )?;
    let beta_true = match merged.get(args.beta, "beta")? {
        Some(raw) => parse_beta(&raw)?,
        None => vec![2.0_f64.ln(), 0.0],
    };
    let aux_noise_sd = merged
        .get(args.aux_noise, "aux-noise")?
        .unwrap_or(crate::cohort::DEFAULT_AUX_NOISE_SD);
    let replications = merged.get(args.reps, "reps")?.unwrap_or(500);
    let seed = merged.require(args.seed, "seed")?;
    let format: OutputFormat = merged
        .get(args.format, "format")?
        .unwrap_or_else(|| "tsv".to_string())
        .parse()?;
    let dump = merged.get(args.dump_estimates, "dump-estimates")?;

    let designs = designs_raw
        .split(',')
        .map(|d| {
            Ok(DesignRequest {
                kind: parse_kind(d.trim())?,
                mode,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let config = ExperimentConfig {
        setup,
        cohort: SimCohortSpec {
            n_cohort,
            beta_true,
            rho,
            censor_target,
            covariate_kind,
            aux_noise_sd,
            seed,
        },
        subcohort_size,
        designs,
        replications,
        seed,
    };
    let out = run_experiment(&config)?;
    let table = emit_summary_table(&out.summaries, format);
    write_output(args.output.as_deref(), &table)?;
    if let Some(path) = dump {
        let file = std::fs::File::create(&path)?;
        write_raw_estimates(&out.raw, config.cohort.beta_true.len(), file)?;
    }
    Ok(())
}

fn parse_stratum_sizes(raw: &str) -> Result<Vec<(i64, usize)>> {
    raw.split(',')
        .map(|pair| {
            let (label, size) = pair.split_once(':').ok_or_else(|| {
                Error::Config(format!("stratum size '{}' is not label:n", pair))
            })?;
            Ok((
                label.trim().parse::<i64>().map_err(|_| {
                    Error::Config(format!("invalid stratum label '{}'", label))
                })?,
                size.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("invalid stratum size '{}'", size))
                })?,
            ))
        })
        .collect()
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let merged = Merged::load(args.config.as_ref())?;
    let input: PathBuf = merged.require(args.input, "input")?;
    let kind = parse_kind(&merged.require(args.design, "design")?)?;
    let mode = parse_mode(
        &merged
            .get(args.mode, "mode")?
            .unwrap_or_else(|| "sc".to_string()),
    )?;
    let seed: u64 = merged.require(args.seed, "seed")?;
    let stratum_sizes = merged.get(args.stratum_sizes, "stratum-sizes")?;
    let subcohort_size = merged.get(args.subcohort_size, "subcohort-size")?;

    let cohort = parse_cohort_csv(&input)?;
    if cohort.is_empty() {
        return Err(Error::Design("cannot sample from an empty cohort".into()));
    }

    // Eligible label -> population count under the mode.
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for rec in cohort.records() {
        if mode == DesignMode::CaseCohort && rec.event {
            continue;
        }
        *counts.entry(rec.stratum).or_insert(0) += 1;
    }

    let strata = match stratum_sizes {
        Some(raw) => {
            let sizes = parse_stratum_sizes(&raw)?;
            let listed: HashMap<i64, usize> = sizes.iter().cloned().collect();
            for label in listed.keys() {
                if !counts.contains_key(label) {
                    return Err(Error::Design(format!(
                        "stratum {} has no eligible units",
                        label
                    )));
                }
            }
            let mut labels: Vec<i64> = counts.keys().cloned().collect();
            labels.sort_unstable();
            labels
                .into_iter()
                .map(|label| {
                    let n_pop = counts[&label];
                    match listed.get(&label) {
                        Some(&n_sample) => StratumSpec {
                            label,
                            n_pop,
                            n_sample,
                            certainty: false,
                        },
                        None => StratumSpec {
                            label,
                            n_pop,
                            n_sample: n_pop,
                            certainty: true,
                        },
                    }
                })
                .collect()
        }
        None => {
            let n_sample = subcohort_size.ok_or_else(|| {
                Error::Config("either --subcohort-size or --stratum-sizes is required".into())
            })?;
            if counts.len() != 1 {
                return Err(Error::Design(format!(
                    "{} eligible strata; use --stratum-sizes to size them",
                    counts.len()
                )));
            }
            let (&label, &n_pop) = counts.iter().next().unwrap();
            vec![StratumSpec {
                label,
                n_pop,
                n_sample,
                certainty: false,
            }]
        }
    };

    let design = DesignSpec {
        kind,
        mode,
        strata,
        seed,
    };
    let mut rng = crate::sim::stream_rng(seed, 0, 0);
    let (sel, weights, _report) = run_design(&cohort, &design, &mut rng)?;
    let mut buf = Vec::new();
    write_selection_csv(&sel, &weights, &mut buf)?;
    write_output(
        args.output.as_deref(),
        std::str::from_utf8(&buf).expect("selection csv is utf-8"),
    )?;
    Ok(())
}

fn fit_table(
    names: &[String],
    beta: &[f64],
    variance: &VarianceResult,
    format: OutputFormat,
) -> String {
    let d = match format {
        OutputFormat::Tsv => '\t',
        OutputFormat::Csv => ',',
    };
    let mut out = format!("Coef{d}Estimate{d}SE{d}SE1{d}SE2\n");
    for (j, name) in names.iter().enumerate() {
        out.push_str(&format!(
            "{}{d}{:.6}{d}{:.6}{d}{:.6}{d}{:.6}\n",
            name, beta[j], variance.se_total[j], variance.se1[j], variance.se2[j]
        ));
    }
    out
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let merged = Merged::load(args.config.as_ref())?;
    let input: PathBuf = merged.require(args.input, "input")?;
    let selection: Option<PathBuf> = merged.get(args.selection, "selection")?;
    let cohort = parse_cohort_csv(&input)?;
    let format: OutputFormat = merged
        .get(args.format, "format")?
        .unwrap_or_else(|| "tsv".to_string())
        .parse()?;
    let names: Vec<String> = (0..cohort.covariate_dim())
        .map(|j| format!("z{}", j + 1))
        .collect();

    let table = match selection {
        None => {
            let data = SurvData::new(
                cohort.times(),
                cohort.events(),
                cohort.z_matrix(),
                vec![1.0; cohort.len()],
            )?;
            let fit = fit_cox(&data, None, &SolverOptions::default())?;
            if fit.separation_flag || !fit.converged {
                return Err(Error::Numeric(
                    "perfect separation: the partial likelihood has no interior maximum".into(),
                ));
            }
            let variance = sandwich_census(&fit)?;
            fit_table(&names, fit.beta_hat.as_slice().unwrap(), &variance, format)
        }
        Some(path) => {
            let (sel, weights) = parse_selection_csv(&path)?;
            if sel.indicators.len() != cohort.len() {
                return Err(Error::Schema(format!(
                    "selection covers {} units but the cohort has {}",
                    sel.indicators.len(),
                    cohort.len()
                )));
            }
            let idx: Vec<usize> = (0..cohort.len()).filter(|&i| sel.indicators[i]).collect();
            if idx.is_empty() {
                return Err(Error::Design("selection is empty".into()));
            }
            let k = cohort.covariate_dim();
            let z = cohort.z_matrix();
            let mut sub_z = Array2::zeros((idx.len(), k));
            for (row, &i) in idx.iter().enumerate() {
                for j in 0..k {
                    sub_z[(row, j)] = z[(i, j)];
                }
            }
            let data = SurvData::new(
                idx.iter().map(|&i| cohort.records()[i].time).collect(),
                idx.iter().map(|&i| cohort.records()[i].event).collect(),
                sub_z,
                idx.iter().map(|&i| weights[i]).collect(),
            )?;
            let fit = fit_cox(&data, None, &SolverOptions::default())?;
            if fit.separation_flag || !fit.converged {
                return Err(Error::Numeric(
                    "perfect separation: the weighted partial likelihood has no interior maximum"
                        .into(),
                ));
            }
            let aux = auxiliary_delta_betas(&cohort)?;
            let residuals = score_residuals(&data, &fit)?;
            let n_aux = aux.ncols();
            let mut sub_aux = Array2::zeros((idx.len(), n_aux));
            for (row, &i) in idx.iter().enumerate() {
                for j in 0..n_aux {
                    sub_aux[(row, j)] = aux[(i, j)];
                }
            }
            let pis: Vec<f64> = idx.iter().map(|&i| sel.pi[i]).collect();
            let v = phase2_component(&pis, &sub_aux, &residuals, 1 + n_aux)?;
            let variance = sandwich(&fit, &v)?;
            fit_table(&names, fit.beta_hat.as_slice().unwrap(), &variance, format)
        }
    };
    write_output(args.output.as_deref(), &table)?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let merged = Merged::load(args.config.as_ref())?;
    let input: PathBuf = merged.require(args.input, "input")?;
    let selection: PathBuf = merged.require(args.selection, "selection")?;
    let cohort = parse_cohort_csv(&input)?;
    let (sel, weights) = parse_selection_csv(&selection)?;
    if sel.indicators.len() != cohort.len() {
        return Err(Error::Schema(format!(
            "selection covers {} units but the cohort has {}",
            sel.indicators.len(),
            cohort.len()
        )));
    }
    let aux = auxiliary_delta_betas(&cohort)?;
    let n_aux = aux.ncols();
    let mut new_weights = weights.clone();

    // Adjustable units (selected, non-certainty) grouped by stratum; the
    // benchmark population of each stratum is its sampled frame, i.e. the
    // units with pi < 1.
    let mut labels: Vec<i64> = cohort
        .records()
        .iter()
        .map(|r| r.stratum)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    labels.sort_unstable();
    let mut any_nonpositive = false;
    for label in labels {
        let frame: Vec<usize> = (0..cohort.len())
            .filter(|&i| cohort.records()[i].stratum == label && sel.pi[i] < 1.0)
            .collect();
        let adjustable: Vec<usize> = frame
            .iter()
            .cloned()
            .filter(|&i| sel.indicators[i])
            .collect();
        if adjustable.is_empty() {
            continue;
        }
        let q = 1 + n_aux;
        let mut x_cal = Array2::zeros((adjustable.len(), q));
        for (row, &i) in adjustable.iter().enumerate() {
            x_cal[(row, 0)] = 1.0;
            for j in 0..n_aux {
                x_cal[(row, j + 1)] = aux[(i, j)];
            }
        }
        let mut targets = vec![0.0; q];
        targets[0] = frame.len() as f64;
        for &i in &frame {
            for j in 0..n_aux {
                targets[j + 1] += aux[(i, j)];
            }
        }
        let spec = crate::calibrate::CalibrationSpec {
            design_weights: adjustable.iter().map(|&i| weights[i]).collect(),
            x_sample: x_cal,
            targets,
        };
        let result = crate::calibrate::calibrate_weights(&spec)?;
        any_nonpositive |= result.has_nonpositive;
        for (row, &i) in adjustable.iter().enumerate() {
            new_weights[i] = result.weights[row];
        }
    }
    if any_nonpositive {
        eprintln!("warning: calibration produced non-positive weights (kept as-is)");
    }
    let mut buf = Vec::new();
    write_selection_csv(&sel, &new_weights, &mut buf)?;
    write_output(
        args.output.as_deref(),
        std::str::from_utf8(&buf).expect("selection csv is utf-8"),
    )?;
    Ok(())
}

/// Routes a parsed invocation.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
