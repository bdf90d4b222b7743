//! The workflows behind each CLI command: load, align, estimate, report.

use nalgebra::{DMatrix, DVector};

use super::checks::{selftest, Check};
use super::config::{Command, RunConfig};
use super::csv_io::{load_csv, read_matrix, LoadedPanel};
use super::report::{normal_p_value, AttributionTable, OutputFormat, Report, ReportRow};
use super::simulate::simulate_suite;
use super::vol::{defined_weights, rolling_volatility};
use crate::asymptotics::{
    attribute_error, markowitz_distribution, omega_hac, omega_vanilla, portfolio_covariance, snr_variance,
    theta_inverse_covariance, DistributionResult, OmegaEstimate, OmegaEstimator,
};
use crate::constraints::{conditional_rows, markowitz_coefficient, ConditionalModel};
use crate::error::{Error, Result};
use crate::gaussian::{lrt_pvalue, lrt_solve, LrtOptions, TraceConstraintSet};
use crate::mglh::{mglh_asymptotic, MglhSpec};
use crate::moments::{sample_theta, AugmentedMoment, AugmentedRows, Layout};

/// Seed of the `selftest` command when none is given.
pub const DEFAULT_SELFTEST_SEED: u64 = 20_131_201;

/// Returns, lagged features and quietude weights aligned row by row, after
/// dropping the warm-up rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub returns: DMatrix<f64>,
    /// Leading intercept column followed by the selected features.
    pub features: Option<DMatrix<f64>>,
    pub feature_names: Vec<String>,
    pub weights: Option<DVector<f64>>,
    pub asset_names: Vec<String>,
    pub dates: Option<Vec<String>>,
    /// Rows dropped for missing values when loading.
    pub dropped_missing: usize,
    /// Leading rows dropped because a lagged feature or weight was undefined.
    pub warmup: usize,
}

/// Aligns features lagged by `feature_lag` and inverse-volatility weights
/// with the returns they precede. Row `i` of the output uses only data
/// available before return row `i` is realized.
pub fn prepare(cfg: &RunConfig, loaded: &LoadedPanel) -> Result<PreparedData> {
    let x = loaded.panel.values();
    let (t, p) = x.shape();
    let raw_weights = cfg.vol.map(|spec| rolling_volatility(x, spec)).transpose()?;
    let vol_start = cfg.vol.map_or(0, |s| s.first_valid());
    let lag = if loaded.features.is_some() { cfg.feature_lag } else { 0 };
    let start = vol_start.max(lag);
    if t <= start + p + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} rows remain after a warm-up of {start}, need more than {}",
            t.saturating_sub(start),
            p + 1
        )));
    }
    let n = t - start;
    let returns = x.rows(start, n).into_owned();
    let weights = raw_weights.map(|w| defined_weights(&w, start));
    let (features, feature_names) = match &loaded.features {
        Some(f) => {
            let mut lagged = f.rows(start - lag, n).into_owned();
            if cfg.center_features {
                for mut col in lagged.column_iter_mut() {
                    let mean = col.mean();
                    col.add_scalar_mut(-mean);
                }
            }
            let with_intercept = lagged.insert_column(0, 1.0);
            let mut names = vec!["intercept".to_string()];
            names.extend(loaded.feature_names.iter().cloned());
            (Some(with_intercept), names)
        }
        None => (None, Vec::new()),
    };
    Ok(PreparedData {
        returns,
        features,
        feature_names,
        weights,
        asset_names: loaded.panel.asset_names().to_vec(),
        dates: loaded.panel.timestamps().map(|d| d[start..].to_vec()),
        dropped_missing: loaded.dropped,
        warmup: start,
    })
}

pub fn estimate_omega(cfg: &RunConfig, aug: &AugmentedRows) -> Result<OmegaEstimate> {
    match cfg.hac {
        Some(h) => match h.estimator(aug.n_obs()) {
            OmegaEstimator::Hac { kernel, bandwidth } => omega_hac(aug, kernel, bandwidth),
            _ => unreachable!("HAC choice yields a HAC estimator"),
        },
        None => omega_vanilla(aug),
    }
}

fn estimator_name(om: &OmegaEstimate) -> String {
    match om.estimator {
        OmegaEstimator::Vanilla => "vanilla".into(),
        OmegaEstimator::Hac { kernel, bandwidth } => format!("hac:{kernel:?}:{bandwidth}").to_lowercase(),
        OmegaEstimator::GaussianClosedForm => "gaussian".into(),
    }
}

fn relabel(mut dr: DistributionResult, labels: Vec<String>) -> DistributionResult {
    dr.labels = labels;
    dr
}

fn common_metadata(report: &mut Report, cfg: &RunConfig, prep: &PreparedData, command: &str) {
    report.meta("command", command);
    report.meta("model", cfg.model.name());
    report.meta("assets", prep.asset_names.join(","));
    if !prep.feature_names.is_empty() {
        report.meta("features", prep.feature_names.join(","));
    }
    report.meta("rows_dropped_missing", prep.dropped_missing);
    report.meta("rows_warmup", prep.warmup);
    report.meta(
        "weighting",
        match (cfg.vol, &prep.weights) {
            (Some(v), Some(_)) => format!("inverse_volatility:window={}:lag={}", v.window, v.lag),
            _ => "none".into(),
        },
    );
    if cfg.center_features && !prep.feature_names.is_empty() {
        report.meta("features_centered", true);
    }
}

/// Second moment and Omega of the configured model.
pub fn fit(cfg: &RunConfig, prep: &PreparedData, model: ConditionalModel) -> Result<(AugmentedMoment, OmegaEstimate)> {
    let aug = conditional_rows(&prep.returns, prep.features.as_ref(), prep.weights.as_ref(), model)?;
    let tm = sample_theta(&aug)?;
    let om = estimate_omega(cfg, &aug)?;
    Ok((tm, om))
}

/// Markowitz portfolio (or coefficient) with standard errors and Wald
/// statistics; with a risk budget also the budgeted portfolio and, given a
/// risk-free rate, the signal-noise ratio of that portfolio.
pub fn infer_report(cfg: &RunConfig, prep: &PreparedData) -> Result<Report> {
    let (tm, om) = fit(cfg, prep, cfg.model.model())?;
    let mut report = Report::default();
    common_metadata(&mut report, cfg, prep, "infer");
    report.meta("estimator", estimator_name(&om));
    report.meta("n_obs", tm.n_obs());
    match tm.layout() {
        Layout::Unconditional => {
            let md = markowitz_distribution(&tm, &om)?;
            report.add_distribution("markowitz", &relabel(md, prep.asset_names.clone()));
            if let Some(budget) = cfg.risk_budget {
                let pd = portfolio_covariance(&tm, &om, budget)?;
                report.add_distribution("portfolio", &relabel(pd, prep.asset_names.clone()));
                let opt = crate::moments::sr_optimal_portfolio(&tm, budget, cfg.rfr.unwrap_or(0.0))?;
                report.add_value("portfolio", "sharpe", opt.sharpe);
                if let Some(r0) = cfg.rfr {
                    // spread of the sample portfolio's population SNR around
                    // the optimum; not a test of the SNR against zero
                    report.rows.push(ReportRow {
                        section: "portfolio".into(),
                        label: "snr".into(),
                        estimate: opt.objective,
                        std_error: Some(snr_variance(&tm, &om, budget, r0)?.sqrt()),
                        z: None,
                        p_value: None,
                    });
                }
            }
        }
        Layout::Conditional { .. } => {
            if cfg.risk_budget.is_some() {
                log::warn!("the risk budget applies to the unconditional model only; ignored");
            }
            let features = if prep.feature_names.is_empty() {
                vec!["weight".to_string()]
            } else {
                prep.feature_names.clone()
            };
            let est = markowitz_coefficient(&tm, &om)?;
            let labels = features
                .iter()
                .flat_map(|f| prep.asset_names.iter().map(move |a| format!("{a}~{f}")))
                .collect();
            report.add_distribution("coefficient", &relabel(est.distribution, labels));
        }
    }
    Ok(report)
}

/// Share of each Markowitz weight's error explained by precision-matrix
/// error, with and without inverse-volatility weighting, on the same rows.
pub fn attribute_report(cfg: &RunConfig, loaded: &LoadedPanel) -> Result<Report> {
    let cfg = RunConfig {
        vol: Some(cfg.vol.unwrap_or_default()),
        ..cfg.clone()
    };
    let weighted = prepare(&cfg, loaded)?;
    let vanilla = PreparedData {
        weights: None,
        ..weighted.clone()
    };
    let mut report = Report::default();
    common_metadata(&mut report, &cfg, &weighted, "attribute");
    let p = weighted.asset_names.len();
    let mut columns = Vec::new();
    for (name, prep) in [("vanilla", &vanilla), ("weighted", &weighted)] {
        let (tm, om) = fit(&cfg, prep, ConditionalModel::ConstantSr)?;
        report.meta("estimator", estimator_name(&om));
        report.meta("n_obs", tm.n_obs());
        let md = markowitz_distribution(&tm, &om)?;
        report.add_distribution(&format!("markowitz/{name}"), &relabel(md, prep.asset_names.clone()));
        columns.push(attribute_error(&theta_inverse_covariance(&tm, &om)?, p)?);
    }
    report.attribution = Some(AttributionTable {
        assets: weighted.asset_names.clone(),
        columns: vec!["vanilla".into(), "weighted".into()],
        values: (0..p).map(|i| columns.iter().map(|c| c[i]).collect()).collect(),
    });
    Ok(report)
}

const MGLH_NAMES: [&str; 4] = ["hotelling_lawley", "pillai_bartlett", "wilks", "roy"];

/// The four test statistics of `A B C = T` with delta-method standard
/// errors and z-scores against their null values `(0, a, 1, 0)`.
pub fn mglh_report(cfg: &RunConfig, prep: &PreparedData) -> Result<Report> {
    let path = |p: &Option<std::path::PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidSpec(format!("missing {what} matrix")))
    };
    let a = read_matrix(&path(&cfg.hypothesis_a, "A")?)?;
    let c = read_matrix(&path(&cfg.hypothesis_c, "C")?)?;
    let spec = match &cfg.hypothesis_t {
        Some(t) => MglhSpec::new(a, c, read_matrix(t)?)?,
        None => MglhSpec::zero_target(a, c)?,
    };
    let (tm, om) = fit(cfg, prep, ConditionalModel::BiConditional)?;
    let res = mglh_asymptotic(&tm, &spec, &om)?;
    let null = [0.0, spec.n_rows() as f64, 1.0, 0.0];
    let z = res.z_scores(null).expect("variances were computed");
    let var = res.variances.expect("variances were computed");
    let mut report = Report::default();
    common_metadata(&mut report, cfg, prep, "mglh");
    report.meta("estimator", estimator_name(&om));
    report.meta("n_obs", tm.n_obs());
    report.meta("hypothesis", format!("{}x{}", spec.n_rows(), spec.n_cols()));
    for (i, (name, value)) in MGLH_NAMES.iter().zip(res.values()).enumerate() {
        report.rows.push(ReportRow {
            section: "mglh".into(),
            label: name.to_string(),
            estimate: value,
            std_error: Some((var[i] / tm.n_obs() as f64).sqrt()),
            z: Some(z[i]),
            p_value: Some(normal_p_value(z[i])),
        });
    }
    Ok(report)
}

/// Likelihood ratio test of `tr(A_i Theta^-1) = a_i`. Each record of the
/// constraints file holds `vech(A_i)` followed by `a_i`.
pub fn lrt_report(cfg: &RunConfig, prep: &PreparedData) -> Result<Report> {
    let path = cfg
        .constraints
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("missing constraints file".into()))?;
    let m = read_matrix(path)?;
    let k = m.ncols();
    if k < 2 {
        return Err(Error::ShapeMismatch(
            "each constraint needs vech(A) and a target".into(),
        ));
    }
    let rows = m
        .row_iter()
        .map(|r| (r.columns(0, k - 1).transpose().into_owned(), r[k - 1]))
        .collect();
    let cs = TraceConstraintSet::from_vech(rows)?;
    let (tm, _) = fit(cfg, prep, ConditionalModel::ConstantSr)?;
    let sol = lrt_solve(&tm, &cs, &LrtOptions::default())?;
    let mut report = Report::default();
    common_metadata(&mut report, cfg, prep, "lrt");
    report.meta("n_obs", tm.n_obs());
    report.meta("iterations", sol.iterations);
    report.rows.push(ReportRow {
        section: "lrt".into(),
        label: "statistic".into(),
        estimate: sol.stat,
        std_error: None,
        z: None,
        p_value: Some(lrt_pvalue(sol.stat, sol.dof)?),
    });
    report.add_value("lrt", "dof", sol.dof as f64);
    for (i, l) in sol.lambda.iter().enumerate() {
        report.add_value("lrt", &format!("multiplier[{}]", i + 1), *l);
    }
    Ok(report)
}

fn render_checks(checks: &[Check], format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Tsv => {
            let mut s = String::from("check\tobserved\ttarget\ttolerance\tresult\n");
            for c in checks {
                s.push_str(&c.line());
                s.push('\n');
            }
            s
        }
        OutputFormat::Json => serde_json::to_string_pretty(checks)? + "\n",
    })
}

/// Rendered output and whether every check in it passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub passed: bool,
}

impl RunOutput {
    fn report(r: Report, format: OutputFormat) -> Self {
        Self {
            text: r.render(format),
            passed: true,
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let load = || -> Result<LoadedPanel> {
        let path = cfg.input.as_ref().expect("validated: input present");
        load_csv(path, &cfg.selection)
    };
    match cfg.command {
        Command::Infer => {
            let prep = prepare(cfg, &load()?)?;
            Ok(RunOutput::report(infer_report(cfg, &prep)?, cfg.format))
        }
        Command::Attribute => Ok(RunOutput::report(attribute_report(cfg, &load()?)?, cfg.format)),
        Command::Mglh => {
            let prep = prepare(cfg, &load()?)?;
            Ok(RunOutput::report(mglh_report(cfg, &prep)?, cfg.format))
        }
        Command::Lrt => {
            let prep = prepare(cfg, &load()?)?;
            Ok(RunOutput::report(lrt_report(cfg, &prep)?, cfg.format))
        }
        Command::Simulate => {
            let suite = cfg.suite.expect("validated: suite present");
            let seed = cfg.seed.expect("validated: seed present");
            let r = simulate_suite(suite, seed, cfg.trials)?;
            let text = match cfg.format {
                OutputFormat::Tsv => r.to_tsv(),
                OutputFormat::Json => serde_json::to_string_pretty(&r)? + "\n",
            };
            Ok(RunOutput {
                text,
                passed: r.passed(),
            })
        }
        Command::Selftest => {
            let checks = selftest(cfg.seed.unwrap_or(DEFAULT_SELFTEST_SEED));
            Ok(RunOutput {
                passed: checks.iter().all(|c| c.passed),
                text: render_checks(&checks, cfg.format)?,
            })
        }
    }
}
