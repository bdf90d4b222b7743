use std::path::PathBuf;
use std::str::FromStr;

use super::csv_io::CsvSelection;
use super::report::OutputFormat;
use super::simulate::Suite;
use super::vol::RollingVolSpec;
use crate::asymptotics::{default_bandwidth, HacKernel, OmegaEstimator};
use crate::constraints::ConditionalModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Command {
    #[default]
    Infer,
    Mglh,
    Lrt,
    Attribute,
    Simulate,
    Selftest,
}

impl Command {
    fn needs_input(&self) -> bool {
        matches!(self, Command::Infer | Command::Mglh | Command::Lrt | Command::Attribute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelChoice {
    /// Unconditional, or weighted returns with constant Sharpe.
    #[default]
    Constant,
    Floating,
    BiConditional,
}

impl ModelChoice {
    pub fn model(&self) -> ConditionalModel {
        match self {
            ModelChoice::Constant => ConditionalModel::ConstantSr,
            ModelChoice::Floating => ConditionalModel::FloatingSr,
            ModelChoice::BiConditional => ConditionalModel::BiConditional,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::Constant => "constant",
            ModelChoice::Floating => "floating",
            ModelChoice::BiConditional => "biconditional",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ModelChoice::Constant),
            "floating" => Ok(ModelChoice::Floating),
            "biconditional" => Ok(ModelChoice::BiConditional),
            _ => Err(Error::InvalidSpec(format!("unknown model '{s}'"))),
        }
    }
}

/// Kernel and optional bandwidth, written `bartlett` or `parzen:12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HacChoice {
    pub kernel: HacKernel,
    pub bandwidth: Option<usize>,
}

impl HacChoice {
    pub fn estimator(&self, n_obs: usize) -> OmegaEstimator {
        OmegaEstimator::Hac {
            kernel: self.kernel,
            bandwidth: self.bandwidth.unwrap_or_else(|| default_bandwidth(n_obs)),
        }
    }
}

impl FromStr for HacChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, bw) = match s.split_once(':') {
            Some((n, b)) => (n, Some(b)),
            None => (s, None),
        };
        let kernel = match name {
            "bartlett" => HacKernel::Bartlett,
            "parzen" => HacKernel::Parzen,
            _ => return Err(Error::InvalidSpec(format!("unknown HAC kernel '{name}'"))),
        };
        let bandwidth = bw
            .map(|b| {
                b.parse::<usize>()
                    .map_err(|_| Error::InvalidSpec(format!("bad HAC bandwidth '{b}'")))
            })
            .transpose()?;
        Ok(Self { kernel, bandwidth })
    }
}

/// Everything a run needs, independent of how it was specified.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub selection: CsvSelection,
    pub model: ModelChoice,
    /// Quietude weighting by inverse rolling volatility.
    pub vol: Option<RollingVolSpec>,
    /// Periods between a feature observation and the return it predicts.
    pub feature_lag: usize,
    pub center_features: bool,
    pub hac: Option<HacChoice>,
    pub risk_budget: Option<f64>,
    pub rfr: Option<f64>,
    pub format: OutputFormat,
    pub seed: Option<u64>,
    pub suite: Option<Suite>,
    pub trials: Option<usize>,
    pub hypothesis_a: Option<PathBuf>,
    pub hypothesis_c: Option<PathBuf>,
    pub hypothesis_t: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Infer,
            input: None,
            selection: CsvSelection::default(),
            model: ModelChoice::Constant,
            vol: None,
            feature_lag: 1,
            center_features: false,
            hac: None,
            risk_budget: None,
            rfr: None,
            format: OutputFormat::Tsv,
            seed: None,
            suite: None,
            trials: None,
            hypothesis_a: None,
            hypothesis_c: None,
            hypothesis_t: None,
            constraints: None,
        }
    }
}

impl RunConfig {
    /// Checks the combination of options before any data is read.
    pub fn validate(&self) -> Result<()> {
        let usage = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.command.needs_input() && self.input.is_none() {
            return usage("an input file is required");
        }
        if let Some(r) = self.risk_budget {
            if !(r > 0.0 && r.is_finite()) {
                return usage("risk budget must be positive");
            }
        }
        if let Some(r0) = self.rfr {
            if !(r0 > 0.0) {
                return Err(Error::NonPositiveRfr);
            }
            if self.risk_budget.is_none() {
                return usage("a risk-free rate needs a risk budget");
            }
        }
        let has_features = !self.selection.features.is_empty();
        match self.model {
            ModelChoice::BiConditional if !has_features && self.command != Command::Simulate => {
                return usage("the biconditional model needs at least one feature");
            }
            ModelChoice::Constant | ModelChoice::Floating if has_features => {
                return usage("features need the biconditional model");
            }
            _ => {}
        }
        if self.feature_lag == 0 && has_features {
            return usage("features must be lagged by at least one period");
        }
        match self.command {
            Command::Simulate => {
                if self.seed.is_none() {
                    return usage("simulate needs a seed");
                }
                if self.suite.is_none() {
                    return usage("simulate needs a suite");
                }
            }
            Command::Mglh => {
                if self.hypothesis_a.is_none() || self.hypothesis_c.is_none() {
                    return usage("mglh needs the A and C matrices");
                }
                if self.model != ModelChoice::BiConditional {
                    return usage("mglh needs the biconditional model");
                }
            }
            Command::Lrt => {
                if self.constraints.is_none() {
                    return usage("lrt needs a constraints file");
                }
                if self.model != ModelChoice::Constant {
                    return usage("lrt works on the unconditional second moment");
                }
            }
            Command::Attribute => {
                if self.model != ModelChoice::Constant {
                    return usage("attribution compares constant-Sharpe fits");
                }
            }
            Command::Infer | Command::Selftest => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn infer() -> RunConfig {
        RunConfig {
            input: Some("x.csv".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_validate() {
        infer().validate().unwrap();
        RunConfig {
            command: Command::Selftest,
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn simulate_needs_seed() {
        let cfg = RunConfig {
            command: Command::Simulate,
            suite: Some(Suite::Lrt),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidSpec(_))));
        RunConfig { seed: Some(1), ..cfg }.validate().unwrap();
    }

    #[test]
    fn risk_budget_and_rate() {
        let cfg = RunConfig {
            risk_budget: Some(0.0),
            ..infer()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            risk_budget: Some(1.0),
            rfr: Some(-0.01),
            ..infer()
        };
        assert!(matches!(cfg.validate(), Err(Error::NonPositiveRfr)));
    }

    #[test]
    fn model_and_features_agree() {
        let mut cfg = infer();
        cfg.model = ModelChoice::BiConditional;
        assert!(cfg.validate().is_err());
        cfg.selection.features = vec!["cape".into()];
        cfg.validate().unwrap();
        cfg.model = ModelChoice::Floating;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parses_choices() {
        assert_eq!(
            "bartlett:7".parse::<HacChoice>().unwrap(),
            HacChoice {
                kernel: HacKernel::Bartlett,
                bandwidth: Some(7)
            }
        );
        assert_eq!("parzen".parse::<HacChoice>().unwrap().bandwidth, None);
        assert!("qs:3".parse::<HacChoice>().is_err());
        assert!("bartlett:x".parse::<HacChoice>().is_err());
        assert_eq!("floating".parse::<ModelChoice>().unwrap(), ModelChoice::Floating);
    }
}
