use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use markowitz_core::harness::{
    run, Command, CsvSelection, HacChoice, ModelChoice, OutputFormat, RollingVolSpec, RunConfig, Suite,
};
use markowitz_core::{Error, ErrorKind};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "markowitz", version, about = "Inference for the sample Markowitz portfolio")]
struct Cli {
    /// Log verbosity; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Markowitz portfolio or coefficient with standard errors.
    Infer(DataArgs),
    /// Multivariate linear hypothesis A B C = T on the Markowitz coefficient.
    Mglh {
        #[command(flatten)]
        data: DataArgs,
        /// CSV matrix A (rows select assets).
        #[arg(long = "A", value_name = "FILE")]
        a: PathBuf,
        /// CSV matrix C (columns combine features).
        #[arg(long = "C", value_name = "FILE")]
        c: PathBuf,
        /// CSV matrix T; zero when omitted.
        #[arg(long = "T", value_name = "FILE")]
        t: Option<PathBuf>,
    },
    /// Gaussian likelihood ratio test of trace constraints on the inverse
    /// second moment.
    Lrt {
        #[command(flatten)]
        data: DataArgs,
        /// One constraint per record: vech of a symmetric matrix, then the
        /// target value.
        #[arg(long, value_name = "FILE")]
        constraints: PathBuf,
    },
    /// Error attribution with and without inverse-volatility weighting.
    Attribute(DataArgs),
    /// Monte Carlo check of one asymptotic law.
    Simulate {
        /// inverse-moment, gaussian, lrt, mglh or britten-jones.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        seed: u64,
        /// Defaults to the suite's own trial count.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Deterministic closed-form, derivative and constraint checks.
    Selftest {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Headed CSV of returns and features, one row per period.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Asset columns; every non-date, non-feature column when omitted.
    #[arg(long, value_delimiter = ',')]
    assets: Vec<String>,
    /// Feature columns, used by the biconditional model.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long, default_value = "date", conflicts_with = "no_date_column")]
    date_column: String,
    /// The input has no date column.
    #[arg(long)]
    no_date_column: bool,
    /// constant, floating or biconditional.
    #[arg(long, default_value = "constant")]
    model: String,
    /// Trailing window of the volatility proxy; enables inverse-volatility
    /// weighting.
    #[arg(long)]
    vol_window: Option<usize>,
    /// Periods between the volatility window and the return it weights.
    #[arg(long)]
    vol_lag: Option<usize>,
    /// Periods between a feature and the return it predicts.
    #[arg(long, default_value_t = 1)]
    feature_lag: usize,
    #[arg(long)]
    center_features: bool,
    /// HAC kernel, optionally with bandwidth: bartlett, parzen:12.
    #[arg(long, value_name = "KERNEL[:BW]")]
    hac: Option<String>,
    /// Target volatility of the reported portfolio.
    #[arg(long, allow_negative_numbers = true)]
    risk_budget: Option<f64>,
    /// Risk-free rate for the portfolio signal-noise ratio.
    #[arg(long, allow_negative_numbers = true)]
    rfr: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Tsv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => OutputFormat::Tsv,
            Format::Json => OutputFormat::Json,
        }
    }
}

impl DataArgs {
    fn config(self, command: Command) -> Result<RunConfig, Error> {
        let vol = match (self.vol_window, self.vol_lag) {
            (None, None) => None,
            (w, l) => {
                let d = RollingVolSpec::default();
                Some(RollingVolSpec::new(w.unwrap_or(d.window), l.unwrap_or(d.lag))?)
            }
        };
        Ok(RunConfig {
            command,
            input: Some(self.input),
            selection: CsvSelection {
                assets: self.assets,
                features: self.features,
                date_column: (!self.no_date_column).then_some(self.date_column),
            },
            model: self.model.parse::<ModelChoice>()?,
            vol,
            feature_lag: self.feature_lag,
            center_features: self.center_features,
            hac: self.hac.as_deref().map(str::parse::<HacChoice>).transpose()?,
            risk_budget: self.risk_budget,
            rfr: self.rfr,
            format: self.format.into(),
            ..Default::default()
        })
    }
}

fn config(cmd: Cmd) -> Result<RunConfig, Error> {
    Ok(match cmd {
        Cmd::Infer(d) => d.config(Command::Infer)?,
        Cmd::Attribute(d) => d.config(Command::Attribute)?,
        Cmd::Mglh { data, a, c, t } => RunConfig {
            hypothesis_a: Some(a),
            hypothesis_c: Some(c),
            hypothesis_t: t,
            ..data.config(Command::Mglh)?
        },
        Cmd::Lrt { data, constraints } => RunConfig {
            constraints: Some(constraints),
            ..data.config(Command::Lrt)?
        },
        Cmd::Simulate {
            suite,
            seed,
            trials,
            format,
        } => RunConfig {
            command: Command::Simulate,
            suite: Some(suite.parse::<Suite>()?),
            seed: Some(seed),
            trials,
            format: format.into(),
            ..Default::default()
        },
        Cmd::Selftest { seed, format } => RunConfig {
            command: Command::Selftest,
            seed,
            format: format.into(),
            ..Default::default()
        },
    })
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    // simulate reports failing checks in its output; selftest treats them
    // as a numerical failure
    let is_selftest = matches!(cli.command, Cmd::Selftest { .. });
    let result = config(cli.command).and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout
                .write_all(out.text.as_bytes())
                .and_then(|_| stdout.flush())
                .is_err()
            {
                return ExitCode::from(EXIT_DATA);
            }
            if is_selftest && !out.passed {
                eprintln!("error: selftest checks failed");
                return ExitCode::from(EXIT_NUMERICAL);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
