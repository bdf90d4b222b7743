//! Data loading, alignment, reporting, Monte Carlo validation and
//! self-checks around the estimators.

pub mod britten_jones;
pub mod checks;
pub mod config;
pub mod csv_io;
pub mod fixture;
pub mod pipeline;
pub mod report;
pub mod simulate;
pub mod vol;

pub use britten_jones::britten_jones;
pub use checks::{selftest, Check};
pub use config::{Command, HacChoice, ModelChoice, RunConfig};
pub use csv_io::{load_csv, read_csv, read_matrix, write_csv, CsvSelection, LoadedPanel};
pub use fixture::{synthetic_ff3, write_fixture, SyntheticPanel, FIXTURE_MONTHS, FIXTURE_SEED};
pub use pipeline::{prepare, run, PreparedData, RunOutput};
pub use report::{normal_p_value, AttributionTable, OutputFormat, Report, ReportRow};
pub use simulate::{run_trials, simulate_suite, trial_seed, Suite, SuiteReport};
pub use vol::{defined_weights, rolling_volatility, RollingVolSpec};
