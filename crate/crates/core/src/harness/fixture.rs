//! Synthetic monthly panel shaped like three equity factor portfolios and a
//! slow valuation signal, used to exercise the pipeline end to end.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::csv_io::write_csv;
use crate::error::Result;
use crate::kernels::chol;

/// Seed and length of the shipped fixture file.
pub const FIXTURE_SEED: u64 = 1926;
pub const FIXTURE_MONTHS: usize = 600;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub names: Vec<String>,
    pub dates: Vec<String>,
    /// Columns `mkt, smb, hml, cape`.
    pub values: DMatrix<f64>,
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// Returns with a shared persistent log-volatility and a market mean that
/// falls with the lagged valuation level. Returns are rounded to six
/// decimals and the valuation level to two.
pub fn synthetic_ff3(seed: u64, months: usize) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let base_vol = DVector::from_vec(vec![0.045, 0.03, 0.03]);
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, -0.1, -0.2, -0.1, 1.0]);
    let factor = chol(&corr)?;
    let mut log_vol = 0.0;
    let mut cape = 18.0;
    let mut values = DMatrix::zeros(months, 4);
    let mut dates = Vec::with_capacity(months);
    for t in 0..months {
        dates.push(format!("{}-{:02}", 1960 + t / 12, t % 12 + 1));
        let lagged_cape = cape;
        cape = 18.0 + 0.98 * (cape - 18.0) + 0.6 * normal();
        log_vol = 0.95 * log_vol + 0.2 * normal();
        let z = &factor * DVector::from_fn(3, |_, _| normal());
        let mean = [0.006 - 0.0004 * (lagged_cape - 18.0), 0.0015, 0.003];
        for j in 0..3 {
            values[(t, j)] = round_to(mean[j] + base_vol[j] * log_vol.exp() * z[j], 6);
        }
        values[(t, 3)] = round_to(cape, 2);
    }
    Ok(SyntheticPanel {
        names: ["mkt", "smb", "hml", "cape"].iter().map(|s| s.to_string()).collect(),
        dates,
        values,
    })
}

/// Writes the panel as a headed CSV with a `date` column.
pub fn write_fixture<W: Write>(writer: W, panel: &SyntheticPanel) -> Result<()> {
    write_csv(writer, &panel.names, &panel.values, Some(&panel.dates))
}
