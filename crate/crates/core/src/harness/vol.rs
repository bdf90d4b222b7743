use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Trailing-window volatility proxy and the delay before it is usable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingVolSpec {
    pub window: usize,
    pub lag: usize,
}

impl Default for RollingVolSpec {
    fn default() -> Self {
        Self { window: 11, lag: 1 }
    }
}

impl RollingVolSpec {
    pub fn new(window: usize, lag: usize) -> Result<Self> {
        if window == 0 || lag == 0 {
            return Err(Error::InvalidSpec("volatility window and lag must be positive".into()));
        }
        Ok(Self { window, lag })
    }

    /// First row with a defined weight.
    pub fn first_valid(&self) -> usize {
        self.window - 1 + self.lag
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Quietude weights `l[i + lag] = 1 / v[i]` where `v[i]` is the mean over the
/// `window` rows ending at `i` of the cross-asset median absolute return.
/// The first `window - 1 + lag` entries are undefined.
pub fn rolling_volatility(returns: &DMatrix<f64>, spec: RollingVolSpec) -> Result<Vec<Option<f64>>> {
    let t = returns.nrows();
    if spec.window == 0 || spec.lag == 0 || spec.window + spec.lag >= t {
        return Err(Error::InvalidSpec(format!(
            "window {} plus lag {} needs more than {t} rows",
            spec.window, spec.lag
        )));
    }
    let med: Vec<f64> = (0..t)
        .map(|i| {
            let mut row: Vec<f64> = returns.row(i).iter().map(|x| x.abs()).collect();
            median(&mut row)
        })
        .collect();
    let mut out = vec![None; t];
    for i in spec.window - 1..t - spec.lag {
        // summed afresh per window so results do not depend on history
        let mut sum = 0.0;
        for m in &med[i + 1 - spec.window..=i] {
            sum += m;
        }
        let v = sum / spec.window as f64;
        if v < 1e-300 {
            return Err(Error::ZeroVolatilityWindow(i));
        }
        out[i + spec.lag] = Some(1.0 / v);
    }
    Ok(out)
}

/// Defined weights from `first_valid` on.
pub fn defined_weights(weights: &[Option<f64>], first_valid: usize) -> DVector<f64> {
    DVector::from_iterator(
        weights.len() - first_valid,
        weights[first_valid..]
            .iter()
            .map(|w| w.expect("weights defined after the warm-up")),
    )
}
