use nalgebra::{DMatrix, DVector};

use super::orthonormalize_rows;
use crate::error::{Error, Result};
use crate::kernels::sym_inverse;
use crate::moments::{check_finite, AugmentedMoment};

/// Returns expanded by vector-valued volatility features.
///
/// Expanded asset `a * v + k` earns `x_a * l_k`, so a holding `W` on the
/// expanded assets is the time-varying holding `sum_k W[a, k] l_k` on asset `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedPanel {
    /// `T x (p v)` expanded returns.
    pub returns: DMatrix<f64>,
    /// Per-period constraint rows `I_p kron (1 / l_i)'`, orthonormalized.
    pub subspaces: Vec<DMatrix<f64>>,
    pub n_assets: usize,
    pub n_features: usize,
}

fn check_vol_row(l: &DVector<f64>, row: usize) -> Result<()> {
    if let Some(col) = l.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveVolFeature { row, col });
    }
    Ok(())
}

/// Orthonormalized `I_p kron (1 / l)'`.
pub fn flatten_subspace(n_assets: usize, l: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_vol_row(l, 0)?;
    let v = l.len();
    let mut j = DMatrix::zeros(n_assets, n_assets * v);
    for a in 0..n_assets {
        for k in 0..v {
            j[(a, a * v + k)] = 1.0 / l[k];
        }
    }
    orthonormalize_rows(&j)
}

/// Expands `returns` (`T x p`) by the positive features `vol` (`T x v`),
/// both aligned so that row `i` of `vol` is known before row `i` of returns.
pub fn flatten_volatility(returns: &DMatrix<f64>, vol: &DMatrix<f64>) -> Result<FlattenedPanel> {
    let (t, p) = returns.shape();
    let v = vol.ncols();
    if vol.nrows() != t {
        return Err(Error::LengthMismatch(format!(
            "{} volatility rows for {t} return rows",
            vol.nrows()
        )));
    }
    if v == 0 {
        return Err(Error::InvalidSpec("no volatility features".into()));
    }
    check_finite(returns)?;
    let mut expanded = DMatrix::zeros(t, p * v);
    let mut subspaces = Vec::with_capacity(t);
    for i in 0..t {
        let l = vol.row(i).transpose();
        check_vol_row(&l, i)?;
        for a in 0..p {
            for k in 0..v {
                expanded[(i, a * v + k)] = returns[(i, a)] * l[k];
            }
        }
        subspaces.push(flatten_subspace(p, &l)?);
    }
    Ok(FlattenedPanel {
        returns: expanded,
        subspaces,
        n_assets: p,
        n_features: v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedPortfolio {
    /// Holdings on the expanded assets.
    pub expanded_weights: DVector<f64>,
    /// Holdings on the original assets at this period.
    pub asset_weights: DVector<f64>,
    /// Conditional Sharpe of the optimal holding.
    pub sharpe: f64,
    /// `sharpe - r0 / R`.
    pub objective: f64,
}

/// Sharpe-optimal holding at one period, restricted to the expanded holdings
/// that are realizable given the current features `l`.
///
/// `tm` is the second moment of the expanded returns (either layout) and
/// `feature` the conditioning vector, `[1]` for the unconditional layout.
pub fn flattened_portfolio(
    tm: &AugmentedMoment,
    l: &DVector<f64>,
    feature: &DVector<f64>,
    risk_budget: f64,
    rfr: f64,
) -> Result<FlattenedPortfolio> {
    if !(risk_budget > 0.0) {
        return Err(Error::InvalidSpec("risk budget must be positive".into()));
    }
    let v = l.len();
    let pv = tm.n_assets();
    if v == 0 || !pv.is_multiple_of(v) {
        return Err(Error::ShapeMismatch(format!("{pv} expanded assets for {v} features")));
    }
    if feature.len() != tm.f_dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature of length {} for {} conditioning columns",
            feature.len(),
            tm.f_dim()
        )));
    }
    let p = pv / v;
    let j = flatten_subspace(p, l)?;
    let (_, b, sigma) = tm.regression_blocks()?;
    let mean = b * feature;
    let inner = sym_inverse(&(&j * &sigma * j.transpose())).map_err(|_| Error::SingularProjection)?;
    let jm = &j * &mean;
    let qform = jm.dot(&(&inner * &jm));
    if !(qform > 1e-24) {
        return Err(Error::ZeroSharpe);
    }
    let sharpe = qform.sqrt();
    let expanded_weights = j.transpose() * (inner * jm) * (risk_budget / sharpe);
    let asset_weights = DVector::from_fn(p, |a, _| (0..v).map(|k| expanded_weights[a * v + k] * l[k]).sum());
    Ok(FlattenedPortfolio {
        expanded_weights,
        asset_weights,
        sharpe,
        objective: sharpe - rfr / risk_budget,
    })
}
