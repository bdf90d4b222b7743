//! The augmented second moment of returns and the quantities packed in its inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{checked_symmetric, eigen_sym, sym_inverse};

/// Smallest allowed ratio of extreme eigenvalues for a usable second moment.
pub const PD_RATIO: f64 = 1e-12;

/// A `T x p` panel of per-period asset returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    asset_names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl ReturnsPanel {
    pub fn new(values: DMatrix<f64>, asset_names: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        let (t, p) = values.shape();
        if t == 0 || p == 0 {
            return Err(Error::EmptyPanel);
        }
        if asset_names.len() != p {
            return Err(Error::LengthMismatch(format!(
                "{} asset names for {p} columns",
                asset_names.len()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != t {
                return Err(Error::LengthMismatch(format!("{} timestamps for {t} rows", ts.len())));
            }
        }
        if t < p + 2 {
            return Err(Error::ShapeMismatch(format!("{t} periods is too few for {p} assets")));
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            asset_names,
            timestamps,
        })
    }

    /// Panel with generated asset names `asset1..assetp`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let names = (1..=values.ncols()).map(|i| format!("asset{i}")).collect();
        Self::new(values, names, None)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps the rows whose indices are listed, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(rows);
        let timestamps = self
            .timestamps
            .as_ref()
            .map(|ts| rows.iter().map(|&i| ts[i].clone()).collect());
        Self::new(values, self.asset_names.clone(), timestamps)
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// What occupies the leading block of the augmented vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Leading entry is the constant 1.
    Unconditional,
    /// Leading `f_dim` entries are (weighted) features.
    Conditional { f_dim: usize },
}

impl Layout {
    pub fn f_dim(&self) -> usize {
        match self {
            Layout::Unconditional => 1,
            Layout::Conditional { f_dim } => *f_dim,
        }
    }
}

/// Rows of the augmented vectors, one per period.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRows {
    pub rows: DMatrix<f64>,
    pub layout: Layout,
}

impl AugmentedRows {
    pub fn n_obs(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Builds the rows `[1, x']`, `[l, l x']` or `[l f', l x']`.
///
/// Features and weights must already be aligned so that row `i` is known
/// before return row `i` is realized.
pub fn augment(
    returns: &DMatrix<f64>,
    features: Option<&DMatrix<f64>>,
    weights: Option<&DVector<f64>>,
) -> Result<AugmentedRows> {
    let (t, p) = returns.shape();
    check_finite(returns)?;
    if let Some(w) = weights {
        if w.len() != t {
            return Err(Error::LengthMismatch(format!("{} weights for {t} rows", w.len())));
        }
        if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveWeight(i));
        }
    }
    if let Some(f) = features {
        if f.nrows() != t {
            return Err(Error::LengthMismatch(format!(
                "{} feature rows for {t} return rows",
                f.nrows()
            )));
        }
        check_finite(f)?;
    }
    let f_dim = features.map_or(1, |f| f.ncols());
    let mut rows = DMatrix::zeros(t, f_dim + p);
    for i in 0..t {
        let l = weights.map_or(1.0, |w| w[i]);
        match features {
            Some(f) => {
                for j in 0..f_dim {
                    rows[(i, j)] = l * f[(i, j)];
                }
            }
            None => rows[(i, 0)] = l,
        }
        for j in 0..p {
            rows[(i, f_dim + j)] = l * returns[(i, j)];
        }
    }
    let layout = if features.is_none() && weights.is_none() {
        Layout::Unconditional
    } else {
        Layout::Conditional { f_dim }
    };
    Ok(AugmentedRows { rows, layout })
}

/// A symmetric positive definite augmented second moment with its sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMoment {
    theta: DMatrix<f64>,
    n_obs: usize,
    layout: Layout,
}

impl AugmentedMoment {
    /// Validates symmetry, positive definiteness and (for the unconditional
    /// layout) the unit corner.
    pub fn new(theta: DMatrix<f64>, n_obs: usize, layout: Layout) -> Result<Self> {
        let mut theta = checked_symmetric(&theta)?;
        if layout.f_dim() >= theta.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "leading block of size {} leaves no assets in a {}x{} moment",
                layout.f_dim(),
                theta.nrows(),
                theta.ncols()
            )));
        }
        if layout == Layout::Unconditional {
            if (theta[(0, 0)] - 1.0).abs() > 1e-12 {
                return Err(Error::WrongLayout("unconditional moment needs a unit corner"));
            }
            theta[(0, 0)] = 1.0;
        }
        check_pd(&theta)?;
        Ok(Self { theta, n_obs, layout })
    }

    /// Population moment `[[1, mu'], [mu, Sigma + mu mu']]`.
    pub fn from_mean_cov(mu: &DVector<f64>, sigma: &DMatrix<f64>, n_obs: usize) -> Result<Self> {
        let p = mu.len();
        if sigma.shape() != (p, p) {
            return Err(Error::ShapeMismatch("mean and covariance disagree".into()));
        }
        let mut theta = DMatrix::zeros(p + 1, p + 1);
        theta[(0, 0)] = 1.0;
        for i in 0..p {
            theta[(0, i + 1)] = mu[i];
            theta[(i + 1, 0)] = mu[i];
            for j in 0..p {
                theta[(i + 1, j + 1)] = sigma[(i, j)] + mu[i] * mu[j];
            }
        }
        Self::new(theta, n_obs, Layout::Unconditional)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Side length of `theta`.
    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn f_dim(&self) -> usize {
        self.layout.f_dim()
    }

    pub fn n_assets(&self) -> usize {
        self.dim() - self.f_dim()
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        sym_inverse(&self.theta).map_err(|_| Error::SingularTheta(0.0))
    }

    /// Feature Gram block, regression coefficient `B` (p x f) and residual
    /// covariance `Sigma` of returns on features. In the unconditional layout
    /// `B` is the mean and `Sigma` the covariance.
    pub fn regression_blocks(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let f = self.f_dim();
        let p = self.n_assets();
        let sigma_f = self.theta.view((0, 0), (f, f)).into_owned();
        let cross = self.theta.view((f, 0), (p, f)).into_owned();
        let inv_f = sym_inverse(&sigma_f)?;
        let b = &cross * &inv_f;
        let sigma = self.theta.view((f, f), (p, p)) - &b * &sigma_f * b.transpose();
        Ok((sigma_f, b, (&sigma + sigma.transpose()) * 0.5))
    }

    /// Mean and covariance of returns; unconditional layout only.
    pub fn mean_cov(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.layout != Layout::Unconditional {
            return Err(Error::WrongLayout("mean and covariance need the unconditional layout"));
        }
        let (_, b, sigma) = self.regression_blocks()?;
        Ok((b.column(0).into_owned(), sigma))
    }
}

fn check_pd(theta: &DMatrix<f64>) -> Result<()> {
    let (vals, _) = eigen_sym(theta)?;
    let ratio = vals[vals.len() - 1] / vals[0];
    if !(vals[0] > 0.0) || !(ratio >= PD_RATIO) {
        return Err(Error::SingularTheta(ratio));
    }
    Ok(())
}

/// `(1/T) sum_i r_i r_i'` over the augmented rows.
pub fn sample_theta(aug: &AugmentedRows) -> Result<AugmentedMoment> {
    let t = aug.n_obs();
    let dim = aug.dim();
    if t <= dim {
        return Err(Error::ShapeMismatch(format!(
            "{t} observations cannot identify a {dim}x{dim} second moment"
        )));
    }
    let theta = aug.rows.tr_mul(&aug.rows) / t as f64;
    AugmentedMoment::new(crate::kernels::symmetrize(&theta), t, aug.layout)
}

/// Blocks of the inverse augmented second moment.
///
/// Unconditional: `corner = 1 + psi^2`, `neg_coef = -Sigma^-1 mu`.
/// Conditional: `corner = Sigma_f^-1 + B' Sigma^-1 B`, `neg_coef = -Sigma^-1 B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaInverseParts {
    pub corner: DMatrix<f64>,
    pub snr_sq: Option<f64>,
    pub neg_coef: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

impl ThetaInverseParts {
    /// The Markowitz portfolio `Sigma^-1 mu` (or first coefficient column).
    pub fn portfolio(&self) -> DVector<f64> {
        -self.neg_coef.column(0).into_owned()
    }

    /// The coefficient `Sigma^-1 B`.
    pub fn coefficient(&self) -> DMatrix<f64> {
        -&self.neg_coef
    }

    /// Rebuilds the full inverse from its blocks.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let f = self.corner.nrows();
        let p = self.precision.nrows();
        let mut m = DMatrix::zeros(f + p, f + p);
        m.view_mut((0, 0), (f, f)).copy_from(&self.corner);
        m.view_mut((f, 0), (p, f)).copy_from(&self.neg_coef);
        m.view_mut((0, f), (f, p)).copy_from(&self.neg_coef.transpose());
        m.view_mut((f, f), (p, p)).copy_from(&self.precision);
        m
    }
}

pub fn unpack_theta_inverse(tm: &AugmentedMoment) -> Result<ThetaInverseParts> {
    let inv = tm.inverse()?;
    let f = tm.f_dim();
    let p = tm.n_assets();
    let corner = inv.view((0, 0), (f, f)).into_owned();
    let snr_sq = (tm.layout() == Layout::Unconditional).then(|| corner[(0, 0)] - 1.0);
    Ok(ThetaInverseParts {
        snr_sq,
        corner,
        neg_coef: inv.view((f, 0), (p, f)).into_owned(),
        precision: inv.view((f, f), (p, p)).into_owned(),
    })
}

/// The Sharpe-optimal portfolio under a risk budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioEstimate {
    pub weights: DVector<f64>,
    pub risk_budget: f64,
    /// Optimal Sharpe ratio `psi`.
    pub sharpe: f64,
    /// `psi - r0 / R`.
    pub objective: f64,
}

/// `w = (R / sqrt(mu' Sigma^-1 mu)) Sigma^-1 mu`.
pub fn sr_optimal_portfolio(tm: &AugmentedMoment, risk_budget: f64, rfr: f64) -> Result<PortfolioEstimate> {
    if !(risk_budget > 0.0) {
        return Err(Error::InvalidSpec("risk budget must be positive".into()));
    }
    let (mu, _) = tm.mean_cov()?;
    if mu.norm() <= 1e-12 {
        return Err(Error::ZeroMeanVector);
    }
    let parts = unpack_theta_inverse(tm)?;
    let markowitz = parts.portfolio();
    let snr_sq = mu.dot(&markowitz);
    if !(snr_sq > 0.0) {
        return Err(Error::ZeroSharpe);
    }
    let sharpe = snr_sq.sqrt();
    Ok(PortfolioEstimate {
        weights: markowitz * (risk_budget / sharpe),
        risk_budget,
        sharpe,
        objective: sharpe - rfr / risk_budget,
    })
}
