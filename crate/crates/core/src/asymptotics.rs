//! Covariance of the per-period outer products and its delta-method
//! propagation to the inverse second moment, the portfolio and its
//! signal-noise ratio.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{d_inv_vech, eigen_sym, psd_sqrt, symmetrize, vech_lower, SymIndex};
use crate::moments::{unpack_theta_inverse, AugmentedMoment, AugmentedRows, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HacKernel {
    Bartlett,
    Parzen,
}

impl HacKernel {
    /// Lag weight for lag `k` at the given bandwidth.
    pub fn weight(&self, k: usize, bandwidth: usize) -> f64 {
        let x = k as f64 / (bandwidth as f64 + 1.0);
        match self {
            HacKernel::Bartlett => (1.0 - x).max(0.0),
            HacKernel::Parzen => {
                if x <= 0.5 {
                    1.0 - 6.0 * x * x + 6.0 * x * x * x
                } else if x <= 1.0 {
                    2.0 * (1.0 - x).powi(3)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OmegaEstimator {
    Vanilla,
    Hac { kernel: HacKernel, bandwidth: usize },
    GaussianClosedForm,
}

/// Covariance of `vech(r r')` for one augmented row `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaEstimate {
    pub omega: DMatrix<f64>,
    pub estimator: OmegaEstimator,
    pub n_obs: usize,
}

impl OmegaEstimate {
    pub fn zeros(dim: usize, n_obs: usize) -> Self {
        let m = SymIndex::new(dim).vech_len();
        Self {
            omega: DMatrix::zeros(m, m),
            estimator: OmegaEstimator::Vanilla,
            n_obs,
        }
    }
}

/// A point estimate with its asymptotic covariance, stored per observation:
/// `Var(point) ~ covariance / n_obs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionResult {
    pub point: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n_obs: usize,
    pub labels: Vec<String>,
}

impl DistributionResult {
    pub fn standard_errors(&self) -> DVector<f64> {
        let n = self.n_obs as f64;
        self.covariance.diagonal().map(|v| (v.max(0.0) / n).sqrt())
    }

    /// Sub-result on the given coordinates, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            point: self.point.select_rows(idx),
            covariance: self.covariance.select_rows(idx).select_columns(idx),
            n_obs: self.n_obs,
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Same law for the negated estimate.
    pub fn negated(mut self) -> Self {
        self.point.neg_mut();
        self
    }
}

/// `vech(r r')` for every row, one row each.
fn outer_product_series(aug: &AugmentedRows) -> DMatrix<f64> {
    let t = aug.n_obs();
    let q = aug.dim();
    let idx = SymIndex::new(q);
    let mut out = DMatrix::zeros(t, idx.vech_len());
    for i in 0..t {
        let r = aug.rows.row(i);
        for (k, (a, b)) in idx.lower_pairs().enumerate() {
            out[(i, k)] = r[a] * r[b];
        }
    }
    out
}

fn demeaned(series: &DMatrix<f64>) -> DMatrix<f64> {
    let t = series.nrows() as f64;
    let mut out = series.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
    }
    out
}

fn zero_first(omega: &mut DMatrix<f64>) {
    omega.row_mut(0).fill(0.0);
    omega.column_mut(0).fill(0.0);
}

/// Sample covariance (divisor `T`) of `vech(r_i r_i')`.
pub fn omega_vanilla(aug: &AugmentedRows) -> Result<OmegaEstimate> {
    let t = aug.n_obs();
    if t < 2 {
        return Err(Error::ShapeMismatch("need at least two observations".into()));
    }
    let centered = demeaned(&outer_product_series(aug));
    let mut omega = symmetrize(&(centered.tr_mul(&centered) / t as f64));
    if aug.layout == Layout::Unconditional {
        zero_first(&mut omega);
    }
    Ok(OmegaEstimate {
        omega,
        estimator: OmegaEstimator::Vanilla,
        n_obs: t,
    })
}

/// Rule-of-thumb bandwidth `floor(1.2 T^(1/3))`.
pub fn default_bandwidth(n_obs: usize) -> usize {
    (1.2 * (n_obs as f64).cbrt()).floor() as usize
}

/// Kernel-weighted long-run covariance of `vech(r_i r_i')`, repaired to be
/// positive semidefinite by clipping negative eigenvalues.
pub fn omega_hac(aug: &AugmentedRows, kernel: HacKernel, bandwidth: usize) -> Result<OmegaEstimate> {
    let t = aug.n_obs();
    if bandwidth >= t {
        return Err(Error::BandwidthTooLarge { bandwidth, n_obs: t });
    }
    let v = demeaned(&outer_product_series(aug));
    let m = v.ncols();
    let tf = t as f64;
    let mut omega = v.tr_mul(&v) / tf;
    for k in 1..=bandwidth {
        let w = kernel.weight(k, bandwidth);
        if w == 0.0 {
            continue;
        }
        let lead = v.rows(k, t - k);
        let lag = v.rows(0, t - k);
        let gamma = lead.tr_mul(&lag) / tf;
        omega += (&gamma + gamma.transpose()) * w;
    }
    let mut omega = symmetrize(&omega);
    let (vals, vecs) = eigen_sym(&omega)?;
    let top = vals[0].abs();
    if vals[m - 1] < -1e-12 * top {
        log::warn!(
            "HAC covariance is indefinite (smallest eigenvalue {:.3e}); clipping at zero",
            vals[m - 1]
        );
        let clipped = DMatrix::from_diagonal(&vals.map(|x| x.max(0.0)));
        omega = symmetrize(&(&vecs * clipped * vecs.transpose()));
    }
    if aug.layout == Layout::Unconditional {
        zero_first(&mut omega);
    }
    Ok(OmegaEstimate {
        omega,
        estimator: OmegaEstimator::Hac { kernel, bandwidth },
        n_obs: t,
    })
}

fn check_omega(tm: &AugmentedMoment, om: &OmegaEstimate) -> Result<()> {
    let m = SymIndex::new(tm.dim()).vech_len();
    if om.omega.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "omega is {}x{}, expected {m}x{m}",
            om.omega.nrows(),
            om.omega.ncols()
        )));
    }
    Ok(())
}

/// `H Omega H'`, symmetrized.
pub fn sandwich(h: &DMatrix<f64>, omega: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(h * omega * h.transpose()))
}

/// Labels `name[i,j]` in `vech` order.
pub fn vech_labels(name: &str, dim: usize) -> Vec<String> {
    SymIndex::new(dim)
        .lower_pairs()
        .map(|(r, c)| format!("{name}[{r},{c}]"))
        .collect()
}

fn singular_theta(e: Error) -> Error {
    match e {
        Error::SingularMatrix => Error::SingularTheta(0.0),
        other => other,
    }
}

/// Asymptotic law of `vech(Theta^-1)`: covariance `H Omega H'` with
/// `H = -L (Theta^-1 kron Theta^-1) D`.
pub fn theta_inverse_covariance(tm: &AugmentedMoment, om: &OmegaEstimate) -> Result<DistributionResult> {
    check_omega(tm, om)?;
    let inv = tm.inverse()?;
    let h = d_inv_vech(tm.theta()).map_err(singular_theta)?;
    Ok(DistributionResult {
        point: vech_lower(&inv),
        covariance: sandwich(&h, &om.omega),
        n_obs: tm.n_obs(),
        labels: vech_labels("theta_inv", tm.dim()),
    })
}

fn snr_parts(tm: &AugmentedMoment) -> Result<(f64, DVector<f64>)> {
    if tm.layout() != Layout::Unconditional {
        return Err(Error::WrongLayout("portfolio inference needs the unconditional layout"));
    }
    let parts = unpack_theta_inverse(tm)?;
    let snr_sq = parts.snr_sq.unwrap_or(0.0);
    if !(snr_sq > 1e-12) {
        return Err(Error::ZeroSharpe);
    }
    Ok((snr_sq, parts.portfolio()))
}

/// Jacobian of the risk-budgeted portfolio with respect to `vech(Theta)`.
pub fn portfolio_jacobian(tm: &AugmentedMoment, risk_budget: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (snr_sq, markowitz) = snr_parts(tm)?;
    let snr = snr_sq.sqrt();
    let p = tm.n_assets();
    let m = SymIndex::new(p + 1).vech_len();
    let weights = &markowitz * (risk_budget / snr);
    // derivative of the weights with respect to vech(Theta^-1)
    let mut outer = DMatrix::zeros(p, m);
    outer.set_column(0, &(-&weights / (2.0 * snr_sq)));
    for i in 0..p {
        outer[(i, i + 1)] = -risk_budget / snr;
    }
    let h = outer * d_inv_vech(tm.theta()).map_err(singular_theta)?;
    Ok((weights, h))
}

/// Asymptotic law of the portfolio `(R / psi) Sigma^-1 mu`.
pub fn portfolio_covariance(tm: &AugmentedMoment, om: &OmegaEstimate, risk_budget: f64) -> Result<DistributionResult> {
    check_omega(tm, om)?;
    if !(risk_budget > 0.0) {
        return Err(Error::InvalidSpec("risk budget must be positive".into()));
    }
    let (weights, h) = portfolio_jacobian(tm, risk_budget)?;
    Ok(DistributionResult {
        point: weights,
        covariance: sandwich(&h, &om.omega),
        n_obs: tm.n_obs(),
        labels: (1..=tm.n_assets()).map(|i| format!("w[{i}]")).collect(),
    })
}

/// Gradient of the sample portfolio's signal-noise ratio with respect to
/// `vech(Theta)`.
pub fn snr_gradient(tm: &AugmentedMoment, risk_budget: f64, rfr: f64) -> Result<DVector<f64>> {
    let (snr_sq, _) = snr_parts(tm)?;
    let (mu, _) = tm.mean_cov()?;
    let p = tm.n_assets();
    let m = SymIndex::new(p + 1).vech_len();
    let scale = -rfr / (risk_budget * snr_sq);
    let mut outer = DVector::zeros(m);
    outer[0] = 0.5 * scale;
    for i in 0..p {
        outer[i + 1] = scale * mu[i];
    }
    let h = d_inv_vech(tm.theta()).map_err(singular_theta)?;
    Ok(h.tr_mul(&outer))
}

/// Variance of the signal-noise ratio of the sample portfolio, `h' Omega h / n`.
pub fn snr_variance(tm: &AugmentedMoment, om: &OmegaEstimate, risk_budget: f64, rfr: f64) -> Result<f64> {
    check_omega(tm, om)?;
    if !(rfr > 0.0) {
        return Err(Error::NonPositiveRfr);
    }
    if !(risk_budget > 0.0) {
        return Err(Error::InvalidSpec("risk budget must be positive".into()));
    }
    let h = snr_gradient(tm, risk_budget, rfr)?;
    Ok(h.dot(&(&om.omega * &h)) / tm.n_obs() as f64)
}

/// Second-order law of the signal-noise ratio when the first-order term
/// vanishes: `n (SNR - psi) -> (1/2) z' M' F M z`, `z` standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrSecondOrder {
    /// Hessian of the signal-noise ratio at the optimal weights.
    pub curvature: DMatrix<f64>,
    /// Loading of the weight error on standard normals.
    pub loading: DMatrix<f64>,
}

impl SnrSecondOrder {
    /// `E[(1/2) z' M' F M z] = (1/2) tr(M' F M)`.
    pub fn mean(&self) -> f64 {
        0.5 * (self.loading.transpose() * &self.curvature * &self.loading).trace()
    }

    /// One draw of the limit variable for a given standard normal vector.
    pub fn evaluate(&self, z: &DVector<f64>) -> f64 {
        let y = &self.loading * z;
        0.5 * y.dot(&(&self.curvature * &y))
    }
}

pub fn snr_second_order(tm: &AugmentedMoment, om: &OmegaEstimate, risk_budget: f64) -> Result<SnrSecondOrder> {
    check_omega(tm, om)?;
    let (snr_sq, _) = snr_parts(tm)?;
    let snr = snr_sq.sqrt();
    let (mu, sigma) = tm.mean_cov()?;
    let curvature = (&mu * mu.transpose() / snr - sigma * snr) / (risk_budget * risk_budget);
    let (_, h) = portfolio_jacobian(tm, risk_budget)?;
    // Omega has a zero first row, so a Cholesky factor does not exist; a
    // symmetric square root serves the same purpose.
    let root = psd_sqrt(&om.omega)?;
    Ok(SnrSecondOrder {
        curvature: symmetrize(&curvature),
        loading: h * root,
    })
}

/// Wald z-scores `point / se`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldStatistics {
    pub z: DVector<f64>,
    /// Set where the variance was numerically zero.
    pub degenerate: Vec<bool>,
}

pub fn wald_statistics(dr: &DistributionResult) -> WaldStatistics {
    let n = dr.n_obs as f64;
    let mut degenerate = vec![false; dr.point.len()];
    let z = DVector::from_fn(dr.point.len(), |j, _| {
        let var = dr.covariance[(j, j)];
        let x = dr.point[j];
        if var < 1e-300 {
            degenerate[j] = true;
            if x == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(x)
            }
        } else {
            x / (var / n).sqrt()
        }
    });
    WaldStatistics { z, degenerate }
}

/// Law of the Markowitz portfolio `Sigma^-1 mu` read from the inverse
/// second moment, coordinates `1..=p` negated.
pub fn markowitz_distribution(tm: &AugmentedMoment, om: &OmegaEstimate) -> Result<DistributionResult> {
    if tm.layout() != Layout::Unconditional {
        return Err(Error::WrongLayout("Markowitz portfolio needs the unconditional layout"));
    }
    let full = theta_inverse_covariance(tm, om)?;
    let idx: Vec<usize> = (1..=tm.n_assets()).collect();
    let mut out = full.select(&idx).negated();
    out.labels = (1..=tm.n_assets()).map(|i| format!("markowitz[{i}]")).collect();
    Ok(out)
}

/// Fraction of each Markowitz-weight error explained by error in the
/// precision matrix: the squared multiple correlation of each portfolio
/// coordinate of `vech(Theta^-1)` on the precision coordinates.
pub fn attribute_error(dr: &DistributionResult, n_assets: usize) -> Result<Vec<f64>> {
    let dim = n_assets + 1;
    let m = SymIndex::new(dim).vech_len();
    if dr.covariance.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "attribution needs a {m}x{m} covariance of vech(Theta^-1)"
        )));
    }
    let cov = &dr.covariance;
    let precision: Vec<usize> = (dim..m).collect();
    let sd = |i: usize| -> Result<f64> {
        let v = cov[(i, i)];
        if v < 1e-300 {
            Err(Error::DegenerateCorrelation(i))
        } else {
            Ok(v.sqrt())
        }
    };
    let prec_sd = precision.iter().map(|&i| sd(i)).collect::<Result<Vec<_>>>()?;
    let k = precision.len();
    let corr = DMatrix::from_fn(k, k, |a, b| {
        cov[(precision[a], precision[b])] / (prec_sd[a] * prec_sd[b])
    });
    let corr_pinv = symmetrize(&corr)
        .pseudo_inverse(1e-10)
        .map_err(|_| Error::DegenerateCorrelation(dim))?;
    (1..=n_assets)
        .map(|i| {
            let si = sd(i)?;
            let r = DVector::from_fn(k, |a, _| cov[(i, precision[a])] / (si * prec_sd[a]));
            let r2 = r.dot(&(&corr_pinv * &r));
            if !(-1e-10..=1.0 + 1e-10).contains(&r2) {
                log::debug!("multiple correlation {r2} outside [0, 1] before clamping");
            }
            Ok(r2.clamp(0.0, 1.0))
        })
        .collect()
}
