use nalgebra::DMatrix;

use super::{augment_block, budgeted_weights, orthonormalize_rows};
use crate::asymptotics::{sandwich, vech_labels, DistributionResult, OmegaEstimate};
use crate::error::{Error, Result};
use crate::kernels::{d_qform_inv, duplication_matrix, elimination_matrix, inverse, kron, vech_lower};
use crate::moments::{AugmentedMoment, Layout};

/// Portfolios restricted to the row space of a basket matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSpec {
    basis: DMatrix<f64>,
    augmented: DMatrix<f64>,
}

impl SubspaceSpec {
    /// Rows of `j` are re-orthonormalized.
    pub fn new(j: &DMatrix<f64>) -> Result<Self> {
        let basis = orthonormalize_rows(j)?;
        let augmented = augment_block(1, &basis);
        Ok(Self { basis, augmented })
    }

    /// The orthonormalized basket matrix.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `blockdiag(1, J)`.
    pub fn augmented(&self) -> &DMatrix<f64> {
        &self.augmented
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    /// Law of `vech(J~' (J~ Theta J~')^-1 J~)`.
    pub projected: DistributionResult,
    /// Law of the risk-budgeted portfolio confined to the subspace.
    pub portfolio: DistributionResult,
}

/// `J~' Y^-1 J~` with `Y = J~ Theta J~'`, and its Jacobian in `vech` coordinates:
/// `-L (J~' kron J~')(Y^-1 kron Y^-1)(J~ kron J~) D`.
pub(crate) fn projected_inverse(theta: &DMatrix<f64>, jt: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = theta.nrows();
    let y = jt * theta * jt.transpose();
    let yi = inverse(&y).map_err(|_| Error::SingularProjection)?;
    let proj = jt.transpose() * yi * jt;
    let dinv = d_qform_inv(jt, theta).map_err(|_| Error::SingularProjection)?;
    let jtt = jt.transpose();
    let h = elimination_matrix(q).data * kron(&jtt, &jtt) * dinv * duplication_matrix(q).data;
    Ok(((&proj + proj.transpose()) * 0.5, h))
}

pub fn subspace_theta(
    tm: &AugmentedMoment,
    spec: &SubspaceSpec,
    om: &OmegaEstimate,
    risk_budget: f64,
) -> Result<SubspaceEstimate> {
    if tm.layout() != Layout::Unconditional {
        return Err(Error::WrongLayout("subspace portfolios need the unconditional layout"));
    }
    if spec.augmented.ncols() != tm.dim() {
        return Err(Error::ShapeMismatch(format!(
            "basket matrix has {} columns for {} assets",
            spec.basis.ncols(),
            tm.n_assets()
        )));
    }
    let (proj, h) = projected_inverse(tm.theta(), &spec.augmented)?;
    let (weights, dw) = budgeted_weights(&proj, 1.0, risk_budget)?;
    let hw = dw * &h;
    Ok(SubspaceEstimate {
        projected: DistributionResult {
            point: vech_lower(&proj),
            covariance: sandwich(&h, &om.omega),
            n_obs: tm.n_obs(),
            labels: vech_labels("projected_inv", tm.dim()),
        },
        portfolio: DistributionResult {
            point: weights,
            covariance: sandwich(&hw, &om.omega),
            n_obs: tm.n_obs(),
            labels: (1..=tm.n_assets()).map(|i| format!("w[{i}]")).collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{portfolio_covariance, theta_inverse_covariance, OmegaEstimator};
    use crate::kernels::{ivech, vech, VechShape};
    use nalgebra::DVector;

    fn setup(mu: &[f64], sigma: DMatrix<f64>) -> (AugmentedMoment, OmegaEstimate) {
        let tm = AugmentedMoment::from_mean_cov(&DVector::from_column_slice(mu), &sigma, 200).unwrap();
        let m = tm.dim() * (tm.dim() + 1) / 2;
        // any PSD matrix with a zero first row will do for propagation checks
        let a = DMatrix::from_fn(m, m, |i, j| {
            if i == 0 || j == 0 {
                0.0
            } else {
                ((i * 7 + j * 3) % 5) as f64 * 0.1
            }
        });
        let mut omega = &a * a.transpose();
        for i in 1..m {
            omega[(i, i)] += 1.0;
        }
        (
            tm,
            OmegaEstimate {
                omega,
                estimator: OmegaEstimator::Vanilla,
                n_obs: 200,
            },
        )
    }

    #[test]
    fn full_space_reduces_to_unconstrained() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let (tm, om) = setup(&[0.1, 0.3], sigma);
        let spec = SubspaceSpec::new(&DMatrix::identity(2, 2)).unwrap();
        let est = subspace_theta(&tm, &spec, &om, 1.0).unwrap();
        let base = theta_inverse_covariance(&tm, &om).unwrap();
        assert!((&est.projected.point - &base.point).amax() < 1e-10);
        assert!((&est.projected.covariance - &base.covariance).amax() < 1e-10);
        let port = portfolio_covariance(&tm, &om, 1.0).unwrap();
        assert!((&est.portfolio.point - &port.point).amax() < 1e-10);
        assert!((&est.portfolio.covariance - &port.covariance).amax() < 1e-10);
    }

    #[test]
    fn single_asset_subspace() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 1.0]));
        let (tm, om) = setup(&[0.1, 0.3], sigma);
        let spec = SubspaceSpec::new(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let r = 0.5;
        let est = subspace_theta(&tm, &spec, &om, r).unwrap();
        // within asset 1 alone: psi = 0.1 / 0.2, c = R / psi
        let markowitz = 0.1 / 0.04;
        let c = r / 0.5;
        assert!((est.portfolio.point[0] - markowitz * c).abs() < 1e-10);
        assert!(est.portfolio.point[1].abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, -0.1, 0.1, -0.1, 1.5]);
        let (tm, _) = setup(&[0.1, 0.3, -0.2], sigma);
        let spec = SubspaceSpec::new(&DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0])).unwrap();
        let jt = spec.augmented().clone();
        let (_, h) = projected_inverse(tm.theta(), &jt).unwrap();
        let x = vech(tm.theta()).unwrap();
        let step = 1e-5 * x.amax().max(1.0);
        for k in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += step;
            b[k] -= step;
            let f = |v: &DVector<f64>| {
                let t = ivech(v, VechShape::Symmetric).unwrap();
                vech_lower(&(jt.transpose() * (&jt * t * jt.transpose()).try_inverse().unwrap() * &jt))
            };
            let col = (f(&a) - f(&b)) / (2.0 * step);
            assert!((h.column(k) - col).amax() < 1e-6);
        }
    }

    #[test]
    fn portfolio_in_row_space() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, -0.1, 0.1, -0.1, 1.5]);
        let (tm, om) = setup(&[0.1, 0.3, -0.2], sigma);
        let spec = SubspaceSpec::new(&DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0])).unwrap();
        let est = subspace_theta(&tm, &spec, &om, 1.0).unwrap();
        let w = &est.portfolio.point;
        let j = spec.basis();
        let resid = w - j.transpose() * (j * w);
        assert!(resid.amax() < 1e-10);
    }
}
