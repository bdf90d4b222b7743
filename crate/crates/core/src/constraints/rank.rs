use nalgebra::{DMatrix, DVector};

use crate::asymptotics::{sandwich, DistributionResult, OmegaEstimate};
use crate::error::{Error, Result};
use crate::kernels::{central_difference, eigen_sym, ivech, pinv_rank, vech, VechShape, FD_STEP};
use crate::moments::AugmentedMoment;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRankEstimate {
    pub rank: usize,
    /// `p x f` coefficient from the rank-truncated pseudoinverse.
    pub coefficient: DMatrix<f64>,
    /// Law of `vec(coefficient)`, propagated through a numeric Jacobian.
    pub distribution: DistributionResult,
}

fn coefficient_of(theta: &DMatrix<f64>, f: usize, rank: usize) -> Result<DMatrix<f64>> {
    let (vals, _) = eigen_sym(theta)?;
    if rank < vals.len() {
        let gap = vals[rank - 1] - vals[rank];
        if !(gap > 1e-10 * vals[0]) {
            return Err(Error::EigGapTooSmall { rank, gap });
        }
    }
    let p = theta.nrows() - f;
    Ok(-pinv_rank(theta, rank)?.view((f, 0), (p, f)).into_owned())
}

/// Central-difference Jacobian of `vech(Theta) -> vec(coefficient)`.
pub fn reduced_rank_jacobian(tm: &AugmentedMoment, rank: usize, step: f64) -> Result<DMatrix<f64>> {
    let f = tm.f_dim();
    let map = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let t = ivech(v, VechShape::Symmetric)?;
        let c = coefficient_of(&t, f, rank)?;
        Ok(DVector::from_column_slice(c.as_slice()))
    };
    central_difference(map, &vech(tm.theta())?, step)
}

/// Markowitz coefficient from the best rank-`rank` approximation of the
/// second moment.
pub fn reduced_rank_coefficient(tm: &AugmentedMoment, rank: usize, om: &OmegaEstimate) -> Result<ReducedRankEstimate> {
    let f = tm.f_dim();
    let p = tm.n_assets();
    if rank == 0 || rank > tm.dim() {
        return Err(Error::RankDeficient { requested: rank });
    }
    let coefficient = coefficient_of(tm.theta(), f, rank)?;
    let jac = reduced_rank_jacobian(tm, rank, FD_STEP)?;
    let mut labels = Vec::with_capacity(p * f);
    for j in 0..f {
        for i in 0..p {
            labels.push(format!("coef[{},{}]", i + 1, j + 1));
        }
    }
    Ok(ReducedRankEstimate {
        rank,
        distribution: DistributionResult {
            point: DVector::from_column_slice(coefficient.as_slice()),
            covariance: sandwich(&jac, &om.omega),
            n_obs: tm.n_obs(),
            labels,
        },
        coefficient,
    })
}
