//! Constrained, hedged and conditional portfolio estimators.

mod cholesky;
mod conditional;
mod flatten;
mod hedge;
mod rank;
mod subspace;

pub use cholesky::{constrained_cholesky_estimate, CholeskyConstraint, CholeskyEstimate, Weighting};
pub use conditional::{
    conditional_rows, conditional_theta, markowitz_coefficient, CoefficientEstimate, ConditionalModel,
};
pub use flatten::{flatten_subspace, flatten_volatility, flattened_portfolio, FlattenedPanel, FlattenedPortfolio};
pub use hedge::{hedged_conditional_delta, hedged_delta_theta, HedgeSpec, HedgedEstimate};
pub use rank::{reduced_rank_coefficient, reduced_rank_jacobian, ReducedRankEstimate};
pub use subspace::{subspace_theta, SubspaceEstimate, SubspaceSpec};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::TraceConstraintSet;
use crate::kernels::SymIndex;
use crate::mglh::MglhSpec;

/// Any of the supported restrictions on the second moment.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSpec {
    Trace(TraceConstraintSet),
    Cholesky(CholeskyConstraint),
    Subspace(SubspaceSpec),
    Hedge(HedgeSpec),
    Mglh(MglhSpec),
}

/// Orthonormal rows spanning the same space as the rows of `j`.
pub fn orthonormalize_rows(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (k, p) = j.shape();
    if k == 0 || k > p {
        return Err(Error::SingularProjection);
    }
    let qr = j.transpose().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..k {
        if !(r[(i, i)].abs() > 1e-10 * scale) {
            return Err(Error::SingularProjection);
        }
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q.transpose())
}

/// `blockdiag(I_corner, m)`.
pub fn augment_block(corner: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(corner + r, corner + c);
    for i in 0..corner {
        out[(i, i)] = 1.0;
    }
    out.view_mut((corner, corner), (r, c)).copy_from(m);
    out
}

/// Weights `-elems * R / sqrt(corner)` read from an inverse-type matrix, and
/// their Jacobian with respect to its `vech`. Returns zero weights when the
/// corner (a squared Sharpe) vanishes.
pub(crate) fn budgeted_weights(
    inv_like: &DMatrix<f64>,
    corner_offset: f64,
    risk_budget: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = inv_like.nrows();
    let p = q - 1;
    let m = SymIndex::new(q).vech_len();
    let snr_sq = inv_like[(0, 0)] - corner_offset;
    let elems = inv_like.view((1, 0), (p, 1)).into_owned();
    let mut jac = DMatrix::zeros(p, m);
    if snr_sq <= 1e-12 {
        if snr_sq < -1e-10 {
            return Err(Error::ZeroSharpe);
        }
        return Ok((DVector::zeros(p), jac));
    }
    let c = risk_budget / snr_sq.sqrt();
    let weights = DVector::from_column_slice((elems * -c).as_slice());
    jac.set_column(0, &(-&weights / (2.0 * snr_sq)));
    for i in 0..p {
        jac[(i, i + 1)] = -c;
    }
    Ok((weights, jac))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_rows() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 2.0, 1.0]);
        let q = orthonormalize_rows(&j).unwrap();
        assert!((&q * q.transpose() - DMatrix::identity(2, 2)).amax() < 1e-12);
        // same row space: projecting the original rows changes nothing
        let proj = q.transpose() * &q;
        assert!((&j * &proj - &j).amax() < 1e-12);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(orthonormalize_rows(&dup), Err(Error::SingularProjection)));
    }

    #[test]
    fn block_augmentation() {
        let g = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let out = augment_block(1, &g);
        assert_eq!(out, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 4.0]));
    }
}
