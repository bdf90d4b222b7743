use nalgebra::{DMatrix, DVector};

use crate::asymptotics::{sandwich, vech_labels, DistributionResult, OmegaEstimate};
use crate::error::{Error, Result};
use crate::kernels::{
    chol, d_chol_vech, d_gram_vech, inverse, ivech, sym_inverse, symmetrize, vech_lower, SymIndex, VechShape,
};
use crate::moments::{AugmentedMoment, Layout};

/// How distance from the unconstrained Cholesky factor is measured.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Weighting {
    #[default]
    Identity,
    Custom(DMatrix<f64>),
    /// Inverse asymptotic variances of the factor entries. Entries with no
    /// sampling variation get a weight large enough to pin them.
    InverseOmegaDiagonal,
}

/// Linear equality `B vech(chol(Theta)) = b` on the Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyConstraint {
    matrix: DMatrix<f64>,
    target: DVector<f64>,
    weighting: Weighting,
}

impl CholeskyConstraint {
    /// `matrix` may have zero rows, meaning no restriction.
    pub fn new(matrix: DMatrix<f64>, target: DVector<f64>, weighting: Weighting) -> Result<Self> {
        if matrix.nrows() != target.len() {
            return Err(Error::LengthMismatch(format!(
                "{} constraint rows with {} targets",
                matrix.nrows(),
                target.len()
            )));
        }
        if SymIndex::from_vech_len(matrix.ncols()).is_none() {
            return Err(Error::BadLength(matrix.ncols()));
        }
        if matrix.nrows() > 0 {
            let sv = matrix.clone().singular_values();
            if matrix.nrows() > matrix.ncols() || !(sv.min() > 1e-10 * sv.max()) {
                return Err(Error::InvalidSpec("constraint matrix must have full row rank".into()));
            }
        }
        if let Weighting::Custom(w) = &weighting {
            if w.shape() != (matrix.ncols(), matrix.ncols()) {
                return Err(Error::ShapeMismatch(
                    "weighting matrix does not match the factor length".into(),
                ));
            }
            sym_inverse(w).map_err(|_| Error::SingularWeighting)?;
        }
        Ok(Self {
            matrix,
            target,
            weighting,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn weighting(&self) -> &Weighting {
        &self.weighting
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyEstimate {
    pub theta: AugmentedMoment,
    /// `vech` of the constrained factor.
    pub factor: DVector<f64>,
    /// Law of `vech` of the constrained second moment.
    pub distribution: DistributionResult,
}

fn weighting_inverse(cc: &CholeskyConstraint, d_chol: &DMatrix<f64>, om: &OmegaEstimate) -> Result<DMatrix<f64>> {
    let n = cc.matrix.ncols();
    match &cc.weighting {
        Weighting::Identity => Ok(DMatrix::identity(n, n)),
        Weighting::Custom(w) => sym_inverse(w).map_err(|_| Error::SingularWeighting),
        Weighting::InverseOmegaDiagonal => {
            let var = sandwich(d_chol, &om.omega).diagonal();
            let top = var.amax();
            if !(top > 0.0) {
                return Err(Error::SingularWeighting);
            }
            let floor = 1e-12 * top;
            Ok(DMatrix::from_diagonal(&var.map(|v| v.max(floor))))
        }
    }
}

/// Projects the Cholesky factor of the sample second moment onto the
/// constraint set in the weighted norm and rebuilds the second moment.
pub fn constrained_cholesky_estimate(
    tm: &AugmentedMoment,
    cc: &CholeskyConstraint,
    om: &OmegaEstimate,
) -> Result<CholeskyEstimate> {
    let q = tm.dim();
    let idx = SymIndex::new(q);
    if cc.matrix.ncols() != idx.vech_len() {
        return Err(Error::ShapeMismatch(format!(
            "constraint on {} factor entries for a {q}x{q} second moment",
            cc.matrix.ncols()
        )));
    }
    let factor = chol(tm.theta())?;
    let y = vech_lower(&factor);
    let d_chol = d_chol_vech(&factor)?;
    let w_inv = weighting_inverse(cc, &d_chol, om)?;
    let n = idx.vech_len();
    let (z, proj) = if cc.matrix.nrows() == 0 {
        (y.clone(), DMatrix::identity(n, n))
    } else {
        let bm = &cc.matrix;
        let inner = inverse(&(bm * &w_inv * bm.transpose())).map_err(|_| Error::SingularWeighting)?;
        let p = &w_inv * bm.transpose() * inner;
        let proj = DMatrix::identity(n, n) - &p * bm;
        let z = &p * &cc.target + &proj * &y;
        // one refinement step against the constraint residual
        let z = &z + &p * (&cc.target - bm * &z);
        (z, proj)
    };
    let constrained = ivech(&z, VechShape::LowerTriangular)?;
    let mut theta_c = symmetrize(&(&constrained * constrained.transpose()));
    // a constraint pinning the unit corner holds only up to round-off
    if tm.layout() == Layout::Unconditional && (theta_c[(0, 0)] - 1.0).abs() <= 1e-9 {
        theta_c[(0, 0)] = 1.0;
    }
    let h = d_gram_vech(&constrained) * proj * d_chol;
    let theta = AugmentedMoment::new(theta_c, tm.n_obs(), tm.layout())?;
    Ok(CholeskyEstimate {
        distribution: DistributionResult {
            point: vech_lower(theta.theta()),
            covariance: sandwich(&h, &om.omega),
            n_obs: tm.n_obs(),
            labels: vech_labels("theta_c", q),
        },
        theta,
        factor: z,
    })
}
