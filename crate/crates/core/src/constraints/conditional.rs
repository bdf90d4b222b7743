use nalgebra::{DMatrix, DVector};

use crate::asymptotics::{theta_inverse_covariance, DistributionResult, OmegaEstimate};
use crate::error::{Error, Result};
use crate::kernels::SymIndex;
use crate::moments::{augment, sample_theta, AugmentedMoment, AugmentedRows, Layout};

/// How the quietude weights and features enter the augmented rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionalModel {
    /// Rows `[1, l x']`: weighted returns, constant Sharpe.
    ConstantSr,
    /// Rows `[l, l x']`: the mean scales with the weight.
    FloatingSr,
    /// Rows `[l f', l x']`: mean linear in the features.
    BiConditional,
}

/// Augmented rows of the model. Weights default to 1.
pub fn conditional_rows(
    returns: &DMatrix<f64>,
    features: Option<&DMatrix<f64>>,
    weights: Option<&DVector<f64>>,
    model: ConditionalModel,
) -> Result<AugmentedRows> {
    Ok(match model {
        ConditionalModel::ConstantSr => {
            if features.is_some() {
                return Err(Error::InvalidSpec("the constant model takes no features".into()));
            }
            let mut aug = augment(returns, None, weights)?;
            aug.rows.column_mut(0).fill(1.0);
            aug.layout = Layout::Unconditional;
            aug
        }
        ConditionalModel::FloatingSr => {
            if features.is_some() {
                return Err(Error::InvalidSpec("the floating model takes no features".into()));
            }
            let ones = DVector::from_element(returns.nrows(), 1.0);
            let mut aug = augment(returns, None, Some(weights.unwrap_or(&ones)))?;
            aug.layout = Layout::Conditional { f_dim: 1 };
            aug
        }
        ConditionalModel::BiConditional => {
            let f = features.ok_or_else(|| Error::InvalidSpec("the bi-conditional model needs features".into()))?;
            let ones = DVector::from_element(returns.nrows(), 1.0);
            augment(returns, Some(f), Some(weights.unwrap_or(&ones)))?
        }
    })
}

/// Second moment of the model's augmented rows. Weights default to 1.
pub fn conditional_theta(
    returns: &DMatrix<f64>,
    features: Option<&DMatrix<f64>>,
    weights: Option<&DVector<f64>>,
    model: ConditionalModel,
) -> Result<AugmentedMoment> {
    sample_theta(&conditional_rows(returns, features, weights, model)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    /// `Sigma^-1 B`, `p x f`.
    pub coefficient: DMatrix<f64>,
    /// Law of `vec(coefficient)`.
    pub distribution: DistributionResult,
}

/// The Markowitz coefficient `Sigma^-1 B` and its law, read from the
/// lower-left block of the inverse second moment.
pub fn markowitz_coefficient(tm: &AugmentedMoment, om: &OmegaEstimate) -> Result<CoefficientEstimate> {
    let f = tm.f_dim();
    let p = tm.n_assets();
    let full = theta_inverse_covariance(tm, om)?;
    let idx = SymIndex::new(tm.dim());
    let mut coords = Vec::with_capacity(p * f);
    let mut labels = Vec::with_capacity(p * f);
    for j in 0..f {
        for i in 0..p {
            coords.push(idx.vech_index(f + i, j));
            labels.push(format!("coef[{},{}]", i + 1, j + 1));
        }
    }
    let mut distribution = full.select(&coords).negated();
    distribution.labels = labels;
    let coefficient = DMatrix::from_column_slice(p, f, distribution.point.as_slice());
    Ok(CoefficientEstimate {
        coefficient,
        distribution,
    })
}
