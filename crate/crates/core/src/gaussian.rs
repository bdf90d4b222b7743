//! Gaussian returns: closed-form covariance of the second moment, Fisher
//! information, and the likelihood-ratio test of trace constraints on the
//! inverse second moment.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{sandwich, theta_inverse_covariance, OmegaEstimate, OmegaEstimator};
use crate::error::{Error, Result};
use crate::kernels::{
    checked_symmetric, duplication_matrix, elimination_matrix, inverse, kron, remove_first, sym_inverse, symmetrize,
    SymIndex,
};
use crate::moments::{AugmentedMoment, Layout};

/// `U H' D'(Theta kron Theta)D H U'` with `H = L(Theta^-1 kron Theta^-1)D`:
/// the Hessian sandwich shared by the Fisher information and the closed-form
/// covariance.
fn fisher_kernel(tm: &AugmentedMoment) -> Result<DMatrix<f64>> {
    if tm.layout() != Layout::Unconditional {
        return Err(Error::WrongLayout(
            "Gaussian closed forms need the unconditional layout",
        ));
    }
    let q = tm.dim();
    let theta = tm.theta();
    let inv = tm.inverse()?;
    let l = elimination_matrix(q).data;
    let d = duplication_matrix(q).data;
    let u = remove_first(SymIndex::new(q).vech_len()).data;
    let h = &l * kron(&inv, &inv) * &d;
    let s = d.transpose() * kron(theta, theta) * &d;
    Ok(symmetrize(&(&u * h.transpose() * s * h * u.transpose())))
}

/// Fisher information of the non-constant coordinates of `vech(Theta)`
/// for `n_obs` observations.
pub fn fisher_information(tm: &AugmentedMoment) -> Result<DMatrix<f64>> {
    Ok(fisher_kernel(tm)? * (tm.n_obs() as f64 / 2.0))
}

/// Covariance of `vech(x x')` when returns are Gaussian: zero first row and
/// column, `2 [U H' D'(Theta kron Theta)D H U']^-1` elsewhere.
pub fn gaussian_omega(tm: &AugmentedMoment) -> Result<OmegaEstimate> {
    let kernel = fisher_kernel(tm)?;
    let block = sym_inverse(&kernel).map_err(|_| Error::SingularTheta(0.0))? * 2.0;
    let m = block.nrows() + 1;
    let mut omega = DMatrix::zeros(m, m);
    omega.view_mut((1, 1), (m - 1, m - 1)).copy_from(&block);
    Ok(OmegaEstimate {
        omega,
        estimator: OmegaEstimator::GaussianClosedForm,
        n_obs: tm.n_obs(),
    })
}

/// Conjectured Gaussian covariance of `vech(Theta^-1)`:
/// `2 (D'(Theta kron Theta)D)^-1 - 2 e1 e1'`.
pub fn conjecture_itheta_cov(tm: &AugmentedMoment) -> Result<DMatrix<f64>> {
    let q = tm.dim();
    let d = duplication_matrix(q).data;
    let s = d.transpose() * kron(tm.theta(), tm.theta()) * &d;
    let mut out = sym_inverse(&s).map_err(|_| Error::SingularTheta(0.0))? * 2.0;
    out[(0, 0)] -= 2.0;
    Ok(out)
}

/// Largest absolute gap between the conjectured covariance and the one
/// propagated from [`gaussian_omega`]. Logged; never used as an estimate.
pub fn conjecture_discrepancy(tm: &AugmentedMoment) -> Result<f64> {
    let om = gaussian_omega(tm)?;
    let proven = theta_inverse_covariance(tm, &om)?.covariance;
    let gap = (conjecture_itheta_cov(tm)? - proven).amax();
    log::info!("conjectured vs propagated covariance differ by {gap:.3e}");
    Ok(gap)
}

/// Linear constraints `tr(A_i Theta^-1) = a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConstraintSet {
    constraints: Vec<(DMatrix<f64>, f64)>,
}

impl TraceConstraintSet {
    /// Each `A_i` is replaced by `(A_i + A_i') / 2`.
    pub fn new(constraints: Vec<(DMatrix<f64>, f64)>) -> Result<Self> {
        let dim = constraints.first().map(|(a, _)| a.nrows());
        let mut out = Vec::with_capacity(constraints.len());
        for (a, v) in constraints {
            if !a.is_square() || Some(a.nrows()) != dim {
                return Err(Error::ShapeMismatch("constraint matrices differ in shape".into()));
            }
            if !v.is_finite() || a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidSpec("non-finite constraint".into()));
            }
            out.push((symmetrize(&a), v));
        }
        Ok(Self { constraints: out })
    }

    /// Builds `A_i` from its `vech` entries.
    pub fn from_vech(rows: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        let mats = rows
            .into_iter()
            .map(|(v, a)| crate::kernels::ivech(&v, crate::kernels::VechShape::Symmetric).map(|m| (m, a)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(DMatrix<f64>, f64)> {
        self.constraints.iter()
    }

    /// All matrices and targets multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            constraints: self.constraints.iter().map(|(a, v)| (a * c, v * c)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtOptions {
    pub lambda0: Option<DVector<f64>>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LrtOptions {
    fn default() -> Self {
        Self {
            lambda0: None,
            max_iter: 50,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtSolution {
    pub lambda: DVector<f64>,
    /// Constrained maximum-likelihood second moment `Theta - sum lambda_i A_i`.
    pub theta0: DMatrix<f64>,
    /// `-2 log` likelihood ratio.
    pub stat: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `log det Theta0(lambda) + sum lambda_i a_i` after each accepted step,
    /// starting from the initial multipliers.
    pub dual_path: Vec<f64>,
}

const MAX_HALVINGS: usize = 20;

fn constrained_theta(theta: &DMatrix<f64>, cs: &TraceConstraintSet, lambda: &DVector<f64>) -> DMatrix<f64> {
    let mut out = theta.clone();
    for (i, (a, _)) in cs.iter().enumerate() {
        out -= a * lambda[i];
    }
    symmetrize(&out)
}

/// Log-determinant when positive definite.
fn logdet_pd(m: &DMatrix<f64>) -> Option<f64> {
    let ch = m.clone().cholesky()?;
    let l = ch.l();
    let ld: f64 = (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    ld.is_finite().then_some(ld)
}

fn dual(theta0: &DMatrix<f64>, cs: &TraceConstraintSet, lambda: &DVector<f64>) -> Option<f64> {
    let ld = logdet_pd(theta0)?;
    Some(ld + cs.iter().enumerate().map(|(i, (_, a))| lambda[i] * a).sum::<f64>())
}

/// Newton iteration for the multipliers of the constrained maximum
/// likelihood second moment, with step halving to stay positive definite.
///
/// Each accepted step must not decrease the concave dual
/// `log det(Theta - sum lambda_i A_i) + sum lambda_i a_i`, whose stationary
/// point is the constrained estimate.
pub fn lrt_solve(tm: &AugmentedMoment, cs: &TraceConstraintSet, opts: &LrtOptions) -> Result<LrtSolution> {
    let theta = tm.theta();
    let q = tm.dim();
    let m = cs.len();
    if cs.iter().any(|(a, _)| a.nrows() != q) {
        return Err(Error::ShapeMismatch(format!("constraints must be {q}x{q}")));
    }
    let mut lambda = opts.lambda0.clone().unwrap_or_else(|| DVector::zeros(m));
    if lambda.len() != m {
        return Err(Error::ShapeMismatch("initial multipliers have the wrong length".into()));
    }
    let mut theta0 = constrained_theta(theta, cs, &lambda);
    let mut current = dual(&theta0, cs, &lambda).ok_or(Error::LostPositiveDefiniteness)?;
    let mut dual_path = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    let mut residual;
    loop {
        let inv = sym_inverse(&theta0).map_err(|_| Error::LostPositiveDefiniteness)?;
        let products: Vec<DMatrix<f64>> = cs.iter().map(|(a, _)| a * &inv).collect();
        let eps = DVector::from_fn(m, |i, _| products[i].trace() - cs.constraints[i].1);
        residual = eps.amax();
        if residual < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        // J_il = tr(A_i Theta0^-1 A_l Theta0^-1)
        let jac = DMatrix::from_fn(m, m, |i, l| (&products[i] * &products[l]).trace());
        let step = inverse(&jac).map_err(|_| Error::SingularJacobian)? * &eps;
        let mut scale = 1.0;
        let mut accepted = None;
        let mut any_pd = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &lambda - &step * scale;
            let cand_theta = constrained_theta(theta, cs, &cand);
            if let Some(d) = dual(&cand_theta, cs, &cand) {
                any_pd = true;
                if d >= current - 1e-12 * (1.0 + current.abs()) {
                    accepted = Some((cand, cand_theta, d));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((l, t, d)) => {
                lambda = l;
                theta0 = t;
                current = d;
                dual_path.push(d);
                iterations += 1;
            }
            None if !any_pd => return Err(Error::LostPositiveDefiniteness),
            None => break,
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, residual });
    }
    let stat = lrt_statistic(theta, &theta0, tm.n_obs())?;
    Ok(LrtSolution {
        lambda,
        theta0,
        stat,
        dof: m,
        iterations,
        converged,
        dual_path,
    })
}

/// `n (log det(Theta0 Theta^-1) + tr(Theta0^-1 Theta) - dim)`.
pub fn lrt_statistic(theta: &DMatrix<f64>, theta0: &DMatrix<f64>, n_obs: usize) -> Result<f64> {
    let q = theta.nrows() as f64;
    let ld0 = logdet_pd(theta0).ok_or(Error::LostPositiveDefiniteness)?;
    let ld = logdet_pd(theta).ok_or(Error::SingularTheta(0.0))?;
    let inv0 = sym_inverse(theta0)?;
    Ok(n_obs as f64 * (ld0 - ld + (inv0 * theta).trace() - q))
}

/// Upper-tail chi-square probability; slightly negative statistics count as zero.
pub fn lrt_pvalue(stat: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidSpec(
            "chi-square needs at least one degree of freedom".into(),
        ));
    }
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok(chi.sf(stat.max(0.0)))
}

/// Negative log-likelihood of a candidate second moment given the sample one,
/// up to constants: `(n/2)(log det Theta0 + tr(Theta0^-1 Theta))`.
pub fn negative_log_likelihood(theta: &DMatrix<f64>, theta0: &DMatrix<f64>, n_obs: usize) -> Result<f64> {
    let theta0 = checked_symmetric(theta0)?;
    let ld = logdet_pd(&theta0).ok_or(Error::LostPositiveDefiniteness)?;
    let inv = sym_inverse(&theta0)?;
    Ok(0.5 * n_obs as f64 * (ld + (inv * theta).trace()))
}

/// Covariance of `vech(Theta^-1)` implied by [`gaussian_omega`].
pub fn gaussian_itheta_cov(tm: &AugmentedMoment) -> Result<DMatrix<f64>> {
    let om = gaussian_omega(tm)?;
    let h = crate::kernels::d_inv_vech(tm.theta())?;
    Ok(sandwich(&h, &om.omega))
}
