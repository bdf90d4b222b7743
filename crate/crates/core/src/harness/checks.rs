//! Deterministic numerical self-checks: closed forms, finite-difference
//! derivative checks, MGLH route agreement and constraint satisfaction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::asymptotics::{omega_vanilla, theta_inverse_covariance};
use crate::constraints::{
    constrained_cholesky_estimate, hedged_delta_theta, subspace_theta, CholeskyConstraint, HedgeSpec, SubspaceSpec,
    Weighting,
};
use crate::error::Result;
use crate::gaussian::{conjecture_itheta_cov, gaussian_omega};
use crate::kernels::{
    central_difference, chol, d_chol_vech, d_det, d_eig, d_gram_vech, d_inv, d_inv_vech, d_outer_gram, d_product,
    d_qform_inv, d_trace_prod, duplication_matrix, eigen_sym, inverse, ivech, psd_sqrt, symmetrize, unvec, vec, vech,
    vech_lower, VechShape, FD_STEP,
};
use crate::mglh::{mglh_g1g2, mglh_he, mglh_statistics, MglhSpec};
use crate::moments::{augment, sample_theta, AugmentedMoment, Layout};

/// One pass/fail line: passes when `|observed - target| <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, observed: f64, target: f64, tolerance: f64) -> Self {
        let passed = observed.is_finite() && (observed - target).abs() <= tolerance;
        Self {
            name: name.into(),
            observed,
            target,
            tolerance,
            passed,
        }
    }

    /// A failed line for a check that could not be computed.
    pub fn failed(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed: f64::NAN,
            target: 0.0,
            tolerance,
            passed: false,
        }
    }

    fn from_result(name: &str, r: Result<f64>, tolerance: f64) -> Self {
        match r {
            Ok(v) => Self::new(name, v, 0.0, tolerance),
            Err(e) => {
                log::warn!("{name}: {e}");
                Self::failed(name, tolerance)
            }
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}\t{:.10e}\t{:.10e}\t{:.3e}\t{}",
            self.name,
            self.observed,
            self.target,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Means and standard deviations of the scalar oracle grid.
pub const SCALAR_GRID: [f64; 3] = [0.5, 1.0, 2.0];

fn scalar_moment(mu: f64, sd: f64) -> Result<AugmentedMoment> {
    AugmentedMoment::from_mean_cov(
        &DVector::from_element(1, mu),
        &DMatrix::from_element(1, 1, sd * sd),
        100,
    )
}

/// Closed-form Gaussian covariance of `vech(Theta^-1)` for one asset with
/// mean `mu` and standard deviation `sd`.
pub fn scalar_itheta_cov(mu: f64, sd: f64) -> DMatrix<f64> {
    let s4 = sd.powi(4);
    let (m2, s2) = (mu * mu, sd * sd);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            2.0 * m2 * (m2 + 2.0 * s2) / s4,
            -2.0 * mu * (m2 + s2) / s4,
            2.0 * m2 / s4,
            -2.0 * mu * (m2 + s2) / s4,
            (2.0 * m2 + s2) / s4,
            -2.0 * mu / s4,
            2.0 * m2 / s4,
            -2.0 * mu / s4,
            2.0 / s4,
        ],
    )
}

/// Gaussian covariance of `(x, x^2)` for one asset.
pub fn scalar_omega_block(mu: f64, sd: f64) -> DMatrix<f64> {
    let s2 = sd * sd;
    DMatrix::from_row_slice(
        2,
        2,
        &[s2, 2.0 * mu * s2, 2.0 * mu * s2, 4.0 * mu * mu * s2 + 2.0 * s2 * s2],
    )
}

/// Largest gap over the grid between the closed form and both the
/// propagated and the conjectured covariance of `vech(Theta^-1)`.
pub fn scalar_itheta_error() -> Result<f64> {
    let mut worst = 0.0_f64;
    for &mu in &SCALAR_GRID {
        for &sd in &SCALAR_GRID {
            let tm = scalar_moment(mu, sd)?;
            let want = scalar_itheta_cov(mu, sd);
            let propagated = theta_inverse_covariance(&tm, &gaussian_omega(&tm)?)?.covariance;
            let conjectured = conjecture_itheta_cov(&tm)?;
            worst = worst.max((propagated - &want).amax()).max((conjectured - &want).amax());
        }
    }
    Ok(worst)
}

/// Largest gap over the grid between the Gaussian Omega block and its
/// closed form.
pub fn scalar_omega_error() -> Result<f64> {
    let mut worst = 0.0_f64;
    for &mu in &SCALAR_GRID {
        for &sd in &SCALAR_GRID {
            let om = gaussian_omega(&scalar_moment(mu, sd)?)?.omega;
            let block = om.view((1, 1), (2, 2)).into_owned();
            // the constant coordinate carries no variance
            let edge = om.row(0).amax().max(om.column(0).amax());
            worst = worst.max((block - scalar_omega_block(mu, sd)).amax()).max(edge);
        }
    }
    Ok(worst)
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = uniform_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    uniform_matrix(rng, n, n) + DMatrix::identity(n, n) * 2.0
}

/// Error of an analytic Jacobian against central differences, scaled by
/// the magnitude of the Jacobian when that exceeds one.
fn jacobian_gap<F>(analytic: &DMatrix<f64>, f: F, x: &DVector<f64>) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let fd = central_difference(f, x, FD_STEP)?;
    Ok((analytic - &fd).amax() / fd.amax().max(1.0))
}

/// Instances per derivative rule in [`derivative_checks`].
pub const DERIVATIVE_INSTANCES: usize = 20;
/// Tolerance for the derivative rules.
pub const DERIVATIVE_TOL: f64 = 1e-6;

type Rule = fn(&mut ChaCha8Rng, usize) -> Result<f64>;

fn rule_qform_inv(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let m = 1 + rng.random_range(0..n);
    let j = uniform_matrix(rng, m, n) + DMatrix::identity(m, n);
    let x = random_spd(rng, n);
    let analytic = d_qform_inv(&j, &x)?;
    jacobian_gap(
        &analytic,
        |v| Ok(vec(&inverse(&(&j * unvec(v, n)? * j.transpose()))?)),
        &vec(&x),
    )
}

fn rule_inv(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let a = well_conditioned(rng, n);
    jacobian_gap(&d_inv(&a)?, |v| Ok(vec(&inverse(&unvec(v, n)?)?)), &vec(&a))
}

fn rule_inv_vech(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let a = random_spd(rng, n);
    jacobian_gap(
        &d_inv_vech(&a)?,
        |v| vech(&symmetrize(&inverse(&ivech(v, VechShape::Symmetric)?)?)),
        &vech(&a)?,
    )
}

fn rule_chol(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let a = random_spd(rng, n);
    let y = chol(&a)?;
    jacobian_gap(
        &d_chol_vech(&y)?,
        |v| Ok(vech_lower(&chol(&ivech(v, VechShape::Symmetric)?)?)),
        &vech(&a)?,
    )
}

fn rule_gram(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let y = chol(&random_spd(rng, n))?;
    jacobian_gap(
        &d_gram_vech(&y),
        |v| {
            let l = ivech(v, VechShape::LowerTriangular)?;
            Ok(vech_lower(&(&l * l.transpose())))
        },
        &vech_lower(&y),
    )
}

fn rule_product(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let (m, k) = (1 + rng.random_range(0..n), n);
    let x = uniform_matrix(rng, m, k);
    let y = uniform_matrix(rng, k, n);
    let (nx, ny) = (m * k, k * n);
    let mut dx = DMatrix::zeros(nx, nx + ny);
    dx.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let mut dy = DMatrix::zeros(ny, nx + ny);
    dy.view_mut((0, nx), (ny, ny)).fill_with_identity();
    let analytic = d_product(&x, &y, &dx, &dy)?;
    let mut z = DVector::zeros(nx + ny);
    z.rows_mut(0, nx).copy_from(&vec(&x));
    z.rows_mut(nx, ny).copy_from(&vec(&y));
    jacobian_gap(
        &analytic,
        |v| {
            let xv = unvec(&v.rows(0, nx).into_owned(), m)?;
            let yv = unvec(&v.rows(nx, ny).into_owned(), k)?;
            Ok(vec(&(xv * yv)))
        },
        &z,
    )
}

fn rule_outer_gram(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let k = 1 + rng.random_range(0..n);
    let x = uniform_matrix(rng, n, k);
    let analytic = d_outer_gram(&x, &DMatrix::identity(n * k, n * k))?;
    jacobian_gap(
        &analytic,
        |v| {
            let xv = unvec(v, n)?;
            Ok(vec(&(&xv * xv.transpose())))
        },
        &vec(&x),
    )
}

fn rule_trace_prod(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let k = 1 + rng.random_range(0..n);
    let x = uniform_matrix(rng, n, k);
    let y = uniform_matrix(rng, k, n);
    let nk = n * k;
    let mut dx = DMatrix::zeros(nk, 2 * nk);
    dx.view_mut((0, 0), (nk, nk)).fill_with_identity();
    let mut dy = DMatrix::zeros(nk, 2 * nk);
    dy.view_mut((0, nk), (nk, nk)).fill_with_identity();
    let analytic = d_trace_prod(&x, &y, &dx, &dy)?;
    let mut z = DVector::zeros(2 * nk);
    z.rows_mut(0, nk).copy_from(&vec(&x));
    z.rows_mut(nk, nk).copy_from(&vec(&y));
    jacobian_gap(
        &analytic,
        |v| {
            let xv = unvec(&v.rows(0, nk).into_owned(), n)?;
            let yv = unvec(&v.rows(nk, nk).into_owned(), k)?;
            Ok(DVector::from_element(1, (xv * yv).trace()))
        },
        &z,
    )
}

fn rule_det(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let x = well_conditioned(rng, n);
    let analytic = d_det(&x, &DMatrix::identity(n * n, n * n))?;
    jacobian_gap(
        &analytic,
        |v| Ok(DVector::from_element(1, unvec(v, n)?.determinant())),
        &vec(&x),
    )
}

fn rule_eig(rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let x = symmetrize(&uniform_matrix(rng, n, n));
    let j = rng.random_range(0..n);
    let analytic = d_eig(&x, j, &duplication_matrix(n).data)?;
    jacobian_gap(
        &analytic,
        |v| {
            Ok(DVector::from_element(
                1,
                eigen_sym(&ivech(v, VechShape::Symmetric)?)?.0[j],
            ))
        },
        &vech(&x)?,
    )
}

const RULES: [(&str, Rule); 10] = [
    ("derivative/quadratic_form_inverse", rule_qform_inv),
    ("derivative/inverse", rule_inv),
    ("derivative/symmetric_inverse_vech", rule_inv_vech),
    ("derivative/cholesky_vech", rule_chol),
    ("derivative/gram_vech", rule_gram),
    ("derivative/product", rule_product),
    ("derivative/outer_gram", rule_outer_gram),
    ("derivative/trace_product", rule_trace_prod),
    ("derivative/determinant", rule_det),
    ("derivative/eigenvalue", rule_eig),
];

/// Every kernel derivative rule against central differences over
/// [`DERIVATIVE_INSTANCES`] random instances of sizes 1 to 4.
pub fn derivative_checks(seed: u64) -> Vec<Check> {
    RULES
        .iter()
        .enumerate()
        .map(|(r, (name, rule))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let worst = (0..DERIVATIVE_INSTANCES).try_fold(0.0_f64, |acc, i| Ok(acc.max(rule(&mut rng, 1 + i % 4)?)));
            Check::from_result(name, worst, DERIVATIVE_TOL)
        })
        .collect()
}

/// Random well-conditioned MGLH problem.
fn mglh_case(rng: &mut ChaCha8Rng) -> Result<(AugmentedMoment, MglhSpec)> {
    let f = rng.random_range(1..=3);
    let p = rng.random_range(1..=4);
    let a = rng.random_range(1..=p);
    let c = rng.random_range(1..=f);
    let q = f + p;
    let x = normal_matrix(rng, q, q);
    let theta = &x * x.transpose() + DMatrix::identity(q, q);
    let tm = AugmentedMoment::new(theta, 200, Layout::Conditional { f_dim: f })?;
    let spec = MglhSpec::new(
        normal_matrix(rng, a, p) * 0.5 + DMatrix::identity(a, p),
        normal_matrix(rng, f, c) * 0.5 + DMatrix::identity(f, c),
        normal_matrix(rng, a, c) * 0.3,
    )?;
    Ok((tm, spec))
}

fn descending_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(eigen_sym(&symmetrize(m))?.0.iter().copied().collect())
}

/// Eigenvalues of `G1 G2` against `1 +` those of `E^-1 H`, padded with ones
/// where one side has more. The gap is relative to the largest eigenvalue
/// when that exceeds one.
fn mglh_route_gap(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<f64> {
    let (h, e) = mglh_he(tm, spec)?;
    let (g1, g2) = mglh_g1g2(tm, spec)?;
    let root = psd_sqrt(&g1)?;
    let mut small = descending_eigenvalues(&(&root * &g2 * &root))?;
    let e_root_inv = psd_sqrt(&inverse(&e)?)?;
    let mut big: Vec<f64> = descending_eigenvalues(&(&e_root_inv * &h * &e_root_inv))?
        .into_iter()
        .map(|l| 1.0 + l)
        .collect();
    let n = small.len().max(big.len());
    small.resize(n, 1.0);
    big.resize(n, 1.0);
    let scale = small[0].max(big[0]).max(1.0);
    Ok(small.iter().zip(&big).map(|(s, b)| (s - b).abs()).fold(0.0, f64::max) / scale)
}

/// Statistics under a hypothesis that holds exactly in sample, against
/// `(0, a, 1, 0)`.
fn mglh_null_gap(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<f64> {
    let (_, b, _) = tm.regression_blocks()?;
    let t = spec.a() * b * spec.c();
    let null = MglhSpec::new(spec.a().clone(), spec.c().clone(), t)?;
    let r = mglh_statistics(tm, &null)?;
    let want = [0.0, spec.n_rows() as f64, 1.0, 0.0];
    Ok(r.values()
        .iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max))
}

pub const MGLH_INSTANCES: usize = 50;
pub const MGLH_TOL: f64 = 1e-10;

/// Route agreement and exact-null values over [`MGLH_INSTANCES`] problems.
pub fn mglh_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Result<Vec<_>> = (0..MGLH_INSTANCES).map(|_| mglh_case(&mut rng)).collect();
    let worst = |gap: fn(&AugmentedMoment, &MglhSpec) -> Result<f64>| -> Result<f64> {
        let cases = cases.as_ref().map_err(|e| crate::Error::InvalidSpec(e.to_string()))?;
        cases
            .iter()
            .try_fold(0.0_f64, |acc, (tm, spec)| Ok(acc.max(gap(tm, spec)?)))
    };
    let route = worst(mglh_route_gap);
    let null = worst(mglh_null_gap);
    vec![
        Check::from_result("mglh/eigenvalue_routes", route, MGLH_TOL),
        Check::from_result("mglh/exact_null", null, MGLH_TOL),
    ]
}

pub const CONSTRAINT_INSTANCES: usize = 50;
pub const HEDGE_TOL: f64 = 1e-12;
pub const SUBSPACE_TOL: f64 = 1e-10;
pub const CHOLESKY_TOL: f64 = 1e-10;

/// Sample second moment of Gaussian returns with a random mean and a
/// random covariance `(A A' + p I) / 2p`, whose condition number stays
/// small enough for absolute tolerances near round-off to be meaningful.
fn random_sample(rng: &mut ChaCha8Rng, p: usize, t: usize) -> Result<(AugmentedMoment, crate::moments::AugmentedRows)> {
    let a = normal_matrix(rng, p, p);
    let cov = (&a * a.transpose() + DMatrix::identity(p, p) * p as f64) / (2.0 * p as f64);
    let mix = chol(&cov)?.transpose();
    let mu = DVector::<f64>::from_fn(p, |_, _| 0.2 * Distribution::<f64>::sample(&StandardNormal, rng));
    let z = normal_matrix(rng, t, p);
    let x = DMatrix::from_fn(t, p, |i, j| mu[j] + (z.row(i) * mix.column(j))[0]);
    let aug = augment(&x, None, None)?;
    Ok((sample_theta(&aug)?, aug))
}

fn hedge_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let p = rng.random_range(2..=5);
    let k = rng.random_range(1..p);
    let (tm, aug) = random_sample(rng, p, 200)?;
    let g = normal_matrix(rng, k, p);
    let om = omega_vanilla(&aug)?;
    let est = hedged_delta_theta(&tm, &HedgeSpec::new(&g, 1)?, &om, 1.0)?;
    let w = est.portfolio.expect("unconditional layout has a portfolio").point;
    let (_, sigma) = tm.mean_cov()?;
    Ok((&g * sigma * w).amax())
}

fn subspace_gap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let p = rng.random_range(2..=5);
    let k = rng.random_range(1..p);
    let (tm, aug) = random_sample(rng, p, 200)?;
    let j = normal_matrix(rng, k, p);
    let om = omega_vanilla(&aug)?;
    let w = subspace_theta(&tm, &SubspaceSpec::new(&j)?, &om, 1.0)?.portfolio.point;
    // residual after projecting onto the row space of the raw basket matrix
    let proj = j.transpose() * inverse(&(&j * j.transpose()))? * &j;
    Ok((&w - proj * &w).amax())
}

fn cholesky_gap(rng: &mut ChaCha8Rng, weighting: Weighting) -> Result<f64> {
    let p = rng.random_range(1..=4);
    let (tm, aug) = random_sample(rng, p, 200)?;
    let q = p + 1;
    let n = q * (q + 1) / 2;
    let r = rng.random_range(1..=(n - 1).min(3));
    // the first row pins the unit corner so the result stays unconditional
    let mut b = normal_matrix(rng, r + 1, n);
    b.row_mut(0).fill(0.0);
    b[(0, 0)] = 1.0;
    let factor = vech_lower(&chol(tm.theta())?);
    let mut target = &b * factor;
    for k in 1..=r {
        target[k] += 0.01 * Distribution::<f64>::sample(&StandardNormal, rng);
    }
    let om = omega_vanilla(&aug)?;
    let est = constrained_cholesky_estimate(
        &tm,
        &CholeskyConstraint::new(b.clone(), target.clone(), weighting)?,
        &om,
    )?;
    Ok((b * est.factor - target).amax())
}

/// Hedge, subspace and Cholesky constraints hold on their estimates over
/// [`CONSTRAINT_INSTANCES`] random problems each.
pub fn constraint_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = |rng: &mut ChaCha8Rng, f: &dyn Fn(&mut ChaCha8Rng, usize) -> Result<f64>| {
        (0..CONSTRAINT_INSTANCES).try_fold(0.0_f64, |acc, i| Ok(acc.max(f(rng, i)?)))
    };
    let hedge = worst(&mut rng, &|r, _| hedge_gap(r));
    let subspace = worst(&mut rng, &|r, _| subspace_gap(r));
    let cholesky = worst(&mut rng, &|r, i| {
        let w = if i % 2 == 0 {
            Weighting::Identity
        } else {
            Weighting::InverseOmegaDiagonal
        };
        cholesky_gap(r, w)
    });
    vec![
        Check::from_result("constraint/hedge", hedge, HEDGE_TOL),
        Check::from_result("constraint/subspace", subspace, SUBSPACE_TOL),
        Check::from_result("constraint/cholesky", cholesky, CHOLESKY_TOL),
    ]
}

pub const SCALAR_TOL: f64 = 1e-10;

/// Every deterministic check, in a fixed order.
pub fn selftest(seed: u64) -> Vec<Check> {
    let mut out = vec![
        Check::from_result(
            "scalar/inverse_second_moment_covariance",
            scalar_itheta_error(),
            SCALAR_TOL,
        ),
        Check::from_result("scalar/gaussian_omega", scalar_omega_error(), SCALAR_TOL),
    ];
    out.extend(derivative_checks(seed));
    out.extend(mglh_checks(seed));
    out.extend(constraint_checks(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_grid_matches() {
        assert!(scalar_itheta_error().unwrap() < 1e-10);
        assert!(scalar_omega_error().unwrap() < 1e-10);
    }

    #[test]
    fn closed_forms_at_unit_values() {
        // mu = sd = 1 by hand
        let c = scalar_itheta_cov(1.0, 1.0);
        assert_eq!(c[(0, 0)], 6.0);
        assert_eq!(c[(1, 0)], -4.0);
        assert_eq!(c[(1, 1)], 3.0);
        assert_eq!(scalar_omega_block(1.0, 1.0)[(1, 1)], 6.0);
    }

    #[test]
    fn check_semantics() {
        assert!(Check::new("x", 2.1, 2.0, 0.15).passed);
        assert!(!Check::new("x", 2.2, 2.0, 0.15).passed);
        assert!(!Check::new("x", f64::NAN, 0.0, 1.0).passed);
        assert!(Check::new("x", 1e-11, 0.0, 1e-10).line().ends_with("PASS"));
    }

    #[test]
    fn every_selftest_line_passes() {
        let checks = selftest(7);
        assert_eq!(checks.len(), 2 + RULES.len() + 2 + 3);
        for c in &checks {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn broken_rule_is_caught() {
        // a sign-flipped inverse derivative must fail the same comparison
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = well_conditioned(&mut rng, 3);
        let gap = jacobian_gap(&(-d_inv(&a).unwrap()), |v| Ok(vec(&inverse(&unvec(v, 3)?)?)), &vec(&a)).unwrap();
        assert!(gap > 1e-3);
    }
}
