//! Multivariate general linear hypothesis tests `A B C = T` on the regression
//! coefficient of returns on features, computed from the second moment.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::asymptotics::OmegaEstimate;
use crate::constraints::augment_block;
use crate::error::{Error, Result};
use crate::kernels::{
    as_row, d_det, d_product, d_qform_inv, duplication_matrix, eigen_sym, inverse, kron, psd_sqrt, sym_inverse,
    symmetrize, vec,
};
use crate::moments::AugmentedMoment;

/// Hypothesis `A B C = T` with `A` (`a x p`), `C` (`f x c`), `T` (`a x c`).
#[derive(Debug, Clone, PartialEq)]
pub struct MglhSpec {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    t: DMatrix<f64>,
}

fn full_rank(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    !sv.is_empty() && sv.min() > 1e-10 * sv.max()
}

impl MglhSpec {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() > a.ncols() || !full_rank(&a) {
            return Err(Error::InvalidSpec("A must have full row rank".into()));
        }
        if c.ncols() == 0 || c.ncols() > c.nrows() || !full_rank(&c) {
            return Err(Error::InvalidSpec("C must have full column rank".into()));
        }
        if t.shape() != (a.nrows(), c.ncols()) {
            return Err(Error::ShapeMismatch(format!(
                "target is {}x{}, expected {}x{}",
                t.nrows(),
                t.ncols(),
                a.nrows(),
                c.ncols()
            )));
        }
        Ok(Self { a, c, t })
    }

    /// `A B C = 0`.
    pub fn zero_target(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let t = DMatrix::zeros(a.nrows(), c.ncols());
        Self::new(a, c, t)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.c.ncols()
    }

    fn check(&self, tm: &AugmentedMoment) -> Result<()> {
        if self.a.ncols() != tm.n_assets() || self.c.nrows() != tm.f_dim() {
            return Err(Error::ShapeMismatch(format!(
                "hypothesis on {} assets and {} features, moment has {} and {}",
                self.a.ncols(),
                self.c.nrows(),
                tm.n_assets(),
                tm.f_dim()
            )));
        }
        Ok(())
    }
}

/// The four statistics, with optional asymptotic variances (per observation,
/// i.e. of `sqrt(n)` times the statistic) in the order HLT, PBT, Wilks, Roy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MglhResult {
    pub hlt: f64,
    pub pbt: f64,
    pub wilks: f64,
    pub roy: f64,
    pub variances: Option<[f64; 4]>,
    pub n_obs: usize,
    #[serde(skip)]
    pub h_matrix: DMatrix<f64>,
    #[serde(skip)]
    pub e_matrix: DMatrix<f64>,
}

impl MglhResult {
    pub fn values(&self) -> [f64; 4] {
        [self.hlt, self.pbt, self.wilks, self.roy]
    }

    /// Normal-approximation z-scores of the statistics against `null` values.
    /// These are asymptotic and ignore the chi-square-like skew of the
    /// statistics in small samples.
    pub fn z_scores(&self, null: [f64; 4]) -> Option<[f64; 4]> {
        let var = self.variances?;
        let n = self.n_obs as f64;
        let vals = self.values();
        Some(std::array::from_fn(|i| {
            let se = (var[i] / n).sqrt();
            if se > 0.0 {
                (vals[i] - null[i]) / se
            } else {
                f64::NAN
            }
        }))
    }
}

/// Gradient rows of the four statistics with respect to `vech(Theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MglhGradients {
    pub hlt: DVector<f64>,
    pub pbt: DVector<f64>,
    pub wilks: DVector<f64>,
    pub roy: DVector<f64>,
}

impl MglhGradients {
    pub fn rows(&self) -> [&DVector<f64>; 4] {
        [&self.hlt, &self.pbt, &self.wilks, &self.roy]
    }
}

fn feature_inverse(tm: &AugmentedMoment) -> Result<DMatrix<f64>> {
    let f = tm.f_dim();
    sym_inverse(&tm.theta().view((0, 0), (f, f)).into_owned()).map_err(|_| Error::SingularTheta(0.0))
}

/// Model and error variance matrices `H` and `E`, both `a x a`.
pub fn mglh_he(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.check(tm)?;
    let (sigma_f, b, sigma) = tm.regression_blocks()?;
    let sf_inv = sym_inverse(&sigma_f).map_err(|_| Error::SingularTheta(0.0))?;
    let cq = inverse(&(spec.c.transpose() * sf_inv * &spec.c)).map_err(|_| Error::SingularCquad)?;
    let resid = &spec.a * b * &spec.c - &spec.t;
    let h = &resid * cq * resid.transpose();
    let e = &spec.a * sigma * spec.a.transpose();
    Ok((symmetrize(&h), symmetrize(&e)))
}

fn bordering(spec: &MglhSpec, f: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = augment_block(f, &spec.a);
    let mut n = DMatrix::zeros(f + spec.n_rows(), spec.n_cols());
    n.view_mut((0, 0), (f, spec.n_cols())).copy_from(&spec.c);
    n.view_mut((f, 0), (spec.n_rows(), spec.n_cols())).copy_from(&spec.t);
    (m, n)
}

/// `G1 = (C' Sigma_f^-1 C)^-1` and `G2 = N' (M Theta M')^-1 N` with
/// `M = blockdiag(I_f, A)` and `N = [C; T]`. The product `G1 G2` shares its
/// nonunit eigenvalues with `I + E^-1 H`.
pub fn mglh_g1g2(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.check(tm)?;
    let sf_inv = feature_inverse(tm)?;
    let g1 = inverse(&(spec.c.transpose() * sf_inv * &spec.c)).map_err(|_| Error::SingularCquad)?;
    let (m, n) = bordering(spec, tm.f_dim());
    let inner = sym_inverse(&(&m * tm.theta() * m.transpose())).map_err(|_| Error::SingularTheta(0.0))?;
    let g2 = n.transpose() * inner * &n;
    Ok((symmetrize(&g1), symmetrize(&g2)))
}

/// Largest eigenvalue of `G1 G2` with matching right and left eigenvectors
/// scaled so that `left' right = 1`, found through the symmetric
/// `G1^1/2 G2 G1^1/2`.
fn leading_pair(g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> Result<(f64, f64, DVector<f64>, DVector<f64>)> {
    let root = psd_sqrt(g1)?;
    let root_inv = inverse(&root)?;
    let (vals, vecs) = eigen_sym(&symmetrize(&(&root * g2 * &root)))?;
    let gap = if vals.len() > 1 {
        vals[0] - vals[1]
    } else {
        f64::INFINITY
    };
    let s = vecs.column(0).into_owned();
    Ok((vals[0], gap, &root * &s, root_inv * s))
}

fn statistics(p: &DMatrix<f64>, g1: &DMatrix<f64>, g2: &DMatrix<f64>, a: usize) -> Result<[f64; 4]> {
    let c = p.nrows();
    let p_inv = inverse(p)?;
    let (lead, _, _, _) = leading_pair(g1, g2)?;
    Ok([
        p.trace() - c as f64,
        p_inv.trace() + a as f64 - c as f64,
        p_inv.determinant(),
        lead - 1.0,
    ])
}

/// Point values of the four statistics.
pub fn mglh_statistics(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<MglhResult> {
    let (h, e) = mglh_he(tm, spec)?;
    let (g1, g2) = mglh_g1g2(tm, spec)?;
    let [hlt, pbt, wilks, roy] = statistics(&(&g1 * &g2), &g1, &g2, spec.n_rows())?;
    Ok(MglhResult {
        hlt,
        pbt,
        wilks,
        roy,
        variances: None,
        n_obs: tm.n_obs(),
        h_matrix: h,
        e_matrix: e,
    })
}

/// Gradients of the four statistics with respect to `vech(Theta)`.
pub fn mglh_derivatives(tm: &AugmentedMoment, spec: &MglhSpec) -> Result<MglhGradients> {
    spec.check(tm)?;
    let f = tm.f_dim();
    let q = tm.dim();
    let c = spec.n_cols();
    let theta = tm.theta();
    let (g1, g2) = mglh_g1g2(tm, spec)?;

    let mut select = DMatrix::zeros(f, q);
    for i in 0..f {
        select[(i, i)] = 1.0;
    }
    let sf_inv = feature_inverse(tm)?;
    let d_sf_inv = d_qform_inv(&select, theta)?;
    let ct = spec.c.transpose();
    let d_g1 = d_qform_inv(&ct, &sf_inv).map_err(|_| Error::SingularCquad)? * d_sf_inv;
    let (m, n) = bordering(spec, f);
    let nt = n.transpose();
    let d_g2 = kron(&nt, &nt) * d_qform_inv(&m, theta)?;

    let p = &g1 * &g2;
    let d_p = d_product(&g1, &g2, &d_g1, &d_g2)?;
    let p_inv = inverse(&p)?;
    let dup = duplication_matrix(q).data;
    let eye = vec(&DMatrix::identity(c, c));

    let hlt = as_row(&eye) * &d_p;
    let pbt = -as_row(&eye) * kron(&p_inv.transpose(), &p_inv) * &d_p;
    let det = p.determinant();
    let wilks = d_det(&p, &d_p)? * (-1.0 / (det * det));
    let (lead, gap, right, left) = leading_pair(&g1, &g2)?;
    if !(gap > 1e-10 * lead.abs()) {
        return Err(Error::RepeatedEigenvalue { index: 0, gap });
    }
    let roy = as_row(&right.kronecker(&left)) * &d_p;

    let to_vech = |row: DMatrix<f64>| DVector::from_column_slice((row * &dup).as_slice());
    Ok(MglhGradients {
        hlt: to_vech(hlt),
        pbt: to_vech(pbt),
        wilks: to_vech(wilks),
        roy: to_vech(roy),
    })
}

/// Statistics with their asymptotic variances `g' Omega g`.
pub fn mglh_asymptotic(tm: &AugmentedMoment, spec: &MglhSpec, om: &OmegaEstimate) -> Result<MglhResult> {
    let mut res = mglh_statistics(tm, spec)?;
    let grads = mglh_derivatives(tm, spec)?;
    if om.omega.nrows() != grads.hlt.len() {
        return Err(Error::ShapeMismatch(format!(
            "Omega is {}x{}, gradients have length {}",
            om.omega.nrows(),
            om.omega.ncols(),
            grads.hlt.len()
        )));
    }
    let rows = grads.rows();
    res.variances = Some(std::array::from_fn(|i| rows[i].dot(&(&om.omega * rows[i])).max(0.0)));
    Ok(res)
}
