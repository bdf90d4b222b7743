use nalgebra::{DMatrix, DVector};

use super::subspace::projected_inverse;
use super::{augment_block, budgeted_weights};
use crate::asymptotics::{sandwich, vech_labels, DistributionResult, OmegaEstimate};
use crate::error::{Error, Result};
use crate::kernels::{d_inv_vech, sym_inverse, symmetrize, vech_lower};
use crate::moments::{AugmentedMoment, Layout};

/// Portfolios with zero covariance to the returns of `G x`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeSpec {
    hedge: DMatrix<f64>,
    augmented: DMatrix<f64>,
    corner: usize,
}

impl HedgeSpec {
    /// `g` is `p_g x p` with full row rank; `corner` is the size of the
    /// leading block of the second moment (1, or the feature count).
    pub fn new(g: &DMatrix<f64>, corner: usize) -> Result<Self> {
        let (pg, p) = g.shape();
        if pg == 0 || pg > p || corner == 0 {
            return Err(Error::RankDeficientHedge);
        }
        let sv = g.clone().singular_values();
        if !(sv.min() > 1e-10 * sv.max()) {
            return Err(Error::RankDeficientHedge);
        }
        Ok(Self {
            hedge: g.clone(),
            augmented: augment_block(corner, g),
            corner,
        })
    }

    pub fn hedge(&self) -> &DMatrix<f64> {
        &self.hedge
    }

    /// `blockdiag(I_corner, G)`.
    pub fn augmented(&self) -> &DMatrix<f64> {
        &self.augmented
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgedEstimate {
    /// Law of `vech(Theta^-1 - G~'(G~ Theta G~')^-1 G~)`.
    pub delta: DistributionResult,
    /// Hedged coefficient (`p x f`), read from the lower-left block with sign flipped.
    pub coefficient: DMatrix<f64>,
    /// Risk-budgeted hedged portfolio, for the unconditional layout only.
    pub portfolio: Option<DistributionResult>,
}

fn delta_parts(tm: &AugmentedMoment, spec: &HedgeSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if spec.augmented.ncols() != tm.dim() || spec.corner != tm.f_dim() {
        return Err(Error::ShapeMismatch(format!(
            "hedge of {} columns with corner {} does not fit a {}x{} moment with leading block {}",
            spec.hedge.ncols(),
            spec.corner,
            tm.dim(),
            tm.dim(),
            tm.f_dim()
        )));
    }
    let inv = tm.inverse()?;
    let (proj, h_proj) = projected_inverse(tm.theta(), &spec.augmented)?;
    let h_inv = d_inv_vech(tm.theta()).map_err(|_| Error::SingularTheta(0.0))?;
    let mut delta = &inv - proj;
    if tm.layout() == Layout::Unconditional {
        unconditional_edge(tm, &spec.hedge, &mut delta)?;
    }
    Ok((delta, h_inv - h_proj))
}

/// Recomputes the first row and column of the unconditional delta from the
/// hedge residual of the mean, `r = mu - Sigma G'(G Sigma G')^-1 G mu`:
/// the corner is `r' Sigma^-1 r` and the lower-left block `-Sigma^-1 r`.
/// Subtracting the two inverses loses digits when the hedge absorbs most
/// of the Sharpe; projecting the mean directly keeps `G Sigma w` near
/// round-off.
fn unconditional_edge(tm: &AugmentedMoment, g: &DMatrix<f64>, delta: &mut DMatrix<f64>) -> Result<()> {
    let (mu, sigma) = tm.mean_cov()?;
    let gs = g * &sigma;
    let gsg = symmetrize(&(&gs * g.transpose()));
    let inner = sym_inverse(&gsg).map_err(|_| Error::SingularProjection)?;
    let project = |v: &DVector<f64>| {
        let gv = g * v;
        let mut y = &inner * &gv;
        y += &inner * (&gv - &gsg * &y);
        v - gs.transpose() * y
    };
    // a second pass removes what round-off in the first left behind, which
    // matters when `r` is small next to `mu`
    let r = project(&project(&mu));
    let sigma_inv = sym_inverse(&sigma).map_err(|_| Error::SingularTheta(0.0))?;
    let w = sigma_inv * &r;
    delta[(0, 0)] = r.dot(&w).max(0.0);
    for i in 0..w.len() {
        delta[(i + 1, 0)] = -w[i];
        delta[(0, i + 1)] = -w[i];
    }
    Ok(())
}

fn hedged(
    tm: &AugmentedMoment,
    spec: &HedgeSpec,
    om: &OmegaEstimate,
    risk_budget: Option<f64>,
) -> Result<HedgedEstimate> {
    let (delta, h) = delta_parts(tm, spec)?;
    let f = tm.f_dim();
    let p = tm.n_assets();
    let coefficient = -delta.view((f, 0), (p, f)).into_owned();
    let portfolio = match risk_budget {
        Some(r) => {
            let (weights, dw) = budgeted_weights(&delta, 0.0, r)?;
            Some(DistributionResult {
                point: weights,
                covariance: sandwich(&(dw * &h), &om.omega),
                n_obs: tm.n_obs(),
                labels: (1..=p).map(|i| format!("w[{i}]")).collect(),
            })
        }
        None => None,
    };
    Ok(HedgedEstimate {
        delta: DistributionResult {
            point: vech_lower(&delta),
            covariance: sandwich(&h, &om.omega),
            n_obs: tm.n_obs(),
            labels: vech_labels("delta_inv", tm.dim()),
        },
        coefficient,
        portfolio,
    })
}

/// Hedged portfolio inference on the unconditional second moment. The
/// portfolio is the negated lower-left column of the delta inverse second
/// moment scaled by `R / sqrt(corner)`; it is zero when the hedge absorbs
/// all of the Sharpe.
pub fn hedged_delta_theta(
    tm: &AugmentedMoment,
    spec: &HedgeSpec,
    om: &OmegaEstimate,
    risk_budget: f64,
) -> Result<HedgedEstimate> {
    if tm.layout() != Layout::Unconditional {
        return Err(Error::WrongLayout("hedged portfolios need the unconditional layout"));
    }
    hedged(tm, spec, om, Some(risk_budget))
}

/// Hedged Markowitz coefficient for the conditional second moment.
pub fn hedged_conditional_delta(tm: &AugmentedMoment, spec: &HedgeSpec, om: &OmegaEstimate) -> Result<HedgedEstimate> {
    hedged(tm, spec, om, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::OmegaEstimator;
    use crate::kernels::{ivech, vech, SymIndex, VechShape};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_omega(dim: usize) -> OmegaEstimate {
        let m = SymIndex::new(dim).vech_len();
        OmegaEstimate {
            omega: DMatrix::identity(m, m),
            estimator: OmegaEstimator::Vanilla,
            n_obs: 100,
        }
    }

    fn random_conditional(seed: u64, f: usize, p: usize) -> AugmentedMoment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = f + p;
        let a = DMatrix::<f64>::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
        let theta = &a * a.transpose() + DMatrix::identity(q, q) * 0.5;
        AugmentedMoment::new(theta, 100, Layout::Conditional { f_dim: f }).unwrap()
    }

    #[test]
    fn hedge_satisfies_zero_covariance() {
        let mu = DVector::from_vec(vec![0.2, 0.1]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let tm = AugmentedMoment::from_mean_cov(&mu, &sigma, 100).unwrap();
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let spec = HedgeSpec::new(&g, 1).unwrap();
        let est = hedged_delta_theta(&tm, &spec, &identity_omega(3), 1.0).unwrap();
        let w = est.portfolio.unwrap().point;
        assert!((&g * &sigma * &w).amax() < 1e-12);

        // corner equals psi^2 minus the Sharpe captured by the hedge
        let prec = sigma.clone().try_inverse().unwrap();
        let full = mu.dot(&(&prec * &mu));
        let gs = (&g * &sigma * g.transpose()).try_inverse().unwrap();
        let gm = &g * &mu;
        let hedge_part = gm.dot(&(&gs * &gm));
        assert!((est.delta.point[0] - (full - hedge_part)).abs() < 1e-10);
    }

    #[test]
    fn nearly_absorbed_sharpe_keeps_constraint() {
        // the mean lies almost entirely in the hedged direction, so the
        // remaining Sharpe is tiny and the weights are scaled up a lot
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.8]);
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -0.3]);
        let mu = &sigma * g.transpose() * DVector::from_vec(vec![0.7, -1.1]) + DVector::from_vec(vec![1e-5, 0.0, 0.0]);
        let tm = AugmentedMoment::from_mean_cov(&mu, &sigma, 100).unwrap();
        let est = hedged_delta_theta(&tm, &HedgeSpec::new(&g, 1).unwrap(), &identity_omega(4), 1.0).unwrap();
        assert!(est.delta.point[0] < 1e-8);
        let w = est.portfolio.unwrap().point;
        assert!((w.dot(&(&sigma * &w)) - 1.0).abs() < 1e-8);
        assert!((&g * &sigma * &w).amax() < 1e-12);
    }

    #[test]
    fn full_hedge_leaves_nothing() {
        let mu = DVector::from_vec(vec![0.2, 0.1]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let tm = AugmentedMoment::from_mean_cov(&mu, &sigma, 100).unwrap();
        let spec = HedgeSpec::new(&DMatrix::identity(2, 2), 1).unwrap();
        let est = hedged_delta_theta(&tm, &spec, &identity_omega(3), 1.0).unwrap();
        assert!(est.delta.point[0].abs() < 1e-12);
        assert!(est.portfolio.unwrap().point.amax() < 1e-12);
    }

    #[test]
    fn decomposition_and_rank() {
        let tm = random_conditional(1, 1, 3);
        let spec = HedgeSpec::new(&DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]), 1).unwrap();
        let (delta, _) = delta_parts(&tm, &spec).unwrap();
        let gt = spec.augmented();
        let rebuilt = &delta + gt.transpose() * (gt * tm.theta() * gt.transpose()).try_inverse().unwrap() * gt;
        assert!((rebuilt - tm.inverse().unwrap()).amax() < 1e-12 * tm.inverse().unwrap().amax().max(1.0));
        assert!(matches!(
            HedgeSpec::new(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), 1),
            Err(Error::RankDeficientHedge)
        ));
    }

    #[test]
    fn conditional_with_one_feature_matches_unconditional() {
        let mu = DVector::from_vec(vec![0.2, 0.1, -0.05]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.5, 0.3, 0.0, 0.3, 0.7]);
        let tm = AugmentedMoment::from_mean_cov(&mu, &sigma, 100).unwrap();
        let cond = AugmentedMoment::new(tm.theta().clone(), 100, Layout::Conditional { f_dim: 1 }).unwrap();
        let spec = HedgeSpec::new(&DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]), 1).unwrap();
        let om = identity_omega(4);
        let a = hedged_delta_theta(&tm, &spec, &om, 1.0).unwrap();
        let b = hedged_conditional_delta(&cond, &spec, &om).unwrap();
        assert!((&a.delta.point - &b.delta.point).amax() < 1e-12);
        assert!((&a.delta.covariance - &b.delta.covariance).amax() < 1e-12);
        assert!((&a.coefficient - &b.coefficient).amax() < 1e-12);
    }

    #[test]
    fn conditional_hedge_constraint_and_jacobian() {
        let (f, p) = (2, 3);
        let tm = random_conditional(2, f, p);
        let g = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, -1.0]);
        let spec = HedgeSpec::new(&g, f).unwrap();
        let est = hedged_conditional_delta(&tm, &spec, &identity_omega(f + p)).unwrap();
        let (_, _, sigma) = tm.regression_blocks().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let feat = DVector::<f64>::from_fn(f, |_, _| StandardNormal.sample(&mut rng));
            let w = &est.coefficient * feat;
            assert!((&g * &sigma * w).amax() < 1e-10);
        }

        let (_, h) = delta_parts(&tm, &spec).unwrap();
        let x = vech(tm.theta()).unwrap();
        let gt = spec.augmented().clone();
        let map = |v: &DVector<f64>| {
            let t = ivech(v, VechShape::Symmetric).unwrap();
            let inv = t.clone().try_inverse().unwrap();
            vech_lower(&(inv - gt.transpose() * (&gt * &t * gt.transpose()).try_inverse().unwrap() * &gt))
        };
        let step = 1e-5 * x.amax().max(1.0);
        for k in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += step;
            b[k] -= step;
            let col = (map(&a) - map(&b)) / (2.0 * step);
            assert!((h.column(k) - &col).amax() < 1e-6 * col.amax().max(1.0));
        }
    }
}
