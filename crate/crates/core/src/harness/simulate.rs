//! Seeded Monte Carlo validation of the asymptotic laws.
//!
//! Trial `i` of a run with seed `s` draws from a ChaCha8 generator seeded
//! with the SplitMix64 mix of `s` and `i`, so results do not depend on the
//! number of threads. Trials run in parallel and are collected in trial
//! order; every sum is then taken sequentially in that order.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::britten_jones::britten_jones;
use super::checks::Check;
use crate::asymptotics::{markowitz_distribution, theta_inverse_covariance, wald_statistics};
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_omega, lrt_solve, LrtOptions, TraceConstraintSet};
use crate::kernels::{chol, vech};
use crate::mglh::{mglh_asymptotic, mglh_statistics, MglhSpec};
use crate::moments::{augment, sample_theta, AugmentedMoment, AugmentedRows, Layout};

/// SplitMix64 finalizer applied to `seed + (trial + 1) * golden gamma`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed.wrapping_add(trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `n` independent trials in parallel, returned in trial order.
pub fn run_trials<T, F>(seed: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut ChaCha8Rng::seed_from_u64(trial_seed(seed, i as u64))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    InverseMoment,
    Gaussian,
    Lrt,
    Mglh,
    BrittenJones,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::InverseMoment,
        Suite::Gaussian,
        Suite::Lrt,
        Suite::Mglh,
        Suite::BrittenJones,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::InverseMoment => "inverse-moment",
            Suite::Gaussian => "gaussian",
            Suite::Lrt => "lrt",
            Suite::Mglh => "mglh",
            Suite::BrittenJones => "britten-jones",
        }
    }

    pub fn default_trials(&self) -> usize {
        match self {
            Suite::InverseMoment | Suite::Mglh => 5000,
            Suite::Gaussian | Suite::Lrt => 2000,
            Suite::BrittenJones => 200,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // alternate spelling of the inverse-moment suite
        if s == "theorem1" {
            return Ok(Suite::InverseMoment);
        }
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub trials: usize,
    /// Trials whose estimate could not be computed.
    pub failed_trials: usize,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# suite\t{}", self.suite.name());
        let _ = writeln!(out, "# seed\t{}", self.seed);
        let _ = writeln!(out, "# trials\t{}", self.trials);
        let _ = writeln!(out, "# failed_trials\t{}", self.failed_trials);
        out.push_str("check\tobserved\ttarget\ttolerance\tresult\n");
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }
}

/// Rows of `T` Gaussian draws with the given mean and Cholesky factor.
fn gaussian_rows(rng: &mut ChaCha8Rng, t: usize, mu: &DVector<f64>, factor: &DMatrix<f64>) -> DMatrix<f64> {
    let p = mu.len();
    let z = DMatrix::<f64>::from_fn(t, p, |_, _| StandardNormal.sample(rng));
    let mut x = z * factor.transpose();
    for mut row in x.row_iter_mut() {
        row += mu.transpose();
    }
    x
}

/// Sample covariance of the rows of `samples`, times `scale`, summed in
/// row order.
fn scaled_covariance(samples: &[DVector<f64>], scale: f64) -> DMatrix<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov * (scale / (n - 1) as f64)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn frobenius_relative(emp: &DMatrix<f64>, theory: &DMatrix<f64>) -> f64 {
    (emp - theory).norm() / theory.norm()
}

/// Fixed two-asset population used by the covariance suites.
fn two_asset_population() -> (DVector<f64>, DMatrix<f64>) {
    (
        DVector::from_vec(vec![0.3, 0.1]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]),
    )
}

const INVERSE_MOMENT_PERIODS: usize = 2000;
const GAUSSIAN_PERIODS: usize = 500;
const LRT_PERIODS: usize = 1000;
const MGLH_PERIODS: usize = 2000;
const BJ_PERIODS: usize = 1024;
const BJ_ASSETS: usize = 5;

fn finish(suite: Suite, seed: u64, trials: usize, failed_trials: usize, checks: Vec<Check>) -> SuiteReport {
    SuiteReport {
        suite,
        seed,
        trials,
        failed_trials,
        checks,
    }
}

/// Splits trial results into successes and a failure count.
fn successes<T>(results: Vec<Result<T>>) -> (Vec<T>, usize) {
    let total = results.len();
    let ok: Vec<T> = results.into_iter().filter_map(|r| r.ok()).collect();
    let failed = total - ok.len();
    (ok, failed)
}

/// Empirical covariance of `sqrt(T) vech(Theta^-1)` against the law
/// propagated from the Gaussian Omega.
fn inverse_moment(seed: u64, trials: usize) -> Result<SuiteReport> {
    let (mu, sigma) = two_asset_population();
    let t = INVERSE_MOMENT_PERIODS;
    let pop = AugmentedMoment::from_mean_cov(&mu, &sigma, t)?;
    let theory = theta_inverse_covariance(&pop, &gaussian_omega(&pop)?)?.covariance;
    let factor = chol(&sigma)?;
    let (draws, failed) = successes(run_trials(seed, trials, |rng| {
        let x = gaussian_rows(rng, t, &mu, &factor);
        let tm = sample_theta(&augment(&x, None, None)?)?;
        vech(&tm.inverse()?)
    }));
    let err = if draws.len() > 1 {
        frobenius_relative(&scaled_covariance(&draws, t as f64), &theory)
    } else {
        f64::NAN
    };
    Ok(finish(
        Suite::InverseMoment,
        seed,
        trials,
        failed,
        vec![Check::new("inverse-moment/frobenius_relative_error", err, 0.0, 0.10)],
    ))
}

/// Empirical covariance of `sqrt(T) vech(Theta)` against the Gaussian Omega.
fn gaussian(seed: u64, trials: usize) -> Result<SuiteReport> {
    let (mu, sigma) = two_asset_population();
    let t = GAUSSIAN_PERIODS;
    let pop = AugmentedMoment::from_mean_cov(&mu, &sigma, t)?;
    let theory = gaussian_omega(&pop)?.omega;
    let factor = chol(&sigma)?;
    let (draws, failed) = successes(run_trials(seed, trials, |rng| {
        let x = gaussian_rows(rng, t, &mu, &factor);
        vech(sample_theta(&augment(&x, None, None)?)?.theta())
    }));
    let err = if draws.len() > 1 {
        frobenius_relative(&scaled_covariance(&draws, t as f64), &theory)
    } else {
        f64::NAN
    };
    Ok(finish(
        Suite::Gaussian,
        seed,
        trials,
        failed,
        vec![Check::new("gaussian/frobenius_relative_error", err, 0.0, 0.10)],
    ))
}

/// Two trace constraints that hold in the population: the cross entry
/// `Theta^-1[0,1]` and the diagonal entry `Theta^-1[2,2]`.
pub fn lrt_null_constraints(pop: &AugmentedMoment) -> Result<TraceConstraintSet> {
    let inv = pop.inverse()?;
    let q = pop.dim();
    let mut cross = DMatrix::zeros(q, q);
    cross[(0, 1)] = 0.5;
    cross[(1, 0)] = 0.5;
    let mut diag = DMatrix::zeros(q, q);
    diag[(2, 2)] = 1.0;
    TraceConstraintSet::new(vec![(cross, inv[(0, 1)]), (diag, inv[(2, 2)])])
}

/// Largest Newton iteration count that still counts as fast convergence.
pub const LRT_FAST_ITERATIONS: usize = 10;

/// Moments of the likelihood-ratio statistic under a true null with two
/// constraints, and how quickly the multiplier iteration converges.
fn lrt(seed: u64, trials: usize) -> Result<SuiteReport> {
    let (mu, sigma) = two_asset_population();
    let t = LRT_PERIODS;
    let pop = AugmentedMoment::from_mean_cov(&mu, &sigma, t)?;
    let cs = lrt_null_constraints(&pop)?;
    let factor = chol(&sigma)?;
    let opts = LrtOptions::default();
    let (sols, failed) = successes(run_trials(seed, trials, |rng| {
        let x = gaussian_rows(rng, t, &mu, &factor);
        let tm = sample_theta(&augment(&x, None, None)?)?;
        lrt_solve(&tm, &cs, &opts)
    }));
    let stats: Vec<f64> = sols.iter().filter(|s| s.converged).map(|s| s.stat).collect();
    let fast = sols
        .iter()
        .filter(|s| s.converged && s.iterations <= LRT_FAST_ITERATIONS)
        .count();
    let (mean, var) = if stats.len() > 1 {
        mean_var(&stats)
    } else {
        (f64::NAN, f64::NAN)
    };
    let dof = cs.len() as f64;
    Ok(finish(
        Suite::Lrt,
        seed,
        trials,
        failed,
        vec![
            Check::new("lrt/mean", mean, dof, 0.15),
            Check::new("lrt/variance", var, 2.0 * dof, 0.6),
            // at least 99% of trials converge within the iteration budget
            Check::new("lrt/fast_convergence_fraction", fast as f64 / trials as f64, 1.0, 0.01),
        ],
    ))
}

/// Regression of two assets on `[1, z]` with a standard normal `z`.
pub struct MglhPopulation {
    pub coefficient: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl Default for MglhPopulation {
    fn default() -> Self {
        Self {
            coefficient: DMatrix::from_row_slice(2, 2, &[0.2, 0.3, -0.1, 0.25]),
            noise: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
        }
    }
}

impl MglhPopulation {
    /// Second moment of `[1, z, x]`, viewed with the two-dimensional feature
    /// block, and the Gaussian Omega of the same vector.
    pub fn moment(&self, n_obs: usize) -> Result<(AugmentedMoment, crate::asymptotics::OmegaEstimate)> {
        let p = self.coefficient.nrows();
        let slope = self.coefficient.column(1).into_owned();
        let mut mean = DVector::zeros(p + 1);
        mean.rows_mut(1, p).copy_from(&self.coefficient.column(0));
        let mut cov = DMatrix::zeros(p + 1, p + 1);
        cov[(0, 0)] = 1.0;
        cov.view_mut((1, 0), (p, 1)).copy_from(&slope);
        cov.view_mut((0, 1), (1, p)).copy_from(&slope.transpose());
        cov.view_mut((1, 1), (p, p))
            .copy_from(&(&slope * slope.transpose() + &self.noise));
        let joint = AugmentedMoment::from_mean_cov(&mean, &cov, n_obs)?;
        let om = gaussian_omega(&joint)?;
        let tm = AugmentedMoment::new(joint.theta().clone(), n_obs, Layout::Conditional { f_dim: 2 })?;
        Ok((tm, om))
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng, t: usize) -> Result<AugmentedRows> {
        let p = self.coefficient.nrows();
        let factor = chol(&self.noise)?;
        let mut rows = DMatrix::zeros(t, 2 + p);
        for i in 0..t {
            let z: f64 = StandardNormal.sample(rng);
            let e = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(rng));
            let x = self.coefficient.column(0) + self.coefficient.column(1) * z + &factor * e;
            rows[(i, 0)] = 1.0;
            rows[(i, 1)] = z;
            rows.view_mut((i, 2), (1, p)).copy_from(&x.transpose());
        }
        Ok(AugmentedRows {
            rows,
            layout: Layout::Conditional { f_dim: 2 },
        })
    }
}

/// Empirical variance of `sqrt(T) HLT` for `B = 0` at a fixed alternative,
/// against the delta-method variance.
fn mglh(seed: u64, trials: usize) -> Result<SuiteReport> {
    let pop = MglhPopulation::default();
    let t = MGLH_PERIODS;
    let spec = MglhSpec::zero_target(DMatrix::identity(2, 2), DMatrix::identity(2, 2))?;
    let (tm, om) = pop.moment(t)?;
    let theory = mglh_asymptotic(&tm, &spec, &om)?
        .variances
        .expect("variances requested")[0];
    let (hlt, failed) = successes(run_trials(seed, trials, |rng| {
        let rows = pop.draw(rng, t)?;
        Ok(mglh_statistics(&sample_theta(&rows)?, &spec)?.hlt)
    }));
    let ratio = if hlt.len() > 1 {
        mean_var(&hlt).1 * t as f64 / theory
    } else {
        f64::NAN
    };
    Ok(finish(
        Suite::Mglh,
        seed,
        trials,
        failed,
        vec![Check::new("mglh/hlt_variance_ratio", ratio, 1.0, 0.15)],
    ))
}

/// Britten-Jones t-statistics against Wald z-scores of the Markowitz
/// portfolio, with the Gaussian Omega evaluated at the sample second moment.
fn britten_jones_agreement(seed: u64, trials: usize) -> Result<SuiteReport> {
    let t = BJ_PERIODS;
    let p = BJ_ASSETS;
    let mu = DVector::zeros(p);
    let (gaps, failed) = successes(run_trials(seed, trials, |rng| -> Result<Vec<f64>> {
        // a fresh random covariance per trial
        let w = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(rng));
        let sigma = &w * w.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
        let x = gaussian_rows(rng, t, &mu, &chol(&sigma)?);
        let bj = britten_jones(&x)?;
        let tm = sample_theta(&augment(&x, None, None)?)?;
        let z = wald_statistics(&markowitz_distribution(&tm, &gaussian_omega(&tm)?)?).z;
        Ok((bj - z).iter().map(|d| d.abs()).collect())
    }));
    let all: Vec<f64> = gaps.into_iter().flatten().collect();
    let (mean, max) = if all.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            all.iter().sum::<f64>() / all.len() as f64,
            all.iter().copied().fold(0.0, f64::max),
        )
    };
    Ok(finish(
        Suite::BrittenJones,
        seed,
        trials,
        failed,
        vec![
            Check::new("britten-jones/mean_abs_difference", mean, 0.0, 0.02),
            Check::new("britten-jones/max_abs_difference", max, 0.0, 0.10),
        ],
    ))
}

/// Runs one suite. Population set-up errors are returned; per-trial errors
/// are counted in the report.
pub fn simulate_suite(suite: Suite, seed: u64, trials: Option<usize>) -> Result<SuiteReport> {
    let trials = trials.unwrap_or_else(|| suite.default_trials());
    if trials < 2 {
        return Err(Error::InvalidSpec("at least two trials are needed".into()));
    }
    match suite {
        Suite::InverseMoment => inverse_moment(seed, trials),
        Suite::Gaussian => gaussian(seed, trials),
        Suite::Lrt => lrt(seed, trials),
        Suite::Mglh => mglh(seed, trials),
        Suite::BrittenJones => britten_jones_agreement(seed, trials),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..1000).map(|i| trial_seed(42, i)).collect();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(trial_seed(42, 7), a[7]);
        assert_ne!(trial_seed(42, 0), trial_seed(43, 0));
    }

    #[test]
    fn trials_independent_of_thread_count() {
        let f = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let parallel = run_trials(9, 64, f);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_trials(9, 64, f));
        assert_eq!(parallel, single);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = simulate_suite(Suite::Gaussian, 5, Some(50)).unwrap().to_tsv();
        let b = simulate_suite(Suite::Gaussian, 5, Some(50)).unwrap().to_tsv();
        assert_eq!(a, b);
        let c = simulate_suite(Suite::Gaussian, 6, Some(50)).unwrap().to_tsv();
        assert_ne!(a, c);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("theorem1".parse::<Suite>().unwrap(), Suite::InverseMoment);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn lrt_constraints_hold_in_population() {
        let (mu, sigma) = two_asset_population();
        let pop = AugmentedMoment::from_mean_cov(&mu, &sigma, 100).unwrap();
        let cs = lrt_null_constraints(&pop).unwrap();
        let inv = pop.inverse().unwrap();
        for (a, target) in cs.iter() {
            assert!(((a * &inv).trace() - target).abs() < 1e-14);
        }
    }

    #[test]
    fn mglh_population_moment_matches_draws() {
        let pop = MglhPopulation::default();
        let (tm, _) = pop.moment(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = sample_theta(&pop.draw(&mut rng, 200_000).unwrap()).unwrap();
        assert!((sample.theta() - tm.theta()).amax() < 0.03);
    }

    #[test]
    fn too_few_trials() {
        assert!(simulate_suite(Suite::Lrt, 1, Some(1)).is_err());
    }
}
