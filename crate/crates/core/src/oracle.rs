//! Linear test problems `u' = (A_1 + … + A_n) u` with random non-commuting
//! matrices. The exact flow is a matrix exponential, which gives local errors
//! independent of the series code.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::integrator::{split_step, SplitProblem, StepError, SubflowError};
use crate::schemes::{MilnePair, SchemeTable};

pub const DEFAULT_DIM: usize = 6;
/// Smallest admissible `‖[A_i, A_j]‖_F` for normalized matrices.
pub const COMMUTATOR_FLOOR: f64 = 0.01;
const MAX_DRAWS: usize = 64;
/// Relative drift of the `γ` ratio between the two smallest steps above
/// which the defects are reported as non-parallel.
pub const GAMMA_DRIFT_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("state dimension must be positive")]
    ZeroDimension,
    #[error("need at least one operator")]
    NoOperators,
    #[error("no non-commuting draw after {draws} attempts (dimension {dim})")]
    Commuting { dim: usize, draws: usize },
    #[error("need at least 4 step sizes, got {0}")]
    TooFewSteps(usize),
    #[error("step sizes must be positive and decreasing")]
    BadSteps,
    #[error("local errors do not decrease with h at h = {offending:?}")]
    NonMonotone { offending: Vec<f64>, errors: Vec<f64> },
    #[error("basic scheme has zero local error at h = {0}")]
    ZeroError(f64),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Default step list `2^-4, …, 2^-10`.
pub fn default_steps() -> Vec<f64> {
    (4..=10).map(|k| 2f64.powi(-k)).collect()
}

/// Steps `2^-lo, …, 2^-hi`.
pub fn dyadic_steps(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProblem {
    pub dim: usize,
    pub seed: u64,
    pub mats: Vec<DMatrix<f64>>,
    /// Unit initial vector drawn from the same stream.
    pub initial: DVector<f64>,
}

fn random_unit_matrix(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..=1.0));
    let norm = m.norm();
    if norm > 0.0 {
        m / norm
    } else {
        m
    }
}

fn pairwise_noncommuting(mats: &[DMatrix<f64>]) -> bool {
    for i in 0..mats.len() {
        for j in i + 1..mats.len() {
            let c = &mats[i] * &mats[j] - &mats[j] * &mats[i];
            if c.norm() <= COMMUTATOR_FLOOR {
                return false;
            }
        }
    }
    true
}

/// Seeded problem with `n_ops` matrices of Frobenius norm 1, entries drawn
/// uniformly from `[-1, 1]` by ChaCha8 before normalization. Draws are
/// repeated until every pair has commutator norm above [`COMMUTATOR_FLOOR`].
pub fn make_problem(n_ops: usize, dim: usize, seed: u64) -> Result<MatrixProblem, OracleError> {
    if dim == 0 {
        return Err(OracleError::ZeroDimension);
    }
    if n_ops == 0 {
        return Err(OracleError::NoOperators);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mats: Vec<_> = (0..n_ops).map(|_| random_unit_matrix(&mut rng, dim)).collect();
        if pairwise_noncommuting(&mats) {
            let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
            let initial = v.normalize();
            return Ok(MatrixProblem {
                dim,
                seed,
                mats,
                initial,
            });
        }
    }
    Err(OracleError::Commuting {
        dim,
        draws: MAX_DRAWS,
    })
}

impl MatrixProblem {
    pub fn generator(&self) -> DMatrix<f64> {
        self.mats
            .iter()
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, m| acc + m)
    }

    /// `expm(h·ΣA_ℓ)·u`.
    pub fn exact_step(&self, h: f64, u: &DVector<f64>) -> DVector<f64> {
        (self.generator() * h).exp() * u
    }

    /// `‖split_step(h, u0) − exact_step(h, u0)‖` from the stored initial vector.
    pub fn local_error(&self, s: &SchemeTable, h: f64) -> Result<f64, OracleError> {
        Ok((self.local_error_vector(s, h)?).norm())
    }

    pub fn local_error_vector(&self, s: &SchemeTable, h: f64) -> Result<DVector<f64>, OracleError> {
        let approx = split_step(self, s, h, &self.initial)?;
        Ok(approx - self.exact_step(h, &self.initial))
    }
}

impl SplitProblem for MatrixProblem {
    type State = DVector<f64>;

    fn n_ops(&self) -> usize {
        self.mats.len()
    }

    fn subflow(&self, op: usize, h: f64, u: &DVector<f64>) -> Result<DVector<f64>, SubflowError> {
        let m = self.mats.get(op.wrapping_sub(1)).ok_or_else(|| SubflowError {
            op,
            h,
            message: "no such operator".into(),
        })?;
        if h == 0.0 {
            return Ok(u.clone());
        }
        Ok((m * h).exp() * u)
    }

    fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm()
    }
}

fn check_steps(hs: &[f64]) -> Result<(), OracleError> {
    if hs.len() < 4 {
        return Err(OracleError::TooFewSteps(hs.len()));
    }
    if hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) || hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(OracleError::BadSteps);
    }
    Ok(())
}

fn check_monotone(hs: &[f64], errors: &[f64]) -> Result<(), OracleError> {
    let offending: Vec<f64> = hs[1..]
        .iter()
        .zip(errors.windows(2))
        .filter(|(_, e)| !(e[1] < e[0]))
        .map(|(h, _)| *h)
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(OracleError::NonMonotone {
            offending,
            errors: errors.to_vec(),
        })
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

impl OrderFit {
    /// `e(h)/h^q` per step.
    pub fn constants(&self, q: i32) -> Vec<f64> {
        self.steps
            .iter()
            .zip(&self.errors)
            .map(|(h, e)| e / h.powi(q))
            .collect()
    }

    /// Pairwise slopes between consecutive steps.
    pub fn local_slopes(&self) -> Vec<f64> {
        self.steps
            .windows(2)
            .zip(self.errors.windows(2))
            .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            .collect()
    }
}

/// Local errors of `s` at each step from the problem's initial vector, and the
/// fitted slope. The steps must decrease and the errors with them.
pub fn empirical_order(
    s: &SchemeTable,
    p: &MatrixProblem,
    steps: &[f64],
) -> Result<OrderFit, OracleError> {
    check_steps(steps)?;
    let errors = steps
        .par_iter()
        .map(|&h| p.local_error(s, h))
        .collect::<Result<Vec<_>, _>>()?;
    check_monotone(steps, &errors)?;
    Ok(OrderFit {
        steps: steps.to_vec(),
        slope: loglog_slope(steps, &errors),
        errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub steps: Vec<f64>,
    /// `⟨ẽ, e⟩/⟨e, e⟩` per step.
    pub ratios: Vec<f64>,
    /// `‖ẽ − r·e‖/‖ẽ‖` per step.
    pub parallel_defects: Vec<f64>,
    /// Richardson extrapolation of the two smallest steps, assuming `r(h) = γ + O(h)`.
    pub gamma: f64,
    /// The ratio drifts or the error vectors are far from parallel.
    pub drifting: bool,
}

/// Ratio of partner to basic local error, extrapolated to `h → 0`.
pub fn empirical_gamma(
    pair: &MilnePair,
    p: &MatrixProblem,
    steps: &[f64],
) -> Result<GammaEstimate, OracleError> {
    check_steps(steps)?;
    let pairs = steps
        .par_iter()
        .map(|&h| {
            Ok((
                p.local_error_vector(&pair.basic, h)?,
                p.local_error_vector(&pair.partner, h)?,
            ))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    let basic_norms: Vec<f64> = pairs.iter().map(|(e, _)| e.norm()).collect();
    check_monotone(steps, &basic_norms)?;
    let mut ratios = Vec::with_capacity(steps.len());
    let mut parallel_defects = Vec::with_capacity(steps.len());
    for ((e, et), h) in pairs.iter().zip(steps) {
        let ee = e.dot(e);
        if ee == 0.0 {
            return Err(OracleError::ZeroError(*h));
        }
        let r = et.dot(e) / ee;
        ratios.push(r);
        let et_norm = et.norm();
        parallel_defects.push(if et_norm > 0.0 {
            (et - e * r).norm() / et_norm
        } else {
            0.0
        });
    }
    let m = steps.len();
    let q = steps[m - 2] / steps[m - 1];
    let gamma = (q * ratios[m - 1] - ratios[m - 2]) / (q - 1.0);
    let drift = (ratios[m - 1] - ratios[m - 2]).abs() / ratios[m - 1].abs().max(1e-300);
    let drifting = drift > GAMMA_DRIFT_TOL || parallel_defects[m - 1] > GAMMA_DRIFT_TOL;
    Ok(GammaEstimate {
        steps: steps.to_vec(),
        ratios,
        parallel_defects,
        gamma,
        drifting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::restore_precision;
    use crate::schemes::registry_scheme;

    fn problem(n: usize) -> MatrixProblem {
        make_problem(n, DEFAULT_DIM, 7).unwrap()
    }

    #[test]
    fn deterministic_and_normalized() {
        let a = make_problem(3, 5, 42).unwrap();
        let b = make_problem(3, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_problem(3, 5, 43).unwrap());
        for m in &a.mats {
            assert!((m.norm() - 1.0).abs() < 1e-14);
        }
        assert!((a.initial.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn commutator_floor() {
        let p = make_problem(2, 4, 1).unwrap();
        let c = &p.mats[0] * &p.mats[1] - &p.mats[1] * &p.mats[0];
        assert!(c.norm() > COMMUTATOR_FLOOR);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(make_problem(2, 1, 0), Err(OracleError::Commuting { .. })));
        assert!(matches!(make_problem(2, 0, 0), Err(OracleError::ZeroDimension)));
        assert!(matches!(make_problem(0, 3, 0), Err(OracleError::NoOperators)));
    }

    #[test]
    fn exact_step_cases() {
        let p = problem(2);
        assert_eq!(p.exact_step(0.0, &p.initial), p.initial);
        // nilpotent: exp(N) = I + N + N²/2
        let n = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        let q = MatrixProblem {
            dim: 3,
            seed: 0,
            mats: vec![n.clone()],
            initial: DVector::from_vec(vec![1.0, -1.0, 0.5]),
        };
        let expected = (DMatrix::identity(3, 3) + &n + &n * &n * 0.5) * &q.initial;
        assert!((q.exact_step(1.0, &q.initial) - expected).norm() < 1e-14);
        // diagonal
        let d = MatrixProblem {
            dim: 3,
            seed: 0,
            mats: vec![
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, -1.0])),
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 0.0])),
            ],
            initial: DVector::from_vec(vec![1.0, 1.0, 1.0]),
        };
        let got = d.exact_step(0.5, &d.initial);
        for (g, rate) in got.iter().zip([1.5, 2.0, -1.0]) {
            assert!((g - (0.5f64 * rate).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup() {
        let p = problem(3);
        let a = p.exact_step(0.3, &p.exact_step(0.2, &p.initial));
        let b = p.exact_step(0.5, &p.initial);
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn strang4_matches_factor_product() {
        let p = problem(4);
        let s = registry_scheme("strang-4").unwrap();
        let h = 0.1;
        let e = |i: usize, c: f64| (&p.mats[i - 1] * (c * h)).exp();
        let m = e(4, 0.5) * e(3, 0.5) * e(2, 0.5) * e(1, 1.0) * e(2, 0.5) * e(3, 0.5) * e(4, 0.5);
        let got = split_step(&p, &s, h, &p.initial).unwrap();
        assert!((got - m * &p.initial).norm() < 1e-14);
    }

    #[test]
    fn orders() {
        let hs = dyadic_steps(4, 9);
        let fit = empirical_order(&registry_scheme("strang-2").unwrap(), &problem(2), &hs).unwrap();
        assert!((fit.slope - 3.0).abs() < 0.05, "{}", fit.slope);
        let fit =
            empirical_order(&registry_scheme("lie-trotter-2").unwrap(), &problem(2), &hs).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05, "{}", fit.slope);
        let fit = empirical_order(
            &restore_precision(&registry_scheme("opt-4-5-pos").unwrap()).unwrap(),
            &problem(4),
            &default_steps(),
        )
        .unwrap();
        assert!((fit.slope - 3.0).abs() < 0.1, "{}", fit.slope);
    }

    #[test]
    fn error_constant_converges() {
        let p = problem(3);
        let s = restore_precision(&registry_scheme("opt-3-3-pos").unwrap()).unwrap();
        let fit = empirical_order(&s, &p, &default_steps()).unwrap();
        let c = fit.constants(3);
        let (a, b) = (c[c.len() - 2], c[c.len() - 1]);
        assert!((a - b).abs() / b < 0.02, "{c:?}");
    }

    #[test]
    fn consistent_step_is_first_order_small() {
        let p = problem(4);
        let s = registry_scheme("opt-4-4-neg").unwrap();
        let bound: f64 = s.factor_values().iter().map(|(_, c)| c.abs()).sum();
        for h in [1e-3, 1e-4] {
            let u1 = split_step(&p, &s, h, &p.initial).unwrap();
            assert!((u1 - &p.initial).norm() <= bound * h * 1.01);
        }
    }

    #[test]
    fn step_list_checks() {
        let s = registry_scheme("strang-2").unwrap();
        let p = problem(2);
        assert!(matches!(
            empirical_order(&s, &p, &[0.1, 0.05]),
            Err(OracleError::TooFewSteps(2))
        ));
        assert!(matches!(
            empirical_order(&s, &p, &[0.1, 0.2, 0.05, 0.01]),
            Err(OracleError::BadSteps)
        ));
    }

    #[test]
    fn roundoff_floor_is_reported() {
        let s = registry_scheme("strang-2").unwrap();
        let p = problem(2);
        match empirical_order(&s, &p, &dyadic_steps(16, 24)) {
            Err(OracleError::NonMonotone { offending, .. }) => assert!(!offending.is_empty()),
            other => panic!("expected non-monotone diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn identical_pair_has_unit_ratio() {
        let s = registry_scheme("strang-2").unwrap();
        let pair = MilnePair::new(s.clone(), s, 0.5).unwrap();
        let g = empirical_gamma(&pair, &problem(2), &default_steps()).unwrap();
        assert!((g.gamma - 1.0).abs() < 1e-12);
        assert!(!g.drifting);
    }

    #[test]
    fn non_parallel_pair_is_flagged() {
        // Strang with the operators swapped has a defect that is not a
        // multiple of the original one.
        let a = registry_scheme("strang-2").unwrap();
        let b = SchemeTable::from_stage_rows("strang-swapped", 2, &[&["0.5", "1"], &["0.5", "0"]], &[])
            .unwrap();
        let pair = MilnePair::new(a, b, 0.5).unwrap();
        let g = empirical_gamma(&pair, &problem(2), &default_steps()).unwrap();
        assert!(g.drifting, "{g:?}");
    }
}
