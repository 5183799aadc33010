//! Splitting steps over abstract subflows, Milne-pair error estimation and
//! adaptive step-size selection.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analysis::milne_weight_of;
use crate::schemes::{MilnePair, SchemeTable};

/// Failure of a single subflow, e.g. an unstable inner discretization.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("subflow of operator {op} with step {h:e} failed: {message}")]
pub struct SubflowError {
    pub op: usize,
    pub h: f64,
    pub message: String,
}

/// An evolution equation `∂_t u = A_1(u) + … + A_n(u)` given by the flows of
/// its parts.
pub trait SplitProblem {
    type State: Clone;

    fn n_ops(&self) -> usize;

    /// Flow `E_op(h, u)` of operator `op` (1-based). Must be the identity for `h = 0`.
    fn subflow(&self, op: usize, h: f64, u: &Self::State) -> Result<Self::State, SubflowError>;

    /// Distance used for error estimates.
    fn distance(&self, a: &Self::State, b: &Self::State) -> f64;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("scheme has {scheme} operators, problem has {problem}")]
    OperatorMismatch { scheme: usize, problem: usize },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Subflow(#[from] SubflowError),
    #[error("gamma = {0} gives no usable Milne weight")]
    BadGamma(f64),
}

fn check_scheme<P: SplitProblem>(p: &P, s: &SchemeTable, h: f64) -> Result<(), StepError> {
    if s.n_ops() != p.n_ops() {
        return Err(StepError::OperatorMismatch {
            scheme: s.n_ops(),
            problem: p.n_ops(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(StepError::BadStep(h));
    }
    Ok(())
}

fn apply_factors<P: SplitProblem>(
    p: &P,
    factors: &[(usize, f64)],
    h: f64,
    u: &P::State,
) -> Result<P::State, SubflowError> {
    let mut state = u.clone();
    for &(op, c) in factors {
        state = p.subflow(op, c * h, &state)?;
    }
    Ok(state)
}

/// One step of the composition: stages `1..=k` in order, operators `1..=n`
/// within a stage, zero coefficients skipped.
pub fn split_step<P: SplitProblem>(
    p: &P,
    s: &SchemeTable,
    h: f64,
    u: &P::State,
) -> Result<P::State, StepError> {
    check_scheme(p, s, h)?;
    Ok(apply_factors(p, &s.factor_values(), h, u)?)
}

#[derive(Debug, Clone)]
pub struct MilneStep<S> {
    /// Result of the basic scheme.
    pub state: S,
    /// Result of the partner scheme.
    pub partner_state: S,
    /// `|1/(1−γ)|·‖S(h,u) − S̃(h,u)‖`.
    pub estimate: f64,
}

/// Number of leading factors two factor lists share.
pub fn shared_prefix(a: &[(usize, f64)], b: &[(usize, f64)]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Steps with the basic scheme and estimates its local error with the partner.
/// Leading factors common to both schemes are evaluated once.
pub fn milne_step<P: SplitProblem>(
    p: &P,
    pair: &MilnePair,
    h: f64,
    u: &P::State,
) -> Result<MilneStep<P::State>, StepError> {
    check_scheme(p, &pair.basic, h)?;
    check_scheme(p, &pair.partner, h)?;
    let weight = milne_weight_of(pair.gamma).map_err(|_| StepError::BadGamma(pair.gamma))?;
    let fb = pair.basic.factor_values();
    let fp = pair.partner.factor_values();
    let common = shared_prefix(&fb, &fp);
    let mid = apply_factors(p, &fb[..common], h, u)?;
    let state = apply_factors(p, &fb[common..], h, &mid)?;
    let partner_state = apply_factors(p, &fp[common..], h, &mid)?;
    let estimate = weight.abs() * p.distance(&state, &partner_state);
    Ok(MilneStep {
        state,
        partner_state,
        estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid controller: {0}")]
pub struct ControllerError(String);

/// Step-size controller `h_new = h·min(α_max, max(α_min, α(tol/P)^{1/(p+1)}))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub tol: f64,
    pub alpha: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// A step is rejected when `P > reject_threshold·tol`.
    pub reject_threshold: f64,
    /// Upper bound on attempted steps in one run.
    pub max_attempts: usize,
}

impl StepController {
    pub fn new(tol: f64) -> Self {
        StepController {
            tol,
            ..Default::default()
        }
    }

    pub fn with_bounds(mut self, h_min: f64, h_max: f64) -> Self {
        self.h_min = h_min;
        self.h_max = h_max;
        self
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(0.0 < self.alpha_min && self.alpha_min < 1.0 && 1.0 < self.alpha_max) {
            return bad("need 0 < alpha_min < 1 < alpha_max");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(0.0 < self.h_min && self.h_min < self.h_max) {
            return bad("need 0 < h_min < h_max");
        }
        if !(self.reject_threshold >= 1.0) {
            return bad("reject_threshold must be at least 1");
        }
        Ok(())
    }

    /// Unclamped step ratio; `P = 0` selects `alpha_max`.
    pub fn factor(&self, estimate: f64, order: usize) -> f64 {
        if estimate <= 0.0 {
            return self.alpha_max;
        }
        let raw = self.alpha * (self.tol / estimate).powf(1.0 / (order as f64 + 1.0));
        raw.max(self.alpha_min).min(self.alpha_max)
    }
}

impl Default for StepController {
    fn default() -> Self {
        StepController {
            tol: 1e-5,
            alpha: 0.9,
            alpha_min: 0.25,
            alpha_max: 4.0,
            h_min: 1e-6,
            h_max: 0.1,
            reject_threshold: 1.2,
            max_attempts: 10_000_000,
        }
    }
}

/// Next step size from the estimate `P` of the step just attempted, clamped
/// into `[h_min, h_max]`.
pub fn propose_step(c: &StepController, h_old: f64, estimate: f64, order: usize) -> f64 {
    (h_old * c.factor(estimate, order)).clamp(c.h_min, c.h_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Start time of the attempt.
    pub t: f64,
    pub h: f64,
    pub estimate: f64,
    pub accepted: bool,
    /// Accepted only because `h` sat at the lower bound.
    pub floor: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub records: Vec<StepRecord>,
    pub accepted: usize,
    pub rejected: usize,
    pub floor_hit: bool,
}

impl StepTrace {
    pub fn accepted_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    /// CSV with columns `t,h,P,accepted`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,h,P,accepted\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{}",
                r.t, r.h, r.estimate, r.accepted as u8
            );
        }
        s
    }
}

#[derive(Debug, Clone, Error)]
pub enum IntegrateError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("t_end = {t_end} precedes t0 = {t0}")]
    BadInterval { t0: f64, t_end: f64 },
    #[error("step at t = {t} failed: {source}")]
    Step {
        t: f64,
        source: StepError,
        trace: StepTrace,
    },
    #[error("gave up after {attempts} attempts at t = {t}")]
    TooManyAttempts {
        attempts: usize,
        t: f64,
        trace: StepTrace,
    },
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun<S> {
    pub state: S,
    pub trace: StepTrace,
}

/// Adaptive integration over `[t0, t_end]` with Milne error estimates.
///
/// Each attempt is accepted when `P ≤ reject_threshold·tol` or when it was
/// taken with `h = h_min`; the latter sets `floor_hit`. The next step comes
/// from [`propose_step`] in both cases. The final step is shortened to end
/// exactly at `t_end`. `h0` defaults to `h_max/100`.
pub fn integrate_adaptive<P: SplitProblem>(
    p: &P,
    pair: &MilnePair,
    c: &StepController,
    t0: f64,
    t_end: f64,
    u0: &P::State,
    h0: Option<f64>,
) -> Result<AdaptiveRun<P::State>, IntegrateError> {
    c.validate()?;
    if t_end < t0 {
        return Err(IntegrateError::BadInterval { t0, t_end });
    }
    let order = pair.order();
    let mut trace = StepTrace::default();
    let mut u = u0.clone();
    let mut t = t0;
    let mut h = h0.unwrap_or(c.h_max / 100.0).clamp(c.h_min, c.h_max);
    let span = (t_end - t0).abs().max(1.0);
    let mut attempts = 0usize;
    while t < t_end {
        if attempts >= c.max_attempts {
            return Err(IntegrateError::TooManyAttempts { attempts, t, trace });
        }
        attempts += 1;
        let remaining = t_end - t;
        let last = h >= remaining - 1e-14 * span;
        let h_try = if last { remaining } else { h };
        let step = match milne_step(p, pair, h_try, &u) {
            Ok(step) => step,
            Err(source) => return Err(IntegrateError::Step { t, source, trace }),
        };
        let within = step.estimate <= c.reject_threshold * c.tol;
        let at_floor = h_try <= c.h_min * (1.0 + 1e-12);
        let accepted = within || at_floor;
        let floor = accepted && !within;
        trace.records.push(StepRecord {
            t,
            h: h_try,
            estimate: step.estimate,
            accepted,
            floor,
        });
        if accepted {
            trace.accepted += 1;
            trace.floor_hit |= floor;
            u = step.state;
            t = if last { t_end } else { t + h_try };
        } else {
            trace.rejected += 1;
        }
        h = propose_step(c, h_try, step.estimate, order);
    }
    Ok(AdaptiveRun { state: u, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{registry_scheme, Coefficient};

    /// Scalar linear problem `u' = Σ λ_ℓ u`; all flows commute.
    struct Scalar(Vec<f64>);

    impl SplitProblem for Scalar {
        type State = f64;
        fn n_ops(&self) -> usize {
            self.0.len()
        }
        fn subflow(&self, op: usize, h: f64, u: &f64) -> Result<f64, SubflowError> {
            if self.0[op - 1].is_nan() {
                return Err(SubflowError {
                    op,
                    h,
                    message: "nan rate".into(),
                });
            }
            Ok(u * (self.0[op - 1] * h).exp())
        }
        fn distance(&self, a: &f64, b: &f64) -> f64 {
            (a - b).abs()
        }
    }

    #[test]
    fn single_factor_step() {
        let one = Coefficient::from_f64(1.0);
        let z = Coefficient::zero();
        let s = SchemeTable::new_unchecked("one", 1, vec![vec![one], vec![z]], []).unwrap();
        let p = Scalar(vec![-1.0, 3.0]);
        let u1 = split_step(&p, &s, 0.1, &2.0).unwrap();
        assert_eq!(u1, p.subflow(1, 0.1, &2.0).unwrap());
    }

    #[test]
    fn commuting_flows_are_exact() {
        let p = Scalar(vec![-1.0, 0.5, 0.25, -2.0]);
        for name in ["strang-4", "opt-4-5-pos", "opt-4-4-neg"] {
            let s = registry_scheme(name).unwrap();
            let exact = 1.5 * (-2.25f64 * 0.3).exp();
            let u1 = split_step(&p, &s, 0.3, &1.5).unwrap();
            assert!((u1 - exact).abs() < 1e-7, "{name}: {u1} vs {exact}");
        }
    }

    #[test]
    fn step_errors() {
        let p = Scalar(vec![1.0, 1.0, 1.0]);
        let s = registry_scheme("strang-2").unwrap();
        assert!(matches!(
            split_step(&p, &s, 0.1, &1.0),
            Err(StepError::OperatorMismatch { .. })
        ));
        let p = Scalar(vec![1.0, 1.0]);
        assert!(matches!(split_step(&p, &s, 0.0, &1.0), Err(StepError::BadStep(_))));
        let p = Scalar(vec![f64::NAN, 1.0]);
        assert!(matches!(split_step(&p, &s, 0.1, &1.0), Err(StepError::Subflow(_))));
    }

    #[test]
    fn identical_pair_estimates_zero() {
        let s = registry_scheme("strang-2").unwrap();
        let pair = MilnePair::new(s.clone(), s, 0.5).unwrap();
        let p = Scalar(vec![-1.0, 2.0]);
        let step = milne_step(&p, &pair, 0.1, &1.0).unwrap();
        assert_eq!(step.estimate, 0.0);
        assert_eq!(step.state, step.partner_state);
    }

    #[test]
    fn failing_subflow_gives_no_estimate() {
        let s = registry_scheme("strang-2").unwrap();
        let pair = MilnePair::new(s.clone(), s, 0.5).unwrap();
        let p = Scalar(vec![f64::NAN, 2.0]);
        assert!(milne_step(&p, &pair, 1e-6, &1.0).is_err());
    }

    #[test]
    fn shared_prefix_detection() {
        let a = [(1, 0.5), (2, 1.0), (1, 0.5)];
        let b = [(1, 0.5), (2, 0.3), (1, 0.7)];
        assert_eq!(shared_prefix(&a, &b), 1);
        assert_eq!(shared_prefix(&a, &a), 3);
    }

    #[test]
    fn controller_formula() {
        let c = StepController::new(1e-5).with_bounds(1e-12, 1e3);
        assert!((propose_step(&c, 1.0, 1e-5, 2) - 0.9).abs() < 1e-15);
        assert_eq!(propose_step(&c, 1.0, 1e-2, 2), 0.25);
        assert_eq!(propose_step(&c, 1.0, 1e-11, 2), 4.0);
        assert_eq!(propose_step(&c, 1.0, 0.0, 2), 4.0);
        // clamping into [h_min, h_max]
        let c = StepController::new(1e-5).with_bounds(0.5, 2.0);
        assert_eq!(propose_step(&c, 1.0, 1e-2, 2), 0.5);
        assert_eq!(propose_step(&c, 1.0, 1e-11, 2), 2.0);
    }

    #[test]
    fn controller_validation() {
        assert!(StepController::default().validate().is_ok());
        assert!(StepController::new(0.0).validate().is_err());
        assert!(StepController::new(1e-3).with_bounds(1.0, 0.5).validate().is_err());
        let c = StepController {
            alpha_min: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_interval() {
        let s = registry_scheme("strang-2").unwrap();
        let pair = MilnePair::new(s.clone(), s, 0.5).unwrap();
        let p = Scalar(vec![-1.0, 2.0]);
        let run = integrate_adaptive(&p, &pair, &StepController::default(), 0.3, 0.3, &1.0, None)
            .unwrap();
        assert_eq!(run.state, 1.0);
        assert!(run.trace.records.is_empty());
    }

    #[test]
    fn trace_csv_header() {
        let trace = StepTrace {
            records: vec![StepRecord {
                t: 0.0,
                h: 0.5,
                estimate: 1e-3,
                accepted: true,
                floor: false,
            }],
            accepted: 1,
            rejected: 0,
            floor_hit: false,
        };
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,h,P,accepted"));
        assert!(lines.next().unwrap().ends_with(",1"));
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn factor_stays_in_bounds(est in 0.0f64..1e3, tol in 1e-10f64..1.0, order in 1usize..4) {
            let c = StepController::new(tol);
            let f = c.factor(est, order);
            prop_assert!(f >= c.alpha_min && f <= c.alpha_max);
        }

        #[test]
        fn factor_monotone_in_estimate(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
            let c = StepController::new(1e-5);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(c.factor(lo, 2) >= c.factor(hi, 2));
        }
    }
}
