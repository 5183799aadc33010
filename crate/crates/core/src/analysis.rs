//! Algebraic verification of splitting schemes.
//!
//! A step `S(h) = E_n(a_{n,k}h)∘…∘E_1(a_{1,1}h)` of a linear problem is the
//! product `exp(a_{n,k}hA_n)·…·exp(a_{1,1}hA_1)`. With `h` absorbed into the
//! grading, the degree-`d` part of `log S − Σ A_ℓ` is the coefficient of
//! `h^d` of the generator defect; order `p` means degrees `1..=p` vanish.
//!
//! The leading defect is reported in two coordinate systems:
//! * `coeffs`: coefficients of the Lyndon words of the `(p+1)`-th
//!   `h`-derivative of the defect (`(p+1)!` times the `h^{p+1}` coefficient).
//!   Each order condition fixes the coefficient of one Lyndon word, and the
//!   local error measure (LEM) is the Euclidean norm of this vector.
//! * `bracket_coeffs`: coordinates of the `h^{p+1}` coefficient in the
//!   standard-bracketed Lyndon basis, e.g. `(−1/24, 1/12)` for Strang.

use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::free_algebra::{
    lie_coordinates, lie_project, lyndon_basis, lyndon_word_coefficients, AlgebraError, Coeff,
    FreePoly, Word,
};
use crate::schemes::{MilnePair, SchemeTable};

/// Order-condition residual tolerance; published mantissas are truncated.
pub const ORDER_TOL: f64 = 1e-5;
/// Largest acceptable non-Lie remainder of a projected defect.
pub const LIE_TOL: f64 = 1e-10;
/// Largest relative deviation from proportionality for a Milne pair.
pub const PARALLEL_TOL: f64 = 1e-4;
/// Smallest admissible `|γ − 1|`.
pub const GAMMA_GAP: f64 = 0.05;
/// Default truncation degree.
pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("`{scheme}` fails order {order}: degree-{degree} residual {residual:e}")]
    FailsOrder {
        scheme: String,
        order: usize,
        degree: usize,
        residual: f64,
    },
    #[error("order {0} needs degree {1}, above the supported maximum")]
    OrderTooHigh(usize, usize),
    #[error("schemes act on different operator counts ({0} vs {1})")]
    OperatorMismatch(usize, usize),
    #[error("schemes have different orders ({0} vs {1})")]
    OrderMismatch(usize, usize),
    #[error("basic scheme has vanishing leading defect; no Milne configuration")]
    ZeroBasicDefect,
    #[error("gamma = {0} too close to 1 (|γ−1| < {GAMMA_GAP})")]
    GammaNearOne(f64),
}

fn series_from_factors<T: Coeff>(
    n: usize,
    factors: impl IntoIterator<Item = (usize, T)>,
    max_degree: usize,
) -> Result<FreePoly<T>, AlgebraError> {
    let mut p = FreePoly::unit(n, max_degree)?;
    for (op, c) in factors {
        p = p.exp_mul_left(op, &c);
    }
    Ok(p)
}

/// Truncated series of the scheme product in `f64`.
pub fn scheme_series(s: &SchemeTable, max_degree: usize) -> Result<FreePoly<f64>, AlgebraError> {
    series_from_factors(s.n_ops(), s.factor_values(), max_degree)
}

/// Truncated series with every factor scaled by `scale` (step `scale·h`).
pub fn scheme_series_scaled(
    s: &SchemeTable,
    max_degree: usize,
    scale: f64,
) -> Result<FreePoly<f64>, AlgebraError> {
    series_from_factors(
        s.n_ops(),
        s.factor_values().into_iter().map(|(op, c)| (op, c * scale)),
        max_degree,
    )
}

/// Generator defect of a factor list `(op, c)` in application order.
pub fn factor_defect(
    n: usize,
    factors: &[(usize, f64)],
    max_degree: usize,
) -> Result<FreePoly<f64>, AlgebraError> {
    generator_defect(&series_from_factors(n, factors.iter().copied(), max_degree)?)
}

/// Lyndon-word coefficients of the `d`-th `h`-derivative of the degree-`d`
/// part of a defect, i.e. `d!` times the word coefficients.
pub fn derivative_coeffs(defect: &FreePoly<f64>, degree: usize) -> Result<Vec<f64>, AlgebraError> {
    let fact = factorial(degree);
    Ok(lyndon_word_coefficients(defect, degree)?
        .into_iter()
        .map(|c| fact * c)
        .collect())
}

/// Truncated series in exact rational arithmetic.
pub fn scheme_series_exact(
    s: &SchemeTable,
    max_degree: usize,
) -> Result<FreePoly<BigRational>, AlgebraError> {
    series_from_factors(
        s.n_ops(),
        s.factors().into_iter().map(|(op, c)| (op, c.exact().clone())),
        max_degree,
    )
}

/// `log(series) − Σ_ℓ A_ℓ`.
pub fn generator_defect<T: Coeff>(series: &FreePoly<T>) -> Result<FreePoly<T>, AlgebraError> {
    let sum = FreePoly::letter_sum(series.letters(), series.max_degree())?;
    series.log_truncated()?.sub(&sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    /// Entry `d−1` is the degree-`d` residual norm.
    pub residual_norm_by_degree: Vec<f64>,
    /// Non-Lie remainder per degree (zero for products of exponentials).
    pub lie_residual_by_degree: Vec<f64>,
    pub verified_order: usize,
}

impl OrderReport {
    pub fn residual(&self, degree: usize) -> f64 {
        self.residual_norm_by_degree[degree - 1]
    }
}

fn order_report_from_defect<T: Coeff>(defect: &FreePoly<T>, tol: f64) -> Result<OrderReport, AlgebraError> {
    let n = defect.letters();
    let mut residuals = vec![defect.grade_norm(1)];
    let mut lie = vec![0.0];
    for d in 2..=defect.max_degree() {
        let basis = lyndon_basis::<T>(n, d, defect.max_degree())?;
        let (coords, rest) = lie_coordinates(defect, &basis)?;
        residuals.push(coords.iter().map(|c| c.to_f64().powi(2)).sum::<f64>().sqrt());
        lie.push(rest.grade_norm(d));
    }
    let verified_order = residuals.iter().take_while(|r| **r <= tol).count();
    Ok(OrderReport {
        residual_norm_by_degree: residuals,
        lie_residual_by_degree: lie,
        verified_order,
    })
}

/// Order-condition residuals up to the default degree 3.
pub fn order_residuals(s: &SchemeTable) -> Result<OrderReport, AlgebraError> {
    order_residuals_to(s, DEFAULT_DEGREE)
}

pub fn order_residuals_to(s: &SchemeTable, max_degree: usize) -> Result<OrderReport, AlgebraError> {
    order_report_from_defect(&generator_defect(&scheme_series(s, max_degree)?)?, ORDER_TOL)
}

/// Bracket coordinates of every degree of the defect, in exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOrderReport {
    /// Entry `d−1` holds the degree-`d` coordinates (word coefficients at degree 1).
    pub coords_by_degree: Vec<Vec<BigRational>>,
    /// Whether the degree-`d` component is exactly a Lie element.
    pub is_lie_by_degree: Vec<bool>,
}

impl ExactOrderReport {
    pub fn vanishes(&self, degree: usize) -> bool {
        self.coords_by_degree[degree - 1].iter().all(Zero::is_zero)
    }
}

pub fn order_residuals_exact(
    s: &SchemeTable,
    max_degree: usize,
) -> Result<ExactOrderReport, AlgebraError> {
    let defect = generator_defect(&scheme_series_exact(s, max_degree)?)?;
    let n = s.n_ops();
    let mut coords = vec![defect.grade(1).to_vec()];
    let mut is_lie = vec![true];
    for d in 2..=max_degree {
        let basis = lyndon_basis::<BigRational>(n, d, max_degree)?;
        let (c, rest) = lie_coordinates(&defect, &basis)?;
        coords.push(c);
        is_lie.push(rest.is_zero());
    }
    Ok(ExactOrderReport {
        coords_by_degree: coords,
        is_lie_by_degree: is_lie,
    })
}

/// Coefficients of the leading local error term of an order-`p` scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingDefect {
    pub degree: usize,
    /// Lyndon words indexing both coordinate vectors.
    pub basis: Vec<Word>,
    pub coeffs: Vec<f64>,
    pub bracket_coeffs: Vec<f64>,
    pub lie_residual: f64,
}

impl LeadingDefect {
    /// Local error measure: Euclidean norm of `coeffs`.
    pub fn lem(&self) -> f64 {
        norm(&self.coeffs)
    }

    /// Euclidean norm of the bracket-basis coordinates.
    pub fn bracket_norm(&self) -> f64 {
        norm(&self.bracket_coeffs)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub fn leading_defect(s: &SchemeTable) -> Result<LeadingDefect, AnalysisError> {
    leading_defect_scaled(s, 1.0)
}

/// Leading defect computed with the internal step rescaled by `scale`; the
/// result is normalized back, so it agrees with [`leading_defect`].
pub fn leading_defect_scaled(s: &SchemeTable, scale: f64) -> Result<LeadingDefect, AnalysisError> {
    let p = s.order();
    let degree = p + 1;
    if degree > crate::free_algebra::MAX_DEGREE {
        return Err(AnalysisError::OrderTooHigh(p, degree));
    }
    let series = scheme_series_scaled(s, degree.max(2), scale)?;
    let sum = FreePoly::letter_sum(series.letters(), series.max_degree())?.scale(&scale);
    let defect = series.log_truncated()?.sub(&sum)?;
    let report = order_report_from_defect(&defect, ORDER_TOL)?;
    for d in 1..=p {
        // residuals of lower degrees carry scale^d
        let r = report.residual(d) / scale.abs().powi(d as i32);
        if r > ORDER_TOL {
            return Err(AnalysisError::FailsOrder {
                scheme: s.name().to_string(),
                order: p,
                degree: d,
                residual: r,
            });
        }
    }
    leading_from_defect(&defect, degree, scale)
}

fn leading_from_defect(
    defect: &FreePoly<f64>,
    degree: usize,
    scale: f64,
) -> Result<LeadingDefect, AnalysisError> {
    let n = defect.letters();
    let norm_factor = scale.powi(degree as i32);
    let basis = lyndon_basis::<f64>(n, degree, defect.max_degree())?;
    let component = defect.homogeneous(degree);
    let words = derivative_coeffs(&component, degree)?;
    let projection = lie_project(&component, &basis);
    Ok(LeadingDefect {
        degree,
        basis: basis.iter().map(|b| b.word.clone()).collect(),
        coeffs: words.iter().map(|c| c / norm_factor).collect(),
        bracket_coeffs: projection.coeffs.iter().map(|c| c / norm_factor).collect(),
        lie_residual: projection.residual / norm_factor,
    })
}

/// Local error measure of an order-`p` scheme.
pub fn lem(s: &SchemeTable) -> Result<f64, AnalysisError> {
    Ok(leading_defect(s)?.lem())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub gamma: f64,
    /// `‖c2 − γc1‖ / ‖c2‖`
    pub parallelism_defect: f64,
}

impl GammaFit {
    pub fn is_milne_pair(&self) -> bool {
        self.parallelism_defect <= PARALLEL_TOL && (self.gamma - 1.0).abs() >= GAMMA_GAP
    }
}

/// Ratio of the partner's leading defect to the basic one's.
pub fn gamma_of_pair(basic: &SchemeTable, partner: &SchemeTable) -> Result<GammaFit, AnalysisError> {
    if basic.n_ops() != partner.n_ops() {
        return Err(AnalysisError::OperatorMismatch(basic.n_ops(), partner.n_ops()));
    }
    if basic.order() != partner.order() {
        return Err(AnalysisError::OrderMismatch(basic.order(), partner.order()));
    }
    let c1 = leading_defect(basic)?.coeffs;
    let c2 = leading_defect(partner)?.coeffs;
    gamma_of_vectors(&c1, &c2)
}

pub fn gamma_of_vectors(c1: &[f64], c2: &[f64]) -> Result<GammaFit, AnalysisError> {
    let c1c1: f64 = c1.iter().map(|x| x * x).sum();
    if c1c1.sqrt() < 1e-14 {
        return Err(AnalysisError::ZeroBasicDefect);
    }
    let gamma = c1.iter().zip(c2).map(|(a, b)| a * b).sum::<f64>() / c1c1;
    if (gamma - 1.0).abs() < GAMMA_GAP {
        return Err(AnalysisError::GammaNearOne(gamma));
    }
    let diff: Vec<f64> = c1.iter().zip(c2).map(|(a, b)| b - gamma * a).collect();
    let c2n = norm(c2);
    let parallelism_defect = if c2n > 0.0 { norm(&diff) / c2n } else { 0.0 };
    Ok(GammaFit {
        gamma,
        parallelism_defect,
    })
}

/// Weight `1/(1−γ)` of the Milne error estimate.
pub fn milne_weight(pair: &MilnePair) -> Result<f64, AnalysisError> {
    milne_weight_of(pair.gamma)
}

pub fn milne_weight_of(gamma: f64) -> Result<f64, AnalysisError> {
    if (gamma - 1.0).abs() < 1e-12 {
        return Err(AnalysisError::GammaNearOne(gamma));
    }
    Ok(1.0 / (1.0 - gamma))
}

/// Order report of the combination `−γ/(1−γ)·S + 1/(1−γ)·S̃`, formed at the
/// series level and analyzed up to `max_degree`.
pub fn milne_combination_report(pair: &MilnePair, max_degree: usize) -> Result<OrderReport, AnalysisError> {
    let w = milne_weight(pair)?;
    let s1 = scheme_series(&pair.basic, max_degree)?;
    let s2 = scheme_series(&pair.partner, max_degree)?;
    let combined = s1.scale(&(-pair.gamma * w)).add(&s2.scale(&w))?;
    Ok(order_report_from_defect(&generator_defect(&combined)?, ORDER_TOL)?)
}
