//! Numerical construction of second-order splitting schemes with small local
//! error measure, optionally nonnegative and optionally proportional to a
//! given scheme's leading defect (Milne partners).
//!
//! Equality constraints (consistency, degree-2 conditions and, for partners,
//! proportionality) are enforced by a Gauss–Newton projection with
//! least-norm steps. Random multistarts are refined with Nelder–Mead on the
//! LEM of the projected point.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    self, derivative_coeffs, factor_defect, gamma_of_pair, AnalysisError, GammaFit, GAMMA_GAP,
};
use crate::free_algebra::AlgebraError;
use crate::schemes::{Coefficient, MilnePair, SchemeError, SchemeTable, Tag};

/// Residual below which the projection counts as feasible.
pub const FEASIBLE_TOL: f64 = 1e-10;
/// Order-condition residual required of returned schemes.
pub const POLISHED_TOL: f64 = 1e-8;
/// Largest parallelism defect accepted for a derived Milne partner.
pub const PARTNER_PARALLEL_TOL: f64 = 1e-6;
const GN_ITERATIONS: usize = 40;
const FD_STEP: f64 = 1e-7;
const INFEASIBLE_PENALTY: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("budget allows no multistarts")]
    EmptyBudget,
    #[error("invalid optimization request: {0}")]
    BadSpec(String),
    #[error("no feasible point within budget; best residual {best_residual:e}")]
    Infeasible { best_residual: f64 },
    #[error("no admissible partner; best parallelism defect {parallelism:e}, gamma {gamma}")]
    NoPartner { parallelism: f64, gamma: f64 },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedCoefficient {
    /// 1-based operator index.
    pub op: usize,
    /// 1-based stage index.
    pub stage: usize,
    pub value: f64,
}

/// Proportionality target for a Milne partner.
#[derive(Debug, Clone, PartialEq)]
pub struct MilneTarget {
    pub basic: SchemeTable,
    /// Smallest admissible `|γ − 1|`.
    pub min_gamma_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSpec {
    pub n_ops: usize,
    pub stages: usize,
    pub nonnegative: bool,
    pub fixed: Vec<FixedCoefficient>,
    pub milne_target: Option<MilneTarget>,
    pub multistarts: usize,
    /// Nelder–Mead iteration cap per start.
    pub max_iter: usize,
    pub seed: u64,
}

impl OptimizeSpec {
    pub fn new(n_ops: usize, stages: usize) -> Self {
        OptimizeSpec {
            n_ops,
            stages,
            nonnegative: false,
            fixed: Vec::new(),
            milne_target: None,
            multistarts: 32,
            max_iter: 600,
            seed: 0,
        }
    }

    pub fn nonnegative(mut self, yes: bool) -> Self {
        self.nonnegative = yes;
        self
    }

    pub fn budget(mut self, multistarts: usize, max_iter: usize) -> Self {
        self.multistarts = multistarts;
        self.max_iter = max_iter;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn milne_of(mut self, basic: SchemeTable) -> Self {
        self.milne_target = Some(MilneTarget {
            basic,
            min_gamma_gap: GAMMA_GAP,
        });
        self
    }

    fn constraint_count(&self) -> usize {
        let n = self.n_ops;
        let mut m = n + n * (n - 1) / 2;
        if self.milne_target.is_some() {
            m += crate::free_algebra::lyndon_count(n, 3) - 1;
        }
        m
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::BadSpec(m));
        if self.n_ops < 2 || self.n_ops > crate::free_algebra::MAX_LETTERS {
            return bad(format!("operator count {} unsupported", self.n_ops));
        }
        if self.stages == 0 {
            return bad("need at least one stage".into());
        }
        for f in &self.fixed {
            if f.op == 0 || f.op > self.n_ops || f.stage == 0 || f.stage > self.stages {
                return bad(format!("fixed entry a[{}][{}] out of range", f.op, f.stage));
            }
            if self.nonnegative && f.value < 0.0 {
                return bad(format!("fixed entry a[{}][{}] is negative", f.op, f.stage));
            }
        }
        let free = self.n_ops * self.stages - self.fixed.len();
        if free < self.constraint_count() {
            return bad(format!(
                "{free} free coefficients for {} conditions",
                self.constraint_count()
            ));
        }
        if let Some(t) = &self.milne_target {
            if t.basic.n_ops() != self.n_ops {
                return bad("basic scheme acts on a different operator count".into());
            }
        }
        if self.multistarts == 0 {
            return Err(OptimizeError::EmptyBudget);
        }
        Ok(())
    }
}

/// Coefficient vector layout: `x[(op−1)·stages + (stage−1)]`.
struct Problem {
    n: usize,
    k: usize,
    nonnegative: bool,
    base: Vec<f64>,
    free: Vec<usize>,
    /// Unit vector along the basic scheme's leading defect.
    milne_direction: Option<Vec<f64>>,
    /// Orthonormal basis of its orthogonal complement.
    milne_complement: Vec<Vec<f64>>,
    min_gamma_gap: f64,
    basic_norm: f64,
}

struct Evaluated {
    constraints: Vec<f64>,
    third: Option<Vec<f64>>,
}

impl Problem {
    fn factors(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut f = Vec::with_capacity(self.n * self.k);
        for stage in 0..self.k {
            for op in 0..self.n {
                let c = x[op * self.k + stage];
                if c != 0.0 {
                    f.push((op + 1, c));
                }
            }
        }
        f
    }

    fn evaluate(&self, x: &[f64], need_third: bool) -> Result<Evaluated, AlgebraError> {
        let third = need_third || self.milne_direction.is_some();
        let defect = factor_defect(self.n, &self.factors(x), if third { 3 } else { 2 })?;
        let mut constraints = defect.grade(1).to_vec();
        constraints.extend(derivative_coeffs(&defect, 2)?);
        let c3 = if third {
            Some(derivative_coeffs(&defect, 3)?)
        } else {
            None
        };
        if let Some(c3) = &c3 {
            for w in &self.milne_complement {
                constraints.push(w.iter().zip(c3).map(|(a, b)| a * b).sum());
            }
        }
        Ok(Evaluated {
            constraints,
            third: c3,
        })
    }

    fn constraints(&self, x: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        Ok(self.evaluate(x, false)?.constraints)
    }

    fn assemble(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.base.clone();
        for (&i, &v) in self.free.iter().zip(y) {
            x[i] = if self.nonnegative { v.max(0.0) } else { v };
        }
        x
    }

    /// Gauss–Newton projection onto the constraint set. Returns the point and
    /// its residual norm.
    fn project(&self, x0: &[f64]) -> Result<(Vec<f64>, f64), AlgebraError> {
        let mut x = x0.to_vec();
        let mut active: BTreeSet<usize> = BTreeSet::new();
        let mut c = self.constraints(&x)?;
        let mut r = norm(&c);
        for _ in 0..GN_ITERATIONS {
            if r < 1e-14 {
                break;
            }
            let r_before = r;
            let vars: Vec<usize> = self
                .free
                .iter()
                .copied()
                .filter(|i| !active.contains(i))
                .collect();
            if vars.is_empty() {
                break;
            }
            let mut jac = DMatrix::zeros(c.len(), vars.len());
            for (col, &i) in vars.iter().enumerate() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += FD_STEP;
                xm[i] -= FD_STEP;
                let (cp, cm) = (self.constraints(&xp)?, self.constraints(&xm)?);
                for row in 0..c.len() {
                    jac[(row, col)] = (cp[row] - cm[row]) / (2.0 * FD_STEP);
                }
            }
            let rhs = DVector::from_iterator(c.len(), c.iter().map(|v| -v));
            let svd = jac.svd(true, true);
            let smax = svd.singular_values.max();
            let Ok(delta) = svd.solve(&rhs, 1e-10 * smax) else {
                break;
            };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..12 {
                let mut trial = x.clone();
                for (&i, d) in vars.iter().zip(delta.iter()) {
                    trial[i] += t * d;
                }
                let mut newly = Vec::new();
                if self.nonnegative {
                    for &i in &vars {
                        if trial[i] < 0.0 {
                            trial[i] = 0.0;
                            newly.push(i);
                        }
                    }
                }
                let ct = self.constraints(&trial)?;
                let rt = norm(&ct);
                if rt < r || !newly.is_empty() {
                    x = trial;
                    c = ct;
                    r = rt;
                    active.extend(newly);
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved || (r < FEASIBLE_TOL && r > 0.25 * r_before) {
                break;
            }
        }
        Ok((x, r))
    }

    /// LEM of the projected point, or a penalty when infeasible.
    fn objective(&self, y: &[f64]) -> f64 {
        let x = self.assemble(y);
        let Ok((xp, r)) = self.project(&x) else {
            return f64::INFINITY;
        };
        if r > FEASIBLE_TOL {
            return INFEASIBLE_PENALTY + r;
        }
        let Ok(ev) = self.evaluate(&xp, true) else {
            return f64::INFINITY;
        };
        let c3 = ev.third.expect("requested");
        let lem = norm(&c3);
        if let Some(u) = &self.milne_direction {
            let gamma = u.iter().zip(&c3).map(|(a, b)| a * b).sum::<f64>() / self.basic_norm;
            let gap = (gamma - 1.0).abs();
            if gap < self.min_gamma_gap {
                return INFEASIBLE_PENALTY / 10.0 + (self.min_gamma_gap - gap);
            }
        }
        lem
    }
}

/// Orthonormal basis of the complement of the unit vector `u`.
fn orthogonal_complement(u: &[f64]) -> Vec<Vec<f64>> {
    let m = u.len();
    let mut basis: Vec<Vec<f64>> = vec![u.to_vec()];
    for i in 0..m {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        for b in &basis {
            let d: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let nv = norm(&v);
        if nv > 1e-6 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
        if basis.len() == m {
            break;
        }
    }
    basis.split_off(1)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Plain Nelder–Mead; returns the best vertex and its value.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[d] - values[0]).abs() <= ftol * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
        } else {
            let (xc, fc) = if fr < values[d] {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[d].min(fr) {
                simplex[d] = xc;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    let v: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    values[i] = f(&v);
                    simplex[i] = v;
                }
            }
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty simplex");
    (simplex[best].clone(), values[best])
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub scheme: SchemeTable,
    pub lem: f64,
    /// Largest order-condition residual (degrees 1 and 2) of `scheme`.
    pub residual: f64,
    pub best_start: usize,
    /// Best objective reached by each start.
    pub start_values: Vec<f64>,
    pub gamma: Option<GammaFit>,
}

fn build_problem(spec: &OptimizeSpec) -> Result<Problem, OptimizeError> {
    let (n, k) = (spec.n_ops, spec.stages);
    let mut base = vec![0.0; n * k];
    let mut fixed = BTreeSet::new();
    for f in &spec.fixed {
        let i = (f.op - 1) * k + (f.stage - 1);
        base[i] = f.value;
        fixed.insert(i);
    }
    let free = (0..n * k).filter(|i| !fixed.contains(i)).collect();
    let (milne_direction, basic_norm, min_gamma_gap) = match &spec.milne_target {
        Some(t) => {
            if t.basic.order() != 2 {
                return Err(OptimizeError::BadSpec("basic scheme must have order 2".into()));
            }
            let c1 = analysis::leading_defect(&t.basic)?.coeffs;
            let nrm = norm(&c1);
            if nrm < 1e-14 {
                return Err(AnalysisError::ZeroBasicDefect.into());
            }
            (
                Some(c1.iter().map(|c| c / nrm).collect()),
                nrm,
                t.min_gamma_gap,
            )
        }
        None => (None, 1.0, 0.0),
    };
    let milne_complement = milne_direction
        .as_deref()
        .map(orthogonal_complement)
        .unwrap_or_default();
    Ok(Problem {
        n,
        k,
        nonnegative: spec.nonnegative,
        base,
        free,
        milne_direction,
        milne_complement,
        min_gamma_gap,
        basic_norm,
    })
}

fn start_point(p: &Problem, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut x = p.base.clone();
    for &i in &p.free {
        x[i] = if p.nonnegative {
            rng.random_range(0.0..1.0)
        } else {
            rng.random_range(-0.5..1.0)
        };
    }
    // rescale free entries so that each operator's coefficients sum to one
    for op in 0..p.n {
        let row = op * p.k..(op + 1) * p.k;
        let fixed_sum: f64 = row.clone().filter(|i| !p.free.contains(i)).map(|i| x[i]).sum();
        let free_sum: f64 = row.clone().filter(|i| p.free.contains(i)).map(|i| x[i]).sum();
        if free_sum.abs() > 1e-3 {
            let scale = (1.0 - fixed_sum) / free_sum;
            for i in row.filter(|i| p.free.contains(i)) {
                x[i] *= scale;
            }
        }
    }
    p.free.iter().map(|&i| x[i]).collect()
}

fn table_from_vector(
    name: &str,
    n: usize,
    k: usize,
    x: &[f64],
    nonnegative: bool,
) -> Result<SchemeTable, SchemeError> {
    let coeffs: Vec<Vec<Coefficient>> = (0..n)
        .map(|op| {
            (0..k)
                .map(|stage| {
                    let v = x[op * k + stage];
                    Coefficient::from_f64(if nonnegative { v.max(0.0) } else { v })
                })
                .collect()
        })
        .collect();
    let mut tags = Vec::new();
    if x.iter().all(|v| *v >= 0.0) || nonnegative {
        tags.push(Tag::Nonnegative);
    }
    SchemeTable::new(name, 2, coeffs, tags)
}

/// Minimizes the LEM over second-order schemes with the given shape.
///
/// Start `i` draws from stream `i` of the seeded generator, so the result for
/// a budget of `m` starts only depends on the first `m` streams.
pub fn optimize_scheme(spec: &OptimizeSpec) -> Result<OptimizeResult, OptimizeError> {
    spec.validate()?;
    let p = build_problem(spec)?;
    let runs: Vec<(Vec<f64>, f64)> = (0..spec.multistarts)
        .into_par_iter()
        .map(|i| {
            let y0 = start_point(&p, spec.seed, i);
            nelder_mead(|y| p.objective(y), &y0, 0.05, spec.max_iter, 1e-13)
        })
        .collect();
    let start_values: Vec<f64> = runs.iter().map(|(_, v)| *v).collect();
    let best_start = (0..runs.len())
        .min_by(|&a, &b| start_values[a].total_cmp(&start_values[b]).then(a.cmp(&b)))
        .expect("at least one start");
    let (y, value) = &runs[best_start];
    let (x, residual) = p.project(&p.assemble(y))?;
    if !(residual <= FEASIBLE_TOL) || *value >= INFEASIBLE_PENALTY / 10.0 {
        return Err(OptimizeError::Infeasible {
            best_residual: residual,
        });
    }
    let name = format!(
        "opt-{}-{}{}",
        spec.n_ops,
        spec.stages,
        if spec.nonnegative { "-pos" } else { "" }
    );
    let scheme = table_from_vector(&name, spec.n_ops, spec.stages, &x, spec.nonnegative)?;
    let report = analysis::order_residuals_to(&scheme, 2)?;
    let residual = report.residual(1).max(report.residual(2));
    if residual > POLISHED_TOL {
        return Err(OptimizeError::Infeasible {
            best_residual: residual,
        });
    }
    let lem = analysis::lem(&scheme)?;
    let gamma = match &spec.milne_target {
        Some(t) => Some(gamma_of_pair(&t.basic, &scheme)?),
        None => None,
    };
    let scheme = scheme.with_notes(vec![
        format!(
            "optimized: seed {}, {} starts, {} iterations per start",
            spec.seed, spec.multistarts, spec.max_iter
        ),
        format!("best start {best_start}, LEM {lem:.8}, order-2 residual {residual:.3e}"),
    ]);
    Ok(OptimizeResult {
        scheme,
        lem,
        residual,
        best_start,
        start_values,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartnerResult {
    pub pair: MilnePair,
    pub partner_lem: f64,
    pub fit: GammaFit,
}

/// Searches a second-order partner whose leading defect is a multiple
/// `γ ≠ 1` of the basic scheme's, minimizing the partner's LEM.
pub fn derive_milne_partner(
    basic: &SchemeTable,
    stages: usize,
    nonnegative: bool,
    multistarts: usize,
    seed: u64,
) -> Result<PartnerResult, OptimizeError> {
    let d = analysis::leading_defect(basic)?;
    if d.lem() < 1e-14 {
        return Err(AnalysisError::ZeroBasicDefect.into());
    }
    let spec = OptimizeSpec::new(basic.n_ops(), stages)
        .nonnegative(nonnegative)
        .budget(multistarts, 600)
        .seed(seed)
        .milne_of(basic.clone());
    let res = match optimize_scheme(&spec) {
        Ok(r) => r,
        Err(OptimizeError::Infeasible { best_residual }) => {
            return Err(OptimizeError::NoPartner {
                parallelism: best_residual,
                gamma: f64::NAN,
            })
        }
        Err(e) => return Err(e),
    };
    let fit = res.gamma.expect("milne target set");
    if fit.parallelism_defect > PARTNER_PARALLEL_TOL || (fit.gamma - 1.0).abs() < GAMMA_GAP {
        return Err(OptimizeError::NoPartner {
            parallelism: fit.parallelism_defect,
            gamma: fit.gamma,
        });
    }
    let partner = res
        .scheme
        .with_name(format!("{}-partner", basic.name()));
    let pair = MilnePair::new(basic.clone(), partner, fit.gamma)?;
    Ok(PartnerResult {
        pair,
        partner_lem: res.lem,
        fit,
    })
}

/// Projects a table with truncated decimal coefficients onto the consistency
/// and (for order ≥ 2) degree-2 conditions by a least-norm correction of its
/// nonzero entries. Zero entries stay zero and nonnegative tables stay
/// nonnegative.
pub fn restore_precision(s: &SchemeTable) -> Result<SchemeTable, OptimizeError> {
    let (n, k) = (s.n_ops(), s.stages());
    let x0: Vec<f64> = (1..=n)
        .flat_map(|op| (1..=k).map(move |st| (op, st)))
        .map(|(op, st)| s.value(op, st))
        .collect();
    let nonnegative = s.tags().contains(&Tag::Nonnegative);
    let p = Problem {
        n,
        k,
        nonnegative,
        base: x0.clone(),
        free: (0..n * k).filter(|&i| x0[i] != 0.0).collect(),
        milne_direction: None,
        milne_complement: Vec::new(),
        min_gamma_gap: 0.0,
        basic_norm: 1.0,
    };
    let (x, r) = if s.order() >= 2 {
        p.project(&x0)?
    } else {
        // consistency only: rescale each operator's row
        let mut x = x0.clone();
        for op in 0..n {
            let sum: f64 = x[op * k..(op + 1) * k].iter().sum();
            for v in &mut x[op * k..(op + 1) * k] {
                *v /= sum;
            }
        }
        (x, 0.0)
    };
    if r > FEASIBLE_TOL {
        return Err(OptimizeError::Infeasible { best_residual: r });
    }
    if x == x0 {
        return Ok(s.clone());
    }
    let coeffs: Vec<Vec<Coefficient>> = (0..n)
        .map(|op| (0..k).map(|st| Coefficient::from_f64(x[op * k + st])).collect())
        .collect();
    let mut notes = s.notes().to_vec();
    notes.push("trailing digits restored by least-norm projection onto the order conditions".into());
    Ok(
        SchemeTable::new(s.name(), s.order(), coeffs, s.tags().iter().copied())?
            .with_notes(notes),
    )
}
