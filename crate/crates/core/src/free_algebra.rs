//! Truncated free associative algebra over `n` non-commuting letters.
//!
//! Letters are the operator indices `1..=n`. A [`FreePoly`] stores every word
//! up to the truncation degree densely, graded by length; within one grade the
//! words are laid out in lexicographic order (letter `1` smallest), so the
//! storage index of a word is its base-`n` numeral.
//!
//! Products of exponentials of single letters are the series-level picture of
//! a splitting step, and the truncated logarithm of such a product is the
//! BCH generator whose low-degree components carry the order conditions.

use std::fmt;
use std::ops::Neg;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};
use thiserror::Error;

/// Largest supported truncation degree.
pub const MAX_DEGREE: usize = 4;

/// Largest supported letter count.
pub const MAX_LETTERS: usize = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("degree {degree} outside the supported range {min}..={max}")]
    DegreeOutOfRange { degree: usize, min: usize, max: usize },
    #[error("letter count {0} outside 1..={MAX_LETTERS}")]
    LetterCount(usize),
    #[error("letter {letter} outside 1..={n}")]
    LetterOutOfRange { letter: usize, n: usize },
    #[error("operands differ: ({n1} letters, degree {d1}) vs ({n2} letters, degree {d2})")]
    Mismatch {
        n1: usize,
        d1: usize,
        n2: usize,
        d2: usize,
    },
    #[error("logarithm needs unit constant term, found {0}")]
    NonUnitConstant(f64),
}

/// Scalar field the algebra is built over.
///
/// `f64` is used for optimization loops, [`BigRational`] when coefficients are
/// finite decimals and exact cancellation matters.
pub trait Coeff: Num + Clone + PartialEq + fmt::Debug + Neg<Output = Self> + Send + Sync {
    fn from_ratio(num: i64, den: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coeff for f64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Coeff for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(num.into(), den.into())
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// A word over the letters `1..=n`. The empty word is the algebra unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(letters: &[usize], n: usize) -> Result<Self, AlgebraError> {
        if letters.len() > MAX_DEGREE {
            return Err(AlgebraError::DegreeOutOfRange {
                degree: letters.len(),
                min: 0,
                max: MAX_DEGREE,
            });
        }
        for &l in letters {
            if l == 0 || l > n {
                return Err(AlgebraError::LetterOutOfRange { letter: l, n });
            }
        }
        Ok(Word(letters.iter().map(|&l| l as u8).collect()))
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letters(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&l| l as usize)
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    fn index(&self, n: usize) -> usize {
        self.0.iter().fold(0, |acc, &l| acc * n + (l as usize - 1))
    }

    fn from_index(mut idx: usize, degree: usize, n: usize) -> Self {
        let mut letters = vec![0u8; degree];
        for slot in letters.iter_mut().rev() {
            *slot = (idx % n + 1) as u8;
            idx /= n;
        }
        Word(letters)
    }

    /// Strictly smaller than every proper rotation.
    pub fn is_lyndon(&self) -> bool {
        let w = &self.0;
        if w.is_empty() {
            return false;
        }
        (1..w.len()).all(|i| {
            let rotated: Vec<u8> = w[i..].iter().chain(&w[..i]).copied().collect();
            w.as_slice() < rotated.as_slice()
        })
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

/// All `n^d` words of degree `d`, in lexicographic order.
pub fn enumerate_words(n: usize, d: usize) -> Result<Vec<Word>, AlgebraError> {
    check_letters(n)?;
    if d == 0 || d > MAX_DEGREE {
        return Err(AlgebraError::DegreeOutOfRange {
            degree: d,
            min: 1,
            max: MAX_DEGREE,
        });
    }
    Ok((0..n.pow(d as u32))
        .map(|i| Word::from_index(i, d, n))
        .collect())
}

fn check_letters(n: usize) -> Result<(), AlgebraError> {
    if n == 0 || n > MAX_LETTERS {
        Err(AlgebraError::LetterCount(n))
    } else {
        Ok(())
    }
}

/// Element of the free associative algebra truncated above `max_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreePoly<T> {
    n: usize,
    max_degree: usize,
    grades: Vec<Vec<T>>,
}

impl<T: Coeff> FreePoly<T> {
    pub fn zero(n: usize, max_degree: usize) -> Result<Self, AlgebraError> {
        check_letters(n)?;
        if !(2..=MAX_DEGREE).contains(&max_degree) {
            return Err(AlgebraError::DegreeOutOfRange {
                degree: max_degree,
                min: 2,
                max: MAX_DEGREE,
            });
        }
        let grades = (0..=max_degree)
            .map(|d| vec![T::zero(); n.pow(d as u32)])
            .collect();
        Ok(FreePoly {
            n,
            max_degree,
            grades,
        })
    }

    pub fn unit(n: usize, max_degree: usize) -> Result<Self, AlgebraError> {
        let mut p = Self::zero(n, max_degree)?;
        p.grades[0][0] = T::one();
        Ok(p)
    }

    pub fn letter(n: usize, max_degree: usize, letter: usize) -> Result<Self, AlgebraError> {
        let mut p = Self::zero(n, max_degree)?;
        let w = Word::new(&[letter], n)?;
        p.set(&w, T::one());
        Ok(p)
    }

    /// Sum of all letters, the generator of the exact flow.
    pub fn letter_sum(n: usize, max_degree: usize) -> Result<Self, AlgebraError> {
        let mut p = Self::zero(n, max_degree)?;
        p.grades[1].iter_mut().for_each(|c| *c = T::one());
        Ok(p)
    }

    /// `exp(c·A_letter)` truncated at `max_degree`.
    pub fn exp_single(
        letter: usize,
        c: T,
        n: usize,
        max_degree: usize,
    ) -> Result<Self, AlgebraError> {
        let mut p = Self::zero(n, max_degree)?;
        if letter == 0 || letter > n {
            return Err(AlgebraError::LetterOutOfRange { letter, n });
        }
        let mut term = T::one();
        p.grades[0][0] = T::one();
        for m in 1..=max_degree {
            term = term * c.clone() / T::from_ratio(m as i64, 1);
            let w = Word(vec![letter as u8; m]);
            p.set(&w, term.clone());
        }
        Ok(p)
    }

    pub fn letters(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Coefficients of degree `d`, indexed lexicographically.
    pub fn grade(&self, d: usize) -> &[T] {
        &self.grades[d]
    }

    pub fn coeff(&self, w: &Word) -> T {
        if w.degree() > self.max_degree {
            return T::zero();
        }
        self.grades[w.degree()][w.index(self.n)].clone()
    }

    pub fn set(&mut self, w: &Word, c: T) {
        if w.degree() <= self.max_degree {
            let idx = w.index(self.n);
            self.grades[w.degree()][idx] = c;
        }
    }

    /// Nonzero terms, in degree-then-lexicographic order.
    pub fn terms(&self) -> Vec<(Word, T)> {
        let mut out = Vec::new();
        for (d, grade) in self.grades.iter().enumerate() {
            for (i, c) in grade.iter().enumerate() {
                if !c.is_zero() {
                    out.push((Word::from_index(i, d, self.n), c.clone()));
                }
            }
        }
        out
    }

    fn check_same(&self, other: &Self) -> Result<(), AlgebraError> {
        if self.n != other.n || self.max_degree != other.max_degree {
            return Err(AlgebraError::Mismatch {
                n1: self.n,
                d1: self.max_degree,
                n2: other.n,
                d2: other.max_degree,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, AlgebraError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (g, h) in out.grades.iter_mut().zip(&other.grades) {
            for (a, b) in g.iter_mut().zip(h) {
                *a = a.clone() + b.clone();
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, AlgebraError> {
        self.add(&other.scale(&-T::one()))
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = self.clone();
        for g in out.grades.iter_mut() {
            for a in g.iter_mut() {
                *a = a.clone() * c.clone();
            }
        }
        out
    }

    /// Concatenation product, words longer than the truncation dropped.
    pub fn mul(&self, other: &Self) -> Result<Self, AlgebraError> {
        self.check_same(other)?;
        let mut out = Self::zero(self.n, self.max_degree)?;
        for du in 0..=self.max_degree {
            for dv in 0..=(self.max_degree - du) {
                let shift = self.n.pow(dv as u32);
                let target = &mut out.grades[du + dv];
                for (iu, a) in self.grades[du].iter().enumerate() {
                    if a.is_zero() {
                        continue;
                    }
                    let base = iu * shift;
                    for (iv, b) in other.grades[dv].iter().enumerate() {
                        if b.is_zero() {
                            continue;
                        }
                        let slot = &mut target[base + iv];
                        *slot = slot.clone() + a.clone() * b.clone();
                    }
                }
            }
        }
        Ok(out)
    }

    /// `exp(c·A_letter) · self` without forming the exponential.
    pub fn exp_mul_left(&self, letter: usize, c: &T) -> Self {
        let n = self.n;
        let mut out = self.clone();
        let mut power = T::one();
        let mut prefix = 0usize;
        for m in 1..=self.max_degree {
            power = power * c.clone() / T::from_ratio(m as i64, 1);
            prefix = prefix * n + (letter - 1);
            if power.is_zero() {
                break;
            }
            for dv in 0..=(self.max_degree - m) {
                let shift = n.pow(dv as u32);
                let base = prefix * shift;
                let target = &mut out.grades[m + dv];
                for (iv, b) in self.grades[dv].iter().enumerate() {
                    if b.is_zero() {
                        continue;
                    }
                    let slot = &mut target[base + iv];
                    *slot = slot.clone() + power.clone() * b.clone();
                }
            }
        }
        out
    }

    /// Only the degree-`d` component.
    pub fn homogeneous(&self, d: usize) -> Self {
        let mut out = Self::zero(self.n, self.max_degree).expect("valid shape");
        if d <= self.max_degree {
            out.grades[d] = self.grades[d].clone();
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.grades.iter().flatten().all(|c| c.is_zero())
    }

    /// Euclidean norm of the degree-`d` word coefficients.
    pub fn grade_norm(&self, d: usize) -> f64 {
        self.grades[d]
            .iter()
            .map(|c| c.to_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_f64(&self) -> FreePoly<f64> {
        FreePoly {
            n: self.n,
            max_degree: self.max_degree,
            grades: self
                .grades
                .iter()
                .map(|g| g.iter().map(Coeff::to_f64).collect())
                .collect(),
        }
    }

    /// `Σ_{m≥1} (−1)^{m+1}/m · (p − 1)^m`, truncated.
    pub fn log_truncated(&self) -> Result<Self, AlgebraError> {
        if self.grades[0][0] != T::one() {
            return Err(AlgebraError::NonUnitConstant(self.grades[0][0].to_f64()));
        }
        let mut x = self.clone();
        x.grades[0][0] = T::zero();
        let mut out = x.clone();
        let mut power = x.clone();
        for m in 2..=self.max_degree {
            power = power.mul(&x)?;
            let sign = if m % 2 == 0 { -1 } else { 1 };
            out = out.add(&power.scale(&T::from_ratio(sign, m as i64)))?;
        }
        Ok(out)
    }

    /// `Σ_m x^m / m!` truncated; the constant term of `self` is ignored.
    pub fn exp_truncated(&self) -> Result<Self, AlgebraError> {
        let mut x = self.clone();
        x.grades[0][0] = T::zero();
        let mut out = Self::unit(self.n, self.max_degree)?;
        let mut term = out.clone();
        for m in 1..=self.max_degree {
            term = term.mul(&x)?.scale(&T::from_ratio(1, m as i64));
            out = out.add(&term)?;
        }
        Ok(out)
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Result<Self, AlgebraError> {
        self.mul(other)?.sub(&other.mul(self)?)
    }
}

/// Bracketing of a Lyndon word by standard factorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bracket {
    Letter(usize),
    Commutator(Box<Bracket>, Box<Bracket>),
}

impl Bracket {
    /// Standard factorization `w = uv` with `v` the longest proper Lyndon suffix.
    pub fn standard(word: &Word) -> Bracket {
        let w = &word.0;
        if w.len() == 1 {
            return Bracket::Letter(w[0] as usize);
        }
        let split = (1..w.len())
            .find(|&i| Word(w[i..].to_vec()).is_lyndon())
            .expect("a single letter suffix is always Lyndon");
        Bracket::Commutator(
            Box::new(Bracket::standard(&Word(w[..split].to_vec()))),
            Box::new(Bracket::standard(&Word(w[split..].to_vec()))),
        )
    }

    pub fn expand<T: Coeff>(&self, n: usize, max_degree: usize) -> Result<FreePoly<T>, AlgebraError> {
        match self {
            Bracket::Letter(l) => FreePoly::letter(n, max_degree, *l),
            Bracket::Commutator(a, b) => a
                .expand::<T>(n, max_degree)?
                .commutator(&b.expand(n, max_degree)?),
        }
    }
}

impl fmt::Display for Bracket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bracket::Letter(l) => write!(f, "{l}"),
            Bracket::Commutator(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyndonElement<T> {
    pub word: Word,
    pub bracket: Bracket,
    pub expansion: FreePoly<T>,
}

/// Lyndon words of length `d`, ascending.
pub fn lyndon_words(n: usize, d: usize) -> Result<Vec<Word>, AlgebraError> {
    Ok(enumerate_words(n, d)?
        .into_iter()
        .filter(Word::is_lyndon)
        .collect())
}

/// Lyndon basis of the degree-`d` part of the free Lie algebra, ascending by word.
pub fn lyndon_basis<T: Coeff>(
    n: usize,
    d: usize,
    max_degree: usize,
) -> Result<Vec<LyndonElement<T>>, AlgebraError> {
    if d > max_degree {
        return Err(AlgebraError::DegreeOutOfRange {
            degree: d,
            min: 1,
            max: max_degree,
        });
    }
    lyndon_words(n, d)?
        .into_iter()
        .map(|word| {
            let bracket = Bracket::standard(&word);
            let expansion = bracket.expand(n, max_degree)?;
            Ok(LyndonElement {
                word,
                bracket,
                expansion,
            })
        })
        .collect()
}

/// Coefficients of `h` on the Lyndon words of degree `d`.
pub fn lyndon_word_coefficients<T: Coeff>(h: &FreePoly<T>, d: usize) -> Result<Vec<T>, AlgebraError> {
    Ok(lyndon_words(h.letters(), d)?
        .iter()
        .map(|w| h.coeff(w))
        .collect())
}

/// Coordinates of the degree-`d` part of `h` in the bracket basis, obtained by
/// forward substitution over the Lyndon words (each bracket contains its own
/// word with coefficient 1 and otherwise only larger words). The returned
/// remainder is zero exactly when that component is a Lie element.
pub fn lie_coordinates<T: Coeff>(
    h: &FreePoly<T>,
    basis: &[LyndonElement<T>],
) -> Result<(Vec<T>, FreePoly<T>), AlgebraError> {
    let Some(first) = basis.first() else {
        return Ok((Vec::new(), h.clone()));
    };
    let mut rest = h.homogeneous(first.word.degree());
    let mut coords = Vec::with_capacity(basis.len());
    for el in basis {
        let c = rest.coeff(&el.word);
        if !c.is_zero() {
            rest = rest.sub(&el.expansion.scale(&c))?;
        }
        coords.push(c);
    }
    Ok((coords, rest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieProjection {
    pub coeffs: Vec<f64>,
    pub residual: f64,
}

/// Least-squares fit of a homogeneous `h` by the bracket basis.
pub fn lie_project(h: &FreePoly<f64>, basis: &[LyndonElement<f64>]) -> LieProjection {
    let Some(first) = basis.first() else {
        return LieProjection {
            coeffs: Vec::new(),
            residual: 0.0,
        };
    };
    let d = first.word.degree();
    let target = DVector::from_column_slice(h.grade(d));
    let rows = target.len();
    let m = DMatrix::from_fn(rows, basis.len(), |r, c| basis[c].expansion.grade(d)[r]);
    let svd = m.clone().svd(true, true);
    let x = svd
        .solve(&target, 1e-13)
        .expect("SVD computed with both factors");
    let residual = (&m * &x - &target).norm();
    LieProjection {
        coeffs: x.iter().copied().collect(),
        residual,
    }
}

/// Necklace count `(1/d)·Σ_{e|d} μ(e)·n^{d/e}`.
pub fn lyndon_count(n: usize, d: usize) -> usize {
    let mut total: i64 = 0;
    for e in 1..=d {
        if d.is_multiple_of(e) {
            total += mobius(e) * (n as i64).pow((d / e) as u32);
        }
    }
    (total / d as i64) as usize
}

fn mobius(mut k: usize) -> i64 {
    let mut result = 1;
    let mut p = 2;
    while p * p <= k {
        if k.is_multiple_of(p) {
            k /= p;
            if k.is_multiple_of(p) {
                return 0;
            }
            result = -result;
        }
        p += 1;
    }
    if k > 1 {
        result = -result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::{One, Zero};
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::from_ratio(n, d)
    }

    #[test]
    fn words_are_lexicographic() {
        let w = enumerate_words(2, 1).unwrap();
        assert_eq!(w, vec![Word(vec![1]), Word(vec![2])]);
        let w = enumerate_words(2, 2).unwrap();
        let expect: Vec<Word> = [[1, 1], [1, 2], [2, 1], [2, 2]]
            .iter()
            .map(|l| Word(l.to_vec()))
            .collect();
        assert_eq!(w, expect);
        let w = enumerate_words(4, 3).unwrap();
        assert_eq!(w.len(), 64);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!(enumerate_words(2, 5).is_err());
        assert!(enumerate_words(2, 0).is_err());
    }

    #[test]
    fn product_of_letters() {
        let one = FreePoly::<BigRational>::unit(2, 3).unwrap();
        let a = one.add(&FreePoly::letter(2, 3, 1).unwrap()).unwrap();
        let b = one.add(&FreePoly::letter(2, 3, 2).unwrap()).unwrap();
        let ab = a.mul(&b).unwrap();
        let terms = ab.terms();
        assert_eq!(terms.len(), 4);
        assert_eq!(ab.coeff(&Word(vec![1, 2])), BigRational::one());
        assert_eq!(ab.coeff(&Word(vec![2, 1])), BigRational::zero());
        assert_eq!(a.mul(&one).unwrap(), a);
    }

    #[test]
    fn exp_addition_for_single_letter() {
        let (a, b) = (q(1, 3), q(2, 7));
        let lhs = FreePoly::exp_single(1, a.clone(), 2, 3)
            .unwrap()
            .mul(&FreePoly::exp_single(1, b.clone(), 2, 3).unwrap())
            .unwrap();
        let rhs = FreePoly::exp_single(1, a + b, 2, 3).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn exp_single_coefficients() {
        let p = FreePoly::<f64>::exp_single(1, 0.0, 2, 3).unwrap();
        assert_eq!(p, FreePoly::unit(2, 3).unwrap());
        let p = FreePoly::<BigRational>::exp_single(1, q(1, 1), 2, 2).unwrap();
        assert_eq!(p.coeff(&Word(vec![1, 1])), q(1, 2));
        let p = FreePoly::<f64>::exp_single(2, 0.5, 2, 3).unwrap();
        assert!((p.coeff(&Word(vec![2, 2, 2])) - 0.125 / 6.0).abs() < 1e-16);
        assert!((p.coeff(&Word(vec![2, 2, 2])) - 0.0208333).abs() < 1e-7);
    }

    #[test]
    fn exp_mul_left_matches_mul() {
        let mut p = FreePoly::<BigRational>::unit(3, 4).unwrap();
        for (l, c) in [(1, q(1, 2)), (3, q(-2, 3)), (2, q(5, 4))] {
            p = FreePoly::exp_single(l, c, 3, 4).unwrap().mul(&p).unwrap();
        }
        let mut r = FreePoly::<BigRational>::unit(3, 4).unwrap();
        for (l, c) in [(1, q(1, 2)), (3, q(-2, 3)), (2, q(5, 4))] {
            r = r.exp_mul_left(l, &c);
        }
        assert_eq!(p, r);
    }

    #[test]
    fn log_of_unit_and_single_exponential() {
        let one = FreePoly::<BigRational>::unit(2, 4).unwrap();
        assert!(one.log_truncated().unwrap().is_zero());
        let e = FreePoly::exp_single(1, q(3, 5), 2, 4).unwrap();
        let l = e.log_truncated().unwrap();
        let expect = FreePoly::letter(2, 4, 1).unwrap().scale(&q(3, 5));
        assert_eq!(l, expect);
        let bad = one.scale(&q(2, 1));
        assert!(matches!(
            bad.log_truncated(),
            Err(AlgebraError::NonUnitConstant(_))
        ));
    }

    #[test]
    fn strang_bch_degree_three() {
        // exp(A/2) exp(B) exp(A/2), A = letter 1, B = letter 2
        let half = q(1, 2);
        let mut p = FreePoly::<BigRational>::unit(2, 3).unwrap();
        p = p.exp_mul_left(1, &half);
        p = p.exp_mul_left(2, &q(1, 1));
        p = p.exp_mul_left(1, &half);
        let l = p.log_truncated().unwrap();
        let basis = lyndon_basis::<BigRational>(2, 3, 3).unwrap();
        assert_eq!(basis[0].bracket.to_string(), "[1,[1,2]]");
        assert_eq!(basis[1].bracket.to_string(), "[[1,2],2]");
        let (coords, rest) = lie_coordinates(&l.homogeneous(3), &basis).unwrap();
        assert!(rest.is_zero());
        // −1/24 [A,[A,B]] + 1/12 [B,[B,A]] and [B,[B,A]] = [[A,B],B]
        assert_eq!(coords, vec![q(-1, 24), q(1, 12)]);
        assert!(l.homogeneous(2).is_zero());

        let lf = l.to_f64();
        let basis_f = lyndon_basis::<f64>(2, 3, 3).unwrap();
        let proj = lie_project(&lf.homogeneous(3), &basis_f);
        assert!((proj.coeffs[0] + 1.0 / 24.0).abs() < 1e-14);
        assert!((proj.coeffs[1] - 1.0 / 12.0).abs() < 1e-14);
        assert!(proj.residual < 1e-12);
    }

    /// Independent check of the degree-3 BCH term using strictly upper
    /// triangular 4×4 matrices, where every product of four factors vanishes.
    #[test]
    fn strang_bch_against_nilpotent_matrices() {
        use nalgebra::Matrix4;
        let a = Matrix4::new(
            0.0, 0.3, -0.7, 0.2, 0.0, 0.0, 0.5, 1.1, 0.0, 0.0, 0.0, -0.4, 0.0, 0.0, 0.0, 0.0,
        );
        let b = Matrix4::new(
            0.0, -0.6, 0.1, 0.9, 0.0, 0.0, 0.8, -0.3, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0,
        );
        let exp = |m: Matrix4<f64>| Matrix4::identity() + m + m * m / 2.0 + m * m * m / 6.0;
        let log = |m: Matrix4<f64>| {
            let x = m - Matrix4::identity();
            x - x * x / 2.0 + x * x * x / 3.0
        };
        let l = log(exp(a / 2.0) * exp(b) * exp(a / 2.0));
        let comm = |x: Matrix4<f64>, y: Matrix4<f64>| x * y - y * x;
        let expect = a + b - comm(a, comm(a, b)) / 24.0 + comm(comm(a, b), b) / 12.0;
        assert!((l - expect).norm() < 1e-14);
    }

    #[test]
    fn lyndon_counts_and_small_cases() {
        for n in 1..=4 {
            for d in 1..=4 {
                let basis = lyndon_basis::<f64>(n, d, 4).unwrap();
                assert_eq!(basis.len(), lyndon_count(n, d), "n={n} d={d}");
                for el in &basis {
                    assert!(el.expansion.grade_norm(d) > 0.0);
                    for dd in 0..=4 {
                        if dd != d {
                            assert_eq!(el.expansion.grade_norm(dd), 0.0);
                        }
                    }
                }
            }
        }
        assert_eq!(lyndon_basis::<f64>(2, 2, 3).unwrap().len(), 1);
        let b = lyndon_basis::<f64>(2, 3, 3).unwrap();
        assert_eq!(b[0].word, Word(vec![1, 1, 2]));
        assert_eq!(b[1].word, Word(vec![1, 2, 2]));
        assert_eq!(lyndon_basis::<f64>(4, 3, 3).unwrap().len(), 20);
    }

    #[test]
    fn lie_project_cases() {
        let basis = lyndon_basis::<f64>(2, 2, 3).unwrap();
        let proj = lie_project(&basis[0].expansion, &basis);
        assert!((proj.coeffs[0] - 1.0).abs() < 1e-15 && proj.residual < 1e-15);

        let a = FreePoly::<f64>::letter(2, 3, 1).unwrap();
        let b = FreePoly::<f64>::letter(2, 3, 2).unwrap();
        let sym = a.mul(&b).unwrap().add(&b.mul(&a).unwrap()).unwrap();
        let proj = lie_project(&sym, &basis);
        assert!(proj.coeffs[0].abs() < 1e-15);
        assert!((proj.residual - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn lyndon_detection() {
        assert!(Word(vec![1, 1, 2]).is_lyndon());
        assert!(!Word(vec![1, 2, 1]).is_lyndon());
        assert!(!Word(vec![2, 2]).is_lyndon());
        assert!(Word(vec![2]).is_lyndon());
    }

    fn arb_poly(n: usize, d: usize) -> impl Strategy<Value = FreePoly<f64>> {
        let size: usize = (0..=d).map(|k| n.pow(k as u32)).sum();
        proptest::collection::vec(-1.0f64..1.0, size).prop_map(move |vals| {
            let mut p = FreePoly::<f64>::zero(n, d).unwrap();
            let mut it = vals.into_iter();
            for g in p.grades.iter_mut() {
                for c in g.iter_mut() {
                    *c = it.next().unwrap();
                }
            }
            p
        })
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(mut p in arb_poly(3, 4)) {
            p.grades[0][0] = 1.0;
            let back = p.log_truncated().unwrap().exp_truncated().unwrap();
            let diff = back.sub(&p).unwrap();
            for d in 0..=4 {
                prop_assert!(diff.grade_norm(d) < 1e-12);
            }
        }

        #[test]
        fn mul_associative(p in arb_poly(2, 4), q in arb_poly(2, 4), r in arb_poly(2, 4)) {
            let lhs = p.mul(&q).unwrap().mul(&r).unwrap();
            let rhs = p.mul(&q.mul(&r).unwrap()).unwrap();
            let diff = lhs.sub(&rhs).unwrap();
            for d in 0..=4 {
                prop_assert!(diff.grade_norm(d) < 1e-12);
            }
        }
    }

    #[test]
    fn exact_round_trip_rational() {
        let mut p = FreePoly::<BigRational>::unit(2, 4).unwrap();
        p = p.exp_mul_left(1, &q(1, 3)).exp_mul_left(2, &q(-3, 4));
        p.set(&Word(vec![2, 1]), q(5, 9));
        let back = p.log_truncated().unwrap().exp_truncated().unwrap();
        assert_eq!(back, p);
    }
}
