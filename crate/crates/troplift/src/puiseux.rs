//! Truncated Puiseux series in `t` with coefficients in `Q(2^(1/d))`.
//!
//! A [`Series`] is a finite sorted list of terms `c * t^e` with rational
//! exponents plus a truncation order.  Every term has exponent strictly below
//! the truncation; the unknown tail is `O(t^trunc)`.  An exact series has no
//! truncation.
//!
//! Coefficients live in `Q(s)` with `s^d = 2`.  Each [`Coeff`] carries its own
//! `d`; mixing elements of different degrees embeds both into the field of
//! degree `lcm(d1, d2)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rationals used for exponents, radii, lengths and coordinates.
pub type Q = BigRational;

/// Default truncation order for verification claims.
pub const DEFAULT_TRUNC: i64 = 24;

/// Build a rational from a numerator and denominator.
pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Build an integral rational.
pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Parse `"p/q"` or `"p"`.
pub fn parse_q(s: &str) -> Result<Q, PuiseuxError> {
    Q::from_str(s.trim()).map_err(|_| PuiseuxError::Parse(format!("bad rational {s:?}")))
}

/// Render a rational as `"p/q"` or `"p"`.
pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PuiseuxError {
    #[error("valuation is unknown: the leading term was truncated away")]
    UnknownValuation,
    #[error("residue requires valuation 0, found {0}")]
    NonzeroValuation(String),
    #[error("insufficient precision: cancellation exhausted the truncation order")]
    InsufficientPrecision,
    #[error("points coincide")]
    Coincident,
    #[error("division by zero")]
    DivisionByZero,
    #[error("parse error: {0}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// Coefficient field
// ---------------------------------------------------------------------------

/// Descriptor of the coefficient field `Q(2^(1/d))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoeffField {
    pub d: usize,
}

impl CoeffField {
    pub fn rationals() -> Self {
        CoeffField { d: 1 }
    }

    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "field degree must be positive");
        CoeffField { d }
    }

    /// Smallest field containing both.
    pub fn join(self, other: CoeffField) -> CoeffField {
        CoeffField { d: self.d.lcm(&other.d) }
    }

    pub fn name(&self) -> String {
        if self.d == 1 {
            "Q".to_string()
        } else {
            format!("Q(2^(1/{}))", self.d)
        }
    }
}

/// An element of `Q(2^(1/d))`, stored as coefficients of `1, s, ..., s^(d-1)`.
///
/// The representation is always reduced to the smallest `d` that contains the
/// element, so structural equality is field equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Coeff {
    c: Vec<Q>,
}

impl Coeff {
    pub fn zero() -> Self {
        Coeff { c: vec![Q::zero()] }
    }

    pub fn one() -> Self {
        Coeff { c: vec![Q::one()] }
    }

    pub fn from_q(x: Q) -> Self {
        Coeff { c: vec![x] }
    }

    pub fn from_int(n: i64) -> Self {
        Coeff::from_q(qi(n))
    }

    /// Element `sum parts[k] * s^k` of the field of degree `parts.len()`.
    pub fn from_parts(parts: Vec<Q>) -> Self {
        assert!(!parts.is_empty());
        Coeff::reduce(parts)
    }

    /// `2^e` for a rational exponent `e`.
    pub fn two_pow(e: &Q) -> Self {
        let d = e.denom().to_usize().expect("exponent denominator too large");
        let n = e.numer();
        let (quot, rem) = n.div_mod_floor(&BigInt::from(d));
        let mut parts = vec![Q::zero(); d];
        let two = qi(2);
        let scale = pow_q(&two, quot.to_i64().expect("exponent too large"));
        parts[rem.to_usize().unwrap()] = scale;
        Coeff::reduce(parts)
    }

    pub fn degree(&self) -> usize {
        self.c.len()
    }

    pub fn field(&self) -> CoeffField {
        CoeffField::new(self.c.len())
    }

    pub fn parts(&self) -> &[Q] {
        &self.c
    }

    /// Coefficients in the field of degree `d` (a multiple of `self.degree()`).
    pub fn parts_in(&self, d: usize) -> Vec<Q> {
        let own = self.c.len();
        assert!(d % own == 0, "cannot embed degree {own} into degree {d}");
        let step = d / own;
        let mut out = vec![Q::zero(); d];
        for (k, x) in self.c.iter().enumerate() {
            out[k * step] = x.clone();
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.c.len() == 1 && self.c[0].is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.c.len() == 1 && self.c[0].is_one()
    }

    pub fn as_rational(&self) -> Option<&Q> {
        if self.c.len() == 1 {
            Some(&self.c[0])
        } else {
            None
        }
    }

    fn reduce(mut v: Vec<Q>) -> Coeff {
        let d = v.len();
        for dd in 1..=d {
            if d % dd != 0 {
                continue;
            }
            let step = d / dd;
            if v.iter().enumerate().all(|(k, x)| k % step == 0 || x.is_zero()) {
                if step == 1 {
                    return Coeff { c: v };
                }
                let out: Vec<Q> = v.drain(..).step_by(step).collect();
                return Coeff { c: out };
            }
        }
        unreachable!()
    }

    fn common(&self, other: &Coeff) -> (usize, Vec<Q>, Vec<Q>) {
        let d = self.c.len().lcm(&other.c.len());
        (d, self.parts_in(d), other.parts_in(d))
    }

    pub fn add(&self, other: &Coeff) -> Coeff {
        let (_, a, b) = self.common(other);
        Coeff::reduce(a.into_iter().zip(b).map(|(x, y)| x + y).collect())
    }

    pub fn add_assign(&mut self, other: &Coeff) {
        if self.c.len() == 1 && other.c.len() == 1 {
            self.c[0] += &other.c[0];
        } else {
            *self = self.add(other);
        }
    }

    pub fn sub(&self, other: &Coeff) -> Coeff {
        let (_, a, b) = self.common(other);
        Coeff::reduce(a.into_iter().zip(b).map(|(x, y)| x - y).collect())
    }

    pub fn neg(&self) -> Coeff {
        Coeff { c: self.c.iter().map(|x| -x).collect() }
    }

    pub fn mul(&self, other: &Coeff) -> Coeff {
        if self.c.len() == 1 && other.c.len() == 1 {
            return Coeff { c: vec![&self.c[0] * &other.c[0]] };
        }
        let (d, a, b) = self.common(other);
        let two = qi(2);
        let mut out = vec![Q::zero(); d];
        for (i, x) in a.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (j, y) in b.iter().enumerate() {
                if y.is_zero() {
                    continue;
                }
                let p = x * y;
                let k = i + j;
                if k >= d {
                    out[k - d] += p * &two;
                } else {
                    out[k] += p;
                }
            }
        }
        Coeff::reduce(out)
    }

    pub fn scale(&self, x: &Q) -> Coeff {
        Coeff::reduce(self.c.iter().map(|y| y * x).collect())
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn inv(&self) -> Option<Coeff> {
        if self.is_zero() {
            return None;
        }
        let d = self.c.len();
        if d == 1 {
            return Some(Coeff { c: vec![self.c[0].recip()] });
        }
        // Column k of the multiplication matrix is self * s^k.
        let mut m = vec![vec![Q::zero(); d + 1]; d];
        for k in 0..d {
            let mut basis = vec![Q::zero(); d];
            basis[k] = Q::one();
            let col = self.mul(&Coeff { c: basis }).parts_in(d);
            for (r, x) in col.into_iter().enumerate() {
                m[r][k] = x;
            }
        }
        m[0][d] = Q::one();
        let sol = solve_square(m)?;
        Some(Coeff::reduce(sol))
    }

    pub fn pow(&self, e: i64) -> Option<Coeff> {
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut acc = Coeff::one();
        let mut b = base;
        let mut n = e.unsigned_abs();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&b);
            }
            b = b.mul(&b);
            n >>= 1;
        }
        Some(acc)
    }

    /// If this element is `2^m` for an integer `m`, return `m`.
    pub fn log2_integer(&self) -> Option<i64> {
        let x = self.as_rational()?;
        if !x.is_positive() {
            return None;
        }
        let (n, d) = (x.numer().clone(), x.denom().clone());
        let two = BigInt::from(2);
        let count = |mut v: BigInt| -> Option<i64> {
            let mut k = 0;
            while v > BigInt::one() {
                if !v.is_even() {
                    return None;
                }
                v /= &two;
                k += 1;
            }
            Some(k)
        };
        Some(count(n)? - count(d)?)
    }
}

fn pow_q(x: &Q, e: i64) -> Q {
    let mut acc = Q::one();
    for _ in 0..e.unsigned_abs() {
        acc *= x;
    }
    if e < 0 {
        acc.recip()
    } else {
        acc
    }
}

/// Solve an augmented `d x (d+1)` system, `None` if singular.
fn solve_square(mut m: Vec<Vec<Q>>) -> Option<Vec<Q>> {
    let d = m.len();
    for col in 0..d {
        let piv = (col..d).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let inv = m[col][col].recip();
        for x in m[col].iter_mut() {
            *x *= &inv;
        }
        for r in 0..d {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                let row = m[col].clone();
                for (x, y) in m[r].iter_mut().zip(row.iter()) {
                    *x -= &f * y;
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[d].clone()).collect())
}

impl PartialOrd for Coeff {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Coeff {
    /// A fixed total order used for deterministic tie-breaking only.
    fn cmp(&self, other: &Self) -> Ordering {
        self.c.len().cmp(&other.c.len()).then_with(|| self.c.cmp(&other.c))
    }
}

impl fmt::Debug for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.c.len();
        if d == 1 {
            return write!(f, "{}", fmt_q(&self.c[0]));
        }
        let mut first = true;
        write!(f, "(")?;
        for (k, x) in self.c.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if k == 0 {
                write!(f, "{}", fmt_q(x))?;
            } else {
                write!(f, "{}*2^({}/{})", fmt_q(x), k, d)?;
            }
        }
        write!(f, ")")
    }
}

// ---------------------------------------------------------------------------
// Valuations
// ---------------------------------------------------------------------------

/// Tri-state valuation of a truncated series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Valuation {
    Finite(Q),
    /// Exact zero.
    Infinite,
    /// Every stored term vanished; only `O(t^trunc)` is known.
    Unknown,
}

impl Valuation {
    pub fn finite(&self) -> Option<&Q> {
        match self {
            Valuation::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn expect_finite(&self) -> Result<Q, PuiseuxError> {
        match self {
            Valuation::Finite(v) => Ok(v.clone()),
            Valuation::Infinite => Err(PuiseuxError::Coincident),
            Valuation::Unknown => Err(PuiseuxError::InsufficientPrecision),
        }
    }
}

// ---------------------------------------------------------------------------
// Series
// ---------------------------------------------------------------------------

/// A truncated generalized power series `sum c_k t^(e_k) + O(t^trunc)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Series {
    terms: Vec<(Q, Coeff)>,
    trunc: Option<Q>,
}

fn min_trunc(a: &Option<Q>, b: &Option<Q>) -> Option<Q> {
    match (a, b) {
        (None, None) => None,
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (Some(x), Some(y)) => Some(if x < y { x.clone() } else { y.clone() }),
    }
}

fn add_opt(a: &Option<Q>, b: &Q) -> Option<Q> {
    a.as_ref().map(|x| x + b)
}

impl Series {
    /// Build from arbitrary terms: sorts, merges equal exponents, drops zero
    /// coefficients and terms at or beyond `trunc`.
    pub fn new(terms: Vec<(Q, Coeff)>, trunc: Option<Q>) -> Self {
        let mut map: BTreeMap<Q, Coeff> = BTreeMap::new();
        for (e, c) in terms {
            if let Some(t) = &trunc {
                if &e >= t {
                    continue;
                }
            }
            let slot = map.entry(e).or_insert_with(Coeff::zero);
            *slot = slot.add(&c);
        }
        Series {
            terms: map.into_iter().filter(|(_, c)| !c.is_zero()).collect(),
            trunc,
        }
    }

    fn from_sorted(terms: Vec<(Q, Coeff)>, trunc: Option<Q>) -> Self {
        Series { terms, trunc }
    }

    pub fn zero() -> Self {
        Series { terms: vec![], trunc: None }
    }

    pub fn one() -> Self {
        Series::constant(Coeff::one())
    }

    pub fn constant(c: Coeff) -> Self {
        Series::monomial(c, Q::zero())
    }

    /// The exact monomial `c * t^w`.
    pub fn monomial(c: Coeff, w: Q) -> Self {
        if c.is_zero() {
            return Series::zero();
        }
        Series { terms: vec![(w, c)], trunc: None }
    }

    /// The exact series `t^w`.
    pub fn t_pow(w: Q) -> Self {
        Series::monomial(Coeff::one(), w)
    }

    /// An exact series from rational `(exponent, coefficient)` pairs.
    pub fn from_rationals(pairs: &[(Q, Q)]) -> Self {
        Series::new(
            pairs.iter().map(|(e, c)| (e.clone(), Coeff::from_q(c.clone()))).collect(),
            None,
        )
    }

    /// An exact series from small integer data `(exp_num, exp_den, coeff)`.
    pub fn from_ints(terms: &[(i64, i64, i64)]) -> Self {
        Series::new(
            terms.iter().map(|&(n, d, c)| (q(n, d), Coeff::from_int(c))).collect(),
            None,
        )
    }

    pub fn terms(&self) -> &[(Q, Coeff)] {
        &self.terms
    }

    pub fn trunc(&self) -> Option<&Q> {
        self.trunc.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.trunc.is_none()
    }

    pub fn field(&self) -> CoeffField {
        self.terms.iter().fold(CoeffField::rationals(), |f, (_, c)| f.join(c.field()))
    }

    pub fn valuation(&self) -> Valuation {
        match (self.terms.first(), &self.trunc) {
            (Some((e, _)), _) => Valuation::Finite(e.clone()),
            (None, None) => Valuation::Infinite,
            (None, Some(_)) => Valuation::Unknown,
        }
    }

    /// Leading term, if known.
    pub fn leading(&self) -> Option<(&Q, &Coeff)> {
        self.terms.first().map(|(e, c)| (e, c))
    }

    /// Coefficient of `t^0`; requires valuation exactly 0.
    pub fn residue(&self) -> Result<Coeff, PuiseuxError> {
        match self.valuation() {
            Valuation::Finite(v) if v.is_zero() => Ok(self.terms[0].1.clone()),
            Valuation::Finite(v) => Err(PuiseuxError::NonzeroValuation(fmt_q(&v))),
            Valuation::Infinite => Err(PuiseuxError::NonzeroValuation("inf".into())),
            Valuation::Unknown => Err(PuiseuxError::UnknownValuation),
        }
    }

    /// Coefficient of `t^e` (zero if absent; the caller checks `e < trunc`).
    pub fn coeff_at(&self, e: &Q) -> Coeff {
        match self.terms.binary_search_by(|(x, _)| x.cmp(e)) {
            Ok(i) => self.terms[i].1.clone(),
            Err(_) => Coeff::zero(),
        }
    }

    /// Lower bound on the valuation: the valuation, or the truncation when
    /// no term survived.  `None` means exact zero.
    fn lower(&self) -> Option<Q> {
        match (self.terms.first(), &self.trunc) {
            (Some((e, _)), _) => Some(e.clone()),
            (None, t) => t.clone(),
        }
    }

    /// Drop every term at or beyond the absolute order `t`.
    pub fn truncate(&self, t: &Q) -> Series {
        let trunc = min_trunc(&self.trunc, &Some(t.clone()));
        let cut = trunc.clone().unwrap();
        Series::from_sorted(
            self.terms.iter().filter(|(e, _)| e < &cut).cloned().collect(),
            trunc,
        )
    }

    /// Keep relative precision `rel` above the valuation.
    pub fn truncate_rel(&self, rel: &Q) -> Series {
        match self.lower() {
            Some(v) => self.truncate(&(v + rel)),
            None => self.clone(),
        }
    }

    pub fn neg(&self) -> Series {
        Series::from_sorted(
            self.terms.iter().map(|(e, c)| (e.clone(), c.neg())).collect(),
            self.trunc.clone(),
        )
    }

    pub fn add(&self, other: &Series) -> Series {
        self.combine(other, false)
    }

    pub fn sub(&self, other: &Series) -> Series {
        self.combine(other, true)
    }

    fn combine(&self, other: &Series, negate: bool) -> Series {
        let trunc = min_trunc(&self.trunc, &other.trunc);
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        let a = &self.terms;
        let b = &other.terms;
        let below = |e: &Q| trunc.as_ref().map_or(true, |t| e < t);
        while i < a.len() || j < b.len() {
            let pick = match (a.get(i), b.get(j)) {
                (Some((ea, _)), Some((eb, _))) => ea.cmp(eb),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => unreachable!(),
            };
            match pick {
                Ordering::Less => {
                    if below(&a[i].0) {
                        out.push(a[i].clone());
                    }
                    i += 1;
                }
                Ordering::Greater => {
                    if below(&b[j].0) {
                        let c = if negate { b[j].1.neg() } else { b[j].1.clone() };
                        out.push((b[j].0.clone(), c));
                    }
                    j += 1;
                }
                Ordering::Equal => {
                    if below(&a[i].0) {
                        let c = if negate { a[i].1.sub(&b[j].1) } else { a[i].1.add(&b[j].1) };
                        if !c.is_zero() {
                            out.push((a[i].0.clone(), c));
                        }
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        Series::from_sorted(out, trunc)
    }

    pub fn scale(&self, c: &Coeff) -> Series {
        if c.is_zero() {
            return Series::zero();
        }
        Series::from_sorted(
            self.terms.iter().map(|(e, x)| (e.clone(), x.mul(c))).collect(),
            self.trunc.clone(),
        )
    }

    /// Multiply by `t^w`.
    pub fn shift(&self, w: &Q) -> Series {
        Series::from_sorted(
            self.terms.iter().map(|(e, c)| (e + w, c.clone())).collect(),
            self.trunc.as_ref().map(|t| t + w),
        )
    }

    pub fn mul(&self, other: &Series) -> Series {
        let (la, lb) = (self.lower(), other.lower());
        let (la, lb) = match (la, lb) {
            (Some(x), Some(y)) => (x, y),
            _ => return Series::zero(),
        };
        let trunc = min_trunc(&add_opt(&self.trunc, &lb), &add_opt(&other.trunc, &la));
        if self.terms.len() == 1 && self.trunc.is_none() {
            let (e, c) = &self.terms[0];
            return other.scale(c).shift(e).with_trunc_cap(trunc);
        }
        if other.terms.len() == 1 && other.trunc.is_none() {
            let (e, c) = &other.terms[0];
            return self.scale(c).shift(e).with_trunc_cap(trunc);
        }
        if let Some(out) = self.mul_on_grid(other, &lb, &trunc) {
            return out;
        }
        let mut acc: BTreeMap<Q, Coeff> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            if let Some(t) = &trunc {
                if &(ea + &lb) >= t {
                    break;
                }
            }
            for (eb, cb) in &other.terms {
                let e = ea + eb;
                if let Some(t) = &trunc {
                    if &e >= t {
                        break;
                    }
                }
                let p = ca.mul(cb);
                match acc.get_mut(&e) {
                    Some(slot) => *slot = slot.add(&p),
                    None => {
                        acc.insert(e, p);
                    }
                }
            }
        }
        Series::from_sorted(acc.into_iter().filter(|(_, c)| !c.is_zero()).collect(), trunc)
    }

    /// Product with exponents scaled to a common integer grid; `None` when
    /// the grid does not fit in machine integers.
    fn mul_on_grid(&self, other: &Series, lb: &Q, trunc: &Option<Q>) -> Option<Series> {
        if self.terms.is_empty() || other.terms.is_empty() {
            return Some(Series::from_sorted(vec![], trunc.clone()));
        }
        let den = self
            .terms
            .iter()
            .chain(&other.terms)
            .map(|(e, _)| e.denom().clone())
            .chain(trunc.iter().map(|t| t.denom().clone()))
            .fold(BigInt::one(), |a, b| a.lcm(&b));
        let den = den.to_i64()?;
        let scaled = |terms: &[(Q, Coeff)]| -> Option<Vec<i64>> {
            terms.iter().map(|(e, _)| (e.numer() * (den / e.denom().to_i64()?)).to_i64()).collect()
        };
        let (xa, xb) = (scaled(&self.terms)?, scaled(&other.terms)?);
        let cap = match trunc {
            Some(t) => Some((t.numer() * (den / t.denom().to_i64()?)).to_i64()?),
            None => None,
        };
        let lo = xa[0].checked_add(xb[0])?;
        let hi = match cap {
            Some(c) => c,
            None => xa.last()?.checked_add(*xb.last()?)?.checked_add(1)?,
        };
        let width = usize::try_from(hi.checked_sub(lo)?.max(0)).ok()?;
        if width > 4 * self.terms.len() * other.terms.len() + 64 {
            return None;
        }
        let lbs = (lb.numer() * (den / lb.denom().to_i64()?)).to_i64()?;
        // Coefficients as integer vectors over one denominator per factor, so
        // the convolution needs no gcd until the end.
        let dd = self.terms.iter().chain(&other.terms).fold(1usize, |a, (_, c)| a.lcm(&c.c.len()));
        let integral = |terms: &[(Q, Coeff)]| -> (BigInt, Vec<Vec<BigInt>>) {
            let parts: Vec<Vec<Q>> = terms.iter().map(|(_, c)| c.parts_in(dd)).collect();
            let d = parts.iter().flatten().fold(BigInt::one(), |a, x| a.lcm(x.denom()));
            let ints = parts.iter().map(|p| p.iter().map(|x| x.numer() * (&d / x.denom())).collect()).collect();
            (d, ints)
        };
        let (da, ia) = integral(&self.terms);
        let (db, ib) = integral(&other.terms);
        let mut acc: Vec<Option<Vec<BigInt>>> = vec![None; width];
        for (ea, ca) in xa.iter().zip(&ia) {
            if cap.is_some_and(|c| ea + lbs >= c) {
                break;
            }
            for (eb, cb) in xb.iter().zip(&ib) {
                let e = ea + eb;
                if cap.is_some_and(|c| e >= c) {
                    break;
                }
                let slot = acc[(e - lo) as usize].get_or_insert_with(|| vec![BigInt::zero(); dd]);
                for (i, x) in ca.iter().enumerate() {
                    if x.is_zero() {
                        continue;
                    }
                    for (j, y) in cb.iter().enumerate() {
                        if y.is_zero() {
                            continue;
                        }
                        if i + j >= dd {
                            slot[i + j - dd] += (x * y) << 1u32;
                        } else {
                            slot[i + j] += x * y;
                        }
                    }
                }
            }
        }
        let den_ab = da * db;
        let terms = acc
            .into_iter()
            .enumerate()
            .filter_map(|(k, c)| {
                let c = c?;
                if c.iter().all(Zero::is_zero) {
                    return None;
                }
                let parts = c.into_iter().map(|n| Q::new(n, den_ab.clone())).collect();
                Some((Q::new(BigInt::from(lo + k as i64), BigInt::from(den)), Coeff::from_parts(parts)))
            })
            .collect();
        Some(Series::from_sorted(terms, trunc.clone()))
    }

    fn with_trunc_cap(self, trunc: Option<Q>) -> Series {
        match trunc {
            None => self,
            Some(t) => self.truncate(&t),
        }
    }

    /// Inverse to relative precision `rel` (exact for exact monomials).
    pub fn inv(&self, rel: &Q) -> Result<Series, PuiseuxError> {
        let (v, c0) = match self.terms.first() {
            Some((e, c)) => (e.clone(), c.clone()),
            None => {
                return Err(match self.trunc {
                    None => PuiseuxError::DivisionByZero,
                    Some(_) => PuiseuxError::UnknownValuation,
                })
            }
        };
        let c0inv = c0.inv().ok_or(PuiseuxError::DivisionByZero)?;
        if self.terms.len() == 1 && self.trunc.is_none() {
            return Ok(Series::monomial(c0inv, -v));
        }
        let mut prec = rel.clone();
        if let Some(t) = &self.trunc {
            let own = t - &v;
            if own < prec {
                prec = own;
            }
        }
        // self = c0 t^v (1 + x) with v(x) > 0.
        let x = Series::from_sorted(
            self.terms[1..].iter().map(|(e, c)| (e - &v, c.mul(&c0inv))).collect(),
            None,
        )
        .truncate(&prec);
        // Newton iteration for 1/(1+x): the error valuation doubles each step.
        let s = Series::one().add(&x).truncate(&prec);
        // `y` is kept exact: a polynomial agreeing with 1/s below `known`.
        let mut y = Series::one();
        let mut known = match x.terms.first() {
            Some((e, _)) => e.clone(),
            None => prec.clone(),
        };
        while known < prec {
            known = (&known * qi(2)).min(prec.clone());
            let e = Series::one().sub(&s.truncate(&known).mul(&y)).truncate(&known);
            y = Series::from_sorted(y.add(&y.mul(&e)).truncate(&known).terms, None);
        }
        let y = y.truncate(&prec);
        Ok(y.scale(&c0inv).shift(&-v))
    }

    /// `self^n` for an integer `n`, with relative precision `rel` for
    /// negative powers of non-monomials.
    /// `self^n` to relative order `rel`.
    pub fn pow(&self, n: i64, rel: &Q) -> Result<Series, PuiseuxError> {
        let mut base = if n < 0 { self.inv(rel)? } else { self.truncate_rel(rel) };
        let mut acc = Series::one();
        let mut k = n.unsigned_abs();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base).truncate_rel(rel);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base).truncate_rel(rel);
            }
        }
        Ok(acc)
    }

    /// Deterministic total order: valuation, then terms.
    pub fn canonical_cmp(&self, other: &Series) -> Ordering {
        let key = |s: &Series| match s.terms.first() {
            Some((e, _)) => (0, Some(e.clone())),
            None => (1, None),
        };
        key(self)
            .cmp(&key(other))
            .then_with(|| self.terms.cmp(&other.terms))
            .then_with(|| self.trunc.cmp(&other.trunc))
    }
}

/// `v(a - b)` computed without materialising the difference.
pub fn val_diff(a: &Series, b: &Series) -> Valuation {
    let trunc = min_trunc(&a.trunc, &b.trunc);
    let (mut i, mut j) = (0, 0);
    let first = loop {
        match (a.terms.get(i), b.terms.get(j)) {
            (None, None) => break None,
            (Some((e, _)), None) | (None, Some((e, _))) => break Some(e.clone()),
            (Some((ea, ca)), Some((eb, cb))) => match ea.cmp(eb) {
                Ordering::Less => break Some(ea.clone()),
                Ordering::Greater => break Some(eb.clone()),
                Ordering::Equal => {
                    if ca != cb {
                        break Some(ea.clone());
                    }
                    i += 1;
                    j += 1;
                }
            },
        }
    };
    match (first, trunc) {
        (Some(e), Some(t)) if e >= t => Valuation::Unknown,
        (Some(e), _) => Valuation::Finite(e),
        (None, None) => Valuation::Infinite,
        (None, Some(_)) => Valuation::Unknown,
    }
}

impl fmt::Debug for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() && self.trunc.is_none() {
            return write!(f, "0");
        }
        let mut parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                if e.is_zero() {
                    format!("{c}")
                } else if c.is_one() {
                    format!("t^({})", fmt_q(e))
                } else {
                    format!("{c}*t^({})", fmt_q(e))
                }
            })
            .collect();
        if let Some(t) = &self.trunc {
            parts.push(format!("O(t^({}))", fmt_q(t)));
        }
        write!(f, "{}", parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// Projective line and cross ratios
// ---------------------------------------------------------------------------

/// A point of `P^1(K) = K ∪ {∞}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum P1Point {
    Finite(Series),
    Infinity,
}

impl P1Point {
    pub fn finite(&self) -> Option<&Series> {
        match self {
            P1Point::Finite(s) => Some(s),
            P1Point::Infinity => None,
        }
    }
}

impl fmt::Display for P1Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            P1Point::Finite(s) => write!(f, "{s}"),
            P1Point::Infinity => write!(f, "inf"),
        }
    }
}

fn diff(a: &P1Point, b: &P1Point) -> Option<Series> {
    match (a, b) {
        (P1Point::Finite(x), P1Point::Finite(y)) => Some(x.sub(y)),
        _ => None,
    }
}

/// The cross ratio `c(w,x:y,z) = (w-y)(x-z) / ((w-z)(x-y))` to relative
/// precision `rel`.  Factors involving `∞` cancel in pairs.
pub fn cross_ratio(
    w: &P1Point,
    x: &P1Point,
    y: &P1Point,
    z: &P1Point,
    rel: &Q,
) -> Result<Series, PuiseuxError> {
    let pts = [w, x, y, z];
    for i in 0..4 {
        for j in i + 1..4 {
            let same = match (pts[i], pts[j]) {
                (P1Point::Infinity, P1Point::Infinity) => true,
                (P1Point::Finite(a), P1Point::Finite(b)) => val_diff(a, b) == Valuation::Infinite,
                _ => false,
            };
            if same {
                return Err(PuiseuxError::Coincident);
            }
        }
    }
    let factor = |a: &P1Point, b: &P1Point| diff(a, b);
    let num = [factor(w, y), factor(x, z)];
    let den = [factor(w, z), factor(x, y)];
    let mut n = Series::one();
    for f in num.iter().flatten() {
        if f.valuation() == Valuation::Unknown {
            return Err(PuiseuxError::InsufficientPrecision);
        }
        n = n.mul(f);
    }
    let mut d = Series::one();
    for f in den.iter().flatten() {
        if f.valuation() == Valuation::Unknown {
            return Err(PuiseuxError::InsufficientPrecision);
        }
        d = d.mul(f);
    }
    Ok(n.mul(&d.inv(rel)?))
}

/// `(v(c), v(c - 1))` for the cross ratio `c(w,x:y,z)`.
pub fn cross_ratio_valuation(
    w: &P1Point,
    x: &P1Point,
    y: &P1Point,
    z: &P1Point,
) -> Result<(Q, Q), PuiseuxError> {
    cross_ratio_valuation_rel(w, x, y, z, &qi(DEFAULT_TRUNC))
}

pub fn cross_ratio_valuation_rel(
    w: &P1Point,
    x: &P1Point,
    y: &P1Point,
    z: &P1Point,
    rel: &Q,
) -> Result<(Q, Q), PuiseuxError> {
    let c = cross_ratio(w, x, y, z, rel)?;
    let vc = c.valuation().expect_finite()?;
    let vc1 = c.sub(&Series::one()).valuation();
    let vc1 = match vc1 {
        Valuation::Finite(v) => v,
        _ => return Err(PuiseuxError::InsufficientPrecision),
    };
    Ok((vc, vc1))
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TermJson {
    pub exp: String,
    pub coeff: Vec<String>,
}

/// Wire form of a [`Series`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesJson {
    pub terms: Vec<TermJson>,
    pub trunc: String,
    pub field: String,
    pub d: usize,
}

impl Series {
    pub fn to_json(&self) -> SeriesJson {
        let field = self.field();
        SeriesJson {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| TermJson {
                    exp: fmt_q(e),
                    coeff: c.parts_in(field.d).iter().map(fmt_q).collect(),
                })
                .collect(),
            trunc: self.trunc.as_ref().map_or("inf".to_string(), fmt_q),
            field: field.name(),
            d: field.d,
        }
    }

    pub fn from_json(j: &SeriesJson) -> Result<Series, PuiseuxError> {
        if j.d == 0 {
            return Err(PuiseuxError::Parse("field degree must be positive".into()));
        }
        let expected = CoeffField::new(j.d).name();
        if j.field != expected {
            return Err(PuiseuxError::Parse(format!(
                "field {:?} does not match d = {} (expected {:?})",
                j.field, j.d, expected
            )));
        }
        let trunc = if j.trunc == "inf" { None } else { Some(parse_q(&j.trunc)?) };
        let mut terms = Vec::new();
        let mut prev: Option<Q> = None;
        for t in &j.terms {
            let e = parse_q(&t.exp)?;
            if let Some(p) = &prev {
                if &e <= p {
                    return Err(PuiseuxError::Parse("exponents must be strictly increasing".into()));
                }
            }
            if let Some(tr) = &trunc {
                if &e >= tr {
                    return Err(PuiseuxError::Parse("term at or beyond trunc".into()));
                }
            }
            if t.coeff.len() != j.d {
                return Err(PuiseuxError::Parse(format!(
                    "coefficient has {} entries, field degree is {}",
                    t.coeff.len(),
                    j.d
                )));
            }
            let parts = t.coeff.iter().map(|s| parse_q(s)).collect::<Result<Vec<_>, _>>()?;
            let c = Coeff::from_parts(parts);
            if c.is_zero() {
                return Err(PuiseuxError::Parse("zero coefficient".into()));
            }
            prev = Some(e.clone());
            terms.push((e, c));
        }
        Ok(Series::from_sorted(terms, trunc))
    }
}

/// Wire form of a [`P1Point`]: a series or the string `"inf"`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum P1Json {
    Infinity(String),
    Finite(SeriesJson),
}

impl P1Point {
    pub fn to_json(&self) -> P1Json {
        match self {
            P1Point::Finite(s) => P1Json::Finite(s.to_json()),
            P1Point::Infinity => P1Json::Infinity("inf".into()),
        }
    }

    pub fn from_json(j: &P1Json) -> Result<P1Point, PuiseuxError> {
        match j {
            P1Json::Finite(s) => Ok(P1Point::Finite(Series::from_json(s)?)),
            P1Json::Infinity(s) if s == "inf" => Ok(P1Point::Infinity),
            P1Json::Infinity(s) => Err(PuiseuxError::Parse(format!("expected \"inf\", got {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(terms: &[(i64, i64, i64)]) -> Series {
        Series::from_ints(terms)
    }

    #[test]
    fn add_cancels_equal_terms() {
        let a = s(&[(1, 1, 1), (2, 1, 1)]);
        let b = s(&[(1, 1, -1)]);
        assert_eq!(a.add(&b), s(&[(2, 1, 1)]));
        assert_eq!(Series::zero().add(&a), a);
    }

    #[test]
    fn add_respects_truncation() {
        let a = Series::new(vec![(qi(0), Coeff::one()), (qi(1), Coeff::one())], Some(qi(3)));
        let b = s(&[(3, 1, 1)]);
        let c = a.add(&b);
        assert_eq!(c.terms().len(), 2);
        assert_eq!(c.trunc(), Some(&qi(3)));
    }

    #[test]
    fn mul_and_invert_basics() {
        let half = Series::t_pow(q(1, 2));
        assert_eq!(half.mul(&half), Series::t_pow(qi(1)));
        let a = s(&[(1, 1, 2), (3, 1, 1)]);
        let b = s(&[(-1, 1, 3)]);
        let p = a.mul(&b);
        assert_eq!(p.valuation(), Valuation::Finite(qi(0)));
        assert_eq!(p.residue().unwrap(), Coeff::from_int(6));
        let g = s(&[(0, 1, 1), (1, 1, -1)]).inv(&qi(5)).unwrap();
        assert_eq!(g.terms().len(), 5);
        assert!(g.terms().iter().all(|(_, c)| c.is_one()));
    }

    #[test]
    fn valuation_states() {
        assert_eq!(s(&[(-2, 1, 1), (0, 1, 1)]).valuation(), Valuation::Finite(qi(-2)));
        assert_eq!(s(&[(0, 1, 3), (1, 1, 1)]).residue().unwrap(), Coeff::from_int(3));
        assert_eq!(Series::new(vec![], Some(qi(5))).valuation(), Valuation::Unknown);
        assert_eq!(Series::zero().valuation(), Valuation::Infinite);
        assert!(s(&[(1, 1, 1)]).residue().is_err());
    }

    #[test]
    fn radical_field_arithmetic() {
        let s3 = Coeff::two_pow(&q(1, 3));
        assert_eq!(s3.degree(), 3);
        assert_eq!(s3.pow(3).unwrap(), Coeff::from_int(2));
        let x = Coeff::from_parts(vec![qi(1), qi(1), qi(0)]);
        assert!(x.mul(&x.inv().unwrap()).is_one());
        let s2 = Coeff::two_pow(&q(1, 2));
        let s6 = Coeff::two_pow(&q(1, 6));
        assert_eq!(s6.pow(3).unwrap(), s2);
        assert_eq!(Coeff::two_pow(&q(-3, 2)).pow(2).unwrap(), Coeff::from_q(q(1, 8)));
        assert_eq!(Coeff::from_q(q(1, 8)).log2_integer(), Some(-3));
        assert_eq!(Coeff::from_int(6).log2_integer(), None);
    }

    #[test]
    fn cross_ratio_examples() {
        let zero = P1Point::Finite(Series::zero());
        let one = P1Point::Finite(Series::one());
        let inf = P1Point::Infinity;
        let z = P1Point::Finite(Series::t_pow(qi(-3)));
        assert_eq!(cross_ratio_valuation(&zero, &one, &inf, &z).unwrap(), (qi(0), qi(3)));
        assert_eq!(cross_ratio_valuation(&zero, &inf, &one, &z).unwrap().0, qi(3));
        let two = P1Point::Finite(Series::constant(Coeff::from_int(2)));
        assert_eq!(cross_ratio_valuation(&zero, &one, &inf, &two).unwrap(), (qi(0), qi(0)));
        assert_eq!(
            cross_ratio_valuation(&zero, &zero, &inf, &two),
            Err(PuiseuxError::Coincident)
        );
    }

    #[test]
    fn json_round_trip() {
        let c = Coeff::from_parts(vec![q(1, 2), qi(0), qi(3)]);
        let a = Series::new(vec![(q(-1, 3), c), (qi(2), Coeff::one())], Some(qi(7)));
        let j = a.to_json();
        assert_eq!(j.field, "Q(2^(1/3))");
        assert_eq!(Series::from_json(&j).unwrap(), a);
        let text = serde_json::to_string(&P1Point::Infinity.to_json()).unwrap();
        assert_eq!(text, "\"inf\"");
    }
}
