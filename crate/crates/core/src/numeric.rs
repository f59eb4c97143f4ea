//! Exact scalar arithmetic over a real quadratic field `Q(√d)`.
//!
//! Amounts in exact mode are elements `r + s·√d` with rational `r`, `s` and a
//! positive non-square integer radicand `d`. Rational values carry no
//! radicand and combine with any field. This is enough to represent the roots
//! of the quadratic consistency conditions exactly, which plain rationals
//! cannot do.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseScalarError {
    #[error("empty numeric literal")]
    Empty,
    #[error("invalid numeric literal `{0}`")]
    Invalid(String),
}

/// An exact element `rat + irr·√radicand`.
///
/// Invariant: `irr == 0` iff `radicand == 0`; otherwise `radicand > 1` and is
/// not a perfect square.
#[derive(Clone)]
pub struct Scalar {
    rat: BigRational,
    irr: BigRational,
    radicand: BigInt,
}

fn small_primes() -> &'static [u32] {
    const PRIMES: [u32; 25] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83,
        89, 97,
    ];
    &PRIMES
}

fn is_perfect_square(n: &BigInt) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let root = n.sqrt();
    if &root * &root == *n {
        Some(root)
    } else {
        None
    }
}

fn rational_sqrt(q: &BigRational) -> Option<BigRational> {
    if q.is_negative() {
        return None;
    }
    let n = is_perfect_square(q.numer())?;
    let d = is_perfect_square(q.denom())?;
    Some(BigRational::new(n, d))
}

/// Splits `n > 0` into `f² · d` removing small square factors; `d` may still
/// carry large square factors, which [`Scalar::unify`] tolerates.
fn split_square(n: &BigInt) -> (BigInt, BigInt) {
    let mut rest = n.clone();
    let mut factor = BigInt::one();
    for &p in small_primes() {
        let p2 = BigInt::from(p * p);
        while (&rest % &p2).is_zero() {
            rest /= &p2;
            factor *= p;
        }
    }
    if let Some(root) = is_perfect_square(&rest) {
        return (factor * root, BigInt::one());
    }
    (factor, rest)
}

impl Scalar {
    pub fn zero() -> Self {
        Self::from_rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Self::from_rational(BigRational::one())
    }

    pub fn from_rational(rat: BigRational) -> Self {
        Scalar {
            rat,
            irr: BigRational::zero(),
            radicand: BigInt::zero(),
        }
    }

    pub fn from_int<T: Into<BigInt>>(v: T) -> Self {
        Self::from_rational(BigRational::from_integer(v.into()))
    }

    pub fn from_ratio<T: Into<BigInt>>(n: T, d: T) -> Self {
        Self::from_rational(BigRational::new(n.into(), d.into()))
    }

    fn normalized(rat: BigRational, irr: BigRational, radicand: BigInt) -> Self {
        if irr.is_zero() || radicand.is_zero() {
            return Self::from_rational(rat);
        }
        if radicand.is_one() {
            return Self::from_rational(rat + irr);
        }
        Scalar { rat, irr, radicand }
    }

    /// Parses decimal (`12.5`), fraction (`3/7`) or surd
    /// (`-5 + 1/2*sqrt(21)`) notation.
    pub fn parse(s: &str) -> Result<Self, ParseScalarError> {
        s.parse()
    }

    pub fn rational_part(&self) -> &BigRational {
        &self.rat
    }

    pub fn surd_part(&self) -> Option<(&BigRational, &BigInt)> {
        if self.irr.is_zero() {
            None
        } else {
            Some((&self.irr, &self.radicand))
        }
    }

    pub fn is_rational(&self) -> bool {
        self.irr.is_zero()
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        self.is_rational().then_some(&self.rat)
    }

    pub fn is_integer(&self) -> bool {
        self.is_rational() && self.rat.is_integer()
    }

    pub fn to_integer(&self) -> Option<BigInt> {
        if self.is_integer() {
            Some(self.rat.to_integer())
        } else {
            None
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rat.is_zero() && self.irr.is_zero()
    }

    /// Brings two elements into one field. Panics when their radicands
    /// generate different fields; arithmetic never mixes such values, only
    /// comparisons do, and those go through enclosures.
    fn unify(a: &Scalar, b: &Scalar) -> (BigRational, BigRational, BigRational, BigRational, BigInt) {
        if a.irr.is_zero() {
            return (
                a.rat.clone(),
                BigRational::zero(),
                b.rat.clone(),
                b.irr.clone(),
                b.radicand.clone(),
            );
        }
        if b.irr.is_zero() || a.radicand == b.radicand {
            return (
                a.rat.clone(),
                a.irr.clone(),
                b.rat.clone(),
                b.irr.clone(),
                a.radicand.clone(),
            );
        }
        // √db = √(da·db)/da · √da when da·db is a perfect square.
        let product = &a.radicand * &b.radicand;
        match is_perfect_square(&product) {
            Some(root) => {
                let scale = BigRational::new(root, a.radicand.clone());
                (
                    a.rat.clone(),
                    a.irr.clone(),
                    b.rat.clone(),
                    &b.irr * scale,
                    a.radicand.clone(),
                )
            }
            None => panic!(
                "cannot combine elements of Q(sqrt({})) and Q(sqrt({}))",
                a.radicand, b.radicand
            ),
        }
    }

    /// Field norm `r² − s²d`.
    fn norm(&self) -> BigRational {
        &self.rat * &self.rat - &self.irr * &self.irr * BigRational::from_integer(self.radicand.clone())
    }

    fn conjugate(&self) -> Scalar {
        Scalar {
            rat: self.rat.clone(),
            irr: -self.irr.clone(),
            radicand: self.radicand.clone(),
        }
    }

    pub fn signum(&self) -> Ordering {
        let rs = self.rat.cmp(&BigRational::zero());
        if self.irr.is_zero() {
            return rs;
        }
        let is = self.irr.cmp(&BigRational::zero());
        if rs == Ordering::Equal {
            return is;
        }
        if rs == is {
            return rs;
        }
        // Opposite signs: the larger magnitude wins.
        let r2 = &self.rat * &self.rat;
        let s2d = &self.irr * &self.irr * BigRational::from_integer(self.radicand.clone());
        match r2.cmp(&s2d) {
            Ordering::Greater => rs,
            Ordering::Less => is,
            Ordering::Equal => unreachable!("radicand is not a perfect square"),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.signum() == Ordering::Greater
    }

    pub fn is_negative(&self) -> bool {
        self.signum() == Ordering::Less
    }

    pub fn abs(&self) -> Scalar {
        if self.is_negative() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    pub fn recip(&self) -> Scalar {
        assert!(!self.is_zero(), "division by zero");
        let n = self.norm();
        let c = self.conjugate();
        Scalar::normalized(&c.rat / &n, &c.irr / &n, c.radicand)
    }

    /// Largest integer not exceeding the value.
    pub fn floor(&self) -> BigInt {
        if self.irr.is_zero() {
            return self.rat.floor().to_integer();
        }
        let s2d = &self.irr * &self.irr * BigRational::from_integer(self.radicand.clone());
        // floor(√(n/m)) = floor(isqrt(n·m) / m)
        let nm = s2d.numer() * s2d.denom();
        let approx = nm.sqrt().div_floor(s2d.denom());
        let mut k = if self.irr.is_positive() {
            self.rat.floor().to_integer() + approx
        } else {
            self.rat.floor().to_integer() - approx - 1
        };
        while Scalar::from_int(k.clone() + 1) <= *self {
            k += 1;
        }
        while Scalar::from_int(k.clone()) > *self {
            k -= 1;
        }
        k
    }

    pub fn ceil(&self) -> BigInt {
        -(-self.clone()).floor()
    }

    /// Nearest integer, halves rounded up.
    pub fn round(&self) -> BigInt {
        (self + &Scalar::from_ratio(1, 2)).floor()
    }

    pub fn to_f64(&self) -> f64 {
        let r = self.rat.to_f64().unwrap_or(f64::NAN);
        if self.irr.is_zero() {
            return r;
        }
        let s = self.irr.to_f64().unwrap_or(f64::NAN);
        let d = self.radicand.to_f64().unwrap_or(f64::NAN);
        r + s * d.sqrt()
    }

    /// Exact rational conversion of a finite `f64`.
    pub fn from_f64(v: f64) -> Option<Scalar> {
        BigRational::from_float(v).map(Scalar::from_rational)
    }

    /// Exact square root inside the current field, if one exists.
    ///
    /// A rational argument may open a new field; `field_hint` keeps the result
    /// in an existing field when the argument is a rational multiple of the
    /// hint radicand.
    pub fn sqrt_exact(&self, field_hint: Option<&BigInt>) -> Option<Scalar> {
        if self.is_negative() {
            return None;
        }
        if self.is_zero() {
            return Some(Scalar::zero());
        }
        if self.irr.is_zero() {
            if let Some(r) = rational_sqrt(&self.rat) {
                return Some(Scalar::from_rational(r));
            }
            if let Some(d) = field_hint.filter(|d| !d.is_zero()) {
                let ratio = &self.rat / BigRational::from_integer(d.clone());
                if let Some(r) = rational_sqrt(&ratio) {
                    return Some(Scalar::normalized(BigRational::zero(), r, d.clone()));
                }
            }
            // √(n/m) = √(n·m)/m
            let nm = self.rat.numer() * self.rat.denom();
            let (factor, radicand) = split_square(&nm);
            let irr = BigRational::new(factor, self.rat.denom().clone());
            return Some(Scalar::normalized(BigRational::zero(), irr, radicand));
        }
        // (p + q√d)² = p² + q²d + 2pq√d
        let norm = self.norm();
        let n = rational_sqrt(&norm)?;
        let two = BigRational::from_integer(BigInt::from(2));
        for t in [(&self.rat + &n) / &two, (&self.rat - &n) / &two] {
            if t.is_zero() {
                continue;
            }
            if let Some(p) = rational_sqrt(&t) {
                let q = &self.irr / (&two * &p);
                let cand = Scalar::normalized(p, q, self.radicand.clone());
                let cand = cand.abs();
                if &cand * &cand == *self {
                    return Some(cand);
                }
            }
        }
        None
    }

    /// Rational approximation of the square root with `digits` correct
    /// fractional decimal digits (truncated).
    pub fn sqrt_approx(&self, digits: u32) -> Scalar {
        assert!(!self.is_negative(), "square root of a negative value");
        let scale = BigInt::from(10u32).pow(digits);
        let scaled = (self * &Scalar::from_int(&scale * &scale)).floor();
        Scalar::from_rational(BigRational::new(scaled.sqrt(), scale))
    }

    /// Square root, exact when representable and otherwise approximated to
    /// `digits` fractional digits.
    pub fn sqrt(&self, field_hint: Option<&BigInt>, digits: u32) -> (Scalar, bool) {
        match self.sqrt_exact(field_hint) {
            Some(r) => (r, true),
            None => (self.sqrt_approx(digits), false),
        }
    }

    pub fn radicand(&self) -> Option<&BigInt> {
        (!self.irr.is_zero()).then_some(&self.radicand)
    }

    /// Truncated decimal rendering with at most `digits` fractional digits;
    /// trailing zeros are trimmed.
    pub fn to_decimal_string(&self, digits: u32) -> String {
        let neg = self.is_negative();
        let v = self.abs();
        let scale = BigInt::from(10u32).pow(digits);
        let scaled = (&v * &Scalar::from_int(scale.clone())).floor();
        let (int, frac) = scaled.div_rem(&scale);
        let mut out = String::new();
        if neg && !scaled.is_zero() {
            out.push('-');
        }
        out.push_str(&int.to_string());
        if digits > 0 && !frac.is_zero() {
            let mut f = frac.to_string();
            while f.len() < digits as usize {
                f.insert(0, '0');
            }
            let f = f.trim_end_matches('0');
            out.push('.');
            out.push_str(f);
        }
        out
    }

    /// Value scaled by `10^shift`.
    pub fn scale_pow10(&self, shift: i32) -> Scalar {
        let p = Scalar::from_int(BigInt::from(10u32).pow(shift.unsigned_abs()));
        if shift >= 0 {
            self * &p
        } else {
            self / &p
        }
    }

    pub fn min(self, other: Scalar) -> Scalar {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Scalar) -> Scalar {
        if self >= other {
            self
        } else {
            other
        }
    }
}

fn terminating_decimal(q: &BigRational) -> Option<String> {
    let mut d = q.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&d % &two).is_zero() {
        d /= &two;
        twos += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        fives += 1;
    }
    if !d.is_one() {
        return None;
    }
    let digits = twos.max(fives);
    Some(Scalar::from_rational(q.clone()).to_decimal_string(digits))
}

fn fmt_rational(q: &BigRational) -> String {
    terminating_decimal(q).unwrap_or_else(|| format!("{}/{}", q.numer(), q.denom()))
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.irr.is_zero() {
            return f.write_str(&fmt_rational(&self.rat));
        }
        let surd = format!("{}*sqrt({})", fmt_rational(&self.irr.abs()), self.radicand);
        let sign = if self.irr.is_negative() { "-" } else { "+" };
        if self.rat.is_zero() {
            if self.irr.is_negative() {
                write!(f, "-{surd}")
            } else {
                f.write_str(&surd)
            }
        } else {
            write!(f, "{} {} {}", fmt_rational(&self.rat), sign, surd)
        }
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({self})")
    }
}

fn parse_rational(s: &str) -> Result<BigRational, ParseScalarError> {
    let s = s.trim();
    let bad = || ParseScalarError::Invalid(s.to_string());
    if s.is_empty() {
        return Err(ParseScalarError::Empty);
    }
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit() || c == '_') {
        return Err(bad());
    }
    let digits: String = int.chars().chain(frac.chars()).filter(|c| *c != '_').collect();
    let frac_len = frac.chars().filter(|c| *c != '_').count() as u32;
    let n = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| bad())?;
    let q = BigRational::new(n, BigInt::from(10u32).pow(frac_len));
    Ok(if neg { -q } else { q })
}

fn parse_surd(s: &str) -> Result<(BigRational, BigInt), ParseScalarError> {
    let bad = || ParseScalarError::Invalid(s.to_string());
    let (coef, rest) = s.split_once("*sqrt(").ok_or_else(bad)?;
    let rad = rest.strip_suffix(')').ok_or_else(bad)?;
    let coef = if coef.trim().is_empty() {
        BigRational::one()
    } else {
        parse_rational(coef)?
    };
    let rad = BigInt::from_str(rad.trim()).map_err(|_| bad())?;
    if !rad.is_positive() {
        return Err(bad());
    }
    Ok((coef, rad))
}

impl FromStr for Scalar {
    type Err = ParseScalarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseScalarError::Empty);
        }
        if !s.contains("sqrt(") {
            return parse_rational(s).map(Scalar::from_rational);
        }
        // "<rat> + <c>*sqrt(d)", "<rat> - <c>*sqrt(d)", "<c>*sqrt(d)", "-<c>*sqrt(d)"
        for (sep, sign) in [(" + ", 1), (" - ", -1)] {
            if let Some((lhs, rhs)) = s.split_once(sep) {
                let rat = parse_rational(lhs)?;
                let (c, d) = parse_surd(rhs)?;
                let c = if sign < 0 { -c } else { c };
                return Ok(Scalar::from_rational(rat) + Scalar::surd(c, d));
            }
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (c, d) = parse_surd(body)?;
        Ok(Scalar::surd(if neg { -c } else { c }, d))
    }
}

impl Scalar {
    /// `coef · √radicand`, reduced.
    pub fn surd(coef: BigRational, radicand: BigInt) -> Scalar {
        let (factor, rest) = split_square(&radicand);
        Scalar::normalized(BigRational::zero(), coef * BigRational::from_integer(factor), rest)
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        if self.radicand == other.radicand {
            return self.rat == other.rat && self.irr == other.irr;
        }
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scalar {}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Scalar {
    fn shares_field(&self, other: &Scalar) -> bool {
        self.irr.is_zero()
            || other.irr.is_zero()
            || self.radicand == other.radicand
            || is_perfect_square(&(&self.radicand * &other.radicand)).is_some()
    }

    /// Rational interval of width at most `|irr|·10⁻ᵏ` containing the value.
    fn enclosure(&self, k: u32) -> (BigRational, BigRational) {
        if self.irr.is_zero() {
            return (self.rat.clone(), self.rat.clone());
        }
        let scale = BigInt::from(10u32).pow(k);
        let root = (&self.radicand * &scale * &scale).sqrt();
        let lo = BigRational::new(root.clone(), scale.clone());
        let hi = BigRational::new(root + 1, scale);
        let (a, b) = (&self.rat + &self.irr * lo, &self.rat + &self.irr * hi);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.shares_field(other) {
            return (self - other).signum();
        }
        // Both irrational in unrelated fields, hence never equal: refine
        // enclosures until they separate.
        let mut k = 16;
        loop {
            let (alo, ahi) = self.enclosure(k);
            let (blo, bhi) = other.enclosure(k);
            if ahi < blo {
                return Ordering::Less;
            }
            if bhi < alo {
                return Ordering::Greater;
            }
            k *= 2;
        }
    }
}

impl Default for Scalar {
    fn default() -> Self {
        Scalar::zero()
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar {
            rat: -self.rat,
            irr: -self.irr,
            radicand: self.radicand,
        }
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -self.clone()
    }
}

impl Add for &Scalar {
    type Output = Scalar;
    fn add(self, rhs: &Scalar) -> Scalar {
        let (ar, ai, br, bi, d) = Scalar::unify(self, rhs);
        Scalar::normalized(ar + br, ai + bi, d)
    }
}

impl Sub for &Scalar {
    type Output = Scalar;
    fn sub(self, rhs: &Scalar) -> Scalar {
        let (ar, ai, br, bi, d) = Scalar::unify(self, rhs);
        Scalar::normalized(ar - br, ai - bi, d)
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, rhs: &Scalar) -> Scalar {
        let (ar, ai, br, bi, d) = Scalar::unify(self, rhs);
        let dq = BigRational::from_integer(d.clone());
        let rat = &ar * &br + &ai * &bi * dq;
        let irr = ar * bi + br * ai;
        Scalar::normalized(rat, irr, d)
    }
}

impl Div for &Scalar {
    type Output = Scalar;
    fn div(self, rhs: &Scalar) -> Scalar {
        if rhs.irr.is_zero() {
            assert!(!rhs.rat.is_zero(), "division by zero");
            return Scalar::normalized(&self.rat / &rhs.rat, &self.irr / &rhs.rat, self.radicand.clone());
        }
        self * &rhs.recip()
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Scalar {
            type Output = Scalar;
            fn $m(self, rhs: Scalar) -> Scalar {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Scalar> for Scalar {
            type Output = Scalar;
            fn $m(self, rhs: &Scalar) -> Scalar {
                (&self).$m(rhs)
            }
        }
        impl $tr<Scalar> for &Scalar {
            type Output = Scalar;
            fn $m(self, rhs: Scalar) -> Scalar {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);
forward_owned!(Div, div);

impl std::iter::Sum for Scalar {
    fn sum<I: Iterator<Item = Scalar>>(iter: I) -> Scalar {
        iter.fold(Scalar::zero(), |acc, v| acc + v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::from_int(v)
    }
}

impl From<BigInt> for Scalar {
    fn from(v: BigInt) -> Self {
        Scalar::from_int(v)
    }
}

impl From<BigRational> for Scalar {
    fn from(v: BigRational) -> Self {
        Scalar::from_rational(v)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Greatest common divisor of positive rationals: gcd of numerators over lcm
/// of denominators. `None` for an empty set or any irrational input.
pub fn rational_gcd<'a>(values: impl IntoIterator<Item = &'a Scalar>) -> Option<Scalar> {
    let mut acc: Option<BigRational> = None;
    for v in values {
        let q = v.as_rational()?.abs();
        if q.is_zero() {
            continue;
        }
        acc = Some(match acc {
            None => q,
            Some(g) => {
                let num = g.numer() * q.denom();
                let num2 = q.numer() * g.denom();
                let den = g.denom() * q.denom();
                BigRational::new(num.gcd(&num2), den)
            }
        });
    }
    acc.map(Scalar::from_rational)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> Scalar {
        v.parse().unwrap()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for lit in ["0", "12.5", "-3/7", "10", "-5 + 1*sqrt(21)", "1/2*sqrt(3)", "-2*sqrt(7)"] {
            let v = s(lit);
            assert_eq!(s(&v.to_string()), v, "{lit}");
        }
        assert_eq!(s("0.000001").to_string(), "0.000001");
        assert_eq!(s("1_000.5"), s("1000.5"));
        assert!(Scalar::parse("abc").is_err());
        assert!(Scalar::parse("").is_err());
    }

    #[test]
    fn sqrt_of_2100_reduces() {
        let r = s("2100").sqrt_exact(None).unwrap();
        assert_eq!(r.to_string(), "10*sqrt(21)");
        assert_eq!(&r * &r, s("2100"));
    }

    #[test]
    fn field_arithmetic_is_exact() {
        let x = s("-5 + 1*sqrt(525)");
        // x² + 10x − 500 = 0
        let res = &x * &x + &s("10") * &x - s("500");
        assert!(res.is_zero());
        let inv = x.recip();
        assert_eq!(&inv * &x, Scalar::one());
    }

    #[test]
    fn sign_and_ordering() {
        let a = s("-5 + 1*sqrt(21)"); // ≈ -0.417
        assert!(a.is_negative());
        let b = s("5 - 1*sqrt(21)"); // ≈ 0.417
        assert!(b.is_positive());
        assert!(a < b);
        assert_eq!(a.floor(), BigInt::from(-1));
        assert_eq!(b.floor(), BigInt::from(0));
        assert_eq!(s("7/2").floor(), BigInt::from(3));
        assert_eq!(s("-7/2").floor(), BigInt::from(-4));
        assert_eq!(s("3*sqrt(2)").floor(), BigInt::from(4));
        assert_eq!(s("3*sqrt(2)").ceil(), BigInt::from(5));
    }

    #[test]
    fn sqrt_inside_field() {
        let r = s("3 + 2*sqrt(2)"); // (1 + √2)²
        assert_eq!(r.sqrt_exact(None).unwrap(), s("1 + 1*sqrt(2)"));
        assert!(s("2 + 1*sqrt(2)").sqrt_exact(None).is_none());
        let approx = s("2").sqrt_approx(20);
        assert_eq!(approx.to_decimal_string(20), "1.4142135623730950488");
    }

    #[test]
    fn mixed_radicands_with_square_ratio_combine() {
        let a = Scalar::normalized(BigRational::zero(), BigRational::one(), BigInt::from(2));
        let b = Scalar::normalized(BigRational::zero(), BigRational::one(), BigInt::from(8));
        assert_eq!(&b - &(&a * &Scalar::from_int(2)), Scalar::zero());
    }

    #[test]
    fn order_across_unrelated_fields() {
        // √2 ≈ 1.41421, √3 − 0.3 ≈ 1.43205
        let a = s("1*sqrt(2)");
        let b = s("-3/10 + 1*sqrt(3)");
        assert!(a < b);
        assert!(b > a);
        assert_ne!(a, b);
        let c = s("1*sqrt(3)");
        let d = s("1/4 + 1*sqrt(2)");
        assert!(c > d);
    }

    #[test]
    fn gcd_of_rationals() {
        let vals = [s("1.5"), s("2.25"), s("0.75")];
        assert_eq!(rational_gcd(vals.iter()).unwrap(), s("0.75"));
        let vals = [s("10"), s("1*sqrt(2)")];
        assert!(rational_gcd(vals.iter()).is_none());
    }

    #[test]
    fn decimal_rendering_truncates() {
        assert_eq!(s("1/3").to_decimal_string(4), "0.3333");
        assert_eq!(s("-1/3").to_decimal_string(2), "-0.33");
        assert_eq!(s("5").to_decimal_string(6), "5");
    }
}
