//! Prime-field arithmetic and Lagrange interpolation.
//!
//! Every share, pseudo share and signature in the scheme is an element of
//! `Z_p` for a configurable prime `p < 2^63`. Elements are plain `u64`
//! newtypes; the modulus lives in [`PrimeField`], which performs all
//! reductions.

use std::fmt;

use crate::error::{Error, Result};

/// 2^61 - 1, the default modulus.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// An element of `Z_p`. Always holds a value in `[0, p)` of the field that
/// produced it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fe(u64);

impl Fe {
    pub const ZERO: Fe = Fe(0);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The prime field `Z_p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    p: u64,
}

impl PrimeField {
    /// Creates the field, rejecting composite or oversized moduli.
    pub fn new(p: u64) -> Result<Self> {
        if !(3..1 << 63).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "modulus {p} outside supported range [3, 2^63)"
            )));
        }
        if !is_prime(p) {
            return Err(Error::InvalidConfig(format!("modulus {p} is not prime")));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.p
    }

    /// Reduces an arbitrary integer into the field.
    #[inline]
    pub fn elem(&self, v: u64) -> Fe {
        Fe(v % self.p)
    }

    /// Reduces a signed integer, mapping negatives to `p - |v|`.
    pub fn elem_signed(&self, v: i128) -> Fe {
        Fe(v.rem_euclid(self.p as i128) as u64)
    }

    /// Wraps a value already known to be `< p`.
    pub fn checked(&self, v: u64) -> Result<Fe> {
        if v < self.p {
            Ok(Fe(v))
        } else {
            Err(Error::OutOfRange(format!("{v} is not below p = {}", self.p)))
        }
    }

    /// Centered lift: values above `p / 2` are read as negatives.
    pub fn to_signed(&self, a: Fe) -> i128 {
        if a.0 > self.p / 2 {
            a.0 as i128 - self.p as i128
        } else {
            a.0 as i128
        }
    }

    #[inline]
    pub fn add(&self, a: Fe, b: Fe) -> Fe {
        let s = a.0 + b.0;
        Fe(if s >= self.p { s - self.p } else { s })
    }

    #[inline]
    pub fn sub(&self, a: Fe, b: Fe) -> Fe {
        Fe(if a.0 >= b.0 { a.0 - b.0 } else { a.0 + self.p - b.0 })
    }

    #[inline]
    pub fn neg(&self, a: Fe) -> Fe {
        if a.0 == 0 {
            a
        } else {
            Fe(self.p - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: Fe, b: Fe) -> Fe {
        Fe(((a.0 as u128 * b.0 as u128) % self.p as u128) as u64)
    }

    pub fn pow(&self, mut base: Fe, mut exp: u64) -> Fe {
        let mut acc = Fe(1 % self.p);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem. Zero has none.
    pub fn inv(&self, a: Fe) -> Option<Fe> {
        if a.0 == 0 {
            None
        } else {
            Some(self.pow(a, self.p - 2))
        }
    }

    pub fn sum<I: IntoIterator<Item = Fe>>(&self, items: I) -> Fe {
        items.into_iter().fold(Fe::ZERO, |acc, x| self.add(acc, x))
    }
}

/// Polynomial over `Z_p` in coefficient form, constant term first, trailing
/// zeros trimmed. The zero polynomial is `[0]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    coeffs: Vec<Fe>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<Fe>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&Fe::ZERO) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Fe::ZERO);
        }
        Self { coeffs }
    }

    pub fn coefficients(&self) -> &[Fe] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation.
    pub fn eval(&self, field: &PrimeField, x: Fe) -> Fe {
        self.coeffs
            .iter()
            .rev()
            .fold(Fe::ZERO, |acc, &c| field.add(field.mul(acc, x), c))
    }
}

/// Free-function form of [`Polynomial::eval`].
pub fn poly_eval(field: &PrimeField, poly: &Polynomial, x: Fe) -> Fe {
    poly.eval(field, x)
}

fn check_abscissas(points: &[(Fe, Fe)]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (i, (xi, _)) in points.iter().enumerate() {
        if points[..i].iter().any(|(xj, _)| xj == xi) {
            return Err(Error::DuplicateAbscissa(xi.value()));
        }
    }
    Ok(())
}

/// Builds the unique polynomial of degree `< points.len()` through `points`.
///
/// Runs in `O(k^2)`: the master product `prod (x - x_j)` is formed once, and
/// each basis numerator is recovered from it by synthetic division.
pub fn lagrange_interpolate(field: &PrimeField, points: &[(Fe, Fe)]) -> Result<Polynomial> {
    check_abscissas(points)?;
    let k = points.len();

    // master[i] is the coefficient of x^i in prod_j (x - x_j); degree k.
    let mut master = vec![Fe::ZERO; k + 1];
    master[0] = field.elem(1);
    for (deg, &(xj, _)) in points.iter().enumerate() {
        let neg = field.neg(xj);
        for i in (0..=deg + 1).rev() {
            let shifted = if i > 0 { master[i - 1] } else { Fe::ZERO };
            master[i] = field.add(shifted, field.mul(master[i], neg));
        }
    }

    let mut out = vec![Fe::ZERO; k];
    let mut quotient = vec![Fe::ZERO; k];
    for &(xi, yi) in points {
        // master / (x - xi), high coefficient first.
        let mut carry = Fe::ZERO;
        for i in (0..k).rev() {
            carry = field.add(master[i + 1], field.mul(carry, xi));
            quotient[i] = carry;
        }
        let denom = Polynomial::new(quotient.clone()).eval(field, xi);
        let scale = field.mul(yi, field.inv(denom).expect("distinct abscissas"));
        for (o, &q) in out.iter_mut().zip(&quotient) {
            *o = field.add(*o, field.mul(q, scale));
        }
    }
    Ok(Polynomial::new(out))
}

/// Evaluates the interpolating polynomial of `points` at `x` without
/// materializing coefficients.
pub fn lagrange_eval(field: &PrimeField, points: &[(Fe, Fe)], x: Fe) -> Result<Fe> {
    check_abscissas(points)?;
    let mut acc = Fe::ZERO;
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut num = field.elem(1);
        let mut den = field.elem(1);
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                num = field.mul(num, field.sub(x, xj));
                den = field.mul(den, field.sub(xi, xj));
            }
        }
        let term = field.mul(yi, field.mul(num, field.inv(den).expect("distinct abscissas")));
        acc = field.add(acc, term);
    }
    Ok(acc)
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &q in &SMALL {
        if n.is_multiple_of(q) {
            return n == q;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        r
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &SMALL {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
