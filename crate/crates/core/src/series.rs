//! Truncated Taylor series `c[0] + c[1] h + ... + c[L-1] h^(L-1)`.
//!
//! The coefficient ring is generic: `f64` for Taylor-mode differentiation
//! along numeric solutions, [`Expr`] for exact symbolic jets.

use std::fmt::Debug;

use num_traits::{ToPrimitive, Zero};

use crate::expr::{q_to_f64, EvalError, Exp, Expr, Scalar, Q};

/// Exact-or-float coefficient ring with division.
pub trait Coeff: Clone + Debug + PartialEq {
    fn zero() -> Self;
    fn from_ratio(n: i64, d: i64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Multiplicative inverse; `None` for zero.
    fn inv(&self) -> Option<Self>;
    fn is_zero(&self) -> bool;

    fn one() -> Self {
        Self::from_ratio(1, 1)
    }
    fn from_int(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        n as f64 / d as f64
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn inv(&self) -> Option<Self> {
        (*self != 0.0).then(|| 1.0 / self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
}

impl Coeff for Expr {
    fn zero() -> Self {
        Expr::zero()
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        Expr::rational(n, d)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn inv(&self) -> Option<Self> {
        Expr::one().try_div(self).ok()
    }
    fn is_zero(&self) -> bool {
        Expr::is_zero(self)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series has non-invertible leading coefficient")]
    NotInvertible,
    #[error("series too short for the requested operation")]
    TooShort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series<T> {
    c: Vec<T>,
}

impl<T: Coeff> Series<T> {
    pub fn new(c: Vec<T>) -> Self {
        Series { c }
    }

    pub fn zeros(len: usize) -> Self {
        Series {
            c: vec![T::zero(); len],
        }
    }

    pub fn constant(v: T, len: usize) -> Self {
        let mut s = Self::zeros(len);
        if len > 0 {
            s.c[0] = v;
        }
        s
    }

    /// `v + h`.
    pub fn variable(v: T, len: usize) -> Self {
        let mut s = Self::constant(v, len);
        if len > 1 {
            s.c[1] = T::one();
        }
        s
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.c
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.c
    }

    pub fn coeff(&self, k: usize) -> &T {
        &self.c[k]
    }

    pub fn truncate(&self, len: usize) -> Self {
        Series {
            c: self.c[..len.min(self.len())].to_vec(),
        }
    }

    /// `k`-th derivative at the expansion point, `k! c[k]`.
    pub fn derivative_at_0(&self, k: usize) -> T {
        let mut f = T::one();
        for i in 2..=k {
            f = f.mul(&T::from_int(i as i64));
        }
        self.c[k].mul(&f)
    }

    pub fn add(&self, o: &Self) -> Self {
        let n = self.len().min(o.len());
        Series {
            c: (0..n).map(|k| self.c[k].add(&o.c[k])).collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let n = self.len().min(o.len());
        Series {
            c: (0..n).map(|k| self.c[k].sub(&o.c[k])).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        Series {
            c: self.c.iter().map(|v| v.neg()).collect(),
        }
    }

    pub fn scale(&self, s: &T) -> Self {
        Series {
            c: self.c.iter().map(|v| v.mul(s)).collect(),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.len().min(o.len());
        let mut c = vec![T::zero(); n];
        for (i, a) in self.c.iter().take(n).enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.c.iter().take(n - i).enumerate() {
                if b.is_zero() {
                    continue;
                }
                c[i + j] = c[i + j].add(&a.mul(b));
            }
        }
        Series { c }
    }

    pub fn recip(&self) -> Result<Self, SeriesError> {
        let n = self.len();
        if n == 0 {
            return Ok(self.clone());
        }
        let inv0 = self.c[0].inv().ok_or(SeriesError::NotInvertible)?;
        let mut r = vec![T::zero(); n];
        r[0] = inv0.clone();
        for k in 1..n {
            let mut s = T::zero();
            for j in 1..=k {
                if self.c[j].is_zero() {
                    continue;
                }
                s = s.add(&self.c[j].mul(&r[k - j]));
            }
            r[k] = s.mul(&inv0).neg();
        }
        Ok(Series { c: r })
    }

    pub fn div(&self, o: &Self) -> Result<Self, SeriesError> {
        Ok(self.mul(&o.recip()?))
    }

    /// Derivative in `h`; one order shorter.
    pub fn derivative(&self) -> Self {
        Series {
            c: (1..self.len())
                .map(|k| self.c[k].mul(&T::from_int(k as i64)))
                .collect(),
        }
    }

    /// Antiderivative with the given constant term; one order longer.
    pub fn integral(&self, c0: T) -> Self {
        let mut c = Vec::with_capacity(self.len() + 1);
        c.push(c0);
        for (k, v) in self.c.iter().enumerate() {
            c.push(v.mul(&T::from_ratio(1, k as i64 + 1)));
        }
        Series { c }
    }

    /// `self(inner(h))` for `inner` with zero constant term.
    pub fn compose(&self, inner: &Self) -> Result<Self, SeriesError> {
        if inner.is_empty() || !inner.c[0].is_zero() {
            return Err(SeriesError::NotInvertible);
        }
        let n = self.len().min(inner.len());
        let mut acc = Series::constant(self.c[n.saturating_sub(1)].clone(), n);
        for k in (0..n.saturating_sub(1)).rev() {
            acc = acc.mul(&inner.truncate(n));
            acc.c[0] = acc.c[0].add(&self.c[k]);
        }
        Ok(acc)
    }

    /// Compositional inverse of a series with `c[0] = 0` and invertible
    /// `c[1]`.
    pub fn reversion(&self) -> Result<Self, SeriesError> {
        let n = self.len();
        if n < 2 || !self.c[0].is_zero() {
            return Err(SeriesError::TooShort);
        }
        let inv1 = self.c[1].inv().ok_or(SeriesError::NotInvertible)?;
        // Newton-free iteration: solve self(g(h)) = h one coefficient at a
        // time.
        let mut g = Series::zeros(n);
        g.c[1] = inv1.clone();
        for k in 2..n {
            let comp = self.truncate(k + 1).compose(&g.truncate(k + 1))?;
            g.c[k] = comp.c[k].mul(&inv1).neg();
        }
        Ok(g)
    }

    pub fn map<U: Coeff>(&self, f: impl Fn(&T) -> U) -> Series<U> {
        Series {
            c: self.c.iter().map(f).collect(),
        }
    }
}

impl Series<f64> {
    /// Value at offset `h`.
    pub fn eval_at(&self, h: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, v| acc * h + v)
    }
}

impl Series<Expr> {
    pub fn to_f64(&self) -> Option<Series<f64>> {
        self.c
            .iter()
            .map(|e| e.as_constant().map(|q| q_to_f64(&q)))
            .collect::<Option<Vec<_>>>()
            .map(Series::new)
    }
}

impl Scalar for Series<f64> {
    fn constant(&self, v: f64) -> Self {
        Series::constant(v, self.len())
    }
    fn add(&self, o: &Self) -> Self {
        Series::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Series::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Series::mul(self, o)
    }
    fn scale(&self, c: f64) -> Self {
        Series::scale(self, &c)
    }
    fn recip(&self) -> Result<Self, EvalError> {
        Series::recip(self).map_err(|_| EvalError::DivisionByZero)
    }
    fn powr(&self, r: Exp) -> Result<Self, EvalError> {
        let n = self.len();
        if n == 0 {
            return Ok(self.clone());
        }
        let s0 = self.c[0];
        if s0 == 0.0 {
            // Only integer powers are analytic at a zero of the base.
            if *r.denom() == 1 && *r.numer() > 0 {
                return Scalar::powi(self, *r.numer());
            }
            return Err(EvalError::DivisionByZero);
        }
        let rf = r.to_f64().unwrap_or(f64::NAN);
        let mut a = vec![0.0; n];
        a[0] = crate::expr::real_pow(s0, r)?;
        // a' s = r a s'  gives  a_k = 1/(k s0) sum_{j=1}^{k} ((r+1) j - k) s_j a_{k-j}
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += ((rf + 1.0) * j as f64 - k as f64) * self.c[j] * a[k - j];
            }
            a[k] = acc / (k as f64 * s0);
        }
        Ok(Series { c: a })
    }
    fn value(&self) -> f64 {
        self.c.first().copied().unwrap_or(0.0)
    }
}

/// Factorial as `f64`.
pub fn factorial(k: usize) -> f64 {
    (2..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// Binomial coefficient as an exact rational.
pub fn binomial(n: usize, k: usize) -> Q {
    if k > n {
        return Q::zero();
    }
    let mut r = Q::from_integer(1.into());
    for i in 0..k {
        r = r * Q::from_integer(((n - i) as i64).into()) / Q::from_integer(((i + 1) as i64).into());
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, CompiledExpr, Var};

    fn exp_series(len: usize) -> Series<f64> {
        Series::new((0..len).map(|k| 1.0 / factorial(k)).collect())
    }

    #[test]
    fn reciprocal_of_exp() {
        let e = exp_series(10);
        let r = e.recip().unwrap();
        for k in 0..10 {
            let want = (-1f64).powi(k as i32) / factorial(k);
            assert!((r.c[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn reversion_of_log1p_is_expm1() {
        let n = 9;
        let log1p = Series::new(
            (0..n)
                .map(|k| if k == 0 { 0.0 } else { (-1f64).powi(k as i32 + 1) / k as f64 })
                .collect(),
        );
        let g = log1p.reversion().unwrap();
        for k in 1..n {
            assert!((g.c[k] - 1.0 / factorial(k)).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn exact_reversion_round_trip() {
        let s: Series<Expr> = Series::new(vec![
            Expr::zero(),
            Expr::int(1),
            Expr::y(0),
            Expr::rational(1, 3),
            Expr::y(1),
        ]);
        let g = s.reversion().unwrap();
        let id = s.compose(&g).unwrap();
        assert_eq!(id, Series::variable(Expr::zero(), 5));
    }

    #[test]
    fn rational_power_matches_binomial_series() {
        // (1+h)^(1/3)
        let s = Series::variable(1.0, 8);
        let p = Scalar::powr(&s, Exp::new(1, 3)).unwrap();
        let mut c = 1.0;
        for k in 0..8 {
            assert!((p.c[k] - c).abs() < 1e-14);
            c *= (1.0 / 3.0 - k as f64) / (k as f64 + 1.0);
        }
    }

    #[test]
    fn compiled_expression_over_series() {
        // d^k/dx^k of 1/x at x=2 via series evaluation.
        let e = parse_expr("1/x + x^(1/2)").unwrap();
        let c = CompiledExpr::new(&e, &[Var::X]).unwrap();
        let x = Series::variable(2.0, 6);
        let v = c.eval_with(&[x.clone()], &x).unwrap();
        for k in 0..6 {
            let inv = (-1f64).powi(k as i32) / 2f64.powi(k as i32 + 1);
            let mut sq = 2f64.sqrt();
            for j in 0..k {
                sq *= (0.5 - j as f64) / (j as f64 + 1.0) / 2.0;
            }
            assert!((v.c[k] - inv - sq).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 2), Q::from_integer(15.into()));
        assert_eq!(binomial(3, 5), Q::zero());
    }
}
