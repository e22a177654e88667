//! Exact symbolic expressions over jet coordinates.
//!
//! An [`Expr`] is kept in a canonical expanded form: a finite sum of rational
//! coefficients times monomials. A monomial is a product of atoms raised to
//! exact rational exponents, where an atom is either a coordinate variable or
//! a primitive multi-term polynomial (used for denominators and radicals that
//! cannot be distributed over a sum). Every constructor and operation returns
//! canonical values, so structural equality coincides with equality in the
//! algebra except for relations between distinct polynomial atoms, which
//! [`normalize`] and [`is_zero`] handle by clearing denominators.

mod calculus;
mod display;
mod eval;
mod parse;
mod simplify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub use calculus::{diff, total_derivative, JetContext};
pub use eval::{eval_numeric, CompiledExpr, EvalError, Scalar};
pub(crate) use eval::real_pow;
pub use parse::{parse_expr, ParseError};
pub use simplify::{is_zero, is_zero_with, normalize, numerator_denominator, ZeroVerdict};

/// Exact rational coefficient.
pub type Q = BigRational;
/// Exact rational exponent.
pub type Exp = Ratio<i64>;

/// Coordinate variables of the jet charts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Var {
    X,
    Y(u32),
    Xi(u32),
    Z,
    T,
    Nu,
    Lambda,
}

impl Var {
    pub fn name(&self) -> String {
        match self {
            Var::X => "x".into(),
            Var::Y(i) => format!("y{i}"),
            Var::Xi(i) => format!("xi{i}"),
            Var::Z => "z".into(),
            Var::T => "t".into(),
            Var::Nu => "nu".into(),
            Var::Lambda => "lambda".into(),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Indivisible factor of a monomial.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Atom {
    /// Positive rational constant with an exponent in `(0, 1)` whose power is
    /// not rational.
    Const(Q),
    Var(Var),
    /// Primitive polynomial with at least two terms; only ever appears with a
    /// negative or a non-integer exponent in `(0, 1)`.
    Poly(Arc<Expr>),
}

/// Sorted product of atoms with nonzero exponents.
pub type Monomial = Vec<(Atom, Exp)>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unsupported for exact mode: {0}")]
    Unsupported(String),
}

/// Canonical symbolic expression.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Expr {
    terms: Arc<BTreeMap<Monomial, Q>>,
}

fn q_int(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

fn exp_is_integer(e: &Exp) -> bool {
    *e.denom() == 1
}

impl Default for Expr {
    fn default() -> Self {
        Expr::zero()
    }
}

impl Expr {
    fn from_map(terms: BTreeMap<Monomial, Q>) -> Self {
        Expr {
            terms: Arc::new(terms),
        }
    }

    pub fn zero() -> Self {
        Expr::from_map(BTreeMap::new())
    }

    pub fn one() -> Self {
        Expr::constant(Q::one())
    }

    pub fn constant(c: Q) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Vec::new(), c);
        }
        Expr::from_map(m)
    }

    pub fn int(v: i64) -> Self {
        Expr::constant(q_int(v))
    }

    pub fn rational(n: i64, d: i64) -> Self {
        Expr::constant(Q::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn var(v: Var) -> Self {
        Expr::monomial(Q::one(), vec![(Atom::Var(v), Exp::one())])
    }

    pub fn y(i: u32) -> Self {
        Expr::var(Var::Y(i))
    }

    pub fn x() -> Self {
        Expr::var(Var::X)
    }

    pub fn xi(i: u32) -> Self {
        Expr::var(Var::Xi(i))
    }

    /// Monomial with unit coefficient.
    pub fn unit_monomial(m: &Monomial) -> Self {
        Expr::monomial(Q::one(), m.clone())
    }

    fn monomial(c: Q, m: Monomial) -> Self {
        let mut map = BTreeMap::new();
        if !c.is_zero() {
            map.insert(m, c);
        }
        Expr::from_map(map)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().map(|c| c.is_one()).unwrap_or(false)
    }

    /// The rational value if the expression is a constant.
    pub fn as_constant(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_empty().then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    /// Every variable occurring anywhere, including inside polynomial atoms.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        for m in self.terms.keys() {
            for (a, _) in m {
                match a {
                    Atom::Var(v) => {
                        out.insert(*v);
                    }
                    Atom::Poly(p) => p.collect_vars(out),
                    Atom::Const(_) => {}
                }
            }
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.vars().contains(&v)
    }

    /// Largest `i` with `y_i` occurring, if any.
    pub fn max_y_order(&self) -> Option<u32> {
        self.vars()
            .into_iter()
            .filter_map(|v| match v {
                Var::Y(i) => Some(i),
                _ => None,
            })
            .max()
    }

    /// Total size counted over terms of nested atoms as well.
    pub fn complexity(&self) -> usize {
        self.terms
            .keys()
            .map(|m| {
                1 + m
                    .iter()
                    .map(|(a, _)| match a {
                        Atom::Var(_) | Atom::Const(_) => 0,
                        Atom::Poly(p) => p.complexity(),
                    })
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn scale(&self, c: &Q) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        let map = self
            .terms
            .iter()
            .map(|(m, k)| (m.clone(), k * c))
            .collect();
        Expr::from_map(map)
    }

    fn add_expr(&self, other: &Expr) -> Expr {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let mut map = (*self.terms).clone();
        for (m, c) in other.terms.iter() {
            add_term(&mut map, m.clone(), c.clone());
        }
        Expr::from_map(map)
    }

    fn mul_expr(&self, other: &Expr) -> Expr {
        if self.is_zero() || other.is_zero() {
            return Expr::zero();
        }
        if let Some(c) = other.as_constant() {
            return self.scale(&c);
        }
        if let Some(c) = self.as_constant() {
            return other.scale(&c);
        }
        let mut map: BTreeMap<Monomial, Q> = BTreeMap::new();
        let mut deferred: Vec<Expr> = Vec::new();
        for (m1, c1) in self.terms.iter() {
            for (m2, c2) in other.terms.iter() {
                let (m, expansions) = mul_monomials(m1, m2);
                let c = c1 * c2;
                if expansions.is_empty() {
                    add_term(&mut map, m, c);
                } else {
                    let mut t = Expr::monomial(c, m);
                    for f in expansions {
                        t = t.mul_expr(&f);
                    }
                    deferred.push(t);
                }
            }
        }
        let mut out = Expr::from_map(map);
        for t in deferred {
            out = out.add_expr(&t);
        }
        out
    }

    fn pow_u32(&self, k: u32) -> Expr {
        let mut result = Expr::one();
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = result.mul_expr(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul_expr(&base);
            }
        }
        result
    }

    /// Exact division. Fails only for a zero divisor.
    pub fn try_div(&self, other: &Expr) -> Result<Expr, ExprError> {
        if other.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        if self.is_zero() {
            return Ok(Expr::zero());
        }
        let inv = other.pow(Exp::from_integer(-1))?;
        Ok(self.mul_expr(&inv))
    }

    /// Integer power, negative exponents allowed.
    pub fn powi(&self, k: i64) -> Result<Expr, ExprError> {
        self.pow(Exp::from_integer(k))
    }

    /// Rational power on the principal real branch. Distributes over
    /// products; a multi-term base becomes a polynomial atom.
    pub fn pow(&self, r: Exp) -> Result<Expr, ExprError> {
        if r.is_zero() {
            return Ok(Expr::one());
        }
        if self.is_zero() {
            return if r > Exp::zero() {
                Ok(Expr::zero())
            } else {
                Err(ExprError::DivisionByZero)
            };
        }
        if exp_is_integer(&r) && r > Exp::zero() {
            return Ok(self.pow_u32(r.to_integer() as u32));
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            let c_r = constant_pow(c, r)?;
            return Ok(monomial_pow(m, r).mul_expr(&c_r));
        }
        // Multi-term base: pull out content and common monomial, keep the rest
        // as a primitive polynomial atom.
        let keep_sign = *r.denom() % 2 == 0;
        let (content, common, prim) = split_primitive(self, keep_sign);
        let c_r = constant_pow(&content, r)?;
        let mono = monomial_pow(&common, r);
        let atom = if prim.terms.len() == 1 {
            // Factoring left a single term (cannot happen for a true sum, but
            // keep it total).
            prim.pow(r)?
        } else {
            atom_power(Atom::Poly(Arc::new(prim)), r)
        };
        Ok(mono.mul_expr(&atom).mul_expr(&c_r))
    }

    pub fn sqr(&self) -> Expr {
        self.mul_expr(self)
    }

    /// Replace a variable by an expression everywhere.
    pub fn substitute(&self, v: Var, value: &Expr) -> Result<Expr, ExprError> {
        let mut map = BTreeMap::new();
        map.insert(v, value.clone());
        self.substitute_many(&map)
    }

    pub fn substitute_many(&self, subs: &BTreeMap<Var, Expr>) -> Result<Expr, ExprError> {
        if subs.is_empty() || !self.vars().iter().any(|v| subs.contains_key(v)) {
            return Ok(self.clone());
        }
        let mut acc = Expr::zero();
        for (m, c) in self.terms.iter() {
            let mut t = Expr::constant(c.clone());
            for (a, e) in m {
                let factor = match a {
                    Atom::Var(v) => match subs.get(v) {
                        Some(val) => val.pow(*e)?,
                        None => atom_power(a.clone(), *e),
                    },
                    Atom::Const(_) => atom_power(a.clone(), *e),
                    Atom::Poly(p) => {
                        let inner = p.substitute_many(subs)?;
                        if inner == **p {
                            atom_power(a.clone(), *e)
                        } else {
                            inner.pow(*e)?
                        }
                    }
                };
                t = t.mul_expr(&factor);
            }
            acc = acc.add_expr(&t);
        }
        Ok(acc)
    }

    /// Coefficients of the expression viewed as a polynomial in `v`
    /// (non-negative integer powers only). Returns `None` when `v` occurs
    /// with another exponent or inside a polynomial atom.
    pub fn coefficients_in(&self, v: Var) -> Option<BTreeMap<u32, Expr>> {
        let mut out: BTreeMap<u32, BTreeMap<Monomial, Q>> = BTreeMap::new();
        for (m, c) in self.terms.iter() {
            let mut deg = 0u32;
            let mut rest = Vec::with_capacity(m.len());
            for (a, e) in m {
                match a {
                    Atom::Var(w) if *w == v => {
                        if !exp_is_integer(e) || *e < Exp::zero() {
                            return None;
                        }
                        deg = e.to_integer() as u32;
                    }
                    Atom::Poly(p) if p.depends_on(v) => return None,
                    _ => rest.push((a.clone(), *e)),
                }
            }
            add_term(out.entry(deg).or_default(), rest, c.clone());
        }
        Some(
            out.into_iter()
                .filter(|(_, m)| !m.is_empty())
                .map(|(d, m)| (d, Expr::from_map(m)))
                .collect(),
        )
    }
}

fn add_term(map: &mut BTreeMap<Monomial, Q>, m: Monomial, c: Q) {
    if c.is_zero() {
        return;
    }
    match map.entry(m) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(c);
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            let s = o.get() + c;
            if s.is_zero() {
                o.remove();
            } else {
                *o.get_mut() = s;
            }
        }
    }
}

/// Product of two monomials. Polynomial atoms whose exponent reaches one or
/// more have their integer part returned separately for expansion.
fn mul_monomials(a: &Monomial, b: &Monomial) -> (Monomial, Vec<Expr>) {
    let mut out: Monomial = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
            i += 1;
            a[i - 1].clone()
        } else if i >= a.len() || b[j].0 < a[i].0 {
            j += 1;
            b[j - 1].clone()
        } else {
            let e = a[i].1 + b[j].1;
            i += 1;
            j += 1;
            if e.is_zero() {
                continue;
            }
            (a[i - 1].0.clone(), e)
        };
        out.push(next);
    }
    extract_expansions(out)
}

/// Move integer parts of polynomial and constant atoms out of a monomial.
/// Returns the reduced monomial and the factors to multiply back in.
fn extract_expansions(m: Monomial) -> (Monomial, Vec<Expr>) {
    let mut expansions = Vec::new();
    let mut out = Vec::with_capacity(m.len());
    for (a, e) in m {
        match &a {
            Atom::Poly(p) if e >= Exp::one() => {
                let k = e.floor().to_integer();
                let frac = e - Exp::from_integer(k);
                expansions.push(p.pow_u32(k as u32));
                if !frac.is_zero() {
                    out.push((a, frac));
                }
            }
            Atom::Const(c) if !(Exp::zero() < e && e < Exp::one()) => {
                let k = e.floor().to_integer();
                let frac = e - Exp::from_integer(k);
                let mut v = Q::one();
                for _ in 0..k.unsigned_abs() {
                    v *= c;
                }
                if k < 0 {
                    v = v.recip();
                }
                expansions.push(Expr::constant(v));
                if !frac.is_zero() {
                    out.push((a, frac));
                }
            }
            _ => out.push((a, e)),
        }
    }
    (out, expansions)
}

fn monomial_pow(m: &Monomial, r: Exp) -> Expr {
    let mut acc = Expr::one();
    let mut plain: Monomial = Vec::with_capacity(m.len());
    for (a, e) in m {
        let ne = *e * r;
        if ne.is_zero() {
            continue;
        }
        plain.push((a.clone(), ne));
    }
    let (mono, expansions) = extract_expansions(plain);
    acc = acc.mul_expr(&Expr::monomial(Q::one(), mono));
    for f in expansions {
        acc = acc.mul_expr(&f);
    }
    acc
}

fn atom_power(a: Atom, r: Exp) -> Expr {
    monomial_pow(&vec![(a, Exp::one())], r)
}

/// `c^r` for a rational constant. Rational results are returned as
/// constants, otherwise the irrational part becomes a constant atom. Fails on
/// an even root of a negative number.
fn constant_pow(c: &Q, r: Exp) -> Result<Expr, ExprError> {
    if c.is_zero() {
        return if r > Exp::zero() {
            Ok(Expr::zero())
        } else {
            Err(ExprError::DivisionByZero)
        };
    }
    let num_exp = *r.numer();
    let den_exp = *r.denom();
    let negative = c.is_negative();
    if negative && den_exp % 2 == 0 {
        return Err(ExprError::Unsupported(format!(
            "even root of negative constant {c}"
        )));
    }
    let sign = if negative && num_exp % 2 != 0 { -Q::one() } else { Q::one() };
    let a = c.abs();
    let root = match (
        exact_root(a.numer(), den_exp as u32),
        exact_root(a.denom(), den_exp as u32),
    ) {
        (Some(n), Some(d)) => Some(Q::new(n, d)),
        _ => None,
    };
    match root {
        Some(base) => {
            let mut p = Q::one();
            for _ in 0..num_exp.unsigned_abs() {
                p *= &base;
            }
            if num_exp < 0 {
                p = p.recip();
            }
            Ok(Expr::constant(sign * p))
        }
        None => Ok(atom_power(Atom::Const(a), r).scale(&sign)),
    }
}

fn exact_root(v: &BigInt, k: u32) -> Option<BigInt> {
    if k == 1 {
        return Some(v.clone());
    }
    let r = v.nth_root(k);
    (num_traits::pow(r.clone(), k as usize) == *v).then_some(r)
}

/// Write `e = content * common * prim` where `common` collects the lowest
/// exponent of every atom over all terms (so `prim` has no denominators and
/// no common monomial factor) and `prim` has coprime integer coefficients.
fn split_primitive(e: &Expr, keep_sign: bool) -> (Q, Monomial, Expr) {
    let mut mins: BTreeMap<Atom, Exp> = BTreeMap::new();
    let mut present: BTreeMap<Atom, usize> = BTreeMap::new();
    let n_terms = e.terms.len();
    for m in e.terms.keys() {
        for (a, x) in m {
            *present.entry(a.clone()).or_default() += 1;
            let entry = mins.entry(a.clone()).or_insert(*x);
            if *x < *entry {
                *entry = *x;
            }
        }
    }
    // Atoms missing from some term have implicit exponent zero.
    let common: Monomial = mins
        .into_iter()
        .map(|(a, x)| {
            let x = if present[&a] < n_terms && x > Exp::zero() {
                Exp::zero()
            } else {
                x
            };
            (a, x)
        })
        .filter(|(_, x)| !x.is_zero())
        .collect();
    let inv_common: Monomial = common.iter().map(|(a, x)| (a.clone(), -*x)).collect();
    let mut reduced = BTreeMap::new();
    let mut deferred = Vec::new();
    for (m, c) in e.terms.iter() {
        let (nm, exps) = mul_monomials(m, &inv_common);
        if exps.is_empty() {
            add_term(&mut reduced, nm, c.clone());
        } else {
            let mut t = Expr::monomial(c.clone(), nm);
            for f in exps {
                t = t.mul_expr(&f);
            }
            deferred.push(t);
        }
    }
    let mut prim = Expr::from_map(reduced);
    for t in deferred {
        prim = prim.add_expr(&t);
    }
    let content = rational_content(&prim, keep_sign);
    let prim = prim.scale(&content.recip());
    (content, common, prim)
}

/// Positive gcd of numerators over lcm of denominators, carrying the sign of
/// the leading (largest) term unless `keep_sign`.
fn rational_content(e: &Expr, keep_sign: bool) -> Q {
    let mut g = BigInt::zero();
    let mut l = BigInt::one();
    for c in e.terms.values() {
        g = g.gcd(c.numer());
        l = l.lcm(c.denom());
    }
    if g.is_zero() {
        return Q::one();
    }
    let mut content = Q::new(g, l);
    if !keep_sign {
        if let Some((_, lead)) = e.terms.iter().next_back() {
            if lead.is_negative() {
                content = -content;
            }
        }
    }
    content
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        self.add_expr(rhs)
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        self.add_expr(&rhs)
    }
}

impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        self.add_expr(&-rhs)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        self.add_expr(&-&rhs)
    }
}

impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        self.mul_expr(rhs)
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        self.mul_expr(&rhs)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(&-Q::one())
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Self {
        Expr::int(v)
    }
}

impl From<Var> for Expr {
    fn from(v: Var) -> Self {
        Expr::var(v)
    }
}

/// `f64` approximation of a rational coefficient.
pub fn q_to_f64(q: &Q) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        // Very large numerator/denominator: divide in floating point of the
        // scaled parts.
        let n = q.numer().to_f64().unwrap_or(f64::NAN);
        let d = q.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}
