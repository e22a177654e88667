//! Numeric evaluation. Expressions are compiled once into a flat program of
//! sums of power products, then evaluated over any [`Scalar`] type: plain
//! `f64` or truncated Taylor series for jet propagation.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_traits::Zero;
use thiserror::Error;

use super::{q_to_f64, Atom, Exp, Expr, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative base raised to an even-denominator power")]
    NegativeBase,
    #[error("variable {0} is not assigned")]
    Unbound(Var),
    #[error("non-finite value")]
    NonFinite,
}

/// Numeric types the compiled evaluator runs over.
pub trait Scalar: Clone {
    /// Constant with the same shape as `self`.
    fn constant(&self, v: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn recip(&self) -> Result<Self, EvalError>;
    /// Rational power on the principal real branch.
    fn powr(&self, r: Exp) -> Result<Self, EvalError>;
    /// Leading numeric value.
    fn value(&self) -> f64;

    fn powi(&self, k: i64) -> Result<Self, EvalError> {
        let mut result = self.constant(1.0);
        let mut base = self.clone();
        let mut n = k.unsigned_abs();
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        if k < 0 {
            result.recip()
        } else {
            Ok(result)
        }
    }
}

impl Scalar for f64 {
    fn constant(&self, v: f64) -> Self {
        v
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
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn recip(&self) -> Result<Self, EvalError> {
        if *self == 0.0 {
            Err(EvalError::DivisionByZero)
        } else {
            Ok(1.0 / self)
        }
    }
    fn powr(&self, r: Exp) -> Result<Self, EvalError> {
        real_pow(*self, r)
    }
    fn value(&self) -> f64 {
        *self
    }
    fn powi(&self, k: i64) -> Result<Self, EvalError> {
        if k < 0 && *self == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(f64::powi(*self, k as i32))
    }
}

/// `b^r` on the principal real branch, extended to negative `b` for odd
/// denominators.
pub(crate) fn real_pow(b: f64, r: Exp) -> Result<f64, EvalError> {
    let (n, d) = (*r.numer(), *r.denom());
    if b == 0.0 {
        return if n > 0 {
            Ok(0.0)
        } else {
            Err(EvalError::DivisionByZero)
        };
    }
    if d == 1 {
        return Ok(b.powi(n as i32));
    }
    if b < 0.0 {
        if d % 2 == 0 {
            return Err(EvalError::NegativeBase);
        }
        let m = (-b).powf(n as f64 / d as f64);
        return Ok(if n % 2 == 0 { m } else { -m });
    }
    Ok(b.powf(n as f64 / d as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Base {
    Input(usize),
    Node(usize),
}

#[derive(Clone, Debug)]
struct Sum {
    /// Distinct powers used by the terms.
    powers: Vec<(Base, Exp)>,
    /// Coefficient and indices into `powers`.
    terms: Vec<(f64, Vec<usize>)>,
}

/// Expression compiled against a fixed ordering of input variables.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    inputs: Vec<Var>,
    nodes: Vec<Sum>,
    root: Sum,
}

struct Builder<'a> {
    slots: &'a HashMap<Var, usize>,
    nodes: Vec<Sum>,
    cache: HashMap<Arc<Expr>, usize>,
}

impl Builder<'_> {
    fn sum(&mut self, e: &Expr) -> Result<Sum, EvalError> {
        let mut index: BTreeMap<(Base, Exp), usize> = BTreeMap::new();
        let mut powers = Vec::new();
        let mut terms = Vec::with_capacity(e.num_terms());
        for (m, c) in e.terms() {
            let mut factors = Vec::with_capacity(m.len());
            let mut coeff = q_to_f64(c);
            for (a, x) in m {
                let base = match a {
                    Atom::Var(v) => Base::Input(*self.slots.get(v).ok_or(EvalError::Unbound(*v))?),
                    Atom::Poly(p) => Base::Node(self.node(p)?),
                    Atom::Const(k) => {
                        coeff *= real_pow(q_to_f64(k), *x)?;
                        continue;
                    }
                };
                let key = (base, *x);
                let i = *index.entry(key).or_insert_with(|| {
                    powers.push(key);
                    powers.len() - 1
                });
                factors.push(i);
            }
            terms.push((coeff, factors));
        }
        Ok(Sum { powers, terms })
    }

    fn node(&mut self, p: &Arc<Expr>) -> Result<usize, EvalError> {
        if let Some(&i) = self.cache.get(p) {
            return Ok(i);
        }
        let s = self.sum(p)?;
        self.nodes.push(s);
        let i = self.nodes.len() - 1;
        self.cache.insert(p.clone(), i);
        Ok(i)
    }
}

impl CompiledExpr {
    /// Compile with the given input order. Fails if `e` uses a variable not
    /// listed.
    pub fn new(e: &Expr, inputs: &[Var]) -> Result<Self, EvalError> {
        let slots: HashMap<Var, usize> = inputs.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut b = Builder {
            slots: &slots,
            nodes: Vec::new(),
            cache: HashMap::new(),
        };
        let root = b.sum(e)?;
        Ok(CompiledExpr {
            inputs: inputs.to_vec(),
            nodes: b.nodes,
            root,
        })
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn eval_sum<S: Scalar>(
        sum: &Sum,
        inputs: &[S],
        nodes: &[S],
        template: &S,
        mut term_abs: Option<&mut f64>,
    ) -> Result<S, EvalError> {
        let mut pw = Vec::with_capacity(sum.powers.len());
        for (base, x) in &sum.powers {
            let b = match base {
                Base::Input(i) => &inputs[*i],
                Base::Node(i) => &nodes[*i],
            };
            let v = if *x.denom() == 1 {
                if *x.numer() == 1 {
                    b.clone()
                } else {
                    b.powi(*x.numer())?
                }
            } else {
                b.powr(*x)?
            };
            pw.push(v);
        }
        let mut acc = template.constant(0.0);
        for (c, factors) in &sum.terms {
            let t = match factors.split_first() {
                None => template.constant(*c),
                Some((first, rest)) => {
                    let mut t = pw[*first].clone();
                    for f in rest {
                        t = t.mul(&pw[*f]);
                    }
                    t.scale(*c)
                }
            };
            if let Some(s) = term_abs.as_deref_mut() {
                *s = s.max(t.value().abs());
            }
            acc = acc.add(&t);
        }
        Ok(acc)
    }

    fn eval_inner<S: Scalar>(
        &self,
        inputs: &[S],
        template: &S,
        scale: Option<&mut f64>,
    ) -> Result<S, EvalError> {
        assert_eq!(inputs.len(), self.inputs.len(), "input arity mismatch");
        let mut nodes: Vec<S> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let v = Self::eval_sum(n, inputs, &nodes, template, None)?;
            nodes.push(v);
        }
        Self::eval_sum(&self.root, inputs, &nodes, template, scale)
    }

    /// Evaluate over an arbitrary scalar type; `template` fixes the shape of
    /// constants.
    pub fn eval_with<S: Scalar>(&self, inputs: &[S], template: &S) -> Result<S, EvalError> {
        self.eval_inner(inputs, template, None)
    }

    pub fn eval(&self, inputs: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_inner(inputs, &0.0, None)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Value together with the largest absolute value of a top-level term.
    pub fn eval_with_scale(&self, inputs: &[f64]) -> Result<(f64, f64), EvalError> {
        let mut scale = 0.0;
        let v = self.eval_inner(inputs, &0.0, Some(&mut scale))?;
        if v.is_finite() && scale.is_finite() {
            Ok((v, scale))
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn is_constant_zero(&self) -> bool {
        self.root.terms.is_empty() || self.root.terms.iter().all(|(c, _)| c.is_zero())
    }
}

/// Evaluate at a point given as an assignment of variables.
pub fn eval_numeric(e: &Expr, point: &HashMap<Var, f64>) -> Result<f64, EvalError> {
    let vars: Vec<Var> = e.vars().into_iter().collect();
    let mut inputs = Vec::with_capacity(vars.len());
    for v in &vars {
        inputs.push(*point.get(v).ok_or(EvalError::Unbound(*v))?);
    }
    CompiledExpr::new(e, &vars)?.eval(&inputs)
}
