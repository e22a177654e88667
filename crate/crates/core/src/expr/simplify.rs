//! Denominator clearing, cancellation of polynomial atoms and zero testing.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{CompiledExpr, EvalError};
use super::{add_term, Atom, Exp, Expr, Monomial, Q};

/// Outcome of a zero test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVerdict {
    Zero,
    ProbablyZero,
    Nonzero,
}

const PROBE_SEED: u64 = 0x5eed_0f_2e70;
const PROBES: usize = 12;

/// Split `e = num / den` where `num` has no negative exponents and `den` is a
/// product of atoms with positive exponents.
pub fn numerator_denominator(e: &Expr) -> (Expr, Monomial) {
    let mut den: BTreeMap<Atom, Exp> = BTreeMap::new();
    for m in e.terms.keys() {
        for (a, x) in m {
            if *x < Exp::zero() {
                let d = den.entry(a.clone()).or_insert(Exp::zero());
                if -*x > *d {
                    *d = -*x;
                }
            }
        }
    }
    let den: Monomial = den.into_iter().collect();
    let num = e.mul_expr(&Expr::monomial(Q::one(), den.clone()));
    (num, den)
}

fn has_radicals(e: &Expr) -> bool {
    e.terms
        .keys()
        .any(|m| m.iter().any(|(a, _)| !matches!(a, Atom::Var(_))))
}

/// Exact quotient `n / d` of polynomials (atoms are treated as independent
/// indeterminates), or `None` if `d` does not divide `n`.
fn exact_quotient(n: &Expr, d: &Expr) -> Option<Expr> {
    // Graded lexicographic order on exponent vectors over the union of atoms.
    fn key(m: &Monomial) -> (Exp, Vec<(Atom, Exp)>) {
        let deg = m.iter().fold(Exp::zero(), |s, (_, x)| s + x);
        (deg, m.clone())
    }
    fn leading(e: &Expr) -> Option<(Monomial, Q)> {
        e.terms
            .iter()
            .max_by(|a, b| {
                let (da, ma) = key(a.0);
                let (db, mb) = key(b.0);
                da.cmp(&db).then_with(|| grlex_tail(&ma, &mb))
            })
            .map(|(m, c)| (m.clone(), c.clone()))
    }
    let (dm, dc) = leading(d)?;
    let mut rem = n.clone();
    let mut quot: BTreeMap<Monomial, Q> = BTreeMap::new();
    let budget = 4 * (n.num_terms() + 1) * (d.num_terms() + 1) + 64;
    for _ in 0..budget {
        let Some((rm, rc)) = leading(&rem) else {
            return Some(Expr::from_map(quot));
        };
        let qm = monomial_quotient(&rm, &dm)?;
        let qc = rc / &dc;
        let qt = Expr::monomial(qc.clone(), qm.clone());
        rem = &rem - &(&qt * d);
        add_term(&mut quot, qm, qc);
    }
    None
}

/// Lexicographic comparison of exponent vectors where atoms missing from a
/// monomial have exponent zero; earlier atoms dominate.
fn grlex_tail(a: &Monomial, b: &Monomial) -> std::cmp::Ordering {
    let mut i = 0;
    let mut j = 0;
    loop {
        match (a.get(i), b.get(j)) {
            (None, None) => return std::cmp::Ordering::Equal,
            (Some((_, x)), None) => return x.cmp(&Exp::zero()),
            (None, Some((_, y))) => return Exp::zero().cmp(y),
            (Some((aa, x)), Some((bb, y))) => {
                if aa == bb {
                    if x != y {
                        return x.cmp(y);
                    }
                    i += 1;
                    j += 1;
                } else if aa < bb {
                    return x.cmp(&Exp::zero());
                } else {
                    return Exp::zero().cmp(y);
                }
            }
        }
    }
}

fn monomial_quotient(a: &Monomial, b: &Monomial) -> Option<Monomial> {
    let mut out: BTreeMap<Atom, Exp> = a.iter().cloned().collect();
    for (atom, x) in b {
        let e = out.entry(atom.clone()).or_insert(Exp::zero());
        *e -= x;
        if *e < Exp::zero() {
            return None;
        }
    }
    Some(out.into_iter().filter(|(_, x)| !x.is_zero()).collect())
}

/// Canonical rational form: denominators are cleared, polynomial atoms that
/// divide the numerator exactly are cancelled, and common variable powers are
/// removed.
pub fn normalize(e: &Expr) -> Expr {
    let (mut num, den) = numerator_denominator(e);
    if num.is_zero() {
        return Expr::zero();
    }
    let mut rest: Monomial = Vec::new();
    for (a, x) in den {
        let mut x = x;
        if let Atom::Poly(p) = &a {
            while x >= Exp::one() {
                match exact_quotient(&num, p) {
                    Some(q) => {
                        num = q;
                        x -= Exp::one();
                    }
                    None => break,
                }
            }
        } else {
            // Cancel the smallest power of this variable in the numerator.
            let common = num
                .terms
                .keys()
                .map(|m| {
                    m.iter()
                        .find(|(b, _)| *b == a)
                        .map(|(_, y)| *y)
                        .unwrap_or(Exp::zero())
                })
                .min()
                .unwrap_or(Exp::zero());
            let c = if common < x { common } else { x };
            if c > Exp::zero() {
                num = num.mul_expr(&Expr::monomial(Q::one(), vec![(a.clone(), -c)]));
                x -= c;
            }
        }
        if !x.is_zero() {
            rest.push((a, -x));
        }
    }
    num.mul_expr(&Expr::monomial(Q::one(), rest))
}

/// Zero test with the default tolerance and probe seed.
pub fn is_zero(e: &Expr, tol: f64) -> Result<ZeroVerdict, EvalError> {
    is_zero_with(e, tol, PROBE_SEED)
}

/// Zero test: exact after clearing denominators; otherwise (only possible
/// with radicals of sums) numeric probing on the positive domain.
pub fn is_zero_with(e: &Expr, tol: f64, seed: u64) -> Result<ZeroVerdict, EvalError> {
    if e.is_zero() {
        return Ok(ZeroVerdict::Zero);
    }
    let (num, _) = numerator_denominator(e);
    let num = normalize(&num);
    if num.is_zero() {
        return Ok(ZeroVerdict::Zero);
    }
    if !has_radicals(&num) {
        // A nonzero combination of distinct monomials with rational exponents
        // is a nonzero function on the positive orthant.
        return Ok(ZeroVerdict::Nonzero);
    }
    probe(&num, tol, seed)
}

fn probe(e: &Expr, tol: f64, seed: u64) -> Result<ZeroVerdict, EvalError> {
    let vars: Vec<_> = e.vars().into_iter().collect();
    let compiled = CompiledExpr::new(e, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    let mut last_err = EvalError::DivisionByZero;
    for _ in 0..PROBES * 8 {
        if ok >= PROBES {
            break;
        }
        let pt: Vec<f64> = vars
            .iter()
            .map(|_| rng.gen_range(1u32..=64) as f64 / 16.0)
            .collect();
        match compiled.eval_with_scale(&pt) {
            Ok((v, scale)) => {
                ok += 1;
                if v.abs() > tol * (1.0 + scale) {
                    return Ok(ZeroVerdict::Nonzero);
                }
            }
            Err(err) => last_err = err,
        }
    }
    if ok == 0 {
        return Err(last_err);
    }
    Ok(ZeroVerdict::ProbablyZero)
}
