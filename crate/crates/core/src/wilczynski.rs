//! Wilczynski invariants of linear ODEs and projective curves.
//!
//! A linear equation `e^(N+1) = sum_i p_i e^(i)` is brought to
//! Laguerre–Forsyth form (`p_N = p_{N-1} = 0`) pointwise on Taylor jets: a
//! rescaling of `e` removes `p_N`, a reparametrization solving a Schwarzian
//! equation removes `p_{N-1}`, and a second rescaling restores `p_N = 0`.
//! The reparametrization is normalized to agree with the original parameter
//! to second order at the expansion point, so invariants evaluated there are
//! densities in the original parameter.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{diff, is_zero, q_to_f64, Expr, Var, ZeroVerdict, Q};
use crate::jet::{JetError, LinearODECoeffs, OrdODE};
use crate::series::{binomial, factorial, Coeff, Series, SeriesError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WilczynskiError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("coefficients are not in canonical form (p_N, p_(N-1) must vanish)")]
    NotCanonical,
    #[error("jets too short: need {needed} coefficients, have {have}")]
    InsufficientJet { needed: usize, have: usize },
    #[error("reparametrization has no closed form; sample the coefficients first")]
    NeedsSampling,
    #[error("osculating frame is singular at t = {t}")]
    Singular { t: f64 },
    #[error("self-duality form is not unique: {dimension}-dimensional family, witness residual {witness:e}")]
    Ambiguous { dimension: usize, witness: f64 },
    #[error("operation requires {0}")]
    Precondition(String),
}

fn c<T: Coeff>(q: &Q) -> T {
    let n = q.numer().try_into().expect("coefficient numerator fits i64");
    let d = q.denom().try_into().expect("coefficient denominator fits i64");
    T::from_ratio(n, d)
}

/// Remove `p_N` by `e -> s e` with `s'/s = p_N/(N+1)`.
pub fn scale_out_top<T: Coeff>(p: &[Series<T>]) -> Vec<Series<T>> {
    let n = p.len() - 1;
    let a = p[n].scale(&T::from_ratio(1, n as i64 + 1));
    // s^(j) = s * sigma_j
    let mut sigma = vec![Series::constant(T::one(), a.len())];
    for j in 0..=n {
        let next = sigma[j].derivative().add(&sigma[j].mul(&a));
        sigma.push(next);
    }
    (0..=n)
        .map(|k| {
            if k == n {
                return Series::zeros(p[n].len());
            }
            let mut acc = sigma[n + 1 - k].scale(&c::<T>(&binomial(n + 1, k)).neg());
            for (i, pi) in p.iter().enumerate().skip(k) {
                let term = pi.mul(&sigma[i - k]).scale(&c(&binomial(i, k)));
                acc = acc.add(&term);
            }
            acc
        })
        .collect()
}

/// Laguerre–Forsyth form of a coefficient jet at its expansion point.
pub fn canonicalize_jet<T: Coeff>(p: &[Series<T>]) -> Result<Vec<Series<T>>, WilczynskiError> {
    let n = p.len() - 1;
    if n < 2 {
        return Err(WilczynskiError::Precondition("order at least 3".into()));
    }
    let pt = scale_out_top(p);
    // Schwarzian of the new parameter: {xi, t} = -12 p_{N-1} / ((N+2)(N+1)N)
    let half_s = pt[n - 1].scale(&T::from_ratio(-6, ((n + 2) * (n + 1) * n) as i64));
    // xi = u1/u2 with u'' + (S/2) u = 0, u1 = t + ..., u2 = 1 + O(t^2).
    let u1 = second_order_solution(&half_s, T::zero(), T::one());
    let u2 = second_order_solution(&half_s, T::one(), T::zero());
    let xi = u1.div(&u2)?;
    let phi = xi.reversion()?;
    let psi = phi.derivative().recip()?;
    let composed: Vec<Series<T>> = pt
        .iter()
        .map(|s| s.compose(&phi.truncate(s.len())))
        .collect::<Result<_, _>>()?;
    // (d/dt)^m = sum_k c[m][k] (d/dtau)^k with c[m+1][k] = psi (c[m][k]' + c[m][k-1]).
    let mut cm: Vec<Vec<Option<Series<T>>>> = vec![vec![Some(Series::constant(T::one(), psi.len()))]];
    for m in 0..=n {
        let prev = &cm[m];
        let mut row = Vec::with_capacity(m + 2);
        for k in 0..=m + 1 {
            let d = prev.get(k).and_then(|s| s.as_ref()).map(|s| s.derivative());
            let l = if k > 0 { prev.get(k - 1).and_then(|s| s.clone()) } else { None };
            let sum = match (d, l) {
                (Some(a), Some(b)) => Some(a.add(&b)),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b),
                (None, None) => None,
            };
            row.push(sum.map(|s| psi.mul(&s)));
        }
        cm.push(row);
    }
    let lead_inv = cm[n + 1][n + 1].as_ref().expect("leading coefficient").recip()?;
    let q: Vec<Series<T>> = (0..=n)
        .map(|k| {
            let mut acc = cm[n + 1][k].as_ref().expect("filled").neg();
            for (i, pi) in composed.iter().enumerate().skip(k) {
                if let Some(cik) = &cm[i][k] {
                    acc = acc.add(&pi.mul(cik));
                }
            }
            acc.mul(&lead_inv)
        })
        .collect();
    Ok(scale_out_top(&q))
}

/// Series solution of `u'' = -h u` with `u(0) = u0`, `u'(0) = u1`.
fn second_order_solution<T: Coeff>(h: &Series<T>, u0: T, u1: T) -> Series<T> {
    let len = h.len() + 2;
    let mut u = vec![T::zero(); len];
    u[0] = u0;
    u[1] = u1;
    for k in 0..len - 2 {
        let mut acc = T::zero();
        for j in 0..=k {
            acc = acc.add(&h.coeff(j).mul(&u[k - j]));
        }
        u[k + 2] = acc.neg().mul(&T::from_ratio(1, ((k + 2) * (k + 1)) as i64));
    }
    Series::new(u)
}

/// Coefficient of `p_{N-k+j}^{(j-1)}` in `W_k`.
pub fn invariant_coefficient(n: usize, k: usize, j: usize) -> Q {
    let f = |m: usize| -> Q { Q::from_integer((1..=m as u64).fold(1u64.into(), |a: num_bigint::BigInt, i| a * i)) };
    let sign = if (j + 1) % 2 == 0 { Q::from_integer(1.into()) } else { Q::from_integer((-1).into()) };
    sign * f(2 * k - j - 1) * f(n + j - k) / (f(k - j) * f(j - 1))
}

/// Minimal jet length needed for [`wilczynski_from_canonical_jet`] after
/// canonicalization from raw coefficients.
pub fn required_jet_length(n: usize) -> usize {
    2 * n + 3
}

/// `W_3, ..., W_{N+1}` at the expansion point of a canonical jet.
pub fn wilczynski_from_canonical_jet<T: Coeff>(q: &[Series<T>]) -> Result<Vec<T>, WilczynskiError> {
    let n = q.len() - 1;
    let mut out = Vec::with_capacity(n - 1);
    for k in 3..=n + 1 {
        let mut acc = T::zero();
        for j in 1..=k - 2 {
            let s = &q[n + j - k];
            if s.len() < j {
                return Err(WilczynskiError::InsufficientJet {
                    needed: j,
                    have: s.len(),
                });
            }
            let deriv = s.derivative_at_0(j - 1);
            acc = acc.add(&deriv.mul(&c(&invariant_coefficient(n, k, j))));
        }
        out.push(acc);
    }
    Ok(out)
}

/// Canonicalize a raw coefficient jet and evaluate its invariants.
pub fn wilczynski_of_jet<T: Coeff>(p: &[Series<T>]) -> Result<Vec<T>, WilczynskiError> {
    let needed = required_jet_length(p.len() - 1);
    let have = p.iter().map(|s| s.len()).min().unwrap_or(0);
    if have < needed {
        return Err(WilczynskiError::InsufficientJet { needed, have });
    }
    wilczynski_from_canonical_jet(&canonicalize_jet(p)?)
}

/// Bring coefficients to canonical form. Sampled coefficients are handled
/// pointwise; symbolic ones only when the rescaling alone suffices.
pub fn canonicalize(c: &LinearODECoeffs) -> Result<LinearODECoeffs, WilczynskiError> {
    match c {
        LinearODECoeffs::Sampled { n, grid, jets } => {
            let jets = jets
                .par_iter()
                .map(|row| canonicalize_jet(row))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LinearODECoeffs::Sampled {
                n: *n,
                grid: grid.clone(),
                jets,
            })
        }
        LinearODECoeffs::Symbolic { n, p } => {
            let scaled = scale_symbolic(p);
            match is_zero(&scaled[n - 1], 1e-9) {
                Ok(ZeroVerdict::Zero) => Ok(LinearODECoeffs::Symbolic { n: *n, p: scaled }),
                _ => Err(WilczynskiError::NeedsSampling),
            }
        }
    }
}

/// Rescaling step on coefficients given as functions of `t`.
pub fn scale_symbolic(p: &[Expr]) -> Vec<Expr> {
    let n = p.len() - 1;
    let a = p[n].scale(&Q::new(1.into(), (n as i64 + 1).into()));
    let mut sigma = vec![Expr::one()];
    for j in 0..=n {
        let next = &diff(&sigma[j], Var::T) + &(&sigma[j] * &a);
        sigma.push(next);
    }
    (0..=n)
        .map(|k| {
            if k == n {
                return Expr::zero();
            }
            let mut acc = -sigma[n + 1 - k].scale(&binomial(n + 1, k));
            for (i, pi) in p.iter().enumerate().skip(k) {
                acc = &acc + &(pi * &sigma[i - k]).scale(&binomial(i, k));
            }
            crate::expr::normalize(&acc)
        })
        .collect()
}

/// Invariants `W_3..W_{N+1}` as exact functions or sampled on a grid.
#[derive(Clone, Debug)]
pub enum WilczynskiValues {
    Symbolic { n: usize, w: Vec<Expr> },
    Sampled {
        n: usize,
        grid: Vec<f64>,
        /// `w[g][k-3]`
        w: Vec<Vec<f64>>,
        /// Largest coefficient magnitude seen, for vanishing thresholds.
        coeff_scale: f64,
    },
}

impl WilczynskiValues {
    pub fn n(&self) -> usize {
        match self {
            WilczynskiValues::Symbolic { n, .. } | WilczynskiValues::Sampled { n, .. } => *n,
        }
    }

    /// Orders present, `3..=N+1`.
    pub fn orders(&self) -> std::ops::RangeInclusive<usize> {
        3..=self.n() + 1
    }

    /// Samples of `W_k` (sampled representation only).
    pub fn series_of(&self, k: usize) -> Option<Vec<f64>> {
        match self {
            WilczynskiValues::Sampled { w, .. } => Some(w.iter().map(|r| r[k - 3]).collect()),
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in self.orders() {
            let _ = write!(out, ",W{k}");
        }
        out.push('\n');
        match self {
            WilczynskiValues::Sampled { grid, w, .. } => {
                for (t, row) in grid.iter().zip(w) {
                    let _ = write!(out, "{t}");
                    for v in row {
                        let _ = write!(out, ",{v}");
                    }
                    out.push('\n');
                }
            }
            WilczynskiValues::Symbolic { w, .. } => {
                out.push_str("t");
                for v in w {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Invariants of coefficients that are already canonical.
pub fn wilczynski_invariants(c: &LinearODECoeffs) -> Result<WilczynskiValues, WilczynskiError> {
    match c {
        LinearODECoeffs::Symbolic { n, p } => {
            for e in &p[n - 1..] {
                if is_zero(e, 1e-9).ok() != Some(ZeroVerdict::Zero) {
                    return Err(WilczynskiError::NotCanonical);
                }
            }
            let n = *n;
            let mut w = Vec::with_capacity(n - 1);
            for k in 3..=n + 1 {
                let mut acc = Expr::zero();
                for j in 1..=k - 2 {
                    let mut d = p[n + j - k].clone();
                    for _ in 0..j - 1 {
                        d = diff(&d, Var::T);
                    }
                    acc = &acc + &d.scale(&invariant_coefficient(n, k, j));
                }
                w.push(acc);
            }
            Ok(WilczynskiValues::Symbolic { n, w })
        }
        LinearODECoeffs::Sampled { n, grid, jets } => {
            let scale = coefficient_scale(jets);
            for row in jets {
                for s in &row[n - 1..] {
                    if s.coeffs().iter().any(|v| v.abs() > 1e-8 * (1.0 + scale)) {
                        return Err(WilczynskiError::NotCanonical);
                    }
                }
            }
            let w = jets
                .iter()
                .map(|row| wilczynski_from_canonical_jet(row))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(WilczynskiValues::Sampled {
                n: *n,
                grid: grid.clone(),
                w,
                coeff_scale: scale,
            })
        }
    }
}

fn coefficient_scale(jets: &[Vec<Series<f64>>]) -> f64 {
    jets.iter()
        .flatten()
        .filter_map(|s| s.coeffs().first())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Canonicalize sampled (or sampleable) coefficients and evaluate the
/// invariants at every grid point.
pub fn invariants_along(c: &LinearODECoeffs) -> Result<WilczynskiValues, WilczynskiError> {
    let LinearODECoeffs::Sampled { n, grid, jets } = c else {
        let canon = canonicalize(c)?;
        return wilczynski_invariants(&canon);
    };
    let scale = coefficient_scale(jets);
    let w = jets
        .par_iter()
        .map(|row| wilczynski_of_jet(row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WilczynskiValues::Sampled {
        n: *n,
        grid: grid.clone(),
        w,
        coeff_scale: scale,
    })
}

/// Closed-form first generalized invariant of a sixth-order equation.
pub fn generalized_wilczynski_order6(e: &OrdODE) -> Result<Expr, WilczynskiError> {
    if e.order() != 6 {
        return Err(WilczynskiError::Precondition("an equation of order 6".into()));
    }
    let ctx = e.context();
    let f = |i: u32| e.partial(i);
    let dx = |x: &Expr, k: usize| ctx.total_derivative_n(x, k);
    let r = |n: i64, d: i64| Expr::rational(n, d);
    let (f2, f3, f4, f5) = (f(2), f(3), f(4), f(5));
    let f5x = dx(&f5, 1);
    let terms = [
        &r(-5, 36) * &dx(&f5, 3),
        &r(2, 21) * &(&f4 * &f5.sqr()),
        &r(-5, 12) * &dx(&f3, 1),
        &r(1, 3) * &dx(&f4, 2),
        &r(5, 18) * &(&f5 * &dx(&f5, 2)),
        &r(5, 36) * &(&f3 * &f5),
        &r(-5, 21) * &(&f5.sqr() * &f5x),
        &r(-37, 126) * &(&f4 * &f5x),
        &r(5, 252) * &f5.sqr().sqr(),
        &r(37, 630) * &f4.sqr(),
        &r(25, 84) * &f5x.sqr(),
        &r(5, 18) * &f2,
        &r(-5, 18) * &(&f5 * &dx(&f4, 1)),
    ];
    Ok(sum_normalized(terms))
}

/// Closed-form first generalized invariant of an eighth-order equation.
pub fn generalized_wilczynski_order8(e: &OrdODE) -> Result<Expr, WilczynskiError> {
    if e.order() != 8 {
        return Err(WilczynskiError::Precondition("an equation of order 8".into()));
    }
    let ctx = e.context();
    let f = |i: u32| e.partial(i);
    let dx = |x: &Expr, k: usize| ctx.total_derivative_n(x, k);
    let r = |n: i64, d: i64| Expr::rational(n, d);
    let (f4, f5, f6, f7) = (f(4), f(5), f(6), f(7));
    let f7x = dx(&f7, 1);
    let terms = [
        &r(35, 528) * &(&f5 * &f7),
        &r(49, 176) * &(&f7 * &dx(&f7, 2)),
        &r(7, 22) * &dx(&f6, 2),
        &r(-35, 176) * &(&f7 * &dx(&f6, 1)),
        &r(-1127, 6336) * &(&f7.sqr() * &f7x),
        &r(161, 3168) * &(&f6 * &f7.sqr()),
        &r(931, 3168) * &f7x.sqr(),
        &r(7, 66) * &f4,
        &r(47, 1584) * &f6.sqr(),
        &r(1127, 101376) * &f7.sqr().sqr(),
        &r(-329, 1584) * &(&f6 * &f7x),
        &r(-49, 264) * &dx(&f7, 3),
        &r(-35, 132) * &dx(&f5, 1),
    ];
    Ok(sum_normalized(terms))
}

fn sum_normalized<const K: usize>(terms: [Expr; K]) -> Expr {
    let s = terms.iter().fold(Expr::zero(), |a, t| &a + t);
    crate::expr::normalize(&s)
}

/// Ratio of the closed-form invariant of an equation of the given order
/// (6 or 8) to the canonical-form `W_4` of its linearization.
pub fn closed_form_normalization(order: u32) -> Option<Q> {
    match order {
        6 => Some(Q::new(1.into(), 864.into())),
        8 => Some(Q::new(7.into(), 190080.into())),
        _ => None,
    }
}

/// Exact invariants `W_3..W_{2n}` of the linearization of an equation at a
/// generic point, or `None` if intermediate expressions exceed `budget`
/// terms.
pub fn symbolic_generalized_invariants(e: &OrdODE, budget: usize) -> Option<Vec<Expr>> {
    let n = e.top() as usize;
    let jets = crate::jet::symbolic_coefficient_jets(e, required_jet_length(n), Some(budget))?;
    let w = wilczynski_of_jet(&jets).ok()?;
    Some(w.iter().map(crate::expr::normalize).collect())
}

/// Threshold below which a sampled `W_k` counts as zero:
/// `tol * (1 + P * g^k)`, with `P` the coefficient scale and `g` the grid
/// span (at least 1).
pub fn vanishing_threshold(k: usize, coeff_scale: f64, grid: &[f64], tol: f64) -> f64 {
    let span = match (grid.first(), grid.last()) {
        (Some(a), Some(b)) => (b - a).abs().max(1.0),
        _ => 1.0,
    };
    tol * (1.0 + coeff_scale * span.powi(k as i32))
}

fn sampled_vanishes(values: &[f64], k: usize, coeff_scale: f64, grid: &[f64], tol: f64) -> bool {
    let threshold = vanishing_threshold(k, coeff_scale, grid, tol);
    values.iter().all(|v| v.abs() < threshold)
}

fn invariant_vanishes(w: &WilczynskiValues, k: usize, tol: f64) -> bool {
    match w {
        WilczynskiValues::Symbolic { w, .. } => {
            is_zero(&w[k - 3], tol).ok() == Some(ZeroVerdict::Zero)
        }
        WilczynskiValues::Sampled {
            grid,
            w: rows,
            coeff_scale,
            ..
        } => {
            let vals: Vec<f64> = rows.iter().map(|r| r[k - 3]).collect();
            sampled_vanishes(&vals, k, *coeff_scale, grid, tol)
        }
    }
}

pub fn odd_invariants_vanish(w: &WilczynskiValues, tol: f64) -> bool {
    w.orders().filter(|k| k % 2 == 1).all(|k| invariant_vanishes(w, k, tol))
}

pub fn flatness_test(w: &WilczynskiValues, tol: f64) -> bool {
    w.orders().all(|k| invariant_vanishes(w, k, tol))
}

/// Curve in `P^N` given by local Taylor expansions of a lift `e_0(t)` at
/// each grid point.
#[derive(Clone, Debug)]
pub struct ProjectiveCurve {
    n: usize,
    grid: Vec<f64>,
    /// `local[g][a]`: component `a` of `e_0(grid[g] + h)`.
    local: Vec<Vec<Series<f64>>>,
}

impl ProjectiveCurve {
    pub fn new(grid: Vec<f64>, local: Vec<Vec<Series<f64>>>) -> Result<Self, WilczynskiError> {
        let dim = local.first().map(|r| r.len()).unwrap_or(0);
        if dim < 2 || local.len() != grid.len() || local.iter().any(|r| r.len() != dim) {
            return Err(WilczynskiError::Precondition("consistent curve samples".into()));
        }
        Ok(ProjectiveCurve {
            n: dim - 1,
            grid,
            local,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn local(&self) -> &[Vec<Series<f64>>] {
        &self.local
    }

    /// Shortest local expansion.
    pub fn jet_len(&self) -> usize {
        self.local.iter().flatten().map(|s| s.len()).min().unwrap_or(0)
    }

    /// Columns `e_0, ..., e_N` at sample `g`.
    pub fn frame(&self, g: usize) -> DMatrix<f64> {
        let dim = self.n + 1;
        DMatrix::from_fn(dim, dim, |a, i| self.local[g][a].derivative_at_0(i))
    }

    /// Apply a fixed linear map to every point.
    pub fn transform(&self, m: &DMatrix<f64>) -> ProjectiveCurve {
        let local = self
            .local
            .iter()
            .map(|row| {
                (0..=self.n)
                    .map(|a| {
                        let mut acc = Series::zeros(row[0].len());
                        for (b, s) in row.iter().enumerate() {
                            acc = acc.add(&s.scale(&m[(a, b)]));
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        ProjectiveCurve {
            n: self.n,
            grid: self.grid.clone(),
            local,
        }
    }

    /// Re-express the curve in the parameter `s = a t + b`.
    pub fn reparametrize_affine(&self, a: f64, b: f64) -> ProjectiveCurve {
        let grid = self.grid.iter().map(|t| a * t + b).collect();
        let local = self
            .local
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| {
                        Series::new(
                            s.coeffs()
                                .iter()
                                .enumerate()
                                .map(|(k, v)| v / a.powi(k as i32))
                                .collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        ProjectiveCurve {
            n: self.n,
            grid,
            local,
        }
    }

    /// Coefficient jets of the linear equation satisfied by the lift:
    /// solves `Frame(h) p(h) = e_0^(N+1)(h)` over series.
    pub fn coefficient_jets(&self) -> Result<LinearODECoeffs, WilczynskiError> {
        let dim = self.n + 1;
        let jets = self
            .local
            .iter()
            .zip(&self.grid)
            .map(|(row, &t)| {
                let derivs: Vec<Vec<Series<f64>>> = row
                    .iter()
                    .map(|s| {
                        let mut v = vec![s.clone()];
                        for _ in 0..dim {
                            let next = v.last().unwrap().derivative();
                            v.push(next);
                        }
                        v
                    })
                    .collect();
                let len = derivs.iter().map(|d| d[dim].len()).min().unwrap_or(0);
                if len == 0 {
                    return Err(WilczynskiError::InsufficientJet { needed: dim + 2, have: row[0].len() });
                }
                let frame: Vec<DMatrix<f64>> = (0..len)
                    .map(|k| DMatrix::from_fn(dim, dim, |a, i| derivs[a][i].coeff(k).to_owned()))
                    .collect();
                let rhs: Vec<DVector<f64>> = (0..len)
                    .map(|k| DVector::from_fn(dim, |a, _| *derivs[a][dim].coeff(k)))
                    .collect();
                let sol = solve_series_system(&frame, &rhs).ok_or(WilczynskiError::Singular { t })?;
                Ok((0..dim)
                    .map(|i| Series::new(sol.iter().map(|v| v[i]).collect()))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LinearODECoeffs::Sampled {
            n: self.n,
            grid: self.grid.clone(),
            jets,
        })
    }
}

/// Solve `(sum_k A_k h^k)(sum_k x_k h^k) = sum_k b_k h^k` for the `x_k`.
pub(crate) fn solve_series_system(a: &[DMatrix<f64>], b: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let lu = a[0].clone().lu();
    let mut x: Vec<DVector<f64>> = Vec::with_capacity(b.len());
    for k in 0..b.len() {
        let mut r = b[k].clone();
        for j in 1..=k.min(a.len() - 1) {
            r -= &a[j] * &x[k - j];
        }
        x.push(lu.solve(&r)?);
    }
    Some(x)
}

/// Invariants of the curve itself.
pub fn curve_invariants(curve: &ProjectiveCurve) -> Result<WilczynskiValues, WilczynskiError> {
    invariants_along(&curve.coefficient_jets()?)
}

/// `N+1` solutions of `e^(N+1) = sum p_i e^(i)` with identity initial frame
/// at the first grid point, assembled as a curve whose components are the
/// solutions. Steps between grid points with the local Taylor expansion.
pub fn fundamental_system(c: &LinearODECoeffs, jet_len: usize, grid: &[f64]) -> Result<ProjectiveCurve, WilczynskiError> {
    let sampled = c.sample(grid, jet_len)?;
    let LinearODECoeffs::Sampled { n, grid, jets } = sampled else {
        unreachable!("sample returns sampled coefficients")
    };
    let dim = n + 1;
    // state[j] = (e, e', ..., e^(N)) of solution j
    let mut state: Vec<Vec<f64>> = (0..dim)
        .map(|j| (0..dim).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut local = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let series: Vec<Series<f64>> = state.iter().map(|s| linear_solution_series(&jets[g], s)).collect();
        if g + 1 < grid.len() {
            let h = grid[g + 1] - grid[g];
            state = series
                .iter()
                .map(|s| {
                    let mut d = s.clone();
                    (0..dim)
                        .map(|_| {
                            let v = d.eval_at(h);
                            d = d.derivative();
                            v
                        })
                        .collect()
                })
                .collect();
        }
        local.push(series);
    }
    let curve = ProjectiveCurve::new(grid, local)?;
    for g in 0..curve.grid.len() {
        if curve.frame(g).determinant().abs() < 1e-300 {
            return Err(WilczynskiError::Singular { t: curve.grid[g] });
        }
    }
    Ok(curve)
}

/// Taylor series of the solution of the linear equation with initial state
/// `(e, e', ..., e^(N))`, of length `len(p) + N + 1`.
fn linear_solution_series(p: &[Series<f64>], state: &[f64]) -> Series<f64> {
    let dim = p.len();
    let len = p.iter().map(|s| s.len()).min().unwrap_or(0);
    let total = len + dim;
    let mut a = vec![0.0; total];
    for i in 0..dim {
        a[i] = state[i] / factorial(i);
    }
    // coefficient of h^k in e^(i): a[i+k] (i+k)!/k!
    for m in dim..total {
        let k = m - dim;
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            for j in 0..=k {
                acc += pi.coeff(j) * a[i + k - j] * factorial(i + k - j) / factorial(k - j);
            }
        }
        a[m] = acc * factorial(k) / factorial(m);
    }
    Series::new(a)
}

/// Orthonormal basis of `span(e_0, ..., e_i)` at every sample.
pub fn osculating_flag(curve: &ProjectiveCurve, i: usize) -> Result<Vec<DMatrix<f64>>, WilczynskiError> {
    if i > curve.n {
        return Err(WilczynskiError::Precondition(format!("index at most {}", curve.n)));
    }
    (0..curve.grid.len())
        .map(|g| {
            let frame = curve.frame(g);
            let cols = frame.columns(0, i + 1).into_owned();
            let svd = cols.clone().svd(true, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if !(smin > 1e-12 * smax) {
                return Err(WilczynskiError::Singular { t: curve.grid[g] });
            }
            Ok(svd.u.expect("requested").columns(0, i + 1).into_owned())
        })
        .collect()
}

/// Kind of a compatible bilinear form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    Skew,
    Symmetric,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct DualityForm {
    /// Frobenius-normalized matrix.
    pub matrix: Vec<Vec<f64>>,
    pub kind: FormKind,
    pub residual: f64,
}

impl DualityForm {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.matrix.len();
        DMatrix::from_fn(d, d, |i, j| self.matrix[i][j])
    }
}

/// Search for a nondegenerate skew form `B` with `B(e^(i), e^(j)) = 0` for
/// `i + j < N` at every sample, so each osculating space is the
/// `B`-orthogonal of the complementary one.
pub fn selfdual_test(curve: &ProjectiveCurve, tol: f64) -> Result<Option<DualityForm>, WilczynskiError> {
    let n = curve.n;
    if n % 2 == 0 {
        return Err(WilczynskiError::Precondition("odd N".into()));
    }
    let dim = n + 1;
    let flag_pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n - i).map(move |j| (i, j))).collect();
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|a| (a + 1..dim).map(move |b| (a, b))).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut frames = Vec::with_capacity(curve.grid.len());
    for g in 0..curve.grid.len() {
        let f = curve.frame(g);
        for &(i, j) in &flag_pairs {
            let (ei, ej) = (f.column(i), f.column(j));
            let norm = ei.norm() * ej.norm();
            if norm == 0.0 {
                continue;
            }
            rows.push(
                pairs
                    .iter()
                    .map(|&(a, b)| (ei[a] * ej[b] - ei[b] * ej[a]) / norm)
                    .collect(),
            );
        }
        frames.push(f);
    }
    let unknowns = pairs.len();
    let m = DMatrix::from_fn(rows.len().max(unknowns), unknowns, |r, k| {
        rows.get(r).map(|row| row[k]).unwrap_or(0.0)
    });
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..unknowns).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let build = |idx: usize| -> DMatrix<f64> {
        let mut b = DMatrix::zeros(dim, dim);
        for (k, &(a, c)) in pairs.iter().enumerate() {
            b[(a, c)] = vt[(idx, k)];
            b[(c, a)] = -vt[(idx, k)];
        }
        let norm = b.norm();
        b / norm
    };
    let residual_of = |b: &DMatrix<f64>| -> f64 {
        let mut worst = 0.0f64;
        for f in &frames {
            for &(i, j) in &flag_pairs {
                let (ei, ej) = (f.column(i), f.column(j));
                let v = (ei.transpose() * b * ej)[(0, 0)].abs() / (ei.norm() * ej.norm());
                worst = worst.max(v);
            }
        }
        worst
    };
    let nondegenerate = |b: &DMatrix<f64>| -> bool {
        let s = b.clone().svd(false, false).singular_values;
        s.min() > 1e-8 * s.max()
    };
    let best = build(order[0]);
    let residual = residual_of(&best);
    if !(residual < tol) || !nondegenerate(&best) {
        return Ok(None);
    }
    if unknowns > 1 {
        let second = build(order[1]);
        let r2 = residual_of(&second);
        // A second candidate only counts when it is about as good as the first.
        if r2 < tol && r2 < 1e3 * residual.max(1e-12) {
            return Err(WilczynskiError::Ambiguous {
                dimension: 2,
                witness: r2,
            });
        }
    }
    Ok(Some(DualityForm {
        matrix: (0..dim).map(|i| (0..dim).map(|j| best[(i, j)]).collect()).collect(),
        kind: FormKind::Skew,
        residual,
    }))
}

/// Coefficients of the `k`-th invariant as exact rationals, for reporting.
pub fn invariant_coefficients(n: usize, k: usize) -> Vec<(usize, usize, f64)> {
    (1..=k - 2)
        .map(|j| (n + j - k, j - 1, q_to_f64(&invariant_coefficient(n, k, j))))
        .collect()
}
