//! Lagrangians, ordinary differential equations on jet space, the
//! Euler–Lagrange operator, numeric solutions and linearization.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{
    diff, is_zero, normalize, parse_expr, total_derivative, CompiledExpr, EvalError, Exp, Expr,
    ExprError, JetContext, ParseError, Var, ZeroVerdict,
};
use crate::ode::{integrate, OdeError, Tolerances};
use crate::series::{factorial, Series};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("variable {0} is not allowed here")]
    InvalidVariable(Var),
    #[error("order {0} is out of range")]
    InvalidOrder(u32),
    #[error("Lagrangian is degenerate: {0}")]
    Degenerate(String),
    #[error("Euler-Lagrange equation could not be solved for the top derivative; implicit form {expression}")]
    Implicit { expression: Expr },
    #[error("expression has order {found}, at most {allowed} allowed")]
    OrderTooHigh { found: u32, allowed: u32 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn check_vars(e: &Expr, max_y: u32) -> Result<(), JetError> {
    for v in e.vars() {
        match v {
            Var::X => {}
            Var::Y(i) if i <= max_y => {}
            Var::Y(i) => {
                return Err(JetError::OrderTooHigh {
                    found: i,
                    allowed: max_y,
                })
            }
            other => return Err(JetError::InvalidVariable(other)),
        }
    }
    Ok(())
}

/// Density `f(x, y_0, ..., y_n) dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lagrangian {
    order: u32,
    density: Expr,
}

impl Lagrangian {
    pub fn new(density: Expr, order: u32) -> Result<Self, JetError> {
        if order < 2 {
            return Err(JetError::InvalidOrder(order));
        }
        check_vars(&density, order)?;
        Ok(Lagrangian { order, density })
    }

    /// Parse a density; the order defaults to its highest jet variable.
    pub fn parse(text: &str, order: Option<u32>) -> Result<Self, JetError> {
        let density = parse_expr(text)?;
        let order = match order {
            Some(n) => n,
            None => density.max_y_order().unwrap_or(0),
        };
        Lagrangian::new(density, order)
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn density(&self) -> &Expr {
        &self.density
    }
}

/// Equation `y_{N+1} = F(x, y_0, ..., y_N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrdODE {
    order: u32,
    rhs: Expr,
}

impl OrdODE {
    /// `order` is `N+1`.
    pub fn new(order: u32, rhs: Expr) -> Result<Self, JetError> {
        if order < 2 {
            return Err(JetError::InvalidOrder(order));
        }
        check_vars(&rhs, order - 1)?;
        Ok(OrdODE { order, rhs })
    }

    pub fn parse(text: &str, order: u32) -> Result<Self, JetError> {
        OrdODE::new(order, parse_expr(text)?)
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// `N`, the index of the highest jet coordinate on the equation.
    pub fn top(&self) -> u32 {
        self.order - 1
    }

    pub fn rhs(&self) -> &Expr {
        &self.rhs
    }

    /// Coordinates `(x, y_0, ..., y_N)` of the equation manifold.
    pub fn coordinates(&self) -> Vec<Var> {
        std::iter::once(Var::X)
            .chain((0..self.order).map(Var::Y))
            .collect()
    }

    pub fn context(&self) -> JetContext {
        JetContext::on_equation(self.order, self.rhs.clone())
    }

    /// `F_{y_i}`.
    pub fn partial(&self, i: u32) -> Expr {
        diff(&self.rhs, Var::Y(i))
    }

    /// Total derivative restricted to the equation.
    pub fn total_derivative(&self, e: &Expr) -> Expr {
        total_derivative(e, &self.context())
    }

    pub fn compile(&self, e: &Expr) -> Result<CompiledExpr, JetError> {
        Ok(CompiledExpr::new(e, &self.coordinates())?)
    }
}

/// Result of [`check_nondegenerate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Nondegeneracy {
    Ok,
    /// Independent of `y_n`, or `f_{y_n y_n}` could only be shown to vanish
    /// numerically.
    Degenerate,
    LinearInTop,
}

pub fn check_nondegenerate(l: &Lagrangian) -> Nondegeneracy {
    let top = Var::Y(l.order);
    if !l.density.depends_on(top) {
        return Nondegeneracy::Degenerate;
    }
    let second = diff(&diff(&l.density, top), top);
    match is_zero(&second, 1e-9) {
        Ok(ZeroVerdict::Zero) => Nondegeneracy::LinearInTop,
        Ok(ZeroVerdict::Nonzero) => Nondegeneracy::Ok,
        _ => Nondegeneracy::Degenerate,
    }
}

/// `E(f) = sum_k (-1)^k D_x^k f_{y_k}` on the free jet space.
pub fn euler_lagrange_expression(l: &Lagrangian) -> Expr {
    let ctx = JetContext::free();
    let mut acc = Expr::zero();
    for k in 0..=l.order {
        let mut term = diff(&l.density, Var::Y(k));
        for _ in 0..k {
            term = total_derivative(&term, &ctx);
        }
        acc = if k % 2 == 0 { &acc + &term } else { &acc - &term };
    }
    acc
}

/// Euler–Lagrange equation solved for `y_{2n}`.
pub fn euler_lagrange(l: &Lagrangian) -> Result<OrdODE, JetError> {
    match check_nondegenerate(l) {
        Nondegeneracy::Ok => {}
        Nondegeneracy::LinearInTop => {
            return Err(JetError::Degenerate(
                "density is linear in the top derivative".into(),
            ))
        }
        Nondegeneracy::Degenerate => {
            return Err(JetError::Degenerate(
                "second derivative in the top jet is not certified nonzero".into(),
            ))
        }
    }
    let expression = euler_lagrange_expression(l);
    let top = 2 * l.order;
    let parts = expression.coefficients_in(Var::Y(top));
    let (lead, rest) = match &parts {
        Some(c) if c.keys().all(|d| *d <= 1) && c.contains_key(&1) => (
            c[&1].clone(),
            c.get(&0).cloned().unwrap_or_else(Expr::zero),
        ),
        _ => return Err(JetError::Implicit { expression }),
    };
    let rhs = normalize(&(-rest).try_div(&lead)?);
    OrdODE::new(top, rhs)
}

/// Outcome of [`weighted_degree_check`].
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct WeightedDegreeReport {
    pub is_polynomial_in_high_jets: bool,
    pub weighted_degree: Option<u32>,
    pub pass: bool,
    pub witness: Option<String>,
}

/// Treat `F` as a polynomial in `y_{n+1}, ..., y_{2n-1}` with weights
/// `1, ..., n-1` and require weighted degree at most `n`.
pub fn weighted_degree_check(e: &OrdODE, n: u32) -> WeightedDegreeReport {
    let high = |v: &Var| matches!(v, Var::Y(i) if *i > n && *i < 2 * n);
    let mut degree = 0u32;
    let mut worst: Option<String> = None;
    for (m, c) in e.rhs.terms() {
        let mut w = Exp::from_integer(0);
        for (a, x) in m {
            match a {
                crate::expr::Atom::Var(v) if high(v) => {
                    if *x.denom() != 1 || *x.numer() < 0 {
                        return WeightedDegreeReport {
                            is_polynomial_in_high_jets: false,
                            weighted_degree: None,
                            pass: false,
                            witness: Some(monomial_text(m, c)),
                        };
                    }
                    if let Var::Y(i) = v {
                        w += *x * Exp::from_integer((*i - n) as i64);
                    }
                }
                crate::expr::Atom::Poly(p) if p.vars().iter().any(high) => {
                    return WeightedDegreeReport {
                        is_polynomial_in_high_jets: false,
                        weighted_degree: None,
                        pass: false,
                        witness: Some(monomial_text(m, c)),
                    };
                }
                _ => {}
            }
        }
        let w = w.to_integer() as u32;
        if w > degree || worst.is_none() {
            if w >= degree {
                worst = Some(monomial_text(m, c));
            }
            degree = degree.max(w);
        }
    }
    let pass = degree <= n;
    WeightedDegreeReport {
        is_polynomial_in_high_jets: true,
        weighted_degree: Some(degree),
        pass,
        witness: if pass { None } else { worst },
    }
}

fn monomial_text(m: &crate::expr::Monomial, c: &crate::expr::Q) -> String {
    // Rebuild a single-term expression to reuse the printer.
    let mut e = Expr::constant(c.clone());
    for (a, x) in m {
        let base = match a {
            crate::expr::Atom::Var(v) => Expr::var(*v),
            crate::expr::Atom::Poly(p) => (**p).clone(),
            crate::expr::Atom::Const(k) => Expr::constant(k.clone()),
        };
        e = &e * &base.pow(*x).unwrap_or_else(|_| Expr::zero());
    }
    e.to_string()
}

/// `f + D_x g` for `g` of order below `n`.
pub fn divergence_shift(l: &Lagrangian, g: &Expr) -> Result<Lagrangian, JetError> {
    if l.order == 0 {
        return Err(JetError::InvalidOrder(0));
    }
    check_vars(g, l.order - 1)?;
    let shifted = &l.density + &total_derivative(g, &JetContext::free());
    Lagrangian::new(shifted, l.order)
}

/// Evenly spaced sample points `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            start: 0.0,
            end: 1.0,
            count: 64,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            m => (0..m)
                .map(|i| self.start + (self.end - self.start) * i as f64 / (m - 1) as f64)
                .collect(),
        }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid must be start:end:count, got '{s}'"));
        }
        let start: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
        let end: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
        let count: usize = parts[2].trim().parse().map_err(|e| format!("{e}"))?;
        if count < 2 || !(end > start) {
            return Err("grid needs end > start and at least 2 points".into());
        }
        Ok(GridSpec { start, end, count })
    }
}

/// Numeric solution sampled on a grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    /// `samples[g] = (y_0, ..., y_N)` at `grid[g]`.
    pub samples: Vec<Vec<f64>>,
    pub tolerances: Tolerances,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let dim = self.samples.first().map(|s| s.len()).unwrap_or(0);
        let mut out = String::from("x");
        for i in 0..dim {
            let _ = write!(out, ",y{i}");
        }
        out.push('\n');
        for (x, s) in self.grid.iter().zip(&self.samples) {
            let _ = write!(out, "{x}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Integrate `y_{N+1} = F` from the jet `init = (y_0, ..., y_N)` at `x0`
/// and sample on `grid`.
pub fn solve_ivp(
    ode: &OrdODE,
    x0: f64,
    init: &[f64],
    grid: &[f64],
    tol: &Tolerances,
) -> Result<Trajectory, JetError> {
    let dim = ode.order as usize;
    if init.len() != dim {
        return Err(JetError::Invalid(format!(
            "initial jet needs {dim} values, got {}",
            init.len()
        )));
    }
    let f = ode.compile(&ode.rhs)?;
    let mut inputs = vec![0.0; dim + 1];
    inputs[0] = x0;
    inputs[1..].copy_from_slice(init);
    match f.eval(&inputs) {
        Ok(_) => {}
        Err(EvalError::Unbound(v)) => return Err(EvalError::Unbound(v).into()),
        Err(_) => return Err(OdeError::Singularity { x: x0 }.into()),
    }
    let samples = integrate(
        |x, y, d| {
            let mut inp = Vec::with_capacity(dim + 1);
            inp.push(x);
            inp.extend_from_slice(y);
            d[..dim - 1].copy_from_slice(&y[1..]);
            match f.eval(&inp) {
                Ok(v) => {
                    d[dim - 1] = v;
                    true
                }
                Err(_) => false,
            }
        },
        x0,
        init,
        grid,
        tol,
    )?;
    Ok(Trajectory {
        grid: grid.to_vec(),
        samples,
        tolerances: *tol,
    })
}

/// Taylor series of the solution through `(x, state)`: returns the series
/// of `y_0, ..., y_N`, each with `len` coefficients.
pub fn solution_series(
    ode: &OrdODE,
    f: &CompiledExpr,
    x: f64,
    state: &[f64],
    len: usize,
) -> Result<Vec<Series<f64>>, JetError> {
    let top = ode.order as usize;
    let total = top + len;
    // Coefficients a_k = y^(k)(x) / k! of y_0.
    let mut a = vec![0.0; total];
    for i in 0..top {
        a[i] = state[i] / factorial(i);
    }
    let jet = |a: &[f64], i: usize, l: usize| -> Series<f64> {
        Series::new(
            (0..l)
                .map(|j| a[i + j] * factorial(i + j) / factorial(j))
                .collect(),
        )
    };
    for m in top..total {
        let l = m - top + 1;
        let mut inputs = Vec::with_capacity(top + 1);
        inputs.push(Series::variable(x, l));
        for i in 0..top {
            inputs.push(jet(&a, i, l));
        }
        let fs = f.eval_with(&inputs, &inputs[0])?;
        let k = l - 1;
        a[m] = fs.coeff(k) * factorial(k) / factorial(m);
    }
    Ok((0..top).map(|i| jet(&a, i, len)).collect())
}

/// Coefficients of a linear equation `e^(N+1) = sum_i p_i e^(i)`.
#[derive(Clone, Debug)]
pub enum LinearODECoeffs {
    /// Exact coefficients as functions of `t`.
    Symbolic { n: usize, p: Vec<Expr> },
    /// Taylor jets of every `p_i` at each sample point:
    /// `jets[g][i]` expands `p_i` around `grid[g]`.
    Sampled {
        n: usize,
        grid: Vec<f64>,
        jets: Vec<Vec<Series<f64>>>,
    },
}

impl LinearODECoeffs {
    pub fn n(&self) -> usize {
        match self {
            LinearODECoeffs::Symbolic { n, .. } | LinearODECoeffs::Sampled { n, .. } => *n,
        }
    }

    /// Constant or `t`-dependent coefficients given as text, `p_0` first.
    pub fn symbolic(p: Vec<Expr>) -> Result<Self, JetError> {
        if p.len() < 2 {
            return Err(JetError::InvalidOrder(p.len() as u32));
        }
        for e in &p {
            for v in e.vars() {
                if v != Var::T {
                    return Err(JetError::InvalidVariable(v));
                }
            }
        }
        Ok(LinearODECoeffs::Symbolic {
            n: p.len() - 1,
            p,
        })
    }

    /// Taylor jets of length `len` at each grid point.
    pub fn sample(&self, grid: &[f64], len: usize) -> Result<LinearODECoeffs, JetError> {
        match self {
            LinearODECoeffs::Sampled { .. } => Ok(self.clone()),
            LinearODECoeffs::Symbolic { n, p } => {
                let compiled: Vec<CompiledExpr> = p
                    .iter()
                    .map(|e| CompiledExpr::new(e, &[Var::T]))
                    .collect::<Result<_, _>>()?;
                let mut jets = Vec::with_capacity(grid.len());
                for &t in grid {
                    let ts = Series::variable(t, len);
                    let row = compiled
                        .iter()
                        .map(|c| c.eval_with(std::slice::from_ref(&ts), &ts))
                        .collect::<Result<Vec<_>, _>>()?;
                    jets.push(row);
                }
                Ok(LinearODECoeffs::Sampled {
                    n: *n,
                    grid: grid.to_vec(),
                    jets,
                })
            }
        }
    }
}

/// Coefficients `p_i = F_{y_i}` of the linearization along a solution, with
/// Taylor jets of length `len` obtained from the solution's own Taylor
/// expansion at each grid point.
pub fn linearize_along(
    ode: &OrdODE,
    traj: &Trajectory,
    len: usize,
) -> Result<LinearODECoeffs, JetError> {
    let f = ode.compile(&ode.rhs)?;
    let partials: Vec<CompiledExpr> = (0..ode.order)
        .map(|i| ode.compile(&ode.partial(i)))
        .collect::<Result<_, _>>()?;
    let jets = traj
        .grid
        .par_iter()
        .zip(traj.samples.par_iter())
        .map(|(&x, state)| -> Result<Vec<Series<f64>>, JetError> {
            let ys = solution_series(ode, &f, x, state, len)?;
            let mut inputs = Vec::with_capacity(ys.len() + 1);
            inputs.push(Series::variable(x, len));
            inputs.extend(ys);
            partials
                .iter()
                .map(|p| Ok(p.eval_with(&inputs, &inputs[0])?))
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinearODECoeffs::Sampled {
        n: ode.top() as usize,
        grid: traj.grid.clone(),
        jets,
    })
}

/// Exact Taylor jets of the coefficients `F_{y_i}` at a generic point of the
/// equation manifold: coefficient `k` of entry `i` is `D_x^k F_{y_i} / k!`.
pub fn symbolic_coefficient_jets(
    ode: &OrdODE,
    len: usize,
    budget: Option<usize>,
) -> Option<Vec<Series<Expr>>> {
    let ctx = ode.context();
    let mut out = Vec::with_capacity(ode.order as usize);
    for i in 0..ode.order {
        let mut d = ode.partial(i);
        let mut coeffs = Vec::with_capacity(len);
        for k in 0..len {
            if k > 0 {
                d = total_derivative(&d, &ctx);
            }
            if let Some(b) = budget {
                if d.complexity() > b {
                    return None;
                }
            }
            coeffs.push(d.scale(&crate::expr::Q::new(1.into(), factorial_int(k))));
        }
        out.push(Series::new(coeffs));
    }
    Some(out)
}

fn factorial_int(k: usize) -> num_bigint::BigInt {
    (1..=k as u64).fold(num_bigint::BigInt::from(1), |acc, i| acc * i)
}

/// Evaluate a symbolic expression on the equation manifold along every
/// sample of a trajectory.
pub fn eval_along(ode: &OrdODE, e: &Expr, traj: &Trajectory) -> Result<Vec<f64>, JetError> {
    let c = ode.compile(e)?;
    traj.grid
        .iter()
        .zip(&traj.samples)
        .map(|(&x, s)| {
            let mut inp = Vec::with_capacity(s.len() + 1);
            inp.push(x);
            inp.extend_from_slice(s);
            Ok(c.eval(&inp)?)
        })
        .collect()
}

/// Value of a series-valued quantity at offset `h`, used for off-grid
/// interpolation.
pub fn interpolate(series: &[Series<f64>], h: f64) -> Vec<f64> {
    series.iter().map(|s| s.eval_at(h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn lag(s: &str) -> Lagrangian {
        Lagrangian::parse(s, None).unwrap()
    }

    #[test]
    fn euler_lagrange_examples() {
        assert_eq!(euler_lagrange(&lag("y3^2")).unwrap().rhs(), &Expr::zero());
        assert_eq!(
            euler_lagrange(&lag("y3^2 + y0^2")).unwrap().rhs(),
            &Expr::y(0)
        );
        let e = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        assert_eq!(e.order(), 6);
        assert_eq!(e.rhs().to_string(), "5*y4*y5/y3 - (40/9)*y4^3/y3^2");
    }

    #[test]
    fn cube_root_equation_polynomial_form() {
        let e = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let poly = parse_expr("9*y3^2*y6 - 45*y3*y4*y5 + 40*y4^3").unwrap();
        let on_e = poly.substitute(Var::Y(6), e.rhs()).unwrap();
        assert_eq!(normalize(&on_e), Expr::zero());
    }

    #[test]
    fn nondegeneracy_examples() {
        assert_eq!(check_nondegenerate(&lag("y3^2")), Nondegeneracy::Ok);
        assert_eq!(
            check_nondegenerate(&Lagrangian::parse("x*y3 + y0^2", Some(3)).unwrap()),
            Nondegeneracy::LinearInTop
        );
        let l = lag("y3^(1/3)");
        assert_eq!(check_nondegenerate(&l), Nondegeneracy::Ok);
        let f33 = diff(&diff(l.density(), Var::Y(3)), Var::Y(3));
        assert_eq!(f33, parse_expr("(-2/9)*y3^(-5/3)").unwrap());
        assert!(matches!(
            euler_lagrange(&Lagrangian::parse("x*y3 + y0^2", Some(3)).unwrap()),
            Err(JetError::Degenerate(_))
        ));
    }

    #[test]
    fn weighted_degree_examples() {
        let zero = OrdODE::parse("0", 6).unwrap();
        let r = weighted_degree_check(&zero, 3);
        assert!(r.pass && r.weighted_degree == Some(0));
        let cube = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let r = weighted_degree_check(&cube, 3);
        assert!(r.pass && r.weighted_degree == Some(3), "{r:?}");
        let bad = OrdODE::parse("y5^2", 6).unwrap();
        let r = weighted_degree_check(&bad, 3);
        assert!(!r.pass && r.weighted_degree == Some(4));
        assert_eq!(r.witness.as_deref(), Some("y5^2"));
        let nonpoly = OrdODE::parse("1/y4", 6).unwrap();
        let r = weighted_degree_check(&nonpoly, 3);
        assert!(!r.is_polynomial_in_high_jets && !r.pass);
    }

    #[test]
    fn divergence_shift_examples() {
        let l = lag("y3^2");
        let s = divergence_shift(&l, &Expr::y(0)).unwrap();
        assert_eq!(s.density(), &parse_expr("y3^2 + y1").unwrap());
        assert!(divergence_shift(&l, &Expr::y(3)).is_err());
    }

    #[test]
    fn trivial_solution_is_constant() {
        let ode = OrdODE::parse("0", 6).unwrap();
        let grid = GridSpec::default().points();
        let t = solve_ivp(&ode, 0.0, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &grid, &Tolerances::default()).unwrap();
        assert!(t.samples.iter().all(|s| (s[0] - 1.0).abs() < 1e-14));
        assert!(t.to_csv().starts_with("x,y0,y1,y2,y3,y4,y5\n0,1,0,"));
    }

    #[test]
    fn sixth_order_exponential_series() {
        let ode = OrdODE::parse("y0", 6).unwrap();
        let t = solve_ivp(&ode, 0.0, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[1.0], &Tolerances::default()).unwrap();
        let want: f64 = (0..5).map(|k| 1.0 / factorial(6 * k)).sum();
        assert!((t.samples[0][0] - want).abs() < 1e-9);
        assert!((want - 1.001389).abs() < 1e-6);
    }

    #[test]
    fn singular_initial_jet() {
        let ode = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let err = solve_ivp(&ode, 0.0, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0], &[1.0], &Tolerances::default()).unwrap_err();
        assert!(matches!(err, JetError::Ode(OdeError::Singularity { .. })));
    }

    #[test]
    fn linearization_examples() {
        let grid = [0.0, 0.5, 1.0];
        let init = [0.3, -0.2, 0.1, 1.0, 0.4, -0.3];
        let zero = OrdODE::parse("0", 6).unwrap();
        let t = solve_ivp(&zero, 0.0, &init, &grid, &Tolerances::default()).unwrap();
        let LinearODECoeffs::Sampled { jets, .. } = linearize_along(&zero, &t, 4).unwrap() else {
            unreachable!()
        };
        assert!(jets.iter().flatten().all(|s| s.coeffs().iter().all(|c| *c == 0.0)));

        let lin = OrdODE::parse("y0", 6).unwrap();
        let t = solve_ivp(&lin, 0.0, &init, &grid, &Tolerances::default()).unwrap();
        let LinearODECoeffs::Sampled { jets, .. } = linearize_along(&lin, &t, 4).unwrap() else {
            unreachable!()
        };
        for row in &jets {
            assert_eq!(row[0].coeffs(), &[1.0, 0.0, 0.0, 0.0]);
            assert!(row[1..].iter().all(|s| s.coeffs().iter().all(|c| *c == 0.0)));
        }

        let cube = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let t = solve_ivp(&cube, 0.0, &init, &grid, &Tolerances::default()).unwrap();
        let LinearODECoeffs::Sampled { jets, .. } = linearize_along(&cube, &t, 4).unwrap() else {
            unreachable!()
        };
        for (row, s) in jets.iter().zip(&t.samples) {
            assert!((row[5].coeff(0) - 5.0 * s[4] / s[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_jets_match_symbolic_total_derivatives() {
        let cube = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let init = [0.3, -0.2, 0.1, 1.0, 0.4, -0.3];
        let t = solve_ivp(&cube, 0.0, &init, &[0.0, 0.7], &Tolerances::default()).unwrap();
        let len = 6;
        let LinearODECoeffs::Sampled { jets, .. } = linearize_along(&cube, &t, len).unwrap() else {
            unreachable!()
        };
        let exact = symbolic_coefficient_jets(&cube, len, None).unwrap();
        for i in 0..6 {
            for k in 0..len {
                let along = eval_along(&cube, exact[i].coeff(k), &t).unwrap();
                for (g, v) in along.iter().enumerate() {
                    let got = jets[g][i].coeff(k);
                    assert!((got - v).abs() < 1e-9 * (1.0 + v.abs()), "i={i} k={k} {got} {v}");
                }
            }
        }
    }

    #[test]
    fn off_grid_states_lie_on_solution() {
        // States integrated directly at off-grid points agree with the Taylor
        // expansion of the ODE from the nearest grid sample, and the expanded
        // top derivative satisfies the equation.
        let cube = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        let init = [0.3, -0.2, 0.1, 1.0, 0.4, -0.3];
        let grid = GridSpec::default().points();
        let t = solve_ivp(&cube, 0.0, &init, &grid, &Tolerances::default()).unwrap();
        let f = cube.compile(cube.rhs()).unwrap();
        let checkpoints: Vec<f64> = (0..10).map(|i| 0.05 + 0.093 * i as f64).collect();
        let tight = Tolerances {
            rtol: 1e-12,
            atol: 1e-14,
            ..Tolerances::default()
        };
        let direct = solve_ivp(&cube, 0.0, &init, &checkpoints, &tight).unwrap();
        for (c, state) in checkpoints.iter().zip(&direct.samples) {
            let g = grid
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - c).abs().total_cmp(&(b.1 - c).abs()))
                .unwrap()
                .0;
            let series = solution_series(&cube, &f, grid[g], &t.samples[g], 14).unwrap();
            let h = c - grid[g];
            let interp = interpolate(&series, h);
            for (a, b) in interp.iter().zip(state) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            let top_slope = series[5].derivative().eval_at(h);
            let mut inp = vec![*c];
            inp.extend_from_slice(&interp);
            let residual = (top_slope - f.eval(&inp).unwrap()).abs();
            assert!(residual < 1e-8, "residual {residual}");
        }
    }

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "0:2:5".parse().unwrap();
        assert_eq!(g.points(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!("0:1".parse::<GridSpec>().is_err());
    }
}
