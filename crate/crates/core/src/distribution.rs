//! Rank-2 distributions attached to Lagrangians, their abnormal extremals
//! and Jacobi curves.
//!
//! The distribution lives on the chart `(x, y_0..y_n, z)`. Abnormal
//! extremals are integrated on the reduced chart `(x, y_0..y_n, xi_0..xi_{n-2})`
//! obtained by fixing `nu = -1` and dividing out `z`-translations; `x` is the
//! flow parameter.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{diff, is_zero, CompiledExpr, EvalError, Expr, Var, ZeroVerdict};
use crate::flow::{annihilator, apply, column_series, inverse_propagator, FirstOrderSystem};
use crate::jet::{GridSpec, JetError, Lagrangian, OrdODE};
use crate::ode::{OdeError, Tolerances};
use crate::series::Series;
use crate::wilczynski::{ProjectiveCurve, WilczynskiError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Wilczynski(#[from] WilczynskiError),
    #[error("vector fields live on different charts")]
    ChartMismatch,
    #[error("singular control (f_(y_n y_n) = 0) at x = {x}")]
    SingularControl { x: f64 },
    #[error("point has {got} coordinates, chart needs {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("osculating rank drops at t = {t}; extremal is not of maximal class there")]
    OsculatingDegeneracy { t: f64 },
    #[error("curves do not match projectively: residual {residual:e}")]
    Mismatch { residual: f64 },
    #[error("projective fit is degenerate (singular map)")]
    DegenerateFit,
    #[error("{0}")]
    Invalid(String),
}

impl From<OdeError> for DistributionError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Singularity { x } => DistributionError::SingularControl { x },
            other => DistributionError::Jet(other.into()),
        }
    }
}

/// Vector field with symbolic coefficients on a coordinate chart.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    chart: Vec<Var>,
    coeffs: Vec<Expr>,
}

impl VectorField {
    pub fn new(chart: Vec<Var>, coeffs: Vec<Expr>) -> Result<Self, DistributionError> {
        if chart.len() != coeffs.len() {
            return Err(DistributionError::Invalid("one coefficient per chart coordinate".into()));
        }
        Ok(VectorField { chart, coeffs })
    }

    /// Coordinate field `d/dv`.
    pub fn coordinate(chart: &[Var], v: Var) -> Self {
        VectorField {
            chart: chart.to_vec(),
            coeffs: chart.iter().map(|&c| if c == v { Expr::one() } else { Expr::zero() }).collect(),
        }
    }

    pub fn chart(&self) -> &[Var] {
        &self.chart
    }

    pub fn coeffs(&self) -> &[Expr] {
        &self.coeffs
    }

    pub fn coeff(&self, v: Var) -> Option<&Expr> {
        self.chart.iter().position(|&c| c == v).map(|i| &self.coeffs[i])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Directional derivative of a function.
    pub fn apply(&self, g: &Expr) -> Expr {
        self.chart
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, c)| !c.is_zero())
            .fold(Expr::zero(), |acc, (&v, c)| &acc + &(c * &diff(g, v)))
    }

    pub fn scale(&self, g: &Expr) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            coeffs: self.coeffs.iter().map(|c| c * g).collect(),
        }
    }

    pub fn add(&self, o: &VectorField) -> Result<VectorField, DistributionError> {
        if self.chart != o.chart {
            return Err(DistributionError::ChartMismatch);
        }
        Ok(VectorField {
            chart: self.chart.clone(),
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn compile(&self) -> Result<CompiledField, DistributionError> {
        Ok(CompiledField {
            coeffs: self
                .coeffs
                .iter()
                .map(|c| CompiledExpr::new(c, &self.chart))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>, DistributionError> {
        self.compile()?.eval(point)
    }
}

pub struct CompiledField {
    coeffs: Vec<CompiledExpr>,
}

impl CompiledField {
    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>, DistributionError> {
        if point.len() != self.coeffs.len() {
            return Err(DistributionError::PointDimension {
                expected: self.coeffs.len(),
                got: point.len(),
            });
        }
        let vals = self.coeffs.iter().map(|c| c.eval(point)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }
}

impl std::fmt::Display for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for (v, c) in self.chart.iter().zip(&self.coeffs) {
            if c.is_zero() {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if c.is_one() {
                write!(f, "d/d{v}")?;
            } else {
                write!(f, "({c})*d/d{v}")?;
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// `[V, W]^k = sum_j (V^j d_j W^k - W^j d_j V^k)`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, DistributionError> {
    if v.chart != w.chart {
        return Err(DistributionError::ChartMismatch);
    }
    let coeffs = v
        .coeffs
        .iter()
        .zip(&w.coeffs)
        .map(|(vk, wk)| crate::expr::normalize(&(&v.apply(wk) - &w.apply(vk))))
        .collect();
    Ok(VectorField {
        chart: v.chart.clone(),
        coeffs,
    })
}

/// Distribution spanned by `X1 = d/dx + sum_{i<n} y_{i+1} d/dy_i + f d/dz`
/// and `X2 = d/dy_n`.
#[derive(Clone, Debug)]
pub struct DistributionSpec {
    n: u32,
    density: Expr,
    x1: VectorField,
    x2: VectorField,
}

impl DistributionSpec {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn density(&self) -> &Expr {
        &self.density
    }

    pub fn chart(&self) -> &[Var] {
        self.x1.chart()
    }

    pub fn generators(&self) -> [&VectorField; 2] {
        [&self.x1, &self.x2]
    }
}

/// Chart `(x, y_0, ..., y_n, z)`.
pub fn distribution_chart(n: u32) -> Vec<Var> {
    let mut c = vec![Var::X];
    c.extend((0..=n).map(Var::Y));
    c.push(Var::Z);
    c
}

pub fn build_distribution(l: &Lagrangian) -> DistributionSpec {
    distribution_from_density(l.order(), l.density().clone())
}

/// Same construction for an arbitrary density on the chart, which may
/// depend on `z`.
pub fn distribution_from_density(n: u32, f: Expr) -> DistributionSpec {
    let chart = distribution_chart(n);
    let mut c1 = vec![Expr::one()];
    c1.extend((1..=n).map(Expr::y));
    c1.push(Expr::zero());
    c1.push(f.clone());
    DistributionSpec {
        n,
        x2: VectorField::coordinate(&chart, Var::Y(n)),
        x1: VectorField { chart, coeffs: c1 },
        density: f,
    }
}

fn numeric_rank(vectors: &[DVector<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let d = vectors[0].len();
    let m = DMatrix::from_fn(d, vectors.len(), |r, c| vectors[c][r]);
    let s = m.svd(false, false).singular_values;
    let max = s.max();
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > 1e-9 * max).count()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GrowthReport {
    /// `dim D^1, dim D^2, ...` until the dimension stops changing or fills
    /// the chart.
    pub growth: Vec<usize>,
    pub full: bool,
    /// The generic pattern `(2, 3, 5, ...)` fails.
    pub degenerate: bool,
    /// Same growth vector at the perturbed points.
    pub stable: bool,
}

/// Small growth vector at a point of the chart.
pub fn derived_flag(d: &DistributionSpec, point: &[f64], seed: u64) -> Result<GrowthReport, DistributionError> {
    let dim = d.chart().len();
    if point.len() != dim {
        return Err(DistributionError::PointDimension { expected: dim, got: point.len() });
    }
    let levels = bracket_levels(d, dim)?;
    let growth = growth_at(&levels, point)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stable = true;
    for _ in 0..5 {
        let p: Vec<f64> = point.iter().map(|v| v + rng.gen_range(-1e-2..1e-2)).collect();
        if growth_at(&levels, &p)? != growth {
            stable = false;
        }
    }
    let full = growth.last() == Some(&dim);
    let degenerate = !full || growth.get(2).is_some_and(|&v| v != 5);
    Ok(GrowthReport {
        growth,
        full,
        degenerate,
        stable,
    })
}

/// Generators of `D^1, D^2, ...`: each level adds the brackets of `X1`, `X2`
/// with the fields added at the previous level.
fn bracket_levels(d: &DistributionSpec, dim: usize) -> Result<Vec<Vec<CompiledField>>, DistributionError> {
    let gens = [d.x1.clone(), d.x2.clone()];
    let mut newest: Vec<VectorField> = gens.to_vec();
    let mut levels = vec![newest.iter().map(|v| v.compile()).collect::<Result<Vec<_>, _>>()?];
    for _ in 1..dim {
        let mut next = Vec::new();
        for g in &gens {
            for v in &newest {
                let b = lie_bracket(g, v)?;
                if !b.is_zero() && !next.contains(&b) && !next.contains(&negated(&b)) {
                    next.push(b);
                }
            }
        }
        if next.is_empty() || next.len() > 256 {
            break;
        }
        levels.push(next.iter().map(|v| v.compile()).collect::<Result<Vec<_>, _>>()?);
        newest = next;
    }
    Ok(levels)
}

fn negated(v: &VectorField) -> VectorField {
    VectorField {
        chart: v.chart.clone(),
        coeffs: v.coeffs.iter().map(|c| -c.clone()).collect(),
    }
}

fn growth_at(levels: &[Vec<CompiledField>], point: &[f64]) -> Result<Vec<usize>, DistributionError> {
    let dim = point.len();
    let mut vecs = Vec::new();
    let mut growth: Vec<usize> = Vec::new();
    for level in levels {
        for f in level {
            vecs.push(f.eval(point)?);
        }
        let r = numeric_rank(&vecs);
        if growth.last() == Some(&r) {
            break;
        }
        growth.push(r);
        if r == dim {
            break;
        }
    }
    Ok(growth)
}

/// `d/dz` commutes with the generators, and lies in `D^3` at a random
/// point.
pub fn verify_z_symmetry(d: &DistributionSpec, seed: u64) -> Result<bool, DistributionError> {
    let chart = d.chart().to_vec();
    let dz = VectorField::coordinate(&chart, Var::Z);
    for g in d.generators() {
        let b = lie_bracket(&dz, g)?;
        for c in b.coeffs() {
            if is_zero(c, 1e-9)? != ZeroVerdict::Zero {
                return Ok(false);
            }
        }
    }
    let levels = bracket_levels(d, chart.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<f64> = chart.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut vecs = Vec::new();
    for level in levels.iter().take(3) {
        for f in level {
            vecs.push(f.eval(&point)?);
        }
    }
    let r = numeric_rank(&vecs);
    vecs.push(DVector::from_fn(chart.len(), |i, _| if chart[i] == Var::Z { 1.0 } else { 0.0 }));
    Ok(numeric_rank(&vecs) == r)
}

/// Abnormal extremal flow on the reduced chart, parametrized by `x`.
#[derive(Clone, Debug)]
pub struct AbnormalSystem {
    n: u32,
    density: Expr,
    /// Optimal control `u* = y_n'`.
    control: Expr,
    /// State `(y_0..y_n, xi_0..xi_{n-2})`.
    reduced: FirstOrderSystem,
    /// Reduced state followed by `lambda` and `xi_{n-1}`.
    extended: FirstOrderSystem,
    /// Symplectic form on the reduced state coordinates, as a matrix of
    /// expressions on the reduced chart.
    sigma: Vec<Vec<CompiledExpr>>,
    f_top: CompiledExpr,
    hamiltonian_inputs: Vec<CompiledExpr>,
}

/// State of an abnormal extremal in the reduced chart.
#[derive(Clone, Debug, PartialEq)]
pub struct AbnormalState {
    pub x: f64,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Full cotangent coordinates `(lambda, xi_0..xi_n, nu)` over a reduced
/// state.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub lambda: f64,
    pub xi: Vec<f64>,
    pub nu: f64,
}

impl AbnormalState {
    fn reduced(&self) -> Vec<f64> {
        let mut s = self.y.clone();
        s.extend(&self.xi);
        s
    }
}

/// Reduced chart `(y_0..y_n, xi_0..xi_{n-2})` without `x`.
pub fn reduced_state_vars(n: u32) -> Vec<Var> {
    let mut v: Vec<Var> = (0..=n).map(Var::Y).collect();
    v.extend((0..n - 1).map(Var::Xi));
    v
}

pub fn abnormal_extremal_ode(l: &Lagrangian) -> Result<AbnormalSystem, DistributionError> {
    let n = l.order();
    let f = l.density().clone();
    let fy = |i: u32| diff(&f, Var::Y(i));
    let f_top = fy(n);
    let f_top2 = diff(&f_top, Var::Y(n));
    if f_top2.is_zero() {
        return Err(JetError::Degenerate("density is linear in the top derivative".into()).into());
    }
    // X^ = d/dx + sum_{i<n} y_{i+1} d/dy_i
    let mut hat = diff(&f_top, Var::X);
    for i in 0..n {
        hat = &hat + &(&Expr::y(i + 1) * &diff(&f_top, Var::Y(i)));
    }
    let num = &(&fy(n - 1) - &Expr::xi(n - 2)) - &hat;
    let control = crate::expr::normalize(&num.try_div(&f_top2).map_err(|e| JetError::Expr(e))?);
    let mut rhs: Vec<Expr> = (1..=n).map(Expr::y).collect();
    rhs.push(control.clone());
    rhs.push(fy(0));
    for j in 1..n - 1 {
        rhs.push(&fy(j) - &Expr::xi(j - 1));
    }
    let state = reduced_state_vars(n);
    let reduced = FirstOrderSystem::new(Var::X, state.clone(), rhs.clone())?;
    let mut ext_state = state.clone();
    ext_state.push(Var::Lambda);
    ext_state.push(Var::Xi(n - 1));
    let mut ext_rhs = rhs;
    ext_rhs.push(diff(&f, Var::X));
    ext_rhs.push(&fy(n - 1) - &Expr::xi(n - 2));
    let extended = FirstOrderSystem::new(Var::X, ext_state, ext_rhs)?;

    let mut chart = vec![Var::X];
    chart.extend(&state);
    let rho = reduced_liouville(n, &f);
    let sigma = state
        .iter()
        .map(|&a| {
            state
                .iter()
                .map(|&b| {
                    let e = &diff(rho.coeff(b).unwrap(), a) - &diff(rho.coeff(a).unwrap(), b);
                    CompiledExpr::new(&e, &chart)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let f_top_c = CompiledExpr::new(&f_top, &chart)?;
    let mut ham_chart = chart.clone();
    ham_chart.push(Var::Lambda);
    ham_chart.push(Var::Xi(n - 1));
    // H = lambda + sum_{i<n} xi_i y_{i+1} - f, with xi_n = 0 and nu = -1.
    let mut h = &Expr::var(Var::Lambda) - &f;
    for i in 0..n {
        h = &h + &(&Expr::xi(i) * &Expr::y(i + 1));
    }
    let hamiltonian_inputs = vec![CompiledExpr::new(&h, &ham_chart)?];
    Ok(AbnormalSystem {
        n,
        density: f,
        control,
        reduced,
        extended,
        sigma,
        f_top: f_top_c,
        hamiltonian_inputs,
    })
}

/// Liouville form on the reduced chart,
/// `f dx + sum_{i<=n-2} xi_i theta_i + f_{y_n} theta_{n-1}`, as components
/// along `(x, y_0..y_n, xi_0..xi_{n-2})`.
pub fn reduced_liouville(n: u32, f: &Expr) -> VectorField {
    let mut chart = vec![Var::X];
    chart.extend(reduced_state_vars(n));
    let f_top = diff(f, Var::Y(n));
    let mut dx = f.clone();
    let mut coeffs: Vec<Expr> = Vec::with_capacity(chart.len());
    coeffs.push(Expr::zero());
    for i in 0..=n {
        let c = if i + 2 <= n {
            Expr::xi(i)
        } else if i + 1 == n {
            f_top.clone()
        } else {
            Expr::zero()
        };
        dx = &dx - &(&c * &Expr::y(i + 1));
        coeffs.push(c);
    }
    coeffs.extend((0..n - 1).map(|_| Expr::zero()));
    coeffs[0] = dx;
    VectorField { chart, coeffs }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct ExtremalResiduals {
    /// `max |xi_{n-1} - f_{y_n}|` with `xi_{n-1}` integrated by the adjoint
    /// equation; this keeps `xi_n` stationary at 0.
    pub stationarity: f64,
    /// `max |H|` with the integrated `lambda`.
    pub transversality: f64,
    /// `nu` is constant; always 0.
    pub normalization: f64,
}

/// Abnormal extremal sampled on a grid.
#[derive(Clone, Debug)]
pub struct Extremal {
    pub n: u32,
    pub grid: Vec<f64>,
    /// `(y_0..y_n, xi_0..xi_{n-2})` at each grid point.
    pub states: Vec<Vec<f64>>,
    pub residuals: ExtremalResiduals,
}

impl Extremal {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x");
        for i in 0..=self.n {
            let _ = write!(out, ",y{i}");
        }
        for i in 0..self.n - 1 {
            let _ = write!(out, ",xi{i}");
        }
        out.push('\n');
        for (x, s) in self.grid.iter().zip(&self.states) {
            let _ = write!(out, "{x}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn initial(&self) -> AbnormalState {
        let n = self.n as usize;
        AbnormalState {
            x: self.grid[0],
            y: self.states[0][..=n].to_vec(),
            xi: self.states[0][n + 1..].to_vec(),
        }
    }
}

impl AbnormalSystem {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn control(&self) -> &Expr {
        &self.control
    }

    pub fn density(&self) -> &Expr {
        &self.density
    }

    pub fn reduced(&self) -> &FirstOrderSystem {
        &self.reduced
    }

    fn chart_point(x: f64, s: &[f64]) -> Vec<f64> {
        let mut p = vec![x];
        p.extend_from_slice(s);
        p
    }

    /// Full-chart extension: `xi_{n-1} = f_{y_n}`, `xi_n = 0`, `nu = -1`,
    /// `lambda` from `H = 0`.
    pub fn extend(&self, st: &AbnormalState) -> Result<Covector, DistributionError> {
        let n = self.n as usize;
        let s = st.reduced();
        let p = Self::chart_point(st.x, &s);
        let xi_top = self.f_top.eval(&p)?;
        let f = CompiledExpr::new(&self.density, &{
            let mut c = vec![Var::X];
            c.extend(reduced_state_vars(self.n));
            c
        })?
        .eval(&p)?;
        let mut lambda = f;
        for i in 0..n {
            let xi = if i + 1 == n { xi_top } else { st.xi[i] };
            lambda -= xi * st.y[i + 1];
        }
        let mut xi = st.xi.clone();
        xi.push(xi_top);
        xi.push(0.0);
        Ok(Covector { lambda, xi, nu: -1.0 })
    }

    /// Symplectic form of the extremal space on reduced state vectors at a
    /// chart point.
    pub fn symplectic_matrix(&self, x: f64, s: &[f64]) -> Result<DMatrix<f64>, DistributionError> {
        let p = Self::chart_point(x, s);
        let d = s.len();
        let mut m = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] = self.sigma[a][b].eval(&p)?;
            }
        }
        Ok(m)
    }

    /// Integrate from `init` over `grid` (which should start at `init.x`).
    pub fn integrate(&self, init: &AbnormalState, grid: &[f64], tol: &Tolerances) -> Result<Extremal, DistributionError> {
        let n = self.n as usize;
        if init.y.len() != n + 1 || init.xi.len() != n - 1 {
            return Err(DistributionError::Invalid(format!(
                "abnormal state needs {} y and {} xi values",
                n + 1,
                n - 1
            )));
        }
        let cov = self.extend(init)?;
        let mut s0 = init.reduced();
        s0.push(cov.lambda);
        s0.push(cov.xi[n - 1]);
        if self.extended.eval(init.x, &s0).is_err() {
            return Err(DistributionError::SingularControl { x: init.x });
        }
        let out = crate::ode::integrate(
            |x, s, d| match self.extended.eval(x, s) {
                Ok(v) => {
                    d.copy_from_slice(&v);
                    true
                }
                Err(_) => false,
            },
            init.x,
            &s0,
            grid,
            tol,
        )?;
        let mut res = ExtremalResiduals::default();
        let mut states = Vec::with_capacity(out.len());
        for (x, z) in grid.iter().zip(&out) {
            let red = &z[..2 * n];
            let p = Self::chart_point(*x, red);
            let f_top = self.f_top.eval(&p)?;
            res.stationarity = res.stationarity.max((z[2 * n + 1] - f_top).abs());
            let mut hp = p.clone();
            hp.push(z[2 * n]);
            hp.push(z[2 * n + 1]);
            res.transversality = res.transversality.max(self.hamiltonian_inputs[0].eval(&hp)?.abs());
            states.push(red.to_vec());
        }
        Ok(Extremal {
            n: self.n,
            grid: grid.to_vec(),
            states,
            residuals: res,
        })
    }
}

pub fn integrate_abnormal(
    l: &Lagrangian,
    init: &AbnormalState,
    grid: &[f64],
    tol: &Tolerances,
) -> Result<Extremal, DistributionError> {
    abnormal_extremal_ode(l)?.integrate(init, grid, tol)
}

/// Jacobi curve together with diagnostics.
#[derive(Clone, Debug)]
pub struct JacobiCurve {
    pub curve: ProjectiveCurve,
    /// Transported planes `J^(0)` (orthonormal bases) at each grid point.
    pub planes: Vec<DMatrix<f64>>,
    /// Smallest `|det|` of the column-normalized osculating frame.
    pub min_frame_det: f64,
}

/// Local jet length used for the curves built here; enough for the
/// invariants of a curve in `P^(2n-1)`.
pub fn curve_jet_len(n: u32) -> usize {
    let big_n = 2 * n as usize - 1;
    crate::wilczynski::required_jet_length(big_n) + big_n + 3
}

/// Jacobi curve along an integrated extremal, in the tangent space of the
/// extremal space at the first grid point.
pub fn jacobi_curve(sys: &AbnormalSystem, ext: &Extremal, tol: &Tolerances) -> Result<JacobiCurve, DistributionError> {
    let n = sys.n as usize;
    let d = 2 * n;
    let init = ext.initial();
    let (states, phis) = sys.reduced.integrate_with_variations(init.x, &init.reduced(), &ext.grid, tol)?;
    let len = curve_jet_len(sys.n);
    // Vertical plane: d/dy_n and d/dxi_j.
    let vertical: Vec<usize> = (n..d).collect();
    let mut local = Vec::with_capacity(ext.grid.len());
    let mut planes = Vec::with_capacity(ext.grid.len());
    for ((&x, s), phi) in ext.grid.iter().zip(&states).zip(&phis) {
        let phi_inv = phi.clone().try_inverse().ok_or(DistributionError::OsculatingDegeneracy { t: x })?;
        let series = sys.reduced.taylor(x, s, len + n + 1)?;
        let a = sys.reduced.jacobian_series(x, &series)?;
        let psi = inverse_propagator(&a);
        let cols: Vec<Vec<Series<f64>>> = vertical.iter().map(|&j| column_series(&psi, j)).collect();
        // Derivative columns of the plane family up to order n-1.
        let mut all: Vec<Vec<Series<f64>>> = Vec::new();
        for c in &cols {
            all.push(c.clone());
        }
        let mut cur = cols;
        for _ in 1..n {
            cur = cur.iter().map(|c| c.iter().map(|s| s.derivative()).collect()).collect();
            all.extend(cur.iter().cloned());
        }
        let chosen = pick_independent(&all, d - 1).ok_or(DistributionError::OsculatingDegeneracy { t: x })?;
        let k: Vec<Vec<Series<f64>>> = (0..d).map(|r| chosen.iter().map(|c| c[r].clone()).collect()).collect();
        let alpha = annihilator(&k).ok_or(DistributionError::OsculatingDegeneracy { t: x })?;
        let omega = sys.symplectic_matrix(x, s)?;
        let omega_inv_t = omega
            .transpose()
            .try_inverse()
            .ok_or(DistributionError::OsculatingDegeneracy { t: x })?;
        let line = apply(&omega_inv_t, &alpha);
        let lift: Vec<Series<f64>> = apply(&phi_inv, &line).into_iter().map(|s| s.truncate(len)).collect();
        local.push(lift);
        let e = DMatrix::from_fn(d, n, |r, c| if r == vertical[c] { 1.0 } else { 0.0 });
        planes.push(orthonormal(&(&phi_inv * e)));
    }
    let curve = ProjectiveCurve::new(ext.grid.clone(), local)?;
    let min_frame_det = min_normalized_det(&curve);
    if !(min_frame_det > 1e-14) {
        let g = (0..curve.grid().len())
            .min_by(|&a, &b| normalized_det(&curve, a).total_cmp(&normalized_det(&curve, b)))
            .unwrap_or(0);
        return Err(DistributionError::OsculatingDegeneracy { t: curve.grid()[g] });
    }
    Ok(JacobiCurve {
        curve,
        planes,
        min_frame_det,
    })
}

fn pick_independent(cols: &[Vec<Series<f64>>], want: usize) -> Option<Vec<Vec<Series<f64>>>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|s| s.coeff(0).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        .max(1e-300);
    for c in cols {
        let v0 = DVector::from_iterator(c.len(), c.iter().map(|s| *s.coeff(0)));
        let mut r = v0.clone();
        for b in &basis {
            r -= b * b.dot(&r);
        }
        if r.norm() > 1e-8 * scale.max(v0.norm()) {
            basis.push(r.normalize());
            chosen.push(c.clone());
            if chosen.len() == want {
                return Some(chosen);
            }
        }
    }
    None
}

fn orthonormal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    qr.q().columns(0, m.ncols()).into_owned()
}

fn normalized_det(curve: &ProjectiveCurve, g: usize) -> f64 {
    let mut f = curve.frame(g);
    for mut c in f.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    f.determinant().abs()
}

fn min_normalized_det(curve: &ProjectiveCurve) -> f64 {
    (0..curve.grid().len()).map(|g| normalized_det(curve, g)).fold(f64::INFINITY, f64::min)
}

/// `Lin^1` of an equation along the solution through `(x0, init)`: the
/// curve of `d/dy_N` transported to the initial-data space.
pub fn linearization_curve(ode: &OrdODE, x0: f64, init: &[f64], grid: &[f64], tol: &Tolerances) -> Result<ProjectiveCurve, DistributionError> {
    let sys = FirstOrderSystem::from_ode(ode)?;
    let d = sys.dim();
    let len = crate::wilczynski::required_jet_length(d - 1) + d + 2;
    let (states, phis) = sys.integrate_with_variations(x0, init, grid, tol)?;
    let mut local = Vec::with_capacity(grid.len());
    for ((&x, s), phi) in grid.iter().zip(&states).zip(&phis) {
        let phi_inv = phi.clone().try_inverse().ok_or(DistributionError::OsculatingDegeneracy { t: x })?;
        let series = sys.taylor(x, s, len + 1)?;
        let a = sys.jacobian_series(x, &series)?;
        let psi = inverse_propagator(&a);
        let col: Vec<Series<f64>> = column_series(&psi, d - 1).into_iter().map(|c| c.truncate(len)).collect();
        local.push(apply(&phi_inv, &col));
    }
    Ok(ProjectiveCurve::new(grid.to_vec(), local)?)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ClassReport {
    /// `(x, y_0..y_n)`.
    pub point: Vec<f64>,
    /// `dim J^(i)` for `i = -n..n`, maximized over the sampled covectors.
    pub dims: Vec<usize>,
    pub class: u32,
    pub maximal_class: bool,
}

/// Class of the distribution at a point of `J^n`, from the filtration
/// `J^(i+1) = J^(i) + [C, J^(i)]` at several covectors over the point.
pub fn distribution_class(sys: &AbnormalSystem, point: &[f64], seed: u64) -> Result<ClassReport, DistributionError> {
    let n = sys.n as usize;
    if point.len() != n + 2 {
        return Err(DistributionError::PointDimension { expected: n + 2, got: point.len() });
    }
    let mut chart = vec![Var::X];
    chart.extend(reduced_state_vars(sys.n));
    let mut c_coeffs = vec![Expr::one()];
    c_coeffs.extend(sys.reduced.rhs().iter().cloned());
    let c = VectorField::new(chart.clone(), c_coeffs)?;
    let mut levels: Vec<Vec<VectorField>> = vec![{
        let mut j0 = vec![c.clone(), VectorField::coordinate(&chart, Var::Y(sys.n))];
        j0.extend((0..sys.n - 1).map(|i| VectorField::coordinate(&chart, Var::Xi(i))));
        j0
    }];
    for _ in 0..n {
        let prev = levels.last().unwrap();
        let next: Vec<VectorField> = prev
            .iter()
            .map(|v| lie_bracket(&c, v))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|v| !v.is_zero())
            .collect();
        levels.push(next);
    }
    let compiled: Vec<Vec<CompiledField>> = levels
        .iter()
        .map(|l| l.iter().map(|v| v.compile()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(u32, Vec<usize>)> = None;
    for _ in 0..5 {
        let mut p = point.to_vec();
        p.extend((0..n - 1).map(|_| rng.gen_range(-1.0..1.0)));
        let s = &p[1..];
        let omega_full = full_symplectic(sys, &p)?;
        let mut vecs = Vec::new();
        let mut pos = Vec::with_capacity(n + 1);
        let mut spans = Vec::with_capacity(n + 1);
        for level in &compiled {
            for f in level {
                vecs.push(f.eval(&p)?);
            }
            pos.push(numeric_rank(&vecs));
            spans.push(vecs.clone());
        }
        let nu = (0..n).find(|&i| pos[i + 1] == pos[i]).unwrap_or(n) as u32;
        let mut dims = Vec::with_capacity(2 * n + 1);
        for i in (1..=n).rev() {
            dims.push(skew_complement_dim(&omega_full, &spans[i]));
        }
        dims.extend(pos.iter().copied());
        let _ = s;
        if best.as_ref().map_or(true, |(m, _)| nu > *m) {
            best = Some((nu, dims));
        }
    }
    let (class, dims) = best.expect("at least one sample");
    Ok(ClassReport {
        point: point.to_vec(),
        dims,
        class,
        maximal_class: class as usize == n,
    })
}

/// `d rho` on the full reduced chart including `x`.
fn full_symplectic(sys: &AbnormalSystem, p: &[f64]) -> Result<DMatrix<f64>, DistributionError> {
    let n = sys.n;
    let rho = reduced_liouville(n, &sys.density);
    let chart = rho.chart().to_vec();
    let d = chart.len();
    let mut m = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let e = &diff(&rho.coeffs()[b], chart[a]) - &diff(&rho.coeffs()[a], chart[b]);
            m[(a, b)] = CompiledExpr::new(&e, &chart)?.eval(p)?;
        }
    }
    Ok(m)
}

fn skew_complement_dim(omega: &DMatrix<f64>, span: &[DVector<f64>]) -> usize {
    let d = omega.nrows();
    if span.is_empty() {
        return d;
    }
    let w = DMatrix::from_fn(d, span.len(), |r, c| span[c][r]);
    let m = w.transpose() * omega;
    let s = m.svd(false, false).singular_values;
    let max = s.max();
    let rank = if max == 0.0 { 0 } else { s.iter().filter(|&&v| v > 1e-9 * max).count() };
    d - rank
}

/// Linear map carrying one projective curve onto another.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ProjectiveMatch {
    /// Frobenius-normalized.
    pub matrix: Vec<Vec<f64>>,
    pub residual: f64,
}

/// Fit `A` with `A e_0^(1)(t)` parallel to `e_0^(2)(t)` at every sample,
/// using the grid points and two nearby points of each local expansion.
pub fn compare_projective(a: &ProjectiveCurve, b: &ProjectiveCurve, tol: f64) -> Result<ProjectiveMatch, DistributionError> {
    if a.n() != b.n() || a.grid().len() != b.grid().len() {
        return Err(DistributionError::Invalid("curves differ in dimension or grid length".into()));
    }
    let d = a.n() + 1;
    let spacing = a
        .grid()
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min);
    let delta = if spacing.is_finite() { 0.25 * spacing } else { 0.05 };
    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    for g in 0..a.grid().len() {
        for h in [0.0, -delta, delta] {
            let u = DVector::from_iterator(d, a.local()[g].iter().map(|s| s.eval_at(h)));
            let w = DVector::from_iterator(d, b.local()[g].iter().map(|s| s.eval_at(h)));
            pairs.push((u.normalize(), w.normalize()));
        }
    }
    let rows = pairs.len() * d;
    let mut m = DMatrix::zeros(rows.max(d * d), d * d);
    for (k, (u, w)) in pairs.iter().enumerate() {
        let proj = DMatrix::identity(d, d) - w * w.transpose();
        // (P A u)_r = sum_{s,c} P_{r s} A_{s c} u_c ; vec index s + c*d
        for r in 0..d {
            for s in 0..d {
                for c in 0..d {
                    m[(k * d + r, s + c * d)] = proj[(r, s)] * u[c];
                }
            }
        }
    }
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty");
    let amat = DMatrix::from_fn(d, d, |s, c| vt[(imin, s + c * d)]);
    let sv = amat.clone().svd(false, false).singular_values;
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(DistributionError::DegenerateFit);
    }
    let mut residual = 0.0f64;
    for (u, w) in &pairs {
        let au = &amat * u;
        let perp = &au - w * w.dot(&au);
        residual = residual.max(perp.norm() / au.norm());
    }
    if !(residual < tol) {
        return Err(DistributionError::Mismatch { residual });
    }
    Ok(ProjectiveMatch {
        matrix: (0..d).map(|r| (0..d).map(|c| amat[(r, c)]).collect()).collect(),
        residual,
    })
}

/// Default grid for extremal computations.
pub fn default_grid() -> Vec<f64> {
    GridSpec::default().points()
}
