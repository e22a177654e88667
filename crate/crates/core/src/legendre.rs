//! Generalized Legendre transform from the Euler-Lagrange equation to the
//! reduced abnormal chart, and the closed 2-form it pulls back.
//!
//! Forms live on the equation manifold `y_{2n} = F` with coordinates
//! `(x, y_0..y_{2n-1})` and are expanded in the coframe
//! `dx, theta_0..theta_{2n-1}`, `theta_i = dy_i - y_{i+1} dx`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distribution::{abnormal_extremal_ode, AbnormalState, DistributionError};
use crate::expr::{diff, is_zero, normalize, CompiledExpr, EvalError, Expr, JetContext, Var, ZeroVerdict};
use crate::jet::{euler_lagrange, solution_series, JetError, Lagrangian, OrdODE, Trajectory};
use crate::ode::Tolerances;
use crate::series::Series;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LegendreError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("coefficient of theta_{i} ^ theta_{j} lies outside the variational support")]
    Support { i: usize, j: usize },
    #[error("coefficient of theta_{i} ^ theta_{j} vanishes")]
    DegenerateTop { i: usize, j: usize },
    #[error("transported form differs by {residual:e}")]
    Transport { residual: f64 },
    #[error("image misses the abnormal flow by {residual:e}")]
    Residual { residual: f64 },
}

fn vanishes(e: &Expr) -> Result<bool, LegendreError> {
    Ok(matches!(is_zero(e, 1e-9)?, ZeroVerdict::Zero | ZeroVerdict::ProbablyZero))
}

/// `xi_0..xi_{n-1}` as functions on the equation chart.
#[derive(Clone, Debug, PartialEq)]
pub struct LegendreData {
    pub n: u32,
    pub xi: Vec<Expr>,
}

impl LegendreData {
    /// Chart `(x, y_0..y_{2n-1})` of the equation manifold.
    pub fn chart(&self) -> Vec<Var> {
        equation_chart(self.n)
    }

    /// Image of a point `(x, y_0..y_{2n-1})` in the reduced abnormal chart.
    pub fn apply(&self, point: &[f64]) -> Result<AbnormalState, LegendreError> {
        let n = self.n as usize;
        let chart = self.chart();
        let xi = self.xi[..n - 1]
            .iter()
            .map(|e| CompiledExpr::new(e, &chart)?.eval(point))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AbnormalState {
            x: point[0],
            y: point[1..n + 2].to_vec(),
            xi,
        })
    }
}

pub fn equation_chart(n: u32) -> Vec<Var> {
    std::iter::once(Var::X).chain((0..2 * n).map(Var::Y)).collect()
}

/// `xi_{n-1} = f_{y_n}` and
/// `xi_{j-1} = sum_{k=j}^{n} (-1)^{k-j} D^{k-j} f_{y_k}`.
pub fn legendre_xi(l: &Lagrangian) -> LegendreData {
    let n = l.order();
    let f = l.density();
    let free = JetContext::free();
    let xi = (1..=n)
        .map(|j| {
            let mut acc = Expr::zero();
            for k in j..=n {
                let t = free.total_derivative_n(&diff(f, Var::Y(k)), (k - j) as usize);
                acc = if (k - j) % 2 == 0 { &acc + &t } else { &acc - &t };
            }
            normalize(&acc)
        })
        .collect();
    LegendreData { n, xi }
}

/// 1-form `a dx + sum b_i theta_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm {
    pub dx: Expr,
    pub theta: Vec<Expr>,
}

/// 2-form `sum_i e_i dx ^ theta_i + sum_{i<j} c_ij theta_i ^ theta_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoForm {
    pub dx_theta: Vec<Expr>,
    /// Nonzero `c_ij` for `i < j`.
    pub theta_theta: BTreeMap<(usize, usize), Expr>,
}

impl TwoForm {
    pub fn dim(&self) -> usize {
        self.dx_theta.len()
    }

    pub fn coeff(&self, i: usize, j: usize) -> Expr {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.theta_theta.get(&(i, j)).cloned().unwrap_or_else(Expr::zero),
            std::cmp::Ordering::Greater => -self.coeff(j, i),
            std::cmp::Ordering::Equal => Expr::zero(),
        }
    }

    pub fn add_theta_theta(&mut self, i: usize, j: usize, c: &Expr) {
        let (a, b, c) = if i < j { (i, j, c.clone()) } else { (j, i, -c.clone()) };
        let entry = self.theta_theta.entry((a, b)).or_insert_with(Expr::zero);
        *entry = normalize(&(&*entry + &c));
        if entry.is_zero() {
            self.theta_theta.remove(&(a, b));
        }
    }

    /// Coefficient table: `"i,j"` for `theta_i ^ theta_j`, `"x,i"` for
    /// `dx ^ theta_i`; rational constants become JSON numbers.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (i, c) in self.dx_theta.iter().enumerate() {
            if !c.is_zero() {
                map.insert(format!("x,{i}"), coeff_json(c));
            }
        }
        for ((i, j), c) in &self.theta_theta {
            map.insert(format!("{i},{j}"), coeff_json(c));
        }
        serde_json::Value::Object(map)
    }

    /// Coefficients `M` with `omega = sum_{a<b} M_ab dz_a ^ dz_b` in the chart
    /// `(x, y_0..y_{m-1})`, where `theta_{m-1} = dy_{m-1} - F dx`.
    fn coordinate_matrix(&self, top_rhs: &Expr) -> Vec<Vec<Expr>> {
        let m = self.dim();
        let d = m + 1;
        let slope = |i: usize| if i + 1 == m { top_rhs.clone() } else { Expr::y(i as u32 + 1) };
        let mut out = vec![vec![Expr::zero(); d]; d];
        let mut put = |a: usize, b: usize, c: &Expr| {
            out[a][b] = &out[a][b] + c;
            out[b][a] = &out[b][a] - c;
        };
        for (i, e) in self.dx_theta.iter().enumerate() {
            put(0, i + 1, e);
        }
        for (&(i, j), c) in &self.theta_theta {
            put(i + 1, j + 1, c);
            put(0, i + 1, &(c * &slope(j)));
            put(0, j + 1, &-(c * &slope(i)));
        }
        for row in out.iter_mut() {
            for c in row.iter_mut() {
                *c = normalize(c);
            }
        }
        out
    }
}

fn coeff_json(c: &Expr) -> serde_json::Value {
    if let Some(q) = c.as_constant() {
        if q.is_integer() {
            if let Ok(v) = i64::try_from(q.to_integer()) {
                return serde_json::Value::from(v);
            }
        }
        return serde_json::Value::from(crate::expr::q_to_f64(&q));
    }
    serde_json::Value::from(c.to_string())
}

/// `rho = f dx + sum_{i<=n-2} xi_i theta_i + f_{y_n} theta_{n-1}`.
pub fn rho_form(l: &Lagrangian) -> OneForm {
    let n = l.order() as usize;
    let data = legendre_xi(l);
    let mut theta = vec![Expr::zero(); 2 * n];
    theta[..n].clone_from_slice(&data.xi);
    OneForm {
        dx: l.density().clone(),
        theta,
    }
}

/// Exterior derivative of a 1-form on the equation manifold of `ode`.
pub fn exterior_derivative(a: &OneForm, ode: &OrdODE) -> TwoForm {
    let m = a.theta.len();
    let rhs = ode.rhs();
    let mut dx_theta = Vec::with_capacity(m);
    for k in 0..m {
        let yk = Var::Y(k as u32);
        let mut e = &ode.total_derivative(&a.theta[k]) - &diff(&a.dx, yk);
        if k >= 1 {
            e = &e + &a.theta[k - 1];
        }
        e = &e + &(&a.theta[m - 1] * &diff(rhs, yk));
        dx_theta.push(normalize(&e));
    }
    let mut out = TwoForm {
        dx_theta,
        theta_theta: BTreeMap::new(),
    };
    for i in 0..m {
        for j in i + 1..m {
            let c = &diff(&a.theta[j], Var::Y(i as u32)) - &diff(&a.theta[i], Var::Y(j as u32));
            out.add_theta_theta(i, j, &c);
        }
    }
    out
}

/// `omega = d rho` on the Euler-Lagrange equation.
pub fn omega_form(l: &Lagrangian) -> Result<TwoForm, LegendreError> {
    let ode = euler_lagrange(l)?;
    Ok(exterior_derivative(&rho_form(l), &ode))
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct OmegaReport {
    pub closed: bool,
    pub kernel_contains_solution_field: bool,
    pub vertical_isotropic: bool,
    pub kernel_rank_one: bool,
    pub failures: Vec<String>,
}

impl OmegaReport {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn verify_omega_properties(l: &Lagrangian, seed: u64) -> Result<OmegaReport, LegendreError> {
    let ode = euler_lagrange(l)?;
    verify_form_properties(&omega_form(l)?, &ode, seed)
}

/// Closedness, `S` in the kernel, isotropy of `V^n`, and a one-dimensional
/// kernel at three random points.
pub fn verify_form_properties(w: &TwoForm, ode: &OrdODE, seed: u64) -> Result<OmegaReport, LegendreError> {
    let m = w.dim();
    let n = m / 2;
    let mut r = OmegaReport::default();
    let coords = ode.coordinates();
    let chart: Vec<Var> = coords[..m + 1].to_vec();
    let mat = w.coordinate_matrix(ode.rhs());

    r.closed = true;
    'outer: for a in 0..=m {
        for b in a + 1..=m {
            for c in b + 1..=m {
                let e = &(&diff(&mat[b][c], chart[a]) - &diff(&mat[a][c], chart[b])) + &diff(&mat[a][b], chart[c]);
                if !vanishes(&normalize(&e))? {
                    r.closed = false;
                    r.failures.push(format!("d(omega) has a nonzero component along ({a},{b},{c})"));
                    break 'outer;
                }
            }
        }
    }

    r.kernel_contains_solution_field = true;
    for (i, e) in w.dx_theta.iter().enumerate() {
        if !vanishes(e)? {
            r.kernel_contains_solution_field = false;
            r.failures.push(format!("contraction with S has a theta_{i} component"));
        }
    }

    r.vertical_isotropic = true;
    for i in n..m {
        for j in i + 1..m {
            if !vanishes(&w.coeff(i, j))? {
                r.vertical_isotropic = false;
                r.failures.push(format!("omega(d/dy{i}, d/dy{j}) is nonzero"));
            }
        }
    }

    let compiled: Vec<Vec<CompiledExpr>> = mat
        .iter()
        .map(|row| row.iter().map(|e| CompiledExpr::new(e, &chart)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r.kernel_rank_one = true;
    for _ in 0..3 {
        let p: Vec<f64> = (0..=m).map(|_| rng.gen_range(0.5..1.5)).collect();
        let mut num = DMatrix::zeros(m + 1, m + 1);
        for a in 0..=m {
            for b in 0..=m {
                num[(a, b)] = compiled[a][b].eval(&p)?;
            }
        }
        let s = num.svd(false, false).singular_values;
        let rank = s.iter().filter(|&&v| v > 1e-9 * s.max()).count();
        if rank != m {
            r.kernel_rank_one = false;
            r.failures.push(format!("kernel has dimension {} at a sample point", m + 1 - rank));
            break;
        }
    }
    Ok(r)
}

/// Coefficients `A_ij` of `omega = sum A_ij theta_i ^ theta_j`, with
/// `0 <= i <= n-1` and `i+1 <= j <= 2n-i-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AndersonThompson {
    pub n: usize,
    pub table: BTreeMap<(usize, usize), Expr>,
}

impl AndersonThompson {
    pub fn get(&self, i: usize, j: usize) -> Expr {
        self.table.get(&(i, j)).cloned().unwrap_or_else(Expr::zero)
    }
}

pub fn in_variational_support(n: usize, i: usize, j: usize) -> bool {
    i < n && j > i && j < 2 * n - i
}

pub fn anderson_thompson_coeffs(l: &Lagrangian) -> Result<AndersonThompson, LegendreError> {
    let w = omega_form(l)?;
    anderson_thompson_of(&w)
}

pub fn anderson_thompson_of(w: &TwoForm) -> Result<AndersonThompson, LegendreError> {
    let n = w.dim() / 2;
    let mut table = BTreeMap::new();
    for (&(i, j), c) in &w.theta_theta {
        if in_variational_support(n, i, j) {
            table.insert((i, j), c.clone());
        } else if !vanishes(c)? {
            return Err(LegendreError::Support { i, j });
        }
    }
    let out = AndersonThompson { n, table };
    if vanishes(&out.get(n - 1, n))? {
        return Err(LegendreError::DegenerateTop { i: n - 1, j: n });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PushforwardReport {
    pub residual: f64,
    pub fiberwise: bool,
}

/// Map a solution of the Euler-Lagrange equation through the Legendre
/// transform and measure how far the image is from the abnormal flow.
pub fn legendre_pushforward_check(l: &Lagrangian, traj: &Trajectory, tol: f64) -> Result<PushforwardReport, LegendreError> {
    let n = l.order() as usize;
    let ode = euler_lagrange(l)?;
    let data = legendre_xi(l);
    let sys = abnormal_extremal_ode(l)?;
    let chart = data.chart();
    let f = ode.compile(ode.rhs())?;
    let xi_c = data.xi[..n - 1]
        .iter()
        .map(|e| CompiledExpr::new(e, &chart))
        .collect::<Result<Vec<_>, _>>()?;
    let len = 3;
    let mut residual = 0.0f64;
    let mut fiberwise = true;
    for (&x, s) in traj.grid.iter().zip(&traj.samples) {
        let series = solution_series(&ode, &f, x, s, len)?;
        let mut inputs = vec![Series::variable(x, len)];
        inputs.extend(series.iter().cloned());
        let mut image: Vec<Series<f64>> = series[..=n].to_vec();
        for c in &xi_c {
            image.push(c.eval_with(&inputs, &inputs[0])?);
        }
        let mut point = vec![x];
        point.extend_from_slice(s);
        let st = data.apply(&point)?;
        fiberwise &= st.y.iter().zip(&s[..=n]).all(|(a, b)| a == b) && st.x == x;
        let state: Vec<f64> = image.iter().map(|c| *c.coeff(0)).collect();
        let flow = sys.reduced().eval(x, &state)?;
        for (c, v) in image.iter().zip(&flow) {
            let scale = 1.0 + v.abs();
            residual = residual.max((c.coeff(1) - v).abs() / scale);
        }
    }
    if !(residual < tol) {
        return Err(LegendreError::Residual { residual });
    }
    Ok(PushforwardReport { residual, fiberwise })
}

/// `omega` on initial data at `x0`, with the transport check.
#[derive(Clone, Debug)]
pub struct SolutionForm {
    pub matrix: DMatrix<f64>,
    /// `max |Phi^T Omega(x_g) Phi - Omega(x_0)|` relative to `|Omega(x_0)|`.
    pub transport_residual: f64,
}

/// Evaluate `omega` on `d/dy_i` vectors at the initial point and check that
/// the linearized flow preserves it at up to three grid points.
pub fn solution_symplectic_form(
    l: &Lagrangian,
    x0: f64,
    init: &[f64],
    grid: &[f64],
    tol: &Tolerances,
    max_residual: f64,
) -> Result<SolutionForm, LegendreError> {
    let ode = euler_lagrange(l)?;
    let w = omega_form(l)?;
    let m = w.dim();
    let chart = ode.coordinates();
    let compiled: Vec<Vec<CompiledExpr>> = (0..m)
        .map(|i| (0..m).map(|j| CompiledExpr::new(&w.coeff(i, j), &chart)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let at = |x: f64, s: &[f64]| -> Result<DMatrix<f64>, LegendreError> {
        let mut p = vec![x];
        p.extend_from_slice(s);
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] = compiled[i][j].eval(&p)?;
            }
        }
        Ok(out)
    };
    let base = at(x0, init)?;
    let sys = crate::flow::FirstOrderSystem::from_ode(&ode)?;
    let picks: Vec<f64> = match grid.len() {
        0 => vec![],
        1 | 2 | 3 => grid.to_vec(),
        k => vec![grid[0], grid[k / 2], grid[k - 1]],
    };
    let (states, phis) = sys.integrate_with_variations(x0, init, &picks, tol)?;
    let mut residual = 0.0f64;
    for ((&x, s), phi) in picks.iter().zip(&states).zip(&phis) {
        let moved = phi.transpose() * at(x, s)? * phi;
        residual = residual.max((moved - &base).norm() / base.norm());
    }
    if !(residual <= max_residual) {
        return Err(LegendreError::Transport { residual });
    }
    Ok(SolutionForm {
        matrix: base,
        transport_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::jet::{divergence_shift, solve_ivp, GridSpec};

    fn lag(s: &str) -> Lagrangian {
        Lagrangian::parse(s, None).unwrap()
    }

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn xi_of_flat_lagrangian() {
        let d = legendre_xi(&lag("y3^2"));
        assert_eq!(d.xi, vec![e("2*y5"), e("-2*y4"), e("2*y3")]);
        assert_eq!(legendre_xi(&lag("y3^2 + y0^2")).xi, d.xi);
    }

    #[test]
    fn first_row_reproduces_euler_lagrange() {
        for s in ["y3^2 + y0^2", "y3^2*y1 + x*y2*y3^2", "y3^(1/3) + y0*y2"] {
            let l = lag(s);
            let d = legendre_xi(&l);
            let lhs = JetContext::free().total_derivative_n(&d.xi[0], 1);
            let el = &lhs - &diff(l.density(), Var::Y(0));
            // D(xi_0) - f_{y_0} is minus the Euler-Lagrange expression.
            let diffr = &el + &crate::jet::euler_lagrange_expression(&l);
            assert!(vanishes(&normalize(&diffr)).unwrap(), "{s}");
        }
    }

    #[test]
    fn rho_and_omega_of_flat_lagrangian() {
        let l = lag("y3^2");
        let rho = rho_form(&l);
        assert_eq!(rho.dx, e("y3^2"));
        assert_eq!(rho.theta[..3], [e("2*y5"), e("-2*y4"), e("2*y3")]);
        assert!(rho.theta[3..].iter().all(|c| c.is_zero()));
        let w = omega_form(&l).unwrap();
        assert!(w.dx_theta.iter().all(|c| c.is_zero()));
        let expect: BTreeMap<(usize, usize), Expr> =
            [((0, 5), Expr::int(-2)), ((1, 4), Expr::int(2)), ((2, 3), Expr::int(-2))].into_iter().collect();
        assert_eq!(w.theta_theta, expect);
        assert_eq!(w.to_json(), serde_json::json!({"0,5": -2, "1,4": 2, "2,3": -2}));
    }

    #[test]
    fn liouville_dx_part_is_transversality_lambda() {
        let l = lag("y3^2 + y1*y2");
        let rho = rho_form(&l);
        let mut dx = rho.dx.clone();
        for (i, b) in rho.theta.iter().enumerate() {
            dx = &dx - &(b * &Expr::y(i as u32 + 1));
        }
        let d = legendre_xi(&l);
        let mut lambda = l.density().clone();
        for (i, xi) in d.xi.iter().enumerate() {
            lambda = &lambda - &(xi * &Expr::y(i as u32 + 1));
        }
        assert!(normalize(&(&dx - &lambda)).is_zero());
    }

    #[test]
    fn omega_properties_hold() {
        for s in ["y3^2", "y3^(1/3)", "y3^2 + y0^2", "y3^2*(1 + y1^2) + x*y0*y2", "y4^2 + y1*y4^3"] {
            let r = verify_omega_properties(&lag(s), 11).unwrap();
            assert!(r.all_pass(), "{s}: {:?}", r.failures);
        }
    }

    #[test]
    fn perturbed_form_is_rejected() {
        let l = lag("y3^2");
        let mut w = omega_form(&l).unwrap();
        w.add_theta_theta(0, 1, &Expr::one());
        let r = verify_form_properties(&w, &euler_lagrange(&l).unwrap(), 11).unwrap();
        assert!(!r.closed && !r.all_pass());
        let mut w = omega_form(&l).unwrap();
        w.add_theta_theta(3, 4, &Expr::one());
        let r = verify_form_properties(&w, &euler_lagrange(&l).unwrap(), 11).unwrap();
        assert!(!r.vertical_isotropic);
        assert!(matches!(anderson_thompson_of(&w), Err(LegendreError::Support { i: 3, j: 4 })));
    }

    #[test]
    fn anderson_thompson_tables() {
        let a = anderson_thompson_coeffs(&lag("y3^2")).unwrap();
        assert_eq!(a.get(0, 5), Expr::int(-2));
        assert_eq!(a.get(1, 4), Expr::int(2));
        assert_eq!(a.get(2, 3), Expr::int(-2));
        assert_eq!(a.table.len(), 3);
        let a = anderson_thompson_coeffs(&lag("y4^2")).unwrap();
        for i in 0..4 {
            let sign = if i % 2 == 0 { 2 } else { -2 };
            assert_eq!(a.get(i, 7 - i), Expr::int(sign));
        }
        for s in ["y3^(1/3)", "y3^2*y0 + y3^4"] {
            let a = anderson_thompson_coeffs(&lag(s)).unwrap();
            assert!(!vanishes(&a.get(2, 3)).unwrap());
        }
    }

    #[test]
    fn divergence_shift_leaves_omega() {
        let l = lag("y3^2 + y0*y1");
        let g = e("x*y0*y2 + y1^3");
        let a = omega_form(&l).unwrap();
        let b = omega_form(&divergence_shift(&l, &g).unwrap()).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(vanishes(&normalize(&(&a.coeff(i, j) - &b.coeff(i, j)))).unwrap());
            }
        }
        assert!(b.dx_theta.iter().all(|c| vanishes(c).unwrap()));
    }

    #[test]
    fn pushforward_lands_on_abnormal_flow() {
        let grid = GridSpec { start: 0.0, end: 1.0, count: 6 }.points();
        let l = lag("y3^2");
        let ode = euler_lagrange(&l).unwrap();
        let traj = solve_ivp(&ode, 0.0, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6], &grid, &Tolerances::default()).unwrap();
        let r = legendre_pushforward_check(&l, &traj, 1e-10).unwrap();
        assert!(r.fiberwise && r.residual < 1e-10);
        let l = lag("y3^2*(1 + y0^2) + y1*y2^2");
        let ode = euler_lagrange(&l).unwrap();
        let traj = solve_ivp(&ode, 0.0, &[0.1, 0.2, -0.3, 0.4, 0.2, -0.1], &grid, &Tolerances::default()).unwrap();
        assert!(legendre_pushforward_check(&l, &traj, 1e-7).unwrap().residual < 1e-7);
    }

    #[test]
    fn matched_extremal_projects_to_solution() {
        let l = lag("y3^2 + y0^2");
        let ode = euler_lagrange(&l).unwrap();
        let grid = GridSpec { start: 0.0, end: 1.0, count: 6 }.points();
        let jet = [0.2, -0.1, 0.3, 0.5, 0.1, -0.4];
        let traj = solve_ivp(&ode, 0.0, &jet, &grid, &Tolerances::default()).unwrap();
        let mut p = vec![0.0];
        p.extend(jet);
        let init = legendre_xi(&l).apply(&p).unwrap();
        let ext = crate::distribution::integrate_abnormal(&l, &init, &grid, &Tolerances::default()).unwrap();
        for (a, b) in ext.states.iter().zip(&traj.samples) {
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn solution_form_is_constant_and_symplectic() {
        let grid = GridSpec { start: 0.0, end: 1.0, count: 5 }.points();
        let l = lag("y3^2");
        let init = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let sf = solution_symplectic_form(&l, 0.0, &init, &grid, &Tolerances::default(), 1e-8).unwrap();
        for (i, j, v) in [(0, 5, -2.0), (1, 4, 2.0), (2, 3, -2.0)] {
            assert_eq!(sf.matrix[(i, j)], v);
            assert_eq!(sf.matrix[(j, i)], -v);
        }
        assert!(sf.matrix.determinant().abs() > 1.0);
        // Lin^n planes transported to initial data are Lagrangian.
        let ode = euler_lagrange(&l).unwrap();
        let sys = crate::flow::FirstOrderSystem::from_ode(&ode).unwrap();
        let (_, phis) = sys.integrate_with_variations(0.0, &init, &grid, &Tolerances::default()).unwrap();
        for phi in &phis {
            let plane = phi.clone().try_inverse().unwrap().columns(3, 3).into_owned();
            assert!((plane.transpose() * &sf.matrix * &plane).norm() < 1e-8);
        }
        let l = lag("y3^2*(1 + y1^2) + y0^3");
        let sf = solution_symplectic_form(&l, 0.0, &[0.1, 0.2, -0.3, 0.4, 0.2, -0.1], &grid, &Tolerances::default(), 1e-7).unwrap();
        assert!(sf.transport_residual < 1e-7);
    }

    /// Closed 2-forms `sum A_ij theta_i ^ theta_j` over the variational
    /// support with `A_ij` affine in the chart: the solution space for the
    /// flat equation is one-dimensional.
    #[test]
    fn closed_form_is_unique_up_to_scale() {
        let l = lag("y3^2");
        let ode = euler_lagrange(&l).unwrap();
        let n = 3;
        let chart = ode.coordinates();
        let mut monomials = vec![Expr::one()];
        monomials.extend(chart.iter().map(|&v| Expr::var(v)));
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<Vec<f64>> = (0..12).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for i in 0..n {
            for j in i + 1..2 * n - i {
                for mono in &monomials {
                    let mut w = TwoForm { dx_theta: vec![Expr::zero(); 2 * n], theta_theta: BTreeMap::new() };
                    w.add_theta_theta(i, j, mono);
                    // d(omega) in coordinates, sampled.
                    let mat = w.coordinate_matrix(ode.rhs());
                    let mut col = Vec::new();
                    for a in 0..7 {
                        for b in a + 1..7 {
                            for c in b + 1..7 {
                                let e = &(&diff(&mat[b][c], chart[a]) - &diff(&mat[a][c], chart[b])) + &diff(&mat[a][b], chart[c]);
                                let ce = CompiledExpr::new(&e, &chart).unwrap();
                                for p in &points {
                                    col.push(ce.eval(p).unwrap());
                                }
                            }
                        }
                    }
                    columns.push(col);
                }
            }
        }
        let m = DMatrix::from_fn(columns[0].len(), columns.len(), |r, c| columns[c][r]);
        let s = m.svd(false, false).singular_values;
        let null = s.iter().filter(|&&v| v < 1e-9 * s.max()).count() + columns.len().saturating_sub(s.len());
        assert_eq!(null, 1);
    }
}
