//! First-order systems `s' = G(x, s)` with symbolic right-hand sides:
//! integration together with the variational equations, Taylor expansion
//! at a point, and local propagators of the linearized flow.

use nalgebra::{DMatrix, DVector};

use crate::expr::{diff, CompiledExpr, EvalError, Expr, Var};
use crate::jet::{JetError, OrdODE};
use crate::ode::{integrate, Tolerances};
use crate::series::Series;

/// Matrix-valued power series stored as a list of coefficient matrices.
pub type MatrixSeries = Vec<DMatrix<f64>>;

#[derive(Clone, Debug)]
pub struct FirstOrderSystem {
    indep: Var,
    state: Vec<Var>,
    rhs: Vec<Expr>,
    compiled: Vec<CompiledExpr>,
    jacobian: Vec<Vec<CompiledExpr>>,
}

impl FirstOrderSystem {
    pub fn new(indep: Var, state: Vec<Var>, rhs: Vec<Expr>) -> Result<Self, JetError> {
        if state.len() != rhs.len() || state.is_empty() {
            return Err(JetError::Invalid("state and right-hand side sizes differ".into()));
        }
        let mut inputs = vec![indep];
        inputs.extend(&state);
        let compiled = rhs
            .iter()
            .map(|e| CompiledExpr::new(e, &inputs))
            .collect::<Result<Vec<_>, _>>()?;
        let jacobian = rhs
            .iter()
            .map(|e| {
                state
                    .iter()
                    .map(|&v| CompiledExpr::new(&diff(e, v), &inputs))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FirstOrderSystem {
            indep,
            state,
            rhs,
            compiled,
            jacobian,
        })
    }

    /// `y_0' = y_1, ..., y_N' = F`.
    pub fn from_ode(ode: &OrdODE) -> Result<Self, JetError> {
        let top = ode.top();
        let state: Vec<Var> = (0..=top).map(Var::Y).collect();
        let mut rhs: Vec<Expr> = (1..=top).map(Expr::y).collect();
        rhs.push(ode.rhs().clone());
        Self::new(Var::X, state, rhs)
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    pub fn state_vars(&self) -> &[Var] {
        &self.state
    }

    pub fn indep(&self) -> Var {
        self.indep
    }

    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    fn inputs<T: Clone>(x: T, s: &[T]) -> Vec<T> {
        let mut v = Vec::with_capacity(s.len() + 1);
        v.push(x);
        v.extend_from_slice(s);
        v
    }

    pub fn eval(&self, x: f64, s: &[f64]) -> Result<Vec<f64>, EvalError> {
        let inp = Self::inputs(x, s);
        self.compiled.iter().map(|c| c.eval(&inp)).collect()
    }

    pub fn jacobian(&self, x: f64, s: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let inp = Self::inputs(x, s);
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (a, row) in self.jacobian.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                m[(a, b)] = c.eval(&inp)?;
            }
        }
        Ok(m)
    }

    /// States on the grid, starting from `(x0, s0)`.
    pub fn integrate(&self, x0: f64, s0: &[f64], grid: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>, JetError> {
        Ok(integrate(
            |x, s, d| match self.eval(x, s) {
                Ok(v) => {
                    d.copy_from_slice(&v);
                    true
                }
                Err(_) => false,
            },
            x0,
            s0,
            grid,
            tol,
        )?)
    }

    /// States and fundamental matrices `Phi(x)` of the variational equation
    /// (`Phi(x0) = I`) on the grid.
    pub fn integrate_with_variations(
        &self,
        x0: f64,
        s0: &[f64],
        grid: &[f64],
        tol: &Tolerances,
    ) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>), JetError> {
        let d = self.dim();
        let mut init = s0.to_vec();
        let eye = DMatrix::<f64>::identity(d, d);
        init.extend(eye.iter());
        let out = integrate(
            |x, z, dz| {
                let s = &z[..d];
                let (Ok(v), Ok(j)) = (self.eval(x, s), self.jacobian(x, s)) else {
                    return false;
                };
                dz[..d].copy_from_slice(&v);
                let phi = DMatrix::from_column_slice(d, d, &z[d..]);
                let dphi = j * phi;
                dz[d..].copy_from_slice(dphi.as_slice());
                true
            },
            x0,
            &init,
            grid,
            tol,
        )?;
        Ok(out
            .into_iter()
            .map(|z| (z[..d].to_vec(), DMatrix::from_column_slice(d, d, &z[d..])))
            .unzip())
    }

    /// Taylor series of the solution through `(x, s)`, `len` coefficients.
    pub fn taylor(&self, x: f64, s: &[f64], len: usize) -> Result<Vec<Series<f64>>, EvalError> {
        let d = self.dim();
        let mut coeffs: Vec<Vec<f64>> = s.iter().map(|&v| vec![v]).collect();
        for k in 0..len.saturating_sub(1) {
            let l = k + 1;
            let xs = Series::variable(x, l);
            let ss: Vec<Series<f64>> = coeffs.iter().map(|c| Series::new(c.clone())).collect();
            let inp = Self::inputs(xs.clone(), &ss);
            for a in 0..d {
                let g = self.compiled[a].eval_with(&inp, &xs)?;
                coeffs[a].push(g.coeff(k) / (k + 1) as f64);
            }
        }
        Ok(coeffs.into_iter().map(Series::new).collect())
    }

    /// Jacobian along a local solution series, as a matrix series.
    pub fn jacobian_series(&self, x: f64, s: &[Series<f64>]) -> Result<MatrixSeries, EvalError> {
        let len = s.iter().map(|v| v.len()).min().unwrap_or(0);
        let xs = Series::variable(x, len);
        let inp = Self::inputs(xs.clone(), s);
        let d = self.dim();
        let mut out = vec![DMatrix::zeros(d, d); len];
        for (a, row) in self.jacobian.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                let v = c.eval_with(&inp, &xs)?;
                for (k, m) in out.iter_mut().enumerate() {
                    m[(a, b)] = *v.coeff(k);
                }
            }
        }
        Ok(out)
    }
}

/// Series of `Psi(h) = Phi_loc(h)^{-1}`, where `Phi_loc' = A Phi_loc`,
/// `Phi_loc(0) = I`; equivalently `Psi' = -Psi A`.
pub fn inverse_propagator(a: &MatrixSeries) -> MatrixSeries {
    let d = a.first().map(|m| m.nrows()).unwrap_or(0);
    let mut psi: MatrixSeries = vec![DMatrix::identity(d, d)];
    for k in 0..a.len() {
        let mut acc = DMatrix::zeros(d, d);
        for j in 0..=k {
            acc += &psi[j] * &a[k - j];
        }
        psi.push(acc * (-1.0 / (k + 1) as f64));
    }
    psi
}

/// Column `j` of a matrix series as a vector of series.
pub fn column_series(m: &MatrixSeries, j: usize) -> Vec<Series<f64>> {
    let d = m.first().map(|x| x.nrows()).unwrap_or(0);
    (0..d)
        .map(|a| Series::new(m.iter().map(|c| c[(a, j)]).collect()))
        .collect()
}

/// Apply a constant matrix to a vector of series.
pub fn apply(m: &DMatrix<f64>, v: &[Series<f64>]) -> Vec<Series<f64>> {
    let len = v.iter().map(|s| s.len()).min().unwrap_or(0);
    (0..m.nrows())
        .map(|a| {
            let mut acc = Series::zeros(len);
            for (b, s) in v.iter().enumerate() {
                acc = acc.add(&s.scale(&m[(a, b)]));
            }
            acc
        })
        .collect()
}

/// Determinant of a square matrix of series by elimination, pivoting on
/// the constant terms. `None` when the constant term of the determinant
/// vanishes.
/// Covector series annihilating the `d-1` column series of `k` (a
/// `d x (d-1)` matrix of series), normalized by pairing to 1 with a
/// constant complement of the columns at `h = 0`. `None` if the columns are
/// dependent at `h = 0`.
pub fn annihilator(k: &[Vec<Series<f64>>]) -> Option<Vec<Series<f64>>> {
    let d = k.len();
    let len = k.iter().flatten().map(|s| s.len()).min()?;
    // Complement: null vector of K(0)^T, padded to a square matrix.
    let kt = DMatrix::from_fn(d, d, |r, c| if r + 1 < d { *k[c][r].coeff(0) } else { 0.0 });
    let svd = kt.svd(false, true);
    let s = &svd.singular_values;
    let (imin, _) = s.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let second = s.iter().enumerate().filter(|&(i, _)| i != imin).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    if !(second > 1e-12 * s.max()) {
        return None;
    }
    let v = svd.v_t?.row(imin).transpose();
    // alpha [K | v] = e_d^T, solved as [K | v]^T alpha^T = e_d.
    let coeffs: Vec<DMatrix<f64>> = (0..len)
        .map(|j| {
            DMatrix::from_fn(d, d, |r, c| {
                if r == d - 1 {
                    if j == 0 { v[c] } else { 0.0 }
                } else {
                    *k[c][r].coeff(j)
                }
            })
        })
        .collect();
    let rhs: Vec<DVector<f64>> = (0..len)
        .map(|j| DVector::from_fn(d, |r, _| if j == 0 && r == d - 1 { 1.0 } else { 0.0 }))
        .collect();
    let x = crate::wilczynski::solve_series_system(&coeffs, &rhs)?;
    Some((0..d).map(|r| Series::new(x.iter().map(|xj| xj[r]).collect())).collect())
}
