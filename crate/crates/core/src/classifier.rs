//! Flatness decisions: whether an Euler-Lagrange equation (or an even-order
//! equation) is equivalent to `y_{2n} = 0`, with the evidence behind the
//! verdict.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{diff, is_zero, normalize, CompiledExpr, EvalError, Expr, ExprError, Var, ZeroVerdict};
use crate::jet::{check_nondegenerate, euler_lagrange, linearize_along, solve_ivp, GridSpec, JetError, Lagrangian, Nondegeneracy, OrdODE, Trajectory};
use crate::ode::Tolerances;
use crate::wilczynski::{
    generalized_wilczynski_order6, generalized_wilczynski_order8, invariants_along, required_jet_length,
    symbolic_generalized_invariants, vanishing_threshold, WilczynskiError, WilczynskiValues,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Wilczynski(#[from] WilczynskiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("operation requires {0}")]
    Precondition(String),
    #[error("closed form and direct partial disagree: {0}")]
    CrossCheck(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MaximallySymmetric,
    NotMaximallySymmetric,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Zero,
    Nonzero,
    ProbablyZero,
}

impl From<ZeroVerdict> for Status {
    fn from(v: ZeroVerdict) -> Self {
        match v {
            ZeroVerdict::Zero => Status::Zero,
            ZeroVerdict::ProbablyZero => Status::ProbablyZero,
            ZeroVerdict::Nonzero => Status::Nonzero,
        }
    }
}

/// How an evidence item enters the verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Decides the verdict.
    Classification,
    /// Consistency check of the pipeline; reported, never decisive.
    SelfTest,
    /// Informative only.
    Supporting,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub point: BTreeMap<String, f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub name: String,
    pub status: Status,
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryDims {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equation: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<u32>,
    pub upper_bound: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Lagrangian,
    Ode,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub input: String,
    pub kind: InputKind,
    pub n: u32,
    pub verdict: Verdict,
    pub evidence: Vec<Evidence>,
    pub expected_symmetry_dims: SymmetryDims,
    pub notes: Vec<String>,
    /// Operational failure that cut the pipeline short.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ClassificationReport {
    pub fn evidence(&self, name: &str) -> Option<&Evidence> {
        self.evidence.iter().find(|e| e.name == name)
    }
}

#[derive(Clone, Debug)]
pub enum ClassifierInput {
    Lagrangian(Lagrangian),
    Ode(OrdODE),
}

#[derive(Clone, Debug)]
pub struct ClassifyOptions {
    pub seed: u64,
    pub solutions: usize,
    pub grid: GridSpec,
    /// Numeric vanishing tolerance for sampled invariants.
    pub tol: f64,
    pub tolerances: Tolerances,
    /// Term budget for exact invariants; above it the pipeline samples.
    pub symbolic_budget: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            seed: 0,
            solutions: 3,
            grid: GridSpec::default(),
            tol: 1e-6,
            tolerances: Tolerances::default(),
            symbolic_budget: 300,
        }
    }
}

fn f_derivative(l: &Lagrangian, times: usize) -> Expr {
    let top = Var::Y(l.order());
    (0..times).fold(l.density().clone(), |acc, _| diff(&acc, top))
}

/// `I = -3 f_333/f_33` (n = 3) or `-6 f_444/f_44` (n = 4), cross-checked
/// against the matching second partial of the Euler-Lagrange right-hand
/// side.
pub fn i_invariant(l: &Lagrangian) -> Result<Expr, ClassifierError> {
    let n = l.order();
    let (factor, a, b) = match n {
        3 => (-3, 4, 5),
        4 => (-6, 6, 6),
        _ => return Err(ClassifierError::Precondition("n = 3 or n = 4".into())),
    };
    let f2 = f_derivative(l, 2);
    if f2.is_zero() {
        return Err(ClassifierError::Degenerate("f is linear in the top derivative".into()));
    }
    let i = normalize(&(&Expr::int(factor) * &f_derivative(l, 3)).try_div(&f2)?);
    let ode = euler_lagrange(l)?;
    let direct = diff(&diff(ode.rhs(), Var::Y(a)), Var::Y(b));
    if is_zero(&normalize(&(&direct - &i)), 1e-9)? == ZeroVerdict::Nonzero {
        return Err(ClassifierError::CrossCheck(format!("I = {i}, F_({a},{b}) = {direct}")));
    }
    Ok(i)
}

/// Second partials of `F` that must vanish on a flat variational equation.
pub fn extra_condition_terms(e: &OrdODE, n: u32) -> Result<Vec<(String, Expr)>, ClassifierError> {
    if e.order() != 2 * n {
        return Err(ClassifierError::Precondition(format!("an equation of order {}", 2 * n)));
    }
    let pairs: &[(u32, u32)] = match n {
        3 => &[(5, 5), (4, 5)],
        _ if n >= 4 => &[(2 * n - 1, 2 * n - 1), (2 * n - 1, 2 * n - 2), (2 * n - 2, 2 * n - 2)],
        _ => &[],
    };
    Ok(pairs
        .iter()
        .map(|&(a, b)| (format!("F{a}{b}"), normalize(&diff(&diff(e.rhs(), Var::Y(a)), Var::Y(b)))))
        .collect())
}

/// The extra conditions; for `n >= 5` they follow from the weighted-degree
/// bound on variational equations and hold unconditionally.
pub fn extra_conditions(e: &OrdODE, n: u32) -> Result<bool, ClassifierError> {
    if n >= 5 {
        extra_condition_terms(e, n)?;
        return Ok(true);
    }
    for (_, t) in extra_condition_terms(e, n)? {
        if is_zero(&t, 1e-9)? == ZeroVerdict::Nonzero {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Closed forms of selected partials of the first generalized invariant,
/// in terms of the top-derivative partials of `f`.
pub fn closed_form_partials(l: &Lagrangian) -> Result<Vec<(String, Expr)>, ClassifierError> {
    let n = l.order();
    let d = |k: usize| f_derivative(l, k);
    let r = |a: i64, b: i64| Expr::rational(a, b);
    let div = |num: Expr, den: Expr| -> Result<Expr, ClassifierError> { Ok(normalize(&num.try_div(&den)?)) };
    match n {
        3 => {
            let (f2, f3, f4, f5) = (d(2), d(3), d(4), d(5));
            let w55 = div(&r(1, 35) * &(&(&r(57, 1) * &f3.sqr()) - &(&r(35, 1) * &(&f2 * &f4))), f2.sqr())?;
            let cubic = |a: i64, b: i64, c: i64| {
                let t1 = &r(a, 1) * &(&f2.sqr() * &f5);
                let t2 = &r(b, 1) * &(&(&f2 * &f3) * &f4);
                let t3 = &r(c, 1) * &(&f3.sqr() * &f3);
                &(&t1 + &t2) + &t3
            };
            let f2c = &f2.sqr() * &f2;
            let w355 = div(&r(-1, 35) * &cubic(35, -149, 114), f2c.clone())?;
            let w445 = div(&r(-2, 35) * &cubic(35, -162, 135), f2c)?;
            Ok(vec![("W55".into(), w55), ("W355".into(), w355), ("W445".into(), w445)])
        }
        4 => {
            let (f2, f3, f4) = (d(2), d(3), d(4));
            let w75 = div(&r(-7, 66) * &(&(&r(8, 1) * &(&f2 * &f4)) - &(&r(13, 1) * &f3.sqr())), f2.sqr())?;
            let w66 = div(&r(-1, 198) * &(&(&r(252, 1) * &(&f2 * &f4)) - &(&r(437, 1) * &f3.sqr())), f2.sqr())?;
            Ok(vec![("W75".into(), w75), ("W66".into(), w66)])
        }
        _ => Err(ClassifierError::Precondition("n = 3 or n = 4".into())),
    }
}

/// One closed form compared with the partial computed from the pipeline.
#[derive(Clone, Debug)]
pub struct ClosedFormCheck {
    pub name: String,
    pub pipeline: Expr,
    pub closed_form: Expr,
    pub difference: Expr,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct SyzygyReport {
    pub n: u32,
    pub residual: Expr,
    pub status: Status,
    pub closed_forms: Vec<ClosedFormCheck>,
    pub notes: Vec<String>,
}

impl SyzygyReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "residual": self.residual.to_string(),
            "status": self.status,
            "closed_forms": self.closed_forms.iter().map(|c| serde_json::json!({
                "name": c.name,
                "pipeline": c.pipeline.to_string(),
                "closed_form": c.closed_form.to_string(),
                "status": c.status,
            })).collect::<Vec<_>>(),
            "notes": self.notes,
        })
    }
}

fn partial_by(e: &Expr, vars: &[u32]) -> Expr {
    normalize(&vars.iter().fold(e.clone(), |acc, &i| diff(&acc, Var::Y(i))))
}

fn syzygy_check(l: &Lagrangian, n: u32) -> Result<SyzygyReport, ClassifierError> {
    if l.order() != n {
        return Err(ClassifierError::Precondition(format!("a Lagrangian of order {n}")));
    }
    let ode = euler_lagrange(l)?;
    let i = i_invariant(l)?;
    let closed = closed_form_partials(l)?;
    let (w, partials): (Expr, Vec<Vec<u32>>) = if n == 3 {
        (generalized_wilczynski_order6(&ode)?, vec![vec![5, 5], vec![3, 5, 5], vec![4, 4, 5]])
    } else {
        (generalized_wilczynski_order8(&ode)?, vec![vec![7, 5], vec![6, 6]])
    };
    let mut checks = Vec::new();
    let mut pipeline = Vec::new();
    for ((name, cf), vars) in closed.into_iter().zip(&partials) {
        let p = partial_by(&w, vars);
        let difference = normalize(&(&p - &cf));
        let status = is_zero(&difference, 1e-9)?.into();
        pipeline.push(p.clone());
        checks.push(ClosedFormCheck {
            name,
            pipeline: p,
            closed_form: cf,
            difference,
            status,
        });
    }
    let residual = if n == 3 {
        let t = [
            &Expr::int(210) * &pipeline[1],
            &Expr::int(-105) * &pipeline[2],
            &(&Expr::int(26) * &i) * &pipeline[0],
            &Expr::rational(-4, 105) * &(&i.sqr() * &i),
        ];
        t.iter().fold(Expr::zero(), |a, b| &a + b)
    } else {
        let t = [
            &Expr::int(3) * &pipeline[0],
            &Expr::int(-2) * &pipeline[1],
            &Expr::rational(5, 648) * &i.sqr(),
        ];
        t.iter().fold(Expr::zero(), |a, b| &a + b)
    };
    let residual = normalize(&residual);
    let status = is_zero(&residual, 1e-9)?.into();
    let mut notes = vec![format!(
        "subscripts on W denote partial derivatives by the jet coordinates y_k; W is the closed-form first generalized invariant of the order-{} equation",
        2 * n
    )];
    if l.density().vars().iter().any(|&v| v != Var::Y(n)) {
        notes.push(format!("the closed forms are stated for densities depending on y{n} only"));
    }
    Ok(SyzygyReport {
        n,
        residual,
        status,
        closed_forms: checks,
        notes,
    })
}

/// `210 W_355 - 105 W_445 + 26 I W_55 - (4/105) I^3` for an `n = 3`
/// Lagrangian, with the closed forms of the three partials checked against
/// the pipeline.
pub fn syzygy_check_n3(l: &Lagrangian) -> Result<SyzygyReport, ClassifierError> {
    syzygy_check(l, 3)
}

/// `3 W_75 - 2 W_66 + (5/648) I^2` for an `n = 4` Lagrangian.
pub fn syzygy_check_n4(l: &Lagrangian) -> Result<SyzygyReport, ClassifierError> {
    syzygy_check(l, 4)
}

/// Largest `|e|` over random points of the positive unit box around 1.
pub fn numeric_residual(e: &Expr, points: usize, seed: u64) -> Result<f64, ClassifierError> {
    let vars: Vec<Var> = e.vars().into_iter().collect();
    let c = CompiledExpr::new(e, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let p: Vec<f64> = vars.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        worst = worst.max(c.eval(&p)?.abs());
    }
    Ok(worst)
}

fn exact_status(e: &Expr, seed: u64) -> Result<(Status, Option<Witness>), ClassifierError> {
    let status: Status = is_zero(e, 1e-9)?.into();
    if status != Status::Nonzero {
        return Ok((status, None));
    }
    let vars: Vec<Var> = e.vars().into_iter().collect();
    let c = CompiledExpr::new(e, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let p: Vec<f64> = vars.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        if let Ok(v) = c.eval(&p) {
            if v.is_finite() && v != 0.0 {
                let point = vars.iter().zip(&p).map(|(v, x)| (v.name(), *x)).collect();
                return Ok((status, Some(Witness { point, value: v })));
            }
        }
    }
    Ok((status, None))
}

/// `count` solutions from random initial jets in `[-1, 1]`, skipping
/// starts where the equation is singular or the integration fails.
pub fn random_solutions(
    ode: &OrdODE,
    count: usize,
    grid: &[f64],
    seed: u64,
    tol: &Tolerances,
) -> Result<Vec<(Vec<f64>, Trajectory)>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut last = String::from("no attempts");
    for _ in 0..count * 25 {
        if out.len() == count {
            break;
        }
        let init: Vec<f64> = (0..ode.order()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match solve_ivp(ode, grid[0], &init, grid, tol) {
            Ok(t) => out.push((init, t)),
            Err(e) => last = e.to_string(),
        }
    }
    if out.len() < count {
        return Err(format!("only {} of {count} random solutions could be integrated: {last}", out.len()));
    }
    Ok(out)
}

fn numeric_evidence(vals: &[WilczynskiValues], k: usize, tol: f64, role: Role) -> Evidence {
    let mut witness: Option<Witness> = None;
    for (s, w) in vals.iter().enumerate() {
        let WilczynskiValues::Sampled { grid, w: rows, coeff_scale, .. } = w else {
            continue;
        };
        let threshold = vanishing_threshold(k, *coeff_scale, grid, tol);
        for (x, row) in grid.iter().zip(rows) {
            let v = row[k - 3];
            if !(v.abs() < threshold) && witness.as_ref().map_or(true, |w| v.abs() > w.value.abs()) {
                let point = [("x".to_string(), *x), ("solution".to_string(), s as f64)].into_iter().collect();
                witness = Some(Witness { point, value: v });
            }
        }
    }
    Evidence {
        name: format!("W{k} along solutions"),
        status: if witness.is_some() { Status::Nonzero } else { Status::ProbablyZero },
        role,
        witness,
        expression: None,
    }
}

fn symmetry_dims(input: &ClassifierInput, n: u32) -> SymmetryDims {
    let mut dims = SymmetryDims {
        equation: None,
        lagrangian: None,
        upper_bound: 2 * n + 5,
        matched: None,
    };
    let ClassifierInput::Lagrangian(l) = input else {
        if let ClassifierInput::Ode(e) = input {
            if e.rhs().is_zero() {
                dims.equation = Some(2 * n + 4);
                dims.matched = Some(format!("y{} = 0", 2 * n));
            }
        }
        return dims;
    };
    let f = l.density();
    let quad_row = f.coefficients_in(Var::Y(n)).and_then(|c| {
        let lead = c.get(&2)?.as_constant()?;
        if c.keys().any(|&d| d != 0 && d != 2) {
            return None;
        }
        let rest = c.get(&0).cloned().unwrap_or_else(Expr::zero);
        let lower_ok = rest.terms().all(|(m, _)| {
            let e = Expr::unit_monomial(m);
            (0..n).any(|i| e == Expr::y(i).sqr())
        });
        lower_ok.then_some((lead, rest.is_zero()))
    });
    if let Some((_, flat)) = quad_row {
        if flat {
            dims.equation = Some(2 * n + 4);
            dims.matched = Some(format!("y{n}^2"));
        } else {
            dims.equation = Some(2 * n + 2);
            dims.matched = Some(format!("y{n}^2 + sum c_i y_i^2"));
        }
    } else if n == 3 {
        let root = Expr::y(3).pow(crate::expr::Exp::new(1, 3));
        if let Ok(root) = root {
            if f.num_terms() == 1 && f.terms().all(|(m, _)| Expr::unit_monomial(m) == root) {
                dims.equation = Some(7);
                dims.matched = Some("y3^(1/3)".into());
            }
        }
    }
    dims.lagrangian = dims.equation.map(|d| d + 1);
    dims
}

/// Decide whether the input is equivalent to the flat model.
pub fn classify(input: &ClassifierInput, text: &str, opts: &ClassifyOptions) -> Result<ClassificationReport, ClassifierError> {
    let (ode, n, kind) = match input {
        ClassifierInput::Lagrangian(l) => {
            match check_nondegenerate(l) {
                Nondegeneracy::Ok => {}
                other => return Err(ClassifierError::Degenerate(format!("{other:?}"))),
            }
            (euler_lagrange(l)?, l.order(), InputKind::Lagrangian)
        }
        ClassifierInput::Ode(e) => {
            if e.order() % 2 != 0 || e.order() < 4 {
                return Err(ClassifierError::Precondition("an equation of even order at least 4".into()));
            }
            (e.clone(), e.order() / 2, InputKind::Ode)
        }
    };
    let mut notes = Vec::new();
    let mut evidence = Vec::new();
    let seed = opts.seed;

    let exact = symbolic_generalized_invariants(&ode, opts.symbolic_budget);
    let closed = match ode.order() {
        6 => Some(generalized_wilczynski_order6(&ode)?),
        8 => Some(generalized_wilczynski_order8(&ode)?),
        _ => None,
    };
    if let Some(w) = &closed {
        let (status, witness) = exact_status(w, seed)?;
        let role = if exact.is_some() { Role::SelfTest } else { Role::Classification };
        evidence.push(Evidence {
            name: "W4 (closed form)".into(),
            status,
            role,
            witness,
            expression: Some(w.to_string()),
        });
    }
    if let Some(ws) = &exact {
        for (idx, w) in ws.iter().enumerate() {
            let k = idx + 3;
            let (status, witness) = exact_status(w, seed)?;
            evidence.push(Evidence {
                name: format!("W{k}"),
                status,
                role: if k % 2 == 0 { Role::Classification } else { Role::SelfTest },
                witness,
                expression: Some(w.to_string()),
            });
        }
    }
    match input {
        ClassifierInput::Lagrangian(l) if n == 3 || n == 4 => {
            let i = i_invariant(l)?;
            let (status, witness) = exact_status(&i, seed)?;
            let only_top = l.density().vars().iter().all(|&v| v == Var::Y(n));
            evidence.push(Evidence {
                name: "I".into(),
                status,
                role: if only_top { Role::Classification } else { Role::Supporting },
                witness,
                expression: Some(i.to_string()),
            });
        }
        ClassifierInput::Ode(e) if n == 3 || n == 4 => {
            for (name, t) in extra_condition_terms(e, n)? {
                let (status, witness) = exact_status(&t, seed)?;
                evidence.push(Evidence {
                    name,
                    status,
                    role: Role::Supporting,
                    witness,
                    expression: Some(t.to_string()),
                });
            }
        }
        _ => {}
    }

    let grid = opts.grid.points();
    let mut failure = None;
    match random_solutions(&ode, opts.solutions.max(1), &grid, seed, &opts.tolerances) {
        Ok(sols) => {
            let len = required_jet_length(ode.top() as usize);
            let vals: Result<Vec<WilczynskiValues>, ClassifierError> = sols
                .par_iter()
                .map(|(_, t)| Ok(invariants_along(&linearize_along(&ode, t, len)?)?))
                .collect();
            match vals {
                Ok(vals) => {
                    for k in 3..=2 * n as usize {
                        let decided = exact.is_some() || (k == 4 && closed.is_some());
                        let role = if k % 2 == 1 || decided { Role::SelfTest } else { Role::Classification };
                        evidence.push(numeric_evidence(&vals, k, opts.tol, role));
                    }
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        Err(e) => failure = Some(e),
    }
    if let Some(f) = &failure {
        notes.push(format!("numeric invariants unavailable: {f}"));
    }
    for e in &evidence {
        if e.role == Role::SelfTest && e.status == Status::Nonzero {
            notes.push(format!("self-test {} did not vanish", e.name));
        }
    }

    let decisive: Vec<&Evidence> = evidence.iter().filter(|e| e.role == Role::Classification).collect();
    let mut verdict = if decisive.iter().any(|e| e.status == Status::Nonzero) {
        Verdict::NotMaximallySymmetric
    } else if !decisive.is_empty() && failure.is_none() && decisive.iter().all(|e| e.status == Status::Zero) {
        Verdict::MaximallySymmetric
    } else {
        Verdict::Inconclusive
    };
    if verdict == Verdict::Inconclusive && decisive.iter().all(|e| e.status != Status::Nonzero) && failure.is_none() {
        notes.push("invariants vanish numerically only; flatness is not certified".into());
    }
    if n == 2 && verdict != Verdict::NotMaximallySymmetric {
        verdict = Verdict::Inconclusive;
        notes.push(
            "n = 2: vanishing invariants do not imply equivalence to the flat model at this order".into(),
        );
    }
    if verdict == Verdict::MaximallySymmetric {
        notes.push(format!("equivalent to y{}^2 dx and y{} = 0", n, 2 * n));
    }
    let mut dims = symmetry_dims(input, n);
    if verdict == Verdict::MaximallySymmetric && dims.equation.is_none() {
        dims.equation = Some(2 * n + 4);
        dims.lagrangian = Some(2 * n + 5);
    }
    Ok(ClassificationReport {
        input: text.to_string(),
        kind,
        n,
        verdict,
        evidence,
        expected_symmetry_dims: dims,
        notes,
        failure,
    })
}

/// The second-order Lagrangian `(y'')^(1/3)`: trivial invariants, yet
/// the Lagrangian is not equivalent to `(y'')^2`.
pub fn n2_caveat_demo(opts: &ClassifyOptions) -> Result<(OrdODE, ClassificationReport), ClassifierError> {
    let text = "y2^(1/3)";
    let l = Lagrangian::parse(text, Some(2))?;
    let ode = euler_lagrange(&l)?;
    let report = classify(&ClassifierInput::Lagrangian(l), text, opts)?;
    Ok((ode, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::jet::divergence_shift;

    fn lag(s: &str) -> Lagrangian {
        Lagrangian::parse(s, None).unwrap()
    }

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn quick() -> ClassifyOptions {
        ClassifyOptions {
            grid: GridSpec { start: 0.0, end: 1.0, count: 16 },
            ..ClassifyOptions::default()
        }
    }

    #[test]
    fn i_invariant_examples() {
        assert!(i_invariant(&lag("y3^2")).unwrap().is_zero());
        assert_eq!(i_invariant(&lag("y3^(1/3)")).unwrap(), e("5/y3"));
        assert_eq!(i_invariant(&lag("y4^3")).unwrap(), e("-6/y4"));
        assert!(matches!(i_invariant(&lag("y2^3")), Err(ClassifierError::Precondition(_))));
    }

    #[test]
    fn extra_condition_examples() {
        assert!(extra_conditions(&OrdODE::parse("0", 6).unwrap(), 3).unwrap());
        let el = euler_lagrange(&lag("y3^(1/3)")).unwrap();
        assert!(!extra_conditions(&el, 3).unwrap());
        let el = euler_lagrange(&lag("y5^2 + y5^3*y1")).unwrap();
        assert!(extra_conditions(&el, 5).unwrap());
    }

    #[test]
    fn syzygies_hold() {
        let r = syzygy_check_n3(&lag("y3^2")).unwrap();
        assert!(r.residual.is_zero());
        let r = syzygy_check_n3(&lag("y3^4")).unwrap();
        assert_eq!(r.closed_forms[0].closed_form, e("158/35*y3^(-2)"));
        assert!(r.closed_forms.iter().all(|c| c.status == Status::Zero));
        assert_eq!(r.status, Status::Zero);
        let r = syzygy_check_n4(&lag("y4^3")).unwrap();
        assert!(r.closed_forms.iter().all(|c| c.status == Status::Zero));
        assert_eq!(r.status, Status::Zero);
        let r = syzygy_check_n3(&lag("2*y3^4 - y3^3 + 3*y3^2")).unwrap();
        assert_eq!(r.status, Status::Zero);
    }

    #[test]
    fn flat_lagrangian_is_maximally_symmetric() {
        let r = classify(&ClassifierInput::Lagrangian(lag("y3^2")), "y3^2", &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::MaximallySymmetric);
        assert_eq!(r.expected_symmetry_dims.equation, Some(10));
        assert_eq!(r.expected_symmetry_dims.lagrangian, Some(11));
        assert_eq!(r.expected_symmetry_dims.upper_bound, 11);
    }

    #[test]
    fn separations() {
        let r = classify(&ClassifierInput::Lagrangian(lag("y3^(1/3)")), "y3^(1/3)", &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::NotMaximallySymmetric);
        assert_eq!(r.evidence("I").unwrap().expression.as_deref(), Some("5/y3"));
        assert_eq!(r.expected_symmetry_dims.equation, Some(7));
        let r = classify(&ClassifierInput::Lagrangian(lag("y3^2 + y0^2")), "y3^2 + y0^2", &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::NotMaximallySymmetric);
        assert_eq!(r.expected_symmetry_dims.equation, Some(8));
        let w6 = r.evidence("W6 along solutions").unwrap();
        assert!(w6.witness.as_ref().unwrap().value.abs() > 1e3);
        for k in [3, 5] {
            assert_ne!(r.evidence(&format!("W{k} along solutions")).unwrap().status, Status::Nonzero);
        }
    }

    #[test]
    fn closed_form_and_numeric_w4_agree() {
        for s in ["y3^2", "y3^(1/3)", "y3^2 + y0^2", "y3^4 + y3^2", "y3^2*(1 + y1^2)"] {
            let r = classify(&ClassifierInput::Lagrangian(lag(s)), s, &quick()).unwrap();
            let sym = r.evidence("W4 (closed form)").unwrap().status == Status::Zero;
            let num = r.evidence("W4 along solutions").unwrap().status != Status::Nonzero;
            assert_eq!(sym, num, "{s}");
        }
    }

    #[test]
    fn verdict_survives_equivalence_moves() {
        let moves = |f: &str| -> Vec<Expr> {
            let l = lag(f);
            let mut out = vec![&Expr::rational(-7, 3) * l.density()];
            out.push(divergence_shift(&l, &e("x*y0*y1 + y2^2")).unwrap().density().clone());
            let sub: BTreeMap<Var, Expr> = [(Var::X, e("x + 2"))].into_iter().collect();
            out.push(l.density().substitute_many(&sub).unwrap());
            let sub: BTreeMap<Var, Expr> = [(Var::Y(0), e("y0 - 1/2"))].into_iter().collect();
            out.push(l.density().substitute_many(&sub).unwrap());
            let sub: BTreeMap<Var, Expr> = (0..=3).map(|i| (Var::Y(i), &Expr::int(3) * &Expr::y(i))).collect();
            out.push(l.density().substitute_many(&sub).unwrap());
            out
        };
        for f in ["y3^2", "y3^2 + y0^2"] {
            let base = classify(&ClassifierInput::Lagrangian(lag(f)), f, &quick()).unwrap().verdict;
            for g in moves(f) {
                let l = Lagrangian::new(g.clone(), 3).unwrap();
                let v = classify(&ClassifierInput::Lagrangian(l), &g.to_string(), &quick()).unwrap().verdict;
                assert_eq!(v, base, "{g}");
            }
        }
    }

    #[test]
    fn order_two_caveat() {
        let (ode, r) = n2_caveat_demo(&quick()).unwrap();
        assert_eq!(ode.rhs(), &e("5/3*y3^2/y2"));
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.notes.iter().any(|n| n.contains("n = 2")));
        for k in [3, 4] {
            assert_ne!(r.evidence(&format!("W{k} along solutions")).unwrap().status, Status::Nonzero);
        }
    }

    #[test]
    fn report_json_shape() {
        let r = classify(&ClassifierInput::Lagrangian(lag("y3^2")), "y3^2", &quick()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kind"], "lagrangian");
        assert_eq!(v["verdict"], "maximally_symmetric");
        assert!(v["evidence"][0]["status"].is_string());
        assert_eq!(v["expected_symmetry_dims"]["equation"], 10);
    }
}
