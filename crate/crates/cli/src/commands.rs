use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use varode::classifier::{classify, random_solutions, syzygy_check_n3, syzygy_check_n4, ClassifierInput};
use varode::distribution::{
    abnormal_extremal_ode, build_distribution, compare_projective, derived_flag, distribution_class, jacobi_curve,
    linearization_curve, verify_z_symmetry,
};
use varode::jet::{
    check_nondegenerate, euler_lagrange, linearize_along, solve_ivp, weighted_degree_check, Lagrangian, Nondegeneracy,
    OrdODE, Trajectory,
};
use varode::legendre::{anderson_thompson_coeffs, legendre_pushforward_check, legendre_xi, omega_form, verify_omega_properties};
use varode::wilczynski::{
    flatness_test, invariants_along, odd_invariants_vanish, required_jet_length, selfdual_test, WilczynskiError,
    WilczynskiValues,
};

use crate::config::{Input, RunConfig, Subcmd};
use crate::error::CliError;

/// What a command produced: the JSON report and one CSV body per solution.
#[derive(Debug, Default)]
pub struct Output {
    pub json: Value,
    pub csv: Vec<String>,
}

impl Output {
    fn json(json: Value) -> Output {
        Output { json, csv: Vec::new() }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Output, CliError> {
    match cfg.subcommand {
        Subcmd::El => cmd_el(cfg),
        Subcmd::Classify => cmd_classify(cfg),
        Subcmd::Invariants => cmd_invariants(cfg),
        Subcmd::Geometry => cmd_geometry(cfg),
        Subcmd::Syzygy => cmd_syzygy(cfg),
        Subcmd::Selfdual => cmd_selfdual(cfg),
    }
}

fn nondegenerate(l: &Lagrangian) -> Result<(), CliError> {
    match check_nondegenerate(l) {
        Nondegeneracy::Ok => Ok(()),
        other => Err(CliError::Degenerate(format!(
            "{} fails the nondegeneracy condition ({})",
            l.density(),
            serde_json::to_value(other).unwrap_or(Value::Null)
        ))),
    }
}

fn equation(cfg: &RunConfig) -> Result<OrdODE, CliError> {
    match &cfg.input {
        Input::Lagrangian(l) => {
            nondegenerate(l)?;
            Ok(euler_lagrange(l)?)
        }
        Input::Ode(e) => Ok(e.clone()),
    }
}

/// Solutions on the configured grid: the given initial jet, or seeded
/// random ones.
fn solutions(cfg: &RunConfig, ode: &OrdODE) -> Result<Vec<(Vec<f64>, Trajectory)>, CliError> {
    let grid = cfg.grid.points();
    match &cfg.init {
        Some(init) => {
            let t = solve_ivp(ode, grid[0], init, &grid, &cfg.tolerances())?;
            Ok(vec![(init.clone(), t)])
        }
        None => random_solutions(ode, cfg.solutions, &grid, cfg.seed, &cfg.tolerances()).map_err(CliError::integration),
    }
}

pub fn cmd_el(cfg: &RunConfig) -> Result<Output, CliError> {
    let l = cfg.lagrangian()?;
    nondegenerate(l)?;
    let ode = euler_lagrange(l)?;
    let n = l.order();
    Ok(Output::json(json!({
        "input": cfg.text,
        "n": n,
        "order": ode.order(),
        "rhs": ode.rhs().to_string(),
        "equation": format!("y{} = {}", ode.order(), ode.rhs()),
        "nondegeneracy": check_nondegenerate(l),
        "weighted_degree": weighted_degree_check(&ode, n),
    })))
}

pub fn cmd_classify(cfg: &RunConfig) -> Result<Output, CliError> {
    let input = match &cfg.input {
        Input::Lagrangian(l) => ClassifierInput::Lagrangian(l.clone()),
        Input::Ode(e) => ClassifierInput::Ode(e.clone()),
    };
    let report = classify(&input, &cfg.text, &cfg.classify_options())?;
    let value = serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    match &report.failure {
        Some(f) => Err(CliError::integration(f).with_partial(value)),
        None => Ok(Output::json(value)),
    }
}

fn invariants_csv(w: &WilczynskiValues) -> String {
    let mut out = String::from("x");
    for k in w.orders() {
        out.push_str(&format!(",W{k}"));
    }
    out.push('\n');
    if let WilczynskiValues::Sampled { grid, w: rows, .. } = w {
        for (x, row) in grid.iter().zip(rows) {
            out.push_str(&x.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    out
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn cmd_invariants(cfg: &RunConfig) -> Result<Output, CliError> {
    let ode = equation(cfg)?;
    let sols = solutions(cfg, &ode)?;
    let len = required_jet_length(ode.top() as usize);
    let vals = sols
        .par_iter()
        .map(|(_, t)| Ok(invariants_along(&linearize_along(&ode, t, len)?)?))
        .collect::<Result<Vec<WilczynskiValues>, CliError>>()?;
    let mut per_solution = Vec::new();
    let mut overall: BTreeMap<String, f64> = BTreeMap::new();
    for ((init, _), w) in sols.iter().zip(&vals) {
        let mut norms = Map::new();
        for k in w.orders() {
            let s = sup(&w.series_of(k).unwrap_or_default());
            norms.insert(format!("W{k}"), json!(s));
            let e = overall.entry(format!("W{k}")).or_insert(0.0);
            *e = e.max(s);
        }
        per_solution.push(json!({
            "init": init,
            "sup": norms,
            "odd_vanish": odd_invariants_vanish(w, cfg.tol),
            "flat": flatness_test(w, cfg.tol),
        }));
    }
    let json = json!({
        "input": cfg.text,
        "order": ode.order(),
        "grid": cfg.grid,
        "solutions": per_solution,
        "sup": overall,
        "odd_vanish": vals.iter().all(|w| odd_invariants_vanish(w, cfg.tol)),
        "flat": vals.iter().all(|w| flatness_test(w, cfg.tol)),
    });
    Ok(Output { json, csv: vals.iter().map(invariants_csv).collect() })
}

pub fn cmd_geometry(cfg: &RunConfig) -> Result<Output, CliError> {
    let l = cfg.lagrangian()?;
    nondegenerate(l)?;
    let n = l.order();
    let ode = euler_lagrange(l)?;
    let mut report = Map::new();
    report.insert("input".into(), json!(cfg.text));
    report.insert("n".into(), json!(n));

    let dist = build_distribution(l);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let point: Vec<f64> = dist.chart().iter().map(|_| rng.gen_range(0.5..1.5)).collect();
    let growth = derived_flag(&dist, &point, cfg.seed)?;
    report.insert("growth".into(), json!(growth.growth));
    report.insert("growth_stable".into(), json!(growth.stable));
    report.insert("growth_degenerate".into(), json!(growth.degenerate));
    report.insert("z_symmetry".into(), json!(verify_z_symmetry(&dist, cfg.seed)?));

    let omega = omega_form(l)?;
    let checks = verify_omega_properties(l, cfg.seed)?;
    report.insert("omega".into(), omega.to_json());
    report.insert("omega_checks".into(), json!(checks));
    let support = match anderson_thompson_coeffs(l) {
        Ok(at) => json!({"pass": true, "top": at.get(n as usize - 1, n as usize).to_string()}),
        Err(e) => json!({"pass": false, "error": e.to_string()}),
    };
    report.insert("anderson_thompson".into(), support);

    let along = (|| -> Result<(), CliError> {
        let (init, traj) = solutions(cfg, &ode)?.swap_remove(0);
        report.insert("solution_init".into(), json!(init));
        let push = legendre_pushforward_check(l, &traj, f64::INFINITY)?;
        report.insert("legendre_pushforward_residual".into(), json!(push.residual));
        report.insert("legendre_fiberwise".into(), json!(push.fiberwise));

        let sys = abnormal_extremal_ode(l)?;
        let x0 = traj.grid[0];
        let mut eq_point = vec![x0];
        eq_point.extend_from_slice(&init);
        let start = legendre_xi(l).apply(&eq_point)?;
        let mut base = vec![x0];
        base.extend_from_slice(&start.y);
        let class = distribution_class(&sys, &base, cfg.seed)?;
        report.insert("class".into(), json!(class.class));
        report.insert("class_dims".into(), json!(class.dims));
        report.insert("maximal_class".into(), json!(class.maximal_class));

        let ext = sys.integrate(&start, &traj.grid, &cfg.tolerances())?;
        report.insert("extremal_residuals".into(), json!(ext.residuals));
        let jc = jacobi_curve(&sys, &ext, &cfg.tolerances())?;
        let lin = linearization_curve(&ode, x0, &init, &traj.grid, &cfg.tolerances())?;
        let fit = compare_projective(&lin, &jc.curve, f64::INFINITY)?;
        report.insert("jacobi_vs_lin_residual".into(), json!(fit.residual));
        Ok(())
    })();
    let json = Value::Object(report);
    match along {
        Ok(()) => Ok(Output::json(json)),
        Err(e) => Err(e.with_partial(json)),
    }
}

pub fn cmd_syzygy(cfg: &RunConfig) -> Result<Output, CliError> {
    let l = cfg.lagrangian()?;
    nondegenerate(l)?;
    let report = match l.order() {
        3 => syzygy_check_n3(l)?,
        4 => syzygy_check_n4(l)?,
        n => return Err(CliError::Input(format!("syzygies are available for n = 3 and 4, got {n}"))),
    };
    Ok(Output::json(report.to_json()))
}

pub fn cmd_selfdual(cfg: &RunConfig) -> Result<Output, CliError> {
    let ode = equation(cfg)?;
    if ode.order() % 2 != 0 {
        return Err(CliError::Input("self-duality needs an equation of even order".into()));
    }
    let sols = solutions(cfg, &ode)?;
    let x0 = cfg.grid.start;
    let grid = cfg.grid.points();
    let results = sols
        .par_iter()
        .map(|(init, _)| {
            let curve = linearization_curve(&ode, x0, init, &grid, &cfg.tolerances())?;
            match selfdual_test(&curve, cfg.tol) {
                Ok(form) => Ok(json!({"init": init, "form": form})),
                Err(e @ WilczynskiError::Ambiguous { .. }) => {
                    Ok(json!({"init": init, "form": null, "ambiguous": e.to_string()}))
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<Value>, CliError>>()?;
    let all = results.iter().all(|r| !r["form"].is_null());
    Ok(Output::json(json!({
        "input": cfg.text,
        "order": ode.order(),
        "solutions": results,
        "selfdual": all,
    })))
}
