//! Acceptance suite: ten end-to-end checks, one line of output each.
//!
//! Runs without the libtest harness so the summary is always printed.
//! A check listed in `KNOWN_RED` is reported as FAIL without failing the
//! run, provided the values it computes are the expected mathematical ones.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varode::classifier::{
    classify, n2_caveat_demo, numeric_residual, random_solutions, syzygy_check_n3, syzygy_check_n4, ClassifierInput,
    ClassifyOptions, Status, SyzygyReport, Verdict,
};
use varode::distribution::{
    abnormal_extremal_ode, build_distribution, compare_projective, derived_flag, distribution_class, jacobi_curve,
    linearization_curve,
};
use varode::expr::{is_zero, normalize, parse_expr, Expr, Var, ZeroVerdict};
use varode::jet::{
    check_nondegenerate, divergence_shift, euler_lagrange, euler_lagrange_expression, linearize_along, GridSpec,
    Lagrangian, Nondegeneracy, OrdODE,
};
use varode::legendre::{anderson_thompson_coeffs, legendre_pushforward_check, legendre_xi, omega_form, verify_omega_properties};
use varode::ode::Tolerances;
use varode::wilczynski::{invariants_along, required_jet_length, selfdual_test};

type Check = Result<String, String>;

const KNOWN_RED: &[usize] = &[6];

fn lag(s: &str) -> Lagrangian {
    Lagrangian::parse(s, None).unwrap()
}

fn e(s: &str) -> Expr {
    parse_expr(s).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

/// Order-3 density with `f_33 > 0` everywhere: `a y3^2 + b y3^4` plus three
/// random lower-order terms.
fn random_lagrangian(rng: &mut ChaCha8Rng) -> Lagrangian {
    const POOL: [&str; 10] = ["y0^2", "y1^2", "y2^2", "y0*y2", "y1*y2", "y0^3", "y1^3", "y0*y1*y2", "x*y1^2", "y1*y3"];
    let a = rng.gen_range(1..=3);
    let b = rng.gen_range(0..=2);
    let mut text = format!("{a}*y3^2 + {b}*y3^4");
    let mut picked = Vec::new();
    while picked.len() < 3 {
        let i = rng.gen_range(0..POOL.len());
        if !picked.contains(&i) {
            picked.push(i);
            let c = [-3, -2, -1, 1, 2, 3][rng.gen_range(0..6)];
            text.push_str(&format!(" + ({c})*{}", POOL[i]));
        }
    }
    let l = Lagrangian::new(e(&text), 3).unwrap();
    assert_eq!(check_nondegenerate(&l), Nondegeneracy::Ok, "{text}");
    l
}

/// Integer polynomial in `y_n` of degree at most 4 with `f_nn` not
/// identically zero.
fn random_top_polynomial(rng: &mut ChaCha8Rng, n: u32) -> Lagrangian {
    loop {
        let coeffs: Vec<i64> = (0..=4).map(|_| rng.gen_range(-4..=4)).collect();
        if coeffs[2..].iter().all(|&c| c == 0) {
            continue;
        }
        let text = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| format!("({c})*y{n}^{k}"))
            .collect::<Vec<_>>()
            .join(" + ");
        return Lagrangian::new(e(&text), n).unwrap();
    }
}

fn syzygy_holds(r: &SyzygyReport, seed: u64) -> Result<(), String> {
    let settle = |status: Status, expr: &Expr, what: &str| -> Result<(), String> {
        match status {
            Status::Zero => Ok(()),
            Status::ProbablyZero => {
                let res = numeric_residual(expr, 20, seed).map_err(|e| e.to_string())?;
                ensure(res < 1e-9, || format!("{what}: numeric residual {res:e}"))
            }
            Status::Nonzero => Err(format!("{what} does not vanish: {expr}")),
        }
    };
    for c in &r.closed_forms {
        settle(c.status, &c.difference, &c.name)?;
    }
    settle(r.status, &r.residual, "syzygy")
}

fn el_exactness() -> Check {
    let start = Instant::now();
    let ode = euler_lagrange(&lag("y3^(1/3)")).map_err(|e| e.to_string())?;
    let cleared = normalize(&(&e("9*y3^2") * &(&Expr::y(6) - ode.rhs())));
    ensure(cleared == e("9*y3^2*y6 - 45*y3*y4*y5 + 40*y4^3"), || format!("cleared equation {cleared}"))?;
    for n in 3..=5 {
        let ode = euler_lagrange(&lag(&format!("y{n}^2"))).map_err(|e| e.to_string())?;
        ensure(ode.order() == 2 * n && ode.rhs().is_zero(), || format!("y{n}^2 gives y{} = {}", ode.order(), ode.rhs()))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("9y3^2y6 - 45y3y4y5 + 40y4^3 and y_2n = 0 (n = 3, 4, 5) in {:.2?}", start.elapsed()))
}

fn syzygy_protocol(n: u32, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![lag(&format!("y{n}^4"))];
    cases.extend((0..5).map(|_| random_top_polynomial(&mut rng, n)));
    for l in &cases {
        let r = if n == 3 { syzygy_check_n3(l) } else { syzygy_check_n4(l) }.map_err(|e| e.to_string())?;
        syzygy_holds(&r, seed).map_err(|m| format!("{}: {m}", l.density()))?;
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("{} densities, closed forms and syzygy exact, {:.1?}", cases.len(), start.elapsed()))
}

fn classification_separations() -> Check {
    let start = Instant::now();
    let opts = ClassifyOptions::default();
    let run = |f: &str| classify(&ClassifierInput::Lagrangian(lag(f)), f, &opts).map_err(|e| e.to_string());
    let flat = run("y3^2")?;
    ensure(flat.verdict == Verdict::MaximallySymmetric, || format!("y3^2: {:?}", flat.verdict))?;
    let root = run("y3^(1/3)")?;
    ensure(root.verdict == Verdict::NotMaximallySymmetric, || format!("y3^(1/3): {:?}", root.verdict))?;
    let i = root.evidence("I").ok_or("no I evidence")?;
    ensure(i.status == Status::Nonzero && i.expression.as_deref() == Some("5/y3"), || format!("I = {:?}", i.expression))?;
    let curved = run("y3^2 + y0^2")?;
    ensure(curved.verdict == Verdict::NotMaximallySymmetric, || format!("y3^2 + y0^2: {:?}", curved.verdict))?;

    // Direct sampled values along solutions of the curved equation.
    let ode = euler_lagrange(&lag("y3^2 + y0^2")).unwrap();
    let grid = opts.grid.points();
    let sols = random_solutions(&ode, 3, &grid, 1, &Tolerances::default())?;
    let len = required_jet_length(6);
    let (mut odd, mut w6) = (0.0f64, f64::INFINITY);
    for (_, t) in &sols {
        let w = invariants_along(&linearize_along(&ode, t, len).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for k in [3, 5] {
            odd = odd.max(w.series_of(k).unwrap().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        w6 = w6.min(w.series_of(6).unwrap().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
    }
    ensure(odd < 1e-6, || format!("odd invariants reach {odd:e}"))?;
    ensure(w6 > 1e3, || format!("min |W6| = {w6}"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("flat / I = 5/y3 / |W6| >= {w6:.0}, odd <= {odd:.1e}, {:.1?}", start.elapsed()))
}

fn self_duality(seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::default().points();
    let tol = Tolerances::default();
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let l = random_lagrangian(&mut rng);
        let ode = euler_lagrange(&l).map_err(|e| e.to_string())?;
        for (init, _) in random_solutions(&ode, 3, &grid, rng.gen(), &tol)? {
            let curve = linearization_curve(&ode, grid[0], &init, &grid, &tol).map_err(|e| e.to_string())?;
            let form = selfdual_test(&curve, 1e-6)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("no skew form for {} from {init:?}", l.density()))?;
            worst = worst.max(form.residual);
        }
    }
    let control = OrdODE::parse("y5", 6).unwrap();
    let (init, _) = random_solutions(&control, 1, &grid, seed, &tol)?.remove(0);
    let curve = linearization_curve(&control, grid[0], &init, &grid, &tol).map_err(|e| e.to_string())?;
    let none = selfdual_test(&curve, 1e-6).map_err(|e| e.to_string())?;
    ensure(none.is_none(), || "y6 = y5 admits a skew form".into())?;
    within(start, Duration::from_secs(120))?;
    Ok(format!("9 curves skew with residual <= {worst:.1e}; y6 = y5 has none; {:.1?}", start.elapsed()))
}

/// Growth vectors at 5 random points and the class of the flat models.
/// Returns the growth vectors so the caller can compare them with the
/// stated targets.
fn flat_geometry(seed: u64) -> Result<Vec<Vec<usize>>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found = Vec::new();
    for n in [3u32, 4] {
        let l = lag(&format!("y{n}^2"));
        let d = build_distribution(&l);
        let mut growth: Option<Vec<usize>> = None;
        for _ in 0..5 {
            let p: Vec<f64> = d.chart().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = derived_flag(&d, &p, rng.gen()).map_err(|e| e.to_string())?.growth;
            if let Some(prev) = &growth {
                ensure(*prev == g, || format!("growth varies: {prev:?} vs {g:?}"))?;
            }
            growth = Some(g);
        }
        let sys = abnormal_extremal_ode(&l).map_err(|e| e.to_string())?;
        let point: Vec<f64> = (0..n + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let class = distribution_class(&sys, &point, rng.gen()).map_err(|e| e.to_string())?;
        ensure(class.class == n, || format!("class {} for n = {n}", class.class))?;
        found.push(growth.unwrap());
    }
    Ok(found)
}

fn geometry_of_flat_model(seed: u64) -> Check {
    let found = flat_geometry(seed)?;
    let target = [vec![2, 3, 5, 6, 7], vec![2, 3, 5, 6, 7, 8]];
    ensure(found == target, || {
        format!(
            "expected {:?} and {:?}, computed {:?} and {:?} with class m = n; the chart (x, y0..yn, z) has \
             dimension n + 3, so a rank-2 flag stops at 6 for n = 3 and 7 for n = 4",
            target[0], target[1], found[0], found[1]
        )
    })?;
    Ok(format!("{:?}, {:?}, class m = n", found[0], found[1]))
}

fn omega_structure(seed: u64) -> Check {
    let w = omega_form(&lag("y3^2")).map_err(|e| e.to_string())?;
    let mut expected = BTreeMap::new();
    expected.insert((0, 5), Expr::int(-2));
    expected.insert((1, 4), Expr::int(2));
    expected.insert((2, 3), Expr::int(-2));
    ensure(w.theta_theta == expected && w.dx_theta.iter().all(Expr::is_zero), || format!("omega = {:?}", w.to_json()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![lag("y3^2"), lag("y3^(1/3)")];
    cases.extend((0..3).map(|_| random_lagrangian(&mut rng)));
    for l in &cases {
        let r = verify_omega_properties(l, seed).map_err(|e| e.to_string())?;
        let all = r.closed && r.kernel_contains_solution_field && r.vertical_isotropic && r.kernel_rank_one;
        ensure(all && r.all_pass(), || format!("{}: {:?}", l.density(), r.failures))?;
        let at = anderson_thompson_coeffs(l).map_err(|e| format!("{}: {e}", l.density()))?;
        let top = at.get(2, 3);
        ensure(is_zero(&top, 1e-9).ok() == Some(ZeroVerdict::Nonzero), || format!("A_23 = {top}"))?;
    }
    Ok(format!("-2θ0∧θ5 + 2θ1∧θ4 - 2θ2∧θ3; four properties and support hold for {} densities", cases.len()))
}

fn legendre_consistency(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec { start: 0.0, end: 1.0, count: 16 }.points();
    let tol = Tolerances::default();
    let (mut push, mut fit) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let l = random_lagrangian(&mut rng);
        let ode = euler_lagrange(&l).map_err(|e| e.to_string())?;
        let (init, traj) = random_solutions(&ode, 1, &grid, rng.gen(), &tol)?.remove(0);
        let r = legendre_pushforward_check(&l, &traj, f64::INFINITY).map_err(|e| e.to_string())?;
        push = push.max(r.residual);

        let sys = abnormal_extremal_ode(&l).map_err(|e| e.to_string())?;
        let mut point = vec![grid[0]];
        point.extend_from_slice(&init);
        let start = legendre_xi(&l).apply(&point).map_err(|e| e.to_string())?;
        let ext = sys.integrate(&start, &grid, &tol).map_err(|e| e.to_string())?;
        let jc = jacobi_curve(&sys, &ext, &tol).map_err(|e| e.to_string())?;
        let lin = linearization_curve(&ode, grid[0], &init, &grid, &tol).map_err(|e| e.to_string())?;
        let m = compare_projective(&lin, &jc.curve, f64::INFINITY).map_err(|e| e.to_string())?;
        fit = fit.max(m.residual);
    }
    ensure(push < 1e-7, || format!("pushforward residual {push:e}"))?;
    ensure(fit < 1e-5, || format!("Jacobi vs linearization residual {fit:e}"))?;
    Ok(format!("pushforward <= {push:.1e}, Jacobi vs linearization <= {fit:.1e}"))
}

fn random_gauge(rng: &mut ChaCha8Rng) -> Expr {
    const POOL: [&str; 6] = ["x*y0*y1", "y2^2", "y0*y1*y2", "x^2*y2", "y1^3", "y0^2*y2"];
    let mut g = Expr::zero();
    for _ in 0..2 {
        let c = Expr::int(rng.gen_range(-3..=3));
        g = &g + &(&c * &e(POOL[rng.gen_range(0..POOL.len())]));
    }
    g
}

fn property_suites(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let l = random_lagrangian(&mut rng);
        let g = random_gauge(&mut rng);
        let shifted = divergence_shift(&l, &g).map_err(|e| e.to_string())?;
        let diff = normalize(&(&euler_lagrange_expression(&shifted) - &euler_lagrange_expression(&l)));
        ensure(diff.is_zero(), || format!("E(f + Dg) - E(f) = {diff} for g = {g}"))?;
    }

    let grid = GridSpec { start: 0.0, end: 1.0, count: 16 }.points();
    let tol = Tolerances::default();
    let mut odd = 0.0f64;
    for _ in 0..3 {
        let ode = euler_lagrange(&random_lagrangian(&mut rng)).map_err(|e| e.to_string())?;
        for (_, t) in random_solutions(&ode, 3, &grid, rng.gen(), &tol)? {
            let w = invariants_along(&linearize_along(&ode, &t, required_jet_length(6)).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            for k in [3, 5] {
                odd = odd.max(w.series_of(k).unwrap().iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
    }
    ensure(odd < 1e-6, || format!("odd invariants reach {odd:e}"))?;

    let opts = ClassifyOptions { grid: GridSpec { start: 0.0, end: 1.0, count: 16 }, seed, ..ClassifyOptions::default() };
    let verdict = |f: &Expr| -> Result<Verdict, String> {
        let l = Lagrangian::new(f.clone(), 3).map_err(|e| e.to_string())?;
        Ok(classify(&ClassifierInput::Lagrangian(l), &f.to_string(), &opts).map_err(|e| e.to_string())?.verdict)
    };
    for case in 0..10 {
        let base = if case % 3 == 0 {
            lag(&format!("{}*y3^2", rng.gen_range(1..=5)))
        } else {
            random_lagrangian(&mut rng)
        };
        let want = verdict(base.density())?;
        let alpha = Expr::rational(rng.gen_range(1..=9) * if rng.gen() { 1 } else { -1 }, rng.gen_range(1..=5));
        let dx: BTreeMap<Var, Expr> = [(Var::X, &Expr::x() + &Expr::int(rng.gen_range(-3..=3)))].into_iter().collect();
        let dy: BTreeMap<Var, Expr> =
            [(Var::Y(0), &Expr::y(0) + &Expr::rational(rng.gen_range(-5..=5), 2))].into_iter().collect();
        let moved = [
            &alpha * base.density(),
            divergence_shift(&base, &random_gauge(&mut rng)).map_err(|e| e.to_string())?.density().clone(),
            base.density().substitute_many(&dx).map_err(|e| e.to_string())?,
            base.density().substitute_many(&dy).map_err(|e| e.to_string())?,
        ];
        for f in &moved {
            let got = verdict(f)?;
            ensure(got == want, || format!("{} -> {f}: {want:?} became {got:?}", base.density()))?;
        }
    }
    Ok(format!("divergence invariance x20, odd invariants <= {odd:.1e}, verdict stable under 40 moves"))
}

fn order_two_caveat() -> Check {
    let opts = ClassifyOptions::default();
    let (ode, report) = n2_caveat_demo(&opts).map_err(|e| e.to_string())?;
    let cleared = normalize(&(&e("3*y2") * &(&Expr::y(4) - ode.rhs())));
    ensure(cleared == e("3*y2*y4 - 5*y3^2"), || format!("cleared equation {cleared}"))?;
    let grid = opts.grid.points();
    let mut worst = 0.0f64;
    for (_, t) in random_solutions(&ode, 3, &grid, 5, &Tolerances::default())? {
        let w = invariants_along(&linearize_along(&ode, &t, required_jet_length(4)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for k in [3, 4] {
            worst = worst.max(w.series_of(k).unwrap().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    ensure(worst < 1e-6, || format!("W3, W4 reach {worst:e}"))?;
    ensure(report.verdict == Verdict::Inconclusive, || format!("verdict {:?}", report.verdict))?;
    Ok(format!("3y2y4 - 5y3^2 = 0, |W3|, |W4| <= {worst:.1e}, inconclusive"))
}

fn main() {
    let seed = 20240611;
    let checks: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("symbolic Euler-Lagrange exactness", Box::new(el_exactness)),
        ("syzygy n = 3", Box::new(move || syzygy_protocol(3, seed))),
        ("syzygy n = 4", Box::new(move || syzygy_protocol(4, seed))),
        ("classification separations", Box::new(classification_separations)),
        ("self-duality of linearization curves", Box::new(move || self_duality(seed))),
        ("geometry of the flat model", Box::new(move || geometry_of_flat_model(seed))),
        ("omega structure", Box::new(move || omega_structure(seed))),
        ("Legendre consistency", Box::new(move || legendre_consistency(seed))),
        ("property suites", Box::new(move || property_suites(seed))),
        ("n = 2 caveat", Box::new(order_two_caveat)),
    ];
    let mut unexpected = Vec::new();
    for (idx, (name, check)) in checks.iter().enumerate() {
        let number = idx + 1;
        let t = Instant::now();
        let result = check();
        let elapsed = t.elapsed();
        match &result {
            Ok(detail) => println!("criterion {number:>2} PASS  {name} [{elapsed:.1?}]: {detail}"),
            Err(detail) => println!("criterion {number:>2} FAIL  {name} [{elapsed:.1?}]: {detail}"),
        }
        if result.is_err() != KNOWN_RED.contains(&number) {
            unexpected.push(number);
        }
    }
    // The red geometry check must still produce the correct growth vectors.
    let correct = flat_geometry(seed).map(|g| g == [vec![2, 3, 5, 6], vec![2, 3, 5, 6, 7]]);
    if correct != Ok(true) {
        println!("flat-model growth vectors differ from (2,3,5,6) and (2,3,5,6,7): {correct:?}");
        unexpected.push(6);
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for: {unexpected:?}");
        std::process::exit(1);
    }
}
