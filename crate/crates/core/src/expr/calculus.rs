use super::{add_term, Atom, Exp, Expr, Monomial, Var, Q};
use num_traits::Zero;
use std::collections::BTreeMap;

/// Partial derivative with respect to a coordinate.
pub fn diff(e: &Expr, v: Var) -> Expr {
    let mut plain: BTreeMap<Monomial, Q> = BTreeMap::new();
    let mut chained: Vec<Expr> = Vec::new();
    for (m, c) in e.terms.iter() {
        for (idx, (a, x)) in m.iter().enumerate() {
            match a {
                Atom::Var(w) if *w == v => {
                    let mut nm = m.clone();
                    let ne = *x - Exp::from_integer(1);
                    if ne.is_zero() {
                        nm.remove(idx);
                    } else {
                        nm[idx].1 = ne;
                    }
                    add_term(&mut plain, nm, c * super::Q::new((*x.numer()).into(), (*x.denom()).into()));
                }
                Atom::Poly(p) if p.depends_on(v) => {
                    let inner = diff(p, v);
                    if inner.is_zero() {
                        continue;
                    }
                    let mut rest = m.clone();
                    rest.remove(idx);
                    let coeff = c * super::Q::new((*x.numer()).into(), (*x.denom()).into());
                    let t = Expr::monomial(coeff, rest)
                        .mul_expr(&super::atom_power(a.clone(), *x - Exp::from_integer(1)))
                        .mul_expr(&inner);
                    chained.push(t);
                }
                _ => {}
            }
        }
    }
    let mut out = Expr::from_map(plain);
    for t in chained {
        out = out.add_expr(&t);
    }
    out
}

/// Setting for total derivatives: an optional equation `y_k = F` imposed on
/// the jet space, so that `D_x y_{k-1} = F`.
#[derive(Clone, Debug, Default)]
pub struct JetContext {
    pub top: Option<(u32, Expr)>,
}

impl JetContext {
    pub fn free() -> Self {
        JetContext { top: None }
    }

    pub fn on_equation(order: u32, rhs: Expr) -> Self {
        JetContext {
            top: Some((order, rhs)),
        }
    }

    /// Eliminate `y_k` (if constrained) from an expression.
    pub fn restrict(&self, e: &Expr) -> Expr {
        match &self.top {
            Some((k, f)) if e.depends_on(Var::Y(*k)) => e
                .substitute(Var::Y(*k), f)
                .expect("polynomial substitution of the equation cannot fail"),
            _ => e.clone(),
        }
    }

    /// Iterated total derivative.
    pub fn total_derivative_n(&self, e: &Expr, times: usize) -> Expr {
        let mut acc = e.clone();
        for _ in 0..times {
            acc = total_derivative(&acc, self);
        }
        acc
    }
}

/// Total derivative `D_x = d/dx + sum y_{i+1} d/dy_i`, restricted to the
/// equation carried by the context.
pub fn total_derivative(e: &Expr, ctx: &JetContext) -> Expr {
    let e = ctx.restrict(e);
    let mut acc = diff(&e, Var::X);
    for v in e.vars() {
        if let Var::Y(i) = v {
            let d = diff(&e, v);
            if d.is_zero() {
                continue;
            }
            let next = match &ctx.top {
                Some((k, f)) if *k == i + 1 => f.clone(),
                _ => Expr::y(i + 1),
            };
            acc = acc.add_expr(&d.mul_expr(&next));
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{normalize, parse_expr};
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn third_derivative_of_cube_root() {
        let mut e = p("y3^(1/3)");
        for _ in 0..3 {
            e = diff(&e, Var::Y(3));
        }
        assert_eq!(e, p("(10/27)*y3^(-8/3)"));
    }

    #[test]
    fn total_derivative_shifts_jets() {
        assert_eq!(total_derivative(&p("2*y3"), &JetContext::free()), p("2*y4"));
        assert_eq!(
            total_derivative(&p("x*y0^2"), &JetContext::free()),
            p("y0^2 + 2*x*y0*y1")
        );
    }

    #[test]
    fn total_derivative_on_equation() {
        let ctx = JetContext::on_equation(6, p("y3"));
        assert_eq!(total_derivative(&p("y5"), &ctx), p("y3"));
        assert_eq!(total_derivative(&p("y5^2"), &ctx), p("2*y5*y3"));
    }

    #[test]
    fn chain_rule_through_atom() {
        let e = p("(1 + y1^2)^(1/2)");
        let d = diff(&e, Var::Y(1));
        let expect = p("y1/(1 + y1^2)^(1/2)");
        assert!(normalize(&(&d - &expect)).is_zero());
    }

    fn arb_poly() -> impl Strategy<Value = Expr> {
        let atom = prop_oneof![
            (-3i64..4).prop_map(Expr::int),
            (0u32..4).prop_map(Expr::y),
            Just(Expr::x()),
        ];
        atom.prop_recursive(3, 16, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| &a + &b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| &a * &b),
                (inner.clone(), inner).prop_map(|(a, b)| &a - &b),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn leibniz_rule(a in arb_poly(), b in arb_poly()) {
            let ctx = JetContext::free();
            let lhs = total_derivative(&(&a * &b), &ctx);
            let rhs = &(&total_derivative(&a, &ctx) * &b) + &(&a * &total_derivative(&b, &ctx));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn vertical_derivative_commutation(a in arb_poly(), i in 1u32..4) {
            // d/dy_i D_x - D_x d/dy_i = d/dy_{i-1}
            let ctx = JetContext::free();
            let lhs = &diff(&total_derivative(&a, &ctx), Var::Y(i))
                - &total_derivative(&diff(&a, Var::Y(i)), &ctx);
            prop_assert_eq!(lhs, diff(&a, Var::Y(i - 1)));
        }
    }
}
