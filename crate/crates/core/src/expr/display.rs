use std::fmt;

use num_traits::{One, Signed, Zero};

use super::{Atom, Exp, Expr, Monomial, Q};

fn fmt_exp(e: &Exp) -> String {
    if *e.denom() == 1 {
        format!("{}", e.numer())
    } else {
        format!("({}/{})", e.numer(), e.denom())
    }
}

fn fmt_atom(a: &Atom) -> String {
    match a {
        Atom::Var(v) => v.name(),
        Atom::Const(c) => fmt_coeff(c),
        Atom::Poly(p) => format!("({p})"),
    }
}

fn fmt_factor(a: &Atom, e: &Exp) -> String {
    if e.is_one() {
        fmt_atom(a)
    } else {
        format!("{}^{}", fmt_atom(a), fmt_exp(e))
    }
}

/// Unsigned term body, `None` for the empty monomial.
fn fmt_monomial(m: &Monomial) -> Option<String> {
    let num: Vec<String> = m
        .iter()
        .filter(|(_, e)| *e > Exp::zero())
        .map(|(a, e)| fmt_factor(a, e))
        .collect();
    let den: Vec<String> = m
        .iter()
        .filter(|(_, e)| *e < Exp::zero())
        .map(|(a, e)| fmt_factor(a, &-*e))
        .collect();
    if num.is_empty() && den.is_empty() {
        return None;
    }
    let mut s = if num.is_empty() {
        "1".to_string()
    } else {
        num.join("*")
    };
    match den.len() {
        0 => {}
        1 => {
            s.push('/');
            s.push_str(&den[0]);
        }
        _ => {
            s.push_str("/(");
            s.push_str(&den.join("*"));
            s.push(')');
        }
    }
    Some(s)
}

fn fmt_coeff(c: &Q) -> String {
    if c.is_integer() {
        format!("{}", c.numer())
    } else {
        format!("({}/{})", c.numer(), c.denom())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if i == 0 {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            match fmt_monomial(m) {
                None => f.write_str(&fmt_coeff(&a))?,
                Some(body) if a.is_one() => f.write_str(&body)?,
                Some(body) if body.starts_with("1/") => write!(f, "{}{}", fmt_coeff(&a), &body[1..])?,
                Some(body) => write!(f, "{}*{}", fmt_coeff(&a), body)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::parse_expr;

    #[test]
    fn prints_in_input_syntax() {
        let e = parse_expr("5*y4*y5/y3 - (40/9)*y4^3/y3^2").unwrap();
        assert_eq!(e.to_string(), "5*y4*y5/y3 - (40/9)*y4^3/y3^2");
    }

    #[test]
    fn radicals_and_constants() {
        let e = parse_expr("y3^(1/3) + 2").unwrap();
        assert_eq!(e.to_string(), "y3^(1/3) + 2");
        let e = parse_expr("-y2^(-3/2)").unwrap();
        assert_eq!(e.to_string(), "-1/y2^(3/2)");
        assert_eq!(parse_expr("5*y3^(-1)").unwrap().to_string(), "5/y3");
    }

    #[test]
    fn round_trip_with_atoms() {
        let e = parse_expr("1/(y1 + 1) + (y2 - 2*y1)^(1/2)").unwrap();
        let back = parse_expr(&e.to_string()).unwrap();
        assert_eq!(e, back);
    }
}
