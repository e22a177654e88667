//! Recursive-descent parser for the textual expression syntax:
//!
//! ```text
//! expr     := term (("+"|"-") term)*
//! term     := unary (("*"|"/") unary)*
//! unary    := "-"? factor
//! factor   := base ("^" exponent)?
//! exponent := integer | "(" integer "/" integer ")"
//! base     := rational | ident | "(" expr ")"
//! ident    := "x" | "z" | "t" | "y" digits | "xi" digits
//! ```
//!
//! Exponents additionally accept a leading minus sign.

use num_bigint::BigInt;
use thiserror::Error;

use super::{Exp, Expr, ExprError, Q, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("invalid expression at offset {offset}: {source}")]
    Algebra {
        offset: usize,
        #[source]
        source: ExprError,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Algebra { offset, .. } => *offset,
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = &acc * &self.unary()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let at = self.pos;
                    let rhs = self.unary()?;
                    acc = acc
                        .try_div(&rhs)
                        .map_err(|source| ParseError::Algebra { offset: at, source })?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            Ok(-self.factor()?)
        } else {
            self.factor()
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let start = self.peek().map(|_| self.pos).unwrap_or(self.pos);
        let base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.exponent()?;
            return base
                .pow(e)
                .map_err(|source| ParseError::Algebra { offset: start, source });
        }
        Ok(base)
    }

    fn signed_integer(&mut self) -> Result<i64, ParseError> {
        let neg = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected integer"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let v: i64 = s.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: "integer out of range".into(),
        })?;
        Ok(if neg { -v } else { v })
    }

    fn exponent(&mut self) -> Result<Exp, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let n = self.signed_integer()?;
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    return Ok(Exp::from_integer(n));
                }
                self.expect(b'/')?;
                let at = self.pos;
                let d = self.signed_integer()?;
                if d == 0 {
                    return Err(ParseError::Syntax {
                        offset: at,
                        message: "zero denominator in exponent".into(),
                    });
                }
                self.expect(b')')?;
                Ok(Exp::new(n, d))
            }
            Some(c) if c.is_ascii_digit() || c == b'-' => Ok(Exp::from_integer(self.signed_integer()?)),
            _ => Err(self.syntax("expected exponent")),
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.syntax("expected number, identifier or '('")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let int_part = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let mut value = Q::from_integer(int_part.parse::<BigInt>().unwrap());
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            let fs = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let frac = std::str::from_utf8(&self.src[fs..self.pos]).unwrap();
            if !frac.is_empty() {
                let num: BigInt = frac.parse().unwrap();
                let den = num_traits::pow(BigInt::from(10), frac.len());
                value += Q::new(num, den);
            }
        }
        Ok(Expr::constant(value))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let indexed = |prefix: &str| -> Option<u32> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            rest.parse().ok()
        };
        let var = match name {
            "x" => Some(Var::X),
            "z" => Some(Var::Z),
            "t" => Some(Var::T),
            _ => indexed("xi")
                .map(Var::Xi)
                .or_else(|| indexed("y").map(Var::Y)),
        };
        var.map(Expr::var).ok_or(ParseError::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })
    }
}
