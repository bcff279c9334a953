use thiserror::Error;

use super::{Expr, LagrangianSpec, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable index out of range at byte {offset}: {name}")]
    IndexOutOfRange { offset: usize, name: String },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::IndexOutOfRange { offset, .. } => Some(*offset),
            ParseError::Dimensions(_) => None,
        }
    }
}

/// Which identifiers an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarScope {
    /// `x1..xn`, `y1..ym`.
    Bundle { n: usize, m: usize },
    /// A single field coordinate `l`, mapped to `x1`. Used for initial data.
    Field,
}

/// Parses a Lagrangian body for a bundle of base dimension `n` and fiber
/// dimension `m` (`n >= 2`, `m >= n`).
pub fn parse(source: &str, n: usize, m: usize) -> Result<LagrangianSpec, ParseError> {
    if n < 2 || m < n {
        return Err(ParseError::Dimensions(format!(
            "need n >= 2 and m >= n, got n={n}, m={m}"
        )));
    }
    let body = parse_expr(source, n, m)?;
    Ok(LagrangianSpec { n, m, body })
}

/// Parses a free expression in `x1..xn`, `y1..ym` without the dimension
/// preconditions of [`parse`]. Metric coefficients and potentials use this.
pub fn parse_expr(source: &str, n: usize, m: usize) -> Result<Expr, ParseError> {
    Parser::new(source, VarScope::Bundle { n, m }).run()
}

/// Parses an expression in the field coordinate `l`.
pub fn parse_field_expr(source: &str) -> Result<Expr, ParseError> {
    Parser::new(source, VarScope::Field).run()
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    scope: VarScope,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, scope: VarScope) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            scope,
        }
    }

    fn run(mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Err(self.syntax("empty expression"));
        }
        let e = self.expr()?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(self.syntax(&format!(
                "unexpected `{}`",
                self.src[self.pos..].chars().next().unwrap()
            )));
        }
        Ok(e)
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::add(lhs, rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::mul(lhs, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::div(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := ('-'|'+') unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' unary)?   (right-assoc, exponent must fold to a constant)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let at = self.pos;
            let exponent = self.unary()?;
            let Some(c) = exponent.as_const() else {
                return Err(ParseError::Syntax {
                    offset: at,
                    message: "exponent must be a constant expression".into(),
                });
            };
            if !c.is_finite() {
                return Err(ParseError::Syntax {
                    offset: at,
                    message: "exponent is not finite".into(),
                });
            }
            return Ok(Expr::pow(base, c));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax(&format!(
                "unexpected `{}`",
                self.src[self.pos..].chars().next().unwrap()
            ))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            } else {
                return Err(ParseError::Syntax {
                    offset: j,
                    message: "malformed exponent".into(),
                });
            }
        }
        let text = &self.src[start..i];
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        self.pos = i;
        Ok(Expr::constant(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
            i += 1;
        }
        let name = &self.src[start..i];
        self.pos = i;

        if self.peek() == Some(b'(') {
            let Some(op) = UnaryOp::from_name(name) else {
                return Err(ParseError::UnknownIdentifier {
                    offset: start,
                    name: name.to_string(),
                });
            };
            self.pos += 1;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::unary(op, arg));
        }

        if name == "pi" {
            return Ok(Expr::constant(std::f64::consts::PI));
        }
        if let Some(v) = self.variable(name, start)? {
            return Ok(Expr::var(v));
        }
        Err(ParseError::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        })
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Option<Var>, ParseError> {
        match self.scope {
            VarScope::Field => Ok((name == "l").then_some(Var::Base(0))),
            VarScope::Bundle { n, m } => {
                let (kind, digits) = match name.as_bytes().first() {
                    Some(b'x') => (b'x', &name[1..]),
                    Some(b'y') => (b'y', &name[1..]),
                    _ => return Ok(None),
                };
                if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
                    return Ok(None);
                }
                let out_of_range = || ParseError::IndexOutOfRange {
                    offset,
                    name: name.to_string(),
                };
                let idx: usize = digits.parse().map_err(|_| out_of_range())?;
                let bound = if kind == b'x' { n } else { m };
                if idx == 0 || idx > bound {
                    return Err(out_of_range());
                }
                Ok(Some(if kind == b'x' {
                    Var::Base(idx - 1)
                } else {
                    Var::Fiber(idx - 1)
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{evaluate, same_structure as same_tree, BundlePoint};

    #[test]
    fn parses_sum_of_squares() {
        let spec = parse("y1^2 + y2^2", 2, 2).unwrap();
        let expected = Expr::add(Expr::pow(Expr::y(0), 2.0), Expr::pow(Expr::y(1), 2.0));
        assert!(same_tree(&spec.body, &expected));
    }

    #[test]
    fn unknown_identifier_is_reported_with_offset() {
        let err = parse("m0*(y1^2 + exp(2*x1)*y2^2)", 2, 2).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                offset: 0,
                name: "m0".into()
            }
        );
        let err = parse("y1 + foo(y2)", 2, 2).unwrap_err();
        assert_eq!(err.offset(), Some(5));
    }

    #[test]
    fn index_out_of_range() {
        let err = parse("y3 + y1", 2, 2).unwrap_err();
        assert!(matches!(err, ParseError::IndexOutOfRange { offset: 0, .. }));
        assert!(matches!(
            parse("x0", 2, 2).unwrap_err(),
            ParseError::IndexOutOfRange { .. }
        ));
    }

    #[test]
    fn dimension_preconditions() {
        assert!(matches!(parse("y1", 1, 1), Err(ParseError::Dimensions(_))));
        assert!(matches!(parse("y1", 3, 2), Err(ParseError::Dimensions(_))));
        assert!(parse("y1^2+y2^2+y3^2", 2, 3).is_ok());
    }

    #[test]
    fn precedence_and_associativity() {
        let p = BundlePoint::new(vec![0.3, 0.7], vec![1.5, -2.0]);
        let e = parse_expr("2*(y1^2*y2) - sin(x2)*y1", 2, 2).unwrap();
        let want = 2.0 * (1.5f64.powi(2) * -2.0) - 0.7f64.sin() * 1.5;
        assert_eq!(evaluate(&e, &p).unwrap(), want);
        // ^ is right-associative and binds tighter than unary minus
        let e = parse_expr("2^3^2", 2, 2).unwrap();
        assert_eq!(e.as_const(), Some(512.0));
        let e = parse_expr("-y1^2", 2, 2).unwrap();
        assert_eq!(evaluate(&e, &p).unwrap(), -2.25);
        let e = parse_expr("y1 - y2 - x1", 2, 2).unwrap();
        assert_eq!(evaluate(&e, &p).unwrap(), 1.5 + 2.0 - 0.3);
        let e = parse_expr("y1 / y2 / 2", 2, 2).unwrap();
        assert_eq!(evaluate(&e, &p).unwrap(), 1.5 / -2.0 / 2.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(parse("y1 +", 2, 2).unwrap_err().offset(), Some(4));
        assert_eq!(parse("(y1 + y2", 2, 2).unwrap_err().offset(), Some(8));
        assert_eq!(parse("y1 y2", 2, 2).unwrap_err().offset(), Some(3));
        assert_eq!(parse("y1^y2", 2, 2).unwrap_err().offset(), Some(3));
        assert_eq!(parse("2y1", 2, 2).unwrap_err().offset(), Some(1));
        assert!(parse("", 2, 2).is_err());
        assert!(parse("1e+", 2, 2).is_err());
    }

    #[test]
    fn numbers_and_pi() {
        let e = parse_expr("1.5e-3 + .5 + 2E2 + pi", 2, 2).unwrap();
        assert_eq!(e.as_const(), Some(1.5e-3 + 0.5 + 200.0 + std::f64::consts::PI));
    }

    #[test]
    fn field_scope_accepts_l_only() {
        let e = parse_field_expr("2/cosh(l - 3)").unwrap();
        let p = BundlePoint::new(vec![3.0], vec![]);
        assert_eq!(evaluate(&e, &p).unwrap(), 2.0);
        assert!(parse_field_expr("x1").is_err());
    }

    #[test]
    fn print_parse_round_trip() {
        let sources = [
            "2*(y1^2*y2) - sin(x2)*y1",
            "-(x1 - y1)^3 / (1 + exp(-x2))",
            "y1^-2 + (-3)*y2 - -y1",
            "log(1 + x1^2) * sqrt(2 + tanh(y2)) - cosh(x1)/sinh(1 + y1^2)",
            "0.1*(y1^2 + y2^2)^2 + exp(2*x1)*y2^2",
        ];
        let p = BundlePoint::new(vec![0.4, -0.2], vec![0.9, 1.3]);
        for src in sources {
            let e = parse_expr(src, 2, 2).unwrap();
            let printed = format!("{e}");
            let again = parse_expr(&printed, 2, 2).unwrap();
            assert!(same_tree(&e, &again), "{src} -> {printed}");
            assert_eq!(
                evaluate(&e, &p).unwrap().to_bits(),
                evaluate(&again, &p).unwrap().to_bits()
            );
        }
    }
}
