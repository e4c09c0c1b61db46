use super::{Expr, Exponent, Func, Var};
use crate::error::{Error, Result};

/// Parse an expression; identifiers that are neither variables nor functions become parameters.
pub fn parse(text: &str) -> Result<Expr> {
    Parser { src: text.as_bytes(), pos: 0, params: None }.run()
}

/// Parse an expression, rejecting any parameter not listed in `params`.
pub fn parse_with_params(text: &str, params: &[&str]) -> Result<Expr> {
    Parser { src: text.as_bytes(), pos: 0, params: Some(params) }.run()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: Option<&'a [&'a str]>,
}

impl<'a> Parser<'a> {
    fn run(mut self) -> Result<Expr> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos < self.src.len() {
            return Err(self.err(format!("unexpected `{}`", self.src[self.pos] as char)));
        }
        Ok(e)
    }

    fn err(&self, message: String) -> Error {
        Error::Syntax { offset: self.pos, message }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat(b'-') {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat(b'/') {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            Ok(Expr::neg(self.unary()?))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let at = self.pos;
            let ex = self.unary()?;
            let value = ex.as_const().ok_or(Error::Syntax {
                offset: at,
                message: "exponent must be a constant integer or rational".into(),
            })?;
            let e = rational(value).ok_or(Error::Syntax {
                offset: at,
                message: format!("exponent {value} is not an integer or a simple rational"),
            })?;
            Ok(Expr::pow(base, e))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`".into()));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.err(format!("unexpected `{}`", c as char))),
            None => Err(self.err("unexpected end of input".into())),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let v: f64 = text.parse().map_err(|_| Error::Syntax { offset: start, message: format!("bad number `{text}`") })?;
        self.pos = i;
        Ok(Expr::constant(v))
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_alphanumeric() || s[i] == b'_') {
            i += 1;
        }
        let name = std::str::from_utf8(&s[start..i]).unwrap();
        self.pos = i;
        let called = self.peek() == Some(b'(');
        if called {
            let f = Func::from_name(name).ok_or(Error::UnknownIdentifier { name: name.into(), offset: start })?;
            self.pos += 1;
            let mut args = Vec::new();
            if !self.eat(b')') {
                loop {
                    args.push(self.expr()?);
                    if self.eat(b',') {
                        continue;
                    }
                    if self.eat(b')') {
                        break;
                    }
                    return Err(self.err("expected `,` or `)`".into()));
                }
            }
            if args.len() != 1 {
                return Err(Error::Arity { name: name.into(), expected: 1, found: args.len(), offset: start });
            }
            return Ok(Expr::call(f, args.pop().unwrap()));
        }
        if Func::from_name(name).is_some() {
            return Err(Error::Syntax { offset: self.pos, message: format!("function `{name}` needs an argument list") });
        }
        if let Some(v) = variable(name) {
            return Ok(Expr::var(v));
        }
        if name == "pi" {
            return Ok(Expr::constant(std::f64::consts::PI));
        }
        match self.params {
            Some(allowed) if !allowed.contains(&name) => Err(Error::UnknownIdentifier { name: name.into(), offset: start }),
            _ => Ok(Expr::param(name)),
        }
    }
}

fn variable(name: &str) -> Option<Var> {
    match name {
        "q" => return Some(Var::Q(0)),
        "p" => return Some(Var::P(0)),
        _ => {}
    }
    let (head, tail) = name.split_at(1);
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) || tail.starts_with('0') {
        return None;
    }
    let idx: usize = tail.parse().ok()?;
    if idx == 0 || idx > 255 {
        return None;
    }
    let i = (idx - 1) as u8;
    match head {
        "q" => Some(Var::Q(i)),
        "p" => Some(Var::P(i)),
        "e" => Some(Var::E(i)),
        _ => None,
    }
}

fn rational(x: f64) -> Option<Exponent> {
    if !x.is_finite() {
        return None;
    }
    for den in 1..=1000i64 {
        let num = (x * den as f64).round();
        if (num / den as f64 - x).abs() <= 1e-14 * x.abs().max(1.0) {
            return Some(Exponent::new(num as i64, den));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ParamEnv;

    #[test]
    fn precedence_and_associativity() {
        let e = parse("2^3^2").unwrap();
        assert_eq!(e.as_const(), Some(512.0));
        let e = parse("-2^2").unwrap();
        assert_eq!(e.as_const(), Some(-4.0));
        let e = parse("1 - 2 - 3").unwrap();
        assert_eq!(e.as_const(), Some(-4.0));
        let e = parse("8 / 2 / 2").unwrap();
        assert_eq!(e.as_const(), Some(2.0));
    }

    #[test]
    fn standard_systems() {
        let env = ParamEnv::from_pairs(&[("lambda", 0.1)]);
        let h = parse("p1^2/2 + q1^2/2").unwrap();
        assert_eq!(h.eval(&[1.0, 1.0], &env).unwrap(), 1.0);
        let quartic = parse("p1^2/2 + q1^2/2 + lambda*q1^4").unwrap();
        assert!((quartic.eval(&[1.0, 0.0], &env).unwrap() - 0.6).abs() < 1e-15);
        let pend = parse("p1^2/2 - cos(q1)").unwrap();
        assert_eq!(pend.eval(&[0.0, 0.0], &env).unwrap(), -1.0);
    }

    #[test]
    fn errors_carry_offsets() {
        match parse("q1 + * p1") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("foo(q1)"), Err(Error::UnknownIdentifier { offset: 0, .. })));
        assert!(matches!(parse("sin(q1, p1)"), Err(Error::Arity { found: 2, .. })));
        assert!(matches!(parse_with_params("mu*q1", &["lambda"]), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("q1^p1"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("(q1"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn rational_exponents() {
        let e = parse("q1^(3/2)").unwrap();
        assert_eq!(e.eval(&[4.0, 0.0], &ParamEnv::new()).unwrap(), 8.0);
        let e = parse("q1^(1/3)").unwrap();
        assert!((e.eval(&[-8.0, 0.0], &ParamEnv::new()).unwrap() + 2.0).abs() < 1e-15);
    }
}
