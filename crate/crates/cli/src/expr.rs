//! Minimal arithmetic expressions for config coefficients.
//!
//! Configs stay declarative: a coefficient is a string over `+ - * /`,
//! the functions `pow`, `exp`, `sin`, `cos`, `abs`, `min`, `max`, the
//! constants `pi` and `e`, numeric literals, and a caller-declared set of
//! variable names (`t`, `x1..xd`, and for drivers `y`, `z1..zd`). Anything
//! outside that set is rejected at load time with an offset-tagged message,
//! so a typo never turns into a silent zero at run time.

use std::fmt;

/// A parse failure with the byte offset where it happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

impl std::error::Error for ExprError {}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ExprError> {
    Err(ExprError { offset, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func1 {
    Exp,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func2 {
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Add(a, b) => a.eval(vars) + b.eval(vars),
            Node::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Node::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Node::Div(a, b) => a.eval(vars) / b.eval(vars),
            Node::Call1(f, a) => {
                let a = a.eval(vars);
                match f {
                    Func1::Exp => a.exp(),
                    Func1::Sin => a.sin(),
                    Func1::Cos => a.cos(),
                    Func1::Abs => a.abs(),
                }
            }
            Node::Call2(f, a, b) => {
                let a = a.eval(vars);
                let b = b.eval(vars);
                match f {
                    Func2::Pow => a.powf(b),
                    Func2::Min => a.min(b),
                    Func2::Max => a.max(b),
                }
            }
        }
    }
}

/// A parsed expression bound to a fixed variable table.
#[derive(Debug, Clone)]
pub struct Compiled {
    root: Node,
    n_vars: usize,
}

impl Compiled {
    /// Evaluates with `vals[i]` bound to the i-th declared variable name.
    ///
    /// Panics if `vals` is shorter than the declared table; every arithmetic
    /// operation itself is total on `f64` (non-finite results are the
    /// caller's concern, checked along actual paths by the solvers).
    pub fn eval(&self, vals: &[f64]) -> f64 {
        assert!(
            vals.len() >= self.n_vars,
            "expression bound to {} variables, got {}",
            self.n_vars,
            vals.len()
        );
        self.root.eval(vals)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            '(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Exponent suffix: 1e-3, 2.5E+8.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                match text.parse::<f64>() {
                    Ok(v) => out.push((start, Tok::Num(v))),
                    Err(_) => return err(start, format!("malformed number {text:?}")),
                }
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            other => return err(i, format!("unexpected character {other:?}")),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    vars: &'a [&'a str],
    src_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), ExprError> {
        match self.bump() {
            Some((_, t)) if t == *want => Ok(()),
            Some((o, t)) => err(o, format!("expected {what}, found {t:?}")),
            None => err(self.src_len, format!("expected {what}, found end of input")),
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := '-' unary | atom
    fn unary(&mut self) -> Result<Node, ExprError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    // atom := number | ident | ident '(' args ')' | '(' expr ')'
    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.bump() {
            Some((_, Tok::Num(v))) => Ok(Node::Num(v)),
            Some((_, Tok::LParen)) => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((o, Tok::Ident(name))) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    self.call(o, &name)
                } else {
                    self.name(o, &name)
                }
            }
            Some((o, t)) => err(o, format!("expected a value, found {t:?}")),
            None => err(self.src_len, "expected a value, found end of input"),
        }
    }

    fn call(&mut self, at: usize, name: &str) -> Result<Node, ExprError> {
        let one = |f| -> Result<(usize, Option<Func1>, Option<Func2>), ExprError> {
            Ok((1, Some(f), None))
        };
        let two = |f| -> Result<(usize, Option<Func1>, Option<Func2>), ExprError> {
            Ok((2, None, Some(f)))
        };
        let (arity, f1, f2) = match name {
            "exp" => one(Func1::Exp)?,
            "sin" => one(Func1::Sin)?,
            "cos" => one(Func1::Cos)?,
            "abs" => one(Func1::Abs)?,
            "pow" => two(Func2::Pow)?,
            "min" => two(Func2::Min)?,
            "max" => two(Func2::Max)?,
            other => {
                return err(
                    at,
                    format!(
                        "unknown function {other:?}; available: \
                         exp, sin, cos, abs, pow, min, max"
                    ),
                )
            }
        };
        let first = self.expr()?;
        if arity == 1 {
            self.expect(&Tok::RParen, "`)`")?;
            Ok(Node::Call1(f1.unwrap(), Box::new(first)))
        } else {
            self.expect(&Tok::Comma, "`,` (this function takes two arguments)")?;
            let second = self.expr()?;
            self.expect(&Tok::RParen, "`)`")?;
            Ok(Node::Call2(f2.unwrap(), Box::new(first), Box::new(second)))
        }
    }

    fn name(&mut self, at: usize, name: &str) -> Result<Node, ExprError> {
        match name {
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => match self.vars.iter().position(|v| *v == name) {
                Some(i) => Ok(Node::Var(i)),
                None => err(
                    at,
                    format!(
                        "unknown name {name:?}; variables here: {}; constants: pi, e",
                        self.vars.join(", ")
                    ),
                ),
            },
        }
    }
}

/// Parses `src` against the declared variable names, in order; `eval` later
/// takes the values in the same order.
pub fn compile(src: &str, vars: &[&str]) -> Result<Compiled, ExprError> {
    let toks = lex(src)?;
    if toks.is_empty() {
        return err(0, "empty expression");
    }
    let src_len = src.len();
    let mut p = Parser { toks, pos: 0, vars, src_len };
    let root = p.expr()?;
    if let Some((o, t)) = p.toks.get(p.pos) {
        return err(*o, format!("unexpected trailing {t:?}"));
    }
    Ok(Compiled { root, n_vars: vars.len() })
}

/// Standard variable table for space-time coefficients: `t, x1..xd`.
pub fn spacetime_vars(dim: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend((1..=dim).map(|k| format!("x{k}")));
    v
}

/// Variable table for terminal payoffs: `x1..xd`.
pub fn space_vars(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("x{k}")).collect()
}

/// Variable table for drivers: `t, x1..xd, y, z1..zd_psi`.
pub fn driver_vars(dim: usize, d_psi: usize) -> Vec<String> {
    let mut v = spacetime_vars(dim);
    v.push("y".to_string());
    v.extend((1..=d_psi).map(|k| format!("z{k}")));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(src: &str, vars: &[&str]) -> Compiled {
        compile(src, vars).unwrap()
    }

    #[test]
    fn arithmetic_follows_the_usual_precedence() {
        let e = c("1 + 2 * 3 - 4 / 2", &[]);
        assert_eq!(e.eval(&[]), 5.0);
        let e = c("(1 + 2) * 3", &[]);
        assert_eq!(e.eval(&[]), 9.0);
        let e = c("-2 * -3", &[]);
        assert_eq!(e.eval(&[]), 6.0);
        let e = c("2 - -1", &[]);
        assert_eq!(e.eval(&[]), 3.0);
    }

    #[test]
    fn variables_bind_by_declared_position() {
        let e = c("t * x1 + x2", &["t", "x1", "x2"]);
        assert_eq!(e.eval(&[2.0, 3.0, 4.0]), 10.0);
    }

    #[test]
    fn functions_and_constants_evaluate() {
        assert_eq!(c("exp(0)", &[]).eval(&[]), 1.0);
        assert_eq!(c("sin(pi)", &[]).eval(&[]), std::f64::consts::PI.sin());
        assert_eq!(c("cos(0)", &[]).eval(&[]), 1.0);
        assert_eq!(c("abs(-3.5)", &[]).eval(&[]), 3.5);
        assert_eq!(c("pow(2, 10)", &[]).eval(&[]), 1024.0);
        assert_eq!(c("min(2, 3) + max(2, 3)", &[]).eval(&[]), 5.0);
        assert_eq!(c("e", &[]).eval(&[]), std::f64::consts::E);
        assert_eq!(c("1e-3 + 2.5E+1", &[]).eval(&[]), 25.001);
    }

    #[test]
    fn unknown_names_are_rejected_with_position() {
        let e = compile("t + foo", &["t"]).unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(e.message.contains("foo"), "{}", e.message);
        assert!(e.message.contains("variables here: t"), "{}", e.message);

        let e = compile("sqrt(2)", &[]).unwrap_err();
        assert!(e.message.contains("unknown function"), "{}", e.message);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(compile("", &[]).is_err());
        assert!(compile("1 +", &[]).is_err());
        assert!(compile("(1", &[]).is_err());
        assert!(compile("min(1)", &[]).is_err());
        assert!(compile("exp(1, 2)", &[]).is_err());
        assert!(compile("1 2", &[]).is_err());
        assert!(compile("1..2", &[]).is_err());
        assert!(compile("x1 $ 2", &["x1"]).is_err());
    }

    #[test]
    fn variable_tables_enumerate_coordinates() {
        assert_eq!(spacetime_vars(2), vec!["t", "x1", "x2"]);
        assert_eq!(space_vars(1), vec!["x1"]);
        assert_eq!(driver_vars(1, 2), vec!["t", "x1", "y", "z1", "z2"]);
    }
}
