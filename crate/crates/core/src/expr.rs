//! Arithmetic expressions for drift, volatility and model handles in run
//! configurations.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables: `t`, `x` (same as `x1`), `x1`, `x2`, `theta` (same as
//! `theta0`), `theta0`, `theta1`, ... Functions: `sin cos exp log sqrt abs`
//! of one argument and `pow` of two. `^` is right associative and binds
//! tighter than unary minus, so `-x^2 = -(x^2)`.

use std::fmt;
use std::sync::Arc;

use crate::model::{ParamFn, ScalarFn};

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.position)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "pow" => (Func::Pow, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    T,
    X(usize),
    Theta(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::T => t,
            Node::X(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Node::Theta(i) => theta.get(*i).copied().unwrap_or(f64::NAN),
            Node::Neg(a) => -a.eval(t, x, theta),
            Node::Add(a, b) => a.eval(t, x, theta) + b.eval(t, x, theta),
            Node::Sub(a, b) => a.eval(t, x, theta) - b.eval(t, x, theta),
            Node::Mul(a, b) => a.eval(t, x, theta) * b.eval(t, x, theta),
            Node::Div(a, b) => a.eval(t, x, theta) / b.eval(t, x, theta),
            Node::Pow(a, b) => pow(a.eval(t, x, theta), b.eval(t, x, theta)),
            Node::Call(f, args) => {
                let a = args[0].eval(t, x, theta);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Pow => pow(a, args[1].eval(t, x, theta)),
                }
            }
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Node)) {
        f(self);
        match self {
            Node::Neg(a) => a.visit(f),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// A parsed expression in `t`, the state `x` and parameters `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut p = Parser { src: source.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Unknown state or parameter indices evaluate to NaN.
    pub fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> f64 {
        self.root.eval(t, x, theta)
    }

    /// Number of state components referenced, i.e. largest index plus one.
    pub fn state_dim(&self) -> usize {
        let mut d = 0;
        self.root.visit(&mut |n| {
            if let Node::X(i) = n {
                d = d.max(i + 1);
            }
        });
        d
    }

    /// Number of parameters referenced, i.e. largest index plus one.
    pub fn param_dim(&self) -> usize {
        let mut d = 0;
        self.root.visit(&mut |n| {
            if let Node::Theta(i) = n {
                d = d.max(i + 1);
            }
        });
        d
    }

    /// Handle `(t, x) -> value`, for expressions free of parameters.
    pub fn scalar_fn(&self) -> ScalarFn {
        let e = self.clone();
        Arc::new(move |t, x| e.eval(t, x, &[]))
    }

    /// Handle `(theta, t, x) -> value`.
    pub fn param_fn(&self) -> ParamFn {
        let e = self.clone();
        Arc::new(move |theta, t, x| e.eval(t, x, theta))
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.to_string(),
        }
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

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mut k = self.pos + 1;
            if k < self.src.len() && matches!(self.src[k], b'+' | b'-') {
                k += 1;
            }
            if k < self.src.len() && self.src[k].is_ascii_digit() {
                self.pos = k;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError {
            position: start,
            message: format!("invalid number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if let Some((f, arity)) = Func::lookup(name) {
            if !self.eat(b'(') {
                return Err(self.error(&format!("expected '(' after {name}")));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            if args.len() != arity {
                return Err(ParseError {
                    position: start,
                    message: format!("{name} takes {arity} argument(s), got {}", args.len()),
                });
            }
            return Ok(Node::Call(f, args));
        }
        let unknown = || ParseError {
            position: start,
            message: format!("unknown identifier '{name}'"),
        };
        match name {
            "t" => Ok(Node::T),
            "x" | "x1" => Ok(Node::X(0)),
            "x2" => Ok(Node::X(1)),
            "theta" => Ok(Node::Theta(0)),
            _ => match name.strip_prefix("theta") {
                Some(d) if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) => {
                    d.parse().map(Node::Theta).map_err(|_| unknown())
                }
                _ => Err(unknown()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, t: f64, x: &[f64], theta: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(t, x, theta)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, &[], &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, &[], &[]), 9.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, &[], &[]), 1.0);
        assert_eq!(ev("10 - 3 - 2", 0.0, &[], &[]), 5.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, &[], &[]), 512.0);
        assert_eq!(ev("-x^2", 0.0, &[3.0], &[]), -9.0);
        assert_eq!(ev("--2", 0.0, &[], &[]), 2.0);
        assert_eq!(ev("2^-1", 0.0, &[], &[]), 0.5);
        assert_eq!(ev("1.5e2 + .5", 0.0, &[], &[]), 150.5);
    }

    #[test]
    fn variables_and_functions() {
        let x = [0.7, 2.0];
        let th = [1.5, -2.0, 4.0];
        assert_eq!(ev("t * x", 0.5, &x, &th), 0.35);
        assert_eq!(ev("x1 + x2", 0.0, &x, &th), 2.7);
        assert_eq!(ev("theta + theta1 * theta2", 0.0, &x, &th), 1.5 - 8.0);
        assert_eq!(ev("1 + sin(5*x)", 0.0, &x, &th), 1.0 + (3.5f64).sin());
        assert_eq!(ev("1 + x*exp(t)", 0.3, &x, &th), 1.0 + 0.7 * 0.3f64.exp());
        assert_eq!(ev("pow(abs(x - 1), 1.5)", 0.0, &x, &th), (0.7f64 - 1.0).abs().powf(1.5));
        assert_eq!(ev("sqrt(4) + log(1) + cos(0)", 0.0, &x, &th), 3.0);
        assert!(ev("theta3", 0.0, &x, &th).is_nan());
        assert!(ev("x2", 0.0, &[1.0], &th).is_nan());
    }

    #[test]
    fn dimensions() {
        let e = Expr::parse("theta0 + theta2 * x2").unwrap();
        assert_eq!(e.param_dim(), 3);
        assert_eq!(e.state_dim(), 2);
        let e = Expr::parse("1").unwrap();
        assert_eq!((e.param_dim(), e.state_dim()), (0, 0));
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "1 +", "(1", "sin 1", "foo", "thetax", "pow(1)", "sin(1, 2)", "1 2", "x $ 2", "1..2"] {
            assert!(Expr::parse(bad).is_err(), "{bad:?} parsed");
        }
        let e = Expr::parse("1 + bar").unwrap_err();
        assert_eq!(e.position, 4);
    }

    proptest! {
        #[test]
        fn polynomial_matches_direct(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -5.0f64..5.0) {
            let e = Expr::parse(&format!("{a} + {b}*x - x^2")).unwrap();
            let direct = a + b * x - x * x;
            prop_assert!((e.eval(0.0, &[x], &[]) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
