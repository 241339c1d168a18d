//! Closed-form scalar expressions.
//!
//! Grammar (standard precedence, `^` binds tighter than unary minus and is
//! right associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | func '(' expr ')' | '(' expr ')'
//! func  := sin | cos | tan | exp | log | ln | sqrt | abs
//! ```
//!
//! `pi` is a constant unless declared as a variable. Expressions are evaluated
//! over any [`Scalar`], so the same tree yields values, first derivatives
//! ([`Dual`]) or full Taylor expansions ([`Taylor`]).

mod scalar;
mod taylor;

use std::fmt;
use std::sync::Arc;

pub use scalar::{Dual, Scalar};
pub use taylor::{Space, Taylor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
    ];
}

/// Expression tree. Variables are indices into the declared name list.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    /// True when no variable occurs in the subtree.
    pub fn is_constant(&self) -> bool {
        match self {
            Node::Num(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.is_constant(),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn uses(&self, var: usize) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(i) => *i == var,
            Node::Neg(a) | Node::Call(_, a) => a.uses(var),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.uses(var) || b.uses(var),
        }
    }

    fn level(&self) -> u8 {
        match self {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            Node::Num(_) | Node::Var(_) | Node::Call(..) => 5,
        }
    }

    pub fn eval<T: Scalar>(&self, vals: &[T]) -> Result<T> {
        Ok(match self {
            Node::Num(c) => T::cst(*c),
            Node::Var(i) => vals[*i].clone(),
            Node::Neg(a) => -a.eval(vals)?,
            Node::Add(a, b) => a.eval(vals)? + b.eval(vals)?,
            Node::Sub(a, b) => a.eval(vals)? - b.eval(vals)?,
            Node::Mul(a, b) => a.eval(vals)? * b.eval(vals)?,
            Node::Div(a, b) => {
                let num = a.eval(vals)?;
                let den = b.eval(vals)?;
                if den.value() == 0.0 {
                    return Err(Error::domain("division by zero"));
                }
                num / den
            }
            Node::Pow(a, b) => {
                let base = a.eval(vals)?;
                if b.is_constant() {
                    let e = b.eval::<f64>(&[])?;
                    pow_const(base, e)?
                } else {
                    let e = b.eval(vals)?;
                    if base.value() <= 0.0 {
                        return Err(Error::domain(
                            "variable exponent requires a positive base",
                        ));
                    }
                    (e * base.ln()).exp()
                }
            }
            Node::Call(f, a) => {
                let x = a.eval(vals)?;
                let v = x.value();
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => {
                        if v.cos() == 0.0 {
                            return Err(Error::domain("tan at a pole"));
                        }
                        x.tan()
                    }
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(Error::domain(format!("log of nonpositive value {v}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 || (v == 0.0 && x.has_derivatives()) {
                            return Err(Error::domain(format!("sqrt at {v}")));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                }
            }
        })
    }
}

fn pow_const<T: Scalar>(base: T, e: f64) -> Result<T> {
    let b = base.value();
    if e.fract() == 0.0 && e.abs() < i32::MAX as f64 {
        if b == 0.0 && e < 0.0 {
            return Err(Error::domain("zero to a negative power"));
        }
        return Ok(base.powi(e as i32));
    }
    if b < 0.0 {
        return Err(Error::domain(format!(
            "negative base {b} with non-integer exponent {e}"
        )));
    }
    if b == 0.0 && (e < 0.0 || (e < 1.0 && base.has_derivatives())) {
        return Err(Error::domain("zero base with singular derivative"));
    }
    Ok(base.powf(e))
}

/// A parsed expression together with the variable names it was parsed against.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarExpr {
    ast: Node,
    vars: Arc<Vec<String>>,
}

impl ScalarExpr {
    pub fn parse<S: AsRef<str>>(source: &str, variables: &[S]) -> Result<ScalarExpr> {
        let vars: Vec<String> = variables.iter().map(|s| s.as_ref().to_string()).collect();
        let ast = Parser::new(source, &vars).parse()?;
        Ok(ScalarExpr {
            ast,
            vars: Arc::new(vars),
        })
    }

    pub fn from_node(ast: Node, variables: Vec<String>) -> ScalarExpr {
        ScalarExpr {
            ast,
            vars: Arc::new(variables),
        }
    }

    pub fn constant(c: f64, variables: Vec<String>) -> ScalarExpr {
        ScalarExpr::from_node(Node::Num(c), variables)
    }

    pub fn ast(&self) -> &Node {
        &self.ast
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn is_constant(&self) -> bool {
        self.ast.is_constant()
    }

    /// Evaluates with one value per declared variable, in declaration order.
    pub fn eval<T: Scalar>(&self, vals: &[T]) -> Result<T> {
        debug_assert!(vals.len() >= self.vars.len());
        self.ast.eval(vals)
    }

    pub fn eval_f64(&self, vals: &[f64]) -> Result<f64> {
        self.ast.eval(vals)
    }

    /// Value and exact partials with respect to `seeds`, at named bindings.
    pub fn eval_with_derivatives(
        &self,
        bindings: &[(&str, f64)],
        seeds: &[&str],
    ) -> Result<(f64, Vec<f64>)> {
        let mut vals = Vec::with_capacity(self.vars.len());
        for name in self.vars.iter() {
            let v = bindings
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
            vals.push(Dual::constant(v));
        }
        for (slot, seed) in seeds.iter().enumerate() {
            let idx = self
                .vars
                .iter()
                .position(|n| n == seed)
                .ok_or_else(|| Error::UnknownVariable(seed.to_string()))?;
            vals[idx].eps = {
                let mut e = vec![0.0; seeds.len()];
                e[slot] = 1.0;
                e
            };
        }
        let out = self.ast.eval(&vals)?;
        Ok((out.re, out.grad(seeds.len())))
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.ast, &self.vars)
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, node: &Node, vars: &[String], min: u8) -> fmt::Result {
    if node.level() < min {
        write!(f, "(")?;
        write_node(f, node, vars)?;
        write!(f, ")")
    } else {
        write_node(f, node, vars)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, vars: &[String]) -> fmt::Result {
    match node {
        Node::Num(c) => {
            if *c < 0.0 || c.is_sign_negative() {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "-")?;
            write_child(f, a, vars, 3)
        }
        Node::Add(a, b) | Node::Sub(a, b) => {
            write_child(f, a, vars, 1)?;
            write!(f, "{}", if matches!(node, Node::Add(..)) { " + " } else { " - " })?;
            write_child(f, b, vars, 2)
        }
        Node::Mul(a, b) | Node::Div(a, b) => {
            write_child(f, a, vars, 2)?;
            write!(f, "{}", if matches!(node, Node::Mul(..)) { "*" } else { "/" })?;
            write_child(f, b, vars, 3)
        }
        Node::Pow(a, b) => {
            write_child(f, a, vars, 5)?;
            write!(f, "^")?;
            write_child(f, b, vars, 3)
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a, vars)?;
            write!(f, ")")
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, vars: &'a [String]) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            vars,
        }
    }

    fn parse(mut self) -> Result<Node> {
        let node = self.expr()?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(self.error("operator or end of input"));
        }
        Ok(node)
    }

    fn error(&self, expected: &str) -> Error {
        Error::Syntax {
            position: self.pos,
            expected: expected.to_string(),
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

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.bytes.len()
                    && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = &self.src[start..self.pos];
                if let Some(i) = self.vars.iter().position(|v| v == name) {
                    return Ok(Node::Var(i));
                }
                if let Some(func) = Func::from_name(name) {
                    if self.peek() != Some(b'(') {
                        return Err(self.error("'('"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.error("')'"));
                    }
                    self.pos += 1;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                Err(Error::UnknownVariable(name.to_string()))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => Err(self.error("number, variable, function or '('")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut count = digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return Err(self.error("digit"));
        }
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Node::Num)
            .map_err(|_| Error::Syntax {
                position: start,
                expected: "number".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(src: &str, names: &[&str], vals: &[f64]) -> Result<f64> {
        ScalarExpr::parse(src, names)?.eval_f64(vals)
    }

    #[test]
    fn spec_examples() {
        assert_eq!(eval1("cos(phi)", &["phi"], &[0.0]).unwrap(), 1.0);
        assert_eq!(eval1("x^2/2", &["x"], &[2.0]).unwrap(), 2.0);
        match ScalarExpr::parse("cos(", &["phi"]) {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn derivatives() {
        let e = ScalarExpr::parse("x^2", &["x"]).unwrap();
        assert_eq!(e.eval_with_derivatives(&[("x", 3.0)], &["x"]).unwrap(), (9.0, vec![6.0]));
        let e = ScalarExpr::parse("x*y", &["x", "y"]).unwrap();
        let (v, d) = e.eval_with_derivatives(&[("x", 2.0), ("y", 5.0)], &["y"]).unwrap();
        assert_eq!((v, d), (10.0, vec![2.0]));

        let e = ScalarExpr::parse("sin(x)*exp(y)", &["x", "y"]).unwrap();
        let (_, d) = e.eval_with_derivatives(&[("x", 1.0), ("y", 0.0)], &["x", "y"]).unwrap();
        let h = 1e-6;
        let f = |x: f64, y: f64| e.eval_f64(&[x, y]).unwrap();
        let fx = (f(1.0 + h, 0.0) - f(1.0 - h, 0.0)) / (2.0 * h);
        let fy = (f(1.0, h) - f(1.0, -h)) / (2.0 * h);
        assert!((d[0] - fx).abs() < 1e-8);
        assert!((d[1] - fy).abs() < 1e-8);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval1("2^3^2", &[] as &[&str], &[]).unwrap(), 512.0);
        assert_eq!(eval1("-2^2", &[] as &[&str], &[]).unwrap(), -4.0);
        assert_eq!(eval1("8/2/2", &[] as &[&str], &[]).unwrap(), 2.0);
        assert_eq!(eval1("1-2-3", &[] as &[&str], &[]).unwrap(), -4.0);
        assert_eq!(eval1("2*-3", &[] as &[&str], &[]).unwrap(), -6.0);
        assert_eq!(eval1("1.5e2 + .5", &[] as &[&str], &[]).unwrap(), 150.5);
        assert!((eval1("ln(exp(2)) + 0*pi", &[] as &[&str], &[]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ScalarExpr::parse("x + q", &["x"]),
            Err(Error::UnknownVariable(n)) if n == "q"
        ));
        assert!(matches!(
            ScalarExpr::parse("x +", &["x"]),
            Err(Error::Syntax { position: 3, .. })
        ));
        assert!(matches!(
            ScalarExpr::parse("(x", &["x"]),
            Err(Error::Syntax { position: 2, .. })
        ));
        assert!(matches!(ScalarExpr::parse("x y", &["x", "y"]), Err(Error::Syntax { .. })));
        assert!(matches!(eval1("log(x)", &["x"], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(eval1("1/x", &["x"], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(eval1("x^0.5", &["x"], &[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(eval1("sqrt(x)", &["x"], &[-1.0]), Err(Error::Domain(_))));
        assert_eq!(eval1("x^3", &["x"], &[-2.0]).unwrap(), -8.0);
        let e = ScalarExpr::parse("sqrt(x)", &["x"]).unwrap();
        assert!(e.eval_with_derivatives(&[("x", 0.0)], &["x"]).is_err());
        assert_eq!(e.eval_f64(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn printer_round_trips() {
        let names = ["x", "y"];
        for src in [
            "-(x + y)*2",
            "x^-y^2",
            "(x^y)^2",
            "x - (y - 1)",
            "x/(y*2)",
            "-x^2",
            "(-x)^2",
            "sin(x)/cos(y)^2 + abs(-x)",
            "x*-y",
            "--x",
        ] {
            let a = ScalarExpr::parse(src, &names).unwrap();
            let b = ScalarExpr::parse(&a.to_string(), &names).unwrap();
            assert_eq!(a, b, "{src} -> {a}");
        }
    }

    #[test]
    fn taylor_through_expressions() {
        let e = ScalarExpr::parse("x^2*y + sin(y)", &["x", "y"]).unwrap();
        let v = Taylor::seed(&[1.0, 0.5], 2);
        let t = e.eval(&v).unwrap();
        assert!((t.derivative(&[0, 1]) - 2.0).abs() < 1e-14);
        assert!((t.derivative(&[1, 1]) + 0.5f64.sin()).abs() < 1e-14);
    }
}
