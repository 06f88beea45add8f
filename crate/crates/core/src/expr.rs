//! Arithmetic expressions in `x`, `y`, `z`, `t` for user-defined problem data.
//!
//! Grammar (lowest to highest precedence): `+ -`, `* /`, unary `-`, `^`
//! (right associative), then numbers, `pi`, `e`, variables, parenthesised
//! expressions and calls to `sin cos tan exp log sqrt abs`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn lookup(name: &str) -> Option<Self> {
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

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, p: &Point) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(v) => p.get(*v),
            Node::Neg(a) => -a.eval(p),
            Node::Add(a, b) => a.eval(p) + b.eval(p),
            Node::Sub(a, b) => a.eval(p) - b.eval(p),
            Node::Mul(a, b) => a.eval(p) * b.eval(p),
            Node::Div(a, b) => a.eval(p) / b.eval(p),
            Node::Pow(a, b) => {
                let e = b.eval(p);
                let base = a.eval(p);
                if e.fract() == 0.0 && e.abs() < 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Node::Call(f, a) => f.apply(a.eval(p)),
        }
    }

    fn is_const(&self) -> bool {
        [Var::X, Var::Y, Var::Z, Var::T].iter().all(|&v| !self.uses(v))
    }

    fn diff(&self, var: Var) -> Node {
        use Node::*;
        let b = |n: Node| Box::new(n);
        match self {
            Num(_) => Num(0.0),
            Var(v) => Num(if *v == var { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.diff(var))),
            Add(l, r) => Add(b(l.diff(var)), b(r.diff(var))),
            Sub(l, r) => Sub(b(l.diff(var)), b(r.diff(var))),
            Mul(l, r) => Add(b(Mul(b(l.diff(var)), r.clone())), b(Mul(l.clone(), b(r.diff(var))))),
            Div(l, r) => Div(
                b(Sub(
                    b(Mul(b(l.diff(var)), r.clone())),
                    b(Mul(l.clone(), b(r.diff(var)))),
                )),
                b(Pow(r.clone(), b(Num(2.0)))),
            ),
            Pow(l, r) if r.is_const() => Mul(
                b(Mul(r.clone(), b(Pow(l.clone(), b(Sub(r.clone(), b(Num(1.0)))))))),
                b(l.diff(var)),
            ),
            // d(a^b) = a^b (b' ln a + b a' / a)
            Pow(l, r) => Mul(
                b(self.clone()),
                b(Add(
                    b(Mul(b(r.diff(var)), b(Call(Func::Log, l.clone())))),
                    b(Div(b(Mul(r.clone(), b(l.diff(var)))), l.clone())),
                )),
            ),
            Call(f, a) => {
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(b(Call(Func::Sin, a.clone()))),
                    Func::Tan => Div(b(Num(1.0)), b(Pow(b(Call(Func::Cos, a.clone())), b(Num(2.0))))),
                    Func::Exp => self.clone(),
                    Func::Log => Div(b(Num(1.0)), a.clone()),
                    Func::Sqrt => Div(b(Num(1.0)), b(Mul(b(Num(2.0)), b(self.clone())))),
                    Func::Abs => Div(a.clone(), b(self.clone())),
                };
                Mul(b(outer), b(a.diff(var)))
            }
        }
    }

    fn render(&self, out: &mut String) {
        use std::fmt::Write;
        let func_name = |f: &Func| match f {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        };
        let bin = |l: &Node, op: &str, r: &Node, out: &mut String| {
            out.push('(');
            l.render(out);
            out.push_str(op);
            r.render(out);
            out.push(')');
        };
        match self {
            Node::Num(v) => {
                let _ = write!(out, "{v:?}");
            }
            Node::Var(v) => out.push(match v {
                Var::X => 'x',
                Var::Y => 'y',
                Var::Z => 'z',
                Var::T => 't',
            }),
            Node::Neg(a) => {
                out.push_str("(-");
                a.render(out);
                out.push(')');
            }
            Node::Add(l, r) => bin(l, " + ", r, out),
            Node::Sub(l, r) => bin(l, " - ", r, out),
            Node::Mul(l, r) => bin(l, "*", r, out),
            Node::Div(l, r) => bin(l, "/", r, out),
            Node::Pow(l, r) => bin(l, "^", r, out),
            Node::Call(f, a) => {
                out.push_str(func_name(f));
                out.push('(');
                a.render(out);
                out.push(')');
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Call(_, a) => a.uses(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses(var) || b.uses(var)
            }
        }
    }
}

struct Point<'a> {
    x: &'a [f64],
    t: f64,
}

impl Point<'_> {
    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x.first().copied().unwrap_or(0.0),
            Var::Y => self.x.get(1).copied().unwrap_or(0.0),
            Var::Z => self.x.get(2).copied().unwrap_or(0.0),
            Var::T => self.t,
        }
    }
}

/// A parsed expression. Keeps its source text for diagnostics and serde.
#[derive(Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            src: source,
            tokens: tokenize(source)?,
            pos: 0,
        };
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(p.error(format!("unexpected {}", tok.describe())));
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluate at spatial point `x` (`x`, `y`, `z` read `x[0..3]`) and time `t`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.root.eval(&Point { x, t })
    }

    pub fn uses(&self, var: Var) -> bool {
        self.root.uses(var)
    }

    /// Symbolic partial derivative. The result is unsimplified but exact.
    pub fn derivative(&self, var: Var) -> Expr {
        let root = self.root.diff(var);
        let mut source = String::new();
        root.render(&mut source);
        Expr { source, root }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("symbol `{s}`"),
            Tok::Op(c) => format!("`{c}`"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Expression {
                source_text: src.to_string(),
                message: format!("malformed number `{text}` at column {}", start + 1),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or(c);
            return Err(Error::Expression {
                source_text: src.to_string(),
                message: format!("unexpected character `{ch}` at column {}", i + 1),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn error(&self, message: String) -> Error {
        let col = self.tokens.get(self.pos).map_or(self.src.len(), |&(_, c)| c) + 1;
        Error::Expression {
            source_text: self.src.to_string(),
            message: format!("{message} at column {col}"),
        }
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            // -x^2 is -(x^2); 2^-1 is allowed
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(self.error("unexpected end of expression".into()));
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected `)`".into()));
                }
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::lookup(&name) {
                    self.pos += 1;
                    if !self.eat('(') {
                        return Err(self.error(format!("expected `(` after `{name}`")));
                    }
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(self.error("expected `)`".into()));
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                let node = match name.as_str() {
                    "x" => Node::Var(Var::X),
                    "y" => Node::Var(Var::Y),
                    "z" => Node::Var(Var::Z),
                    "t" => Node::Var(Var::T),
                    "pi" => Node::Num(std::f64::consts::PI),
                    "e" => Node::Num(std::f64::consts::E),
                    _ => return Err(self.error(format!("unknown symbol `{name}`"))),
                };
                self.pos += 1;
                Ok(node)
            }
            other => Err(self.error(format!("unexpected {}", other.describe()))),
        }
    }
}
