//! Minimal arithmetic expressions over instrument coordinates `z[i]`,
//! heterogeneity coordinates `v[i]` and an outcome value `y`.
//!
//! Grammar:
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | 'y' | ('z' | 'v') '[' int ']' | ('log' | 'exp') '(' expr ')' | '(' expr ')'
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{MteError, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Z(usize),
    V(usize),
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Log(Box<Node>),
    Exp(Box<Node>),
}

/// A parsed expression. Keeps its source text for serialization.
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

/// Values available to an expression.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub z: &'a [f64],
    pub v: &'a [f64],
    pub y: f64,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(MteError::Expression(format!(
                "unexpected trailing input in `{src}`"
            )));
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            source: format!("{c:?}"),
            root: Node::Const(c),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, env: &Env) -> f64 {
        eval(&self.root, env)
    }

    /// Indices of `z[i]` referenced anywhere in the expression.
    pub fn z_refs(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        collect(&self.root, &mut |n| {
            if let Node::Z(i) = n {
                out.insert(*i);
            }
        });
        out
    }

    /// Indices of `v[i]` referenced anywhere in the expression.
    pub fn v_refs(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        collect(&self.root, &mut |n| {
            if let Node::V(i) = n {
                out.insert(*i);
            }
        });
        out
    }

    pub fn uses_y(&self) -> bool {
        let mut found = false;
        collect(&self.root, &mut |n| found |= matches!(n, Node::Y));
        found
    }

    /// Constant value when the expression has no free symbols.
    pub fn as_constant(&self) -> Option<f64> {
        if self.z_refs().is_empty() && self.v_refs().is_empty() && !self.uses_y() {
            Some(self.eval(&Env::default()))
        } else {
            None
        }
    }

    /// Coefficients `(a, b)` if the expression is `a + sum b_i v[i]` with
    /// constant coefficients; `None` otherwise.
    pub fn affine_in_v(&self, dim: usize) -> Option<(f64, Vec<f64>)> {
        if !self.z_refs().is_empty() || self.uses_y() || self.v_refs().iter().any(|&i| i >= dim) {
            return None;
        }
        affine(&self.root, dim)
    }
}

fn affine(n: &Node, dim: usize) -> Option<(f64, Vec<f64>)> {
    let zero = || vec![0.0; dim];
    match n {
        Node::Const(c) => Some((*c, zero())),
        Node::V(i) => {
            let mut b = zero();
            b[*i] = 1.0;
            Some((0.0, b))
        }
        Node::Neg(a) => affine(a, dim).map(|(c, b)| (-c, b.into_iter().map(|x| -x).collect())),
        Node::Add(a, b) | Node::Sub(a, b) => {
            let (ca, ba) = affine(a, dim)?;
            let (cb, bb) = affine(b, dim)?;
            let s = if matches!(n, Node::Sub(..)) { -1.0 } else { 1.0 };
            Some((ca + s * cb, ba.iter().zip(&bb).map(|(x, y)| x + s * y).collect()))
        }
        Node::Mul(a, b) => {
            let (ca, ba) = affine(a, dim)?;
            let (cb, bb) = affine(b, dim)?;
            if ba.iter().all(|&x| x == 0.0) {
                Some((ca * cb, bb.iter().map(|x| ca * x).collect()))
            } else if bb.iter().all(|&x| x == 0.0) {
                Some((ca * cb, ba.iter().map(|x| cb * x).collect()))
            } else {
                None
            }
        }
        Node::Div(a, b) => {
            let (ca, ba) = affine(a, dim)?;
            let (cb, bb) = affine(b, dim)?;
            if bb.iter().all(|&x| x == 0.0) && cb != 0.0 {
                Some((ca / cb, ba.iter().map(|x| x / cb).collect()))
            } else {
                None
            }
        }
        _ => None,
    }
}

fn collect<F: FnMut(&Node)>(n: &Node, f: &mut F) {
    f(n);
    match n {
        Node::Neg(a) | Node::Log(a) | Node::Exp(a) => collect(a, f),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            collect(a, f);
            collect(b, f);
        }
        _ => {}
    }
}

fn eval(n: &Node, env: &Env) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Z(i) => env.z.get(*i).copied().unwrap_or(f64::NAN),
        Node::V(i) => env.v.get(*i).copied().unwrap_or(f64::NAN),
        Node::Y => env.y,
        Node::Neg(a) => -eval(a, env),
        Node::Add(a, b) => eval(a, env) + eval(b, env),
        Node::Sub(a, b) => eval(a, env) - eval(b, env),
        Node::Mul(a, b) => eval(a, env) * eval(b, env),
        Node::Div(a, b) => eval(a, env) / eval(b, env),
        Node::Log(a) => {
            let x = eval(a, env);
            if x == 0.0 {
                f64::NEG_INFINITY
            } else {
                x.ln()
            }
        }
        Node::Exp(a) => eval(a, env).exp(),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Expr {
    type Err = MteError;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| MteError::Expression(format!("bad number `{text}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/()[]".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(MteError::Expression(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Tok::Op(o)) if o == c => Ok(()),
            other => Err(MteError::Expression(format!("expected `{c}`, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Const(v)),
            Some(Tok::Op('(')) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "y" => Ok(Node::Y),
                "z" | "v" => {
                    self.expect('[')?;
                    let idx = match self.next() {
                        Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => v as usize,
                        other => {
                            return Err(MteError::Expression(format!(
                                "expected index after `{name}[`, found {other:?}"
                            )))
                        }
                    };
                    self.expect(']')?;
                    Ok(if name == "z" { Node::Z(idx) } else { Node::V(idx) })
                }
                "log" | "exp" => {
                    self.expect('(')?;
                    let e = self.expr()?;
                    self.expect(')')?;
                    Ok(if name == "log" {
                        Node::Log(Box::new(e))
                    } else {
                        Node::Exp(Box::new(e))
                    })
                }
                other => Err(MteError::Expression(format!("unknown identifier `{other}`"))),
            },
            other => Err(MteError::Expression(format!("unexpected token {other:?}"))),
        }
    }
}
