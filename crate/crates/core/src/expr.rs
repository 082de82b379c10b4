//! A small expression language for user-supplied scalar functions.
//!
//! Expressions have exactly one free variable and support `+ - * / ^`,
//! unary minus, `abs`, `log` (natural), `exp`, `sqrt`, n-ary `min`/`max`
//! and interval-wise definitions:
//!
//! ```text
//! piece(0 <= t < 0.0625 : 0; 0.0625 <= t < 1 : (t - 0.0625) * (1 - t)^(-1))
//! ```
//!
//! Piece intervals are half-open `[a, b)` except the last one, which is
//! closed on the right. Bounds are constant expressions and may use `inf`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("piecewise intervals overlap: [{lo1}, {hi1}) and [{lo2}, {hi2})")]
    Overlap { lo1: f64, hi1: f64, lo2: f64, hi2: f64 },
    #[error("piecewise intervals leave a gap between {hi} and {lo}")]
    Gap { hi: f64, lo: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Abs,
    Log,
    Exp,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "abs" => Some(Func::Abs),
            "log" | "ln" => Some(Func::Log),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    lo: f64,
    hi: f64,
    body: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Min(Vec<Node>),
    Max(Vec<Node>),
    Piecewise { arg: Box<Node>, pieces: Vec<Piece> },
}

const FUNCTIONS: &[&str] = &["abs", "log", "ln", "exp", "sqrt", "min", "max", "piece"];
const CONSTANTS: &[&str] = &["pi", "inf"];

fn domain(msg: impl Into<String>) -> ExprError {
    ExprError::Domain(msg.into())
}

fn finite(v: f64, what: &str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!("{what} produced {v}")))
    }
}

impl Node {
    fn eval(&self, x: f64) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var => Ok(x),
            Node::Neg(a) => Ok(-a.eval(x)?),
            Node::Call(func, a) => {
                let v = a.eval(x)?;
                match func {
                    Func::Abs => Ok(v.abs()),
                    Func::Log => {
                        if v <= 0.0 {
                            Err(domain(format!("log of non-positive value {v}")))
                        } else {
                            finite(v.ln(), "log")
                        }
                    }
                    Func::Exp => finite(v.exp(), "exp"),
                    Func::Sqrt => {
                        if v < 0.0 {
                            Err(domain(format!("sqrt of negative value {v}")))
                        } else {
                            Ok(v.sqrt())
                        }
                    }
                }
            }
            Node::Bin(op, a, b) => {
                let l = a.eval(x)?;
                let r = b.eval(x)?;
                let v = match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(domain("division by zero"));
                        }
                        l / r
                    }
                    BinOp::Pow => pow(l, r)?,
                };
                finite(v, op.symbol())
            }
            Node::Min(args) => {
                let mut best = f64::INFINITY;
                for a in args {
                    best = best.min(a.eval(x)?);
                }
                Ok(best)
            }
            Node::Max(args) => {
                let mut best = f64::NEG_INFINITY;
                for a in args {
                    best = best.max(a.eval(x)?);
                }
                Ok(best)
            }
            Node::Piecewise { arg, pieces } => {
                let v = arg.eval(x)?;
                let last = pieces.len() - 1;
                for (i, p) in pieces.iter().enumerate() {
                    if (p.lo <= v && v < p.hi) || (i == last && v == p.hi) {
                        return p.body.eval(x);
                    }
                }
                Err(domain(format!("{v} lies outside every piece")))
            }
        }
    }

    fn collect_breaks(&self, out: &mut Vec<f64>) {
        match self {
            Node::Const(_) | Node::Var => {}
            Node::Neg(a) | Node::Call(_, a) => a.collect_breaks(out),
            Node::Bin(_, a, b) => {
                a.collect_breaks(out);
                b.collect_breaks(out);
            }
            Node::Min(v) | Node::Max(v) => v.iter().for_each(|n| n.collect_breaks(out)),
            Node::Piecewise { arg, pieces } => {
                if **arg == Node::Var {
                    out.extend(pieces.iter().flat_map(|p| [p.lo, p.hi]).filter(|x| x.is_finite()));
                }
                pieces.iter().for_each(|p| p.body.collect_breaks(out));
            }
        }
    }

    fn has_var(&self) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var => true,
            Node::Neg(a) | Node::Call(_, a) => a.has_var(),
            Node::Bin(_, a, b) => a.has_var() || b.has_var(),
            Node::Min(v) | Node::Max(v) => v.iter().any(Node::has_var),
            Node::Piecewise { arg, pieces } => {
                arg.has_var() || pieces.iter().any(|p| p.body.has_var())
            }
        }
    }

    fn substitute(&self, inner: &Node) -> Node {
        match self {
            Node::Const(c) => Node::Const(*c),
            Node::Var => inner.clone(),
            Node::Neg(a) => Node::Neg(Box::new(a.substitute(inner))),
            Node::Call(f, a) => Node::Call(*f, Box::new(a.substitute(inner))),
            Node::Bin(op, a, b) => Node::Bin(
                *op,
                Box::new(a.substitute(inner)),
                Box::new(b.substitute(inner)),
            ),
            Node::Min(v) => Node::Min(v.iter().map(|n| n.substitute(inner)).collect()),
            Node::Max(v) => Node::Max(v.iter().map(|n| n.substitute(inner)).collect()),
            Node::Piecewise { arg, pieces } => Node::Piecewise {
                arg: Box::new(arg.substitute(inner)),
                pieces: pieces
                    .iter()
                    .map(|p| Piece {
                        lo: p.lo,
                        hi: p.hi,
                        body: p.body.substitute(inner),
                    })
                    .collect(),
            },
        }
    }

    fn write(&self, out: &mut dyn fmt::Write, var: &str) -> fmt::Result {
        match self {
            Node::Const(c) => write_number(out, *c),
            Node::Var => out.write_str(var),
            Node::Neg(a) => {
                out.write_str("(-")?;
                a.write(out, var)?;
                out.write_str(")")
            }
            Node::Call(f, a) => {
                write!(out, "{}(", f.name())?;
                a.write(out, var)?;
                out.write_str(")")
            }
            Node::Bin(op, a, b) => {
                out.write_str("(")?;
                a.write(out, var)?;
                write!(out, " {} ", op.symbol())?;
                b.write(out, var)?;
                out.write_str(")")
            }
            Node::Min(args) | Node::Max(args) => {
                out.write_str(if matches!(self, Node::Min(_)) { "min(" } else { "max(" })?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.write_str(", ")?;
                    }
                    a.write(out, var)?;
                }
                out.write_str(")")
            }
            Node::Piecewise { arg, pieces } => {
                // Piece conditions name the variable directly, so a composed
                // argument cannot be printed back in this syntax.
                let mut arg_text = String::new();
                arg.write(&mut arg_text, var)?;
                out.write_str("piece(")?;
                for (i, p) in pieces.iter().enumerate() {
                    if i > 0 {
                        out.write_str("; ")?;
                    }
                    write_number(out, p.lo)?;
                    write!(out, " <= {arg_text} < ")?;
                    write_number(out, p.hi)?;
                    out.write_str(" : ")?;
                    p.body.write(out, var)?;
                }
                out.write_str(")")
            }
        }
    }
}

fn write_number(out: &mut dyn fmt::Write, v: f64) -> fmt::Result {
    if v == f64::INFINITY {
        out.write_str("inf")
    } else if v == f64::NEG_INFINITY {
        out.write_str("(-inf)")
    } else if v < 0.0 {
        write!(out, "({v:?})")
    } else {
        write!(out, "{v:?}")
    }
}

fn pow(base: f64, exponent: f64) -> Result<f64, ExprError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(domain(format!(
            "negative base {base} raised to non-integer power {exponent}"
        )));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(domain("zero raised to a negative power"));
    }
    if exponent == 2.0 {
        Ok(base * base)
    } else if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        Ok(base.powi(exponent as i32))
    } else {
        Ok(base.powf(exponent))
    }
}

/// A parsed expression in one free variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    var: String,
}

impl Expression {
    /// Parse `source` with `var_name` as the only admissible free variable.
    pub fn parse(source: &str, var_name: &str) -> Result<Expression, ExprError> {
        if source.trim().is_empty() {
            return Err(ExprError::Syntax {
                pos: 0,
                msg: "empty expression".into(),
            });
        }
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            var: var_name,
            allow_var: true,
        };
        let root = parser.parse_additive()?;
        parser.expect_end()?;
        Ok(Expression {
            root,
            var: var_name.to_string(),
        })
    }

    /// Parse with the free variable detected from the source. Constant
    /// expressions get `default_var`; more than one free identifier is an
    /// error.
    pub fn parse_auto(source: &str, default_var: &str) -> Result<Expression, ExprError> {
        let ids = free_identifiers(source)?;
        match ids.as_slice() {
            [] => Expression::parse(source, default_var),
            [(name, _)] => Expression::parse(source, name),
            [_, (name, pos), ..] => Err(ExprError::UnknownIdentifier {
                name: name.clone(),
                pos: *pos,
            }),
        }
    }

    pub fn constant(value: f64) -> Expression {
        Expression {
            root: Node::Const(value),
            var: "x".into(),
        }
    }

    pub fn identity(var: &str) -> Expression {
        Expression {
            root: Node::Var,
            var: var.into(),
        }
    }

    pub fn var_name(&self) -> &str {
        &self.var
    }

    pub fn is_identity(&self) -> bool {
        self.root == Node::Var
    }

    pub fn is_constant(&self) -> bool {
        !self.root.has_var()
    }

    pub fn eval(&self, value: f64) -> Result<f64, ExprError> {
        if value.is_nan() {
            return Err(domain("NaN argument"));
        }
        self.root.eval(value)
    }

    /// `self(inner(x))`, as an expression in `inner`'s variable.
    pub fn compose(&self, inner: &Expression) -> Expression {
        Expression {
            root: self.root.substitute(&inner.root),
            var: inner.var.clone(),
        }
    }

    pub fn add(&self, other: &Expression) -> Expression {
        self.binary(BinOp::Add, other)
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        self.binary(BinOp::Mul, other)
    }

    /// Sorted, deduplicated piece boundaries of pieces conditioned directly on the variable.
    pub fn piece_breaks(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.collect_breaks(&mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn powf(&self, exponent: f64) -> Expression {
        self.binary(BinOp::Pow, &Expression::constant(exponent))
    }

    pub fn abs(&self) -> Expression {
        Expression {
            root: Node::Call(Func::Abs, Box::new(self.root.clone())),
            var: self.var.clone(),
        }
    }

    fn binary(&self, op: BinOp, other: &Expression) -> Expression {
        let var = if self.root.has_var() || !other.root.has_var() {
            self.var.clone()
        } else {
            other.var.clone()
        };
        Expression {
            root: Node::Bin(op, Box::new(self.root.clone()), Box::new(other.root.clone())),
            var,
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(f, &self.var)
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
    Caret,
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
    Lt,
    Le,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Length in bytes of the numeric literal starting at `start`.
fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
        i += 1;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    i - start
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let len = scan_number(bytes, i);
            let text = &src[i..i + len];
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: i,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), i));
            i += len;
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < bytes.len() && is_ident_char(bytes[i] as char) {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            ':' => Tok::Colon,
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Tok::Le, i));
                    i += 2;
                    continue;
                }
                Tok::Lt
            }
            _ => {
                return Err(ExprError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push((tok, i));
        i += 1;
    }
    Ok(out)
}

/// Identifiers in `src` that are neither built-in functions nor constants,
/// in order of first appearance with their offsets.
pub fn free_identifiers(src: &str) -> Result<Vec<(String, usize)>, ExprError> {
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (tok, pos) in tokenize(src)? {
        if let Tok::Ident(name) = tok {
            if FUNCTIONS.contains(&name.as_str()) || CONSTANTS.contains(&name.as_str()) {
                continue;
            }
            if !seen.iter().any(|(n, _)| *n == name) {
                seen.push((name, pos));
            }
        }
    }
    Ok(seen)
}

/// Replace every identifier named in `params` by its parenthesised value.
/// Numeric literals (including exponents such as `1e5`) are left intact.
pub fn substitute_params(src: &str, params: &BTreeMap<String, f64>) -> String {
    let bytes = src.as_bytes();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_digit() || c == '.' {
            let len = scan_number(bytes, i).max(1);
            out.push_str(&src[i..i + len]);
            i += len;
        } else if is_ident_start(c) {
            let start = i;
            while i < bytes.len() && is_ident_char(bytes[i] as char) {
                i += 1;
            }
            let name = &src[start..i];
            match params.get(name) {
                Some(v) => out.push_str(&format!("({v:?})")),
                None => out.push_str(name),
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    var: &'a str,
    allow_var: bool,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or_else(|| self.tokens.last().map(|(_, p)| p + 1).unwrap_or(0))
    }

    fn error(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), ExprError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn expect_end(&self) -> Result<(), ExprError> {
        match self.peek() {
            None => Ok(()),
            Some(Tok::RParen) => Err(self.error("unbalanced `)`")),
            Some(t) => Err(self.error(format!("unexpected token {t:?}"))),
        }
    }

    fn parse_additive(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_multiplicative()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_multiplicative(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(&Tok::Minus) {
            let inner = self.parse_unary()?;
            return Ok(match inner {
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other)),
            });
        }
        if self.eat(&Tok::Plus) {
            return self.parse_unary();
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Node, ExprError> {
        let base = self.parse_primary()?;
        if self.eat(&Tok::Caret) {
            let exponent = self.parse_unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_primary(&mut self) -> Result<Node, ExprError> {
        let Some((tok, pos)) = self.tokens.get(self.pos).cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::LParen => {
                let inner = self.parse_additive()?;
                if !self.eat(&Tok::RParen) {
                    return Err(self.error("unbalanced `(`: expected `)`"));
                }
                Ok(inner)
            }
            Tok::Ident(name) => self.parse_identifier(&name, pos),
            other => Err(ExprError::Syntax {
                pos,
                msg: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn parse_identifier(&mut self, name: &str, pos: usize) -> Result<Node, ExprError> {
        if let Some(func) = Func::from_name(name) {
            self.expect(&Tok::LParen, "`(` after function name")?;
            let arg = self.parse_additive()?;
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        match name {
            "min" | "max" => {
                self.expect(&Tok::LParen, "`(` after function name")?;
                let mut args = vec![self.parse_additive()?];
                while self.eat(&Tok::Comma) {
                    args.push(self.parse_additive()?);
                }
                self.expect(&Tok::RParen, "`)`")?;
                Ok(if name == "min" {
                    Node::Min(args)
                } else {
                    Node::Max(args)
                })
            }
            "piece" => self.parse_piecewise(),
            "pi" => Ok(Node::Const(std::f64::consts::PI)),
            "inf" => Ok(Node::Const(f64::INFINITY)),
            _ if self.allow_var && name == self.var => Ok(Node::Var),
            _ => Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                pos,
            }),
        }
    }

    fn parse_bound(&mut self) -> Result<f64, ExprError> {
        let saved = self.allow_var;
        self.allow_var = false;
        let node = self.parse_additive();
        self.allow_var = saved;
        let node = node?;
        match node {
            Node::Const(v) => Ok(v),
            other => other.eval(0.0),
        }
    }

    fn parse_piecewise(&mut self) -> Result<Node, ExprError> {
        self.expect(&Tok::LParen, "`(` after `piece`")?;
        let mut pieces = Vec::new();
        loop {
            let lo = self.parse_bound()?;
            self.expect(&Tok::Le, "`<=` in piece condition")?;
            match self.tokens.get(self.pos) {
                Some((Tok::Ident(n), _)) if n == self.var => self.pos += 1,
                Some((Tok::Ident(n), p)) => {
                    return Err(ExprError::UnknownIdentifier {
                        name: n.clone(),
                        pos: *p,
                    })
                }
                _ => return Err(self.error("expected the variable in piece condition")),
            }
            self.expect(&Tok::Lt, "`<` in piece condition")?;
            let hi = self.parse_bound()?;
            self.expect(&Tok::Colon, "`:` after piece condition")?;
            let body = self.parse_additive()?;
            if !(lo < hi) {
                return Err(self.error(format!("empty piece interval [{lo}, {hi})")));
            }
            pieces.push(Piece { lo, hi, body });
            if self.eat(&Tok::Semi) {
                continue;
            }
            self.expect(&Tok::RParen, "`;` or `)` in piece list")?;
            break;
        }
        for w in pieces.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.lo < a.hi {
                return Err(ExprError::Overlap {
                    lo1: a.lo,
                    hi1: a.hi,
                    lo2: b.lo,
                    hi2: b.hi,
                });
            }
            if b.lo > a.hi {
                return Err(ExprError::Gap { hi: a.hi, lo: b.lo });
            }
        }
        Ok(Node::Piecewise {
            arg: Box::new(Node::Var),
            pieces,
        })
    }
}
