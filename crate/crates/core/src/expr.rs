//! Arithmetic rate-law expressions.
//!
//! The grammar is deliberately tiny: decimal and scientific numbers,
//! identifiers, `+ - * / ^`, unary minus and parentheses. Precedence from
//! tightest to loosest is `^` (right associative), unary `-`, `* /`, `+ -`
//! (left associative).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Real;

/// Exponents that are small integers are evaluated with repeated
/// multiplication (`powi`) instead of `powf`.
const MAX_INT_EXPONENT: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

/// Expression tree. `Number` literals are finite and non-negative; a negative
/// constant is `Neg(Number)`, which is what the parser produces.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Symbol(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParen { offset: usize },
    #[error("missing operand at byte {offset}")]
    EmptyOperand { offset: usize },
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

/// Symbol values used by [`Expr::eval`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings<F = f64> {
    values: HashMap<String, F>,
}

impl<F: Real> Bindings<F> {
    pub fn new() -> Self {
        Self { values: HashMap::new() }
    }

    pub fn set(&mut self, name: impl Into<String>, value: F) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: F) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<F> {
        self.values.get(name).copied()
    }
}

impl<F: Real, S: Into<String>> FromIterator<(S, F)> for Bindings<F> {
    fn from_iter<I: IntoIterator<Item = (S, F)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

impl Expr {
    pub fn number(v: f64) -> Self {
        Expr::Number(v)
    }

    pub fn symbol(name: impl Into<String>) -> Self {
        Expr::Symbol(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn neg(child: Expr) -> Self {
        Expr::Neg(Box::new(child))
    }

    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        Parser::new(text)?.parse()
    }

    /// Every symbol name occurring in the tree.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Number(_) => {}
            Expr::Symbol(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(child) => child.collect_symbols(out),
            Expr::Binary(_, l, r) => {
                l.collect_symbols(out);
                r.collect_symbols(out);
            }
        }
    }

    pub fn eval<F: Real>(&self, bindings: &Bindings<F>) -> Result<F, ExprError> {
        let value = match self {
            Expr::Number(v) => F::lit(*v),
            Expr::Symbol(name) => bindings.get(name).ok_or_else(|| ExprError::Unbound(name.clone()))?,
            Expr::Neg(child) => -child.eval(bindings)?,
            Expr::Binary(op, l, r) => {
                let lhs = l.eval(bindings)?;
                let rhs = r.eval(bindings)?;
                apply_binary(*op, lhs, rhs)?
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    /// Lowers the tree to a form with symbols resolved to slots, folding every
    /// subtree that only involves constants.
    pub fn compile<R>(&self, resolve: R) -> Result<CompiledExpr, ExprError>
    where
        R: Fn(&str) -> Option<Slot>,
    {
        Ok(compile_node(&lower(self, &resolve)?))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Number(_) | Expr::Symbol(_) => ATOM_PRECEDENCE,
            Expr::Neg(_) => NEG_PRECEDENCE,
            Expr::Binary(op, _, _) => op.precedence(),
        }
    }
}

fn int_exponent<F: Real>(exp: F) -> Option<i32> {
    let e = exp.to_f64_lossy();
    if e.trunc() == e && e.abs() <= MAX_INT_EXPONENT {
        Some(e as i32)
    } else {
        None
    }
}

fn apply_binary<F: Real>(op: BinOp, lhs: F, rhs: F) -> Result<F, ExprError> {
    let v = match op {
        BinOp::Add => lhs + rhs,
        BinOp::Sub => lhs - rhs,
        BinOp::Mul => lhs * rhs,
        BinOp::Div => {
            if rhs == F::zero() {
                return Err(ExprError::DivisionByZero);
            }
            lhs / rhs
        }
        BinOp::Pow => match int_exponent(rhs) {
            Some(n) => lhs.powi(n),
            None => lhs.powf(rhs),
        },
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(v) => write!(f, "{v:?}"),
            Expr::Symbol(name) => f.write_str(name),
            Expr::Neg(child) => {
                f.write_str("-")?;
                // `-` binds looser than `^`, so `-a^b` needs no parentheses.
                write_operand(f, child, child.precedence() < NEG_PRECEDENCE)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    // The base must be an atom; the exponent may itself be a
                    // power or a negation.
                    (l.precedence() < ATOM_PRECEDENCE, r.precedence() < NEG_PRECEDENCE)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_operand(f, l, left_parens)?;
                write!(f, "{}", op.symbol())?;
                write_operand(f, r, right_parens)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((i, Tok::Op(c as char)));
                i += 1;
            }
            b'(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
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
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lexeme = &text[start..i];
                let value: f64 = lexeme.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lexeme}`"),
                })?;
                out.push((start, Tok::Num(value)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(out)
}

impl Parser {
    fn new(text: &str) -> Result<Self, ExprError> {
        Ok(Self {
            toks: tokenize(text)?,
            pos: 0,
            end: text.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn parse(mut self) -> Result<Expr, ExprError> {
        let e = self.sum()?;
        match self.toks.get(self.pos) {
            None => Ok(e),
            Some((offset, Tok::RParen)) => Err(ExprError::UnbalancedParen { offset: *offset }),
            Some((offset, tok)) => Err(ExprError::Syntax {
                offset: *offset,
                message: format!("unexpected {}", describe(tok)),
            }),
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.exponent()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::neg(self.exponent()?));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.toks.get(self.pos).cloned() {
            Some((_, Tok::Num(v))) => {
                self.pos += 1;
                Ok(Expr::Number(v))
            }
            Some((_, Tok::Ident(name))) => {
                self.pos += 1;
                Ok(Expr::Symbol(name))
            }
            Some((open, Tok::LParen)) => {
                self.pos += 1;
                if let Some(Tok::RParen) = self.peek() {
                    return Err(ExprError::EmptyOperand { offset: self.offset() });
                }
                let inner = self.sum()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    None => Err(ExprError::UnbalancedParen { offset: open }),
                    Some(tok) => Err(ExprError::Syntax {
                        offset: self.offset(),
                        message: format!("expected `)`, found {}", describe(tok)),
                    }),
                }
            }
            Some((_, Tok::RParen)) | None => Err(ExprError::EmptyOperand { offset }),
            Some((_, tok @ Tok::Op(_))) => Err(ExprError::Syntax {
                offset,
                message: format!("expected operand, found {}", describe(&tok)),
            }),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(name) => format!("identifier `{name}`"),
        Tok::Op(c) => format!("operator `{c}`"),
        Tok::LParen => "`(`".to_string(),
        Tok::RParen => "`)`".to_string(),
    }
}

// ---------------------------------------------------------------------------
// Compiled form used by the simulation engines

/// Where a symbol's value comes from once compiled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Const(f64),
    Var(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Pow(Box<Node>, Box<Node>),
}

type Func = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An expression with symbols resolved to variable slots or folded
/// constants, lowered to a tree of closures. Evaluation does no error
/// checking beyond IEEE semantics; callers check the result for finiteness.
#[derive(Clone)]
pub struct CompiledExpr {
    root: Node,
    func: Func,
}

impl CompiledExpr {
    #[inline]
    pub fn eval(&self, vars: &[f64]) -> f64 {
        (self.func)(vars)
    }

    /// Value when the expression does not depend on any variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Debug for CompiledExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledExpr").field("root", &self.root).finish()
    }
}

impl PartialEq for CompiledExpr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

fn lower<R: Fn(&str) -> Option<Slot>>(e: &Expr, resolve: &R) -> Result<Node, ExprError> {
    Ok(match e {
        Expr::Number(v) => Node::Const(*v),
        Expr::Symbol(name) => match resolve(name) {
            Some(Slot::Const(v)) => Node::Const(v),
            Some(Slot::Var(i)) => Node::Var(i),
            None => return Err(ExprError::Unbound(name.clone())),
        },
        Expr::Neg(child) => match lower(child, resolve)? {
            Node::Const(v) => Node::Const(-v),
            n => Node::Neg(Box::new(n)),
        },
        Expr::Binary(op, l, r) => {
            let lhs = lower(l, resolve)?;
            let rhs = lower(r, resolve)?;
            if let (Node::Const(a), Node::Const(b)) = (&lhs, &rhs) {
                return apply_binary(*op, *a, *b).map(Node::Const);
            }
            match op {
                BinOp::Add => Node::Add(Box::new(lhs), Box::new(rhs)),
                BinOp::Sub => Node::Sub(Box::new(lhs), Box::new(rhs)),
                BinOp::Mul => Node::Mul(Box::new(lhs), Box::new(rhs)),
                BinOp::Div => {
                    if rhs == Node::Const(0.0) {
                        return Err(ExprError::DivisionByZero);
                    }
                    Node::Div(Box::new(lhs), Box::new(rhs))
                }
                BinOp::Pow => match rhs {
                    Node::Const(v) if int_exponent(v).is_some() => Node::PowI(Box::new(lhs), v as i32),
                    rhs => Node::Pow(Box::new(lhs), Box::new(rhs)),
                },
            }
        }
    })
}

fn compile_node(n: &Node) -> CompiledExpr {
    CompiledExpr {
        root: n.clone(),
        func: closure(n),
    }
}

#[inline]
fn pow(base: f64, exp: f64) -> f64 {
    match int_exponent(exp) {
        Some(k) => base.powi(k),
        None => base.powf(exp),
    }
}

// Leaf operands are captured directly so the common `x * k`, `c + x` shapes
// cost a single call. Operand order is kept, so results are bit-identical to
// the tree evaluator.
macro_rules! arith {
    ($a:expr, $b:expr, $op:tt) => {
        match ($a, $b) {
            (a, Node::Const(c)) => {
                let (f, c) = (closure(a), *c);
                Arc::new(move |x: &[f64]| f(x) $op c) as Func
            }
            (a, Node::Var(j)) => {
                let (f, j) = (closure(a), *j);
                Arc::new(move |x: &[f64]| f(x) $op x[j])
            }
            (Node::Const(c), b) => {
                let (g, c) = (closure(b), *c);
                Arc::new(move |x: &[f64]| c $op g(x))
            }
            (Node::Var(i), b) => {
                let (g, i) = (closure(b), *i);
                Arc::new(move |x: &[f64]| x[i] $op g(x))
            }
            (a, b) => {
                let (f, g) = (closure(a), closure(b));
                Arc::new(move |x: &[f64]| f(x) $op g(x))
            }
        }
    };
}

fn closure(n: &Node) -> Func {
    match n {
        Node::Const(v) => {
            let v = *v;
            Arc::new(move |_: &[f64]| v)
        }
        Node::Var(i) => {
            let i = *i;
            Arc::new(move |x: &[f64]| x[i])
        }
        Node::Neg(c) => {
            let f = closure(c);
            Arc::new(move |x: &[f64]| -f(x))
        }
        Node::PowI(c, k) => {
            let k = *k;
            match &**c {
                Node::Var(i) => {
                    let i = *i;
                    Arc::new(move |x: &[f64]| x[i].powi(k))
                }
                c => {
                    let f = closure(c);
                    Arc::new(move |x: &[f64]| f(x).powi(k))
                }
            }
        }
        Node::Pow(a, b) => {
            let (f, g) = (closure(a), closure(b));
            Arc::new(move |x: &[f64]| {
                let e = g(x);
                pow(f(x), e)
            })
        }
        Node::Add(a, b) => arith!(&**a, &**b, +),
        Node::Sub(a, b) => arith!(&**a, &**b, -),
        Node::Mul(a, b) => arith!(&**a, &**b, *),
        Node::Div(a, b) => arith!(&**a, &**b, /),
    }
}
