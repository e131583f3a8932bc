//! Expression parsing and evaluation for plant dynamics and Lyapunov
//! candidates.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' integer)?
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! ident  := 'x'digits | 'u'digits
//! func   := 'sin'|'cos'|'exp'|'sqrt'|'abs'|'tanh'
//! ```
//!
//! The same AST evaluates over scalars, over boxes (natural-form inclusion
//! function), and over dual numbers (exact forward derivatives).

use crate::error::{Error, Result};
use crate::interval::{Interval, IvBox};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree over state variables `x1..xn` and control variables
/// `u1..um` (0-based indices internally).
#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    StateVar(usize),
    CtrlVar(usize),
    Unary(UnaryOp, Box<ExprAst>),
    Binary(BinOp, Box<ExprAst>, Box<ExprAst>),
    IntPow(Box<ExprAst>, u32),
}

impl ExprAst {
    pub fn references_ctrl(&self) -> bool {
        match self {
            ExprAst::Const(_) | ExprAst::StateVar(_) => false,
            ExprAst::CtrlVar(_) => true,
            ExprAst::Unary(_, c) => c.references_ctrl(),
            ExprAst::Binary(_, l, r) => l.references_ctrl() || r.references_ctrl(),
            ExprAst::IntPow(c, _) => c.references_ctrl(),
        }
    }

    /// Replace every state variable `xi` with `subs[i]`; control
    /// variables pass through.
    pub fn substitute_states(&self, subs: &[ExprAst]) -> ExprAst {
        match self {
            ExprAst::Const(c) => ExprAst::Const(*c),
            ExprAst::StateVar(i) => subs[*i].clone(),
            ExprAst::CtrlVar(j) => ExprAst::CtrlVar(*j),
            ExprAst::Unary(op, c) => ExprAst::Unary(*op, Box::new(c.substitute_states(subs))),
            ExprAst::Binary(op, l, r) => ExprAst::Binary(
                *op,
                Box::new(l.substitute_states(subs)),
                Box::new(r.substitute_states(subs)),
            ),
            ExprAst::IntPow(c, k) => ExprAst::IntPow(Box::new(c.substitute_states(subs)), *k),
        }
    }
}

// ---------------------------------------------------------------------------
// lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut integral = true;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    integral = false;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(Error::Syntax {
                            position: i.min(bytes.len()),
                            message: "malformed exponent".into(),
                        });
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let raw = &text[start..i];
                let value: f64 = raw.parse().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("invalid number literal '{raw}'"),
                })?;
                toks.push((Tok::Num { value, integral }, start));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::Syntax {
                    position: i,
                    message: format!("unexpected character '{c}'"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    n: usize,
    m: usize,
    text_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.text_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: self.here(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<ExprAst> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = ExprAst::Binary(BinOp::Add, Box::new(acc), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = ExprAst::Binary(BinOp::Sub, Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<ExprAst> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = ExprAst::Binary(BinOp::Mul, Box::new(acc), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = ExprAst::Binary(BinOp::Div, Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<ExprAst> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            let inner = self.factor()?;
            return Ok(ExprAst::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            match self.bump() {
                Some(Tok::Num { value, integral }) if integral && value >= 0.0 => {
                    if value.fract() != 0.0 || value > u32::MAX as f64 {
                        return Err(self.err("exponent must be a nonnegative integer literal"));
                    }
                    return Ok(ExprAst::IntPow(Box::new(base), value as u32));
                }
                _ => {
                    return Err(self.err("exponent must be a nonnegative integer literal"));
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprAst> {
        match self.bump() {
            Some(Tok::Num { value, .. }) => Ok(ExprAst::Const(value)),
            Some(Tok::Ident(name)) => self.ident_or_call(name),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(self.err("expected ')'")),
                }
            }
            _ => Err(self.err("expected a number, variable, function call or '('")),
        }
    }

    fn ident_or_call(&mut self, name: String) -> Result<ExprAst> {
        let func = match name.as_str() {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "sqrt" => Some(UnaryOp::Sqrt),
            "abs" => Some(UnaryOp::Abs),
            "tanh" => Some(UnaryOp::Tanh),
            _ => None,
        };
        if let Some(op) = func {
            match self.bump() {
                Some(Tok::LParen) => {}
                _ => return Err(self.err(format!("expected '(' after function '{name}'"))),
            }
            let arg = self.expr()?;
            match self.bump() {
                Some(Tok::RParen) => return Ok(ExprAst::Unary(op, Box::new(arg))),
                _ => return Err(self.err("expected ')'")),
            }
        }
        // variable: x<digits> or u<digits>
        let (kind, digits) = name.split_at(1);
        let index: usize = digits
            .parse()
            .map_err(|_| self.err(format!("unknown identifier '{name}'")))?;
        if index < 1 {
            return Err(self.err(format!("variable indices start at 1: '{name}'")));
        }
        match kind {
            "x" if index <= self.n => Ok(ExprAst::StateVar(index - 1)),
            "u" if index <= self.m => Ok(ExprAst::CtrlVar(index - 1)),
            "x" | "u" => Err(self.err(format!(
                "variable '{name}' out of range (n={}, m={})",
                self.n, self.m
            ))),
            _ => Err(self.err(format!("unknown identifier '{name}'"))),
        }
    }
}

/// Parse `text` into an AST over `n` state and `m` control variables.
pub fn parse(text: &str, n: usize, m: usize) -> Result<ExprAst> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        n,
        m,
        text_len: text.len(),
    };
    let ast = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing input"));
    }
    Ok(ast)
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

pub fn eval_scalar(ast: &ExprAst, x: &[f64], u: &[f64]) -> Result<f64> {
    Ok(match ast {
        ExprAst::Const(c) => *c,
        ExprAst::StateVar(i) => x[*i],
        ExprAst::CtrlVar(j) => u[*j],
        ExprAst::Unary(op, c) => {
            let v = eval_scalar(c, x, u)?;
            match op {
                UnaryOp::Neg => -v,
                UnaryOp::Sin => v.sin(),
                UnaryOp::Cos => v.cos(),
                UnaryOp::Exp => v.exp(),
                UnaryOp::Sqrt => {
                    if v < 0.0 {
                        return Err(Error::Domain(format!("sqrt of negative value {v}")));
                    }
                    v.sqrt()
                }
                UnaryOp::Abs => v.abs(),
                UnaryOp::Tanh => v.tanh(),
            }
        }
        ExprAst::Binary(op, l, r) => {
            let a = eval_scalar(l, x, u)?;
            let b = eval_scalar(r, x, u)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(Error::Domain("division by zero".into()));
                    }
                    a / b
                }
            }
        }
        ExprAst::IntPow(c, k) => eval_scalar(c, x, u)?.powi(*k as i32),
    })
}

/// Natural-form inclusion function: the result contains `p(z)` for every
/// `z` in the box. Strict mode; domain violations (zero-straddling
/// divisor, fully negative sqrt argument) are errors.
pub fn eval_interval(ast: &ExprAst, bx: &IvBox) -> Result<Interval> {
    eval_interval_impl(ast, bx, true)
}

/// Like [`eval_interval`] but a zero-straddling divisor widens to the
/// whole real line instead of failing.
pub fn eval_interval_lenient(ast: &ExprAst, bx: &IvBox) -> Result<Interval> {
    eval_interval_impl(ast, bx, false)
}

fn eval_interval_impl(ast: &ExprAst, bx: &IvBox, strict: bool) -> Result<Interval> {
    Ok(match ast {
        ExprAst::Const(c) => Interval::point(*c),
        ExprAst::StateVar(i) => bx.dims()[*i],
        ExprAst::CtrlVar(j) => bx.dims()[bx.n_state() + *j],
        ExprAst::Unary(op, c) => {
            let v = eval_interval_impl(c, bx, strict)?;
            match op {
                UnaryOp::Neg => v.neg(),
                UnaryOp::Sin => v.sin(),
                UnaryOp::Cos => v.cos(),
                UnaryOp::Exp => v.exp(),
                UnaryOp::Sqrt => v.sqrt()?,
                UnaryOp::Abs => v.abs(),
                UnaryOp::Tanh => v.tanh(),
            }
        }
        ExprAst::Binary(op, l, r) => {
            let a = eval_interval_impl(l, bx, strict)?;
            let b = eval_interval_impl(r, bx, strict)?;
            match op {
                BinOp::Add => a.add(&b),
                BinOp::Sub => a.sub(&b),
                BinOp::Mul => a.mul(&b),
                BinOp::Div => match a.div(&b) {
                    Ok(v) => v,
                    Err(e) => {
                        if strict {
                            return Err(e);
                        }
                        crate::interval::ENTIRE
                    }
                },
            }
        }
        ExprAst::IntPow(c, k) => eval_interval_impl(c, bx, strict)?.pow_int(*k),
    })
}

// ---------------------------------------------------------------------------
// forward-mode duals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: f64,
}

fn eval_dual(ast: &ExprAst, x: &[f64], u: &[f64], seed_state: Option<usize>, seed_ctrl: Option<usize>) -> Result<Dual> {
    Ok(match ast {
        ExprAst::Const(c) => Dual { v: *c, d: 0.0 },
        ExprAst::StateVar(i) => Dual {
            v: x[*i],
            d: if seed_state == Some(*i) { 1.0 } else { 0.0 },
        },
        ExprAst::CtrlVar(j) => Dual {
            v: u[*j],
            d: if seed_ctrl == Some(*j) { 1.0 } else { 0.0 },
        },
        ExprAst::Unary(op, c) => {
            let a = eval_dual(c, x, u, seed_state, seed_ctrl)?;
            match op {
                UnaryOp::Neg => Dual { v: -a.v, d: -a.d },
                UnaryOp::Sin => Dual {
                    v: a.v.sin(),
                    d: a.v.cos() * a.d,
                },
                UnaryOp::Cos => Dual {
                    v: a.v.cos(),
                    d: -a.v.sin() * a.d,
                },
                UnaryOp::Exp => {
                    let e = a.v.exp();
                    Dual { v: e, d: e * a.d }
                }
                UnaryOp::Sqrt => {
                    if a.v < 0.0 {
                        return Err(Error::Domain(format!("sqrt of negative value {}", a.v)));
                    }
                    if a.v == 0.0 && a.d != 0.0 {
                        return Err(Error::Domain("sqrt not differentiable at 0".into()));
                    }
                    let s = a.v.sqrt();
                    Dual {
                        v: s,
                        d: if a.d == 0.0 { 0.0 } else { a.d / (2.0 * s) },
                    }
                }
                UnaryOp::Abs => {
                    if a.v == 0.0 && a.d != 0.0 {
                        return Err(Error::Domain("abs not differentiable at 0".into()));
                    }
                    Dual {
                        v: a.v.abs(),
                        d: if a.v >= 0.0 { a.d } else { -a.d },
                    }
                }
                UnaryOp::Tanh => {
                    let t = a.v.tanh();
                    Dual {
                        v: t,
                        d: (1.0 - t * t) * a.d,
                    }
                }
            }
        }
        ExprAst::Binary(op, l, r) => {
            let a = eval_dual(l, x, u, seed_state, seed_ctrl)?;
            let b = eval_dual(r, x, u, seed_state, seed_ctrl)?;
            match op {
                BinOp::Add => Dual {
                    v: a.v + b.v,
                    d: a.d + b.d,
                },
                BinOp::Sub => Dual {
                    v: a.v - b.v,
                    d: a.d - b.d,
                },
                BinOp::Mul => Dual {
                    v: a.v * b.v,
                    d: a.d * b.v + a.v * b.d,
                },
                BinOp::Div => {
                    if b.v == 0.0 {
                        return Err(Error::Domain("division by zero".into()));
                    }
                    Dual {
                        v: a.v / b.v,
                        d: (a.d * b.v - a.v * b.d) / (b.v * b.v),
                    }
                }
            }
        }
        ExprAst::IntPow(c, k) => {
            let a = eval_dual(c, x, u, seed_state, seed_ctrl)?;
            let k = *k;
            if k == 0 {
                Dual { v: 1.0, d: 0.0 }
            } else {
                Dual {
                    v: a.v.powi(k as i32),
                    d: (k as f64) * a.v.powi(k as i32 - 1) * a.d,
                }
            }
        }
    })
}

/// Derivative of `ast` with respect to state variable `i` at `(x, u)`.
pub fn partial_state(ast: &ExprAst, x: &[f64], u: &[f64], i: usize) -> Result<f64> {
    Ok(eval_dual(ast, x, u, Some(i), None)?.d)
}

/// Derivative of `ast` with respect to control variable `j` at `(x, u)`.
pub fn partial_ctrl(ast: &ExprAst, x: &[f64], u: &[f64], j: usize) -> Result<f64> {
    Ok(eval_dual(ast, x, u, None, Some(j))?.d)
}

// ---------------------------------------------------------------------------
// plant model
// ---------------------------------------------------------------------------

/// Discrete-time plant `x(k+1) = f(x(k), u(k))` with `f(0, 0) = 0`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    n: usize,
    m: usize,
    dynamics: Vec<ExprAst>,
}

impl PlantModel {
    /// Builds and validates a plant: one next-state expression per state
    /// dimension and an equilibrium at the origin (|f(0,0)| <= 1e-12
    /// per component).
    pub fn new(n: usize, m: usize, dynamics: Vec<ExprAst>) -> Result<Self> {
        if dynamics.len() != n {
            return Err(Error::Config(format!(
                "expected {n} dynamics expressions, got {}",
                dynamics.len()
            )));
        }
        let zero_x = vec![0.0; n];
        let zero_u = vec![0.0; m];
        for (i, f) in dynamics.iter().enumerate() {
            let v = eval_scalar(f, &zero_x, &zero_u)?;
            if v.abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "f_{}(0,0) = {v}, origin is not an equilibrium",
                    i + 1
                )));
            }
        }
        Ok(PlantModel { n, m, dynamics })
    }

    pub fn parse(n: usize, m: usize, texts: &[String]) -> Result<Self> {
        let dynamics = texts
            .iter()
            .map(|t| parse(t, n, m))
            .collect::<Result<Vec<_>>>()?;
        PlantModel::new(n, m, dynamics)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dynamics(&self) -> &[ExprAst] {
        &self.dynamics
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.dynamics
            .iter()
            .map(|f| eval_scalar(f, x, u))
            .collect()
    }

    /// Image box of `bx` under the natural inclusion function of `f`,
    /// as a state-space box.
    pub fn image_box(&self, bx: &IvBox) -> Result<IvBox> {
        let dims = self
            .dynamics
            .iter()
            .map(|f| eval_interval(f, bx))
            .collect::<Result<Vec<_>>>()?;
        Ok(IvBox::state(dims))
    }

    /// Linearization at `(x, u)`: `A[i][j] = df_i/dx_j`, `B[i][j] = df_i/du_j`,
    /// exact to machine precision via forward-mode duals.
    pub fn jacobian_at(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut a = DMatrix::zeros(self.n, self.n);
        let mut b = DMatrix::zeros(self.n, self.m);
        for (i, f) in self.dynamics.iter().enumerate() {
            for j in 0..self.n {
                a[(i, j)] = partial_state(f, x, u, j)?;
            }
            for j in 0..self.m {
                b[(i, j)] = partial_ctrl(f, x, u, j)?;
            }
        }
        Ok((a, b))
    }
}
