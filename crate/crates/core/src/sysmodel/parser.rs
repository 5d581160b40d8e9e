//! Text form of a system:
//!
//! ```text
//! x1' = 0.5*x1 + w1
//! x2' = sin(x1) - x2^2 ; y1 = x1
//! ```
//!
//! Statements are separated by newlines or `;`, and `#` starts a comment.
//! Precedence from tightest: `^` (right-associative), unary `-`, `* /`, `+ -`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    /// Zero-based state coordinate.
    State(usize),
    /// Zero-based input coordinate.
    Input(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64], w: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Input(i)) => w.get(*i).copied().unwrap_or(0.0),
            Expr::Neg(e) => -e.eval(x, w),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, w), b.eval(x, w));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let v: Vec<f64> = args.iter().map(|a| a.eval(x, w)).collect();
                match f {
                    Func::Sin => v[0].sin(),
                    Func::Cos => v[0].cos(),
                    Func::Exp => v[0].exp(),
                    Func::Abs => v[0].abs(),
                    Func::Sqrt => v[0].sqrt(),
                    Func::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
                    Func::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        }
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(e) => e.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // Debug formatting of f64 is the shortest exact round-trip form
            Expr::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Input(i)) => write!(f, "w{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Prime,
    Eq,
    Sep,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let start = (line, col);
        let push = |out: &mut Vec<Token>, tok| {
            out.push(Token {
                tok,
                line: start.0,
                column: start.1,
            })
        };
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '\n' {
            push(&mut out, Tok::Sep);
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let b = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
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
            let text: String = chars[b..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Syntax {
                line,
                column: col,
                message: format!("malformed number `{text}`"),
            })?;
            push(&mut out, Tok::Num(v));
            col += i - b;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let b = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            push(&mut out, Tok::Ident(chars[b..i].iter().collect()));
            col += i - b;
            continue;
        }
        let tok = match c {
            '\'' => Tok::Prime,
            '=' => Tok::Eq,
            ';' => Tok::Sep,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            other => {
                return Err(Error::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        push(&mut out, tok);
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

/// Left-hand side of a statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    State(usize),
    Output(usize),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, tok: &Token, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line: tok.line,
            column: tok.column,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let t = self.bump();
        if t.tok == want {
            Ok(())
        } else {
            self.err(&t, format!("expected {what}, found {}", describe(&t.tok)))
        }
    }

    fn statement(&mut self) -> Result<(Target, Expr, Token)> {
        let head = self.bump();
        let name = match &head.tok {
            Tok::Ident(n) => n.clone(),
            other => return self.err(&head, format!("expected `xK'` or `yK`, found {}", describe(other))),
        };
        let target = match split_indexed(&name) {
            Some(('x', k)) => {
                self.expect(Tok::Prime, "`'` after a state name")?;
                Target::State(k)
            }
            Some(('y', k)) => Target::Output(k),
            _ => {
                return self.err(&head, format!("`{name}` is not a valid assignment target"));
            }
        };
        self.expect(Tok::Eq, "`=`")?;
        let e = self.expr()?;
        match self.peek().tok {
            Tok::Sep | Tok::End => Ok((target, e, head)),
            _ => {
                let t = self.peek().clone();
                self.err(&t, format!("unexpected {}", describe(&t.tok)))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek().tok == Tok::Caret {
            self.bump();
            // the exponent may carry its own sign: 2^-1
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let t = self.bump();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Num(*v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    self.expect(Tok::LParen, "`(` after a function name")?;
                    let mut args = vec![self.expr()?];
                    while self.peek().tok == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    if !func.arity_ok(args.len()) {
                        return self.err(&t, format!("wrong number of arguments to `{name}`"));
                    }
                    return Ok(Expr::Call(func, args));
                }
                match split_indexed(name) {
                    Some(('x', k)) => Ok(Expr::Var(Var::State(k - 1))),
                    Some(('w', k)) => Ok(Expr::Var(Var::Input(k - 1))),
                    _ => Err(Error::UnknownSymbol {
                        symbol: name.clone(),
                        line: t.line,
                        column: t.column,
                    }),
                }
            }
            other => {
                // point at a dangling operator rather than at what follows it
                let prev = self.toks[self.pos.saturating_sub(2)].clone();
                let binary = matches!(prev.tok, Tok::Plus | Tok::Minus | Tok::Star | Tok::Slash | Tok::Caret);
                if binary && matches!(other, Tok::Sep | Tok::End | Tok::RParen | Tok::Comma) {
                    self.err(&prev, format!("dangling {} with no right operand", describe(&prev.tok)))
                } else {
                    self.err(&t, format!("expected an operand, found {}", describe(other)))
                }
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Prime => "`'`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Sep => "end of statement".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

/// `x12` → `('x', 12)`; indices start at 1.
fn split_indexed(name: &str) -> Option<(char, usize)> {
    let mut chars = name.chars();
    let head = chars.next()?;
    let rest = chars.as_str();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    Some((head, rest.parse().ok()?))
}

/// Parsed equations, with dimensions inferred from the assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct Equations {
    pub state: Vec<Expr>,
    pub output: Vec<Expr>,
    pub q: usize,
}

fn collect(kind: &str, defs: Vec<(usize, Expr, Token)>) -> Result<Vec<Expr>> {
    let dim = defs.iter().map(|d| d.0).max().unwrap_or(0);
    let mut slots: Vec<Option<Expr>> = vec![None; dim];
    for (k, e, tok) in defs {
        if slots[k - 1].is_some() {
            return Err(Error::Syntax {
                line: tok.line,
                column: tok.column,
                message: format!("{kind}{k} is defined twice"),
            });
        }
        slots[k - 1] = Some(e);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.ok_or_else(|| Error::Dimension(format!("{kind}{} is missing but {kind}{dim} is defined", i + 1)))
        })
        .collect()
}

pub fn parse(src: &str) -> Result<Equations> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let mut states = Vec::new();
    let mut outputs = Vec::new();
    loop {
        while p.peek().tok == Tok::Sep {
            p.bump();
        }
        if p.peek().tok == Tok::End {
            break;
        }
        let (target, e, tok) = p.statement()?;
        match target {
            Target::State(k) => states.push((k, e, tok)),
            Target::Output(k) => outputs.push((k, e, tok)),
        }
    }
    let state = collect("x", states)?;
    let output = collect("y", outputs)?;
    if state.is_empty() {
        return Err(Error::Dimension("no state equation `x1' = ...` given".into()));
    }
    if output.is_empty() {
        return Err(Error::Dimension("no output equation `y1 = ...` given".into()));
    }
    let n = state.len();
    let mut q = 0;
    let mut bad: Option<String> = None;
    for e in &state {
        e.visit_vars(&mut |v| match v {
            Var::State(i) if i >= n => bad = Some(format!("x{}", i + 1)),
            Var::Input(i) => q = q.max(i + 1),
            _ => {}
        });
    }
    for e in &output {
        e.visit_vars(&mut |v| match v {
            Var::State(i) if i >= n => bad = Some(format!("x{}", i + 1)),
            Var::Input(i) => bad = Some(format!("w{} (outputs depend on the state only)", i + 1)),
            _ => {}
        });
    }
    if let Some(symbol) = bad {
        // locate the first occurrence for the error position
        let (line, column) = p
            .toks
            .iter()
            .find(|t| matches!(&t.tok, Tok::Ident(s) if symbol.starts_with(s.as_str())))
            .map_or((0, 0), |t| (t.line, t.column));
        return Err(Error::UnknownSymbol { symbol, line, column });
    }
    Ok(Equations { state, output, q })
}

impl fmt::Display for Equations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.state.iter().enumerate() {
            writeln!(f, "x{}' = {e}", i + 1)?;
        }
        for (i, e) in self.output.iter().enumerate() {
            writeln!(f, "y{} = {e}", i + 1)?;
        }
        Ok(())
    }
}
