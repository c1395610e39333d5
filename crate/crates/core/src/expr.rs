//! A small arithmetic expression language for case files.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?            right-associative
//! atom    := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x`, `y`, `t`; the constant `pi` is predefined and further
//! names can be bound with [`Bindings`]. Functions: `sin cos tan exp ln log
//! sqrt abs min max sinc select`, where `sinc(z) = sin(z)/z` (1 at 0) and
//! `select(c, a, b)` is `a` if `c > 0` else `b`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{msg} at column {pos} in '{src}'")]
pub struct ParseError {
    pub src: String,
    pub pos: usize,
    pub msg: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sinc,
    Min,
    Max,
    Select,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" | "log" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sinc" => (Func::Sinc, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "select" => (Func::Select, 3),
            _ => return None,
        })
    }

    fn apply1(self, a: f64) -> f64 {
        match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Ln => a.ln(),
            Func::Sqrt => a.sqrt(),
            Func::Abs => a.abs(),
            Func::Sinc => {
                if a.abs() < 1e-4 {
                    let a2 = a * a;
                    1.0 - a2 / 6.0 + a2 * a2 / 120.0
                } else {
                    a.sin() / a
                }
            }
            _ => unreachable!(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    T,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Push(f64),
    X,
    Y,
    T,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Call1(Func),
    Min,
    Max,
    Select,
}

const STACK: usize = 64;

/// Named sub-expressions that later expressions may reference. Bound names
/// are substituted at parse time.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    nodes: HashMap<String, Node>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `src` (which may reference earlier bindings) and binds it to `name`.
    pub fn bind(&mut self, name: &str, src: &str) -> Result<(), ParseError> {
        let node = Parser::new(src, self).parse()?;
        self.nodes.insert(name.to_string(), node);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }
}

/// A compiled expression of `(x, y, t)`.
#[derive(Clone, PartialEq)]
pub struct Expr {
    src: String,
    ops: Vec<Op>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.src)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        Expr::parse_with(src, &Bindings::new())
    }

    pub fn parse_with(src: &str, bindings: &Bindings) -> Result<Expr, ParseError> {
        let node = fold(Parser::new(src, bindings).parse()?);
        let mut ops = Vec::new();
        emit(&node, &mut ops);
        if max_depth(&ops) > STACK {
            return Err(ParseError {
                src: src.into(),
                pos: 0,
                msg: "expression too deeply nested".into(),
            });
        }
        Ok(Expr {
            src: src.trim().to_string(),
            ops,
        })
    }

    /// Source text as written (before binding substitution).
    pub fn source(&self) -> &str {
        &self.src
    }

    /// Returns the value if the expression does not depend on x, y or t.
    pub fn as_constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Push(v)] => Some(*v),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Push(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::X => {
                    stack[sp] = x;
                    sp += 1;
                }
                Op::Y => {
                    stack[sp] = y;
                    sp += 1;
                }
                Op::T => {
                    stack[sp] = t;
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call1(f) => stack[sp - 1] = f.apply1(stack[sp - 1]),
                Op::Select => {
                    sp -= 2;
                    let (c, a, b) = (stack[sp - 1], stack[sp], stack[sp + 1]);
                    stack[sp - 1] = if c > 0.0 { a } else { b };
                }
                bin => {
                    sp -= 1;
                    let (a, b) = (stack[sp - 1], stack[sp]);
                    stack[sp - 1] = match bin {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => a / b,
                        Op::Pow => pow(a, b),
                        Op::Min => a.min(b),
                        Op::Max => a.max(b),
                        _ => unreachable!(),
                    };
                }
            }
        }
        stack[0]
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b == b.trunc() && b.abs() <= 16.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn fold(node: Node) -> Node {
    match node {
        Node::Neg(a) => match fold(*a) {
            Node::Num(v) => Node::Num(-v),
            a => Node::Neg(Box::new(a)),
        },
        Node::Bin(op, a, b) => {
            let (a, b) = (fold(*a), fold(*b));
            if let (Node::Num(x), Node::Num(y)) = (&a, &b) {
                return Node::Num(match op {
                    '+' => x + y,
                    '-' => x - y,
                    '*' => x * y,
                    '/' => x / y,
                    _ => pow(*x, *y),
                });
            }
            Node::Bin(op, Box::new(a), Box::new(b))
        }
        Node::Call(f, args) => {
            let args: Vec<Node> = args.into_iter().map(fold).collect();
            let nums: Option<Vec<f64>> = args
                .iter()
                .map(|a| if let Node::Num(v) = a { Some(*v) } else { None })
                .collect();
            if let Some(v) = nums {
                return Node::Num(match f {
                    Func::Min => v[0].min(v[1]),
                    Func::Max => v[0].max(v[1]),
                    Func::Select => {
                        if v[0] > 0.0 {
                            v[1]
                        } else {
                            v[2]
                        }
                    }
                    f => f.apply1(v[0]),
                });
            }
            Node::Call(f, args)
        }
        n => n,
    }
}

fn emit(node: &Node, ops: &mut Vec<Op>) {
    match node {
        Node::Num(v) => ops.push(Op::Push(*v)),
        Node::X => ops.push(Op::X),
        Node::Y => ops.push(Op::Y),
        Node::T => ops.push(Op::T),
        Node::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Node::Bin(op, a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match op {
                '+' => Op::Add,
                '-' => Op::Sub,
                '*' => Op::Mul,
                '/' => Op::Div,
                _ => Op::Pow,
            });
        }
        Node::Call(f, args) => {
            for a in args {
                emit(a, ops);
            }
            ops.push(match f {
                Func::Min => Op::Min,
                Func::Max => Op::Max,
                Func::Select => Op::Select,
                f => Op::Call1(*f),
            });
        }
    }
}

fn max_depth(ops: &[Op]) -> usize {
    let (mut d, mut m) = (0i64, 0i64);
    for op in ops {
        d += match op {
            Op::Push(_) | Op::X | Op::Y | Op::T => 1,
            Op::Neg | Op::Call1(_) => 0,
            Op::Select => -2,
            _ => -1,
        };
        m = m.max(d);
    }
    m as usize
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    bindings: &'a Bindings,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, bindings: &'a Bindings) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            bindings,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            src: self.src.to_string(),
            pos: self.pos,
            msg: msg.into(),
        })
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse(mut self) -> Result<Node, ParseError> {
        if self.peek().is_none() {
            return self.err("empty expression");
        }
        let n = self.expr()?;
        if self.peek().is_some() {
            return self.err("unexpected trailing input");
        }
        Ok(n)
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(c @ (b'+' | b'-')) => c as char,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(c @ (b'*' | b'/')) => c as char,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let n = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(n)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => self.err(format!("unexpected character '{}'", c as char)),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.err("malformed number")
            }
        }
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if self.peek() == Some(b'(') {
            let Some((f, arity)) = Func::lookup(name) else {
                self.pos = start;
                return self.err(format!("unknown function '{name}'"));
            };
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return self.err("expected ')' after arguments");
            }
            if args.len() != arity {
                return self.err(format!(
                    "'{name}' takes {arity} argument(s), got {}",
                    args.len()
                ));
            }
            return Ok(Node::Call(f, args));
        }
        match name {
            "x" => Ok(Node::X),
            "y" => Ok(Node::Y),
            "t" => Ok(Node::T),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            _ => match self.bindings.nodes.get(name) {
                Some(n) => Ok(n.clone()),
                None => {
                    self.pos = start;
                    self.err(format!("unknown identifier '{name}'"))
                }
            },
        }
    }
}
