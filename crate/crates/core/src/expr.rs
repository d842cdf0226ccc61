//! Scalar expression language used to describe subsystem dynamics, outputs,
//! Lyapunov-like functions and comparison functions in system files.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          // right associative
//! primary := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! `-x^2` therefore parses as `-(x^2)`, and `2^-1` is accepted.
//! `sat(x)` is an alias expanded at parse time to `min(1, max(-1, x))`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("unknown variable `{name}` at {pos} (allowed: {allowed})")]
    UnknownVariable {
        name: String,
        pos: usize,
        allowed: String,
    },
    #[error("unknown function `{name}` at {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    WrongArity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("no binding for variable `{0}`")]
    MissingBinding(String),
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Abs => a.abs(),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Ln => {
                if a > 0.0 {
                    a.ln()
                } else {
                    f64::NAN
                }
            }
            UnaryOp::Sqrt => a.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => a.powf(b),
            BinaryOp::Min => a.min(b),
            BinaryOp::Max => a.max(b),
        }
    }
}

/// A node of the expression tree. Variables refer to a slot in the owning
/// [`ExprAst`]'s declared variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

impl Node {
    pub fn unary(op: UnaryOp, a: Node) -> Node {
        Node::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Node, b: Node) -> Node {
        Node::Binary(op, Box::new(a), Box::new(b))
    }

    /// Number of operator nodes in the tree.
    pub fn internal_nodes(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 0,
            Node::Unary(_, a) => 1 + a.internal_nodes(),
            Node::Binary(_, a, b) => 1 + a.internal_nodes() + b.internal_nodes(),
        }
    }

    fn eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        let out = match self {
            Node::Const(c) => return Ok(*c),
            Node::Var(slot) => return Ok(values[*slot]),
            Node::Unary(op, a) => {
                let r = op.apply(a.eval(values)?);
                if !r.is_finite() {
                    return Err(ExprError::NonFinite { op: op.name() });
                }
                r
            }
            Node::Binary(op, a, b) => {
                let r = op.apply(a.eval(values)?, b.eval(values)?);
                if !r.is_finite() {
                    return Err(ExprError::NonFinite { op: op.name() });
                }
                r
            }
        };
        Ok(out)
    }

    fn uses_var(&self, slot: usize) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(s) => *s == slot,
            Node::Unary(_, a) => a.uses_var(slot),
            Node::Binary(_, a, b) => a.uses_var(slot) || b.uses_var(slot),
        }
    }
}

/// A parsed expression together with the variable list it was parsed against.
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    vars: Vec<String>,
    root: Node,
}

impl ExprAst {
    /// Builds an expression from a hand-constructed tree. Every `Var` slot must
    /// index into `vars`.
    pub fn from_node(vars: &[&str], root: Node) -> Self {
        let vars: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
        fn check(n: &Node, len: usize) {
            match n {
                Node::Const(_) => {}
                Node::Var(s) => assert!(*s < len, "variable slot {s} out of range"),
                Node::Unary(_, a) => check(a, len),
                Node::Binary(_, a, b) => {
                    check(a, len);
                    check(b, len)
                }
            }
        }
        check(&root, vars.len());
        ExprAst { vars, root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Declared variables that actually appear in the tree.
    pub fn free_vars(&self) -> Vec<&str> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(i, _)| self.root.uses_var(*i))
            .map(|(_, v)| v.as_str())
            .collect()
    }

    /// Evaluates with values given positionally, aligned with [`ExprAst::vars`].
    pub fn eval_slice(&self, values: &[f64]) -> Result<f64, ExprError> {
        assert_eq!(
            values.len(),
            self.vars.len(),
            "value slice does not match the declared variable list"
        );
        self.root.eval(values)
    }

    /// Evaluates with named bindings. Only variables that occur in the tree need
    /// a binding.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let mut values = vec![0.0; self.vars.len()];
        for (i, name) in self.vars.iter().enumerate() {
            match bindings.get(name) {
                Some(v) => values[i] = *v,
                None if self.root.uses_var(i) => {
                    return Err(ExprError::MissingBinding(name.clone()))
                }
                None => {}
            }
        }
        self.root.eval(&values)
    }
}

pub fn parse_expr(text: &str, vars: &[&str]) -> Result<ExprAst, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        vars,
        end: text.len(),
    };
    let root = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            pos: tok.pos,
            expected: "operator or end of input".into(),
            found: tok.kind.describe(),
        });
    }
    Ok(ExprAst {
        vars: vars.iter().map(|v| v.to_string()).collect(),
        root,
    })
}

pub fn eval_expr(ast: &ExprAst, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
    ast.eval(bindings)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(n) => format!("number {n}"),
            TokKind::Ident(s) => format!("`{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => {
                i += 1;
                TokKind::Op(c)
            }
            '(' => {
                i += 1;
                TokKind::LParen
            }
            ')' => {
                i += 1;
                TokKind::RParen
            }
            ',' => {
                i += 1;
                TokKind::Comma
            }
            '0'..='9' | '.' => {
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
                    pos: start,
                    expected: "number".into(),
                    found: format!("`{lexeme}`"),
                })?;
                TokKind::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                TokKind::Ident(text[start..i].to_string())
            }
            other => {
                return Err(ExprError::Syntax {
                    pos: start,
                    expected: "expression".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        out.push(Token { kind, pos: start });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn unexpected(&self, expected: &str) -> ExprError {
        match self.peek() {
            Some(tok) => ExprError::Syntax {
                pos: tok.pos,
                expected: expected.into(),
                found: tok.kind.describe(),
            },
            None => ExprError::Syntax {
                pos: self.end,
                expected: expected.into(),
                found: "end of input".into(),
            },
        }
    }

    fn expect(&mut self, kind: TokKind, expected: &str) -> Result<(), ExprError> {
        match self.peek() {
            Some(tok) if tok.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if op == '+' {
                BinaryOp::Add
            } else {
                BinaryOp::Sub
            };
            lhs = Node::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == '*' {
                BinaryOp::Mul
            } else {
                BinaryOp::Div
            };
            lhs = Node::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Node::unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.next() else {
            self.pos -= 1;
            return Err(self.unexpected("expression"));
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokKind::LParen,
                        ..
                    })
                ) {
                    self.pos += 1;
                    let args = self.args()?;
                    return call(&name, tok.pos, args);
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(slot) => Ok(Node::Var(slot)),
                    None => Err(ExprError::UnknownVariable {
                        name,
                        pos: tok.pos,
                        allowed: self.vars.join(", "),
                    }),
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.unexpected("expression"))
            }
        }
    }

    fn args(&mut self) -> Result<Vec<Node>, ExprError> {
        let mut args = Vec::new();
        if matches!(
            self.peek(),
            Some(Token {
                kind: TokKind::RParen,
                ..
            })
        ) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.peek().map(|t| &t.kind) {
                Some(TokKind::Comma) => self.pos += 1,
                Some(TokKind::RParen) => {
                    self.pos += 1;
                    return Ok(args);
                }
                _ => return Err(self.unexpected("`,` or `)`")),
            }
        }
    }
}

fn call(name: &str, pos: usize, mut args: Vec<Node>) -> Result<Node, ExprError> {
    let unary = match name {
        "abs" => Some(UnaryOp::Abs),
        "sin" => Some(UnaryOp::Sin),
        "cos" => Some(UnaryOp::Cos),
        "exp" => Some(UnaryOp::Exp),
        "ln" => Some(UnaryOp::Ln),
        "sqrt" => Some(UnaryOp::Sqrt),
        _ => None,
    };
    let binary = match name {
        "min" => Some(BinaryOp::Min),
        "max" => Some(BinaryOp::Max),
        "pow" => Some(BinaryOp::Pow),
        _ => None,
    };
    let arity = |expected: usize, found: usize| ExprError::WrongArity {
        name: name.to_string(),
        expected,
        found,
    };
    if let Some(op) = unary {
        if args.len() != 1 {
            return Err(arity(1, args.len()));
        }
        return Ok(Node::unary(op, args.pop().unwrap()));
    }
    if let Some(op) = binary {
        if args.len() != 2 {
            return Err(arity(2, args.len()));
        }
        let b = args.pop().unwrap();
        let a = args.pop().unwrap();
        return Ok(Node::binary(op, a, b));
    }
    if name == "sat" {
        if args.len() != 1 {
            return Err(arity(1, args.len()));
        }
        return Ok(sat_node(args.pop().unwrap()));
    }
    Err(ExprError::UnknownFunction {
        name: name.to_string(),
        pos,
    })
}

/// `min(1, max(-1, x))`, written the way the parser would produce it.
pub fn sat_node(x: Node) -> Node {
    Node::binary(
        BinaryOp::Min,
        Node::Const(1.0),
        Node::binary(
            BinaryOp::Max,
            Node::unary(UnaryOp::Neg, Node::Const(1.0)),
            x,
        ),
    )
}

struct Printer<'a> {
    node: &'a Node,
    vars: &'a [String],
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |node| Printer {
            node,
            vars: self.vars,
        };
        match self.node {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(slot) => write!(f, "{}", self.vars[*slot]),
            Node::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", sub(a)),
            Node::Unary(op, a) => write!(f, "{}({})", op.name(), sub(a)),
            Node::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
                write!(f, "{}({}, {})", op.name(), sub(a), sub(b))
            }
            Node::Binary(op, a, b) => write!(f, "({} {} {})", sub(a), op.name(), sub(b)),
        }
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer {
            node: &self.root,
            vars: &self.vars,
        }
        .fmt(f)
    }
}
