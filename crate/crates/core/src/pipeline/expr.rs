//! Scalar expressions over event fields.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := or
//! or      := and  ( "||" and )*
//! and     := cmp  ( "&&" cmp )*
//! cmp     := add  ( ("<" | "<=" | ">" | ">=" | "==" | "!=") add )*
//! add     := mul  ( ("+" | "-") mul )*
//! mul     := unary ( ("*" | "/") unary )*
//! unary   := ("-" | "!") unary | primary
//! primary := NUMBER | IDENT | FUNC "(" IDENT ")" | "(" expr ")"
//! FUNC    := "len" | "sum" | "max"
//! NUMBER  := DIGITS [ "." DIGITS ] [ ("e" | "E") ["+" | "-"] DIGITS ]   (or a leading ".")
//! IDENT   := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! Binary operators associate to the left. A `-` written directly before a
//! number literal is folded into the literal. Arithmetic yields numbers,
//! comparisons yield booleans, `&&`, `||` and `!` take booleans. Array
//! fields may only appear as the argument of `len`, `sum` or `max`.
//!
//! All arithmetic is IEEE-754 double precision: division by zero gives an
//! infinity or NaN, and `==` / `!=` compare exact values.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::eventfmt::BranchType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
    Len,
    Sum,
    Max,
}

impl UnaryOp {
    fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Len => Some("len"),
            UnaryOp::Sum => Some("sum"),
            UnaryOp::Max => Some("max"),
            UnaryOp::Neg | UnaryOp::Not => None,
        }
    }

    fn from_function(name: &str) -> Option<Self> {
        match name {
            "len" => Some(UnaryOp::Len),
            "sum" => Some(UnaryOp::Sum),
            "max" => Some(UnaryOp::Max),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne => 3,
            BinaryOp::Add | BinaryOp::Sub => 4,
            BinaryOp::Mul | BinaryOp::Div => 5,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "&&",
            BinaryOp::Or => "||",
        }
    }
}

const UNARY_PRECEDENCE: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(f64),
    Field(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprType {
    Num,
    Bool,
    Array,
}

impl fmt::Display for ExprType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExprType::Num => "number",
            ExprType::Bool => "boolean",
            ExprType::Array => "array",
        })
    }
}

/// Result of evaluating an expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Num(f64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("field `{0}` missing from event")]
    MissingField(String),
}

/// One field of one event as seen by an expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue<'a> {
    Scalar(f64),
    Array(&'a [f32]),
}

/// Field lookup for a single event.
pub trait EventView {
    fn field(&self, name: &str) -> Option<FieldValue<'_>>;
}

/// An owned event: field name to scalar or array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapEvent {
    fields: std::collections::HashMap<String, OwnedField>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OwnedField {
    Scalar(f64),
    Array(Vec<f32>),
}

impl MapEvent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(mut self, name: impl Into<String>, value: f64) -> Self {
        self.fields.insert(name.into(), OwnedField::Scalar(value));
        self
    }

    pub fn array(mut self, name: impl Into<String>, values: Vec<f32>) -> Self {
        self.fields.insert(name.into(), OwnedField::Array(values));
        self
    }
}

impl EventView for MapEvent {
    fn field(&self, name: &str) -> Option<FieldValue<'_>> {
        self.fields.get(name).map(|f| match f {
            OwnedField::Scalar(x) => FieldValue::Scalar(*x),
            OwnedField::Array(v) => FieldValue::Array(v),
        })
    }
}

impl<F> EventView for F
where
    F: Fn(&str) -> Option<f64>,
{
    fn field(&self, name: &str) -> Option<FieldValue<'_>> {
        self(name).map(FieldValue::Scalar)
    }
}

impl Expr {
    pub fn field(name: impl Into<String>) -> Self {
        Expr::Field(name.into())
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Self {
        Expr::Unary(op, Box::new(operand))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Distinct field names in first-use order.
    pub fn fields(&self) -> Vec<&str> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
            match e {
                Expr::Literal(_) => {}
                Expr::Field(name) => {
                    if !out.contains(&name.as_str()) {
                        out.push(name);
                    }
                }
                Expr::Unary(_, inner) => walk(inner, out),
                Expr::Binary(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Infer the result type given the branch types of the fields.
    pub fn check<F>(&self, lookup: &F) -> Result<ExprType, ExprError>
    where
        F: Fn(&str) -> Option<BranchType>,
    {
        match self {
            Expr::Literal(_) => Ok(ExprType::Num),
            Expr::Field(name) => match lookup(name) {
                None => Err(ExprError::UnknownField(name.clone())),
                Some(t) if t.is_array() => Ok(ExprType::Array),
                Some(_) => Ok(ExprType::Num),
            },
            Expr::Unary(op, inner) => match op {
                UnaryOp::Neg => expect(inner, lookup, ExprType::Num, "-").map(|_| ExprType::Num),
                UnaryOp::Not => expect(inner, lookup, ExprType::Bool, "!").map(|_| ExprType::Bool),
                UnaryOp::Len | UnaryOp::Sum | UnaryOp::Max => {
                    let name = op.function_name().expect("function op");
                    match inner.as_ref() {
                        Expr::Field(_) if inner.check(lookup)? == ExprType::Array => Ok(ExprType::Num),
                        _ => Err(ExprError::Type(format!(
                            "{name}() takes an array field, got `{inner}`"
                        ))),
                    }
                }
            },
            Expr::Binary(op, l, r) => {
                let (operand, result) = match op {
                    BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                        (ExprType::Num, ExprType::Num)
                    }
                    BinaryOp::And | BinaryOp::Or => (ExprType::Bool, ExprType::Bool),
                    _ => (ExprType::Num, ExprType::Bool),
                };
                expect(l, lookup, operand, op.symbol())?;
                expect(r, lookup, operand, op.symbol())?;
                Ok(result)
            }
        }
    }
}

fn expect<F>(e: &Expr, lookup: &F, want: ExprType, op: &str) -> Result<(), ExprError>
where
    F: Fn(&str) -> Option<BranchType>,
{
    let got = e.check(lookup)?;
    if got == want {
        return Ok(());
    }
    Err(ExprError::Type(match got {
        ExprType::Array => format!("array field `{e}` must be reduced with len(), sum() or max()"),
        _ => format!("operator `{op}` expects a {want} operand, `{e}` is a {got}"),
    }))
}

/// Ensure `expr` is a boolean expression over known fields.
pub fn check_predicate<F>(expr: &Expr, lookup: F) -> Result<(), ExprError>
where
    F: Fn(&str) -> Option<BranchType>,
{
    match expr.check(&lookup)? {
        ExprType::Bool => Ok(()),
        other => Err(ExprError::Type(format!(
            "predicate `{expr}` must be boolean, not a {other}"
        ))),
    }
}

/// Ensure `expr` is a numeric expression over known fields.
pub fn check_quantity<F>(expr: &Expr, lookup: F) -> Result<(), ExprError>
where
    F: Fn(&str) -> Option<BranchType>,
{
    match expr.check(&lookup)? {
        ExprType::Num => Ok(()),
        other => Err(ExprError::Type(format!(
            "quantity `{expr}` must be numeric, not a {other}"
        ))),
    }
}

pub fn eval<V: EventView + ?Sized>(expr: &Expr, row: &V) -> Result<Scalar, ExprError> {
    Ok(match expr {
        Expr::Literal(x) => Scalar::Num(*x),
        Expr::Field(name) => match row.field(name) {
            Some(FieldValue::Scalar(x)) => Scalar::Num(x),
            Some(FieldValue::Array(_)) => {
                return Err(ExprError::Type(format!("array field `{name}` used as a scalar")))
            }
            None => return Err(ExprError::MissingField(name.clone())),
        },
        Expr::Unary(op, inner) => match op {
            UnaryOp::Neg => Scalar::Num(-num(inner, row)?),
            UnaryOp::Not => Scalar::Bool(!boolean(inner, row)?),
            UnaryOp::Len | UnaryOp::Sum | UnaryOp::Max => {
                let values = array(inner, row)?;
                Scalar::Num(match op {
                    UnaryOp::Len => values.len() as f64,
                    UnaryOp::Sum => values.iter().map(|&x| f64::from(x)).sum(),
                    _ if values.is_empty() => f64::NAN,
                    _ => values
                        .iter()
                        .map(|&x| f64::from(x))
                        .fold(f64::NEG_INFINITY, f64::max),
                })
            }
        },
        Expr::Binary(op, l, r) => match op {
            BinaryOp::And => Scalar::Bool(boolean(l, row)? && boolean(r, row)?),
            BinaryOp::Or => Scalar::Bool(boolean(l, row)? || boolean(r, row)?),
            _ => {
                let (a, b) = (num(l, row)?, num(r, row)?);
                match op {
                    BinaryOp::Add => Scalar::Num(a + b),
                    BinaryOp::Sub => Scalar::Num(a - b),
                    BinaryOp::Mul => Scalar::Num(a * b),
                    BinaryOp::Div => Scalar::Num(a / b),
                    BinaryOp::Lt => Scalar::Bool(a < b),
                    BinaryOp::Le => Scalar::Bool(a <= b),
                    BinaryOp::Gt => Scalar::Bool(a > b),
                    BinaryOp::Ge => Scalar::Bool(a >= b),
                    BinaryOp::Eq => Scalar::Bool(a == b),
                    BinaryOp::Ne => Scalar::Bool(a != b),
                    BinaryOp::And | BinaryOp::Or => unreachable!(),
                }
            }
        },
    })
}

fn num<V: EventView + ?Sized>(e: &Expr, row: &V) -> Result<f64, ExprError> {
    match eval(e, row)? {
        Scalar::Num(x) => Ok(x),
        Scalar::Bool(_) => Err(ExprError::Type(format!("`{e}` is boolean, expected a number"))),
    }
}

fn boolean<V: EventView + ?Sized>(e: &Expr, row: &V) -> Result<bool, ExprError> {
    match eval(e, row)? {
        Scalar::Bool(b) => Ok(b),
        Scalar::Num(_) => Err(ExprError::Type(format!("`{e}` is numeric, expected a boolean"))),
    }
}

fn array<'v, V: EventView + ?Sized>(e: &Expr, row: &'v V) -> Result<&'v [f32], ExprError> {
    match e {
        Expr::Field(name) => match row.field(name) {
            Some(FieldValue::Array(values)) => Ok(values),
            Some(FieldValue::Scalar(_)) => Err(ExprError::Type(format!("field `{name}` is not an array"))),
            None => Err(ExprError::MissingField(name.clone())),
        },
        other => Err(ExprError::Type(format!("`{other}` is not an array field"))),
    }
}

pub fn eval_predicate<V: EventView + ?Sized>(expr: &Expr, row: &V) -> Result<bool, ExprError> {
    boolean(expr, row)
}

pub fn eval_number<V: EventView + ?Sized>(expr: &Expr, row: &V) -> Result<f64, ExprError> {
    num(expr, row)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn precedence(e: &Expr) -> u8 {
            match e {
                Expr::Binary(op, ..) => op.precedence(),
                Expr::Unary(op, _) if op.function_name().is_none() => UNARY_PRECEDENCE,
                Expr::Literal(x) if x.is_sign_negative() => UNARY_PRECEDENCE,
                _ => u8::MAX,
            }
        }
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
            if paren {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Literal(x) => write!(f, "{x:?}"),
            Expr::Field(name) => f.write_str(name),
            Expr::Unary(op, inner) => match op.function_name() {
                Some(name) => write!(f, "{name}({inner})"),
                None => {
                    f.write_str(if *op == UnaryOp::Neg { "-" } else { "!" })?;
                    // `-` before a bare number would fold into the literal
                    let folds = *op == UnaryOp::Neg && matches!(inner.as_ref(), Expr::Literal(_));
                    child(f, inner, folds || precedence(inner) < UNARY_PRECEDENCE)
                }
            },
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                child(f, l, precedence(l) < p)?;
                write!(f, " {} ", op.symbol())?;
                child(f, r, precedence(r) <= p)
            }
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_expr(&text).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    const OPS: [&str; 14] = [
        "||", "&&", "<=", ">=", "==", "!=", "<", ">", "+", "-", "*", "/", "!", "=",
    ];
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
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
            let value = text[start..i].parse::<f64>().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("bad number `{}`", &text[start..i]),
            })?;
            out.push((start, Tok::Num(value)));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if c == b'(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == b')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else if let Some(op) = OPS.iter().find(|op| text[i..].starts_with(**op)) {
            if *op == "=" {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: "`=` is not an operator, use `==`".into(),
                });
            }
            out.push((i, Tok::Op(op)));
            i += op.len();
        } else {
            let ch = text[i..].chars().next().expect("in bounds");
            return Err(ExprError::Syntax {
                offset: i,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn binary_op(&self, level: u8) -> Option<BinaryOp> {
        let Some(Tok::Op(sym)) = self.peek() else {
            return None;
        };
        let op = match *sym {
            "||" => BinaryOp::Or,
            "&&" => BinaryOp::And,
            "<" => BinaryOp::Lt,
            "<=" => BinaryOp::Le,
            ">" => BinaryOp::Gt,
            ">=" => BinaryOp::Ge,
            "==" => BinaryOp::Eq,
            "!=" => BinaryOp::Ne,
            "+" => BinaryOp::Add,
            "-" => BinaryOp::Sub,
            "*" => BinaryOp::Mul,
            "/" => BinaryOp::Div,
            _ => return None,
        };
        (op.precedence() == level).then_some(op)
    }

    fn parse_level(&mut self, level: u8) -> Result<Expr, ExprError> {
        if level == UNARY_PRECEDENCE {
            return self.parse_unary();
        }
        let mut lhs = self.parse_level(level + 1)?;
        while let Some(op) = self.binary_op(level) {
            self.pos += 1;
            let rhs = self.parse_level(level + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Tok::Op("-")) => {
                self.pos += 1;
                if let Some(Tok::Num(x)) = self.peek() {
                    let x = *x;
                    self.pos += 1;
                    return Ok(Expr::Literal(-x));
                }
                Ok(Expr::unary(UnaryOp::Neg, self.parse_unary()?))
            }
            Some(Tok::Op("!")) => {
                self.pos += 1;
                Ok(Expr::unary(UnaryOp::Not, self.parse_unary()?))
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Expr::Literal(x))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Field(name));
                }
                let op = UnaryOp::from_function(&name)
                    .ok_or(ExprError::UnknownFunction { name, offset })?;
                self.pos += 1;
                let arg = match self.peek().cloned() {
                    Some(Tok::Ident(field)) => {
                        self.pos += 1;
                        Expr::Field(field)
                    }
                    _ => return Err(self.error("expected a field name")),
                };
                self.expect_rparen()?;
                Ok(Expr::unary(op, arg))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.parse_level(1)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(_) => Err(self.error("expected a number, field or `(`")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error("expected `)`"))
        }
    }
}

/// Parse expression text.
pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let mut parser = Parser {
        tokens: lex(text)?,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.parse_level(1)?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(expr)
}
