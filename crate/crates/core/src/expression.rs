//! The restricted `$(...)` expression language.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := and ( "||" and )*
//! and     := cmp ( "&&" cmp )*
//! cmp     := unary ( ("==" | "!=" | "<" | "<=" | ">" | ">=") unary )*
//! unary   := "!" unary | primary
//! primary := literal | reference | "(" expr ")"
//! reference := "inputs" "." ident [ "." ("basename" | "size" | "path") ]
//!            | "runtime" "." ("cores" | "ram" | "outdir")
//! literal := int | float | string | "true" | "false" | "null"   (ints and floats may carry a leading "-")
//! ```
//!
//! Evaluation is pure: it reads only the [`EvalContext`] it is handed.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::value::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("expression syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown reference `{0}`")]
    UnknownReference(String),
    #[error("type error: {0}")]
    Type(String),
}

fn syntax(column: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax { column, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileAttr {
    Basename,
    Size,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeField {
    Cores,
    Ram,
    Outdir,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Input { id: String, attr: Option<FileAttr> },
    Runtime(RuntimeField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Ref(Reference),
    Not(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

/// A parsed `$(...)` expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    ast: Expr,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expression {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    /// Input ids this expression reads.
    pub fn referenced_inputs(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_refs(&self.ast, &mut out);
        out.sort();
        out.dedup();
        out
    }

    pub fn eval(&self, ctx: &EvalContext) -> Result<Value, ExprError> {
        eval_expr(self, ctx)
    }
}

fn collect_refs(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Ref(Reference::Input { id, .. }) => out.push(id.clone()),
        Expr::Not(inner) => collect_refs(inner, out),
        Expr::Binary { lhs, rhs, .. } => {
            collect_refs(lhs, out);
            collect_refs(rhs, out);
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeContext {
    pub cores: i64,
    /// MiB.
    pub ram: i64,
    pub outdir: String,
}

impl Default for RuntimeContext {
    fn default() -> Self {
        RuntimeContext { cores: 1, ram: 256, outdir: String::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalContext {
    pub inputs: BTreeMap<String, Value>,
    pub runtime: RuntimeContext,
}

impl EvalContext {
    pub fn new(inputs: BTreeMap<String, Value>, runtime: RuntimeContext) -> Self {
        EvalContext { inputs, runtime }
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Dot,
    LParen,
    RParen,
    Minus,
    Bang,
    Op(BinOp),
}

fn lex(src: &str, col0: usize) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op2 = match two.as_str() {
            "==" => Some(BinOp::Eq),
            "!=" => Some(BinOp::Ne),
            "<=" => Some(BinOp::Le),
            ">=" => Some(BinOp::Ge),
            "&&" => Some(BinOp::And),
            "||" => Some(BinOp::Or),
            _ => None,
        };
        if let Some(op) = op2 {
            out.push((Tok::Op(op), col));
            i += 2;
            continue;
        }
        match c {
            '<' => out.push((Tok::Op(BinOp::Lt), col)),
            '>' => out.push((Tok::Op(BinOp::Gt), col)),
            '!' => out.push((Tok::Bang, col)),
            '.' => out.push((Tok::Dot, col)),
            '(' => out.push((Tok::LParen, col)),
            ')' => out.push((Tok::RParen, col)),
            '-' => out.push((Tok::Minus, col)),
            '"' | '\'' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(syntax(col, "unterminated string literal"));
                    };
                    if ch == quote {
                        break;
                    }
                    if ch == '\\' {
                        i += 1;
                        let esc = chars.get(i).copied().ok_or_else(|| syntax(col0 + i, "dangling escape"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    } else {
                        s.push(ch);
                    }
                    i += 1;
                }
                out.push((Tok::Str(s), col));
            }
            d if d.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| syntax(col, "bad float literal"))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| syntax(col, "integer literal out of range"))?)
                };
                out.push((tok, col));
                continue;
            }
            a if a.is_ascii_alphabetic() || a == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
                continue;
            }
            other => return Err(syntax(col, format!("unexpected character `{other}`"))),
        }
        i += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------- parsing

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end_col)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_dot(&mut self) -> Result<(), ExprError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Dot) => Ok(()),
            _ => Err(syntax(col, "expected `.`")),
        }
    }

    fn ident(&mut self) -> Result<String, ExprError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(syntax(col, "expected identifier")),
        }
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Op(BinOp::Or)) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.cmp()?;
        while self.peek() == Some(&Tok::Op(BinOp::And)) {
            self.pos += 1;
            let rhs = self.cmp()?;
            lhs = Expr::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            if matches!(op, BinOp::And | BinOp::Or) {
                break;
            }
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Tok::Bang) {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Int(i)) => Ok(Expr::Literal(Value::Int(i))),
            Some(Tok::Float(f)) => Ok(Expr::Literal(Value::Float(f))),
            Some(Tok::Str(s)) => Ok(Expr::Literal(Value::String(s))),
            Some(Tok::Minus) => match self.next() {
                Some(Tok::Int(i)) => Ok(Expr::Literal(Value::Int(-i))),
                Some(Tok::Float(f)) => Ok(Expr::Literal(Value::Float(-f))),
                _ => Err(syntax(col, "`-` must precede a numeric literal")),
            },
            Some(Tok::LParen) => {
                let inner = self.or()?;
                let c = self.col();
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(syntax(c, "expected `)`")),
                }
            }
            Some(Tok::Ident(word)) => match word.as_str() {
                "true" => Ok(Expr::Literal(Value::Bool(true))),
                "false" => Ok(Expr::Literal(Value::Bool(false))),
                "null" => Ok(Expr::Literal(Value::Null)),
                "inputs" => {
                    self.expect_dot()?;
                    let id = self.ident()?;
                    let mut attr = None;
                    if self.peek() == Some(&Tok::Dot) {
                        self.pos += 1;
                        let c = self.col();
                        attr = Some(match self.ident()?.as_str() {
                            "basename" => FileAttr::Basename,
                            "size" => FileAttr::Size,
                            "path" => FileAttr::Path,
                            other => return Err(syntax(c, format!("unknown attribute `{other}`"))),
                        });
                    }
                    Ok(Expr::Ref(Reference::Input { id, attr }))
                }
                "runtime" => {
                    self.expect_dot()?;
                    let c = self.col();
                    let field = match self.ident()?.as_str() {
                        "cores" => RuntimeField::Cores,
                        "ram" => RuntimeField::Ram,
                        "outdir" => RuntimeField::Outdir,
                        other => return Err(syntax(c, format!("unknown runtime field `{other}`"))),
                    };
                    Ok(Expr::Ref(Reference::Runtime(field)))
                }
                other => Err(syntax(col, format!("unexpected identifier `{other}`"))),
            },
            Some(_) => Err(syntax(col, "unexpected token")),
            None => Err(syntax(col, "unexpected end of expression")),
        }
    }
}

/// Parses a complete `$(...)` expression.
pub fn parse_expr(source: &str) -> Result<Expression, ExprError> {
    let inner = source
        .strip_prefix("$(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| syntax(1, "expression must be written as $(...)"))?;
    // Columns are 1-based offsets into `source`; the body starts after "$(".
    let toks = lex(inner, 3)?;
    let end_col = 3 + inner.chars().count();
    let mut p = Parser { toks, pos: 0, end_col };
    let ast = p.or()?;
    if p.pos < p.toks.len() {
        return Err(syntax(p.col(), "unexpected trailing input"));
    }
    Ok(Expression { source: source.to_string(), ast })
}

// ---------------------------------------------------------------- evaluation

/// Evaluates `expr` against `ctx`. No I/O is performed.
pub fn eval_expr(expr: &Expression, ctx: &EvalContext) -> Result<Value, ExprError> {
    eval(&expr.ast, ctx)
}

fn eval(e: &Expr, ctx: &EvalContext) -> Result<Value, ExprError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Ref(r) => resolve(r, ctx),
        Expr::Not(inner) => match eval(inner, ctx)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(ExprError::Type(format!("`!` needs a boolean, got {}", other.type_name()))),
        },
        Expr::Binary { op: op @ (BinOp::And | BinOp::Or), lhs, rhs } => {
            let l = as_bool(eval(lhs, ctx)?, *op)?;
            match (op, l) {
                (BinOp::And, false) => Ok(Value::Bool(false)),
                (BinOp::Or, true) => Ok(Value::Bool(true)),
                _ => Ok(Value::Bool(as_bool(eval(rhs, ctx)?, *op)?)),
            }
        }
        Expr::Binary { op, lhs, rhs } => {
            let l = eval(lhs, ctx)?;
            let r = eval(rhs, ctx)?;
            compare(*op, &l, &r).map(Value::Bool)
        }
    }
}

fn as_bool(v: Value, op: BinOp) -> Result<bool, ExprError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(ExprError::Type(format!(
            "`{}` needs boolean operands, got {}",
            if op == BinOp::And { "&&" } else { "||" },
            other.type_name()
        ))),
    }
}

fn resolve(r: &Reference, ctx: &EvalContext) -> Result<Value, ExprError> {
    match r {
        Reference::Runtime(RuntimeField::Cores) => Ok(Value::Int(ctx.runtime.cores)),
        Reference::Runtime(RuntimeField::Ram) => Ok(Value::Int(ctx.runtime.ram)),
        Reference::Runtime(RuntimeField::Outdir) => Ok(Value::String(ctx.runtime.outdir.clone())),
        Reference::Input { id, attr } => {
            let v = ctx.inputs.get(id).ok_or_else(|| ExprError::UnknownReference(format!("inputs.{id}")))?;
            let Some(attr) = attr else {
                return Ok(v.clone());
            };
            match (v, attr) {
                (Value::File(f), FileAttr::Basename) => Ok(Value::String(f.basename.clone())),
                (Value::File(f), FileAttr::Size) => Ok(Value::Int(f.size as i64)),
                (Value::File(f), FileAttr::Path) => Ok(Value::String(f.path.to_string_lossy().into_owned())),
                (Value::Directory(d), FileAttr::Basename) => Ok(Value::String(d.basename.clone())),
                (Value::Directory(d), FileAttr::Size) => Ok(Value::Int(d.size as i64)),
                (Value::Directory(d), FileAttr::Path) => Ok(Value::String(d.path.to_string_lossy().into_owned())),
                (other, _) => {
                    Err(ExprError::Type(format!("inputs.{id} is {}, which has no file attributes", other.type_name())))
                }
            }
        }
    }
}

fn compare(op: BinOp, l: &Value, r: &Value) -> Result<bool, ExprError> {
    let ord = match (l, r) {
        (Value::Int(a), Value::Int(b)) => a.partial_cmp(b),
        (Value::Float(a), Value::Float(b)) => a.partial_cmp(b),
        (Value::Int(a), Value::Float(b)) => (*a as f64).partial_cmp(b),
        (Value::Float(a), Value::Int(b)) => a.partial_cmp(&(*b as f64)),
        (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
        _ => None,
    };
    match op {
        BinOp::Eq | BinOp::Ne => {
            let equal = match (l, r) {
                (Value::Null, _) | (_, Value::Null) => l.is_null() && r.is_null(),
                _ if ord.is_some() => ord == Some(Ordering::Equal),
                _ if l.type_name() == r.type_name() => l == r,
                _ => return Err(ExprError::Type(format!("cannot compare {} with {}", l.type_name(), r.type_name()))),
            };
            Ok(if op == BinOp::Eq { equal } else { !equal })
        }
        _ => {
            let numeric_or_string = matches!(
                (l, r),
                (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_))
                    | (Value::String(_), Value::String(_))
            );
            if !numeric_or_string {
                return Err(ExprError::Type(format!("cannot order {} against {}", l.type_name(), r.type_name())));
            }
            // NaN compares false under every ordering operator.
            let Some(ord) = ord else { return Ok(false) };
            Ok(match op {
                BinOp::Lt => ord == Ordering::Less,
                BinOp::Le => ord != Ordering::Greater,
                BinOp::Gt => ord == Ordering::Greater,
                BinOp::Ge => ord != Ordering::Less,
                _ => unreachable!(),
            })
        }
    }
}

// ---------------------------------------------------------------- templates

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Text(String),
    Expr(Expression),
}

/// A string that may embed `$(...)` expressions, e.g. `out_$(inputs.n).txt`.
///
/// A template consisting of exactly one expression evaluates to that
/// expression's value unchanged; anything else evaluates to a string.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Template, ExprError> {
        let chars: Vec<char> = source.chars().collect();
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i] == '$' && chars.get(i + 1) == Some(&'(') {
                let start = i;
                let mut depth = 0usize;
                let mut quote: Option<char> = None;
                let mut j = i + 1;
                let mut end = None;
                while j < chars.len() {
                    let c = chars[j];
                    if let Some(q) = quote {
                        if c == '\\' {
                            j += 1;
                        } else if c == q {
                            quote = None;
                        }
                    } else if c == '"' || c == '\'' {
                        quote = Some(c);
                    } else if c == '(' {
                        depth += 1;
                    } else if c == ')' {
                        depth -= 1;
                        if depth == 0 {
                            end = Some(j);
                            break;
                        }
                    }
                    j += 1;
                }
                let end = end.ok_or_else(|| syntax(start + 1, "unterminated $("))?;
                let expr_src: String = chars[start..=end].iter().collect();
                let expr = parse_expr(&expr_src).map_err(|e| match e {
                    ExprError::Syntax { column, message } => syntax(column + start, message),
                    other => other,
                })?;
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Expr(expr));
                i = end + 1;
            } else {
                text.push(chars[i]);
                i += 1;
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(Template { source: source.to_string(), segments })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the template has no embedded expressions.
    pub fn is_literal(&self) -> bool {
        self.segments.iter().all(|s| matches!(s, Segment::Text(_)))
    }

    pub fn referenced_inputs(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Expr(e) => Some(e.referenced_inputs()),
                _ => None,
            })
            .flatten()
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn eval(&self, ctx: &EvalContext) -> Result<Value, ExprError> {
        if let [Segment::Expr(e)] = self.segments.as_slice() {
            return e.eval(ctx);
        }
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Expr(e) => out.push_str(&e.eval(ctx)?.interpolate()),
            }
        }
        Ok(Value::String(out))
    }

    /// Evaluates and insists on a string-ish result.
    pub fn eval_string(&self, ctx: &EvalContext) -> Result<String, ExprError> {
        Ok(self.eval(ctx)?.interpolate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::FileValue;
    use std::path::PathBuf;

    fn ctx(pairs: &[(&str, Value)]) -> EvalContext {
        EvalContext {
            inputs: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            runtime: RuntimeContext { cores: 2, ram: 1024, outdir: "/out".into() },
        }
    }

    fn file(size: u64) -> Value {
        Value::File(FileValue {
            path: PathBuf::from("/data/reads.fq"),
            basename: "reads.fq".into(),
            size,
            checksum: "sha256$00".into(),
            format: None,
            streamable: false,
        })
    }

    #[test]
    fn minimal_reference() {
        let e = parse_expr("$(inputs.threads)").unwrap();
        assert_eq!(e.ast(), &Expr::Ref(Reference::Input { id: "threads".into(), attr: None }));
        assert_eq!(e.eval(&ctx(&[("threads", Value::Int(4))])).unwrap(), Value::Int(4));
    }

    #[test]
    fn runtime_cores() {
        let e = parse_expr("$(runtime.cores)").unwrap();
        assert_eq!(e.eval(&ctx(&[])).unwrap(), Value::Int(2));
    }

    #[test]
    fn boolean_tree() {
        let e = parse_expr("$(inputs.size > 100 && !inputs.skip)").unwrap();
        match e.ast() {
            Expr::Binary { op: BinOp::And, lhs, rhs } => {
                assert!(matches!(**lhs, Expr::Binary { op: BinOp::Gt, .. }));
                assert!(matches!(**rhs, Expr::Not(_)));
            }
            other => panic!("unexpected tree {other:?}"),
        }
        let c = ctx(&[("size", Value::Int(150)), ("skip", Value::Bool(false))]);
        assert_eq!(e.eval(&c).unwrap(), Value::Bool(true));
    }

    #[test]
    fn statements_are_rejected() {
        let err = parse_expr("$(while(true))").unwrap_err();
        assert_eq!(err, ExprError::Syntax { column: 3, message: "unexpected identifier `while`".into() });
        let err = parse_expr("$(while(true){})").unwrap_err();
        assert_eq!(err, ExprError::Syntax { column: 14, message: "unexpected character `{`".into() });
    }

    #[test]
    fn greater_than_three_truth_table() {
        // Hand-written table for n in 1..=6.
        let expected = [false, false, false, true, true, true];
        let e = parse_expr("$(inputs.n > 3)").unwrap();
        for (n, want) in (1..=6).zip(expected) {
            assert_eq!(e.eval(&ctx(&[("n", Value::Int(n))])).unwrap(), Value::Bool(want), "n={n}");
        }
    }

    #[test]
    fn short_circuit_guards_null_file() {
        let e = parse_expr("$(inputs.f != null && inputs.f.size > 0)").unwrap();
        assert_eq!(e.eval(&ctx(&[("f", Value::Null)])).unwrap(), Value::Bool(false));
        assert_eq!(e.eval(&ctx(&[("f", file(10))])).unwrap(), Value::Bool(true));
        let e = parse_expr("$(inputs.f == null || inputs.f.size > 0)").unwrap();
        assert_eq!(e.eval(&ctx(&[("f", Value::Null)])).unwrap(), Value::Bool(true));
    }

    #[test]
    fn file_attributes() {
        let c = ctx(&[("f", file(42))]);
        assert_eq!(parse_expr("$(inputs.f.basename)").unwrap().eval(&c).unwrap(), Value::String("reads.fq".into()));
        assert_eq!(parse_expr("$(inputs.f.size)").unwrap().eval(&c).unwrap(), Value::Int(42));
        assert_eq!(parse_expr("$(inputs.f.path)").unwrap().eval(&c).unwrap(), Value::String("/data/reads.fq".into()));
        assert!(matches!(parse_expr("$(inputs.f.nameroot)"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn type_errors_not_coercions() {
        let c = ctx(&[("s", Value::String("a".into())), ("n", Value::Int(1))]);
        assert!(matches!(parse_expr("$(inputs.s < inputs.n)").unwrap().eval(&c), Err(ExprError::Type(_))));
        assert!(matches!(parse_expr("$(inputs.n && true)").unwrap().eval(&c), Err(ExprError::Type(_))));
        assert!(matches!(parse_expr("$(!inputs.n)").unwrap().eval(&c), Err(ExprError::Type(_))));
        assert!(matches!(parse_expr("$(inputs.s == 1)").unwrap().eval(&c), Err(ExprError::Type(_))));
        assert_eq!(parse_expr("$(1 < 1.5)").unwrap().eval(&c).unwrap(), Value::Bool(true));
        assert_eq!(parse_expr("$(1 == 1.0)").unwrap().eval(&c).unwrap(), Value::Bool(true));
    }

    #[test]
    fn unknown_reference() {
        let e = parse_expr("$(inputs.missing)").unwrap();
        assert_eq!(e.eval(&ctx(&[])).unwrap_err(), ExprError::UnknownReference("inputs.missing".into()));
    }

    #[test]
    fn literals_and_parentheses() {
        let c = ctx(&[]);
        let eval = |s: &str| parse_expr(s).unwrap().eval(&c).unwrap();
        assert_eq!(eval("$((1 < 2) == true)"), Value::Bool(true));
        assert_eq!(eval("$(-3)"), Value::Int(-3));
        assert_eq!(eval("$('a\\'b')"), Value::String("a'b".into()));
        assert_eq!(eval("$(2.5e1)"), Value::Float(25.0));
        assert_eq!(eval("$(null)"), Value::Null);
        assert!(matches!(parse_expr("$(1 +)"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("$((1 < 2)"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("inputs.x"), Err(ExprError::Syntax { column: 1, .. })));
    }

    #[test]
    fn template_interpolation() {
        let c = ctx(&[("n", Value::Int(7)), ("opt", Value::Null), ("f", file(1))]);
        let t = Template::parse("out_$(inputs.n).txt").unwrap();
        assert_eq!(t.eval(&c).unwrap(), Value::String("out_7.txt".into()));
        let t = Template::parse("x$(inputs.opt)y").unwrap();
        assert_eq!(t.eval(&c).unwrap(), Value::String("xy".into()));
        let t = Template::parse("$(inputs.f)").unwrap();
        assert!(matches!(t.eval(&c).unwrap(), Value::File(_)));
        let t = Template::parse("plain text (with parens)").unwrap();
        assert!(t.is_literal());
        let t = Template::parse("a $(inputs.n == ')') b").unwrap();
        assert_eq!(t.referenced_inputs(), vec!["n".to_string()]);
        let err = Template::parse("ab$(inputs.n").unwrap_err();
        assert!(matches!(err, ExprError::Syntax { column: 3, .. }));
    }
}
