//! A small constraint language over composite slices.
//!
//! ```text
//! constraint maxPorts on MM {
//!   forall s : Service@(2.0) | count(s.ports) <= 2
//! }
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Artifact, CompositeSlice};
use crate::model::{extent, FeatureKind, Metamodel, ModelInstance, Primitive, Value};
use crate::types::{TypeError, TypeRef, TypeReport};

/// Witness lists are truncated to this many ids.
pub const MAX_WITNESSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Ge,
        CmpOp::Gt,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn test(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Ge => ord != Less,
            CmpOp::Gt => ord == Greater,
        }
    }
}

/// `var.f.g`; an empty path denotes the bound object itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nav {
    pub var: String,
    pub path: Vec<String>,
}

impl fmt::Display for Nav {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.var)?;
        for step in &self.path {
            write!(f, ".{step}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Count(Nav),
    Nav(Nav),
    Int(i64),
    Str(String),
    Bool(bool),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Count(n) => write!(f, "count({n})"),
            Term::Nav(n) => write!(f, "{n}"),
            Term::Int(i) => write!(f, "{i}"),
            Term::Str(s) => write!(
                f,
                "{}",
                serde_json::to_string(s).expect("string serializes")
            ),
            Term::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pred {
    Or(Box<Pred>, Box<Pred>),
    And(Box<Pred>, Box<Pred>),
    Not(Box<Pred>),
    Cmp(Term, CmpOp, Term),
    Term(Term),
}

impl Pred {
    fn precedence(&self) -> u8 {
        match self {
            Pred::Or(..) => 0,
            Pred::And(..) => 1,
            Pred::Not(_) => 2,
            Pred::Cmp(..) | Pred::Term(_) => 3,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.fmt_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Pred::Or(a, b) => {
                a.fmt_at(f, 0)?;
                write!(f, " or ")?;
                b.fmt_at(f, 1)
            }
            Pred::And(a, b) => {
                a.fmt_at(f, 1)?;
                write!(f, " and ")?;
                b.fmt_at(f, 2)
            }
            Pred::Not(p) => {
                write!(f, "not ")?;
                p.fmt_at(f, 2)
            }
            Pred::Cmp(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Pred::Term(t) => write!(f, "{t}"),
        }
    }

    /// Every navigation chain in the predicate.
    pub fn navs(&self) -> Vec<&Nav> {
        fn term_nav(t: &Term) -> Option<&Nav> {
            match t {
                Term::Count(n) | Term::Nav(n) => Some(n),
                _ => None,
            }
        }
        match self {
            Pred::Or(a, b) | Pred::And(a, b) => {
                let mut v = a.navs();
                v.extend(b.navs());
                v
            }
            Pred::Not(p) => p.navs(),
            Pred::Cmp(a, _, b) => term_nav(a).into_iter().chain(term_nav(b)).collect(),
            Pred::Term(t) => term_nav(t).into_iter().collect(),
        }
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Constraint {
    pub name: String,
    pub on: String,
    pub quantifier: Quantifier,
    pub var: String,
    pub type_ref: TypeRef,
    pub body: Pred,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = match self.quantifier {
            Quantifier::Forall => "forall",
            Quantifier::Exists => "exists",
        };
        write!(
            f,
            "constraint {} on {} {{ {q} {} : {} | {} }}",
            self.name, self.on, self.var, self.type_ref, self.body
        )
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    /// `@(label)`
    Version(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Version(v) => write!(f, "`@({v})`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const KEYWORDS: [&str; 10] = [
    "constraint",
    "on",
    "forall",
    "exists",
    "and",
    "or",
    "not",
    "count",
    "true",
    "false",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, column, message: String| ParseError {
        line,
        column,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut advance = |n: usize, i: &mut usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                *i += 1;
            }
        };
        if c.is_whitespace() {
            advance(1, &mut i);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(1, &mut i);
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(1, &mut i);
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit))
        {
            let start = i;
            advance(1, &mut i);
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(1, &mut i);
            }
            let s: String = chars[start..i].iter().collect();
            Tok::Int(
                s.parse().map_err(|_| {
                    err(start_line, start_col, format!("integer `{s}` out of range"))
                })?,
            )
        } else if c == '"' {
            advance(1, &mut i);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(err(start_line, start_col, "unterminated string".into()))
                    }
                    Some('"') => {
                        advance(1, &mut i);
                        break;
                    }
                    Some('\\') => {
                        let esc = match chars.get(i + 1) {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            _ => return Err(err(line, col, "unknown escape".into())),
                        };
                        s.push(esc);
                        advance(2, &mut i);
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(1, &mut i);
                    }
                }
            }
            Tok::Str(s)
        } else if c == '@' {
            if chars.get(i + 1) != Some(&'(') {
                return Err(err(start_line, start_col, "expected `(` after `@`".into()));
            }
            advance(2, &mut i);
            let start = i;
            while i < chars.len() && chars[i] != ')' && !chars[i].is_whitespace() {
                advance(1, &mut i);
            }
            if chars.get(i) != Some(&')') {
                return Err(err(
                    start_line,
                    start_col,
                    "unterminated version label".into(),
                ));
            }
            let label: String = chars[start..i].iter().collect();
            if !crate::graph::is_label(&label) {
                return Err(err(
                    start_line,
                    start_col,
                    format!("invalid version label `{label}`"),
                ));
            }
            advance(1, &mut i);
            Tok::Version(label)
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = ["<=", ">=", "==", "!="]
                .into_iter()
                .find(|s| *s == two)
                .or_else(|| {
                    ["{", "}", "(", ")", ":", "|", ".", "<", ">"]
                        .into_iter()
                        .find(|s| s.starts_with(c))
                })
                .ok_or_else(|| err(start_line, start_col, format!("unexpected character `{c}`")))?;
            advance(sym.len(), &mut i);
            Tok::Sym(sym)
        };
        out.push(Token {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

// ---------------------------------------------------------------- parsing

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, expected: &str) -> ParseError {
        ParseError {
            line: t.line,
            column: t.column,
            message: format!("expected {expected}, found {}", t.tok),
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Sym(x) if x == s => Ok(()),
            _ => Err(self.error_at(&t, &format!("`{s}`"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(x) if x == kw => Ok(()),
            _ => Err(self.error_at(&t, &format!("`{kw}`"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == kw)
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(x) if !KEYWORDS.contains(&x.as_str()) => Ok(x),
            _ => Err(self.error_at(&t, "an identifier")),
        }
    }

    fn constraint(&mut self) -> Result<Constraint, ParseError> {
        self.keyword("constraint")?;
        let name = self.ident()?;
        self.keyword("on")?;
        let on = self.ident()?;
        self.sym("{")?;
        let t = self.next();
        let quantifier = match &t.tok {
            Tok::Ident(x) if x == "forall" => Quantifier::Forall,
            Tok::Ident(x) if x == "exists" => Quantifier::Exists,
            _ => return Err(self.error_at(&t, "`forall` or `exists`")),
        };
        let var = self.ident()?;
        self.sym(":")?;
        let class = self.ident()?;
        let version = match &self.peek().tok {
            Tok::Version(v) => {
                let v = v.clone();
                self.next();
                Some(v)
            }
            _ => None,
        };
        self.sym("|")?;
        let body = self.or()?;
        self.sym("}")?;
        Ok(Constraint {
            name,
            on,
            quantifier,
            var,
            type_ref: TypeRef { class, version },
            body,
        })
    }

    fn or(&mut self) -> Result<Pred, ParseError> {
        let mut left = self.and()?;
        while self.at_keyword("or") {
            self.next();
            left = Pred::Or(Box::new(left), Box::new(self.and()?));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Pred, ParseError> {
        let mut left = self.unary()?;
        while self.at_keyword("and") {
            self.next();
            left = Pred::And(Box::new(left), Box::new(self.unary()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Pred, ParseError> {
        if self.at_keyword("not") {
            self.next();
            return Ok(Pred::Not(Box::new(self.unary()?)));
        }
        if self.at_sym("(") {
            self.next();
            let p = self.or()?;
            self.sym(")")?;
            return Ok(p);
        }
        let left = self.term()?;
        let op = match &self.peek().tok {
            Tok::Sym(s) => CmpOp::ALL.into_iter().find(|o| o.symbol() == *s),
            _ => None,
        };
        match op {
            Some(op) => {
                self.next();
                Ok(Pred::Cmp(left, op, self.term()?))
            }
            None => Ok(Pred::Term(left)),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(i) => {
                self.next();
                Ok(Term::Int(i))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Term::Str(s))
            }
            Tok::Ident(ref x) if x == "true" || x == "false" => {
                self.next();
                Ok(Term::Bool(x == "true"))
            }
            Tok::Ident(ref x) if x == "count" => {
                self.next();
                self.sym("(")?;
                let n = self.nav()?;
                self.sym(")")?;
                Ok(Term::Count(n))
            }
            Tok::Ident(_) => Ok(Term::Nav(self.nav()?)),
            _ => Err(self.error_at(&t, "a term")),
        }
    }

    fn nav(&mut self) -> Result<Nav, ParseError> {
        let var = self.ident()?;
        let mut path = Vec::new();
        while self.at_sym(".") {
            self.next();
            path.push(self.ident()?);
        }
        Ok(Nav { var, path })
    }
}

/// Parses a file of one or more constraint blocks.
pub fn parse_file(text: &str) -> Result<Vec<Constraint>, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut out = Vec::new();
    while p.peek().tok != Tok::Eof {
        out.push(p.constraint()?);
    }
    if out.is_empty() {
        let t = p.peek().clone();
        return Err(p.error_at(&t, "`constraint`"));
    }
    Ok(out)
}

/// Parses exactly one constraint block.
pub fn parse(text: &str) -> Result<Constraint, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let c = p.constraint()?;
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return Err(p.error_at(&t, "end of input"));
    }
    Ok(c)
}

// ---------------------------------------------------------------- typing

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TypeCheckError {
    pub constraint: String,
    /// Where the error is, e.g. `s.inPorts`.
    pub path: String,
    pub code: String,
    pub message: String,
}

impl fmt::Display for TypeCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: at {}: {}: {}",
            self.constraint, self.path, self.code, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ty {
    Prim(Primitive),
    Obj(TypeRef),
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Prim(p) => f.write_str(p.as_str()),
            Ty::Obj(t) => write!(f, "{t}"),
        }
    }
}

struct Checker<'a> {
    ast: &'a Constraint,
    report: &'a TypeReport,
    errors: Vec<TypeCheckError>,
}

impl Checker<'_> {
    fn push(&mut self, path: String, code: &str, message: String) {
        self.errors.push(TypeCheckError {
            constraint: self.ast.name.clone(),
            path,
            code: code.to_string(),
            message,
        });
    }

    fn type_error(&mut self, path: String, e: TypeError) {
        let code = e.code();
        self.push(path, code, e.to_string());
    }

    /// Type of a navigation and whether it can yield several values.
    fn nav(&mut self, nav: &Nav) -> Option<(Ty, bool)> {
        if nav.var != self.ast.var {
            self.push(
                nav.var.clone(),
                "unbound-variable",
                format!("`{}` is not bound", nav.var),
            );
            return None;
        }
        let mut ty = Ty::Obj(self.ast.type_ref.clone());
        let mut many = false;
        let mut path = nav.var.clone();
        for step in &nav.path {
            path.push('.');
            path.push_str(step);
            let Ty::Obj(owner) = &ty else {
                self.push(
                    path,
                    "not-navigable",
                    format!("{ty} values have no features"),
                );
                return None;
            };
            let f = match self.report.resolve_feature(owner, step) {
                Ok(f) => f.clone(),
                Err(e) => {
                    self.type_error(path, e);
                    return None;
                }
            };
            many |= f.is_many();
            ty = match f.kind {
                FeatureKind::Attribute => {
                    Ty::Prim(f.primitive().expect("attribute has a primitive type"))
                }
                FeatureKind::Reference => Ty::Obj(self.report.target_type(owner, &f)),
            };
        }
        Some((ty, many))
    }

    fn term(&mut self, t: &Term) -> Option<Ty> {
        match t {
            Term::Int(_) => Some(Ty::Prim(Primitive::Int)),
            Term::Str(_) => Some(Ty::Prim(Primitive::String)),
            Term::Bool(_) => Some(Ty::Prim(Primitive::Bool)),
            Term::Count(n) => {
                let (_, many) = self.nav(n)?;
                if !many {
                    self.push(
                        n.to_string(),
                        "count-on-single",
                        "count needs a multi-valued navigation".into(),
                    );
                    return None;
                }
                Some(Ty::Prim(Primitive::Int))
            }
            Term::Nav(n) => {
                let (ty, many) = self.nav(n)?;
                if many {
                    self.push(
                        n.to_string(),
                        "multi-valued",
                        "multi-valued navigation can only be counted".into(),
                    );
                    return None;
                }
                Some(ty)
            }
        }
    }

    fn pred(&mut self, p: &Pred) {
        match p {
            Pred::Or(a, b) | Pred::And(a, b) => {
                self.pred(a);
                self.pred(b);
            }
            Pred::Not(p) => self.pred(p),
            Pred::Term(t) => {
                if let Some(ty) = self.term(t) {
                    if ty != Ty::Prim(Primitive::Bool) {
                        self.push(
                            t.to_string(),
                            "type-mismatch",
                            format!("{ty} used as a condition"),
                        );
                    }
                }
            }
            Pred::Cmp(a, op, b) => {
                let (ta, tb) = (self.term(a), self.term(b));
                let (Some(ta), Some(tb)) = (ta, tb) else {
                    return;
                };
                let ok = match (&ta, &tb) {
                    (Ty::Prim(x), Ty::Prim(y)) if x == y => {
                        *x != Primitive::Bool || op.is_equality()
                    }
                    _ => false,
                };
                if !ok {
                    self.push(
                        format!("{a} {} {b}", op.symbol()),
                        "type-mismatch",
                        format!("cannot compare {ta} {} {tb}", op.symbol()),
                    );
                }
            }
        }
    }
}

/// Type errors of `ast` against `report`; empty when well-typed.
pub fn typecheck(ast: &Constraint, report: &TypeReport) -> Vec<TypeCheckError> {
    let mut c = Checker {
        ast,
        report,
        errors: Vec::new(),
    };
    if ast.on != report.multiverse {
        c.push(
            ast.on.clone(),
            "unknown-multiverse",
            format!("types come from `{}`", report.multiverse),
        );
        return c.errors;
    }
    if let Err(e) = report.resolve(&ast.type_ref) {
        c.type_error(ast.type_ref.to_string(), e);
        return c.errors;
    }
    c.pred(&ast.body);
    c.errors
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("composite has no slice of `{0}`")]
    MissingMultiverse(String),
    #[error("slice {0} has no metamodel")]
    NoMetamodel(String),
    #[error("slice {0} has several metamodels")]
    SeveralMetamodels(String),
    #[error("`{type_ref}` asks for version {wanted}, the composite holds {present}")]
    VersionMismatch {
        type_ref: String,
        wanted: String,
        present: String,
    },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("{path}: no feature `{feature}` on {class}")]
    UnresolvedFeature {
        path: String,
        class: String,
        feature: String,
    },
    #[error("`{0}` is not bound")]
    UnboundVariable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalResult {
    pub constraint_name: String,
    pub holds: bool,
    /// Counterexamples for `forall`, examples for `exists`; id order, capped.
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Val<'m> {
    Prim(&'m Value),
    Obj(&'m str),
    Int(i64),
    Str(&'m str),
    Bool(bool),
}

struct Env<'m> {
    mm: &'m Metamodel,
    model: &'m ModelInstance,
}

impl<'m> Env<'m> {
    fn nav(&self, nav: &'m Nav, this: &'m str) -> Result<Vec<Val<'m>>, EvalError> {
        let mut current = vec![Val::Obj(this)];
        let mut path = nav.var.clone();
        for step in &nav.path {
            path.push('.');
            path.push_str(step);
            let mut next = Vec::new();
            for v in &current {
                let Val::Obj(id) = v else {
                    return Err(EvalError::UnresolvedFeature {
                        path: path.clone(),
                        class: "a primitive value".into(),
                        feature: step.clone(),
                    });
                };
                let obj = self.model.object(id).expect("link targets exist");
                let f = self.mm.feature(&obj.class_name, step).ok_or_else(|| {
                    EvalError::UnresolvedFeature {
                        path: path.clone(),
                        class: obj.class_name.clone(),
                        feature: step.clone(),
                    }
                })?;
                match f.kind {
                    FeatureKind::Attribute => next.extend(
                        obj.attribute_values
                            .get(step)
                            .into_iter()
                            .flatten()
                            .map(Val::Prim),
                    ),
                    FeatureKind::Reference => next.extend(
                        obj.links
                            .get(step)
                            .into_iter()
                            .flatten()
                            .map(|t| Val::Obj(t.as_str())),
                    ),
                }
            }
            current = next;
        }
        Ok(current)
    }

    fn term(&self, t: &'m Term, this: &'m str) -> Result<Vec<Val<'m>>, EvalError> {
        Ok(match t {
            Term::Int(i) => vec![Val::Int(*i)],
            Term::Str(s) => vec![Val::Str(s)],
            Term::Bool(b) => vec![Val::Bool(*b)],
            Term::Count(n) => vec![Val::Int(self.nav(n, this)?.len() as i64)],
            Term::Nav(n) => self.nav(n, this)?,
        })
    }

    fn pred(&self, p: &'m Pred, this: &'m str) -> Result<bool, EvalError> {
        Ok(match p {
            Pred::Or(a, b) => self.pred(a, this)? || self.pred(b, this)?,
            Pred::And(a, b) => self.pred(a, this)? && self.pred(b, this)?,
            Pred::Not(p) => !self.pred(p, this)?,
            Pred::Term(t) => {
                let vs = self.term(t, this)?;
                !vs.is_empty()
                    && vs
                        .iter()
                        .all(|v| matches!(scalar(v), Some(Scalar::Bool(true))))
            }
            Pred::Cmp(a, op, b) => {
                let (xs, ys) = (self.term(a, this)?, self.term(b, this)?);
                !xs.is_empty()
                    && !ys.is_empty()
                    && xs.iter().all(|x| {
                        ys.iter().all(|y| match (scalar(x), scalar(y)) {
                            (Some(Scalar::Int(i)), Some(Scalar::Int(j))) => op.test(i.cmp(&j)),
                            (Some(Scalar::Str(i)), Some(Scalar::Str(j))) => op.test(i.cmp(j)),
                            (Some(Scalar::Bool(i)), Some(Scalar::Bool(j))) => op.test(i.cmp(&j)),
                            (Some(Scalar::Obj(i)), Some(Scalar::Obj(j))) if op.is_equality() => {
                                op.test(i.cmp(j))
                            }
                            _ => false,
                        })
                    })
            }
        })
    }
}

enum Scalar<'m> {
    Int(i64),
    Str(&'m str),
    Bool(bool),
    Obj(&'m str),
}

fn scalar<'m>(v: &Val<'m>) -> Option<Scalar<'m>> {
    Some(match v {
        Val::Int(i) => Scalar::Int(*i),
        Val::Str(s) => Scalar::Str(s),
        Val::Bool(b) => Scalar::Bool(*b),
        Val::Obj(o) => Scalar::Obj(o),
        Val::Prim(Value::Int(i)) => Scalar::Int(*i),
        Val::Prim(Value::Str(s)) => Scalar::Str(s),
        Val::Prim(Value::Bool(b)) => Scalar::Bool(*b),
    })
}

/// Evaluates `ast` over every model in `composite` tagged as conforming to
/// the composite's slice of `ast.on`.
pub fn evaluate(ast: &Constraint, composite: &CompositeSlice) -> Result<EvalResult, EvalError> {
    let version = composite
        .version_of(&ast.on)
        .ok_or_else(|| EvalError::MissingMultiverse(ast.on.clone()))?;
    let slice_name = format!("{}@{version}", ast.on);
    let mut mms = composite
        .artifacts_of(&ast.on)
        .filter_map(|(_, a)| a.as_metamodel());
    let mm = mms
        .next()
        .ok_or_else(|| EvalError::NoMetamodel(slice_name.clone()))?;
    if mms.next().is_some() {
        return Err(EvalError::SeveralMetamodels(slice_name));
    }
    if let Some(wanted) = &ast.type_ref.version {
        if wanted != version {
            return Err(EvalError::VersionMismatch {
                type_ref: ast.type_ref.to_string(),
                wanted: wanted.clone(),
                present: version.to_string(),
            });
        }
    }
    if !mm.contains_class(&ast.type_ref.class) {
        return Err(EvalError::UnknownClass(ast.type_ref.class.clone()));
    }
    if let Some(n) = ast.body.navs().into_iter().find(|n| n.var != ast.var) {
        return Err(EvalError::UnboundVariable(n.var.clone()));
    }

    let mut matching = BTreeSet::new();
    let mut failing = BTreeSet::new();
    for (_, artifact) in composite.artifacts().iter().map(|(k, v)| (k, v.as_ref())) {
        let Artifact::Model(model) = artifact else {
            continue;
        };
        let tag = model.conforms_to();
        if tag.multiverse != ast.on || tag.version != version {
            continue;
        }
        let env = Env { mm, model };
        for obj in extent(model, mm, &ast.type_ref.class).expect("class exists") {
            if env.pred(&ast.body, &obj.id)? {
                matching.insert(obj.id.clone());
            } else {
                failing.insert(obj.id.clone());
            }
        }
    }
    let (holds, witnesses) = match ast.quantifier {
        Quantifier::Forall => (failing.is_empty(), failing),
        Quantifier::Exists => (!matching.is_empty(), matching),
    };
    Ok(EvalResult {
        constraint_name: ast.name.clone(),
        holds,
        witnesses: witnesses.into_iter().take(MAX_WITNESSES).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{compose, Multiverse, Slice, SliceRef, Universe};
    use crate::types::type_report_of;

    const MAX_PORTS: &str =
        "constraint maxPorts on MM { forall s : Service@(2.0) | count(s.ports) <= 2 }";

    #[test]
    fn parse_examples() {
        let c = parse(MAX_PORTS).unwrap();
        assert_eq!(c.name, "maxPorts");
        assert_eq!(c.type_ref, TypeRef::at("Service", "2.0"));
        assert_eq!(c.to_string(), MAX_PORTS);
        assert_eq!(parse(&c.to_string()).unwrap(), c);

        let c = parse("constraint empty on MM { forall s : Service | 1 == 1 }").unwrap();
        assert_eq!(c.body, Pred::Cmp(Term::Int(1), CmpOp::Eq, Term::Int(1)));

        let e = parse("constraint bad on MM { forall }").unwrap_err();
        assert_eq!((e.line, e.column), (1, 31));
    }

    #[test]
    fn precedence_and_printing() {
        let c = parse(
            "constraint p on MM { exists s : Service | not s.name == \"a\" or s.name != \"b\\\"\" and (true or false) }",
        )
        .unwrap();
        let Pred::Or(left, right) = &c.body else {
            panic!("{:?}", c.body)
        };
        assert!(matches!(**left, Pred::Not(_)));
        assert!(matches!(**right, Pred::And(..)));
        assert_eq!(parse(&c.to_string()).unwrap(), c);

        let nested = Pred::Or(
            Box::new(Pred::Term(Term::Bool(true))),
            Box::new(Pred::Or(
                Box::new(Pred::Term(Term::Bool(false))),
                Box::new(Pred::Term(Term::Bool(true))),
            )),
        );
        assert_eq!(nested.to_string(), "true or (false or true)");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = parse("constraint x on MM {\n  forall s : Service |\n  count(s.ports) <= }")
            .unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.column, 21);
        assert!(parse("constraint x on MM { forall s : Service@(1.0 | true }").is_err());
        assert!(parse("constraint x on MM { forall s : Service | \"open }").is_err());
        assert!(parse_file("").is_err());
        let two = format!("{MAX_PORTS}\n// second\n{MAX_PORTS}");
        assert_eq!(parse_file(&two).unwrap().len(), 2);
    }

    fn report(scope: &[(&str, Metamodel)]) -> TypeReport {
        let s: Vec<(String, &Metamodel)> = scope.iter().map(|(v, m)| (v.to_string(), m)).collect();
        type_report_of("MM", &s).unwrap()
    }

    #[test]
    fn fig7_workflow() {
        let c = parse("constraint p on MM { forall s : Service | count(s.inPorts) <= 2 }").unwrap();
        let one = report(&[("1.0", fixtures::mm_v1())]);
        let both = report(&[("1.0", fixtures::mm_v1()), ("2.0", fixtures::mm_v2())]);
        assert!(typecheck(&c, &one).is_empty());
        let errs = typecheck(&c, &both);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "needs-version-specialization");
        assert_eq!(errs[0].path, "s.inPorts");
        let v = parse("constraint p on MM { forall s : Service@(1.0) | count(s.inPorts) <= 2 }")
            .unwrap();
        assert!(typecheck(&v, &one).is_empty());
        assert!(typecheck(&v, &both).is_empty());
    }

    #[test]
    fn typecheck_rules() {
        let r = report(&[("2.0", fixtures::mm_v2())]);
        assert!(typecheck(&parse(MAX_PORTS).unwrap(), &r).is_empty());
        let codes = |text: &str| -> Vec<String> {
            typecheck(&parse(text).unwrap(), &r)
                .into_iter()
                .map(|e| e.code)
                .collect()
        };
        assert_eq!(
            codes("constraint a on MM { forall s : Service | count(s.name) == 1 }"),
            ["count-on-single"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | s.name == 1 }"),
            ["type-mismatch"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | s.ports == 1 }"),
            ["multi-valued"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | s.bogus == 1 }"),
            ["unknown-feature"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | t.name == \"\" }"),
            ["unbound-variable"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | s.name.x == 1 }"),
            ["not-navigable"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Nope | true }"),
            ["unknown-type"]
        );
        assert_eq!(
            codes("constraint a on XX { forall s : Service | true }"),
            ["unknown-multiverse"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | s.name }"),
            ["type-mismatch"]
        );
        assert_eq!(
            codes("constraint a on MM { forall s : Service | true < false }"),
            ["type-mismatch"]
        );
    }

    fn composite(model: ModelInstance, mm_version: &str, mm: Metamodel) -> CompositeSlice {
        let mms = Multiverse::new("MM")
            .unwrap()
            .add_slice(
                Slice::new(
                    mm_version,
                    [("mm".to_string(), Artifact::Metamodel(mm))].into(),
                    vec![],
                )
                .unwrap(),
                &[],
                "",
                None,
            )
            .unwrap();
        let my = Multiverse::new("MyModel")
            .unwrap()
            .add_slice(
                Slice::new(
                    "8.0",
                    [("model".to_string(), Artifact::Model(model))].into(),
                    vec![],
                )
                .unwrap(),
                &[],
                "",
                None,
            )
            .unwrap();
        let u: Universe = [("MM".into(), mms), ("MyModel".into(), my)].into();
        compose(
            &u,
            &[
                SliceRef::new("MyModel", "8.0"),
                SliceRef::new("MM", mm_version),
            ],
        )
        .unwrap()
    }

    #[test]
    fn evaluation() {
        let c = parse(MAX_PORTS).unwrap();
        let draft = composite(fixtures::converter_v2_draft(), "2.0", fixtures::mm_v2());
        let r = evaluate(&c, &draft).unwrap();
        assert!(!r.holds);
        assert_eq!(r.witnesses, ["converter"]);

        let decisions = crate::migration::DecisionFile::from_json(
            r#"{"decisions":[{"kind":"select_links","objectId":"converter","feature":"ports","keep":["in1","out1"]}]}"#,
        )
        .unwrap();
        let m = crate::migration::migrate(
            &fixtures::converter(),
            &fixtures::mm_v1(),
            &fixtures::delta_v1_v2(),
            &decisions,
        )
        .unwrap();
        let migrated = composite(m.migrated, "2.0", fixtures::mm_v2());
        assert!(evaluate(&c, &migrated).unwrap().holds);

        let none = parse("constraint e on MM { exists m : Monitor | true }").unwrap();
        let with_monitor = composite(fixtures::converter_v2_draft(), "2.0", fixtures::mm_v21());
        let r = evaluate(&none, &with_monitor).unwrap();
        assert!(!r.holds && r.witnesses.is_empty());

        let named = parse("constraint n on MM { exists p : Port | p.name == \"in2\" }").unwrap();
        assert_eq!(evaluate(&named, &draft).unwrap().witnesses, ["in2"]);

        let wrong = parse("constraint w on MM { forall s : Service@(1.0) | true }").unwrap();
        assert!(matches!(
            evaluate(&wrong, &draft),
            Err(EvalError::VersionMismatch { .. })
        ));
        let ill =
            parse("constraint w on MM { forall s : Service | count(s.inPorts) == 0 }").unwrap();
        assert!(matches!(
            evaluate(&ill, &draft),
            Err(EvalError::UnresolvedFeature { .. })
        ));
    }

    #[test]
    fn forall_is_not_exists_not() {
        let draft = composite(fixtures::converter_v2_draft(), "2.0", fixtures::mm_v2());
        let f = parse(MAX_PORTS).unwrap();
        let mut e = f.clone();
        e.quantifier = Quantifier::Exists;
        e.body = Pred::Not(Box::new(e.body));
        assert_eq!(
            evaluate(&f, &draft).unwrap().holds,
            !evaluate(&e, &draft).unwrap().holds
        );
    }
}
