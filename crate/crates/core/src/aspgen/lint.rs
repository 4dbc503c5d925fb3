//! Well-formedness checks for the ASP subset the emitter produces.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    Syntax,
    ArityClash,
    UnsafeVariable,
    DuplicateFact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Var(String),
    Num(String),
    Str(String),
    Directive(String),
    External(String),
    Op(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) | Tok::Num(s) | Tok::Str(s) => f.write_str(s),
            Tok::Directive(s) => write!(f, "#{s}"),
            Tok::External(s) => write!(f, "&{s}"),
            Tok::Op(s) => f.write_str(s),
        }
    }
}

const OPS: [&str; 18] = [":-", ":~", "!=", "<=", ">=", "<", ">", "=", "(", ")", ",", ";", ":", "{", "}", "[", "]", "@"];

/// Tokens with their line numbers; `.` terminators are kept as `Op(".")`.
fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, Diagnostic> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        let word = |i: &mut usize| -> String {
            let s = *i;
            while *i < chars.len() && (chars[*i].is_ascii_alphanumeric() || chars[*i] == '_') {
                *i += 1;
            }
            chars[s..*i].iter().collect()
        };
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '%' {
                break;
            } else if c == '"' {
                let s = i;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    i += if chars[i] == '\\' { 2 } else { 1 };
                }
                if i >= chars.len() {
                    return Err(Diagnostic {
                        line: line_no,
                        kind: DiagnosticKind::Syntax,
                        message: "unterminated string".into(),
                    });
                }
                i += 1;
                out.push((Tok::Str(chars[s..i].iter().collect()), line_no));
            } else if c == '#' {
                i += 1;
                let w = word(&mut i);
                if w == "include" {
                    // `#include<...>` is a whole statement on its own
                    while i < chars.len() && chars[i] != '>' {
                        i += 1;
                    }
                    i += 1;
                    out.push((Tok::Directive("include".into()), line_no));
                    out.push((Tok::Op("."), line_no));
                } else {
                    out.push((Tok::Directive(w), line_no));
                }
            } else if c == '&' {
                i += 1;
                out.push((Tok::External(word(&mut i)), line_no));
            } else if c.is_ascii_digit() {
                out.push((Tok::Num(word(&mut i)), line_no));
            } else if c.is_ascii_uppercase() || c == '_' {
                out.push((Tok::Var(word(&mut i)), line_no));
            } else if c.is_ascii_lowercase() {
                out.push((Tok::Ident(word(&mut i)), line_no));
            } else if c == '.' || c == '|' {
                out.push((Tok::Op(if c == '.' { "." } else { "|" }), line_no));
                i += 1;
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                match OPS.iter().find(|op| rest.starts_with(**op)) {
                    Some(op) => {
                        out.push((Tok::Op(op), line_no));
                        i += op.len();
                    }
                    None => {
                        return Err(Diagnostic {
                            line: line_no,
                            kind: DiagnosticKind::Syntax,
                            message: format!("unexpected character `{c}`"),
                        })
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Term {
    Var(String),
    Const(String),
}

#[derive(Debug, Clone)]
struct Atom {
    pred: String,
    args: Vec<Term>,
}

#[derive(Debug, Clone)]
enum Lit {
    Pos(Atom),
    Neg(Atom),
    Cmp(Term, &'static str, Term),
    /// `#int(V)` or an aggregate assigning its value to `V`.
    Binds(Vec<Term>),
    External {
        inputs: Vec<Term>,
        outputs: Vec<Term>,
    },
}

struct Stmt {
    line: usize,
    head: Vec<Atom>,
    body: Vec<Lit>,
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
}

type PResult<T> = Result<T, (usize, String)>;

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |(_, l)| *l)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err((self.line(), msg.into()))
    }

    fn next(&mut self) -> PResult<Tok> {
        match self.toks.get(self.pos) {
            Some((t, _)) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn eat(&mut self, op: &str) -> bool {
        if self.peek() == Some(&Tok::Op(match_op(op))) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: &str) -> PResult<()> {
        if self.eat(op) {
            Ok(())
        } else {
            match self.peek() {
                Some(t) => self.err(format!("expected `{op}`, found `{t}`")),
                None => self.err(format!("expected `{op}`")),
            }
        }
    }

    fn term(&mut self) -> PResult<Term> {
        match self.next()? {
            Tok::Var(v) => Ok(Term::Var(v)),
            Tok::Ident(s) | Tok::Num(s) | Tok::Str(s) => Ok(Term::Const(s)),
            t => self.err(format!("expected a term, found `{t}`")),
        }
    }

    fn terms_until(&mut self, stops: &[&str]) -> PResult<Vec<Term>> {
        let mut out = Vec::new();
        if stops.iter().any(|s| self.peek() == Some(&Tok::Op(match_op(s)))) {
            return Ok(out);
        }
        loop {
            out.push(self.term()?);
            if !self.eat(",") {
                return Ok(out);
            }
        }
    }

    fn atom(&mut self) -> PResult<Atom> {
        let pred = match self.next()? {
            Tok::Ident(s) => s,
            t => return self.err(format!("expected a predicate, found `{t}`")),
        };
        let args = if self.eat("(") {
            let a = self.terms_until(&[")"])?;
            self.expect(")")?;
            a
        } else {
            Vec::new()
        };
        Ok(Atom { pred, args })
    }

    fn cmp_op(&mut self) -> PResult<&'static str> {
        match self.next()? {
            Tok::Op(op) if matches!(op, "=" | "!=" | "<" | ">" | "<=" | ">=") => Ok(op),
            t => self.err(format!("expected a comparison, found `{t}`")),
        }
    }

    fn literal(&mut self) -> PResult<Lit> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) if s == "not" => {
                self.pos += 1;
                Ok(Lit::Neg(self.atom()?))
            }
            Some(Tok::Directive(d)) if d == "int" => {
                self.pos += 1;
                self.expect("(")?;
                let t = self.term()?;
                self.expect(")")?;
                Ok(Lit::Binds(vec![t]))
            }
            Some(Tok::Directive(d)) if matches!(d.as_str(), "count" | "sum" | "min" | "max") => {
                self.pos += 1;
                self.expect("{")?;
                // element variables are local to the aggregate
                let mut depth = 1;
                while depth > 0 {
                    match self.next()? {
                        Tok::Op("{") => depth += 1,
                        Tok::Op("}") => depth -= 1,
                        _ => {}
                    }
                }
                let op = self.cmp_op()?;
                let t = self.term()?;
                Ok(if op == "=" { Lit::Binds(vec![t]) } else { Lit::Cmp(Term::Const("#agg".into()), op, t) })
            }
            Some(Tok::External(_)) => {
                self.pos += 1;
                self.expect("(")?;
                let inputs = self.terms_until(&[";", ")"])?;
                let outputs = if self.eat(";") { self.terms_until(&[")"])? } else { Vec::new() };
                self.expect(")")?;
                Ok(Lit::External { inputs, outputs })
            }
            Some(Tok::Ident(_))
                if matches!(self.peek_at(1), Some(Tok::Op("(")) | Some(Tok::Op(",")) | Some(Tok::Op(".")) | None) =>
            {
                Ok(Lit::Pos(self.atom()?))
            }
            Some(_) => {
                let l = self.term()?;
                let op = self.cmp_op()?;
                let r = self.term()?;
                Ok(Lit::Cmp(l, op, r))
            }
            None => self.err("expected a literal"),
        }
    }

    fn body(&mut self) -> PResult<Vec<Lit>> {
        let mut out = vec![self.literal()?];
        while self.eat(",") {
            out.push(self.literal()?);
        }
        Ok(out)
    }

    fn statement(&mut self) -> PResult<Option<Stmt>> {
        let line = self.line();
        if let Some(Tok::Directive(d)) = self.peek() {
            if d == "include" {
                self.pos += 1;
                self.expect(".")?;
                return Ok(None);
            }
        }
        let mut head = Vec::new();
        let mut body = Vec::new();
        if self.eat(":~") {
            body = self.body()?;
            self.expect(".")?;
            if self.eat("[") {
                while !self.eat("]") {
                    self.next()?;
                }
            }
            return Ok(Some(Stmt { line, head, body }));
        }
        if !self.eat(":-") {
            head.push(self.atom()?);
            while matches!(self.peek(), Some(Tok::Op("|"))) || matches!(self.peek(), Some(Tok::Ident(v)) if v == "v") {
                self.pos += 1;
                head.push(self.atom()?);
            }
            if !self.eat(":-") {
                self.expect(".")?;
                return Ok(Some(Stmt { line, head, body }));
            }
        }
        body = self.body()?;
        self.expect(".")?;
        Ok(Some(Stmt { line, head, body }))
    }
}

fn match_op(op: &str) -> &'static str {
    OPS.iter().chain([".", "|"].iter()).find(|o| **o == op).copied().unwrap_or("?")
}

fn vars_of<'a>(terms: impl IntoIterator<Item = &'a Term>, out: &mut BTreeSet<String>) {
    for t in terms {
        if let Term::Var(v) = t {
            if !v.starts_with('_') {
                out.insert(v.clone());
            }
        }
    }
}

fn is_ground(t: &Term, bound: &BTreeSet<String>) -> bool {
    match t {
        Term::Const(_) => true,
        Term::Var(v) => bound.contains(v),
    }
}

fn unsafe_vars(stmt: &Stmt) -> BTreeSet<String> {
    let mut bound = BTreeSet::new();
    for l in &stmt.body {
        match l {
            Lit::Pos(a) => vars_of(&a.args, &mut bound),
            Lit::Binds(ts) => vars_of(ts, &mut bound),
            Lit::External { outputs, .. } => vars_of(outputs, &mut bound),
            _ => {}
        }
    }
    loop {
        let before = bound.len();
        for l in &stmt.body {
            if let Lit::Cmp(a, "=", b) = l {
                match (a, b) {
                    (Term::Var(v), t) | (t, Term::Var(v)) if is_ground(t, &bound) => {
                        bound.insert(v.clone());
                    }
                    _ => {}
                }
            }
        }
        if bound.len() == before {
            break;
        }
    }
    let mut used = BTreeSet::new();
    for a in &stmt.head {
        vars_of(&a.args, &mut used);
    }
    for l in &stmt.body {
        match l {
            Lit::Neg(a) => vars_of(&a.args, &mut used),
            Lit::Cmp(a, _, b) => vars_of([a, b], &mut used),
            Lit::External { inputs, .. } => vars_of(inputs, &mut used),
            _ => {}
        }
    }
    used.difference(&bound).cloned().collect()
}

/// Report syntax errors, predicates used with several arities, variables
/// not bound by a positive body literal, and repeated facts.
pub fn lint_cip(text: &str) -> Vec<Diagnostic> {
    let toks = match tokenize(text) {
        Ok(t) => t,
        Err(d) => return vec![d],
    };
    let mut parser = Parser { toks: &toks, pos: 0 };
    let mut stmts = Vec::new();
    while parser.peek().is_some() {
        match parser.statement() {
            Ok(Some(s)) => stmts.push(s),
            Ok(None) => {}
            Err((line, message)) => {
                return vec![Diagnostic { line, kind: DiagnosticKind::Syntax, message }];
            }
        }
    }

    let mut diags = Vec::new();
    let mut arities: HashMap<String, (usize, usize)> = HashMap::new();
    let mut facts: HashSet<String> = HashSet::new();
    for s in &stmts {
        let atoms = s.head.iter().chain(s.body.iter().filter_map(|l| match l {
            Lit::Pos(a) | Lit::Neg(a) => Some(a),
            _ => None,
        }));
        for a in atoms {
            match arities.get(&a.pred) {
                Some(&(n, first)) if n != a.args.len() => diags.push(Diagnostic {
                    line: s.line,
                    kind: DiagnosticKind::ArityClash,
                    message: format!("`{}` used with {} arguments; line {first} uses {n}", a.pred, a.args.len()),
                }),
                Some(_) => {}
                None => {
                    arities.insert(a.pred.clone(), (a.args.len(), s.line));
                }
            }
        }
        if s.body.is_empty() && s.head.len() == 1 {
            let a = &s.head[0];
            let key = format!(
                "{}({})",
                a.pred,
                a.args
                    .iter()
                    .map(|t| match t {
                        Term::Var(v) | Term::Const(v) => v.as_str(),
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            );
            if !facts.insert(key.clone()) {
                diags.push(Diagnostic {
                    line: s.line,
                    kind: DiagnosticKind::DuplicateFact,
                    message: format!("duplicate fact `{key}`"),
                });
            }
        }
        for v in unsafe_vars(s) {
            diags.push(Diagnostic {
                line: s.line,
                kind: DiagnosticKind::UnsafeVariable,
                message: format!("variable `{v}` is not bound by a positive body literal"),
            });
        }
    }
    diags
}
