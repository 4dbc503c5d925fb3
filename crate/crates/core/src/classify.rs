//! Binary label functions over a schema's product space.
//!
//! [`ClassifierHandle`] wraps one backend. Truth tables and first-match
//! rule lists run in process; an external process is spoken to over a line
//! protocol. The handle memoizes labels by value vector.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::Duration;

use crate::schema::{column_map, Entity, FeatureSchema, SchemaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "0" => Some(Label::Zero),
            "1" => Some(Label::One),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("no table row for ({0})")]
    MissingRow(String),
    #[error("entity does not conform to the classifier schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("table row {row}: {message}")]
    Table { row: usize, message: String },
    #[error("value `{0}` cannot be sent over the line protocol")]
    Unrenderable(String),
    #[error("failed to spawn `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("classifier timed out on query `{0}`")]
    Timeout(String),
    #[error("malformed reply `{reply}` to query `{query}`")]
    Protocol { query: String, reply: String },
    #[error("classifier process exited before answering `{0}`")]
    ProcessExited(String),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// An explicit input/output relation; may be partial.
#[derive(Debug, Clone)]
pub struct TableClassifier {
    rows: Vec<(Vec<usize>, Label)>,
    index: HashMap<Vec<usize>, Label>,
}

impl TableClassifier {
    pub fn new(schema: &FeatureSchema, rows: Vec<(Vec<usize>, Label)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (n, (values, label)) in rows.iter().enumerate() {
            schema.check_values(values).map_err(|e| ClassifyError::Table { row: n + 1, message: e.to_string() })?;
            if index.insert(values.clone(), *label).is_some() {
                return Err(ClassifyError::Table { row: n + 1, message: "duplicate value vector".into() });
            }
        }
        Ok(TableClassifier { rows, index })
    }

    /// Build the full table of an arbitrary label function.
    pub fn tabulate(schema: &FeatureSchema, mut f: impl FnMut(&[usize]) -> Label) -> Self {
        let rows: Vec<_> = schema
            .product_space()
            .map(|v| {
                let l = f(&v);
                (v, l)
            })
            .collect();
        Self::new(schema, rows).expect("product space rows are distinct and conform")
    }

    /// Rows from CSV: feature-name columns in any order plus a `label`
    /// column; an `id` column is ignored.
    pub fn from_csv<R: Read>(schema: &FeatureSchema, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| ClassifyError::Table { row: 0, message: e.to_string() })?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or(ClassifyError::Table { row: 0, message: "missing `label` column".into() })?;
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_col && &headers[c] != "id").collect();
        let map = column_map(schema, feature_cols.iter().map(|&c| &headers[c]))?;
        let mut rows = Vec::new();
        for (n, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| ClassifyError::Table { row: n + 1, message: e.to_string() })?;
            let mut values = vec![0; schema.len()];
            for (&col, &feature) in feature_cols.iter().zip(&map) {
                values[feature] = schema
                    .value_position(feature, &record[col])
                    .map_err(|e| ClassifyError::Table { row: n + 1, message: e.to_string() })?;
            }
            let label = Label::parse(&record[label_col]).ok_or_else(|| ClassifyError::Table {
                row: n + 1,
                message: format!("label `{}` is not 0 or 1", &record[label_col]),
            })?;
            rows.push((values, label));
        }
        Self::new(schema, rows)
    }

    pub fn rows(&self) -> &[(Vec<usize>, Label)] {
        &self.rows
    }

    pub fn get(&self, values: &[usize]) -> Option<Label> {
        self.index.get(values).copied()
    }

    /// (rows present, size of the product space)
    pub fn coverage(&self, schema: &FeatureSchema) -> (usize, u128) {
        (self.rows.len(), schema.product_size())
    }

    pub fn is_total(&self, schema: &FeatureSchema) -> bool {
        self.rows.len() as u128 == schema.product_size()
    }
}

/// A conjunction of `feature = value` atoms with its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub atoms: Vec<(usize, usize)>,
    pub label: Label,
}

impl Rule {
    pub fn matches(&self, values: &[usize]) -> bool {
        self.atoms.iter().all(|&(i, v)| values[i] == v)
    }
}

/// First-match-wins rule list with an explicit default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleClassifier {
    pub rules: Vec<Rule>,
    pub default: Label,
}

impl RuleClassifier {
    pub fn eval(&self, values: &[usize]) -> Label {
        self.rules.iter().find(|r| r.matches(values)).map_or(self.default, |r| r.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let code = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        if c.is_whitespace() || c == '=' {
            if let Some(s) = start.take() {
                out.push(Token { text: &code[s..i], column: s + 1 });
            }
            if c == '=' {
                out.push(Token { text: "=", column: i + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &code[s..], column: s + 1 });
    }
    out
}

/// Parse the rule DSL:
///
/// ```text
/// program := rule* default
/// rule    := "if" atom ("and" atom)* "then" label NEWLINE
/// atom    := IDENT "=" VALUE
/// default := "default" label
/// label   := "0" | "1"
/// ```
///
/// `#` starts a comment.
pub fn parse_rules(text: &str, schema: &FeatureSchema) -> std::result::Result<RuleClassifier, RuleParseError> {
    let mut rules = Vec::new();
    let mut default = None;
    let mut last_line = 0;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let toks = tokenize(line);
        if toks.is_empty() {
            continue;
        }
        let err = |column: usize, message: String| RuleParseError { line: line_no, column, message };
        let end_col = line.split('#').next().unwrap_or("").trim_end().len() + 1;
        if default.is_some() {
            return Err(err(toks[0].column, "statement after `default`".into()));
        }
        let label_at = |k: usize| -> std::result::Result<Label, RuleParseError> {
            let t = toks.get(k).ok_or_else(|| err(end_col, "expected label 0 or 1".into()))?;
            Label::parse(t.text).ok_or_else(|| err(t.column, format!("expected label 0 or 1, found `{}`", t.text)))
        };
        match toks[0].text {
            "default" => {
                default = Some(label_at(1)?);
                if let Some(t) = toks.get(2) {
                    return Err(err(t.column, format!("unexpected `{}`", t.text)));
                }
            }
            "if" => {
                let mut atoms: Vec<(usize, usize)> = Vec::new();
                let mut k = 1;
                loop {
                    let name = toks.get(k).ok_or_else(|| err(end_col, "expected feature name".into()))?;
                    if matches!(name.text, "=" | "and" | "then") {
                        return Err(err(name.column, format!("expected feature name, found `{}`", name.text)));
                    }
                    match toks.get(k + 1) {
                        Some(t) if t.text == "=" => {}
                        Some(t) => return Err(err(t.column, format!("expected `=`, found `{}`", t.text))),
                        None => return Err(err(end_col, "expected `=`".into())),
                    }
                    let value = toks.get(k + 2).ok_or_else(|| err(end_col, "expected value".into()))?;
                    if value.text == "=" {
                        return Err(err(value.column, "expected value, found `=`".into()));
                    }
                    let feature = schema
                        .index_of(name.text)
                        .map_err(|_| err(name.column, format!("unknown feature `{}`", name.text)))?;
                    let position = schema.value_position(feature, value.text).map_err(|_| {
                        err(value.column, format!("value `{}` is not in the domain of `{}`", value.text, name.text))
                    })?;
                    // a contradictory conjunction is legal; it never fires
                    atoms.push((feature, position));
                    k += 3;
                    match toks.get(k) {
                        Some(t) if t.text == "and" => k += 1,
                        Some(t) if t.text == "then" => break,
                        Some(t) => return Err(err(t.column, format!("expected `and` or `then`, found `{}`", t.text))),
                        None => return Err(err(end_col, "expected `then`".into())),
                    }
                }
                let label = label_at(k + 1)?;
                if let Some(t) = toks.get(k + 2) {
                    return Err(err(t.column, format!("unexpected `{}`", t.text)));
                }
                rules.push(Rule { atoms, label });
            }
            other => {
                return Err(err(toks[0].column, format!("expected `if` or `default`, found `{other}`")));
            }
        }
    }
    let default = default.ok_or(RuleParseError {
        line: last_line.max(1),
        column: 1,
        message: "missing `default` line".into(),
    })?;
    Ok(RuleClassifier { rules, default })
}

/// Render rules back into the DSL.
pub fn format_rules(rc: &RuleClassifier, schema: &FeatureSchema) -> String {
    let mut out = String::new();
    for r in &rc.rules {
        let atoms: Vec<String> =
            r.atoms.iter().map(|&(i, v)| format!("{}={}", schema.name(i), schema.value_name(i, v))).collect();
        out.push_str(&format!("if {} then {}\n", atoms.join(" and "), r.label));
    }
    out.push_str(&format!("default {}\n", rc.default));
    out
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<String>,
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A classifier living in a child process.
///
/// Wire protocol: after a `#schema a,b,c` line answered by `#ok`, each
/// query is one line of comma-joined values in schema order and each
/// reply is one line `0` or `1`. At most one query is in flight.
pub struct ExternalClassifier {
    command: String,
    timeout: Duration,
    feature_names: Vec<String>,
    domains: Vec<Vec<String>>,
    process: Mutex<Option<Process>>,
}

impl fmt::Debug for ExternalClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalClassifier").field("command", &self.command).field("timeout", &self.timeout).finish()
    }
}

fn renderable(s: &str) -> bool {
    !s.is_empty() && !s.contains([',', '\n', '\r'])
}

impl ExternalClassifier {
    pub fn new(schema: &FeatureSchema, command: impl Into<String>, timeout: Duration) -> Result<Self> {
        for f in schema.features() {
            if !renderable(&f.name) {
                return Err(ClassifyError::Unrenderable(f.name.clone()));
            }
            if let Some(v) = f.domain.iter().find(|v| !renderable(v) || v.starts_with('#')) {
                return Err(ClassifyError::Unrenderable(v.clone()));
            }
        }
        Ok(ExternalClassifier {
            command: command.into(),
            timeout,
            feature_names: schema.features().iter().map(|f| f.name.clone()).collect(),
            domains: schema.features().iter().map(|f| f.domain.clone()).collect(),
            process: Mutex::new(None),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn spawn(&self) -> Result<Process> {
        let spawn_err =
            |e: std::io::Error| ClassifyError::Spawn { command: self.command.clone(), message: e.to_string() };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let mut proc = Process { child, stdin, replies: rx };
        let hello = format!("#schema {}", self.feature_names.join(","));
        match self.exchange(&mut proc, &hello) {
            Ok(reply) if reply == "#ok" => Ok(proc),
            Ok(reply) => Err(ClassifyError::Handshake(format!("expected `#ok`, got `{reply}`"))),
            Err(ClassifyError::Timeout(_)) => Err(ClassifyError::Handshake("no reply to `#schema`".into())),
            Err(ClassifyError::ProcessExited(_)) => {
                Err(ClassifyError::Handshake("process exited during handshake".into()))
            }
            Err(e) => Err(e),
        }
    }

    fn exchange(&self, proc: &mut Process, line: &str) -> Result<String> {
        let sent = writeln!(proc.stdin, "{line}").and_then(|_| proc.stdin.flush());
        if sent.is_err() {
            return Err(ClassifyError::ProcessExited(line.to_string()));
        }
        match proc.replies.recv_timeout(self.timeout) {
            Ok(reply) => Ok(reply.trim_end_matches('\r').to_string()),
            Err(RecvTimeoutError::Timeout) => Err(ClassifyError::Timeout(line.to_string())),
            Err(RecvTimeoutError::Disconnected) => Err(ClassifyError::ProcessExited(line.to_string())),
        }
    }

    pub fn query_line(&self, values: &[usize]) -> String {
        values.iter().enumerate().map(|(i, &p)| self.domains[i][p].as_str()).collect::<Vec<_>>().join(",")
    }

    pub fn classify(&self, values: &[usize]) -> Result<Label> {
        let query = self.query_line(values);
        let mut guard = self.process.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let proc = guard.as_mut().expect("process present");
        let result = self.exchange(proc, &query).and_then(|reply| {
            Label::parse(&reply).ok_or_else(|| ClassifyError::Protocol { query: query.clone(), reply })
        });
        if result.is_err() {
            // the stream is out of sync or dead; respawn on the next query
            *guard = None;
        }
        result
    }
}

#[derive(Debug)]
pub enum Backend {
    Table(TableClassifier),
    Rules(RuleClassifier),
    External(ExternalClassifier),
}

/// A label function with a value-vector keyed memo cache.
#[derive(Debug)]
pub struct ClassifierHandle {
    schema: FeatureSchema,
    backend: Backend,
    memoize: bool,
    cache: RwLock<HashMap<Vec<usize>, Label>>,
    backend_calls: AtomicUsize,
}

impl ClassifierHandle {
    pub fn new(schema: FeatureSchema, backend: Backend) -> Self {
        ClassifierHandle {
            schema,
            backend,
            memoize: true,
            cache: RwLock::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn table(schema: FeatureSchema, table: TableClassifier) -> Self {
        Self::new(schema, Backend::Table(table))
    }

    pub fn rules(schema: FeatureSchema, rules: RuleClassifier) -> Self {
        Self::new(schema, Backend::Rules(rules))
    }

    pub fn external(schema: FeatureSchema, ext: ExternalClassifier) -> Self {
        Self::new(schema, Backend::External(ext))
    }

    pub fn without_memo(mut self) -> Self {
        self.memoize = false;
        self
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Number of evaluations that reached the backend (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn classify(&self, e: &Entity) -> Result<Label> {
        self.classify_values(&e.values)
    }

    pub fn classify_values(&self, values: &[usize]) -> Result<Label> {
        self.schema.check_values(values)?;
        if self.memoize {
            let cache = self.cache.read().unwrap_or_else(|p| p.into_inner());
            if let Some(&l) = cache.get(values) {
                return Ok(l);
            }
        }
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let label = match &self.backend {
            Backend::Table(t) => t.get(values).ok_or_else(|| {
                ClassifyError::MissingRow(
                    values.iter().enumerate().map(|(i, &p)| self.schema.value_name(i, p)).collect::<Vec<_>>().join(","),
                )
            })?,
            Backend::Rules(r) => r.eval(values),
            Backend::External(x) => x.classify(values)?,
        };
        if self.memoize {
            self.cache.write().unwrap_or_else(|p| p.into_inner()).insert(values.to_vec(), label);
        }
        Ok(label)
    }
}
