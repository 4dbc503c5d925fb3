//! Emission of Counterfactual Intervention Programs (CIPs) as ASP source.
//!
//! A CIP encodes the interventions on one entity as an answer-set program:
//! stable models contain `ent(e,…,s)` atoms for the counterfactual
//! entities reached by changing one feature value at a time. The engine
//! never runs a solver; it only writes text.

mod lint;

pub use lint::{lint_cip, Diagnostic, DiagnosticKind};

use std::fmt;

use crate::classify::{Backend, ClassifierHandle, Label, RuleClassifier};
use crate::constrain::{ActionMode, ConstraintSet, DenialConstraint, OneHotGroup, Polarity};
use crate::schema::{Entity, FeatureSchema, SchemaError};

#[derive(Debug, thiserror::Error)]
pub enum AspError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("classifier cannot be embedded as {embedding}: {reason}")]
    NotEmbeddable { embedding: &'static str, reason: String },
    #[error("the external-stub embedding needs the asp-core-2 dialect")]
    DialectMismatch,
    #[error("`{0}` cannot be rendered as a solver constant")]
    Unrenderable(String),
}

pub type Result<T> = std::result::Result<T, AspError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dialect {
    #[default]
    DlvComplex,
    /// ASP-Core-2 with external atoms, as accepted by DLV2.
    AspCore2External,
}

impl Dialect {
    fn disjunction(self) -> &'static str {
        match self {
            Dialect::DlvComplex => " v ",
            Dialect::AspCore2External => " | ",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Embedding {
    /// One `cls(…,l).` fact per product entity.
    #[default]
    Facts,
    /// The rule list compiled into `cls` rules.
    Rules,
    /// A `&classifier` external atom answered by the solver's host.
    ExternalStub,
}

impl Embedding {
    pub fn as_str(self) -> &'static str {
        match self {
            Embedding::Facts => "facts",
            Embedding::Rules => "rules",
            Embedding::ExternalStub => "external-stub",
        }
    }
}

/// Identifier used as the second argument of `expl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExplIds {
    /// 1-based feature index.
    #[default]
    Index,
    /// Lowercased feature name.
    Name,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipOptions {
    pub dialect: Dialect,
    pub include_weak: bool,
    pub include_count: bool,
    pub shift: bool,
    pub embedding: Embedding,
    pub hard_constraints: ConstraintSet,
    pub entity_constant: String,
    pub expl_ids: ExplIds,
}

impl Default for CipOptions {
    fn default() -> Self {
        CipOptions {
            dialect: Dialect::default(),
            include_weak: false,
            include_count: false,
            shift: false,
            embedding: Embedding::default(),
            hard_constraints: ConstraintSet::new(),
            entity_constant: "e".into(),
            expl_ids: ExplIds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Include,
    Classifier,
    Facts,
    Transition,
    Intervention,
    Choice,
    Stop,
    ProgramConstraints,
    Expl,
    Count,
    Weak,
    Hard,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Include => "include",
            Section::Classifier => "classifier",
            Section::Facts => "facts",
            Section::Transition => "transition rules",
            Section::Intervention => "intervention rule",
            Section::Choice => "chosen/diffchoice rules",
            Section::Stop => "stop rule",
            Section::ProgramConstraints => "program constraints",
            Section::Expl => "expl rules",
            Section::Count => "count rule",
            Section::Weak => "weak constraints",
            Section::Hard => "hard constraints",
        }
    }
}

/// Emitted program text split into sections of one statement per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipProgram {
    dialect: Dialect,
    sections: Vec<(Section, Vec<String>)>,
}

/// Entry of [`CipProgram::section_index`]: 1-based inclusive line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionSpan {
    pub section: Section,
    pub first_line: usize,
    pub last_line: usize,
    pub statements: usize,
}

impl CipProgram {
    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    pub fn sections(&self) -> &[(Section, Vec<String>)] {
        &self.sections
    }

    pub fn section(&self, s: Section) -> Option<&[String]> {
        self.sections.iter().find(|(k, _)| *k == s).map(|(_, v)| v.as_slice())
    }

    pub fn text(&self) -> String {
        self.to_string()
    }

    pub fn section_index(&self) -> Vec<SectionSpan> {
        let mut line = 1;
        let mut out = Vec::new();
        for (s, stmts) in &self.sections {
            out.push(SectionSpan {
                section: *s,
                first_line: line,
                last_line: line + stmts.len() - 1,
                statements: stmts.len(),
            });
            line += stmts.len() + 1;
        }
        out
    }
}

impl fmt::Display for CipProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (_, stmts)) in self.sections.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            for s in stmts {
                writeln!(f, "{s}")?;
            }
        }
        Ok(())
    }
}

fn is_constant(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        Some('0') => s.len() == 1,
        Some(c) if c.is_ascii_digit() => chars.all(|c| c.is_ascii_digit()),
        _ => false,
    }
}

/// Render a value as a solver term. Lowercase identifiers and natural
/// numbers pass through unchanged; anything else becomes a quoted string
/// with `\` and `"` escaped, which is reversible.
pub fn render_constant(s: &str) -> Result<String> {
    if is_constant(s) {
        return Ok(s.to_string());
    }
    if s.chars().any(char::is_control) {
        return Err(AspError::Unrenderable(s.to_string()));
    }
    Ok(format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")))
}

/// Inverse of [`render_constant`].
pub fn parse_constant(term: &str) -> String {
    match term.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
        Some(inner) => {
            let mut out = String::new();
            let mut chars = inner.chars();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    if let Some(n) = chars.next() {
                        out.push(n);
                    }
                } else {
                    out.push(c);
                }
            }
            out
        }
        None => term.to_string(),
    }
}

/// `X,Y,Z` for up to three features, `X1..Xn` beyond.
pub fn variables(n: usize) -> Vec<String> {
    if n <= 3 {
        ["X", "Y", "Z"][..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("X{i}")).collect()
    }
}

struct Emitter<'a> {
    schema: &'a FeatureSchema,
    opts: &'a CipOptions,
    vars: Vec<String>,
    primed: Vec<String>,
    /// rendered domain values per feature
    values: Vec<Vec<String>>,
}

impl<'a> Emitter<'a> {
    fn new(schema: &'a FeatureSchema, opts: &'a CipOptions) -> Result<Self> {
        let vars = variables(schema.len());
        let primed = vars.iter().map(|v| format!("{v}p")).collect();
        let values = schema
            .features()
            .iter()
            .map(|f| f.domain.iter().map(|v| render_constant(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Emitter { schema, opts, vars, primed, values })
    }

    fn n(&self) -> usize {
        self.vars.len()
    }

    fn tuple(&self) -> String {
        self.vars.join(",")
    }

    fn primed_tuple(&self) -> String {
        self.primed.join(",")
    }

    /// Variables with position `i` primed.
    fn swap_one(&self, i: usize) -> String {
        let mut v = self.vars.clone();
        v[i] = self.primed[i].clone();
        v.join(",")
    }

    fn doms(&self, vars: &[String], skip: &[bool]) -> Vec<String> {
        vars.iter().enumerate().filter(|(i, _)| !skip[*i]).map(|(i, v)| format!("dom{}({v})", i + 1)).collect()
    }

    fn classifier(&self, classifier: &ClassifierHandle) -> Result<Vec<String>> {
        let t = self.tuple();
        match self.opts.embedding {
            Embedding::Facts => {
                let rows: Vec<(Vec<usize>, Label)> = match classifier.backend() {
                    Backend::Table(table) => {
                        if !table.is_total(self.schema) {
                            let (have, want) = table.coverage(self.schema);
                            return Err(AspError::NotEmbeddable {
                                embedding: "facts",
                                reason: format!("table covers {have} of {want} entities"),
                            });
                        }
                        table.rows().to_vec()
                    }
                    Backend::Rules(rules) => self
                        .schema
                        .product_space()
                        .map(|v| {
                            let l = rules.eval(&v);
                            (v, l)
                        })
                        .collect(),
                    Backend::External(_) => {
                        return Err(AspError::NotEmbeddable {
                            embedding: "facts",
                            reason: "external classifiers are not tabulated".into(),
                        })
                    }
                };
                Ok(rows.iter().map(|(v, l)| format!("cls({},{l}).", self.render_values(v))).collect())
            }
            Embedding::Rules => match classifier.backend() {
                Backend::Rules(rules) => Ok(self.rule_block(rules)),
                _ => {
                    Err(AspError::NotEmbeddable { embedding: "rules", reason: "classifier is not a rule list".into() })
                }
            },
            Embedding::ExternalStub => {
                let doms = self.doms(&self.vars, &vec![false; self.n()]);
                Ok(vec![format!("cls({t},L) :- &classifier({t};L), {}.", doms.join(", "))])
            }
        }
    }

    fn render_values(&self, v: &[usize]) -> String {
        v.iter().enumerate().map(|(i, &p)| self.values[i][p].as_str()).collect::<Vec<_>>().join(",")
    }

    /// Body of one rule: its atoms in written order, then domain atoms for
    /// the variables the atoms leave free.
    fn rule_body(&self, atoms: &[(usize, usize)]) -> String {
        let mut bound = vec![false; self.n()];
        let mut body: Vec<String> = atoms
            .iter()
            .map(|&(i, p)| {
                bound[i] = true;
                format!("{} = {}", self.vars[i], self.values[i][p])
            })
            .collect();
        body.extend(self.doms(&self.vars, &bound));
        body.join(", ")
    }

    fn rule_block(&self, rc: &RuleClassifier) -> Vec<String> {
        let t = self.tuple();
        let all_doms = self.doms(&self.vars, &vec![false; self.n()]).join(", ");
        let d = rc.default;
        // Every rule overriding the default: rule order does not matter and
        // the default is negation as failure on the other label.
        if rc.rules.iter().all(|r| r.label != d) {
            let mut out: Vec<String> =
                rc.rules.iter().map(|r| format!("cls({t},{}) :- {}.", r.label, self.rule_body(&r.atoms))).collect();
            if rc.rules.is_empty() {
                out.push(format!("cls({t},{d}) :- {all_doms}."));
            } else {
                let other = if d == Label::One { Label::Zero } else { Label::One };
                out.push(format!("cls({t},{d}) :- {all_doms}, not cls({t},{other})."));
            }
            return out;
        }
        // Mixed labels: first match wins, so each rule fires only when no
        // earlier rule matched.
        let mut out = Vec::new();
        for (j, r) in rc.rules.iter().enumerate() {
            out.push(format!("match{}({t}) :- {}.", j + 1, self.rule_body(&r.atoms)));
        }
        let earlier = |j: usize| -> String { (1..=j).map(|k| format!(", not match{k}({t})")).collect() };
        for (j, r) in rc.rules.iter().enumerate() {
            out.push(format!("cls({t},{}) :- match{}({t}){}.", r.label, j + 1, earlier(j)));
        }
        out.push(format!("cls({t},{d}) :- {all_doms}{}.", earlier(rc.rules.len())));
        out
    }

    fn facts(&self, e: &Entity) -> Result<Vec<String>> {
        let mut out: Vec<String> = (0..self.n())
            .map(|i| self.values[i].iter().map(|v| format!("dom{}({v}).", i + 1)).collect::<Vec<_>>().join(" "))
            .collect();
        let c = render_constant(&self.opts.entity_constant)?;
        out.push(format!("ent({c},{},o).", self.render_values(&e.values)));
        Ok(out)
    }

    fn intervention(&self) -> String {
        let t = self.tuple();
        let head: Vec<String> = (0..self.n()).map(|i| format!("ent(E,{},do)", self.swap_one(i))).collect();
        let mut body = vec![format!("ent(E,{t},tr)"), format!("cls({t},1)")];
        body.extend(self.doms(&self.primed, &vec![false; self.n()]));
        body.extend((0..self.n()).map(|i| format!("{} != {}", self.vars[i], self.primed[i])));
        body.extend((0..self.n()).map(|i| format!("chosen{}({t},{})", i + 1, self.primed[i])));
        format!("{} :- {}.", head.join(self.opts.dialect.disjunction()), body.join(", "))
    }

    fn choice(&self) -> Vec<String> {
        let t = self.tuple();
        let mut out = Vec::new();
        for i in 0..self.n() {
            let k = i + 1;
            out.push(format!(
                "chosen{k}({t},U) :- ent(E,{t},tr), cls({t},1), dom{k}(U), U != {}, not diffchoice{k}({t},U).",
                self.vars[i]
            ));
            out.push(format!("diffchoice{k}({t}, U) :- chosen{k}({t},Up), U != Up, dom{k}(U)."));
        }
        out
    }

    fn expl(&self) -> Result<Vec<String>> {
        let (t, p) = (self.tuple(), self.primed_tuple());
        (0..self.n())
            .map(|i| {
                let id = match self.opts.expl_ids {
                    ExplIds::Index => (i + 1).to_string(),
                    ExplIds::Name => render_constant(&self.schema.name(i).to_lowercase())?,
                };
                Ok(format!(
                    "expl(E,{id},{}) :- ent(E,{t},o), ent(E,{p},s), {} != {}.",
                    self.vars[i], self.vars[i], self.primed[i]
                ))
            })
            .collect()
    }

    fn count(&self) -> Result<String> {
        let c = render_constant(&self.opts.entity_constant)?;
        Ok(match self.opts.dialect {
            Dialect::DlvComplex => format!("invResp(E,M) :- #count{{I: expl(E,I,_)}} = M, #int(M), E = {c}."),
            Dialect::AspCore2External => format!("invResp(E,M) :- #count{{I: expl(E,I,_)}} = M, E = {c}."),
        })
    }

    fn weak(&self) -> Vec<String> {
        let (t, p) = (self.tuple(), self.primed_tuple());
        (0..self.n())
            .map(|i| {
                let body = format!("ent(E,{t},o), ent(E,{p},s), {} != {}", self.vars[i], self.primed[i]);
                match self.opts.dialect {
                    Dialect::DlvComplex => format!(":~ {body}."),
                    Dialect::AspCore2External => format!(":~ {body}. [1@1,{}]", i + 1),
                }
            })
            .collect()
    }

    /// `:- ent(E,…,tr)` with constants where `fixed` pins a position.
    fn tr_pattern(&self, fixed: &[Option<usize>]) -> String {
        let args: Vec<&str> =
            (0..self.n()).map(|i| fixed[i].map_or(self.vars[i].as_str(), |p| self.values[i][p].as_str())).collect();
        format!("ent(E,{},tr)", args.join(","))
    }

    fn denial(&self, d: &DenialConstraint) -> Option<String> {
        let mut fixed: Vec<Option<usize>> = vec![None; self.n()];
        for l in d.literals().iter().filter(|l| l.polarity == Polarity::Eq) {
            match fixed[l.feature] {
                Some(p) if p != l.value => return None,
                _ => fixed[l.feature] = Some(l.value),
            }
        }
        let mut extra = Vec::new();
        for l in d.literals().iter().filter(|l| l.polarity == Polarity::Neq) {
            match fixed[l.feature] {
                Some(p) if p == l.value => return None,
                Some(_) => {}
                None => extra.push(format!("{} != {}", self.vars[l.feature], self.values[l.feature][l.value])),
            }
        }
        extra.dedup();
        let mut body = vec![self.tr_pattern(&fixed)];
        body.extend(extra);
        Some(format!(":- {}.", body.join(", ")))
    }

    fn onehot(&self, g: &OneHotGroup) -> Vec<String> {
        let members = g.members();
        let mut out = Vec::new();
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                let mut fixed = vec![None; self.n()];
                fixed[members[a]] = Some(g.one_position(a));
                fixed[members[b]] = Some(g.one_position(b));
                out.push(format!(":- {}.", self.tr_pattern(&fixed)));
            }
        }
        let mut fixed = vec![None; self.n()];
        for (k, &m) in members.iter().enumerate() {
            fixed[m] = Some(1 - g.one_position(k));
        }
        out.push(format!(":- {}.", self.tr_pattern(&fixed)));
        out
    }

    /// Constraints bind every `tr` entity on the intervention path, which is
    /// stricter than the search's final-entity check.
    fn hard(&self) -> Vec<String> {
        let cs = &self.opts.hard_constraints;
        let (t, p) = (self.tuple(), self.primed_tuple());
        let mut out = Vec::new();
        let mut ranked: Vec<usize> = cs
            .actionability
            .iter()
            .filter(|r| matches!(r.mode, ActionMode::IncreaseOnly | ActionMode::DecreaseOnly))
            .map(|r| r.feature)
            .collect();
        ranked.sort_unstable();
        ranked.dedup();
        for &i in &ranked {
            out.push(
                self.values[i]
                    .iter()
                    .enumerate()
                    .map(|(r, v)| format!("ord{}({v},{r}).", i + 1))
                    .collect::<Vec<_>>()
                    .join(" "),
            );
        }
        out.extend(cs.denials.iter().filter_map(|d| self.denial(d)));
        for r in &cs.actionability {
            let (x, xp, k) = (&self.vars[r.feature], &self.primed[r.feature], r.feature + 1);
            let head = format!(":- ent(E,{t},o), ent(E,{p},tr)");
            match r.mode {
                ActionMode::Free => {}
                ActionMode::Fixed => out.push(format!("{head}, {x} != {xp}.")),
                ActionMode::IncreaseOnly => out.push(format!("{head}, ord{k}({x},R), ord{k}({xp},Rp), Rp < R.")),
                ActionMode::DecreaseOnly => out.push(format!("{head}, ord{k}({x},R), ord{k}({xp},Rp), Rp > R.")),
            }
        }
        for g in &cs.onehot {
            out.extend(self.onehot(g));
        }
        out
    }
}

/// Build the CIP for entity `e`.
pub fn emit_cip(
    schema: &FeatureSchema,
    e: &Entity,
    classifier: &ClassifierHandle,
    opts: &CipOptions,
) -> Result<CipProgram> {
    schema.check_values(&e.values)?;
    if opts.embedding == Embedding::ExternalStub && opts.dialect != Dialect::AspCore2External {
        return Err(AspError::DialectMismatch);
    }
    let em = Emitter::new(schema, opts)?;
    let (t, n) = (em.tuple(), em.n());
    let mut sections = Vec::new();
    if opts.dialect == Dialect::DlvComplex {
        sections.push((Section::Include, vec!["#include<ListAndSet>".to_string()]));
    }
    sections.push((Section::Classifier, em.classifier(classifier)?));
    sections.push((Section::Facts, em.facts(e)?));
    sections.push((
        Section::Transition,
        vec![format!("ent(E,{t},tr) :- ent(E,{t},o)."), format!("ent(E,{t},tr) :- ent(E,{t},do).")],
    ));
    sections.push((Section::Intervention, vec![em.intervention()]));
    sections.push((Section::Choice, em.choice()));
    sections.push((Section::Stop, vec![format!("ent(E,{t},s) :- ent(E,{t},do), cls({t},0).")]));
    sections.push((
        Section::ProgramConstraints,
        vec![
            format!(":- ent(E,{t},do), ent(E,{t},o)."),
            format!("entAux(E) :- ent(E,{t},s)."),
            format!(":- ent(E,{t},o), not entAux(E)."),
        ],
    ));
    sections.push((Section::Expl, em.expl()?));
    if opts.include_count {
        sections.push((Section::Count, vec![em.count()?]));
    }
    if opts.include_weak {
        sections.push((Section::Weak, em.weak()));
    }
    let hard = em.hard();
    if !hard.is_empty() {
        sections.push((Section::Hard, hard));
    }
    debug_assert_eq!(em.expl()?.len(), n);
    let program = CipProgram { dialect: opts.dialect, sections };
    Ok(if opts.shift { shift_disjunctive_rule(&program) } else { program })
}

/// Replace the disjunctive intervention rule by one rule per head atom,
/// each adding the other head atoms negated to the body. Sound because
/// CIPs are head-cycle free; other statements are left untouched.
pub fn shift_disjunctive_rule(program: &CipProgram) -> CipProgram {
    let sep = program.dialect.disjunction();
    let sections = program
        .sections
        .iter()
        .map(|(s, stmts)| {
            if *s != Section::Intervention {
                return (*s, stmts.clone());
            }
            let shifted = stmts
                .iter()
                .flat_map(|stmt| {
                    let Some((head, body)) = stmt.split_once(" :- ") else {
                        return vec![stmt.clone()];
                    };
                    let atoms: Vec<&str> = head.split(sep).collect();
                    if atoms.len() < 2 {
                        return vec![stmt.clone()];
                    }
                    let body = body.strip_suffix('.').unwrap_or(body);
                    (0..atoms.len())
                        .map(|k| {
                            let negated: String = atoms
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != k)
                                .map(|(_, a)| format!(", not {a}"))
                                .collect();
                            format!("{} :- {body}{negated}.", atoms[k])
                        })
                        .collect()
                })
                .collect();
            (*s, shifted)
        })
        .collect();
    CipProgram { dialect: program.dialect, sections }
}

/// Canonical form for comparing programs: `%` comments dropped and all
/// whitespace removed except one space between two identifier characters.
pub fn normalize_asp(text: &str) -> String {
    let ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let mut out = String::new();
    let mut pending_space = false;
    for line in text.lines() {
        let mut in_str = false;
        let mut escaped = false;
        for c in line.chars() {
            if in_str {
                out.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    in_str = false;
                }
                continue;
            }
            if c == '%' {
                break;
            }
            if c.is_whitespace() {
                pending_space = true;
                continue;
            }
            if pending_space && out.chars().last().is_some_and(ident) && ident(c) {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
            if c == '"' {
                in_str = true;
            }
        }
        pending_space = true;
    }
    out
}
