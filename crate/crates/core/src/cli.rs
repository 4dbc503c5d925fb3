//! The `cfx` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 input or validation error, 3 no
//! counterfactual, 4 classifier backend failure. Payload goes to stdout;
//! diagnostics and the run manifest go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::aspgen::{emit_cip, lint_cip, AspError, CipOptions, Dialect, Embedding, ExplIds};
use crate::classify::{parse_rules, ClassifierHandle, ClassifyError, ExternalClassifier, TableClassifier};
use crate::constrain::{ConstraintError, ConstraintSet};
use crate::schema::{Entity, FeatureSchema, SchemaError};
use crate::score::{global_resp, max_resp_features, x_resp, Distribution, GlobalConfig, ScoreError};
use crate::search::{enumerate_counterfactuals, SearchConfig, SearchError, SearchMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_COUNTERFACTUAL: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

pub const TIMEOUT_ENV: &str = "CFX_EXTERNAL_TIMEOUT_MS";
const DEFAULT_TIMEOUT_MS: u64 = 5000;
const EXTERNAL_DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "cfx", version, about = "Counterfactual explanations and responsibility scores")]
struct Cli {
    /// Write the run manifest to this file instead of stderr.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate counterfactuals with their s- and c-minimality.
    Explain(ExplainArgs),
    /// Responsibility scores of the entity's feature values.
    Score(ScoreArgs),
    /// Write the counterfactual intervention program for the entity.
    EmitAsp(EmitArgs),
    /// Print the label of the entity.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,
    #[arg(long, value_name = "FILE")]
    entity: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// CSV with one column per feature and a `label` column.
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Rule list (`if F=v and … then l`, closing `default l`).
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    /// Shell command speaking the line protocol.
    #[arg(long, value_name = "CMD")]
    external: Option<String>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, value_name = "FILE")]
    constraints: Option<PathBuf>,
    #[arg(long, value_name = "K")]
    max_card: Option<usize>,
    /// Classifier calls allowed; external backends default to 10000.
    #[arg(long, value_name = "N")]
    budget: Option<usize>,
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Scan the whole product space instead of searching level by level.
    #[arg(long)]
    oracle: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// `uniform`, `product:FILE` or `empirical:FILE`; switches to the
    /// probabilistic score.
    #[arg(long, value_name = "DIST")]
    prob: Option<String>,
    /// Denial constraints the distribution is conditioned on.
    #[arg(long, value_name = "FILE")]
    condition: Option<PathBuf>,
    /// Restrict to these features (repeatable).
    #[arg(long, value_name = "NAME")]
    feature: Vec<String>,
    /// Largest contingency set for the probabilistic score.
    #[arg(long, value_name = "K")]
    max_gamma: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DialectArg {
    DlvComplex,
    #[value(name = "asp-core-2", alias = "asp-core-2-external")]
    AspCore2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbeddingArg {
    Facts,
    Rules,
    ExternalStub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExplIdArg {
    Index,
    Name,
}

#[derive(Debug, Args)]
struct EmitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Constraints rendered as hard program constraints.
    #[arg(long, value_name = "FILE")]
    constraints: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DialectArg::DlvComplex)]
    dialect: DialectArg,
    /// Defaults to facts for tables, rules for rule lists and the external
    /// stub for external commands.
    #[arg(long, value_enum)]
    classifier: Option<EmbeddingArg>,
    #[arg(long)]
    weak: bool,
    #[arg(long)]
    count: bool,
    #[arg(long)]
    shift: bool,
    #[arg(long, value_enum, default_value_t = ExplIdArg::Index)]
    expl_ids: ExplIdArg,
    #[arg(long, default_value = "e")]
    entity_constant: String,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("classifier failure: {0}")]
    Backend(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConstraintError> for CliError {
    fn from(e: ConstraintError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AspError> for CliError {
    fn from(e: AspError) -> Self {
        match e {
            AspError::DialectMismatch => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::Schema(s) => s.into(),
            ClassifyError::Table { .. } | ClassifyError::Unrenderable(_) => CliError::Input(e.to_string()),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Classifier { .. } => CliError::Backend(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Search(s) => s.into(),
            ScoreError::Classify(c) => c.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Record of one invocation; wall time is the only field that varies
/// between identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub config: Value,
    pub engine_version: String,
    pub classifier_calls: usize,
    pub wall_time_ms: f64,
    pub exit_code: i32,
}

struct Outcome {
    payload: String,
    code: i32,
    calls: usize,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn external_timeout() -> CliResult<Duration> {
    match std::env::var(TIMEOUT_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Duration::from_millis)
            .map_err(|_| CliError::Input(format!("{TIMEOUT_ENV} must be a number of milliseconds, got `{v}`"))),
        Err(_) => Ok(Duration::from_millis(DEFAULT_TIMEOUT_MS)),
    }
}

struct Loaded {
    schema: FeatureSchema,
    entity: Entity,
    classifier: ClassifierHandle,
}

fn load(input: &InputArgs, err: &mut dyn Write) -> CliResult<Loaded> {
    let schema = FeatureSchema::from_json(&read(&input.schema)?)?;
    let entity = schema.entity_from_json(&read(&input.entity)?)?;
    let src = &input.source;
    let classifier = if let Some(path) = &src.table {
        let table = TableClassifier::from_csv(&schema, read(path)?.as_bytes())?;
        if !table.is_total(&schema) {
            let (have, want) = table.coverage(&schema);
            let _ = writeln!(err, "note: table covers {have} of {want} entities");
        }
        ClassifierHandle::table(schema.clone(), table)
    } else if let Some(path) = &src.rules {
        let rules =
            parse_rules(&read(path)?, &schema).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        ClassifierHandle::rules(schema.clone(), rules)
    } else if let Some(cmd) = &src.external {
        ClassifierHandle::external(schema.clone(), ExternalClassifier::new(&schema, cmd.clone(), external_timeout()?)?)
    } else {
        return Err(CliError::Usage("one of --table, --rules, --external is required".into()));
    };
    Ok(Loaded { schema, entity, classifier })
}

fn input_paths(input: &InputArgs, inputs: &mut BTreeMap<String, String>) {
    inputs.insert("schema".into(), input.schema.display().to_string());
    inputs.insert("entity".into(), input.entity.display().to_string());
    if let Some(p) = &input.source.table {
        inputs.insert("table".into(), p.display().to_string());
    }
    if let Some(p) = &input.source.rules {
        inputs.insert("rules".into(), p.display().to_string());
    }
    if let Some(c) = &input.source.external {
        inputs.insert("external".into(), c.clone());
    }
}

fn search_config(args: &SearchArgs, input: &InputArgs) -> SearchConfig {
    let budget = args.budget.or(input.source.external.as_ref().map(|_| EXTERNAL_DEFAULT_BUDGET));
    SearchConfig { max_cardinality: args.max_card, budget, mode: SearchMode::Levelwise, jobs: args.jobs }
}

fn constraints(schema: &FeatureSchema, path: Option<&PathBuf>) -> CliResult<ConstraintSet> {
    match path {
        Some(p) => Ok(ConstraintSet::from_json(schema, &read(p)?)?),
        None => Ok(ConstraintSet::new()),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Left-aligned columns separated by two spaces.
fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(headers.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn changes_cell(v: &Value) -> String {
    v.as_object()
        .map(|m| m.iter().map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or_default())).collect::<Vec<_>>().join(" "))
        .unwrap_or_default()
}

fn values_cell(v: &Value) -> String {
    v.as_array()
        .map(|a| a.iter().map(|x| x.as_str().unwrap_or_default()).collect::<Vec<_>>().join(","))
        .unwrap_or_default()
}

fn yes_no(v: &Value) -> String {
    if v.as_bool().unwrap_or(false) { "yes" } else { "no" }.to_string()
}

fn explain_table(j: &Value) -> String {
    let rows: Vec<Vec<String>> = j["explanations"]
        .as_array()
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(k, x)| {
            vec![
                (k + 1).to_string(),
                values_cell(&x["counterfactual"]),
                changes_cell(&x["changed"]),
                x["cardinality"].to_string(),
                yes_no(&x["s_minimal"]),
                yes_no(&x["c_minimal"]),
            ]
        })
        .collect();
    let mut out = render_table(&["#", "counterfactual", "replaced values", "size", "s-min", "c-min"], &rows);
    if !j["exhausted"].as_bool().unwrap_or(true) {
        out.push_str("search truncated; minimality flags may be wrong\n");
    }
    out
}

fn cmd_explain(a: &ExplainArgs, err: &mut dyn Write, m: &mut RunManifest) -> CliResult<Outcome> {
    input_paths(&a.input, &mut m.inputs);
    let l = load(&a.input, err)?;
    let cs = constraints(&l.schema, a.search.constraints.as_ref())?;
    let mut cfg = search_config(&a.search, &a.input);
    if a.oracle {
        cfg.mode = SearchMode::ExhaustiveOracle;
    }
    m.config = json!({
        "max_cardinality": cfg.max_cardinality, "budget": cfg.budget, "jobs": cfg.jobs,
        "oracle": a.oracle, "constraints": a.search.constraints.as_ref().map(|p| p.display().to_string()),
    });
    let r = enumerate_counterfactuals(&l.classifier, &l.entity, &cs, &cfg)?;
    let mut j = r.to_json(&l.schema);
    j["entity"] = l.schema.entity_to_json(&l.entity);
    j["s_explanations"] = r.s_explanations().iter().map(|x| x.to_json(&l.schema)).collect::<Vec<_>>().into();
    j["c_explanations"] = r.c_explanations().iter().map(|x| x.to_json(&l.schema)).collect::<Vec<_>>().into();
    j["min_cardinality"] = r.min_cardinality().into();
    j["no_counterfactual"] = r.no_counterfactual().into();
    let payload = match a.format {
        Format::Json => pretty(&j),
        Format::Table => explain_table(&j),
    };
    let code = if r.no_counterfactual() { EXIT_NO_COUNTERFACTUAL } else { EXIT_OK };
    Ok(Outcome { payload, code, calls: l.classifier.backend_calls() })
}

fn distribution(schema: &FeatureSchema, dist: &str) -> CliResult<Distribution> {
    let (kind, file) = dist.split_once(':').map_or((dist, None), |(k, f)| (k, Some(f)));
    let need_file = || file.ok_or_else(|| CliError::Usage(format!("`--prob {kind}` needs `{kind}:FILE`")));
    Ok(match kind {
        "uniform" if file.is_none() => Distribution::Uniform,
        "product" => Distribution::product_from_csv(schema, read(Path::new(need_file()?))?.as_bytes())?,
        "empirical" => {
            let sample = schema.entities_from_csv(read(Path::new(need_file()?))?.as_bytes())?;
            Distribution::empirical(schema, sample.into_iter().map(|e| e.values).collect())?
        }
        _ => return Err(CliError::Usage(format!("unknown distribution `{dist}`"))),
    })
}

fn score_table(j: &Value) -> String {
    let rows: Vec<Vec<String>> = j["features"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|f| {
            let w = &f["witness"];
            let witness = if w.is_null() {
                "-".to_string()
            } else if let Some(g) = w.get("gamma") {
                let s = changes_cell(g);
                if s.is_empty() {
                    "{}".into()
                } else {
                    s
                }
            } else {
                values_cell(&w["counterfactual"])
            };
            vec![
                f["feature"].as_str().unwrap_or_default().to_string(),
                f["score"].as_str().unwrap_or_default().to_string(),
                format!("{:.4}", f["score_decimal"].as_f64().unwrap_or(f64::NAN)),
                witness,
            ]
        })
        .collect();
    render_table(&["feature", "score", "decimal", "witness"], &rows)
}

fn cmd_score(a: &ScoreArgs, err: &mut dyn Write, m: &mut RunManifest) -> CliResult<Outcome> {
    input_paths(&a.input, &mut m.inputs);
    let l = load(&a.input, err)?;
    let features: Vec<usize> = if a.feature.is_empty() {
        (0..l.schema.len()).collect()
    } else {
        a.feature.iter().map(|n| l.schema.index_of(n)).collect::<Result<_, _>>()?
    };
    let probabilistic = a.prob.is_some() || a.condition.is_some();
    let (j, code) = if probabilistic {
        if a.search.constraints.is_some() {
            return Err(CliError::Usage(
                "--constraints does not apply to the probabilistic score; use --condition".into(),
            ));
        }
        let dist = a.prob.as_deref().unwrap_or("uniform");
        let mut d = distribution(&l.schema, dist)?;
        if let Some(p) = &a.condition {
            m.inputs.insert("condition".into(), p.display().to_string());
            let cs = ConstraintSet::from_json(&l.schema, &read(p)?)?;
            if !cs.actionability.is_empty() || !cs.onehot.is_empty() {
                return Err(CliError::Input("a condition file may only hold denial constraints".into()));
            }
            d = Distribution::conditioned(&l.schema, d, cs.denials)?;
        }
        m.config = json!({ "prob": dist, "max_gamma": a.max_gamma });
        let cfg = GlobalConfig { max_gamma: a.max_gamma };
        let scores = features
            .iter()
            .map(|&f| global_resp(&l.classifier, &l.entity, f, &d, &cfg).map(|g| g.to_json(&l.schema)))
            .collect::<Result<Vec<_>, _>>()?;
        let j = json!({
            "entity": l.schema.entity_to_json(&l.entity),
            "distribution": dist,
            "conditioned": a.condition.is_some(),
            "features": scores,
        });
        (j, EXIT_OK)
    } else {
        let cs = constraints(&l.schema, a.search.constraints.as_ref())?;
        let cfg = search_config(&a.search, &a.input);
        m.config = json!({ "max_cardinality": cfg.max_cardinality, "budget": cfg.budget, "jobs": cfg.jobs });
        let r = x_resp(&l.classifier, &l.entity, &cs, &cfg)?;
        let best = max_resp_features(&l.classifier, &l.entity, &cs, &cfg)?;
        let mut j = r.to_json(&l.schema);
        j["features"] = features.iter().map(|&f| j["features"][f].clone()).collect::<Vec<_>>().into();
        j["entity"] = l.schema.entity_to_json(&l.entity);
        j["max_resp_features"] = best.features.iter().map(|&i| l.schema.name(i)).collect::<Vec<_>>().into();
        j["no_counterfactual"] = best.no_counterfactual.into();
        let code = if best.no_counterfactual { EXIT_NO_COUNTERFACTUAL } else { EXIT_OK };
        (j, code)
    };
    let payload = match a.format {
        Format::Json => pretty(&j),
        Format::Table => score_table(&j),
    };
    Ok(Outcome { payload, code, calls: l.classifier.backend_calls() })
}

fn cmd_emit(a: &EmitArgs, err: &mut dyn Write, m: &mut RunManifest) -> CliResult<Outcome> {
    input_paths(&a.input, &mut m.inputs);
    let l = load(&a.input, err)?;
    let src = &a.input.source;
    let embedding = match a.classifier {
        Some(EmbeddingArg::Facts) => Embedding::Facts,
        Some(EmbeddingArg::Rules) => Embedding::Rules,
        Some(EmbeddingArg::ExternalStub) => Embedding::ExternalStub,
        None if src.table.is_some() => Embedding::Facts,
        None if src.rules.is_some() => Embedding::Rules,
        None => Embedding::ExternalStub,
    };
    let opts = CipOptions {
        dialect: match a.dialect {
            DialectArg::DlvComplex => Dialect::DlvComplex,
            DialectArg::AspCore2 => Dialect::AspCore2External,
        },
        include_weak: a.weak,
        include_count: a.count,
        shift: a.shift,
        embedding,
        hard_constraints: constraints(&l.schema, a.constraints.as_ref())?,
        entity_constant: a.entity_constant.clone(),
        expl_ids: match a.expl_ids {
            ExplIdArg::Index => ExplIds::Index,
            ExplIdArg::Name => ExplIds::Name,
        },
    };
    m.config = json!({
        "dialect": format!("{:?}", a.dialect), "classifier": embedding.as_str(), "weak": a.weak,
        "count": a.count, "shift": a.shift, "expl_ids": format!("{:?}", a.expl_ids),
        "entity_constant": a.entity_constant,
    });
    let program = emit_cip(&l.schema, &l.entity, &l.classifier, &opts)?;
    let text = program.text();
    for d in lint_cip(&text) {
        let _ = writeln!(err, "lint: {d}");
    }
    let payload = match &a.out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            m.inputs.insert("out".into(), path.display().to_string());
            let rows: Vec<Vec<String>> = program
                .section_index()
                .iter()
                .map(|s| {
                    vec![
                        s.section.as_str().to_string(),
                        format!("{}-{}", s.first_line, s.last_line),
                        s.statements.to_string(),
                    ]
                })
                .collect();
            render_table(&["section", "lines", "statements"], &rows)
        }
        None => text,
    };
    Ok(Outcome { payload, code: EXIT_OK, calls: 0 })
}

fn cmd_classify(a: &ClassifyArgs, err: &mut dyn Write, m: &mut RunManifest) -> CliResult<Outcome> {
    input_paths(&a.input, &mut m.inputs);
    let l = load(&a.input, err)?;
    let label = l.classifier.classify(&l.entity)?;
    let payload = match a.format {
        Some(Format::Json) => pretty(&json!({
            "entity": l.schema.entity_to_json(&l.entity),
            "label": label.as_u8(),
        })),
        _ => format!("{label}\n"),
    };
    Ok(Outcome { payload, code: EXIT_OK, calls: l.classifier.backend_calls() })
}

/// Parse `args` (program name first), run the command and return the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let started = Instant::now();
    let mut manifest = RunManifest {
        command: String::new(),
        inputs: BTreeMap::new(),
        config: Value::Null,
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        classifier_calls: 0,
        wall_time_ms: 0.0,
        exit_code: 0,
    };
    let result = match &cli.command {
        Command::Explain(a) => {
            manifest.command = "explain".into();
            cmd_explain(a, err, &mut manifest)
        }
        Command::Score(a) => {
            manifest.command = "score".into();
            cmd_score(a, err, &mut manifest)
        }
        Command::EmitAsp(a) => {
            manifest.command = "emit-asp".into();
            cmd_emit(a, err, &mut manifest)
        }
        Command::Classify(a) => {
            manifest.command = "classify".into();
            cmd_classify(a, err, &mut manifest)
        }
    };
    let code = match result {
        Ok(o) => {
            let _ = out.write_all(o.payload.as_bytes());
            manifest.classifier_calls = o.calls;
            if o.code == EXIT_NO_COUNTERFACTUAL {
                let _ = writeln!(err, "no counterfactual found");
            }
            o.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(err, "see `cfx --help`");
            }
            e.code()
        }
    };
    manifest.exit_code = code;
    manifest.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    let line = serde_json::to_string(&manifest).expect("manifest serializes");
    match &cli.manifest {
        Some(p) => {
            if let Err(e) = std::fs::write(p, format!("{line}\n")) {
                let _ = writeln!(err, "error: cannot write manifest {}: {e}", p.display());
            }
        }
        None => {
            let _ = writeln!(err, "manifest: {line}");
        }
    }
    code
}
