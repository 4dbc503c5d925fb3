//! Counterfactual search over the product space.
//!
//! Two strategies produce the same answers:
//!
//! * **levelwise** walks Hamming distance `k = 1, 2, …`, generating every
//!   candidate that changes exactly `k` features (index sets in
//!   lexicographic order, then value positions), and stops as soon as the
//!   question is answered. For s-explanations it prunes any index set that
//!   contains the index set of a counterfactual already found, since no
//!   such candidate can be subset-minimal.
//! * **exhaustive oracle** classifies the whole admissible product space and
//!   filters afterwards. It exists to check the levelwise route.

use std::collections::BTreeSet;
use std::thread;

use itertools::Itertools;
use serde_json::json;

use crate::classify::{ClassifierHandle, ClassifyError, Label};
use crate::constrain::ConstraintSet;
use crate::schema::{diff, Entity, Explanation, FeatureSchema};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("nothing to explain: entity `{0}` is already labeled 0")]
    NothingToExplain(String),
    #[error("classifier failed on ({entity}): {source}")]
    Classifier {
        entity: String,
        #[source]
        source: ClassifyError,
    },
    #[error("invalid search configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SearchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    ExhaustiveOracle,
    #[default]
    Levelwise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub max_cardinality: Option<usize>,
    pub budget: Option<usize>,
    pub mode: SearchMode,
    /// Worker threads used to classify one level's candidates.
    pub jobs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { max_cardinality: None, budget: None, mode: SearchMode::Levelwise, jobs: 1 }
    }
}

impl SearchConfig {
    pub fn oracle() -> Self {
        SearchConfig { mode: SearchMode::ExhaustiveOracle, ..Self::default() }
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if let Some(m) = self.max_cardinality {
            if m > schema.len() {
                return Err(SearchError::Config(format!("max cardinality {m} exceeds feature count {}", schema.len())));
            }
        }
        if self.budget == Some(0) {
            return Err(SearchError::Config("budget must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(SearchError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    fn bound(&self, schema: &FeatureSchema) -> usize {
        self.max_cardinality.unwrap_or(schema.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    /// Classification requests issued by the search, including the check
    /// of the original entity.
    pub classifier_calls: usize,
    pub levels_explored: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterfactual {
    pub explanation: Explanation,
    pub s_minimal: bool,
    pub c_minimal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult {
    pub counterfactuals: Vec<Counterfactual>,
    pub stats: SearchStats,
    /// False when the cardinality bound or the call budget cut the search.
    pub exhausted: bool,
}

impl SearchResult {
    fn new(found: Vec<Explanation>, stats: SearchStats, exhausted: bool) -> Self {
        let s = s_minimal_flags(&found);
        let min = found.iter().map(|x| x.cardinality).min();
        let counterfactuals: Vec<Counterfactual> = found
            .into_iter()
            .zip(s)
            .map(|(explanation, s_minimal)| Counterfactual {
                c_minimal: Some(explanation.cardinality) == min,
                explanation,
                s_minimal,
            })
            .collect();
        let r = SearchResult { counterfactuals, stats, exhausted };
        r.assert_invariants();
        r
    }

    pub fn assert_invariants(&self) {
        for c in &self.counterfactuals {
            assert!(!c.c_minimal || c.s_minimal, "c-minimal explanation not s-minimal");
        }
    }

    pub fn explanations(&self) -> impl Iterator<Item = &Explanation> {
        self.counterfactuals.iter().map(|c| &c.explanation)
    }

    pub fn s_explanations(&self) -> Vec<Explanation> {
        self.counterfactuals.iter().filter(|c| c.s_minimal).map(|c| c.explanation.clone()).collect()
    }

    pub fn c_explanations(&self) -> Vec<Explanation> {
        self.counterfactuals.iter().filter(|c| c.c_minimal).map(|c| c.explanation.clone()).collect()
    }

    pub fn min_cardinality(&self) -> Option<usize> {
        self.counterfactuals.iter().map(|c| c.explanation.cardinality).min()
    }

    pub fn no_counterfactual(&self) -> bool {
        self.counterfactuals.is_empty()
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let explanations: Vec<_> = self
            .counterfactuals
            .iter()
            .map(|c| {
                let mut v = c.explanation.to_json(schema);
                v["s_minimal"] = c.s_minimal.into();
                v["c_minimal"] = c.c_minimal.into();
                v
            })
            .collect();
        json!({
            "explanations": explanations,
            "stats": stats_json(&self.stats),
            "exhausted": self.exhausted,
        })
    }
}

fn stats_json(s: &SearchStats) -> serde_json::Value {
    json!({ "classifier_calls": s.classifier_calls, "levels_explored": s.levels_explored })
}

/// A filtered answer (s- or c-explanations).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanations {
    pub items: Vec<Explanation>,
    pub stats: SearchStats,
    /// False when truncation means the answer may be incomplete or wrong.
    pub exhausted: bool,
}

impl Explanations {
    /// The constrained space holds no label-0 entity (within the bound).
    pub fn no_counterfactual(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cardinality(&self) -> Option<usize> {
        self.items.first().map(|x| x.cardinality)
    }
}

/// Subset-minimality flags judged within `found`.
pub fn s_minimal_flags(found: &[Explanation]) -> Vec<bool> {
    let sets: Vec<BTreeSet<usize>> = found.iter().map(Explanation::features).collect();
    sets.iter().map(|a| !sets.iter().any(|b| b.len() < a.len() && b.is_subset(a))).collect()
}

struct Searcher<'a> {
    schema: &'a FeatureSchema,
    classifier: &'a ClassifierHandle,
    original: &'a Entity,
    constraints: &'a ConstraintSet,
    cfg: &'a SearchConfig,
    stats: SearchStats,
}

struct Outcome {
    found: Vec<Explanation>,
    exhausted: bool,
}

impl<'a> Searcher<'a> {
    fn start(
        classifier: &'a ClassifierHandle,
        original: &'a Entity,
        constraints: &'a ConstraintSet,
        cfg: &'a SearchConfig,
    ) -> Result<Self> {
        let schema = classifier.schema();
        cfg.validate(schema)?;
        schema.check_values(&original.values).map_err(|e| SearchError::Config(e.to_string()))?;
        let mut s = Searcher { schema, classifier, original, constraints, cfg, stats: SearchStats::default() };
        let labels = s.classify_batch(std::slice::from_ref(&original.values))?;
        if labels.first() == Some(&Label::Zero) {
            return Err(SearchError::NothingToExplain(original.id.clone()));
        }
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.cfg.budget.map_or(usize::MAX, |b| b.saturating_sub(self.stats.classifier_calls))
    }

    fn render(&self, values: &[usize]) -> String {
        values.iter().enumerate().map(|(i, &p)| self.schema.value_name(i, p)).join(",")
    }

    /// Classify as many of `batch` as the budget allows, in order.
    fn classify_batch(&mut self, batch: &[Vec<usize>]) -> Result<Vec<Label>> {
        let take = batch.len().min(self.remaining());
        let batch = &batch[..take];
        self.stats.classifier_calls += take;
        let results: Vec<std::result::Result<Label, ClassifyError>> = if self.cfg.jobs <= 1 || batch.len() < 2 {
            batch.iter().map(|v| self.classifier.classify_values(v)).collect()
        } else {
            let chunk = batch.len().div_ceil(self.cfg.jobs);
            let classifier = self.classifier;
            thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .chunks(chunk)
                    .map(|part| {
                        scope.spawn(move || part.iter().map(|v| classifier.classify_values(v)).collect::<Vec<_>>())
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("classifier worker panicked")).collect()
            })
        };
        let mut labels = Vec::with_capacity(results.len());
        for (values, r) in batch.iter().zip(results) {
            labels.push(r.map_err(|source| SearchError::Classifier { entity: self.render(values), source })?);
        }
        Ok(labels)
    }

    fn explanation(&self, values: Vec<usize>) -> Explanation {
        let cf = Entity::new(self.original.id.clone(), values);
        diff(self.schema, self.original, &cf).expect("candidate conforms")
    }

    /// All admissible candidates changing exactly the features in `subset`,
    /// value positions in increasing order.
    fn candidates(&self, subset: &[usize], out: &mut Vec<Vec<usize>>) {
        let choices: Vec<Vec<usize>> = subset
            .iter()
            .map(|&i| (0..self.schema.domain_size(i)).filter(|&p| p != self.original.values[i]).collect())
            .collect();
        for combo in choices.iter().multi_cartesian_product() {
            let mut values = self.original.values.clone();
            for (&i, &p) in subset.iter().zip(&combo) {
                values[i] = *p;
            }
            let cand = Entity::new(self.original.id.clone(), values);
            if self.constraints.admissible(self.original, &cand) {
                out.push(cand.values);
            }
        }
    }

    fn levelwise(&mut self, stop_at_first_hit: bool, prune_supersets: bool) -> Result<Outcome> {
        let n = self.schema.len();
        let bound = self.cfg.bound(self.schema);
        let mut found: Vec<Explanation> = Vec::new();
        let mut minimal_sets: Vec<BTreeSet<usize>> = Vec::new();
        for k in 1..=bound {
            self.stats.levels_explored = k;
            let mut batch = Vec::new();
            for subset in (0..n).combinations(k) {
                if prune_supersets {
                    let set: BTreeSet<usize> = subset.iter().copied().collect();
                    if minimal_sets.iter().any(|m| m.is_subset(&set)) {
                        continue;
                    }
                }
                self.candidates(&subset, &mut batch);
            }
            let wanted = batch.len();
            let labels = self.classify_batch(&batch)?;
            let complete = labels.len() == wanted;
            let mut hits = 0;
            for (values, label) in batch.into_iter().zip(labels) {
                if label == Label::Zero {
                    let x = self.explanation(values);
                    if prune_supersets {
                        minimal_sets.push(x.features());
                    }
                    found.push(x);
                    hits += 1;
                }
            }
            if !complete {
                return Ok(Outcome { found, exhausted: false });
            }
            if stop_at_first_hit && hits > 0 {
                return Ok(Outcome { found, exhausted: true });
            }
        }
        Ok(Outcome { found, exhausted: bound == n })
    }

    fn exhaustive(&mut self) -> Result<Outcome> {
        let n = self.schema.len();
        let bound = self.cfg.bound(self.schema);
        self.stats.levels_explored = bound;
        let batch: Vec<Vec<usize>> = self
            .schema
            .product_space()
            .filter(|v| {
                let d = v.iter().zip(&self.original.values).filter(|(a, b)| a != b).count();
                d >= 1 && d <= bound
            })
            .filter(|v| self.constraints.admissible(self.original, &Entity::new("", v.clone())))
            .collect();
        let wanted = batch.len();
        let labels = self.classify_batch(&batch)?;
        let complete = labels.len() == wanted;
        let mut found: Vec<Explanation> = batch
            .into_iter()
            .zip(labels)
            .filter(|(_, l)| *l == Label::Zero)
            .map(|(v, _)| self.explanation(v))
            .collect();
        found.sort_by_cached_key(generation_key);
        Ok(Outcome { found, exhausted: complete && bound == n })
    }
}

/// The levelwise generation order. Ties in cardinality break on the
/// changed indices, then on the new value positions.
pub fn generation_key(x: &Explanation) -> (usize, Vec<usize>, Vec<usize>) {
    let idx: Vec<usize> = x.changed.keys().copied().collect();
    let vals = idx.iter().map(|&i| x.counterfactual.values[i]).collect();
    (x.cardinality, idx, vals)
}

/// Every admissible counterfactual entity within the cardinality bound,
/// flagged for s- and c-minimality.
pub fn enumerate_counterfactuals(
    classifier: &ClassifierHandle,
    e: &Entity,
    constraints: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let mut s = Searcher::start(classifier, e, constraints, cfg)?;
    let out = match cfg.mode {
        SearchMode::Levelwise => s.levelwise(false, false)?,
        SearchMode::ExhaustiveOracle => s.exhaustive()?,
    };
    Ok(SearchResult::new(out.found, s.stats, out.exhausted))
}

/// Counterfactuals at the minimum Hamming distance.
pub fn c_explanations(
    classifier: &ClassifierHandle,
    e: &Entity,
    constraints: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<Explanations> {
    let mut s = Searcher::start(classifier, e, constraints, cfg)?;
    let out = match cfg.mode {
        SearchMode::Levelwise => s.levelwise(true, false)?,
        SearchMode::ExhaustiveOracle => {
            let mut out = s.exhaustive()?;
            let min = out.found.iter().map(|x| x.cardinality).min();
            out.found.retain(|x| Some(x.cardinality) == min);
            out
        }
    };
    Ok(Explanations { items: out.found, stats: s.stats, exhausted: out.exhausted })
}

/// Counterfactuals whose changed-feature set properly contains no other
/// counterfactual's.
pub fn s_explanations(
    classifier: &ClassifierHandle,
    e: &Entity,
    constraints: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<Explanations> {
    let mut s = Searcher::start(classifier, e, constraints, cfg)?;
    let out = match cfg.mode {
        SearchMode::Levelwise => s.levelwise(false, true)?,
        SearchMode::ExhaustiveOracle => s.exhaustive()?,
    };
    let flags = s_minimal_flags(&out.found);
    let items = out.found.into_iter().zip(flags).filter(|(_, f)| *f).map(|(x, _)| x).collect();
    Ok(Explanations { items, stats: s.stats, exhausted: out.exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{parse_rules, TableClassifier};
    use crate::constrain::DenialConstraint;
    use crate::schema::Feature;

    fn binary3() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::new("F1", &["0", "1"]),
            Feature::new("F2", &["0", "1"]),
            Feature::new("F3", &["0", "1"]),
        ])
        .unwrap()
    }

    fn table(schema: &FeatureSchema, rows: &[(&str, u8)]) -> ClassifierHandle {
        let rows = rows
            .iter()
            .map(|(bits, l)| {
                let v: Vec<&str> = bits.split(',').collect();
                (schema.entity("", &v).unwrap().values, Label::parse(&l.to_string()).unwrap())
            })
            .collect();
        ClassifierHandle::table(schema.clone(), TableClassifier::new(schema, rows).unwrap())
    }

    fn table1() -> ClassifierHandle {
        table(
            &binary3(),
            &[
                ("0,1,1", 1),
                ("1,1,1", 1),
                ("1,1,0", 1),
                ("1,0,1", 0),
                ("1,0,0", 1),
                ("0,1,0", 1),
                ("0,0,1", 0),
                ("0,0,0", 0),
            ],
        )
    }

    fn table2() -> ClassifierHandle {
        table(
            &binary3(),
            &[
                ("0,1,1", 1),
                ("1,1,1", 1),
                ("1,1,0", 0),
                ("1,0,1", 1),
                ("1,0,0", 0),
                ("0,1,0", 1),
                ("0,0,1", 0),
                ("0,0,0", 1),
            ],
        )
    }

    fn tennis() -> ClassifierHandle {
        let s = FeatureSchema::new(vec![
            Feature::new("Outlook", &["sunny", "overcast", "rain"]),
            Feature::new("Humidity", &["high", "normal"]),
            Feature::new("Wind", &["strong", "weak"]),
        ])
        .unwrap();
        let rc = parse_rules(
            "if Outlook=sunny and Humidity=normal then 1\nif Outlook=overcast then 1\nif Outlook=rain and Wind=weak then 1\ndefault 0\n",
            &s,
        )
        .unwrap();
        ClassifierHandle::rules(s, rc)
    }

    fn names(c: &ClassifierHandle, xs: &[Explanation]) -> Vec<String> {
        xs.iter().map(|x| c.schema().value_names(&x.counterfactual).join(",")).collect()
    }

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn table1_counterfactuals() {
        let c = table1();
        let e1 = c.schema().entity("e1", &["0", "1", "1"]).unwrap();
        for cfg in [SearchConfig::default(), SearchConfig::oracle()] {
            let r = enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &cfg).unwrap();
            let all: Vec<_> = r.explanations().cloned().collect();
            assert_eq!(sorted(names(&c, &all)), vec!["0,0,0", "0,0,1", "1,0,1"]);
            assert_eq!(names(&c, &r.s_explanations()), vec!["0,0,1"]);
            assert_eq!(names(&c, &r.c_explanations()), vec!["0,0,1"]);
            assert!(r.exhausted);

            let cx = c_explanations(&c, &e1, &ConstraintSet::new(), &cfg).unwrap();
            assert_eq!(names(&c, &cx.items), vec!["0,0,1"]);
            assert_eq!(cx.cardinality(), Some(1));
            let sx = s_explanations(&c, &e1, &ConstraintSet::new(), &cfg).unwrap();
            assert_eq!(names(&c, &sx.items), vec!["0,0,1"]);
        }
    }

    #[test]
    fn table2_counterfactuals() {
        let c = table2();
        let e1 = c.schema().entity("e1", &["0", "1", "1"]).unwrap();
        let r = enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        let all: Vec<_> = r.explanations().cloned().collect();
        assert_eq!(sorted(names(&c, &all)), vec!["0,0,1", "1,0,0", "1,1,0"]);
        let sx = s_explanations(&c, &e1, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        assert_eq!(sorted(names(&c, &sx.items)), vec!["0,0,1", "1,1,0"]);
        let cx = c_explanations(&c, &e1, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        assert_eq!(names(&c, &cx.items), vec!["0,0,1"]);
    }

    #[test]
    fn tennis_counterfactuals_and_denial() {
        let c = tennis();
        let s = c.schema().clone();
        let e = s.entity("e", &["sunny", "normal", "weak"]).unwrap();
        let r = enumerate_counterfactuals(&c, &e, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        let got: Vec<(String, usize)> =
            r.explanations().map(|x| (s.value_names(&x.counterfactual).join(","), x.cardinality)).collect();
        assert_eq!(
            got,
            vec![
                ("sunny,high,weak".to_string(), 1),
                ("rain,normal,strong".to_string(), 2),
                ("sunny,high,strong".to_string(), 2),
                ("rain,high,strong".to_string(), 3),
            ]
        );
        let cx = c_explanations(&c, &e, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        assert_eq!(names(&c, &cx.items), vec!["sunny,high,weak"]);

        let cs = ConstraintSet::new()
            .with_denial(DenialConstraint::forbid(&s, &[("Outlook", "rain"), ("Wind", "strong")]).unwrap());
        let r = enumerate_counterfactuals(&c, &e, &cs, &SearchConfig::default()).unwrap();
        let all: Vec<_> = r.explanations().cloned().collect();
        assert_eq!(names(&c, &all), vec!["sunny,high,weak", "sunny,high,strong"]);
        let cx = c_explanations(&c, &e, &cs, &SearchConfig::default()).unwrap();
        assert_eq!(names(&c, &cx.items), vec!["sunny,high,weak"]);
    }

    #[test]
    fn constant_one_has_no_counterfactual() {
        let s = binary3();
        let c = ClassifierHandle::table(s.clone(), TableClassifier::tabulate(&s, |_| Label::One));
        let e = s.entity("e", &["0", "1", "1"]).unwrap();
        for cfg in [SearchConfig::default(), SearchConfig::oracle()] {
            let sx = s_explanations(&c, &e, &ConstraintSet::new(), &cfg).unwrap();
            assert!(sx.no_counterfactual());
            assert!(sx.exhausted);
            let cx = c_explanations(&c, &e, &ConstraintSet::new(), &cfg).unwrap();
            assert!(cx.no_counterfactual());
        }
    }

    #[test]
    fn label_zero_is_nothing_to_explain() {
        let c = table1();
        let e7 = c.schema().entity("e7", &["0", "0", "1"]).unwrap();
        assert!(matches!(
            enumerate_counterfactuals(&c, &e7, &ConstraintSet::new(), &SearchConfig::default()),
            Err(SearchError::NothingToExplain(_))
        ));
    }

    #[test]
    fn missing_row_reports_entity() {
        let s = binary3();
        let c = table(&s, &[("0,1,1", 1)]);
        let e = s.entity("e", &["0", "1", "1"]).unwrap();
        match enumerate_counterfactuals(&c, &e, &ConstraintSet::new(), &SearchConfig::default()) {
            Err(SearchError::Classifier { entity, .. }) => assert_eq!(entity, "1,1,1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_and_budget_truncate() {
        let c = table1();
        let e1 = c.schema().entity("e1", &["0", "1", "1"]).unwrap();
        let cfg = SearchConfig { max_cardinality: Some(1), ..SearchConfig::default() };
        let r = enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &cfg).unwrap();
        assert_eq!(r.counterfactuals.len(), 1);
        assert!(!r.exhausted);

        let cfg = SearchConfig { budget: Some(2), ..SearchConfig::default() };
        let r = enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &cfg).unwrap();
        assert_eq!(r.stats.classifier_calls, 2);
        assert!(!r.exhausted);

        let bad = SearchConfig { budget: Some(0), ..SearchConfig::default() };
        assert!(matches!(enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &bad), Err(SearchError::Config(_))));
        let bad = SearchConfig { max_cardinality: Some(4), ..SearchConfig::default() };
        assert!(enumerate_counterfactuals(&c, &e1, &ConstraintSet::new(), &bad).is_err());
    }

    #[test]
    fn c_search_stops_at_first_level() {
        let c = table1();
        let e1 = c.schema().entity("e1", &["0", "1", "1"]).unwrap();
        let cx = c_explanations(&c, &e1, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        // original + three single flips
        assert_eq!(cx.stats.classifier_calls, 4);
        assert_eq!(cx.stats.levels_explored, 1);
    }

    #[test]
    fn parallel_levels_match_sequential() {
        let c = tennis();
        let e = c.schema().entity("e", &["sunny", "normal", "weak"]).unwrap();
        let seq = enumerate_counterfactuals(&c, &e, &ConstraintSet::new(), &SearchConfig::default()).unwrap();
        let par = enumerate_counterfactuals(
            &c,
            &e,
            &ConstraintSet::new(),
            &SearchConfig { jobs: 4, ..SearchConfig::default() },
        )
        .unwrap();
        assert_eq!(seq.counterfactuals, par.counterfactuals);
    }
}
