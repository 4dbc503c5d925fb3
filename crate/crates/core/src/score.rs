//! Responsibility scores.
//!
//! [`x_resp`] is the deterministic score: the reciprocal size of the
//! smallest s-explanation containing a feature's original value.
//! [`local_resp`] and [`global_resp`] generalize it by averaging the label
//! over the values of the scored feature under a population
//! [`Distribution`]. All scores are exact rationals.

use std::collections::BTreeSet;
use std::io::Read;

use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::json;

use crate::classify::{ClassifierHandle, ClassifyError, Label};
use crate::constrain::{satisfies, ConstraintSet, DenialConstraint};
use crate::schema::{Entity, Explanation, FeatureSchema, SchemaError};
use crate::search::{c_explanations, s_explanations, SearchConfig, SearchError};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("entity is labeled 0; only label 1 is explained")]
    NotLabelOne,
    #[error("scored feature `{0}` also appears in the contingency set")]
    FeatureInGamma(String),
    #[error("contingency set changes feature `{0}` twice")]
    RepeatedGamma(String),
    #[error("contingency value for `{0}` equals the entity's value")]
    UnchangedValue(String),
    #[error("contingency assignment changes the label")]
    LabelChanged,
    #[error("conditional mass of `{0}` given the remaining values is zero")]
    ZeroConditionalMass(String),
    #[error("conditioning event has zero mass")]
    ZeroConditioningMass,
    #[error("invalid distribution: {0}")]
    Distribution(String),
}

pub type Result<T> = std::result::Result<T, ScoreError>;

/// `n/d` with the denominator always shown.
pub fn format_ratio(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Parse `0.25`, `1/4` or `1` exactly.
pub fn parse_probability(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let numer: BigInt = digits.parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    Some(BigRational::new(numer, denom))
}

/// x-Resp of one feature value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureResp {
    pub feature: usize,
    pub score: BigRational,
    /// A smallest s-explanation containing the feature; its other changes
    /// form the contingency set.
    pub witness: Option<Explanation>,
}

impl FeatureResp {
    pub fn counterfactual_value_explanation(&self) -> bool {
        self.score.is_one()
    }

    pub fn actual_value_explanation(&self) -> bool {
        self.score > BigRational::zero()
    }

    pub fn contingency(&self) -> Vec<usize> {
        self.witness
            .as_ref()
            .map(|w| w.changed.keys().copied().filter(|&i| i != self.feature).collect())
            .unwrap_or_default()
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let witness = self.witness.as_ref().map(|w| {
            let mut v = w.to_json(schema);
            v["contingency"] = self.contingency().iter().map(|&i| schema.name(i)).collect::<Vec<_>>().into();
            v
        });
        json!({
            "feature": schema.name(self.feature),
            "score": format_ratio(&self.score),
            "score_decimal": ratio_to_f64(&self.score),
            "witness": witness,
            "counterfactual_value_explanation": self.counterfactual_value_explanation(),
            "actual_value_explanation": self.actual_value_explanation(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RespReport {
    pub features: Vec<FeatureResp>,
    /// False when the underlying search was truncated.
    pub exhausted: bool,
}

impl RespReport {
    pub fn score(&self, feature: usize) -> &BigRational {
        &self.features[feature].score
    }

    /// Features with the largest positive score.
    pub fn argmax(&self) -> BTreeSet<usize> {
        let Some(best) = self.features.iter().map(|f| &f.score).max() else {
            return BTreeSet::new();
        };
        if best.is_zero() {
            return BTreeSet::new();
        }
        self.features.iter().filter(|f| &f.score == best).map(|f| f.feature).collect()
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        json!({
            "features": self.features.iter().map(|f| f.to_json(schema)).collect::<Vec<_>>(),
            "exhausted": self.exhausted,
        })
    }
}

/// Scores derived from a list of s-explanations over `n` features.
pub fn resp_from_s_explanations(n: usize, s_expls: &[Explanation]) -> Vec<FeatureResp> {
    (0..n)
        .map(|i| {
            let witness = s_expls.iter().filter(|x| x.contains(i)).min_by_key(|x| x.cardinality).cloned();
            let score = witness.as_ref().map_or_else(BigRational::zero, |w| ratio(1, w.cardinality as i64));
            FeatureResp { feature: i, score, witness }
        })
        .collect()
}

pub fn x_resp(
    classifier: &ClassifierHandle,
    e: &Entity,
    constraints: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<RespReport> {
    let sx = s_explanations(classifier, e, constraints, cfg)?;
    let report = RespReport {
        features: resp_from_s_explanations(classifier.schema().len(), &sx.items),
        exhausted: sx.exhausted,
    };
    for f in &report.features {
        debug_assert!(f.score.is_zero() || f.score <= BigRational::one());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxResp {
    pub features: BTreeSet<usize>,
    pub no_counterfactual: bool,
}

/// Features occurring in some c-explanation.
pub fn max_resp_features(
    classifier: &ClassifierHandle,
    e: &Entity,
    constraints: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<MaxResp> {
    let cx = c_explanations(classifier, e, constraints, cfg)?;
    Ok(MaxResp {
        features: cx.items.iter().flat_map(|x| x.changed.keys().copied()).collect(),
        no_counterfactual: cx.no_counterfactual(),
    })
}

/// A probability model over the product space.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform,
    /// Independent marginals, one probability per domain position.
    Product(Vec<Vec<BigRational>>),
    /// Relative frequency in a sample of value vectors.
    Empirical(Vec<Vec<usize>>),
    /// `base` restricted to entities satisfying every constraint in `chi`.
    Conditioned {
        base: Box<Distribution>,
        chi: Vec<DenialConstraint>,
        norm: BigRational,
    },
}

impl Distribution {
    pub fn product(schema: &FeatureSchema, marginals: Vec<Vec<BigRational>>) -> Result<Self> {
        if marginals.len() != schema.len() {
            return Err(ScoreError::Distribution(format!(
                "{} marginals for {} features",
                marginals.len(),
                schema.len()
            )));
        }
        let tolerance = ratio(1, 1_000_000_000);
        for (i, m) in marginals.iter().enumerate() {
            let name = schema.name(i);
            if m.len() != schema.domain_size(i) {
                return Err(ScoreError::Distribution(format!("marginal of `{name}` has wrong length")));
            }
            if m.iter().any(|p| p < &BigRational::zero()) {
                return Err(ScoreError::Distribution(format!("negative probability for `{name}`")));
            }
            let sum: BigRational = m.iter().sum();
            if (sum - BigRational::one()).abs() > tolerance {
                return Err(ScoreError::Distribution(format!("marginal of `{name}` does not sum to 1")));
            }
        }
        Ok(Distribution::Product(marginals))
    }

    /// Marginals from CSV lines `feature,value,probability`; unlisted
    /// values get probability 0.
    pub fn product_from_csv<R: Read>(schema: &FeatureSchema, reader: R) -> Result<Self> {
        let mut marginals: Vec<Vec<BigRational>> =
            (0..schema.len()).map(|i| vec![BigRational::zero(); schema.domain_size(i)]).collect();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ScoreError::Distribution(e.to_string()))?;
            if rec.len() != 3 {
                return Err(ScoreError::Distribution(format!("line {}: expected 3 fields", n + 2)));
            }
            let i = schema.index_of(&rec[0])?;
            let p = schema.value_position(i, &rec[1])?;
            marginals[i][p] = parse_probability(&rec[2])
                .ok_or_else(|| ScoreError::Distribution(format!("bad probability `{}`", &rec[2])))?;
        }
        Self::product(schema, marginals)
    }

    pub fn empirical(schema: &FeatureSchema, sample: Vec<Vec<usize>>) -> Result<Self> {
        if sample.is_empty() {
            return Err(ScoreError::Distribution("empirical sample is empty".into()));
        }
        for v in &sample {
            schema.check_values(v)?;
        }
        Ok(Distribution::Empirical(sample))
    }

    pub fn conditioned(schema: &FeatureSchema, base: Distribution, chi: Vec<DenialConstraint>) -> Result<Self> {
        let keep = |v: &[usize]| {
            let e = Entity::new("", v.to_vec());
            chi.iter().all(|c| satisfies(c, &e))
        };
        let norm = base.mass(schema, keep)?;
        if norm.is_zero() {
            return Err(ScoreError::ZeroConditioningMass);
        }
        Ok(Distribution::Conditioned { base: Box::new(base), chi, norm })
    }

    /// Total probability of the entities satisfying `pred`.
    pub fn mass(&self, schema: &FeatureSchema, pred: impl Fn(&[usize]) -> bool) -> Result<BigRational> {
        match self {
            Distribution::Empirical(sample) => {
                let hits = sample.iter().filter(|v| pred(v)).count();
                Ok(ratio(hits as i64, sample.len() as i64))
            }
            _ => {
                let mut total = BigRational::zero();
                for v in schema.product_space() {
                    if pred(&v) {
                        total += self.prob_values(schema, &v)?;
                    }
                }
                Ok(total)
            }
        }
    }

    pub fn prob(&self, schema: &FeatureSchema, e: &Entity) -> Result<BigRational> {
        self.prob_values(schema, &e.values)
    }

    pub fn prob_values(&self, schema: &FeatureSchema, values: &[usize]) -> Result<BigRational> {
        schema.check_values(values)?;
        Ok(match self {
            Distribution::Uniform => {
                let size = BigInt::from(schema.product_size());
                BigRational::new(BigInt::one(), size)
            }
            Distribution::Product(m) => values.iter().enumerate().map(|(i, &p)| m[i][p].clone()).product(),
            Distribution::Empirical(sample) => {
                let hits = sample.iter().filter(|v| v.as_slice() == values).count();
                ratio(hits as i64, sample.len() as i64)
            }
            Distribution::Conditioned { base, chi, norm } => {
                let e = Entity::new("", values.to_vec());
                if chi.iter().all(|c| satisfies(c, &e)) {
                    base.prob_values(schema, values)? / norm
                } else {
                    BigRational::zero()
                }
            }
        })
    }
}

pub fn prob(d: &Distribution, schema: &FeatureSchema, e: &Entity) -> Result<BigRational> {
    d.prob(schema, e)
}

/// Local probabilistic responsibility of `f_star` given the contingency
/// assignment `gamma` (feature, new value position):
///
/// `(L(e') - E[L(e'') | e'' agrees with e' off f_star]) / (1 + |gamma|)`
///
/// where `e' = e[gamma]` and the expectation weighs each value of
/// `f_star` by its probability under `d` with the other coordinates fixed.
pub fn local_resp(
    classifier: &ClassifierHandle,
    e: &Entity,
    f_star: usize,
    gamma: &[(usize, usize)],
    d: &Distribution,
) -> Result<BigRational> {
    let schema = classifier.schema();
    schema.feature(f_star)?;
    if classifier.classify(e)? != Label::One {
        return Err(ScoreError::NotLabelOne);
    }
    let mut seen = BTreeSet::new();
    let mut shifted = e.values.clone();
    for &(f, w) in gamma {
        let feat = schema.feature(f)?;
        if f == f_star {
            return Err(ScoreError::FeatureInGamma(feat.name.clone()));
        }
        if !seen.insert(f) {
            return Err(ScoreError::RepeatedGamma(feat.name.clone()));
        }
        if w >= feat.domain.len() {
            return Err(SchemaError::PositionOutOfRange { feature: feat.name.clone(), position: w }.into());
        }
        if w == e.values[f] {
            return Err(ScoreError::UnchangedValue(feat.name.clone()));
        }
        shifted[f] = w;
    }
    if classifier.classify_values(&shifted)? != Label::One {
        return Err(ScoreError::LabelChanged);
    }
    let expectation = conditional_label_expectation(classifier, &shifted, f_star, d)?;
    Ok((BigRational::one() - expectation) / ratio(1 + gamma.len() as i64, 1))
}

fn conditional_label_expectation(
    classifier: &ClassifierHandle,
    base: &[usize],
    f_star: usize,
    d: &Distribution,
) -> Result<BigRational> {
    let schema = classifier.schema();
    let mut total = BigRational::zero();
    let mut ones = BigRational::zero();
    let mut v = base.to_vec();
    for p in 0..schema.domain_size(f_star) {
        v[f_star] = p;
        let w = d.prob_values(schema, &v)?;
        if w.is_zero() {
            continue;
        }
        if classifier.classify_values(&v)? == Label::One {
            ones += &w;
        }
        total += w;
    }
    if total.is_zero() {
        return Err(ScoreError::ZeroConditionalMass(schema.name(f_star).to_string()));
    }
    Ok(ones / total)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalConfig {
    /// Largest contingency set tried; unbounded when `None`.
    pub max_gamma: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalResp {
    pub feature: usize,
    pub score: BigRational,
    /// The maximizing contingency assignment, first in (|gamma|, gamma
    /// indices, value positions) order among ties.
    pub gamma: Option<Vec<(usize, usize)>>,
    pub exhausted: bool,
}

impl GlobalResp {
    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let witness = self.gamma.as_ref().map(|g| {
            let m: serde_json::Map<String, serde_json::Value> =
                g.iter().map(|&(i, p)| (schema.name(i).to_string(), schema.value_name(i, p).into())).collect();
            json!({ "gamma": m })
        });
        json!({
            "feature": schema.name(self.feature),
            "score": format_ratio(&self.score),
            "score_decimal": ratio_to_f64(&self.score),
            "witness": witness,
            "counterfactual_value_explanation": self.score.is_one(),
            "actual_value_explanation": self.score > BigRational::zero(),
            "exhausted": self.exhausted,
        })
    }
}

/// Maximum positive local score over contingency assignments of minimum
/// size; 0 when no assignment scores positive. Assignments that change the
/// label or leave `f_star` with zero conditional mass are not candidates.
pub fn global_resp(
    classifier: &ClassifierHandle,
    e: &Entity,
    f_star: usize,
    d: &Distribution,
    cfg: &GlobalConfig,
) -> Result<GlobalResp> {
    let schema = classifier.schema();
    schema.feature(f_star)?;
    if classifier.classify(e)? != Label::One {
        return Err(ScoreError::NotLabelOne);
    }
    let others: Vec<usize> = (0..schema.len()).filter(|&i| i != f_star).collect();
    let limit = cfg.max_gamma.map_or(others.len(), |m| m.min(others.len()));
    for k in 0..=limit {
        let mut best: Option<(BigRational, Vec<(usize, usize)>)> = None;
        for subset in others.iter().copied().combinations(k) {
            let choices: Vec<Vec<usize>> =
                subset.iter().map(|&i| (0..schema.domain_size(i)).filter(|&p| p != e.values[i]).collect()).collect();
            for combo in choices.iter().multi_cartesian_product() {
                let gamma: Vec<(usize, usize)> = subset.iter().copied().zip(combo.into_iter().copied()).collect();
                let mut shifted = e.values.clone();
                for &(f, w) in &gamma {
                    shifted[f] = w;
                }
                if classifier.classify_values(&shifted)? != Label::One {
                    continue;
                }
                let expectation = match conditional_label_expectation(classifier, &shifted, f_star, d) {
                    Ok(x) => x,
                    Err(ScoreError::ZeroConditionalMass(_)) => continue,
                    Err(err) => return Err(err),
                };
                let score = (BigRational::one() - expectation) / ratio(1 + k as i64, 1);
                if score.is_zero() {
                    continue;
                }
                if best.as_ref().is_none_or(|(b, _)| &score > b) {
                    best = Some((score, gamma));
                }
            }
        }
        if let Some((score, gamma)) = best {
            return Ok(GlobalResp { feature: f_star, score, gamma: Some(gamma), exhausted: true });
        }
    }
    Ok(GlobalResp { feature: f_star, score: BigRational::zero(), gamma: None, exhausted: limit == others.len() })
}
