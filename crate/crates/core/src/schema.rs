//! Feature-space vocabulary plus the subset (`s`) and cardinality (`c`)
//! orders on explanations.
//!
//! Features are addressed by position. Domain values are opaque strings;
//! internally an entity stores the *position* of each value inside its
//! feature's domain, and names only matter at the I/O boundary.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema has no features")]
    Empty,
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("feature `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("feature `{feature}` lists value `{value}` twice")]
    DuplicateValue { feature: String, value: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("value `{value}` is not in the domain of `{feature}`")]
    ValueOutOfDomain { feature: String, value: String },
    #[error("value position {position} out of range for `{feature}`")]
    PositionOutOfRange { feature: String, position: usize },
    #[error("entity has {got} values, schema has {expected} features")]
    Arity { expected: usize, got: usize },
    #[error("intervention sets feature `{0}` to its current value")]
    NoOpChange(String),
    #[error("intervention changes feature `{0}` twice")]
    RepeatedFeature(String),
    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SchemaError>;

/// One categorical feature and its finite domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub domain: Vec<String>,
    /// When set, the declared domain order is ascending and directional
    /// actionability rules may refer to it.
    #[serde(default)]
    pub ordered: bool,
}

impl Feature {
    pub fn new(name: impl Into<String>, domain: &[&str]) -> Self {
        Feature { name: name.into(), domain: domain.iter().map(|v| v.to_string()).collect(), ordered: false }
    }

    pub fn ordered(mut self) -> Self {
        self.ordered = true;
        self
    }

    pub fn position(&self, value: &str) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }
}

#[derive(Deserialize)]
struct RawSchema {
    features: Vec<Feature>,
}

/// An ordered, validated list of categorical features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut names = HashSet::new();
        for f in &features {
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateFeature(f.name.clone()));
            }
            if f.domain.is_empty() {
                return Err(SchemaError::EmptyDomain(f.name.clone()));
            }
            let mut seen = HashSet::new();
            for v in &f.domain {
                if !seen.insert(v.as_str()) {
                    return Err(SchemaError::DuplicateValue { feature: f.name.clone(), value: v.clone() });
                }
            }
        }
        Ok(FeatureSchema { features })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSchema = serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        Self::new(raw.features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schema serializes")
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> Result<&Feature> {
        self.features.get(index).ok_or(SchemaError::IndexOutOfRange(index))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features.iter().position(|f| f.name == name).ok_or_else(|| SchemaError::UnknownFeature(name.to_string()))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.features[index].name
    }

    pub fn domain_size(&self, index: usize) -> usize {
        self.features[index].domain.len()
    }

    pub fn value_name(&self, index: usize, position: usize) -> &str {
        &self.features[index].domain[position]
    }

    /// Position of `value` in the domain of feature `index`.
    pub fn value_position(&self, index: usize, value: &str) -> Result<usize> {
        let f = self.feature(index)?;
        f.position(value)
            .ok_or_else(|| SchemaError::ValueOutOfDomain { feature: f.name.clone(), value: value.to_string() })
    }

    /// Size of the product space, saturating at `u128::MAX`.
    pub fn product_size(&self) -> u128 {
        self.features.iter().fold(1u128, |acc, f| acc.saturating_mul(f.domain.len() as u128))
    }

    /// Every value vector of the product space, odometer order (last
    /// feature varies fastest).
    pub fn product_space(&self) -> ProductSpace<'_> {
        ProductSpace {
            sizes: self.features.iter().map(|f| f.domain.len()).collect(),
            next: Some(vec![0; self.features.len()]),
            _schema: self,
        }
    }

    pub fn check_values(&self, values: &[usize]) -> Result<()> {
        if values.len() != self.len() {
            return Err(SchemaError::Arity { expected: self.len(), got: values.len() });
        }
        for (i, &p) in values.iter().enumerate() {
            if p >= self.domain_size(i) {
                return Err(SchemaError::PositionOutOfRange { feature: self.name(i).to_string(), position: p });
            }
        }
        Ok(())
    }

    /// Resolve a row of value names into an entity.
    pub fn entity<S: AsRef<str>>(&self, id: impl Into<String>, values: &[S]) -> Result<Entity> {
        if values.len() != self.len() {
            return Err(SchemaError::Arity { expected: self.len(), got: values.len() });
        }
        let values =
            values.iter().enumerate().map(|(i, v)| self.value_position(i, v.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Entity { id: id.into(), values })
    }

    pub fn value_names(&self, e: &Entity) -> Vec<&str> {
        e.values.iter().enumerate().map(|(i, &p)| self.value_name(i, p)).collect()
    }

    pub fn entity_from_json(&self, text: &str) -> Result<Entity> {
        let raw: RawEntity = serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        self.entity(raw.id, &raw.values)
    }

    pub fn entity_to_json(&self, e: &Entity) -> serde_json::Value {
        serde_json::json!({ "id": e.id, "values": self.value_names(e) })
    }

    /// Entities from CSV: header is `id` followed by the feature names in
    /// any order.
    pub fn entities_from_csv<R: Read>(&self, reader: R) -> Result<Vec<Entity>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| SchemaError::Parse(e.to_string()))?.clone();
        if headers.get(0) != Some("id") {
            return Err(SchemaError::Parse("first CSV column must be `id`".into()));
        }
        let columns = column_map(self, headers.iter().skip(1))?;
        let mut out = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| SchemaError::Parse(e.to_string()))?;
            let mut row = vec![""; self.len()];
            for (col, &feature) in columns.iter().enumerate() {
                row[feature] = record.get(col + 1).unwrap_or("");
            }
            out.push(self.entity(record.get(0).unwrap_or(""), &row)?);
        }
        Ok(out)
    }
}

/// Map CSV header names onto feature indices, requiring each feature once.
pub(crate) fn column_map<'a>(schema: &FeatureSchema, names: impl Iterator<Item = &'a str>) -> Result<Vec<usize>> {
    let mut map = Vec::new();
    let mut seen = BTreeSet::new();
    for name in names {
        let i = schema.index_of(name)?;
        if !seen.insert(i) {
            return Err(SchemaError::DuplicateFeature(name.to_string()));
        }
        map.push(i);
    }
    if let Some(missing) = (0..schema.len()).find(|i| !seen.contains(i)) {
        return Err(SchemaError::Parse(format!("CSV header lacks feature `{}`", schema.name(missing))));
    }
    Ok(map)
}

pub struct ProductSpace<'a> {
    sizes: Vec<usize>,
    next: Option<Vec<usize>>,
    _schema: &'a FeatureSchema,
}

impl Iterator for ProductSpace<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut i = succ.len();
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            succ[i] += 1;
            if succ[i] < self.sizes[i] {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

#[derive(Deserialize)]
struct RawEntity {
    id: String,
    values: Vec<String>,
}

/// A record conforming to some schema: one value position per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entity {
    pub id: String,
    pub values: Vec<usize>,
}

impl Entity {
    pub fn new(id: impl Into<String>, values: Vec<usize>) -> Self {
        Entity { id: id.into(), values }
    }

    pub fn hamming(&self, other: &Entity) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count()
    }
}

/// A set of simultaneous feature changes, keyed by feature index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Intervention {
    changes: BTreeMap<usize, usize>,
}

impl Intervention {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from (feature index, new value position) pairs; a feature may
    /// appear once.
    pub fn from_changes(schema: &FeatureSchema, changes: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut iv = Intervention::new();
        for (i, v) in changes {
            let f = schema.feature(i)?;
            if v >= f.domain.len() {
                return Err(SchemaError::PositionOutOfRange { feature: f.name.clone(), position: v });
            }
            if iv.changes.insert(i, v).is_some() {
                return Err(SchemaError::RepeatedFeature(f.name.clone()));
            }
        }
        Ok(iv)
    }

    /// Build from (feature name, value name) pairs.
    pub fn from_names(schema: &FeatureSchema, changes: &[(&str, &str)]) -> Result<Self> {
        let resolved = changes
            .iter()
            .map(|(f, v)| {
                let i = schema.index_of(f)?;
                Ok((i, schema.value_position(i, v)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_changes(schema, resolved)
    }

    pub fn changes(&self) -> &BTreeMap<usize, usize> {
        &self.changes
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    /// The changed-feature set.
    pub fn features(&self) -> BTreeSet<usize> {
        self.changes.keys().copied().collect()
    }
}

/// The original values displaced by a counterfactual intervention,
/// together with the resulting entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    /// feature index -> original value position
    pub changed: BTreeMap<usize, usize>,
    pub counterfactual: Entity,
    pub cardinality: usize,
}

impl Explanation {
    pub fn features(&self) -> BTreeSet<usize> {
        self.changed.keys().copied().collect()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.changed.contains_key(&feature)
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let changed: serde_json::Map<String, serde_json::Value> =
            self.changed.iter().map(|(&i, &p)| (schema.name(i).to_string(), schema.value_name(i, p).into())).collect();
        serde_json::json!({
            "changed": changed,
            "counterfactual": schema.value_names(&self.counterfactual),
            "cardinality": self.cardinality,
        })
    }
}

/// Apply `iv` to `e`. Every change must move a feature off its current value.
pub fn apply_intervention(schema: &FeatureSchema, e: &Entity, iv: &Intervention) -> Result<Entity> {
    schema.check_values(&e.values)?;
    let mut out = e.clone();
    for (&i, &v) in &iv.changes {
        let f = schema.feature(i)?;
        if v >= f.domain.len() {
            return Err(SchemaError::PositionOutOfRange { feature: f.name.clone(), position: v });
        }
        if e.values[i] == v {
            return Err(SchemaError::NoOpChange(f.name.clone()));
        }
        out.values[i] = v;
    }
    Ok(out)
}

/// The explanation that turns `e` into `other`.
pub fn diff(schema: &FeatureSchema, e: &Entity, other: &Entity) -> Result<Explanation> {
    schema.check_values(&e.values)?;
    schema.check_values(&other.values)?;
    let changed: BTreeMap<usize, usize> = e
        .values
        .iter()
        .zip(&other.values)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (&a, _))| (i, a))
        .collect();
    Ok(Explanation { cardinality: changed.len(), changed, counterfactual: other.clone() })
}

/// Subset order on changed-feature sets. `Some(Less)` means `a` strictly
/// precedes `b`; `None` means incomparable.
pub fn compare_s(a: &Explanation, b: &Explanation) -> Option<Ordering> {
    let (fa, fb) = (a.features(), b.features());
    match (fa.is_subset(&fb), fb.is_subset(&fa)) {
        (true, true) => Some(Ordering::Equal),
        (true, false) => Some(Ordering::Less),
        (false, true) => Some(Ordering::Greater),
        (false, false) => None,
    }
}

pub fn leq_s(a: &Explanation, b: &Explanation) -> bool {
    matches!(compare_s(a, b), Some(Ordering::Less | Ordering::Equal))
}

pub fn leq_c(a: &Explanation, b: &Explanation) -> bool {
    a.cardinality <= b.cardinality
}
