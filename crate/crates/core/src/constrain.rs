//! Admissibility of candidate counterfactual entities.
//!
//! Constraints are checked on the final candidate only, never on the
//! intermediate states of a stepwise intervention path.

use serde::Deserialize;

use crate::schema::{Entity, FeatureSchema, SchemaError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("denial constraint has no literals")]
    EmptyDenial,
    #[error("feature `{0}` has no declared order; only `fixed` or `free` apply")]
    Unordered(String),
    #[error("one-hot group needs at least two members")]
    SmallGroup,
    #[error("one-hot member `{0}` is not binary over {{0,1}}")]
    NotBinary(String),
    #[error("malformed constraints: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ConstraintError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Eq,
    Neq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal {
    pub feature: usize,
    pub value: usize,
    pub polarity: Polarity,
}

impl Literal {
    pub fn eq(feature: usize, value: usize) -> Self {
        Literal { feature, value, polarity: Polarity::Eq }
    }

    pub fn neq(feature: usize, value: usize) -> Self {
        Literal { feature, value, polarity: Polarity::Neq }
    }

    pub fn holds(&self, e: &Entity) -> bool {
        let same = e.values[self.feature] == self.value;
        match self.polarity {
            Polarity::Eq => same,
            Polarity::Neq => !same,
        }
    }
}

/// `¬(l1 ∧ … ∧ lk)`: an entity violates it by matching every literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DenialConstraint {
    literals: Vec<Literal>,
}

impl DenialConstraint {
    pub fn new(schema: &FeatureSchema, literals: Vec<Literal>) -> Result<Self> {
        if literals.is_empty() {
            return Err(ConstraintError::EmptyDenial);
        }
        for l in &literals {
            let f = schema.feature(l.feature)?;
            if l.value >= f.domain.len() {
                return Err(SchemaError::PositionOutOfRange { feature: f.name.clone(), position: l.value }.into());
            }
        }
        Ok(DenialConstraint { literals })
    }

    /// Positive literals given by (feature name, value name).
    pub fn forbid(schema: &FeatureSchema, pairs: &[(&str, &str)]) -> Result<Self> {
        let literals = pairs
            .iter()
            .map(|(f, v)| {
                let i = schema.index_of(f)?;
                Ok(Literal::eq(i, schema.value_position(i, v)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(schema, literals)
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn violated_by(&self, e: &Entity) -> bool {
        self.literals.iter().all(|l| l.holds(e))
    }
}

pub fn satisfies(chi: &DenialConstraint, e: &Entity) -> bool {
    !chi.violated_by(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    Fixed,
    IncreaseOnly,
    DecreaseOnly,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionabilityRule {
    pub feature: usize,
    pub mode: ActionMode,
}

impl ActionabilityRule {
    pub fn new(schema: &FeatureSchema, feature: usize, mode: ActionMode) -> Result<Self> {
        let f = schema.feature(feature)?;
        if matches!(mode, ActionMode::IncreaseOnly | ActionMode::DecreaseOnly) && !f.ordered {
            return Err(ConstraintError::Unordered(f.name.clone()));
        }
        Ok(ActionabilityRule { feature, mode })
    }

    /// Directional modes compare domain positions; the declared domain
    /// order is ascending.
    pub fn allows(&self, original: &Entity, candidate: &Entity) -> bool {
        let (from, to) = (original.values[self.feature], candidate.values[self.feature]);
        match self.mode {
            ActionMode::Fixed => from == to,
            ActionMode::IncreaseOnly => to >= from,
            ActionMode::DecreaseOnly => to <= from,
            ActionMode::Free => true,
        }
    }
}

/// Binary features of which exactly one must be `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OneHotGroup {
    members: Vec<usize>,
    /// position of `"1"` in each member's domain
    one: Vec<usize>,
}

impl OneHotGroup {
    pub fn new(schema: &FeatureSchema, members: Vec<usize>) -> Result<Self> {
        if members.len() < 2 {
            return Err(ConstraintError::SmallGroup);
        }
        let mut one = Vec::with_capacity(members.len());
        for &m in &members {
            let f = schema.feature(m)?;
            let mut dom: Vec<&str> = f.domain.iter().map(String::as_str).collect();
            dom.sort_unstable();
            if dom != ["0", "1"] {
                return Err(ConstraintError::NotBinary(f.name.clone()));
            }
            one.push(f.position("1").expect("binary domain has 1"));
        }
        Ok(OneHotGroup { members, one })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Domain position of `"1"` for the k-th member.
    pub fn one_position(&self, k: usize) -> usize {
        self.one[k]
    }

    pub fn holds(&self, e: &Entity) -> bool {
        self.members.iter().zip(&self.one).filter(|(&m, &one)| e.values[m] == one).count() == 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub denials: Vec<DenialConstraint>,
    pub actionability: Vec<ActionabilityRule>,
    pub onehot: Vec<OneHotGroup>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLiteral {
    feature: String,
    value: String,
    #[serde(default = "default_polarity")]
    polarity: Polarity,
}

fn default_polarity() -> Polarity {
    Polarity::Eq
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDenial {
    literals: Vec<RawLiteral>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    feature: String,
    mode: ActionMode,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    #[serde(default)]
    denials: Vec<RawDenial>,
    #[serde(default)]
    actionability: Vec<RawAction>,
    #[serde(default)]
    onehot: Vec<Vec<String>>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.denials.is_empty() && self.actionability.is_empty() && self.onehot.is_empty()
    }

    pub fn with_denial(mut self, d: DenialConstraint) -> Self {
        self.denials.push(d);
        self
    }

    pub fn with_rule(mut self, r: ActionabilityRule) -> Self {
        self.actionability.push(r);
        self
    }

    pub fn with_onehot(mut self, g: OneHotGroup) -> Self {
        self.onehot.push(g);
        self
    }

    pub fn from_json(schema: &FeatureSchema, text: &str) -> Result<Self> {
        let raw: RawConstraints = serde_json::from_str(text).map_err(|e| ConstraintError::Parse(e.to_string()))?;
        let mut out = ConstraintSet::new();
        for d in raw.denials {
            let literals = d
                .literals
                .iter()
                .map(|l| {
                    let i = schema.index_of(&l.feature)?;
                    Ok(Literal { feature: i, value: schema.value_position(i, &l.value)?, polarity: l.polarity })
                })
                .collect::<Result<Vec<_>>>()?;
            out.denials.push(DenialConstraint::new(schema, literals)?);
        }
        for a in raw.actionability {
            let i = schema.index_of(&a.feature)?;
            out.actionability.push(ActionabilityRule::new(schema, i, a.mode)?);
        }
        for g in raw.onehot {
            let members = g.iter().map(|n| schema.index_of(n)).collect::<std::result::Result<Vec<_>, _>>()?;
            out.onehot.push(OneHotGroup::new(schema, members)?);
        }
        Ok(out)
    }

    /// True iff `candidate` violates no denial, respects every
    /// actionability rule relative to `original`, and satisfies every
    /// one-hot group.
    pub fn admissible(&self, original: &Entity, candidate: &Entity) -> bool {
        self.denials.iter().all(|d| !d.violated_by(candidate))
            && self.actionability.iter().all(|r| r.allows(original, candidate))
            && self.onehot.iter().all(|g| g.holds(candidate))
    }

    /// Whether `e` lies in the event of the denial constraints.
    pub fn satisfies_denials(&self, e: &Entity) -> bool {
        self.denials.iter().all(|d| satisfies(d, e))
    }
}

pub fn admissible(cs: &ConstraintSet, original: &Entity, candidate: &Entity) -> bool {
    cs.admissible(original, candidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Feature;

    fn tennis() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::new("Outlook", &["sunny", "overcast", "rain"]),
            Feature::new("Humidity", &["high", "normal"]),
            Feature::new("Wind", &["strong", "weak"]),
        ])
        .unwrap()
    }

    fn applicant() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::new("Lift", &["0", "1"]),
            Feature::new("Gender", &["F", "M"]),
            Feature::new("Age", &["25", "28", "30"]).ordered(),
        ])
        .unwrap()
    }

    #[test]
    fn rain_and_strong_wind_is_inadmissible() {
        let s = tennis();
        let cs = ConstraintSet::new()
            .with_denial(DenialConstraint::forbid(&s, &[("Outlook", "rain"), ("Wind", "strong")]).unwrap());
        let e = s.entity("e", &["sunny", "normal", "weak"]).unwrap();
        let bad = s.entity("e", &["rain", "normal", "strong"]).unwrap();
        let ok = s.entity("e", &["sunny", "high", "weak"]).unwrap();
        assert!(!cs.admissible(&e, &bad));
        assert!(cs.admissible(&e, &ok));
    }

    #[test]
    fn empty_set_admits_everything() {
        let s = tennis();
        let e = s.entity("e", &["sunny", "normal", "weak"]).unwrap();
        for v in s.product_space() {
            assert!(admissible(&ConstraintSet::new(), &e, &Entity::new("x", v)));
        }
    }

    #[test]
    fn increase_only_age() {
        let s = applicant();
        let cs = ConstraintSet::new().with_rule(ActionabilityRule::new(&s, 2, ActionMode::IncreaseOnly).unwrap());
        let mary = s.entity("mary", &["1", "F", "28"]).unwrap();
        let younger = s.entity("mary", &["1", "F", "25"]).unwrap();
        let older = s.entity("mary", &["1", "F", "30"]).unwrap();
        assert!(!cs.admissible(&mary, &younger));
        assert!(cs.admissible(&mary, &older));
        assert!(cs.admissible(&mary, &mary));

        let fixed = ConstraintSet::new().with_rule(ActionabilityRule::new(&s, 1, ActionMode::Fixed).unwrap());
        assert!(!fixed.admissible(&mary, &s.entity("m", &["1", "M", "28"]).unwrap()));
        let dec = ActionabilityRule::new(&s, 2, ActionMode::DecreaseOnly).unwrap();
        assert!(dec.allows(&mary, &younger) && !dec.allows(&mary, &older));
        assert_eq!(
            ActionabilityRule::new(&s, 1, ActionMode::IncreaseOnly),
            Err(ConstraintError::Unordered("Gender".into()))
        );
    }

    #[test]
    fn denial_satisfaction() {
        let s =
            FeatureSchema::new(vec![Feature::new("Old", &["0", "1"]), Feature::new("OverDr", &["0", "1"])]).unwrap();
        let chi = DenialConstraint::new(&s, vec![Literal::eq(0, 0), Literal::eq(1, 1)]).unwrap();
        assert!(!satisfies(&chi, &Entity::new("a", vec![0, 1])));
        assert!(satisfies(&chi, &Entity::new("b", vec![1, 1])));
        assert!(satisfies(&chi, &Entity::new("c", vec![1, 0])));

        // Old = 0 ∧ Old ≠ 0 can never hold
        let never = DenialConstraint::new(&s, vec![Literal::eq(0, 0), Literal::neq(0, 0)]).unwrap();
        assert!(s.product_space().all(|v| satisfies(&never, &Entity::new("x", v))));

        assert_eq!(DenialConstraint::new(&s, vec![]), Err(ConstraintError::EmptyDenial));
    }

    #[test]
    fn onehot_exactly_one() {
        let s = FeatureSchema::new((1..=5).map(|b| Feature::new(format!("ERE_b{b}"), &["0", "1"])).collect()).unwrap();
        let g = OneHotGroup::new(&s, (0..5).collect()).unwrap();
        assert!(g.holds(&Entity::new("e", vec![0, 1, 0, 0, 0])));
        assert!(!g.holds(&Entity::new("e", vec![0, 1, 0, 1, 0])));
        assert!(!g.holds(&Entity::new("e", vec![0, 0, 0, 0, 0])));
        assert_eq!(OneHotGroup::new(&s, vec![0]), Err(ConstraintError::SmallGroup));
        let t = tennis();
        assert!(matches!(OneHotGroup::new(&t, vec![0, 1]), Err(ConstraintError::NotBinary(_))));
    }

    #[test]
    fn constraints_json() {
        let s = FeatureSchema::new(vec![
            Feature::new("Outlook", &["sunny", "overcast", "rain"]),
            Feature::new("Wind", &["strong", "weak"]),
            Feature::new("Age", &["25", "28", "30"]).ordered(),
            Feature::new("B1", &["0", "1"]),
            Feature::new("B2", &["0", "1"]),
        ])
        .unwrap();
        let cs = ConstraintSet::from_json(
            &s,
            r#"{"denials":[{"literals":[{"feature":"Outlook","value":"rain","polarity":"eq"},{"feature":"Wind","value":"strong","polarity":"neq"}]}],
                "actionability":[{"feature":"Age","mode":"increase-only"}],
                "onehot":[["B1","B2"]]}"#,
        )
        .unwrap();
        assert_eq!(cs.denials[0].literals()[1], Literal::neq(1, 0));
        assert_eq!(cs.actionability[0].mode, ActionMode::IncreaseOnly);
        assert_eq!(cs.onehot[0].members(), &[3, 4]);

        assert!(matches!(
            ConstraintSet::from_json(&s, r#"{"denials":[{"literals":[{"feature":"Rain","value":"x"}]}]}"#),
            Err(ConstraintError::Schema(SchemaError::UnknownFeature(_)))
        ));
        assert!(ConstraintSet::from_json(&s, "{}").unwrap().is_empty());
    }
}
