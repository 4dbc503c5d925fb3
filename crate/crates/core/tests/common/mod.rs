//! Fixtures and brute-force oracles shared by the integration tests.
//!
//! The oracles work straight from the definitions over the whole product
//! space and share no code with the library's search or scoring.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use cfx::classify::{parse_rules, ClassifierHandle, Label, TableClassifier};
use cfx::constrain::{ConstraintSet, DenialConstraint, Literal};
use cfx::schema::{Entity, Feature, FeatureSchema};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn binary3() -> FeatureSchema {
    FeatureSchema::from_json(&read(fixture("binary3_schema.json"))).unwrap()
}

pub fn tennis_schema() -> FeatureSchema {
    FeatureSchema::from_json(&read(fixture("tennis_schema.json"))).unwrap()
}

pub fn table_handle(csv: &str) -> ClassifierHandle {
    let s = binary3();
    let t = TableClassifier::from_csv(&s, read(fixture(csv)).as_bytes()).unwrap();
    ClassifierHandle::table(s, t)
}

pub fn tennis_handle() -> ClassifierHandle {
    let s = tennis_schema();
    let rc = parse_rules(&read(fixture("tennis.rules")), &s).unwrap();
    ClassifierHandle::rules(s, rc)
}

pub fn e1() -> Entity {
    binary3().entity("e1", &["0", "1", "1"]).unwrap()
}

pub fn tennis_e() -> Entity {
    tennis_schema().entity("e", &["sunny", "normal", "weak"]).unwrap()
}

pub fn python() -> String {
    for p in ["python3", "python"] {
        if std::process::Command::new(p).arg("--version").output().is_ok() {
            return p.to_string();
        }
    }
    panic!("no python interpreter found")
}

pub fn tennis_command(args: &str) -> String {
    format!("{} {} {args}", python(), fixture("tennis_classifier.py").display())
}

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Schema with anonymous features `A0, A1, …` whose domains are `v0, v1, …`.
pub fn synthetic_schema(sizes: &[usize]) -> FeatureSchema {
    FeatureSchema::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let dom: Vec<String> = (0..k).map(|v| format!("v{v}")).collect();
                let dom: Vec<&str> = dom.iter().map(String::as_str).collect();
                Feature::new(format!("A{i}"), &dom)
            })
            .collect(),
    )
    .unwrap()
}

/// Every value vector of the product space, first feature slowest.
pub fn all_points(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &k in sizes {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// A classifier given as a plain lookup closure.
pub struct Truth {
    pub sizes: Vec<usize>,
    pub labels: Vec<bool>,
}

impl Truth {
    pub fn index(&self, v: &[usize]) -> usize {
        v.iter().zip(&self.sizes).fold(0, |acc, (&x, &k)| acc * k + x)
    }

    pub fn label(&self, v: &[usize]) -> bool {
        self.labels[self.index(v)]
    }

    pub fn handle(&self) -> ClassifierHandle {
        let s = synthetic_schema(&self.sizes);
        let t = TableClassifier::tabulate(&s, |v| if self.label(v) { Label::One } else { Label::Zero });
        ClassifierHandle::table(s, t)
    }
}

/// Changed-feature sets of all admissible label-0 points, each with the
/// point itself.
pub fn oracle_counterfactuals(truth: &Truth, e: &[usize], cs: &ConstraintSet) -> Vec<(BTreeSet<usize>, Vec<usize>)> {
    let orig = Entity::new("e", e.to_vec());
    all_points(&truth.sizes)
        .into_iter()
        .filter(|p| !truth.label(p))
        .filter(|p| cs.admissible(&orig, &Entity::new("c", p.clone())))
        .map(|p| ((0..p.len()).filter(|&i| p[i] != e[i]).collect(), p))
        .collect()
}

pub fn oracle_s(cfs: &[(BTreeSet<usize>, Vec<usize>)]) -> BTreeSet<Vec<usize>> {
    cfs.iter()
        .filter(|(s, _)| !cfs.iter().any(|(t, _)| t.len() < s.len() && t.is_subset(s)))
        .map(|(_, p)| p.clone())
        .collect()
}

pub fn oracle_c(cfs: &[(BTreeSet<usize>, Vec<usize>)]) -> BTreeSet<Vec<usize>> {
    let Some(m) = cfs.iter().map(|(s, _)| s.len()).min() else {
        return BTreeSet::new();
    };
    cfs.iter().filter(|(s, _)| s.len() == m).map(|(_, p)| p.clone()).collect()
}

/// 1 / (smallest s-explanation containing `i`), 0 when none does.
pub fn oracle_x_resp(cfs: &[(BTreeSet<usize>, Vec<usize>)], i: usize) -> BigRational {
    let minimal: Vec<&BTreeSet<usize>> =
        cfs.iter().map(|(s, _)| s).filter(|s| !cfs.iter().any(|(t, _)| t.len() < s.len() && t.is_subset(s))).collect();
    minimal
        .iter()
        .filter(|s| s.contains(&i))
        .map(|s| s.len())
        .min()
        .map_or_else(BigRational::zero, |m| ratio(1, m as i64))
}

/// Weights for the definitional probabilistic score: `None` is uniform,
/// otherwise independent marginals.
pub fn weight(marginals: Option<&[Vec<BigRational>]>, p: &[usize]) -> BigRational {
    match marginals {
        None => BigRational::one(),
        Some(m) => p.iter().enumerate().map(|(i, &v)| m[i][v].clone()).product(),
    }
}

/// Definitional global score: enumerate every (gamma, w) satisfying the
/// side conditions, keep positive local scores, restrict to the smallest
/// |gamma| among them and take the maximum.
pub fn oracle_global(truth: &Truth, e: &[usize], f: usize, marginals: Option<&[Vec<BigRational>]>) -> BigRational {
    let n = e.len();
    let mut best: Option<(usize, BigRational)> = None;
    for p in all_points(&truth.sizes) {
        // p is e' when it agrees with e on f; gamma is where it differs
        if p[f] != e[f] {
            continue;
        }
        let gamma: Vec<usize> = (0..n).filter(|&i| p[i] != e[i]).collect();
        if !truth.label(&p) {
            continue;
        }
        let mut total = BigRational::zero();
        let mut ones = BigRational::zero();
        for v in 0..truth.sizes[f] {
            let mut q = p.clone();
            q[f] = v;
            let w = weight(marginals, &q);
            if truth.label(&q) {
                ones += &w;
            }
            total += w;
        }
        if total.is_zero() {
            continue;
        }
        let local = (BigRational::one() - ones / total) / ratio(1 + gamma.len() as i64, 1);
        if local.is_zero() {
            continue;
        }
        best = match best {
            None => Some((gamma.len(), local)),
            Some((k, _)) if gamma.len() < k => Some((gamma.len(), local)),
            Some((k, b)) if gamma.len() == k && local > b => Some((k, local)),
            other => other,
        };
    }
    best.map_or_else(BigRational::zero, |(_, b)| b)
}

/// All size vectors with 1..=4 features and a product space of 2..=12.
pub fn small_shapes() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(s) = stack.pop() {
        let prod: usize = s.iter().product();
        if !s.is_empty() && prod >= 2 {
            out.push(s.clone());
        }
        if s.len() < 4 {
            for k in 1..=6 {
                if prod * k <= 12 {
                    let mut t = s.clone();
                    t.push(k);
                    stack.push(t);
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone)]
pub struct Case {
    pub sizes: Vec<usize>,
    pub labels: Vec<bool>,
    pub entity: Vec<usize>,
    /// (feature, value) pairs of an optional denial
    pub denial: Vec<(usize, usize)>,
    /// unnormalized weights per feature value
    pub weights: Vec<Vec<u32>>,
}

impl Case {
    pub fn truth(&self) -> Truth {
        Truth { sizes: self.sizes.clone(), labels: self.labels.clone() }
    }

    pub fn constraints(&self, schema: &FeatureSchema) -> ConstraintSet {
        if self.denial.is_empty() {
            return ConstraintSet::new();
        }
        let lits = self.denial.iter().map(|&(f, v)| Literal::eq(f, v)).collect();
        ConstraintSet::new().with_denial(DenialConstraint::new(schema, lits).unwrap())
    }

    pub fn marginals(&self) -> Vec<Vec<BigRational>> {
        self.weights
            .iter()
            .map(|w| {
                let total: u32 = w.iter().sum();
                w.iter().map(|&x| ratio(x as i64, total as i64)).collect()
            })
            .collect()
    }
}

/// A random truth table over a small schema, with the entity forced to
/// label 1.
pub fn case() -> impl Strategy<Value = Case> {
    let shapes = small_shapes();
    (0..shapes.len())
        .prop_flat_map(move |k| {
            let sizes = shapes[k].clone();
            let total: usize = sizes.iter().product();
            let entity = sizes.iter().map(|&s| 0..s).collect::<Vec<_>>();
            let denial = prop::collection::vec((0..sizes.len(), 0usize..6), 0..=2).prop_map({
                let sizes = sizes.clone();
                move |d| {
                    let mut seen = BTreeSet::new();
                    d.into_iter().map(|(f, v)| (f, v % sizes[f])).filter(|(f, _)| seen.insert(*f)).collect::<Vec<_>>()
                }
            });
            let weights = sizes
                .iter()
                .map(|&s| {
                    prop::collection::vec(0u32..4, s).prop_map(|mut w| {
                        if w.iter().all(|&x| x == 0) {
                            w[0] = 1;
                        }
                        w
                    })
                })
                .collect::<Vec<_>>();
            (Just(sizes), prop::collection::vec(any::<bool>(), total), entity, denial, weights)
        })
        .prop_map(|(sizes, mut labels, entity, denial, weights)| {
            let t = Truth { sizes: sizes.clone(), labels: labels.clone() };
            let i = t.index(&entity);
            labels[i] = true;
            Case { sizes, labels, entity, denial, weights }
        })
}
