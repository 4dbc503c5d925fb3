mod common;

use cfx::aspgen::{
    emit_cip, lint_cip, normalize_asp, shift_disjunctive_rule, CipOptions, Dialect, Embedding, ExplIds, Section,
};
use cfx::classify::ClassifierHandle;
use cfx::constrain::ConstraintSet;
use common::*;

fn table1_program() -> cfx::CipProgram {
    let opts = CipOptions { include_weak: true, include_count: true, ..CipOptions::default() };
    emit_cip(&binary3(), &e1(), &table_handle("table1.csv"), &opts).unwrap()
}

fn tennis_opts() -> CipOptions {
    CipOptions { embedding: Embedding::Rules, include_count: true, expl_ids: ExplIds::Name, ..CipOptions::default() }
}

fn assert_golden(text: &str, file: &str) {
    let want = normalize_asp(&read(golden(file)));
    let got = normalize_asp(text);
    if got != want {
        let at = got.chars().zip(want.chars()).take_while(|(a, b)| a == b).count();
        panic!(
            "{file} differs at normalized offset {at}:\n got: {}\nwant: {}",
            &got[at.saturating_sub(40)..(at + 60).min(got.len())],
            &want[at.saturating_sub(40)..(at + 60).min(want.len())]
        );
    }
}

#[test]
fn table1_facts_weak_count_matches_golden() {
    let p = table1_program();
    assert_golden(&p.text(), "table1_dlv_weak_count.lp");
    assert!(lint_cip(&p.text()).is_empty());
}

#[test]
fn tennis_rules_match_golden() {
    let p = emit_cip(&tennis_schema(), &tennis_e(), &tennis_handle(), &tennis_opts()).unwrap();
    assert_golden(&p.text(), "tennis_rules_dlv.lp");
    assert!(lint_cip(&p.text()).is_empty());
    assert!(p.text().contains("cls(X,Y,Z,1) :- Y = normal, X = sunny, dom3(Z)."));
}

#[test]
fn tennis_external_stub_matches_golden() {
    let opts = CipOptions { dialect: Dialect::AspCore2External, embedding: Embedding::ExternalStub, ..tennis_opts() };
    let p = emit_cip(&tennis_schema(), &tennis_e(), &tennis_handle(), &opts).unwrap();
    assert_golden(&p.text(), "tennis_external_asp2.lp");
    assert!(p.text().contains("cls(X,Y,Z,L) :- &classifier(X,Y,Z;L), dom1(X), dom2(Y), dom3(Z)."));
    assert!(lint_cip(&p.text()).is_empty());
}

#[test]
fn shift_splits_table1_rule_in_three() {
    let p = table1_program();
    let q = shift_disjunctive_rule(&p);
    let rules = q.section(Section::Intervention).unwrap();
    let body = "ent(E,X,Y,Z,tr), cls(X,Y,Z,1), dom1(Xp), dom2(Yp), dom3(Zp), X != Xp, Y != Yp, Z!= Zp, \
                chosen1(X,Y,Z,Xp), chosen2(X,Y,Z,Yp), chosen3(X,Y,Z,Zp)";
    let want = [
        format!("ent(E,Xp,Y,Z,do) :- {body}, not ent(E,X,Yp,Z,do), not ent(E,X,Y,Zp,do)."),
        format!("ent(E,X,Yp,Z,do) :- {body}, not ent(E,Xp,Y,Z,do), not ent(E,X,Y,Zp,do)."),
        format!("ent(E,X,Y,Zp,do) :- {body}, not ent(E,Xp,Y,Z,do), not ent(E,X,Yp,Z,do)."),
    ];
    assert_eq!(rules.len(), 3);
    for (got, want) in rules.iter().zip(&want) {
        assert_eq!(normalize_asp(got), normalize_asp(want));
    }
    assert!(lint_cip(&q.text()).is_empty());
    let opts = CipOptions { shift: true, include_weak: true, include_count: true, ..CipOptions::default() };
    assert_eq!(emit_cip(&binary3(), &e1(), &table_handle("table1.csv"), &opts).unwrap(), q);
}

#[test]
fn emission_is_byte_stable() {
    assert_eq!(table1_program().text(), table1_program().text());
}

#[test]
fn dialects_differ_only_in_documented_tokens() {
    let dlv =
        emit_cip(&tennis_schema(), &tennis_e(), &tennis_handle(), &CipOptions { include_weak: true, ..tennis_opts() })
            .unwrap();
    let core = emit_cip(
        &tennis_schema(),
        &tennis_e(),
        &tennis_handle(),
        &CipOptions { include_weak: true, dialect: Dialect::AspCore2External, ..tennis_opts() },
    )
    .unwrap();
    let mut a = dlv.text().replace(" v ", " | ").replace(", #int(M)", "");
    a = a.replacen("#include<ListAndSet>\n\n", "", 1);
    let mut b = core.text();
    for i in 1..=3 {
        b = b.replace(&format!(". [1@1,{i}]"), ".");
    }
    assert_eq!(a, b);
}

#[test]
fn rain_strong_becomes_hard_constraint() {
    let s = tennis_schema();
    let cs = ConstraintSet::from_json(&s, &read(fixture("rainstrong.json"))).unwrap();
    let opts = CipOptions { hard_constraints: cs, ..tennis_opts() };
    let p = emit_cip(&s, &tennis_e(), &tennis_handle(), &opts).unwrap();
    assert_eq!(p.section(Section::Hard).unwrap(), [":- ent(E,rain,Y,strong,tr)."]);
    assert!(lint_cip(&p.text()).is_empty());
}

#[test]
fn actionability_and_onehot_render_cleanly() {
    use cfx::schema::{Feature, FeatureSchema};
    let s = FeatureSchema::new(vec![
        Feature::new("Age", &["young", "middle", "old"]).ordered(),
        Feature::new("B1", &["0", "1"]),
        Feature::new("B2", &["0", "1"]),
        Feature::new("Job", &["Clerk", "Chef"]),
    ])
    .unwrap();
    let cs = ConstraintSet::from_json(
        &s,
        r#"{"actionability": [{"feature": "Age", "mode": "increase-only"}, {"feature": "Job", "mode": "fixed"}],
            "onehot": [["B1", "B2"]],
            "denials": [{"literals": [{"feature": "Age", "value": "old"}, {"feature": "Job", "value": "Chef", "polarity": "neq"}]}]}"#,
    )
    .unwrap();
    let t = cfx::TableClassifier::tabulate(&s, |v| if v[0] == 0 { cfx::Label::One } else { cfx::Label::Zero });
    let h = ClassifierHandle::table(s.clone(), t);
    let e = s.entity("e", &["young", "1", "0", "Clerk"]).unwrap();
    let p = emit_cip(&s, &e, &h, &CipOptions { hard_constraints: cs, ..CipOptions::default() }).unwrap();
    let hard = p.section(Section::Hard).unwrap();
    assert_eq!(
        hard,
        [
            "ord1(young,0). ord1(middle,1). ord1(old,2).",
            ":- ent(E,old,X2,X3,X4,tr), X4 != \"Chef\".",
            ":- ent(E,X1,X2,X3,X4,o), ent(E,X1p,X2p,X3p,X4p,tr), ord1(X1,R), ord1(X1p,Rp), Rp < R.",
            ":- ent(E,X1,X2,X3,X4,o), ent(E,X1p,X2p,X3p,X4p,tr), X4 != X4p.",
            ":- ent(E,X1,1,1,X4,tr).",
            ":- ent(E,X1,0,0,X4,tr).",
        ]
    );
    assert!(p.section(Section::Facts).unwrap()[3].contains("dom4(\"Clerk\")"));
    assert!(lint_cip(&p.text()).is_empty(), "{:?}", lint_cip(&p.text()));
}

#[test]
fn four_features_use_indexed_variables() {
    let sizes = [2, 2, 2, 2];
    let truth = Truth { sizes: sizes.to_vec(), labels: (0..16).map(|i| i % 3 != 0).collect() };
    let h = truth.handle();
    let e = cfx::Entity::new("e", vec![0, 0, 0, 1]);
    let p =
        emit_cip(h.schema(), &e, &h, &CipOptions { include_weak: true, include_count: true, ..CipOptions::default() })
            .unwrap();
    let rule = &p.section(Section::Intervention).unwrap()[0];
    assert_eq!(rule.matches(" v ").count(), 3);
    assert!(rule.starts_with("ent(E,X1p,X2,X3,X4,do) v "));
    assert_eq!(p.section(Section::Expl).unwrap().len(), 4);
    assert_eq!(p.section(Section::Weak).unwrap().len(), 4);
    assert!(lint_cip(&p.text()).is_empty());
    assert_eq!(shift_disjunctive_rule(&p).section(Section::Intervention).unwrap().len(), 4);
}
