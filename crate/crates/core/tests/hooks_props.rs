//! Hook resolution properties and hooks observed through generated forms.

use chrono::{Local, TimeZone, Utc};
use hdb_core::catalog::open_source;
use hdb_core::doctree::{DocNode, Element};
use hdb_core::hooks::site::register_date_defaults;
use hdb_core::hooks::{HookFn, HookKind, HookMatcher, HookRegistry};
use hdb_core::ops::{available_ops, build_input_form, OperationKind};
use hdb_core::Timestamp;
use proptest::prelude::*;

const DBS: [&str; 2] = ["ni_lhh", "scibsdb"];
const TABLES: [&str; 3] = ["Experiment", "Well", "Compound"];
const COLUMNS: [&str; 6] = ["StartDate", "SetDate", "Notes", "CompID", "Pos", "EduDate"];

fn matcher() -> impl Strategy<Value = HookMatcher> {
    (
        prop::option::of(prop::sample::select(&DBS[..])),
        prop::option::of(prop::sample::select(&TABLES[..])),
        prop_oneof![
            Just(None),
            prop::sample::select(&COLUMNS[..]).prop_map(|c| Some((c, false))),
            prop::sample::select(&["Date", "ID", "s"][..]).prop_map(|c| Some((c, true))),
        ],
    )
        .prop_map(|(db, table, column)| {
            let mut m = HookMatcher::any();
            if let Some(db) = db {
                m = m.db(db);
            }
            if let Some(t) = table {
                m = m.table(t);
            }
            match column {
                Some((c, false)) => m.column(c),
                Some((s, true)) => m.column_suffix(s),
                None => m,
            }
        })
        .prop_filter("anchored", |m| *m != HookMatcher::any())
}

fn tagged(tag: usize) -> HookFn {
    HookFn::default_value(move |_, _| Ok(Some(format!("hook{tag}"))))
}

fn registry(matchers: &[HookMatcher]) -> HookRegistry {
    let mut reg = HookRegistry::new();
    for (i, m) in matchers.iter().enumerate() {
        reg.register(HookKind::InputDefaultValue, m.clone(), tagged(i)).unwrap();
    }
    reg
}

fn sites() -> impl Iterator<Item = (&'static str, &'static str, &'static str)> {
    DBS.iter().flat_map(|d| TABLES.iter().flat_map(move |t| COLUMNS.iter().map(move |c| (*d, *t, *c))))
}

fn resolved(reg: &HookRegistry, now: Timestamp) -> Vec<Option<String>> {
    let mut diags = vec![];
    let out = sites().map(|(d, t, c)| reg.default_value(now, d, t, c, &mut diags)).collect();
    assert!(diags.is_empty());
    out
}

fn noon(y: i32, m: u32, d: u32) -> Timestamp {
    Local.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap().with_timezone(&Utc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn resolution_is_deterministic(ms in prop::collection::vec(matcher(), 0..8)) {
        let reg = registry(&ms);
        let now = noon(2007, 8, 24);
        prop_assert_eq!(resolved(&reg, now), resolved(&reg, now));
        prop_assert_eq!(resolved(&reg.clone(), now), resolved(&reg, now));
    }

    #[test]
    fn adding_a_hook_only_affects_matched_sites(
        ms in prop::collection::vec(matcher(), 0..8),
        extra in matcher(),
    ) {
        let now = noon(2007, 8, 24);
        let before = resolved(&registry(&ms), now);
        let mut more = ms.clone();
        more.push(extra.clone());
        let after = resolved(&registry(&more), now);
        for ((site, b), a) in sites().zip(&before).zip(&after) {
            if !extra.matches(site.0, site.1, site.2) {
                prop_assert_eq!(a, b, "{:?} changed", site);
            }
        }
    }

    #[test]
    fn most_specific_match_wins(ms in prop::collection::vec(matcher(), 1..8)) {
        let reg = registry(&ms);
        let now = noon(2007, 8, 24);
        for ((d, t, c), got) in sites().zip(resolved(&reg, now)) {
            let rank = |m: &HookMatcher| {
                use hdb_core::hooks::{ColumnPattern, NamePattern};
                let col = match m.column { ColumnPattern::Any => 0, ColumnPattern::Suffix(_) => 1, ColumnPattern::Exact(_) => 2 };
                let tab = matches!(m.table, NamePattern::Exact(_)) as u8;
                let db = matches!(m.db, NamePattern::Exact(_)) as u8;
                (col, tab, db)
            };
            let best = ms
                .iter()
                .enumerate()
                .filter(|(_, m)| m.matches(d, t, c))
                .max_by(|(i, a), (j, b)| rank(a).cmp(&rank(b)).then(j.cmp(i)))
                .map(|(i, _)| format!("hook{i}"));
            prop_assert_eq!(got, best);
        }
    }
}

#[test]
fn unanchored_and_mismatched_registrations_are_refused() {
    let mut reg = HookRegistry::new();
    assert!(reg.register(HookKind::InputDefaultValue, HookMatcher::any(), tagged(0)).is_err());
    assert!(reg.register(HookKind::OutputLink, HookMatcher::any().column("EduID"), tagged(0)).is_err());
    assert!(reg.is_empty());
}

#[test]
fn failing_hooks_degrade_with_one_diagnostic() {
    let mut reg = HookRegistry::new();
    reg.register(
        HookKind::InputDefaultValue,
        HookMatcher::any().column("Notes"),
        HookFn::default_value(|_, _| panic!("boom")),
    )
    .unwrap();
    reg.register(
        HookKind::InputTextareaSize,
        HookMatcher::any().column("Notes"),
        HookFn::textarea_size(|_| Err(hdb_core::hooks::HookError::failed("nope"))),
    )
    .unwrap();
    let mut diags = vec![];
    assert_eq!(reg.default_value(noon(2007, 8, 24), "ni_lhh", "Experiment", "Notes", &mut diags), None);
    assert_eq!(diags.len(), 1);
    assert_eq!(reg.textarea_dims("ni_lhh", "Experiment", "Notes", &mut diags), None);
    assert_eq!(diags.len(), 2);
    assert!(diags.iter().all(|d| d.starts_with("hook_failed(")));
}

fn controls(node: &DocNode) -> Vec<&Element> {
    node.find_all(&|e| matches!(e.tag.as_str(), "input" | "textarea" | "select"))
}

fn prefill(e: &Element) -> Option<String> {
    match e.tag.as_str() {
        "textarea" => Some(e.children.iter().map(DocNode::text_content).collect::<String>()).filter(|s| !s.is_empty()),
        "input" if e.get_attr("disabled").is_none() => e.get_attr("value").map(str::to_owned).filter(|s| !s.is_empty()),
        _ => None,
    }
}

#[test]
fn date_hook_prefills_exactly_the_date_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hdb_testkit::fixtures::ni_lhh(dir.path());
    let conn = open_source(&cfg).unwrap();
    let mut reg = HookRegistry::new();
    register_date_defaults(&mut reg, "ni_lhh").unwrap();
    let mut checked = 0;
    for table in ["Experiment", "Well"] {
        let meta = conn.describe_table(table).unwrap();
        let mut diags = vec![];
        let form = build_input_form(&meta, &reg, noon(2007, 8, 24), "/x", &mut diags).unwrap();
        assert!(diags.is_empty());
        for c in controls(&form) {
            let Some(name) = c.get_attr("name") else { continue };
            let expected = name.ends_with("Date").then(|| "2007-8-24".to_string());
            assert_eq!(prefill(c), expected, "{table}.{name}");
            checked += 1;
        }
    }
    assert_eq!(checked, 9);
}

#[test]
fn textarea_hook_sizes_only_its_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hdb_testkit::fixtures::scibsdb(dir.path());
    let meta = open_source(&cfg).unwrap().describe_table("Compound").unwrap();
    let mut reg = HookRegistry::new();
    reg.register(
        HookKind::InputTextareaSize,
        HookMatcher::any().db("scibsdb").table("Compound").column("CompNote"),
        HookFn::textarea_size(|_| Ok(Some((10, 80)))),
    )
    .unwrap();
    let mut diags = vec![];
    let form = build_input_form(&meta, &reg, noon(2007, 8, 24), "/x", &mut diags).unwrap();
    let areas: Vec<_> = controls(&form).into_iter().filter(|e| e.tag == "textarea").collect();
    let dims: Vec<_> = areas
        .iter()
        .map(|e| (e.get_attr("name").unwrap(), e.get_attr("rows").unwrap(), e.get_attr("cols").unwrap()))
        .collect();
    assert_eq!(dims, vec![("CompName", "4", "60"), ("CompNote", "10", "80")]);
}

#[test]
fn op_override_can_shrink_but_never_grow_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hdb_testkit::fixtures::scibsdb(dir.path());
    let conn = open_source(&cfg).unwrap();
    let mut reg = HookRegistry::new();
    reg.register(
        HookKind::OpOverride,
        HookMatcher::any().db("scibsdb"),
        HookFn::op_override(|_, _| Ok(OperationKind::STANDARD.to_vec())),
    )
    .unwrap();
    reg.register(
        HookKind::OpOverride,
        HookMatcher::any().db("scibsdb").table("Plate"),
        HookFn::op_override(|_, _| Ok(vec![OperationKind::All, OperationKind::Query])),
    )
    .unwrap();
    let mut d = vec![];
    let ops = |t: &str, d: &mut Vec<String>| available_ops(&conn.describe_table(t).unwrap(), &reg, d);
    assert_eq!(ops("Input", &mut d), vec![OperationKind::Query, OperationKind::All]);
    assert_eq!(ops("Plate", &mut d), vec![OperationKind::Query, OperationKind::All]);
    assert_eq!(ops("Mix", &mut d), OperationKind::STANDARD.to_vec());
    assert!(d.is_empty());
}

#[test]
fn output_link_hook_linkifies_values() {
    let mut reg = HookRegistry::new();
    reg.register(
        HookKind::OutputLink,
        HookMatcher::any().column("EduID"),
        HookFn::output_link(|_, v| Ok((!v.is_empty()).then(|| format!("https://eduliss.example/compound?id={v}")))),
    )
    .unwrap();
    let mut d = vec![];
    let link = reg.linkify("scibsdb", "Compound", "EduID", "108525", &mut d).unwrap();
    assert!(link.contains("108525"));
    assert_eq!(reg.linkify("scibsdb", "Compound", "EduID", "", &mut d), None);
    assert_eq!(reg.linkify("scibsdb", "Compound", "CompID", "108525", &mut d), None);
}
