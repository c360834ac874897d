//! Multi-row batch input, view queries and custom view operations.

use std::net::IpAddr;

use hdb_core::auth::{hash_password_with, AuthMode, HashCost, Session, SessionStore, UserEntry};
use hdb_core::catalog::{ColumnRef, DataSourceConfig, SourceSet};
use hdb_core::doctree::{el, Page};
use hdb_core::hooks::{HookError, HookRegistry};
use hdb_core::ops::{AuditLog, Form, OpEnv, OperationKind};
use hdb_core::views::{
    batch_input, decode_batch_form, dispatch_view_op, view_select, BatchSpec, ViewDef, ViewError, ViewOp, ViewOutcome,
    ViewRegistry,
};
use hdb_core::{Clock, ManualClock, Value};
use hdb_testkit::fixtures::{self, direct_count, AUDIT_TABLE};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

struct World {
    _dir: tempfile::TempDir,
    nilhh: DataSourceConfig,
    audit_src: DataSourceConfig,
    cat: SourceSet,
    audit: AuditLog,
    clock: ManualClock,
}

fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let nilhh = fixtures::ni_lhh(dir.path());
    let audit_src = fixtures::lab(dir.path());
    World {
        cat: SourceSet::new(vec![nilhh.clone(), audit_src.clone()]),
        audit: AuditLog::new(audit_src.clone(), AUDIT_TABLE),
        nilhh,
        audit_src,
        _dir: dir,
        clock: ManualClock::new("2007-08-24T09:00:00Z".parse().unwrap()),
    }
}

fn well(c: &str) -> ColumnRef {
    ColumnRef::new("ni_lhh", "Well", c)
}

fn spec() -> BatchSpec {
    BatchSpec {
        shared: vec![well("PlateID"), well("StartDate")],
        per_row: vec![well("Pos"), well("Observation"), well("Count")],
        max_rows: 24,
    }
}

fn batch_form(rows: &[(String, String, String)]) -> Form {
    let mut f = Form::from([
        ("shared.PlateID".to_string(), "17".to_string()),
        ("shared.StartDate".to_string(), "2007-8-24".to_string()),
    ]);
    for (i, (pos, obs, count)) in rows.iter().enumerate() {
        let i = i + 1;
        f.insert(format!("row{i}.Pos"), pos.clone());
        f.insert(format!("row{i}.Observation"), obs.clone());
        f.insert(format!("row{i}.Count"), count.clone());
    }
    f
}

fn good_row(i: usize) -> (String, String, String) {
    let obs = ["alive", "dead", "censored"][i % 3];
    (format!("A{}", i + 1), obs.to_string(), (i * 3).to_string())
}

fn run_batch(w: &World, form: &Form) -> Result<usize, ViewError> {
    let hooks = HookRegistry::new();
    let mut env = OpEnv::new(&hooks, "nicos", w.clock.now());
    env.audit = Some(&w.audit);
    let (shared, rows) = decode_batch_form(&spec(), form);
    let mut diags = vec![];
    let r = batch_input(&env, &w.cat, &spec(), &shared, &rows, &mut diags);
    assert!(diags.is_empty(), "{diags:?}");
    r
}

#[test]
fn six_rows_share_the_shared_values() {
    let w = world();
    let rows: Vec<_> = (0..6).map(good_row).collect();
    assert_eq!(run_batch(&w, &batch_form(&rows)).unwrap(), 6);
    assert_eq!(direct_count(&w.nilhh, "Well"), 6);
    assert_eq!(direct_count(&w.audit_src, AUDIT_TABLE), 6);
    let raw = rusqlite::Connection::open(&w.nilhh.location).unwrap();
    let shared: Vec<(i64, String)> = raw
        .prepare("SELECT DISTINCT PlateID, StartDate FROM Well")
        .unwrap()
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(shared, vec![(17, "2007-08-24".to_string())]);
}

#[derive(Debug, Clone, Copy)]
enum Corruption {
    BadEnum,
    BadInteger,
    MissingRequired,
}

#[test]
fn any_corrupted_row_stores_nothing() {
    let mut runner = TestRunner::new(Config::with_cases(60));
    let strategy = (
        1usize..=6,
        prop_oneof![Just(Corruption::BadEnum), Just(Corruption::BadInteger), Just(Corruption::MissingRequired)],
    );
    runner
        .run(&strategy, |(bad, how)| {
            let w = world();
            let mut rows: Vec<_> = (0..6).map(good_row).collect();
            let r = &mut rows[bad - 1];
            match how {
                Corruption::BadEnum => r.1 = "zombie".into(),
                Corruption::BadInteger => r.2 = "many".into(),
                Corruption::MissingRequired => r.0 = String::new(),
            }
            let e = run_batch(&w, &batch_form(&rows)).unwrap_err();
            prop_assert!(matches!(e, ViewError::RowInvalid { index, .. } if index == bad), "{:?}", e);
            prop_assert_eq!(direct_count(&w.nilhh, "Well"), 0);
            prop_assert_eq!(direct_count(&w.audit_src, AUDIT_TABLE), 0);
            Ok(())
        })
        .unwrap();
}

#[test]
fn blank_rows_are_dropped_and_limits_enforced() {
    let w = world();
    let mut f = batch_form(&[good_row(0)]);
    f.insert("row2.Pos".into(), "  ".into());
    f.insert("row3.Pos".into(), "B3".into());
    f.insert("row3.Observation".into(), "dead".into());
    let (_, rows) = decode_batch_form(&spec(), &f);
    assert_eq!(rows.len(), 2);
    assert_eq!(run_batch(&w, &f).unwrap(), 2);

    let none = batch_form(&[]);
    assert!(matches!(run_batch(&w, &none), Err(ViewError::EmptyBatch)));
    let hooks = HookRegistry::new();
    let env = OpEnv::new(&hooks, "nicos", w.clock.now());
    let small = BatchSpec { max_rows: 2, ..spec() };
    let rows: Vec<Form> = (0..3)
        .map(|i| {
            let (p, o, c) = good_row(i);
            Form::from([("Pos".into(), p), ("Observation".into(), o), ("Count".into(), c)])
        })
        .collect();
    let e = batch_input(&env, &w.cat, &small, &Form::new(), &rows, &mut vec![]).unwrap_err();
    assert_eq!(e, ViewError::TooManyRows { got: 3, max: 2 });
}

fn session() -> Session {
    let users =
        vec![UserEntry::new("nicos", hash_password_with("pw", HashCost::TEST).unwrap(), "hdb_owner", "owner-pw")];
    let store = SessionStore::new(AuthMode::default(), users);
    let peer: IpAddr = "192.0.2.5".parse().unwrap();
    store.login("nicos", "pw", peer, ManualClock::new("2007-08-24T09:00:00Z".parse().unwrap()).now()).unwrap()
}

fn experiments_view() -> ViewDef {
    let exp = |c| ColumnRef::new("ni_lhh", "Experiment", c);
    ViewDef {
        name: "plate_wells".into(),
        columns: vec![exp("Title"), well("Pos"), well("Observation"), well("StartDate")],
        join_keys: vec![(exp("StartDate"), well("StartDate"))],
        ops: vec![
            ViewOp::Standard(OperationKind::Query),
            ViewOp::Standard(OperationKind::All),
            ViewOp::BatchInput(spec()),
            ViewOp::Custom { name: "summary".into(), handler: "well_summary".into() },
        ],
    }
}

fn hooks_with_handlers() -> HookRegistry {
    let mut hooks = HookRegistry::new();
    hooks
        .register_handler("well_summary", |req| {
            let rows = req
                .catalog
                .connect("ni_lhh")
                .map_err(HookError::failed)?
                .row_count("Well")
                .map_err(HookError::failed)?;
            Ok(Page::new("Summary")
                .with_body([el("p").text(format!("{} wells for {}", rows, req.session.user.hdb_name))]))
        })
        .unwrap();
    hooks.register_handler("broken", |_| Err(HookError::failed("no data"))).unwrap();
    hooks
}

#[test]
fn view_registration_is_validated() {
    let w = world();
    let hooks = hooks_with_handlers();
    let mut reg = ViewRegistry::new();
    reg.register(experiments_view(), &w.cat, &hooks).unwrap();
    assert_eq!(
        reg.register(experiments_view(), &w.cat, &hooks),
        Err(ViewError::DuplicateViewName("plate_wells".into()))
    );
    let mut bad = experiments_view();
    bad.name = "bad".into();
    bad.columns.push(well("Colour"));
    assert_eq!(reg.register(bad, &w.cat, &hooks), Err(ViewError::UnknownColumnInView(well("Colour"))));
    let mut bad = experiments_view();
    bad.name = "bad2".into();
    bad.ops.push(ViewOp::Custom { name: "x".into(), handler: "missing".into() });
    assert_eq!(reg.register(bad, &w.cat, &hooks), Err(ViewError::UnregisteredHandler("missing".into())));
    let mut bad = experiments_view();
    bad.name = "bad3".into();
    bad.ops.push(ViewOp::Standard(OperationKind::Delete));
    assert_eq!(reg.register(bad, &w.cat, &hooks), Err(ViewError::UnsupportedStandardOp(OperationKind::Delete)));
    assert_eq!(reg.len(), 1);
}

#[test]
fn view_query_joins_and_filters() {
    let w = world();
    let hooks = hooks_with_handlers();
    let env = OpEnv::new(&hooks, "nicos", w.clock.now());
    let raw = rusqlite::Connection::open(&w.nilhh.location).unwrap();
    raw.execute_batch(
        "INSERT INTO Experiment (Title, StartDate) VALUES ('growth', '2007-08-24'), ('other', '2007-08-25');",
    )
    .unwrap();
    run_batch(&w, &batch_form(&(0..4).map(good_row).collect::<Vec<_>>())).unwrap();

    let view = experiments_view();
    let all = view_select(&env, &w.cat, &view, &Form::new()).unwrap();
    assert_eq!(all.columns, ["Experiment.Title", "Well.Pos", "Well.Observation", "Well.StartDate"]);
    assert_eq!(all.rows.len(), 4);
    assert!(all.rows.iter().all(|r| r[0] == Value::Text("growth".into())));

    let f = Form::from([("f.Well.Observation".to_string(), "dead".to_string())]);
    let dead = view_select(&env, &w.cat, &view, &f).unwrap();
    assert_eq!(dead.rows.len(), 1);
    assert_eq!(dead.rows[0][1], Value::Text("A2".into()));
}

#[test]
fn custom_ops_dispatch_to_handlers() {
    let w = world();
    let hooks = hooks_with_handlers();
    let env = OpEnv::new(&hooks, "nicos", w.clock.now());
    let s = session();
    let mut view = experiments_view();
    let mut diags = vec![];
    match dispatch_view_op(&env, &w.cat, &s, &view, "summary", &Form::new(), &mut diags).unwrap() {
        ViewOutcome::Page(p) => assert_eq!(p.body_text(), "0 wells for nicos"),
        other => panic!("{other:?}"),
    }
    assert!(diags.is_empty());

    view.ops.push(ViewOp::Custom { name: "fails".into(), handler: "broken".into() });
    let e = dispatch_view_op(&env, &w.cat, &s, &view, "fails", &Form::new(), &mut diags).unwrap_err();
    assert!(matches!(e, ViewError::HandlerFailure { .. }));
    assert_eq!(diags.len(), 1);

    let e = dispatch_view_op(&env, &w.cat, &s, &view, "nope", &Form::new(), &mut diags).unwrap_err();
    assert_eq!(e, ViewError::NoSuchViewOp("nope".into()));
}

#[test]
fn batch_input_is_the_views_input_op() {
    let w = world();
    let hooks = hooks_with_handlers();
    let env = OpEnv::new(&hooks, "nicos", w.clock.now());
    let f = batch_form(&(0..3).map(good_row).collect::<Vec<_>>());
    let out = dispatch_view_op(&env, &w.cat, &session(), &experiments_view(), "input", &f, &mut vec![]).unwrap();
    assert_eq!(out, ViewOutcome::Inserted(3));
    assert_eq!(direct_count(&w.nilhh, "Well"), 3);
}
