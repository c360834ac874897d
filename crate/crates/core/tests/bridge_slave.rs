//! The slave bridge driven against the mock interpreter.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use hdb_core::bridge::{
    run_derived_fill, serialize, spawn, BridgeError, DerivedFillSpec, DerivedOutput, Expr, OutputParse, SlaveState,
};
use hdb_core::catalog::ColumnRef;
use hdb_core::Value;
use hdb_testkit::mock_slave_path;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

const T: Duration = Duration::from_secs(10);

fn mock() -> String {
    mock_slave_path().to_string_lossy().into_owned()
}

fn process_gone(pid: u32) -> bool {
    !Path::new(&format!("/proc/{pid}")).exists()
}

#[test]
fn add_on_the_calculator() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let r = s.eval(&Expr::call("add", [Expr::num(1.0), Expr::num(1.0)]), T).unwrap();
    assert_eq!(r.value(), "2");
    assert_eq!(r.warnings, "");
    assert!(r.elapsed <= T);
    assert_eq!(s.shutdown(), SlaveState::Exited(0));
}

#[test]
fn stderr_is_captured_as_warnings() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let r = s.eval(&Expr::call("message", [Expr::str("warn!")]), T).unwrap();
    assert!(r.warnings.contains("warn!"));
    assert_eq!(r.output, "");
}

#[test]
fn missing_binary_is_a_spawn_failure() {
    let e = spawn("/nonexistent/hdb-no-such-interpreter", &[]).unwrap_err();
    assert!(matches!(e, BridgeError::SpawnFailure { .. }), "{e:?}");
}

#[test]
fn immediate_shutdown_exits_zero() {
    let mut s = spawn(&mock(), &[]).unwrap();
    assert_eq!(s.shutdown(), SlaveState::Exited(0));
    // Already exited: the stored state is reported again.
    assert_eq!(s.shutdown(), SlaveState::Exited(0));
}

#[test]
fn hung_slave_is_killed_on_shutdown() {
    let mut s = spawn(&mock(), &["--ignore-quit".into()]).unwrap();
    let pid = s.pid();
    let start = Instant::now();
    assert_eq!(s.shutdown_within(Duration::from_millis(300)), SlaveState::Killed);
    assert!(start.elapsed() < Duration::from_secs(3));
    assert!(process_gone(pid));
}

#[test]
fn timeout_kills_the_process() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let pid = s.pid();
    let start = Instant::now();
    let e = s.eval(&Expr::call("Sys.sleep", [Expr::num(30.0)]), Duration::from_secs(1)).unwrap_err();
    assert!(matches!(e, BridgeError::EvalTimeout(_)), "{e:?}");
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(s.state(), SlaveState::Killed);
    assert!(process_gone(pid), "pid {pid} still in the process table");
    let again = s.eval(&Expr::num(1.0), T).unwrap_err();
    assert!(matches!(again, BridgeError::SlaveExited { .. }));
}

#[test]
fn exit_mid_session_is_reported() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let e = s.eval(&Expr::call("q", []), T).unwrap_err();
    assert!(matches!(e, BridgeError::SlaveExited { code: Some(0) }), "{e:?}");
}

#[test]
fn delayed_output_stays_with_its_eval() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let first = s.eval(&Expr::call("trickle", [Expr::str("first-output"), Expr::num(15.0)]), T).unwrap();
    let second = s.eval(&Expr::call("trickle", [Expr::str("second"), Expr::num(5.0)]), T).unwrap();
    let third = s.eval(&Expr::call("add", [Expr::num(40.0), Expr::num(2.0)]), T).unwrap();
    assert_eq!(first.value(), "first-output");
    assert_eq!(second.value(), "second");
    assert_eq!(third.value(), "42");
}

#[test]
fn state_persists_between_evals() {
    let mut s = spawn(&mock(), &[]).unwrap();
    let v = Expr::Vec(vec![Expr::num(1.0), Expr::num(2.0), Expr::num(6.0)]);
    assert_eq!(s.eval(&Expr::assign("x", v), T).unwrap().value(), "");
    assert_eq!(s.eval(&Expr::call("mean", [Expr::ident("x")]), T).unwrap().value(), "3");
    let quoted = s.eval(&Expr::call("cat", [Expr::str("a\"b\\c\n")]), T).unwrap();
    assert_eq!(quoted.output, "a\"b\\c\n");
}

fn spectra_file(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("scan.txt");
    std::fs::write(&p, hdb_testkit::fixtures::spectra_upload(40)).unwrap();
    p
}

fn small_spec(outputs: Vec<DerivedOutput>, steps: Vec<Expr>, timeout: Duration) -> DerivedFillSpec {
    DerivedFillSpec {
        trigger: ColumnRef::new("scibsdb", "SpecScan", "ScanLoc"),
        program: mock(),
        args: vec![],
        steps,
        outputs,
        timeout,
    }
}

fn out(column: &str, expr: Expr, parse: OutputParse) -> DerivedOutput {
    DerivedOutput { column: column.into(), expr, parse }
}

fn load_step() -> Expr {
    Expr::assign("d", Expr::call("read_numbers", [Expr::str("{upload}")]))
}

#[test]
fn derived_fill_parses_and_stores_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("uploads");
    let upload = spectra_file(dir.path());
    let spec = small_spec(
        vec![
            out(
                "Nof",
                Expr::call("length", [Expr::call("column", [Expr::ident("d"), Expr::num(1.0), Expr::num(3.0)])]),
                OutputParse::ParseNumber,
            ),
            out("Method", Expr::str("bin"), OutputParse::ParseString),
            out(
                "Plot",
                Expr::call("aic_plot", [Expr::ident("d"), Expr::str("aic.ps")]),
                OutputParse::ArtifactPath { subdir: "aic".into() },
            ),
        ],
        vec![load_step()],
        T,
    );
    let mut diags = Vec::new();
    let values = run_derived_fill(&spec, &upload, &root, &mut diags);
    assert!(diags.is_empty(), "{diags:?}");
    assert_eq!(values["Nof"], Value::Integer(40));
    assert_eq!(values["Method"], Value::Text("bin".into()));
    let rel = values["Plot"].as_text().unwrap();
    assert!(rel.starts_with("aic/") && rel.ends_with("_aic.ps"), "{rel}");
    let stored = root.join(rel);
    assert!(stored.is_file());
    assert!(std::fs::read_to_string(stored).unwrap().starts_with("%!PS"));
}

#[test]
fn empty_number_output_gives_null_and_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let upload = spectra_file(dir.path());
    let spec = small_spec(
        vec![
            out("Silent", Expr::call("cat", [Expr::str("")]), OutputParse::ParseNumber),
            out("Fine", Expr::num(7.5), OutputParse::ParseNumber),
        ],
        vec![],
        T,
    );
    let mut diags = Vec::new();
    let values = run_derived_fill(&spec, &upload, dir.path(), &mut diags);
    assert_eq!(values["Silent"], Value::Null);
    assert_eq!(values["Fine"], Value::Real(7.5));
    assert_eq!(diags.len(), 1);
    assert!(diags[0].contains("Silent"));
}

#[test]
fn derived_fill_timeout_nulls_everything_once() {
    let dir = tempfile::tempdir().unwrap();
    let upload = spectra_file(dir.path());
    let spec = small_spec(
        vec![out("Nof", Expr::num(1.0), OutputParse::ParseNumber)],
        vec![load_step(), Expr::call("Sys.sleep", [Expr::num(30.0)])],
        Duration::from_secs(1),
    );
    let start = Instant::now();
    let mut diags = Vec::new();
    let values = run_derived_fill(&spec, &upload, dir.path(), &mut diags);
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(values["Nof"], Value::Null);
    assert_eq!(diags.len(), 1, "{diags:?}");
    assert!(diags[0].starts_with("derived_fill_failed(scibsdb.SpecScan.ScanLoc)"));
}

#[test]
fn unstartable_program_nulls_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(vec![out("A", Expr::num(1.0), OutputParse::ParseNumber)], vec![], T);
    spec.program = "/nonexistent/hdb-no-such-interpreter".into();
    let mut diags = Vec::new();
    let values = run_derived_fill(&spec, &dir.path().join("x"), dir.path(), &mut diags);
    assert_eq!(values["A"], Value::Null);
    assert_eq!(diags.len(), 1);
}

fn name() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9._]{0,6}"
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-1e6f64..1e6).prop_map(Expr::Num),
        any::<i32>().prop_map(|i| Expr::Num(i as f64)),
        "[ -~\\n\\t]{0,8}".prop_map(Expr::Str),
        name().prop_filter("c is reserved", |n| n != "c").prop_map(Expr::Ident),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Expr::Vec),
            (name().prop_filter("c is reserved", |n| n != "c"), prop::collection::vec(inner.clone(), 0..4))
                .prop_map(|(function, args)| Expr::Call { function, args }),
            (name(), inner).prop_map(|(target, v)| Expr::Assign { target, value: Box::new(v) }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn serialize_is_injective(a in expr(), b in expr()) {
        let (sa, sb) = (serialize(&a), serialize(&b));
        if let (Ok(sa), Ok(sb)) = (sa, sb) {
            prop_assert_eq!(sa == sb, a == b, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn serialize_is_one_line(e in expr()) {
        if let Ok(s) = serialize(&e) {
            prop_assert!(s.ends_with('\n'));
            prop_assert_eq!(s.matches('\n').count(), 1);
        }
    }
}

#[test]
fn corpus_serializations_are_distinct() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = expr();
    let mut seen = std::collections::BTreeMap::new();
    let mut trees = BTreeSet::new();
    while trees.len() < 500 {
        let e = strategy.new_tree(&mut runner).unwrap().current();
        let Ok(s) = serialize(&e) else { continue };
        let key = format!("{e:?}");
        if trees.insert(key.clone()) {
            if let Some(prev) = seen.insert(s.clone(), key.clone()) {
                panic!("{prev} and {key} both serialize to {s:?}");
            }
        }
    }
}
