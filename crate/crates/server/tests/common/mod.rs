//! A fixture deployment driven in-process through `App::handle`.
#![allow(dead_code)]

use std::cell::RefCell;
use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::{Local, TimeZone, Utc};
use hdb_core::auth::{hash_password_with, HashCost, UserEntry};
use hdb_core::catalog::{ColumnRef, DataSourceConfig};
use hdb_core::doctree::{DocNode, Element};
use hdb_core::ops::OperationKind;
use hdb_core::views::{BatchSpec, ViewDef, ViewOp};
use hdb_core::{Clock, ManualClock};
use hdb_server::config::SlaveCommand;
use hdb_server::{App, Request, Response, ServerConfig};
use hdb_testkit::fixtures;
use hdb_testkit::html::{check_page, page_body};

pub const ALICE: &str = "alice";
pub const ALICE_PW: &str = "alice-pw";
/// Mapped to the read-only engine account.
pub const BOB: &str = "bob";
pub const BOB_PW: &str = "bob-pw";

pub fn peer() -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 0, 7))
}

/// Noon local time on the date the date hook is checked against.
pub fn start_time() -> chrono::DateTime<Utc> {
    Local.with_ymd_and_hms(2007, 8, 24, 12, 0, 0).unwrap().with_timezone(&Utc)
}

pub struct Options {
    pub unreachable: bool,
    pub slave_args: Vec<String>,
    pub slave_timeout: Duration,
    pub ip_window: Option<Duration>,
    pub idle: Option<Duration>,
    pub upload_cap: Option<u64>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            unreachable: false,
            slave_args: vec![],
            slave_timeout: Duration::from_secs(20),
            ip_window: None,
            idle: None,
            upload_cap: None,
        }
    }
}

pub struct Site {
    pub dir: tempfile::TempDir,
    pub app: App,
    pub clock: Arc<ManualClock>,
    pub scibs: DataSourceConfig,
    pub nilhh: DataSourceConfig,
    pub upload_root: PathBuf,
    /// Every HTML page seen and the check failures among them.
    pub pages: RefCell<(usize, Vec<String>)>,
}

pub fn batch_view() -> ViewDef {
    let w = |c: &str| ColumnRef::new("ni_lhh", "Well", c);
    ViewDef {
        name: "PlateObservations".into(),
        columns: vec![w("PlateID"), w("StartDate"), w("Pos"), w("Observation"), w("Count")],
        join_keys: vec![],
        ops: vec![
            ViewOp::BatchInput(BatchSpec {
                shared: vec![w("PlateID"), w("StartDate")],
                per_row: vec![w("Pos"), w("Observation"), w("Count")],
                max_rows: 6,
            }),
            ViewOp::Standard(OperationKind::All),
        ],
    }
}

pub fn mix_view() -> ViewDef {
    let c = |t: &str, c: &str| ColumnRef::new("scibsdb", t, c);
    ViewDef {
        name: "MixContents".into(),
        columns: vec![c("Mix", "MixName"), c("Compound", "CompName"), c("MixIngredient", "Conc")],
        join_keys: vec![
            (c("Mix", "MixID"), c("MixIngredient", "MixID")),
            (c("MixIngredient", "CompID"), c("Compound", "CompID")),
        ],
        ops: vec![ViewOp::Standard(OperationKind::Query), ViewOp::Standard(OperationKind::All)],
    }
}

pub fn artifact_view() -> ViewDef {
    let c = |c: &str| ColumnRef::new("scibsdb", "SpecScan", c);
    ViewDef {
        name: "ScanPlots".into(),
        columns: vec![c("ScanID"), c("SampleName"), c("ScanIMGLoc")],
        join_keys: vec![],
        ops: vec![ViewOp::Custom { name: "display".into(), handler: "artifact_display".into() }],
    }
}

pub fn site(opts: Options) -> Site {
    let dir = tempfile::tempdir().unwrap();
    let scibs = fixtures::scibsdb(dir.path());
    let nilhh = fixtures::ni_lhh(dir.path());
    let upload_root = dir.path().join("uploads");
    std::fs::create_dir_all(&upload_root).unwrap();
    let mut sources = vec![scibs.clone(), nilhh.clone()];
    if opts.unreachable {
        sources.push(fixtures::unreachable(dir.path(), "lab"));
    }
    let user = |name: &str, pw: &str, db_user: &str, db_pw: &str| {
        UserEntry::new(name, hash_password_with(pw, HashCost::TEST).unwrap(), db_user, db_pw)
    };
    let mut cfg = ServerConfig {
        title: "fixture lab".into(),
        sources,
        users: vec![
            user(ALICE, ALICE_PW, fixtures::OWNER, fixtures::OWNER_PASSWORD),
            user(BOB, BOB_PW, fixtures::READER, fixtures::READER_PASSWORD),
        ],
        upload_root: upload_root.clone(),
        audit_table: Some(("scibsdb".into(), fixtures::AUDIT_TABLE.into())),
        upload_columns: vec![ColumnRef::new("scibsdb", "SpecScan", "ScanLoc")],
        slave: Some(SlaveCommand {
            program: hdb_testkit::mock_slave_path().display().to_string(),
            args: opts.slave_args.clone(),
            timeout: opts.slave_timeout,
        }),
        views: vec![batch_view(), mix_view(), artifact_view()],
        ..Default::default()
    };
    if let Some(validity) = opts.ip_window {
        cfg.auth_mode = hdb_core::auth::AuthMode::IpWindow { validity };
    }
    if let Some(timeout) = opts.idle {
        cfg.auth_mode = hdb_core::auth::AuthMode::SessionIdle { timeout };
    }
    if let Some(cap) = opts.upload_cap {
        cfg.upload_cap = cap;
    }
    let clock = Arc::new(ManualClock::new(start_time()));
    let app = App::new(cfg, clock.clone()).unwrap();
    let upload_root = app.config().upload_root.clone();
    Site { dir, app, clock, scibs, nilhh, upload_root, pages: RefCell::new((0, vec![])) }
}

impl Site {
    /// Handles a request and checks any HTML it returns.
    pub fn send(&self, req: Request) -> Response {
        let path = req.path.clone();
        let resp = self.app.handle(req);
        if let Some(html) = resp.html_body() {
            let mut pages = self.pages.borrow_mut();
            pages.0 += 1;
            if let Err(e) = check_page(html) {
                pages.1.push(format!("{path}: {e}"));
            }
        }
        resp
    }

    pub fn get(&self, path: &str, session: &str) -> Response {
        self.send(Request::get(path, peer()).with_session(Some(session)))
    }

    pub fn post(&self, path: &str, session: &str, fields: &[(&str, &str)]) -> Response {
        self.send(Request::post(path, peer(), fields.iter().copied()).with_session(Some(session)))
    }

    pub fn login(&self, user: &str, pw: &str) -> String {
        let resp = self.send(Request::post("/login", peer(), [("user", user), ("password", pw)]));
        assert_eq!(resp.status, 303, "login as {user}");
        resp.session_cookie().expect("session cookie").to_owned()
    }

    pub fn advance(&self, secs: i64) {
        self.clock.advance(chrono::Duration::seconds(secs));
    }

    pub fn now(&self) -> chrono::DateTime<Utc> {
        self.clock.now()
    }
}

/// The page body as a single tree.
pub fn body(resp: &Response) -> DocNode {
    let html = resp.html_body().expect("an HTML page");
    DocNode::Element(Element { tag: "body".into(), attrs: vec![], children: page_body(html).unwrap() })
}

pub fn text_of(resp: &Response) -> String {
    body(resp).text_content()
}

pub fn links(resp: &Response, class: &str) -> Vec<(String, String)> {
    let b = body(resp);
    b.find_all(&|e| e.tag == "a" && e.get_attr("class") == Some(class))
        .into_iter()
        .map(|e| (e.get_attr("href").unwrap_or("").to_owned(), DocNode::Element(e.clone()).text_content()))
        .collect()
}
