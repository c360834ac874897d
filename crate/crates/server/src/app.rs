//! Request handling independent of the HTTP transport.
//!
//! [`App::handle`] maps a decoded [`Request`] to a [`Response`]. It is
//! synchronous and blocking: database calls and derived fills run inline.

use std::fs::File;
use std::net::IpAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use hdb_core::auth::{profile_page, AuthError, ServerMeta, Session, SessionStore, Validation};
use hdb_core::catalog::{connect, Access, CatalogAccess, CatalogError, Connection, DataSourceConfig, TableMeta};
use hdb_core::doctree::{render_page, DocNode, Page};
use hdb_core::hooks::{HookError, HookRegistry};
use hdb_core::ops::{
    available_ops, build_filter_form, build_input_form, build_update_form, ensure_available, execute_op, input_row,
    result_table, AuditLog, Form, OpEnv, OpError, OpResult, OperationKind,
};
use hdb_core::sqlgen::SqlGenError;
use hdb_core::views::{dispatch_view_op, ViewDef, ViewError, ViewOp, ViewOutcome, ViewRegistry};
use hdb_core::{Clock, Secret};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::config::{ConfigError, ServerConfig};
use crate::diagnostics::DiagnosticStore;
use crate::pages;
use crate::site;
use crate::uploads::{resolve_stored, store_spooled, store_upload, UploadError, UploadTarget};

pub const SESSION_COOKIE: &str = "hdb_session";
pub const HDB_JS: &str = include_str!("../static/hdb.js");
pub const HDB_CSS: &str = include_str!("../static/hdb.css");

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("site hooks: {0}")]
    Hooks(#[from] HookError),
    #[error("view `{view}`: {source}")]
    View {
        view: String,
        #[source]
        source: ViewError,
    },
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("port {port} is unavailable: {source}")]
    PortInUse {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

/// File content from a multipart body.
#[derive(Debug)]
pub enum UploadContent {
    Bytes(Vec<u8>),
    Spooled(NamedTempFile),
}

#[derive(Debug)]
pub struct UploadPart {
    pub field: String,
    pub file_name: String,
    pub content: UploadContent,
}

#[derive(Debug)]
pub struct Request {
    pub method: Method,
    /// Raw path, percent-encoded segments.
    pub path: String,
    pub query: Form,
    pub form: Form,
    pub uploads: Vec<UploadPart>,
    pub session: Option<String>,
    pub peer: IpAddr,
}

impl Request {
    pub fn new(method: Method, path: impl Into<String>, peer: IpAddr) -> Self {
        Request {
            method,
            path: path.into(),
            query: Form::new(),
            form: Form::new(),
            uploads: Vec::new(),
            session: None,
            peer,
        }
    }

    pub fn get(path: impl Into<String>, peer: IpAddr) -> Self {
        Self::new(Method::GET, path, peer)
    }

    pub fn post<K: Into<String>, V: Into<String>>(
        path: impl Into<String>,
        peer: IpAddr,
        fields: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        let mut r = Self::new(Method::POST, path, peer);
        r.form = fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        r
    }

    pub fn with_session(mut self, id: Option<&str>) -> Self {
        self.session = id.map(str::to_owned);
        self
    }

    pub fn with_upload(mut self, field: &str, file_name: &str, content: impl Into<Vec<u8>>) -> Self {
        self.uploads.push(UploadPart {
            field: field.into(),
            file_name: file_name.into(),
            content: UploadContent::Bytes(content.into()),
        });
        self
    }
}

#[derive(Debug)]
pub enum Body {
    Empty,
    Html(String),
    Static { content_type: &'static str, data: Vec<u8> },
    File { content_type: &'static str, file: File, len: u64 },
}

#[derive(Debug)]
pub struct Response {
    pub status: StatusCode,
    pub headers: Vec<(&'static str, String)>,
    pub body: Body,
}

impl Response {
    fn html(status: StatusCode, page: &Page) -> Self {
        match render_page(page) {
            Ok(html) => Response { status, headers: vec![], body: Body::Html(html) },
            Err(e) => Response {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                headers: vec![],
                body: Body::Static { content_type: "text/plain; charset=utf-8", data: e.to_string().into_bytes() },
            },
        }
    }

    fn redirect(to: &str) -> Self {
        Response { status: StatusCode::SEE_OTHER, headers: vec![("location", to.to_owned())], body: Body::Empty }
    }

    fn header(mut self, name: &'static str, value: String) -> Self {
        self.headers.push((name, value));
        self
    }

    pub fn header_value(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn location(&self) -> Option<&str> {
        self.header_value("location")
    }

    /// The session id set by this response, if any.
    pub fn session_cookie(&self) -> Option<&str> {
        let v = self.header_value("set-cookie")?;
        let id = v.strip_prefix(SESSION_COOKIE)?.strip_prefix('=')?.split(';').next()?;
        (!id.is_empty()).then_some(id)
    }

    /// The HTML body, when this is a page.
    pub fn html_body(&self) -> Option<&str> {
        match &self.body {
            Body::Html(s) => Some(s),
            _ => None,
        }
    }

    pub fn content_type(&self) -> &'static str {
        match &self.body {
            Body::Empty => "text/plain; charset=utf-8",
            Body::Html(_) => "text/html; charset=utf-8",
            Body::Static { content_type, .. } | Body::File { content_type, .. } => content_type,
        }
    }
}

fn content_type_for(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("ps" | "eps") => "application/postscript",
        Some("pdf") => "application/pdf",
        Some("txt" | "csv" | "dat") => "text/plain; charset=utf-8",
        Some("js") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Connections made with one session's engine credentials.
pub struct SessionCatalog<'a> {
    cfg: &'a ServerConfig,
    user: &'a str,
    password: &'a Secret,
}

impl CatalogAccess for SessionCatalog<'_> {
    fn connect(&self, db: &str) -> Result<Connection, CatalogError> {
        let src = self
            .cfg
            .source(db)
            .ok_or_else(|| CatalogError::AccessDenied { source_name: db.to_owned(), user: self.user.to_owned() })?;
        connect(src, self.user, self.password)
    }
}

/// Owner-account access, used to validate views at startup.
struct OwnerCatalog<'a>(&'a ServerConfig);

impl CatalogAccess for OwnerCatalog<'_> {
    fn connect(&self, db: &str) -> Result<Connection, CatalogError> {
        let src = self.0.source(db).ok_or_else(|| CatalogError::DataSourceUnavailable {
            label: format!("-{db}"),
            reason: "unknown data source".into(),
        })?;
        hdb_core::catalog::open_source(src)
    }
}

/// Result of a route before the chrome is applied.
enum Outcome {
    Page { status: StatusCode, heading: String, content: Vec<DocNode> },
    Redirect(String),
    Raw(Response),
}

impl Outcome {
    fn ok(heading: impl Into<String>, content: Vec<DocNode>) -> Self {
        Outcome::Page { status: StatusCode::OK, heading: heading.into(), content }
    }

    fn fail(status: StatusCode, heading: impl Into<String>, message: impl Into<String>) -> Self {
        Outcome::Page { status, heading: heading.into(), content: vec![pages::error(message)] }
    }

    fn not_found(what: &str) -> Self {
        Outcome::Page { status: StatusCode::NOT_FOUND, heading: "Not found".into(), content: pages::not_found(what) }
    }
}

fn catalog_status(e: &CatalogError) -> StatusCode {
    match e {
        CatalogError::DataSourceUnavailable { .. } | CatalogError::ConnectionLost(_) => StatusCode::SERVICE_UNAVAILABLE,
        CatalogError::AccessDenied { .. } | CatalogError::PermissionDenied(_) => StatusCode::FORBIDDEN,
        CatalogError::NoSuchTable(_) => StatusCode::NOT_FOUND,
        CatalogError::Constraint(_) => StatusCode::CONFLICT,
        CatalogError::Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn op_status(e: &OpError) -> StatusCode {
    match e {
        OpError::OperationNotAvailable { .. } => StatusCode::FORBIDDEN,
        OpError::Sql(SqlGenError::ReadOnlyTable(_)) => StatusCode::FORBIDDEN,
        OpError::Sql(_) | OpError::UnknownRelation { .. } => StatusCode::BAD_REQUEST,
        OpError::Catalog(c) => catalog_status(c),
    }
}

fn view_status(e: &ViewError) -> StatusCode {
    match e {
        ViewError::Op(o) => op_status(o),
        ViewError::Catalog(c) => catalog_status(c),
        ViewError::NoSuchView(_) | ViewError::NoSuchViewOp(_) => StatusCode::NOT_FOUND,
        ViewError::HandlerFailure { .. } | ViewError::UnregisteredHandler(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn upload_status(e: &UploadError) -> StatusCode {
    match e {
        UploadError::UploadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        UploadError::PathSanitizationFailure(_) => StatusCode::BAD_REQUEST,
        UploadError::DiskFull => StatusCode::INSUFFICIENT_STORAGE,
        UploadError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn decode_segments(path: &str) -> Option<Vec<String>> {
    path.split('/')
        .filter(|s| !s.is_empty())
        .map(|s| percent_encoding::percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned()))
        .collect()
}

/// Browsers submit textarea line breaks as CRLF.
fn normalize_form(form: Form) -> Form {
    form.into_iter().map(|(k, v)| (k, v.replace("\r\n", "\n"))).collect()
}

pub struct App {
    cfg: ServerConfig,
    sessions: SessionStore,
    diagnostics: DiagnosticStore,
    hooks: HookRegistry,
    views: ViewRegistry,
    clock: Arc<dyn Clock>,
    audit: Option<AuditLog>,
    meta: ServerMeta,
}

impl App {
    /// Builds the application with the site hooks for `cfg`.
    pub fn new(cfg: ServerConfig, clock: Arc<dyn Clock>) -> Result<App, StartError> {
        let hooks = site::build_hooks(&cfg)?;
        Self::with_hooks(cfg, hooks, clock)
    }

    pub fn with_hooks(mut cfg: ServerConfig, hooks: HookRegistry, clock: Arc<dyn Clock>) -> Result<App, StartError> {
        cfg.apply_read_only();
        cfg.validate()?;
        cfg.upload_root = cfg.upload_root.canonicalize()?;
        let mut views = ViewRegistry::new();
        for def in &cfg.views {
            match views.register(def.clone(), &OwnerCatalog(&cfg), &hooks) {
                Ok(()) => {}
                // An unreachable source must not stop the server; the view
                // is left out until the next start.
                Err(ViewError::Catalog(e @ CatalogError::DataSourceUnavailable { .. })) => {
                    tracing::warn!(view = %def.name, "view skipped: {e}");
                }
                Err(source) => return Err(StartError::View { view: def.name.clone(), source }),
            }
        }
        let mut sessions = SessionStore::new(cfg.auth_mode, cfg.users.clone());
        if let Some(path) = &cfg.window_file {
            sessions = sessions.with_window_file(path)?;
        }
        let audit = cfg.audit_table.as_ref().and_then(|(db, table)| {
            cfg.source(db).map(|src: &DataSourceConfig| AuditLog::new(src.clone(), table.clone()))
        });
        for src in &cfg.sources {
            if let Err(e) = hdb_core::catalog::open_source(src) {
                tracing::warn!("{e}");
            }
        }
        let meta = ServerMeta {
            title: cfg.title.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            host: cfg.host.clone(),
            port: cfg.port,
        };
        Ok(App { cfg, sessions, diagnostics: DiagnosticStore::new(), hooks, views, clock, audit, meta })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn diagnostics(&self) -> &DiagnosticStore {
        &self.diagnostics
    }

    pub fn views(&self) -> &ViewRegistry {
        &self.views
    }

    pub fn handle(&self, req: Request) -> Response {
        let Some(segs) = decode_segments(&req.path) else {
            return self.finish(None, Outcome::not_found("The page"), vec![]);
        };
        let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
        let now = self.clock.now();
        match (&req.method, segs.as_slice()) {
            (_, ["static", name]) => return self.static_asset(name),
            (&Method::GET, ["login"]) => return self.login_page(StatusCode::OK, None),
            (&Method::POST, ["login"]) => return self.login(&req),
            _ => {}
        }
        let session = match self.sessions.validate(req.peer, req.session.as_deref(), now) {
            Validation::Valid(s) => s,
            Validation::Expired => return Response::redirect("/login"),
        };
        let mut diags = Vec::new();
        let outcome = self.route(&session, req, &segs, &mut diags);
        self.finish(Some(&session), outcome, diags)
    }

    fn finish(&self, session: Option<&Session>, outcome: Outcome, diags: Vec<String>) -> Response {
        let now = self.clock.now();
        match outcome {
            Outcome::Page { status, heading, content } => {
                let mut shown: Vec<String> = session
                    .map(|s| self.diagnostics.drain(&s.id).into_iter().map(|d| d.message).collect())
                    .unwrap_or_default();
                shown.extend(diags);
                let page = pages::chrome(&self.cfg.title, &heading, true, &shown, content);
                Response::html(status, &page)
            }
            Outcome::Redirect(to) => {
                if let Some(s) = session {
                    for d in diags {
                        self.diagnostics.push(&s.id, d, now);
                    }
                }
                Response::redirect(&to)
            }
            Outcome::Raw(r) => r,
        }
    }

    fn static_asset(&self, name: &str) -> Response {
        let builtin = match name {
            "hdb.js" => Some(("text/javascript; charset=utf-8", HDB_JS)),
            "hdb.css" => Some(("text/css; charset=utf-8", HDB_CSS)),
            _ => None,
        };
        if let Some(dir) = &self.cfg.static_dir {
            if let Some((path, file)) = resolve_stored(dir, name) {
                let len = file.metadata().map(|m| m.len()).unwrap_or(0);
                return Response {
                    status: StatusCode::OK,
                    headers: vec![],
                    body: Body::File { content_type: content_type_for(&path), file, len },
                };
            }
        }
        match builtin {
            Some((content_type, text)) => Response {
                status: StatusCode::OK,
                headers: vec![("cache-control", "max-age=3600".into())],
                body: Body::Static { content_type, data: text.as_bytes().to_vec() },
            },
            None => self.finish(None, Outcome::not_found("The asset"), vec![]),
        }
    }

    fn login_page(&self, status: StatusCode, message: Option<&str>) -> Response {
        let page = pages::chrome(&self.cfg.title, "Log in", false, &[], pages::login_form(message));
        Response::html(status, &page)
    }

    fn login(&self, req: &Request) -> Response {
        let now = self.clock.now();
        let user = req.form.get("user").map(String::as_str).unwrap_or("");
        let password = req.form.get("password").map(String::as_str).unwrap_or("");
        let session = match self.sessions.login(user, password, req.peer, now) {
            Ok(s) => s,
            Err(AuthError::InvalidCredentials) => {
                return self.login_page(StatusCode::UNAUTHORIZED, Some("Unknown user or wrong password."))
            }
            Err(e) => {
                tracing::error!("login failed: {e}");
                return self.login_page(StatusCode::INTERNAL_SERVER_ERROR, Some("Login is unavailable."));
            }
        };
        // Every source the account may use is probed; failures wait on the
        // new session's first page.
        let (db_user, db_password) = session.db_credentials();
        for src in self.cfg.sources.iter().filter(|s| s.access_for(db_user, db_password).is_some()) {
            if let Err(e) = connect(src, db_user, db_password) {
                self.diagnostics.push(&session.id, e.to_string(), now);
            }
        }
        Response::redirect("/home")
            .header("set-cookie", format!("{SESSION_COOKIE}={}; Path=/; HttpOnly; SameSite=Lax", session.id))
    }

    fn catalog<'a>(&'a self, session: &'a Session) -> SessionCatalog<'a> {
        let (user, password) = session.db_credentials();
        SessionCatalog { cfg: &self.cfg, user, password }
    }

    fn accessible(&self, session: &Session) -> Vec<&DataSourceConfig> {
        let (user, password) = session.db_credentials();
        self.cfg.sources.iter().filter(|s| s.access_for(user, password).is_some()).collect()
    }

    fn env<'a>(&'a self, session: &'a Session) -> OpEnv<'a> {
        let mut env = OpEnv::new(&self.hooks, &session.user.hdb_name, self.clock.now());
        env.gen.default_limit = self.cfg.page_limit;
        env.audit = self.audit.as_ref();
        env.upload_root = Some(&self.cfg.upload_root);
        env
    }

    fn route(&self, session: &Session, req: Request, segs: &[&str], diags: &mut Vec<String>) -> Outcome {
        let is_get = req.method == Method::GET;
        match segs {
            [] => Outcome::Redirect("/home".into()),
            ["home"] if is_get => self.home(session),
            ["profile"] if is_get => Outcome::ok("Profile", vec![profile_page(session, &self.meta)]),
            ["logout"] => {
                self.sessions.logout(&session.id);
                self.diagnostics.forget(&session.id);
                Outcome::Raw(
                    Response::redirect("/login")
                        .header("set-cookie", format!("{SESSION_COOKIE}=; Path=/; HttpOnly; SameSite=Lax; Max-Age=0")),
                )
            }
            ["db", db] if is_get => self.database(session, db, diags),
            ["db", db, "table", t] if is_get => self.table(session, db, t, diags),
            ["db", db, "table", t, "op", kind] => match OperationKind::parse(kind) {
                Some(kind) => self.table_op(session, db, t, kind, req, diags),
                None => Outcome::not_found(&format!("Operation `{kind}`")),
            },
            ["view", v] if is_get => self.view_home(session, v),
            ["view", v, "op", op] => self.view_op(session, v, op, req, diags),
            ["files", rest @ ..] if is_get && !rest.is_empty() => self.file(session, rest),
            _ => Outcome::not_found("The page"),
        }
    }

    fn home(&self, session: &Session) -> Outcome {
        let dbs: Vec<String> = self.accessible(session).iter().map(|s| s.name.clone()).collect();
        let views: Vec<&ViewDef> = self
            .views
            .iter()
            .map(|v| v.as_ref())
            .filter(|v| v.tables().iter().all(|(db, _)| dbs.contains(db)))
            .collect();
        Outcome::ok(self.cfg.title.clone(), pages::home(&dbs, &views))
    }

    fn open(&self, session: &Session, db: &str, diags: &mut Vec<String>) -> Result<Connection, Outcome> {
        self.catalog(session).connect(db).map_err(|e| {
            if matches!(e, CatalogError::DataSourceUnavailable { .. }) {
                diags.push(e.to_string());
            }
            match e {
                CatalogError::AccessDenied { .. } => Outcome::not_found(&format!("Database `{db}`")),
                e => Outcome::fail(catalog_status(&e), db, e.to_string()),
            }
        })
    }

    /// Table metadata as this session sees it: everything is read-only
    /// through a read-only engine account.
    fn describe(&self, conn: &Connection, table: &str) -> Result<TableMeta, Outcome> {
        let mut meta = conn.describe_table(table).map_err(|e| match e {
            CatalogError::NoSuchTable(_) => Outcome::not_found(&format!("Table `{}.{table}`", conn.db())),
            e => Outcome::fail(catalog_status(&e), table, e.to_string()),
        })?;
        if conn.access() == Access::ReadOnly {
            meta.read_only = true;
        }
        Ok(meta)
    }

    fn database(&self, session: &Session, db: &str, diags: &mut Vec<String>) -> Outcome {
        let conn = match self.open(session, db, diags) {
            Ok(c) => c,
            Err(o) => return o,
        };
        let names = match conn.table_names() {
            Ok(n) => n,
            Err(e) => return Outcome::fail(catalog_status(&e), db, e.to_string()),
        };
        let mut tables = Vec::new();
        for t in names {
            match self.describe(&conn, &t) {
                Ok(meta) => {
                    let ops = available_ops(&meta, &self.hooks, diags);
                    tables.push((t, ops));
                }
                Err(o) => return o,
            }
        }
        Outcome::ok(db, pages::database(db, &tables))
    }

    fn table(&self, session: &Session, db: &str, table: &str, diags: &mut Vec<String>) -> Outcome {
        let conn = match self.open(session, db, diags) {
            Ok(c) => c,
            Err(o) => return o,
        };
        let meta = match self.describe(&conn, table) {
            Ok(m) => m,
            Err(o) => return o,
        };
        let rows = match conn.row_count(table) {
            Ok(n) => n,
            Err(e) => return Outcome::fail(catalog_status(&e), table, e.to_string()),
        };
        let ops = available_ops(&meta, &self.hooks, diags);
        Outcome::ok(meta.qualified_name(), pages::table(&meta, rows, &ops))
    }

    /// Stores the request's uploads for `meta`'s upload columns and puts
    /// their relative paths into the form.
    fn take_uploads(&self, meta: &TableMeta, req: &mut Request) -> Result<(), UploadError> {
        let now = self.clock.now();
        for part in std::mem::take(&mut req.uploads) {
            let is_upload_col =
                meta.column(&part.field).is_some() && self.hooks.is_upload_column(&meta.db, &meta.name, &part.field);
            if !is_upload_col || part.file_name.is_empty() {
                continue;
            }
            let target = UploadTarget { db: &meta.db, table: &meta.name, column: &part.field };
            let root = &self.cfg.upload_root;
            let rec = match part.content {
                UploadContent::Bytes(b) => {
                    store_upload(root, self.cfg.upload_cap, target, &part.file_name, &b[..], now)?
                }
                UploadContent::Spooled(f) => store_spooled(root, self.cfg.upload_cap, target, &part.file_name, f, now)?,
            };
            req.form.insert(part.field, rec.stored_path);
        }
        Ok(())
    }

    fn table_op(
        &self,
        session: &Session,
        db: &str,
        table: &str,
        kind: OperationKind,
        mut req: Request,
        diags: &mut Vec<String>,
    ) -> Outcome {
        let conn = match self.open(session, db, diags) {
            Ok(c) => c,
            Err(o) => return o,
        };
        let meta = match self.describe(&conn, table) {
            Ok(m) => m,
            Err(o) => return o,
        };
        let heading = format!("{} {}", meta.qualified_name(), kind.name());
        if let Err(e) = ensure_available(&meta, &self.hooks, kind, diags) {
            return Outcome::fail(op_status(&e), heading, e.to_string());
        }
        let action = pages::op_url(db, table, kind);
        let back = || pages::back_link(pages::table_url(db, table), &format!("Back to {}", meta.qualified_name()));
        let env = self.env(session);
        let post = req.method == Method::POST;
        req.form = normalize_form(std::mem::take(&mut req.form));
        let fail = |e: OpError| Outcome::fail(op_status(&e), heading.clone(), e.to_string());
        match (kind, post) {
            (OperationKind::Input, false) => match build_input_form(&meta, &self.hooks, env.now, &action, diags) {
                Ok(form) => Outcome::ok(heading, vec![form]),
                Err(e) => fail(e),
            },
            (OperationKind::Input, true) => {
                if let Err(e) = self.take_uploads(&meta, &mut req) {
                    return Outcome::fail(upload_status(&e), heading, e.to_string());
                }
                match input_row(&env, &conn, &meta, &req.form, diags) {
                    Ok(key) => Outcome::ok(
                        heading,
                        vec![
                            pages::message(format!(
                                "Inserted 1 row into {} (key {}).",
                                meta.qualified_name(),
                                pages::key_text(&key)
                            )),
                            back(),
                        ],
                    ),
                    Err(e) => fail(e),
                }
            }
            (OperationKind::Query | OperationKind::Update | OperationKind::Delete, false) => {
                Outcome::ok(heading, vec![build_filter_form(&meta, &action, kind)])
            }
            (OperationKind::Update, true) if req.form.get("step").map(String::as_str) != Some("apply") => {
                match execute_op(&env, &conn, &meta, kind, &req.form, diags) {
                    Ok(OpResult::ResultSet { columns, rows, truncated }) => {
                        let mut content = vec![pages::message(format!("{} matching rows.", rows.len()))];
                        if truncated {
                            content.push(pages::truncation_notice(self.cfg.page_limit));
                        }
                        for row in &rows {
                            content.push(build_update_form(&meta, &self.hooks, &columns, row, &action, diags));
                        }
                        content.push(back());
                        Outcome::ok(heading, content)
                    }
                    Ok(OpResult::RowsAffected { n }) => {
                        Outcome::ok(heading, vec![pages::message(format!("Updated {n} rows.")), back()])
                    }
                    Err(e) => fail(e),
                }
            }
            (_, _) => match execute_op(&env, &conn, &meta, kind, &req.form, diags) {
                Ok(OpResult::ResultSet { columns, rows, truncated }) => {
                    let mut content = vec![pages::message(format!("{} rows.", rows.len()))];
                    if truncated {
                        content.push(pages::truncation_notice(self.cfg.page_limit));
                    }
                    content.push(result_table(db, table, &self.hooks, &columns, &rows, diags));
                    content.push(back());
                    Outcome::ok(heading, content)
                }
                Ok(OpResult::RowsAffected { n }) => {
                    let verb = match kind {
                        OperationKind::Update => "Updated",
                        OperationKind::Delete => "Deleted",
                        _ => "Affected",
                    };
                    Outcome::ok(heading, vec![pages::message(format!("{verb} {n} rows.")), back()])
                }
                Err(e) => fail(e),
            },
        }
    }

    fn visible_view(&self, session: &Session, name: &str) -> Option<Arc<ViewDef>> {
        let view = self.views.get(name)?;
        let dbs: Vec<String> = self.accessible(session).iter().map(|s| s.name.clone()).collect();
        view.tables().iter().all(|(db, _)| dbs.contains(db)).then_some(view)
    }

    fn view_home(&self, session: &Session, name: &str) -> Outcome {
        match self.visible_view(session, name) {
            Some(v) => Outcome::ok(format!("View {}", v.name), pages::view_home(&v)),
            None => Outcome::not_found(&format!("View `{name}`")),
        }
    }

    fn view_op(&self, session: &Session, name: &str, op_name: &str, req: Request, diags: &mut Vec<String>) -> Outcome {
        let Some(view) = self.visible_view(session, name) else {
            return Outcome::not_found(&format!("View `{name}`"));
        };
        let Some(op) = view.op(op_name) else {
            return Outcome::not_found(&format!("Operation `{op_name}` of view `{name}`"));
        };
        let heading = format!("{} {}", view.name, op_name);
        let action = pages::view_op_url(&view.name, op_name);
        let post = req.method == Method::POST;
        let custom = matches!(op, ViewOp::Custom { .. });
        if !post && !custom {
            if let Some(form) = pages::view_op_form(&view, op, &action) {
                return Outcome::ok(heading, vec![form]);
            }
        }
        let mut form = req.query;
        form.extend(normalize_form(req.form));
        let env = self.env(session);
        let cat = self.catalog(session);
        let back = pages::back_link(pages::view_url(&view.name), &format!("Back to {}", view.name));
        match dispatch_view_op(&env, &cat, session, &view, op_name, &form, diags) {
            Ok(ViewOutcome::Rows(rows)) => {
                let mut content = vec![pages::message(format!("{} rows.", rows.rows.len()))];
                if rows.truncated {
                    content.push(pages::truncation_notice(self.cfg.page_limit));
                }
                content.push(pages::view_rows(&view, &self.hooks, &rows, diags));
                content.push(back);
                Outcome::ok(heading, content)
            }
            Ok(ViewOutcome::Inserted(n)) => {
                Outcome::ok(heading, vec![pages::message(format!("Inserted {n} rows.")), back])
            }
            Ok(ViewOutcome::Page(page)) => {
                let mut content = page.body;
                content.push(back);
                Outcome::ok(if page.title.is_empty() { heading } else { page.title }, content)
            }
            Err(e) => Outcome::fail(view_status(&e), heading, e.to_string()),
        }
    }

    fn file(&self, session: &Session, rest: &[&str]) -> Outcome {
        let dbs: Vec<String> = self.accessible(session).iter().map(|s| s.name.clone()).collect();
        if !dbs.iter().any(|d| d == rest[0]) {
            return Outcome::not_found("The file");
        }
        let rel: PathBuf = rest.iter().collect();
        match resolve_stored(&self.cfg.upload_root, &rel.to_string_lossy()) {
            Some((path, file)) => {
                let len = file.metadata().map(|m| m.len()).unwrap_or(0);
                Outcome::Raw(Response {
                    status: StatusCode::OK,
                    headers: vec![],
                    body: Body::File { content_type: content_type_for(&path), file, len },
                })
            }
            None => Outcome::not_found("The file"),
        }
    }
}
