//! Server configuration and its file format.
//!
//! The file is line oriented. Settings are `key = value`; list settings may be
//! extended with `key += value`. Named blocks group the settings of one data
//! source, hdb user or view:
//!
//! ```text
//! title = lab server
//! port = 8080
//! upload_root = uploads
//!
//! source scibsdb {
//!     location = scibsloc.db
//!     db_user = hdb_owner
//!     db_password = owner-pw
//!     account = hdb_reader reader-pw read_only
//! }
//!
//! user alice {
//!     password_hash = $argon2id$v=19$...
//!     db_user = hdb_owner
//!     db_password = owner-pw
//! }
//! ```
//!
//! `#` starts a comment line. Relative paths resolve against the directory of
//! the configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use hdb_core::auth::{AuthMode, UserEntry, DEFAULT_IDLE_TIMEOUT, DEFAULT_IP_VALIDITY};
use hdb_core::catalog::{Access, ColumnRef, DataSourceConfig, DbAccount};
use hdb_core::ops::OperationKind;
use hdb_core::sqlgen::DEFAULT_PAGE_LIMIT;
use hdb_core::views::{BatchSpec, ViewDef, ViewOp, DEFAULT_MAX_ROWS};
use hdb_core::Secret;
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_UPLOAD_CAP: u64 = 2 << 30;
pub const DEFAULT_SLAVE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {reason}")]
    Invalid { reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { reason: reason.into() }
}

/// The external program driven for derived fills.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlaveCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub title: String,
    pub host: String,
    pub port: u16,
    pub request_timeout: Duration,
    pub auth_mode: AuthMode,
    /// Where IpWindow entries persist across restarts.
    pub window_file: Option<PathBuf>,
    pub sources: Vec<DataSourceConfig>,
    pub users: Vec<UserEntry>,
    pub upload_root: PathBuf,
    pub upload_cap: u64,
    pub audit_table: Option<(String, String)>,
    pub read_only: Vec<(String, String)>,
    pub page_limit: u64,
    /// Columns holding links to uploaded files.
    pub upload_columns: Vec<ColumnRef>,
    pub slave: Option<SlaveCommand>,
    pub views: Vec<ViewDef>,
    /// Replaces the built-in assets under `/static/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            title: "hdb".into(),
            host: "localhost".into(),
            port: DEFAULT_PORT,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            auth_mode: AuthMode::default(),
            window_file: None,
            sources: Vec::new(),
            users: Vec::new(),
            upload_root: PathBuf::from("uploads"),
            upload_cap: DEFAULT_UPLOAD_CAP,
            audit_table: None,
            read_only: Vec::new(),
            page_limit: DEFAULT_PAGE_LIMIT,
            upload_columns: Vec::new(),
            slave: None,
            views: Vec::new(),
            static_dir: None,
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let items = Parser::new(text).file()?;
        let mut cfg = ServerConfig::default();
        let mut b = Builder { base, cfg: &mut cfg, idle: None, validity: None };
        for item in items {
            match item {
                Item::Setting(s) => b.top(s)?,
                Item::Block(blk) => b.block(blk)?,
            }
        }
        b.finish()?;
        cfg.apply_read_only();
        Ok(cfg)
    }

    /// Marks the configured read-only tables, the audit table included, on
    /// their sources.
    pub fn apply_read_only(&mut self) {
        let mut marked = self.read_only.clone();
        marked.extend(self.audit_table.clone());
        for (db, table) in marked {
            if let Some(src) = self.sources.iter_mut().find(|s| s.name == db) {
                if !src.read_only_tables.contains(&table) {
                    src.read_only_tables.push(table);
                }
            }
        }
    }

    /// Startup checks: port range, unique names, a writable upload root.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(invalid("port must be in 1-65535"));
        }
        let mut names: Vec<&str> = self.sources.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("data source `{}` declared twice", w[0])));
        }
        let mut users: Vec<&str> = self.users.iter().map(|u| u.hdb_name.as_str()).collect();
        users.sort_unstable();
        if let Some(w) = users.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("user `{}` declared twice", w[0])));
        }
        if let Some((db, _)) = &self.audit_table {
            if !self.sources.iter().any(|s| &s.name == db) {
                return Err(invalid(format!("audit table on unknown source `{db}`")));
            }
        }
        if !self.upload_root.is_dir() {
            return Err(invalid(format!("upload_root {} is not a directory", self.upload_root.display())));
        }
        tempfile::tempfile_in(&self.upload_root)
            .map_err(|e| invalid(format!("upload_root {} is not writable: {e}", self.upload_root.display())))?;
        Ok(())
    }

    pub fn source(&self, name: &str) -> Option<&DataSourceConfig> {
        self.sources.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AssignOp {
    Set,
    Append,
}

#[derive(Debug, Clone)]
struct Setting {
    line: usize,
    key: String,
    op: AssignOp,
    value: String,
}

#[derive(Debug, Clone)]
struct Block {
    line: usize,
    kind: String,
    name: String,
    settings: Vec<Setting>,
}

#[derive(Debug, Clone)]
enum Item {
    Setting(Setting),
    Block(Block),
}

/// Recursive descent over significant lines.
///
/// ```text
/// file    := item*
/// item    := block | setting
/// block   := WORD WORD '{' setting* '}'     ('{' may open the next line)
/// setting := KEY ('=' | '+=') VALUE
/// ```
struct Parser<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Parser { lines: it.peekable() }
    }

    fn file(&mut self) -> Result<Vec<Item>, ConfigError> {
        let mut items = Vec::new();
        while let Some((line, text)) = self.lines.next() {
            items.push(self.item(line, text)?);
        }
        Ok(items)
    }

    fn item(&mut self, line: usize, text: &str) -> Result<Item, ConfigError> {
        if text.contains('=') {
            return setting(line, text).map(Item::Setting);
        }
        let (header, opened) = match text.strip_suffix('{') {
            Some(h) => (h.trim_end(), true),
            None => (text, false),
        };
        let words: Vec<&str> = header.split_whitespace().collect();
        let [kind, name] = words[..] else {
            return Err(ConfigError::Syntax {
                line,
                message: format!("expected `key = value` or `kind name {{`, found `{text}`"),
            });
        };
        if !is_key(kind) {
            return Err(ConfigError::Syntax { line, message: format!("bad block kind `{kind}`") });
        }
        if !opened {
            match self.lines.next() {
                Some((_, "{")) => {}
                _ => return Err(ConfigError::Syntax { line, message: format!("block `{kind} {name}` needs `{{`") }),
            }
        }
        let mut settings = Vec::new();
        loop {
            match self.lines.next() {
                Some((_, "}")) => break,
                Some((l, t)) => settings.push(setting(l, t)?),
                None => {
                    return Err(ConfigError::Syntax { line, message: format!("block `{kind} {name}` is not closed") })
                }
            }
        }
        Ok(Item::Block(Block { line, kind: kind.into(), name: name.into(), settings }))
    }
}

fn setting(line: usize, text: &str) -> Result<Setting, ConfigError> {
    let eq = text
        .find('=')
        .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, found `{text}`") })?;
    let (lhs, op) = match text[..eq].strip_suffix('+') {
        Some(k) => (k, AssignOp::Append),
        None => (&text[..eq], AssignOp::Set),
    };
    let key = lhs.trim();
    if !is_key(key) {
        return Err(ConfigError::Syntax { line, message: format!("bad key `{key}`") });
    }
    Ok(Setting { line, key: key.into(), op, value: unquote(text[eq + 1..].trim()).into() })
}

fn unquote(v: &str) -> &str {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

fn syntax(s: &Setting, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line: s.line, message: message.into() }
}

fn scalar(s: &Setting) -> Result<&str, ConfigError> {
    match s.op {
        AssignOp::Set => Ok(&s.value),
        AssignOp::Append => Err(syntax(s, format!("`{}` takes a single value; use `=`", s.key))),
    }
}

/// `=` replaces the list, `+=` extends it.
fn list_assign<T>(s: &Setting, list: &mut Vec<T>, v: T) {
    if s.op == AssignOp::Set {
        list.clear();
    }
    list.push(v);
}

fn number<T: std::str::FromStr>(s: &Setting) -> Result<T, ConfigError> {
    scalar(s)?.parse().map_err(|_| syntax(s, format!("`{}` must be a non-negative integer", s.key)))
}

fn seconds(s: &Setting) -> Result<Duration, ConfigError> {
    number::<u64>(s).map(Duration::from_secs)
}

fn pair(s: &Setting, text: &str) -> Result<(String, String), ConfigError> {
    match text.split('.').collect::<Vec<_>>()[..] {
        [db, t] if !db.is_empty() && !t.is_empty() => Ok((db.into(), t.into())),
        _ => Err(syntax(s, format!("expected `db.table`, found `{text}`"))),
    }
}

fn column_ref(s: &Setting, text: &str) -> Result<ColumnRef, ConfigError> {
    match text.split('.').collect::<Vec<_>>()[..] {
        [db, t, c] if !db.is_empty() && !t.is_empty() && !c.is_empty() => Ok(ColumnRef::new(db, t, c)),
        _ => Err(syntax(s, format!("expected `db.table.column`, found `{text}`"))),
    }
}

fn column_refs(s: &Setting) -> Result<Vec<ColumnRef>, ConfigError> {
    s.value.split_whitespace().map(|w| column_ref(s, w)).collect()
}

struct Builder<'a> {
    base: &'a Path,
    cfg: &'a mut ServerConfig,
    idle: Option<Duration>,
    validity: Option<Duration>,
}

impl Builder<'_> {
    fn path(&self, s: &Setting) -> Result<PathBuf, ConfigError> {
        Ok(self.base.join(scalar(s)?))
    }

    fn top(&mut self, s: Setting) -> Result<(), ConfigError> {
        match s.key.as_str() {
            "title" => self.cfg.title = scalar(&s)?.into(),
            "host" => self.cfg.host = scalar(&s)?.into(),
            "port" => {
                self.cfg.port = number(&s)?;
                if self.cfg.port == 0 {
                    return Err(syntax(&s, "port must be in 1-65535"));
                }
            }
            "request_timeout" => self.cfg.request_timeout = seconds(&s)?,
            "auth_mode" => {
                self.cfg.auth_mode = match scalar(&s)? {
                    "session_idle" => AuthMode::SessionIdle { timeout: DEFAULT_IDLE_TIMEOUT },
                    "ip_window" => AuthMode::IpWindow { validity: DEFAULT_IP_VALIDITY },
                    other => return Err(syntax(&s, format!("unknown auth_mode `{other}`"))),
                };
            }
            "session_timeout" => self.idle = Some(seconds(&s)?),
            "ip_validity" => self.validity = Some(seconds(&s)?),
            "window_file" => self.cfg.window_file = Some(self.path(&s)?),
            "upload_root" => self.cfg.upload_root = self.path(&s)?,
            "upload_cap" => self.cfg.upload_cap = number(&s)?,
            "static_dir" => self.cfg.static_dir = Some(self.path(&s)?),
            "page_limit" => self.cfg.page_limit = number(&s)?,
            "audit" => self.cfg.audit_table = Some(pair(&s, scalar(&s)?)?),
            "read_only" => {
                let tables = s.value.split_whitespace().map(|w| pair(&s, w)).collect::<Result<Vec<_>, _>>()?;
                if s.op == AssignOp::Set {
                    self.cfg.read_only.clear();
                }
                self.cfg.read_only.extend(tables);
            }
            "upload_column" => {
                let cols = column_refs(&s)?;
                if s.op == AssignOp::Set {
                    self.cfg.upload_columns.clear();
                }
                self.cfg.upload_columns.extend(cols);
            }
            "slave" => {
                let mut words = scalar(&s)?.split_whitespace().map(str::to_owned);
                let program = words.next().ok_or_else(|| syntax(&s, "`slave` needs a program"))?;
                let timeout = self.cfg.slave.as_ref().map_or(DEFAULT_SLAVE_TIMEOUT, |c| c.timeout);
                let program =
                    if program.contains('/') { self.base.join(program).display().to_string() } else { program };
                self.cfg.slave = Some(SlaveCommand { program, args: words.collect(), timeout });
            }
            "slave_timeout" => {
                let t = seconds(&s)?;
                match &mut self.cfg.slave {
                    Some(c) => c.timeout = t,
                    None => return Err(syntax(&s, "`slave_timeout` must follow `slave`")),
                }
            }
            other => return Err(syntax(&s, format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), ConfigError> {
        self.cfg.auth_mode = match self.cfg.auth_mode {
            AuthMode::SessionIdle { timeout } => AuthMode::SessionIdle { timeout: self.idle.unwrap_or(timeout) },
            AuthMode::IpWindow { validity } => AuthMode::IpWindow { validity: self.validity.unwrap_or(validity) },
        };
        Ok(())
    }

    fn block(&mut self, b: Block) -> Result<(), ConfigError> {
        match b.kind.as_str() {
            "source" => {
                let src = self.source(&b)?;
                self.cfg.sources.push(src);
            }
            "user" => {
                let u = user(&b)?;
                self.cfg.users.push(u);
            }
            "view" => {
                let v = view(&b)?;
                self.cfg.views.push(v);
            }
            other => {
                return Err(ConfigError::Syntax { line: b.line, message: format!("unknown block kind `{other}`") })
            }
        }
        Ok(())
    }

    fn source(&self, b: &Block) -> Result<DataSourceConfig, ConfigError> {
        let mut src = DataSourceConfig::new(b.name.clone(), PathBuf::new());
        let mut located = false;
        for s in &b.settings {
            match s.key.as_str() {
                "location" => {
                    src.location = self.path(s)?;
                    located = true;
                }
                "db_user" => src.db_user = scalar(s)?.into(),
                "db_password" => src.db_password = Secret::new(scalar(s)?),
                "account" => {
                    let [user, password, access] = s.value.split_whitespace().collect::<Vec<_>>()[..] else {
                        return Err(syntax(s, "expected `account = user password read_only|read_write`"));
                    };
                    let access = match access {
                        "read_only" => Access::ReadOnly,
                        "read_write" => Access::ReadWrite,
                        other => return Err(syntax(s, format!("unknown access `{other}`"))),
                    };
                    let acct = DbAccount { user: user.into(), password: Secret::new(password), access };
                    list_assign(s, &mut src.accounts, acct);
                }
                "read_only" => {
                    for w in s.value.split_whitespace() {
                        src.read_only_tables.push(w.into());
                    }
                }
                other => return Err(syntax(s, format!("unknown source setting `{other}`"))),
            }
        }
        if !located {
            return Err(ConfigError::Syntax { line: b.line, message: format!("source `{}` has no location", b.name) });
        }
        Ok(src)
    }
}

fn user(b: &Block) -> Result<UserEntry, ConfigError> {
    let mut u = UserEntry::new(b.name.clone(), "", "", "");
    for s in &b.settings {
        match s.key.as_str() {
            "password_hash" => u.password_hash = scalar(s)?.into(),
            "db_user" => u.db_user = scalar(s)?.into(),
            "db_password" => u.db_password = Secret::new(scalar(s)?),
            other => return Err(syntax(s, format!("unknown user setting `{other}`"))),
        }
    }
    if u.password_hash.is_empty() {
        return Err(ConfigError::Syntax { line: b.line, message: format!("user `{}` has no password_hash", b.name) });
    }
    if !u.password_hash.starts_with('$') {
        return Err(ConfigError::Syntax {
            line: b.line,
            message: format!("user `{}`: password_hash must be a PHC hash string", b.name),
        });
    }
    Ok(u)
}

fn view(b: &Block) -> Result<ViewDef, ConfigError> {
    let mut def = ViewDef { name: b.name.clone(), columns: vec![], join_keys: vec![], ops: vec![] };
    let mut shared = Vec::new();
    let mut per_row = Vec::new();
    let mut max_rows = DEFAULT_MAX_ROWS;
    let mut batch = false;
    let mut ops: Vec<ViewOp> = Vec::new();
    for s in &b.settings {
        match s.key.as_str() {
            "column" => {
                let cols = column_refs(s)?;
                if s.op == AssignOp::Set {
                    def.columns.clear();
                }
                def.columns.extend(cols);
            }
            "join" => {
                let [a, c] = s.value.split_whitespace().collect::<Vec<_>>()[..] else {
                    return Err(syntax(s, "expected `join = db.t.c db.t.c`"));
                };
                let j = (column_ref(s, a)?, column_ref(s, c)?);
                list_assign(s, &mut def.join_keys, j);
            }
            "op" => {
                for w in s.value.split_whitespace() {
                    match OperationKind::parse(w) {
                        Some(k @ (OperationKind::Query | OperationKind::All | OperationKind::Input)) => {
                            ops.push(ViewOp::Standard(k))
                        }
                        _ => return Err(syntax(s, format!("views support input, query and all, not `{w}`"))),
                    }
                }
            }
            "batch_shared" => {
                shared.extend(column_refs(s)?);
                batch = true;
            }
            "batch_rows" => {
                per_row.extend(column_refs(s)?);
                batch = true;
            }
            "max_rows" => max_rows = number(s)?,
            "custom" => {
                let [name, handler] = s.value.split_whitespace().collect::<Vec<_>>()[..] else {
                    return Err(syntax(s, "expected `custom = opname handler`"));
                };
                ops.push(ViewOp::Custom { name: name.into(), handler: handler.into() });
            }
            other => return Err(syntax(s, format!("unknown view setting `{other}`"))),
        }
    }
    if batch {
        if ops.iter().any(|o| o.name() == "input") {
            return Err(ConfigError::Syntax {
                line: b.line,
                message: format!("view `{}`: a batch view has no separate `input` op", b.name),
            });
        }
        ops.insert(0, ViewOp::BatchInput(BatchSpec { shared, per_row, max_rows }));
    }
    def.ops = ops;
    Ok(def)
}
