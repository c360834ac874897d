//! Data-source connections and runtime catalog introspection.
//!
//! Nothing in this crate knows a table or column name in advance: every page
//! and statement is derived from what [`Connection::list_tables`] and
//! [`Connection::describe_table`] report.
//!
//! The shipped engine is the embedded SQLite engine. SQLite keeps declared
//! column types verbatim, so MySQL-style declarations such as
//! `"bigint(20) unsigned"` survive and are parsed by [`parse_declared_type`].
//! A column is auto-incrementing when it is the rowid alias
//! (`INTEGER PRIMARY KEY`) or when an auto-assign trigger installed by
//! [`install_auto_increment`] covers it.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use rusqlite::{ErrorCode, OpenFlags};
use thiserror::Error;

use crate::secret::Secret;
use crate::sqlgen::{quote_identifier, SqlStatement};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadWrite,
    ReadOnly,
}

/// An additional engine account on a data source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbAccount {
    pub user: String,
    pub password: Secret,
    pub access: Access,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSourceConfig {
    pub name: String,
    pub location: PathBuf,
    /// Owner account; connects read-write.
    pub db_user: String,
    pub db_password: Secret,
    pub accounts: Vec<DbAccount>,
    /// Tables the interface treats as read-only.
    pub read_only_tables: Vec<String>,
}

impl DataSourceConfig {
    pub fn new(name: impl Into<String>, location: impl Into<PathBuf>) -> Self {
        let name = name.into();
        DataSourceConfig {
            db_user: name.clone(),
            name,
            location: location.into(),
            db_password: Secret::default(),
            accounts: Vec::new(),
            read_only_tables: Vec::new(),
        }
    }

    /// The `dsn-name` label used in connection diagnostics.
    pub fn label(&self) -> String {
        let stem = self.location.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        format!("{stem}-{}", self.name)
    }

    /// The access an engine account has on this source, if it is one.
    pub fn access_for(&self, user: &str, password: &Secret) -> Option<Access> {
        if user == self.db_user && password == &self.db_password {
            return Some(Access::ReadWrite);
        }
        self.accounts.iter().find(|a| a.user == user && &a.password == password).map(|a| a.access)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("unable_to_connect_to_db_source({label})")]
    DataSourceUnavailable { label: String, reason: String },
    #[error("database user `{user}` is not permitted on source `{source_name}`")]
    AccessDenied { source_name: String, user: String },
    #[error("no such table `{0}`")]
    NoSuchTable(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("permission denied by the database: {0}")]
    PermissionDenied(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("database error: {0}")]
    Engine(String),
}

pub(crate) fn engine_error(e: rusqlite::Error) -> CatalogError {
    let msg = e.to_string();
    match e.sqlite_error_code() {
        Some(ErrorCode::ReadOnly)
        | Some(ErrorCode::PermissionDenied)
        | Some(ErrorCode::AuthorizationForStatementDenied) => CatalogError::PermissionDenied(msg),
        Some(ErrorCode::ConstraintViolation) => CatalogError::Constraint(msg),
        Some(ErrorCode::CannotOpen) | Some(ErrorCode::NotADatabase) => CatalogError::ConnectionLost(msg),
        _ => CatalogError::Engine(msg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseType {
    Integer,
    Bigint,
    Float,
    Text,
    Tinytext,
    Date,
    Datetime,
    Enum,
    Blob,
    Other(String),
}

impl BaseType {
    fn keyword(&self) -> &str {
        match self {
            BaseType::Integer => "integer",
            BaseType::Bigint => "bigint",
            BaseType::Float => "float",
            BaseType::Text => "text",
            BaseType::Tinytext => "tinytext",
            BaseType::Date => "date",
            BaseType::Datetime => "datetime",
            BaseType::Enum => "enum",
            BaseType::Blob => "blob",
            BaseType::Other(s) => s,
        }
    }

    pub fn is_integer(&self) -> bool {
        matches!(self, BaseType::Integer | BaseType::Bigint)
    }

    pub fn is_textual(&self) -> bool {
        matches!(self, BaseType::Text | BaseType::Tinytext)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDesc {
    pub base: BaseType,
    pub width: Option<u32>,
    pub unsigned: bool,
    pub enum_values: Option<Vec<String>>,
}

impl TypeDesc {
    pub fn simple(base: BaseType) -> Self {
        TypeDesc { base, width: None, unsigned: false, enum_values: None }
    }

    /// Compact form used in the table grid, e.g. `bigint(20) uns.`.
    pub fn short_label(&self) -> String {
        self.format(true)
    }

    fn format(&self, short: bool) -> String {
        if let Some(values) = &self.enum_values {
            let quoted: Vec<String> = values.iter().map(|v| format!("'{}'", v.replace('\'', "''"))).collect();
            return format!("enum({})", quoted.join(","));
        }
        let mut s = self.base.keyword().to_owned();
        if let Some(w) = self.width {
            s.push_str(&format!("({w})"));
        }
        if self.unsigned {
            s.push_str(if short { " uns." } else { " unsigned" });
        }
        s
    }
}

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(false))
    }
}

/// Parses `base [ '(' width ')' ] [ 'unsigned' ]` or `enum('v1','v2',...)`.
///
/// Total: anything else becomes `BaseType::Other` carrying the original text.
pub fn parse_declared_type(text: &str) -> TypeDesc {
    let trimmed = text.trim();
    let other = || TypeDesc::simple(BaseType::Other(trimmed.to_owned()));
    let lower = trimmed.to_ascii_lowercase();

    if let Some(rest) = lower.strip_prefix("enum") {
        let offset = trimmed.len() - rest.len();
        return match parse_enum_values(trimmed[offset..].trim_start()) {
            Some(values) if !values.is_empty() => {
                TypeDesc { base: BaseType::Enum, width: None, unsigned: false, enum_values: Some(values) }
            }
            _ => other(),
        };
    }

    let word_end = lower.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(lower.len());
    let base = match &lower[..word_end] {
        "int" | "integer" => BaseType::Integer,
        "bigint" => BaseType::Bigint,
        "float" => BaseType::Float,
        "text" => BaseType::Text,
        "tinytext" => BaseType::Tinytext,
        "date" => BaseType::Date,
        "datetime" => BaseType::Datetime,
        "blob" => BaseType::Blob,
        _ => return other(),
    };
    let mut rest = lower[word_end..].trim_start();
    let mut width = None;
    if let Some(r) = rest.strip_prefix('(') {
        let Some(close) = r.find(')') else {
            return other();
        };
        match r[..close].trim().parse::<u32>() {
            Ok(w) => width = Some(w),
            Err(_) => return other(),
        }
        rest = r[close + 1..].trim_start();
    }
    let unsigned = match rest {
        "" => false,
        "unsigned" => true,
        _ => return other(),
    };
    TypeDesc { base, width, unsigned, enum_values: None }
}

fn parse_enum_values(s: &str) -> Option<Vec<String>> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let mut values = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.next()? != '\'' {
            return None;
        }
        let mut v = String::new();
        loop {
            match chars.next()? {
                '\'' if chars.peek() == Some(&'\'') => {
                    chars.next();
                    v.push('\'');
                }
                '\'' => break,
                c => v.push(c),
            }
        }
        values.push(v);
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        match chars.next() {
            None => return Some(values),
            Some(',') => continue,
            Some(_) => return None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Primary,
    Unique,
    Index,
    None,
}

impl KeyKind {
    /// Grid abbreviation: `PRI`, `UNI`, `MUL` or empty.
    pub fn label(self) -> &'static str {
        match self {
            KeyKind::Primary => "PRI",
            KeyKind::Unique => "UNI",
            KeyKind::Index => "MUL",
            KeyKind::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    pub ty: TypeDesc,
    pub nullable: bool,
    pub key: KeyKind,
    pub default: Option<String>,
    pub auto_increment: bool,
}

impl ColumnMeta {
    /// Non-nullable, no default and not engine-assigned.
    pub fn is_required(&self) -> bool {
        !self.nullable && self.default.is_none() && !self.auto_increment
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableMeta {
    pub db: String,
    pub name: String,
    pub columns: Vec<ColumnMeta>,
    pub read_only: bool,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_key(&self) -> Vec<&ColumnMeta> {
        self.columns.iter().filter(|c| c.key == KeyKind::Primary).collect()
    }

    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.db, self.name)
    }
}

/// A fully qualified column reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub db: String,
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(db: impl Into<String>, table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef { db: db.into(), table: table.into(), column: column.into() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.db, self.table, self.column)
    }
}

/// Column names and rows returned by a query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rows {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

pub struct Connection {
    db: String,
    user: String,
    access: Access,
    read_only_tables: BTreeSet<String>,
    conn: rusqlite::Connection,
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("db", &self.db)
            .field("user", &self.user)
            .field("access", &self.access)
            .finish()
    }
}

/// Connects with the source's owner account.
pub fn open_source(cfg: &DataSourceConfig) -> Result<Connection, CatalogError> {
    connect(cfg, &cfg.db_user, &cfg.db_password)
}

/// Connects as the given engine account. Read-only accounts get a connection
/// the engine itself refuses to write through.
pub fn connect(cfg: &DataSourceConfig, user: &str, password: &Secret) -> Result<Connection, CatalogError> {
    let access = cfg
        .access_for(user, password)
        .ok_or_else(|| CatalogError::AccessDenied { source_name: cfg.name.clone(), user: user.to_owned() })?;
    let unavailable = |reason: String| CatalogError::DataSourceUnavailable { label: cfg.label(), reason };
    if !cfg.location.is_file() {
        return Err(unavailable(format!("{} does not exist", cfg.location.display())));
    }
    let flags = match access {
        Access::ReadWrite => OpenFlags::SQLITE_OPEN_READ_WRITE,
        Access::ReadOnly => OpenFlags::SQLITE_OPEN_READ_ONLY,
    } | OpenFlags::SQLITE_OPEN_NO_MUTEX;
    let conn = rusqlite::Connection::open_with_flags(&cfg.location, flags).map_err(|e| unavailable(e.to_string()))?;
    conn.busy_timeout(std::time::Duration::from_secs(5)).map_err(|e| unavailable(e.to_string()))?;
    // Forces the header read, so a non-database file fails here.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
        .map_err(|e| unavailable(e.to_string()))?;
    Ok(Connection {
        db: cfg.name.clone(),
        user: user.to_owned(),
        access,
        read_only_tables: cfg.read_only_tables.iter().cloned().collect(),
        conn,
    })
}

impl Connection {
    pub fn db(&self) -> &str {
        &self.db
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn access(&self) -> Access {
        self.access
    }

    /// Escape hatch for fixtures and site handlers.
    pub fn raw(&self) -> &rusqlite::Connection {
        &self.conn
    }

    /// Base table names, alphabetically ordered.
    pub fn table_names(&self) -> Result<Vec<String>, CatalogError> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\'",
            )
            .map_err(engine_error)?;
        let mut names = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .map_err(engine_error)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(engine_error)?;
        names.sort_by(|a, b| a.to_lowercase().cmp(&b.to_lowercase()).then_with(|| a.cmp(b)));
        Ok(names)
    }

    pub fn list_tables(&self) -> Result<Vec<TableMeta>, CatalogError> {
        self.table_names()?.iter().map(|n| self.describe_table(n)).collect()
    }

    fn resolve_table_name(&self, name: &str) -> Result<String, CatalogError> {
        self.conn
            .query_row("SELECT name FROM sqlite_master WHERE type = 'table' AND name = ?1", [name], |r| {
                r.get::<_, String>(0)
            })
            .map_err(|e| match e {
                rusqlite::Error::QueryReturnedNoRows => CatalogError::NoSuchTable(name.to_owned()),
                e => engine_error(e),
            })
    }

    pub fn describe_table(&self, name: &str) -> Result<TableMeta, CatalogError> {
        let name = self.resolve_table_name(name)?;

        struct RawColumn {
            name: String,
            declared: String,
            notnull: bool,
            default: Option<String>,
            pk: i64,
        }
        let mut stmt = self
            .conn
            .prepare("SELECT name, type, \"notnull\", dflt_value, pk FROM pragma_table_info(?1) ORDER BY cid")
            .map_err(engine_error)?;
        let raw: Vec<RawColumn> = stmt
            .query_map([&name], |r| {
                Ok(RawColumn {
                    name: r.get(0)?,
                    declared: r.get(1)?,
                    notnull: r.get::<_, i64>(2)? != 0,
                    default: r.get(3)?,
                    pk: r.get(4)?,
                })
            })
            .map_err(engine_error)?
            .collect::<Result<_, _>>()
            .map_err(engine_error)?;

        let (unique, indexed) = self.index_columns(&name)?;
        let pk_count = raw.iter().filter(|c| c.pk > 0).count();
        let triggers = self.auto_increment_triggers(&name)?;

        let columns = raw
            .into_iter()
            .map(|c| {
                let ty = parse_declared_type(&c.declared);
                let key = if c.pk > 0 {
                    KeyKind::Primary
                } else if unique.contains(&c.name) {
                    KeyKind::Unique
                } else if indexed.contains(&c.name) {
                    KeyKind::Index
                } else {
                    KeyKind::None
                };
                let rowid_alias = c.pk > 0 && pk_count == 1 && c.declared.eq_ignore_ascii_case("integer");
                let auto_increment =
                    ty.base.is_integer() && key != KeyKind::None && (rowid_alias || triggers.contains(&c.name));
                ColumnMeta {
                    nullable: !c.notnull && c.pk == 0,
                    default: c.default.as_deref().and_then(unquote_default),
                    name: c.name,
                    ty,
                    key,
                    auto_increment,
                }
            })
            .collect();

        Ok(TableMeta { db: self.db.clone(), read_only: self.read_only_tables.contains(&name), name, columns })
    }

    /// (single-column unique indexes, leading columns of other indexes)
    fn index_columns(&self, table: &str) -> Result<(BTreeSet<String>, BTreeSet<String>), CatalogError> {
        let mut unique = BTreeSet::new();
        let mut indexed = BTreeSet::new();
        let mut list =
            self.conn.prepare("SELECT name, \"unique\", origin FROM pragma_index_list(?1)").map_err(engine_error)?;
        let indexes: Vec<(String, bool, String)> = list
            .query_map([table], |r| Ok((r.get(0)?, r.get::<_, i64>(1)? != 0, r.get(2)?)))
            .map_err(engine_error)?
            .collect::<Result<_, _>>()
            .map_err(engine_error)?;
        let mut info =
            self.conn.prepare("SELECT name FROM pragma_index_info(?1) ORDER BY seqno").map_err(engine_error)?;
        for (index, is_unique, origin) in indexes {
            if origin == "pk" {
                continue;
            }
            let cols: Vec<String> = info
                .query_map([&index], |r| r.get::<_, String>(0))
                .map_err(engine_error)?
                .collect::<Result<_, _>>()
                .map_err(engine_error)?;
            match cols.as_slice() {
                [only] if is_unique => {
                    unique.insert(only.clone());
                }
                [first, ..] => {
                    indexed.insert(first.clone());
                }
                [] => {}
            }
        }
        Ok((unique, indexed))
    }

    fn auto_increment_triggers(&self, table: &str) -> Result<BTreeSet<String>, CatalogError> {
        let prefix = format!("{AUTOINC_TRIGGER_PREFIX}{table}__");
        let mut stmt = self
            .conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'trigger' AND tbl_name = ?1")
            .map_err(engine_error)?;
        let names = stmt
            .query_map([table], |r| r.get::<_, String>(0))
            .map_err(engine_error)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(engine_error)?;
        Ok(names.into_iter().filter_map(|n| n.strip_prefix(&prefix).map(str::to_owned)).collect())
    }

    pub fn row_count(&self, name: &str) -> Result<u64, CatalogError> {
        let name = self.resolve_table_name(name)?;
        let sql = format!("SELECT count(*) FROM {}", quote_identifier(&name).expect("non-empty"));
        self.conn.query_row(&sql, [], |r| r.get::<_, i64>(0)).map(|n| n as u64).map_err(engine_error)
    }

    pub fn execute(&self, stmt: &SqlStatement) -> Result<usize, CatalogError> {
        self.conn.execute(&stmt.text, rusqlite::params_from_iter(stmt.params.iter())).map_err(engine_error)
    }

    pub fn query(&self, stmt: &SqlStatement) -> Result<Rows, CatalogError> {
        let mut prepared = self.conn.prepare(&stmt.text).map_err(engine_error)?;
        let columns: Vec<String> = prepared.column_names().into_iter().map(str::to_owned).collect();
        let n = columns.len();
        let rows = prepared
            .query_map(rusqlite::params_from_iter(stmt.params.iter()), |r| {
                (0..n).map(|i| r.get::<_, Value>(i)).collect()
            })
            .map_err(engine_error)?
            .collect::<Result<Vec<Vec<Value>>, _>>()
            .map_err(engine_error)?;
        Ok(Rows { columns, rows })
    }

    pub fn last_insert_rowid(&self) -> i64 {
        self.conn.last_insert_rowid()
    }

    /// Primary-key values of the row most recently inserted into `meta`.
    pub fn last_inserted_key(&self, meta: &TableMeta) -> Result<Vec<Value>, CatalogError> {
        let pk = meta.primary_key();
        if pk.is_empty() {
            return Ok(vec![Value::Integer(self.last_insert_rowid())]);
        }
        let cols: Vec<String> = pk.iter().map(|c| quote_identifier(&c.name).expect("non-empty")).collect();
        let sql = format!(
            "SELECT {} FROM {} WHERE rowid = ?1",
            cols.join(", "),
            quote_identifier(&meta.name).expect("non-empty")
        );
        self.conn
            .query_row(&sql, [self.last_insert_rowid()], |r| (0..cols.len()).map(|i| r.get::<_, Value>(i)).collect())
            .map_err(engine_error)
    }

    /// Runs `f` inside a transaction; any error rolls everything back.
    pub fn transaction<T, E>(&self, f: impl FnOnce(&Connection) -> Result<T, E>) -> Result<T, E>
    where
        E: From<CatalogError>,
    {
        self.conn.execute_batch("BEGIN IMMEDIATE").map_err(|e| E::from(engine_error(e)))?;
        match f(self) {
            Ok(v) => {
                self.conn.execute_batch("COMMIT").map_err(|e| E::from(engine_error(e)))?;
                Ok(v)
            }
            Err(e) => {
                let _ = self.conn.execute_batch("ROLLBACK");
                Err(e)
            }
        }
    }
}

const AUTOINC_TRIGGER_PREFIX: &str = "hdb_autoinc__";

/// Makes `column` engine-assigned for keys whose declared type is not the
/// rowid alias, e.g. `"bigint(20) unsigned" PRIMARY KEY`. Inserts that leave
/// the column NULL receive `max + 1`.
pub fn install_auto_increment(conn: &rusqlite::Connection, table: &str, column: &str) -> Result<(), CatalogError> {
    let q = |s: &str| quote_identifier(s).expect("non-empty");
    let trigger = q(&format!("{AUTOINC_TRIGGER_PREFIX}{table}__{column}"));
    let (t, c) = (q(table), q(column));
    let sql = format!(
        "CREATE TRIGGER {trigger} AFTER INSERT ON {t} WHEN NEW.{c} IS NULL BEGIN \
         UPDATE {t} SET {c} = (SELECT coalesce(max({c}), 0) + 1 FROM {t}) WHERE rowid = NEW.rowid; \
         END"
    );
    conn.execute_batch(&sql).map_err(engine_error)
}

fn unquote_default(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("null") {
        return None;
    }
    if raw.len() >= 2 && raw.starts_with('\'') && raw.ends_with('\'') {
        return Some(raw[1..raw.len() - 1].replace("''", "'"));
    }
    Some(raw.to_owned())
}

/// Anything that can hand out connections by database name.
pub trait CatalogAccess {
    fn connect(&self, db: &str) -> Result<Connection, CatalogError>;

    fn describe(&self, db: &str, table: &str) -> Result<TableMeta, CatalogError> {
        self.connect(db)?.describe_table(table)
    }
}

/// Owner-account access over a fixed set of sources.
#[derive(Debug, Clone, Default)]
pub struct SourceSet {
    pub sources: Vec<DataSourceConfig>,
}

impl SourceSet {
    pub fn new(sources: Vec<DataSourceConfig>) -> Self {
        SourceSet { sources }
    }

    pub fn get(&self, db: &str) -> Option<&DataSourceConfig> {
        self.sources.iter().find(|s| s.name == db)
    }
}

impl CatalogAccess for SourceSet {
    fn connect(&self, db: &str) -> Result<Connection, CatalogError> {
        let cfg = self.get(db).ok_or_else(|| CatalogError::DataSourceUnavailable {
            label: format!("-{db}"),
            reason: "unknown data source".into(),
        })?;
        open_source(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(ddl: &str) -> (tempfile::TempDir, DataSourceConfig) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scratch.db");
        let c = rusqlite::Connection::open(&path).unwrap();
        c.execute_batch(ddl).unwrap();
        (dir, DataSourceConfig::new("scratch", path))
    }

    #[test]
    fn declared_type_examples() {
        assert_eq!(
            parse_declared_type("bigint(20) unsigned"),
            TypeDesc { base: BaseType::Bigint, width: Some(20), unsigned: true, enum_values: None }
        );
        assert_eq!(parse_declared_type("float"), TypeDesc::simple(BaseType::Float));
        let e = parse_declared_type("enum('a','b')");
        assert_eq!(e.base, BaseType::Enum);
        assert_eq!(e.enum_values, Some(vec!["a".into(), "b".into()]));
    }

    #[test]
    fn declared_type_edge_cases() {
        assert_eq!(parse_declared_type("ENUM( 'it''s' , 'x y' )").enum_values, Some(vec!["it's".into(), "x y".into()]));
        for junk in ["enum()", "enum('a'", "varchar(255)", "bigint(x)", "int unsigned zerofill", "", "("] {
            assert!(matches!(parse_declared_type(junk).base, BaseType::Other(_)), "{junk}");
        }
        assert_eq!(parse_declared_type("float unsigned").short_label(), "float uns.");
        assert_eq!(parse_declared_type("bigint(20) unsigned").short_label(), "bigint(20) uns.");
        assert_eq!(parse_declared_type("bigint(20) unsigned").to_string(), "bigint(20) unsigned");
    }

    #[test]
    fn missing_location_is_unavailable() {
        let cfg = DataSourceConfig::new("ni_lhh", "/nonexistent/nilhhloc.db");
        let err = open_source(&cfg).unwrap_err();
        assert_eq!(err.to_string(), "unable_to_connect_to_db_source(nilhhloc-ni_lhh)");
    }

    #[test]
    fn non_database_file_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.db");
        std::fs::write(&path, b"definitely not a database file, just some text padding it out").unwrap();
        let err = open_source(&DataSourceConfig::new("junk", path)).unwrap_err();
        assert!(matches!(err, CatalogError::DataSourceUnavailable { .. }));
    }

    #[test]
    fn wrong_credentials_are_denied() {
        let (_d, cfg) = scratch("CREATE TABLE t (a int);");
        let err = connect(&cfg, "mallory", &Secret::new("x")).unwrap_err();
        assert!(matches!(err, CatalogError::AccessDenied { .. }));
    }

    #[test]
    fn describe_reports_keys_defaults_and_auto_increment() {
        let (_d, cfg) = scratch(
            "CREATE TABLE t (id integer primary key, code tinytext unique, \
             grp int, note text default 'n''a', colour \"enum('red','green')\" not null);
             CREATE INDEX t_grp ON t (grp);
             CREATE TABLE k (\"KID\" \"bigint(20) unsigned\" primary key, v float);",
        );
        let conn = open_source(&cfg).unwrap();
        let t = conn.describe_table("t").unwrap();
        let names: Vec<_> = t.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["id", "code", "grp", "note", "colour"]);
        assert!(t.columns[0].auto_increment);
        assert_eq!(t.columns[0].key, KeyKind::Primary);
        assert!(!t.columns[0].nullable);
        assert_eq!(t.columns[1].key, KeyKind::Unique);
        assert_eq!(t.columns[2].key, KeyKind::Index);
        assert_eq!(t.columns[3].default.as_deref(), Some("n'a"));
        assert_eq!(t.columns[4].ty.enum_values, Some(vec!["red".to_string(), "green".to_string()]));
        assert!(!t.columns[4].nullable);

        let k = conn.describe_table("k").unwrap();
        assert!(!k.columns[0].auto_increment);
        install_auto_increment(conn.raw(), "k", "KID").unwrap();
        let k = conn.describe_table("k").unwrap();
        assert!(k.columns[0].auto_increment);
        assert!(!k.columns[0].nullable);

        conn.raw().execute("INSERT INTO k (v) VALUES (1.5)", []).unwrap();
        conn.raw().execute("INSERT INTO k (v) VALUES (2.5)", []).unwrap();
        let key = conn.last_inserted_key(&k).unwrap();
        assert_eq!(key, vec![Value::Integer(2)]);
    }

    #[test]
    fn listing_is_alphabetical_and_agrees_with_describe() {
        let (_d, cfg) = scratch(
            "CREATE TABLE Plate (a int); CREATE TABLE Experiment (a int); \
             CREATE TABLE ExternalDataSource (a int); CREATE TABLE mix (a int);",
        );
        let conn = open_source(&cfg).unwrap();
        assert_eq!(conn.table_names().unwrap(), ["Experiment", "ExternalDataSource", "mix", "Plate"]);
        for t in conn.list_tables().unwrap() {
            assert!(conn.describe_table(&t.name).is_ok());
        }
    }

    #[test]
    fn unknown_table_errors() {
        let (_d, cfg) = scratch("CREATE TABLE t (a int);");
        let conn = open_source(&cfg).unwrap();
        assert_eq!(conn.describe_table("nope"), Err(CatalogError::NoSuchTable("nope".into())));
        assert!(matches!(conn.row_count("nope"), Err(CatalogError::NoSuchTable(_))));
        assert_eq!(conn.row_count("t").unwrap(), 0);
    }

    #[test]
    fn read_only_account_is_refused_by_engine() {
        let (_d, mut cfg) = scratch("CREATE TABLE t (a int);");
        cfg.accounts.push(DbAccount {
            user: "readonly_role".into(),
            password: Secret::new("ro"),
            access: Access::ReadOnly,
        });
        let conn = connect(&cfg, "readonly_role", &Secret::new("ro")).unwrap();
        let stmt = SqlStatement { text: "INSERT INTO t (a) VALUES (?1)".into(), params: vec![Value::Integer(1)] };
        assert!(matches!(conn.execute(&stmt), Err(CatalogError::PermissionDenied(_))));
        assert_eq!(conn.row_count("t").unwrap(), 0);
    }

    #[test]
    fn transaction_rolls_back_on_error() {
        let (_d, cfg) = scratch("CREATE TABLE t (a int not null);");
        let conn = open_source(&cfg).unwrap();
        let ins = |v: Value| SqlStatement { text: "INSERT INTO t (a) VALUES (?1)".into(), params: vec![v] };
        let r: Result<(), CatalogError> = conn.transaction(|c| {
            c.execute(&ins(Value::Integer(1)))?;
            c.execute(&ins(Value::Null))?;
            Ok(())
        });
        assert!(matches!(r, Err(CatalogError::Constraint(_))));
        assert_eq!(conn.row_count("t").unwrap(), 0);
    }
}
