//! Parameterized statements for the standard table operations.
//!
//! Generators only ever place identifiers (quoted) and numbered placeholders
//! into statement text; every value travels in [`SqlStatement::params`].

use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::catalog::{BaseType, ColumnMeta, TableMeta};
use crate::value::Value;

/// Column → value assignments for insert and update.
pub type Assigns = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct SqlStatement {
    pub text: String,
    pub params: Vec<Value>,
}

impl SqlStatement {
    /// Number of distinct `?N` placeholders in the text.
    pub fn placeholder_count(&self) -> usize {
        let mut seen = BTreeSet::new();
        let mut chars = self.text.char_indices().peekable();
        let mut in_quote: Option<char> = None;
        while let Some((_, c)) = chars.next() {
            match (in_quote, c) {
                (Some(q), c) if c == q => in_quote = None,
                (Some(_), _) => {}
                (None, '"') | (None, '\'') => in_quote = Some(c),
                (None, '?') => {
                    let mut n = String::new();
                    while let Some((_, d)) = chars.next_if(|(_, d)| d.is_ascii_digit()) {
                        n.push(d);
                    }
                    seen.insert(n);
                }
                _ => {}
            }
        }
        seen.len()
    }

    /// Statement text followed by its parameter values.
    pub fn summary(&self, cap: usize) -> String {
        let params: Vec<String> = self.params.iter().map(render_param).collect();
        let full = format!("{} -- [{}]", self.text, params.join(", "));
        if full.chars().count() <= cap {
            full
        } else {
            full.chars().take(cap).collect()
        }
    }
}

fn render_param(v: &Value) -> String {
    match v {
        Value::Null => "NULL".into(),
        Value::Text(s) => format!("{s:?}"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlGenError {
    #[error("empty identifier")]
    EmptyIdentifier,
    #[error("table `{0}` is read-only")]
    ReadOnlyTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is assigned by the database")]
    AssignedAutoIncrement(String),
    #[error("a value for `{0}` is required")]
    MissingRequired(String),
    #[error("an empty filter would affect every row")]
    EmptyFilterForbidden,
    #[error("nothing to update")]
    EmptyAssigns,
    #[error("invalid value for `{column}`: {reason}")]
    InvalidValue { column: String, reason: String },
}

pub fn quote_identifier(name: &str) -> Result<String, SqlGenError> {
    if name.is_empty() {
        return Err(SqlGenError::EmptyIdentifier);
    }
    Ok(format!("\"{}\"", name.replace('"', "\"\"")))
}

fn q(name: &str) -> String {
    quote_identifier(name).expect("catalog identifiers are non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Like,
}

impl Relation {
    pub const ALL: [Relation; 7] =
        [Relation::Eq, Relation::Ne, Relation::Lt, Relation::Le, Relation::Gt, Relation::Ge, Relation::Like];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Eq => "eq",
            Relation::Ne => "ne",
            Relation::Lt => "lt",
            Relation::Le => "le",
            Relation::Gt => "gt",
            Relation::Ge => "ge",
            Relation::Like => "like",
        }
    }

    pub fn parse(s: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.name() == s)
    }

    fn operator(self, null: bool) -> &'static str {
        match (self, null) {
            (Relation::Eq, true) => "IS",
            (Relation::Ne, true) => "IS NOT",
            (Relation::Eq, false) => "=",
            (Relation::Ne, false) => "<>",
            (Relation::Lt, _) => "<",
            (Relation::Le, _) => "<=",
            (Relation::Gt, _) => ">",
            (Relation::Ge, _) => ">=",
            (Relation::Like, _) => "LIKE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conjunct {
    pub column: String,
    pub relation: Relation,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowFilter {
    pub conjuncts: Vec<Conjunct>,
}

impl RowFilter {
    pub fn new() -> Self {
        RowFilter::default()
    }

    pub fn eq(column: impl Into<String>, value: impl Into<Value>) -> Self {
        RowFilter::new().and(column, Relation::Eq, value)
    }

    pub fn and(mut self, column: impl Into<String>, relation: Relation, value: impl Into<Value>) -> Self {
        self.conjuncts.push(Conjunct { column: column.into(), relation, value: value.into() });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Columns {
    All,
    List(Vec<String>),
}

/// Placeholder style of the connected engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[non_exhaustive]
pub enum Dialect {
    /// `?1, ?2, ...`
    #[default]
    Sqlite,
}

impl Dialect {
    fn placeholder(self, n: usize) -> String {
        match self {
            Dialect::Sqlite => format!("?{n}"),
        }
    }
}

pub const DEFAULT_PAGE_LIMIT: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqlGen {
    pub dialect: Dialect,
    pub default_limit: u64,
}

impl Default for SqlGen {
    fn default() -> Self {
        SqlGen { dialect: Dialect::Sqlite, default_limit: DEFAULT_PAGE_LIMIT }
    }
}

struct Builder {
    dialect: Dialect,
    params: Vec<Value>,
}

impl Builder {
    fn bind(&mut self, v: Value) -> String {
        self.params.push(v);
        self.dialect.placeholder(self.params.len())
    }

    fn where_clause(&mut self, meta: &TableMeta, filter: &RowFilter) -> Result<String, SqlGenError> {
        let mut parts = Vec::with_capacity(filter.conjuncts.len());
        for c in &filter.conjuncts {
            column(meta, &c.column)?;
            let op = c.relation.operator(c.value.is_null());
            let ph = self.bind(c.value.clone());
            parts.push(format!("{} {op} {ph}", q(&c.column)));
        }
        Ok(if parts.is_empty() { String::new() } else { format!(" WHERE {}", parts.join(" AND ")) })
    }
}

fn column<'m>(meta: &'m TableMeta, name: &str) -> Result<&'m ColumnMeta, SqlGenError> {
    meta.column(name).ok_or_else(|| SqlGenError::UnknownColumn(name.to_owned()))
}

fn writable(meta: &TableMeta) -> Result<(), SqlGenError> {
    if meta.read_only {
        Err(SqlGenError::ReadOnlyTable(meta.qualified_name()))
    } else {
        Ok(())
    }
}

fn check_assigns(meta: &TableMeta, assigns: &Assigns) -> Result<(), SqlGenError> {
    for (name, value) in assigns {
        let col = column(meta, name)?;
        if col.auto_increment {
            return Err(SqlGenError::AssignedAutoIncrement(name.clone()));
        }
        if value.is_null() && !col.nullable {
            return Err(SqlGenError::MissingRequired(name.clone()));
        }
        check_value(col, value)?;
    }
    Ok(())
}

impl SqlGen {
    fn builder(&self) -> Builder {
        Builder { dialect: self.dialect, params: Vec::new() }
    }

    pub fn insert(&self, meta: &TableMeta, assigns: &Assigns) -> Result<SqlStatement, SqlGenError> {
        writable(meta)?;
        check_assigns(meta, assigns)?;
        if let Some(missing) = meta.columns.iter().find(|c| c.is_required() && !assigns.contains_key(&c.name)) {
            return Err(SqlGenError::MissingRequired(missing.name.clone()));
        }
        let mut b = self.builder();
        let (mut cols, mut phs) = (Vec::new(), Vec::new());
        for c in &meta.columns {
            if let Some(v) = assigns.get(&c.name) {
                cols.push(q(&c.name));
                phs.push(b.bind(v.clone()));
            }
        }
        let text = if cols.is_empty() {
            format!("INSERT INTO {} DEFAULT VALUES", q(&meta.name))
        } else {
            format!("INSERT INTO {} ({}) VALUES ({})", q(&meta.name), cols.join(", "), phs.join(", "))
        };
        Ok(SqlStatement { text, params: b.params })
    }

    /// `limit: None` applies the configured default.
    pub fn select(
        &self,
        meta: &TableMeta,
        columns: &Columns,
        filter: &RowFilter,
        limit: Option<u64>,
    ) -> Result<SqlStatement, SqlGenError> {
        let cols: Vec<String> = match columns {
            Columns::All => meta.columns.iter().map(|c| q(&c.name)).collect(),
            Columns::List(names) => {
                names.iter().map(|n| column(meta, n).map(|c| q(&c.name))).collect::<Result<_, _>>()?
            }
        };
        let mut b = self.builder();
        let where_clause = b.where_clause(meta, filter)?;
        let pk: Vec<String> = meta.primary_key().iter().map(|c| q(&c.name)).collect();
        let order = if pk.is_empty() { " ORDER BY rowid".to_owned() } else { format!(" ORDER BY {}", pk.join(", ")) };
        let limit = b.bind(Value::Integer(limit.unwrap_or(self.default_limit).min(i64::MAX as u64) as i64));
        Ok(SqlStatement {
            text: format!("SELECT {} FROM {}{where_clause}{order} LIMIT {limit}", cols.join(", "), q(&meta.name)),
            params: b.params,
        })
    }

    pub fn update(&self, meta: &TableMeta, assigns: &Assigns, filter: &RowFilter) -> Result<SqlStatement, SqlGenError> {
        writable(meta)?;
        if filter.is_empty() {
            return Err(SqlGenError::EmptyFilterForbidden);
        }
        check_assigns(meta, assigns)?;
        if assigns.is_empty() {
            return Err(SqlGenError::EmptyAssigns);
        }
        let mut b = self.builder();
        let mut sets = Vec::new();
        for c in &meta.columns {
            if let Some(v) = assigns.get(&c.name) {
                let ph = b.bind(v.clone());
                sets.push(format!("{} = {ph}", q(&c.name)));
            }
        }
        let where_clause = b.where_clause(meta, filter)?;
        Ok(SqlStatement {
            text: format!("UPDATE {} SET {}{where_clause}", q(&meta.name), sets.join(", ")),
            params: b.params,
        })
    }

    pub fn delete(&self, meta: &TableMeta, filter: &RowFilter) -> Result<SqlStatement, SqlGenError> {
        writable(meta)?;
        if filter.is_empty() {
            return Err(SqlGenError::EmptyFilterForbidden);
        }
        let mut b = self.builder();
        let where_clause = b.where_clause(meta, filter)?;
        Ok(SqlStatement { text: format!("DELETE FROM {}{where_clause}", q(&meta.name)), params: b.params })
    }
}

fn invalid(col: &ColumnMeta, reason: impl Into<String>) -> SqlGenError {
    SqlGenError::InvalidValue { column: col.name.clone(), reason: reason.into() }
}

/// Checks a typed value against the column's declared type.
pub fn check_value(col: &ColumnMeta, value: &Value) -> Result<(), SqlGenError> {
    match (&col.ty.base, value) {
        (_, Value::Null) => Ok(()),
        (BaseType::Enum, Value::Text(s)) => {
            let allowed = col.ty.enum_values.as_deref().unwrap_or_default();
            if allowed.iter().any(|v| v == s) {
                Ok(())
            } else {
                Err(invalid(col, format!("`{s}` is not one of {allowed:?}")))
            }
        }
        (BaseType::Enum, _) => Err(invalid(col, "enumeration values are text")),
        (_, Value::Integer(i)) if col.ty.unsigned && *i < 0 => Err(invalid(col, "must not be negative")),
        (_, Value::Real(r)) if col.ty.unsigned && *r < 0.0 => Err(invalid(col, "must not be negative")),
        (BaseType::Tinytext, Value::Text(s)) if s.len() > 255 => Err(invalid(col, "longer than 255 bytes")),
        _ => Ok(()),
    }
}

/// Converts submitted form text into a typed value for `col`.
///
/// Empty input maps to NULL; whether that is acceptable is decided by the
/// statement generators.
pub fn convert_value(col: &ColumnMeta, raw: &str) -> Result<Value, SqlGenError> {
    if raw.is_empty() {
        return Ok(Value::Null);
    }
    let value = match &col.ty.base {
        BaseType::Integer | BaseType::Bigint => raw
            .trim()
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|_| invalid(col, format!("`{raw}` is not an integer")))?,
        BaseType::Float => match raw.trim().parse::<f64>() {
            Ok(f) if f.is_finite() => Value::Real(f),
            _ => return Err(invalid(col, format!("`{raw}` is not a number"))),
        },
        BaseType::Date => Value::Text(
            parse_date(raw)
                .ok_or_else(|| invalid(col, format!("`{raw}` is not a date (YYYY-M-D)")))?
                .format("%Y-%m-%d")
                .to_string(),
        ),
        BaseType::Datetime => Value::Text(
            parse_datetime(raw)
                .ok_or_else(|| invalid(col, format!("`{raw}` is not a date and time")))?
                .format("%Y-%m-%d %H:%M:%S")
                .to_string(),
        ),
        _ => Value::Text(raw.to_owned()),
    };
    check_value(col, &value)?;
    Ok(value)
}

/// Accepts `YYYY-M-D` and `YYYY-MM-DD`.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let mut parts = raw.trim().split('-');
    let (y, m, d) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || y.len() != 4 || !(1..=2).contains(&m.len()) || !(1..=2).contains(&d.len()) {
        return None;
    }
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if !(digits(y) && digits(m) && digits(d)) {
        return None;
    }
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
}

fn parse_datetime(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    let (date, time) = raw.split_once([' ', 'T']).unwrap_or((raw, "00:00:00"));
    let date = parse_date(date)?;
    let time = chrono::NaiveTime::parse_from_str(time, "%H:%M:%S")
        .or_else(|_| chrono::NaiveTime::parse_from_str(time, "%H:%M"))
        .ok()?;
    Some(date.and_time(time))
}
