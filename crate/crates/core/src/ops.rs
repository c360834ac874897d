//! The five standard table operations: gating, form decoding and building,
//! execution, and the audit trail.
//!
//! Form field conventions: column values travel under the column name,
//! filter values under `f.<column>` with an optional relation in
//! `r.<column>`, and the update page's phase in `step` (`filter`, `apply`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::bridge;
use crate::catalog::{open_source, BaseType, CatalogError, ColumnMeta, Connection, DataSourceConfig, TableMeta};
use crate::clock::Timestamp;
use crate::doctree::{el, DocNode, Element};
use crate::hooks::HookRegistry;
use crate::sqlgen::{convert_value, quote_identifier, Assigns, Columns, Relation, RowFilter, SqlGen, SqlGenError};
use crate::value::Value;

/// Submitted form fields.
pub type Form = BTreeMap<String, String>;

pub const DEFAULT_TEXTAREA: (u32, u32) = (4, 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OperationKind {
    Input,
    Update,
    Delete,
    Query,
    All,
}

impl OperationKind {
    pub const STANDARD: [OperationKind; 5] =
        [OperationKind::Input, OperationKind::Update, OperationKind::Delete, OperationKind::Query, OperationKind::All];

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::Input => "input",
            OperationKind::Update => "update",
            OperationKind::Delete => "delete",
            OperationKind::Query => "query",
            OperationKind::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::STANDARD.into_iter().find(|k| k.name() == s)
    }

    pub fn is_mutating(self) -> bool {
        matches!(self, OperationKind::Input | OperationKind::Update | OperationKind::Delete)
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpResult {
    RowsAffected { n: u64 },
    ResultSet { columns: Vec<String>, rows: Vec<Vec<Value>>, truncated: bool },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error("operation `{kind}` is not available on `{table}`")]
    OperationNotAvailable { table: String, kind: OperationKind },
    #[error("unknown relation `{relation}` for `{column}`")]
    UnknownRelation { column: String, relation: String },
    #[error(transparent)]
    Sql(#[from] SqlGenError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// Operation set for a table, in the fixed standard order. Read-only tables
/// never offer a mutating kind, whatever the hooks say.
pub fn available_ops(meta: &TableMeta, hooks: &HookRegistry, diags: &mut Vec<String>) -> Vec<OperationKind> {
    let base: Vec<OperationKind> =
        OperationKind::STANDARD.into_iter().filter(|k| !(meta.read_only && k.is_mutating())).collect();
    match hooks.override_ops(&meta.db, &meta.name, &base, diags) {
        Some(chosen) => OperationKind::STANDARD
            .into_iter()
            .filter(|k| chosen.contains(k) && !(meta.read_only && k.is_mutating()))
            .collect(),
        None => base,
    }
}

pub fn ensure_available(
    meta: &TableMeta,
    hooks: &HookRegistry,
    kind: OperationKind,
    diags: &mut Vec<String>,
) -> Result<(), OpError> {
    if available_ops(meta, hooks, diags).contains(&kind) {
        Ok(())
    } else {
        Err(OpError::OperationNotAvailable { table: meta.qualified_name(), kind })
    }
}

/// Columns filled by a derived-fill hook on this table.
pub fn derived_columns(meta: &TableMeta, hooks: &HookRegistry) -> BTreeSet<String> {
    meta.columns
        .iter()
        .filter_map(|c| hooks.derived_fill(&meta.db, &meta.name, &c.name))
        .flat_map(|spec| spec.outputs.iter().map(|o| o.column.clone()).collect::<Vec<_>>())
        .collect()
}

/// Decodes column fields into assigns.
///
/// Absent fields are left out. An empty field becomes NULL on a nullable
/// column, is left out when the column has a default, and is rejected on a
/// required column.
pub fn decode_assigns(meta: &TableMeta, form: &Form, skip: &BTreeSet<String>) -> Result<Assigns, SqlGenError> {
    let mut assigns = Assigns::new();
    for col in &meta.columns {
        let Some(raw) = form.get(&col.name) else { continue };
        if col.auto_increment {
            if raw.is_empty() {
                continue;
            }
            return Err(SqlGenError::AssignedAutoIncrement(col.name.clone()));
        }
        if skip.contains(&col.name) {
            continue;
        }
        if raw.is_empty() {
            if col.default.is_some() {
                continue;
            }
            if !col.nullable {
                return Err(SqlGenError::MissingRequired(col.name.clone()));
            }
        }
        assigns.insert(col.name.clone(), convert_value(col, raw)?);
    }
    Ok(assigns)
}

/// Decodes `f.<column>` / `r.<column>` pairs. Empty values are ignored.
pub fn decode_filter(meta: &TableMeta, form: &Form) -> Result<RowFilter, OpError> {
    let mut filter = RowFilter::new();
    for (key, raw) in form {
        let Some(name) = key.strip_prefix("f.") else { continue };
        if raw.is_empty() {
            continue;
        }
        let col = meta.column(name).ok_or_else(|| SqlGenError::UnknownColumn(name.to_owned()))?;
        let relation = match form.get(&format!("r.{name}")).map(String::as_str) {
            None | Some("") => Relation::Eq,
            Some(r) => Relation::parse(r)
                .ok_or_else(|| OpError::UnknownRelation { column: name.to_owned(), relation: r.to_owned() })?,
        };
        let value = if relation == Relation::Like { Value::Text(raw.clone()) } else { convert_value(col, raw)? };
        filter = filter.and(name, relation, value);
    }
    Ok(filter)
}

/// Everything an operation needs besides the connection.
pub struct OpEnv<'a> {
    pub hooks: &'a HookRegistry,
    pub gen: SqlGen,
    pub audit: Option<&'a AuditLog>,
    /// The hdb user recorded in the audit trail.
    pub user: &'a str,
    pub now: Timestamp,
    /// Where upload columns' relative paths resolve; needed for derived fill.
    pub upload_root: Option<&'a Path>,
}

impl<'a> OpEnv<'a> {
    pub fn new(hooks: &'a HookRegistry, user: &'a str, now: Timestamp) -> Self {
        OpEnv { hooks, gen: SqlGen::default(), audit: None, user, now, upload_root: None }
    }
}

pub fn execute_op(
    env: &OpEnv<'_>,
    conn: &Connection,
    meta: &TableMeta,
    kind: OperationKind,
    form: &Form,
    diags: &mut Vec<String>,
) -> Result<OpResult, OpError> {
    ensure_available(meta, env.hooks, kind, diags)?;
    match kind {
        OperationKind::Input => {
            input_row(env, conn, meta, form, diags)?;
            Ok(OpResult::RowsAffected { n: 1 })
        }
        OperationKind::Update if form.get("step").map(String::as_str) == Some("apply") => {
            let filter = decode_filter(meta, form)?;
            let assigns = decode_assigns(meta, form, &BTreeSet::new())?;
            let stmt = env.gen.update(meta, &assigns, &filter)?;
            let n = conn.execute(&stmt)? as u64;
            audit(env, meta, kind, &stmt.summary(AUDIT_SUMMARY_CAP), n, diags);
            Ok(OpResult::RowsAffected { n })
        }
        // First update step: show what the filter matches.
        OperationKind::Update | OperationKind::Query => {
            let filter = decode_filter(meta, form)?;
            select(env, conn, meta, &filter)
        }
        OperationKind::Delete => {
            let filter = decode_filter(meta, form)?;
            let stmt = env.gen.delete(meta, &filter)?;
            let n = conn.execute(&stmt)? as u64;
            audit(env, meta, kind, &stmt.summary(AUDIT_SUMMARY_CAP), n, diags);
            Ok(OpResult::RowsAffected { n })
        }
        OperationKind::All => select(env, conn, meta, &RowFilter::new()),
    }
}

fn select(env: &OpEnv<'_>, conn: &Connection, meta: &TableMeta, filter: &RowFilter) -> Result<OpResult, OpError> {
    let limit = env.gen.default_limit;
    let stmt = env.gen.select(meta, &Columns::All, filter, Some(limit.saturating_add(1)))?;
    let mut rows = conn.query(&stmt)?;
    let truncated = rows.rows.len() as u64 > limit;
    rows.rows.truncate(limit as usize);
    Ok(OpResult::ResultSet { columns: rows.columns, rows: rows.rows, truncated })
}

/// Inserts one row from an input form and returns its primary-key values.
///
/// Derived-fill hooks on upload columns run first and their outputs are
/// merged into the assigns. A derived value never replaces a submitted one.
pub fn input_row(
    env: &OpEnv<'_>,
    conn: &Connection,
    meta: &TableMeta,
    form: &Form,
    diags: &mut Vec<String>,
) -> Result<Vec<Value>, OpError> {
    ensure_available(meta, env.hooks, OperationKind::Input, diags)?;
    let derived = derived_columns(meta, env.hooks);
    let mut assigns = decode_assigns(meta, form, &derived)?;
    fill_derived(env, meta, &mut assigns, diags);
    let stmt = env.gen.insert(meta, &assigns)?;
    conn.execute(&stmt)?;
    let key = conn.last_inserted_key(meta)?;
    audit(env, meta, OperationKind::Input, &stmt.summary(AUDIT_SUMMARY_CAP), 1, diags);
    Ok(key)
}

fn fill_derived(env: &OpEnv<'_>, meta: &TableMeta, assigns: &mut Assigns, diags: &mut Vec<String>) {
    for col in &meta.columns {
        let Some(spec) = env.hooks.derived_fill(&meta.db, &meta.name, &col.name) else { continue };
        let Some(Value::Text(rel)) = assigns.get(&col.name).cloned() else { continue };
        let Some(root) = env.upload_root else {
            diags.push(format!("derived_fill_skipped({}.{}): no upload root", meta.name, col.name));
            continue;
        };
        let values = bridge::run_derived_fill(&spec, &root.join(&rel), root, diags);
        for (column, value) in values {
            if assigns.get(&column).is_some_and(|v| !v.is_null()) {
                diags.push(format!("derived_fill_conflict({}.{column}): kept submitted value", meta.name));
                continue;
            }
            if meta.column(&column).is_some() {
                assigns.insert(column, value);
            }
        }
    }
}

pub const AUDIT_SUMMARY_CAP: usize = 1024;

fn audit(env: &OpEnv<'_>, meta: &TableMeta, op: OperationKind, summary: &str, n: u64, diags: &mut Vec<String>) {
    let Some(log) = env.audit else { return };
    if n == 0 {
        return;
    }
    let rec = AuditRecord {
        user: env.user.to_owned(),
        at: env.now,
        db: meta.db.clone(),
        table: meta.name.clone(),
        op,
        summary: summary.to_owned(),
    };
    log.record_or_diagnose(&rec, diags);
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub user: String,
    pub at: Timestamp,
    pub db: String,
    pub table: String,
    pub op: OperationKind,
    pub summary: String,
}

/// The audit table and the source holding it. Records are written through
/// the source's owner account, since the table is read-only to users.
#[derive(Debug, Clone)]
pub struct AuditLog {
    pub source: DataSourceConfig,
    pub table: String,
}

impl AuditLog {
    pub fn new(source: DataSourceConfig, table: impl Into<String>) -> Self {
        AuditLog { source, table: table.into() }
    }

    pub fn create_table_sql(table: &str) -> String {
        format!(
            "CREATE TABLE {} (hdb_user TEXT NOT NULL, at TEXT NOT NULL, db TEXT NOT NULL, \
             tbl TEXT NOT NULL, op TEXT NOT NULL, summary TEXT NOT NULL)",
            quote_identifier(table).expect("non-empty")
        )
    }

    pub fn record(&self, rec: &AuditRecord) -> Result<(), CatalogError> {
        let conn = open_source(&self.source)?;
        record_audit(&conn, &self.table, rec)
    }

    /// Audit failures never undo the mutation; they become a diagnostic.
    pub fn record_or_diagnose(&self, rec: &AuditRecord, diags: &mut Vec<String>) {
        if let Err(e) = self.record(rec) {
            diags.push(format!("audit_failed({}.{}): {e}", rec.db, rec.table));
        }
    }
}

pub fn record_audit(conn: &Connection, table: &str, rec: &AuditRecord) -> Result<(), CatalogError> {
    let sql = format!(
        "INSERT INTO {} (hdb_user, at, db, tbl, op, summary) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        quote_identifier(table).map_err(|e| CatalogError::Engine(e.to_string()))?
    );
    conn.raw()
        .execute(
            &sql,
            rusqlite::params![
                rec.user,
                rec.at.to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
                rec.db,
                rec.table,
                rec.op.name(),
                rec.summary
            ],
        )
        .map(|_| ())
        .map_err(crate::catalog::engine_error)
}

fn label_cell(col: &ColumnMeta) -> Element {
    el("th").child(el("label").attr("for", format!("in.{}", col.name)).text(col.name.clone()))
}

/// The input form for `meta`: one control per column, defaults resolved
/// through the default-value hooks and then the catalog.
pub fn build_input_form(
    meta: &TableMeta,
    hooks: &HookRegistry,
    now: Timestamp,
    action: &str,
    diags: &mut Vec<String>,
) -> Result<DocNode, OpError> {
    ensure_available(meta, hooks, OperationKind::Input, diags)?;
    let derived = derived_columns(meta, hooks);
    let mut has_upload = false;
    let mut rows = Vec::new();
    for col in &meta.columns {
        let id = format!("in.{}", col.name);
        let control: Element = if col.auto_increment {
            el("input").attr("type", "text").attr("id", id).attr("value", "automatic").flag("disabled", true)
        } else if derived.contains(&col.name) {
            el("input").attr("type", "text").attr("id", id).attr("value", "derived").flag("disabled", true)
        } else if hooks.is_upload_column(&meta.db, &meta.name, &col.name) {
            has_upload = true;
            el("input").attr("type", "file").attr("id", id).attr("name", col.name.clone())
        } else {
            let default =
                hooks.default_value(now, &meta.db, &meta.name, &col.name, diags).or_else(|| col.default.clone());
            value_control(meta, hooks, col, id, default.as_deref(), diags)
        };
        let control = control.flag("data-hdb-required", col.is_required());
        rows.push(
            el("tr").child(label_cell(col)).child(el("td").child(control)).child(el("td").text(col.ty.short_label())),
        );
    }
    let mut form = el("form").attr("method", "post").attr("action", action);
    if has_upload {
        form = form.attr("enctype", "multipart/form-data").attr("data-hdb-enhance", "input-form upload-form");
    } else {
        form = form.attr("data-hdb-enhance", "input-form");
    }
    Ok(form
        .child(el("table").attr("class", "form").child(el("tbody").children(rows)))
        .child(el("button").attr("type", "submit").text("input"))
        .into())
}

/// A named control for `col` holding `value`.
pub fn value_control(
    meta: &TableMeta,
    hooks: &HookRegistry,
    col: &ColumnMeta,
    id: String,
    value: Option<&str>,
    diags: &mut Vec<String>,
) -> Element {
    match (&col.ty.base, &col.ty.enum_values) {
        (BaseType::Enum, Some(values)) => {
            el("select").attr("id", id).attr("name", col.name.clone()).children(values.iter().map(|v| {
                el("option").attr("value", v.clone()).flag("selected", value == Some(v.as_str())).text(v.clone())
            }))
        }
        (BaseType::Text | BaseType::Tinytext, _) => {
            let (rows, cols) = hooks.textarea_dims(&meta.db, &meta.name, &col.name, diags).unwrap_or(DEFAULT_TEXTAREA);
            let t = el("textarea")
                .attr("id", id)
                .attr("name", col.name.clone())
                .attr("rows", rows.to_string())
                .attr("cols", cols.to_string());
            match value {
                Some(v) if !v.is_empty() => t.text(v),
                _ => t,
            }
        }
        _ => {
            let i = el("input").attr("type", "text").attr("id", id).attr("name", col.name.clone());
            match value {
                Some(v) => i.attr("value", v),
                None => i,
            }
        }
    }
}

/// Filter form used by query, delete and the first update step.
pub fn build_filter_form(meta: &TableMeta, action: &str, kind: OperationKind) -> DocNode {
    let rows = meta.columns.iter().map(|col| {
        let relation = el("select")
            .attr("name", format!("r.{}", col.name))
            .children(Relation::ALL.iter().map(|r| el("option").attr("value", r.name()).text(r.name())));
        el("tr")
            .child(el("th").child(el("label").attr("for", format!("f.{}", col.name)).text(col.name.clone())))
            .child(el("td").child(relation))
            .child(
                el("td").child(
                    el("input")
                        .attr("type", "text")
                        .attr("id", format!("f.{}", col.name))
                        .attr("name", format!("f.{}", col.name)),
                ),
            )
    });
    let mut form = el("form").attr("method", "post").attr("action", action);
    if kind == OperationKind::Delete {
        form = form.attr("data-hdb-enhance", "delete-form");
    }
    if kind == OperationKind::Update {
        form = form.child(el("input").attr("type", "hidden").attr("name", "step").attr("value", "filter"));
    }
    form.child(el("table").attr("class", "form").child(el("tbody").children(rows)))
        .child(el("button").attr("type", "submit").text(kind.name()))
        .into()
}

/// Second update step: the matched row's values, editable, with the key as
/// the hidden filter.
pub fn build_update_form(
    meta: &TableMeta,
    hooks: &HookRegistry,
    columns: &[String],
    row: &[Value],
    action: &str,
    diags: &mut Vec<String>,
) -> DocNode {
    let current = |name: &str| columns.iter().position(|c| c == name).map(|i| &row[i]);
    let key: Vec<&ColumnMeta> =
        if meta.primary_key().is_empty() { meta.columns.iter().collect() } else { meta.primary_key() };
    let mut form = el("form")
        .attr("method", "post")
        .attr("action", action)
        .attr("data-hdb-enhance", "input-form")
        .child(el("input").attr("type", "hidden").attr("name", "step").attr("value", "apply"));
    for k in key {
        if let Some(v) = current(&k.name).filter(|v| !v.is_null()) {
            form = form.child(
                el("input").attr("type", "hidden").attr("name", format!("f.{}", k.name)).attr("value", v.to_string()),
            );
        }
    }
    let rows = meta.columns.iter().map(|col| {
        let id = format!("in.{}", col.name);
        let value = current(&col.name).map(|v| v.to_string());
        let control = if col.auto_increment {
            el("input")
                .attr("type", "text")
                .attr("id", id)
                .attr("value", value.unwrap_or_default())
                .flag("disabled", true)
        } else {
            value_control(meta, hooks, col, id, value.as_deref(), diags)
        };
        el("tr")
            .child(label_cell(col))
            .child(el("td").child(control.flag("data-hdb-required", col.is_required())))
            .child(el("td").text(col.ty.short_label()))
    });
    form.child(el("table").attr("class", "form").child(el("tbody").children(rows.collect::<Vec<_>>())))
        .child(el("button").attr("type", "submit").text("update"))
        .into()
}

/// A result set as a table; cells pass through the output-link hooks.
pub fn result_table(
    db: &str,
    table: &str,
    hooks: &HookRegistry,
    columns: &[String],
    rows: &[Vec<Value>],
    diags: &mut Vec<String>,
) -> DocNode {
    let head = el("thead").child(el("tr").children(columns.iter().map(|c| el("th").text(c.clone()))));
    let body = el("tbody").children(rows.iter().map(|row| {
        el("tr").children(row.iter().zip(columns).map(|(v, c)| {
            let shown = v.to_string();
            match hooks.linkify(db, table, c, &shown, diags) {
                Some(url) => el("td").child(el("a").attr("href", url).text(shown)),
                None => el("td").text(shown),
            }
        }))
    }));
    el("table").attr("class", "result").attr("data-hdb-enhance", "result-table").child(head).child(body).into()
}
