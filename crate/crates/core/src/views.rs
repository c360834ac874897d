//! Views: named objects over several tables or several rows, defined in
//! configuration and validated against the catalog when registered.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::auth::Session;
use crate::catalog::{CatalogAccess, CatalogError, ColumnRef, Connection, TableMeta};
use crate::doctree::{el, DocNode, Page};
use crate::hooks::{HookError, HookRegistry, PageHandlerFn};
use crate::ops::{self, decode_assigns, Form, OpEnv, OpError, OperationKind, AUDIT_SUMMARY_CAP};
use crate::sqlgen::{convert_value, quote_identifier, Relation, SqlGenError, SqlStatement};
use crate::value::Value;

pub const DEFAULT_MAX_ROWS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub shared: Vec<ColumnRef>,
    pub per_row: Vec<ColumnRef>,
    pub max_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewOp {
    /// Only input, query and all make sense on a view.
    Standard(OperationKind),
    /// Named `input` on the view page.
    BatchInput(BatchSpec),
    Custom {
        name: String,
        handler: String,
    },
}

impl ViewOp {
    pub fn name(&self) -> &str {
        match self {
            ViewOp::Standard(k) => k.name(),
            ViewOp::BatchInput(_) => "input",
            ViewOp::Custom { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDef {
    pub name: String,
    pub columns: Vec<ColumnRef>,
    pub join_keys: Vec<(ColumnRef, ColumnRef)>,
    pub ops: Vec<ViewOp>,
}

impl ViewDef {
    pub fn op(&self, name: &str) -> Option<&ViewOp> {
        self.ops.iter().find(|o| o.name() == name)
    }

    /// Distinct (db, table) pairs in order of first mention.
    pub fn tables(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mentioned = self.columns.iter().chain(self.ops.iter().flat_map(|o| match o {
            ViewOp::BatchInput(b) => b.shared.iter().chain(b.per_row.iter()).collect::<Vec<_>>(),
            _ => Vec::new(),
        }));
        for c in mentioned {
            let key = (c.db.clone(), c.table.clone());
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViewError {
    #[error("view column {0} does not exist")]
    UnknownColumnInView(ColumnRef),
    #[error("a view named `{0}` is already registered")]
    DuplicateViewName(String),
    #[error("handler `{0}` is not registered")]
    UnregisteredHandler(String),
    #[error("join key {0} is not on one of the view's tables")]
    InvalidJoinKey(ColumnRef),
    #[error("view tables must share one database")]
    MixedDatabases,
    #[error("`{0}` is not offered on views")]
    UnsupportedStandardOp(OperationKind),
    #[error("operation `{0}` appears twice")]
    DuplicateViewOp(String),
    #[error("no view named `{0}`")]
    NoSuchView(String),
    #[error("view has no operation `{0}`")]
    NoSuchViewOp(String),
    #[error("the batch has no rows")]
    EmptyBatch,
    #[error("the batch has {got} rows, at most {max} allowed")]
    TooManyRows { got: usize, max: usize },
    #[error("row {index}: {cause}")]
    RowInvalid { index: usize, cause: String },
    #[error("handler failed: {message}")]
    HandlerFailure { message: String },
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

impl From<SqlGenError> for ViewError {
    fn from(e: SqlGenError) -> Self {
        ViewError::Op(OpError::Sql(e))
    }
}

/// Registered views, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ViewRegistry {
    views: Vec<Arc<ViewDef>>,
}

fn table_meta(
    cat: &dyn CatalogAccess,
    cache: &mut BTreeMap<(String, String), Option<TableMeta>>,
    db: &str,
    table: &str,
) -> Result<Option<TableMeta>, ViewError> {
    let key = (db.to_owned(), table.to_owned());
    if let Some(m) = cache.get(&key) {
        return Ok(m.clone());
    }
    let meta = match cat.describe(db, table) {
        Ok(m) => Some(m),
        Err(CatalogError::NoSuchTable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    cache.insert(key, meta.clone());
    Ok(meta)
}

/// Checks every column reference against the catalog.
pub fn validate_view(def: &ViewDef, cat: &dyn CatalogAccess, hooks: &HookRegistry) -> Result<(), ViewError> {
    let mut cache = BTreeMap::new();
    let mut refs: Vec<&ColumnRef> = def.columns.iter().collect();
    for op in &def.ops {
        if let ViewOp::BatchInput(b) = op {
            refs.extend(b.shared.iter().chain(b.per_row.iter()));
        }
    }
    for r in refs {
        let exists = table_meta(cat, &mut cache, &r.db, &r.table)?.is_some_and(|m| m.column(&r.column).is_some());
        if !exists {
            return Err(ViewError::UnknownColumnInView(r.clone()));
        }
    }
    let tables = def.tables();
    if tables.iter().any(|(db, _)| *db != tables[0].0) {
        return Err(ViewError::MixedDatabases);
    }
    for (a, b) in &def.join_keys {
        for side in [a, b] {
            if !def.columns.iter().any(|c| c.db == side.db && c.table == side.table) {
                return Err(ViewError::InvalidJoinKey(side.clone()));
            }
            let exists =
                table_meta(cat, &mut cache, &side.db, &side.table)?.is_some_and(|m| m.column(&side.column).is_some());
            if !exists {
                return Err(ViewError::UnknownColumnInView(side.clone()));
            }
        }
    }
    let mut seen = Vec::new();
    for op in &def.ops {
        if seen.contains(&op.name()) {
            return Err(ViewError::DuplicateViewOp(op.name().to_owned()));
        }
        seen.push(op.name());
        match op {
            ViewOp::Standard(k @ (OperationKind::Update | OperationKind::Delete)) => {
                return Err(ViewError::UnsupportedStandardOp(*k));
            }
            ViewOp::Custom { handler, .. } if hooks.page_handler(handler).is_none() => {
                return Err(ViewError::UnregisteredHandler(handler.clone()));
            }
            _ => {}
        }
    }
    Ok(())
}

impl ViewRegistry {
    pub fn new() -> Self {
        ViewRegistry::default()
    }

    pub fn register(&mut self, def: ViewDef, cat: &dyn CatalogAccess, hooks: &HookRegistry) -> Result<(), ViewError> {
        if self.get(&def.name).is_some() {
            return Err(ViewError::DuplicateViewName(def.name));
        }
        validate_view(&def, cat, hooks)?;
        self.views.push(Arc::new(def));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<ViewDef>> {
        self.views.iter().find(|v| v.name == name).cloned()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<ViewDef>> {
        self.views.iter()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// What a custom page handler receives.
pub struct HandlerRequest<'a> {
    pub session: &'a Session,
    pub view: &'a ViewDef,
    pub form: &'a Form,
    pub catalog: &'a dyn CatalogAccess,
}

fn row_form(cols: &[ColumnRef], values: &Form, prefix: &str) -> BTreeMap<(String, String), Form> {
    let mut by_table: BTreeMap<(String, String), Form> = BTreeMap::new();
    for c in cols {
        if let Some(v) = values.get(&format!("{prefix}{}", c.column)) {
            by_table.entry((c.db.clone(), c.table.clone())).or_default().insert(c.column.clone(), v.clone());
        }
    }
    by_table
}

/// Splits a submitted batch form into shared values and non-blank rows.
/// Fields are `shared.<column>` and `row<i>.<column>`, rows numbered from 1.
pub fn decode_batch_form(spec: &BatchSpec, form: &Form) -> (Form, Vec<Form>) {
    let shared: Form = spec
        .shared
        .iter()
        .filter_map(|c| form.get(&format!("shared.{}", c.column)).map(|v| (c.column.clone(), v.clone())))
        .collect();
    let rows = (1..=spec.max_rows)
        .map(|i| {
            spec.per_row
                .iter()
                .filter_map(|c| form.get(&format!("row{i}.{}", c.column)).map(|v| (c.column.clone(), v.clone())))
                .collect::<Form>()
        })
        .filter(|r| r.values().any(|v| !v.trim().is_empty()))
        .collect();
    (shared, rows)
}

/// Inserts every row, each combined with the shared values, in a single
/// transaction. Returns the number of rows inserted; on any failure nothing
/// persists.
pub fn batch_input(
    env: &OpEnv<'_>,
    cat: &dyn CatalogAccess,
    spec: &BatchSpec,
    shared: &Form,
    rows: &[Form],
    diags: &mut Vec<String>,
) -> Result<usize, ViewError> {
    if rows.is_empty() {
        return Err(ViewError::EmptyBatch);
    }
    if rows.len() > spec.max_rows {
        return Err(ViewError::TooManyRows { got: rows.len(), max: spec.max_rows });
    }
    let shared_by_table = row_form(&spec.shared, shared, "");
    let mut tables: Vec<(String, String)> = Vec::new();
    for c in spec.shared.iter().chain(spec.per_row.iter()) {
        let key = (c.db.clone(), c.table.clone());
        if !tables.contains(&key) {
            tables.push(key);
        }
    }
    let Some(db) = tables.first().map(|(db, _)| db.clone()) else {
        return Err(ViewError::EmptyBatch);
    };
    let conn = cat.connect(&db)?;
    let mut metas = Vec::new();
    for (_, table) in &tables {
        let meta = conn.describe_table(table)?;
        ops::ensure_available(&meta, env.hooks, OperationKind::Input, diags)?;
        metas.push(meta);
    }

    let statements: Vec<(usize, SqlStatement)> = conn.transaction(|c: &Connection| {
        let mut done = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let index = i + 1;
            let invalid = |e: &dyn std::fmt::Display| ViewError::RowInvalid { index, cause: e.to_string() };
            let per_row = row_form(&spec.per_row, row, "");
            for (t, meta) in tables.iter().zip(&metas) {
                let mut form = shared_by_table.get(t).cloned().unwrap_or_default();
                form.extend(per_row.get(t).cloned().unwrap_or_default());
                let assigns = decode_assigns(meta, &form, &Default::default()).map_err(|e| invalid(&e))?;
                let stmt = env.gen.insert(meta, &assigns).map_err(|e| invalid(&e))?;
                c.execute(&stmt).map_err(|e| invalid(&e))?;
                done.push((metas.iter().position(|m| m.name == meta.name).expect("own table"), stmt));
            }
        }
        Ok::<_, ViewError>(done)
    })?;

    for (m, stmt) in &statements {
        if let Some(log) = env.audit {
            let rec = ops::AuditRecord {
                user: env.user.to_owned(),
                at: env.now,
                db: db.clone(),
                table: metas[*m].name.clone(),
                op: OperationKind::Input,
                summary: stmt.summary(AUDIT_SUMMARY_CAP),
            };
            log.record_or_diagnose(&rec, diags);
        }
    }
    Ok(rows.len())
}

/// Row results of a view's query or all.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRows {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub truncated: bool,
}

fn view_label(c: &ColumnRef) -> String {
    format!("{}.{}", c.table, c.column)
}

/// Joins the view's tables on its join keys and selects its columns.
/// Filter fields are `f.<table>.<column>` with relations in `r.<table>.<column>`.
pub fn view_select(
    env: &OpEnv<'_>,
    cat: &dyn CatalogAccess,
    view: &ViewDef,
    form: &Form,
) -> Result<ViewRows, ViewError> {
    let tables = view.tables();
    let Some((db, _)) = tables.first() else {
        return Ok(ViewRows { columns: vec![], rows: vec![], truncated: false });
    };
    let conn = cat.connect(db)?;
    let alias = |table: &str| format!("t{}", tables.iter().position(|(_, t)| t == table).unwrap_or(0));
    let qi = |s: &str| quote_identifier(s).expect("validated identifiers");
    let mut metas = BTreeMap::new();
    for (_, t) in &tables {
        metas.insert(t.clone(), conn.describe_table(t)?);
    }
    let col_meta = |c: &ColumnRef| {
        metas[&c.table].column(&c.column).cloned().ok_or_else(|| ViewError::UnknownColumnInView(c.clone()))
    };

    let select: Vec<String> = view.columns.iter().map(|c| format!("{}.{}", alias(&c.table), qi(&c.column))).collect();
    let from: Vec<String> = tables.iter().map(|(_, t)| format!("{} AS {}", qi(t), alias(t))).collect();
    let mut conds: Vec<String> = view
        .join_keys
        .iter()
        .map(|(a, b)| format!("{}.{} = {}.{}", alias(&a.table), qi(&a.column), alias(&b.table), qi(&b.column)))
        .collect();
    let mut params = Vec::new();
    for c in &view.columns {
        let label = view_label(c);
        let Some(raw) = form.get(&format!("f.{label}")).filter(|v| !v.is_empty()) else { continue };
        let relation = match form.get(&format!("r.{label}")).map(String::as_str) {
            None | Some("") => Relation::Eq,
            Some(r) => Relation::parse(r)
                .ok_or_else(|| OpError::UnknownRelation { column: label.clone(), relation: r.to_owned() })?,
        };
        let value =
            if relation == Relation::Like { Value::Text(raw.clone()) } else { convert_value(&col_meta(c)?, raw)? };
        params.push(value);
        let op = match relation {
            Relation::Eq => "=",
            Relation::Ne => "<>",
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Like => "LIKE",
        };
        conds.push(format!("{}.{} {op} ?{}", alias(&c.table), qi(&c.column), params.len()));
    }
    let limit = env.gen.default_limit;
    params.push(Value::Integer(limit.saturating_add(1).min(i64::MAX as u64) as i64));
    let where_clause = if conds.is_empty() { String::new() } else { format!(" WHERE {}", conds.join(" AND ")) };
    let stmt = SqlStatement {
        text: format!("SELECT {} FROM {}{where_clause} LIMIT ?{}", select.join(", "), from.join(", "), params.len()),
        params,
    };
    let mut rows = conn.query(&stmt)?;
    let truncated = rows.rows.len() as u64 > limit;
    rows.rows.truncate(limit as usize);
    Ok(ViewRows { columns: view.columns.iter().map(view_label).collect(), rows: rows.rows, truncated })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewOutcome {
    Rows(ViewRows),
    Inserted(usize),
    Page(Page),
}

/// Runs a view operation. Standard input is a one-row batch over the view's
/// columns.
pub fn dispatch_view_op(
    env: &OpEnv<'_>,
    cat: &dyn CatalogAccess,
    session: &Session,
    view: &ViewDef,
    op_name: &str,
    form: &Form,
    diags: &mut Vec<String>,
) -> Result<ViewOutcome, ViewError> {
    let op = view.op(op_name).ok_or_else(|| ViewError::NoSuchViewOp(op_name.to_owned()))?;
    match op {
        ViewOp::Standard(OperationKind::Query) => Ok(ViewOutcome::Rows(view_select(env, cat, view, form)?)),
        ViewOp::Standard(OperationKind::All) => Ok(ViewOutcome::Rows(view_select(env, cat, view, &Form::new())?)),
        ViewOp::Standard(OperationKind::Input) => {
            let spec = BatchSpec { shared: vec![], per_row: view.columns.clone(), max_rows: 1 };
            let row: Form = view
                .columns
                .iter()
                .filter_map(|c| form.get(&c.column).map(|v| (c.column.clone(), v.clone())))
                .collect();
            Ok(ViewOutcome::Inserted(batch_input(env, cat, &spec, &Form::new(), &[row], diags)?))
        }
        ViewOp::Standard(k) => Err(ViewError::UnsupportedStandardOp(*k)),
        ViewOp::BatchInput(spec) => {
            let (shared, rows) = decode_batch_form(spec, form);
            Ok(ViewOutcome::Inserted(batch_input(env, cat, spec, &shared, &rows, diags)?))
        }
        ViewOp::Custom { handler, .. } => {
            let f = env.hooks.page_handler(handler).ok_or_else(|| ViewError::UnregisteredHandler(handler.clone()))?;
            let req = HandlerRequest { session, view, form, catalog: cat };
            run_handler(f.as_ref(), &req).map(ViewOutcome::Page).map_err(|message| {
                diags.push(format!("handler_failed({}): {message}", handler));
                ViewError::HandlerFailure { message }
            })
        }
    }
}

fn run_handler(f: &PageHandlerFn, req: &HandlerRequest<'_>) -> Result<Page, String> {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(req))) {
        Ok(Ok(page)) => Ok(page),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("handler panicked".into()),
    }
}

/// Handler shipped for artifact views: looks up the row whose key column
/// (form field `key`) equals the submitted value and links the file stored in
/// the view's file-link column, embedding images inline.
///
/// The view's first column is the key, its last the file-link column.
pub fn artifact_display(files_prefix: &'static str) -> impl Fn(&HandlerRequest<'_>) -> Result<Page, HookError> {
    move |req| {
        let view = req.view;
        let (Some(key), Some(link)) = (view.columns.first(), view.columns.last()) else {
            return Err(HookError::failed("artifact views need a key and a file column"));
        };
        let wanted = req.form.get("key").cloned().unwrap_or_default();
        let mut page = Page::new(format!("{}: {}", view.name, wanted));
        let conn = req.catalog.connect(&key.db).map_err(HookError::failed)?;
        let meta = conn.describe_table(&key.table).map_err(HookError::failed)?;
        let key_col = meta.column(&key.column).ok_or_else(|| HookError::failed(format!("no column {key}")))?;
        let value = convert_value(key_col, &wanted).map_err(HookError::failed)?;
        let stmt = SqlStatement {
            text: format!(
                "SELECT {} FROM {} WHERE {} = ?1",
                quote_identifier(&link.column).map_err(HookError::failed)?,
                quote_identifier(&key.table).map_err(HookError::failed)?,
                quote_identifier(&key.column).map_err(HookError::failed)?
            ),
            params: vec![value],
        };
        let rows = conn.query(&stmt).map_err(HookError::failed)?;
        page.push(el("h1").text(format!("{} {}", view.name, wanted)));
        let form = el("form").attr("method", "get").child(
            el("label")
                .text("key ")
                .child(el("input").attr("type", "text").attr("name", "key").attr("value", wanted.clone())),
        );
        page.push(form.child(el("button").attr("type", "submit").text("display")));
        match rows.rows.first().and_then(|r| r.first()) {
            Some(Value::Text(path)) if !path.is_empty() => {
                let href = format!("{files_prefix}/{}", path.trim_start_matches('/'));
                let lower = path.to_ascii_lowercase();
                let artifact: DocNode = if [".png", ".jpg", ".jpeg", ".gif", ".svg"].iter().any(|x| lower.ends_with(x))
                {
                    el("img").attr("src", href.clone()).attr("alt", path.clone()).into()
                } else {
                    el("a").attr("href", href.clone()).text(path.clone()).into()
                };
                page.push(el("div").attr("class", "artifact").attr("data-artifact", href).child(artifact));
            }
            _ => page.push(el("p").text(format!("No stored artifact for {} = {wanted}.", key.column))),
        }
        Ok(page)
    }
}
