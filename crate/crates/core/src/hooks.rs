//! Site hooks: functions matched by (db, table, column) pattern that alter one
//! interaction point without touching core code.
//!
//! When several entries of a kind match, the most specific wins. Specificity
//! compares the column component first (exact > suffix > any), then the
//! table (exact > any), then the database (exact > any). Equal specificity
//! falls back to registration order.
//!
//! Hooks that fail (by returning an error or panicking) never abort the page
//! being generated: the caller gets the no-hook behaviour and one diagnostic.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use thiserror::Error;

use crate::bridge::DerivedFillSpec;
use crate::clock::Timestamp;
use crate::doctree::Page;
use crate::ops::OperationKind;
use crate::views::HandlerRequest;

pub mod site;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NamePattern {
    Any,
    Exact(String),
}

impl NamePattern {
    fn matches(&self, s: &str) -> bool {
        match self {
            NamePattern::Any => true,
            NamePattern::Exact(e) => e == s,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            NamePattern::Any => 0,
            NamePattern::Exact(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnPattern {
    Any,
    Exact(String),
    Suffix(String),
}

impl ColumnPattern {
    fn matches(&self, s: &str) -> bool {
        match self {
            ColumnPattern::Any => true,
            ColumnPattern::Exact(e) => e == s,
            ColumnPattern::Suffix(suffix) => s.ends_with(suffix.as_str()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            ColumnPattern::Any => 0,
            ColumnPattern::Suffix(_) => 1,
            ColumnPattern::Exact(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HookMatcher {
    pub db: NamePattern,
    pub table: NamePattern,
    pub column: ColumnPattern,
}

impl Default for HookMatcher {
    fn default() -> Self {
        HookMatcher { db: NamePattern::Any, table: NamePattern::Any, column: ColumnPattern::Any }
    }
}

impl HookMatcher {
    pub fn any() -> Self {
        HookMatcher::default()
    }

    pub fn db(mut self, db: impl Into<String>) -> Self {
        self.db = NamePattern::Exact(db.into());
        self
    }

    pub fn table(mut self, table: impl Into<String>) -> Self {
        self.table = NamePattern::Exact(table.into());
        self
    }

    pub fn column(mut self, column: impl Into<String>) -> Self {
        self.column = ColumnPattern::Exact(column.into());
        self
    }

    pub fn column_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.column = ColumnPattern::Suffix(suffix.into());
        self
    }

    /// Shorthand for an exact (db, table, column) triple.
    pub fn exact(db: &str, table: &str, column: &str) -> Self {
        HookMatcher::any().db(db).table(table).column(column)
    }

    pub fn matches(&self, db: &str, table: &str, column: &str) -> bool {
        self.db.matches(db) && self.table.matches(table) && self.column.matches(column)
    }

    fn specificity(&self) -> (u8, u8, u8) {
        (self.column.rank(), self.table.rank(), self.db.rank())
    }

    fn is_anchored(&self) -> bool {
        self.specificity() != (0, 0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HookKind {
    InputDefaultValue,
    InputTextareaSize,
    OutputLink,
    OpOverride,
    PageHandler,
    DerivedFill,
}

impl fmt::Display for HookKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HookKind::InputDefaultValue => "input_default_value",
            HookKind::InputTextareaSize => "input_textarea_size",
            HookKind::OutputLink => "output_link",
            HookKind::OpOverride => "op_override",
            HookKind::PageHandler => "page_handler",
            HookKind::DerivedFill => "derived_fill",
        })
    }
}

/// The (db, table, column) a hook is invoked for. `column` is empty for
/// table-level hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site<'a> {
    pub db: &'a str,
    pub table: &'a str,
    pub column: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HookError {
    #[error("a {got} callable cannot be registered as {expected}")]
    SignatureMismatch { expected: HookKind, got: HookKind },
    #[error("{0} hooks need at least one exact or suffix component")]
    UnanchoredMatcher(HookKind),
    #[error("{0}")]
    Failed(String),
}

impl HookError {
    pub fn failed(msg: impl fmt::Display) -> Self {
        HookError::Failed(msg.to_string())
    }
}

pub type HookResult<T> = Result<T, HookError>;

type DefaultValueFn = dyn Fn(Site<'_>, Timestamp) -> HookResult<Option<String>> + Send + Sync;
type TextareaFn = dyn Fn(Site<'_>) -> HookResult<Option<(u32, u32)>> + Send + Sync;
type OutputLinkFn = dyn Fn(Site<'_>, &str) -> HookResult<Option<String>> + Send + Sync;
type OpOverrideFn = dyn Fn(Site<'_>, &[OperationKind]) -> HookResult<Vec<OperationKind>> + Send + Sync;
pub type PageHandlerFn = dyn Fn(&HandlerRequest<'_>) -> HookResult<Page> + Send + Sync;

/// A hook callable, tagged with the shape it was written for.
#[derive(Clone)]
pub enum HookFn {
    DefaultValue(Arc<DefaultValueFn>),
    TextareaSize(Arc<TextareaFn>),
    OutputLink(Arc<OutputLinkFn>),
    OpOverride(Arc<OpOverrideFn>),
    PageHandler { name: String, f: Arc<PageHandlerFn> },
    DerivedFill(Arc<DerivedFillSpec>),
}

impl fmt::Debug for HookFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HookFn::PageHandler { name, .. } => write!(f, "HookFn::PageHandler({name})"),
            other => write!(f, "HookFn::{}", other.kind()),
        }
    }
}

impl HookFn {
    pub fn default_value(
        f: impl Fn(Site<'_>, Timestamp) -> HookResult<Option<String>> + Send + Sync + 'static,
    ) -> Self {
        HookFn::DefaultValue(Arc::new(f))
    }

    pub fn textarea_size(f: impl Fn(Site<'_>) -> HookResult<Option<(u32, u32)>> + Send + Sync + 'static) -> Self {
        HookFn::TextareaSize(Arc::new(f))
    }

    pub fn output_link(f: impl Fn(Site<'_>, &str) -> HookResult<Option<String>> + Send + Sync + 'static) -> Self {
        HookFn::OutputLink(Arc::new(f))
    }

    pub fn op_override(
        f: impl Fn(Site<'_>, &[OperationKind]) -> HookResult<Vec<OperationKind>> + Send + Sync + 'static,
    ) -> Self {
        HookFn::OpOverride(Arc::new(f))
    }

    pub fn page_handler(
        name: impl Into<String>,
        f: impl Fn(&HandlerRequest<'_>) -> HookResult<Page> + Send + Sync + 'static,
    ) -> Self {
        HookFn::PageHandler { name: name.into(), f: Arc::new(f) }
    }

    pub fn derived_fill(spec: DerivedFillSpec) -> Self {
        HookFn::DerivedFill(Arc::new(spec))
    }

    pub fn kind(&self) -> HookKind {
        match self {
            HookFn::DefaultValue(_) => HookKind::InputDefaultValue,
            HookFn::TextareaSize(_) => HookKind::InputTextareaSize,
            HookFn::OutputLink(_) => HookKind::OutputLink,
            HookFn::OpOverride(_) => HookKind::OpOverride,
            HookFn::PageHandler { .. } => HookKind::PageHandler,
            HookFn::DerivedFill(_) => HookKind::DerivedFill,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    kind: HookKind,
    matcher: HookMatcher,
    f: HookFn,
}

/// Ordered hook entries. Built at startup, read-only afterwards.
#[derive(Debug, Clone, Default)]
pub struct HookRegistry {
    entries: Vec<Entry>,
    upload_columns: Vec<HookMatcher>,
}

/// Runs a hook body, turning errors and panics into a diagnostic.
fn guarded<T>(
    what: impl FnOnce() -> String,
    diags: &mut Vec<String>,
    body: impl FnOnce() -> HookResult<T>,
) -> Option<T> {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(v)) => Some(v),
        Ok(Err(e)) => {
            diags.push(format!("hook_failed({}): {e}", what()));
            None
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            diags.push(format!("hook_failed({}): {msg}", what()));
            None
        }
    }
}

impl HookRegistry {
    pub fn new() -> Self {
        HookRegistry::default()
    }

    pub fn register(&mut self, kind: HookKind, matcher: HookMatcher, f: HookFn) -> Result<(), HookError> {
        if f.kind() != kind {
            return Err(HookError::SignatureMismatch { expected: kind, got: f.kind() });
        }
        if kind != HookKind::PageHandler && !matcher.is_anchored() {
            return Err(HookError::UnanchoredMatcher(kind));
        }
        self.entries.push(Entry { kind, matcher, f });
        Ok(())
    }

    /// Registers a named page handler for custom view operations.
    pub fn register_handler(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&HandlerRequest<'_>) -> HookResult<Page> + Send + Sync + 'static,
    ) -> Result<(), HookError> {
        self.register(HookKind::PageHandler, HookMatcher::any(), HookFn::page_handler(name, f))
    }

    /// Marks matching columns as file-link columns filled by uploads.
    pub fn declare_upload_column(&mut self, matcher: HookMatcher) {
        self.upload_columns.push(matcher);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, kind: HookKind, db: &str, table: &str, column: &str) -> Option<&HookFn> {
        let mut best: Option<(&Entry, (u8, u8, u8))> = None;
        for e in self.entries.iter().filter(|e| e.kind == kind && e.matcher.matches(db, table, column)) {
            let s = e.matcher.specificity();
            // strict comparison keeps the earliest entry on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e, s));
            }
        }
        best.map(|(e, _)| &e.f)
    }

    pub fn default_value(
        &self,
        now: Timestamp,
        db: &str,
        table: &str,
        column: &str,
        diags: &mut Vec<String>,
    ) -> Option<String> {
        let Some(HookFn::DefaultValue(f)) = self.resolve(HookKind::InputDefaultValue, db, table, column) else {
            return None;
        };
        let site = Site { db, table, column };
        guarded(|| format!("input_default_value {db}.{table}.{column}"), diags, || f(site, now)).flatten()
    }

    pub fn textarea_dims(&self, db: &str, table: &str, column: &str, diags: &mut Vec<String>) -> Option<(u32, u32)> {
        let Some(HookFn::TextareaSize(f)) = self.resolve(HookKind::InputTextareaSize, db, table, column) else {
            return None;
        };
        let site = Site { db, table, column };
        guarded(|| format!("input_textarea_size {db}.{table}.{column}"), diags, || f(site)).flatten()
    }

    pub fn linkify(&self, db: &str, table: &str, column: &str, value: &str, diags: &mut Vec<String>) -> Option<String> {
        let Some(HookFn::OutputLink(f)) = self.resolve(HookKind::OutputLink, db, table, column) else {
            return None;
        };
        let site = Site { db, table, column };
        guarded(|| format!("output_link {db}.{table}.{column}"), diags, || f(site, value)).flatten()
    }

    /// The op set after the table's op_override hook, if any.
    pub fn override_ops(
        &self,
        db: &str,
        table: &str,
        ops: &[OperationKind],
        diags: &mut Vec<String>,
    ) -> Option<Vec<OperationKind>> {
        let Some(HookFn::OpOverride(f)) = self.resolve(HookKind::OpOverride, db, table, "") else {
            return None;
        };
        let site = Site { db, table, column: "" };
        guarded(|| format!("op_override {db}.{table}"), diags, || f(site, ops))
    }

    pub fn page_handler(&self, name: &str) -> Option<Arc<PageHandlerFn>> {
        self.entries.iter().find_map(|e| match &e.f {
            HookFn::PageHandler { name: n, f } if n == name => Some(f.clone()),
            _ => None,
        })
    }

    pub fn derived_fill(&self, db: &str, table: &str, column: &str) -> Option<Arc<DerivedFillSpec>> {
        match self.resolve(HookKind::DerivedFill, db, table, column) {
            Some(HookFn::DerivedFill(spec)) => Some(spec.clone()),
            _ => None,
        }
    }

    pub fn is_upload_column(&self, db: &str, table: &str, column: &str) -> bool {
        self.upload_columns.iter().any(|m| m.matches(db, table, column))
            || self.derived_fill(db, table, column).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn constant(v: &'static str) -> HookFn {
        HookFn::default_value(move |_, _| Ok(Some(v.to_owned())))
    }

    fn noon(y: i32, m: u32, d: u32) -> Timestamp {
        chrono::Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    #[test]
    fn exact_column_beats_suffix() {
        let mut reg = HookRegistry::new();
        reg.register(HookKind::InputDefaultValue, HookMatcher::any().column_suffix("Date"), constant("suffix"))
            .unwrap();
        reg.register(HookKind::InputDefaultValue, HookMatcher::any().column("StartDate"), constant("exact")).unwrap();
        let mut d = vec![];
        assert_eq!(reg.default_value(noon(2007, 8, 24), "x", "t", "StartDate", &mut d).as_deref(), Some("exact"));
        assert_eq!(reg.default_value(noon(2007, 8, 24), "x", "t", "EndDate", &mut d).as_deref(), Some("suffix"));
        assert!(d.is_empty());
    }

    #[test]
    fn column_outranks_table_and_table_outranks_db() {
        let mut reg = HookRegistry::new();
        reg.register(HookKind::InputDefaultValue, HookMatcher::any().db("d").table("t"), constant("table")).unwrap();
        reg.register(HookKind::InputDefaultValue, HookMatcher::any().column_suffix("c"), constant("column")).unwrap();
        reg.register(HookKind::InputDefaultValue, HookMatcher::any().db("d"), constant("db")).unwrap();
        let mut d = vec![];
        assert_eq!(reg.default_value(noon(2000, 1, 1), "d", "t", "c", &mut d).as_deref(), Some("column"));
        assert_eq!(reg.default_value(noon(2000, 1, 1), "d", "t", "x", &mut d).as_deref(), Some("table"));
        assert_eq!(reg.default_value(noon(2000, 1, 1), "d", "u", "x", &mut d).as_deref(), Some("db"));
    }

    #[test]
    fn ties_go_to_first_registered() {
        let mut reg = HookRegistry::new();
        let m = HookMatcher::exact("d", "t", "c");
        reg.register(HookKind::InputDefaultValue, m.clone(), constant("first")).unwrap();
        reg.register(HookKind::InputDefaultValue, m, constant("second")).unwrap();
        let mut d = vec![];
        assert_eq!(reg.default_value(noon(2000, 1, 1), "d", "t", "c", &mut d).as_deref(), Some("first"));
        assert!(reg.resolve(HookKind::InputDefaultValue, "d", "t", "other").is_none());
    }

    #[test]
    fn signature_mismatch_and_unanchored() {
        let mut reg = HookRegistry::new();
        let err = reg
            .register(HookKind::InputDefaultValue, HookMatcher::any().column("c"), HookFn::output_link(|_, _| Ok(None)))
            .unwrap_err();
        assert_eq!(
            err,
            HookError::SignatureMismatch { expected: HookKind::InputDefaultValue, got: HookKind::OutputLink }
        );
        assert_eq!(
            reg.register(HookKind::OutputLink, HookMatcher::any(), HookFn::output_link(|_, _| Ok(None))),
            Err(HookError::UnanchoredMatcher(HookKind::OutputLink))
        );
        assert!(reg.is_empty());
    }

    #[test]
    fn failing_hooks_degrade_with_one_diagnostic() {
        let mut reg = HookRegistry::new();
        reg.register(
            HookKind::InputDefaultValue,
            HookMatcher::any().column("Boom"),
            HookFn::default_value(|_, _| Err(HookError::failed("no clock"))),
        )
        .unwrap();
        reg.register(
            HookKind::OutputLink,
            HookMatcher::any().column("Boom"),
            HookFn::output_link(|_, _| panic!("bad link")),
        )
        .unwrap();
        let mut d = vec![];
        assert_eq!(reg.default_value(noon(2000, 1, 1), "d", "t", "Boom", &mut d), None);
        assert_eq!(d.len(), 1);
        assert_eq!(reg.linkify("d", "t", "Boom", "v", &mut d), None);
        assert_eq!(d.len(), 2);
        assert!(d[1].contains("bad link"));
    }

    #[test]
    fn textarea_and_links() {
        let mut reg = HookRegistry::new();
        reg.register(
            HookKind::InputTextareaSize,
            HookMatcher::any().column("CompNote"),
            HookFn::textarea_size(|_| Ok(Some((10, 80)))),
        )
        .unwrap();
        reg.register(
            HookKind::OutputLink,
            HookMatcher::any().column("EduID"),
            HookFn::output_link(|_, v| Ok((!v.is_empty()).then(|| format!("https://eduliss.example/ligand/{v}")))),
        )
        .unwrap();
        let mut d = vec![];
        assert_eq!(reg.textarea_dims("s", "Compound", "CompNote", &mut d), Some((10, 80)));
        assert_eq!(reg.textarea_dims("s", "Compound", "CompName", &mut d), None);
        assert!(reg.linkify("s", "Compound", "EduID", "108525", &mut d).unwrap().contains("108525"));
        assert_eq!(reg.linkify("s", "Compound", "EduID", "", &mut d), None);
        assert_eq!(reg.linkify("s", "Compound", "CompName", "x", &mut d), None);
    }
}
