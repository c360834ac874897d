//! Page assembly: the shared chrome and the catalog-driven page bodies.

use hdb_core::catalog::{ColumnRef, TableMeta};
use hdb_core::doctree::{el, text, DocNode, Element, Page};
use hdb_core::hooks::HookRegistry;
use hdb_core::ops::OperationKind;
use hdb_core::value::Value;
use hdb_core::views::{BatchSpec, ViewDef, ViewOp, ViewRows};

/// Percent-encodes one URL path segment.
pub fn seg(s: &str) -> String {
    percent_encoding::utf8_percent_encode(s, SEGMENT).to_string()
}

const SEGMENT: &percent_encoding::AsciiSet =
    &percent_encoding::NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

pub fn db_url(db: &str) -> String {
    format!("/db/{}", seg(db))
}

pub fn table_url(db: &str, table: &str) -> String {
    format!("/db/{}/table/{}", seg(db), seg(table))
}

pub fn op_url(db: &str, table: &str, kind: OperationKind) -> String {
    format!("{}/op/{}", table_url(db, table), kind.name())
}

pub fn view_url(view: &str) -> String {
    format!("/view/{}", seg(view))
}

pub fn view_op_url(view: &str, op: &str) -> String {
    format!("{}/op/{}", view_url(view), seg(op))
}

/// Wraps body content in the site chrome. `nav` is false only for the login
/// page; `diagnostics` lead the content in a highlighted block.
pub fn chrome(title: &str, heading: &str, nav: bool, diagnostics: &[String], content: Vec<DocNode>) -> Page {
    let mut page = Page::new(format!("{heading} - {title}"));
    page.head_extra.push(el("link").attr("rel", "stylesheet").attr("href", "/static/hdb.css").into());
    page.head_extra.push(el("script").attr("src", "/static/hdb.js").flag("defer", true).into());
    let mut header = el("div").attr("class", "header").child(el("span").attr("class", "site").text(title));
    if nav {
        header = header.child(
            el("ul").attr("class", "nav").children(
                [("/home", "Home"), ("/profile", "Profile"), ("/logout", "Log out")]
                    .into_iter()
                    .map(|(href, label)| el("li").child(el("a").attr("href", href).text(label))),
            ),
        );
    }
    page.push(header);
    if !diagnostics.is_empty() {
        page.push(
            el("div")
                .attr("class", "diagnostics")
                .attr("role", "alert")
                .child(el("ul").children(diagnostics.iter().map(|d| el("li").text(d.clone())))),
        );
    }
    page.push(el("main").child(el("h1").text(heading)).children(content));
    page
}

pub fn login_form(message: Option<&str>) -> Vec<DocNode> {
    let mut out = Vec::new();
    if let Some(m) = message {
        out.push(el("p").attr("class", "error").text(m).into());
    }
    let field = |label: &str, name: &str, ty: &str| {
        el("tr").child(el("th").child(el("label").attr("for", format!("login.{name}")).text(label))).child(
            el("td").child(
                el("input")
                    .attr("type", ty)
                    .attr("id", format!("login.{name}"))
                    .attr("name", name)
                    .flag("required", true),
            ),
        )
    };
    out.push(
        el("form")
            .attr("method", "post")
            .attr("action", "/login")
            .attr("class", "login")
            .child(el("table").attr("class", "form").child(
                el("tbody").child(field("User", "user", "text")).child(field("Password", "password", "password")),
            ))
            .child(el("button").attr("type", "submit").text("Log in"))
            .into(),
    );
    out
}

pub fn home(databases: &[String], views: &[&ViewDef]) -> Vec<DocNode> {
    let mut out: Vec<DocNode> = vec![
        el("h2").text("Databases").into(),
        el("ul")
            .attr("class", "databases")
            .children(databases.iter().map(|d| el("li").child(el("a").attr("href", db_url(d)).text(d.clone()))))
            .into(),
    ];
    if !views.is_empty() {
        out.push(el("h2").text("Views").into());
        out.push(
            el("ul")
                .attr("class", "views")
                .children(
                    views.iter().map(|v| el("li").child(el("a").attr("href", view_url(&v.name)).text(v.name.clone()))),
                )
                .into(),
        );
    }
    out
}

/// `[query] [all]` style links, one per available operation.
pub fn op_links(db: &str, table: &str, ops: &[OperationKind]) -> Vec<DocNode> {
    let mut out = Vec::new();
    for (i, k) in ops.iter().enumerate() {
        if i > 0 {
            out.push(text(" "));
        }
        out.push(text("["));
        out.push(el("a").attr("class", "op").attr("href", op_url(db, table, *k)).text(k.name()).into());
        out.push(text("]"));
    }
    out
}

pub fn database(db: &str, tables: &[(String, Vec<OperationKind>)]) -> Vec<DocNode> {
    let rows = tables.iter().map(|(t, ops)| {
        el("tr")
            .child(el("td").child(el("a").attr("class", "table").attr("href", table_url(db, t)).text(t.clone())))
            .child(el("td").attr("class", "ops").children(op_links(db, t, ops)))
    });
    vec![el("table").attr("class", "tables").child(el("tbody").children(rows)).into()]
}

pub const GRID_HEADINGS: [&str; 6] = ["Name", "Defn. Type", "Null", "Key", "Def", "Extra"];

pub fn table(meta: &TableMeta, rows: u64, ops: &[OperationKind]) -> Vec<DocNode> {
    let head = el("thead").child(el("tr").children(GRID_HEADINGS.iter().map(|h| el("th").text(*h))));
    let body = el("tbody").children(meta.columns.iter().map(|c| {
        let cells = [
            c.name.clone(),
            c.ty.short_label(),
            if c.nullable { "YES" } else { "NO" }.to_owned(),
            c.key.label().to_owned(),
            c.default.clone().unwrap_or_default(),
            if c.auto_increment { "autoinc" } else { "" }.to_owned(),
        ];
        el("tr").children(cells.into_iter().map(|v| el("td").text(v)))
    }));
    vec![
        el("p").attr("class", "count").text(format!("{}.{} has {rows} rows.", meta.db, meta.name)).into(),
        el("p").attr("class", "ops").children(op_links(&meta.db, &meta.name, ops)).into(),
        el("table").attr("class", "meta").child(head).child(body).into(),
    ]
}

pub fn truncation_notice(limit: u64) -> DocNode {
    el("p").attr("class", "notice").text(format!("Only the first {limit} rows are shown.")).into()
}

pub fn back_link(href: String, label: &str) -> DocNode {
    el("p").child(el("a").attr("href", href).text(label)).into()
}

pub fn message(m: impl Into<String>) -> DocNode {
    el("p").attr("class", "message").text(m).into()
}

pub fn error(m: impl Into<String>) -> DocNode {
    el("p").attr("class", "error").text(m).into()
}

fn view_label(c: &ColumnRef) -> String {
    format!("{}.{}", c.table, c.column)
}

fn text_input(name: String, label: String) -> Element {
    el("tr")
        .child(el("th").child(el("label").attr("for", name.clone()).text(label)))
        .child(el("td").child(el("input").attr("type", "text").attr("id", name.clone()).attr("name", name)))
}

pub fn view_home(view: &ViewDef) -> Vec<DocNode> {
    let links = view.ops.iter().enumerate().flat_map(|(i, op)| {
        let mut nodes = Vec::new();
        if i > 0 {
            nodes.push(text(" "));
        }
        nodes.push(text("["));
        nodes.push(el("a").attr("class", "op").attr("href", view_op_url(&view.name, op.name())).text(op.name()).into());
        nodes.push(text("]"));
        nodes
    });
    vec![
        el("p").attr("class", "ops").children(links.collect::<Vec<_>>()).into(),
        el("ul").attr("class", "columns").children(view.columns.iter().map(|c| el("li").text(c.to_string()))).into(),
    ]
}

pub fn view_filter_form(view: &ViewDef, action: &str) -> DocNode {
    let rows = view.columns.iter().map(|c| text_input(format!("f.{}.{}", c.table, c.column), view_label(c)));
    el("form")
        .attr("method", "post")
        .attr("action", action)
        .child(el("table").attr("class", "form").child(el("tbody").children(rows)))
        .child(el("button").attr("type", "submit").text("query"))
        .into()
}

pub fn view_input_form(view: &ViewDef, action: &str) -> DocNode {
    let rows = view.columns.iter().map(|c| text_input(c.column.clone(), view_label(c)));
    el("form")
        .attr("method", "post")
        .attr("action", action)
        .attr("data-hdb-enhance", "input-form")
        .child(el("table").attr("class", "form").child(el("tbody").children(rows)))
        .child(el("button").attr("type", "submit").text("input"))
        .into()
}

pub fn batch_form(spec: &BatchSpec, action: &str) -> DocNode {
    let shared = spec.shared.iter().map(|c| text_input(format!("shared.{}", c.column), view_label(c)));
    let head = el("thead")
        .child(el("tr").child(el("th").text("#")).children(spec.per_row.iter().map(|c| el("th").text(view_label(c)))));
    let rows = (1..=spec.max_rows).map(|i| {
        el("tr").child(el("td").text(i.to_string())).children(spec.per_row.iter().map(|c| {
            el("td").child(
                el("input")
                    .attr("type", "text")
                    .attr("name", format!("row{i}.{}", c.column))
                    .attr("aria-label", format!("row {i} {}", view_label(c))),
            )
        }))
    });
    el("form")
        .attr("method", "post")
        .attr("action", action)
        .attr("data-hdb-enhance", "input-form")
        .child(el("table").attr("class", "form shared").child(el("tbody").children(shared)))
        .child(el("table").attr("class", "batch").child(head).child(el("tbody").children(rows)))
        .child(el("button").attr("type", "submit").text("input"))
        .into()
}

/// View rows with output links resolved per underlying column.
pub fn view_rows(view: &ViewDef, hooks: &HookRegistry, rows: &ViewRows, diags: &mut Vec<String>) -> DocNode {
    let head = el("thead").child(el("tr").children(rows.columns.iter().map(|c| el("th").text(c.clone()))));
    let body = el("tbody").children(rows.rows.iter().map(|row| {
        el("tr").children(row.iter().enumerate().map(|(i, v)| {
            let shown = v.to_string();
            let link = view.columns.get(i).and_then(|c| hooks.linkify(&c.db, &c.table, &c.column, &shown, diags));
            match link {
                Some(url) => el("td").child(el("a").attr("href", url).text(shown)),
                None => el("td").text(shown),
            }
        }))
    }));
    el("table").attr("class", "result").attr("data-hdb-enhance", "result-table").child(head).child(body).into()
}

pub fn view_op_form(view: &ViewDef, op: &ViewOp, action: &str) -> Option<DocNode> {
    match op {
        ViewOp::Standard(OperationKind::Query) => Some(view_filter_form(view, action)),
        ViewOp::Standard(OperationKind::Input) => Some(view_input_form(view, action)),
        ViewOp::BatchInput(spec) => Some(batch_form(spec, action)),
        _ => None,
    }
}

pub fn not_found(what: &str) -> Vec<DocNode> {
    vec![error(format!("{what} was not found."))]
}

/// A one-line summary of the values in a row, for confirmation messages.
pub fn key_text(values: &[Value]) -> String {
    values.iter().map(Value::to_string).collect::<Vec<_>>().join(", ")
}
