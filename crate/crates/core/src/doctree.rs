//! Document trees and their HTML5 serialization.
//!
//! Pages are built as [`DocNode`] trees and only turned into text at the very
//! end by [`render`] / [`render_page`]. User data always enters a tree through
//! [`DocNode::Text`] or an attribute value, both of which are escaped on output.
//! [`DocNode::Raw`] is emitted verbatim and is reserved for pre-rendered
//! snippets whose provenance is known.

use thiserror::Error;

/// Elements that never have content and serialize without a closing tag.
pub const VOID_ELEMENTS: [&str; 13] =
    ["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocError {
    #[error("invalid tag name `{0}`")]
    InvalidTag(String),
    #[error("invalid attribute name `{name}` on <{tag}>")]
    InvalidAttributeName { tag: String, name: String },
    #[error("duplicate attribute `{name}` on <{tag}>")]
    DuplicateAttribute { tag: String, name: String },
    #[error("void element <{0}> has children")]
    VoidElementWithChildren(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocNode {
    Element(Element),
    Text(String),
    Raw(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<DocNode>,
}

/// Starts an element builder.
pub fn el(tag: impl Into<String>) -> Element {
    Element::new(tag)
}

pub fn text(s: impl Into<String>) -> DocNode {
    DocNode::Text(s.into())
}

impl Element {
    pub fn new(tag: impl Into<String>) -> Self {
        Element { tag: tag.into(), attrs: Vec::new(), children: Vec::new() }
    }

    pub fn attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.push((name.into(), value.into()));
        self
    }

    /// Adds `name` with an empty value when `on` holds (boolean attributes).
    pub fn flag(self, name: impl Into<String>, on: bool) -> Self {
        if on {
            self.attr(name, "")
        } else {
            self
        }
    }

    pub fn child(mut self, node: impl Into<DocNode>) -> Self {
        self.children.push(node.into());
        self
    }

    pub fn children<I>(mut self, nodes: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<DocNode>,
    {
        self.children.extend(nodes.into_iter().map(Into::into));
        self
    }

    pub fn text(self, s: impl Into<String>) -> Self {
        self.child(DocNode::Text(s.into()))
    }

    pub fn is_void(&self) -> bool {
        is_void_tag(&self.tag)
    }

    pub fn get_attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

impl Element {
    /// Depth-first search of this subtree, this element included.
    pub fn find_all<'a>(&'a self, pred: &dyn Fn(&Element) -> bool) -> Vec<&'a Element> {
        let mut found = Vec::new();
        walk_element(self, &mut |e| {
            if pred(e) {
                found.push(e)
            }
        });
        found
    }
}

fn walk_element<'a>(e: &'a Element, f: &mut dyn FnMut(&'a Element)) {
    f(e);
    for c in &e.children {
        c.walk(f);
    }
}

impl From<Element> for DocNode {
    fn from(e: Element) -> Self {
        DocNode::Element(e)
    }
}

impl From<&str> for DocNode {
    fn from(s: &str) -> Self {
        DocNode::Text(s.to_owned())
    }
}

impl From<String> for DocNode {
    fn from(s: String) -> Self {
        DocNode::Text(s)
    }
}

impl DocNode {
    /// Concatenated text of this subtree, Raw content excluded.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        self.collect_text(&mut out);
        out
    }

    fn collect_text(&self, out: &mut String) {
        match self {
            DocNode::Text(t) => out.push_str(t),
            DocNode::Raw(_) => {}
            DocNode::Element(e) => e.children.iter().for_each(|c| c.collect_text(out)),
        }
    }

    /// Depth-first search for elements satisfying `pred`.
    pub fn find_all<'a>(&'a self, pred: &dyn Fn(&Element) -> bool) -> Vec<&'a Element> {
        let mut found = Vec::new();
        self.walk(&mut |e| {
            if pred(e) {
                found.push(e)
            }
        });
        found
    }

    fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Element)) {
        if let DocNode::Element(e) = self {
            walk_element(e, f);
        }
    }

    pub fn contains_raw(&self) -> bool {
        match self {
            DocNode::Raw(_) => true,
            DocNode::Text(_) => false,
            DocNode::Element(e) => e.children.iter().any(DocNode::contains_raw),
        }
    }
}

pub fn is_void_tag(tag: &str) -> bool {
    VOID_ELEMENTS.iter().any(|v| v.eq_ignore_ascii_case(tag))
}

fn valid_tag(tag: &str) -> bool {
    let mut chars = tag.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '-')
}

fn valid_attr_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':'))
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

/// Attribute values are always serialized inside double quotes, so single
/// quotes pass through.
pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn render(node: &DocNode) -> Result<String, DocError> {
    let mut out = String::new();
    render_into(node, &mut out)?;
    Ok(out)
}

fn render_into(node: &DocNode, out: &mut String) -> Result<(), DocError> {
    match node {
        DocNode::Text(t) => out.push_str(&escape_text(t)),
        DocNode::Raw(r) => out.push_str(r),
        DocNode::Element(e) => render_element(e, out)?,
    }
    Ok(())
}

fn render_element(e: &Element, out: &mut String) -> Result<(), DocError> {
    if !valid_tag(&e.tag) {
        return Err(DocError::InvalidTag(e.tag.clone()));
    }
    for (i, (name, _)) in e.attrs.iter().enumerate() {
        if !valid_attr_name(name) {
            return Err(DocError::InvalidAttributeName { tag: e.tag.clone(), name: name.clone() });
        }
        if e.attrs[..i].iter().any(|(n, _)| n.eq_ignore_ascii_case(name)) {
            return Err(DocError::DuplicateAttribute { tag: e.tag.clone(), name: name.clone() });
        }
    }
    let void = e.is_void();
    if void && !e.children.is_empty() {
        return Err(DocError::VoidElementWithChildren(e.tag.clone()));
    }

    out.push('<');
    out.push_str(&e.tag);
    for (name, value) in &e.attrs {
        out.push(' ');
        out.push_str(name);
        out.push_str("=\"");
        out.push_str(&escape_attr(value));
        out.push('"');
    }
    out.push('>');
    if void {
        return Ok(());
    }
    // The parser drops one newline directly after these start tags.
    if ["pre", "textarea", "listing"].iter().any(|t| t.eq_ignore_ascii_case(&e.tag)) {
        if let Some(DocNode::Text(t)) = e.children.first() {
            if t.starts_with('\n') {
                out.push('\n');
            }
        }
    }
    for c in &e.children {
        render_into(c, out)?;
    }
    out.push_str("</");
    out.push_str(&e.tag);
    out.push('>');
    Ok(())
}

/// A complete HTML document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Page {
    pub title: String,
    pub head_extra: Vec<DocNode>,
    pub body: Vec<DocNode>,
}

impl Page {
    pub fn new(title: impl Into<String>) -> Self {
        Page { title: title.into(), ..Page::default() }
    }

    pub fn push(&mut self, node: impl Into<DocNode>) {
        self.body.push(node.into());
    }

    pub fn with_body<I>(mut self, nodes: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<DocNode>,
    {
        self.body.extend(nodes.into_iter().map(Into::into));
        self
    }

    /// All text in the body, for assertions and plain-text inspection.
    pub fn body_text(&self) -> String {
        self.body.iter().map(DocNode::text_content).collect()
    }
}

pub fn render_page(p: &Page) -> Result<String, DocError> {
    let mut out = String::from("<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>");
    out.push_str(&escape_text(&p.title));
    out.push_str("</title>");
    for n in &p.head_extra {
        render_into(n, &mut out)?;
    }
    out.push_str("</head><body>");
    for n in &p.body {
        render_into(n, &mut out)?;
    }
    out.push_str("</body></html>");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_text_examples() {
        assert_eq!(escape_text("a<b"), "a&lt;b");
        assert_eq!(escape_text(""), "");
        assert_eq!(escape_text("A&B"), "A&amp;B");
        assert_eq!(escape_text("x>y \"q\" 'p'"), "x&gt;y \"q\" 'p'");
    }

    #[test]
    fn escape_attr_examples() {
        assert_eq!(escape_attr("x\"y"), "x&quot;y");
        assert_eq!(escape_attr("plain"), "plain");
        assert_eq!(escape_attr("<&\""), "&lt;&amp;&quot;");
        assert_eq!(escape_attr("it's"), "it's");
    }

    #[test]
    fn render_paragraph() {
        let p: DocNode = el("p").text("hi").into();
        assert_eq!(render(&p).unwrap(), "<p>hi</p>");
    }

    #[test]
    fn void_with_children_is_rejected() {
        let br: DocNode = el("br").text("x").into();
        assert_eq!(render(&br), Err(DocError::VoidElementWithChildren("br".into())));
        let input: DocNode = el("input").attr("type", "text").into();
        assert_eq!(render(&input).unwrap(), "<input type=\"text\">");
    }

    #[test]
    fn invalid_tags_and_duplicate_attrs() {
        assert!(matches!(render(&el("1p").into()), Err(DocError::InvalidTag(_))));
        assert!(matches!(render(&el("").into()), Err(DocError::InvalidTag(_))));
        assert!(matches!(render(&el("a b").into()), Err(DocError::InvalidTag(_))));
        let dup: DocNode = el("div").attr("id", "a").attr("ID", "b").into();
        assert!(matches!(render(&dup), Err(DocError::DuplicateAttribute { .. })));
        let bad: DocNode = el("div").attr("on click", "x").into();
        assert!(matches!(render(&bad), Err(DocError::InvalidAttributeName { .. })));
    }

    #[test]
    fn errors_propagate_from_deep_children() {
        let tree: DocNode = el("div").child(el("span").child(el("hr").text("no"))).into();
        assert!(render(&tree).is_err());
    }

    #[test]
    fn raw_passes_verbatim_text_does_not() {
        let tree: DocNode = el("div").child(DocNode::Raw("<b>ok</b>".into())).child(text("<b>no</b>")).into();
        assert_eq!(render(&tree).unwrap(), "<div><b>ok</b>&lt;b&gt;no&lt;/b&gt;</div>");
    }

    #[test]
    fn textarea_leading_newline_is_preserved() {
        let t: DocNode = el("textarea").text("\nbody").into();
        assert_eq!(render(&t).unwrap(), "<textarea>\n\nbody</textarea>");
    }

    #[test]
    fn page_structure() {
        let html = render_page(&Page::new("Home")).unwrap();
        assert!(html.starts_with("<!DOCTYPE html>"));
        assert!(html.contains("<title>Home</title>"));
        assert_eq!(html.matches("<html>").count(), 1);
        assert_eq!(html.matches("<head>").count(), 1);
        assert_eq!(html.matches("<body>").count(), 1);

        let html = render_page(&Page::new("A<B")).unwrap();
        assert!(html.contains("<title>A&lt;B</title>"));

        let para: DocNode = el("p").text("x & y").into();
        let html = render_page(&Page::new("t").with_body([para.clone()])).unwrap();
        assert!(html.contains(&format!("<body>{}</body>", render(&para).unwrap())));
    }

    #[test]
    fn flag_and_lookup_helpers() {
        let e = el("input").flag("disabled", true).flag("readonly", false);
        assert_eq!(e.get_attr("disabled"), Some(""));
        assert_eq!(e.get_attr("readonly"), None);
    }
}
