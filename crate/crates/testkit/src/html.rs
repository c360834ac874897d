//! HTML conformance checks backed by html5ever, a parser that shares no code
//! with the renderer under test.

use std::borrow::Cow;
use std::cell::{Ref, RefCell};

use hdb_core::doctree::{self, DocNode, Element, Page};
use html5ever::interface::{ElementFlags, NodeOrText, QuirksMode, TreeSink};
use html5ever::tendril::{StrTendril, TendrilSink};
use html5ever::{parse_document, Attribute, ParseOpts, QualName};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Element {
        name: String,
        /// False for elements the parser placed in a foreign namespace.
        html: bool,
        attrs: Vec<(String, String)>,
        children: Vec<Parsed>,
    },
    Text(String),
    Comment(String),
}

#[derive(Debug, Clone)]
pub struct ParsedDocument {
    pub doctype: Option<String>,
    pub children: Vec<Parsed>,
    pub errors: Vec<String>,
    pub quirks: bool,
}

enum Kind {
    Document,
    Element { name: QualName, attrs: Vec<(String, String)> },
    Text(String),
    Comment(String),
    Other,
}

struct Node {
    kind: Kind,
    parent: Option<usize>,
    children: Vec<usize>,
}

#[derive(Default)]
struct Sink {
    nodes: RefCell<Vec<Node>>,
    errors: RefCell<Vec<String>>,
    doctype: RefCell<Option<String>>,
    quirks: RefCell<bool>,
}

impl Sink {
    fn new() -> Self {
        let s = Sink::default();
        s.nodes.borrow_mut().push(Node { kind: Kind::Document, parent: None, children: vec![] });
        s
    }

    fn add(&self, kind: Kind) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { kind, parent: None, children: vec![] });
        nodes.len() - 1
    }

    fn detach(&self, id: usize) {
        let mut nodes = self.nodes.borrow_mut();
        if let Some(p) = nodes[id].parent.take() {
            nodes[p].children.retain(|c| *c != id);
        }
    }

    fn insert_at(&self, parent: usize, index: usize, child: NodeOrText<usize>) {
        match child {
            NodeOrText::AppendNode(id) => {
                self.detach(id);
                let mut nodes = self.nodes.borrow_mut();
                nodes[id].parent = Some(parent);
                nodes[parent].children.insert(index, id);
            }
            NodeOrText::AppendText(t) => {
                // merge with the preceding text sibling
                {
                    let mut nodes = self.nodes.borrow_mut();
                    if index > 0 {
                        let prev = nodes[parent].children[index - 1];
                        if let Kind::Text(s) = &mut nodes[prev].kind {
                            s.push_str(&t);
                            return;
                        }
                    }
                }
                let id = self.add(Kind::Text(t.to_string()));
                let mut nodes = self.nodes.borrow_mut();
                nodes[id].parent = Some(parent);
                nodes[parent].children.insert(index, id);
            }
        }
    }

    fn convert(&self, id: usize) -> Parsed {
        let nodes = self.nodes.borrow();
        match &nodes[id].kind {
            Kind::Element { name, attrs } => Parsed::Element {
                name: name.local.to_string(),
                html: name.ns == html5ever::ns!(html),
                attrs: attrs.clone(),
                children: nodes[id].children.clone().into_iter().map(|c| self.convert(c)).collect(),
            },
            Kind::Text(t) => Parsed::Text(t.clone()),
            Kind::Comment(c) => Parsed::Comment(c.clone()),
            Kind::Document | Kind::Other => Parsed::Comment(String::new()),
        }
    }
}

fn attrs_of(attrs: Vec<Attribute>) -> Vec<(String, String)> {
    attrs.into_iter().map(|a| (a.name.local.to_string(), a.value.to_string())).collect()
}

impl TreeSink for Sink {
    type Handle = usize;
    type Output = ParsedDocument;
    type ElemName<'a> = Ref<'a, QualName>;

    fn finish(self) -> ParsedDocument {
        let children = self.nodes.borrow()[0].children.clone();
        ParsedDocument {
            doctype: self.doctype.borrow().clone(),
            children: children.into_iter().map(|c| self.convert(c)).collect(),
            errors: self.errors.borrow().clone(),
            quirks: *self.quirks.borrow(),
        }
    }

    fn parse_error(&self, msg: Cow<'static, str>) {
        self.errors.borrow_mut().push(msg.into_owned());
    }

    fn get_document(&self) -> usize {
        0
    }

    fn elem_name<'a>(&'a self, target: &'a usize) -> Ref<'a, QualName> {
        Ref::map(self.nodes.borrow(), |n| match &n[*target].kind {
            Kind::Element { name, .. } => name,
            _ => panic!("not an element"),
        })
    }

    fn create_element(&self, name: QualName, attrs: Vec<Attribute>, _flags: ElementFlags) -> usize {
        self.add(Kind::Element { name, attrs: attrs_of(attrs) })
    }

    fn create_comment(&self, text: StrTendril) -> usize {
        self.add(Kind::Comment(text.to_string()))
    }

    fn create_pi(&self, _target: StrTendril, _data: StrTendril) -> usize {
        self.add(Kind::Other)
    }

    fn append(&self, parent: &usize, child: NodeOrText<usize>) {
        let len = self.nodes.borrow()[*parent].children.len();
        self.insert_at(*parent, len, child);
    }

    fn append_based_on_parent_node(&self, element: &usize, prev_element: &usize, child: NodeOrText<usize>) {
        if self.nodes.borrow()[*element].parent.is_some() {
            self.append_before_sibling(element, child);
        } else {
            self.append(prev_element, child);
        }
    }

    fn append_doctype_to_document(&self, name: StrTendril, _public_id: StrTendril, _system_id: StrTendril) {
        *self.doctype.borrow_mut() = Some(name.to_string());
    }

    fn get_template_contents(&self, target: &usize) -> usize {
        *target
    }

    fn same_node(&self, x: &usize, y: &usize) -> bool {
        x == y
    }

    fn set_quirks_mode(&self, mode: QuirksMode) {
        *self.quirks.borrow_mut() = mode != QuirksMode::NoQuirks;
    }

    fn append_before_sibling(&self, sibling: &usize, new_node: NodeOrText<usize>) {
        let parent = self.nodes.borrow()[*sibling].parent.expect("sibling has a parent");
        if let NodeOrText::AppendNode(id) = &new_node {
            self.detach(*id);
        }
        let index = self.nodes.borrow()[parent].children.iter().position(|c| c == sibling).expect("sibling is a child");
        self.insert_at(parent, index, new_node);
    }

    fn add_attrs_if_missing(&self, target: &usize, attrs: Vec<Attribute>) {
        let mut nodes = self.nodes.borrow_mut();
        if let Kind::Element { attrs: existing, .. } = &mut nodes[*target].kind {
            for (n, v) in attrs_of(attrs) {
                if !existing.iter().any(|(e, _)| *e == n) {
                    existing.push((n, v));
                }
            }
        }
    }

    fn remove_from_parent(&self, target: &usize) {
        self.detach(*target);
    }

    fn reparent_children(&self, node: &usize, new_parent: &usize) {
        let children = std::mem::take(&mut self.nodes.borrow_mut()[*node].children);
        let mut nodes = self.nodes.borrow_mut();
        for c in &children {
            nodes[*c].parent = Some(*new_parent);
        }
        nodes[*new_parent].children.extend(children);
    }
}

pub fn parse(html: &str) -> ParsedDocument {
    parse_document(Sink::new(), ParseOpts::default()).one(html)
}

fn find<'a>(nodes: &'a [Parsed], tag: &str) -> Option<&'a Parsed> {
    nodes.iter().find(|n| matches!(n, Parsed::Element { name, .. } if name == tag))
}

fn children(n: &Parsed) -> &[Parsed] {
    match n {
        Parsed::Element { children, .. } => children,
        _ => &[],
    }
}

/// The body's children after parsing `fragment` as the whole body.
pub fn parse_body_fragment(fragment: &str) -> (Vec<Parsed>, Vec<String>) {
    let doc = parse(&format!("<!DOCTYPE html><html><head><title>t</title></head><body>{fragment}</body></html>"));
    let body = find(&doc.children, "html")
        .and_then(|h| find(children(h), "body"))
        .map(|b| children(b).to_vec())
        .unwrap_or_default();
    (body, doc.errors)
}

/// The body of a complete page as document nodes.
pub fn page_body(html: &str) -> Result<Vec<DocNode>, String> {
    let doc = parse(html);
    let body = find(&doc.children, "html").and_then(|h| find(children(h), "body")).ok_or("page has no body")?;
    children(body).iter().map(to_doc).collect()
}

/// Converts a parsed node back into a document tree.
pub fn to_doc(n: &Parsed) -> Result<DocNode, String> {
    match n {
        Parsed::Text(t) => Ok(DocNode::Text(t.clone())),
        Parsed::Comment(c) => Err(format!("unexpected comment {c:?}")),
        Parsed::Element { name, html, attrs, children } => {
            if !html {
                return Err(format!("<{name}> landed in a foreign namespace"));
            }
            Ok(DocNode::Element(Element {
                tag: name.clone(),
                attrs: attrs.clone(),
                children: children.iter().map(to_doc).collect::<Result<_, _>>()?,
            }))
        }
    }
}

/// Lowercases names, merges adjacent text, collapses whitespace runs and
/// drops whitespace-only text.
pub fn normalize(nodes: &[DocNode]) -> Vec<DocNode> {
    let mut out: Vec<DocNode> = Vec::new();
    for n in nodes {
        match n {
            DocNode::Text(t) | DocNode::Raw(t) => {
                if let Some(DocNode::Text(prev)) = out.last_mut() {
                    prev.push_str(t);
                } else {
                    out.push(DocNode::Text(t.clone()));
                }
            }
            DocNode::Element(e) => out.push(DocNode::Element(Element {
                tag: e.tag.to_ascii_lowercase(),
                attrs: e.attrs.iter().map(|(k, v)| (k.to_ascii_lowercase(), v.clone())).collect(),
                children: normalize(&e.children),
            })),
        }
    }
    out.into_iter()
        .filter_map(|n| match n {
            DocNode::Text(t) => {
                let collapsed = t.split_whitespace().collect::<Vec<_>>().join(" ");
                (!collapsed.is_empty()).then_some(DocNode::Text(collapsed))
            }
            other => Some(other),
        })
        .collect()
}

/// Renders a Raw-free tree, parses the result and compares the trees.
pub fn check_tree_roundtrip(tree: &DocNode) -> Result<(), String> {
    if tree.contains_raw() {
        return Err("tree contains Raw".into());
    }
    let html = doctree::render(tree).map_err(|e| e.to_string())?;
    let (body, errors) = parse_body_fragment(&html);
    if !errors.is_empty() {
        return Err(format!("parse errors {errors:?} in {html}"));
    }
    let parsed = body.iter().map(to_doc).collect::<Result<Vec<_>, _>>()?;
    let (want, got) = (normalize(std::slice::from_ref(tree)), normalize(&parsed));
    if want == got {
        Ok(())
    } else {
        Err(format!("round trip mismatch for {html}\nwant {want:?}\n got {got:?}"))
    }
}

/// Checks a complete page: it parses with zero errors, in no-quirks mode,
/// as exactly doctype, html, head and body, and rebuilding a [`Page`] from
/// the parse renders the identical text (line breaks normalized as the
/// parser does).
pub fn check_page(html: &str) -> Result<(), String> {
    let doc = parse(html);
    if !doc.errors.is_empty() {
        return Err(format!("parse errors: {:?}", doc.errors));
    }
    if doc.quirks || doc.doctype.as_deref() != Some("html") {
        return Err("missing or wrong doctype".into());
    }
    let [Parsed::Element { name, attrs, children: top, .. }] = doc.children.as_slice() else {
        return Err("document must hold a single html element".into());
    };
    if name != "html" || !attrs.is_empty() || top.len() != 2 {
        return Err("html element must hold exactly head and body".into());
    }
    let (head, body) = (&top[0], &top[1]);
    let head_kids = match head {
        Parsed::Element { name, children, .. } if name == "head" => children,
        _ => return Err("first child of html is not head".into()),
    };
    let body_kids = match body {
        Parsed::Element { name, attrs, children, .. } if name == "body" && attrs.is_empty() => children,
        _ => return Err("second child of html is not a plain body".into()),
    };
    let mut page = Page::default();
    let mut saw_title = false;
    for (i, n) in head_kids.iter().enumerate() {
        match n {
            Parsed::Element { name, attrs, .. } if i == 0 && name == "meta" => {
                if attrs != &[("charset".to_string(), "utf-8".to_string())] {
                    return Err("first head element must be meta charset".into());
                }
            }
            Parsed::Element { name, children, .. } if i == 1 && name == "title" => {
                saw_title = true;
                page.title = children
                    .iter()
                    .map(|c| match c {
                        Parsed::Text(t) => t.as_str(),
                        _ => "",
                    })
                    .collect();
            }
            other if i >= 2 => page.head_extra.push(to_doc(other)?),
            _ => return Err("head must start with meta charset and title".into()),
        }
    }
    if !saw_title {
        return Err("page has no title".into());
    }
    page.body = body_kids.iter().map(to_doc).collect::<Result<_, _>>()?;
    let again = doctree::render_page(&page).map_err(|e| e.to_string())?;
    let expected = html.replace("\r\n", "\n").replace('\r', "\n");
    if again == expected {
        Ok(())
    } else {
        let at =
            again.bytes().zip(expected.bytes()).position(|(a, b)| a != b).unwrap_or(again.len().min(expected.len()));
        let lo = at.saturating_sub(60);
        Err(format!(
            "re-rendered page differs at byte {at}:\n  page: {:?}\n parse: {:?}",
            expected.get(lo..(at + 60).min(expected.len())).unwrap_or(""),
            again.get(lo..(at + 60).min(again.len())).unwrap_or("")
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hdb_core::doctree::el;

    #[test]
    fn simple_round_trip() {
        let t: DocNode = el("div")
            .attr("title", "a \"q\" & <b>")
            .child(el("em").text("x < y && z"))
            .child(el("br"))
            .text("tail")
            .into();
        check_tree_roundtrip(&t).unwrap();
    }

    #[test]
    fn detects_restructuring() {
        // a div inside a p is split by the parser
        let t: DocNode = el("p").child(el("div").text("x")).into();
        assert!(check_tree_roundtrip(&t).is_err());
        assert!(check_tree_roundtrip(&DocNode::Raw("<b>".into())).is_err());
    }

    #[test]
    fn page_check() {
        let page = Page::new("A<B").with_body([el("h1").text("x & y"), el("textarea").text("\nz")]);
        check_page(&doctree::render_page(&page).unwrap()).unwrap();
        assert!(check_page("<html><body>x</body></html>").is_err());
        let mut broken = doctree::render_page(&Page::new("t")).unwrap();
        broken = broken.replace("<body>", "<body><table><tr><td>x</td></tr></table>");
        assert!(check_page(&broken).is_err(), "implicit tbody must be caught");
    }
}
