//! Rendered trees re-parsed by an independent HTML5 parser.

use hdb_core::doctree::{el, escape_attr, escape_text, render, render_page, DocNode, Element, Page};
use hdb_testkit::html::{check_page, check_tree_roundtrip};
use proptest::prelude::*;

const CONTAINERS: [&str; 13] =
    ["div", "span", "section", "article", "em", "b", "i", "code", "small", "strong", "kbd", "var", "abbr"];
const VOIDS: [&str; 5] = ["br", "wbr", "img", "input", "hr"];

fn text_value() -> impl Strategy<Value = String> {
    "[ -~\u{a0}-\u{17f}\u{3b1}-\u{3c9}\u{4e00}-\u{4e20}\\t\\n<>&\"']{0,24}"
}

fn attrs() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::btree_map("[a-z][a-z0-9-]{0,6}", text_value(), 0..4).prop_map(|m| m.into_iter().collect())
}

fn void() -> impl Strategy<Value = DocNode> {
    (prop::sample::select(&VOIDS[..]), attrs())
        .prop_map(|(tag, attrs)| DocNode::Element(Element { tag: tag.into(), attrs, children: vec![] }))
}

fn tree() -> impl Strategy<Value = DocNode> {
    let leaf = prop_oneof![text_value().prop_map(DocNode::Text), void()];
    leaf.prop_recursive(5, 64, 5, |inner| {
        (prop::sample::select(&CONTAINERS[..]), attrs(), prop::collection::vec(inner, 0..5))
            .prop_map(|(tag, attrs, children)| DocNode::Element(Element { tag: tag.into(), attrs, children }))
    })
}

fn rooted() -> impl Strategy<Value = DocNode> {
    (attrs(), prop::collection::vec(tree(), 0..6))
        .prop_map(|(attrs, children)| DocNode::Element(Element { tag: "div".into(), attrs, children }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_reparses_to_the_same_tree(t in rooted()) {
        prop_assert!(!t.contains_raw());
        if let Err(e) = check_tree_roundtrip(&t) {
            return Err(TestCaseError::fail(format!("{e}\n{}", render(&t).unwrap())));
        }
    }

    #[test]
    fn text_never_yields_markup(s in text_value()) {
        let html = render(&el("span").text(s.clone()).into()).unwrap();
        let inner = &html["<span>".len()..html.len() - "</span>".len()];
        prop_assert!(!inner.contains('<'));
        prop_assert!(!inner.contains('>'));
    }

    #[test]
    fn escaping_is_identity_on_clean_input(s in "[A-Za-z0-9 .,;:!?\u{e9}\u{4e00}-]{0,32}") {
        prop_assert_eq!(escape_text(&s), s.clone());
        prop_assert_eq!(escape_attr(&s), s);
    }

    #[test]
    fn pages_pass_the_document_check(title in text_value(), body in prop::collection::vec(tree(), 0..4)) {
        let page = Page::new(title).with_body(body);
        let html = render_page(&page).unwrap();
        if let Err(e) = check_page(&html) {
            return Err(TestCaseError::fail(format!("{e}\n{html}")));
        }
    }
}

#[test]
fn rendered_examples() {
    assert_eq!(render(&el("p").text("hi").into()).unwrap(), "<p>hi</p>");
    let html = render_page(&Page::new("A<B")).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>"));
    assert!(html.contains("<title>A&lt;B</title>"));
}
