//! Brace-matching preprocessor tree for wikitext.
//!
//! Builds a light syntax tree of `{{template}}` and `{{{parameter}}}`
//! nodes over a source string. Text is stored as byte ranges into the
//! source, so every node keeps its original offset. The matching rules
//! follow the MediaWiki preprocessor: an opening run of braces is closed
//! three at a time when both sides have at least three (a parameter),
//! otherwise two at a time (a template). Unmatched braces fall back to
//! literal text.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

static REF_OPEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^<ref(?:\s[^>]*)?>").expect("ref open pattern is valid")
});

static REF_CLOSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"</ref\s*>").expect("ref close pattern is valid"));

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Text(Range<usize>),
    Template(Braced),
    Param(Braced),
    /// A `<ref>` element. Its body is parsed, but pipes inside it never
    /// split the arguments of an enclosing template.
    RefTag {
        open: Range<usize>,
        children: Vec<Node>,
        close: Range<usize>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Braced {
    pub span: Range<usize>,
    /// `parts[0]` is the name; the remaining parts are `|`-separated arguments.
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone)]
pub(crate) struct Part {
    /// Content range, excluding the surrounding delimiters.
    pub span: Range<usize>,
    pub nodes: Vec<Node>,
    /// Byte position of the first top-level `=`, if any.
    pub eq: Option<usize>,
}

impl Part {
    fn starting_at(pos: usize) -> Self {
        Part {
            span: pos..pos,
            nodes: Vec::new(),
            eq: None,
        }
    }
}

struct Frame {
    start: usize,
    open: usize,
    parts: Vec<Part>,
    link_depth: usize,
}

/// Parses the whole source.
pub(crate) fn parse(src: &str) -> Vec<Node> {
    let lower = src.to_ascii_lowercase();
    parse_range(src, &lower, 0..src.len())
}

fn parse_range(src: &str, lower: &str, range: Range<usize>) -> Vec<Node> {
    Parser {
        src,
        lower,
        end: range.end,
        root: Vec::new(),
        stack: Vec::new(),
    }
    .run(range.start)
}

struct Parser<'a> {
    src: &'a str,
    lower: &'a str,
    end: usize,
    root: Vec<Node>,
    stack: Vec<Frame>,
}

impl Parser<'_> {
    fn target(&mut self) -> &mut Vec<Node> {
        match self.stack.last_mut() {
            Some(frame) => {
                &mut frame
                    .parts
                    .last_mut()
                    .expect("a frame always has a part")
                    .nodes
            }
            None => &mut self.root,
        }
    }

    fn flush(&mut self, range: Range<usize>) {
        if !range.is_empty() {
            self.target().push(Node::Text(range));
        }
    }

    fn run(mut self, start: usize) -> Vec<Node> {
        let bytes = self.src.as_bytes();
        let end = self.end;
        let mut text_start = start;
        let mut i = start;
        while i < end {
            match bytes[i] {
                b'<' => {
                    if let Some(skip_to) = literal_span_end(self.lower, i, end) {
                        i = skip_to;
                        continue;
                    }
                    if let Some((open, inner, close)) = self.ref_element(i) {
                        self.flush(text_start..i);
                        let children = parse_range(self.src, self.lower, inner);
                        let after = close.end;
                        self.target().push(Node::RefTag {
                            open,
                            children,
                            close,
                        });
                        i = after;
                        text_start = i;
                        continue;
                    }
                    i += 1;
                }
                b'{' => {
                    let n = run_len(bytes, i, end, b'{');
                    if n >= 2 {
                        self.flush(text_start..i);
                        self.stack.push(Frame {
                            start: i,
                            open: n,
                            parts: vec![Part::starting_at(i + n)],
                            link_depth: 0,
                        });
                        text_start = i + n;
                    }
                    i += n;
                }
                b'}' => {
                    let m = run_len(bytes, i, end, b'}');
                    if m >= 2 && !self.stack.is_empty() {
                        self.flush(text_start..i);
                        let consumed = self.close(i, m);
                        text_start = i + consumed;
                    }
                    i += m;
                }
                b'|' => {
                    if let Some(frame) = self.stack.last() {
                        if frame.link_depth == 0 {
                            self.flush(text_start..i);
                            let frame = self.stack.last_mut().expect("checked above");
                            if let Some(part) = frame.parts.last_mut() {
                                part.span.end = i;
                            }
                            frame.parts.push(Part::starting_at(i + 1));
                            text_start = i + 1;
                        }
                    }
                    i += 1;
                }
                b'=' => {
                    if let Some(frame) = self.stack.last_mut() {
                        let index = frame.parts.len() - 1;
                        if frame.link_depth == 0 && index >= 1 {
                            let part = frame.parts.last_mut().expect("non-empty");
                            if part.eq.is_none() {
                                part.eq = Some(i);
                            }
                        }
                    }
                    i += 1;
                }
                b'[' if i + 1 < end && bytes[i + 1] == b'[' => {
                    if let Some(frame) = self.stack.last_mut() {
                        frame.link_depth += 1;
                    }
                    i += 2;
                }
                b']' if i + 1 < end && bytes[i + 1] == b']' => {
                    if let Some(frame) = self.stack.last_mut() {
                        frame.link_depth = frame.link_depth.saturating_sub(1);
                    }
                    i += 2;
                }
                _ => i += 1,
            }
        }
        self.flush(text_start..end);
        self.unwind(end);
        self.root
    }

    /// Matches a closing run of `m` braces at `pos` against open frames.
    /// Returns how many braces were consumed.
    fn close(&mut self, pos: usize, m: usize) -> usize {
        let mut consumed = 0;
        while m - consumed >= 2 {
            let Some(frame) = self.stack.last_mut() else {
                break;
            };
            let available = m - consumed;
            let matched = if frame.open >= 3 && available >= 3 { 3 } else { 2 };
            let close_at = pos + consumed;
            if let Some(part) = frame.parts.last_mut() {
                part.span.end = close_at;
            }
            let node_start = frame.start + frame.open - matched;
            let braced = Braced {
                span: node_start..close_at + matched,
                parts: std::mem::take(&mut frame.parts),
            };
            let node = if matched == 3 {
                Node::Param(braced)
            } else {
                Node::Template(braced)
            };
            frame.open -= matched;
            consumed += matched;
            if frame.open >= 2 {
                let mut part = Part::starting_at(frame.start + frame.open);
                part.nodes.push(node);
                frame.parts = vec![part];
                frame.link_depth = 0;
            } else {
                let frame = self.stack.pop().expect("frame present");
                if frame.open == 1 {
                    self.target().push(Node::Text(frame.start..frame.start + 1));
                }
                self.target().push(node);
            }
        }
        consumed
    }

    /// Unclosed frames at end of input turn back into literal text.
    fn unwind(&mut self, end: usize) {
        while let Some(mut frame) = self.stack.pop() {
            if let Some(part) = frame.parts.last_mut() {
                part.span.end = end;
            }
            let mut flat = Vec::new();
            flat.push(Node::Text(frame.start..frame.start + frame.open));
            for (k, part) in frame.parts.into_iter().enumerate() {
                if k > 0 {
                    flat.push(Node::Text(part.span.start - 1..part.span.start));
                }
                flat.extend(part.nodes);
            }
            self.target().extend(flat);
        }
    }

    fn ref_element(&self, at: usize) -> Option<(Range<usize>, Range<usize>, Range<usize>)> {
        let open = REF_OPEN.find(&self.lower[at..self.end])?;
        let open_end = at + open.end();
        if self.src.as_bytes()[open_end - 2] == b'/' {
            return None;
        }
        let close = REF_CLOSE.find(&self.lower[open_end..self.end])?;
        let close_range = open_end + close.start()..open_end + close.end();
        Some((at..open_end, open_end..close_range.start, close_range))
    }
}

fn run_len(bytes: &[u8], at: usize, end: usize, byte: u8) -> usize {
    bytes[at..end].iter().take_while(|&&b| b == byte).count()
}

/// Spans whose content is never preprocessed: comments, `nowiki`, `pre`,
/// and `math`. Returns the end of the span if one starts at `at`.
pub(crate) fn literal_span_end(lower: &str, at: usize, end: usize) -> Option<usize> {
    let rest = &lower[at..end];
    if let Some(body) = rest.strip_prefix("<!--") {
        return Some(body.find("-->").map_or(end, |p| at + 4 + p + 3));
    }
    for tag in ["nowiki", "pre", "math"] {
        let Some(after) = rest.strip_prefix('<').and_then(|r| r.strip_prefix(tag)) else {
            continue;
        };
        let Some(gt) = after.find('>') else {
            continue;
        };
        let head = &after[..gt];
        if !(head.is_empty() || head.starts_with(char::is_whitespace) || head == "/") {
            continue;
        }
        let open_end = at + 1 + tag.len() + gt + 1;
        if head.ends_with('/') {
            return Some(open_end);
        }
        let closing = format!("</{tag}>");
        return Some(
            lower[open_end..end]
                .find(&closing)
                .map_or(open_end, |p| open_end + p + closing.len()),
        );
    }
    None
}

/// Visits every template node, depth first, in source order. The callback
/// also learns whether an enclosing `<ref>` element exists.
pub(crate) fn walk_templates<'n>(
    nodes: &'n [Node],
    visit: &mut impl FnMut(&'n Braced, bool),
) {
    walk_inner(nodes, false, visit);
}

fn walk_inner<'n>(
    nodes: &'n [Node],
    in_ref: bool,
    visit: &mut impl FnMut(&'n Braced, bool),
) {
    for node in nodes {
        match node {
            Node::Text(_) => {}
            Node::Template(b) => {
                visit(b, in_ref);
                for part in &b.parts {
                    walk_inner(&part.nodes, in_ref, visit);
                }
            }
            Node::Param(b) => {
                for part in &b.parts {
                    walk_inner(&part.nodes, in_ref, visit);
                }
            }
            Node::RefTag { children, .. } => walk_inner(children, true, visit),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn templates(src: &str) -> Vec<String> {
        let nodes = parse(src);
        let mut out = Vec::new();
        walk_templates(&nodes, &mut |b, _| {
            out.push(src[b.span.clone()].to_string());
        });
        out
    }

    #[test]
    fn finds_nested_templates() {
        assert_eq!(
            templates("a {{X|{{Y}}}} b"),
            vec!["{{X|{{Y}}}}".to_string(), "{{Y}}".to_string()]
        );
    }

    #[test]
    fn parameter_inside_template() {
        let src = "{{X|{{{1|d}}}}}";
        let nodes = parse(src);
        let Node::Template(b) = &nodes[0] else {
            panic!("expected template, got {nodes:?}");
        };
        assert_eq!(b.parts.len(), 2);
        assert!(matches!(b.parts[1].nodes[0], Node::Param(_)));
    }

    #[test]
    fn unmatched_braces_are_text() {
        let src = "{{X|a";
        let nodes = parse(src);
        assert!(nodes.iter().all(|n| matches!(n, Node::Text(_))));
        let rebuilt: String = nodes
            .iter()
            .map(|n| match n {
                Node::Text(r) => &src[r.clone()],
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(rebuilt, src);
        assert!(templates("}} {{").is_empty());
    }

    #[test]
    fn link_pipes_do_not_split() {
        let src = "{{X|[[a|b]]|c=d}}";
        let nodes = parse(src);
        let Node::Template(b) = &nodes[0] else { panic!() };
        assert_eq!(b.parts.len(), 3);
        assert_eq!(b.parts[2].eq, Some(src.find('=').unwrap()));
    }

    #[test]
    fn ref_pipes_do_not_split() {
        let src = "{{X|a<ref>[http://e.com x|y]</ref>|b}}";
        let nodes = parse(src);
        let Node::Template(b) = &nodes[0] else { panic!() };
        assert_eq!(b.parts.len(), 3);
    }

    #[test]
    fn nowiki_is_opaque() {
        assert!(templates("<nowiki>{{X}}</nowiki>").is_empty());
        assert!(templates("<!-- {{X}} -->").is_empty());
        assert_eq!(templates("<nowiki/>{{X}}").len(), 1);
    }
}
