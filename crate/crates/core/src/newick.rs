//! Newick reading and writing.
//!
//! The root is the outermost node and its label is written after the final
//! closing parenthesis. The root's single child appears as the only element of
//! the outer group, so its length is the root-link length:
//! `((1:1,2:1)a:1)s;`.
//!
//! Lengths are written with Rust's shortest round-trip decimal formatting, so
//! reading back yields bit-identical values.

use crate::error::{Error, Result};
use crate::tree::{LinkMetric, NodeId, Orientation, RoutedTree};

const SPECIAL: &[char] = &['(', ')', '[', ']', '\'', ':', ';', ','];

/// Quotes a label if it contains Newick metacharacters or whitespace.
pub fn quote_label(label: &str) -> String {
    if label.chars().any(|c| SPECIAL.contains(&c) || c.is_whitespace()) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

pub fn to_newick(tree: &RoutedTree, metric: Option<&LinkMetric>) -> String {
    let mut out = String::new();
    write_node(tree, metric, tree.root(), &mut out);
    out.push(';');
    out
}

fn write_node(tree: &RoutedTree, metric: Option<&LinkMetric>, v: NodeId, out: &mut String) {
    let kids = tree.children(v);
    if !kids.is_empty() {
        out.push('(');
        for (i, &c) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(tree, metric, c, out);
        }
        out.push(')');
    }
    if let Some(l) = tree.label(v) {
        out.push_str(&quote_label(l));
    }
    if v != tree.root() {
        if let Some(d) = metric.and_then(|m| m.length(v)) {
            out.push(':');
            out.push_str(&d.to_string());
        }
    }
}

/// Parses a single `;`-terminated tree.
///
/// The returned metric is `Some` when every link carries a length and `None`
/// when none does; lengths are taken as given, without positivity checks.
pub fn parse_newick(text: &str) -> Result<(RoutedTree, Option<LinkMetric>)> {
    let mut p = Parser {
        src: text.as_bytes(),
        text,
        pos: 0,
        parent: Vec::new(),
        labels: Vec::new(),
        lengths: Vec::new(),
    };
    p.node(None)?;
    p.skip_ws()?;
    if p.peek() != Some(b';') {
        return Err(p.err("expected ';'"));
    }
    p.pos += 1;
    p.skip_ws()?;
    if p.pos != p.src.len() {
        return Err(p.err("trailing characters after ';'"));
    }
    if p.lengths[0].is_some() {
        log::debug!("ignoring length on the root node");
    }

    let with_len = p.lengths.iter().skip(1).filter(|l| l.is_some()).count();
    let metric = if with_len == 0 {
        None
    } else if with_len == p.lengths.len() - 1 {
        Some(LinkMetric::from_estimates(
            p.lengths
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, l)| (k, l.expect("counted"))),
        ))
    } else {
        return Err(Error::Parse {
            pos: text.len(),
            msg: "some links have lengths and others do not".into(),
        });
    };
    let tree = RoutedTree::from_parents(p.parent, p.labels, Orientation::SourceRooted)?;
    Ok((tree, metric))
}

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    parent: Vec<Option<NodeId>>,
    labels: Vec<Option<String>>,
    lengths: Vec<Option<f64>>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.src[self.pos..].iter().position(|&c| c == b']') {
                        Some(off) => self.pos += off + 1,
                        None => {
                            self.pos = start;
                            return Err(self.err("unterminated comment"));
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn node(&mut self, parent: Option<NodeId>) -> Result<()> {
        let id = self.parent.len();
        self.parent.push(parent);
        self.labels.push(None);
        self.lengths.push(None);

        self.skip_ws()?;
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                self.node(Some(id))?;
                self.skip_ws()?;
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return Err(self.err("expected ',' or ')'")),
                    None => return Err(self.err("unbalanced parenthesis")),
                }
            }
        }
        self.skip_ws()?;
        self.labels[id] = self.label()?;
        self.skip_ws()?;
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws()?;
            self.lengths[id] = Some(self.number()?);
        }
        Ok(())
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some(b'\'') {
            let start = self.pos;
            self.pos += 1;
            let mut out = String::new();
            loop {
                match self.peek() {
                    None => {
                        self.pos = start;
                        return Err(self.err("unterminated quoted label"));
                    }
                    Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                        out.push('\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        return Ok(Some(out));
                    }
                    Some(_) => {
                        let ch = self.text[self.pos..].chars().next().expect("in bounds");
                        out.push(ch);
                        self.pos += ch.len_utf8();
                    }
                }
            }
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || SPECIAL.contains(&(c as char)) {
                break;
            }
            self.pos += 1;
        }
        Ok((self.pos > start).then(|| self.text[start..self.pos].to_string()))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.text[start..self.pos].parse::<f64>().map_err(|_| Error::Parse {
            pos: start,
            msg: format!("invalid branch length {:?}", &self.text[start..self.pos]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{trees_equal, TreeBuilder};

    #[test]
    fn parses_two_leaf_tree() {
        let (t, m) = parse_newick("((1:1.0,2:1.0)a:1.0)s;").unwrap();
        let mut b = TreeBuilder::new("s");
        let a = b.add_named(0, Some("a"));
        b.add_leaf(a, "1");
        b.add_leaf(a, "2");
        let expected = b.build().unwrap();
        assert!(trees_equal(&t, &expected).unwrap());
        assert_eq!(t.root_label(), "s");
        let m = m.unwrap();
        assert_eq!(m.lengths().len(), 3);
        assert!(m.lengths().values().all(|&d| d == 1.0));
        assert_eq!(t.label(t.children(0)[0]), Some("a"));
    }

    #[test]
    fn reports_malformed_input() {
        for bad in ["((1,2)", "((1,2)a)s", "((1:x,2)a)s;", "((1,2)a)s; junk", "((1,2]"] {
            assert!(
                matches!(parse_newick(bad), Err(Error::Parse { .. })),
                "{bad:?}"
            );
        }
        assert!(matches!(
            parse_newick("((1:1,2)a:1)s;"),
            Err(Error::Parse { .. })
        ));
        // Well-formed text, invalid routing tree (root with two children).
        assert!(matches!(
            parse_newick("(1,2)s;"),
            Err(Error::InvalidTree(_))
        ));
    }

    #[test]
    fn handles_quotes_comments_and_whitespace() {
        let (t, m) = parse_newick(" ( ( 'leaf one':0.5 , [c] x:2e-1 ) : 3 ) 'src s' ; ").unwrap();
        assert!(t.find_label("leaf one").is_some());
        assert_eq!(t.root_label(), "src s");
        let m = m.unwrap();
        assert_eq!(m.length(t.find_label("x").unwrap()), Some(0.2));
        let text = to_newick(&t, Some(&m));
        assert_eq!(text, "(('leaf one':0.5,x:0.2):3)'src s';");
    }

    #[test]
    fn writes_without_lengths() {
        let (t, m) = parse_newick("(((1,(2,3)),4))s;").unwrap();
        assert!(m.is_none());
        assert_eq!(to_newick(&t, None), "(((1,(2,3)),4))s;");
    }
}
