//! Bracketed (s-expression) constituency trees.
//!
//! The format is the usual one: `(S (NP (PN John)) (VP (V runs)))`, one tree
//! per line or per balanced block. Reading assigns leaf indices left to right
//! within each tree; parse errors report the character offset into the input.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::ConstituencyTree;
use crate::{Error, Result};

/// Reads zero or more trees. Errors carry the 1-based line and the character
/// offset of the offending position.
pub fn read_bracketed<R: Read>(mut reader: R) -> Result<Vec<ConstituencyTree>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_bracketed(&text)
}

/// Parses trees out of a string (the worker behind [`read_bracketed`]).
pub fn parse_bracketed(text: &str) -> Result<Vec<ConstituencyTree>> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0usize;
    let mut trees = Vec::new();
    loop {
        skip_ws(&chars, &mut pos);
        if pos >= chars.len() {
            break;
        }
        if chars[pos] != '(' {
            return Err(err_at(&chars, pos, format!("expected '(', found {:?}", chars[pos])));
        }
        let mut next_leaf = 0usize;
        let tree = parse_node(&chars, &mut pos, &mut next_leaf)?;
        trees.push(tree);
    }
    Ok(trees)
}

fn parse_node(
    chars: &[char],
    pos: &mut usize,
    next_leaf: &mut usize,
) -> Result<ConstituencyTree> {
    debug_assert_eq!(chars[*pos], '(');
    let open = *pos;
    *pos += 1; // consume '('
    skip_ws(chars, pos);
    let label = read_atom(chars, pos)?;
    if label.is_empty() {
        return Err(err_at(chars, *pos, "expected a node label after '('".into()));
    }
    let mut children = Vec::new();
    loop {
        skip_ws(chars, pos);
        match chars.get(*pos) {
            None => return Err(err_at(chars, open, "unbalanced '(': tree never closed".into())),
            Some(')') => {
                *pos += 1;
                break;
            }
            Some('(') => children.push(parse_node(chars, pos, next_leaf)?),
            Some(_) => {
                let form = read_atom(chars, pos)?;
                let index = *next_leaf;
                *next_leaf += 1;
                children.push(ConstituencyTree::Leaf { index, form });
            }
        }
    }
    if children.is_empty() {
        return Err(err_at(chars, open, format!("node {label:?} has no children")));
    }
    Ok(ConstituencyTree::Node { label, children })
}

fn read_atom(chars: &[char], pos: &mut usize) -> Result<String> {
    let start = *pos;
    while *pos < chars.len() && !chars[*pos].is_whitespace() && chars[*pos] != '(' && chars[*pos] != ')'
    {
        *pos += 1;
    }
    Ok(chars[start..*pos].iter().collect())
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() && chars[*pos].is_whitespace() {
        *pos += 1;
    }
}

fn err_at(chars: &[char], pos: usize, what: String) -> Error {
    let line = chars[..pos.min(chars.len())].iter().filter(|&&c| c == '\n').count() + 1;
    Error::Parse { line, msg: format!("{what} (character offset {pos})") }
}

pub fn read_bracketed_file(path: impl AsRef<Path>) -> Result<Vec<ConstituencyTree>> {
    read_bracketed(File::open(path.as_ref())?)
}

/// Writes one tree per line. Labels and leaf forms must be free of
/// whitespace and parentheses (that is what the reader can reproduce);
/// offending trees raise [`Error::Argument`].
pub fn write_bracketed<W: Write>(writer: &mut W, trees: &[ConstituencyTree]) -> Result<()> {
    for tree in trees {
        let mut line = String::new();
        render(tree, &mut line)?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn write_bracketed_file(path: impl AsRef<Path>, trees: &[ConstituencyTree]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_bracketed(&mut out, trees)?;
    out.flush()?;
    Ok(())
}

fn render(tree: &ConstituencyTree, out: &mut String) -> Result<()> {
    match tree {
        ConstituencyTree::Leaf { form, .. } => {
            check_atom(form)?;
            out.push_str(form);
            Ok(())
        }
        ConstituencyTree::Node { label, children } => {
            check_atom(label)?;
            out.push('(');
            out.push_str(label);
            for child in children {
                out.push(' ');
                render(child, out)?;
            }
            out.push(')');
            Ok(())
        }
    }
}

fn check_atom(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
        return Err(Error::Argument(format!(
            "cannot serialize atom {s:?}: must be non-empty and free of whitespace/parentheses"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_tree_with_leaf_indices() {
        let trees = parse_bracketed("(S (NP (PN John)) (VP (V runs)))").unwrap();
        assert_eq!(trees.len(), 1);
        let t = &trees[0];
        t.validate().unwrap();
        assert_eq!(t.leaf_forms(), vec!["John", "runs"]);
        match t {
            ConstituencyTree::Node { label, children } => {
                assert_eq!(label, "S");
                assert_eq!(children.len(), 2);
            }
            _ => panic!("expected a node"),
        }
    }

    #[test]
    fn multiple_trees_restart_leaf_numbering() {
        let trees = parse_bracketed("(A x y)\n(B z)").unwrap();
        assert_eq!(trees.len(), 2);
        trees[0].validate().unwrap();
        trees[1].validate().unwrap();
    }

    #[test]
    fn unbalanced_input_reports_offset() {
        let err = parse_bracketed("(S (NP John)").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("character offset"), "missing offset in: {msg}");

        let err = parse_bracketed("(S John) )").unwrap_err();
        assert!(err.to_string().contains("offset 9"), "got: {err}");
    }

    #[test]
    fn empty_node_is_rejected() {
        assert!(parse_bracketed("(S ())").is_err());
        assert!(parse_bracketed("()").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let src = "(S (NP (DT the) (NN dog)) (VP (VBZ runs) (RB fast)))";
        let trees = parse_bracketed(src).unwrap();
        let mut buf = Vec::new();
        write_bracketed(&mut buf, &trees).unwrap();
        let back = read_bracketed(buf.as_slice()).unwrap();
        assert_eq!(trees, back);
        assert_eq!(String::from_utf8(buf).unwrap().trim(), src);
    }

    #[test]
    fn empty_input_gives_no_trees() {
        assert!(parse_bracketed("").unwrap().is_empty());
        assert!(parse_bracketed("  \n ").unwrap().is_empty());
    }
}
