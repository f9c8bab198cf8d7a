//! Binary trees and their bracket-string encoding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTree {
    Leaf(String),
    Node(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn leaf(s: impl Into<String>) -> Self {
        BinaryTree::Leaf(s.into())
    }

    pub fn node(l: BinaryTree, r: BinaryTree) -> Self {
        BinaryTree::Node(Box::new(l), Box::new(r))
    }

    /// Leaf depth 0; a node is one deeper than its deepest child.
    pub fn depth(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 0,
            BinaryTree::Node(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 1,
            BinaryTree::Node(l, r) => l.leaves() + r.leaves(),
        }
    }

    /// Length of the bracket string: `3·leaves − 2`.
    pub fn token_len(&self) -> usize {
        3 * self.leaves() - 2
    }

    pub fn leaf_symbols(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(t: &'a BinaryTree, out: &mut Vec<&'a str>) {
            match t {
                BinaryTree::Leaf(s) => out.push(s),
                BinaryTree::Node(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let toks = tree_tokens(self);
        let spaced = toks.iter().any(|t| matches!(t, Token::Sym(s) if s.chars().count() != 1));
        let sep = if spaced { " " } else { "" };
        let parts: Vec<String> = toks.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(sep))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Open,
    Close,
    Sym(String),
}

impl Token {
    /// +1 for an opening bracket, −1 for a closing one, 0 for a symbol.
    pub fn marker(&self) -> i8 {
        match self {
            Token::Open => 1,
            Token::Close => -1,
            Token::Sym(_) => 0,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Open => f.write_str("("),
            Token::Close => f.write_str(")"),
            Token::Sym(s) => f.write_str(s),
        }
    }
}

/// Bracket string of a tree with its parse-structure annotations.
///
/// Positions in `index_set` and `spans` are 1-based; `markers` and `depths`
/// are indexed from 0 (entry `i − 1` describes position `i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEncoding {
    pub tokens: Vec<Token>,
    pub index_set: Vec<usize>,
    pub spans: BTreeMap<usize, (usize, usize)>,
    pub markers: Vec<i8>,
    pub depths: Vec<usize>,
}

impl TreeEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        tokens_to_text(&self.tokens)
    }
}

pub fn tokens_to_text(tokens: &[Token]) -> String {
    let spaced = tokens.iter().any(|t| matches!(t, Token::Sym(s) if s.chars().count() != 1));
    let parts: Vec<String> = tokens.iter().map(ToString::to_string).collect();
    parts.join(if spaced { " " } else { "" })
}

fn tree_tokens(t: &BinaryTree) -> Vec<Token> {
    let mut out = Vec::with_capacity(t.token_len());
    fn walk(t: &BinaryTree, out: &mut Vec<Token>) {
        match t {
            BinaryTree::Leaf(s) => out.push(Token::Sym(s.clone())),
            BinaryTree::Node(l, r) => {
                out.push(Token::Open);
                walk(l, out);
                walk(r, out);
                out.push(Token::Close);
            }
        }
    }
    walk(t, &mut out);
    out
}

pub fn tree_to_str(t: &BinaryTree) -> TreeEncoding {
    let tokens = tree_tokens(t);
    let markers: Vec<i8> = tokens.iter().map(Token::marker).collect();
    let mut depths = Vec::with_capacity(tokens.len());
    let mut balance = 0i64;
    for m in &markers {
        depths.push(balance as usize);
        balance += *m as i64;
    }
    let mut spans = BTreeMap::new();
    let mut stack = Vec::new();
    for (p, tok) in tokens.iter().enumerate() {
        let pos = p + 1;
        match tok {
            Token::Sym(_) => {
                spans.insert(pos, (pos, pos));
            }
            Token::Open => stack.push(pos),
            Token::Close => {
                let open = stack.pop().expect("generated strings are balanced");
                spans.insert(open, (open, pos));
            }
        }
    }
    let index_set = spans.keys().copied().collect();
    TreeEncoding { tokens, index_set, spans, markers, depths }
}

pub fn str_to_tree(tokens: &[Token]) -> Result<BinaryTree> {
    let mut pos = 0;
    let t = parse_at(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::TreeParse { position: pos + 1, message: "trailing tokens".into() });
    }
    Ok(t)
}

fn parse_at(tokens: &[Token], pos: &mut usize) -> Result<BinaryTree> {
    let err = |p: usize, m: &str| Error::TreeParse { position: p + 1, message: m.to_string() };
    match tokens.get(*pos) {
        None => Err(err(*pos, "unexpected end of input")),
        Some(Token::Sym(s)) => {
            *pos += 1;
            Ok(BinaryTree::Leaf(s.clone()))
        }
        Some(Token::Close) => Err(err(*pos, "unexpected closing bracket")),
        Some(Token::Open) => {
            let start = *pos;
            *pos += 1;
            if matches!(tokens.get(*pos), Some(Token::Close)) {
                return Err(err(start, "empty node"));
            }
            let l = parse_at(tokens, pos)?;
            if matches!(tokens.get(*pos), Some(Token::Close)) {
                return Err(err(*pos, "node has a single child"));
            }
            let r = parse_at(tokens, pos)?;
            match tokens.get(*pos) {
                Some(Token::Close) => {
                    *pos += 1;
                    Ok(BinaryTree::node(l, r))
                }
                None => Err(err(start, "unbalanced bracket")),
                Some(_) => Err(err(*pos, "node has more than two children")),
            }
        }
    }
}

/// Splits tree text into tokens. Brackets are always tokens. If the text has
/// whitespace, symbols are whitespace-separated runs; otherwise every other
/// character is a symbol.
pub fn tokenize_tree(text: &str) -> Vec<Token> {
    let spaced = text.trim().chars().any(char::is_whitespace);
    let mut out = Vec::new();
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut Vec<Token>| {
        if !run.is_empty() {
            out.push(Token::Sym(std::mem::take(run)));
        }
    };
    for c in text.chars() {
        match c {
            '(' | ')' => {
                flush(&mut run, &mut out);
                out.push(if c == '(' { Token::Open } else { Token::Close });
            }
            c if c.is_whitespace() => flush(&mut run, &mut out),
            c if spaced => run.push(c),
            c => out.push(Token::Sym(c.to_string())),
        }
    }
    flush(&mut run, &mut out);
    out
}

pub fn parse_tree(text: &str) -> Result<BinaryTree> {
    str_to_tree(&tokenize_tree(text))
}
