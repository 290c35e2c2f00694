//! Agglomerative clustering of correlation matrices and Newick trees.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    /// UPGMA.
    #[default]
    Average,
    Complete,
}

/// `1 − R`, clamped to `[0, 2]` with an exact zero diagonal.
pub fn dissimilarity(corr: &DMatrix<f64>) -> DMatrix<f64> {
    let n = corr.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (1.0 - corr[(i, j)]).clamp(0.0, 2.0) })
}

/// Node `n + m` is created by merge `m`; nodes `0..n` are leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dendrogram {
    labels: Vec<String>,
    merges: Vec<Merge>,
}

/// Ordered-children view used for structural comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf(String),
    Internal { height: f64, children: Vec<TreeNode> },
}

impl PartialEq for Dendrogram {
    /// Same labelled tree with identical heights, children in leaf order.
    fn eq(&self, other: &Self) -> bool {
        self.tree() == other.tree()
    }
}

impl Dendrogram {
    pub fn from_merges(labels: Vec<String>, merges: Vec<Merge>) -> Result<Self> {
        let n = labels.len();
        if n < 1 || merges.len() + 1 != n {
            return Err(Error::Validation(format!(
                "{n} leaves need {} merges, got {}",
                n.saturating_sub(1),
                merges.len()
            )));
        }
        let mut used = vec![false; 2 * n - 1];
        let mut size = vec![1usize; 2 * n - 1];
        for (m, mg) in merges.iter().enumerate() {
            let node = n + m;
            for c in [mg.left, mg.right] {
                if c >= node || used[c] {
                    return Err(Error::Validation(format!("merge {m} has an invalid child {c}")));
                }
                used[c] = true;
            }
            if !(mg.height.is_finite() && mg.height >= 0.0) {
                return Err(Error::Validation(format!("merge {m} has an invalid height")));
            }
            size[node] = size[mg.left] + size[mg.right];
            if size[node] != mg.size {
                return Err(Error::Validation(format!("merge {m} has the wrong size")));
            }
        }
        Ok(Dendrogram { labels, merges })
    }

    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    fn root(&self) -> usize {
        2 * self.n_leaves() - 2
    }

    pub fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves() {
            0.0
        } else {
            self.merges[node - self.n_leaves()].height
        }
    }

    fn min_leaf(&self) -> Vec<usize> {
        let n = self.n_leaves();
        let mut out: Vec<usize> = (0..n).collect();
        for mg in &self.merges {
            out.push(out[mg.left].min(out[mg.right]));
        }
        out
    }

    /// Children of an internal node in display order. Between two subtrees
    /// the tighter one (lower merge height) goes first; a single leaf is
    /// placed by index, as are subtrees of equal height.
    fn ordered_children(&self, node: usize, min_leaf: &[usize]) -> [usize; 2] {
        let n = self.n_leaves();
        let mg = &self.merges[node - n];
        let (l, r) = (mg.left, mg.right);
        let left_first = if l >= n && r >= n && self.height(l) != self.height(r) {
            self.height(l) < self.height(r)
        } else {
            min_leaf[l] < min_leaf[r]
        };
        if left_first {
            [l, r]
        } else {
            [r, l]
        }
    }

    /// Leaves in display order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.n_leaves();
        if n == 1 {
            return vec![0];
        }
        let min_leaf = self.min_leaf();
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            if node < n {
                out.push(node);
            } else {
                let [a, b] = self.ordered_children(node, &min_leaf);
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    pub fn tree(&self) -> TreeNode {
        let n = self.n_leaves();
        if n == 1 {
            return TreeNode::Leaf(self.labels[0].clone());
        }
        let min_leaf = self.min_leaf();
        self.subtree(self.root(), &min_leaf)
    }

    fn subtree(&self, node: usize, min_leaf: &[usize]) -> TreeNode {
        if node < self.n_leaves() {
            return TreeNode::Leaf(self.labels[node].clone());
        }
        TreeNode::Internal {
            height: self.height(node),
            children: self
                .ordered_children(node, min_leaf)
                .iter()
                .map(|&c| self.subtree(c, min_leaf))
                .collect(),
        }
    }

    /// Flat clustering into `k` groups by undoing the `k − 1` last merges.
    /// Labels are numbered in order of each cluster's lowest member.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves();
        if k < 1 || k > n {
            return Err(Error::Domain(format!("cluster count {k} outside 1..={n}")));
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        for (m, mg) in self.merges.iter().take(n - k).enumerate() {
            parent[mg.left] = n + m;
            parent[mg.right] = n + m;
        }
        let top = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut ids: Vec<Option<usize>> = vec![None; 2 * n - 1];
        let mut next = 0;
        let mut out = Vec::with_capacity(n);
        for leaf in 0..n {
            let t = top(leaf);
            let id = *ids[t].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            out.push(id);
        }
        Ok(out)
    }

    pub fn to_newick(&self) -> String {
        let n = self.n_leaves();
        let mut s = String::new();
        if n == 1 {
            s.push_str(&quote_label(&self.labels[0]));
        } else {
            let min_leaf = self.min_leaf();
            self.write_node(self.root(), &min_leaf, &mut s);
        }
        s.push(';');
        s
    }

    fn write_node(&self, node: usize, min_leaf: &[usize], s: &mut String) {
        if node < self.n_leaves() {
            s.push_str(&quote_label(&self.labels[node]));
            return;
        }
        let h = self.height(node);
        let kids = self.ordered_children(node, min_leaf);
        let lengths: Vec<Option<f64>> = kids.iter().map(|&c| exact_branch_length(self.height(c), h)).collect();
        s.push('(');
        for (idx, &c) in kids.iter().enumerate() {
            if idx > 0 {
                s.push(',');
            }
            self.write_node(c, min_leaf, s);
            let b = lengths[idx].unwrap_or(h - self.height(c));
            let _ = write!(s, ":{b}");
        }
        s.push(')');
        // Rare rounding ties: pin the height in a comment that other tools ignore.
        if lengths.iter().any(Option::is_none) {
            let _ = write!(s, "[&height={h}]");
        }
    }

    pub fn from_newick(text: &str) -> Result<Self> {
        Parser::new(text).parse()
    }
}

/// A branch length `b` with `child + b == parent` exactly in floating point,
/// so heights survive a write/parse cycle. None when rounding makes that
/// impossible.
fn exact_branch_length(child: f64, parent: f64) -> Option<f64> {
    let mut b = parent - child;
    for _ in 0..8 {
        let got = child + b;
        if got == parent {
            return Some(b);
        }
        b = if got < parent { b.next_up() } else { b.next_down() };
    }
    None
}

fn quote_label(label: &str) -> String {
    let plain = !label.is_empty()
        && !label
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,_".contains(c));
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

/// Average or complete linkage over a dissimilarity matrix. At each step the
/// closest pair is merged; among equal distances the pair whose clusters have
/// the lowest smallest-member indices wins.
pub fn agglomerate(diss: &DMatrix<f64>, labels: &[String], linkage: Linkage) -> Result<Dendrogram> {
    let n = diss.nrows();
    if n < 2 {
        return Err(Error::Domain("clustering needs at least two entities".into()));
    }
    if diss.ncols() != n || labels.len() != n {
        return Err(Error::Validation("dissimilarity matrix and labels do not match".into()));
    }
    for i in 0..n {
        if diss[(i, i)] != 0.0 {
            return Err(Error::Validation(format!("dissimilarity diagonal entry {i} is not zero")));
        }
        for j in 0..n {
            let v = diss[(i, j)];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("dissimilarity ({i}, {j}) is not a nonnegative number")));
            }
            if (v - diss[(j, i)]).abs() > 1e-12 {
                return Err(Error::Validation("dissimilarity matrix is not symmetric".into()));
            }
        }
    }
    let mut w = diss.clone();
    // Slot s holds the cluster whose smallest member is s.
    let mut node: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for m in 0..n - 1 {
        let active: Vec<usize> = (0..n).filter(|&s| node[s].is_some()).collect();
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                if w[(a, b)] < best.0 {
                    best = (w[(a, b)], a, b);
                }
            }
        }
        let (h, a, b) = best;
        let (na, nb) = (size[a], size[b]);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let v = match linkage {
                Linkage::Average => (na as f64 * w[(a, k)] + nb as f64 * w[(b, k)]) / (na + nb) as f64,
                Linkage::Complete => w[(a, k)].max(w[(b, k)]),
            };
            w[(a, k)] = v;
            w[(k, a)] = v;
        }
        merges.push(Merge {
            left: node[a].expect("active"),
            right: node[b].expect("active"),
            height: h,
            size: na + nb,
        });
        node[a] = Some(n + m);
        node[b] = None;
        size[a] = na + nb;
    }
    Dendrogram::from_merges(labels.to_vec(), merges)
}

#[derive(Clone, Copy)]
enum Ref {
    Leaf(usize),
    /// Index into the parser's post-order list of internal nodes.
    Internal(usize),
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    labels: Vec<String>,
    /// Children, height and depth in edges above the deepest leaf.
    internal: Vec<(Ref, Ref, f64, usize)>,
}

type Parsed = (Ref, f64, usize);

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            pos: 0,
            labels: Vec::new(),
            internal: Vec::new(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: "<newick>".into(),
            row: 1,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn parse(mut self) -> Result<Dendrogram> {
        self.node()?;
        self.skip_ws();
        if self.peek() == Some(':') {
            self.pos += 1;
            self.number()?;
        }
        self.expect(';')?;
        self.skip_ws();
        if self.pos != self.text.len() {
            return Err(self.err("trailing text after `;`"));
        }
        let n = self.labels.len();
        // Merge order: by height, children before parents on ties.
        let mut order: Vec<usize> = (0..self.internal.len()).collect();
        order.sort_by(|&x, &y| {
            let (a, b) = (&self.internal[x], &self.internal[y]);
            a.2.total_cmp(&b.2).then(a.3.cmp(&b.3)).then(x.cmp(&y))
        });
        let mut id = vec![0usize; self.internal.len()];
        for (rank, &k) in order.iter().enumerate() {
            id[k] = n + rank;
        }
        let node = |r: Ref| match r {
            Ref::Leaf(i) => i,
            Ref::Internal(k) => id[k],
        };
        let mut size = vec![1usize; 2 * n - 1];
        let mut merges = Vec::with_capacity(order.len());
        for (m, &k) in order.iter().enumerate() {
            let (l, r, h, _) = self.internal[k];
            let (left, right) = (node(l), node(r));
            size[n + m] = size[left] + size[right];
            merges.push(Merge {
                left,
                right,
                height: h,
                size: size[n + m],
            });
        }
        Dendrogram::from_merges(self.labels, merges)
    }

    fn node(&mut self) -> Result<Parsed> {
        self.skip_ws();
        if self.peek() == Some('(') {
            self.pos += 1;
            let mut kids = Vec::new();
            loop {
                let (r, h, depth) = self.node()?;
                self.expect(':')?;
                let b = self.number()?;
                kids.push((r, h + b, depth));
                self.skip_ws();
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)`")),
                }
            }
            if kids.len() != 2 {
                return Err(self.err("only binary trees are supported"));
            }
            let h = match self.height_comment()? {
                Some(h) => h,
                None => {
                    if kids[1].1 != kids[0].1 {
                        return Err(self.err("children disagree on the parent height"));
                    }
                    kids[0].1
                }
            };
            // Internal labels are ignored.
            self.label()?;
            let depth = kids[0].2.max(kids[1].2) + 1;
            self.internal.push((kids[0].0, kids[1].0, h, depth));
            Ok((Ref::Internal(self.internal.len() - 1), h, depth))
        } else {
            let label = self.label()?;
            self.labels.push(label);
            Ok((Ref::Leaf(self.labels.len() - 1), 0.0, 0))
        }
    }

    /// An optional `[&height=…]` comment; other comments are skipped.
    fn height_comment(&mut self) -> Result<Option<f64>> {
        self.skip_ws();
        if self.peek() != Some('[') {
            return Ok(None);
        }
        let start = self.pos + 1;
        let Some(len) = self.text[start..].find(']') else {
            return Err(self.err("unterminated comment"));
        };
        let body = &self.text[start..start + len];
        self.pos = start + len + 1;
        match body.strip_prefix("&height=") {
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.err("invalid height comment")),
            None => Ok(None),
        }
    }

    fn label(&mut self) -> Result<String> {
        self.skip_ws();
        if self.peek() == Some('\'') {
            self.pos += 1;
            let mut out = String::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some('\'') => {
                        self.pos += 1;
                        if self.peek() == Some('\'') {
                            self.pos += 1;
                            out.push('\'');
                        } else {
                            return Ok(out);
                        }
                    }
                    Some(c) => {
                        self.pos += c.len_utf8();
                        out.push(c);
                    }
                }
            }
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if "():;,[]'".contains(c) || c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
        Ok(self.text[start..self.pos].replace('_', " "))
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || "+-.eE".contains(c) || c.is_ascii_alphabetic() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        self.text[start..self.pos]
            .parse::<f64>()
            .map_err(|_| self.err("invalid branch length"))
    }
}
