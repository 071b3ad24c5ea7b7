//! Words, their graphs, and Füredi–Komlós sentences.
//!
//! A word is a finite sequence of positive integer letters; consecutive letters
//! `s_i s_{i+1}` traverse the undirected edge `{s_i, s_{i+1}}`. Sentences are
//! sequences of words whose joint graph is the union of the word graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::error::{Error, Result};

pub type Letter = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn new(letters: Vec<Letter>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::InvalidInput("a word has at least one letter".into()));
        }
        if letters.contains(&0) {
            return Err(Error::InvalidInput("letters are positive integers".into()));
        }
        Ok(Word(letters))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    /// Length `l(w)`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Letter {
        self.0[0]
    }

    pub fn is_closed(&self) -> bool {
        self.0.first() == self.0.last()
    }

    /// `supp(w)`, sorted.
    pub fn support(&self) -> BTreeSet<Letter> {
        self.0.iter().copied().collect()
    }

    /// `wt(w) = |supp(w)|`.
    pub fn weight(&self) -> usize {
        self.support().len()
    }

    /// Edges in traversal order.
    pub fn steps(&self) -> impl Iterator<Item = Edge> + '_ {
        self.0.windows(2).map(|p| Edge::new(p[0], p[1]))
    }

    pub fn relabel(&self, f: impl Fn(Letter) -> Letter) -> Word {
        Word(self.0.iter().map(|&x| f(x)).collect())
    }
}

impl FromStr for Word {
    type Err = Error;

    /// `"12134"` (one digit per letter) or `"1,2,10"` / `"1 2 10"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let letters: Vec<Letter> = if s.contains(',') || s.contains(char::is_whitespace) {
            s.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<Letter>().map_err(|_| Error::InvalidInput(format!("bad letter {t:?}"))))
                .collect::<Result<_>>()?
        } else {
            s.chars()
                .map(|c| {
                    c.to_digit(10)
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::InvalidInput(format!("bad letter {c:?} in {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        Word::new(letters)
    }
}

impl TryFrom<String> for Word {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Word> for String {
    fn from(w: Word) -> String {
        w.to_string()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&x| x <= 9) {
            for x in &self.0 {
                write!(f, "{x}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
            write!(f, "{}", parts.join(","))
        }
    }
}

/// Undirected edge `{a, b}` with `a <= b`; `a == b` is a loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge(pub Letter, pub Letter);

impl Edge {
    pub fn new(a: Letter, b: Letter) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.0, self.1)
    }
}

/// Vertices and edge passage counts of a word or sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordGraph {
    pub vertices: Vec<Letter>,
    #[serde(with = "passages_as_list")]
    pub passages: BTreeMap<Edge, usize>,
}

/// JSON object keys must be strings, so passages travel as `[[a, b], count]` pairs.
mod passages_as_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Edge;

    pub fn serialize<S: Serializer>(m: &BTreeMap<Edge, usize>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<(Edge, usize)> = m.iter().map(|(e, k)| (*e, *k)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Edge, usize>, D::Error> {
        Ok(Vec::<(Edge, usize)>::deserialize(d)?.into_iter().collect())
    }
}

impl WordGraph {
    fn from_words<'a>(words: impl IntoIterator<Item = &'a Word>) -> Self {
        let mut vertices = BTreeSet::new();
        let mut passages = BTreeMap::new();
        for w in words {
            vertices.extend(w.letters().iter().copied());
            for e in w.steps() {
                *passages.entry(e).or_insert(0) += 1;
            }
        }
        WordGraph {
            vertices: vertices.into_iter().collect(),
            passages,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.passages.len()
    }

    pub fn passage_count(&self, e: Edge) -> usize {
        self.passages.get(&e).copied().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.vertices.first() else {
            return true;
        };
        let mut adj: BTreeMap<Letter, Vec<Letter>> = BTreeMap::new();
        for e in self.passages.keys() {
            adj.entry(e.0).or_default().push(e.1);
            adj.entry(e.1).or_default().push(e.0);
        }
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == self.vertices.len()
    }

    /// Connected with `|E| = |V| - 1` (loops count as edges, so they break tree-ness).
    pub fn is_tree(&self) -> bool {
        self.is_connected() && self.edge_count() + 1 == self.vertices.len()
    }
}

pub fn graph_of(w: &Word) -> WordGraph {
    WordGraph::from_words([w])
}

pub fn graph_of_sentence(words: &[Word]) -> WordGraph {
    WordGraph::from_words(words)
}

/// Edges jointly visited once, twice, and three or more times.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeClasses {
    pub e1: Vec<Edge>,
    pub e2: Vec<Edge>,
    pub e3: Vec<Edge>,
}

impl EdgeClasses {
    fn of(g: &WordGraph) -> Self {
        let mut c = EdgeClasses::default();
        for (&e, &k) in &g.passages {
            match k {
                1 => c.e1.push(e),
                2 => c.e2.push(e),
                _ => c.e3.push(e),
            }
        }
        c
    }

    /// 1, 2 or 3 for an edge of the graph.
    pub fn class_of(&self, e: Edge) -> Option<u8> {
        if self.e1.contains(&e) {
            Some(1)
        } else if self.e2.contains(&e) {
            Some(2)
        } else if self.e3.contains(&e) {
            Some(3)
        } else {
            None
        }
    }
}

pub fn classify_sentence_edges(words: &[Word]) -> EdgeClasses {
    EdgeClasses::of(&graph_of_sentence(words))
}

/// Counting inequalities for a closed word of length `2k + 1` and weight `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedWordBounds {
    pub two_k: usize,
    pub t: usize,
    pub e1: usize,
    pub e2: usize,
    pub e3: usize,
    pub has_cycle: bool,
    /// `2k >= E1 + 2 E2 + 3 E3`.
    pub passages_bound: bool,
    /// `t <= E1 + E2 + E3`; holds exactly when the graph has a cycle.
    pub weight_bound_strict: bool,
    /// `t - 1 <= E1 + E2 + E3`; holds for every connected graph.
    pub weight_bound: bool,
    /// `k - t + E1/2 >= E3/2`, derived from the strict weight bound.
    pub e3_bound_strict: bool,
    /// `k - t + 1 + E1/2 >= E3/2`, derived from the connected weight bound.
    pub e3_bound: bool,
}

pub fn check_closed_word_bounds(w: &Word) -> Result<ClosedWordBounds> {
    if !w.is_closed() || w.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("{w} is not a closed word of odd length")));
    }
    let g = graph_of(w);
    let c = EdgeClasses::of(&g);
    let (two_k, t) = (w.len() - 1, w.weight());
    let (e1, e2, e3) = (c.e1.len(), c.e2.len(), c.e3.len());
    let edges = e1 + e2 + e3;
    let k = two_k as i64 / 2;
    let (ti, e1i, e3i) = (t as i64, e1 as i64, e3 as i64);
    Ok(ClosedWordBounds {
        two_k,
        t,
        e1,
        e2,
        e3,
        has_cycle: edges >= t,
        passages_bound: two_k >= e1 + 2 * e2 + 3 * e3,
        weight_bound_strict: t <= edges,
        weight_bound: t <= edges + 1,
        e3_bound_strict: 2 * (k - ti) + e1i >= e3i,
        e3_bound: 2 * (k - ti + 1) + e1i >= e3i,
    })
}

/// A parsed sentence with its joint graph and edge classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FkSentence {
    pub words: Vec<Word>,
    pub graph: WordGraph,
    pub e1: Vec<Edge>,
    pub e2: Vec<Edge>,
    pub e3: Vec<Edge>,
}

/// Why a sentence is not an FK sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FkViolation {
    NotATree,
    EdgeOverVisited { edge: Edge, passages: usize },
    StartOutsideSupport { word: usize },
    IdentityFails { m: i64, rhs: i64 },
}

impl fmt::Display for FkViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FkViolation::NotATree => write!(f, "sentence graph is not a tree"),
            FkViolation::EdgeOverVisited { edge, passages } => {
                write!(f, "edge {edge} visited {passages} times")
            }
            FkViolation::StartOutsideSupport { word } => {
                write!(f, "word {word} starts outside the support of the earlier words")
            }
            FkViolation::IdentityFails { m, rhs } => {
                write!(f, "m = {m} but #E1 - 2 wt + 2 + sum l = {rhs}")
            }
        }
    }
}

impl FkSentence {
    pub fn from_words(words: Vec<Word>) -> Self {
        let graph = graph_of_sentence(&words);
        let c = EdgeClasses::of(&graph);
        FkSentence {
            words,
            graph,
            e1: c.e1,
            e2: c.e2,
            e3: c.e3,
        }
    }

    /// Number of words `m`.
    pub fn m(&self) -> usize {
        self.words.len()
    }

    pub fn total_len(&self) -> usize {
        self.words.iter().map(Word::len).sum()
    }

    pub fn weight(&self) -> usize {
        self.graph.vertices.len()
    }

    /// `#E¹ - 2 wt + 2 + Σ l(w_i)`.
    pub fn identity_rhs(&self) -> i64 {
        self.e1.len() as i64 - 2 * self.weight() as i64 + 2 + self.total_len() as i64
    }

    /// Checks every FK sentence invariant, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), FkViolation> {
        if let Some(&e) = self.e3.first() {
            return Err(FkViolation::EdgeOverVisited {
                edge: e,
                passages: self.graph.passage_count(e),
            });
        }
        if !self.graph.is_tree() {
            return Err(FkViolation::NotATree);
        }
        let mut support: BTreeSet<Letter> = BTreeSet::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 && !support.contains(&w.first()) {
                return Err(FkViolation::StartOutsideSupport { word: i });
            }
            support.extend(w.letters().iter().copied());
        }
        let (m, rhs) = (self.m() as i64, self.identity_rhs());
        if m != rhs {
            return Err(FkViolation::IdentityFails { m, rhs });
        }
        Ok(())
    }
}

/// FK syllabification.
///
/// An edge is new when its first traversal enters a letter not seen before.
/// The word is broken before `s_{i+1}` whenever the step `s_i s_{i+1}` traverses
/// an old edge, or traverses a new edge for the third or later time.
pub fn fk_syllabify(w: &Word) -> FkSentence {
    let letters = w.letters();
    let mut seen: BTreeSet<Letter> = BTreeSet::from([letters[0]]);
    let mut status: BTreeMap<Edge, (bool, usize)> = BTreeMap::new();
    let mut words = Vec::new();
    let mut current = vec![letters[0]];
    for pair in letters.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let e = Edge::new(a, b);
        let entry = status.entry(e).or_insert((!seen.contains(&b), 0));
        entry.1 += 1;
        let cut = !entry.0 || entry.1 >= 3;
        if cut {
            words.push(Word(std::mem::take(&mut current)));
        }
        current.push(b);
        seen.insert(b);
    }
    words.push(Word(current));
    FkSentence::from_words(words)
}

/// Unique splitting of an FK word into disjoint Wigner words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WignerDecomposition {
    pub blocks: Vec<Word>,
    /// First letters of the blocks.
    pub acronym: Word,
}

/// Closed, tree graph, every edge traversed exactly twice.
pub fn is_wigner_word(w: &Word) -> bool {
    let g = graph_of(w);
    w.is_closed() && g.is_tree() && g.passages.values().all(|&k| k == 2)
}

pub fn fk_word_decompose(w: &Word) -> Result<WignerDecomposition> {
    let g = graph_of(w);
    if let Some((e, k)) = g.passages.iter().find(|(_, &k)| k > 2) {
        return Err(Error::InvalidInput(format!("{w} is not an FK word: edge {e} visited {k} times")));
    }
    if !g.is_tree() {
        return Err(Error::InvalidInput(format!("{w} is not an FK word: its graph is not a tree")));
    }
    let letters = w.letters();
    let mut blocks = Vec::new();
    let mut current = vec![letters[0]];
    for pair in letters.windows(2) {
        if g.passage_count(Edge::new(pair[0], pair[1])) == 1 {
            blocks.push(Word(std::mem::take(&mut current)));
        }
        current.push(pair[1]);
    }
    blocks.push(Word(current));
    let mut used: BTreeSet<Letter> = BTreeSet::new();
    for b in &blocks {
        if !is_wigner_word(b) {
            return Err(Error::InvalidInput(format!("{w}: block {b} is not a Wigner word")));
        }
        let s = b.support();
        if !used.is_disjoint(&s) {
            return Err(Error::InvalidInput(format!("{w}: block {b} shares letters with an earlier block")));
        }
        used.extend(s);
    }
    let acronym = Word(blocks.iter().map(Word::first).collect());
    Ok(WignerDecomposition { blocks, acronym })
}

/// Exact class count for one `(k, l, m)` cell next to its counting bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkClassCount {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub count: u64,
    /// `2^{l-m} C(l-1, m-1) k^{2(m-1)}`.
    pub bound: f64,
}

fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn fk_class_bound(k: usize, l: usize, m: usize) -> f64 {
    if m == 0 || m > l {
        return 0.0;
    }
    2f64.powi((l - m) as i32) * binomial(l - 1, m - 1) * (k as f64).powi(2 * (m as i32 - 1))
}

/// Depth-first generation of canonical FK sentences (letters numbered by first appearance).
struct FkDfs {
    l: usize,
    /// Passage counts indexed by `a * (l + 2) + b` with `a < b`.
    counts: Vec<u8>,
    stride: usize,
    filter: Option<(usize, usize)>,
    tally: BTreeMap<(usize, usize), u64>,
}

impl FkDfs {
    fn new(l: usize, filter: Option<(usize, usize)>) -> Self {
        let stride = l + 2;
        FkDfs {
            l,
            counts: vec![0; stride * stride],
            stride,
            filter,
            tally: BTreeMap::new(),
        }
    }

    fn idx(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a * self.stride + b
    }

    /// `pos` letters placed, the last being `cur`; `max` letters in use; `words` words started.
    fn go(&mut self, pos: usize, cur: usize, max: usize, words: usize) {
        let left = self.l - pos;
        if let Some((k, m)) = self.filter {
            if max > k || words > m || max + left < k || words + left < m {
                return;
            }
        }
        if left == 0 {
            *self.tally.entry((max, words)).or_insert(0) += 1;
            return;
        }
        // continue the current word along a new edge
        let fresh = max + 1;
        let e = self.idx(cur, fresh);
        self.counts[e] = 1;
        self.go(pos + 1, fresh, fresh, words);
        self.counts[e] = 0;
        // or retrace an edge seen once
        for c in 1..=max {
            if c == cur {
                continue;
            }
            let e = self.idx(cur, c);
            if self.counts[e] == 1 {
                self.counts[e] = 2;
                self.go(pos + 1, c, max, words);
                self.counts[e] = 1;
            }
        }
        // or start a new word inside the current support
        for c in 1..=max {
            self.go(pos + 1, c, max, words + 1);
        }
    }
}

fn bell(l: usize) -> f64 {
    // Bell triangle
    let mut row = vec![1.0f64];
    for _ in 1..l {
        let mut next = vec![*row.last().expect("nonempty")];
        for &x in &row {
            next.push(next.last().expect("nonempty") + x);
        }
        row = next;
    }
    *row.last().expect("nonempty")
}

/// Canonical letter strings times word breaks times depth.
fn class_budget(l: usize, budget: &Budget) -> Result<()> {
    let projected = l as f64 * 2f64.powi(l as i32 - 1) * bell(l);
    budget.check("enumerate_fk_classes", projected)
}

/// Number of equivalence classes of FK sentences with `m` words, total length `l` and weight `k`.
pub fn enumerate_fk_classes(k: usize, l: usize, m: usize, budget: &Budget) -> Result<FkClassCount> {
    let bound = fk_class_bound(k, l, m);
    if m == 0 || m > l || k == 0 || k > l || l == 0 {
        return Ok(FkClassCount { k, l, m, count: 0, bound });
    }
    class_budget(l, budget)?;
    let mut dfs = FkDfs::new(l, Some((k, m)));
    dfs.go(1, 1, 1, 1);
    let count = dfs.tally.get(&(k, m)).copied().unwrap_or(0);
    Ok(FkClassCount { k, l, m, count, bound })
}

/// Every nonempty `(k, m)` cell at total length `l`, from a single traversal.
pub fn fk_class_table(l: usize, budget: &Budget) -> Result<Vec<FkClassCount>> {
    if l == 0 {
        return Ok(Vec::new());
    }
    class_budget(l, budget)?;
    let mut dfs = FkDfs::new(l, None);
    dfs.go(1, 1, 1, 1);
    Ok(dfs
        .tally
        .into_iter()
        .map(|((k, m), count)| FkClassCount {
            k,
            l,
            m,
            count,
            bound: fk_class_bound(k, l, m),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(w("121").letters(), &[1, 2, 1]);
        assert_eq!(w("1,2,10").letters(), &[1, 2, 10]);
        assert_eq!(w("1,2,10").to_string(), "1,2,10");
        assert!("102".parse::<Word>().is_err());
        assert!("".parse::<Word>().is_err());
    }

    #[test]
    fn tiny_graphs() {
        let g = graph_of(&w("1"));
        assert_eq!((g.vertices.len(), g.edge_count()), (1, 0));
        let g = graph_of(&w("121"));
        assert_eq!(g.vertices, vec![1, 2]);
        assert_eq!(g.passage_count(Edge::new(1, 2)), 2);
    }

    #[test]
    fn up_down_walk_is_one_word() {
        let s = fk_syllabify(&w("12321"));
        assert_eq!(s.words, vec![w("12321")]);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn alternating_walk_breaks() {
        let s = fk_syllabify(&w("121212"));
        assert_eq!(s.words, vec![w("121"), w("2"), w("1"), w("2")]);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn loops_always_break() {
        let s = fk_syllabify(&w("1121"));
        assert_eq!(s.words, vec![w("1"), w("121")]);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn decompose_examples() {
        let d = fk_word_decompose(&w("12321")).unwrap();
        assert_eq!(d.blocks, vec![w("12321")]);
        assert_eq!(d.acronym, w("1"));
        let d = fk_word_decompose(&w("12")).unwrap();
        assert_eq!(d.blocks, vec![w("1"), w("2")]);
        assert_eq!(d.acronym, w("12"));
        let d = fk_word_decompose(&w("1213431")).unwrap();
        assert_eq!(d.blocks, vec![w("1213431")]);
        let d = fk_word_decompose(&w("12324")).unwrap();
        assert_eq!(d.blocks, vec![w("1"), w("232"), w("4")]);
        assert!(fk_word_decompose(&w("12121")).is_err());
        assert!(fk_word_decompose(&w("1231")).is_err());
    }

    #[test]
    fn small_cells() {
        let b = Budget::new(1e9);
        assert_eq!(enumerate_fk_classes(2, 2, 1, &b).unwrap().count, 1);
        assert_eq!(enumerate_fk_classes(1, 1, 1, &b).unwrap().count, 1);
        assert_eq!(enumerate_fk_classes(3, 2, 3, &b).unwrap().count, 0);
        // "1","1" is the only two-word sentence of length 2 and weight 1
        assert_eq!(enumerate_fk_classes(1, 2, 2, &b).unwrap().count, 1);
        assert_eq!([bell(1), bell(4), bell(6)], [1.0, 15.0, 203.0]);
    }

    #[test]
    fn bounds_on_tree_and_cycle() {
        let tree = check_closed_word_bounds(&w("121")).unwrap();
        assert!(tree.weight_bound && !tree.weight_bound_strict && !tree.has_cycle);
        let cyc = check_closed_word_bounds(&w("1231231")).unwrap();
        assert!(cyc.weight_bound_strict && cyc.has_cycle && cyc.e3_bound_strict);
        assert!(check_closed_word_bounds(&w("12")).is_err());
    }
}
