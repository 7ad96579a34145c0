//! Review graph construction.
//!
//! Every relation is a clique expansion over a grouping key; relations are
//! unioned into one undirected neighbor set, deduplicated, and every node
//! gets a self-loop so attention over `N(i)` is never empty.
//!
//! Binary layout (`RGPH`, little-endian):
//!
//! ```text
//! magic   b"RGPH"
//! version u32            (= 1)
//! n_nodes u64
//! n_entries u64          directed entries incl. self-loops
//! offsets u64 x (n+1)
//! neighbors u32 x n_entries
//! tags    u8  x n_entries
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike};

use crate::error::{Error, Result};
use crate::records::{Label, QaRecord, ReviewRecord};

/// Per-entry relation bitmask. For QA graphs the three relation bits mean
/// same question / same asker+month / same answerer+month respectively.
pub mod relation {
    pub const SAME_USER: u8 = 1;
    pub const SAME_PRODUCT_RATING: u8 = 2;
    pub const SAME_PRODUCT_MONTH: u8 = 4;
    pub const SELF_LOOP: u8 = 8;

    pub const SAME_QUESTION: u8 = SAME_USER;
    pub const SAME_ASKER_MONTH: u8 = SAME_PRODUCT_RATING;
    pub const SAME_ANSWERER_MONTH: u8 = SAME_PRODUCT_MONTH;
}

const MAGIC: &[u8; 4] = b"RGPH";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct GraphOptions {
    /// Groups larger than this are skipped entirely. `None` expands every group.
    pub max_group_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewGraph {
    offsets: Vec<u64>,
    neighbors: Vec<u32>,
    tags: Vec<u8>,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub relation_edges: usize,
    pub directed_entries: usize,
    pub self_loops: usize,
    pub spam_nodes: usize,
    pub labeled_nodes: usize,
}

impl ReviewGraph {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_entries(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn tag_array(&self) -> &[u8] {
        &self.tags
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i] as usize..self.offsets[i + 1] as usize
    }

    /// Sorted neighbor list of `i`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.range(i)]
    }

    pub fn neighbor_tags(&self, i: usize) -> &[u8] {
        &self.tags[self.range(i)]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    pub fn tag(&self, i: usize, j: usize) -> Option<u8> {
        let r = self.range(i);
        self.neighbors[r.clone()]
            .binary_search(&(j as u32))
            .ok()
            .map(|k| self.tags[r.start + k])
    }

    /// Undirected relation edges `(i, j)` with `i < j`, self-loops excluded.
    pub fn relation_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_nodes() {
            for &j in self.neighbors(i) {
                if (j as usize) > i {
                    out.push((i, j as usize));
                }
            }
        }
        out
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.n_nodes() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n_nodes()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn stats(&self) -> GraphStats {
        let self_loops = (0..self.n_nodes())
            .filter(|&i| self.contains(i, i))
            .count();
        GraphStats {
            nodes: self.n_nodes(),
            relation_edges: (self.n_entries() - self_loops) / 2,
            directed_entries: self.n_entries(),
            self_loops,
            spam_nodes: self.labels.iter().filter(|l| **l == Label::Spam).count(),
            labeled_nodes: self.labels.iter().filter(|l| l.is_known()).count(),
        }
    }

    /// Builds from directed `(src, dst, tag)` entries; duplicates merge their tags.
    pub fn from_entries(n_nodes: usize, mut entries: Vec<(u32, u32, u8)>) -> Self {
        entries.sort_unstable_by_key(|&(s, d, _)| (s, d));
        let mut offsets = vec![0u64; n_nodes + 1];
        let mut neighbors = Vec::with_capacity(entries.len());
        let mut tags: Vec<u8> = Vec::with_capacity(entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (s, d, t) in entries {
            if last == Some((s, d)) {
                *tags.last_mut().expect("previous entry") |= t;
                continue;
            }
            last = Some((s, d));
            offsets[s as usize + 1] += 1;
            neighbors.push(d);
            tags.push(t);
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        ReviewGraph {
            offsets,
            neighbors,
            tags,
            labels: vec![Label::Unknown; n_nodes],
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n_nodes() as u64).to_le_bytes())?;
        w.write_all(&(self.n_entries() as u64).to_le_bytes())?;
        for o in &self.offsets {
            w.write_all(&o.to_le_bytes())?;
        }
        for n in &self.neighbors {
            w.write_all(&n.to_le_bytes())?;
        }
        w.write_all(&self.tags)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let trunc = |what: &str| Error::Format(format!("graph file truncated in {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| trunc("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad graph magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|_| trunc("version"))?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported graph version {version}")));
        }
        r.read_exact(&mut b8).map_err(|_| trunc("header"))?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| trunc("header"))?;
        let m = u64::from_le_bytes(b8) as usize;

        let mut buf = vec![0u8; (n + 1) * 8];
        r.read_exact(&mut buf).map_err(|_| trunc("offsets"))?;
        let offsets: Vec<u64> = buf
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut buf = vec![0u8; m * 4];
        r.read_exact(&mut buf).map_err(|_| trunc("neighbors"))?;
        let neighbors: Vec<u32> = buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut tags = vec![0u8; m];
        r.read_exact(&mut tags).map_err(|_| trunc("tags"))?;

        if offsets[0] != 0
            || offsets[n] as usize != m
            || offsets.windows(2).any(|w| w[0] > w[1])
            || neighbors.iter().any(|&j| j as usize >= n)
        {
            return Err(Error::Format("inconsistent CSR arrays".into()));
        }
        Ok(ReviewGraph {
            offsets,
            neighbors,
            tags,
            labels: vec![Label::Unknown; n],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// UTC (year, month) of an epoch-seconds timestamp.
pub fn utc_month(timestamp: i64) -> (i32, u32) {
    let dt = DateTime::from_timestamp(timestamp, 0).unwrap_or_default();
    (dt.year(), dt.month())
}

/// Clique expansion: all `g(g-1)/2` pairs `(a, b)` with `a < b` inside each group.
pub fn group_clique_edges<K>(groups: &BTreeMap<K, Vec<usize>>) -> Vec<(usize, usize)> {
    group_clique_edges_capped(groups, None)
}

fn group_clique_edges_capped<K>(
    groups: &BTreeMap<K, Vec<usize>>,
    cap: Option<usize>,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for members in groups.values() {
        if cap.is_some_and(|c| members.len() > c) {
            continue;
        }
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                out.push((i.min(j), i.max(j)));
            }
        }
    }
    out
}

fn group_by<K: Ord>(keys: impl Iterator<Item = K>) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.enumerate() {
        groups.entry(k).or_default().push(i);
    }
    groups
}

fn assemble(n: usize, relations: Vec<(Vec<(usize, usize)>, u8)>) -> ReviewGraph {
    let total: usize = relations.iter().map(|(e, _)| 2 * e.len()).sum();
    let mut entries = Vec::with_capacity(total + n);
    for (edges, tag) in relations {
        for (i, j) in edges {
            entries.push((i as u32, j as u32, tag));
            entries.push((j as u32, i as u32, tag));
        }
    }
    for i in 0..n {
        entries.push((i as u32, i as u32, relation::SELF_LOOP));
    }
    ReviewGraph::from_entries(n, entries)
}

pub fn build_review_graph(records: &[ReviewRecord]) -> ReviewGraph {
    build_review_graph_with(records, &GraphOptions::default())
}

pub fn build_review_graph_with(records: &[ReviewRecord], opts: &GraphOptions) -> ReviewGraph {
    let cap = opts.max_group_size;
    let by_user = group_by(records.iter().map(|r| r.user_id.as_str()));
    let by_rating = group_by(records.iter().map(|r| (r.product_id.as_str(), r.rating)));
    let by_month = group_by(
        records
            .iter()
            .map(|r| (r.product_id.as_str(), utc_month(r.timestamp))),
    );
    let mut g = assemble(
        records.len(),
        vec![
            (group_clique_edges_capped(&by_user, cap), relation::SAME_USER),
            (
                group_clique_edges_capped(&by_rating, cap),
                relation::SAME_PRODUCT_RATING,
            ),
            (
                group_clique_edges_capped(&by_month, cap),
                relation::SAME_PRODUCT_MONTH,
            ),
        ],
    );
    g.labels = records.iter().map(|r| r.label).collect();
    g
}

pub fn build_qa_graph(records: &[QaRecord]) -> ReviewGraph {
    build_qa_graph_with(records, &GraphOptions::default())
}

pub fn build_qa_graph_with(records: &[QaRecord], opts: &GraphOptions) -> ReviewGraph {
    let cap = opts.max_group_size;
    let by_question = group_by(records.iter().map(|r| r.question_id.as_str()));
    let by_asker = group_by(
        records
            .iter()
            .map(|r| (r.asker_id.as_str(), utc_month(r.question_time))),
    );
    let by_answerer = group_by(
        records
            .iter()
            .map(|r| (r.answerer_id.as_str(), utc_month(r.answer_time))),
    );
    let mut g = assemble(
        records.len(),
        vec![
            (
                group_clique_edges_capped(&by_question, cap),
                relation::SAME_QUESTION,
            ),
            (
                group_clique_edges_capped(&by_asker, cap),
                relation::SAME_ASKER_MONTH,
            ),
            (
                group_clique_edges_capped(&by_answerer, cap),
                relation::SAME_ANSWERER_MONTH,
            ),
        ],
    );
    g.labels = records.iter().map(|r| r.label).collect();
    g
}

/// Graph with only self-loops; used when the graph stage is ablated.
pub fn self_loop_graph(n_nodes: usize) -> ReviewGraph {
    assemble(n_nodes, Vec::new())
}
