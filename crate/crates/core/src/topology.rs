//! Addressing inside the rooted `d`-ary tree and small explicit graphs.
//!
//! A vertex of the tree is named by the sequence of child indices leading to
//! it from the root; the empty sequence is the root. An edge is named by its
//! child endpoint, which makes the two sets in bijection.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Path from the root to a vertex of the tree, one child index per generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexAddress(Vec<u32>);

impl VertexAddress {
    pub fn root() -> Self {
        VertexAddress(Vec::new())
    }

    /// Builds an address, checking every index against the branching degree.
    pub fn new(path: Vec<u32>, d: u32) -> Result<Self> {
        if let Some(&index) = path.iter().find(|&&i| i >= d) {
            return Err(Error::ChildIndexOutOfRange { index, d });
        }
        Ok(VertexAddress(path))
    }

    /// Builds an address without a degree check; used when parsing files whose
    /// degree is only known after the fact.
    pub fn from_path(path: Vec<u32>) -> Self {
        VertexAddress(path)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, index: u32) -> Self {
        let mut path = Vec::with_capacity(self.0.len() + 1);
        path.extend_from_slice(&self.0);
        path.push(index);
        VertexAddress(path)
    }

    pub fn parent(&self) -> Result<Self> {
        match self.0.split_last() {
            Some((_, rest)) => Ok(VertexAddress(rest.to_vec())),
            None => Err(Error::RootHasNoParent),
        }
    }

    /// Index of this vertex among its siblings.
    pub fn last_index(&self) -> Option<u32> {
        self.0.last().copied()
    }

    /// Slash-joined machine form; the root renders as the empty string.
    pub fn to_machine(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        parts.join("/")
    }
}

/// Human form: `root` for the root, slash-joined indices otherwise.
impl fmt::Display for VertexAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            f.write_str("root")
        } else {
            f.write_str(&self.to_machine())
        }
    }
}

impl FromStr for VertexAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "root" {
            return Ok(VertexAddress::root());
        }
        s.split('/')
            .map(|part| {
                part.parse::<u32>().map_err(|e| Error::Parse {
                    line: 0,
                    reason: format!("bad vertex index `{part}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(VertexAddress)
    }
}

/// A tree edge, identified with its child endpoint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(VertexAddress);

impl EdgeId {
    pub fn new(child: VertexAddress) -> Result<Self> {
        if child.is_root() {
            return Err(Error::RootHasNoParent);
        }
        Ok(EdgeId(child))
    }

    pub fn child(&self) -> &VertexAddress {
        &self.0
    }

    pub fn parent(&self) -> VertexAddress {
        self.0.parent().expect("edge child is never the root")
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_machine())
    }
}

pub fn parent(v: &VertexAddress) -> Result<VertexAddress> {
    v.parent()
}

pub fn generation(v: &VertexAddress) -> usize {
    v.generation()
}

/// Number of edges of the depth-`n` tree, `d + d^2 + ... + d^n`.
pub fn edge_count(d: u32, n: u32) -> Result<u64> {
    if d < 2 {
        return Err(crate::error::invalid("d", "branching degree must be at least 2"));
    }
    if n < 1 {
        return Err(crate::error::invalid("n", "depth must be at least 1"));
    }
    let overflow = || Error::EdgeCountOverflow { d, n };
    let mut total: u64 = 0;
    let mut level: u64 = 1;
    for _ in 0..n {
        level = level.checked_mul(u64::from(d)).ok_or_else(overflow)?;
        total = total.checked_add(level).ok_or_else(overflow)?;
    }
    Ok(total)
}

/// All vertices of generation `k`, in lexicographic order.
pub fn vertices_at_generation(d: u32, k: usize) -> Vec<VertexAddress> {
    let mut level = vec![VertexAddress::root()];
    for _ in 0..k {
        level = level
            .iter()
            .flat_map(|v| (0..d).map(move |i| v.child(i)))
            .collect();
    }
    level
}

/// The `index`-th edge of the depth-`n` tree in breadth-first order
/// (generation by generation, lexicographic within a generation).
pub fn edge_at_index(d: u32, n: u32, index: u64) -> Result<EdgeId> {
    let total = edge_count(d, n)?;
    if index >= total {
        return Err(crate::error::invalid(
            "index",
            format!("edge index {index} out of range for {total} edges"),
        ));
    }
    let mut rest = index;
    let mut level: u64 = u64::from(d);
    let mut k = 1usize;
    while rest >= level {
        rest -= level;
        level *= u64::from(d);
        k += 1;
    }
    let mut path = vec![0u32; k];
    for slot in path.iter_mut().rev() {
        *slot = (rest % u64::from(d)) as u32;
        rest /= u64::from(d);
    }
    EdgeId::new(VertexAddress(path))
}

/// A small explicit graph for brute-force checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenericGraph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
}

impl GenericGraph {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidGraph("graph needs at least one vertex".into()));
        }
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {a}")));
            }
            if a >= vertex_count || b >= vertex_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a vertex outside 0..{vertex_count}"
                )));
            }
        }
        Ok(GenericGraph {
            vertex_count,
            edges,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn single_edge() -> Self {
        GenericGraph::new(2, vec![(0, 1)]).expect("valid")
    }

    pub fn triangle() -> Self {
        GenericGraph::new(3, vec![(0, 1), (1, 2), (0, 2)]).expect("valid")
    }
}
