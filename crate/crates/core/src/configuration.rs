//! Poisson link configurations on the edges of a graph.
//!
//! Each edge carries a Poisson(β) number of links at i.i.d. uniform times in
//! `[0, 1)`; a link is a cross with probability `u` and a double bar
//! otherwise. Configurations come in two flavours: [`EagerConfiguration`]
//! stores every edge of a finite graph, [`LazyTree`] samples the edges of a
//! deep tree on demand from per-edge streams.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stream;
use crate::topology::{EdgeId, GenericGraph, VertexAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkKind {
    /// Keeps the vertical direction of travel.
    Cross,
    /// Reverses the vertical direction of travel.
    DoubleBar,
}

impl LinkKind {
    pub fn code(self) -> char {
        match self {
            LinkKind::Cross => 'x',
            LinkKind::DoubleBar => 'b',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "x" => Some(LinkKind::Cross),
            "b" => Some(LinkKind::DoubleBar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub time: f64,
    pub kind: LinkKind,
}

impl Link {
    pub fn new(time: f64, kind: LinkKind) -> Result<Self> {
        if !(0.0..1.0).contains(&time) {
            return Err(invalid("time", format!("link time {time} outside [0, 1)")));
        }
        Ok(Link { time, kind })
    }

    pub fn cross(time: f64) -> Self {
        Link::new(time, LinkKind::Cross).expect("time in [0, 1)")
    }

    pub fn double_bar(time: f64) -> Self {
        Link::new(time, LinkKind::DoubleBar).expect("time in [0, 1)")
    }
}

/// The links of one edge, sorted strictly increasing by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeConfiguration {
    links: Vec<Link>,
}

impl EdgeConfiguration {
    pub fn empty() -> Self {
        EdgeConfiguration { links: Vec::new() }
    }

    /// Sorts the links and rejects duplicate times.
    pub fn new(mut links: Vec<Link>) -> Result<Self> {
        for link in &links {
            Link::new(link.time, link.kind)?;
        }
        links.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = links.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(Error::TimeCollision {
                edge: String::from("?"),
                time: w[0].time,
            });
        }
        Ok(EdgeConfiguration { links })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Copy with `link` inserted in sorted position.
    pub fn with_link(&self, link: Link) -> std::result::Result<Self, f64> {
        let pos = self.links.partition_point(|l| l.time < link.time);
        if self.links.get(pos).is_some_and(|l| l.time == link.time) {
            return Err(link.time);
        }
        let mut links = self.links.clone();
        links.insert(pos, link);
        Ok(EdgeConfiguration { links })
    }

    /// Copy with the link at exactly `time` removed, if there is one.
    pub fn without_time(&self, time: f64) -> Option<Self> {
        let pos = self.links.iter().position(|l| l.time == time)?;
        let mut links = self.links.clone();
        links.remove(pos);
        Some(EdgeConfiguration { links })
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (i, link) in self.links.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.16e}:{}", link.time, link.kind.code());
        }
        out
    }
}

/// Model parameters: degree, cross probability, intensity and the
/// bookkeeping constants ε and A of the recursion analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: u32,
    pub u: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub alpha_bound: f64,
}

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ALPHA_BOUND: f64 = 2.0;

impl ModelParams {
    pub fn new(d: u32, u: f64, beta: f64) -> Result<Self> {
        let params = ModelParams {
            d,
            u,
            beta,
            epsilon: DEFAULT_EPSILON,
            alpha_bound: DEFAULT_ALPHA_BOUND,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters at `β = 1/d + α/d²`.
    pub fn from_alpha(d: u32, u: f64, alpha: f64) -> Result<Self> {
        if d < 2 {
            return Err(invalid("d", "branching degree must be at least 2"));
        }
        Self::new(d, u, crate::closed_forms::beta_of_alpha(alpha, d))
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_alpha_bound(mut self, bound: f64) -> Result<Self> {
        self.alpha_bound = bound;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        let mut p = self;
        p.beta = beta;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("d", "branching degree must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.u) {
            return Err(invalid("u", format!("{} is outside [0, 1]", self.u)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(invalid("beta", format!("{} is not a non-negative number", self.beta)));
        }
        if self.beta > 10.0 {
            return Err(invalid("beta", "inversion sampling is only used for beta <= 10"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !(self.alpha_bound.is_finite() && self.alpha_bound > 0.0) {
            return Err(invalid("alpha_bound", "must be positive"));
        }
        Ok(())
    }

    /// The α with `β = 1/d + α/d²`.
    pub fn alpha(&self) -> f64 {
        let d = f64::from(self.d);
        (self.beta - 1.0 / d) * d * d
    }
}

/// Counters for events the continuum model rules out almost surely.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Edges redrawn because two of their links had the same time.
    pub tie_redraws: u64,
    /// Pairs of links on different edges at one vertex sharing a time.
    pub cross_edge_ties: u64,
    /// Edges sampled so far.
    pub sampled_edges: u64,
}

impl std::ops::AddAssign for Diagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.tie_redraws += rhs.tie_redraws;
        self.cross_edge_ties += rhs.cross_edge_ties;
        self.sampled_edges += rhs.sampled_edges;
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeSampler {
    beta: f64,
    exp_neg_beta: f64,
    u: f64,
}

impl EdgeSampler {
    fn new(params: &ModelParams) -> Self {
        EdgeSampler {
            beta: params.beta,
            exp_neg_beta: (-params.beta).exp(),
            u: params.u,
        }
    }

    fn poisson<R: Rng>(&self, rng: &mut R) -> usize {
        let x: f64 = rng.random();
        let mut k = 0usize;
        let mut term = self.exp_neg_beta;
        let mut cdf = term;
        while x >= cdf && term > 0.0 {
            k += 1;
            term *= self.beta / k as f64;
            cdf += term;
        }
        k
    }

    fn sample_into(&self, key: u64, links: &mut Vec<Link>, diag: &mut Diagnostics) {
        diag.sampled_edges += 1;
        let mut counter = 0;
        loop {
            links.clear();
            let mut rng = stream::generator(key, counter);
            let n = self.poisson(&mut rng);
            for _ in 0..n {
                let time: f64 = rng.random();
                let kind = if rng.random::<f64>() < self.u {
                    LinkKind::Cross
                } else {
                    LinkKind::DoubleBar
                };
                links.push(Link { time, kind });
            }
            if n < 2 {
                return;
            }
            links.sort_unstable_by(|a, b| a.time.total_cmp(&b.time));
            if links.windows(2).all(|w| w[0].time < w[1].time) {
                return;
            }
            diag.tie_redraws += 1;
            counter += 1;
        }
    }

    fn sample(&self, key: u64, diag: &mut Diagnostics) -> Vec<Link> {
        let mut links = Vec::new();
        self.sample_into(key, &mut links, diag);
        links
    }
}

/// Samples the links of one tree edge. The result is a pure function of
/// `(params, edge, seed)`.
pub fn sample_edge(params: &ModelParams, edge: &EdgeId, seed: u64) -> EdgeConfiguration {
    let key = stream::edge_key(seed, edge.child().path());
    let mut diag = Diagnostics::default();
    EdgeConfiguration {
        links: EdgeSampler::new(params).sample(key, &mut diag),
    }
}

/// One link as seen from one of its endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<V> {
    pub time: f64,
    pub kind: LinkKind,
    pub neighbor: V,
    /// Position of the carrying edge in the vertex's edge order; breaks ties.
    pub rank: u32,
}

fn sort_events<V>(events: &mut [Event<V>]) -> u64 {
    events.sort_unstable_by(|a, b| a.time.total_cmp(&b.time).then(a.rank.cmp(&b.rank)));
    events.windows(2).filter(|w| w[0].time == w[1].time).count() as u64
}

/// Per-vertex view of a configuration consumed by the loop tracer.
pub trait EventSource {
    type Vertex: Copy + Eq + Ord + std::hash::Hash + std::fmt::Debug;

    /// Links incident to `v`, sorted by time, ties ordered by edge rank.
    fn events(&mut self, v: Self::Vertex) -> &[Event<Self::Vertex>];
}

/// An [`EventSource`] on a rooted tree.
pub trait TreeSource: EventSource {
    fn root(&self) -> Self::Vertex;
    fn generation(&self, v: Self::Vertex) -> usize;
}

/// A configuration with one extra link on top of a base source. The base is
/// borrowed, so anything it has materialized is shared.
pub struct WithExtraLink<'a, S: EventSource> {
    base: &'a mut S,
    ends: [(S::Vertex, u32); 2],
    link: Link,
    buf: Vec<Event<S::Vertex>>,
}

impl<'a, S: EventSource> WithExtraLink<'a, S> {
    /// `ends` lists both endpoints with the rank the edge has at each.
    pub fn new(base: &'a mut S, ends: [(S::Vertex, u32); 2], link: Link) -> Self {
        WithExtraLink {
            base,
            ends,
            link,
            buf: Vec::new(),
        }
    }
}

impl<S: EventSource> EventSource for WithExtraLink<'_, S> {
    type Vertex = S::Vertex;

    fn events(&mut self, v: S::Vertex) -> &[Event<S::Vertex>] {
        let Some(side) = self.ends.iter().position(|&(w, _)| w == v) else {
            return self.base.events(v);
        };
        let (_, rank) = self.ends[side];
        let (other, _) = self.ends[1 - side];
        let extra = Event {
            time: self.link.time,
            kind: self.link.kind,
            neighbor: other,
            rank,
        };
        self.buf.clear();
        self.buf.extend_from_slice(self.base.events(v));
        let pos = self
            .buf
            .partition_point(|e| (e.time, e.rank) < (extra.time, extra.rank));
        self.buf.insert(pos, extra);
        &self.buf
    }
}

impl<S: TreeSource> TreeSource for WithExtraLink<'_, S> {
    fn root(&self) -> S::Vertex {
        self.base.root()
    }

    fn generation(&self, v: S::Vertex) -> usize {
        self.base.generation(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TreeLabels {
    addresses: Vec<VertexAddress>,
    index: HashMap<VertexAddress, usize>,
    depth: usize,
}

/// A fully stored configuration over a finite graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EagerConfiguration {
    graph: GenericGraph,
    edges: Vec<EdgeConfiguration>,
    events: Vec<Vec<Event<usize>>>,
    tree: Option<TreeLabels>,
    cross_edge_ties: u64,
}

impl EagerConfiguration {
    /// Configuration on an explicit graph; `edges[i]` belongs to `graph.edges()[i]`.
    pub fn new(graph: GenericGraph, edges: Vec<EdgeConfiguration>) -> Result<Self> {
        if edges.len() != graph.edges().len() {
            return Err(Error::InvalidGraph(format!(
                "{} edge configurations for {} edges",
                edges.len(),
                graph.edges().len()
            )));
        }
        let ranks = (0..graph.edges().len())
            .map(|i| (i as u32, i as u32))
            .collect();
        Ok(Self::assemble(graph, edges, ranks, None))
    }

    /// Samples every edge of an explicit graph; edge `i` uses stream `i`.
    pub fn sample_graph(graph: GenericGraph, params: &ModelParams, seed: u64) -> Self {
        let sampler = EdgeSampler::new(params);
        let mut diag = Diagnostics::default();
        let base = stream::mix64(stream::root_key(seed) ^ 0x6772_6170_6800_0000);
        let edges = (0..graph.edges().len())
            .map(|i| EdgeConfiguration {
                links: sampler.sample(stream::child_key(base, i as u32), &mut diag),
            })
            .collect();
        Self::new(graph, edges).expect("one configuration per edge")
    }

    /// Samples the whole depth-`depth` tree with the same per-edge streams the
    /// lazy sampler uses, so both agree edge by edge.
    pub fn sample_tree(params: &ModelParams, depth: usize, seed: u64) -> Self {
        let sampler = EdgeSampler::new(params);
        let mut diag = Diagnostics::default();
        let mut map = BTreeMap::new();
        let mut frontier = vec![(VertexAddress::root(), stream::root_key(seed))];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * params.d as usize);
            for (v, key) in &frontier {
                for i in 0..params.d {
                    let child = v.child(i);
                    let child_key = stream::child_key(*key, i);
                    let links = sampler.sample(child_key, &mut diag);
                    map.insert(
                        EdgeId::new(child.clone()).expect("non-root"),
                        EdgeConfiguration { links },
                    );
                    next.push((child, child_key));
                }
            }
            frontier = next;
        }
        Self::from_tree_edges_with(map, Some((params.d, depth)))
    }

    /// Tree configuration spanned by the given edges and all their ancestors.
    /// Edges not listed carry no links.
    pub fn from_tree_edges(edges: BTreeMap<EdgeId, EdgeConfiguration>) -> Self {
        Self::from_tree_edges_with(edges, None)
    }

    fn from_tree_edges_with(
        mut edges: BTreeMap<EdgeId, EdgeConfiguration>,
        full: Option<(u32, usize)>,
    ) -> Self {
        // close under ancestors
        let listed: Vec<EdgeId> = edges.keys().cloned().collect();
        for e in listed {
            let mut v = e.parent();
            while !v.is_root() {
                edges
                    .entry(EdgeId::new(v.clone()).expect("non-root"))
                    .or_default();
                v = v.parent().expect("non-root");
            }
        }
        // breadth-first vertex order
        let mut addresses = vec![VertexAddress::root()];
        let mut ordered: Vec<&EdgeId> = edges.keys().collect();
        ordered.sort_by(|a, b| {
            a.child()
                .generation()
                .cmp(&b.child().generation())
                .then_with(|| a.cmp(b))
        });
        addresses.extend(ordered.iter().map(|e| e.child().clone()));
        let index: HashMap<VertexAddress, usize> = addresses
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let depth = full
            .map(|(_, depth)| depth)
            .unwrap_or_else(|| addresses.iter().map(|a| a.generation()).max().unwrap_or(0));

        let mut graph_edges = Vec::with_capacity(edges.len());
        let mut configs = Vec::with_capacity(edges.len());
        let mut ranks = Vec::with_capacity(edges.len());
        for e in ordered {
            let child = index[e.child()];
            let parent = index[&e.parent()];
            graph_edges.push((parent, child));
            configs.push(edges[e].clone());
            let slot = e.child().last_index().expect("non-root");
            ranks.push((slot + 1, 0));
        }
        let graph = GenericGraph::new(addresses.len(), graph_edges).expect("tree edges are valid");
        let labels = TreeLabels {
            addresses,
            index,
            depth,
        };
        Self::assemble(graph, configs, ranks, Some(labels))
    }

    /// `ranks[i]` is the rank of edge `i` at its first and second endpoint.
    fn assemble(
        graph: GenericGraph,
        edges: Vec<EdgeConfiguration>,
        ranks: Vec<(u32, u32)>,
        tree: Option<TreeLabels>,
    ) -> Self {
        let mut events: Vec<Vec<Event<usize>>> = vec![Vec::new(); graph.vertex_count()];
        for (i, (&(a, b), config)) in graph.edges().iter().zip(&edges).enumerate() {
            let (rank_a, rank_b) = ranks[i];
            for link in config.links() {
                events[a].push(Event {
                    time: link.time,
                    kind: link.kind,
                    neighbor: b,
                    rank: rank_a,
                });
                events[b].push(Event {
                    time: link.time,
                    kind: link.kind,
                    neighbor: a,
                    rank: rank_b,
                });
            }
        }
        let cross_edge_ties = events.iter_mut().map(|ev| sort_events(ev)).sum();
        EagerConfiguration {
            graph,
            edges,
            events,
            tree,
            cross_edge_ties,
        }
    }

    pub fn graph(&self) -> &GenericGraph {
        &self.graph
    }

    pub fn vertex_count(&self) -> usize {
        self.graph.vertex_count()
    }

    pub fn edge_configurations(&self) -> &[EdgeConfiguration] {
        &self.edges
    }

    pub fn total_links(&self) -> usize {
        self.edges.iter().map(EdgeConfiguration::len).sum()
    }

    pub fn cross_edge_ties(&self) -> u64 {
        self.cross_edge_ties
    }

    pub fn is_tree(&self) -> bool {
        self.tree.is_some()
    }

    /// Depth of a tree configuration.
    pub fn depth(&self) -> Option<usize> {
        self.tree.as_ref().map(|t| t.depth)
    }

    pub fn incident_events(&self, v: usize) -> &[Event<usize>] {
        &self.events[v]
    }

    pub fn vertex_index(&self, v: &VertexAddress) -> Result<usize> {
        self.tree
            .as_ref()
            .and_then(|t| t.index.get(v).copied())
            .ok_or_else(|| Error::UnknownVertex(v.to_string()))
    }

    pub fn address(&self, v: usize) -> Option<&VertexAddress> {
        self.tree.as_ref().and_then(|t| t.addresses.get(v))
    }

    /// Index of the graph edge behind a tree edge.
    pub fn edge_index(&self, edge: &EdgeId) -> Result<usize> {
        let child = self.vertex_index(edge.child())?;
        // vertex i > 0 is the child endpoint of edge i - 1
        Ok(child - 1)
    }

    pub fn edge(&self, edge: &EdgeId) -> Result<&EdgeConfiguration> {
        Ok(&self.edges[self.edge_index(edge)?])
    }

    /// Tree edges in breadth-first order with their configurations.
    pub fn tree_edges(&self) -> Vec<(EdgeId, &EdgeConfiguration)> {
        let Some(tree) = &self.tree else {
            return Vec::new();
        };
        tree.addresses[1..]
            .iter()
            .zip(&self.edges)
            .map(|(a, c)| (EdgeId::new(a.clone()).expect("non-root"), c))
            .collect()
    }

    /// All edges incident to `vertex`: the parent edge first, then the child edges.
    pub fn materialize_around(&self, vertex: &VertexAddress) -> Result<Vec<(EdgeId, EdgeConfiguration)>> {
        let v = self.vertex_index(vertex)?;
        let mut out = Vec::new();
        if !vertex.is_root() {
            let e = EdgeId::new(vertex.clone())?;
            out.push((e, self.edges[v - 1].clone()));
        }
        for (i, &(a, b)) in self.graph.edges().iter().enumerate() {
            if a == v {
                let child = self.address(b).expect("tree").clone();
                out.push((EdgeId::new(child)?, self.edges[i].clone()));
            }
        }
        out.sort_by(|x, y| x.0.cmp(&y.0));
        Ok(out)
    }

    /// Copy with an extra link on graph edge `index`.
    pub fn with_link_at(&self, index: usize, link: Link) -> Result<Self> {
        let edge = self
            .edges
            .get(index)
            .ok_or_else(|| invalid("edge", format!("no edge with index {index}")))?;
        let updated = edge.with_link(link).map_err(|time| Error::TimeCollision {
            edge: self.edge_label(index),
            time,
        })?;
        Ok(self.replace_edge(index, updated))
    }

    /// Copy with the link at `time` removed from graph edge `index`.
    pub fn without_link_at(&self, index: usize, time: f64) -> Result<Self> {
        let edge = &self.edges[index];
        let updated = edge.without_time(time).ok_or_else(|| Error::NoSuchLink {
            edge: self.edge_label(index),
            index: usize::MAX,
        })?;
        Ok(self.replace_edge(index, updated))
    }

    /// Copy of a tree configuration with `link` added to `edge`.
    pub fn perturb_add(&self, edge: &EdgeId, link: Link) -> Result<Self> {
        self.with_link_at(self.edge_index(edge)?, link)
    }

    fn replace_edge(&self, index: usize, config: EdgeConfiguration) -> Self {
        let mut edges = self.edges.clone();
        edges[index] = config;
        let ranks = self.ranks();
        Self::assemble(self.graph.clone(), edges, ranks, self.tree.clone())
    }

    fn ranks(&self) -> Vec<(u32, u32)> {
        match &self.tree {
            Some(t) => t.addresses[1..]
                .iter()
                .map(|a| (a.last_index().expect("non-root") + 1, 0))
                .collect(),
            None => (0..self.edges.len()).map(|i| (i as u32, i as u32)).collect(),
        }
    }

    /// Endpoints of graph edge `index` with the rank the edge has at each.
    pub fn edge_ends(&self, index: usize) -> [(usize, u32); 2] {
        let (a, b) = self.graph.edges()[index];
        let (ra, rb) = self.ranks()[index];
        [(a, ra), (b, rb)]
    }

    fn edge_label(&self, index: usize) -> String {
        match &self.tree {
            Some(t) => t.addresses[index + 1].to_machine(),
            None => index.to_string(),
        }
    }

    /// One line per tree edge: `edge=<path> links=<t:k,...>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (edge, config) in self.tree_edges() {
            let _ = writeln!(out, "edge={} links={}", edge, config.render());
        }
        out
    }

    /// Parses the line format of [`EagerConfiguration::to_text`]. Blank lines
    /// and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut edges = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                line: lineno + 1,
                reason,
            };
            let mut path = None;
            let mut links_field = None;
            for field in line.split_whitespace() {
                if let Some(p) = field.strip_prefix("edge=") {
                    path = Some(p);
                } else if let Some(l) = field.strip_prefix("links=") {
                    links_field = Some(l);
                } else {
                    return Err(err(format!("unexpected field `{field}`")));
                }
            }
            let path = path.ok_or_else(|| err("missing `edge=`".into()))?;
            let links_field = links_field.unwrap_or("");
            let child: VertexAddress = path.parse().map_err(|e: Error| err(e.to_string()))?;
            let edge = EdgeId::new(child).map_err(|e| err(e.to_string()))?;
            let mut links = Vec::new();
            for item in links_field.split(',').filter(|s| !s.is_empty()) {
                let (t, k) = item
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad link `{item}`")))?;
                let time: f64 = t.parse().map_err(|e| err(format!("bad time `{t}`: {e}")))?;
                let kind = LinkKind::from_code(k).ok_or_else(|| err(format!("bad kind `{k}`")))?;
                links.push(Link::new(time, kind).map_err(|e| err(e.to_string()))?);
            }
            let config = EdgeConfiguration::new(links).map_err(|e| err(e.to_string()))?;
            if edges.insert(edge.clone(), config).is_some() {
                return Err(err(format!("edge {edge} listed twice")));
            }
        }
        Ok(Self::from_tree_edges(edges))
    }
}

impl EventSource for &EagerConfiguration {
    type Vertex = usize;

    fn events(&mut self, v: usize) -> &[Event<usize>] {
        &self.events[v]
    }
}

impl TreeSource for &EagerConfiguration {
    fn root(&self) -> usize {
        0
    }

    fn generation(&self, v: usize) -> usize {
        self.tree
            .as_ref()
            .map(|t| t.addresses[v].generation())
            .expect("generation is only defined on tree configurations")
    }
}

/// Handle of a materialized vertex of a [`LazyTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    parent: u32,
    slot: u32,
    depth: u32,
    key: u64,
    /// Links on the edge to the parent.
    links: Vec<Link>,
    first_child: u32,
    events: Option<Vec<Event<NodeId>>>,
}

/// Depth-limited tree whose edges are sampled when first needed and memoized.
///
/// Edge values come from per-edge streams, so they never depend on the order
/// of materialization; [`EagerConfiguration::sample_tree`] with the same seed
/// produces the same links. A `LazyTree` is meant to be reused across replicas
/// through [`LazyTree::reset`], which keeps the allocations.
#[derive(Debug, Clone)]
pub struct LazyTree {
    params: ModelParams,
    sampler: EdgeSampler,
    depth: usize,
    seed: u64,
    nodes: Vec<Node>,
    diagnostics: Diagnostics,
}

impl LazyTree {
    pub fn new(params: ModelParams, depth: usize, seed: u64) -> Self {
        let mut tree = LazyTree {
            sampler: EdgeSampler::new(&params),
            params,
            depth,
            seed,
            nodes: Vec::new(),
            diagnostics: Diagnostics::default(),
        };
        tree.reset(seed);
        tree
    }

    /// Forgets every materialized edge and starts over with a new seed.
    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.nodes.clear();
        self.nodes.push(Node {
            parent: NONE,
            slot: 0,
            depth: 0,
            key: stream::root_key(seed),
            links: Vec::new(),
            first_child: NONE,
            events: None,
        });
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    /// Returns the accumulated diagnostics and zeroes them.
    pub fn take_diagnostics(&mut self) -> Diagnostics {
        std::mem::take(&mut self.diagnostics)
    }

    /// Number of vertices whose incident edges have been sampled.
    pub fn visited_vertices(&self) -> usize {
        self.nodes.iter().filter(|n| n.first_child != NONE || n.events.is_some()).count()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn ensure_children(&mut self, v: NodeId) -> Option<u32> {
        let node = &self.nodes[v.0 as usize];
        if node.first_child != NONE {
            return Some(node.first_child);
        }
        if node.depth as usize >= self.depth {
            return None;
        }
        let (key, depth) = (node.key, node.depth);
        let first = self.nodes.len() as u32;
        for i in 0..self.params.d {
            let child_key = stream::child_key(key, i);
            let links = self.sampler.sample(child_key, &mut self.diagnostics);
            self.nodes.push(Node {
                parent: v.0,
                slot: i,
                depth: depth + 1,
                key: child_key,
                links,
                first_child: NONE,
                events: None,
            });
        }
        self.nodes[v.0 as usize].first_child = first;
        Some(first)
    }

    /// Child `i` of `v`, sampling the child edges of `v` if needed.
    pub fn child(&mut self, v: NodeId, i: u32) -> Option<NodeId> {
        if i >= self.params.d {
            return None;
        }
        self.ensure_children(v).map(|first| NodeId(first + i))
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let p = self.nodes[v.0 as usize].parent;
        (p != NONE).then_some(NodeId(p))
    }

    /// Links on the edge between `v` and its parent.
    pub fn parent_edge_links(&self, v: NodeId) -> &[Link] {
        &self.nodes[v.0 as usize].links
    }

    pub fn address(&self, v: NodeId) -> VertexAddress {
        let mut path = Vec::with_capacity(self.nodes[v.0 as usize].depth as usize);
        let mut cur = v.0;
        while cur != 0 {
            let node = &self.nodes[cur as usize];
            path.push(node.slot);
            cur = node.parent;
        }
        path.reverse();
        VertexAddress::from_path(path)
    }

    /// Materializes the path down to `v`.
    pub fn node_for(&mut self, v: &VertexAddress) -> Result<NodeId> {
        if v.generation() > self.depth {
            return Err(Error::UnknownVertex(v.to_string()));
        }
        let mut cur = NodeId::ROOT;
        for &i in v.path() {
            cur = self
                .child(cur, i)
                .ok_or(Error::ChildIndexOutOfRange { index: i, d: self.params.d })?;
        }
        Ok(cur)
    }

    /// Configurations of every edge incident to `vertex`, parent edge first.
    /// Repeated calls return identical values.
    pub fn materialize_around(&mut self, vertex: &VertexAddress) -> Result<Vec<(EdgeId, EdgeConfiguration)>> {
        let v = self.node_for(vertex)?;
        let mut out = Vec::with_capacity(self.params.d as usize + 1);
        if !vertex.is_root() {
            out.push((
                EdgeId::new(vertex.clone())?,
                EdgeConfiguration {
                    links: self.parent_edge_links(v).to_vec(),
                },
            ));
        }
        if let Some(first) = self.ensure_children(v) {
            for i in 0..self.params.d {
                out.push((
                    EdgeId::new(vertex.child(i))?,
                    EdgeConfiguration {
                        links: self.nodes[(first + i) as usize].links.clone(),
                    },
                ));
            }
        }
        Ok(out)
    }

    /// Edge endpoints for [`WithExtraLink`].
    pub fn edge_ends(&mut self, edge: &EdgeId) -> Result<[(NodeId, u32); 2]> {
        let child = self.node_for(edge.child())?;
        let parent = self.parent(child).expect("edge child is not the root");
        let slot = self.nodes[child.0 as usize].slot;
        Ok([(parent, slot + 1), (child, 0)])
    }
}

impl EventSource for LazyTree {
    type Vertex = NodeId;

    fn events(&mut self, v: NodeId) -> &[Event<NodeId>] {
        if self.nodes[v.0 as usize].events.is_none() {
            let first = self.ensure_children(v);
            let node = &self.nodes[v.0 as usize];
            let mut events = Vec::with_capacity(node.links.len() + 2);
            events.extend(node.links.iter().map(|l| Event {
                time: l.time,
                kind: l.kind,
                neighbor: NodeId(node.parent),
                rank: 0,
            }));
            if let Some(first) = first {
                for i in 0..self.params.d {
                    let c = first + i;
                    events.extend(self.nodes[c as usize].links.iter().map(|l| Event {
                        time: l.time,
                        kind: l.kind,
                        neighbor: NodeId(c),
                        rank: i + 1,
                    }));
                }
            }
            self.diagnostics.cross_edge_ties += sort_events(&mut events);
            self.nodes[v.0 as usize].events = Some(events);
        }
        self.nodes[v.0 as usize].events.as_deref().expect("just built")
    }
}

impl TreeSource for LazyTree {
    fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    fn generation(&self, v: NodeId) -> usize {
        self.nodes[v.0 as usize].depth as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::vertices_at_generation;

    fn params(d: u32, u: f64, beta: f64) -> ModelParams {
        ModelParams::new(d, u, beta).unwrap()
    }

    fn edge(path: &[u32]) -> EdgeId {
        EdgeId::new(VertexAddress::from_path(path.to_vec())).unwrap()
    }

    #[test]
    fn zero_intensity_gives_empty_edges() {
        let p = params(3, 0.5, 0.0);
        for s in 0..100 {
            assert!(sample_edge(&p, &edge(&[1]), s).is_empty());
        }
    }

    #[test]
    fn all_crosses_when_u_is_one() {
        let p = params(3, 1.0, 2.0);
        for s in 0..200 {
            let e = sample_edge(&p, &edge(&[0, 2]), s);
            assert!(e.links().iter().all(|l| l.kind == LinkKind::Cross));
        }
    }

    #[test]
    fn sampling_is_a_pure_function() {
        let p = params(4, 0.3, 1.5);
        for s in 0..50 {
            assert_eq!(sample_edge(&p, &edge(&[3, 1]), s), sample_edge(&p, &edge(&[3, 1]), s));
        }
    }

    #[test]
    fn samples_are_sorted_and_in_range() {
        let p = params(4, 0.5, 6.0);
        for s in 0..500 {
            let e = sample_edge(&p, &edge(&[2]), s);
            assert!(e.links().windows(2).all(|w| w[0].time < w[1].time));
            assert!(e.links().iter().all(|l| (0.0..1.0).contains(&l.time)));
        }
    }

    #[test]
    fn params_alpha_form() {
        let p = ModelParams::from_alpha(5, 0.5, 0.7).unwrap();
        assert!((p.beta - 0.228).abs() < 1e-15);
        assert!((p.alpha() - 0.7).abs() < 1e-12);
        assert!(ModelParams::new(1, 0.5, 0.1).is_err());
        assert!(ModelParams::new(3, 1.5, 0.1).is_err());
        assert!(ModelParams::new(3, 0.5, -0.1).is_err());
        assert!(params(3, 0.5, 0.1).with_epsilon(0.0).is_err());
    }

    #[test]
    fn root_materialization_has_only_child_edges() {
        let mut tree = LazyTree::new(params(3, 0.5, 0.7), 4, 9);
        let around = tree.materialize_around(&VertexAddress::root()).unwrap();
        assert_eq!(around.len(), 3);
        assert!(around.iter().all(|(e, _)| e.child().generation() == 1));
        let again = tree.materialize_around(&VertexAddress::root()).unwrap();
        assert_eq!(around, again);
    }

    #[test]
    fn leaves_have_only_their_parent_edge() {
        let mut tree = LazyTree::new(params(2, 0.5, 0.7), 2, 9);
        let leaf = VertexAddress::from_path(vec![1, 0]);
        let around = tree.materialize_around(&leaf).unwrap();
        assert_eq!(around.len(), 1);
        assert!(tree.materialize_around(&VertexAddress::from_path(vec![1, 0, 0])).is_err());
    }

    #[test]
    fn lazy_matches_eager_on_every_edge() {
        let p = params(3, 0.4, 0.8);
        for seed in 0..100 {
            let eager = EagerConfiguration::sample_tree(&p, 4, seed);
            let mut lazy = LazyTree::new(p, 4, seed);
            // materialize in an order unrelated to the eager sweep
            for k in (0..4).rev() {
                for v in vertices_at_generation(3, k).into_iter().rev() {
                    for (e, c) in lazy.materialize_around(&v).unwrap() {
                        assert_eq!(eager.edge(&e).unwrap(), &c);
                    }
                }
            }
            for (e, c) in eager.tree_edges() {
                assert_eq!(&sample_edge(&p, &e, seed), c);
            }
        }
    }

    #[test]
    fn eager_materialize_around_returns_stored_values() {
        let p = params(3, 0.4, 0.8);
        let eager = EagerConfiguration::sample_tree(&p, 3, 5);
        let v = VertexAddress::from_path(vec![2]);
        let around = eager.materialize_around(&v).unwrap();
        assert_eq!(around.len(), 4);
        for (e, c) in &around {
            assert_eq!(eager.edge(e).unwrap(), c);
        }
    }

    #[test]
    fn perturb_add_inserts_in_order_and_is_reversible() {
        let mut edges = BTreeMap::new();
        edges.insert(edge(&[0]), EdgeConfiguration::new(vec![Link::cross(0.2), Link::double_bar(0.7)]).unwrap());
        let config = EagerConfiguration::from_tree_edges(edges);
        let added = config.perturb_add(&edge(&[0]), Link::cross(0.5)).unwrap();
        let times: Vec<f64> = added.edge(&edge(&[0])).unwrap().links().iter().map(|l| l.time).collect();
        assert_eq!(times, vec![0.2, 0.5, 0.7]);
        assert_eq!(config.edge(&edge(&[0])).unwrap().len(), 2);
        let idx = added.edge_index(&edge(&[0])).unwrap();
        assert_eq!(added.without_link_at(idx, 0.5).unwrap(), config);
        assert!(matches!(
            config.perturb_add(&edge(&[0]), Link::cross(0.2)),
            Err(Error::TimeCollision { .. })
        ));
    }

    #[test]
    fn empty_edge_plus_link() {
        let mut edges = BTreeMap::new();
        edges.insert(edge(&[0]), EdgeConfiguration::empty());
        let config = EagerConfiguration::from_tree_edges(edges);
        let added = config.perturb_add(&edge(&[0]), Link::cross(0.5)).unwrap();
        assert_eq!(added.edge(&edge(&[0])).unwrap().links(), &[Link::cross(0.5)]);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let p = params(3, 0.5, 1.2);
        let config = EagerConfiguration::sample_tree(&p, 3, 77);
        let text = config.to_text();
        let back = EagerConfiguration::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        for ((e1, c1), (e2, c2)) in config.tree_edges().iter().zip(back.tree_edges()) {
            assert_eq!(e1, &e2);
            for (a, b) in c1.links().iter().zip(c2.links()) {
                assert_eq!(a.time.to_bits(), b.time.to_bits());
                assert_eq!(a.kind, b.kind);
            }
        }
    }

    #[test]
    fn text_format_shape() {
        let mut edges = BTreeMap::new();
        edges.insert(edge(&[0]), EdgeConfiguration::new(vec![Link::cross(0.25)]).unwrap());
        let config = EagerConfiguration::from_tree_edges(edges);
        assert_eq!(config.to_text(), "edge=0 links=2.5000000000000000e-1:x\n");
        assert!(EagerConfiguration::from_text("edge=0 links=0.5:q").is_err());
        assert!(EagerConfiguration::from_text("edge= links=0.5:x").is_err());
        assert!(EagerConfiguration::from_text("edge=0 links=0.5:x,0.5:b").is_err());
    }

    #[test]
    fn extra_link_overlay_inserts_event() {
        let mut tree = LazyTree::new(params(2, 0.5, 0.0), 2, 1);
        let e = edge(&[1]);
        let ends = tree.edge_ends(&e).unwrap();
        let mut view = WithExtraLink::new(&mut tree, ends, Link::cross(0.3));
        let root_events = view.events(NodeId::ROOT).to_vec();
        assert_eq!(root_events.len(), 1);
        assert_eq!(root_events[0].rank, 2);
        drop(view);
        assert!(tree.events(NodeId::ROOT).is_empty());
    }
}
