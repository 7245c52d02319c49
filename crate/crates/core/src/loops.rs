//! The loop tracer.
//!
//! A trajectory moves vertically along the time circle of its vertex; at the
//! first link it meets it jumps to the other endpoint, keeping its direction
//! at a cross and reversing it at a double bar, and it stops when it comes
//! back to its starting point.
//!
//! Internally a vertex's timeline is cut by its incident link times into
//! gaps: gap `g` runs from event `g - 1` up to event `g` (cyclically), so a
//! trajectory is a sequence of (vertex, gap, direction) states.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use crate::configuration::{EagerConfiguration, EventSource, LazyTree, Link, LinkKind, NodeId, TreeSource};
use crate::error::{Error, Result};
use crate::topology::{EdgeId, VertexAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    pub fn code(self) -> char {
        match self {
            Direction::Up => 'U',
            Direction::Down => 'D',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint<V> {
    pub vertex: V,
    pub time: f64,
    pub direction: Direction,
}

impl<V> TracePoint<V> {
    pub fn up(vertex: V, time: f64) -> Self {
        TracePoint {
            vertex,
            time,
            direction: Direction::Up,
        }
    }
}

/// An oriented arc on one timeline, `from` to `to` in direction `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<V> {
    pub vertex: V,
    pub from: f64,
    pub to: f64,
    pub direction: Direction,
    /// The arc passes through `1 ≡ 0`.
    pub wrap: bool,
}

impl<V> Segment<V> {
    pub fn length(&self) -> f64 {
        let raw = match self.direction {
            Direction::Up => self.to - self.from,
            Direction::Down => self.from - self.to,
        };
        if self.wrap {
            raw + 1.0
        } else {
            raw
        }
    }

    /// The arc as one or two increasing intervals of `[0, 1]`.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = match self.direction {
            Direction::Up => (self.from, self.to),
            Direction::Down => (self.to, self.from),
        };
        if self.wrap {
            let mut out = Vec::with_capacity(2);
            if hi > 0.0 {
                out.push((0.0, hi));
            }
            if lo < 1.0 {
                out.push((lo, 1.0));
            }
            out
        } else {
            vec![(lo, hi)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceBudget {
    pub max_jumps: u64,
}

impl Default for TraceBudget {
    fn default() -> Self {
        TraceBudget {
            max_jumps: 10_000_000,
        }
    }
}

/// A closed trajectory. Consecutive segments are joined by a jump; the last
/// one jumps back to the start of the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Loop<V> {
    pub segments: Vec<Segment<V>>,
    pub length: f64,
    /// Number of jumps made while tracing.
    pub jumps: u64,
}

impl<V: Clone + Ord> Loop<V> {
    pub fn map_vertices<W, F: FnMut(V) -> W>(&self, mut f: F) -> Loop<W> {
        Loop {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    vertex: f(s.vertex.clone()),
                    from: s.from,
                    to: s.to,
                    direction: s.direction,
                    wrap: s.wrap,
                })
                .collect(),
            length: self.length,
            jumps: self.jumps,
        }
    }

    /// Covered point set: per vertex, sorted disjoint intervals with touching
    /// intervals merged.
    pub fn point_set(&self) -> BTreeMap<V, Vec<(f64, f64)>> {
        let mut by_vertex: BTreeMap<V, Vec<(f64, f64)>> = BTreeMap::new();
        for s in &self.segments {
            by_vertex.entry(s.vertex.clone()).or_default().extend(s.intervals());
        }
        for intervals in by_vertex.values_mut() {
            intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
            for &(lo, hi) in intervals.iter() {
                match merged.last_mut() {
                    Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                    _ => merged.push((lo, hi)),
                }
            }
            *intervals = merged;
        }
        by_vertex
    }

    /// Measure of the covered point set.
    pub fn covered_length(&self) -> f64 {
        self.point_set()
            .values()
            .flat_map(|iv| iv.iter().map(|(a, b)| b - a))
            .sum()
    }

    /// Segment list rotated so that the least `(vertex, from, direction)` leads.
    pub fn canonical(&self) -> Vec<Segment<V>> {
        let Some(lead) = (0..self.segments.len()).min_by(|&i, &j| {
            let (a, b) = (&self.segments[i], &self.segments[j]);
            a.vertex
                .cmp(&b.vertex)
                .then(a.from.total_cmp(&b.from))
                .then(a.direction.cmp(&b.direction))
        }) else {
            return Vec::new();
        };
        let mut out = self.segments.clone();
        out.rotate_left(lead);
        out
    }

    pub fn visits(&self, v: &V) -> bool {
        self.segments.iter().any(|s| &s.vertex == v)
    }
}

impl Loop<VertexAddress> {
    /// One line per segment: `v=<path> from=<t> to=<t> dir=<U|D> wrap=<0|1>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let _ = writeln!(
                out,
                "v={} from={:.16e} to={:.16e} dir={} wrap={}",
                s.vertex.to_machine(),
                s.from,
                s.to,
                s.direction.code(),
                u8::from(s.wrap)
            );
        }
        out
    }
}

impl fmt::Display for Loop<VertexAddress> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

enum Flow {
    Continue,
    Stop,
}

struct Walk {
    jumps: u64,
    /// A final arc ending at the start point was reported.
    closing_arc: bool,
}

/// Gap of the point `time` on a timeline with the given events; a time equal
/// to an event time is read as lying just above it.
fn gap_of<V>(events: &[crate::configuration::Event<V>], time: f64) -> usize {
    events.partition_point(|e| e.time <= time) % events.len()
}

/// Walks the trajectory from `start`, handing each traversed arc to `visit`,
/// which may stop the walk.
fn walk<S, F>(src: &mut S, start: TracePoint<S::Vertex>, budget: TraceBudget, seed: u64, mut visit: F) -> Result<Walk>
where
    S: EventSource,
    F: FnMut(&S, Segment<S::Vertex>) -> Flow,
{
    let (v0, t0, dir0) = (start.vertex, start.time, start.direction);
    if src.events(v0).is_empty() {
        let seg = Segment {
            vertex: v0,
            from: t0,
            to: t0,
            direction: dir0,
            wrap: true,
        };
        visit(src, seg);
        return Ok(Walk {
            jumps: 0,
            closing_arc: false,
        });
    }
    let g0 = gap_of(src.events(v0), t0);

    let (mut v, mut gap, mut dir, mut from) = (v0, g0, dir0, t0);
    let mut entered_by_jump = false;
    let mut jumps = 0u64;
    loop {
        let events = src.events(v);
        let n = events.len();
        if entered_by_jump && v == v0 && gap == g0 && dir == dir0 {
            let seg = arc(v, from, t0, dir, false);
            let closing_arc = seg.length() > 0.0;
            if closing_arc {
                visit(src, seg);
            }
            return Ok(Walk {
                jumps,
                closing_arc,
            });
        }
        let j = match dir {
            Direction::Up => gap,
            Direction::Down => (gap + n - 1) % n,
        };
        let target = events[j];
        let full = n == 1 && (entered_by_jump || target.time == from);
        let seg = arc(v, from, target.time, dir, full);
        if let Flow::Stop = visit(src, seg) {
            return Ok(Walk {
                jumps,
                closing_arc: false,
            });
        }

        jumps += 1;
        if jumps > budget.max_jumps {
            return Err(Error::BudgetExhausted {
                max_jumps: budget.max_jumps,
                seed,
            });
        }
        let w = target.neighbor;
        let next_dir = match target.kind {
            LinkKind::Cross => dir,
            LinkKind::DoubleBar => dir.reversed(),
        };
        let landing = src.events(w);
        let k = find_twin(landing, target.time, v);
        gap = match next_dir {
            Direction::Up => (k + 1) % landing.len(),
            Direction::Down => k,
        };
        v = w;
        dir = next_dir;
        from = target.time;
        entered_by_jump = true;
    }
}

fn find_twin<V: Copy + Eq>(events: &[crate::configuration::Event<V>], time: f64, from: V) -> usize {
    let mut k = events.partition_point(|e| e.time < time);
    while events[k].neighbor != from {
        k += 1;
    }
    k
}

fn arc<V>(vertex: V, from: f64, to: f64, direction: Direction, full: bool) -> Segment<V> {
    let wrap = match direction {
        Direction::Up => to < from,
        Direction::Down => to > from,
    } || (full && to == from);
    Segment {
        vertex,
        from,
        to,
        direction,
        wrap,
    }
}

/// Traces the closed loop through `start`.
///
/// The segment cut by the starting point is reported once, as the first
/// segment, so the segment list does not depend on where on the loop the
/// trace started.
pub fn trace_loop<S: EventSource>(src: &mut S, start: TracePoint<S::Vertex>, budget: TraceBudget) -> Result<Loop<S::Vertex>> {
    let mut segments: Vec<Segment<S::Vertex>> = Vec::new();
    let walk = walk(src, start, budget, 0, |_, seg| {
        segments.push(seg);
        Flow::Continue
    })?;
    if walk.closing_arc {
        // The closing arc ends where the opening arc starts; glue them.
        let last = segments.pop().expect("closing arc");
        let first = segments[0];
        segments[0] = arc(first.vertex, last.from, first.to, first.direction, last.from == first.to);
    }
    let length = segments.iter().map(Segment::length).sum();
    Ok(Loop {
        segments,
        length,
        jumps: walk.jumps,
    })
}

/// Largest generation the loop of `(root, 0)` reaches, stopping early once it
/// reaches `cap`. `seed` only labels a budget error.
pub fn max_generation_reached<S: TreeSource>(src: &mut S, cap: usize, budget: TraceBudget, seed: u64) -> Result<usize> {
    if cap == 0 {
        return Ok(0);
    }
    let root = src.root();
    let mut best = 0usize;
    let mut last_vertex = root;
    walk(src, TracePoint::up(root, 0.0), budget, seed, |src, seg| {
        if seg.vertex != last_vertex {
            last_vertex = seg.vertex;
            best = best.max(src.generation(seg.vertex));
            if best >= cap {
                return Flow::Stop;
            }
        }
        Flow::Continue
    })?;
    Ok(best)
}

/// Whether the loop of `(root, 0)` reaches generation `m`.
pub fn reaches_generation<S: TreeSource>(src: &mut S, m: usize, budget: TraceBudget) -> Result<bool> {
    Ok(max_generation_reached(src, m, budget, 0)? >= m)
}

/// All loops of a finite configuration; every gap of every timeline belongs
/// to exactly one of them.
pub fn loop_decomposition(config: &EagerConfiguration) -> Result<Vec<Loop<usize>>> {
    Ok(decompose(config)?.0)
}

type GapKey = (usize, usize);

fn decompose(config: &EagerConfiguration) -> Result<(Vec<Loop<usize>>, HashMap<GapKey, usize>)> {
    let mut owner: HashMap<GapKey, usize> = HashMap::new();
    let mut loops = Vec::new();
    let budget = TraceBudget {
        max_jumps: 2 * config.total_links() as u64 + config.vertex_count() as u64 + 1,
    };
    for v in 0..config.vertex_count() {
        let events = config.incident_events(v);
        let gaps = events.len().max(1);
        for g in 0..gaps {
            if owner.contains_key(&(v, g)) {
                continue;
            }
            let start = TracePoint::up(v, gap_midpoint(events, g));
            let id = loops.len();
            let mut src = config;
            let traced = trace_loop(&mut src, start, budget)?;
            for seg in &traced.segments {
                let ev = config.incident_events(seg.vertex);
                if ev.is_empty() {
                    owner.insert((seg.vertex, 0), id);
                } else {
                    let mid = segment_midpoint(seg);
                    owner.insert((seg.vertex, gap_of(ev, mid)), id);
                }
            }
            loops.push(traced);
        }
    }
    Ok((loops, owner))
}

fn gap_midpoint<V>(events: &[crate::configuration::Event<V>], g: usize) -> f64 {
    if events.is_empty() {
        return 0.5;
    }
    let n = events.len();
    let hi = events[g].time;
    let lo = events[(g + n - 1) % n].time;
    let mid = if g == 0 { (lo + hi + 1.0) / 2.0 } else { (lo + hi) / 2.0 };
    if mid >= 1.0 {
        mid - 1.0
    } else {
        mid
    }
}

fn segment_midpoint<V>(seg: &Segment<V>) -> f64 {
    let half = seg.length() / 2.0;
    let t = match seg.direction {
        Direction::Up => seg.from + half,
        Direction::Down => seg.from - half,
    };
    t.rem_euclid(1.0)
}

/// Whether the two sides of link `link_index` on `edge` lie on one loop.
pub fn is_monolink(config: &EagerConfiguration, edge_index: usize, link_index: usize) -> Result<bool> {
    let edge_config = config
        .edge_configurations()
        .get(edge_index)
        .ok_or_else(|| Error::NoSuchLink {
            edge: edge_index.to_string(),
            index: link_index,
        })?;
    let link = *edge_config.links().get(link_index).ok_or_else(|| Error::NoSuchLink {
        edge: edge_index.to_string(),
        index: link_index,
    })?;
    let (x, _) = config.graph().edges()[edge_index];
    let events = config.incident_events(x);
    let k = find_twin(events, link.time, config.graph().edges()[edge_index].1);
    let n = events.len();
    let above = (k + 1) % n;
    let below = k;
    let (_, owner) = decompose(config)?;
    Ok(owner[&(x, above)] == owner[&(x, below)])
}

/// Tree-edge form of [`is_monolink`].
pub fn is_monolink_on_tree(config: &EagerConfiguration, edge: &EdgeId, link_index: usize) -> Result<bool> {
    is_monolink(config, config.edge_index(edge)?, link_index)
}

pub fn loop_count(config: &EagerConfiguration) -> Result<usize> {
    Ok(loop_decomposition(config)?.len())
}

/// Change in the number of loops when `link` is added to graph edge `edge_index`.
///
/// Two distinct loops always merge (−1). A link joining a loop to itself
/// splits it (+1), unless the loop meets the link with mismatched
/// orientations, in which case it is rewired into a single loop (0); that
/// needs both link kinds present, as in a cross plus a double bar on one edge.
pub fn loop_count_delta(config: &EagerConfiguration, edge_index: usize, link: Link) -> Result<i64> {
    let before = loop_count(config)? as i64;
    let after = loop_count(&config.with_link_at(edge_index, link)?)? as i64;
    Ok(after - before)
}

/// Traces on a lazy tree from an addressed start point; the result is labelled
/// by vertex address.
pub fn trace_loop_lazy(tree: &mut LazyTree, start: &TracePoint<VertexAddress>, budget: TraceBudget) -> Result<Loop<VertexAddress>> {
    let node: NodeId = tree.node_for(&start.vertex)?;
    let traced = trace_loop(
        tree,
        TracePoint {
            vertex: node,
            time: start.time,
            direction: start.direction,
        },
        budget,
    )?;
    Ok(traced.map_vertices(|n| tree.address(n)))
}

/// Relabels an eager tree loop by vertex address.
pub fn label_tree_loop(config: &EagerConfiguration, l: &Loop<usize>) -> Loop<VertexAddress> {
    l.map_vertices(|v| config.address(v).cloned().unwrap_or_else(|| VertexAddress::from_path(vec![v as u32])))
}
