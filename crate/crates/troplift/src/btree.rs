//! The Bruhat–Tits tree of `PGL_2(K)` modelled by valuation disks.
//!
//! A lattice class is the disk `{x : v(x - c) >= r}`; a finite point of
//! `P^1(K)` behaves like a disk of radius `+∞`.  Spans, attachment points and
//! distances all reduce to valuations of differences of centers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::puiseux::{
    fmt_q, parse_q, qi, val_diff, Coeff, P1Point, PuiseuxError, Series, Valuation, Q,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BtError {
    #[error("points coincide")]
    Coincident,
    #[error("insufficient precision to compare disk centers")]
    InsufficientPrecision,
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("point lies in the input set")]
    PointInSet,
    #[error(transparent)]
    Series(#[from] PuiseuxError),
}

/// A point of `BT(K) ∪ P^1(K)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BTPoint {
    P1(P1Point),
    /// The disk `{x : v(x - center) >= radius}`.
    Lattice { center: Series, radius: Q },
}

impl BTPoint {
    /// The standard class `O^2`, i.e. the disk `(0, 0)`.
    pub fn origin() -> Self {
        BTPoint::Lattice { center: Series::zero(), radius: Q::zero() }
    }

    pub fn lattice(center: Series, radius: Q) -> Self {
        BTPoint::Lattice { center, radius }
    }

    pub fn point(x: Series) -> Self {
        BTPoint::P1(P1Point::Finite(x))
    }

    pub fn infinity() -> Self {
        BTPoint::P1(P1Point::Infinity)
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, BTPoint::Lattice { .. })
    }

    fn as_obj(&self) -> Obj<'_> {
        match self {
            BTPoint::P1(P1Point::Finite(c)) => Obj::Fin(c, None),
            BTPoint::P1(P1Point::Infinity) => Obj::Inf,
            BTPoint::Lattice { center, radius } => Obj::Fin(center, Some(radius)),
        }
    }

    /// Geometric equality (disks compare by containment, not by center).
    pub fn same(&self, other: &BTPoint) -> Result<bool, BtError> {
        match (self.as_obj(), other.as_obj()) {
            (Obj::Inf, Obj::Inf) => Ok(true),
            (Obj::Fin(a, ra), Obj::Fin(b, rb)) => {
                if ra != rb {
                    return Ok(false);
                }
                match ra {
                    None => Ok(val_diff(a, b) == Valuation::Infinite),
                    Some(r) => vdiff_ge(a, b, r),
                }
            }
            _ => Ok(false),
        }
    }
}

impl fmt::Display for BTPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BTPoint::P1(p) => write!(f, "{p}"),
            BTPoint::Lattice { center, radius } => write!(f, "disk({center}, {})", fmt_q(radius)),
        }
    }
}

#[derive(Clone, Copy)]
enum Obj<'a> {
    Fin(&'a Series, Option<&'a Q>),
    Inf,
}

/// `v(a - b) >= r`, failing only when truncation hides the answer.
pub(crate) fn vdiff_ge(a: &Series, b: &Series, r: &Q) -> Result<bool, BtError> {
    match val_diff(a, b) {
        Valuation::Finite(v) => Ok(&v >= r),
        Valuation::Infinite => Ok(true),
        Valuation::Unknown => {
            let t = match (a.trunc(), b.trunc()) {
                (Some(x), Some(y)) => x.min(y).clone(),
                (Some(x), None) | (None, Some(x)) => x.clone(),
                (None, None) => unreachable!(),
            };
            if &t >= r {
                Ok(true)
            } else {
                Err(BtError::InsufficientPrecision)
            }
        }
    }
}

fn vdiff(a: &Series, b: &Series) -> Result<Option<Q>, BtError> {
    if a == b {
        // The same (possibly truncated) center: disks built on it compare by radius.
        return Ok(None);
    }
    match val_diff(a, b) {
        Valuation::Finite(v) => Ok(Some(v)),
        Valuation::Infinite => Ok(None),
        Valuation::Unknown => Err(BtError::InsufficientPrecision),
    }
}

fn rad_le(a: Option<&Q>, b: Option<&Q>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

/// Whether the finite object `(ci, ri)` lies inside the disk `(co, ro)`.
fn inside(ci: &Series, ri: Option<&Q>, co: &Series, ro: &Q) -> Result<bool, BtError> {
    if !rad_le(Some(ro), ri) {
        return Ok(false);
    }
    vdiff_ge(ci, co, ro)
}

/// Tree distance between two lattice classes.
pub fn distance(p: &BTPoint, q: &BTPoint) -> Result<Q, BtError> {
    let (BTPoint::Lattice { center: c1, radius: r1 }, BTPoint::Lattice { center: c2, radius: r2 }) =
        (p, q)
    else {
        return Err(BtError::InvalidTree("distance is only finite between lattice classes".into()));
    };
    let m = r1.min(r2).clone();
    match vdiff(c1, c2)? {
        Some(v) if v < m => Ok(r1 + r2 - qi(2) * v),
        _ => Ok((r1 - r2).abs()),
    }
}

// ---------------------------------------------------------------------------
// Abstract metric trees
// ---------------------------------------------------------------------------

/// Edge length: a positive rational or `∞`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Length {
    Finite(Q),
    Infinite,
}

impl Length {
    pub fn finite(&self) -> Option<&Q> {
        match self {
            Length::Finite(q) => Some(q),
            Length::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Length::Infinite)
    }

    pub fn to_json(&self) -> String {
        match self {
            Length::Finite(q) => fmt_q(q),
            Length::Infinite => "inf".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Length, PuiseuxError> {
        if s.trim() == "inf" {
            Ok(Length::Infinite)
        } else {
            Ok(Length::Finite(parse_q(s)?))
        }
    }

    fn add(&self, other: &Length) -> Length {
        match (self, other) {
            (Length::Finite(a), Length::Finite(b)) => Length::Finite(a + b),
            _ => Length::Infinite,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeVertex {
    pub id: String,
    pub leaf: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub length: Length,
}

/// A finite metric tree; `∞` lengths only on edges ending at a leaf.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MetricTree {
    pub vertices: Vec<TreeVertex>,
    pub edges: Vec<TreeEdge>,
}

#[derive(Serialize, Deserialize)]
struct TreeVertexJson {
    id: String,
    leaf: bool,
}

#[derive(Serialize, Deserialize)]
struct TreeEdgeJson {
    a: String,
    b: String,
    length: String,
}

#[derive(Serialize, Deserialize)]
struct MetricTreeJson {
    vertices: Vec<TreeVertexJson>,
    edges: Vec<TreeEdgeJson>,
}

impl MetricTree {
    pub fn add_vertex(&mut self, id: impl Into<String>, leaf: bool) -> usize {
        self.vertices.push(TreeVertex { id: id.into(), leaf });
        self.vertices.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize, length: Length) -> usize {
        self.edges.push(TreeEdge { a, b, length });
        self.edges.len() - 1
    }

    /// Incident edge indices per vertex, in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.a].push(i);
            if e.b != e.a {
                adj[e.b].push(i);
            }
        }
        adj
    }

    pub fn other(&self, edge: usize, v: usize) -> usize {
        let e = &self.edges[edge];
        if e.a == v {
            e.b
        } else {
            e.a
        }
    }

    /// Checks connectivity, acyclicity and the length conventions.
    pub fn check(&self) -> Result<(), BtError> {
        let nv = self.vertices.len();
        if nv == 0 {
            return Err(BtError::InvalidTree("empty tree".into()));
        }
        if self.edges.len() + 1 != nv {
            return Err(BtError::InvalidTree("edge count must be vertex count minus one".into()));
        }
        let adj = self.adjacency();
        for e in &self.edges {
            if e.a >= nv || e.b >= nv || e.a == e.b {
                return Err(BtError::InvalidTree("bad edge endpoints".into()));
            }
            match &e.length {
                Length::Finite(l) if l <= &Q::zero() => {
                    return Err(BtError::InvalidTree("finite lengths must be positive".into()))
                }
                Length::Infinite => {
                    let leafy = |v: usize| self.vertices[v].leaf && adj[v].len() == 1;
                    if !leafy(e.a) && !leafy(e.b) {
                        return Err(BtError::InvalidTree("infinite edge without a leaf end".into()));
                    }
                }
                _ => {}
            }
        }
        let mut seen = vec![false; nv];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &e in &adj[v] {
                let w = self.other(e, v);
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(BtError::InvalidTree("tree is disconnected".into()));
        }
        Ok(())
    }

    /// Whether vertex `v` is a leaf sitting at the end of an `∞` edge.
    pub fn is_p1_leaf(&self, v: usize, adj: &[Vec<usize>]) -> bool {
        adj[v].len() == 1 && self.edges[adj[v][0]].length.is_infinite() && self.vertices[v].leaf
    }

    /// Removes unlabeled degree-2 vertices by merging their two edges.
    /// Returns the new tree and the old index of each surviving vertex.
    pub fn smoothed(&self, keep: &dyn Fn(usize) -> bool) -> (MetricTree, Vec<usize>) {
        let adj = self.adjacency();
        let mut alive_edge: Vec<Option<TreeEdge>> = self.edges.iter().cloned().map(Some).collect();
        let mut inc: Vec<BTreeSet<usize>> =
            adj.iter().map(|a| a.iter().copied().collect()).collect();
        let mut removed = vec![false; self.vertices.len()];
        for v in 0..self.vertices.len() {
            if keep(v) || inc[v].len() != 2 {
                continue;
            }
            let es: Vec<usize> = inc[v].iter().copied().collect();
            let (e1, e2) = (es[0], es[1]);
            let a = alive_edge[e1].as_ref().unwrap();
            let b = alive_edge[e2].as_ref().unwrap();
            let x = if a.a == v { a.b } else { a.a };
            let y = if b.a == v { b.b } else { b.a };
            if x == y {
                continue;
            }
            let len = a.length.add(&b.length);
            alive_edge[e2] = None;
            alive_edge[e1] = Some(TreeEdge { a: x, b: y, length: len });
            inc[y].remove(&e2);
            inc[y].insert(e1);
            inc[v].clear();
            removed[v] = true;
        }
        let mut map = vec![usize::MAX; self.vertices.len()];
        let mut out = MetricTree::default();
        let mut old = Vec::new();
        for (i, vx) in self.vertices.iter().enumerate() {
            if !removed[i] {
                map[i] = out.add_vertex(vx.id.clone(), vx.leaf);
                old.push(i);
            }
        }
        for e in alive_edge.into_iter().flatten() {
            out.add_edge(map[e.a], map[e.b], e.length);
        }
        (out, old)
    }

    /// Edge splits `(labels on the side without the smallest label, length)`,
    /// sorted.  Two smoothed trees with the same labels are isometric under
    /// the labelling iff their split lists agree.
    pub fn splits(&self, label: &dyn Fn(usize) -> Option<usize>) -> Vec<(Vec<usize>, Length)> {
        let adj = self.adjacency();
        let all: BTreeSet<usize> = (0..self.vertices.len()).filter_map(label).collect();
        let min_label = all.iter().next().copied();
        let mut out = Vec::new();
        for (ei, e) in self.edges.iter().enumerate() {
            let mut side = BTreeSet::new();
            let mut stack = vec![e.b];
            let mut seen = BTreeSet::from([e.a, e.b]);
            while let Some(v) = stack.pop() {
                if let Some(l) = label(v) {
                    side.insert(l);
                }
                for &f in &adj[v] {
                    if f == ei {
                        continue;
                    }
                    let w = self.other(f, v);
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            let side: BTreeSet<usize> = if min_label.map_or(false, |m| side.contains(&m)) {
                all.difference(&side).copied().collect()
            } else {
                side
            };
            out.push((side.into_iter().collect(), e.length.clone()));
        }
        out.sort();
        out
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let j = MetricTreeJson {
            vertices: self
                .vertices
                .iter()
                .map(|v| TreeVertexJson { id: v.id.clone(), leaf: v.leaf })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| TreeEdgeJson {
                    a: self.vertices[e.a].id.clone(),
                    b: self.vertices[e.b].id.clone(),
                    length: e.length.to_json(),
                })
                .collect(),
        };
        serde_json::to_value(j).expect("tree serializes")
    }

    pub fn from_json_str(s: &str) -> Result<MetricTree, BtError> {
        let j: MetricTreeJson =
            serde_json::from_str(s).map_err(|e| BtError::InvalidTree(e.to_string()))?;
        let mut t = MetricTree::default();
        let mut ids = BTreeMap::new();
        for v in &j.vertices {
            if ids.insert(v.id.clone(), t.vertices.len()).is_some() {
                return Err(BtError::InvalidTree(format!("duplicate vertex id {}", v.id)));
            }
            t.add_vertex(v.id.clone(), v.leaf);
        }
        for e in &j.edges {
            let a = *ids.get(&e.a).ok_or_else(|| BtError::InvalidTree(format!("unknown {}", e.a)))?;
            let b = *ids.get(&e.b).ok_or_else(|| BtError::InvalidTree(format!("unknown {}", e.b)))?;
            t.add_edge(a, b, Length::parse(&e.length)?);
        }
        t.check()?;
        Ok(t)
    }
}

/// Whether two trees are isometric under the given leaf labellings, after
/// smoothing unlabeled degree-2 vertices.
pub fn isometric(
    t1: &MetricTree,
    l1: &dyn Fn(usize) -> Option<usize>,
    t2: &MetricTree,
    l2: &dyn Fn(usize) -> Option<usize>,
) -> bool {
    let (s1, o1) = t1.smoothed(&|v| l1(v).is_some());
    let (s2, o2) = t2.smoothed(&|v| l2(v).is_some());
    s1.splits(&|v| l1(o1[v])) == s2.splits(&|v| l2(o2[v]))
}

// ---------------------------------------------------------------------------
// Spans
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum SkelKind {
    Disk { c: Series, r: Q },
    Point(Series),
    Inf,
}

#[derive(Clone, Debug)]
struct SkelNode {
    kind: SkelKind,
    input: Option<usize>,
    parent: Option<usize>,
}

/// The span `[Z]` with its embedding into `BT(K) ∪ P^1(K)`.
#[derive(Clone, Debug)]
pub struct SpanTree {
    pub tree: MetricTree,
    /// Position of every tree vertex.
    pub positions: Vec<BTPoint>,
    /// Tree vertex of each input point.
    pub input_vertex: Vec<usize>,
    has_inf: bool,
    top: Option<BTPoint>,
}

/// Location of `b(u)` on a span tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Attach {
    pub point: BTPoint,
    /// Tree edge containing the point and distance from that edge's vertex
    /// `a` (or from `b` when `a` is a point of `P^1`).
    pub edge: Option<(usize, Q)>,
    /// Set when the point is a tree vertex.
    pub vertex: Option<usize>,
}

/// Position of a disk on the path between two points.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPos {
    /// Distance from the first endpoint (absent if it is a point of `P^1`).
    pub from_a: Option<Q>,
    /// Distance from the second endpoint (absent if it is a point of `P^1`).
    pub from_b: Option<Q>,
}

/// Where the disk `d` sits on the path `[a, b]`, if it does.
pub fn on_path(a: &BTPoint, b: &BTPoint, d: (&Series, &Q)) -> Result<Option<PathPos>, BtError> {
    let (dc, dr) = d;
    match (a.as_obj(), b.as_obj()) {
        (Obj::Inf, Obj::Inf) => Err(BtError::Coincident),
        (Obj::Fin(c, r), Obj::Inf) | (Obj::Inf, Obj::Fin(c, r)) => {
            if !inside(c, r, dc, dr)? {
                return Ok(None);
            }
            let dist = r.map(|r| r - dr);
            let a_is_fin = matches!(a.as_obj(), Obj::Fin(..));
            Ok(Some(if a_is_fin {
                PathPos { from_a: dist, from_b: None }
            } else {
                PathPos { from_a: None, from_b: dist }
            }))
        }
        (Obj::Fin(ca, ra), Obj::Fin(cb, rb)) => {
            let mut jr = match (ra, rb) {
                (Some(x), Some(y)) => x.min(y).clone(),
                (Some(x), None) | (None, Some(x)) => x.clone(),
                (None, None) => match vdiff(ca, cb)? {
                    Some(v) => v,
                    None => return Err(BtError::Coincident),
                },
            };
            if let Some(v) = vdiff(ca, cb)? {
                if v < jr {
                    jr = v;
                }
            }
            // d must lie within the join disk.
            if dr < &jr || !vdiff_ge(dc, ca, &jr)? {
                return Ok(None);
            }
            let in_a = inside(ca, ra, dc, dr)?;
            let in_b = inside(cb, rb, dc, dr)?;
            if !in_a && !in_b {
                return Ok(None);
            }
            let up_a = ra.map(|r| r - dr);
            let up_b = rb.map(|r| r - dr);
            let via = |r: Option<&Q>| r.map(|r| (r - &jr) + (dr - &jr));
            let (fa, fb) = if in_a && in_b {
                (up_a, up_b)
            } else if in_a {
                (up_a, via(rb))
            } else {
                (via(ra), up_b)
            };
            Ok(Some(PathPos { from_a: fa, from_b: fb }))
        }
    }
}

/// Computes `[Z]`.
pub fn span_tree(z: &[BTPoint]) -> Result<SpanTree, BtError> {
    if z.is_empty() {
        return Err(BtError::InvalidTree("empty point set".into()));
    }
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            if z[i].same(&z[j])? {
                return Err(BtError::Coincident);
            }
        }
    }
    let has_inf = z.iter().any(|p| matches!(p, BTPoint::P1(P1Point::Infinity)));
    let finite: Vec<(usize, &Series, Option<&Q>)> = z
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p.as_obj() {
            Obj::Fin(c, r) => Some((i, c, r)),
            Obj::Inf => None,
        })
        .collect();

    // Candidate disks: input classes and pairwise joins.
    let mut disks: Vec<(Series, Q, Option<usize>)> = Vec::new();
    let mut push_disk = |c: &Series, r: Q, input: Option<usize>| -> Result<(), BtError> {
        for d in disks.iter_mut() {
            if d.1 == r && vdiff_ge(c, &d.0, &r)? {
                if input.is_some() {
                    d.2 = input;
                }
                return Ok(());
            }
        }
        disks.push((c.clone(), r, input));
        Ok(())
    };
    for &(i, c, r) in &finite {
        if let Some(r) = r {
            push_disk(c, r.clone(), Some(i))?;
        }
    }
    for x in 0..finite.len() {
        for y in x + 1..finite.len() {
            let (_, ca, ra) = finite[x];
            let (_, cb, rb) = finite[y];
            let mut r: Option<Q> = match (ra, rb) {
                (Some(p), Some(q)) => Some(p.min(q).clone()),
                (Some(p), None) | (None, Some(p)) => Some(p.clone()),
                (None, None) => None,
            };
            if let Some(v) = vdiff(ca, cb)? {
                r = Some(match r {
                    Some(r) if r < v => r,
                    _ => v,
                });
            }
            push_disk(ca, r.expect("distinct points have a finite join"), None)?;
        }
    }

    let mut nodes: Vec<SkelNode> = Vec::new();
    for (c, r, input) in &disks {
        nodes.push(SkelNode { kind: SkelKind::Disk { c: c.clone(), r: r.clone() }, input: *input, parent: None });
    }
    for &(i, c, r) in &finite {
        if r.is_none() {
            nodes.push(SkelNode { kind: SkelKind::Point(c.clone()), input: Some(i), parent: None });
        }
    }
    let ndisks = disks.len();
    for k in 0..nodes.len() {
        let (kc, kr) = match &nodes[k].kind {
            SkelKind::Disk { c, r } => (c.clone(), Some(r.clone())),
            SkelKind::Point(c) => (c.clone(), None),
            SkelKind::Inf => unreachable!(),
        };
        let mut best: Option<usize> = None;
        for d in 0..ndisks {
            if d == k {
                continue;
            }
            let (dc, dr) = (&disks[d].0, &disks[d].1);
            if kr.as_ref() == Some(dr) {
                continue;
            }
            if inside(&kc, kr.as_ref(), dc, dr)? {
                best = match best {
                    Some(b) if disks[b].1 >= *dr => Some(b),
                    _ => Some(d),
                };
            }
        }
        nodes[k].parent = best;
    }
    let top = (0..ndisks).find(|&d| nodes[d].parent.is_none());
    let inf_index = z.iter().position(|p| matches!(p, BTPoint::P1(P1Point::Infinity)));
    if has_inf {
        nodes.push(SkelNode { kind: SkelKind::Inf, input: inf_index, parent: None });
    }

    // Raw tree over skeleton nodes.
    let mut raw = MetricTree::default();
    for (k, n) in nodes.iter().enumerate() {
        raw.add_vertex(format!("n{k}"), n.input.is_some());
    }
    let radius = |k: usize| match &nodes[k].kind {
        SkelKind::Disk { r, .. } => Some(r.clone()),
        _ => None,
    };
    for k in 0..nodes.len() {
        if let Some(p) = nodes[k].parent {
            let len = match radius(k) {
                Some(r) => Length::Finite(r - radius(p).unwrap()),
                None => Length::Infinite,
            };
            raw.add_edge(k, p, len);
        }
    }
    if has_inf {
        let inf_node = nodes.len() - 1;
        match top {
            Some(t) => {
                raw.add_edge(t, inf_node, Length::Infinite);
            }
            None => {
                // Only {x, ∞} or {∞}: join the lone finite point directly.
                if let Some(p) = (0..inf_node).next() {
                    raw.add_edge(p, inf_node, Length::Infinite);
                }
            }
        }
    }
    let position = |k: usize| match &nodes[k].kind {
        SkelKind::Disk { c, r } => BTPoint::lattice(c.clone(), r.clone()),
        SkelKind::Point(c) => BTPoint::point(c.clone()),
        SkelKind::Inf => BTPoint::infinity(),
    };
    let (tree, old) = raw.smoothed(&|v| nodes[v].input.is_some());
    let positions: Vec<BTPoint> = old.iter().map(|&k| position(k)).collect();
    let mut input_vertex = vec![usize::MAX; z.len()];
    for (new, &k) in old.iter().enumerate() {
        if let Some(i) = nodes[k].input {
            input_vertex[i] = new;
        }
    }
    let top_point = top.map(position);
    Ok(SpanTree { tree, positions, input_vertex, has_inf, top: top_point })
}

impl SpanTree {
    /// Locates a disk on the tree (vertex, or edge plus offset).
    pub fn locate(&self, c: &Series, r: &Q) -> Result<Option<Attach>, BtError> {
        let d = BTPoint::lattice(c.clone(), r.clone());
        for (v, p) in self.positions.iter().enumerate() {
            if p.is_lattice() && p.same(&d)? {
                return Ok(Some(Attach { point: d, edge: None, vertex: Some(v) }));
            }
        }
        for (ei, e) in self.tree.edges.iter().enumerate() {
            let pa = &self.positions[e.a];
            let pb = &self.positions[e.b];
            if let Some(pos) = on_path(pa, pb, (c, r))? {
                let off = match (&pos.from_a, &pos.from_b) {
                    (Some(x), _) => x.clone(),
                    (None, Some(y)) => match &e.length {
                        Length::Finite(l) => l - y,
                        Length::Infinite => -y.clone(),
                    },
                    // Both ends are points of P^1: parameterize by radius.
                    (None, None) => r.clone(),
                };
                return Ok(Some(Attach { point: d, edge: Some((ei, off)), vertex: None }));
            }
        }
        Ok(None)
    }

    /// The point `b(u)` where the ray towards `u` leaves `[Z]`.
    pub fn attach(&self, u: &P1Point, z: &[BTPoint]) -> Result<Attach, BtError> {
        let u_series = match u {
            P1Point::Infinity => {
                if self.has_inf {
                    return Err(BtError::PointInSet);
                }
                return self.attach_top();
            }
            P1Point::Finite(s) => s,
        };
        let mut best: Option<Q> = None;
        let mut lone: Option<usize> = None;
        for (i, p) in z.iter().enumerate() {
            let (c, r) = match p.as_obj() {
                Obj::Fin(c, r) => (c, r),
                Obj::Inf => continue,
            };
            let mut m = match vdiff(u_series, c)? {
                Some(v) => v,
                None if r.is_none() => return Err(BtError::PointInSet),
                None => r.unwrap().clone(),
            };
            if let Some(r) = r {
                if r < &m {
                    m = r.clone();
                }
            }
            lone = Some(i);
            best = Some(match best {
                Some(b) if b >= m => b,
                _ => m,
            });
        }
        let Some(rho) = best else {
            // Z = {∞}.
            return Ok(Attach { point: BTPoint::infinity(), edge: None, vertex: Some(0) });
        };
        if self.top.is_none() && !self.has_inf {
            let v = self.input_vertex[lone.unwrap()];
            return Ok(Attach { point: self.positions[v].clone(), edge: None, vertex: Some(v) });
        }
        if let (false, Some(BTPoint::Lattice { radius, .. })) = (self.has_inf, &self.top) {
            if &rho < radius {
                return self.attach_top();
            }
        }
        self.locate(u_series, &rho)?.ok_or(BtError::InsufficientPrecision)
    }

    fn attach_top(&self) -> Result<Attach, BtError> {
        match &self.top {
            Some(BTPoint::Lattice { center, radius }) => {
                self.locate(center, radius)?.ok_or(BtError::InsufficientPrecision)
            }
            _ => Ok(Attach { point: self.positions[0].clone(), edge: None, vertex: Some(0) }),
        }
    }
}

/// `b(u)` for `u` relative to `[Z]`.
pub fn attach_point(z: &[BTPoint], u: &P1Point) -> Result<Attach, BtError> {
    span_tree(z)?.attach(u, z)
}

// ---------------------------------------------------------------------------
// Realization
// ---------------------------------------------------------------------------

/// `x ↦ base + t^scale · x`.
#[derive(Clone, Debug)]
pub struct Frame {
    pub base: Series,
    pub scale: Q,
}

impl Frame {
    pub fn origin() -> Self {
        Frame { base: Series::zero(), scale: Q::zero() }
    }

    fn child(&self, residue: &Coeff, depth: &Q) -> Frame {
        Frame {
            base: self.base.add(&Series::monomial(residue.clone(), self.scale.clone())),
            scale: &self.scale + depth,
        }
    }
}

/// Places the subtree hanging from `root` (away from `from_edge` and any
/// edge rejected by `usable`) into `out`, with `root` at the disk of `frame`.
/// Children of `root` take residues from `first`; deeper levels count 1, 2, 3.
pub fn place_subtree(
    tree: &MetricTree,
    adj: &[Vec<usize>],
    root: usize,
    from_edge: Option<usize>,
    usable: &dyn Fn(usize) -> bool,
    frame: Frame,
    first: &mut dyn FnMut(usize) -> Coeff,
    out: &mut [Option<BTPoint>],
) {
    out[root] = Some(BTPoint::lattice(frame.base.clone(), frame.scale.clone()));
    let mut k = 0;
    for &e in &adj[root] {
        if Some(e) == from_edge || !usable(e) {
            continue;
        }
        let child = tree.other(e, root);
        let beta = first(k);
        k += 1;
        place_edge(tree, adj, child, e, usable, &frame, &beta, out);
    }
}

fn place_edge(
    tree: &MetricTree,
    adj: &[Vec<usize>],
    child: usize,
    e: usize,
    usable: &dyn Fn(usize) -> bool,
    frame: &Frame,
    beta: &Coeff,
    out: &mut [Option<BTPoint>],
) {
    match &tree.edges[e].length {
        Length::Infinite => {
            let x = frame.base.add(&Series::monomial(beta.clone(), frame.scale.clone()));
            out[child] = Some(BTPoint::point(x));
        }
        Length::Finite(d) => {
            let f = frame.child(beta, d);
            place_subtree(tree, adj, child, Some(e), usable, f, &mut |i| Coeff::from_int(i as i64 + 1), out);
        }
    }
}

/// Finds points whose span is isometric to `t`: leaves on `∞` edges become
/// points of `P^1`, every other vertex a lattice class.  Returns a position
/// for every vertex.
pub fn realize_tree(t: &MetricTree) -> Result<Vec<BTPoint>, BtError> {
    t.check()?;
    let adj = t.adjacency();
    let nv = t.vertices.len();
    if nv == 1 {
        return Ok(vec![BTPoint::origin()]);
    }
    let p1 = |v: usize| t.is_p1_leaf(v, &adj);
    if nv == 2 {
        let e = &t.edges[0];
        return Ok(match &e.length {
            Length::Infinite => {
                let (pa, pb) = (p1(e.a), p1(e.b));
                let mut out = vec![BTPoint::origin(); 2];
                match (pa, pb) {
                    (true, true) => {
                        out[e.a] = BTPoint::point(Series::zero());
                        out[e.b] = BTPoint::infinity();
                    }
                    (true, false) => out[e.a] = BTPoint::infinity(),
                    _ => out[e.b] = BTPoint::infinity(),
                }
                out
            }
            Length::Finite(d) => {
                let mut out = vec![BTPoint::origin(); 2];
                out[e.b] = BTPoint::lattice(Series::zero(), d.clone());
                out
            }
        });
    }
    let mut out: Vec<Option<BTPoint>> = vec![None; nv];
    let all_rays = t.edges.iter().all(|e| e.length.is_infinite());
    let center = (0..nv).find(|&v| adj[v].len() > 1);
    if all_rays {
        let c = center.ok_or_else(|| BtError::InvalidTree("no internal vertex".into()))?;
        if adj[c].len() == 2 {
            let mut out = vec![BTPoint::origin(); nv];
            out[t.other(adj[c][0], c)] = BTPoint::point(Series::zero());
            out[t.other(adj[c][1], c)] = BTPoint::infinity();
            return Ok(out);
        }
        place_subtree(t, &adj, c, None, &|_| true, Frame::origin(), &mut |i| Coeff::from_int(i as i64 + 1), &mut out);
        return Ok(out.into_iter().map(|p| p.unwrap()).collect());
    }
    let root = (0..nv)
        .find(|&v| adj[v].len() > 1 && adj[v].iter().any(|&e| p1(t.other(e, v))))
        .or(center)
        .ok_or_else(|| BtError::InvalidTree("no internal vertex".into()))?;
    let up_edge = adj[root].iter().rev().copied().find(|&e| p1(t.other(e, root)));
    let up_edge = up_edge.or_else(|| adj[root].iter().rev().copied().find(|&e| adj[t.other(e, root)].len() == 1));
    if let Some(e) = up_edge {
        let l = t.other(e, root);
        out[l] = Some(match &t.edges[e].length {
            Length::Infinite => BTPoint::point(Series::t_pow(qi(-1))),
            Length::Finite(d) => BTPoint::lattice(Series::zero(), -d.clone()),
        });
    }
    let usable = |e: usize| Some(e) != up_edge;
    place_subtree(t, &adj, root, None, &usable, Frame::origin(), &mut |i| Coeff::from_int(i as i64 + 1), &mut out);
    out.into_iter()
        .map(|p| p.ok_or_else(|| BtError::InvalidTree("unreached vertex".into())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puiseux::q;

    fn pt(terms: &[(i64, i64, i64)]) -> BTPoint {
        BTPoint::point(Series::from_ints(terms))
    }

    #[test]
    fn distances() {
        let o = BTPoint::origin();
        let d4 = BTPoint::lattice(Series::zero(), qi(4));
        assert_eq!(distance(&o, &d4).unwrap(), qi(4));
        assert_eq!(distance(&o, &o).unwrap(), qi(0));
        let d = BTPoint::lattice(Series::from_ints(&[(0, 1, 1)]), qi(1));
        assert_eq!(distance(&BTPoint::lattice(Series::zero(), qi(1)), &d).unwrap(), qi(2));
        let tp = BTPoint::lattice(Series::from_ints(&[(1, 1, 1)]), qi(1));
        assert_eq!(distance(&o, &tp).unwrap(), qi(1));
    }

    #[test]
    fn example_one_span() {
        let z = vec![pt(&[]), pt(&[(1, 1, 1)]), pt(&[(0, 1, 1)]), pt(&[(-1, 1, 1)])];
        let s = span_tree(&z).unwrap();
        let finite: Vec<_> = s.tree.edges.iter().filter_map(|e| e.length.finite().cloned()).collect();
        assert_eq!(finite, vec![qi(1)]);
        assert_eq!(s.tree.edges.len(), 5);
    }

    #[test]
    fn star_spans() {
        let z: Vec<_> = (1..=4).map(|k| pt(&[(0, 1, k)])).collect();
        let s = span_tree(&z).unwrap();
        assert_eq!(s.tree.vertices.len(), 5);
        assert!(s.tree.edges.iter().all(|e| e.length.is_infinite()));
        let z = vec![pt(&[]), pt(&[(0, 1, 1)]), BTPoint::infinity()];
        let s = span_tree(&z).unwrap();
        assert_eq!(s.tree.vertices.len(), 4);
        assert!(s.positions.iter().any(|p| p.same(&BTPoint::origin()).unwrap()));
    }

    #[test]
    fn attach_examples() {
        let z = vec![pt(&[]), pt(&[(1, 1, 1)]), pt(&[(0, 1, 1)]), pt(&[(-1, 1, 1)])];
        let a = attach_point(&z, &P1Point::Finite(Series::from_ints(&[(0, 1, 2)]))).unwrap();
        assert!(a.point.same(&BTPoint::origin()).unwrap());
        let a = attach_point(&z, &P1Point::Finite(Series::from_ints(&[(1, 1, 1), (5, 1, 1)]))).unwrap();
        assert!(a.point.same(&BTPoint::lattice(Series::t_pow(qi(1)), qi(5))).unwrap());
        let z = vec![pt(&[]), BTPoint::infinity()];
        let a = attach_point(&z, &P1Point::Finite(Series::t_pow(qi(3)))).unwrap();
        assert!(a.point.same(&BTPoint::lattice(Series::zero(), qi(3))).unwrap());
        assert!(a.edge.is_some());
    }

    #[test]
    fn path_positions() {
        let a = BTPoint::origin();
        let b = BTPoint::lattice(Series::t_pow(qi(1)), qi(2));
        let mid = Series::zero();
        let pos = on_path(&a, &b, (&mid, &qi(1))).unwrap().unwrap();
        assert_eq!(pos.from_a, Some(qi(1)));
        assert_eq!(pos.from_b, Some(qi(1)));
        let off = Series::from_ints(&[(0, 1, 1)]);
        assert!(on_path(&a, &b, (&off, &qi(1))).unwrap().is_none());
    }

    #[test]
    fn realize_base_cases() {
        let mut t = MetricTree::default();
        let a = t.add_vertex("a", true);
        let b = t.add_vertex("b", true);
        t.add_edge(a, b, Length::Infinite);
        let z = realize_tree(&t).unwrap();
        assert_eq!(z, vec![BTPoint::point(Series::zero()), BTPoint::infinity()]);

        let mut star = MetricTree::default();
        let c = star.add_vertex("c", false);
        for k in 0..3 {
            let l = star.add_vertex(format!("l{k}"), true);
            star.add_edge(c, l, Length::Infinite);
        }
        let z = realize_tree(&star).unwrap();
        for k in 1..=3 {
            assert_eq!(z[k], pt(&[(0, 1, k as i64)]));
        }
    }

    #[test]
    fn realize_example_one_tree() {
        let mut t = MetricTree::default();
        let x = t.add_vertex("x", false);
        let y = t.add_vertex("y", false);
        t.add_edge(x, y, Length::Finite(qi(1)));
        let mut leaves = vec![];
        for (k, at) in [x, x, y, y].into_iter().enumerate() {
            let l = t.add_vertex(format!("l{k}"), true);
            t.add_edge(at, l, Length::Infinite);
            leaves.push(l);
        }
        let z = realize_tree(&t).unwrap();
        let pts: Vec<BTPoint> = leaves.iter().map(|&l| z[l].clone()).collect();
        let span = span_tree(&pts).unwrap();
        let labels: BTreeMap<usize, usize> = leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let inv: BTreeMap<usize, usize> = span.input_vertex.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        assert!(isometric(&t, &|v| labels.get(&v).copied(), &span.tree, &|v| inv.get(&v).copied()));
        let _ = q(1, 2);
    }
}
