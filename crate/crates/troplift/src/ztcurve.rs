//! Zero-tension curves: the JSON data model, validation and the combinatorial
//! analyses used by the lifting code (genus, degree, circuit, flats,
//! well-spacedness).

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::btree::Length;
use crate::embed::{ray_degree, EmbeddedGraph};
use crate::linalg::{in_span, rank_i64, reduce_mod, span_basis, to_q};
use crate::puiseux::{fmt_q, parse_q, qi, Q};

#[derive(Debug, Error)]
pub enum InputError {
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { message: String, line: usize, column: usize },
    #[error("{0}")]
    Structure(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum ZtError {
    #[error("curve is invalid: {0}")]
    Invalid(String),
    #[error("expected genus {expected}, found {found}")]
    WrongGenus { expected: usize, found: usize },
    #[error("the circuit has total length 0")]
    ZeroLengthCircuit,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveVertex {
    pub id: String,
    pub coords: Option<Vec<Q>>,
    pub boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveEdge {
    pub from: usize,
    pub to: usize,
    /// Primitive direction at the `from` end (zero for a collapsed edge).
    pub direction: Vec<i64>,
    pub multiplicity: u64,
    pub length: Length,
}

impl CurveEdge {
    pub fn is_collapsed(&self) -> bool {
        self.direction.iter().all(|&x| x == 0)
    }

    /// `m(e) rho_from(e)`.
    pub fn sigma(&self) -> Vec<i64> {
        self.direction.iter().map(|x| x * self.multiplicity as i64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ZTCurve {
    pub lattice_rank: usize,
    pub vertices: Vec<CurveVertex>,
    pub edges: Vec<CurveEdge>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Scalar {
    Str(String),
    Int(i64),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Str(s) => s.clone(),
            Scalar::Int(n) => n.to_string(),
        }
    }
}

fn one() -> u64 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVertex {
    id: Scalar,
    #[serde(default)]
    coords: Option<Vec<Scalar>>,
    #[serde(default)]
    boundary: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: Scalar,
    to: Scalar,
    direction: Vec<i64>,
    #[serde(default = "one")]
    multiplicity: u64,
    length: Scalar,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    lattice_rank: usize,
    vertices: Vec<RawVertex>,
    edges: Vec<RawEdge>,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct Issue {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct ValidationReport {
    pub valid: bool,
    pub issues: Vec<Issue>,
}

impl ZTCurve {
    pub fn new(lattice_rank: usize) -> Self {
        ZTCurve { lattice_rank, ..Default::default() }
    }

    pub fn add_vertex(&mut self, id: impl Into<String>, coords: Option<Vec<Q>>) -> usize {
        self.vertices.push(CurveVertex { id: id.into(), coords, boundary: false });
        self.vertices.len() - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, direction: Vec<i64>, multiplicity: u64, length: Q) -> usize {
        self.edges.push(CurveEdge { from, to, direction, multiplicity, length: Length::Finite(length) });
        self.edges.len() - 1
    }

    /// Adds an unbounded edge from `from` with a fresh boundary vertex.
    pub fn add_ray(&mut self, from: usize, direction: Vec<i64>, multiplicity: u64) -> usize {
        let id = format!("{}~{}", self.vertices[from].id, self.edges.len());
        self.vertices.push(CurveVertex { id, coords: None, boundary: true });
        let b = self.vertices.len() - 1;
        self.edges.push(CurveEdge { from, to: b, direction, multiplicity, length: Length::Infinite });
        self.edges.len() - 1
    }

    pub fn from_json_str(s: &str) -> Result<ZTCurve, InputError> {
        let raw: RawCurve = serde_json::from_str(s).map_err(|e| InputError::Schema {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
        let n = raw.lattice_rank;
        if n == 0 {
            return Err(InputError::Structure("lattice_rank must be positive".into()));
        }
        let mut index = HashMap::new();
        let mut vertices = Vec::new();
        for (k, v) in raw.vertices.iter().enumerate() {
            let id = v.id.text();
            if index.insert(id.clone(), k).is_some() {
                return Err(InputError::Structure(format!("duplicate vertex id {id:?}")));
            }
            let coords = match &v.coords {
                None => None,
                Some(cs) => {
                    if cs.len() != n {
                        return Err(InputError::Structure(format!(
                            "vertex {id:?}: coords has {} entries, lattice_rank is {n}",
                            cs.len()
                        )));
                    }
                    let parsed: Result<Vec<Q>, _> = cs.iter().map(|c| parse_q(&c.text())).collect();
                    Some(parsed.map_err(|e| InputError::Structure(format!("vertex {id:?}: {e}")))?)
                }
            };
            vertices.push(CurveVertex { id, coords, boundary: v.boundary });
        }
        let mut edges = Vec::new();
        for (k, e) in raw.edges.iter().enumerate() {
            let look = |s: &Scalar| {
                index
                    .get(&s.text())
                    .copied()
                    .ok_or_else(|| InputError::Structure(format!("edge {k}: unknown vertex id {:?}", s.text())))
            };
            let (from, to) = (look(&e.from)?, look(&e.to)?);
            if e.direction.len() != n {
                return Err(InputError::Structure(format!(
                    "edge {k}: direction has {} entries, lattice_rank is {n}",
                    e.direction.len()
                )));
            }
            let length = Length::parse(&e.length.text())
                .map_err(|err| InputError::Structure(format!("edge {k}: bad length: {err}")))?;
            edges.push(CurveEdge { from, to, direction: e.direction.clone(), multiplicity: e.multiplicity, length });
        }
        Ok(ZTCurve { lattice_rank: n, vertices, edges })
    }

    pub fn from_path(path: &std::path::Path) -> Result<ZTCurve, InputError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| InputError::Io { path: path.display().to_string(), message: e.to_string() })?;
        ZTCurve::from_json_str(&s)
    }

    pub fn to_json(&self) -> Value {
        let vertices: Vec<Value> = self
            .vertices
            .iter()
            .map(|v| {
                json!({
                    "id": v.id,
                    "coords": v.coords.as_ref().map(|c| c.iter().map(fmt_q).collect::<Vec<_>>()),
                    "boundary": v.boundary,
                })
            })
            .collect();
        let edges: Vec<Value> = self
            .edges
            .iter()
            .map(|e| {
                json!({
                    "from": self.vertices[e.from].id,
                    "to": self.vertices[e.to].id,
                    "direction": e.direction,
                    "multiplicity": e.multiplicity,
                    "length": e.length.to_json(),
                })
            })
            .collect();
        json!({ "lattice_rank": self.lattice_rank, "vertices": vertices, "edges": edges })
    }

    /// Applies `x -> M x + shift` with `M` unimodular.
    pub fn transformed(&self, m: &[Vec<i64>], shift: &[Q]) -> ZTCurve {
        let apply_i = |v: &[i64]| -> Vec<i64> { m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect() };
        let mut out = self.clone();
        for v in &mut out.vertices {
            if let Some(c) = &v.coords {
                v.coords = Some(
                    m.iter()
                        .zip(shift)
                        .map(|(row, s)| row.iter().zip(c).fold(s.clone(), |acc, (a, x)| acc + qi(*a) * x))
                        .collect(),
                );
            }
        }
        for e in &mut out.edges {
            e.direction = apply_i(&e.direction);
        }
        out
    }

    fn degree_of(&self, v: usize) -> usize {
        self.edges.iter().map(|e| (e.from == v) as usize + (e.to == v) as usize).sum()
    }

    /// Outward `sigma` of edge `k` at its vertex `v`.
    pub fn sigma_at(&self, k: usize, v: usize) -> Vec<i64> {
        let e = &self.edges[k];
        let s = e.sigma();
        if e.from == v {
            s
        } else {
            s.into_iter().map(|x| -x).collect()
        }
    }

    /// Coordinates propagated from the anchor along finite edges.  Returns the
    /// coordinate table and any inconsistencies found.
    fn propagate(&self) -> (Vec<Option<Vec<Q>>>, Vec<Issue>) {
        let n = self.lattice_rank;
        let mut issues = Vec::new();
        let mut coords: Vec<Option<Vec<Q>>> = vec![None; self.vertices.len()];
        let Some(anchor) = self.vertices.iter().position(|v| v.coords.is_some() && !v.boundary) else {
            issues.push(Issue { vertex: None, edge: None, message: "no finite vertex carries coordinates".into() });
            return (coords, issues);
        };
        let mut adj: Vec<Vec<usize>> = vec![vec![]; self.vertices.len()];
        for (k, e) in self.edges.iter().enumerate() {
            if e.length.is_infinite() {
                continue;
            }
            adj[e.from].push(k);
            adj[e.to].push(k);
        }
        coords[anchor] = self.vertices[anchor].coords.clone();
        let mut queue = VecDeque::from([anchor]);
        let mut reported = BTreeSet::new();
        while let Some(v) = queue.pop_front() {
            let xv = coords[v].clone().unwrap();
            for &k in &adj[v] {
                let e = &self.edges[k];
                let (w, sign) = if e.from == v { (e.to, 1) } else { (e.from, -1) };
                let len = e.length.finite().unwrap();
                let x: Vec<Q> = (0..n)
                    .map(|i| &xv[i] + len * qi(sign * e.direction[i] * e.multiplicity as i64))
                    .collect();
                match &coords[w] {
                    None => {
                        coords[w] = Some(x);
                        queue.push_back(w);
                    }
                    Some(old) if *old != x && reported.insert(k) => {
                        issues.push(Issue {
                            vertex: Some(self.vertices[w].id.clone()),
                            edge: Some(k),
                            message: "coordinates are inconsistent around a cycle".into(),
                        });
                    }
                    _ => {}
                }
            }
        }
        for (v, vert) in self.vertices.iter().enumerate() {
            if let (Some(given), Some(found)) = (&vert.coords, &coords[v]) {
                if given != found {
                    issues.push(Issue {
                        vertex: Some(vert.id.clone()),
                        edge: None,
                        message: format!(
                            "given coordinates ({}) disagree with propagated ({})",
                            fmt_vec(given),
                            fmt_vec(found)
                        ),
                    });
                }
            }
        }
        (coords, issues)
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.lattice_rank;
        let mut issues = Vec::new();
        let vid = |v: usize| Some(self.vertices[v].id.clone());
        for (k, e) in self.edges.iter().enumerate() {
            let push = |issues: &mut Vec<Issue>, msg: String| issues.push(Issue { vertex: None, edge: Some(k), message: msg });
            let g = e.direction.iter().fold(0i64, |g, &x| num_integer::gcd(g, x));
            if g > 1 {
                push(&mut issues, format!("direction {:?} is not primitive", e.direction));
            }
            if e.multiplicity == 0 {
                push(&mut issues, "multiplicity must be positive".into());
            }
            if let Length::Finite(l) = &e.length {
                if !l.is_positive() {
                    push(&mut issues, "length must be positive".into());
                }
            }
            let (fb, tb) = (self.vertices[e.from].boundary, self.vertices[e.to].boundary);
            if fb && tb {
                push(&mut issues, "both ends are boundary vertices".into());
            }
            if (fb || tb) != e.length.is_infinite() {
                push(&mut issues, "length is infinite exactly when one end is a boundary vertex".into());
            }
            if (fb || tb) && e.is_collapsed() {
                push(&mut issues, "an unbounded edge needs a nonzero direction".into());
            }
            if e.from == e.to && !e.is_collapsed() {
                push(&mut issues, "a loop edge must be collapsed".into());
            }
        }
        let mut tension = vec![vec![0i64; n]; self.vertices.len()];
        for (k, e) in self.edges.iter().enumerate() {
            for (end, s) in [(e.from, self.sigma_at(k, e.from)), (e.to, self.sigma_at(k, e.to))] {
                for i in 0..n {
                    tension[end][i] += s[i];
                }
            }
        }
        for (v, vert) in self.vertices.iter().enumerate() {
            if vert.boundary {
                if self.degree_of(v) != 1 {
                    issues.push(Issue { vertex: vid(v), edge: None, message: "boundary vertex must have degree 1".into() });
                }
                if vert.coords.is_some() {
                    issues.push(Issue { vertex: vid(v), edge: None, message: "boundary vertex cannot carry coordinates".into() });
                }
                continue;
            }
            if tension[v].iter().any(|&x| x != 0) {
                issues.push(Issue {
                    vertex: vid(v),
                    edge: None,
                    message: format!("zero tension fails: weighted slopes sum to {:?}", tension[v]),
                });
            }
        }
        if self.vertices.is_empty() {
            issues.push(Issue { vertex: None, edge: None, message: "no vertices".into() });
        } else if self.components() != 1 {
            issues.push(Issue { vertex: None, edge: None, message: "graph is not connected".into() });
        }
        let (coords, prop) = self.propagate();
        issues.extend(prop);
        for (v, vert) in self.vertices.iter().enumerate() {
            if !vert.boundary && coords[v].is_none() && self.vertices.iter().any(|v| v.coords.is_some()) {
                issues.push(Issue { vertex: vid(v), edge: None, message: "vertex is not reachable from the anchor by finite edges".into() });
            }
        }
        ValidationReport { valid: issues.is_empty(), issues }
    }

    fn components(&self) -> usize {
        let mut uf: Vec<usize> = (0..self.vertices.len()).collect();
        let mut count = self.vertices.len();
        for e in &self.edges {
            let (a, b) = (find(&mut uf, e.from), find(&mut uf, e.to));
            if a != b {
                uf[a] = b;
                count -= 1;
            }
        }
        count
    }

    /// First Betti number of the underlying graph.
    pub fn genus(&self) -> usize {
        (self.edges.len() + self.components()).saturating_sub(self.vertices.len())
    }

    /// The vertex coordinates of `ι`, indexed like `vertices` (None at the boundary).
    pub fn coordinates(&self) -> Result<Vec<Option<Vec<Q>>>, ZtError> {
        let (c, issues) = self.propagate();
        match issues.first() {
            Some(i) => Err(ZtError::Invalid(i.message.clone())),
            None => Ok(c),
        }
    }

    /// The contracted analysis graph; fails if the curve is invalid.
    pub fn graph(&self) -> Result<CurveGraph, ZtError> {
        let report = self.validate();
        if let Some(i) = report.issues.first() {
            let at = i.vertex.clone().map(|v| format!(" at vertex {v}")).unwrap_or_default();
            return Err(ZtError::Invalid(format!("{}{at}", i.message)));
        }
        CurveGraph::build(self)
    }

    pub fn degree(&self) -> Vec<Vec<i64>> {
        let rays = self.edges.iter().enumerate().filter(|(_, e)| e.length.is_infinite()).map(|(k, e)| {
            let inner = if self.vertices[e.from].boundary { e.to } else { e.from };
            (self.sigma_at(k, inner), 1)
        });
        ray_degree(rays)
    }
}

fn find(p: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while p[r] != r {
        r = p[r];
    }
    let mut y = x;
    while p[y] != r {
        let nx = p[y];
        p[y] = r;
        y = nx;
    }
    r
}

pub fn fmt_vec(v: &[Q]) -> String {
    v.iter().map(fmt_q).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Debug)]
pub struct GVertex {
    pub ids: Vec<String>,
    pub coords: Option<Vec<Q>>,
    pub boundary: bool,
}

#[derive(Clone, Debug)]
pub struct GEdge {
    /// Index of the edge in the source curve.
    pub orig: usize,
    pub a: usize,
    pub b: usize,
    /// Weighted slope from `a` towards `b`.
    pub sigma: Vec<i64>,
    pub mult: u64,
    pub length: Length,
}

impl GEdge {
    pub fn is_ray(&self) -> bool {
        self.length.is_infinite()
    }

    pub fn other(&self, v: usize) -> usize {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }

    pub fn sigma_at(&self, v: usize) -> Vec<i64> {
        if self.a == v {
            self.sigma.clone()
        } else {
            self.sigma.iter().map(|x| -x).collect()
        }
    }

    pub fn len(&self) -> Option<&Q> {
        self.length.finite()
    }
}

/// The curve with collapsed edges contracted; rays run from `a` (internal)
/// to `b` (boundary).
#[derive(Clone, Debug)]
pub struct CurveGraph {
    pub n: usize,
    pub verts: Vec<GVertex>,
    pub edges: Vec<GEdge>,
    pub adj: Vec<Vec<usize>>,
    /// Curve vertex to graph vertex.
    pub vmap: Vec<usize>,
    pub anchor: usize,
}

/// The unique cycle of a genus-1 graph, walked from the head of `e0`.
/// `edges[k]` joins `verts[k]` to `verts[k+1]`; the last edge is `e0`.
#[derive(Clone, Debug)]
pub struct Circuit {
    pub verts: Vec<usize>,
    pub edges: Vec<usize>,
    pub length: Q,
    /// Distance to the circuit for every internal vertex.
    pub dist: Vec<Option<Q>>,
    /// Position in `verts` of the circuit vertex a vertex hangs from.
    pub root: Vec<Option<usize>>,
    /// Edge towards the circuit (None on the circuit and at the boundary).
    pub parent_edge: Vec<Option<usize>>,
}

impl Circuit {
    pub fn e0(&self) -> usize {
        *self.edges.last().unwrap()
    }

    pub fn contains_edge(&self, e: usize) -> bool {
        self.edges.contains(&e)
    }

    /// Slope of `edges[k]` in the traversal direction.
    pub fn sigma(&self, g: &CurveGraph, k: usize) -> Vec<i64> {
        g.edges[self.edges[k]].sigma_at(self.verts[k])
    }

    pub fn position(&self, v: usize) -> Option<usize> {
        self.verts.iter().position(|&w| w == v)
    }
}

impl CurveGraph {
    pub fn build(c: &ZTCurve) -> Result<CurveGraph, ZtError> {
        let coords = c.coordinates()?;
        let nv = c.vertices.len();
        let mut uf: Vec<usize> = (0..nv).collect();
        for e in &c.edges {
            if e.is_collapsed() {
                let (a, b) = (find(&mut uf, e.from), find(&mut uf, e.to));
                if a != b {
                    uf[a.max(b)] = a.min(b);
                }
            }
        }
        let mut rep_index = BTreeMap::new();
        let mut verts = Vec::new();
        let mut vmap = vec![0; nv];
        for v in 0..nv {
            let r = find(&mut uf, v);
            let idx = *rep_index.entry(r).or_insert_with(|| {
                verts.push(GVertex { ids: vec![], coords: coords[r].clone(), boundary: c.vertices[r].boundary });
                verts.len() - 1
            });
            verts[idx].ids.push(c.vertices[v].id.clone());
            vmap[v] = idx;
        }
        let mut edges = Vec::new();
        for (k, e) in c.edges.iter().enumerate() {
            if e.is_collapsed() {
                continue;
            }
            let (mut a, mut b) = (vmap[e.from], vmap[e.to]);
            let mut sigma = e.sigma();
            if verts[a].boundary {
                std::mem::swap(&mut a, &mut b);
                sigma.iter_mut().for_each(|x| *x = -*x);
            }
            edges.push(GEdge { orig: k, a, b, sigma, mult: e.multiplicity, length: e.length.clone() });
        }
        let mut adj = vec![vec![]; verts.len()];
        for (k, e) in edges.iter().enumerate() {
            adj[e.a].push(k);
            adj[e.b].push(k);
        }
        let anchor = vmap[c.vertices.iter().position(|v| v.coords.is_some() && !v.boundary).unwrap()];
        let g = CurveGraph { n: c.lattice_rank, verts, edges, adj, vmap, anchor };
        if g.genus() != c.genus() {
            return Err(ZtError::ZeroLengthCircuit);
        }
        Ok(g)
    }

    pub fn genus(&self) -> usize {
        // Connected by validation.
        (self.edges.len() + 1).saturating_sub(self.verts.len())
    }

    pub fn internal(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.verts.len()).filter(|&v| !self.verts[v].boundary)
    }

    pub fn coords(&self, v: usize) -> &[Q] {
        self.verts[v].coords.as_deref().expect("internal vertex")
    }

    pub fn rays(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edges[e].is_ray())
    }

    pub fn degree(&self) -> Vec<Vec<i64>> {
        ray_degree(self.rays().map(|e| (self.edges[e].sigma.clone(), 1)))
    }

    pub fn embedded(&self) -> EmbeddedGraph {
        let mut g = EmbeddedGraph::new(self.n);
        let mut idx = vec![usize::MAX; self.verts.len()];
        for v in self.internal() {
            idx[v] = g.add_vertex(self.coords(v).to_vec());
        }
        for e in &self.edges {
            if e.is_ray() {
                g.add_ray(idx[e.a], e.sigma.clone());
            } else {
                g.add_segment(idx[e.a], idx[e.b], e.sigma.clone());
            }
        }
        g
    }

    pub fn circuit(&self) -> Result<Circuit, ZtError> {
        let genus = self.genus();
        if genus != 1 {
            return Err(ZtError::WrongGenus { expected: 1, found: genus });
        }
        let mut deg: Vec<usize> = self.adj.iter().map(|a| a.len()).collect();
        let mut removed = vec![false; self.edges.len()];
        let mut queue: VecDeque<usize> = (0..self.verts.len()).filter(|&v| deg[v] == 1).collect();
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                if removed[e] {
                    continue;
                }
                removed[e] = true;
                let w = self.edges[e].other(v);
                deg[v] -= 1;
                deg[w] -= 1;
                if deg[w] == 1 {
                    queue.push_back(w);
                }
            }
        }
        let cyc: Vec<usize> = (0..self.edges.len()).filter(|&e| !removed[e]).collect();
        let e0 = *cyc.iter().min_by_key(|&&e| self.edges[e].orig).unwrap();
        let start = self.edges[e0].b;
        let mut verts = vec![start];
        let mut edges = Vec::new();
        let mut prev = e0;
        let mut cur = start;
        loop {
            let next = *self.adj[cur]
                .iter()
                .find(|&&e| !removed[e] && e != prev && (e != e0 || cyc.len() == 1))
                .or_else(|| self.adj[cur].iter().find(|&&e| !removed[e] && e == e0))
                .unwrap();
            let w = self.edges[next].other(cur);
            edges.push(next);
            if next == e0 {
                break;
            }
            verts.push(w);
            prev = next;
            cur = w;
        }
        let length = edges.iter().map(|&e| self.edges[e].len().unwrap().clone()).sum::<Q>();
        if length.is_zero() {
            return Err(ZtError::ZeroLengthCircuit);
        }
        let nv = self.verts.len();
        let mut dist = vec![None; nv];
        let mut root = vec![None; nv];
        let mut parent_edge = vec![None; nv];
        let mut queue = VecDeque::new();
        for (k, &v) in verts.iter().enumerate() {
            dist[v] = Some(Q::zero());
            root[v] = Some(k);
            queue.push_back(v);
        }
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let ed = &self.edges[e];
                if !removed[e] || ed.is_ray() {
                    continue;
                }
                let w = ed.other(v);
                if dist[w].is_none() {
                    dist[w] = Some(dist[v].clone().unwrap() + ed.len().unwrap());
                    root[w] = root[v];
                    parent_edge[w] = Some(e);
                    queue.push_back(w);
                }
            }
        }
        Ok(Circuit { verts, edges, length, dist, root, parent_edge })
    }

    pub fn circuit_span_rank(&self, circ: &Circuit) -> usize {
        rank_i64(&circ.edges.iter().map(|&e| self.edges[e].sigma.clone()).collect::<Vec<_>>())
    }

    pub fn is_ordinary(&self, circ: &Circuit) -> bool {
        self.circuit_span_rank(circ) == self.n
    }

    fn edge_in_flat(&self, e: usize, f: &Flat) -> bool {
        let ed = &self.edges[e];
        if ed.is_ray() {
            f.contains_point(self.coords(ed.a)) && f.contains_dir(&ed.sigma)
        } else {
            f.contains_point(self.coords(ed.a)) && f.contains_point(self.coords(ed.b))
        }
    }

    /// The connected part of the preimage of `f` containing the circuit:
    /// (vertex set, edge set).
    pub fn delta(&self, circ: &Circuit, f: &Flat) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let mut vs: BTreeSet<usize> = circ.verts.iter().copied().collect();
        let mut es = BTreeSet::new();
        let mut queue: VecDeque<usize> = circ.verts.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                if es.contains(&e) || !self.edge_in_flat(e, f) {
                    continue;
                }
                es.insert(e);
                let w = self.edges[e].other(v);
                if !self.verts[w].boundary && vs.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        (vs, es)
    }

    /// Saturated flats containing the circuit, one per hyperplane class.
    pub fn hyperplane_classes(&self, circ: &Circuit) -> Vec<Flat> {
        let dirs: Vec<Vec<i64>> = circ.edges.iter().map(|&e| self.edges[e].sigma.clone()).collect();
        let f0 = Flat::new(self.coords(circ.verts[0]), &dirs, self.n);
        if f0.dim() >= self.n {
            return vec![];
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut queue = VecDeque::from([f0]);
        while let Some(f) = queue.pop_front() {
            if !seen.insert(f.key()) {
                continue;
            }
            let (vs, es) = self.delta(circ, &f);
            for &v in &vs {
                for &e in &self.adj[v] {
                    if es.contains(&e) {
                        continue;
                    }
                    let g = f.extended(&self.edges[e].sigma);
                    if g.dim() < self.n && !seen.contains(&g.key()) {
                        queue.push_back(g);
                    }
                }
            }
            out.push(f);
        }
        out
    }

    pub fn check_flat(&self, circ: &Circuit, f: &Flat) -> FlatCheck {
        let (vs, es) = self.delta(circ, f);
        let mut boundary = Vec::new();
        for &v in &vs {
            if self.adj[v].iter().any(|e| !es.contains(e)) {
                boundary.push((v, circ.dist[v].clone().unwrap()));
            }
        }
        let min = boundary.iter().map(|(_, d)| d.clone()).min();
        let min_count = min.as_ref().map_or(0, |m| boundary.iter().filter(|(_, d)| d == m).count());
        FlatCheck { flat: f.clone(), well_spaced: min.is_none() || min_count >= 2, boundary, min, min_count }
    }

    /// Returns the per-flat checks; the curve is well spaced iff all pass.
    pub fn well_spacedness(&self, circ: &Circuit) -> WellSpaced {
        let checks: Vec<FlatCheck> = self.hyperplane_classes(circ).iter().map(|f| self.check_flat(circ, f)).collect();
        let witness = checks.iter().find(|c| !c.well_spaced).map(|c| c.flat.clone());
        WellSpaced { well_spaced: witness.is_none(), witness, checks }
    }

    /// Outward slopes leaving the part of the graph within distance `r` of
    /// the circuit (`r = None` means the whole graph).
    pub fn leaf_vectors(&self, circ: &Circuit, r: Option<&Q>) -> Vec<Vec<i64>> {
        let inside = |v: usize| match (&circ.dist[v], r) {
            (Some(d), Some(r)) => d <= r,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let mut out = Vec::new();
        for e in &self.edges {
            match (inside(e.a), inside(e.b)) {
                (true, false) => out.push(e.sigma.clone()),
                (false, true) => out.push(e.sigma_at(e.b)),
                _ => {}
            }
        }
        out
    }
}

/// Whether the outward leaf slopes of a connected zero-tension graph span `Q^n`.
pub fn leaf_span_check(vectors: &[Vec<i64>], n: usize) -> bool {
    rank_i64(vectors) == n
}

/// An affine subspace: a basepoint reduced modulo an RREF direction basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flat {
    pub basepoint: Vec<Q>,
    pub basis: Vec<Vec<Q>>,
}

impl Flat {
    pub fn new(point: &[Q], dirs: &[Vec<i64>], n: usize) -> Flat {
        let vs: Vec<Vec<Q>> = dirs.iter().filter(|d| d.iter().any(|&x| x != 0)).map(|d| to_q(d)).collect();
        let basis = span_basis(&vs, n);
        let basepoint = reduce_mod(&basis, point);
        Flat { basepoint, basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn contains_point(&self, x: &[Q]) -> bool {
        let d: Vec<Q> = x.iter().zip(&self.basepoint).map(|(a, b)| a - b).collect();
        in_span(&self.basis, &d)
    }

    pub fn contains_dir(&self, v: &[i64]) -> bool {
        in_span(&self.basis, &to_q(v))
    }

    pub fn extended(&self, dir: &[i64]) -> Flat {
        let mut vs = self.basis.clone();
        vs.push(to_q(dir));
        let basis = span_basis(&vs, self.basepoint.len());
        let basepoint = reduce_mod(&basis, &self.basepoint);
        Flat { basepoint, basis }
    }

    fn key(&self) -> String {
        format!("{:?}", self.to_json())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "basepoint": self.basepoint.iter().map(fmt_q).collect::<Vec<_>>(),
            "basis": self.basis.iter().map(|b| b.iter().map(fmt_q).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }

    /// Short human label, e.g. `"x-axis flat"`.
    pub fn describe(&self) -> String {
        let n = self.basepoint.len();
        let names: Vec<String> = if n <= 3 {
            ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect()
        } else {
            (1..=n).map(|i| format!("x{i}")).collect()
        };
        if self.dim() == 1 && self.basepoint.iter().all(|x| x.is_zero()) {
            let b = &self.basis[0];
            let nz: Vec<usize> = (0..n).filter(|&i| !b[i].is_zero()).collect();
            if nz.len() == 1 {
                return format!("{}-axis flat", names[nz[0]]);
            }
        }
        let dirs: Vec<String> = self.basis.iter().map(|b| format!("({})", fmt_vec(b))).collect();
        format!("flat through ({}) spanned by {}", fmt_vec(&self.basepoint), dirs.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct FlatCheck {
    pub flat: Flat,
    /// Boundary vertices of the component and their distances to the circuit.
    pub boundary: Vec<(usize, Q)>,
    pub min: Option<Q>,
    pub min_count: usize,
    pub well_spaced: bool,
}

#[derive(Clone, Debug)]
pub struct WellSpaced {
    pub well_spaced: bool,
    pub witness: Option<Flat>,
    pub checks: Vec<FlatCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub genus: usize,
    pub degree: Vec<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordinary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub well_spaced: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit_length: Option<String>,
}

pub fn classify(c: &ZTCurve) -> Result<Classification, ZtError> {
    let g = c.graph()?;
    let genus = g.genus();
    let mut out = Classification {
        genus,
        degree: g.degree(),
        ordinary: None,
        well_spaced: None,
        witness: None,
        circuit_length: None,
    };
    if genus == 1 {
        let circ = g.circuit()?;
        out.ordinary = Some(g.is_ordinary(&circ));
        let ws = g.well_spacedness(&circ);
        out.well_spaced = Some(ws.well_spaced);
        out.witness = ws.witness.map(|f| f.describe());
        out.circuit_length = Some(fmt_q(&circ.length));
    }
    Ok(out)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrivalentError {
    #[error("target is not trivalent")]
    NotTrivalent,
    #[error("target has an edge of multiplicity other than 1")]
    Multiplicity,
    #[error("non-contracted edges do not map bijectively onto the target")]
    NotBijective,
}

/// The non-contracted edges of `c`, checked to map bijectively onto a
/// trivalent multiplicity-one `target`.
pub fn trivalent_reduce(c: &ZTCurve, target: &EmbeddedGraph) -> Result<Vec<usize>, TrivalentError> {
    let tc = target.canonical();
    let mut valence: BTreeMap<&Vec<String>, usize> = BTreeMap::new();
    for (a, b, s) in &tc.segments {
        *valence.entry(a).or_default() += 1;
        *valence.entry(b).or_default() += 1;
        if s.iter().fold(0i64, |g, &x| num_integer::gcd(g, x)) != 1 {
            return Err(TrivalentError::Multiplicity);
        }
    }
    for (a, s) in &tc.rays {
        *valence.entry(a).or_default() += 1;
        if s.iter().fold(0i64, |g, &x| num_integer::gcd(g, x)) != 1 {
            return Err(TrivalentError::Multiplicity);
        }
    }
    if tc.vertices.iter().any(|v| valence.get(v).copied().unwrap_or(0) != 3) {
        return Err(TrivalentError::NotTrivalent);
    }
    let g = CurveGraph::build(c).map_err(|_| TrivalentError::NotBijective)?;
    if g.embedded().canonical() != tc {
        return Err(TrivalentError::NotBijective);
    }
    Ok(g.edges.iter().map(|e| e.orig).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rays_fail_tension() {
        let mut c = ZTCurve::new(2);
        let v = c.add_vertex("v", Some(vec![qi(0), qi(0)]));
        c.add_ray(v, vec![1, 0], 1);
        c.add_ray(v, vec![0, 1], 1);
        let r = c.validate();
        assert!(!r.valid);
        assert_eq!(r.issues[0].vertex.as_deref(), Some("v"));
    }

    #[test]
    fn flat_description() {
        let f = Flat::new(&[qi(3), qi(0)], &[vec![2, 0]], 2);
        assert_eq!(f.describe(), "x-axis flat");
        assert_eq!(f.basepoint, vec![qi(0), qi(0)]);
    }

    #[test]
    fn inconsistent_cycle_is_reported() {
        let mut c = ZTCurve::new(1);
        let u = c.add_vertex("u", Some(vec![qi(0)]));
        let v = c.add_vertex("v", None);
        c.add_edge(u, v, vec![1], 1, qi(1));
        c.add_edge(u, v, vec![1], 1, qi(2));
        assert!(c.validate().issues.iter().any(|i| i.message.contains("cycle")));
    }
}
