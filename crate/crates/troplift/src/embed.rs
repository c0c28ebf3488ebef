//! Piecewise-linear graphs in `Q^n` and a canonical form for exact equality.
//!
//! Two embedded graphs are equal when, after contracting slope-zero edges
//! and erasing degree-2 vertices where the slope continues straight through,
//! they have the same vertices, segments, rays and lines with the same
//! weighted slopes.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::Serialize;

use crate::puiseux::{fmt_q, Q};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub a: usize,
    pub b: usize,
    /// Weighted slope from `a` to `b`; `x_b - x_a` is a nonnegative multiple.
    pub sigma: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ray {
    pub a: usize,
    pub sigma: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EmbeddedGraph {
    pub n: usize,
    pub vertices: Vec<Vec<Q>>,
    pub segments: Vec<Segment>,
    pub rays: Vec<Ray>,
}

/// Sorted, coordinate-based description of an [`EmbeddedGraph`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Canonical {
    pub vertices: Vec<Vec<String>>,
    pub segments: Vec<(Vec<String>, Vec<String>, Vec<i64>)>,
    pub rays: Vec<(Vec<String>, Vec<i64>)>,
    pub lines: Vec<(Vec<String>, Vec<i64>)>,
}

#[derive(Clone, Debug)]
enum End {
    Vertex(usize),
    Infinity,
}

#[derive(Clone, Debug)]
struct Piece {
    ends: [End; 2],
    /// Slope from `ends[0]` towards `ends[1]`.
    sigma: Vec<i64>,
    /// Some vertex lying on the piece.
    through: usize,
    alive: bool,
}

fn neg(v: &[i64]) -> Vec<i64> {
    v.iter().map(|x| -x).collect()
}

fn key(p: &[Q]) -> Vec<String> {
    p.iter().map(fmt_q).collect()
}

impl EmbeddedGraph {
    pub fn new(n: usize) -> Self {
        EmbeddedGraph { n, ..Default::default() }
    }

    pub fn add_vertex(&mut self, x: Vec<Q>) -> usize {
        debug_assert_eq!(x.len(), self.n);
        self.vertices.push(x);
        self.vertices.len() - 1
    }

    pub fn add_segment(&mut self, a: usize, b: usize, sigma: Vec<i64>) {
        self.segments.push(Segment { a, b, sigma });
    }

    pub fn add_ray(&mut self, a: usize, sigma: Vec<i64>) {
        self.rays.push(Ray { a, sigma });
    }

    /// The weighted slope sum at every vertex (all zero for zero tension).
    pub fn tension(&self) -> Vec<Vec<i64>> {
        let mut t = vec![vec![0i64; self.n]; self.vertices.len()];
        for s in &self.segments {
            for i in 0..self.n {
                t[s.a][i] += s.sigma[i];
                t[s.b][i] -= s.sigma[i];
            }
        }
        for r in &self.rays {
            for i in 0..self.n {
                t[r.a][i] += r.sigma[i];
            }
        }
        t
    }

    pub fn canonical(&self) -> Canonical {
        let nv = self.vertices.len();
        let mut parent: Vec<usize> = (0..nv).collect();
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
        for s in &self.segments {
            if s.sigma.iter().all(|&x| x == 0) {
                let (a, b) = (find(&mut parent, s.a), find(&mut parent, s.b));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
        let mut pieces: Vec<Piece> = Vec::new();
        for s in &self.segments {
            if s.sigma.iter().all(|&x| x == 0) {
                continue;
            }
            let a = find(&mut parent, s.a);
            let b = find(&mut parent, s.b);
            pieces.push(Piece { ends: [End::Vertex(a), End::Vertex(b)], sigma: s.sigma.clone(), through: a, alive: true });
        }
        for r in &self.rays {
            if r.sigma.iter().all(|&x| x == 0) {
                continue;
            }
            let a = find(&mut parent, r.a);
            pieces.push(Piece { ends: [End::Vertex(a), End::Infinity], sigma: r.sigma.clone(), through: a, alive: true });
        }
        let mut alive_vertex: Vec<bool> = (0..nv).map(|v| find(&mut parent, v) == v).collect();
        // Incidences: (piece, which end).
        let incidences = |pieces: &[Piece], v: usize| -> Vec<(usize, usize)> {
            let mut out = Vec::new();
            for (i, p) in pieces.iter().enumerate() {
                if !p.alive {
                    continue;
                }
                for k in 0..2 {
                    if let End::Vertex(w) = p.ends[k] {
                        if w == v {
                            out.push((i, k));
                        }
                    }
                }
            }
            out
        };
        loop {
            let mut changed = false;
            for v in 0..nv {
                if !alive_vertex[v] {
                    continue;
                }
                let inc = incidences(&pieces, v);
                if inc.len() != 2 || inc[0].0 == inc[1].0 {
                    continue;
                }
                let out_sigma = |(i, k): (usize, usize)| {
                    if k == 0 {
                        pieces[i].sigma.clone()
                    } else {
                        neg(&pieces[i].sigma)
                    }
                };
                let s1 = out_sigma(inc[0]);
                let s2 = out_sigma(inc[1]);
                if s1 != neg(&s2) {
                    continue;
                }
                let far = |(i, k): (usize, usize)| pieces[i].ends[1 - k].clone();
                let (x, y) = (far(inc[0]), far(inc[1]));
                // New piece runs from x through v to y with slope s2.
                let merged = Piece { ends: [x, y], sigma: s2, through: v, alive: true };
                pieces[inc[0].0].alive = false;
                pieces[inc[1].0].alive = false;
                pieces.push(merged);
                alive_vertex[v] = false;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        let mut out = Canonical { vertices: vec![], segments: vec![], rays: vec![], lines: vec![] };
        for v in 0..nv {
            if alive_vertex[v] {
                out.vertices.push(key(&self.vertices[v]));
            }
        }
        for p in pieces.iter().filter(|p| p.alive) {
            match (&p.ends[0], &p.ends[1]) {
                (End::Vertex(a), End::Vertex(b)) => {
                    let (xa, xb) = (key(&self.vertices[*a]), key(&self.vertices[*b]));
                    let qa = &self.vertices[*a];
                    let qb = &self.vertices[*b];
                    if qa <= qb {
                        out.segments.push((xa, xb, p.sigma.clone()));
                    } else {
                        out.segments.push((xb, xa, neg(&p.sigma)));
                    }
                }
                (End::Vertex(a), End::Infinity) => out.rays.push((key(&self.vertices[*a]), p.sigma.clone())),
                (End::Infinity, End::Vertex(b)) => out.rays.push((key(&self.vertices[*b]), neg(&p.sigma))),
                (End::Infinity, End::Infinity) => {
                    let point = &self.vertices[p.through];
                    let mut dir = p.sigma.clone();
                    if dir.iter().find(|&&x| x != 0).map_or(false, |&x| x < 0) {
                        dir = neg(&dir);
                    }
                    out.lines.push((normalize_line_point(point, &dir), dir));
                }
            }
        }
        out.vertices.sort();
        out.segments.sort();
        out.rays.sort();
        out.lines.sort();
        out
    }

    /// Number of segments and rays containing `x`.
    pub fn hits(&self, x: &[Q]) -> usize {
        let mut hits = 0;
        for s in &self.segments {
            if on_segment(&self.vertices[s.a], &self.vertices[s.b], x) {
                hits += 1;
            }
        }
        for r in &self.rays {
            if on_ray(&self.vertices[r.a], &r.sigma, x) {
                hits += 1;
            }
        }
        hits
    }
}

/// A segment or ray as `start + s * dir` with `s` in `[0, 1]` or `[0, ∞)`.
struct Piece1<'a> {
    start: &'a [Q],
    dir: Vec<Q>,
    bounded: bool,
    ends: Vec<usize>,
}

impl EmbeddedGraph {
    /// Whether the graph is embedded: distinct vertices, and two pieces meet
    /// only in a shared vertex.
    pub fn is_embedding(&self) -> bool {
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                if self.vertices[i] == self.vertices[j] {
                    return false;
                }
            }
        }
        let mut pieces = Vec::new();
        for s in &self.segments {
            let (a, b) = (&self.vertices[s.a], &self.vertices[s.b]);
            let dir: Vec<Q> = b.iter().zip(a.iter()).map(|(x, y)| x - y).collect();
            pieces.push(Piece1 { start: a, dir, bounded: true, ends: vec![s.a, s.b] });
        }
        for r in &self.rays {
            let dir = r.sigma.iter().map(|&x| Q::from_integer(x.into())).collect();
            pieces.push(Piece1 { start: &self.vertices[r.a], dir, bounded: false, ends: vec![r.a] });
        }
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                let shared: Vec<usize> = pieces[i].ends.iter().filter(|v| pieces[j].ends.contains(v)).copied().collect();
                let meet = intersection(&pieces[i], &pieces[j]);
                let ok = match (meet, shared.as_slice()) {
                    (Meet::Empty, []) => true,
                    (Meet::Point(p), [v]) => p == self.vertices[*v],
                    _ => false,
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }
}

enum Meet {
    Empty,
    Point(Vec<Q>),
    Overlap,
}

fn in_range(s: &Q, bounded: bool) -> bool {
    s >= &Q::zero() && (!bounded || s <= &Q::from_integer(1.into()))
}

fn intersection(p: &Piece1<'_>, q: &Piece1<'_>) -> Meet {
    let n = p.start.len();
    if p.dir.iter().all(|x| x.is_zero()) || q.dir.iter().all(|x| x.is_zero()) {
        // Degenerate pieces only matter through their vertices.
        return Meet::Empty;
    }
    let diff: Vec<Q> = q.start.iter().zip(p.start.iter()).map(|(x, y)| x - y).collect();
    // s * p.dir - u * q.dir = diff
    let rows: Vec<Vec<Q>> = (0..n).map(|i| vec![p.dir[i].clone(), -q.dir[i].clone(), diff[i].clone()]).collect();
    let (r, pivots) = crate::linalg::rref(rows);
    if pivots.contains(&2) {
        return Meet::Empty;
    }
    if pivots.len() == 2 {
        let (s, u) = (r[0][2].clone(), r[1][2].clone());
        if in_range(&s, p.bounded) && in_range(&u, q.bounded) {
            return Meet::Point(p.start.iter().zip(&p.dir).map(|(x, d)| x + &s * d).collect());
        }
        return Meet::Empty;
    }
    // Collinear: q.start = p.start + s0 p.dir and q.dir = k p.dir.
    let s0 = r[0][2].clone();
    let k = -r[0][1].clone();
    let (lo_q, hi_q) = if q.bounded {
        let e = &s0 + &k;
        if k > Q::zero() {
            (Some(s0.clone()), Some(e))
        } else {
            (Some(e), Some(s0.clone()))
        }
    } else if k > Q::zero() {
        (Some(s0.clone()), None)
    } else {
        (None, Some(s0.clone()))
    };
    let lo = match lo_q {
        Some(x) if x > Q::zero() => x,
        _ => Q::zero(),
    };
    let hi = match (hi_q, p.bounded) {
        (Some(x), true) => x.min(Q::from_integer(1.into())),
        (Some(x), false) => x,
        (None, true) => Q::from_integer(1.into()),
        (None, false) => return Meet::Overlap,
    };
    if lo > hi {
        Meet::Empty
    } else if lo == hi {
        Meet::Point(p.start.iter().zip(&p.dir).map(|(x, d)| x + &lo * d).collect())
    } else {
        Meet::Overlap
    }
}

fn normalize_line_point(p: &[Q], dir: &[i64]) -> Vec<String> {
    let k = dir.iter().position(|&x| x != 0).expect("nonzero direction");
    let s = p[k].clone() / Q::from_integer(dir[k].into());
    let pt: Vec<Q> = p.iter().zip(dir).map(|(x, &d)| x - &s * Q::from_integer(d.into())).collect();
    key(&pt)
}

fn on_segment(a: &[Q], b: &[Q], x: &[Q]) -> bool {
    // x = a + s (b - a) with 0 <= s <= 1.
    let mut s: Option<Q> = None;
    for i in 0..a.len() {
        let d = &b[i] - &a[i];
        let e = &x[i] - &a[i];
        if d.is_zero() {
            if !e.is_zero() {
                return false;
            }
            continue;
        }
        let si = e / d;
        match &s {
            Some(t) if t != &si => return false,
            _ => s = Some(si),
        }
    }
    match s {
        Some(s) => s >= Q::zero() && s <= Q::from_integer(1.into()),
        None => true,
    }
}

fn on_ray(a: &[Q], dir: &[i64], x: &[Q]) -> bool {
    let mut s: Option<Q> = None;
    for i in 0..a.len() {
        let e = &x[i] - &a[i];
        if dir[i] == 0 {
            if !e.is_zero() {
                return false;
            }
            continue;
        }
        let si = e / Q::from_integer(dir[i].into());
        match &s {
            Some(t) if t != &si => return false,
            _ => s = Some(si),
        }
    }
    s.map_or(true, |s| s >= Q::zero())
}

/// Total weighted slope per primitive ray direction, as sorted integer vectors.
pub fn ray_degree(rays: impl Iterator<Item = (Vec<i64>, i64)>) -> Vec<Vec<i64>> {
    let mut agg: BTreeMap<Vec<i64>, i64> = BTreeMap::new();
    for (sigma, weight) in rays {
        if sigma.iter().all(|&x| x == 0) || weight == 0 {
            continue;
        }
        let g = sigma.iter().fold(0i64, |g, &x| num_integer::gcd(g, x));
        let prim: Vec<i64> = sigma.iter().map(|x| x / g).collect();
        *agg.entry(prim).or_default() += g * weight;
    }
    agg.into_iter()
        .filter(|(_, m)| *m != 0)
        .map(|(p, m)| p.into_iter().map(|x| x * m).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puiseux::qi;

    fn pt(v: &[i64]) -> Vec<Q> {
        v.iter().map(|&x| qi(x)).collect()
    }

    #[test]
    fn straight_vertices_are_erased() {
        let mut g = EmbeddedGraph::new(1);
        let a = g.add_vertex(pt(&[0]));
        let b = g.add_vertex(pt(&[2]));
        g.add_segment(a, b, vec![1]);
        g.add_ray(b, vec![1]);
        g.add_ray(a, vec![-1]);
        let c = g.canonical();
        assert!(c.vertices.is_empty());
        assert_eq!(c.lines, vec![(vec!["0".to_string()], vec![1])]);
    }

    #[test]
    fn segment_orientation_is_normalized() {
        let mut g = EmbeddedGraph::new(2);
        let a = g.add_vertex(pt(&[1, 1]));
        let b = g.add_vertex(pt(&[0, 0]));
        g.add_segment(a, b, vec![-1, -1]);
        let mut h = EmbeddedGraph::new(2);
        let a = h.add_vertex(pt(&[0, 0]));
        let b = h.add_vertex(pt(&[1, 1]));
        h.add_segment(a, b, vec![1, 1]);
        assert_eq!(g.canonical(), h.canonical());
    }

    #[test]
    fn embedding_detects_crossings() {
        let mut g = EmbeddedGraph::new(2);
        let a = g.add_vertex(pt(&[0, 0]));
        let b = g.add_vertex(pt(&[2, 2]));
        g.add_segment(a, b, vec![1, 1]);
        g.add_ray(a, vec![-1, 0]);
        assert!(g.is_embedding());
        let c = g.add_vertex(pt(&[0, 2]));
        g.add_ray(c, vec![1, -1]);
        assert!(!g.is_embedding());
        let mut h = EmbeddedGraph::new(1);
        let a = h.add_vertex(pt(&[0]));
        let b = h.add_vertex(pt(&[1]));
        h.add_segment(a, b, vec![1]);
        h.add_segment(a, b, vec![1]);
        assert!(!h.is_embedding());
    }

    #[test]
    fn degree_aggregates_parallel_rays() {
        let d = ray_degree(vec![(vec![1, 0], 1), (vec![2, 0], 1), (vec![0, -1], 3)].into_iter());
        assert_eq!(d, vec![vec![0, -3], vec![3, 0]]);
    }
}
