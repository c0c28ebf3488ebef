//! Genus-zero lifting: realize the curve's metric tree by points of `P^1(K)`,
//! read off zero/pole multisets from the leaf slopes, and check the
//! tropicalization of the resulting rational map.

use std::collections::VecDeque;

use num_traits::{Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

pub use crate::error::LiftError;

use crate::btree::{on_path, realize_tree, span_tree, BTPoint, BtError, Length, MetricTree, SpanTree};
use crate::embed::{ray_degree, EmbeddedGraph};
use crate::puiseux::{fmt_q, parse_q, qi, val_diff, Coeff, P1Json, P1Point, PuiseuxError, Series, Valuation, Q};
use crate::ztcurve::{CurveGraph, ZTCurve, ZtError};


/// Positions in the tree of every vertex of the contracted curve graph.
#[derive(Clone, Debug)]
pub struct Realization {
    pub graph: CurveGraph,
    pub positions: Vec<BTPoint>,
}

#[derive(Clone, Debug)]
pub struct RationalMapData {
    pub n: usize,
    /// Distinct punctures.
    pub points: Vec<P1Point>,
    /// Per coordinate, indices into `points` with repetition.
    pub zplus: Vec<Vec<usize>>,
    pub zminus: Vec<Vec<usize>>,
    /// `(curve edge, point)` for every unbounded edge.
    pub leaf_points: Vec<(usize, usize)>,
    pub translation: Vec<Q>,
    pub trunc: Q,
    pub realization: Option<Realization>,
}

pub(crate) fn curve_tree(g: &CurveGraph) -> MetricTree {
    let mut t = MetricTree::default();
    for v in &g.verts {
        t.add_vertex(v.ids[0].clone(), v.boundary);
    }
    for e in &g.edges {
        t.add_edge(e.a, e.b, e.length.clone());
    }
    t
}

/// Lifts a genus-0 curve.
pub fn lift(c: &ZTCurve, trunc: &Q) -> Result<RationalMapData, LiftError> {
    let g = c.graph()?;
    if g.genus() != 0 {
        return Err(ZtError::WrongGenus { expected: 0, found: g.genus() }.into());
    }
    if g.edges.is_empty() {
        return Err(ZtError::Hypothesis("the curve has no edges".into()).into());
    }
    let positions = realize_tree(&curve_tree(&g))?;
    let n = g.n;
    let mut d = RationalMapData {
        n,
        points: vec![],
        zplus: vec![vec![]; n],
        zminus: vec![vec![]; n],
        leaf_points: vec![],
        translation: vec![Q::zero(); n],
        trunc: trunc.clone(),
        realization: None,
    };
    for e in g.rays() {
        let ed = &g.edges[e];
        let BTPoint::P1(p) = &positions[ed.b] else {
            return Err(BtError::InvalidTree("leaf realized as a lattice class".into()).into());
        };
        d.points.push(p.clone());
        let k = d.points.len() - 1;
        d.leaf_points.push((ed.orig, k));
        if matches!(p, P1Point::Infinity) {
            continue;
        }
        for i in 0..n {
            let s = ed.sigma[i];
            let list = if s > 0 { &mut d.zplus[i] } else { &mut d.zminus[i] };
            list.extend(std::iter::repeat(k).take(s.unsigned_abs() as usize));
        }
    }
    let BTPoint::Lattice { center, radius } = &positions[g.anchor] else {
        return Err(BtError::InvalidTree("anchor realized as a point".into()).into());
    };
    let u0 = probe_at(center, radius, &d.points, 1);
    let raw = d.phi_valuation(&u0)?;
    let anchor = g.coords(g.anchor);
    d.translation = (0..n).map(|i| &anchor[i] - &raw[i]).collect();
    d.realization = Some(Realization { graph: g, positions });
    Ok(d)
}

/// `c + t^r β` for the smallest integer `β >= start` that is not the
/// residue of any point of `avoid` inside the disk `(c, r)`.
pub fn probe_at(c: &Series, r: &Q, avoid: &[P1Point], start: i64) -> P1Point {
    let mut forbidden = Vec::new();
    for p in avoid {
        if let P1Point::Finite(z) = p {
            if let Valuation::Finite(v) = val_diff(z, c) {
                if &v == r {
                    forbidden.push(z.sub(c).coeff_at(r));
                }
            }
        }
    }
    let mut beta = start.max(1);
    while forbidden.contains(&Coeff::from_int(beta)) {
        beta += 1;
    }
    P1Point::Finite(c.add(&Series::monomial(Coeff::from_int(beta), r.clone())))
}

impl RationalMapData {
    fn finite_point(&self, k: usize) -> Option<&Series> {
        self.points[k].finite()
    }

    /// Order of `φ` at each puncture, with `∞` supplied when unbalanced.
    fn orders(&self) -> (Vec<P1Point>, Vec<Vec<i64>>) {
        let mut pts = Vec::new();
        let mut ord = Vec::new();
        let mut total = vec![0i64; self.n];
        for (k, p) in self.points.iter().enumerate() {
            if matches!(p, P1Point::Infinity) {
                continue;
            }
            let o: Vec<i64> = (0..self.n)
                .map(|i| {
                    let plus = self.zplus[i].iter().filter(|&&j| j == k).count() as i64;
                    let minus = self.zminus[i].iter().filter(|&&j| j == k).count() as i64;
                    plus - minus
                })
                .collect();
            for i in 0..self.n {
                total[i] += o[i];
            }
            if o.iter().any(|&x| x != 0) {
                pts.push(p.clone());
                ord.push(o);
            }
        }
        if total.iter().any(|&x| x != 0) {
            pts.push(P1Point::Infinity);
            ord.push(total.iter().map(|x| -x).collect());
        }
        (pts, ord)
    }

    /// `v(t^τ φ(u))` computed factor by factor.
    pub fn phi_valuation(&self, u: &P1Point) -> Result<Vec<Q>, LiftError> {
        let P1Point::Finite(u) = u else {
            return Err(LiftError::EvaluationAtZeroOrPole);
        };
        let val = |k: usize| -> Result<Q, LiftError> {
            match self.finite_point(k) {
                None => Ok(Q::zero()),
                Some(z) => match val_diff(u, z) {
                    Valuation::Finite(v) => Ok(v),
                    Valuation::Infinite => Err(LiftError::EvaluationAtZeroOrPole),
                    Valuation::Unknown => Err(PuiseuxError::InsufficientPrecision.into()),
                },
            }
        };
        let mut out = self.translation.clone();
        for i in 0..self.n {
            for &k in &self.zplus[i] {
                out[i] += val(k)?;
            }
            for &k in &self.zminus[i] {
                out[i] -= val(k)?;
            }
        }
        Ok(out)
    }

    /// `t^τ φ(u)` by series arithmetic, to relative precision `trunc`.
    pub fn evaluate(&self, u: &P1Point) -> Result<Vec<Series>, LiftError> {
        self.evaluate_rel(u, &self.trunc)
    }

    /// `t^τ φ(u)` to relative precision `rel`.
    pub fn evaluate_rel(&self, u: &P1Point, rel: &Q) -> Result<Vec<Series>, LiftError> {
        let P1Point::Finite(u) = u else {
            return Err(LiftError::EvaluationAtZeroOrPole);
        };
        let product = |list: &[usize]| -> Series {
            list.iter()
                .filter_map(|&k| self.finite_point(k))
                .fold(Series::one(), |acc, z| acc.mul(&u.sub(z)).truncate_rel(rel))
        };
        let mut out = Vec::new();
        for i in 0..self.n {
            let num = product(&self.zplus[i]);
            let den = product(&self.zminus[i]);
            if num.valuation() == Valuation::Infinite || den.valuation() == Valuation::Infinite {
                return Err(LiftError::EvaluationAtZeroOrPole);
            }
            let f = num.mul(&den.inv(rel)?).truncate_rel(rel);
            out.push(f.shift(&self.translation[i]));
        }
        Ok(out)
    }

    pub fn map_degree(&self) -> Vec<Vec<i64>> {
        let (_, ord) = self.orders();
        ray_degree(ord.into_iter().map(|o| (o, 1)))
    }

    pub fn certificate(&self, verified: bool) -> Value {
        let pt = |k: &usize| serde_json::to_value(self.points[*k].to_json()).unwrap();
        json!({
            "genus": 0,
            "Z": self.points.iter().map(|p| serde_json::to_value(p.to_json()).unwrap()).collect::<Vec<_>>(),
            "Zplus": self.zplus.iter().map(|l| l.iter().map(pt).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "Zminus": self.zminus.iter().map(|l| l.iter().map(pt).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "translation": self.translation.iter().map(fmt_q).collect::<Vec<_>>(),
            "verified": verified,
            "trunc": fmt_q(&self.trunc),
        })
    }

    pub fn from_certificate(v: &Value) -> Result<RationalMapData, LiftError> {
        let bad = |m: &str| LiftError::Certificate(m.to_string());
        if v.get("genus").and_then(Value::as_u64) != Some(0) {
            return Err(bad("genus must be 0"));
        }
        let parse_pt = |x: &Value| -> Result<P1Point, LiftError> {
            let j: P1Json = serde_json::from_value(x.clone()).map_err(|e| bad(&e.to_string()))?;
            Ok(P1Point::from_json(&j)?)
        };
        let lists = |key: &str| -> Result<Vec<Vec<P1Point>>, LiftError> {
            let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| bad(&format!("missing {key}")))?;
            arr.iter()
                .map(|l| l.as_array().ok_or_else(|| bad("expected a list")).and_then(|l| l.iter().map(parse_pt).collect()))
                .collect()
        };
        let zp = lists("Zplus")?;
        let zm = lists("Zminus")?;
        let n = zp.len();
        if zm.len() != n {
            return Err(bad("Zplus and Zminus lengths differ"));
        }
        let mut points: Vec<P1Point> = Vec::new();
        let index = |p: &P1Point, points: &mut Vec<P1Point>| match points.iter().position(|q| q == p) {
            Some(k) => k,
            None => {
                points.push(p.clone());
                points.len() - 1
            }
        };
        if let Some(zs) = v.get("Z").and_then(Value::as_array) {
            for z in zs {
                let p = parse_pt(z)?;
                index(&p, &mut points);
            }
        }
        let zplus = zp.iter().map(|l| l.iter().map(|p| index(p, &mut points)).collect()).collect();
        let zminus = zm.iter().map(|l| l.iter().map(|p| index(p, &mut points)).collect()).collect();
        let translation: Vec<Q> = v
            .get("translation")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing translation"))?
            .iter()
            .map(|x| x.as_str().ok_or_else(|| bad("translation entries are strings")).and_then(|s| Ok(parse_q(s)?)))
            .collect::<Result<_, _>>()?;
        if translation.len() != n {
            return Err(bad("translation has the wrong length"));
        }
        let trunc = match v.get("trunc").and_then(Value::as_str) {
            Some(s) => parse_q(s)?,
            None => qi(crate::puiseux::DEFAULT_TRUNC),
        };
        Ok(RationalMapData { n, points, zplus, zminus, leaf_points: vec![], translation, trunc, realization: None })
    }
}

/// `Trop φ` as a piecewise-linear map on the span of the punctures.
#[derive(Clone, Debug)]
pub struct TropImage {
    pub span: SpanTree,
    pub punctures: Vec<BTPoint>,
    /// Slope of each span edge from its `a` end towards `b`.
    pub slopes: Vec<Vec<i64>>,
    /// Image of each lattice vertex of the span.
    pub coords: Vec<Option<Vec<Q>>>,
    pub graph: EmbeddedGraph,
}

fn disk_of(p: &BTPoint) -> Option<(&Series, &Q)> {
    match p {
        BTPoint::Lattice { center, radius } => Some((center, radius)),
        _ => None,
    }
}

/// Disk on the path between two points.
fn disk_between(a: &P1Point, b: &P1Point) -> (Series, Q) {
    match (a, b) {
        (P1Point::Finite(x), P1Point::Finite(y)) => (x.clone(), val_diff(x, y).finite().cloned().unwrap_or_else(Q::zero)),
        (P1Point::Finite(x), P1Point::Infinity) | (P1Point::Infinity, P1Point::Finite(x)) => (x.clone(), Q::zero()),
        _ => (Series::zero(), Q::zero()),
    }
}

pub fn forward_trop(d: &RationalMapData) -> Result<TropImage, LiftError> {
    let (pts, ord) = d.orders();
    let punctures: Vec<BTPoint> = pts.iter().cloned().map(BTPoint::P1).collect();
    let span = span_tree(&punctures)?;
    let t = &span.tree;
    let adj = t.adjacency();
    let mut label = vec![None; t.vertices.len()];
    for (k, &v) in span.input_vertex.iter().enumerate() {
        label[v] = Some(k);
    }
    // Slope towards b = total order of the punctures on b's side.
    let mut slopes = Vec::new();
    for (ei, e) in t.edges.iter().enumerate() {
        let mut s = vec![0i64; d.n];
        let mut stack = vec![e.b];
        let mut seen = vec![false; t.vertices.len()];
        seen[e.a] = true;
        seen[e.b] = true;
        while let Some(v) = stack.pop() {
            if let Some(k) = label[v] {
                for i in 0..d.n {
                    s[i] += ord[k][i];
                }
            }
            for &f in &adj[v] {
                let w = t.other(f, v);
                if f != ei && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        slopes.push(s);
    }
    let mut coords: Vec<Option<Vec<Q>>> = vec![None; t.vertices.len()];
    let mut graph = EmbeddedGraph::new(d.n);
    let root = (0..t.vertices.len()).find(|&v| span.positions[v].is_lattice());
    match root {
        None => {
            // Two punctures: a whole line.
            let e = &t.edges[0];
            let (pa, pb) = match (&span.positions[e.a], &span.positions[e.b]) {
                (BTPoint::P1(x), BTPoint::P1(y)) => (x.clone(), y.clone()),
                _ => unreachable!(),
            };
            let (c, r) = disk_between(&pa, &pb);
            let x = d.phi_valuation(&probe_at(&c, &r, &pts, 1))?;
            let v = graph.add_vertex(x);
            graph.add_ray(v, slopes[0].clone());
            graph.add_ray(v, slopes[0].iter().map(|s| -s).collect());
        }
        Some(root) => {
            let (c, r) = disk_of(&span.positions[root]).unwrap();
            coords[root] = Some(d.phi_valuation(&probe_at(c, r, &pts, 1))?);
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                for &e in &adj[v] {
                    let w = t.other(e, v);
                    if coords[w].is_some() || !span.positions[w].is_lattice() {
                        continue;
                    }
                    let len = t.edges[e].length.finite().unwrap();
                    let sign = if t.edges[e].a == v { 1 } else { -1 };
                    let x: Vec<Q> = (0..d.n)
                        .map(|i| &coords[v].as_ref().unwrap()[i] + len * qi(sign * slopes[e][i]))
                        .collect();
                    coords[w] = Some(x);
                    queue.push_back(w);
                }
            }
            let mut idx = vec![usize::MAX; t.vertices.len()];
            for v in 0..t.vertices.len() {
                if let Some(x) = &coords[v] {
                    idx[v] = graph.add_vertex(x.clone());
                }
            }
            for (e, ed) in t.edges.iter().enumerate() {
                match (&ed.length, idx[ed.a] != usize::MAX, idx[ed.b] != usize::MAX) {
                    (Length::Finite(_), true, true) => graph.add_segment(idx[ed.a], idx[ed.b], slopes[e].clone()),
                    (_, true, false) => graph.add_ray(idx[ed.a], slopes[e].clone()),
                    (_, false, true) => graph.add_ray(idx[ed.b], slopes[e].iter().map(|s| -s).collect()),
                    _ => unreachable!("finite edge between points of P^1"),
                }
            }
        }
    }
    Ok(TropImage { span, punctures, slopes, coords, graph })
}

impl TropImage {
    /// `Trop φ(u)` read off the piecewise-linear structure at `b(u)`.
    pub fn value_at(&self, d: &RationalMapData, u: &P1Point) -> Result<Vec<Q>, LiftError> {
        let at = self.span.attach(u, &self.punctures)?;
        if let Some(v) = at.vertex {
            if let Some(x) = &self.coords[v] {
                return Ok(x.clone());
            }
        }
        let Some((e, off)) = at.edge else {
            return Err(BtError::InsufficientPrecision.into());
        };
        let ed = &self.span.tree.edges[e];
        let n = d.n;
        match (&self.coords[ed.a], &self.coords[ed.b]) {
            (Some(xa), _) => Ok((0..n).map(|i| &xa[i] + &off * qi(self.slopes[e][i])).collect()),
            (None, Some(xb)) => {
                let from_b = match &ed.length {
                    Length::Finite(l) => l - &off,
                    Length::Infinite => -off.clone(),
                };
                Ok((0..n).map(|i| &xb[i] - &from_b * qi(self.slopes[e][i])).collect())
            }
            (None, None) => {
                // Whole line: measure from the disk used as its vertex.
                let BTPoint::Lattice { center, radius } = &at.point else {
                    return Err(BtError::InsufficientPrecision.into());
                };
                d.phi_valuation(&probe_at(center, radius, &self.puncture_points(), 1))
            }
        }
    }

    fn puncture_points(&self) -> Vec<P1Point> {
        self.punctures
            .iter()
            .filter_map(|p| match p {
                BTPoint::P1(x) => Some(x.clone()),
                _ => None,
            })
            .collect()
    }

    /// A random probe whose `b(u)` is a vertex, an edge point or a ray point.
    pub fn random_probe(&self, rng: &mut ChaCha8Rng) -> P1Point {
        random_probe_in(&self.span, &self.puncture_points(), rng)
    }
}

/// A random probe near a random vertex or edge of `span`, avoiding the
/// residues of `pts`.
pub fn random_probe_in(span: &SpanTree, pts: &[P1Point], rng: &mut ChaCha8Rng) -> P1Point {
    let t = &span.tree;
    let start = rng.gen_range(1..=40);
    let k = rng.gen_range(0..t.vertices.len() + t.edges.len());
    if k < t.vertices.len() {
        if let Some((c, r)) = disk_of(&span.positions[k]) {
            return probe_at(c, r, pts, start);
        }
    }
    let e = &t.edges[k % t.edges.len()];
    let s = Q::new(rng.gen_range(1..=7).into(), 8.into());
    let (pa, pb) = (&span.positions[e.a], &span.positions[e.b]);
    let (c, r) = match (pa, pb) {
        (BTPoint::Lattice { center: ca, radius: ra }, BTPoint::Lattice { center: cb, radius: rb }) => {
            let len = (ra - rb).abs();
            if ra < rb {
                (cb.clone(), ra + &s * len)
            } else {
                (ca.clone(), rb + &s * len)
            }
        }
        (BTPoint::Lattice { center, radius }, BTPoint::P1(p)) | (BTPoint::P1(p), BTPoint::Lattice { center, radius }) => {
            let depth = Q::from_integer(rng.gen_range(1..=5).into()) * &s;
            match p {
                P1Point::Finite(z) => (z.clone(), radius + depth),
                P1Point::Infinity => (center.clone(), radius - depth),
            }
        }
        (BTPoint::P1(a), BTPoint::P1(b)) => {
            let (c, r) = disk_between(a, b);
            (c, r + Q::from_integer(rng.gen_range(-3..=3).into()))
        }
    };
    probe_at(&c, &r, pts, start)
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleRow {
    pub u1: String,
    pub u2: String,
    /// `v(φ(u1)) - v(φ(u2))` from series evaluation.
    pub lhs: Vec<String>,
    /// `Trop φ(b(u1)) - Trop φ(b(u2))` from the graph.
    pub rhs: Vec<String>,
    pub ok: bool,
}

fn diff(a: &[Q], b: &[Q]) -> Vec<Q> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn series_valuations(f: &[Series]) -> Result<Vec<Q>, LiftError> {
    f.iter().map(|s| Ok(s.valuation().expect_finite()?)).collect()
}

/// Relative precision used when only the valuation of `φ(u)` is needed.
pub const SAMPLE_REL: i64 = 1;

pub fn sample_check(d: &RationalMapData, img: &TropImage, u1: &P1Point, u2: &P1Point) -> Result<SampleRow, LiftError> {
    let rel = qi(SAMPLE_REL);
    let l1 = series_valuations(&d.evaluate_rel(u1, &rel)?)?;
    let l2 = series_valuations(&d.evaluate_rel(u2, &rel)?)?;
    let lhs = diff(&l1, &l2);
    let rhs = diff(&img.value_at(d, u1)?, &img.value_at(d, u2)?);
    Ok(SampleRow {
        u1: u1.to_string(),
        u2: u2.to_string(),
        ok: lhs == rhs,
        lhs: lhs.iter().map(fmt_q).collect(),
        rhs: rhs.iter().map(fmt_q).collect(),
    })
}

/// `ι(b(u))` computed from the realization of the curve itself.
pub fn iota_at(d: &RationalMapData, u: &P1Point) -> Result<Vec<Q>, LiftError> {
    let real = d.realization.as_ref().ok_or_else(|| LiftError::Certificate("no realization".into()))?;
    let punct: Vec<BTPoint> = d.points.iter().cloned().map(BTPoint::P1).collect();
    let at = span_tree(&punct)?.attach(u, &punct)?;
    let BTPoint::Lattice { center, radius } = &at.point else {
        return Err(BtError::InsufficientPrecision.into());
    };
    let g = &real.graph;
    for e in &g.edges {
        let (pa, pb) = (&real.positions[e.a], &real.positions[e.b]);
        if let Some(pos) = on_path(pa, pb, (center, radius))? {
            let Some(off) = pos.from_a else { continue };
            let xa = g.coords(e.a);
            return Ok((0..g.n).map(|i| &xa[i] + &off * qi(e.sigma[i])).collect());
        }
    }
    if g.edges.iter().all(|e| e.is_ray()) && g.internal().count() == 1 {
        // A star: every probe attaches at the center.
        return Ok(g.coords(g.internal().next().unwrap()).to_vec());
    }
    Err(BtError::InsufficientPrecision.into())
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub graph_equal: bool,
    pub degree_equal: bool,
    pub samples: Vec<SampleRow>,
    pub verified: bool,
}

/// Checks a map against a curve: exact graph equality plus `probes` sample pairs.
pub fn verify(d: &RationalMapData, c: &ZTCurve, probes: usize, rng: &mut ChaCha8Rng) -> Result<VerifyReport, LiftError> {
    let g = c.graph()?;
    let img = forward_trop(d)?;
    let graph_equal = img.graph.canonical() == g.embedded().canonical();
    let degree_equal = d.map_degree() == g.degree();
    let mut samples = Vec::new();
    for _ in 0..probes {
        let u1 = img.random_probe(rng);
        let u2 = img.random_probe(rng);
        samples.push(sample_check(d, &img, &u1, &u2)?);
    }
    let verified = graph_equal && degree_equal && samples.iter().all(|s| s.ok);
    Ok(VerifyReport { graph_equal, degree_equal, samples, verified })
}
