//! Genus-one lifting through the Tate curve `E_q = K^*/q^Z`.
//!
//! Each coordinate of the map is a quotient of theta functions
//! `Θ_z(u) = Π_{j<=0} (1 - q^{-j} u/z) · Π_{j>=1} (1 - q^j z/u)`, so its
//! zeros and poles are the multisets `Z_i^+`, `Z_i^-` modulo `q^Z`.  The
//! points sit in the annulus `0 <= v(u) < v(q)`; cluster and component units
//! perturb them until `Π Z_i^+ = Π Z_i^-` holds to the truncation order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::btree::{place_subtree, span_tree, BTPoint, BtError, Frame, Length, SpanTree};
use crate::embed::{ray_degree, EmbeddedGraph};
pub use crate::error::LiftError;
use crate::linalg::{nullspace, ColumnSolver};
use crate::liftzero::{curve_tree, probe_at, random_probe_in, SampleRow, SAMPLE_REL};
use crate::puiseux::{
    fmt_q, parse_q, qi, val_diff, Coeff, CoeffField, P1Point, PuiseuxError, Series, SeriesJson, Valuation, Q,
};
use crate::ztcurve::{Circuit, CurveGraph, ZTCurve};

/// The element `q^shift · points[point]` of a zero or pole multiset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Element {
    pub point: usize,
    pub shift: i64,
}

/// The element of `Z_i^+` that was multiplied by `q^shift`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QShift {
    pub coordinate: usize,
    pub point: usize,
    pub shift: i64,
}

/// Combinatorics of the source curve, kept for solving and diagnostics.
#[derive(Clone, Debug)]
pub struct Layout {
    pub graph: CurveGraph,
    pub circuit: Circuit,
    /// `v` of the spine disk of each circuit vertex, in traversal order.
    pub radius: Vec<Q>,
    /// Graph edge of the ray behind each point.
    pub ray_edge: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TateData {
    pub n: usize,
    pub q: Series,
    pub points: Vec<Series>,
    pub zplus: Vec<Vec<Element>>,
    pub zminus: Vec<Vec<Element>>,
    /// Circuit position of the component holding each point.
    pub clusters: Vec<usize>,
    pub qshifts: Vec<QShift>,
    pub translation: Vec<Q>,
    pub trunc: Q,
    /// `min_i v(w_i - 1)` at each solver step, ending at `trunc`.
    pub trace: Vec<Q>,
    pub layout: Option<Layout>,
}

fn floor_i64(x: &Q) -> i64 {
    x.floor().to_integer().to_i64().expect("exponent fits in i64")
}

fn ceil_i64(x: &Q) -> i64 {
    x.ceil().to_integer().to_i64().expect("exponent fits in i64")
}

fn finite_val(s: &Series) -> Result<Q, LiftError> {
    match s.valuation() {
        Valuation::Finite(v) => Ok(v),
        Valuation::Infinite => Err(LiftError::EvaluationAtZeroOrPole),
        Valuation::Unknown => Err(PuiseuxError::UnknownValuation.into()),
    }
}

/// `v(q)`, requiring `q` to be an exact monomial of positive valuation.
pub fn q_valuation(q: &Series) -> Result<Q, LiftError> {
    match (q.terms(), q.trunc()) {
        ([(e, _)], None) if e.is_positive() => Ok(e.clone()),
        _ => Err(LiftError::Certificate("q must be an exact monomial c t^l with l > 0".into())),
    }
}

/// `q^k` for a monomial `q`.
pub fn q_pow(q: &Series, k: i64) -> Series {
    let (e, c) = q.leading().expect("q is nonzero");
    Series::monomial(c.pow(k).expect("q has a nonzero coefficient"), e * qi(k))
}

// ---------------------------------------------------------------------------
// Theta functions
// ---------------------------------------------------------------------------

/// `v(Θ_z(u))`, exactly: only the finitely many factors that are not `≡ 1`
/// contribute.
pub fn theta_valuation(z: &Series, u: &Series, q: &Series) -> Result<Q, LiftError> {
    let ell = q_valuation(q)?;
    let vz = finite_val(z)?;
    let vu = finite_val(u)?;
    let d = (&vu - &vz) / &ell;
    let factor = |j: i64, vx: Q| -> Result<Q, LiftError> {
        if vx.is_negative() {
            return Ok(vx);
        }
        if vx.is_positive() {
            return Ok(Q::zero());
        }
        match val_diff(&z.mul(&q_pow(q, j)), u) {
            Valuation::Finite(v) => Ok(v - &vu),
            Valuation::Infinite => Err(LiftError::EvaluationAtZeroOrPole),
            Valuation::Unknown => Err(PuiseuxError::InsufficientPrecision.into()),
        }
    };
    let mut total = Q::zero();
    for j in ceil_i64(&d)..=0 {
        total += factor(j, &vu - &vz - &ell * qi(j))?;
    }
    for j in 1..=floor_i64(&d) {
        total += factor(j, &ell * qi(j) + &vz - &vu)?;
    }
    Ok(total)
}

/// Number of factors on each side after which the rest are `≡ 1` to
/// relative order `rel`.
pub fn theta_window(vz: &Q, vu: &Q, ell: &Q, rel: &Q) -> i64 {
    ceil_i64(&((rel + vu.abs() + vz.abs()) / ell)).max(1)
}

/// `Θ_z(u)` to relative order `rel`.  Factors are taken in the form
/// `(z q^j - u)/(z q^j)` and `(u - q^j z)/u` so differences stay exact.
pub fn theta(z: &Series, u: &Series, q: &Series, rel: &Q) -> Result<Series, LiftError> {
    let ell = q_valuation(q)?;
    let vz = finite_val(z)?;
    let vu = finite_val(u)?;
    let big = theta_window(&vz, &vu, &ell, rel);
    let mut num = Series::one();
    for j in -big..=0 {
        num = num.mul(&z.mul(&q_pow(q, j)).sub(u)).truncate_rel(rel);
    }
    for j in 1..=big {
        num = num.mul(&u.sub(&z.mul(&q_pow(q, j)))).truncate_rel(rel);
    }
    match num.valuation() {
        Valuation::Finite(_) => {}
        Valuation::Infinite => return Err(LiftError::EvaluationAtZeroOrPole),
        Valuation::Unknown => return Err(PuiseuxError::InsufficientPrecision.into()),
    }
    // Π_{j=-J}^{0} z q^j · u^J = z^{J+1} q^{-J(J+1)/2} u^J.
    let den = z.pow(big + 1, rel)?.mul(&q_pow(q, -big * (big + 1) / 2)).mul(&u.pow(big, rel)?);
    Ok(num.mul(&den.inv(rel)?).truncate_rel(rel))
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

/// Points, clusters and zero/pole multisets before any unit correction.
pub fn build_initial(c: &ZTCurve, trunc: &Q) -> Result<TateData, LiftError> {
    let g = c.graph()?;
    let circ = g.circuit()?;
    let n = g.n;
    let mut radius = vec![Q::zero()];
    for k in 0..circ.edges.len() - 1 {
        let next = &radius[k] + g.edges[circ.edges[k]].len().expect("circuit edges are bounded");
        radius.push(next);
    }
    let tree = curve_tree(&g);
    let adj = tree.adjacency();
    let on_circuit: BTreeSet<usize> = circ.edges.iter().copied().collect();
    let mut pos: Vec<Option<BTPoint>> = vec![None; g.verts.len()];
    for (k, &v) in circ.verts.iter().enumerate() {
        let frame = Frame { base: Series::zero(), scale: radius[k].clone() };
        place_subtree(
            &tree,
            &adj,
            v,
            None,
            &|e| !on_circuit.contains(&e),
            frame,
            &mut |i| Coeff::two_pow(&qi(i as i64)),
            &mut pos,
        );
    }
    let mut points = Vec::new();
    let mut clusters = Vec::new();
    let mut ray_edge = Vec::new();
    for e in g.rays() {
        let ed = &g.edges[e];
        let Some(BTPoint::P1(P1Point::Finite(p))) = &pos[ed.b] else {
            return Err(BtError::InvalidTree("ray end was not placed at a finite point".into()).into());
        };
        points.push(p.clone());
        clusters.push(circ.root[ed.a].expect("every internal vertex hangs from the circuit"));
        ray_edge.push(e);
    }
    let mut zplus = vec![vec![]; n];
    let mut zminus = vec![vec![]; n];
    for (p, &e) in ray_edge.iter().enumerate() {
        for (i, &s) in g.edges[e].sigma.iter().enumerate() {
            let list = if s > 0 { &mut zplus[i] } else { &mut zminus[i] };
            for _ in 0..s.unsigned_abs() {
                list.push(Element { point: p, shift: 0 });
            }
        }
    }
    let ell = circ.length.clone();
    let q = Series::t_pow(ell.clone());
    let sigma0 = circ.sigma(&g, circ.edges.len() - 1);
    let mut qshifts = Vec::new();
    for i in 0..n {
        if sigma0[i] == 0 {
            continue;
        }
        let Some(k) = (0..zplus[i].len()).min_by(|&a, &b| {
            let (pa, pb) = (&points[zplus[i][a].point], &points[zplus[i][b].point]);
            pa.valuation().finite().cmp(&pb.valuation().finite()).then_with(|| pa.canonical_cmp(pb))
        }) else {
            return Err(LiftError::Unbalanced(i));
        };
        zplus[i][k].shift = sigma0[i];
        qshifts.push(QShift { coordinate: i, point: zplus[i][k].point, shift: sigma0[i] });
    }
    let layout = Layout { graph: g, circuit: circ, radius, ray_edge };
    let mut d = TateData {
        n,
        q,
        points,
        zplus,
        zminus,
        clusters,
        qshifts,
        translation: vec![Q::zero(); n],
        trunc: trunc.clone(),
        trace: vec![],
        layout: Some(layout),
    };
    set_translation(&mut d)?;
    Ok(d)
}

/// `τ = x(verts[0]) - v(raw φ)` at the spine disk of the first circuit vertex.
fn set_translation(d: &mut TateData) -> Result<(), LiftError> {
    let Some(layout) = &d.layout else {
        return Ok(());
    };
    let anchor = layout.graph.coords(layout.circuit.verts[0]).to_vec();
    let (reps, _) = d.normalized()?;
    let u0 = spine_probe(&reps, &Q::zero());
    let raw = d.raw_phi_valuation(&u0)?;
    d.translation = anchor.iter().zip(&raw).map(|(a, r)| a - r).collect();
    Ok(())
}

/// A point of valuation `r` whose residue avoids every representative.
fn spine_probe(reps: &[Series], r: &Q) -> Series {
    let avoid: Vec<P1Point> = reps.iter().cloned().map(P1Point::Finite).collect();
    match probe_at(&Series::zero(), r, &avoid, 1) {
        P1Point::Finite(s) => s,
        P1Point::Infinity => unreachable!("probes are finite"),
    }
}

impl TateData {
    pub fn ell(&self) -> Result<Q, LiftError> {
        q_valuation(&self.q)
    }

    pub fn value(&self, e: &Element) -> Series {
        if e.shift == 0 {
            self.points[e.point].clone()
        } else {
            self.points[e.point].mul(&q_pow(&self.q, e.shift))
        }
    }

    pub fn field(&self) -> CoeffField {
        self.points.iter().fold(self.q.field(), |f, p| f.join(p.field()))
    }

    /// Copies in `Z_i^+` minus copies in `Z_i^-`, per point and coordinate.
    pub fn orders(&self) -> Vec<Vec<i64>> {
        let mut c = vec![vec![0i64; self.n]; self.points.len()];
        for i in 0..self.n {
            for e in &self.zplus[i] {
                c[e.point][i] += 1;
            }
            for e in &self.zminus[i] {
                c[e.point][i] -= 1;
            }
        }
        c
    }

    /// `w_i = Π Z_i^+ / Π Z_i^-` to relative order `rel`.
    pub fn ratios(&self, rel: &Q) -> Result<Vec<Series>, LiftError> {
        let orders = self.orders();
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let shift: i64 =
                self.zplus[i].iter().map(|e| e.shift).sum::<i64>() - self.zminus[i].iter().map(|e| e.shift).sum::<i64>();
            let mut num = q_pow(&self.q, shift);
            let mut den = Series::one();
            for (p, c) in orders.iter().enumerate() {
                let k = c[i];
                if k > 0 {
                    num = num.mul(&self.points[p].pow(k, rel)?).truncate_rel(rel);
                } else if k < 0 {
                    den = den.mul(&self.points[p].pow(-k, rel)?).truncate_rel(rel);
                }
            }
            out.push(num.mul(&den.inv(rel)?).truncate_rel(rel));
        }
        Ok(out)
    }

    /// `v(w_i - 1)`; `None` when it vanishes to the truncation order.
    pub fn residual_valuations(&self) -> Result<Vec<Option<Q>>, LiftError> {
        Ok(self.ratios(&self.trunc)?.iter().map(|w| residual_of(w, &self.trunc)).collect())
    }

    pub fn product_one(&self) -> Result<bool, LiftError> {
        Ok(self.residual_valuations()?.iter().all(Option::is_none))
    }

    /// Distinct representatives of `Z` in `0 <= v < v(q)` and the order of
    /// `φ` at each.
    pub fn normalized(&self) -> Result<(Vec<Series>, Vec<Vec<i64>>), LiftError> {
        let ell = self.ell()?;
        let mut reps: Vec<Series> = Vec::new();
        let mut orders: Vec<Vec<i64>> = Vec::new();
        for i in 0..self.n {
            for (list, sign) in [(&self.zplus[i], 1i64), (&self.zminus[i], -1)] {
                for e in list {
                    let z = self.value(e);
                    let f = floor_i64(&(finite_val(&z)? / &ell));
                    let rep = if f == 0 { z } else { z.mul(&q_pow(&self.q, -f)) };
                    let k = match reps.iter().position(|r| r == &rep) {
                        Some(k) => k,
                        None => {
                            reps.push(rep);
                            orders.push(vec![0; self.n]);
                            reps.len() - 1
                        }
                    };
                    orders[k][i] += sign;
                }
            }
        }
        Ok((reps, orders))
    }

    fn elements(&self) -> BTreeSet<Element> {
        self.zplus.iter().chain(&self.zminus).flatten().cloned().collect()
    }

    fn raw_phi_valuation(&self, u: &Series) -> Result<Vec<Q>, LiftError> {
        let mut cache = BTreeMap::new();
        for e in self.elements() {
            let v = theta_valuation(&self.value(&e), u, &self.q)?;
            cache.insert(e, v);
        }
        Ok((0..self.n)
            .map(|i| {
                self.zplus[i].iter().map(|e| cache[e].clone()).sum::<Q>()
                    - self.zminus[i].iter().map(|e| cache[e].clone()).sum::<Q>()
            })
            .collect())
    }

    /// `v(φ(u))` exactly, translation included.
    pub fn phi_valuation(&self, u: &Series) -> Result<Vec<Q>, LiftError> {
        let raw = self.raw_phi_valuation(u)?;
        Ok(raw.iter().zip(&self.translation).map(|(r, t)| r + t).collect())
    }

    /// `φ_i(u) = t^{τ_i} Π Θ_{Z^+}(u) / Π Θ_{Z^-}(u)` to relative order `rel`.
    pub fn evaluate_rel(&self, u: &Series, rel: &Q) -> Result<Vec<Series>, LiftError> {
        let mut cache = BTreeMap::new();
        for e in self.elements() {
            let th = theta(&self.value(&e), u, &self.q, rel)?;
            cache.insert(e, th);
        }
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut num = Series::t_pow(self.translation[i].clone());
            for e in &self.zplus[i] {
                num = num.mul(&cache[e]).truncate_rel(rel);
            }
            let mut den = Series::one();
            for e in &self.zminus[i] {
                den = den.mul(&cache[e]).truncate_rel(rel);
            }
            out.push(num.mul(&den.inv(rel)?).truncate_rel(rel));
        }
        Ok(out)
    }

    /// Degree of the map: total order per primitive direction.
    pub fn map_degree(&self) -> Result<Vec<Vec<i64>>, LiftError> {
        let (_, orders) = self.normalized()?;
        Ok(ray_degree(orders.into_iter().map(|c| (c, 1))))
    }

    /// `v(j(E_q)) = -v(q)`.
    pub fn j_valuation(&self) -> Result<Q, LiftError> {
        Ok(-self.ell()?)
    }

    pub fn certificate(&self, verified: bool) -> Result<Value, LiftError> {
        let refs = |l: &Vec<Element>| -> Vec<Value> {
            l.iter().map(|e| json!({"point": e.point, "qshift": e.shift})).collect()
        };
        let field = self.field();
        let residuals: Vec<String> =
            self.residual_valuations()?.iter().map(|r| r.as_ref().map_or("inf".to_string(), fmt_q)).collect();
        Ok(json!({
            "genus": 1,
            "q": self.q.to_json(),
            "Z": self.points.iter().map(Series::to_json).collect::<Vec<_>>(),
            "clusters": self.clusters,
            "Zplus": self.zplus.iter().map(refs).collect::<Vec<_>>(),
            "Zminus": self.zminus.iter().map(refs).collect::<Vec<_>>(),
            "qshift": self.qshifts,
            "field": {"field": field.name(), "d": field.d},
            "w_residual_valuations": residuals,
            "translation": self.translation.iter().map(fmt_q).collect::<Vec<_>>(),
            "verified": verified,
            "trunc": fmt_q(&self.trunc),
        }))
    }

    pub fn from_certificate(v: &Value) -> Result<TateData, LiftError> {
        let bad = |m: &str| LiftError::Certificate(m.to_string());
        if v.get("genus").and_then(Value::as_u64) != Some(1) {
            return Err(bad("expected genus 1"));
        }
        let series = |x: &Value| -> Result<Series, LiftError> {
            let j: SeriesJson = serde_json::from_value(x.clone()).map_err(|e| LiftError::Certificate(e.to_string()))?;
            Ok(Series::from_json(&j)?)
        };
        let q = series(v.get("q").ok_or_else(|| bad("missing q"))?)?;
        q_valuation(&q)?;
        let points = v
            .get("Z")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing Z"))?
            .iter()
            .map(series)
            .collect::<Result<Vec<_>, _>>()?;
        let lists = |key: &str| -> Result<Vec<Vec<Element>>, LiftError> {
            let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| bad(&format!("missing {key}")))?;
            arr.iter()
                .map(|l| {
                    l.as_array()
                        .ok_or_else(|| bad("expected a list of elements"))?
                        .iter()
                        .map(|e| {
                            let point = e.get("point").and_then(Value::as_u64).ok_or_else(|| bad("element point"))?;
                            let shift = e.get("qshift").and_then(Value::as_i64).ok_or_else(|| bad("element qshift"))?;
                            if point as usize >= points.len() {
                                return Err(bad("element refers to a missing point"));
                            }
                            Ok(Element { point: point as usize, shift })
                        })
                        .collect()
                })
                .collect()
        };
        let zplus = lists("Zplus")?;
        let zminus = lists("Zminus")?;
        let n = zplus.len();
        if zminus.len() != n {
            return Err(bad("Zplus and Zminus have different lengths"));
        }
        let clusters = match v.get("clusters").and_then(Value::as_array) {
            Some(a) => a.iter().map(|x| x.as_u64().map(|k| k as usize).ok_or_else(|| bad("cluster"))).collect::<Result<_, _>>()?,
            None => vec![0; points.len()],
        };
        let mut qshifts = Vec::new();
        if let Some(a) = v.get("qshift").and_then(Value::as_array) {
            for s in a {
                let get = |k: &str| s.get(k).and_then(Value::as_i64).ok_or_else(|| bad("qshift entry"));
                qshifts.push(QShift { coordinate: get("coordinate")? as usize, point: get("point")? as usize, shift: get("shift")? });
            }
        }
        let parse = |x: &Value| -> Result<Q, LiftError> { Ok(parse_q(x.as_str().ok_or_else(|| bad("expected a rational"))?)?) };
        let translation = match v.get("translation").and_then(Value::as_array) {
            Some(a) => a.iter().map(parse).collect::<Result<Vec<_>, _>>()?,
            None => vec![Q::zero(); n],
        };
        if translation.len() != n {
            return Err(bad("translation has the wrong length"));
        }
        let trunc = match v.get("trunc") {
            Some(t) => parse(t)?,
            None => qi(crate::puiseux::DEFAULT_TRUNC),
        };
        Ok(TateData {
            n,
            q,
            points,
            zplus,
            zminus,
            clusters,
            qshifts,
            translation,
            trunc,
            trace: vec![],
            layout: None,
        })
    }
}

fn residual_of(w: &Series, trunc: &Q) -> Option<Q> {
    match w.sub(&Series::one()).valuation() {
        Valuation::Finite(v) if &v < trunc => Some(v),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Unit solving
// ---------------------------------------------------------------------------

const GENERICITY_SEED: u64 = 0x7a7e_5eed;
/// Bound on generic retries when component units make siblings collide.
const RETRY_BOUND: u32 = 64;
const PA_DRAWS: usize = 16;

/// A non-circuit edge together with everything beyond it.
#[derive(Clone, Debug)]
struct Component {
    /// Endpoint nearer the circuit, when it sits exactly at the level.
    vertex: Option<usize>,
    points: Vec<usize>,
    vector: Vec<i64>,
}

#[derive(Clone, Debug)]
struct Column {
    points: Vec<usize>,
    vector: Vec<i64>,
    component: bool,
}

/// Rays in the part of the graph cut off by `e`, on the side away from `from`.
fn rays_beyond(g: &CurveGraph, e: usize, from: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut seen_e = BTreeSet::from([e]);
    let mut queue = VecDeque::from([(e, g.edges[e].other(from))]);
    while let Some((edge, v)) = queue.pop_front() {
        if g.edges[edge].is_ray() && v == g.edges[edge].b {
            out.push(edge);
            continue;
        }
        for &f in &g.adj[v] {
            if seen_e.insert(f) {
                queue.push_back((f, g.edges[f].other(v)));
            }
        }
    }
    out.sort_unstable();
    out
}

fn points_beyond(layout: &Layout, e: usize, from: usize) -> Vec<usize> {
    let rays = rays_beyond(&layout.graph, e, from);
    (0..layout.ray_edge.len()).filter(|p| rays.binary_search(&layout.ray_edge[*p]).is_ok()).collect()
}

/// `(inner, d_in, d_out)` for a non-circuit edge; `d_out` is `None` on rays.
fn edge_span(layout: &Layout, e: usize) -> (usize, Q, Option<Q>) {
    let ed = &layout.graph.edges[e];
    let dist = &layout.circuit.dist;
    if ed.is_ray() {
        return (ed.a, dist[ed.a].clone().unwrap(), None);
    }
    let (da, db) = (dist[ed.a].clone().unwrap(), dist[ed.b].clone().unwrap());
    if da <= db {
        (ed.a, da, Some(db))
    } else {
        (ed.b, db, Some(da))
    }
}

/// Distances `R` at which the span of the edge slopes at distance `<= R`
/// grows; always contains 0.
fn jumps(layout: &Layout) -> Vec<Q> {
    let g = &layout.graph;
    let mut by_level: BTreeMap<Q, Vec<Vec<i64>>> = BTreeMap::new();
    for e in 0..g.edges.len() {
        let d = if layout.circuit.contains_edge(e) { Q::zero() } else { edge_span(layout, e).1 };
        by_level.entry(d).or_default().push(g.edges[e].sigma.clone());
    }
    let mut acc: Vec<Vec<i64>> = Vec::new();
    let mut rank = 0;
    let mut out = vec![Q::zero()];
    for (d, vs) in by_level {
        acc.extend(vs);
        let r = crate::linalg::rank_i64(&acc);
        if r > rank && !d.is_zero() {
            out.push(d);
        }
        rank = r;
    }
    out
}

fn components_at(layout: &Layout, orders: &[Vec<i64>], level: &Q, n: usize) -> Vec<Component> {
    let mut out = Vec::new();
    for e in 0..layout.graph.edges.len() {
        if layout.circuit.contains_edge(e) {
            continue;
        }
        let (inner, d_in, d_out) = edge_span(layout, e);
        if &d_in > level || d_out.as_ref().is_some_and(|d| d <= level) {
            continue;
        }
        let points = points_beyond(layout, e, inner);
        let mut vector = vec![0i64; n];
        for &p in &points {
            for i in 0..n {
                vector[i] += orders[p][i];
            }
        }
        out.push(Component { vertex: (&d_in == level).then_some(inner), points, vector });
    }
    out
}

/// Groups of sibling components (as column indices) whose points are no
/// longer separated at the expected depth.
fn collisions(d: &TateData, layout: &Layout, cols: &[Column], comps: &[(usize, Option<usize>)], level: &Q) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(c, v) in comps {
        if let Some(v) = v {
            groups.entry(v).or_default().push(c);
        }
    }
    let mut out = Vec::new();
    for (x, members) in groups {
        let target = &layout.radius[layout.circuit.root[x].unwrap()] + level;
        let reps: Vec<&Series> = members.iter().map(|&c| &d.points[cols[c].points[0]]).collect();
        let mut bad = false;
        for a in 0..reps.len() {
            for b in a + 1..reps.len() {
                if val_diff(reps[a], reps[b]) != Valuation::Finite(target.clone()) {
                    bad = true;
                }
            }
        }
        if bad {
            out.push(members);
        }
    }
    out
}

/// `exp(c t^r)` truncated below `trunc`.
fn exp_unit(c: &Q, r: &Q, trunc: &Q) -> Series {
    let mut terms = vec![(Q::zero(), Coeff::one())];
    let mut coeff = Q::one();
    let mut k = 1i64;
    while &(r * qi(k)) < trunc {
        coeff = coeff * c / qi(k);
        terms.push((r * qi(k), Coeff::from_q(coeff.clone())));
        k += 1;
    }
    Series::new(terms, None)
}

fn apply_unit(points: &mut [Series], cols: &[Column], pa: &[i64], g: &Q, level: &Q, trunc: &Q) {
    for (col, &a) in cols.iter().zip(pa) {
        if a == 0 {
            continue;
        }
        let x = g * qi(a);
        if level.is_zero() {
            let u = Coeff::two_pow(&x);
            for &p in &col.points {
                points[p] = points[p].scale(&u);
            }
        } else {
            let u = exp_unit(&x, level, trunc);
            for &p in &col.points {
                points[p] = points[p].mul(&u).truncate_rel(trunc);
            }
        }
    }
}

/// Moves the points along the kernel of the unit matrix until sibling
/// components are separated again; the products `w_i` do not change.
fn separate(
    d: &mut TateData,
    layout: &Layout,
    cols: &[Column],
    comps: &[(usize, Option<usize>)],
    a: &[Vec<Q>],
    level: &Q,
    rng: &mut ChaCha8Rng,
) -> Result<(), LiftError> {
    let bad = collisions(d, layout, cols, comps, level);
    if bad.is_empty() {
        return Ok(());
    }
    let kernel = nullspace(a, cols.len());
    if kernel.is_empty() {
        return Err(LiftError::GenericityExhausted(fmt_q(level)));
    }
    for _ in 0..PA_DRAWS {
        let mut v = vec![Q::zero(); cols.len()];
        for b in &kernel {
            let k = qi(rng.gen_range(-3..=3));
            for (x, y) in v.iter_mut().zip(b) {
                *x += &k * y;
            }
        }
        let den = v.iter().fold(num_bigint::BigInt::one(), |l, x| num_integer::lcm(l, x.denom().clone()));
        let pa: Vec<i64> = v.iter().map(|x| (x * Q::from_integer(den.clone())).to_integer().to_i64().unwrap_or(0)).collect();
        let distinct = bad.iter().all(|grp| {
            let vals: BTreeSet<i64> = grp.iter().map(|&c| pa[c]).collect();
            vals.len() == grp.len()
        });
        if !distinct {
            continue;
        }
        for step in 0..RETRY_BOUND {
            let g = if level.is_zero() { qi(step as i64 + 1) } else { Q::from_integer(num_bigint::BigInt::one() << step) };
            let mut trial = d.clone();
            apply_unit(&mut trial.points, cols, &pa, &g, level, &d.trunc);
            if collisions(&trial, layout, cols, comps, level).is_empty() {
                d.points = trial.points;
                return Ok(());
            }
        }
    }
    Err(LiftError::GenericityExhausted(fmt_q(level)))
}

fn log2_exact(c: &Coeff) -> Option<Q> {
    let parts = c.parts();
    let d = parts.len();
    let nonzero: Vec<usize> = (0..d).filter(|&k| !parts[k].is_zero()).collect();
    let [k] = nonzero[..] else {
        return None;
    };
    let m = Coeff::from_q(parts[k].clone()).log2_integer()?;
    Some(qi(m) + Q::new((k as i64).into(), (d as i64).into()))
}

fn solve_units(d0: &TateData, use_components: bool) -> Result<TateData, LiftError> {
    let layout = d0.layout.clone().ok_or_else(|| LiftError::Certificate("solving needs the curve layout".into()))?;
    let mut d = d0.clone();
    let n = d.n;
    let trunc = d.trunc.clone();
    let orders = d.orders();
    let levels = if use_components { jumps(&layout) } else { vec![Q::zero()] };
    let mut rng = ChaCha8Rng::seed_from_u64(GENERICITY_SEED);
    let ncl = layout.circuit.verts.len();
    let mut trace: Vec<Q> = Vec::new();
    // Working precision for `w`; doubled as the residual order grows.
    let mut prec = trunc.clone().min(qi(1));
    loop {
        let w = d.ratios(&prec)?;
        let residual: Vec<Series> = w.iter().map(|x| x.sub(&Series::one())).collect();
        let Some(k) = w.iter().filter_map(|x| residual_of(x, &prec)).min() else {
            if prec == trunc {
                trace.push(trunc.clone());
                break;
            }
            prec = (&prec * qi(2)).min(trunc.clone());
            continue;
        };
        if k.is_negative() {
            return Err(LiftError::Unsolvable(fmt_q(&k)));
        }
        if trace.last().is_some_and(|prev| &k <= prev) {
            return Err(LiftError::Stalled(fmt_q(&k)));
        }
        trace.push(k.clone());
        let level = levels.iter().filter(|r| **r <= k).max().cloned().unwrap_or_else(Q::zero);
        let next = levels.iter().find(|r| **r > k).cloned();
        let mut cols: Vec<Column> = (0..ncl)
            .map(|j| {
                let points: Vec<usize> = (0..d.points.len()).filter(|&p| d.clusters[p] == j).collect();
                let mut vector = vec![0i64; n];
                for &p in &points {
                    for i in 0..n {
                        vector[i] += orders[p][i];
                    }
                }
                Column { points, vector, component: false }
            })
            .collect();
        let mut comp_cols = Vec::new();
        if use_components {
            for c in components_at(&layout, &orders, &level, n) {
                comp_cols.push((cols.len(), c.vertex));
                cols.push(Column { points: c.points, vector: c.vector, component: true });
            }
        }
        let a: Vec<Vec<Q>> = (0..n).map(|i| cols.iter().map(|c| qi(c.vector[i])).collect()).collect();
        let solver = ColumnSolver::new(&a, cols.len());
        if !use_components && solver.rank() < n {
            return Err(LiftError::RankDeficient { rank: solver.rank(), n });
        }
        let mut touched = false;
        if k.is_zero() {
            let mut b = Vec::with_capacity(n);
            for x in &w {
                let c = x.residue()?;
                let l = log2_exact(&c).ok_or_else(|| LiftError::NotPowerOfTwo(c.to_string()))?;
                b.push(-l);
            }
            let x = solver.solve(&b).ok_or_else(|| LiftError::Unsolvable("0".into()))?;
            for (col, xc) in cols.iter().zip(&x) {
                if xc.is_zero() {
                    continue;
                }
                touched |= col.component;
                let u = Coeff::two_pow(xc);
                for &p in &col.points {
                    d.points[p] = d.points[p].scale(&u);
                }
            }
        } else {
            let mut end = &k * qi(2);
            if let Some(nx) = &next {
                end = end.min(nx.clone());
            }
            end = end.min(prec.clone());
            prec = prec.max(&end * qi(2)).min(trunc.clone());
            let dd = residual.iter().fold(CoeffField::rationals(), |f, r| f.join(r.field())).d;
            let exps: BTreeSet<Q> =
                residual.iter().flat_map(|r| r.terms().iter().map(|(e, _)| e.clone())).filter(|e| e >= &k && e < &end).collect();
            let mut units: Vec<Vec<(Q, Coeff)>> = vec![vec![]; cols.len()];
            for e in &exps {
                let parts: Vec<Vec<Q>> = residual.iter().map(|r| r.coeff_at(e).parts_in(dd)).collect();
                let mut acc = vec![vec![Q::zero(); dd]; cols.len()];
                for b in 0..dd {
                    let rhs: Vec<Q> = parts.iter().map(|p| -p[b].clone()).collect();
                    if rhs.iter().all(Zero::is_zero) {
                        continue;
                    }
                    let y = solver.solve(&rhs).ok_or_else(|| LiftError::Unsolvable(fmt_q(e)))?;
                    for (c, yc) in y.into_iter().enumerate() {
                        acc[c][b] = yc;
                    }
                }
                for (c, p) in acc.into_iter().enumerate() {
                    let co = Coeff::from_parts(p);
                    if !co.is_zero() {
                        touched |= cols[c].component && e == &level;
                        units[c].push((e.clone(), co));
                    }
                }
            }
            for (c, mut terms) in units.into_iter().enumerate() {
                if terms.is_empty() {
                    continue;
                }
                terms.push((Q::zero(), Coeff::one()));
                let u = Series::new(terms, None);
                for &p in &cols[c].points {
                    d.points[p] = d.points[p].mul(&u).truncate_rel(&trunc);
                }
            }
        }
        if touched {
            separate(&mut d, &layout, &cols, &comp_cols, &a, &level, &mut rng)?;
        }
    }
    d.trace = trace;
    set_translation(&mut d)?;
    Ok(d)
}

/// Cluster units only; needs the circuit slopes to span.
pub fn solve_units_ordinary(d: &TateData) -> Result<TateData, LiftError> {
    solve_units(d, false)
}

/// Cluster and component units, level by level along the jumps of the
/// slope span; needs the curve to be well spaced.
pub fn solve_units_superabundant(d: &TateData) -> Result<TateData, LiftError> {
    let layout = d.layout.as_ref().ok_or_else(|| LiftError::Certificate("solving needs the curve layout".into()))?;
    if layout.graph.is_ordinary(&layout.circuit) {
        return solve_units_ordinary(d);
    }
    let ws = layout.graph.well_spacedness(&layout.circuit);
    if let Some(f) = ws.witness {
        return Err(LiftError::NotWellSpaced(f.describe()));
    }
    solve_units(d, true)
}

/// Lifts a genus-one curve.
pub fn lift(c: &ZTCurve, trunc: &Q) -> Result<TateData, LiftError> {
    let d = build_initial(c, trunc)?;
    let layout = d.layout.as_ref().unwrap();
    if layout.graph.is_ordinary(&layout.circuit) {
        solve_units_ordinary(&d)
    } else {
        solve_units_superabundant(&d)
    }
}

// ---------------------------------------------------------------------------
// Slopes of the tropicalization
// ---------------------------------------------------------------------------

/// The part of the skeleton hanging from the spine disk `(0, radius)`.
#[derive(Clone, Debug)]
pub struct Stalk {
    pub radius: Q,
    pub span: SpanTree,
    /// Representatives at this radius, then `0` and `∞`.
    pub punctures: Vec<BTPoint>,
    /// Index into the representatives of each puncture before `0`.
    pub members: Vec<usize>,
    /// Tree vertex at the spine disk.
    pub spine: usize,
    /// Slope from `a` to `b` of each tree edge; `None` on the two spine edges.
    pub slopes: Vec<Option<Vec<i64>>>,
}

#[derive(Clone, Debug)]
pub struct Gimel {
    pub n: usize,
    pub ell: Q,
    pub reps: Vec<Series>,
    pub orders: Vec<Vec<i64>>,
    /// Ordered by radius.
    pub stalks: Vec<Stalk>,
    /// Slope of the spine from stalk `k` to stalk `k+1`; the last one wraps.
    pub circle: Vec<Vec<i64>>,
    pub circle_lengths: Vec<Q>,
}

impl Gimel {
    /// `Σ length · slope` around the spine circle.
    pub fn cycle_sum(&self) -> Vec<Q> {
        let mut s = vec![Q::zero(); self.n];
        for (sl, len) in self.circle.iter().zip(&self.circle_lengths) {
            for i in 0..self.n {
                s[i] += len * qi(sl[i]);
            }
        }
        s
    }

    /// Weighted slope sum at every vertex; all zero for a balanced map.
    pub fn tension(&self) -> Vec<Vec<i64>> {
        let m = self.stalks.len();
        let mut out = Vec::new();
        for (k, st) in self.stalks.iter().enumerate() {
            let adj = st.span.tree.adjacency();
            for v in 0..st.span.tree.vertices.len() {
                if !st.span.positions[v].is_lattice() {
                    continue;
                }
                let mut t = vec![0i64; self.n];
                for &e in &adj[v] {
                    if let Some(s) = &st.slopes[e] {
                        let sign = if st.span.tree.edges[e].a == v { 1 } else { -1 };
                        for i in 0..self.n {
                            t[i] += sign * s[i];
                        }
                    }
                }
                if v == st.spine {
                    let prev = (k + m - 1) % m;
                    for i in 0..self.n {
                        t[i] += self.circle[k][i] - self.circle[prev][i];
                    }
                }
                out.push(t);
            }
        }
        out
    }
}

fn build_stalk(r: &Q, members: Vec<usize>, reps: &[Series], orders: &[Vec<i64>], n: usize) -> Result<Stalk, LiftError> {
    let mut punctures: Vec<BTPoint> = members.iter().map(|&m| BTPoint::point(reps[m].clone())).collect();
    let k0 = punctures.len();
    punctures.push(BTPoint::point(Series::zero()));
    punctures.push(BTPoint::infinity());
    let span = span_tree(&punctures)?;
    let t = &span.tree;
    let adj = t.adjacency();
    let (v0, vinf) = (span.input_vertex[k0], span.input_vertex[k0 + 1]);
    let (e0, einf) = (adj[v0][0], adj[vinf][0]);
    let spine = t.other(e0, v0);
    if t.other(einf, vinf) != spine {
        return Err(BtError::InvalidTree("stalk does not meet the spine at one vertex".into()).into());
    }
    let mut label: Vec<Option<usize>> = vec![None; t.vertices.len()];
    for (i, &m) in members.iter().enumerate() {
        label[span.input_vertex[i]] = Some(m);
    }
    // Root at the spine; each edge's slope is the order sum beyond it.
    let mut parent_edge = vec![usize::MAX; t.vertices.len()];
    let mut order = vec![spine];
    let mut seen = vec![false; t.vertices.len()];
    seen[spine] = true;
    let mut i = 0;
    while i < order.len() {
        let v = order[i];
        i += 1;
        for &e in &adj[v] {
            if e == e0 || e == einf {
                continue;
            }
            let w = t.other(e, v);
            if !seen[w] {
                seen[w] = true;
                parent_edge[w] = e;
                order.push(w);
            }
        }
    }
    let mut below = vec![vec![0i64; n]; t.vertices.len()];
    for &v in order.iter().rev() {
        if let Some(m) = label[v] {
            for j in 0..n {
                below[v][j] += orders[m][j];
            }
        }
        if v != spine {
            let e = parent_edge[v];
            let p = t.other(e, v);
            let add = below[v].clone();
            for j in 0..n {
                below[p][j] += add[j];
            }
        }
    }
    let mut slopes = vec![None; t.edges.len()];
    for &v in &order[1..] {
        let e = parent_edge[v];
        let s: Vec<i64> = if t.edges[e].b == v { below[v].clone() } else { below[v].iter().map(|x| -x).collect() };
        slopes[e] = Some(s);
    }
    Ok(Stalk { radius: r.clone(), span, punctures, members, spine, slopes })
}

/// Slopes of `Trop φ` on the skeleton of `E_q` minus `Z`.
pub fn compute_slopes(d: &TateData) -> Result<Gimel, LiftError> {
    for i in 0..d.n {
        if d.zplus[i].len() != d.zminus[i].len() {
            return Err(LiftError::Unbalanced(i));
        }
    }
    let ell = d.ell()?;
    let (reps, orders) = d.normalized()?;
    if reps.is_empty() {
        return Err(LiftError::Unsupported("a map without zeros or poles".into()));
    }
    let mut radii: BTreeMap<Q, Vec<usize>> = BTreeMap::new();
    for (k, r) in reps.iter().enumerate() {
        radii.entry(finite_val(r)?).or_default().push(k);
    }
    let stalks = radii
        .iter()
        .map(|(r, m)| build_stalk(r, m.clone(), &reps, &orders, d.n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut vals: Vec<(Vec<Q>, Vec<Q>)> = vec![(vec![], vec![]); d.n];
    let mut vmax = Q::zero();
    for i in 0..d.n {
        for e in &d.zplus[i] {
            let v = finite_val(&d.value(e))?;
            vmax = vmax.max(v.abs());
            vals[i].0.push(v);
        }
        for e in &d.zminus[i] {
            let v = finite_val(&d.value(e))?;
            vmax = vmax.max(v.abs());
            vals[i].1.push(v);
        }
    }
    let big = ceil_i64(&((&vmax + &ell) / &ell)) + 1;
    let above = |i: usize, x: &Q| -> i64 {
        vals[i].0.iter().filter(|v| *v > x).count() as i64 - vals[i].1.iter().filter(|v| *v > x).count() as i64
    };
    let rs: Vec<Q> = radii.keys().cloned().collect();
    let mut circle = Vec::new();
    let mut circle_lengths = Vec::new();
    for k in 0..rs.len() {
        let lo = rs[k].clone();
        let hi = if k + 1 < rs.len() { rs[k + 1].clone() } else { &rs[0] + &ell };
        let m = (&lo + &hi) / qi(2);
        let mut s = vec![0i64; d.n];
        for (i, si) in s.iter_mut().enumerate() {
            for j in [-big, big] {
                if above(i, &(&m + &ell * qi(j))) != 0 {
                    return Err(LiftError::Unbalanced(i));
                }
            }
            *si = (-big..=big).map(|j| above(i, &(&m + &ell * qi(j)))).sum();
        }
        circle.push(s);
        circle_lengths.push(hi - lo);
    }
    Ok(Gimel { n: d.n, ell, reps, orders, stalks, circle, circle_lengths })
}

// ---------------------------------------------------------------------------
// Forward tropicalization
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GimelImage {
    pub gimel: Gimel,
    pub spine_coords: Vec<Vec<Q>>,
    /// Image of every lattice vertex of each stalk tree.
    pub stalk_coords: Vec<Vec<Option<Vec<Q>>>>,
    pub graph: EmbeddedGraph,
}

/// The embedded graph `Trop φ(Γ)` with its vertex positions.
pub fn forward_trop_gimel(d: &TateData) -> Result<GimelImage, LiftError> {
    let gimel = compute_slopes(d)?;
    let n = d.n;
    let sum = gimel.cycle_sum();
    if sum.iter().any(|x| !x.is_zero()) {
        return Err(LiftError::CycleDoesNotClose(sum.iter().map(fmt_q).collect::<Vec<_>>().join(", ")));
    }
    let u0 = spine_probe(&gimel.reps, &gimel.stalks[0].radius);
    let mut spine_coords = vec![d.phi_valuation(&u0)?];
    for k in 0..gimel.stalks.len() - 1 {
        let next: Vec<Q> = (0..n).map(|i| &spine_coords[k][i] + &gimel.circle_lengths[k] * qi(gimel.circle[k][i])).collect();
        spine_coords.push(next);
    }
    let mut graph = EmbeddedGraph::new(n);
    let spine_ids: Vec<usize> = spine_coords.iter().map(|x| graph.add_vertex(x.clone())).collect();
    let m = spine_ids.len();
    for k in 0..m {
        graph.add_segment(spine_ids[k], spine_ids[(k + 1) % m], gimel.circle[k].clone());
    }
    let mut stalk_coords = Vec::new();
    for (k, st) in gimel.stalks.iter().enumerate() {
        let t = &st.span.tree;
        let adj = t.adjacency();
        let mut coords: Vec<Option<Vec<Q>>> = vec![None; t.vertices.len()];
        let mut ids = vec![usize::MAX; t.vertices.len()];
        coords[st.spine] = Some(spine_coords[k].clone());
        ids[st.spine] = spine_ids[k];
        let mut queue = VecDeque::from([st.spine]);
        while let Some(v) = queue.pop_front() {
            let xv = coords[v].clone().unwrap();
            for &e in &adj[v] {
                let Some(s) = &st.slopes[e] else { continue };
                let ed = &t.edges[e];
                let w = t.other(e, v);
                if coords[w].is_some() {
                    continue;
                }
                let out: Vec<i64> = if ed.a == v { s.clone() } else { s.iter().map(|x| -x).collect() };
                match &ed.length {
                    Length::Finite(l) => {
                        let xw: Vec<Q> = (0..n).map(|i| &xv[i] + l * qi(out[i])).collect();
                        ids[w] = graph.add_vertex(xw.clone());
                        graph.add_segment(ids[v], ids[w], out);
                        coords[w] = Some(xw);
                        queue.push_back(w);
                    }
                    Length::Infinite => graph.add_ray(ids[v], out),
                }
            }
        }
        stalk_coords.push(coords);
    }
    Ok(GimelImage { gimel, spine_coords, stalk_coords, graph })
}

impl GimelImage {
    fn normalize(&self, d: &TateData, u: &Series) -> Result<(Series, Q), LiftError> {
        let ell = &self.gimel.ell;
        let vu = finite_val(u)?;
        let f = floor_i64(&(&vu / ell));
        let r = &vu - ell * qi(f);
        Ok((if f == 0 { u.clone() } else { u.mul(&q_pow(&d.q, -f)) }, r))
    }

    /// `Trop φ(u)` read off the slopes at the retraction of `u`.
    pub fn value_at(&self, d: &TateData, u: &Series) -> Result<Vec<Q>, LiftError> {
        let n = d.n;
        let (u1, r) = self.normalize(d, u)?;
        let stalks = &self.gimel.stalks;
        match stalks.binary_search_by(|s| s.radius.cmp(&r)) {
            Ok(k) => {
                let st = &stalks[k];
                let at = st.span.attach(&P1Point::Finite(u1), &st.punctures)?;
                let coords = &self.stalk_coords[k];
                if let Some(v) = at.vertex {
                    if let Some(x) = &coords[v] {
                        return Ok(x.clone());
                    }
                }
                let Some((e, off)) = at.edge else {
                    return Err(BtError::InsufficientPrecision.into());
                };
                let ed = &st.span.tree.edges[e];
                let s = st.slopes[e].as_ref().ok_or(BtError::InsufficientPrecision)?;
                match (&coords[ed.a], &coords[ed.b]) {
                    (Some(xa), _) => Ok((0..n).map(|i| &xa[i] + &off * qi(s[i])).collect()),
                    (None, Some(xb)) => {
                        let from_b = match &ed.length {
                            Length::Finite(l) => l - &off,
                            Length::Infinite => -off.clone(),
                        };
                        Ok((0..n).map(|i| &xb[i] - &from_b * qi(s[i])).collect())
                    }
                    (None, None) => Err(BtError::InsufficientPrecision.into()),
                }
            }
            Err(pos) => {
                let m = stalks.len();
                let (k, off) = if pos == 0 {
                    (m - 1, &r + &self.gimel.ell - &stalks[m - 1].radius)
                } else {
                    (pos - 1, &r - &stalks[pos - 1].radius)
                };
                Ok((0..n).map(|i| &self.spine_coords[k][i] + &off * qi(self.gimel.circle[k][i])).collect())
            }
        }
    }

    /// A random probe on a stalk or on the spine circle, moved by `q^j`
    /// for a random `j ∈ {-1, 0, 1}`.
    pub fn random_probe(&self, d: &TateData, rng: &mut ChaCha8Rng) -> Series {
        let g = &self.gimel;
        let m = g.stalks.len();
        loop {
            let k = rng.gen_range(0..2 * m);
            let u = if k < m {
                let s = Q::new(rng.gen_range(1..=7).into(), 8.into());
                let r = &g.stalks[k].radius + s * &g.circle_lengths[k];
                Series::monomial(Coeff::from_int(rng.gen_range(1..=40)), r)
            } else {
                let st = &g.stalks[k - m];
                let pts: Vec<P1Point> = st
                    .punctures
                    .iter()
                    .filter_map(|p| match p {
                        BTPoint::P1(x @ P1Point::Finite(_)) => Some(x.clone()),
                        _ => None,
                    })
                    .collect();
                match random_probe_in(&st.span, &pts, rng) {
                    P1Point::Finite(s) => s,
                    P1Point::Infinity => continue,
                }
            };
            let Ok((u1, _)) = self.normalize(d, &u) else { continue };
            if g.reps.contains(&u1) {
                continue;
            }
            let j = rng.gen_range(-1..=1);
            return if j == 0 { u } else { u.mul(&q_pow(&d.q, j)) };
        }
    }
}

fn q_diff(a: &[Q], b: &[Q]) -> Vec<Q> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Compares `v(φ(u1)) - v(φ(u2))` from theta series against the slopes.
pub fn sample_check_tate(d: &TateData, img: &GimelImage, u1: &Series, u2: &Series) -> Result<SampleRow, LiftError> {
    let rel = qi(SAMPLE_REL);
    let val = |u: &Series| -> Result<Vec<Q>, LiftError> {
        d.evaluate_rel(u, &rel)?.iter().map(finite_val).collect()
    };
    let lhs = q_diff(&val(u1)?, &val(u2)?);
    let rhs = q_diff(&img.value_at(d, u1)?, &img.value_at(d, u2)?);
    Ok(SampleRow {
        u1: u1.to_string(),
        u2: u2.to_string(),
        ok: lhs == rhs,
        lhs: lhs.iter().map(fmt_q).collect(),
        rhs: rhs.iter().map(fmt_q).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub graph_equal: bool,
    pub degree_equal: bool,
    pub product_one: bool,
    pub residuals: Vec<String>,
    pub samples: Vec<SampleRow>,
    pub verified: bool,
}

/// Graph equality, degree, `Π Z^+ = Π Z^-` and `probes` sample pairs.
pub fn verify(d: &TateData, c: &ZTCurve, probes: usize, rng: &mut ChaCha8Rng) -> Result<VerifyReport, LiftError> {
    let g = c.graph()?;
    let residuals: Vec<String> =
        d.residual_valuations()?.iter().map(|r| r.as_ref().map_or("inf".to_string(), fmt_q)).collect();
    let product_one = residuals.iter().all(|r| r == "inf");
    let img = forward_trop_gimel(d)?;
    let graph_equal = img.graph.canonical() == g.embedded().canonical();
    let degree_equal = d.map_degree()? == g.degree();
    let mut samples = Vec::new();
    for _ in 0..probes {
        let u1 = img.random_probe(d, rng);
        let u2 = img.random_probe(d, rng);
        samples.push(sample_check_tate(d, &img, &u1, &u2)?);
    }
    let verified = graph_equal && degree_equal && product_one && samples.iter().all(|s| s.ok);
    Ok(VerifyReport { graph_equal, degree_equal, product_one, residuals, samples, verified })
}

// ---------------------------------------------------------------------------
// Necessity of well-spacedness
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct FlatReport {
    pub flat: String,
    pub well_spaced: bool,
    /// Distance `R` of the closest boundary vertex, when it is unique.
    pub level: Option<String>,
    pub vertex: Option<String>,
    pub lambda: Vec<i64>,
    /// `v(Π_{P_L} p^{<λ,c_p>} - 1)` over the points beyond that vertex.
    pub left: Option<String>,
    /// The same quantity for the remaining points.
    pub right: Option<String>,
    pub obstruction: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NecessityReport {
    pub v_q: String,
    pub v_j: String,
    pub trivalent: bool,
    pub injective: bool,
    /// An obstruction proves non-liftability only when both hold.
    pub hypotheses_hold: bool,
    pub flats: Vec<FlatReport>,
}

fn residual_string(s: &Series, trunc: &Q) -> Option<Q> {
    residual_of(s, trunc)
}

/// Evaluates the obstruction of each flat on the (unsolved or solved) data.
pub fn necessity_check(d: &TateData) -> Result<NecessityReport, LiftError> {
    let layout = d.layout.as_ref().ok_or_else(|| LiftError::Certificate("the check needs the curve layout".into()))?;
    let g = &layout.graph;
    let circ = &layout.circuit;
    let ell = d.ell()?;
    let trivalent = g.internal().all(|v| g.adj[v].len() == 3);
    let injective = g.embedded().is_embedding();
    let trunc = &d.trunc;
    let orders = d.orders();
    let w = d.ratios(trunc)?;
    let mut flats = Vec::new();
    for f in g.hyperplane_classes(circ) {
        let fc = g.check_flat(circ, &f);
        let mut row = FlatReport {
            flat: f.describe(),
            well_spaced: fc.well_spaced,
            level: None,
            vertex: None,
            lambda: vec![],
            left: None,
            right: None,
            obstruction: false,
        };
        if fc.min_count != 1 {
            flats.push(row);
            continue;
        }
        let r = fc.min.clone().unwrap();
        let x = fc.boundary.iter().find(|(_, dv)| dv == &r).unwrap().0;
        let (vs, es) = g.delta(circ, &f);
        let leaving: Vec<usize> =
            vs.iter().flat_map(|&v| g.adj[v].iter().copied()).filter(|e| !es.contains(e)).collect();
        let ann = nullspace(&f.basis, g.n);
        let mut lambda = vec![0i64; g.n];
        for scale in 2..64i64 {
            let mut v = vec![Q::zero(); g.n];
            let mut c = Q::one();
            for b in &ann {
                for (x, y) in v.iter_mut().zip(b) {
                    *x += &c * y;
                }
                c *= qi(scale);
            }
            let den = v.iter().fold(num_bigint::BigInt::one(), |l, x| num_integer::lcm(l, x.denom().clone()));
            let lam: Vec<i64> = v.iter().map(|x| (x * Q::from_integer(den.clone())).to_integer().to_i64().unwrap_or(0)).collect();
            let ok = leaving.iter().all(|&e| g.edges[e].sigma.iter().zip(&lam).map(|(s, l)| s * l).sum::<i64>() != 0);
            lambda = lam;
            if ok {
                break;
            }
        }
        let outside: Vec<usize> = g.adj[x].iter().copied().filter(|e| !es.contains(e)).collect();
        let mut pl: Vec<usize> = outside.iter().flat_map(|&e| points_beyond(layout, e, x)).collect();
        pl.sort_unstable();
        pl.dedup();
        let weight = |p: usize| -> i64 { orders[p].iter().zip(&lambda).map(|(c, l)| c * l).sum() };
        let mut left = Series::one();
        for &p in &pl {
            let k = weight(p);
            if k != 0 {
                left = left.mul(&d.points[p].pow(k, trunc)?).truncate_rel(trunc);
            }
        }
        let mut total = Series::one();
        for (i, wi) in w.iter().enumerate() {
            if lambda[i] != 0 {
                total = total.mul(&wi.pow(lambda[i], trunc)?).truncate_rel(trunc);
            }
        }
        let right = total.mul(&left.inv(trunc)?).truncate_rel(trunc);
        let lv = residual_string(&left, trunc);
        let rv = residual_string(&right, trunc);
        row.obstruction = lv.as_ref() == Some(&r) && rv.as_ref().map_or(true, |v| v > &r);
        row.level = Some(fmt_q(&r));
        row.vertex = Some(g.verts[x].ids[0].clone());
        row.lambda = lambda;
        row.left = Some(lv.as_ref().map_or("inf".to_string(), fmt_q));
        row.right = Some(rv.as_ref().map_or("inf".to_string(), fmt_q));
        flats.push(row);
    }
    Ok(NecessityReport {
        v_q: fmt_q(&ell),
        v_j: fmt_q(&-ell.clone()),
        trivalent,
        injective,
        hypotheses_hold: trivalent && injective,
        flats,
    })
}
