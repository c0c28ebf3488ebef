//! One pass/fail line per acceptance criterion, with timings.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{load, random_genus0, random_ordinary_genus1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use troplift::btree::{span_tree, BTPoint, Length, SpanTree};
use troplift::liftone::{self, compute_slopes, forward_trop_gimel, necessity_check, theta, Element, LiftError, TateData};
use troplift::liftzero::{self, forward_trop, RationalMapData};
use troplift::puiseux::{cross_ratio_valuation, q, qi, val_diff, Coeff, P1Point, Series, Valuation, Q};
use troplift::ztcurve::ZTCurve;

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn s(terms: &[(i64, i64, i64)]) -> P1Point {
    P1Point::Finite(Series::from_ints(terms))
}

fn map_from_lists(n: usize, plus: &[Vec<P1Point>], minus: &[Vec<P1Point>]) -> RationalMapData {
    let mut points: Vec<P1Point> = Vec::new();
    let mut idx = |p: &P1Point| match points.iter().position(|x| x == p) {
        Some(k) => k,
        None => {
            points.push(p.clone());
            points.len() - 1
        }
    };
    let zplus = plus.iter().map(|l| l.iter().map(&mut idx).collect()).collect();
    let zminus = minus.iter().map(|l| l.iter().map(&mut idx).collect()).collect();
    RationalMapData {
        n,
        points,
        zplus,
        zminus,
        leaf_points: vec![],
        translation: vec![qi(0); n],
        trunc: qi(24),
        realization: None,
    }
}

fn pattern(points: &[P1Point]) -> Vec<Vec<Option<Q>>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| match (a, b) {
                    (P1Point::Finite(x), P1Point::Finite(y)) => val_diff(x, y).finite().cloned(),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

fn example_one() -> Check {
    let c = load("example1.json");
    let d = liftzero::lift(&c, &qi(24)).map_err(|e| e.to_string())?;
    let img = forward_trop(&d).map_err(|e| e.to_string())?;
    ensure(img.graph.canonical() == c.graph().unwrap().embedded().canonical(), "forward trop differs")?;
    let ours: Vec<P1Point> = d.leaf_points.iter().map(|&(_, k)| d.points[k].clone()).collect();
    let expected = vec![s(&[]), s(&[(1, 1, 1)]), s(&[(0, 1, 1)]), s(&[(-1, 1, 1)])];
    ensure(pattern(&ours) == pattern(&expected), "valuation pattern differs from {0, t, 1, 1/t}")
}

fn example_two() -> Check {
    let c = load("example2.json");
    let d = liftzero::lift(&c, &qi(24)).map_err(|e| e.to_string())?;
    let pts: Vec<P1Point> = (1..=4).map(|k| s(&[(0, 1, k)])).collect();
    let names = |l: &[usize]| {
        let mut v: Vec<usize> =
            l.iter().map(|&k| pts.iter().position(|p| *p == d.points[k]).map_or(0, |i| i + 1)).collect();
        v.sort();
        v
    };
    ensure(names(&d.zminus[2]) == vec![3, 3, 4, 4, 4, 4, 4], "Z_3^- multiplicities")?;
    ensure(names(&d.zplus[0]) == vec![1, 2, 2, 2, 2, 2, 4], "Z_1^+ multiplicities")?;
    let mut deg = d.map_degree();
    deg.sort();
    ensure(deg == vec![vec![-7, 1, -2], vec![1, 0, -5], vec![1, 2, 3], vec![5, -3, 4]], format!("degree {deg:?}"))?;
    let img = forward_trop(&d).map_err(|e| e.to_string())?;
    ensure(img.graph.canonical() == c.graph().unwrap().embedded().canonical(), "forward trop differs")
}

fn unfolded() -> Check {
    let build = |prime: bool| {
        let one = s(&[(0, 1, 1)]);
        let m1 = s(&[(0, 1, -1)]);
        let mtinv = s(&[(-1, 1, -1)]);
        let third = if prime { s(&[(-1, 1, 2)]) } else { s(&[(-1, 1, 1)]) };
        map_from_lists(
            3,
            &[vec![m1.clone(), m1.clone()], vec![mtinv.clone(), mtinv.clone()], vec![one, third]],
            &[vec![s(&[]), mtinv.clone()], vec![m1.clone()], vec![m1, mtinv]],
        )
    };
    let d = build(false);
    let target = vec![qi(0), qi(-2), qi(0)];
    for u in [s(&[(1, 1, 3)]), s(&[(-2, 1, 5)])] {
        ensure(d.phi_valuation(&u).map_err(|e| e.to_string())? == target, "probe valuation")?;
    }
    let a = forward_trop(&d).map_err(|e| e.to_string())?;
    let b = forward_trop(&build(true)).map_err(|e| e.to_string())?;
    ensure(a.graph.canonical() == b.graph.canonical(), "phi and phi' images differ")
}

fn t(e: i64) -> Series {
    Series::t_pow(qi(e))
}

fn square() -> Check {
    let c = load("square.json");
    let d = liftone::build_initial(&c, &qi(24)).map_err(|e| e.to_string())?;
    ensure(d.q == t(4), "q != t^4")?;
    let vals = |l: &[Element]| {
        let mut v: Vec<Series> = l.iter().map(|e| d.value(e)).collect();
        v.sort_by(|a, b| a.canonical_cmp(b));
        v
    };
    let sorted = |mut v: Vec<Series>| {
        v.sort_by(|a, b| a.canonical_cmp(b));
        v
    };
    ensure(vals(&d.zplus[0]) == sorted(vec![t(4), t(1)]), "Z_1^+")?;
    ensure(vals(&d.zminus[0]) == sorted(vec![t(2), t(3)]), "Z_1^-")?;
    ensure(vals(&d.zplus[1]) == sorted(vec![t(0), t(3)]), "Z_2^+")?;
    ensure(vals(&d.zminus[1]) == sorted(vec![t(1), t(2)]), "Z_2^-")?;
    let res = d.residual_valuations().map_err(|e| e.to_string())?;
    ensure(res.iter().all(Option::is_none), format!("v(w - 1) = {res:?}"))?;
    let lifted = liftone::lift(&c, &qi(24)).map_err(|e| e.to_string())?;
    ensure(lifted.points == d.points, "solver perturbed the points")?;
    let img = forward_trop_gimel(&lifted).map_err(|e| e.to_string())?;
    ensure(img.graph.canonical() == c.graph().unwrap().embedded().canonical(), "forward trop differs")?;
    let nec = necessity_check(&lifted).map_err(|e| e.to_string())?;
    ensure(nec.v_j == "-4", format!("v(j) = {}", nec.v_j))
}

fn genus_zero_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e05);
    for case in 0..100 {
        let c = random_genus0(&mut rng, 1 + case % 4, 10);
        let d = liftzero::lift(&c, &qi(24)).map_err(|e| format!("case {case}: {e}"))?;
        let rep = liftzero::verify(&d, &c, 20, &mut rng).map_err(|e| format!("case {case}: {e}"))?;
        ensure(rep.verified, format!("case {case} not verified"))?;
    }
    Ok(())
}

fn genus_one_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e1);
    let mut probes = ChaCha8Rng::seed_from_u64(0x6e1 + 1);
    for case in 0..50 {
        let c = random_ordinary_genus1(&mut rng, 2 + case % 2);
        let d0 = liftone::build_initial(&c, &qi(24)).map_err(|e| format!("case {case}: {e}"))?;
        let d = liftone::solve_units_ordinary(&d0).map_err(|e| format!("case {case}: {e}"))?;
        ensure(d.trace.last() == Some(&qi(24)), format!("case {case}: residuals stop at {:?}", d.trace.last()))?;
        let rep = liftone::verify(&d, &c, 10, &mut probes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(rep.verified, format!("case {case} not verified: {rep:?}"))?;
    }
    Ok(())
}

fn superabundant_pair() -> Check {
    let ws2 = load("ws2.json");
    let d = liftone::lift(&ws2, &qi(24)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    ensure(liftone::verify(&d, &ws2, 10, &mut rng).map_err(|e| e.to_string())?.verified, "WS2 not verified")?;
    let nws2 = load("nws2.json");
    let d = liftone::build_initial(&nws2, &qi(24)).map_err(|e| e.to_string())?;
    match liftone::solve_units_superabundant(&d) {
        Err(LiftError::NotWellSpaced(_)) => {}
        other => return Err(format!("NWS2: expected NotWellSpaced, got {:?}", other.map(|_| ()))),
    }
    let nec = necessity_check(&d).map_err(|e| e.to_string())?;
    let row = nec.flats.iter().find(|f| f.obstruction).ok_or("no obstruction reported")?;
    ensure(row.level.as_deref() == Some("0"), format!("obstruction at level {:?}", row.level))
}

/// Paths between leaves of a span tree, as edge sets.
fn path_edges(st: &SpanTree, a: usize, b: usize) -> Vec<usize> {
    let t = &st.tree;
    let adj = t.adjacency();
    let (from, to) = (st.input_vertex[a], st.input_vertex[b]);
    let mut prev: Vec<Option<usize>> = vec![None; t.vertices.len()];
    let mut seen = vec![false; t.vertices.len()];
    let mut queue = std::collections::VecDeque::from([from]);
    seen[from] = true;
    while let Some(v) = queue.pop_front() {
        for &e in &adj[v] {
            let w = t.other(e, v);
            if !seen[w] {
                seen[w] = true;
                prev[w] = Some(e);
                queue.push_back(w);
            }
        }
    }
    let mut out = Vec::new();
    let mut v = to;
    while let Some(e) = prev[v] {
        out.push(e);
        v = t.other(e, v);
    }
    out
}

fn overlap(st: &SpanTree, p1: &[usize], p2: &[usize]) -> Q {
    p1.iter()
        .filter(|e| p2.contains(e))
        .map(|&e| match &st.tree.edges[e].length {
            Length::Finite(l) => l.clone(),
            Length::Infinite => panic!("distinct leaves never share an infinite edge"),
        })
        .sum()
}

fn random_point(rng: &mut ChaCha8Rng) -> P1Point {
    if rng.gen_bool(0.1) {
        return P1Point::Infinity;
    }
    let mut terms = Vec::new();
    let mut e = rng.gen_range(-2..=1);
    for _ in 0..rng.gen_range(1..=3) {
        terms.push((e, 1, rng.gen_range(-2..=2)));
        e += rng.gen_range(1..=2);
    }
    s(&terms)
}

fn cross_ratio_oracle(rng: &mut ChaCha8Rng) -> Check {
    let mut splits = [0usize; 2];
    let mut done = 0;
    while done < 1000 {
        let pts: Vec<P1Point> = (0..4).map(|_| random_point(rng)).collect();
        let bt: Vec<BTPoint> = pts.iter().cloned().map(BTPoint::P1).collect();
        let Ok(st) = span_tree(&bt) else { continue };
        let (vc, _) = match cross_ratio_valuation(&pts[0], &pts[1], &pts[2], &pts[3]) {
            Ok(x) => x,
            Err(_) => continue,
        };
        // c(w,x:y,z) has valuation ovl([w,z],[x,y]) - ovl([w,y],[x,z]).
        let a = overlap(&st, &path_edges(&st, 0, 3), &path_edges(&st, 1, 2));
        let b = overlap(&st, &path_edges(&st, 0, 2), &path_edges(&st, 1, 3));
        ensure(vc == &a - &b, format!("cross ratio {vc} vs tree {}", &a - &b))?;
        if a > qi(0) || b > qi(0) {
            splits[(b > qi(0)) as usize] += 1;
        }
        done += 1;
    }
    ensure(splits[0] > 0 && splits[1] > 0, format!("only one topology sampled: {splits:?}"))
}

fn random_series(rng: &mut ChaCha8Rng, v: Q) -> Series {
    let mut terms = vec![(v.clone(), Coeff::from_int(rng.gen_range(1..=5)))];
    for k in 1..=2 {
        terms.push((&v + q(k * rng.gen_range(1..=3), 2), Coeff::from_int(rng.gen_range(-3..=3))));
    }
    Series::new(terms, None)
}

fn theta_oracle(rng: &mut ChaCha8Rng) -> Check {
    let rel = qi(24);
    for _ in 0..200 {
        let ell = q(rng.gen_range(1..=6), rng.gen_range(1..=2));
        let qq = Series::t_pow(ell.clone());
        let (vz, vu) = (q(rng.gen_range(-6..=6), 2), q(rng.gen_range(-6..=6), 3));
        let z = random_series(rng, vz);
        let u = random_series(rng, vu);
        let (a, b) = match (theta(&z, &u, &qq, &rel), theta(&z, &u.mul(&qq), &qq, &rel)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(LiftError::EvaluationAtZeroOrPole), _) | (_, Err(LiftError::EvaluationAtZeroOrPole)) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e.to_string()),
        };
        // Θ_z(qu) = -(z/u) Θ_z(u).
        let lhs = b.mul(&u).add(&a.mul(&z));
        ensure(!matches!(lhs.valuation(), Valuation::Finite(_)), "functional equation fails below trunc")?;
    }
    Ok(())
}

/// Random balanced data with `v(w_i) = 0`.
fn random_tate(rng: &mut ChaCha8Rng) -> TateData {
    let n = rng.gen_range(1..=3);
    let ell = qi(rng.gen_range(2..=6));
    let qq = Series::t_pow(ell.clone());
    let k = rng.gen_range(2..=5);
    let mut points: Vec<Series> = Vec::new();
    while points.len() < k + n {
        let v = q(rng.gen_range(0..ell.to_integer().try_into().unwrap_or(2) * 2), 2);
        let p = random_series(rng, v);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let mut zplus = vec![vec![]; n];
    let mut zminus = vec![vec![]; n];
    for i in 0..n {
        let m = rng.gen_range(1..=3);
        for _ in 0..m {
            zplus[i].push(Element { point: rng.gen_range(0..k), shift: rng.gen_range(-1..=1) });
            zminus[i].push(Element { point: rng.gen_range(0..k), shift: rng.gen_range(-1..=1) });
        }
        // Fix the valuation of the last pole so the products balance.
        let val = |l: &[Element]| -> Q {
            l.iter().map(|e| points[e.point].valuation().finite().unwrap() + &ell * qi(e.shift)).sum()
        };
        zminus[i].pop();
        let need = val(&zplus[i]) - val(&zminus[i]);
        let f = (&need / &ell).floor();
        let r = &need - &ell * &f;
        points[k + i] = Series::t_pow(r).add(&Series::t_pow(&need - &ell * &f + qi(1)));
        zminus[i].push(Element { point: k + i, shift: f.to_integer().try_into().unwrap() });
    }
    TateData {
        n,
        q: qq,
        points,
        zplus,
        zminus,
        clusters: vec![],
        qshifts: vec![],
        translation: vec![qi(0); n],
        trunc: qi(24),
        trace: vec![],
        layout: None,
    }
}

fn slope_oracles(rng: &mut ChaCha8Rng) -> Check {
    let mut done = 0;
    while done < 100 {
        let d = random_tate(rng);
        let g = match compute_slopes(&d) {
            Ok(g) => g,
            Err(e) => return Err(e.to_string()),
        };
        ensure(g.tension().iter().all(|v| v.iter().all(|&x| x == 0)), "nonzero tension")?;
        ensure(g.cycle_sum().iter().all(|x| *x == qi(0)), format!("cycle sum {:?}", g.cycle_sum()))?;
        done += 1;
    }
    Ok(())
}

fn degree_sums(files: &[&str]) -> Check {
    for f in files {
        let c: ZTCurve = load(f);
        if !c.validate().valid {
            continue;
        }
        let n = c.lattice_rank;
        let mut total = vec![0i64; n];
        for v in c.graph().map_err(|e| e.to_string())?.degree() {
            for i in 0..n {
                total[i] += v[i];
            }
        }
        ensure(total.iter().all(|&x| x == 0), format!("{f}: degree sums to {total:?}"))?;
    }
    Ok(())
}

fn oracle_suites() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    cross_ratio_oracle(&mut rng)?;
    theta_oracle(&mut rng)?;
    slope_oracles(&mut rng)?;
    degree_sums(&["example1.json", "example2.json", "square.json", "ws2.json", "nws2.json", "line.json", "genus2.json"])
}

fn determinism() -> Check {
    let run0 = || {
        let d = liftzero::lift(&load("example2.json"), &qi(24)).unwrap();
        serde_json::to_string(&d.certificate(true)).unwrap()
    };
    ensure(run0() == run0(), "genus-0 certificates differ")?;
    for name in ["square.json", "ws2.json"] {
        let run1 = || {
            let d = liftone::lift(&load(name), &qi(24)).unwrap();
            serde_json::to_string(&d.certificate(true).unwrap()).unwrap()
        };
        ensure(run1() == run1(), format!("{name}: certificates differ"))?;
    }
    let mut a = ChaCha8Rng::seed_from_u64(99);
    let mut b = ChaCha8Rng::seed_from_u64(99);
    let (ca, cb) = (random_ordinary_genus1(&mut a, 3), random_ordinary_genus1(&mut b, 3));
    let da = liftone::lift(&ca, &qi(24)).unwrap();
    let db = liftone::lift(&cb, &qi(24)).unwrap();
    ensure(da.certificate(true).unwrap() == db.certificate(true).unwrap(), "seeded random certificates differ")
}

/// One line per criterion; runs without the test harness so the lines are
/// never captured.
fn main() {
    let criteria: Vec<(&str, fn() -> Check, Option<Duration>)> = vec![
        ("Example 1", example_one, Some(Duration::from_secs(1))),
        ("Example 2", example_two, None),
        ("Unfolded example", unfolded, Some(Duration::from_secs(1))),
        ("Square example", square, None),
        ("Genus-0 suite (100 curves)", genus_zero_suite, Some(Duration::from_secs(60))),
        ("Genus-1 ordinary suite (50 curves, trunc 24)", genus_one_suite, Some(Duration::from_secs(120))),
        ("Superabundant WS2/NWS2 pair", superabundant_pair, None),
        ("Oracle suites", oracle_suites, None),
        ("Determinism", determinism, None),
    ];
    // `TROPLIFT_ONLY=5` runs a single criterion.
    let only: Option<usize> = std::env::var("TROPLIFT_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = Vec::new();
    for (k, (name, f, budget)) in criteria.into_iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let res = match (res, budget) {
            (Ok(()), Some(b)) if took > b => Err(format!("took {:.2}s, budget {}s", took.as_secs_f64(), b.as_secs())),
            (r, _) => r,
        };
        match &res {
            Ok(()) => println!("[PASS] {} {name} ({:.2}s)", k + 1, took.as_secs_f64()),
            Err(e) => {
                println!("[FAIL] {} {name} ({:.2}s): {e}", k + 1, took.as_secs_f64());
                failed.push(k + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
