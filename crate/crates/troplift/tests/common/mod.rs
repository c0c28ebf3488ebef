//! Seeded random zero-tension curves shared by the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use troplift::puiseux::{q, qi, Q};
use troplift::ztcurve::ZTCurve;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn load(name: &str) -> ZTCurve {
    ZTCurve::from_path(&data(name)).expect("data file parses")
}

fn gcd_vec(v: &[i64]) -> i64 {
    v.iter().fold(0i64, |g, &x| num_integer::gcd(g, x))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, bound: i64) -> Vec<i64> {
    loop {
        let v: Vec<i64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        if v.iter().any(|&x| x != 0) {
            return v;
        }
    }
}

fn random_length(rng: &mut ChaCha8Rng) -> Q {
    q(rng.gen_range(1..=6), rng.gen_range(1..=3))
}

/// Adds an edge from `from` with weighted slope `sigma` (split into a
/// primitive direction and multiplicity).
fn push_edge(c: &mut ZTCurve, from: usize, to: Option<usize>, sigma: &[i64], length: Q) -> usize {
    let g = gcd_vec(sigma);
    let dir: Vec<i64> = sigma.iter().map(|x| x / g).collect();
    match to {
        Some(to) => c.add_edge(from, to, dir, g as u64, length),
        None => c.add_ray(from, dir, g as u64),
    }
}

enum Cluster {
    Leaf(Vec<i64>),
    Node(Vec<Cluster>, Q),
}

fn cluster_sum(c: &Cluster, n: usize) -> Vec<i64> {
    match c {
        Cluster::Leaf(s) => s.clone(),
        Cluster::Node(ch, _) => {
            let mut out = vec![0; n];
            for k in ch {
                for (o, x) in out.iter_mut().zip(cluster_sum(k, n)) {
                    *o += x;
                }
            }
            out
        }
    }
}

fn any_zero_edge(c: &Cluster, n: usize) -> bool {
    match c {
        Cluster::Leaf(s) => s.iter().all(|&x| x == 0),
        Cluster::Node(ch, _) => cluster_sum(c, n).iter().all(|&x| x == 0) || ch.iter().any(|k| any_zero_edge(k, n)),
    }
}

fn emit(c: &mut ZTCurve, at: usize, cl: &Cluster, n: usize, counter: &mut usize) {
    match cl {
        Cluster::Leaf(s) => {
            push_edge(c, at, None, s, qi(1));
        }
        Cluster::Node(ch, len) => {
            *counter += 1;
            let v = c.add_vertex(format!("n{counter}"), None);
            push_edge(c, at, Some(v), &cluster_sum(cl, n), len.clone());
            for k in ch {
                emit(c, v, k, n, counter);
            }
        }
    }
}

/// Leaf slopes: primitive directions in `[-5,5]^n` times multiplicity <= 3,
/// summing to zero.
fn random_leaves(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<i64>> {
    loop {
        let mut leaves = Vec::new();
        for _ in 0..k - 1 {
            let d = random_vec(rng, n, 5);
            let g = gcd_vec(&d);
            let m = rng.gen_range(1..=3);
            leaves.push(d.iter().map(|x| x / g * m).collect::<Vec<i64>>());
        }
        let last: Vec<i64> = (0..n).map(|i| -leaves.iter().map(|l| l[i]).sum::<i64>()).collect();
        let g = gcd_vec(&last);
        if g == 0 || g > 3 || last.iter().any(|x| (x / g).abs() > 5) {
            continue;
        }
        leaves.push(last);
        return leaves;
    }
}

/// Random tree with all internal vertices of degree >= 3 over the given leaves.
fn random_clusters(rng: &mut ChaCha8Rng, leaves: Vec<Vec<i64>>) -> Vec<Cluster> {
    let mut cl: Vec<Cluster> = leaves.into_iter().map(Cluster::Leaf).collect();
    while cl.len() > 3 {
        let take = if cl.len() >= 5 && rng.gen_bool(0.3) { 3 } else { 2 };
        let mut picked = Vec::new();
        for _ in 0..take {
            let i = rng.gen_range(0..cl.len());
            picked.push(cl.swap_remove(i));
        }
        cl.push(Cluster::Node(picked, random_length(rng)));
    }
    cl
}

/// A random genus-0 curve in `Q^n` with `3..=max_leaves` unbounded edges.
pub fn random_genus0(rng: &mut ChaCha8Rng, n: usize, max_leaves: usize) -> ZTCurve {
    loop {
        let k = rng.gen_range(3..=max_leaves);
        let leaves = random_leaves(rng, n, k);
        let top = random_clusters(rng, leaves);
        if top.iter().any(|c| any_zero_edge(c, n)) {
            continue;
        }
        let mut c = ZTCurve::new(n);
        let anchor: Vec<Q> = (0..n).map(|_| q(rng.gen_range(-3..=3), rng.gen_range(1..=2))).collect();
        let root = c.add_vertex("root", Some(anchor));
        let mut counter = 0;
        for cl in &top {
            emit(&mut c, root, cl, n, &mut counter);
        }
        assert!(c.validate().valid, "generator produced an invalid curve");
        return c;
    }
}

/// A random ordinary genus-1 curve in `Q^n`, circuit first in edge order.
pub fn random_ordinary_genus1(rng: &mut ChaCha8Rng, n: usize) -> ZTCurve {
    'retry: loop {
        let r = rng.gen_range(n + 1..=n + 2).max(3);
        let pts: Vec<Vec<i64>> = (0..r).map(|_| (0..n).map(|_| rng.gen_range(-2..=2)).collect()).collect();
        let disp: Vec<Vec<i64>> = (0..r).map(|k| (0..n).map(|i| pts[(k + 1) % r][i] - pts[k][i]).collect()).collect();
        if disp.iter().any(|d| d.iter().all(|&x| x == 0)) {
            continue;
        }
        if troplift::linalg::rank_i64(&disp) < n {
            continue;
        }
        // Weighted slopes and metric lengths of the circuit edges.
        let mut sig = Vec::new();
        let mut len = Vec::new();
        for d in &disp {
            let g = gcd_vec(d);
            let m = if rng.gen_bool(0.25) { 2 } else { 1 };
            sig.push(d.iter().map(|x| x / g * m).collect::<Vec<i64>>());
            len.push(q(g, m));
        }
        let mut c = ZTCurve::new(n);
        let vs: Vec<usize> = (0..r)
            .map(|k| {
                let coords = if k == 0 { Some(pts[0].iter().map(|&x| qi(x)).collect()) } else { None };
                c.add_vertex(format!("c{k}"), coords)
            })
            .collect();
        for k in 0..r {
            push_edge(&mut c, vs[k], Some(vs[(k + 1) % r]), &sig[k], len[k].clone());
        }
        let mut counter = 0;
        for k in 0..r {
            let prev = &sig[(k + r - 1) % r];
            let d: Vec<i64> = (0..n).map(|i| prev[i] - sig[k][i]).collect();
            if d.iter().all(|&x| x == 0) {
                continue 'retry;
            }
            if rng.gen_bool(0.5) || gcd_vec(&d) > 3 {
                let a = random_vec(rng, n, 3);
                let b: Vec<i64> = (0..n).map(|i| d[i] - a[i]).collect();
                if b.iter().all(|&x| x == 0) {
                    continue 'retry;
                }
                let node = Cluster::Node(vec![Cluster::Leaf(a), Cluster::Leaf(b)], random_length(rng));
                emit(&mut c, vs[k], &node, n, &mut counter);
            } else {
                push_edge(&mut c, vs[k], None, &d, qi(1));
            }
        }
        assert!(c.validate().valid, "generator produced an invalid curve");
        return c;
    }
}

/// A random unimodular integer matrix (product of elementary moves).
pub fn random_unimodular(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<i64>> {
    let mut m: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as i64).collect()).collect();
    if n < 2 {
        return m;
    }
    for _ in 0..4 {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        while j == i {
            j = rng.gen_range(0..n);
        }
        let f = rng.gen_range(-2..=2);
        for col in 0..n {
            let x = m[j][col];
            m[i][col] += f * x;
        }
        if rng.gen_bool(0.3) {
            m.swap(i, j);
        }
    }
    m
}
