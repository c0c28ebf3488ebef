mod common;

use common::{load, random_genus0, random_ordinary_genus1, random_unimodular};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use troplift::embed::EmbeddedGraph;
use troplift::puiseux::{q, qi};
use troplift::ztcurve::{classify, leaf_span_check, trivalent_reduce, TrivalentError, ZTCurve};

#[test]
fn square_is_valid_ordinary_genus_one() {
    let c = load("square.json");
    assert!(c.validate().valid);
    let g = c.graph().unwrap();
    assert_eq!(g.genus(), 1);
    let mut deg = g.degree();
    deg.sort();
    assert_eq!(deg, vec![vec![-1, -1], vec![-1, 1], vec![1, -1], vec![1, 1]]);
    let circ = g.circuit().unwrap();
    assert_eq!(circ.length, qi(4));
    assert!(g.is_ordinary(&circ));
    assert!(g.hyperplane_classes(&circ).is_empty());
    assert!(g.well_spacedness(&circ).well_spaced);
}

#[test]
fn example_trees_are_valid_genus_zero() {
    let c = load("example1.json");
    assert!(c.validate().valid);
    assert_eq!(c.genus(), 0);
    assert!(c.graph().unwrap().circuit().is_err());
    let d = load("example2.json").degree();
    let sum: Vec<i64> = (0..3).map(|i| d.iter().map(|v| v[i]).sum()).collect();
    assert_eq!(sum, vec![0, 0, 0]);
    assert_eq!(d.len(), 4);
}

#[test]
fn square_padded_into_three_space_is_superabundant() {
    let c = load("square.json");
    let mut c3 = ZTCurve::new(3);
    c3.vertices = c.vertices.clone();
    for v in &mut c3.vertices {
        if let Some(x) = &mut v.coords {
            x.push(qi(0));
        }
    }
    c3.edges = c.edges.clone();
    for e in &mut c3.edges {
        e.direction.push(0);
    }
    let g = c3.graph().unwrap();
    assert!(!g.is_ordinary(&g.circuit().unwrap()));
}

#[test]
fn ws2_and_nws2_flats() {
    let ws = load("ws2.json").graph().unwrap();
    let circ = ws.circuit().unwrap();
    assert!(!ws.is_ordinary(&circ));
    let flats = ws.hyperplane_classes(&circ);
    assert_eq!(flats.len(), 1);
    assert_eq!(flats[0].describe(), "x-axis flat");
    let check = ws.well_spacedness(&circ);
    assert!(check.well_spaced);
    assert_eq!(check.checks[0].min_count, 2);

    let nws = load("nws2.json").graph().unwrap();
    let circ = nws.circuit().unwrap();
    let flats = nws.hyperplane_classes(&circ);
    assert_eq!(flats.len(), 1, "the collinear edge is absorbed into the x-axis");
    let check = nws.well_spacedness(&circ);
    assert!(!check.well_spaced);
    assert_eq!(check.witness.unwrap().describe(), "x-axis flat");
    let mut d: Vec<_> = check.checks[0].boundary.iter().map(|(_, d)| d.clone()).collect();
    d.sort();
    assert_eq!(d, vec![qi(0), q(1, 2)]);
}

#[test]
fn classification_report() {
    let c = classify(&load("nws2.json")).unwrap();
    assert_eq!(c.well_spaced, Some(false));
    assert_eq!(c.witness.as_deref(), Some("x-axis flat"));
    let s = classify(&load("square.json")).unwrap();
    assert_eq!((s.genus, s.ordinary, s.well_spaced), (1, Some(true), Some(true)));
    assert_eq!(classify(&load("genus2.json")).unwrap().genus, 2);
}

#[test]
fn leaf_spans() {
    let sq = load("square.json").graph().unwrap();
    let circ = sq.circuit().unwrap();
    assert!(leaf_span_check(&sq.leaf_vectors(&circ, None), 2));
    let line = load("line.json").graph().unwrap();
    let rays: Vec<_> = line.rays().map(|e| line.edges[e].sigma.clone()).collect();
    assert!(leaf_span_check(&rays, 1));
    let ws = load("ws2.json").graph().unwrap();
    let circ = ws.circuit().unwrap();
    assert!(leaf_span_check(&ws.leaf_vectors(&circ, Some(&qi(0))), 2));
}

#[test]
fn trivalent_reduction() {
    let sq = load("square.json");
    let target = sq.graph().unwrap().embedded();
    assert_eq!(trivalent_reduce(&sq, &target).unwrap().len(), sq.edges.len());

    let mut glued = sq.clone();
    let corner = glued.vertices.iter().position(|v| v.id == "p00").unwrap();
    let leaf = glued.add_vertex("stub", None);
    glued.add_edge(corner, leaf, vec![0, 0], 1, qi(1));
    assert!(glued.validate().valid);
    assert_eq!(trivalent_reduce(&glued, &target).unwrap().len(), sq.edges.len());

    let mut doubled = EmbeddedGraph::new(1);
    let a = doubled.add_vertex(vec![qi(0)]);
    let b = doubled.add_vertex(vec![qi(1)]);
    doubled.add_segment(a, b, vec![2]);
    doubled.add_ray(a, vec![-1]);
    doubled.add_ray(a, vec![-1]);
    doubled.add_ray(b, vec![1]);
    doubled.add_ray(b, vec![1]);
    assert_eq!(trivalent_reduce(&load("line.json"), &doubled), Err(TrivalentError::Multiplicity));
}

#[test]
fn input_errors() {
    let s = std::fs::read_to_string(common::data("malformed.json")).unwrap();
    let err = ZTCurve::from_json_str(&s).unwrap_err();
    assert!(err.to_string().contains("line"), "{err}");
    assert!(ZTCurve::from_json_str(r#"{"lattice_rank":1,"vertices":[{"id":1,"coords":[0]}],"edges":[{"from":1,"to":2,"direction":[1],"multiplicity":1,"length":"inf"}]}"#).is_err());
}

#[test]
fn json_round_trip() {
    for name in ["square.json", "nws2.json", "example1.json"] {
        let c = load(name);
        let back = ZTCurve::from_json_str(&c.to_json().to_string()).unwrap();
        assert_eq!(c, back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn degree_sums_to_zero(seed in any::<u64>(), n in 1usize..=4, genus in 0usize..=1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = if genus == 0 || n == 1 { random_genus0(&mut rng, n, 8) } else { random_ordinary_genus1(&mut rng, n) };
        prop_assert!(c.validate().valid);
        let d = c.degree();
        for i in 0..n {
            prop_assert_eq!(d.iter().map(|v| v[i]).sum::<i64>(), 0);
        }
        let g = c.graph().unwrap();
        prop_assert_eq!(g.genus() == 1, g.circuit().is_ok());
    }

    #[test]
    fn well_spacedness_is_affine_invariant(seed in any::<u64>(), pick in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let name = ["ws2.json", "nws2.json", "square.json"][pick];
        let c = load(name);
        let m = random_unimodular(&mut rng, 2);
        let shift = vec![q(1, 3), qi(-2)];
        let t = c.transformed(&m, &shift);
        prop_assert!(t.validate().valid);
        let (g0, g1) = (c.graph().unwrap(), t.graph().unwrap());
        let (c0, c1) = (g0.circuit().unwrap(), g1.circuit().unwrap());
        prop_assert_eq!(g0.well_spacedness(&c0).well_spaced, g1.well_spacedness(&c1).well_spaced);
        for f in g1.hyperplane_classes(&c1) {
            prop_assert!(f.dim() < 2);
        }
    }

    #[test]
    fn flats_are_proper(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_ordinary_genus1(&mut rng, n);
        let g = c.graph().unwrap();
        let circ = g.circuit().unwrap();
        prop_assert!(g.is_ordinary(&circ));
        prop_assert!(g.hyperplane_classes(&circ).is_empty());
    }
}
