mod common;

use common::{load, random_genus0};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use troplift::liftzero::{forward_trop, iota_at, lift, probe_at, sample_check, verify, RationalMapData};
use troplift::puiseux::{qi, val_diff, P1Point, Series, Q};

fn s(terms: &[(i64, i64, i64)]) -> P1Point {
    P1Point::Finite(Series::from_ints(terms))
}

/// Map data from explicit point lists, translated so that `b(probe) ↦ target`.
fn map_from_lists(n: usize, plus: &[Vec<P1Point>], minus: &[Vec<P1Point>]) -> RationalMapData {
    let mut points: Vec<P1Point> = Vec::new();
    let mut idx = |p: &P1Point| match points.iter().position(|q| q == p) {
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
        translation: vec![Q::from_integer(0.into()); n],
        trunc: qi(24),
        realization: None,
    }
}

fn align(d: &mut RationalMapData, probe: &P1Point, target: &[Q]) {
    let v = d.phi_valuation(probe).unwrap();
    d.translation = (0..d.n).map(|i| &target[i] - &v[i]).collect();
}

fn valuation_pattern(points: &[P1Point]) -> Vec<Vec<Option<Q>>> {
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

#[test]
fn example_one() {
    let c = load("example1.json");
    let d = lift(&c, &qi(24)).unwrap();
    let target = c.graph().unwrap().embedded().canonical();
    assert_eq!(forward_trop(&d).unwrap().graph.canonical(), target);
    // Leaf order in the file: (1,0,0), (0,1,1), (0,-1,0), (-1,0,-1).
    let ours: Vec<P1Point> = d.leaf_points.iter().map(|&(_, k)| d.points[k].clone()).collect();
    let paper = vec![s(&[]), s(&[(1, 1, 1)]), s(&[(0, 1, 1)]), s(&[(-1, 1, 1)])];
    assert_eq!(valuation_pattern(&ours), valuation_pattern(&paper));
    let mut deg = d.map_degree();
    deg.sort();
    assert_eq!(deg, vec![vec![-1, 0, -1], vec![0, -1, 0], vec![0, 1, 1], vec![1, 0, 0]]);

    let (z0, zt, z1, zinv) = (s(&[]), s(&[(1, 1, 1)]), s(&[(0, 1, 1)]), s(&[(-1, 1, 1)]));
    let mut p = map_from_lists(
        3,
        &[vec![z0.clone()], vec![zt.clone()], vec![zt.clone()]],
        &[vec![zinv.clone()], vec![z1.clone()], vec![zinv.clone()]],
    );
    align(&mut p, &s(&[(0, 1, 2)]), &[qi(0), qi(0), qi(0)]);
    assert_eq!(forward_trop(&p).unwrap().graph.canonical(), target);
}

#[test]
fn example_two() {
    let c = load("example2.json");
    let d = lift(&c, &qi(24)).unwrap();
    let pts: Vec<P1Point> = (1..=4).map(|k| s(&[(0, 1, k)])).collect();
    let names = |l: &[usize]| {
        let mut v: Vec<usize> = l.iter().map(|&k| pts.iter().position(|p| *p == d.points[k]).unwrap() + 1).collect();
        v.sort();
        v
    };
    assert_eq!(names(&d.zplus[0]), vec![1, 2, 2, 2, 2, 2, 4]);
    assert_eq!(names(&d.zminus[0]), vec![3; 7]);
    assert_eq!(names(&d.zplus[1]), vec![1, 1, 3]);
    assert_eq!(names(&d.zminus[1]), vec![2, 2, 2]);
    assert_eq!(names(&d.zplus[2]), vec![1, 1, 1, 2, 2, 2, 2]);
    assert_eq!(names(&d.zminus[2]), vec![3, 3, 4, 4, 4, 4, 4]);
    let mut deg = d.map_degree();
    deg.sort();
    assert_eq!(deg, vec![vec![-7, 1, -2], vec![1, 0, -5], vec![1, 2, 3], vec![5, -3, 4]]);
    assert_eq!(forward_trop(&d).unwrap().graph.canonical(), c.graph().unwrap().embedded().canonical());
}

fn unfolded(prime: bool) -> RationalMapData {
    let one = s(&[(0, 1, 1)]);
    let m1 = s(&[(0, 1, -1)]);
    let zero = s(&[]);
    let mtinv = s(&[(-1, 1, -1)]);
    let third = if prime { s(&[(-1, 1, 2)]) } else { s(&[(-1, 1, 1)]) };
    map_from_lists(
        3,
        &[vec![m1.clone(), m1.clone()], vec![mtinv.clone(), mtinv.clone()], vec![one, third]],
        &[vec![zero, mtinv.clone()], vec![m1.clone()], vec![m1, mtinv]],
    )
}

#[test]
fn unfolded_example() {
    let d = unfolded(false);
    let target = vec![qi(0), qi(-2), qi(0)];
    for u in [s(&[(1, 1, 3)]), s(&[(-2, 1, 5)])] {
        assert_eq!(d.phi_valuation(&u).unwrap(), target);
        let vals: Vec<Q> = d.evaluate(&u).unwrap().iter().map(|f| f.valuation().expect_finite().unwrap()).collect();
        assert_eq!(vals, target);
    }
    let img = forward_trop(&d).unwrap();
    let img2 = forward_trop(&unfolded(true)).unwrap();
    assert_eq!(img.graph.canonical(), img2.graph.canonical());
    assert!(img.graph.hits(&target) >= 2, "the image passes through (0,-2,0) twice");
    let a = img.span.attach(&s(&[(1, 1, 3)]), &img.punctures).unwrap();
    let b = img.span.attach(&s(&[(-2, 1, 5)]), &img.punctures).unwrap();
    assert!(!a.point.same(&b.point).unwrap());
    let row = sample_check(&d, &img, &s(&[(1, 1, 3)]), &s(&[(1, 1, 3)])).unwrap();
    assert!(row.ok && row.lhs.iter().all(|x| x == "0"));
}

#[test]
fn random_genus_zero_suite() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20261014);
    for case in 0..100 {
        let n = 1 + case % 4;
        let c = random_genus0(&mut rng, n, 10);
        let d = lift(&c, &qi(24)).unwrap();
        let report = verify(&d, &c, 20, &mut rng).unwrap();
        assert!(report.graph_equal, "case {case}: graph mismatch");
        assert!(report.degree_equal, "case {case}: degree mismatch");
        assert!(report.samples.iter().all(|r| r.ok), "case {case}: {:?}", report.samples);
        let img = forward_trop(&d).unwrap();
        assert!(img.graph.tension().iter().all(|t| t.iter().all(|&x| x == 0)));
        // Independent oracle: factor valuations against the curve's own realization.
        for _ in 0..5 {
            let u = img.random_probe(&mut rng);
            assert_eq!(d.phi_valuation(&u).unwrap(), iota_at(&d, &u).unwrap(), "case {case}");
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn probes_avoid_branch_residues() {
    let pts = vec![s(&[(0, 1, 1)]), s(&[(0, 1, 2)])];
    let u = probe_at(&Series::zero(), &qi(0), &pts, 1);
    assert_eq!(u, s(&[(0, 1, 3)]));
}
