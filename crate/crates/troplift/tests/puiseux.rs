//! Valuation laws, inverses and cross-ratio symmetries on random series.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use troplift::puiseux::{cross_ratio_valuation, q, qi, Coeff, P1Point, Series, Valuation, Q};

/// Exact nonzero series with exponents in `[-8, 8]` over denominators up to 4.
fn series() -> impl Strategy<Value = Series> {
    prop::collection::vec((-8i64..=8, 1i64..=4, prop_oneof![-5i64..=-1, 1i64..=5]), 1..5)
        .prop_map(|t| Series::from_ints(&t))
        .prop_filter("nonzero", |s| !s.terms().is_empty())
}

fn finite(v: Valuation) -> Q {
    v.finite().cloned().expect("finite valuation")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn valuation_is_additive_under_products(a in series(), b in series()) {
        let (va, vb) = (finite(a.valuation()), finite(b.valuation()));
        prop_assert_eq!(finite(a.mul(&b).valuation()), va + vb);
    }

    #[test]
    fn valuation_of_sums_is_ultrametric(a in series(), b in series()) {
        let (va, vb) = (finite(a.valuation()), finite(b.valuation()));
        let m = va.clone().min(vb.clone());
        match a.add(&b).valuation() {
            Valuation::Finite(v) => {
                prop_assert!(v >= m);
                if va != vb {
                    prop_assert_eq!(v, m);
                }
            }
            Valuation::Infinite => prop_assert!(va == vb),
            Valuation::Unknown => prop_assert!(false, "exact inputs gave an unknown sum"),
        }
    }

    #[test]
    fn truncated_sums_keep_the_smaller_marker(a in series(), b in series(), ta in 0i64..8, tb in 0i64..8) {
        let a = a.truncate(&qi(ta - 4));
        let b = b.truncate(&qi(tb - 4));
        let s = a.add(&b);
        prop_assert_eq!(s.trunc().cloned(), Some(qi(ta.min(tb) - 4)));
        prop_assert!(s.terms().iter().all(|(e, _)| e < s.trunc().unwrap()));
    }

    #[test]
    fn cross_ratio_symmetries(pts in prop::collection::vec(series(), 4), inf in 0usize..5) {
        let mut p: Vec<P1Point> = pts.into_iter().map(P1Point::Finite).collect();
        if inf < 4 {
            p[inf] = P1Point::Infinity;
        }
        let distinct = (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j]));
        prop_assume!(distinct);
        let [w, x, y, z] = [&p[0], &p[1], &p[2], &p[3]];
        let (vc, vc1) = cross_ratio_valuation(w, x, y, z).unwrap();
        prop_assert_eq!(&cross_ratio_valuation(y, z, w, x).unwrap().0, &vc);
        prop_assert_eq!(&cross_ratio_valuation(x, w, z, y).unwrap().0, &vc);
        prop_assert_eq!(cross_ratio_valuation(w, x, z, y).unwrap().0, -vc.clone());
        // c(w,y:x,z) = 1 - c(w,x:y,z).
        prop_assert_eq!(cross_ratio_valuation(w, y, x, z).unwrap().0, vc1);
    }
}

fn random_coeff(rng: &mut ChaCha8Rng) -> Coeff {
    let d = [1usize, 1, 2, 3][rng.gen_range(0..4)];
    loop {
        let parts: Vec<Q> = (0..d).map(|_| q(rng.gen_range(-6..=6), rng.gen_range(1..=3))).collect();
        let c = Coeff::from_parts(parts);
        if !c.is_zero() {
            return c;
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Series {
    let n = rng.gen_range(1..=5);
    let terms = (0..n).map(|_| (q(rng.gen_range(-12..=12), rng.gen_range(1..=4)), random_coeff(rng))).collect();
    let trunc = rng.gen_bool(0.3).then(|| qi(4));
    Series::new(terms, trunc)
}

/// The residual `a·b - 1` lies at or beyond relative order `rel`.
fn inverse_to(a: &Series, b: &Series, rel: &Q) -> bool {
    match a.mul(b).sub(&Series::one()).valuation() {
        Valuation::Finite(v) => &v >= rel,
        Valuation::Infinite | Valuation::Unknown => true,
    }
}

#[test]
fn inverse_is_two_sided_up_to_trunc() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e5e);
    let mut checked = 0;
    while checked < 1000 {
        let a = random_unit(&mut rng);
        let Valuation::Finite(va) = a.valuation() else { continue };
        let rel = qi(rng.gen_range(1..=10));
        let b = a.inv(&rel).unwrap();
        let own = a.trunc().map(|t| t - &va);
        let reached = match own {
            Some(o) if o < rel => o,
            _ => rel.clone(),
        };
        assert_eq!(finite(b.valuation()), -va.clone(), "{a}");
        assert!(inverse_to(&a, &b, &reached), "a = {a}, a^-1 = {b}");
        assert!(inverse_to(&b, &a, &reached), "a = {a}, a^-1 = {b}");
        checked += 1;
    }
}

#[test]
fn inverse_of_the_inverse_returns_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e5f);
    for _ in 0..200 {
        let mut a = random_unit(&mut rng);
        if a.terms().is_empty() {
            continue;
        }
        a = Series::new(a.terms().to_vec(), None);
        let rel = qi(8);
        let back = a.inv(&rel).unwrap().inv(&rel).unwrap();
        let va = finite(a.valuation());
        match back.sub(&a).valuation() {
            Valuation::Finite(v) => assert!(v >= va + &rel, "{a} came back as {back}"),
            _ => {}
        }
    }
}
