//! Exact truncated Puiseux series: products, inverses, valuations and a cross ratio.

use troplift::puiseux::{cross_ratio, cross_ratio_valuation, fmt_q, qi, val_diff, P1Point, Series};

fn main() {
    // 1 + t^(1/2) and 2 - t
    let a = Series::from_ints(&[(0, 1, 1), (1, 2, 1)]);
    let b = Series::from_ints(&[(0, 1, 2), (1, 1, -1)]);
    let rel = qi(3);
    println!("a * b      = {}", a.mul(&b));
    println!("1 / a      = {}", a.inv(&rel).unwrap());
    println!("v(a - b)   = {}", val_diff(&a, &b).finite().map_or("?".to_string(), fmt_q));

    let pts: Vec<P1Point> = [(0, 1, 0), (1, 1, 1), (0, 1, 1), (-1, 1, 1)]
        .iter()
        .map(|&(e, d, c)| if c == 0 { P1Point::Finite(Series::zero()) } else { P1Point::Finite(Series::from_ints(&[(e, d, c)])) })
        .collect();
    let c = cross_ratio(&pts[0], &pts[1], &pts[2], &pts[3], &rel).unwrap();
    let (vc, vc1) = cross_ratio_valuation(&pts[0], &pts[1], &pts[2], &pts[3]).unwrap();
    println!("c(0, t : 1, 1/t) = {c}");
    println!("v(c) = {vc}, v(c - 1) = {vc1}");
}
