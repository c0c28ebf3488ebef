//! The subtree of the Bruhat-Tits tree spanned by a few points of P^1.

use troplift::btree::{distance, span_tree, BTPoint};
use troplift::puiseux::{qi, Series};

fn main() {
    let pts = vec![
        BTPoint::point(Series::zero()),
        BTPoint::point(Series::from_ints(&[(1, 1, 1)])),
        BTPoint::point(Series::from_ints(&[(0, 1, 1)])),
        BTPoint::point(Series::from_ints(&[(0, 1, 1), (2, 1, 3)])),
        BTPoint::infinity(),
    ];
    let st = span_tree(&pts).unwrap();
    println!("{}", serde_json::to_string_pretty(&st.tree.to_json_value()).unwrap());
    let (a, b) = (BTPoint::lattice(Series::zero(), qi(0)), BTPoint::lattice(Series::one(), qi(2)));
    println!("d({a}, {b}) = {}", distance(&a, &b).unwrap());
}
