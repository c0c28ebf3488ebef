//! Lift a genus-0 tree to a rational map and check its tropicalization.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use troplift::liftzero::{forward_trop, lift, verify};
use troplift::puiseux::qi;
use troplift::ztcurve::ZTCurve;

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/example1.json");
    let c = ZTCurve::from_path(&path).unwrap();
    let d = lift(&c, &qi(24)).unwrap();
    for (i, (plus, minus)) in d.zplus.iter().zip(&d.zminus).enumerate() {
        let show = |l: &[usize]| l.iter().map(|&k| d.points[k].to_string()).collect::<Vec<_>>().join(", ");
        println!("x{}: zeros [{}]  poles [{}]", i + 1, show(plus), show(minus));
    }
    println!("degree {:?}", d.map_degree());
    let img = forward_trop(&d).unwrap();
    println!("image has {} vertices, {} segments, {} rays", img.graph.vertices.len(), img.graph.segments.len(), img.graph.rays.len());
    let rep = verify(&d, &c, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    println!("verified: {}", rep.verified);
}
