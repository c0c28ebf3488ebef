//! Lift the unit square with four rays to a theta quotient on a Tate curve.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use troplift::liftone::{compute_slopes, lift, theta, verify};
use troplift::puiseux::{fmt_q, qi, Series};
use troplift::ztcurve::ZTCurve;

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/square.json");
    let c = ZTCurve::from_path(&path).unwrap();
    let d = lift(&c, &qi(24)).unwrap();
    println!("q = {}", d.q);
    println!("v(j) = {}", d.j_valuation().unwrap());
    for (k, p) in d.points.iter().enumerate() {
        println!("z{k} = {p}");
    }
    let res: Vec<String> = d.residual_valuations().unwrap().iter().map(|r| r.as_ref().map_or("inf".into(), fmt_q)).collect();
    println!("residuals v(w_i - 1): ({})", res.join(", "));
    let g = compute_slopes(&d).unwrap();
    let sums: Vec<String> = g.cycle_sum().iter().map(fmt_q).collect();
    println!("sum of length * slope around the circle: ({})", sums.join(", "));

    let u = Series::from_ints(&[(1, 2, 1)]);
    println!("theta_z0(t^(1/2)) = {}", theta(&d.points[0], &u, &d.q, &qi(4)).unwrap());
    let rep = verify(&d, &c, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    println!("verified: {}", rep.verified);
}
