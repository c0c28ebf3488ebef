//! A superabundant pair: the well-spaced curve lifts, the other one is obstructed.

use std::path::PathBuf;

use troplift::liftone::{build_initial, lift, necessity_check, LiftError};
use troplift::puiseux::qi;
use troplift::ztcurve::ZTCurve;

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let ws2 = ZTCurve::from_path(&dir.join("ws2.json")).unwrap();
    let d = lift(&ws2, &qi(24)).unwrap();
    println!("ws2: solved, Hensel orders {:?}", d.trace.iter().map(|k| k.to_string()).collect::<Vec<_>>());

    let nws2 = ZTCurve::from_path(&dir.join("nws2.json")).unwrap();
    match lift(&nws2, &qi(24)) {
        Err(LiftError::NotWellSpaced(w)) => println!("nws2: not well spaced ({w})"),
        other => println!("nws2: unexpected {:?}", other.map(|_| ())),
    }
    let rep = necessity_check(&build_initial(&nws2, &qi(24)).unwrap()).unwrap();
    println!("{}", serde_json::to_string_pretty(&rep).unwrap());
}
