//! Genus, degree, ordinary and well-spaced status of every bundled curve file.

use std::path::PathBuf;

use troplift::ztcurve::{classify, ZTCurve};

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for name in ["example1", "example2", "square", "ws2", "nws2", "genus2", "malformed"] {
        match ZTCurve::from_path(&dir.join(format!("{name}.json"))) {
            Ok(c) => match classify(&c) {
                Ok(cl) => println!("{name}: {}", serde_json::to_string(&cl).unwrap()),
                Err(e) => println!("{name}: {e}"),
            },
            Err(e) => println!("{name}: {e}"),
        }
    }
}
