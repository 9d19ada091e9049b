//! Runs a TOML experiment config the way the binary does; defaults to the oracle fixture.
use std::path::PathBuf;

use ezstab::cli::{run, RunArgs};

fn main() {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/oracle.toml")));
    let out = std::env::temp_dir().join("ezstab-example");
    let args = RunArgs {
        config,
        seed: None,
        out: Some(out),
    };
    match run(None, &args) {
        Ok(o) => {
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            for f in &o.failures {
                println!("failed: {f}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
}
