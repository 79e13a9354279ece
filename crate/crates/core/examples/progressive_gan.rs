//! Progressive growing from 4×4 to 16×16 with per-stage wall time.
//!
//!     cargo run --release --example progressive_gan

use mrisynth::harness::{train_progressive, ExperimentConfig};

fn main() -> mrisynth::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/progan_small.cfg");
    let cfg = ExperimentConfig::parse_file(path.as_ref())?;
    let report = train_progressive(&cfg)?;
    for (res, ms) in &report.stage_wall_ms {
        println!("{res:>3}×{res:<3} {ms:>8.0} ms");
    }
    println!("{}", report.status());
    Ok(())
}
