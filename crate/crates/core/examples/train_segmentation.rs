//! U-net on synthetic blobs, then Dice and accuracy on the held-out third.
//!
//!     cargo run --release --example train_segmentation [CONFIG]

use std::path::PathBuf;

use mrisynth::harness::{train_segmentation, ExperimentConfig};

fn main() -> mrisynth::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/seg_blobs.cfg")));
    let cfg = ExperimentConfig::parse_file(&path)?;
    let report = train_segmentation(&cfg)?;
    print!("{}", report.to_text());
    println!("logs in {}", report.out_dir.display());
    Ok(())
}
