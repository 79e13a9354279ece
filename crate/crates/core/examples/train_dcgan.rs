//! DCGAN-mini with the DRAGAN penalty, one-sided label smoothing and three
//! generator steps per discriminator step.
//!
//!     cargo run --release --example train_dcgan [CONFIG]

use std::path::PathBuf;

use mrisynth::harness::{train_gan, ExperimentConfig};

fn main() -> mrisynth::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/dcgan_mini.cfg")));
    let cfg = ExperimentConfig::parse_file(&path)?;
    let report = train_gan(&cfg)?;
    print!("{}", report.to_text());
    if report.diverged {
        std::process::exit(2);
    }
    Ok(())
}
