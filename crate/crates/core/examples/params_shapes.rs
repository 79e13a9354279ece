//! Parameter counts and row tables for every architecture.
//!
//!     cargo run --example params_shapes [ARCH]

use mrisynth::harness::{params_report, shapes_report};
use mrisynth::models::{ArchConfig, ProganStage};

fn main() -> mrisynth::Result<()> {
    let ids: Vec<String> = match std::env::args().nth(1) {
        Some(id) => vec![id],
        None => ["unet", "dcgan", "dcgan-mini", "srresgan", "progan"].map(String::from).to_vec(),
    };
    for id in ids {
        let Some(arch) = ArchConfig::from_id(&id) else {
            eprintln!("unknown architecture `{id}`");
            std::process::exit(1);
        };
        print!("{}", params_report(&arch, None)?);
        println!("{}", shapes_report(&arch, None)?);
    }

    // U-net variants from the published tuning table
    for (filters, bn) in [(32, true), (64, true), (64, false)] {
        let mut unet = ArchConfig::from_id("unet").expect("known id");
        unet.set("filters", &filters.to_string()).expect("valid");
        unet.set("bn", &bn.to_string()).expect("valid");
        print!("filters {filters} bn {bn}: {}", params_report(&unet, None)?);
    }

    // a ProGAN discriminator halfway through the 8×8 fade-in
    let progan = ArchConfig::from_id("progan").expect("known id");
    print!("{}", shapes_report(&progan, Some(ProganStage::transition(8, 0.5)))?);
    Ok(())
}
