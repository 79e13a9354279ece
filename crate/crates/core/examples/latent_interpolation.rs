//! Train a few GAN steps, then walk the latent space between random pairs
//! and write each walk as a PGM strip.

use mrisynth::harness::{interpolate, train_gan, ExperimentConfig};

fn main() -> mrisynth::Result<()> {
    let dir = std::env::temp_dir().join("mrisynth_interp_example");
    let cfg = ExperimentConfig::parse_str(&format!(
        "model.arch = dcgan-mini\ntrain.batch_size = 16\ntrain.steps_per_epoch = 100\ntrain.epochs = 1\n\
         loss.kind = lsgan\ndata.synthetic.res = 16\nseed = 0\nout_dir = {}\n",
        dir.display()
    ))?;
    train_gan(&cfg)?;
    for f in interpolate(&dir.join("checkpoint.mrgf"), 3, 8, &dir.join("interp"), 0)? {
        println!("{}", f.display());
    }
    Ok(())
}
