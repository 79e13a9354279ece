//! WGAN with weight clipping, stepping the trainer by hand and watching
//! the critic's largest weight.

use mrisynth::harness::{load_corpus, ExperimentConfig, GanTrainer};

fn main() -> mrisynth::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/wgan_clip.cfg");
    let cfg = ExperimentConfig::parse_file(path.as_ref())?;
    let corpus = load_corpus(&cfg)?;
    let c = cfg.loss.clip_threshold.unwrap_or(0.0);
    let mut t = GanTrainer::new(cfg, corpus, None)?;
    for _ in 0..50 {
        let rec = t.step()?;
        if rec.step % 10 == 0 {
            println!(
                "step {:>3}  d {:+.4}  g {:+.4}  max|w| {:.4} (c = {c})",
                rec.step,
                rec.d_loss,
                rec.g_loss,
                t.d.params.max_abs_trainable()
            );
        }
    }
    Ok(())
}
