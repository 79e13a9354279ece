//! Save a GAN trainer mid-run, restore it, and confirm both continue with
//! bit-identical losses.

use mrisynth::harness::{load_corpus, Checkpoint, ExperimentConfig, GanTrainer};

fn main() -> mrisynth::Result<()> {
    let dir = std::env::temp_dir().join("mrisynth_resume_example");
    let cfg = ExperimentConfig::parse_str(&format!(
        "model.arch = dcgan-mini\ntrain.batch_size = 8\ndata.synthetic.n = 64\ndata.synthetic.res = 16\n\
         seed = 3\nout_dir = {}\n",
        dir.display()
    ))?;
    std::fs::create_dir_all(&dir)?;
    let corpus = load_corpus(&cfg)?;
    let mut a = GanTrainer::new(cfg, corpus.clone(), None)?;
    for _ in 0..5 {
        a.step()?;
    }
    let path = dir.join("mid.mrgf");
    a.checkpoint().save(&path)?;
    let mut b = GanTrainer::from_checkpoint(Checkpoint::load(&path)?, corpus)?;
    for _ in 0..5 {
        let (ra, rb) = (a.step()?, b.step()?);
        let same = ra.d_loss.to_bits() == rb.d_loss.to_bits() && ra.g_loss.to_bits() == rb.g_loss.to_bits();
        println!("step {:>2}  d {:+.6}  g {:+.6}  identical {same}", ra.step, ra.d_loss, ra.g_loss);
    }
    Ok(())
}
