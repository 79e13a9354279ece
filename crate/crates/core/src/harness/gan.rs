//! Adversarial training: one discriminator step then `k` generator steps,
//! plus the progressive-growing schedule on top of it.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::{load_corpus, prepare_out_dir, CsvLog, DivergenceWatch, RunReport, STEP_LOG_HEADER};
use crate::autodiff::Tape;
use crate::data::{derive_rng, map_batch, unstack, BatchPlan, Batcher, ImageCorpus};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::losses::{self, LossKind};
use crate::models::{progan_ladder, ArchConfig, Built, Model, Phase, ProganStage};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;
use crate::Rng;

const PENALTY_TAG: u64 = 0xA1;
const SAMPLE_TAG: u64 = 0xA2;

/// Fade weight at step `i` of an `n`-step transition: `0` first, `1` last.
pub fn alpha_at(i: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// One discriminator step and the generator steps that follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub d_loss: f64,
    /// Mean over the generator steps.
    pub g_loss: f64,
    pub gp_term: f64,
    pub wall_ms: f64,
    pub g_losses: Vec<f64>,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.epoch, self.d_loss, self.g_loss, self.gp_term, self.wall_ms
        )
    }
}

fn is_non_finite(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Generator/discriminator pair with optimizers and the run's RNG stream.
/// Batches are addressed by step, so a trainer restored from a checkpoint
/// continues exactly where the saved one stopped.
pub struct GanTrainer {
    pub cfg: ExperimentConfig,
    pub g: Model,
    pub d: Model,
    pub opt_g: OptimizerState,
    pub opt_d: OptimizerState,
    pub rng: Rng,
    pub step: u64,
    pub stage: Option<ProganStage>,
    corpus: ImageCorpus,
    watch: DivergenceWatch,
    started: Instant,
    prior_wall: f64,
    /// Largest trainable |w| observed right after clipping.
    pub max_abs_after_clip: Option<f64>,
}

impl GanTrainer {
    pub fn new(cfg: ExperimentConfig, corpus: ImageCorpus, stage: Option<ProganStage>) -> Result<Self> {
        if !cfg.arch.is_gan() {
            return Err(Error::InvalidArgument(format!("{} is not a GAN", cfg.arch.id())));
        }
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let Built::Gan { mut g, d } = cfg.arch.build(stage, &mut rng)? else {
            unreachable!("checked is_gan")
        };
        g.alpha = stage.map_or(1.0, |s| s.alpha);
        let mut d = d;
        d.alpha = g.alpha;
        Ok(Self {
            opt_g: cfg.optim_g.state(),
            opt_d: cfg.optim_d.state(),
            cfg,
            g,
            d,
            rng,
            step: 0,
            stage,
            corpus,
            watch: DivergenceWatch::default(),
            started: Instant::now(),
            prior_wall: 0.0,
            max_abs_after_clip: None,
        })
    }

    /// Training wall time including time before a restore.
    pub fn wall_seconds(&self) -> f64 {
        self.prior_wall + self.started.elapsed().as_secs_f64()
    }

    pub fn from_checkpoint(ck: Checkpoint, corpus: ImageCorpus) -> Result<Self> {
        let cfg = ck.experiment()?;
        let mut nets = ck.nets.into_iter();
        let (Some((_, g)), Some((_, d))) = (nets.next(), nets.next()) else {
            return Err(Error::Checkpoint("expected generator and discriminator".into()));
        };
        let opt = |key: &str| {
            ck.optims
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, o)| o.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer `{key}`")))
        };
        Ok(Self {
            opt_g: opt("g")?,
            opt_d: opt("d")?,
            cfg,
            g,
            d,
            rng: ck.rng,
            step: ck.step,
            stage: ck.stage,
            corpus,
            watch: DivergenceWatch::default(),
            started: Instant::now(),
            prior_wall: ck.wall_seconds,
            max_abs_after_clip: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.resolved(),
            stage: self.stage,
            step: self.step,
            wall_seconds: self.wall_seconds(),
            nets: vec![("g".into(), self.g.clone()), ("d".into(), self.d.clone())],
            optims: vec![("g".into(), self.opt_g.clone()), ("d".into(), self.opt_d.clone())],
            rng: self.rng.clone(),
        }
    }

    fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.cfg.batch_size,
            steps_per_epoch: self.cfg.steps_per_epoch,
            augment: Some(self.cfg.augment_profile()).filter(|p| !p.is_identity()),
        }
    }

    pub fn epoch_len(&self) -> Result<usize> {
        Ok(Batcher::new(&self.corpus, (0..self.corpus.len()).collect(), self.plan(), self.cfg.seed)?.epoch_len())
    }

    /// Moves a progressive run to `stage`, keeping every parameter whose
    /// name and shape survive.
    pub fn grow(&mut self, stage: ProganStage) -> Result<()> {
        let Built::Gan { mut g, mut d } = self.cfg.arch.build(Some(stage), &mut self.rng)? else {
            unreachable!("gan architecture")
        };
        g.adopt_params(&self.g);
        d.adopt_params(&self.d);
        self.g = g;
        self.d = d;
        self.stage = Some(stage);
        self.set_alpha(stage.alpha);
        Ok(())
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.g.alpha = alpha;
        self.d.alpha = alpha;
        if let Some(s) = &mut self.stage {
            s.alpha = alpha;
        }
    }

    /// Real batch for the current step at the current stage resolution.
    fn real_batch(&self, epoch_len: usize) -> Result<Tensor<f32>> {
        let mut b = Batcher::new(&self.corpus, (0..self.corpus.len()).collect(), self.plan(), self.cfg.seed)?;
        let epoch = (self.step / epoch_len as u64) as usize;
        let x = b.batch(epoch, (self.step % epoch_len as u64) as usize)?.images;
        let Some(stage) = self.stage else {
            return Ok(x);
        };
        let full = x.shape()[2];
        let f = full / stage.resolution;
        let cur = if f > 1 { map_batch(&x, |i| i.downsample_avg(f))? } else { x.clone() };
        if stage.phase == Phase::Stabilize || stage.alpha == 1.0 {
            return Ok(cur);
        }
        let prev = map_batch(&x, |i| Ok(i.downsample_avg(2 * f)?.upsample_nearest(2)))?;
        let a = stage.alpha as f32;
        let data = cur.data().iter().zip(prev.data()).map(|(&c, &p)| (1.0 - a) * p + a * c).collect();
        Tensor::new(cur.shape().to_vec(), data)
    }

    fn noisy(&mut self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let s = self.cfg.input_noise_std;
        if s == 0.0 {
            return Ok(x);
        }
        let n = Normal::new(0.0, s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let data = x.data().iter().map(|&v| v + n.sample(&mut self.rng) as f32).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn latent(&mut self, batch: usize) -> Tensor<f32> {
        let dim = self.cfg.arch.latent().expect("gan architecture");
        self.cfg.latent.sample(batch, dim, &mut self.rng)
    }

    /// Returns `(d_loss, gp_term)`.
    fn d_step(&mut self, real: Tensor<f32>) -> Result<(f64, f64)> {
        let b = real.shape()[0];
        let z = self.latent(b);
        let mut tape = Tape::<f32>::new();
        let gb = self.g.bind(&mut tape, false);
        let zv = tape.constant(z);
        let fake = self.g.forward(&mut tape, &gb, zv, Mode::Train, &mut self.rng)?;
        let fake = tape.value(fake.out()).clone();
        let real = self.noisy(real)?;
        let fake = self.noisy(fake)?;
        let db = self.d.bind(&mut tape, true);
        let rv = tape.constant(real.clone());
        let fv = tape.constant(fake.clone());
        let dr = self.d.forward(&mut tape, &db, rv, Mode::Train, &mut self.rng)?;
        let df = self.d.forward(&mut tape, &db, fv, Mode::Train, &mut self.rng)?;
        let spec = &self.cfg.loss;
        let mut loss = losses::d_loss(&mut tape, spec, dr.out(), df.out())?;
        let mut gp = 0.0;
        if spec.kind.has_penalty() && spec.lambda_gp > 0.0 {
            let d = &self.d;
            let mut prng = derive_rng(self.cfg.seed, &[PENALTY_TAG, self.step]);
            let mut critic = |t: &mut Tape<f32>, x| d.forward(t, &db, x, Mode::Train, &mut prng).map(|f| f.out());
            let pen = match spec.kind {
                LossKind::WganGp => losses::gradient_penalty_wgan_gp(&mut tape, &mut critic, &real, &fake, &mut self.rng)?,
                _ => losses::gradient_penalty_dragan(&mut tape, &mut critic, &real, &mut self.rng)?,
            };
            let pen = tape.scale(pen, spec.lambda_gp);
            gp = tape.item(pen) as f64;
            loss = tape.add(loss, pen)?;
        }
        let value = tape.item(loss) as f64;
        let grads = tape.backward(loss)?;
        self.d.params.zero_grad();
        self.d.accumulate_grads(&db, &grads)?;
        self.opt_d.step(self.d.params.trainable_mut())?;
        self.d.commit_stats(&dr);
        self.d.commit_stats(&df);
        if let Some(c) = spec.clip_threshold {
            losses::weight_clip(self.d.params.trainable_tensors_mut(), c)?;
            let m = self.d.params.max_abs_trainable();
            if m > c {
                return Err(Error::InvalidArgument(format!("clipping left |w| = {m} above {c}")));
            }
            self.max_abs_after_clip = Some(self.max_abs_after_clip.map_or(m, |p| p.max(m)));
        }
        Ok((value, gp))
    }

    fn g_step(&mut self) -> Result<f64> {
        let z = self.latent(self.cfg.batch_size);
        let mut tape = Tape::<f32>::new();
        let gb = self.g.bind(&mut tape, true);
        let zv = tape.constant(z);
        let gf = self.g.forward(&mut tape, &gb, zv, Mode::Train, &mut self.rng)?;
        let db = self.d.bind(&mut tape, false);
        let df = self.d.forward(&mut tape, &db, gf.out(), Mode::Train, &mut self.rng)?;
        let loss = losses::g_loss(&mut tape, &self.cfg.loss, df.out())?;
        let value = tape.item(loss) as f64;
        let grads = tape.backward(loss)?;
        self.g.params.zero_grad();
        self.g.accumulate_grads(&gb, &grads)?;
        self.opt_g.step(self.g.params.trainable_mut())?;
        self.g.commit_stats(&gf);
        Ok(value)
    }

    /// One discriminator step then `k` generator steps. Non-finite losses
    /// skip the update and are logged as NaN; ten in a row abort with
    /// [`Error::Diverged`].
    pub fn step(&mut self) -> Result<StepRecord> {
        let epoch_len = self.epoch_len()?;
        let real = self.real_batch(epoch_len)?;
        let (d_loss, gp_term) = match self.d_step(real) {
            Ok(v) => v,
            Err(e) if is_non_finite(&e) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        let mut g_losses = Vec::with_capacity(self.cfg.gen_disc_rate);
        for _ in 0..self.cfg.gen_disc_rate {
            g_losses.push(match self.g_step() {
                Ok(v) => v,
                Err(e) if is_non_finite(&e) => f64::NAN,
                Err(e) => return Err(e),
            });
        }
        let g_loss = g_losses.iter().sum::<f64>() / g_losses.len() as f64;
        let rec = StepRecord {
            step: self.step,
            epoch: (self.step / epoch_len as u64) as usize,
            d_loss,
            g_loss,
            gp_term,
            wall_ms: if self.cfg.log_wall_time {
                self.wall_seconds() * 1e3
            } else {
                0.0
            },
            g_losses,
        };
        self.step += 1;
        let mut all = vec![d_loss];
        all.extend(&rec.g_losses);
        self.watch.observe(rec.step, &all)?;
        Ok(rec)
    }

    /// Eval-mode samples from a fixed set of latents.
    pub fn samples(&self, n: usize) -> Result<Tensor<f32>> {
        let mut rng = derive_rng(self.cfg.seed, &[SAMPLE_TAG]);
        let dim = self.cfg.arch.latent().expect("gan architecture");
        let z = self.cfg.latent.sample(n, dim, &mut rng);
        self.g.predict(&z)
    }
}

struct GanLogs {
    steps: CsvLog,
    gen: CsvLog,
    gen_step: u64,
}

impl GanLogs {
    fn create(dir: &Path) -> Result<Self> {
        Ok(Self {
            steps: CsvLog::create(&dir.join("steps.csv"), STEP_LOG_HEADER)?,
            gen: CsvLog::create(&dir.join("gen_steps.csv"), "gen_step,step,g_loss")?,
            gen_step: 0,
        })
    }

    fn write(&mut self, r: &StepRecord) -> Result<()> {
        self.steps.row(&r.csv_row())?;
        for g in &r.g_losses {
            self.gen.row(&format!("{},{},{}", self.gen_step, r.step, g))?;
            self.gen_step += 1;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.steps.flush()?;
        self.gen.flush()
    }
}

fn save_samples(t: &GanTrainer, name: &str) -> Result<()> {
    if t.cfg.sample_grid == 0 {
        return Ok(());
    }
    let imgs = unstack(&t.samples(t.cfg.sample_grid)?)?;
    let cols = (t.cfg.sample_grid as f64).sqrt().ceil() as usize;
    super::write_pgm_grid(&imgs, cols, t.cfg.range, &t.cfg.out_dir.join(name))
}

/// Runs `n` steps, logging each; stops early on divergence.
fn run_steps(t: &mut GanTrainer, logs: &mut GanLogs, n: usize, report: &mut RunReport, mut before: impl FnMut(&mut GanTrainer, usize)) -> Result<bool> {
    for i in 0..n {
        before(t, i);
        match t.step() {
            Ok(r) => {
                report.final_d_loss = Some(r.d_loss);
                report.final_g_loss = Some(r.g_loss);
                logs.write(&r)?;
            }
            Err(Error::Diverged { step, detail }) => {
                report.diverged = true;
                report.detail = format!("diverged at step {step}: {detail}");
                return Ok(false);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn finish(t: &GanTrainer, logs: &mut GanLogs, mut report: RunReport) -> Result<RunReport> {
    logs.flush()?;
    report.steps = t.step;
    report.max_abs_after_clip = t.max_abs_after_clip;
    report.out_dir = t.cfg.out_dir.clone();
    report.write(&t.cfg.out_dir)?;
    Ok(report)
}

/// Fixed-resolution adversarial training. A diverged run returns a report
/// marked as such with its logs intact.
pub fn train_gan(cfg: &ExperimentConfig) -> Result<RunReport> {
    if matches!(cfg.arch, ArchConfig::Progan(_)) {
        return train_progressive(cfg);
    }
    prepare_out_dir(cfg)?;
    let corpus = load_corpus(cfg)?;
    let mut t = GanTrainer::new(cfg.clone(), corpus, None)?;
    let mut logs = GanLogs::create(&cfg.out_dir)?;
    let mut report = RunReport::default();
    let epoch_len = t.epoch_len()?;
    for epoch in 0..cfg.epochs {
        if !run_steps(&mut t, &mut logs, epoch_len, &mut report, |_, _| {})? {
            return finish(&t, &mut logs, report);
        }
        logs.flush()?;
        save_samples(&t, &format!("samples_e{epoch:03}.pgm"))?;
        t.checkpoint().save(&cfg.out_dir.join("checkpoint.mrgf"))?;
    }
    finish(&t, &mut logs, report)
}

/// Progressive growing from 4×4 to the target: stabilize at 4, then for
/// every larger resolution a linear fade-in followed by a stabilize phase.
/// Per-resolution wall time goes to `stages.csv`.
pub fn train_progressive(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ArchConfig::Progan(p) = &cfg.arch else {
        return Err(Error::InvalidArgument(format!("{} does not grow progressively", cfg.arch.id())));
    };
    prepare_out_dir(cfg)?;
    let corpus = load_corpus(cfg)?;
    let ladder = progan_ladder(p.target_res)?;
    let mut t = GanTrainer::new(cfg.clone(), corpus, Some(ProganStage::stabilize(ladder[0])))?;
    let mut logs = GanLogs::create(&cfg.out_dir)?;
    let mut stages = CsvLog::create(&cfg.out_dir.join("stages.csv"), "resolution,steps,wall_ms")?;
    let mut report = RunReport::default();
    let epoch_len = t.epoch_len()?;
    for (si, &r) in ladder.iter().enumerate() {
        let clock = Instant::now();
        let before = t.step;
        if si > 0 {
            t.grow(ProganStage::transition(r, 0.0))?;
            let n = cfg.transition_epochs * epoch_len;
            let ok = run_steps(&mut t, &mut logs, n, &mut report, |t, i| t.set_alpha(alpha_at(i, n)))?;
            if !ok {
                return finish(&t, &mut logs, report);
            }
            t.grow(ProganStage::stabilize(r))?;
        }
        let n = cfg.stabilize_epochs * epoch_len;
        if !run_steps(&mut t, &mut logs, n, &mut report, |_, _| {})? {
            return finish(&t, &mut logs, report);
        }
        let ms = clock.elapsed().as_secs_f64() * 1e3;
        stages.row(&format!("{r},{},{ms}", t.step - before))?;
        stages.flush()?;
        report.stage_wall_ms.push((r, ms));
        logs.flush()?;
        save_samples(&t, &format!("samples_r{r:03}.pgm"))?;
        t.checkpoint().save(&cfg.out_dir.join("checkpoint.mrgf"))?;
    }
    finish(&t, &mut logs, report)
}
