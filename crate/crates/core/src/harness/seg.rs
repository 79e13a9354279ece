//! Segmentation training with a held-out third for validation and the
//! final Dice/accuracy report.

use std::time::Instant;

use rand::SeedableRng;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::{load_corpus, prepare_out_dir, CsvLog, RunReport};
use crate::autodiff::{Tape, Var};
use crate::data::{split_indices, BatchPlan, Batcher, ImageCorpus};
use crate::error::{Error, Result};
use crate::eval::{accuracy, confusion, dice, Confusion};
use crate::layers::Mode;
use crate::losses::{self, LossKind};
use crate::models::{Built, Model};
use crate::optim::OptimizerState;
use crate::tensor::{Real, Tensor};
use crate::Rng;

pub const DICE_SMOOTH: f64 = 1.0;
pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,val_dice,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_dice: f64,
    pub wall_ms: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc, self.val_dice, self.wall_ms
        )
    }
}

fn seg_loss<T: Real>(tape: &mut Tape<T>, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
    match kind {
        LossKind::Dice => losses::dice_loss(tape, pred, target, DICE_SMOOTH),
        LossKind::Bce => losses::bce(tape, pred, target),
        k => Err(Error::InvalidArgument(format!("{} is not a segmentation loss", k.name()))),
    }
}

pub struct SegTrainer {
    pub cfg: ExperimentConfig,
    pub net: Model,
    pub opt: OptimizerState,
    pub rng: Rng,
    pub step: u64,
    corpus: ImageCorpus,
    train: Vec<usize>,
    test: Vec<usize>,
    started: Instant,
}

impl SegTrainer {
    pub fn new(cfg: ExperimentConfig, corpus: ImageCorpus) -> Result<Self> {
        if corpus.masks.is_none() {
            return Err(Error::InvalidArgument("segmentation needs a corpus with masks".into()));
        }
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let Built::Segmenter(net) = cfg.arch.build(None, &mut rng)? else {
            return Err(Error::InvalidArgument(format!("{} is not a segmenter", cfg.arch.id())));
        };
        let (train, test) = split_indices(corpus.len());
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(format!("{} images cannot be split", corpus.len())));
        }
        Ok(Self {
            opt: cfg.optim.state(),
            cfg,
            net,
            rng,
            step: 0,
            corpus,
            train,
            test,
            started: Instant::now(),
        })
    }

    pub fn wall_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.resolved(),
            stage: None,
            step: self.step,
            wall_seconds: self.wall_seconds(),
            nets: vec![("net".into(), self.net.clone())],
            optims: vec![("net".into(), self.opt.clone())],
            rng: self.rng.clone(),
        }
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    fn batcher(&self) -> Result<Batcher<'_>> {
        let plan = BatchPlan {
            batch_size: self.cfg.batch_size,
            steps_per_epoch: self.cfg.steps_per_epoch,
            augment: Some(self.cfg.augment_profile()).filter(|p| !p.is_identity()),
        };
        Batcher::new(&self.corpus, self.train.clone(), plan, self.cfg.seed)
    }

    pub fn epoch_len(&self) -> Result<usize> {
        Ok(self.batcher()?.epoch_len())
    }

    /// One optimizer step; returns the loss and the batch confusion counts.
    fn train_step(&mut self, x: Tensor<f32>, y: Tensor<f32>) -> Result<(f64, Confusion)> {
        let mut tape = Tape::<f32>::new();
        let bound = self.net.bind(&mut tape, true);
        let xv = tape.constant(x);
        let yv = tape.constant(y.clone());
        let fwd = self.net.forward(&mut tape, &bound, xv, Mode::Train, &mut self.rng)?;
        let loss = seg_loss(&mut tape, self.cfg.loss.kind, fwd.out(), yv)?;
        let value = tape.item(loss).as_f64();
        let conf = confusion(tape.value(fwd.out()).data(), y.data())?;
        let grads = tape.backward(loss)?;
        self.net.params.zero_grad();
        self.net.accumulate_grads(&bound, &grads)?;
        self.opt.step(self.net.params.trainable_mut())?;
        self.net.commit_stats(&fwd);
        self.step += 1;
        Ok((value, conf))
    }

    /// Mean loss and pooled confusion over `indices`, eval mode.
    pub fn evaluate(&self, indices: &[usize]) -> Result<(f64, Confusion)> {
        let masks = self.corpus.masks.as_ref().expect("checked in new");
        let mut total = 0.0;
        let mut conf = Confusion::default();
        for chunk in indices.chunks(self.cfg.batch_size.max(1)) {
            let x = self.corpus.tensor(chunk)?;
            let y = crate::data::stack(chunk.iter().map(|&i| &masks[i]))?;
            let p = self.net.predict(&x)?;
            let mut tape = Tape::<f32>::new();
            let pv = tape.constant(p.clone());
            let yv = tape.constant(y.clone());
            let l = seg_loss(&mut tape, self.cfg.loss.kind, pv, yv)?;
            total += tape.item(l).as_f64() * chunk.len() as f64;
            conf.merge(&confusion(p.data(), y.data())?);
        }
        Ok((total / indices.len() as f64, conf))
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let n = self.epoch_len()?;
        let mut loss = 0.0;
        let mut conf = Confusion::default();
        for i in 0..n {
            let batch = self.batcher()?.batch(epoch, i)?;
            let y = batch.masks.expect("segmentation corpus has masks");
            let (l, c) = self.train_step(batch.images, y)?;
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    op: "segmentation loss",
                    phase: "training",
                });
            }
            loss += l;
            conf.merge(&c);
        }
        let (val_loss, vc) = self.evaluate(&self.test)?;
        Ok(EpochRecord {
            epoch,
            train_loss: loss / n as f64,
            train_acc: accuracy(&conf)?,
            val_loss,
            val_acc: accuracy(&vc)?,
            val_dice: dice(&vc)?,
            wall_ms: 0.0,
        })
    }
}

/// Trains, keeps the lowest-validation-loss parameters in `best.mrgf` and
/// reports Dice and accuracy of those parameters on the held-out third.
pub fn train_segmentation(cfg: &ExperimentConfig) -> Result<RunReport> {
    prepare_out_dir(cfg)?;
    let corpus = load_corpus(cfg)?;
    let mut t = SegTrainer::new(cfg.clone(), corpus)?;
    let mut log = CsvLog::create(&cfg.out_dir.join("epochs.csv"), EPOCH_LOG_HEADER)?;
    let started = Instant::now();
    let mut report = RunReport {
        out_dir: cfg.out_dir.clone(),
        ..RunReport::default()
    };
    let mut best: Option<(f64, Model)> = None;
    for epoch in 0..cfg.epochs {
        let mut rec = match t.run_epoch(epoch) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                log.flush()?;
                report.diverged = true;
                report.detail = format!("epoch {epoch}: {e}");
                report.steps = t.step;
                report.write(&cfg.out_dir)?;
                return Ok(report);
            }
            Err(e) => return Err(e),
        };
        if cfg.log_wall_time {
            rec.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        log.row(&rec.csv_row())?;
        log.flush()?;
        if best.as_ref().is_none_or(|(b, _)| rec.val_loss < *b) {
            best = Some((rec.val_loss, t.net.clone()));
            report.best_epoch = Some(epoch);
            report.best_val_loss = Some(rec.val_loss);
            t.checkpoint().save(&cfg.out_dir.join("best.mrgf"))?;
        }
    }
    if let Some((_, net)) = best {
        t.net = net;
    }
    let test = t.test_indices().to_vec();
    let (_, conf) = t.evaluate(&test)?;
    report.test_dice = Some(dice(&conf)?);
    report.test_accuracy = Some(accuracy(&conf)?);
    report.steps = t.step;
    report.write(&cfg.out_dir)?;
    Ok(report)
}
