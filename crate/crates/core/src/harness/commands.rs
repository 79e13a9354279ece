//! Evaluation, interpolation and the architecture inspection commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::fit_resolution;
use crate::data::{derive_rng, save_image, tile, unstack, Image, ImageCorpus, ValueRange};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_generated, fit_corpus, generate, images_to_matrix, latent_interpolate, GenEvalReport, LatentKind,
    Matrix, DEFAULT_PCA_K,
};
use crate::models::{ArchConfig, ProganStage};

const EVAL_TAG: u64 = 0xE1;
const INTERP_TAG: u64 = 0xE2;
const GEN_CHUNK: usize = 64;

/// Writes `images` as one 16-bit PGM grid.
pub fn write_pgm_grid(images: &[Image], cols: usize, range: ValueRange, path: &Path) -> Result<()> {
    let grid = tile(images, cols, range.min())?;
    save_image(&grid, range, path)
}

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// One line per network: `ID total N trainable M non-trainable K`.
/// Counts come from the layouts, so nothing is allocated.
pub fn params_report(arch: &ArchConfig, stage: Option<ProganStage>) -> Result<String> {
    let mut s = String::new();
    for m in arch.layouts(stage)? {
        let (total, trainable) = m.declared_params();
        let _ = writeln!(
            s,
            "{} total {} trainable {} non-trainable {}",
            m.id,
            group_thousands(total),
            group_thousands(trainable),
            group_thousands(total - trainable)
        );
    }
    Ok(s)
}

/// Row tables (`label | act | shape`) for every network of `arch`.
pub fn shapes_report(arch: &ArchConfig, stage: Option<ProganStage>) -> Result<String> {
    let mut s = String::new();
    for m in arch.layouts(stage)? {
        let _ = writeln!(s, "# {}", m.id);
        s.push_str(&m.dump()?);
        if !s.ends_with('\n') {
            s.push('\n');
        }
    }
    Ok(s)
}

fn generator(ck: &Checkpoint) -> Result<&crate::models::Model> {
    ck.net("g")
        .map_err(|_| Error::Checkpoint("not a generator checkpoint".into()))
}

fn latent_dim(ck: &Checkpoint) -> Result<(LatentKind, usize, ValueRange)> {
    let cfg = ck.experiment()?;
    let dim = cfg
        .arch
        .latent()
        .ok_or_else(|| Error::Checkpoint("not a generator checkpoint".into()))?;
    Ok((cfg.latent, dim, cfg.range))
}

/// Fits the PCA basis on the training corpus, generates `n` images
/// (default: as many as the corpus holds) and scores them.
pub fn evaluate(ckpt: &Path, corpus: &Path, n: Option<usize>, seed: u64) -> Result<GenEvalReport> {
    let ck = Checkpoint::load(ckpt)?;
    let g = generator(&ck)?;
    let (latent, dim, range) = latent_dim(&ck)?;
    let res = g.forward_shapes(&[dim])?.last().map(|r| r.shape[1]).unwrap_or(0);
    let corpus = fit_resolution(ImageCorpus::load(corpus, range)?, res)?;
    evaluate_loaded(&ck, &corpus, n, seed, latent, dim)
}

/// [`evaluate`] on an already loaded checkpoint and corpus.
pub fn evaluate_loaded(
    ck: &Checkpoint,
    corpus: &ImageCorpus,
    n: Option<usize>,
    seed: u64,
    latent: LatentKind,
    dim: usize,
) -> Result<GenEvalReport> {
    if corpus.len() < DEFAULT_PCA_K {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} images; the basis needs at least {DEFAULT_PCA_K}",
            corpus.len()
        )));
    }
    let g = generator(ck)?;
    let raw = images_to_matrix(&corpus.tensor(&(0..corpus.len()).collect::<Vec<_>>())?)?;
    let basis = fit_corpus(&raw, DEFAULT_PCA_K)?;
    let n = n.unwrap_or(corpus.len());
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to generate".into()));
    }
    let mut rng = derive_rng(seed, &[EVAL_TAG]);
    let mut rows = Vec::with_capacity(n * raw.cols);
    let mut left = n;
    while left > 0 {
        let b = left.min(GEN_CHUNK);
        let imgs = generate(g, &latent.sample(b, dim, &mut rng))?;
        let m = images_to_matrix(&imgs)?;
        if m.cols != raw.cols {
            return Err(Error::ShapeMismatch {
                op: "evaluate",
                lhs: vec![m.cols],
                rhs: vec![raw.cols],
            });
        }
        rows.extend(m.data);
        left -= b;
    }
    let gen = Matrix::from_rows(n, raw.cols, rows)?;
    let cfg = ck.experiment()?;
    let mut report = evaluate_generated(cfg.arch.id(), &basis, &gen)?;
    report.wall_seconds = ck.wall_seconds;
    Ok(report)
}

/// Writes `pairs` rows of `steps` images walking between two random
/// latents; returns the grid files, one per pair. The single frames sit
/// next to them as `pairPP_stepSS.pgm`.
pub fn interpolate(ckpt: &Path, pairs: usize, steps: usize, out_dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(ckpt)?;
    let g = generator(&ck)?;
    let (latent, dim, range) = latent_dim(&ck)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let mut rng = derive_rng(seed, &[INTERP_TAG, p as u64]);
        let z = latent.sample(2, dim, &mut rng);
        let (z0, z1) = z.data().split_at(dim);
        let frames = latent_interpolate(g, z0, z1, steps, latent == LatentKind::NormalNormalized)?;
        let mut imgs = Vec::with_capacity(steps);
        for (s, f) in frames.iter().enumerate() {
            let img = unstack(f)?.remove(0);
            save_image(&img, range, &out_dir.join(format!("pair{p:02}_step{s:02}.pgm")))?;
            imgs.push(img);
        }
        let path = out_dir.join(format!("pair{p:02}.pgm"));
        write_pgm_grid(&imgs, steps, range, &path)?;
        written.push(path);
    }
    Ok(written)
}
