//! Images, corpora, augmentation and seeded batching.

mod augment;
pub mod pgm;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

pub use augment::{augment, sample_transform, AugmentProfile, Transform};
pub use pgm::{decode_pgm, encode_pgm, load_image, save_image};

/// Declared intensity range of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// `[0, 1]`
    Unit,
    /// `[-1, 1]`
    Signed,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Self::Unit => (0.0, 1.0),
            Self::Signed => (-1.0, 1.0),
        }
    }

    pub fn min(self) -> f32 {
        self.bounds().0 as f32
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit" => Some(Self::Unit),
            "signed" => Some(Self::Signed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Unit => "unit",
            Self::Signed => "signed",
        }
    }
}

/// Single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::InvalidShape {
                op: "image",
                detail: format!("{} samples for {h}x{w}", data.len()),
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Self {
        Self {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    pub fn rescaled(&self, from: ValueRange, to: ValueRange) -> Image {
        let data = rescale(&self.data, from.bounds(), to.bounds()).expect("declared ranges are non-degenerate");
        Image {
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Mean over `f×f` blocks.
    pub fn downsample_avg(&self, f: usize) -> Result<Image> {
        if f == 0 || self.h % f != 0 || self.w % f != 0 {
            return Err(Error::InvalidArgument(format!("cannot downsample {}x{} by {f}", self.h, self.w)));
        }
        let (h, w) = (self.h / f, self.w / f);
        let mut data = vec![0f32; h * w];
        let inv = 1.0 / (f * f) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0f64;
                for dy in 0..f {
                    for dx in 0..f {
                        acc += self.at(y * f + dy, x * f + dx) as f64;
                    }
                }
                data[y * w + x] = (acc * inv) as f32;
            }
        }
        Image::new(h, w, data)
    }

    /// Nearest-neighbour enlargement by `f`.
    pub fn upsample_nearest(&self, f: usize) -> Image {
        let (h, w) = (self.h * f, self.w * f);
        let data = (0..h * w).map(|i| self.at(i / w / f, (i % w) / f)).collect();
        Image { h, w, data }
    }
}

/// Affine map between ranges.
pub fn rescale(x: &[f32], from: (f64, f64), to: (f64, f64)) -> Result<Vec<f32>> {
    let span = from.1 - from.0;
    if !(span.is_finite() && span != 0.0) || !(to.1 - to.0).is_finite() {
        return Err(Error::Domain {
            op: "rescale",
            detail: format!("degenerate source range {from:?}"),
        });
    }
    let k = (to.1 - to.0) / span;
    Ok(x.iter().map(|&v| (to.0 + (v as f64 - from.0) * k) as f32).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageCorpus {
    pub images: Vec<Image>,
    pub masks: Option<Vec<Image>>,
    pub range: ValueRange,
    pub names: Vec<String>,
}

impl ImageCorpus {
    pub fn new(images: Vec<Image>, masks: Option<Vec<Image>>, range: ValueRange) -> Result<Self> {
        let names = (0..images.len()).map(|i| format!("img{i:05}.pgm")).collect();
        let c = Self {
            images,
            masks,
            range,
            names,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.h, i.w))
    }

    pub fn validate(&self) -> Result<()> {
        let Some((h, w)) = self.shape() else {
            return Ok(());
        };
        let (lo, hi) = self.range.bounds();
        for (i, img) in self.images.iter().enumerate() {
            if (img.h, img.w) != (h, w) {
                return Err(Error::InvalidArgument(format!(
                    "image {i} is {}x{}, corpus is {h}x{w}",
                    img.h, img.w
                )));
            }
            if img.data.iter().any(|&v| !(lo as f32..=hi as f32).contains(&v)) {
                return Err(Error::InvalidArgument(format!("image {i} has values outside {lo}..{hi}")));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.images.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} masks for {} images",
                    masks.len(),
                    self.images.len()
                )));
            }
            for (i, m) in masks.iter().enumerate() {
                if (m.h, m.w) != (h, w) || m.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument(format!("mask {i} is not a binary {h}x{w} mask")));
                }
            }
        }
        Ok(())
    }

    /// Images as an `[N, 1, H, W]` tensor.
    pub fn tensor(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        stack(indices.iter().map(|&i| &self.images[i]))
    }

    /// Writes `NAME.pgm` files, a `masks/` sibling when present and a
    /// `manifest.txt` listing the images.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::from("# image corpus\n");
        for (img, name) in self.images.iter().zip(&self.names) {
            save_image(img, self.range, &dir.join(name))?;
            manifest.push_str(name);
            manifest.push('\n');
        }
        if let Some(masks) = &self.masks {
            let mdir = dir.join("masks");
            std::fs::create_dir_all(&mdir)?;
            for (m, name) in masks.iter().zip(&self.names) {
                save_image(m, ValueRange::Unit, &mdir.join(name))?;
            }
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Loads a directory of PGM files, or the files listed in a manifest.
    /// Masks are read from a sibling `masks/` directory when it exists and
    /// re-binarized at 0.5.
    pub fn load(path: &Path, range: ValueRange) -> Result<Self> {
        let (root, files) = if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
                .collect();
            files.sort();
            (path.to_path_buf(), files)
        } else {
            let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            (root, read_manifest(path)?)
        };
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!("no images found at {}", path.display())));
        }
        let mut images = Vec::with_capacity(files.len());
        let mut names = Vec::with_capacity(files.len());
        for f in &files {
            images.push(load_image(f, range)?);
            names.push(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        }
        let mdir = root.join("masks");
        let masks = if mdir.is_dir() {
            let mut masks = Vec::with_capacity(names.len());
            for n in &names {
                let m = load_image(&mdir.join(n), ValueRange::Unit)?;
                masks.push(binarize(&m));
            }
            Some(masks)
        } else {
            None
        };
        let c = Self {
            images,
            masks,
            range,
            names,
        };
        c.validate()?;
        Ok(c)
    }
}

pub fn binarize(m: &Image) -> Image {
    Image {
        h: m.h,
        w: m.w,
        data: m.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
    }
}

/// Stacks images into `[N, 1, H, W]`.
pub fn stack<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut hw = None;
    for img in images {
        match hw {
            None => hw = Some((img.h, img.w)),
            Some(s) if s != (img.h, img.w) => {
                return Err(Error::InvalidArgument("cannot stack images of different sizes".into()))
            }
            _ => {}
        }
        data.extend_from_slice(&img.data);
        n += 1;
    }
    let (h, w) = hw.unwrap_or((0, 0));
    Tensor::new(vec![n, 1, h, w], data)
}

/// Splits a `[N, 1, H, W]` tensor back into images.
pub fn unstack(t: &Tensor<f32>) -> Result<Vec<Image>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::InvalidArgument(format!("expected [N, 1, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    t.data().chunks(h * w).map(|c| Image::new(h, w, c.to_vec())).collect()
}

/// Lays images out on a grid `cols` wide with a one-pixel border of
/// `fill`.
pub fn tile(images: &[Image], cols: usize, fill: f32) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to tile".into()))?;
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (h, w) = (first.h, first.w);
    let (gh, gw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut out = Image::filled(gh, gw, fill);
    for (i, img) in images.iter().enumerate() {
        if (img.h, img.w) != (h, w) {
            return Err(Error::InvalidArgument("cannot tile images of different sizes".into()));
        }
        let (oy, ox) = ((i / cols) * (h + 1) + 1, (i % cols) * (w + 1) + 1);
        for y in 0..h {
            out.data[(oy + y) * gw + ox..(oy + y) * gw + ox + w].copy_from_slice(&img.data[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}

/// Applies an image transform to every sample of a `[N, 1, H, W]` batch.
pub fn map_batch(t: &Tensor<f32>, f: impl Fn(&Image) -> Result<Image>) -> Result<Tensor<f32>> {
    let imgs = unstack(t)?.iter().map(f).collect::<Result<Vec<_>>>()?;
    stack(&imgs)
}

/// Relative paths listed in a manifest, resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| root.join(l))
        .collect())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for a `(seed, path...)` coordinate.
pub fn derive_rng(seed: u64, path: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ p);
    }
    Rng::seed_from_u64(h)
}

/// Fixed 2/3–1/3 train/test split by index hash.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| splitmix64(i as u64) % 3 != 2)
}

/// Desk-scale stand-in corpus: one Gaussian blob per image, centered near
/// one of `modes` fixed locations, with its half-maximum support as mask.
pub fn synthetic_blobs(n: usize, res: usize, modes: usize, range: ValueRange, rng: &mut Rng) -> Result<ImageCorpus> {
    if modes == 0 || res < 4 {
        return Err(Error::InvalidArgument(format!("need modes >= 1 and res >= 4, got {modes}, {res}")));
    }
    let r = res as f64;
    let centers: Vec<(f64, f64)> = (0..modes)
        .map(|m| {
            if modes == 1 {
                (r / 2.0, r / 2.0)
            } else {
                let a = std::f64::consts::TAU * m as f64 / modes as f64;
                (r / 2.0 + r / 4.0 * a.cos(), r / 2.0 + r / 4.0 * a.sin())
            }
        })
        .collect();
    let (lo, hi) = range.bounds();
    let mut images = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let (cx, cy) = centers[rng.random_range(0..modes)];
        let jx: f64 = StandardNormal.sample(rng);
        let jy: f64 = StandardNormal.sample(rng);
        let (cx, cy) = (cx + jx * r / 32.0, cy + jy * r / 32.0);
        let s = r / 10.0 * rng.random_range(0.85..1.15);
        let amp = rng.random_range(0.8..1.0);
        let mut img = Vec::with_capacity(res * res);
        let mut mask = Vec::with_capacity(res * res);
        for y in 0..res {
            for x in 0..res {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let g = (-d2 / (2.0 * s * s)).exp();
                img.push((lo + (hi - lo) * amp * g) as f32);
                mask.push(if g >= 0.5 { 1.0 } else { 0.0 });
            }
        }
        images.push(Image::new(res, res, img)?);
        masks.push(Image::new(res, res, mask)?);
    }
    ImageCorpus::new(images, Some(masks), range)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Batches per epoch, sampled with replacement; `None` walks a fresh
    /// permutation and yields `⌊N / batch⌋` batches.
    pub steps_per_epoch: Option<usize>,
    pub augment: Option<AugmentProfile>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Option<Tensor<f32>>,
    pub indices: Vec<usize>,
}

const ORDER_TAG: u64 = 1;
const BATCH_TAG: u64 = 2;

/// Random-access batch source: batch `i` of epoch `e` depends only on
/// `(seed, e, i)`, so a resumed run can jump straight to its position.
pub struct Batcher<'a> {
    corpus: &'a ImageCorpus,
    subset: Vec<usize>,
    plan: BatchPlan,
    seed: u64,
    order: Option<(usize, Vec<usize>)>,
}

impl<'a> Batcher<'a> {
    pub fn new(corpus: &'a ImageCorpus, subset: Vec<usize>, plan: BatchPlan, seed: u64) -> Result<Self> {
        if plan.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if plan.steps_per_epoch.is_none() && plan.batch_size > subset.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the {} available images",
                plan.batch_size,
                subset.len()
            )));
        }
        if subset.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        if let Some(p) = &plan.augment {
            p.validate()?;
        }
        Ok(Self {
            corpus,
            subset,
            plan,
            seed,
            order: None,
        })
    }

    pub fn epoch_len(&self) -> usize {
        self.plan
            .steps_per_epoch
            .unwrap_or(self.subset.len() / self.plan.batch_size)
    }

    pub fn batch(&mut self, epoch: usize, i: usize) -> Result<Batch> {
        let b = self.plan.batch_size;
        let mut rng = derive_rng(self.seed, &[BATCH_TAG, epoch as u64, i as u64]);
        let picks: Vec<usize> = match self.plan.steps_per_epoch {
            Some(_) => (0..b).map(|_| self.subset[rng.random_range(0..self.subset.len())]).collect(),
            None => {
                if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    let mut order = self.subset.clone();
                    order.shuffle(&mut derive_rng(self.seed, &[ORDER_TAG, epoch as u64]));
                    self.order = Some((epoch, order));
                }
                let order = &self.order.as_ref().expect("set above").1;
                order[i * b..(i + 1) * b].to_vec()
            }
        };
        let mut imgs = Vec::with_capacity(b);
        let mut masks = Vec::with_capacity(b);
        for &k in &picks {
            let img = &self.corpus.images[k];
            let mask = self.corpus.masks.as_ref().map(|m| &m[k]);
            match &self.plan.augment {
                Some(p) => {
                    let (a, m) = augment(img, mask, p, self.corpus.range, &mut rng);
                    imgs.push(a);
                    if let Some(m) = m {
                        masks.push(m);
                    }
                }
                None => {
                    imgs.push(img.clone());
                    if let Some(m) = mask {
                        masks.push(m.clone());
                    }
                }
            }
        }
        Ok(Batch {
            images: stack(&imgs)?,
            masks: if self.corpus.masks.is_some() { Some(stack(&masks)?) } else { None },
            indices: picks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_endpoints() {
        let v = rescale(&[0.0, 255.0, 127.5], (0.0, 255.0), (-1.0, 1.0)).unwrap();
        assert_eq!(v, vec![-1.0, 1.0, 0.0]);
        assert!(rescale(&[1.0], (2.0, 2.0), (0.0, 1.0)).is_err());
        let back = rescale(&v, (-1.0, 1.0), (0.0, 255.0)).unwrap();
        assert!((back[2] - 127.5).abs() < 1e-6);
    }

    #[test]
    fn split_is_two_thirds() {
        let (tr, te) = split_indices(3000);
        assert_eq!(tr.len() + te.len(), 3000);
        assert!((tr.len() as f64 / 3000.0 - 2.0 / 3.0).abs() < 0.03);
        assert_eq!(split_indices(3000).0, tr);
    }

    #[test]
    fn blobs_in_range_with_binary_masks() {
        let mut rng = Rng::seed_from_u64(1);
        let c = synthetic_blobs(20, 16, 2, ValueRange::Signed, &mut rng).unwrap();
        c.validate().unwrap();
        assert!(c.masks.as_ref().unwrap().iter().all(|m| m.data.iter().any(|&v| v == 1.0)));
    }

    #[test]
    fn batches_deterministic_and_sized() {
        let mut rng = Rng::seed_from_u64(1);
        let c = synthetic_blobs(10, 8, 1, ValueRange::Unit, &mut rng).unwrap();
        let plan = BatchPlan {
            batch_size: 2,
            steps_per_epoch: Some(1000),
            augment: Some(AugmentProfile::segmentation()),
        };
        let mut a = Batcher::new(&c, (0..10).collect(), plan.clone(), 9).unwrap();
        let mut b = Batcher::new(&c, (0..10).collect(), plan, 9).unwrap();
        assert_eq!(a.epoch_len(), 1000);
        for i in [0, 1, 999] {
            assert_eq!(a.batch(0, i).unwrap().images, b.batch(0, i).unwrap().images);
        }
        let walk = BatchPlan {
            batch_size: 3,
            steps_per_epoch: None,
            augment: None,
        };
        assert_eq!(Batcher::new(&c, (0..10).collect(), walk.clone(), 0).unwrap().epoch_len(), 3);
        let big = BatchPlan { batch_size: 11, ..walk };
        assert!(Batcher::new(&c, (0..10).collect(), big, 0).is_err());
    }

    #[test]
    fn down_then_up() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.downsample_avg(2).unwrap().data, vec![0.5]);
        assert_eq!(img.upsample_nearest(2).at(3, 0), 1.0);
    }
}
