//! Segmentation metrics, PCA-based generation metrics and latent
//! interpolation.
//!
//! Generated-image metrics follow one preprocessing convention: rows are
//! centered by the training mean; ρ additionally unit-normalizes each
//! centered row, while σ and δ use the centered rows as they are. The
//! covariance is `XᵀX` with no `1/N` factor.

pub mod linalg;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;
use crate::Rng;

pub use linalg::{symmetric_eigen, Matrix, SymEigen};

/// Eigenvectors used by the realism score.
pub const DEFAULT_PCA_K: usize = 16;

/// Eigenvalues below `λ_max · RANK_TOL` count as zero when checking rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Pixel counts after thresholding both masks at 0.5.
pub fn confusion(pred: &[f32], truth: &[f32]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= 0.5, t >= 0.5) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(TP + TN) / ((TP + FN) + (TN + FP))`.
pub fn accuracy(c: &Confusion) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Domain {
            op: "accuracy",
            detail: "no pixels counted".into(),
        });
    }
    Ok((c.tp + c.tn) as f64 / ((c.tp + c.fn_) + (c.tn + c.fp)) as f64)
}

pub fn dice(c: &Confusion) -> Result<f64> {
    crate::losses::dice_from_counts(c.tp, c.fp, c.fn_)
}

/// Top-`k` principal directions of a set of preprocessed rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    /// Training mean subtracted before projection (zero when the rows were
    /// already preprocessed by the caller).
    pub mean: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// σ of the centered, un-normalized training rows.
    pub source_total_variation: f64,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvectors.len()
    }
}

/// Eigenpairs of `XᵀX`, solved on whichever of `XᵀX` and `XXᵀ` is smaller.
pub fn covariance_eigen(x: &Matrix) -> Result<SymEigen> {
    if x.rows >= x.cols {
        return symmetric_eigen(&x.gram_cols());
    }
    // XXᵀ u = λ u  ⇒  v = Xᵀ u / √λ
    let small = symmetric_eigen(&x.gram_rows())?;
    let mut vectors = Vec::with_capacity(small.values.len());
    for (lam, u) in small.values.iter().zip(&small.vectors) {
        let mut v = vec![0.0; x.cols];
        for (r, &ur) in u.iter().enumerate() {
            for (vj, &xj) in v.iter_mut().zip(x.row(r)) {
                *vj += ur * xj;
            }
        }
        let n = linalg::norm(&v);
        if *lam > 0.0 && n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
        }
        vectors.push(v);
    }
    Ok(SymEigen {
        values: small.values,
        vectors,
    })
}

fn numerical_rank(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&l| l > top * RANK_TOL).count()
}

/// Top-`k` eigenpairs of `XᵀX` for rows already preprocessed by the
/// caller. Fails when fewer than `k` directions carry variance.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<EigenBasis> {
    if k == 0 {
        return Err(Error::InvalidArgument("pca needs k >= 1".into()));
    }
    if x.rows < k {
        return Err(Error::RankDeficient {
            rank: x.rows,
            requested: k,
        });
    }
    let e = covariance_eigen(x)?;
    let rank = numerical_rank(&e.values);
    if rank < k {
        return Err(Error::RankDeficient { rank, requested: k });
    }
    Ok(EigenBasis {
        mean: vec![0.0; x.cols],
        eigenvectors: e.vectors.into_iter().take(k).collect(),
        eigenvalues: e.values.into_iter().take(k).collect(),
        source_total_variation: total_variation_sigma(x),
    })
}

pub fn column_mean(x: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols];
    for r in 0..x.rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= x.rows.max(1) as f64);
    mean
}

pub fn center(x: &Matrix, mean: &[f64]) -> Result<Matrix> {
    if mean.len() != x.cols {
        return Err(Error::ShapeMismatch {
            op: "center",
            lhs: vec![x.rows, x.cols],
            rhs: vec![mean.len()],
        });
    }
    let mut out = x.clone();
    for r in 0..out.rows {
        for (v, m) in out.row_mut(r).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    Ok(out)
}

/// Scales every non-zero row to unit L2 norm.
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let n = linalg::norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Fits the basis for a training corpus of raw rows: center by the
/// corpus mean, unit-normalize, then [`pca_fit`].
pub fn fit_corpus(raw: &Matrix, k: usize) -> Result<EigenBasis> {
    let mean = column_mean(raw);
    let centered = center(raw, &mean)?;
    let mut basis = pca_fit(&normalize_rows(&centered), k)?;
    basis.mean = mean;
    basis.source_total_variation = total_variation_sigma(&centered);
    Ok(basis)
}

/// `ρ = (1/N) Σ_G √(Σ_i (G·E_i)²)` over preprocessed rows.
pub fn realism_rho(basis: &EigenBasis, generated: &Matrix) -> Result<f64> {
    if generated.cols != basis.dim() {
        return Err(Error::ShapeMismatch {
            op: "realism_rho",
            lhs: vec![generated.rows, generated.cols],
            rhs: vec![basis.dim()],
        });
    }
    if generated.rows == 0 {
        return Err(Error::InvalidArgument("no generated rows".into()));
    }
    let mut acc = 0.0;
    for r in 0..generated.rows {
        let g = generated.row(r);
        let s: f64 = basis.eigenvectors.iter().map(|e| linalg::dot(g, e).powi(2)).sum();
        acc += s.sqrt();
    }
    Ok(acc / generated.rows as f64)
}

/// `σ = Tr(XXᵀ)`, the sum of squared entries.
pub fn total_variation_sigma(x: &Matrix) -> f64 {
    x.data.iter().map(|v| v * v).sum()
}

/// Number of eigenvalues of `XᵀX` strictly above `σ / 100`.
pub fn diversity_delta(x: &Matrix) -> Result<usize> {
    let sigma = total_variation_sigma(x);
    let e = covariance_eigen(x)?;
    Ok(e.values.iter().filter(|&&l| l > sigma / 100.0).count())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenEvalReport {
    pub model_id: String,
    pub rho: f64,
    pub sigma: f64,
    pub delta: usize,
    pub n_images: usize,
    pub wall_seconds: f64,
}

impl GenEvalReport {
    pub const CSV_HEADER: &'static str = "model_id,rho,sigma,delta,n_images,wall_seconds";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            self.model_id, self.rho, self.sigma, self.delta, self.n_images, self.wall_seconds
        );
        s
    }
}

/// ρ, σ and δ of raw generated rows against a corpus basis.
pub fn evaluate_generated(model_id: &str, basis: &EigenBasis, raw: &Matrix) -> Result<GenEvalReport> {
    let centered = center(raw, &basis.mean)?;
    let rho = realism_rho(basis, &normalize_rows(&centered))?;
    Ok(GenEvalReport {
        model_id: model_id.into(),
        rho,
        sigma: total_variation_sigma(&centered),
        delta: diversity_delta(&centered)?,
        n_images: raw.rows,
        wall_seconds: 0.0,
    })
}

/// Flattens a `[N, ...]` batch into an `N × D` matrix.
pub fn images_to_matrix(batch: &Tensor<f32>) -> Result<Matrix> {
    let s = batch.shape();
    if s.is_empty() {
        return Err(Error::InvalidArgument("image batch must have a batch axis".into()));
    }
    let n = s[0];
    let d = if n == 0 { 0 } else { batch.len() / n };
    Matrix::from_rows(n, d, batch.data().iter().map(|&v| v as f64).collect())
}

/// Latent distributions for generator inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentKind {
    Uniform,
    Normal,
    /// Standard normal projected onto the unit sphere.
    NormalNormalized,
}

impl LatentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Self::Uniform),
            "normal" => Some(Self::Normal),
            "normal_normalized" => Some(Self::NormalNormalized),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Normal => "normal",
            Self::NormalNormalized => "normal_normalized",
        }
    }

    /// A `[batch, dim]` tensor of latents.
    pub fn sample(self, batch: usize, dim: usize, rng: &mut Rng) -> Tensor<f32> {
        use rand::Rng as _;
        use rand_distr::{Distribution, StandardNormal};
        let mut data = Vec::with_capacity(batch * dim);
        for _ in 0..batch {
            let row: Vec<f64> = match self {
                Self::Uniform => (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                Self::Normal | Self::NormalNormalized => (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
            };
            let scale = if self == Self::NormalNormalized {
                let n = linalg::norm(&row);
                if n > 0.0 {
                    1.0 / n
                } else {
                    1.0
                }
            } else {
                1.0
            };
            data.extend(row.iter().map(|v| (v * scale) as f32));
        }
        Tensor::new(vec![batch, dim], data).expect("length matches")
    }
}

/// Eval-mode generation from a `[B, latent]` batch.
pub fn generate(g: &Model, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    g.predict(z)
}

/// `g((1 - t)·z0 + t·z1)` for `t = 0, 1/(steps-1), ..., 1`, one image per
/// forward pass. Interior points are re-projected onto the unit sphere when
/// `renormalize` is set; the endpoints are used as given.
pub fn latent_interpolate(
    g: &Model,
    z0: &[f32],
    z1: &[f32],
    steps: usize,
    renormalize: bool,
) -> Result<Vec<Tensor<f32>>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if z0.len() != z1.len() {
        return Err(Error::ShapeMismatch {
            op: "latent_interpolate",
            lhs: vec![z0.len()],
            rhs: vec![z1.len()],
        });
    }
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let z: Vec<f32> = if i == 0 {
            z0.to_vec()
        } else if i == steps - 1 {
            z1.to_vec()
        } else {
            let t = i as f64 / (steps - 1) as f64;
            let mut z: Vec<f64> = z0.iter().zip(z1).map(|(&a, &b)| (1.0 - t) * a as f64 + t * b as f64).collect();
            if renormalize {
                let n = linalg::norm(&z);
                if n > 0.0 {
                    z.iter_mut().for_each(|v| *v /= n);
                }
            }
            z.into_iter().map(|v| v as f32).collect()
        };
        let zt = Tensor::new(vec![1, z.len()], z)?;
        out.push(generate(g, &zt)?);
    }
    Ok(out)
}
