//! Brute-force PCA and metric oracle on nalgebra's symmetric eigensolver.

use mrisynth::eval::{self, Matrix};
use mrisynth::Rng;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub fn to_na(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows, x.cols, &x.data)
}

/// Eigenvalues of `XᵀX` in descending order with their eigenvectors.
pub fn eigen_desc(x: &DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let e = SymmetricEigen::new(x.transpose() * x);
    let mut pairs: Vec<(f64, Vec<f64>)> = e
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, e.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

pub fn sigma(x: &DMatrix<f64>) -> f64 {
    (x * x.transpose()).trace()
}

pub fn delta(x: &DMatrix<f64>) -> usize {
    let s = sigma(x);
    eigen_desc(x).iter().filter(|(l, _)| *l > s / 100.0).count()
}

pub fn rho(vectors: &[Vec<f64>], g: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..g.nrows() {
        let s: f64 = vectors
            .iter()
            .map(|e| e.iter().enumerate().map(|(j, v)| v * g[(r, j)]).sum::<f64>().powi(2))
            .sum();
        acc += s.sqrt();
    }
    acc / g.nrows() as f64
}

/// Gaussian corpus with a random per-column scale, so the spectrum is
/// spread out.
pub fn corpus(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let scale: Vec<f64> = (0..cols).map(|_| rng.random_range(0.2..3.0)).collect();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        for s in &scale {
            let z: f64 = StandardNormal.sample(rng);
            data.push(z * s + 0.3);
        }
    }
    Matrix::from_rows(rows, cols, data).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Default)]
pub struct OracleStats {
    pub eigen: f64,
    pub residual: f64,
    pub rho: f64,
    pub sigma: f64,
    pub sigma_frobenius: f64,
    pub delta_mismatches: usize,
}

impl OracleStats {
    pub fn worst(&self) -> f64 {
        self.eigen.max(self.residual).max(self.rho).max(self.sigma)
    }
}

/// Runs one seeded corpus through `pca_fit`, `realism_rho`,
/// `total_variation_sigma` and `diversity_delta` and folds the relative
/// errors against the oracle into `stats`.
pub fn check_corpus(seed: u64, stats: &mut OracleStats) -> mrisynth::Result<()> {
    let mut rng = Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=40);
    let d = rng.random_range(2..=16);
    let raw = corpus(n, d, &mut rng);
    let mean = eval::column_mean(&raw);
    let centered = eval::center(&raw, &mean)?;
    let x = eval::normalize_rows(&centered);
    // centering removes one direction when n <= d
    let rank = d.min(n - 1);
    let k = rng.random_range(1..=rank);

    let basis = eval::pca_fit(&x, k)?;
    let xn = to_na(&x);
    let oracle = eigen_desc(&xn);
    let gram = xn.transpose() * &xn;
    let top = oracle[0].0;
    for (i, (l, v)) in basis.eigenvalues.iter().zip(&basis.eigenvectors).enumerate() {
        stats.eigen = stats.eigen.max(rel(*l, oracle[i].0));
        let v = nalgebra::DVector::from_column_slice(v);
        let r = (&gram * &v - &v * *l).norm() / top;
        stats.residual = stats.residual.max(r);
    }

    let generated = eval::normalize_rows(&eval::center(&corpus(rng.random_range(1..20), d, &mut rng), &mean)?);
    let oracle_vectors: Vec<Vec<f64>> = oracle.iter().take(k).map(|(_, v)| v.clone()).collect();
    let got = eval::realism_rho(&basis, &generated)?;
    stats.rho = stats.rho.max(rel(got, rho(&oracle_vectors, &to_na(&generated))));

    let cn = to_na(&centered);
    let s = eval::total_variation_sigma(&centered);
    stats.sigma = stats.sigma.max(rel(s, sigma(&cn)));
    stats.sigma_frobenius = stats.sigma_frobenius.max(rel(s, cn.norm_squared()));
    if eval::diversity_delta(&centered)? != delta(&cn) {
        stats.delta_mismatches += 1;
    }
    Ok(())
}
