//! Realism (ρ), total variation (σ) and diversity (δ) of a generated set
//! against a corpus basis, without training anything: a held-out slice of
//! the corpus scores as realistic, uniform noise does not.

use mrisynth::data::{synthetic_blobs, ValueRange};
use mrisynth::eval::{evaluate_generated, fit_corpus, images_to_matrix, Matrix, DEFAULT_PCA_K};
use mrisynth::Rng;
use rand::{Rng as _, SeedableRng};

fn main() -> mrisynth::Result<()> {
    let mut rng = Rng::seed_from_u64(0);
    let corpus = synthetic_blobs(120, 16, 2, ValueRange::Signed, &mut rng)?;
    let all = images_to_matrix(&corpus.tensor(&(0..120).collect::<Vec<_>>())?)?;
    let train = Matrix::from_rows(100, all.cols, all.data[..100 * all.cols].to_vec())?;
    let held = Matrix::from_rows(20, all.cols, all.data[100 * all.cols..].to_vec())?;
    let basis = fit_corpus(&train, DEFAULT_PCA_K)?;

    let noise: Vec<f64> = (0..20 * all.cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = Matrix::from_rows(20, all.cols, noise)?;

    println!("{}", mrisynth::eval::GenEvalReport::CSV_HEADER);
    println!("{}", evaluate_generated("held-out", &basis, &held)?.csv_row());
    println!("{}", evaluate_generated("noise", &basis, &noise)?.csv_row());
    Ok(())
}
