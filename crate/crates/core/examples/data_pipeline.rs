//! Synthetic image/mask corpus, random affine augmentation and 16-bit PGM
//! output.

use mrisynth::data::{augment, synthetic_blobs, tile, AugmentProfile, ValueRange};
use mrisynth::data::{save_image, Batcher, BatchPlan};
use mrisynth::Rng;
use rand::SeedableRng;

fn main() -> mrisynth::Result<()> {
    let mut rng = Rng::seed_from_u64(1);
    let corpus = synthetic_blobs(12, 32, 3, ValueRange::Signed, &mut rng)?;
    let dir = std::env::temp_dir().join("mrisynth_data_example");
    corpus.save(&dir.join("corpus"))?;

    let profile = AugmentProfile::segmentation();
    let masks = corpus.masks.as_ref().expect("synthetic blobs carry masks");
    let mut images = Vec::new();
    let mut aug_masks = Vec::new();
    for (img, m) in corpus.images.iter().zip(masks).take(6) {
        let (a, am) = augment(img, Some(m), &profile, corpus.range, &mut rng);
        images.push(a);
        aug_masks.push(am.expect("mask in, mask out"));
    }
    save_image(&tile(&images, 3, -1.0)?, ValueRange::Signed, &dir.join("augmented.pgm"))?;
    save_image(&tile(&aug_masks, 3, 0.0)?, ValueRange::Unit, &dir.join("augmented_masks.pgm"))?;

    let plan = BatchPlan {
        batch_size: 4,
        steps_per_epoch: None,
        augment: None,
    };
    let mut batches = Batcher::new(&corpus, (0..corpus.len()).collect(), plan, 7)?;
    for i in 0..batches.epoch_len() {
        let b = batches.batch(0, i)?;
        println!("batch {i}: images {:?}", b.images.shape());
    }
    println!("wrote {}", dir.display());
    Ok(())
}
