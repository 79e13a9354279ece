//! The published architecture tables as `(label, act, shape)` rows, typed
//! in by hand. Repeated blocks appear once, as in the tables.

pub type Row = (&'static str, &'static str, &'static str);

pub const UNET: &[Row] = &[
    ("Input image", "-", "1 × 128 × 128"),
    ("Conv 3×3", "BN+ReLU", "32 × 128 × 128"),
    ("Conv 3×3", "BN+ReLU", "32 × 128 × 128"),
    ("Downsample", "-", "32 × 64 × 64"),
    ("Conv 3×3", "BN+ReLU", "64 × 64 × 64"),
    ("Conv 3×3", "BN+ReLU", "64 × 64 × 64"),
    ("Downsample", "-", "64 × 32 × 32"),
    ("Conv 3×3", "BN+ReLU", "128 × 32 × 32"),
    ("Conv 3×3", "BN+ReLU", "128 × 32 × 32"),
    ("Downsample", "-", "128 × 16 × 16"),
    ("Conv 3×3", "BN+ReLU", "256 × 16 × 16"),
    ("Conv 3×3", "BN+ReLU", "256 × 16 × 16"),
    ("Downsample", "-", "256 × 8 × 8"),
    ("Conv 3×3", "BN+ReLU", "512 × 8 × 8"),
    ("Conv 3×3", "BN+ReLU", "512 × 8 × 8"),
    ("Conv Trans 3×3", "-", "256 × 16 × 16"),
    ("Concatenate l4", "-", "512 × 16 × 16"),
    ("Conv 3×3", "BN+ReLU", "256 × 16 × 16"),
    ("Conv 3×3", "BN+ReLU", "256 × 16 × 16"),
    ("Conv Trans 3×3", "-", "128 × 32 × 32"),
    ("Concatenate l3", "-", "256 × 32 × 32"),
    ("Conv 3×3", "BN+ReLU", "128 × 32 × 32"),
    ("Conv 3×3", "BN+ReLU", "128 × 32 × 32"),
    ("Conv Trans 3×3", "-", "64 × 64 × 64"),
    ("Concatenate l2", "-", "128 × 64 × 64"),
    ("Conv 3×3", "BN+ReLU", "64 × 64 × 64"),
    ("Conv 3×3", "BN+ReLU", "64 × 64 × 64"),
    ("Conv Trans 3×3", "-", "32 × 128 × 128"),
    ("Concatenate l1", "-", "64 × 128 × 128"),
    ("Conv 3×3", "BN+ReLU", "32 × 128 × 128"),
    ("Conv 3×3", "BN+ReLU", "32 × 128 × 128"),
    ("Conv 1×1", "Sigmoid", "1 × 128 × 128"),
];

pub const DCGAN_G: &[Row] = &[
    ("Latent vector", "-", "256 × 1 × 1"),
    ("Dense", "BN+ReLU", "256 × 8 × 8"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 16 × 16"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 16 × 16"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 32 × 32"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 32 × 32"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 64 × 64"),
    ("Conv Trans 5×5", "BN+ReLU", "256 × 64 × 64"),
    ("Conv Trans 5×5", "BN+ReLU", "128 × 128 × 128"),
    ("Conv Trans 5×5", "BN+ReLU", "64 × 256 × 256"),
    ("Conv Trans 5×5", "Tanh", "1 × 256 × 256"),
];

pub const DCGAN_D: &[Row] = &[
    ("Input image", "-", "1 × 256 × 256"),
    ("Conv 5×5", "LReLU", "64 × 128 × 128"),
    ("Conv 5×5", "BN+LReLU", "128 × 64 × 64"),
    ("Conv 5×5", "BN+LReLU", "256 × 32 × 32"),
    ("Conv 5×5", "BN+LReLU", "512 × 16 × 16"),
    ("Conv 5×5", "BN+LReLU", "1024 × 8 × 8"),
    ("Dense", "LReLU", "1024 × 1 × 1"),
    ("Dense", "Sigmoid", "1 × 1 × 1"),
];

pub const SRRESGAN_G: &[Row] = &[
    ("Latent vector", "-", "256 × 1 × 1"),
    ("Dense", "BN+ReLU", "64 × 16 × 16"),
    ("×16 Conv 3×3", "BN+ReLU", "64 × 16 × 16"),
    ("×16 Conv 3×3", "BN", "64 × 16 × 16"),
    ("×16 Add", "-", "64 × 16 × 16"),
    ("-", "BN+ReLU", "64 × 16 × 16"),
    ("Add", "-", "64 × 16 × 16"),
    ("Conv 3×3", "-", "256 × 16 × 16"),
    ("PixelShuffle", "BN+ReLU", "64 × 32 × 32"),
    ("Conv 3×3", "-", "256 × 32 × 32"),
    ("PixelShuffle", "BN+ReLU", "64 × 64 × 64"),
    ("Conv 3×3", "-", "256 × 64 × 64"),
    ("PixelShuffle", "BN+ReLU", "64 × 128 × 128"),
    ("Conv 3×3", "-", "256 × 128 × 128"),
    ("PixelShuffle", "BN+ReLU", "64 × 256 × 256"),
    ("Conv 9×9", "Tanh", "1 × 256 × 256"),
];

pub const SRRESGAN_D: &[Row] = &[
    ("Input image", "-", "1 × 256 × 256"),
    ("Conv 4×4", "LReLU", "32 × 128 × 128"),
    ("×2 Conv 3×3", "LReLU", "32 × 128 × 128"),
    ("×2 Conv 3×3", "-", "32 × 128 × 128"),
    ("×2 Add", "LReLU", "32 × 128 × 128"),
    ("Conv 4×4", "LReLU", "64 × 64 × 64"),
    ("×2 Conv 3×3", "LReLU", "64 × 64 × 64"),
    ("×2 Conv 3×3", "-", "64 × 64 × 64"),
    ("×2 Add", "LReLU", "64 × 64 × 64"),
    ("Conv 4×4", "LReLU", "128 × 32 × 32"),
    ("×2 Conv 3×3", "LReLU", "128 × 32 × 32"),
    ("×2 Conv 3×3", "-", "128 × 32 × 32"),
    ("×2 Add", "LReLU", "128 × 32 × 32"),
    ("Conv 4×4", "LReLU", "256 × 16 × 16"),
    ("×2 Conv 3×3", "LReLU", "256 × 16 × 16"),
    ("×2 Conv 3×3", "-", "256 × 16 × 16"),
    ("×2 Add", "LReLU", "256 × 16 × 16"),
    ("Conv 4×4", "LReLU", "512 × 8 × 8"),
    ("×2 Conv 3×3", "LReLU", "512 × 8 × 8"),
    ("×2 Conv 3×3", "-", "512 × 8 × 8"),
    ("×2 Add", "LReLU", "512 × 8 × 8"),
    ("Conv 4×4", "LReLU", "1024 × 4 × 4"),
    ("×2 Conv 3×3", "LReLU", "1024 × 4 × 4"),
    ("×2 Conv 3×3", "-", "1024 × 4 × 4"),
    ("×2 Add", "LReLU", "1024 × 4 × 4"),
    ("Conv 3×3", "LReLU", "2048 × 2 × 2"),
    ("Dense", "Sigmoid", "1 × 1 × 1"),
];

pub const PROGAN_G: &[Row] = &[
    ("Latent vector", "-", "512 × 1 × 1"),
    ("Conv 4×4", "LReLU", "512 × 4 × 4"),
    ("Conv 3×3", "PN+LReLU", "512 × 4 × 4"),
    ("Upsample", "-", "512 × 8 × 8"),
    ("Conv 5×5", "PN+LReLU", "512 × 8 × 8"),
    ("Conv 5×5", "PN+LReLU", "512 × 8 × 8"),
    ("Upsample", "-", "512 × 16 × 16"),
    ("Conv 5×5", "PN+LReLU", "256 × 16 × 16"),
    ("Conv 5×5", "PN+LReLU", "256 × 16 × 16"),
    ("Upsample", "-", "256 × 32 × 32"),
    ("Conv 5×5", "PN+LReLU", "128 × 32 × 32"),
    ("Conv 5×5", "PN+LReLU", "128 × 32 × 32"),
    ("Upsample", "-", "128 × 64 × 64"),
    ("Conv 5×5", "PN+LReLU", "64 × 64 × 64"),
    ("Conv 5×5", "PN+LReLU", "64 × 64 × 64"),
    ("Upsample", "-", "64 × 128 × 128"),
    ("Conv 5×5", "PN+LReLU", "32 × 128 × 128"),
    ("Conv 5×5", "PN+LReLU", "32 × 128 × 128"),
    ("Upsample", "-", "32 × 256 × 256"),
    ("Conv 5×5", "PN+LReLU", "16 × 256 × 256"),
    ("Conv 5×5", "PN+LReLU", "16 × 256 × 256"),
    ("Conv 1×1", "Tanh", "1 × 256 × 256"),
];

pub const PROGAN_D: &[Row] = &[
    ("Input image", "-", "1 × 256 × 256"),
    ("Conv 1×1", "LReLU", "16 × 256 × 256"),
    ("Conv 5×5", "LReLU", "16 × 256 × 256"),
    ("Conv 5×5", "-", "32 × 256 × 256"),
    ("Downsample", "LReLU", "32 × 128 × 128"),
    ("Conv 5×5", "LReLU", "32 × 128 × 128"),
    ("Conv 5×5", "-", "64 × 128 × 128"),
    ("Downsample", "LReLU", "64 × 64 × 64"),
    ("Conv 5×5", "LReLU", "64 × 64 × 64"),
    ("Conv 5×5", "-", "128 × 64 × 64"),
    ("Downsample", "LReLU", "128 × 32 × 32"),
    ("Conv 5×5", "LReLU", "128 × 32 × 32"),
    ("Conv 5×5", "-", "256 × 32 × 32"),
    ("Downsample", "LReLU", "256 × 16 × 16"),
    ("Conv 5×5", "LReLU", "256 × 16 × 16"),
    ("Conv 5×5", "-", "512 × 16 × 16"),
    ("Downsample", "LReLU", "512 × 8 × 8"),
    ("Conv 5×5", "LReLU", "512 × 8 × 8"),
    ("Conv 5×5", "-", "512 × 8 × 8"),
    ("Downsample", "LReLU", "512 × 4 × 4"),
    ("Minibatch std", "-", "513 × 4 × 4"),
    ("Conv 3×3", "LReLU", "512 × 4 × 4"),
    ("Conv 4×4", "LReLU", "512 × 1 × 1"),
    ("Dense", "Sigmoid", "1 × 1 × 1"),
];

/// `(arch, [(network id, table)])` for the four canonical architectures.
pub fn canonical() -> Vec<(&'static str, Vec<(&'static str, &'static [Row])>)> {
    vec![
        ("unet", vec![("unet", UNET)]),
        ("dcgan", vec![("dcgan.g", DCGAN_G), ("dcgan.d", DCGAN_D)]),
        ("srresgan", vec![("srresgan.g", SRRESGAN_G), ("srresgan.d", SRRESGAN_D)]),
        ("progan", vec![("progan.g", PROGAN_G), ("progan.d", PROGAN_D)]),
    ]
}

/// Splits `shapes` output into `(network id, rows)` blocks.
pub fn parse_shapes(text: &str) -> Vec<(String, Vec<(String, String, String)>)> {
    let mut out: Vec<(String, Vec<(String, String, String)>)> = Vec::new();
    for line in text.lines() {
        if let Some(id) = line.strip_prefix("# ") {
            out.push((id.trim().to_string(), Vec::new()));
        } else if !line.trim().is_empty() {
            let cols: Vec<String> = line.split('|').map(|c| c.trim().to_string()).collect();
            if let (Some(block), [label, act, shape]) = (out.last_mut(), cols.as_slice()) {
                block.1.push((label.clone(), act.clone(), shape.clone()));
            }
        }
    }
    out
}

/// Compares `shapes` output for one architecture against its tables;
/// returns the first mismatch.
pub fn compare(text: &str, expected: &[(&str, &[Row])]) -> Result<usize, String> {
    let got = parse_shapes(text);
    if got.len() != expected.len() {
        return Err(format!("{} networks printed, {} expected", got.len(), expected.len()));
    }
    let mut rows = 0;
    for ((id, rows_got), (want_id, want)) in got.iter().zip(expected) {
        if id != want_id {
            return Err(format!("network {id}, expected {want_id}"));
        }
        if rows_got.len() != want.len() {
            return Err(format!("{id}: {} rows, table has {}", rows_got.len(), want.len()));
        }
        for (i, (g, w)) in rows_got.iter().zip(want.iter()).enumerate() {
            if g.2 != w.2 || g.1 != w.1 {
                return Err(format!("{id} row {i}: got {} | {}, table {} | {}", g.1, g.2, w.1, w.2));
            }
        }
        rows += want.len();
    }
    Ok(rows)
}
