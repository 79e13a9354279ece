#![allow(dead_code)]

pub mod grads;
pub mod pca;
pub mod tables;

use std::path::Path;
use std::process::{Command, Output};

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrisynth"))
        .args(args)
        .output()
        .expect("spawn mrisynth")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Parses `ID total N trainable M non-trainable K` lines into
/// `(id, total, trainable)`.
pub fn parse_params(text: &str) -> Vec<(String, u64, u64)> {
    let num = |s: &str| s.replace(',', "").parse::<u64>().unwrap_or(u64::MAX);
    text.lines()
        .filter_map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.as_slice() {
                [id, "total", total, "trainable", tr, ..] => Some((id.to_string(), num(total), num(tr))),
                _ => None,
            }
        })
        .collect()
}

/// A short desk-scale GAN config rooted in `out`.
pub fn gan_config(out: &Path, extra: &str) -> mrisynth::harness::ExperimentConfig {
    let base = format!(
        "model.arch = dcgan-mini\ntrain.batch_size = 8\ntrain.steps_per_epoch = 10\ntrain.epochs = 1\n\
         data.synthetic.n = 64\ndata.synthetic.res = 16\ndata.synthetic.modes = 2\nseed = 5\nout_dir = {}\n",
        out.display()
    );
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = base
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    mrisynth::harness::ExperimentConfig::parse_str(&text).expect("valid config")
}
