//! Evaluation helpers shared by the CLI and the acceptance suite.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use uniisp_tensor::kernels::freq::{fft2_planes, Complex};

use crate::error::{Error, IoContext, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, UniIspModel};
use crate::raster::{Raster, SrgbImage};
use crate::synth::SampleSource;
use crate::train::{train, RunOptions, TrainConfig};

/// Fraction of the maximal radial frequency above which energy counts as
/// high-band.
pub const HIGH_BAND_CUTOFF: f64 = 0.75;

fn signed_freq(u: usize, n: usize) -> f64 {
    let f = if u <= n / 2 { u as f64 } else { u as f64 - n as f64 };
    f / n as f64
}

/// Spectral energy in the top quartile of radial frequencies, summed over
/// channels.
pub fn high_band_energy(img: &Raster) -> f64 {
    let (h, w, c) = img.dims();
    let rmax = 0.5f64.hypot(0.5);
    let mut total = 0.0;
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> =
            (0..h * w).map(|i| Complex::new(img.data()[i * c + ch] as f64, 0.0)).collect();
        fft2_planes(&mut buf, h, w, false);
        for u in 0..h {
            for v in 0..w {
                if signed_freq(u, h).hypot(signed_freq(v, w)) > HIGH_BAND_CUTOFF * rmax {
                    total += buf[u * w + v].norm_sqr();
                }
            }
        }
    }
    total
}

/// `high_band_energy(pred) / high_band_energy(reference)`.
pub fn high_band_ratio(pred: &Raster, reference: &Raster) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(Error::Shape("high-band ratio operands differ in shape".into()));
    }
    let r = high_band_energy(reference);
    if r <= 0.0 {
        return Err(Error::InvalidArgument("reference has no high-band energy".into()));
    }
    Ok(high_band_energy(pred) / r)
}

/// Area under the ROC curve of `scores` (higher means positive) against
/// binary labels, with ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut pos) = (0.0, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
                pos += 1;
            }
        }
        i = j + 1;
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs both classes".into()));
    }
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// A host image with a rectangle replaced by the co-located pixels of
/// `donor`; the mask marks the pasted region.
pub fn make_splice(host: &SrgbImage, donor: &SrgbImage, seed: u64, patch: usize) -> Result<(SrgbImage, Raster)> {
    let (h, w, _) = host.raster().dims();
    if !host.raster().same_shape(donor.raster()) || patch == 0 || patch >= h || patch >= w {
        return Err(Error::InvalidArgument(format!("cannot paste a {patch}px patch into {h}×{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y0, x0) = (rng.gen_range(0..=h - patch), rng.gen_range(0..=w - patch));
    let inside = |y: usize, x: usize| (y0..y0 + patch).contains(&y) && (x0..x0 + patch).contains(&x);
    let img = Raster::from_fn(h, w, 3, |y, x, c| if inside(y, x) { donor.raster().get(y, x, c) } else { host.raster().get(y, x, c) });
    let mask = Raster::from_fn(h, w, 1, |y, x, _| if inside(y, x) { 1.0 } else { 0.0 });
    Ok((SrgbImage::new(img)?, mask))
}

/// Stable key of a training configuration.
pub fn config_key(cfg: &TrainConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(hex::encode(&digest[..8]))
}

pub const FINAL_CHECKPOINT: &str = "final.uisp";

/// Stable key of a model's parameters.
pub fn model_key(model: &UniIspModel) -> String {
    let mut h = Sha256::new();
    for (name, p) in model.params.iter() {
        h.update(name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// Trains `cfg` (optionally fine-tuning `init`) under `cache/<key>/` unless
/// a finished model is already there. Interrupted runs resume from their
/// last checkpoint.
pub fn train_cached(cfg: &TrainConfig, source: &dyn SampleSource, init: Option<&UniIspModel>, cache: &Path, force: bool) -> Result<UniIspModel> {
    let key = match init {
        Some(m) => format!("{}-from-{}", config_key(cfg)?, model_key(m)),
        None => config_key(cfg)?,
    };
    let dir: PathBuf = cache.join(key);
    let done = dir.join(FINAL_CHECKPOINT);
    if force && dir.exists() {
        std::fs::remove_dir_all(&dir).at(&dir)?;
    }
    if done.exists() {
        return Ok(load_checkpoint(&done)?.model);
    }
    std::fs::create_dir_all(&dir).at(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?).at(&dir)?;
    let out = train(cfg, source, &RunOptions { out_dir: Some(dir.clone()), resume: true, init: init.cloned() })?;
    save_checkpoint(&Checkpoint::model_only(out.model.clone()), &done)?;
    Ok(out.model)
}
