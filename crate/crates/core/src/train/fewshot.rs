use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::trainer::{SelfSample, Trainer};
use crate::error::{Error, Result};
use crate::model::{embedding_name, UniIspModel};
use crate::raster::{SrgbImage, XyzImage};
use crate::synth::ExifParams;
use uniisp_tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FewShotSample {
    pub srgb: SrgbImage,
    pub xyz: XyzImage,
    pub exif: ExifParams,
}

fn l1(a: &crate::raster::Raster, b: &crate::raster::Raster) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
}

/// Warm start: the existing embedding (or the neutral one) with the lowest
/// `L_Inv + L_For` on the samples.
fn nearest_embedding(model: &UniIspModel, samples: &[FewShotSample]) -> Result<Tensor<f32>> {
    let mut best: Option<(f64, Option<&str>)> = None;
    let candidates = std::iter::once(None).chain(model.cameras().iter().map(|c| Some(c.as_str())));
    for cam in candidates {
        let mut loss = 0.0;
        for s in samples {
            loss += l1(model.inverse_isp(&s.srgb, cam, &s.exif)?.raster(), s.xyz.raster());
            loss += l1(model.forward_isp(&s.xyz, cam, &s.exif)?.raster(), s.srgb.raster());
        }
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, cam));
        }
    }
    Ok(match best.and_then(|(_, cam)| cam).and_then(|cam| model.embedding(cam)) {
        Some(e) => e.clone(),
        None => Tensor::zeros(&[model.config.embed_dim]),
    })
}

/// Adds `camera` to a trained model and fits only its embedding on a few
/// `(sRGB, XYZ, EXIF)` samples with `L_Inv + L_For`, starting from the
/// closest existing embedding. Every other parameter, including existing
/// embeddings, stays bit-identical.
pub fn extend_few_shot(
    model: &UniIspModel,
    camera: &str,
    samples: &[FewShotSample],
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<UniIspModel> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("few-shot extension needs at least one sample".into()));
    }
    if model.has_camera(camera) {
        return Err(Error::CameraExists(camera.to_string()));
    }
    let mut m = model.clone();
    m.params.set_all_trainable(false);
    m.register_camera(camera)?;
    m.params.get_mut(&embedding_name(camera)).expect("just registered").value = nearest_embedding(model, samples)?;
    debug_assert_eq!(m.params.numel_trainable(), m.params.value(&embedding_name(camera))?.len());
    let cfg = TrainConfig {
        steps: steps.max(1),
        lr_max: lr,
        lr_min: lr * 0.1,
        lambda_nrr: 0.0,
        batch_size: batch_size.max(1),
        mix_self: 1.0,
        mix_cross: 0.0,
        seed,
        model: m.config.clone(),
        patch_size: m.config.multiple(),
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x94d0_49bb_1331_11eb);
    let mut trainer = Trainer::new(cfg, m)?;
    for _ in 0..steps {
        let batch: Vec<SelfSample> = (0..batch_size.max(1))
            .map(|_| {
                let s = &samples[rng.gen_range(0..samples.len())];
                SelfSample { srgb: s.srgb.raster().clone(), xyz: s.xyz.raster().clone(), exif: s.exif, camera: camera.to_string() }
            })
            .collect();
        trainer.train_step_self(&batch)?;
    }
    let mut out = trainer.model;
    for (name, p) in out.params.iter_mut() {
        p.trainable = model.params.get(name).is_none_or(|orig| orig.trainable);
    }
    Ok(out)
}
