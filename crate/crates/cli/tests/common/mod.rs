#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniisp_core::model::{ModelConfig, UniIspModel};
use uniisp_core::{Raster, SrgbImage};

pub fn tiny_config() -> ModelConfig {
    ModelConfig { scales: 2, base_channels: 4, blocks_per_scale: 1, embed_dim: 16, context_tokens: 4, attn_dim: 4, gfmb_hidden: 4, ..Default::default() }
}

/// Tiny model with `cameras` registered and the backbone perturbed so the
/// embeddings influence the output.
pub fn tiny_model(cameras: usize) -> UniIspModel {
    let mut m = UniIspModel::new(tiny_config(), 3).unwrap();
    for i in 0..cameras {
        m.register_camera(&format!("cam{i}")).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, p) in m.params.iter_mut() {
        if !name.starts_with("emb.") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
    }
    m
}

pub fn test_image(h: usize, w: usize) -> SrgbImage {
    SrgbImage::new(Raster::from_fn(h, w, 3, |y, x, c| 0.1 + 0.8 * (((y * 7 + x * 3 + c * 5) % 23) as f32 / 23.0))).unwrap()
}
