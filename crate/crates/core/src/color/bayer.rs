use uniisp_tensor::kernels::conv::reflect_index;

use super::mat3_apply;
use crate::error::{Error, Result};
use crate::raster::{Raster, XyzImage};

/// Colour filter array layout, named by the 2×2 tile read row by row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaPattern {
    /// Channel (0 = R, 1 = G, 2 = B) sampled at `(y, x)`.
    pub fn channel_at(self, y: usize, x: usize) -> usize {
        let tile = match self {
            CfaPattern::Rggb => [0, 1, 1, 2],
            CfaPattern::Bggr => [2, 1, 1, 0],
            CfaPattern::Grbg => [1, 0, 2, 1],
            CfaPattern::Gbrg => [1, 2, 0, 1],
        };
        tile[(y % 2) * 2 + x % 2]
    }
}

/// Single-plane mosaic with its as-shot white balance and camera-to-XYZ matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerImage {
    pub data: Raster,
    pub pattern: CfaPattern,
    pub wb_gains: [f64; 3],
    pub cam_to_xyz: [[f64; 3]; 3],
}

impl BayerImage {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.data.dims();
        if c != 1 {
            return Err(Error::InvalidImage(format!("mosaic must have one channel, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidImage(format!("mosaic dimensions must be even, got {h}×{w}")));
        }
        if self.wb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument(format!("white-balance gains must be positive: {:?}", self.wb_gains)));
        }
        if super::invert3(&self.cam_to_xyz).is_none() {
            return Err(Error::InvalidArgument("camera-to-XYZ matrix is singular".into()));
        }
        if !self.data.all_finite() {
            return Err(Error::InvalidImage("mosaic has non-finite values".into()));
        }
        Ok(())
    }
}

const GREEN_KERNEL: [[f64; 3]; 3] = [[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]];
const RED_BLUE_KERNEL: [[f64; 3]; 3] = [[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]];

/// Fixed early raw stage: per-site white balance, bilinear demosaic with
/// reflect borders (which preserve CFA phase), then the camera-to-XYZ matrix.
/// Negative matrix outputs are clamped to zero.
pub fn early_isp(raw: &BayerImage) -> Result<XyzImage> {
    raw.validate()?;
    let (h, w, _) = raw.data.dims();
    let mut planes = vec![vec![0.0f64; h * w]; 3];
    for y in 0..h {
        for x in 0..w {
            let ch = raw.pattern.channel_at(y, x);
            planes[ch][y * w + x] = raw.data.get(y, x, 0) as f64 * raw.wb_gains[ch];
        }
    }
    let mut out = Raster::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0.0f64; 3];
            for (ch, v) in rgb.iter_mut().enumerate() {
                let k = if ch == 1 { &GREEN_KERNEL } else { &RED_BLUE_KERNEL };
                for (ky, row) in k.iter().enumerate() {
                    let sy = reflect_index(y as isize + ky as isize - 1, h);
                    for (kx, &t) in row.iter().enumerate() {
                        if t != 0.0 {
                            let sx = reflect_index(x as isize + kx as isize - 1, w);
                            *v += t * planes[ch][sy * w + sx];
                        }
                    }
                }
            }
            let xyz = mat3_apply(&raw.cam_to_xyz, rgb);
            for (c, v) in xyz.iter().enumerate() {
                out.set(y, x, c, v.max(0.0) as f32);
            }
        }
    }
    XyzImage::new(out)
}
