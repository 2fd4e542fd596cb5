use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{mat3_apply, SRGB_TO_XYZ};
use crate::error::{Error, Result};
use crate::raster::{Raster, XyzImage};

pub const MIN_SCENE_SIZE: usize = 16;

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let level = rng.gen_range(lo..hi);
    let chroma = rng.gen_range(0.2..0.9);
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = level * (1.0 - chroma + chroma * rng.gen_range(0.0..1.0));
    }
    c
}

/// Synthetic radiance: smooth gradient, flat color patches, band-limited
/// multiplicative texture and a few small highlights, built in linear sRGB
/// and converted to XYZ clamped to `[0, 1]`.
pub fn generate_scene(seed: u64, height: usize, width: usize) -> Result<XyzImage> {
    if height < MIN_SCENE_SIZE || width < MIN_SCENE_SIZE {
        return Err(Error::InvalidArgument(format!("scene must be at least {MIN_SCENE_SIZE}×{MIN_SCENE_SIZE}, got {height}×{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2545_f491_4f6c_dd1d);
    let (h, w) = (height as f64, width as f64);

    let corners = [random_color(&mut rng, 0.05, 0.45), random_color(&mut rng, 0.05, 0.45), random_color(&mut rng, 0.05, 0.45), random_color(&mut rng, 0.05, 0.45)];
    let mut lin = Raster::from_fn(height, width, 3, |y, x, c| {
        let (u, v) = (x as f64 / (w - 1.0), y as f64 / (h - 1.0));
        let top = corners[0][c] * (1.0 - u) + corners[1][c] * u;
        let bot = corners[2][c] * (1.0 - u) + corners[3][c] * u;
        (top * (1.0 - v) + bot * v) as f32
    });

    let patches = rng.gen_range(3..8);
    for _ in 0..patches {
        let color = random_color(&mut rng, 0.03, 0.6);
        let cy = rng.gen_range(0.0..h);
        let cx = rng.gen_range(0.0..w);
        let ry = rng.gen_range(0.08..0.3) * h;
        let rx = rng.gen_range(0.08..0.3) * w;
        let disk = rng.gen_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for (c, &v) in color.iter().enumerate() {
                        lin.set(y, x, c, v as f32);
                    }
                }
            }
        }
    }

    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let freq = rng.gen_range(0.12..0.45);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            (freq * theta.cos(), freq * theta.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.03..0.08))
        })
        .collect();
    for y in 0..height {
        for x in 0..width {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + ph).sin())
                .sum();
            for c in 0..3 {
                let v = lin.get(y, x, c) as f64 * (1.0 + t);
                lin.set(y, x, c, v as f32);
            }
        }
    }

    let highlights = rng.gen_range(0..3);
    for _ in 0..highlights {
        let cy = rng.gen_range(0.0..h);
        let cx = rng.gen_range(0.0..w);
        let radius = rng.gen_range(0.8..2.0);
        let peak = rng.gen_range(0.3..0.5);
        for y in 0..height {
            for x in 0..width {
                let d2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (radius * radius);
                if d2 < 9.0 {
                    let add = (peak * (-0.5 * d2).exp()) as f32;
                    for c in 0..3 {
                        lin.set(y, x, c, lin.get(y, x, c) + add);
                    }
                }
            }
        }
    }

    for px in lin.pixels_mut() {
        let xyz = mat3_apply(&SRGB_TO_XYZ, [px[0] as f64, px[1] as f64, px[2] as f64]);
        for (o, v) in px.iter_mut().zip(xyz) {
            *o = v.clamp(0.0, 1.0) as f32;
        }
    }
    XyzImage::new(lin)
}
