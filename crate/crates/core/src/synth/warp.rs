use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{Raster, SrgbImage};

/// Result of [`warp_with_bias`].
#[derive(Clone, Debug, PartialEq)]
pub struct Warped {
    pub image: SrgbImage,
    /// One channel, 1 = valid.
    pub mask: Raster,
    /// Two channels `(dx, dy)` in pixels.
    pub flow: Raster,
}

/// Bilinear sample at a fractional position, coordinates clamped to the frame.
pub fn bilinear(img: &Raster, y: f64, x: f64, c: usize) -> f64 {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(y0, x0, c) as f64 * (1.0 - fx) + img.get(y0, x1, c) as f64 * fx;
    let bot = img.get(y1, x0, c) as f64 * (1.0 - fx) + img.get(y1, x1, c) as f64 * fx;
    top * (1.0 - fy) + bot * fy
}

fn smooth_flow(seed: u64, h: usize, w: usize, max_disp: f64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c909);
    let mut terms = Vec::new();
    for comp in 0..2 {
        for _ in 0..3 {
            terms.push((
                comp,
                rng.gen_range(-1.5..1.5) / w as f64,
                rng.gen_range(-1.5..1.5) / h as f64,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            ));
        }
    }
    let mut flow = Raster::zeros(h, w, 2);
    for y in 0..h {
        for x in 0..w {
            for &(comp, fx, fy, ph, amp) in &terms {
                let v = amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + ph).sin();
                flow.set(y, x, comp, flow.get(y, x, comp) + v as f32);
            }
        }
    }
    let peak = flow.pixels().map(|p| (p[0] as f64).hypot(p[1] as f64)).fold(0.0, f64::max);
    let target = max_disp * rng.gen_range(0.6..1.0);
    let scale = if peak > 0.0 { target / peak } else { 0.0 };
    // Rounding slack keeps the f32 norm within the bound.
    flow.map(|v| (v as f64 * scale * (1.0 - 1e-6)) as f32)
}

/// Simulates an imperfectly synchronized second camera and its optical-flow
/// alignment: the image is displaced by a smooth random field `f`, then
/// resampled back with `-f`. Both steps are bilinear, so the result is
/// geometrically aligned but low-pass filtered. A pixel is valid iff its
/// source coordinate `p - f(p)` lies in the frame.
pub fn warp_with_bias(img: &SrgbImage, seed: u64, max_disp: f64) -> Result<Warped> {
    if !(max_disp >= 0.0 && max_disp.is_finite()) {
        return Err(Error::InvalidArgument(format!("max_disp must be non-negative, got {max_disp}")));
    }
    let src = img.raster();
    let (h, w, c) = src.dims();
    if max_disp == 0.0 {
        return Ok(Warped { image: img.clone(), mask: Raster::filled(h, w, 1, 1.0), flow: Raster::zeros(h, w, 2) });
    }
    let flow = smooth_flow(seed, h, w, max_disp);
    let mut displaced = Raster::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (flow.get(y, x, 0) as f64, flow.get(y, x, 1) as f64);
            for ch in 0..c {
                displaced.set(y, x, ch, bilinear(src, y as f64 + dy, x as f64 + dx, ch) as f32);
            }
        }
    }
    let mut out = Raster::zeros(h, w, c);
    let mut mask = Raster::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (flow.get(y, x, 0) as f64, flow.get(y, x, 1) as f64);
            let (sy, sx) = (y as f64 - dy, x as f64 - dx);
            let inside = sy >= 0.0 && sy <= (h - 1) as f64 && sx >= 0.0 && sx <= (w - 1) as f64;
            mask.set(y, x, 0, if inside { 1.0 } else { 0.0 });
            for ch in 0..c {
                out.set(y, x, ch, bilinear(&displaced, sy, sx, ch) as f32);
            }
        }
    }
    Ok(Warped { image: SrgbImage::new(out)?, mask, flow })
}
