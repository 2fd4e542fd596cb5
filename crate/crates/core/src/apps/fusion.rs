//! Mertens-style exposure fusion with a Laplacian-pyramid blend.

use crate::error::{Error, Result};
use crate::raster::{Raster, SrgbImage};

pub const FUSION_LEVELS: usize = 4;
const WELL_EXPOSED_SIGMA: f64 = 0.2;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn blur(img: &Raster) -> Raster {
    let (h, w, c) = img.dims();
    let mut tmp = Raster::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v: f64 = BINOMIAL.iter().enumerate().map(|(k, t)| t * img.get(y, clamp_index(x as isize + k as isize - 2, w), ch) as f64).sum();
                tmp.set(y, x, ch, v as f32);
            }
        }
    }
    let mut out = Raster::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v: f64 = BINOMIAL.iter().enumerate().map(|(k, t)| t * tmp.get(clamp_index(y as isize + k as isize - 2, h), x, ch) as f64).sum();
                out.set(y, x, ch, v as f32);
            }
        }
    }
    out
}

fn downsample(img: &Raster) -> Raster {
    let b = blur(img);
    let (h, w, c) = img.dims();
    Raster::from_fn(h.div_ceil(2), w.div_ceil(2), c, |y, x, ch| b.get(2 * y, 2 * x, ch))
}

/// Bilinear upsampling to an explicit size (pixel-centre aligned).
fn upsample(img: &Raster, h: usize, w: usize) -> Raster {
    let (sh, sw, c) = img.dims();
    Raster::from_fn(h, w, c, |y, x, ch| {
        let fy = ((y as f64 + 0.5) * sh as f64 / h as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        let fx = ((x as f64 + 0.5) * sw as f64 / w as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = img.get(y0, x0, ch) as f64 * (1.0 - tx) + img.get(y0, x1, ch) as f64 * tx;
        let bot = img.get(y1, x0, ch) as f64 * (1.0 - tx) + img.get(y1, x1, ch) as f64 * tx;
        (top * (1.0 - ty) + bot * ty) as f32
    })
}

fn zip(a: &Raster, b: &Raster, f: impl Fn(f32, f32) -> f32) -> Raster {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Raster::new(a.height(), a.width(), a.channels(), data).expect("same shape")
}

fn gaussian_pyramid(img: &Raster, levels: usize) -> Vec<Raster> {
    let mut p = vec![img.clone()];
    while p.len() < levels {
        let last = p.last().expect("non-empty");
        if last.height() < 2 || last.width() < 2 {
            break;
        }
        p.push(downsample(last));
    }
    p
}

fn laplacian_pyramid(img: &Raster, levels: usize) -> Vec<Raster> {
    let g = gaussian_pyramid(img, levels);
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() - 1 {
        let up = upsample(&g[i + 1], g[i].height(), g[i].width());
        out.push(zip(&g[i], &up, |a, b| a - b));
    }
    out.push(g[g.len() - 1].clone());
    out
}

/// Mertens weights: contrast · saturation · well-exposedness, per pixel.
pub fn fusion_weights(img: &Raster) -> Raster {
    let (h, w, _) = img.dims();
    let gray = Raster::from_fn(h, w, 1, |y, x, _| {
        let p = img.pixel(y, x);
        (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) as f32
    });
    Raster::from_fn(h, w, 1, |y, x, _| {
        let g = |dy: isize, dx: isize| gray.get(clamp_index(y as isize + dy, h), clamp_index(x as isize + dx, w), 0) as f64;
        let contrast = (g(-1, 0) + g(1, 0) + g(0, -1) + g(0, 1) - 4.0 * g(0, 0)).abs();
        let p = img.pixel(y, x);
        let mu = p.iter().map(|&v| v as f64).sum::<f64>() / 3.0;
        let sat = (p.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / 3.0).sqrt();
        let well: f64 = p.iter().map(|&v| (-(v as f64 - 0.5).powi(2) / (2.0 * WELL_EXPOSED_SIGMA * WELL_EXPOSED_SIGMA)).exp()).product();
        (contrast * sat * well + 1e-12) as f32
    })
}

/// Fuses differently exposed frames. A single frame is returned unchanged.
pub fn exposure_fusion(frames: &[SrgbImage]) -> Result<SrgbImage> {
    let Some(first) = frames.first() else {
        return Err(Error::InvalidArgument("exposure fusion needs at least one frame".into()));
    };
    if frames.iter().any(|f| !f.raster().same_shape(first.raster())) {
        return Err(Error::Shape("fusion frames differ in shape".into()));
    }
    if frames.len() == 1 {
        return Ok(first.clone());
    }
    let (h, w, _) = first.raster().dims();
    let weights: Vec<Raster> = frames.iter().map(|f| fusion_weights(f.raster())).collect();
    let mut norm = Raster::zeros(h, w, 1);
    for wt in &weights {
        norm = zip(&norm, wt, |a, b| a + b);
    }
    let mut blended: Option<Vec<Raster>> = None;
    for (f, wt) in frames.iter().zip(&weights) {
        let wn = zip(wt, &norm, |a, b| a / b);
        let gw = gaussian_pyramid(&wn, FUSION_LEVELS);
        let lp = laplacian_pyramid(f.raster(), FUSION_LEVELS);
        let contrib: Vec<Raster> = lp
            .iter()
            .zip(&gw)
            .map(|(l, g)| Raster::from_fn(l.height(), l.width(), 3, |y, x, c| l.get(y, x, c) * g.get(y, x, 0)))
            .collect();
        blended = Some(match blended {
            None => contrib,
            Some(acc) => acc.iter().zip(&contrib).map(|(a, b)| zip(a, b, |x, y| x + y)).collect(),
        });
    }
    let pyr = blended.expect("at least two frames");
    let mut out = pyr[pyr.len() - 1].clone();
    for lvl in pyr[..pyr.len() - 1].iter().rev() {
        let up = upsample(&out, lvl.height(), lvl.width());
        out = zip(lvl, &up, |a, b| a + b);
    }
    SrgbImage::new(out.map(|v| v.clamp(0.0, 1.0)))
}
