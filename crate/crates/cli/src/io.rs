//! Image files and base64 PNG payloads.
//!
//! sRGB images travel as PNG (8- or 16-bit in, 16-bit out). XYZ images are
//! stored in PNG divided by [`XYZ_PNG_SCALE`] so the D65 white fits; use
//! `.imgf` for lossless float storage.

use std::io::Cursor;
use std::path::Path;

use anyhow::{bail, Context, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use uniisp_core::{imgf, Raster, SrgbImage, XyzImage};

pub const XYZ_PNG_SCALE: f32 = 2.0;

/// Decoded image dimensions, checked before full decoding.
pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    let reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    reader.into_dimensions().context("not a PNG image")
}

/// PNG bytes to an RGB raster in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).context("not a PNG image")?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok(Raster::new(h as usize, w as usize, 3, rgb.into_raw())?)
}

fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// 16-bit PNG of a 1- or 3-channel raster, values clamped to `[0, 1]`.
pub fn encode_png(r: &Raster) -> Result<Vec<u8>> {
    let (h, w, c) = r.dims();
    let data: Vec<u16> = r.data().iter().map(|&v| quantize16(v)).collect();
    let mut out = Cursor::new(Vec::new());
    match c {
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, data).context("raster size")?.write_to(&mut out, ImageFormat::Png)?,
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).context("raster size")?.write_to(&mut out, ImageFormat::Png)?,
        _ => bail!("cannot encode {c}-channel raster as PNG"),
    }
    Ok(out.into_inner())
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(s: &str) -> Result<Vec<u8>> {
    STANDARD.decode(s.trim()).context("invalid base64")
}

fn is_imgf(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("imgf"))
}

fn read_raster(path: &Path) -> Result<Raster> {
    if is_imgf(path) {
        return Ok(imgf::read(path)?);
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_png(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    if is_imgf(path) {
        return Ok(imgf::write(path, r)?);
    }
    if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        bail!("output {} must end in .png or .imgf", path.display());
    }
    std::fs::write(path, encode_png(r)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_srgb(path: &Path) -> Result<SrgbImage> {
    Ok(SrgbImage::new(read_raster(path)?)?)
}

pub fn write_srgb(path: &Path, img: &SrgbImage) -> Result<()> {
    write_raster(path, img.raster())
}

pub fn read_xyz(path: &Path) -> Result<XyzImage> {
    let r = read_raster(path)?;
    let r = if is_imgf(path) { r } else { r.map(|v| v * XYZ_PNG_SCALE) };
    Ok(XyzImage::new(r)?)
}

pub fn write_xyz(path: &Path, img: &XyzImage) -> Result<()> {
    if is_imgf(path) {
        write_raster(path, img.raster())
    } else {
        write_raster(path, &img.raster().map(|v| v / XYZ_PNG_SCALE))
    }
}

pub fn xyz_to_png(img: &XyzImage) -> Result<Vec<u8>> {
    encode_png(&img.raster().map(|v| v / XYZ_PNG_SCALE))
}

pub fn png_to_xyz(bytes: &[u8]) -> Result<XyzImage> {
    Ok(XyzImage::new(decode_png(bytes)?.map(|v| v * XYZ_PNG_SCALE))?)
}

/// Reflect-pads so both sides are multiples of `m`.
pub fn pad_to_multiple(r: &Raster, m: usize) -> Raster {
    let (h, w, c) = r.dims();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return r.clone();
    }
    let refl = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let i = i % period;
        if i < n {
            i
        } else {
            period - i
        }
    };
    Raster::from_fn(ph, pw, c, |y, x, ch| r.get(refl(y, h), refl(x, w), ch))
}

/// Undoes [`pad_to_multiple`].
pub fn crop_to(r: Raster, h: usize, w: usize) -> Result<Raster> {
    if r.height() == h && r.width() == w {
        return Ok(r);
    }
    Ok(r.crop(0, 0, h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_16_bit() {
        let r = Raster::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 104.0);
        let back = decode_png(&encode_png(&r).unwrap()).unwrap();
        assert_eq!(back.dims(), (5, 7, 3));
        assert!(back.max_abs_diff(&r) <= 0.5 / 65535.0 + 1e-7);
        assert_eq!(png_dimensions(&encode_png(&r).unwrap()).unwrap(), (7, 5));
    }

    #[test]
    fn xyz_png_keeps_values_above_one() {
        let x = XyzImage::new(Raster::filled(2, 2, 3, 1.5)).unwrap();
        let back = png_to_xyz(&xyz_to_png(&x).unwrap()).unwrap();
        assert!(back.raster().max_abs_diff(x.raster()) < 1e-4);
    }

    #[test]
    fn padding_reflects_and_crops_back() {
        let r = Raster::from_fn(5, 6, 1, |y, x, _| (y * 6 + x) as f32);
        let p = pad_to_multiple(&r, 4);
        assert_eq!(p.dims(), (8, 8, 1));
        assert_eq!(p.get(5, 0, 0), r.get(3, 0, 0));
        assert_eq!(p.get(0, 6, 0), r.get(0, 4, 0));
        assert_eq!(crop_to(p, 5, 6).unwrap(), r);
        assert_eq!(pad_to_multiple(&r, 1), r);
    }

    #[test]
    fn base64_round_trip_and_rejection() {
        assert_eq!(decode_b64(&encode_b64(b"abc")).unwrap(), b"abc");
        assert!(decode_b64("@@@").is_err());
        assert!(decode_png(b"not a png").is_err());
    }
}
