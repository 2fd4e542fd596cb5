use super::exif::ExifParams;
use super::profile::CameraProfile;
use crate::color::gaussian_lowpass;
use crate::error::{Error, Result};
use crate::raster::{Raster, SrgbImage, XyzImage};

/// Rec. 709 luminance weights used for saturation and local contrast.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];
pub const UNSHARP_KERNEL: usize = 5;
pub const UNSHARP_SIGMA: f64 = 1.5;

fn luma(px: &[f32]) -> f64 {
    LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64
}

/// Linear stage: exposure scale, color matrix and saturation (before any
/// clamp or tone curve). Values may fall outside `[0, 1]`.
pub fn render_linear_stage(xyz: &Raster, profile: &CameraProfile, exposure: f64) -> Result<Raster> {
    if xyz.channels() != 3 {
        return Err(Error::InvalidImage(format!("expected 3 channels, got {}", xyz.channels())));
    }
    if !(exposure.is_finite() && exposure > 0.0) {
        return Err(Error::InvalidArgument(format!("exposure must be positive, got {exposure}")));
    }
    let m = &profile.color_matrix;
    let s = profile.saturation;
    let mut out = xyz.clone();
    for px in out.pixels_mut() {
        let v = [px[0] as f64 * exposure, px[1] as f64 * exposure, px[2] as f64 * exposure];
        let rgb = [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ];
        let y = LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2];
        for (o, c) in px.iter_mut().zip(rgb) {
            *o = if s == 1.0 { c as f32 } else { (y + s * (c - y)) as f32 };
        }
    }
    Ok(out)
}

/// Display stage applied to the linear-stage output: clamp, tone curve,
/// local-contrast unsharp mask on luminance, vignette, black lift, clamp.
pub fn render_display_stage(linear: &Raster, profile: &CameraProfile) -> Result<SrgbImage> {
    let (h, w, _) = linear.dims();
    let curve = profile.tone_curve;
    let mut img = linear.map(|v| curve.eval(v as f64) as f32);

    if profile.local_contrast > 0.0 {
        let mut lum = Raster::zeros(h, w, 1);
        for (l, px) in lum.data_mut().iter_mut().zip(img.pixels()) {
            *l = luma(px) as f32;
        }
        let blurred = gaussian_lowpass(&lum, UNSHARP_KERNEL, UNSHARP_SIGMA)?;
        for (i, px) in img.pixels_mut().enumerate() {
            let detail = profile.local_contrast * (lum.data()[i] - blurred.data()[i]) as f64;
            for v in px.iter_mut() {
                *v = (*v as f64 + detail) as f32;
            }
        }
    }

    if profile.vignette_strength > 0.0 {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let r2max = cy * cy + cx * cx;
        for y in 0..h {
            for x in 0..w {
                let r2 = if r2max > 0.0 { ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / r2max } else { 0.0 };
                let g = 1.0 - profile.vignette_strength * r2;
                for c in 0..3 {
                    img.set(y, x, c, (img.get(y, x, c) as f64 * g) as f32);
                }
            }
        }
    }

    let bl = profile.black_lift;
    if bl != 0.0 {
        img = img.map(|v| (bl + (1.0 - bl) * v as f64) as f32);
    }
    SrgbImage::new(img.map(|v| v.clamp(0.0, 1.0)))
}

/// Ground-truth camera rendering of scene radiance under `exif`.
pub fn render_profile(xyz: &XyzImage, profile: &CameraProfile, exif: &ExifParams) -> Result<SrgbImage> {
    exif.validate()?;
    render_with_exposure(xyz.raster(), profile, exif.exposure_scale())
}

/// Like [`render_profile`] with an explicit relative exposure (digital gain
/// included), accepting radiance above one.
pub fn render_with_exposure(xyz: &Raster, profile: &CameraProfile, exposure: f64) -> Result<SrgbImage> {
    let linear = render_linear_stage(xyz, profile, exposure)?;
    render_display_stage(&linear, profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::xyz_to_srgb;
    use crate::synth::generate_scene;

    #[test]
    fn neutral_matches_standard_conversion() {
        let xyz = generate_scene(1, 24, 24).unwrap();
        let a = render_profile(&xyz, &CameraProfile::neutral(), &ExifParams::unity()).unwrap();
        let b = xyz_to_srgb(&xyz).unwrap();
        assert!(a.raster().max_abs_diff(b.raster()) < 1e-5);
    }

    #[test]
    fn vignette_darkens_corners() {
        let mut p = CameraProfile::neutral();
        p.vignette_strength = 0.25;
        let xyz = XyzImage::new(Raster::filled(17, 17, 3, 0.2)).unwrap();
        let out = render_profile(&xyz, &p, &ExifParams::unity()).unwrap();
        assert!(out.raster().get(0, 0, 1) < out.raster().get(8, 8, 1));
    }
}
