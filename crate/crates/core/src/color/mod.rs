//! Fixed, non-learned color science: the sRGB transfer function, standard
//! sRGB⇄XYZ conversion, the early raw stage, low-pass filtering and image
//! quality metrics.

mod bayer;
mod quality;

pub use bayer::{early_isp, BayerImage, CfaPattern};
pub use quality::{compute_quality, psnr, QualityReport, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use uniisp_tensor::kernels::spatial::{gaussian_kernel1d, separable_blur};
use uniisp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::raster::{Raster, SrgbImage, XyzImage};

/// Linear sRGB (D65) to XYZ, IEC 61966-2-1.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];

/// Exact inverse of [`SRGB_TO_XYZ`].
pub fn xyz_to_srgb_matrix() -> [[f64; 3]; 3] {
    invert3(&SRGB_TO_XYZ).expect("sRGB matrix is invertible")
}

pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ])
}

#[inline]
pub fn mat3_apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// sRGB opto-electronic transfer: linear light to encoded value.
#[inline]
pub fn srgb_encode(l: f64) -> f64 {
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse of [`srgb_encode`].
#[inline]
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Standard conversion `s(·)`: linearize, then the D65 sRGB→XYZ matrix.
pub fn srgb_to_xyz(img: &SrgbImage) -> Result<XyzImage> {
    let r = img.raster();
    if !r.all_finite() {
        return Err(Error::InvalidImage("non-finite sRGB input".into()));
    }
    let mut out = r.clone();
    for px in out.pixels_mut() {
        let xyz = srgb_pixel_to_xyz([px[0] as f64, px[1] as f64, px[2] as f64]);
        for (o, v) in px.iter_mut().zip(xyz) {
            *o = v as f32;
        }
    }
    XyzImage::new(out)
}

/// Per-pixel `s(·)` in double precision; negatives clamp to zero.
pub fn srgb_pixel_to_xyz(rgb: [f64; 3]) -> [f64; 3] {
    mat3_apply(&SRGB_TO_XYZ, rgb.map(srgb_decode)).map(|v| v.max(0.0))
}

/// Per-pixel `s⁻¹(·)` in double precision.
pub fn xyz_pixel_to_srgb(xyz: [f64; 3]) -> [f64; 3] {
    let m = xyz_to_srgb_matrix();
    mat3_apply(&m, xyz).map(|v| srgb_encode(v.clamp(0.0, 1.0)))
}

/// Standard conversion `s⁻¹(·)`: XYZ→linear sRGB, clamp to `[0, 1]`, encode.
pub fn xyz_to_srgb(img: &XyzImage) -> Result<SrgbImage> {
    let mut out = img.raster().clone();
    for px in out.pixels_mut() {
        let rgb = xyz_pixel_to_srgb([px[0] as f64, px[1] as f64, px[2] as f64]);
        for (o, v) in px.iter_mut().zip(rgb) {
            *o = v as f32;
        }
    }
    SrgbImage::new(out)
}

/// Per-channel 2-D Gaussian filter with reflect borders; taps sum to one.
pub fn gaussian_lowpass(img: &Raster, kernel_size: usize, sigma: f64) -> Result<Raster> {
    let taps = gaussian_kernel1d(kernel_size, sigma)?;
    let t: Tensor<f64> = img.to_tensor();
    Raster::from_tensor(&separable_blur(&t, &taps), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> Raster {
        Raster::from_fn(h, w, 3, f)
    }

    #[test]
    fn zeros_are_fixed_points() {
        let z = SrgbImage::new(Raster::zeros(2, 2, 3)).unwrap();
        assert!(srgb_to_xyz(&z).unwrap().raster().data().iter().all(|&v| v == 0.0));
        let zx = XyzImage::new(Raster::zeros(2, 2, 3)).unwrap();
        assert!(xyz_to_srgb(&zx).unwrap().raster().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_maps_to_d65() {
        let ones = SrgbImage::new(Raster::filled(2, 3, 3, 1.0)).unwrap();
        let xyz = srgb_to_xyz(&ones).unwrap();
        for px in xyz.raster().pixels() {
            assert!((px[0] - 0.9505).abs() < 1e-4);
            assert!((px[1] - 1.0).abs() < 1e-6);
            assert!((px[2] - 1.0891).abs() < 2e-4);
        }
    }

    #[test]
    fn half_linear_encodes_to_0_7354() {
        assert!((srgb_encode(0.5) - 0.7354).abs() < 1e-4);
        // XYZ of linear (0.5, 0.5, 0.5)
        let lin = mat3_apply(&SRGB_TO_XYZ, [0.5; 3]);
        let x = XyzImage::new(Raster::new(1, 1, 3, lin.iter().map(|&v| v as f32).collect()).unwrap()).unwrap();
        for &v in xyz_to_srgb(&x).unwrap().raster().data() {
            assert!((v - 0.7354).abs() < 1e-4);
        }
    }

    #[test]
    fn negative_linear_component_clamps_to_zero() {
        // pure X excites negative linear G and B
        let x = XyzImage::new(Raster::new(1, 1, 3, vec![0.5, 0.0, 0.0]).unwrap()).unwrap();
        let s = xyz_to_srgb(&x).unwrap();
        assert_eq!(s.raster().get(0, 0, 1), 0.0);
        assert!(s.raster().get(0, 0, 0) > 0.0);
    }

    #[test]
    fn transfer_is_continuous_at_knee() {
        let lo = srgb_encode(0.0031308);
        let hi = 1.055 * 0.0031308f64.powf(1.0 / 2.4) - 0.055;
        assert!((lo - hi).abs() < 1e-6);
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            assert!((srgb_encode(srgb_decode(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_inverse_is_exact() {
        let p = mat3_mul(&SRGB_TO_XYZ, &xyz_to_srgb_matrix());
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lowpass_constant_and_identity() {
        let c = rgb(6, 7, |_, _, _| 0.25);
        let out = gaussian_lowpass(&c, 5, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let r = rgb(5, 5, |y, x, ch| ((y * 7 + x * 3 + ch) % 5) as f32 / 5.0);
        assert_eq!(gaussian_lowpass(&r, 1, 1.0).unwrap(), r);
        assert!(gaussian_lowpass(&r, 4, 1.0).is_err());
    }

    #[test]
    fn lowpass_impulse_reproduces_kernel() {
        let mut imp = Raster::zeros(9, 9, 1);
        imp.set(4, 4, 0, 1.0);
        let out = gaussian_lowpass(&imp, 5, 1.0).unwrap();
        // closed-form normalized 5×5 Gaussian, σ = 1
        let g = |d: f64| (-d * d / 2.0).exp();
        let norm: f64 = (-2..=2).map(|d| g(d as f64)).sum::<f64>().powi(2);
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let want = g(dy as f64) * g(dx as f64) / norm;
                let got = out.get((4 + dy) as usize, (4 + dx) as usize, 0) as f64;
                assert!((got - want).abs() < 1e-7, "({dy},{dx}) {got} vs {want}");
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
    }
}
