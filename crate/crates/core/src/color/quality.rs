use uniisp_tensor::kernels::spatial::{gaussian_kernel1d, separable_blur};
use uniisp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR, mean SSIM and the per-pixel SSIM map (averaged over channels).
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    /// `f64::INFINITY` when the images are identical.
    pub psnr_db: f64,
    pub ssim_mean: f64,
    pub ssim_map: Raster,
}

pub fn psnr(pred: &Raster, gt: &Raster, data_range: f64) -> Result<f64> {
    check(pred, gt, data_range)?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / pred.data().len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (data_range * data_range / mse).log10() })
}

fn check(pred: &Raster, gt: &Raster, data_range: f64) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::InvalidArgument(format!("data range must be positive, got {data_range}")));
    }
    Ok(())
}

/// Gaussian-window SSIM (11×11, σ = 1.5, reflect borders) and PSNR.
pub fn compute_quality(pred: &Raster, gt: &Raster, data_range: f64) -> Result<QualityReport> {
    let psnr_db = psnr(pred, gt, data_range)?;
    let (h, w, c) = pred.dims();
    let taps = gaussian_kernel1d(SSIM_WINDOW, SSIM_SIGMA)?;
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let x: Tensor<f64> = pred.to_tensor();
    let y: Tensor<f64> = gt.to_tensor();
    let prod = |a: &Tensor<f64>, b: &Tensor<f64>| {
        Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect()).expect("shape")
    };
    let mu_x = separable_blur(&x, &taps);
    let mu_y = separable_blur(&y, &taps);
    let sxx = separable_blur(&prod(&x, &x), &taps);
    let syy = separable_blur(&prod(&y, &y), &taps);
    let sxy = separable_blur(&prod(&x, &y), &taps);
    let mut map = Raster::zeros(h, w, 1);
    let hw = h * w;
    for ch in 0..c {
        for i in 0..hw {
            let k = ch * hw + i;
            let (mx, my) = (mu_x.data()[k], mu_y.data()[k]);
            let vx = sxx.data()[k] - mx * mx;
            let vy = syy.data()[k] - my * my;
            let cov = sxy.data()[k] - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            map.data_mut()[i] += (s / c as f64) as f32;
        }
    }
    let ssim_mean = map.data().iter().map(|&v| v as f64).sum::<f64>() / hw.max(1) as f64;
    Ok(QualityReport { psnr_db, ssim_mean, ssim_map: map })
}
