use uniisp_tensor::kernels::conv::reflect_index;
use uniisp_tensor::kernels::spatial::{gaussian_kernel1d, separable_blur};
use uniisp_tensor::{Float, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// `‖pred − target‖₁` as a mean.
pub fn l1<T: Float>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", g.value(pred).shape(), g.value(target).shape())));
    }
    let d = g.sub(pred, target)?;
    Ok(g.mean_abs(d))
}

/// Host-side mean absolute error between equal-shape buffers.
pub fn mean_abs_error(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{} vs {} elements", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64)
}

/// Inverse-ISP loss `‖L − L̂‖₁`.
pub fn loss_inverse(pred: &crate::XyzImage, gt: &crate::XyzImage) -> Result<f64> {
    if !pred.raster().same_shape(gt.raster()) {
        return Err(Error::Shape("inverse loss operands differ in shape".into()));
    }
    mean_abs_error(pred.raster().data(), gt.raster().data())
}

/// Forward-ISP loss `‖I − Î‖₁`.
pub fn loss_forward(pred: &crate::SrgbImage, gt: &crate::SrgbImage) -> Result<f64> {
    if !pred.raster().same_shape(gt.raster()) {
        return Err(Error::Shape("forward loss operands differ in shape".into()));
    }
    mean_abs_error(pred.raster().data(), gt.raster().data())
}

/// Settings of the frequency-bias-corrected cross-camera loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FbcSettings {
    pub kernel: usize,
    pub sigma: f64,
    pub focal_alpha: f64,
    /// Frequency term is skipped when more than this fraction of pixels is occluded.
    pub max_occluded: f64,
}

impl Default for FbcSettings {
    fn default() -> Self {
        FbcSettings { kernel: 5, sigma: 1.0, focal_alpha: 1.0, max_occluded: 0.2 }
    }
}

/// Values of the two FBC terms; `freq` is `None` when skipped.
#[derive(Clone, Copy, Debug)]
pub struct FbcTerms {
    pub total: Var,
    pub low: Var,
    pub freq: Option<Var>,
}

/// Shrinks the valid region of an `N×1×H×W` mask: a pixel stays valid only
/// if every pixel within `radius` (reflected at the borders) is valid.
pub fn erode_mask<T: Float>(mask: &Tensor<T>, radius: usize) -> Tensor<T> {
    let [n, c, h, w] = mask.dims4();
    let mut out = mask.clone();
    let r = radius as isize;
    for p in 0..n * c {
        let src = &mask.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut ok = true;
                'win: for dy in -r..=r {
                    let sy = reflect_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = reflect_index(x as isize + dx, w);
                        if src[sy * w + sx] <= T::zero() {
                            ok = false;
                            break 'win;
                        }
                    }
                }
                dst[y * w + x] = if ok { T::one() } else { T::zero() };
            }
        }
    }
    out
}

/// `‖f_low(Î_b) − f_low(I^w_b)‖₁` over the eroded valid mask plus the focal
/// frequency loss against the pristine target. Occluded pixels of both
/// frequency-term operands are replaced by the (detached) low-passed
/// prediction.
pub fn fbc_loss<T: Float>(
    g: &mut Graph<T>,
    pred: Var,
    warped: &Tensor<T>,
    pristine: &Tensor<T>,
    mask: &Tensor<T>,
    s: &FbcSettings,
) -> Result<FbcTerms> {
    let shape = g.value(pred).shape().to_vec();
    if warped.shape() != shape.as_slice() || pristine.shape() != shape.as_slice() {
        return Err(Error::Shape(format!("FBC operands {:?} / {:?} / {:?}", shape, warped.shape(), pristine.shape())));
    }
    let [n, _, h, w] = g.value(pred).dims4();
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!("mask {:?} for prediction {:?}", mask.shape(), shape)));
    }
    if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument("occlusion mask must be binary".into()));
    }
    let taps = gaussian_kernel1d(s.kernel, s.sigma)?;
    let low_pred = g.blur(pred, &taps);
    let low_warp = g.constant(separable_blur(warped, &taps));
    let diff = g.sub(low_pred, low_warp)?;
    let eroded = erode_mask(mask, s.kernel / 2);
    if eroded.data().iter().all(|&v| v == T::zero()) {
        return Err(Error::InvalidArgument("occlusion mask leaves no valid pixels".into()));
    }
    let low = g.masked_mean_abs(diff, &eroded)?;

    let occluded = mask.data().iter().filter(|&&v| v == T::zero()).count() as f64 / mask.len() as f64;
    let freq = if occluded > s.max_occluded {
        None
    } else if occluded == 0.0 {
        let t = g.constant(pristine.clone());
        Some(g.focal_frequency(pred, t, s.focal_alpha)?)
    } else {
        let lp = g.value(low_pred).clone();
        let mut fill = lp.clone();
        let mut target = pristine.clone();
        let hw = h * w;
        let c = shape[1];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..hw {
                    let k = (b * c + ch) * hw + i;
                    let m = mask.data()[b * hw + i];
                    fill.data_mut()[k] = (T::one() - m) * lp.data()[k];
                    target.data_mut()[k] = m * pristine.data()[k] + (T::one() - m) * lp.data()[k];
                }
            }
        }
        let mk = g.constant(mask.clone());
        let kept = g.mul(pred, mk)?;
        let fill = g.constant(fill);
        let filled = g.add(kept, fill)?;
        let t = g.constant(target);
        Some(g.focal_frequency(filled, t, s.focal_alpha)?)
    };
    let total = match freq {
        Some(f) => g.add(low, f)?,
        None => low,
    };
    Ok(FbcTerms { total, low, freq })
}

/// Ablation: plain L1 against the warped target over valid pixels.
pub fn warped_l1_loss<T: Float>(g: &mut Graph<T>, pred: Var, warped: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
    let t = g.constant(warped.clone());
    let d = g.sub(pred, t)?;
    Ok(g.masked_mean_abs(d, mask)?)
}
