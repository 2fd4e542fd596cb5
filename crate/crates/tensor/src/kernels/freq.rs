pub use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{shape_err, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Unitary 2-D DFT of every `H×W` plane, in place.
pub fn fft2_planes<T: Float>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let norm = T::one() / T::lit(((h * w) as f64).sqrt());
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in buf.chunks_mut(h * w) {
        row.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y] * norm;
            }
        }
    }
}

/// Per-element focal weights times the spectral error, cached for backward.
#[derive(Clone, Debug)]
pub struct FocalCache<T> {
    pub weighted: Vec<Complex<T>>,
    pub count: usize,
}

/// Focal frequency loss: mean over planes and frequencies of
/// `w · |F(p) − F(t)|²` with `w = |F(p) − F(t)|^α` scaled to a per-plane
/// maximum of one. The weights are constants with respect to the gradient.
pub fn focal_frequency_forward<T: Float>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    alpha: f64,
) -> Result<(T, FocalCache<T>)> {
    if pred.shape() != target.shape() {
        return shape_err("focal_frequency", format!("{:?} vs {:?}", pred.shape(), target.shape()));
    }
    let [_, _, h, w] = pred.dims4();
    let mut spec: Vec<Complex<T>> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| Complex::new(p - t, T::zero()))
        .collect();
    fft2_planes(&mut spec, h, w, false);
    let mut total = T::zero();
    for plane in spec.chunks_mut(h * w) {
        let mags: Vec<T> = plane.iter().map(|z| z.norm()).collect();
        let wmax = mags.iter().fold(T::zero(), |m, &v| m.max(v.powf(T::lit(alpha))));
        for (z, &mag) in plane.iter_mut().zip(&mags) {
            let weight = if wmax > T::zero() { (mag.powf(T::lit(alpha)) / wmax).min(T::one()) } else { T::zero() };
            total += weight * mag * mag;
            *z = *z * weight;
        }
    }
    let count = pred.len().max(1);
    Ok((total / T::lit(count as f64), FocalCache { weighted: spec, count }))
}

/// Gradient with respect to the prediction; the target's gradient is its negation.
pub fn focal_frequency_backward<T: Float>(shape: &[usize], cache: &FocalCache<T>, g: T) -> Tensor<T> {
    let [_, _, h, w] = crate::tensor::dims4(shape);
    let mut buf = cache.weighted.clone();
    fft2_planes(&mut buf, h, w, true);
    let scale = g * T::lit(2.0) / T::lit(cache.count as f64);
    let data = buf.iter().map(|z| z.re * scale).collect();
    Tensor::from_vec(shape, data).expect("shape")
}
