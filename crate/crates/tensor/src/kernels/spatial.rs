use super::conv::reflect_index;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

fn nchw<T: Float>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 4]> {
    if x.shape().len() != 4 {
        return shape_err(op, format!("expected N×C×H×W, got {:?}", x.shape()));
    }
    Ok(x.dims4())
}

/// 2×2 max pooling. Returns the pooled tensor and the flat argmax of each window.
pub fn maxpool2_forward<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = nchw("maxpool2", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err("maxpool2", format!("spatial dims must be even, got {h}×{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let d = x.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if d[cand] > d[best] {
                        best = cand;
                    }
                }
                out.push(d[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], out)?, arg))
}

pub fn maxpool2_backward<T: Float>(input_shape: &[usize], arg: &[u32], gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&i, &v) in arg.iter().zip(gy.data()) {
        g[i as usize] += v;
    }
    gx
}

pub fn upsample2_forward<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw("upsample2", x)?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub fn upsample2_backward<T: Float>(gy: &Tensor<T>) -> Tensor<T> {
    let [n, c, ho, wo] = gy.dims4();
    let (h, w) = (ho / 2, wo / 2);
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let src = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / 2) * w + ox / 2] += src[oy * wo + ox];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], gx).expect("shape")
}

/// Mean over H×W, producing `N×C×1×1`.
pub fn global_avg_pool_forward<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw("global_avg_pool", x)?;
    let inv = T::one() / T::lit((h * w) as f64);
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(&[n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Float>(input_shape: &[usize], gy: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = crate::tensor::dims4(input_shape);
    let inv = T::one() / T::lit((h * w) as f64);
    let mut data = Vec::with_capacity(gy.len() * h * w);
    for &g in gy.data() {
        data.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Tensor::from_vec(input_shape, data).expect("shape")
}

/// Per-pixel channel mean and channel max stacked as two channels.
pub fn channel_mean_max_forward<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = nchw("channel_mean_max", x)?;
    let hw = h * w;
    let inv = T::one() / T::lit(c as f64);
    let mut out = vec![T::zero(); n * 2 * hw];
    let mut arg = vec![0u32; n * hw];
    let d = x.data();
    for b in 0..n {
        let xb = &d[b * c * hw..(b + 1) * c * hw];
        let (mean, rest) = out[b * 2 * hw..(b + 1) * 2 * hw].split_at_mut(hw);
        let am = &mut arg[b * hw..(b + 1) * hw];
        mean.copy_from_slice(&xb[..hw]);
        rest.copy_from_slice(&xb[..hw]);
        for ch in 1..c {
            let plane = &xb[ch * hw..(ch + 1) * hw];
            for i in 0..hw {
                mean[i] += plane[i];
                if plane[i] > rest[i] {
                    rest[i] = plane[i];
                    am[i] = ch as u32;
                }
            }
        }
        for m in mean.iter_mut() {
            *m *= inv;
        }
    }
    Ok((Tensor::from_vec(&[n, 2, h, w], out)?, arg))
}

pub fn channel_mean_max_backward<T: Float>(input_shape: &[usize], arg: &[u32], gy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = crate::tensor::dims4(input_shape);
    let hw = h * w;
    let inv = T::one() / T::lit(c as f64);
    let mut gx = vec![T::zero(); n * c * hw];
    for b in 0..n {
        let gm = &gy.data()[b * 2 * hw..b * 2 * hw + hw];
        let gmax = &gy.data()[b * 2 * hw + hw..(b + 1) * 2 * hw];
        let gxb = &mut gx[b * c * hw..(b + 1) * c * hw];
        for ch in 0..c {
            for i in 0..hw {
                gxb[ch * hw + i] = gm[i] * inv;
            }
        }
        for i in 0..hw {
            gxb[arg[b * hw + i] as usize * hw + i] += gmax[i];
        }
    }
    Tensor::from_vec(input_shape, gx).expect("shape")
}

/// Normalized 1-D Gaussian taps of odd length.
pub fn gaussian_kernel1d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) || size == 0 {
        return invalid("gaussian_kernel", format!("kernel size must be odd and positive, got {size}"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid("gaussian_kernel", format!("sigma must be positive, got {sigma}"));
    }
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

fn pass_rows<T: Float>(src: &[T], dst: &mut [T], h: usize, w: usize, taps: &[T]) {
    let r = (taps.len() / 2) as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[reflect_index(x as isize + k as isize - r, w)];
            }
            dst[y * w + x] = acc;
        }
    }
}

fn pass_cols<T: Float>(src: &[T], dst: &mut [T], h: usize, w: usize, taps: &[T]) {
    let r = (taps.len() / 2) as isize;
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        out.fill(T::zero());
        for (k, &t) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            for (o, &s) in out.iter_mut().zip(&src[sy * w..(sy + 1) * w]) {
                *o += t * s;
            }
        }
    }
}

fn pass_rows_adjoint<T: Float>(gy: &[T], gx: &mut [T], h: usize, w: usize, taps: &[T]) {
    let r = (taps.len() / 2) as isize;
    gx.fill(T::zero());
    for y in 0..h {
        for x in 0..w {
            let g = gy[y * w + x];
            for (k, &t) in taps.iter().enumerate() {
                gx[y * w + reflect_index(x as isize + k as isize - r, w)] += t * g;
            }
        }
    }
}

fn pass_cols_adjoint<T: Float>(gy: &[T], gx: &mut [T], h: usize, w: usize, taps: &[T]) {
    let r = (taps.len() / 2) as isize;
    gx.fill(T::zero());
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            for x in 0..w {
                gx[sy * w + x] += t * gy[y * w + x];
            }
        }
    }
}

/// Separable depthwise blur of every `H×W` plane of a rank-2..4 tensor with
/// reflect borders.
pub fn separable_blur<T: Float>(x: &Tensor<T>, taps: &[f64]) -> Tensor<T> {
    let [a, b, h, w] = x.dims4();
    let taps: Vec<T> = taps.iter().map(|&t| T::lit(t)).collect();
    let mut out = vec![T::zero(); x.len()];
    let mut tmp = vec![T::zero(); h * w];
    for p in 0..a * b {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        pass_rows(src, &mut tmp, h, w, &taps);
        pass_cols(&tmp, &mut out[p * h * w..(p + 1) * h * w], h, w, &taps);
    }
    Tensor::from_vec(x.shape(), out).expect("shape")
}

pub fn separable_blur_backward<T: Float>(gy: &Tensor<T>, taps: &[f64]) -> Tensor<T> {
    let [a, b, h, w] = gy.dims4();
    let taps: Vec<T> = taps.iter().map(|&t| T::lit(t)).collect();
    let mut out = vec![T::zero(); gy.len()];
    let mut tmp = vec![T::zero(); h * w];
    for p in 0..a * b {
        let src = &gy.data()[p * h * w..(p + 1) * h * w];
        pass_cols_adjoint(src, &mut tmp, h, w, &taps);
        pass_rows_adjoint(&tmp, &mut out[p * h * w..(p + 1) * h * w], h, w, &taps);
    }
    Tensor::from_vec(gy.shape(), out).expect("shape")
}
