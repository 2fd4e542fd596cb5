use crate::error::{shape_err, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Statistics kept from the forward pass of a half instance norm.
#[derive(Clone, Debug)]
pub struct HinStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Instance-normalizes the first half of the channels (then applies the
/// per-channel affine `gamma`, `beta`) and passes the second half through.
pub fn half_instance_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, HinStats<T>)> {
    if x.shape().len() != 4 {
        return shape_err("half_instance_norm", format!("expected 4-D input, got {:?}", x.shape()));
    }
    let [n, c, h, w] = x.dims4();
    if c % 2 != 0 {
        return shape_err("half_instance_norm", format!("channel count must be even, got {c}"));
    }
    let half = c / 2;
    if gamma.len() != half || beta.len() != half {
        return shape_err("half_instance_norm", format!("affine needs {half} values"));
    }
    let hw = h * w;
    let inv_hw = T::one() / T::lit(hw as f64);
    let mut out = x.data().to_vec();
    let mut stats = HinStats { mean: Vec::with_capacity(n * half), inv_std: Vec::with_capacity(n * half) };
    for b in 0..n {
        for ch in 0..half {
            let off = (b * c + ch) * hw;
            let plane = &mut out[off..off + hw];
            let mean = plane.iter().copied().sum::<T>() * inv_hw;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
            let inv_std = T::one() / (var + T::lit(eps)).sqrt();
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for v in plane.iter_mut() {
                *v = (*v - mean) * inv_std * g + bt;
            }
            stats.mean.push(mean);
            stats.inv_std.push(inv_std);
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, stats))
}

pub fn half_instance_norm_backward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &HinStats<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.dims4();
    let half = c / 2;
    let hw = h * w;
    let inv_hw = T::one() / T::lit(hw as f64);
    let mut gx = gy.data().to_vec();
    let mut gg = vec![T::zero(); half];
    let mut gb = vec![T::zero(); half];
    for b in 0..n {
        for ch in 0..half {
            let off = (b * c + ch) * hw;
            let k = b * half + ch;
            let (mean, inv_std) = (stats.mean[k], stats.inv_std[k]);
            let xs = &x.data()[off..off + hw];
            let gys = &gy.data()[off..off + hw];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&xv, &g) in xs.iter().zip(gys) {
                let xhat = (xv - mean) * inv_std;
                gg[ch] += g * xhat;
                gb[ch] += g;
                sum_g += g;
                sum_gx += g * xhat;
            }
            let gamma_c = gamma.data()[ch];
            let mg = sum_g * inv_hw;
            let mgx = sum_gx * inv_hw;
            for (i, &xv) in xs.iter().enumerate() {
                let xhat = (xv - mean) * inv_std;
                gx[off + i] = gamma_c * inv_std * (gys[i] - mg - xhat * mgx);
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("shape"),
        Tensor::from_vec(gamma.shape(), gg).expect("shape"),
        Tensor::from_vec(gamma.shape(), gb).expect("shape"),
    )
}
