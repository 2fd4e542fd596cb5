use crate::error::{shape_err, Result};
use crate::scalar::{matmul, Float, MatRef};
use crate::tensor::Tensor;

/// Border handling for convolutions and filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`-1 → 1`).
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub mode: PadMode,
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, mode: PadMode::Zero }
    }

    pub fn reflect(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, mode: PadMode::Reflect }
    }
}

/// Mirrors an out-of-range index back into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

#[inline]
fn source(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        Some(i as usize)
    } else {
        match mode {
            PadMode::Zero => None,
            PadMode::Reflect => Some(reflect_index(i, n)),
        }
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

fn geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<(usize, usize, Geometry)> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return shape_err("conv2d", format!("expected 4-D input and weight, got {:?} and {:?}", x.shape(), w.shape()));
    }
    let [n, c, h, wd] = x.dims4();
    let [co, ci, kh, kw] = w.dims4();
    if ci != c {
        return shape_err("conv2d", format!("input has {c} channels, weight expects {ci}"));
    }
    if spec.stride == 0 {
        return shape_err("conv2d", "stride must be positive");
    }
    if h + 2 * spec.padding < kh || wd + 2 * spec.padding < kw {
        return shape_err("conv2d", "kernel larger than padded input");
    }
    if spec.mode == PadMode::Reflect && (spec.padding >= h || spec.padding >= wd) && (h > 1 || wd > 1) {
        return shape_err("conv2d", "reflect padding must be smaller than the input");
    }
    let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - kw) / spec.stride + 1;
    Ok((n, co, Geometry { c, h, w: wd, kh, kw, ho, wo, spec }))
}

fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.spec.padding as isize;
    let s = g.spec.stride as isize;
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = oy as isize * s + ky as isize - p;
                    let Some(iy) = source(iy, g.h, g.spec.mode) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src = &xc[iy * g.w..(iy + 1) * g.w];
                    if s == 1 && g.spec.mode == PadMode::Zero {
                        let off = kx as isize - p;
                        let lo = (-off).max(0) as usize;
                        let hi = ((g.w as isize - off).min(g.wo as isize)).max(0) as usize;
                        out[..lo.min(g.wo)].fill(T::zero());
                        if hi > lo {
                            let a = (lo as isize + off) as usize;
                            out[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                        }
                        if hi < g.wo {
                            out[hi.max(lo)..].fill(T::zero());
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *o = match source(ix, g.w, g.spec.mode) {
                                Some(ix) => src[ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.spec.padding as isize;
    let s = g.spec.stride as isize;
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let xc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let Some(iy) = source(iy, g.h, g.spec.mode) else { continue };
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut xc[iy * g.w..(iy + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if let Some(ix) = source(ix, g.w, g.spec.mode) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let (n, co, g) = geometry(x, w, spec)?;
    if let Some(b) = b {
        if b.len() != co {
            return shape_err("conv2d", format!("bias has {} values for {co} output channels", b.len()));
        }
    }
    let k = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); n * co * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    let in_stride = g.c * g.h * g.w;
    for i in 0..n {
        let xs = &x.data()[i * in_stride..(i + 1) * in_stride];
        let ys = &mut out[i * co * plane..(i + 1) * co * plane];
        if let Some(b) = b {
            for (oc, row) in ys.chunks_mut(plane).enumerate() {
                row.fill(b.data()[oc]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let rhs = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        matmul(MatRef::new(w.data(), co, k), MatRef::new(rhs, k, plane), ys, beta);
    }
    Tensor::from_vec(&[n, co, g.ho, g.wo], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    gy: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (n, co, g) = geometry(x, w, spec)?;
    let k = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let in_stride = g.c * g.h * g.w;
    let mut gw = vec![T::zero(); co * k];
    let mut gb = vec![T::zero(); co];
    let mut gx = if need_input_grad { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcols = if need_input_grad && !g.is_pointwise() { vec![T::zero(); k * plane] } else { Vec::new() };
    for i in 0..n {
        let xs = &x.data()[i * in_stride..(i + 1) * in_stride];
        let gys = &gy.data()[i * co * plane..(i + 1) * co * plane];
        for (oc, row) in gys.chunks(plane).enumerate() {
            gb[oc] += row.iter().copied().sum::<T>();
        }
        let rhs = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        matmul(MatRef::new(gys, co, plane), MatRef::new(rhs, k, plane).t(), &mut gw, T::one());
        if need_input_grad {
            let wt = MatRef::new(w.data(), co, k).t();
            if g.is_pointwise() {
                let gxs = &mut gx[i * in_stride..(i + 1) * in_stride];
                matmul(wt, MatRef::new(gys, co, plane), gxs, T::zero());
            } else {
                matmul(wt, MatRef::new(gys, co, plane), &mut dcols, T::zero());
                col2im(&dcols, &g, &mut gx[i * in_stride..(i + 1) * in_stride]);
            }
        }
    }
    let gx = if need_input_grad { Some(Tensor::from_vec(x.shape(), gx)?) } else { None };
    Ok((gx, Tensor::from_vec(w.shape(), gw)?, Tensor::from_vec(&[co], gb)?))
}
