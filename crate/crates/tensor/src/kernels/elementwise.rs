use crate::error::{shape_err, Result};
use crate::scalar::Float;
use crate::tensor::{dims4, Tensor};

/// Output shape of a numpy-style broadcast between equal- or lower-rank shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let (da, db) = (dims4(a), dims4(b));
    let mut out = Vec::with_capacity(rank);
    for i in 4 - rank..4 {
        let d = match (da[i], db[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err("broadcast", format!("{a:?} vs {b:?}")),
        };
        out.push(d);
    }
    Ok(out)
}

fn strides_in(shape: &[usize], out: [usize; 4]) -> [usize; 4] {
    let d = dims4(shape);
    let mut s = [0usize; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        s[i] = if d[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= d[i];
    }
    s
}

/// Visits every output element with the linear indices of both operands.
fn for_each_broadcast(out: [usize; 4], sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

pub fn binary_forward<T: Float>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let f = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(&shape, data);
    }
    let out4 = dims4(&shape);
    let (sa, sb) = (strides_in(a.shape(), out4), strides_in(b.shape(), out4));
    let mut data = vec![T::zero(); out4.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(out4, sa, sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::from_vec(&shape, data)
}

/// Gradients of a broadcast binary op reduced back to each operand's shape.
pub fn binary_backward<T: Float>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let out4 = gy.dims4();
    let (sa, sb) = (strides_in(a.shape(), out4), strides_in(b.shape(), out4));
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    let (ad, bd, g) = (a.data(), b.data(), gy.data());
    for_each_broadcast(out4, sa, sb, |o, ia, ib| match kind {
        BinaryKind::Add => {
            ga[ia] += g[o];
            gb[ib] += g[o];
        }
        BinaryKind::Sub => {
            ga[ia] += g[o];
            gb[ib] -= g[o];
        }
        BinaryKind::Mul => {
            ga[ia] += g[o] * bd[ib];
            gb[ib] += g[o] * ad[ia];
        }
    });
    (
        Tensor::from_vec(a.shape(), ga).expect("shape preserved"),
        Tensor::from_vec(b.shape(), gb).expect("shape preserved"),
    )
}

/// Pointwise nonlinearities with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    Sigmoid,
    /// `ln(1 + e^{βx}) / β`
    Softplus(f64),
    Scale(f64),
    /// Hard clamp to `[lo, hi]`. The backward pass lets a gradient through
    /// outside the range only when a descent step moves the value back inside.
    GuidedClamp(f64, f64),
    /// Piecewise sRGB encoding of a linear value; inputs are clamped to
    /// `[0, 1]` and get zero gradient outside.
    SrgbEncode,
    /// Inverse of [`Unary::SrgbEncode`], same clamping.
    SrgbDecode,
}

const SRGB_LINEAR_KNEE: f64 = 0.003_130_8;
const SRGB_ENCODED_KNEE: f64 = 0.040_45;

impl Unary {
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::lit(s)
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus(beta) => {
                let b = T::lit(beta);
                let z = x * b;
                // log1p(exp(z)) without overflow
                (z.max(T::zero()) + (-z.abs()).exp().ln_1p()) / b
            }
            Unary::Scale(c) => x * T::lit(c),
            Unary::GuidedClamp(lo, hi) => x.max(T::lit(lo)).min(T::lit(hi)),
            Unary::SrgbEncode => {
                let x = x.max(T::zero()).min(T::one());
                if x <= T::lit(SRGB_LINEAR_KNEE) {
                    x * T::lit(12.92)
                } else {
                    T::lit(1.055) * x.powf(T::lit(1.0 / 2.4)) - T::lit(0.055)
                }
            }
            Unary::SrgbDecode => {
                let x = x.max(T::zero()).min(T::one());
                if x <= T::lit(SRGB_ENCODED_KNEE) {
                    x / T::lit(12.92)
                } else {
                    ((x + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(2.4))
                }
            }
        }
    }

    /// Derivative at input `x` (with output `y`) applied to upstream `g`.
    pub fn grad<T: Float>(self, x: T, y: T, g: T) -> T {
        match self {
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    g
                } else {
                    g * T::lit(s)
                }
            }
            Unary::Sigmoid => g * y * (T::one() - y),
            Unary::Softplus(beta) => g * sigmoid(x * T::lit(beta)),
            Unary::Scale(c) => g * T::lit(c),
            Unary::GuidedClamp(lo, hi) => {
                let inside = x >= T::lit(lo) && x <= T::lit(hi);
                let returning = (x > T::lit(hi) && g > T::zero()) || (x < T::lit(lo) && g < T::zero());
                if inside || returning {
                    g
                } else {
                    T::zero()
                }
            }
            Unary::SrgbEncode => {
                if x < T::zero() || x > T::one() {
                    T::zero()
                } else if x <= T::lit(SRGB_LINEAR_KNEE) {
                    g * T::lit(12.92)
                } else {
                    g * T::lit(1.055 / 2.4) * x.powf(T::lit(1.0 / 2.4 - 1.0))
                }
            }
            Unary::SrgbDecode => {
                if x < T::zero() || x > T::one() {
                    T::zero()
                } else if x <= T::lit(SRGB_ENCODED_KNEE) {
                    g / T::lit(12.92)
                } else {
                    g * T::lit(2.4 / 1.055) * ((x + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(1.4))
                }
            }
        }
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
