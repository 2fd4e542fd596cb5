use crate::error::{shape_err, Result};
use crate::scalar::{matmul, Float, MatRef};
use crate::tensor::Tensor;

fn batch3<T: Float>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if t.shape().len() != 3 {
        return shape_err("bmm", format!("expected rank-3 operand, got {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1], t.shape()[2]))
}

fn view<T>(d: &[T], rows: usize, cols: usize, t: bool) -> MatRef<'_, T> {
    let m = MatRef::new(d, rows, cols);
    if t {
        m.t()
    } else {
        m
    }
}

/// Batched `op(a) · op(b)`; an operand with batch 1 is shared across the batch.
pub fn bmm_forward<T: Float>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ba, ra, ca) = batch3(a)?;
    let (bb, rb, cb) = batch3(b)?;
    let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
    if k != k2 {
        return shape_err("bmm", format!("inner dims {k} vs {k2}"));
    }
    if ba != bb && ba != 1 && bb != 1 {
        return shape_err("bmm", format!("batch {ba} vs {bb}"));
    }
    let batch = ba.max(bb);
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        let ai = if ba == 1 { 0 } else { i };
        let bi = if bb == 1 { 0 } else { i };
        let av = view(&a.data()[ai * ra * ca..(ai + 1) * ra * ca], ra, ca, ta);
        let bv = view(&b.data()[bi * rb * cb..(bi + 1) * rb * cb], rb, cb, tb);
        matmul(av, bv, &mut out[i * m * n..(i + 1) * m * n], T::zero());
    }
    Tensor::from_vec(&[batch, m, n], out)
}

pub fn bmm_backward<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (ba, ra, ca) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, rb, cb) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    let (batch, m, n) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for i in 0..batch {
        let ai = if ba == 1 { 0 } else { i };
        let bi = if bb == 1 { 0 } else { i };
        let a_d = &a.data()[ai * ra * ca..(ai + 1) * ra * ca];
        let b_d = &b.data()[bi * rb * cb..(bi + 1) * rb * cb];
        let g = MatRef::new(&gy.data()[i * m * n..(i + 1) * m * n], m, n);
        let opa = view(a_d, ra, ca, ta);
        let opb = view(b_d, rb, cb, tb);
        let ga_i = &mut ga[ai * ra * ca..(ai + 1) * ra * ca];
        // d op(a) = g · op(b)ᵀ; stored transposed when ta
        if ta {
            matmul(opb, g.t(), ga_i, T::one());
        } else {
            matmul(g, opb.t(), ga_i, T::one());
        }
        let gb_i = &mut gb[bi * rb * cb..(bi + 1) * rb * cb];
        // d op(b) = op(a)ᵀ · g
        if tb {
            matmul(g.t(), opa, gb_i, T::one());
        } else {
            matmul(opa.t(), g, gb_i, T::one());
        }
    }
    (
        Tensor::from_vec(a.shape(), ga).expect("shape"),
        Tensor::from_vec(b.shape(), gb).expect("shape"),
    )
}

/// Softmax over the last axis.
pub fn softmax_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let last = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(last.max(1)) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Tensor::from_vec(x.shape(), out).expect("shape")
}

pub fn softmax_backward<T: Float>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let last = *y.shape().last().unwrap_or(&1);
    let mut gx = vec![T::zero(); y.len()];
    for ((gxr, yr), gr) in gx.chunks_mut(last).zip(y.data().chunks(last)).zip(gy.data().chunks(last)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for i in 0..last {
            gxr[i] = yr[i] * (gr[i] - dot);
        }
    }
    Tensor::from_vec(y.shape(), gx).expect("shape")
}
