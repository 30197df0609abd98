//! Spatial dot-product attention over flattened feature maps.
//!
//! A `B x C x H x W` map is read per batch element as `N = H*W` rows of
//! `C`-dimensional vectors. The channel-major storage is exactly the
//! transpose of that `N x C` matrix, so it is viewed through strides without
//! copying.

use std::rc::Rc;

use crate::linalg::{gemm, MatMut, MatRef};
use crate::{Float, Tensor, Var};

/// Row-wise softmax of a row-major `rows x cols` matrix, in place.
fn softmax_rows<T: Float>(m: &mut [T], cols: usize) {
    for row in m.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// `softmax(Q K^T)` per batch element, shape `B x N x N`.
pub fn attention_weights<T: Float>(query: &Tensor<T>, key: &Tensor<T>) -> Tensor<T> {
    let (b, cq, h, w) = query.dims4();
    let (kb, ck, kh, kw) = key.dims4();
    assert_eq!((b, cq, h, w), (kb, ck, kh, kw), "attention: query/key shape mismatch");
    let n = h * w;
    let mut out = vec![T::zero(); b * n * n];
    for bi in 0..b {
        let s = &mut out[bi * n * n..(bi + 1) * n * n];
        gemm(
            T::one(),
            MatRef::col_major(query.batch_item(bi), n, cq),
            MatRef::col_major(key.batch_item(bi), n, cq).t(),
            T::zero(),
            MatMut::row_major(s, n, n),
        );
        softmax_rows(s, n);
    }
    Tensor::new([b, n, n], out)
}

/// `A V` with `A` from [`attention_weights`]; result has the shape of `value`.
fn apply_weights<T: Float>(weights: &Tensor<T>, value: &Tensor<T>) -> Tensor<T> {
    let (b, cv, h, w) = value.dims4();
    let n = h * w;
    let mut out = vec![T::zero(); value.len()];
    for bi in 0..b {
        gemm(
            T::one(),
            MatRef::row_major(weights.batch_item(bi), n, n),
            MatRef::col_major(value.batch_item(bi), n, cv),
            T::zero(),
            MatMut::col_major(&mut out[bi * cv * n..(bi + 1) * cv * n], n, cv),
        );
    }
    Tensor::new([b, cv, h, w], out)
}

impl<'t, T: Float> Var<'t, T> {
    /// `softmax(Q K^T) V` over spatial positions. `query` is `self`.
    pub fn spatial_attention(self, key: Var<'t, T>, value: Var<'t, T>) -> Var<'t, T> {
        let (q, k, v) = (self.value(), key.value(), value.value());
        let (b, cq, h, w) = q.dims4();
        let (vb, cv, vh, vw) = v.dims4();
        assert_eq!((b, h, w), (vb, vh, vw), "attention: value shape mismatch");
        let n = h * w;
        let a = Rc::new(attention_weights(&q, &k));
        let out = apply_weights(&a, &v);
        self.tape.op(
            out,
            &[self, key, value],
            Box::new(move |g, needs| {
                let mut dq = needs[0].then(|| vec![T::zero(); q.len()]);
                let mut dk = needs[1].then(|| vec![T::zero(); k.len()]);
                let mut dv = needs[2].then(|| vec![T::zero(); v.len()]);
                let mut da = vec![T::zero(); n * n];
                for bi in 0..b {
                    let ab = MatRef::row_major(a.batch_item(bi), n, n);
                    let gb = MatRef::col_major(g.batch_item(bi), n, cv);
                    if let Some(dv) = dv.as_mut() {
                        gemm(
                            T::one(),
                            ab.t(),
                            gb,
                            T::zero(),
                            MatMut::col_major(&mut dv[bi * cv * n..(bi + 1) * cv * n], n, cv),
                        );
                    }
                    if dq.is_none() && dk.is_none() {
                        continue;
                    }
                    gemm(
                        T::one(),
                        gb,
                        MatRef::col_major(v.batch_item(bi), n, cv).t(),
                        T::zero(),
                        MatMut::row_major(&mut da, n, n),
                    );
                    // Softmax Jacobian: dS = A * (dA - rowsum(dA * A)).
                    for (drow, arow) in da.chunks_mut(n).zip(a.batch_item(bi).chunks(n)) {
                        let dot: T = drow.iter().zip(arow).map(|(&d, &p)| d * p).sum();
                        for (d, &p) in drow.iter_mut().zip(arow) {
                            *d = p * (*d - dot);
                        }
                    }
                    let ds = MatRef::row_major(&da, n, n);
                    if let Some(dq) = dq.as_mut() {
                        gemm(
                            T::one(),
                            ds,
                            MatRef::col_major(k.batch_item(bi), n, cq),
                            T::zero(),
                            MatMut::col_major(&mut dq[bi * cq * n..(bi + 1) * cq * n], n, cq),
                        );
                    }
                    if let Some(dk) = dk.as_mut() {
                        gemm(
                            T::one(),
                            ds.t(),
                            MatRef::col_major(q.batch_item(bi), n, cq),
                            T::zero(),
                            MatMut::col_major(&mut dk[bi * cq * n..(bi + 1) * cq * n], n, cq),
                        );
                    }
                }
                vec![
                    dq.map(|d| Tensor::new(q.shape().to_vec(), d)),
                    dk.map(|d| Tensor::new(k.shape().to_vec(), d)),
                    dv.map(|d| Tensor::new(v.shape().to_vec(), d)),
                ]
            }),
        )
    }
}
