//! 2-D convolution and transposed convolution via im2col + gemm.
//!
//! Weights use the conventional layouts: `Cout x Cin x KH x KW` for
//! convolution and `Cin x Cout x KH x KW` for transposed convolution.

use std::rc::Rc;

use crate::linalg::{gemm, MatMut, MatRef};
use crate::{Float, Tensor, Var};

/// Kernel, stride and zero padding of a 2-D convolution, as `(rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel: (kernel, kernel), stride: (stride, stride), padding: (padding, padding) }
    }

    /// Output size of a convolution, `None` when the kernel does not fit.
    pub fn conv_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let out = |n: usize, k: usize, s: usize, p: usize| {
            let padded = n + 2 * p;
            (s > 0 && padded >= k).then(|| (padded - k) / s + 1)
        };
        Some((
            out(h, self.kernel.0, self.stride.0, self.padding.0)?,
            out(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    /// Output size of a transposed convolution.
    pub fn transpose_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let out = |n: usize, k: usize, s: usize, p: usize| {
            let full = n.checked_sub(1)? * s + k;
            full.checked_sub(2 * p).filter(|&v| v > 0)
        };
        Some((
            out(h, self.kernel.0, self.stride.0, self.padding.0)?,
            out(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Unfolds one `C x H x W` image into a `(C*KH*KW) x (OH*OW)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize, g: &Conv2dGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * plane;
                let dst = &mut cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(cols: &[T], c: usize, h: usize, w: usize, g: &Conv2dGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * plane;
                let src = &cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, transposed: bool) {
    let (_, c, _, _) = x.dims4();
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv weight must be 4-D, got {ws:?}");
    let (cin, cout) = if transposed { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
    assert_eq!(cin, c, "conv expects {cin} input channels, got {c}");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[cout], "conv bias shape mismatch");
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

/// Plain convolution of a `B x C x H x W` batch.
pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Conv2dGeometry,
) -> Tensor<T> {
    check_conv(x, w, bias, false);
    let (b, c, h, wd) = x.dims4();
    let (cout, k) = (w.shape()[0], w.len() / w.shape()[0]);
    let (oh, ow) = g.conv_output(h, wd).expect("convolution kernel larger than padded input");
    let plane = oh * ow;
    let mut out = vec![T::zero(); b * cout * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for bi in 0..b {
        let xb = x.batch_item(bi);
        let cols_ref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, c, h, wd, &g, oh, ow, &mut cols);
            &cols
        };
        gemm(
            T::one(),
            MatRef::row_major(w.data(), cout, k),
            MatRef::row_major(cols_ref, k, plane),
            T::zero(),
            MatMut::row_major(&mut out[bi * cout * plane..(bi + 1) * cout * plane], cout, plane),
        );
    }
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), plane);
    }
    Tensor::new([b, cout, oh, ow], out)
}

/// Transposed convolution (the adjoint of [`conv2d_forward`] in `x`).
pub fn conv_transpose2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Conv2dGeometry,
) -> Tensor<T> {
    check_conv(x, w, bias, true);
    let (b, cin, h, wd) = x.dims4();
    let cout = w.shape()[1];
    let k = w.len() / cin;
    let (oh, ow) = g.transpose_output(h, wd).expect("invalid transposed convolution geometry");
    let (plane_in, plane_out) = (h * wd, oh * ow);
    let mut out = vec![T::zero(); b * cout * plane_out];
    let mut cols = vec![T::zero(); k * plane_in];
    for bi in 0..b {
        gemm(
            T::one(),
            MatRef::row_major(w.data(), cin, k).t(),
            MatRef::row_major(x.batch_item(bi), cin, plane_in),
            T::zero(),
            MatMut::row_major(&mut cols, k, plane_in),
        );
        col2im(&cols, cout, oh, ow, &g, h, wd, &mut out[bi * cout * plane_out..(bi + 1) * cout * plane_out]);
    }
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), plane_out);
    }
    Tensor::new([b, cout, oh, ow], out)
}

fn bias_grad<T: Float>(g: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = g.dims4();
    let plane = h * w;
    let mut out = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let start = (bi * c + ci) * plane;
            *o += g.data()[start..start + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new([c], out)
}

impl<'t, T: Float> Var<'t, T> {
    /// Convolution with weight `Cout x Cin x KH x KW` and optional bias `Cout`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, g: Conv2dGeometry) -> Var<'t, T> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let out = conv2d_forward(&x, &w, b.as_deref(), g);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.op(out, &parents, Box::new(move |grad, needs| conv2d_backward(&x, &w, grad, g, needs)))
    }

    /// Transposed convolution with weight `Cin x Cout x KH x KW`.
    pub fn conv_transpose2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, g: Conv2dGeometry) -> Var<'t, T> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let out = conv_transpose2d_forward(&x, &w, b.as_deref(), g);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.op(out, &parents, Box::new(move |grad, needs| conv_transpose2d_backward(&x, &w, grad, g, needs)))
    }
}

fn conv2d_backward<T: Float>(
    x: &Rc<Tensor<T>>,
    w: &Rc<Tensor<T>>,
    grad: &Tensor<T>,
    g: Conv2dGeometry,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (b, c, h, wd) = x.dims4();
    let (_, cout, oh, ow) = grad.dims4();
    let k = w.len() / cout;
    let plane = oh * ow;
    let pointwise = g.is_pointwise();
    let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * plane }];
    let mut dcols = vec![T::zero(); if dx.is_some() && !pointwise { k * plane } else { 0 }];
    for bi in 0..b {
        let gb = MatRef::row_major(grad.batch_item(bi), cout, plane);
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[T] = if pointwise {
                x.batch_item(bi)
            } else {
                im2col(x.batch_item(bi), c, h, wd, &g, oh, ow, &mut cols);
                &cols
            };
            gemm(T::one(), gb, MatRef::row_major(cols_ref, k, plane).t(), T::one(), MatMut::row_major(dw, cout, k));
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd];
            if pointwise {
                gemm(
                    T::one(),
                    MatRef::row_major(w.data(), cout, k).t(),
                    gb,
                    T::zero(),
                    MatMut::row_major(dxb, k, plane),
                );
            } else {
                gemm(
                    T::one(),
                    MatRef::row_major(w.data(), cout, k).t(),
                    gb,
                    T::zero(),
                    MatMut::row_major(&mut dcols, k, plane),
                );
                col2im(&dcols, c, h, wd, &g, oh, ow, dxb);
            }
        }
    }
    let mut result =
        vec![dx.map(|d| Tensor::new(x.shape().to_vec(), d)), dw.map(|d| Tensor::new(w.shape().to_vec(), d))];
    if needs.len() > 2 {
        result.push(needs[2].then(|| bias_grad(grad)));
    }
    result
}

fn conv_transpose2d_backward<T: Float>(
    x: &Rc<Tensor<T>>,
    w: &Rc<Tensor<T>>,
    grad: &Tensor<T>,
    g: Conv2dGeometry,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (b, cin, h, wd) = x.dims4();
    let (_, cout, oh, ow) = grad.dims4();
    let k = w.len() / cin;
    let plane_in = h * wd;
    let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); k * plane_in];
    for bi in 0..b {
        // Gradient columns have the layout a forward convolution over the
        // output would produce.
        im2col(grad.batch_item(bi), cout, oh, ow, &g, h, wd, &mut cols);
        let cols_ref = MatRef::row_major(&cols, k, plane_in);
        if let Some(dx) = dx.as_mut() {
            gemm(
                T::one(),
                MatRef::row_major(w.data(), cin, k),
                cols_ref,
                T::zero(),
                MatMut::row_major(&mut dx[bi * cin * plane_in..(bi + 1) * cin * plane_in], cin, plane_in),
            );
        }
        if let Some(dw) = dw.as_mut() {
            gemm(
                T::one(),
                MatRef::row_major(x.batch_item(bi), cin, plane_in),
                cols_ref.t(),
                T::one(),
                MatMut::row_major(dw, cin, k),
            );
        }
    }
    let mut result =
        vec![dx.map(|d| Tensor::new(x.shape().to_vec(), d)), dw.map(|d| Tensor::new(w.shape().to_vec(), d))];
    if needs.len() > 2 {
        result.push(needs[2].then(|| bias_grad(grad)));
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: Conv2dGeometry) -> Tensor<f64> {
        let (b, c, h, wd) = x.dims4();
        let (cout, _, kh, kw) = w.dims4();
        let (oh, ow) = g.conv_output(h, wd).unwrap();
        Tensor::from_fn([b, cout, oh, ow], |idx| {
            let ox = idx % ow;
            let oy = (idx / ow) % oh;
            let co = (idx / (ow * oh)) % cout;
            let bi = idx / (ow * oh * cout);
            let mut acc = 0.0;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                        let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                * w.data()[((co * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn conv_matches_naive_loops() {
        for g in [
            Conv2dGeometry::square(4, 2, 1),
            Conv2dGeometry::square(3, 1, 1),
            Conv2dGeometry::square(1, 1, 0),
            Conv2dGeometry { kernel: (1, 3), stride: (1, 1), padding: (0, 1) },
        ] {
            let x = pseudo([2, 3, 6, 6], 1);
            let w = pseudo([4, 3, g.kernel.0, g.kernel.1], 2);
            let got = conv2d_forward(&x, &w, None, g);
            let want = naive_conv(&x, &w, g);
            assert!(got.max_abs_diff(&want) < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for the same weights.
        let g = Conv2dGeometry::square(4, 2, 1);
        let x = pseudo([1, 3, 8, 8], 3);
        let w = pseudo([2, 3, 4, 4], 4); // conv: 3 -> 2
        let y = pseudo([1, 2, 4, 4], 5);
        let cx = conv2d_forward(&x, &w, None, g);
        let ty = conv_transpose2d_forward(&y, &w, None, g);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!(ty.shape(), &[1, 3, 8, 8]);
    }

    #[test]
    fn output_size_arithmetic() {
        let g = Conv2dGeometry::square(4, 2, 1);
        assert_eq!(g.conv_output(256, 256), Some((128, 128)));
        assert_eq!(g.transpose_output(128, 128), Some((256, 256)));
        assert_eq!(Conv2dGeometry::square(4, 1, 1).conv_output(32, 32), Some((31, 31)));
        assert_eq!(Conv2dGeometry::square(4, 2, 1).conv_output(1, 1), None);
    }
}
