//! Inference-only pooling kernels with overlapping windows.

use crate::{Float, Tensor};

use super::conv::Conv2dGeometry;

/// Max pooling; padded positions never win.
pub fn max_pool2d<T: Float>(x: &Tensor<T>, g: Conv2dGeometry) -> Tensor<T> {
    pool(x, g, Reduce::Max)
}

/// Average pooling. With `count_padding` the divisor is always the full
/// window size, otherwise only in-bounds taps are counted.
pub fn avg_pool2d<T: Float>(x: &Tensor<T>, g: Conv2dGeometry, count_padding: bool) -> Tensor<T> {
    pool(x, g, Reduce::Mean { count_padding })
}

#[derive(Clone, Copy)]
enum Reduce {
    Max,
    Mean { count_padding: bool },
}

/// Mean over the spatial axes, `B x C x H x W -> B x C`.
pub fn global_avg_pool<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let inv = T::one() / T::lit((h * w) as f64);
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new([b, c], data)
}

fn pool<T: Float>(x: &Tensor<T>, g: Conv2dGeometry, reduce: Reduce) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (oh, ow) = g.conv_output(h, w).expect("pooling window larger than padded input");
    let (kh, kw) = g.kernel;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * g.stride.0) as isize - g.padding.0 as isize;
                let x0 = (ox * g.stride.1) as isize - g.padding.1 as isize;
                let ys = (y0.max(0) as usize)..((y0 + kh as isize).min(h as isize) as usize);
                let xs = (x0.max(0) as usize)..((x0 + kw as isize).min(w as isize) as usize);
                let taps = ys.len() * xs.len();
                let window = ys.flat_map(|yy| xs.clone().map(move |xx| plane[yy * w + xx]));
                out.push(match reduce {
                    Reduce::Max => window.fold(T::neg_infinity(), T::max),
                    Reduce::Mean { count_padding } => {
                        let div = if count_padding { kh * kw } else { taps };
                        window.fold(T::zero(), |a, b| a + b) / T::lit(div as f64)
                    }
                });
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}
