//! Batch / instance normalization and per-channel affine maps.

use std::rc::Rc;

use crate::{Float, Tensor, Var};

/// Which axes share normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormGroups {
    /// One group per channel over `(B, H, W)`.
    Batch,
    /// One group per `(b, c)` over `(H, W)`.
    Instance,
}

/// Per-group statistics produced by [`Var::normalize`].
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements per group.
    pub count: usize,
}

fn group_of(groups: NormGroups, b: usize, c: usize, channels: usize) -> usize {
    match groups {
        NormGroups::Batch => c,
        NormGroups::Instance => b * channels + c,
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// Zero-mean / unit-variance normalization of a 4-D tensor with no affine
    /// part. Returns the statistics alongside for running-average tracking.
    pub fn normalize(self, groups: NormGroups, eps: T) -> (Var<'t, T>, NormStats<T>) {
        let x = self.value();
        let (b, c, h, w) = x.dims4();
        let plane = h * w;
        let n_groups = match groups {
            NormGroups::Batch => c,
            NormGroups::Instance => b * c,
        };
        let count = x.len() / n_groups;
        let inv_count = T::one() / T::lit(count as f64);
        let mut mean = vec![T::zero(); n_groups];
        let mut var = vec![T::zero(); n_groups];
        for bi in 0..b {
            for ci in 0..c {
                let gi = group_of(groups, bi, ci, c);
                let s = &x.data()[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                mean[gi] += s.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_count);
        for bi in 0..b {
            for ci in 0..c {
                let gi = group_of(groups, bi, ci, c);
                let s = &x.data()[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                var[gi] += s.iter().map(|&v| (v - mean[gi]) * (v - mean[gi])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let gi = group_of(groups, bi, ci, c);
                let range = (bi * c + ci) * plane..(bi * c + ci + 1) * plane;
                for (o, &v) in out[range.clone()].iter_mut().zip(&x.data()[range]) {
                    *o = (v - mean[gi]) * inv_std[gi];
                }
            }
        }
        let xhat = Rc::new(Tensor::new(x.shape().to_vec(), out.clone()));
        let stats = NormStats { mean, var, count };
        let var_out = self.tape.op(
            Tensor::new(x.shape().to_vec(), out),
            &[self],
            Box::new(move |g, _| {
                let mut sum_g = vec![T::zero(); n_groups];
                let mut sum_gx = vec![T::zero(); n_groups];
                for bi in 0..b {
                    for ci in 0..c {
                        let gi = group_of(groups, bi, ci, c);
                        let range = (bi * c + ci) * plane..(bi * c + ci + 1) * plane;
                        for (&gv, &xv) in g.data()[range.clone()].iter().zip(&xhat.data()[range]) {
                            sum_g[gi] += gv;
                            sum_gx[gi] += gv * xv;
                        }
                    }
                }
                let mut dx = vec![T::zero(); g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let gi = group_of(groups, bi, ci, c);
                        let (mg, mgx) = (sum_g[gi] * inv_count, sum_gx[gi] * inv_count);
                        let range = (bi * c + ci) * plane..(bi * c + ci + 1) * plane;
                        for ((d, &gv), &xv) in
                            dx[range.clone()].iter_mut().zip(&g.data()[range.clone()]).zip(&xhat.data()[range])
                        {
                            *d = inv_std[gi] * (gv - mg - xv * mgx);
                        }
                    }
                }
                vec![Some(Tensor::new(g.shape().to_vec(), dx))]
            }),
        );
        (var_out, stats)
    }

    /// `y[b, c] = x[b, c] * scale[c] + shift[c]` with 1-D `scale` and `shift`.
    pub fn channel_affine(self, scale: Var<'t, T>, shift: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let (b, c, h, w) = x.dims4();
        let (s, t) = (scale.value(), shift.value());
        assert_eq!(s.shape(), &[c], "channel_affine scale shape");
        assert_eq!(t.shape(), &[c], "channel_affine shift shape");
        let plane = h * w;
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let ci = i % c;
            for v in chunk {
                *v = *v * s.data()[ci] + t.data()[ci];
            }
        }
        self.tape.op(
            Tensor::new([b, c, h, w], out),
            &[self, scale, shift],
            Box::new(move |g, needs| {
                let dx = needs[0].then(|| {
                    let mut d = g.data().to_vec();
                    for (i, chunk) in d.chunks_mut(plane).enumerate() {
                        let sc = s.data()[i % c];
                        chunk.iter_mut().for_each(|v| *v *= sc);
                    }
                    Tensor::new(g.shape().to_vec(), d)
                });
                let mut ds = vec![T::zero(); c];
                let mut dt = vec![T::zero(); c];
                for (i, (gc, xc)) in g.data().chunks(plane).zip(x.data().chunks(plane)).enumerate() {
                    let ci = i % c;
                    for (&gv, &xv) in gc.iter().zip(xc) {
                        ds[ci] += gv * xv;
                        dt[ci] += gv;
                    }
                }
                vec![dx, needs[1].then(|| Tensor::new([c], ds)), needs[2].then(|| Tensor::new([c], dt))]
            }),
        )
    }
}
