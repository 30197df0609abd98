use crate::{Float, Tensor, Var};

impl<'t, T: Float> Var<'t, T> {
    /// Concatenates 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (b, _, h, w) = values[0].dims4();
        let plane = h * w;
        let channels: Vec<usize> = values
            .iter()
            .map(|v| {
                let (vb, vc, vh, vw) = v.dims4();
                assert_eq!((vb, vh, vw), (b, h, w), "concat_channels: mismatched batch or spatial size");
                vc
            })
            .collect();
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for v in &values {
                out.extend_from_slice(v.batch_item(bi));
            }
        }
        let tape = parts[0].tape;
        tape.op(
            Tensor::new([b, total, h, w], out),
            parts,
            Box::new(move |g, needs| {
                let mut offset = 0;
                channels
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| {
                        let start = offset;
                        offset += c;
                        need.then(|| {
                            let mut d = Vec::with_capacity(b * c * plane);
                            for bi in 0..b {
                                let base = (bi * total + start) * plane;
                                d.extend_from_slice(&g.data()[base..base + c * plane]);
                            }
                            Tensor::new([b, c, h, w], d)
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Non-overlapping `factor x factor` average pooling.
    pub fn avg_pool(self, factor: usize) -> Var<'t, T> {
        let x = self.value();
        let (b, c, h, w) = x.dims4();
        assert!(factor > 0 && h % factor == 0 && w % factor == 0, "avg_pool: {h}x{w} not divisible by {factor}");
        if factor == 1 {
            return self;
        }
        let (oh, ow) = (h / factor, w / factor);
        let norm = T::one() / T::lit((factor * factor) as f64);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (p, plane) in x.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for xx in 0..w {
                    dst[(y / factor) * ow + xx / factor] += plane[y * w + xx];
                }
            }
            dst.iter_mut().for_each(|v| *v *= norm);
        }
        self.tape.op(
            Tensor::new([b, c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); b * c * h * w];
                for (p, gp) in g.data().chunks(oh * ow).enumerate() {
                    let dst = &mut d[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = gp[(y / factor) * ow + xx / factor] * norm;
                        }
                    }
                }
                vec![Some(Tensor::new([b, c, h, w], d))]
            }),
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Var<'t, T> {
        assert!(factor > 0, "upsample factor must be positive");
        if factor == 1 {
            return self;
        }
        let x = self.value();
        let (b, c, h, w) = x.dims4();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (p, plane) in x.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = plane[(y / factor) * w + xx / factor];
                }
            }
        }
        self.tape.op(
            Tensor::new([b, c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); b * c * h * w];
                for (p, gp) in g.data().chunks(oh * ow).enumerate() {
                    let dst = &mut d[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / factor) * w + xx / factor] += gp[y * ow + xx];
                        }
                    }
                }
                vec![Some(Tensor::new([b, c, h, w], d))]
            }),
        )
    }
}
