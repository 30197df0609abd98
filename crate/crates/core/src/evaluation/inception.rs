//! InceptionV3 inference up to the 2048-wide global average pool.
//!
//! Layer names and tensor layouts follow the torchvision `inception_v3`
//! state dict (`Mixed_5b.branch1x1.conv.weight`, `...bn.running_var`, ...),
//! so exported ImageNet weights load by name. Batch norms are folded into a
//! per-channel scale and shift at load time. The auxiliary classifier and
//! the final fully connected layer are not used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sigan_tensor::ops::{avg_pool2d, conv2d_forward, global_avg_pool, max_pool2d};
use sigan_tensor::{Conv2dGeometry, Tensor};

use super::FeatureExtractor;
use crate::error::{Result, SiganError};
use crate::models::Checkpoint;

pub const INPUT_SIZE: usize = 299;
pub const FEATURE_DIM: usize = 2048;
pub const CACHE_ENV: &str = "SIGAN_CACHE";
pub const WEIGHTS_DIR: &str = "inception_v3";
const BN_EPS: f32 = 0.001;

/// One conv + batch norm + ReLU unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub geometry: Conv2dGeometry,
}

fn spec(
    name: String,
    cin: usize,
    cout: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> ConvSpec {
    ConvSpec { name, cin, cout, geometry: Conv2dGeometry { kernel, stride: (stride, stride), padding } }
}

fn block_a(p: &str, cin: usize, pool: usize) -> Vec<ConvSpec> {
    vec![
        spec(format!("{p}.branch1x1"), cin, 64, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch5x5_1"), cin, 48, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch5x5_2"), 48, 64, (5, 5), 1, (2, 2)),
        spec(format!("{p}.branch3x3dbl_1"), cin, 64, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3dbl_2"), 64, 96, (3, 3), 1, (1, 1)),
        spec(format!("{p}.branch3x3dbl_3"), 96, 96, (3, 3), 1, (1, 1)),
        spec(format!("{p}.branch_pool"), cin, pool, (1, 1), 1, (0, 0)),
    ]
}

fn block_b(p: &str, cin: usize) -> Vec<ConvSpec> {
    vec![
        spec(format!("{p}.branch3x3"), cin, 384, (3, 3), 2, (0, 0)),
        spec(format!("{p}.branch3x3dbl_1"), cin, 64, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3dbl_2"), 64, 96, (3, 3), 1, (1, 1)),
        spec(format!("{p}.branch3x3dbl_3"), 96, 96, (3, 3), 2, (0, 0)),
    ]
}

fn block_c(p: &str, c7: usize) -> Vec<ConvSpec> {
    let (row, col) = (((1, 7), (0, 3)), ((7, 1), (3, 0)));
    vec![
        spec(format!("{p}.branch1x1"), 768, 192, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch7x7_1"), 768, c7, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch7x7_2"), c7, c7, row.0, 1, row.1),
        spec(format!("{p}.branch7x7_3"), c7, 192, col.0, 1, col.1),
        spec(format!("{p}.branch7x7dbl_1"), 768, c7, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch7x7dbl_2"), c7, c7, col.0, 1, col.1),
        spec(format!("{p}.branch7x7dbl_3"), c7, c7, row.0, 1, row.1),
        spec(format!("{p}.branch7x7dbl_4"), c7, c7, col.0, 1, col.1),
        spec(format!("{p}.branch7x7dbl_5"), c7, 192, row.0, 1, row.1),
        spec(format!("{p}.branch_pool"), 768, 192, (1, 1), 1, (0, 0)),
    ]
}

fn block_d(p: &str) -> Vec<ConvSpec> {
    vec![
        spec(format!("{p}.branch3x3_1"), 768, 192, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3_2"), 192, 320, (3, 3), 2, (0, 0)),
        spec(format!("{p}.branch7x7x3_1"), 768, 192, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3)),
        spec(format!("{p}.branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0)),
        spec(format!("{p}.branch7x7x3_4"), 192, 192, (3, 3), 2, (0, 0)),
    ]
}

fn block_e(p: &str, cin: usize) -> Vec<ConvSpec> {
    vec![
        spec(format!("{p}.branch1x1"), cin, 320, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3_1"), cin, 384, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3_2a"), 384, 384, (1, 3), 1, (0, 1)),
        spec(format!("{p}.branch3x3_2b"), 384, 384, (3, 1), 1, (1, 0)),
        spec(format!("{p}.branch3x3dbl_1"), cin, 448, (1, 1), 1, (0, 0)),
        spec(format!("{p}.branch3x3dbl_2"), 448, 384, (3, 3), 1, (1, 1)),
        spec(format!("{p}.branch3x3dbl_3a"), 384, 384, (1, 3), 1, (0, 1)),
        spec(format!("{p}.branch3x3dbl_3b"), 384, 384, (3, 1), 1, (1, 0)),
        spec(format!("{p}.branch_pool"), cin, 192, (1, 1), 1, (0, 0)),
    ]
}

/// Every conv unit of the feature trunk.
pub fn layer_specs() -> Vec<ConvSpec> {
    let mut out = vec![
        spec("Conv2d_1a_3x3".into(), 3, 32, (3, 3), 2, (0, 0)),
        spec("Conv2d_2a_3x3".into(), 32, 32, (3, 3), 1, (0, 0)),
        spec("Conv2d_2b_3x3".into(), 32, 64, (3, 3), 1, (1, 1)),
        spec("Conv2d_3b_1x1".into(), 64, 80, (1, 1), 1, (0, 0)),
        spec("Conv2d_4a_3x3".into(), 80, 192, (3, 3), 1, (0, 0)),
    ];
    out.extend(block_a("Mixed_5b", 192, 32));
    out.extend(block_a("Mixed_5c", 256, 64));
    out.extend(block_a("Mixed_5d", 288, 64));
    out.extend(block_b("Mixed_6a", 288));
    out.extend(block_c("Mixed_6b", 128));
    out.extend(block_c("Mixed_6c", 160));
    out.extend(block_c("Mixed_6d", 160));
    out.extend(block_c("Mixed_6e", 192));
    out.extend(block_d("Mixed_7a"));
    out.extend(block_e("Mixed_7b", 1280));
    out.extend(block_e("Mixed_7c", 2048));
    out
}

#[derive(Clone, Debug)]
struct ConvUnit {
    weight: Tensor<f32>,
    scale: Vec<f32>,
    shift: Vec<f32>,
    geometry: Conv2dGeometry,
}

impl ConvUnit {
    fn forward(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut y = conv2d_forward(x, &self.weight, None, self.geometry);
        let (_, c, h, w) = y.dims4();
        for (i, plane) in y.data_mut().chunks_mut(h * w).enumerate() {
            let (s, t) = (self.scale[i % c], self.shift[i % c]);
            plane.iter_mut().for_each(|v| *v = (*v * s + t).max(0.0));
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct InceptionV3 {
    units: BTreeMap<String, ConvUnit>,
    source: String,
}

/// `$SIGAN_CACHE/inception_v3`, with `SIGAN_CACHE` defaulting to
/// `~/.cache/sigan`.
pub fn default_weights_dir() -> PathBuf {
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| {
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        home.join(".cache").join("sigan")
    });
    cache.join(WEIGHTS_DIR)
}

impl InceptionV3 {
    /// Builds the network from torchvision-named tensors.
    pub fn from_tensors(tensors: &BTreeMap<String, Tensor<f32>>, source: impl Into<String>) -> Result<Self> {
        let get = |name: String, shape: &[usize]| -> Result<&Tensor<f32>> {
            let t = tensors.get(&name).ok_or_else(|| SiganError::Extractor(format!("missing weight {name}")))?;
            if t.shape() != shape {
                return Err(SiganError::Extractor(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let mut units = BTreeMap::new();
        for s in layer_specs() {
            let (kh, kw) = s.geometry.kernel;
            let weight = get(format!("{}.conv.weight", s.name), &[s.cout, s.cin, kh, kw])?.clone();
            let gamma = get(format!("{}.bn.weight", s.name), &[s.cout])?.data();
            let beta = get(format!("{}.bn.bias", s.name), &[s.cout])?.data();
            let mean = get(format!("{}.bn.running_mean", s.name), &[s.cout])?.data();
            let var = get(format!("{}.bn.running_var", s.name), &[s.cout])?.data();
            let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
            let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
            units.insert(s.name, ConvUnit { weight, scale, shift, geometry: s.geometry });
        }
        Ok(Self { units, source: source.into() })
    }

    /// Loads exported weights (see `scripts/export_inception.py`).
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(crate::models::META_FILE).exists() {
            return Err(SiganError::Extractor(format!(
                "no InceptionV3 weights at {}; export them with scripts/export_inception.py or set {CACHE_ENV}",
                dir.display()
            )));
        }
        let ck = Checkpoint::load(dir)?;
        Self::from_tensors(&ck.tensors, dir.display().to_string())
    }

    pub fn from_cache() -> Result<Self> {
        Self::load(&default_weights_dir())
    }

    /// Randomly initialised weights with the real layout; for shape checks
    /// and timing without the pretrained file.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for s in layer_specs() {
            let (kh, kw) = s.geometry.kernel;
            let fan_in = s.cin * kh * kw;
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
            let weight = Tensor::from_fn([s.cout, s.cin, kh, kw], |_| normal.sample(&mut rng));
            tensors.insert(format!("{}.conv.weight", s.name), weight);
            tensors.insert(format!("{}.bn.weight", s.name), Tensor::ones([s.cout]));
            tensors.insert(format!("{}.bn.bias", s.name), Tensor::zeros([s.cout]));
            tensors.insert(format!("{}.bn.running_mean", s.name), Tensor::zeros([s.cout]));
            tensors.insert(format!("{}.bn.running_var", s.name), Tensor::ones([s.cout]));
        }
        Self::from_tensors(&tensors, format!("random-{seed}")).expect("specs and tensors agree")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn c(&self, name: &str, x: &Tensor<f32>) -> Tensor<f32> {
        self.units[name].forward(x)
    }

    fn chain(&self, names: &[&str], x: &Tensor<f32>) -> Tensor<f32> {
        names.iter().fold(x.clone(), |h, n| self.c(n, &h))
    }

    fn mixed_a(&self, p: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let n = |s: &str| format!("{p}.{s}");
        cat(&[
            self.c(&n("branch1x1"), x),
            self.chain(&[&n("branch5x5_1"), &n("branch5x5_2")], x),
            self.chain(&[&n("branch3x3dbl_1"), &n("branch3x3dbl_2"), &n("branch3x3dbl_3")], x),
            self.c(&n("branch_pool"), &avg3(x)),
        ])
    }

    fn mixed_b(&self, p: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let n = |s: &str| format!("{p}.{s}");
        cat(&[
            self.c(&n("branch3x3"), x),
            self.chain(&[&n("branch3x3dbl_1"), &n("branch3x3dbl_2"), &n("branch3x3dbl_3")], x),
            max3s2(x),
        ])
    }

    fn mixed_c(&self, p: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let n = |s: &str| format!("{p}.{s}");
        cat(&[
            self.c(&n("branch1x1"), x),
            self.chain(&[&n("branch7x7_1"), &n("branch7x7_2"), &n("branch7x7_3")], x),
            self.chain(
                &[
                    &n("branch7x7dbl_1"),
                    &n("branch7x7dbl_2"),
                    &n("branch7x7dbl_3"),
                    &n("branch7x7dbl_4"),
                    &n("branch7x7dbl_5"),
                ],
                x,
            ),
            self.c(&n("branch_pool"), &avg3(x)),
        ])
    }

    fn mixed_d(&self, p: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let n = |s: &str| format!("{p}.{s}");
        cat(&[
            self.chain(&[&n("branch3x3_1"), &n("branch3x3_2")], x),
            self.chain(&[&n("branch7x7x3_1"), &n("branch7x7x3_2"), &n("branch7x7x3_3"), &n("branch7x7x3_4")], x),
            max3s2(x),
        ])
    }

    fn mixed_e(&self, p: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let n = |s: &str| format!("{p}.{s}");
        let b3 = self.c(&n("branch3x3_1"), x);
        let bd = self.chain(&[&n("branch3x3dbl_1"), &n("branch3x3dbl_2")], x);
        cat(&[
            self.c(&n("branch1x1"), x),
            self.c(&n("branch3x3_2a"), &b3),
            self.c(&n("branch3x3_2b"), &b3),
            self.c(&n("branch3x3dbl_3a"), &bd),
            self.c(&n("branch3x3dbl_3b"), &bd),
            self.c(&n("branch_pool"), &avg3(x)),
        ])
    }

    /// Pooled features of a `B x 3 x 299 x 299` batch, `B x 2048`.
    pub fn forward(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut h = self.chain(&["Conv2d_1a_3x3", "Conv2d_2a_3x3", "Conv2d_2b_3x3"], x);
        h = max3s2(&h);
        h = self.chain(&["Conv2d_3b_1x1", "Conv2d_4a_3x3"], &h);
        h = max3s2(&h);
        for p in ["Mixed_5b", "Mixed_5c", "Mixed_5d"] {
            h = self.mixed_a(p, &h);
        }
        h = self.mixed_b("Mixed_6a", &h);
        for p in ["Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e"] {
            h = self.mixed_c(p, &h);
        }
        h = self.mixed_d("Mixed_7a", &h);
        h = self.mixed_e("Mixed_7b", &h);
        h = self.mixed_e("Mixed_7c", &h);
        global_avg_pool(&h)
    }
}

impl FeatureExtractor for InceptionV3 {
    fn id(&self) -> String {
        "inception_v3-avgpool-2048".into()
    }

    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    /// Bilinear resize to 299x299, the gray channel copied to RGB, values
    /// kept in `[-1, 1]` (the range the torchvision network sees after its
    /// own input transform).
    fn extract(&self, pixels: &Tensor<f32>) -> Result<Vec<f64>> {
        let resized = resize_bilinear(pixels, INPUT_SIZE, INPUT_SIZE);
        let plane = resized.data();
        let rgb: Vec<f32> = plane.iter().chain(plane).chain(plane).copied().collect();
        let out = self.forward(&Tensor::new([1, 3, INPUT_SIZE, INPUT_SIZE], rgb));
        if !out.all_finite() {
            return Err(SiganError::Extractor("non-finite InceptionV3 features".into()));
        }
        Ok(out.data().iter().map(|&v| v as f64).collect())
    }
}

fn avg3(x: &Tensor<f32>) -> Tensor<f32> {
    avg_pool2d(x, Conv2dGeometry::square(3, 1, 1), true)
}

fn max3s2(x: &Tensor<f32>) -> Tensor<f32> {
    max_pool2d(x, Conv2dGeometry::square(3, 2, 0))
}

/// Channel concatenation of `B x C_i x H x W` tensors.
fn cat(parts: &[Tensor<f32>]) -> Tensor<f32> {
    let (b, _, h, w) = parts[0].dims4();
    let c: usize = parts.iter().map(|p| p.dims4().1).sum();
    let mut data = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for p in parts {
            data.extend_from_slice(p.batch_item(bi));
        }
    }
    Tensor::new([b, c, h, w], data)
}

/// Bilinear resampling of an `H x W` grid with half-pixel centres and edge
/// clamping.
pub fn resize_bilinear(grid: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let taps = |i: usize, out: usize, inp: usize| {
        let src = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|y| taps(y, out_h, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, out_w, w)).collect();
    let d = grid.data();
    Tensor::from_fn([out_h, out_w], |i| {
        let ((y0, y1, fy), (x0, x1, fx)) = (ys[i / out_w], xs[i % out_w]);
        let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
        let bottom = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_torchvision_trunk() {
        // torchvision inception_v3 has 27,161,264 parameters; its fc layer
        // (2048 * 1000 + 1000) and the auxiliary head (3,326,696) are not
        // part of the trunk.
        let params: usize =
            layer_specs().iter().map(|s| s.cout * s.cin * s.geometry.kernel.0 * s.geometry.kernel.1 + 2 * s.cout).sum();
        assert_eq!(params, 27_161_264 - 2_049_000 - 3_326_696);
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_identity() {
        let g = Tensor::from_fn([5, 7], |i| i as f32);
        assert_eq!(resize_bilinear(&g, 5, 7), g);
        let c = resize_bilinear(&Tensor::full([3, 3], 0.25), 8, 11);
        assert!(c.data().iter().all(|&v| v == 0.25));
        let up = resize_bilinear(&Tensor::new([1, 2], vec![0.0, 1.0]), 1, 4);
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn missing_weights_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = InceptionV3::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("export_inception.py"), "{err}");
        let mut partial = BTreeMap::new();
        partial.insert("Conv2d_1a_3x3.conv.weight".to_string(), Tensor::zeros([32, 3, 3, 3]));
        assert!(InceptionV3::from_tensors(&partial, "x").is_err());
    }

    #[test]
    fn pooled_features_are_2048_wide() {
        let net = InceptionV3::random(0);
        let px = Tensor::from_fn([256, 256], |i| ((i % 256) as f32 / 128.0) - 1.0);
        let f = net.extract(&px).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
