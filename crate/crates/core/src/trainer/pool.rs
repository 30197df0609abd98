use rand::Rng;
use sigan_tensor::Tensor;

/// Buffer of previously generated images shown to the discriminators.
///
/// Until full, every new image is stored and passed through. Afterwards each
/// image is, with probability one half, swapped for a random stored one
/// (which it replaces in the buffer).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryPool {
    capacity: usize,
    images: Vec<Tensor<f32>>,
}

impl HistoryPool {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::new() }
    }

    pub fn from_images(capacity: usize, images: Vec<Tensor<f32>>) -> Self {
        Self { capacity, images }
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn query(&mut self, batch: &Tensor<f32>, rng: &mut impl Rng) -> Tensor<f32> {
        if self.capacity == 0 {
            return batch.clone();
        }
        let (b, c, h, w) = batch.dims4();
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..b {
            let img = Tensor::new([c, h, w], batch.batch_item(i).to_vec());
            if self.images.len() < self.capacity {
                out.extend_from_slice(img.data());
                self.images.push(img);
            } else if rng.random_bool(0.5) {
                let k = rng.random_range(0..self.images.len());
                out.extend_from_slice(self.images[k].data());
                self.images[k] = img;
            } else {
                out.extend_from_slice(img.data());
            }
        }
        Tensor::new([b, c, h, w], out)
    }
}
