//! Seeded unpaired batch sampling.
//!
//! Each domain is consumed as a stream of shuffled passes. The larger domain
//! defines the epoch: one epoch is `floor(len / batch)` steps over a fresh
//! pass, with the remainder dropped. The smaller domain keeps streaming and
//! is reshuffled whenever a pass runs out. Every permutation is derived from
//! `(seed, domain, pass)`, so the sampler state is a handful of integers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

use super::{stack_samples, DomainCollection};
use crate::error::{Result, SiganError};

/// Two independently drawn batches, one per domain.
#[derive(Clone, Debug)]
pub struct BatchPair {
    /// Defect-free images, `B x 1 x H x W`.
    pub batch_a: Tensor<f32>,
    /// Defective images, `B x 1 x H x W`.
    pub batch_b: Tensor<f32>,
    pub ids_a: Vec<String>,
    pub ids_b: Vec<String>,
    pub rng_state_tag: String,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DomainStream {
    len: usize,
    tag: u64,
    pass: u64,
    cursor: usize,
    #[serde(skip)]
    order: Vec<usize>,
}

impl DomainStream {
    fn new(len: usize, tag: u64) -> Self {
        Self { len, tag, pass: 0, cursor: 0, order: Vec::new() }
    }

    fn permutation(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ self.tag) ^ self.pass));
        order.shuffle(&mut rng);
        order
    }

    fn next(&mut self, seed: u64) -> usize {
        if self.cursor == self.len {
            self.pass += 1;
            self.cursor = 0;
            self.order.clear();
        }
        if self.order.is_empty() {
            self.order = self.permutation(seed);
        }
        let idx = self.order[self.cursor];
        self.cursor += 1;
        idx
    }

    fn start_new_pass(&mut self) {
        if self.cursor != 0 {
            self.pass += 1;
            self.cursor = 0;
            self.order.clear();
        }
    }
}

/// Serializable position of an [`UnpairedSampler`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub batch_size: usize,
    pub epoch: u64,
    pub step_in_epoch: usize,
    stream_a: DomainStream,
    stream_b: DomainStream,
}

#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    state: SamplerState,
}

impl UnpairedSampler {
    pub fn new(len_a: usize, len_b: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(SiganError::Config("batch size must be at least 1".into()));
        }
        if len_a == 0 || len_b == 0 {
            return Err(SiganError::Config("both domains must contain at least one image".into()));
        }
        if len_a.max(len_b) < batch_size {
            return Err(SiganError::Config(format!(
                "batch size {batch_size} exceeds both domain sizes ({len_a}, {len_b})"
            )));
        }
        if len_a.min(len_b) < batch_size {
            log::warn!("batch size {batch_size} exceeds the smaller domain; its samples repeat within a batch");
        }
        let lead = len_a.max(len_b);
        if !lead.is_multiple_of(batch_size) {
            log::info!("dropping the final partial batch: {} of {lead} images unused per epoch", lead % batch_size);
        }
        Ok(Self {
            state: SamplerState {
                seed,
                batch_size,
                epoch: 0,
                step_in_epoch: 0,
                stream_a: DomainStream::new(len_a, 0xA),
                stream_b: DomainStream::new(len_b, 0xB),
            },
        })
    }

    pub fn for_collection(collection: &DomainCollection, batch_size: usize, seed: u64) -> Result<Self> {
        Self::new(collection.defect_free().len(), collection.defective().len(), batch_size, seed)
    }

    pub fn from_state(state: SamplerState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn batch_size(&self) -> usize {
        self.state.batch_size
    }

    /// Steps in one pass over the larger domain.
    pub fn steps_per_epoch(&self) -> usize {
        self.state.stream_a.len.max(self.state.stream_b.len) / self.state.batch_size
    }

    fn a_leads(&self) -> bool {
        self.state.stream_a.len >= self.state.stream_b.len
    }

    /// Index lists for the next step; rolls over to a new epoch when the
    /// current one is complete.
    pub fn next_indices(&mut self) -> (Vec<usize>, Vec<usize>) {
        if self.state.step_in_epoch == self.steps_per_epoch() {
            self.state.epoch += 1;
            self.state.step_in_epoch = 0;
        }
        if self.state.step_in_epoch == 0 {
            if self.a_leads() {
                self.state.stream_a.start_new_pass();
            } else {
                self.state.stream_b.start_new_pass();
            }
        }
        let (seed, bs) = (self.state.seed, self.state.batch_size);
        let a = (0..bs).map(|_| self.state.stream_a.next(seed)).collect();
        let b = (0..bs).map(|_| self.state.stream_b.next(seed)).collect();
        self.state.step_in_epoch += 1;
        (a, b)
    }

    /// Draws the next unpaired batch from `collection`.
    pub fn next_batch(&mut self, collection: &DomainCollection) -> Result<BatchPair> {
        let (la, lb) = (collection.defect_free().len(), collection.defective().len());
        if (la, lb) != (self.state.stream_a.len, self.state.stream_b.len) {
            return Err(SiganError::Config(format!(
                "sampler built for domain sizes ({}, {}) but collection has ({la}, {lb})",
                self.state.stream_a.len, self.state.stream_b.len
            )));
        }
        let tag = format!("seed={};epoch={};step={}", self.state.seed, self.state.epoch, self.state.step_in_epoch);
        let (ia, ib) = self.next_indices();
        let a: Vec<_> = ia.iter().map(|&i| &collection.defect_free()[i]).collect();
        let b: Vec<_> = ib.iter().map(|&i| &collection.defective()[i]).collect();
        let (sa, sb) = (a[0].pixels.shape(), b[0].pixels.shape());
        if sa != sb {
            return Err(SiganError::shape("unpaired batch", sa, sb));
        }
        Ok(BatchPair {
            batch_a: stack_samples(a.iter().copied()),
            batch_b: stack_samples(b.iter().copied()),
            ids_a: a.iter().map(|s| s.id.clone()).collect(),
            ids_b: b.iter().map(|s| s.id.clone()).collect(),
            rng_state_tag: tag,
        })
    }
}
