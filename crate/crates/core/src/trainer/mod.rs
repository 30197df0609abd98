//! Alternating adversarial training of the two generators and two
//! discriminators, with checkpointing and a JSON-lines log.

mod config;
mod optim;
mod pool;
mod step;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sigan_tensor::{Tape, Tensor};

use crate::data::{augment_offline, BatchPair, DomainCollection, SamplerState, UnpairedSampler};
use crate::error::{Result, SiganError};
use crate::losses::LossReport;
use crate::models::{generator_forward, init_params, Checkpoint, ForwardCtx, Mode, ModelSet, ParamStore};

pub use config::{TrainConfig, UpdateOrder};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use pool::HistoryPool;
pub use step::{discriminator_pass, generator_pass, GeneratorPass, Networks};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Learning rate for `epoch`: constant for `epochs_constant` epochs, then
/// linear decay reaching zero at the final epoch.
pub fn lr_schedule(epoch: u64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.total_epochs();
    if epoch > total {
        return Err(SiganError::Config(format!("epoch {epoch} outside the schedule of {total} epochs")));
    }
    if epoch < cfg.epochs_constant {
        return Ok(cfg.base_lr);
    }
    if epoch == total {
        return Ok(0.0);
    }
    Ok(cfg.base_lr * ((total - epoch) as f64 / cfg.epochs_decay as f64))
}

/// The defective class selected by the config, optionally expanded by
/// offline augmentation.
pub fn prepare_training_data(data: DomainCollection, cfg: &TrainConfig) -> Result<DomainCollection> {
    let data = data.restrict_defective(cfg.defect_class)?;
    if data.defective().is_empty() {
        return Err(SiganError::Config(format!("no {} images in the training split", cfg.defect_class)));
    }
    if cfg.offline_augment {
        let augmented = augment_offline(data.defective());
        data.with_defective(augmented)
    } else {
        Ok(data)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub models: ModelSet,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    pub sampler: SamplerState,
    pub history: Vec<LossReport>,
    pub pool_a: HistoryPool,
    pub pool_b: HistoryPool,
}

#[derive(Serialize, Deserialize)]
struct StateExtras {
    opt_gen_t: u64,
    opt_disc_t: u64,
    sampler: SamplerState,
    history: Vec<LossReport>,
    pool_a: usize,
    pool_b: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn prefixed<'a>(
    prefix: &'a str,
    store: &'a mut ParamStore<f32>,
) -> impl Iterator<Item = (String, &'a mut Tensor<f32>)> + 'a {
    store.params.iter_mut().map(move |(k, v)| (format!("{prefix}/{k}"), v))
}

fn with_prefix(prefix: &str, grads: BTreeMap<String, Tensor<f32>>) -> impl Iterator<Item = (String, Tensor<f32>)> + '_ {
    grads.into_iter().map(move |(k, v)| (format!("{prefix}/{k}"), v))
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
    sampler: UnpairedSampler,
}

impl Trainer {
    /// Fresh models and optimizer state for `data`.
    pub fn new(cfg: TrainConfig, data: &DomainCollection) -> Result<Self> {
        cfg.validate()?;
        let models = init_params(&cfg.model_config(), cfg.seed)?;
        let sampler = UnpairedSampler::for_collection(data, cfg.batch_size, cfg.seed)?;
        let pool_cap = if cfg.history_pool { cfg.history_size } else { 0 };
        let state = TrainState {
            epoch: 0,
            step: 0,
            models,
            opt_gen: Adam::new(cfg.adam()),
            opt_disc: Adam::new(cfg.adam()),
            sampler: sampler.state().clone(),
            history: Vec::new(),
            pool_a: HistoryPool::new(pool_cap),
            pool_b: HistoryPool::new(pool_cap),
        };
        Ok(Self { cfg, state, sampler })
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::save`].
    pub fn resume(cfg: TrainConfig, dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let ck = Checkpoint::load(dir)?;
        let extras: StateExtras = serde_json::from_value(ck.meta.extras.clone())
            .map_err(|e| SiganError::Checkpoint(format!("{} has no resumable training state: {e}", dir.display())))?;
        let models = ck.models()?;
        if models.config() != cfg.model_config() {
            return Err(SiganError::Config("checkpoint architecture differs from the configuration".into()));
        }
        let restore = |prefix: &str, t: u64| Adam {
            cfg: cfg.adam(),
            t,
            m: ck.tensors_under(&format!("{prefix}/m")),
            v: ck.tensors_under(&format!("{prefix}/v")),
        };
        let pool_cap = if cfg.history_pool { cfg.history_size } else { 0 };
        let pool = |name: &str, n: usize| -> Result<HistoryPool> {
            let stored = ck.tensors_under(name);
            let images = (0..n)
                .map(|i| {
                    stored
                        .get(&format!("{i:05}"))
                        .cloned()
                        .ok_or_else(|| SiganError::Checkpoint(format!("{name} image {i} missing")))
                })
                .collect::<Result<_>>()?;
            Ok(HistoryPool::from_images(pool_cap, images))
        };
        let state = TrainState {
            epoch: ck.meta.epoch,
            step: ck.meta.step,
            models,
            opt_gen: restore("adam_gen", extras.opt_gen_t),
            opt_disc: restore("adam_disc", extras.opt_disc_t),
            sampler: extras.sampler.clone(),
            history: extras.history,
            pool_a: pool("pool_a", extras.pool_a)?,
            pool_b: pool("pool_b", extras.pool_b)?,
        };
        let sampler = UnpairedSampler::from_state(extras.sampler);
        Ok(Self { cfg, state, sampler })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let s = &self.state;
        let config = serde_json::to_value(&self.cfg)?;
        let mut ck = Checkpoint::from_models(&s.models, s.epoch, s.step, config);
        ck.insert_under("adam_gen/m", &s.opt_gen.m);
        ck.insert_under("adam_gen/v", &s.opt_gen.v);
        ck.insert_under("adam_disc/m", &s.opt_disc.m);
        ck.insert_under("adam_disc/v", &s.opt_disc.v);
        for (name, pool) in [("pool_a", &s.pool_a), ("pool_b", &s.pool_b)] {
            let images: BTreeMap<_, _> =
                pool.images().iter().enumerate().map(|(i, t)| (format!("{i:05}"), t.clone())).collect();
            ck.insert_under(name, &images);
        }
        ck.meta.extras = serde_json::to_value(StateExtras {
            opt_gen_t: s.opt_gen.t,
            opt_disc_t: s.opt_disc.t,
            sampler: self.sampler.state().clone(),
            history: s.history.clone(),
            pool_a: s.pool_a.images().len(),
            pool_b: s.pool_b.images().len(),
        })?;
        Ok(ck)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.checkpoint()?.save(dir)
    }

    pub fn lr(&self) -> Result<f64> {
        lr_schedule(self.state.epoch, &self.cfg)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.sampler.steps_per_epoch()
    }

    pub fn next_batch(&mut self, data: &DomainCollection) -> Result<BatchPair> {
        let batch = self.sampler.next_batch(data)?;
        self.state.sampler = self.sampler.state().clone();
        Ok(batch)
    }

    /// One alternating update at the current epoch's learning rate.
    pub fn train_step(&mut self, batch: &BatchPair) -> Result<LossReport> {
        let lr = self.lr()?;
        let (a, b) = (&batch.batch_a, &batch.batch_b);
        let s = self.cfg.image_size;
        for x in [a, b] {
            if x.ndim() != 4 || x.shape()[1..] != [1, s, s] {
                return Err(SiganError::shape("training batch", format!("B x 1 x {s} x {s}"), x.shape()));
            }
        }
        let report = match self.cfg.update_order {
            UpdateOrder::GeneratorsFirst => {
                let (mut rep, fake_a, fake_b) = self.update_generators(a, b, lr, batch)?;
                let (da, db) = self.update_discriminators(a, b, &fake_a, &fake_b, lr, batch)?;
                rep.adv_da = da;
                rep.adv_db = db;
                rep
            }
            UpdateOrder::DiscriminatorsFirst => {
                let (fake_a, fake_b) = self.current_fakes(a, b)?;
                let (da, db) = self.update_discriminators(a, b, &fake_a, &fake_b, lr, batch)?;
                let (mut rep, _, _) = self.update_generators(a, b, lr, batch)?;
                rep.adv_da = da;
                rep.adv_db = db;
                rep
            }
        };
        self.state.step += 1;
        self.state.history.push(report);
        Ok(report)
    }

    fn abort(&self, what: &str, batch: &BatchPair) -> SiganError {
        SiganError::NonFinite(format!(
            "{what} at step {} (epoch {}); batch a = {:?}, batch b = {:?}",
            self.state.step, self.state.epoch, batch.ids_a, batch.ids_b
        ))
    }

    fn current_fakes(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let m = &self.state.models;
        let tape = Tape::new();
        let cg = ForwardCtx::new(&tape, &m.g.store, Mode::Train, false);
        let cf = ForwardCtx::new(&tape, &m.f.store, Mode::Train, false);
        let fake_b = generator_forward(&m.g.arch, &cg, tape.constant(a.clone()))?;
        let fake_a = generator_forward(&m.f.arch, &cf, tape.constant(b.clone()))?;
        let out = ((*fake_a.value()).clone(), (*fake_b.value()).clone());
        Ok(out)
    }

    fn update_generators(
        &mut self,
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        lr: f64,
        batch: &BatchPair,
    ) -> Result<(LossReport, Tensor<f32>, Tensor<f32>)> {
        let (weights, loss_cfg) = (self.cfg.loss_weights(), self.cfg.loss_config());
        let m = &self.state.models;
        let tape = Tape::new();
        let cg = ForwardCtx::new(&tape, &m.g.store, Mode::Train, true);
        let cf = ForwardCtx::new(&tape, &m.f.store, Mode::Train, true);
        let cda = ForwardCtx::new(&tape, &m.d_a.store, Mode::Train, false);
        let cdb = ForwardCtx::new(&tape, &m.d_b.store, Mode::Train, false);
        let nets = Networks { gen_arch: &m.g.arch, disc_arch: &m.d_a.arch, g: &cg, f: &cf, d_a: &cda, d_b: &cdb };
        let pass = generator_pass(&nets, tape.constant(a.clone()), tape.constant(b.clone()), &weights, &loss_cfg)?;
        let report = pass.report();
        if !report.all_finite() {
            return Err(self.abort("non-finite generator loss", batch));
        }
        let grads = tape.backward(pass.total);
        let mut all: BTreeMap<String, Tensor<f32>> =
            with_prefix("G", cg.param_grads(&grads)).chain(with_prefix("F", cf.param_grads(&grads))).collect();
        let fakes = ((*pass.fake_a.value()).clone(), (*pass.fake_b.value()).clone());
        let buffers = [cg.into_buffers(), cf.into_buffers(), cda.into_buffers(), cdb.into_buffers()];
        clip_global_norm(&mut all, self.cfg.grad_clip);

        let m = &mut self.state.models;
        let [bg, bf, bda, bdb] = buffers;
        m.g.store.buffers = bg;
        m.f.store.buffers = bf;
        m.d_a.store.buffers = bda;
        m.d_b.store.buffers = bdb;
        let params = prefixed("G", &mut m.g.store).chain(prefixed("F", &mut m.f.store));
        self.state.opt_gen.step(params, &all, lr);
        if !(m.g.store.all_finite() && m.f.store.all_finite()) {
            return Err(self.abort("non-finite generator parameters", batch));
        }
        Ok((report, fakes.0, fakes.1))
    }

    fn update_discriminators(
        &mut self,
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        fake_a: &Tensor<f32>,
        fake_b: &Tensor<f32>,
        lr: f64,
        batch: &BatchPair,
    ) -> Result<(f64, f64)> {
        let (fake_a, fake_b) = if self.cfg.history_pool {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.cfg.seed ^ splitmix(self.state.step)));
            (self.state.pool_a.query(fake_a, &mut rng), self.state.pool_b.query(fake_b, &mut rng))
        } else {
            (fake_a.clone(), fake_b.clone())
        };
        let loss_cfg = self.cfg.loss_config();
        let m = &self.state.models;
        let tape = Tape::new();
        let cg = ForwardCtx::new(&tape, &m.g.store, Mode::Train, false);
        let cf = ForwardCtx::new(&tape, &m.f.store, Mode::Train, false);
        let cda = ForwardCtx::new(&tape, &m.d_a.store, Mode::Train, true);
        let cdb = ForwardCtx::new(&tape, &m.d_b.store, Mode::Train, true);
        let nets = Networks { gen_arch: &m.g.arch, disc_arch: &m.d_a.arch, g: &cg, f: &cf, d_a: &cda, d_b: &cdb };
        let (da, db) = discriminator_pass(
            &nets,
            tape.constant(a.clone()),
            tape.constant(b.clone()),
            tape.constant(fake_a),
            tape.constant(fake_b),
            &loss_cfg,
        )?;
        let (va, vb) = (da.value().item() as f64, db.value().item() as f64);
        if !(va.is_finite() && vb.is_finite()) {
            return Err(self.abort("non-finite discriminator loss", batch));
        }
        let grads = tape.backward(da.add(db));
        let mut all: BTreeMap<String, Tensor<f32>> =
            with_prefix("D_a", cda.param_grads(&grads)).chain(with_prefix("D_b", cdb.param_grads(&grads))).collect();
        let (bda, bdb) = (cda.into_buffers(), cdb.into_buffers());
        clip_global_norm(&mut all, self.cfg.grad_clip);

        let m = &mut self.state.models;
        m.d_a.store.buffers = bda;
        m.d_b.store.buffers = bdb;
        let params = prefixed("D_a", &mut m.d_a.store).chain(prefixed("D_b", &mut m.d_b.store));
        self.state.opt_disc.step(params, &all, lr);
        if !(m.d_a.store.all_finite() && m.d_b.store.all_finite()) {
            return Err(self.abort("non-finite discriminator parameters", batch));
        }
        Ok((va, vb))
    }
}

/// Checkpoints and log written by [`train`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointSeries {
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    let mut opts = OpenOptions::new();
    opts.create(true);
    if append {
        opts.append(true);
    } else {
        opts.write(true).truncate(true);
    }
    opts.open(path).map_err(|e| SiganError::io(path, e))
}

/// Runs the configured schedule on `data`, writing `train_log.jsonl` and
/// `checkpoints/epoch_NNNN` plus `checkpoints/final` under `out_dir`.
///
/// With `resume`, training continues from that checkpoint and the log is
/// appended to.
pub fn train(
    cfg: &TrainConfig,
    data: &DomainCollection,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<CheckpointSeries> {
    fs::create_dir_all(out_dir).map_err(|e| SiganError::io(out_dir, e))?;
    let mut trainer = match resume {
        Some(dir) => Trainer::resume(cfg.clone(), dir)?,
        None => Trainer::new(cfg.clone(), data)?,
    };
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, resume.is_some())?;
    let ck_root = out_dir.join(CHECKPOINT_DIR);
    let mut series = CheckpointSeries { log: log_path.clone(), ..Default::default() };
    let total = cfg.total_epochs();
    let per_epoch = trainer.steps_per_epoch() as u64;
    let started = std::time::Instant::now();
    log::info!("training {total} epochs of {per_epoch} steps from epoch {}", trainer.state.epoch);

    while trainer.state.epoch < total {
        if cfg.max_steps > 0 && trainer.state.step >= cfg.max_steps {
            break;
        }
        let lr = trainer.lr()?;
        let batch = trainer.next_batch(data)?;
        let losses = trainer.train_step(&batch)?;
        let record = LogRecord { epoch: trainer.state.epoch, step: trainer.state.step, lr, losses };
        writeln!(log, "{}", serde_json::to_string(&record)?).map_err(|e| SiganError::io(&log_path, e))?;

        if trainer.sampler.state().step_in_epoch == per_epoch as usize {
            trainer.state.epoch += 1;
            let epoch = trainer.state.epoch;
            log::info!("epoch {epoch}/{total} done after {:.1}s", started.elapsed().as_secs_f64());
            if epoch % cfg.checkpoint_every == 0 && epoch < total {
                let dir = ck_root.join(format!("epoch_{epoch:04}"));
                trainer.save(&dir)?;
                series.checkpoints.push(dir);
            }
        }
    }
    log.flush().map_err(|e| SiganError::io(&log_path, e))?;
    let final_dir = ck_root.join("final");
    trainer.save(&final_dir)?;
    series.checkpoints.push(final_dir.clone());
    series.final_checkpoint = final_dir;
    series.steps = trainer.state.step;
    Ok(series)
}
