//! Acceptance suite. Runs every check, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! Oracles here are written independently of the library: closed-form loss
//! arithmetic, central finite differences, convolution shape formulas,
//! per-pixel counting and sampled Gaussians.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sigan::data::{Domain, DomainCollection, ImageSample, Provenance, Split};
use sigan::evaluation::{fid, fid_from_stats, FeatureStats};
use sigan::losses::{
    adversarial_loss_discriminator, adversarial_loss_generator, cycle_loss, strong_identity_loss, total_generator_loss,
    AdversarialKind, GeneratorObjective, LossConfig, LossReport, LossWeights, Reduction,
};
use sigan::models::{
    attention_matrix, init_params, nonlocal_forward, Checkpoint, DiscLayer, DiscriminatorArch, DiscriminatorParams,
    DiscriminatorRole, ForwardCtx, GeneratorArch, GeneratorParams, GeneratorRole, Mode, ModelConfig, ModelSet,
    NonLocalConfig, NormKind, Translator,
};
use sigan::segmentation::{
    aggregate, evaluate_masks, read_mask, segment, write_mask, Mask, SegmentConfig, ThresholdRule,
};
use sigan::trainer::{
    discriminator_pass, generator_pass, lr_schedule, train, LogRecord, Networks, TrainConfig, Trainer, LOG_FILE,
};
use sigan_tensor::{Tape, Tensor};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let failed = !$cond;
        if failed {
            return Err(format!($($msg)+));
        }
    };
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure!((got - want).abs() <= tol, "{what}: got {got}, expected {want} (tolerance {tol:e})");
    Ok(())
}

// ---------------------------------------------------------------- losses

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_disc_loss(real: &[f64], fake: &[f64]) -> f64 {
    let mr = real.iter().map(|&x| sigmoid(x).ln()).sum::<f64>() / real.len() as f64;
    let mf = fake.iter().map(|&x| (1.0 - sigmoid(x)).ln()).sum::<f64>() / fake.len() as f64;
    -(mr + mf)
}

fn oracle_l1(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

fn loss_arithmetic() -> Check {
    let tape = Tape::<f64>::new();
    let t = |data: Vec<f64>| tape.constant(Tensor::new([data.len()], data));
    let log = LossConfig::default();
    let value = |v: sigan_tensor::Var<'_, f64>| v.value().item();

    let half = value(adversarial_loss_discriminator(t(vec![0.0; 9]), t(vec![0.0; 9]), AdversarialKind::Log).unwrap());
    close(half, -(0.5f64.ln() + 0.5f64.ln()), 1e-6, "discriminator loss at sigma = 0.5")?;
    close(half, 1.3863, 5e-5, "discriminator loss at sigma = 0.5 (4 decimals)")?;
    let perfect =
        value(adversarial_loss_discriminator(t(vec![40.0; 4]), t(vec![-40.0; 4]), AdversarialKind::Log).unwrap());
    close(perfect, 0.0, 1e-6, "perfect discriminator")?;
    let gen0 = value(adversarial_loss_generator(t(vec![0.0; 5]), &log).unwrap());
    close(gen0, 2f64.ln(), 1e-6, "generator loss at logit 0")?;
    let gen_opt = value(adversarial_loss_generator(t(vec![40.0; 5]), &log).unwrap());
    close(gen_opt, 0.0, 1e-6, "generator optimum")?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let r: Vec<f64> = (0..12).map(|_| rng.random_range(-6.0..6.0)).collect();
        let f: Vec<f64> = (0..12).map(|_| rng.random_range(-6.0..6.0)).collect();
        let got = value(adversarial_loss_discriminator(t(r.clone()), t(f.clone()), AdversarialKind::Log).unwrap());
        close(got, oracle_disc_loss(&r, &f), 1e-6, "discriminator loss on random logits")?;
        let got = value(adversarial_loss_generator(t(f.clone()), &log).unwrap());
        let want = -f.iter().map(|&x| sigmoid(x).ln()).sum::<f64>() / f.len() as f64;
        close(got, want, 1e-6, "generator loss on random logits")?;
    }

    let cyc = value(
        cycle_loss(t(vec![1.0; 8]), t(vec![-1.0; 8]), t(vec![0.3; 8]), t(vec![0.3; 8]), Reduction::Mean).unwrap(),
    );
    close(cyc, 2.0, 1e-6, "cycle loss")?;
    let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let si = value(
        strong_identity_loss(
            GeneratorRole::DefectFreeToDefect,
            t(x.clone()),
            t(x.iter().map(|v| v + 0.1).collect()),
            t(x.clone()),
            t(x.iter().map(|v| v - 0.3).collect()),
            Reduction::Mean,
        )
        .unwrap(),
    );
    close(si, 0.4, 1e-6, "strong identity loss")?;
    let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let si_rand = value(
        strong_identity_loss(
            GeneratorRole::DefectToDefectFree,
            t(x.clone()),
            t(y.clone()),
            t(y.clone()),
            t(z.clone()),
            Reduction::Mean,
        )
        .unwrap(),
    );
    close(si_rand, oracle_l1(&x, &y) + oracle_l1(&y, &z), 1e-6, "strong identity loss on random images")?;
    let identity = value(cycle_loss(t(y.clone()), t(y.clone()), t(z.clone()), t(z.clone()), Reduction::Mean).unwrap());
    close(identity, 0.0, 0.0, "cycle loss of a perfect cycle")?;

    let report = LossReport { adv_g: 0.7, adv_f: 0.7, si_g: 0.1, si_f: 0.1, cyc: 0.2, ..Default::default() };
    let total = total_generator_loss(&report, &LossWeights { lambda1: 10.0, lambda2: 5.0 }).unwrap();
    close(total, 4.4, 1e-6, "weighted total")?;
    close(total_generator_loss(&LossReport::default(), &LossWeights::default()).unwrap(), 0.0, 0.0, "all-zero total")?;
    let bumped = LossReport { cyc: 0.3, ..report };
    close(
        total_generator_loss(&bumped, &LossWeights::default()).unwrap() - total,
        0.5,
        1e-12,
        "total is linear in cyc",
    )?;
    ensure!(
        total_generator_loss(&report, &LossWeights { lambda1: -1.0, lambda2: 5.0 }).is_err(),
        "negative weight accepted"
    );
    Ok(format!("sigma=0.5 loss {half:.4}, total {total:.4}"))
}

// ---------------------------------------------------------------- gradients

fn toy_config() -> ModelConfig {
    let generator = GeneratorArch {
        in_channels: 1,
        out_channels: 1,
        image_size: 2,
        widths: vec![2],
        norm: NormKind::Batch,
        nonlocal: NonLocalConfig { enabled: true, max_positions: 16, projection_channels: Some(2), learned_qkv: true },
    };
    let layer =
        |out_channels, kernel, padding, norm_act| DiscLayer { out_channels, kernel, stride: 1, padding, norm_act };
    let discriminator = DiscriminatorArch {
        in_channels: 1,
        layers: vec![layer(2, 2, 1, true), layer(1, 2, 0, false)],
        leaky_slope: 0.2,
    };
    ModelConfig { generator, discriminator }
}

#[derive(Clone, Copy, Debug)]
enum Term {
    AdvG,
    AdvF,
    Cyc,
    SiG,
    SiF,
    Total,
    AdvDa,
    AdvDb,
}

const TERMS: [Term; 8] =
    [Term::AdvG, Term::AdvF, Term::Cyc, Term::SiG, Term::SiF, Term::Total, Term::AdvDa, Term::AdvDb];

const NETS: [&str; 4] = ["G", "F", "D_a", "D_b"];

fn store_mut<'m>(m: &'m mut ModelSet<f64>, net: &str) -> &'m mut BTreeMap<String, Tensor<f64>> {
    match net {
        "G" => &mut m.g.store.params,
        "F" => &mut m.f.store.params,
        "D_a" => &mut m.d_a.store.params,
        _ => &mut m.d_b.store.params,
    }
}

/// Value of one loss term and, if asked, its gradient for every weight.
fn evaluate(
    models: &ModelSet<f64>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
    term: Term,
    cfg: &LossConfig,
    with_grads: bool,
) -> (f64, BTreeMap<(String, String), Tensor<f64>>) {
    let tape = Tape::new();
    let ctx = |store| ForwardCtx::new(&tape, store, Mode::Train, true);
    let (g, f, d_a, d_b) = (ctx(&models.g.store), ctx(&models.f.store), ctx(&models.d_a.store), ctx(&models.d_b.store));
    let gen_arch = models.g.arch.clone();
    let disc_arch = models.d_a.arch.clone();
    let nets = Networks { gen_arch: &gen_arch, disc_arch: &disc_arch, g: &g, f: &f, d_a: &d_a, d_b: &d_b };
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let pass = generator_pass(&nets, av, bv, &LossWeights::default(), cfg).unwrap();
    let (da, db) = discriminator_pass(&nets, av, bv, pass.fake_a, pass.fake_b, cfg).unwrap();
    let loss = match term {
        Term::AdvG => pass.adv_g,
        Term::AdvF => pass.adv_f,
        Term::Cyc => pass.cyc.unwrap(),
        Term::SiG => pass.si_g.unwrap(),
        Term::SiF => pass.si_f.unwrap(),
        Term::Total => pass.total,
        Term::AdvDa => da,
        Term::AdvDb => db,
    };
    let value = loss.value().item();
    let mut out = BTreeMap::new();
    if with_grads {
        let grads = tape.backward(loss);
        for (net, c) in NETS.iter().zip([&g, &f, &d_a, &d_b]) {
            for (name, t) in c.param_grads(&grads) {
                out.insert((net.to_string(), name), t);
            }
        }
    }
    (value, out)
}

fn gradient_check() -> Check {
    let cfg = toy_config();
    let models: ModelSet<f64> = init_params(&cfg, 21).map_err(|e| e.to_string())?;
    // Larger weights than the training init so every path carries signal.
    let mut models = models;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for net in NETS {
        for t in store_mut(&mut models, net).values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    }
    let a = Tensor::from_fn([4, 1, 2, 2], |_| rng.random_range(-0.9..0.9));
    let b = Tensor::from_fn([4, 1, 2, 2], |_| rng.random_range(-0.9..0.9));
    let configs = [
        LossConfig::default(),
        LossConfig { generator_objective: GeneratorObjective::Saturating, ..Default::default() },
        LossConfig { adversarial: AdversarialKind::LeastSquares, ..Default::default() },
        LossConfig { reduction: Reduction::Sum, ..Default::default() },
    ];
    let h = 1e-6;
    let (mut worst, mut where_worst, mut checked) = (0.0f64, String::new(), 0usize);
    for cfg in &configs {
        for term in TERMS {
            let (_, analytic) = evaluate(&models, &a, &b, term, cfg, true);
            for ((net, name), grad) in &analytic {
                for i in 0..grad.len() {
                    let mut plus = models.clone();
                    store_mut(&mut plus, net).get_mut(name).unwrap().data_mut()[i] += h;
                    let mut minus = models.clone();
                    store_mut(&mut minus, net).get_mut(name).unwrap().data_mut()[i] -= h;
                    let numeric = (evaluate(&plus, &a, &b, term, cfg, false).0
                        - evaluate(&minus, &a, &b, term, cfg, false).0)
                        / (2.0 * h);
                    let exact = grad.data()[i];
                    let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
                    checked += 1;
                    if rel > worst {
                        worst = rel;
                        where_worst =
                            format!("{term:?} {cfg:?} {net}/{name}[{i}]: analytic {exact:e}, numeric {numeric:e}");
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-4, "relative error {worst:e} at {where_worst}");
    Ok(format!("{checked} partial derivatives, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- shapes

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

fn shapes() -> Check {
    let table = [(64, 4, 2), (128, 4, 2), (256, 4, 2), (512, 4, 1), (1, 4, 1)];
    let arch = DiscriminatorArch::default();
    ensure!(arch.layers.len() == 5, "discriminator has {} layers", arch.layers.len());
    for (l, &(c, k, s)) in arch.layers.iter().zip(&table) {
        ensure!(
            (l.out_channels, l.kernel, l.stride, l.padding) == (c, k, s, 1),
            "layer {l:?} differs from ({c}, {k}, {s}, 1)"
        );
    }
    let oracle = |n: usize| table.iter().fold(n, |n, &(_, k, s)| conv_out(n, k, s, 1));
    ensure!(oracle(256) == 30 && oracle(128) == 14, "shape oracle itself is off");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = DiscriminatorParams::<f32>::init(DiscriminatorRole::Defective, arch.clone(), &mut rng)
        .map_err(|e| e.to_string())?;
    let x256 = Tensor::from_fn([1, 1, 256, 256], |_| rng.random_range(-1.0f32..1.0));
    let y = d.forward(&x256).map_err(|e| e.to_string())?;
    ensure!(y.shape() == [1, 1, 30, 30], "256x256 -> {:?}", y.shape());
    let x128 = Tensor::from_fn([4, 1, 128, 128], |_| rng.random_range(-1.0f32..1.0));
    let y = d.forward(&x128).map_err(|e| e.to_string())?;
    ensure!(y.shape() == [4, 1, 14, 14], "4x1x128x128 -> {:?}", y.shape());
    for n in [64, 96, 200] {
        ensure!(arch.output_size(n, n) == Some((oracle(n), oracle(n))), "output size at {n}");
    }

    let g = GeneratorParams::<f32>::init(GeneratorRole::DefectToDefectFree, GeneratorArch::default(), &mut rng)
        .map_err(|e| e.to_string())?;
    let x = Tensor::from_fn([2, 1, 256, 256], |_| rng.random_range(-1.0f32..1.0));
    let out = g.forward(&x).map_err(|e| e.to_string())?;
    ensure!(out.shape() == [2, 1, 256, 256], "generator maps 2x1x256x256 to {:?}", out.shape());
    ensure!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)), "generator output outside [-1, 1]");
    ensure!(g.forward(&Tensor::zeros([1, 1, 128, 128])).is_err(), "wrong input size accepted");
    Ok("G 2x1x256x256 preserved; D 256->30x30, 128->14x14".into())
}

// ---------------------------------------------------------------- non-local

fn nonlocal_block() -> Check {
    let zero = nonlocal_forward(&Tensor::<f64>::zeros([2, 3, 4, 4]), 4096).map_err(|e| e.to_string())?;
    ensure!(zero.data().iter().all(|&v| v == 0.0), "zero input gave nonzero output");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = Tensor::from_fn([3, 5, 1, 1], |_| rng.random_range(-3.0f64..3.0));
    let o = nonlocal_forward(&f, 4096).map_err(|e| e.to_string())?;
    let dev = o.data().iter().zip(f.data()).map(|(o, f)| (o - 2.0 * f).abs()).fold(0.0, f64::max);
    ensure!(dev <= 1e-6, "N=1: max |o - 2f| = {dev:e}");

    let f = Tensor::from_fn([2, 4, 3, 5], |_| rng.random_range(-2.0f64..2.0));
    let att = attention_matrix(&f);
    ensure!(att.shape() == [2, 15, 15], "attention shape {:?}", att.shape());
    let row_dev = att.data().chunks(15).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    ensure!(row_dev <= 1e-6, "attention rows deviate from 1 by {row_dev:e}");

    // o - f equals the attention-weighted sum of positions.
    let o = nonlocal_forward(&f, 4096).map_err(|e| e.to_string())?;
    let (c, n) = (4, 15);
    let mut worst = 0.0f64;
    for bi in 0..2 {
        let fb = f.batch_item(bi);
        let ob = o.batch_item(bi);
        let ab = &att.data()[bi * n * n..(bi + 1) * n * n];
        for ch in 0..c {
            for i in 0..n {
                let mix: f64 = (0..n).map(|j| ab[i * n + j] * fb[ch * n + j]).sum();
                worst = worst.max((ob[ch * n + i] - fb[ch * n + i] - mix).abs());
            }
        }
    }
    ensure!(worst <= 1e-5, "residual identity off by {worst:e}");
    ensure!(nonlocal_forward(&Tensor::<f64>::zeros([1, 1, 8, 8]), 32).is_err(), "budget not enforced");
    Ok(format!("N=1 deviation {dev:.1e}, row-sum deviation {row_dev:.1e}"))
}

// ---------------------------------------------------------------- segmentation metrics

fn brute_force(pred: &[bool], gt: &[bool]) -> (u64, u64, u64, f64, f64, f64) {
    let (mut m_g, mut m_d, mut m) = (0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        if gt[i] {
            m_g += 1;
        }
        if pred[i] {
            m_d += 1;
        }
        if gt[i] && pred[i] {
            m += 1;
        }
    }
    if m_g == 0 && m_d == 0 {
        return (0, 0, 0, 1.0, 1.0, 1.0);
    }
    let cpt = if m_g == 0 { 0.0 } else { m as f64 / m_g as f64 };
    let crt = if m_d == 0 { 0.0 } else { m as f64 / m_d as f64 };
    let f = if cpt + crt == 0.0 { 0.0 } else { 2.0 * cpt * crt / (cpt + crt) };
    (m_g, m_d, m, cpt, crt, f)
}

fn segmentation_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let (pp, pg) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6));
        let pred = Mask::new(16, 16, (0..256).map(|_| rng.random_bool(pp)).collect());
        let gt = Mask::new(16, 16, (0..256).map(|_| rng.random_bool(pg)).collect());
        let got = evaluate_masks(&pred, &gt).map_err(|e| e.to_string())?;
        let want = brute_force(&pred.bits, &gt.bits);
        let got_tuple = (got.m_g, got.m_d, got.m, got.cpt, got.crt, got.fscore);
        let want_tuple = if want.0 + want.1 == 0 { (0, 0, 0, 1.0, 1.0, 1.0) } else { want };
        ensure!(got_tuple == want_tuple, "case {case}: {got_tuple:?} vs oracle {want_tuple:?}");
    }
    let empty = Mask::from_fn(16, 16, |_, _| false);
    let full = Mask::from_fn(16, 16, |_, _| true);
    for (p, g) in [(&empty, &empty), (&empty, &full), (&full, &empty)] {
        let got = evaluate_masks(p, g).map_err(|e| e.to_string())?;
        let want = brute_force(&p.bits, &g.bits);
        ensure!((got.cpt, got.crt, got.fscore) == (want.3, want.4, want.5), "empty-set convention differs");
    }
    Ok("100 random 16x16 pairs equal the per-pixel oracle".into())
}

// ---------------------------------------------------------------- FID

fn fid_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = DMatrix::from_fn(200, 8, |_, _| rng.random_range(-3.0..3.0));
    let self_score = fid(&x, &x, "toy").map_err(|e| e.to_string())?.score;
    ensure!(self_score <= 1e-5, "fid(X, X) = {self_score:e}");

    let sx =
        FeatureStats::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2), 2).map_err(|e| e.to_string())?;
    let sg =
        FeatureStats::new(DVector::from_vec(vec![3.0, 4.0]), DMatrix::identity(2, 2), 2).map_err(|e| e.to_string())?;
    let injected = fid_from_stats(&sx, &sg).map_err(|e| e.to_string())?;
    close(injected, 25.0, 1e-8, "injected mean shift")?;

    let n = 100_000;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let real = DMatrix::from_fn(n, 1, |_, _| normal.sample(&mut rng));
    let fake = DMatrix::from_fn(n, 1, |_, _| 1.0 + normal.sample(&mut rng));
    let sampled = fid(&real, &fake, "toy").map_err(|e| e.to_string())?.score;
    close(sampled, 1.0, 0.05, "sampled unit mean shift at n = 100000")?;
    Ok(format!("fid(X,X) {self_score:.1e}, injected {injected:.8}, sampled {sampled:.4}"))
}

// ---------------------------------------------------------------- schedule

fn lr_checks() -> Check {
    let cfg = TrainConfig::default();
    ensure!((cfg.epochs_constant, cfg.epochs_decay, cfg.base_lr) == (30, 30, 2e-4), "defaults changed");
    let got: Vec<f64> = [0, 30, 45, 60].iter().map(|&e| lr_schedule(e, &cfg).unwrap()).collect();
    ensure!(got == [2e-4, 2e-4, 1e-4, 0.0], "schedule {got:?}");
    Ok(format!("{got:?}"))
}

// ---------------------------------------------------------------- oracle segmentation

struct CleanOracle(Tensor<f32>);

impl Translator for CleanOracle {
    fn role(&self) -> GeneratorRole {
        GeneratorRole::DefectToDefectFree
    }

    fn translate(&self, batch: &Tensor<f32>) -> sigan::Result<Tensor<f32>> {
        let (b, c, h, w) = batch.dims4();
        let plane = self.0.data();
        Ok(Tensor::from_fn([b, c, h, w], |i| plane[i % (h * w)]))
    }
}

fn el_background(size: usize, phase: f32) -> Tensor<f32> {
    Tensor::from_fn([size, size], |i| {
        let (y, x) = ((i / size) as f32, (i % size) as f32);
        let busbar = if (y as usize % 64) < 3 { -0.35 } else { 0.0 };
        0.25 + 0.15 * (x * 0.21 + phase).sin() * (y * 0.05).cos() + busbar
    })
}

fn oracle_segmentation() -> Check {
    let size = 256;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let shapes: Vec<Box<dyn Fn(usize, usize) -> bool>> = vec![
        Box::new(|y, x| (x as isize - y as isize - 20).abs() <= 1 && (30..220).contains(&y)),
        Box::new(|y, x| (100..104).contains(&x) && (40..90).contains(&y)),
        Box::new(|y, x| (y as f64 - 150.0).powi(2) + (x as f64 - 60.0).powi(2) <= 144.0),
        Box::new(|y, x| (y + 2 * x) % 97 < 2 && (120..250).contains(&x)),
    ];
    let mut per_image = Vec::new();
    for (k, shape) in shapes.iter().enumerate() {
        let background = el_background(size, k as f32);
        let mut pixels = background.clone();
        for (i, p) in pixels.data_mut().iter_mut().enumerate() {
            if shape(i / size, i % size) {
                *p = -0.9;
            }
        }
        let gt_path: PathBuf = dir.path().join(format!("gt_{k}.png"));
        write_mask(&gt_path, &Mask::from_fn(size, size, shape), None).map_err(|e| e.to_string())?;
        let gt = read_mask(&gt_path, Some(size)).map_err(|e| e.to_string())?;
        let sample = ImageSample {
            id: format!("constructed_{k}"),
            domain: Domain::Crack,
            pixels,
            original_size: (size, size),
            provenance: Provenance::Real,
            source_path: PathBuf::new(),
        };
        let oracle = CleanOracle(background);
        for cfg in [
            SegmentConfig::default(),
            SegmentConfig { threshold: ThresholdRule::Fixed { value: 0.5 }, ..Default::default() },
        ] {
            let r = segment(&sample, &oracle, &cfg).map_err(|e| e.to_string())?;
            let m = evaluate_masks(&r.mask, &gt).map_err(|e| e.to_string())?;
            ensure!(
                m.fscore == 1.0,
                "image {k} with {:?}: F-score {} (threshold {})",
                cfg.threshold,
                m.fscore,
                r.threshold_used
            );
            per_image.push(m);
        }
    }
    let agg = aggregate(&per_image);
    ensure!(agg.micro.fscore == 1.0 && agg.macro_avg.fscore == 1.0, "aggregate {agg:?}");
    Ok(format!("{} segmentations, F-score {:.1}", per_image.len(), agg.micro.fscore))
}

// ---------------------------------------------------------------- training smoke

fn synthetic_cells(size: usize, n: usize, defective: bool, seed: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let phase = rng.random_range(0.0..6.0f32);
            let freq = rng.random_range(0.3..0.6f32);
            let offset = rng.random_range(0..size) as isize;
            let pixels = Tensor::from_fn([size, size], |i| {
                let (y, x) = ((i / size) as isize, (i % size) as isize);
                let mut v = 0.3 + 0.2 * (x as f32 * freq + phase).sin();
                if y % 21 < 2 {
                    v = -0.4;
                }
                if defective && ((x - y - offset).rem_euclid(size as isize) < 2) {
                    v = -0.95;
                }
                v
            });
            ImageSample {
                id: format!("{}_{k}", if defective { "crack" } else { "free" }),
                domain: if defective { Domain::Crack } else { Domain::DefectFree },
                pixels,
                original_size: (size, size),
                provenance: Provenance::Real,
                source_path: PathBuf::new(),
            }
        })
        .collect()
}

fn smoke_config() -> TrainConfig {
    TrainConfig {
        image_size: 64,
        generator_widths: vec![16, 32, 64, 64],
        disc_base_width: 16,
        nonlocal_projection: 0,
        epochs_constant: 100,
        epochs_decay: 0,
        offline_augment: false,
        checkpoint_every: 1000,
        seed: 1,
        max_steps: 200,
        ..TrainConfig::default()
    }
}

fn read_log(path: &Path) -> Vec<LogRecord> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn training_smoke() -> Check {
    let data = DomainCollection::new(Split::Train, synthetic_cells(64, 8, false, 1), synthetic_cells(64, 8, true, 2))
        .map_err(|e| e.to_string())?;
    let cfg = smoke_config();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let series = train(&cfg, &data, dir.path(), None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let log = read_log(&dir.path().join(LOG_FILE));
    ensure!(series.steps == 200 && log.len() == 200, "{} steps logged", log.len());
    ensure!(log.iter().all(|r| r.losses.all_finite() && r.lr.is_finite()), "non-finite logged loss");
    let mean = |rs: &[LogRecord]| rs.iter().map(|r| r.losses.cyc).sum::<f64>() / rs.len() as f64;
    let (first, last) = (mean(&log[..10]), mean(&log[190..]));
    let ratio = last / first;
    ensure!(ratio <= 0.8, "cycle loss {first:.4} -> {last:.4} (ratio {ratio:.3})");
    ensure!(elapsed < Duration::from_secs(600), "took {:.0}s", elapsed.as_secs_f64());
    Ok(format!("cycle {first:.4} -> {last:.4} (ratio {ratio:.3}) in {:.0}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- checkpoints

fn checkpoint_fidelity() -> Check {
    let data = DomainCollection::new(Split::Train, synthetic_cells(32, 4, false, 3), synthetic_cells(32, 4, true, 4))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        image_size: 32,
        generator_widths: vec![4, 8, 8],
        disc_base_width: 4,
        nonlocal_projection: 4,
        batch_size: 2,
        epochs_constant: 2,
        epochs_decay: 3,
        checkpoint_every: 1,
        offline_augment: false,
        seed: 9,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    // Round trip of a partially trained model set.
    let mut trainer = Trainer::new(cfg.clone(), &data).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        let batch = trainer.next_batch(&data).map_err(|e| e.to_string())?;
        trainer.train_step(&batch).map_err(|e| e.to_string())?;
    }
    let ck_dir = dir.path().join("probe_ck");
    trainer.save(&ck_dir).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&ck_dir).and_then(|c| c.models()).map_err(|e| e.to_string())?;
    let before = &trainer.state.models;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probe = Tensor::from_fn([3, 1, 32, 32], |_| rng.random_range(-1.0f32..1.0));
    let mut worst = 0.0f32;
    for role in [GeneratorRole::DefectFreeToDefect, GeneratorRole::DefectToDefectFree] {
        let (x, y) = (before.generator(role).forward(&probe), loaded.generator(role).forward(&probe));
        worst = worst.max(x.map_err(|e| e.to_string())?.max_abs_diff(&y.map_err(|e| e.to_string())?));
    }
    for role in [DiscriminatorRole::DefectFree, DiscriminatorRole::Defective] {
        let (x, y) = (before.discriminator(role).forward(&probe), loaded.discriminator(role).forward(&probe));
        worst = worst.max(x.map_err(|e| e.to_string())?.max_abs_diff(&y.map_err(|e| e.to_string())?));
    }
    ensure!(worst <= 1e-6, "forward outputs differ by {worst:e} after reload");

    // An interrupted run resumed from its last checkpoint follows the same
    // schedule as an uninterrupted one.
    let full_dir = dir.path().join("full");
    train(&cfg, &data, &full_dir, None).map_err(|e| e.to_string())?;
    let part_dir = dir.path().join("part");
    let stop = TrainConfig { max_steps: 5, ..cfg.clone() };
    let first = train(&stop, &data, &part_dir, None).map_err(|e| e.to_string())?;
    train(&cfg, &data, &part_dir, Some(&first.final_checkpoint)).map_err(|e| e.to_string())?;
    let (full, part) = (read_log(&full_dir.join(LOG_FILE)), read_log(&part_dir.join(LOG_FILE)));
    ensure!(full.len() == part.len(), "{} vs {} logged steps", full.len(), part.len());
    for (a, b) in full.iter().zip(&part) {
        ensure!(
            (a.step, a.epoch, a.lr) == (b.step, b.epoch, b.lr),
            "step {}: {:?} vs {:?}",
            a.step,
            (a.epoch, a.lr),
            (b.epoch, b.lr)
        );
        ensure!(a.lr == lr_schedule(a.epoch, &cfg).unwrap(), "step {} lr {} off schedule", a.step, a.lr);
    }
    let same_losses = full.iter().zip(&part).all(|(a, b)| a.losses == b.losses);
    ensure!(same_losses, "resumed losses diverge from the uninterrupted run");
    Ok(format!("reload deviation {worst:e}; {} steps resumed at step 5 with identical lr and losses", full.len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 10] = [
        ("loss arithmetic", loss_arithmetic),
        ("gradient correctness", gradient_check),
        ("network shapes", shapes),
        ("non-local block", nonlocal_block),
        ("segmentation metrics oracle", segmentation_metrics),
        ("FID", fid_checks),
        ("learning-rate schedule", lr_checks),
        ("oracle end-to-end segmentation", oracle_segmentation),
        ("training smoke", training_smoke),
        ("checkpoint fidelity", checkpoint_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("[{:>2}] {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {label} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
