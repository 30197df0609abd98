//! Central finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigan_tensor::{Conv2dGeometry, NormGroups, Tape, Tensor, Var};

const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Builds a scalar from the leaves; the projection onto fixed random weights
/// makes every output element contribute with a distinct coefficient.
fn check(inputs: Vec<Tensor<f64>>, f: impl for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>) {
    let eval = |inputs: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::new();
        let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&leaves);
        let proj = Tensor::from_fn(out.shape(), |i| ((i * 7919 % 13) as f64 - 6.0) / 6.0 + 0.05);
        let loss = out.mul(tape.constant(proj)).sum_all();
        let value = loss.value().item();
        let grads = tape.backward(loss);
        let g = leaves.iter().map(|l| grads.get(l).cloned().unwrap_or_else(|| Tensor::zeros(l.shape()))).collect();
        (value, g)
    };
    let (_, analytic) = eval(&inputs);
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);
            let a = analytic[which].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < REL_TOL, "input {which} elem {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3], &mut rng);
    let b = random(&[2, 3], &mut rng);
    check(vec![a.clone(), b.clone()], |v| v[0].add(v[1]).mul(v[0]).sub(v[1].scale(0.3)));
    check(vec![a.clone()], |v| v[0].tanh().softplus().add_scalar(0.2).neg());
    check(vec![a.clone()], |v| v[0].leaky_relu(0.2).add(v[0].relu()).add(v[0].abs()).add(v[0].square()));
    check(vec![a], |v| v[0].mean_all());
}

#[test]
fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 2, 4, 4], &mut rng);
    let w = random(&[3, 2, 4, 4], &mut rng);
    let b = random(&[3], &mut rng);
    let g = Conv2dGeometry::square(4, 2, 1);
    check(vec![x.clone(), w, b], |v| v[0].conv2d(v[1], Some(v[2]), g));

    let w1 = random(&[3, 2, 1, 1], &mut rng);
    check(vec![x.clone(), w1], |v| v[0].conv2d(v[1], None, Conv2dGeometry::square(1, 1, 0)));

    let wt = random(&[2, 3, 4, 4], &mut rng);
    let bt = random(&[3], &mut rng);
    check(vec![x, wt, bt], |v| v[0].conv_transpose2d(v[1], Some(v[2]), g));
}

#[test]
fn normalization_and_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 2, 2, 3], &mut rng);
    let s = random(&[2], &mut rng);
    let t = random(&[2], &mut rng);
    for groups in [NormGroups::Batch, NormGroups::Instance] {
        check(vec![x.clone(), s.clone(), t.clone()], move |v| {
            v[0].normalize(groups, 1e-5).0.channel_affine(v[1], v[2])
        });
    }
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 1, 4, 4], &mut rng);
    let b = random(&[2, 2, 4, 4], &mut rng);
    check(vec![a.clone(), b], |v| Var::concat_channels(&[v[0], v[1]]).avg_pool(2).upsample_nearest(2));
    check(vec![a], |v| v[0].upsample_nearest(3).tanh().avg_pool(3));
}

#[test]
fn attention_separate_and_shared_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random(&[2, 3, 2, 2], &mut rng);
    let k = random(&[2, 3, 2, 2], &mut rng);
    let v = random(&[2, 2, 2, 2], &mut rng);
    check(vec![q.clone(), k, v], |x| x[0].spatial_attention(x[1], x[2]));
    // literal self-attention with the residual: softmax(f f^T) f + f
    check(vec![q], |x| x[0].spatial_attention(x[0], x[0]).add(x[0]));
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]));
    let y = x.square().detach().add(x).sum_all();
    let grads = tape.backward(y);
    assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn constants_get_no_gradient() {
    let tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::new([1], vec![3.0]));
    let x = tape.leaf(Tensor::new([1], vec![2.0]));
    let loss = c.mul(x).sum_all();
    let grads = tape.backward(loss);
    assert!(grads.get(&c).is_none());
    assert_eq!(grads.get(&x).unwrap().data(), &[3.0]);
}
