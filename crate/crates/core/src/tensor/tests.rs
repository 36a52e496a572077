use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::*;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            // Box-Muller keeps values away from relu/max kinks often enough.
            let u1: f64 = rng.random::<f64>().max(1e-9);
            let u2: f64 = rng.random::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.7 + 0.13
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

/// Compare analytic gradients against central finite differences for a
/// scalar-valued function of several tensors.
fn check_grads(
    inputs: &[ArrayD<f64>],
    f: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    tol: f64,
) {
    let run = |vals: &[ArrayD<f64>]| -> (f64, Vec<Option<ArrayD<f64>>>) {
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.variable(v.clone())).collect();
        let out = f(&mut g, &ids);
        let y = fs(tensor_scalar(g.value(out)));
        g.backward(out);
        let grads = ids.iter().map(|&id| g.grad(id).cloned()).collect();
        (y, grads)
    };

    let (_, analytic) = run(inputs);
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (i, input) in inputs.iter().enumerate() {
        let Some(ga) = &analytic[i] else { continue };
        let n = input.len();
        let coords: Vec<usize> = (0..n.min(8))
            .map(|_| rng.random_range(0..n))
            .collect();
        for &c in &coords {
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[c] += eps;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().unwrap()[c] -= eps;
            let (yp, _) = run(&plus);
            let (ym, _) = run(&minus);
            let numeric = (yp - ym) / (2.0 * eps);
            let got = ga.as_slice().unwrap()[c];
            let denom = numeric.abs().max(got.abs()).max(1e-4);
            assert!(
                ((numeric - got) / denom).abs() < tol,
                "input {i} coord {c}: numeric {numeric} vs analytic {got}"
            );
        }
    }
}

#[test]
fn grad_elementwise_unary() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&[3, 4], &mut rng);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.relu(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.leaky_relu(ids[0], 0.2);
        g.sum_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.sigmoid(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.tanh(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.softplus(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x], |g, ids| {
        let y = g.scale(ids[0], -1.7);
        let y = g.add_scalar(y, 0.3);
        g.mean_all(y)
    }, 1e-6);
}

#[test]
fn grad_binary_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&[2, 3, 4], &mut rng);
    let b = randn(&[2, 3, 4], &mut rng);
    check_grads(&[a.clone(), b.clone()], |g, ids| {
        let y = g.add(ids[0], ids[1]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[a.clone(), b.clone()], |g, ids| {
        let y = g.sub(ids[0], ids[1]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[a.clone(), b.clone()], |g, ids| {
        let y = g.mul(ids[0], ids[1]);
        g.mean_all(y)
    }, 1e-6);
    let m = randn(&[1, 3, 1], &mut rng);
    check_grads(&[a.clone(), m.clone()], |g, ids| {
        let y = g.mul_bc(ids[0], ids[1]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[a.clone(), m], |g, ids| {
        let y = g.add_bc(ids[0], ids[1]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[a.clone(), b], |g, ids| {
        let y = g.mse(ids[0], ids[1]);
        let z = g.l1_sum(ids[0]);
        g.weighted_sum(&[(y, 1.5), (z, 0.25)])
    }, 1e-6);
    check_grads(&[a], |g, ids| {
        let y = g.reshape(ids[0], &[6, 4]);
        let z = g.concat_first_test_helper(y);
        g.mean_all(z)
    }, 1e-6);
}

#[test]
fn grad_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = randn(&[5, 7], &mut rng);
    check_grads(&[logits.clone()], |g, ids| {
        g.softmax_ce(ids[0], &[1, 0, 6, 3, 2])
    }, 1e-6);
    check_grads(&[logits.clone()], |g, ids| {
        let y = g.pick_class(ids[0], 4);
        g.mean_all(y)
    }, 1e-6);
    let targets = ArrayD::from_shape_fn(IxDyn(&[5, 7]), |_| {
        if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 }
    });
    check_grads(&[logits], |g, ids| {
        let t = g.constant(targets.clone());
        g.bce_with_logits(ids[0], t)
    }, 1e-6);
}

#[test]
fn grad_conv_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&[2, 3, 6, 6], &mut rng);
    let w = randn(&[4, 3, 3, 3], &mut rng) * 0.4;
    let b = randn(&[4], &mut rng);
    check_grads(&[x.clone(), w.clone(), b.clone()], |g, ids| {
        let y = g.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1);
        g.mean_all(y)
    }, 1e-5);
    check_grads(&[x.clone(), w, b], |g, ids| {
        let y = g.conv2d(ids[0], ids[1], Some(ids[2]), 2, 1);
        let y = g.relu(y);
        g.mean_all(y)
    }, 1e-5);
    let xf = randn(&[3, 8], &mut rng);
    let wf = randn(&[8, 5], &mut rng);
    let bf = randn(&[5], &mut rng);
    check_grads(&[xf, wf, bf], |g, ids| {
        let y = g.linear(ids[0], ids[1], Some(ids[2]));
        g.mean_all(y)
    }, 1e-6);
}

#[test]
fn grad_pool_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&[2, 3, 4, 4], &mut rng);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.avg_pool2(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.max_pool2(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x.clone()], |g, ids| {
        let y = g.global_avg_pool(ids[0]);
        g.mean_all(y)
    }, 1e-6);
    check_grads(&[x], |g, ids| {
        let y = g.upsample2(ids[0]);
        g.mean_all(y)
    }, 1e-6);
}

#[test]
fn grad_batch_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randn(&[3, 2, 4, 4], &mut rng);
    let gamma = randn(&[2], &mut rng);
    let beta = randn(&[2], &mut rng);
    let rm = ArrayD::zeros(IxDyn(&[2]));
    let rv = ArrayD::ones(IxDyn(&[2]));
    for training in [true, false] {
        let rm = rm.clone();
        let rv = rv.clone();
        check_grads(
            &[x.clone(), gamma.clone(), beta.clone()],
            move |g, ids| {
                let (y, _) = g.batch_norm2d(ids[0], ids[1], ids[2], &rm, &rv, training, 1e-5);
                g.mean_all(y)
            },
            1e-5,
        );
    }
}

#[test]
fn grad_stn() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&[2, 2, 6, 5], &mut rng);
    // Interior, fractional sample coordinates: bilinear interpolation has
    // derivative kinks at integer coordinates, where finite differences are
    // not meaningful.
    let theta = ArrayD::from_shape_vec(
        IxDyn(&[2, 2, 3]),
        vec![
            0.517, 0.133, 0.071, -0.092, 0.481, -0.057, //
            0.463, -0.118, 0.039, 0.077, 0.529, 0.023,
        ],
    )
    .unwrap();
    check_grads(&[x, theta], |g, ids| {
        let grid = g.affine_grid(ids[1], 4, 3);
        let y = g.grid_sample(ids[0], grid);
        g.mean_all(y)
    }, 1e-5);
}

#[test]
fn backward_accumulates_shared_nodes() {
    // y = x*x + x used twice: dy/dx = 2x + 1
    let mut g = Graph::<f64>::new();
    let x = g.variable(scalar_tensor(3.0).into_shape_with_order(IxDyn(&[1])).unwrap());
    let sq = g.mul(x, x);
    let s = g.add(sq, x);
    let out = g.sum_all(s);
    g.backward(out);
    let got = g.grad(x).unwrap()[[0]];
    assert!((got - 7.0).abs() < 1e-12, "got {got}");
}

#[test]
fn straight_through_ops_pass_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(ArrayD::from_shape_vec(IxDyn(&[3]), vec![-0.5, 0.3, 1.7]).unwrap());
    let c = g.clamp_ste(x, 0.0, 1.0);
    let r = g.round_ste(c, 255.0);
    let out = g.sum_all(r);
    g.backward(out);
    let got = g.grad(x).unwrap();
    assert!(got.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert_eq!(g.value(c)[[0]], 0.0);
    assert_eq!(g.value(c)[[2]], 1.0);
}

impl Graph<f64> {
    /// Split then re-concat to exercise the concat backward path.
    fn concat_first_test_helper(&mut self, x: NodeId) -> NodeId {
        let shape: Vec<usize> = self.value(x).shape().to_vec();
        let r = self.reshape(x, &[shape[0], shape[1], 1, 1]);
        self.concat_channels(&[r, r])
    }
}
