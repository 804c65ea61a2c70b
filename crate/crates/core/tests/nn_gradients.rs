//! Finite-difference and duplicate-evaluation checks for the dense network and softmax head.

use ndarray::Array2;
use pct_core::nn::{softmax_xent, Activation, DenseNet, LayerSpec, OptimizerKind, OptimizerState, SoftmaxHead};
use pct_core::rng::{stream, stream_rng};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Naive triple loop over the affine chain.
fn reference_forward(net: &DenseNet, x: &Array2<f64>) -> Array2<f64> {
    let mut cur = x.clone();
    for layer in net.layers() {
        let (out, inp) = layer.weight.dim();
        let mut next = Array2::zeros((cur.nrows(), out));
        for r in 0..cur.nrows() {
            for o in 0..out {
                let mut z = layer.bias[o];
                for i in 0..inp {
                    z += layer.weight[[o, i]] * cur[[r, i]];
                }
                next[[r, o]] = if layer.activation == Activation::Relu { z.max(0.0) } else { z };
            }
        }
        cur = next;
    }
    cur
}

fn specs(widths: &[usize]) -> Vec<LayerSpec> {
    let n = widths.len() - 1;
    (0..n)
        .map(|l| {
            let act = if l + 1 == n { Activation::Identity } else { Activation::Relu };
            LayerSpec::new(widths[l], widths[l + 1], act)
        })
        .collect()
}

#[test]
fn forward_matches_reference_loop() {
    let mut rng = stream_rng(21, stream::USER);
    for seed in 0..10 {
        let net = DenseNet::new(&specs(&[3, 7, 5, 4]), seed).unwrap();
        let x = random_matrix(&mut rng, 6, 3);
        let fast = net.predict(x.view()).unwrap();
        let slow = reference_forward(&net, &x);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let mut rng = stream_rng(22, stream::USER);
    let h = 1e-6;
    for seed in 0..10 {
        let net = DenseNet::new(&specs(&[2, 6, 5, 3]), seed).unwrap();
        let x = random_matrix(&mut rng, 5, 2);
        let c = random_matrix(&mut rng, 5, 3);
        // Scalar objective sum(c * net(x)); its output gradient is c.
        let objective = |n: &DenseNet, x: &Array2<f64>| (n.predict(x.view()).unwrap() * &c).sum();
        let (_, tape) = net.forward(x.view()).unwrap();
        let (grads, grad_in) = net.backward(&tape, c.view()).unwrap();

        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let mut probe = net.clone();
        for (t, tensor) in analytic.iter().enumerate() {
            for (k, &a) in tensor.iter().enumerate() {
                let orig = probe.param_slices_mut()[t][k];
                probe.param_slices_mut()[t][k] = orig + h;
                let up = objective(&probe, &x);
                probe.param_slices_mut()[t][k] = orig - h;
                let down = objective(&probe, &x);
                probe.param_slices_mut()[t][k] = orig;
                let num = (up - down) / (2.0 * h);
                assert!(rel_err(a, num) <= 1e-4, "seed {seed} tensor {t} entry {k}: {a} vs {num}");
            }
        }
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, col) = (idx / x.ncols(), idx % x.ncols());
            let orig = xp[[r, col]];
            xp[[r, col]] = orig + h;
            let up = objective(&net, &xp);
            xp[[r, col]] = orig - h;
            let down = objective(&net, &xp);
            xp[[r, col]] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel_err(grad_in[[r, col]], num) <= 1e-4);
        }
    }
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = stream_rng(23, stream::USER);
    let h = 1e-6;
    for seed in 0..10 {
        let mut head = SoftmaxHead::new(4, 3, seed).unwrap();
        let feats = random_matrix(&mut rng, 7, 4);
        let labels: Vec<usize> = (0..7).map(|i| (i + seed as usize) % 3).collect();
        let out = softmax_xent(&head, feats.view(), &labels).unwrap();

        let analytic: Vec<f64> = out.grad_weight.iter().chain(out.grad_bias.iter()).cloned().collect();
        let n_w = head.weight.len();
        for (k, &a) in analytic.iter().enumerate() {
            let mut eval = |delta: f64| {
                if k < n_w {
                    head.param_slices_mut()[0][k] += delta;
                } else {
                    head.param_slices_mut()[1][k - n_w] += delta;
                }
                softmax_xent(&head, feats.view(), &labels).unwrap().loss
            };
            let up = eval(h);
            let down = eval(-2.0 * h);
            eval(h);
            assert!(rel_err(a, (up - down) / (2.0 * h)) <= 1e-4);
        }
        let mut fp = feats.clone();
        for r in 0..7 {
            for c in 0..4 {
                let orig = fp[[r, c]];
                fp[[r, c]] = orig + h;
                let up = softmax_xent(&head, fp.view(), &labels).unwrap().loss;
                fp[[r, c]] = orig - h;
                let down = softmax_xent(&head, fp.view(), &labels).unwrap().loss;
                fp[[r, c]] = orig;
                assert!(rel_err(out.grad_features[[r, c]], (up - down) / (2.0 * h)) <= 1e-4);
            }
        }
    }
}

#[test]
fn identical_training_runs_are_bitwise_identical() {
    let run = || {
        let mut net = DenseNet::new(&specs(&[2, 8, 3]), 5).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::adam(1e-2)).unwrap();
        let mut rng = stream_rng(24, stream::USER);
        for _ in 0..25 {
            let x = random_matrix(&mut rng, 8, 2);
            let (y, tape) = net.forward(x.view()).unwrap();
            let (g, _) = net.backward(&tape, y.view()).unwrap();
            let owned: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
            let refs: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
            opt.step(&mut net.param_slices_mut(), &refs).unwrap();
        }
        net
    };
    let (a, b) = (run(), run());
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        assert_eq!(la.weight.as_slice().unwrap(), lb.weight.as_slice().unwrap());
        assert_eq!(la.bias, lb.bias);
    }
}
