use cine_deblur_core::gradcheck::GradCheck;
use cine_deblur_core::tensor::{Activation, AdamConfig, AdamState, Graph, ParamStore, PoolMode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv2d_identity_kernel() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[1, 1, 3, 3], 1));
    let w = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv2d_counts_overlaps() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 4, 4]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 1, 4, 4]);
    assert_eq!(out.at4(0, 0, 1, 1), 9.0);
    assert_eq!(out.at4(0, 0, 2, 2), 9.0);
    assert_eq!(out.at4(0, 0, 0, 0), 4.0);
    assert_eq!(out.at4(0, 0, 3, 3), 4.0);
    assert_eq!(out.at4(0, 0, 0, 1), 6.0);
}

#[test]
fn conv2d_rejects_channel_mismatch_and_even_kernels() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
    let w2 = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(g.conv2d(x, w2, None, 1, 0).is_err());
    let w3 = g.constant(Tensor::zeros(&[1, 2, 7, 7]));
    assert!(g.conv2d(x, w3, None, 1, 1).is_err());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let inputs = [random(&[2, 3, 8, 8], 2), random(&[4, 3, 3, 3], 3), random(&[4], 4)];
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        GradCheck::default()
            .run(&inputs, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                Ok(g.sum(y))
            })
            .unwrap();
    }
    // non-uniform upstream gradient
    let weights = random(&[2, 4, 8, 8], 5);
    GradCheck::default()
        .run(&inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            let c = g.constant(weights.clone());
            let p = g.mul(y, c)?;
            Ok(g.sum(p))
        })
        .unwrap();
}

#[test]
fn conv_transpose_identity_and_shape_inverse() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[1, 1, 5, 5], 6));
    let w = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    let y = g.conv_transpose2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));

    for (h, stride) in [(8, 1), (9, 2), (17, 2)] {
        let x = g.constant(random(&[1, 2, h, h], 7));
        let wc = g.constant(random(&[3, 2, 3, 3], 8));
        let down = g.conv2d(x, wc, None, stride, 1).unwrap();
        let wt = g.constant(random(&[3, 2, 3, 3], 9));
        let up = g.conv_transpose2d(down, wt, None, stride, 1).unwrap();
        assert_eq!(g.shape(up), &[1, 2, h, h]);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x, w), y> == <x, conv_transpose(y, w)>
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[2, 3, 9, 9], 10));
    let w = g.constant(random(&[4, 3, 3, 3], 11));
    let cx = g.conv2d(x, w, None, 2, 1).unwrap();
    let y = g.constant(random(g.shape(cx), 12));
    let ty = g.conv_transpose2d_sized(y, w, None, 2, 1, (9, 9)).unwrap();
    let lhs: f64 = g.value(cx).data().iter().zip(g.value(y).data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(x).data().iter().zip(g.value(ty).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn conv_transpose_gradients_match_finite_differences() {
    let inputs = [random(&[2, 3, 5, 5], 13), random(&[3, 2, 3, 3], 14), random(&[2], 15)];
    for stride in [1, 2] {
        GradCheck::default()
            .run(&inputs, |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), stride, 1)?;
                let y = g.square(y);
                Ok(g.sum(y))
            })
            .unwrap();
    }
}

#[test]
fn pooling_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let a = g.pool2d(x, PoolMode::Avg, 2, 2).unwrap();
    let m = g.pool2d(x, PoolMode::Max, 2, 2).unwrap();
    assert_eq!(g.value(a).data(), &[2.5]);
    assert_eq!(g.value(m).data(), &[4.0]);
    assert!(g.pool2d(x, PoolMode::Avg, 3, 1).is_err());
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones(&[1, 1, 2, 2]));
    let m = g.pool2d(x, PoolMode::Max, 2, 2).unwrap();
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn pooling_gradients_match_finite_differences() {
    let inputs = [random(&[2, 2, 8, 8], 16)];
    for mode in [PoolMode::Avg, PoolMode::Max] {
        for (k, s) in [(2, 2), (3, 1)] {
            GradCheck::default()
                .run(&inputs, |g, v| {
                    let y = g.pool2d(v[0], mode, k, s)?;
                    let y = g.square(y);
                    Ok(g.sum(y))
                })
                .unwrap();
        }
    }
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(&[3], &[0.0, -1.0, 2.0]));
    let s = g.activate(x, Activation::Sigmoid);
    let t = g.activate(x, Activation::Tanh);
    let r = g.activate(x, Activation::Relu);
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_eq!(g.value(t).data()[0], 0.0);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t64(&[2], &[0.0, 1.0]));
    let r = g.relu(x);
    let s = g.sum(r);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn activation_gradients_match_finite_differences() {
    let inputs = [random(&[2, 3, 4, 4], 17)];
    for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
        GradCheck::default()
            .run(&inputs, |g, v| {
                let y = g.activate(v[0], kind);
                let y = g.square(y);
                Ok(g.sum(y))
            })
            .unwrap();
    }
}

#[test]
fn dense_examples_and_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[3, 4], 18));
    let eye = g.constant(Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
    let zero = g.constant(Tensor::zeros(&[4]));
    let y = g.dense(x, eye, zero).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let x = g.constant(t64(&[1, 2], &[1.0, 2.0]));
    let w = g.constant(t64(&[2, 1], &[1.0, 1.0]));
    let b = g.constant(t64(&[1], &[1.0]));
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let bad = g.constant(Tensor::zeros(&[3, 1]));
    assert!(g.dense(x, bad, b).is_err());

    let inputs = [random(&[3, 5], 19), random(&[5, 2], 20), random(&[2], 21)];
    GradCheck::default()
        .run(&inputs, |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            let y = g.tanh(y);
            Ok(g.sum(y))
        })
        .unwrap();
}

#[test]
fn concat_examples_and_gradient_split() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(random(&[1, 2, 4, 4], 22));
    let one = g.concat(&[a], 1).unwrap();
    assert_eq!(g.value(one), g.value(a));
    let b = g.leaf(random(&[1, 2, 4, 4], 23));
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[1, 4, 4, 4]);
    let bad = g.constant(Tensor::zeros(&[1, 2, 3, 4]));
    assert!(g.concat(&[a, bad], 1).is_err());

    // weighted sum: each input receives exactly its slice of the upstream gradient
    let wts = random(&[1, 4, 4, 4], 24);
    let wv = g.constant(wts.clone());
    let p = g.mul(c, wv).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &wts.data()[..32]);
    assert_eq!(grads.get(b).unwrap().data(), &wts.data()[32..]);

    let inputs = [random(&[2, 1, 3, 3], 25), random(&[2, 3, 3, 3], 26)];
    GradCheck::default()
        .run(&inputs, |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let c = g.sigmoid(c);
            Ok(g.sum(c))
        })
        .unwrap();
}

#[test]
fn backward_basic_identities() {
    let x0 = random(&[2, 3], 27);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(x0.clone());
    let s = g.sum(x);
    assert!(g.backward(s).unwrap().get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::<f64>::new();
    let x = g.leaf(x0.clone());
    let sq = g.square(x);
    let s = g.sum(sq);
    let grad = g.backward(s).unwrap().get(x).unwrap().clone();
    assert_eq!(grad, x0.map(|v| 2.0 * v));
}

#[test]
fn backward_rejects_foreign_and_non_scalar_losses() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[2, 2], 28));
    assert!(g.backward(x).is_err());
    let mut other = Graph::<f64>::new();
    for _ in 0..5 {
        other.constant(Tensor::zeros(&[1]));
    }
    let foreign = other.sum(x);
    assert!(g.backward(foreign).is_err());
}

#[test]
fn unreachable_leaves_get_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[3], 29));
    let unused = g.leaf(random(&[2, 2], 30));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[2, 2]));
}

#[test]
fn composed_network_matches_finite_differences() {
    let inputs = [
        random(&[2, 1, 6, 6], 31),
        random(&[3, 1, 3, 3], 32),
        random(&[3], 33),
        random(&[27, 2], 34),
        random(&[2], 35),
    ];
    GradCheck::default()
        .run(&inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let y = g.relu(y);
            let y = g.reshape(y, &[2, 27])?;
            let y = g.dense(y, v[3], v[4])?;
            let y = g.square(y);
            Ok(g.sum(y))
        })
        .unwrap();
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = random(&[1, 2, 5, 5], 36);
    let w0 = random(&[2, 2, 3, 3], 37);
    let grad_of = |a: f64, b: f64| {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(x0.clone());
        let w = g.constant(w0.clone());
        let f = g.conv2d(x, w, None, 1, 1).unwrap();
        let f = g.tanh(f);
        let f = g.sum(f);
        let h = g.sigmoid(x);
        let h = g.sum(h);
        let fa = g.scale(f, a);
        let hb = g.scale(h, b);
        let l = g.add(fa, hb).unwrap();
        g.backward(l).unwrap().get(x).unwrap().clone()
    };
    let (gf, gh) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
    let (a, b) = (0.75, -2.5);
    let combined = grad_of(a, b);
    let expected = Tensor::from_fn(gf.shape(), |i| a * gf.data()[i] + b * gh.data()[i]);
    assert!(combined.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn second_order_gradients_match_finite_differences() {
    // d/dw || d/dx sum(relu(conv(x, w))) ||^2, the shape of a gradient penalty
    let inputs = [random(&[1, 2, 5, 5], 38), random(&[3, 2, 3, 3], 39), random(&[12, 1], 40)];
    GradCheck::default()
        .run(&inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, 1)?;
            let y = g.relu(y);
            let y = g.pool2d(y, PoolMode::Max, 2, 2)?;
            let y = g.reshape(y, &[1, 12])?;
            let y = g.matmul(y, v[2])?;
            let d = g.sum(y);
            let gx = g.grad(d, &[v[0]], true)?[0];
            let sq = g.square(gx);
            Ok(g.sum(sq))
        })
        .unwrap();
}

#[test]
fn ops_are_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(random(&[2, 3, 8, 8], 41).cast());
        let w = g.leaf(random(&[4, 3, 3, 3], 42).cast());
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.pool2d(y, PoolMode::Max, 2, 2).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        (g.value(y).clone(), grads.get(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_zero_gradient_leaves_fresh_parameters_unchanged() {
    let mut store = ParamStore::<f64>::new();
    store.insert("p", random(&[3], 43)).unwrap();
    let before = store.clone();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    adam.step(&mut store, &[Tensor::zeros(&[3])]).unwrap();
    assert_eq!(store, before);
    assert_eq!(adam.t, 1);
}

#[test]
fn adam_single_step_matches_hand_computation() {
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("p", Tensor::scalar(1.0)).unwrap();
    let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    let mut adam = AdamState::new(&store, cfg);
    adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
    // m = 0.1, v = 0.001; bias corrected m_hat = 1, v_hat = 1
    let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    assert!((store.get(id).item() - expected).abs() < 1e-15);
}

#[test]
fn adam_moves_monotonically_against_the_gradient() {
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("p", Tensor::scalar(1.0)).unwrap();
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
    let mut trace = vec![1.0];
    for _ in 0..2 {
        adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        trace.push(store.get(id).item());
    }
    assert!(trace[1] < trace[0] && trace[2] < trace[1], "{trace:?}");
    // with a constant gradient both bias-corrected steps equal lr / (1 + eps)
    assert!((trace[0] - trace[1] - (trace[1] - trace[2])).abs() < 1e-12);
}

#[test]
fn adam_rejects_missing_gradients() {
    let mut store = ParamStore::<f64>::new();
    store.insert("a", Tensor::scalar(1.0)).unwrap();
    store.insert("b", Tensor::scalar(1.0)).unwrap();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    assert!(adam.step(&mut store, &[Tensor::scalar(1.0)]).is_err());
    assert!(adam.step(&mut store, &[Tensor::scalar(1.0), Tensor::zeros(&[2])]).is_err());
}
