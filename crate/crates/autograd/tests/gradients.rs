use fbpick_autograd::gradcheck::check_gradients;
use fbpick_autograd::{Graph, Layer, LayerSpec, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const SHAPE: [usize; 4] = [2, 3, 8, 8];

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    // keep away from the ReLU kink
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Values whose 2×2-block maxima win by a margin well above the probe step.
fn pool_friendly(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let data = perm.into_iter().map(|p| p as f64 * 0.01 - 1.0).collect();
    Tensor::new(shape, data).unwrap()
}

fn probe_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn check_layer(spec: LayerSpec, mode: Mode, input: Tensor<f64>) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = Layer::new("l", spec.clone(), &mut store, &mut rng).unwrap();
    // perturb batch-norm affine params away from the identity
    for (id, p) in store.iter().map(|(id, p)| (id, p.name.clone())).collect::<Vec<_>>() {
        if p.ends_with("gamma") || p.ends_with("beta") || p.ends_with("bias") {
            let n = store.value(id).numel();
            let t = probe_weights(&[n], id.index() as u64);
            store.get_mut(id).value = t;
        }
    }
    // output shape for the probe
    let out_shape = {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let y = layer.forward(&mut g, &store, &[x], mode, &mut r).unwrap();
        g.value(y).shape().to_vec()
    };
    let w = probe_weights(&out_shape, 5);
    let report = check_gradients(&mut store, &[input], H, |g, s, xs| {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let y = layer.forward(g, s, xs, mode, &mut r)?;
        g.weighted_sum(y, &w)
    })
    .unwrap();
    println!("{spec:?} {mode:?}: {:?}", report.errors);
    report.max_rel_error()
}

#[test]
fn conv3x3_gradients() {
    let e = check_layer(LayerSpec::Conv3x3 { in_ch: 3, out_ch: 4 }, Mode::Train, random(&SHAPE, 1));
    assert!(e <= TOL, "{e}");
}

#[test]
fn conv1x1_gradients() {
    let e = check_layer(LayerSpec::Conv1x1 { in_ch: 3, out_ch: 2 }, Mode::Train, random(&SHAPE, 2));
    assert!(e <= TOL, "{e}");
}

#[test]
fn conv_transpose_gradients() {
    let e = check_layer(
        LayerSpec::ConvTranspose2x2s2 { in_ch: 3, out_ch: 2 },
        Mode::Train,
        random(&SHAPE, 3),
    );
    assert!(e <= TOL, "{e}");
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    for mode in [Mode::Train, Mode::EvalDeterministic] {
        let e = check_layer(LayerSpec::BatchNorm { channels: 3 }, mode, random(&SHAPE, 4));
        assert!(e <= TOL, "{mode:?}: {e}");
    }
}

#[test]
fn relu_sigmoid_gradients() {
    for spec in [LayerSpec::Relu, LayerSpec::Sigmoid] {
        let e = check_layer(spec, Mode::Train, random(&SHAPE, 5));
        assert!(e <= TOL, "{e}");
    }
}

#[test]
fn pooling_and_upsampling_gradients() {
    let e = check_layer(LayerSpec::MaxPool2, Mode::Train, pool_friendly(&SHAPE, 6));
    assert!(e <= TOL, "maxpool {e}");
    let e = check_layer(LayerSpec::BilinearUp2, Mode::Train, random(&SHAPE, 7));
    assert!(e <= TOL, "bilinear {e}");
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    for mode in [Mode::Train, Mode::EvalMcSample, Mode::EvalDeterministic] {
        let e = check_layer(LayerSpec::Dropout { p: 0.3 }, mode, random(&SHAPE, 8));
        assert!(e <= TOL, "{mode:?}: {e}");
    }
}

#[test]
fn concat_gradients() {
    let mut store = ParamStore::<f64>::new();
    let a = random(&SHAPE, 9);
    let b = random(&[2, 2, 8, 8], 10);
    let w = probe_weights(&[2, 5, 8, 8], 12);
    let report = check_gradients(&mut store, &[a, b], H, |g, _, xs| {
        let y = g.concat(xs[0], xs[1])?;
        g.weighted_sum(y, &w)
    })
    .unwrap();
    assert!(report.max_rel_error() <= TOL, "{:?}", report.errors);
}

#[test]
fn sigmoid_bce_composition_gradients() {
    let mut store = ParamStore::<f64>::new();
    let x = random(&SHAPE, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n: usize = SHAPE.iter().product();
    let target = Tensor::new(&SHAPE, (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect()).unwrap();
    let report = check_gradients(&mut store, &[x.clone()], H, |g, _, xs| {
        let p = g.sigmoid(xs[0]);
        g.bce(p, &target)
    })
    .unwrap();
    assert!(report.max_rel_error() <= TOL, "{:?}", report.errors);

    let weights = Tensor::new(&SHAPE, (0..n).map(|i| if i % 5 == 0 { 0.0 } else { 1.0 }).collect()).unwrap();
    let report = check_gradients(&mut store, &[x], H, |g, _, xs| g.bce_with_logits(xs[0], &target, &weights)).unwrap();
    assert!(report.max_rel_error() <= TOL, "{:?}", report.errors);
}

#[test]
fn conv_block_composition_gradients() {
    // conv -> batch norm -> relu -> pool -> transposed conv, all through one tape
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let conv = Layer::new("c", LayerSpec::Conv3x3 { in_ch: 3, out_ch: 2 }, &mut store, &mut rng).unwrap();
    let bn = Layer::new("bn", LayerSpec::BatchNorm { channels: 2 }, &mut store, &mut rng).unwrap();
    let up = Layer::new("up", LayerSpec::ConvTranspose2x2s2 { in_ch: 2, out_ch: 1 }, &mut store, &mut rng).unwrap();
    let x = random(&[2, 3, 4, 4], 21);
    let w = probe_weights(&[2, 1, 4, 4], 22);
    let report = check_gradients(&mut store, &[x], H, |g, s, xs| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let y = conv.forward(g, s, xs, Mode::Train, &mut r)?;
        let y = bn.forward(g, s, &[y], Mode::Train, &mut r)?;
        let y = g.sigmoid(y);
        let y = g.max_pool2(y)?;
        let y = up.forward(g, s, &[y], Mode::Train, &mut r)?;
        g.weighted_sum(y, &w)
    })
    .unwrap();
    assert!(report.max_rel_error() <= TOL, "{:?}", report.errors);
}
