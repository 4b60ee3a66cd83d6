use fbpick_autograd::{bce_value, Graph, Layer, LayerSpec, Mode, Optimizer, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn run(layer: &Layer, store: &ParamStore<f32>, x: Tensor<f32>, mode: Mode, seed: u64) -> Tensor<f32> {
    let mut g = Graph::new();
    let v = g.input(x);
    let y = layer.forward(&mut g, store, &[v], mode, &mut rng(seed)).unwrap();
    g.take_value(y)
}

#[test]
fn dropout_zero_rate_is_identity_in_every_mode() {
    let mut store = ParamStore::new();
    let d = Layer::new("d", LayerSpec::Dropout { p: 0.0 }, &mut store, &mut rng(0)).unwrap();
    let x = tensor(&[1, 2, 4, 4], 1);
    for mode in [Mode::Train, Mode::EvalDeterministic, Mode::EvalMcSample] {
        assert_eq!(run(&d, &store, x.clone(), mode, 9), x);
    }
}

#[test]
fn relu_definition() {
    let mut store = ParamStore::new();
    let r = Layer::new("r", LayerSpec::Relu, &mut store, &mut rng(0)).unwrap();
    let x = Tensor::new(&[1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
    assert_eq!(run(&r, &store, x, Mode::Train, 0).data(), &[0.0, 2.0]);
}

#[test]
fn identity_kernel_conv_reproduces_input() {
    let mut store = ParamStore::new();
    let c = Layer::new("c", LayerSpec::Conv3x3 { in_ch: 1, out_ch: 1 }, &mut store, &mut rng(0)).unwrap();
    let w = c.params()[0];
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    store.get_mut(w).value = Tensor::new(&[1, 1, 3, 3], k).unwrap();
    let x = tensor(&[2, 1, 6, 5], 3);
    assert_eq!(run(&c, &store, x.clone(), Mode::EvalDeterministic, 0), x);
}

#[test]
fn sum_loss_gradient_is_ones_and_accumulates() {
    let mut store = ParamStore::<f32>::new();
    let mut g = Graph::new();
    let x = g.input_with_grad(tensor(&[2, 3], 4));
    let loss = g.sum(x);
    let grads = g.backward(loss, &mut store).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    // parameter gradients add up across backward passes until zeroed
    let mut store = ParamStore::<f32>::new();
    let c = Layer::new("c", LayerSpec::Conv1x1 { in_ch: 2, out_ch: 1 }, &mut store, &mut rng(1)).unwrap();
    let x = tensor(&[1, 2, 3, 3], 5);
    let mut g = Graph::new();
    let v = g.input(x);
    let y = c.forward(&mut g, &store, &[v], Mode::Train, &mut rng(0)).unwrap();
    let loss = g.sum(y);
    g.backward(loss, &mut store).unwrap();
    let once = store.grad(c.params()[0]).clone();
    g.backward(loss, &mut store).unwrap();
    let twice = store.grad(c.params()[0]);
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert!((2.0 * a - b).abs() < 1e-6);
    }
    store.zero_grad();
    assert!(store.grad(c.params()[0]).data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut store = ParamStore::<f32>::new();
    let mut g = Graph::new();
    let x = g.input_with_grad(tensor(&[2, 3], 4));
    assert!(g.backward(x, &mut store).is_err());
}

#[test]
fn bce_reference_values() {
    let half = vec![0.5f64; 6];
    let t = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    assert!((bce_value(&half, &t) - std::f64::consts::LN_2).abs() < 1e-12);
    let perfect = bce_value(&t, &t);
    assert!(perfect <= -(1.0f64 - 1e-7).ln() + 1e-15);
    let v = bce_value(&[0.9f64, 0.2], &[1.0, 0.0]);
    assert!((v - 0.164252).abs() < 1e-6, "{v}");
}

#[test]
fn shape_errors_are_reported() {
    let mut store = ParamStore::new();
    let c = Layer::new("c", LayerSpec::Conv3x3 { in_ch: 3, out_ch: 1 }, &mut store, &mut rng(0)).unwrap();
    let mut g = Graph::new();
    let v = g.input(tensor(&[1, 2, 4, 4], 0));
    let err = c.forward(&mut g, &store, &[v], Mode::Train, &mut rng(0)).unwrap_err();
    assert!(err.to_string().contains("conv2d"), "{err}");
    let v = g.input(tensor(&[1, 1, 3, 4], 0));
    assert!(g.max_pool2(v).is_err());
}

#[test]
fn dropout_is_reproducible_and_unbiased_on_a_linear_layer() {
    let mut store = ParamStore::new();
    let d = Layer::new("d", LayerSpec::Dropout { p: 0.3 }, &mut store, &mut rng(0)).unwrap();
    let lin = Layer::new("lin", LayerSpec::Conv1x1 { in_ch: 16, out_ch: 1 }, &mut store, &mut rng(1)).unwrap();
    let x = tensor(&[1, 16, 1, 1], 7).map(|v| v.abs() + 0.5);
    let forward = |mode: Mode, r: &mut ChaCha8Rng| {
        let mut g = Graph::inference();
        let v = g.input(x.clone());
        let v = d.forward(&mut g, &store, &[v], mode, r).unwrap();
        let y = lin.forward(&mut g, &store, &[v], mode, r).unwrap();
        g.value(y).data()[0] as f64
    };
    let a = forward(Mode::EvalMcSample, &mut rng(42));
    let b = forward(Mode::EvalMcSample, &mut rng(42));
    assert_eq!(a.to_bits(), b.to_bits());

    let det = forward(Mode::EvalDeterministic, &mut rng(0));
    let mut r = rng(123);
    let mean = (0..10_000).map(|_| forward(Mode::Train, &mut r)).sum::<f64>() / 10_000.0;
    assert!(((mean - det) / det).abs() <= 0.02, "mean {mean} vs deterministic {det}");
}

#[test]
fn batch_norm_running_stats_only_move_when_committed_in_train_mode() {
    let mut store = ParamStore::new();
    let bn = Layer::new("bn", LayerSpec::BatchNorm { channels: 2 }, &mut store, &mut rng(0)).unwrap();
    let x = tensor(&[4, 2, 3, 3], 8).map(|v| 3.0 * v + 1.0);
    for mode in [Mode::EvalDeterministic, Mode::EvalMcSample] {
        let mut g = Graph::new();
        let v = g.input(x.clone());
        bn.forward(&mut g, &store, &[v], mode, &mut rng(0)).unwrap();
        assert!(g.running_stat_updates().is_empty());
    }
    let mut g = Graph::new();
    let v = g.input(x.clone());
    bn.forward(&mut g, &store, &[v], Mode::Train, &mut rng(0)).unwrap();
    g.commit_running_stats(&mut store, 0.1);
    let rm = store.value(bn.params()[2]).data();
    assert!(rm.iter().any(|&m| m != 0.0));
}

#[test]
fn pool_then_upsample_restores_spatial_shape() {
    let mut store = ParamStore::new();
    let pool = Layer::new("p", LayerSpec::MaxPool2, &mut store, &mut rng(0)).unwrap();
    let bil = Layer::new("b", LayerSpec::BilinearUp2, &mut store, &mut rng(0)).unwrap();
    let tc = Layer::new("t", LayerSpec::ConvTranspose2x2s2 { in_ch: 3, out_ch: 3 }, &mut store, &mut rng(0)).unwrap();
    let x = tensor(&[2, 3, 8, 6], 2);
    let down = run(&pool, &store, x.clone(), Mode::Train, 0);
    assert_eq!(down.shape(), &[2, 3, 4, 3]);
    for up in [&bil, &tc] {
        assert_eq!(run(up, &store, down.clone(), Mode::Train, 0).shape(), x.shape());
    }
}

#[test]
fn adam_fits_a_pixelwise_classifier() {
    let mut store = ParamStore::<f32>::new();
    let c = Layer::new("c", LayerSpec::Conv1x1 { in_ch: 2, out_ch: 1 }, &mut store, &mut rng(3)).unwrap();
    let x = tensor(&[4, 2, 4, 4], 9);
    // target: first channel positive
    let target = Tensor::new(
        &[4, 1, 4, 4],
        (0..4).flat_map(|b| x.item(b)[..16].iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>()).collect(),
    )
    .unwrap();
    let ones = Tensor::full(&[4, 1, 4, 4], 1.0);
    let mut opt = Optimizer::adam(0.05);
    let mut losses = Vec::new();
    for _ in 0..100 {
        store.zero_grad();
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let z = c.forward(&mut g, &store, &[v], Mode::Train, &mut rng(0)).unwrap();
        let loss = g.bce_with_logits(z, &target, &ones).unwrap();
        losses.push(g.value(loss).data()[0]);
        g.backward(loss, &mut store).unwrap();
        opt.step(&mut store).unwrap();
    }
    assert!(losses[99] < 0.5 * losses[0], "{} -> {}", losses[0], losses[99]);
}

proptest! {
    #[test]
    fn dropout_masks_are_zero_or_scaled(seed in 0u64..1000, p in 0.05f64..0.9) {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[1, 1, 8, 8], 1.0));
        let y = g.dropout(x, p, Some(&mut rng(seed))).unwrap();
        let keep = (1.0 / (1.0 - p)) as f32;
        for &v in g.value(y).data() {
            prop_assert!(v == 0.0 || (v - keep).abs() < 1e-6);
        }
    }
}
