//! Central finite-difference checks of every layer's backward pass (f64).

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleshift_nn::{
    init, Backprop, Conv2d, ConvTranspose2d, InstanceNorm2d, Layer, Linear, NnError, Parameterized, Sequential,
};

const STEP: f64 = 1e-6;

/// Scalar probe `sum(w * f(x))` with a fixed random weighting `w`.
fn probe(net: &Sequential<f64>, x: &ArrayD<f64>, w: &ArrayD<f64>) -> f64 {
    let y = net.infer(x.clone()).unwrap();
    y.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn check(mut net: Sequential<f64>, input_shape: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = init::normal::<f64, _>(input_shape, 1.0, &mut rng);
    let out_shape = net.output_shape(input_shape).unwrap();
    let w = init::normal::<f64, _>(&out_shape, 1.0, &mut rng);

    net.zero_grad();
    let (_, cache) = net.forward(x.clone()).unwrap();
    let dx = net.backward(&cache, w.clone(), Backprop::FULL).unwrap().unwrap();

    // input gradient at random coordinates
    for _ in 0..12 {
        let i = rng.random_range(0..x.len());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[i] += STEP;
        xm.as_slice_mut().unwrap()[i] -= STEP;
        let fd = (probe(&net, &xp, &w) - probe(&net, &xm, &w)) / (2.0 * STEP);
        let an = dx.as_slice().unwrap()[i];
        assert!(rel_err(fd, an) < 1e-4 || (fd - an).abs() < 1e-8, "input[{i}]: fd {fd} vs analytic {an}");
    }

    // parameter gradients at random coordinates of every tensor
    let mut grads = Vec::new();
    net.visit_params("", &mut |name, p| grads.push((name.to_string(), p.grad.clone())));
    for (t, (name, grad)) in grads.iter().enumerate() {
        for _ in 0..4 {
            let i = rng.random_range(0..grad.len());
            let bump = |net: &mut Sequential<f64>, delta: f64| {
                let mut k = 0;
                net.visit_params_mut("", &mut |_, p| {
                    if k == t {
                        p.value.as_slice_mut().unwrap()[i] += delta;
                    }
                    k += 1;
                });
            };
            bump(&mut net, STEP);
            let fp = probe(&net, &x, &w);
            bump(&mut net, -2.0 * STEP);
            let fm = probe(&net, &x, &w);
            bump(&mut net, STEP);
            let fd = (fp - fm) / (2.0 * STEP);
            let an = grad.as_slice().unwrap()[i];
            assert!(rel_err(fd, an) < 1e-4 || (fd - an).abs() < 1e-8, "{name}[{i}]: fd {fd} vs analytic {an}");
        }
    }
}

#[test]
fn conv_norm_relu_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Sequential::new()
        .with("c1", Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, true, 0.5, &mut rng)))
        .with("n1", Layer::InstanceNorm(InstanceNorm2d::new(3)))
        .with("r1", Layer::Relu)
        .with("c2", Layer::Conv(Conv2d::new(3, 4, 4, 2, 1, false, 0.5, &mut rng)))
        .with("t", Layer::Tanh);
    check(net, &[2, 2, 6, 6], 10);
}

#[test]
fn transposed_conv_and_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inner = Sequential::new()
        .with("c1", Layer::Conv(Conv2d::new(3, 3, 3, 1, 1, false, 0.5, &mut rng)))
        .with("n1", Layer::InstanceNorm(InstanceNorm2d::new(3)))
        .with("r", Layer::Relu)
        .with("c2", Layer::Conv(Conv2d::new(3, 3, 3, 1, 1, false, 0.5, &mut rng)))
        .with("n2", Layer::InstanceNorm(InstanceNorm2d::new(3)));
    let net = Sequential::new()
        .with("res", Layer::Residual(inner))
        .with("up", Layer::ConvTranspose(ConvTranspose2d::new(3, 2, 4, 2, 1, true, 0.5, &mut rng)))
        .with("lr", Layer::LeakyRelu(0.2));
    check(net, &[2, 3, 4, 4], 20);
}

#[test]
fn linear_pool_flatten() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Sequential::new()
        .with("c", Layer::Conv(Conv2d::new(2, 3, 3, 2, 1, true, 0.5, &mut rng)))
        .with("lr", Layer::LeakyRelu(0.1))
        .with("flat", Layer::Flatten)
        .with("fc", Layer::Linear(Linear::new(12, 5, 0.5, &mut rng)))
        .with("r", Layer::Relu);
    check(net, &[3, 2, 4, 4], 30);

    let net = Sequential::new()
        .with("c", Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, true, 0.5, &mut rng)))
        .with("pool", Layer::GlobalAvgPool)
        .with("fc", Layer::Linear(Linear::new(3, 2, 0.5, &mut rng)));
    check(net, &[2, 2, 5, 5], 31);
}

#[test]
fn linearized_pass_is_the_directional_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Sequential::new()
        .with("c1", Layer::Conv(Conv2d::new(2, 4, 4, 2, 1, true, 0.5, &mut rng)))
        .with("a1", Layer::LeakyRelu(0.01))
        .with("c2", Layer::Conv(Conv2d::new(4, 3, 4, 2, 1, true, 0.5, &mut rng)))
        .with("a2", Layer::LeakyRelu(0.01))
        .with("head", Layer::Conv(Conv2d::new(3, 1, 3, 1, 1, false, 0.5, &mut rng)));
    let x = init::normal::<f64, _>(&[2, 2, 8, 8], 1.0, &mut rng);
    let v = init::normal::<f64, _>(&[2, 2, 8, 8], 1.0, &mut rng);
    let (_, primal) = net.forward(x.clone()).unwrap();
    let (jvp, _) = net.linearize(&primal, v.clone()).unwrap();
    let yp = net.infer(&x + &(&v * STEP)).unwrap();
    let ym = net.infer(&x - &(&v * STEP)).unwrap();
    for ((a, p), m) in jvp.iter().zip(yp.iter()).zip(ym.iter()) {
        let fd = (p - m) / (2.0 * STEP);
        assert!((a - fd).abs() < 1e-6, "{a} vs {fd}");
    }
}

#[test]
fn normalization_cannot_be_linearized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Sequential::new()
        .with("c", Layer::Conv(Conv2d::<f64>::new(1, 2, 3, 1, 1, true, 0.5, &mut rng)))
        .with("norm", Layer::InstanceNorm(InstanceNorm2d::new(2)));
    let x = init::normal::<f64, _>(&[1, 1, 4, 4], 1.0, &mut rng);
    let (_, primal) = net.forward(x.clone()).unwrap();
    match net.linearize(&primal, x) {
        Err(NnError::NotLinearizable { layer }) => assert_eq!(layer, "norm"),
        other => panic!("expected NotLinearizable, got {other:?}"),
    }
}

#[test]
fn non_finite_activation_names_the_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inner = Sequential::new().with("conv_a", Layer::Conv(Conv2d::<f32>::new(1, 1, 3, 1, 1, false, 1.0, &mut rng)));
    let net = Sequential::new().with("block3", Layer::Residual(inner));
    let mut x = ArrayD::<f32>::zeros(ndarray::IxDyn(&[1, 1, 4, 4]));
    x[[0, 0, 1, 1]] = f32::INFINITY;
    match net.infer(x) {
        Err(NnError::NonFinite { layer }) => assert_eq!(layer, "block3.conv_a"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}
