use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleshift::models::{
    build_generator_input, sample_latents, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ModelSpecs,
    Networks, StyleExtractor, StyleExtractorSpec,
};
use styleshift_nn::{Backprop, Parameterized, Scalar};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(rng.random_range(-1.0..1.0)))
}

fn style_spec(k: usize, s: usize) -> StyleExtractorSpec {
    StyleExtractorSpec {
        latent_length: 16,
        hidden_width: 512,
        shared_layers: 4,
        unshared_layers_per_domain: 3,
        num_domains: k,
        style_length: s,
    }
}

fn d_spec(h: usize, hidden: usize, base: usize) -> DiscriminatorSpec {
    DiscriminatorSpec { image_size: h, num_domains: 3, base_width: base, num_hidden_layers: hidden, leaky_slope: 0.01 }
}

#[test]
fn generator_input_layout() {
    let mut r = rng(0);
    let img = uniform::<f32>(&[2, 3, 64, 64], &mut r);
    let style = Array2::from_shape_fn((2, 64), |(b, w)| (b * 64 + w) as f32);
    let x = build_generator_input(&img, &[0, 2], 3, &style).unwrap();
    assert_eq!(x.shape(), &[2, 7, 64, 64]);
    for h in 0..64 {
        for w in 0..64 {
            assert_eq!(x[[1, 6, h, w]], style[[1, w]]);
            assert_eq!((x[[1, 3, h, w]], x[[1, 4, h, w]], x[[1, 5, h, w]]), (0.0, 0.0, 1.0));
        }
    }

    let zero = Array2::<f32>::zeros((2, 64));
    let x0 = build_generator_input(&img, &[0, 1], 3, &zero).unwrap();
    assert!(x0.slice(ndarray::s![.., 6, .., ..]).iter().all(|&v| v == 0.0));

    let x1 = build_generator_input(&img, &[1, 1], 3, &zero).unwrap();
    for ((idx, a), b) in x0.indexed_iter().zip(x1.iter()) {
        if a != b {
            assert!((3..6).contains(&idx[1]), "difference outside label channels at {idx:?}");
        }
    }

    let short = Array2::<f32>::zeros((2, 32));
    assert!(build_generator_input(&img, &[0, 1], 3, &short).is_err());
}

#[test]
fn generator_shape_chain_at_64() {
    let g = Generator::<f32>::new(GeneratorSpec::new(64, 3, 32, 9), &mut rng(1)).unwrap();
    let chain = g.shape_chain().unwrap();
    let at = |name: &str| chain.iter().find(|(n, _)| n == name).unwrap().1[1..].to_vec();
    assert_eq!(at("in.relu"), [32, 64, 64]);
    assert_eq!(at("down1.relu"), [64, 32, 32]);
    assert_eq!(at("down2.relu"), [128, 16, 16]);
    for i in 1..=9 {
        assert_eq!(at(&format!("res{i}")), [128, 16, 16]);
    }
    assert_eq!(at("up1.relu"), [64, 32, 32]);
    assert_eq!(at("up2.relu"), [32, 64, 64]);
    assert_eq!(at("out.tanh"), [3, 64, 64]);
    assert_eq!(chain.len(), 9 + 9 + 6 + 2);
}

#[test]
fn generator_shape_chain_at_256_construct_only() {
    let g = Generator::<f32>::new(GeneratorSpec::new(256, 3, 64, 9), &mut rng(2)).unwrap();
    let chain = g.shape_chain().unwrap();
    let at = |name: &str| chain.iter().find(|(n, _)| n == name).unwrap().1[1..].to_vec();
    assert_eq!(at("in.relu"), [64, 256, 256]);
    assert_eq!(at("down2.relu"), [256, 64, 64]);
    assert_eq!(at("res9"), [256, 64, 64]);
    assert_eq!(at("out.tanh"), [3, 256, 256]);
}

fn generator_param_oracle(k: usize, w: usize, blocks: usize) -> usize {
    let conv = |i: usize, o: usize, kk: usize| i * o * kk * kk;
    let norm = |c: usize| 2 * c;
    conv(3 + k + 1, w, 7)
        + norm(w)
        + conv(w, 2 * w, 4)
        + norm(2 * w)
        + conv(2 * w, 4 * w, 4)
        + norm(4 * w)
        + blocks * (2 * conv(4 * w, 4 * w, 3) + 2 * norm(4 * w))
        + conv(4 * w, 2 * w, 4)
        + norm(2 * w)
        + conv(2 * w, w, 4)
        + norm(w)
        + conv(w, 3, 7)
}

fn style_param_oracle(s: &StyleExtractorSpec) -> usize {
    let fc = |i: usize, o: usize| i * o + o;
    let hw = s.hidden_width;
    let shared = fc(s.latent_length, hw) + (s.shared_layers - 1) * fc(hw, hw);
    let branch = (s.unshared_layers_per_domain - 1) * fc(hw, hw) + fc(hw, s.style_length);
    shared + s.num_domains * branch
}

fn disc_param_oracle(d: &DiscriminatorSpec) -> usize {
    let mut n = 0;
    let mut ch = 3;
    for i in 0..d.num_downsamplings() {
        let out = d.base_width << i;
        n += ch * out * 16 + out;
        ch = out;
    }
    let k = d.output_size();
    n + ch * 9 + ch * d.num_domains * k * k
}

#[test]
fn parameter_counts_match_closed_forms() {
    let specs = ModelSpecs {
        generator: GeneratorSpec::new(64, 3, 8, 3),
        style_extractor: style_spec(3, 64),
        discriminator: d_spec(64, 4, 16),
    };
    let nets = Networks::<f32>::new(&specs, &mut rng(3)).unwrap();
    assert_eq!(nets.generator.num_params(), generator_param_oracle(3, 8, 3));
    assert_eq!(nets.style_extractor.num_params(), style_param_oracle(&specs.style_extractor));
    assert_eq!(nets.discriminator.num_params(), disc_param_oracle(&specs.discriminator));
    // pinned for this desk configuration
    assert_eq!(nets.generator.num_params(), 80_240);
    assert_eq!(nets.style_extractor.num_params(), 2_471_104);
    assert_eq!(nets.discriminator.num_params(), 702_960);

    let again = Networks::<f32>::new(&specs, &mut rng(99)).unwrap();
    assert_eq!(nets.named_shapes(), again.named_shapes());
}

#[test]
fn generator_outputs_bounded_and_pure() {
    let g = Generator::<f32>::new(GeneratorSpec::new(16, 3, 4, 2), &mut rng(4)).unwrap();
    let mut r = rng(5);
    let img = uniform::<f32>(&[3, 3, 16, 16], &mut r);
    let style = uniform::<f32>(&[3, 16], &mut r).into_dimensionality().unwrap();
    let y = g.infer(&img, &[0, 1, 2], &style).unwrap();
    assert_eq!(y.shape(), img.shape());
    assert!(y.iter().all(|v| v.abs() < 1.0));
    assert_eq!(y, g.infer(&img, &[0, 1, 2], &style).unwrap());
    let (y2, _) = g.forward(&img, &[0, 1, 2], &style).unwrap();
    assert_eq!(y, y2);
}

#[test]
fn latent_has_bottleneck_length_and_is_deterministic() {
    let g = Generator::<f32>::new(GeneratorSpec::new(64, 3, 32, 2), &mut rng(6)).unwrap();
    let mut r = rng(7);
    let one = uniform::<f32>(&[1, 3, 64, 64], &mut r);
    let img = ndarray::concatenate(ndarray::Axis(0), &[one.view(), one.view()]).unwrap();
    let style = Array2::<f32>::zeros((2, 64));
    let lat = g.extract_latent(&img, &[1, 1], &style).unwrap();
    assert_eq!(lat.dim(), (2, 128));
    assert_eq!(lat.row(0), lat.row(1));
}

#[test]
fn style_extractor_shapes_and_determinism() {
    let e = StyleExtractor::<f32>::new(style_spec(3, 64), &mut rng(8)).unwrap();
    let z = sample_latents::<f32, _>(4, 16, &mut rng(9));
    let s = e.infer(&z, &[0, 2, 1, 2]).unwrap();
    assert_eq!(s.dim(), (4, 64));
    assert_eq!(s, e.infer(&z, &[0, 2, 1, 2]).unwrap());
    assert!(e.infer(&z, &[0, 3, 1, 2]).is_err());
}

#[test]
fn branches_differ_across_random_inits() {
    let z = sample_latents::<f32, _>(1, 16, &mut rng(10));
    for seed in 0..100 {
        let e = StyleExtractor::<f32>::new(style_spec(3, 64), &mut rng(1000 + seed)).unwrap();
        let a = e.infer(&z, &[0]).unwrap();
        let b = e.infer(&z, &[1]).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(diff > 0.0, "init {seed}: identical style codes for different domains");
    }
}

#[test]
fn zeroing_one_branch_only_affects_its_items() {
    let mut e = StyleExtractor::<f64>::new(style_spec(3, 32), &mut rng(11)).unwrap();
    let z = sample_latents::<f64, _>(6, 16, &mut rng(12));
    let domains = [0, 1, 2, 1, 0, 1];
    let before = e.infer(&z, &domains).unwrap();
    e.branches[1].visit_params_mut("", &mut |_, p| p.value.fill(0.0));
    let after = e.infer(&z, &domains).unwrap();
    for (i, &d) in domains.iter().enumerate() {
        if d == 1 {
            assert_ne!(before.row(i), after.row(i));
            assert!(after.row(i).iter().all(|&v| v == 0.0));
        } else {
            assert_eq!(before.row(i), after.row(i));
        }
    }
}

#[test]
fn instance_norm_statistics_in_the_generator() {
    let g = Generator::<f64>::new(GeneratorSpec::new(16, 3, 8, 1), &mut rng(13)).unwrap();
    let mut r = rng(14);
    let img = uniform::<f64>(&[2, 3, 16, 16], &mut r);
    let style: Array2<f64> = uniform::<f64>(&[2, 16], &mut r).into_dimensionality().unwrap();
    let x = build_generator_input(&img, &[0, 2], 3, &style).unwrap();
    // in.conv then in.norm (affine is identity at init)
    let (y, _) = g.net.run_range(x, 0..2, false).unwrap();
    for b in 0..2 {
        for c in 0..8 {
            let plane = y.slice(ndarray::s![b, c, .., ..]);
            let n = plane.len() as f64;
            let mean = plane.sum() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            // eps = 1e-5 inside the square root
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }
}

#[test]
fn discriminator_shapes() {
    let d = Discriminator::<f32>::new(d_spec(256, 5, 64), &mut rng(15)).unwrap();
    let chain = d.shape_chain().unwrap();
    let at = |name: &str| chain.iter().find(|(n, _)| n == name).unwrap().1[1..].to_vec();
    for i in 0..6 {
        assert_eq!(at(&format!("lrelu{i}")), [64 << i, 256 >> (i + 1), 256 >> (i + 1)]);
    }
    assert_eq!(at("src.conv"), [1, 4, 4]);
    assert_eq!(at("cls.flatten"), [3]);

    let small = Discriminator::<f32>::new(d_spec(64, 4, 8), &mut rng(16)).unwrap();
    let x = uniform::<f32>(&[2, 3, 64, 64], &mut rng(17));
    let (src, logits) = small.infer(&x).unwrap();
    assert_eq!(src.shape(), &[2, 1, 2, 2]);
    assert_eq!(logits.dim(), (2, 3));

    assert!(Discriminator::<f32>::new(d_spec(48, 4, 8), &mut rng(0)).is_err());
}

#[test]
fn zero_discriminator_outputs_zero() {
    let mut d = Discriminator::<f64>::new(d_spec(64, 4, 4), &mut rng(18)).unwrap();
    d.visit_params_mut("", &mut |_, p| p.value.fill(0.0));
    let x = uniform::<f64>(&[2, 3, 64, 64], &mut rng(19));
    let (src, logits) = d.infer(&x).unwrap();
    assert!(src.iter().all(|&v| v == 0.0));
    assert!(logits.iter().all(|&v| v == 0.0));
}

// ---- finite-difference checks (H = 8, widths 4, f64) ----

const FD_STEP: f64 = 1e-6;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()) + 1e-8
}

/// Checks up to `per_tensor` entries of every parameter tensor of `module`
/// against central differences of `loss`.
fn check_params<M: Parameterized<f64>>(
    module: &mut M,
    analytic: &[ArrayD<f64>],
    loss: impl Fn(&M) -> f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) {
    let shapes = module.named_shapes("");
    for (t, (name, _)) in shapes.iter().enumerate() {
        let n = analytic[t].len();
        for _ in 0..per_tensor.min(n) {
            let j = rng.random_range(0..n);
            nudge(module, t, j, FD_STEP);
            let up = loss(module);
            nudge(module, t, j, -2.0 * FD_STEP);
            let down = loss(module);
            nudge(module, t, j, FD_STEP);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[t].as_slice().unwrap()[j];
            assert!(close(a, numeric), "{name}[{j}]: analytic {a} vs numeric {numeric}");
        }
    }
}

fn nudge<M: Parameterized<f64>>(module: &mut M, tensor: usize, index: usize, delta: f64) {
    let mut seen = 0;
    module.visit_params_mut("", &mut |_, p| {
        if seen == tensor {
            p.value.as_slice_mut().unwrap()[index] += delta;
        }
        seen += 1;
    });
}

fn grads<M: Parameterized<f64>>(m: &M) -> Vec<ArrayD<f64>> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.push(p.grad.clone()));
    out
}

#[test]
fn generator_gradients_match_finite_differences() {
    let mut r = rng(20);
    let mut g = Generator::<f64>::new(GeneratorSpec::new(8, 2, 4, 1), &mut r).unwrap();
    // nudge norm affine parameters off their identity initialization
    g.visit_params_mut("", &mut |_, p| {
        if p.value.ndim() == 1 {
            p.value.mapv_inplace(|v| v + 0.1);
        }
    });
    let img = uniform::<f64>(&[2, 3, 8, 8], &mut r);
    let style: Array2<f64> = uniform::<f64>(&[2, 8], &mut r).into_dimensionality().unwrap();
    let labels = [1, 0];
    let weights = uniform::<f64>(&[2, 3, 8, 8], &mut r);
    let loss = |g: &Generator<f64>, img: &ArrayD<f64>, style: &Array2<f64>| (g.infer(img, &labels, style).unwrap() * &weights).sum();

    let (_, cache) = g.forward(&img, &labels, &style).unwrap();
    let input_grads = g.backward(&cache, weights.clone(), true).unwrap();
    let analytic = grads(&g);
    check_params(&mut g, &analytic, |g| loss(g, &img, &style), 6, &mut r);

    for _ in 0..10 {
        let j = r.random_range(0..img.len());
        let mut up = img.clone();
        up.as_slice_mut().unwrap()[j] += FD_STEP;
        let mut down = img.clone();
        down.as_slice_mut().unwrap()[j] -= FD_STEP;
        let numeric = (loss(&g, &up, &style) - loss(&g, &down, &style)) / (2.0 * FD_STEP);
        assert!(close(input_grads.image.as_slice().unwrap()[j], numeric));
    }
    for j in 0..8 {
        let mut up = style.clone();
        up[[1, j]] += FD_STEP;
        let mut down = style.clone();
        down[[1, j]] -= FD_STEP;
        let numeric = (loss(&g, &img, &up) - loss(&g, &img, &down)) / (2.0 * FD_STEP);
        assert!(close(input_grads.style[[1, j]], numeric), "style[{j}]");
    }
}

#[test]
fn style_extractor_gradients_match_finite_differences() {
    let mut r = rng(21);
    let spec = StyleExtractorSpec {
        latent_length: 16,
        hidden_width: 4,
        shared_layers: 4,
        unshared_layers_per_domain: 3,
        num_domains: 3,
        style_length: 8,
    };
    let mut e = StyleExtractor::<f64>::new(spec, &mut r).unwrap();
    // zero biases put dead rows exactly on the ReLU kink
    e.visit_params_mut("", &mut |_, p| {
        if p.value.ndim() == 1 {
            p.value.fill(0.05);
        }
    });
    let z = sample_latents::<f64, _>(5, 16, &mut r);
    let domains = [2, 0, 2, 1, 0];
    let weights: Array2<f64> = uniform::<f64>(&[5, 8], &mut r).into_dimensionality().unwrap();
    let (_, cache) = e.forward(&z, &domains).unwrap();
    e.backward(&cache, &weights).unwrap();
    let analytic = grads(&e);
    check_params(&mut e, &analytic, |e| (e.infer(&z, &domains).unwrap() * &weights).sum(), 8, &mut r);
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let mut r = rng(22);
    let mut d = Discriminator::<f64>::new(
        DiscriminatorSpec { image_size: 8, num_domains: 3, base_width: 4, num_hidden_layers: 2, leaky_slope: 0.01 },
        &mut r,
    )
    .unwrap();
    d.visit_params_mut("", &mut |_, p| p.value.mapv_inplace(|v| v * 20.0));
    let x = uniform::<f64>(&[2, 3, 8, 8], &mut r);
    let (src, logits, cache) = d.forward(&x).unwrap();
    let ws = uniform::<f64>(src.shape(), &mut r);
    let wl: Array2<f64> = uniform::<f64>(&[2, 3], &mut r).into_dimensionality().unwrap();
    let loss = |d: &Discriminator<f64>, x: &ArrayD<f64>| {
        let (s, l) = d.infer(x).unwrap();
        (s * &ws).sum() + (l * &wl).sum()
    };
    assert_eq!(logits.dim(), (2, 3));
    let dx = d.backward(&cache, Some(ws.clone()), Some(&wl), Backprop::FULL).unwrap().unwrap();
    let analytic = grads(&d);
    check_params(&mut d, &analytic, |d| loss(d, &x), 8, &mut r);
    for j in 0..x.len() {
        let mut up = x.clone();
        up.as_slice_mut().unwrap()[j] += FD_STEP;
        let mut down = x.clone();
        down.as_slice_mut().unwrap()[j] -= FD_STEP;
        let numeric = (loss(&d, &up) - loss(&d, &down)) / (2.0 * FD_STEP);
        assert!(close(dx.as_slice().unwrap()[j], numeric), "input[{j}]");
    }
}

#[test]
fn mismatched_specs_are_rejected() {
    let specs = ModelSpecs {
        generator: GeneratorSpec::new(64, 3, 8, 3),
        style_extractor: style_spec(3, 32),
        discriminator: d_spec(64, 4, 16),
    };
    assert!(Networks::<f32>::new(&specs, &mut rng(0)).is_err());
}
