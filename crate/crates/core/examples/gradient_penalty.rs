//! Evaluates the WGAN-GP penalty on reference critics and on a random
//! discriminator, and checks one parameter gradient by central differences.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleshift::losses::{gradient_penalty, ConstantCritic, LinearCritic};
use styleshift::models::{Discriminator, DiscriminatorSpec};
use styleshift_nn::Parameterized;

fn main() -> styleshift::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut batch = || ArrayD::from_shape_simple_fn(IxDyn(&[4, 3, 8, 8]), || rng.random_range(-1.0..1.0));
    let (real, fake) = (batch(), batch());

    let mut unit = LinearCritic::<f64>::unit_channel_sum(3, 8, 8);
    let gp = gradient_penalty(&mut unit, &real, &fake, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("unit-gradient critic: penalty {:.2e}", gp.value);
    let gp = gradient_penalty(&mut ConstantCritic(3.0), &real, &fake, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("constant critic:      penalty {}", gp.value);

    let spec = DiscriminatorSpec { image_size: 8, num_domains: 3, base_width: 4, num_hidden_layers: 2, leaky_slope: 0.01 };
    let mut d = Discriminator::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(2))?;
    let gp = gradient_penalty(&mut d, &real, &fake, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("random critic:        penalty {:.6}, norms {:.3?}", gp.value, gp.norms);

    d.zero_grad();
    gp.accumulate_param_grads(&mut d, 1.0)?;
    // entry 5 of the first convolution kernel
    let mut first = None;
    d.visit_params("", &mut |name, p| {
        if p.value.ndim() == 4 {
            first.get_or_insert((name.to_string(), p.grad.as_slice().unwrap()[5]));
        }
    });
    let (target, analytic) = first.expect("critic has parameters");
    let h = 1e-6;
    let mut at = |delta: f64| -> styleshift::Result<f64> {
        d.visit_params_mut("", &mut |name, p| {
            if name == target {
                p.value.as_slice_mut().unwrap()[5] += delta;
            }
        });
        Ok(gradient_penalty(&mut d, &real, &fake, &mut ChaCha8Rng::seed_from_u64(1))?.value)
    };
    let up = at(h)?;
    let down = at(-2.0 * h)?;
    println!("d penalty / d {target}[5]: analytic {analytic:.8}, numeric {:.8}", (up - down) / (2.0 * h));
    Ok(())
}
