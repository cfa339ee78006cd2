//! Builds G, E and D at 64x64 and prints their shape chains and sizes.
//!
//! cargo run --example model_shapes -- [image_size] [base_width]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use styleshift::trainer::TrainConfig;
use styleshift::models::Networks;

fn main() -> styleshift::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut c = TrainConfig::desk(0);
    c.dataset.image_size = args.first().copied().unwrap_or(64);
    if let Some(&w) = args.get(1) {
        c.generator.base_width = w;
        c.discriminator.base_width = w;
    }
    let nets = Networks::<f32>::new(&c.model_specs(), &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("generator");
    for (name, shape) in nets.generator.shape_chain()? {
        println!("  {name:<24} {shape:?}");
    }
    println!("discriminator");
    for (name, shape) in nets.discriminator.shape_chain()? {
        println!("  {name:<24} {shape:?}");
    }
    for (name, m) in nets.modules() {
        println!("{name}: {} parameters", m.num_params());
    }
    Ok(())
}
