//! Translates held-out images to every domain and saves them as a grid,
//! next to the same grid from an untrained generator.
//!
//! cargo run --release --example translate_grid -- <checkpoint> <out.png>

use styleshift::data_pipeline::image_io::save_image;
use styleshift::data_pipeline::{load_dataset, split_train_test};
use styleshift::evaluation::sample_grid;
use styleshift::trainer::{load_checkpoint, TrainState};

fn main() -> styleshift::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: translate_grid <checkpoint> <out.png>");
        std::process::exit(2);
    }
    let state = load_checkpoint(args[0].as_ref())?;
    let data = load_dataset(&state.config.dataset)?;
    let split = split_train_test(&data, state.config.dataset.test_fraction, state.config.seed)?;
    // two held-out images per domain
    let mut picks = Vec::new();
    for k in 0..data.num_domains() {
        picks.extend(split.test.iter().filter(|&&i| data.labels[i] == k).take(2).map(|&i| data.images[i].clone()));
    }
    let out = std::path::Path::new(&args[1]);
    save_image(&sample_grid(&state.nets, &picks, 0)?, out)?;
    let untrained = TrainState::new(state.config.clone())?;
    let control = out.with_file_name("untrained_grid.png");
    save_image(&sample_grid(&untrained.nets, &picks, 0)?, &control)?;
    println!("wrote {} and {}", out.display(), control.display());
    Ok(())
}
