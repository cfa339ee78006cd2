//! Trains the desk configuration and writes metrics, checkpoints and sample
//! grids to a run directory.
//!
//! cargo run --release --example train_desk -- <out_dir> [iterations] [seed]

use std::path::PathBuf;
use std::time::Instant;

use styleshift::trainer::{RunOptions, TrainConfig, Trainer};

fn main() -> styleshift::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("runs/desk", String::as_str));
    let iterations = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let seed = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(0);
    let config = TrainConfig { max_iterations: iterations, ..TrainConfig::desk(seed) };

    let mut trainer = Trainer::new(config, RunOptions { out_dir: Some(out.clone()), workers: 0 })?;
    let start = Instant::now();
    while trainer.state.iteration < iterations {
        trainer.run_until(trainer.state.iteration + 25)?;
        let r = trainer.history().last().expect("ran at least one step").report;
        println!(
            "{:>5}  d_adv {:>8.3}  gp {:.3}  d_cls {:.3}  g_adv {:>8.3}  g_cls {:.3}  g_rec {:.4}  {:.0}s",
            r.iteration,
            r.d_adv,
            r.d_gp,
            r.d_cls_real,
            r.g_adv,
            r.g_cls_fake,
            r.g_rec,
            start.elapsed().as_secs_f64()
        );
    }
    // checkpoints the last iteration when it is off schedule
    trainer.run()?;
    println!("run directory: {}", out.display());
    Ok(())
}
