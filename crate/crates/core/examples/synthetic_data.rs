//! Generates the synthetic three-domain dataset, splits it, augments a few
//! images and checks that a mean-hue threshold separates the domains.
//!
//! cargo run --example synthetic_data -- [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use styleshift::data_pipeline::{augment, dump_dataset, load_dataset, mean_hue, split_train_test, DatasetSpec};

fn main() -> styleshift::Result<()> {
    let spec = DatasetSpec { image_size: 64, crop_size: styleshift::data_pipeline::CropSize::None, ..Default::default() };
    let data = load_dataset(&spec)?;
    let split = split_train_test(&data, spec.test_fraction, 0)?;
    println!("{} images, per domain {:?}", data.len(), data.counts_per_domain());
    println!("train {} / test {}", split.train.len(), split.test.len());

    // nearest mean hue, fitted on the training split
    let k = data.num_domains();
    let mut sums = vec![(0.0, 0usize); k];
    for &i in &split.train {
        let s = &mut sums[data.labels[i]];
        s.0 += mean_hue(&data.images[i]);
        s.1 += 1;
    }
    let centers: Vec<f64> = sums.iter().map(|(s, n)| s / *n as f64).collect();
    let correct = split
        .test
        .iter()
        .filter(|&&i| {
            let h = mean_hue(&data.images[i]);
            let best = (0..k).min_by(|&a, &b| (h - centers[a]).abs().total_cmp(&(h - centers[b]).abs())).unwrap();
            best == data.labels[i]
        })
        .count();
    println!("hue centers {centers:.3?}, test accuracy {}/{}", correct, split.test.len());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jittered = augment(&data.images[0], &mut rng);
    println!("augmented pixel range [{:.3}, {:.3}]", jittered.fold(1.0f32, |a, &b| a.min(b)), jittered.fold(-1.0f32, |a, &b| a.max(b)));

    if let Some(dir) = std::env::args().nth(1) {
        dump_dataset(&data, dir.as_ref())?;
        println!("wrote {dir}/<domain>/*.png");
    }
    Ok(())
}
