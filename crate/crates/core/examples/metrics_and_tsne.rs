//! Confusion-matrix metrics on a hand example and t-SNE on Gaussian blobs.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use styleshift::evaluation::{compute_metrics, silhouette_score, tsne_embed, TsneConfig};

fn main() -> styleshift::Result<()> {
    // every item predicted as class 0, three items per class
    let truths = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let m = compute_metrics(&[0; 9], &truths, 3)?;
    println!("all-zero predictions: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}", m.accuracy, m.precision, m.recall, m.f1);
    println!("confusion {:?}", m.confusion_matrix);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (per, dim) = (40, 10);
    let mut x = Array2::<f64>::zeros((3 * per, dim));
    let mut labels = Vec::new();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let c = i / per;
        labels.push(c);
        row.iter_mut().enumerate().for_each(|(j, v)| *v = if j == c { 4.0 } else { 0.0 } + noise.sample(&mut rng));
    }
    let y = tsne_embed(x.view(), &TsneConfig { perplexity: 15.0, ..Default::default() }, 0)?;
    println!("silhouette: input {:.3}, embedding {:.3}", silhouette_score(x.view(), &labels)?, silhouette_score(y.view(), &labels)?);
    Ok(())
}
