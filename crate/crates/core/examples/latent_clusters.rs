//! Silhouette scores and t-SNE plots of originals and translation latents.
//!
//! cargo run --release --example latent_clusters -- <checkpoint> <out_dir>

use styleshift::data_pipeline::load_dataset;
use styleshift::evaluation::{latent_cluster_report, TsneConfig};
use styleshift::trainer::load_checkpoint;

fn main() -> styleshift::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: latent_clusters <checkpoint> <out_dir>");
        std::process::exit(2);
    }
    let state = load_checkpoint(args[0].as_ref())?;
    let data = load_dataset(&state.config.dataset)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let out = std::path::Path::new(&args[1]);
    std::fs::create_dir_all(out).map_err(|e| styleshift::Error::io(out, e))?;
    let r = latent_cluster_report(&state.nets, &data, &indices, &TsneConfig::default(), state.config.seed, Some(out))?;
    println!("{} originals, {} cross-domain latents", r.num_originals, r.num_translations);
    println!("silhouette  pixels {:.3}  latents {:.3}", r.pixel_silhouette, r.latent_silhouette);
    println!("t-SNE       pixels {:.3}  latents {:.3}", r.pixel_embedding_silhouette, r.latent_embedding_silhouette);
    for p in &r.plots {
        println!("wrote {}", p.display());
    }
    Ok(())
}
