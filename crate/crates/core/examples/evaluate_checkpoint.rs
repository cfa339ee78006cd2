//! Runs the three classifier settings on a checkpoint's translations.
//!
//! cargo run --release --example evaluate_checkpoint -- <checkpoint> [seed]

use styleshift::data_pipeline::{load_dataset, split_train_test};
use styleshift::evaluation::{run_all_settings, ClassifierConfig, Setting};
use styleshift::trainer::load_checkpoint;

fn main() -> styleshift::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: evaluate_checkpoint <checkpoint> [seed]");
        std::process::exit(2);
    };
    let state = load_checkpoint(path.as_ref())?;
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(state.config.seed);
    let data = load_dataset(&state.config.dataset)?;
    let split = split_train_test(&data, state.config.dataset.test_fraction, state.config.seed)?;
    let report = run_all_settings(&state.nets, &data, &split, &ClassifierConfig::default(), seed)?;

    println!("iteration {}, chance {:.3}", state.iteration, 1.0 / data.num_domains() as f64);
    println!("setting  accuracy  precision  recall  f1      items");
    for s in Setting::ALL {
        let m = report.get(s);
        println!("{:<8} {:.4}    {:.4}     {:.4}  {:.4}  {}", s.to_string(), m.accuracy, m.precision, m.recall, m.f1, m.num_items());
    }
    println!("cc confusion (rows: target, cols: predicted) {:?}", report.cc.confusion_matrix);
    Ok(())
}
