//! MI-max-C: pick the regularization constant on a held-out split of the training bags.
//!
//! cargo run --release --example grid_search_c

use mimax::synth::{generate, SynthConfig};
use mimax::trainer::grid_search_c;
use mimax::TrainConfig;

fn main() -> mimax::Result<()> {
    let ds = generate(&SynthConfig {
        n_images: 1000,
        noise_std: 1.5,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        restarts: 4,
        ..TrainConfig::default()
    };
    let (scorer, record) = grid_search_c(&ds.bags, "concept", &cfg)?;
    println!("     C   validation data term");
    for v in &record.validation {
        println!("{:>6} {:>12.5}", v.c, v.validation_loss);
    }
    println!(
        "chosen C = {:?}, ||w|| = {:.3}, method {}",
        record.chosen_c,
        scorer.w().iter().map(|v| v * v).sum::<f64>().sqrt(),
        scorer.method()
    );
    Ok(())
}
