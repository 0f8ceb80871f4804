//! Plant a concept direction in synthetic bags, train MI-max with restarts and check that
//! the learned detector points the same way and localizes the planted regions.
//!
//! cargo run --release --example train_planted

use mimax::archive::Split;
use mimax::eval::{evaluate, EvalConfig};
use mimax::synth::{generate, SynthConfig};
use mimax::trainer::train_restarts;
use mimax::TrainConfig;

fn main() -> mimax::Result<()> {
    let ds = generate(&SynthConfig {
        n_images: 2500,
        test_fraction: 0.2,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let train = ds.split(Split::Train);
    let test = ds.split(Split::Test);

    let (scorer, record) = train_restarts(&train, "concept", &TrainConfig::default(), 0.0)?;
    println!("restart  seed  data loss   regularized");
    for (r, o) in record.restarts.iter().enumerate() {
        let mark = if r == record.chosen_restart { "*" } else { " " };
        println!("{mark}{r:>6} {:>5} {:>10.5} {:>12.5}", o.seed, o.data_loss, o.regularized_loss);
    }

    let planted = &ds.planted[0];
    println!("cosine(learned w, planted w) = {:.4}", cosine(scorer.w(), planted.w()));

    let report = evaluate(
        &[scorer],
        &test,
        &ds.ground_truth_for(Split::Test),
        &EvalConfig::default(),
        &[0.7],
    )?;
    print!("{}", report.render_table());
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
