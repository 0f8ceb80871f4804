//! MI-max against the MAX and MI-SVM baselines on synthetic data whose highest-objectness
//! region is never the object.
//!
//! cargo run --release --example compare_baselines [-- informative|uniform|adversarial]

use std::time::Instant;

use mimax::archive::Split;
use mimax::baselines::{train_max_baseline, train_mi_svm, SvmConfig};
use mimax::eval::{evaluate, EvalConfig};
use mimax::synth::{generate, ObjectnessMode, SynthConfig};
use mimax::trainer::train_restarts;
use mimax::{LinearScorer, TrainConfig};

fn main() -> mimax::Result<()> {
    let mode: ObjectnessMode = std::env::args().nth(1).as_deref().unwrap_or("adversarial").parse()?;
    let ds = generate(&SynthConfig {
        n_images: 2500,
        test_fraction: 0.2,
        objectness_mode: mode,
        ..SynthConfig::default()
    })?;
    let train = ds.split(Split::Train);
    let test = ds.split(Split::Test);
    let gts = ds.ground_truth_for(Split::Test);

    let t = Instant::now();
    let (mimax, _) = train_restarts(&train, "concept", &TrainConfig::default(), 0.0)?;
    let mimax_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (max, max_rec) = train_max_baseline(&train, "concept", &SvmConfig::default())?;
    let max_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (misvm, rec) = train_mi_svm(&train, "concept", &SvmConfig::default(), 50)?;
    let misvm_secs = t.elapsed().as_secs_f64();

    println!("objectness mode: {mode:?}");
    println!("MAX picked hinge weight {}", max_rec.chosen_weight);
    println!(
        "MI-SVM: {} reselection rounds, converged {}, changes per round {:?}",
        rec.iterations,
        rec.converged,
        rec.steps.iter().skip(1).map(|s| s.changed).collect::<Vec<_>>()
    );
    println!("{:<8} {:>8} {:>8} {:>8}", "method", "AP@0.5", "cls-AP", "train s");
    for (name, s, secs) in [("mi-max", &mimax, mimax_secs), ("max", &max, max_secs), ("mi-svm", &misvm, misvm_secs)] {
        let (ap, cls) = score(s, &test, &gts)?;
        println!("{name:<8} {:>8.1} {:>8.1} {secs:>8.2}", 100.0 * ap, 100.0 * cls);
    }
    Ok(())
}

fn score(s: &LinearScorer, test: &[mimax::FeatureBag], gts: &[mimax::eval::GroundTruthBox]) -> mimax::Result<(f64, f64)> {
    let report = evaluate(std::slice::from_ref(s), test, gts, &EvalConfig::default(), &[])?;
    let c = &report.classes[0];
    Ok((c.ap[0].unwrap_or(0.0), c.classification_ap.unwrap_or(0.0)))
}
