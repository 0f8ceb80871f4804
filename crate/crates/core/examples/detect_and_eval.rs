//! Train one detector per class on a multi-class synthetic set, run thresholded detection
//! with NMS, save the detections document and score it at several IoU thresholds in both
//! AP styles.
//!
//! cargo run --release --example detect_and_eval

use mimax::archive::{DetectionsDocument, Split};
use mimax::eval::{evaluate_detections, run_detection, ApStyle, EvalConfig};
use mimax::synth::{generate, SynthConfig};
use mimax::trainer::{train_classes, MemorySource};
use mimax::TrainConfig;

fn main() -> mimax::Result<()> {
    let ds = generate(&SynthConfig {
        n_images: 1500,
        n_classes: 3,
        test_fraction: 0.3,
        ..SynthConfig::default()
    })?;
    let train = ds.split(Split::Train);
    let test = ds.split(Split::Test);

    let source = MemorySource::new(&train, false)?;
    let scorers: Vec<_> = train_classes(&source, &ds.class_names, &TrainConfig::default())?
        .into_iter()
        .map(|(s, _)| s)
        .collect();

    let cfg = EvalConfig::default();
    let (detections, images) = run_detection(&scorers, &test, &cfg)?;
    println!("{} detections over {} test images after NMS", detections.len(), test.len());

    let doc = DetectionsDocument { detections, images };
    let path = std::env::temp_dir().join("mimax-detect-and-eval.jsonl");
    doc.write(&path)?;
    let doc = DetectionsDocument::read(&path)?;
    println!("wrote and re-read {}", path.display());

    let gts = ds.ground_truth_for(Split::Test);
    for style in [ApStyle::ElevenPoint, ApStyle::AllPoints] {
        let report = evaluate_detections(
            &doc.class_names(),
            &doc.detections,
            &doc.images,
            &gts,
            &EvalConfig { ap_style: style, ..cfg },
            &[0.3, 0.5, 0.7],
        )?;
        println!("\n{style:?}");
        print!("{}", report.render_table());
    }
    Ok(())
}
