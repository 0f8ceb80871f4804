//! The command-line pipeline end to end, driven through `mimax::cli::run`: synth, train,
//! detect and eval, with a run manifest beside every output.
//!
//! cargo run --release --example cli_pipeline

use mimax::cli::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (feats, model, dets, report) = (p("feats"), p("model.json"), p("dets.jsonl"), p("report"));

    run(["mimax", "synth", "--n-images", "600", "--n-classes", "2", "--test-fraction", "0.25", "--out", &feats])?;
    run(["mimax", "train", "--features", &feats, "--method", "mimax", "--restarts", "4", "--out", &model])?;
    run(["mimax", "detect", "--model", &model, "--features", &feats, "--split", "test", "--out", &dets])?;
    run(["mimax", "eval", "--detections", &dets, "--gt", &format!("{feats}/ground_truth.jsonl"), "--iou", "0.5", "--iou", "0.7", "--out", &report])?;

    let mut names: Vec<_> = std::fs::read_dir(dir.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    println!("outputs: {}", names.join(", "));
    Ok(())
}
