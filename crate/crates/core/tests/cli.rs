use std::fs;
use std::path::Path;

use mimax::archive::{read_archive, DetectionsDocument, GROUND_TRUTH_FILE};
use mimax::cli::{manifest_path, run, ModelFile, RunManifest};
use mimax::{Error, LinearScorer, Method};

fn mimax(args: &[&str]) -> mimax::Result<()> {
    run(std::iter::once("mimax").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join("s.milfeat");
    let mut args = vec!["synth", "--out", s(&out), "--n-images", "300", "--k-regions", "12", "--feature-dim", "16", "--test-fraction", "0.3"];
    args.extend_from_slice(extra);
    mimax(&args).unwrap();
    out
}

#[test]
fn synth_is_deterministic_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), &["--objectness", "adversarial"]);
    let first = fs::read(a.join("features.bin")).unwrap();
    let manifest = RunManifest::read(&manifest_path(&a)).unwrap();
    assert_eq!(manifest.config["objectness_mode"], "adversarial");
    let a = synth(dir.path(), &["--objectness", "adversarial"]);
    assert_eq!(fs::read(a.join("features.bin")).unwrap(), first);
    assert_eq!(read_archive(&a, None).unwrap().len(), 300);
}

#[test]
fn train_detect_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let arch = synth(dir.path(), &["--planted-model", s(&dir.path().join("planted.json"))]);
    let model = dir.path().join("m.json");
    mimax(&["train", "--features", s(&arch), "--class", "concept", "--restarts", "3", "--iters", "100", "--lr", "0.01", "--eps", "0.01", "--out", s(&model)]).unwrap();
    let m = ModelFile::read(&model).unwrap();
    assert_eq!(m.scorers.len(), 1);
    assert_eq!(m.records.len(), 1);
    let run_manifest = RunManifest::read(&manifest_path(&model)).unwrap();
    assert_eq!(run_manifest.seeds, vec![0, 1, 2]);
    assert!(run_manifest.inputs.iter().all(|d| d.sha256.len() == 64));

    let dets = dir.path().join("d.jsonl");
    mimax(&["detect", "--model", s(&model), "--features", s(&arch), "--split", "test", "--out", s(&dets)]).unwrap();
    let detect_manifest = RunManifest::read(&manifest_path(&dets)).unwrap();
    assert_eq!(detect_manifest.config["eval"]["nms_iou"], 0.3);
    assert_eq!(detect_manifest.config["eval"]["confidence_threshold"], 0.05);

    let gt = arch.join(GROUND_TRUTH_FILE);
    let rep = dir.path().join("rep");
    mimax(&["eval", "--detections", s(&dets), "--gt", s(&gt), "--iou", "0.5", "--iou", "0.1", "--out", s(&rep)]).unwrap();
    let table = fs::read_to_string(dir.path().join("rep.txt")).unwrap();
    assert!(table.contains("AP@0.5") && table.contains("AP@0.1"));
    let json1 = fs::read(dir.path().join("rep.json")).unwrap();
    mimax(&["eval", "--detections", s(&dets), "--gt", s(&gt), "--iou", "0.5", "--iou", "0.1", "--out", s(&rep)]).unwrap();
    assert_eq!(fs::read(dir.path().join("rep.json")).unwrap(), json1);

    // planted scorer: every detection lands exactly on a planted box
    let pdets = dir.path().join("p.jsonl");
    mimax(&["detect", "--model", s(&dir.path().join("planted.json")), "--features", s(&arch), "--out", s(&pdets)]).unwrap();
    let doc = DetectionsDocument::read(&pdets).unwrap();
    let gts = mimax::archive::read_ground_truth(&gt).unwrap();
    assert_eq!(doc.detections.len(), gts.len());
    for d in &doc.detections {
        assert!(gts.iter().any(|g| g.image_id() == d.image_id() && mimax::eval::iou(g.bbox(), d.bbox()) == 1.0));
    }
    let prep = dir.path().join("prep");
    let table = mimax::cli::cmd_eval(
        &mimax::cli::EvalArgs {
            detections: pdets,
            gt: Some(gt),
            ious: vec![],
            ap_style: mimax::cli::ApStyleArg::ElevenPoint,
            out: prep.clone(),
        },
        &[],
    )
    .unwrap();
    assert!(table.contains("100.0"), "{table}");
}

#[test]
fn baselines_train_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let arch = synth(dir.path(), &[]);
    for (method, expect) in [("max", Method::Max), ("misvm", Method::MiSvm)] {
        let model = dir.path().join(format!("{method}.json"));
        mimax(&["train", "--features", s(&arch), "--method", method, "--svm-iters", "50", "--out", s(&model)]).unwrap();
        assert_eq!(ModelFile::read(&model).unwrap().scorers[0].method(), expect);
    }
    let model = dir.path().join("c.json");
    mimax(&["train", "--features", s(&arch), "--grid-c", "--c-grid", "0,0.1", "--restarts", "2", "--iters", "30", "--out", s(&model)]).unwrap();
    assert_eq!(ModelFile::read(&model).unwrap().scorers[0].method(), Method::MiMaxC);
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let arch = synth(dir.path(), &[]);
    let out = dir.path().join("x.json");
    match mimax(&["train", "--features", s(&arch), "--class", "dog", "--out", s(&out)]) {
        Err(e @ Error::UnknownClass { .. }) => assert!(e.to_string().contains("concept")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        mimax(&["train", "--features", s(&arch), "--restarts", "0", "--out", s(&out)]),
        Err(Error::InvalidConfig(_))
    ));
    assert!(!out.exists());

    let wrong = dir.path().join("wrong.json");
    let scorer = LinearScorer::new("concept", Method::MiMax, vec![0.0; 3], 0.0, 0.01, 0.0, 0).unwrap();
    ModelFile::new(vec![scorer], vec![]).write(&wrong).unwrap();
    assert!(matches!(
        mimax(&["detect", "--model", s(&wrong), "--features", s(&arch), "--out", s(&dir.path().join("d"))]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn zero_model_detects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let arch = synth(dir.path(), &[]);
    let zero = dir.path().join("zero.json");
    let scorer = LinearScorer::new("concept", Method::MiMax, vec![0.0; 16], 0.0, 0.01, 0.0, 0).unwrap();
    ModelFile::new(vec![scorer], vec![]).write(&zero).unwrap();
    let dets = dir.path().join("d.jsonl");
    mimax(&["detect", "--model", s(&zero), "--features", s(&arch), "--out", s(&dets)]).unwrap();
    assert!(DetectionsDocument::read(&dets).unwrap().detections.is_empty());
}

#[test]
fn eval_without_ground_truth_marks_ap_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let arch = synth(dir.path(), &["--planted-model", s(&dir.path().join("p.json"))]);
    let dets = dir.path().join("d.jsonl");
    mimax(&["detect", "--model", s(&dir.path().join("p.json")), "--features", s(&arch), "--out", s(&dets)]).unwrap();
    let rep = dir.path().join("r");
    mimax(&["eval", "--detections", s(&dets), "--out", s(&rep)]).unwrap();
    let table = fs::read_to_string(dir.path().join("r.txt")).unwrap();
    assert!(table.contains("n/a"), "{table}");
}

#[test]
fn tiny_bench_is_fast_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let args = mimax::cli::BenchArgs {
        features: None,
        paper_scale: false,
        n_images: 10,
        k_regions: 5,
        feature_dim: 8,
        n_classes: 2,
        restarts: 2,
        iters: 20,
        batch_size: 1000,
        seed: 0,
        stream: true,
        workdir: Some(dir.path().join("bench.milfeat")),
        out: None,
    };
    let t = std::time::Instant::now();
    let a = mimax::cli::cmd_bench(&args, &[]).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let b = mimax::cli::cmd_bench(&args, &[]).unwrap();
    assert_eq!((a.iterations, a.n_images, a.streamed), (b.iterations, b.n_images, b.streamed));
}
