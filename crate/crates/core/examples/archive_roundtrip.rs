//! Write bags to the on-disk feature archive, read them back bit for bit, train straight
//! from disk, then truncate the blob and watch the reader name the broken image.
//!
//! cargo run --release --example archive_roundtrip

use std::fs::OpenOptions;

use mimax::archive::{read_archive, write_archive, ArchiveReader, ArchiveSource, BLOB_FILE};
use mimax::synth::{generate, SynthConfig};
use mimax::trainer::train_classes;
use mimax::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate(&SynthConfig {
        n_images: 400,
        ..SynthConfig::default()
    })?;
    let dir = std::env::temp_dir().join(format!("mimax-archive-{}", std::process::id()));
    let manifest = write_archive(&ds.bags, &ds.splits, &ds.class_names, &dir)?;
    println!(
        "{}: {} images, dim {}, classes {:?}",
        dir.display(),
        manifest.images.len(),
        manifest.feature_dim,
        manifest.class_names
    );

    let back = read_archive(&dir, None)?;
    println!("round trip identical: {}", back == ds.bags);

    let source = ArchiveSource::open(&dir, None, false)?;
    let cfg = TrainConfig {
        restarts: 4,
        ..TrainConfig::default()
    };
    for (scorer, record) in train_classes(&source, &ds.class_names, &cfg)? {
        println!(
            "streamed training of {}: restart {} chosen, data loss {:.4}",
            scorer.class_name(),
            record.chosen_restart,
            record.restarts[record.chosen_restart].data_loss
        );
    }

    let blob = dir.join(BLOB_FILE);
    let len = std::fs::metadata(&blob)?.len();
    OpenOptions::new().write(true).open(&blob)?.set_len(len * 2 / 3)?;
    let reader = ArchiveReader::open(&dir)?;
    match reader.iter(None).find_map(|r| r.err()) {
        Some(e) => println!("after truncation: {e}"),
        None => println!("after truncation: no error?"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
