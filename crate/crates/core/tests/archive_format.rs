mod common;

use std::collections::BTreeMap;
use std::fs;

use mimax::archive::{
    read_archive, read_ground_truth, write_archive, write_ground_truth, ArchiveReader, ArchiveSource,
    Split, BLOB_FILE, HEADER_LEN, MANIFEST_FILE,
};
use mimax::eval::GroundTruthBox;
use mimax::trainer::{BagSource, MemorySource};
use mimax::{BoundingBox, Error, FeatureBag, Label, Region};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random archive contents with awkward float values (subnormals, signed zero, extremes).
pub fn random_archive(seed: u64) -> (Vec<FeatureBag>, Vec<Split>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<String> = (0..rng.gen_range(1..4)).map(|c| format!("k{c}")).collect();
    let m = rng.gen_range(1..9);
    let n = rng.gen_range(0..12);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE / 2.0, f32::MAX, -f32::MAX, 1e-30, 3.4e38];
    let bags = (0..n)
        .map(|i| {
            let k = rng.gen_range(1..6);
            let regions = (0..k)
                .map(|_| {
                    let x1: f32 = rng.gen_range(-100.0..100.0);
                    let y1: f32 = rng.gen_range(-100.0..100.0);
                    let bbox = BoundingBox::new(x1, y1, x1 + rng.gen_range(0.01..50.0), y1 + rng.gen_range(0.01..50.0)).unwrap();
                    let f = (0..m)
                        .map(|_| if rng.gen_bool(0.1) { specials[rng.gen_range(0..specials.len())] } else { rng.gen() })
                        .collect();
                    Region::new(bbox, rng.gen_range(0.0..=1.0), f).unwrap()
                })
                .collect();
            let labels: BTreeMap<String, Label> =
                classes.iter().map(|c| (c.clone(), Label::from_bool(rng.gen()))).collect();
            FeatureBag::new(format!("image-{i}"), regions, labels).unwrap()
        })
        .collect::<Vec<_>>();
    let splits = (0..n).map(|_| if rng.gen() { Split::Train } else { Split::Test }).collect();
    (bags, splits, classes)
}

fn bits(bags: &[FeatureBag]) -> Vec<u32> {
    bags.iter()
        .flat_map(|b| b.regions().iter())
        .flat_map(|r| {
            r.bbox().coords().into_iter().chain([r.objectness()]).chain(r.feature().iter().copied()).map(f32::to_bits)
        })
        .collect()
}

#[test]
fn round_trip_is_bit_exact() {
    for seed in 0..100 {
        let (bags, splits, classes) = random_archive(seed);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.milfeat");
        write_archive(&bags, &splits, &classes, &p).unwrap();
        let back = read_archive(&p, None).unwrap();
        assert_eq!(bits(&back), bits(&bags));
        assert_eq!(back, bags);
        let reader = ArchiveReader::open(&p).unwrap();
        for (i, s) in splits.iter().enumerate() {
            assert_eq!(reader.manifest().images[i].split, *s);
        }
    }
}

#[test]
fn truncation_names_the_damaged_image() {
    let (bags, splits, classes) = random_archive(7);
    assert!(bags.len() >= 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.milfeat");
    let manifest = write_archive(&bags, &splits, &classes, &p).unwrap();
    let blob = p.join(BLOB_FILE);
    let full = fs::read(&blob).unwrap();
    for cut in [full.len() - 1, manifest.images.last().unwrap().offset as usize + 2, manifest.images[1].offset as usize + 5] {
        fs::write(&blob, &full[..cut]).unwrap();
        let reader = ArchiveReader::open(&p).unwrap();
        let first_bad = manifest.images.iter().position(|e| {
            let end = e.offset + 4 + u64::from(e.region_count) * mimax::archive::record_len(manifest.feature_dim);
            end > cut as u64
        }).unwrap();
        for i in 0..first_bad {
            reader.read_bag(i).unwrap();
        }
        match reader.read_bag(first_bad) {
            Err(Error::CorruptOffset { image_id, .. }) => assert_eq!(image_id, manifest.images[first_bad].image_id),
            other => panic!("cut {cut}: expected CorruptOffset, got {other:?}"),
        }
    }
    fs::write(&blob, &full[..HEADER_LEN as usize - 1]).unwrap();
    assert!(matches!(ArchiveReader::open(&p), Err(Error::BadMagic(_))));
}

#[test]
fn reordered_offsets_are_rejected() {
    let (bags, splits, classes) = random_archive(7);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.milfeat");
    write_archive(&bags, &splits, &classes, &p).unwrap();
    let mpath = p.join(MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
    let images = m["images"].as_array_mut().unwrap();
    let first = images[0]["offset"].clone();
    images[1]["offset"] = first;
    fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();
    assert!(matches!(ArchiveReader::open(&p), Err(Error::CorruptOffset { .. })));
}

#[test]
fn header_dimension_must_match_manifest() {
    let (bags, splits, classes) = random_archive(3);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.milfeat");
    write_archive(&bags, &splits, &classes, &p).unwrap();
    let blob = p.join(BLOB_FILE);
    let mut bytes = fs::read(&blob).unwrap();
    bytes[8] = bytes[8].wrapping_add(1);
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(ArchiveReader::open(&p), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn streaming_source_matches_memory_source() {
    let (bags, splits, classes) = random_archive(12);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.milfeat");
    write_archive(&bags, &splits, &classes, &p).unwrap();
    for normalize in [false, true] {
        let stream = ArchiveSource::open(&p, Some(Split::Train), normalize).unwrap();
        let train = read_archive(&p, Some(Split::Train)).unwrap();
        let mem = MemorySource::new(&train, normalize).unwrap();
        assert_eq!(stream.len(), mem.len());
        let idx: Vec<usize> = (0..mem.len()).rev().collect();
        let mut a = Vec::new();
        let mut b = Vec::new();
        stream.visit(&idx, &mut |i, v| a.push((i, v.features.to_owned(), v.objectness.to_vec()))).unwrap();
        mem.visit(&idx, &mut |i, v| b.push((i, v.features.to_owned(), v.objectness.to_vec()))).unwrap();
        assert_eq!(a, b);
        for i in 0..mem.len() {
            assert_eq!(stream.image_id(i), mem.image_id(i));
            assert_eq!(stream.label(i, &classes[0]).unwrap(), mem.label(i, &classes[0]).unwrap());
        }
    }
}

#[test]
fn ground_truth_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gts: Vec<GroundTruthBox> = (0..50)
        .map(|i| GroundTruthBox::new(format!("i{}", i % 7), "c", common::random_box(&mut rng), rng.gen_bool(0.3)))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gt.jsonl");
    write_ground_truth(&p, &gts).unwrap();
    assert_eq!(read_ground_truth(&p).unwrap(), gts);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_filters_partition_the_archive(seed in any::<u64>()) {
        let (bags, splits, classes) = random_archive(seed);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.milfeat");
        write_archive(&bags, &splits, &classes, &p).unwrap();
        let train = read_archive(&p, Some(Split::Train)).unwrap();
        let test = read_archive(&p, Some(Split::Test)).unwrap();
        prop_assert_eq!(train.len() + test.len(), bags.len());
        let expect_train: Vec<FeatureBag> = bags.iter().zip(&splits).filter(|(_, s)| **s == Split::Train).map(|(b, _)| b.clone()).collect();
        prop_assert_eq!(train, expect_train);
    }
}
