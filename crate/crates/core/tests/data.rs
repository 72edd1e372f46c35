use std::fs;

use ujscc_core::data::{
    batches, load_cifar10, load_cifar_files, parse_cifar_records, split_train_val, synthetic_dataset, to_cifar_bytes,
    Split, RECORD_BYTES, TEST_FILE, TRAIN_FILES,
};
use ujscc_core::nn::SeededRng;
use ujscc_core::Error;

fn fake_records(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(n * RECORD_BYTES);
    for _ in 0..n {
        out.push(rng.index(10) as u8);
        out.extend((0..RECORD_BYTES - 1).map(|_| rng.index(256) as u8));
    }
    out
}

#[test]
fn byte_mapping_endpoints() {
    let mut rec = vec![3u8];
    rec.extend(std::iter::repeat_n(0, 1536));
    rec.extend(std::iter::repeat_n(255, 1536));
    let (px, labels) = parse_cifar_records(&rec, "mem".as_ref()).unwrap();
    assert_eq!(labels, vec![3]);
    assert_eq!(px[0], -1.0);
    assert!((px[3071] - 1.0).abs() <= 1.0 / 255.0);
}

#[test]
fn loads_directory_and_round_trips_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = Vec::new();
    for (i, f) in TRAIN_FILES.iter().enumerate() {
        let bytes = fake_records(3, i as u64);
        fs::write(dir.path().join(f), &bytes).unwrap();
        all.extend(bytes);
    }
    let test = fake_records(2, 99);
    fs::write(dir.path().join(TEST_FILE), &test).unwrap();

    let train = load_cifar10(dir.path(), Split::Train).unwrap();
    assert_eq!(train.len(), 15);
    assert_eq!(to_cifar_bytes(&train), all);
    let t = load_cifar10(dir.path(), Split::Test).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(to_cifar_bytes(&t), test);
}

#[test]
fn truncated_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.bin");
    let mut bytes = fake_records(2, 1);
    bytes.truncate(RECORD_BYTES + 100);
    fs::write(&path, &bytes).unwrap();
    match load_cifar_files(&[path], Split::Train) {
        Err(Error::Malformed { offset, .. }) => assert_eq!(offset, RECORD_BYTES as u64),
        other => panic!("expected Malformed, got {other:?}"),
    }
    let missing = load_cifar_files(&[dir.path().join("nope.bin")], Split::Train);
    assert!(matches!(missing, Err(Error::Io { .. })));
}

#[test]
fn split_is_disjoint_exhaustive_and_seeded() {
    let ds = synthetic_dataset(50, 1).unwrap();
    let (train, val) = split_train_val(&ds, 0.2, 7).unwrap();
    assert_eq!((train.len(), val.len()), (40, 10));
    // Images are distinct, so they identify their source index.
    let mut seen: Vec<&[f64]> = train.images.data().chunks(3072).chain(val.images.data().chunks(3072)).collect();
    seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut orig: Vec<&[f64]> = ds.images.data().chunks(3072).collect();
    orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(seen, orig);
    assert_eq!(split_train_val(&ds, 0.2, 7).unwrap().1, val);
}

#[test]
fn batches_cover_each_image_once() {
    let ds = synthetic_dataset(10, 2).unwrap();
    let b0 = batches(&ds, 4, 5, 0);
    let mut order = b0.order().to_vec();
    let sizes: Vec<usize> = b0.map(|t| t.dim(0)).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    order.sort_unstable();
    assert_eq!(order, (0..10).collect::<Vec<_>>());
    assert_eq!(batches(&ds, 4, 5, 0).order(), batches(&ds, 4, 5, 0).order());
    assert_ne!(batches(&ds, 4, 5, 0).order(), batches(&ds, 4, 5, 1).order());
}
