//! End-to-end checks of the data, checkpoint and config plumbing.

use std::path::Path;

use faultnas_core::harness::checkpoint::{load_model, save_model, ModelMeta};
use faultnas_core::harness::dataset::{DatasetKind, CIFAR_MEAN, CIFAR_STD};
use faultnas_core::*;
use sha2::{Digest, Sha256};

const RECORD: usize = 3073;

fn write_batch(dir: &Path, name: &str, records: usize, rng: &mut RngStream) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(records * RECORD);
    for _ in 0..records {
        bytes.push(rng.below(10) as u8);
        bytes.extend((0..RECORD - 1).map(|_| rng.below(256) as u8));
    }
    std::fs::write(dir.join(name), &bytes).unwrap();
    bytes
}

fn cifar_dir() -> (tempfile::TempDir, Vec<u8>, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(7);
    let mut train = Vec::new();
    for i in 1..=5 {
        train.extend(write_batch(dir.path(), &format!("data_batch_{i}.bin"), 2, &mut rng));
    }
    let test = write_batch(dir.path(), "test_batch.bin", 3, &mut rng);
    (dir, train, test)
}

fn cifar_spec(root: &Path, size: usize) -> DatasetSpec {
    DatasetSpec {
        kind: DatasetKind::Cifar10Binary,
        root: Some(root.to_path_buf()),
        classes: 10,
        image: [3, size, size],
        ..DatasetSpec::default()
    }
}

/// Decode record bytes the way the format is laid out: a label byte, then
/// 1024 bytes per channel in R, G, B order, rows top to bottom.
fn oracle(bytes: &[u8]) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for rec in bytes.chunks(RECORD) {
        labels.push(rec[0] as usize);
        for ch in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let b = rec[1 + ch * 1024 + y * 32 + x];
                    pixels.push((b as f64 / 255.0 - CIFAR_MEAN[ch]) / CIFAR_STD[ch]);
                }
            }
        }
    }
    (labels, pixels)
}

#[test]
fn cifar_binary_loads_bit_exact() {
    let (dir, train, test) = cifar_dir();
    let d = load_dataset(&cifar_spec(dir.path(), 32)).unwrap();
    for (set, bytes) in [(&d.train, &train), (&d.test, &test)] {
        let (labels, pixels) = oracle(bytes);
        assert_eq!(set.labels, labels);
        assert_eq!(set.images.shape(), &[labels.len(), 3, 32, 32]);
        assert_eq!(set.images.data(), pixels.as_slice());
    }
}

#[test]
fn cifar_downsampling_averages_blocks() {
    let (dir, _, test) = cifar_dir();
    let d = load_dataset(&cifar_spec(dir.path(), 16)).unwrap();
    let (_, full) = oracle(&test);
    let at = |n: usize, c: usize, y: usize, x: usize| full[((n * 3 + c) * 32 + y) * 32 + x];
    for n in 0..3 {
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let want =
                        (at(n, c, 2 * y, 2 * x) + at(n, c, 2 * y, 2 * x + 1) + at(n, c, 2 * y + 1, 2 * x) + at(n, c, 2 * y + 1, 2 * x + 1))
                            / 4.0;
                    let got = d.test.images.data()[((n * 3 + c) * 16 + y) * 16 + x];
                    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn cifar_checksums_are_enforced() {
    let (dir, _, test) = cifar_dir();
    let mut spec = cifar_spec(dir.path(), 32);
    spec.sha256.insert("test_batch.bin".into(), hex::encode(Sha256::digest(&test)));
    assert!(load_dataset(&spec).is_ok());
    spec.sha256.insert("test_batch.bin".into(), "00".repeat(32));
    assert!(matches!(load_dataset(&spec), Err(Error::Dataset { .. })));
    std::fs::write(dir.path().join("data_batch_3.bin"), vec![0u8; RECORD + 1]).unwrap();
    assert!(load_dataset(&cifar_spec(dir.path(), 32)).is_err());
}

#[test]
fn checkpointed_model_evaluates_identically() {
    let mut cfg = RunConfig::preset(Profile::Desk);
    cfg.dataset.train_size = 128;
    cfg.dataset.test_size = 64;
    cfg.dataset.image = [3, 8, 8];
    cfg.train.epochs = 1;
    let data = load_dataset(&cfg.dataset).unwrap();
    let mut model = Model::build(&cfg.model, 3, data.train.classes, 5).unwrap();
    ftt_train(&mut model, &data.train, &cfg.train, 5).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let meta = ModelMeta {
        arch: cfg.model.clone(),
        in_channels: 3,
        classes: data.train.classes,
        input: [3, 8, 8],
        config_hash: Some(cfg.hash().unwrap()),
        seed: 5,
    };
    save_model(&path, &model, &meta).unwrap();
    let (loaded, meta2) = load_model(&path).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(loaded.store, model.store);

    let fault = FaultModelSpec::Mibb { p_m: 1e-3 };
    let stream = RngStream::new(9);
    let a = evaluate(&model.arch, &model.store, &data.test, &fault, &cfg.eval, &stream).unwrap();
    let b = evaluate(&loaded.arch, &loaded.store, &data.test, &fault, &cfg.eval, &stream).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn resolved_config_round_trips() {
    for profile in [Profile::Desk, Profile::Full] {
        let cfg = RunConfig::preset(profile);
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, None).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(back.to_toml().unwrap(), text);
    }
}
