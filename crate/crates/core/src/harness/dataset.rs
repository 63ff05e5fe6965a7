//! In-memory image datasets: the CIFAR-10 binary format and two seeded
//! synthetic generators for desk-scale runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10Binary,
    SyntheticBlobs,
    MnistLike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Augment {
    pub flip: bool,
    /// Zero-pad by this many pixels and crop back at a random offset.
    pub crop_pad: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory with `data_batch_{1..5}.bin` and `test_batch.bin`.
    pub root: Option<PathBuf>,
    /// Expected SHA-256 per file name.
    pub sha256: BTreeMap<String, String>,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// `[channels, height, width]` of generated or resized images.
    pub image: [usize; 3],
    pub noise: f64,
    /// Fraction of the training data used for weight training during search.
    pub split: f64,
    pub augment: Augment,
    /// Keep only the first `limit` training and test records.
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::SyntheticBlobs,
            root: None,
            sha256: BTreeMap::new(),
            classes: 4,
            train_size: 1000,
            test_size: 500,
            image: [3, 8, 8],
            noise: 0.5,
            split: 0.8,
            augment: Augment::default(),
            limit: None,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let classes = if self.kind == DatasetKind::Cifar10Binary { 10 } else { self.classes };
        if classes < 2 {
            return Err(Error::Config("a dataset needs at least two classes".into()));
        }
        if !(0.0 < self.split && self.split < 1.0) {
            return Err(Error::Config(format!("split {} must lie in (0, 1)", self.split)));
        }
        if self.image.contains(&0) {
            return Err(Error::Config("image extents must be positive".into()));
        }
        if self.kind == DatasetKind::Cifar10Binary && self.root.is_none() {
            return Err(Error::Config("cifar10-binary needs a root directory".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, c, h, w]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(format!("{} labels for images {:?}", labels.len(), images.shape())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self { images: self.images.select_rows(idx)?, labels: idx.iter().map(|&i| self.labels[i]).collect(), classes: self.classes })
    }

    /// Deterministic split into `(first, rest)` with `frac` of the samples
    /// in the first part.
    pub fn split(&self, frac: f64, seed: u64) -> Result<(Self, Self)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        RngStream::new(seed).derive_str("split").shuffle(&mut idx);
        let cut = ((self.len() as f64) * frac).round() as usize;
        Ok((self.subset(&idx[..cut])?, self.subset(&idx[cut..])?))
    }

    /// Index batches; shuffled when a stream is given.
    pub fn batches(&self, batch_size: usize, shuffle: Option<&mut RngStream>) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = shuffle {
            rng.shuffle(&mut idx);
        }
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    pub fn batch(&self, idx: &[usize], augment: Augment, rng: &mut RngStream) -> Result<(Tensor, Vec<usize>)> {
        let mut x = self.images.select_rows(idx)?;
        if augment.flip || augment.crop_pad > 0 {
            apply_augment(&mut x, augment, rng);
        }
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

fn apply_augment(x: &mut Tensor, aug: Augment, rng: &mut RngStream) {
    let s = x.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let data = x.data_mut();
    let p = aug.crop_pad as isize;
    for i in 0..n {
        let flip = aug.flip && rng.bernoulli(0.5);
        let (dy, dx) =
            if p > 0 { (rng.below(2 * p as usize + 1) as isize - p, rng.below(2 * p as usize + 1) as isize - p) } else { (0, 0) };
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            let src: Vec<f64> = data[base..base + h * w].to_vec();
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = if flip { (w - 1 - xx) as isize } else { xx as isize };
                    let sx = sx0 + dx;
                    data[base + y * w + xx] =
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize { src[sy as usize * w + sx as usize] } else { 0.0 };
                }
            }
        }
    }
}

/// Raw CIFAR-10 records: labels and `[n, 3072]` pixel bytes in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecords {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

pub fn parse_cifar(bytes: &[u8], origin: &Path) -> Result<CifarRecords> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Dataset {
            path: origin.to_path_buf(),
            reason: format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Dataset { path: origin.to_path_buf(), reason: format!("record {i} has label {}", rec[0]) });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(CifarRecords { labels, pixels })
}

pub fn read_cifar_file(path: &Path, expected_sha256: Option<&str>) -> Result<CifarRecords> {
    let bytes = std::fs::read(path).map_err(|e| Error::Dataset { path: path.to_path_buf(), reason: e.to_string() })?;
    if let Some(want) = expected_sha256 {
        let got = hex::encode(Sha256::digest(&bytes));
        if !got.eq_ignore_ascii_case(want) {
            return Err(Error::Dataset { path: path.to_path_buf(), reason: format!("checksum {got} != {want}") });
        }
    }
    parse_cifar(&bytes, path)
}

/// Per-channel normalized `[n, 3, 32, 32]` images, optionally box-downsampled
/// to `size × size`.
pub fn cifar_tensor(rec: &CifarRecords, size: usize) -> Result<Dataset> {
    let n = rec.labels.len();
    let mut data = Vec::with_capacity(rec.pixels.len());
    for i in 0..n {
        for ch in 0..3 {
            let plane = &rec.pixels[i * CIFAR_PIXELS + ch * 1024..][..1024];
            data.extend(plane.iter().map(|&b| (f64::from(b) / 255.0 - CIFAR_MEAN[ch]) / CIFAR_STD[ch]));
        }
    }
    let mut images = Tensor::new(vec![n, 3, 32, 32], data)?;
    if size != 32 {
        if size == 0 || 32 % size != 0 {
            return Err(Error::Config(format!("cannot box-downsample 32 to {size}")));
        }
        images = downsample(&images, 32 / size)?;
    }
    Dataset::new(images, rec.labels.iter().map(|&l| usize::from(l)).collect(), 10)
}

fn downsample(x: &Tensor, f: usize) -> Result<Tensor> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0; n * c * oh * ow];
    let scale = 1.0 / (f * f) as f64;
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        acc += x.data()[p * h * w + (y * f + dy) * w + xx * f + dx];
                    }
                }
                out[p * oh * ow + y * ow + xx] = acc * scale;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Each class is a fixed sum of Gaussian bumps with random signs per channel;
/// samples add amplitude jitter, a one-pixel shift and white noise.
pub fn synthetic_blobs(classes: usize, n: usize, image: [usize; 3], noise: f64, seed: u64, sample_stream: &str) -> Result<Dataset> {
    let [c, h, w] = image;
    let mut trng = RngStream::new(seed).derive_str("blob-templates");
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut t = vec![0.0; c * h * w];
            for _ in 0..3 {
                let cy = trng.uniform() * h as f64;
                let cx = trng.uniform() * w as f64;
                let s = 0.8 + trng.uniform() * (h.min(w) as f64) / 4.0;
                let amps: Vec<f64> = (0..c).map(|_| trng.normal()).collect();
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            t[(ch * h + y) * w + x] += amps[ch] * (-d2 / (2.0 * s * s)).exp();
                        }
                    }
                }
            }
            t
        })
        .collect();
    let mut rng = RngStream::new(seed).derive_str(sample_stream);
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let amp = 1.0 + 0.2 * rng.normal();
        let (dy, dx) = (rng.below(3) as isize - 1, rng.below(3) as isize - 1);
        let t = &templates[label];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (y as isize - dy, x as isize - dx);
                    let v = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        t[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                    data.push(amp * v + noise * rng.normal());
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, classes)
}

/// Single-channel stroke glyphs: each class owns three line segments; samples
/// jitter the endpoints, shift the glyph and add noise.
pub fn mnist_like(classes: usize, n: usize, size: usize, noise: f64, seed: u64, sample_stream: &str) -> Result<Dataset> {
    let mut trng = RngStream::new(seed).derive_str("glyph-templates");
    let glyphs: Vec<Vec<[f64; 4]>> = (0..classes)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let m = size as f64;
                    [trng.uniform() * m, trng.uniform() * m, trng.uniform() * m, trng.uniform() * m]
                })
                .collect()
        })
        .collect();
    let mut rng = RngStream::new(seed).derive_str(sample_stream);
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let jitter = size as f64 / 14.0;
    for i in 0..n {
        let label = i % classes;
        let mut img = vec![0.0; size * size];
        let (oy, ox) = (rng.normal() * jitter, rng.normal() * jitter);
        for seg in &glyphs[label] {
            let p: Vec<f64> = seg.iter().map(|v| v + rng.normal() * jitter * 0.5).collect();
            let steps = (4 * size).max(8);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let y = p[0] + t * (p[2] - p[0]) + oy;
                let x = p[1] + t * (p[3] - p[1]) + ox;
                let (yi, xi) = (y.round() as isize, x.round() as isize);
                if yi >= 0 && yi < size as isize && xi >= 0 && xi < size as isize {
                    img[yi as usize * size + xi as usize] = 1.0;
                }
            }
        }
        data.extend(img.into_iter().map(|v| v + noise * rng.normal()));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 1, size, size], data)?, labels, classes)
}

/// Load the training and test sets described by `spec`.
pub fn load_dataset(spec: &DatasetSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let (mut train, mut test) = match spec.kind {
        DatasetKind::SyntheticBlobs => (
            synthetic_blobs(spec.classes, spec.train_size, spec.image, spec.noise, spec.seed, "train")?,
            synthetic_blobs(spec.classes, spec.test_size, spec.image, spec.noise, spec.seed, "test")?,
        ),
        DatasetKind::MnistLike => {
            let size = spec.image[1];
            (
                mnist_like(spec.classes, spec.train_size, size, spec.noise, spec.seed, "train")?,
                mnist_like(spec.classes, spec.test_size, size, spec.noise, spec.seed, "test")?,
            )
        }
        DatasetKind::Cifar10Binary => {
            let root = spec.root.as_ref().ok_or_else(|| Error::Config("cifar10-binary needs a root".into()))?;
            let read = |name: &str| read_cifar_file(&root.join(name), spec.sha256.get(name).map(String::as_str));
            let mut train = CifarRecords { labels: Vec::new(), pixels: Vec::new() };
            for i in 1..=5 {
                let r = read(&format!("data_batch_{i}.bin"))?;
                train.labels.extend(r.labels);
                train.pixels.extend(r.pixels);
            }
            let test = read("test_batch.bin")?;
            (cifar_tensor(&train, spec.image[1])?, cifar_tensor(&test, spec.image[1])?)
        }
    };
    if let Some(limit) = spec.limit {
        let keep = |d: &Dataset| d.subset(&(0..limit.min(d.len())).collect::<Vec<_>>());
        train = keep(&train)?;
        test = keep(&test)?;
    }
    Ok(DatasetSplits { train, test })
}
