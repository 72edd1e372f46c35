//! Image datasets: the CIFAR-10 binary format, splits, batching and a
//! synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::IMAGE_SHAPE;
use crate::error::{Error, Result};
use crate::nn::{SeededRng, Tensor};

const PIXELS: usize = IMAGE_SHAPE[0] * IMAGE_SHAPE[1] * IMAGE_SHAPE[2];
pub const RECORD_BYTES: usize = PIXELS + 1;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
    Synthetic,
}

/// `(M, 3, 32, 32)` images in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Option<Vec<u8>>, split: Split) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[1..] != IMAGE_SHAPE {
            return Err(Error::shape("ImageDataset", "images", "(M, 3, 32, 32)", images.shape()));
        }
        if images.dim(0) == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(l) = &labels {
            if l.len() != images.dim(0) {
                return Err(Error::shape("ImageDataset", "labels", images.dim(0), l.len()));
            }
        }
        Ok(ImageDataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images.data()[i * PIXELS..(i + 1) * PIXELS]
    }

    /// The images at `indices`, in that order.
    pub fn gather(&self, indices: &[usize], split: Split) -> Result<ImageDataset> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&IMAGE_SHAPE);
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        ImageDataset::new(Tensor::from_vec(&shape, data)?, labels, split)
    }

    /// The first `n` images (all of them if there are fewer).
    pub fn take(&self, n: usize) -> Result<ImageDataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx, self.split)
    }

    /// Images `range` as one `(B, 3, 32, 32)` tensor.
    pub fn slice(&self, start: usize, end: usize) -> Result<Tensor> {
        let end = end.min(self.len());
        let mut shape = vec![end.saturating_sub(start)];
        shape.extend_from_slice(&IMAGE_SHAPE);
        Tensor::from_vec(&shape, self.images.data()[start * PIXELS..end * PIXELS].to_vec())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes 3073-byte records: one label byte, then 3072 channel-major pixel
/// bytes mapped by `x/127.5 − 1`.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let whole = bytes.len() - bytes.len() % RECORD_BYTES;
    if bytes.is_empty() || whole != bytes.len() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: whole as u64,
            reason: format!(
                "length {} is not a positive multiple of the {RECORD_BYTES}-byte record size",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                offset: (r * RECORD_BYTES) as u64,
                reason: format!("label byte {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 127.5 - 1.0));
    }
    Ok((pixels, labels))
}

pub fn load_cifar_files(paths: &[PathBuf], split: Split) -> Result<ImageDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let (p, l) = parse_cifar_records(&bytes, path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let mut shape = vec![labels.len()];
    shape.extend_from_slice(&IMAGE_SHAPE);
    ImageDataset::new(Tensor::from_vec(&shape, pixels)?, Some(labels), split)
}

/// Reads the training batches (`Split::Train`) or the test batch
/// (`Split::Test`) from a directory of CIFAR-10 binary files.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<ImageDataset> {
    let files: Vec<PathBuf> = match split {
        Split::Test => vec![dir.join(TEST_FILE)],
        _ => TRAIN_FILES.iter().map(|f| dir.join(f)).collect(),
    };
    load_cifar_files(&files, if split == Split::Test { Split::Test } else { Split::Train })
}

/// Re-encodes a dataset in the CIFAR binary layout (label 0 when absent).
pub fn to_cifar_bytes(ds: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * RECORD_BYTES);
    for i in 0..ds.len() {
        out.push(ds.labels.as_ref().map_or(0, |l| l[i]));
        out.extend(ds.image(i).iter().map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// Seeded shuffle, then the last `fraction` of the shuffled order becomes
/// the validation set.
pub fn split_train_val(ds: &ImageDataset, fraction: f64, seed: u64) -> Result<(ImageDataset, ImageDataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let order = SeededRng::new(seed).permutation(ds.len());
    let n_val = (ds.len() as f64 * fraction).round() as usize;
    let (train, val) = order.split_at(ds.len() - n_val);
    Ok((ds.gather(train, Split::Train)?, ds.gather(val, Split::Validation)?))
}

/// Per-epoch shuffled mini-batches; the last partial batch is kept.
pub struct Batches<'a> {
    ds: &'a ImageDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let mut data = Vec::with_capacity(idx.len() * PIXELS);
        for &i in idx {
            data.extend_from_slice(self.ds.image(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&IMAGE_SHAPE);
        Some(Tensor::from_vec(&shape, data).expect("sizes agree"))
    }
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

pub fn batches(ds: &ImageDataset, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
    Batches {
        ds,
        order: SeededRng::derive(seed, epoch).permutation(ds.len()),
        batch_size: batch_size.max(1),
        pos: 0,
    }
}

/// Smooth images: a few random low-frequency 2-D sinusoids per channel on a
/// shared base pattern, clipped to [−1, 1].
pub fn synthetic_dataset(count: usize, seed: u64) -> Result<ImageDataset> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SeededRng::new(seed);
    let [c, h, w] = IMAGE_SHAPE;
    let mut data = Vec::with_capacity(count * PIXELS);
    let wave = |rng: &mut SeededRng| {
        let fx = rng.uniform(-3.0, 3.0);
        let fy = rng.uniform(-3.0, 3.0);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let amp = rng.uniform(0.2, 0.6);
        (fx, fy, phase, amp)
    };
    for _ in 0..count {
        let base: Vec<_> = (0..3).map(|_| wave(&mut rng)).collect();
        for _ in 0..c {
            let own = wave(&mut rng);
            let offset = rng.uniform(-0.3, 0.3);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                    let val: f64 = base
                        .iter()
                        .chain(std::iter::once(&own))
                        .map(|&(fx, fy, p, a)| a * (std::f64::consts::TAU * (fx * u + fy * v) + p).sin())
                        .sum();
                    data.push((val + offset).clamp(-1.0, 1.0));
                }
            }
        }
    }
    let mut shape = vec![count];
    shape.extend_from_slice(&IMAGE_SHAPE);
    ImageDataset::new(Tensor::from_vec(&shape, data)?, None, Split::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_bounded_and_deterministic() {
        let a = synthetic_dataset(4, 9).unwrap();
        assert_eq!(a.images.shape(), &[4, 3, 32, 32]);
        assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, synthetic_dataset(4, 9).unwrap());
        assert_ne!(a, synthetic_dataset(4, 10).unwrap());
    }
}
