//! Datasets: CIFAR binary files, synthetic class-template images, and seeded
//! minibatch order.
//!
//! Pixels are bytes divided by 255. No mean subtraction, whitening or
//! augmentation is applied.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{mismatch, Error, Result};
use crate::rng::{RngStream, DATA_STREAM, SHUFFLE_STREAM_BASE};
use crate::tensor::{Shape, Tensor};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N × C × H × W`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().batch() != labels.len() {
            return Err(mismatch(format!(
                "{} images but {} labels",
                images.shape().batch(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `(C, H, W)`.
    pub fn example_shape(&self) -> Shape {
        Shape::new(self.images.dims()[1..].to_vec()).expect("dataset images are at least 2-d")
    }

    /// Gathers the examples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut dims = self.images.dims().to_vec();
        dims[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * self.images.len() / self.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.example(i));
            labels.push(self.labels[i]);
        }
        (Tensor::from_vec(&dims, data).expect("batch has at least one example"), labels)
    }

    /// The first `n` examples (all of them if `n ≥ len`).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// The first `n` examples and the rest, e.g. a train/held-out split of
    /// one synthetic draw. Both parts must be non-empty.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidParam(format!(
                "split point {n} must be inside 1..{}",
                self.len()
            )));
        }
        let rest: Vec<usize> = (n..self.len()).collect();
        Ok((self.head(n), self.select(&rest)))
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let (images, labels) = self.batch(idx);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }
}

fn parse_cifar(bytes: &[u8], path: &Path, label_bytes: usize, classes: usize, out: &mut (Vec<f64>, Vec<usize>)) -> Result<()> {
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
        });
    }
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        // fine label is the last label byte
        let label = rec[label_bytes - 1] as usize;
        if label >= classes {
            return Err(Error::Data {
                path: path.to_path_buf(),
                reason: format!("record {i} has label {label}, expected < {classes}"),
            });
        }
        out.1.push(label);
        out.0.extend(rec[label_bytes..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(())
}

fn load_cifar(paths: &[PathBuf], label_bytes: usize, classes: usize) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::InvalidParam("no CIFAR files given".into()));
    }
    let mut acc = (Vec::new(), Vec::new());
    for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::Data {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        parse_cifar(&bytes, path, label_bytes, classes, &mut acc)?;
    }
    let (pixels, labels) = acc;
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, classes)
}

/// CIFAR-10 binary batches: each record is 1 label byte then 3072 pixel
/// bytes (red plane, green plane, blue plane, each row-major 32×32).
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let paths: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
    load_cifar(&paths, 1, 10)
}

/// CIFAR-100 binary files: coarse label byte, fine label byte, 3072 pixel
/// bytes. Only the fine label is kept.
pub fn load_cifar100<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let paths: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
    load_cifar(&paths, 2, 100)
}

/// Noisy images around one smooth template per class.
///
/// Each class template is a per-channel base level plus an oriented
/// sinusoidal grating; examples add Gaussian noise (σ = 0.1) and clip to
/// `[0, 1]`. Labels cycle `0, 1, …, k−1, 0, …` so every class appears exactly
/// `n_per_class` times.
pub fn synth_blobs(num_classes: usize, n_per_class: usize, example_shape: &[usize], seed: u64) -> Result<Dataset> {
    let &[c, h, w] = example_shape else {
        return Err(mismatch(format!("synthetic images need (C, H, W), got {example_shape:?}")));
    };
    if num_classes == 0 || n_per_class == 0 {
        return Err(Error::InvalidParam("synthetic data needs at least one class and one example per class".into()));
    }
    let mut rng = RngStream::new(seed, DATA_STREAM);
    let plane = h * w;
    let templates: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            let theta = std::f64::consts::PI * (k as f64 + rng.uniform(0.0, 0.5)) / num_classes as f64;
            let freq = rng.uniform(1.5, 4.0);
            let (dx, dy) = (theta.cos() * freq / w as f64, theta.sin() * freq / h as f64);
            let mut t = Vec::with_capacity(c * plane);
            for _ in 0..c {
                let base = rng.uniform(0.3, 0.7);
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                for y in 0..h {
                    for x in 0..w {
                        let arg = std::f64::consts::TAU * (dx * x as f64 + dy * y as f64) + phase;
                        t.push(base + 0.2 * arg.sin());
                    }
                }
            }
            t
        })
        .collect();
    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * c * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        labels.push(k);
        data.extend(templates[k].iter().map(|&v| rng.normal(v, 0.1).clamp(0.0, 1.0)));
    }
    let images = Tensor::from_vec(&[n, c, h, w], data)?;
    Dataset::new(images, labels, num_classes)
}

/// Seeded minibatch order: every epoch is a fresh permutation drawn from
/// its own stream, so epoch `e` is reproducible on its own.
#[derive(Clone, Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be at least 1".into()));
        }
        Ok(BatchIterator {
            dataset,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Index lists for epoch `epoch`; the last batch may be short.
    pub fn order(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.dataset.len()).collect();
        let mut rng = RngStream::new(self.seed, SHUFFLE_STREAM_BASE + epoch as u64);
        idx.shuffle(&mut rng);
        idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Batches of the next epoch, advancing the epoch counter.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let order = self.order(self.epoch);
        self.epoch += 1;
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_blobs(3, 5, &[2, 6, 6], 17).unwrap();
        let b = synth_blobs(3, 5, &[2, 6, 6], 17).unwrap();
        assert_eq!(a, b);
        let c = synth_blobs(3, 5, &[2, 6, 6], 18).unwrap();
        assert_ne!(a.images, c.images);
        let mut hist = [0; 3];
        for &l in &a.labels {
            hist[l] += 1;
        }
        assert_eq!(hist, [5, 5, 5]);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn batches_are_permutations() {
        let ds = synth_blobs(2, 10, &[1, 2, 2], 0).unwrap();
        let mut it = BatchIterator::new(&ds, 3, 9).unwrap();
        let e0 = it.next_epoch();
        let e1 = it.next_epoch();
        assert_eq!(e0.len(), 7);
        assert_eq!(e0.last().unwrap().len(), 2);
        for e in [&e0, &e1] {
            let mut all: Vec<usize> = e.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..20).collect::<Vec<_>>());
        }
        assert_ne!(e0, e1);
        assert_eq!(BatchIterator::new(&ds, 3, 9).unwrap().order(1), e1);
    }

    #[test]
    fn cifar10_rejects_bad_files() {
        let path = Path::new("mem");
        let mut acc = (Vec::new(), Vec::new());
        assert!(parse_cifar(&[0; 3072], path, 1, 10, &mut acc).is_err());
        let mut rec = vec![0u8; 3073];
        rec[0] = 10;
        assert!(matches!(parse_cifar(&rec, path, 1, 10, &mut acc), Err(Error::Data { .. })));
    }

    #[test]
    fn head_and_batch() {
        let ds = synth_blobs(2, 3, &[1, 2, 2], 0).unwrap();
        let h = ds.head(4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.images.example(3), ds.images.example(3));
        let (x, y) = ds.batch(&[5, 0]);
        assert_eq!(x.dims(), &[2, 1, 2, 2]);
        assert_eq!(y, vec![ds.labels[5], ds.labels[0]]);
    }
}
