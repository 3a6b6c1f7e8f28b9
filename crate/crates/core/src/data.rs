//! Dataset loading and batching: IDX-format MNIST files, synthetic blob
//! datasets for fast tests, and seeded shuffled batching.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{self, tag};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labeled dataset: `n × input_dim` features in `[0,1]` and integer
/// class labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f32>,
    pub input_dim: usize,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `k` examples.
    pub fn subset_first(&self, k: usize) -> Dataset {
        let k = k.min(self.len());
        Dataset {
            features: self.features[..k * self.input_dim].to_vec(),
            input_dim: self.input_dim,
            labels: self.labels[..k].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// `k` examples sampled without replacement (ascending index order).
    pub fn subset_seeded(&self, k: usize, seed: u64) -> Dataset {
        let k = k.min(self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = rng::stream(seed, tag::SUBSET, 0);
        idx.shuffle(&mut rng);
        idx.truncate(k);
        idx.sort_unstable();
        let mut features = Vec::with_capacity(k * self.input_dim);
        let mut labels = Vec::with_capacity(k);
        for &i in &idx {
            features
                .extend_from_slice(&self.features[i * self.input_dim..(i + 1) * self.input_dim]);
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            input_dim: self.input_dim,
            labels,
            num_classes: self.num_classes,
        }
    }
}

/// Raw IDX image file contents (dimensions preserved for bit-exact
/// round-tripping).
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>, // n * rows * cols
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels
            .len()
            .checked_div(self.rows * self.cols)
            .unwrap_or(0)
    }
}

/// Raw IDX label file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn read_u32(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<u32> {
    cur.read_u32::<BigEndian>().map_err(|_| Error::Truncated {
        path: path.to_path_buf(),
        needed: 4,
    })
}

/// Parse an IDX image file: magic `0x00000803`, big-endian u32 dims,
/// u8 pixels.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let n = read_u32(&mut cur, path)? as usize;
    let rows = read_u32(&mut cur, path)? as usize;
    let cols = read_u32(&mut cur, path)? as usize;
    let need = n * rows * cols;
    let rest = &bytes[cur.position() as usize..];
    if rest.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: need - rest.len(),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: rest[..need].to_vec(),
    })
}

/// Parse an IDX label file: magic `0x00000801`, big-endian u32 count,
/// u8 labels.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<IdxLabels> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let n = read_u32(&mut cur, path)? as usize;
    let rest = &bytes[cur.position() as usize..];
    if rest.len() < n {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: n - rest.len(),
        });
    }
    Ok(IdxLabels {
        labels: rest[..n].to_vec(),
    })
}

/// Serialize images back to IDX bytes (inverse of [`parse_idx_images`]).
pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
    out.write_u32::<BigEndian>(images.count() as u32).unwrap();
    out.write_u32::<BigEndian>(images.rows as u32).unwrap();
    out.write_u32::<BigEndian>(images.cols as u32).unwrap();
    out.extend_from_slice(&images.pixels);
    out
}

/// Serialize labels back to IDX bytes (inverse of [`parse_idx_labels`]).
pub fn write_idx_labels(labels: &IdxLabels) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.labels.len());
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
    out.write_u32::<BigEndian>(labels.labels.len() as u32)
        .unwrap();
    out.extend_from_slice(&labels.labels);
    out
}

/// Load an IDX image/label pair into a [`Dataset`]: pixels flattened and
/// scaled into `[0,1]` by `/255`, images paired with labels by index.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path).map_err(Error::io_at(images_path))?;
    let lab_bytes = std::fs::read(labels_path).map_err(Error::io_at(labels_path))?;
    let images = parse_idx_images(&img_bytes, images_path)?;
    let labels = parse_idx_labels(&lab_bytes, labels_path)?;
    if images.count() != labels.labels.len() {
        return Err(Error::CountMismatch {
            images: images.count(),
            labels: labels.labels.len(),
        });
    }
    let input_dim = images.rows * images.cols;
    let features: Vec<f32> = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let num_classes = labels
        .labels
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(1)
        .max(10);
    Ok(Dataset {
        features,
        input_dim,
        labels: labels.labels.iter().map(|&l| l as u32).collect(),
        num_classes,
    })
}

/// Standard file names of the four MNIST IDX files inside a directory.
pub fn mnist_file_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
}

/// Load the train/test pair from a directory holding the four standard
/// MNIST IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (ti, tl, vi, vl) = mnist_file_paths(dir);
    Ok((load_mnist(&ti, &tl)?, load_mnist(&vi, &vl)?))
}

fn synth_means(input_dim: usize, k: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, tag::SYNTH_DATA, 0);
    // Class means at expected pairwise distance ~separation.
    let mean_scale = separation / (2.0 * input_dim as f64).sqrt();
    (0..k)
        .map(|_| {
            (0..input_dim)
                .map(|_| rng::standard_normal(&mut rng) * mean_scale)
                .collect()
        })
        .collect()
}

fn synth_draw(
    means: &[Vec<f64>],
    n: usize,
    input_dim: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<u32>) {
    let k = means.len();
    let mut raw = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c as u32);
        debug_assert_eq!(means[c].len(), input_dim);
        for &m in &means[c] {
            raw.push(m + rng::standard_normal(rng));
        }
    }
    (raw, labels)
}

fn rescale_into_unit(raw: &[f64], lo: f64, hi: f64) -> Vec<f32> {
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
    raw.iter()
        .map(|&v| (((v - lo) * scale) as f32).clamp(0.0, 1.0))
        .collect()
}

/// Synthetic dataset: `k` Gaussian blobs with unit within-class variance,
/// means about `separation` apart, features affinely rescaled into
/// `[0,1]`. Classes are balanced (counts differ by at most one) and the
/// whole dataset is a pure function of the seed.
pub fn make_synthetic(n: usize, input_dim: usize, k: usize, separation: f64, seed: u64) -> Dataset {
    assert!(k >= 1 && n >= k, "need n >= k >= 1");
    let means = synth_means(input_dim, k, separation, seed);
    let mut rng = rng::stream(seed, tag::SYNTH_DATA, 1);
    let (raw, labels) = synth_draw(&means, n, input_dim, &mut rng);
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let features = rescale_into_unit(&raw, lo, hi);
    Dataset {
        features,
        input_dim,
        labels,
        num_classes: k,
    }
}

/// Train/test pair drawn from the *same* blobs (means shared, samples
/// independent). The train split's range defines the `[0,1]` rescaling
/// for both.
pub fn make_synthetic_pair(
    train_n: usize,
    test_n: usize,
    input_dim: usize,
    k: usize,
    separation: f64,
    seed: u64,
) -> (Dataset, Dataset) {
    assert!(k >= 1 && train_n >= k && test_n >= k, "need n >= k >= 1");
    let means = synth_means(input_dim, k, separation, seed);
    let mut train_rng = rng::stream(seed, tag::SYNTH_DATA, 1);
    let (train_raw, train_labels) = synth_draw(&means, train_n, input_dim, &mut train_rng);
    let mut test_rng = rng::stream(seed, tag::SYNTH_DATA, 2);
    let (test_raw, test_labels) = synth_draw(&means, test_n, input_dim, &mut test_rng);

    let lo = train_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let train = Dataset {
        features: rescale_into_unit(&train_raw, lo, hi),
        input_dim,
        labels: train_labels,
        num_classes: k,
    };
    let test = Dataset {
        features: rescale_into_unit(&test_raw, lo, hi),
        input_dim,
        labels: test_labels,
        num_classes: k,
    };
    (train, test)
}

/// Seeded uniform shuffle of `0..n`, then contiguous chunks of
/// `batch_size` (final partial chunk kept). The concatenation of all
/// chunks is a permutation of `0..n`.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Materialized batches for a dataset (see [`batch_indices`]).
pub fn batches(data: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    batch_indices(data.len(), batch_size, rng)
        .iter()
        .map(|chunk| Batch::gather(&data.features, data.input_dim, &data.labels, chunk))
        .collect()
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn fake_mnist_bytes(n: usize) -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..n * 28 * 28).map(|i| (i % 251) as u8).collect();
        let images = write_idx_images(&IdxImages {
            rows: 28,
            cols: 28,
            pixels,
        });
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let labels = write_idx_labels(&IdxLabels { labels });
        (images, labels)
    }

    #[test]
    fn idx_round_trip_is_bit_exact() {
        let (img_bytes, lab_bytes) = fake_mnist_bytes(7);
        let p = Path::new("test");
        let images = parse_idx_images(&img_bytes, p).unwrap();
        let labels = parse_idx_labels(&lab_bytes, p).unwrap();
        assert_eq!(write_idx_images(&images), img_bytes);
        assert_eq!(write_idx_labels(&labels), lab_bytes);
    }

    #[test]
    fn load_mnist_shapes_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (img_bytes, lab_bytes) = fake_mnist_bytes(5);
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        std::fs::write(&ip, &img_bytes).unwrap();
        std::fs::write(&lp, &lab_bytes).unwrap();
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.input_dim, 784);
        assert_eq!(ds.num_classes, 10);
        // Pixel 0 is 0 -> exact zero feature.
        assert_eq!(ds.features[0], 0.0);
        assert!(ds.features.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = vec![0u8; 16];
        bytes[3] = 0x99;
        let err = parse_idx_labels(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { got: 0x99, .. }));
    }

    #[test]
    fn truncated_file_is_reported() {
        let full = write_idx_labels(&IdxLabels {
            labels: vec![1, 2, 3],
        });
        let err = parse_idx_labels(&full[..full.len() - 1], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img_bytes, _) = fake_mnist_bytes(5);
        let lab_bytes = write_idx_labels(&IdxLabels { labels: vec![0, 1] });
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        std::fs::write(&ip, &img_bytes).unwrap();
        std::fs::write(&lp, &lab_bytes).unwrap();
        assert!(matches!(
            load_mnist(&ip, &lp),
            Err(Error::CountMismatch {
                images: 5,
                labels: 2
            })
        ));
    }

    #[test]
    fn synthetic_balanced_and_deterministic() {
        let a = make_synthetic(100, 6, 2, 4.0, 11);
        let b = make_synthetic(100, 6, 2, 4.0, 11);
        assert_eq!(a, b);
        let c0 = a.labels.iter().filter(|&&l| l == 0).count();
        assert_eq!(c0, 50);
        assert!(a.features.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn synthetic_pair_shares_means_but_not_samples() {
        let (train, test) = make_synthetic_pair(60, 30, 5, 3, 6.0, 7);
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 30);
        assert_ne!(train.features[..5], test.features[..5]);
        // Same task: a centroid classifier fit on train should beat
        // chance on test by a wide margin at this separation.
        let mut centroids = vec![vec![0.0f64; 5]; 3];
        let mut counts = [0usize; 3];
        for i in 0..train.len() {
            let c = train.labels[i] as usize;
            counts[c] += 1;
            for (cd, &f) in centroids[c]
                .iter_mut()
                .zip(&train.features[i * 5..(i + 1) * 5])
            {
                *cd += f as f64;
            }
        }
        for (c, cent) in centroids.iter_mut().enumerate() {
            for v in cent.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut correct = 0;
        for i in 0..test.len() {
            let x = &test.features[i * 5..(i + 1) * 5];
            let best = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = x
                        .iter()
                        .zip(&centroids[a])
                        .map(|(&v, &m)| (v as f64 - m).powi(2))
                        .sum();
                    let db: f64 = x
                        .iter()
                        .zip(&centroids[b])
                        .map(|(&v, &m)| (v as f64 - m).powi(2))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best as u32 == test.labels[i] {
                correct += 1;
            }
        }
        assert!(
            correct as f64 / test.len() as f64 > 0.8,
            "centroid accuracy {correct}/30"
        );
    }

    #[test]
    fn batches_partition_the_dataset() {
        let mut rng = rng::stream(4, tag::SHUFFLE, 0);
        let chunks = batch_indices(10, 4, &mut rng);
        let sizes: Vec<usize> = chunks.iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let all: BTreeSet<usize> = chunks.iter().flatten().copied().collect();
        assert_eq!(all, (0..10).collect());
    }

    #[test]
    fn batching_deterministic_per_stream() {
        let a = batch_indices(50, 8, &mut rng::stream(7, tag::SHUFFLE, 3));
        let b = batch_indices(50, 8, &mut rng::stream(7, tag::SHUFFLE, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_subset_is_deterministic_and_sized() {
        let ds = make_synthetic(60, 4, 3, 2.0, 5);
        let a = ds.subset_seeded(20, 99);
        let b = ds.subset_seeded(20, 99);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }
}
