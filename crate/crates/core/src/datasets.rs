//! Labeled data, shard construction and redundant shard placement.
//!
//! The global training set is cut into `K` equal shards of `D` samples.
//! Worker `n` (0-indexed here) stores the `r` consecutive shards
//! `n, n+1, …, n+r−1` taken modulo `N`, so every shard lives on exactly `r`
//! workers. Each round a worker trains on a fresh uniform subsample of its
//! `r·D` stored samples.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Row-major features in `[0, 1]` with integer labels.
///
/// Features are stored as `f32` to halve the footprint of MNIST; all
/// arithmetic on them is done after widening to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    labels: Vec<u8>,
    feature_dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f32>, labels: Vec<u8>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() * feature_dim {
            return Err(Error::CountMismatch {
                images: features.len() / feature_dim.max(1),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Precondition(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn features_of(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.to_path_buf()),
        _ => Error::io(format!("reading {}", path.display()), e),
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: "header".into(),
        })
}

/// Parses an IDX image/label file pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < count * dim {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            detail: format!("expected {} pixel bytes, found {}", count * dim, pixels.len()),
        });
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() < label_count {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            detail: format!("expected {label_count} labels, found {}", label_bytes.len()),
        });
    }
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features = pixels[..count * dim].iter().map(|&p| p as f32 / 255.0).collect();
    let labels = label_bytes[..count].to_vec();
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    LabeledDataset::new(features, labels, dim, classes)
}

/// Loads the standard MNIST train and test files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    if !dir.is_dir() {
        return Err(Error::DatasetNotFound(dir.to_path_buf()));
    }
    let train = load_idx(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?;
    let test = load_idx(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))?;
    Ok((train, test))
}

/// Serializes a dataset back to IDX (images as `rows × cols` bytes).
pub fn write_idx(data: &LabeledDataset, rows: usize, cols: usize, images: &Path, labels: &Path) -> Result<()> {
    assert_eq!(rows * cols, data.feature_dim);
    let mut img = Vec::with_capacity(16 + data.features.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [data.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(data.features.iter().map(|&f| (f * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    fs::write(images, img).map_err(|e| Error::io(format!("writing {}", images.display()), e))?;
    fs::write(labels, lab).map_err(|e| Error::io(format!("writing {}", labels.display()), e))?;
    Ok(())
}

/// Balanced two-class Gaussian blobs clamped to `[0, 1]`.
///
/// Class `c` is centred at `0.5 ∓ separation/2` along the all-ones
/// direction (normalized), with isotropic noise of std 0.15.
pub fn synthetic_blobs(samples: usize, feature_dim: usize, separation: f64, stream: &mut RngStream) -> LabeledDataset {
    let noise = Normal::new(0.0, 0.15).unwrap();
    let shift = separation / 2.0 / (feature_dim as f64).sqrt();
    let mut features = Vec::with_capacity(samples * feature_dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = (i % 2) as u8;
        let centre = if label == 0 { 0.5 - shift } else { 0.5 + shift };
        for _ in 0..feature_dim {
            let v = centre + noise.sample(stream);
            features.push(v.clamp(0.0, 1.0) as f32);
        }
        labels.push(label);
    }
    LabeledDataset::new(features, labels, feature_dim, 2).expect("consistent by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Iid,
    NonIidByLabel,
}

/// Where the training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// MNIST IDX files. Without `dir`, `$AIRFL_DATA_DIR` (or its `mnist`
    /// subdirectory) is used.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    Synthetic {
        train_samples: usize,
        test_samples: usize,
        feature_dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn default_separation() -> f64 {
    1.0
}

pub const DATA_DIR_ENV: &str = "AIRFL_DATA_DIR";

impl DatasetSource {
    /// Resolves the MNIST directory: explicit `dir`, else `$AIRFL_DATA_DIR`
    /// or `$AIRFL_DATA_DIR/mnist`, whichever holds the training images.
    pub fn mnist_dir(&self) -> Option<PathBuf> {
        match self {
            DatasetSource::Mnist { dir: Some(d) } => Some(d.clone()),
            DatasetSource::Mnist { dir: None } => {
                let root = PathBuf::from(std::env::var_os(DATA_DIR_ENV)?);
                let nested = root.join("mnist");
                if nested.join(MNIST_TRAIN_IMAGES).exists() {
                    Some(nested)
                } else {
                    Some(root)
                }
            }
            DatasetSource::Synthetic { .. } => None,
        }
    }
}

/// The `K` shards and which `r` of them each worker stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardAssignment {
    pub shards: Vec<Vec<usize>>,
    pub worker_shards: Vec<Vec<usize>>,
}

impl ShardAssignment {
    pub fn shard_size(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }

    /// All sample indices stored by `worker`, shard by shard.
    pub fn local_indices(&self, worker: usize) -> Vec<usize> {
        self.worker_shards[worker]
            .iter()
            .flat_map(|&k| self.shards[k].iter().copied())
            .collect()
    }
}

/// Cuts `num_shards` blocks of `shard_size` samples. IID mode permutes first;
/// label mode stably sorts by label so each block is (nearly) single-label.
/// Samples past `num_shards · shard_size` are dropped.
pub fn make_shards(
    data: &LabeledDataset,
    num_shards: usize,
    shard_size: usize,
    mode: DataMode,
    stream: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    let needed = num_shards * shard_size;
    if needed > data.len() || shard_size == 0 {
        return Err(Error::InsufficientSamples {
            needed: needed.max(1),
            available: data.len(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    match mode {
        DataMode::Iid => order.shuffle(stream),
        DataMode::NonIidByLabel => order.sort_by_key(|&i| data.label(i)),
    }
    order.truncate(needed);
    Ok(order.chunks_exact(shard_size).map(<[usize]>::to_vec).collect())
}

/// Worker `n` gets shards `{n, n+1, …, n+r−1} mod N` (0-indexed form of the
/// 1-indexed wraparound map `H`).
pub fn cyclic_assign(num_shards: usize, num_workers: usize, redundancy: usize) -> Result<Vec<Vec<usize>>> {
    if num_shards != num_workers {
        return Err(Error::ShardWorkerMismatch {
            shards: num_shards,
            workers: num_workers,
        });
    }
    if redundancy == 0 || redundancy > num_workers {
        return Err(Error::RedundancyOutOfRange {
            redundancy,
            workers: num_workers,
        });
    }
    Ok((0..num_workers)
        .map(|n| (0..redundancy).map(|j| (n + j) % num_workers).collect())
        .collect())
}

/// Uniform sample without replacement of `round(fraction · |local|)`
/// (at least one) of the worker's stored indices.
pub fn sample_minibatch(
    worker_shards: &[usize],
    shards: &[Vec<usize>],
    fraction: f64,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::SampleFraction(fraction));
    }
    let pool: Vec<usize> = worker_shards.iter().flat_map(|&k| shards[k].iter().copied()).collect();
    if pool.is_empty() {
        return Err(Error::EmptyWorkerDataset);
    }
    let size = ((fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
    Ok(index::sample(stream, pool.len(), size).into_iter().map(|i| pool[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamTag};
    use std::collections::HashSet;

    fn stream() -> RngStream {
        derive_stream(11, StreamTag::Partition, None, None)
    }

    #[test]
    fn cyclic_examples() {
        let a = cyclic_assign(4, 4, 2).unwrap();
        // worker 4 (1-indexed) holds shards {4, 1}
        assert_eq!(a[3], vec![3, 0]);
        let id = cyclic_assign(5, 5, 1).unwrap();
        assert!(id.iter().enumerate().all(|(n, s)| s == &vec![n]));
        let full = cyclic_assign(5, 5, 5).unwrap();
        for s in full {
            let set: HashSet<_> = s.into_iter().collect();
            assert_eq!(set.len(), 5);
        }
    }

    #[test]
    fn cyclic_rejects_bad_redundancy() {
        assert!(matches!(cyclic_assign(4, 4, 0), Err(Error::RedundancyOutOfRange { .. })));
        assert!(matches!(cyclic_assign(4, 4, 5), Err(Error::RedundancyOutOfRange { .. })));
        assert!(matches!(cyclic_assign(3, 4, 1), Err(Error::ShardWorkerMismatch { .. })));
    }

    #[test]
    fn every_shard_on_exactly_r_workers() {
        for n in 1..9 {
            for r in 1..=n {
                let a = cyclic_assign(n, n, r).unwrap();
                let mut counts = vec![0; n];
                for s in &a {
                    assert_eq!(s.len(), r);
                    for &k in s {
                        counts[k] += 1;
                    }
                }
                assert!(counts.iter().all(|&c| c == r));
            }
        }
    }

    fn labelled(labels: Vec<u8>) -> LabeledDataset {
        let n = labels.len();
        LabeledDataset::new(vec![0.0; n], labels, 1, 10).unwrap()
    }

    #[test]
    fn label_shards_are_single_label() {
        let labels: Vec<u8> = (0..60).map(|i| (i * 7 % 10) as u8).collect();
        let data = labelled(labels);
        let shards = make_shards(&data, 10, 6, DataMode::NonIidByLabel, &mut stream()).unwrap();
        for s in &shards {
            let set: HashSet<u8> = s.iter().map(|&i| data.label(i)).collect();
            assert_eq!(set.len(), 1);
        }
    }

    #[test]
    fn single_shard_is_first_block() {
        let data = labelled((0..10).map(|i| (9 - i) as u8).collect());
        let shards = make_shards(&data, 1, 4, DataMode::NonIidByLabel, &mut stream()).unwrap();
        // sorted by label: indices 9, 8, 7, 6 carry labels 0..3
        assert_eq!(shards, vec![vec![9, 8, 7, 6]]);
        let iid = make_shards(&data, 1, 4, DataMode::Iid, &mut stream()).unwrap();
        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut stream());
        assert_eq!(iid[0], perm[..4]);
    }

    #[test]
    fn shards_disjoint_and_tail_dropped() {
        let data = labelled((0..23).map(|i| (i % 10) as u8).collect());
        let shards = make_shards(&data, 4, 5, DataMode::Iid, &mut stream()).unwrap();
        let all: Vec<usize> = shards.iter().flatten().copied().collect();
        let set: HashSet<usize> = all.iter().copied().collect();
        assert_eq!(all.len(), 20);
        assert_eq!(set.len(), 20);
        assert!(matches!(
            make_shards(&data, 5, 5, DataMode::Iid, &mut stream()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn minibatch_sizes_and_uniqueness() {
        let shards: Vec<Vec<usize>> = (0..3).map(|k| (k * 1200..(k + 1) * 1200).collect()).collect();
        let mut s = derive_stream(1, StreamTag::Sampling, Some(0), Some(0));
        let batch = sample_minibatch(&[0, 1], &shards, 0.5, &mut s).unwrap();
        assert_eq!(batch.len(), 1200);
        let set: HashSet<_> = batch.iter().collect();
        assert_eq!(set.len(), 1200);
        assert!(batch.iter().all(|&i| i < 2400));

        let mut s = derive_stream(1, StreamTag::Sampling, Some(0), Some(0));
        let full = sample_minibatch(&[2], &shards, 1.0, &mut s).unwrap();
        let set: HashSet<_> = full.into_iter().collect();
        assert_eq!(set, shards[2].iter().copied().collect());

        let again = sample_minibatch(&[0, 1], &shards, 0.5, &mut derive_stream(1, StreamTag::Sampling, Some(0), Some(0)));
        assert_eq!(again.unwrap(), batch);
    }

    #[test]
    fn minibatch_errors() {
        let shards = vec![vec![], vec![1]];
        let mut s = stream();
        assert!(matches!(sample_minibatch(&[0], &shards, 0.5, &mut s), Err(Error::EmptyWorkerDataset)));
        assert!(matches!(sample_minibatch(&[1], &shards, 0.0, &mut s), Err(Error::SampleFraction(_))));
        assert!(matches!(sample_minibatch(&[1], &shards, 1.5, &mut s), Err(Error::SampleFraction(_))));
        // tiny fraction still yields one sample
        assert_eq!(sample_minibatch(&[1], &shards, 0.01, &mut s).unwrap().len(), 1);
    }

    #[test]
    fn idx_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let data = LabeledDataset::new(
            vec![0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0, 0.5, 0.25],
            vec![3, 7, 9],
            2,
            10,
        )
        .unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&data, 1, 2, &img, &lab).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.labels(), &[3, 7, 9]);
        assert_eq!(back.features_of(1), &[128.0 / 255.0, 1.0 / 255.0]);

        let mut bytes = fs::read(&img).unwrap();
        bytes[3] = 0x01;
        fs::write(&img, &bytes).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn idx_truncation_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let data = LabeledDataset::new(vec![0.5; 8], vec![1, 2, 3, 4], 2, 10).unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&data, 2, 1, &img, &lab).unwrap();

        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Truncated { .. })));

        fs::write(&img, &bytes).unwrap();
        let mut lbytes = fs::read(&lab).unwrap();
        lbytes[7] = 3;
        lbytes.pop();
        fs::write(&lab, &lbytes).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::CountMismatch { images: 4, labels: 3 })));

        assert!(matches!(
            load_idx(&dir.path().join("nope"), &lab),
            Err(Error::DatasetNotFound(_))
        ));
    }

    #[test]
    fn synthetic_is_balanced_and_bounded() {
        let d = synthetic_blobs(101, 5, 1.0, &mut stream());
        let ones = d.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 50);
        for i in 0..d.len() {
            assert!(d.features_of(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
