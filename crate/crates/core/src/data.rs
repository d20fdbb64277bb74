//! Datasets, IDX binary parsing, subsampling, and non-iid partitioning.
//!
//! IDX is the MNIST-family container: a big-endian magic number, big-endian
//! 32-bit dimensions, then the raw payload bytes. Parsing here works on byte
//! slices; reading files (and gunzipping) belongs to the std companion crate.
//!
//! Pixels are mapped to `[-1, 1]` via `v / 127.5 - 1` so real samples live in
//! the generator's tanh output range; `{0, 255}` map to exactly `{-1.0, 1.0}`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Stage};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Record of the affine map applied to raw values on ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub offset: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            scale: 1.0,
            offset: 0.0,
        }
    }

    /// The pixel map `v / 127.5 - 1`.
    pub fn pixel() -> Self {
        Normalization {
            scale: 1.0 / 127.5,
            offset: -1.0,
        }
    }
}

/// An in-memory labeled dataset with samples normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    normalization: Normalization,
}

impl LabeledDataset {
    /// Builds a dataset, re-indexing labels to a dense `[0, n)` range.
    pub fn new(
        samples: Tensor,
        raw_labels: Vec<usize>,
        normalization: Normalization,
    ) -> Result<Self> {
        if samples.rows() != raw_labels.len() {
            return Err(Error::ShapeMismatch {
                context: "labeled dataset",
                expected: vec![samples.rows()],
                found: vec![raw_labels.len()],
            });
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite {
                context: "labeled dataset samples",
            });
        }
        let mut sorted: Vec<usize> = raw_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let dense: BTreeMap<usize, usize> =
            sorted.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let labels: Vec<usize> = raw_labels.iter().map(|l| dense[l]).collect();
        let n_classes = dense.len();
        Ok(LabeledDataset {
            samples,
            labels,
            n_classes,
            normalization,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dim(&self) -> usize {
        self.samples.cols()
    }

    /// Indices of every item of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Copies the given items into a new dataset (labels keep their ids).
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            normalization: self.normalization,
        }
    }
}

// ---------------------------------------------------------------------------
// IDX parsing and serialization
// ---------------------------------------------------------------------------

/// Parsed IDX3 image file: samples flattened to `(count, rows*cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub data: Tensor,
    pub rows: u32,
    pub cols: u32,
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            detail: alloc::format!("truncated header: missing {what}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX3 unsigned-byte image file and normalizes pixels to `[-1, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            detail: alloc::format!(
                "bad image magic: expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"
            ),
        });
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")?;
    let cols = read_be_u32(bytes, 12, "column count")?;
    let pixels = count * rows as usize * cols as usize;
    let payload = &bytes[16..];
    if payload.len() != pixels {
        return Err(Error::Format {
            detail: alloc::format!(
                "payload length {} does not match header ({} images of {}x{} = {} bytes)",
                payload.len(),
                count,
                rows,
                cols,
                pixels
            ),
        });
    }
    let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 127.5 - 1.0).collect();
    Ok(IdxImages {
        data: Tensor::matrix(count, rows as usize * cols as usize, data)?,
        rows,
        cols,
    })
}

/// Parses an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            detail: alloc::format!(
                "bad label magic: expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"
            ),
        });
    }
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Format {
            detail: alloc::format!(
                "payload length {} does not match header count {}",
                payload.len(),
                count
            ),
        });
    }
    Ok(payload.to_vec())
}

/// Inverse of [`parse_idx_images`]; exact for tensors that came from bytes.
pub fn serialize_idx_images(images: &IdxImages) -> Vec<u8> {
    let count = images.data.rows() as u32;
    let mut out = Vec::with_capacity(16 + images.data.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    out.extend_from_slice(&images.rows.to_be_bytes());
    out.extend_from_slice(&images.cols.to_be_bytes());
    for v in images.data.data() {
        let raw = libm::round((v + 1.0) * 127.5);
        out.push(raw.clamp(0.0, 255.0) as u8);
    }
    out
}

/// Inverse of [`parse_idx_labels`].
pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Combines parsed image and label files into a dataset.
pub fn dataset_from_idx(images: IdxImages, labels: &[u8]) -> Result<LabeledDataset> {
    LabeledDataset::new(
        images.data,
        labels.iter().map(|&l| l as usize).collect(),
        Normalization::pixel(),
    )
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// One client's view into a parent dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// How training data is spread across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// Per-class proportions drawn from `Dir(alpha)`.
    Dirichlet { alpha: f64 },
    /// Class `c` goes entirely to client `c mod K`.
    OneClassPerClient,
    /// Class-balanced shards with two size tiers.
    QuantitySkew {
        small_clients: usize,
        small_size: usize,
        large_size: usize,
    },
}

/// Partitioner configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub clients: usize,
    /// Stratified subsampling ratio applied before partitioning.
    pub ratio: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("partition plan", "client count must be >= 1"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::invalid("partition plan", "ratio must be in (0, 1]"));
        }
        if let PartitionScheme::Dirichlet { alpha } = self.scheme {
            if !(alpha > 0.0) {
                return Err(Error::invalid("partition plan", "alpha must be > 0"));
            }
        }
        if let PartitionScheme::QuantitySkew { small_clients, .. } = self.scheme {
            if small_clients > self.clients {
                return Err(Error::invalid(
                    "partition plan",
                    "small client tier exceeds client count",
                ));
            }
        }
        Ok(())
    }
}

/// Per-class stratified sample of `floor(r * count_c)` items, without
/// replacement, deterministic per seed.
pub fn subsample(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<LabeledDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("subsample", "ratio must be in (0, 1]"));
    }
    let mut stream = rng::setup_stream(seed, Stage::Subsample);
    let mut keep: Vec<usize> = Vec::new();
    for mut class_indices in ds.indices_by_class() {
        let take = ((ratio * class_indices.len() as f64) as usize).min(class_indices.len());
        class_indices.shuffle(&mut stream);
        keep.extend_from_slice(&class_indices[..take]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Largest-remainder split of `count` items according to `proportions`.
///
/// Returns per-client counts that sum to `count` exactly. Ties in the
/// fractional parts resolve toward lower client ids.
fn largest_remainder_counts(proportions: &[f64], count: usize) -> Vec<usize> {
    let k = proportions.len();
    let mut counts = vec![0usize; k];
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(k);
    let mut assigned = 0usize;
    for (i, p) in proportions.iter().enumerate() {
        let quota = p * count as f64;
        let base = libm::floor(quota) as usize;
        counts[i] = base.min(count);
        assigned += counts[i];
        fracs.push((quota - base as f64, i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut remaining = count.saturating_sub(assigned);
    let mut cursor = 0;
    while remaining > 0 {
        counts[fracs[cursor % k].1] += 1;
        cursor += 1;
        remaining -= 1;
    }
    counts
}

/// Splits a dataset into per-client shards according to the plan's scheme.
///
/// Dirichlet and one-class shards are pairwise disjoint and cover the dataset
/// exactly. The quantity-skew scheme draws fixed-size class-balanced shards
/// and leaves any remainder unassigned by design.
pub fn partition(ds: &LabeledDataset, plan: &PartitionPlan) -> Result<Vec<Shard>> {
    plan.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("partition", "dataset is empty"));
    }
    let k = plan.clients;
    let mut stream = rng::setup_stream(plan.seed, Stage::Partition);
    let mut shards: Vec<Shard> = (0..k)
        .map(|client_id| Shard {
            client_id,
            indices: Vec::new(),
        })
        .collect();

    match plan.scheme {
        PartitionScheme::Dirichlet { alpha } => {
            // All proportions are drawn before any shuffling, so two datasets
            // partitioned under the same plan (train and test, say) receive
            // the same per-class client proportions even though their sizes
            // differ.
            let proportions: Vec<Vec<f64>> = (0..ds.n_classes())
                .map(|_| {
                    if k == 1 {
                        Ok(vec![1.0])
                    } else {
                        Ok(Dirichlet::new_with_size(alpha, k)
                            .map_err(|_| Error::invalid("partition", "invalid Dirichlet alpha"))?
                            .sample(&mut stream))
                    }
                })
                .collect::<Result<_>>()?;
            for (mut class_indices, class_proportions) in
                ds.indices_by_class().into_iter().zip(proportions)
            {
                if class_indices.is_empty() {
                    continue;
                }
                let counts = largest_remainder_counts(&class_proportions, class_indices.len());
                class_indices.shuffle(&mut stream);
                let mut offset = 0;
                for (shard, take) in shards.iter_mut().zip(counts) {
                    shard
                        .indices
                        .extend_from_slice(&class_indices[offset..offset + take]);
                    offset += take;
                }
            }
        }
        PartitionScheme::OneClassPerClient => {
            for (c, class_indices) in ds.indices_by_class().into_iter().enumerate() {
                shards[c % k].indices.extend_from_slice(&class_indices);
            }
        }
        PartitionScheme::QuantitySkew {
            small_clients,
            small_size,
            large_size,
        } => {
            let n = ds.n_classes();
            let mut by_class = ds.indices_by_class();
            for class_indices in by_class.iter_mut() {
                class_indices.shuffle(&mut stream);
            }
            let mut cursors = vec![0usize; n];
            for shard in shards.iter_mut() {
                let size = if shard.client_id < small_clients {
                    small_size
                } else {
                    large_size
                };
                // The same number of samples of every class per client.
                let per_class = size / n;
                for (c, class_indices) in by_class.iter().enumerate() {
                    let start = cursors[c];
                    let end = start + per_class;
                    if end > class_indices.len() {
                        return Err(Error::invalid(
                            "partition",
                            "not enough samples for the requested quantity-skew sizes",
                        ));
                    }
                    shard.indices.extend_from_slice(&class_indices[start..end]);
                    cursors[c] = end;
                }
            }
        }
    }

    for shard in shards.iter_mut() {
        shard.indices.sort_unstable();
    }
    Ok(shards)
}

/// Per-client class-count matrix, `matrix[client][class]`.
pub fn class_count_matrix(ds: &LabeledDataset, shards: &[Shard]) -> Vec<Vec<usize>> {
    shards
        .iter()
        .map(|shard| {
            let mut counts = vec![0usize; ds.n_classes()];
            for &i in &shard.indices {
                counts[ds.labels()[i]] += 1;
            }
            counts
        })
        .collect()
}

pub fn shard_sizes(shards: &[Shard]) -> Vec<usize> {
    shards.iter().map(Shard::len).collect()
}

// ---------------------------------------------------------------------------
// Synthetic mixture
// ---------------------------------------------------------------------------

/// Isotropic Gaussian mixture used as the fast desk-scale dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub per_class: usize,
}

impl MixtureSpec {
    /// Four well-separated 2-D clusters near the corners of the square.
    pub fn default_2d(per_class: usize) -> Self {
        MixtureSpec {
            means: vec![
                vec![-0.6, -0.6],
                vec![0.6, -0.6],
                vec![-0.6, 0.6],
                vec![0.6, 0.6],
            ],
            std: 0.12,
            per_class,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.per_class == 0 {
            return Err(Error::invalid("mixture spec", "need classes and samples"));
        }
        if !(self.std >= 0.0) {
            return Err(Error::invalid("mixture spec", "std must be non-negative"));
        }
        let dim = self.dim();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("mixture spec", "mean dimensions disagree"));
        }
        for (i, a) in self.means.iter().enumerate() {
            for b in self.means.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::invalid(
                        "mixture spec",
                        "class means must be distinct",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Draws the mixture class by class, clipping samples to `[-1, 1]`.
pub fn synth_gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut stream = rng::setup_stream(seed, Stage::Mixture);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.n_classes();
    let dim = spec.dim();
    let mut data = Vec::with_capacity(n * spec.per_class * dim);
    let mut labels = Vec::with_capacity(n * spec.per_class);
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for m in mean {
                let v: f64 = m + spec.std * normal.sample(&mut stream);
                data.push(v.clamp(-1.0, 1.0));
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        Tensor::matrix(n * spec.per_class, dim, data)?,
        labels,
        Normalization::identity(),
    )
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// One epoch over a shard: a seeded permutation cut into batches of `B`,
/// final partial batch retained. An empty shard yields no batches.
pub fn batch_iter<R: Rng>(shard: &Shard, batch_size: usize, stream: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    if shard.is_empty() {
        return Vec::new();
    }
    let mut order = shard.indices.clone();
    order.shuffle(stream);
    order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_idx_images() -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.push(0xFF);
        bytes
    }

    #[test]
    fn parse_single_pixel_file() {
        let images = parse_idx_images(&tiny_idx_images()).unwrap();
        assert_eq!(images.data.shape(), &[1, 1]);
        assert_eq!(images.data.data(), &[1.0]);
    }

    #[test]
    fn parse_shape_arithmetic() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255, 0, 255]);
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!(images.data.shape(), &[2, 4]);
    }

    #[test]
    fn parse_rejects_wrong_magic_with_both_values() {
        let mut bytes = tiny_idx_images();
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("0x00000803"), "missing expected magic: {msg}");
        assert!(msg.contains("0x00000801"), "missing found magic: {msg}");
    }

    #[test]
    fn parse_rejects_truncation() {
        let mut bytes = tiny_idx_images();
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { .. })));
        assert!(matches!(
            parse_idx_images(&bytes[..7]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn labels_roundtrip_and_empty() {
        let file = serialize_idx_labels(&[0, 5, 9]);
        assert_eq!(parse_idx_labels(&file).unwrap(), vec![0, 5, 9]);
        let empty = serialize_idx_labels(&[]);
        assert_eq!(parse_idx_labels(&empty).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn pixel_extremes_map_exactly() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 255]);
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!(images.data.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn image_roundtrip_is_byte_identical() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        let payload: Vec<u8> = (0..18).map(|i| (i * 13 + 7) as u8).collect();
        bytes.extend_from_slice(&payload);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(serialize_idx_images(&parsed), bytes);
    }

    fn toy_dataset(per_class: usize, n_classes: usize) -> LabeledDataset {
        let total = per_class * n_classes;
        let mut data = Vec::with_capacity(total * 2);
        let mut labels = Vec::with_capacity(total);
        for c in 0..n_classes {
            for i in 0..per_class {
                data.push(c as f64 / n_classes as f64);
                data.push(i as f64 / per_class as f64);
                labels.push(c);
            }
        }
        LabeledDataset::new(
            Tensor::matrix(total, 2, data).unwrap(),
            labels,
            Normalization::identity(),
        )
        .unwrap()
    }

    #[test]
    fn subsample_full_ratio_is_identity() {
        let ds = toy_dataset(10, 3);
        let sub = subsample(&ds, 1.0, 4).unwrap();
        assert_eq!(sub.len(), ds.len());
        assert_eq!(sub.labels(), ds.labels());
    }

    #[test]
    fn subsample_takes_floor_per_class() {
        let ds = toy_dataset(10, 3);
        let sub = subsample(&ds, 0.25, 4).unwrap();
        assert_eq!(sub.len(), 6); // floor(2.5) per class
        let mut counts = [0usize; 3];
        for &l in sub.labels() {
            counts[l] += 1;
        }
        assert_eq!(counts, [2, 2, 2]);
    }

    #[test]
    fn subsample_is_deterministic() {
        let ds = toy_dataset(50, 4);
        let a = subsample(&ds, 0.3, 99).unwrap();
        let b = subsample(&ds, 0.3, 99).unwrap();
        assert_eq!(a, b);
        assert!(subsample(&ds, 0.0, 1).is_err());
        assert!(subsample(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn single_client_partition_covers_everything() {
        let ds = toy_dataset(8, 3);
        let plan = PartitionPlan {
            scheme: PartitionScheme::Dirichlet { alpha: 0.5 },
            clients: 1,
            ratio: 1.0,
            seed: 3,
        };
        let shards = partition(&ds, &plan).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), ds.len());
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let ds = toy_dataset(17, 5);
        for seed in 0..10 {
            let plan = PartitionPlan {
                scheme: PartitionScheme::Dirichlet { alpha: 0.2 },
                clients: 7,
                ratio: 1.0,
                seed,
            };
            let shards = partition(&ds, &plan).unwrap();
            let mut seen = vec![false; ds.len()];
            for shard in &shards {
                for &i in &shard.indices {
                    assert!(!seen[i], "index {i} assigned twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|s| *s), "partition does not cover dataset");
        }
    }

    #[test]
    fn huge_alpha_approaches_uniform_shares() {
        let ds = toy_dataset(100, 4);
        let plan = PartitionPlan {
            scheme: PartitionScheme::Dirichlet { alpha: 1e6 },
            clients: 10,
            ratio: 1.0,
            seed: 11,
        };
        let shards = partition(&ds, &plan).unwrap();
        let matrix = class_count_matrix(&ds, &shards);
        for row in matrix {
            for count in row {
                // 1/K of 100 per class is 10; allow ±10% plus rounding slack.
                assert!((9..=11).contains(&count), "share {count} too far from 10");
            }
        }
    }

    #[test]
    fn tiny_alpha_concentrates_classes() {
        let ds = toy_dataset(200, 10);
        let plan = PartitionPlan {
            scheme: PartitionScheme::Dirichlet { alpha: 0.05 },
            clients: 20,
            ratio: 1.0,
            seed: 0,
        };
        let shards = partition(&ds, &plan).unwrap();
        let matrix = class_count_matrix(&ds, &shards);
        let mut dominant_shares: Vec<f64> = Vec::new();
        for (shard, row) in shards.iter().zip(matrix) {
            if shard.is_empty() {
                continue;
            }
            let max = row.iter().max().copied().unwrap_or(0);
            dominant_shares.push(max as f64 / shard.len() as f64);
        }
        dominant_shares.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dominant_shares[dominant_shares.len() / 2];
        assert!(
            median >= 0.8,
            "median dominant-class share {median} too low for alpha = 0.05"
        );
    }

    #[test]
    fn one_class_per_client_partition() {
        let ds = toy_dataset(6, 4);
        let plan = PartitionPlan {
            scheme: PartitionScheme::OneClassPerClient,
            clients: 4,
            ratio: 1.0,
            seed: 0,
        };
        let shards = partition(&ds, &plan).unwrap();
        let matrix = class_count_matrix(&ds, &shards);
        for (c, row) in matrix.iter().enumerate() {
            for (class, count) in row.iter().enumerate() {
                assert_eq!(*count, if class == c { 6 } else { 0 });
            }
        }
    }

    #[test]
    fn quantity_skew_partition_sizes_and_balance() {
        let ds = toy_dataset(400, 4);
        let plan = PartitionPlan {
            scheme: PartitionScheme::QuantitySkew {
                small_clients: 2,
                small_size: 8,
                large_size: 40,
            },
            clients: 4,
            ratio: 1.0,
            seed: 2,
        };
        let shards = partition(&ds, &plan).unwrap();
        assert_eq!(shard_sizes(&shards), vec![8, 8, 40, 40]);
        let matrix = class_count_matrix(&ds, &shards);
        assert_eq!(matrix[0], vec![2, 2, 2, 2]);
        assert_eq!(matrix[3], vec![10, 10, 10, 10]);
    }

    #[test]
    fn mixture_degenerate_std_collapses_to_means() {
        let mut spec = MixtureSpec::default_2d(3);
        spec.std = 0.0;
        let ds = synth_gaussian_mixture(&spec, 1).unwrap();
        for (i, &label) in ds.labels().iter().enumerate() {
            assert_eq!(ds.samples().row(i), spec.means[label].as_slice());
        }
    }

    #[test]
    fn mixture_counts_and_balance() {
        let ds = synth_gaussian_mixture(&MixtureSpec::default_2d(500), 7).unwrap();
        assert_eq!(ds.len(), 2000);
        let mut counts = [0usize; 4];
        for &l in ds.labels() {
            counts[l] += 1;
        }
        assert_eq!(counts, [500; 4]);
    }

    #[test]
    fn batch_iter_covers_shard_exactly_once() {
        let shard = Shard {
            client_id: 0,
            indices: (0..70).collect(),
        };
        let mut stream = rng::setup_stream(1, Stage::LocalTrain);
        let batches = batch_iter(&shard, 32, &mut stream);
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![32, 32, 6]
        );
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, shard.indices);
    }

    #[test]
    fn batch_iter_empty_shard_is_empty() {
        let shard = Shard {
            client_id: 0,
            indices: Vec::new(),
        };
        let mut stream = rng::setup_stream(1, Stage::LocalTrain);
        assert!(batch_iter(&shard, 8, &mut stream).is_empty());
    }

    #[test]
    fn labels_are_reindexed_densely() {
        let samples = Tensor::matrix(3, 1, vec![0.0, 0.1, 0.2]).unwrap();
        let ds = LabeledDataset::new(samples, vec![5, 9, 5], Normalization::identity()).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.n_classes(), 2);
    }
}
