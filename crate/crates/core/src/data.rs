//! Dataset sources and the planted-cluster partitioner.
//!
//! Two sources are supported: a synthetic Gaussian-blob generator (one blob
//! per class on deterministic pseudo-orthogonal directions) and the IDX
//! binary format used by MNIST-style archives. The partitioner assigns
//! disjoint label sets to client groups, planting the ground-truth clusters
//! that the clustering metrics are scored against.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::rng::standard_normal;
use crate::scalar::Scalar;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labeled feature pool.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::contract(format!(
                "dataset has {} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            features,
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

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Subset of the dataset selected by sample indices.
    pub fn select(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// View of the whole dataset as a training batch.
    pub fn as_batch(&self) -> crate::model::Batch<T> {
        crate::model::Batch {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Batch over a subset of samples.
    pub fn batch(&self, indices: &[usize]) -> crate::model::Batch<T> {
        crate::model::Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One planted cluster: a client group sharing a label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSpec {
    pub client_count: usize,
    pub labels: Vec<usize>,
    pub samples_per_label_per_client: usize,
}

/// Planted-cluster partition layout: disjoint label sets per client group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionSpec {
    pub clusters: Vec<ClusterSpec>,
}

impl PartitionSpec {
    pub fn total_clients(&self) -> usize {
        self.clusters.iter().map(|c| c.client_count).sum()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Same layout with a different per-client-per-label sample count
    /// (used to carve matching test shards out of a held-out pool).
    pub fn with_samples_per_label(&self, per: usize) -> PartitionSpec {
        PartitionSpec {
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterSpec {
                    client_count: c.client_count,
                    labels: c.labels.clone(),
                    samples_per_label_per_client: per,
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::contract("partition needs at least one cluster"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (q, cluster) in self.clusters.iter().enumerate() {
            if cluster.client_count == 0 {
                return Err(Error::contract(format!("cluster {q} has zero clients")));
            }
            if cluster.labels.is_empty() {
                return Err(Error::contract(format!("cluster {q} has no labels")));
            }
            if cluster.samples_per_label_per_client == 0 {
                return Err(Error::contract(format!(
                    "cluster {q} has zero samples per label per client"
                )));
            }
            for &label in &cluster.labels {
                if !seen.insert(label) {
                    return Err(Error::contract(format!(
                        "label {label} appears in more than one cluster"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One client's shard plus its planted cluster id.
#[derive(Debug, Clone)]
pub struct ClientDataset<T> {
    pub client_id: usize,
    pub shard: Dataset<T>,
    pub true_cluster: usize,
    pub sample_count: usize,
}

/// Generate `num_classes * per_class` points; class `c` is an isotropic
/// Gaussian of deviation `noise` centered at `separation` times a fixed
/// pseudo-orthogonal unit direction.
pub fn generate_synthetic<T: Scalar>(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<Dataset<T>> {
    if num_classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::contract(
            "generate_synthetic requires positive class count, dim and per_class",
        ));
    }
    if noise <= 0.0 {
        return Err(Error::contract("noise must be > 0"));
    }
    let directions = class_directions(num_classes, dim);
    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (class, direction) in directions.iter().enumerate() {
        for _ in 0..per_class {
            for &d in direction {
                let v = separation * d + noise * standard_normal(rng);
                data.push(T::real(v));
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(num_classes * per_class, dim, data)?;
    Dataset::new(features, labels, num_classes)
}

/// Deterministic unit directions for class means: a fixed-seed Gaussian
/// matrix pushed through Gram-Schmidt. Once the dimension is exhausted the
/// remaining directions are merely normalized, so any class count works.
fn class_directions(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    // The direction basis is part of the generator's definition, so it uses
    // its own fixed stream rather than the caller's.
    let mut rng = crate::rng::stream(0x5EED_D1A5, &[0xD1]);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        for prev in &directions {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            // Dimension exhausted: fall back to a fresh normalized draw.
            let mut fresh: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            let n = fresh.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut fresh {
                *x /= n;
            }
            v = fresh;
        }
        directions.push(v);
    }
    directions
}

/// Load an IDX image/label file pair into a dataset with pixel values
/// scaled from `[0, 255]` bytes to `[0, 1]`.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    let images_raw = read_file(images_path)?;
    let labels_raw = read_file(labels_path)?;

    let magic = read_u32_be(&images_raw, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            detail: format!(
                "expected image magic 0x{IDX_IMAGES_MAGIC:08x}, observed 0x{magic:08x}"
            ),
        });
    }
    let count = read_u32_be(&images_raw, 4, images_path)? as usize;
    let rows = read_u32_be(&images_raw, 8, images_path)? as usize;
    let cols = read_u32_be(&images_raw, 12, images_path)? as usize;
    let dim = rows * cols;
    let pixel_bytes = images_raw.len().saturating_sub(16);
    if pixel_bytes != count * dim {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            detail: format!(
                "expected {} pixel bytes for {count} images of {rows}x{cols}, found {pixel_bytes}",
                count * dim
            ),
        });
    }

    let lmagic = read_u32_be(&labels_raw, 0, labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            detail: format!(
                "expected label magic 0x{IDX_LABELS_MAGIC:08x}, observed 0x{lmagic:08x}"
            ),
        });
    }
    let lcount = read_u32_be(&labels_raw, 4, labels_path)? as usize;
    if labels_raw.len().saturating_sub(8) != lcount {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            detail: format!(
                "expected {lcount} label bytes, found {}",
                labels_raw.len().saturating_sub(8)
            ),
        });
    }
    if count != lcount {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: lcount,
        });
    }

    let scale = 1.0 / 255.0;
    let data: Vec<T> = images_raw[16..]
        .iter()
        .map(|&b| T::real(b as f64 * scale))
        .collect();
    let labels: Vec<usize> = labels_raw[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let features = Matrix::from_vec(count, dim, data)?;
    Dataset::new(features, labels, num_classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn read_u32_be(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(offset..offset + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("file truncated before offset {}", offset + 4),
            ),
        })?;
    Ok(u32::from_be_bytes(bytes))
}

/// Split a pool into per-client shards according to the planted-cluster
/// layout: each client in cluster `q` receives exactly
/// `samples_per_label_per_client` samples of every label in `q`'s label
/// set, drawn without replacement.
pub fn partition_planted<T: Scalar>(
    ds: &Dataset<T>,
    spec: &PartitionSpec,
    rng: &mut impl Rng,
) -> Result<Vec<ClientDataset<T>>> {
    spec.validate()?;

    // Pool indices per label, in dataset order.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &label) in ds.labels.iter().enumerate() {
        pools[label].push(i);
    }

    // Capacity check before consuming anything.
    for cluster in &spec.clusters {
        let needed = cluster.client_count * cluster.samples_per_label_per_client;
        for &label in &cluster.labels {
            if label >= ds.num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: ds.num_classes,
                });
            }
            let available = pools[label].len();
            if available < needed {
                return Err(Error::Capacity {
                    label,
                    needed,
                    available,
                });
            }
        }
    }

    let mut clients = Vec::with_capacity(spec.total_clients());
    let mut client_id = 0;
    for (q, cluster) in spec.clusters.iter().enumerate() {
        let per = cluster.samples_per_label_per_client;
        // Shuffle each label pool once per cluster, then deal contiguous
        // slices to the cluster's clients.
        let mut dealt: Vec<Vec<usize>> = Vec::with_capacity(cluster.labels.len());
        for &label in &cluster.labels {
            let mut pool = std::mem::take(&mut pools[label]);
            pool.shuffle(rng);
            dealt.push(pool);
        }
        for c in 0..cluster.client_count {
            let mut indices = Vec::with_capacity(cluster.labels.len() * per);
            for dealt_pool in &dealt {
                indices.extend_from_slice(&dealt_pool[c * per..(c + 1) * per]);
            }
            let shard = ds.select(&indices);
            clients.push(ClientDataset {
                client_id,
                shard,
                true_cluster: q,
                sample_count: indices.len(),
            });
            client_id += 1;
        }
    }
    Ok(clients)
}
