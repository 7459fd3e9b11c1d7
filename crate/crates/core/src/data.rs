//! Training data: synthetic generation, file ingestion, and per-device
//! sharding including Dirichlet non-IID partitions.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device::DeviceId;
use crate::error::{Result, SimError};
use crate::rng::{substream, tag};

/// A labeled classification dataset with row-major flat features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(SimError::Config("dataset is empty".into()));
        }
        if self.features.len() != self.labels.len() * self.dim {
            return Err(SimError::Contract("feature buffer does not match labels x dim".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(SimError::Config(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        Ok(())
    }
}

/// Parameters for the synthetic Gaussian-mixture dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Distance of class means from the origin (in feature space).
    pub class_sep: f64,
    /// Isotropic noise around each class mean.
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            features: 64,
            train_samples: 1000,
            test_samples: 400,
            class_sep: 3.0,
            noise_std: 1.0,
        }
    }
}

fn gaussian_vec(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn mixture_split(spec: &SyntheticSpec, means: &[Vec<f64>], samples: usize, seed: u64, stream: u64) -> Dataset {
    let mut rng = substream(seed, tag::DATASET, stream, 1);
    let mut features = Vec::with_capacity(samples * spec.features);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % spec.classes;
        let mean = &means[class];
        for d in 0..spec.features {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(mean[d] + spec.noise_std * noise);
        }
        labels.push(class);
    }
    Dataset { features, labels, dim: spec.features, num_classes: spec.classes }
}

/// Generates balanced train/test Gaussian-mixture datasets.
///
/// Class means are random directions scaled to `class_sep`; both splits draw
/// around the same means from disjoint sub-streams of `seed`.
pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.features == 0 {
        return Err(SimError::Config("synthetic data needs >=2 classes and >=1 feature".into()));
    }
    if spec.train_samples == 0 || spec.test_samples == 0 {
        return Err(SimError::Config("synthetic sample counts must be positive".into()));
    }
    let mut mean_rng = substream(seed, tag::DATASET, 0, 0);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v = gaussian_vec(&mut mean_rng, spec.features);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm * spec.class_sep).collect()
        })
        .collect();
    let train = mixture_split(spec, &means, spec.train_samples, seed, 1);
    let test = mixture_split(spec, &means, spec.test_samples, seed, 2);
    Ok((train, test))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image/label file pair into a dataset (pixels scaled to [0,1]).
pub fn read_idx_dataset(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images)?);
    if read_be_u32(&mut img)? != IDX_IMAGES_MAGIC {
        return Err(SimError::Parse(format!("{}: bad IDX image magic", images.display())));
    }
    let n = read_be_u32(&mut img)? as usize;
    let rows = read_be_u32(&mut img)? as usize;
    let cols = read_be_u32(&mut img)? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; n * dim];
    img.read_exact(&mut pixels)?;

    let mut lab = std::io::BufReader::new(std::fs::File::open(labels)?);
    if read_be_u32(&mut lab)? != IDX_LABELS_MAGIC {
        return Err(SimError::Parse(format!("{}: bad IDX label magic", labels.display())));
    }
    let n_labels = read_be_u32(&mut lab)? as usize;
    if n_labels != n {
        return Err(SimError::Parse(format!("IDX pair mismatch: {n} images vs {n_labels} labels")));
    }
    let mut raw_labels = vec![0u8; n];
    lab.read_exact(&mut raw_labels)?;

    let dataset = Dataset {
        features: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: raw_labels.iter().map(|&l| l as usize).collect(),
        dim,
        num_classes,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `label,feature...` rows (no header).
pub fn write_csv_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..dataset.len() {
        write!(out, "{}", dataset.labels[i])?;
        for v in dataset.row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a `label,feature...` CSV produced by [`write_csv_dataset`].
pub fn read_csv_dataset(path: &Path, num_classes: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| SimError::Parse(format!("{}:{}: bad label", path.display(), lineno + 1)))?;
        let row: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| SimError::Parse(format!("{}:{}: bad feature", path.display(), lineno + 1)))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(SimError::Parse(format!("{}:{}: ragged row", path.display(), lineno + 1)))
            }
            _ => {}
        }
        labels.push(label);
        features.extend(row);
    }
    let dataset = Dataset { features, labels, dim: dim.unwrap_or(0), num_classes };
    dataset.validate()?;
    Ok(dataset)
}

/// How training data is spread over the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionMode {
    Iid,
    /// The given fraction of devices holds Dirichlet-skewed data.
    NonIid { frac: f64 },
}

/// Per-device sample assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardSet {
    /// Sample indices per device, indexed by device id.
    pub shards: Vec<Vec<usize>>,
    /// Per-device class histograms.
    pub histograms: Vec<Vec<usize>>,
    pub num_classes: usize,
}

impl ShardSet {
    pub fn shard(&self, device: DeviceId) -> Result<&[usize]> {
        self.shards
            .get(device as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::Lookup(format!("no shard for device {device}")))
    }

    pub fn histogram(&self, device: DeviceId) -> Result<&[usize]> {
        self.histograms
            .get(device as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::Lookup(format!("no shard for device {device}")))
    }
}

/// Number of classes with at least one sample on the device.
pub fn classes_present(shards: &ShardSet, device: DeviceId) -> Result<usize> {
    Ok(shards.histogram(device)?.iter().filter(|&&c| c > 0).count())
}

// Largest-remainder apportionment of `total` items by `weights`.
// Ties on the fractional part break toward the lower index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Splits the dataset into per-device shards.
///
/// IID devices receive an as-equal-as-possible stratified slice of every
/// class. Under `NonIid { frac }`, `ceil(frac * N)` devices (a seeded draw)
/// instead split each class's remaining samples by a `Dirichlet(concentration)`
/// draw — one draw per class over the non-IID devices. A device that would
/// end up empty is topped up by moving one sample from the largest shard.
pub fn partition_dataset(
    dataset: &Dataset,
    n_devices: usize,
    mode: PartitionMode,
    concentration: f64,
    seed: u64,
) -> Result<ShardSet> {
    dataset.validate()?;
    if n_devices == 0 {
        return Err(SimError::Config("cannot partition over zero devices".into()));
    }
    if dataset.len() < n_devices {
        return Err(SimError::Config(format!(
            "dataset has {} samples for {} devices",
            dataset.len(),
            n_devices
        )));
    }
    if !(concentration > 0.0) {
        return Err(SimError::Config("Dirichlet concentration must be positive".into()));
    }
    let frac = match mode {
        PartitionMode::Iid => 0.0,
        PartitionMode::NonIid { frac } => {
            if !(0.0..=1.0).contains(&frac) {
                return Err(SimError::Config("non-IID fraction must be in [0,1]".into()));
            }
            frac
        }
    };

    let n_noniid = (frac * n_devices as f64).ceil() as usize;
    let noniid_set: BTreeSet<usize> = {
        let mut ids: Vec<usize> = (0..n_devices).collect();
        ids.shuffle(&mut substream(seed, tag::PARTITION, 0, 0));
        ids.into_iter().take(n_noniid).collect()
    };
    let iid_devices: Vec<usize> = (0..n_devices).filter(|d| !noniid_set.contains(d)).collect();
    let noniid_devices: Vec<usize> = noniid_set.iter().copied().collect();

    // Class-major deal: shuffle each class's indices, give the IID devices
    // their stratified share, then Dirichlet-split the remainder.
    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        class_indices[label].push(i);
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for (class, indices) in class_indices.iter_mut().enumerate() {
        indices.shuffle(&mut substream(seed, tag::PARTITION, 1, class as u64));
        let n_c = indices.len();
        let iid_total = if noniid_devices.is_empty() {
            n_c
        } else if iid_devices.is_empty() {
            0
        } else {
            ((n_c * iid_devices.len()) as f64 / n_devices as f64).round() as usize
        };
        let mut cursor = 0;
        if !iid_devices.is_empty() {
            let base = iid_total / iid_devices.len();
            let rem = iid_total % iid_devices.len();
            for (pos, &dev) in iid_devices.iter().enumerate() {
                // Rotate which devices absorb the remainder so no device is
                // systematically larger across classes.
                let extra = ((pos + iid_devices.len() - class % iid_devices.len()) % iid_devices.len()) < rem;
                let take = base + usize::from(extra);
                shards[dev].extend_from_slice(&indices[cursor..cursor + take]);
                cursor += take;
            }
        }
        let rest = n_c - cursor;
        if !noniid_devices.is_empty() && rest > 0 {
            let weights: Vec<f64> = if noniid_devices.len() == 1 {
                vec![1.0]
            } else {
                Dirichlet::new_with_size(concentration, noniid_devices.len())
                    .map_err(|e| SimError::Config(format!("bad Dirichlet parameters: {e}")))?
                    .sample(&mut substream(seed, tag::PARTITION, 2, class as u64))
            };
            for (&dev, take) in noniid_devices.iter().zip(apportion(rest, &weights)) {
                shards[dev].extend_from_slice(&indices[cursor..cursor + take]);
                cursor += take;
            }
        }
        debug_assert_eq!(cursor, n_c);
    }

    // Rebalance: every device must hold at least one sample.
    loop {
        let Some(empty) = shards.iter().position(Vec::is_empty) else { break };
        let donor = (0..n_devices)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("nonempty fleet");
        if shards[donor].len() <= 1 {
            return Err(SimError::Config("dataset too small to give every device a sample".into()));
        }
        let moved = shards[donor].pop().expect("donor has samples");
        shards[empty].push(moved);
    }

    for shard in &mut shards {
        shard.sort_unstable();
    }
    let histograms = shards
        .iter()
        .map(|shard| {
            let mut h = vec![0usize; dataset.num_classes];
            for &i in shard {
                h[dataset.labels[i]] += 1;
            }
            h
        })
        .collect();
    Ok(ShardSet { shards, histograms, num_classes: dataset.num_classes })
}

/// Mean per-device class entropy (nats) — a skew summary used in tests.
pub fn mean_class_entropy(shards: &ShardSet) -> f64 {
    let per_device: Vec<f64> = shards
        .histograms
        .iter()
        .map(|h| {
            let total: usize = h.iter().sum();
            if total == 0 {
                return 0.0;
            }
            h.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total as f64;
                    -p * p.ln()
                })
                .sum()
        })
        .collect();
    per_device.iter().sum::<f64>() / per_device.len() as f64
}
