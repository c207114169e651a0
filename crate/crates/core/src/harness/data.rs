use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Segmentation,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub kind: TaskKind,
    pub volume_shape: [usize; 3],
    pub classes: usize,
    pub samples: usize,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl SynthTask {
    pub fn segmentation(volume_shape: [usize; 3], classes: usize, samples: usize, seed: u64) -> Self {
        SynthTask { kind: TaskKind::Segmentation, volume_shape, classes, samples, seed, noise: 0.1 }
    }

    pub fn classification(volume_shape: [usize; 3], classes: usize, samples: usize, seed: u64) -> Self {
        SynthTask { kind: TaskKind::Classification, volume_shape, classes, samples, seed, noise: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, D, H, W]`
    pub volume: Tensor,
    /// One label per voxel (segmentation) or a single label (classification).
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[N, 1, D, H, W]`
    pub inputs: Tensor,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: SynthTask,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Consecutive batches of `batch_size`; a trailing partial batch is dropped
    /// unless it is the only one.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        let order: Vec<usize> = (0..self.samples.len()).collect();
        self.batches_in_order(&order, batch_size)
    }

    pub fn batches_in_order(&self, order: &[usize], batch_size: usize) -> Vec<Batch> {
        let bs = batch_size.max(1).min(order.len().max(1));
        order.chunks(bs).filter(|c| c.len() == bs).map(|c| self.batch(c)).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let [d, h, w] = self.task.volume_shape;
        let mut data = Vec::with_capacity(indices.len() * d * h * w);
        let mut targets = Vec::new();
        for &i in indices {
            data.extend_from_slice(self.samples[i].volume.data());
            targets.extend_from_slice(&self.samples[i].target);
        }
        let inputs = Tensor::new(vec![indices.len(), 1, d, h, w], data).expect("batch shape");
        Batch { inputs, targets }
    }
}

#[derive(Clone, Copy)]
enum Blob {
    Sphere { c: [f64; 3], r: f64 },
    Box { lo: [usize; 3], hi: [usize; 3] },
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Self {
        let min = *shape.iter().min().expect("3 extents") as f64;
        let r = rng.random_range((min / 8.0).max(1.0)..=(min / 4.0).max(1.0));
        let c = [0, 1, 2].map(|a| rng.random_range(0..shape[a]) as f64);
        if rng.random_bool(0.5) {
            Blob::Sphere { c, r }
        } else {
            let half = r.round() as usize;
            let lo = [0, 1, 2].map(|a| (c[a] as usize).saturating_sub(half));
            let hi = [0, 1, 2].map(|a| (c[a] as usize + half).min(shape[a] - 1));
            Blob::Box { lo, hi }
        }
    }

    fn center(&self) -> [usize; 3] {
        match *self {
            Blob::Sphere { c, .. } => c.map(|v| v as usize),
            Blob::Box { lo, hi } => [0, 1, 2].map(|a| (lo[a] + hi[a]) / 2),
        }
    }

    fn contains(&self, p: [usize; 3]) -> bool {
        match *self {
            Blob::Sphere { c, r } => {
                (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>() <= r * r
            }
            Blob::Box { lo, hi } => (0..3).all(|a| lo[a] <= p[a] && p[a] <= hi[a]),
        }
    }
}

/// Seed-deterministic synthetic volumes.
///
/// Segmentation: every sample contains one blob (sphere or box) of each
/// foreground class on a class-0 background; voxel intensity encodes the
/// class. Classification: labels cycle through all classes (then the sample
/// order is shuffled); class `c` has `c + 1` blobs of intensity `(c + 1) / C`.
pub fn gen_synth(task: &SynthTask) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let noise = Normal::new(0.0, task.noise.max(0.0)).expect("finite noise");
    let [d, h, w] = task.volume_shape;
    let voxels = d * h * w;
    let coords = |i: usize| [i / (h * w), (i / w) % h, i % w];
    let intensity = |k: usize| (k as f64 + 1.0) / task.classes as f64;

    let mut samples = Vec::with_capacity(task.samples);
    for s in 0..task.samples {
        let mut values = vec![0.0; voxels];
        let target = match task.kind {
            TaskKind::Segmentation => {
                let mut labels = vec![0usize; voxels];
                let blobs: Vec<(usize, Blob)> =
                    (1..task.classes).map(|k| (k, Blob::random(&mut rng, task.volume_shape))).collect();
                for &(k, blob) in &blobs {
                    for (i, label) in labels.iter_mut().enumerate() {
                        if blob.contains(coords(i)) {
                            *label = k;
                        }
                    }
                }
                // later blobs may cover earlier ones; keep every class visible
                for &(k, blob) in &blobs {
                    let [z, y, x] = blob.center();
                    labels[(z * h + y) * w + x] = k;
                }
                for (v, &k) in values.iter_mut().zip(&labels) {
                    *v = if k == 0 { 0.0 } else { intensity(k - 1) };
                }
                labels
            }
            TaskKind::Classification => {
                let class = s % task.classes;
                for _ in 0..=class {
                    let blob = Blob::random(&mut rng, task.volume_shape);
                    for (i, v) in values.iter_mut().enumerate() {
                        if blob.contains(coords(i)) {
                            *v = intensity(class);
                        }
                    }
                }
                vec![class]
            }
        };
        for v in values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        let volume = Tensor::new(vec![1, d, h, w], values).expect("volume shape");
        samples.push(Sample { volume, target });
    }
    if task.kind == TaskKind::Classification {
        samples.shuffle(&mut rng);
    }
    Dataset { task: *task, samples }
}
