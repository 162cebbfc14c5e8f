//! Recordings, recording-granular splits, normalization and mini-batch sampling.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use steerlab_autodiff::Tensor;

use crate::error::{ensure, Result};
use crate::rng::Rng;

/// One expert-driven step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Main-road arc length, meters.
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Realized steering-wheel angle after this step's actuation, degrees.
    pub eff_deg: f64,
    /// Expert steering-wheel command, degrees.
    pub label: f64,
    /// Within the swerve-analysis window of a fork.
    pub fork_window: bool,
    /// Flattened observation (preview points then speed).
    pub observation: Vec<f64>,
}

/// Contiguous expert drive on one track.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub track_seed: u64,
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Strictly increasing `t` with uniform spacing `dt`, consistent widths, finite values.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.dt > 0.0, Data, "recording dt must be positive");
        let width = self.samples.first().map_or(0, |s| s.observation.len());
        for (i, s) in self.samples.iter().enumerate() {
            ensure!(
                s.observation.len() == width,
                Data,
                "sample {i} has {} features, expected {width}",
                s.observation.len()
            );
            ensure!(
                s.label.is_finite() && s.observation.iter().all(|v| v.is_finite()),
                Data,
                "sample {i} is not finite"
            );
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            ensure!(
                step > 0.0 && (step - self.dt).abs() <= 1e-9 * self.dt.max(w[1].t.abs()),
                Data,
                "non-uniform time step {step} after sample {i}"
            );
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.label)
    }
}

/// Recording indices assigned to training and validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles recording indices and assigns the first `floor(fraction·n)` to training.
pub fn split(recordings: usize, train_fraction: f64, rng: &mut Rng) -> Result<Split> {
    ensure!(recordings >= 2, Data, "need at least 2 recordings to split, got {recordings}");
    ensure!(
        train_fraction > 0.0 && train_fraction < 1.0,
        Data,
        "train fraction must be in (0, 1), got {train_fraction}"
    );
    let n_train = (train_fraction * recordings as f64).floor() as usize;
    ensure!(
        n_train >= 1 && n_train < recordings,
        Data,
        "fraction {train_fraction} of {recordings} recordings leaves an empty split"
    );
    let mut idx: Vec<usize> = (0..recordings).collect();
    idx.shuffle(rng);
    let validation = idx.split_off(n_train);
    Ok(Split { train: idx, validation })
}

/// Leading `floor(fraction·n)` training recordings (at least one), so smaller
/// fractions are nested in larger ones.
pub fn subset(train: &[usize], fraction: f64) -> Result<Vec<usize>> {
    ensure!(
        fraction > 0.0 && fraction <= 1.0,
        Data,
        "data fraction must be in (0, 1], got {fraction}"
    );
    ensure!(!train.is_empty(), Data, "empty training set");
    let n = ((fraction * train.len() as f64).floor() as usize).max(1);
    Ok(train[..n].to_vec())
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features with zero variance; their scale is 1.
    pub constant: Vec<bool>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            if n == 0 {
                sum = vec![0.0; r.len()];
            }
            ensure!(r.len() == sum.len(), Data, "ragged observation rows");
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        ensure!(n > 0, Data, "cannot normalize an empty training set");
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        sq.resize(mean.len(), 0.0);
        for r in &rows {
            for ((q, v), m) in sq.iter_mut().zip(r.iter()).zip(&mean) {
                *q += (v - m).powi(2);
            }
        }
        let mut constant = Vec::with_capacity(mean.len());
        let scale = sq
            .iter()
            .map(|q| {
                let sd = (q / n as f64).sqrt();
                let flat = sd <= 1e-12;
                constant.push(flat);
                if flat {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, scale, constant })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| (v - m) / s),
        );
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(row.len());
        self.apply_into(row, &mut out);
        out
    }
}

/// Flattened, normalized frames of several recordings.
#[derive(Clone, Debug)]
pub struct FrameSet {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<f64>,
    /// Start offset of each recording, plus the total length.
    bounds: Vec<usize>,
    /// Valid consecutive pairs `(i, i + 1)` within one recording.
    pairs: Vec<usize>,
}

impl FrameSet {
    pub fn new<'a>(recordings: impl IntoIterator<Item = &'a Recording>, normalizer: &Normalizer) -> Result<Self> {
        let dim = normalizer.dim();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut bounds = vec![0];
        let mut pairs = Vec::new();
        for rec in recordings {
            for s in &rec.samples {
                ensure!(
                    s.observation.len() == dim,
                    Data,
                    "observation width {} does not match normalizer width {dim}",
                    s.observation.len()
                );
                normalizer.apply_into(&s.observation, &mut features);
                labels.push(s.label);
            }
            let start = *bounds.last().expect("non-empty");
            let end = labels.len();
            pairs.extend(start..end.saturating_sub(1).max(start));
            bounds.push(end);
        }
        Ok(Self {
            features,
            dim,
            labels,
            bounds,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn recording_count(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Recording that frame `i` belongs to.
    pub fn recording_of(&self, i: usize) -> usize {
        self.bounds.partition_point(|&b| b <= i) - 1
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Frames `indices` as a batch without pair links.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Batch {
            features: Tensor::matrix(indices.len(), self.dim, features)?,
            labels,
            pairs: Vec::new(),
        })
    }

    /// `size` frames drawn i.i.d. uniformly.
    pub fn sample_frames(&self, size: usize, rng: &mut Rng) -> Result<Batch> {
        ensure!(size >= 1, Data, "batch size must be at least 1");
        ensure!(!self.is_empty(), Data, "empty training set");
        let idx: Vec<usize> = (0..size).map(|_| rng.gen_range(0..self.len())).collect();
        self.gather(&idx)
    }

    /// `pairs` consecutive pairs drawn i.i.d. uniformly, flattened to `2·pairs`
    /// frames with links `(2k, 2k + 1)`.
    pub fn sample_pairs(&self, pairs: usize, rng: &mut Rng) -> Result<Batch> {
        ensure!(pairs >= 1, Data, "batch size must be at least 1");
        ensure!(!self.pairs.is_empty(), Data, "no recording has two consecutive frames");
        let mut idx = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            let first = self.pairs[rng.gen_range(0..self.pairs.len())];
            idx.push(first);
            idx.push(first + 1);
        }
        let mut batch = self.gather(&idx)?;
        batch.pairs = (0..pairs).map(|k| (2 * k, 2 * k + 1)).collect();
        Ok(batch)
    }

    /// Consecutive evaluation batches covering every frame once.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |start| self.gather(&(start..(start + size).min(self.len())).collect::<Vec<_>>()))
    }
}

/// Normalized observations with labels; `pairs` link consecutive frames.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Tensor,
    /// Steering-wheel labels, degrees.
    pub labels: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Equal-width histogram over `[lo, hi]`; returns `(bin center, count)`.
/// Values outside the range are dropped.
pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize, lo: f64, hi: f64) -> Result<Vec<(f64, usize)>> {
    ensure!(bins >= 1, InvalidArgument, "histogram needs at least one bin");
    ensure!(hi > lo, InvalidArgument, "histogram range [{lo}, {hi}] is empty");
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        if v >= lo && v <= hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect())
}
