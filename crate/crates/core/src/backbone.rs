//! Shared observation encoder with a late action-fusion point.
//!
//! The encoder runs once per observation. Candidate actions only enter in the
//! fusion layer, so scoring 512 candidates costs one encoder pass plus a cheap
//! per-candidate head.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use steerlab_autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Road preview in the ego frame plus current speed.
///
/// `preview` holds `K` points `(x forward, y left)` in meters, sorted by `x`,
/// with unused slots exactly `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub preview: Vec<[f64; 2]>,
    pub speed: f64,
}

impl Observation {
    pub fn dim_for(points: usize) -> usize {
        2 * points + 1
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.preview.len())
    }

    /// Flattened `[x1, y1, ..., xK, yK, speed]`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim());
        for p in &self.preview {
            f.extend_from_slice(p);
        }
        f.push(self.speed);
        f
    }

    pub fn from_features(features: &[f64]) -> Result<Self> {
        ensure!(
            features.len() % 2 == 1,
            InvalidArgument,
            "observation vector must have odd length, got {}",
            features.len()
        );
        let k = features.len() / 2;
        let preview = (0..k).map(|i| [features[2 * i], features[2 * i + 1]]).collect();
        Ok(Self {
            preview,
            speed: features[2 * k],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.speed.is_finite() && self.preview.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Width of the layer where actions (or head outputs) join the features.
    pub fusion_width: usize,
    /// Number of sine/cosine pairs added to the normalized action input.
    pub action_harmonics: usize,
    /// Highest harmonic frequency, in cycles per half range. `0` uses the
    /// integer harmonics `1..=action_harmonics`; otherwise frequencies are
    /// spaced geometrically from 1 to this value.
    pub action_max_frequency: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 64],
            activation: Activation::Tanh,
            fusion_width: 32,
            action_harmonics: 0,
            action_max_frequency: 0.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.widths.is_empty(), Config, "backbone needs at least one hidden layer");
        ensure!(
            self.widths.iter().all(|&w| w > 0) && self.fusion_width > 0,
            Config,
            "backbone widths must be positive"
        );
        ensure!(
            self.action_max_frequency == 0.0 || self.action_max_frequency >= 1.0,
            Config,
            "action max frequency must be 0 or at least 1, got {}",
            self.action_max_frequency
        );
        Ok(())
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    /// Uniform fan-in initialization: `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w = store.insert(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))?)?;
        let b = store.insert(format!("{name}.b"), Tensor::matrix(1, fan_out, draw(fan_out))?)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let rows = g.value(x).dims2().map(|d| d.0).unwrap_or(1);
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        let bb = g.repeat_rows(b, rows)?;
        Ok(g.add(xw, bb)?)
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).dims2().map(|d| d.1).unwrap_or(0)
    }
}

/// Candidate actions, already normalized to `[-1, 1]`.
#[derive(Clone, Copy, Debug)]
pub enum Candidates<'a> {
    /// One candidate set scored against every observation in the batch.
    Shared(&'a [f64]),
    /// `per_row` candidates for each observation, row-major.
    PerRow { per_row: usize, values: &'a [f64] },
}

impl Candidates<'_> {
    pub fn per_row(&self) -> usize {
        match self {
            Candidates::Shared(v) => v.len(),
            Candidates::PerRow { per_row, .. } => *per_row,
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Candidates::Shared(v) => v,
            Candidates::PerRow { values, .. } => values,
        }
    }
}

#[derive(Clone, Debug)]
struct Fusion {
    features: ParamId,
    action: Dense,
    out: ParamId,
}

#[derive(Debug)]
pub struct Backbone {
    config: BackboneConfig,
    input_dim: usize,
    layers: Vec<Dense>,
    fusion: Option<Fusion>,
    encoded: AtomicUsize,
}

impl Backbone {
    /// Registers encoder parameters (and the action-fusion layer when `with_fusion`).
    pub fn new(
        config: &BackboneConfig,
        input_dim: usize,
        with_fusion: bool,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.widths.len());
        let mut fan_in = input_dim;
        for (i, &w) in config.widths.iter().enumerate() {
            layers.push(Dense::new(store, &format!("enc.{i}"), fan_in, w, rng)?);
            fan_in = w;
        }
        let fusion = if with_fusion {
            let h = config.fusion_width;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let wf: Vec<f64> = (0..fan_in * h).map(|_| rng.gen_range(-bound..bound)).collect();
            let features = store.insert("fuse.features", Tensor::matrix(fan_in, h, wf)?)?;
            let action = Dense::new(store, "fuse.action", 1 + 2 * config.action_harmonics, h, rng)?;
            let bound = 1.0 / (h as f64).sqrt();
            let wo: Vec<f64> = (0..h).map(|_| rng.gen_range(-bound..bound)).collect();
            let out = store.insert("fuse.out", Tensor::matrix(h, 1, wo)?)?;
            Some(Fusion { features, action, out })
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            input_dim,
            layers,
            fusion,
            encoded: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        *self.config.widths.last().expect("validated")
    }

    /// Observations passed through the encoder so far.
    pub fn encode_count(&self) -> usize {
        self.encoded.load(Ordering::Relaxed)
    }

    /// Features for a `B×input_dim` batch of (normalized) observations.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (rows, cols) = g.value(x).dims2().unwrap_or((0, 0));
        ensure!(
            cols == self.input_dim,
            InvalidArgument,
            "observation batch has {cols} features, encoder expects {}",
            self.input_dim
        );
        ensure!(g.value(x).is_finite(), InvalidArgument, "non-finite observation");
        self.encoded.fetch_add(rows, Ordering::Relaxed);
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(g, store, h)?;
            h = match self.config.activation {
                Activation::Tanh => g.tanh(z),
                Activation::Relu => g.relu(z),
            };
        }
        Ok(h)
    }

    fn action_features(&self, a: f64, out: &mut Vec<f64>) {
        out.push(a);
        let k_max = self.config.action_harmonics;
        for k in 1..=k_max {
            let f = if self.config.action_max_frequency > 0.0 && k_max > 1 {
                self.config.action_max_frequency.powf((k - 1) as f64 / (k_max - 1) as f64)
            } else {
                k as f64
            };
            let w = std::f64::consts::PI * f * a;
            out.push(w.sin());
            out.push(w.cos());
        }
    }

    /// One scalar per (observation, candidate): returns `B×n` where `n` is the
    /// number of candidates per observation.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, features: Var, candidates: Candidates<'_>) -> Result<Var> {
        let fusion = self
            .fusion
            .as_ref()
            .ok_or_else(|| crate::Error::InvalidArgument("backbone built without an action-fusion layer".into()))?;
        let n = candidates.per_row();
        ensure!(n > 0, InvalidArgument, "empty candidate set");
        let batch = g.value(features).dims2().map(|d| d.0).unwrap_or(0);
        if let Candidates::PerRow { values, .. } = candidates {
            ensure!(
                values.len() == batch * n,
                InvalidArgument,
                "{} per-row candidates for a batch of {batch}×{n}",
                values.len()
            );
        }
        let width = 1 + 2 * self.config.action_harmonics;
        let mut phi = Vec::with_capacity(candidates.values().len() * width);
        for &a in candidates.values() {
            self.action_features(a, &mut phi);
        }
        let phi = g.input(Tensor::matrix(candidates.values().len(), width, phi)?);

        let wf = g.param(store, fusion.features);
        let z = g.matmul(features, wf)?;
        let act = fusion.action.forward(g, store, phi)?;
        let wo = g.param(store, fusion.out);
        Ok(g.pair_relu_score(z, act, wo, n)?)
    }
}
