//! A policy head on a backbone, with its normalizer and checkpoint format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use steerlab_autodiff::{read_checkpoint, write_checkpoint, Graph, ParamStore, Tensor};

use crate::action_space::{calibrate_temperature, ActionGrid};
use crate::backbone::{Backbone, BackboneConfig};
use crate::data::{Batch, Normalizer};
use crate::error::{ensure, Error, Result};
use crate::heads::{HeadEnv, HeadOutput, HeadParams, HeadRegistry, Net, PolicyHead};
use crate::rng::Rng;
use crate::sim::{Policy, PolicyInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            a_min: -250.0,
            a_max: 250.0,
            bins: 512,
        }
    }
}

/// Soft-target calibration: `mass` of the target within `±window` degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftTargetConfig {
    pub mass: f64,
    pub window: f64,
}

impl Default for SoftTargetConfig {
    fn default() -> Self {
        Self {
            mass: 0.999,
            window: 5.0,
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub head: String,
    pub params: HeadParams,
    pub backbone: BackboneConfig,
    pub grid: GridConfig,
    pub soft_targets: SoftTargetConfig,
    pub input_dim: usize,
}

#[derive(Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub grid: ActionGrid,
    pub backbone: Backbone,
    pub head: Box<dyn PolicyHead>,
    pub store: ParamStore,
    pub normalizer: Normalizer,
    pub soft_temperature: f64,
}

impl Model {
    /// Builds and initializes a model; parameters are drawn from `rng`.
    pub fn new(spec: ModelSpec, normalizer: Normalizer, registry: &HeadRegistry, rng: &mut Rng) -> Result<Self> {
        ensure!(
            normalizer.dim() == spec.input_dim,
            Config,
            "normalizer width {} does not match input width {}",
            normalizer.dim(),
            spec.input_dim
        );
        let grid = ActionGrid::new(spec.grid.a_min, spec.grid.a_max, spec.grid.bins)?;
        let soft_temperature = if spec.params.soft_targets {
            calibrate_temperature(&grid, spec.soft_targets.mass, spec.soft_targets.window)?
        } else {
            1.0
        };
        let env = HeadEnv {
            grid: grid.clone(),
            soft_temperature,
        };
        let mut head = registry.build(&spec.head, &spec.params, &env)?;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&spec.backbone, spec.input_dim, head.uses_action_fusion(), &mut store, rng)?;
        head.init(&mut store, backbone.feature_dim(), rng)?;
        Ok(Self {
            spec,
            grid,
            backbone,
            head,
            store,
            normalizer,
            soft_temperature,
        })
    }

    fn net(&self) -> Net<'_> {
        Net {
            backbone: &self.backbone,
            store: &self.store,
            grid: &self.grid,
        }
    }

    /// Training loss of `batch` with gradients accumulated into the store.
    pub fn loss_and_grad(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(batch.features.clone());
        let f = self.backbone.encode(&mut g, &self.store, x)?;
        let loss = self.head.loss(self.net(), &mut g, f, batch, rng)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        self.store.zero_grad();
        self.store.accumulate(&g, &grads);
        Ok(value)
    }

    /// Training loss without gradients.
    pub fn loss(&self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(batch.features.clone());
        let f = self.backbone.encode(&mut g, &self.store, x)?;
        let loss = self.head.loss(self.net(), &mut g, f, batch, rng)?;
        Ok(g.value(loss).item())
    }

    /// Outputs for already normalized observations (`B×input_dim`).
    pub fn infer_normalized(&self, features: &Tensor) -> Result<Vec<HeadOutput>> {
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let f = self.backbone.encode(&mut g, &self.store, x)?;
        self.head.infer(self.net(), &mut g, f)
    }

    /// Output for one raw observation vector.
    pub fn infer(&self, observation: &[f64]) -> Result<HeadOutput> {
        let row = self.normalizer.apply(observation);
        let t = Tensor::matrix(1, row.len(), row)?;
        Ok(self.infer_normalized(&t)?.remove(0))
    }

    pub fn save(&self, out: impl Write) -> Result<()> {
        let meta = vec![
            ("spec".to_string(), serde_json::to_string(&self.spec).map_err(json_err)?),
            (
                "normalizer".to_string(),
                serde_json::to_string(&self.normalizer).map_err(json_err)?,
            ),
        ];
        write_checkpoint(out, &self.store, &meta)?;
        Ok(())
    }

    pub fn load(input: impl BufRead, registry: &HeadRegistry) -> Result<Self> {
        let (store, meta) = read_checkpoint(input)?;
        let get = |k: &str| -> Result<&str> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks {k:?} metadata")))
        };
        let spec: ModelSpec = serde_json::from_str(get("spec")?).map_err(json_err)?;
        let normalizer: Normalizer = serde_json::from_str(get("normalizer")?).map_err(json_err)?;
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(spec, normalizer, registry, &mut rng)?;
        ensure!(
            store.len() == model.store.len(),
            Data,
            "checkpoint has {} parameters, model expects {}",
            store.len(),
            model.store.len()
        );
        model.store.load_values(&store)?;
        Ok(model)
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Data(format!("json: {e}"))
}

/// Closed-loop driver backed by a model.
pub struct ModelPolicy<'a> {
    pub model: &'a Model,
}

impl Policy for ModelPolicy<'_> {
    fn command(&mut self, input: &PolicyInput<'_>) -> Result<f64> {
        Ok(self.model.infer(&input.observation.features())?.command)
    }
}
