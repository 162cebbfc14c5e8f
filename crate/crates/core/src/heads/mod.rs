//! Policy heads behind a common train/infer contract, selected by name.
//!
//! | name             | output                         | inference            |
//! |------------------|--------------------------------|----------------------|
//! | `regression`     | one steering value             | the value            |
//! | `classification` | logits over the action grid    | argmax bin center    |
//! | `mdn`            | Gaussian mixture parameters    | mean of largest α    |
//! | `ebm`            | energy per candidate action    | argmin over the grid |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use steerlab_autodiff::{Graph, ParamStore, Var};

use crate::action_space::{ActionGrid, TargetMode};
use crate::backbone::Backbone;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng::Rng;

mod classification;
mod ebm;
pub mod losses;
mod mdn;
mod regression;
pub mod sampler;

pub use classification::ClassificationHead;
pub use ebm::EbmHead;
pub use mdn::{MdnHead, MdnParams};
pub use regression::RegressionHead;
pub use sampler::{ConstantGrid, NegativeSampler, SampledCandidates, SamplerMode, UniformRandom};

/// Hyperparameters shared by the head registry. Each head reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadParams {
    pub mixture_components: usize,
    pub soft_targets: bool,
    /// Weight of the temporal smoothing term; 0 disables it.
    pub temporal_alpha: f64,
    pub sampler: SamplerMode,
}

impl Default for HeadParams {
    fn default() -> Self {
        Self {
            mixture_components: 5,
            soft_targets: false,
            temporal_alpha: 0.0,
            sampler: SamplerMode::ConstantGrid,
        }
    }
}

/// Everything a head builder may depend on besides its own parameters.
#[derive(Clone, Debug)]
pub struct HeadEnv {
    pub grid: ActionGrid,
    /// Temperature (degrees²) used when `soft_targets` is set.
    pub soft_temperature: f64,
}

/// Borrowed view of the network shared by all heads.
#[derive(Clone, Copy)]
pub struct Net<'a> {
    pub backbone: &'a Backbone,
    pub store: &'a ParamStore,
    pub grid: &'a ActionGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostics {
    Value,
    Probabilities(Vec<f64>),
    Mixture(MdnParams),
    Energies(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    /// Steering-wheel command in degrees.
    pub command: f64,
    pub diagnostics: Diagnostics,
}

pub trait PolicyHead: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether the backbone must carry the action-fusion layer.
    fn uses_action_fusion(&self) -> bool {
        false
    }

    /// Whether training batches should be drawn as consecutive pairs.
    fn wants_pairs(&self) -> bool {
        false
    }

    /// Registers head parameters on top of `feature_dim` backbone features.
    fn init(&mut self, store: &mut ParamStore, feature_dim: usize, rng: &mut Rng) -> Result<()>;

    /// Scalar training loss for a batch whose encoded features are `features`.
    fn loss(&self, net: Net<'_>, g: &mut Graph, features: Var, batch: &Batch, rng: &mut Rng) -> Result<Var>;

    /// One output per row of `features`.
    fn infer(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Vec<HeadOutput>>;
}

pub type HeadBuilder = fn(&HeadParams, &HeadEnv) -> Result<Box<dyn PolicyHead>>;

#[derive(Clone)]
pub struct HeadRegistry {
    builders: BTreeMap<&'static str, HeadBuilder>,
}

impl fmt::Debug for HeadRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

impl Default for HeadRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("regression", |_, _| Ok(Box::new(RegressionHead::new())));
        r.register("classification", |_, env| Ok(Box::new(ClassificationHead::new(env.grid.len()))));
        r.register("mdn", |p, _| Ok(Box::new(MdnHead::new(p.mixture_components)?)));
        r.register("ebm", |p, env| {
            let targets = if p.soft_targets {
                TargetMode::Soft {
                    temperature: env.soft_temperature,
                }
            } else {
                TargetMode::OneHot
            };
            Ok(Box::new(EbmHead::new(targets, p.temporal_alpha, p.sampler.build(env.grid.len()))?))
        });
        r
    }
}

impl HeadRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, builder: HeadBuilder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, name: &str, params: &HeadParams, env: &HeadEnv) -> Result<Box<dyn PolicyHead>> {
        let builder = self.builders.get(name).ok_or_else(|| Error::UnknownHead {
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        builder(params, env)
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_and_rejects() {
        let r = HeadRegistry::default();
        assert_eq!(r.names(), vec!["classification", "ebm", "mdn", "regression"]);
        let env = HeadEnv {
            grid: ActionGrid::new(-1.0, 1.0, 3).unwrap(),
            soft_temperature: 1.0,
        };
        let err = r.build("lstm", &HeadParams::default(), &env).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("regression") && msg.contains("ebm"), "{msg}");
        for name in r.names() {
            assert_eq!(r.build(name, &HeadParams::default(), &env).unwrap().name(), name);
        }
    }

    #[test]
    fn arg_extrema_break_ties_low() {
        assert_eq!(argmin(&[3.0, 1.0, 2.0]), 1);
        assert_eq!(argmin(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 5.0, 5.0]), 1);
    }
}
