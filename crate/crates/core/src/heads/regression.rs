use steerlab_autodiff::{Graph, ParamStore, Var};

use super::{losses, Diagnostics, HeadOutput, Net, PolicyHead};
use crate::backbone::Dense;
use crate::data::Batch;
use crate::error::Result;
use crate::rng::Rng;

/// Single steering output trained with mean absolute error.
#[derive(Debug, Default)]
pub struct RegressionHead {
    layers: Option<(Dense, Dense)>,
}

impl RegressionHead {
    pub fn new() -> Self {
        Self::default()
    }

    fn predict(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Var> {
        let (hidden, out) = self.layers.as_ref().expect("head initialized");
        let h = hidden.forward(g, net.store, features)?;
        let h = g.relu(h);
        let raw = out.forward(g, net.store, h)?;
        let scaled = g.scale(raw, net.grid.half_range());
        Ok(g.add_scalar(scaled, net.grid.center()))
    }
}

impl PolicyHead for RegressionHead {
    fn name(&self) -> &'static str {
        "regression"
    }

    fn init(&mut self, store: &mut ParamStore, feature_dim: usize, rng: &mut Rng) -> Result<()> {
        let width = 32.max(feature_dim / 2);
        let hidden = Dense::new(store, "head.hidden", feature_dim, width, rng)?;
        let out = Dense::new(store, "head.out", width, 1, rng)?;
        self.layers = Some((hidden, out));
        Ok(())
    }

    fn loss(&self, net: Net<'_>, g: &mut Graph, features: Var, batch: &Batch, _rng: &mut Rng) -> Result<Var> {
        let pred = self.predict(net, g, features)?;
        losses::mae(g, pred, &batch.labels)
    }

    fn infer(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Vec<HeadOutput>> {
        let pred = self.predict(net, g, features)?;
        Ok(g.value(pred)
            .data()
            .iter()
            .map(|&command| HeadOutput {
                command,
                diagnostics: Diagnostics::Value,
            })
            .collect())
    }
}
