use steerlab_autodiff::{Graph, ParamStore, Var};

use super::{argmax, losses, Diagnostics, HeadOutput, Net, PolicyHead};
use crate::backbone::Dense;
use crate::data::Batch;
use crate::error::Result;
use crate::rng::Rng;

/// Softmax over the action grid's bins, trained with cross-entropy.
#[derive(Debug)]
pub struct ClassificationHead {
    bins: usize,
    layers: Option<(Dense, Dense)>,
}

impl ClassificationHead {
    pub fn new(bins: usize) -> Self {
        Self { bins, layers: None }
    }

    fn logits(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Var> {
        let (hidden, out) = self.layers.as_ref().expect("head initialized");
        let h = hidden.forward(g, net.store, features)?;
        let h = g.relu(h);
        out.forward(g, net.store, h)
    }
}

impl PolicyHead for ClassificationHead {
    fn name(&self) -> &'static str {
        "classification"
    }

    fn init(&mut self, store: &mut ParamStore, feature_dim: usize, rng: &mut Rng) -> Result<()> {
        let width = 32.max(feature_dim / 2);
        let hidden = Dense::new(store, "head.hidden", feature_dim, width, rng)?;
        let out = Dense::new(store, "head.out", width, self.bins, rng)?;
        self.layers = Some((hidden, out));
        Ok(())
    }

    fn loss(&self, net: Net<'_>, g: &mut Graph, features: Var, batch: &Batch, _rng: &mut Rng) -> Result<Var> {
        let logits = self.logits(net, g, features)?;
        let classes: Vec<usize> = batch.labels.iter().map(|&a| net.grid.bin_index(a)).collect();
        losses::cross_entropy(g, logits, &classes)
    }

    fn infer(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Vec<HeadOutput>> {
        let logits = self.logits(net, g, features)?;
        let t = g.value(logits);
        Ok((0..t.row_count())
            .map(|r| {
                let row = t.row(r);
                HeadOutput {
                    command: net.grid.bin_center(argmax(row)),
                    diagnostics: Diagnostics::Probabilities(softmax(row)),
                }
            })
            .collect())
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
