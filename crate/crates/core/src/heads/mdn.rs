use steerlab_autodiff::{Graph, ParamStore, Var};

use super::{argmax, losses, Diagnostics, HeadOutput, Net, PolicyHead};
use crate::backbone::Dense;
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Lower bound on every component's standard deviation, in degrees.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Initial component means span this fraction of the half range on each side.
const MEAN_SPREAD: f64 = 0.2;

/// Gaussian mixture over steering angle, in degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl MdnParams {
    /// Decodes one row of raw outputs laid out as `[μ, log σ, α logits]`.
    pub fn from_raw(raw: &[f64], center: f64, half_range: f64) -> Self {
        let m = raw.len() / 3;
        let mu = raw[..m].iter().map(|u| center + half_range * u).collect();
        let sigma = raw[m..2 * m]
            .iter()
            .map(|s| half_range * s.exp() + SIGMA_FLOOR)
            .collect();
        let logits = &raw[2 * m..3 * m];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = e.iter().sum();
        Self {
            mu,
            sigma,
            alpha: e.into_iter().map(|x| x / total).collect(),
        }
    }

    /// Mean of the component with the largest weight.
    pub fn mode(&self) -> f64 {
        self.mu[argmax(&self.alpha)]
    }

    pub fn density(&self, a: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(&self.alpha)
            .map(|((m, s), w)| w * (-0.5 * ((a - m) / s).powi(2)).exp() / (s * norm))
            .sum()
    }
}

/// Mixture density head trained by negative log-likelihood.
#[derive(Debug)]
pub struct MdnHead {
    components: usize,
    layers: Option<(Dense, Dense)>,
}

impl MdnHead {
    pub fn new(components: usize) -> Result<Self> {
        ensure!(
            (1..=5).contains(&components),
            Config,
            "mixture components must be in 1..=5, got {components}"
        );
        Ok(Self {
            components,
            layers: None,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    fn raw(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Var> {
        let (hidden, out) = self.layers.as_ref().expect("head initialized");
        let h = hidden.forward(g, net.store, features)?;
        let h = g.relu(h);
        out.forward(g, net.store, h)
    }
}

impl PolicyHead for MdnHead {
    fn name(&self) -> &'static str {
        "mdn"
    }

    fn init(&mut self, store: &mut ParamStore, feature_dim: usize, rng: &mut Rng) -> Result<()> {
        let width = 32.max(feature_dim / 2);
        let hidden = Dense::new(store, "head.hidden", feature_dim, width, rng)?;
        let out = Dense::new(store, "head.out", width, 3 * self.components, rng)?;
        // Start narrow relative to the full range so early gradients are informative,
        // with means spread over ±MEAN_SPREAD of the half range so components differ.
        let b = store.get_mut(out.b);
        let m = self.components;
        let data = b.value.data_mut();
        for (i, u) in data[..m].iter_mut().enumerate() {
            *u = if m == 1 { 0.0 } else { MEAN_SPREAD * (2.0 * i as f64 / (m - 1) as f64 - 1.0) };
        }
        for s in &mut data[m..2 * m] {
            *s = -2.0;
        }
        self.layers = Some((hidden, out));
        Ok(())
    }

    fn loss(&self, net: Net<'_>, g: &mut Graph, features: Var, batch: &Batch, _rng: &mut Rng) -> Result<Var> {
        let raw = self.raw(net, g, features)?;
        losses::mdn_nll(
            g,
            raw,
            &batch.labels,
            net.grid.center(),
            net.grid.half_range(),
            SIGMA_FLOOR,
        )
    }

    fn infer(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Vec<HeadOutput>> {
        let raw = self.raw(net, g, features)?;
        let t = g.value(raw);
        Ok((0..t.row_count())
            .map(|r| {
                let p = MdnParams::from_raw(t.row(r), net.grid.center(), net.grid.half_range());
                HeadOutput {
                    command: p.mode(),
                    diagnostics: Diagnostics::Mixture(p),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_picks_heaviest_component() {
        let p = MdnParams {
            mu: vec![-20.0, 20.0],
            sigma: vec![1.0, 1.0],
            alpha: vec![0.3, 0.7],
        };
        assert_eq!(p.mode(), 20.0);
    }

    #[test]
    fn decoding_applies_floor_and_normalizes_weights() {
        let p = MdnParams::from_raw(&[0.5, -0.5, -800.0, -800.0, 1.0, 1.0], 0.0, 250.0);
        assert_eq!(p.mu, vec![125.0, -125.0]);
        assert!(p.sigma.iter().all(|&s| s == SIGMA_FLOOR));
        assert_eq!(p.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_out_of_range_components() {
        assert!(MdnHead::new(0).is_err());
        assert!(MdnHead::new(6).is_err());
        assert!(MdnHead::new(5).is_ok());
    }
}
