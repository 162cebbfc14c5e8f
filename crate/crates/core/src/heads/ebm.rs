use steerlab_autodiff::{Graph, ParamStore, Tensor, Var};

use super::losses::{self, EbmTargets};
use super::{argmin, Diagnostics, HeadOutput, Net, NegativeSampler, PolicyHead, SampledCandidates};
use crate::action_space::{soft_targets, TargetMode};
use crate::backbone::Candidates;
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Energy over (observation, action); the lowest-energy grid action is chosen.
///
/// Training scores the sampler's candidates plus the ground truth appended as
/// the last column, then applies cross-entropy to `softmax(-e)`.
#[derive(Debug)]
pub struct EbmHead {
    targets: TargetMode,
    temporal_alpha: f64,
    sampler: Box<dyn NegativeSampler>,
}

impl EbmHead {
    pub fn new(targets: TargetMode, temporal_alpha: f64, sampler: Box<dyn NegativeSampler>) -> Result<Self> {
        ensure!(
            temporal_alpha >= 0.0 && temporal_alpha.is_finite(),
            Config,
            "temporal alpha must be non-negative, got {temporal_alpha}"
        );
        if let TargetMode::Soft { temperature } = targets {
            ensure!(temperature > 0.0, Config, "soft-target temperature must be positive");
        }
        Ok(Self {
            targets,
            temporal_alpha,
            sampler,
        })
    }

    pub fn targets(&self) -> TargetMode {
        self.targets
    }

    pub fn temporal_alpha(&self) -> f64 {
        self.temporal_alpha
    }

    pub fn sampler(&self) -> &dyn NegativeSampler {
        self.sampler.as_ref()
    }
}

/// Rows of a pair share a group id; unpaired rows get their own.
fn groups(rows: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut g: Vec<usize> = (0..rows).collect();
    for &(a, b) in pairs {
        g[b] = g[a];
    }
    g
}

impl PolicyHead for EbmHead {
    fn name(&self) -> &'static str {
        "ebm"
    }

    fn uses_action_fusion(&self) -> bool {
        true
    }

    fn wants_pairs(&self) -> bool {
        self.temporal_alpha > 0.0
    }

    fn init(&mut self, _store: &mut ParamStore, _feature_dim: usize, _rng: &mut Rng) -> Result<()> {
        Ok(())
    }

    fn loss(&self, net: Net<'_>, g: &mut Graph, features: Var, batch: &Batch, rng: &mut Rng) -> Result<Var> {
        let rows = batch.labels.len();
        let grid = net.grid;
        let sampled = self.sampler.sample(grid, &groups(rows, &batch.pairs), rng);
        let n = sampled.per_row();
        let negatives = match &sampled {
            SampledCandidates::Shared(v) => {
                let norm: Vec<f64> = v.iter().map(|&a| grid.normalize(a)).collect();
                net.backbone.fuse(g, net.store, features, Candidates::Shared(&norm))?
            }
            SampledCandidates::PerRow { per_row, values } => {
                let norm: Vec<f64> = values.iter().map(|&a| grid.normalize(a)).collect();
                net.backbone.fuse(
                    g,
                    net.store,
                    features,
                    Candidates::PerRow {
                        per_row: *per_row,
                        values: &norm,
                    },
                )?
            }
        };
        let gt: Vec<f64> = batch.labels.iter().map(|&a| grid.normalize(a)).collect();
        let positive = net.backbone.fuse(
            g,
            net.store,
            features,
            Candidates::PerRow {
                per_row: 1,
                values: &gt,
            },
        )?;
        let energies = g.concat_cols(&[negatives, positive])?;

        let mut loss = match self.targets {
            TargetMode::OneHot => {
                let idx = vec![n; rows];
                losses::ebm_loss(g, energies, EbmTargets::OneHot(&idx))?
            }
            TargetMode::Soft { temperature } => {
                let mut probs = Vec::with_capacity(rows * (n + 1));
                for (r, &label) in batch.labels.iter().enumerate() {
                    let mut cands = sampled.row(r).to_vec();
                    cands.push(label);
                    probs.extend(soft_targets(&cands, label, temperature)?.probs);
                }
                let t = Tensor::matrix(rows, n + 1, probs)?;
                losses::ebm_loss(g, energies, EbmTargets::Soft(&t))?
            }
        };
        if self.temporal_alpha > 0.0 && !batch.pairs.is_empty() {
            let smooth = losses::temporal_smoothing(g, negatives, &batch.pairs, self.temporal_alpha)?;
            loss = g.add(loss, smooth)?;
        }
        Ok(loss)
    }

    fn infer(&self, net: Net<'_>, g: &mut Graph, features: Var) -> Result<Vec<HeadOutput>> {
        let grid = net.grid;
        let norm: Vec<f64> = grid.values().iter().map(|&a| grid.normalize(a)).collect();
        let e = net.backbone.fuse(g, net.store, features, Candidates::Shared(&norm))?;
        let t = g.value(e);
        Ok((0..t.row_count())
            .map(|r| {
                let row = t.row(r);
                HeadOutput {
                    command: grid.bin_center(argmin(row)),
                    diagnostics: Diagnostics::Energies(row.to_vec()),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_rows_share_groups() {
        assert_eq!(groups(5, &[(0, 1), (3, 4)]), vec![0, 0, 2, 3, 3]);
        assert_eq!(groups(2, &[]), vec![0, 1]);
    }
}
