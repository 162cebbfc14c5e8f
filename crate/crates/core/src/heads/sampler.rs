//! Negative (candidate) action samplers for energy-based training.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::action_space::ActionGrid;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum SampledCandidates {
    /// Same angles for every row of the batch.
    Shared(Vec<f64>),
    /// `per_row` angles for each row, row-major.
    PerRow { per_row: usize, values: Vec<f64> },
}

impl SampledCandidates {
    pub fn per_row(&self) -> usize {
        match self {
            SampledCandidates::Shared(v) => v.len(),
            SampledCandidates::PerRow { per_row, .. } => *per_row,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        match self {
            SampledCandidates::Shared(v) => v,
            SampledCandidates::PerRow { per_row, values } => &values[r * per_row..(r + 1) * per_row],
        }
    }
}

pub trait NegativeSampler: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Candidates (degrees) for rows labelled by `groups`: rows sharing a group
    /// id receive identical candidates.
    fn sample(&self, grid: &ActionGrid, groups: &[usize], rng: &mut Rng) -> SampledCandidates;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantGrid;

impl NegativeSampler for ConstantGrid {
    fn name(&self) -> &'static str {
        "constant-grid"
    }

    fn sample(&self, grid: &ActionGrid, _groups: &[usize], _rng: &mut Rng) -> SampledCandidates {
        SampledCandidates::Shared(grid.values().to_vec())
    }
}

/// `count` i.i.d. uniform angles over the grid range per decision (or per group).
#[derive(Clone, Copy, Debug)]
pub struct UniformRandom {
    pub count: usize,
}

impl NegativeSampler for UniformRandom {
    fn name(&self) -> &'static str {
        "uniform-random"
    }

    fn sample(&self, grid: &ActionGrid, groups: &[usize], rng: &mut Rng) -> SampledCandidates {
        let mut values = Vec::with_capacity(groups.len() * self.count);
        let mut drawn: Vec<(usize, usize)> = Vec::new();
        for (row, &group) in groups.iter().enumerate() {
            if let Some(&(_, src)) = drawn.iter().find(|(g, _)| *g == group) {
                let start = src * self.count;
                values.extend_from_within(start..start + self.count);
            } else {
                for _ in 0..self.count {
                    values.push(rng.gen_range(grid.a_min()..=grid.a_max()));
                }
                drawn.push((group, row));
            }
        }
        SampledCandidates::PerRow {
            per_row: self.count,
            values,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    #[default]
    ConstantGrid,
    UniformRandom,
}

impl SamplerMode {
    pub fn build(self, count: usize) -> Box<dyn NegativeSampler> {
        match self {
            SamplerMode::ConstantGrid => Box::new(ConstantGrid),
            SamplerMode::UniformRandom => Box::new(UniformRandom { count }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::ConstantGrid => "constant-grid",
            SamplerMode::UniformRandom => "uniform-random",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn constant_grid_is_identical_across_calls() {
        let g = ActionGrid::standard();
        let mut rng = Rng::seed_from_u64(0);
        let a = ConstantGrid.sample(&g, &[0, 1], &mut rng);
        let b = ConstantGrid.sample(&g, &[0, 1, 2], &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.per_row(), 512);
    }

    #[test]
    fn uniform_is_seeded_and_in_range() {
        let g = ActionGrid::standard();
        let s = UniformRandom { count: 64 };
        let a = s.sample(&g, &[0, 1], &mut Rng::seed_from_u64(4));
        let b = s.sample(&g, &[0, 1], &mut Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert!(a.row(0).iter().chain(a.row(1)).all(|v| g.contains(*v)));
        assert_ne!(a.row(0), a.row(1));
    }

    #[test]
    fn uniform_shares_draws_within_a_pair() {
        let g = ActionGrid::standard();
        let s = UniformRandom { count: 8 };
        let c = s.sample(&g, &[0, 0, 1, 1], &mut Rng::seed_from_u64(1));
        assert_eq!(c.row(0), c.row(1));
        assert_eq!(c.row(2), c.row(3));
        assert_ne!(c.row(0), c.row(2));
    }

    #[test]
    fn uniform_mean_is_range_midpoint() {
        // Uniform on [-250, 250]: mean 0, sd 500/√12.
        let g = ActionGrid::standard();
        let s = UniformRandom { count: 100_000 };
        let c = s.sample(&g, &[0], &mut Rng::seed_from_u64(11));
        let n = c.row(0).len() as f64;
        let mean = c.row(0).iter().sum::<f64>() / n;
        let se = 500.0 / 12f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }
}
