//! Ego-frame road preview covering every drivable branch ahead.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::to_ego;
use super::track::Track;
use crate::backbone::Observation;
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Preview slots `K`.
    pub points: usize,
    /// Longitudinal horizon, meters.
    pub horizon: f64,
    /// Samples per path within the horizon.
    pub samples_per_path: usize,
    /// Points farther sideways than this are dropped, meters.
    pub max_lateral: f64,
    /// Standard deviation of Gaussian jitter on preview coordinates, meters.
    pub jitter: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            points: 24,
            horizon: 40.0,
            samples_per_path: 12,
            max_lateral: 20.0,
            jitter: 0.0,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.points > 0 && self.samples_per_path > 0,
            Config,
            "observation needs preview points"
        );
        ensure!(
            self.horizon > 0.0 && self.max_lateral > 0.0 && self.jitter >= 0.0,
            Config,
            "observation horizon must be positive and jitter non-negative"
        );
        Ok(())
    }

    pub fn dim(&self) -> usize {
        Observation::dim_for(self.points)
    }
}

/// Projection hints carried between steps for the main road.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObserveHint {
    pub main_segment: Option<usize>,
}

/// Builds the preview for a vehicle at `pos`/`heading`, returning the main-road arc length too.
pub fn observe(
    track: &Track,
    cfg: &ObservationConfig,
    pos: [f64; 2],
    heading: f64,
    speed: f64,
    hint: &mut ObserveHint,
    rng: Option<&mut Rng>,
) -> Observation {
    let main = track.main.project(pos, hint.main_segment.map(|h| (h, 60)));
    hint.main_segment = Some(main.segment);
    let spacing = cfg.horizon / cfg.samples_per_path as f64;
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(cfg.samples_per_path * (1 + track.forks.len()));
    let push = |p: [f64; 2], pts: &mut Vec<[f64; 2]>| {
        let e = to_ego(p, pos, heading);
        if e[0] > 0.0 && e[0] <= cfg.horizon && e[1].abs() <= cfg.max_lateral {
            pts.push(e);
        }
    };
    for k in 1..=cfg.samples_per_path {
        let s = main.s + k as f64 * spacing;
        if s <= track.main.length() {
            push(track.main.point_at(s), &mut pts);
        }
    }
    let reach = cfg.horizon + cfg.max_lateral;
    for fork in &track.forks {
        let len = fork.branch.length();
        if fork.s_attach > main.s + reach || fork.s_attach + len + reach < main.s {
            continue;
        }
        let proj = fork.branch.project(pos, None);
        let progress = if proj.along < 0.0 { main.s - fork.s_attach } else { proj.along };
        for k in 1..=cfg.samples_per_path {
            let u = progress + k as f64 * spacing;
            if (0.0..=len).contains(&u) {
                push(fork.branch.point_at(u), &mut pts);
            }
        }
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.truncate(cfg.points);
    if let Some(rng) = rng {
        if cfg.jitter > 0.0 {
            let n = Normal::new(0.0, cfg.jitter).expect("validated jitter");
            for p in &mut pts {
                p[0] += n.sample(rng);
                p[1] += n.sample(rng);
            }
        }
    }
    pts.resize(cfg.points, [0.0, 0.0]);
    Observation { preview: pts, speed }
}
