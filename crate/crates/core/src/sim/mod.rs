//! Procedural road world, vehicle, expert and closed-loop evaluation.

mod episode;
mod expert;
pub mod geometry;
pub mod log_io;
mod observe;
mod record;
mod track;
mod vehicle;

use serde::{Deserialize, Serialize};

pub use episode::{
    run_episode, ConstantPolicy, CrashEvent, EpisodeConfig, EpisodeLog, ExpertPolicy, LogRow, Policy, PolicyInput,
};
pub use expert::{drive_route, expert_trace, ExpertConfig, ExpertTrace, PurePursuit, TracePoint};
pub use geometry::{Polyline, Projection};
pub use observe::{observe, ObservationConfig, ObserveHint};
pub use record::{record_dataset, record_run, RecordSummary, FORK_WINDOW};
pub use track::{generate_track, Fork, Track, TrackConfig};
pub use vehicle::{actuate, Vehicle, VehicleParams, VehicleState};

use crate::error::Result;

/// Everything that defines the simulated world.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub track: TrackConfig,
    pub vehicle: VehicleParams,
    pub expert: ExpertConfig,
    pub observation: ObservationConfig,
    pub episode: EpisodeConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.vehicle.validate()?;
        self.expert.validate()?;
        self.observation.validate()?;
        self.episode.validate()
    }
}
