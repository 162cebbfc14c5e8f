//! Closed-loop evaluation: speed replay, crash detection and respawn.

use serde::{Deserialize, Serialize};

use super::expert::{ExpertConfig, ExpertTrace, PurePursuit};
use super::observe::{observe, ObservationConfig, ObserveHint};
use super::track::Track;
use super::vehicle::{Vehicle, VehicleState};
use crate::backbone::Observation;
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub dt: f64,
    /// Fraction of the expert's speed driven during evaluation.
    pub speed_factor: f64,
    /// Deviation from the expert trajectory that counts as a crash, meters.
    pub crash_distance: f64,
    /// The vehicle restarts where the expert was this many seconds later.
    pub respawn_delay: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            speed_factor: 0.8,
            crash_distance: 2.0,
            respawn_delay: 2.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.dt > 0.0, Config, "dt must be positive");
        ensure!(
            self.speed_factor > 0.0 && self.crash_distance > 0.0 && self.respawn_delay > 0.0,
            Config,
            "episode speed factor, crash distance and respawn delay must be positive"
        );
        Ok(())
    }

    /// Strictly more than the threshold.
    pub fn is_crash(&self, deviation: f64) -> bool {
        deviation > self.crash_distance
    }
}

pub struct PolicyInput<'a> {
    pub observation: &'a Observation,
    pub state: &'a VehicleState,
    pub t: f64,
}

/// Anything that maps an observation to a steering-wheel command in degrees.
pub trait Policy {
    fn command(&mut self, input: &PolicyInput<'_>) -> Result<f64>;

    /// Called after a respawn teleports the vehicle.
    fn reset(&mut self) {}
}

/// The pure-pursuit expert driving the main road, used as a policy.
pub struct ExpertPolicy<'a> {
    pursuit: PurePursuit,
    config: &'a ExpertConfig,
    vehicle: &'a Vehicle,
}

impl<'a> ExpertPolicy<'a> {
    pub fn new(track: &Track, config: &'a ExpertConfig, vehicle: &'a Vehicle) -> Self {
        Self {
            pursuit: PurePursuit::new(track.main.clone()),
            config,
            vehicle,
        }
    }
}

impl Policy for ExpertPolicy<'_> {
    fn command(&mut self, input: &PolicyInput<'_>) -> Result<f64> {
        self.pursuit.command(input.state, self.config, self.vehicle)
    }
}

/// Always commands the same angle.
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn command(&mut self, _input: &PolicyInput<'_>) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Arc length along the expert trajectory.
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub cmd_deg: f64,
    pub eff_deg: f64,
    pub deviation_m: f64,
    pub crash: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrashEvent {
    pub t: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub track_seed: u64,
    pub config: EpisodeConfig,
    pub rows: Vec<LogRow>,
    pub crashes: Vec<CrashEvent>,
    /// Reason the episode ended early, if it did.
    pub aborted: Option<String>,
}

impl EpisodeLog {
    pub fn commands(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cmd_deg).collect()
    }

    pub fn effective(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eff_deg).collect()
    }

    /// `value` over each stretch of continuous driving; a crash row ends its stretch.
    pub fn drives(&self, value: impl Fn(&LogRow) -> f64) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for r in &self.rows {
            out.last_mut().unwrap().push(value(r));
            if r.crash {
                out.push(Vec::new());
            }
        }
        out.retain(|d| !d.is_empty());
        out
    }
}

/// Runs `policy` from the start of the expert trace to its end.
///
/// Row `k` holds the pose before step `k`, its deviation, the command issued
/// and the actuator angle after the step. A crash row is followed by a
/// restart on the trace with deviation 0 and the wheel settled on the road's curvature.
pub fn run_episode(
    policy: &mut dyn Policy,
    track: &Track,
    trace: &ExpertTrace,
    cfg: &EpisodeConfig,
    obs_cfg: &ObservationConfig,
    vehicle: &Vehicle,
    mut jitter: Option<&mut Rng>,
) -> Result<EpisodeLog> {
    cfg.validate()?;
    let first = trace.points[0];
    let mut state = VehicleState {
        x: first.x,
        y: first.y,
        heading: first.heading,
        speed: cfg.speed_factor * first.speed,
        wheel_deg: vehicle.params.wheel_for_curvature(track.curvature_at(0.0)),
        command_deg: 0.0,
    };
    let mut log = EpisodeLog {
        track_seed: track.seed,
        config: cfg.clone(),
        rows: Vec::new(),
        crashes: Vec::new(),
        aborted: None,
    };
    let mut seg: Option<usize> = None;
    let mut hint = ObserveHint::default();
    let end = trace.length();
    let max_steps = (4.0 * trace.points.len() as f64 / cfg.speed_factor) as usize + 10;
    let mut t = 0.0;
    for _ in 0..max_steps {
        let proj = trace.path.project(state.position(), seg.map(|s| (s, 80)));
        seg = Some(proj.segment);
        if proj.s >= end - 1e-9 {
            return Ok(log);
        }
        state.speed = cfg.speed_factor * trace.speed_at(proj.s);
        let obs = observe(
            track,
            obs_cfg,
            state.position(),
            state.heading,
            state.speed,
            &mut hint,
            jitter.as_deref_mut(),
        );
        let cmd = match policy.command(&PolicyInput {
            observation: &obs,
            state: &state,
            t,
        }) {
            Ok(c) if c.is_finite() => c,
            Ok(c) => {
                log.aborted = Some(format!("non-finite command {c} at t = {t:.1}"));
                return Ok(log);
            }
            Err(e) => {
                log.aborted = Some(format!("policy failed at t = {t:.1}: {e}"));
                return Ok(log);
            }
        };
        let crash = cfg.is_crash(proj.distance);
        let next = vehicle.step(&state, cmd, cfg.dt);
        log.rows.push(LogRow {
            t,
            s: proj.s,
            x: state.x,
            y: state.y,
            heading: state.heading,
            speed: state.speed,
            cmd_deg: cmd,
            eff_deg: next.wheel_deg,
            deviation_m: proj.distance,
            crash,
        });
        state = next;
        t += cfg.dt;
        if crash {
            log.crashes.push(CrashEvent { t: log.rows.last().unwrap().t, s: proj.s });
            match trace.pose_after(proj.s, cfg.respawn_delay) {
                Some((pose, s_new)) => {
                    state.x = pose.x;
                    state.y = pose.y;
                    state.heading = pose.heading;
                    let main_s = track.main.project([pose.x, pose.y], None).s;
                    state.wheel_deg = vehicle.params.wheel_for_curvature(track.curvature_at(main_s));
                    state.command_deg = state.wheel_deg;
                    seg = Some(trace.path.segment_at(s_new));
                    hint = ObserveHint::default();
                    policy.reset();
                }
                None => return Ok(log),
            }
        }
    }
    log.aborted = Some("step limit reached".into());
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::expert::expert_trace;
    use crate::sim::track::{generate_track, TrackConfig};

    fn setup(cfg: &TrackConfig, seed: u64) -> (Track, ExpertTrace, Vehicle) {
        let t = generate_track(seed, cfg).unwrap();
        let v = Vehicle::default();
        let tr = expert_trace(&t, 0.1, &ExpertConfig::default(), &v).unwrap();
        (t, tr, v)
    }

    #[test]
    fn expert_policy_never_crashes() {
        let cfg = TrackConfig {
            length: 1500.0,
            ..TrackConfig::default()
        };
        let (t, tr, v) = setup(&cfg, 4);
        let ecfg = ExpertConfig::default();
        let mut p = ExpertPolicy::new(&t, &ecfg, &v);
        let log = run_episode(&mut p, &t, &tr, &EpisodeConfig::default(), &ObservationConfig::default(), &v, None)
            .unwrap();
        assert!(log.aborted.is_none(), "{:?}", log.aborted);
        assert!(log.crashes.is_empty());
        assert!(log.rows.iter().all(|r| r.deviation_m < 0.5));
        assert!(log.rows.last().unwrap().s > tr.length() - 5.0);
    }

    #[test]
    fn constant_zero_on_curvy_road_crashes_and_respawns_on_trace() {
        let (t, tr, v) = setup(&TrackConfig::default(), 7);
        let cfg = EpisodeConfig::default();
        let log = run_episode(&mut ConstantPolicy(0.0), &t, &tr, &cfg, &ObservationConfig::default(), &v, None).unwrap();
        assert!(!log.crashes.is_empty());
        assert_eq!(log.crashes.len(), log.rows.iter().filter(|r| r.crash).count());
        for (i, r) in log.rows.iter().enumerate() {
            assert_eq!(r.crash, r.deviation_m > 2.0);
            if r.crash && i + 1 < log.rows.len() {
                assert!(log.rows[i + 1].deviation_m < 1e-9, "{}", log.rows[i + 1].deviation_m);
            }
        }
        for w in log.crashes.windows(2) {
            assert!(w[1].t - w[0].t >= 0.1);
        }
        let drives = log.drives(|r| r.t);
        assert_eq!(drives.iter().map(Vec::len).sum::<usize>(), log.rows.len());
        assert!(drives.len() >= log.crashes.len());
        assert!(drives.len() <= log.crashes.len() + 1);
    }

    #[test]
    fn threshold_is_strict() {
        let c = EpisodeConfig::default();
        assert!(c.is_crash(2.1));
        assert!(!c.is_crash(1.9));
        assert!(!c.is_crash(2.0));
    }

    #[test]
    fn non_finite_command_aborts() {
        let (t, tr, v) = setup(
            &TrackConfig {
                length: 400.0,
                fork_density: 0.0,
                ..TrackConfig::default()
            },
            1,
        );
        let log = run_episode(
            &mut ConstantPolicy(f64::NAN),
            &t,
            &tr,
            &EpisodeConfig::default(),
            &ObservationConfig::default(),
            &v,
            None,
        )
        .unwrap();
        assert!(log.aborted.is_some());
        assert!(log.rows.is_empty());
    }
}
