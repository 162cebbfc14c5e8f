//! Pure-pursuit expert and its reference trajectory.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{to_ego, Polyline};
use super::track::Track;
use super::vehicle::{Vehicle, VehicleState};
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Lookahead horizon, seconds of travel.
    pub lookahead_time: f64,
    pub min_lookahead: f64,
    /// Probability of taking a side branch at a fork.
    pub p_side: f64,
    /// The branch decision is made this far before the attachment point, meters.
    pub commit_distance: f64,
    /// Standard deviation of white noise added to the expert's commands, degrees.
    pub command_noise_deg: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lookahead_time: 1.2,
            min_lookahead: 5.0,
            p_side: 0.1,
            commit_distance: 45.0,
            command_noise_deg: 0.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.p_side),
            Config,
            "p_side must be in [0, 1], got {}",
            self.p_side
        );
        ensure!(
            self.lookahead_time > 0.0 && self.min_lookahead > 0.0,
            Config,
            "expert lookahead must be positive"
        );
        ensure!(self.command_noise_deg >= 0.0, Config, "command noise must be non-negative");
        Ok(())
    }

    pub fn lookahead(&self, speed: f64) -> f64 {
        self.min_lookahead.max(self.lookahead_time * speed)
    }
}

/// Pure-pursuit controller following one route polyline.
#[derive(Clone, Debug)]
pub struct PurePursuit {
    pub route: Polyline,
    segment: Option<usize>,
}

impl PurePursuit {
    pub fn new(route: Polyline) -> Self {
        Self { route, segment: None }
    }

    pub fn start_at(route: Polyline, segment: usize) -> Self {
        Self {
            route,
            segment: Some(segment),
        }
    }

    /// Arc length of `pos` along the route.
    pub fn progress(&mut self, pos: [f64; 2]) -> f64 {
        let p = self.route.project(pos, self.segment.map(|s| (s, 60)));
        self.segment = Some(p.segment);
        p.s
    }

    /// Steering-wheel command (degrees) toward the lookahead point.
    pub fn command(&mut self, state: &VehicleState, cfg: &ExpertConfig, vehicle: &Vehicle) -> Result<f64> {
        let s = self.progress(state.position());
        let ld = cfg.lookahead(state.speed);
        ensure!(
            s + ld <= self.route.length() + 1e-9,
            Sim,
            "no route point within lookahead {ld:.1} m at s = {s:.1} of {:.1}",
            self.route.length()
        );
        let target = to_ego(self.route.point_at(s + ld), state.position(), state.heading);
        let chord = target[0].hypot(target[1]);
        ensure!(chord > 1e-6, Sim, "lookahead point coincides with the vehicle");
        let alpha = target[1].atan2(target[0]);
        let p = &vehicle.params;
        let delta = (2.0 * p.wheelbase * alpha.sin() / chord).atan();
        Ok(p.steering_ratio * delta.to_degrees())
    }
}

/// One step of the expert's full-speed reference drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

/// The expert's main-road trajectory, the reference for speed replay and crashes.
#[derive(Clone, Debug)]
pub struct ExpertTrace {
    pub dt: f64,
    pub points: Vec<TracePoint>,
    pub path: Polyline,
}

impl ExpertTrace {
    pub fn length(&self) -> f64 {
        self.path.length()
    }

    /// Fractional sample index of trace arc length `s`.
    pub fn index_at(&self, s: f64) -> f64 {
        let i = self.path.segment_at(s);
        let a = self.path.vertex_s(i);
        let b = self.path.vertex_s(i + 1);
        i as f64 + ((s - a) / (b - a)).clamp(0.0, 1.0)
    }

    pub fn speed_at(&self, s: f64) -> f64 {
        let f = self.index_at(s);
        let i = f.floor() as usize;
        let j = (i + 1).min(self.points.len() - 1);
        let w = f - i as f64;
        self.points[i].speed * (1.0 - w) + self.points[j].speed * w
    }

    /// Interpolated pose `delay` seconds after the expert passed arc length `s`;
    /// `None` past the end of the trace.
    pub fn pose_after(&self, s: f64, delay: f64) -> Option<(TracePoint, f64)> {
        let f = self.index_at(s) + delay / self.dt;
        let last = (self.points.len() - 1) as f64;
        if f > last {
            return None;
        }
        let i = f.floor() as usize;
        let j = (i + 1).min(self.points.len() - 1);
        let w = f - i as f64;
        let (a, b) = (self.points[i], self.points[j]);
        let lerp = |p: f64, q: f64| p * (1.0 - w) + q * w;
        let dh = super::geometry::wrap_angle(b.heading - a.heading);
        let pose = TracePoint {
            t: lerp(a.t, b.t),
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            heading: a.heading + w * dh,
            speed: lerp(a.speed, b.speed),
        };
        let s_new = lerp(self.path.vertex_s(i), self.path.vertex_s(j));
        Some((pose, s_new))
    }
}

/// Drives the expert along `route` from `start_s` at the track's cruise speed until
/// the route ends within one lookahead, or `stop_s` is reached.
///
/// `on_step` sees the pre-step state, the command, and the post-step state.
pub fn drive_route(
    track: &Track,
    route: Polyline,
    start_s: f64,
    stop_s: f64,
    dt: f64,
    cfg: &ExpertConfig,
    vehicle: &Vehicle,
    mut noise: Option<&mut Rng>,
    mut on_step: impl FnMut(&VehicleState, f64, &VehicleState, f64) -> Result<bool>,
) -> Result<VehicleState> {
    let p0 = route.point_at(start_s);
    let mut state = VehicleState {
        x: p0[0],
        y: p0[1],
        heading: route.heading_at(start_s),
        speed: track.speed_at(start_s),
        wheel_deg: vehicle.params.wheel_for_curvature(track.curvature_at(start_s)),
        command_deg: 0.0,
    };
    state.command_deg = state.wheel_deg;
    let noise_dist = Normal::new(0.0, cfg.command_noise_deg.max(0.0)).expect("validated noise");
    let mut pp = PurePursuit::start_at(route, route_segment_hint(start_s));
    loop {
        let s = pp.progress(state.position());
        if s >= stop_s || s + cfg.lookahead(state.speed) > pp.route.length() {
            return Ok(state);
        }
        state.speed = track.speed_at(s.min(track.main.length()));
        let mut cmd = pp.command(&state, cfg, vehicle)?;
        if cfg.command_noise_deg > 0.0 {
            if let Some(rng) = noise.as_deref_mut() {
                cmd += noise_dist.sample(rng);
            }
        }
        let next = vehicle.step(&state, cmd, dt);
        if !on_step(&state, cmd, &next, s)? {
            return Ok(next);
        }
        state = next;
    }
}

fn route_segment_hint(s: f64) -> usize {
    // Routes are sampled at one vertex per meter.
    s.max(0.0) as usize
}

/// The expert's noise-free main-road drive over the whole track.
pub fn expert_trace(track: &Track, dt: f64, cfg: &ExpertConfig, vehicle: &Vehicle) -> Result<ExpertTrace> {
    let mut points = Vec::new();
    let mut t = 0.0;
    let last = drive_route(
        track,
        track.main.clone(),
        0.0,
        track.drive_length(),
        dt,
        cfg,
        vehicle,
        None,
        |pre, _, _, _| {
            points.push(TracePoint {
                t,
                x: pre.x,
                y: pre.y,
                heading: pre.heading,
                speed: pre.speed,
            });
            t += dt;
            Ok(true)
        },
    )?;
    points.push(TracePoint {
        t,
        x: last.x,
        y: last.y,
        heading: last.heading,
        speed: last.speed,
    });
    ensure!(points.len() >= 2, Sim, "expert trace is empty");
    let path = Polyline::new(points.iter().map(|p| [p.x, p.y]).collect())?;
    ensure!(
        path.segment_count() == points.len() - 1,
        Sim,
        "expert trace has stationary steps"
    );
    Ok(ExpertTrace { dt, points, path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::track::{generate_track, TrackConfig};
    use crate::sim::vehicle::VehicleParams;

    #[test]
    fn straight_road_command_settles_to_zero() {
        let cfg = TrackConfig {
            max_curvature: 0.0,
            fork_density: 0.0,
            length: 300.0,
            ..TrackConfig::default()
        };
        let t = generate_track(0, &cfg).unwrap();
        let v = Vehicle::default();
        let mut cmds = Vec::new();
        let mut start = VehicleState::default();
        start.y = 0.5;
        let mut pp = PurePursuit::new(t.main.clone());
        let mut s = VehicleState { speed: 10.0, ..start };
        for _ in 0..200 {
            let c = pp.command(&s, &ExpertConfig::default(), &v).unwrap();
            cmds.push(c);
            s = v.step(&s, c, 0.1);
        }
        assert!(cmds.last().unwrap().abs() < 0.5);
        assert!(s.y.abs() < 0.05);
    }

    #[test]
    fn circle_steady_state_matches_bicycle_geometry() {
        let r: f64 = 60.0;
        let pts: Vec<[f64; 2]> = (0..=2000)
            .map(|i| {
                let a = i as f64 / r;
                [r * a.sin(), r * (1.0 - a.cos())]
            })
            .collect();
        let route = Polyline::new(pts).unwrap();
        let p = VehicleParams::default();
        let v = Vehicle::new(p.clone());
        let mut pp = PurePursuit::new(route);
        let mut s = VehicleState {
            speed: 10.0,
            ..Default::default()
        };
        let mut cmd = 0.0;
        for _ in 0..600 {
            cmd = pp.command(&s, &ExpertConfig::default(), &v).unwrap();
            s = v.step(&s, cmd, 0.1);
        }
        let expect = p.steering_ratio * (p.wheelbase / r).atan().to_degrees();
        assert!((cmd - expect).abs() < 0.05 * expect, "{cmd} vs {expect}");
    }

    #[test]
    fn trace_speed_and_respawn_pose() {
        let t = generate_track(1, &TrackConfig {
            length: 600.0,
            fork_density: 0.0,
            ..TrackConfig::default()
        })
        .unwrap();
        let v = Vehicle::default();
        let tr = expert_trace(&t, 0.1, &ExpertConfig::default(), &v).unwrap();
        assert!(tr.points.len() > 40);
        let (p, s) = tr.pose_after(0.0, 2.0).unwrap();
        assert!((p.t - 2.0).abs() < 1e-9);
        assert!((s - tr.path.vertex_s(20)).abs() < 1e-9);
        assert!(tr.pose_after(tr.length(), 0.5).is_none());
        assert!(tr.speed_at(10.0) > 0.0);
    }
}
