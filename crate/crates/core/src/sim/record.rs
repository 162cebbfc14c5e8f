//! Expert demonstrations with random branch choices at forks.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::expert::{ExpertConfig, PurePursuit};
use super::observe::{observe, ObservationConfig, ObserveHint};
use super::track::Track;
use super::vehicle::{Vehicle, VehicleState};
use crate::data::{Recording, Sample};
use crate::error::Result;
use crate::rng::Rng;

/// Half-width of the window around a fork used for swerve analysis, meters.
pub const FORK_WINDOW: f64 = 20.0;

/// After a side-branch drive the next recording restarts this far past the fork.
const RESTART_AFTER_FORK: f64 = 45.0;

#[derive(Debug, Default)]
pub struct RecordSummary {
    pub recordings: Vec<Recording>,
    /// Runs or segments dropped because the expert aborted.
    pub aborted: usize,
    /// `(fork index, took side branch)` for every fork passed.
    pub choices: Vec<(usize, bool)>,
}

/// Drives the expert over `track` once. A side-branch choice ends the current
/// recording at the end of the branch; the next one starts on the main road past that fork.
pub fn record_run(
    track: &Track,
    dt: f64,
    expert: &ExpertConfig,
    obs_cfg: &ObservationConfig,
    vehicle: &Vehicle,
    rng: &mut Rng,
) -> Result<RecordSummary> {
    let mut out = RecordSummary::default();
    let noise = Normal::new(0.0, expert.command_noise_deg).expect("validated noise");
    let stop = track.drive_length();
    let mut start = 0.0;
    let mut next_fork = 0;
    'segments: while start < stop {
        let mut pursuit = PurePursuit::start_at(track.main.clone(), start as usize);
        let mut on_branch = false;
        let mut state = start_state(track, vehicle, start);
        let mut hint = ObserveHint::default();
        let mut samples = Vec::new();
        let mut t = 0.0;
        loop {
            let s = pursuit.progress(state.position());
            if !on_branch && s >= stop {
                break;
            }
            if !on_branch {
                if let Some(f) = track.forks.get(next_fork) {
                    if s >= f.s_attach - expert.commit_distance {
                        let side = rng.gen_bool(expert.p_side);
                        out.choices.push((next_fork, side));
                        if side {
                            pursuit = PurePursuit::start_at(track.branch_route(next_fork)?, s as usize);
                            on_branch = true;
                        } else {
                            next_fork += 1;
                        }
                    }
                }
            }
            if on_branch && s + expert.lookahead(state.speed) > pursuit.route.length() {
                break;
            }
            state.speed = track.speed_at(s.min(track.main.length()));
            let mut cmd = match pursuit.command(&state, expert, vehicle) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("expert aborted on track {}: {e}", track.seed);
                    out.aborted += 1;
                    break 'segments;
                }
            };
            if expert.command_noise_deg > 0.0 {
                cmd += noise.sample(rng);
            }
            let obs = observe(track, obs_cfg, state.position(), state.heading, state.speed, &mut hint, Some(rng));
            let next = vehicle.step(&state, cmd, dt);
            samples.push(Sample {
                t,
                s,
                x: state.x,
                y: state.y,
                heading: state.heading,
                speed: state.speed,
                eff_deg: next.wheel_deg,
                label: cmd,
                fork_window: track.forks.iter().any(|f| (s - f.s_attach).abs() <= FORK_WINDOW),
                observation: obs.features(),
            });
            state = next;
            t += dt;
        }
        if !samples.is_empty() {
            out.recordings.push(Recording {
                track_seed: track.seed,
                dt,
                samples,
            });
        }
        if !on_branch {
            break;
        }
        start = track.forks[next_fork].s_attach + RESTART_AFTER_FORK;
        next_fork += 1;
    }
    Ok(out)
}

fn start_state(track: &Track, vehicle: &Vehicle, s: f64) -> VehicleState {
    let p = track.main.point_at(s);
    let wheel = vehicle.params.wheel_for_curvature(track.curvature_at(s));
    VehicleState {
        x: p[0],
        y: p[1],
        heading: track.main.heading_at(s),
        speed: track.speed_at(s),
        wheel_deg: wheel,
        command_deg: wheel,
    }
}

/// Runs `runs` expert drives over each track; run `r` on track `i` draws from
/// its own indexed stream of `streams`.
pub fn record_dataset(
    tracks: &[Track],
    runs: usize,
    dt: f64,
    expert: &ExpertConfig,
    obs_cfg: &ObservationConfig,
    vehicle: &Vehicle,
    streams: &crate::rng::SeedStreams,
) -> Result<RecordSummary> {
    expert.validate()?;
    obs_cfg.validate()?;
    let mut all = RecordSummary::default();
    for (i, track) in tracks.iter().enumerate() {
        for r in 0..runs {
            let mut rng = streams.stream_indexed(crate::rng::EXPERT, (i * runs + r) as u64);
            let one = record_run(track, dt, expert, obs_cfg, vehicle, &mut rng)?;
            all.recordings.extend(one.recordings);
            all.aborted += one.aborted;
            all.choices.extend(one.choices);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;
    use rand::SeedableRng;
    use crate::sim::track::{generate_track, TrackConfig};

    fn track(density: f64) -> Track {
        generate_track(
            3,
            &TrackConfig {
                length: 1500.0,
                fork_density: density,
                ..TrackConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn single_run_has_monotone_arc_length_and_uniform_time() {
        let t = track(0.0);
        let r = record_run(
            &t,
            0.1,
            &ExpertConfig::default(),
            &ObservationConfig::default(),
            &Vehicle::default(),
            &mut Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.recordings.len(), 1);
        let rec = &r.recordings[0];
        rec.validate().unwrap();
        assert!(rec.samples.windows(2).all(|w| w[1].s > w[0].s));
        assert_eq!(rec.samples[0].observation.len(), 49);
    }

    #[test]
    fn p_side_zero_never_leaves_main_road() {
        let t = track(2.0);
        let cfg = ExpertConfig {
            p_side: 0.0,
            ..ExpertConfig::default()
        };
        let r = record_dataset(
            std::slice::from_ref(&t),
            3,
            0.1,
            &cfg,
            &ObservationConfig::default(),
            &Vehicle::default(),
            &SeedStreams::new(1),
        )
        .unwrap();
        assert_eq!(r.recordings.len(), 3);
        assert!(r.choices.iter().all(|c| !c.1));
        for rec in &r.recordings {
            for s in &rec.samples {
                assert!(t.main.project([s.x, s.y], None).distance < 0.5);
            }
        }
    }

    #[test]
    fn side_branch_splits_recordings() {
        let t = track(2.0);
        let cfg = ExpertConfig {
            p_side: 1.0,
            ..ExpertConfig::default()
        };
        let r = record_run(
            &t,
            0.1,
            &cfg,
            &ObservationConfig::default(),
            &Vehicle::default(),
            &mut Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.recordings.len(), t.forks.len() + 1);
        assert!(r.choices.iter().all(|c| c.1));
        let first = &r.recordings[0];
        let end = first.samples.last().unwrap();
        let off = t.main.project([end.x, end.y], None);
        assert!(off.lateral * t.forks[0].side > 10.0);
    }
}
