//! Procedural main road with side branches ("forks").

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::geometry::Polyline;
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Main-road length to drive, meters.
    pub length: f64,
    /// Forks per kilometer.
    pub fork_density: f64,
    /// Curvature bound, 1/m.
    pub max_curvature: f64,
    /// Spacing range of curvature knots, meters.
    pub knot_spacing: [f64; 2],
    /// Straight section at the start of the road, meters.
    pub straight_start: f64,
    /// Straight section around each fork: `[before, after]` the attachment point.
    pub fork_straight: [f64; 2],
    /// Length of the curvature ramp into and out of straight sections.
    pub ramp: f64,
    /// Forks are drawn in `[first_fork, length - last_fork_margin]`.
    pub first_fork: f64,
    pub last_fork_margin: f64,
    pub min_fork_separation: f64,
    pub branch_radius: f64,
    /// Exit angle range of branches, degrees.
    pub branch_exit_deg: [f64; 2],
    pub branch_length: f64,
    pub lane_half_width: f64,
    /// Extra road past `length` so the preview never runs out.
    pub tail: f64,
    /// Cruise speed, m/s.
    pub max_speed: f64,
    /// Lateral acceleration limit for the speed profile, m/s².
    pub max_lateral_accel: f64,
    /// Longitudinal acceleration limit for the speed profile, m/s².
    pub max_long_accel: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            length: 4000.0,
            fork_density: 0.75,
            max_curvature: 1.0 / 60.0,
            knot_spacing: [60.0, 140.0],
            straight_start: 60.0,
            fork_straight: [50.0, 40.0],
            ramp: 30.0,
            first_fork: 150.0,
            last_fork_margin: 200.0,
            min_fork_separation: 300.0,
            branch_radius: 35.0,
            branch_exit_deg: [25.0, 40.0],
            branch_length: 70.0,
            lane_half_width: 1.75,
            tail: 80.0,
            max_speed: 14.0,
            max_lateral_accel: 2.5,
            max_long_accel: 1.0,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.length > 0.0, Config, "track length must be positive");
        ensure!(self.fork_density >= 0.0, Config, "fork density must be non-negative");
        ensure!(self.max_curvature >= 0.0, Config, "max curvature must be non-negative");
        ensure!(
            self.knot_spacing[0] > 0.0 && self.knot_spacing[1] >= self.knot_spacing[0],
            Config,
            "knot spacing range must be positive and ordered"
        );
        ensure!(
            self.branch_radius > 0.0 && self.branch_length > 0.0,
            Config,
            "branch geometry must be positive"
        );
        ensure!(
            self.branch_exit_deg[0] > 0.0 && self.branch_exit_deg[1] >= self.branch_exit_deg[0],
            Config,
            "branch exit angle range must be positive and ordered"
        );
        ensure!(
            self.max_speed > 0.0 && self.max_lateral_accel > 0.0 && self.max_long_accel > 0.0,
            Config,
            "speed profile limits must be positive"
        );
        Ok(())
    }

    /// Number of forks for this length and density.
    pub fn fork_count(&self) -> usize {
        (self.length * self.fork_density / 1000.0).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fork {
    /// Main-road arc length where the branch leaves.
    pub s_attach: f64,
    /// +1 for a branch to the left, -1 to the right.
    pub side: f64,
    pub exit_angle: f64,
    /// Starts at the attachment point, tangent to the main road.
    pub branch: Polyline,
}

#[derive(Clone, Debug)]
pub struct Track {
    pub seed: u64,
    pub config: TrackConfig,
    pub main: Polyline,
    /// Signed curvature at each main-road vertex.
    pub curvature: Vec<f64>,
    /// Expert cruise speed at each main-road vertex.
    pub speed: Vec<f64>,
    pub forks: Vec<Fork>,
}

const DS: f64 = 1.0;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// 0 inside `[a, b]`, 1 beyond `ramp` of it, smooth in between.
fn notch(s: f64, a: f64, b: f64, ramp: f64) -> f64 {
    if s < a {
        smoothstep((a - s) / ramp)
    } else if s > b {
        smoothstep((s - b) / ramp)
    } else {
        0.0
    }
}

fn draw_forks(cfg: &TrackConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    let n = cfg.fork_count();
    if n == 0 {
        return Ok(Vec::new());
    }
    let lo = cfg.first_fork;
    let hi = cfg.length - cfg.last_fork_margin;
    ensure!(hi > lo, Sim, "track of {} m is too short for forks", cfg.length);
    for _ in 0..1000 {
        let mut s: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] >= cfg.min_fork_separation) {
            return Ok(s);
        }
    }
    Err(crate::Error::Sim(format!(
        "could not place {n} forks {} m apart on a {} m track",
        cfg.min_fork_separation, cfg.length
    )))
}

fn build_branch(start: [f64; 2], heading: f64, side: f64, exit: f64, cfg: &TrackConfig) -> Result<Polyline> {
    let kappa = side / cfg.branch_radius;
    let turn_len = exit * cfg.branch_radius;
    let mut pts = vec![start];
    let (mut x, mut y, mut h) = (start[0], start[1], heading);
    let steps = (cfg.branch_length / DS).ceil() as usize;
    for i in 0..steps {
        let s0 = i as f64 * DS;
        let k = if s0 + DS <= turn_len {
            kappa
        } else if s0 < turn_len {
            kappa * (turn_len - s0) / DS
        } else {
            0.0
        };
        let hm = h + 0.5 * k * DS;
        x += DS * hm.cos();
        y += DS * hm.sin();
        h += k * DS;
        pts.push([x, y]);
    }
    Polyline::new(pts)
}

/// Deterministic in `(seed, config)`.
pub fn generate_track(seed: u64, config: &TrackConfig) -> Result<Track> {
    config.validate()?;
    let mut rng = Rng::seed_from_u64(seed);
    let fork_s = draw_forks(config, &mut rng)?;
    let total = config.length + config.tail;

    let mut knots = vec![(0.0, 0.0)];
    while knots.last().unwrap().0 < total {
        let s = knots.last().unwrap().0 + rng.gen_range(config.knot_spacing[0]..=config.knot_spacing[1]);
        let k = if config.max_curvature > 0.0 {
            rng.gen_range(-config.max_curvature..=config.max_curvature)
        } else {
            0.0
        };
        knots.push((s, k));
    }
    let kappa_at = |s: f64| -> f64 {
        let i = knots.partition_point(|k| k.0 <= s).clamp(1, knots.len() - 1);
        let (s0, k0) = knots[i - 1];
        let (s1, k1) = knots[i];
        let raw = k0 + (k1 - k0) * ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        let mut m = if s < config.straight_start {
            0.0
        } else {
            smoothstep((s - config.straight_start) / config.ramp)
        };
        for &a in &fork_s {
            m *= notch(s, a - config.fork_straight[0], a + config.fork_straight[1], config.ramp);
        }
        raw * m
    };

    let n = (total / DS).ceil() as usize;
    let mut pts = Vec::with_capacity(n + 1);
    let mut curvature = Vec::with_capacity(n + 1);
    let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
    pts.push([x, y]);
    curvature.push(kappa_at(0.0));
    for i in 0..n {
        let k = kappa_at((i as f64 + 0.5) * DS);
        let hm = h + 0.5 * k * DS;
        x += DS * hm.cos();
        y += DS * hm.sin();
        h += k * DS;
        pts.push([x, y]);
        curvature.push(kappa_at((i + 1) as f64 * DS));
    }
    let main = Polyline::new(pts)?;

    let mut forks = Vec::with_capacity(fork_s.len());
    for &s in &fork_s {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let exit = rng
            .gen_range(config.branch_exit_deg[0]..=config.branch_exit_deg[1])
            .to_radians();
        let branch = build_branch(main.point_at(s), main.heading_at(s), side, exit, config)?;
        forks.push(Fork {
            s_attach: s,
            side,
            exit_angle: exit,
            branch,
        });
    }

    let speed = speed_profile(&curvature, config);
    Ok(Track {
        seed,
        config: config.clone(),
        main,
        curvature,
        speed,
        forks,
    })
}

/// Curvature-limited cruise speed with bounded acceleration in both directions.
fn speed_profile(curvature: &[f64], cfg: &TrackConfig) -> Vec<f64> {
    let mut v: Vec<f64> = curvature
        .iter()
        .map(|k| {
            if k.abs() < 1e-12 {
                cfg.max_speed
            } else {
                cfg.max_speed.min((cfg.max_lateral_accel / k.abs()).sqrt())
            }
        })
        .collect();
    for i in 1..v.len() {
        v[i] = v[i].min((v[i - 1].powi(2) + 2.0 * cfg.max_long_accel * DS).sqrt());
    }
    for i in (0..v.len() - 1).rev() {
        v[i] = v[i].min((v[i + 1].powi(2) + 2.0 * cfg.max_long_accel * DS).sqrt());
    }
    v
}

impl Track {
    /// Arc length the episode drives to; road continues `tail` meters past it.
    pub fn drive_length(&self) -> f64 {
        self.config.length
    }

    pub fn speed_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.main.length());
        let i = ((s / DS).floor() as usize).min(self.speed.len() - 2);
        let f = (s - i as f64 * DS) / DS;
        self.speed[i] + f * (self.speed[i + 1] - self.speed[i])
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let i = ((s.max(0.0) / DS).round() as usize).min(self.curvature.len() - 1);
        self.curvature[i]
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0f64, |m, k| m.max(k.abs()))
    }

    /// Route that follows the main road to `fork`'s attachment point, then its branch.
    pub fn branch_route(&self, fork: usize) -> Result<Polyline> {
        let f = &self.forks[fork];
        let end = self.main.segment_at(f.s_attach);
        let mut pts: Vec<[f64; 2]> = self.main.points()[..=end].to_vec();
        pts.extend_from_slice(f.branch.points());
        Polyline::new(pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fork_count_follows_density() {
        let cfg = TrackConfig::default();
        assert_eq!(cfg.fork_count(), 3);
        let t = generate_track(3, &cfg).unwrap();
        assert_eq!(t.forks.len(), 3);
        for w in t.forks.windows(2) {
            assert!(w[1].s_attach - w[0].s_attach >= cfg.min_fork_separation);
        }
        let none = TrackConfig {
            fork_density: 0.0,
            ..cfg
        };
        assert!(generate_track(3, &none).unwrap().forks.is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = TrackConfig::default();
        let a = generate_track(11, &cfg).unwrap();
        let b = generate_track(11, &cfg).unwrap();
        assert_eq!(a.main, b.main);
        assert_eq!(a.forks, b.forks);
        let c = generate_track(12, &cfg).unwrap();
        assert_ne!(a.main, c.main);
    }

    #[test]
    fn curvature_is_bounded_and_forks_straight() {
        let cfg = TrackConfig::default();
        for seed in 0..5 {
            let t = generate_track(seed, &cfg).unwrap();
            assert!(t.max_abs_curvature() <= cfg.max_curvature + 1e-12);
            for f in &t.forks {
                for ds in [-49.0, 0.0, 39.0] {
                    assert_eq!(t.curvature_at(f.s_attach + ds), 0.0);
                }
            }
        }
    }

    #[test]
    fn branch_leaves_tangentially_and_turns_to_its_side() {
        let t = generate_track(5, &TrackConfig::default()).unwrap();
        for f in &t.forks {
            let h0 = t.main.heading_at(f.s_attach);
            assert!((f.branch.heading_at(0.1) - h0).abs() < 0.05);
            let end = f.branch.points().last().unwrap();
            let lat = t.main.project(*end, None);
            assert!(lat.lateral * f.side > 15.0, "{}", lat.lateral);
            assert!((f.branch.length() - 70.0).abs() < 1e-6);
        }
    }

    #[test]
    fn too_dense_forks_are_rejected() {
        let cfg = TrackConfig {
            length: 1000.0,
            fork_density: 10.0,
            ..TrackConfig::default()
        };
        assert!(generate_track(0, &cfg).is_err());
    }
}
