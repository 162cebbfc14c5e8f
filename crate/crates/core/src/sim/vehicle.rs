//! Kinematic bicycle with a rate-limited, first-order-lag steering actuator.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Steering-wheel degrees per front-wheel degree.
    pub steering_ratio: f64,
    /// Mechanical steering-wheel limit, degrees.
    pub wheel_limit_deg: f64,
    /// Actuator lag time constant, seconds.
    pub tau: f64,
    /// Maximum steering-wheel rate, degrees per second.
    pub max_rate_deg: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.79,
            steering_ratio: 15.0,
            wheel_limit_deg: 500.0,
            tau: 0.15,
            max_rate_deg: 400.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.wheelbase > 0.0 && self.steering_ratio > 0.0 && self.wheel_limit_deg > 0.0,
            Config,
            "vehicle geometry must be positive"
        );
        ensure!(
            self.tau > 0.0 && self.max_rate_deg > 0.0,
            Config,
            "actuator tau and rate limit must be positive"
        );
        Ok(())
    }

    /// Steering-wheel angle (degrees) whose front-wheel angle tracks curvature `kappa` at steady state.
    pub fn wheel_for_curvature(&self, kappa: f64) -> f64 {
        self.steering_ratio * (self.wheelbase * kappa).atan().to_degrees()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Realized steering-wheel angle, degrees.
    pub wheel_deg: f64,
    /// Last commanded steering-wheel angle, degrees.
    pub command_deg: f64,
}

impl VehicleState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// One actuator update: rate limit toward the command, then first-order lag.
pub fn actuate(wheel_deg: f64, command_deg: f64, dt: f64, p: &VehicleParams) -> f64 {
    let max_step = p.max_rate_deg * dt;
    let limited = wheel_deg + (command_deg - wheel_deg).clamp(-max_step, max_step);
    let gain = (dt / p.tau).min(1.0);
    wheel_deg + gain * (limited - wheel_deg)
}

#[derive(Debug, Default)]
pub struct Vehicle {
    pub params: VehicleParams,
    clamped: AtomicUsize,
}

impl Clone for Vehicle {
    fn clone(&self) -> Self {
        Self::new(self.params.clone())
    }
}

impl Vehicle {
    pub fn new(params: VehicleParams) -> Self {
        Self {
            params,
            clamped: AtomicUsize::new(0),
        }
    }

    /// Commands that exceeded the mechanical limit so far.
    pub fn clamped_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Advances `dt` seconds at the state's speed with `command_deg` on the steering wheel.
    pub fn step(&self, state: &VehicleState, command_deg: f64, dt: f64) -> VehicleState {
        let p = &self.params;
        let limit = p.wheel_limit_deg;
        let target = if command_deg.abs() > limit {
            if self.clamped.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("steering command {command_deg:.1} beyond ±{limit}, clamping");
            }
            command_deg.clamp(-limit, limit)
        } else {
            command_deg
        };
        let wheel = actuate(state.wheel_deg, target, dt, p);
        let delta = (wheel / p.steering_ratio).to_radians();
        let omega = state.speed * delta.tan() / p.wheelbase;
        let v = state.speed;
        let h0 = state.heading;
        let (x, y) = if (omega * dt).abs() < 1e-9 {
            let hm = h0 + 0.5 * omega * dt;
            (state.x + v * dt * hm.cos(), state.y + v * dt * hm.sin())
        } else {
            let h1 = h0 + omega * dt;
            let r = v / omega;
            (state.x + r * (h1.sin() - h0.sin()), state.y - r * (h1.cos() - h0.cos()))
        };
        VehicleState {
            x,
            y,
            heading: h0 + omega * dt,
            speed: v,
            wheel_deg: wheel,
            command_deg: target,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_keeps_heading() {
        let v = Vehicle::default();
        let s = VehicleState {
            speed: 10.0,
            ..Default::default()
        };
        let n = v.step(&s, 0.0, 0.1);
        assert_eq!(n.heading, 0.0);
        assert!((n.x - 1.0).abs() < 1e-12 && n.y == 0.0);
    }

    #[test]
    fn heading_rate_follows_bicycle_formula() {
        let p = VehicleParams {
            wheelbase: 2.5,
            tau: 1e-9,
            max_rate_deg: 1e12,
            wheel_limit_deg: 1e6,
            ..VehicleParams::default()
        };
        let wheel = 0.1f64.to_degrees() * p.steering_ratio;
        let v = Vehicle::new(p);
        let s = VehicleState {
            speed: 10.0,
            wheel_deg: wheel,
            ..Default::default()
        };
        let dt = 1e-3;
        let n = v.step(&s, wheel, dt);
        let rate = n.heading / dt;
        assert!((rate - 10.0 * 0.1f64.tan() / 2.5).abs() < 1e-9);
        assert!((rate - 0.4013).abs() < 5e-5);
    }

    #[test]
    fn lag_reaches_one_minus_inverse_e_after_tau() {
        let p = VehicleParams {
            max_rate_deg: f64::INFINITY,
            ..VehicleParams::default()
        };
        let dt = 1e-5;
        let steps = (p.tau / dt).round() as usize;
        let mut w = 0.0;
        for _ in 0..steps {
            w = actuate(w, 1.0, dt, &p);
        }
        assert!((w - (1.0 - (-1f64).exp())).abs() < 1e-4, "{w}");
    }

    #[test]
    fn rate_limit_bounds_each_step() {
        let p = VehicleParams::default();
        let w = actuate(0.0, 500.0, 0.1, &p);
        assert!(w <= 40.0 + 1e-12);
        assert!((w - 40.0 * 0.1 / 0.15).abs() < 1e-12);
    }

    #[test]
    fn commands_beyond_limit_are_clamped_and_counted() {
        let v = Vehicle::default();
        let s = VehicleState::default();
        let n = v.step(&s, 900.0, 0.1);
        assert_eq!(n.command_deg, 500.0);
        assert_eq!(v.clamped_count(), 1);
    }
}
