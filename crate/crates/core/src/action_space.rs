//! Constant steering-angle grid, discretization and soft target generation.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Linearly spaced candidate steering-wheel angles in degrees, both endpoints included.
#[derive(Debug)]
pub struct ActionGrid {
    a_min: f64,
    a_max: f64,
    values: Vec<f64>,
    clamped: AtomicUsize,
}

impl Clone for ActionGrid {
    fn clone(&self) -> Self {
        Self {
            a_min: self.a_min,
            a_max: self.a_max,
            values: self.values.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for ActionGrid {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl ActionGrid {
    pub fn new(a_min: f64, a_max: f64, n: usize) -> Result<Self> {
        ensure!(n >= 2, InvalidArgument, "grid needs at least 2 points, got {n}");
        ensure!(
            a_min.is_finite() && a_max.is_finite() && a_min < a_max,
            InvalidArgument,
            "grid range [{a_min}, {a_max}] is empty or inverted"
        );
        let step = (a_max - a_min) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| a_min + i as f64 * step).collect();
        values[n - 1] = a_max;
        Ok(Self {
            a_min,
            a_max,
            values,
            clamped: AtomicUsize::new(0),
        })
    }

    /// The 512-point grid over ±250° used throughout the experiments.
    pub fn standard() -> Self {
        Self::new(-250.0, 250.0, 512).expect("valid constants")
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        (self.a_max - self.a_min) / (self.values.len() - 1) as f64
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.a_min + self.a_max)
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.a_max - self.a_min)
    }

    /// Maps `[a_min, a_max]` onto `[-1, 1]`.
    pub fn normalize(&self, a: f64) -> f64 {
        (a - self.center()) / self.half_range()
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        self.center() + x * self.half_range()
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.a_min && a <= self.a_max
    }

    /// Nearest grid index. Out-of-range angles clamp to the end bins and are counted.
    pub fn bin_index(&self, a: f64) -> usize {
        if !self.contains(a) {
            let n = self.clamped.fetch_add(1, Ordering::Relaxed);
            if n == 0 {
                log::warn!("steering angle {a:.2} outside grid [{}, {}], clamping", self.a_min, self.a_max);
            }
        }
        let pos = ((a - self.a_min) / self.spacing()).round();
        if pos.is_nan() || pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.values.len() - 1)
        }
    }

    pub fn bin_center(&self, index: usize) -> f64 {
        self.values[index.min(self.values.len() - 1)]
    }

    /// Number of out-of-range angles seen by [`ActionGrid::bin_index`].
    pub fn clamped_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Grid values followed by the ground-truth angle: the training candidate set.
    pub fn with_ground_truth(&self, a_gt: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.values.len() + 1);
        v.extend_from_slice(&self.values);
        v.push(a_gt);
        v
    }
}

/// Sub-bin ground-truth positions checked during calibration.
const CALIBRATION_OFFSETS: usize = 64;

/// How cross-entropy targets over the candidate set are formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TargetMode {
    OneHot,
    /// Gaussian-shaped targets with temperature in degrees².
    Soft { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetVector {
    pub probs: Vec<f64>,
    pub mode: TargetMode,
}

impl TargetVector {
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        ensure!(index < len, InvalidArgument, "one-hot index {index} out of range {len}");
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(Self {
            probs,
            mode: TargetMode::OneHot,
        })
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// `softmax(-(a - a_gt)² / T)` over the given candidates.
pub fn soft_targets(candidates: &[f64], a_gt: f64, temperature: f64) -> Result<TargetVector> {
    ensure!(
        temperature > 0.0 && temperature.is_finite(),
        InvalidArgument,
        "soft-target temperature must be positive, got {temperature}"
    );
    ensure!(!candidates.is_empty(), InvalidArgument, "no candidates");
    let logits: Vec<f64> = candidates.iter().map(|a| -(a - a_gt).powi(2) / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(TargetVector {
        probs: exps.into_iter().map(|e| e / total).collect(),
        mode: TargetMode::Soft { temperature },
    })
}

/// Probability mass of the soft targets within `±window` of `a_gt`.
pub fn mass_within(candidates: &[f64], a_gt: f64, temperature: f64, window: f64) -> Result<f64> {
    let t = soft_targets(candidates, a_gt, temperature)?;
    Ok(candidates
        .iter()
        .zip(&t.probs)
        .filter(|(a, _)| (*a - a_gt).abs() <= window)
        .map(|(_, p)| p)
        .sum())
}

/// Boundary temperature at which the soft targets keep at least `mass` of the
/// probability within `±window` for every ground truth away from the grid ends.
///
/// The mass depends on where the ground truth falls between grid points, so
/// the condition is taken over sub-bin offsets around the grid center,
/// including the offsets where a grid point sits just outside the window.
/// Any smaller temperature concentrates the mass further, so the returned
/// value is the widest target that still meets the condition. When every
/// candidate already lies inside the window the condition holds for all
/// temperatures and the lower bracket is returned.
pub fn calibrate_temperature(grid: &ActionGrid, mass: f64, window: f64) -> Result<f64> {
    ensure!(mass > 0.0 && mass < 1.0, InvalidArgument, "mass must be in (0, 1), got {mass}");
    ensure!(
        window > grid.spacing(),
        InvalidArgument,
        "window {window} is not wider than the grid spacing {}",
        grid.spacing()
    );
    let h = grid.spacing();
    let base = grid.values()[grid.len() / 2];
    let edge = window.rem_euclid(h);
    let mut offsets: Vec<f64> = (0..CALIBRATION_OFFSETS).map(|k| k as f64 * h / CALIBRATION_OFFSETS as f64).collect();
    for e in [edge, h - edge] {
        offsets.push((e + 1e-9 * h).min(h));
    }
    let cases: Vec<(f64, Vec<f64>)> = offsets
        .iter()
        .map(|&u| (base + u, grid.with_ground_truth(base + u)))
        .collect();
    let ok = |t: f64| -> Result<bool> {
        for (a_gt, candidates) in &cases {
            if mass_within(candidates, *a_gt, t, window)? < mass {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let mut lo = 1e-6 * grid.spacing().powi(2);
    if !ok(lo)? {
        return Err(Error::InvalidArgument(format!(
            "mass {mass} within ±{window} unattainable on this grid"
        )));
    }
    if cases.iter().all(|(a_gt, c)| c.iter().all(|a| (a - a_gt).abs() <= window)) {
        return Ok(lo);
    }
    let mut hi = lo;
    while ok(hi)? {
        lo = hi;
        hi *= 2.0;
        ensure!(hi.is_finite(), InvalidArgument, "temperature bracket diverged");
    }
    while (hi - lo) / hi > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
