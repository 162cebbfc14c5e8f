//! Arc-length parameterized polylines with segment projection.

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    /// Cumulative arc length at each vertex.
    cum: Vec<f64>,
}

/// Closest point on a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point, clamped to `[0, length]`.
    pub s: f64,
    /// Arc length extended linearly past either end along the end segments.
    pub along: f64,
    /// Distance to the closest point.
    pub distance: f64,
    /// Signed offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub segment: usize,
}

impl Polyline {
    /// Drops consecutive duplicate vertices; needs at least two distinct points.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            ensure!(p[0].is_finite() && p[1].is_finite(), Sim, "non-finite polyline vertex");
            if pts.last().map_or(true, |q| q != &p) {
                pts.push(p);
            }
        }
        ensure!(pts.len() >= 2, Sim, "polyline needs two distinct points");
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for w in pts.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(cum.last().unwrap() + d);
        }
        Ok(Self { points: pts, cum })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn vertex_s(&self, i: usize) -> f64 {
        self.cum[i]
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Segment containing arc length `s` (clamped).
    pub fn segment_at(&self, s: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.segment_count() - 1)
    }

    /// Point at arc length `s`, extended linearly past either end.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        let f = (s - self.cum[i]) / len;
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    /// Direction of the segment containing `s`, radians.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Projects `p`, searching segments within `window` of `hint` (all segments when `None`).
    pub fn project(&self, p: [f64; 2], hint: Option<(usize, usize)>) -> Projection {
        let last = self.segment_count() - 1;
        let (lo, hi) = match hint {
            Some((h, w)) => (h.saturating_sub(w), (h + w).min(last)),
            None => (0, last),
        };
        let mut best: Option<(f64, usize, f64)> = None;
        for i in lo..=hi {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let d2 = (a[0] + t * dx - p[0]).powi(2) + (a[1] + t * dy - p[1]).powi(2);
            if best.map_or(true, |(bd, _, _)| d2 < bd) {
                best = Some((d2, i, t));
            }
        }
        let (d2, i, t) = best.expect("at least one segment");
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let s = self.cum[i] + t * len;
        let raw_t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (len * len);
        let along = if (i == 0 && raw_t < 0.0) || (i == last && raw_t > 1.0) {
            self.cum[i] + raw_t * len
        } else {
            s
        };
        let cross = dx * (p[1] - a[1]) - dy * (p[0] - a[0]);
        let distance = d2.sqrt();
        Projection {
            s,
            along,
            distance,
            lateral: if cross >= 0.0 { distance } else { -distance },
            segment: i,
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// World point `p` in the frame at `origin` with `heading` (x forward, y left).
pub fn to_ego(p: [f64; 2], origin: [f64; 2], heading: f64) -> [f64; 2] {
    let (dx, dy) = (p[0] - origin[0], p[1] - origin[1]);
    let (s, c) = heading.sin_cos();
    [c * dx + s * dy, -s * dx + c * dy]
}
