//! Off- and on-policy metrics: MAE, whiteness, crashes, swerves.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::sim::{EpisodeLog, Track, FORK_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhitenessSource {
    Command,
    Effective,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    /// Degrees per second.
    pub w: f64,
    /// Number of differences.
    pub d: usize,
    pub dt: f64,
    pub source: WhitenessSource,
}

/// `sqrt(mean((ΔP/dt)²))` over the `n - 1` successive differences.
pub fn whiteness(series: &[f64], dt: f64) -> Result<f64> {
    ensure!(series.len() >= 2, InvalidArgument, "whiteness needs at least 2 samples");
    ensure!(dt > 0.0, InvalidArgument, "dt must be positive");
    let d = series.len() - 1;
    let sum: f64 = series.windows(2).map(|w| ((w[1] - w[0]) / dt).powi(2)).sum();
    Ok((sum / d as f64).sqrt())
}

/// Whiteness over the differences inside each segment. Differences across
/// segment boundaries are not counted.
pub fn segmented_whiteness<S: AsRef<[f64]>>(segments: &[S], dt: f64) -> Result<f64> {
    ensure!(dt > 0.0, InvalidArgument, "dt must be positive");
    let (mut sum, mut d) = (0.0, 0usize);
    for seg in segments {
        for w in seg.as_ref().windows(2) {
            sum += ((w[1] - w[0]) / dt).powi(2);
            d += 1;
        }
    }
    ensure!(d > 0, InvalidArgument, "whiteness needs a segment with at least 2 samples");
    Ok((sum / d as f64).sqrt())
}

pub fn whiteness_report(series: &[f64], dt: f64, source: WhitenessSource) -> Result<WhitenessReport> {
    Ok(WhitenessReport {
        w: whiteness(series, dt)?,
        d: series.len() - 1,
        dt,
        source,
    })
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    ensure!(
        preds.len() == targets.len() && !preds.is_empty(),
        InvalidArgument,
        "mae needs equal non-empty lengths, got {} and {}",
        preds.len(),
        targets.len()
    );
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

pub fn crash_count(log: &EpisodeLog) -> usize {
    log.rows.iter().filter(|r| r.crash).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwerveThresholds {
    /// Peak deviation toward the branch counted as a full swerve, meters.
    pub full: f64,
    /// Lower bound of a half swerve, meters.
    pub half: f64,
}

impl Default for SwerveThresholds {
    fn default() -> Self {
        Self { full: 0.5, half: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwerveClass {
    Full,
    Half,
    None,
}

impl SwerveClass {
    pub fn score(self) -> f64 {
        match self {
            SwerveClass::Full => 1.0,
            SwerveClass::Half => 0.5,
            SwerveClass::None => 0.0,
        }
    }
}

pub fn classify_swerve(peak: f64, th: &SwerveThresholds) -> SwerveClass {
    if peak >= th.full {
        SwerveClass::Full
    } else if peak >= th.half {
        SwerveClass::Half
    } else {
        SwerveClass::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwerveReport {
    /// Peak signed deviation toward the branch, per run then per fork, meters.
    pub peaks: Vec<Vec<f64>>,
    pub classes: Vec<Vec<SwerveClass>>,
    /// Total score over `forks × runs`.
    pub rate: f64,
}

/// Aggregates per-run, per-fork peak deviations.
pub fn swerve_from_peaks(peaks: Vec<Vec<f64>>, th: &SwerveThresholds) -> Result<SwerveReport> {
    ensure!(!peaks.is_empty(), InvalidArgument, "no runs to score");
    let forks = peaks[0].len();
    ensure!(forks > 0, InvalidArgument, "swerve rate needs at least one fork");
    ensure!(
        peaks.iter().all(|p| p.len() == forks),
        InvalidArgument,
        "runs disagree on the number of forks"
    );
    let classes: Vec<Vec<SwerveClass>> = peaks
        .iter()
        .map(|run| run.iter().map(|&p| classify_swerve(p, th)).collect())
        .collect();
    let total: f64 = classes.iter().flatten().map(|c| c.score()).sum();
    let rate = total / (forks * peaks.len()) as f64;
    Ok(SwerveReport { peaks, classes, rate })
}

/// Peak signed lateral offset from the main road toward each fork's branch,
/// within `±FORK_WINDOW` of the attachment point. Forks the log never reaches give 0.
pub fn fork_peaks(log: &EpisodeLog, track: &Track) -> Vec<f64> {
    let mut peaks = vec![f64::NEG_INFINITY; track.forks.len()];
    let mut seg = None;
    for r in &log.rows {
        let p = track.main.project([r.x, r.y], seg.map(|s| (s, 80)));
        seg = Some(p.segment);
        for (f, peak) in track.forks.iter().zip(peaks.iter_mut()) {
            if (p.s - f.s_attach).abs() <= FORK_WINDOW {
                *peak = peak.max(f.side * p.lateral);
            }
        }
    }
    peaks.into_iter().map(|p| if p.is_finite() { p } else { 0.0 }).collect()
}

pub fn swerve_rate(logs: &[EpisodeLog], track: &Track, th: &SwerveThresholds) -> Result<SwerveReport> {
    ensure!(!track.forks.is_empty(), InvalidArgument, "swerve rate needs at least one fork");
    ensure!(
        logs.iter().all(|l| l.track_seed == track.seed),
        InvalidArgument,
        "logs come from a different track"
    );
    swerve_from_peaks(logs.iter().map(|l| fork_peaks(l, track)).collect(), th)
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn classification_boundaries() {
        let th = SwerveThresholds::default();
        assert_eq!(classify_swerve(0.5, &th), SwerveClass::Full);
        assert_eq!(classify_swerve(0.25, &th), SwerveClass::Half);
        assert_eq!(classify_swerve(0.2499, &th), SwerveClass::None);
        assert_eq!(classify_swerve(-3.0, &th), SwerveClass::None);
    }

    #[test]
    fn segmented_whiteness_skips_boundaries() {
        let one = segmented_whiteness(&[vec![0.0, 2.0, 2.0]], 0.1).unwrap();
        assert!((one - whiteness(&[0.0, 2.0, 2.0], 0.1).unwrap()).abs() < 1e-12);
        let split = segmented_whiteness(&[vec![0.0, 1.0], vec![50.0, 51.0], vec![7.0]], 0.1).unwrap();
        assert!((split - 10.0).abs() < 1e-12);
        assert!(segmented_whiteness(&[vec![1.0], vec![2.0]], 0.1).is_err());
    }
}
