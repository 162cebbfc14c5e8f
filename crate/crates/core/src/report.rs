//! Result tables shared by the commands, per-model summaries, and the
//! pass/fail assessment of the acceptance criteria.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::median;

/// One closed-loop episode of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub model: String,
    pub seed: u64,
    pub episode: usize,
    pub track_seed: u64,
    pub steps: usize,
    pub crashes: usize,
    pub w_cmd: f64,
    pub w_eff: f64,
    pub forks: usize,
    pub aborted: String,
}

/// Per-model averages over seeds and episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub model: String,
    pub runs: usize,
    pub crashes: f64,
    pub w_eff: f64,
    pub w_cmd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwerveRow {
    pub model: String,
    pub seed: u64,
    pub episode: usize,
    pub fork: usize,
    pub peak_m: f64,
    pub class: String,
}

/// Swerve rate of one model and seed over all its episodes' fork sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwerveRateRow {
    pub model: String,
    pub seed: u64,
    pub sections: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRow {
    pub mode: String,
    pub seed: u64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub seed: u64,
    pub train_recordings: usize,
    pub val_mae: f64,
    pub w_cmd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub center_deg: f64,
    pub count: usize,
}

/// Per-model averages in the layout of the evaluation table.
pub fn means(rows: &[EpisodeRow]) -> Vec<MeanRow> {
    let mut groups: BTreeMap<&str, Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.model).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(model, rs)| {
            let n = rs.len() as f64;
            MeanRow {
                model: model.to_string(),
                runs: rs.len(),
                crashes: rs.iter().map(|r| r.crashes as f64).sum::<f64>() / n,
                w_eff: rs.iter().map(|r| r.w_eff).sum::<f64>() / n,
                w_cmd: rs.iter().map(|r| r.w_cmd).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Mean of `value` over each seed's episodes, keyed by model then seed.
pub fn per_seed(rows: &[EpisodeRow], value: impl Fn(&EpisodeRow) -> f64) -> BTreeMap<String, BTreeMap<u64, f64>> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.model.clone()).or_default().entry(r.seed).or_insert((0.0, 0));
        e.0 += value(r);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(m, seeds)| (m, seeds.into_iter().map(|(s, (t, n))| (s, t / n as f64)).collect()))
        .collect()
}

fn median_of(map: &BTreeMap<u64, f64>) -> Option<f64> {
    median(&map.values().copied().collect::<Vec<_>>())
}

/// Per-model medians over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub seeds: usize,
    pub median_crashes: f64,
    pub median_w_eff: f64,
    pub median_w_cmd: f64,
    pub median_swerve_rate: f64,
}

pub fn summary(episodes: &[EpisodeRow], swerves: &[SwerveRateRow]) -> Vec<SummaryRow> {
    let w_cmd = per_seed(episodes, |r| r.w_cmd);
    let w_eff = per_seed(episodes, |r| r.w_eff);
    let crashes = per_seed(episodes, |r| r.crashes as f64);
    let sw = swerve_by_model(swerves);
    w_cmd
        .iter()
        .map(|(model, seeds)| SummaryRow {
            model: model.clone(),
            seeds: seeds.len(),
            median_crashes: median_of(&crashes[model]).unwrap_or(f64::NAN),
            median_w_eff: median_of(&w_eff[model]).unwrap_or(f64::NAN),
            median_w_cmd: median_of(seeds).unwrap_or(f64::NAN),
            median_swerve_rate: sw.get(model).and_then(median_of).unwrap_or(f64::NAN),
        })
        .collect()
}

fn swerve_by_model(rows: &[SwerveRateRow]) -> BTreeMap<String, BTreeMap<u64, f64>> {
    let mut out: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.model.clone()).or_default().insert(r.seed, r.rate);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Absent,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Absent => "absent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub status: Status,
    pub detail: String,
}

impl Criterion {
    pub fn new(id: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    pub fn absent(id: &str, detail: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            status: Status::Absent,
            detail: detail.into(),
        }
    }

    /// `AC4 pass: ...`
    pub fn line(&self) -> String {
        format!("{} {}: {}", self.id, self.status, self.detail)
    }
}

/// Criterion identifiers in report order.
pub const CRITERIA: [&str; 10] = ["AC1", "AC2", "AC3", "AC4", "AC5", "AC6", "AC7", "AC8", "AC9", "AC10"];

pub const MIN_SEEDS: usize = 5;

fn medians_for<'a>(
    by_model: &'a BTreeMap<String, BTreeMap<u64, f64>>,
    models: &[&str],
) -> std::result::Result<Vec<f64>, String> {
    models
        .iter()
        .map(|m| match by_model.get(*m) {
            Some(seeds) if seeds.len() >= MIN_SEEDS => Ok(median_of(seeds).expect("non-empty")),
            Some(seeds) => Err(format!("{m} has {} seeds, need {MIN_SEEDS}", seeds.len())),
            None => Err(format!("no runs of {m}")),
        })
        .collect()
}

/// Median command whiteness: regression < ebm-soft < ebm and ebm-temporal < ebm.
pub fn assess_whiteness(episodes: &[EpisodeRow]) -> Criterion {
    let by = per_seed(episodes, |r| r.w_cmd);
    match medians_for(&by, &["regression", "ebm-soft", "ebm", "ebm-temporal"]) {
        Err(why) => Criterion::absent("AC4", why),
        Ok(m) => {
            let (reg, soft, ebm, temporal) = (m[0], m[1], m[2], m[3]);
            Criterion::new(
                "AC4",
                reg < soft && soft < ebm && temporal < ebm,
                format!(
                    "median W_cmd regression {reg:.2} < ebm-soft {soft:.2} < ebm {ebm:.2}; ebm-temporal {temporal:.2} < ebm"
                ),
            )
        }
    }
}

/// `W_eff <= W_cmd` on every episode, plus the white-noise check passed in by the caller.
pub fn assess_actuator(episodes: &[EpisodeRow], noise: Option<(usize, usize)>) -> Criterion {
    let Some((noise_ok, noise_total)) = noise else {
        return Criterion::absent("AC5", "white-noise check not run");
    };
    if episodes.is_empty() {
        return Criterion::absent("AC5", "no evaluation episodes");
    }
    let bad: Vec<String> = episodes
        .iter()
        .filter(|r| !(r.w_eff <= r.w_cmd))
        .map(|r| format!("{}/seed {}/episode {}", r.model, r.seed, r.episode))
        .collect();
    Criterion::new(
        "AC5",
        bad.is_empty() && noise_ok == noise_total,
        format!(
            "W_eff <= W_cmd in {}/{} episodes and {noise_ok}/{noise_total} white-noise sequences{}",
            episodes.len() - bad.len(),
            episodes.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; violations: {}", bad.join(", "))
            }
        ),
    )
}

/// Median swerve rate of regression above both ebm and mdn, on 3-fork evaluation tracks.
pub fn assess_swerve(episodes: &[EpisodeRow], swerves: &[SwerveRateRow]) -> Criterion {
    let relevant = ["regression", "ebm", "mdn"];
    if let Some(r) = episodes.iter().find(|r| relevant.contains(&r.model.as_str()) && r.forks != 3) {
        return Criterion::absent("AC6", format!("evaluation track {} has {} forks, need 3", r.track_seed, r.forks));
    }
    let by = swerve_by_model(swerves);
    match medians_for(&by, &relevant) {
        Err(why) => Criterion::absent("AC6", why),
        Ok(m) => Criterion::new(
            "AC6",
            m[0] > m[1] && m[0] > m[2],
            format!(
                "median swerve rate regression {:.3} > ebm {:.3} and > mdn {:.3}",
                m[0], m[1], m[2]
            ),
        ),
    }
}

fn by_key<K: Ord>(rows: impl Iterator<Item = (K, u64, f64)>) -> BTreeMap<K, BTreeMap<u64, f64>> {
    let mut out: BTreeMap<K, BTreeMap<u64, f64>> = BTreeMap::new();
    for (k, seed, v) in rows {
        out.entry(k).or_default().insert(seed, v);
    }
    out
}

/// Constant-grid negatives: median validation MAE within 5% of uniform-random negatives.
pub fn assess_sampling(rows: &[SamplingRow]) -> Criterion {
    let by = by_key(rows.iter().map(|r| (r.mode.clone(), r.seed, r.val_mae)));
    let by: BTreeMap<String, BTreeMap<u64, f64>> = by.into_iter().collect();
    match medians_for(&by, &["constant-grid", "uniform-random"]) {
        Err(why) => Criterion::absent("AC8", why),
        Ok(m) => Criterion::new(
            "AC8",
            m[0] <= 1.05 * m[1],
            format!(
                "median val MAE constant-grid {:.3} <= 1.05 x uniform-random {:.3} = {:.3}",
                m[0],
                m[1],
                1.05 * m[1]
            ),
        ),
    }
}

/// Median validation MAE at the full training set below the median at 20%.
pub fn assess_scaling(rows: &[ScalingRow]) -> Criterion {
    let key = |f: f64| (f * 100.0).round() as i64;
    let by = by_key(rows.iter().map(|r| (key(r.fraction), r.seed, r.val_mae)));
    let get = |pct: i64| -> std::result::Result<f64, String> {
        match by.get(&pct) {
            Some(s) if s.len() >= MIN_SEEDS => Ok(median_of(s).expect("non-empty")),
            Some(s) => Err(format!("{pct}% has {} seeds, need {MIN_SEEDS}", s.len())),
            None => Err(format!("no runs at {pct}% data")),
        }
    };
    match (get(100), get(20)) {
        (Ok(full), Ok(fifth)) => {
            let curve: Vec<String> = by
                .keys()
                .map(|&pct| {
                    let w = median(
                        &rows
                            .iter()
                            .filter(|r| key(r.fraction) == pct)
                            .map(|r| r.w_cmd)
                            .collect::<Vec<_>>(),
                    )
                    .unwrap_or(f64::NAN);
                    format!("{pct}%: {w:.1}")
                })
                .collect();
            Criterion::new(
                "AC9",
                full < fifth,
                format!(
                    "median val MAE 100% {full:.3} < 20% {fifth:.3}; median W_cmd by data {}",
                    curve.join(", ")
                ),
            )
        }
        (Err(why), _) | (_, Err(why)) => Criterion::absent("AC9", why),
    }
}

/// Exit status of a report: nonzero iff any criterion failed.
pub fn any_failed(criteria: &[Criterion]) -> bool {
    criteria.iter().any(|c| c.status == Status::Fail)
}

pub fn markdown(summary: &[SummaryRow], means: &[MeanRow], criteria: &[Criterion]) -> String {
    let mut s = String::from("# Experiment report\n\n## Per-model medians over seeds\n\n");
    s.push_str("| model | seeds | crashes | W_eff (deg/s) | W_cmd (deg/s) | swerve rate |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for r in summary {
        s.push_str(&format!(
            "| {} | {} | {:.1} | {:.2} | {:.2} | {:.3} |\n",
            r.model, r.seeds, r.median_crashes, r.median_w_eff, r.median_w_cmd, r.median_swerve_rate
        ));
    }
    s.push_str("\n## Means over all episodes\n\n| model | runs | crashes | W_eff (deg/s) | W_cmd (deg/s) |\n|---|---|---|---|---|\n");
    for r in means {
        s.push_str(&format!(
            "| {} | {} | {:.2} | {:.2} | {:.2} |\n",
            r.model, r.runs, r.crashes, r.w_eff, r.w_cmd
        ));
    }
    s.push_str("\n## Acceptance criteria\n\n| id | status | detail |\n|---|---|---|\n");
    for c in criteria {
        s.push_str(&format!("| {} | {} | {} |\n", c.id, c.status, c.detail));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(model: &str, seed: u64, episode: usize, w_cmd: f64) -> EpisodeRow {
        EpisodeRow {
            model: model.into(),
            seed,
            episode,
            track_seed: 9,
            steps: 100,
            crashes: 0,
            w_cmd,
            w_eff: w_cmd / 2.0,
            forks: 3,
            aborted: String::new(),
        }
    }

    #[test]
    fn means_equal_column_averages() {
        let rows = vec![ep("a", 0, 0, 1.0), ep("a", 0, 1, 3.0), ep("b", 0, 0, 5.0)];
        let m = means(&rows);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].w_cmd, 2.0);
        assert_eq!(m[0].runs, 2);
        assert_eq!(m[1].w_eff, 2.5);
    }

    #[test]
    fn whiteness_ordering_needs_five_seeds() {
        let mut rows = Vec::new();
        for seed in 0..4 {
            for (m, w) in [("regression", 1.0), ("ebm-soft", 2.0), ("ebm", 3.0), ("ebm-temporal", 2.5)] {
                rows.push(ep(m, seed, 0, w));
            }
        }
        assert_eq!(assess_whiteness(&rows).status, Status::Absent);
        for (m, w) in [("regression", 1.0), ("ebm-soft", 2.0), ("ebm", 3.0), ("ebm-temporal", 2.5)] {
            rows.push(ep(m, 4, 0, w));
        }
        assert_eq!(assess_whiteness(&rows).status, Status::Pass);
        for r in rows.iter_mut().filter(|r| r.model == "ebm-temporal") {
            r.w_cmd = 4.0;
        }
        assert_eq!(assess_whiteness(&rows).status, Status::Fail);
    }

    #[test]
    fn missing_inputs_are_absent_not_failed() {
        let c = [
            assess_whiteness(&[]),
            assess_actuator(&[], Some((1, 1))),
            assess_swerve(&[], &[]),
            assess_sampling(&[]),
            assess_scaling(&[]),
        ];
        assert!(c.iter().all(|c| c.status == Status::Absent));
        assert!(!any_failed(&c));
    }

    #[test]
    fn sampling_tolerance_is_five_percent() {
        let rows = |grid: f64| -> Vec<SamplingRow> {
            (0..5)
                .flat_map(|s| {
                    [
                        SamplingRow {
                            mode: "constant-grid".into(),
                            seed: s,
                            val_mae: grid,
                        },
                        SamplingRow {
                            mode: "uniform-random".into(),
                            seed: s,
                            val_mae: 2.0,
                        },
                    ]
                })
                .collect()
        };
        assert_eq!(assess_sampling(&rows(2.1)).status, Status::Pass);
        assert_eq!(assess_sampling(&rows(2.11)).status, Status::Fail);
    }
}
