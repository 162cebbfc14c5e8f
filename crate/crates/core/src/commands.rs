//! The five experiment commands. Each reads and writes a run directory and
//! records its outputs in the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_csv, read_json, write_atomic, write_csv, write_json, RunDir, RunManifest};
use crate::data::{histogram, Normalizer, Recording, Split};
use crate::error::{ensure, Error, Result};
use crate::experiment::{
    evaluate_episode, evaluation_tracks, generate_dataset, swerve_rate, train_variant, variant, Dataset, EpisodeResult,
    ExperimentConfig,
};
use crate::heads::{HeadRegistry, SamplerMode};
use crate::metrics::{classify_swerve, whiteness};
use crate::model::Model;
use crate::report::{
    self, Criterion, EpisodeRow, HistogramRow, SamplingRow, ScalingRow, SwerveRateRow, SwerveRow,
};
use crate::sim::log_io::{read_recording_csv, write_recording_csv};
use crate::trainer::{EpochRecord, FitReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub file: String,
    pub split: String,
    pub track_seed: u64,
    pub samples: usize,
}

/// Shape statistics of the labels recorded inside fork windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimodalityReport {
    pub samples: usize,
    pub mean_deg: f64,
    pub std_deg: f64,
    pub skewness: f64,
    /// Sarle's coefficient `(skew² + 1) / kurtosis`; above 5/9 hints at more than one mode.
    pub coefficient: f64,
    pub side_choices: usize,
    pub fork_passes: usize,
}

impl BimodalityReport {
    pub fn from_labels(labels: &[f64], side_choices: usize, fork_passes: usize) -> Self {
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n.max(1.0);
        let m = |k: i32| labels.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n.max(1.0);
        let var = m(2);
        let (skew, kurt) = if var > 0.0 {
            (m(3) / var.powf(1.5), m(4) / (var * var))
        } else {
            (0.0, f64::NAN)
        };
        Self {
            samples: labels.len(),
            mean_deg: mean,
            std_deg: var.sqrt(),
            skewness: skew,
            coefficient: (skew * skew + 1.0) / kurt,
            side_choices,
            fork_passes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub dt: f64,
    pub observation_dim: usize,
    pub recordings: Vec<RecordingEntry>,
    /// Recording indices in sampling order; data fractions take a prefix of `train`.
    pub split: Split,
    pub normalizer: Normalizer,
    pub aborted_runs: usize,
    pub fork_labels: BimodalityReport,
}

fn ensure_config(dir: &RunDir, cfg: &ExperimentConfig) -> Result<()> {
    write_atomic(&dir.config(), cfg.to_toml()?.as_bytes())
}

/// Records the expert dataset, its split and the fork-label report.
pub fn generate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<DatasetManifest> {
    cfg.validate()?;
    ensure_config(dir, cfg)?;
    let ds = generate_dataset(cfg)?;
    ensure!(ds.recordings.len() >= 2, Data, "only {} recordings were produced", ds.recordings.len());
    let mut files = vec![dir.relative(&dir.config())];
    let mut entries = Vec::with_capacity(ds.recordings.len());
    for (i, rec) in ds.recordings.iter().enumerate() {
        let name = RunDir::recording_name(i);
        let path = dir.dataset_file(&name);
        let mut buf = Vec::new();
        write_recording_csv(&mut buf, rec)?;
        write_atomic(&path, &buf)?;
        files.push(dir.relative(&path));
        entries.push(RecordingEntry {
            file: name,
            split: if ds.split.train.contains(&i) { "train" } else { "validation" }.into(),
            track_seed: rec.track_seed,
            samples: rec.len(),
        });
    }
    let fork: Vec<f64> = ds.fork_labels().collect();
    let side = ds.choices.iter().filter(|c| c.1).count();
    let hist = histogram(
        fork.iter().copied(),
        cfg.ablation.histogram_bins,
        cfg.model.grid.a_min,
        cfg.model.grid.a_max,
    )?;
    let hist_path = dir.dataset_file("fork_labels.csv");
    write_csv(
        &hist_path,
        &hist
            .into_iter()
            .map(|(center_deg, count)| HistogramRow { center_deg, count })
            .collect::<Vec<_>>(),
    )?;
    files.push(dir.relative(&hist_path));
    let manifest = DatasetManifest {
        seed: cfg.seed,
        dt: cfg.sim.episode.dt,
        observation_dim: ds.input_dim(),
        recordings: entries,
        split: ds.split.clone(),
        normalizer: ds.normalizer.clone(),
        aborted_runs: ds.aborted,
        fork_labels: BimodalityReport::from_labels(&fork, side, ds.choices.len()),
    };
    write_json(&dir.dataset_manifest(), &manifest)?;
    files.push(dir.relative(&dir.dataset_manifest()));
    RunManifest::record(dir, cfg.seed, "generate", files)?;
    log::info!(
        "generated {} recordings ({} fork passes, {} side choices)",
        manifest.recordings.len(),
        manifest.fork_labels.fork_passes,
        side
    );
    Ok(manifest)
}

/// Reads the dataset written by [`generate`].
pub fn load_dataset(dir: &RunDir) -> Result<Dataset> {
    let path = dir.dataset_manifest();
    ensure!(
        path.exists(),
        Data,
        "no dataset at {}; run `generate` first",
        path.display()
    );
    let m: DatasetManifest = read_json(&path)?;
    let mut recordings: Vec<Recording> = Vec::with_capacity(m.recordings.len());
    for (i, e) in m.recordings.iter().enumerate() {
        let p = dir.dataset_file(&e.file);
        let f = fs::File::open(&p).map_err(|err| Error::io(&p, err))?;
        recordings.push(read_recording_csv(std::io::BufReader::new(f), m.dt)?);
        let listed = match e.split.as_str() {
            "train" => &m.split.train,
            "validation" => &m.split.validation,
            other => return Err(Error::Data(format!("unknown split {other:?} for {}", e.file))),
        };
        ensure!(
            listed.contains(&i),
            Data,
            "{} is marked {} but missing from that split's order",
            e.file,
            e.split
        );
    }
    ensure!(
        m.split.train.len() + m.split.validation.len() == recordings.len(),
        Data,
        "split lists {} recordings, the manifest {}",
        m.split.train.len() + m.split.validation.len(),
        recordings.len()
    );
    let split = m.split;
    Ok(Dataset {
        recordings,
        split,
        normalizer: m.normalizer,
        choices: Vec::new(),
        aborted: m.aborted_runs,
    })
}

/// `fit.json` next to each checkpoint; the per-epoch curve lives in `curve.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    pub skipped_steps: usize,
}

impl From<&FitReport> for FitSummary {
    fn from(f: &FitReport) -> Self {
        Self {
            epochs: f.curve.len() - 1,
            best_epoch: f.best_epoch,
            best_val_mae: f.best_val_mae,
            stopped_early: f.stopped_early,
            skipped_steps: f.skipped_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub variant: String,
    pub seed: u64,
    pub skipped: bool,
    pub best_val_mae: f64,
}

/// Trains every configured variant for every seed; finished ones are skipped.
pub fn train(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let ds = load_dataset(dir)?;
    let mut outcomes = Vec::new();
    let mut files = Vec::new();
    for name in &cfg.variants {
        let v = variant(&cfg.model, name)?;
        for &seed in &cfg.seeds {
            let ckpt = dir.checkpoint(name, seed);
            let fit_path = dir.model_dir(name, seed).join("fit.json");
            let curve_path = dir.model_dir(name, seed).join("curve.csv");
            files.extend([&ckpt, &fit_path, &curve_path].map(|p| dir.relative(p)));
            if ckpt.exists() && fit_path.exists() {
                let fit: FitSummary = read_json(&fit_path)?;
                log::info!("{name} seed {seed}: checkpoint exists, skipping");
                outcomes.push(TrainOutcome {
                    variant: name.clone(),
                    seed,
                    skipped: true,
                    best_val_mae: fit.best_val_mae,
                });
                continue;
            }
            let (model, fit) = train_variant(cfg, &ds, &v, seed, 1.0)?;
            write_csv(&curve_path, &fit.curve)?;
            let mut buf = Vec::new();
            model.save(&mut buf)?;
            write_atomic(&ckpt, &buf)?;
            write_json(&fit_path, &FitSummary::from(&fit))?;
            outcomes.push(TrainOutcome {
                variant: name.clone(),
                seed,
                skipped: false,
                best_val_mae: fit.best_val_mae,
            });
        }
    }
    RunManifest::record(dir, cfg.seed, "train", files)?;
    Ok(outcomes)
}

pub fn load_model(path: &Path) -> Result<Model> {
    ensure!(
        path.exists(),
        Data,
        "missing checkpoint {}; run `train` first",
        path.display()
    );
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Model::load(std::io::BufReader::new(f), &HeadRegistry::default())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Evaluation tables for one model and seed.
pub fn episode_rows(model: &str, seed: u64, results: &[EpisodeResult]) -> Vec<EpisodeRow> {
    results
        .iter()
        .map(|r| EpisodeRow {
            model: model.to_string(),
            seed,
            episode: r.episode,
            track_seed: r.track_seed,
            steps: r.steps,
            crashes: r.crashes,
            w_cmd: r.w_cmd,
            w_eff: r.w_eff,
            forks: r.fork_peaks.len(),
            aborted: r.aborted.clone().unwrap_or_default(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationTables {
    pub episodes: Vec<EpisodeRow>,
    pub swerves: Vec<SwerveRow>,
    pub rates: Vec<SwerveRateRow>,
}

/// Drives every trained model on the evaluation tracks, `jobs` episodes at a time.
pub fn evaluate(cfg: &ExperimentConfig, dir: &RunDir, jobs: usize) -> Result<EvaluationTables> {
    cfg.validate()?;
    let mut models = Vec::new();
    for name in &cfg.variants {
        for &seed in &cfg.seeds {
            models.push((name.clone(), seed, load_model(&dir.checkpoint(name, seed))?));
        }
    }
    let tracks = evaluation_tracks(cfg)?;
    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..tracks.len()).map(move |k| (m, k)))
        .collect();
    let results: Vec<Result<EpisodeResult>> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(m, k)| evaluate_episode(cfg, &models[m].2, k, &tracks[k]))
            .collect()
    });
    let mut results = results.into_iter();
    let mut tables = EvaluationTables {
        episodes: Vec::new(),
        swerves: Vec::new(),
        rates: Vec::new(),
    };
    for (name, seed, _) in &models {
        let eps: Vec<EpisodeResult> = results.by_ref().take(tracks.len()).collect::<Result<_>>()?;
        tables.episodes.extend(episode_rows(name, *seed, &eps));
        for e in &eps {
            for (fork, &peak) in e.fork_peaks.iter().enumerate() {
                tables.swerves.push(SwerveRow {
                    model: name.clone(),
                    seed: *seed,
                    episode: e.episode,
                    fork,
                    peak_m: peak,
                    class: format!("{:?}", classify_swerve(peak, &cfg.swerve)).to_lowercase(),
                });
            }
        }
        let sections = eps.iter().map(|e| e.fork_peaks.len()).sum();
        if sections > 0 {
            tables.rates.push(SwerveRateRow {
                model: name.clone(),
                seed: *seed,
                sections,
                rate: swerve_rate(cfg, &eps)?,
            });
        }
    }
    let paths = [
        dir.evaluation("episodes.csv"),
        dir.evaluation("means.csv"),
        dir.evaluation("swerve.csv"),
        dir.evaluation("swerve_rates.csv"),
    ];
    write_csv(&paths[0], &tables.episodes)?;
    write_csv(&paths[1], &report::means(&tables.episodes))?;
    write_csv(&paths[2], &tables.swerves)?;
    write_csv(&paths[3], &tables.rates)?;
    RunManifest::record(dir, cfg.seed, "evaluate", paths.iter().map(|p| dir.relative(p)).collect())?;
    Ok(tables)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTables {
    pub sampling: Vec<SamplingRow>,
    pub scaling: Vec<ScalingRow>,
    pub histogram: Vec<HistogramRow>,
}

/// Negative-sampling comparison, data scaling and the label histogram.
pub fn ablate(cfg: &ExperimentConfig, dir: &RunDir, jobs: usize) -> Result<AblationTables> {
    cfg.validate()?;
    let ds = load_dataset(dir)?;
    let base = variant(&cfg.model, &cfg.ablation.variant)?;
    let tracks = evaluation_tracks(cfg)?;
    let pool = pool(jobs)?;

    let mut sampling = Vec::new();
    for &seed in &cfg.seeds {
        for mode in [SamplerMode::ConstantGrid, SamplerMode::UniformRandom] {
            let mut v = base.clone();
            v.params.sampler = mode;
            let (_, fit) = train_variant(cfg, &ds, &v, seed, 1.0)?;
            sampling.push(SamplingRow {
                mode: mode.as_str().into(),
                seed,
                val_mae: fit.best_val_mae,
            });
        }
    }

    let mut scaling = Vec::new();
    for &fraction in &cfg.ablation.fractions {
        for &seed in &cfg.seeds {
            let (model, fit) = train_variant(cfg, &ds, &base, seed, fraction)?;
            let eps: Vec<EpisodeResult> = pool.install(|| {
                tracks
                    .par_iter()
                    .enumerate()
                    .map(|(k, t)| evaluate_episode(cfg, &model, k, t))
                    .collect::<Result<_>>()
            })?;
            let w_cmd = eps.iter().map(|e| e.w_cmd).sum::<f64>() / eps.len() as f64;
            scaling.push(ScalingRow {
                fraction,
                seed,
                train_recordings: crate::data::subset(&ds.split.train, fraction)?.len(),
                val_mae: fit.best_val_mae,
                w_cmd,
            });
        }
    }

    let histogram = label_histogram(cfg, &ds)?;
    let paths = [
        dir.ablation("sampling.csv"),
        dir.ablation("data_scaling.csv"),
        dir.ablation("label_histogram.csv"),
    ];
    write_csv(&paths[0], &sampling)?;
    write_csv(&paths[1], &scaling)?;
    write_csv(&paths[2], &histogram)?;
    RunManifest::record(dir, cfg.seed, "ablate", paths.iter().map(|p| dir.relative(p)).collect())?;
    Ok(AblationTables {
        sampling,
        scaling,
        histogram,
    })
}

/// Histogram of every recorded label over the action range.
pub fn label_histogram(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<HistogramRow>> {
    Ok(histogram(
        ds.labels(),
        cfg.ablation.histogram_bins,
        cfg.model.grid.a_min,
        cfg.model.grid.a_max,
    )?
    .into_iter()
    .map(|(center_deg, count)| HistogramRow { center_deg, count })
    .collect())
}

/// Self-contained criteria are computed by the caller and passed in.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub criteria: Vec<Criterion>,
    pub markdown: String,
    pub files: Vec<PathBuf>,
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_csv(path)
    } else {
        Ok(Vec::new())
    }
}

/// Aggregates the tables of `runs` into `out` (markdown, summary and criteria CSV).
///
/// `checks` holds results for the criteria that need no run artifacts; any
/// criterion neither checked nor backed by artifacts is reported as absent.
pub fn report(runs: &[RunDir], out: &RunDir, checks: Vec<Criterion>, white_noise: Option<(usize, usize)>) -> Result<ReportOutput> {
    ensure!(!runs.is_empty(), Config, "report needs at least one run directory");
    let mut episodes: Vec<EpisodeRow> = Vec::new();
    let mut rates: Vec<SwerveRateRow> = Vec::new();
    let mut sampling: Vec<SamplingRow> = Vec::new();
    let mut scaling: Vec<ScalingRow> = Vec::new();
    for run in runs {
        ensure!(run.root.is_dir(), Config, "{} is not a directory", run.root.display());
        episodes.extend(read_optional::<EpisodeRow>(&run.evaluation("episodes.csv"))?);
        rates.extend(read_optional::<SwerveRateRow>(&run.evaluation("swerve_rates.csv"))?);
        sampling.extend(read_optional::<SamplingRow>(&run.ablation("sampling.csv"))?);
        scaling.extend(read_optional::<ScalingRow>(&run.ablation("data_scaling.csv"))?);
    }
    let mut criteria: Vec<Criterion> = Vec::new();
    for id in report::CRITERIA {
        let c = match id {
            "AC4" => report::assess_whiteness(&episodes),
            "AC5" => report::assess_actuator(&episodes, white_noise),
            "AC6" => report::assess_swerve(&episodes, &rates),
            "AC8" => report::assess_sampling(&sampling),
            "AC9" => report::assess_scaling(&scaling),
            _ => checks
                .iter()
                .find(|c| c.id == id)
                .cloned()
                .unwrap_or_else(|| Criterion::absent(id, "not checked")),
        };
        criteria.push(c);
    }
    let summary = report::summary(&episodes, &rates);
    let means = report::means(&episodes);
    let markdown = report::markdown(&summary, &means, &criteria);
    let files = vec![out.report("report.md"), out.report("summary.csv"), out.report("criteria.csv")];
    write_atomic(&files[0], markdown.as_bytes())?;
    write_csv(&files[1], &summary)?;
    write_csv(&files[2], &criteria)?;
    Ok(ReportOutput {
        criteria,
        markdown,
        files,
    })
}

/// Training curve rows as written next to each checkpoint.
pub fn read_curve(dir: &RunDir, variant: &str, seed: u64) -> Result<Vec<EpochRecord>> {
    read_csv(&dir.model_dir(variant, seed).join("curve.csv"))
}

/// Command whiteness of a series sampled every `dt`, or NaN when too short.
pub fn whiteness_or_nan(series: &[f64], dt: f64) -> f64 {
    whiteness(series, dt).unwrap_or(f64::NAN)
}
