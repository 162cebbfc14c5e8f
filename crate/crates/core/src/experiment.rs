//! Experiment configuration and the in-memory pipeline behind every command:
//! dataset generation, per-variant training, closed-loop evaluation, ablations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::{self, FrameSet, Normalizer, Recording, Split};
use crate::error::{ensure, Result};
use crate::heads::{HeadParams, HeadRegistry, SamplerMode};
use crate::metrics::{self, SwerveThresholds};
use crate::model::{GridConfig, Model, ModelPolicy, ModelSpec, SoftTargetConfig};
use crate::rng::{self, SeedStreams};
use crate::sim::{
    expert_trace, generate_track, record_dataset, run_episode, ExpertTrace, SimConfig, Track, TrackConfig, Vehicle,
};
use crate::trainer::{self, FitReport, TrainConfig};

/// The six compared variants, in report order.
pub const STANDARD_VARIANTS: [&str; 6] = ["ebm", "ebm-temporal", "ebm-soft", "regression", "classification", "mdn"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Training tracks; each is driven `runs_per_track` times.
    pub tracks: usize,
    pub runs_per_track: usize,
    /// Fraction of recordings used for training; the rest validate.
    pub train_fraction: f64,
    /// Overrides of the world's track settings for training tracks.
    pub track: Option<TrackConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tracks: 8,
            runs_per_track: 2,
            train_fraction: 0.85,
            track: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub grid: GridConfig,
    pub soft_targets: SoftTargetConfig,
    pub mixture_components: usize,
    /// Weight of the temporal term in the `ebm-temporal` variant.
    pub temporal_alpha: f64,
    pub sampler: SamplerMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            grid: GridConfig::default(),
            soft_targets: SoftTargetConfig::default(),
            mixture_components: 5,
            temporal_alpha: 1.0,
            sampler: SamplerMode::ConstantGrid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Episodes per model and seed; episode `k` drives evaluation track `k`.
    pub episodes: usize,
    pub track: TrackConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 3,
            track: TrackConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Variant used for the negative-sampling and data-scaling studies.
    pub variant: String,
    pub fractions: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variant: "ebm".into(),
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            histogram_bins: 101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed of the world: tracks, expert choices, split, evaluation.
    pub seed: u64,
    /// One trained model per variant and seed; seeds drive initialization and sampling.
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub variants: Vec<String>,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationConfig,
    pub swerve: SwerveThresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("runs/default"),
            variants: STANDARD_VARIANTS.iter().map(|s| s.to_string()).collect(),
            sim: SimConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            ablation: AblationConfig::default(),
            swerve: SwerveThresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.training_track().validate()?;
        self.evaluation.track.validate()?;
        self.model.backbone.validate()?;
        self.train.validate()?;
        ensure!(!self.seeds.is_empty(), Config, "at least one seed is required");
        ensure!(!self.variants.is_empty(), Config, "at least one variant is required");
        for v in &self.variants {
            variant(&self.model, v)?;
        }
        variant(&self.model, &self.ablation.variant)?;
        ensure!(
            self.dataset.tracks >= 1 && self.dataset.runs_per_track >= 1,
            Config,
            "the dataset needs at least one track and run"
        );
        ensure!(
            self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0,
            Config,
            "train fraction must be in (0, 1), got {}",
            self.dataset.train_fraction
        );
        ensure!(self.evaluation.episodes >= 1, Config, "at least one evaluation episode is required");
        ensure!(!self.ablation.fractions.is_empty(), Config, "ablation needs data fractions");
        for &f in &self.ablation.fractions {
            ensure!(f > 0.0 && f <= 1.0, Config, "data fraction {f} outside (0, 1]");
        }
        ensure!(self.ablation.histogram_bins >= 1, Config, "histogram needs at least one bin");
        ensure!(
            self.swerve.half >= 0.0 && self.swerve.full >= self.swerve.half,
            Config,
            "swerve thresholds must satisfy 0 <= half <= full"
        );
        Ok(())
    }

    pub fn training_track(&self) -> &TrackConfig {
        self.dataset.track.as_ref().unwrap_or(&self.sim.track)
    }

    pub fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.seed)
    }
}

/// A named head configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub head: String,
    pub params: HeadParams,
}

/// Resolves one of [`STANDARD_VARIANTS`] or a bare registered head name.
pub fn variant(model: &ModelConfig, name: &str) -> Result<Variant> {
    let base = HeadParams {
        mixture_components: model.mixture_components,
        sampler: model.sampler,
        ..HeadParams::default()
    };
    let (head, params) = match name {
        "ebm-temporal" => (
            "ebm",
            HeadParams {
                temporal_alpha: model.temporal_alpha,
                ..base
            },
        ),
        "ebm-soft" => (
            "ebm",
            HeadParams {
                soft_targets: true,
                ..base
            },
        ),
        other => {
            let registry = HeadRegistry::default();
            if !registry.names().contains(&other) {
                let mut available: Vec<String> = STANDARD_VARIANTS.iter().map(|s| s.to_string()).collect();
                available.sort();
                return Err(crate::Error::UnknownHead {
                    name: other.to_string(),
                    available: available.join(", "),
                });
            }
            (other, base)
        }
    };
    Ok(Variant {
        name: name.to_string(),
        head: head.to_string(),
        params,
    })
}

/// Recordings with their split and train-only normalizer.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub recordings: Vec<Recording>,
    pub split: Split,
    pub normalizer: Normalizer,
    /// `(fork index, took side branch)` for every fork the expert passed.
    pub choices: Vec<(usize, bool)>,
    pub aborted: usize,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Training frames from the first `fraction` of the training recordings.
    pub fn train_set(&self, fraction: f64) -> Result<FrameSet> {
        let idx = data::subset(&self.split.train, fraction)?;
        FrameSet::new(idx.iter().map(|&i| &self.recordings[i]), &self.normalizer)
    }

    pub fn validation_set(&self) -> Result<FrameSet> {
        FrameSet::new(self.split.validation.iter().map(|&i| &self.recordings[i]), &self.normalizer)
    }

    pub fn labels(&self) -> impl Iterator<Item = f64> + '_ {
        self.recordings.iter().flat_map(|r| r.labels())
    }

    /// Labels of samples inside fork windows.
    pub fn fork_labels(&self) -> impl Iterator<Item = f64> + '_ {
        self.recordings
            .iter()
            .flat_map(|r| r.samples.iter().filter(|s| s.fork_window).map(|s| s.label))
    }
}

pub fn training_tracks(cfg: &ExperimentConfig) -> Result<Vec<Track>> {
    let streams = cfg.streams();
    (0..cfg.dataset.tracks)
        .map(|i| generate_track(streams.seed_indexed(rng::TRACK, i as u64), cfg.training_track()))
        .collect()
}

/// Drives the expert over the training tracks, splits by recording and fits the normalizer.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let streams = cfg.streams();
    let tracks = training_tracks(cfg)?;
    let vehicle = Vehicle::new(cfg.sim.vehicle.clone());
    let summary = record_dataset(
        &tracks,
        cfg.dataset.runs_per_track,
        cfg.sim.episode.dt,
        &cfg.sim.expert,
        &cfg.sim.observation,
        &vehicle,
        &streams,
    )?;
    assemble(summary.recordings, cfg.dataset.train_fraction, &streams, summary.choices, summary.aborted)
}

/// Splits `recordings` and fits the normalizer on the training part.
pub fn assemble(
    recordings: Vec<Recording>,
    train_fraction: f64,
    streams: &SeedStreams,
    choices: Vec<(usize, bool)>,
    aborted: usize,
) -> Result<Dataset> {
    for r in &recordings {
        r.validate()?;
    }
    let split = data::split(recordings.len(), train_fraction, &mut streams.stream(rng::SPLIT))?;
    let normalizer = Normalizer::fit(
        split
            .train
            .iter()
            .flat_map(|&i| recordings[i].samples.iter().map(|s| s.observation.as_slice())),
    )?;
    Ok(Dataset {
        recordings,
        split,
        normalizer,
        choices,
        aborted,
    })
}

pub fn model_spec(cfg: &ExperimentConfig, v: &Variant, input_dim: usize) -> ModelSpec {
    ModelSpec {
        head: v.head.clone(),
        params: v.params.clone(),
        backbone: cfg.model.backbone.clone(),
        grid: cfg.model.grid.clone(),
        soft_targets: cfg.model.soft_targets.clone(),
        input_dim,
    }
}

/// Trains one variant on `fraction` of the training recordings.
pub fn train_variant(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    v: &Variant,
    seed: u64,
    fraction: f64,
) -> Result<(Model, FitReport)> {
    let streams = SeedStreams::new(seed);
    let spec = model_spec(cfg, v, dataset.input_dim());
    let registry = HeadRegistry::default();
    let mut model = Model::new(spec, dataset.normalizer.clone(), &registry, &mut streams.stream(rng::INIT))?;
    let train = dataset.train_set(fraction)?;
    let val = dataset.validation_set()?;
    let report = trainer::fit(&mut model, &train, &val, &cfg.train, &mut streams.stream(rng::SAMPLER))?;
    log::info!(
        "trained {} seed {seed}: best val MAE {:.3} at epoch {}",
        v.name,
        report.best_val_mae,
        report.best_epoch
    );
    Ok((model, report))
}

/// An evaluation track with the expert trajectory that defines crashes on it.
#[derive(Clone, Debug)]
pub struct EvalTrack {
    pub track: Track,
    pub trace: ExpertTrace,
}

/// Episode `k` drives track `k`; tracks depend only on the root seed.
pub fn evaluation_tracks(cfg: &ExperimentConfig) -> Result<Vec<EvalTrack>> {
    let streams = cfg.streams();
    let vehicle = Vehicle::new(cfg.sim.vehicle.clone());
    (0..cfg.evaluation.episodes)
        .map(|k| {
            let track = generate_track(streams.seed_indexed(rng::EVAL, k as u64), &cfg.evaluation.track)?;
            let trace = expert_trace(&track, cfg.sim.episode.dt, &cfg.sim.expert, &vehicle)?;
            Ok(EvalTrack { track, trace })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub track_seed: u64,
    pub steps: usize,
    pub crashes: usize,
    pub w_cmd: f64,
    pub w_eff: f64,
    /// Peak deviation toward each fork's branch, meters.
    pub fork_peaks: Vec<f64>,
    pub aborted: Option<String>,
}

/// Closed-loop drive of `model` on one evaluation track.
pub fn evaluate_episode(cfg: &ExperimentConfig, model: &Model, k: usize, et: &EvalTrack) -> Result<EpisodeResult> {
    let vehicle = Vehicle::new(cfg.sim.vehicle.clone());
    let mut policy = ModelPolicy { model };
    let mut jitter = cfg.streams().stream_indexed(rng::EVAL, 1_000_000 + k as u64);
    let log = run_episode(
        &mut policy,
        &et.track,
        &et.trace,
        &cfg.sim.episode,
        &cfg.sim.observation,
        &vehicle,
        Some(&mut jitter),
    )?;
    let dt = cfg.sim.episode.dt;
    let commands = log.drives(|r| r.cmd_deg);
    let (w_cmd, w_eff) = if commands.iter().any(|d| d.len() >= 2) {
        (
            metrics::segmented_whiteness(&commands, dt)?,
            metrics::segmented_whiteness(&log.drives(|r| r.eff_deg), dt)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(EpisodeResult {
        episode: k,
        track_seed: et.track.seed,
        steps: log.rows.len(),
        crashes: metrics::crash_count(&log),
        w_cmd,
        w_eff,
        fork_peaks: metrics::fork_peaks(&log, &et.track),
        aborted: log.aborted,
    })
}

pub fn evaluate_model(cfg: &ExperimentConfig, model: &Model, tracks: &[EvalTrack]) -> Result<Vec<EpisodeResult>> {
    tracks
        .iter()
        .enumerate()
        .map(|(k, et)| evaluate_episode(cfg, model, k, et))
        .collect()
}

/// Swerve rate over the episodes of one model and seed.
pub fn swerve_rate(cfg: &ExperimentConfig, episodes: &[EpisodeResult]) -> Result<f64> {
    let peaks: Vec<f64> = episodes.iter().flat_map(|e| e.fork_peaks.iter().copied()).collect();
    ensure!(!peaks.is_empty(), InvalidArgument, "no fork sections were evaluated");
    Ok(metrics::swerve_from_peaks(vec![peaks], &cfg.swerve)?.rate)
}
