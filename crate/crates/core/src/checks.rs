//! Self-contained acceptance checks that need no run directory: gradient
//! checks of every loss, loss identities, the bimodal microbenchmark,
//! actuator smoothing, expert soundness and the metric examples.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use steerlab_autodiff::{Graph, Tensor, Var};

use crate::action_space::{calibrate_temperature, mass_within, soft_targets, ActionGrid};
use crate::backbone::BackboneConfig;
use crate::data::{FrameSet, Normalizer, Recording, Sample};
use crate::error::Result;
use crate::heads::losses::{self, EbmTargets};
use crate::heads::{Diagnostics, HeadParams, HeadRegistry};
use crate::metrics::{self, SwerveThresholds};
use crate::model::{GridConfig, Model, ModelSpec, SoftTargetConfig};
use crate::report::Criterion;
use crate::rng::{Rng, SeedStreams};
use crate::sim::log_io::write_episode_csv;
use crate::sim::{
    actuate, expert_trace, generate_track, run_episode, EpisodeConfig, EpisodeLog, ExpertConfig, ExpertPolicy,
    ObservationConfig, Policy, PolicyInput, TrackConfig, Vehicle, VehicleParams,
};
use crate::trainer::{fit, TrainConfig};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Bound on `|ad - fd| / (|fd| + 1e-8)` per component.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Worst relative error between reverse-mode and central-difference gradients
/// of `loss` at `x`.
pub fn gradient_error(x: &Tensor, loss: &dyn Fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let l = loss(&mut g, v)?;
    let grads = g.backward(l)?;
    let ad = grads.get(v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]);
    let eval = |p: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(p.clone());
        let l = loss(&mut g, v)?;
        Ok(g.value(l).item())
    };
    let mut worst: f64 = 0.0;
    let mut p = x.clone();
    for i in 0..x.numel() {
        let x0 = x.data()[i];
        p.data_mut()[i] = x0 + FD_STEP;
        let up = eval(&p)?;
        p.data_mut()[i] = x0 - FD_STEP;
        let down = eval(&p)?;
        p.data_mut()[i] = x0;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((ad[i] - fd).abs() / (fd.abs() + 1e-8));
    }
    Ok(worst)
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let n = Normal::new(0.0, scale).expect("positive scale");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect()).expect("sized")
}

/// A randomly drawn loss input together with its loss.
type LossCase = (Tensor, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>);

/// Inputs and loss closures for one random point of every head loss.
fn loss_cases(rng: &mut Rng) -> Result<Vec<(&'static str, LossCase)>> {
    const B: usize = 4;
    const N: usize = 12;
    let grid = ActionGrid::new(-30.0, 30.0, N - 1)?;
    let labels: Vec<f64> = (0..B).map(|_| rng.gen_range(-29.0..29.0)).collect();
    let classes: Vec<usize> = (0..B).map(|_| rng.gen_range(0..N)).collect();
    let temperature = calibrate_temperature(&grid, 0.999, 8.0)?;
    let mut soft = Vec::with_capacity(B * N);
    for &a in &labels {
        soft.extend(soft_targets(&grid.with_ground_truth(a), a, temperature)?.probs);
    }
    let soft = Tensor::matrix(B, N, soft)?;
    let gt: Vec<usize> = vec![N - 1; B];
    let pairs: Vec<(usize, usize)> = (0..B / 2).map(|k| (2 * k, 2 * k + 1)).collect();
    let alpha = rng.gen_range(0.1..2.0);
    let mdn_targets: Vec<f64> = (0..B).map(|_| rng.gen_range(-100.0..100.0)).collect();

    let mut cases: Vec<(&'static str, LossCase)> = Vec::new();
    let reg_targets = labels.clone();
    cases.push((
        "mae",
        (
            normal_matrix(B, 1, 20.0, rng),
            Box::new(move |g, v| losses::mae(g, v, &reg_targets)),
        ),
    ));
    let ce_classes = classes.clone();
    cases.push((
        "cross-entropy",
        (
            normal_matrix(B, N, 1.0, rng),
            Box::new(move |g, v| losses::cross_entropy(g, v, &ce_classes)),
        ),
    ));
    let mdn_t = mdn_targets.clone();
    cases.push((
        "mdn-nll",
        (
            normal_matrix(B, 15, 0.5, rng),
            Box::new(move |g, v| losses::mdn_nll(g, v, &mdn_t, 0.0, 250.0, 1e-3)),
        ),
    ));
    let one_hot = gt.clone();
    cases.push((
        "ebm-one-hot",
        (
            normal_matrix(B, N, 1.0, rng),
            Box::new(move |g, v| losses::ebm_loss(g, v, EbmTargets::OneHot(&one_hot))),
        ),
    ));
    cases.push((
        "ebm-soft",
        (
            normal_matrix(B, N, 1.0, rng),
            Box::new(move |g, v| losses::ebm_loss(g, v, EbmTargets::Soft(&soft))),
        ),
    ));
    cases.push((
        "ebm-temporal",
        (
            normal_matrix(B, N, 1.0, rng),
            Box::new(move |g, v| {
                let ce = losses::ebm_loss(g, v, EbmTargets::OneHot(&gt))?;
                let cols = g.slice_cols(v, 0, N - 1)?;
                let tt = losses::temporal_smoothing(g, cols, &pairs, alpha)?;
                Ok(g.add(ce, tt)?)
            }),
        ),
    ));
    Ok(cases)
}

/// Gradient check of every head loss at `points` random inputs.
pub fn check_gradients(points: usize, seed: u64) -> Result<Criterion> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for _ in 0..points {
        for (name, (x, loss)) in loss_cases(&mut rng)? {
            let e = gradient_error(&x, loss.as_ref())?;
            match worst.iter_mut().find(|w| w.0 == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    let pass = worst.iter().all(|w| w.1 < FD_TOLERANCE);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Criterion::new(
        "AC1",
        pass,
        format!("worst relative error over {points} points (< {FD_TOLERANCE:e}): {detail}"),
    ))
}

/// Shift invariance, classification/EBM equivalence and soft-target calibration.
pub fn check_loss_identities(trials: usize, seed: u64) -> Result<Criterion> {
    let mut rng = Rng::seed_from_u64(seed);
    let grid = ActionGrid::standard();
    let n = grid.len() + 1;
    let (mut shift, mut equiv, mut sum_err) = (0.0f64, 0.0f64, 0.0f64);
    let cfg = SoftTargetConfig::default();
    let temperature = calibrate_temperature(&grid, cfg.mass, cfg.window)?;
    let mut min_mass = f64::INFINITY;
    for _ in 0..trials {
        let e = normal_matrix(2, n, 3.0, &mut rng);
        let c = rng.gen_range(-100.0..100.0);
        let a: Vec<f64> = (0..2).map(|_| rng.gen_range(grid.a_min()..grid.a_max())).collect();
        let gt = [n - 1, n - 1];
        let mut soft = Vec::new();
        for &ai in &a {
            let t = soft_targets(&grid.with_ground_truth(ai), ai, temperature)?;
            sum_err = sum_err.max((t.probs.iter().sum::<f64>() - 1.0).abs());
            min_mass = min_mass.min(mass_within(&grid.with_ground_truth(ai), ai, temperature, cfg.window)?);
            soft.extend(t.probs);
        }
        let soft = Tensor::matrix(2, n, soft)?;
        let mut g = Graph::new();
        let ev = g.input(e.clone());
        let shifted = g.add_scalar(ev, c);
        for targets in [EbmTargets::OneHot(&gt), EbmTargets::Soft(&soft)] {
            let t2 = match &targets {
                EbmTargets::OneHot(i) => EbmTargets::OneHot(i),
                EbmTargets::Soft(s) => EbmTargets::Soft(s),
            };
            let l0 = losses::ebm_loss(&mut g, ev, targets)?;
            let l1 = losses::ebm_loss(&mut g, shifted, t2)?;
            shift = shift.max((g.value(l0).item() - g.value(l1).item()).abs());
        }
        let neg = g.neg(ev);
        let ce = losses::cross_entropy(&mut g, neg, &gt)?;
        let eb = losses::ebm_loss(&mut g, ev, EbmTargets::OneHot(&gt))?;
        equiv = equiv.max((g.value(ce).item() - g.value(eb).item()).abs());
    }
    let pass = shift < 1e-9 && equiv < 1e-12 && sum_err < 1e-9 && min_mass >= cfg.mass;
    Ok(Criterion::new(
        "AC2",
        pass,
        format!(
            "{trials} trials: shift {shift:.1e} (< 1e-9), CE vs EBM {equiv:.1e} (< 1e-12), \
             target sum {sum_err:.1e} (< 1e-9), min mass within ±{}° {min_mass:.6} (>= {}) at T={temperature:.4}",
            cfg.window, cfg.mass
        ),
    ))
}

/// Settings of the single-observation bimodal benchmark.
#[derive(Clone, Debug)]
pub struct BimodalConfig {
    /// Mode magnitude `A`, degrees.
    pub amplitude: f64,
    pub seeds: usize,
    pub samples: usize,
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
    pub head: HeadParams,
    /// Fraction of trials that must succeed.
    pub required: f64,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        Self {
            amplitude: 20.0,
            seeds: 20,
            samples: 64,
            train: TrainConfig {
                batch_size: 64,
                max_epochs: 200,
                batches_per_epoch: 8,
                patience: 0,
                restore_best: false,
                ..TrainConfig::default()
            },
            backbone: BackboneConfig {
                widths: vec![32],
                action_harmonics: 8,
                ..BackboneConfig::default()
            },
            head: HeadParams::default(),
            required: 0.95,
        }
    }
}

fn bimodal_recording(cfg: &BimodalConfig) -> Recording {
    let samples = (0..cfg.samples)
        .map(|i| Sample {
            t: i as f64 * 0.1,
            s: 0.0,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
            eff_deg: 0.0,
            label: if i % 2 == 0 { cfg.amplitude } else { -cfg.amplitude },
            fork_window: false,
            observation: vec![1.0, -0.5],
        })
        .collect();
    Recording {
        track_seed: 0,
        dt: 0.1,
        samples,
    }
}

/// Whether `energies` has a local minimum within `bins` of `index`.
pub fn has_local_min_near(energies: &[f64], index: usize, bins: usize) -> bool {
    let lo = index.saturating_sub(bins);
    let hi = (index + bins).min(energies.len() - 1);
    (lo..=hi).any(|i| {
        let left = i == 0 || energies[i] <= energies[i - 1];
        let right = i + 1 == energies.len() || energies[i] <= energies[i + 1];
        left && right
    })
}

/// Per-head success counts of the bimodal benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BimodalOutcome {
    pub head: &'static str,
    pub successes: usize,
    pub trials: usize,
    /// Predictions of every trial, degrees.
    pub predictions: Vec<f64>,
}

/// Trains each head on one observation labelled `±A` with equal frequency.
pub fn run_bimodal(cfg: &BimodalConfig) -> Result<Vec<BimodalOutcome>> {
    let rec = bimodal_recording(cfg);
    let set = FrameSet::new([&rec], &Normalizer::identity(2))?;
    let reg = HeadRegistry::default();
    let a = cfg.amplitude;
    let mut out = Vec::new();
    for head in ["ebm", "classification", "mdn", "regression"] {
        let mut outcome = BimodalOutcome {
            head,
            successes: 0,
            trials: cfg.seeds,
            predictions: Vec::new(),
        };
        let mut landscape_ok = 0;
        for seed in 0..cfg.seeds as u64 {
            let streams = SeedStreams::new(seed);
            let spec = ModelSpec {
                head: head.into(),
                params: cfg.head.clone(),
                backbone: cfg.backbone.clone(),
                grid: GridConfig::default(),
                soft_targets: SoftTargetConfig::default(),
                input_dim: 2,
            };
            let mut model = Model::new(
                spec,
                Normalizer::identity(2),
                &reg,
                &mut streams.stream(crate::rng::INIT),
            )?;
            fit(&mut model, &set, &set, &cfg.train, &mut streams.stream(crate::rng::SAMPLER))?;
            let out = model.infer(&rec.samples[0].observation)?;
            let p = out.command;
            outcome.predictions.push(p);
            let ok = if head == "regression" {
                p > -0.9 * a && p < 0.9 * a
            } else {
                (p - a).abs() <= 0.1 * a || (p + a).abs() <= 0.1 * a
            };
            outcome.successes += usize::from(ok);
            if let Diagnostics::Energies(e) = &out.diagnostics {
                let both = [a, -a]
                    .iter()
                    .all(|&m| has_local_min_near(e, model.grid.bin_index(m), 2));
                landscape_ok += usize::from(both);
            }
        }
        if head == "ebm" {
            out.push(BimodalOutcome {
                head: "ebm-landscape",
                successes: landscape_ok,
                trials: cfg.seeds,
                predictions: Vec::new(),
            });
        }
        out.push(outcome);
    }
    Ok(out)
}

pub fn check_bimodal(cfg: &BimodalConfig) -> Result<Criterion> {
    let outcomes = run_bimodal(cfg)?;
    let need = (cfg.required * cfg.seeds as f64).ceil() as usize;
    let pass = outcomes.iter().all(|o| o.successes >= need);
    let detail = outcomes
        .iter()
        .map(|o| format!("{} {}/{}", o.head, o.successes, o.trials))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Criterion::new(
        "AC3",
        pass,
        format!("A={}°, successes (need {need}): {detail}", cfg.amplitude),
    ))
}

/// Seeded white-noise commands through the actuator; counts `W_eff <= W_cmd`.
pub fn white_noise_smoothing(sequences: usize, steps: usize, seed: u64, params: &VehicleParams, dt: f64) -> Result<(usize, usize)> {
    let mut held = 0;
    for k in 0..sequences {
        let mut rng = SeedStreams::new(seed).stream_indexed("white-noise", k as u64);
        let sigma = rng.gen_range(1.0..200.0);
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        let cmd: Vec<f64> = (0..steps).map(|_| n.sample(&mut rng)).collect();
        let mut wheel = 0.0;
        let eff: Vec<f64> = cmd
            .iter()
            .map(|&c| {
                wheel = actuate(wheel, c, dt, params);
                wheel
            })
            .collect();
        held += usize::from(metrics::whiteness(&eff, dt)? <= metrics::whiteness(&cmd, dt)?);
    }
    Ok((held, sequences))
}

fn expert_log(seed: u64, track_cfg: &TrackConfig, expert: &ExpertConfig, episode: &EpisodeConfig) -> Result<EpisodeLog> {
    let vehicle = Vehicle::default();
    let track = generate_track(seed, track_cfg)?;
    let trace = expert_trace(&track, episode.dt, expert, &vehicle)?;
    let mut policy = ExpertPolicy::new(&track, expert, &vehicle);
    run_episode(
        &mut policy,
        &track,
        &trace,
        episode,
        &ObservationConfig::default(),
        &vehicle,
        None,
    )
}

fn log_bytes(log: &EpisodeLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_episode_csv(&mut buf, &log.rows)?;
    Ok(buf)
}

/// The expert drives `tracks` seeded tracks without crashing, and replays are byte-identical.
pub fn check_expert(tracks: usize, seed: u64, track_cfg: &TrackConfig) -> Result<Criterion> {
    let expert = ExpertConfig::default();
    let episode = EpisodeConfig::default();
    let streams = SeedStreams::new(seed);
    let (mut crashes, mut mismatched, mut aborted) = (0, 0, 0);
    for k in 0..tracks {
        let s = streams.seed_indexed("expert-check", k as u64);
        let a = expert_log(s, track_cfg, &expert, &episode)?;
        let b = expert_log(s, track_cfg, &expert, &episode)?;
        crashes += metrics::crash_count(&a);
        aborted += usize::from(a.aborted.is_some());
        mismatched += usize::from(log_bytes(&a)? != log_bytes(&b)?);
    }
    Ok(Criterion::new(
        "AC7",
        crashes == 0 && mismatched == 0 && aborted == 0,
        format!("{tracks} tracks: {crashes} crashes, {aborted} aborted, {mismatched} non-identical replays"),
    ))
}

/// Expert driving that steers hard left during `[start, start + length)` seconds.
struct Excursion<'a> {
    expert: ExpertPolicy<'a>,
    start: f64,
    length: f64,
}

impl Policy for Excursion<'_> {
    fn command(&mut self, input: &PolicyInput<'_>) -> Result<f64> {
        let expert = self.expert.command(input)?;
        if input.t >= self.start && input.t < self.start + self.length {
            Ok(400.0)
        } else {
            Ok(expert)
        }
    }
}

/// The worked metric examples, each with its expected value.
pub fn check_metric_examples() -> Result<Criterion> {
    let mut failures: Vec<String> = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    expect("whiteness constant", metrics::whiteness(&[3.0; 10], 0.1)?, 0.0);
    expect("whiteness [0,2,2]", metrics::whiteness(&[0.0, 2.0, 2.0], 0.1)?, (400.0f64 / 2.0).sqrt());
    let ramp: Vec<f64> = (0..20).map(|i| i as f64).collect();
    expect("whiteness ramp", metrics::whiteness(&ramp, 0.1)?, 10.0);
    expect("mae identical", metrics::mae(&[1.5, -2.0], &[1.5, -2.0])?, 0.0);
    expect("mae [1,3]", metrics::mae(&[1.0, 3.0], &[0.0, 0.0])?, 2.0);
    expect(
        "mae permuted",
        metrics::mae(&[3.0, 1.0, -4.0], &[0.0, 0.5, 2.0])?,
        metrics::mae(&[1.0, -4.0, 3.0], &[0.5, 2.0, 0.0])?,
    );

    let cfg = TrackConfig {
        length: 1200.0,
        ..TrackConfig::default()
    };
    let expert = ExpertConfig::default();
    let episode = EpisodeConfig::default();
    let replay = expert_log(11, &cfg, &expert, &episode)?;
    expect("crash count expert", metrics::crash_count(&replay) as f64, 0.0);
    let vehicle = Vehicle::default();
    let track = generate_track(11, &cfg)?;
    let trace = expert_trace(&track, episode.dt, &expert, &vehicle)?;
    let mut policy = Excursion {
        expert: ExpertPolicy::new(&track, &expert, &vehicle),
        start: 20.0,
        length: 1.5,
    };
    let forced = run_episode(
        &mut policy,
        &track,
        &trace,
        &episode,
        &ObservationConfig::default(),
        &vehicle,
        None,
    )?;
    expect("crash count excursion", metrics::crash_count(&forced) as f64, 1.0);
    expect(
        "crash count matches flags",
        metrics::crash_count(&forced) as f64,
        forced.crashes.len() as f64,
    );

    let th = SwerveThresholds::default();
    expect(
        "swerve centerline",
        metrics::swerve_from_peaks(vec![vec![0.0; 3]; 3], &th)?.rate,
        0.0,
    );
    let peaks = vec![vec![0.7, 0.3, 0.0], vec![0.1, 0.0, 0.0], vec![0.0, 0.2, 0.0]];
    expect("swerve 1.5 of 9", metrics::swerve_from_peaks(peaks, &th)?.rate, 1.5 / 9.0);
    expect(
        "swerve away from branch",
        metrics::swerve_from_peaks(vec![vec![-1.5, -0.4, -3.0]], &th)?.rate,
        0.0,
    );
    let pass = failures.is_empty();
    let detail = if pass {
        "whiteness, MAE, crash count and swerve rate examples reproduced (1e-9)".to_string()
    } else {
        failures.join("; ")
    };
    Ok(Criterion::new("AC10", pass, detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_error_detects_a_wrong_gradient() {
        let x = Tensor::vector(vec![0.3, -0.7]);
        let good = gradient_error(&x, &|g, v| {
            let s = g.square(v);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(good < 1e-8);
        // Value x² but a graph with zero gradient.
        let x = Tensor::vector(vec![0.5]);
        let bad = gradient_error(&x, &|g, v| {
            let c = g.value(v).data()[0];
            let s = g.scale(v, 0.0);
            Ok(g.add_scalar(s, c * c))
        })
        .unwrap();
        assert!(bad > 0.5);
    }

    #[test]
    fn local_minimum_search() {
        let e = [3.0, 2.0, 1.0, 2.0, 0.5, 4.0];
        assert!(has_local_min_near(&e, 2, 0));
        assert!(has_local_min_near(&e, 3, 1));
        assert!(!has_local_min_near(&e, 0, 1));
    }

    #[test]
    fn metric_examples_pass() {
        let c = check_metric_examples().unwrap();
        assert_eq!(c.status, crate::report::Status::Pass, "{}", c.detail);
    }

    #[test]
    fn loss_identities_hold_on_a_few_trials() {
        let c = check_loss_identities(5, 1).unwrap();
        assert_eq!(c.status, crate::report::Status::Pass, "{}", c.detail);
    }

    #[test]
    fn gradients_pass_at_a_few_points() {
        let c = check_gradients(3, 2).unwrap();
        assert_eq!(c.status, crate::report::Status::Pass, "{}", c.detail);
    }
}
