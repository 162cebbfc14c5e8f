use steerlab::artifacts::RunDir;
use steerlab::commands;
use steerlab::experiment::{generate_dataset, ExperimentConfig};
use steerlab::report::{Status, CRITERIA};
use steerlab::sim::TrackConfig;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 5;
    cfg.sim.expert.p_side = 0.5;
    cfg.dataset.tracks = 2;
    cfg.dataset.track = Some(TrackConfig {
        length: 700.0,
        fork_density: 1.5,
        first_fork: 150.0,
        last_fork_margin: 150.0,
        ..TrackConfig::default()
    });
    cfg
}

#[test]
fn a_loaded_dataset_matches_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let cfg = small();
    commands::generate(&cfg, &run).unwrap();
    let loaded = commands::load_dataset(&run).unwrap();
    let fresh = generate_dataset(&cfg).unwrap();
    assert_eq!(loaded.split, fresh.split);
    assert_eq!(loaded.normalizer, fresh.normalizer);
    assert_eq!(loaded.recordings, fresh.recordings);
}

#[test]
fn a_report_without_data_marks_every_run_criterion_absent() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let out = commands::report(&[run.clone()], &run, Vec::new(), None).unwrap();
    assert_eq!(out.criteria.len(), CRITERIA.len());
    assert!(out.criteria.iter().all(|c| c.status == Status::Absent), "{:?}", out.criteria);
    assert!(dir.path().join("report/report.md").exists());
}
