mod common;

use std::fs;
use std::path::Path;

use feddea::aggregate::{DeaConfig, DeaVariant};
use feddea::data::{CsvSchema, TaskKind};
use feddea::model::{Activation, HeadSpec, LossKind, ModelSpec};
use feddea::orchestrator::{
    analyze_masks, delta_report, read_records, run_ablation, run_experiment, sweep_rho, ClientSpec, CsvTask,
    Experiment, ExperimentConfig, RunOptions, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};
use feddea::params::read_checkpoint;
use feddea::Error;

use common::tiny_config;

fn in_dir(mut config: ExperimentConfig, dir: &Path) -> ExperimentConfig {
    config.out_dir = dir.to_path_buf();
    config
}

#[test]
fn three_rounds_give_three_records() {
    let tmp = tempfile::tempdir().unwrap();
    let config = in_dir(tiny_config(1, 3), &tmp.path().join("run"));
    let out = run_experiment(&config, RunOptions::default()).unwrap();
    let text = fs::read_to_string(out.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 3);
    let mut records = read_records(&out.dir).unwrap();
    for (r, o) in records.iter_mut().zip(&out.records) {
        r.wall_ms = o.wall_ms;
    }
    assert_eq!(records, out.records);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.round, i + 1);
        assert_eq!(r.per_task_val_metrics.len(), 4);
        assert_eq!(r.train_losses.len(), 4);
        assert_eq!(r.global_checksum.len(), 16);
    }
    let ckpt = read_checkpoint(out.dir.join(CHECKPOINT_FILE)).unwrap();
    assert!(ckpt.bitwise_eq(&out.final_params));
    assert!(out.dir.join(CONFIG_FILE).exists());
    assert!(!out.dir.join(".lock").exists());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny_config(2, 4);
    config.policy.dea = DeaConfig::full(0.3);
    config.policy.pcgrad = true;
    let mut files = Vec::new();
    for (i, threads) in [Some(1), Some(3), Some(1)].into_iter().enumerate() {
        let c = in_dir(config.clone(), &tmp.path().join(format!("r{i}")));
        let out = run_experiment(&c, RunOptions { threads }).unwrap();
        files.push((
            fs::read(out.dir.join(METRICS_FILE)).unwrap(),
            fs::read(out.dir.join(CHECKPOINT_FILE)).unwrap(),
        ));
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn rho_one_matches_disabled_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = in_dir(tiny_config(3, 3), &tmp.path().join("base"));
    let mut full = in_dir(tiny_config(3, 3), &tmp.path().join("full"));
    full.policy.dea = DeaConfig::full(1.0);
    let a = run_experiment(&base, RunOptions::default()).unwrap();
    let b = run_experiment(&full, RunOptions::default()).unwrap();
    for (x, y) in a.final_params.values().iter().zip(b.final_params.values()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn single_client_round_adds_its_update() {
    let mut config = tiny_config(4, 1);
    config.tasks.truncate(1);
    config.model.heads.truncate(1);
    config.clients.truncate(1);
    let exp = Experiment::new(config, RunOptions::default()).unwrap();
    let mut state = exp.initial_state().unwrap();
    let before = state.theta.clone();
    let updates = exp.run_round(&mut state).unwrap();
    assert_eq!(updates.len(), 1);
    let mut expected = before.clone();
    expected.add_scaled(&updates[0].delta, 1.0).unwrap();
    assert!(state.theta.bitwise_eq(&expected));
    assert_eq!(state.round, 1);
}

fn zero_csv(path: &Path) {
    let mut text = String::from("a,b,y\n");
    for _ in 0..10 {
        text.push_str("0,0,0\n");
    }
    fs::write(path, text).unwrap();
}

fn csv_config(dir: &Path) -> ExperimentConfig {
    let mut csv_tasks = Vec::new();
    for t in 0..2 {
        let path = dir.join(format!("task{t}.csv"));
        zero_csv(&path);
        csv_tasks.push(CsvTask {
            path,
            schema: CsvSchema {
                input_cols: vec!["a".into(), "b".into()],
                target_cols: vec!["y".into()],
                task_id: t,
                kind: TaskKind::Regression,
            },
        });
    }
    let mut config = tiny_config(5, 2);
    config.tasks.clear();
    config.csv_tasks = csv_tasks;
    config.model = ModelSpec {
        input_dim: 2,
        trunk_widths: vec![],
        activation: Activation::Tanh,
        heads: (0..2).map(|t| HeadSpec { task_id: t, output_dim: 1, loss: LossKind::Mse }).collect(),
        bias: false,
    };
    config.clients = (0..2).map(|t| ClientSpec { task_id: t, n_samples: None }).collect();
    config
}

#[test]
fn zero_gradient_clients_leave_parameters_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = csv_config(tmp.path());
    config.policy.dea = DeaConfig::full(0.5);
    let exp = Experiment::new(config, RunOptions::default()).unwrap();
    let mut state = exp.initial_state().unwrap();
    let before = state.theta.clone();
    exp.run_round(&mut state).unwrap();
    assert!(state.theta.bitwise_eq(&before));
}

#[test]
fn unwritable_out_dir_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let config = in_dir(tiny_config(6, 2), &blocker.join("run"));
    let err = run_experiment(&config, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(".lock"), "").unwrap();
    let err = run_experiment(&in_dir(tiny_config(7, 1), &dir), RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("locked"), "{err}");
    assert!(!dir.join(METRICS_FILE).exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let config = tiny_config(8, 1);
    let mut json: serde_json::Value = serde_json::from_str(&config.to_json_pretty()).unwrap();
    assert!(ExperimentConfig::from_json(&json.to_string()).is_ok());
    json["learning_rate"] = serde_json::json!(0.1);
    assert!(matches!(ExperimentConfig::from_json(&json.to_string()), Err(Error::Config(_))));
    json.as_object_mut().unwrap().remove("learning_rate");
    json["policy"]["dea"]["rh0"] = serde_json::json!(0.5);
    assert!(matches!(ExperimentConfig::from_json(&json.to_string()), Err(Error::Config(_))));
}

#[test]
fn config_round_trips_through_json() {
    let mut config = tiny_config(9, 2);
    config.policy.dea = DeaConfig::variant(DeaVariant::RandomMask, 0.4);
    let back = ExperimentConfig::from_json(&config.to_json_pretty()).unwrap();
    assert_eq!(back, config);
    assert_eq!(back.config_hash(), config.config_hash());
}

#[test]
fn config_hash_ignores_out_dir_and_pairing_ignores_decoupling() {
    let a = tiny_config(10, 2);
    let mut b = a.clone();
    b.out_dir = "elsewhere".into();
    assert_eq!(a.config_hash(), b.config_hash());
    b.policy.dea = DeaConfig::full(0.2);
    b.policy.pcgrad = true;
    assert_ne!(a.config_hash(), b.config_hash());
    assert_eq!(a.pairing_hash(), b.pairing_hash());
    b.seed += 1;
    assert_ne!(a.pairing_hash(), b.pairing_hash());
}

#[test]
fn invalid_configs_are_config_errors() {
    let mut two_clients = tiny_config(11, 1);
    two_clients.clients.push(ClientSpec { task_id: 0, n_samples: None });
    let mut no_rounds = tiny_config(11, 1);
    no_rounds.rounds = 0;
    let mut bad_rho = tiny_config(11, 1);
    bad_rho.policy.dea = DeaConfig::full(1.5);
    let mut overlapping = tiny_config(11, 1);
    overlapping.tasks[1].relevant_features = overlapping.tasks[0].relevant_features.clone();
    for c in [two_clients, no_rounds, bad_rho, overlapping] {
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn analysis_requires_stored_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_experiment(&in_dir(tiny_config(12, 1), &tmp.path().join("run")), RunOptions::default()).unwrap();
    let err = analyze_masks(&out.dir, 0.1, &[1], None).unwrap_err();
    assert!(matches!(err, Error::Analysis(_)));
    assert!(err.to_string().contains("store_deltas"), "{err}");
}

#[test]
fn overlap_matrices_from_stored_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = in_dir(tiny_config(13, 2), &tmp.path().join("run"));
    config.store_deltas = true;
    let out = run_experiment(&config, RunOptions::default()).unwrap();

    let report = analyze_masks(&out.dir, 0.1, &[1, 2], None).unwrap();
    assert_eq!(report.segment, "trunk.0.weight");
    assert_eq!(report.rounds.len(), 2);
    for r in &report.rounds {
        assert_eq!(r.matrix.len(), 4);
        for (i, row) in r.matrix.iter().enumerate() {
            assert_eq!(row.len(), 4);
            assert_eq!(row[i], 1.0);
        }
        assert!(out.dir.join(format!("overlap_r{}.csv", r.round)).exists());
    }

    let full = analyze_masks(&out.dir, 1.0, &[2], Some("all")).unwrap();
    assert_eq!(full.segment, "all");
    assert!(full.rounds[0].matrix.iter().flatten().all(|&v| v == 1.0));
    assert_eq!(full.rounds[0].mean_off_diagonal, 1.0);

    assert!(analyze_masks(&out.dir, 0.1, &[3], None).is_err());
    assert!(analyze_masks(&out.dir, 0.1, &[1], Some("no.such.segment")).is_err());
}

#[test]
fn delta_report_pairs_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = in_dir(tiny_config(14, 2), &tmp.path().join("base"));
    let mut enh = in_dir(tiny_config(14, 2), &tmp.path().join("enh"));
    enh.policy.dea = DeaConfig::full(0.25);
    run_experiment(&base, RunOptions::default()).unwrap();
    run_experiment(&enh, RunOptions::default()).unwrap();

    let report = delta_report(&base.out_dir, &enh.out_dir).unwrap();
    assert_eq!(report.metrics.len(), 4);
    assert!(report.delta_percent.is_finite());
    assert!(enh.out_dir.join("delta.json").exists());
    let same = delta_report(&base.out_dir, &base.out_dir).unwrap();
    assert_eq!(same.delta_percent, 0.0);

    let mut other = in_dir(tiny_config(15, 2), &tmp.path().join("other"));
    other.policy.dea = DeaConfig::full(0.25);
    run_experiment(&other, RunOptions::default()).unwrap();
    assert!(matches!(delta_report(&base.out_dir, &other.out_dir), Err(Error::Config(_))));
}

#[test]
fn sweep_writes_one_row_per_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let config = in_dir(tiny_config(16, 2), &tmp.path().join("sweep"));
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let report = sweep_rho(&config, &grid, RunOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 10);
    let csv = fs::read_to_string(config.out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let last = report.rows.last().unwrap();
    assert_eq!(last.rho, 1.0);
    assert!(last.delta_percent.abs() <= 1e-9);
    assert!(config.out_dir.join("sweep_summary.json").exists());

    assert!(sweep_rho(&config, &[0.0], RunOptions::default()).is_err());
    assert!(sweep_rho(&config, &[], RunOptions::default()).is_err());
}

#[test]
fn ablation_reports_five_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let config = in_dir(tiny_config(17, 2), &tmp.path().join("ablation"));
    let report = run_ablation(&config, RunOptions::default()).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["base", "dea", "dea_a_small_mask", "dea_b_no_rescale", "dea_c_random_mask"]);
    assert_eq!(report.delta("base"), Some(0.0));
    let csv = fs::read_to_string(config.out_dir.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn broadcast_is_identical_for_every_client() {
    // Every client starts from the same θ, so a client's update depends only
    // on its own data: running it alone gives the same delta.
    let config = tiny_config(18, 1);
    let exp = Experiment::new(config.clone(), RunOptions::default()).unwrap();
    let mut state = exp.initial_state().unwrap();
    let all = exp.run_round(&mut state).unwrap();
    let par = Experiment::new(config, RunOptions { threads: Some(4) }).unwrap();
    let mut state2 = par.initial_state().unwrap();
    let again = par.run_round(&mut state2).unwrap();
    assert_eq!(all, again);
    assert!(state.theta.bitwise_eq(&state2.theta));
}
