use dperm::bench::{
    self, read_csv, read_json, write_csv, write_json, DatasetSource, ExperimentSpec, ModelChoice,
    OutputFormat, CSV_HEADER,
};
use dperm::mechanisms::{GradientVariant, MechanismKind};

fn small_spec(mechanisms: Vec<MechanismKind>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(
        DatasetSource::Blobs { n: 120, d: 4 },
        ModelChoice::LrL2 { reg_lambda: 0.05 },
        mechanisms,
    );
    spec.epsilon_grid = vec![0.1, 0.25];
    spec.repetitions = 3;
    spec.steps = 30;
    spec.base_seed = 5;
    spec.record_wall_time = false;
    spec
}

#[test]
fn none_only_gives_one_row_within_oracle_bound() {
    let mut spec = small_spec(vec![MechanismKind::None]);
    spec.repetitions = 1;
    let table = bench::run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    assert_eq!(row.mechanism, MechanismKind::None);
    // gap ≤ ‖∇L‖²/(2λ) with ‖∇L‖ ≤ tolerance
    assert!(row.opt_gap.abs() <= spec.oracle_tolerance.powi(2) / (2.0 * 0.05) + 1e-15);
}

#[test]
fn counts_cells_plus_reference() {
    let table = bench::run_experiment(&small_spec(vec![MechanismKind::Input])).unwrap();
    assert_eq!(table.rows.len(), 7);
    assert_eq!(table.rows[0].mechanism, MechanismKind::None);
    assert!(table.rows[1..]
        .iter()
        .all(|r| r.mechanism == MechanismKind::Input));
    assert!(table.rows[1..].iter().all(|r| r.realized_epsilon.is_some()));
}

fn emitted(spec: &ExperimentSpec, format: OutputFormat) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out");
    bench::emit(&bench::run_experiment(spec).unwrap(), format, &path).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn identical_specs_give_identical_files() {
    let spec = small_spec(MechanismKind::ALL.to_vec());
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        assert_eq!(emitted(&spec, format), emitted(&spec, format));
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut spec = small_spec(MechanismKind::ALL.to_vec());
    let serial = bench::run_experiment(&spec).unwrap();
    spec.workers = 4;
    let parallel = bench::run_experiment(&spec).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn cell_seed_ignores_the_other_mechanisms() {
    let both = bench::run_experiment(&small_spec(vec![
        MechanismKind::Output,
        MechanismKind::Gradient(GradientVariant::StepComposed),
    ]))
    .unwrap();
    let alone = bench::run_experiment(&small_spec(vec![MechanismKind::Gradient(
        GradientVariant::StepComposed,
    )]))
    .unwrap();
    assert_eq!(both.rows[7..], alone.rows[1..]);
}

#[test]
fn csv_and_json_round_trip() {
    let table = bench::run_experiment(&small_spec(MechanismKind::ALL.to_vec())).unwrap();
    let mut csv = Vec::new();
    write_csv(&table, &mut csv).unwrap();
    assert_eq!(
        std::str::from_utf8(&csv).unwrap().lines().next(),
        Some(CSV_HEADER)
    );
    assert_eq!(read_csv(csv.as_slice()).unwrap(), table);

    let mut json = Vec::new();
    write_json(&table, &mut json).unwrap();
    assert_eq!(read_json(json.as_slice()).unwrap(), table);
}

#[test]
fn embedded_aggregates_match_rows() {
    let table = bench::run_experiment(&small_spec(vec![
        MechanismKind::Input,
        MechanismKind::Objective,
    ]))
    .unwrap();
    let mut json = Vec::new();
    write_json(&table, &mut json).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    for (mech, eps_idx) in [("input", 0usize), ("input", 1), ("objective", 1)] {
        let agg = &v["aggregates"][mech][eps_idx];
        let eps = agg["epsilon"].as_f64().unwrap();
        let gaps: Vec<f64> = v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["mechanism"] == mech && r["epsilon"].as_f64() == Some(eps))
            .map(|r| r["opt_gap"].as_f64().unwrap())
            .collect();
        assert_eq!(gaps.len(), 3);
        let mean = gaps.iter().sum::<f64>() / 3.0;
        let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!(
            (agg["opt_gap_mean"].as_f64().unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0)
        );
        assert!((agg["opt_gap_std"].as_f64().unwrap() - sd).abs() <= 1e-12 * sd.max(1.0));
    }
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    // output perturbation needs strong convexity, which plain logistic lacks
    let mut spec = small_spec(vec![MechanismKind::Output, MechanismKind::Input]);
    spec.model = ModelChoice::Lr;
    let table = bench::run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 13);
    assert!(table.any_errors());
    let failed: Vec<_> = table.rows.iter().filter(|r| r.error.is_some()).collect();
    assert_eq!(failed.len(), 6);
    assert!(failed
        .iter()
        .all(|r| r.mechanism == MechanismKind::Output && r.accuracy.is_nan()));
    assert!(table
        .rows
        .iter()
        .filter(|r| r.mechanism == MechanismKind::Input)
        .all(|r| r.error.is_none()));
    let mut json = Vec::new();
    write_json(&table, &mut json).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert!(v["rows"][1]["error"]
        .as_str()
        .unwrap()
        .contains("strongly convex"));
}

#[test]
fn mlp_sweep_runs() {
    let mut spec = small_spec(vec![
        MechanismKind::Input,
        MechanismKind::Gradient(GradientVariant::StepComposed),
    ]);
    spec.model = ModelChoice::Mlp {
        hidden_width: Some(3),
        lipschitz: 1.0,
        smoothness: 1.0,
        pl_mu: None,
    };
    spec.repetitions = 1;
    let table = bench::run_experiment(&spec).unwrap();
    assert!(!table.any_errors(), "{table:?}");
    assert!(table
        .rows
        .iter()
        .all(|r| r.accuracy >= 0.0 && r.accuracy <= 1.0));
}

#[test]
fn grid_search_picks_from_documented_grid() {
    let mut spec = small_spec(vec![MechanismKind::Input]);
    spec.grid_search = true;
    let prepared = bench::PreparedExperiment::new(spec).unwrap();
    assert!(bench::STEPS_GRID.contains(&prepared.tuning.steps));
    assert!(bench::LEARNING_RATE_GRID.contains(&prepared.tuning.learning_rate));
}

#[test]
fn csv_dataset_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,label\n");
    for i in 0..20 {
        let y = if i % 2 == 0 { "yes" } else { "no" };
        csv += &format!("{},{},{y}\n", i as f64 * 0.1, 1.0 - i as f64 * 0.05);
    }
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    let spec_path = dir.path().join("s.toml");
    std::fs::write(
        &spec_path,
        "dataset = \"d.csv\"\nlabel_column = \"label\"\npositive_label = \"yes\"\nmodel = \"lr_l2\"\nreg_lambda = 0.1\nmechanisms = [\"input\"]\nepsilon_grid = [0.5]\n",
    )
    .unwrap();
    let spec = ExperimentSpec::from_file(&spec_path).unwrap();
    let table = bench::run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 2);
}

#[test]
fn shared_input_noise_changes_draws_and_drops_realized_epsilon() {
    let per_row = bench::run_experiment(&small_spec(vec![MechanismKind::Input])).unwrap();
    let mut spec = small_spec(vec![MechanismKind::Input]);
    spec.shared_input_noise = true;
    let shared = bench::run_experiment(&spec).unwrap();
    assert_eq!(shared.rows.len(), per_row.rows.len());
    assert!(shared.rows[1..]
        .iter()
        .all(|r| r.realized_epsilon.is_none() && r.error.is_none()));
    assert!(shared.rows[1..]
        .iter()
        .zip(&per_row.rows[1..])
        .any(|(a, b)| a.opt_gap != b.opt_gap));

    let parsed = ExperimentSpec::from_toml_str(
        "dataset = \"iris\"\nmodel = \"lr_l2\"\nreg_lambda = 0.1\nmechanisms = [\"input\"]\nshared_input_noise = true\n",
    )
    .unwrap();
    assert!(parsed.shared_input_noise);
}
