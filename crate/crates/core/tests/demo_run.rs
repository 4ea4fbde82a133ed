mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use argtree_core::demo::{
    instantiate, run_experiment, DemoError, CHECKPOINT_DIR, CONFIG_FILE, LOG_FILE,
};
use argtree_core::schema::Value;
use argtree_core::state::Submodule;
use argtree_core::{ArgumentTreeNode, ConfigDocument, ModuleState};
use common::*;
use tempfile::TempDir;

fn tree(name: &str, dir: &Path, extra: &[(&str, Value)]) -> ArgumentTreeNode {
    let mut overrides = vec![save_dir_override(dir)];
    overrides.extend(extra.iter().cloned());
    build(&registry_with_extras(), &doc_with(name, &overrides)).unwrap()
}

fn quiet(_: &str) {}

fn checkpoints(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir.join(CHECKPOINT_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn losses(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["metrics"]["train/loss"]
                .as_f64()
                .unwrap()
        })
        .collect()
}

#[test]
fn gradient_descent_meets_the_closed_form_bound() {
    let dir = TempDir::new().unwrap();
    let started = Instant::now();
    let t = tree("gradient_descent.json", dir.path(), &[]);
    let mut streamed = Vec::new();
    let report = run_experiment(&t, &mut |line| streamed.push(line.to_string())).unwrap();
    assert!(started.elapsed().as_secs_f64() < 2.0);

    // x_n = 3 - 3 * 0.8^n, so f(x_100) = 9 * 0.64^100; 3 - x_n loses ~6 digits to cancellation
    let closed_form = 9.0 * 0.64f64.powi(100);
    assert_eq!(report.epochs_run, 100);
    assert!(report.final_loss < 1e-3);
    assert!(
        (report.final_loss - closed_form).abs() <= 1e-5 * closed_form,
        "{}",
        report.final_loss
    );
    assert_eq!(streamed, report.log_lines);

    let seq = losses(dir.path());
    assert_eq!(seq.len(), 100);
    assert!(seq.windows(2).all(|w| w[1] <= w[0]));

    let config = fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
    let rebuilt = build(&registry(), &ConfigDocument::parse(&config).unwrap()).unwrap();
    assert_eq!(rebuilt, t);
    assert_eq!(checkpoints(dir.path()), ["c0-epoch-0100.state.json"]);
    let path = report.checkpoint_path.unwrap();
    assert!(path.ends_with("c0-epoch-0100.state.json"));
    let checkpoint: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(checkpoint["epoch"], 100);
    let state = ModuleState::parse(&checkpoint["state"].to_string()).unwrap();
    assert_eq!(state.name, "SingleSearchTask");
    assert!((checkpoint["parameters"]["x"].as_f64().unwrap() - 3.0).abs() < 1e-9);

    let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), report.log_lines.len());
}

#[test]
fn single_search_runs_three_epochs_unless_it_is_a_test_run() {
    let dir = TempDir::new().unwrap();
    let full = tree(
        "single_search.json",
        dir.path(),
        &[("{cls_task}.is_test_run", Value::Bool(false))],
    );
    let report = run_experiment(&full, &mut quiet).unwrap();
    assert_eq!(report.epochs_run, 3);
    assert_eq!(report.final_loss, 0.0);
    assert!(report
        .log_lines
        .iter()
        .any(|l| l.contains("CudaDevicesManager x1, simulated")));
    assert!(report.structure_overview.contains("complete tree"));
    assert!(report.structure_overview.contains("5 modules"));
    let scalars = fs::read_to_string(dir.path().join("tensorboard").join("scalars.tsv")).unwrap();
    assert_eq!(scalars.lines().count(), 1 + 3);

    let test_run = tree("single_search.json", dir.path(), &[]);
    assert_eq!(run_experiment(&test_run, &mut quiet).unwrap().epochs_run, 1);
}

#[test]
fn zero_epochs_leave_no_checkpoint() {
    let dir = TempDir::new().unwrap();
    let t = tree(
        "gradient_descent.json",
        dir.path(),
        &[("{cls_trainer}.max_epochs", Value::Int(0))],
    );
    let report = run_experiment(&t, &mut quiet).unwrap();
    assert_eq!(report.epochs_run, 0);
    assert_eq!(report.checkpoint_path, None);
    assert_eq!(report.final_loss, 9.0);
    assert!(checkpoints(dir.path()).is_empty());
}

#[test]
fn reruns_replace_old_checkpoints() {
    let dir = TempDir::new().unwrap();
    let t = tree("scheduled.json", dir.path(), &[]);
    let first = run_experiment(&t, &mut quiet).unwrap();
    let second = run_experiment(&t, &mut quiet).unwrap();
    assert_eq!(first.epochs_run, 15);
    assert_eq!(first.final_loss, second.final_loss);
    assert_eq!(checkpoints(dir.path()).len(), 2);
}

#[test]
fn random_search_is_seeded_and_never_gets_worse() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ra = run_experiment(&tree("random_search.json", a.path(), &[]), &mut quiet).unwrap();
    let rb = run_experiment(&tree("random_search.json", b.path(), &[]), &mut quiet).unwrap();
    assert_eq!(ra.final_loss, rb.final_loss);
    let seq = losses(a.path());
    assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    assert!(ra.epochs_run <= 30);
    assert!(a.path().join("graph.dot").exists());
    let other = TempDir::new().unwrap();
    let rc = run_experiment(
        &tree(
            "random_search.json",
            other.path(),
            &[("{cls_task}.seed", Value::Int(8))],
        ),
        &mut quiet,
    )
    .unwrap();
    assert_ne!(ra.final_loss, rc.final_loss);
}

#[test]
fn early_stopping_ends_a_flat_run() {
    let dir = TempDir::new().unwrap();
    let t = tree(
        "evaluation.json",
        dir.path(),
        &[
            ("{cls_trainer}.max_epochs", Value::Int(50)),
            ("cls_callbacks", "EarlyStoppingCallback".into()),
            ("{cls_callbacks}.patience", Value::Int(4)),
        ],
    );
    let report = run_experiment(&t, &mut quiet).unwrap();
    assert_eq!(report.epochs_run, 5);
    assert_eq!(report.final_loss, 0.25);
}

#[test]
fn extras_optimizer_converges() {
    let dir = TempDir::new().unwrap();
    let report = run_experiment(&tree("extras.json", dir.path(), &[]), &mut quiet).unwrap();
    assert_eq!(report.epochs_run, 40);
    assert!(report.final_loss < 1e-3, "{}", report.final_loss);
}

#[test]
fn construction_failures_name_the_failing_node() {
    let dir = TempDir::new().unwrap();
    let t = tree(
        "gradient_descent.json",
        dir.path(),
        &[("{cls_optimizers}.lr", Value::Real(-1.0))],
    );
    match instantiate(&t) {
        Err(DemoError::Construction { path, module, .. }) => {
            assert_eq!(path, "cls_method#0/cls_optimizers#0");
            assert_eq!(module, "SGDOptimizer");
        }
        other => panic!("{other:?}"),
    }
    let t = tree(
        "single_search.json",
        dir.path(),
        &[("{cls_device}.num_devices", Value::Int(0))],
    );
    assert!(
        matches!(instantiate(&t), Err(DemoError::Construction { path, .. }) if path == "cls_device#0")
    );
}

#[test]
fn invalid_trees_are_not_constructed() {
    let dir = TempDir::new().unwrap();
    let save_dir = dir.path().join("never");
    let mut t = tree("single_search.json", &save_dir, &[]);
    t.children.get_mut("cls_device").unwrap().clear();
    assert!(matches!(instantiate(&t), Err(DemoError::InvalidTree(v)) if v.len() == 1));
    assert!(matches!(
        run_experiment(&t, &mut quiet),
        Err(DemoError::InvalidTree(_))
    ));
    assert!(!save_dir.exists());
}

#[test]
fn divergence_is_a_runtime_failure_of_the_method() {
    let dir = TempDir::new().unwrap();
    let t = tree(
        "gradient_descent.json",
        dir.path(),
        &[("{cls_optimizers}.lr", Value::Real(400.0))],
    );
    match run_experiment(&t, &mut quiet) {
        Err(DemoError::Runtime {
            path,
            module,
            cause,
        }) => {
            assert_eq!(path, "cls_method#0");
            assert_eq!(module, "GradientDescentMethod");
            assert!(cause.contains("diverged"));
        }
        other => panic!("{other:?}"),
    }
    assert!(fs::read_to_string(dir.path().join(LOG_FILE))
        .unwrap()
        .contains("error:"));
}

fn state_names(state: &ModuleState, out: &mut BTreeSet<String>) {
    out.insert(state.name.clone());
    for sub in state.submodules.values() {
        match sub {
            Submodule::One(s) => state_names(s, out),
            Submodule::Many(v) => v.iter().for_each(|s| state_names(s, out)),
        }
    }
}

#[test]
fn every_demo_module_appears_in_a_golden_file() {
    let registry = registry_with_extras();
    let mut covered = BTreeSet::new();
    for name in GOLDEN_CONFIGS {
        build(&registry, &doc(name)).unwrap().walk(|_, n| {
            covered.insert(n.name().to_string());
        });
    }
    for name in GOLDEN_STATES {
        state_names(&ModuleState::parse(&golden(name)).unwrap(), &mut covered);
    }
    let all: BTreeSet<String> = registry.iter().map(|d| d.name.clone()).collect();
    let uncovered: Vec<&String> = all.difference(&covered).collect();
    assert!(
        uncovered.is_empty(),
        "not in any golden file: {uncovered:?}"
    );
}

#[test]
fn every_golden_config_runs() {
    for name in GOLDEN_CONFIGS {
        let dir = TempDir::new().unwrap();
        let report = run_experiment(&tree(name, dir.path(), &[]), &mut quiet)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(report.final_loss.is_finite(), "{name}");
    }
}
