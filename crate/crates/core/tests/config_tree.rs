mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use argtree_core::config::default_placeholders;
use argtree_core::demo::EXTRAS_MISSING_REASON;
use argtree_core::schema::Value;
use argtree_core::tree::{build_tree_lenient, format_path};
use argtree_core::{
    docgen, generate_config, to_dot, validate_tree, ConfigDocument, EntryPoint, ViolationCode,
};
use common::*;

fn codes(doc: &ConfigDocument) -> Vec<ViolationCode> {
    match build(&registry(), doc) {
        Ok(_) => Vec::new(),
        Err(e) => e.codes(),
    }
}

#[test]
fn fig4_builds_five_classes_with_exact_values() {
    let started = Instant::now();
    let registry = registry();
    let tree = build(&registry, &doc("single_search.json")).unwrap();
    assert!(started.elapsed().as_secs_f64() < 1.0);

    let mut classes = Vec::new();
    tree.walk(|path, node| classes.push((format_path(path), node.name().to_string())));
    assert_eq!(
        classes,
        [
            ("<root>", "SingleSearchTask"),
            ("cls_device#0", "CudaDevicesManager"),
            ("cls_trainer#0", "SimpleTrainer"),
            ("cls_trainer#0/cls_exp_loggers#0", "TensorBoardExpLogger"),
            ("cls_trainer#0/cls_callbacks#0", "CheckpointCallback"),
        ]
        .map(|(p, c)| (p.to_string(), c.to_string()))
    );

    let value = |path: &[(&str, usize)], arg: &str| {
        let path: Vec<(String, usize)> = path.iter().map(|(k, i)| (k.to_string(), *i)).collect();
        tree.node_at(&path).unwrap().values[arg].clone()
    };
    let trainer = [("cls_trainer", 0)];
    let callback = [("cls_trainer", 0), ("cls_callbacks", 0)];
    assert_eq!(value(&trainer, "max_epochs"), Value::Int(3));
    assert_eq!(value(&trainer, "ema_decay"), Value::Real(0.5));
    assert_eq!(value(&trainer, "ema_device"), Value::Str("cpu".into()));
    assert_eq!(value(&callback, "top_n"), Value::Int(1));
    assert_eq!(value(&callback, "key"), Value::Str("train/loss".into()));
    assert_eq!(value(&callback, "minimize_key"), Value::Bool(true));
    assert_eq!(value(&[("cls_device", 0)], "num_devices"), Value::Int(1));
    assert_eq!(value(&[], "seed"), Value::Int(0));
    assert_eq!(value(&[], "is_test_run"), Value::Bool(true));
    let tmp = &default_placeholders()["path_tmp"];
    assert_eq!(value(&[], "save_dir"), Value::Str(format!("{tmp}/")));
    // unset arguments take their defaults
    assert_eq!(value(&trainer, "stop_epoch"), Value::Int(-1));
    assert_eq!(value(&[("cls_device", 0)], "use_cudnn"), Value::Bool(true));
}

#[test]
fn duplicate_device_is_only_a_count_violation() {
    let d = doc_with(
        "single_search.json",
        &[(
            "cls_device",
            "CudaDevicesManager, CudaDevicesManager".into(),
        )],
    );
    let err = build(&registry(), &d).unwrap_err();
    assert_eq!(err.codes(), [ViolationCode::CountViolation]);
    assert!(err.violations[0].path.is_empty());
    assert!(err.violations[0].detail.contains("cls_device"));
}

#[test]
fn extra_key_is_reported_by_name() {
    let key = "{cls_trainer}.not_an_argument";
    let d = doc_with("single_search.json", &[(key, Value::Int(1))]);
    let err = build(&registry(), &d).unwrap_err();
    assert_eq!(err.codes(), [ViolationCode::UnparsedKey]);
    assert_eq!(err.violations[0].detail, key);
}

#[test]
fn unregistered_class_is_unknown() {
    let d = doc_with(
        "single_search.json",
        &[("cls_device", "QuantumDevicesManager".into())],
    );
    let err = build(&registry(), &d).unwrap_err();
    assert_eq!(err.codes(), [ViolationCode::UnknownModule]);
    assert!(err.violations[0].detail.contains("QuantumDevicesManager"));
}

#[test]
fn missing_plugin_class_carries_the_install_hint() {
    let d = doc_with(
        "gradient_descent.json",
        &[("cls_optimizers", "AdaBeliefOptimizer".into())],
    );
    let err = build(&registry(), &d).unwrap_err();
    assert_eq!(err.codes(), [ViolationCode::MissingModule]);
    assert!(err.violations[0].detail.contains(EXTRAS_MISSING_REASON));
    // with the plugin the tree builds, but SGD's momentum has no taker
    let err = build(&registry_with_extras(), &d).unwrap_err();
    assert_eq!(err.codes(), [ViolationCode::UnparsedKey]);
    assert_eq!(err.violations[0].detail, "{cls_optimizers}.momentum");
}

#[test]
fn several_violations_are_gathered_in_one_pass() {
    let d = doc_with(
        "single_search.json",
        &[
            ("cls_device", "".into()),
            ("{cls_trainer}.max_epochs", "many".into()),
            ("cls_callbacks", "TensorBoardExpLogger".into()),
        ],
    );
    let found = codes(&d);
    for code in [
        ViolationCode::CountViolation,
        ViolationCode::CoercionError,
        ViolationCode::KindMismatch,
    ] {
        assert!(found.contains(&code), "{code} missing from {found:?}");
    }
}

#[test]
fn search_task_rejects_untagged_methods() {
    let d = doc_with(
        "evaluation.json",
        &[("cls_task", "SingleSearchTask".into())],
    );
    assert_eq!(codes(&d), [ViolationCode::TagMismatch]);
    assert_eq!(codes(&doc("evaluation.json")), []);
}

#[test]
fn wildcard_forms_resolve_and_conflicts_are_ambiguous() {
    let registry = registry();
    let trainer_epochs = |d: &ConfigDocument| {
        let tree = build(&registry, d).unwrap();
        tree.node_at(&[("cls_trainer".into(), 0)]).unwrap().values["max_epochs"].clone()
    };
    let base = doc("single_search.json");
    for key in [
        "{cls_trainer#0}.max_epochs",
        "{cls_trainer}.max_epochs",
        "SimpleTrainer.max_epochs",
    ] {
        let mut d = base.clone();
        d.remove("{cls_trainer}.max_epochs");
        d.insert(key, Value::Int(7)).unwrap();
        assert_eq!(trainer_epochs(&d), Value::Int(7), "{key}");
    }
    let agreeing = doc_with(
        "single_search.json",
        &[("SimpleTrainer.max_epochs", Value::Int(3))],
    );
    assert_eq!(trainer_epochs(&agreeing), Value::Int(3));

    let conflicting = doc_with(
        "single_search.json",
        &[("SimpleTrainer.max_epochs", Value::Int(4))],
    );
    assert_eq!(codes(&conflicting), [ViolationCode::AmbiguousValue]);
}

#[test]
fn plain_wildcard_binds_only_the_first_instance() {
    let d = doc_with(
        "single_search.json",
        &[
            (
                "cls_callbacks",
                "CheckpointCallback, CheckpointCallback".into(),
            ),
            ("{cls_callbacks}.top_n", Value::Int(1)),
            ("{cls_callbacks#1}.top_n", Value::Int(4)),
        ],
    );
    let tree = build(&registry(), &d).unwrap();
    let top_n = |i| {
        tree.node_at(&[("cls_trainer".into(), 0), ("cls_callbacks".into(), i)])
            .unwrap()
            .values["top_n"]
            .clone()
    };
    assert_eq!((top_n(0), top_n(1)), (Value::Int(1), Value::Int(4)));
}

#[test]
fn overrides_replace_selections_and_values() {
    let d = doc("single_search.json");
    let (k, v) = argtree_core::config::parse_override("cls_device=CpuDevicesManager").unwrap();
    let (k2, v2) = argtree_core::config::parse_override("{cls_trainer}.max_epochs=12").unwrap();
    let merged = d.merge_overrides(&[(k, v), (k2, v2)]).unwrap();
    let tree = build(&registry(), &merged).unwrap();
    assert_eq!(
        tree.children_of("cls_device")[0].name(),
        "CpuDevicesManager"
    );
    assert_eq!(
        tree.children_of("cls_trainer")[0].values["max_epochs"],
        Value::Int(12)
    );
    // the CUDA-only key is left over once the device changes
    let with_cudnn = merged
        .merge_overrides(&[("{cls_device}.use_cudnn".into(), Value::Bool(true))])
        .unwrap();
    assert_eq!(codes(&with_cudnn), [ViolationCode::UnparsedKey]);
}

#[test]
fn unknown_placeholder_is_a_coercion_problem_for_that_argument() {
    let d = doc_with(
        "single_search.json",
        &[("{cls_task}.save_dir", "{nowhere}/x".into())],
    );
    let err = build(&registry(), &d).unwrap_err();
    assert_eq!(err.violations.len(), 1);
    assert!(err.violations[0].detail.contains("nowhere"));
}

#[test]
fn golden_configs_regenerate_to_the_same_tree() {
    for name in GOLDEN_CONFIGS {
        let registry = registry_with_extras();
        let tree = build(&registry, &doc(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(validate_tree(&tree), [], "{name}");
        let generated = generate_config(&tree).unwrap();
        let reparsed = ConfigDocument::parse(&generated.to_json_string()).unwrap();
        assert_eq!(build(&registry, &reparsed).unwrap(), tree, "{name}");
        // generating again is a fixed point, key order included
        let again = generate_config(&build(&registry, &reparsed).unwrap()).unwrap();
        assert_eq!(again.to_json_string(), generated.to_json_string(), "{name}");
    }
}

#[test]
fn generated_config_uses_indexed_keys_only() {
    let tree = build(&registry(), &doc("single_search.json")).unwrap();
    let generated = generate_config(&tree).unwrap();
    let keys: Vec<&str> = generated.keys().collect();
    assert_eq!(keys[0], "cls_task");
    for key in &keys {
        assert!(
            key.starts_with("cls_") || key.starts_with('{') && key.contains('#'),
            "{key}"
        );
    }
    assert!(keys.contains(&"{cls_trainer#0}.max_epochs"));
    assert_eq!(
        generated.get("cls_method"),
        Some(&Value::Str(String::new()))
    );
}

#[test]
fn partial_tree_is_kept_next_to_its_violations() {
    let d = doc_with("single_search.json", &[("cls_device", "".into())]);
    let (tree, violations) = build_tree_lenient(
        &registry(),
        &d,
        &default_placeholders(),
        &EntryPoint::default(),
    );
    let tree = tree.unwrap();
    assert_eq!(
        violations.iter().map(|v| v.code).collect::<Vec<_>>(),
        [ViolationCode::CountViolation, ViolationCode::UnparsedKey]
    );
    assert_eq!(violations[1].detail, "{cls_device}.num_devices");
    // the tree alone cannot know about unread keys
    assert_eq!(validate_tree(&tree), violations[..1]);
    assert!(generate_config(&tree).is_err());
}

#[test]
fn dot_draws_every_class_and_requirement() {
    let tree = build(&registry(), &doc("single_search.json")).unwrap();
    let dot = to_dot(&tree, true);
    assert!(dot.starts_with("digraph argtree {"));
    assert_eq!(dot.matches("fillcolor=turquoise").count(), 5);
    let requirements: usize = {
        let mut n = 0;
        tree.walk(|_, node| n += node.descriptor.child_requirements.len());
        n
    };
    assert_eq!(dot.matches("style=rounded").count(), requirements);
    assert!(dot.contains("label=\"cls_callbacks (0..*)\""));
    assert!(!dot.contains("fontcolor=red"));

    let d = doc_with("single_search.json", &[("cls_device", "".into())]);
    let (partial, _) = build_tree_lenient(
        &registry(),
        &d,
        &default_placeholders(),
        &EntryPoint::default(),
    );
    let dot = to_dot(&partial.unwrap(), true);
    assert_eq!(dot.matches("fontcolor=red").count(), 1);
    assert!(dot.contains("cls_device (1..1)\", color=red"));
}

#[test]
fn docgen_lists_every_argument_exactly_once() {
    let registry = registry();
    let text = docgen(&registry);
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut module = String::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("Module: ") {
            module = name.to_string();
        } else if let Some(rest) = line.strip_prefix("  Argument: ") {
            let arg = rest.split(' ').next().unwrap().to_string();
            *seen.entry((module.clone(), arg)).or_default() += 1;
        }
    }
    let mut expected = BTreeMap::new();
    for d in registry.iter() {
        for a in &d.arguments {
            expected.insert((d.name.clone(), a.name.clone()), 1);
        }
    }
    assert_eq!(seen, expected);
    assert!(text.contains(
        "== MISSING ==\nMissing: AdaBeliefOptimizer: optional plugin 'extras' not installed"
    ));
}

#[test]
fn docgen_matches_the_snapshot() {
    let text = docgen(&registry());
    assert_eq!(text, docgen(&registry()));
    assert_eq!(text, golden("docgen.txt"));
}
