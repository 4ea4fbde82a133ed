//! A small, runnable module set shaped like a real experiment:
//! task -> device / trainer / method, trainer -> loggers / callbacks,
//! method -> data / optimizer / scheduler.
//!
//! The "training" minimizes a one-dimensional analytic objective so that
//! instantiation, callbacks, logging and checkpointing can be exercised end
//! to end without any numerical machinery. A second group of modules
//! (layers, cells, mixed operations) exists only to be saved, rebuilt and
//! finalized through module states.

mod network;
mod runtime;

use crate::registry::Registry;
use crate::schema::{ArgumentSpec, ChildRequirementSpec, ModuleDescriptor, ValueKind};

pub use network::{
    LinearTransformerLayer, MixedOp, MobileInvConvLayer, PoolingLayer, SequentialModules,
    SingleLayerCell, SkipLayer, SumParallelModules, ZeroLayer,
};
pub use runtime::{
    instantiate, run_experiment, structure_overview, CheckpointCallback, CheckpointDecision,
    DemoError, Metrics, RunReport, Task, CHECKPOINT_DIR, CONFIG_FILE, LOG_FILE,
};

/// Setting this variable to `1` makes the optional `extras` plugin available.
pub const EXTRAS_ENV: &str = "ARGTREE_ENABLE_EXTRAS";

/// Why extras modules are unavailable when the plugin is not enabled.
pub const EXTRAS_MISSING_REASON: &str = "optional plugin 'extras' not installed";

const SOURCE: &str = file!();
const EXTRAS_SOURCE: &str = "plugin 'extras'";

fn arg(
    name: &str,
    kind: ValueKind,
    default: impl Into<crate::schema::Value>,
    help: &str,
) -> ArgumentSpec {
    ArgumentSpec::new(name, kind, default, help)
}

use ValueKind::{Boolean, Integer, Real, String as Text};

fn task(name: &str, search_only: bool, help: &str) -> ModuleDescriptor {
    let method = ChildRequirementSpec::optional("cls_method", "method");
    let method = if search_only {
        method.with_tag("search", true)
    } else {
        method
    };
    let d = ModuleDescriptor::new(name, "task")
        .help(help)
        .source(SOURCE)
        .arg(arg(
            "is_test_run",
            Boolean,
            "False",
            "test runs stop epochs early",
        ))
        .arg(arg("seed", Integer, 0, "random seed for the experiment"))
        .arg(arg(
            "is_deterministic",
            Boolean,
            false,
            "use deterministic operations",
        ))
        .arg(arg("note", Text, "", "just to take notes"))
        .arg(arg("save_dir", Text, "{path_tmp}", "where to save"))
        .requires(ChildRequirementSpec::exactly_one("cls_device", "device"))
        .requires(ChildRequirementSpec::exactly_one("cls_trainer", "trainer"))
        .requires(method);
    if search_only {
        d.tag("search", true)
    } else {
        d
    }
}

/// Descriptors of the runnable experiment modules, without the extras plugin.
pub fn experiment_descriptors() -> Vec<ModuleDescriptor> {
    vec![
        task(
            "SingleSearchTask",
            true,
            "run one search method on one device",
        ),
        task("SingleTask", false, "run one method on one device"),
        ModuleDescriptor::new("CpuDevicesManager", "device")
            .help("run on the host CPU")
            .source(SOURCE)
            .arg(arg(
                "num_devices",
                Integer,
                1,
                "number of available devices",
            )),
        ModuleDescriptor::new("CudaDevicesManager", "device")
            .help("simulated CUDA device manager, no GPU is touched")
            .source(SOURCE)
            .arg(arg(
                "num_devices",
                Integer,
                1,
                "number of available devices",
            ))
            .arg(arg("use_cudnn", Boolean, true, "try using cudnn"))
            .arg(arg(
                "use_cudnn_benchmark",
                Boolean,
                true,
                "use cudnn benchmark",
            )),
        ModuleDescriptor::new("SimpleTrainer", "trainer")
            .help("epoch loop driving the method, loggers and callbacks")
            .source(SOURCE)
            .arg(arg(
                "max_epochs",
                Integer,
                10,
                "max training epochs, affects schedulers + regularizers",
            ))
            .arg(arg(
                "stop_epoch",
                Integer,
                -1,
                "stop after training n epochs anyway, if > 0",
            ))
            .arg(arg(
                "ema_decay",
                Real,
                0.0,
                "track an exponential moving average of the parameters, disabled if 0",
            ))
            .arg(
                arg(
                    "ema_device",
                    Text,
                    "cpu",
                    "where the moving average is kept",
                )
                .with_choices(["cpu", "same"]),
            )
            .requires(ChildRequirementSpec::any_number(
                "cls_exp_loggers",
                "logger",
            ))
            .requires(ChildRequirementSpec::any_number(
                "cls_callbacks",
                "callback",
            )),
        ModuleDescriptor::new("UniformRandomMethod", "method")
            .help("sample parameters uniformly and keep the best")
            .source(SOURCE)
            .tag("search", true)
            .arg(arg(
                "steps_per_epoch",
                Integer,
                1,
                "samples drawn per epoch",
            ))
            .arg(arg("low", Real, -10.0, "lower sampling bound"))
            .arg(arg("high", Real, 10.0, "upper sampling bound"))
            .requires(ChildRequirementSpec::exactly_one("cls_data", "data")),
        ModuleDescriptor::new("GradientDescentMethod", "method")
            .help("follow the objective's gradient with an optimizer")
            .source(SOURCE)
            .tag("search", true)
            .arg(arg(
                "steps_per_epoch",
                Integer,
                1,
                "optimizer steps per epoch",
            ))
            .arg(arg("x_init", Real, 0.0, "initial parameter value"))
            .requires(ChildRequirementSpec::exactly_one("cls_data", "data"))
            .requires(ChildRequirementSpec::exactly_one(
                "cls_optimizers",
                "optimizer",
            ))
            .requires(ChildRequirementSpec::optional(
                "cls_schedulers",
                "scheduler",
            )),
        ModuleDescriptor::new("EvaluationMethod", "method")
            .help("evaluate the objective at a fixed parameter value")
            .source(SOURCE)
            .arg(arg("x", Real, 0.0, "parameter value to evaluate"))
            .requires(ChildRequirementSpec::exactly_one("cls_data", "data")),
        ModuleDescriptor::new("CheckpointCallback", "callback")
            .help("keep the best checkpoints by a tracked metric")
            .source(SOURCE)
            .arg(arg("top_n", Integer, 1, "number of checkpoints to keep"))
            .arg(arg(
                "key",
                Text,
                "train/loss",
                "metric that ranks checkpoints",
            ))
            .arg(arg(
                "minimize_key",
                Boolean,
                true,
                "lower values of the metric are better",
            )),
        ModuleDescriptor::new("EarlyStoppingCallback", "callback")
            .help("stop when a metric has not improved for a while")
            .source(SOURCE)
            .arg(arg(
                "patience",
                Integer,
                3,
                "epochs without improvement before stopping",
            ))
            .arg(arg("key", Text, "train/loss", "metric to watch"))
            .arg(arg(
                "minimize_key",
                Boolean,
                true,
                "lower values of the metric are better",
            ))
            .arg(arg(
                "min_delta",
                Real,
                0.0,
                "smallest change that counts as improvement",
            )),
        ModuleDescriptor::new("TensorBoardExpLogger", "logger")
            .help("write scalar metrics as tab-separated event rows")
            .source(SOURCE)
            .arg(arg(
                "log_graph",
                Boolean,
                false,
                "also write the module graph",
            )),
        ModuleDescriptor::new("FileExpLogger", "logger")
            .help("write metrics as JSON lines")
            .source(SOURCE)
            .arg(arg(
                "log_graph",
                Boolean,
                false,
                "also write the module graph",
            ))
            .arg(arg(
                "file_name",
                Text,
                "metrics.jsonl",
                "file inside the save dir",
            )),
        ModuleDescriptor::new("SGDOptimizer", "optimizer")
            .help("stochastic gradient descent with optional momentum")
            .source(SOURCE)
            .arg(arg("lr", Real, 0.01, "learning rate"))
            .arg(arg("momentum", Real, 0.0, "momentum factor")),
        ModuleDescriptor::new("CosineScheduler", "scheduler")
            .help("cosine learning-rate annealing over all epochs")
            .source(SOURCE)
            .arg(arg("warmup_epochs", Integer, 0, "linear warmup epochs"))
            .arg(arg(
                "eta_min_factor",
                Real,
                0.0,
                "final learning rate as a fraction of the initial one",
            )),
        ModuleDescriptor::new("StepScheduler", "scheduler")
            .help("multiply the learning rate by gamma every step_size epochs")
            .source(SOURCE)
            .arg(arg("step_size", Integer, 10, "epochs between decays"))
            .arg(arg("gamma", Real, 0.1, "decay factor")),
        ModuleDescriptor::new("QuadraticObjective", "data")
            .help("f(x) = scale * (x - target)^2, standing in for a data set")
            .source(SOURCE)
            .arg(arg("target", Real, 3.0, "location of the minimum"))
            .arg(arg("scale", Real, 1.0, "curvature")),
    ]
}

/// Descriptors provided by the optional `extras` plugin.
pub fn extras_descriptors() -> Vec<ModuleDescriptor> {
    vec![ModuleDescriptor::new("AdaBeliefOptimizer", "optimizer")
        .help("AdaBelief, adapting step sizes by the belief in the gradient")
        .source(EXTRAS_SOURCE)
        .arg(arg("lr", Real, 0.001, "learning rate"))
        .arg(arg("beta1", Real, 0.9, "first moment decay"))
        .arg(arg("beta2", Real, 0.999, "second moment decay"))
        .arg(arg("eps", Real, 1e-16, "numerical stability term"))]
}

/// True when the environment enables the extras plugin.
pub fn extras_enabled() -> bool {
    std::env::var(EXTRAS_ENV).is_ok_and(|v| v.trim() == "1")
}

/// The demo registry, probing the environment for the extras plugin.
pub fn build_demo_registry() -> Registry {
    build_demo_registry_with(extras_enabled())
}

pub fn build_demo_registry_with(extras: bool) -> Registry {
    let mut registry = Registry::new();
    for d in experiment_descriptors() {
        registry.register(d).expect("demo descriptors are valid");
    }
    for (d, builder) in network::buildable_modules() {
        registry
            .register_buildable(d, builder)
            .expect("demo descriptors are valid");
    }
    for d in extras_descriptors() {
        if extras {
            registry.register(d).expect("demo descriptors are valid");
        } else {
            registry
                .register_missing(d.name, EXTRAS_MISSING_REASON)
                .expect("extras names are unique");
        }
    }
    registry
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::LookupError;
    use crate::schema::{coerce_value, validate_descriptor, TagValue, Tags};

    #[test]
    fn default_registry_has_missing_extras() {
        let r = build_demo_registry_with(false);
        assert!(r.lookup("SimpleTrainer").is_ok());
        assert_eq!(
            r.lookup("AdaBeliefOptimizer"),
            Err(LookupError::MissingModule {
                name: "AdaBeliefOptimizer".into(),
                reason: EXTRAS_MISSING_REASON.into()
            })
        );
        assert!(r.lookup("CudaDevicesManager").is_ok());
    }

    #[test]
    fn extras_register_as_optimizer() {
        let r = build_demo_registry_with(true);
        assert_eq!(r.lookup("AdaBeliefOptimizer").unwrap().kind, "optimizer");
        assert_eq!(r.missing().count(), 0);
    }

    #[test]
    fn every_descriptor_is_valid_and_defaults_coerce() {
        let r = build_demo_registry_with(true);
        for d in r.iter() {
            assert_eq!(validate_descriptor(d), vec![], "{}", d.name);
            for a in &d.arguments {
                assert!(coerce_value(a, &a.default).is_ok(), "{}.{}", d.name, a.name);
            }
        }
    }

    #[test]
    fn search_filter_matches_linear_scan() {
        let r = build_demo_registry_with(false);
        let filter = Tags::from([("search".to_string(), TagValue::Bool(true))]);
        let mut expected: Vec<String> = r
            .iter()
            .filter(|d| d.kind == "method" && d.tags.get("search") == Some(&TagValue::Bool(true)))
            .map(|d| d.name.clone())
            .collect();
        expected.sort();
        let got: Vec<String> = r
            .filter("method", &filter)
            .iter()
            .map(|d| d.name.clone())
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got, ["GradientDescentMethod", "UniformRandomMethod"]);
    }
}
