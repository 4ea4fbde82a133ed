//! Instantiation and execution of demo argument trees.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::schema::Value;
use crate::state::{canonical_json, tree_state};
use crate::tree::{
    format_path, generate_config, to_dot, validate_tree, ArgumentTreeNode, PathStep, Violation,
};

pub type Metrics = BTreeMap<String, f64>;

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_FILE: &str = "log.txt";
const CHECKPOINT_SUFFIX: &str = ".state.json";
const LOSS_KEY: &str = "train/loss";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemoError {
    #[error("tree has {} violation(s), first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    InvalidTree(Vec<Violation>),
    #[error("cannot construct {module} at {path}: {detail}")]
    Construction {
        path: String,
        module: String,
        detail: String,
    },
    #[error("{module} at {path} failed: {cause}")]
    Runtime {
        path: String,
        module: String,
        cause: String,
    },
    #[error("i/o error on {path}: {cause}")]
    Io { path: String, cause: String },
}

fn io_error(path: &Path, e: std::io::Error) -> DemoError {
    DemoError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Best checkpoint kept by the first checkpoint callback.
    pub checkpoint_path: Option<String>,
    pub log_lines: Vec<String>,
    pub structure_overview: String,
}

#[derive(Debug, Clone)]
struct QuadraticObjective {
    target: f64,
    scale: f64,
}

impl QuadraticObjective {
    fn value(&self, x: f64) -> f64 {
        self.scale * (x - self.target).powi(2)
    }

    fn grad(&self, x: f64) -> f64 {
        2.0 * self.scale * (x - self.target)
    }
}

#[derive(Debug, Clone)]
enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: f64,
    },
    AdaBelief {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: f64,
        s: f64,
        t: i32,
    },
}

impl Optimizer {
    fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::AdaBelief { lr, .. } => *lr,
        }
    }

    fn step(&mut self, x: f64, grad: f64, lr_factor: f64) -> f64 {
        match self {
            Optimizer::Sgd {
                lr,
                momentum,
                velocity,
            } => {
                *velocity = *momentum * *velocity + grad;
                x - *lr * lr_factor * *velocity
            }
            Optimizer::AdaBelief {
                lr,
                beta1,
                beta2,
                eps,
                m,
                s,
                t,
            } => {
                *t += 1;
                *m = *beta1 * *m + (1.0 - *beta1) * grad;
                *s = *beta2 * *s + (1.0 - *beta2) * (grad - *m).powi(2) + *eps;
                let m_hat = *m / (1.0 - beta1.powi(*t));
                let s_hat = *s / (1.0 - beta2.powi(*t));
                x - *lr * lr_factor * m_hat / (s_hat.sqrt() + *eps)
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Scheduler {
    Cosine {
        warmup_epochs: usize,
        eta_min_factor: f64,
    },
    Step {
        step_size: usize,
        gamma: f64,
    },
}

impl Scheduler {
    /// Learning-rate multiplier for the 0-based `epoch` of `total`.
    fn factor(&self, epoch: usize, total: usize) -> f64 {
        match *self {
            Scheduler::Cosine {
                warmup_epochs,
                eta_min_factor,
            } => {
                if epoch < warmup_epochs {
                    return (epoch + 1) as f64 / warmup_epochs as f64;
                }
                let span = total.saturating_sub(warmup_epochs).max(1) as f64;
                let progress = (epoch - warmup_epochs) as f64 / span;
                eta_min_factor
                    + (1.0 - eta_min_factor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            Scheduler::Step { step_size, gamma } => gamma.powi((epoch / step_size) as i32),
        }
    }
}

#[derive(Debug, Clone)]
enum MethodKind {
    UniformRandom {
        steps: usize,
        low: f64,
        high: f64,
        rng: Box<ChaCha8Rng>,
        best: Option<(f64, f64)>,
    },
    GradientDescent {
        steps: usize,
        x: f64,
        optimizer: Optimizer,
        scheduler: Option<Scheduler>,
    },
    Evaluation {
        x: f64,
    },
}

#[derive(Debug, Clone)]
struct Method {
    name: String,
    path: String,
    data: QuadraticObjective,
    kind: MethodKind,
}

struct EpochOutcome {
    loss: f64,
    x: f64,
    lr: Option<f64>,
}

impl Method {
    fn seed(&mut self, seed: u64) {
        if let MethodKind::UniformRandom { rng, best, .. } = &mut self.kind {
            **rng = ChaCha8Rng::seed_from_u64(seed);
            *best = None;
        }
    }

    fn parameter(&self) -> f64 {
        match &self.kind {
            MethodKind::UniformRandom {
                best: Some((x, _)), ..
            } => *x,
            MethodKind::UniformRandom { low, high, .. } => (low + high) / 2.0,
            MethodKind::GradientDescent { x, .. } | MethodKind::Evaluation { x } => *x,
        }
    }

    fn loss(&self) -> f64 {
        self.data.value(self.parameter())
    }

    fn run_epoch(&mut self, epoch: usize, total: usize) -> Result<EpochOutcome, DemoError> {
        let data = &self.data;
        let lr = match &mut self.kind {
            MethodKind::UniformRandom {
                steps,
                low,
                high,
                rng,
                best,
            } => {
                for _ in 0..*steps {
                    let x = rng.random_range(*low..*high);
                    let loss = data.value(x);
                    if best.is_none_or(|(_, b)| loss < b) {
                        *best = Some((x, loss));
                    }
                }
                None
            }
            MethodKind::GradientDescent {
                steps,
                x,
                optimizer,
                scheduler,
            } => {
                let factor = scheduler.as_ref().map_or(1.0, |s| s.factor(epoch, total));
                for _ in 0..*steps {
                    *x = optimizer.step(*x, data.grad(*x), factor);
                }
                Some(optimizer.lr() * factor)
            }
            MethodKind::Evaluation { .. } => None,
        };
        let x = self.parameter();
        let loss = self.loss();
        if !loss.is_finite() || !x.is_finite() {
            return Err(DemoError::Runtime {
                path: self.path.clone(),
                module: self.name.clone(),
                cause: format!("diverged at epoch {}: x = {x}, loss = {loss}", epoch + 1),
            });
        }
        Ok(EpochOutcome { loss, x, lr })
    }
}

/// What a [`CheckpointCallback`] decided after observing one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointDecision {
    pub save: bool,
    /// Epochs whose checkpoints are no longer among the best.
    pub evicted: Vec<usize>,
}

/// Keeps the `top_n` best epochs ranked by one metric. Ties keep the
/// earlier epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointCallback {
    pub top_n: usize,
    pub key: String,
    pub minimize_key: bool,
    kept: Vec<(usize, f64)>,
}

impl CheckpointCallback {
    pub fn new(top_n: usize, key: impl Into<String>, minimize_key: bool) -> Self {
        CheckpointCallback {
            top_n,
            key: key.into(),
            minimize_key,
            kept: Vec::new(),
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.minimize_key {
            a < b
        } else {
            a > b
        }
    }

    pub fn observe(
        &mut self,
        epoch: usize,
        metrics: &Metrics,
    ) -> Result<CheckpointDecision, String> {
        let value = *metrics
            .get(&self.key)
            .ok_or_else(|| format!("metric '{}' is not reported", self.key))?;
        if self.top_n == 0 {
            return Ok(CheckpointDecision {
                save: false,
                evicted: Vec::new(),
            });
        }
        let pos = self
            .kept
            .iter()
            .position(|&(_, v)| self.better(value, v))
            .unwrap_or(self.kept.len());
        if pos >= self.top_n {
            return Ok(CheckpointDecision {
                save: false,
                evicted: Vec::new(),
            });
        }
        self.kept.insert(pos, (epoch, value));
        let evicted = self.kept.split_off(self.kept.len().min(self.top_n));
        Ok(CheckpointDecision {
            save: true,
            evicted: evicted.into_iter().map(|(e, _)| e).collect(),
        })
    }

    /// Retained epochs, best first.
    pub fn retained(&self) -> Vec<usize> {
        self.kept.iter().map(|&(e, _)| e).collect()
    }

    pub fn best(&self) -> Option<usize> {
        self.kept.first().map(|&(e, _)| e)
    }
}

#[derive(Debug, Clone)]
struct EarlyStopping {
    patience: usize,
    key: String,
    minimize_key: bool,
    min_delta: f64,
    best: Option<f64>,
    waited: usize,
}

impl EarlyStopping {
    fn should_stop(&mut self, metrics: &Metrics) -> Result<bool, String> {
        let value = *metrics
            .get(&self.key)
            .ok_or_else(|| format!("metric '{}' is not reported", self.key))?;
        let improved = match self.best {
            None => true,
            Some(b) if self.minimize_key => value < b - self.min_delta,
            Some(b) => value > b + self.min_delta,
        };
        if improved {
            self.best = Some(value);
            self.waited = 0;
        } else {
            self.waited += 1;
        }
        Ok(self.waited >= self.patience)
    }
}

#[derive(Debug, Clone)]
enum CallbackKind {
    Checkpoint(CheckpointCallback),
    EarlyStopping(EarlyStopping),
}

#[derive(Debug, Clone)]
struct Callback {
    name: String,
    path: String,
    kind: CallbackKind,
}

#[derive(Debug, Clone)]
enum LoggerKind {
    TensorBoard,
    File { file_name: String },
}

#[derive(Debug)]
struct Logger {
    name: String,
    path: String,
    log_graph: bool,
    kind: LoggerKind,
    sink: Option<(PathBuf, File)>,
}

impl Logger {
    fn failed(&self, err: DemoError) -> DemoError {
        DemoError::Runtime {
            path: self.path.clone(),
            module: self.name.clone(),
            cause: err.to_string(),
        }
    }

    fn open(&mut self, save_dir: &Path, tree: &ArgumentTreeNode) -> Result<(), DemoError> {
        let target = match &self.kind {
            LoggerKind::TensorBoard => save_dir.join("tensorboard").join("scalars.tsv"),
            LoggerKind::File { file_name } => save_dir.join(file_name),
        };
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        let mut file = File::create(&target).map_err(|e| io_error(&target, e))?;
        if let LoggerKind::TensorBoard = self.kind {
            writeln!(file, "epoch\ttag\tvalue").map_err(|e| io_error(&target, e))?;
        }
        if self.log_graph {
            let graph = save_dir.join("graph.dot");
            fs::write(&graph, to_dot(tree, false)).map_err(|e| io_error(&graph, e))?;
        }
        self.sink = Some((target, file));
        Ok(())
    }

    fn log(&mut self, epoch: usize, metrics: &Metrics) -> Result<(), DemoError> {
        let Some((target, file)) = &mut self.sink else {
            return Ok(());
        };
        let result = match self.kind {
            LoggerKind::TensorBoard => metrics
                .iter()
                .try_for_each(|(tag, value)| writeln!(file, "{epoch}\t{tag}\t{value}")),
            LoggerKind::File { .. } => {
                let row = serde_json::json!({ "epoch": epoch, "metrics": metrics });
                writeln!(file, "{row}")
            }
        };
        result.map_err(|e| io_error(target, e))
    }
}

#[derive(Debug, Clone)]
struct Device {
    name: String,
    num_devices: usize,
    simulated: bool,
}

#[derive(Debug)]
struct Trainer {
    max_epochs: usize,
    stop_epoch: i64,
    ema_decay: f64,
    ema_device: String,
    loggers: Vec<Logger>,
    callbacks: Vec<Callback>,
}

/// A constructed experiment, ready to run.
#[derive(Debug)]
pub struct Task {
    name: String,
    tree: ArgumentTreeNode,
    is_test_run: bool,
    seed: u64,
    save_dir: PathBuf,
    device: Device,
    trainer: Trainer,
    method: Option<Method>,
}

#[derive(Debug)]
enum Component {
    Task(Box<Task>),
    Device(Device),
    Trainer(Trainer),
    Method(Box<Method>),
    Callback(Callback),
    Logger(Logger),
    Optimizer(Optimizer),
    Scheduler(Scheduler),
    Data(QuadraticObjective),
}

struct Ctx<'a> {
    node: &'a ArgumentTreeNode,
    path: String,
    kids: BTreeMap<String, Vec<Component>>,
}

impl Ctx<'_> {
    fn fail(&self, detail: impl Into<String>) -> DemoError {
        DemoError::Construction {
            path: self.path.clone(),
            module: self.node.name().to_string(),
            detail: detail.into(),
        }
    }

    fn value(&self, arg: &str) -> Result<&Value, DemoError> {
        self.node
            .values
            .get(arg)
            .ok_or_else(|| self.fail(format!("argument '{arg}' has no value")))
    }

    fn int(&self, arg: &str) -> Result<i64, DemoError> {
        let v = self.value(arg)?;
        v.as_int()
            .ok_or_else(|| self.fail(format!("argument '{arg}' = {v} is not an integer")))
    }

    fn count(&self, arg: &str, min: i64) -> Result<usize, DemoError> {
        let v = self.int(arg)?;
        if v < min {
            return Err(self.fail(format!("{arg} must be at least {min}, got {v}")));
        }
        Ok(v as usize)
    }

    fn real(&self, arg: &str) -> Result<f64, DemoError> {
        let v = self.value(arg)?;
        v.as_real()
            .ok_or_else(|| self.fail(format!("argument '{arg}' = {v} is not a number")))
    }

    fn unit_interval(&self, arg: &str) -> Result<f64, DemoError> {
        let v = self.real(arg)?;
        if !(0.0..1.0).contains(&v) {
            return Err(self.fail(format!("{arg} must be in [0, 1), got {v}")));
        }
        Ok(v)
    }

    fn positive(&self, arg: &str) -> Result<f64, DemoError> {
        let v = self.real(arg)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.fail(format!("{arg} must be positive, got {v}")));
        }
        Ok(v)
    }

    fn boolean(&self, arg: &str) -> Result<bool, DemoError> {
        let v = self.value(arg)?;
        v.as_bool()
            .ok_or_else(|| self.fail(format!("argument '{arg}' = {v} is not a boolean")))
    }

    fn text(&self, arg: &str) -> Result<String, DemoError> {
        let v = self.value(arg)?;
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| self.fail(format!("argument '{arg}' = {v} is not a string")))
    }

    fn take_all(&mut self, key: &str) -> Vec<Component> {
        self.kids.remove(key).unwrap_or_default()
    }

    fn take_opt(&mut self, key: &str) -> Result<Option<Component>, DemoError> {
        let mut all = self.take_all(key);
        if all.len() > 1 {
            return Err(self.fail(format!(
                "{key} holds {} modules, expected at most one",
                all.len()
            )));
        }
        Ok(all.pop())
    }

    fn take_one(&mut self, key: &str) -> Result<Component, DemoError> {
        self.take_opt(key)?
            .ok_or_else(|| self.fail(format!("{key} is empty")))
    }

    fn wrong(&self, key: &str, expected: &str) -> DemoError {
        self.fail(format!("{key} must hold a {expected}"))
    }
}

fn construct(node: &ArgumentTreeNode, path: &mut Vec<PathStep>) -> Result<Component, DemoError> {
    let mut kids = BTreeMap::new();
    for (key, nodes) in &node.children {
        let mut built = Vec::with_capacity(nodes.len());
        for (i, kid) in nodes.iter().enumerate() {
            path.push((key.clone(), i));
            built.push(construct(kid, path)?);
            path.pop();
        }
        kids.insert(key.clone(), built);
    }
    let mut c = Ctx {
        node,
        path: format_path(path),
        kids,
    };

    let name = node.name().to_string();
    let component = match name.as_str() {
        "SingleSearchTask" | "SingleTask" => {
            let device = match c.take_one("cls_device")? {
                Component::Device(d) => d,
                _ => return Err(c.wrong("cls_device", "device")),
            };
            let trainer = match c.take_one("cls_trainer")? {
                Component::Trainer(t) => t,
                _ => return Err(c.wrong("cls_trainer", "trainer")),
            };
            let method = match c.take_opt("cls_method")? {
                None => None,
                Some(Component::Method(m)) => Some(*m),
                Some(_) => return Err(c.wrong("cls_method", "method")),
            };
            let save_dir = c.text("save_dir")?;
            if save_dir.trim().is_empty() {
                return Err(c.fail("save_dir is empty"));
            }
            Component::Task(Box::new(Task {
                name: name.clone(),
                tree: node.clone(),
                is_test_run: c.boolean("is_test_run")?,
                seed: c.int("seed")? as u64,
                save_dir: PathBuf::from(save_dir),
                device,
                trainer,
                method,
            }))
        }
        "CpuDevicesManager" | "CudaDevicesManager" => Component::Device(Device {
            num_devices: c.count("num_devices", 1)?,
            simulated: name == "CudaDevicesManager",
            name: name.clone(),
        }),
        "SimpleTrainer" => {
            let mut loggers = Vec::new();
            for k in c.take_all("cls_exp_loggers") {
                match k {
                    Component::Logger(l) => loggers.push(l),
                    _ => return Err(c.wrong("cls_exp_loggers", "logger")),
                }
            }
            let mut callbacks = Vec::new();
            for k in c.take_all("cls_callbacks") {
                match k {
                    Component::Callback(cb) => callbacks.push(cb),
                    _ => return Err(c.wrong("cls_callbacks", "callback")),
                }
            }
            Component::Trainer(Trainer {
                max_epochs: c.count("max_epochs", 0)?,
                stop_epoch: c.int("stop_epoch")?,
                ema_decay: c.unit_interval("ema_decay")?,
                ema_device: c.text("ema_device")?,
                loggers,
                callbacks,
            })
        }
        "UniformRandomMethod" | "GradientDescentMethod" | "EvaluationMethod" => {
            let data = match c.take_one("cls_data")? {
                Component::Data(d) => d,
                _ => return Err(c.wrong("cls_data", "data set")),
            };
            let kind = match name.as_str() {
                "UniformRandomMethod" => {
                    let (low, high) = (c.real("low")?, c.real("high")?);
                    if !low.is_finite() || !high.is_finite() || low >= high {
                        return Err(c.fail(format!("sampling bounds [{low}, {high}) are empty")));
                    }
                    MethodKind::UniformRandom {
                        steps: c.count("steps_per_epoch", 1)?,
                        low,
                        high,
                        rng: Box::new(ChaCha8Rng::seed_from_u64(0)),
                        best: None,
                    }
                }
                "GradientDescentMethod" => {
                    let optimizer = match c.take_one("cls_optimizers")? {
                        Component::Optimizer(o) => o,
                        _ => return Err(c.wrong("cls_optimizers", "optimizer")),
                    };
                    let scheduler = match c.take_opt("cls_schedulers")? {
                        None => None,
                        Some(Component::Scheduler(s)) => Some(s),
                        Some(_) => return Err(c.wrong("cls_schedulers", "scheduler")),
                    };
                    MethodKind::GradientDescent {
                        steps: c.count("steps_per_epoch", 0)?,
                        x: c.real("x_init")?,
                        optimizer,
                        scheduler,
                    }
                }
                _ => MethodKind::Evaluation { x: c.real("x")? },
            };
            Component::Method(Box::new(Method {
                name: name.clone(),
                path: c.path.clone(),
                data,
                kind,
            }))
        }
        "CheckpointCallback" => Component::Callback(Callback {
            name: name.clone(),
            path: c.path.clone(),
            kind: CallbackKind::Checkpoint(CheckpointCallback::new(
                c.count("top_n", 0)?,
                c.text("key")?,
                c.boolean("minimize_key")?,
            )),
        }),
        "EarlyStoppingCallback" => Component::Callback(Callback {
            name: name.clone(),
            path: c.path.clone(),
            kind: CallbackKind::EarlyStopping(EarlyStopping {
                patience: c.count("patience", 1)?,
                key: c.text("key")?,
                minimize_key: c.boolean("minimize_key")?,
                min_delta: c.real("min_delta")?,
                best: None,
                waited: 0,
            }),
        }),
        "TensorBoardExpLogger" | "FileExpLogger" => {
            let kind = if name == "FileExpLogger" {
                let file_name = c.text("file_name")?;
                if file_name.is_empty()
                    || file_name.contains(['/', '\\'])
                    || file_name.starts_with('.')
                {
                    return Err(
                        c.fail(format!("file_name '{file_name}' must be a plain file name"))
                    );
                }
                LoggerKind::File { file_name }
            } else {
                LoggerKind::TensorBoard
            };
            Component::Logger(Logger {
                name: name.clone(),
                path: c.path.clone(),
                log_graph: c.boolean("log_graph")?,
                kind,
                sink: None,
            })
        }
        "SGDOptimizer" => Component::Optimizer(Optimizer::Sgd {
            lr: c.positive("lr")?,
            momentum: c.unit_interval("momentum")?,
            velocity: 0.0,
        }),
        "AdaBeliefOptimizer" => Component::Optimizer(Optimizer::AdaBelief {
            lr: c.positive("lr")?,
            beta1: c.unit_interval("beta1")?,
            beta2: c.unit_interval("beta2")?,
            eps: c.positive("eps")?,
            m: 0.0,
            s: 0.0,
            t: 0,
        }),
        "CosineScheduler" => Component::Scheduler(Scheduler::Cosine {
            warmup_epochs: c.count("warmup_epochs", 0)?,
            eta_min_factor: c.real("eta_min_factor")?,
        }),
        "StepScheduler" => Component::Scheduler(Scheduler::Step {
            step_size: c.count("step_size", 1)?,
            gamma: c.positive("gamma")?,
        }),
        "QuadraticObjective" => Component::Data(QuadraticObjective {
            target: c.real("target")?,
            scale: c.positive("scale")?,
        }),
        _ => return Err(c.fail("module has no runtime implementation")),
    };
    if let Some(key) = c
        .kids
        .iter()
        .find(|(_, v)| !v.is_empty())
        .map(|(k, _)| k.clone())
    {
        return Err(c.fail(format!(
            "children under '{key}' are not used by this module"
        )));
    }
    Ok(component)
}

/// Builds the runnable task for a valid tree, children before parents.
pub fn instantiate(root: &ArgumentTreeNode) -> Result<Task, DemoError> {
    let violations = validate_tree(root);
    if !violations.is_empty() {
        return Err(DemoError::InvalidTree(violations));
    }
    match construct(root, &mut Vec::new())? {
        Component::Task(task) => Ok(*task),
        _ => Err(DemoError::Construction {
            path: format_path(&[]),
            module: root.name().to_string(),
            detail: format!(
                "a {} cannot be run, the root must be a task",
                root.descriptor.kind
            ),
        }),
    }
}

/// Writes the canonical config of `root` into its save dir, then
/// instantiates and runs it. `sink` receives every log line as it happens.
pub fn run_experiment(
    root: &ArgumentTreeNode,
    sink: &mut dyn FnMut(&str),
) -> Result<RunReport, DemoError> {
    let config = generate_config(root).map_err(|e| DemoError::InvalidTree(e.0))?;
    let mut task = instantiate(root)?;
    fs::create_dir_all(&task.save_dir).map_err(|e| io_error(&task.save_dir, e))?;
    let config_path = task.save_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_json_string()).map_err(|e| io_error(&config_path, e))?;
    task.run(sink)
}

/// A table of every module in the tree with its child counts.
pub fn structure_overview(root: &ArgumentTreeNode) -> String {
    let mut rows = Vec::new();
    root.walk(|path, node| {
        let mut full = format!("{}#{}", root.req_key, root.index);
        for (k, i) in path {
            let _ = write!(full, "/{k}#{i}");
        }
        let children = if node.children.is_empty() {
            "-".to_string()
        } else {
            node.children
                .iter()
                .map(|(k, v)| format!("{k}: {}", v.len()))
                .collect::<Vec<_>>()
                .join(", ")
        };
        rows.push((
            rows.len().to_string(),
            full,
            node.name().to_string(),
            children,
        ));
    });
    let w0 = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max("index".len());
    let w1 = rows
        .iter()
        .map(|r| r.1.len())
        .max()
        .unwrap_or(0)
        .max("path".len());
    let w2 = rows
        .iter()
        .map(|r| r.2.len())
        .max()
        .unwrap_or(0)
        .max("class".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<w0$}  {:<w1$}  {:<w2$}  children",
        "index", "path", "class"
    );
    for (i, p, c, k) in &rows {
        let _ = writeln!(out, "{i:<w0$}  {p:<w1$}  {c:<w2$}  {k}");
    }
    let _ = writeln!(
        out,
        "{:<w$}  {} modules",
        "complete tree",
        rows.len(),
        w = w0 + w1 + 2
    );
    out
}

impl Task {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn save_dir(&self) -> &Path {
        &self.save_dir
    }

    /// Epochs `run` will execute, before any early stop.
    pub fn planned_epochs(&self) -> usize {
        let mut n = self.trainer.max_epochs;
        if self.trainer.stop_epoch > 0 {
            n = n.min(self.trainer.stop_epoch as usize);
        }
        if self.is_test_run {
            n = n.min(1);
        }
        n
    }

    fn clear_checkpoints(dir: &Path) -> Result<(), DemoError> {
        for entry in fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
            let entry = entry.map_err(|e| io_error(dir, e))?;
            let path = entry.path();
            if path.is_file() && path.to_string_lossy().ends_with(CHECKPOINT_SUFFIX) {
                fs::remove_file(&path).map_err(|e| io_error(&path, e))?;
            }
        }
        Ok(())
    }

    fn checkpoint_file(&self, callback: usize, epoch: usize) -> PathBuf {
        self.save_dir
            .join(CHECKPOINT_DIR)
            .join(format!("c{callback}-epoch-{epoch:04}{CHECKPOINT_SUFFIX}"))
    }

    fn write_checkpoint(
        &self,
        file: &Path,
        epoch: usize,
        metrics: &Metrics,
    ) -> Result<(), DemoError> {
        let mut parameters = serde_json::Map::new();
        if let Some(m) = &self.method {
            parameters.insert("x".into(), m.parameter().into());
        }
        let state = serde_json::to_value(tree_state(&self.tree)).expect("states serialize");
        let doc = serde_json::json!({
            "epoch": epoch,
            "metrics": metrics,
            "parameters": parameters,
            "state": state,
        });
        fs::write(file, canonical_json(&doc)).map_err(|e| io_error(file, e))
    }

    /// Runs the epoch loop. Log lines go to `sink`, the report and
    /// `<save_dir>/log.txt`.
    pub fn run(&mut self, sink: &mut dyn FnMut(&str)) -> Result<RunReport, DemoError> {
        let started = Instant::now();
        let mut lines = Vec::new();
        let result = self.run_inner(&mut |msg: &str| {
            let line = format!("[{:>8.3}s] {msg}", started.elapsed().as_secs_f64());
            sink(&line);
            lines.push(line);
        });
        let log_path = self.save_dir.join(LOG_FILE);
        let mut text = lines.join("\n");
        text.push('\n');
        if let Err(e) = &result {
            let _ = writeln!(text, "error: {e}");
        }
        let written = fs::write(&log_path, text).map_err(|e| io_error(&log_path, e));
        let mut report = result?;
        written?;
        report.log_lines = lines;
        Ok(report)
    }

    fn run_inner(&mut self, log: &mut dyn FnMut(&str)) -> Result<RunReport, DemoError> {
        let checkpoint_dir = self.save_dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&checkpoint_dir).map_err(|e| io_error(&checkpoint_dir, e))?;
        Self::clear_checkpoints(&checkpoint_dir)?;

        let overview = structure_overview(&self.tree);
        let total = self.planned_epochs();
        log(&format!(
            "{} with seed {}, saving to {}",
            self.name,
            self.seed,
            self.save_dir.display()
        ));
        for line in overview.lines() {
            log(line);
        }
        let device = &self.device;
        let simulated = if device.simulated { ", simulated" } else { "" };
        log(&format!(
            "using device: {} x{}{simulated}",
            device.name, device.num_devices
        ));
        if self.trainer.ema_decay > 0.0 {
            log(&format!(
                "tracking a moving average of x with decay {} on {}",
                self.trainer.ema_decay, self.trainer.ema_device
            ));
        }
        let tree = self.tree.clone();
        for logger in &mut self.trainer.loggers {
            logger
                .open(&self.save_dir, &tree)
                .map_err(|e| logger.failed(e))?;
        }
        match &self.method {
            Some(m) => log(&format!(
                "method {} starts at x = {}",
                m.name,
                m.parameter()
            )),
            None => log("no method selected, epochs only report a zero loss"),
        }
        if let Some(m) = &mut self.method {
            m.seed(self.seed);
        }
        log(&format!("training for {total} epoch(s)"));

        let mut ema = self.method.as_ref().map(Method::parameter);
        let mut final_loss = self.method.as_ref().map_or(0.0, Method::loss);
        let mut epochs_run = 0;
        for epoch in 0..total {
            let mut metrics = Metrics::new();
            match &mut self.method {
                Some(m) => {
                    let out = m.run_epoch(epoch, total)?;
                    metrics.insert(LOSS_KEY.into(), out.loss);
                    metrics.insert("train/x".into(), out.x);
                    if let Some(lr) = out.lr {
                        metrics.insert("train/lr".into(), lr);
                    }
                    if self.trainer.ema_decay > 0.0 {
                        let d = self.trainer.ema_decay;
                        let next = ema.map_or(out.x, |e| d * e + (1.0 - d) * out.x);
                        ema = Some(next);
                        metrics.insert("train/ema_x".into(), next);
                    }
                    final_loss = out.loss;
                }
                None => {
                    metrics.insert(LOSS_KEY.into(), 0.0);
                    final_loss = 0.0;
                }
            }
            epochs_run = epoch + 1;
            let summary: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
            log(&format!(
                "epoch {epochs_run}/{total}: {}",
                summary.join(" ")
            ));

            for logger in &mut self.trainer.loggers {
                logger
                    .log(epochs_run, &metrics)
                    .map_err(|e| logger.failed(e))?;
            }

            let mut stop = false;
            for i in 0..self.trainer.callbacks.len() {
                let cb = &mut self.trainer.callbacks[i];
                let failure = |cause: String| DemoError::Runtime {
                    path: cb.path.clone(),
                    module: cb.name.clone(),
                    cause,
                };
                match &mut cb.kind {
                    CallbackKind::Checkpoint(ck) => {
                        let decision = ck.observe(epochs_run, &metrics).map_err(failure)?;
                        if decision.save {
                            let file = self.checkpoint_file(i, epochs_run);
                            self.write_checkpoint(&file, epochs_run, &metrics)?;
                            log(&format!("saved checkpoint {}", file.display()));
                        }
                        for old in decision.evicted {
                            let file = self.checkpoint_file(i, old);
                            fs::remove_file(&file).map_err(|e| io_error(&file, e))?;
                        }
                    }
                    CallbackKind::EarlyStopping(es) => {
                        if es.should_stop(&metrics).map_err(failure)? {
                            log(&format!(
                                "{} stops training after epoch {epochs_run}",
                                cb.name
                            ));
                            stop = true;
                        }
                    }
                }
            }
            if stop {
                break;
            }
        }

        let checkpoint_path =
            self.trainer
                .callbacks
                .iter()
                .enumerate()
                .find_map(|(i, cb)| match &cb.kind {
                    CallbackKind::Checkpoint(ck) => Some(
                        ck.best()
                            .map(|e| self.checkpoint_file(i, e).display().to_string()),
                    ),
                    CallbackKind::EarlyStopping(_) => None,
                });
        log(&format!(
            "finished {epochs_run} epoch(s), final {LOSS_KEY} = {final_loss:.6e}"
        ));
        Ok(RunReport {
            epochs_run,
            final_loss,
            checkpoint_path: checkpoint_path.flatten(),
            log_lines: Vec::new(),
            structure_overview: overview,
        })
    }
}
