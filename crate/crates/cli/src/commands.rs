use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use argtree_core::config::{default_placeholders, parse_override};
use argtree_core::demo::{build_demo_registry, run_experiment, structure_overview, DemoError};
use argtree_core::schema::TagValue;
use argtree_core::{
    build_tree, build_tree_lenient, canonical_serialize, docgen as render_docgen, export_state,
    generate_config, import_state, to_dot, ArgumentTreeNode, ConfigDocument, EntryPoint,
    ModuleState, Placeholders, Registry, SelectionProvider, Tags, Violation,
};
use argtree_server::{AppState, EditorSession};

pub struct ConfigInput {
    pub path: PathBuf,
    pub overrides: Vec<String>,
    pub env: Vec<String>,
    pub entry: String,
    pub entry_kind: String,
}

pub enum Failure {
    /// I/O, syntax or usage problem.
    Environment(String),
    /// The input was read but is not valid.
    Invalid(Vec<String>),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Environment(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    pub fn report(&self) {
        match self {
            Failure::Environment(msg) => eprintln!("error: {msg}"),
            Failure::Invalid(lines) => {
                for line in lines {
                    eprintln!("{line}");
                }
            }
        }
    }
}

fn env_err(e: impl Display) -> Failure {
    Failure::Environment(e.to_string())
}

fn invalid(e: impl Display) -> Failure {
    Failure::Invalid(vec![format!("error: {e}")])
}

fn violation_lines(violations: &[Violation]) -> Failure {
    Failure::Invalid(violations.iter().map(ToString::to_string).collect())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| env_err(format!("cannot read {}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| env_err(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(env_err),
    }
}

fn placeholders(defs: &[String]) -> Result<Placeholders, Failure> {
    let mut env = default_placeholders();
    for def in defs {
        let (name, value) = def
            .split_once('=')
            .ok_or_else(|| env_err(format!("malformed --env '{def}', expected name=value")))?;
        env.insert(name.trim().to_string(), value.to_string());
    }
    Ok(env)
}

struct Loaded {
    registry: Registry,
    doc: ConfigDocument,
    env: Placeholders,
    entry: EntryPoint,
}

fn load(input: &ConfigInput) -> Result<Loaded, Failure> {
    let overrides = input
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()
        .map_err(env_err)?;
    let text = read(&input.path)?;
    let doc = ConfigDocument::parse(&text)
        .map_err(|e| env_err(format!("{}: {e}", input.path.display())))?
        .merge_overrides(&overrides)
        .map_err(env_err)?;
    Ok(Loaded {
        registry: build_demo_registry(),
        doc,
        env: placeholders(&input.env)?,
        entry: EntryPoint::new(input.entry.clone(), input.entry_kind.clone()),
    })
}

fn build(input: &ConfigInput) -> Result<ArgumentTreeNode, Failure> {
    let l = load(input)?;
    build_tree(&l.registry, &l.doc, &l.env, &l.entry).map_err(|e| violation_lines(&e.violations))
}

pub fn validate(input: &ConfigInput) -> Result<(), Failure> {
    let tree = build(input)?;
    eprintln!("OK: {} nodes", tree.node_count());
    Ok(())
}

pub fn run(input: &ConfigInput) -> Result<(), Failure> {
    let tree = build(input)?;
    let report = run_experiment(&tree, &mut |line| eprintln!("{line}")).map_err(|e| match e {
        DemoError::InvalidTree(v) => violation_lines(&v),
        DemoError::Construction { .. } => invalid(e),
        DemoError::Runtime { .. } | DemoError::Io { .. } => env_err(e),
    })?;
    let mut summary = serde_json::json!({
        "epochs_run": report.epochs_run,
        "final_loss": report.final_loss,
        "checkpoint_path": report.checkpoint_path,
    });
    if let Some(dir) = tree.values.get("save_dir") {
        summary["save_dir"] = serde_json::json!(dir.to_string());
    }
    emit(&format!("{summary}\n"), None)
}

fn parse_tag(text: &str) -> Result<(String, TagValue), Failure> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| env_err(format!("malformed --tag '{text}', expected name=value")))?;
    let value = match value {
        "true" => TagValue::Bool(true),
        "false" => TagValue::Bool(false),
        other => TagValue::from(other),
    };
    Ok((name.to_string(), value))
}

pub fn list(kind: Option<&str>, tags: &[String]) -> Result<(), Failure> {
    let registry = build_demo_registry();
    let filter: Tags = tags
        .iter()
        .map(|t| parse_tag(t))
        .collect::<Result<_, _>>()?;
    let mut out = String::new();
    for d in registry.iter() {
        let kind_ok = kind.is_none_or(|k| d.kind == k);
        if kind_ok && argtree_core::schema::tags_match(&d.tags, &filter) {
            let tags: Vec<String> = d.tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("{}\t{}\t{}\n", d.name, d.kind, tags.join(",")));
        }
    }
    if kind.is_none() && filter.is_empty() {
        for (name, reason) in registry.missing() {
            eprintln!("unavailable: {name} ({reason})");
        }
    }
    emit(&out, None)
}

pub fn docgen(out: Option<&Path>) -> Result<(), Failure> {
    emit(&render_docgen(&build_demo_registry()), out)
}

pub fn tree(input: &ConfigInput, dot: Option<&Path>) -> Result<(), Failure> {
    let l = load(input)?;
    let (root, violations) = build_tree_lenient(&l.registry, &l.doc, &l.env, &l.entry);
    if let Some(root) = &root {
        eprint!("{}", structure_overview(root));
        emit(&to_dot(root, true), dot)?;
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violation_lines(&violations))
    }
}

pub fn generate(input: &ConfigInput, out: Option<&Path>) -> Result<(), Failure> {
    let tree = build(input)?;
    let doc = generate_config(&tree).map_err(|e| violation_lines(&e.0))?;
    emit(&doc.to_json_string(), out)
}

pub fn state(
    path: &Path,
    finalize: bool,
    selections: &[String],
    out: Option<&Path>,
) -> Result<(), Failure> {
    let mut provider = SelectionProvider::new();
    for s in selections {
        let (name, indices) = s
            .rsplit_once('=')
            .ok_or_else(|| env_err(format!("malformed --select '{s}', expected name=i,j")))?;
        let indices = indices
            .split(',')
            .map(|i| i.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| env_err(format!("malformed --select '{s}': {e}")))?;
        provider = provider.select(name, indices);
    }
    let state = ModuleState::parse(&read(path)?)
        .map_err(|e| env_err(format!("{}: {e}", path.display())))?;
    let registry = build_demo_registry();
    let module = import_state(&registry, &state).map_err(invalid)?;
    let exported = export_state(module.as_ref(), finalize, &provider).map_err(invalid)?;
    let bytes = canonical_serialize(&exported);
    emit(
        &String::from_utf8(bytes).expect("canonical JSON is UTF-8"),
        out,
    )
}

pub fn serve(
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    env: &[String],
    entry: String,
    entry_kind: String,
) -> Result<(), Failure> {
    let session = EditorSession::new(
        Arc::new(build_demo_registry()),
        placeholders(env)?,
        EntryPoint::new(entry, entry_kind),
    );
    let mut state = AppState::new(session);
    if let Some(dir) = static_dir {
        if !dir.is_dir() {
            return Err(env_err(format!("{} is not a directory", dir.display())));
        }
        state = state.with_static_dir(dir);
    }
    let runtime = tokio::runtime::Runtime::new().map_err(env_err)?;
    runtime
        .block_on(argtree_server::serve(state, addr, |bound| {
            eprintln!("serving the editor backend on http://{bound}/ (API under /api/v1/)");
        }))
        .map_err(|e| env_err(format!("cannot serve on {addr}: {e}")))
}
