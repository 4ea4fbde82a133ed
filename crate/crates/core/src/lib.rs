//! Composable experiments from a registry of self-describing modules.
//!
//! Modules declare their arguments and the child modules they require
//! ([`schema`]), live in a [`registry`], and are selected and parameterized
//! by a flat key/value [`config`] document. The [`tree`] builder turns a
//! document into a validated argument tree that can be documented, drawn,
//! written back out, and run ([`demo`]). Built structures are saved and
//! rebuilt through module states ([`state`]).

pub mod config;
pub mod demo;
pub mod registry;
pub mod schema;
pub mod state;
pub mod testkit;
pub mod tree;

pub use config::{ConfigDocument, ConfigError, KeyForm, Placeholders, ResolveError};
pub use registry::{LookupError, Registry, RegistryError};
pub use schema::{
    ArgumentSpec, ChildRequirementSpec, ModuleDescriptor, TagValue, Tags, Value, ValueKind,
};
pub use state::{
    canonical_serialize, export_state, import_state, BuildableModule, ModuleState,
    SelectionProvider, StateError,
};
pub use tree::{
    build_tree, build_tree_lenient, docgen, generate_config, to_dot, validate_tree,
    ArgumentTreeNode, BuildError, EntryPoint, Violation, ViolationCode,
};
