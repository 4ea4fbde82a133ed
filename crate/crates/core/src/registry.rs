//! The global module register.
//!
//! Every module kind is registered once under a globally unique name. Modules
//! whose optional dependency is unavailable are recorded as *missing* together
//! with the reason, so lookups can tell the user what to install.
//!
//! A registry is populated once and then shared read-only (usually behind an
//! `Arc`); nothing mutates it after construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::schema::{tags_match, validate_descriptor, DescriptorViolation, ModuleDescriptor, Tags};
use crate::state::StateBuilder;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("module name '{0}' is already registered")]
    DuplicateName(String),
    #[error("descriptor '{name}' is invalid: {}", join_violations(.violations))]
    InvalidDescriptor {
        name: String,
        violations: Vec<DescriptorViolation>,
    },
}

fn join_violations(v: &[DescriptorViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("unknown module '{0}'")]
    UnknownModule(String),
    #[error("module '{name}' is unavailable: {reason}")]
    MissingModule { name: String, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    descriptors: BTreeMap<String, Arc<ModuleDescriptor>>,
    missing: BTreeMap<String, String>,
    state_builders: BTreeMap<String, StateBuilder>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: ModuleDescriptor) -> Result<(), RegistryError> {
        let name = descriptor.name.clone();
        if self.descriptors.contains_key(&name) || self.missing.contains_key(&name) {
            return Err(RegistryError::DuplicateName(name));
        }
        let violations = validate_descriptor(&descriptor);
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDescriptor { name, violations });
        }
        self.descriptors.insert(name, Arc::new(descriptor));
        Ok(())
    }

    /// Registers a module that can also be rebuilt from a saved state.
    pub fn register_buildable(
        &mut self,
        descriptor: ModuleDescriptor,
        builder: StateBuilder,
    ) -> Result<(), RegistryError> {
        let name = descriptor.name.clone();
        self.register(descriptor)?;
        self.state_builders.insert(name, builder);
        Ok(())
    }

    pub fn register_missing(
        &mut self,
        name: impl Into<String>,
        reason: impl Into<String>,
    ) -> Result<(), RegistryError> {
        let name = name.into();
        if self.descriptors.contains_key(&name) || self.missing.contains_key(&name) {
            return Err(RegistryError::DuplicateName(name));
        }
        self.missing.insert(name, reason.into());
        Ok(())
    }

    /// Finds a descriptor by name; surrounding whitespace is ignored.
    pub fn lookup(&self, name: &str) -> Result<&Arc<ModuleDescriptor>, LookupError> {
        let name = name.trim();
        if let Some(d) = self.descriptors.get(name) {
            return Ok(d);
        }
        match self.missing.get(name) {
            Some(reason) => Err(LookupError::MissingModule {
                name: name.to_string(),
                reason: reason.clone(),
            }),
            None => Err(LookupError::UnknownModule(name.to_string())),
        }
    }

    /// All descriptors of `kind` carrying every tag in `tag_filter`, by name.
    pub fn filter(&self, kind: &str, tag_filter: &Tags) -> Vec<&Arc<ModuleDescriptor>> {
        self.descriptors
            .values()
            .filter(|d| d.kind == kind && tags_match(&d.tags, tag_filter))
            .collect()
    }

    pub fn state_builder(&self, name: &str) -> Option<StateBuilder> {
        self.state_builders.get(name).copied()
    }

    /// Descriptors in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<ModuleDescriptor>> {
        self.descriptors.values()
    }

    /// Missing module names and reasons, in name order.
    pub fn missing(&self) -> impl Iterator<Item = (&str, &str)> {
        self.missing.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Distinct kinds in lexicographic order.
    pub fn kinds(&self) -> Vec<&str> {
        let mut kinds: Vec<&str> = self.descriptors.values().map(|d| d.kind.as_str()).collect();
        kinds.sort_unstable();
        kinds.dedup();
        kinds
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}
