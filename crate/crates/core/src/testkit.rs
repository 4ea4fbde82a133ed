//! Seeded random inputs for property tests and benchmarks: registries with
//! matching valid argument trees, single-mutation config perturbations,
//! and module states of the demo network modules.

use std::collections::BTreeMap;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigDocument, KeyForm};
use crate::demo::{
    LinearTransformerLayer, MixedOp, MobileInvConvLayer, PoolingLayer, SequentialModules,
    SingleLayerCell, SkipLayer, SumParallelModules, ZeroLayer,
};
use crate::registry::Registry;
use crate::schema::{
    tags_match, ArgumentSpec, ChildRequirementSpec, ModuleDescriptor, Tags, Value, ValueKind,
};
use crate::state::{BuildableModule, ModuleState, SelectionProvider};
use crate::tree::{ArgumentTreeNode, EntryPoint};

/// A registry together with one valid tree built from it.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub registry: Registry,
    pub tree: ArgumentTreeNode,
    pub entry: EntryPoint,
}

const MAX_NODES: usize = 48;
const TEXT_CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '7', ' ', '-', '_', '/', ':', '.', ',', '!', 'é',
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..8);
    (0..len)
        .map(|_| *TEXT_CHARS.choose(rng).expect("non-empty"))
        .collect()
}

fn random_real(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-3..4) as f64,
        1 => rng.random_range(-1.0..1.0) * 1e-9,
        2 => rng.random_range(-1.0..1.0) * 1e12,
        _ => rng.random_range(-100.0..100.0),
    }
}

fn random_value(rng: &mut ChaCha8Rng, kind: ValueKind) -> Value {
    match kind {
        ValueKind::Boolean => Value::Bool(rng.random()),
        ValueKind::Integer => Value::Int(rng.random_range(-1_000_000_000_000..1_000_000_000_000)),
        ValueKind::Real => Value::Real(random_real(rng)),
        ValueKind::String => Value::Str(random_text(rng)),
    }
}

fn random_spec(rng: &mut ChaCha8Rng, name: String) -> ArgumentSpec {
    let kind = *[
        ValueKind::Boolean,
        ValueKind::Integer,
        ValueKind::Real,
        ValueKind::String,
    ]
    .choose(rng)
    .expect("non-empty");
    if kind == ValueKind::String && rng.random_bool(0.3) {
        let choices: Vec<String> = (0..rng.random_range(1..4))
            .map(|i| format!("opt{i}"))
            .collect();
        let default = choices.choose(rng).expect("non-empty").clone();
        return ArgumentSpec::new(name, kind, default, "one of a few").with_choices(choices);
    }
    let default = random_value(rng, kind);
    ArgumentSpec::new(name, kind, default, "random argument")
}

struct TreeGen {
    rng: ChaCha8Rng,
    max_depth: usize,
    next_id: usize,
    nodes: usize,
    registry: Registry,
    leaves: BTreeMap<String, Vec<Arc<ModuleDescriptor>>>,
}

impl TreeGen {
    fn id(&mut self) -> usize {
        self.next_id += 1;
        self.next_id
    }

    fn node(
        &mut self,
        depth: usize,
        req_key: &str,
        index: usize,
        kind: &str,
        filter: &Tags,
    ) -> ArgumentTreeNode {
        self.nodes += 1;
        let can_grow = depth < self.max_depth && self.nodes < MAX_NODES;
        let n_reqs = if can_grow {
            self.rng.random_range(0..=3)
        } else {
            0
        };

        let reusable: Vec<Arc<ModuleDescriptor>> = self
            .leaves
            .get(kind)
            .map(|v| {
                v.iter()
                    .filter(|d| tags_match(&d.tags, filter))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let descriptor = match reusable.choose(&mut self.rng) {
            Some(d) if n_reqs == 0 && self.rng.random_bool(0.5) => d.clone(),
            _ => self.new_descriptor(kind, filter, n_reqs),
        };

        let mut values = IndexMap::new();
        for spec in &descriptor.arguments {
            let value = if !spec.choices.is_empty() {
                Value::Str(
                    spec.choices
                        .choose(&mut self.rng)
                        .expect("non-empty")
                        .clone(),
                )
            } else if self.rng.random_bool(0.4) {
                spec.default.clone()
            } else {
                random_value(&mut self.rng, spec.value_kind)
            };
            values.insert(spec.name.clone(), value);
        }

        let mut children = IndexMap::new();
        for req in &descriptor.child_requirements {
            let most = req
                .count_max
                .unwrap_or(req.count_min + 2)
                .min(req.count_min + 2);
            let count = if self.nodes < MAX_NODES {
                self.rng.random_range(req.count_min..=most)
            } else {
                req.count_min
            };
            let kids = (0..count)
                .map(|i| self.node(depth + 1, &req.key, i, &req.allowed_kind, &req.tag_filter))
                .collect();
            children.insert(req.key.clone(), kids);
        }
        ArgumentTreeNode {
            descriptor,
            req_key: req_key.to_string(),
            index,
            values,
            children,
        }
    }

    fn new_descriptor(
        &mut self,
        kind: &str,
        filter: &Tags,
        n_reqs: usize,
    ) -> Arc<ModuleDescriptor> {
        let id = self.id();
        let mut d = ModuleDescriptor::new(format!("Module{id}"), kind).help("randomly generated");
        for (k, v) in filter {
            d = d.tag(k.clone(), v.clone());
        }
        if !filter.contains_key("fast") && self.rng.random_bool(0.5) {
            d = d.tag("fast", self.rng.random_bool(0.5));
        }
        for i in 0..self.rng.random_range(0..=3) {
            d = d.arg(random_spec(&mut self.rng, format!("a{i}")));
        }
        for _ in 0..n_reqs {
            let rid = self.id();
            let min = self.rng.random_range(0..=2);
            let max = if self.rng.random_bool(0.3) {
                None
            } else {
                Some(min.max(1) + self.rng.random_range(0..=2))
            };
            let mut req =
                ChildRequirementSpec::new(format!("cls_r{rid}"), format!("kind{rid}"), min, max);
            if self.rng.random_bool(0.3) {
                req = req.with_tag("fast", true);
            }
            d = d.requires(req);
        }
        let leaf = d.child_requirements.is_empty();
        let name = d.name.clone();
        self.registry
            .register(d)
            .expect("generated descriptors are valid");
        let arc = self
            .registry
            .lookup(&name)
            .expect("just registered")
            .clone();
        if leaf {
            self.leaves
                .entry(kind.to_string())
                .or_default()
                .push(arc.clone());
        }
        arc
    }
}

/// A fresh registry and a valid tree of at most `max_depth` levels, the
/// root included, entered through `cls_root`.
pub fn random_case(seed: u64, max_depth: usize) -> RandomCase {
    let entry = EntryPoint::new("cls_root", "root");
    let mut gen = TreeGen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        max_depth,
        next_id: 0,
        nodes: 0,
        registry: Registry::new(),
        leaves: BTreeMap::new(),
    };
    let tree = gen.node(1, &entry.req_key, 0, &entry.kind, &Tags::new());
    RandomCase {
        registry: gen.registry,
        tree,
        entry,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// An existing key is renamed.
    KeyTypo,
    /// A key that nothing reads is added.
    ExtraKey,
    /// One selection gets one class too many or too few.
    CountBreach,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [
        Perturbation::KeyTypo,
        Perturbation::ExtraKey,
        Perturbation::CountBreach,
    ];
}

/// Applies one mutation of the given kind to the canonical config of
/// `case.tree`. Every result must fail to build.
pub fn perturb(
    case: &RandomCase,
    doc: &ConfigDocument,
    kind: Perturbation,
    seed: u64,
) -> ConfigDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<(String, Value)> = doc
        .entries()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    match kind {
        Perturbation::KeyTypo => {
            let i = rng.random_range(0..entries.len());
            entries[i].0.push('x');
        }
        Perturbation::ExtraKey => {
            let mut nodes = Vec::new();
            case.tree
                .walk(|_, n| nodes.push((n.req_key.clone(), n.index)));
            let (req_key, index) = nodes.choose(&mut rng).expect("tree has a root").clone();
            let key = KeyForm::indexed(&req_key, index, "not_an_argument");
            entries.insert(rng.random_range(0..=entries.len()), (key, Value::Int(1)));
        }
        Perturbation::CountBreach => {
            // (selection key, class names, minimum, maximum, a class that may be added)
            let mut breachable = vec![(
                case.entry.req_key.clone(),
                vec![case.tree.name().to_string()],
                1,
                Some(1),
                case.tree.name().to_string(),
            )];
            case.tree.walk(|_, n| {
                for req in &n.descriptor.child_requirements {
                    let names: Vec<String> = n
                        .children_of(&req.key)
                        .iter()
                        .map(|k| k.name().to_string())
                        .collect();
                    let extra = case
                        .registry
                        .filter(&req.allowed_kind, &req.tag_filter)
                        .first()
                        .map(|d| d.name.clone());
                    if let Some(extra) = extra {
                        if req.count_min > 0 || req.count_max.is_some() {
                            breachable.push((
                                req.key.clone(),
                                names,
                                req.count_min,
                                req.count_max,
                                extra,
                            ));
                        }
                    } else if req.count_min > 0 {
                        breachable.push((
                            req.key.clone(),
                            names,
                            req.count_min,
                            req.count_max,
                            String::new(),
                        ));
                    }
                }
            });
            let (key, mut names, min, max, extra) = breachable
                .choose(&mut rng)
                .expect("entry is breachable")
                .clone();
            let grow = match (min > 0, max.is_some() && !extra.is_empty()) {
                (true, true) => rng.random_bool(0.5),
                (can_shrink, _) => !can_shrink,
            };
            if grow {
                let max = max.expect("growth needs a bound");
                while names.len() <= max {
                    names.push(extra.clone());
                }
            } else {
                names.truncate(min - 1);
            }
            let value = Value::Str(names.join(", "));
            match entries.iter_mut().find(|(k, _)| *k == key) {
                Some(entry) => entry.1 = value,
                None => entries.push((key, value)),
            }
        }
    }
    ConfigDocument::from_entries(entries).expect("perturbed keys stay well-formed")
}

struct StateGen {
    rng: ChaCha8Rng,
    next_id: usize,
}

impl StateGen {
    fn leaf(&mut self) -> Box<dyn BuildableModule> {
        let rng = &mut self.rng;
        match rng.random_range(0..5) {
            0 => Box::new(SkipLayer),
            1 => Box::new(ZeroLayer {
                stride: rng.random_range(1..3),
            }),
            2 => Box::new(PoolingLayer {
                pool_type: if rng.random() { "max" } else { "avg" }.into(),
                k_size: rng.random_range(1..8),
                stride: rng.random_range(1..3),
            }),
            3 => Box::new(MobileInvConvLayer {
                kernel_size: rng.random_range(1..8),
                kernel_size_in: rng.random_range(1..4),
                kernel_size_out: rng.random_range(1..4),
                stride: rng.random_range(1..3),
                expansion: random_real(rng),
                padding: random_text(rng),
                dilation: rng.random_range(1..4),
                bn_affine: rng.random(),
                act_fun: ["relu", "relu6", "swish"]
                    .choose(rng)
                    .expect("non-empty")
                    .to_string(),
                act_inplace: rng.random(),
                att_dict: if rng.random() {
                    None
                } else {
                    Some(random_text(rng))
                },
                fused: rng.random(),
            }),
            _ => Box::new(LinearTransformerLayer {
                num_heads: rng.random_range(1..16),
                hidden_mult: random_real(rng),
            }),
        }
    }

    fn list(&mut self, depth: usize, min: usize) -> Vec<Box<dyn BuildableModule>> {
        let n = self.rng.random_range(min..=3);
        (0..n).map(|_| self.module(depth + 1)).collect()
    }

    fn module(&mut self, depth: usize) -> Box<dyn BuildableModule> {
        if depth >= 5 || self.rng.random_bool(0.4) {
            return self.leaf();
        }
        self.next_id += 1;
        let id = self.next_id;
        match self.rng.random_range(0..4) {
            0 => Box::new(SingleLayerCell {
                name: format!("cell_{id}"),
                features_mult: self.rng.random_range(1..4),
                features_fixed: self.rng.random_range(-1..64),
                op: self.module(depth + 1),
            }),
            1 => Box::new(SequentialModules {
                submodules: self.list(depth, 0),
            }),
            2 => Box::new(SumParallelModules {
                submodules: self.list(depth, 0),
            }),
            _ => Box::new(MixedOp {
                name: format!("n/block-{id}/op-0"),
                strategy_name: "default".into(),
                submodules: self.list(depth, 1),
            }),
        }
    }
}

/// A random structure of demo network modules, at most five levels deep.
pub fn random_network(seed: u64) -> Box<dyn BuildableModule> {
    StateGen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        next_id: 0,
    }
    .module(1)
}

/// The unfinalized state of [`random_network`].
pub fn random_network_state(seed: u64) -> ModuleState {
    random_network(seed)
        .export_state(false, &SelectionProvider::new())
        .expect("unfinalized export cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TagValue;
    use crate::tree::validate_tree;

    #[test]
    fn generated_trees_are_valid_and_bounded() {
        for seed in 0..50 {
            let case = random_case(seed, 6);
            assert_eq!(validate_tree(&case.tree), vec![], "seed {seed}");
            let mut deepest = 0;
            case.tree.walk(|p, _| deepest = deepest.max(p.len()));
            assert!(deepest < 6);
        }
    }

    #[test]
    fn generated_states_are_bounded() {
        for seed in 0..50 {
            assert!(random_network_state(seed).depth() <= 5);
        }
    }

    #[test]
    fn tag_values_in_filters_are_booleans() {
        let case = random_case(3, 4);
        for d in case.registry.iter() {
            for r in &d.child_requirements {
                assert!(r
                    .tag_filter
                    .values()
                    .all(|v| matches!(v, TagValue::Bool(true))));
            }
        }
    }
}
