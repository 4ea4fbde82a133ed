//! Structural network modules. They hold no weights; what matters is that
//! each one exports its constructor arguments and submodules as a
//! [`ModuleState`] and can be rebuilt from it.

use crate::schema::{ArgumentSpec, ModuleDescriptor, ValueKind};
use crate::state::{
    BuildableModule, ModuleState, SelectionProvider, StateArgs, StateBuilder, StateError,
};

use ValueKind::{Boolean, Integer, Real, String as Text};

const SOURCE: &str = file!();

fn export_all(
    modules: &[Box<dyn BuildableModule>],
    finalize: bool,
    selection: &SelectionProvider,
) -> Result<Vec<ModuleState>, StateError> {
    modules
        .iter()
        .map(|m| m.export_state(finalize, selection))
        .collect()
}

/// Identity connection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipLayer;

impl SkipLayer {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("SkipLayer", "network_layer")
            .help("identity connection")
            .source(SOURCE)
    }

    fn build(args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        args.finish()?;
        Ok(Box::new(SkipLayer))
    }
}

impl BuildableModule for SkipLayer {
    fn type_name(&self) -> &str {
        "SkipLayer"
    }

    fn export_state(&self, _: bool, _: &SelectionProvider) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("SkipLayer"))
    }
}

/// Outputs zeros, used to drop a path entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroLayer {
    pub stride: i64,
}

impl ZeroLayer {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("ZeroLayer", "network_layer")
            .help("outputs zeros, removing the path")
            .source(SOURCE)
            .arg(ArgumentSpec::new(
                "stride",
                Integer,
                1,
                "stride of the output",
            ))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let stride = args.take_int("stride", 1)?;
        args.finish()?;
        Ok(Box::new(ZeroLayer { stride }))
    }
}

impl BuildableModule for ZeroLayer {
    fn type_name(&self) -> &str {
        "ZeroLayer"
    }

    fn export_state(&self, _: bool, _: &SelectionProvider) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("ZeroLayer").kwarg("stride", self.stride))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingLayer {
    pub pool_type: String,
    pub k_size: i64,
    pub stride: i64,
}

impl PoolingLayer {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("PoolingLayer", "network_layer")
            .help("spatial pooling")
            .source(SOURCE)
            .arg(
                ArgumentSpec::new("pool_type", Text, "max", "pooling function")
                    .with_choices(["max", "avg"]),
            )
            .arg(ArgumentSpec::new("k_size", Integer, 3, "kernel size"))
            .arg(ArgumentSpec::new("stride", Integer, 1, "stride"))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let pool_type = args.take_str("pool_type", "max")?;
        if pool_type != "max" && pool_type != "avg" {
            return Err(StateError::Construction {
                name: args.name,
                detail: format!("unknown pool_type '{pool_type}'"),
            });
        }
        let k_size = args.take_int("k_size", 3)?;
        let stride = args.take_int("stride", 1)?;
        args.finish()?;
        Ok(Box::new(PoolingLayer {
            pool_type,
            k_size,
            stride,
        }))
    }
}

impl BuildableModule for PoolingLayer {
    fn type_name(&self) -> &str {
        "PoolingLayer"
    }

    fn export_state(&self, _: bool, _: &SelectionProvider) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("PoolingLayer")
            .kwarg("pool_type", self.pool_type.as_str())
            .kwarg("k_size", self.k_size)
            .kwarg("stride", self.stride))
    }
}

/// Inverted bottleneck block: expanding 1x1, spatial kxk, projecting 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileInvConvLayer {
    pub kernel_size: i64,
    pub kernel_size_in: i64,
    pub kernel_size_out: i64,
    pub stride: i64,
    pub expansion: f64,
    pub padding: String,
    pub dilation: i64,
    pub bn_affine: bool,
    pub act_fun: String,
    pub act_inplace: bool,
    pub att_dict: Option<String>,
    pub fused: bool,
}

impl Default for MobileInvConvLayer {
    fn default() -> Self {
        MobileInvConvLayer {
            kernel_size: 3,
            kernel_size_in: 1,
            kernel_size_out: 1,
            stride: 1,
            expansion: 6.0,
            padding: "same".into(),
            dilation: 1,
            bn_affine: true,
            act_fun: "relu6".into(),
            act_inplace: true,
            att_dict: None,
            fused: false,
        }
    }
}

impl MobileInvConvLayer {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("MobileInvConvLayer", "network_layer")
            .help("inverted bottleneck convolution block")
            .source(SOURCE)
            .arg(ArgumentSpec::new(
                "kernel_size",
                Integer,
                3,
                "spatial kernel size",
            ))
            .arg(ArgumentSpec::new(
                "kernel_size_in",
                Integer,
                1,
                "kernel size of the expanding convolution",
            ))
            .arg(ArgumentSpec::new(
                "kernel_size_out",
                Integer,
                1,
                "kernel size of the projecting convolution",
            ))
            .arg(ArgumentSpec::new(
                "stride",
                Integer,
                1,
                "stride of the spatial convolution",
            ))
            .arg(ArgumentSpec::new(
                "expansion",
                Real,
                6.0,
                "channel expansion factor",
            ))
            .arg(ArgumentSpec::new("padding", Text, "same", "padding mode"))
            .arg(ArgumentSpec::new(
                "dilation",
                Integer,
                1,
                "dilation of the spatial convolution",
            ))
            .arg(ArgumentSpec::new(
                "bn_affine",
                Boolean,
                true,
                "affine batch norm parameters",
            ))
            .arg(ArgumentSpec::new(
                "act_fun",
                Text,
                "relu6",
                "activation function",
            ))
            .arg(ArgumentSpec::new(
                "act_inplace",
                Boolean,
                true,
                "apply the activation in place",
            ))
            .arg(ArgumentSpec::new(
                "att_dict",
                Text,
                "",
                "attention block config, empty (null in states) for none",
            ))
            .arg(ArgumentSpec::new(
                "fused",
                Boolean,
                false,
                "fuse the expanding and spatial convolutions",
            ))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let d = MobileInvConvLayer::default();
        let layer = MobileInvConvLayer {
            kernel_size: args.take_int("kernel_size", d.kernel_size)?,
            kernel_size_in: args.take_int("kernel_size_in", d.kernel_size_in)?,
            kernel_size_out: args.take_int("kernel_size_out", d.kernel_size_out)?,
            stride: args.take_int("stride", d.stride)?,
            expansion: args.take_real("expansion", d.expansion)?,
            padding: args.take_str("padding", &d.padding)?,
            dilation: args.take_int("dilation", d.dilation)?,
            bn_affine: args.take_bool("bn_affine", d.bn_affine)?,
            act_fun: args.take_str("act_fun", &d.act_fun)?,
            act_inplace: args.take_bool("act_inplace", d.act_inplace)?,
            att_dict: args.take_opt_str("att_dict")?,
            fused: args.take_bool("fused", d.fused)?,
        };
        args.finish()?;
        Ok(Box::new(layer))
    }
}

impl BuildableModule for MobileInvConvLayer {
    fn type_name(&self) -> &str {
        "MobileInvConvLayer"
    }

    fn export_state(&self, _: bool, _: &SelectionProvider) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("MobileInvConvLayer")
            .kwarg("kernel_size", self.kernel_size)
            .kwarg("kernel_size_in", self.kernel_size_in)
            .kwarg("kernel_size_out", self.kernel_size_out)
            .kwarg("stride", self.stride)
            .kwarg("expansion", self.expansion)
            .kwarg("padding", self.padding.as_str())
            .kwarg("dilation", self.dilation)
            .kwarg("bn_affine", self.bn_affine)
            .kwarg("act_fun", self.act_fun.as_str())
            .kwarg("act_inplace", self.act_inplace)
            .kwarg("att_dict", self.att_dict.clone())
            .kwarg("fused", self.fused))
    }
}

/// A layer that only exists while searching. Finalized exports replace it
/// with a [`SkipLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransformerLayer {
    pub num_heads: i64,
    pub hidden_mult: f64,
}

impl LinearTransformerLayer {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("LinearTransformerLayer", "network_layer")
            .help("linear attention block, exported as a skip connection when finalized")
            .source(SOURCE)
            .arg(ArgumentSpec::new(
                "num_heads",
                Integer,
                4,
                "attention heads",
            ))
            .arg(ArgumentSpec::new(
                "hidden_mult",
                Real,
                2.0,
                "hidden size multiplier",
            ))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let num_heads = args.take_int("num_heads", 4)?;
        let hidden_mult = args.take_real("hidden_mult", 2.0)?;
        args.finish()?;
        Ok(Box::new(LinearTransformerLayer {
            num_heads,
            hidden_mult,
        }))
    }
}

impl BuildableModule for LinearTransformerLayer {
    fn type_name(&self) -> &str {
        "LinearTransformerLayer"
    }

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError> {
        if finalize {
            return SkipLayer.export_state(finalize, selection);
        }
        Ok(ModuleState::new("LinearTransformerLayer")
            .kwarg("num_heads", self.num_heads)
            .kwarg("hidden_mult", self.hidden_mult))
    }
}

/// A cell wrapping exactly one operation.
#[derive(Debug)]
pub struct SingleLayerCell {
    pub name: String,
    pub features_mult: i64,
    pub features_fixed: i64,
    pub op: Box<dyn BuildableModule>,
}

impl SingleLayerCell {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("SingleLayerCell", "network_cell")
            .help("a cell wrapping exactly one operation in its 'op' slot")
            .source(SOURCE)
            .arg(ArgumentSpec::new("name", Text, "", "path name of the cell"))
            .arg(ArgumentSpec::new(
                "features_mult",
                Integer,
                1,
                "multiply the input channel count",
            ))
            .arg(ArgumentSpec::new(
                "features_fixed",
                Integer,
                -1,
                "fixed output channel count, if > 0",
            ))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let name = args.take_str("name", "")?;
        let features_mult = args.take_int("features_mult", 1)?;
        let features_fixed = args.take_int("features_fixed", -1)?;
        let op = args.take_one("op")?;
        args.finish()?;
        Ok(Box::new(SingleLayerCell {
            name,
            features_mult,
            features_fixed,
            op,
        }))
    }
}

impl BuildableModule for SingleLayerCell {
    fn type_name(&self) -> &str {
        "SingleLayerCell"
    }

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("SingleLayerCell")
            .kwarg("name", self.name.as_str())
            .kwarg("features_mult", self.features_mult)
            .kwarg("features_fixed", self.features_fixed)
            .one("op", self.op.export_state(finalize, selection)?))
    }
}

/// Applies its submodules one after another.
#[derive(Debug)]
pub struct SequentialModules {
    pub submodules: Vec<Box<dyn BuildableModule>>,
}

impl SequentialModules {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("SequentialModules", "network_module")
            .help("apply the 'submodules' list in order")
            .source(SOURCE)
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let submodules = args.take_many("submodules")?;
        args.finish()?;
        Ok(Box::new(SequentialModules { submodules }))
    }
}

impl BuildableModule for SequentialModules {
    fn type_name(&self) -> &str {
        "SequentialModules"
    }

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("SequentialModules").many(
            "submodules",
            export_all(&self.submodules, finalize, selection)?,
        ))
    }
}

/// Sums the outputs of its submodules.
#[derive(Debug)]
pub struct SumParallelModules {
    pub submodules: Vec<Box<dyn BuildableModule>>,
}

impl SumParallelModules {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("SumParallelModules", "network_module")
            .help("sum the outputs of the 'submodules' list")
            .source(SOURCE)
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let submodules = args.take_many("submodules")?;
        args.finish()?;
        Ok(Box::new(SumParallelModules { submodules }))
    }
}

impl BuildableModule for SumParallelModules {
    fn type_name(&self) -> &str {
        "SumParallelModules"
    }

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError> {
        Ok(ModuleState::new("SumParallelModules").many(
            "submodules",
            export_all(&self.submodules, finalize, selection)?,
        ))
    }
}

/// An over-complete node holding several candidate operations. Finalized
/// exports keep only the selected candidates: one survivor replaces the
/// node outright, several are summed in a [`SumParallelModules`].
#[derive(Debug)]
pub struct MixedOp {
    pub name: String,
    pub strategy_name: String,
    pub submodules: Vec<Box<dyn BuildableModule>>,
}

impl MixedOp {
    fn descriptor() -> ModuleDescriptor {
        ModuleDescriptor::new("MixedOp", "network_mixed_op")
            .help("candidate operations, reduced to the selected ones when finalized")
            .source(SOURCE)
            .arg(ArgumentSpec::new(
                "name",
                Text,
                "",
                "path name, the key for candidate selections",
            ))
            .arg(ArgumentSpec::new(
                "strategy_name",
                Text,
                "default",
                "strategy that owns the selection",
            ))
    }

    fn build(mut args: StateArgs) -> Result<Box<dyn BuildableModule>, StateError> {
        let name = args.take_str("name", "")?;
        let strategy_name = args.take_str("strategy_name", "default")?;
        let submodules = args.take_many("submodules")?;
        args.finish()?;
        Ok(Box::new(MixedOp {
            name,
            strategy_name,
            submodules,
        }))
    }
}

impl BuildableModule for MixedOp {
    fn type_name(&self) -> &str {
        "MixedOp"
    }

    fn export_state(
        &self,
        finalize: bool,
        selection: &SelectionProvider,
    ) -> Result<ModuleState, StateError> {
        if !finalize {
            return Ok(ModuleState::new("MixedOp")
                .kwarg("name", self.name.as_str())
                .kwarg("strategy_name", self.strategy_name.as_str())
                .many(
                    "submodules",
                    export_all(&self.submodules, false, selection)?,
                ));
        }
        let indices = selection
            .get(&self.name)
            .ok_or_else(|| StateError::MissingSelection(self.name.clone()))?;
        if indices.is_empty() {
            return Err(StateError::EmptySelection(self.name.clone()));
        }
        let mut kept = Vec::with_capacity(indices.len());
        for &index in indices {
            let candidate =
                self.submodules
                    .get(index)
                    .ok_or_else(|| StateError::IndexOutOfRange {
                        node: self.name.clone(),
                        index,
                        len: self.submodules.len(),
                    })?;
            kept.push(candidate.export_state(true, selection)?);
        }
        if kept.len() == 1 {
            return Ok(kept.pop().expect("one element"));
        }
        Ok(ModuleState::new("SumParallelModules").many("submodules", kept))
    }
}

pub(super) fn buildable_modules() -> Vec<(ModuleDescriptor, StateBuilder)> {
    vec![
        (SkipLayer::descriptor(), SkipLayer::build),
        (ZeroLayer::descriptor(), ZeroLayer::build),
        (PoolingLayer::descriptor(), PoolingLayer::build),
        (MobileInvConvLayer::descriptor(), MobileInvConvLayer::build),
        (
            LinearTransformerLayer::descriptor(),
            LinearTransformerLayer::build,
        ),
        (SingleLayerCell::descriptor(), SingleLayerCell::build),
        (SequentialModules::descriptor(), SequentialModules::build),
        (SumParallelModules::descriptor(), SumParallelModules::build),
        (MixedOp::descriptor(), MixedOp::build),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::build_demo_registry_with;
    use crate::state::import_state;

    fn candidates() -> Vec<Box<dyn BuildableModule>> {
        vec![
            Box::new(SkipLayer),
            Box::new(ZeroLayer { stride: 1 }),
            Box::new(PoolingLayer {
                pool_type: "avg".into(),
                k_size: 3,
                stride: 1,
            }),
            Box::new(MobileInvConvLayer::default()),
            Box::new(LinearTransformerLayer {
                num_heads: 2,
                hidden_mult: 1.5,
            }),
        ]
    }

    fn mixed() -> MixedOp {
        MixedOp {
            name: "n/block-0/1/op-0".into(),
            strategy_name: "default".into(),
            submodules: candidates(),
        }
    }

    #[test]
    fn leaf_exports_have_no_submodules() {
        let s = ZeroLayer { stride: 2 }
            .export_state(false, &SelectionProvider::new())
            .unwrap();
        assert_eq!(s.name, "ZeroLayer");
        assert!(s.submodules.is_empty());
    }

    #[test]
    fn finalize_requires_a_selection() {
        let m = mixed();
        assert_eq!(
            m.export_state(true, &SelectionProvider::new()),
            Err(StateError::MissingSelection("n/block-0/1/op-0".into()))
        );
        let sel = SelectionProvider::new().select("n/block-0/1/op-0", vec![7]);
        assert!(matches!(
            m.export_state(true, &sel),
            Err(StateError::IndexOutOfRange {
                index: 7,
                len: 5,
                ..
            })
        ));
        let sel = SelectionProvider::new().select("n/block-0/1/op-0", vec![]);
        assert!(matches!(
            m.export_state(true, &sel),
            Err(StateError::EmptySelection(_))
        ));
    }

    #[test]
    fn transformer_substitutes_skip_when_finalized() {
        let sel = SelectionProvider::new().select("n/block-0/1/op-0", vec![4]);
        assert_eq!(
            mixed().export_state(true, &sel).unwrap(),
            ModuleState::new("SkipLayer")
        );
    }

    #[test]
    fn unexpected_kwargs_fail_construction() {
        let r = build_demo_registry_with(false);
        let s = ModuleState::new("ZeroLayer")
            .kwarg("stride", 1)
            .kwarg("bogus", 2);
        assert!(matches!(
            import_state(&r, &s),
            Err(StateError::Construction { .. })
        ));
        let s = ModuleState::new("ZeroLayer").kwarg("stride", "two");
        assert!(matches!(
            import_state(&r, &s),
            Err(StateError::Construction { .. })
        ));
        let s = ModuleState::new("SingleLayerCell");
        assert!(matches!(
            import_state(&r, &s),
            Err(StateError::Construction { .. })
        ));
    }

    #[test]
    fn unfinalized_round_trip() {
        let r = build_demo_registry_with(false);
        let s = mixed()
            .export_state(false, &SelectionProvider::new())
            .unwrap();
        let rebuilt = import_state(&r, &s).unwrap();
        assert_eq!(
            rebuilt
                .export_state(false, &SelectionProvider::new())
                .unwrap(),
            s
        );
    }
}
