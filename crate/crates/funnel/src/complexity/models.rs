//! Built-in model descriptions: ResNet-50/101 in the four activation
//! variants for complexity accounting, plus the small CNNs the training
//! harness actually runs.

use crate::activations::{ActivationKind, FunnelConfig};
use crate::ops::NormKind;

use super::{Combine, LayerKind, ModelSpec, PoolKind};

/// Which activation policy a ResNet description uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResNetVariant {
    Relu,
    PRelu,
    Swish,
    /// Funnel activation after each bottleneck's 3x3 convolution in the
    /// first three stages (the high-resolution ones); ReLU elsewhere.
    FRelu,
}

impl ResNetVariant {
    fn base_act(&self) -> ActivationKind {
        match self {
            ResNetVariant::Relu | ResNetVariant::FRelu => ActivationKind::Relu,
            ResNetVariant::PRelu => ActivationKind::PRelu,
            ResNetVariant::Swish => ActivationKind::Swish,
        }
    }

    fn site_act(&self, frelu_stage: bool) -> ActivationKind {
        match self {
            ResNetVariant::FRelu if frelu_stage => ActivationKind::FRelu(FunnelConfig::default()),
            _ => self.base_act(),
        }
    }

    fn suffix(&self) -> &'static str {
        match self {
            ResNetVariant::Relu => "relu",
            ResNetVariant::PRelu => "prelu",
            ResNetVariant::Swish => "swish",
            ResNetVariant::FRelu => "frelu",
        }
    }
}

/// Bottleneck ResNet at 224x224: stem, four stages, global average pool,
/// 1000-way classifier. Depth 50 or 101.
pub fn resnet(depth: usize, variant: ResNetVariant) -> ModelSpec {
    let blocks: [usize; 4] = match depth {
        50 => [3, 4, 6, 3],
        101 => [3, 4, 23, 3],
        other => panic!("unsupported resnet depth {other}"),
    };
    let mids = [64usize, 128, 256, 512];
    let outs = [256usize, 512, 1024, 2048];
    let strides = [1usize, 2, 2, 2];

    let mut m = ModelSpec::new(&format!("resnet{depth}-{}", variant.suffix()), (3, 224, 224));
    m.push("stem", LayerKind::Conv { c_out: 64, kh: 7, kw: 7, stride: 2, pad: (3, 3), bias: false });
    m.push("stem_bn", LayerKind::Norm { kind: NormKind::Batch, channels: None });
    m.push("stem_act", LayerKind::Activation(variant.base_act()));
    m.push("pool1", LayerKind::Pool { kind: PoolKind::Max, k: 3, stride: 2, pad: 1 });

    let mut c_in = 64usize;
    for s in 0..4 {
        // stages 2-4 of the network are indices 0-2 here; the last stage
        // keeps the base activation (7x7 feature maps carry little spatial
        // dependency)
        let frelu_stage = s < 3;
        for b in 0..blocks[s] {
            let stride = if b == 0 { strides[s] } else { 1 };
            let tag = |piece: &str| format!("s{}b{}_{piece}", s + 2, b + 1);
            m.push(&tag("blk"), LayerKind::BlockStart);
            m.push(
                &tag("c1"),
                LayerKind::Conv { c_out: mids[s], kh: 1, kw: 1, stride, pad: (0, 0), bias: false },
            );
            m.push(&tag("n1"), LayerKind::Norm { kind: NormKind::Batch, channels: None });
            m.push(&tag("a1"), LayerKind::Activation(variant.base_act()));
            m.push(
                &tag("c2"),
                LayerKind::Conv { c_out: mids[s], kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false },
            );
            m.push(&tag("n2"), LayerKind::Norm { kind: NormKind::Batch, channels: None });
            m.push(&tag("a2"), LayerKind::Activation(variant.site_act(frelu_stage)));
            m.push(
                &tag("c3"),
                LayerKind::Conv { c_out: outs[s], kh: 1, kw: 1, stride: 1, pad: (0, 0), bias: false },
            );
            m.push(&tag("n3"), LayerKind::Norm { kind: NormKind::Batch, channels: None });
            if b == 0 {
                m.push(&tag("sc"), LayerKind::Shortcut);
                m.push(
                    &tag("proj"),
                    LayerKind::Conv { c_out: outs[s], kh: 1, kw: 1, stride, pad: (0, 0), bias: false },
                );
                m.push(&tag("projn"), LayerKind::Norm { kind: NormKind::Batch, channels: None });
            }
            m.push(&tag("end"), LayerKind::BlockEnd { combine: Combine::Add });
            m.push(&tag("a3"), LayerKind::Activation(variant.base_act()));
            c_in = outs[s];
        }
    }
    let _ = c_in;
    m.push("gap", LayerKind::Pool { kind: PoolKind::GlobalAvg, k: 1, stride: 1, pad: 0 });
    m.push("fc", LayerKind::Linear { out: 1000 });
    m
}

/// Toy channel widths; small enough that a paired training sweep over many
/// seeds stays desk-scale.
pub const TOY_CHANNELS: [usize; 4] = [8, 16, 32, 32];

/// Four conv blocks (conv3x3 -> norm -> activation), global average pool,
/// linear head over 4 classes, for 1x32x32 inputs. The activation is the
/// only thing that varies between variants.
pub fn toy_cnn(name: &str, act: ActivationKind) -> ModelSpec {
    let strides = [1usize, 2, 2, 2];
    let mut m = ModelSpec::new(name, (1, 32, 32));
    for (i, (&c, &s)) in TOY_CHANNELS.iter().zip(&strides).enumerate() {
        let b = i + 1;
        m.push(
            &format!("c{b}"),
            LayerKind::Conv { c_out: c, kh: 3, kw: 3, stride: s, pad: (1, 1), bias: false },
        );
        m.push(&format!("n{b}"), LayerKind::Norm { kind: NormKind::Batch, channels: None });
        m.push(&format!("a{b}"), LayerKind::Activation(act.clone()));
    }
    m.push("gap", LayerKind::Pool { kind: PoolKind::GlobalAvg, k: 1, stride: 1, pad: 0 });
    m.push("fc", LayerKind::Linear { out: 4 });
    m
}

/// Linear softmax classifier on raw pixels; the task-difficulty baseline.
pub fn toy_linear() -> ModelSpec {
    let mut m = ModelSpec::new("toy-linear", (1, 32, 32));
    m.push("fc", LayerKind::Linear { out: 4 });
    m
}

/// Look up a built-in description by name.
pub fn builtin(name: &str) -> Option<ModelSpec> {
    let frelu = || ActivationKind::FRelu(FunnelConfig::default());
    Some(match name {
        "resnet50-relu" => resnet(50, ResNetVariant::Relu),
        "resnet50-prelu" => resnet(50, ResNetVariant::PRelu),
        "resnet50-swish" => resnet(50, ResNetVariant::Swish),
        "resnet50-frelu" => resnet(50, ResNetVariant::FRelu),
        "resnet101-relu" => resnet(101, ResNetVariant::Relu),
        "resnet101-prelu" => resnet(101, ResNetVariant::PRelu),
        "resnet101-swish" => resnet(101, ResNetVariant::Swish),
        "resnet101-frelu" => resnet(101, ResNetVariant::FRelu),
        "toy-cnn-relu" => toy_cnn("toy-cnn-relu", ActivationKind::Relu),
        "toy-cnn-prelu" => toy_cnn("toy-cnn-prelu", ActivationKind::PRelu),
        "toy-cnn-swish" => toy_cnn("toy-cnn-swish", ActivationKind::Swish),
        "toy-cnn-frelu" => toy_cnn("toy-cnn-frelu", frelu()),
        "toy-linear" => toy_linear(),
        _ => return None,
    })
}

/// Every built-in description.
pub fn builtin_models() -> Vec<ModelSpec> {
    [
        "resnet50-relu",
        "resnet50-prelu",
        "resnet50-swish",
        "resnet50-frelu",
        "resnet101-relu",
        "resnet101-prelu",
        "resnet101-swish",
        "resnet101-frelu",
        "toy-cnn-relu",
        "toy-cnn-prelu",
        "toy-cnn-swish",
        "toy-cnn-frelu",
        "toy-linear",
    ]
    .iter()
    .map(|n| builtin(n).expect("builtin"))
    .collect()
}
