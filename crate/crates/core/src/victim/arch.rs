//! Victim classifier architectures with a named-layer activation registry.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::nn::{BatchNorm2d, BnUpdate, Conv2d, Linear, ParamStore};
use crate::tensor::{Graph, NodeId};

/// Supported victim model structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// 4 conv blocks + GAP; the desk-scale default.
    TinyCnn,
    /// ResNet-18 with a 3×3 stem and no initial max-pool (32×32 variant).
    Resnet18Small,
    /// VGG-16 conv stack scaled for 32×32 inputs.
    Vgg16Small,
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tiny-cnn" => Ok(Architecture::TinyCnn),
            "resnet18-small" => Ok(Architecture::Resnet18Small),
            "vgg16-small" => Ok(Architecture::Vgg16Small),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::TinyCnn => write!(f, "tiny-cnn"),
            Architecture::Resnet18Small => write!(f, "resnet18-small"),
            Architecture::Vgg16Small => write!(f, "vgg16-small"),
        }
    }
}

/// Result of one forward pass: logits plus every registered activation.
pub struct Trace {
    pub logits: NodeId,
    /// `(layer name, node)` pairs; stable names across save/load.
    pub named: Vec<(String, NodeId)>,
}

impl Trace {
    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }
}

/// Name of the registered last convolutional layer (pruning, Grad-CAM).
pub const LAST_CONV: &str = "last_conv";
/// Name of the pooled feature vector feeding the classifier head.
pub const PENULTIMATE: &str = "penultimate";

pub(crate) enum VictimNet {
    Tiny(TinyCnn),
    Res(Resnet18Small),
    Vgg(Vgg16Small),
}

impl VictimNet {
    pub fn build(
        arch: Architecture,
        k: usize,
        shape: ImageShape,
        ps: &mut ParamStore<f32>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match arch {
            Architecture::TinyCnn => VictimNet::Tiny(TinyCnn::build(k, shape, ps, &mut rng)),
            Architecture::Resnet18Small => {
                VictimNet::Res(Resnet18Small::build(k, shape, ps, &mut rng))
            }
            Architecture::Vgg16Small => VictimNet::Vgg(Vgg16Small::build(k, shape, ps, &mut rng)),
        }
    }

    /// `prune_mask`, when set, zeroes channels of the registered last conv
    /// layer's activation.
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        ps: &ParamStore<f32>,
        x: NodeId,
        training: bool,
        bn: Option<&mut Vec<BnUpdate<f32>>>,
        prune_mask: Option<&[bool]>,
    ) -> Trace {
        match self {
            VictimNet::Tiny(t) => t.forward(g, ps, x, prune_mask),
            VictimNet::Res(r) => r.forward(g, ps, x, training, bn, prune_mask),
            VictimNet::Vgg(v) => v.forward(g, ps, x, prune_mask),
        }
    }

    /// Channel count of the registered last conv layer.
    pub fn last_conv_channels(&self) -> usize {
        match self {
            VictimNet::Tiny(t) => t.c4_channels,
            VictimNet::Res(_) => 512,
            VictimNet::Vgg(_) => 512,
        }
    }
}

fn apply_mask(g: &mut Graph<f32>, x: NodeId, mask: Option<&[bool]>) -> NodeId {
    let Some(mask) = mask else { return x };
    let c = g.value(x).shape()[1];
    assert_eq!(mask.len(), c, "prune mask length");
    let mut m = ndarray::ArrayD::<f32>::zeros(ndarray::IxDyn(&[1, c, 1, 1]));
    for (i, &keep) in mask.iter().enumerate() {
        m[[0, i, 0, 0]] = if keep { 1.0 } else { 0.0 };
    }
    let mn = g.constant(m);
    g.mul_bc(x, mn)
}

// ---------------------------------------------------------------------------

pub(crate) struct TinyCnn {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    conv4: Conv2d,
    fc: Linear,
    pub c4_channels: usize,
}

impl TinyCnn {
    fn build(k: usize, shape: ImageShape, ps: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Self {
        assert!(
            shape.h % 8 == 0 && shape.w % 8 == 0,
            "tiny-cnn needs dims divisible by 8"
        );
        let c4 = 64;
        TinyCnn {
            conv1: Conv2d::new(ps, "conv1", shape.c, 16, 3, 1, 1, rng),
            conv2: Conv2d::new(ps, "conv2", 16, 32, 3, 1, 1, rng),
            conv3: Conv2d::new(ps, "conv3", 32, 64, 3, 1, 1, rng),
            conv4: Conv2d::new(ps, "conv4", 64, c4, 3, 1, 1, rng),
            fc: Linear::new(ps, "fc", c4, k, rng),
            c4_channels: c4,
        }
    }

    fn forward(
        &self,
        g: &mut Graph<f32>,
        ps: &ParamStore<f32>,
        x: NodeId,
        prune_mask: Option<&[bool]>,
    ) -> Trace {
        let mut named = Vec::new();
        let a1 = self.conv1.forward(g, ps, x);
        let a1 = g.relu(a1);
        named.push(("conv1".to_string(), a1));
        let p1 = g.avg_pool2(a1);
        let a2 = self.conv2.forward(g, ps, p1);
        let a2 = g.relu(a2);
        named.push(("conv2".to_string(), a2));
        let p2 = g.avg_pool2(a2);
        let a3 = self.conv3.forward(g, ps, p2);
        let a3 = g.relu(a3);
        named.push(("conv3".to_string(), a3));
        let p3 = g.avg_pool2(a3);
        let a4 = self.conv4.forward(g, ps, p3);
        let a4 = g.relu(a4);
        let a4 = apply_mask(g, a4, prune_mask);
        named.push(("conv4".to_string(), a4));
        named.push((LAST_CONV.to_string(), a4));
        let feat = g.global_avg_pool(a4);
        named.push((PENULTIMATE.to_string(), feat));
        let logits = self.fc.forward(g, ps, feat);
        Trace { logits, named }
    }
}

// ---------------------------------------------------------------------------

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn build(
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        ps: &mut ParamStore<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv1 = Conv2d::new(ps, &format!("{name}.conv1"), in_c, out_c, 3, stride, 1, rng);
        let bn1 = BatchNorm2d::new(ps, &format!("{name}.bn1"), out_c);
        let conv2 = Conv2d::new(ps, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng);
        let bn2 = BatchNorm2d::new(ps, &format!("{name}.bn2"), out_c);
        let down = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(ps, &format!("{name}.down"), in_c, out_c, 1, stride, 0, rng),
                BatchNorm2d::new(ps, &format!("{name}.down_bn"), out_c),
            )
        });
        BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            down,
        }
    }

    fn forward(
        &self,
        g: &mut Graph<f32>,
        ps: &ParamStore<f32>,
        x: NodeId,
        training: bool,
        bn: &mut Option<&mut Vec<BnUpdate<f32>>>,
    ) -> NodeId {
        let y = self.conv1.forward(g, ps, x);
        let y = self.bn1.forward(g, ps, y, training, bn.as_deref_mut());
        let y = g.relu(y);
        let y = self.conv2.forward(g, ps, y);
        let y = self.bn2.forward(g, ps, y, training, bn.as_deref_mut());
        let short = match &self.down {
            Some((conv, bnorm)) => {
                let s = conv.forward(g, ps, x);
                bnorm.forward(g, ps, s, training, bn.as_deref_mut())
            }
            None => x,
        };
        let y = g.add(y, short);
        g.relu(y)
    }
}

pub(crate) struct Resnet18Small {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    fc: Linear,
}

impl Resnet18Small {
    fn build(k: usize, shape: ImageShape, ps: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Self {
        let stem = Conv2d::new(ps, "stem", shape.c, 64, 3, 1, 1, rng);
        let stem_bn = BatchNorm2d::new(ps, "stem_bn", 64);
        let mut blocks = Vec::new();
        let widths = [64usize, 128, 256, 512];
        let mut in_c = 64;
        for (stage, &w) in widths.iter().enumerate() {
            for b in 0..2 {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::build(
                    &format!("layer{}.{}", stage + 1, b),
                    in_c,
                    w,
                    stride,
                    ps,
                    rng,
                ));
                in_c = w;
            }
        }
        let fc = Linear::new(ps, "fc", 512, k, rng);
        Resnet18Small {
            stem,
            stem_bn,
            blocks,
            fc,
        }
    }

    fn forward(
        &self,
        g: &mut Graph<f32>,
        ps: &ParamStore<f32>,
        x: NodeId,
        training: bool,
        mut bn: Option<&mut Vec<BnUpdate<f32>>>,
        prune_mask: Option<&[bool]>,
    ) -> Trace {
        let mut named = Vec::new();
        let y = self.stem.forward(g, ps, x);
        let y = self.stem_bn.forward(g, ps, y, training, bn.as_deref_mut());
        let mut y = g.relu(y);
        named.push(("stem".to_string(), y));
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter().enumerate() {
            y = block.forward(g, ps, y, training, &mut bn);
            if i + 1 == n {
                y = apply_mask(g, y, prune_mask);
            }
            named.push((format!("layer{}.{}", i / 2 + 1, i % 2), y));
        }
        named.push((LAST_CONV.to_string(), y));
        let feat = g.global_avg_pool(y);
        named.push((PENULTIMATE.to_string(), feat));
        let logits = self.fc.forward(g, ps, feat);
        Trace { logits, named }
    }
}

// ---------------------------------------------------------------------------

pub(crate) struct Vgg16Small {
    convs: Vec<(Conv2d, bool)>, // (layer, pool after)
    fc1: Linear,
    fc2: Linear,
}

impl Vgg16Small {
    fn build(k: usize, shape: ImageShape, ps: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Self {
        assert!(
            shape.h % 32 == 0 && shape.w % 32 == 0,
            "vgg16-small needs dims divisible by 32"
        );
        // VGG-16 conv plan: channel width, pool after block
        let plan: [(usize, bool); 13] = [
            (64, false),
            (64, true),
            (128, false),
            (128, true),
            (256, false),
            (256, false),
            (256, true),
            (512, false),
            (512, false),
            (512, true),
            (512, false),
            (512, false),
            (512, true),
        ];
        let mut convs = Vec::new();
        let mut in_c = shape.c;
        for (i, (w, pool)) in plan.iter().enumerate() {
            convs.push((
                Conv2d::new(ps, &format!("conv{}", i + 1), in_c, *w, 3, 1, 1, rng),
                *pool,
            ));
            in_c = *w;
        }
        let fc1 = Linear::new(ps, "fc1", 512, 256, rng);
        let fc2 = Linear::new(ps, "fc2", 256, k, rng);
        Vgg16Small { convs, fc1, fc2 }
    }

    fn forward(
        &self,
        g: &mut Graph<f32>,
        ps: &ParamStore<f32>,
        x: NodeId,
        prune_mask: Option<&[bool]>,
    ) -> Trace {
        let mut named = Vec::new();
        let mut y = x;
        let n = self.convs.len();
        for (i, (conv, pool)) in self.convs.iter().enumerate() {
            y = conv.forward(g, ps, y);
            y = g.relu(y);
            if i + 1 == n {
                y = apply_mask(g, y, prune_mask);
            }
            named.push((format!("conv{}", i + 1), y));
            if *pool {
                y = g.max_pool2(y);
            }
        }
        let last = named.last().expect("vgg has convs").1;
        named.push((LAST_CONV.to_string(), last));
        let feat = g.global_avg_pool(y);
        named.push((PENULTIMATE.to_string(), feat));
        let h = self.fc1.forward(g, ps, feat);
        let h = g.relu(h);
        let logits = self.fc2.forward(g, ps, h);
        Trace { logits, named }
    }
}
