//! Encoder registry.
//!
//! Three architectures are registered:
//!
//! * `desk_cnn_small` — four stride-2 3x3 conv+ReLU blocks (16/32/64/128
//!   channels) followed by global average pooling; embedding size 128.
//!   This is the workhorse for CPU-scale experiments.
//! * `desk_cnn_tiny`  — same shape at half width (8/16/32/64); embedding 64.
//! * `resnet50_shape` — a faithful ResNet-50 wiring (7x7 stem, max-pool,
//!   3/4/6/3 bottleneck stages) without batch normalisation; embedding
//!   2048. Provided for shape-level parity with large-scale setups; it is
//!   far too slow to train in the bundled test budget.
//!
//! Every architecture exposes named *taps*: post-activation feature maps
//! that the analysis code can read (activation extraction, CKA, Grad-CAM).

use super::layers::{
    gap_backward, gap_forward, maxpool_backward, maxpool_forward_t, relu4, relu4_backward,
    Conv2d, ConvTrace, MaxPoolTrace,
};
use super::ModelError;
use ndarray::{Array2, Array4, NdFloat};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture identifier, as written in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderArch {
    DeskCnnSmall,
    DeskCnnTiny,
    Resnet50Shape,
}

impl std::fmt::Display for EncoderArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EncoderArch::DeskCnnSmall => "desk_cnn_small",
            EncoderArch::DeskCnnTiny => "desk_cnn_tiny",
            EncoderArch::Resnet50Shape => "resnet50_shape",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EncoderArch {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk_cnn_small" => Ok(EncoderArch::DeskCnnSmall),
            "desk_cnn_tiny" => Ok(EncoderArch::DeskCnnTiny),
            "resnet50_shape" => Ok(EncoderArch::Resnet50Shape),
            other => Err(ModelError::UnknownArch {
                name: other.to_string(),
            }),
        }
    }
}

/// A buildable encoder description: architecture plus input tile size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub arch: EncoderArch,
    pub input_px: usize,
}

const DESK_SMALL_CHANNELS: [usize; 4] = [8, 16, 32, 128];
const DESK_TINY_CHANNELS: [usize; 4] = [8, 16, 32, 64];

impl EncoderSpec {
    pub fn new(arch: EncoderArch, input_px: usize) -> Result<Self, ModelError> {
        let min = match arch {
            EncoderArch::DeskCnnSmall | EncoderArch::DeskCnnTiny => 16,
            EncoderArch::Resnet50Shape => 32,
        };
        if input_px < min {
            return Err(ModelError::InputTooSmall {
                arch: arch.to_string(),
                got: input_px,
                min,
            });
        }
        Ok(Self { arch, input_px })
    }

    /// Length of the pooled embedding this encoder produces.
    pub fn embedding_dim(&self) -> usize {
        match self.arch {
            EncoderArch::DeskCnnSmall => 128,
            EncoderArch::DeskCnnTiny => 64,
            EncoderArch::Resnet50Shape => 2048,
        }
    }

    /// Named analysis taps with their channel counts, in network order.
    pub fn taps(&self) -> Vec<(String, usize)> {
        match self.arch {
            EncoderArch::DeskCnnSmall => DESK_SMALL_CHANNELS
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("conv{}", i + 1), c))
                .collect(),
            EncoderArch::DeskCnnTiny => DESK_TINY_CHANNELS
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("conv{}", i + 1), c))
                .collect(),
            EncoderArch::Resnet50Shape => vec![
                ("stem".to_string(), 64),
                ("stage1".to_string(), 256),
                ("stage2".to_string(), 512),
                ("stage3".to_string(), 1024),
                ("stage4".to_string(), 2048),
            ],
        }
    }

    /// Instantiate with freshly initialised parameters drawn from `rng`.
    pub fn build<F: NdFloat, R: Rng>(&self, rng: &mut R) -> EncoderNet<F> {
        match self.arch {
            EncoderArch::DeskCnnSmall => {
                EncoderNet::Desk(DeskCnn::new(rng, *self, &DESK_SMALL_CHANNELS))
            }
            EncoderArch::DeskCnnTiny => {
                EncoderNet::Desk(DeskCnn::new(rng, *self, &DESK_TINY_CHANNELS))
            }
            EncoderArch::Resnet50Shape => EncoderNet::Resnet(ResNetShape::new(rng, *self)),
        }
    }
}

// ── Desk CNN ─────────────────────────────────────────────────────────────

/// Stack of stride-2 conv+ReLU blocks with a global-average-pool head.
pub struct DeskCnn<F> {
    spec: EncoderSpec,
    convs: Vec<Conv2d<F>>,
}

pub struct DeskTrace<F> {
    convs: Vec<ConvTrace<F>>,
    relu_outs: Vec<Array4<F>>,
    final_hw: (usize, usize),
}

impl<F: NdFloat> DeskCnn<F> {
    fn new<R: Rng>(rng: &mut R, spec: EncoderSpec, channels: &[usize]) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for &out_ch in channels {
            convs.push(Conv2d::new(rng, in_ch, out_ch, 3, 2, 1));
            in_ch = out_ch;
        }
        Self { spec, convs }
    }

    fn run(
        &self,
        x: &Array4<F>,
        mut on_block: Option<&mut dyn FnMut(usize, &Array4<F>)>,
        mut traces: Option<&mut DeskTrace<F>>,
    ) -> Array2<F> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = if let Some(tr) = traces.as_deref_mut() {
                let (out, t) = conv.forward_t(&h);
                tr.convs.push(t);
                out
            } else {
                conv.forward(&h)
            };
            h = relu4(&pre);
            if let Some(f) = on_block.as_deref_mut() {
                f(i, &h);
            }
            if let Some(tr) = traces.as_deref_mut() {
                tr.relu_outs.push(h.clone());
            }
        }
        if let Some(tr) = traces.as_deref_mut() {
            tr.final_hw = (h.dim().2, h.dim().3);
        }
        gap_forward(&h)
    }

    pub fn forward(&self, x: &Array4<F>) -> Array2<F> {
        self.run(x, None, None)
    }

    pub fn forward_t(&self, x: &Array4<F>) -> (Array2<F>, DeskTrace<F>) {
        let mut trace = DeskTrace {
            convs: Vec::new(),
            relu_outs: Vec::new(),
            final_hw: (0, 0),
        };
        let emb = self.run(x, None, Some(&mut trace));
        (emb, trace)
    }

    pub fn forward_taps(&self, x: &Array4<F>) -> (Array2<F>, Vec<(String, Array4<F>)>) {
        let mut taps = Vec::new();
        let emb = self.run(
            x,
            Some(&mut |i, h: &Array4<F>| taps.push((format!("conv{}", i + 1), h.clone()))),
            None,
        );
        (emb, taps)
    }

    /// Backward pass; accumulates parameter gradients and optionally
    /// records the gradient at each tap (post-activation feature map).
    pub fn backward(
        &mut self,
        trace: &DeskTrace<F>,
        demb: &Array2<F>,
        mut tap_grads: Option<&mut Vec<(String, Array4<F>)>>,
    ) -> Array4<F> {
        let mut dh = gap_backward(demb, trace.final_hw);
        for i in (0..self.convs.len()).rev() {
            if let Some(tg) = tap_grads.as_deref_mut() {
                tg.push((format!("conv{}", i + 1), dh.clone()));
            }
            let dpre = relu4_backward(&trace.relu_outs[i], &dh);
            dh = self.convs[i].backward(&trace.convs[i], &dpre);
        }
        if let Some(tg) = tap_grads.as_deref_mut() {
            tg.reverse();
        }
        dh
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}conv{}", i + 1), f);
        }
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit_ro(&format!("{prefix}conv{}", i + 1), f);
        }
    }
}

// ── ResNet-50 shape ──────────────────────────────────────────────────────

struct Bottleneck<F> {
    c1: Conv2d<F>,
    c2: Conv2d<F>,
    c3: Conv2d<F>,
    proj: Option<Conv2d<F>>,
}

struct BottleneckTrace<F> {
    t1: ConvTrace<F>,
    t2: ConvTrace<F>,
    t3: ConvTrace<F>,
    tproj: Option<ConvTrace<F>>,
    r1: Array4<F>,
    r2: Array4<F>,
    out: Array4<F>,
}

impl<F: NdFloat> Bottleneck<F> {
    fn new<R: Rng>(rng: &mut R, in_ch: usize, mid: usize, out: usize, stride: usize) -> Self {
        let proj = if stride != 1 || in_ch != out {
            Some(Conv2d::new(rng, in_ch, out, 1, stride, 0))
        } else {
            None
        };
        Self {
            c1: Conv2d::new(rng, in_ch, mid, 1, 1, 0),
            c2: Conv2d::new(rng, mid, mid, 3, stride, 1),
            c3: Conv2d::new(rng, mid, out, 1, 1, 0),
            proj,
        }
    }

    fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let h = relu4(&self.c1.forward(x));
        let h = relu4(&self.c2.forward(&h));
        let mut h = self.c3.forward(&h);
        match &self.proj {
            Some(p) => h += &p.forward(x),
            None => h += x,
        }
        relu4(&h)
    }

    fn forward_t(&self, x: &Array4<F>) -> (Array4<F>, BottleneckTrace<F>) {
        let (p1, t1) = self.c1.forward_t(x);
        let r1 = relu4(&p1);
        let (p2, t2) = self.c2.forward_t(&r1);
        let r2 = relu4(&p2);
        let (mut h, t3) = self.c3.forward_t(&r2);
        let tproj = match &self.proj {
            Some(p) => {
                let (s, tp) = p.forward_t(x);
                h += &s;
                Some(tp)
            }
            None => {
                h += x;
                None
            }
        };
        let out = relu4(&h);
        (
            out.clone(),
            BottleneckTrace {
                t1,
                t2,
                t3,
                tproj,
                r1,
                r2,
                out,
            },
        )
    }

    fn backward(&mut self, tr: &BottleneckTrace<F>, dy: &Array4<F>) -> Array4<F> {
        let dsum = relu4_backward(&tr.out, dy);
        let dr2 = self.c3.backward(&tr.t3, &dsum);
        let dp2 = relu4_backward(&tr.r2, &dr2);
        let dr1 = self.c2.backward(&tr.t2, &dp2);
        let dp1 = relu4_backward(&tr.r1, &dr1);
        let mut dx = self.c1.backward(&tr.t1, &dp1);
        match (&mut self.proj, &tr.tproj) {
            (Some(p), Some(tp)) => dx += &p.backward(tp, &dsum),
            (None, None) => dx += &dsum,
            _ => unreachable!("trace shape matches module shape"),
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        self.c1.visit(&format!("{prefix}.c1"), f);
        self.c2.visit(&format!("{prefix}.c2"), f);
        self.c3.visit(&format!("{prefix}.c3"), f);
        if let Some(p) = &mut self.proj {
            p.visit(&format!("{prefix}.proj"), f);
        }
    }

    fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        self.c1.visit_ro(&format!("{prefix}.c1"), f);
        self.c2.visit_ro(&format!("{prefix}.c2"), f);
        self.c3.visit_ro(&format!("{prefix}.c3"), f);
        if let Some(p) = &self.proj {
            p.visit_ro(&format!("{prefix}.proj"), f);
        }
    }
}

/// ResNet-50 wiring without batch norm: stem 7x7/2 + max-pool 3x3/2, then
/// bottleneck stages of 3/4/6/3 blocks (256/512/1024/2048 output channels).
pub struct ResNetShape<F> {
    spec: EncoderSpec,
    stem: Conv2d<F>,
    blocks: Vec<Bottleneck<F>>,
    /// Index of the last block of each stage, for taps.
    stage_last: [usize; 4],
}

pub struct ResnetTrace<F> {
    stem: ConvTrace<F>,
    stem_relu: Array4<F>,
    pool: MaxPoolTrace,
    blocks: Vec<BottleneckTrace<F>>,
    final_hw: (usize, usize),
}

impl<F: NdFloat> ResNetShape<F> {
    fn new<R: Rng>(rng: &mut R, spec: EncoderSpec) -> Self {
        let stem = Conv2d::new(rng, 3, 64, 7, 2, 3);
        let mut blocks = Vec::new();
        let mut stage_last = [0usize; 4];
        let mut in_ch = 64;
        let counts = [3usize, 4, 6, 3];
        for (si, &count) in counts.iter().enumerate() {
            let mid = 64 << si;
            let out = 256 << si;
            for bi in 0..count {
                let stride = if bi == 0 && si > 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(rng, in_ch, mid, out, stride));
                in_ch = out;
            }
            stage_last[si] = blocks.len() - 1;
        }
        Self {
            spec,
            stem,
            blocks,
            stage_last,
        }
    }

    fn tap_name_for_block(&self, idx: usize) -> Option<String> {
        self.stage_last
            .iter()
            .position(|&last| last == idx)
            .map(|si| format!("stage{}", si + 1))
    }

    pub fn forward(&self, x: &Array4<F>) -> Array2<F> {
        let h = relu4(&self.stem.forward(x));
        let (mut h, _) = maxpool_forward_t(&h, 3, 2, 1);
        for b in &self.blocks {
            h = b.forward(&h);
        }
        gap_forward(&h)
    }

    pub fn forward_t(&self, x: &Array4<F>) -> (Array2<F>, ResnetTrace<F>) {
        let (pre, stem_t) = self.stem.forward_t(x);
        let stem_relu = relu4(&pre);
        let (mut h, pool) = maxpool_forward_t(&stem_relu, 3, 2, 1);
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let (out, t) = b.forward_t(&h);
            h = out;
            blocks.push(t);
        }
        let final_hw = (h.dim().2, h.dim().3);
        let emb = gap_forward(&h);
        (
            emb,
            ResnetTrace {
                stem: stem_t,
                stem_relu,
                pool,
                blocks,
                final_hw,
            },
        )
    }

    pub fn forward_taps(&self, x: &Array4<F>) -> (Array2<F>, Vec<(String, Array4<F>)>) {
        let mut taps = Vec::new();
        let h = relu4(&self.stem.forward(x));
        taps.push(("stem".to_string(), h.clone()));
        let (mut h, _) = maxpool_forward_t(&h, 3, 2, 1);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&h);
            if let Some(name) = self.tap_name_for_block(i) {
                taps.push((name, h.clone()));
            }
        }
        (gap_forward(&h), taps)
    }

    pub fn backward(
        &mut self,
        trace: &ResnetTrace<F>,
        demb: &Array2<F>,
        mut tap_grads: Option<&mut Vec<(String, Array4<F>)>>,
    ) -> Array4<F> {
        let mut dh = gap_backward(demb, trace.final_hw);
        for i in (0..self.blocks.len()).rev() {
            if let (Some(tg), Some(name)) = (tap_grads.as_deref_mut(), self.tap_name_for_block(i))
            {
                tg.push((name, dh.clone()));
            }
            dh = self.blocks[i].backward(&trace.blocks[i], &dh);
        }
        let dstem_relu = maxpool_backward(&trace.pool, &dh);
        if let Some(tg) = tap_grads.as_deref_mut() {
            tg.push(("stem".to_string(), dstem_relu.clone()));
            tg.reverse();
        }
        let dpre = relu4_backward(&trace.stem_relu, &dstem_relu);
        self.stem.backward(&trace.stem, &dpre)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        self.stem.visit(&format!("{prefix}stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&format!("{prefix}block{i}"), f);
        }
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        self.stem.visit_ro(&format!("{prefix}stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_ro(&format!("{prefix}block{i}"), f);
        }
    }
}

// ── Uniform front-end ────────────────────────────────────────────────────

/// Any registered encoder, dispatching statically by architecture family.
pub enum EncoderNet<F> {
    Desk(DeskCnn<F>),
    Resnet(ResNetShape<F>),
}

/// Opaque per-pass cache; hand the same value back to [`EncoderNet::backward`].
pub enum EncoderTrace<F> {
    Desk(DeskTrace<F>),
    Resnet(ResnetTrace<F>),
}

impl<F: NdFloat> EncoderNet<F> {
    pub fn spec(&self) -> EncoderSpec {
        match self {
            EncoderNet::Desk(d) => d.spec,
            EncoderNet::Resnet(r) => r.spec,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec().embedding_dim()
    }

    pub fn forward(&self, x: &Array4<F>) -> Array2<F> {
        match self {
            EncoderNet::Desk(d) => d.forward(x),
            EncoderNet::Resnet(r) => r.forward(x),
        }
    }

    pub fn forward_t(&self, x: &Array4<F>) -> (Array2<F>, EncoderTrace<F>) {
        match self {
            EncoderNet::Desk(d) => {
                let (e, t) = d.forward_t(x);
                (e, EncoderTrace::Desk(t))
            }
            EncoderNet::Resnet(r) => {
                let (e, t) = r.forward_t(x);
                (e, EncoderTrace::Resnet(t))
            }
        }
    }

    /// Inference pass that also returns each tap's post-activation map.
    pub fn forward_taps(&self, x: &Array4<F>) -> (Array2<F>, Vec<(String, Array4<F>)>) {
        match self {
            EncoderNet::Desk(d) => d.forward_taps(x),
            EncoderNet::Resnet(r) => r.forward_taps(x),
        }
    }

    pub fn backward(&mut self, trace: &EncoderTrace<F>, demb: &Array2<F>) -> Array4<F> {
        self.backward_taps(trace, demb, None)
    }

    /// Backward pass; when `tap_grads` is given, also records dLoss/dTap
    /// for every tap, in network order.
    pub fn backward_taps(
        &mut self,
        trace: &EncoderTrace<F>,
        demb: &Array2<F>,
        tap_grads: Option<&mut Vec<(String, Array4<F>)>>,
    ) -> Array4<F> {
        match (self, trace) {
            (EncoderNet::Desk(d), EncoderTrace::Desk(t)) => d.backward(t, demb, tap_grads),
            (EncoderNet::Resnet(r), EncoderTrace::Resnet(t)) => r.backward(t, demb, tap_grads),
            _ => panic!("trace does not belong to this encoder"),
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        match self {
            EncoderNet::Desk(d) => d.visit(prefix, f),
            EncoderNet::Resnet(r) => r.visit(prefix, f),
        }
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        match self {
            EncoderNet::Desk(d) => d.visit_ro(prefix, f),
            EncoderNet::Resnet(r) => r.visit_ro(prefix, f),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_ro("", &mut |_, v| n += v.len());
        n
    }
}
