//! Networks: ordered layers, optional ReZero residual blocks, whole-network
//! forward/backward, and JSON checkpoints.
//!
//! A network is a sequence of segments. A segment is either a bare layer or
//! a residual block `x -> x + zeta * F(x)` whose scalar `zeta` starts at zero
//! (ReZero), making a fresh block the identity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neurons::{
    self, Activation, Layer, LayerCache, LayerGrads, LinearInit, NeuronKind, QuadraticParams,
};
use crate::tensor::{DenseVector, Rng};

/// Widths plus per-layer kinds for a plain chain network.
///
/// `widths = (d0, ..., dH)` describes H layers; layer `h` maps `d_{h-1}` to
/// `d_h`. The hidden activation applies to every layer except the last,
/// which is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub kinds: Vec<NeuronKind>,
    pub hidden_activation: Activation,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, kinds: Vec<NeuronKind>, hidden_activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("architecture needs at least one layer".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all widths must be at least 1".into()));
        }
        if kinds.len() != widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} widths need {} kinds, got {}",
                widths.len(),
                widths.len() - 1,
                kinds.len()
            )));
        }
        Ok(Self {
            widths,
            kinds,
            hidden_activation,
        })
    }

    /// Same kind for every layer.
    pub fn uniform(widths: Vec<usize>, kind: NeuronKind, hidden_activation: Activation) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        Self::new(widths, vec![kind; n], hidden_activation)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    /// Compact text form, e.g. `1-8-8-1`.
    pub fn label(&self) -> String {
        self.widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// One element of a network: a bare layer or a ReZero residual block.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Layer(Layer),
    Residual { layers: Vec<Layer>, zeta: f64 },
}

impl Segment {
    /// A residual block with `zeta = 0`, i.e. the identity at start.
    pub fn rezero_block(layers: Vec<Layer>) -> Self {
        Segment::Residual { layers, zeta: 0.0 }
    }

    fn in_dim(&self) -> usize {
        match self {
            Segment::Layer(l) => l.in_dim(),
            Segment::Residual { layers, .. } => layers[0].in_dim(),
        }
    }

    fn out_dim(&self) -> usize {
        match self {
            Segment::Layer(l) => l.out_dim(),
            // The block output is x + zeta*F(x), so its width is the input width.
            Segment::Residual { layers, .. } => layers[0].in_dim(),
        }
    }
}

/// A full network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub segments: Vec<Segment>,
}

impl Network {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let net = Self { segments };
        net.validate()?;
        Ok(net)
    }

    /// Plain chain of layers, no residual blocks.
    pub fn feedforward(layers: Vec<Layer>) -> Result<Self> {
        Self::new(layers.into_iter().map(Segment::Layer).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut width = self.segments[0].in_dim();
        for seg in &self.segments {
            if seg.in_dim() != width {
                return Err(Error::Dimension(format!(
                    "segment expects input width {}, got {}",
                    seg.in_dim(),
                    width
                )));
            }
            if let Segment::Residual { layers, .. } = seg {
                if layers.is_empty() {
                    return Err(Error::Config("residual block has no layers".into()));
                }
                let mut w = layers[0].in_dim();
                for l in layers {
                    if l.in_dim() != w {
                        return Err(Error::Dimension("block layer widths do not chain".into()));
                    }
                    l.params.validate()?;
                    w = l.out_dim();
                }
                if w != layers[0].in_dim() {
                    return Err(Error::Dimension(
                        "residual block must map back to its input width".into(),
                    ));
                }
            } else if let Segment::Layer(l) = seg {
                l.params.validate()?;
            }
            width = seg.out_dim();
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.segments[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.segments.last().unwrap().out_dim()
    }

    /// Layers in forward order, blocks flattened.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.segments.iter().flat_map(|s| match s {
            Segment::Layer(l) => std::slice::from_ref(l).iter(),
            Segment::Residual { layers, .. } => layers.iter(),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers().count()
    }

    /// Output only, caches discarded.
    pub fn eval(&self, x: &DenseVector) -> Result<DenseVector> {
        Ok(net_forward(self, x)?.0)
    }
}

/// Initialization mode for [`build`].
pub enum BuildInit<'a> {
    /// ReLinear state with `(Wr, br)` drawn from N(0, sigma^2).
    RelinearRandom(f64),
    /// ReLinear state with `(Wr, br)` copied from a conventional network of
    /// identical architecture.
    RelinearTransfer(&'a Network),
    /// Every owned parameter drawn from N(0, sigma^2).
    PlainRandom(f64),
}

/// Builds a plain chain network for `arch`.
pub fn build(arch: &Architecture, init: BuildInit, rng: &mut Rng) -> Result<Network> {
    let n_layers = arch.depth();
    if let BuildInit::RelinearTransfer(src) = &init {
        if src.layer_count() != n_layers {
            return Err(Error::Config(format!(
                "transfer source has {} layers, architecture wants {}",
                src.layer_count(),
                n_layers
            )));
        }
        for (h, l) in src.layers().enumerate() {
            if l.kind != NeuronKind::Conventional {
                return Err(Error::Config(format!(
                    "transfer source layer {h} is {:?}, must be conventional",
                    l.kind
                )));
            }
            if l.in_dim() != arch.widths[h] || l.out_dim() != arch.widths[h + 1] {
                return Err(Error::Config(format!(
                    "transfer source layer {h} is {}x{}, architecture wants {}x{}",
                    l.out_dim(),
                    l.in_dim(),
                    arch.widths[h + 1],
                    arch.widths[h]
                )));
            }
        }
    }

    let src_layers: Vec<&Layer> = match &init {
        BuildInit::RelinearTransfer(src) => src.layers().collect(),
        _ => Vec::new(),
    };
    let mut layers = Vec::with_capacity(n_layers);
    for h in 0..n_layers {
        let (i, o) = (arch.widths[h], arch.widths[h + 1]);
        let kind = arch.kinds[h];
        let params = match &init {
            BuildInit::RelinearRandom(sigma) => neurons::relinear_init(
                kind,
                LinearInit::Random {
                    out_dim: o,
                    in_dim: i,
                    sigma: *sigma,
                    rng,
                },
            )?,
            BuildInit::RelinearTransfer(_) => {
                let src = src_layers[h];
                neurons::relinear_init(
                    kind,
                    LinearInit::Transfer {
                        weights: &src.params.wr,
                        bias: &src.params.br,
                    },
                )?
            }
            BuildInit::PlainRandom(sigma) => QuadraticParams::plain_random(kind, o, i, *sigma, rng),
        };
        let activation = if h + 1 == n_layers {
            Activation::Linear
        } else {
            arch.hidden_activation
        };
        layers.push(Layer::new(kind, params, activation));
    }
    Network::feedforward(layers)
}

/// Per-segment caches produced by [`net_forward`].
#[derive(Debug, Clone)]
pub enum SegmentCache {
    Layer(LayerCache),
    Residual {
        inner: Vec<LayerCache>,
        f_out: DenseVector,
    },
}

/// Whole-network forward pass; returns the output and caches for
/// [`net_backward`].
pub fn net_forward(net: &Network, x: &DenseVector) -> Result<(DenseVector, Vec<SegmentCache>)> {
    if x.len() != net.in_dim() {
        return Err(Error::Dimension(format!(
            "network expects input of length {}, got {}",
            net.in_dim(),
            x.len()
        )));
    }
    let mut caches = Vec::with_capacity(net.segments.len());
    let mut u = x.clone();
    for seg in &net.segments {
        match seg {
            Segment::Layer(l) => {
                let (y, cache) = l.forward(&u)?;
                caches.push(SegmentCache::Layer(cache));
                u = y;
            }
            Segment::Residual { layers, zeta } => {
                let mut inner = Vec::with_capacity(layers.len());
                let mut v = u.clone();
                for l in layers {
                    let (y, cache) = l.forward(&v)?;
                    inner.push(cache);
                    v = y;
                }
                let out = u.add(&v.scale(*zeta))?;
                caches.push(SegmentCache::Residual { inner, f_out: v });
                u = out;
            }
        }
    }
    Ok((u, caches))
}

/// Gradients for every layer (flattened in forward order) and every residual
/// block's `zeta` (in forward block order).
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrads>,
    pub zetas: Vec<f64>,
}

impl NetworkGrads {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers()
            .map(|l| LayerGrads::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let zetas = net
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Residual { .. }))
            .map(|_| 0.0)
            .collect();
        Self { layers, zetas }
    }

    pub fn accumulate(&mut self, other: &NetworkGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() || self.zetas.len() != other.zetas.len() {
            return Err(Error::Dimension("gradient sets do not match".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.accumulate(b)?;
        }
        for (a, b) in self.zetas.iter_mut().zip(&other.zetas) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for g in &mut self.layers {
            g.scale_in_place(s);
        }
        for z in &mut self.zetas {
            *z *= s;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(|g| g.norm_sq()).sum::<f64>()
            + self.zetas.iter().map(|z| z * z).sum::<f64>()
    }

    /// Euclidean norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Whole-network backward pass. `loss_grad` is dL/d(output).
pub fn net_backward(
    net: &Network,
    caches: &[SegmentCache],
    loss_grad: &DenseVector,
) -> Result<(NetworkGrads, DenseVector)> {
    if caches.len() != net.segments.len() {
        return Err(Error::State(
            "cache count does not match segment count".into(),
        ));
    }
    let mut layer_grads_rev: Vec<LayerGrads> = Vec::with_capacity(net.layer_count());
    let mut zeta_grads_rev: Vec<f64> = Vec::new();
    let mut u = loss_grad.clone();
    for (seg, cache) in net.segments.iter().zip(caches).rev() {
        match (seg, cache) {
            (Segment::Layer(l), SegmentCache::Layer(c)) => {
                let (g, gx) = l.backward(c, &u)?;
                layer_grads_rev.push(g);
                u = gx;
            }
            (Segment::Residual { layers, zeta }, SegmentCache::Residual { inner, f_out }) => {
                zeta_grads_rev.push(u.dot(f_out)?);
                let mut v = u.scale(*zeta);
                for (l, c) in layers.iter().zip(inner).rev() {
                    let (g, gx) = l.backward(c, &v)?;
                    layer_grads_rev.push(g);
                    v = gx;
                }
                u = u.add(&v)?;
            }
            _ => {
                return Err(Error::State(
                    "cache kind does not match segment kind".into(),
                ));
            }
        }
    }
    layer_grads_rev.reverse();
    zeta_grads_rev.reverse();
    Ok((
        NetworkGrads {
            layers: layer_grads_rev,
            zetas: zeta_grads_rev,
        },
        u,
    ))
}

const CHECKPOINT_VERSION: u32 = 1;

/// A network plus the training state needed to reproduce or resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SegmentDesc {
    Layer,
    Block { len: usize },
}

#[derive(Serialize, Deserialize)]
struct ArchDesc {
    widths: Vec<usize>,
    segments: Vec<SegmentDesc>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    arch: ArchDesc,
    kinds: Vec<NeuronKind>,
    activations: Vec<Activation>,
    layers: Vec<QuadraticParams>,
    rezero: Vec<f64>,
    seed: u64,
    step: u64,
}

impl Checkpoint {
    pub fn new(network: Network, seed: u64, step: u64) -> Self {
        Self {
            network,
            seed,
            step,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut widths = vec![self.network.in_dim()];
        widths.extend(self.network.layers().map(|l| l.out_dim()));
        let mut segments = Vec::new();
        let mut rezero = Vec::new();
        for seg in &self.network.segments {
            match seg {
                Segment::Layer(_) => segments.push(SegmentDesc::Layer),
                Segment::Residual { layers, zeta } => {
                    segments.push(SegmentDesc::Block { len: layers.len() });
                    rezero.push(*zeta);
                }
            }
        }
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            arch: ArchDesc { widths, segments },
            kinds: self.network.layers().map(|l| l.kind).collect(),
            activations: self.network.layers().map(|l| l.activation).collect(),
            layers: self.network.layers().map(|l| l.params.clone()).collect(),
            rezero,
            seed: self.seed,
            step: self.step,
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Format(format!("checkpoint serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("checkpoint parse: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (this build reads {})",
                file.version, CHECKPOINT_VERSION
            )));
        }
        let n_layers = file.layers.len();
        if file.kinds.len() != n_layers || file.activations.len() != n_layers {
            return Err(Error::Format(
                "kinds/activations/layers lengths disagree".into(),
            ));
        }
        for p in &file.layers {
            p.validate()
                .map_err(|e| Error::Format(format!("checkpoint layer shapes: {e}")))?;
            let finite = p.wr.data.iter().chain(&p.wg.data).chain(&p.wb.data).all(|v| v.is_finite())
                && p.br.data.iter().chain(&p.bg.data).chain(&p.c.data).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Format("checkpoint contains non-finite values".into()));
            }
        }
        let mut layer_iter = file
            .kinds
            .into_iter()
            .zip(file.activations)
            .zip(file.layers)
            .map(|((kind, act), params)| Layer::new(kind, params, act));
        let mut rezero_iter = file.rezero.into_iter();
        let mut segments = Vec::with_capacity(file.arch.segments.len());
        for desc in file.arch.segments {
            match desc {
                SegmentDesc::Layer => {
                    let l = layer_iter
                        .next()
                        .ok_or_else(|| Error::Format("fewer layers than segments".into()))?;
                    segments.push(Segment::Layer(l));
                }
                SegmentDesc::Block { len } => {
                    let layers: Vec<Layer> = layer_iter.by_ref().take(len).collect();
                    if layers.len() != len {
                        return Err(Error::Format("fewer layers than segments".into()));
                    }
                    let zeta = rezero_iter
                        .next()
                        .ok_or_else(|| Error::Format("missing rezero scalar".into()))?;
                    segments.push(Segment::Residual { layers, zeta });
                }
            }
        }
        if layer_iter.next().is_some() {
            return Err(Error::Format("more layers than segments".into()));
        }
        let network =
            Network::new(segments).map_err(|e| Error::Format(format!("checkpoint network: {e}")))?;
        Ok(Checkpoint {
            network,
            seed: file.seed,
            step: file.step,
        })
    }
}

/// Saves a bare network (seed and step recorded as zero).
pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(net.clone(), 0, 0).save(path)
}

/// Loads a network, discarding training metadata.
pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    Ok(Checkpoint::load(path)?.network)
}
