//! The HOI head: scene embedding, encoder, human/object/interaction decoders
//! and the four prediction heads.
//!
//! Human and object decoders are plain detection decoders driven by their own
//! learnable queries. The interaction decoder is linked to them according to a
//! [`LinkMode`]; with [`LinkMode::HumanGuide`] the human features act as its
//! positional queries in every layer while object features enter only through
//! the first self-attention value.

mod positional;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use positional::sine_encoding;

use crate::attention::{
    decoder_layer_forward, encoder_forward, linear, DecoderLayerParams, DecoderLayerTrace,
    EncoderLayerParams, SelfAttentionInputs,
};
use crate::error::{Error, Result};
use crate::geometry::Cxcywh;
use crate::params::{Binding, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Number of query slots `N`.
    pub queries: usize,
    pub object_classes: usize,
    pub actions: usize,
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Default for ModelConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            queries: 8,
            object_classes: 4,
            actions: 4,
            channels: 8,
            grid_h: 8,
            grid_w: 8,
        }
    }
}

impl ModelConfig {
    /// Full scale: d = 256, 8 heads, 6 layers everywhere, 100 queries.
    pub fn full_scale() -> Self {
        ModelConfig {
            dim: 256,
            heads: 8,
            encoder_layers: 6,
            decoder_layers: 6,
            queries: 100,
            ..Self::default()
        }
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("decoder_layers", self.decoder_layers),
            ("queries", self.queries),
            ("object_classes", self.object_classes),
            ("actions", self.actions),
            ("channels", self.channels),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !self.dim.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "dim {} must be divisible by 4 for the 2-D positional encoding",
                self.dim
            )));
        }
        Ok(())
    }
}

/// How the interaction decoder is fed by the human and object decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkMode {
    /// Human features are the queries of every layer; the first self-attention
    /// attends with `H + O` and aggregates `O`.
    HumanGuide,
    /// `H + O` serves as the queries of every layer.
    AdditionGuide,
    /// Separate learnable queries; `H + O` is the first layer's input.
    RandomGuide,
    /// Human guide with the roles of the two feature sets exchanged.
    ObjectGuide,
}

impl LinkMode {
    pub const ALL: [LinkMode; 4] = [
        LinkMode::HumanGuide,
        LinkMode::AdditionGuide,
        LinkMode::RandomGuide,
        LinkMode::ObjectGuide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkMode::HumanGuide => "human_guide",
            LinkMode::AdditionGuide => "addition_guide",
            LinkMode::RandomGuide => "random_guide",
            LinkMode::ObjectGuide => "object_guide",
        }
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown link mode {s:?}")))
    }
}

/// Which decoder output is cut off from interaction-loss gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientRoute {
    /// Everything live.
    #[default]
    Open,
    /// Object features enter the interaction decoder through a stop-gradient.
    StopObject,
    /// Human features enter the interaction decoder through a stop-gradient.
    StopHuman,
}

impl GradientRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientRoute::Open => "open",
            GradientRoute::StopObject => "stop_object",
            GradientRoute::StopHuman => "stop_human",
        }
    }

    pub fn from_sg(sg_enabled: bool) -> Self {
        if sg_enabled {
            GradientRoute::StopObject
        } else {
            GradientRoute::Open
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineHead {
    pub w: ParamId,
    pub b: ParamId,
}

/// Where each learned tensor of the model lives in its [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct HodnLayout {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub encoder: Vec<EncoderLayerParams>,
    pub human_decoder: Vec<DecoderLayerParams>,
    pub object_decoder: Vec<DecoderLayerParams>,
    pub interaction_decoder: Vec<DecoderLayerParams>,
    pub human_queries: ParamId,
    pub object_queries: ParamId,
    /// Present only for [`LinkMode::RandomGuide`].
    pub random_queries: Option<ParamId>,
    pub human_box: BoxHead,
    pub object_box: BoxHead,
    pub object_class: AffineHead,
    pub interaction: AffineHead,
}

impl HodnLayout {
    /// Parameters updated only by the object detection losses when the
    /// stop-gradient route is active: object decoder weights and object queries.
    pub fn object_side(&self) -> Vec<ParamId> {
        let mut ids = decoder_ids(&self.object_decoder);
        ids.push(self.object_queries);
        ids
    }

    /// Human decoder weights and human queries.
    pub fn human_side(&self) -> Vec<ParamId> {
        let mut ids = decoder_ids(&self.human_decoder);
        ids.push(self.human_queries);
        ids
    }
}

fn decoder_ids(layers: &[DecoderLayerParams]) -> Vec<ParamId> {
    let mut ids = Vec::new();
    for l in layers {
        for m in [&l.self_attn, &l.cross_attn] {
            ids.extend([m.wq, m.bq, m.wk, m.wv, m.wo]);
        }
        ids.extend([l.ffn.w1, l.ffn.b1, l.ffn.w2, l.ffn.b2]);
        for n in [&l.norm1, &l.norm2, &l.norm3] {
            ids.extend([n.gain, n.bias]);
        }
    }
    ids
}

/// Model weights together with the configuration and layout they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct HodnParams<S> {
    pub config: ModelConfig,
    pub mode: LinkMode,
    pub layout: HodnLayout,
    pub store: ParamSet<S>,
}

const QUERY_STD: f64 = 0.02;

impl<S: Scalar> HodnParams<S> {
    /// Seeded initialization. Weights are uniform in `±1/sqrt(fan_in)`,
    /// queries normal with std 0.02, and the object queries start as an exact
    /// copy of the human queries so that same-index slots form a pair.
    pub fn init(config: &ModelConfig, mode: LinkMode, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer { rng: &mut rng };
        let mut store = ParamSet::new();
        let (d, h, n) = (config.dim, config.heads, config.queries);
        let c = config.channels;

        let embed_w = store.push("embed.w", init.fan_in_uniform(&[c, d], c));
        let embed_b = store.push("embed.b", init.fan_in_uniform(&[d], c));
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayerParams::init(&mut store, &mut init, &format!("encoder.{i}"), d, h))
            .collect::<Result<Vec<_>>>()?;
        let mut decoder = |name: &str, store: &mut ParamSet<S>| {
            (0..config.decoder_layers)
                .map(|i| DecoderLayerParams::init(store, &mut init, &format!("{name}.{i}"), d, h))
                .collect::<Result<Vec<_>>>()
        };
        let human_decoder = decoder("human_decoder", &mut store)?;
        let object_decoder = decoder("object_decoder", &mut store)?;
        let interaction_decoder = decoder("interaction_decoder", &mut store)?;

        let q = init.normal(&[n, d], QUERY_STD)?;
        let human_queries = store.push("queries.human", q.clone());
        let object_queries = store.push("queries.object", q);

        let mut box_head = |name: &str, store: &mut ParamSet<S>| BoxHead {
            w1: store.push(format!("{name}.w1"), init.fan_in_uniform(&[d, d], d)),
            b1: store.push(format!("{name}.b1"), init.fan_in_uniform(&[d], d)),
            w2: store.push(format!("{name}.w2"), init.fan_in_uniform(&[d, d], d)),
            b2: store.push(format!("{name}.b2"), init.fan_in_uniform(&[d], d)),
            w3: store.push(format!("{name}.w3"), init.fan_in_uniform(&[d, 4], d)),
            b3: store.push(format!("{name}.b3"), init.fan_in_uniform(&[4], d)),
        };
        let human_box = box_head("heads.human_box", &mut store);
        let object_box = box_head("heads.object_box", &mut store);
        let k = config.object_classes + 1;
        let object_class = AffineHead {
            w: store.push("heads.object_class.w", init.fan_in_uniform(&[d, k], d)),
            b: store.push("heads.object_class.b", init.fan_in_uniform(&[k], d)),
        };
        let a = config.actions;
        let interaction = AffineHead {
            w: store.push("heads.interaction.w", init.fan_in_uniform(&[d, a], d)),
            b: store.push("heads.interaction.b", init.fan_in_uniform(&[a], d)),
        };
        // Last, so every other tensor is identical across link modes for one seed.
        let random_queries = match mode {
            LinkMode::RandomGuide => Some(store.push("queries.random", init.normal(&[n, d], QUERY_STD)?)),
            _ => None,
        };

        Ok(HodnParams {
            config: config.clone(),
            mode,
            layout: HodnLayout {
                embed_w,
                embed_b,
                encoder,
                human_decoder,
                object_decoder,
                interaction_decoder,
                human_queries,
                object_queries,
                random_queries,
                human_box,
                object_box,
                object_class,
                interaction,
            },
            store,
        })
    }

    /// The same model with every weight converted to `T`.
    pub fn cast<T: Scalar>(&self) -> HodnParams<T> {
        HodnParams {
            config: self.config.clone(),
            mode: self.mode,
            layout: self.layout.clone(),
            store: self.store.cast(),
        }
    }

    /// Replaces the weights with `store`, which must match this layout name for
    /// name and shape for shape.
    pub fn with_store(mut self, store: ParamSet<S>) -> Result<Self> {
        let mut offending = Vec::new();
        for (id, name, t) in self.store.iter() {
            match store.find(name) {
                Some(other) if other == id && store.get(other).shape() == t.shape() => {}
                _ => offending.push(name.to_string()),
            }
        }
        for name in store.names() {
            if self.store.find(name).is_none() {
                offending.push(name.clone());
            }
        }
        if !offending.is_empty() {
            return Err(Error::Compatibility { names: offending });
        }
        self.store = store;
        Ok(self)
    }
}

/// Projects a `[C × H × W]` feature grid to `[H·W × d]` tokens and returns
/// them together with the grid's positional encoding.
pub fn embed_scene<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    params: &HodnParams<S>,
    grid: &Tensor<S>,
) -> Result<(Var, Var)> {
    let cfg = &params.config;
    let want = [cfg.channels, cfg.grid_h, cfg.grid_w];
    if grid.shape() != want {
        return Err(Error::dim("embed_scene", grid.shape(), &want));
    }
    let l = cfg.tokens();
    let cells = g.constant(grid.clone().reshape(vec![cfg.channels, l])?);
    let tokens = g.transpose(cells)?;
    let z_src = linear(
        g,
        tokens,
        b.var(params.layout.embed_w),
        Some(b.var(params.layout.embed_b)),
    )?;
    let pos = g.constant(sine_encoding(cfg.grid_h, cfg.grid_w, cfg.dim)?);
    Ok((z_src, pos))
}

/// Vanilla decoder stack: the first layer input is zero (so its
/// self-attention is skipped) and `queries` are the positional queries of
/// every layer.
pub fn detection_decoder_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    layers: &[DecoderLayerParams],
    memory: Var,
    memory_pos: Var,
    queries: Var,
) -> Result<Vec<DecoderLayerTrace>> {
    if layers.is_empty() {
        return Err(Error::Config("decoder needs at least one layer".into()));
    }
    let shape = g.value(queries).shape().to_vec();
    let mut prev = g.constant(Tensor::zeros(&shape));
    let mut traces = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let inputs = if i == 0 {
            SelfAttentionInputs::skipped()
        } else {
            SelfAttentionInputs::standard()
        };
        let t = decoder_layer_forward(g, b, layer, prev, queries, memory, memory_pos, inputs)?;
        prev = t.output;
        traces.push(t);
    }
    Ok(traces)
}

/// Runs the interaction decoder on the paired human/object features.
#[allow(clippy::too_many_arguments)]
pub fn interaction_decoder_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    layers: &[DecoderLayerParams],
    memory: Var,
    memory_pos: Var,
    human: Var,
    object: Var,
    mode: LinkMode,
    random_queries: Option<Var>,
) -> Result<Vec<DecoderLayerTrace>> {
    if layers.is_empty() {
        return Err(Error::Config("decoder needs at least one layer".into()));
    }
    let hs = g.value(human).shape().to_vec();
    if g.value(object).shape() != hs.as_slice() {
        return Err(Error::dim("interaction_decoder_forward", &hs, g.value(object).shape()));
    }
    // (first-layer input, first-layer self-attention inputs, positional queries)
    let (first, first_inputs, query_pos) = match mode {
        LinkMode::HumanGuide => {
            let pair = g.add(human, object)?;
            (pair, SelfAttentionInputs::linked(pair, object), human)
        }
        LinkMode::ObjectGuide => {
            return interaction_decoder_forward(
                g,
                b,
                layers,
                memory,
                memory_pos,
                object,
                human,
                LinkMode::HumanGuide,
                random_queries,
            );
        }
        LinkMode::AdditionGuide => {
            let pair = g.add(human, object)?;
            (pair, SelfAttentionInputs::linked(pair, object), pair)
        }
        LinkMode::RandomGuide => {
            let q = random_queries
                .ok_or_else(|| Error::Config("random_guide needs random queries".into()))?;
            let pair = g.add(human, object)?;
            (pair, SelfAttentionInputs::standard(), q)
        }
    };
    let mut traces = Vec::with_capacity(layers.len());
    let mut prev = first;
    for (i, layer) in layers.iter().enumerate() {
        let inputs = if i == 0 { first_inputs } else { SelfAttentionInputs::standard() };
        let t = decoder_layer_forward(g, b, layer, prev, query_pos, memory, memory_pos, inputs)?;
        prev = t.output;
        traces.push(t);
    }
    Ok(traces)
}

/// Raw head outputs for all `N` slots.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[N × 4]` normalized `(cx, cy, w, h)`.
    pub human_boxes: Var,
    pub object_boxes: Var,
    /// `[N × (K_obj + 1)]`; the last column is "no object".
    pub object_logits: Var,
    /// `[N × K_act]` independent action logits.
    pub interaction_logits: Var,
}

fn box_head_forward<S: Scalar>(g: &mut Graph<S>, b: &Binding, p: &BoxHead, x: Var) -> Result<Var> {
    let h = linear(g, x, b.var(p.w1), Some(b.var(p.b1)))?;
    let h = g.relu(h);
    let h = linear(g, h, b.var(p.w2), Some(b.var(p.b2)))?;
    let h = g.relu(h);
    let h = linear(g, h, b.var(p.w3), Some(b.var(p.b3)))?;
    Ok(g.sigmoid(h))
}

pub fn human_box_head<S: Scalar>(g: &mut Graph<S>, b: &Binding, l: &HodnLayout, human: Var) -> Result<Var> {
    box_head_forward(g, b, &l.human_box, human)
}

/// Object box and object class heads.
pub fn object_heads<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    l: &HodnLayout,
    object: Var,
) -> Result<(Var, Var)> {
    let boxes = box_head_forward(g, b, &l.object_box, object)?;
    let logits = linear(g, object, b.var(l.object_class.w), Some(b.var(l.object_class.b)))?;
    Ok((boxes, logits))
}

pub fn prediction_heads<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    l: &HodnLayout,
    human: Var,
    object: Var,
    interaction: Var,
) -> Result<HeadOutputs> {
    let human_boxes = human_box_head(g, b, l, human)?;
    let (object_boxes, object_logits) = object_heads(g, b, l, object)?;
    let interaction_logits =
        linear(g, interaction, b.var(l.interaction.w), Some(b.var(l.interaction.b)))?;
    Ok(HeadOutputs {
        human_boxes,
        object_boxes,
        object_logits,
        interaction_logits,
    })
}

/// One query slot's decoded prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct HoiPrediction<S> {
    pub human_box: Cxcywh<S>,
    pub object_box: Cxcywh<S>,
    pub object_class_logits: Vec<S>,
    pub interaction_logits: Vec<S>,
}

/// Reads the head values out of the graph, one prediction per slot.
pub fn read_predictions<S: Scalar>(g: &Graph<S>, heads: &HeadOutputs) -> Vec<HoiPrediction<S>> {
    let hb = g.value(heads.human_boxes);
    let ob = g.value(heads.object_boxes);
    let ol = g.value(heads.object_logits);
    let il = g.value(heads.interaction_logits);
    let quad = |r: &[S]| Cxcywh([r[0], r[1], r[2], r[3]]);
    (0..hb.rows())
        .map(|i| HoiPrediction {
            human_box: quad(hb.row(i)),
            object_box: quad(ob.row(i)),
            object_class_logits: ol.row(i).to_vec(),
            interaction_logits: il.row(i).to_vec(),
        })
        .collect()
}

/// Encoder and the two detection decoders.
#[derive(Clone, Debug)]
pub struct DetectionForward {
    pub z_src: Var,
    pub z_e: Var,
    pub pos: Var,
    pub human_traces: Vec<DecoderLayerTrace>,
    pub object_traces: Vec<DecoderLayerTrace>,
    pub human_out: Var,
    pub object_out: Var,
}

pub fn detection_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    params: &HodnParams<S>,
    grid: &Tensor<S>,
) -> Result<DetectionForward> {
    let l = &params.layout;
    let (z_src, pos) = embed_scene(g, b, params, grid)?;
    let z_e = encoder_forward(g, b, &l.encoder, z_src, pos)?;
    let human_traces = detection_decoder_forward(g, b, &l.human_decoder, z_e, pos, b.var(l.human_queries))?;
    let object_traces =
        detection_decoder_forward(g, b, &l.object_decoder, z_e, pos, b.var(l.object_queries))?;
    let human_out = human_traces.last().expect("non-empty decoder").output;
    let object_out = object_traces.last().expect("non-empty decoder").output;
    Ok(DetectionForward {
        z_src,
        z_e,
        pos,
        human_traces,
        object_traces,
        human_out,
        object_out,
    })
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions<S> {
    pub route: GradientRoute,
    /// Value fed in place of the stopped feature set. When absent the stopped
    /// features are the live ones behind a stop-gradient node; when present
    /// they are this constant (used to evaluate the stopped path as a
    /// function frozen at a base point).
    pub frozen_features: Option<Tensor<S>>,
}

impl<S> ForwardOptions<S> {
    pub fn route(route: GradientRoute) -> Self {
        ForwardOptions {
            route,
            frozen_features: None,
        }
    }
}

/// Full forward pass of one scene.
#[derive(Clone, Debug)]
pub struct HodnForward {
    pub detection: DetectionForward,
    /// Human and object features as seen by the interaction decoder.
    pub linked_human: Var,
    pub linked_object: Var,
    pub interaction_traces: Vec<DecoderLayerTrace>,
    pub interaction_out: Var,
    pub heads: HeadOutputs,
}

pub fn hodn_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    params: &HodnParams<S>,
    grid: &Tensor<S>,
    options: &ForwardOptions<S>,
) -> Result<HodnForward> {
    let l = &params.layout;
    let det = detection_forward(g, b, params, grid)?;
    let cut = |g: &mut Graph<S>, live: Var| match &options.frozen_features {
        Some(t) => g.constant(t.clone()),
        None => g.stop_gradient(live),
    };
    let (linked_human, linked_object) = match options.route {
        GradientRoute::Open => (det.human_out, det.object_out),
        GradientRoute::StopObject => (det.human_out, cut(g, det.object_out)),
        GradientRoute::StopHuman => (cut(g, det.human_out), det.object_out),
    };
    let random = l.random_queries.map(|id| b.var(id));
    let interaction_traces = interaction_decoder_forward(
        g,
        b,
        &l.interaction_decoder,
        det.z_e,
        det.pos,
        linked_human,
        linked_object,
        params.mode,
        random,
    )?;
    let interaction_out = interaction_traces.last().expect("non-empty decoder").output;
    let heads = prediction_heads(g, b, l, det.human_out, det.object_out, interaction_out)?;
    Ok(HodnForward {
        detection: det,
        linked_human,
        linked_object,
        interaction_traces,
        interaction_out,
        heads,
    })
}

/// Inference on one grid with frozen weights.
pub fn predict<S: Scalar>(params: &HodnParams<S>, grid: &Tensor<S>) -> Result<Vec<HoiPrediction<S>>> {
    let mut g = Graph::new();
    let b = params.store.bind_frozen(&mut g);
    let out = hodn_forward(&mut g, &b, params, grid, &ForwardOptions::default())?;
    Ok(read_predictions(&g, &out.heads))
}
