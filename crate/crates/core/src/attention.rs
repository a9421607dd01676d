//! Multi-head attention and post-norm transformer layers.
//!
//! Positional terms are added to the query and key inputs only; values never
//! see them. Sublayers follow the `sublayer -> residual add -> layer norm`
//! ordering.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Binding, Initializer, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Projections of one multi-head attention block.
///
/// The key projection carries no bias (it would add a per-query constant to
/// every logit of a row, which softmax ignores). Value and output projections
/// are bias-free as well, so an all-zero value input yields an all-zero output.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub self_attn: MhaParams,
    pub ffn: FfnParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: MhaParams,
    pub cross_attn: MhaParams,
    pub ffn: FfnParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
    pub norm3: NormParams,
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model dim {dim} must be a positive multiple of head count {heads}"
        )));
    }
    Ok(())
}

impl MhaParams {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        init: &mut Initializer<'_, R>,
        prefix: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        let mut w = |name: &str, shape: &[usize]| {
            store.push(format!("{prefix}.{name}"), init.fan_in_uniform(shape, dim))
        };
        Ok(MhaParams {
            wq: w("wq", &[dim, dim]),
            bq: w("bq", &[dim]),
            wk: w("wk", &[dim, dim]),
            wv: w("wv", &[dim, dim]),
            wo: w("wo", &[dim, dim]),
            heads,
            dim,
        })
    }
}

impl FfnParams {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        init: &mut Initializer<'_, R>,
        prefix: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        FfnParams {
            w1: store.push(format!("{prefix}.w1"), init.fan_in_uniform(&[dim, hidden], dim)),
            b1: store.push(format!("{prefix}.b1"), init.fan_in_uniform(&[hidden], dim)),
            w2: store.push(format!("{prefix}.w2"), init.fan_in_uniform(&[hidden, dim], hidden)),
            b2: store.push(format!("{prefix}.b2"), init.fan_in_uniform(&[dim], hidden)),
        }
    }
}

impl NormParams {
    pub fn init<S: Scalar>(store: &mut ParamSet<S>, prefix: &str, dim: usize) -> Self {
        NormParams {
            gain: store.push(format!("{prefix}.gain"), Tensor::full(&[dim], S::one())),
            bias: store.push(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
        }
    }
}

impl EncoderLayerParams {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        init: &mut Initializer<'_, R>,
        prefix: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(EncoderLayerParams {
            self_attn: MhaParams::init(store, init, &format!("{prefix}.self_attn"), dim, heads)?,
            ffn: FfnParams::init(store, init, &format!("{prefix}.ffn"), dim, 4 * dim),
            norm1: NormParams::init(store, &format!("{prefix}.norm1"), dim),
            norm2: NormParams::init(store, &format!("{prefix}.norm2"), dim),
        })
    }
}

impl DecoderLayerParams {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        init: &mut Initializer<'_, R>,
        prefix: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(DecoderLayerParams {
            self_attn: MhaParams::init(store, init, &format!("{prefix}.self_attn"), dim, heads)?,
            cross_attn: MhaParams::init(store, init, &format!("{prefix}.cross_attn"), dim, heads)?,
            ffn: FfnParams::init(store, init, &format!("{prefix}.ffn"), dim, 4 * dim),
            norm1: NormParams::init(store, &format!("{prefix}.norm1"), dim),
            norm2: NormParams::init(store, &format!("{prefix}.norm2"), dim),
            norm3: NormParams::init(store, &format!("{prefix}.norm3"), dim),
        })
    }
}

/// `x · w (+ bias)`.
pub fn linear<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match bias {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}

pub fn ffn_forward<S: Scalar>(g: &mut Graph<S>, b: &Binding, p: &FfnParams, x: Var) -> Result<Var> {
    let h = linear(g, x, b.var(p.w1), Some(b.var(p.b1)))?;
    let h = g.relu(h);
    linear(g, h, b.var(p.w2), Some(b.var(p.b2)))
}

pub fn norm_forward<S: Scalar>(g: &mut Graph<S>, b: &Binding, p: &NormParams, x: Var) -> Result<Var> {
    g.layer_norm(x, b.var(p.gain), b.var(p.bias), S::lit(LAYER_NORM_EPS))
}

/// Output of one attention block together with its per-head weights.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: Var,
    /// Row-stochastic `[n_q × n_k]` matrices, one per head.
    pub weights: Vec<Var>,
}

fn add_pos<S: Scalar>(g: &mut Graph<S>, x: Var, pos: Option<Var>) -> Result<Var> {
    match pos {
        Some(p) => g.add(x, p),
        None => Ok(x),
    }
}

/// `softmax(proj_q(q_in + q_pos) · proj_k(k_in + k_pos)ᵀ / sqrt(d/heads)) · proj_v(v_in)`
/// per head, heads concatenated then passed through the output projection.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    p: &MhaParams,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    q_pos: Option<Var>,
    k_pos: Option<Var>,
) -> Result<Attention> {
    check_heads(p.dim, p.heads)?;
    let qs = g.value(q_in).shape().to_vec();
    let ks = g.value(k_in).shape().to_vec();
    let vs = g.value(v_in).shape().to_vec();
    if qs.len() != 2 || qs[1] != p.dim {
        return Err(Error::dim("multi_head_attention", &qs, &[qs[0], p.dim]));
    }
    if ks.len() != 2 || ks[1] != p.dim || ks != vs {
        return Err(Error::dim("multi_head_attention", &ks, &vs));
    }
    for (pos, want) in [(q_pos, &qs), (k_pos, &ks)] {
        if let Some(pv) = pos {
            if g.value(pv).shape() != want.as_slice() {
                return Err(Error::dim("multi_head_attention", g.value(pv).shape(), want));
            }
        }
    }

    let qi = add_pos(g, q_in, q_pos)?;
    let ki = add_pos(g, k_in, k_pos)?;
    let q = linear(g, qi, b.var(p.wq), Some(b.var(p.bq)))?;
    let k = linear(g, ki, b.var(p.wk), None)?;
    let v = linear(g, v_in, b.var(p.wv), None)?;

    let dh = p.dim / p.heads;
    let scale = S::one() / S::from_usize_lossy(dh).sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?)
        };
        let logits = g.matmul_nt(qh, kh)?;
        let logits = g.scale(logits, scale);
        let a = g.softmax(logits)?;
        outs.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let output = linear(g, merged, b.var(p.wo), None)?;
    Ok(Attention { output, weights })
}

/// How the first sublayer of a decoder layer is fed.
#[derive(Clone, Copy, Debug, Default)]
pub struct SelfAttentionInputs {
    /// Skip the self-attention sublayer entirely (its input is known to be zero).
    pub skip_self: bool,
    /// Replaces the value input (otherwise the previous layer output).
    pub value_override: Option<Var>,
    /// Replaces the query/key input; no query positional term is added, and
    /// the residual is taken from this input.
    pub qk_override: Option<Var>,
}

impl SelfAttentionInputs {
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn skipped() -> Self {
        SelfAttentionInputs {
            skip_self: true,
            ..Self::default()
        }
    }

    pub fn linked(qk: Var, value: Var) -> Self {
        SelfAttentionInputs {
            skip_self: false,
            value_override: Some(value),
            qk_override: Some(qk),
        }
    }
}

/// Intermediate nodes of one decoder layer.
#[derive(Clone, Debug)]
pub struct DecoderLayerTrace {
    /// Self-attention block before residual and norm; absent when skipped.
    pub self_attention: Option<Attention>,
    pub cross_attention: Attention,
    pub output: Var,
}

/// One post-norm decoder layer: self-attention, cross-attention against
/// `memory + memory_pos`, then the feed-forward sublayer.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    p: &DecoderLayerParams,
    prev: Var,
    query_pos: Var,
    memory: Var,
    memory_pos: Var,
    inputs: SelfAttentionInputs,
) -> Result<DecoderLayerTrace> {
    if inputs.skip_self && (inputs.value_override.is_some() || inputs.qk_override.is_some()) {
        return Err(Error::Config(
            "self-attention cannot be both skipped and overridden".into(),
        ));
    }
    let ps = g.value(prev).shape().to_vec();
    let mut expect_same = vec![query_pos];
    expect_same.extend(inputs.value_override);
    expect_same.extend(inputs.qk_override);
    for v in expect_same {
        if g.value(v).shape() != ps.as_slice() {
            return Err(Error::dim("decoder_layer_forward", &ps, g.value(v).shape()));
        }
    }

    let (tgt, self_attention) = if inputs.skip_self {
        (prev, None)
    } else {
        let (qk, qk_pos) = match inputs.qk_override {
            Some(o) => (o, None),
            None => (prev, Some(query_pos)),
        };
        let value = inputs.value_override.unwrap_or(prev);
        let sa = multi_head_attention(g, b, &p.self_attn, qk, qk, value, qk_pos, qk_pos)?;
        let residual = g.add(qk, sa.output)?;
        (norm_forward(g, b, &p.norm1, residual)?, Some(sa))
    };

    let ca = multi_head_attention(
        g,
        b,
        &p.cross_attn,
        tgt,
        memory,
        memory,
        Some(query_pos),
        Some(memory_pos),
    )?;
    let x = g.add(tgt, ca.output)?;
    let x = norm_forward(g, b, &p.norm2, x)?;
    let f = ffn_forward(g, b, &p.ffn, x)?;
    let x = g.add(x, f)?;
    let output = norm_forward(g, b, &p.norm3, x)?;
    Ok(DecoderLayerTrace {
        self_attention,
        cross_attention: ca,
        output,
    })
}

pub fn encoder_layer_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    p: &EncoderLayerParams,
    src: Var,
    pos: Var,
) -> Result<Var> {
    let sa = multi_head_attention(g, b, &p.self_attn, src, src, src, Some(pos), Some(pos))?;
    let x = g.add(src, sa.output)?;
    let x = norm_forward(g, b, &p.norm1, x)?;
    let f = ffn_forward(g, b, &p.ffn, x)?;
    let x = g.add(x, f)?;
    norm_forward(g, b, &p.norm2, x)
}

/// Stacked encoder layers; an empty stack returns `src` unchanged.
pub fn encoder_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    layers: &[EncoderLayerParams],
    src: Var,
    pos: Var,
) -> Result<Var> {
    if g.value(src).shape() != g.value(pos).shape() {
        return Err(Error::dim("encoder_forward", g.value(src).shape(), g.value(pos).shape()));
    }
    layers
        .iter()
        .try_fold(src, |x, layer| encoder_layer_forward(g, b, layer, x, pos))
}
