//! Parameter layout and the graph building blocks shared by all variants.
//!
//! Blocks are pre-norm: `x + f(norm(x))`.

use std::sync::Arc;

use crate::cif::PredictorVars;
use crate::tensor::{Graph, Result, Tensor, Var};

use super::{ModelConfig, ParamStore, Variant};

const NORM_EPS: f64 = 1e-5;
/// Added to masked attention scores; finite so masked rows stay well defined.
const MASKED: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LinearIds {
    w: usize,
    b: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct NormIds {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct FfnIds {
    up: LinearIds,
    down: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvIds {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct EncLayerIds {
    norm1: NormIds,
    attn: AttnIds,
    norm2: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct DecLayerIds {
    norm1: NormIds,
    self_attn: AttnIds,
    norm2: NormIds,
    pub(crate) cross_attn: AttnIds,
    norm3: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PredictorIds {
    conv: ConvIds,
    proj: LinearIds,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct EncoderIds {
    input: LinearIds,
    subsample: Vec<ConvIds>,
    layers: Vec<EncLayerIds>,
    norm: NormIds,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DecoderIds {
    pub(crate) layers: Vec<DecLayerIds>,
    norm: NormIds,
    out: LinearIds,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub(crate) encoder: EncoderIds,
    pub(crate) ctc_head: Option<LinearIds>,
    pub(crate) predictor: Option<PredictorIds>,
    /// `[V+1, d]` for paraformer_v2, `[V+2, d]` token table for ar_aed.
    pub(crate) embed: Option<usize>,
    pub(crate) decoder: Option<DecoderIds>,
}

fn linear_ids(p: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> LinearIds {
    let w = p.uniform(format!("{name}.w"), &[d_in, d_out], d_in);
    let b = bias.then(|| p.uniform(format!("{name}.b"), &[d_out], d_in));
    LinearIds { w, b }
}

fn norm_ids(p: &mut ParamStore, name: &str, d: usize) -> NormIds {
    NormIds {
        gain: p.filled(format!("{name}.gain"), &[d], 1.0),
        bias: p.filled(format!("{name}.bias"), &[d], 0.0),
    }
}

fn attn_ids(p: &mut ParamStore, name: &str, d: usize) -> AttnIds {
    AttnIds {
        q: linear_ids(p, &format!("{name}.q"), d, d, true),
        // A key bias shifts every score of a query row equally, which softmax ignores.
        k: linear_ids(p, &format!("{name}.k"), d, d, false),
        v: linear_ids(p, &format!("{name}.v"), d, d, true),
        o: linear_ids(p, &format!("{name}.o"), d, d, true),
    }
}

fn ffn_ids(p: &mut ParamStore, name: &str, d: usize, d_ff: usize) -> FfnIds {
    FfnIds {
        up: linear_ids(p, &format!("{name}.up"), d, d_ff, true),
        down: linear_ids(p, &format!("{name}.down"), d_ff, d, true),
    }
}

fn conv_ids(p: &mut ParamStore, name: &str, k: usize, d: usize) -> ConvIds {
    ConvIds {
        w: p.uniform(format!("{name}.w"), &[k, d, d], k * d),
        b: p.uniform(format!("{name}.b"), &[d], k * d),
    }
}

impl Layout {
    pub(crate) fn build(cfg: &ModelConfig, p: &mut ParamStore) -> Layout {
        let d = cfg.d_model;
        let encoder = EncoderIds {
            input: linear_ids(p, "enc.input", cfg.d_feat, d, true),
            subsample: if cfg.subsample {
                (0..2).map(|i| conv_ids(p, &format!("enc.sub{i}"), 3, d)).collect()
            } else {
                Vec::new()
            },
            layers: (0..cfg.n_enc_layers)
                .map(|i| {
                    let n = format!("enc.layer{i}");
                    EncLayerIds {
                        norm1: norm_ids(p, &format!("{n}.norm1"), d),
                        attn: attn_ids(p, &format!("{n}.attn"), d),
                        norm2: norm_ids(p, &format!("{n}.norm2"), d),
                        ffn: ffn_ids(p, &format!("{n}.ffn"), d, cfg.d_ff),
                    }
                })
                .collect(),
            norm: norm_ids(p, "enc.norm", d),
        };
        let ctc_head = cfg
            .variant
            .has_ctc_head()
            .then(|| linear_ids(p, "ctc.out", d, cfg.classes(), true));
        let predictor = (cfg.variant == Variant::Paraformer).then(|| PredictorIds {
            conv: conv_ids(p, "cif.conv", cfg.conv_kernel, d),
            proj: linear_ids(p, "cif.proj", d, 1, true),
        });
        let embed = match cfg.variant {
            Variant::ParaformerV2 => Some(p.uniform("embed".into(), &[cfg.classes(), d], cfg.classes())),
            Variant::ArAed => Some(p.uniform("embed".into(), &[cfg.vocab_size + 2, d], cfg.vocab_size + 2)),
            _ => None,
        };
        let decoder = cfg.variant.has_decoder().then(|| DecoderIds {
            layers: (0..cfg.n_dec_layers)
                .map(|i| {
                    let n = format!("dec.layer{i}");
                    DecLayerIds {
                        norm1: norm_ids(p, &format!("{n}.norm1"), d),
                        self_attn: attn_ids(p, &format!("{n}.self"), d),
                        norm2: norm_ids(p, &format!("{n}.norm2"), d),
                        cross_attn: attn_ids(p, &format!("{n}.cross"), d),
                        norm3: norm_ids(p, &format!("{n}.norm3"), d),
                        ffn: ffn_ids(p, &format!("{n}.ffn"), d, cfg.d_ff),
                    }
                })
                .collect(),
            norm: norm_ids(p, "dec.norm", d),
            out: linear_ids(p, "dec.out", d, cfg.classes(), true),
        });
        Layout {
            encoder,
            ctc_head,
            predictor,
            embed,
            decoder,
        }
    }
}

/// Fixed sinusoidal positions `[len, d]`: sine on even, cosine on odd columns.
pub fn sinusoid(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let x = t as f64 * rate;
            data[t * d + i] = if i % 2 == 0 { x.sin() } else { x.cos() };
        }
    }
    Tensor::matrix(len, d, data).expect("consistent shape")
}

pub(crate) fn add_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (len, d) = (g.shape(x)[0], g.shape(x)[1]);
    let pe = g.constant(sinusoid(len, d));
    g.add(x, pe)
}

pub(crate) fn linear(g: &mut Graph, p: &[Var], ids: LinearIds, x: Var) -> Result<Var> {
    g.linear(x, p[ids.w], ids.b.map(|b| p[b]))
}

fn norm(g: &mut Graph, p: &[Var], ids: NormIds, x: Var) -> Result<Var> {
    g.layer_norm(x, p[ids.gain], p[ids.bias], NORM_EPS)
}

fn ffn(g: &mut Graph, p: &[Var], ids: FfnIds, x: Var) -> Result<Var> {
    let h = linear(g, p, ids.up, x)?;
    let h = g.gelu(h)?;
    linear(g, p, ids.down, h)
}

/// Projected keys and values of an attention block.
pub(crate) fn project_kv(g: &mut Graph, p: &[Var], ids: AttnIds, x: Var) -> Result<(Var, Var)> {
    Ok((linear(g, p, ids.k, x)?, linear(g, p, ids.v, x)?))
}

/// Multi-head scaled dot-product attention of `query: [n, d]` over
/// projected `(k, v): [m, d]`. `mask[i * m + j]` hides key `j` from query `i`.
pub(crate) fn attend(
    g: &mut Graph,
    p: &[Var],
    ids: AttnIds,
    query: Var,
    (k, v): (Var, Var),
    heads: usize,
    mask: Option<&Arc<Vec<bool>>>,
) -> Result<Var> {
    let q = linear(g, p, ids.q, query)?;
    let d = g.shape(q)[1];
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            let (a, b) = (h * dk, (h + 1) * dk);
            (g.slice(q, 1, a, b)?, g.slice(k, 1, a, b)?, g.slice(v, 1, a, b)?)
        };
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let mut s = g.scale(s, scale)?;
        if let Some(m) = mask {
            s = g.masked_fill(s, Arc::clone(m), MASKED)?;
        }
        let a = g.softmax(s)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, p, ids.o, cat)
}

/// `[n, n]` mask hiding future positions.
pub(crate) fn causal_mask(n: usize) -> Arc<Vec<bool>> {
    Arc::new((0..n * n).map(|i| i % n > i / n).collect())
}

/// `[T, d_feat]` features to `[T', d_model]` encodings. `drop` is the
/// dropout rate, inert outside training graphs.
pub(crate) fn encode(g: &mut Graph, p: &[Var], enc: &EncoderIds, heads: usize, drop: f64, x: Var) -> Result<Var> {
    let mut h = linear(g, p, enc.input, x)?;
    for c in &enc.subsample {
        let y = g.conv1d(h, p[c.w], 2)?;
        let y = g.add(y, p[c.b])?;
        h = g.relu(y)?;
    }
    h = add_positions(g, h)?;
    h = g.dropout(h, drop)?;
    for layer in &enc.layers {
        let n = norm(g, p, layer.norm1, h)?;
        let kv = project_kv(g, p, layer.attn, n)?;
        let a = attend(g, p, layer.attn, n, kv, heads, None)?;
        let a = g.dropout(a, drop)?;
        h = g.add(h, a)?;
        let n = norm(g, p, layer.norm2, h)?;
        let f = ffn(g, p, layer.ffn, n)?;
        let f = g.dropout(f, drop)?;
        h = g.add(h, f)?;
    }
    norm(g, p, enc.norm, h)
}

/// Cross-attention keys and values of every decoder layer, from `h`.
pub(crate) fn memory(g: &mut Graph, p: &[Var], dec: &DecoderIds, h: Var) -> Result<Vec<(Var, Var)>> {
    dec.layers.iter().map(|l| project_kv(g, p, l.cross_attn, h)).collect()
}

/// Decoder over an input stream `e: [U, d]` (positions added here) to
/// `[U, V+1]` logits.
pub(crate) fn decode(
    g: &mut Graph,
    p: &[Var],
    dec: &DecoderIds,
    heads: usize,
    drop: f64,
    e: Var,
    memory: &[(Var, Var)],
    causal: bool,
) -> Result<Var> {
    let mut x = add_positions(g, e)?;
    x = g.dropout(x, drop)?;
    let mask = causal.then(|| causal_mask(g.shape(x)[0]));
    for (layer, &kv) in dec.layers.iter().zip(memory) {
        let n = norm(g, p, layer.norm1, x)?;
        let self_kv = project_kv(g, p, layer.self_attn, n)?;
        let a = attend(g, p, layer.self_attn, n, self_kv, heads, mask.as_ref())?;
        let a = g.dropout(a, drop)?;
        x = g.add(x, a)?;
        let n = norm(g, p, layer.norm2, x)?;
        let c = attend(g, p, layer.cross_attn, n, kv, heads, None)?;
        let c = g.dropout(c, drop)?;
        x = g.add(x, c)?;
        let n = norm(g, p, layer.norm3, x)?;
        let f = ffn(g, p, layer.ffn, n)?;
        let f = g.dropout(f, drop)?;
        x = g.add(x, f)?;
    }
    let x = norm(g, p, dec.norm, x)?;
    linear(g, p, dec.out, x)
}

pub(crate) fn predictor_vars(p: &[Var], ids: PredictorIds) -> PredictorVars {
    PredictorVars {
        conv_weight: p[ids.conv.w],
        conv_bias: p[ids.conv.b],
        proj_weight: p[ids.proj.w],
        proj_bias: p[ids.proj.b.expect("projection has bias")],
    }
}
