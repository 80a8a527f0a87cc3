//! The encoder graph, built on a [`Tape`](crate::tensor::Tape) so the same
//! code serves training, inference and gradient checks.

use super::ModelConfig;
use crate::error::{shape_err, Result};
use crate::mask::CompletionMask;
use crate::tensor::{Real, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerWeights<'t, T: Real> {
    pub query: (Var<'t, T>, Var<'t, T>),
    pub key: (Var<'t, T>, Var<'t, T>),
    pub value: (Var<'t, T>, Var<'t, T>),
    pub proj: (Var<'t, T>, Var<'t, T>),
    pub norm1: (Var<'t, T>, Var<'t, T>),
    pub ffn1: (Var<'t, T>, Var<'t, T>),
    pub ffn2: (Var<'t, T>, Var<'t, T>),
    pub norm2: (Var<'t, T>, Var<'t, T>),
}

/// Tape handles for every parameter, in [`ParamStore`](super::ParamStore) order.
#[derive(Debug, Clone)]
pub struct Weights<'t, T: Real> {
    pub embed: (Var<'t, T>, Var<'t, T>),
    pub position: Var<'t, T>,
    pub keyframe: Var<'t, T>,
    pub norm0: (Var<'t, T>, Var<'t, T>),
    pub layers: Vec<LayerWeights<'t, T>>,
    pub output: (Var<'t, T>, Var<'t, T>),
}

impl<'t, T: Real> Weights<'t, T> {
    pub fn from_vars(vars: &[Var<'t, T>], layers: usize) -> Result<Self> {
        if vars.len() != 8 + 16 * layers {
            return Err(shape_err(format!("{} parameter vars for {layers} layers", vars.len())));
        }
        let pair = |i: usize| (vars[i], vars[i + 1]);
        let layers = (0..layers)
            .map(|l| {
                let b = 6 + 16 * l;
                LayerWeights {
                    query: pair(b),
                    key: pair(b + 2),
                    value: pair(b + 4),
                    proj: pair(b + 6),
                    norm1: pair(b + 8),
                    ffn1: pair(b + 10),
                    ffn2: pair(b + 12),
                    norm2: pair(b + 14),
                }
            })
            .collect();
        Ok(Self {
            embed: pair(0),
            position: vars[2],
            keyframe: vars[3],
            norm0: pair(4),
            layers,
            output: pair(vars.len() - 2),
        })
    }
}

fn linear<'t, T: Real>(x: Var<'t, T>, (w, b): (Var<'t, T>, Var<'t, T>)) -> Result<Var<'t, T>> {
    x.matmul(w)?.add_row(b)
}

fn norm<'t, T: Real>(x: Var<'t, T>, (g, b): (Var<'t, T>, Var<'t, T>)) -> Result<Var<'t, T>> {
    x.layer_norm(g, b, T::lit(NORM_EPS))
}

/// Pose vectors `[B, T, D]` to tokens `[B, T, F]`.
pub fn embed_tokens<'t, T: Real>(x: Var<'t, T>, w: &Weights<'t, T>) -> Result<Var<'t, T>> {
    x.conv1d(w.embed.0, w.embed.1)
}

/// `E_pos[t] + D_kf[label_t]` for every frame of every mask, `[B, T, F]`.
pub fn mixture<'t, T: Real>(w: &Weights<'t, T>, masks: &[&CompletionMask]) -> Result<Var<'t, T>> {
    let t = masks.first().map_or(0, |m| m.len());
    if t == 0 || masks.iter().any(|m| m.len() != t) {
        return Err(shape_err("masks in a batch must share a non-zero length"));
    }
    let f = w.position.shape()[1];
    let (t_max, b) = (w.position.shape()[0], masks.len());
    if t > t_max {
        return Err(shape_err(format!("{t} frames exceed the model's {t_max}")));
    }
    let pos_idx: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let kf_idx: Vec<usize> = masks.iter().flat_map(|m| m.labels().iter().map(|l| l.index())).collect();
    let pos = w.position.index_select(0, &pos_idx)?;
    let kf = w.keyframe.index_select(0, &kf_idx)?;
    pos.add(kf)?.reshape(&[b, t, f])
}

/// Multi-head scaled dot-product self-attention over `[B, T, F]`. Attention
/// maps `[B, M, T, T]` are pushed to `probe` when given.
pub fn mhsa<'t, T: Real>(
    h: Var<'t, T>,
    lw: &LayerWeights<'t, T>,
    heads: usize,
    probe: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var<'t, T>> {
    let s = h.shape();
    if s.len() != 3 || !s[2].is_multiple_of(heads) {
        return Err(shape_err(format!("mhsa input {s:?} with {heads} heads")));
    }
    let (b, t, f) = (s[0], s[1], s[2]);
    let dh = f / heads;
    let split = |x: Var<'t, T>| x.reshape(&[b, t, heads, dh])?.permute(&[0, 2, 1, 3]);
    let q = split(linear(h, lw.query)?)?;
    let k = split(linear(h, lw.key)?)?;
    let v = split(linear(h, lw.value)?)?;
    let alpha = T::lit((f as f64 / heads as f64).sqrt());
    let scores = q.matmul(k.transpose()?)?.scale(T::one() / alpha);
    let attn = scores.softmax(3)?;
    if let Some(p) = probe {
        p.push(attn.value());
    }
    let ctx = attn.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, t, f])?;
    linear(ctx, lw.proj)
}

pub fn ffn<'t, T: Real>(h: Var<'t, T>, lw: &LayerWeights<'t, T>) -> Result<Var<'t, T>> {
    linear(linear(h, lw.ffn1)?.gelu(), lw.ffn2)
}

/// Post-norm layer: `Norm(H + MHSA(H))`, then `Norm(. + FFN(.))`.
pub fn encoder_layer<'t, T: Real>(
    h: Var<'t, T>,
    lw: &LayerWeights<'t, T>,
    heads: usize,
    probe: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var<'t, T>> {
    let hh = norm(h.add(mhsa(h, lw, heads, probe)?)?, lw.norm1)?;
    norm(hh.add(ffn(hh, lw)?)?, lw.norm2)
}

/// Full network: `[B, T, D]` inputs (ignored frames already zeroed) to
/// `[B, T, D]` outputs.
pub fn network<'t, T: Real>(
    x: Var<'t, T>,
    masks: &[&CompletionMask],
    w: &Weights<'t, T>,
    cfg: &ModelConfig,
    mut probe: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3 || s[0] != masks.len() || s[2] != cfg.input_dim() {
        return Err(shape_err(format!("network input {s:?}, {} masks, input dim {}", masks.len(), cfg.input_dim())));
    }
    let z = embed_tokens(x, w)?.add(mixture(w, masks)?)?;
    let mut h = norm(z, w.norm0)?;
    for lw in &w.layers {
        h = encoder_layer(h, lw, cfg.heads, probe.as_deref_mut())?;
    }
    let y = h.conv1d(w.output.0, w.output.1)?;
    if cfg.residual {
        y.add(x)
    } else {
        Ok(y)
    }
}
