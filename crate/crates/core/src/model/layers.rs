//! Parameter layouts and the forward computation of every sub-layer.

use crate::error::Result;
use crate::model::params::{Group, Initializer, ParameterStore};
use crate::numerics::{Mask, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::scalar::Scalar;

/// A tape plus the parameter bindings of one model.
pub struct Graph<'a, T> {
    pub tape: Tape<'a, T>,
    vars: Vec<Var>,
    attention: Option<Vec<Var>>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub(crate) fn bind(mut tape: Tape<'a, T>, store: &'a ParameterStore<T>) -> Result<Self> {
        let vars = store
            .tensors()
            .map(|t| tape.param(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Graph {
            tape,
            vars,
            attention: None,
        })
    }

    pub fn param(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    /// Keeps every attention probability matrix computed from now on.
    pub fn record_attention(&mut self) {
        self.attention.get_or_insert_with(Vec::new);
    }

    pub fn attention_maps(&self) -> Vec<&Tensor<T>> {
        self.attention
            .iter()
            .flatten()
            .map(|&v| self.tape.value(v))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Gradients aligned with the parameter store; parameters outside the
    /// loss's graph receive zeros.
    pub fn backward(self, loss: Var) -> Result<Vec<Tensor<T>>> {
        let shapes: Vec<Vec<usize>> = self
            .vars
            .iter()
            .map(|&v| self.tape.value(v).shape().to_vec())
            .collect();
        let vars = self.vars;
        let mut grads = self.tape.backward(loss)?;
        Ok(vars
            .iter()
            .zip(shapes)
            .map(|(&v, shape)| grads.take(v).unwrap_or_else(|| Tensor::zeros(&shape)))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Linear {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        group: Group,
        out_dim: usize,
        in_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.push(format!("{name}.weight"), group, init.normal(&[out_dim, in_dim]));
        let bias = bias.then(|| store.push(format!("{name}.bias"), group, Tensor::zeros(&[out_dim])));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = g.tape.matmul_t(x, g.param(self.weight))?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: usize,
    pub bias: usize,
}

impl Norm {
    pub(crate) fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, group: Group, dim: usize) -> Self {
        Norm {
            gain: store.push(format!("{name}.gain"), group, Tensor::ones(&[dim])),
            bias: store.push(format!("{name}.bias"), group, Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.tape.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Scaled dot-product attention over `heads` column slices.
pub(crate) fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<&Mask>,
) -> Result<Var> {
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.tape.slice_cols(q, h * dh, dh)?,
                g.tape.slice_cols(k, h * dh, dh)?,
                g.tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.tape.matmul_t(qh, kh)?;
        let scores = g.tape.scale(scores, scale)?;
        let probs = g.tape.softmax(scores, mask)?;
        if let Some(rec) = g.attention.as_mut() {
            rec.push(probs);
        }
        outputs.push(g.tape.matmul(probs, vh)?);
    }
    if heads == 1 {
        Ok(outputs[0])
    } else {
        g.tape.concat_cols(&outputs)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
    ) -> Self {
        let mut lin = |part: &str| Linear::new(store, init, &format!("{name}.{part}"), group, dim, dim, true);
        Attention {
            q: lin("q"),
            k: lin("k"),
            v: lin("v"),
            o: lin("o"),
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, query: Var, memory: Var, mask: Option<&Mask>) -> Result<Var> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let z = attend(g, q, k, v, self.heads, mask)?;
        self.o.forward(g, z)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        group: Group,
        dim: usize,
        hidden: usize,
    ) -> Self {
        FeedForward {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), group, hidden, dim, true),
            fc2: Linear::new(store, init, &format!("{name}.fc2"), group, dim, hidden, true),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.fc2.forward(g, h)
    }
}

/// Cross-modal fusion: text queries attend over projected visual keys/values,
/// then `LN(W_O [a; z] + a)`.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
    pub norm: Norm,
    pub heads: usize,
}

impl Fusion {
    pub(crate) fn new<T: Scalar>(store: &mut ParameterStore<T>, init: &mut Initializer, dim: usize, heads: usize) -> Self {
        let g = Group::Adapter;
        Fusion {
            q: store.push("fusion.q.weight", g, init.normal(&[dim, dim])),
            k: store.push("fusion.k.weight", g, init.normal(&[dim, dim])),
            v: store.push("fusion.v.weight", g, init.normal(&[dim, dim])),
            o: store.push("fusion.o.weight", g, init.normal(&[dim, 2 * dim])),
            norm: Norm::new(store, "fusion.ln", g, dim),
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, text: Var, visual: Var) -> Result<Var> {
        let q = g.tape.matmul_t(text, g.param(self.q))?;
        let k = g.tape.matmul_t(visual, g.param(self.k))?;
        let v = g.tape.matmul_t(visual, g.param(self.v))?;
        let z = attend(g, q, k, v, self.heads, None)?;
        let joined = g.tape.concat_cols(&[text, z])?;
        let projected = g.tape.matmul_t(joined, g.param(self.o))?;
        let residual = g.tape.add(projected, text)?;
        self.norm.forward(g, residual)
    }
}

/// Post-norm encoder layer: `A = LN(MSA(H) + H)`, `H' = LN(FFN(A) + A)`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub ln1: Norm,
    pub ffn: FeedForward,
    pub ln2: Norm,
}

impl EncoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        EncoderLayer {
            self_attn: Attention::new(store, init, &format!("{name}.self_attn"), group, dim, heads),
            ln1: Norm::new(store, &format!("{name}.ln1"), group, dim),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), group, dim, hidden),
            ln2: Norm::new(store, &format!("{name}.ln2"), group, dim),
        }
    }

    /// When `fusion` is given, its output replaces the attention sub-layer
    /// output before the feed-forward sub-layer.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        mask: Option<&Mask>,
        fusion: Option<(&Fusion, Var)>,
    ) -> Result<Var> {
        let attn = self.self_attn.forward(g, h, h, mask)?;
        let res = g.tape.add(attn, h)?;
        let mut a = self.ln1.forward(g, res)?;
        if let Some((fusion, visual)) = fusion {
            a = fusion.forward(g, a, visual)?;
        }
        let f = self.ffn.forward(g, a)?;
        let res = g.tape.add(f, a)?;
        self.ln2.forward(g, res)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub ln1: Norm,
    pub cross_attn: Attention,
    pub ln2: Norm,
    pub ffn: FeedForward,
    pub ln3: Norm,
}

impl DecoderLayer {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        let g = Group::Backbone;
        DecoderLayer {
            self_attn: Attention::new(store, init, &format!("{name}.self_attn"), g, dim, heads),
            ln1: Norm::new(store, &format!("{name}.ln1"), g, dim),
            cross_attn: Attention::new(store, init, &format!("{name}.cross_attn"), g, dim, heads),
            ln2: Norm::new(store, &format!("{name}.ln2"), g, dim),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), g, dim, hidden),
            ln3: Norm::new(store, &format!("{name}.ln3"), g, dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        memory: Var,
        causal: &Mask,
        memory_mask: Option<&Mask>,
    ) -> Result<Var> {
        let s = self.self_attn.forward(g, h, h, Some(causal))?;
        let res = g.tape.add(s, h)?;
        let a = self.ln1.forward(g, res)?;
        let c = self.cross_attn.forward(g, a, memory, memory_mask)?;
        let res = g.tape.add(c, a)?;
        let b = self.ln2.forward(g, res)?;
        let f = self.ffn.forward(g, b)?;
        let res = g.tape.add(f, b)?;
        self.ln3.forward(g, res)
    }
}
