//! The summarization network.
//!
//! Visual branch: learned temporal positions, a small bidirectional
//! transformer over frames and a bias-free projection into the text width.
//! Text branch: a post-norm encoder whose `fusion_layer` mixes in the visual
//! memory after its self-attention sub-layer, and a causal decoder whose
//! output projection is tied to the token embedding.

pub mod config;
pub mod gradcheck;
pub mod layers;
pub mod params;

use crate::error::{Error, Result};
use crate::numerics::{Mask, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, TokenSequence, PAD};

pub use config::{ModelConfig, VisualInput};
pub use layers::{DecoderLayer, EncoderLayer, Fusion, Graph};
pub use params::{Group, Parameter, ParameterStore};

use layers::Linear;
use params::Initializer;

/// Per-frame visual features with the frame positions they were sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence<T> {
    pub features: Tensor<T>,
    pub source_indices: Vec<u32>,
}

impl<T: Scalar> FrameFeatureSequence<T> {
    pub fn new(features: Tensor<T>, source_indices: Vec<u32>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Data(format!(
                "frame features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if source_indices.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} source indices for {} frames",
                source_indices.len(),
                features.rows()
            )));
        }
        features.ensure_finite("frame features").map_err(|_| Error::Data("frame features contain non-finite values".into()))?;
        Ok(FrameFeatureSequence {
            features,
            source_indices,
        })
    }

    /// Frames numbered `0..rows`.
    pub fn contiguous(features: Tensor<T>) -> Result<Self> {
        let n = features.rows() as u32;
        Self::new(features, (0..n).collect())
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub source: TokenSequence,
    pub features: Option<FrameFeatureSequence<T>>,
    pub summary: TokenSequence,
}

#[derive(Debug, Clone)]
struct VisualBranch {
    pos: usize,
    temporal: Vec<EncoderLayer>,
    proj: usize,
    fusion: Fusion,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_embed: usize,
    pos_src: usize,
    pos_tgt: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    visual: Option<VisualBranch>,
}

/// Encoder output for one source, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedSource<T> {
    pub hidden: Tensor<T>,
    pub key_valid: Vec<bool>,
}

fn padding_mask(rows: usize, key_valid: &[bool]) -> Option<Mask> {
    if key_valid.iter().all(|&v| v) {
        None
    } else {
        Some(Mask::key_padding(rows, key_valid))
    }
}

#[derive(Debug, Clone)]
pub struct ClipSum<T> {
    config: ModelConfig,
    params: ParameterStore<T>,
    layout: Layout,
}

impl<T: Scalar> ClipSum<T> {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::default();
        let mut init = Initializer::new(seed, config.init_std);
        let d = config.d_model;
        let bb = Group::Backbone;

        let tok_embed = store.push("embed.tokens", bb, init.normal(&[config.vocab_size, d]));
        let pos_src = store.push("embed.pos_src", bb, init.normal(&[config.max_src_len, d]));
        let pos_tgt = store.push("embed.pos_tgt", bb, init.normal(&[config.max_tgt_len, d]));
        let encoder = (0..config.n_enc_layers)
            .map(|l| EncoderLayer::new(&mut store, &mut init, &format!("enc.{l}"), bb, d, config.n_heads, config.ffn_dim))
            .collect();
        let decoder = (0..config.n_dec_layers)
            .map(|l| DecoderLayer::new(&mut store, &mut init, &format!("dec.{l}"), d, config.n_heads, config.ffn_dim))
            .collect();

        let visual = config.uses_visual().then(|| {
            let ad = Group::Adapter;
            let dv = config.d_visual;
            let pos = store.push("visual.pos", ad, init.normal(&[config.n_frames, dv]));
            let temporal = (0..config.temporal_layers)
                .map(|l| {
                    EncoderLayer::new(
                        &mut store,
                        &mut init,
                        &format!("visual.temporal.{l}"),
                        ad,
                        dv,
                        config.temporal_heads,
                        config.temporal_ffn,
                    )
                })
                .collect();
            let proj = Linear::new(&mut store, &mut init, "visual.proj", ad, d, dv, false).weight;
            let fusion = Fusion::new(&mut store, &mut init, d, config.fusion_heads);
            VisualBranch {
                pos,
                temporal,
                proj,
                fusion,
            }
        });

        Ok(ClipSum {
            config,
            params: store,
            layout: Layout {
                tok_embed,
                pos_src,
                pos_tgt,
                encoder,
                decoder,
                visual,
            },
        })
    }

    /// Builds the model for `config` and loads `tensors` by name, requiring
    /// exactly the expected names and shapes.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            model.params.assign(&name, t)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    pub fn bind<'a>(&'a self, tape: Tape<'a, T>) -> Result<Graph<'a, T>> {
        Graph::bind(tape, &self.params)
    }

    fn visual(&self) -> Result<&VisualBranch> {
        self.layout
            .visual
            .as_ref()
            .ok_or_else(|| Error::Config("model was built without a visual branch".into()))
    }

    fn check_features(&self, feats: &FrameFeatureSequence<T>) -> Result<()> {
        let expect = [self.config.n_frames, self.config.d_visual];
        if feats.features.shape() != expect {
            return Err(Error::shape("encode_visual", feats.features.shape(), &expect));
        }
        Ok(())
    }

    /// Temporal transformer over `features + PE_visual`; unmasked.
    pub fn encode_visual_in(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        let vb = self.visual()?;
        let expect = [self.config.n_frames, self.config.d_visual];
        if g.value(features).shape() != expect {
            return Err(Error::shape("encode_visual", g.value(features).shape(), &expect));
        }
        let mut h = g.tape.add(features, g.param(vb.pos))?;
        for layer in &vb.temporal {
            h = layer.forward(g, h, None, None)?;
        }
        Ok(h)
    }

    /// Bias-free linear map from the visual width to the text width.
    pub fn project_visual_in(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Var> {
        let vb = self.visual()?;
        g.tape.matmul_t(v, g.param(vb.proj))
    }

    pub fn fuse_in(&self, g: &mut Graph<'_, T>, text: Var, vproj: Var) -> Result<Var> {
        let vb = self.visual()?;
        let shape = g.value(vproj).shape().to_vec();
        if g.value(text).cols() != self.config.d_model || shape[1] != self.config.d_model {
            return Err(Error::shape("fuse", g.value(text).shape(), &shape));
        }
        vb.fusion.forward(g, text, vproj)
    }

    /// Projected visual memory for `feats`, or `None` for text-only models.
    pub fn visual_memory_in<'a>(
        &self,
        g: &mut Graph<'a, T>,
        feats: Option<&'a FrameFeatureSequence<T>>,
    ) -> Result<Option<Var>> {
        if !self.config.uses_visual() {
            return Ok(None);
        }
        let feats = feats.ok_or_else(|| Error::Data("multimodal model requires frame features".into()))?;
        self.check_features(feats)?;
        let input = g.tape.constant_ref(&feats.features)?;
        let v = self.encode_visual_in(g, input)?;
        Ok(Some(self.project_visual_in(g, v)?))
    }

    pub fn encoder_in(&self, g: &mut Graph<'_, T>, tokens: &[TokenId], vproj: Option<Var>) -> Result<Var> {
        let n = tokens.len();
        if n == 0 || n > self.config.max_src_len {
            return Err(Error::Data(format!(
                "source length {n} outside 1..={}",
                self.config.max_src_len
            )));
        }
        if let Some(vp) = vproj {
            let expect = [self.config.n_frames, self.config.d_model];
            if g.value(vp).shape() != expect {
                return Err(Error::shape("encoder vproj", g.value(vp).shape(), &expect));
            }
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let emb = g.tape.embedding(g.param(self.layout.tok_embed), &ids)?;
        let pos = g.tape.slice_rows(g.param(self.layout.pos_src), 0, n)?;
        let mut h = g.tape.add(emb, pos)?;
        let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
        let mask = padding_mask(n, &valid);
        let fusion = match (vproj, &self.layout.visual) {
            (Some(vp), Some(vb)) => Some((&vb.fusion, vp)),
            _ => None,
        };
        for (l, layer) in self.layout.encoder.iter().enumerate() {
            let fuse_here = if l + 1 == self.config.fusion_layer { fusion } else { None };
            h = layer.forward(g, h, mask.as_ref(), fuse_here)?;
        }
        Ok(h)
    }

    /// Logits `L × vocab` for a teacher-forced or partial target prefix.
    pub fn decoder_in(&self, g: &mut Graph<'_, T>, tgt: &[TokenId], memory: Var, memory_valid: &[bool]) -> Result<Var> {
        let l = tgt.len();
        if l == 0 || l > self.config.max_tgt_len {
            return Err(Error::Data(format!(
                "target length {l} outside 1..={}",
                self.config.max_tgt_len
            )));
        }
        let ids: Vec<usize> = tgt.iter().map(|&t| t as usize).collect();
        let table = g.param(self.layout.tok_embed);
        let emb = g.tape.embedding(table, &ids)?;
        let pos = g.tape.slice_rows(g.param(self.layout.pos_tgt), 0, l)?;
        let mut h = g.tape.add(emb, pos)?;
        let causal = Mask::causal(l);
        let memory_mask = padding_mask(l, memory_valid);
        for layer in &self.layout.decoder {
            h = layer.forward(g, h, memory, &causal, memory_mask.as_ref())?;
        }
        g.tape.matmul_t(h, table)
    }

    /// Summed target NLL of one example and its token count.
    pub fn example_nll_in<'a>(&self, g: &mut Graph<'a, T>, ex: &'a Example<T>) -> Result<(Var, usize)> {
        let summary = ex.summary.ids();
        if summary.len() < 2 {
            return Err(Error::Data("summary must contain at least bos and one target".into()));
        }
        let vproj = self.visual_memory_in(g, ex.features.as_ref())?;
        let enc = self.encoder_in(g, ex.source.ids(), vproj)?;
        let valid: Vec<bool> = ex.source.iter().map(|&t| t != PAD).collect();
        let input = &summary[..summary.len() - 1];
        let targets: Vec<Option<usize>> = summary[1..]
            .iter()
            .map(|&t| (t != PAD).then_some(t as usize))
            .collect();
        let count = targets.iter().flatten().count();
        let logits = self.decoder_in(g, input, enc, &valid)?;
        Ok((g.tape.cross_entropy_sum(logits, &targets)?, count))
    }

    /// Mean NLL over all non-pad target tokens in `batch`.
    pub fn loss_in<'a>(&self, g: &mut Graph<'a, T>, batch: &[&'a Example<T>]) -> Result<(Var, usize)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut total: Option<Var> = None;
        let mut count = 0;
        for &ex in batch {
            let (nll, c) = self.example_nll_in(g, ex)?;
            count += c;
            total = Some(match total {
                Some(t) => g.tape.add(t, nll)?,
                None => nll,
            });
        }
        if count == 0 {
            return Err(Error::Data("batch has no non-pad target tokens".into()));
        }
        let total = total.expect("nonempty batch");
        Ok((g.tape.scale(total, 1.0 / count as f64)?, count))
    }

    pub fn forward_loss(&self, batch: &[&Example<T>]) -> Result<T> {
        let mut g = self.bind(Tape::inference())?;
        let (loss, _) = self.loss_in(&mut g, batch)?;
        Ok(g.value(loss).item())
    }

    /// Loss, gradients aligned with [`Self::params`], and target token count.
    pub fn loss_and_grads(&self, batch: &[&Example<T>]) -> Result<(T, Vec<Tensor<T>>, usize)> {
        let mut g = self.bind(Tape::new())?;
        let (loss, count) = self.loss_in(&mut g, batch)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        Ok((value, grads, count))
    }

    pub fn encode_visual(&self, feats: &FrameFeatureSequence<T>) -> Result<Tensor<T>> {
        self.check_features(feats)?;
        let mut g = self.bind(Tape::inference())?;
        let input = g.tape.constant_ref(&feats.features)?;
        let out = self.encode_visual_in(&mut g, input)?;
        Ok(g.value(out).clone())
    }

    pub fn project_visual(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.bind(Tape::inference())?;
        let input = g.tape.constant_ref(v)?;
        let out = self.project_visual_in(&mut g, input)?;
        Ok(g.value(out).clone())
    }

    pub fn fuse(&self, text: &Tensor<T>, vproj: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.bind(Tape::inference())?;
        let a = g.tape.constant_ref(text)?;
        let v = g.tape.constant_ref(vproj)?;
        let out = self.fuse_in(&mut g, a, v)?;
        Ok(g.value(out).clone())
    }

    pub fn encoder_forward(&self, tokens: &[TokenId], vproj: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = self.bind(Tape::inference())?;
        let vp = vproj.map(|v| g.tape.constant_ref(v)).transpose()?;
        let out = self.encoder_in(&mut g, tokens, vp)?;
        Ok(g.value(out).clone())
    }

    /// Runs the visual branch (when present) and the encoder.
    pub fn encode_source(&self, tokens: &[TokenId], feats: Option<&FrameFeatureSequence<T>>) -> Result<EncodedSource<T>> {
        let mut g = self.bind(Tape::inference())?;
        let vproj = self.visual_memory_in(&mut g, feats)?;
        let out = self.encoder_in(&mut g, tokens, vproj)?;
        Ok(EncodedSource {
            hidden: g.value(out).clone(),
            key_valid: tokens.iter().map(|&t| t != PAD).collect(),
        })
    }

    pub fn decoder_forward(&self, tgt: &[TokenId], source: &EncodedSource<T>) -> Result<Tensor<T>> {
        let expect = [source.key_valid.len(), self.config.d_model];
        if source.hidden.shape() != expect {
            return Err(Error::shape("decoder memory", source.hidden.shape(), &expect));
        }
        let mut g = self.bind(Tape::inference())?;
        let mem = g.tape.constant_ref(&source.hidden)?;
        let out = self.decoder_in(&mut g, tgt, mem, &source.key_valid)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests;
