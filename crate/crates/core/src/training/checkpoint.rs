//! Little-endian checkpoint container.
//!
//! ```text
//! "CSCK" | u32 version | u8 dtype
//!        | str run config | str train state | str vocabulary
//!        | tensor table: parameters
//!        | tensor table: optimizer moments ("adam.m.<name>", "adam.v.<name>")
//!        | u32 length + RNG state blob
//! str          = u32 length + UTF-8 bytes
//! tensor table = u32 count, then per tensor:
//!                u32 name length, name, u8 dtype, u32 rank, u32 dims..., payload
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_lines, parse_value, RunConfig};
use crate::error::{Error, Result};
use crate::model::{ClipSum, ModelConfig};
use crate::numerics::{AdamState, Tensor};
use crate::scalar::{DType, Scalar};
use crate::tokenizer::Vocab;

pub const MAGIC: [u8; 4] = *b"CSCK";
pub const VERSION: u32 = 1;

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut out = self.seed.to_vec();
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != 56 {
            return None;
        }
        Some(RngState {
            seed: b[..32].try_into().ok()?,
            stream: u64::from_le_bytes(b[32..40].try_into().ok()?),
            word_pos: u128::from_le_bytes(b[40..56].try_into().ok()?),
        })
    }
}

/// Progress of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: usize,
    pub global_step: usize,
    pub lr_backbone: f64,
    pub lr_adapter: f64,
    pub best_rouge2: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(lr_backbone: f64, lr_adapter: f64) -> Self {
        TrainState {
            epoch: 0,
            global_step: 0,
            lr_backbone,
            lr_adapter,
            best_rouge2: None,
            best_epoch: None,
            epochs_since_improvement: 0,
        }
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        format!(
            "epoch = {}\nglobal_step = {}\nlr_backbone = {}\nlr_adapter = {}\nbest_rouge2 = {}\nbest_epoch = {}\nepochs_since_improvement = {}\n",
            self.epoch,
            self.global_step,
            self.lr_backbone,
            self.lr_adapter,
            opt(self.best_rouge2.map(|v| v.to_string())),
            opt(self.best_epoch.map(|v| v.to_string())),
            self.epochs_since_improvement
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = TrainState::new(1.0, 1.0);
        for (_, k, v) in parse_lines(text)? {
            let none = v == "none";
            match k.as_str() {
                "epoch" => s.epoch = parse_value(&k, &v)?,
                "global_step" => s.global_step = parse_value(&k, &v)?,
                "lr_backbone" => s.lr_backbone = parse_value(&k, &v)?,
                "lr_adapter" => s.lr_adapter = parse_value(&k, &v)?,
                "best_rouge2" => s.best_rouge2 = if none { None } else { Some(parse_value(&k, &v)?) },
                "best_epoch" => s.best_epoch = if none { None } else { Some(parse_value(&k, &v)?) },
                "epochs_since_improvement" => s.epochs_since_improvement = parse_value(&k, &v)?,
                other => return Err(Error::Config(format!("unknown train state key {other:?}"))),
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: RunConfig,
    pub state: TrainState,
    pub vocab: Vocab,
    pub params: Vec<(String, Tensor<T>)>,
    pub adam: AdamState<T>,
    pub rng: RngState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    out.push(T::DTYPE.code());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'b [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> std::result::Result<String, String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| format!("{what} is not UTF-8"))
    }

    fn tensor<T: Scalar>(&mut self) -> std::result::Result<(String, Tensor<T>), String> {
        let name = self.string("tensor name")?;
        let code = self.u8("tensor dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| format!("tensor {name}: unknown dtype code {code}"))?;
        if dtype != T::DTYPE {
            return Err(format!(
                "tensor {name}: stored as {}, requested {}",
                dtype.name(),
                T::DTYPE.name()
            ));
        }
        let rank = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("tensor dims")? as usize);
        }
        let numel: usize = shape.iter().product();
        let size = dtype.size();
        let raw = self.take(numel * size, &format!("payload of {name}"))?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("tensor {name}: {e}"))?;
        Ok((name, t))
    }

    fn table<T: Scalar>(&mut self) -> std::result::Result<Vec<(String, Tensor<T>)>, String> {
        let n = self.u32("tensor count")? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(
        config: &RunConfig,
        state: &TrainState,
        vocab: &Vocab,
        model: &ClipSum<T>,
        adam: &AdamState<T>,
        rng: &ChaCha8Rng,
    ) -> Self {
        let mut config = config.clone();
        config.model = model.config().clone();
        Checkpoint {
            config,
            state: state.clone(),
            vocab: vocab.clone(),
            params: model.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect(),
            adam: adam.clone(),
            rng: RngState::capture(rng),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        out.push(T::DTYPE.code());
        put_str(&mut out, &self.config.to_text());
        put_str(&mut out, &format!("{}adam_step = {}\n", self.state.to_text(), self.adam.step));
        put_str(&mut out, &self.vocab.to_text());
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in &self.params {
            put_tensor(&mut out, name, t);
        }
        put_u32(&mut out, 2 * self.params.len() as u32);
        for ((name, _), m) in self.params.iter().zip(&self.adam.first) {
            put_tensor(&mut out, &format!("adam.m.{name}"), m);
        }
        for ((name, _), v) in self.params.iter().zip(&self.adam.second) {
            put_tensor(&mut out, &format!("adam.v.{name}"), v);
        }
        let rng = self.rng.to_bytes();
        put_u32(&mut out, rng.len() as u32);
        out.extend_from_slice(&rng);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let code = r.u8("dtype")?;
        if DType::from_code(code) != Some(T::DTYPE) {
            return Err(format!("checkpoint dtype code {code} does not match requested {}", T::DTYPE.name()));
        }
        let config = RunConfig::from_text(&r.string("config")?).map_err(|e| e.to_string())?;
        let mut state_text = r.string("train state")?;
        let adam_step = match state_text.rfind("adam_step = ") {
            Some(i) => {
                let step = state_text[i + "adam_step = ".len()..].trim().parse::<u64>().map_err(|e| e.to_string())?;
                state_text.truncate(i);
                step
            }
            None => return Err("train state lacks adam_step".into()),
        };
        let state = TrainState::from_text(&state_text).map_err(|e| e.to_string())?;
        let vocab = Vocab::from_text(&r.string("vocabulary")?).map_err(|e| e.to_string())?;
        let params = r.table::<T>()?;
        let moments = r.table::<T>()?;
        if moments.len() != 2 * params.len() {
            return Err(format!("{} moment tensors for {} parameters", moments.len(), params.len()));
        }
        let (first, second) = moments.split_at(params.len());
        for (i, (name, t)) in params.iter().enumerate() {
            for (prefix, (mname, m)) in [("adam.m.", &first[i]), ("adam.v.", &second[i])] {
                if *mname != format!("{prefix}{name}") || m.shape() != t.shape() {
                    return Err(format!("optimizer moment {mname} does not match parameter {name}"));
                }
            }
        }
        let adam = AdamState {
            first: first.iter().map(|(_, t)| t.clone()).collect(),
            second: second.iter().map(|(_, t)| t.clone()).collect(),
            step: adam_step,
        };
        let n = r.u32("rng length")? as usize;
        let rng = RngState::from_bytes(r.take(n, "rng state")?).ok_or("malformed rng state")?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config,
            state,
            vocab,
            params,
            adam,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Rebuilds the model. With `expected`, the stored tensors must fit that
    /// configuration; a mismatch names the first offending tensor.
    pub fn model(&self, expected: Option<&ModelConfig>) -> std::result::Result<ClipSum<T>, String> {
        let cfg = expected.cloned().unwrap_or_else(|| self.config.model.clone());
        let mut model = ClipSum::new(cfg, 0).map_err(|e| e.to_string())?;
        let store = model.params_mut();
        for (name, t) in &self.params {
            match store.get(name) {
                Some(slot) if slot.shape() == t.shape() => {}
                Some(slot) => {
                    return Err(format!(
                        "shape mismatch for tensor {name}: checkpoint {:?}, config expects {:?}",
                        t.shape(),
                        slot.shape()
                    ))
                }
                None => return Err(format!("tensor {name} is not part of the configured model")),
            }
        }
        if self.params.len() != store.len() {
            let missing = store
                .names()
                .find(|n| !self.params.iter().any(|(p, _)| p == n))
                .unwrap_or("?")
                .to_string();
            return Err(format!("checkpoint lacks tensor {missing}"));
        }
        for (name, t) in &self.params {
            store.assign(name, t.clone()).map_err(|e| e.to_string())?;
        }
        Ok(model)
    }

    pub fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<(Self, ClipSum<T>)> {
        let ck = Self::load(path)?;
        let model = ck.model(expected).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })?;
        Ok((ck, model))
    }
}

/// Reads only the dtype byte of a checkpoint.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 9 {
        return Err(err(format!("truncated: {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(err(format!("bad magic {:?}", &bytes[..4])));
    }
    DType::from_code(bytes[8]).ok_or_else(|| err(format!("unknown dtype code {}", bytes[8])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_visual: 4,
            n_enc_layers: 2,
            n_dec_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            temporal_layers: 1,
            temporal_heads: 2,
            temporal_ffn: 8,
            fusion_layer: 2,
            max_src_len: 12,
            max_tgt_len: 8,
            n_frames: 3,
            vocab_size: 10,
            ..ModelConfig::default()
        }
    }

    fn sample() -> Checkpoint<f64> {
        let model = ClipSum::<f64>::new(tiny(), 3).unwrap();
        let mut adam = AdamState::new(model.params().tensors());
        adam.step = 7;
        adam.first[0].data_mut()[0] = 0.25;
        adam.second[1].data_mut()[0] = 1e-300;
        let vocab = Vocab::build(&["a b c d e f"], 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _ = rand::Rng::random::<u64>(&mut rng);
        let mut state = TrainState::new(0.1 + 0.2, 1e-3);
        state.best_rouge2 = Some(1.0 / 3.0);
        state.best_epoch = Some(2);
        let cfg = RunConfig {
            model: tiny(),
            ..RunConfig::default()
        };
        Checkpoint::capture(&cfg, &state, &vocab, &model, &adam, &rng)
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::<f64>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint<f64>| -> Vec<u64> { c.params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&back), bits(&ck));
        let mut a = back.rng.restore();
        let mut b = ck.rng.restore();
        assert_eq!(rand::Rng::random::<u64>(&mut a), rand::Rng::random::<u64>(&mut b));
    }

    #[test]
    fn corruptions_are_reported() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::<f64>::from_bytes(&bad).unwrap_err().contains("version"));
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 10]).unwrap_err().contains("truncated"));
        assert!(Checkpoint::<f32>::from_bytes(&bytes).unwrap_err().contains("dtype"));
    }

    #[test]
    fn mismatched_config_names_the_tensor() {
        let ck = sample();
        let wider = ModelConfig { d_model: 16, ..tiny() };
        let err = ck.model(Some(&wider)).unwrap_err();
        assert!(err.contains("embed.tokens") && err.contains("shape"), "{err}");
        let text_only = ModelConfig {
            visual_input: crate::model::VisualInput::None,
            ..tiny()
        };
        assert!(ck.model(Some(&text_only)).unwrap_err().contains("visual.pos"));
        let model = ck.model(None).unwrap();
        assert_eq!(model.params().get("embed.tokens"), Some(&ck.params[0].1));
    }
}
