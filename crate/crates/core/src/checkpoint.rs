//! Checkpoint container: a versioned text manifest followed by a raw
//! little-endian payload.
//!
//! ```text
//! c2w2c-checkpoint
//! version 1
//! model c2w2c
//! precision f32
//! section dims 7          (TOML, 7 lines)
//! ...
//! section config 10
//! ...
//! vocab <hash> <n>        (n symbol lines follow)
//! ...
//! progress <epoch> <position> <step>
//! rng <seed> <stream> <word_pos>
//! adam <step>
//! state <rows> <cols>     (or `state none`)
//! param <name> <d0>x<d1>  (one per parameter, payload order)
//! payload_sha256 <hex>
//! payload <nbytes>
//! <payload>
//! ```
//!
//! The payload holds the parameters, then Adam's first moments, then its
//! second moments, then the four carried state tensors when present.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::corpus::{CharVocab, WordVocab};
use crate::error::{Error, Result};
use crate::model::{AnyModel, C2w2cModel, LanguageModel, LmState, ModelDims, ModelKind, WordLstmModel};
use crate::numkernel::{ParamSet, Real, Tensor};
use crate::training::{AdamState, Progress, TrainConfig, Trainer, DROPOUT_STREAM};

pub const FORMAT_TAG: &str = "c2w2c-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: AnyModel<T>,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    pub progress: Progress<T>,
    pub rng_word_pos: u128,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Real> Checkpoint<T> {
    /// A fresh checkpoint for an untrained model.
    pub fn new(model: AnyModel<T>, config: TrainConfig) -> Self {
        let adam = AdamState::new(model.params());
        Checkpoint {
            model,
            config,
            adam,
            progress: Progress::default(),
            rng_word_pos: 0,
        }
    }

    pub fn from_trainer(t: &Trainer<T, AnyModel<T>>) -> Self {
        Checkpoint {
            model: t.model.clone(),
            config: t.cfg.clone(),
            adam: t.adam.clone(),
            progress: t.progress.clone(),
            rng_word_pos: t.rng_word_pos(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer<T, AnyModel<T>>> {
        Trainer::restore(self.model, self.config, self.adam, self.progress, self.rng_word_pos)
    }

    pub fn vocab_hash(&self) -> String {
        self.model.vocab_hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let params = self.model.params();
        for (_, _, t) in params.iter() {
            write_tensor(t, &mut payload);
        }
        for t in self.adam.m.iter().chain(&self.adam.v) {
            write_tensor(t, &mut payload);
        }
        if let Some(s) = &self.progress.state {
            for t in s.tensors() {
                write_tensor(t, &mut payload);
            }
        }

        let (kind, vocab_text) = match &self.model {
            AnyModel::C2w2c(m) => (ModelKind::C2w2c, m.vocab.to_file_string()),
            AnyModel::WordLstm(m) => (ModelKind::WordLstm, m.words.to_file_string()),
        };
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(FORMAT_TAG.into());
        line(format!("version {FORMAT_VERSION}"));
        line(format!("model {kind}"));
        line(format!("precision {}", T::NAME));
        for (name, text) in [
            ("dims", toml_text(self.model.dims())?),
            ("config", toml_text(&self.config)?),
        ] {
            line(format!("section {name} {}", text.lines().count()));
            text.lines().for_each(|l| line(l.to_owned()));
        }
        line(format!("vocab {} {}", self.vocab_hash(), vocab_text.lines().count()));
        vocab_text.lines().for_each(|l| line(l.to_owned()));
        let p = &self.progress;
        line(format!("progress {} {} {}", p.epoch, p.position, p.step));
        line(format!("rng {} {} {}", self.config.seed, DROPOUT_STREAM, self.rng_word_pos));
        line(format!("adam {}", self.adam.step));
        match &p.state {
            Some(s) => line(format!("state {} {}", s.h1.shape()[0], s.h1.shape()[1])),
            None => line("state none".into()),
        }
        for (_, name, t) in params.iter() {
            line(format!("param {name} {}", shape_text(t.shape())));
        }
        line(format!("payload_sha256 {}", hex(&Sha256::digest(&payload))));
        line(format!("payload {}", payload.len()));

        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&payload);
        Ok(bytes)
    }

    /// Writes atomically: a temporary file next to `path`, then a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = temp_path(path);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and refuses a checkpoint built on a different vocabulary.
    pub fn load_expecting(path: impl AsRef<Path>, vocab_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.vocab_hash() != vocab_hash {
            return Err(bad(format!(
                "vocabulary hash mismatch: checkpoint has {}, expected {vocab_hash}",
                ck.vocab_hash()
            )));
        }
        Ok(ck)
    }

    /// Parses a checkpoint. Values stored at another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.line()? != FORMAT_TAG {
            return Err(bad("not a c2w2c checkpoint"));
        }
        let version: u32 = parse(r.field("version")?.as_str(), "version")?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let kind: ModelKind = r.field("model")?.parse()?;
        let precision = r.field("precision")?;
        let width = match precision.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("unknown precision {other:?}"))),
        };
        let dims: ModelDims = r.section("dims")?;
        let config: TrainConfig = r.section("config")?;

        let vocab_head = r.field("vocab")?;
        let (hash, n) = vocab_head
            .split_once(' ')
            .ok_or_else(|| bad("malformed vocab line"))?;
        let n: usize = parse(n, "vocab size")?;
        let mut vocab_text = String::new();
        for _ in 0..n {
            vocab_text.push_str(&r.line()?);
            vocab_text.push('\n');
        }

        let nums = |s: String, what: &str, k: usize| -> Result<Vec<u128>> {
            let v: Vec<u128> = s
                .split(' ')
                .map(|x| parse(x, what))
                .collect::<Result<_>>()?;
            if v.len() != k {
                return Err(bad(format!("malformed {what} line")));
            }
            Ok(v)
        };
        let prog = nums(r.field("progress")?, "progress", 3)?;
        let rng = nums(r.field("rng")?, "rng", 3)?;
        if rng[0] != config.seed as u128 || rng[1] != DROPOUT_STREAM as u128 {
            return Err(bad("generator seed or stream does not match the configuration"));
        }
        let adam_step: u64 = parse(&r.field("adam")?, "adam step")?;
        let state_line = r.field("state")?;
        let state_shape = match state_line.as_str() {
            "none" => None,
            s => {
                let v = nums(s.to_owned(), "state", 2)?;
                Some([v[0] as usize, v[1] as usize])
            }
        };

        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        let sha = loop {
            let l = r.line()?;
            if let Some(rest) = l.strip_prefix("param ") {
                let (name, shape) = rest.rsplit_once(' ').ok_or_else(|| bad("malformed param line"))?;
                specs.push((name.to_owned(), parse_shape(shape)?));
            } else if let Some(rest) = l.strip_prefix("payload_sha256 ") {
                break rest.to_owned();
            } else {
                return Err(bad(format!("unexpected manifest line {l:?}")));
            }
        };
        let nbytes: usize = parse(&r.field("payload")?, "payload length")?;
        let payload = &bytes[r.pos..];
        if payload.len() != nbytes {
            return Err(bad(format!(
                "integrity error: payload is {} bytes, manifest declares {nbytes} (truncated file?)",
                payload.len()
            )));
        }
        if hex(&Sha256::digest(payload)) != sha {
            return Err(bad("integrity error: payload checksum mismatch"));
        }

        let mut values = payload.chunks_exact(width).map(|c| match width {
            4 => T::from_f64(f32::read_le(c) as f64),
            _ => T::from_f64(f64::read_le(c)),
        });
        let mut take = |shape: &[usize]| -> Result<Tensor<T>> {
            let n: usize = shape.iter().product();
            let data: Vec<T> = values.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad("integrity error: payload shorter than the declared tensors"));
            }
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamSet::new();
        for (name, shape) in &specs {
            params.insert(name.clone(), take(shape)?)?;
        }
        let m: Vec<Tensor<T>> = specs.iter().map(|(_, s)| take(s)).collect::<Result<_>>()?;
        let v: Vec<Tensor<T>> = specs.iter().map(|(_, s)| take(s)).collect::<Result<_>>()?;
        let state = match state_shape {
            Some(s) => Some(LmState::from_tensors([take(&s)?, take(&s)?, take(&s)?, take(&s)?])?),
            None => None,
        };
        if values.next().is_some() {
            return Err(bad("integrity error: trailing payload data"));
        }

        let model = match kind {
            ModelKind::C2w2c => {
                let vocab = CharVocab::from_file_string(&vocab_text)?;
                AnyModel::C2w2c(C2w2cModel::from_params(dims, vocab, params)?)
            }
            ModelKind::WordLstm => {
                let words = WordVocab::from_file_string(&vocab_text)?;
                AnyModel::WordLstm(WordLstmModel::from_params(dims, words, params)?)
            }
        };
        if model.vocab_hash() != hash {
            return Err(bad("integrity error: embedded vocabulary does not match its hash"));
        }
        Ok(Checkpoint {
            model,
            config,
            adam: AdamState { m, v, step: adam_step },
            progress: Progress {
                epoch: prog[0] as u64,
                position: prog[1] as usize,
                step: prog[2] as u64,
                state,
            },
            rng_word_pos: rng[2],
        })
    }
}

fn write_tensor<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    for &x in t.data() {
        x.write_le(out);
    }
}

fn toml_text<S: serde::Serialize>(v: &S) -> Result<String> {
    toml::to_string(v).map_err(|e| bad(format!("cannot serialise manifest section: {e}")))
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x').map(|d| parse(d, "shape")).collect()
}

fn parse<F: std::str::FromStr>(s: &str, what: &str) -> Result<F> {
    s.parse().map_err(|_| bad(format!("malformed {what}: {s:?}")))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn line(&mut self) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("integrity error: manifest ends unexpectedly (truncated file?)"))?;
        self.pos += end + 1;
        String::from_utf8(rest[..end].to_vec()).map_err(|_| bad("manifest is not UTF-8"))
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let l = self.line()?;
        match l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(v) => Ok(v.to_owned()),
            None => Err(bad(format!("expected `{key}` line, found {l:?}"))),
        }
    }

    fn section<D: serde::de::DeserializeOwned>(&mut self, name: &str) -> Result<D> {
        let head = self.field("section")?;
        let (got, n) = head.split_once(' ').ok_or_else(|| bad("malformed section line"))?;
        if got != name {
            return Err(bad(format!("expected section {name}, found {got}")));
        }
        let n: usize = parse(n, "section length")?;
        let mut text = String::new();
        for _ in 0..n {
            text.push_str(&self.line()?);
            text.push('\n');
        }
        toml::from_str(&text).map_err(|e| bad(format!("section {name}: {e}")))
    }
}
