//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                        |
//! |--------------|------------------------------------------------|
//! | 8            | magic `PEECKPT\0`                              |
//! | 4            | format version (`u32`)                         |
//! | 8            | header length `n` (`u64`)                      |
//! | `n`          | UTF-8 JSON header: kind, config, vocab, params |
//! | 8 per value  | parameter data as `f64`, in header order       |

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::net::{NetConfig, PeeModel};
use crate::numkit::{ParamStore, Tensor};
use crate::topic::{TopicConfig, TopicModel};

pub const MAGIC: &[u8; 8] = b"PEECKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Topic,
    Pee,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    vocab: Vocabulary,
    params: Vec<ParamHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub vocab: Vocabulary,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store<C: Serialize>(
        kind: ModelKind,
        config: &C,
        vocab: &Vocabulary,
        store: &ParamStore,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            config: serde_json::to_value(config)?,
            vocab: vocab.clone(),
            params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamHeader {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let values: usize = self.params.iter().map(|(_, t)| t.numel()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let end = usize::try_from(len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..end]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

        let mut data = bytes[end..].chunks_exact(8);
        if !data.remainder().is_empty() {
            return Err(bad("parameter data is not a whole number of f64 values"));
        }
        let mut params = Vec::with_capacity(header.params.len());
        for p in header.params {
            let n: usize = p.shape.iter().product();
            let values: Vec<f64> = data
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.len() != n {
                return Err(Error::Checkpoint(format!("truncated data for {}", p.name)));
            }
            params.push((p.name, Tensor::new(p.shape, values)?));
        }
        if data.next().is_some() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            vocab: header.vocab,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    fn config_as<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("config: {e}")))
    }

    pub fn topic(model: &TopicModel, config: &TopicConfig) -> Result<Self> {
        let config = TopicConfig {
            topics: model.topics,
            hidden: model.hidden,
            ..config.clone()
        };
        Self::from_store(ModelKind::Topic, &config, &model.vocab, &model.store)
    }

    pub fn into_topic(self) -> Result<(TopicModel, TopicConfig)> {
        self.expect_kind(ModelKind::Topic)?;
        let config: TopicConfig = self.config_as()?;
        let mut model = TopicModel::new(
            self.vocab,
            config.topics,
            config.hidden,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        model.store.load_named(&self.params)?;
        Ok((model, config))
    }

    pub fn pee(model: &PeeModel) -> Result<Self> {
        Self::from_store(ModelKind::Pee, &model.config, &model.vocab, &model.store)
    }

    pub fn into_pee(self) -> Result<PeeModel> {
        self.expect_kind(ModelKind::Pee)?;
        let config: NetConfig = self.config_as()?;
        let mut model = PeeModel::new(self.vocab, config, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        model.load_params(&self.params)?;
        Ok(model)
    }
}
