//! Run configuration, read from TOML. Every field has a default, so an
//! empty file gives the default hyperparameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LossWeights, NetConfig, SearchMode};
use crate::topic::TopicConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub paths: Paths,
    pub topic: TopicConfig,
    pub expansion: ExpansionConfig,
    pub model: ModelConfig,
    pub losses: LossWeights,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            topic: TopicConfig::default(),
            expansion: ExpansionConfig::default(),
            model: ModelConfig::default(),
            losses: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// further corpora merged with `train` for topic pretraining
    pub topic_corpora: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// neighbours per persona word
    pub m: usize,
    /// words kept per conversation
    pub n_w: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { m: 20, n_w: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub hidden: usize,
    pub attention: usize,
    pub mlp_depth: usize,
    pub hops: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 1 means greedy decoding
    pub beam: usize,
    pub max_len: usize,
    /// model vocabulary size, reserved tokens included
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            embed_dim: net.embed_dim,
            encoder_hidden: net.encoder_hidden,
            hidden: net.hidden,
            attention: net.attention,
            mlp_depth: net.mlp_depth,
            hops: net.hops,
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 30,
            beam: 2,
            max_len: 30,
            vocab_size: 20_000,
        }
    }
}

impl ModelConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            embed_dim: self.embed_dim,
            encoder_hidden: self.encoder_hidden,
            hidden: self.hidden,
            attention: self.attention,
            mlp_depth: self.mlp_depth,
            hops: self.hops,
        }
    }

    pub fn search(&self) -> SearchMode {
        if self.beam == 1 {
            SearchMode::Greedy
        } else {
            SearchMode::Beam(self.beam)
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`; relative data paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            config.paths.resolve(dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.topic;
        let m = &self.model;
        let positive = [
            ("topic.topics", t.topics),
            ("topic.hidden", t.hidden),
            ("topic.vocab_size", t.vocab_size),
            ("topic.batch_size", t.batch_size),
            ("model.batch_size", m.batch_size),
            ("model.beam", m.beam),
            ("model.max_len", m.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if m.vocab_size <= crate::corpus::NUM_RESERVED {
            return Err(Error::Config(
                "model.vocab_size must exceed the 4 reserved tokens".into(),
            ));
        }
        if !(t.learning_rate > 0.0 && m.learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let l = &self.losses;
        if [l.gamma1, l.gamma2, l.lambda, l.theta]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        m.net().validate()
    }
}

impl Paths {
    fn resolve(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [&mut self.train, &mut self.valid, &mut self.test, &mut self.embeddings]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.topic_corpora.iter_mut().for_each(fix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_default_settings() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.topic.topics, 50);
        assert_eq!(c.topic.vocab_size, 10_000);
        assert_eq!(c.expansion.n_w, 100);
        assert_eq!(c.model.hidden, 512);
        assert_eq!(c.model.batch_size, 64);
        assert_eq!(c.model.learning_rate, 1e-4);
        assert_eq!(c.model.hops, 3);
        assert_eq!(c.model.beam, 2);
        assert_eq!(c.model.search(), SearchMode::Beam(2));
        assert_eq!(c.losses.gamma1, 0.1);
        assert_eq!(c.losses.gamma2, 0.1);
        assert_eq!(c.losses.lambda, 1.0);
        assert_eq!(c.losses.theta, 0.03);
    }

    #[test]
    fn partial_override() {
        let c = Config::from_toml("seed = 7\n[model]\nhidden = 32\nbeam = 1\n[losses]\ngamma1 = 0.0\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.hidden, 32);
        assert_eq!(c.model.batch_size, 64);
        assert_eq!(c.model.search(), SearchMode::Greedy);
        assert_eq!(c.losses.gamma1, 0.0);
        assert_eq!(c.losses.gamma2, 0.1);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.paths.train = Some("train.txt".into());
        c.paths.topic_corpora = vec!["dd.txt".into()];
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "[model]\nbeam = 0",
            "[model]\nhops = 0",
            "[model]\nvocab_size = 4",
            "[topic]\ntopics = 0",
            "[losses]\ntheta = -1.0",
            "[model]\nunknown = 1",
            "seed = \"x\"",
        ] {
            let err = Config::from_toml(bad).unwrap_err();
            assert!(err.is_user_error(), "{bad}");
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[paths]\ntrain = \"data/train.txt\"\ntest = \"/abs/test.txt\"\n").unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.paths.train.unwrap(), dir.path().join("data/train.txt"));
        assert_eq!(c.paths.test.unwrap(), PathBuf::from("/abs/test.txt"));
    }
}
