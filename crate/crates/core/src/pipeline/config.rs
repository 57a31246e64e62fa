use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{FrontendConfig, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::evaluator::DEFAULT_P;
use crate::io::short_hash;
use crate::model::{AeConfig, ModelFamily};
use crate::trainer::TrainConfig;

/// Environment variable overriding the cache / output root.
pub const ROOT_ENV: &str = "ASD_ROOT";
pub const DEFAULT_ROOT: &str = "asd-work";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub p: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { p: DEFAULT_P }
    }
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Cache and output root; falls back to `ASD_ROOT`, then `asd-work`.
    pub root: Option<PathBuf>,
    /// Defaults to the preset of the model family's frontend.
    pub frontend: Option<FrontendConfig>,
    pub model: AeConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}


/// The parts of a config that change results; `root` is excluded.
#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    frontend: &'a FrontendConfig,
    model: &'a AeConfig,
    train: &'a TrainConfig,
    eval: &'a EvalConfig,
}

impl RunConfig {
    /// Fills derived fields (frontend preset, seed and loss weights of the
    /// trainer) and validates everything knowable before seeing data.
    pub fn resolve(mut self) -> Result<Self> {
        let tag = self.model.family.frontend();
        let fe = self
            .frontend
            .get_or_insert_with(|| FrontendConfig::for_tag(tag));
        if fe.tag != tag {
            return Err(Error::config(format!(
                "{} model needs the {tag} frontend, config has {}",
                self.model.family.name(),
                fe.tag
            )));
        }
        fe.validate()?;
        self.train.seed = self.seed;
        self.model.loss_weights.validate()?;
        self.train.loss_weights = self.model.loss_weights;
        if self.model.family != ModelFamily::SemiSupervised || self.model.n_classes.is_some() {
            self.model.validate()?;
        }
        self.train.validate()?;
        if !(self.eval.p > 0.0 && self.eval.p <= 1.0) {
            return Err(Error::config(format!("eval.p must lie in (0, 1], got {}", self.eval.p)));
        }
        Ok(self)
    }

    pub fn frontend(&self) -> FrontendConfig {
        self.frontend
            .clone()
            .unwrap_or_else(|| FrontendConfig::for_tag(self.model.family.frontend()))
    }

    /// Hash of the feature extraction settings; keys the feature cache.
    pub fn frontend_hash(&self) -> String {
        let doc = toml::to_string(&self.frontend()).expect("frontend serializes");
        short_hash(format!("{doc}sample_rate={SAMPLE_RATE}\n").as_bytes())
    }

    pub fn hash(&self) -> String {
        let fe = self.frontend();
        let doc = toml::to_string(&Hashed {
            seed: self.seed,
            frontend: &fe,
            model: &self.model,
            train: &self.train,
            eval: &self.eval,
        })
        .expect("config serializes");
        short_hash(doc.as_bytes())
    }

    pub fn root(&self) -> PathBuf {
        self.root
            .clone()
            .or_else(|| std::env::var_os(ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Builds a config from defaults, an optional TOML file, and `key=value`
/// overrides with dotted keys (`train.batch_size=8`). Values are parsed as
/// TOML and fall back to plain strings.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut doc = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let user: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        merge(&mut doc, user);
    }
    for (k, v) in overrides {
        set_key(&mut doc, k, v)?;
    }
    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    cfg.resolve()
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

pub fn set_key(doc: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let t = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("'{key}' does not name a table")))?;
        cur = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let t = cur
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("'{key}' does not name a table")))?;
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::config(format!("override must be key=value, got '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrontendTag;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = load_config(None, &[]).unwrap();
        assert_eq!(c.frontend.as_ref().unwrap().tag, FrontendTag::Gammatone64);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.eval.p, 0.1);
    }

    #[test]
    fn overrides_reach_every_section() {
        let c = load_config(
            None,
            &ov(&[
                ("train.batch_size", "8"),
                ("model.encoder_filters", "[8, 16, 32]"),
                ("seed", "7"),
                ("eval.p", "0.2"),
            ]),
        )
        .unwrap();
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.model.encoder_filters, vec![8, 16, 32]);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.eval.p, 0.2);
    }

    #[test]
    fn family_switch_picks_frontend_and_weights_checked() {
        let c = load_config(None, &ov(&[("model.family", "baseline-dense")])).unwrap();
        assert_eq!(c.frontend().tag, FrontendTag::Mel128);
        let err = load_config(
            None,
            &ov(&[
                ("model.family", "semi-supervised"),
                ("model.loss_weights.alpha", "0.6"),
                ("model.loss_weights.beta", "0.6"),
            ]),
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let ok = load_config(
            None,
            &ov(&[
                ("model.family", "semi-supervised"),
                ("model.loss_weights.alpha", "0.7"),
                ("model.loss_weights.beta", "0.3"),
            ]),
        )
        .unwrap();
        assert_eq!(ok.train.loss_weights.beta, 0.3);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(load_config(None, &ov(&[("train.batchsize", "8")])).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[train]\nmax_epochs = 5\n").unwrap();
        let c = load_config(Some(&p), &ov(&[("train.max_epochs", "6")])).unwrap();
        assert_eq!((c.seed, c.train.max_epochs), (3, 6));
        let echoed: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(echoed, c);
    }

    #[test]
    fn hash_tracks_results_not_root() {
        let a = load_config(None, &[]).unwrap();
        let mut b = a.clone();
        b.root = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        let c = load_config(None, &ov(&[("frontend.window_ms", "64.0")]));
        // A partial frontend table is incomplete without a tag.
        assert!(c.is_err());
        let mut d = a.clone();
        d.frontend.as_mut().unwrap().window_ms = 64.0;
        assert_ne!(a.frontend_hash(), d.frontend_hash());
    }
}
