//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths in a
//! config file resolve against the file's directory; overrides given on the
//! command line resolve against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::synth::{ClickRule, SynthConfig};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

const PATH_KEYS: [&str; 6] = ["news", "train_behaviors", "eval_behaviors", "embeddings", "checkpoint", "output"];

const MODEL_KEYS: [&str; 10] = [
    "embed_dim",
    "model_dim",
    "heads",
    "attn_dim",
    "mlp_hidden",
    "user_mode",
    "gru_standard_reset",
    "fields",
    "max_history",
    "zero_init_user_out",
];

const OTHER_KEYS: [&str; 24] = [
    "seed",
    "learning_rate",
    "batch_size",
    "negatives",
    "dropout_rate",
    "mask_noise_rate",
    "epochs",
    "shard_size",
    "clip_norm",
    "parallel",
    "axis",
    "image_proportion",
    "proportion_step",
    "user_id",
    "impression_id",
    "synth_users",
    "synth_news",
    "synth_click_rule",
    "synth_image_dependent",
    "synth_impressions_per_user",
    "synth_history_len",
    "synth_history_noise",
    "synth_field_noise",
    "synth_topic_spread",
];

/// Parses `key=value` lines into ordered pairs.
pub fn parse_kv(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: format!("expected key=value, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub news: Option<PathBuf>,
    pub train_behaviors: Option<PathBuf>,
    pub eval_behaviors: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub axis: Option<String>,
    pub image_proportion: f64,
    pub proportion_step: f64,
    pub user_id: Option<String>,
    pub impression_id: Option<String>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            news: None,
            train_behaviors: None,
            eval_behaviors: None,
            embeddings: None,
            checkpoint: None,
            output: None,
            synth: SynthConfig::new(train.seed, 2000, 500, model.embed_dim, ClickRule::Similarity),
            model,
            train,
            axis: None,
            image_proportion: 1.0,
            proportion_step: 0.1,
            user_id: None,
            impression_id: None,
        }
    }
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_kv(&text, path)?, base)?;
        cfg.apply(overrides, Path::new("."))?;
        Ok(cfg)
    }

    /// Applies pairs in order; later keys win. Unknown keys are errors.
    pub fn apply(&mut self, pairs: &[(String, String)], base: &Path) -> Result<()> {
        let mut embed_dim_set = false;
        for (k, v) in pairs {
            let (k, v) = (k.as_str(), v.as_str());
            if PATH_KEYS.contains(&k) {
                let p = if Path::new(v).is_absolute() { PathBuf::from(v) } else { base.join(v) };
                let slot = match k {
                    "news" => &mut self.news,
                    "train_behaviors" => &mut self.train_behaviors,
                    "eval_behaviors" => &mut self.eval_behaviors,
                    "embeddings" => &mut self.embeddings,
                    "checkpoint" => &mut self.checkpoint,
                    _ => &mut self.output,
                };
                *slot = Some(p);
                continue;
            }
            if MODEL_KEYS.contains(&k) {
                self.model.apply_kv([(k, v)])?;
                embed_dim_set |= k == "embed_dim";
                continue;
            }
            match k {
                "seed" => {
                    let s = num(k, v)?;
                    self.model.seed = s;
                    self.train.seed = s;
                    self.synth.seed = s;
                }
                "learning_rate" => self.train.learning_rate = num(k, v)?,
                "batch_size" => self.train.batch_size = num(k, v)?,
                "negatives" => self.train.negatives = num(k, v)?,
                "dropout_rate" => self.train.dropout_rate = num(k, v)?,
                "mask_noise_rate" => self.train.mask_noise_rate = num(k, v)?,
                "epochs" => self.train.epochs = num(k, v)?,
                "shard_size" => self.train.shard_size = num(k, v)?,
                "clip_norm" => {
                    self.train.clip_norm = match v {
                        "" | "none" => None,
                        _ => Some(num(k, v)?),
                    }
                }
                "parallel" => {
                    self.train.parallelism = if num::<bool>(k, v)? {
                        Parallelism::Parallel
                    } else {
                        Parallelism::Sequential
                    }
                }
                "axis" => self.axis = Some(v.to_string()),
                "image_proportion" => self.image_proportion = num(k, v)?,
                "proportion_step" => self.proportion_step = num(k, v)?,
                "user_id" => self.user_id = Some(v.to_string()),
                "impression_id" => self.impression_id = Some(v.to_string()),
                "synth_users" => self.synth.n_users = num(k, v)?,
                "synth_news" => self.synth.n_news = num(k, v)?,
                "synth_click_rule" => self.synth.click_rule = v.parse()?,
                "synth_image_dependent" => {
                    if num::<bool>(k, v)? {
                        self.synth = self.synth.clone().image_dependent();
                    }
                }
                "synth_impressions_per_user" => self.synth.impressions_per_user = num(k, v)?,
                "synth_history_len" => {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| Error::Config(format!("`{k}` expects `min,max`, got `{v}`")))?;
                    self.synth.history_len = (num(k, a.trim())?, num(k, b.trim())?);
                }
                "synth_field_noise" => {
                    let parts: Vec<f64> = v.split(',').map(|p| num(k, p.trim())).collect::<Result<_>>()?;
                    self.synth.field_noise = match parts.as_slice() {
                        [x] => [*x; 4],
                        [a, b, c, d] => [*a, *b, *c, *d],
                        _ => return Err(Error::Config(format!("`{k}` expects 1 or 4 values"))),
                    };
                }
                "synth_topic_spread" => self.synth.topic_spread = num(k, v)?,
                "synth_history_noise" => self.synth.history_noise = num(k, v)?,
                _ => {
                    let mut known: Vec<&str> = PATH_KEYS.iter().chain(&MODEL_KEYS).chain(&OTHER_KEYS).copied().collect();
                    known.sort_unstable();
                    return Err(Error::Config(format!("unknown key `{k}`; known keys: {}", known.join(", "))));
                }
            }
        }
        if embed_dim_set {
            self.synth.embed_dim = self.model.embed_dim;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.image_proportion) {
            return Err(Error::Config("image_proportion must be in [0, 1]".into()));
        }
        if !(self.proportion_step > 0.0 && self.proportion_step <= 1.0) {
            return Err(Error::Config("proportion_step must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn require<'a>(&self, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::user::UserMode;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = parse_kv("# desk\n\nepochs = 3\nuser_mode=gru\n", Path::new("c.cfg")).unwrap();
        assert_eq!(kv, pairs(&[("epochs", "3"), ("user_mode", "gru")]));
        assert!(matches!(parse_kv("epochs 3\n", Path::new("c.cfg")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn later_keys_win_and_paths_resolve() {
        let mut c = RunConfig::default();
        c.apply(&pairs(&[("epochs", "3"), ("news", "data/news.tsv"), ("epochs", "4")]), Path::new("/cfg")).unwrap();
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.news, Some(PathBuf::from("/cfg/data/news.tsv")));
        c.apply(&pairs(&[("news", "/abs/n.tsv"), ("user_mode", "self-att"), ("seed", "9")]), Path::new("/x")).unwrap();
        assert_eq!(c.news, Some(PathBuf::from("/abs/n.tsv")));
        assert_eq!(c.model.user_mode, UserMode::SelfAtt);
        assert_eq!((c.model.seed, c.train.seed, c.synth.seed), (9, 9, 9));
    }

    #[test]
    fn unknown_key_lists_known_ones() {
        let err = RunConfig::default().apply(&pairs(&[("epoch", "3")]), Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key `epoch`") && msg.contains("epochs"), "{msg}");
    }

    #[test]
    fn embed_dim_follows_into_synth() {
        let mut c = RunConfig::default();
        c.apply(&pairs(&[("embed_dim", "8"), ("heads", "2"), ("model_dim", "4")]), Path::new(".")).unwrap();
        assert_eq!(c.synth.embed_dim, 8);
        c.validate().unwrap();
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply(&pairs(&[("epochs", "many")]), Path::new(".")), Err(Error::Config(_))));
        c.apply(&pairs(&[("dropout_rate", "1.5")]), Path::new(".")).unwrap();
        assert!(c.validate().is_err());
    }
}
