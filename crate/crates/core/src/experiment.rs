//! Command implementations shared by the CLI and the integration tests.
//!
//! Every command writes its primary output to the given writer. Wall-clock
//! timings only go to the log.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::behaviors::{parse_behaviors_tsv, write_behaviors_tsv};
use crate::data::dataset::Dataset;
use crate::data::embeddings::{degrade_images, load_embeddings_with_dim, save_embeddings, EmbeddingStore};
use crate::data::news::{parse_news_tsv, write_news_tsv};
use crate::data::synth::synth_dataset;
use crate::encoder::FieldSet;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Model, ModelConfig};
use crate::training::checkpoint::{load_checkpoint, save_checkpoint};
use crate::training::{EpochStats, Trainer};
use crate::user::{argsort_desc, UserMode};

pub const AXES: [&str; 3] = ["user_mode", "image_proportion", "fields"];

pub fn load_store(cfg: &RunConfig, dim: usize) -> Result<EmbeddingStore> {
    let store = load_embeddings_with_dim(cfg.require("embeddings", &cfg.embeddings)?, dim)?;
    if let Some(news) = &cfg.news {
        let missing: Vec<String> = parse_news_tsv(news)?
            .into_iter()
            .filter(|n| store.get(&n.news_id).is_none())
            .map(|n| n.news_id)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingNews(missing));
        }
    }
    Ok(store)
}

pub fn load_split(store: &EmbeddingStore, path: &Path) -> Result<Dataset> {
    Dataset::build(store, &parse_behaviors_tsv(path)?)
}

/// Trains a fresh model, calling `on_epoch` after every epoch.
pub fn train_model(
    model_cfg: ModelConfig,
    cfg: &RunConfig,
    train: &Dataset,
    mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(Model::new(model_cfg)?, cfg.train.clone())?;
    for _ in 0..cfg.train.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(train)?;
        log::info!(
            "epoch {} mean_loss {:.6} samples {} wall {:.2}s",
            stats.epoch,
            stats.mean_loss,
            stats.samples,
            start.elapsed().as_secs_f64()
        );
        on_epoch(&trainer, &stats)?;
    }
    Ok(trainer)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let ckpt = cfg.require("checkpoint", &cfg.checkpoint)?.to_path_buf();
    let store = load_store(cfg, cfg.model.embed_dim)?;
    let train = load_split(&store, cfg.require("train_behaviors", &cfg.train_behaviors)?)?;
    if train.impressions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut history = Vec::new();
    writeln!(out, "epoch\tmean_loss\tsamples")?;
    let trainer = train_model(cfg.model.clone(), cfg, &train, |t, s| {
        save_checkpoint(&ckpt, &t.model, &t.adam, s.epoch, cfg.train.seed)?;
        writeln!(out, "{}\t{:.9}\t{}", s.epoch, s.mean_loss, s.samples)?;
        history.push(s.clone());
        Ok(())
    })?;
    if cfg.train.epochs == 0 {
        save_checkpoint(&ckpt, &trainer.model, &trainer.adam, 0, cfg.train.seed)?;
    }
    Ok(history)
}

fn eval_split<'a>(cfg: &'a RunConfig) -> Result<&'a Path> {
    cfg.eval_behaviors
        .as_deref()
        .ok_or_else(|| Error::Config("`eval_behaviors` is required for this command".into()))
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<MetricsReport> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg.require("checkpoint", &cfg.checkpoint)?)?;
    let store = load_store(cfg, ckpt.model.config.embed_dim)?;
    let data = load_split(&store, eval_split(cfg)?)?;
    let start = Instant::now();
    let eval = ckpt.model.evaluate(&data, cfg.train.parallelism)?;
    log::info!("evaluated {} impressions in {:.2}s", data.impressions.len(), start.elapsed().as_secs_f64());
    write!(out, "{}", eval.report.to_kv())?;
    writeln!(out, "empty_history={}", eval.empty_history)?;
    if let Some(path) = &cfg.output {
        fs::write(path, eval.report.to_json())?;
    }
    Ok(eval.report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedCandidate {
    pub news_id: String,
    pub score: f64,
    pub clicked: bool,
}

pub fn cmd_rank(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<RankedCandidate>> {
    cfg.validate()?;
    let imp_id = cfg
        .impression_id
        .as_deref()
        .ok_or_else(|| Error::Config("`impression_id` is required for rank".into()))?;
    let ckpt = load_checkpoint(cfg.require("checkpoint", &cfg.checkpoint)?)?;
    let store = load_store(cfg, ckpt.model.config.embed_dim)?;
    let data = load_split(&store, eval_split(cfg)?)?;
    let imp = data
        .find_impression(imp_id)
        .ok_or_else(|| Error::UnknownId(imp_id.to_string()))?;
    if let Some(u) = &cfg.user_id {
        if &imp.user_id != u {
            return Err(Error::UnknownId(format!("{u} (impression {imp_id} belongs to {})", imp.user_id)));
        }
    }
    let reprs = ckpt.model.encode_all(&data.features, cfg.train.parallelism)?;
    let scores = ckpt.model.score_impression(&reprs, imp)?;
    let ranked: Vec<RankedCandidate> = argsort_desc(&scores)
        .into_iter()
        .map(|i| RankedCandidate {
            news_id: data.news_ids[imp.candidates[i]].clone(),
            score: scores[i],
            clicked: imp.labels[i],
        })
        .collect();
    writeln!(out, "rank\tnews_id\tscore\tclicked")?;
    for (r, c) in ranked.iter().enumerate() {
        writeln!(out, "{}\t{}\t{:.9}\t{}", r + 1, c.news_id, c.score, u8::from(c.clicked))?;
    }
    Ok(ranked)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub condition: String,
    pub report: MetricsReport,
}

pub fn ablation_tsv(axis: &str, rows: &[AblationRow]) -> String {
    let mut s = format!("{axis}\tauc\tmrr\tndcg5\tndcg10\n");
    for r in rows {
        s.push_str(&r.condition);
        for (_, m) in r.report.named() {
            match m.mean {
                Some(v) => s.push_str(&format!("\t{v:.6}")),
                None => s.push_str("\tundefined"),
            }
        }
        s.push('\n');
    }
    s
}

/// Proportions `0, step, 2 step, ..., 1`.
pub fn proportion_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| (i as f64 / n as f64 * 1e9).round() / 1e9).collect()
}

/// Trains one condition on `store` and evaluates it.
pub fn run_condition(model_cfg: ModelConfig, cfg: &RunConfig, store: &EmbeddingStore, train: &[crate::data::ImpressionRecord], eval: &[crate::data::ImpressionRecord]) -> Result<MetricsReport> {
    let train = Dataset::build(store, train)?;
    let eval = Dataset::build(store, eval)?;
    let trainer = train_model(model_cfg, cfg, &train, |_, _| Ok(()))?;
    Ok(trainer.model.evaluate(&eval, cfg.train.parallelism)?.report)
}

/// Seed of the image-degradation stream; shared across proportions so the
/// blanked sets are nested.
pub fn image_seed(seed: u64) -> u64 {
    seed ^ 0x1A6E_5EED
}

pub fn ablate(cfg: &RunConfig, axis: &str, store: &EmbeddingStore, train: &[crate::data::ImpressionRecord], eval: &[crate::data::ImpressionRecord]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    match axis {
        "user_mode" => {
            for mode in UserMode::ABLATION_ROWS {
                let m = ModelConfig {
                    user_mode: mode,
                    ..cfg.model.clone()
                };
                rows.push(AblationRow {
                    condition: mode.label().to_string(),
                    report: run_condition(m, cfg, store, train, eval)?,
                });
            }
        }
        "fields" => {
            for label in FieldSet::ABLATION_ROWS {
                let m = ModelConfig {
                    fields: label.parse()?,
                    ..cfg.model.clone()
                };
                rows.push(AblationRow {
                    condition: label.to_string(),
                    report: run_condition(m, cfg, store, train, eval)?,
                });
            }
        }
        "image_proportion" => {
            for p in proportion_grid(cfg.proportion_step) {
                let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.train.seed));
                let degraded = degrade_images(store, p, &mut rng)?;
                rows.push(AblationRow {
                    condition: format!("{p:.2}"),
                    report: run_condition(cfg.model.clone(), cfg, &degraded, train, eval)?,
                });
            }
        }
        other => {
            return Err(Error::Config(format!("unknown ablation axis `{other}`; valid axes: {}", AXES.join(", "))));
        }
    }
    Ok(rows)
}

pub fn cmd_ablate(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let axis = cfg
        .axis
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`axis` is required for ablate; valid axes: {}", AXES.join(", "))))?;
    if !AXES.contains(&axis) {
        return Err(Error::Config(format!("unknown ablation axis `{axis}`; valid axes: {}", AXES.join(", "))));
    }
    let store = load_store(cfg, cfg.model.embed_dim)?;
    let train = parse_behaviors_tsv(cfg.require("train_behaviors", &cfg.train_behaviors)?)?;
    let eval = parse_behaviors_tsv(eval_split(cfg)?)?;
    let rows = ablate(cfg, axis, &store, &train, &eval)?;
    let table = ablation_tsv(axis, &rows);
    out.write_all(table.as_bytes())?;
    if let Some(path) = &cfg.output {
        fs::write(path, &table)?;
    }
    Ok(rows)
}

/// Writes `news.tsv`, `behaviors_train.tsv`, `behaviors_test.tsv` and
/// `embeddings.vlnr` into the `output` directory.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = cfg.require("output", &cfg.output)?;
    fs::create_dir_all(dir)?;
    let d = synth_dataset(&cfg.synth)?;
    write_news_tsv(fs::File::create(dir.join("news.tsv"))?, &d.news)?;
    write_behaviors_tsv(fs::File::create(dir.join("behaviors_train.tsv"))?, &d.train)?;
    write_behaviors_tsv(fs::File::create(dir.join("behaviors_test.tsv"))?, &d.test)?;
    save_embeddings(&d.store, dir.join("embeddings.vlnr"))?;
    writeln!(
        out,
        "news={}\ntrain_impressions={}\ntest_impressions={}\nembed_dim={}\nclick_rule={}",
        d.news.len(),
        d.train.len(),
        d.test.len(),
        d.store.dim(),
        d.config.click_rule
    )?;
    Ok(())
}
