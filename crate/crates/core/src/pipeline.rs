//! Directory-level stages behind the command-line verbs.
//!
//! Each stage reads the artifacts of earlier stages from disk and writes
//! its own: `corpus/`, `context/`, `embeddings/`, then `runs/<id>/` with
//! checkpoints, `metrics.json`, loss curves and figure data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ContextConfig, CorpusConfig, EmbeddingConfig, EvalConfig, PipelineConfig};
use crate::context::ContextStats;
use crate::corpus::{corpus_report, load_corpus, parse_dataset, preprocess, save_corpus, CorpusMeta, CorpusSplit, CorpusStats};
use crate::embedding::FrozenEmbeddings;
use crate::error::{Error, Result};
use crate::experiments::{case_study, embedding_dim_sweep, run_ablation, train_and_evaluate, CaseStudy, SweepRow};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Components, ModelState};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest_hash(dir: &Path) -> Result<String> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(config_hash(&text))
}

/// Parses, filters, segments and splits a raw check-in file, optionally
/// keeping only the first `max_users` users.
pub fn run_preprocess(input: &Path, out: &Path, cfg: &CorpusConfig, max_users: Option<usize>) -> Result<CorpusMeta> {
    let parsed = parse_dataset(input, cfg.tz_mode)?;
    if parsed.skipped > 0 {
        warn!("skipped {} malformed rows", parsed.skipped);
    }
    let mut split = preprocess(parsed.checkins, cfg)?;
    if let Some(n) = max_users {
        split = split.subsample_users(n);
    }
    let meta = save_corpus(&split, out, cfg, parsed.skipped)?;
    corpus_report(&split, 10.0)?.write_csv(&out.join("report"))?;
    info!("{}", stats_line(&meta.stats));
    Ok(meta)
}

pub fn stats_line(s: &CorpusStats) -> String {
    format!(
        "users {} pois {} categories {} check-ins {} trajectories {} (train {}, test {})",
        s.users, s.pois, s.categories, s.checkins, s.trajectories, s.train_trajectories, s.test_trajectories
    )
}

pub fn run_build_context(corpus: &Path, out: &Path, cfg: &ContextConfig) -> Result<ContextStats> {
    let (split, meta) = load_corpus(corpus)?;
    let ctx = ContextStats::build(&split, cfg)?;
    ctx.save(out, cfg, &config_hash(&meta))?;
    Ok(ctx)
}

pub fn run_embed(context: &Path, out: &Path, cfg: &EmbeddingConfig) -> Result<FrozenEmbeddings> {
    let ctx = ContextStats::load(context)?;
    let emb = FrozenEmbeddings::build(&ctx, cfg)?;
    emb.save(out, cfg, &manifest_hash(context)?)?;
    Ok(emb)
}

/// Everything a training or evaluation run reads from disk.
pub struct Artifacts {
    pub split: CorpusSplit,
    pub ctx: ContextStats,
    pub frozen: Option<FrozenEmbeddings>,
    /// Dataset tag for reports (the corpus directory name).
    pub dataset: String,
}

impl Artifacts {
    pub fn load(corpus: &Path, context: &Path, embeddings: Option<&Path>) -> Result<Self> {
        let (split, _) = load_corpus(corpus)?;
        let ctx = ContextStats::load(context)?;
        if ctx.num_pois() != split.vocab.num_pois() || ctx.num_users() != split.num_users() {
            return Err(Error::data(format!(
                "context ({} POIs, {} users) does not match corpus ({} POIs, {} users)",
                ctx.num_pois(),
                ctx.num_users(),
                split.vocab.num_pois(),
                split.num_users()
            )));
        }
        let frozen = embeddings.map(FrozenEmbeddings::load).transpose()?;
        if let Some(f) = &frozen {
            if f.poi.nrows() != split.vocab.num_pois() || f.category.nrows() != split.vocab.num_categories() {
                return Err(Error::data("embeddings do not match the corpus vocabulary"));
            }
        }
        let dataset = corpus
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "corpus".into());
        Ok(Self { split, ctx, frozen, dataset })
    }

    fn frozen(&self) -> Result<FrozenEmbeddings> {
        self.frozen
            .clone()
            .ok_or_else(|| Error::Usage("this command needs --embeddings".into()))
    }
}

/// Default run directory name: verb, variant, seed and config hash.
pub fn run_id(verb: &str, cfg: &PipelineConfig) -> String {
    let variant: String = cfg
        .model
        .variant
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    format!("{verb}-{variant}-s{}-{}", cfg.train.seed, config_hash(cfg))
}

fn save_config(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(&dir.join("config.toml"), &text)
}

pub fn run_train(art: &Artifacts, cfg: &PipelineConfig, run_dir: &Path) -> Result<EvalReport> {
    Components::parse(&cfg.model.variant)?;
    save_config(run_dir, cfg)?;
    let (_, report) = train_and_evaluate(&art.split, &art.ctx, art.frozen()?, cfg, &art.dataset, Some(run_dir))?;
    Ok(report)
}

pub fn run_ablate(art: &Artifacts, variant: &str, cfg: &PipelineConfig, run_dir: &Path) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    cfg.model.variant = variant.to_string();
    Components::parse(variant)?;
    save_config(run_dir, &cfg)?;
    run_ablation(variant, &art.split, &art.ctx, art.frozen()?, &cfg, &art.dataset, Some(run_dir))
}

/// Evaluates a saved checkpoint on the test split.
pub fn run_evaluate(art: &Artifacts, checkpoint: &Path, cfg: &EvalConfig, out: Option<&Path>) -> Result<EvalReport> {
    let state = ModelState::load(checkpoint)?;
    if state.num_pois() != art.split.vocab.num_pois() || state.num_users() != art.split.num_users() {
        return Err(Error::data("checkpoint does not match the corpus"));
    }
    let mut report = evaluate(&state, &art.split, &art.ctx, cfg)?;
    report.dataset = art.dataset.clone();
    if let Some(dir) = out {
        write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(report)
}

pub fn run_sweep(art: &Artifacts, dims: &[usize], cfg: &PipelineConfig, run_dir: &Path) -> Result<Vec<SweepRow>> {
    save_config(run_dir, cfg)?;
    embedding_dim_sweep(dims, &art.split, &art.ctx, cfg, &art.dataset, Some(run_dir))
}

/// Resolves a raw user id, or `#<index>`, to a user index.
pub fn resolve_user(split: &CorpusSplit, user: &str) -> Result<usize> {
    if let Some(idx) = user.strip_prefix('#') {
        return idx
            .parse()
            .ok()
            .filter(|&i: &usize| i < split.num_users())
            .ok_or_else(|| Error::Usage(format!("user index {idx} out of range")));
    }
    split
        .vocab
        .user_index(user)
        .map(|u| u as usize)
        .ok_or_else(|| Error::Usage(format!("unknown user id {user:?}")))
}

pub fn run_case_study(corpus: &Path, checkpoint: &Path, user: &str, out: &Path) -> Result<CaseStudy> {
    let (split, _) = load_corpus(corpus)?;
    let state = ModelState::load(checkpoint)?;
    let u = resolve_user(&split, user)?;
    let cs = case_study(&state, &split, u)?;
    cs.write(out)?;
    Ok(cs)
}

/// Row of the results table assembled by [`run_report`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: String,
    pub report: EvalReport,
}

fn collect_metrics(dir: &Path, root: &Path, out: &mut Vec<ResultRow>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if p.file_name().is_some_and(|n| n == "checkpoints") {
                continue;
            }
            collect_metrics(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.json") {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let report: EvalReport = serde_json::from_str(&text)?;
            let run = p
                .parent()
                .and_then(|d| d.strip_prefix(root).ok())
                .map(|d| d.display().to_string())
                .unwrap_or_default();
            out.push(ResultRow { run, report });
        }
    }
    Ok(())
}

/// Dataset statistics for a corpus plus, when `runs` is given, a table of
/// every `metrics.json` found below it.
pub fn run_report(corpus: Option<&Path>, runs: Option<&Path>, out: &Path) -> Result<Vec<ResultRow>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if let Some(c) = corpus {
        let (split, meta) = load_corpus(c)?;
        let s = &meta.stats;
        let csv = format!(
            "users,pois,categories,checkins,trajectories,train_trajectories,test_trajectories\n{},{},{},{},{},{},{}\n",
            s.users, s.pois, s.categories, s.checkins, s.trajectories, s.train_trajectories, s.test_trajectories
        );
        write_text(&out.join("dataset_stats.csv"), &csv)?;
        let rep = corpus_report(&split, 10.0)?;
        rep.write_csv(out)?;
        info!("{}; {:.1}% of users within 30 km", stats_line(s), 100.0 * rep.share_within_30km);
    }
    let mut rows = Vec::new();
    if let Some(r) = runs {
        collect_metrics(r, r, &mut rows)?;
        let ks: Vec<usize> = rows
            .iter()
            .flat_map(|r| r.report.recall.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut csv = String::from("run,dataset,variant,seed,predictions");
        let mut md = String::from("| run | variant | seed |");
        let mut rule = String::from("|---|---|---|");
        for k in &ks {
            let _ = write!(csv, ",recall@{k},ndcg@{k}");
            let _ = write!(md, " Rec@{k} | NDCG@{k} |");
            rule.push_str("---|---|");
        }
        csv.push('\n');
        md = format!("{md}\n{rule}\n");
        for row in &rows {
            let r = &row.report;
            let _ = write!(csv, "{},{},{},{},{}", row.run, r.dataset, r.variant, r.seed, r.predictions);
            let _ = write!(md, "| {} | {} | {} |", row.run, r.variant, r.seed);
            for &k in &ks {
                let _ = write!(csv, ",{:.6},{:.6}", r.recall_at(k), r.ndcg_at(k));
                let _ = write!(md, " {:.4} | {:.4} |", r.recall_at(k), r.ndcg_at(k));
            }
            csv.push('\n');
            md.push('\n');
        }
        write_text(&out.join("results.csv"), &csv)?;
        write_text(&out.join("results.md"), &md)?;
    }
    Ok(rows)
}
