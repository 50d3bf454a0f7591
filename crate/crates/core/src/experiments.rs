//! Ablations, the embedding-dimension sweep and the trajectory case study.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::config::PipelineConfig;
use crate::context::{cosine, ContextStats};
use crate::corpus::{Checkin, CorpusSplit};
use crate::embedding::FrozenEmbeddings;
use crate::error::{Error, Result};
use crate::long_term::encode_history;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Components, ModelState};
use crate::plot::{write_line_chart, Series};
use crate::train::{train, TrainOutcome};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Trains and evaluates one model; writes `metrics.json` and the loss
/// curve plot into `run_dir` when given.
pub fn train_and_evaluate(
    split: &CorpusSplit,
    ctx: &ContextStats,
    frozen: FrozenEmbeddings,
    cfg: &PipelineConfig,
    dataset: &str,
    run_dir: Option<&Path>,
) -> Result<(TrainOutcome, EvalReport)> {
    let start = Instant::now();
    let out = train(split, ctx, frozen, cfg, run_dir)?;
    let mut report = evaluate(&out.state, split, ctx, &cfg.eval)?;
    report.dataset = dataset.to_string();
    report.runtime_secs = start.elapsed().as_secs_f64();
    info!("{} [{}]: {}", dataset, report.variant, report.summary());
    if let Some(dir) = run_dir {
        write_json(&dir.join("metrics.json"), &report)?;
        let series = |label, f: fn(&crate::train::EpochRecord) -> Option<f64>| Series {
            label,
            points: out.history.iter().filter_map(|r| Some((r.epoch as f64, f(r)?))).collect(),
        };
        write_line_chart(
            &dir.join("loss_curve.svg"),
            "Loss in training and test",
            "epoch",
            "loss",
            &[series("train", |r| Some(r.train_loss)), series("test", |r| r.test_loss)],
        )?;
    }
    Ok((out, report))
}

/// Trains and evaluates the model with the components named by `variant`
/// removed.
pub fn run_ablation(
    variant: &str,
    split: &CorpusSplit,
    ctx: &ContextStats,
    frozen: FrozenEmbeddings,
    cfg: &PipelineConfig,
    dataset: &str,
    run_dir: Option<&Path>,
) -> Result<EvalReport> {
    Components::parse(variant)?;
    let mut cfg = cfg.clone();
    cfg.model.variant = variant.to_string();
    Ok(train_and_evaluate(split, ctx, frozen, &cfg, dataset, run_dir)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub report: EvalReport,
}

/// Retrains graph embeddings and the model for every POI embedding size.
/// Writes `sweep_dim.csv` and `sweep_dim.svg`.
pub fn embedding_dim_sweep(
    dims: &[usize],
    split: &CorpusSplit,
    ctx: &ContextStats,
    cfg: &PipelineConfig,
    dataset: &str,
    run_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Usage("sweep dims must be a non-empty list of positive sizes".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        let mut c = cfg.clone();
        c.embedding.poi_dim = dim;
        info!("sweep: D_l = {dim}");
        let frozen = FrozenEmbeddings::build(ctx, &c.embedding)?;
        let sub = run_dir.map(|d| d.join(format!("dim_{dim}")));
        let (_, report) = train_and_evaluate(split, ctx, frozen, &c, dataset, sub.as_deref())?;
        rows.push(SweepRow { dim, report });
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ks: Vec<usize> = cfg.eval.ks.clone();
        let mut s = String::from("dim");
        for k in &ks {
            let _ = write!(s, ",recall@{k},ndcg@{k}");
        }
        s.push('\n');
        for r in &rows {
            let _ = write!(s, "{}", r.dim);
            for &k in &ks {
                let _ = write!(s, ",{:.6},{:.6}", r.report.recall_at(k), r.report.ndcg_at(k));
            }
            s.push('\n');
        }
        let p = dir.join("sweep_dim.csv");
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        let k = if ks.contains(&5) { 5 } else { ks[0] };
        let pts = |f: fn(&EvalReport, usize) -> f64| rows.iter().map(|r| (r.dim as f64, f(&r.report, k))).collect();
        let rl = format!("Rec@{k}");
        let nl = format!("NDCG@{k}");
        write_line_chart(
            &dir.join("sweep_dim.svg"),
            "Embedding dimension",
            "D_l",
            "metric",
            &[
                Series { label: &rl, points: pts(EvalReport::recall_at) },
                Series { label: &nl, points: pts(EvalReport::ndcg_at) },
            ],
        )?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub poi: u32,
    pub lat: f64,
    pub lon: f64,
    pub local_time: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMatch {
    /// Index into the user's chronological trajectory list.
    pub index: usize,
    pub similarity: f64,
    pub weekday: String,
    pub path: Vec<PathPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub user: usize,
    pub current: TrajectoryMatch,
    /// All earlier trajectories, most similar first.
    pub ranked: Vec<TrajectoryMatch>,
}

impl CaseStudy {
    pub fn top(&self) -> &TrajectoryMatch {
        &self.ranked[0]
    }

    /// `case_study.json` plus `case_study_paths.csv` with both paths.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("case_study.json"), self)?;
        let mut s = String::from("role,trajectory,step,poi,lat,lon,local_time\n");
        for (role, m) in [("current", &self.current), ("most_similar", self.top())] {
            for (i, p) in m.path.iter().enumerate() {
                let _ = writeln!(s, "{role},{},{i},{},{},{},{}", m.index, p.poi, p.lat, p.lon, p.local_time);
            }
        }
        let p = dir.join("case_study_paths.csv");
        fs::write(&p, s).map_err(|e| Error::io(&p, e))
    }
}

fn describe(index: usize, traj: &[Checkin], similarity: f64) -> TrajectoryMatch {
    TrajectoryMatch {
        index,
        similarity,
        weekday: traj[0].local_time().format("%A").to_string(),
        path: traj
            .iter()
            .map(|c| PathPoint {
                poi: c.poi,
                lat: c.lat,
                lon: c.lon,
                local_time: c.local_time().format("%Y-%m-%d %H:%M").to_string(),
            })
            .collect(),
    }
}

/// Mean history-encoder state of every trajectory of `user`, then cosine
/// similarity of each earlier trajectory to the last one.
pub fn case_study(state: &ModelState, split: &CorpusSplit, user: usize) -> Result<CaseStudy> {
    if user >= split.num_users() {
        return Err(Error::Usage(format!("user {user} out of range (0..{})", split.num_users())));
    }
    let trajs: Vec<&[Checkin]> = split.user_trajectories(user).map(|t| t.checkins.as_slice()).collect();
    if trajs.len() < 2 {
        return Err(Error::data(format!("user {user} has fewer than two trajectories")));
    }
    let mut t = Tape::new(&state.store);
    let enc = encode_history(&mut t, &state.long, &state.tables, &trajs);
    let rows = t.value(enc.rows);
    let pooled: Vec<Vec<f64>> = enc
        .spans
        .iter()
        .map(|&(off, len)| {
            let block = rows.slice(ndarray::s![off..off + len, ..]);
            block.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
        })
        .collect();
    let cur = trajs.len() - 1;
    let mut ranked: Vec<TrajectoryMatch> = (0..cur)
        .map(|i| describe(i, trajs[i], cosine(&pooled[i], &pooled[cur])))
        .collect();
    ranked.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
    Ok(CaseStudy {
        user,
        current: describe(cur, trajs[cur], 1.0),
        ranked,
    })
}
