//! Check-in embeddings.
//!
//! POI and category vectors come from node2vec over the training transition
//! graphs and stay frozen; user, time-slot and weekday tables are trainable
//! parameters. A check-in is embedded as
//! `V_l[poi] ⊕ V_c[category] ⊕ V_w[weekday] ⊕ V_t[slot]`.

use std::path::Path;

use log::warn;
use ndarray::{s, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};
use crate::config::{config_hash, EmbeddingConfig};
use crate::context::{ContextStats, TransitionGraph};
use crate::corpus::{Checkin, NUM_TIME_SLOTS, NUM_WEEKDAYS};
use crate::error::{Error, Result};
use crate::nn::uniform;
use crate::store::{ArrayReader, ArrayWriter};

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbeddingConfig {
    pub dim: usize,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub return_p: f64,
    pub inout_q: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
}

impl GraphEmbeddingConfig {
    pub fn from_config(cfg: &EmbeddingConfig, dim: usize) -> Self {
        Self {
            dim,
            walk_length: cfg.walk_length,
            walks_per_node: cfg.walks_per_node,
            window: cfg.window,
            return_p: cfg.return_p,
            inout_q: cfg.inout_q,
            epochs: cfg.epochs,
            negatives: cfg.negatives,
            learning_rate: cfg.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("dim", self.dim),
            ("walk_length", self.walk_length),
            ("walks_per_node", self.walks_per_node),
            ("window", self.window),
            ("epochs", self.epochs),
        ];
        for (name, v) in ints {
            if v == 0 {
                return Err(Error::Usage(format!("embedding {name} must be positive")));
            }
        }
        let reals = [
            ("return_p", self.return_p),
            ("inout_q", self.inout_q),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!("embedding {name} must be positive")));
            }
        }
        Ok(())
    }
}

fn next_step<R: Rng>(
    graph: &TransitionGraph,
    prev: Option<u32>,
    cur: u32,
    p: f64,
    q: f64,
    rng: &mut R,
) -> Option<u32> {
    let nbrs = graph.neighbors(cur);
    if nbrs.is_empty() {
        return None;
    }
    let weight = |&(x, w): &(u32, f64)| match prev {
        None => w,
        Some(t) if x == t => w / p,
        Some(t) if graph.has_edge(t, x) => w,
        Some(_) => w / q,
    };
    let total: f64 = nbrs.iter().map(weight).sum();
    let mut r = rng.random::<f64>() * total;
    for n in nbrs {
        r -= weight(n);
        if r < 0.0 {
            return Some(n.0);
        }
    }
    nbrs.last().map(|n| n.0)
}

/// Second-order biased walks: `walks_per_node` rounds, each starting once
/// from every node in shuffled order. Walks stop early at nodes without
/// out-edges.
pub fn random_walks<R: Rng>(graph: &TransitionGraph, cfg: &GraphEmbeddingConfig, rng: &mut R) -> Vec<Vec<u32>> {
    let mut starts: Vec<u32> = (0..graph.num_nodes() as u32).collect();
    let mut walks = Vec::with_capacity(starts.len() * cfg.walks_per_node);
    for _ in 0..cfg.walks_per_node {
        starts.shuffle(rng);
        for &start in &starts {
            let mut walk = vec![start];
            while walk.len() < cfg.walk_length {
                let prev = walk.len().checked_sub(2).map(|i| walk[i]);
                let cur = *walk.last().unwrap();
                match next_step(graph, prev, cur, cfg.return_p, cfg.inout_q, rng) {
                    Some(n) => walk.push(n),
                    None => break,
                }
            }
            walks.push(walk);
        }
    }
    walks
}

fn sigmoid(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Skip-gram with negative sampling over `walks`. Returns the input vectors.
pub fn skip_gram<R: Rng>(
    num_nodes: usize,
    walks: &[Vec<u32>],
    cfg: &GraphEmbeddingConfig,
    rng: &mut R,
) -> Mat {
    let dim = cfg.dim;
    let mut counts = vec![0usize; num_nodes];
    for w in walks {
        for &n in w {
            counts[n as usize] += 1;
        }
    }
    let mut input = Array2::<f64>::zeros((num_nodes, dim));
    for (n, mut row) in input.rows_mut().into_iter().enumerate() {
        if counts[n] > 0 {
            let r = 0.5 / dim as f64;
            row.mapv_inplace(|_| rng.random_range(-r..r));
        }
    }
    let mut output = Array2::<f64>::zeros((num_nodes, dim));
    let noise = match WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75))) {
        Ok(d) => d,
        Err(_) => return input,
    };

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.min(cfg.window) + (w.len() - 1 - i).min(cfg.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut grad = vec![0.0; dim];
    let mut trained = vec![false; num_nodes];

    for _ in 0..cfg.epochs {
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(walk.len() - 1);
                for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = (cfg.learning_rate * (1.0 - done as f64 / total))
                        .max(cfg.learning_rate * 1e-4);
                    done += 1;
                    trained[center as usize] = true;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (ctx as usize, 1.0)
                        } else {
                            let n = noise.sample(rng);
                            if n == ctx as usize {
                                continue;
                            }
                            (n, 0.0)
                        };
                        let vin = input.row(center as usize);
                        let mut vout = output.row_mut(target);
                        let score = sigmoid(vin.dot(&vout));
                        let g = lr * (label - score);
                        for d in 0..dim {
                            grad[d] += g * vout[d];
                            vout[d] += g * vin[d];
                        }
                    }
                    let mut vin = input.row_mut(center as usize);
                    for d in 0..dim {
                        vin[d] += grad[d];
                    }
                }
            }
        }
    }
    let missing: Vec<usize> = (0..num_nodes).filter(|&n| !trained[n]).collect();
    for &n in &missing {
        input.row_mut(n).fill(0.0);
    }
    if !missing.is_empty() {
        warn!(
            "{} of {num_nodes} graph nodes never appeared in a walk context; using zero vectors",
            missing.len()
        );
    }
    input
}

/// node2vec embedding of `graph`; deterministic for a given seed.
pub fn train_graph_embedding(graph: &TransitionGraph, cfg: &GraphEmbeddingConfig, seed: u64) -> Result<Mat> {
    cfg.validate()?;
    if graph.num_nodes() == 0 {
        return Err(Error::data("cannot embed an empty graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walks = random_walks(graph, cfg, &mut rng);
    Ok(skip_gram(graph.num_nodes(), &walks, cfg, &mut rng))
}

/// Frozen POI and category tables.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEmbeddings {
    pub poi: Mat,
    pub category: Mat,
}

impl FrozenEmbeddings {
    pub fn build(ctx: &ContextStats, cfg: &EmbeddingConfig) -> Result<Self> {
        let poi = train_graph_embedding(
            &ctx.poi_graph,
            &GraphEmbeddingConfig::from_config(cfg, cfg.poi_dim),
            cfg.seed,
        )?;
        let category = train_graph_embedding(
            &ctx.category_graph,
            &GraphEmbeddingConfig::from_config(cfg, cfg.category_dim),
            cfg.seed.wrapping_add(1),
        )?;
        Ok(Self { poi, category })
    }

    pub fn poi_dim(&self) -> usize {
        self.poi.ncols()
    }

    pub fn category_dim(&self) -> usize {
        self.category.ncols()
    }

    pub fn save(&self, dir: &Path, cfg: &EmbeddingConfig, context_hash: &str) -> Result<()> {
        let mut w = ArrayWriter::create(dir, "embeddings")?;
        w.meta("config_hash", config_hash(cfg))?;
        w.meta("config", cfg)?;
        w.meta("context_hash", context_hash)?;
        for (name, m) in [("poi", &self.poi), ("category", &self.category)] {
            let data: Vec<f64> = m.iter().copied().collect();
            w.f64s(name, &[m.nrows(), m.ncols()], &data)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let r = ArrayReader::open(dir, "embeddings")?;
        Ok(Self {
            poi: r.matrix("poi")?,
            category: r.matrix("category")?,
        })
    }
}

/// Dimensions of the trainable lookup tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableDims {
    pub user: usize,
    pub slot: usize,
    pub weekday: usize,
}

/// All lookup tables used by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub frozen: FrozenEmbeddings,
    pub user: ParamId,
    pub slot: ParamId,
    pub weekday: ParamId,
}

impl EmbeddingTables {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        frozen: FrozenEmbeddings,
        num_users: usize,
        dims: TableDims,
        rng: &mut R,
        range: f64,
    ) -> Self {
        let user = store.add("emb.user", uniform(rng, num_users, dims.user, range));
        let slot = store.add("emb.slot", uniform(rng, NUM_TIME_SLOTS, dims.slot, range));
        let weekday = store.add("emb.weekday", uniform(rng, NUM_WEEKDAYS, dims.weekday, range));
        Self {
            frozen,
            user,
            slot,
            weekday,
        }
    }

    pub fn find(store: &ParamStore, frozen: FrozenEmbeddings) -> Option<Self> {
        Some(Self {
            frozen,
            user: store.id("emb.user")?,
            slot: store.id("emb.slot")?,
            weekday: store.id("emb.weekday")?,
        })
    }

    pub fn checkin_dim(&self, store: &ParamStore) -> usize {
        self.frozen.poi_dim()
            + self.frozen.category_dim()
            + store.get(self.weekday).ncols()
            + store.get(self.slot).ncols()
    }

    pub fn user_dim(&self, store: &ParamStore) -> usize {
        store.get(self.user).ncols()
    }

    /// The embedding of one check-in as a plain vector.
    pub fn embed_checkin(&self, store: &ParamStore, c: &Checkin) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.checkin_dim(store));
        v.extend(self.frozen.poi.row(c.poi as usize).iter());
        v.extend(self.frozen.category.row(c.category as usize).iter());
        v.extend(store.get(self.weekday).row(c.weekday as usize).iter());
        v.extend(store.get(self.slot).row(c.time_slot as usize).iter());
        v
    }

    pub fn embed_user(&self, store: &ParamStore, u: usize) -> Vec<f64> {
        store.get(self.user).row(u).to_vec()
    }

    /// Embeds a column of check-ins as rows of a `n×dim` node. `None` rows
    /// (padding) are zero in the frozen part and use index 0 of the
    /// trainable tables; callers mask them.
    pub fn embed_rows(&self, t: &mut Tape, rows: &[Option<&Checkin>]) -> Var {
        let (dl, dc) = (self.frozen.poi_dim(), self.frozen.category_dim());
        let mut frozen = Array2::zeros((rows.len(), dl + dc));
        let mut wd = Vec::with_capacity(rows.len());
        let mut slot = Vec::with_capacity(rows.len());
        for (i, c) in rows.iter().enumerate() {
            if let Some(c) = c {
                frozen
                    .slice_mut(s![i, ..dl])
                    .assign(&self.frozen.poi.row(c.poi as usize));
                frozen
                    .slice_mut(s![i, dl..])
                    .assign(&self.frozen.category.row(c.category as usize));
            }
            wd.push(c.map_or(0, |c| c.weekday as usize));
            slot.push(c.map_or(0, |c| c.time_slot as usize));
        }
        let frozen = t.constant(frozen);
        let wtab = t.param(self.weekday);
        let w = t.gather_rows(wtab, &wd);
        let stab = t.param(self.slot);
        let sl = t.gather_rows(stab, &slot);
        t.concat_cols(&[frozen, w, sl])
    }

    pub fn embed_users(&self, t: &mut Tape, users: &[usize]) -> Var {
        let tab = t.param(self.user);
        t.gather_rows(tab, users)
    }
}
