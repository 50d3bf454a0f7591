//! The full model: long- and short-term encoders, the prediction head and
//! the training loss, plus checkpoint persistence.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, Mat, ParamId, ParamStore, Tape, Var};
use crate::config::{config_hash, EpsilonMode, ModelConfig};
use crate::context::ContextStats;
use crate::corpus::Checkin;
use crate::embedding::{EmbeddingTables, FrozenEmbeddings, TableDims};
use crate::error::{Error, Result};
use crate::long_term::{
    encode_current, encode_history, nonlocal_pool, attend, personal_social_summary, spatial_weights,
    temporal_weights, LongTermParams,
};
use crate::nn::{uniform, LstmCell};
use crate::sample::{PredictionSample, Timeline};
use crate::short_term::{candidate_features, fuse_short_term, stc_dilated_pass, DilatedPlan, Routing, ShortTermParams};
use crate::store::{ArrayReader, ArrayWriter};

/// Which parts of the model are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub long: bool,
    pub short: bool,
    pub social: bool,
    pub self_attention: bool,
    pub st_attention: bool,
    pub category_cost: bool,
    pub lstm: bool,
    pub dilated: bool,
    pub user_in_output: bool,
}

impl Components {
    pub const FULL: Components = Components {
        long: true,
        short: true,
        social: true,
        self_attention: true,
        st_attention: true,
        category_cost: true,
        lstm: true,
        dilated: true,
        user_in_output: true,
    };

    /// Recognised variant tags.
    pub const TAGS: [&'static str; 10] = [
        "full",
        "w/o Short",
        "w/o Long",
        "w/o Short&Social",
        "w/o Short&Self-Att",
        "w/o Short&ST-Att",
        "w/o Long&C-dilated&LSTM",
        "w/o Long&LSTM",
        "w/o Long&STC-dilated",
        "lstm-baseline",
    ];

    /// Parses `full`, `lstm-baseline` or `w/o A&B&…` with parts among
    /// Short, Long, Social, Self-Att, ST-Att, C-dilated, LSTM, STC-dilated
    /// (case-insensitive).
    pub fn parse(tag: &str) -> Result<Self> {
        let bad = |why: &str| {
            Error::Usage(format!(
                "variant {tag:?}: {why}; valid tags: {}",
                Self::TAGS.join(", ")
            ))
        };
        let tag = tag.trim();
        let lower = tag.to_ascii_lowercase();
        if lower == "full" {
            return Ok(Self::FULL);
        }
        if lower == "lstm-baseline" {
            return Ok(Components {
                long: false,
                dilated: false,
                user_in_output: false,
                ..Self::FULL
            });
        }
        let rest = lower
            .strip_prefix("w/o")
            .ok_or_else(|| bad("unknown tag"))?;
        let mut c = Self::FULL;
        for part in rest.split('&').map(str::trim) {
            match part {
                "short" => c.short = false,
                "long" => c.long = false,
                "social" | "socail" => c.social = false,
                "self-att" => c.self_attention = false,
                "st-att" => c.st_attention = false,
                "c-dilated" => c.category_cost = false,
                "lstm" => c.lstm = false,
                "stc-dilated" => c.dilated = false,
                _ => return Err(bad(&format!("unknown component {part:?}"))),
            }
        }
        if !c.short && !c.long {
            return Err(bad("removing both Short and Long leaves no model"));
        }
        if c.short && !c.lstm && !c.dilated {
            return Err(bad("removing both LSTM and STC-dilated leaves no short-term pass"));
        }
        Ok(c)
    }
}

/// Output of one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `S × |L|` pre-softmax scores.
    pub logits: Var,
    /// `S × Z` representation fed to the head.
    pub z: Var,
}

/// Scalar loss parts of a batch.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    /// Batch-mean total, on the tape.
    pub total: Var,
    pub logits: Var,
    pub nll: f64,
    pub aux: f64,
}

/// All parameters, frozen tables and settings of a model.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub components: Components,
    pub seed: u64,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    pub current: LstmCell,
    pub long: LongTermParams,
    pub short: ShortTermParams,
    pub w_y: ParamId,
    pub b_y: ParamId,
    pub w_aux: ParamId,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl ModelState {
    pub fn new(cfg: &ModelConfig, frozen: FrozenEmbeddings, num_users: usize, seed: u64) -> Result<Self> {
        let components = Components::parse(&cfg.variant)?;
        if cfg.hidden == 0 || cfg.hidden % 2 != 0 {
            return Err(Error::Usage(format!("hidden size {} must be even and positive", cfg.hidden)));
        }
        if cfg.kappa_max == 0 {
            return Err(Error::Usage("kappa_max must be at least 1".into()));
        }
        if !(cfg.relax_temperature > 0.0) || cfg.lambda < 0.0 {
            return Err(Error::Usage("relax_temperature must be positive and lambda non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let r = cfg.init_range;
        let num_pois = frozen.poi.nrows();
        let poi_dim = frozen.poi_dim();
        let dims = TableDims {
            user: cfg.user_dim,
            slot: cfg.slot_dim,
            weekday: cfg.weekday_dim,
        };
        let tables = EmbeddingTables::new(&mut store, frozen, num_users, dims, &mut rng, r);
        let input = tables.checkin_dim(&store);
        let k = cfg.hidden;
        LstmCell::new(&mut store, "current", input, k, &mut rng, r);
        LongTermParams::new(&mut store, input, k, cfg.user_dim, &mut rng, r);
        ShortTermParams::new(&mut store, input, k, &mut rng, r);
        let z = Self::z_dim(&components, k, cfg.user_dim);
        store.add("head.w_y", uniform(&mut rng, z, num_pois, r));
        store.add("head.b_y", Array2::zeros((1, num_pois)));
        store.add("head.w_aux", uniform(&mut rng, z, poi_dim, r));
        Self::assemble(cfg.clone(), components, seed, store, tables.frozen)
    }

    fn assemble(
        config: ModelConfig,
        components: Components,
        seed: u64,
        store: ParamStore,
        frozen: FrozenEmbeddings,
    ) -> Result<Self> {
        let missing = |what: &str| Error::data(format!("model parameters lack {what}"));
        let tables = EmbeddingTables::find(&store, frozen).ok_or_else(|| missing("embedding tables"))?;
        let current = LstmCell::find(&store, "current").ok_or_else(|| missing("current cell"))?;
        let long = LongTermParams::find(&store).ok_or_else(|| missing("long-term parameters"))?;
        let short = ShortTermParams::find(&store).ok_or_else(|| missing("short-term parameters"))?;
        let id = |n: &str| store.id(n).ok_or_else(|| missing(n));
        let (w_y, b_y, w_aux) = (id("head.w_y")?, id("head.b_y")?, id("head.w_aux")?);
        Ok(Self {
            config,
            components,
            seed,
            store,
            tables,
            current,
            long,
            short,
            w_y,
            b_y,
            w_aux,
        })
    }

    fn z_dim(c: &Components, hidden: usize, user_dim: usize) -> usize {
        hidden * (c.long as usize + c.short as usize) + if c.user_in_output { user_dim } else { 0 }
    }

    pub fn num_pois(&self) -> usize {
        self.tables.frozen.poi.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.store.get(self.tables.user).nrows()
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Cost weights used for routing; `W3` reads as zero without the
    /// category term.
    pub fn routing_weights(&self) -> [f64; 3] {
        let mut w = self.short.epsilon_weights(&self.store);
        if !self.components.category_cost {
            w[2] = 0.0;
        }
        w
    }

    /// Dilation plan the model would use for `prefix`.
    pub fn plan(&self, prefix: &[Checkin], ctx: &ContextStats) -> DilatedPlan {
        DilatedPlan::from_features(
            &candidate_features(prefix, ctx, self.config.kappa_max),
            self.routing_weights(),
        )
    }

    /// Records the forward pass for `samples`, which must share one user
    /// and timeline.
    pub fn forward(&self, t: &mut Tape, tl: &Timeline, samples: &[&PredictionSample], ctx: &ContextStats) -> Forward {
        assert!(!samples.is_empty(), "forward needs at least one sample");
        let user = samples[0].user;
        assert!(samples.iter().all(|s| s.user == user), "batch mixes users");
        let n = samples.len();
        let c = &self.components;

        // Current trajectories, shared across samples.
        let mut cur_ids: Vec<usize> = Vec::new();
        let mut cur_row = BTreeMap::new();
        for s in samples {
            cur_row.entry(s.current).or_insert_with(|| {
                cur_ids.push(s.current);
                cur_ids.len() - 1
            });
        }
        let steps = samples.iter().map(|s| s.prefix_len).max().unwrap();
        let cur_trajs: Vec<&[Checkin]> = cur_ids
            .iter()
            .map(|&i| {
                let ch = &tl.trajs[i].checkins;
                &ch[..steps.min(ch.len())]
            })
            .collect();
        let bc = cur_trajs.len();
        let cur_states = encode_current(t, &self.current, &self.tables, &cur_trajs, steps);
        let hcur = t.vstack(&cur_states);
        let last_idx: Vec<usize> = samples
            .iter()
            .map(|s| (s.prefix_len - 1) * bc + cur_row[&s.current])
            .collect();

        let mut parts = Vec::new();
        if c.long {
            let mut mean = Array2::zeros((n, steps * bc));
            for (i, s) in samples.iter().enumerate() {
                let b = cur_row[&s.current];
                for p in 0..s.prefix_len {
                    mean[[i, p * bc + b]] = 1.0 / s.prefix_len as f64;
                }
            }
            let mean = t.constant(mean);
            let s_n = t.matmul(mean, hcur);
            parts.push(self.long_term(t, tl, samples, ctx, s_n));
        }
        if c.short {
            let h_last = t.gather_rows(hcur, &last_idx);
            let y_s = if c.dilated {
                let routing_features: Vec<Vec<Vec<[f64; 3]>>>;
                let plans: Vec<DilatedPlan>;
                let routing = match self.config.epsilon_mode {
                    EpsilonMode::Hard => {
                        plans = cur_trajs.iter().map(|p| self.plan(p, ctx)).collect();
                        Routing::Hard(&plans)
                    }
                    EpsilonMode::StraightThrough => {
                        routing_features = cur_trajs
                            .iter()
                            .map(|p| candidate_features(p, ctx, self.config.kappa_max))
                            .collect();
                        Routing::Relaxed {
                            features: &routing_features,
                            eps_w: self.short.eps_w,
                            temperature: self.config.relax_temperature,
                            use_category: c.category_cost,
                        }
                    }
                };
                let dil = stc_dilated_pass(t, &self.short.dilated, &self.tables, &cur_trajs, steps, &routing);
                let hd = t.vstack(&dil);
                let h_dil = t.gather_rows(hd, &last_idx);
                if c.lstm {
                    let w1 = t.param(self.short.w1);
                    let w2 = t.param(self.short.w2);
                    fuse_short_term(t, h_last, h_dil, w1, w2)
                } else {
                    h_dil
                }
            } else {
                h_last
            };
            parts.push(y_s);
        }
        if c.user_in_output {
            let u = self.tables.embed_users(t, &[user]);
            parts.push(t.expand_rows(u, n));
        }
        let z = t.concat_cols(&parts);
        let wy = t.param(self.w_y);
        let by = t.param(self.b_y);
        let logits = t.matmul(z, wy);
        let logits = t.add_row(logits, by);
        Forward { logits, z }
    }

    fn long_term(
        &self,
        t: &mut Tape,
        tl: &Timeline,
        samples: &[&PredictionSample],
        ctx: &ContextStats,
        s_n: Var,
    ) -> Var {
        let c = &self.components;
        // History units: timeline trajectories, plus the prefix itself for
        // samples without history.
        let mut units: Vec<&[Checkin]> = Vec::new();
        let mut unit_of = BTreeMap::new();
        let mut sample_units: Vec<Vec<usize>> = Vec::with_capacity(samples.len());
        for s in samples {
            if s.history.is_empty() {
                units.push(s.prefix(tl));
                sample_units.push(vec![units.len() - 1]);
            } else {
                let ids = s
                    .history
                    .iter()
                    .map(|&h| {
                        *unit_of.entry(h).or_insert_with(|| {
                            units.push(&tl.trajs[h].checkins);
                            units.len() - 1
                        })
                    })
                    .collect();
                sample_units.push(ids);
            }
        }
        let enc = encode_history(t, &self.long, &self.tables, &units);
        let user = samples[0].user;
        let uv = self.tables.embed_users(t, &[user]);
        let fv = if c.social {
            let f = ctx.social.friend[user] as usize;
            Some(self.tables.embed_users(t, &[f]))
        } else {
            None
        };
        let summary = personal_social_summary(t, &self.long, &enc, uv, fv);

        let rows: usize = sample_units.iter().map(Vec::len).sum();
        let mut pool = Array2::zeros((rows, enc.num_rows()));
        let mut uf_idx = Vec::with_capacity(rows);
        let mut r = 0;
        for (s, su) in samples.iter().zip(&sample_units) {
            let q = s.query(tl);
            for &u in su {
                let (off, len) = enc.spans[u];
                let w: Vec<f64> = if c.st_attention {
                    let pois: Vec<u32> = units[u].iter().map(|x| x.poi).collect();
                    let slots: Vec<u8> = units[u].iter().map(|x| x.time_slot).collect();
                    let a = spatial_weights(q.poi, &pois, &ctx.distance);
                    let b = temporal_weights(q.time_slot, &slots, &ctx.time_corr);
                    a.iter().zip(&b).map(|(x, y)| x + y).collect()
                } else {
                    vec![1.0; len]
                };
                for (j, wj) in w.iter().enumerate() {
                    pool[[r, off + j]] = wj / len as f64;
                }
                uf_idx.push(u);
                r += 1;
            }
        }
        let pool = t.constant(pool);
        let pooled = t.matmul(pool, enc.rows);
        let uf = t.gather_rows(summary.h_uf, &uf_idx);
        let pooled = t.add(pooled, uf);

        let qkv = if c.self_attention {
            let (wq, wk, wv) = (t.param(self.long.w_q), t.param(self.long.w_k), t.param(self.long.w_v));
            Some((t.matmul(pooled, wq), t.matmul(pooled, wk), t.matmul(pooled, wv)))
        } else {
            None
        };
        let mut aggs = Vec::with_capacity(samples.len());
        let mut off = 0;
        for (i, su) in sample_units.iter().enumerate() {
            let m = su.len();
            let context = match qkv {
                Some((q, k, v)) => {
                    let (q, k, v) = (t.slice_rows(q, off, m), t.slice_rows(k, off, m), t.slice_rows(v, off, m));
                    attend(t, q, k, v).output
                }
                None => t.slice_rows(pooled, off, m),
            };
            let sn = t.slice_rows(s_n, i, 1);
            aggs.push(nonlocal_pool(t, sn, context).0);
            off += m;
        }
        let agg = t.vstack(&aggs);
        let wi = t.param(self.long.w_i);
        t.matmul(agg, wi)
    }

    /// Batch-mean loss: NLL of the targets plus `λ·‖v_l − z·W_aux‖²`.
    pub fn loss(&self, t: &mut Tape, tl: &Timeline, samples: &[&PredictionSample], ctx: &ContextStats) -> Loss {
        let f = self.forward(t, tl, samples, ctx);
        let targets: Vec<usize> = samples.iter().map(|s| s.target as usize).collect();
        let nll = t.nll(f.logits, &targets);
        let nll_v = t.scalar(nll);
        let lambda = self.config.lambda;
        let (sum, aux_v) = if lambda > 0.0 {
            let waux = t.param(self.w_aux);
            let pred = t.matmul(f.z, waux);
            let truth = t.constant(self.tables.frozen.poi.select(Axis(0), &targets));
            let diff = t.sub(pred, truth);
            let aux = t.sum_squares(diff);
            let aux_v = t.scalar(aux);
            let scaled = t.scale(aux, lambda);
            (t.add(nll, scaled), aux_v)
        } else {
            (nll, 0.0)
        };
        let n = samples.len() as f64;
        Loss {
            total: t.scale(sum, 1.0 / n),
            logits: f.logits,
            nll: nll_v / n,
            aux: aux_v / n,
        }
    }

    /// Pre-softmax scores (`S × |L|`) for a batch.
    pub fn logits(&self, tl: &Timeline, samples: &[&PredictionSample], ctx: &ContextStats) -> Mat {
        let mut t = Tape::new(&self.store);
        let f = self.forward(&mut t, tl, samples, ctx);
        t.value(f.logits).clone()
    }

    /// Probability of every POI being the next visit.
    pub fn predict_scores(&self, tl: &Timeline, sample: &PredictionSample, ctx: &ContextStats) -> Vec<f64> {
        let logits = self.logits(tl, &[sample], ctx);
        softmax_rows(&logits, None).row(0).to_vec()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = ArrayWriter::create(dir, "model")?;
        w.meta("format_version", MODEL_FORMAT_VERSION)?;
        w.meta("config", &self.config)?;
        w.meta("config_hash", self.config_hash())?;
        w.meta("seed", self.seed)?;
        let names: Vec<&str> = self.store.ids().map(|id| self.store.name(id)).collect();
        w.meta("params", &names)?;
        for id in self.store.ids() {
            let m = self.store.get(id);
            let data: Vec<f64> = m.iter().copied().collect();
            w.f64s(&format!("param.{}", self.store.name(id)), &[m.nrows(), m.ncols()], &data)?;
        }
        for (name, m) in [("frozen.poi", &self.tables.frozen.poi), ("frozen.category", &self.tables.frozen.category)] {
            let data: Vec<f64> = m.iter().copied().collect();
            w.f64s(name, &[m.nrows(), m.ncols()], &data)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let r = ArrayReader::open(dir, "model")?;
        let version: u32 = r.meta("format_version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!("unsupported model format version {version}")));
        }
        let config: ModelConfig = r.meta("config")?;
        let seed: u64 = r.meta("seed")?;
        let names: Vec<String> = r.meta("params")?;
        let mut store = ParamStore::new();
        for n in names {
            let m = r.matrix(&format!("param.{n}"))?;
            store.add(n, m);
        }
        let frozen = FrozenEmbeddings {
            poi: r.matrix("frozen.poi")?,
            category: r.matrix("frozen.category")?,
        };
        let components = Components::parse(&config.variant)?;
        Self::assemble(config, components, seed, store, frozen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags() {
        for tag in Components::TAGS {
            Components::parse(tag).unwrap();
        }
        let c = Components::parse("w/o Long&C-dilated&LSTM").unwrap();
        assert!(!c.long && !c.category_cost && !c.lstm && c.short && c.dilated);
        assert_eq!(Components::parse("w/o Short&Socail").unwrap(), Components::parse("w/o Short&Social").unwrap());
        assert_eq!(Components::parse("full").unwrap(), Components::FULL);
        let err = Components::parse("w/o Short&Long").unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = Components::parse("sideways").unwrap_err().to_string();
        assert!(err.contains("w/o Long&STC-dilated"));
    }

    #[test]
    fn head_width_follows_components() {
        assert_eq!(ModelState::z_dim(&Components::FULL, 500, 40), 1040);
        let ws = Components::parse("w/o Short").unwrap();
        assert_eq!(ModelState::z_dim(&ws, 500, 40), 540);
        let base = Components::parse("lstm-baseline").unwrap();
        assert_eq!(ModelState::z_dim(&base, 500, 40), 500);
    }
}
