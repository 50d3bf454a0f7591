//! Static context structures derived from the training trajectories.
//!
//! Everything here is computed once before model training and shared
//! read-only afterwards.

mod category;
mod distance;
mod epsilon;
mod graph;
mod interval;
mod social;
mod time_corr;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;

pub use category::{build_category_transitions, CategoryTransitionMatrix};
pub use distance::DistanceMatrix;
pub use epsilon::{epsilon_cost, epsilon_features, sigmoid};
pub use graph::{build_category_graph, build_poi_graph, TransitionGraph};
pub use interval::{build_time_interval_matrix, TimeIntervalMatrix};
pub use social::{build_social_context, cosine, SocialContext};
pub use time_corr::{build_time_correlation, jaccard, TimeCorrelationMatrix};

use crate::config::{config_hash, ContextConfig};
use crate::corpus::{CorpusSplit, NUM_TIME_SLOTS};
use crate::error::{Error, Result};
use crate::store::{ArrayReader, ArrayWriter};

/// Immutable bundle of all context matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextStats {
    pub poi_graph: TransitionGraph,
    pub category_graph: TransitionGraph,
    pub distance: DistanceMatrix,
    pub interval: TimeIntervalMatrix,
    pub time_corr: TimeCorrelationMatrix,
    pub category: CategoryTransitionMatrix,
    pub social: SocialContext,
    /// Category index of every POI.
    pub poi_category: Vec<u32>,
}

impl ContextStats {
    pub fn build(split: &CorpusSplit, cfg: &ContextConfig) -> Result<Self> {
        let vocab = &split.vocab;
        if split.train_trajectories().next().is_none() {
            return Err(Error::data("context needs a non-empty training set"));
        }
        let coords = vocab.pois.iter().map(|p| (p.lat, p.lon)).collect();
        Ok(Self {
            poi_graph: build_poi_graph(vocab.num_pois(), split.train_trajectories()),
            category_graph: build_category_graph(vocab.num_categories(), split.train_trajectories()),
            distance: DistanceMatrix::new(coords)?,
            interval: build_time_interval_matrix(split.train_trajectories()),
            time_corr: build_time_correlation(split.train_trajectories()),
            category: build_category_transitions(
                vocab.num_categories(),
                split.train_trajectories(),
                cfg.category_norm,
            ),
            social: build_social_context(&split.train, cfg.dense_similarity_limit)?,
            poi_category: vocab.pois.iter().map(|p| p.category).collect(),
        })
    }

    pub fn num_pois(&self) -> usize {
        self.distance.len()
    }

    pub fn num_users(&self) -> usize {
        self.social.num_users()
    }

    /// The three cost features of the transition `from → to`.
    pub fn transition_features(&self, from: (u32, u32), to: (u32, u32)) -> [f64; 3] {
        let (pa, ca) = from;
        let (pb, cb) = to;
        epsilon_features(
            self.distance.norm(pa, pb),
            self.interval.norm(pa, pb),
            self.category.prob(ca, cb),
        )
    }

    pub fn save(&self, dir: &Path, cfg: &ContextConfig, corpus_hash: &str) -> Result<()> {
        let mut w = ArrayWriter::create(dir, "context")?;
        w.meta("config_hash", config_hash(cfg))?;
        w.meta("config", cfg)?;
        w.meta("corpus_hash", corpus_hash)?;
        w.meta("distance_bounds_km", self.distance.bounds_km())?;
        w.meta("interval_bounds_hours", self.interval.bounds_hours())?;

        let n_poi = self.num_pois();
        let coords: Vec<f64> = self
            .distance
            .coords()
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect();
        w.f64s("coords", &[n_poi, 2], &coords)?;
        w.u32s("poi_category", &[n_poi], &self.poi_category)?;

        for (name, g) in [("poi_graph", &self.poi_graph), ("category_graph", &self.category_graph)] {
            let edges: Vec<(u32, u32, f64)> = g.edges().collect();
            let pairs: Vec<u32> = edges.iter().flat_map(|&(a, b, _)| [a, b]).collect();
            let weights: Vec<f64> = edges.iter().map(|e| e.2).collect();
            w.u32s(&format!("{name}_edges"), &[edges.len(), 2], &pairs)?;
            w.f64s(&format!("{name}_weights"), &[edges.len()], &weights)?;
            w.meta(&format!("{name}_nodes"), g.num_nodes())?;
        }

        let obs = self.interval.observed();
        let pairs: Vec<u32> = obs.keys().flat_map(|&(a, b)| [a, b]).collect();
        let hours: Vec<f64> = obs.values().copied().collect();
        w.u32s("interval_pairs", &[obs.len(), 2], &pairs)?;
        w.f64s("interval_hours", &[obs.len()], &hours)?;

        w.f64s(
            "tau",
            &[NUM_TIME_SLOTS, NUM_TIME_SLOTS],
            self.time_corr.tau.as_standard_layout().as_slice().unwrap(),
        )?;
        let slot_pairs: Vec<u32> = self
            .time_corr
            .slot_locs
            .iter()
            .enumerate()
            .flat_map(|(s, set)| set.iter().flat_map(move |&p| [s as u32, p]))
            .collect();
        w.u32s("slot_locs", &[slot_pairs.len() / 2, 2], &slot_pairs)?;

        let c = self.category.counts.nrows();
        w.f64s("category_counts", &[c, c], self.category.counts.as_standard_layout().as_slice().unwrap())?;
        w.f64s("category_probs", &[c, c], self.category.probs.as_standard_layout().as_slice().unwrap())?;

        let visits = self.social.visits();
        let mut vu = Vec::new();
        let mut vc = Vec::new();
        for (u, v) in visits.iter().enumerate() {
            for (&p, &cnt) in v {
                vu.extend([u as u32, p]);
                vc.push(cnt);
            }
        }
        w.u32s("visit_pairs", &[vc.len(), 2], &vu)?;
        w.f64s("visit_counts", &[vc.len()], &vc)?;
        w.meta("num_users", visits.len())?;
        w.u32s("friend", &[self.social.friend.len()], &self.social.friend)?;
        if let Some(sim) = self.social.dense() {
            let n = sim.nrows();
            w.f64s("similarity", &[n, n], sim.as_standard_layout().as_slice().unwrap())?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let r = ArrayReader::open(dir, "context")?;
        let cfg: ContextConfig = r.meta("config")?;
        let (min_km, max_km): (f64, f64) = r.meta("distance_bounds_km")?;
        let (_, coords) = r.f64s("coords")?;
        let coords: Vec<(f64, f64)> = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let (_, poi_category) = r.u32s("poi_category")?;

        let read_graph = |name: &str| -> Result<TransitionGraph> {
            let (_, pairs) = r.u32s(&format!("{name}_edges"))?;
            let (_, weights) = r.f64s(&format!("{name}_weights"))?;
            let nodes: usize = r.meta(&format!("{name}_nodes"))?;
            Ok(TransitionGraph::from_edges(
                nodes,
                pairs
                    .chunks_exact(2)
                    .zip(weights)
                    .map(|(p, w)| (p[0], p[1], w)),
            ))
        };

        let (_, pairs) = r.u32s("interval_pairs")?;
        let (_, hours) = r.f64s("interval_hours")?;
        let observed: BTreeMap<(u32, u32), f64> = pairs
            .chunks_exact(2)
            .zip(hours)
            .map(|(p, h)| ((p[0], p[1]), h))
            .collect();

        let tau = r.matrix("tau")?;
        let (_, slot_pairs) = r.u32s("slot_locs")?;
        let mut slot_locs = vec![BTreeSet::new(); NUM_TIME_SLOTS];
        for p in slot_pairs.chunks_exact(2) {
            slot_locs[p[0] as usize].insert(p[1]);
        }

        let counts: Array2<f64> = r.matrix("category_counts")?;
        let probs: Array2<f64> = r.matrix("category_probs")?;

        let n_users: usize = r.meta("num_users")?;
        let (_, vp) = r.u32s("visit_pairs")?;
        let (_, vc) = r.f64s("visit_counts")?;
        let mut visits = vec![BTreeMap::new(); n_users];
        for (p, c) in vp.chunks_exact(2).zip(vc) {
            visits[p[0] as usize].insert(p[1], c);
        }
        let social = SocialContext::from_visits(visits, cfg.dense_similarity_limit)?;
        let (_, friend) = r.u32s("friend")?;
        if friend != social.friend {
            return Err(Error::data("stored friend map disagrees with visit vectors"));
        }

        Ok(Self {
            poi_graph: read_graph("poi_graph")?,
            category_graph: read_graph("category_graph")?,
            distance: DistanceMatrix::from_parts(coords, min_km, max_km),
            interval: TimeIntervalMatrix::from_observed(observed),
            time_corr: TimeCorrelationMatrix { tau, slot_locs },
            category: CategoryTransitionMatrix { counts, probs },
            social,
            poi_category,
        })
    }
}
