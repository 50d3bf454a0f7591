use std::collections::BTreeMap;

use crate::corpus::Trajectory;

/// Directed weighted transition graph. Edge weight counts how often the
/// target immediately follows the source inside one trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionGraph {
    num_nodes: usize,
    /// Out-neighbours per node, sorted by target.
    adj: Vec<Vec<(u32, f64)>>,
}

impl TransitionGraph {
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut acc: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            *acc.entry((a, b)).or_default() += w;
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for ((a, b), w) in acc {
            adj[a as usize].push((b, w));
        }
        Self { num_nodes, adj }
    }

    /// Counts consecutive pairs produced by `key` inside each sequence.
    pub fn from_sequences<'a>(
        num_nodes: usize,
        trajs: impl IntoIterator<Item = &'a Trajectory>,
        key: impl Fn(&crate::corpus::Checkin) -> u32,
    ) -> Self {
        let mut edges = Vec::new();
        for t in trajs {
            for w in t.checkins.windows(2) {
                edges.push((key(&w[0]), key(&w[1]), 1.0));
            }
        }
        Self::from_edges(num_nodes, edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, f64)] {
        &self.adj[node as usize]
    }

    pub fn weight(&self, a: u32, b: u32) -> Option<f64> {
        let row = &self.adj[a as usize];
        row.binary_search_by_key(&b, |&(t, _)| t)
            .ok()
            .map(|i| row[i].1)
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.weight(a, b).is_some()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().map(move |&(b, w)| (a as u32, b, w)))
    }
}

/// POI transition graph over training trajectories.
pub fn build_poi_graph<'a>(
    num_pois: usize,
    train: impl IntoIterator<Item = &'a Trajectory>,
) -> TransitionGraph {
    TransitionGraph::from_sequences(num_pois, train, |c| c.poi)
}

/// Category transition graph over training trajectories.
pub fn build_category_graph<'a>(
    num_categories: usize,
    train: impl IntoIterator<Item = &'a Trajectory>,
) -> TransitionGraph {
    TransitionGraph::from_sequences(num_categories, train, |c| c.category)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::traj;

    #[test]
    fn counts_consecutive_visits() {
        let g = build_poi_graph(3, &[traj(0, &[0, 1, 0])]);
        assert_eq!(g.weight(0, 1), Some(1.0));
        assert_eq!(g.weight(1, 0), Some(1.0));
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn repeated_trajectories_accumulate() {
        let g = build_poi_graph(2, &[traj(0, &[0, 1]), traj(0, &[0, 1])]);
        assert_eq!(g.weight(0, 1), Some(2.0));
    }

    #[test]
    fn no_edges_across_trajectory_boundaries() {
        let g = build_poi_graph(2, &[traj(0, &[0]), traj(0, &[1])]);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn self_loop_only_from_repeats() {
        let g = build_poi_graph(2, &[traj(0, &[0, 0, 1])]);
        assert_eq!(g.weight(0, 0), Some(1.0));
        assert!(!g.has_edge(1, 1));
    }
}
