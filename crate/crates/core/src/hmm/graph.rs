use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{sample_paths, HmmModel};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.01;

/// Empirical state visitation and transition traffic.
///
/// Edges lighter than `prune_threshold` are flagged in `pruned` but kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficGraph {
    pub node_weight: Vec<f64>,
    pub edge_weight: Vec<Vec<f64>>,
    pub pruned: Vec<Vec<bool>>,
    pub prune_threshold: f64,
}

pub fn traffic_graph(model: &HmmModel, n_trials: usize, t: usize, seed: u64, threshold: f64) -> TrafficGraph {
    let m = model.n_states();
    let mut visits = vec![0u64; m];
    let mut moves = vec![vec![0u64; m]; m];
    for path in sample_paths(model, n_trials, t, seed) {
        for &z in &path {
            visits[z] += 1;
        }
        for w in path.windows(2) {
            moves[w[0]][w[1]] += 1;
        }
    }
    let n_visits = visits.iter().sum::<u64>().max(1) as f64;
    let n_moves = moves.iter().flatten().sum::<u64>().max(1) as f64;
    let edge_weight: Vec<Vec<f64>> = moves
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n_moves).collect())
        .collect();
    let pruned = edge_weight
        .iter()
        .map(|row| row.iter().map(|&w| w < threshold).collect())
        .collect();
    TrafficGraph {
        node_weight: visits.iter().map(|&c| c as f64 / n_visits).collect(),
        edge_weight,
        pruned,
        prune_threshold: threshold,
    }
}

impl TrafficGraph {
    /// Graphviz digraph. With `hide_pruned`, flagged edges are drawn invisible.
    pub fn to_dot(&self, name: &str, hide_pruned: bool) -> String {
        let mut s = String::new();
        writeln!(s, "digraph \"{}\" {{", name.replace('"', "\\\"")).unwrap();
        for (m, w) in self.node_weight.iter().enumerate() {
            writeln!(s, "  {m} [label=\"{m}\", weight={w:.6}];").unwrap();
        }
        for (m, row) in self.edge_weight.iter().enumerate() {
            for (l, w) in row.iter().enumerate() {
                let style = if hide_pruned && self.pruned[m][l] { ", style=invis" } else { "" };
                writeln!(s, "  {m} -> {l} [weight={w:.6}{style}];").unwrap();
            }
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::make_cycle_teacher;

    #[test]
    fn deterministic_cycle_is_symmetric() {
        let a = (0..4)
            .map(|m| (0..4).map(|l| (l == (m + 1) % 4) as u8 as f64).collect())
            .collect();
        let model = HmmModel::new(a, vec![vec![0.5]; 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let g = traffic_graph(&model, 10, 4001, 0, DEFAULT_PRUNE_THRESHOLD);
        for w in &g.node_weight {
            assert!((w - 0.25).abs() < 1e-3);
        }
        for m in 0..4 {
            for l in 0..4 {
                let w = g.edge_weight[m][l];
                if l == (m + 1) % 4 {
                    assert!((w - 0.25).abs() < 1e-3);
                } else {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn noisy_cycle_prunes_off_cycle_edges() {
        let teacher = make_cycle_teacher(4, 1e-2, 0, 3).unwrap();
        let g = traffic_graph(&teacher, 2000, 10, 1, DEFAULT_PRUNE_THRESHOLD);
        for m in 0..4 {
            for l in 0..4 {
                assert_eq!(g.pruned[m][l], l != (m + 1) % 4, "edge {m}->{l}");
            }
        }
        let dot = g.to_dot("teacher", true);
        assert_eq!(dot.matches("style=invis").count(), 12);
        assert!(dot.contains("0 -> 1 [weight=0."));
        assert_eq!(g.to_dot("teacher", false).matches("invis").count(), 0);
    }

    #[test]
    fn weights_converge_to_stationary_traffic() {
        let model = HmmModel::new(
            vec![vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4], vec![0.5, 0.1, 0.4]],
            vec![vec![0.5]; 3],
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        // stationary distribution by power iteration
        let mut p = vec![1.0 / 3.0; 3];
        for _ in 0..500 {
            p = (0..3).map(|l| (0..3).map(|k| p[k] * model.a[k][l]).sum()).collect();
        }
        let stationary = HmmModel {
            pi: p.clone(),
            ..model
        };
        let g = traffic_graph(&stationary, 100_000, 10, 2, DEFAULT_PRUNE_THRESHOLD);
        for k in 0..3 {
            assert!((g.node_weight[k] - p[k]).abs() < 1e-2);
            for l in 0..3 {
                assert!((g.edge_weight[k][l] - p[k] * stationary.a[k][l]).abs() < 1e-2);
            }
        }
        assert!((g.node_weight.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g.edge_weight.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
