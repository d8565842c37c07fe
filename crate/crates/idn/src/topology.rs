//! Network graph, tiered hierarchies and routing paths.
//!
//! Nodes live on tiers (0 = cloud/root, higher numbers towards the edge).
//! Edges carry round-trip latencies in milliseconds. Requests follow simple
//! paths towards the root, where a repository node holds a permanently
//! allocated model for every task.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("tier {0} has no nodes")]
    EmptyTier(u32),
    #[error("negative latency {latency} between tiers {from} and {to}")]
    NegativeLatency { from: u32, to: u32, latency: f64 },
    #[error("root tier must contain exactly one node, found {0}")]
    MultipleRoots(usize),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("path is empty")]
    EmptyPath,
    #[error("path repeats node {0}")]
    RepeatedNode(usize),
    #[error("no edge between consecutive path nodes {0} and {1}")]
    MissingEdge(usize, usize),
    #[error("path position {j} out of range 1..={len}")]
    PositionOutOfRange { j: usize, len: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("negative budget {0} MB")]
    NegativeBudget(f64),
}

/// One level of a hierarchical topology, listed from the edge towards the
/// root. `uplink_ms` is the round-trip latency from a node of this level to
/// its parent on the next level (ignored for the last level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TierSpec {
    pub tier: u32,
    pub count: usize,
    pub hardware: String,
    /// `None` means the node can hold the entire catalog.
    pub budget_mb: Option<f64>,
    #[serde(default)]
    pub uplink_ms: f64,
}

/// A compute node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub tier: u32,
    pub hardware: String,
    /// Allocation budget in MB; `None` fits the entire catalog.
    pub budget_mb: Option<f64>,
}

/// Immutable network graph. Safe to share across threads once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<Node>,
    /// Round-trip latency per undirected edge, keyed by (min id, max id).
    /// Serialized as a sorted `[u, v, latency]` list so the JSON export is
    /// valid and byte-stable.
    #[serde(with = "edge_list")]
    edges: HashMap<(usize, usize), f64>,
    /// Parent of each node in the hierarchy (root has none).
    parent: Vec<Option<usize>>,
}

mod edge_list {
    use std::collections::HashMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        edges: &HashMap<(usize, usize), f64>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let mut list: Vec<(usize, usize, f64)> =
            edges.iter().map(|(&(u, v), &w)| (u, v, w)).collect();
        list.sort_by_key(|&(u, v, _)| (u, v));
        list.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<HashMap<(usize, usize), f64>, D::Error> {
        let list = Vec::<(usize, usize, f64)>::deserialize(deserializer)?;
        Ok(list.into_iter().map(|(u, v, w)| ((u, v), w)).collect())
    }
}

impl Topology {
    /// Builds a balanced tree hierarchy: level `i` nodes attach round-robin
    /// to level `i+1` nodes. Node ids are dense integers assigned level by
    /// level starting from the edge, so base stations come first and the
    /// root gets the largest id.
    pub fn hierarchical(levels: &[TierSpec]) -> Result<Self, TopologyError> {
        if levels.is_empty() {
            return Err(TopologyError::EmptyTier(0));
        }
        for level in levels {
            if level.count == 0 {
                return Err(TopologyError::EmptyTier(level.tier));
            }
            if let Some(b) = level.budget_mb {
                if b < 0.0 {
                    return Err(TopologyError::NegativeBudget(b));
                }
            }
        }
        for pair in levels.windows(2) {
            if pair[0].uplink_ms < 0.0 {
                return Err(TopologyError::NegativeLatency {
                    from: pair[0].tier,
                    to: pair[1].tier,
                    latency: pair[0].uplink_ms,
                });
            }
        }
        let root = levels.last().unwrap();
        if root.count != 1 {
            return Err(TopologyError::MultipleRoots(root.count));
        }

        let mut nodes = Vec::new();
        let mut first_id = Vec::new(); // first node id of each level
        for level in levels {
            first_id.push(nodes.len());
            for _ in 0..level.count {
                nodes.push(Node {
                    id: nodes.len(),
                    tier: level.tier,
                    hardware: level.hardware.clone(),
                    budget_mb: level.budget_mb,
                });
            }
        }

        let mut parent = vec![None; nodes.len()];
        let mut edges = HashMap::new();
        for (i, level) in levels.iter().enumerate().take(levels.len() - 1) {
            let next = &levels[i + 1];
            for k in 0..level.count {
                let child = first_id[i] + k;
                let par = first_id[i + 1] + k % next.count;
                parent[child] = Some(par);
                edges.insert(edge_key(child, par), level.uplink_ms);
            }
        }

        Ok(Topology {
            nodes,
            edges,
            parent,
        })
    }

    /// Degenerate one-node topology; every path has length 1.
    pub fn single_node(tier: u32, hardware: &str, budget_mb: Option<f64>) -> Self {
        Topology {
            nodes: vec![Node {
                id: 0,
                tier,
                hardware: hardware.to_string(),
                budget_mb,
            }],
            edges: HashMap::new(),
            parent: vec![None],
        }
    }

    /// The 36-node hierarchy: 24 base stations, 6 + 4 aggregation nodes, one
    /// ISP data center and one cloud root, with tier-to-tier round trips of
    /// 6, 6, 15 and 40 ms.
    pub fn preset_i() -> Self {
        Topology::hierarchical(&[
            TierSpec {
                tier: 4,
                count: 24,
                hardware: "gtx_980".into(),
                budget_mb: Some(4096.0),
                uplink_ms: 6.0,
            },
            TierSpec {
                tier: 3,
                count: 6,
                hardware: "gtx_980".into(),
                budget_mb: Some(8192.0),
                uplink_ms: 6.0,
            },
            TierSpec {
                tier: 2,
                count: 4,
                hardware: "gtx_980".into(),
                budget_mb: Some(12288.0),
                uplink_ms: 15.0,
            },
            TierSpec {
                tier: 1,
                count: 1,
                hardware: "titan_rtx".into(),
                budget_mb: Some(16384.0),
                uplink_ms: 40.0,
            },
            TierSpec {
                tier: 0,
                count: 1,
                hardware: "titan_rtx".into(),
                budget_mb: None,
                uplink_ms: 0.0,
            },
        ])
        .expect("preset is valid")
    }

    /// The simpler 5-node hierarchy with 2 base stations. Tier 3 is folded
    /// into the first uplink (12 ms) so the edge-to-cloud round trip stays at
    /// 67 ms like the larger preset.
    pub fn preset_ii() -> Self {
        Topology::hierarchical(&[
            TierSpec {
                tier: 4,
                count: 2,
                hardware: "gtx_980".into(),
                budget_mb: Some(4096.0),
                uplink_ms: 12.0,
            },
            TierSpec {
                tier: 2,
                count: 1,
                hardware: "gtx_980".into(),
                budget_mb: Some(12288.0),
                uplink_ms: 15.0,
            },
            TierSpec {
                tier: 1,
                count: 1,
                hardware: "titan_rtx".into(),
                budget_mb: Some(16384.0),
                uplink_ms: 40.0,
            },
            TierSpec {
                tier: 0,
                count: 1,
                hardware: "titan_rtx".into(),
                budget_mb: None,
                uplink_ms: 0.0,
            },
        ])
        .expect("preset is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Result<&Node, TopologyError> {
        self.nodes.get(id).ok_or(TopologyError::UnknownNode(id))
    }

    /// Round-trip latency of edge (u, v), if it exists.
    pub fn latency(&self, u: usize, v: usize) -> Option<f64> {
        self.edges.get(&edge_key(u, v)).copied()
    }

    /// The root of the hierarchy (the unique node without a parent).
    pub fn root(&self) -> usize {
        (0..self.nodes.len())
            .find(|&v| self.parent[v].is_none())
            .expect("hierarchy has a root")
    }

    /// Ids of nodes on the given tier, in id order.
    pub fn tier_nodes(&self, tier: u32) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.tier == tier)
            .map(|n| n.id)
            .collect()
    }

    /// The up-the-hierarchy path from `origin` to the root. Deterministic:
    /// parent links are fixed at construction.
    pub fn path_to_root(&self, origin: usize) -> Result<RequestPath, TopologyError> {
        if origin >= self.nodes.len() {
            return Err(TopologyError::UnknownNode(origin));
        }
        let mut nodes = vec![origin];
        let mut cur = origin;
        while let Some(p) = self.parent[cur] {
            nodes.push(p);
            cur = p;
        }
        RequestPath::new(nodes, self)
    }

    /// Checks that every node can reach the root via parent links.
    pub fn validate_connected(&self) -> Result<(), TopologyError> {
        for v in 0..self.nodes.len() {
            self.path_to_root(v)
                .map_err(|_| TopologyError::Disconnected)?;
        }
        Ok(())
    }
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// A simple routing path `p_1..p_J`; consecutive nodes share an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPath {
    nodes: Vec<usize>,
    latencies: Vec<f64>,
}

impl RequestPath {
    pub fn new(nodes: Vec<usize>, topo: &Topology) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::EmptyPath);
        }
        let mut seen = std::collections::HashSet::new();
        for &v in &nodes {
            topo.node(v)?;
            if !seen.insert(v) {
                return Err(TopologyError::RepeatedNode(v));
            }
        }
        let mut latencies = Vec::with_capacity(nodes.len().saturating_sub(1));
        for pair in nodes.windows(2) {
            let w = topo
                .latency(pair[0], pair[1])
                .ok_or(TopologyError::MissingEdge(pair[0], pair[1]))?;
            latencies.push(w);
        }
        Ok(RequestPath { nodes, latencies })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Terminal node of the path (the repository).
    pub fn terminal(&self) -> usize {
        *self.nodes.last().unwrap()
    }

    /// Sum of the first `j - 1` edge latencies, i.e. the network cost of
    /// serving at path position `j` (1-based).
    pub fn prefix_latency(&self, j: usize) -> Result<f64, TopologyError> {
        if j == 0 || j > self.nodes.len() {
            return Err(TopologyError::PositionOutOfRange {
                j,
                len: self.nodes.len(),
            });
        }
        Ok(self.latencies[..j - 1].iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_i_counts() {
        let topo = Topology::preset_i();
        assert_eq!(topo.len(), 36);
        assert_eq!(topo.tier_nodes(4).len(), 24);
        assert_eq!(topo.tier_nodes(0).len(), 1);
        topo.validate_connected().unwrap();
        // base stations get the smallest ids
        assert!(topo.tier_nodes(4).iter().all(|&v| v < 24));
        assert_eq!(topo.root(), 35);
    }

    #[test]
    fn preset_ii_counts() {
        let topo = Topology::preset_ii();
        assert_eq!(topo.len(), 5);
        assert_eq!(topo.tier_nodes(4).len(), 2);
        topo.validate_connected().unwrap();
    }

    #[test]
    fn path_from_base_station_spans_all_tiers() {
        let topo = Topology::preset_i();
        let path = topo.path_to_root(0).unwrap();
        assert_eq!(path.len(), 5);
        assert_eq!(path.terminal(), topo.root());
        // full prefix latency: 6 + 6 + 15 + 40
        assert_eq!(path.prefix_latency(5).unwrap(), 67.0);
        assert_eq!(path.prefix_latency(1).unwrap(), 0.0);
        // deterministic across calls
        assert_eq!(topo.path_to_root(0).unwrap(), path);
    }

    #[test]
    fn prefix_latency_is_monotone() {
        let topo = Topology::preset_i();
        for origin in 0..topo.len() {
            let path = topo.path_to_root(origin).unwrap();
            let mut prev = 0.0;
            for j in 1..=path.len() {
                let lat = path.prefix_latency(j).unwrap();
                assert!(lat >= prev);
                prev = lat;
            }
        }
    }

    #[test]
    fn prefix_latency_rejects_out_of_range() {
        let topo = Topology::preset_ii();
        let path = topo.path_to_root(0).unwrap();
        assert!(path.prefix_latency(0).is_err());
        assert!(path.prefix_latency(path.len() + 1).is_err());
    }

    #[test]
    fn single_node_topology() {
        let topo = Topology::single_node(0, "titan_rtx", None);
        let path = topo.path_to_root(0).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.prefix_latency(1).unwrap(), 0.0);
    }

    #[test]
    fn rejects_empty_tier_and_negative_latency() {
        let bad = Topology::hierarchical(&[
            TierSpec {
                tier: 1,
                count: 0,
                hardware: "hw".into(),
                budget_mb: Some(1.0),
                uplink_ms: 1.0,
            },
            TierSpec {
                tier: 0,
                count: 1,
                hardware: "hw".into(),
                budget_mb: None,
                uplink_ms: 0.0,
            },
        ]);
        assert!(matches!(bad, Err(TopologyError::EmptyTier(1))));

        let bad = Topology::hierarchical(&[
            TierSpec {
                tier: 1,
                count: 2,
                hardware: "hw".into(),
                budget_mb: Some(1.0),
                uplink_ms: -3.0,
            },
            TierSpec {
                tier: 0,
                count: 1,
                hardware: "hw".into(),
                budget_mb: None,
                uplink_ms: 0.0,
            },
        ]);
        assert!(matches!(bad, Err(TopologyError::NegativeLatency { .. })));
    }

    #[test]
    fn explicit_path_validation() {
        let topo = Topology::preset_ii();
        // 0 -> 2 -> 3 -> 4 follows parent edges
        let ok = RequestPath::new(vec![0, 2, 3, 4], &topo);
        assert!(ok.is_ok());
        // no direct edge 0 -> 3
        assert!(matches!(
            RequestPath::new(vec![0, 3], &topo),
            Err(TopologyError::MissingEdge(0, 3))
        ));
        assert!(matches!(
            RequestPath::new(vec![0, 2, 0], &topo),
            Err(TopologyError::RepeatedNode(0))
        ));
    }
}
