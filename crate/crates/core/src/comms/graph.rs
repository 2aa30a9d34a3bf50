use std::collections::BTreeSet;

use crate::error::ProtocolError;
use crate::grid::AgentId;
use crate::scene::Scene;

/// Undirected communication graph over agent ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    agents: Vec<AgentId>,
    edges: BTreeSet<(AgentId, AgentId)>,
}

impl CommGraph {
    pub fn new(agents: &[AgentId], edges: &[(AgentId, AgentId)]) -> Result<Self, ProtocolError> {
        let mut ids = agents.to_vec();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ProtocolError::DuplicateAgent(w[0]));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            for x in [a, b] {
                if ids.binary_search(&x).is_err() {
                    return Err(ProtocolError::InvalidPayload(format!("edge ({a}, {b}) names unknown agent {x}")));
                }
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(CommGraph { agents: ids, edges: set })
    }

    /// Every pair connected.
    pub fn complete(agents: &[AgentId]) -> Result<Self, ProtocolError> {
        let mut edges = Vec::new();
        for (i, &a) in agents.iter().enumerate() {
            for &b in &agents[i + 1..] {
                edges.push((a, b));
            }
        }
        Self::new(agents, &edges)
    }

    /// Agents within `range_m` of each other are connected; `None` connects
    /// everyone.
    pub fn from_scene(scene: &Scene, range_m: Option<f64>) -> Result<Self, ProtocolError> {
        let ids: Vec<AgentId> = scene.agents.iter().map(|a| a.id).collect();
        let Some(r) = range_m else { return Self::complete(&ids) };
        let mut edges = Vec::new();
        for (i, a) in scene.agents.iter().enumerate() {
            for b in &scene.agents[i + 1..] {
                if (a.pose.x - b.pose.x).hypot(a.pose.y - b.pose.y) <= r {
                    edges.push((a.id, b.id));
                }
            }
        }
        Self::new(&ids, &edges)
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }

    pub fn connected(&self, a: AgentId, b: AgentId) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn check(&self, sender: AgentId, receiver: AgentId) -> Result<(), ProtocolError> {
        if self.connected(sender, receiver) {
            Ok(())
        } else {
            Err(ProtocolError::Disconnected { sender, receiver })
        }
    }

    /// Neighbors of `a` in ascending id order.
    pub fn neighbors(&self, a: AgentId) -> Vec<AgentId> {
        self.agents.iter().copied().filter(|&b| self.connected(a, b)).collect()
    }

    /// Every directed link `(sender, receiver)` in sorted order.
    pub fn links(&self) -> Vec<(AgentId, AgentId)> {
        let mut out: Vec<_> = self.edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_links() {
        let g = CommGraph::complete(&[2, 0, 1]).unwrap();
        assert_eq!(g.links(), vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
        assert_eq!(g.neighbors(1), vec![0, 2]);
    }

    #[test]
    fn disconnected_pair_is_an_error() {
        let g = CommGraph::new(&[0, 1, 2], &[(0, 1)]).unwrap();
        assert!(g.check(1, 0).is_ok());
        assert_eq!(g.check(2, 0), Err(ProtocolError::Disconnected { sender: 2, receiver: 0 }));
        assert!(CommGraph::new(&[0, 0], &[]).is_err());
        assert!(CommGraph::new(&[0], &[(0, 5)]).is_err());
    }
}
