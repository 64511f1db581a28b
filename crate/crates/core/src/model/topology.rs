//! Radial orientation of the in-service subgraph.

use super::{ModelError, Network};

/// Parent/child structure of a radial network rooted at the slack bus.
/// All entries are indices into the network's bus and branch arrays.
#[derive(Debug, Clone)]
pub struct OrientedTree {
    /// Bus indices in breadth-first order from the slack; parents precede
    /// their children.
    pub order: Vec<usize>,
    /// Per bus: `(parent bus, upstream branch)`; `None` only at the slack.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Per bus: downstream `(child bus, branch)` pairs.
    pub children: Vec<Vec<(usize, usize)>>,
}

/// Orient a radial network upstream/downstream from the slack bus.
///
/// Every non-slack bus ends up with exactly one upstream branch. Fails with
/// a not-radial error when the in-service subgraph contains a cycle.
pub fn orient_radial(net: &Network) -> Result<OrientedTree, ModelError> {
    if !net.is_radial() {
        return Err(ModelError::NotRadial {
            in_service: net.in_service_count(),
            buses: net.n_buses(),
        });
    }

    let n = net.n_buses();
    let root = net.slack_idx();
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![None; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut seen = vec![false; n];

    let mut queue = std::collections::VecDeque::new();
    queue.push_back(root);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(branch, v) in net.adjacent(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u, branch));
                children[u].push((v, branch));
                queue.push_back(v);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "connectivity is checked at construction");

    Ok(OrientedTree { order, parent, children })
}

impl OrientedTree {
    /// Upstream branch of a bus, if it is not the root.
    pub fn upstream_branch(&self, bus: usize) -> Option<usize> {
        self.parent[bus].map(|(_, b)| b)
    }

    pub fn is_leaf(&self, bus: usize) -> bool {
        self.children[bus].is_empty()
    }
}
