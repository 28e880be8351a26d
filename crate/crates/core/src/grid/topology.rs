use serde::{Deserialize, Serialize};

use super::NetworkCase;

/// Which elements are energized. Indexed like the case vectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub branches: Vec<bool>,
    pub machines: Vec<bool>,
    pub loads: Vec<bool>,
}

impl Topology {
    pub fn without_branches(&self, out: &[usize]) -> Topology {
        let mut t = self.clone();
        for &b in out {
            t.branches[b] = false;
        }
        t
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = usize> + '_ {
        self.branches.iter().enumerate().filter(|(_, on)| **on).map(|(i, _)| i)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so the representative is order independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Maximal connected bus sets over in-service branches. Buses without any
/// in-service branch come back as singletons. Islands are sorted by their
/// smallest bus index and each island's buses are ascending.
pub fn connected_islands(case: &NetworkCase, topo: &Topology) -> Vec<Vec<usize>> {
    let n = case.buses.len();
    let mut ds = DisjointSet::new(n);
    for (i, br) in case.branches.iter().enumerate() {
        if topo.branches.get(i).copied().unwrap_or(false) {
            ds.union(br.from_idx, br.to_idx);
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for bus in 0..n {
        let r = ds.find(bus);
        by_root[r].push(bus);
    }
    let mut islands: Vec<Vec<usize>> = by_root.into_iter().filter(|v| !v.is_empty()).collect();
    islands.sort_by_key(|v| v[0]);
    islands
}

/// Island label per bus (index into the output of [`connected_islands`]).
pub fn island_labels(islands: &[Vec<usize>], n_bus: usize) -> Vec<usize> {
    let mut label = vec![usize::MAX; n_bus];
    for (k, isl) in islands.iter().enumerate() {
        for &b in isl {
            label[b] = k;
        }
    }
    label
}
