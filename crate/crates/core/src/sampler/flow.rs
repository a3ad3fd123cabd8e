//! Dinic max-flow and a feasibility check for flows with lower bounds.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: i64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Adds `u -> v` and returns its arc index; the residual twin is
    /// `index ^ 1`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to: v, cap });
        self.arcs.push(Arc { to: u, cap: 0 });
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    /// Flow currently pushed along arc `id`.
    pub fn flow(&self, id: usize) -> i64 {
        self.arcs[id ^ 1].cap
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.adj.len();
        let mut total = 0;
        loop {
            let mut level = vec![-1i64; n];
            level[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &a in &self.adj[u] {
                    let Arc { to, cap } = self.arcs[a];
                    if cap > 0 && level[to] < 0 {
                        level[to] = level[u] + 1;
                        queue.push_back(to);
                    }
                }
            }
            if level[t] < 0 {
                return total;
            }
            let mut next = vec![0usize; n];
            loop {
                let pushed = self.augment(s, t, i64::MAX, &level, &mut next);
                if pushed == 0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    // Iterative blocking-flow step: finds one augmenting path along the level
    // graph and pushes its bottleneck.
    fn augment(&mut self, s: usize, t: usize, limit: i64, level: &[i64], next: &mut [usize]) -> i64 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let push = path.iter().fold(limit, |m, &a| m.min(self.arcs[a].cap));
                for &a in &path {
                    self.arcs[a].cap -= push;
                    self.arcs[a ^ 1].cap += push;
                }
                return push;
            }
            let mut advanced = false;
            while next[u] < self.adj[u].len() {
                let a = self.adj[u][next[u]];
                let Arc { to, cap } = self.arcs[a];
                if cap > 0 && level[to] == level[u] + 1 {
                    path.push(a);
                    u = to;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                if u == s {
                    return 0;
                }
                // Dead end: retreat and skip the arc that led here.
                let a = path.pop().expect("non-source node has an incoming path arc");
                u = self.arcs[a ^ 1].to;
                next[u] += 1;
            }
        }
    }
}

/// A flow problem whose edges carry `[lower, upper]` bounds.
pub(crate) struct BoundedFlow {
    nodes: usize,
    edges: Vec<(usize, usize, i64, i64)>,
}

impl BoundedFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize, lower: i64, upper: i64) -> usize {
        debug_assert!(0 <= lower && lower <= upper);
        self.edges.push((u, v, lower, upper));
        self.edges.len() - 1
    }

    /// Finds an `s`-`t` flow respecting every bound, returning the flow on
    /// each edge in insertion order, or `None` when none exists.
    pub fn solve(&self, s: usize, t: usize) -> Option<Vec<i64>> {
        let (ss, tt) = (self.nodes, self.nodes + 1);
        let mut g = FlowGraph::new(self.nodes + 2);
        let mut excess = vec![0i64; self.nodes];
        let mut ids = Vec::with_capacity(self.edges.len());
        for &(u, v, lo, hi) in &self.edges {
            ids.push(g.add_edge(u, v, hi - lo));
            excess[v] += lo;
            excess[u] -= lo;
        }
        g.add_edge(t, s, i64::MAX / 4);
        let mut demand = 0;
        for (v, &e) in excess.iter().enumerate() {
            if e > 0 {
                g.add_edge(ss, v, e);
                demand += e;
            } else if e < 0 {
                g.add_edge(v, tt, -e);
            }
        }
        if g.max_flow(ss, tt) != demand {
            return None;
        }
        Some(
            ids.iter()
                .zip(&self.edges)
                .map(|(&id, &(_, _, lo, _))| lo + g.flow(id))
                .collect(),
        )
    }
}
