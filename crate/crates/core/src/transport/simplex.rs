//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Supply nodes `0..n`, demand nodes `n..n+m`, an artificial root `n+m`.
//! The initial basis routes every supply through the root on big-M arcs.
//! Entering arcs are priced by block search (first most negative reduced cost
//! within a block, scanned cyclically); leaving arcs follow the strongly
//! feasible rule, which rules out cycling under degeneracy.

pub(crate) struct Transportation<'a> {
    pub supply: &'a [f64],
    pub demand: &'a [f64],
    /// Row-major `n × m` arc costs.
    pub cost: &'a [f64],
}

struct Tree {
    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    potential: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl Transportation<'_> {
    /// Optimal total cost `Σ flow × cost` over the real arcs.
    pub fn solve(&self) -> f64 {
        let n = self.supply.len();
        let m = self.demand.len();
        let real = n * m;
        let nodes = n + m + 1;
        let root = n + m;
        let max_cost = self.cost.iter().fold(0.0f64, |a, &c| a.max(c));
        let art_cost = (max_cost + 1.0) * nodes as f64;
        let tol = 1e-14 * art_cost;

        let arcs = real + n + m;
        let mut src = vec![0usize; arcs];
        let mut tgt = vec![0usize; arcs];
        let mut cost = vec![0.0f64; arcs];
        for i in 0..n {
            for j in 0..m {
                let a = i * m + j;
                src[a] = i;
                tgt[a] = n + j;
                cost[a] = self.cost[a];
            }
        }
        let mut flow = vec![0.0f64; arcs];
        let mut tree = Tree {
            parent: vec![NONE; nodes],
            pred: vec![NONE; nodes],
            depth: vec![0; nodes],
            children: vec![Vec::new(); nodes],
            potential: vec![0.0; nodes],
        };
        for u in 0..n + m {
            let a = real + u;
            cost[a] = art_cost;
            if u < n {
                src[a] = u;
                tgt[a] = root;
                flow[a] = self.supply[u];
                tree.potential[u] = -art_cost;
            } else {
                src[a] = root;
                tgt[a] = u;
                flow[a] = self.demand[u - n];
                tree.potential[u] = art_cost;
            }
            tree.parent[u] = root;
            tree.pred[u] = a;
            tree.depth[u] = 1;
            tree.children[root].push(u);
        }

        let block = ((arcs as f64).sqrt().ceil() as usize).max(10);
        let mut next_arc = 0usize;
        loop {
            // Block-search pricing.
            let mut best = NONE;
            let mut best_rc = -tol;
            let mut scanned = 0usize;
            let mut in_block = 0usize;
            let mut a = next_arc;
            while scanned < arcs {
                let rc = cost[a] + tree.potential[src[a]] - tree.potential[tgt[a]];
                if rc < best_rc {
                    best_rc = rc;
                    best = a;
                }
                scanned += 1;
                in_block += 1;
                a += 1;
                if a == arcs {
                    a = 0;
                }
                if in_block == block {
                    if best != NONE {
                        break;
                    }
                    in_block = 0;
                }
            }
            if best == NONE {
                break;
            }
            next_arc = a;
            let entering = best;
            let first = src[entering];
            let second = tgt[entering];

            let mut x = first;
            let mut y = second;
            while tree.depth[x] > tree.depth[y] {
                x = tree.parent[x];
            }
            while tree.depth[y] > tree.depth[x] {
                y = tree.parent[y];
            }
            while x != y {
                x = tree.parent[x];
                y = tree.parent[y];
            }
            let join = x;

            // Strongly feasible leaving-arc selection.
            let mut delta = f64::INFINITY;
            let mut u_out = NONE;
            let mut out_on_first = true;
            let mut u = first;
            while u != join {
                let e = tree.pred[u];
                if src[e] == u && flow[e] < delta {
                    delta = flow[e];
                    u_out = u;
                    out_on_first = true;
                }
                u = tree.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = tree.pred[u];
                if src[e] != u && flow[e] <= delta {
                    delta = flow[e];
                    u_out = u;
                    out_on_first = false;
                }
                u = tree.parent[u];
            }
            debug_assert!(u_out != NONE, "artificial arcs keep the problem bounded");

            if delta > 0.0 {
                flow[entering] += delta;
                let mut u = first;
                while u != join {
                    let e = tree.pred[u];
                    if src[e] == u {
                        flow[e] -= delta;
                    } else {
                        flow[e] += delta;
                    }
                    u = tree.parent[u];
                }
                let mut u = second;
                while u != join {
                    let e = tree.pred[u];
                    if src[e] == u {
                        flow[e] += delta;
                    } else {
                        flow[e] -= delta;
                    }
                    u = tree.parent[u];
                }
            }
            let leaving = tree.pred[u_out];
            flow[leaving] = 0.0;

            let (u_in, v_in) = if out_on_first { (first, second) } else { (second, first) };
            tree.rehang(u_in, v_in, u_out, entering);

            let old = tree.potential[u_in];
            let new = if src[entering] == u_in {
                tree.potential[v_in] - cost[entering]
            } else {
                tree.potential[v_in] + cost[entering]
            };
            tree.shift_subtree(u_in, new - old);
        }

        let mut total = 0.0;
        for a in 0..real {
            if flow[a] > 0.0 {
                total += flow[a] * cost[a];
            }
        }
        total
    }
}

impl Tree {
    fn detach(&mut self, child: usize) {
        let p = self.parent[child];
        let list = &mut self.children[p];
        let idx = list.iter().position(|&c| c == child).expect("child registered with parent");
        list.swap_remove(idx);
    }

    /// Removes the tree arc above `u_out`, reverses the path `u_in → u_out`
    /// and hangs `u_in` below `v_in` on the entering arc.
    fn rehang(&mut self, u_in: usize, v_in: usize, u_out: usize, entering: usize) {
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        self.detach(u_out);
        for k in (1..path.len()).rev() {
            let node = path[k];
            let below = path[k - 1];
            self.detach(below);
            self.parent[node] = below;
            self.pred[node] = self.pred[below];
            self.children[below].push(node);
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = entering;
        self.children[v_in].push(u_in);
    }

    fn shift_subtree(&mut self, top: usize, sigma: f64) {
        let mut stack = vec![top];
        while let Some(u) = stack.pop() {
            self.potential[u] += sigma;
            self.depth[u] = self.depth[self.parent[u]] + 1;
            stack.extend_from_slice(&self.children[u]);
        }
    }
}
