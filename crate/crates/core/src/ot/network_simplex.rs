//! Primal network simplex for the transportation problem.
//!
//! The basis is a spanning tree rooted at an artificial node, stored with
//! parent / thread / subtree-size arrays so that each pivot only touches the
//! part of the tree that moves. Pricing uses block search: arcs are scanned
//! cyclically in blocks of about √(arcs) and the most negative reduced cost of
//! the first block that has one enters the basis (first minimum wins ties).

use ndarray::Array2;

use super::{CostMatrix, Histogram, TransportPlan};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

/// Largest tolerated difference between the two total masses.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Exact optimal transport by network simplex.
///
/// Zero-mass atoms are dropped before solving and come back as zero rows or
/// columns of the plan. The returned plan is a vertex of the transport
/// polytope, so it has at most `n + m - 1` positive entries.
pub fn solve_exact(p: &Histogram, q: &Histogram, cost: &CostMatrix) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if n != p.len() || m != q.len() {
        return Err(Error::validation(format!(
            "cost matrix is {n}x{m} but histograms have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let (mass_p, mass_q) = (p.total(), q.total());
    if (mass_p - mass_q).abs() > MASS_TOLERANCE {
        return Err(Error::validation(format!(
            "marginal masses differ: {mass_p} vs {mass_q}"
        )));
    }

    let rows: Vec<usize> = (0..n).filter(|&i| p.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| q.weights()[j] > 0.0).collect();
    let mut gamma = Array2::<f64>::zeros((n, m));
    if !rows.is_empty() && !cols.is_empty() {
        let supply: Vec<f64> = rows
            .iter()
            .map(|&i| p.weights()[i])
            .chain(cols.iter().map(|&j| -q.weights()[j]))
            .collect();
        let dense = rows.len() == n && cols.len() == m;
        // room for the artificial arcs appended by the solver
        let mut arc_cost = Vec::with_capacity(rows.len() * cols.len() + rows.len() + cols.len());
        match cost.matrix().as_slice() {
            Some(all) if dense => arc_cost.extend_from_slice(all),
            _ => arc_cost.extend(
                rows.iter()
                    .flat_map(|&i| cols.iter().map(move |&j| cost.get(i, j))),
            ),
        }
        let mut ns = NetworkSimplex::new(rows.len(), cols.len(), supply, arc_cost);
        ns.run()?;
        if dense {
            ns.flow.truncate(n * m);
            gamma = Array2::from_shape_vec((n, m), ns.flow).expect("flow has n*m real arcs");
        } else {
            for (a, &i) in rows.iter().enumerate() {
                let flow = &ns.flow[a * cols.len()..(a + 1) * cols.len()];
                for (&f, &j) in flow.iter().zip(&cols) {
                    gamma[[i, j]] = f;
                }
            }
        }
    }
    Ok(TransportPlan::from_gamma(gamma, cost, p, q, true))
}

/// Most negative reduced cost `state · (c + π_i − π_j)` in a row segment and
/// its first position, or `(0, _)` when none is negative. Four independent
/// lanes keep the loop free of a serial dependency.
fn segment_min(cost: &[f64], state: &[i8], pi_dst: &[f64], pi_i: f64) -> (f64, usize) {
    const LANES: usize = 4;
    let mut lane_min = [0.0f64; LANES];
    let mut lane_at = [usize::MAX; LANES];
    let chunks = cost.len() / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let (cc, ss, pp) = (
            &cost[base..base + LANES],
            &state[base..base + LANES],
            &pi_dst[base..base + LANES],
        );
        for l in 0..LANES {
            let r = f64::from(ss[l]) * (cc[l] + pi_i - pp[l]);
            if r < lane_min[l] {
                lane_min[l] = r;
                lane_at[l] = base + l;
            }
        }
    }
    let mut min = 0.0;
    let mut at = usize::MAX;
    for l in 0..LANES {
        if lane_min[l] < min || (lane_min[l] == min && lane_at[l] < at && min < 0.0) {
            min = lane_min[l];
            at = lane_at[l];
        }
    }
    for k in chunks * LANES..cost.len() {
        let r = f64::from(state[k]) * (cost[k] + pi_i - pi_dst[k]);
        if r < min {
            min = r;
            at = k;
        }
    }
    (min, at)
}

struct NetworkSimplex {
    n_src: usize,
    n_dst: usize,
    node_num: usize,
    arc_num: usize,
    root: usize,

    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    // endpoints of the artificial arcs, indexed by node
    art_source: Vec<usize>,
    art_target: Vec<usize>,

    supply: Vec<f64>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,

    block_size: usize,
    next_arc: usize,
    eps: f64,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl NetworkSimplex {
    fn new(n_src: usize, n_dst: usize, supply: Vec<f64>, arc_cost: Vec<f64>) -> Self {
        let node_num = n_src + n_dst;
        let arc_num = n_src * n_dst;
        let all_arcs = arc_num + node_num;
        let max_cost = arc_cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;

        let mut cost = arc_cost;
        cost.resize(all_arcs, 0.0);
        let block_size = ((arc_num as f64).sqrt().ceil() as usize).max(10);

        let mut ns = NetworkSimplex {
            n_src,
            n_dst,
            node_num,
            arc_num,
            root: node_num,
            cost,
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            art_source: vec![0; node_num],
            art_target: vec![0; node_num],
            supply,
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size,
            next_arc: 0,
            eps: 64.0 * f64::EPSILON * art_cost,
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };
        ns.init_tree(art_cost);
        ns
    }

    fn init_tree(&mut self, art_cost: f64) {
        let root = self.root;
        self.thread[root] = 0;
        self.rev_thread[0] = root;
        self.succ_num[root] = self.node_num + 1;
        self.last_succ[root] = root - 1;
        self.pi[root] = 0.0;
        for u in 0..self.node_num {
            let e = self.arc_num + u;
            self.parent[u] = root;
            self.pred[u] = e;
            self.thread[u] = u + 1;
            self.rev_thread[u + 1] = u;
            self.succ_num[u] = 1;
            self.last_succ[u] = u;
            self.state[e] = STATE_TREE;
            if self.supply[u] >= 0.0 {
                self.pred_dir[u] = DIR_UP;
                self.pi[u] = 0.0;
                self.art_source[u] = u;
                self.art_target[u] = root;
                self.flow[e] = self.supply[u];
                self.cost[e] = 0.0;
            } else {
                self.pred_dir[u] = DIR_DOWN;
                self.pi[u] = art_cost;
                self.art_source[u] = root;
                self.art_target[u] = u;
                self.flow[e] = -self.supply[u];
                self.cost[e] = art_cost;
            }
        }
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.n_dst
        } else {
            self.art_source[e - self.arc_num]
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.n_src + e % self.n_dst
        } else {
            self.art_target[e - self.arc_num]
        }
    }

    fn run(&mut self) -> Result<()> {
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::validation("transport LP is unbounded"));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        Ok(())
    }

    fn find_entering_arc(&mut self) -> bool {
        let n_dst = self.n_dst;
        let total = self.arc_num;
        let cost = &self.cost[..total];
        let state = &self.state[..total];
        let pi_src = &self.pi[..self.n_src];
        let pi_dst = &self.pi[self.n_src..self.node_num];

        let mut min = 0.0;
        let mut best = NONE;
        let mut e = self.next_arc;
        let mut scanned = 0;
        let mut in_block = 0;
        while scanned < total {
            // one row segment: contiguous in cost, state and column potentials
            let (i, j) = (e / n_dst, e % n_dst);
            let len = (n_dst - j)
                .min(self.block_size - in_block)
                .min(total - scanned);
            let (seg_min, k) = segment_min(
                &cost[e..e + len],
                &state[e..e + len],
                &pi_dst[j..j + len],
                pi_src[i],
            );
            if seg_min < min {
                min = seg_min;
                best = e + k;
            }
            scanned += len;
            in_block += len;
            e += len;
            if e == total {
                e = 0;
            }
            if in_block == self.block_size {
                if min < -self.eps {
                    break;
                }
                in_block = 0;
            }
        }
        if min < -self.eps {
            self.in_arc = best;
            self.next_arc = e;
            true
        } else {
            false
        }
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Arcs are uncapacitated, so only arcs whose flow decreases around the
    /// cycle can block it.
    fn find_leaving_arc(&mut self) -> bool {
        // entering arcs are always at their lower bound
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        match result {
            1 => {
                self.u_in = first;
                self.v_in = second;
            }
            2 => {
                self.u_in = second;
                self.v_in = first;
            }
            _ => return false,
        }
        true
    }

    fn change_flow(&mut self) {
        let delta = self.delta;
        if delta > 0.0 {
            self.flow[self.in_arc] += delta;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        // the blocking arc drops to exactly zero
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) {
                DIR_UP
            } else {
                DIR_DOWN
            };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            // when old_rev_thread == v_in, join and v_out coincide
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // re-hang the stem (path u_in .. u_out) below v_in
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // reverse pred / pred_dir along the stem and fix subtree data
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in]
            - self.pi[self.u_in]
            - f64::from(self.pred_dir[self.u_in]) * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}
