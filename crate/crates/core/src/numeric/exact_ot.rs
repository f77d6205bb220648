//! Exact discrete optimal transport by enumerating basic feasible solutions.
//!
//! Every vertex of the transport polytope `U(mu, nu)` is the unique flow
//! supported on some spanning tree of the complete bipartite graph between
//! rows and columns. Enumerating all spanning trees, solving each tree's flow
//! by leaf elimination, and keeping the cheapest nonnegative one gives the LP
//! optimum. Only feasible for tiny problems.

use ndarray::ArrayView2;

use super::SimplexVector;
use crate::error::{Error, Result};

pub const MAX_EXACT_OT_SIZE: usize = 5;

/// Flows more negative than this make a tree basis infeasible.
const FEASIBILITY_TOL: f64 = 1e-12;

pub fn exact_ot_small(mu: &SimplexVector, nu: &SimplexVector, cost: ArrayView2<'_, f64>) -> Result<f64> {
    let (m, n) = cost.dim();
    if m > MAX_EXACT_OT_SIZE || n > MAX_EXACT_OT_SIZE {
        return Err(Error::Unsupported(format!(
            "exact OT enumeration is limited to {MAX_EXACT_OT_SIZE}x{MAX_EXACT_OT_SIZE}, got {m}x{n}"
        )));
    }
    if mu.len() != m || nu.len() != n {
        return Err(Error::domain("marginal lengths do not match the cost matrix"));
    }
    let mut search = TreeSearch {
        m,
        n,
        cost: cost.to_owned().into_raw_vec_and_offset().0,
        supply: mu.as_array().iter().chain(nu.as_array()).copied().collect(),
        parent: (0..m + n).collect(),
        size: vec![1; m + n],
        undo: Vec::new(),
        chosen: Vec::with_capacity(m + n - 1),
        row_used: vec![0; m],
        best: f64::INFINITY,
    };
    search.descend(0);
    if search.best.is_finite() {
        Ok(search.best)
    } else {
        Err(Error::Invariant("no feasible basis found for exact OT".into()))
    }
}

struct TreeSearch {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    /// Row supplies followed by column demands.
    supply: Vec<f64>,
    parent: Vec<usize>,
    size: Vec<usize>,
    undo: Vec<(usize, usize)>,
    chosen: Vec<usize>,
    row_used: Vec<usize>,
    best: f64,
}

impl TreeSearch {
    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn descend(&mut self, edge: usize) {
        let needed = self.m + self.n - 1;
        if self.chosen.len() == needed {
            self.evaluate();
            return;
        }
        let total = self.m * self.n;
        if edge == total || total - edge < needed - self.chosen.len() {
            return;
        }
        let (i, j) = (edge / self.n, edge % self.n);
        // Finishing a row without using it cannot lead to a spanning tree.
        let last_in_row = j == self.n - 1;

        let (ri, rj) = (self.find(i), self.find(self.m + j));
        if ri != rj {
            let (big, small) = if self.size[ri] >= self.size[rj] { (ri, rj) } else { (rj, ri) };
            self.parent[small] = big;
            self.size[big] += self.size[small];
            self.undo.push((small, big));
            self.chosen.push(edge);
            self.row_used[i] += 1;

            self.descend(edge + 1);

            self.row_used[i] -= 1;
            self.chosen.pop();
            let (small, big) = self.undo.pop().expect("undo stack");
            self.size[big] -= self.size[small];
            self.parent[small] = small;
        }
        if !(last_in_row && self.row_used[i] == 0) {
            self.descend(edge + 1);
        }
    }

    fn evaluate(&mut self) {
        let nodes = self.m + self.n;
        let mut remaining = self.supply.clone();
        let mut degree = vec![0usize; nodes];
        let mut alive = vec![true; self.chosen.len()];
        for &e in &self.chosen {
            degree[e / self.n] += 1;
            degree[self.m + e % self.n] += 1;
        }
        let mut total = 0.0;
        for _ in 0..self.chosen.len() {
            // Pick any leaf and push its remaining supply through its only edge.
            let Some((k, leaf)) = self.chosen.iter().enumerate().filter(|(k, _)| alive[*k]).find_map(|(k, &e)| {
                let (r, c) = (e / self.n, self.m + e % self.n);
                if degree[r] == 1 {
                    Some((k, r))
                } else if degree[c] == 1 {
                    Some((k, c))
                } else {
                    None
                }
            }) else {
                return;
            };
            let e = self.chosen[k];
            let (r, c) = (e / self.n, self.m + e % self.n);
            let other = if leaf == r { c } else { r };
            let flow = remaining[leaf];
            if flow < -FEASIBILITY_TOL {
                return;
            }
            remaining[leaf] = 0.0;
            remaining[other] -= flow;
            degree[r] -= 1;
            degree[c] -= 1;
            alive[k] = false;
            total += flow * self.cost[e];
        }
        if total < self.best {
            self.best = total;
        }
    }
}
