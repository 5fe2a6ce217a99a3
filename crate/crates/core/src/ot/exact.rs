//! Exact Kantorovich solver: the network simplex method specialised to the
//! bipartite transportation problem.
//!
//! The basis is a spanning tree over the `m + n` row and column nodes with
//! exactly `m + n - 1` basic cells (degenerate zero-flow cells allowed). The
//! initial tree comes from the north-west corner rule; pricing is block
//! search over reduced costs, falling back to Bland's rule after a long run
//! of degenerate pivots.

use ndarray::{Array1, Array2, ArrayView2};

use super::{check_simplex, CostMatrix, TransportPlan};
use crate::{Error, Result};

/// Solves `min <C, pi>` over couplings with marginals `a` and `b`.
pub fn solve_exact_ot(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    solve_exact_ot_with_limit(cost, a, b, default_pivot_limit(m, n))
}

fn default_pivot_limit(m: usize, n: usize) -> usize {
    (m * n).saturating_mul(50).max(10_000)
}

/// As [`solve_exact_ot`] with an explicit cap on simplex pivots.
pub fn solve_exact_ot_with_limit(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    max_pivots: usize,
) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    if a.len() != m {
        return Err(Error::DimensionMismatch {
            what: "cost rows vs row marginal",
            left: m,
            right: a.len(),
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "cost columns vs column marginal",
            left: n,
            right: b.len(),
        });
    }
    check_simplex(a.view(), "row marginal")?;
    check_simplex(b.view(), "column marginal")?;

    let mut solver = TransportSimplex::north_west(cost.view(), a, b);
    solver.run(max_pivots)?;
    Ok(TransportPlan::from_parts(solver.coupling(), a.clone(), b.clone()))
}

struct TransportSimplex<'a> {
    cost: ArrayView2<'a, f64>,
    m: usize,
    n: usize,
    /// Basic cells as (row, col).
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// Node potentials: rows `0..m`, columns `m..m+n`.
    pot: Vec<f64>,
    // tree adjacency in CSR form, rebuilt every pivot
    adj_start: Vec<usize>,
    adj: Vec<(usize, usize)>,
    parent: Vec<(usize, usize)>,
    queue: Vec<usize>,
    visited: Vec<bool>,
    price_cursor: usize,
    tol: f64,
}

const NONE: usize = usize::MAX;

impl<'a> TransportSimplex<'a> {
    fn north_west(cost: ArrayView2<'a, f64>, a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let (m, n) = cost.dim();
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let last_row = i == m - 1;
            let last_col = j == n - 1;
            let x = if last_row {
                demand[j].max(0.0)
            } else if last_col {
                supply[i].max(0.0)
            } else {
                supply[i].min(demand[j])
            };
            cells.push((i, j));
            flow.push(x);
            supply[i] -= x;
            demand[j] -= x;
            if last_row && last_col {
                break;
            }
            if last_row {
                j += 1;
            } else if last_col || supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        let cmax = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
        Self {
            cost,
            m,
            n,
            cells,
            flow,
            pot: vec![0.0; m + n],
            adj_start: vec![0; m + n + 1],
            adj: vec![(0, 0); 2 * (m + n - 1)],
            parent: vec![(NONE, NONE); m + n],
            queue: Vec::with_capacity(m + n),
            visited: vec![false; m + n],
            price_cursor: 0,
            tol: 1e-11 * cmax,
        }
    }

    fn build_adjacency(&mut self) {
        let nodes = self.m + self.n;
        self.adj_start.iter_mut().for_each(|s| *s = 0);
        for &(i, j) in &self.cells {
            self.adj_start[i + 1] += 1;
            self.adj_start[self.m + j + 1] += 1;
        }
        for k in 0..nodes {
            self.adj_start[k + 1] += self.adj_start[k];
        }
        let mut fill = self.adj_start.clone();
        for (e, &(i, j)) in self.cells.iter().enumerate() {
            let r = i;
            let c = self.m + j;
            self.adj[fill[r]] = (c, e);
            fill[r] += 1;
            self.adj[fill[c]] = (r, e);
            fill[c] += 1;
        }
    }

    /// Breadth-first traversal of the basis tree from `root`, recording
    /// parent links and (optionally) node potentials.
    fn traverse(&mut self, root: usize, set_potentials: bool) {
        self.visited.iter_mut().for_each(|v| *v = false);
        self.queue.clear();
        self.queue.push(root);
        self.visited[root] = true;
        self.parent[root] = (NONE, NONE);
        if set_potentials {
            self.pot[root] = 0.0;
        }
        let mut head = 0;
        while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for k in self.adj_start[node]..self.adj_start[node + 1] {
                let (next, e) = self.adj[k];
                if self.visited[next] {
                    continue;
                }
                self.visited[next] = true;
                self.parent[next] = (node, e);
                if set_potentials {
                    let (i, j) = self.cells[e];
                    self.pot[next] = self.cost[[i, j]] - self.pot[node];
                }
                self.queue.push(next);
            }
        }
    }

    #[inline]
    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]] - self.pot[i] - self.pot[self.m + j]
    }

    /// Block-search pricing: the most negative reduced cost within the first
    /// block that contains any candidate.
    fn price_block(&mut self) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt() as usize).max(16).min(total);
        let mut idx = self.price_cursor;
        let mut best = -self.tol;
        let mut best_cell = None;
        let mut in_block = 0;
        for _ in 0..total {
            let (i, j) = (idx / self.n, idx % self.n);
            let r = self.reduced_cost(i, j);
            if r < best {
                best = r;
                best_cell = Some((i, j));
            }
            idx += 1;
            if idx == total {
                idx = 0;
            }
            in_block += 1;
            if in_block == block {
                if best_cell.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        self.price_cursor = idx;
        best_cell
    }

    fn price_bland(&self) -> Option<(usize, usize)> {
        for i in 0..self.m {
            for j in 0..self.n {
                if self.reduced_cost(i, j) < -self.tol {
                    return Some((i, j));
                }
            }
        }
        None
    }

    fn run(&mut self, max_pivots: usize) -> Result<()> {
        if self.m == 1 || self.n == 1 {
            // the only feasible coupling
            return Ok(());
        }
        let nodes = self.m + self.n;
        let degenerate_limit = 20 * nodes + 100;
        let mut degenerate_run = 0;
        let mut bland = false;
        let mut minus: Vec<usize> = Vec::new();
        let mut plus: Vec<usize> = Vec::new();

        for _ in 0..max_pivots {
            self.build_adjacency();
            self.traverse(0, true);
            let entering = if bland {
                self.price_bland()
            } else {
                self.price_block()
            };
            let Some((p, q)) = entering else {
                return Ok(());
            };

            // Cycle: entering cell plus the tree path from column q back to row p.
            self.traverse(p, false);
            minus.clear();
            plus.clear();
            let mut node = self.m + q;
            let mut sign_minus = true;
            while node != p {
                let (up, e) = self.parent[node];
                if sign_minus {
                    minus.push(e);
                } else {
                    plus.push(e);
                }
                sign_minus = !sign_minus;
                node = up;
            }

            let mut leave = minus[0];
            let mut theta = self.flow[leave];
            for &e in &minus[1..] {
                let f = self.flow[e];
                let better = if bland {
                    f < theta || (f == theta && self.cell_index(e) < self.cell_index(leave))
                } else {
                    f < theta
                };
                if better {
                    theta = f;
                    leave = e;
                }
            }
            theta = theta.max(0.0);

            for &e in &plus {
                self.flow[e] += theta;
            }
            for &e in &minus {
                self.flow[e] = (self.flow[e] - theta).max(0.0);
            }
            self.cells[leave] = (p, q);
            self.flow[leave] = theta;

            if theta == 0.0 {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
        Err(Error::ExactSolverNotConverged {
            iterations: max_pivots,
        })
    }

    fn cell_index(&self, e: usize) -> usize {
        let (i, j) = self.cells[e];
        i * self.n + j
    }

    fn coupling(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.m, self.n));
        for (&(i, j), &f) in self.cells.iter().zip(&self.flow) {
            out[[i, j]] += f;
        }
        out
    }
}
