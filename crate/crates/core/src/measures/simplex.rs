//! Exact balanced transportation solver (primal network simplex).
//!
//! Masses are scaled to integers so that pivoting decisions are exact. The
//! supplies carry an Orden-style perturbation (`+1` on every supply, `+rows`
//! on the last demand, after scaling by `rows + 1`), which makes every basic
//! solution nondegenerate: no pivot has a zero step, so the method cannot cycle.
//! Once the optimal basis is found, the flows on the basis tree are recomputed
//! in floating point from the unrounded marginals, so the returned plan
//! satisfies the true marginals to rounding precision.

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Integer units per unit of mass before perturbation.
const MASS_SCALE: f64 = 1e12;

/// Relative reduced-cost tolerance below which an arc may enter the basis.
const PRICING_TOL: f64 = 1e-13;

/// Optimal coupling of two balanced marginals under a dense cost matrix.
#[derive(Debug, Clone)]
pub(crate) struct TransportSolution {
    /// `(row, col, mass)` with `mass > 0`, sorted by `(row, col)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub pivots: usize,
}

/// Solves `min Σ π_ij c_ij` over couplings of `rows` and `cols`.
///
/// `cost` is row-major with `rows.len() * cols.len()` entries. Both marginals
/// must be nonnegative with equal totals.
pub(crate) fn solve_transport(rows: &[f64], cols: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (n_rows, n_cols) = (rows.len(), cols.len());
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptySupport);
    }
    if cost.len() != n_rows * n_cols {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            n_rows * n_cols
        )));
    }
    if rows.iter().chain(cols).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidMeasure("marginals must be finite and nonnegative".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::SolverFailure("non-finite cost".into()));
    }
    let row_total: f64 = rows.iter().sum();
    let col_total: f64 = cols.iter().sum();
    if row_total <= 0.0 || (row_total - col_total).abs() > 1e-9 * row_total.max(1.0) {
        return Err(Error::InvalidMeasure(format!(
            "unbalanced marginals: {row_total} vs {col_total}"
        )));
    }

    let row_units = integer_masses(rows, row_total);
    let col_units = integer_masses(cols, col_total);
    let row_idx: Vec<usize> = (0..n_rows).filter(|&i| row_units[i] > 0).collect();
    let col_idx: Vec<usize> = (0..n_cols).filter(|&j| col_units[j] > 0).collect();

    let nr = row_idx.len();
    let nc = col_idx.len();
    let scale = nr as i64 + 1;
    let mut supply: Vec<i64> = Vec::with_capacity(nr);
    for &i in &row_idx {
        let s = row_units[i]
            .checked_mul(scale)
            .and_then(|s| s.checked_add(1))
            .ok_or_else(|| Error::SolverFailure("too many atoms for integer scaling".into()))?;
        supply.push(s);
    }
    let mut demand: Vec<i64> = col_idx.iter().map(|&j| col_units[j] * scale).collect();
    *demand.last_mut().expect("nonempty") += nr as i64;

    let arc_cost: Vec<f64> = row_idx
        .iter()
        .flat_map(|&i| col_idx.iter().map(move |&j| cost[i * n_cols + j]))
        .collect();
    let cmax = arc_cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = PRICING_TOL * cmax;

    let mut net = Network::northwest_corner(nr, nc, &supply, &demand, arc_cost);
    let pivots = net.optimize(tol)?;

    // Float flows on the optimal tree from the true marginals.
    let mut balance = vec![0.0; nr + nc];
    for (r, &i) in row_idx.iter().enumerate() {
        balance[r] = rows[i];
    }
    for (c, &j) in col_idx.iter().enumerate() {
        balance[nr + c] = -cols[j];
    }
    net.rebuild_tree();
    for &u in net.order.iter().skip(1).rev() {
        let p = net.parent[u];
        balance[p] += balance[u];
    }
    let mut entries = Vec::with_capacity(nr + nc);
    for &u in net.order.iter().skip(1) {
        let e = net.parent_arc[u];
        // Supplies hang off demands (arc u -> parent) and vice versa.
        let flow = if u < nr { balance[u] } else { -balance[u] };
        if flow > 0.0 {
            let (r, c) = (e / nc, e % nc);
            entries.push((row_idx[r], col_idx[c], flow));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let total: CompensatedSum = entries.iter().map(|&(i, j, m)| m * cost[i * n_cols + j]).collect();
    Ok(TransportSolution {
        entries,
        cost: total.value(),
        pivots,
    })
}

/// Rounds `w / total` to integer units summing exactly to `MASS_SCALE`; the
/// rounding residual goes to the largest atom (lowest index on ties).
fn integer_masses(w: &[f64], total: f64) -> Vec<i64> {
    let target = MASS_SCALE as i64;
    let mut units: Vec<i64> = w.iter().map(|x| (x / total * MASS_SCALE).round() as i64).collect();
    let sum: i64 = units.iter().sum();
    let mut largest = 0;
    for (k, &u) in units.iter().enumerate() {
        if u > units[largest] {
            largest = k;
        }
    }
    units[largest] += target - sum;
    units
}

/// Complete bipartite network with a spanning-tree basis.
struct Network {
    nr: usize,
    nc: usize,
    cost: Vec<f64>,
    flow: Vec<i64>,
    /// Tree adjacency: `(neighbor, arc)` per node.
    tree: Vec<Vec<(usize, usize)>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    order: Vec<usize>,
    stack: Vec<usize>,
}

impl Network {
    fn northwest_corner(nr: usize, nc: usize, supply: &[i64], demand: &[i64], cost: Vec<f64>) -> Self {
        let n = nr + nc;
        let mut net = Network {
            nr,
            nc,
            cost,
            flow: vec![0; nr * nc],
            tree: vec![Vec::new(); n],
            parent: vec![usize::MAX; n],
            parent_arc: vec![usize::MAX; n],
            depth: vec![0; n],
            pi: vec![0.0; n],
            order: Vec::with_capacity(n),
            stack: Vec::with_capacity(n),
        };
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut r, mut c) = (0, 0);
        loop {
            let x = s[r].min(d[c]);
            net.flow[r * nc + c] = x;
            net.link(r, c);
            s[r] -= x;
            d[c] -= x;
            if r + 1 == nr && c + 1 == nc {
                break;
            }
            // Nondegenerate by construction: exactly one side runs out.
            if s[r] == 0 && r + 1 < nr {
                r += 1;
            } else {
                c += 1;
            }
        }
        net
    }

    fn link(&mut self, r: usize, c: usize) {
        let e = r * self.nc + c;
        self.tree[r].push((self.nr + c, e));
        self.tree[self.nr + c].push((r, e));
    }

    fn unlink(&mut self, e: usize) {
        let (r, c) = (e / self.nc, self.nr + e % self.nc);
        self.tree[r].retain(|&(_, a)| a != e);
        self.tree[c].retain(|&(_, a)| a != e);
    }

    /// Recomputes parents, depths, and potentials from node 0.
    fn rebuild_tree(&mut self) {
        self.order.clear();
        self.stack.clear();
        self.stack.push(0);
        self.parent[0] = usize::MAX;
        self.parent_arc[0] = usize::MAX;
        self.depth[0] = 0;
        self.pi[0] = 0.0;
        while let Some(u) = self.stack.pop() {
            self.order.push(u);
            for k in 0..self.tree[u].len() {
                let (v, e) = self.tree[u][k];
                if v == self.parent[u] && e == self.parent_arc[u] {
                    continue;
                }
                self.parent[v] = u;
                self.parent_arc[v] = e;
                self.depth[v] = self.depth[u] + 1;
                // Tree arcs have zero reduced cost: c + pi[src] - pi[dst] = 0.
                self.pi[v] = if v >= self.nr {
                    self.pi[u] + self.cost[e]
                } else {
                    self.pi[u] - self.cost[e]
                };
                self.stack.push(v);
            }
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (r, c) = (e / self.nc, self.nr + e % self.nc);
        self.cost[e] + self.pi[r] - self.pi[c]
    }

    /// Block-search pricing; lowest index wins among equal reduced costs.
    fn entering_arc(&self, next: &mut usize, tol: f64) -> Option<usize> {
        let arcs = self.nr * self.nc;
        let block = ((arcs as f64).sqrt() as usize).max(10).min(arcs);
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        let mut e = *next;
        while scanned < arcs {
            let end = (scanned + block).min(arcs);
            while scanned < end {
                let rc = self.reduced_cost(e);
                if rc < -tol {
                    match best {
                        Some((b, brc)) if rc > brc || (rc == brc && e > b) => {}
                        _ => best = Some((e, rc)),
                    }
                }
                e += 1;
                if e == arcs {
                    e = 0;
                }
                scanned += 1;
            }
            if let Some((b, _)) = best {
                *next = e;
                return Some(b);
            }
        }
        None
    }

    fn optimize(&mut self, tol: f64) -> Result<usize> {
        let n = self.nr + self.nc;
        let max_pivots = 50 * n * n + 10_000;
        let mut next = 0;
        let mut pivots = 0;
        loop {
            self.rebuild_tree();
            if self.order.len() != n {
                return Err(Error::SolverFailure("basis is not a spanning tree".into()));
            }
            let Some(e_in) = self.entering_arc(&mut next, tol) else {
                return Ok(pivots);
            };
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::SolverFailure(format!("no optimum after {max_pivots} pivots")));
            }
            self.pivot(e_in)?;
        }
    }

    fn pivot(&mut self, e_in: usize) -> Result<()> {
        let p = e_in / self.nc;
        let q = self.nr + e_in % self.nc;

        let (mut u, mut v) = (p, q);
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        let join = u;

        // Blocking arcs are traversed against their orientation. Ties go to
        // the last blocking arc met when walking the cycle from the join.
        let mut delta = i64::MAX;
        let mut out = usize::MAX;
        let mut u = p;
        while u != join {
            if u < self.nr {
                let f = self.flow[self.parent_arc[u]];
                if f < delta {
                    delta = f;
                    out = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = q;
        while u != join {
            if u >= self.nr {
                let f = self.flow[self.parent_arc[u]];
                if f <= delta {
                    delta = f;
                    out = u;
                }
            }
            u = self.parent[u];
        }
        if out == usize::MAX {
            return Err(Error::SolverFailure("unbounded pivot cycle".into()));
        }

        self.flow[e_in] += delta;
        let mut u = p;
        while u != join {
            let e = self.parent_arc[u];
            if u < self.nr {
                self.flow[e] -= delta;
            } else {
                self.flow[e] += delta;
            }
            u = self.parent[u];
        }
        let mut u = q;
        while u != join {
            let e = self.parent_arc[u];
            if u < self.nr {
                self.flow[e] += delta;
            } else {
                self.flow[e] -= delta;
            }
            u = self.parent[u];
        }

        let e_out = self.parent_arc[out];
        debug_assert_eq!(self.flow[e_out], 0);
        self.flow[e_out] = 0;
        self.unlink(e_out);
        self.link(p, e_in % self.nc);
        Ok(())
    }
}
