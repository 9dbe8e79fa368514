//! Decentralized coordination: range-limited communication, subgroup
//! selection, peer memory and decay correction.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{
    apply_residual_update, greedy_local_assign_partial, nearest_order, CyclePlan, LocalPlan, ResidualCapacities,
    SHORTFALL_TOL,
};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::numeric::sq_dist;

/// Symmetric range graph: `j ∈ N_i ⟺ ‖x_i − x_j‖ < r_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    neighborhoods: Vec<Vec<usize>>,
    range: f64,
}

impl CommGraph {
    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn n_agents(&self) -> usize {
        self.neighborhoods.len()
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighborhoods[i].binary_search(&j).is_ok()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighborhoods
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Connected components, each sorted ascending, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                comp.push(i);
                for &j in &self.neighborhoods[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Index into [`CommGraph::components`] for every agent.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n_agents()];
        for (c, comp) in self.components().iter().enumerate() {
            for &i in comp {
                labels[i] = c;
            }
        }
        labels
    }

    /// Whether `i` and `j` lie in the same connected subgroup.
    pub fn connected(&self, i: usize, j: usize) -> bool {
        let labels = self.component_labels();
        labels[i] == labels[j]
    }
}

pub fn build_comm_graph(positions: &[DVector<f64>], r_c: f64) -> Result<CommGraph> {
    if !(r_c > 0.0) {
        return Err(Error::config("comm_range", "must be positive"));
    }
    let n = positions.len();
    let r2 = r_c * r_c;
    let mut neighborhoods = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if sq_dist(&positions[i], &positions[j]) < r2 {
                neighborhoods[i].push(j);
                neighborhoods[j].push(i);
            }
        }
    }
    for nb in &mut neighborhoods {
        nb.sort_unstable();
    }
    Ok(CommGraph {
        neighborhoods,
        range: r_c,
    })
}

/// A remembered peer vector and the cycle it was received in.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub vector: Vec<f64>,
    pub cycle: usize,
}

/// Per-agent memory of the last vector received from each peer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryStore {
    agents: Vec<BTreeMap<usize, MemoryEntry>>,
}

impl MemoryStore {
    pub fn new(n_agents: usize) -> Self {
        Self {
            agents: vec![BTreeMap::new(); n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn entries(&self, agent: usize) -> &BTreeMap<usize, MemoryEntry> {
        &self.agents[agent]
    }

    pub fn get(&self, agent: usize, peer: usize) -> Option<&MemoryEntry> {
        self.agents[agent].get(&peer)
    }

    pub fn is_empty(&self) -> bool {
        self.agents.iter().all(BTreeMap::is_empty)
    }

    /// Drops entries received more than `max_age` cycles before `cycle`.
    pub fn expire(&mut self, cycle: usize, max_age: usize) {
        for map in &mut self.agents {
            map.retain(|_, e| cycle.saturating_sub(e.cycle) <= max_age);
        }
    }

    /// Writes `cycle agent peer received_cycle sample value` rows for nonzero
    /// entries.
    pub fn write_debug<W: Write>(&self, cycle: usize, mut w: W) -> std::io::Result<()> {
        for (i, map) in self.agents.iter().enumerate() {
            for (peer, e) in map {
                for (j, v) in e.vector.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    writeln!(w, "{cycle} {i} {peer} {} {j} {v}", e.cycle)?;
                }
            }
        }
        Ok(())
    }
}

/// Neighbors' entries are replaced by their current vectors; everything else
/// is carried forward unchanged.
pub fn memory_refresh(store: &MemoryStore, graph: &CommGraph, published: &[Vec<f64>], cycle: usize) -> MemoryStore {
    refresh_with_drops(store, graph, published, cycle, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
}

/// As [`memory_refresh`], but each message is lost independently with
/// probability `drop_probability`.
pub fn refresh_with_drops<R: Rng + ?Sized>(
    store: &MemoryStore,
    graph: &CommGraph,
    published: &[Vec<f64>],
    cycle: usize,
    drop_probability: f64,
    rng: &mut R,
) -> MemoryStore {
    let mut next = store.clone();
    for i in 0..graph.n_agents() {
        for &j in graph.neighbors(i) {
            if drop_probability > 0.0 && rng.random_bool(drop_probability) {
                continue;
            }
            next.agents[i].insert(
                j,
                MemoryEntry {
                    vector: published[j].clone(),
                    cycle,
                },
            );
        }
    }
    next
}

/// An agent's private weight view and its decay factor.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentWeights {
    pub beta: Vec<f64>,
    pub gamma: f64,
}

impl AgentWeights {
    /// Cycle-start weights: the target weights (uniform `1/N` for sampled
    /// targets).
    pub fn reset(targets: &DiscreteMeasure, gamma: f64) -> Self {
        Self {
            beta: targets.weights().to_vec(),
            gamma,
        }
    }
}

/// Subtracts `γ` times the element-wise minimum of the vectors remembered from
/// currently disconnected peers, then clamps at zero. At each sample the
/// minimum runs over the peers that allocated mass there.
pub fn memory_correction(weights: &AgentWeights, store: &MemoryStore, graph: &CommGraph, agent: usize) -> AgentWeights {
    correct_with_labels(weights, store, &graph.component_labels(), agent)
}

// Peers reachable through the subgroup already coordinate via the shared
// residual, so only peers outside the agent's subgroup count as disconnected.
fn correct_with_labels(weights: &AgentWeights, store: &MemoryStore, labels: &[usize], agent: usize) -> AgentWeights {
    let mut beta = weights.beta.clone();
    if weights.gamma == 0.0 {
        return AgentWeights {
            beta,
            gamma: weights.gamma,
        };
    }
    let mut floor: Vec<Option<f64>> = vec![None; beta.len()];
    for (&peer, entry) in store.entries(agent) {
        if labels[peer] == labels[agent] {
            continue;
        }
        for (f, &v) in floor.iter_mut().zip(&entry.vector) {
            if v > 0.0 {
                *f = Some(f.map_or(v, |cur| cur.min(v)));
            }
        }
    }
    for (b, f) in beta.iter_mut().zip(&floor) {
        if let Some(m) = f {
            *b = (*b - weights.gamma * m).max(0.0);
        }
    }
    AgentWeights {
        beta,
        gamma: weights.gamma,
    }
}

/// Protocol knobs for decentralized selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecentralOptions {
    pub gamma: f64,
    /// Forget peer vectors older than this many cycles.
    pub staleness: Option<usize>,
    pub drop_probability: f64,
}

impl Default for DecentralOptions {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            staleness: None,
            drop_probability: 0.0,
        }
    }
}

/// Outcome of one decentralized selection round.
#[derive(Debug, Clone)]
pub struct DecentralRound {
    pub plan: CyclePlan,
    pub store: MemoryStore,
    /// Each agent's published allocation vector (length `N`).
    pub published: Vec<Vec<f64>>,
    /// Corrected weights each agent entered the round with.
    pub corrected: Vec<Vec<f64>>,
    /// Agents that fell back to capacity-free nearest assignment.
    pub shortfalls: Vec<usize>,
}

/// One selection round of the decentralized protocol.
///
/// Every agent resets its weights and applies its memory correction. Each
/// connected subgroup then seeds a shared residual with the element-wise
/// minimum of its members' corrected weights, and members select in ascending
/// id against it. Any mass left unallocated goes to the nearest sample.
pub fn decentralized_selection<R: Rng + ?Sized>(
    positions: &[DVector<f64>],
    targets: &DiscreteMeasure,
    graph: &CommGraph,
    store: &MemoryStore,
    opts: &DecentralOptions,
    cycle: usize,
    rng: &mut R,
) -> Result<DecentralRound> {
    let m = positions.len();
    if m == 0 {
        return Err(Error::EmptySupport);
    }
    if graph.n_agents() != m || store.n_agents() != m {
        return Err(Error::DimensionMismatch("graph, store and team sizes differ".into()));
    }
    let mut store = store.clone();
    if let Some(max_age) = opts.staleness {
        store.expire(cycle, max_age);
    }
    let mass = 1.0 / m as f64;
    let labels = graph.component_labels();
    let corrected: Vec<Vec<f64>> = (0..m)
        .map(|i| correct_with_labels(&AgentWeights::reset(targets, opts.gamma), &store, &labels, i).beta)
        .collect();

    let mut plans: Vec<Option<LocalPlan>> = vec![None; m];
    let mut shortfalls = Vec::new();
    for group in graph.components() {
        let mut shared = corrected[group[0]].clone();
        for &i in &group[1..] {
            for (s, &c) in shared.iter_mut().zip(&corrected[i]) {
                *s = s.min(c);
            }
        }
        let mut shared = ResidualCapacities::new(shared)?;
        for &i in &group {
            let (mut plan, remainder) = greedy_local_assign_partial(i, &positions[i], targets, &shared, mass)?;
            shared = apply_residual_update(&shared, &plan)?;
            if remainder > SHORTFALL_TOL {
                log::debug!("cycle {cycle}: agent {i} short by {remainder:e}, assigning to nearest sample");
                shortfalls.push(i);
                let j = nearest_order(&positions[i], targets)[0];
                match plan.pairs.iter_mut().find(|p| p.0 == j) {
                    Some(p) => p.1 += remainder,
                    None => plan.pairs.push((j, remainder)),
                }
            }
            plans[i] = Some(plan);
        }
    }
    let plans: Vec<LocalPlan> = plans
        .into_iter()
        .map(|p| p.expect("every agent is in a component"))
        .collect();

    let n = targets.len();
    let published: Vec<Vec<f64>> = plans
        .iter()
        .map(|p| {
            let mut v = vec![0.0; n];
            for &(j, w) in &p.pairs {
                v[j] += w;
            }
            v
        })
        .collect();
    let store = refresh_with_drops(&store, graph, &published, cycle, opts.drop_probability, rng);
    let plan = CyclePlan::from_local_plans(cycle, plans, targets)?;
    Ok(DecentralRound {
        plan,
        store,
        published,
        corrected,
        shortfalls,
    })
}

/// Writes `cycle agent sample value` rows for the nonzero published entries.
pub fn write_published<W: Write>(cycle: usize, published: &[Vec<f64>], mut w: W) -> std::io::Result<()> {
    for (i, v) in published.iter().enumerate() {
        for (j, x) in v.iter().enumerate().filter(|(_, x)| **x != 0.0) {
            writeln!(w, "{cycle} {i} {j} {x}")?;
        }
    }
    Ok(())
}
